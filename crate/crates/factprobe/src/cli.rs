//! Manifest-driven experiment runner behind the command-line surface.
//!
//! A run reads one JSON manifest, builds the corpus and (when needed) the
//! model, trains or fits the chosen method, predicts over the test split,
//! and writes every artifact into a freshly created output directory:
//! manifest copy, model card, trained prompts / checkpoints / baselines,
//! prediction dump, per-relation training traces, and the report in TSV
//! and markdown. All randomness is seeded, and no wall-clock data leaks
//! into report files, so a rerun with the same manifest and seed is
//! byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::baselines::{save_json, ClassPriorModel, NaiveBayesModel, PriorStats};
use crate::corpus::{
    load_jsonl, load_metadata, split_train_dev, Corpus, Fact, RelationDataset, RelationMeta,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{
    build_partition_keys, evaluate, emit_report, predict_top1, read_predictions,
    write_predictions, FactKey, MethodResults, Partition, PredictionRecord, ReportFormat,
};
use crate::mlm::{init_model, param_hash, save_checkpoint, InitRegime, MlmModel, ModelConfig, Params};
use crate::optimize::{
    finetune, train_dense, train_trigger_search, SearchConfig, TrainConfig, TrainTrace,
};
use crate::prompts::{
    dense_from_manual, dense_random, load_prompts, save_prompts, PromptTemplate,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Manual,
    TriggerFile,
    DenseRandom,
    DenseManual,
    TriggerSearch,
    Finetune,
    ClassPrior,
    NaiveBayes,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Manual => "manual",
            Method::TriggerFile => "trigger-file",
            Method::DenseRandom => "dense-random",
            Method::DenseManual => "dense-manual",
            Method::TriggerSearch => "trigger-search",
            Method::Finetune => "finetune",
            Method::ClassPrior => "class-prior",
            Method::NaiveBayes => "naive-bayes",
        }
    }

    pub fn needs_model(self) -> bool {
        !matches!(self, Method::ClassPrior | Method::NaiveBayes)
    }

    pub fn needs_prompts(self) -> bool {
        matches!(
            self,
            Method::Manual | Method::TriggerFile | Method::DenseManual | Method::Finetune
        )
    }

    pub fn trains(self) -> bool {
        matches!(
            self,
            Method::DenseRandom | Method::DenseManual | Method::TriggerSearch | Method::Finetune
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub regime: InitRegime,
}

/// Partial overrides applied on top of the per-method training defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainOverrides {
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub warmup_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchOverrides {
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub candidates_per_step: Option<usize>,
}

fn default_dev_fraction() -> f64 {
    0.2
}

fn default_prompt_length() -> usize {
    5
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    /// Vocabulary text file.
    pub vocabulary: PathBuf,
    /// Relation metadata JSONL (templates, categories, names).
    #[serde(default)]
    pub metadata: Option<PathBuf>,
    /// Training facts JSONL.
    pub train_facts: PathBuf,
    /// Test facts JSONL.
    pub test_facts: PathBuf,
    pub method: Method,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Prompt file for methods that consume templates.
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<TrainOverrides>,
    #[serde(default)]
    pub search: Option<SearchOverrides>,
    /// Number of dense vectors / trigger tokens for the random layouts.
    #[serde(default = "default_prompt_length")]
    pub prompt_length: usize,
    /// Fraction of the training facts held out per relation for selection.
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub allow_overlap: bool,
    /// Restrict the prediction argmax to objects seen in training.
    #[serde(default)]
    pub restrict_to_seen: bool,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<ExperimentManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))
}

/// Resolve a manifest-relative path against the manifest's directory.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Everything loaded up front for one run.
struct RunContext {
    manifest: ExperimentManifest,
    corpus: Corpus,
    metadata: BTreeMap<String, RelationMeta>,
    model: Option<MlmModel>,
    prompts: Option<BTreeMap<String, PromptTemplate>>,
    /// Train-majority object per relation.
    majorities: BTreeMap<String, usize>,
}

fn group_by_relation(facts: Vec<Fact>) -> BTreeMap<String, Vec<Fact>> {
    let mut out: BTreeMap<String, Vec<Fact>> = BTreeMap::new();
    for f in facts {
        out.entry(f.relation.clone()).or_default().push(f);
    }
    out
}

fn load_context(manifest: &ExperimentManifest, base: &Path) -> Result<RunContext> {
    let vocab = Vocabulary::load(resolve(base, &manifest.vocabulary))?;
    let metadata = match &manifest.metadata {
        Some(p) => load_metadata(resolve(base, p))?,
        None => BTreeMap::new(),
    };
    let train = load_jsonl(resolve(base, &manifest.train_facts), &vocab, "unspecified")?;
    let test = load_jsonl(resolve(base, &manifest.test_facts), &vocab, "unspecified")?;
    if train.skipped + test.skipped > 0 {
        eprintln!(
            "warning: skipped {} facts with non-single-token objects",
            train.skipped + test.skipped
        );
    }
    let mut train_by_rel = group_by_relation(train.facts);
    let test_by_rel = group_by_relation(test.facts);

    let mut corpus = Corpus::new(vocab);
    let rel_names: BTreeSet<String> = train_by_rel
        .keys()
        .chain(test_by_rel.keys())
        .cloned()
        .collect();
    for (idx, rel) in rel_names.iter().enumerate() {
        let rel_train = train_by_rel.remove(rel).unwrap_or_default();
        let rel_test = test_by_rel.get(rel).cloned().unwrap_or_default();
        let (tr, dev) = split_train_dev(
            rel_train,
            manifest.dev_fraction,
            manifest.seed.wrapping_add(idx as u64),
        )?;
        let category = metadata.get(rel).map(|m| m.category).unwrap_or_default();
        let ds = RelationDataset::new(
            rel,
            category,
            tr,
            dev,
            rel_test,
            manifest.allow_overlap,
        )?;
        corpus.relations.insert(rel.clone(), ds);
    }

    let model = match &manifest.model {
        Some(spec) => {
            let regime = match &spec.regime {
                InitRegime::FromCheckpoint(p) => InitRegime::FromCheckpoint(resolve(base, p)),
                other => other.clone(),
            };
            Some(init_model(&spec.config, &regime)?)
        }
        None => None,
    };
    if manifest.method.needs_model() && model.is_none() {
        return Err(Error::Manifest(format!(
            "method {} requires a model section",
            manifest.method.name()
        )));
    }
    let prompts = match &manifest.prompts {
        Some(p) => Some(load_prompts(resolve(base, p), &corpus.vocabulary)?),
        None => None,
    };
    if manifest.method.needs_prompts() && prompts.is_none() {
        return Err(Error::Manifest(format!(
            "method {} requires a prompts file",
            manifest.method.name()
        )));
    }

    let mut majorities = BTreeMap::new();
    for (rel, ds) in &corpus.relations {
        if !ds.train.is_empty() {
            majorities.insert(rel.clone(), PriorStats::fit(rel, &ds.train)?.majority);
        }
    }

    Ok(RunContext {
        manifest: manifest.clone(),
        corpus,
        metadata,
        model,
        prompts,
        majorities,
    })
}

fn train_config(manifest: &ExperimentManifest) -> TrainConfig {
    let mut cfg = match manifest.method {
        Method::Finetune => TrainConfig::finetune_defaults(),
        _ => TrainConfig::dense_defaults(),
    };
    if let Some(o) = &manifest.train {
        if let Some(v) = o.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = o.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = o.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = o.warmup_ratio {
            cfg.warmup_ratio = v;
        }
    }
    cfg.seed = manifest.seed;
    cfg
}

/// Run relation-level jobs across up to `jobs` threads, collecting results
/// in deterministic relation order.
fn parallel_over_relations<T, F>(
    corpus: &Corpus,
    jobs: usize,
    f: F,
) -> Result<BTreeMap<String, T>>
where
    T: Send,
    F: Fn(&str, &RelationDataset) -> Result<T> + Sync,
{
    let keys: Vec<&String> = corpus.relations.keys().collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(String, Result<T>)>> = Mutex::new(Vec::new());
    let jobs = jobs.max(1).min(keys.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= keys.len() {
                    break;
                }
                let rel = keys[i];
                let out = f(rel, &corpus.relations[rel]);
                results.lock().unwrap().push((rel.clone(), out));
            });
        }
    });
    let mut map = BTreeMap::new();
    for (rel, res) in results.into_inner().unwrap() {
        map.insert(rel, res?);
    }
    Ok(map)
}

fn predict_with_templates(
    ctx: &RunContext,
    model: &MlmModel,
    templates: &BTreeMap<String, PromptTemplate>,
    per_relation_model: Option<&BTreeMap<String, MlmModel>>,
) -> Result<Vec<PredictionRecord>> {
    let vocab = &ctx.corpus.vocabulary;
    let mut records = Vec::new();
    for (rel, ds) in &ctx.corpus.relations {
        if ds.test.is_empty() {
            continue;
        }
        let tpl = templates
            .get(rel)
            .ok_or_else(|| Error::UnknownRelation(format!("no prompt for relation {rel}")))?;
        let m = per_relation_model
            .and_then(|map| map.get(rel))
            .unwrap_or(model);
        let majority = ctx.majorities.get(rel).copied();
        let seen: Option<BTreeSet<usize>> = if ctx.manifest.restrict_to_seen {
            Some(ds.train.iter().map(|f| f.object_id).collect())
        } else {
            None
        };
        for fact in &ds.test {
            records.push(predict_top1(m, tpl, fact, vocab, majority, seen.as_ref())?);
        }
    }
    Ok(records)
}

fn baseline_records(
    ctx: &RunContext,
    predict: impl Fn(&Fact) -> Result<usize>,
) -> Result<Vec<PredictionRecord>> {
    let vocab = &ctx.corpus.vocabulary;
    let mut records = Vec::new();
    for (rel, ds) in &ctx.corpus.relations {
        let majority = ctx.majorities.get(rel).copied();
        for fact in &ds.test {
            let predicted_id = predict(fact)?;
            records.push(PredictionRecord {
                relation: fact.relation.clone(),
                subject: fact.subject.clone(),
                object: fact.object.clone(),
                predicted: vocab.token(predicted_id).to_string(),
                predicted_id,
                correct: predicted_id == fact.object_id,
                is_train_majority: majority == Some(predicted_id),
            });
        }
    }
    Ok(records)
}

fn write_traces(out: &Path, traces: &BTreeMap<String, TrainTrace>) -> Result<()> {
    for (rel, trace) in traces {
        trace.write_csv(out.join(format!("trace-{rel}.csv")))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ModelCard<'a> {
    config: &'a ModelConfig,
    regime: &'a InitRegime,
    param_hash: String,
    num_params: usize,
}

fn nonempty_train(ctx: &RunContext) -> impl Iterator<Item = (&String, &RelationDataset)> {
    ctx.corpus
        .relations
        .iter()
        .filter(|(_, ds)| !ds.train.is_empty())
}

fn relation_index(ctx: &RunContext, rel: &str) -> u64 {
    ctx.corpus
        .relations
        .keys()
        .position(|r| r == rel)
        .unwrap_or(0) as u64
}

fn execute(ctx: &RunContext, out: &Path) -> Result<()> {
    let manifest = &ctx.manifest;
    let vocab = &ctx.corpus.vocabulary;
    if let (Some(model), Some(spec)) = (&ctx.model, &manifest.model) {
        let card = ModelCard {
            config: &spec.config,
            regime: &spec.regime,
            param_hash: param_hash(model),
            num_params: Params::num_params(&spec.config),
        };
        save_json(&card, out.join("model_card.json"))?;
    }

    let records = match manifest.method {
        Method::ClassPrior => {
            let cp = ClassPriorModel::fit(nonempty_train(ctx).map(|(_, ds)| ds))?;
            save_json(&cp, out.join("class_prior.json"))?;
            baseline_records(ctx, |fact| cp.predict(fact))?
        }
        Method::NaiveBayes => {
            let nb = NaiveBayesModel::fit(nonempty_train(ctx).map(|(_, ds)| ds), vocab)?;
            save_json(&nb, out.join("naive_bayes.json"))?;
            baseline_records(ctx, |fact| nb.predict(fact))?
        }
        Method::Manual | Method::TriggerFile => {
            let model = ctx.model.as_ref().unwrap();
            let prompts = ctx.prompts.as_ref().unwrap();
            predict_with_templates(ctx, model, prompts, None)?
        }
        Method::DenseRandom | Method::DenseManual => {
            let model = ctx.model.as_ref().unwrap();
            let cfg = train_config(manifest);
            let dim = model.config.embed_dim;
            let trained = parallel_over_relations(&ctx.corpus, manifest.jobs, |rel, ds| {
                if ds.train.is_empty() {
                    return Ok(None);
                }
                let init = match manifest.method {
                    Method::DenseRandom => dense_random(
                        rel,
                        manifest.prompt_length,
                        dim,
                        manifest.seed.wrapping_add(relation_index(ctx, rel)),
                    )?,
                    _ => {
                        let tpl = ctx
                            .prompts
                            .as_ref()
                            .unwrap()
                            .get(rel)
                            .ok_or_else(|| Error::UnknownRelation(rel.to_string()))?;
                        match tpl {
                            PromptTemplate::Manual(t) => dense_from_manual(t, model)?,
                            _ => {
                                return Err(Error::Manifest(format!(
                                    "dense-manual needs a manual prompt for {rel}"
                                )))
                            }
                        }
                    }
                };
                let mut rel_cfg = cfg.clone();
                rel_cfg.seed = cfg.seed.wrapping_add(relation_index(ctx, rel));
                let (tpl, trace) = train_dense(model, ds, &init, &rel_cfg, vocab)?;
                Ok(Some((tpl, trace)))
            })?;
            let mut templates = BTreeMap::new();
            let mut traces = BTreeMap::new();
            for (rel, item) in trained {
                if let Some((tpl, trace)) = item {
                    templates.insert(rel.clone(), PromptTemplate::Dense(tpl));
                    traces.insert(rel, trace);
                }
            }
            save_prompts(out.join("prompts.jsonl"), &templates, vocab)?;
            write_traces(out, &traces)?;
            predict_with_templates(ctx, model, &templates, None)?
        }
        Method::TriggerSearch => {
            let model = ctx.model.as_ref().unwrap();
            let cfg = train_config(manifest);
            let trained = parallel_over_relations(&ctx.corpus, manifest.jobs, |rel, ds| {
                if ds.train.is_empty() {
                    return Ok(None);
                }
                let banned: BTreeSet<usize> = ds
                    .train
                    .iter()
                    .chain(&ds.dev)
                    .chain(&ds.test)
                    .map(|f| f.object_id)
                    .collect();
                let mut search = SearchConfig::new(
                    manifest
                        .search
                        .as_ref()
                        .and_then(|s| s.candidates_per_step)
                        .unwrap_or(10),
                    banned,
                );
                if let Some(iters) = manifest.search.as_ref().and_then(|s| s.iterations) {
                    search.iterations = iters;
                }
                let mut rel_cfg = cfg.clone();
                rel_cfg.seed = cfg.seed.wrapping_add(relation_index(ctx, rel));
                let (tpl, trace) =
                    train_trigger_search(model, ds, manifest.prompt_length, &rel_cfg, &search, vocab)?;
                Ok(Some((tpl, trace)))
            })?;
            let mut templates = BTreeMap::new();
            let mut traces = BTreeMap::new();
            for (rel, item) in trained {
                if let Some((tpl, trace)) = item {
                    templates.insert(rel.clone(), PromptTemplate::Trigger(tpl));
                    traces.insert(rel, trace);
                }
            }
            save_prompts(out.join("prompts.jsonl"), &templates, vocab)?;
            write_traces(out, &traces)?;
            predict_with_templates(ctx, model, &templates, None)?
        }
        Method::Finetune => {
            let model = ctx.model.as_ref().unwrap();
            let prompts = ctx.prompts.as_ref().unwrap();
            let cfg = train_config(manifest);
            let trained = parallel_over_relations(&ctx.corpus, manifest.jobs, |rel, ds| {
                if ds.train.is_empty() {
                    return Ok(None);
                }
                let tpl = prompts
                    .get(rel)
                    .ok_or_else(|| Error::UnknownRelation(rel.to_string()))?;
                let mut rel_cfg = cfg.clone();
                rel_cfg.seed = cfg.seed.wrapping_add(relation_index(ctx, rel));
                let (tuned, trace) = finetune(model, ds, tpl, &rel_cfg, vocab)?;
                Ok(Some((tuned, trace)))
            })?;
            let mut models = BTreeMap::new();
            let mut traces = BTreeMap::new();
            for (rel, item) in trained {
                if let Some((tuned, trace)) = item {
                    save_checkpoint(&tuned, out.join(format!("checkpoint-{rel}.json")))?;
                    models.insert(rel.clone(), tuned);
                    traces.insert(rel, trace);
                }
            }
            write_traces(out, &traces)?;
            predict_with_templates(ctx, model, prompts, Some(&models))?
        }
    };

    write_predictions(out.join("predictions.jsonl"), &records)?;
    let known: BTreeSet<String> = ctx.corpus.relations.keys().cloned().collect();
    let report = evaluate(&records, &known)?;
    let method = MethodResults {
        name: manifest.method.name().to_string(),
        records,
        report,
    };
    let methods = [method];
    fs::write(
        out.join("report.tsv"),
        emit_report(&methods, &ctx.metadata, None, ReportFormat::Tsv),
    )
    .map_err(|e| Error::io(out.join("report.tsv"), e))?;
    fs::write(
        out.join("report.md"),
        emit_report(&methods, &ctx.metadata, None, ReportFormat::Markdown),
    )
    .map_err(|e| Error::io(out.join("report.md"), e))?;
    Ok(())
}

/// Run a manifest end to end into a new output directory. Flag overrides
/// for seed and jobs are recorded in `manifest.effective.json`; the input
/// manifest is copied verbatim as `manifest.json`.
pub fn run(
    manifest_path: impl AsRef<Path>,
    out: impl AsRef<Path>,
    seed: Option<u64>,
    jobs: Option<usize>,
) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let out = out.as_ref();
    let raw = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let mut manifest: ExperimentManifest =
        serde_json::from_str(&raw).map_err(|e| Error::Manifest(e.to_string()))?;
    let overridden = seed.is_some() || jobs.is_some();
    if let Some(s) = seed {
        manifest.seed = s;
    }
    if let Some(j) = jobs {
        manifest.jobs = j;
    }
    fs::create_dir(out).map_err(|e| Error::io(out, e))?;
    fs::write(out.join("manifest.json"), &raw).map_err(|e| Error::io(out, e))?;
    if overridden {
        save_json(&manifest, out.join("manifest.effective.json"))?;
    }
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let result = load_context(&manifest, &base).and_then(|ctx| execute(&ctx, out));
    if let Err(e) = &result {
        let _ = fs::write(out.join("FAILED"), format!("{e}\n"));
    }
    result
}

/// Validate the inputs of a manifest and write a normalized corpus summary.
pub fn ingest(manifest_path: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let out = out.as_ref();
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    fs::create_dir(out).map_err(|e| Error::io(out, e))?;
    let ctx = load_context(&manifest, &base)?;
    #[derive(Serialize)]
    struct RelationSummary {
        train: usize,
        dev: usize,
        test: usize,
        category: String,
    }
    let summary: BTreeMap<String, RelationSummary> = ctx
        .corpus
        .relations
        .iter()
        .map(|(rel, ds)| {
            (
                rel.clone(),
                RelationSummary {
                    train: ds.train.len(),
                    dev: ds.dev.len(),
                    test: ds.test.len(),
                    category: ds.category.to_string(),
                },
            )
        })
        .collect();
    save_json(&summary, out.join("ingest.json"))?;
    for (rel, ds) in &ctx.corpus.relations {
        crate::corpus::write_jsonl(out.join(format!("train-{rel}.jsonl")), &ds.train)?;
        crate::corpus::write_jsonl(out.join(format!("dev-{rel}.jsonl")), &ds.dev)?;
        crate::corpus::write_jsonl(out.join(format!("test-{rel}.jsonl")), &ds.test)?;
    }
    Ok(())
}

/// JSON-friendly partition artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct PartitionFile {
    pub easy: Vec<FactKey>,
    pub hard: Vec<FactKey>,
    pub provenance: Vec<(FactKey, Vec<String>)>,
}

impl From<&Partition> for PartitionFile {
    fn from(p: &Partition) -> Self {
        PartitionFile {
            easy: p.easy.iter().cloned().collect(),
            hard: p.hard.iter().cloned().collect(),
            provenance: p.provenance.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn load_dumps(dirs: &[PathBuf]) -> Result<Vec<(String, Vec<PredictionRecord>)>> {
    dirs.iter()
        .map(|d| Ok((dir_name(d), read_predictions(d.join("predictions.jsonl"))?)))
        .collect()
}

/// Build the easy/hard partition from the prediction dumps of the defining
/// runs and write it as JSON.
pub fn partition(dirs: &[PathBuf], out: impl AsRef<Path>) -> Result<Partition> {
    if dirs.is_empty() {
        return Err(Error::Partition("need at least one artifact directory".into()));
    }
    let dumps = load_dumps(dirs)?;
    let keys: Vec<FactKey> = dumps[0].1.iter().map(|r| r.key()).collect();
    for (name, recs) in &dumps[1..] {
        let theirs: BTreeSet<FactKey> = recs.iter().map(|r| r.key()).collect();
        let ours: BTreeSet<FactKey> = keys.iter().cloned().collect();
        if theirs != ours {
            return Err(Error::Partition(format!(
                "{name} covers a different test set"
            )));
        }
    }
    let p = build_partition_keys(&keys, &dumps)?;
    save_json(&PartitionFile::from(&p), out)?;
    Ok(p)
}

pub fn load_partition(path: impl AsRef<Path>) -> Result<Partition> {
    let file: PartitionFile = crate::baselines::load_json(path)?;
    Ok(Partition {
        easy: file.easy.into_iter().collect(),
        hard: file.hard.into_iter().collect(),
        provenance: file.provenance.into_iter().collect(),
    })
}

/// Side-by-side prediction table plus pairwise agreement statistics.
pub fn compare(dirs: &[PathBuf]) -> Result<String> {
    if dirs.len() < 2 {
        return Err(Error::Compare("need at least two artifact directories".into()));
    }
    let dumps = load_dumps(dirs)?;
    let mut indexed: Vec<(String, BTreeMap<FactKey, PredictionRecord>)> = Vec::new();
    for (name, recs) in dumps {
        indexed.push((name, recs.into_iter().map(|r| (r.key(), r)).collect()));
    }
    let keys: Vec<FactKey> = indexed[0].1.keys().cloned().collect();
    for (name, map) in &indexed[1..] {
        if map.keys().cloned().collect::<Vec<_>>() != keys {
            return Err(Error::Compare(format!("{name} covers a different test set")));
        }
    }

    let mut out = String::new();
    let mut header = vec!["relation".to_string(), "subject".to_string(), "object".to_string()];
    header.extend(indexed.iter().map(|(n, _)| n.clone()));
    out.push_str(&header.join("\t"));
    out.push('\n');
    for key in &keys {
        let mut row = vec![key.0.clone(), key.1.clone(), key.2.clone()];
        for (_, map) in &indexed {
            row.push(map[key].predicted.clone());
        }
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out.push('\n');
    out.push_str("method_a\tmethod_b\tagreement\n");
    for i in 0..indexed.len() {
        for j in (i + 1)..indexed.len() {
            let agree = keys
                .iter()
                .filter(|k| indexed[i].1[*k].predicted_id == indexed[j].1[*k].predicted_id)
                .count();
            let frac = agree as f64 / keys.len().max(1) as f64;
            out.push_str(&format!(
                "{}\t{}\t{:.4}\n",
                indexed[i].0, indexed[j].0, frac
            ));
        }
    }
    Ok(out)
}

/// Regenerate the report of one or more runs, optionally with easy/hard
/// columns from a partition file.
pub fn report(
    dirs: &[PathBuf],
    partition_path: Option<&Path>,
    format: ReportFormat,
) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::Compare("need at least one artifact directory".into()));
    }
    let mut methods = Vec::new();
    let mut metadata = BTreeMap::new();
    for dir in dirs {
        let manifest = load_manifest(dir.join("manifest.json"))?;
        if let Some(meta_path) = &manifest.metadata {
            let base = dir.clone();
            let resolved = resolve(&base, meta_path);
            if resolved.exists() {
                metadata = load_metadata(resolved)?;
            }
        }
        let records = read_predictions(dir.join("predictions.jsonl"))?;
        let known: BTreeSet<String> = records.iter().map(|r| r.relation.clone()).collect();
        let report = evaluate(&records, &known)?;
        methods.push(MethodResults {
            name: dir_name(dir),
            records,
            report,
        });
    }
    let part = match partition_path {
        Some(p) => Some(load_partition(p)?),
        None => None,
    };
    Ok(emit_report(&methods, &metadata, part.as_ref(), format))
}
