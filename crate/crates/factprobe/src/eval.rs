//! Evaluation and analysis: top-1 prediction, relation-mean and
//! example-weighted accuracy, majority-class decomposition, majority
//! elicitation rate, the easy/hard test partition, and report emission.
//!
//! All per-relation statistics are kept as integer counts so the
//! decomposition identity (majority part + other part = accuracy) holds
//! exactly, never through accumulated floating fractions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::corpus::{Fact, RelationMeta, Vocabulary};
use crate::error::{Error, Result};
use crate::mlm::MlmModel;
use crate::prompts::{render, PromptTemplate};

/// Argmax over content tokens, ties broken toward the lowest id.
pub fn argmax_content(logits: &Array1<f64>, vocab: &Vocabulary) -> usize {
    argmax_over(logits, vocab.content_ids())
}

/// Argmax over an explicit candidate set, ties broken toward the lowest id.
/// Candidates must be yielded in ascending order.
pub fn argmax_over(logits: &Array1<f64>, candidates: impl Iterator<Item = usize>) -> usize {
    let mut best = None;
    for id in candidates {
        let score = logits[id];
        match best {
            None => best = Some((id, score)),
            Some((_, s)) if score > s => best = Some((id, score)),
            _ => {}
        }
    }
    best.expect("candidate set must be non-empty").0
}

/// Identity of a fact across prediction dumps.
pub type FactKey = (String, String, String);

pub fn fact_key(fact: &Fact) -> FactKey {
    (
        fact.relation.clone(),
        fact.subject.clone(),
        fact.object.clone(),
    )
}

/// One model prediction for one fact.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PredictionRecord {
    pub relation: String,
    pub subject: String,
    pub object: String,
    pub predicted: String,
    pub predicted_id: usize,
    pub correct: bool,
    /// Prediction equals the train majority object for this relation.
    pub is_train_majority: bool,
}

impl PredictionRecord {
    pub fn key(&self) -> FactKey {
        (
            self.relation.clone(),
            self.subject.clone(),
            self.object.clone(),
        )
    }
}

/// Top-1 prediction at the mask. The argmax runs over the full content
/// vocabulary unless `candidates` restricts it (ascending token ids).
pub fn predict_top1(
    model: &MlmModel,
    template: &PromptTemplate,
    fact: &Fact,
    vocab: &Vocabulary,
    train_majority: Option<usize>,
    candidates: Option<&BTreeSet<usize>>,
) -> Result<PredictionRecord> {
    let rendered = render(template, fact, model, vocab)?;
    let logits = model.forward_mask_logits(&rendered.input_vectors, rendered.mask_position)?;
    let predicted_id = match candidates {
        Some(set) => argmax_over(&logits, set.iter().copied()),
        None => argmax_content(&logits, vocab),
    };
    Ok(PredictionRecord {
        relation: fact.relation.clone(),
        subject: fact.subject.clone(),
        object: fact.object.clone(),
        predicted: vocab.token(predicted_id).to_string(),
        predicted_id,
        correct: predicted_id == fact.object_id,
        is_train_majority: train_majority == Some(predicted_id),
    })
}

/// Fraction of facts a template predicts correctly. Used for dev-set model
/// selection during training.
pub fn template_accuracy(
    model: &MlmModel,
    template: &PromptTemplate,
    facts: &[Fact],
    vocab: &Vocabulary,
) -> Result<f64> {
    if facts.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0usize;
    for fact in facts {
        let r = render(template, fact, model, vocab)?;
        let logits = model.forward_mask_logits(&r.input_vectors, r.mask_position)?;
        if argmax_content(&logits, vocab) == fact.object_id {
            correct += 1;
        }
    }
    Ok(correct as f64 / facts.len() as f64)
}

/// Integer-count statistics for one relation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RelationEval {
    pub relation: String,
    pub count: usize,
    pub correct: usize,
    /// Correct and equal to the train majority object.
    pub correct_majority: usize,
    /// Correct and not the majority object.
    pub correct_other: usize,
    /// Prediction equals the majority object, right or wrong.
    pub majority_elicited: usize,
}

impl RelationEval {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count as f64
    }

    pub fn majority_part(&self) -> f64 {
        self.correct_majority as f64 / self.count as f64
    }

    pub fn other_part(&self) -> f64 {
        self.correct_other as f64 / self.count as f64
    }

    pub fn elicitation_rate(&self) -> f64 {
        self.majority_elicited as f64 / self.count as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub relations: BTreeMap<String, RelationEval>,
    /// Relations present in the corpus but with zero test records; excluded
    /// from the mean rather than counted as zero.
    pub skipped_relations: Vec<String>,
    /// Unweighted mean of per-relation accuracies (the headline statistic).
    pub relation_mean_accuracy: f64,
    /// Example-weighted accuracy over all records, for transparency.
    pub micro_accuracy: f64,
}

/// Aggregate prediction records into per-relation counts and the two
/// aggregate accuracies. `known_relations` is the corpus relation set; a
/// record outside it is an error, a known relation without records is
/// skipped with a warning entry.
pub fn evaluate(
    records: &[PredictionRecord],
    known_relations: &BTreeSet<String>,
) -> Result<EvalReport> {
    let mut relations: BTreeMap<String, RelationEval> = BTreeMap::new();
    for rec in records {
        if !known_relations.contains(&rec.relation) {
            return Err(Error::UnknownRelation(rec.relation.clone()));
        }
        let e = relations
            .entry(rec.relation.clone())
            .or_insert_with(|| RelationEval {
                relation: rec.relation.clone(),
                count: 0,
                correct: 0,
                correct_majority: 0,
                correct_other: 0,
                majority_elicited: 0,
            });
        e.count += 1;
        if rec.correct {
            e.correct += 1;
            if rec.is_train_majority {
                e.correct_majority += 1;
            } else {
                e.correct_other += 1;
            }
        }
        if rec.is_train_majority {
            e.majority_elicited += 1;
        }
    }
    let skipped: Vec<String> = known_relations
        .iter()
        .filter(|r| !relations.contains_key(*r))
        .cloned()
        .collect();
    for r in &skipped {
        eprintln!("warning: relation {r} has no test records; excluded from the mean");
    }
    let relation_mean_accuracy = if relations.is_empty() {
        f64::NAN
    } else {
        relations.values().map(RelationEval::accuracy).sum::<f64>() / relations.len() as f64
    };
    let total: usize = relations.values().map(|e| e.count).sum();
    let correct: usize = relations.values().map(|e| e.correct).sum();
    let micro_accuracy = if total == 0 {
        f64::NAN
    } else {
        correct as f64 / total as f64
    };
    Ok(EvalReport {
        relations,
        skipped_relations: skipped,
        relation_mean_accuracy,
        micro_accuracy,
    })
}

/// Easy/hard split of the test set: a fact is easy iff at least one of the
/// defining predictors gets it right.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Partition {
    pub easy: BTreeSet<FactKey>,
    pub hard: BTreeSet<FactKey>,
    /// Which predictors got each easy fact right.
    pub provenance: BTreeMap<FactKey, Vec<String>>,
}

impl Partition {
    pub fn is_easy(&self, key: &FactKey) -> bool {
        self.easy.contains(key)
    }
}

/// Build the partition from named prediction dumps. Every predictor must
/// cover every test fact.
pub fn build_partition(
    test: &[Fact],
    predictors: &[(String, Vec<PredictionRecord>)],
) -> Result<Partition> {
    let keys: Vec<FactKey> = test.iter().map(fact_key).collect();
    build_partition_keys(&keys, predictors)
}

/// Same as [`build_partition`] but over bare fact keys, for callers that
/// only have prediction dumps.
pub fn build_partition_keys(
    test: &[FactKey],
    predictors: &[(String, Vec<PredictionRecord>)],
) -> Result<Partition> {
    let mut easy = BTreeSet::new();
    let mut hard = BTreeSet::new();
    let mut provenance: BTreeMap<FactKey, Vec<String>> = BTreeMap::new();
    let indexed: Vec<(&String, BTreeMap<FactKey, &PredictionRecord>)> = predictors
        .iter()
        .map(|(name, recs)| (name, recs.iter().map(|r| (r.key(), r)).collect()))
        .collect();
    for key in test {
        let key = key.clone();
        let mut names = Vec::new();
        for (name, by_key) in &indexed {
            let rec = by_key.get(&key).ok_or_else(|| {
                Error::Partition(format!(
                    "predictor {name} has no prediction for {key:?}"
                ))
            })?;
            if rec.correct {
                names.push((*name).clone());
            }
        }
        if names.is_empty() {
            hard.insert(key);
        } else {
            easy.insert(key.clone());
            provenance.insert(key, names);
        }
    }
    Ok(Partition {
        easy,
        hard,
        provenance,
    })
}

/// Results of one method over one test set, as consumed by the report.
#[derive(Debug, Clone)]
pub struct MethodResults {
    pub name: String,
    pub records: Vec<PredictionRecord>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Markdown,
}

fn fmt_acc(x: f64) -> String {
    if x.is_nan() {
        "-".to_string()
    } else {
        format!("{:.4}", x)
    }
}

struct EasyHard {
    easy_correct: usize,
    easy_count: usize,
    hard_correct: usize,
    hard_count: usize,
}

fn easy_hard_counts(
    records: &[PredictionRecord],
    partition: &Partition,
    relation: Option<&str>,
) -> EasyHard {
    let mut out = EasyHard {
        easy_correct: 0,
        easy_count: 0,
        hard_correct: 0,
        hard_count: 0,
    };
    for rec in records {
        if let Some(r) = relation {
            if rec.relation != r {
                continue;
            }
        }
        if partition.is_easy(&rec.key()) {
            out.easy_count += 1;
            out.easy_correct += rec.correct as usize;
        } else {
            out.hard_count += 1;
            out.hard_correct += rec.correct as usize;
        }
    }
    out
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

/// Render the combined table. Columns: relation, type, name, count, then per
/// method the accuracy plus the exact correct/majority/other counts, plus
/// easy/hard accuracies when a partition is given. The aggregate row is
/// labelled "All" and reports the relation-mean accuracy.
pub fn emit_report(
    methods: &[MethodResults],
    metadata: &BTreeMap<String, RelationMeta>,
    partition: Option<&Partition>,
    format: ReportFormat,
) -> String {
    let mut header: Vec<String> = vec![
        "relation".into(),
        "type".into(),
        "name".into(),
        "count".into(),
    ];
    for m in methods {
        header.push(format!("{}_acc", m.name));
        header.push(format!("{}_correct", m.name));
        header.push(format!("{}_majority", m.name));
        header.push(format!("{}_other", m.name));
        if partition.is_some() {
            header.push(format!("{}_easy", m.name));
            header.push(format!("{}_hard", m.name));
        }
    }

    let mut relations: BTreeSet<String> = BTreeSet::new();
    for m in methods {
        relations.extend(m.report.relations.keys().cloned());
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    for rel in &relations {
        let meta = metadata.get(rel);
        let count = methods
            .iter()
            .find_map(|m| m.report.relations.get(rel).map(|e| e.count))
            .unwrap_or(0);
        let mut row = vec![
            rel.clone(),
            meta.map(|m| m.category.to_string()).unwrap_or_default(),
            meta.map(|m| m.name.clone()).unwrap_or_default(),
            count.to_string(),
        ];
        for m in methods {
            match m.report.relations.get(rel) {
                Some(e) => {
                    row.push(fmt_acc(e.accuracy()));
                    row.push(e.correct.to_string());
                    row.push(e.correct_majority.to_string());
                    row.push(e.correct_other.to_string());
                }
                None => row.extend(["-".into(), "-".into(), "-".into(), "-".into()]),
            }
            if let Some(p) = partition {
                let eh = easy_hard_counts(&m.records, p, Some(rel));
                row.push(fmt_acc(ratio(eh.easy_correct, eh.easy_count)));
                row.push(fmt_acc(ratio(eh.hard_correct, eh.hard_count)));
            }
        }
        rows.push(row);
    }

    let total_count: usize = methods
        .first()
        .map(|m| m.report.relations.values().map(|e| e.count).sum())
        .unwrap_or(0);
    let mut all_row = vec![
        "All".to_string(),
        String::new(),
        String::new(),
        total_count.to_string(),
    ];
    for m in methods {
        let correct: usize = m.report.relations.values().map(|e| e.correct).sum();
        let majority: usize = m
            .report
            .relations
            .values()
            .map(|e| e.correct_majority)
            .sum();
        let other: usize = m.report.relations.values().map(|e| e.correct_other).sum();
        all_row.push(fmt_acc(m.report.relation_mean_accuracy));
        all_row.push(correct.to_string());
        all_row.push(majority.to_string());
        all_row.push(other.to_string());
        if let Some(p) = partition {
            let eh = easy_hard_counts(&m.records, p, None);
            all_row.push(fmt_acc(ratio(eh.easy_correct, eh.easy_count)));
            all_row.push(fmt_acc(ratio(eh.hard_correct, eh.hard_count)));
        }
    }
    rows.push(all_row);

    match format {
        ReportFormat::Tsv => {
            let mut out = String::new();
            let _ = writeln!(out, "{}", header.join("\t"));
            for row in rows {
                let _ = writeln!(out, "{}", row.join("\t"));
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(
                out,
                "|{}|",
                header.iter().map(|_| " --- ").collect::<Vec<_>>().join("|")
            );
            for row in rows {
                let _ = writeln!(out, "| {} |", row.join(" | "));
            }
            out
        }
    }
}

/// One record per line, for cross-method intersection analyses.
pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for rec in records {
        serde_json::to_writer(&mut file, rec).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(file).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(relation: &str, subject: &str, object: &str, predicted: &str, majority: &str) -> PredictionRecord {
        PredictionRecord {
            relation: relation.into(),
            subject: subject.into(),
            object: object.into(),
            predicted: predicted.into(),
            predicted_id: 0,
            correct: predicted == object,
            is_train_majority: predicted == majority,
        }
    }

    fn known(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn argmax_prefers_lowest_id_on_ties() {
        let logits = Array1::from_vec(vec![0.0, 1.0, 0.5, 1.0]);
        assert_eq!(argmax_over(&logits, 0..4), 1);
        assert_eq!(argmax_over(&logits, [3usize].into_iter()), 3);
    }

    #[test]
    fn fixed_logits_argmax() {
        let logits = Array1::from_vec(vec![1.0, 2.0, 0.5]);
        assert_eq!(argmax_over(&logits, 0..3), 1);
    }

    #[test]
    fn relation_mean_vs_micro() {
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(rec("A", &format!("s{i}"), "x", "x", "x"));
        }
        for i in 0..500 {
            records.push(rec("B", &format!("t{i}"), "y", "y", "y"));
        }
        for i in 0..500 {
            records.push(rec("B", &format!("u{i}"), "y", "z", "y"));
        }
        let report = evaluate(&records, &known(&["A", "B"])).unwrap();
        assert!((report.relation_mean_accuracy - 0.75).abs() < 1e-6);
        assert!((report.micro_accuracy - 510.0 / 1010.0).abs() < 1e-6);
    }

    #[test]
    fn decomposition_identity_exact() {
        let mut records = Vec::new();
        for i in 0..7 {
            records.push(rec("A", &format!("s{i}"), "m", "m", "m"));
        }
        for i in 0..3 {
            records.push(rec("A", &format!("o{i}"), "q", "q", "m"));
        }
        for i in 0..5 {
            records.push(rec("A", &format!("w{i}"), "q", "m", "m"));
        }
        let report = evaluate(&records, &known(&["A"])).unwrap();
        let e = &report.relations["A"];
        assert_eq!(e.correct_majority + e.correct_other, e.correct);
        let parts = (e.correct_majority + e.correct_other) as f64 / e.count as f64;
        assert_eq!(parts, e.accuracy());
        assert_eq!(e.count, 15);
        assert_eq!(e.majority_elicited, 12);
    }

    #[test]
    fn elicitation_rate_with_low_majority_share() {
        // 22% of objects are the majority label, every prediction is it.
        let mut records = Vec::new();
        for i in 0..22 {
            records.push(rec("A", &format!("s{i}"), "m", "m", "m"));
        }
        for i in 0..78 {
            records.push(rec("A", &format!("o{i}"), &format!("x{}", i % 5), "m", "m"));
        }
        let report = evaluate(&records, &known(&["A"])).unwrap();
        let e = &report.relations["A"];
        assert!((e.elicitation_rate() - 1.0).abs() < 1e-12);
        assert!((e.accuracy() - 0.22).abs() < 1e-12);
    }

    #[test]
    fn zero_test_relation_skipped_not_zeroed() {
        let records = vec![rec("A", "s", "x", "x", "x")];
        let report = evaluate(&records, &known(&["A", "B"])).unwrap();
        assert_eq!(report.skipped_relations, vec!["B".to_string()]);
        assert!((report.relation_mean_accuracy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_relation_is_an_error() {
        let records = vec![rec("Z", "s", "x", "x", "x")];
        assert!(matches!(
            evaluate(&records, &known(&["A"])),
            Err(Error::UnknownRelation(_))
        ));
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let mut records = Vec::new();
        for i in 0..40 {
            let correct = i % 3 == 0;
            let obj = format!("o{}", i % 7);
            let pred = if correct { obj.clone() } else { "zzz".to_string() };
            records.push(rec(if i % 2 == 0 { "A" } else { "B" }, &format!("s{i}"), &obj, &pred, "o0"));
        }
        let base = evaluate(&records, &known(&["A", "B"])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            records.shuffle(&mut rng);
            assert_eq!(evaluate(&records, &known(&["A", "B"])).unwrap(), base);
        }
    }

    #[test]
    fn partition_union_semantics() {
        let vocab = Vocabulary::new(
            vec!["[MASK]".into(), "a".into(), "b".into(), "x".into(), "y".into()],
            "[MASK]",
            None,
            None,
            None,
        )
        .unwrap();
        let fa = Fact::new("a", "R", "x", &vocab).unwrap();
        let fb = Fact::new("b", "R", "y", &vocab).unwrap();
        let test = vec![fa.clone(), fb.clone()];
        let nb = vec![rec("R", "a", "x", "x", "x"), rec("R", "b", "y", "x", "x")];
        let ft = vec![rec("R", "a", "x", "y", "x"), rec("R", "b", "y", "y", "x")];
        let p = build_partition(
            &test,
            &[("nb".to_string(), nb), ("ft".to_string(), ft)],
        )
        .unwrap();
        assert_eq!(p.easy.len(), 2);
        assert!(p.hard.is_empty());
        assert_eq!(p.provenance[&fact_key(&fa)], vec!["nb".to_string()]);
        assert_eq!(p.provenance[&fact_key(&fb)], vec!["ft".to_string()]);
    }

    #[test]
    fn partition_all_wrong_is_all_hard() {
        let vocab = Vocabulary::new(
            vec!["[MASK]".into(), "a".into(), "x".into(), "y".into()],
            "[MASK]",
            None,
            None,
            None,
        )
        .unwrap();
        let fa = Fact::new("a", "R", "x", &vocab).unwrap();
        let p = build_partition(
            &[fa],
            &[("nb".to_string(), vec![rec("R", "a", "x", "y", "y")])],
        )
        .unwrap();
        assert!(p.easy.is_empty());
        assert_eq!(p.hard.len(), 1);
    }

    #[test]
    fn partition_requires_coverage() {
        let vocab = Vocabulary::new(
            vec!["[MASK]".into(), "a".into(), "x".into()],
            "[MASK]",
            None,
            None,
            None,
        )
        .unwrap();
        let fa = Fact::new("a", "R", "x", &vocab).unwrap();
        assert!(matches!(
            build_partition(&[fa], &[("nb".to_string(), vec![])]),
            Err(Error::Partition(_))
        ));
    }

    #[test]
    fn empty_report_is_header_only() {
        let doc = emit_report(&[], &BTreeMap::new(), None, ReportFormat::Tsv);
        assert_eq!(doc.lines().count(), 2); // header + All row
        assert!(doc.starts_with("relation\ttype\tname\tcount"));
    }

    #[test]
    fn report_is_byte_stable() {
        let records = vec![rec("A", "s", "x", "x", "x"), rec("A", "t", "y", "x", "x")];
        let report = evaluate(&records, &known(&["A"])).unwrap();
        let m = MethodResults {
            name: "prior".into(),
            records,
            report,
        };
        let a = emit_report(std::slice::from_ref(&m), &BTreeMap::new(), None, ReportFormat::Tsv);
        let b = emit_report(std::slice::from_ref(&m), &BTreeMap::new(), None, ReportFormat::Tsv);
        assert_eq!(a, b);
        let md = emit_report(&[m], &BTreeMap::new(), None, ReportFormat::Markdown);
        assert!(md.starts_with("| relation |"));
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.jsonl");
        let records = vec![rec("A", "s", "x", "x", "x"), rec("B", "t", "y", "z", "y")];
        write_predictions(&path, &records).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), records);
    }
}
