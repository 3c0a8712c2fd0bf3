//! Fact triples, vocabulary, and train/dev/test handling.
//!
//! Facts are ⟨subject, relation, object⟩ triples where the object must be a
//! single token of the active vocabulary. Subjects are tokenized by
//! whitespace-plus-punctuation splitting; out-of-vocabulary pieces map to the
//! reserved UNK content token.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token inventory with reserved (non-content) ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    mask_id: usize,
    pad_id: Option<usize>,
    unk_id: Option<usize>,
    subject_marker_id: Option<usize>,
    special_ids: BTreeSet<usize>,
}

impl Vocabulary {
    /// Build a vocabulary from an ordered token list. `mask` must be present;
    /// `pad` and the subject marker are reserved non-content tokens, `unk` is
    /// a reserved *content* token used for out-of-vocabulary subject pieces.
    pub fn new(
        tokens: Vec<String>,
        mask: &str,
        pad: Option<&str>,
        unk: Option<&str>,
        subject_marker: Option<&str>,
    ) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::Vocabulary(
                "need at least the mask token and one content token".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {tok:?}")));
            }
        }
        let lookup = |name: &str, tok: &str| -> Result<usize> {
            index
                .get(tok)
                .copied()
                .ok_or_else(|| Error::Vocabulary(format!("declared {name} token {tok:?} not in list")))
        };
        let mask_id = lookup("mask", mask)?;
        let pad_id = pad.map(|t| lookup("pad", t)).transpose()?;
        let unk_id = unk.map(|t| lookup("unk", t)).transpose()?;
        let subject_marker_id = subject_marker.map(|t| lookup("subject", t)).transpose()?;
        let mut special_ids = BTreeSet::new();
        special_ids.insert(mask_id);
        special_ids.extend(pad_id);
        special_ids.extend(subject_marker_id);
        if special_ids.len() == tokens.len() {
            return Err(Error::Vocabulary("no content tokens".into()));
        }
        Ok(Vocabulary {
            tokens,
            index,
            mask_id,
            pad_id,
            unk_id,
            subject_marker_id,
            special_ids,
        })
    }

    /// Read a vocabulary file: one token per line, ids in line order, with
    /// reserved tokens declared in a leading `#`-comment header, e.g.
    /// `# mask: [MASK]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut mask = None;
        let mut pad = None;
        let mut unk = None;
        let mut subject = None;
        let mut tokens = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((key, value)) = rest.split_once(':') {
                    let value = value.trim().to_string();
                    match key.trim() {
                        "mask" => mask = Some(value),
                        "pad" => pad = Some(value),
                        "unk" => unk = Some(value),
                        "subject" => subject = Some(value),
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            tokens.push(line.to_string());
        }
        let mask = mask.ok_or_else(|| Error::Vocabulary("header declares no mask token".into()))?;
        Vocabulary::new(
            tokens,
            &mask,
            pad.as_deref(),
            unk.as_deref(),
            subject.as_deref(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        out.push_str(&format!("# mask: {}\n", self.token(self.mask_id)));
        if let Some(id) = self.pad_id {
            out.push_str(&format!("# pad: {}\n", self.token(id)));
        }
        if let Some(id) = self.unk_id {
            out.push_str(&format!("# unk: {}\n", self.token(id)));
        }
        if let Some(id) = self.subject_marker_id {
            out.push_str(&format!("# subject: {}\n", self.token(id)));
        }
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn mask_id(&self) -> usize {
        self.mask_id
    }

    pub fn pad_id(&self) -> Option<usize> {
        self.pad_id
    }

    pub fn unk_id(&self) -> Option<usize> {
        self.unk_id
    }

    pub fn special_ids(&self) -> &BTreeSet<usize> {
        &self.special_ids
    }

    pub fn is_content(&self, id: usize) -> bool {
        id < self.tokens.len() && !self.special_ids.contains(&id)
    }

    /// Number of content tokens; this is |𝒱| for smoothing purposes.
    pub fn content_size(&self) -> usize {
        self.tokens.len() - self.special_ids.len()
    }

    pub fn content_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.tokens.len()).filter(move |id| !self.special_ids.contains(id))
    }

    /// Split a surface form on whitespace and punctuation and map each piece
    /// to a content token id, falling back to UNK. Always returns at least
    /// one token.
    pub fn tokenize_subject(&self, surface: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        for piece in surface
            .split(|c: char| !c.is_alphanumeric())
            .filter(|p| !p.is_empty())
        {
            match self.index.get(piece) {
                Some(&id) if self.is_content(id) => ids.push(id),
                _ => match self.unk_id {
                    Some(unk) => ids.push(unk),
                    None => return Err(Error::UnknownToken(piece.to_string())),
                },
            }
        }
        if ids.is_empty() {
            match self.unk_id {
                Some(unk) => ids.push(unk),
                None => return Err(Error::UnknownToken(surface.to_string())),
            }
        }
        Ok(ids)
    }
}

/// One ⟨subject, relation, object⟩ triple with a single-token object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub object_id: usize,
    pub subject_tokens: Vec<usize>,
}

impl Fact {
    pub fn new(subject: &str, relation: &str, object: &str, vocab: &Vocabulary) -> Result<Fact> {
        let object_id = match vocab.id(object) {
            Some(id) if vocab.is_content(id) => id,
            _ => {
                return Err(Error::Argument(format!(
                    "object {object:?} is not a single content token of the vocabulary"
                )))
            }
        };
        let subject_tokens = vocab.tokenize_subject(subject)?;
        Ok(Fact {
            subject: subject.to_string(),
            relation: relation.to_string(),
            object: object.to_string(),
            object_id,
            subject_tokens,
        })
    }

    pub fn pair(&self) -> (String, String) {
        (self.subject.clone(), self.object.clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FactLine {
    sub_label: String,
    obj_label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicate_id: Option<String>,
}

/// Result of loading a facts file: kept facts plus the count of lines skipped
/// for violating the single-token-object restriction.
#[derive(Debug)]
pub struct LoadedFacts {
    pub facts: Vec<Fact>,
    pub skipped: usize,
}

/// Load facts from JSONL. Lines whose object is not a single vocabulary
/// token are skipped and counted, not errors.
pub fn load_jsonl(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    default_relation: &str,
) -> Result<LoadedFacts> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut facts = Vec::new();
    let mut skipped = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FactLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let relation = parsed.predicate_id.as_deref().unwrap_or(default_relation);
        match Fact::new(&parsed.sub_label, relation, &parsed.obj_label, vocab) {
            Ok(fact) => facts.push(fact),
            Err(Error::Argument(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(LoadedFacts { facts, skipped })
}

pub fn write_jsonl(path: impl AsRef<Path>, facts: &[Fact]) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for fact in facts {
        let line = FactLine {
            sub_label: fact.subject.clone(),
            obj_label: fact.object.clone(),
            predicate_id: Some(fact.relation.clone()),
        };
        serde_json::to_writer(&mut file, &line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(file).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Relation category from the source metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RelationCategory {
    #[serde(rename = "1-1")]
    OneToOne,
    #[serde(rename = "N-1")]
    ManyToOne,
    #[serde(rename = "N-M")]
    #[default]
    ManyToMany,
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RelationCategory::OneToOne => "1-1",
            RelationCategory::ManyToOne => "N-1",
            RelationCategory::ManyToMany => "N-M",
        };
        f.write_str(s)
    }
}

/// Shared subject-object pairs between train∪dev and test.
#[derive(Debug, Clone)]
pub struct OverlapReport {
    pub count: usize,
    pub offenders: Vec<(String, String)>,
}

/// Count (subject, object) pairs present in both the training side and test.
pub fn check_overlap(train_and_dev: &[&Fact], test: &[Fact]) -> OverlapReport {
    let train_pairs: HashSet<(String, String)> =
        train_and_dev.iter().map(|f| f.pair()).collect();
    let mut seen = HashSet::new();
    let mut offenders = Vec::new();
    for fact in test {
        let pair = fact.pair();
        if train_pairs.contains(&pair) && seen.insert(pair.clone()) {
            offenders.push(pair);
        }
    }
    OverlapReport {
        count: offenders.len(),
        offenders,
    }
}

/// Deterministic split of a fact list into train and dev parts.
/// |dev| = round(dev_fraction · |facts|); original order is preserved within
/// each part.
pub fn split_train_dev(
    facts: Vec<Fact>,
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<Fact>, Vec<Fact>)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "dev_fraction must be in (0, 1), got {dev_fraction}"
        )));
    }
    if facts.is_empty() {
        return Err(Error::Argument("cannot split an empty fact list".into()));
    }
    let n = facts.len();
    let dev_n = (dev_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let dev_idx: HashSet<usize> = order[..dev_n].iter().copied().collect();
    let mut train = Vec::with_capacity(n - dev_n);
    let mut dev = Vec::with_capacity(dev_n);
    for (i, fact) in facts.into_iter().enumerate() {
        if dev_idx.contains(&i) {
            dev.push(fact);
        } else {
            train.push(fact);
        }
    }
    Ok((train, dev))
}

/// All splits of one relation.
#[derive(Debug, Clone)]
pub struct RelationDataset {
    pub relation: String,
    pub category: RelationCategory,
    pub train: Vec<Fact>,
    pub dev: Vec<Fact>,
    pub test: Vec<Fact>,
}

impl RelationDataset {
    /// Construct a dataset, rejecting train/test subject-object overlap
    /// unless `allow_overlap` is set.
    pub fn new(
        relation: &str,
        category: RelationCategory,
        train: Vec<Fact>,
        dev: Vec<Fact>,
        test: Vec<Fact>,
        allow_overlap: bool,
    ) -> Result<Self> {
        for fact in train.iter().chain(&dev).chain(&test) {
            if fact.relation != relation {
                return Err(Error::Argument(format!(
                    "fact for relation {} in dataset {}",
                    fact.relation, relation
                )));
            }
        }
        let dataset = RelationDataset {
            relation: relation.to_string(),
            category,
            train,
            dev,
            test,
        };
        let report = dataset.overlap_report();
        if report.count > 0 && !allow_overlap {
            return Err(Error::Overlap {
                count: report.count,
                first: report.offenders.first().cloned(),
            });
        }
        Ok(dataset)
    }

    pub fn overlap_report(&self) -> OverlapReport {
        let train_dev: Vec<&Fact> = self.train.iter().chain(&self.dev).collect();
        check_overlap(&train_dev, &self.test)
    }
}

/// Per-relation manual template and category, as shipped alongside the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationMeta {
    pub relation: String,
    pub template: String,
    #[serde(default)]
    pub category: RelationCategory,
    /// Human-readable relation label, e.g. "place of birth".
    #[serde(default)]
    pub name: String,
}

pub fn load_metadata(path: impl AsRef<Path>) -> Result<BTreeMap<String, RelationMeta>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let meta: RelationMeta = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        out.insert(meta.relation.clone(), meta);
    }
    Ok(out)
}

/// A whole benchmark: every relation plus the shared vocabulary.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub relations: BTreeMap<String, RelationDataset>,
    pub vocabulary: Vocabulary,
}

impl Corpus {
    pub fn new(vocabulary: Vocabulary) -> Self {
        Corpus {
            relations: BTreeMap::new(),
            vocabulary,
        }
    }

    pub fn insert(&mut self, dataset: RelationDataset) {
        self.relations.insert(dataset.relation.clone(), dataset);
    }

    pub fn relation(&self, id: &str) -> Result<&RelationDataset> {
        self.relations
            .get(id)
            .ok_or_else(|| Error::UnknownRelation(id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_vocab() -> Vocabulary {
        Vocabulary::new(
            vec![
                "[MASK]".into(),
                "[PAD]".into(),
                "[UNK]".into(),
                "Dante".into(),
                "Florence".into(),
                "was".into(),
                "born".into(),
                "in".into(),
            ],
            "[MASK]",
            Some("[PAD]"),
            Some("[UNK]"),
            None,
        )
        .unwrap()
    }

    #[test]
    fn vocabulary_invariants() {
        let v = toy_vocab();
        assert_eq!(v.len(), 8);
        assert_eq!(v.mask_id(), 0);
        assert!(!v.is_content(0));
        assert!(!v.is_content(1));
        assert!(v.is_content(2)); // UNK is a content token
        assert_eq!(v.content_size(), 6);
        for (id, tok) in (0..v.len()).map(|i| (i, v.token(i).to_string())) {
            assert_eq!(v.id(&tok), Some(id));
        }
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_missing_mask() {
        let err = Vocabulary::new(
            vec!["a".into(), "a".into()],
            "a",
            None,
            None,
            None,
        );
        assert!(err.is_err());
        let err = Vocabulary::new(vec!["a".into(), "b".into()], "[MASK]", None, None, None);
        assert!(err.is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = toy_vocab();
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.len(), v.len());
        assert_eq!(loaded.mask_id(), v.mask_id());
        assert_eq!(loaded.special_ids(), v.special_ids());
        assert_eq!(loaded.unk_id(), v.unk_id());
    }

    #[test]
    fn subject_tokenization_unk_fallback() {
        let v = toy_vocab();
        let ids = v.tokenize_subject("Dante Alighieri").unwrap();
        assert_eq!(ids, vec![3, v.unk_id().unwrap()]);
        // punctuation-only subject still yields a token
        let ids = v.tokenize_subject("---").unwrap();
        assert_eq!(ids, vec![v.unk_id().unwrap()]);
    }

    #[test]
    fn load_jsonl_dante_example() {
        let v = toy_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("facts.jsonl");
        fs::write(
            &path,
            "{\"sub_label\":\"Dante\",\"obj_label\":\"Florence\"}\n",
        )
        .unwrap();
        let loaded = load_jsonl(&path, &v, "P19").unwrap();
        assert_eq!(loaded.skipped, 0);
        assert_eq!(loaded.facts.len(), 1);
        let f = &loaded.facts[0];
        assert_eq!(f.subject, "Dante");
        assert_eq!(f.object, "Florence");
        assert_eq!(f.relation, "P19");
        assert_eq!(f.object_id, v.id("Florence").unwrap());
    }

    #[test]
    fn load_jsonl_empty_file() {
        let v = toy_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let loaded = load_jsonl(&path, &v, "P19").unwrap();
        assert!(loaded.facts.is_empty());
        assert_eq!(loaded.skipped, 0);
    }

    #[test]
    fn load_jsonl_skips_multi_token_objects() {
        let v = toy_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("facts.jsonl");
        fs::write(
            &path,
            concat!(
                "{\"sub_label\":\"Dante\",\"obj_label\":\"Florence\"}\n",
                "{\"sub_label\":\"Dante\",\"obj_label\":\"New York\"}\n",
                "{\"sub_label\":\"born\",\"obj_label\":\"in\"}\n",
            ),
        )
        .unwrap();
        let loaded = load_jsonl(&path, &v, "P19").unwrap();
        assert_eq!(loaded.facts.len(), 2);
        assert_eq!(loaded.skipped, 1);
    }

    #[test]
    fn load_jsonl_malformed_line_reports_number() {
        let v = toy_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("facts.jsonl");
        fs::write(
            &path,
            "{\"sub_label\":\"Dante\",\"obj_label\":\"Florence\"}\nnot json\n",
        )
        .unwrap();
        match load_jsonl(&path, &v, "P19") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let v = toy_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("facts.jsonl");
        let facts = vec![
            Fact::new("Dante", "P19", "Florence", &v).unwrap(),
            Fact::new("born in", "P19", "in", &v).unwrap(),
        ];
        write_jsonl(&path, &facts).unwrap();
        let loaded = load_jsonl(&path, &v, "P19").unwrap();
        assert_eq!(loaded.facts, facts);
        assert_eq!(loaded.skipped, 0);
    }

    fn fact(v: &Vocabulary, s: &str, o: &str) -> Fact {
        Fact::new(s, "P19", o, v).unwrap()
    }

    #[test]
    fn overlap_examples() {
        let v = toy_vocab();
        // disjoint
        let train = vec![fact(&v, "Dante", "Florence")];
        let test = vec![fact(&v, "born", "in")];
        let report = check_overlap(&train.iter().collect::<Vec<_>>(), &test);
        assert_eq!(report.count, 0);
        // shared pair
        let test = vec![fact(&v, "Dante", "Florence"), fact(&v, "born", "in")];
        let report = check_overlap(&train.iter().collect::<Vec<_>>(), &test);
        assert_eq!(report.count, 1);
        assert_eq!(report.offenders[0], ("Dante".into(), "Florence".into()));
        // same subject, different object is fine
        let test = vec![fact(&v, "Dante", "in")];
        let report = check_overlap(&train.iter().collect::<Vec<_>>(), &test);
        assert_eq!(report.count, 0);
    }

    #[test]
    fn dataset_rejects_overlap_without_override() {
        let v = toy_vocab();
        let train = vec![fact(&v, "Dante", "Florence")];
        let test = vec![fact(&v, "Dante", "Florence")];
        let err = RelationDataset::new(
            "P19",
            RelationCategory::ManyToOne,
            train.clone(),
            vec![],
            test.clone(),
            false,
        );
        assert!(matches!(err, Err(Error::Overlap { count: 1, .. })));
        let ok =
            RelationDataset::new("P19", RelationCategory::ManyToOne, train, vec![], test, true);
        assert!(ok.is_ok());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let v = toy_vocab();
        let facts: Vec<Fact> = (0..1000)
            .map(|i| fact(&v, if i % 2 == 0 { "Dante" } else { "born" }, "Florence"))
            .collect();
        let (train, dev) = split_train_dev(facts.clone(), 0.2, 7).unwrap();
        assert_eq!(train.len(), 800);
        assert_eq!(dev.len(), 200);

        let small: Vec<Fact> = (0..5).map(|_| fact(&v, "Dante", "Florence")).collect();
        let (train, dev) = split_train_dev(small, 0.2, 7).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(dev.len(), 1);

        let ten: Vec<Fact> = (0..10).map(|_| fact(&v, "Dante", "in")).collect();
        let (t1, d1) = split_train_dev(ten.clone(), 0.2, 42).unwrap();
        let (t2, d2) = split_train_dev(ten, 0.2, 42).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(d1, d2);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let v = toy_vocab();
        let facts = vec![fact(&v, "Dante", "Florence")];
        assert!(split_train_dev(facts.clone(), 0.0, 1).is_err());
        assert!(split_train_dev(facts, 1.0, 1).is_err());
    }
}
