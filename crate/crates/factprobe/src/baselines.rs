//! Statistical baselines fit on training data only: the class prior and a
//! bag-of-words Naive Bayes classifier with add-one smoothing.
//!
//! Naive Bayes scores an object label o for a subject with tokens w₁…wₙ as
//! P(o|r)·∏ᵢ P(o|wᵢ), with P(o|wᵢ) = (count(o,wᵢ)+1) / Σ_w(count(o,w)+1)
//! where the sum runs over the content vocabulary. The candidate set is the
//! object labels observed in training for that relation; ties break toward
//! the lowest vocabulary id.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Fact, RelationDataset, Vocabulary};
use crate::error::{Error, Result};

/// Object-label counts for one relation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorStats {
    pub counts: BTreeMap<usize, usize>,
    pub total: usize,
    pub majority: usize,
}

impl PriorStats {
    pub fn fit(relation: &str, train: &[Fact]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTrain(relation.to_string()));
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for fact in train {
            *counts.entry(fact.object_id).or_default() += 1;
        }
        // ascending id iteration + strict > keeps the lowest id on ties
        let majority = counts
            .iter()
            .fold((usize::MAX, 0usize), |best, (&id, &c)| {
                if c > best.1 {
                    (id, c)
                } else {
                    best
                }
            })
            .0;
        Ok(PriorStats {
            counts,
            total: train.len(),
            majority,
        })
    }

    pub fn prob(&self, object_id: usize) -> f64 {
        *self.counts.get(&object_id).unwrap_or(&0) as f64 / self.total as f64
    }
}

/// Majority-class predictor with per-relation priors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassPriorModel {
    pub per_relation: BTreeMap<String, PriorStats>,
}

impl ClassPriorModel {
    pub fn fit<'a>(datasets: impl IntoIterator<Item = &'a RelationDataset>) -> Result<Self> {
        let mut per_relation = BTreeMap::new();
        for ds in datasets {
            per_relation.insert(ds.relation.clone(), PriorStats::fit(&ds.relation, &ds.train)?);
        }
        Ok(ClassPriorModel { per_relation })
    }

    pub fn stats(&self, relation: &str) -> Result<&PriorStats> {
        self.per_relation
            .get(relation)
            .ok_or_else(|| Error::UnknownRelation(relation.to_string()))
    }

    pub fn majority(&self, relation: &str) -> Result<usize> {
        Ok(self.stats(relation)?.majority)
    }

    /// Predicts the training majority object, independent of the subject.
    pub fn predict(&self, fact: &Fact) -> Result<usize> {
        self.majority(&fact.relation)
    }
}

/// Per-relation Naive Bayes counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NbStats {
    pub prior: PriorStats,
    /// count(o, w): object id → subject-token id → co-occurrence count.
    pub cooc: BTreeMap<usize, BTreeMap<usize, usize>>,
    /// Σ_w count(o, w) per object id.
    pub token_totals: BTreeMap<usize, usize>,
}

impl NbStats {
    fn fit(relation: &str, train: &[Fact]) -> Result<Self> {
        let prior = PriorStats::fit(relation, train)?;
        let mut cooc: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
        let mut token_totals: BTreeMap<usize, usize> = BTreeMap::new();
        for fact in train {
            let per_obj = cooc.entry(fact.object_id).or_default();
            for &w in &fact.subject_tokens {
                *per_obj.entry(w).or_default() += 1;
                *token_totals.entry(fact.object_id).or_default() += 1;
            }
        }
        for &o in prior.counts.keys() {
            cooc.entry(o).or_default();
            token_totals.entry(o).or_default();
        }
        Ok(NbStats {
            prior,
            cooc,
            token_totals,
        })
    }
}

/// Bag-of-words Naive Bayes with add-one smoothing over the content
/// vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub per_relation: BTreeMap<String, NbStats>,
    /// |𝒱|: number of content tokens used in the smoothing denominator.
    pub content_vocab_size: usize,
}

impl NaiveBayesModel {
    pub fn fit<'a>(
        datasets: impl IntoIterator<Item = &'a RelationDataset>,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let mut per_relation = BTreeMap::new();
        for ds in datasets {
            per_relation.insert(ds.relation.clone(), NbStats::fit(&ds.relation, &ds.train)?);
        }
        Ok(NaiveBayesModel {
            per_relation,
            content_vocab_size: vocab.content_size(),
        })
    }

    pub fn stats(&self, relation: &str) -> Result<&NbStats> {
        self.per_relation
            .get(relation)
            .ok_or_else(|| Error::UnknownRelation(relation.to_string()))
    }

    /// Smoothed P(o | w).
    pub fn token_prob(&self, relation: &str, object_id: usize, token_id: usize) -> Result<f64> {
        let stats = self.stats(relation)?;
        let count = stats
            .cooc
            .get(&object_id)
            .and_then(|m| m.get(&token_id))
            .copied()
            .unwrap_or(0);
        let total = stats.token_totals.get(&object_id).copied().unwrap_or(0);
        Ok((count as f64 + 1.0) / (total as f64 + self.content_vocab_size as f64))
    }

    /// Log posterior score log P(o|r) + Σᵢ log P(o|wᵢ); repeated subject
    /// tokens contribute one factor per occurrence. Tokens are accumulated
    /// in sorted order so the score is independent of token order.
    pub fn log_score(&self, relation: &str, object_id: usize, subject_tokens: &[usize]) -> Result<f64> {
        let stats = self.stats(relation)?;
        let prior = stats.prior.prob(object_id);
        let mut multiplicity: BTreeMap<usize, usize> = BTreeMap::new();
        for &w in subject_tokens {
            *multiplicity.entry(w).or_default() += 1;
        }
        let mut score = prior.ln();
        for (&w, &n) in &multiplicity {
            score += n as f64 * self.token_prob(relation, object_id, w)?.ln();
        }
        Ok(score)
    }

    /// Argmax over the object labels seen in training; ties break toward the
    /// lowest vocabulary id.
    pub fn predict(&self, fact: &Fact) -> Result<usize> {
        let stats = self.stats(&fact.relation)?;
        let mut best: Option<(usize, f64)> = None;
        for &o in stats.prior.counts.keys() {
            let score = self.log_score(&fact.relation, o, &fact.subject_tokens)?;
            match best {
                Some((_, b)) if score <= b => {}
                _ => best = Some((o, score)),
            }
        }
        Ok(best.expect("non-empty training counts").0)
    }
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Argument(format!("serialization failed: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RelationCategory;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        let mut all = vec!["[MASK]".to_string(), "[UNK]".to_string()];
        all.extend(tokens.iter().map(|t| t.to_string()));
        Vocabulary::new(all, "[MASK]", None, Some("[UNK]"), None).unwrap()
    }

    fn dataset(v: &Vocabulary, rel: &str, rows: &[(&str, &str)]) -> RelationDataset {
        let train = rows
            .iter()
            .map(|(s, o)| Fact::new(s, rel, o, v).unwrap())
            .collect();
        RelationDataset::new(rel, RelationCategory::ManyToOne, train, vec![], vec![], true)
            .unwrap()
    }

    #[test]
    fn class_prior_majority_and_probability() {
        let v = vocab(&["French", "German", "Paris"]);
        let rows: Vec<(&str, &str)> = std::iter::repeat(("a", "French"))
            .take(6)
            .chain(std::iter::repeat(("b", "German")).take(4))
            .collect();
        let ds = dataset(&v, "P103", &rows);
        let model = ClassPriorModel::fit([&ds]).unwrap();
        let stats = model.stats("P103").unwrap();
        assert_eq!(stats.majority, v.id("French").unwrap());
        assert!((stats.prob(v.id("French").unwrap()) - 0.6).abs() < 1e-12);
        assert_eq!(stats.total, 10);

        // subject-independence
        let f1 = Fact::new("anything", "P103", "Paris", &v).unwrap();
        let f2 = Fact::new("other subject", "P103", "Paris", &v).unwrap();
        assert_eq!(model.predict(&f1).unwrap(), model.predict(&f2).unwrap());
    }

    #[test]
    fn class_prior_single_class_and_tie_break() {
        let v = vocab(&["x", "y"]);
        let ds = dataset(&v, "R", &[("a", "x")]);
        let model = ClassPriorModel::fit([&ds]).unwrap();
        let stats = model.stats("R").unwrap();
        assert_eq!(stats.majority, v.id("x").unwrap());
        assert!((stats.prob(v.id("x").unwrap()) - 1.0).abs() < 1e-12);

        // tie broken by lowest vocabulary id
        let ds = dataset(&v, "R", &[("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]);
        let model = ClassPriorModel::fit([&ds]).unwrap();
        let lo = v.id("x").unwrap().min(v.id("y").unwrap());
        assert_eq!(model.majority("R").unwrap(), lo);
    }

    #[test]
    fn empty_train_is_a_fit_error() {
        let v = vocab(&["x"]);
        let ds = RelationDataset::new("R", RelationCategory::ManyToOne, vec![], vec![], vec![], true)
            .unwrap();
        assert!(matches!(ClassPriorModel::fit([&ds]), Err(Error::EmptyTrain(_))));
        assert!(matches!(
            NaiveBayesModel::fit([&ds], &v),
            Err(Error::EmptyTrain(_))
        ));
    }

    #[test]
    fn unknown_relation_is_a_lookup_error() {
        let v = vocab(&["x"]);
        let ds = dataset(&v, "R", &[("a", "x")]);
        let model = ClassPriorModel::fit([&ds]).unwrap();
        let f = Fact::new("a", "S", "x", &v).unwrap();
        assert!(matches!(model.predict(&f), Err(Error::UnknownRelation(_))));
    }

    #[test]
    fn nb_hand_computed_smoothing() {
        // one fact (subject token {a}, object x), 4 content tokens
        // → P(x|a) = (1+1)/(1+4) = 0.4
        let v = vocab(&["a", "x", "b"]); // content: [UNK], a, x, b
        assert_eq!(v.content_size(), 4);
        let ds = dataset(&v, "R", &[("a", "x")]);
        let model = NaiveBayesModel::fit([&ds], &v).unwrap();
        let x = v.id("x").unwrap();
        let a = v.id("a").unwrap();
        assert!((model.token_prob("R", x, a).unwrap() - 0.4).abs() < 1e-12);
        // zero co-occurrence stays strictly positive
        let b = v.id("b").unwrap();
        let p = model.token_prob("R", x, b).unwrap();
        assert!((p - 1.0 / 5.0).abs() < 1e-12);
        assert!(p > 0.0);
    }

    #[test]
    fn nb_token_correlation_beats_prior() {
        // subjects containing "football" always map to FIFA even though the
        // class prior favours another label
        let v = vocab(&["football", "club", "team", "FIFA", "NATO", "city"]);
        let rows: Vec<(&str, &str)> = vec![
            ("football club", "FIFA"),
            ("football team", "FIFA"),
            ("football city", "FIFA"),
            ("city club", "NATO"),
            ("city team", "NATO"),
            ("club city", "NATO"),
            ("team city", "NATO"),
        ];
        let ds = dataset(&v, "P463", &rows);
        let model = NaiveBayesModel::fit([&ds], &v).unwrap();
        let prior = ClassPriorModel::fit([&ds]).unwrap();
        let probe = Fact::new("football city", "P463", "FIFA", &v).unwrap();
        assert_eq!(prior.predict(&probe).unwrap(), v.id("NATO").unwrap());
        assert_eq!(model.predict(&probe).unwrap(), v.id("FIFA").unwrap());
    }

    #[test]
    fn nb_unseen_tokens_fall_back_to_prior_majority_under_equal_mass() {
        // both objects carry equal per-object token mass (4 each), so the
        // unseen-token conditionals are identical across objects and the
        // skewed prior decides
        let v = vocab(&["p", "q", "zzz", "x", "y"]);
        let rows: Vec<(&str, &str)> = vec![
            ("p p", "x"),
            ("p", "x"),
            ("p", "x"),
            ("q q q q", "y"),
        ];
        let ds = dataset(&v, "R", &rows);
        let model = NaiveBayesModel::fit([&ds], &v).unwrap();
        let prior = ClassPriorModel::fit([&ds]).unwrap();
        let probe = Fact::new("zzz", "R", "x", &v).unwrap();
        assert_eq!(
            model.predict(&probe).unwrap(),
            prior.predict(&probe).unwrap()
        );
    }

    #[test]
    fn nb_single_class_train() {
        let v = vocab(&["a", "b", "x"]);
        let ds = dataset(&v, "R", &[("a", "x"), ("b", "x")]);
        let model = NaiveBayesModel::fit([&ds], &v).unwrap();
        for subject in ["a", "b", "a b", "zzz unseen"] {
            let f = Fact::new(subject, "R", "x", &v).unwrap();
            assert_eq!(model.predict(&f).unwrap(), v.id("x").unwrap());
        }
    }

    #[test]
    fn nb_order_invariance() {
        let v = vocab(&["football", "club", "FIFA", "NATO"]);
        let ds = dataset(
            &v,
            "R",
            &[("football club", "FIFA"), ("club", "NATO"), ("club", "NATO")],
        );
        let model = NaiveBayesModel::fit([&ds], &v).unwrap();
        let f1 = Fact::new("football club", "R", "FIFA", &v).unwrap();
        let f2 = Fact::new("club football", "R", "FIFA", &v).unwrap();
        assert_eq!(model.predict(&f1).unwrap(), model.predict(&f2).unwrap());
    }

    #[test]
    fn serialization_round_trip() {
        let v = vocab(&["football", "club", "FIFA", "NATO"]);
        let ds = dataset(&v, "R", &[("football club", "FIFA"), ("club", "NATO")]);
        let model = NaiveBayesModel::fit([&ds], &v).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nb.json");
        save_json(&model, &path).unwrap();
        let loaded: NaiveBayesModel = load_json(&path).unwrap();
        let f = Fact::new("football", "R", "FIFA", &v).unwrap();
        assert_eq!(model.predict(&f).unwrap(), loaded.predict(&f).unwrap());
        assert_eq!(model.content_vocab_size, loaded.content_vocab_size);
    }
}
