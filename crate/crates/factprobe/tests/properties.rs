//! Randomized invariants over the public API.

use std::collections::BTreeSet;

use ndarray::Array1;
use proptest::prelude::*;

use factprobe::baselines::NaiveBayesModel;
use factprobe::corpus::{
    split_train_dev, write_jsonl, Fact, RelationCategory, RelationDataset, Vocabulary,
};
use factprobe::eval::{argmax_content, build_partition, evaluate, fact_key, PredictionRecord};

fn small_vocab() -> Vocabulary {
    let mut tokens: Vec<String> = vec!["[MASK]".into()];
    tokens.extend((0..8).map(|i| format!("t{i}")));
    Vocabulary::new(tokens, "[MASK]", None, None, None).unwrap()
}

fn fact_strategy() -> impl Strategy<Value = (u8, u8, u8)> {
    (1..=8u8, 0..3u8, 1..=8u8)
}

proptest! {
    /// Writing facts to JSONL and loading them back is lossless.
    #[test]
    fn fact_jsonl_round_trip(raw in proptest::collection::vec(fact_strategy(), 1..30)) {
        let vocab = small_vocab();
        let facts: Vec<Fact> = raw
            .iter()
            .map(|(s, r, o)| {
                Fact::new(&format!("t{}", s - 1), &format!("R{r}"), &format!("t{}", o - 1), &vocab)
                    .unwrap()
            })
            .collect();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("facts.jsonl");
        write_jsonl(&path, &facts).unwrap();
        let loaded = factprobe::corpus::load_jsonl(&path, &vocab, "R0").unwrap();
        prop_assert_eq!(loaded.skipped, 0);
        prop_assert_eq!(loaded.facts, facts);
    }

    /// Adding a constant to every logit never changes the argmax.
    #[test]
    fn argmax_shift_invariance(
        logits in proptest::collection::vec(-50.0..50.0f64, 9),
        shift in -100.0..100.0f64,
    ) {
        let vocab = small_vocab();
        let base = Array1::from_vec(logits);
        let shifted = base.mapv(|x| x + shift);
        prop_assert_eq!(argmax_content(&base, &vocab), argmax_content(&shifted, &vocab));
    }

    /// Evaluation aggregates are invariant to record order.
    #[test]
    fn evaluate_permutation_invariance(
        raw in proptest::collection::vec((0..3u8, any::<bool>(), any::<bool>()), 1..40),
        rotate in 0..40usize,
    ) {
        let records: Vec<PredictionRecord> = raw
            .iter()
            .enumerate()
            .map(|(i, (rel, correct, maj))| PredictionRecord {
                relation: format!("R{rel}"),
                subject: format!("s{i}"),
                object: "x".into(),
                predicted: if *correct { "x".into() } else { "y".into() },
                predicted_id: 0,
                correct: *correct,
                is_train_majority: *maj,
            })
            .collect();
        let known: BTreeSet<String> = (0..3).map(|r| format!("R{r}")).collect();
        let a = evaluate(&records, &known).unwrap();
        let mut shuffled = records.clone();
        shuffled.rotate_left(rotate % records.len());
        shuffled.reverse();
        let b = evaluate(&shuffled, &known).unwrap();
        prop_assert_eq!(a.relations, b.relations);
        prop_assert_eq!(a.relation_mean_accuracy, b.relation_mean_accuracy);
        prop_assert_eq!(a.micro_accuracy, b.micro_accuracy);
    }

    /// Naive Bayes scores a bag of subject tokens: token order is irrelevant.
    #[test]
    fn naive_bayes_token_order_invariance(
        raw in proptest::collection::vec((1..=4u8, 1..=4u8, 5..=8u8), 2..20),
        probe in (1..=4u8, 1..=4u8),
    ) {
        let vocab = small_vocab();
        let train: Vec<Fact> = raw
            .iter()
            .map(|(a, b, o)| {
                Fact::new(
                    &format!("t{} t{}", a - 1, b - 1),
                    "R",
                    &format!("t{}", o - 1),
                    &vocab,
                )
                .unwrap()
            })
            .collect();
        let ds = RelationDataset::new("R", RelationCategory::ManyToMany, train, vec![], vec![], true)
            .unwrap();
        let nb = NaiveBayesModel::fit([&ds], &vocab).unwrap();
        let fwd = Fact::new(
            &format!("t{} t{}", probe.0 - 1, probe.1 - 1),
            "R",
            "t7",
            &vocab,
        )
        .unwrap();
        let rev = Fact::new(
            &format!("t{} t{}", probe.1 - 1, probe.0 - 1),
            "R",
            "t7",
            &vocab,
        )
        .unwrap();
        prop_assert_eq!(nb.predict(&fwd).unwrap(), nb.predict(&rev).unwrap());
    }

    /// The partition is disjoint and covering, and adding a predictor can
    /// only grow the easy side.
    #[test]
    fn partition_disjoint_covering_monotone(
        correctness in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..25),
    ) {
        let vocab = small_vocab();
        let test: Vec<Fact> = (0..correctness.len())
            .map(|i| Fact::new(&format!("t{}", i % 8), &format!("R{i}"), "t0", &vocab).unwrap())
            .collect();
        let recs = |pick: fn(&(bool, bool)) -> bool| -> Vec<PredictionRecord> {
            test.iter()
                .zip(&correctness)
                .map(|(f, flags)| PredictionRecord {
                    relation: f.relation.clone(),
                    subject: f.subject.clone(),
                    object: f.object.clone(),
                    predicted: "t0".into(),
                    predicted_id: 1,
                    correct: pick(flags),
                    is_train_majority: false,
                })
                .collect()
        };
        let one = vec![("a".to_string(), recs(|f| f.0))];
        let two = vec![
            ("a".to_string(), recs(|f| f.0)),
            ("b".to_string(), recs(|f| f.1)),
        ];
        let p1 = build_partition(&test, &one).unwrap();
        let p2 = build_partition(&test, &two).unwrap();
        let all: BTreeSet<_> = test.iter().map(fact_key).collect();
        for p in [&p1, &p2] {
            prop_assert_eq!(p.easy.intersection(&p.hard).count(), 0);
            prop_assert_eq!(p.easy.union(&p.hard).cloned().collect::<BTreeSet<_>>(), all.clone());
        }
        prop_assert!(p1.easy.is_subset(&p2.easy));
    }

    /// Train/dev splitting partitions the input and is seed-deterministic.
    #[test]
    fn split_train_dev_partitions(n in 2..60usize, seed in any::<u64>()) {
        let vocab = small_vocab();
        let facts: Vec<Fact> = (0..n)
            .map(|i| Fact::new(&format!("t{}", i % 8), "R", "t0", &vocab).unwrap())
            .collect();
        let (tr1, dv1) = split_train_dev(facts.clone(), 0.25, seed).unwrap();
        let (tr2, dv2) = split_train_dev(facts.clone(), 0.25, seed).unwrap();
        prop_assert_eq!(&tr1, &tr2);
        prop_assert_eq!(&dv1, &dv2);
        prop_assert_eq!(tr1.len() + dv1.len(), facts.len());
        let mut rejoined = tr1;
        rejoined.extend(dv1);
        let count = |xs: &[Fact]| {
            let mut c = std::collections::BTreeMap::new();
            for f in xs {
                *c.entry(f.subject.clone()).or_insert(0usize) += 1;
            }
            c
        };
        prop_assert_eq!(count(&rejoined), count(&facts));
    }
}
