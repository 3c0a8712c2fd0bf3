//! The three trainers: dense-prompt optimization, discrete trigger search,
//! and full fine-tuning. All minimize the per-relation masked NLL
//! −(1/|D_r|) Σ log P([MASK]=o | prompt(s)) with Adam under a linear
//! warmup/decay schedule, select the dev-best epoch (ties toward the
//! earliest), and abort on non-finite loss rather than skipping batches.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Fact, RelationDataset, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::template_accuracy;
use crate::mlm::{MlmModel, Params};
use crate::prompts::{render, DenseTemplate, PromptTemplate, TriggerTemplate};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const FINETUNE_CLIP_NORM: f64 = 1.0;

/// Optimizer hyperparameters. The optimizer is always Adam; the schedule is
/// always linear warmup followed by linear decay to zero.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_ratio: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for dense-prompt training.
    pub fn dense_defaults() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 3e-3,
            batch_size: 16,
            warmup_ratio: 0.1,
            seed: 0,
        }
    }

    /// Defaults for full fine-tuning.
    pub fn finetune_defaults() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 2e-6,
            batch_size: 2,
            warmup_ratio: 0.1,
            seed: 0,
        }
    }

    /// Zero epochs is tolerated (the trainers return the init unchanged);
    /// everything else must be well-formed.
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Argument("warmup_ratio must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    /// NaN when the dev split is empty.
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
    /// Dev-accuracy argmax, ties toward the earliest epoch; last epoch when
    /// the dev split is empty; None for zero-epoch runs.
    pub selected_epoch: Option<usize>,
    pub wall_time_secs: f64,
}

impl TrainTrace {
    /// CSV dump (epoch, train_nll, dev_acc). Wall time is deliberately left
    /// out so reruns are byte-identical.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "epoch,train_nll,dev_acc").map_err(|e| Error::io(path, e))?;
        for e in &self.epochs {
            let dev = if e.dev_accuracy.is_nan() {
                String::new()
            } else {
                format!("{:.6}", e.dev_accuracy)
            };
            writeln!(file, "{},{:.6},{}", e.epoch, e.train_nll, dev)
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Adam with bias correction.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Adam {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grads[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

pub fn warmup_steps(total_steps: usize, warmup_ratio: f64) -> usize {
    (total_steps as f64 * warmup_ratio).round() as usize
}

/// Learning rate at 1-based step `t`: linear ramp to the base rate over the
/// warmup, then linear decay reaching exactly zero at the final step.
pub fn schedule_lr(base: f64, t: usize, total_steps: usize, warmup: usize) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    if warmup > 0 && t <= warmup {
        base * t as f64 / warmup as f64
    } else if total_steps > warmup {
        base * (total_steps - t) as f64 / (total_steps - warmup) as f64
    } else {
        base
    }
}

/// Mean NLL of the gold object over a set of facts, parameters fixed.
pub fn batch_nll(
    model: &MlmModel,
    template: &PromptTemplate,
    facts: &[Fact],
    vocab: &Vocabulary,
) -> Result<f64> {
    if facts.is_empty() {
        return Err(Error::EmptyTrain(template.relation().to_string()));
    }
    let mut total = 0.0;
    for fact in facts {
        let r = render(template, fact, model, vocab)?;
        let logits = model.forward_mask_logits(&r.input_vectors, r.mask_position)?;
        total += nll_from_logits(&logits, fact.object_id);
    }
    Ok(total / facts.len() as f64)
}

fn nll_from_logits(logits: &Array1<f64>, target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

fn non_finite(step: usize, epoch: usize, grad_norm: f64, lr: f64) -> Error {
    Error::NonFiniteLoss {
        step,
        epoch,
        grad_norm,
        lr,
    }
}

/// Tracks the dev-best snapshot. Strict improvement replaces, so ties keep
/// the earliest epoch; an empty dev split falls back to the latest epoch.
struct BestTracker<T> {
    best: Option<(usize, T)>,
    best_score: f64,
}

impl<T: Clone> BestTracker<T> {
    fn new() -> Self {
        BestTracker {
            best: None,
            best_score: f64::NEG_INFINITY,
        }
    }

    fn observe(&mut self, epoch: usize, dev_accuracy: f64, snapshot: &T) {
        if dev_accuracy.is_nan() {
            self.best = Some((epoch, snapshot.clone()));
        } else if dev_accuracy > self.best_score {
            self.best_score = dev_accuracy;
            self.best = Some((epoch, snapshot.clone()));
        }
    }
}

fn epoch_batches(
    n: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Train the dense vectors of a prompt; model parameters are never touched.
pub fn train_dense(
    model: &MlmModel,
    dataset: &RelationDataset,
    init: &DenseTemplate,
    config: &TrainConfig,
    vocab: &Vocabulary,
) -> Result<(DenseTemplate, TrainTrace)> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyTrain(dataset.relation.clone()));
    }
    let start = Instant::now();
    let dim = model.config.embed_dim;
    let m = init.m();
    if init.vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Argument(format!(
            "dense vectors have dimension {} but the model expects {dim}",
            init.vectors.first().map(|v| v.len()).unwrap_or(0)
        )));
    }
    if config.epochs == 0 || m == 0 {
        return Ok((
            init.clone(),
            TrainTrace {
                epochs: Vec::new(),
                selected_epoch: None,
                wall_time_secs: start.elapsed().as_secs_f64(),
            },
        ));
    }

    let mut tpl = init.clone();
    let mut flat: Vec<f64> = tpl.vectors.iter().flat_map(|v| v.iter().copied()).collect();
    let mut adam = Adam::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = dataset.train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let warmup = warmup_steps(total_steps, config.warmup_ratio);

    let mut trace = Vec::with_capacity(config.epochs);
    let mut tracker = BestTracker::new();
    let mut global_step = 0usize;
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in epoch_batches(n, config.batch_size, &mut rng) {
            global_step += 1;
            let lr = schedule_lr(config.learning_rate, global_step, total_steps, warmup);
            let mut grad = vec![0.0; flat.len()];
            let mut batch_loss = 0.0;
            for &idx in &batch {
                let fact = &dataset.train[idx];
                let r = render(&PromptTemplate::Dense(tpl.clone()), fact, model, vocab)?;
                let (loss, dinputs, _) =
                    model.nll_and_grads(&r.input_vectors, r.mask_position, fact.object_id, None)?;
                batch_loss += loss;
                for (i, &pos) in r.vector_slot_positions.iter().enumerate() {
                    for j in 0..dim {
                        grad[i * dim + j] += dinputs[[pos, j]];
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            grad.iter_mut().for_each(|g| *g *= scale);
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !batch_loss.is_finite() || !grad_norm.is_finite() {
                return Err(non_finite(global_step, epoch, grad_norm, lr));
            }
            epoch_loss += batch_loss * batch.len() as f64;
            adam.step(&mut flat, &grad, lr);
            for (i, v) in tpl.vectors.iter_mut().enumerate() {
                v.assign(&Array1::from_iter(flat[i * dim..(i + 1) * dim].iter().copied()));
            }
        }
        let train_nll = epoch_loss / n as f64;
        let dev_accuracy =
            template_accuracy(model, &PromptTemplate::Dense(tpl.clone()), &dataset.dev, vocab)?;
        trace.push(EpochStats {
            epoch,
            train_nll,
            dev_accuracy,
        });
        tracker.observe(epoch, dev_accuracy, &tpl);
    }

    let (selected, best_tpl) = tracker.best.expect("at least one epoch ran");
    Ok((
        best_tpl,
        TrainTrace {
            epochs: trace,
            selected_epoch: Some(selected),
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Knobs of the discrete trigger search.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SearchConfig {
    pub iterations: usize,
    pub candidates_per_step: usize,
    /// Token ids that may never be selected (gold objects, special tokens).
    pub banned: BTreeSet<usize>,
}

impl SearchConfig {
    pub fn new(candidates_per_step: usize, banned: BTreeSet<usize>) -> Self {
        SearchConfig {
            iterations: 1000,
            candidates_per_step,
            banned,
        }
    }
}

/// Gradient-guided trigger search: triggers start as mask tokens; each
/// iteration flips one round-robin position by first-order scoring every
/// allowed token and exactly re-scoring the top candidates on the batch.
pub fn train_trigger_search(
    model: &MlmModel,
    dataset: &RelationDataset,
    m: usize,
    config: &TrainConfig,
    search: &SearchConfig,
    vocab: &Vocabulary,
) -> Result<(TriggerTemplate, TrainTrace)> {
    config.validate()?;
    if m == 0 {
        return Err(Error::Argument("trigger search needs m ≥ 1".into()));
    }
    if search.candidates_per_step == 0 {
        return Err(Error::Argument("candidates_per_step must be ≥ 1".into()));
    }
    if dataset.train.is_empty() {
        return Err(Error::EmptyTrain(dataset.relation.clone()));
    }
    let pool: Vec<usize> = vocab
        .content_ids()
        .filter(|id| !search.banned.contains(id))
        .collect();
    if pool.is_empty() {
        return Err(Error::Search(
            "every candidate token is banned or special".into(),
        ));
    }

    let start = Instant::now();
    let mut triggers = vec![vocab.mask_id(); m];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = dataset.train.len();
    let mut queue: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(search.iterations);
    let mut tracker = BestTracker::new();

    for iter in 0..search.iterations {
        if queue.len() < config.batch_size.min(n) {
            queue = (0..n).collect();
            queue.shuffle(&mut rng);
        }
        let take = config.batch_size.min(queue.len());
        let batch: Vec<usize> = queue.split_off(queue.len() - take);
        let batch_facts: Vec<&Fact> = batch.iter().map(|&i| &dataset.train[i]).collect();
        let position = iter % m;

        let current = TriggerTemplate {
            relation: dataset.relation.clone(),
            trigger_ids: triggers.clone(),
        };
        let tpl = PromptTemplate::Trigger(current);
        let dim = model.config.embed_dim;
        let mut slot_grad = Array1::<f64>::zeros(dim);
        for fact in &batch_facts {
            let r = render(&tpl, fact, model, vocab)?;
            let slot = fact.subject_tokens.len() + position;
            let (loss, dinputs, _) =
                model.nll_and_grads(&r.input_vectors, r.mask_position, fact.object_id, None)?;
            if !loss.is_finite() {
                return Err(non_finite(iter + 1, 0, f64::NAN, 0.0));
            }
            slot_grad += &dinputs.row(slot);
        }
        slot_grad /= batch_facts.len() as f64;

        // First-order NLL change of swapping in token w differs from
        // E_w·ḡ by a constant, so ranking by the dot product suffices.
        let mut scored: Vec<(f64, usize)> = pool
            .iter()
            .map(|&id| (model.embedding(id).dot(&slot_grad), id))
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let shortlist: Vec<usize> = scored
            .iter()
            .take(search.candidates_per_step)
            .map(|&(_, id)| id)
            .collect();

        let mut exact: Vec<(f64, usize)> = Vec::new();
        let cur = triggers[position];
        if vocab.is_content(cur) && !search.banned.contains(&cur) {
            let nll = trigger_batch_nll(model, dataset, &triggers, &batch_facts, vocab)?;
            exact.push((nll, cur));
        }
        for &cand in &shortlist {
            if cand == cur && !exact.is_empty() {
                continue;
            }
            let mut t = triggers.clone();
            t[position] = cand;
            let nll = trigger_batch_nll(model, dataset, &t, &batch_facts, vocab)?;
            exact.push((nll, cand));
        }
        exact.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let (best_nll, best_token) = exact[0];
        if !best_nll.is_finite() {
            return Err(non_finite(iter + 1, 0, f64::NAN, 0.0));
        }
        triggers[position] = best_token;

        let snapshot = TriggerTemplate {
            relation: dataset.relation.clone(),
            trigger_ids: triggers.clone(),
        };
        let dev_accuracy = template_accuracy(
            model,
            &PromptTemplate::Trigger(snapshot.clone()),
            &dataset.dev,
            vocab,
        )?;
        trace.push(EpochStats {
            epoch: iter,
            train_nll: best_nll,
            dev_accuracy,
        });
        tracker.observe(iter, dev_accuracy, &snapshot);
    }

    let (selected, best) = match tracker.best {
        Some((e, t)) => (Some(e), t),
        None => (
            None,
            TriggerTemplate {
                relation: dataset.relation.clone(),
                trigger_ids: triggers,
            },
        ),
    };
    Ok((
        best,
        TrainTrace {
            epochs: trace,
            selected_epoch: selected,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

fn trigger_batch_nll(
    model: &MlmModel,
    dataset: &RelationDataset,
    triggers: &[usize],
    batch: &[&Fact],
    vocab: &Vocabulary,
) -> Result<f64> {
    let tpl = PromptTemplate::Trigger(TriggerTemplate {
        relation: dataset.relation.clone(),
        trigger_ids: triggers.to_vec(),
    });
    let mut total = 0.0;
    for fact in batch {
        let r = render(&tpl, fact, model, vocab)?;
        let logits = model.forward_mask_logits(&r.input_vectors, r.mask_position)?;
        total += nll_from_logits(&logits, fact.object_id);
    }
    Ok(total / batch.len() as f64)
}

/// Fine-tune every model parameter on the relation's training split,
/// clipping gradients at global norm 1.0.
pub fn finetune(
    model: &MlmModel,
    dataset: &RelationDataset,
    template: &PromptTemplate,
    config: &TrainConfig,
    vocab: &Vocabulary,
) -> Result<(MlmModel, TrainTrace)> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyTrain(dataset.relation.clone()));
    }
    let start = Instant::now();
    let mut work = model.clone();
    if config.epochs == 0 {
        return Ok((
            work,
            TrainTrace {
                epochs: Vec::new(),
                selected_epoch: None,
                wall_time_secs: start.elapsed().as_secs_f64(),
            },
        ));
    }
    let mut flat = work.params.to_flat();
    let mut adam = Adam::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = dataset.train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let warmup = warmup_steps(total_steps, config.warmup_ratio);

    let mut trace = Vec::with_capacity(config.epochs);
    let mut tracker: BestTracker<Vec<f64>> = BestTracker::new();
    let mut global_step = 0usize;
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in epoch_batches(n, config.batch_size, &mut rng) {
            global_step += 1;
            let lr = schedule_lr(config.learning_rate, global_step, total_steps, warmup);
            let mut grad = vec![0.0; flat.len()];
            let mut batch_loss = 0.0;
            for &idx in &batch {
                let fact = &dataset.train[idx];
                let r = render(template, fact, &work, vocab)?;
                let (loss, _, pgrads) = work.nll_and_grads(
                    &r.input_vectors,
                    r.mask_position,
                    fact.object_id,
                    Some(&r.token_ids),
                )?;
                batch_loss += loss;
                let gflat = pgrads.expect("param grads requested").to_flat();
                for (g, x) in grad.iter_mut().zip(gflat) {
                    *g += x;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            grad.iter_mut().for_each(|g| *g *= scale);
            let mut grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !batch_loss.is_finite() || !grad_norm.is_finite() {
                return Err(non_finite(global_step, epoch, grad_norm, lr));
            }
            if grad_norm > FINETUNE_CLIP_NORM {
                let s = FINETUNE_CLIP_NORM / grad_norm;
                grad.iter_mut().for_each(|g| *g *= s);
                grad_norm = FINETUNE_CLIP_NORM;
            }
            let _ = grad_norm;
            epoch_loss += batch_loss * batch.len() as f64;
            adam.step(&mut flat, &grad, lr);
            work.params = Params::from_flat(&work.config, &flat)?;
        }
        let train_nll = epoch_loss / n as f64;
        let dev_accuracy = template_accuracy(&work, template, &dataset.dev, vocab)?;
        trace.push(EpochStats {
            epoch,
            train_nll,
            dev_accuracy,
        });
        tracker.observe(epoch, dev_accuracy, &flat);
    }

    let (selected, best_flat) = tracker.best.expect("at least one epoch ran");
    work.params = Params::from_flat(&work.config, &best_flat)?;
    Ok((
        work,
        TrainTrace {
            epochs: trace,
            selected_epoch: Some(selected),
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}
