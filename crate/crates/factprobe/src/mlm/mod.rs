//! The built-in masked language model: a small pre-norm transformer encoder
//! with GELU feed-forward blocks, learned positional embeddings, and an
//! output head tied to the input embedding matrix.
//!
//! Forward and backward passes are hand-derived for this fixed architecture;
//! finite-difference oracles in the test suite certify the gradients.

mod net;

pub use net::{grad_wrt_inputs, grad_wrt_params, log_softmax, softmax, ForwardCache};

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Standard deviation of the random init distribution for weight tensors.
pub const INIT_STD: f64 = 0.02;
/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.num_layers == 0
            || self.num_heads == 0
            || self.ffn_dim == 0
            || self.max_seq_len == 0
            || self.vocab_size == 0
        {
            return Err(Error::Argument("all model dimensions must be ≥ 1".into()));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Argument(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    fn zeros(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2: LayerNorm,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Every learned tensor of the model. The output projection is the input
/// embedding matrix itself (weight tying); only `out_bias` is head-specific.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embeddings: Array2<f64>,
    pub positional: Array2<f64>,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub out_bias: Array1<f64>,
}

/// How a tensor is initialized under the random regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitKind {
    /// Drawn from N(0, INIT_STD).
    Weight,
    /// Zero at init (biases, layer-norm shifts).
    Zero,
    /// One at init (layer-norm gains).
    One,
}

/// Canonical tensor ordering shared by flattening, checkpoints, and random
/// initialization.
fn tensor_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>, InitKind)> {
    let d = config.embed_dim;
    let f = config.ffn_dim;
    let mut specs = vec![
        (
            "embeddings".to_string(),
            vec![config.vocab_size, d],
            InitKind::Weight,
        ),
        (
            "positional".to_string(),
            vec![config.max_seq_len, d],
            InitKind::Weight,
        ),
    ];
    for i in 0..config.num_layers {
        let p = |name: &str| format!("block{i}.{name}");
        specs.push((p("ln1.gamma"), vec![d], InitKind::One));
        specs.push((p("ln1.beta"), vec![d], InitKind::Zero));
        for w in ["wq", "wk", "wv", "wo"] {
            specs.push((p(w), vec![d, d], InitKind::Weight));
            specs.push((p(&w.replace('w', "b")), vec![d], InitKind::Zero));
        }
        specs.push((p("ln2.gamma"), vec![d], InitKind::One));
        specs.push((p("ln2.beta"), vec![d], InitKind::Zero));
        specs.push((p("w1"), vec![d, f], InitKind::Weight));
        specs.push((p("b1"), vec![f], InitKind::Zero));
        specs.push((p("w2"), vec![f, d], InitKind::Weight));
        specs.push((p("b2"), vec![d], InitKind::Zero));
    }
    specs.push(("ln_f.gamma".to_string(), vec![d], InitKind::One));
    specs.push(("ln_f.beta".to_string(), vec![d], InitKind::Zero));
    specs.push((
        "out_bias".to_string(),
        vec![config.vocab_size],
        InitKind::Zero,
    ));
    specs
}

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.embed_dim;
        let f = config.ffn_dim;
        let block = || Block {
            ln1: LayerNorm::zeros(d),
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            wk: Array2::zeros((d, d)),
            bk: Array1::zeros(d),
            wv: Array2::zeros((d, d)),
            bv: Array1::zeros(d),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            ln2: LayerNorm::zeros(d),
            w1: Array2::zeros((d, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, d)),
            b2: Array1::zeros(d),
        };
        Params {
            embeddings: Array2::zeros((config.vocab_size, d)),
            positional: Array2::zeros((config.max_seq_len, d)),
            blocks: (0..config.num_layers).map(|_| block()).collect(),
            ln_f: LayerNorm::zeros(d),
            out_bias: Array1::zeros(config.vocab_size),
        }
    }

    /// All tensors in canonical order, flattened row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(|tensor| out.extend_from_slice(tensor));
        out
    }

    fn visit(&self, mut f: impl FnMut(&[f64])) {
        let slice = |a: &Array2<f64>| a.as_standard_layout().as_slice().unwrap().to_vec();
        f(&slice(&self.embeddings));
        f(&slice(&self.positional));
        for b in &self.blocks {
            f(b.ln1.gamma.as_slice().unwrap());
            f(b.ln1.beta.as_slice().unwrap());
            f(&slice(&b.wq));
            f(b.bq.as_slice().unwrap());
            f(&slice(&b.wk));
            f(b.bk.as_slice().unwrap());
            f(&slice(&b.wv));
            f(b.bv.as_slice().unwrap());
            f(&slice(&b.wo));
            f(b.bo.as_slice().unwrap());
            f(b.ln2.gamma.as_slice().unwrap());
            f(b.ln2.beta.as_slice().unwrap());
            f(&slice(&b.w1));
            f(b.b1.as_slice().unwrap());
            f(&slice(&b.w2));
            f(b.b2.as_slice().unwrap());
        }
        f(self.ln_f.gamma.as_slice().unwrap());
        f(self.ln_f.beta.as_slice().unwrap());
        f(self.out_bias.as_slice().unwrap());
    }

    pub fn from_flat(config: &ModelConfig, flat: &[f64]) -> Result<Self> {
        let specs = tensor_specs(config);
        let expected: usize = specs.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
        if flat.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameters, got {}",
                flat.len()
            )));
        }
        let mut offset = 0usize;
        let mut take1 = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let chunk = &flat[offset..offset + n];
            offset += n;
            chunk.to_vec()
        };
        let d = config.embed_dim;
        let f = config.ffn_dim;
        let a2 = |v: Vec<f64>, r: usize, c: usize| Array2::from_shape_vec((r, c), v).unwrap();
        let a1 = Array1::from_vec;
        let embeddings = a2(take1(&[config.vocab_size, d]), config.vocab_size, d);
        let positional = a2(take1(&[config.max_seq_len, d]), config.max_seq_len, d);
        let mut blocks = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            blocks.push(Block {
                ln1: LayerNorm {
                    gamma: a1(take1(&[d])),
                    beta: a1(take1(&[d])),
                },
                wq: a2(take1(&[d, d]), d, d),
                bq: a1(take1(&[d])),
                wk: a2(take1(&[d, d]), d, d),
                bk: a1(take1(&[d])),
                wv: a2(take1(&[d, d]), d, d),
                bv: a1(take1(&[d])),
                wo: a2(take1(&[d, d]), d, d),
                bo: a1(take1(&[d])),
                ln2: LayerNorm {
                    gamma: a1(take1(&[d])),
                    beta: a1(take1(&[d])),
                },
                w1: a2(take1(&[d, f]), d, f),
                b1: a1(take1(&[f])),
                w2: a2(take1(&[f, d]), f, d),
                b2: a1(take1(&[d])),
            });
        }
        let ln_f = LayerNorm {
            gamma: a1(take1(&[d])),
            beta: a1(take1(&[d])),
        };
        let out_bias = a1(take1(&[config.vocab_size]));
        Ok(Params {
            embeddings,
            positional,
            blocks,
            ln_f,
            out_bias,
        })
    }

    pub fn num_params(config: &ModelConfig) -> usize {
        tensor_specs(config)
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }

    /// Euclidean norm over every tensor.
    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        self.visit(|t| acc += t.iter().map(|x| x * x).sum::<f64>());
        acc.sqrt()
    }
}

/// Source of the retained parameters for the embeddings-only reinit control.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum BaseSource {
    Checkpoint(PathBuf),
    Seed(u64),
}

/// The three initialization regimes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InitRegime {
    FromCheckpoint(PathBuf),
    RandomModel { seed: u64 },
    /// Keep transformer blocks from `base`; redraw the input embeddings and
    /// (through weight tying) the classifier head.
    RandomEmbeddings { base: BaseSource, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct MlmModel {
    pub config: ModelConfig,
    pub params: Params,
}

fn random_params(config: &ModelConfig, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).unwrap();
    let mut flat = Vec::with_capacity(Params::num_params(config));
    for (_, shape, kind) in tensor_specs(config) {
        let n: usize = shape.iter().product();
        match kind {
            InitKind::Weight => flat.extend((0..n).map(|_| normal.sample(&mut rng))),
            InitKind::Zero => flat.extend(std::iter::repeat(0.0).take(n)),
            InitKind::One => flat.extend(std::iter::repeat(1.0).take(n)),
        }
    }
    Params::from_flat(config, &flat).expect("sized by construction")
}

/// Build a model under the given regime.
pub fn init_model(config: &ModelConfig, regime: &InitRegime) -> Result<MlmModel> {
    config.validate()?;
    match regime {
        InitRegime::FromCheckpoint(path) => {
            let model = load_checkpoint(path)?;
            if model.config != *config {
                return Err(Error::Checkpoint(format!(
                    "checkpoint config {:?} does not match requested config",
                    model.config
                )));
            }
            Ok(model)
        }
        InitRegime::RandomModel { seed } => Ok(MlmModel {
            config: *config,
            params: random_params(config, *seed),
        }),
        InitRegime::RandomEmbeddings { base, seed } => {
            let mut model = match base {
                BaseSource::Seed(base_seed) => init_model(
                    config,
                    &InitRegime::RandomModel { seed: *base_seed },
                )?,
                BaseSource::Checkpoint(path) => {
                    init_model(config, &InitRegime::FromCheckpoint(path.clone()))?
                }
            };
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let normal = Normal::new(0.0, INIT_STD).unwrap();
            model
                .params
                .embeddings
                .mapv_inplace(|_| normal.sample(&mut rng));
            // head bias resets to its init value along with the tied head
            model.params.out_bias.fill(0.0);
            Ok(MlmModel {
                config: *config,
                params: model.params,
            })
        }
    }
}

impl MlmModel {
    /// Embedding row for a token id.
    pub fn embedding(&self, token_id: usize) -> ndarray::ArrayView1<'_, f64> {
        self.params.embeddings.row(token_id)
    }
}

/// SHA-256 over the flattened parameter bytes; used to assert that prompt
/// training leaves the model untouched.
pub fn param_hash(model: &MlmModel) -> String {
    let mut hasher = Sha256::new();
    for x in model.params.to_flat() {
        hasher.update(x.to_le_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// Write a checkpoint: `<path>` is the JSON manifest, the flat tensor blob
/// goes to the sibling file with extension `.bin`.
pub fn save_checkpoint(model: &MlmModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blob_path = path.with_extension("bin");
    let mut tensors = Vec::new();
    let mut offset = 0usize;
    for (name, shape, _) in tensor_specs(&model.config) {
        let n: usize = shape.iter().product();
        tensors.push(TensorEntry {
            name,
            shape,
            offset,
        });
        offset += n;
    }
    let manifest = Manifest {
        config: model.config,
        dtype: "f64-le".to_string(),
        tensors,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let flat = model.params.to_flat();
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for x in flat {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(&blob_path, bytes).map_err(|e| Error::io(&blob_path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlmModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if manifest.dtype != "f64-le" {
        return Err(Error::Checkpoint(format!(
            "unsupported dtype {}",
            manifest.dtype
        )));
    }
    let expected = tensor_specs(&manifest.config);
    if manifest.tensors.len() != expected.len() {
        return Err(Error::Checkpoint("tensor list does not match config".into()));
    }
    for (entry, (name, shape, _)) in manifest.tensors.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, expected {:?} for {}",
                entry.name, entry.shape, shape, name
            )));
        }
    }
    let blob_path = path.with_extension("bin");
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let n = Params::num_params(&manifest.config);
    if bytes.len() != n * 8 {
        return Err(Error::Checkpoint(format!(
            "blob holds {} bytes, expected {}",
            bytes.len(),
            n * 8
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(MlmModel {
        config: manifest.config,
        params: Params::from_flat(&manifest.config, &flat)?,
    })
}
