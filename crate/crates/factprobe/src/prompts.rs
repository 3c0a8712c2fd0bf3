//! Prompt representations and rendering.
//!
//! Three template kinds share one rendering path: manual token templates,
//! discrete trigger templates with the fixed layout `[X] [T]₁…[T]_m [MASK]`,
//! and dense templates whose free vectors live directly in the input
//! embedding space. Dense slots bypass the embedding lookup; every other
//! slot is embedded through the model's input embedding matrix. Positional
//! embeddings are added by the model itself, identically for all slots.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Fact, Vocabulary};
use crate::error::{Error, Result};
use crate::mlm::{MlmModel, INIT_STD};

/// One slot of a manual template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternToken {
    Subject,
    Mask,
    Token(usize),
}

/// One slot of a dense template layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Subject,
    Mask,
    Vector(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManualTemplate {
    pub relation: String,
    pub pattern: Vec<PatternToken>,
}

impl ManualTemplate {
    /// Parse a template string like `[X] was born in [MASK]`. All tokens
    /// besides the two markers must be vocabulary entries.
    pub fn parse(relation: &str, text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut pattern = Vec::new();
        for piece in text.split_whitespace() {
            let tok = match piece {
                "[X]" => PatternToken::Subject,
                "[MASK]" => PatternToken::Mask,
                other => match vocab.id(other) {
                    Some(id) if vocab.is_content(id) => PatternToken::Token(id),
                    _ => return Err(Error::UnknownToken(other.to_string())),
                },
            };
            pattern.push(tok);
        }
        let template = ManualTemplate {
            relation: relation.to_string(),
            pattern,
        };
        template.validate()?;
        Ok(template)
    }

    fn validate(&self) -> Result<()> {
        let subjects = self
            .pattern
            .iter()
            .filter(|t| matches!(t, PatternToken::Subject))
            .count();
        let masks = self
            .pattern
            .iter()
            .filter(|t| matches!(t, PatternToken::Mask))
            .count();
        if subjects != 1 || masks != 1 {
            return Err(Error::Argument(format!(
                "template for {} must contain exactly one [X] and one [MASK] (found {subjects}/{masks})",
                self.relation
            )));
        }
        Ok(())
    }

    pub fn render_string(&self, vocab: &Vocabulary) -> String {
        self.pattern
            .iter()
            .map(|t| match t {
                PatternToken::Subject => "[X]".to_string(),
                PatternToken::Mask => "[MASK]".to_string(),
                PatternToken::Token(id) => vocab.token(*id).to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerTemplate {
    pub relation: String,
    pub trigger_ids: Vec<usize>,
}

impl TriggerTemplate {
    pub fn new(relation: &str, trigger_ids: Vec<usize>) -> Result<Self> {
        if trigger_ids.is_empty() {
            return Err(Error::Argument("trigger templates need m ≥ 1".into()));
        }
        Ok(TriggerTemplate {
            relation: relation.to_string(),
            trigger_ids,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTemplate {
    pub relation: String,
    pub vectors: Vec<Array1<f64>>,
    pub layout: Vec<Slot>,
}

impl DenseTemplate {
    pub fn new(relation: &str, vectors: Vec<Array1<f64>>, layout: Vec<Slot>) -> Result<Self> {
        let t = DenseTemplate {
            relation: relation.to_string(),
            vectors,
            layout,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let subjects = self
            .layout
            .iter()
            .filter(|s| matches!(s, Slot::Subject))
            .count();
        let masks = self.layout.iter().filter(|s| matches!(s, Slot::Mask)).count();
        if subjects != 1 || masks != 1 {
            return Err(Error::Argument(
                "dense layout must contain exactly one subject and one mask slot".into(),
            ));
        }
        let mut seen = vec![0usize; self.vectors.len()];
        for slot in &self.layout {
            if let Slot::Vector(i) = slot {
                if *i >= self.vectors.len() {
                    return Err(Error::Argument(format!("layout names vector {i} but m = {}", self.vectors.len())));
                }
                seen[*i] += 1;
            }
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(Error::Argument(
                "each dense vector must appear exactly once in the layout".into(),
            ));
        }
        let dims: Vec<usize> = self.vectors.iter().map(|v| v.len()).collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Argument("dense vectors differ in dimension".into()));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.vectors.len()
    }
}

/// Any of the three prompt kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptTemplate {
    Manual(ManualTemplate),
    Trigger(TriggerTemplate),
    Dense(DenseTemplate),
}

impl PromptTemplate {
    pub fn relation(&self) -> &str {
        match self {
            PromptTemplate::Manual(t) => &t.relation,
            PromptTemplate::Trigger(t) => &t.relation,
            PromptTemplate::Dense(t) => &t.relation,
        }
    }
}

/// A prompt instantiated for one fact: raw input vectors ready for the
/// model, with bookkeeping for the mask and dense-vector positions.
#[derive(Debug, Clone)]
pub struct RenderedPrompt {
    pub input_vectors: Array2<f64>,
    /// Token id per position; `None` marks injected dense vectors.
    pub token_ids: Vec<Option<usize>>,
    pub mask_position: usize,
    /// Position of dense vector i in the rendered sequence.
    pub vector_slot_positions: Vec<usize>,
}

fn push_token(
    rows: &mut Vec<Array1<f64>>,
    ids: &mut Vec<Option<usize>>,
    model: &MlmModel,
    id: usize,
) {
    rows.push(model.embedding(id).to_owned());
    ids.push(Some(id));
}

/// Instantiate a template for one fact. Multi-token subjects occupy
/// consecutive slots.
pub fn render(
    template: &PromptTemplate,
    fact: &Fact,
    model: &MlmModel,
    vocab: &Vocabulary,
) -> Result<RenderedPrompt> {
    let mut rows: Vec<Array1<f64>> = Vec::new();
    let mut ids: Vec<Option<usize>> = Vec::new();
    let mut mask_position = None;
    let mut vector_positions: Vec<(usize, usize)> = Vec::new();

    let subject = |rows: &mut Vec<Array1<f64>>, ids: &mut Vec<Option<usize>>| {
        for &t in &fact.subject_tokens {
            push_token(rows, ids, model, t);
        }
    };

    match template {
        PromptTemplate::Manual(t) => {
            for tok in &t.pattern {
                match tok {
                    PatternToken::Subject => subject(&mut rows, &mut ids),
                    PatternToken::Mask => {
                        mask_position = Some(rows.len());
                        push_token(&mut rows, &mut ids, model, vocab.mask_id());
                    }
                    PatternToken::Token(id) => push_token(&mut rows, &mut ids, model, *id),
                }
            }
        }
        PromptTemplate::Trigger(t) => {
            subject(&mut rows, &mut ids);
            for &trig in &t.trigger_ids {
                push_token(&mut rows, &mut ids, model, trig);
            }
            mask_position = Some(rows.len());
            push_token(&mut rows, &mut ids, model, vocab.mask_id());
        }
        PromptTemplate::Dense(t) => {
            for slot in &t.layout {
                match slot {
                    Slot::Subject => subject(&mut rows, &mut ids),
                    Slot::Mask => {
                        mask_position = Some(rows.len());
                        push_token(&mut rows, &mut ids, model, vocab.mask_id());
                    }
                    Slot::Vector(i) => {
                        vector_positions.push((*i, rows.len()));
                        rows.push(t.vectors[*i].clone());
                        ids.push(None);
                    }
                }
            }
        }
    }

    let mask_position = mask_position.expect("validated templates contain a mask");
    let len = rows.len();
    if len > model.config.max_seq_len {
        return Err(Error::Render {
            relation: fact.relation.clone(),
            subject: fact.subject.clone(),
            message: format!(
                "rendered length {len} exceeds max_seq_len {}",
                model.config.max_seq_len
            ),
        });
    }
    let dim = model.config.embed_dim;
    let mut input_vectors = Array2::zeros((len, dim));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::Render {
                relation: fact.relation.clone(),
                subject: fact.subject.clone(),
                message: format!("vector dim {} does not match model dim {dim}", row.len()),
            });
        }
        input_vectors.row_mut(i).assign(row);
    }
    vector_positions.sort_unstable();
    Ok(RenderedPrompt {
        input_vectors,
        token_ids: ids,
        mask_position,
        vector_slot_positions: vector_positions.into_iter().map(|(_, p)| p).collect(),
    })
}

/// Convert a manual template into a dense one, copying the input embedding
/// of every content token into the corresponding vector slot. Before any
/// training step the dense copy renders to identical logits.
pub fn dense_from_manual(manual: &ManualTemplate, model: &MlmModel) -> Result<DenseTemplate> {
    let mut layout = Vec::with_capacity(manual.pattern.len());
    let mut vectors = Vec::new();
    for tok in &manual.pattern {
        match tok {
            PatternToken::Subject => layout.push(Slot::Subject),
            PatternToken::Mask => layout.push(Slot::Mask),
            PatternToken::Token(id) => {
                if *id >= model.config.vocab_size {
                    return Err(Error::UnknownToken(format!("token id {id}")));
                }
                layout.push(Slot::Vector(vectors.len()));
                vectors.push(model.embedding(*id).to_owned());
            }
        }
    }
    DenseTemplate::new(&manual.relation, vectors, layout)
}

/// Randomly initialized dense template with the fixed layout
/// `[X] [V]₁…[V]_m [MASK]`.
pub fn dense_random(relation: &str, m: usize, embed_dim: usize, seed: u64) -> Result<DenseTemplate> {
    if m == 0 {
        return Err(Error::Argument("dense_random requires m ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).unwrap();
    let vectors: Vec<Array1<f64>> = (0..m)
        .map(|_| Array1::from_shape_fn(embed_dim, |_| normal.sample(&mut rng)))
        .collect();
    let mut layout = vec![Slot::Subject];
    layout.extend((0..m).map(Slot::Vector));
    layout.push(Slot::Mask);
    DenseTemplate::new(relation, vectors, layout)
}

#[derive(Debug, Serialize, Deserialize)]
struct PromptLine {
    relation: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    template: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    layout: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    /// Base64 of the little-endian f64 vector data, row per vector.
    #[serde(skip_serializing_if = "Option::is_none")]
    vectors: Option<String>,
}

fn slot_name(slot: &Slot) -> String {
    match slot {
        Slot::Subject => "subject".to_string(),
        Slot::Mask => "mask".to_string(),
        Slot::Vector(i) => format!("v{i}"),
    }
}

fn parse_slot(name: &str) -> Result<Slot> {
    match name {
        "subject" => Ok(Slot::Subject),
        "mask" => Ok(Slot::Mask),
        other => other
            .strip_prefix('v')
            .and_then(|n| n.parse::<usize>().ok())
            .map(Slot::Vector)
            .ok_or_else(|| Error::Argument(format!("bad layout slot {other:?}"))),
    }
}

/// Write one prompt per line. Dense vectors are stored in full precision so
/// reloads render bit-identical logits.
pub fn save_prompts(
    path: impl AsRef<Path>,
    prompts: &BTreeMap<String, PromptTemplate>,
    vocab: &Vocabulary,
) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (relation, prompt) in prompts {
        let line = match prompt {
            PromptTemplate::Manual(t) => PromptLine {
                relation: relation.clone(),
                kind: "manual".into(),
                template: Some(t.render_string(vocab)),
                tokens: None,
                layout: None,
                dim: None,
                vectors: None,
            },
            PromptTemplate::Trigger(t) => PromptLine {
                relation: relation.clone(),
                kind: "trigger".into(),
                template: None,
                tokens: Some(
                    t.trigger_ids
                        .iter()
                        .map(|&id| vocab.token(id).to_string())
                        .collect(),
                ),
                layout: None,
                dim: None,
                vectors: None,
            },
            PromptTemplate::Dense(t) => {
                let dim = t.vectors.first().map(|v| v.len()).unwrap_or(0);
                let mut bytes = Vec::with_capacity(t.vectors.len() * dim * 8);
                for v in &t.vectors {
                    for x in v {
                        bytes.extend_from_slice(&x.to_le_bytes());
                    }
                }
                PromptLine {
                    relation: relation.clone(),
                    kind: "dense".into(),
                    template: None,
                    tokens: None,
                    layout: Some(t.layout.iter().map(slot_name).collect()),
                    dim: Some(dim),
                    vectors: Some(B64.encode(bytes)),
                }
            }
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

pub fn load_prompts(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
) -> Result<BTreeMap<String, PromptTemplate>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PromptLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let prompt = match parsed.kind.as_str() {
            "manual" => {
                let template = parsed
                    .template
                    .ok_or_else(|| Error::Argument("manual prompt without template".into()))?;
                PromptTemplate::Manual(ManualTemplate::parse(&parsed.relation, &template, vocab)?)
            }
            "trigger" => {
                let tokens = parsed
                    .tokens
                    .ok_or_else(|| Error::Argument("trigger prompt without tokens".into()))?;
                let ids = tokens
                    .iter()
                    .map(|t| vocab.id(t).ok_or_else(|| Error::UnknownToken(t.clone())))
                    .collect::<Result<Vec<_>>>()?;
                PromptTemplate::Trigger(TriggerTemplate::new(&parsed.relation, ids)?)
            }
            "dense" => {
                let layout = parsed
                    .layout
                    .ok_or_else(|| Error::Argument("dense prompt without layout".into()))?
                    .iter()
                    .map(|s| parse_slot(s))
                    .collect::<Result<Vec<_>>>()?;
                let dim = parsed
                    .dim
                    .ok_or_else(|| Error::Argument("dense prompt without dim".into()))?;
                let bytes = B64
                    .decode(parsed.vectors.unwrap_or_default())
                    .map_err(|e| Error::Argument(format!("bad vector blob: {e}")))?;
                if dim == 0 || bytes.len() % (dim * 8) != 0 {
                    return Err(Error::Argument("vector blob size mismatch".into()));
                }
                let vectors: Vec<Array1<f64>> = bytes
                    .chunks_exact(dim * 8)
                    .map(|chunk| {
                        Array1::from_iter(
                            chunk
                                .chunks_exact(8)
                                .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
                        )
                    })
                    .collect();
                PromptTemplate::Dense(DenseTemplate::new(&parsed.relation, vectors, layout)?)
            }
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("unknown prompt kind {other:?}"),
                })
            }
        };
        out.insert(parsed.relation, prompt);
    }
    Ok(out)
}
