//! Instruction tokenizer/embedding and the feature-fusion decoder: per layer,
//! a tanh-gated cross-attention from language tokens onto the fused visual
//! tokens, then a frozen residual self-attention block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mlp, ModelConfig};
use crate::numerics::{Graph, ParamSet, Tensor, Var};

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

/// Closed word list; index is the token id and id 0 is reserved for unknowns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    /// Builds a sorted vocabulary from every word appearing in `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = std::collections::BTreeSet::new();
        for t in texts {
            set.extend(split_words(t));
        }
        set.remove(UNK);
        let mut words = vec![UNK.to_string()];
        words.extend(set);
        Self { words }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Vocabulary = serde_json::from_str(s)?;
        if v.words.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Contract("vocabulary must start with <unk>".into()));
        }
        Ok(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("list of strings")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.words[1..]
            .binary_search_by(|w| w.as_str().cmp(word))
            .map_or(UNK_ID, |i| i + 1)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let ids: Vec<usize> = split_words(text).map(|w| self.id(&w)).collect();
        if ids.is_empty() {
            return Err(Error::EmptyInstruction);
        }
        Ok(ids)
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation() && c != '<' && c != '>').to_lowercase())
        .filter(|w| !w.is_empty())
}

/// Instruction text with its token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Instruction {
    pub text: String,
    pub ids: Vec<usize>,
}

impl Instruction {
    pub fn new(text: &str, vocab: &Vocabulary) -> Result<Self> {
        Ok(Self {
            text: text.to_string(),
            ids: vocab.tokenize(text)?,
        })
    }
}

/// Rows of the frozen embedding table, one per token.
pub fn embed_instruction(ids: &[usize], ps: &ParamSet) -> Result<Tensor> {
    let table = ps.value("decoder.embed")?;
    if ids.is_empty() {
        return Err(Error::EmptyInstruction);
    }
    let d = table.cols();
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= table.rows() {
            return Err(Error::Contract(format!("token id {id} outside embedding table of {}", table.rows())));
        }
        data.extend_from_slice(table.row(id));
    }
    Tensor::matrix(ids.len(), d, data)
}

fn attention_block(g: &mut Graph, ps: &ParamSet, prefix: &str, queries: Var, context: Var) -> Result<Var> {
    let wq = g.param(ps, &format!("{prefix}.wq"))?;
    let wk = g.param(ps, &format!("{prefix}.wk"))?;
    let wv = g.param(ps, &format!("{prefix}.wv"))?;
    if g.value(queries).cols() != g.value(wq).rows() || g.value(context).cols() != g.value(wk).rows() {
        return Err(Error::dim(
            "attention_block",
            g.shape(queries),
            g.shape(context),
        ));
    }
    let q = g.matmul(queries, wq)?;
    let k = g.matmul(context, wk)?;
    let v = g.matmul(context, wv)?;
    g.attention(q, k, v)
}

/// `tanh(α)·MLP(A(X_l·W_Q, X_vde·W_K, X_vde·W_V)) + X_l`.
pub fn gated_cross_attention(g: &mut Graph, ps: &ParamSet, layer: usize, xl: Var, xvde: Var) -> Result<Var> {
    let a = attention_block(g, ps, &format!("decoder.{layer}.cross"), xl, xvde)?;
    let branch = mlp(g, ps, &format!("decoder.{layer}.cross_mlp"), a)?;
    let alpha = g.param(ps, &format!("decoder.{layer}.cross.alpha"))?;
    let gate = g.tanh(alpha);
    let gated = g.scale_by(branch, gate)?;
    g.add(gated, xl)
}

/// `MLP(A(X̂·W_Q, X̂·W_K, X̂·W_V)) + X̂` with frozen weights.
pub fn self_attention_block(g: &mut Graph, ps: &ParamSet, layer: usize, xhat: Var) -> Result<Var> {
    let a = attention_block(g, ps, &format!("decoder.{layer}.self"), xhat, xhat)?;
    let branch = mlp(g, ps, &format!("decoder.{layer}.self_mlp"), a)?;
    g.add(branch, xhat)
}

/// Applies every decoder layer (cross then self) in order.
pub fn decode(g: &mut Graph, ps: &ParamSet, cfg: &ModelConfig, x: Var, xvde: Var) -> Result<Var> {
    if cfg.decoder_layers == 0 {
        return Err(Error::Contract("decoder needs at least one layer".into()));
    }
    let mut h = x;
    for l in 0..cfg.decoder_layers {
        h = gated_cross_attention(g, ps, l, h, xvde)?;
        h = self_attention_block(g, ps, l, h)?;
    }
    Ok(h)
}
