//! Model configuration, parameter layout and initialisation.
//!
//! Parameter names are dotted paths grouped by stage:
//! `vit.*` (frozen), `resampler.{shared|rgb|depth}.*`, `decoder.embed`
//! (frozen), `decoder.<layer>.{cross,cross_mlp}.*` (trainable),
//! `decoder.<layer>.{self,self_mlp}.*` (frozen) and `head.*`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::depth::DepthStats;
use crate::error::{Error, Result};
use crate::fusion::Vocabulary;
use crate::numerics::{Graph, ParamSet, Tensor, Var};

/// What the depth cameras feed into the encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthInput {
    #[default]
    Sensor,
    /// Depth frames replaced by a constant plane (RGB-only baseline).
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub latents: usize,
    pub vit_depth: usize,
    pub decoder_layers: usize,
    pub lstm_layers: usize,
    pub lstm_width: usize,
    pub mlp_ratio: usize,
    pub head_hidden: usize,
    pub clip_bound: f64,
    pub sep_resampler: bool,
    pub depth_input: DepthInput,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch: 8,
            dim: 64,
            latents: 8,
            vit_depth: 2,
            decoder_layers: 2,
            lstm_layers: 2,
            lstm_width: 64,
            mlp_ratio: 4,
            head_hidden: 64,
            clip_bound: 0.1,
            sep_resampler: false,
            depth_input: DepthInput::Sensor,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// A small configuration for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 16,
            patch: 8,
            dim: 8,
            latents: 2,
            vit_depth: 1,
            decoder_layers: 2,
            lstm_layers: 2,
            lstm_width: 6,
            mlp_ratio: 2,
            head_hidden: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.image_size", self.image_size),
            ("model.patch", self.patch),
            ("model.dim", self.dim),
            ("model.latents", self.latents),
            ("model.vit_depth", self.vit_depth),
            ("model.decoder_layers", self.decoder_layers),
            ("model.lstm_layers", self.lstm_layers),
            ("model.lstm_width", self.lstm_width),
            ("model.mlp_ratio", self.mlp_ratio),
            ("model.head_hidden", self.head_hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::Range {
                    field: field.into(),
                    value: v.to_string(),
                    expected: "a positive integer".into(),
                });
            }
        }
        if self.image_size % self.patch != 0 {
            return Err(Error::Range {
                field: "model.patch".into(),
                value: self.patch.to_string(),
                expected: format!("a divisor of image_size {}", self.image_size),
            });
        }
        if !(self.clip_bound > 0.0) {
            return Err(Error::Range {
                field: "model.clip_bound".into(),
                value: self.clip_bound.to_string(),
                expected: "positive".into(),
            });
        }
        Ok(())
    }

    pub fn tokens_per_image(&self) -> usize {
        (self.image_size / self.patch).pow(2)
    }

    pub fn patch_features(&self) -> usize {
        3 * self.patch * self.patch
    }

    pub fn mlp_hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    pub fn rgb_resampler(&self) -> &'static str {
        if self.sep_resampler {
            "resampler.rgb"
        } else {
            "resampler.shared"
        }
    }

    pub fn depth_resampler(&self) -> &'static str {
        if self.sep_resampler {
            "resampler.depth"
        } else {
            "resampler.shared"
        }
    }
}

/// Everything needed to run the policy: weights, vocabulary and the depth
/// statistics the pipeline normalises against.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub vocab: Vocabulary,
    pub depth_stats: DepthStats,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::matrix(rows, cols, data).expect("positive dims")
    }
}

fn fan_in(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

fn insert_mlp(ps: &mut ParamSet, init: &mut Init, prefix: &str, d: usize, hidden: usize, out: usize, gain: f64, trainable: bool) -> Result<()> {
    ps.insert(format!("{prefix}.w1"), init.normal(d, hidden, gain * fan_in(d)), trainable)?;
    ps.insert(format!("{prefix}.b1"), Tensor::zeros(&[1, hidden]), trainable)?;
    ps.insert(format!("{prefix}.w2"), init.normal(hidden, out, gain * fan_in(hidden)), trainable)?;
    ps.insert(format!("{prefix}.b2"), Tensor::zeros(&[1, out]), trainable)?;
    Ok(())
}

fn insert_attention(ps: &mut ParamSet, init: &mut Init, prefix: &str, d: usize, gain: f64, trainable: bool) -> Result<()> {
    for w in ["wq", "wk", "wv"] {
        ps.insert(format!("{prefix}.{w}"), init.normal(d, d, gain * fan_in(d)), trainable)?;
    }
    Ok(())
}

impl Model {
    /// Seeded initialisation. The frozen stand-ins for pretrained weights
    /// depend only on `init_seed`, so shared and separate resampler variants
    /// with the same seed start from identical values.
    pub fn new(config: ModelConfig, vocab: Vocabulary, depth_stats: DepthStats) -> Result<Self> {
        config.validate()?;
        depth_stats.validate()?;
        let c = &config;
        let d = c.dim;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(c.init_seed),
        };
        let mut ps = ParamSet::new();

        ps.insert("vit.patch.w", init.normal(c.patch_features(), d, fan_in(c.patch_features())), false)?;
        ps.insert("vit.patch.b", Tensor::zeros(&[1, d]), false)?;
        ps.insert("vit.pos", init.normal(c.tokens_per_image(), d, 1.0), false)?;
        for i in 0..c.vit_depth {
            insert_attention(&mut ps, &mut init, &format!("vit.{i}.attn"), d, 0.5, false)?;
            insert_mlp(&mut ps, &mut init, &format!("vit.{i}.mlp"), d, c.mlp_hidden(), d, 0.5, false)?;
        }

        let latents = init.normal(c.latents, d, 1.0);
        let wk = init.normal(d, d, fan_in(d));
        let wv = init.normal(d, d, fan_in(d));
        let groups: &[&str] = if c.sep_resampler {
            &["resampler.rgb", "resampler.depth"]
        } else {
            &["resampler.shared"]
        };
        for g in groups {
            ps.insert(format!("{g}.latents"), latents.clone(), true)?;
            ps.insert(format!("{g}.wk"), wk.clone(), true)?;
            ps.insert(format!("{g}.wv"), wv.clone(), true)?;
        }

        ps.insert("decoder.embed", init.normal(vocab.len(), d, 1.0), false)?;
        for l in 0..c.decoder_layers {
            insert_attention(&mut ps, &mut init, &format!("decoder.{l}.cross"), d, 1.0, true)?;
            ps.insert(format!("decoder.{l}.cross.alpha"), Tensor::scalar(0.0), true)?;
            insert_mlp(&mut ps, &mut init, &format!("decoder.{l}.cross_mlp"), d, c.mlp_hidden(), d, 1.0, true)?;
            insert_attention(&mut ps, &mut init, &format!("decoder.{l}.self"), d, 0.5, false)?;
            insert_mlp(&mut ps, &mut init, &format!("decoder.{l}.self_mlp"), d, c.mlp_hidden(), d, 0.5, false)?;
        }

        let r = c.lstm_width;
        for i in 0..c.lstm_layers {
            let input = if i == 0 { d } else { r };
            ps.insert(format!("head.lstm.{i}.wx"), init.normal(input, 4 * r, fan_in(input)), true)?;
            ps.insert(format!("head.lstm.{i}.wh"), init.normal(r, 4 * r, fan_in(r)), true)?;
            // forget-gate bias of one, gate order [input, forget, cell, output]
            let mut b = Tensor::zeros(&[1, 4 * r]);
            b.data_mut()[r..2 * r].fill(1.0);
            ps.insert(format!("head.lstm.{i}.b"), b, true)?;
        }
        insert_mlp(&mut ps, &mut init, "head.pose", r, c.head_hidden, 6, 1.0, true)?;
        insert_mlp(&mut ps, &mut init, "head.gripper", r, c.head_hidden, 1, 1.0, true)?;

        Ok(Self {
            config,
            params: ps,
            vocab,
            depth_stats,
        })
    }

    /// Scalar count of every resampler parameter.
    pub fn resampler_param_count(&self) -> usize {
        self.params.count_with_prefix("resampler.")
    }

    /// Checksum over every frozen entry.
    pub fn frozen_checksum(&self) -> u64 {
        self.params.frozen_checksum()
    }
}

/// Whether a parameter name belongs to the fine-tuned set: resampler(s),
/// gated cross-attention (projections, gate, MLP) and the policy head.
pub fn is_trainable_name(name: &str) -> bool {
    if name.starts_with("resampler.") || name.starts_with("head.") {
        return true;
    }
    let mut parts = name.split('.');
    matches!(
        (parts.next(), parts.next().map(|l| l.parse::<usize>().is_ok()), parts.next()),
        (Some("decoder"), Some(true), Some("cross" | "cross_mlp"))
    )
}

/// Names of the parameters fine-tuned by imitation training.
pub fn trainable_parameter_set(model: &Model) -> Vec<String> {
    model.params.names().filter(|n| is_trainable_name(n)).map(str::to_string).collect()
}

/// `tanh(x·W1 + b1)·W2 + b2` on the tape.
pub(crate) fn mlp(g: &mut Graph, ps: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let w1 = g.param(ps, &format!("{prefix}.w1"))?;
    let b1 = g.param(ps, &format!("{prefix}.b1"))?;
    let w2 = g.param(ps, &format!("{prefix}.w2"))?;
    let b2 = g.param(ps, &format!("{prefix}.b2"))?;
    let h = g.matmul(x, w1)?;
    let h = g.add_row(h, b1)?;
    let h = g.tanh(h);
    let o = g.matmul(h, w2)?;
    g.add_row(o, b2)
}
