//! Imitation objective, Adam with global-norm clipping, and the training loop.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::model::trainable_parameter_set;
pub use crate::sim::Trajectory;

use crate::depth::{DepthMap, DepthStats};
use crate::encoders::{encode_observation, RgbImage, VisualTokens};
use crate::error::{Error, Result, StageExt};
use crate::fusion::embed_instruction;
use crate::model::{Model, ModelConfig};
use crate::numerics::{bce_logit, grad_check, GradCheckReport, Graph, ParamSet, Tensor, Var};
use crate::policy::{step_graph, Action, HiddenState};
use crate::sim::{instruction_vocabulary, Observation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_gripper: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    /// Trajectories per parameter update.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_gripper: 1.0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            epochs: 30,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |field: &str, value: f64, expected: &str| Error::Range {
            field: format!("train.{field}"),
            value: value.to_string(),
            expected: expected.into(),
        };
        if !(self.lambda_gripper >= 0.0) {
            return Err(range("lambda_gripper", self.lambda_gripper, "non-negative"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(range("learning_rate", self.learning_rate, "finite and non-negative"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(range(field, b, "in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(range("adam_eps", self.adam_eps, "positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(range("clip_norm", self.clip_norm, "positive"));
        }
        if self.batch_size == 0 {
            return Err(range("batch_size", 0.0, "at least 1"));
        }
        Ok(())
    }
}

/// Per-epoch means over trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub mse: f64,
    pub bce: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub lambda_gripper: f64,
    pub epochs: Vec<EpochStats>,
}

/// Loss terms for one sequence: `total = mse + λ·bce`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub bce: f64,
}

/// `Σ_t mean_k (pose - target)² + λ Σ_t BCE(logit, gripper)`.
pub fn imitation_loss(pred: &[([f64; 6], f64)], demo: &[Action], lambda: f64) -> Result<LossParts> {
    if pred.len() != demo.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "imitation loss needs equal nonempty sequences, got {} predictions and {} actions",
            pred.len(),
            demo.len()
        )));
    }
    let mut mse = 0.0;
    let mut bce = 0.0;
    for ((pose, logit), a) in pred.iter().zip(demo) {
        mse += pose.iter().zip(&a.pose).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 6.0;
        bce += bce_logit(*logit, a.gripper_label());
    }
    Ok(LossParts {
        total: mse + lambda * bce,
        mse,
        bce,
    })
}

pub struct LossVars {
    pub total: Var,
    pub mse: Var,
    pub bce: Var,
}

/// Tape version of [`imitation_loss`] over per-step `(pose, logit)` nodes.
pub fn imitation_loss_graph(g: &mut Graph, pred: &[(Var, Var)], demo: &[Action], lambda: f64) -> Result<LossVars> {
    if pred.len() != demo.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "imitation loss needs equal nonempty sequences, got {} predictions and {} actions",
            pred.len(),
            demo.len()
        )));
    }
    let mut mse_terms = Vec::with_capacity(pred.len());
    let mut bce_terms = Vec::with_capacity(pred.len());
    for (&(pose, logit), a) in pred.iter().zip(demo) {
        let target = g.constant(Tensor::row_vector(a.pose.to_vec())?);
        mse_terms.push(g.mse(pose, target)?);
        bce_terms.push(g.bce_with_logits(logit, &[a.gripper_label()])?);
    }
    let mse = sum_scalars(g, &mse_terms)?;
    let bce = sum_scalars(g, &bce_terms)?;
    let weighted = g.scale(bce, lambda);
    let total = g.add(mse, weighted)?;
    Ok(LossVars { total, mse, bce })
}

fn sum_scalars(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let stacked = g.concat_rows(terms)?;
    Ok(g.sum(stacked))
}

/// Adam on trainable entries, after scaling all gradients to a global norm of at most `clip_norm`.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip_norm: f64,
    t: i32,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            clip_norm: cfg.clip_norm,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Global gradient norm before clipping.
    pub fn step(&mut self, ps: &mut ParamSet) -> Result<f64> {
        let mut sq = 0.0;
        for (name, p) in ps.iter() {
            if let (true, Some(g)) = (p.trainable, &p.grad) {
                if g.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged {
                        epoch: 0,
                        reason: format!("non-finite gradient for {name}"),
                    });
                }
                sq += g.data().iter().map(|v| v * v).sum::<f64>();
            }
        }
        let norm = sq.sqrt();
        let scale = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, p) in ps.iter_mut() {
            if !p.trainable {
                continue;
            }
            let Some(g) = p.grad.as_ref() else { continue };
            let n = g.len();
            let (m, v) = self.moments.entry(name.to_string()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let value = p.value.data_mut();
            for k in 0..n {
                let gk = g.data()[k] * scale;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                value[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(norm)
    }
}

/// A trajectory with the frozen encoders already applied.
#[derive(Clone, Debug)]
pub struct EncodedTrajectory {
    pub ids: Vec<usize>,
    pub tokens: Vec<VisualTokens>,
    pub actions: Vec<Action>,
}

pub fn encode_trajectory(model: &Model, t: &Trajectory) -> Result<EncodedTrajectory> {
    t.validate()?;
    Ok(EncodedTrajectory {
        ids: model.vocab.tokenize(&t.instruction)?,
        tokens: t
            .steps
            .iter()
            .map(|s| encode_observation(model, &s.observation))
            .collect::<Result<_>>()?,
        actions: t.steps.iter().map(|s| s.action).collect(),
    })
}

pub fn encode_dataset(model: &Model, data: &[Trajectory]) -> Result<Vec<EncodedTrajectory>> {
    data.iter().map(|t| encode_trajectory(model, t)).collect()
}

/// Teacher-forced unroll from a zero hidden state, returning the loss nodes.
pub fn trajectory_loss(g: &mut Graph, model: &Model, t: &EncodedTrajectory, lambda: f64) -> Result<LossVars> {
    let x = embed_instruction(&t.ids, &model.params).stage("instruction embedding")?;
    let lang = g.constant(x);
    let mut hidden = HiddenState::zeros(model.config.lstm_layers, model.config.lstm_width).to_graph(g);
    let mut pred = Vec::with_capacity(t.tokens.len());
    for tokens in &t.tokens {
        let out = step_graph(g, model, tokens, lang, &hidden)?;
        pred.push((out.pose, out.logit));
        hidden = out.hidden;
    }
    imitation_loss_graph(g, &pred, &t.actions, lambda)
}

pub fn train_run(data: &[Trajectory], model: &mut Model, cfg: &TrainConfig) -> Result<TrainReport> {
    let encoded = encode_dataset(model, data)?;
    train_encoded(&encoded, model, cfg, |_, _| Ok(()))
}

/// Training over pre-encoded trajectories. `on_epoch` runs after every epoch.
pub fn train_encoded(
    data: &[EncodedTrajectory],
    model: &mut Model,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &Model) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training needs at least one trajectory".into()));
    }
    let mut report = TrainReport {
        lambda_gripper: cfg.lambda_gripper,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut adam = Adam::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut accum: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss, mut mse, mut bce) = (0.0, 0.0, 0.0);
        for (k, &idx) in order.iter().enumerate() {
            let mut g = Graph::new();
            let lv = trajectory_loss(&mut g, model, &data[idx], cfg.lambda_gripper)?;
            let total = g.value(lv.total).item();
            if !total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("loss {total} on trajectory {idx}"),
                });
            }
            loss += total;
            mse += g.value(lv.mse).item();
            bce += g.value(lv.bce).item();
            g.backward(lv.total, &mut model.params)?;

            let batch_end = (k + 1) % cfg.batch_size == 0 || k + 1 == order.len();
            if cfg.batch_size > 1 {
                accumulate(&mut accum, &model.params);
            }
            if batch_end {
                if !accum.is_empty() {
                    let n = (k % cfg.batch_size + 1) as f64;
                    for (name, p) in model.params.iter_mut() {
                        if let (Some(sum), Some(g)) = (accum.get(name), p.grad.as_mut()) {
                            for (gi, si) in g.data_mut().iter_mut().zip(sum) {
                                *gi = si / n;
                            }
                        }
                    }
                    accum.clear();
                }
                adam.step(&mut model.params).map_err(|e| match e {
                    Error::Diverged { reason, .. } => Error::Diverged { epoch, reason },
                    other => other,
                })?;
            }
        }
        model.params.clear_grads();
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: loss / n,
            mse: mse / n,
            bce: bce / n,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats, model)?;
        report.epochs.push(stats);
    }
    Ok(report)
}

fn accumulate(accum: &mut BTreeMap<String, Vec<f64>>, ps: &ParamSet) {
    for (name, p) in ps.iter() {
        if let Some(g) = &p.grad {
            let slot = accum.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            for (s, v) in slot.iter_mut().zip(g.data()) {
                *s += v;
            }
        }
    }
}

/// Random observation with the given image side, for synthetic checks.
pub fn random_observation<R: Rng>(rng: &mut R, side: usize) -> Result<Observation> {
    let mut rgb = || RgbImage::new(side, side, (0..3 * side * side).map(|_| rng.gen_range(0.0..1.0)).collect());
    let (rgb_static, rgb_gripper) = (rgb()?, rgb()?);
    let mut depth = || DepthMap::new(side, side, (0..side * side).map(|_| rng.gen_range(0.05..1.5)).collect());
    let (depth_static, depth_gripper) = (depth()?, depth()?);
    Ok(Observation {
        rgb_static,
        rgb_gripper,
        depth_static,
        depth_gripper,
    })
}

/// Finite-difference check of the whole trainable model on a 2-step
/// synthetic trajectory, through depth preprocessing, encoders, resampler,
/// decoder, head and loss. Uses the small configuration, with every gate
/// opened so the visual path contributes.
pub fn gradient_fidelity_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        init_seed: seed,
        ..ModelConfig::tiny()
    };
    let stats = DepthStats {
        d_min: 0.0,
        d_max: 2.0,
        mu: 0.4,
        sigma: 0.25,
    };
    let mut model = Model::new(cfg, instruction_vocabulary(), stats)?;
    for l in 0..model.config.decoder_layers {
        let alpha = model.params.get_mut(&format!("decoder.{l}.cross.alpha")).expect("gate exists");
        alpha.value = Tensor::scalar(rng.gen_range(0.3..0.9));
    }
    let side = model.config.image_size;
    let tokens = (0..2)
        .map(|_| random_observation(&mut rng, side).and_then(|o| encode_observation(&model, &o)))
        .collect::<Result<Vec<_>>>()?;
    let actions = (0..2)
        .map(|_| {
            let mut a = Action::translate(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_bool(0.5));
            a.pose[3] = rng.gen_range(-0.05..0.05);
            a
        })
        .collect();
    let traj = EncodedTrajectory {
        ids: model.vocab.tokenize("lift the red block")?,
        tokens,
        actions,
    };
    let snapshot = model.clone();
    grad_check(
        |g, ps| {
            let m = Model {
                params: ps.clone(),
                ..snapshot.clone()
            };
            Ok(trajectory_loss(g, &m, &traj, 1.0)?.total)
        },
        &model.params,
        1e-5,
    )
}
