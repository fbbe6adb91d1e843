//! Policy head: max-pool over language tokens, stacked LSTM, pose and gripper MLPs.

use serde::{Deserialize, Serialize};

use crate::encoders::{encode_observation, visual_context, VisualTokens};
use crate::error::{Error, Result, StageExt};
use crate::fusion::{decode, embed_instruction, Instruction};
use crate::model::{mlp, Model};
use crate::numerics::{Graph, ParamSet, Tensor, Var};
use crate::sim::{Observation, Policy, StepView};

/// Relative end-effector motion (meters, radians) plus a binary gripper command.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// `[dx, dy, dz, droll, dpitch, dyaw]`
    pub pose: [f64; 6],
    pub gripper_closed: bool,
}

impl Action {
    pub fn translate(dx: f64, dy: f64, dz: f64, gripper_closed: bool) -> Self {
        Self {
            pose: [dx, dy, dz, 0.0, 0.0, 0.0],
            gripper_closed,
        }
    }

    pub fn within(&self, bound: f64) -> bool {
        self.pose.iter().all(|v| v.is_finite() && v.abs() <= bound + 1e-12)
    }

    pub fn gripper_label(&self) -> f64 {
        if self.gripper_closed {
            1.0
        } else {
            0.0
        }
    }

    /// Seven floats: six pose values then the gripper bit.
    pub fn to_row(&self) -> [f64; 7] {
        let mut r = [0.0; 7];
        r[..6].copy_from_slice(&self.pose);
        r[6] = self.gripper_label();
        r
    }

    pub fn from_row(r: &[f64]) -> Self {
        let mut pose = [0.0; 6];
        pose.copy_from_slice(&r[..6]);
        Self {
            pose,
            gripper_closed: r[6] > 0.5,
        }
    }
}

/// Per-layer `(h, c)` rows of the recurrent stack.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl HiddenState {
    pub fn zeros(layers: usize, width: usize) -> Self {
        Self {
            layers: (0..layers)
                .map(|_| (Tensor::zeros(&[1, width]), Tensor::zeros(&[1, width])))
                .collect(),
        }
    }

    /// `(layers, 2, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.layers.len(), 2, self.layers.first().map_or(0, |(h, _)| h.len()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(h, c)| h.data().iter().chain(c.data()).all(|v| v.is_finite()))
    }

    pub(crate) fn to_graph(&self, g: &mut Graph) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|(h, c)| (g.constant(h.clone()), g.constant(c.clone())))
            .collect()
    }

    pub(crate) fn from_graph(g: &Graph, vars: &[(Var, Var)]) -> Self {
        Self {
            layers: vars
                .iter()
                .map(|&(h, c)| (g.value(h).clone(), g.value(c).clone()))
                .collect(),
        }
    }
}

pub fn reset_hidden(model: &Model) -> HiddenState {
    HiddenState::zeros(model.config.lstm_layers, model.config.lstm_width)
}

/// Column-wise max over the token rows.
pub fn maxpool_tokens(g: &mut Graph, tokens: Var) -> Var {
    g.max_pool_rows(tokens)
}

/// One step of the stacked LSTM; gate order `[input, forget, cell, output]`.
pub fn lstm_step(g: &mut Graph, ps: &ParamSet, x: Var, prev: &[(Var, Var)]) -> Result<Vec<(Var, Var)>> {
    let mut input = x;
    let mut next = Vec::with_capacity(prev.len());
    for (i, &(h, c)) in prev.iter().enumerate() {
        let wx = g.param(ps, &format!("head.lstm.{i}.wx"))?;
        let wh = g.param(ps, &format!("head.lstm.{i}.wh"))?;
        let b = g.param(ps, &format!("head.lstm.{i}.b"))?;
        let r = g.value(h).cols();
        if g.value(wx).cols() != 4 * r || g.value(c).cols() != r {
            return Err(Error::dim("lstm_step", g.shape(wx), g.shape(h)));
        }
        let zx = g.matmul(input, wx)?;
        let zh = g.matmul(h, wh)?;
        let z = g.add(zx, zh)?;
        let z = g.add_row(z, b)?;
        let zi = g.slice_cols(z, 0, r)?;
        let zf = g.slice_cols(z, r, r)?;
        let zg = g.slice_cols(z, 2 * r, r)?;
        let zo = g.slice_cols(z, 3 * r, r)?;
        let ig = g.sigmoid(zi);
        let fg = g.sigmoid(zf);
        let cg = g.tanh(zg);
        let og = g.sigmoid(zo);
        let keep = g.mul(fg, c)?;
        let write = g.mul(ig, cg)?;
        let c_new = g.add(keep, write)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(og, tc)?;
        next.push((h_new, c_new));
        input = h_new;
    }
    Ok(next)
}

/// `pose = bound·tanh(MLP_pose(h))`, `gripper_logit = MLP_gripper(h)`.
pub fn action_heads(g: &mut Graph, ps: &ParamSet, h_top: Var, bound: f64) -> Result<(Var, Var)> {
    let raw = mlp(g, ps, "head.pose", h_top)?;
    let squashed = g.tanh(raw);
    let pose = g.scale(squashed, bound);
    let logit = mlp(g, ps, "head.gripper", h_top)?;
    Ok((pose, logit))
}

pub struct StepOutput {
    pub pose: Var,
    pub logit: Var,
    pub hidden: Vec<(Var, Var)>,
}

/// Trainable part of one control step, from cached frozen-encoder tokens
/// and the embedded instruction to the action heads.
pub fn step_graph(g: &mut Graph, model: &Model, tokens: &VisualTokens, lang: Var, prev: &[(Var, Var)]) -> Result<StepOutput> {
    let ps = &model.params;
    let xvde = visual_context(g, model, tokens).stage("resampler")?;
    let xl = decode(g, ps, &model.config, lang, xvde).stage("fusion decoder")?;
    let pooled = maxpool_tokens(g, xl);
    let hidden = lstm_step(g, ps, pooled, prev).stage("recurrent head")?;
    let top = hidden.last().expect("at least one recurrent layer").0;
    let (pose, logit) = action_heads(g, ps, top, model.config.clip_bound).stage("action heads")?;
    Ok(StepOutput { pose, logit, hidden })
}

/// Gripper closes when the predicted probability is above one half; a logit of exactly 0 opens.
pub fn action_from_outputs(pose: &Tensor, logit: f64) -> Action {
    let mut p = [0.0; 6];
    p.copy_from_slice(&pose.data()[..6]);
    Action {
        pose: p,
        gripper_closed: logit > 0.0,
    }
}

/// Full observation-to-action step: depth pipeline, encoders, decoder, head.
pub fn policy_step(obs: &Observation, instr: &Instruction, prev: &HiddenState, model: &Model) -> Result<(Action, HiddenState)> {
    let tokens = encode_observation(model, obs)?;
    policy_step_tokens(&tokens, instr, prev, model)
}

pub fn policy_step_tokens(tokens: &VisualTokens, instr: &Instruction, prev: &HiddenState, model: &Model) -> Result<(Action, HiddenState)> {
    let mut g = Graph::new();
    let x = embed_instruction(&instr.ids, &model.params).stage("instruction embedding")?;
    let lang = g.constant(x);
    let prev = prev.to_graph(&mut g);
    let out = step_graph(&mut g, model, tokens, lang, &prev)?;
    let action = action_from_outputs(g.value(out.pose), g.value(out.logit).item());
    Ok((action, HiddenState::from_graph(&g, &out.hidden)))
}

/// Closed-loop wrapper around a trained model.
pub struct LearnedPolicy<'a> {
    model: &'a Model,
    hidden: HiddenState,
    instruction: Option<Instruction>,
}

impl<'a> LearnedPolicy<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self {
            model,
            hidden: reset_hidden(model),
            instruction: None,
        }
    }
}

impl Policy for LearnedPolicy<'_> {
    fn reset(&mut self) {
        self.hidden = reset_hidden(self.model);
        self.instruction = None;
    }

    fn act(&mut self, view: &StepView<'_>) -> Result<Action> {
        if self.instruction.as_ref().map(|i| i.text.as_str()) != Some(view.instruction) {
            self.instruction = Some(Instruction::new(view.instruction, &self.model.vocab)?);
        }
        let instr = self.instruction.as_ref().expect("set above");
        let (action, hidden) = policy_step(view.observation, instr, &self.hidden, self.model)?;
        self.hidden = hidden;
        Ok(action)
    }
}
