//! Policies, task chains, chain rollouts and demonstration generation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Action;
use crate::sim::expert::{expert_action, expert_rollout};
use crate::sim::render::render_observation;
use crate::sim::task::{candidate_tasks, paraphrase_instruction, Family, TaskSpec};
use crate::sim::world::*;
use crate::sim::Observation;

pub const CHAIN_LENGTH: usize = 5;
pub const DEFAULT_HORIZON: usize = 64;

/// What a policy sees at each step. The world state is only readable
/// inside the simulator, so learned policies act from observations alone.
pub struct StepView<'a> {
    pub observation: &'a Observation,
    pub instruction: &'a str,
    pub(in crate::sim) state: &'a WorldState,
    pub(in crate::sim) task: &'a TaskSpec,
    pub(in crate::sim) anchor: &'a WorldState,
}

pub trait Policy {
    /// Clears any recurrent state; called once at the start of a chain.
    fn reset(&mut self);
    fn act(&mut self, view: &StepView<'_>) -> Result<Action>;
}

/// The scripted expert, given privileged access to the world state.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn reset(&mut self) {}

    fn act(&mut self, view: &StepView<'_>) -> Result<Action> {
        expert_action(view.state, view.task, view.anchor)
    }
}

/// Uniform translations within the clip bound and a fair-coin gripper.
pub struct RandomPolicy {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn reset(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    fn act(&mut self, _view: &StepView<'_>) -> Result<Action> {
        let mut d = || self.rng.gen_range(-STEP_CLIP..=STEP_CLIP);
        let (dx, dy, dz) = (d(), d(), d());
        Ok(Action::translate(dx, dy, dz, self.rng.gen_bool(0.5)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub seed: u64,
    pub palette: Palette,
    pub scene: Scene,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainResult {
    pub chain_id: usize,
    pub seed: u64,
    pub palette: Palette,
    pub successes: [bool; CHAIN_LENGTH],
}

impl ChainResult {
    /// Number of tasks completed before the first failure.
    pub fn completed(&self) -> usize {
        self.successes.iter().take_while(|&&s| s).count()
    }

    pub fn is_prefix_monotone(&self) -> bool {
        self.successes.windows(2).all(|w| w[0] || !w[1])
    }
}

/// Which tasks chains and datasets draw from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPool {
    pub families: Vec<Family>,
    pub scene: Scene,
    /// Sample instruction text from the paraphrase bank instead of the canonical template.
    pub enrich: bool,
}

impl Default for TaskPool {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            scene: Scene::Standard,
            enrich: false,
        }
    }
}

impl TaskPool {
    pub fn lift() -> Self {
        Self {
            families: vec![Family::Lift],
            ..Self::default()
        }
    }

    fn instruction(&self, t: &TaskSpec, rng: &mut ChaCha8Rng) -> Result<String> {
        if self.enrich {
            paraphrase_instruction(t, rng)
        } else {
            Ok(t.instruction.clone())
        }
    }
}

fn task_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// Five tasks, each drawn uniformly from the tasks the expert can complete
/// from the state the expert leaves behind after the previous one.
pub fn sample_chain(seed: u64, palette: Palette, pool: &TaskPool) -> Result<ChainSpec> {
    let mut state = make_scene(seed, palette, pool.scene);
    let mut rng = task_rng(seed);
    let mut tasks = Vec::with_capacity(CHAIN_LENGTH);
    for position in 0..CHAIN_LENGTH {
        let mut candidates = candidate_tasks(&state, &pool.families);
        candidates.shuffle(&mut rng);
        let mut chosen = None;
        for t in candidates {
            if let Some((next, _)) = expert_rollout(&state, &t, DEFAULT_HORIZON)? {
                chosen = Some((t, next));
                break;
            }
        }
        let (t, next) = chosen.ok_or_else(|| Error::Task(format!("no compatible task at position {} of chain {seed}", position + 1)))?;
        let text = pool.instruction(&t, &mut rng)?;
        tasks.push(t.with_instruction(text));
        state = next;
    }
    Ok(ChainSpec {
        seed,
        palette,
        scene: pool.scene,
        tasks,
    })
}

/// Runs the chain protocol: one hidden-state reset, tasks in order, each
/// attempted only if every earlier one succeeded within `max_steps`.
pub fn rollout_chain(policy: &mut dyn Policy, chain: &ChainSpec, chain_id: usize, max_steps: usize) -> Result<ChainResult> {
    if chain.tasks.len() != CHAIN_LENGTH {
        return Err(Error::Contract(format!("a chain holds {CHAIN_LENGTH} tasks, got {}", chain.tasks.len())));
    }
    let mut state = make_scene(chain.seed, chain.palette, chain.scene);
    let mut successes = [false; CHAIN_LENGTH];
    policy.reset();
    for (k, task) in chain.tasks.iter().enumerate() {
        let anchor = state.clone();
        task.target(&anchor)?;
        let mut done = false;
        for _ in 0..max_steps {
            let observation = render_observation(&state);
            let view = StepView {
                observation: &observation,
                instruction: &task.instruction,
                state: &state,
                task,
                anchor: &anchor,
            };
            let action = policy.act(&view)?;
            state = step_env(&state, &action);
            if task.success(&anchor, &state)? {
                done = true;
                break;
            }
        }
        if !done {
            break;
        }
        successes[k] = true;
    }
    Ok(ChainResult {
        chain_id,
        seed: chain.seed,
        palette: chain.palette,
        successes,
    })
}

/// Samples and rolls out `n` chains with seeds `first_seed..first_seed + n`,
/// cycling through `palettes`. Results are in chain-index order.
pub fn evaluate_chains(policy: &mut dyn Policy, first_seed: u64, n: usize, palettes: &[Palette], pool: &TaskPool, max_steps: usize) -> Result<Vec<ChainResult>> {
    chain_specs(first_seed, n, palettes, pool)?
        .iter()
        .enumerate()
        .map(|(i, c)| rollout_chain(policy, c, i, max_steps))
        .collect()
}

pub fn chain_specs(first_seed: u64, n: usize, palettes: &[Palette], pool: &TaskPool) -> Result<Vec<ChainSpec>> {
    if palettes.is_empty() {
        return Err(Error::Contract("no palettes".into()));
    }
    (0..n)
        .map(|i| sample_chain(first_seed + i as u64, palettes[i % palettes.len()], pool))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub action: Action,
}

/// One expert demonstration of one task from a fresh reset.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub instruction: String,
    pub family: Family,
    pub palette: Palette,
    pub scene: Scene,
    pub seed: u64,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let first = self.steps.first().ok_or_else(|| Error::Contract("trajectory has no steps".into()))?;
        let dims = |o: &Observation| {
            [
                (o.rgb_static.height(), o.rgb_static.width()),
                (o.rgb_gripper.height(), o.rgb_gripper.width()),
                (o.depth_static.height(), o.depth_static.width()),
                (o.depth_gripper.height(), o.depth_gripper.width()),
            ]
        };
        let expected = dims(&first.observation);
        if self.steps.iter().any(|s| dims(&s.observation) != expected) {
            return Err(Error::Contract("observation extents differ within a trajectory".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    pub first_seed: u64,
    pub palettes: Vec<Palette>,
    pub pool: TaskPool,
    pub max_steps: usize,
}

/// Expert rollouts recorded as observation/action pairs. Trajectory `k`
/// uses seed `first_seed + k` and palette `palettes[k % len]`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<Trajectory>> {
    if spec.n == 0 {
        return Err(Error::Range {
            field: "n".into(),
            value: "0".into(),
            expected: "at least one trajectory".into(),
        });
    }
    if spec.palettes.is_empty() || spec.pool.families.is_empty() {
        return Err(Error::Contract("dataset needs at least one palette and one family".into()));
    }
    (0..spec.n).map(|k| demonstrate(spec, k)).collect()
}

fn demonstrate(spec: &DatasetSpec, k: usize) -> Result<Trajectory> {
    let seed = spec.first_seed + k as u64;
    let palette = spec.palettes[k % spec.palettes.len()];
    let start = make_scene(seed, palette, spec.pool.scene);
    let mut rng = task_rng(seed);
    let family = *spec.pool.families.choose(&mut rng).expect("nonempty");
    let task = candidate_tasks(&start, &[family])
        .choose(&mut rng)
        .cloned()
        .ok_or_else(|| Error::Task(format!("no {family} task available for seed {seed}")))?;
    let instruction = spec.pool.instruction(&task, &mut rng)?;

    let mut state = start.clone();
    let mut steps = Vec::new();
    for _ in 0..spec.max_steps {
        let action = expert_action(&state, &task, &start)?;
        steps.push(Step {
            observation: render_observation(&state),
            action,
        });
        state = step_env(&state, &action);
        if task.success(&start, &state)? {
            let t = Trajectory {
                instruction,
                family,
                palette,
                scene: spec.pool.scene,
                seed,
                steps,
            };
            t.validate()?;
            return Ok(t);
        }
    }
    Err(Error::Task(format!("expert failed {family} on seed {seed}")))
}
