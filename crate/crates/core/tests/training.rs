//! Training-loop contracts on a small model and a handful of demonstrations.

use rfpx::analysis::{dataset_stats, evaluate_model, run_sep_resampler_ablation, EvalSpec, Experiment};
use rfpx::model::{Model, ModelConfig};
use rfpx::persist::{encode_checkpoint, load_checkpoint, save_checkpoint};
use rfpx::policy::{Action, LearnedPolicy};
use rfpx::sim::{
    chain_specs, generate_dataset, instruction_vocabulary, rollout_chain, DatasetSpec, Palette, Policy, StepView, TaskPool, Trajectory,
};
use rfpx::training::{train_run, TrainConfig};
use rfpx::Result;

fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        dim: 16,
        latents: 2,
        vit_depth: 1,
        lstm_width: 8,
        head_hidden: 8,
        mlp_ratio: 2,
        init_seed: seed,
        ..ModelConfig::default()
    }
}

fn data_spec(n: usize) -> DatasetSpec {
    DatasetSpec {
        n,
        first_seed: 11,
        palettes: vec![Palette::A, Palette::B, Palette::C],
        pool: TaskPool::default(),
        max_steps: 64,
    }
}

fn fresh(data: &[Trajectory], seed: u64) -> Model {
    Model::new(small_config(seed), instruction_vocabulary(), dataset_stats(data, None).unwrap()).unwrap()
}

fn train_cfg(epochs: usize, lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        lambda_gripper: lambda,
        ..TrainConfig::default()
    }
}

#[test]
fn epoch_loss_decomposes_and_frozen_entries_stay_put() {
    let data = generate_dataset(&data_spec(4)).unwrap();
    let mut m = fresh(&data, 0);
    let before = m.frozen_checksum();
    let report = train_run(&data, &mut m, &train_cfg(3, 0.7)).unwrap();
    assert_eq!(report.epochs.len(), 3);
    for e in &report.epochs {
        assert!((e.loss - (e.mse + 0.7 * e.bce)).abs() <= 1e-10, "{e:?}");
        assert!(e.mse >= 0.0 && e.bce >= 0.0);
    }
    assert_eq!(m.frozen_checksum(), before);
    let untouched = fresh(&data, 0);
    for (name, p) in m.params.iter() {
        if !p.trainable {
            assert_eq!(p.value, untouched.params.get(name).unwrap().value, "{name}");
        }
    }
}

#[test]
fn zero_lambda_ignores_gripper_labels() {
    let data = generate_dataset(&data_spec(3)).unwrap();
    let flipped: Vec<Trajectory> = data
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for s in &mut t.steps {
                s.action.gripper_closed = !s.action.gripper_closed;
            }
            t
        })
        .collect();
    let (mut a, mut b) = (fresh(&data, 2), fresh(&data, 2));
    let ra = train_run(&data, &mut a, &train_cfg(2, 0.0)).unwrap();
    let rb = train_run(&flipped, &mut b, &train_cfg(2, 0.0)).unwrap();
    for (name, p) in a.params.iter() {
        assert_eq!(p.value, b.params.get(name).unwrap().value, "{name}");
    }
    for (x, y) in ra.epochs.iter().zip(&rb.epochs) {
        assert_eq!((x.loss, x.mse), (y.loss, y.mse));
    }
}

#[test]
fn identical_runs_write_identical_checkpoints() {
    let data = generate_dataset(&data_spec(3)).unwrap();
    let run = || {
        let mut m = fresh(&data, 5);
        train_run(&data, &mut m, &train_cfg(2, 1.0)).unwrap();
        encode_checkpoint(&m).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoints_reload_with_the_same_behaviour() {
    let data = generate_dataset(&data_spec(2)).unwrap();
    let mut m = fresh(&data, 1);
    train_run(&data, &mut m, &train_cfg(1, 1.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&m, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.depth_stats, m.depth_stats);
    assert_eq!(encode_checkpoint(&back).unwrap(), std::fs::read(&path).unwrap());
    let chains = chain_specs(500, 2, &[Palette::D], &TaskPool::default()).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    assert_eq!(evaluate_model(&back, &chains, 16).unwrap(), evaluate_model(&reloaded, &chains, 16).unwrap());
}

/// Records every action of the wrapped policy.
struct Recorder<'a> {
    inner: LearnedPolicy<'a>,
    actions: Vec<Action>,
}

impl Policy for Recorder<'_> {
    fn reset(&mut self) {
        self.inner.reset();
    }

    fn act(&mut self, view: &StepView<'_>) -> Result<Action> {
        let a = self.inner.act(view)?;
        self.actions.push(a);
        Ok(a)
    }
}

#[test]
fn episodes_do_not_leak_hidden_state() {
    let data = generate_dataset(&data_spec(2)).unwrap();
    let mut m = fresh(&data, 3);
    for (name, p) in m.params.iter_mut() {
        if name.ends_with(".alpha") {
            p.value = rfpx::numerics::Tensor::scalar(0.5);
        }
    }
    let chains = chain_specs(40, 2, &[Palette::A], &TaskPool::default()).unwrap();
    let mut alone = Recorder { inner: LearnedPolicy::new(&m), actions: vec![] };
    rollout_chain(&mut alone, &chains[1], 1, 8).unwrap();
    let mut after = Recorder { inner: LearnedPolicy::new(&m), actions: vec![] };
    rollout_chain(&mut after, &chains[0], 0, 8).unwrap();
    after.actions.clear();
    rollout_chain(&mut after, &chains[1], 1, 8).unwrap();
    assert!(!alone.actions.is_empty());
    assert_eq!(alone.actions, after.actions);
}

#[test]
fn sep_resampler_ablation_pairs_its_variants() {
    let exp = Experiment {
        model: small_config(4),
        train: train_cfg(1, 1.0),
        data: data_spec(2),
        eval: EvalSpec {
            first_seed: 900,
            n_chains: 3,
            palettes: vec![Palette::D],
            pool: TaskPool::default(),
            horizon: 8,
        },
        depth_range: None,
    };
    let report = run_sep_resampler_ablation(&exp).unwrap();
    assert_eq!(report.variants.len(), 2);
    assert_eq!(report.chain_seeds, exp.chains().unwrap().iter().map(|c| c.seed).collect::<Vec<_>>());
    for v in &report.variants {
        assert_eq!(v.results.iter().map(|r| r.seed).collect::<Vec<_>>(), report.chain_seeds);
        assert!(v.table.is_prefix_monotone());
        assert_eq!(v.table.n_chains, 3);
    }
    assert_ne!(report.variants[0].config_digest, report.variants[1].config_digest);
}

#[test]
fn reference_lift_run_reduces_the_loss_tenfold() {
    let spec = DatasetSpec {
        pool: TaskPool::lift(),
        first_seed: 0,
        ..data_spec(50)
    };
    let data = generate_dataset(&spec).unwrap();
    let mut m = Model::new(ModelConfig::default(), instruction_vocabulary(), dataset_stats(&data, None).unwrap()).unwrap();
    let report = train_run(&data, &mut m, &TrainConfig::default()).unwrap();
    let (first, last) = (report.epochs[0].loss, report.epochs.last().unwrap().loss);
    println!("epoch 1 loss {first:.4}, epoch {} loss {last:.4}, ratio {:.3}", report.epochs.len(), last / first);
    assert!(last <= 0.1 * first, "final loss {last} vs first {first}");
}
