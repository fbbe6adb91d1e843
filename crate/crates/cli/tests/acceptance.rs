//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL` line straight to stdout so the verdicts show up
//! even when output capture is on.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfpx::analysis::{
    aggregate_chain_metrics, dataset_depth_frames, dataset_stats, depth_sensitivity_report, evaluate_model, run_sep_resampler_ablation,
    train_model, EvalSpec, Experiment, SuccessTable,
};
use rfpx::depth::{compute_stats, compute_stats_in_range, normalize_depth, standardize_depth, DepthMap};
use rfpx::fusion::Instruction;
use rfpx::model::{DepthInput, Model, ModelConfig};
use rfpx::policy::{policy_step, reset_hidden};
use rfpx::sim::{
    chain_specs, generate_dataset, instruction_vocabulary, ChainResult, DatasetSpec, Family, Palette, Scene, TaskPool, CHAIN_LENGTH,
    DEFAULT_HORIZON,
};
use rfpx::training::{gradient_fidelity_check, random_observation, train_run, TrainConfig};

const GRADCHECK_MAX_REL_ERROR: f64 = 1e-4;
const GRADCHECK_MAX_SECONDS: f64 = 60.0;
const GATE_CASES: usize = 50;
const FREEZE_EPOCHS: usize = 10;
const MOMENT_TOLERANCE: f64 = 1e-10;
const EXAMPLE_TOLERANCE: f64 = 1e-9;
const TABLE_TOLERANCE: f64 = 1e-9;
const LIFT_TRAJECTORIES: usize = 200;
const LIFT_EVAL_CHAINS: usize = 50;
const LIFT_MIN_TASK1: f64 = 0.80;
const DEPTH_SEEDS: [u64; 3] = [0, 1, 2];
const DEPTH_EVAL_CHAINS: usize = 50;
const DEPTH_MIN_MARGIN: f64 = 0.15;
const HELD_OUT_FIRST_SEED: u64 = 1_000_000;

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n:>2}: {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn lift_data(n: usize, scene: Scene) -> DatasetSpec {
    DatasetSpec {
        n,
        first_seed: 0,
        palettes: vec![Palette::A, Palette::B, Palette::C],
        pool: TaskPool {
            scene,
            ..TaskPool::lift()
        },
        max_steps: DEFAULT_HORIZON,
    }
}

fn task1(results: &[ChainResult]) -> f64 {
    aggregate_chain_metrics(results).unwrap().rates[0]
}

#[test]
fn criterion_01_gradient_fidelity() {
    let started = Instant::now();
    let report = gradient_fidelity_check(0).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let pass = report.max_rel_error < GRADCHECK_MAX_REL_ERROR && secs < GRADCHECK_MAX_SECONDS;
    verdict(
        1,
        "gradient fidelity",
        pass,
        &format!(
            "max rel error {:.3e} (< {GRADCHECK_MAX_REL_ERROR:e}) over {} entries in {secs:.1}s (< {GRADCHECK_MAX_SECONDS}s)",
            report.max_rel_error, report.entries_checked
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_gate_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    let stats = compute_stats(&[DepthMap::new(1, 2, vec![0.5, 1.5]).unwrap()]).unwrap();
    let vocab = instruction_vocabulary();
    for case in 0..GATE_CASES {
        let cfg = ModelConfig {
            init_seed: rng.gen(),
            ..ModelConfig::default()
        };
        let m = Model::new(cfg, vocab.clone(), stats).unwrap();
        assert!(m.params.iter().filter(|(n, _)| n.ends_with(".alpha")).all(|(_, p)| p.value.data() == [0.0]));
        let a = random_observation(&mut rng, m.config.image_size).unwrap();
        let b = random_observation(&mut rng, m.config.image_size).unwrap();
        let texts = ["lift the red block", "press the button", "push the small blue block left"];
        let instr = Instruction::new(texts[case % texts.len()], &m.vocab).unwrap();
        let h = reset_hidden(&m);
        let (xa, ha) = policy_step(&a, &instr, &h, &m).unwrap();
        let (xb, hb) = policy_step(&b, &instr, &h, &m).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&xa.pose) != bits(&xb.pose) || xa.gripper_closed != xb.gripper_closed || ha != hb {
            failures += 1;
        }
    }
    let pass = failures == 0;
    verdict(2, "gate identity", pass, &format!("{failures}/{GATE_CASES} cases changed output when both frames were replaced"));
    assert!(pass);
}

fn group_checksums(m: &Model) -> Vec<(String, u64)> {
    let groups: Vec<String> = {
        let mut g = vec!["vit.".to_string(), "decoder.embed".to_string()];
        for l in 0..m.config.decoder_layers {
            g.push(format!("decoder.{l}.self."));
            g.push(format!("decoder.{l}.self_mlp."));
        }
        g
    };
    groups
        .into_iter()
        .map(|prefix| {
            let mut h = DefaultHasher::new();
            let mut n = 0;
            for (name, p) in m.params.iter().filter(|(name, _)| name.starts_with(&prefix)) {
                name.hash(&mut h);
                p.value.data().iter().for_each(|v| v.to_bits().hash(&mut h));
                n += 1;
            }
            assert!(n > 0, "no parameters under {prefix}");
            (prefix, h.finish())
        })
        .collect()
}

#[test]
fn criterion_03_freeze_contract() {
    let data = generate_dataset(&lift_data(8, Scene::Standard)).unwrap();
    let stats = dataset_stats(&data, None).unwrap();
    let mut m = Model::new(ModelConfig::default(), instruction_vocabulary(), stats).unwrap();
    let before = group_checksums(&m);
    let trainable_before: Vec<_> = m.params.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.clone()).collect();
    let cfg = TrainConfig {
        epochs: FREEZE_EPOCHS,
        ..TrainConfig::default()
    };
    let report = train_run(&data, &mut m, &cfg).unwrap();
    let after = group_checksums(&m);
    let trainable_after: Vec<_> = m.params.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.clone()).collect();
    let moved = trainable_before != trainable_after;
    let pass = before == after && report.epochs.len() == FREEZE_EPOCHS && moved;
    verdict(
        3,
        "freeze contract",
        pass,
        &format!("{} frozen groups unchanged after {} epochs; trainable entries moved: {moved}", before.len(), report.epochs.len()),
    );
    assert_eq!(before, after);
    assert!(pass);
}

#[test]
fn criterion_04_depth_moments() {
    let data = generate_dataset(&DatasetSpec {
        n: 20,
        first_seed: 40,
        palettes: vec![Palette::A, Palette::B, Palette::C],
        pool: TaskPool::default(),
        max_steps: DEFAULT_HORIZON,
    })
    .unwrap();
    let frames = dataset_depth_frames(&data);
    let stats = compute_stats(&frames).unwrap();
    let mut values = Vec::new();
    for f in &frames {
        let s = standardize_depth(&normalize_depth(f, &stats).unwrap(), &stats).unwrap();
        values.extend_from_slice(&s.channels[0]);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let moments_ok = mean.abs() <= MOMENT_TOLERANCE && (std - 1.0).abs() <= MOMENT_TOLERANCE;

    // Four pixels {0, 4, 2, 6}: normalized {0, 2/3, 1/3, 1}, μ = 1/2, σ = √5/6.
    let example = [DepthMap::new(1, 2, vec![0.0, 4.0]).unwrap(), DepthMap::new(1, 2, vec![2.0, 6.0]).unwrap()];
    let s = compute_stats(&example).unwrap();
    let sigma = 5f64.sqrt() / 6.0;
    let mut worst = (s.mu - 0.5).abs().max((s.sigma - sigma).abs()).max(s.d_min.abs()).max((s.d_max - 6.0).abs());
    let expected_norm = [[0.0, 2.0 / 3.0], [1.0 / 3.0, 1.0]];
    for (frame, want) in example.iter().zip(expected_norm) {
        let norm = normalize_depth(frame, &s).unwrap();
        let std = standardize_depth(&norm, &s).unwrap();
        for k in 0..2 {
            worst = worst.max((norm.values[k] - want[k]).abs());
            worst = worst.max((std.channels[0][k] - (want[k] - 0.5) / sigma).abs());
        }
    }
    let pass = moments_ok && worst <= EXAMPLE_TOLERANCE;
    verdict(
        4,
        "depth pipeline moments",
        pass,
        &format!(
            "{} pixels: mean {mean:.2e}, std-1 {:.2e} (tol {MOMENT_TOLERANCE:e}); 4-pixel example μ={:.5} σ={:.5}, worst error {worst:.1e} (tol {EXAMPLE_TOLERANCE:e})",
            values.len(),
            std - 1.0,
            s.mu,
            s.sigma
        ),
    );
    assert!(pass);
}

/// Chains whose completed-prefix histogram gives `rates` over `n` chains.
fn chains_with_rates(rates: [f64; CHAIN_LENGTH], n: usize) -> Vec<ChainResult> {
    let reached: Vec<usize> = rates.iter().map(|r| (r * n as f64).round() as usize).collect();
    let mut out = Vec::with_capacity(n);
    for id in 0..n {
        let mut successes = [false; CHAIN_LENGTH];
        for (k, s) in successes.iter_mut().enumerate() {
            *s = id < reached[k];
        }
        out.push(ChainResult {
            chain_id: id,
            seed: id as u64,
            palette: Palette::D,
            successes,
        });
    }
    out
}

#[test]
fn criterion_05_table_arithmetic() {
    let rows: [([f64; 5], f64); 2] = [([0.96, 0.87, 0.78, 0.705, 0.625], 3.94), ([0.46, 0.205, 0.095, 0.055, 0.015], 0.83)];
    let mut tables: Vec<SuccessTable> = Vec::new();
    let mut worst: f64 = 0.0;
    for (rates, avg) in rows {
        let t = aggregate_chain_metrics(&chains_with_rates(rates, 200)).unwrap();
        worst = worst.max((t.avg - avg).abs());
        for (got, want) in t.rates.iter().zip(rates) {
            worst = worst.max((got - want).abs());
        }
        tables.push(t);
    }
    let all = vec![
        chains_with_rates([0.0; 5], 10),
        chains_with_rates([1.0; 5], 10),
        chains_with_rates([0.5, 0.5, 0.3, 0.1, 0.0], 10),
    ];
    for results in &all {
        tables.push(aggregate_chain_metrics(results).unwrap());
    }
    let monotone = tables.iter().all(SuccessTable::is_prefix_monotone);
    let pass = worst <= TABLE_TOLERANCE && monotone;
    verdict(
        5,
        "table arithmetic",
        pass,
        &format!(
            "avgs {:.3} and {:.3}, worst error {worst:.1e} (tol {TABLE_TOLERANCE:e}); {} tables prefix-monotone: {monotone}",
            tables[0].avg,
            tables[1].avg,
            tables.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_end_to_end_learning() {
    let started = Instant::now();
    let data = generate_dataset(&lift_data(LIFT_TRAJECTORIES, Scene::Standard)).unwrap();
    let stats = dataset_stats(&data, None).unwrap();
    let (model, report) = train_model(&ModelConfig::default(), &TrainConfig::default(), &data, stats).unwrap();
    let chains = chain_specs(HELD_OUT_FIRST_SEED, LIFT_EVAL_CHAINS, &[Palette::D], &TaskPool::lift()).unwrap();
    let rate = task1(&evaluate_model(&model, &chains, DEFAULT_HORIZON).unwrap());
    let last = report.epochs.last().unwrap();
    let pass = rate >= LIFT_MIN_TASK1;
    verdict(
        6,
        "end-to-end learning",
        pass,
        &format!(
            "Task1 {rate:.3} on {LIFT_EVAL_CHAINS} palette-D lift chains (need >= {LIFT_MIN_TASK1}); {} epochs, final mse {:.5} bce {:.4}; {:.0}s",
            report.epochs.len(),
            last.mse,
            last.bce,
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_depth_utility() {
    let data = generate_dataset(&lift_data(LIFT_TRAJECTORIES, Scene::TallShort)).unwrap();
    let stats = dataset_stats(&data, None).unwrap();
    let pool = TaskPool {
        families: vec![Family::Lift],
        scene: Scene::TallShort,
        enrich: false,
    };
    let chains = chain_specs(HELD_OUT_FIRST_SEED, DEPTH_EVAL_CHAINS, &[Palette::A, Palette::B, Palette::C], &pool).unwrap();
    let mut margins = Vec::new();
    let mut detail = Vec::new();
    for seed in DEPTH_SEEDS {
        let train = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let mut rates = [0.0; 2];
        for (k, input) in [DepthInput::Sensor, DepthInput::Constant].into_iter().enumerate() {
            let cfg = ModelConfig {
                init_seed: seed,
                depth_input: input,
                ..ModelConfig::default()
            };
            let (model, _) = train_model(&cfg, &train, &data, stats).unwrap();
            rates[k] = task1(&evaluate_model(&model, &chains, DEFAULT_HORIZON).unwrap());
        }
        margins.push(rates[0] - rates[1]);
        detail.push(format!("seed {seed}: rgbd {:.3} rgb {:.3}", rates[0], rates[1]));
    }
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    let pass = mean >= DEPTH_MIN_MARGIN;
    verdict(
        7,
        "depth utility",
        pass,
        &format!("mean margin {mean:.3} (need >= {DEPTH_MIN_MARGIN}); {}", detail.join("; ")),
    );
    assert!(pass);
}

#[test]
fn criterion_08_sensitivity_direction() {
    // 0.50 m → 0.51 m. Narrow [0,1]: 127.5→128 vs 130.05→130, counted.
    // Wide [0,10]: 12.75→13 vs 13.005→13, not counted.
    let a = DepthMap::new(2, 2, vec![0.50, 0.3, 0.7, 0.9]).unwrap();
    let b = DepthMap::new(2, 2, vec![0.51, 0.3, 0.7, 0.9]).unwrap();
    let frames = [a.clone(), b.clone()];
    let narrow = compute_stats_in_range(&frames, 0.0, 1.0).unwrap();
    let wide = compute_stats_in_range(&frames, 0.0, 10.0).unwrap();
    let r = depth_sensitivity_report(&[(a, b)], &[narrow, wide]).unwrap();
    let pass = r.totals == vec![1, 0] && r.totals[0] > r.totals[1];
    verdict(
        8,
        "sensitivity direction",
        pass,
        &format!("0.01 m change counted {} time(s) under [0,1] and {} under [0,10] (expected 1 and 0)", r.totals[0], r.totals[1]),
    );
    assert!(pass);
}

const DETERMINISM_CONFIG: &str = r#"
seed = 21
[model]
dim = 32
latents = 4
lstm_width = 32
head_hidden = 32
[train]
epochs = 3
[data]
n = 12
families = ["lift", "press"]
[eval]
n_chains = 6
families = ["lift", "press"]
horizon = 32
"#;

fn cli_run(dir: &Path, config: &Path) {
    let bin = env!("CARGO_BIN_EXE_rfpx");
    let out = dir.to_str().unwrap();
    let cfg = config.to_str().unwrap();
    for args in [
        vec!["train", "--config", cfg, "--out", out],
        vec!["eval", "--config", cfg, "--out", out, "--checkpoint", &format!("{out}/model.ckpt")],
    ] {
        let o = Command::new(bin).args(&args).env_remove("RFPX_RUN_DIR").output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn criterion_09_determinism() {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("run.toml");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    cli_run(&a, &config);
    cli_run(&b, &config);
    let files = [
        "model.ckpt",
        "train.csv",
        "train_summary.json",
        "eval.csv",
        "chains.jsonl",
        "eval_summary.json",
        "effective_config.toml",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .collect();
    let pass = differing.is_empty();
    verdict(
        9,
        "determinism",
        pass,
        &format!("{} artifacts compared byte for byte; differing: {differing:?}", files.len()),
    );
    assert!(pass);
}

fn open_gates(m: &mut Model) {
    for (name, p) in m.params.iter_mut() {
        if name.ends_with(".alpha") {
            p.value = rfpx::numerics::Tensor::scalar(0.5);
        }
    }
}

#[test]
fn criterion_10_sep_resampler_harness() {
    let vocab = instruction_vocabulary();
    let exp = Experiment {
        model: ModelConfig::default(),
        train: TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
        data: DatasetSpec {
            n: 6,
            first_seed: 0,
            palettes: vec![Palette::A, Palette::B, Palette::C],
            pool: TaskPool::default(),
            max_steps: DEFAULT_HORIZON,
        },
        eval: EvalSpec {
            first_seed: HELD_OUT_FIRST_SEED,
            n_chains: 10,
            palettes: vec![Palette::D],
            pool: TaskPool::default(),
            horizon: 24,
        },
        depth_range: None,
    };
    let data = generate_dataset(&exp.data).unwrap();
    let stats = dataset_stats(&data, None).unwrap();
    let mut shared = Model::new(exp.model.clone(), vocab.clone(), stats).unwrap();
    let sep_cfg = ModelConfig {
        sep_resampler: true,
        ..exp.model.clone()
    };
    let mut separate = Model::new(sep_cfg, vocab, stats).unwrap();
    // Open the gates so the resamplers actually reach the outputs.
    open_gates(&mut shared);
    open_gates(&mut separate);
    let chains = exp.chains().unwrap();
    let step0_equal = evaluate_model(&shared, &chains, exp.eval.horizon).unwrap() == evaluate_model(&separate, &chains, exp.eval.horizon).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let obs = random_observation(&mut rng, shared.config.image_size).unwrap();
    let instr = Instruction::new("lift the red block", &shared.vocab).unwrap();
    let (xa, ha) = policy_step(&obs, &instr, &reset_hidden(&shared), &shared).unwrap();
    let (xb, hb) = policy_step(&obs, &instr, &reset_hidden(&separate), &separate).unwrap();
    let outputs_equal = xa == xb && ha == hb;
    let doubled = separate.resampler_param_count() == 2 * shared.resampler_param_count();

    let report = run_sep_resampler_ablation(&exp).unwrap();
    let seeds: Vec<u64> = chains.iter().map(|c| c.seed).collect();
    let paired = report.variants.len() == 2
        && report.chain_seeds == seeds
        && report.variants.iter().all(|v| v.results.iter().map(|r| r.seed).collect::<Vec<_>>() == seeds);
    let pass = step0_equal && outputs_equal && doubled && paired;
    let tables: Vec<String> = report.tables().iter().map(|t| t.csv_row()).collect();
    verdict(
        10,
        "sep-resampler harness",
        pass,
        &format!(
            "step-0 evaluations identical: {step0_equal}; outputs bitwise equal: {outputs_equal}; 2x resampler params: {doubled}; paired tables on {} seeds: {paired} [{}]",
            seeds.len(),
            tables.join(" | ")
        ),
    );
    assert!(pass);
}
