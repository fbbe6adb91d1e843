//! Command implementations. Every command that writes files echoes its
//! effective configuration into its output directory.

use std::path::{Path, PathBuf};

use rfpx::analysis::{
    aggregate_chain_metrics, consecutive_depth_pairs, dataset_stats, depth_sensitivity_report, evaluate_model, palette_label,
    run_depth_extremes_ablation, run_sep_resampler_ablation, AblationReport, SuccessTable, CSV_HEADER,
};
use rfpx::depth::{compute_stats_in_range, DepthStats};
use rfpx::model::Model;
use rfpx::persist::{append_csv_row, append_json_line, load_checkpoint, load_dataset, save_checkpoint, save_dataset, write_json};
use rfpx::sim::{generate_dataset, instruction_vocabulary, Trajectory};
use rfpx::training::{encode_dataset, gradient_fidelity_check, train_encoded};
use rfpx::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Ablation, Command, Common};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_CSV: &str = "train.csv";
pub const TRAIN_CSV_HEADER: &str = "epoch,loss,mse,bce";
/// Wall-clock seconds per epoch, kept apart so the other metrics stay reproducible.
pub const TIMING_CSV: &str = "train_timing.csv";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const CHAINS_JSONL: &str = "chains.jsonl";
pub const EVAL_SUMMARY: &str = "eval_summary.json";
pub const STATS_FILE: &str = "depth_stats.json";
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

fn prepare(common: &Common) -> Result<Run> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_root());
    Ok(Run { cfg, out })
}

fn finish(run: &Run) -> Result<()> {
    run.cfg.validate()?;
    run.cfg.echo(&run.out)?;
    Ok(())
}

fn missing_path(key: &str, p: &Path) -> Error {
    Error::Config {
        key: key.into(),
        message: format!("{} does not exist", p.display()),
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, n } => gen_data(&common, n),
        Command::Stats { common, data, range } => stats(&common, &data, range),
        Command::Train { common, data, stats, epochs } => train(&common, data, stats, epochs),
        Command::Eval {
            common,
            checkpoint,
            chains,
            palettes,
        } => eval(&common, &checkpoint, chains, palettes.map(|p| p.0)),
        Command::Ablate {
            which: Ablation::SepResampler { common },
        } => ablate_sep(&common),
        Command::Ablate {
            which: Ablation::DepthExtremes { common, narrow, wide },
        } => ablate_depth(&common, narrow, wide),
        Command::Sensitivity { common, data, ranges } => sensitivity(&common, &data, &ranges),
        Command::Gradcheck { seed } => gradcheck(seed),
    }
}

fn gen_data(common: &Common, n: Option<usize>) -> Result<()> {
    let mut run = prepare(common)?;
    if let Some(n) = n {
        run.cfg.data.n = n;
    }
    let dir = run.cfg.data.dir.clone().unwrap_or_else(|| run.out.join("data"));
    run.cfg.data.dir = Some(dir.clone());
    finish(&run)?;
    let data = generate_dataset(&run.cfg.dataset_spec())?;
    let index = save_dataset(&dir, &data)?;
    let steps: usize = index.trajectories.iter().map(|t| t.steps).sum();
    println!("wrote {} trajectories ({steps} steps) to {}", index.trajectories.len(), dir.display());
    Ok(())
}

fn read_dataset(dir: &Path) -> Result<Vec<Trajectory>> {
    if !dir.join(rfpx::persist::INDEX_FILE).is_file() {
        return Err(missing_path("data.dir", &dir.join(rfpx::persist::INDEX_FILE)));
    }
    load_dataset(dir)
}

fn stats(common: &Common, data: &Path, range: Option<[f64; 2]>) -> Result<()> {
    let mut run = prepare(common)?;
    if range.is_some() {
        run.cfg.stats.range = range;
    }
    run.cfg.data.dir = Some(data.to_path_buf());
    finish(&run)?;
    let trajectories = read_dataset(data)?;
    let s = dataset_stats(&trajectories, run.cfg.stats.range)?;
    let path = run.out.join(STATS_FILE);
    write_json(&path, &s)?;
    println!("{}", s.to_json());
    Ok(())
}

fn read_stats(path: &Path) -> Result<DepthStats> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DepthStats::from_json(&text)
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    loss: f64,
    mse: f64,
    bce: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    lambda_gripper: f64,
    trajectories: usize,
    depth_stats: DepthStats,
    epochs: Vec<EpochRow>,
}

fn train(common: &Common, data: Option<PathBuf>, stats_file: Option<PathBuf>, epochs: Option<usize>) -> Result<()> {
    let mut run = prepare(common)?;
    if let Some(d) = data {
        run.cfg.data.dir = Some(d);
    }
    if let Some(s) = stats_file {
        run.cfg.stats.file = Some(s);
    }
    if let Some(e) = epochs {
        run.cfg.train.epochs = e;
    }
    finish(&run)?;
    let trajectories = match &run.cfg.data.dir {
        Some(dir) => read_dataset(dir)?,
        None => generate_dataset(&run.cfg.dataset_spec())?,
    };
    let stats = match &run.cfg.stats.file {
        Some(f) => read_stats(f)?,
        None => dataset_stats(&trajectories, run.cfg.stats.range)?,
    };
    let out = &run.out;
    for f in [TRAIN_CSV, TIMING_CSV] {
        let p = out.join(f);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    let mut model = Model::new(run.cfg.model.clone(), instruction_vocabulary(), stats)?;
    let encoded = encode_dataset(&model, &trajectories)?;
    let every = run.cfg.checkpoint_every;
    let report = train_encoded(&encoded, &mut model, &run.cfg.train, |s, m| {
        append_csv_row(&out.join(TRAIN_CSV), TRAIN_CSV_HEADER, &format!("{},{},{},{}", s.epoch, s.loss, s.mse, s.bce))?;
        append_csv_row(&out.join(TIMING_CSV), "epoch,seconds", &format!("{},{:.3}", s.epoch, s.seconds))?;
        eprintln!("epoch {:>3}  loss {:.5}  mse {:.6}  bce {:.5}  {:.1}s", s.epoch, s.loss, s.mse, s.bce, s.seconds);
        if every > 0 && s.epoch % every == 0 {
            save_checkpoint(m, &out.join(format!("epoch_{:04}.ckpt", s.epoch)))?;
        }
        Ok(())
    })?;
    save_checkpoint(&model, &out.join(CHECKPOINT_FILE))?;
    let summary = TrainSummary {
        lambda_gripper: report.lambda_gripper,
        trajectories: trajectories.len(),
        depth_stats: stats,
        epochs: report
            .epochs
            .iter()
            .map(|e| EpochRow {
                epoch: e.epoch,
                loss: e.loss,
                mse: e.mse,
                bce: e.bce,
            })
            .collect(),
    };
    write_json(&out.join(TRAIN_SUMMARY), &summary)?;
    println!("checkpoint {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn eval(common: &Common, checkpoint: &Path, chains: Option<usize>, palettes: Option<Vec<rfpx::sim::Palette>>) -> Result<()> {
    let mut run = prepare(common)?;
    if let Some(n) = chains {
        run.cfg.eval.n_chains = n;
    }
    if let Some(p) = palettes {
        run.cfg.eval.palettes = p;
    }
    if !checkpoint.is_file() {
        return Err(missing_path("checkpoint", checkpoint));
    }
    finish(&run)?;
    let model = load_checkpoint(checkpoint)?;
    let spec = run.cfg.eval_spec();
    let chains = rfpx::sim::chain_specs(spec.first_seed, spec.n_chains, &spec.palettes, &spec.pool)?;
    let results = evaluate_model(&model, &chains, spec.horizon)?;
    let name = checkpoint.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let table = aggregate_chain_metrics(&results)?.with_labels(
        &name,
        &palette_label(&run.cfg.data.palettes),
        &palette_label(&spec.palettes),
        spec.pool.enrich,
    );
    for r in &results {
        append_json_line(&run.out.join(CHAINS_JSONL), r)?;
    }
    append_csv_row(&run.out.join(EVAL_CSV), CSV_HEADER, &table.csv_row())?;
    write_json(&run.out.join(EVAL_SUMMARY), &table)?;
    println!("{CSV_HEADER}\n{}", table.csv_row());
    Ok(())
}

fn write_ablation(out: &Path, report: &AblationReport) -> Result<()> {
    let stem = format!("ablation_{}", report.ablation.replace('-', "_"));
    write_json(&out.join(format!("{stem}.json")), report)?;
    let csv = out.join(format!("{stem}.csv"));
    if csv.exists() {
        std::fs::remove_file(&csv).map_err(|e| Error::io(&csv, e))?;
    }
    println!("{CSV_HEADER}");
    for t in report.tables() {
        append_csv_row(&csv, CSV_HEADER, &t.csv_row())?;
        println!("{}", t.csv_row());
    }
    Ok(())
}

fn ablate_sep(common: &Common) -> Result<()> {
    let run = prepare(common)?;
    finish(&run)?;
    let report = run_sep_resampler_ablation(&run.cfg.experiment())?;
    write_ablation(&run.out, &report)
}

fn ablate_depth(common: &Common, narrow: Option<[f64; 2]>, wide: Option<[f64; 2]>) -> Result<()> {
    let mut run = prepare(common)?;
    if let Some(r) = narrow {
        run.cfg.ablation.narrow_range = r;
    }
    if let Some(r) = wide {
        run.cfg.ablation.wide_range = r;
    }
    finish(&run)?;
    let (report, sensitivity) = run_depth_extremes_ablation(&run.cfg.experiment(), run.cfg.ablation.narrow_range, run.cfg.ablation.wide_range)?;
    write_json(&run.out.join("sensitivity.json"), &sensitivity)?;
    write_ablation(&run.out, &report)
}

fn sensitivity(common: &Common, data: &Path, ranges: &[[f64; 2]]) -> Result<()> {
    let mut run = prepare(common)?;
    run.cfg.data.dir = Some(data.to_path_buf());
    finish(&run)?;
    let trajectories = read_dataset(data)?;
    let frames = rfpx::analysis::dataset_depth_frames(&trajectories);
    let stats = ranges
        .iter()
        .map(|r| compute_stats_in_range(&frames, r[0], r[1]))
        .collect::<Result<Vec<_>>>()?;
    let report = depth_sensitivity_report(&consecutive_depth_pairs(&trajectories), &stats)?;
    write_json(&run.out.join("sensitivity.json"), &report)?;
    println!("d_min,d_max,changed_pixels");
    for (s, total) in report.stats.iter().zip(&report.totals) {
        println!("{},{},{total}", s.d_min, s.d_max);
    }
    Ok(())
}

fn gradcheck(seed: u64) -> Result<()> {
    let report = gradient_fidelity_check(seed)?;
    println!(
        "max relative error {:.3e} over {} entries (worst {})",
        report.max_rel_error,
        report.entries_checked,
        report.worst.as_deref().unwrap_or("none")
    );
    if report.max_rel_error < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "gradient check failed: {:.3e} >= {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )))
    }
}

/// The table an `eval` run leaves in its output directory.
pub fn read_eval_summary(dir: &Path) -> Result<SuccessTable> {
    let path = dir.join(EVAL_SUMMARY);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
