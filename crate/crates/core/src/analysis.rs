//! Chain-success aggregation, the two ablation harnesses and depth sensitivity counts.

use serde::{Deserialize, Serialize};

use crate::depth::{compute_stats, compute_stats_in_range, frame_change_count, DepthMap, DepthStats};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::policy::LearnedPolicy;
use crate::sim::{chain_specs, generate_dataset, instruction_vocabulary, rollout_chain, ChainResult, ChainSpec, DatasetSpec, Palette, TaskPool, Trajectory, CHAIN_LENGTH};
use crate::training::{encode_dataset, train_encoded, TrainConfig, TrainReport};

/// Per-position chain success rates in the layout of a results table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub model: String,
    pub train: String,
    pub test: String,
    pub enriched: bool,
    pub n_chains: usize,
    pub rates: [f64; CHAIN_LENGTH],
    /// Sum of the rates: mean number of consecutively completed tasks.
    pub avg: f64,
}

pub const CSV_HEADER: &str = "Model,Train,Test,Task1,Task2,Task3,Task4,Task5,Avg";

impl SuccessTable {
    pub fn with_labels(mut self, model: &str, train: &str, test: &str, enriched: bool) -> Self {
        self.model = model.into();
        self.train = train.into();
        self.test = test.into();
        self.enriched = enriched;
        self
    }

    pub fn is_prefix_monotone(&self) -> bool {
        self.rates.windows(2).all(|w| w[0] >= w[1])
    }

    pub fn csv_row(&self) -> String {
        let mut cells = vec![csv_cell(&self.model), csv_cell(&self.train), csv_cell(&self.test)];
        cells.extend(self.rates.iter().map(|r| format!("{r:.3}")));
        cells.push(format!("{:.3}", self.avg));
        cells.join(",")
    }
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `rates[i]` is the fraction of chains whose first `i + 1` tasks all succeeded.
pub fn aggregate_chain_metrics(results: &[ChainResult]) -> Result<SuccessTable> {
    if results.is_empty() {
        return Err(Error::Contract("cannot aggregate zero chain results".into()));
    }
    let n = results.len();
    let mut rates = [0.0; CHAIN_LENGTH];
    for (i, rate) in rates.iter_mut().enumerate() {
        let done = results.iter().filter(|r| r.successes[..=i].iter().all(|&s| s)).count();
        *rate = done as f64 / n as f64;
    }
    Ok(SuccessTable {
        model: String::new(),
        train: String::new(),
        test: String::new(),
        enriched: false,
        n_chains: n,
        rates,
        avg: rates.iter().sum(),
    })
}

pub fn palette_label(p: &[Palette]) -> String {
    p.iter().map(Palette::to_string).collect()
}

/// Held-out chain evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub first_seed: u64,
    pub n_chains: usize,
    pub palettes: Vec<Palette>,
    pub pool: TaskPool,
    pub horizon: usize,
}

/// Everything needed to train and evaluate one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DatasetSpec,
    pub eval: EvalSpec,
    /// Fixed normalization range; `None` takes the extremes of the training frames.
    pub depth_range: Option<[f64; 2]>,
}

impl Experiment {
    pub fn digest(&self) -> String {
        format!("{:08x}", crc32fast::hash(serde_json::to_string(self).expect("plain data").as_bytes()))
    }

    pub fn chains(&self) -> Result<Vec<ChainSpec>> {
        chain_specs(self.eval.first_seed, self.eval.n_chains, &self.eval.palettes, &self.eval.pool)
    }
}

/// Every depth frame of a dataset, both cameras.
pub fn dataset_depth_frames(data: &[Trajectory]) -> Vec<DepthMap> {
    data.iter()
        .flat_map(|t| t.steps.iter())
        .flat_map(|s| [s.observation.depth_static.clone(), s.observation.depth_gripper.clone()])
        .collect()
}

pub fn dataset_stats(data: &[Trajectory], range: Option<[f64; 2]>) -> Result<DepthStats> {
    let frames = dataset_depth_frames(data);
    match range {
        Some([lo, hi]) => compute_stats_in_range(&frames, lo, hi),
        None => compute_stats(&frames),
    }
}

pub fn evaluate_model(model: &Model, chains: &[ChainSpec], horizon: usize) -> Result<Vec<ChainResult>> {
    let mut policy = LearnedPolicy::new(model);
    chains.iter().enumerate().map(|(i, c)| rollout_chain(&mut policy, c, i, horizon)).collect()
}

/// Fresh model from `cfg`, trained on `data` with `stats`.
pub fn train_model(cfg: &ModelConfig, train: &TrainConfig, data: &[Trajectory], stats: DepthStats) -> Result<(Model, TrainReport)> {
    let mut model = Model::new(cfg.clone(), instruction_vocabulary(), stats)?;
    let encoded = encode_dataset(&model, data)?;
    let report = train_encoded(&encoded, &mut model, train, |_, _| Ok(()))?;
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub config_digest: String,
    pub table: SuccessTable,
    pub results: Vec<ChainResult>,
    pub train: TrainReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub ablation: String,
    pub chain_seeds: Vec<u64>,
    pub variants: Vec<VariantResult>,
}

impl AblationReport {
    pub fn tables(&self) -> Vec<&SuccessTable> {
        self.variants.iter().map(|v| &v.table).collect()
    }
}

fn run_variant(exp: &Experiment, name: &str, cfg: &ModelConfig, data: &[Trajectory], stats: DepthStats, chains: &[ChainSpec]) -> Result<VariantResult> {
    let (model, train) = train_model(cfg, &exp.train, data, stats)?;
    let results = evaluate_model(&model, chains, exp.eval.horizon)?;
    let table = aggregate_chain_metrics(&results)?.with_labels(
        name,
        &palette_label(&exp.data.palettes),
        &palette_label(&exp.eval.palettes),
        exp.eval.pool.enrich,
    );
    let variant_exp = Experiment {
        model: cfg.clone(),
        ..exp.clone()
    };
    Ok(VariantResult {
        name: name.into(),
        config_digest: variant_exp.digest(),
        table,
        results,
        train,
    })
}

/// Trains one shared resampler and a pair of separate ones from the same
/// initialization and data order, then evaluates both on the same chains.
pub fn run_sep_resampler_ablation(exp: &Experiment) -> Result<AblationReport> {
    let data = generate_dataset(&exp.data)?;
    let stats = dataset_stats(&data, exp.depth_range)?;
    let chains = exp.chains()?;
    let shared = ModelConfig {
        sep_resampler: false,
        ..exp.model.clone()
    };
    let separate = ModelConfig {
        sep_resampler: true,
        ..exp.model.clone()
    };
    Ok(AblationReport {
        ablation: "sep-resampler".into(),
        chain_seeds: chains.iter().map(|c| c.seed).collect(),
        variants: vec![
            run_variant(exp, "shared-resampler", &shared, &data, stats, &chains)?,
            run_variant(exp, "separate-resamplers", &separate, &data, stats, &chains)?,
        ],
    })
}

/// Pixel-change counts of consecutive frame pairs under several normalizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub stats: Vec<DepthStats>,
    /// `counts[s][p]`: changed pixels of pair `p` under `stats[s]`.
    pub counts: Vec<Vec<usize>>,
    pub totals: Vec<usize>,
}

pub fn depth_sensitivity_report(pairs: &[(DepthMap, DepthMap)], stats: &[DepthStats]) -> Result<SensitivityReport> {
    if pairs.is_empty() {
        return Err(Error::Contract("sensitivity report needs at least one frame pair".into()));
    }
    let counts = stats
        .iter()
        .map(|s| pairs.iter().map(|(a, b)| frame_change_count(a, b, s)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let totals = counts.iter().map(|c| c.iter().sum()).collect();
    Ok(SensitivityReport {
        stats: stats.to_vec(),
        counts,
        totals,
    })
}

/// Consecutive third-person depth frames of every trajectory.
pub fn consecutive_depth_pairs(data: &[Trajectory]) -> Vec<(DepthMap, DepthMap)> {
    data.iter()
        .flat_map(|t| t.steps.windows(2).map(|w| (w[0].observation.depth_static.clone(), w[1].observation.depth_static.clone())))
        .collect()
}

/// Two otherwise identical models whose depth pipelines normalize against
/// `narrow` and `wide` ranges, plus the change counts under both.
pub fn run_depth_extremes_ablation(exp: &Experiment, narrow: [f64; 2], wide: [f64; 2]) -> Result<(AblationReport, SensitivityReport)> {
    let data = generate_dataset(&exp.data)?;
    let frames = dataset_depth_frames(&data);
    let narrow_stats = compute_stats_in_range(&frames, narrow[0], narrow[1])?;
    let wide_stats = compute_stats_in_range(&frames, wide[0], wide[1])?;
    if !narrow_stats.strictly_inside(&wide_stats) {
        return Err(Error::Contract(format!("wide range {wide:?} must strictly contain narrow range {narrow:?}")));
    }
    drop(frames);
    let chains = exp.chains()?;
    let sensitivity = depth_sensitivity_report(&consecutive_depth_pairs(&data), &[narrow_stats, wide_stats])?;
    let label = |r: [f64; 2]| format!("depth-range-{}-{}", r[0], r[1]);
    let report = AblationReport {
        ablation: "depth-extremes".into(),
        chain_seeds: chains.iter().map(|c| c.seed).collect(),
        variants: vec![
            run_variant(exp, &label(narrow), &exp.model, &data, narrow_stats, &chains)?,
            run_variant(exp, &label(wide), &exp.model, &data, wide_stats, &chains)?,
        ],
    };
    Ok((report, sensitivity))
}
