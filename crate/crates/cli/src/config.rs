//! TOML run configuration with defaults, validation and an effective-config echo.

use std::path::{Path, PathBuf};

use rfpx::analysis::{EvalSpec, Experiment};
use rfpx::model::ModelConfig;
use rfpx::sim::{DatasetSpec, Family, Palette, Scene, TaskPool, DEFAULT_HORIZON};
use rfpx::training::TrainConfig;
use rfpx::{Error, Result};
use serde::{Deserialize, Serialize};

pub const RUN_DIR_ENV: &str = "RFPX_RUN_DIR";
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    pub first_seed: u64,
    pub palettes: Vec<Palette>,
    pub families: Vec<Family>,
    pub scene: Scene,
    pub enrich: bool,
    pub max_steps: usize,
    /// Dataset directory read by `train` and written by `gen-data`.
    pub dir: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n: 200,
            first_seed: 0,
            palettes: vec![Palette::A, Palette::B, Palette::C],
            families: Family::ALL.to_vec(),
            scene: Scene::Standard,
            enrich: false,
            max_steps: DEFAULT_HORIZON,
            dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    /// JSON file with precomputed statistics; when absent they come from the training frames.
    pub file: Option<PathBuf>,
    /// Fixed `[d_min, d_max]` normalization range; absent means the extremes of the frames.
    pub range: Option<[f64; 2]>,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self { file: None, range: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub first_seed: u64,
    pub n_chains: usize,
    pub palettes: Vec<Palette>,
    pub families: Vec<Family>,
    pub scene: Scene,
    pub enrich: bool,
    pub horizon: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            first_seed: 1_000_000,
            n_chains: 200,
            palettes: vec![Palette::D],
            families: Family::ALL.to_vec(),
            scene: Scene::Standard,
            enrich: false,
            horizon: DEFAULT_HORIZON,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub narrow_range: [f64; 2],
    pub wide_range: [f64; 2],
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            narrow_range: [0.0, 2.0],
            wide_range: [0.0, 20.0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides both `model.init_seed` and `train.seed`.
    pub seed: Option<u64>,
    /// Output root; `RFPX_RUN_DIR` takes precedence.
    pub run_dir: Option<PathBuf>,
    /// Write an extra checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    pub stats: StatsSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
}

fn range_err(field: &str, value: impl ToString, expected: &str) -> Error {
    Error::Range {
        field: field.into(),
        value: value.to_string(),
        expected: expected.into(),
    }
}

fn check_range(field: &str, r: [f64; 2]) -> Result<()> {
    if r.iter().all(|v| v.is_finite()) && r[0] >= 0.0 && r[1] > r[0] {
        Ok(())
    } else {
        Err(range_err(field, format!("{r:?}"), "finite 0 <= lo < hi"))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(config_error)?;
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            key: path.display().to_string(),
            message: format!("cannot read config file: {e}"),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    /// Applies the top-level seed to the nested seeds.
    pub fn resolved(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.model.init_seed = seed;
            self.train.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if d.n == 0 {
            return Err(range_err("data.n", 0, "at least one trajectory"));
        }
        if d.palettes.is_empty() {
            return Err(range_err("data.palettes", "[]", "at least one palette"));
        }
        if d.families.is_empty() {
            return Err(range_err("data.families", "[]", "at least one task family"));
        }
        if d.max_steps == 0 {
            return Err(range_err("data.max_steps", 0, "positive"));
        }
        let e = &self.eval;
        if e.n_chains == 0 {
            return Err(range_err("eval.n_chains", 0, "at least one chain"));
        }
        if e.palettes.is_empty() {
            return Err(range_err("eval.palettes", "[]", "at least one palette"));
        }
        if e.families.is_empty() {
            return Err(range_err("eval.families", "[]", "at least one task family"));
        }
        if e.horizon == 0 {
            return Err(range_err("eval.horizon", 0, "positive"));
        }
        if let Some(r) = self.stats.range {
            check_range("stats.range", r)?;
        }
        check_range("ablation.narrow_range", self.ablation.narrow_range)?;
        check_range("ablation.wide_range", self.ablation.wide_range)?;
        if let Some(f) = &self.stats.file {
            if !f.is_file() {
                return Err(Error::Config {
                    key: "stats.file".into(),
                    message: format!("{} does not exist", f.display()),
                });
            }
        }
        Ok(())
    }

    /// Output root: `RFPX_RUN_DIR`, then `run_dir`, then `runs`.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(RUN_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.run_dir.clone().unwrap_or_else(|| PathBuf::from("runs")),
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        let d = &self.data;
        DatasetSpec {
            n: d.n,
            first_seed: d.first_seed,
            palettes: d.palettes.clone(),
            pool: TaskPool {
                families: d.families.clone(),
                scene: d.scene,
                enrich: d.enrich,
            },
            max_steps: d.max_steps,
        }
    }

    pub fn eval_spec(&self) -> EvalSpec {
        let e = &self.eval;
        EvalSpec {
            first_seed: e.first_seed,
            n_chains: e.n_chains,
            palettes: e.palettes.clone(),
            pool: TaskPool {
                families: e.families.clone(),
                scene: e.scene,
                enrich: e.enrich,
            },
            horizon: e.horizon,
        }
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            model: self.model.clone(),
            train: self.train.clone(),
            data: self.dataset_spec(),
            eval: self.eval_spec(),
            depth_range: self.stats.range,
        }
    }

    /// Writes the effective config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Maps a TOML error to a config error carrying the offending key.
fn config_error(e: toml::de::Error) -> Error {
    let message = e.message().to_string();
    let key = message
        .split_once("unknown field `")
        .and_then(|(_, rest)| rest.split_once('`'))
        .map(|(k, _)| k.to_string())
        .or_else(|| e.span().map(|s| format!("bytes {}..{}", s.start, s.end)))
        .unwrap_or_default();
    Error::Config { key, message }
}
