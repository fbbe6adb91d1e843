//! Dataset directory: `index.json` plus one binary file per trajectory.
//!
//! Each step is stored as four f32 little-endian planes (static RGB, gripper
//! RGB, static depth, gripper depth) followed by the 7-float action row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::encoders::RgbImage;
use crate::error::{Error, Result};
use crate::policy::Action;
use crate::sim::{Family, Observation, Palette, Scene, Step, Trajectory};

pub const INDEX_FILE: &str = "index.json";
pub const FORMAT: &str = "rfpx-dataset-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub file: String,
    pub instruction: String,
    pub family: Family,
    pub palette: Palette,
    pub scene: Scene,
    pub seed: u64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub format: String,
    pub height: usize,
    pub width: usize,
    pub trajectories: Vec<IndexEntry>,
}

fn step_floats(h: usize, w: usize) -> usize {
    8 * h * w + 7
}

fn push_f32(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn save_dataset(dir: &Path, data: &[Trajectory]) -> Result<DatasetIndex> {
    let first = data
        .first()
        .and_then(|t| t.steps.first())
        .ok_or_else(|| Error::Contract("cannot save an empty dataset".into()))?;
    let (h, w) = (first.observation.rgb_static.height(), first.observation.rgb_static.width());
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = DatasetIndex {
        format: FORMAT.into(),
        height: h,
        width: w,
        trajectories: Vec::with_capacity(data.len()),
    };
    for (k, t) in data.iter().enumerate() {
        t.validate()?;
        let o = &t.steps[0].observation;
        if (o.rgb_static.height(), o.rgb_static.width()) != (h, w) {
            return Err(Error::Contract(format!("trajectory {k} has frames of a different size")));
        }
        let file = format!("traj_{k:05}.bin");
        let mut bytes = Vec::with_capacity(4 * t.steps.len() * step_floats(h, w));
        for s in &t.steps {
            let o = &s.observation;
            push_f32(&mut bytes, o.rgb_static.planes());
            push_f32(&mut bytes, o.rgb_gripper.planes());
            push_f32(&mut bytes, o.depth_static.values());
            push_f32(&mut bytes, o.depth_gripper.values());
            push_f32(&mut bytes, &s.action.to_row());
        }
        let path = dir.join(&file);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        index.trajectories.push(IndexEntry {
            file,
            instruction: t.instruction.clone(),
            family: t.family,
            palette: t.palette,
            scene: t.scene,
            seed: t.seed,
            steps: t.steps.len(),
        });
    }
    let path = dir.join(INDEX_FILE);
    let json = serde_json::to_string_pretty(&index)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

pub fn load_index(dir: &Path) -> Result<DatasetIndex> {
    let path = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: DatasetIndex = serde_json::from_str(&text)?;
    if index.format != FORMAT {
        return Err(Error::Serde(format!("{}: unknown dataset format {}", path.display(), index.format)));
    }
    Ok(index)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Trajectory>> {
    let index = load_index(dir)?;
    let (h, w) = (index.height, index.width);
    let per_step = step_floats(h, w);
    index
        .trajectories
        .iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != 4 * per_step * entry.steps || entry.steps == 0 {
                return Err(Error::Serde(format!(
                    "{}: {} bytes, expected {} for {} steps",
                    path.display(),
                    bytes.len(),
                    4 * per_step * entry.steps,
                    entry.steps
                )));
            }
            let floats: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64).collect();
            let steps = floats
                .chunks_exact(per_step)
                .map(|f| {
                    let (rgb, rest) = f.split_at(6 * h * w);
                    let (depth, action) = rest.split_at(2 * h * w);
                    Ok(Step {
                        observation: Observation {
                            rgb_static: RgbImage::new(h, w, rgb[..3 * h * w].to_vec())?,
                            rgb_gripper: RgbImage::new(h, w, rgb[3 * h * w..].to_vec())?,
                            depth_static: DepthMap::new(h, w, depth[..h * w].to_vec())?,
                            depth_gripper: DepthMap::new(h, w, depth[h * w..].to_vec())?,
                        },
                        action: Action::from_row(action),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Trajectory {
                instruction: entry.instruction.clone(),
                family: entry.family,
                palette: entry.palette,
                scene: entry.scene,
                seed: entry.seed,
                steps,
            })
        })
        .collect()
}
