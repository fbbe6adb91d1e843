//! Depth preprocessing: replicate to three channels, min/max normalise against
//! dataset extremes, standardise with dataset moments, and the 8-bit
//! quantisation used to count frame-to-frame pixel changes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel depth frame in meters, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Contract("depth map must have positive extents".into()));
        }
        if values.len() != height * width {
            return Err(Error::dim("depth_map", &[height, width], &[values.len()]));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Contract(format!("depth value {v} is not a finite non-negative distance")));
        }
        Ok(Self { height, width, values })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub d_min: f64,
    pub d_max: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl DepthStats {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_max > self.d_min) {
            return Err(Error::DegenerateRange {
                d_min: self.d_min,
                d_max: self.d_max,
            });
        }
        if !(self.sigma > 0.0) {
            return Err(Error::DegenerateStats { sigma: self.sigma });
        }
        Ok(())
    }

    /// True when `[d_min, d_max]` lies inside `other`'s range and the two differ.
    pub fn strictly_inside(&self, other: &DepthStats) -> bool {
        other.d_min <= self.d_min
            && other.d_max >= self.d_max
            && (other.d_min < self.d_min || other.d_max > self.d_max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let stats: DepthStats = serde_json::from_str(s)?;
        stats.validate()?;
        Ok(stats)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedDepth {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Three identical channels, `[channel][row][col]` flattened.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedDepth {
    pub height: usize,
    pub width: usize,
    pub channels: [Vec<f64>; 3],
}

impl StandardizedDepth {
    /// Channel-major planes, the layout the patch encoder consumes.
    pub fn planes(&self) -> Vec<f64> {
        self.channels.concat()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct U8Grid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<u8>,
}

pub fn replicate3(d: &DepthMap) -> [Vec<f64>; 3] {
    [d.values.clone(), d.values.clone(), d.values.clone()]
}

/// Global extremes over every pixel of every frame, then the population
/// moments of the normalised values.
pub fn compute_stats(dataset: &[DepthMap]) -> Result<DepthStats> {
    let mut pixels = dataset.iter().flat_map(|d| d.values.iter().copied()).peekable();
    if pixels.peek().is_none() {
        return Err(Error::Contract("depth statistics need a nonempty dataset".into()));
    }
    let (d_min, d_max) = pixels.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    compute_stats_in_range(dataset, d_min, d_max)
}

/// Moments of the dataset normalised against a fixed `[d_min, d_max]`.
pub fn compute_stats_in_range(dataset: &[DepthMap], d_min: f64, d_max: f64) -> Result<DepthStats> {
    if !(d_max > d_min) {
        return Err(Error::DegenerateRange { d_min, d_max });
    }
    let n: usize = dataset.iter().map(|d| d.values.len()).sum();
    if n == 0 {
        return Err(Error::Contract("depth statistics need a nonempty dataset".into()));
    }
    let norm = |v: f64| normalize_value(v, d_min, d_max);
    let mu = dataset.iter().flat_map(|d| &d.values).map(|&v| norm(v)).sum::<f64>() / n as f64;
    let var = dataset
        .iter()
        .flat_map(|d| &d.values)
        .map(|&v| (norm(v) - mu).powi(2))
        .sum::<f64>()
        / n as f64;
    let sigma = var.sqrt();
    if !(sigma > 0.0) {
        return Err(Error::DegenerateStats { sigma });
    }
    Ok(DepthStats { d_min, d_max, mu, sigma })
}

fn normalize_value(v: f64, d_min: f64, d_max: f64) -> f64 {
    ((v - d_min) / (d_max - d_min)).clamp(0.0, 1.0)
}

/// `(d − d_min)/(d_max − d_min)`, clamped to `[0, 1]`.
pub fn normalize_depth(d: &DepthMap, s: &DepthStats) -> Result<NormalizedDepth> {
    if !(s.d_max > s.d_min) {
        return Err(Error::DegenerateRange {
            d_min: s.d_min,
            d_max: s.d_max,
        });
    }
    Ok(NormalizedDepth {
        height: d.height,
        width: d.width,
        values: d.values.iter().map(|&v| normalize_value(v, s.d_min, s.d_max)).collect(),
    })
}

/// `(d′ − μ)/σ`, replicated into three channels.
pub fn standardize_depth(d: &NormalizedDepth, s: &DepthStats) -> Result<StandardizedDepth> {
    if !(s.sigma > 0.0) {
        return Err(Error::DegenerateStats { sigma: s.sigma });
    }
    let plane: Vec<f64> = d.values.iter().map(|v| (v - s.mu) / s.sigma).collect();
    Ok(StandardizedDepth {
        height: d.height,
        width: d.width,
        channels: [plane.clone(), plane.clone(), plane],
    })
}

/// Full chain: normalise, standardise, three channels.
pub fn preprocess(d: &DepthMap, s: &DepthStats) -> Result<StandardizedDepth> {
    standardize_depth(&normalize_depth(d, s)?, s)
}

/// `round(255·d′)` with halves rounded up.
pub fn quantize_u8(d: &NormalizedDepth) -> Result<U8Grid> {
    let values = d
        .values
        .iter()
        .map(|&v| {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Contract(format!(
                    "quantize_u8 expects normalised values in [0,1], got {v}"
                )));
            }
            Ok((255.0 * v + 0.5).floor() as u8)
        })
        .collect::<Result<_>>()?;
    Ok(U8Grid {
        height: d.height,
        width: d.width,
        values,
    })
}

pub fn pixel_change_count(a: &U8Grid, b: &U8Grid) -> Result<usize> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::dim("pixel_change_count", &[a.height, a.width], &[b.height, b.width]));
    }
    Ok(a.values.iter().zip(&b.values).filter(|(x, y)| x != y).count())
}

/// Pixels whose quantised normalised depth differs between two frames.
pub fn frame_change_count(a: &DepthMap, b: &DepthMap, s: &DepthStats) -> Result<usize> {
    let qa = quantize_u8(&normalize_depth(a, s)?)?;
    let qb = quantize_u8(&normalize_depth(b, s)?)?;
    pixel_change_count(&qa, &qb)
}
