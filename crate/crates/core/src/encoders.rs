//! Frozen patch encoder shared by RGB and depth frames, the latent-query
//! resampler, and concatenation of the two resampled streams.

use crate::depth::{self, DepthMap};
use crate::error::{Error, Result, StageExt};
use crate::model::{DepthInput, Model, ModelConfig};
use crate::numerics::{matmul, scaled_dot_attention, Graph, ParamSet, Tensor, Var};
use crate::sim::Observation;

/// Three-channel image, channel-major `[c][row][col]`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 3 * height * width {
            return Err(Error::dim("rgb_image", &[3, height, width], &[data.len()]));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("rgb value {v} outside [0,1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, color: [f64; 3]) -> Result<Self> {
        let data = color.iter().flat_map(|&c| std::iter::repeat(c).take(height * width)).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn planes(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let hw = self.height * self.width;
        let i = row * self.width + col;
        [self.data[i], self.data[hw + i], self.data[2 * hw + i]]
    }
}

/// `N × dim` token matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence(pub Tensor);

impl TokenSequence {
    pub fn count(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut y = matmul(x, w)?;
    let n = y.cols();
    for row in y.data_mut().chunks_mut(n) {
        row.iter_mut().zip(b.data()).for_each(|(o, bv)| *o += bv);
    }
    Ok(y)
}

fn plain_mlp(ps: &ParamSet, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let h = linear(x, ps.value(&format!("{prefix}.w1"))?, ps.value(&format!("{prefix}.b1"))?)?;
    linear(&h.map(f64::tanh), ps.value(&format!("{prefix}.w2"))?, ps.value(&format!("{prefix}.b2"))?)
}

fn add_in_place(a: &mut Tensor, b: &Tensor) {
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
}

/// Splits a `3×H×W` image into `P×P` patches, projects each flattened patch
/// (channel, row, col order) to `dim` and adds the positional embedding.
pub fn patchify(planes: &[f64], height: usize, width: usize, ps: &ParamSet, cfg: &ModelConfig) -> Result<TokenSequence> {
    let p = cfg.patch;
    if height % p != 0 || width % p != 0 || planes.len() != 3 * height * width {
        return Err(Error::dim("patchify", &[3, height, width], &[p]));
    }
    let (gh, gw) = (height / p, width / p);
    let n = gh * gw;
    let pos = ps.value("vit.pos")?;
    if pos.rows() != n {
        return Err(Error::dim("patchify", &[n], pos.shape()));
    }
    let feat = 3 * p * p;
    let mut raw = Vec::with_capacity(n * feat);
    for py in 0..gh {
        for px in 0..gw {
            for c in 0..3 {
                for dy in 0..p {
                    let row = py * p + dy;
                    let start = c * height * width + row * width + px * p;
                    raw.extend_from_slice(&planes[start..start + p]);
                }
            }
        }
    }
    let raw = Tensor::matrix(n, feat, raw)?;
    let mut tokens = linear(&raw, ps.value("vit.patch.w")?, ps.value("vit.patch.b")?)?;
    add_in_place(&mut tokens, pos);
    Ok(TokenSequence(tokens))
}

/// Patch embedding followed by the frozen residual attention/MLP blocks.
pub fn vit_encode(planes: &[f64], height: usize, width: usize, ps: &ParamSet, cfg: &ModelConfig) -> Result<TokenSequence> {
    let mut x = patchify(planes, height, width, ps, cfg)?.0;
    for i in 0..cfg.vit_depth {
        let a = format!("vit.{i}.attn");
        let q = matmul(&x, ps.value(&format!("{a}.wq"))?)?;
        let k = matmul(&x, ps.value(&format!("{a}.wk"))?)?;
        let v = matmul(&x, ps.value(&format!("{a}.wv"))?)?;
        add_in_place(&mut x, &scaled_dot_attention(&q, &k, &v)?);
        let m = plain_mlp(ps, &format!("vit.{i}.mlp"), &x)?;
        add_in_place(&mut x, &m);
    }
    Ok(TokenSequence(x))
}

/// Encodes both frames independently and concatenates the token sequences.
pub fn vit_encode_pair(a: &[f64], b: &[f64], height: usize, width: usize, ps: &ParamSet, cfg: &ModelConfig) -> Result<TokenSequence> {
    if a.len() != b.len() {
        return Err(Error::dim("vit_encode_pair", &[a.len()], &[b.len()]));
    }
    let ta = vit_encode(a, height, width, ps, cfg)?.0;
    let tb = vit_encode(b, height, width, ps, cfg)?.0;
    let mut data = ta.into_data();
    data.extend_from_slice(tb.data());
    Ok(TokenSequence(Tensor::matrix(data.len() / cfg.dim, cfg.dim, data)?))
}

/// Frozen-encoder output for one observation: RGB and depth token streams,
/// each holding the static-camera tokens followed by the gripper-camera tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualTokens {
    pub rgb: TokenSequence,
    pub depth: TokenSequence,
}

fn depth_planes(d: &DepthMap, model: &Model) -> Result<Vec<f64>> {
    let d = match model.config.depth_input {
        DepthInput::Sensor => depth::preprocess(d, &model.depth_stats)?,
        DepthInput::Constant => {
            let flat = DepthMap::constant(d.height(), d.width(), model.depth_stats.d_max)?;
            depth::preprocess(&flat, &model.depth_stats)?
        }
    };
    Ok(d.planes())
}

/// Depth pipeline plus frozen encoder for both modalities.
pub fn encode_observation(model: &Model, obs: &Observation) -> Result<VisualTokens> {
    let cfg = &model.config;
    let (h, w) = (obs.rgb_static.height(), obs.rgb_static.width());
    let rgb = vit_encode_pair(obs.rgb_static.planes(), obs.rgb_gripper.planes(), h, w, &model.params, cfg)
        .stage("rgb encoder")?;
    let ds = depth_planes(&obs.depth_static, model).stage("depth pipeline")?;
    let dg = depth_planes(&obs.depth_gripper, model).stage("depth pipeline")?;
    let depth = vit_encode_pair(&ds, &dg, h, w, &model.params, cfg).stage("depth encoder")?;
    Ok(VisualTokens { rgb, depth })
}

/// `softmax(Q_R·(X·W_K)ᵀ/√d)·(X·W_V)` with `K` learnable latent queries.
///
/// Evaluated as `softmax((Q_R·W_Kᵀ)·Xᵀ/√d)·X·W_V`, which is the same product
/// regrouped so the `N`-row token matrix is multiplied fewer times.
pub fn resample_graph(g: &mut Graph, ps: &ParamSet, prefix: &str, tokens: Var) -> Result<Var> {
    let latents = g.param(ps, &format!("{prefix}.latents"))?;
    let wk = g.param(ps, &format!("{prefix}.wk"))?;
    let wv = g.param(ps, &format!("{prefix}.wv"))?;
    if g.value(tokens).cols() != g.value(wk).rows() {
        return Err(Error::dim("resample", g.shape(tokens), g.shape(wk)));
    }
    let d = g.value(wk).cols();
    let qk = g.matmul_bt(latents, wk)?;
    let scores = g.matmul_bt(qk, tokens)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = g.softmax_rows(scores)?;
    let pooled = g.matmul(weights, tokens)?;
    g.matmul(pooled, wv)
}

pub fn resample(tokens: &TokenSequence, ps: &ParamSet, prefix: &str) -> Result<TokenSequence> {
    let mut g = Graph::new();
    let t = g.constant(tokens.0.clone());
    let out = resample_graph(&mut g, ps, prefix, t)?;
    Ok(TokenSequence(g.value(out).clone()))
}

/// RGB tokens first, depth tokens second.
pub fn fuse_concat_graph(g: &mut Graph, rgb: Var, depth: Var) -> Result<Var> {
    g.concat_rows(&[rgb, depth])
}

pub fn fuse_concat(rgb: &TokenSequence, depth: &TokenSequence) -> Result<TokenSequence> {
    if rgb.dim() != depth.dim() {
        return Err(Error::dim("fuse_concat", rgb.0.shape(), depth.0.shape()));
    }
    let mut data = rgb.0.data().to_vec();
    data.extend_from_slice(depth.0.data());
    Ok(TokenSequence(Tensor::matrix(rgb.count() + depth.count(), rgb.dim(), data)?))
}

/// Resamples both streams and concatenates them into the `2K × d` visual context.
pub fn visual_context(g: &mut Graph, model: &Model, tokens: &VisualTokens) -> Result<Var> {
    let rgb = g.constant(tokens.rgb.0.clone());
    let depth = g.constant(tokens.depth.0.clone());
    let xv = resample_graph(g, &model.params, model.config.rgb_resampler(), rgb)?;
    let xde = resample_graph(g, &model.params, model.config.depth_resampler(), depth)?;
    fuse_concat_graph(g, xv, xde)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::DepthStats;
    use crate::model::Model;
    use crate::sim::instruction_vocabulary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(cfg: ModelConfig) -> Model {
        let stats = DepthStats { d_min: 0.0, d_max: 2.0, mu: 0.5, sigma: 0.2 };
        Model::new(cfg, instruction_vocabulary(), stats).unwrap()
    }

    fn random_planes(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
        (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn patchify_token_counts() {
        let m = model(ModelConfig::default());
        let img = vec![0.5; 3 * 32 * 32];
        assert_eq!(patchify(&img, 32, 32, &m.params, &m.config).unwrap().count(), 16);

        let small = ModelConfig { image_size: 8, ..ModelConfig::default() };
        let m8 = model(small);
        assert_eq!(patchify(&vec![0.5; 3 * 64], 8, 8, &m8.params, &m8.config).unwrap().count(), 1);

        assert!(patchify(&vec![0.5; 3 * 30 * 30], 30, 30, &m.params, &m.config).is_err());
    }

    #[test]
    fn constant_image_with_zero_positions_gives_identical_tokens() {
        let mut m = model(ModelConfig::default());
        m.params.get_mut("vit.pos").unwrap().value = Tensor::zeros(&[16, 64]);
        let t = patchify(&vec![0.3; 3 * 32 * 32], 32, 32, &m.params, &m.config).unwrap();
        for i in 1..16 {
            assert_eq!(t.0.row(i), t.0.row(0));
        }
    }

    #[test]
    fn patch_flattening_matches_direct_projection() {
        let m = model(ModelConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_planes(&mut rng, 32, 32);
        let t = patchify(&img, 32, 32, &m.params, &m.config).unwrap();
        // token 5 is patch row 1, col 1
        let w = m.params.value("vit.patch.w").unwrap();
        let pos = m.params.value("vit.pos").unwrap();
        for j in [0, 17, 63] {
            let mut want = pos.get(5, j);
            let mut f = 0;
            for c in 0..3 {
                for dy in 0..8 {
                    for dx in 0..8 {
                        want += img[c * 1024 + (8 + dy) * 32 + 8 + dx] * w.get(f, j);
                        f += 1;
                    }
                }
            }
            assert!((t.0.get(5, j) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_encoding_shape_and_determinism() {
        let m = model(ModelConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_planes(&mut rng, 32, 32);
        let b = random_planes(&mut rng, 32, 32);
        let t1 = vit_encode_pair(&a, &b, 32, 32, &m.params, &m.config).unwrap();
        let t2 = vit_encode_pair(&a, &b, 32, 32, &m.params, &m.config).unwrap();
        assert_eq!((t1.count(), t1.dim()), (32, 64));
        assert_eq!(t1, t2);
        let single = vit_encode(&b, 32, 32, &m.params, &m.config).unwrap();
        assert_eq!(&t1.0.data()[16 * 64..], single.0.data());
        assert!(vit_encode_pair(&a, &b[..100], 32, 32, &m.params, &m.config).is_err());
    }

    #[test]
    fn resample_examples() {
        let m = model(ModelConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let one = TokenSequence(Tensor::matrix(1, 64, (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
        let out = resample(&one, &m.params, "resampler.shared").unwrap();
        let want = matmul(&one.0, m.params.value("resampler.shared.wv").unwrap()).unwrap();
        assert_eq!(out.count(), 8);
        for i in 0..8 {
            for (a, b) in out.0.row(i).iter().zip(want.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        let cfg = ModelConfig { latents: 4, dim: 8, ..ModelConfig::tiny() };
        let m = model(cfg);
        let x = Tensor::matrix(16, 8, (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let out = resample(&TokenSequence(x.clone()), &m.params, "resampler.shared").unwrap();
        assert_eq!(out.0.shape(), &[4, 8]);

        // direct formula on the unregrouped product
        let k = matmul(&x, m.params.value("resampler.shared.wk").unwrap()).unwrap();
        let v = matmul(&x, m.params.value("resampler.shared.wv").unwrap()).unwrap();
        let direct = scaled_dot_attention(m.params.value("resampler.shared.latents").unwrap(), &k, &v).unwrap();
        assert!(out.0.max_abs_diff(&direct) < 1e-12);

        let bad = TokenSequence(Tensor::zeros(&[3, 5]));
        assert!(resample(&bad, &m.params, "resampler.shared").is_err());
    }

    #[test]
    fn resample_ignores_token_order() {
        let cfg = ModelConfig { latents: 4, dim: 8, ..ModelConfig::tiny() };
        let m = model(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..16).map(|_| (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let mut shuffled = rows.clone();
        for i in (1..shuffled.len()).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        let a = resample(&TokenSequence(Tensor::from_rows(&rows).unwrap()), &m.params, "resampler.shared").unwrap();
        let b = resample(&TokenSequence(Tensor::from_rows(&shuffled).unwrap()), &m.params, "resampler.shared").unwrap();
        assert!(a.0.max_abs_diff(&b.0) < 1e-12);
    }

    #[test]
    fn fuse_concat_order() {
        let a = TokenSequence(Tensor::filled(&[4, 3], 1.0));
        let b = TokenSequence(Tensor::filled(&[4, 3], 2.0));
        let ab = fuse_concat(&a, &b).unwrap();
        assert_eq!(ab.count(), 8);
        assert_eq!(&ab.0.data()[..12], a.0.data());
        assert_eq!(&ab.0.data()[12..], b.0.data());
        assert_ne!(ab, fuse_concat(&b, &a).unwrap());
        assert!(fuse_concat(&a, &TokenSequence(Tensor::zeros(&[4, 2]))).is_err());
    }
}
