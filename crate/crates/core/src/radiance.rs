//! Learned radiance fields: the point feature MLP `F_Θ`, the per-pixel
//! rectifier `T_Ψ`, the ordered Gaussian blend with its direction MLP `H_Γ`,
//! and the naive K-sample volume-rendering baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::Linear;
use crate::autodiff::{Bound, Graph, ParamGroup, Params, Tensor, Var};
use crate::encoders::{
    positional_encode_rows, sh_encode_rows, DomainBox, HashGrid, HashGridConfig, DIR_OCTAVES, POS_OCTAVES, SH_BANDS,
};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::real::Real;

const POS_DIM: usize = 6 * POS_OCTAVES;
const DIR_DIM: usize = 6 * DIR_OCTAVES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadianceConfig {
    /// Hidden widths; the direction encoding joins after the second.
    pub widths: [usize; 4],
    pub out: usize,
}

impl RadianceConfig {
    pub fn new(out: usize) -> Self {
        RadianceConfig {
            widths: [256, 256, 256, 128],
            out,
        }
    }

    fn dims(&self) -> [(usize, usize); 5] {
        let [a, b, c, d] = self.widths;
        [(POS_DIM, a), (a, b), (b + DIR_DIM, c), (c, d), (d, self.out)]
    }

    pub fn param_count(&self) -> usize {
        self.dims().iter().map(|&(i, o)| Linear::param_count(i, o)).sum()
    }
}

/// `F_Θ(x, d)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RadianceMlp {
    pub config: RadianceConfig,
    layers: Vec<Linear>,
}

impl RadianceMlp {
    pub fn new<T: Real, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        config: RadianceConfig,
    ) -> Self {
        let layers = config
            .dims()
            .iter()
            .enumerate()
            .map(|(i, &(fi, fo))| Linear::new(params, rng, &format!("{name}.l{i}"), group, fi, fo))
            .collect();
        RadianceMlp { config, layers }
    }

    /// Runs the MLP on pre-encoded inputs `[N, 60]` and `[N, 24]`.
    pub fn forward_encoded<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x_enc: Var, d_enc: Var) -> Result<Var> {
        let l = &self.layers;
        let mut h = l[0].forward(g, b, x_enc)?;
        h = g.relu(h);
        h = l[1].forward(g, b, h)?;
        h = g.relu(h);
        h = g.concat(&[h, d_enc], 1)?;
        h = l[2].forward(g, b, h)?;
        h = g.relu(h);
        h = l[3].forward(g, b, h)?;
        h = g.relu(h);
        l[4].forward(g, b, h)
    }
}

/// `F_Θ(x_i, d_i)` for every row, as an `[N, C]` node.
pub fn radiance_features<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    mlp: &RadianceMlp,
    xs: &[Vec3],
    ds: &[Vec3],
) -> Result<Var> {
    if xs.len() != ds.len() {
        return Err(Error::shape(format!("radiance_features: {} positions vs {} directions", xs.len(), ds.len())));
    }
    let xe = g.constant(positional_encode_rows(xs, POS_OCTAVES));
    let de = g.constant(positional_encode_rows(ds, DIR_OCTAVES));
    mlp.forward_encoded(g, b, xe, de)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectifierConfig {
    pub hidden: usize,
    pub out: usize,
    pub hash: HashGridConfig,
}

impl RectifierConfig {
    pub fn new(out: usize) -> Self {
        RectifierConfig {
            hidden: 64,
            out,
            hash: HashGridConfig::default(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hash.output_dim() + SH_BANDS * SH_BANDS
    }

    /// MLP scalars only; the hash table is counted separately.
    pub fn param_count(&self) -> usize {
        Linear::param_count(self.input_dim(), self.hidden) + Linear::param_count(self.hidden, self.out)
    }
}

/// `T_Ψ(hash(o) ⧺ SH(d_j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifierMlp {
    pub config: RectifierConfig,
    pub grid: HashGrid,
    l0: Linear,
    l1: Linear,
}

impl RectifierMlp {
    pub fn new<T: Real, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        config: RectifierConfig,
        domain: DomainBox,
    ) -> Result<Self> {
        let group = ParamGroup::Rectifier;
        let l0 = Linear::new(params, rng, &format!("{name}.l0"), group, config.input_dim(), config.hidden);
        let l1 = Linear::new(params, rng, &format!("{name}.l1"), group, config.hidden, config.out);
        // The table lives outside the `name.` prefix so MLP counts exclude it.
        let grid = HashGrid::new(params, rng, &format!("{name}_hash"), group, config.hash, domain)?;
        Ok(RectifierMlp { config, grid, l0, l1 })
    }

    /// One row per direction, `[P, C]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, o: Vec3, dirs: &[Vec3]) -> Result<Var> {
        let h = self.grid.encode(g, b, o)?;
        let h = g.gather_rows(h, &vec![0; dirs.len()])?;
        let sh = g.constant(sh_encode_rows(dirs, SH_BANDS)?);
        let x = g.concat(&[h, sh], 1)?;
        let x = self.l0.forward(g, b, x)?;
        let x = g.relu(x);
        self.l1.forward(g, b, x)
    }
}

/// Per-slot features `F_Θ(x_m, d_m)[slot_point[s]] + T_Ψ(o, d_j)[slot_dir[s]]`.
///
/// `point_feat` holds one row per query, `dirs` one row per distinct occupied
/// pixel, so each network runs once per distinct input and is gathered per slot.
#[allow(clippy::too_many_arguments)]
pub fn rectified_features<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    point_feat: Var,
    slot_point: &[usize],
    rect: Option<&RectifierMlp>,
    o: Vec3,
    dirs: &[Vec3],
    slot_dir: &[usize],
) -> Result<Var> {
    let shared = g.gather_rows(point_feat, slot_point)?;
    let Some(rect) = rect else { return Ok(shared) };
    if slot_dir.len() != slot_point.len() {
        return Err(Error::shape("rectified_features: slot tables differ in length"));
    }
    let t = rect.forward(g, b, o, dirs)?;
    let t = g.gather_rows(t, slot_dir)?;
    g.add(shared, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlendConfig {
    pub widths: [usize; 2],
    pub out: usize,
}

impl Default for BlendConfig {
    fn default() -> Self {
        BlendConfig { widths: [64, 64], out: 32 }
    }
}

/// `H_Γ(SH(d))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlendMlp {
    pub config: BlendConfig,
    layers: [Linear; 3],
}

impl BlendMlp {
    pub fn new<T: Real, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        config: BlendConfig,
    ) -> Self {
        let [a, b] = config.widths;
        let sh = SH_BANDS * SH_BANDS;
        let layers = [
            Linear::new(params, rng, &format!("{name}.l0"), group, sh, a),
            Linear::new(params, rng, &format!("{name}.l1"), group, a, b),
            Linear::new(params, rng, &format!("{name}.l2"), group, b, config.out),
        ];
        BlendMlp { config, layers }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, dirs: &[Vec3]) -> Result<Var> {
        let x = g.constant(sh_encode_rows(dirs, SH_BANDS)?);
        let h = self.layers[0].forward(g, b, x)?;
        let h = g.relu(h);
        let h = self.layers[1].forward(g, b, h)?;
        let h = g.relu(h);
        self.layers[2].forward(g, b, h)
    }
}

/// Compositing weights `α_i Π_{j<i} (1 − α_j)`.
pub fn blend_weights(alphas: &[f64]) -> Vec<f64> {
    let mut trans = 1.0;
    alphas
        .iter()
        .map(|&a| {
            let w = a * trans;
            trans *= 1.0 - a;
            w
        })
        .collect()
}

/// Front-to-back blend of `H_Γ(d_i) + f_i` over an ordered fragment list;
/// `alphas` is `[N]`, `feats` is `[N, C]`. Returns `[1, C]`.
pub fn gaussian_blend<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    mlp: &BlendMlp,
    alphas: Var,
    feats: Var,
    dirs: &[Vec3],
) -> Result<Var> {
    let n = dirs.len();
    if g.value(alphas).len() != n || g.shape(feats) != [n, mlp.config.out] {
        return Err(Error::shape("gaussian_blend: fragment arrays disagree"));
    }
    if g.value(alphas).data().iter().any(|&a| !(a >= T::zero() && a <= T::one())) {
        return Err(Error::invalid("gaussian_blend: alphas must lie in [0, 1]"));
    }
    let h = mlp.forward(g, b, dirs)?;
    let l = g.add(h, feats)?;
    g.composite(alphas, l, &[(0, n)])
}

/// Samples of the naive baseline: per pixel, a run of ascending-depth slots.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSamples {
    pub xs: Vec<Vec3>,
    pub ds: Vec<Vec3>,
    pub z: Vec<f64>,
    /// `(first sample, count)` per pixel.
    pub pixels: Vec<(usize, usize)>,
    /// Far bound closing each pixel's last interval.
    pub far: Vec<f64>,
}

impl VolumeSamples {
    /// Interval lengths `z_{i+1} − z_i`, the last one `far − z_K` (never negative).
    pub fn deltas(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.z.len()];
        for (p, &(s, n)) in self.pixels.iter().enumerate() {
            for i in s..s + n {
                out[i] = if i + 1 < s + n { self.z[i + 1] - self.z[i] } else { (self.far[p] - self.z[i]).max(0.0) };
            }
        }
        out
    }
}

/// NeRF quadrature over the K samples of every pixel using an `F_Θ` variant
/// with four outputs: sigmoid RGB and softplus density. Returns `[P, 3]`.
pub fn naive_volume_baseline<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    mlp: &RadianceMlp,
    samples: &VolumeSamples,
) -> Result<Var> {
    if mlp.config.out != 4 {
        return Err(Error::shape("naive baseline needs an MLP with 4 outputs (rgb, σ)"));
    }
    if samples.far.len() != samples.pixels.len() {
        return Err(Error::shape("naive baseline: one far bound per pixel"));
    }
    let raw = radiance_features(g, b, mlp, &samples.xs, &samples.ds)?;
    let rgb = g.slice_cols(raw, 0, 3)?;
    let rgb = g.sigmoid(rgb);
    let sigma = g.slice_cols(raw, 3, 4)?;
    let sigma = g.softplus(sigma);
    let sigma = g.reshape(sigma, vec![samples.z.len()])?;
    let delta: Vec<T> = samples.deltas().into_iter().map(T::lit).collect();
    let alpha = g.alpha_from_density(sigma, &delta)?;
    g.composite(alpha, rgb, &samples.pixels)
}

/// Constant `[N, C]` input helper.
pub fn rows_tensor<T: Real>(rows: &[Vec<f64>]) -> Result<Tensor<T>> {
    let c = rows.first().map_or(0, Vec::len);
    let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::lit(v))).collect();
    Tensor::new(vec![rows.len(), c], data)
}
