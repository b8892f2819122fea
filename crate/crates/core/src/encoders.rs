//! Input encodings: Fourier features for positions and view directions, real
//! spherical harmonics for per-pixel directions and a multiresolution hash
//! grid for the camera origin.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, ParamGroup, ParamId, Params, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::real::Real;

/// Octaves for query positions and for view directions.
pub const POS_OCTAVES: usize = 10;
pub const DIR_OCTAVES: usize = 4;
/// Spherical-harmonic bands used for per-pixel directions.
pub const SH_BANDS: usize = 4;

/// `(sin(2^k π p_c), cos(2^k π p_c))` for octave `k` (outer) and component `c`
/// (inner). Output length is `2 · octaves · p.len()`.
pub fn positional_encode(p: &[f64], octaves: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * octaves * p.len());
    positional_encode_into(p, octaves, &mut out);
    out
}

fn positional_encode_into(p: &[f64], octaves: usize, out: &mut Vec<f64>) {
    for k in 0..octaves {
        let freq = (1u64 << k) as f64 * PI;
        for &v in p {
            let (s, c) = (freq * v).sin_cos();
            out.push(s);
            out.push(c);
        }
    }
}

/// Row-wise [`positional_encode`] of 3-vectors into an `[N, 6 · octaves]` tensor.
pub fn positional_encode_rows<T: Real>(rows: &[Vec3], octaves: usize) -> Tensor<T> {
    let width = 6 * octaves;
    let mut buf = Vec::with_capacity(width);
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        buf.clear();
        positional_encode_into(&r.to_array(), octaves, &mut buf);
        data.extend(buf.iter().map(|&v| T::lit(v)));
    }
    Tensor::new(vec![rows.len(), width], data).expect("row-major encoding")
}

const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 3] = [1.092_548_430_592_079_2, 0.315_391_565_252_520_05, 0.546_274_215_296_039_6];
const SH_C3: [f64; 5] = [
    0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    1.445_305_721_320_277,
];

const UNIT_TOL: f64 = 1e-6;

/// Orthonormal real spherical harmonics for `l < bands`, ordered by ascending
/// `l` and `m = -l..=l`. No Condon–Shortley phase: band 1 is `C1·(y, z, x)`.
pub fn sh_encode(d: Vec3, bands: usize) -> Result<Vec<f64>> {
    if !(1..=4).contains(&bands) {
        return Err(Error::invalid(format!("sh_encode: {bands} bands, supported 1..=4")));
    }
    if !d.is_finite() || (d.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!("sh_encode: direction norm {} is not 1", d.norm())));
    }
    let (x, y, z) = (d.x, d.y, d.z);
    let mut out = Vec::with_capacity(bands * bands);
    out.push(SH_C0);
    if bands > 1 {
        out.extend([SH_C1 * y, SH_C1 * z, SH_C1 * x]);
    }
    if bands > 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out.extend([
            SH_C2[0] * x * y,
            SH_C2[0] * y * z,
            SH_C2[1] * (2.0 * zz - xx - yy),
            SH_C2[0] * x * z,
            SH_C2[2] * (xx - yy),
        ]);
    }
    if bands > 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out.extend([
            SH_C3[0] * y * (3.0 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4.0 * zz - xx - yy),
            SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            SH_C3[2] * x * (4.0 * zz - xx - yy),
            SH_C3[4] * z * (xx - yy),
            SH_C3[0] * x * (xx - 3.0 * yy),
        ]);
    }
    Ok(out)
}

/// Row-wise [`sh_encode`] into an `[N, bands²]` tensor.
pub fn sh_encode_rows<T: Real>(dirs: &[Vec3], bands: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(dirs.len() * bands * bands);
    for &d in dirs {
        data.extend(sh_encode(d, bands)?.into_iter().map(T::lit));
    }
    Tensor::new(vec![dirs.len(), bands * bands], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub growth_factor: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 16,
            features_per_level: 2,
            log2_table_size: 14,
            base_resolution: 16,
            growth_factor: 1.38,
        }
    }
}

impl HashGridConfig {
    pub fn table_size(&self) -> usize {
        1 << self.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn table_scalars(&self) -> usize {
        self.levels * self.table_size() * self.features_per_level
    }

    pub fn level_resolution(&self, level: usize) -> usize {
        (self.base_resolution as f64 * self.growth_factor.powi(level as i32)).floor() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.features_per_level == 0 || self.base_resolution == 0 {
            return Err(Error::invalid("hash grid sizes must be positive"));
        }
        if !(self.growth_factor > 1.0) || self.log2_table_size > 30 {
            return Err(Error::invalid("hash grid growth must exceed 1 and tables stay below 2^31"));
        }
        Ok(())
    }
}

/// Axis-aligned box that hash-grid inputs are normalized against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl DomainBox {
    /// Bounds of `points`, padded by 10% of the extent (at least 0.5 per side).
    pub fn enclosing(points: &[Vec3]) -> Result<Self> {
        let first = *points.first().ok_or_else(|| Error::invalid("domain box needs at least one point"))?;
        let (mut lo, mut hi) = (first, first);
        for p in points {
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let pad = ((hi - lo).norm() * 0.1).max(0.5);
        let pad = Vec3::new(pad, pad, pad);
        Ok(DomainBox { min: lo - pad, max: hi + pad })
    }

    /// Position in `[0, 1]^3`, clamped.
    pub fn normalize(&self, p: Vec3) -> [f64; 3] {
        let (a, b) = (self.min.to_array(), self.max.to_array());
        let p = p.to_array();
        std::array::from_fn(|i| ((p[i] - a[i]) / (b[i] - a[i])).clamp(0.0, 1.0))
    }
}

const PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

/// Multiresolution hash encoding. The table is one learnable tensor of shape
/// `[levels · table_size, features_per_level]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashGrid {
    pub config: HashGridConfig,
    pub domain: DomainBox,
    pub table: ParamId,
}

impl HashGrid {
    pub fn new<T: Real, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        config: HashGridConfig,
        domain: DomainBox,
    ) -> Result<Self> {
        config.validate()?;
        let n = config.table_scalars();
        let data = (0..n).map(|_| T::lit(rng.random_range(-1e-4..1e-4))).collect();
        let t = Tensor::new(vec![config.levels * config.table_size(), config.features_per_level], data)?;
        let table = params.add(format!("{name}.table"), group, t);
        Ok(HashGrid { config, domain, table })
    }

    fn corner_index(&self, res: usize, c: [usize; 3]) -> usize {
        let side = res + 1;
        let t = self.config.table_size();
        if side.pow(3) <= t {
            c[0] + c[1] * side + c[2] * side * side
        } else {
            let h = (c[0] as u64).wrapping_mul(PRIMES[0])
                ^ (c[1] as u64).wrapping_mul(PRIMES[1])
                ^ (c[2] as u64).wrapping_mul(PRIMES[2]);
            (h as usize) & (t - 1)
        }
    }

    /// For every level, the 8 `(table row, trilinear weight)` pairs at `o`.
    pub fn corners(&self, o: Vec3) -> Vec<[(usize, f64); 8]> {
        let u = self.domain.normalize(o);
        (0..self.config.levels)
            .map(|level| {
                let res = self.config.level_resolution(level);
                let mut cell = [0usize; 3];
                let mut frac = [0.0f64; 3];
                for a in 0..3 {
                    let pos = u[a] * res as f64;
                    let c = (pos.floor() as usize).min(res - 1);
                    cell[a] = c;
                    frac[a] = pos - c as f64;
                }
                let base = level * self.config.table_size();
                std::array::from_fn(|bits| {
                    let mut w = 1.0;
                    let mut c = cell;
                    for a in 0..3 {
                        if bits >> a & 1 == 1 {
                            c[a] += 1;
                            w *= frac[a];
                        } else {
                            w *= 1.0 - frac[a];
                        }
                    }
                    (base + self.corner_index(res, c), w)
                })
            })
            .collect()
    }

    /// Differentiable encoding of `o` as a `[1, levels · features]` row.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, bound: &Bound, o: Vec3) -> Result<Var> {
        let f = self.config.features_per_level;
        let mut rows = Vec::with_capacity(self.config.output_dim());
        for level in self.corners(o) {
            for feat in 0..f {
                rows.push(level.iter().map(|&(row, w)| (row * f + feat, T::lit(w))).collect());
            }
        }
        g.sparse_linear(bound[self.table], &rows, vec![1, self.config.output_dim()])
    }

    /// Plain evaluation without a graph.
    pub fn encode_values<T: Real>(&self, params: &Params<T>, o: Vec3) -> Vec<f64> {
        let f = self.config.features_per_level;
        let table = params.get(self.table).data();
        let mut out = Vec::with_capacity(self.config.output_dim());
        for level in self.corners(o) {
            for feat in 0..f {
                out.push(level.iter().map(|&(row, w)| w * table[row * f + feat].as_f64()).sum());
            }
        }
        out
    }
}
