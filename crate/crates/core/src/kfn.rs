//! K-Feature Fusion Network: a per-pixel softmax mask over the K layers and
//! the masked sum that collapses the feature stack to one map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::Conv;
use crate::autodiff::{Bound, Graph, ParamGroup, Params, Tensor, Var};
use crate::error::{Error, Result};
use crate::querygen::FeatureStack;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KfnConfig {
    pub k: usize,
    pub channels: usize,
    pub hidden: usize,
    /// One weight per (layer, channel) instead of one per layer.
    pub per_channel: bool,
}

impl KfnConfig {
    pub fn new(k: usize, channels: usize) -> Self {
        KfnConfig {
            k,
            channels,
            hidden: 64,
            per_channel: false,
        }
    }

    fn mask_channels(&self) -> usize {
        if self.per_channel {
            self.k * self.channels
        } else {
            self.k
        }
    }

    pub fn param_count(&self) -> usize {
        Conv::param_count(self.k * self.channels, self.hidden, 3) + Conv::param_count(self.hidden, self.mask_channels(), 3)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KfnParams {
    pub config: KfnConfig,
    pub conv1: Conv,
    pub conv2: Conv,
}

impl KfnParams {
    pub fn new<T: Real, R: Rng>(params: &mut Params<T>, rng: &mut R, name: &str, config: KfnConfig) -> Result<Self> {
        if config.k == 0 || config.channels == 0 || config.hidden == 0 {
            return Err(Error::invalid("KFN sizes must be positive"));
        }
        let g = ParamGroup::Kfn;
        let conv1 = Conv::new(params, rng, &format!("{name}.conv1"), g, config.k * config.channels, config.hidden, 3);
        let conv2 = Conv::new(params, rng, &format!("{name}.conv2"), g, config.hidden, config.mask_channels(), 3);
        Ok(KfnParams { config, conv1, conv2 })
    }
}

/// conv3×3 → ReLU → conv3×3 → ReLU → softmax over the layers.
/// Returns `[K, H, W]`, or `[K·C, H, W]` in per-channel mode.
pub fn kfn_mask<T: Real>(g: &mut Graph<T>, b: &Bound, kfn: &KfnParams, stack: &FeatureStack) -> Result<Var> {
    let cfg = &kfn.config;
    if stack.k != cfg.k || stack.channels != cfg.channels {
        return Err(Error::shape(format!(
            "KFN built for K={}, C={} but stack has K={}, C={}",
            cfg.k, cfg.channels, stack.k, stack.channels
        )));
    }
    let h = kfn.conv1.forward(g, b, stack.var)?;
    let h = g.relu(h);
    let h = kfn.conv2.forward(g, b, h)?;
    let h = g.relu(h);
    let (hh, ww) = (stack.height, stack.width);
    let rest = cfg.mask_channels() / cfg.k * hh * ww;
    let flat = g.reshape(h, vec![cfg.k, rest])?;
    let m = g.softmax(flat, 0)?;
    g.reshape(m, vec![cfg.mask_channels(), hh, ww])
}

/// `fused[c] = Σ_k mask[k] · stack[k·C + c]`, shape `[C, H, W]`.
pub fn fuse<T: Real>(g: &mut Graph<T>, stack: &FeatureStack, mask: Var) -> Result<Var> {
    g.fuse(mask, stack.var, stack.k)
}

/// Fusion used when the network is disabled: the nearest layer passes through.
pub fn front_layer<T: Real>(g: &mut Graph<T>, stack: &FeatureStack) -> Result<Var> {
    let hw = stack.height * stack.width;
    let mut m = vec![T::zero(); stack.k * hw];
    m[..hw].fill(T::one());
    let mask = g.constant(Tensor::new(vec![stack.k, stack.height, stack.width], m)?);
    fuse(g, stack, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, CheckMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack_from(g: &mut Graph<f64>, k: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> FeatureStack {
        let var = g.constant(Tensor::new(vec![k * c, h, w], data).unwrap());
        FeatureStack { var, mask: vec![true; k * h * w], k, height: h, width: w, channels: c }
    }

    fn random_data(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn net(k: usize, c: usize, hidden: usize, seed: u64) -> (Params<f64>, KfnParams) {
        let mut p = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = KfnConfig { hidden, ..KfnConfig::new(k, c) };
        let kfn = KfnParams::new(&mut p, &mut rng, "kfn", cfg).unwrap();
        (p, kfn)
    }

    #[test]
    fn zero_parameters_give_uniform_mask() {
        let (mut p, kfn) = net(4, 3, 8, 1);
        p.fill_prefix("kfn", 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let b = g.bind(&p);
        let s = stack_from(&mut g, 4, 3, 5, 6, random_data(&mut rng, 4 * 3 * 30));
        let m = kfn_mask(&mut g, &b, &kfn, &s).unwrap();
        assert!(g.value(m).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn mismatched_stack_rejected() {
        let (p, kfn) = net(4, 3, 8, 1);
        let mut g = Graph::new();
        let b = g.bind(&p);
        let s = stack_from(&mut g, 2, 3, 2, 2, vec![0.0; 24]);
        assert!(matches!(kfn_mask(&mut g, &b, &kfn, &s), Err(Error::Shape(_))));
    }

    #[test]
    fn one_hot_and_single_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let data = random_data(&mut rng, 3 * 2 * 4);
        let s = stack_from(&mut g, 3, 2, 2, 2, data.clone());
        let mut onehot = vec![0.0; 12];
        onehot[8..].fill(1.0); // layer 2
        let m = g.constant(Tensor::new(vec![3, 2, 2], onehot).unwrap());
        let f = fuse(&mut g, &s, m).unwrap();
        assert_eq!(g.value(f).data(), &data[16..]);

        let (p, kfn) = net(1, 2, 4, 4);
        let b = g.bind(&p);
        let s1 = stack_from(&mut g, 1, 2, 2, 2, data[..8].to_vec());
        let m = kfn_mask(&mut g, &b, &kfn, &s1).unwrap();
        assert!(g.value(m).data().iter().all(|&v| v == 1.0));
        let f = fuse(&mut g, &s1, m).unwrap();
        assert_eq!(g.value(f).data(), &data[..8]);
        let f = front_layer(&mut g, &s1).unwrap();
        assert_eq!(g.value(f).data(), &data[..8]);
    }

    #[test]
    fn empty_pixels_fuse_to_zero() {
        let (p, kfn) = net(2, 2, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut data = random_data(&mut rng, 2 * 2 * 9);
        // Pixel 4 empty in both layers.
        for ch in 0..4 {
            data[ch * 9 + 4] = 0.0;
        }
        let mut g = Graph::new();
        let b = g.bind(&p);
        let s = stack_from(&mut g, 2, 2, 3, 3, data);
        let m = kfn_mask(&mut g, &b, &kfn, &s).unwrap();
        let f = fuse(&mut g, &s, m).unwrap();
        assert_eq!(g.value(f).data()[4], 0.0);
        assert_eq!(g.value(f).data()[9 + 4], 0.0);
    }

    #[test]
    fn permutation_equivariance() {
        let (k, c, hidden) = (4, 2, 6);
        let (p, kfn) = net(k, c, hidden, 7);
        let perm = [2usize, 0, 3, 1]; // new layer i holds old layer perm[i]
        let mut q = p.clone();
        {
            let k1 = p.get(kfn.conv1.k).data();
            let dst = q.get_mut(kfn.conv1.k).data_mut();
            for o in 0..hidden {
                for (i, &src) in perm.iter().enumerate() {
                    for ch in 0..c {
                        let (to, from) = ((o * k * c + i * c + ch) * 9, (o * k * c + src * c + ch) * 9);
                        dst[to..to + 9].copy_from_slice(&k1[from..from + 9]);
                    }
                }
            }
            let k2 = p.get(kfn.conv2.k).data();
            let dst = q.get_mut(kfn.conv2.k).data_mut();
            let per = hidden * 9;
            for (i, &src) in perm.iter().enumerate() {
                dst[i * per..(i + 1) * per].copy_from_slice(&k2[src * per..(src + 1) * per]);
            }
            let b2 = p.get(kfn.conv2.b).data().to_vec();
            let dst = q.get_mut(kfn.conv2.b).data_mut();
            for (i, &src) in perm.iter().enumerate() {
                dst[i] = b2[src];
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hw = 25;
        let data = random_data(&mut rng, k * c * hw);
        let mut permuted = vec![0.0; data.len()];
        for (i, &src) in perm.iter().enumerate() {
            permuted[i * c * hw..(i + 1) * c * hw].copy_from_slice(&data[src * c * hw..(src + 1) * c * hw]);
        }
        let mut g = Graph::new();
        let (bp, bq) = (g.bind(&p), g.bind(&q));
        let s = stack_from(&mut g, k, c, 5, 5, data);
        let sp = stack_from(&mut g, k, c, 5, 5, permuted);
        let m = kfn_mask(&mut g, &bp, &kfn, &s).unwrap();
        let mp = kfn_mask(&mut g, &bq, &kfn, &sp).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for px in 0..hw {
                let a = g.value(mp).data()[i * hw + px];
                let b = g.value(m).data()[src * hw + px];
                assert!((a - b).abs() < 1e-12);
            }
        }
        let f = fuse(&mut g, &s, m).unwrap();
        let fp = fuse(&mut g, &sp, mp).unwrap();
        for (a, b) in g.value(f).data().iter().zip(g.value(fp).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn param_count_growth_in_k() {
        let (c, hidden) = (8, 64);
        let count = |k| KfnConfig::new(k, c).param_count();
        for (k1, k2) in [(1, 2), (2, 4), (4, 8)] {
            let conv1 = (k2 - k1) * c * hidden * 9;
            let conv2 = (k2 - k1) * (hidden * 9 + 1);
            assert_eq!(count(k2) - count(k1), conv1 + conv2);
        }
        let (p, _) = net(8, 8, 64, 0);
        assert_eq!(p.scalar_count(), count(8));
    }

    #[test]
    fn gradients_through_mask_and_fuse() {
        let (k, c) = (3, 2);
        let (mut p, kfn) = net(k, c, 4, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let stack_id = p.add("stack", ParamGroup::Kfn, Tensor::new(vec![k * c, 4, 4], random_data(&mut rng, k * c * 16)).unwrap());
        let target = random_data(&mut rng, c * 16);
        let r = grad_check(
            &p,
            |g, b| {
                let s = FeatureStack { var: b[stack_id], mask: vec![true; k * 16], k, height: 4, width: 4, channels: c };
                let m = kfn_mask(g, b, &kfn, &s)?;
                let f = fuse(g, &s, m)?;
                g.mse(f, &target)
            },
            1e-5,
            CheckMode::Coordinates { max_per_tensor: 60 },
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn per_channel_mask_normalizes_per_channel() {
        let mut p = Params::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = KfnConfig { per_channel: true, hidden: 4, ..KfnConfig::new(3, 2) };
        let kfn = KfnParams::new(&mut p, &mut rng, "kfn", cfg).unwrap();
        let mut g = Graph::new();
        let b = g.bind(&p);
        let s = stack_from(&mut g, 3, 2, 3, 3, random_data(&mut rng, 54));
        let m = kfn_mask(&mut g, &b, &kfn, &s).unwrap();
        assert_eq!(g.shape(m), &[6, 3, 3]);
        let mv = g.value(m).data();
        for ch in 0..2 {
            for px in 0..9 {
                let sum: f64 = (0..3).map(|l| mv[(l * 2 + ch) * 9 + px]).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        assert!(fuse(&mut g, &s, m).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn mask_sums_to_one_and_fusion_is_convex(seed in any::<u64>(), k in 1usize..5, c in 1usize..4) {
            let (p, kfn) = net(k, c, 5, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let (h, w) = (3, 4);
            let data: Vec<f64> = (0..k * c * h * w).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut g = Graph::new();
            let b = g.bind(&p);
            let s = stack_from(&mut g, k, c, h, w, data.clone());
            let m = kfn_mask(&mut g, &b, &kfn, &s).unwrap();
            let mv = g.value(m).data().to_vec();
            for px in 0..h * w {
                let sum: f64 = (0..k).map(|l| mv[l * h * w + px]).sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
            let f = fuse(&mut g, &s, m).unwrap();
            let fv = g.value(f).data();
            for ch in 0..c {
                for px in 0..h * w {
                    let vals: Vec<f64> = (0..k).map(|l| data[(l * c + ch) * h * w + px]).collect();
                    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let v = fv[ch * h * w + px];
                    prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
                }
            }
        }

        #[test]
        fn identical_layers_fuse_to_that_layer(seed in any::<u64>(), k in 1usize..5) {
            let (c, h, w) = (2, 3, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Short dyadic values keep every partial sum exactly representable.
            let layer: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-4096i32..4096) as f64 / 1024.0).collect();
            let data: Vec<f64> = (0..k).flat_map(|_| layer.clone()).collect();
            let mut g = Graph::new();
            let s = stack_from(&mut g, k, c, h, w, data);
            // Any mask whose layer weights sum to 1 per pixel; dyadic so sums are exact.
            let mut m = vec![0.0; k * h * w];
            for px in 0..h * w {
                let mut left = 1.0;
                for l in 0..k - 1 {
                    let v = if rng.random_bool(0.5) { left / 2.0 } else { 0.0 };
                    m[l * h * w + px] = v;
                    left -= v;
                }
                m[(k - 1) * h * w + px] = left;
            }
            let mv = g.constant(Tensor::new(vec![k, h, w], m).unwrap());
            let f = fuse(&mut g, &s, mv).unwrap();
            prop_assert_eq!(g.value(f).data(), &layer[..]);
        }
    }
}
