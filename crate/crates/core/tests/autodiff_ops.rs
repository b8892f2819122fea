//! Finite-difference checks of every differentiable graph op at f64 across
//! random shapes and values.

use kbuffers::autodiff::{grad_check, Bound, CheckMode, Graph, ParamGroup, Params, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

/// Uniform values kept away from zero so ReLU kinks never sit inside a
/// difference stencil.
fn values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect()
}

fn params(rng: &mut ChaCha8Rng, shapes: &[Vec<usize>]) -> Params<f64> {
    let mut p = Params::new();
    for (i, s) in shapes.iter().enumerate() {
        let data = values(rng, s.iter().product());
        p.add(format!("p{i}"), ParamGroup::Radiance, Tensor::new(s.clone(), data).unwrap());
    }
    p
}

/// Reduces `y` with fixed pseudo-random weights so every output entry matters.
fn reduce(g: &mut Graph<f64>, y: Var) -> kbuffers::Result<Var> {
    let n = g.value(y).len();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.618).sin()).collect();
    g.weighted_sum(y, &w)
}

fn check(p: &Params<f64>, f: impl Fn(&mut Graph<f64>, &Bound) -> kbuffers::Result<Var>) -> f64 {
    let a = grad_check(p, &f, H, CheckMode::Coordinates { max_per_tensor: 40 }).unwrap();
    let b = grad_check(p, &f, H, CheckMode::Projections { count: 3, seed: 5 }).unwrap();
    a.max_rel_err.max(b.max_rel_err)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_and_pointwise(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
        let p = params(&mut rng, &[vec![m, k], vec![k, n], vec![n], vec![m, n]]);
        let e = check(&p, |g, b| {
            let v = b.vars();
            let y = g.dense(v[0], v[1], Some(v[2]))?;
            let a = g.relu(y);
            let s = g.sigmoid(y);
            let sp = g.softplus(y);
            let t = g.mul(s, v[3])?;
            let u = g.add(a, sp)?;
            let z = g.add(t, u)?;
            reduce(g, z)
        });
        prop_assert!(e < TOL, "rel err {e}");
    }

    #[test]
    fn conv_and_instance_norm(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // At least two input channels: a single 1×1 weight only scales the
        // channel, which the normalization undoes, leaving a zero gradient.
        let (cin, cout) = (rng.random_range(2..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));
        let ks = [1, 3][rng.random_range(0..2)];
        let p = params(&mut rng, &[vec![cin, h, w], vec![cout, cin, ks, ks], vec![cout], vec![cout]]);
        let e = check(&p, |g, b| {
            let v = b.vars();
            // The normalization cancels a conv bias exactly, so its gradient is
            // identically zero and a relative check would only see roundoff.
            let bias = g.constant(Tensor::zeros(vec![cout]));
            let y = g.conv2d(v[0], v[1], bias)?;
            let y = g.instance_norm(y, v[2], v[3], 1e-5)?;
            reduce(g, y)
        });
        prop_assert!(e < TOL, "rel err {e}");
    }

    #[test]
    fn softmax_along_any_axis(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = vec![rng.random_range(1..5), rng.random_range(1..4), rng.random_range(1..4)];
        let axis = rng.random_range(0..3);
        let p = params(&mut rng, &[shape]);
        let e = check(&p, |g, b| {
            let y = g.softmax(b.vars()[0], axis)?;
            reduce(g, y)
        });
        prop_assert!(e < TOL, "rel err {e}");
    }

    #[test]
    fn resampling_padding_and_cropping(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(1..3);
        let (h, w) = (2 * rng.random_range(1..4), 2 * rng.random_range(1..4));
        let p = params(&mut rng, &[vec![c, h, w]]);
        let pads = [rng.random_range(0..4), rng.random_range(0..4), rng.random_range(0..4), rng.random_range(0..4)];
        let e = check(&p, |g, b| {
            let x = b.vars()[0];
            let d = g.downsample2(x)?;
            let u = g.upsample2(d)?;
            let s = g.add(u, x)?;
            let padded = g.reflect_pad(s, pads[0], pads[1], pads[2], pads[3])?;
            let cropped = g.crop(padded, pads[0] / 2, pads[2] / 2, h, w)?;
            let flat = g.reshape(cropped, vec![c * h * w])?;
            reduce(g, flat)
        });
        prop_assert!(e < TOL, "rel err {e}");
    }

    #[test]
    fn gather_concat_slice_scatter_fuse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, c, h, w) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let hw = h * w;
        let rows = rng.random_range(1..5);
        // Distinct targets, some cells left empty.
        let mut cells: Vec<usize> = (0..k * hw).collect();
        for i in (1..cells.len()).rev() {
            cells.swap(i, rng.random_range(0..=i));
        }
        let m = rng.random_range(1..=k * hw);
        let targets = cells[..m].to_vec();
        let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..rows)).collect();
        let per_channel = rng.random_bool(0.5);
        let mask_ch = if per_channel { k * c } else { k };
        let p = params(&mut rng, &[vec![rows, c], vec![rows, 2], vec![mask_ch, h, w]]);
        let e = check(&p, |g, b| {
            let v = b.vars();
            let both = g.concat(&[v[0], v[1]], 1)?;
            let feat = g.slice_cols(both, 0, c)?;
            let per_slot = g.gather_rows(feat, &idx)?;
            let stack = g.scatter_stack(per_slot, &targets, k, h, w)?;
            let y = g.fuse(v[2], stack, k)?;
            reduce(g, y)
        });
        prop_assert!(e < TOL, "rel err {e}");
    }

    #[test]
    fn density_compositing_and_mse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(1..4);
        let lens: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(0..4)).collect();
        let m: usize = lens.iter().sum::<usize>().max(1);
        let mut groups = Vec::new();
        let mut start = 0;
        for &l in &lens {
            groups.push((start, l));
            start += l;
        }
        let delta: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..0.5)).collect();
        let target: Vec<f64> = (0..groups.len() * c).map(|_| rng.random_range(0.0..1.0)).collect();
        let p = params(&mut rng, &[vec![m], vec![m, c]]);
        let e = check(&p, |g, b| {
            let v = b.vars();
            let sigma = g.softplus(v[0]);
            let alpha = g.alpha_from_density(sigma, &delta)?;
            let color = g.sigmoid(v[1]);
            let out = g.composite(alpha, color, &groups)?;
            g.mse(out, &target)
        });
        prop_assert!(e < TOL, "rel err {e}");
    }
}


