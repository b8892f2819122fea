//! Parameterized layers built from graph ops.

use rand::Rng;

use crate::autodiff::{Bound, Graph, ParamGroup, ParamId, Params, Tensor, Var};
use crate::error::Result;
use crate::real::Real;

/// `U(-1/√fan_in, 1/√fan_in)` values, drawn in f64 so both precisions see the
/// same initial weights up to rounding.
pub fn uniform_init<T: Real, R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let w = params.add(format!("{name}.w"), group, uniform_init(rng, vec![fan_in, fan_out], fan_in));
        let b = params.add(format!("{name}.b"), group, uniform_init(rng, vec![fan_out], fan_in));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bound: &Bound, x: Var) -> Result<Var> {
        g.dense(x, bound[self.w], Some(bound[self.b]))
    }

    pub fn param_count(fan_in: usize, fan_out: usize) -> usize {
        fan_in * fan_out + fan_out
    }
}

/// Same-padding convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub k: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub size: usize,
}

impl Conv {
    pub fn new<T: Real, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        cin: usize,
        cout: usize,
        size: usize,
    ) -> Self {
        let fan_in = cin * size * size;
        let k = params.add(
            format!("{name}.k"),
            group,
            uniform_init(rng, vec![cout, cin, size, size], fan_in),
        );
        let b = params.add(format!("{name}.b"), group, uniform_init(rng, vec![cout], fan_in));
        Conv { k, b, cin, cout, size }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bound: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, bound[self.k], bound[self.b])
    }

    pub fn param_count(cin: usize, cout: usize, size: usize) -> usize {
        cout * cin * size * size + cout
    }
}

/// `instance_norm(relu(feat(x) ⊙ σ(gate(x))))` with 3×3 convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatedBlock {
    pub feat: Conv,
    pub gate: Conv,
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const NORM_EPS: f64 = 1e-5;

impl GatedBlock {
    pub fn new<T: Real, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        cin: usize,
        cout: usize,
    ) -> Self {
        let feat = Conv::new(params, rng, &format!("{name}.feat"), group, cin, cout, 3);
        let gate = Conv::new(params, rng, &format!("{name}.gate"), group, cin, cout, 3);
        let gain = params.add(format!("{name}.norm.gain"), group, Tensor::full(vec![cout], T::one()));
        let bias = params.add(format!("{name}.norm.bias"), group, Tensor::zeros(vec![cout]));
        GatedBlock { feat, gate, gain, bias }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bound: &Bound, x: Var) -> Result<Var> {
        let f = self.feat.forward(g, bound, x)?;
        let gate = self.gate.forward(g, bound, x)?;
        let gate = g.sigmoid(gate);
        let y = g.mul(f, gate)?;
        let y = g.relu(y);
        g.instance_norm(y, bound[self.gain], bound[self.bias], NORM_EPS)
    }

    pub fn param_count(cin: usize, cout: usize) -> usize {
        2 * Conv::param_count(cin, cout, 3) + 2 * cout
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, CheckMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(g: &mut Graph<f64>, rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Var {
        let t = uniform_init::<f64, _>(rng, shape, 1);
        g.constant(t)
    }

    #[test]
    fn pointwise_conv_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = Params::<f64>::new();
        let conv = Conv::new(&mut p, &mut rng, "c", ParamGroup::Kfn, 3, 4, 1);
        let mut g = Graph::new();
        let b = g.bind(&p);
        let x = input(&mut g, &mut rng, vec![3, 5, 6]);
        let y = conv.forward(&mut g, &b, x).unwrap();

        // Oracle: per-pixel dense with the 1×1 kernel transposed to [in, out].
        let xv = g.value(x).data().to_vec();
        let k = p.get(conv.k).data();
        let bias = p.get(conv.b).data();
        let yv = g.value(y).data();
        for o in 0..4 {
            for pix in 0..30 {
                let want: f64 = bias[o] + (0..3).map(|c| k[o * 3 + c] * xv[c * 30 + pix]).sum::<f64>();
                assert!((yv[o * 30 + pix] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = Params::<f64>::new();
        let conv = Conv::new(&mut p, &mut rng, "c", ParamGroup::Kfn, 2, 3, 3);
        p.add("x", ParamGroup::Kfn, uniform_init(&mut rng, vec![2, 4, 5], 1));
        let x_id = p.find("x").unwrap();
        let target: Vec<f64> = (0..60).map(|i| (i as f64 * 0.1).cos()).collect();
        let r = grad_check(
            &p,
            |g, b| {
                let y = conv.forward(g, b, b[x_id])?;
                g.mse(y, &target)
            },
            1e-5,
            CheckMode::Coordinates { max_per_tensor: 1000 },
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-5, "{r:?}");
    }

    #[test]
    fn instance_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = Params::<f64>::new();
        let x = p.add("x", ParamGroup::Decoder, uniform_init(&mut rng, vec![2, 3, 3], 1));
        let gain = p.add("gain", ParamGroup::Decoder, uniform_init(&mut rng, vec![2], 1));
        let bias = p.add("bias", ParamGroup::Decoder, uniform_init(&mut rng, vec![2], 1));
        let w: Vec<f64> = (0..18).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let r = grad_check(
            &p,
            |g, b| {
                let y = g.instance_norm(b[x], b[gain], b[bias], NORM_EPS)?;
                let y2 = g.mul(y, y)?;
                g.weighted_sum(y2, &w)
            },
            1e-5,
            CheckMode::Coordinates { max_per_tensor: 100 },
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn saturated_gate_reduces_to_plain_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = Params::<f64>::new();
        let block = GatedBlock::new(&mut p, &mut rng, "blk", ParamGroup::Decoder, 3, 4);
        p.get_mut(block.gate.b).data_mut().fill(1e3);
        let mut g = Graph::new();
        let b = g.bind(&p);
        let x = input(&mut g, &mut rng, vec![3, 6, 6]);
        let y = block.forward(&mut g, &b, x).unwrap();
        let f = block.feat.forward(&mut g, &b, x).unwrap();
        let f = g.relu(f);
        let want = g.instance_norm(f, b[block.gain], b[block.bias], NORM_EPS).unwrap();
        for (a, w) in g.value(y).data().iter().zip(g.value(want).data()) {
            assert!((a - w).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_feature_conv_yields_norm_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = Params::<f64>::new();
        let block = GatedBlock::new(&mut p, &mut rng, "blk", ParamGroup::Decoder, 2, 3);
        p.fill_prefix("blk.feat", 0.0);
        p.get_mut(block.bias).data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
        let mut g = Graph::new();
        let b = g.bind(&p);
        let x = input(&mut g, &mut rng, vec![2, 4, 4]);
        let y = block.forward(&mut g, &b, x).unwrap();
        for (c, chunk) in g.value(y).data().chunks(16).enumerate() {
            assert!(chunk.iter().all(|&v| v == [0.1, -0.2, 0.3][c]));
        }
    }

    #[test]
    fn gated_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut p = Params::<f64>::new();
        let block = GatedBlock::new(&mut p, &mut rng, "blk", ParamGroup::Decoder, 2, 2);
        let x = p.add("x", ParamGroup::Decoder, uniform_init(&mut rng, vec![2, 4, 4], 1));
        let w: Vec<f64> = (0..32).map(|i| ((i * 11) % 7) as f64 * 0.3 - 1.0).collect();
        let r = grad_check(
            &p,
            |g, b| {
                let y = block.forward(g, b, b[x])?;
                let y = g.sigmoid(y);
                g.weighted_sum(y, &w)
            },
            1e-5,
            CheckMode::Coordinates { max_per_tensor: 200 },
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn counts() {
        assert_eq!(Linear::param_count(48, 64) + Linear::param_count(64, 8), 3656);
        assert_eq!(GatedBlock::param_count(1, 1), 2 * 10 + 2);
    }
}
