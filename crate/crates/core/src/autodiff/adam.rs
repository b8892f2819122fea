use crate::autodiff::{ParamId, Params};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &Params<T>, cfg: AdamConfig) -> Self {
        let zeros = |_| params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Adam {
            cfg,
            m: zeros(()),
            v: zeros(()),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i]` belongs to parameter `i`; `None` leaves the
    /// parameter and its moments untouched. `lr(id)` gives the rate for this step.
    pub fn step(&mut self, params: &mut Params<T>, grads: &[Option<&[T]>], lr: impl Fn(ParamId) -> f64) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        let (b1, b2) = (T::lit(self.cfg.beta1), T::lit(self.cfg.beta2));
        let (one, eps) = (T::one(), T::lit(self.cfg.eps));
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            let Some(g) = grads[id.0] else { continue };
            let rate = lr(id);
            let step_size = T::lit(rate / c1);
            let inv_c2 = T::lit(1.0 / c2);
            let p = params.get_mut(id).data_mut();
            assert_eq!(g.len(), p.len(), "gradient shape");
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                p[j] -= step_size * m[j] / ((v[j] * inv_c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, ParamGroup, Tensor};

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Params::<f64>::new();
        let id = p.add("w", ParamGroup::Radiance, Tensor::from_f64(vec![3], &[1.0, -2.0, 0.5]).unwrap());
        let mut adam = Adam::new(&p, AdamConfig::default());
        let g = [0.3, -7.0, 1e-3];
        adam.step(&mut p, &[Some(&g)], |_| 0.01);
        let after = p.get(id).data();
        for ((a, b), gi) in after.iter().zip([1.0, -2.0, 0.5]).zip(g) {
            let delta = a - b;
            assert!(delta.abs() <= 0.01 * (1.0 + 1e-6));
            assert!((delta + 0.01 * gi.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Params::<f32>::new();
        p.add("w", ParamGroup::Kfn, Tensor::full(vec![4], 0.25));
        let before = p.clone();
        let mut adam = Adam::new(&p, AdamConfig::default());
        let g = [0.0f32; 4];
        for _ in 0..100 {
            adam.step(&mut p, &[Some(&g)], |_| 0.1);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = Params::<f64>::new();
        let id = p.add("w", ParamGroup::Radiance, Tensor::from_f64(vec![3], &[1.0, -0.7, 0.4]).unwrap());
        let mut adam = Adam::new(&p, AdamConfig::default());
        for _ in 0..2000 {
            let mut g = Graph::new();
            let b = g.bind(&p);
            let w = b[id];
            let sq = g.mul(w, w).unwrap();
            let f = g.weighted_sum(sq, &[1.0; 3]).unwrap();
            g.backward(f).unwrap();
            let grad = g.grad(w).unwrap().to_vec();
            adam.step(&mut p, &[Some(&grad)], |_| 1e-2);
        }
        let norm = p.get(id).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "‖w‖ = {norm}");
    }
}
