use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bound, Graph, Params, Var};
use crate::error::{Error, Result};

/// Which directions the finite differences probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMode {
    /// Every scalar coordinate, up to `max_per_tensor` per tensor (evenly strided).
    Coordinates { max_per_tensor: usize },
    /// `count` random Gaussian directions across all parameters at once.
    Projections { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: usize,
    /// Parameter name (or "projection") at the worst probe.
    pub worst: String,
}

const REL_FLOOR: f64 = 1e-7;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn eval<F>(params: &Params<f64>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let b = g.bind(params);
    let out = f(&mut g, &b)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::shape("grad_check: function must return a scalar"));
    }
    Ok(v.data()[0])
}

/// Compares reverse-mode gradients of the scalar `f(params)` against central
/// differences with step `h`.
pub fn grad_check<F>(params: &Params<f64>, f: F, h: f64, mode: CheckMode) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let b = g.bind(params);
    let out = f(&mut g, &b)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = params
        .ids()
        .map(|id| {
            g.grad(b[id])
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; params.get(id).len()])
        })
        .collect();
    drop(g);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        probes: 0,
        worst: String::new(),
    };
    let mut work = params.clone();
    match mode {
        CheckMode::Coordinates { max_per_tensor } => {
            for id in params.ids() {
                let n = params.get(id).len();
                let stride = n.div_ceil(max_per_tensor.max(1)).max(1);
                for j in (0..n).step_by(stride) {
                    let orig = params.get(id).data()[j];
                    work.get_mut(id).data_mut()[j] = orig + h;
                    let fp = eval(&work, &f)?;
                    work.get_mut(id).data_mut()[j] = orig - h;
                    let fm = eval(&work, &f)?;
                    work.get_mut(id).data_mut()[j] = orig;
                    let num = (fp - fm) / (2.0 * h);
                    let e = rel_err(analytic[id.0][j], num);
                    report.probes += 1;
                    if e > report.max_rel_err || report.worst.is_empty() {
                        report.max_rel_err = report.max_rel_err.max(e);
                        report.worst = format!("{}[{j}]", params.name(id));
                    }
                }
            }
        }
        CheckMode::Projections { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..count {
                let dirs: Vec<Vec<f64>> = params
                    .tensors()
                    .iter()
                    .map(|t| (0..t.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                let shift = |sign: f64, work: &mut Params<f64>| {
                    for id in params.ids() {
                        let base = params.get(id).data();
                        for (j, w) in work.get_mut(id).data_mut().iter_mut().enumerate() {
                            *w = base[j] + sign * h * dirs[id.0][j];
                        }
                    }
                };
                shift(1.0, &mut work);
                let fp = eval(&work, &f)?;
                shift(-1.0, &mut work);
                let fm = eval(&work, &f)?;
                let num = (fp - fm) / (2.0 * h);
                let ana: f64 = analytic
                    .iter()
                    .zip(&dirs)
                    .flat_map(|(a, d)| a.iter().zip(d).map(|(x, y)| x * y))
                    .sum();
                let e = rel_err(ana, num);
                report.probes += 1;
                if e >= report.max_rel_err {
                    report.max_rel_err = e;
                    report.worst = "projection".into();
                }
            }
        }
    }
    Ok(report)
}
