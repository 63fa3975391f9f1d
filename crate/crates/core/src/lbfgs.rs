//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! Search directions come from the standard two-loop recursion over the last
//! m correction pairs, with the initial Hessian scaled by (s'y)/(y'y). The
//! line search brackets with step doubling and refines with safeguarded
//! cubic interpolation until both the sufficient-decrease and the strong
//! curvature condition hold.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    /// Number of correction pairs kept.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the gradient sup-norm drops to this level.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 400,
            grad_tol: 1e-5,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.memory == 0 {
            return Err("memory must be >= 1".into());
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(format!("need 0 < c1 < c2 < 1, got c1={} c2={}", self.c1, self.c2));
        }
        if self.max_line_search == 0 {
            return Err("max_line_search must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimStatus {
    Converged,
    MaxIters,
    LineSearchFailed,
}

impl std::fmt::Display for OptimStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimStatus::Converged => write!(f, "converged"),
            OptimStatus::MaxIters => write!(f, "max_iters"),
            OptimStatus::LineSearchFailed => write!(f, "line_search_failed"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub solution: Vec<f64>,
    pub final_value: f64,
    /// Gradient sup-norm at the solution.
    pub final_grad_norm: f64,
    /// Accepted steps taken.
    pub iterations: usize,
    pub status: OptimStatus,
}

/// One row of the optimization trace: state after `iter` accepted steps.
#[derive(Debug, Clone, Copy)]
pub struct IterRecord {
    pub iter: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub step_len: f64,
}

impl IterRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.iter, self.f, self.grad_norm, self.step_len)
    }
}

pub fn minimize<F>(f: F, x0: &[f64], cfg: &LbfgsConfig) -> OptimResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    minimize_with_trace(f, x0, cfg, None)
}

pub fn minimize_with_trace<F>(
    mut f: F,
    x0: &[f64],
    cfg: &LbfgsConfig,
    mut trace: Option<&mut Vec<IterRecord>>,
) -> OptimResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if let Err(msg) = cfg.validate() {
        panic!("invalid L-BFGS configuration: {msg}");
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut grad) = f(&x);
    assert_eq!(grad.len(), n, "gradient length mismatch");

    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(cfg.memory);
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(cfg.memory);
    let mut rho_hist: VecDeque<f64> = VecDeque::with_capacity(cfg.memory);

    let mut iterations = 0;
    let record = |trace: &mut Option<&mut Vec<IterRecord>>, iter, f, g, step| {
        if let Some(t) = trace.as_deref_mut() {
            t.push(IterRecord {
                iter,
                f,
                grad_norm: g,
                step_len: step,
            });
        }
    };

    if !fx.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return OptimResult {
            solution: x,
            final_value: fx,
            final_grad_norm: f64::INFINITY,
            iterations: 0,
            status: OptimStatus::LineSearchFailed,
        };
    }

    let mut gnorm = sup_norm(&grad);
    record(&mut trace, 0, fx, gnorm, 0.0);

    let status = loop {
        if gnorm <= cfg.grad_tol {
            break OptimStatus::Converged;
        }
        if iterations >= cfg.max_iters {
            break OptimStatus::MaxIters;
        }

        let mut dir = two_loop(&grad, &s_hist, &y_hist, &rho_hist);
        let mut gtd = dot(&grad, &dir);
        if gtd >= 0.0 {
            // Non-descent direction from stale curvature; restart from
            // steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = grad.iter().map(|g| -g).collect();
            gtd = -dot(&grad, &grad);
        }

        let alpha_init = if s_hist.is_empty() {
            (1.0 / l2_norm(&grad)).min(1.0)
        } else {
            1.0
        };

        match strong_wolfe(&mut f, &x, fx, &grad, &dir, gtd, alpha_init, cfg) {
            Some(accepted) => {
                let s: Vec<f64> = accepted
                    .x
                    .iter()
                    .zip(x.iter())
                    .map(|(a, b)| a - b)
                    .collect();
                let yv: Vec<f64> = accepted
                    .grad
                    .iter()
                    .zip(grad.iter())
                    .map(|(a, b)| a - b)
                    .collect();
                let sy = dot(&s, &yv);
                if sy > 1e-10 * l2_norm(&s) * l2_norm(&yv) {
                    if s_hist.len() == cfg.memory {
                        s_hist.pop_front();
                        y_hist.pop_front();
                        rho_hist.pop_front();
                    }
                    rho_hist.push_back(1.0 / sy);
                    s_hist.push_back(s);
                    y_hist.push_back(yv);
                }
                let step = accepted.alpha;
                x = accepted.x;
                fx = accepted.f;
                grad = accepted.grad;
                gnorm = sup_norm(&grad);
                iterations += 1;
                record(&mut trace, iterations, fx, gnorm, step);
            }
            None => break OptimStatus::LineSearchFailed,
        }
    };

    OptimResult {
        solution: x,
        final_value: fx,
        final_grad_norm: gnorm,
        iterations,
        status,
    }
}

/// Two-loop recursion: applies the implicit inverse-Hessian approximation to
/// the gradient and negates, yielding the search direction.
fn two_loop(
    grad: &[f64],
    s_hist: &VecDeque<Vec<f64>>,
    y_hist: &VecDeque<Vec<f64>>,
    rho_hist: &VecDeque<f64>,
) -> Vec<f64> {
    let m = s_hist.len();
    let mut q = grad.to_vec();
    if m == 0 {
        for v in q.iter_mut() {
            *v = -*v;
        }
        return q;
    }
    let mut alpha = vec![0.0; m];
    for i in (0..m).rev() {
        alpha[i] = rho_hist[i] * dot(&s_hist[i], &q);
        axpy(-alpha[i], &y_hist[i], &mut q);
    }
    let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for i in 0..m {
        let beta = rho_hist[i] * dot(&y_hist[i], &q);
        axpy(alpha[i] - beta, &s_hist[i], &mut q);
    }
    for v in q.iter_mut() {
        *v = -*v;
    }
    q
}

struct Accepted {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    grad: Vec<f64>,
}

struct Probe {
    alpha: f64,
    f: f64,
    dphi: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

/// Strong Wolfe line search: bracketing phase with step doubling, then a
/// safeguarded cubic-interpolation zoom. Returns None when no acceptable
/// point is found within the evaluation budget.
#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    dphi0: f64,
    alpha_init: f64,
    cfg: &LbfgsConfig,
) -> Option<Accepted>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    debug_assert!(dphi0 < 0.0);
    let mut evals = 0usize;
    let mut probe = |alpha: f64, evals: &mut usize| -> Probe {
        let xt: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
        let (ft, gt) = f(&xt);
        *evals += 1;
        let dphi = dot(&gt, dir);
        Probe {
            alpha,
            f: ft,
            dphi,
            x: xt,
            grad: gt,
        }
    };

    let armijo = |alpha: f64, ft: f64| ft <= f0 + cfg.c1 * alpha * dphi0;
    let curvature = |dphi: f64| dphi.abs() <= -cfg.c2 * dphi0;

    // Best Armijo-satisfying point seen, used as a fallback when the budget
    // runs out before the curvature condition is met.
    let mut best: Option<Probe> = None;
    let remember = |p: &Probe, best: &mut Option<Probe>| {
        if p.f.is_finite() && armijo(p.alpha, p.f) && p.f < f0 {
            let better = match best {
                Some(b) => p.f < b.f,
                None => true,
            };
            if better {
                *best = Some(Probe {
                    alpha: p.alpha,
                    f: p.f,
                    dphi: p.dphi,
                    x: p.x.clone(),
                    grad: p.grad.clone(),
                });
            }
        }
    };

    let finish = |p: Probe| -> Option<Accepted> {
        Some(Accepted {
            alpha: p.alpha,
            x: p.x,
            f: p.f,
            grad: p.grad,
        })
    };
    let fallback = |best: Option<Probe>| -> Option<Accepted> {
        best.map(|p| Accepted {
            alpha: p.alpha,
            x: p.x,
            f: p.f,
            grad: p.grad,
        })
    };

    // Bracketing phase.
    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        dphi: dphi0,
        x: x.to_vec(),
        grad: g0.to_vec(),
    };
    let mut alpha = alpha_init.max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = loop {
        if evals >= cfg.max_line_search {
            return fallback(best);
        }
        let cur = probe(alpha, &mut evals);
        if !cur.f.is_finite() || !armijo(cur.alpha, cur.f) || (evals > 1 && cur.f >= prev.f) {
            break (prev, cur);
        }
        remember(&cur, &mut best);
        if curvature(cur.dphi) {
            return finish(cur);
        }
        if cur.dphi >= 0.0 {
            break (cur, prev);
        }
        alpha = cur.alpha * 2.0;
        if alpha > 1e12 {
            return fallback(best);
        }
        prev = cur;
    };

    // Zoom phase: lo satisfies Armijo with the lowest value seen, hi is the
    // other bracket end.
    let mut insufficient_progress = false;
    while evals < cfg.max_line_search {
        let (a, b) = if lo.alpha < hi.alpha {
            (lo.alpha, hi.alpha)
        } else {
            (hi.alpha, lo.alpha)
        };
        let width = b - a;
        if !(width.is_finite()) || width < 1e-16 * (1.0 + b) {
            return fallback(best);
        }
        let mut trial = cubic_interpolate(lo.alpha, lo.f, lo.dphi, hi.alpha, hi.f, hi.dphi);
        if !trial.is_finite() || trial <= a || trial >= b {
            trial = 0.5 * (a + b);
        }
        // Nudge trials that crowd a boundary, as repeated boundary hugging
        // stalls the bracket shrink.
        let margin = 0.1 * width;
        if (b - trial).min(trial - a) < margin {
            if insufficient_progress || trial >= b || trial <= a {
                trial = if (trial - b).abs() < (trial - a).abs() {
                    b - margin
                } else {
                    a + margin
                };
                insufficient_progress = false;
            } else {
                insufficient_progress = true;
            }
        } else {
            insufficient_progress = false;
        }

        let cur = probe(trial, &mut evals);
        if !cur.f.is_finite() || !armijo(cur.alpha, cur.f) || cur.f >= lo.f {
            hi = cur;
        } else {
            remember(&cur, &mut best);
            if curvature(cur.dphi) {
                return finish(cur);
            }
            if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    fallback(best)
}

/// Minimizer of the cubic through (x1, f1) and (x2, f2) with slopes g1, g2.
/// Returns NaN when the data does not pin down an interior minimum.
fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64) -> f64 {
    if !(f1.is_finite() && f2.is_finite() && g1.is_finite() && g2.is_finite()) {
        return f64::NAN;
    }
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq < 0.0 {
        return f64::NAN;
    }
    let d2 = d2_sq.sqrt();
    if x1 <= x2 {
        x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
    } else {
        x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_quadratic_converges_fast() {
        let b = [1.0, 2.0, 3.0];
        let f = |x: &[f64]| {
            let diff: Vec<f64> = x.iter().zip(b.iter()).map(|(a, t)| a - t).collect();
            (0.5 * dot(&diff, &diff), diff)
        };
        let cfg = LbfgsConfig {
            grad_tol: 1e-10,
            ..Default::default()
        };
        let result = minimize(f, &[0.0, 0.0, 0.0], &cfg);
        assert_eq!(result.status, OptimStatus::Converged);
        assert!(result.iterations <= 3, "{} iterations", result.iterations);
        let err: f64 = result
            .solution
            .iter()
            .zip(b.iter())
            .map(|(a, t)| (a - t) * (a - t))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-8, "distance {err}");
    }

    fn random_spd(dim: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let a = &m * m.transpose() + DMatrix::identity(dim, dim);
        let b = DVector::from_fn(dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        (a, b)
    }

    fn quadratic_obj<'a>(
        a: &'a DMatrix<f64>,
        b: &'a DVector<f64>,
    ) -> impl FnMut(&[f64]) -> (f64, Vec<f64>) + 'a {
        move |x: &[f64]| {
            let xv = DVector::from_column_slice(x);
            let ax = a * &xv;
            let val = 0.5 * xv.dot(&ax) - b.dot(&xv);
            let grad = &ax - b;
            (val, grad.iter().copied().collect())
        }
    }

    #[test]
    fn spd_quadratic_matches_direct_solve() {
        let (a, b) = random_spd(20, 77);
        let solution = a.clone().lu().solve(&b).expect("SPD system solvable");
        // A = MM' + I keeps lambda_min >= 1, so a 1e-7 gradient sup-norm
        // bounds the solution error well below 1e-6.
        let cfg = LbfgsConfig {
            grad_tol: 1e-7,
            max_iters: 500,
            ..Default::default()
        };
        let result = minimize(quadratic_obj(&a, &b), &vec![0.0; 20], &cfg);
        assert_eq!(result.status, OptimStatus::Converged);
        let err: f64 = result
            .solution
            .iter()
            .zip(solution.iter())
            .map(|(x, s)| (x - s) * (x - s))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-6, "distance to direct solve {err}");
    }

    #[test]
    fn rosenbrock_reaches_global_minimum() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let val = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (val, g)
        };
        let cfg = LbfgsConfig {
            grad_tol: 1e-9,
            max_iters: 200,
            ..Default::default()
        };
        let result = minimize(f, &[-1.2, 1.0], &cfg);
        assert_eq!(result.status, OptimStatus::Converged);
        assert!((result.solution[0] - 1.0).abs() < 1e-5);
        assert!((result.solution[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn trace_is_monotone_and_armijo_consistent() {
        let (a, b) = random_spd(8, 5);
        let cfg = LbfgsConfig {
            grad_tol: 1e-7,
            ..Default::default()
        };
        let mut trace = Vec::new();
        let result = minimize_with_trace(quadratic_obj(&a, &b), &vec![0.5; 8], &cfg, Some(&mut trace));
        assert_eq!(result.status, OptimStatus::Converged);
        assert!(trace.len() >= 2);
        for w in trace.windows(2) {
            assert!(w[1].f <= w[0].f, "objective increased: {} -> {}", w[0].f, w[1].f);
            assert!(w[1].step_len > 0.0);
        }
    }

    #[test]
    fn full_memory_quadratic_terminates_within_dimension() {
        // With near-exact line searches (small c2) and memory covering every
        // iteration, the recursion reproduces conjugate-gradient behaviour on
        // a quadratic: at most `dim` steps.
        for seed in [1, 2, 3] {
            let dim = 10;
            let (a, b) = random_spd(dim, seed);
            let cfg = LbfgsConfig {
                memory: 64,
                grad_tol: 1e-6,
                c2: 0.01,
                max_line_search: 50,
                ..Default::default()
            };
            let result = minimize(quadratic_obj(&a, &b), &vec![0.0; dim], &cfg);
            assert_eq!(result.status, OptimStatus::Converged);
            assert!(
                result.iterations <= dim,
                "seed {seed}: {} iterations",
                result.iterations
            );
        }
    }

    #[test]
    fn non_finite_region_fails_gracefully() {
        // f explodes to NaN left of x = -2; start pointing that way.
        let f = |x: &[f64]| {
            if x[0] < -2.0 {
                (f64::NAN, vec![f64::NAN])
            } else {
                ((x[0] + 1.0).powi(2), vec![2.0 * (x[0] + 1.0)])
            }
        };
        let cfg = LbfgsConfig::default();
        let result = minimize(f, &[1.0], &cfg);
        // The minimum at -1 is reachable without entering the bad region.
        assert!(result.final_value <= 1e-8);
        assert!(result.solution[0] > -2.0);
    }

    #[test]
    fn status_converged_implies_tolerance_met() {
        let (a, b) = random_spd(6, 9);
        let cfg = LbfgsConfig {
            grad_tol: 1e-7,
            ..Default::default()
        };
        let result = minimize(quadratic_obj(&a, &b), &vec![0.0; 6], &cfg);
        assert_eq!(result.status, OptimStatus::Converged);
        assert!(result.final_grad_norm <= cfg.grad_tol);
    }

    #[test]
    fn max_iters_status() {
        let (a, b) = random_spd(12, 21);
        let cfg = LbfgsConfig {
            grad_tol: 1e-14,
            max_iters: 2,
            ..Default::default()
        };
        let result = minimize(quadratic_obj(&a, &b), &vec![0.0; 12], &cfg);
        assert_eq!(result.status, OptimStatus::MaxIters);
        assert_eq!(result.iterations, 2);
    }
}
