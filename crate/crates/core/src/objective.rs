//! The layer training objective and its analytic gradient.
//!
//! value = lambda * (recon_x + recon_y) + (g1 - g2) + gamma * ridge
//!
//! Reconstruction runs through corrupted inputs with tied-weight decoders
//! and is averaged over samples and corruption draws; the margin terms
//! g1/g2 are evaluated on hidden representations of the clean inputs and
//! carry their own pair-count normalization. Averaging on both sides keeps
//! lambda a scale-free trade-off: the coupling strength does not silently
//! vanish as the training set grows. The gradient follows the reverse-mode
//! chain rule through the gained tanh, with each weight matrix collecting
//! contributions from both its encoder and its (transposed) decoder role.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::dataset::{corrupt, CorruptionSpec};
use crate::error::{DcanError, Result};
use crate::layer::LayerParams;
use crate::pairs::{margin_terms, PairSets};

#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    /// Reconstruction weight lambda (> 0).
    pub lambda: f64,
    /// Weight decay gamma (>= 0).
    pub gamma: f64,
    pub corruption: CorruptionSpec,
    /// Test switch: when false the margin terms are dropped from value and
    /// gradient, leaving a plain denoising auto-encoder objective.
    pub margin_enabled: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            gamma: 1.0e-4,
            corruption: CorruptionSpec::default(),
            margin_enabled: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(DcanError::Config(format!(
                "lambda {} must be > 0",
                self.lambda
            )));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(DcanError::Config(format!(
                "gamma {} must be >= 0",
                self.gamma
            )));
        }
        self.corruption.validate()
    }
}

/// The individual objective terms before weighting.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParts {
    pub recon_x: f64,
    pub recon_y: f64,
    pub g1: f64,
    pub g2: f64,
    pub ridge: f64,
}

impl ObjectiveParts {
    pub fn recombine(&self, lambda: f64, gamma: f64, margin_enabled: bool) -> f64 {
        let margin = if margin_enabled { self.g1 - self.g2 } else { 0.0 };
        lambda * (self.recon_x + self.recon_y) + margin + gamma * self.ridge
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveEvaluation {
    pub value: f64,
    /// Flat gradient in `LayerParams::to_flat` order.
    pub gradient: Vec<f64>,
    pub parts: ObjectiveParts,
}

/// One layer's objective with the corruption draws frozen up front, so the
/// function seen by the optimizer is deterministic.
pub struct LayerObjective {
    x: Array2<f64>,
    y: Array2<f64>,
    x_tilde: Vec<Array2<f64>>,
    y_tilde: Vec<Array2<f64>>,
    pairs: PairSets,
    lambda: f64,
    gamma: f64,
    margin_enabled: bool,
    gain: f64,
}

impl LayerObjective {
    pub fn new(
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        pairs: &PairSets,
        cfg: &ObjectiveConfig,
        gain: f64,
    ) -> Result<Self> {
        if x.dim() != y.dim() {
            return Err(DcanError::ShapeMismatch(format!(
                "view features differ: {:?} vs {:?}",
                x.dim(),
                y.dim()
            )));
        }
        let pooled = 2 * x.nrows();
        for &(_, j) in pairs.same_pairs.iter().chain(pairs.diff_pairs.iter()) {
            if j >= pooled {
                return Err(DcanError::DimensionMismatch(format!(
                    "pair index {j} exceeds {pooled} pooled rows"
                )));
            }
        }
        // Independent corruption streams per view.
        let spec_x = cfg.corruption.reseeded(u64::from(b'x'));
        let spec_y = cfg.corruption.reseeded(u64::from(b'y'));
        let draws = cfg.corruption.draws;
        let x_tilde = (0..draws).map(|c| corrupt(x, &spec_x, c)).collect();
        let y_tilde = (0..draws).map(|c| corrupt(y, &spec_y, c)).collect();
        Ok(Self {
            x: x.to_owned(),
            y: y.to_owned(),
            x_tilde,
            y_tilde,
            pairs: pairs.clone(),
            lambda: cfg.lambda,
            gamma: cfg.gamma,
            margin_enabled: cfg.margin_enabled,
            gain,
        })
    }

    pub fn d_in(&self) -> usize {
        self.x.ncols()
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Value and gradient without a finiteness check; the line search treats
    /// non-finite values as out-of-bounds trial points.
    pub fn evaluate_raw(&self, params: &LayerParams) -> ObjectiveEvaluation {
        let a = self.gain;
        let (recon_x, mut gw_x, mut gb_x, gc_x) = recon_path(
            &params.w_x,
            &params.b_x,
            &params.c_x,
            a,
            &self.x,
            &self.x_tilde,
        );
        let (recon_y, mut gw_y, mut gb_y, gc_y) = recon_path(
            &params.w_y,
            &params.b_y,
            &params.c_y,
            a,
            &self.y,
            &self.y_tilde,
        );
        gw_x *= self.lambda;
        gb_x *= self.lambda;
        gw_y *= self.lambda;
        gb_y *= self.lambda;
        let gc_x = gc_x * self.lambda;
        let gc_y = gc_y * self.lambda;

        let (g1, g2) = if self.margin_enabled {
            let (g1, g2, mw_x, mb_x, mw_y, mb_y) = self.margin_path(params);
            gw_x += &mw_x;
            gb_x += &mb_x;
            gw_y += &mw_y;
            gb_y += &mb_y;
            (g1, g2)
        } else {
            (0.0, 0.0)
        };

        let ridge = 0.5 * (sq_frob(&params.w_x) + sq_frob(&params.w_y));
        gw_x.scaled_add(self.gamma, &params.w_x);
        gw_y.scaled_add(self.gamma, &params.w_y);

        let parts = ObjectiveParts {
            recon_x,
            recon_y,
            g1,
            g2,
            ridge,
        };
        let value = parts.recombine(self.lambda, self.gamma, self.margin_enabled);

        let mut gradient = Vec::with_capacity(params.param_count());
        gradient.extend(gw_x.iter());
        gradient.extend(gb_x.iter());
        gradient.extend(gc_x.iter());
        gradient.extend(gw_y.iter());
        gradient.extend(gb_y.iter());
        gradient.extend(gc_y.iter());

        ObjectiveEvaluation {
            value,
            gradient,
            parts,
        }
    }

    /// Flat-vector interface for the optimizer.
    pub fn evaluate_flat(&self, theta: &[f64], hidden: usize) -> (f64, Vec<f64>) {
        let params = LayerParams::from_flat(theta, self.d_in(), hidden, self.gain);
        let eval = self.evaluate_raw(&params);
        (eval.value, eval.gradient)
    }

    /// Margin value and gradients through the clean-input encodings.
    fn margin_path(
        &self,
        params: &LayerParams,
    ) -> (f64, f64, Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>) {
        let a = self.gain;
        let n = self.x.nrows();
        let h = params.hidden();
        let hx = activate((self.x.dot(&params.w_x.t()) + &params.b_x).view(), a);
        let hy = activate((self.y.dot(&params.w_y.t()) + &params.b_y).view(), a);
        let pooled = ndarray::concatenate(Axis(0), &[hx.view(), hy.view()])
            .expect("pooled hidden stack");

        let (g1, g2) = margin_terms(pooled.view(), &self.pairs)
            .expect("pair sets validated at construction");

        // d(g1 - g2)/d pooled hidden rows.
        let mut gk = Array2::<f64>::zeros((2 * n, h));
        let w1 = 1.0 / self.pairs.n1() as f64;
        for &(i, j) in &self.pairs.same_pairs {
            let diff = &pooled.row(i) - &pooled.row(j);
            gk.row_mut(i).scaled_add(w1, &diff);
            gk.row_mut(j).scaled_add(-w1, &diff);
        }
        let w2 = 1.0 / self.pairs.n2() as f64;
        for &(i, j) in &self.pairs.diff_pairs {
            let diff = &pooled.row(i) - &pooled.row(j);
            gk.row_mut(i).scaled_add(-w2, &diff);
            gk.row_mut(j).scaled_add(w2, &diff);
        }

        let dzx = &gk.slice(s![..n, ..]) * &hx.mapv(|s| a * (1.0 - s * s));
        let dzy = &gk.slice(s![n.., ..]) * &hy.mapv(|s| a * (1.0 - s * s));
        let gw_x = dzx.t().dot(&self.x);
        let gb_x = dzx.sum_axis(Axis(0));
        let gw_y = dzy.t().dot(&self.y);
        let gb_y = dzy.sum_axis(Axis(0));
        (g1, g2, gw_x, gb_x, gw_y, gb_y)
    }
}

/// Reconstruction loss and raw gradients for one view, averaged over samples
/// and over the fixed corruption draws. Returns (loss, dW, db, dc).
fn recon_path(
    w: &Array2<f64>,
    b: &Array1<f64>,
    c: &Array1<f64>,
    a: f64,
    clean: &Array2<f64>,
    draws: &[Array2<f64>],
) -> (f64, Array2<f64>, Array1<f64>, Array1<f64>) {
    let mut loss = 0.0;
    let mut gw = Array2::<f64>::zeros(w.dim());
    let mut gb = Array1::<f64>::zeros(b.len());
    let mut gc = Array1::<f64>::zeros(c.len());
    for tilde in draws {
        let hidden = activate_owned(tilde.dot(&w.t()) + b, a);
        let xhat = activate_owned(hidden.dot(w) + c, a);
        let diff = &xhat - clean;
        loss += 0.5 * diff.iter().map(|v| v * v).sum::<f64>();
        let ddec = &diff * &xhat.mapv(|s| a * (1.0 - s * s));
        gc += &ddec.sum_axis(Axis(0));
        gw += &hidden.t().dot(&ddec);
        let dh = ddec.dot(&w.t());
        let denc = &dh * &hidden.mapv(|s| a * (1.0 - s * s));
        gb += &denc.sum_axis(Axis(0));
        gw += &denc.t().dot(tilde);
    }
    let inv = 1.0 / (draws.len() * clean.nrows()) as f64;
    (loss * inv, gw * inv, gb * inv, gc * inv)
}

fn activate_owned(z: Array2<f64>, a: f64) -> Array2<f64> {
    z.mapv_into(|v| (a * v).tanh())
}

fn sq_frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Evaluate the layer objective with a diverged-parameters check.
pub fn evaluate(
    params: &LayerParams,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    pairs: &PairSets,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveEvaluation> {
    let objective = LayerObjective::new(x, y, pairs, cfg, params.gain)?;
    let eval = objective.evaluate_raw(params);
    if !eval.value.is_finite() || eval.gradient.iter().any(|g| !g.is_finite()) {
        return Err(DcanError::Diverged(
            "objective value or gradient is non-finite".into(),
        ));
    }
    Ok(eval)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coordinate: usize,
    pub step: f64,
}

impl GradCheckReport {
    /// CSV line `max_rel_err,worst_coordinate,step`.
    pub fn csv_line(&self) -> String {
        format!("{},{},{}", self.max_rel_err, self.worst_coordinate, self.step)
    }
}

/// Compare an analytic gradient against central finite differences of `f`.
/// Relative error per coordinate: |ga - gfd| / max(1, |ga|, |gfd|).
pub fn compare_gradient<F: Fn(&[f64]) -> f64>(
    f: F,
    theta: &[f64],
    analytic: &[f64],
    step: f64,
) -> GradCheckReport {
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(theta.len(), analytic.len());
    let mut work = theta.to_vec();
    let mut max_rel_err = 0.0;
    let mut worst = 0;
    for i in 0..theta.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = f(&work);
        work[i] = orig - step;
        let minus = f(&work);
        work[i] = orig;
        let fd = (plus - minus) / (2.0 * step);
        let rel = (analytic[i] - fd).abs() / 1.0f64.max(analytic[i].abs()).max(fd.abs());
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = i;
        }
    }
    GradCheckReport {
        max_rel_err,
        worst_coordinate: worst,
        step,
    }
}

/// Check the analytic objective gradient on every coordinate.
pub fn grad_check(
    params: &LayerParams,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    pairs: &PairSets,
    cfg: &ObjectiveConfig,
    step: f64,
) -> Result<GradCheckReport> {
    let objective = LayerObjective::new(x, y, pairs, cfg, params.gain)?;
    let hidden = params.hidden();
    let theta = params.to_flat();
    let analytic = objective.evaluate_raw(params).gradient;
    Ok(compare_gradient(
        |t| objective.evaluate_flat(t, hidden).0,
        &theta,
        &analytic,
        step,
    ))
}

use crate::layer::activate;
