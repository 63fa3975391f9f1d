//! One coupled layer: per-view encoder/decoder with tied transpose weights
//! and a gain-parameterized tanh activation.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DcanError, Result};

/// Selects which view's parameters an operation applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    X,
    Y,
}

/// Parameters of one coupled layer.
///
/// Weights are stored `hidden x d_in`; the decoder reuses the transpose of
/// the encoder weights, so the only free parameters are the two weight
/// matrices, the encoder biases and the decoder biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_x: Array2<f64>,
    pub w_y: Array2<f64>,
    pub b_x: Array1<f64>,
    pub b_y: Array1<f64>,
    pub c_x: Array1<f64>,
    pub c_y: Array1<f64>,
    pub gain: f64,
}

impl LayerParams {
    pub fn d_in(&self) -> usize {
        self.w_x.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w_x.nrows()
    }

    /// Number of free parameters (gain excluded; it is a hyperparameter).
    pub fn param_count(&self) -> usize {
        let (h, d) = self.w_x.dim();
        2 * (h * d + h + d)
    }

    /// Flatten into the optimization vector: W_x, b_x, c_x, W_y, b_y, c_y,
    /// matrices row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend(self.w_x.iter());
        out.extend(self.b_x.iter());
        out.extend(self.c_x.iter());
        out.extend(self.w_y.iter());
        out.extend(self.b_y.iter());
        out.extend(self.c_y.iter());
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn from_flat(flat: &[f64], d_in: usize, hidden: usize, gain: f64) -> Self {
        let expected = 2 * (hidden * d_in + hidden + d_in);
        assert_eq!(flat.len(), expected, "flat parameter vector length");
        let mut pos = 0;
        let mut take = |len: usize| {
            let s = &flat[pos..pos + len];
            pos += len;
            s.to_vec()
        };
        let w_x = Array2::from_shape_vec((hidden, d_in), take(hidden * d_in)).unwrap();
        let b_x = Array1::from_vec(take(hidden));
        let c_x = Array1::from_vec(take(d_in));
        let w_y = Array2::from_shape_vec((hidden, d_in), take(hidden * d_in)).unwrap();
        let b_y = Array1::from_vec(take(hidden));
        let c_y = Array1::from_vec(take(d_in));
        Self {
            w_x,
            w_y,
            b_x,
            b_y,
            c_x,
            c_y,
            gain,
        }
    }

    fn weights(&self, view: View) -> (&Array2<f64>, &Array1<f64>, &Array1<f64>) {
        match view {
            View::X => (&self.w_x, &self.b_x, &self.c_x),
            View::Y => (&self.w_y, &self.b_y, &self.c_y),
        }
    }
}

/// Random initial parameters: weights i.i.d. uniform in [-r, r] with
/// r = sqrt(6 / (d_in + hidden)), biases zero.
pub fn init_params(d_in: usize, hidden: usize, gain: f64, seed: u64) -> LayerParams {
    assert!(d_in >= 1 && hidden >= 1, "layer dimensions must be >= 1");
    assert!(gain > 0.0, "gain must be positive");
    let r = (6.0 / (d_in + hidden) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize| {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.random::<f64>() * 2.0 * r - r)
            .collect();
        Array2::from_shape_vec((rows, cols), data).unwrap()
    };
    let w_x = draw(hidden, d_in);
    let w_y = draw(hidden, d_in);
    LayerParams {
        w_x,
        w_y,
        b_x: Array1::zeros(hidden),
        b_y: Array1::zeros(hidden),
        c_x: Array1::zeros(d_in),
        c_y: Array1::zeros(d_in),
        gain,
    }
}

/// Element-wise gained hyperbolic tangent
/// s(z) = (e^{az} - e^{-az}) / (e^{az} + e^{-az}).
pub fn activate(z: ArrayView2<'_, f64>, gain: f64) -> Array2<f64> {
    z.mapv(|v| (gain * v).tanh())
}

/// Hidden representation s(W·input + b) for the selected view.
pub fn encode(params: &LayerParams, input: ArrayView2<'_, f64>, view: View) -> Result<Array2<f64>> {
    if input.ncols() != params.d_in() {
        return Err(DcanError::DimensionMismatch(format!(
            "encode: input has {} columns, layer expects {}",
            input.ncols(),
            params.d_in()
        )));
    }
    let (w, b, _) = params.weights(view);
    let z = input.dot(&w.t()) + b;
    Ok(activate(z.view(), params.gain))
}

/// Reconstruction s(W^T·hidden + c) with tied transpose weights.
pub fn decode(
    params: &LayerParams,
    hidden: ArrayView2<'_, f64>,
    view: View,
) -> Result<Array2<f64>> {
    if hidden.ncols() != params.hidden() {
        return Err(DcanError::DimensionMismatch(format!(
            "decode: hidden has {} columns, layer expects {}",
            hidden.ncols(),
            params.hidden()
        )));
    }
    let (w, _, c) = params.weights(view);
    let u = hidden.dot(w) + c;
    Ok(activate(u.view(), params.gain))
}
