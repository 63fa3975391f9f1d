//! Regularized linear canonical correlation analysis, the linear comparison
//! method for the coupled networks.
//!
//! Directions come from the SVD of the whitened cross-covariance
//! Sxx^{-1/2} Sxy Syy^{-1/2}, with both auto-covariances ridged by a
//! trace-scaled multiple of the identity.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{DcanError, Result};
use crate::layer::View;
use crate::linalg::{from_dmatrix, to_dmatrix};

#[derive(Debug, Clone)]
pub struct CcaModel {
    pub mean_x: Array1<f64>,
    pub mean_y: Array1<f64>,
    /// d_x x r projection for view x.
    pub proj_x: Array2<f64>,
    /// d_y x r projection for view y.
    pub proj_y: Array2<f64>,
    /// Canonical correlations, descending.
    pub correlations: Array1<f64>,
    pub reg: f64,
}

/// Fit CCA on paired training rows.
pub fn fit_cca(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    r: usize,
    reg: f64,
) -> Result<CcaModel> {
    let n = x.nrows();
    if n != y.nrows() {
        return Err(DcanError::ShapeMismatch(format!(
            "paired views need equal rows: {} vs {}",
            n,
            y.nrows()
        )));
    }
    if n < 2 {
        return Err(DcanError::DegenerateData(format!(
            "cca needs at least 2 rows, got {n}"
        )));
    }
    let max_r = x.ncols().min(y.ncols());
    if r == 0 || r > max_r {
        return Err(DcanError::Config(format!(
            "cca rank {r} out of range [1, {max_r}]"
        )));
    }
    if !reg.is_finite() || reg < 0.0 {
        return Err(DcanError::Config(format!("cca reg {reg} must be >= 0")));
    }

    let mean_x = x.mean_axis(Axis(0)).expect("n >= 2");
    let mean_y = y.mean_axis(Axis(0)).expect("n >= 2");
    let xc = to_dmatrix((&x - &mean_x).view());
    let yc = to_dmatrix((&y - &mean_y).view());
    let denom = (n - 1) as f64;

    let sxx = ridged(&(xc.transpose() * &xc / denom), reg);
    let syy = ridged(&(yc.transpose() * &yc / denom), reg);
    let sxy = xc.transpose() * &yc / denom;

    let wx = inv_sqrt_sym(&sxx, "view x auto-covariance")?;
    let wy = inv_sqrt_sym(&syy, "view y auto-covariance")?;

    let t = &wx * sxy * &wy;
    let svd = t.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let singular = svd.singular_values;

    // nalgebra returns singular values sorted descending.
    let full_u = &wx * u.columns(0, r);
    let full_v = &wy * v_t.transpose().columns(0, r).into_owned();

    let mut proj_x = from_dmatrix(&full_u.into_owned());
    let mut proj_y = from_dmatrix(&full_v);
    let correlations = Array1::from_iter(singular.iter().take(r).copied());

    // Deterministic sign per canonical pair: flip both projections together
    // so the largest-magnitude entry of the x direction is positive.
    for col in 0..r {
        let column = proj_x.column(col);
        let mut max_idx = 0;
        let mut max_abs = 0.0;
        for (i, v) in column.iter().enumerate() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                max_idx = i;
            }
        }
        if proj_x[[max_idx, col]] < 0.0 {
            proj_x.column_mut(col).mapv_inplace(|v| -v);
            proj_y.column_mut(col).mapv_inplace(|v| -v);
        }
    }

    Ok(CcaModel {
        mean_x,
        mean_y,
        proj_x,
        proj_y,
        correlations,
        reg,
    })
}

/// Project samples of one view into the common space.
pub fn cca_embed(model: &CcaModel, samples: ArrayView2<'_, f64>, view: View) -> Result<Array2<f64>> {
    let (mean, proj) = match view {
        View::X => (&model.mean_x, &model.proj_x),
        View::Y => (&model.mean_y, &model.proj_y),
    };
    if samples.ncols() != proj.nrows() {
        return Err(DcanError::DimensionMismatch(format!(
            "cca embed: {} columns, model expects {}",
            samples.ncols(),
            proj.nrows()
        )));
    }
    Ok((&samples - mean).dot(proj))
}

fn ridged(m: &DMatrix<f64>, reg: f64) -> DMatrix<f64> {
    let d = m.nrows();
    let scale = m.trace() / d as f64;
    m + DMatrix::identity(d, d) * (reg * scale)
}

/// Symmetric inverse square root via eigendecomposition.
fn inv_sqrt_sym(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let floor = 1e-12 * max_ev.max(1e-300);
    if eig.eigenvalues.iter().any(|&v| v <= floor) {
        return Err(DcanError::Singular(format!("{what} is rank deficient")));
    }
    let q = &eig.eigenvectors;
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Ok(q * inv_sqrt * q.transpose())
}
