//! PCA dimensionality reduction with max-abs scaling into the tanh-friendly
//! range [-0.9, 0.9].

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{DcanError, Result};
use crate::linalg::{argsort_desc, to_dmatrix};

/// A fitted projection: center, orthonormal components (descending variance)
/// and a global max-abs scale chosen so training projections land in
/// [-0.9, 0.9].
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// d x r, orthonormal columns.
    pub components: Array2<f64>,
    /// Explained variance per component, non-increasing.
    pub variances: Array1<f64>,
    pub scale: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.components.ncols()
    }

    /// ((data - mean) . components) / scale
    pub fn transform(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.input_dim() {
            return Err(DcanError::DimensionMismatch(format!(
                "pca transform: {} columns, model expects {}",
                data.ncols(),
                self.input_dim()
            )));
        }
        let centered = &data - &self.mean;
        Ok(centered.dot(&self.components) / self.scale)
    }

    /// Inverse map mean + scale * proj . components^T; exact on rank-r data.
    pub fn inverse_transform(&self, proj: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if proj.ncols() != self.output_dim() {
            return Err(DcanError::DimensionMismatch(format!(
                "pca inverse: {} columns, model has {} components",
                proj.ncols(),
                self.output_dim()
            )));
        }
        Ok(proj.dot(&self.components.t()) * self.scale + &self.mean)
    }
}

/// Fit a PCA model via thin SVD of the centered data matrix.
pub fn fit_pca(data: ArrayView2<'_, f64>, r: usize) -> Result<PcaModel> {
    let (n, d) = data.dim();
    if n < 2 {
        return Err(DcanError::DegenerateData(format!(
            "pca needs at least 2 rows, got {n}"
        )));
    }
    let max_r = (n - 1).min(d);
    if r == 0 || r > max_r {
        return Err(DcanError::Config(format!(
            "pca rank {r} out of range [1, {max_r}] for {n}x{d} data"
        )));
    }
    let mean = data.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &data - &mean;

    let svd = to_dmatrix(centered.view()).svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let singular: Vec<f64> = svd.singular_values.iter().copied().collect();
    let order = argsort_desc(&singular);

    let mut components = Array2::<f64>::zeros((d, r));
    let mut variances = Array1::<f64>::zeros(r);
    for (col, &si) in order.iter().take(r).enumerate() {
        let sv = singular[si];
        variances[col] = sv * sv / (n - 1) as f64;
        for row in 0..d {
            components[[row, col]] = v_t[(si, row)];
        }
        // Deterministic sign: largest-magnitude entry positive.
        let mut max_idx = 0;
        let mut max_abs = 0.0;
        for row in 0..d {
            let a = components[[row, col]].abs();
            if a > max_abs {
                max_abs = a;
                max_idx = row;
            }
        }
        if components[[max_idx, col]] < 0.0 {
            for row in 0..d {
                components[[row, col]] = -components[[row, col]];
            }
        }
    }

    let projected = centered.dot(&components);
    let max_abs = projected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(DcanError::DegenerateData(
            "zero-variance data: projected training rows are identically zero".into(),
        ));
    }
    let scale = max_abs / 0.9;

    Ok(PcaModel {
        mean,
        components,
        variances,
        scale,
    })
}

/// Write a 2-D projection of pooled two-view features for external plotting.
/// CSV header `pc1,pc2,label,view`, rows for view x first, then view y.
pub fn project_2d<W: Write>(
    features_x: ArrayView2<'_, f64>,
    features_y: ArrayView2<'_, f64>,
    labels: &[usize],
    out: &mut W,
) -> Result<()> {
    if features_x.dim() != features_y.dim() {
        return Err(DcanError::ShapeMismatch(format!(
            "view features differ: {:?} vs {:?}",
            features_x.dim(),
            features_y.dim()
        )));
    }
    if labels.len() != features_x.nrows() {
        return Err(DcanError::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            features_x.nrows()
        )));
    }
    if features_x.ncols() < 2 {
        return Err(DcanError::DimensionMismatch(
            "2-D projection needs at least 2 feature columns".into(),
        ));
    }
    let pooled = ndarray::concatenate(Axis(0), &[features_x, features_y])
        .expect("pooled feature stack");
    if pooled.nrows() < 3 {
        return Err(DcanError::DegenerateData(
            "2-D projection needs at least 3 pooled rows".into(),
        ));
    }
    let model = fit_pca(pooled.view(), 2)?;
    let proj = model.transform(pooled.view())?;
    let n = features_x.nrows();
    let io_err = |e: std::io::Error| DcanError::io("plot data", e);
    writeln!(out, "pc1,pc2,label,view").map_err(io_err)?;
    for (i, row) in proj.rows().into_iter().enumerate() {
        let (label, view) = if i < n {
            (labels[i], "x")
        } else {
            (labels[i - n], "y")
        };
        writeln!(out, "{},{},{},{}", row[0], row[1], label, view).map_err(io_err)?;
    }
    Ok(())
}
