//! Paired two-view datasets: CSV loading, synthetic generation, and input
//! corruption for denoising training.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DcanError, Result};
use crate::linalg::{from_dmatrix, to_dmatrix};
use crate::seed::derive_seed;

/// Gain applied inside the view-2 tanh warp of the synthetic generator.
/// Rotated coordinates are of order 1/sqrt(d); the gain pushes them into the
/// curved region of tanh and makes the second view a genuinely nonlinear
/// transform of the first.
pub const SYNTH_WARP_GAIN: f64 = 6.0;

/// Dimension of the latent subspace the class centers span (clamped for
/// small ambient sizes). Unit-norm centers are drawn inside a fixed random
/// subspace of this dimension so that held-out classes interpolate between
/// training classes instead of landing in unexplored directions.
pub const SYNTH_LATENT_DIM: usize = 8;

/// Scale of the random generator perturbing the view-2 rotation away from
/// the identity. Heterogeneous views of the same subject overlap heavily
/// (two poses share most appearance structure), so the rotation is a random
/// orthogonal matrix near the identity rather than a fully scrambled one.
pub const SYNTH_ROTATION_SCALE: f64 = 0.35;

/// Per-sample split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// A paired two-view dataset. Row `i` of both views depicts the same subject
/// and carries the label `labels[i]`.
#[derive(Debug, Clone)]
pub struct ViewDataset {
    view_x: Array2<f64>,
    view_y: Array2<f64>,
    labels: Vec<usize>,
    split: Vec<Split>,
}

impl ViewDataset {
    /// Build a dataset, validating all structural invariants.
    pub fn new(
        view_x: Array2<f64>,
        view_y: Array2<f64>,
        labels: Vec<usize>,
        split: Vec<Split>,
    ) -> Result<Self> {
        if view_x.dim() != view_y.dim() {
            return Err(DcanError::ShapeMismatch(format!(
                "view matrices differ: {}x{} vs {}x{}",
                view_x.nrows(),
                view_x.ncols(),
                view_y.nrows(),
                view_y.ncols()
            )));
        }
        if labels.len() != view_x.nrows() {
            return Err(DcanError::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                view_x.nrows()
            )));
        }
        if split.len() != view_x.nrows() {
            return Err(DcanError::ShapeMismatch(format!(
                "{} split tags for {} rows",
                split.len(),
                view_x.nrows()
            )));
        }
        for (name, m) in [("view_x", &view_x), ("view_y", &view_y)] {
            if let Some(((r, c), _)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(DcanError::NonFinite {
                    path: name.to_string(),
                    row: r,
                    col: c,
                });
            }
        }
        Ok(Self {
            view_x,
            view_y,
            labels,
            split,
        })
    }

    pub fn n(&self) -> usize {
        self.view_x.nrows()
    }

    pub fn d(&self) -> usize {
        self.view_x.ncols()
    }

    pub fn view_x(&self) -> ArrayView2<'_, f64> {
        self.view_x.view()
    }

    pub fn view_y(&self) -> ArrayView2<'_, f64> {
        self.view_y.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    /// Replace the split tags, e.g. after reading a split file.
    pub fn set_split(&mut self, split: Vec<Split>) -> Result<()> {
        if split.len() != self.n() {
            return Err(DcanError::ShapeMismatch(format!(
                "{} split tags for {} rows",
                split.len(),
                self.n()
            )));
        }
        self.split = split;
        Ok(())
    }

    /// Rows of both views plus labels restricted to one split.
    pub fn subset(&self, which: Split) -> (Array2<f64>, Array2<f64>, Vec<usize>) {
        let idx: Vec<usize> = self
            .split
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == which)
            .map(|(i, _)| i)
            .collect();
        let x = self.view_x.select(Axis(0), &idx);
        let y = self.view_y.select(Axis(0), &idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (x, y, labels)
    }

    pub fn count(&self, which: Split) -> usize {
        self.split.iter().filter(|s| **s == which).count()
    }
}

/// Corruption process applied to inputs before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    /// Zero out each entry independently with probability `rate`.
    MaskZero,
    /// Add N(0, rate^2) noise to every entry.
    Gaussian,
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorruptionKind::MaskZero => write!(f, "mask_zero"),
            CorruptionKind::Gaussian => write!(f, "gaussian"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// Mask probability for `MaskZero`, noise std for `Gaussian`.
    pub rate: f64,
    /// Number of fixed corruption draws approximating the expectation.
    pub draws: usize,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            kind: CorruptionKind::MaskZero,
            rate: 0.1,
            draws: 1,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            CorruptionKind::MaskZero => {
                if !(0.0..=1.0).contains(&self.rate) {
                    return Err(DcanError::Config(format!(
                        "mask rate {} outside [0, 1]",
                        self.rate
                    )));
                }
            }
            CorruptionKind::Gaussian => {
                if !self.rate.is_finite() || self.rate < 0.0 {
                    return Err(DcanError::Config(format!(
                        "gaussian sigma {} must be >= 0",
                        self.rate
                    )));
                }
            }
        }
        if self.draws == 0 {
            return Err(DcanError::Config("draws must be >= 1".into()));
        }
        Ok(())
    }

    /// The same corruption process under an independent sub-seed.
    pub fn reseeded(&self, tag: u64) -> Self {
        Self {
            seed: derive_seed(self.seed, tag),
            ..*self
        }
    }
}

/// Apply one fixed corruption draw to a matrix. Deterministic in
/// `(spec.seed, draw_index)`; entries are visited in row-major order.
pub fn corrupt(m: ArrayView2<'_, f64>, spec: &CorruptionSpec, draw_index: usize) -> Array2<f64> {
    assert!(
        draw_index < spec.draws,
        "draw_index {} out of range for {} draws",
        draw_index,
        spec.draws
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(draw_index as u64);
    let mut out = m.to_owned();
    match spec.kind {
        CorruptionKind::MaskZero => {
            for v in out.iter_mut() {
                if rng.random::<f64>() < spec.rate {
                    *v = 0.0;
                }
            }
        }
        CorruptionKind::Gaussian => {
            for v in out.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += spec.rate * e;
            }
        }
    }
    out
}

/// Fraction of `noise_sigma` applied as isotropic ambient observation noise
/// on top of the in-manifold jitter.
pub const SYNTH_AMBIENT_NOISE_RATIO: f64 = 0.1;

/// Generate a synthetic paired two-view dataset.
///
/// Class centers are drawn on the unit sphere inside a fixed random latent
/// subspace. View 1 is the center plus Gaussian jitter (in-manifold jitter
/// plus a small ambient component); view 2 applies a fixed random orthogonal
/// rotation to that latent sample, warps it element-wise through a gained
/// tanh and adds independent jitter. Classes are split half/half into
/// disjoint train and test sets, so test subjects are never seen during
/// training.
pub fn generate_synthetic(
    classes: usize,
    per_class: usize,
    ambient_dim: usize,
    view_warp_seed: u64,
    noise_sigma: f64,
) -> Result<ViewDataset> {
    generate_synthetic_inner(
        classes,
        per_class,
        ambient_dim,
        view_warp_seed,
        noise_sigma,
        SYNTH_WARP_GAIN,
        SYNTH_LATENT_DIM,
        SYNTH_ROTATION_SCALE,
    )
}

#[doc(hidden)]
#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic_inner(
    classes: usize,
    per_class: usize,
    ambient_dim: usize,
    view_warp_seed: u64,
    noise_sigma: f64,
    warp_gain: f64,
    latent_dim: usize,
    rotation_scale: f64,
) -> Result<ViewDataset> {
    if classes < 2 {
        return Err(DcanError::Config(format!(
            "classes must be >= 2, got {classes}"
        )));
    }
    if per_class < 2 {
        return Err(DcanError::Config(format!(
            "per_class must be >= 2, got {per_class}"
        )));
    }
    if ambient_dim < 4 {
        return Err(DcanError::Config(format!(
            "ambient_dim must be >= 4, got {ambient_dim}"
        )));
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(DcanError::Config(format!(
            "noise_sigma {noise_sigma} must be >= 0"
        )));
    }

    let d = ambient_dim;
    let latent_dim = latent_dim.min(d / 2).max(2);
    let mut center_rng = ChaCha8Rng::seed_from_u64(derive_seed(view_warp_seed, 0));
    let mut latent_centers = Array2::<f64>::zeros((classes, latent_dim));
    for mut row in latent_centers.rows_mut() {
        let mut norm = 0.0;
        while norm < 1e-12 {
            for v in row.iter_mut() {
                *v = center_rng.sample(StandardNormal);
            }
            norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        row.mapv_inplace(|v| v / norm);
    }
    // Unit-norm centers inside a fixed random latent subspace: rows of
    // `basis` are orthonormal directions in ambient space.
    let basis = random_orthogonal(d, derive_seed(view_warp_seed, 4));
    let basis = basis.slice(ndarray::s![..latent_dim, ..]).to_owned();

    let rotation = partial_orthogonal(d, rotation_scale, derive_seed(view_warp_seed, 1));
    let sigma_ambient = SYNTH_AMBIENT_NOISE_RATIO * noise_sigma;

    let mut jitter_rng = ChaCha8Rng::seed_from_u64(derive_seed(view_warp_seed, 2));
    let n = classes * per_class;
    let mut view_x = Array2::<f64>::zeros((n, d));
    let mut view_y = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for class in 0..classes {
        for sample in 0..per_class {
            let row = class * per_class + sample;
            // Latent sample = center + in-manifold jitter.
            let mut latent = latent_centers.row(class).to_owned();
            for v in latent.iter_mut() {
                let e: f64 = jitter_rng.sample(StandardNormal);
                *v += noise_sigma * e;
            }
            // View 1 = latent sample + ambient jitter.
            let mut first = latent.dot(&basis);
            for v in first.iter_mut() {
                let e: f64 = jitter_rng.sample(StandardNormal);
                *v += sigma_ambient * e;
            }
            // View 2 = warped rotation of the latent sample + ambient jitter.
            let rotated = rotation.dot(&latent.dot(&basis));
            let mut warped = rotated.mapv(|v| (warp_gain * v).tanh());
            for v in warped.iter_mut() {
                let e: f64 = jitter_rng.sample(StandardNormal);
                *v += sigma_ambient * e;
            }
            view_x.row_mut(row).assign(&first);
            view_y.row_mut(row).assign(&warped);
            labels.push(class);
        }
    }

    // Subject-disjoint split: shuffle class ids, first half trains.
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(view_warp_seed, 3));
    let mut class_order: Vec<usize> = (0..classes).collect();
    for i in (1..classes).rev() {
        let j = split_rng.random_range(0..=i);
        class_order.swap(i, j);
    }
    let train_classes: std::collections::HashSet<usize> =
        class_order[..classes / 2].iter().copied().collect();
    let split = labels
        .iter()
        .map(|l| {
            if train_classes.contains(l) {
                Split::Train
            } else {
                Split::Test
            }
        })
        .collect();

    ViewDataset::new(view_x, view_y, labels, split)
}

/// Haar-ish random orthogonal matrix: QR of a Gaussian matrix with the sign
/// of the R diagonal folded into Q so the result is deterministic.
fn random_orthogonal(d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
    orthogonalize(gauss)
}

/// Random orthogonal matrix near the identity: QR of I + scale * G with
/// Gaussian G. `scale` interpolates between the identity (0) and a heavily
/// scrambled rotation (large values).
fn partial_orthogonal(d: usize, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scaled = scale / (d as f64).sqrt();
    let mut m =
        Array2::from_shape_fn((d, d), |_| scaled * rng.sample::<f64, _>(StandardNormal));
    for i in 0..d {
        m[[i, i]] += 1.0;
    }
    orthogonalize(m)
}

fn orthogonalize(m: Array2<f64>) -> Array2<f64> {
    let d = m.nrows();
    let qr = to_dmatrix(m.view()).qr();
    let r_diag: Vec<f64> = (0..d).map(|i| qr.r()[(i, i)]).collect();
    let mut q = qr.q();
    for (j, rd) in r_diag.iter().enumerate() {
        if *rd < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    from_dmatrix(&q)
}

/// Load a paired dataset from two matrix CSVs and a label file. All rows are
/// tagged `Train`; use [`load_split_file`] + [`ViewDataset::set_split`] to
/// apply a split.
pub fn load_dataset(
    path_x: impl AsRef<Path>,
    path_y: impl AsRef<Path>,
    path_labels: impl AsRef<Path>,
) -> Result<ViewDataset> {
    let x = load_matrix_csv(&path_x)?;
    let y = load_matrix_csv(&path_y)?;
    if x.dim() != y.dim() {
        return Err(DcanError::ShapeMismatch(format!(
            "{} is {}x{} but {} is {}x{}",
            path_x.as_ref().display(),
            x.nrows(),
            x.ncols(),
            path_y.as_ref().display(),
            y.nrows(),
            y.ncols()
        )));
    }
    let labels = load_labels(&path_labels)?;
    if labels.len() != x.nrows() {
        return Err(DcanError::ShapeMismatch(format!(
            "{} labels in {} for {} sample rows",
            labels.len(),
            path_labels.as_ref().display(),
            x.nrows()
        )));
    }
    let n = x.nrows();
    ViewDataset::new(x, y, labels, vec![Split::Train; n])
}

/// Parse a headerless CSV matrix: one sample per row, '.'-decimal values.
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| DcanError::io(&display, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DcanError::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (c, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| DcanError::Parse {
                path: display.clone(),
                row: r,
                col: c,
                message: format!("{:?} is not a number", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(DcanError::NonFinite {
                    path: display.clone(),
                    row: r,
                    col: c,
                });
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(DcanError::ShapeMismatch(format!(
                    "{display}: row {r} has {} columns, row 0 has {}",
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DcanError::ShapeMismatch(format!("{display}: empty matrix")));
    }
    let (n, d) = (rows.len(), rows[0].len());
    Ok(Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .expect("row lengths validated"))
}

/// Parse a label file: one non-negative integer per line.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| DcanError::io(&display, e))?;
    let mut labels = Vec::new();
    for (r, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DcanError::io(&display, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: i64 = t.parse().map_err(|_| DcanError::Parse {
            path: display.clone(),
            row: r,
            col: 0,
            message: format!("{t:?} is not an integer label"),
        })?;
        if v < 0 {
            return Err(DcanError::Parse {
                path: display.clone(),
                row: r,
                col: 0,
                message: format!("label {v} is negative"),
            });
        }
        labels.push(v as usize);
    }
    Ok(labels)
}

/// Parse a split file: one `train` or `test` tag per line.
pub fn load_split_file(path: impl AsRef<Path>) -> Result<Vec<Split>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| DcanError::io(&display, e))?;
    let mut split = Vec::new();
    for (r, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DcanError::io(&display, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        match t {
            "train" => split.push(Split::Train),
            "test" => split.push(Split::Test),
            other => {
                return Err(DcanError::Parse {
                    path: display.clone(),
                    row: r,
                    col: 0,
                    message: format!("{other:?} is not a split tag (train|test)"),
                })
            }
        }
    }
    Ok(split)
}
