//! Rank-1 cross-view recognition and the diagnostic statistics reported with
//! trained models.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{ArrayView1, ArrayView2};

use crate::dataset::{Split, ViewDataset};
use crate::error::{DcanError, Result};
use crate::layer::View;
use crate::trainer::{embed, NetworkModel};

/// Nearest-neighbor matching metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Cosine,
    Euclidean,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Cosine => write!(f, "cosine"),
            Metric::Euclidean => write!(f, "euclidean"),
        }
    }
}

/// Rank-1 accuracies for the two gallery/probe directions.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Gallery view X, probe view Y.
    pub accuracy_xy: f64,
    /// Gallery view Y, probe view X.
    pub accuracy_yx: f64,
    pub mean_accuracy: f64,
    /// Correct matches per class, both directions pooled.
    pub per_class_hits: BTreeMap<usize, usize>,
}

impl EvalReport {
    /// CSV rows `direction,accuracy` plus a `mean` row.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "direction,accuracy")?;
        writeln!(out, "xy,{}", self.accuracy_xy)?;
        writeln!(out, "yx,{}", self.accuracy_yx)?;
        writeln!(out, "mean,{}", self.mean_accuracy)
    }

    /// Structured text dump: one `key: value` line per field.
    pub fn write_dump<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "accuracy_xy: {}", self.accuracy_xy)?;
        writeln!(out, "accuracy_yx: {}", self.accuracy_yx)?;
        writeln!(out, "mean_accuracy: {}", self.mean_accuracy)?;
        for (class, hits) in &self.per_class_hits {
            writeln!(out, "class_{class}_hits: {hits}")?;
        }
        Ok(())
    }
}

fn similarity(metric: Metric, probe: ArrayView1<'_, f64>, gallery: ArrayView1<'_, f64>) -> f64 {
    match metric {
        Metric::Cosine => {
            let dot: f64 = probe.iter().zip(gallery.iter()).map(|(a, b)| a * b).sum();
            let np: f64 = probe.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ng: f64 = gallery.iter().map(|v| v * v).sum::<f64>().sqrt();
            if np == 0.0 || ng == 0.0 {
                // Zero vectors sit at maximal distance and never match.
                f64::NEG_INFINITY
            } else {
                dot / (np * ng)
            }
        }
        Metric::Euclidean => {
            let d2: f64 = probe
                .iter()
                .zip(gallery.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            -d2
        }
    }
}

/// Fraction of probes whose single nearest gallery row carries the correct
/// label. Ties resolve to the lower gallery index.
pub fn rank1(
    gallery: ArrayView2<'_, f64>,
    gallery_labels: &[usize],
    probe: ArrayView2<'_, f64>,
    probe_labels: &[usize],
    metric: Metric,
) -> Result<f64> {
    rank1_with_hits(gallery, gallery_labels, probe, probe_labels, metric).map(|(acc, _)| acc)
}

pub fn rank1_with_hits(
    gallery: ArrayView2<'_, f64>,
    gallery_labels: &[usize],
    probe: ArrayView2<'_, f64>,
    probe_labels: &[usize],
    metric: Metric,
) -> Result<(f64, BTreeMap<usize, usize>)> {
    if gallery.nrows() == 0 {
        return Err(DcanError::DegenerateData("empty gallery".into()));
    }
    if gallery.nrows() != gallery_labels.len() || probe.nrows() != probe_labels.len() {
        return Err(DcanError::ShapeMismatch(
            "label vectors must match feature rows".into(),
        ));
    }
    if gallery.ncols() != probe.ncols() {
        return Err(DcanError::DimensionMismatch(format!(
            "gallery width {} vs probe width {}",
            gallery.ncols(),
            probe.ncols()
        )));
    }
    let mut hits = 0usize;
    let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
    for (p, row) in probe.rows().into_iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut best_idx: Option<usize> = None;
        for (g, grow) in gallery.rows().into_iter().enumerate() {
            let s = similarity(metric, row, grow);
            if s > best {
                best = s;
                best_idx = Some(g);
            }
        }
        if let Some(g) = best_idx {
            if best > f64::NEG_INFINITY && gallery_labels[g] == probe_labels[p] {
                hits += 1;
                *per_class.entry(probe_labels[p]).or_default() += 1;
            }
        }
    }
    Ok((hits as f64 / probe.nrows().max(1) as f64, per_class))
}

/// Embed the test split of both views and score rank-1 in both directions.
pub fn cross_view_eval(
    model: &NetworkModel,
    data: &ViewDataset,
    metric: Metric,
) -> Result<EvalReport> {
    let (tx, ty, labels) = data.subset(Split::Test);
    if tx.nrows() == 0 {
        return Err(DcanError::DegenerateData("empty test split".into()));
    }
    let ex = embed(model, tx.view(), View::X)?;
    let ey = embed(model, ty.view(), View::Y)?;
    let (accuracy_xy, hits_xy) = rank1_with_hits(ex.view(), &labels, ey.view(), &labels, metric)?;
    let (accuracy_yx, hits_yx) = rank1_with_hits(ey.view(), &labels, ex.view(), &labels, metric)?;
    let mut per_class_hits = hits_xy;
    for (class, hits) in hits_yx {
        *per_class_hits.entry(class).or_default() += hits;
    }
    Ok(EvalReport {
        accuracy_xy,
        accuracy_yx,
        mean_accuracy: 0.5 * (accuracy_xy + accuracy_yx),
        per_class_hits,
    })
}

/// Neighborhood retention: entry k-1 holds the fraction of samples whose k
/// nearest original-space neighbors all reappear among the k nearest
/// embedded-space neighbors.
pub fn neighbor_preservation(
    original: ArrayView2<'_, f64>,
    embedded: ArrayView2<'_, f64>,
    max_k: usize,
) -> Result<Vec<f64>> {
    let n = original.nrows();
    if embedded.nrows() != n {
        return Err(DcanError::ShapeMismatch(format!(
            "{} original rows vs {} embedded rows",
            n,
            embedded.nrows()
        )));
    }
    if max_k == 0 || max_k >= n {
        return Err(DcanError::Config(format!(
            "max_k {max_k} out of range [1, {})",
            n
        )));
    }
    let order = |m: ArrayView2<'_, f64>| -> Vec<Vec<usize>> {
        (0..n)
            .map(|i| {
                let mut idx: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d2: f64 = m
                            .row(i)
                            .iter()
                            .zip(m.row(j).iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        (d2, j)
                    })
                    .collect();
                idx.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                idx.into_iter().map(|(_, j)| j).collect()
            })
            .collect()
    };
    let orig_order = order(original);
    let emb_order = order(embedded);

    let mut out = Vec::with_capacity(max_k);
    for k in 1..=max_k {
        let mut preserved = 0usize;
        for i in 0..n {
            let emb_set: std::collections::BTreeSet<usize> =
                emb_order[i].iter().take(k).copied().collect();
            if orig_order[i].iter().take(k).all(|j| emb_set.contains(j)) {
                preserved += 1;
            }
        }
        out.push(preserved as f64 / n as f64);
    }
    Ok(out)
}

/// Ratio of mean intra-class to mean inter-class cross-view distance; lower
/// means the two views are better aligned.
pub fn gap_metric(
    emb_x: ArrayView2<'_, f64>,
    labels_x: &[usize],
    emb_y: ArrayView2<'_, f64>,
    labels_y: &[usize],
) -> Result<f64> {
    if emb_x.nrows() != labels_x.len() || emb_y.nrows() != labels_y.len() {
        return Err(DcanError::ShapeMismatch(
            "label vectors must match embedding rows".into(),
        ));
    }
    let mut intra = (0.0, 0usize);
    let mut inter = (0.0, 0usize);
    for (i, xi) in emb_x.rows().into_iter().enumerate() {
        for (j, yj) in emb_y.rows().into_iter().enumerate() {
            let d: f64 = xi
                .iter()
                .zip(yj.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if labels_x[i] == labels_y[j] {
                intra.0 += d;
                intra.1 += 1;
            } else {
                inter.0 += d;
                inter.1 += 1;
            }
        }
    }
    if intra.1 == 0 || inter.1 == 0 {
        return Err(DcanError::DegenerateData(
            "gap metric needs both intra- and inter-class cross-view pairs".into(),
        ));
    }
    Ok((intra.0 / intra.1 as f64) / (inter.0 / inter.1 as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// Naive O(n^2) oracle with explicit distance computation.
    fn rank1_oracle(
        gallery: &Array2<f64>,
        gl: &[usize],
        probe: &Array2<f64>,
        pl: &[usize],
        metric: Metric,
    ) -> f64 {
        let mut hits = 0;
        for p in 0..probe.nrows() {
            let mut best_d = f64::INFINITY;
            let mut best_g = 0usize;
            for g in 0..gallery.nrows() {
                let d = match metric {
                    Metric::Euclidean => probe
                        .row(p)
                        .iter()
                        .zip(gallery.row(g).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>(),
                    Metric::Cosine => {
                        let dot: f64 = probe
                            .row(p)
                            .iter()
                            .zip(gallery.row(g).iter())
                            .map(|(a, b)| a * b)
                            .sum();
                        let np = probe.row(p).iter().map(|v| v * v).sum::<f64>().sqrt();
                        let ng = gallery.row(g).iter().map(|v| v * v).sum::<f64>().sqrt();
                        1.0 - dot / (np * ng)
                    }
                };
                if d < best_d {
                    best_d = d;
                    best_g = g;
                }
            }
            if gl[best_g] == pl[p] {
                hits += 1;
            }
        }
        hits as f64 / probe.nrows() as f64
    }

    #[test]
    fn self_match_is_perfect() {
        let g = random_matrix(10, 4, 1);
        let labels: Vec<usize> = (0..10).collect();
        for metric in [Metric::Cosine, Metric::Euclidean] {
            let acc = rank1(g.view(), &labels, g.view(), &labels, metric).unwrap();
            assert_eq!(acc, 1.0);
        }
    }

    #[test]
    fn single_class_gallery_forces_prediction() {
        let g = random_matrix(5, 3, 2);
        let gl = vec![7usize; 5];
        let p = random_matrix(8, 3, 3);
        let pl: Vec<usize> = (0..8).map(|i| if i < 3 { 7 } else { 9 }).collect();
        let acc = rank1(g.view(), &gl, p.view(), &pl, Metric::Euclidean).unwrap();
        assert!((acc - 3.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let g = random_matrix(20, 5, 4);
        let gl: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let p = random_matrix(20, 5, 5);
        let pl: Vec<usize> = (0..20).map(|i| (i + 1) % 3).collect();
        for metric in [Metric::Cosine, Metric::Euclidean] {
            let acc = rank1(g.view(), &gl, p.view(), &pl, metric).unwrap();
            let oracle = rank1_oracle(&g, &gl, &p, &pl, metric);
            assert_eq!(acc, oracle, "{metric}");
        }
    }

    #[test]
    fn gallery_permutation_invariance() {
        let g = random_matrix(12, 4, 6);
        let gl: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let p = random_matrix(9, 4, 7);
        let pl: Vec<usize> = (0..9).map(|i| i % 4).collect();
        let base = rank1(g.view(), &gl, p.view(), &pl, Metric::Cosine).unwrap();

        let perm: Vec<usize> = (0..12).rev().collect();
        let gp = Array2::from_shape_fn((12, 4), |(i, j)| g[[perm[i], j]]);
        let glp: Vec<usize> = perm.iter().map(|&i| gl[i]).collect();
        let permuted = rank1(gp.view(), &glp, p.view(), &pl, Metric::Cosine).unwrap();
        assert_eq!(base, permuted);
    }

    #[test]
    fn cosine_invariant_to_probe_row_scaling() {
        let g = random_matrix(10, 4, 8);
        let gl: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let mut p = random_matrix(6, 4, 9);
        let pl: Vec<usize> = (0..6).map(|i| i % 2).collect();
        let base = rank1(g.view(), &gl, p.view(), &pl, Metric::Cosine).unwrap();
        for (i, mut row) in p.rows_mut().into_iter().enumerate() {
            let s = 0.5 + i as f64;
            row.mapv_inplace(|v| v * s);
        }
        let scaled = rank1(g.view(), &gl, p.view(), &pl, Metric::Cosine).unwrap();
        assert_eq!(base, scaled);
    }

    #[test]
    fn zero_probe_under_cosine_never_matches() {
        let g = array![[1.0, 0.0], [0.0, 1.0]];
        let p = array![[0.0, 0.0]];
        let acc = rank1(g.view(), &[0, 1], p.view(), &[0], Metric::Cosine).unwrap();
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn empty_gallery_is_an_error() {
        let g = Array2::<f64>::zeros((0, 3));
        let p = random_matrix(2, 3, 10);
        assert!(rank1(g.view(), &[], p.view(), &[0, 1], Metric::Euclidean).is_err());
    }

    #[test]
    fn neighbor_preservation_identity_and_scaling() {
        let m = random_matrix(15, 5, 11);
        let same = neighbor_preservation(m.view(), m.view(), 4).unwrap();
        assert_eq!(same, vec![1.0; 4]);
        let scaled = m.mapv(|v| 2.0 * v);
        let vs = neighbor_preservation(m.view(), scaled.view(), 4).unwrap();
        assert_eq!(vs, vec![1.0; 4]);
    }

    #[test]
    fn neighbor_preservation_matches_double_loop_oracle() {
        let orig = random_matrix(12, 6, 12);
        let proj = random_matrix(6, 2, 13);
        let emb = orig.dot(&proj);
        let got = neighbor_preservation(orig.view(), emb.view(), 3).unwrap();

        // Re-derive with an independent double loop.
        let n = 12;
        let knn = |m: &Array2<f64>, i: usize, k: usize| -> Vec<usize> {
            let mut ds: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let mut d = 0.0;
                    for c in 0..m.ncols() {
                        d += (m[[i, c]] - m[[j, c]]).powi(2);
                    }
                    (d, j)
                })
                .collect();
            ds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            ds.truncate(k);
            ds.into_iter().map(|(_, j)| j).collect()
        };
        for k in 1..=3 {
            let mut count = 0;
            for i in 0..n {
                let o = knn(&orig, i, k);
                let e: std::collections::BTreeSet<usize> = knn(&emb, i, k).into_iter().collect();
                if o.iter().all(|j| e.contains(j)) {
                    count += 1;
                }
            }
            assert_eq!(got[k - 1], count as f64 / n as f64, "k={k}");
        }
    }

    #[test]
    fn neighbor_preservation_rejects_bad_k() {
        let m = random_matrix(5, 2, 14);
        assert!(neighbor_preservation(m.view(), m.view(), 0).is_err());
        assert!(neighbor_preservation(m.view(), m.view(), 5).is_err());
    }

    #[test]
    fn gap_metric_prefers_aligned_views() {
        // Aligned: view y equals view x; classes well separated.
        let mut aligned = Array2::zeros((8, 2));
        for i in 0..8 {
            aligned[[i, 0]] = if i < 4 { 0.0 } else { 10.0 };
            aligned[[i, 1]] = i as f64 * 0.01;
        }
        let labels: Vec<usize> = (0..8).map(|i| usize::from(i >= 4)).collect();
        let g_aligned = gap_metric(aligned.view(), &labels, aligned.view(), &labels).unwrap();
        let shifted = aligned.mapv(|v| v + 5.0);
        let g_shifted = gap_metric(aligned.view(), &labels, shifted.view(), &labels).unwrap();
        assert!(g_aligned < g_shifted);
        assert!(g_aligned < 1.0);
    }

    #[test]
    fn chance_level_for_shuffled_labels() {
        // Random embeddings, balanced classes: accuracy concentrates near 1/c.
        let c = 4;
        let n = 400;
        let g = random_matrix(n, 6, 15);
        let p = random_matrix(n, 6, 16);
        let gl: Vec<usize> = (0..n).map(|i| i % c).collect();
        let pl: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % c).collect();
        let acc = rank1(g.view(), &gl, p.view(), &pl, Metric::Euclidean).unwrap();
        let chance = 1.0 / c as f64;
        let bound = 3.0 * (chance * (1.0 - chance) / n as f64).sqrt();
        assert!(
            (acc - chance).abs() <= bound,
            "acc {acc} vs chance {chance} +- {bound}"
        );
    }
}
