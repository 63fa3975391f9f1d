//! Same-class and kNN different-class pair sets over the pooled samples of
//! both views (X rows first, then Y rows).

use std::collections::BTreeSet;
use std::io::Write;

use ndarray::ArrayView2;

use crate::error::{DcanError, Result};

/// Unordered index pair with `i < j`.
pub type Pair = (usize, usize);

/// The margin-criterion pair sets: S (same class, all pairs) and D
/// (different class, restricted to k nearest neighbors).
#[derive(Debug, Clone)]
pub struct PairSets {
    pub same_pairs: BTreeSet<Pair>,
    pub diff_pairs: BTreeSet<Pair>,
    pub k: usize,
    /// True when some query had fewer than k different-label samples and the
    /// neighbor count was clamped.
    pub k_clamped: bool,
}

impl PairSets {
    /// Build both pair sets from pooled features and labels.
    pub fn build(features: ArrayView2<'_, f64>, labels: &[usize], k: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(DcanError::ShapeMismatch(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        let same_pairs = build_same_pairs(labels)?;
        let (diff_pairs, k_clamped) = build_diff_pairs(features, labels, k)?;
        Ok(Self {
            same_pairs,
            diff_pairs,
            k,
            k_clamped,
        })
    }

    pub fn n1(&self) -> usize {
        self.same_pairs.len()
    }

    pub fn n2(&self) -> usize {
        self.diff_pairs.len()
    }

    /// Debug dump as CSV rows `i,j,kind`.
    pub fn dump_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "i,j,kind")?;
        for (i, j) in &self.same_pairs {
            writeln!(out, "{i},{j},same")?;
        }
        for (i, j) in &self.diff_pairs {
            writeln!(out, "{i},{j},diff")?;
        }
        Ok(())
    }
}

/// All unordered pairs of pooled samples sharing a label.
pub fn build_same_pairs(labels: &[usize]) -> Result<BTreeSet<Pair>> {
    if labels.len() < 2 {
        return Err(DcanError::DegenerateData(format!(
            "need at least 2 pooled samples, got {}",
            labels.len()
        )));
    }
    let mut pairs = BTreeSet::new();
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            if labels[i] == labels[j] {
                pairs.insert((i, j));
            }
        }
    }
    Ok(pairs)
}

/// For every pooled sample, pair it with its k nearest (Euclidean) samples
/// carrying a different label. Ties go to the lower index; requests for more
/// neighbors than exist are clamped (flagged in the returned bool).
pub fn build_diff_pairs(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    k: usize,
) -> Result<(BTreeSet<Pair>, bool)> {
    if k == 0 {
        return Err(DcanError::Config("neighbor count k must be >= 1".into()));
    }
    let n = labels.len();
    if features.nrows() != n {
        return Err(DcanError::ShapeMismatch(format!(
            "{} feature rows vs {} labels",
            features.nrows(),
            n
        )));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(DcanError::DegenerateData(
            "different-class pairs need at least 2 classes".into(),
        ));
    }

    let mut pairs = BTreeSet::new();
    let mut clamped = false;
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        candidates.clear();
        for j in 0..n {
            if labels[j] == labels[i] {
                continue;
            }
            let d2: f64 = features
                .row(i)
                .iter()
                .zip(features.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            candidates.push((d2, j));
        }
        if candidates.len() < k {
            clamped = true;
        }
        let take = k.min(candidates.len());
        candidates.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in candidates.iter().take(take) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    Ok((pairs, clamped))
}

/// Compactness and penalty terms over hidden representations:
/// g1 = (1/(2*n1)) * sum over S of squared pair distances, g2 likewise over D.
pub fn margin_terms(hidden: ArrayView2<'_, f64>, pairs: &PairSets) -> Result<(f64, f64)> {
    if pairs.same_pairs.is_empty() || pairs.diff_pairs.is_empty() {
        return Err(DcanError::DegenerateData(
            "margin terms need non-empty pair sets".into(),
        ));
    }
    let sq = |set: &BTreeSet<Pair>| -> Result<f64> {
        let mut total = 0.0;
        for &(i, j) in set {
            if j >= hidden.nrows() {
                return Err(DcanError::DimensionMismatch(format!(
                    "pair index {} exceeds {} hidden rows",
                    j,
                    hidden.nrows()
                )));
            }
            total += hidden
                .row(i)
                .iter()
                .zip(hidden.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(total)
    };
    let g1 = sq(&pairs.same_pairs)? / (2.0 * pairs.n1() as f64);
    let g2 = sq(&pairs.diff_pairs)? / (2.0 * pairs.n2() as f64);
    Ok((g1, g2))
}
