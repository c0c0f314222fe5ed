//! Comparison against ground truth: confusion counts, ROC/AUC, QQ against
//! chi-square, and isolated-detection counts.

use serde::{Deserialize, Serialize};

use crate::dist::{chi2_cdf, chi2_quantile};
use crate::error::{Error, Result};
use crate::volume::{GridShape, LabelVolume};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl ConfusionSummary {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

fn check_grid(a: &GridShape, b: &GridShape) -> Result<()> {
    if a.same_grid(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.dims(),
            b.dims()
        )))
    }
}

/// Counts over voxels that are evaluated and inside the truth mask.
/// Labels 2..=4 are positives, label 1 negatives.
pub fn confusion(
    reject: &[bool],
    evaluated: &[bool],
    shape: &GridShape,
    truth: &LabelVolume,
) -> Result<ConfusionSummary> {
    check_grid(shape, &truth.shape)?;
    if reject.len() != truth.label.len() || evaluated.len() != truth.label.len() {
        return Err(Error::ShapeMismatch(
            "decision length differs from truth".into(),
        ));
    }
    let mut s = ConfusionSummary::default();
    for i in 0..reject.len() {
        if !evaluated[i] {
            continue;
        }
        match (truth.truth(i), reject[i]) {
            (Some(true), true) => s.tp += 1,
            (Some(true), false) => s.fn_ += 1,
            (Some(false), true) => s.fp += 1,
            (Some(false), false) => s.tn += 1,
            (None, _) => {}
        }
    }
    s.sensitivity = ratio(s.tp, s.tp + s.fn_);
    s.specificity = ratio(s.tn, s.tn + s.fp);
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Large values flag anisotropy (FA).
    Greater,
    /// Small values flag anisotropy (p-values).
    Less,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(1 - specificity, sensitivity)` from the strictest to the loosest
    /// threshold.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Exact step ROC over every distinct statistic value plus both infinite
/// endpoints; area by the trapezoid rule.
pub fn roc(
    stat: &[f64],
    evaluated: &[bool],
    truth: &LabelVolume,
    direction: Direction,
) -> Result<RocCurve> {
    let mut scored: Vec<(f64, bool)> = stat
        .iter()
        .enumerate()
        .filter(|&(i, v)| evaluated[i] && v.is_finite())
        .filter_map(|(i, &v)| truth.truth(i).map(|t| (v, t)))
        .map(|(v, t)| {
            (
                if direction == Direction::Greater {
                    v
                } else {
                    -v
                },
                t,
            )
        })
        .collect();
    let pos = scored.iter().filter(|s| s.1).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    // descending score: loosening the threshold admits voxels in this order
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = trapezoid(&points);
    Ok(RocCurve { points, auc })
}

pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum()
}

/// Linear-interpolation percentile of sorted data (`q` in [0, 1]).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QqRow {
    pub percentile: u32,
    pub empirical: f64,
    pub theoretical: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QqTable {
    pub df: usize,
    pub count: usize,
    pub rows: Vec<QqRow>,
    /// `max |empirical - theoretical| / theoretical` over the table.
    pub max_rel_deviation: f64,
    /// Kolmogorov-Smirnov distance to chi-square(df).
    pub ks: f64,
}

/// Empirical 1st..99th percentiles of `values` against chi-square(df).
pub fn qq_chi2(values: &[f64], df: usize) -> Result<QqTable> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 100 {
        return Err(Error::TooFewVoxels {
            needed: 100,
            found: v.len(),
        });
    }
    v.sort_by(f64::total_cmp);
    let rows: Vec<QqRow> = (1..=99)
        .map(|k| {
            let q = k as f64 / 100.0;
            QqRow {
                percentile: k,
                empirical: percentile_sorted(&v, q),
                theoretical: chi2_quantile(df, q),
            }
        })
        .collect();
    let max_rel_deviation = rows
        .iter()
        .map(|r| (r.empirical - r.theoretical).abs() / r.theoretical)
        .fold(0.0, f64::max);
    Ok(QqTable {
        df,
        count: v.len(),
        rows,
        max_rel_deviation,
        ks: ks_sorted(&v, |x| chi2_cdf(df, x)),
    })
}

/// Kolmogorov-Smirnov distance between sorted data and a CDF.
pub fn ks_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsolatedCounts {
    /// Detections with no other detection in their 3x3x3 cube.
    pub s1: usize,
    /// Detections with exactly one other detection in their 3x3x3 cube.
    pub s2: usize,
}

/// Counts detections by how many detections their 26-connected cube holds
/// (the voxel itself included).
pub fn isolated_counts(reject: &[bool], shape: &GridShape) -> IsolatedCounts {
    let mut out = IsolatedCounts::default();
    for (i, &r) in reject.iter().enumerate() {
        if !r {
            continue;
        }
        let v = shape.voxel(i);
        let mut count = 0usize;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(w) = shape.offset(v, [dx, dy, dz]) {
                        count += reject[shape.index(w)] as usize;
                    }
                }
            }
        }
        match count {
            1 => out.s1 += 1,
            2 => out.s2 += 1,
            _ => {}
        }
    }
    out
}
