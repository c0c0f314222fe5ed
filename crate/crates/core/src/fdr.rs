//! False discovery rate control on raw and locally median-smoothed p-values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::order_statistic_cdf;
use crate::error::{Error, Result};
use crate::volume::ScalarVolume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdrMode {
    Fdr,
    FdrL,
}

impl std::str::FromStr for FdrMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fdr" => Ok(FdrMode::Fdr),
            "fdr_l" | "fdrl" => Ok(FdrMode::FdrL),
            other => Err(Error::Config(format!("unknown FDR mode `{other}`"))),
        }
    }
}

/// Centre plus the six face neighbours.
pub const CROSS_7: [[i64; 3]; 7] = [
    [0, 0, 0],
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Null law assumed for the smoothed p-values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothedNull {
    /// Neighbouring p-values treated as independent: the lower median of `m`
    /// uniforms, Beta(4, 4) for the full cross.
    Independent,
    /// `P(k-th smallest of m <= t) <= m t / k`, which holds whatever the
    /// dependence between neighbours.
    Dependent,
}

impl std::str::FromStr for SmoothedNull {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(SmoothedNull::Independent),
            "dependent" => Ok(SmoothedNull::Dependent),
            other => Err(Error::Config(format!("unknown smoothed null `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdrConfig {
    pub level: f64,
    pub lambda: f64,
    pub mode: FdrMode,
    /// Smoothing offsets for the local median; must contain the centre.
    pub smoothing_neighbors: Vec<[i64; 3]>,
    /// Below this many available members the raw p-value is kept.
    pub min_members: usize,
    pub smoothed_null: SmoothedNull,
}

impl Default for FdrConfig {
    fn default() -> Self {
        FdrConfig {
            level: 0.01,
            lambda: 0.2,
            mode: FdrMode::Fdr,
            smoothing_neighbors: CROSS_7.to_vec(),
            min_members: 4,
            smoothed_null: SmoothedNull::Independent,
        }
    }
}

impl FdrConfig {
    pub fn with_mode(mode: FdrMode) -> Self {
        FdrConfig {
            mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "FDR level {} outside (0, 1)",
                self.level
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!(
                "lambda {} outside [0, 1)",
                self.lambda
            )));
        }
        if !self.smoothing_neighbors.contains(&[0, 0, 0]) {
            return Err(Error::Config(
                "smoothing neighbourhood must include the centre".into(),
            ));
        }
        Ok(())
    }
}

/// A voxel takes part in testing when it is in the mask and has a p-value.
pub fn testable_mask(p: &ScalarVolume<f64>) -> Vec<bool> {
    p.data
        .iter()
        .zip(&p.mask)
        .map(|(v, &m)| m && v.is_finite())
        .collect()
}

/// Locally smoothed p-values together with the number of values entering
/// each median (1 where the raw value was kept).
#[derive(Clone, Debug)]
pub struct SmoothedP {
    pub p: ScalarVolume<f64>,
    pub members: Vec<u8>,
}

/// Median of `p` over the smoothing neighbourhood restricted to testable
/// voxels. Even counts use the lower middle value so that the null law is a
/// single order statistic.
pub fn smooth_p(p_vol: &ScalarVolume<f64>, cfg: &FdrConfig) -> SmoothedP {
    let shape = p_vol.shape;
    let testable = testable_mask(p_vol);
    let results: Vec<(f64, u8)> = (0..shape.len())
        .into_par_iter()
        .map(|i| {
            if !testable[i] {
                return (f64::NAN, 0);
            }
            let v = shape.voxel(i);
            let mut vals: Vec<f64> = cfg
                .smoothing_neighbors
                .iter()
                .filter_map(|&d| shape.offset(v, d))
                .map(|w| shape.index(w))
                .filter(|&w| testable[w])
                .map(|w| p_vol.data[w])
                .collect();
            if vals.len() < cfg.min_members {
                return (p_vol.data[i], 1);
            }
            vals.sort_by(f64::total_cmp);
            let k = vals.len().div_ceil(2);
            (vals[k - 1], vals.len() as u8)
        })
        .collect();
    SmoothedP {
        p: ScalarVolume {
            shape,
            data: results.iter().map(|r| r.0).collect(),
            mask: p_vol.mask.clone(),
        },
        members: results.iter().map(|r| r.1).collect(),
    }
}

/// Null distribution of the thresholded statistic, summed over voxels.
#[derive(Clone, Debug, PartialEq)]
pub enum NullModel {
    /// Raw p-values: uniform on [0, 1].
    Uniform { count: usize },
    /// Lower-median of `m` independent uniforms for `counts[m]` voxels.
    MedianOfUniforms { counts: Vec<usize> },
    /// Dependence-free bound on the lower median of `m` uniforms for
    /// `counts[m]` voxels.
    MedianBound { counts: Vec<usize> },
}

impl NullModel {
    pub fn from_members(members: impl IntoIterator<Item = u8>, kind: SmoothedNull) -> Self {
        let mut counts = vec![0usize; 256];
        for m in members {
            counts[m as usize] += 1;
        }
        while counts.last() == Some(&0) {
            counts.pop();
        }
        match kind {
            SmoothedNull::Independent => NullModel::MedianOfUniforms { counts },
            SmoothedNull::Dependent => NullModel::MedianBound { counts },
        }
    }

    pub fn total(&self) -> usize {
        match self {
            NullModel::Uniform { count } => *count,
            NullModel::MedianOfUniforms { counts } | NullModel::MedianBound { counts } => {
                counts.iter().sum()
            }
        }
    }

    /// Expected number of null statistics at or below `t`.
    pub fn expected_below(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match self {
            NullModel::Uniform { count } => *count as f64 * t,
            NullModel::MedianOfUniforms { counts } => counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(m, &c)| c as f64 * order_statistic_cdf(m, m.div_ceil(2), t))
                .sum(),
            NullModel::MedianBound { counts } => counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(m, &c)| c as f64 * (m as f64 * t / m.div_ceil(2) as f64).min(1.0))
                .sum(),
        }
    }
}

/// `min(1, #{stat > lambda} / E_null[#{stat > lambda}])`; with uniform nulls
/// this is `#{p > lambda} / (N (1 - lambda))`.
pub fn storey_pi0(stats: &[f64], lambda: f64, null: &NullModel) -> f64 {
    if stats.is_empty() {
        return 1.0;
    }
    let above = stats.iter().filter(|&&p| p > lambda).count() as f64;
    let expected = null.total() as f64 - null.expected_below(lambda);
    if expected <= 0.0 {
        return 1.0;
    }
    (above / expected).min(1.0)
}

/// Convenience form for raw p-values.
pub fn storey_pi0_uniform(p: &[f64], lambda: f64) -> f64 {
    storey_pi0(p, lambda, &NullModel::Uniform { count: p.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Largest statistic value with estimated FDR within the level, or
    /// `None` when nothing qualifies.
    pub cutoff: Option<f64>,
    pub rejections: usize,
}

/// Step-up threshold: the largest observed `t` with
/// `pi0 * E_null[#{stat <= t}] / #{stat <= t} <= level`.
pub fn fdr_threshold(stats: &[f64], level: f64, pi0: f64, null: &NullModel) -> Threshold {
    let mut sorted: Vec<f64> = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = Threshold {
        cutoff: None,
        rejections: 0,
    };
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i];
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == t {
            j += 1;
        }
        let below = (j + 1) as f64;
        let fdr = pi0 * null.expected_below(t) / below;
        if fdr <= level {
            best = Threshold {
                cutoff: Some(t),
                rejections: j + 1,
            };
        }
        i = j + 1;
    }
    best
}

/// Rejection mask over the full grid plus the thresholding summary.
#[derive(Clone, Debug)]
pub struct DecisionMask {
    pub reject: Vec<bool>,
    /// Voxels that entered the procedure.
    pub tested: Vec<bool>,
    /// The thresholded statistic (p or smoothed p).
    pub statistic: ScalarVolume<f64>,
    pub threshold: Threshold,
    pub pi0: f64,
}

impl DecisionMask {
    pub fn rejected_count(&self) -> usize {
        self.reject.iter().filter(|&&r| r).count()
    }
}

/// Applies the configured procedure to a p-value volume (NaN = untested).
pub fn decide(p_vol: &ScalarVolume<f64>, cfg: &FdrConfig) -> Result<DecisionMask> {
    cfg.validate()?;
    let tested = testable_mask(p_vol);
    let n_tested = tested.iter().filter(|&&t| t).count();
    if n_tested == 0 {
        return Err(Error::TooFewVoxels {
            needed: 1,
            found: 0,
        });
    }
    let (statistic, null) = match cfg.mode {
        FdrMode::Fdr => (p_vol.clone(), NullModel::Uniform { count: n_tested }),
        FdrMode::FdrL => {
            let sm = smooth_p(p_vol, cfg);
            let members = sm
                .members
                .iter()
                .zip(&tested)
                .filter_map(|(&m, &t)| t.then_some(m));
            let null = NullModel::from_members(members, cfg.smoothed_null);
            (sm.p, null)
        }
    };
    let values: Vec<f64> = statistic
        .data
        .iter()
        .zip(&tested)
        .filter_map(|(&v, &t)| t.then_some(v))
        .collect();
    let pi0 = storey_pi0(&values, cfg.lambda, &null);
    let threshold = fdr_threshold(&values, cfg.level, pi0, &null);
    let reject = statistic
        .data
        .iter()
        .zip(&tested)
        .map(|(&v, &t)| t && threshold.cutoff.is_some_and(|c| v <= c))
        .collect();
    Ok(DecisionMask {
        reject,
        tested,
        statistic,
        threshold,
        pi0,
    })
}
