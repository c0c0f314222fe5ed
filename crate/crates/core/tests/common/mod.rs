//! Independent reference implementations shared by the oracle tests and the
//! acceptance runner.

#![allow(dead_code)]

use dtitest::fdr::{fdr_threshold, NullModel};
use dtitest::local_test::anova_components;
use dtitest::{eigen3, eigen3_matrix, SymTensor};
use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug)]
pub struct EigenErrors {
    /// Largest eigenvalue difference against nalgebra.
    pub lambda: f64,
    /// Largest component of `D v - lambda v`.
    pub residual: f64,
    /// Matrices where the 3x3-matrix entry point disagreed with the tensor one.
    pub entry_mismatches: usize,
}

/// Every tenth matrix is nearly degenerate.
pub fn eigen_errors(count: usize, seed: u64) -> EigenErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = EigenErrors {
        lambda: 0.0,
        residual: 0.0,
        entry_mismatches: 0,
    };
    for i in 0..count {
        let e: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let d = if i % 10 == 0 {
            let s = rng.random_range(-1.0..1.0);
            SymTensor::from_elements([
                s + e[0] * 1e-7,
                s + e[1] * 1e-7,
                s,
                e[3] * 1e-7,
                e[4] * 1e-7,
                e[5] * 1e-7,
            ])
        } else {
            SymTensor::from_elements(e)
        };
        let m = d.to_matrix();
        let reference = SymmetricEigen::new(Matrix3::from_fn(|r, c| m[r][c]));
        let mut want: Vec<f64> = reference.eigenvalues.iter().copied().collect();
        want.sort_by(|a, b| b.total_cmp(a));
        let got = eigen3(&d);
        for k in 0..3 {
            out.lambda = out.lambda.max((got.lambdas[k] - want[k]).abs());
            let v = got.vectors[k];
            for r in 0..3 {
                let dv = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2];
                out.residual = out.residual.max((dv - got.lambdas[k] * v[r]).abs());
            }
        }
        if eigen3_matrix(&m).ok().map(|s| s.lambdas) != Some(got.lambdas) {
            out.entry_mismatches += 1;
        }
    }
    out
}

pub fn benjamini_hochberg(p: &[f64], level: f64) -> usize {
    let mut s = p.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    let mut k = 0;
    for (i, &v) in s.iter().enumerate() {
        if v <= level * (i + 1) as f64 / m {
            k = i + 1;
        }
    }
    k
}

/// Trials where the step-up rule with `pi0 = 1` disagrees with direct BH,
/// either in the count or in the set implied by the cutoff.
pub fn bh_mismatches(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for trial in 0..trials {
        let m = rng.random_range(1..3000);
        let signal = rng.random_range(0.0..0.5);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random_bool(signal) {
                    rng.random_range(0.0..1e-3)
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let level = [0.01, 0.05, 0.1][trial % 3];
        let t = fdr_threshold(&p, level, 1.0, &NullModel::Uniform { count: m });
        let bh = benjamini_hochberg(&p, level);
        let below = t
            .cutoff
            .map_or(0, |c| p.iter().filter(|&&v| v <= c).count());
        if t.rejections != bh || below != bh {
            bad += 1;
        }
    }
    bad
}

/// Residuals of `y = mu + a_j + b_k` (with `a_0 = b_0 = 0`) fitted through an
/// explicit design matrix.
pub fn two_way_residuals(rows: &[[f64; 3]]) -> Vec<f64> {
    let n = rows.len();
    let cols = 1 + (n - 1) + 2;
    let mut x = DMatrix::zeros(3 * n, cols);
    let mut y = DVector::zeros(3 * n);
    for (j, r) in rows.iter().enumerate() {
        for k in 0..3 {
            let i = 3 * j + k;
            x[(i, 0)] = 1.0;
            if j > 0 {
                x[(i, j)] = 1.0;
            }
            if k > 0 {
                x[(i, n - 1 + k)] = 1.0;
            }
            y[i] = r[k];
        }
    }
    let xt = x.transpose();
    let beta = (&xt * &x).cholesky().unwrap().solve(&(&xt * &y));
    (y - x * beta).iter().copied().collect()
}

/// Largest deviation of MSE, S_j^2 or the mean S^2 from the brute-force fit
/// over random 25x3 tables.
pub fn anova_worst_error(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let rows: Vec<[f64; 3]> = (0..25)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..2.0)))
            .collect();
        let c = anova_components(&rows).unwrap();
        let ss: f64 = two_way_residuals(&rows).iter().map(|e| e * e).sum();
        worst = worst.max((c.mse - ss / 48.0).abs());
        let mut total = 0.0;
        for (j, r) in rows.iter().enumerate() {
            let mean = r.iter().sum::<f64>() / 3.0;
            let s2 = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
            worst = worst.max((c.s2[j] - s2).abs());
            total += s2;
        }
        worst = worst.max((c.s2bar - total / 25.0).abs());
    }
    worst
}
