//! Log-linear least-squares tensor estimation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Square, SymTensor, Vec3};
use crate::scalar::Real;
use crate::sim::{AcquisitionScheme, DwiVolume};
use crate::volume::GridShape;

const UNIT_TOL: f64 = 1e-9;

/// `(g1^2, g2^2, g3^2, 2 g1 g2, 2 g1 g3, 2 g2 g3)` for a unit gradient.
pub fn design_vector<T: Real>(g: Vec3<T>) -> Result<[T; 6]> {
    let norm = crate::linalg::norm3(g);
    if (norm - T::one()).abs().as_f64() > UNIT_TOL {
        return Err(Error::NonUnitGradient(norm.as_f64()));
    }
    let two = T::lit(2.0);
    Ok([
        g[0] * g[0],
        g[1] * g[1],
        g[2] * g[2],
        two * g[0] * g[1],
        two * g[0] * g[2],
        two * g[1] * g[2],
    ])
}

/// Per-voxel tensors with fit status.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField<T> {
    pub shape: GridShape,
    pub tensors: Vec<SymTensor<T>>,
    pub fit_ok: Vec<bool>,
    pub mask: Vec<bool>,
}

impl<T: Real> TensorField<T> {
    /// Inside the mask with a successful fit.
    #[inline]
    pub fn valid(&self, idx: usize) -> bool {
        self.mask[idx] && self.fit_ok[idx]
    }

    pub fn valid_count(&self) -> usize {
        (0..self.shape.len()).filter(|&i| self.valid(i)).count()
    }
}

/// Ordinary least-squares fitter with the pseudo-inverse precomputed for a
/// scheme.
///
/// Without intercept the reference signal is a known offset and the model is
/// `(log phi0 - log phi_i) / b = x_i^T d`. With intercept, `log phi0` is
/// estimated jointly and the reference acquisition enters as the row `x = 0`.
#[derive(Clone, Debug)]
pub struct TensorFitter<T> {
    b: T,
    intercept: bool,
    /// Row-major `p x m` pseudo-inverse, `p` unknowns, `m` observations.
    pinv: Vec<T>,
    unknowns: usize,
    observations: usize,
}

impl<T: Real> TensorFitter<T> {
    pub fn new(scheme: &AcquisitionScheme<T>, intercept: bool) -> Result<Self> {
        let rows: Vec<Vec<T>> = {
            let mut rows = Vec::with_capacity(scheme.gradients.len() + 1);
            if intercept {
                let mut r0 = vec![T::one()];
                r0.extend([T::zero(); 6]);
                rows.push(r0);
            }
            for &g in &scheme.gradients {
                let x = design_vector(g)?;
                let row = if intercept {
                    let mut r = vec![T::one()];
                    r.extend(x.iter().map(|&v| -scheme.b * v));
                    r
                } else {
                    x.to_vec()
                };
                rows.push(row);
            }
            rows
        };
        let p = if intercept { 7 } else { 6 };
        let m = rows.len();
        let mut xtx = Square::<T>::zeros(p);
        for row in &rows {
            for i in 0..p {
                for j in 0..p {
                    xtx[(i, j)] = xtx[(i, j)] + row[i] * row[j];
                }
            }
        }
        let inv = xtx.inverse().ok_or_else(|| {
            Error::Config(format!(
                "gradient design with {} directions is rank deficient",
                scheme.gradients.len()
            ))
        })?;
        let mut pinv = vec![T::zero(); p * m];
        for i in 0..p {
            for (k, row) in rows.iter().enumerate() {
                pinv[i * m + k] = (0..p).map(|j| inv[(i, j)] * row[j]).sum();
            }
        }
        Ok(TensorFitter {
            b: scheme.b,
            intercept,
            pinv,
            unknowns: p,
            observations: m,
        })
    }

    /// Fits one voxel from `(phi0, phi1, ..., phir)`. `None` when any signal
    /// is nonpositive or not finite.
    pub fn fit(&self, signals: &[T]) -> Option<SymTensor<T>> {
        if signals.iter().any(|&s| !(s > T::zero()) || !s.is_finite()) {
            return None;
        }
        let mut d = [T::zero(); 6];
        if self.intercept {
            debug_assert_eq!(signals.len(), self.observations);
            let y: Vec<T> = signals.iter().map(|s| s.ln()).collect();
            for (i, di) in d.iter_mut().enumerate() {
                let row = &self.pinv[(i + 1) * self.observations..(i + 2) * self.observations];
                *di = row.iter().zip(&y).map(|(&p, &v)| p * v).sum();
            }
        } else {
            debug_assert_eq!(signals.len(), self.observations + 1);
            let log0 = signals[0].ln();
            let y: Vec<T> = signals[1..]
                .iter()
                .map(|s| (log0 - s.ln()) / self.b)
                .collect();
            for (i, di) in d.iter_mut().enumerate() {
                let row = &self.pinv[i * self.observations..(i + 1) * self.observations];
                *di = row.iter().zip(&y).map(|(&p, &v)| p * v).sum();
            }
        }
        debug_assert_eq!(self.unknowns, if self.intercept { 7 } else { 6 });
        Some(SymTensor(d))
    }
}

/// One-shot voxel fit with the known-offset model.
pub fn fit_voxel<T: Real>(
    signals: &[T],
    scheme: &AcquisitionScheme<T>,
) -> Result<Option<SymTensor<T>>> {
    Ok(TensorFitter::new(scheme, false)?.fit(signals))
}

/// Fits every mask voxel. Failures are flagged in `fit_ok`, never fatal.
pub fn fit_volume<T: Real>(dwi: &DwiVolume<T>, intercept: bool) -> Result<TensorField<T>> {
    let fitter = TensorFitter::new(&dwi.scheme, intercept)?;
    let n = dwi.shape.len();
    let results: Vec<Option<SymTensor<T>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if dwi.mask[i] {
                fitter.fit(dwi.signals(i))
            } else {
                None
            }
        })
        .collect();
    let fit_ok = results.iter().map(Option::is_some).collect();
    let nan = T::nan();
    let tensors = results
        .into_iter()
        .map(|r| r.unwrap_or(SymTensor([nan; 6])))
        .collect();
    Ok(TensorField {
        shape: dwi.shape,
        tensors,
        fit_ok,
        mask: dwi.mask.clone(),
    })
}
