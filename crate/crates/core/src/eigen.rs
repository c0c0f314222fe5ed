//! Symmetric 3x3 eigen-decomposition and the FA / RA / MD scalar maps.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::TensorField;
use crate::linalg::{Mat3, SymTensor, Vec3};
use crate::scalar::Real;
use crate::volume::ScalarVolume;

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenSystem<T> {
    /// `(lambda_(3), lambda_(2), lambda_(1))`
    pub lambdas: Vec3<T>,
    /// `vectors[k]` belongs to `lambdas[k]`.
    pub vectors: [Vec3<T>; 3],
}

impl<T: Real> EigenSystem<T> {
    pub fn mean_diffusivity(&self) -> T {
        (self.lambdas[0] + self.lambdas[1] + self.lambdas[2]) / T::lit(3.0)
    }

    /// Eigenvectors as matrix columns.
    pub fn q(&self) -> Mat3<T> {
        let v = &self.vectors;
        [
            [v[0][0], v[1][0], v[2][0]],
            [v[0][1], v[1][1], v[2][1]],
            [v[0][2], v[1][2], v[2][2]],
        ]
    }

    pub fn reconstruct(&self) -> SymTensor<T> {
        SymTensor::from_eigen(&self.q(), self.lambdas)
    }
}

fn degeneracy_tol<T: Real>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(64.0))
}

/// Decomposes a symmetric tensor.
///
/// Uses the trigonometric solution of the characteristic cubic and falls
/// back to cyclic Jacobi rotations whenever two eigenvalues are nearly equal
/// or the analytic eigenvectors do not reconstruct `d` to working precision.
pub fn eigen3<T: Real>(d: &SymTensor<T>) -> EigenSystem<T> {
    let scale = d.frobenius();
    if scale == T::zero() {
        return canonical(identity_system([T::zero(); 3]));
    }
    let sys = analytic(d, scale).unwrap_or_else(|| jacobi(d));
    canonical(sys)
}

/// Checked entry point for a full (possibly asymmetric) matrix.
pub fn eigen3_matrix<T: Real>(m: &Mat3<T>) -> Result<EigenSystem<T>> {
    let scale = m
        .iter()
        .flatten()
        .fold(T::zero(), |acc, v| acc.max(v.abs()));
    let asym = (m[0][1] - m[1][0])
        .abs()
        .max((m[0][2] - m[2][0]).abs())
        .max((m[1][2] - m[2][1]).abs());
    if asym > T::lit(1e-9) * scale.max(T::min_positive_value()) {
        return Err(Error::Asymmetric(asym.as_f64()));
    }
    Ok(eigen3(&SymTensor::from_matrix(m)))
}

fn identity_system<T: Real>(lambdas: Vec3<T>) -> EigenSystem<T> {
    let (o, z) = (T::one(), T::zero());
    EigenSystem {
        lambdas,
        vectors: [[o, z, z], [z, o, z], [z, z, o]],
    }
}

fn analytic<T: Real>(d: &SymTensor<T>, scale: T) -> Option<EigenSystem<T>> {
    let [a11, a22, a33, a12, a13, a23] = d.0;
    let three = T::lit(3.0);
    let tol = degeneracy_tol::<T>();

    let off = a12 * a12 + a13 * a13 + a23 * a23;
    if off == T::zero() {
        let mut pairs = [(a11, 0usize), (a22, 1), (a33, 2)];
        pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut sys = identity_system([pairs[0].0, pairs[1].0, pairs[2].0]);
        let (o, z) = (T::one(), T::zero());
        for (k, &(_, axis)) in pairs.iter().enumerate() {
            let mut v = [z; 3];
            v[axis] = o;
            sys.vectors[k] = v;
        }
        return Some(sys);
    }

    let q = (a11 + a22 + a33) / three;
    let p2 = (a11 - q).powi(2) + (a22 - q).powi(2) + (a33 - q).powi(2) + T::lit(2.0) * off;
    let p = (p2 / T::lit(6.0)).sqrt();
    if p <= tol * scale {
        return None;
    }
    let b = SymTensor([
        (a11 - q) / p,
        (a22 - q) / p,
        (a33 - q) / p,
        a12 / p,
        a13 / p,
        a23 / p,
    ]);
    let r = (b.det() / T::lit(2.0)).max(-T::one()).min(T::one());
    let phi = r.acos() / three;
    let two_pi_3 = T::lit(2.0 * std::f64::consts::PI / 3.0);
    let l_hi = q + T::lit(2.0) * p * phi.cos();
    let l_lo = q + T::lit(2.0) * p * (phi + two_pi_3).cos();
    let l_mid = three * q - l_hi - l_lo;

    // Gaps below the tolerance make the null-space vectors ill-conditioned.
    if (l_hi - l_mid) <= tol * scale || (l_mid - l_lo) <= tol * scale {
        return None;
    }

    let v_hi = null_vector(d, l_hi)?;
    let v_lo = null_vector(d, l_lo)?;
    let v_mid = cross(v_lo, v_hi);

    let sys = EigenSystem {
        lambdas: [l_hi, l_mid, l_lo],
        vectors: [v_hi, v_mid, v_lo],
    };
    let residual = sys.reconstruct().sub(d).frobenius();
    (residual <= T::epsilon() * T::lit(256.0) * scale).then_some(sys)
}

fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Unit vector spanning the null space of `d - lambda I`, from the largest
/// cross product of its rows.
fn null_vector<T: Real>(d: &SymTensor<T>, lambda: T) -> Option<Vec3<T>> {
    let mut m = d.to_matrix();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = row[i] - lambda;
    }
    let candidates = [cross(m[0], m[1]), cross(m[0], m[2]), cross(m[1], m[2])];
    let best = candidates
        .iter()
        .map(|c| (c, c[0] * c[0] + c[1] * c[1] + c[2] * c[2]))
        .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap_or(std::cmp::Ordering::Equal))?;
    if !(best.1 > T::zero()) || !best.1.is_finite() {
        return None;
    }
    let n = best.1.sqrt();
    Some(best.0.map(|c| c / n))
}

/// Cyclic Jacobi rotations; robust for repeated eigenvalues.
fn jacobi<T: Real>(d: &SymTensor<T>) -> EigenSystem<T> {
    let mut a = d.to_matrix();
    let mut v = identity_system([T::zero(); 3]).q();
    let scale = d.frobenius();
    for _sweep in 0..64 {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off <= T::epsilon() * T::lit(0.25) * scale {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        a[j][j]
            .partial_cmp(&a[i][i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    EigenSystem {
        lambdas: order.map(|i| a[i][i]),
        vectors: order.map(|i| [v[0][i], v[1][i], v[2][i]]),
    }
}

/// First component above noise level made positive; the frame is kept
/// right-handed-agnostic since each vector's sign is fixed independently.
fn canonical<T: Real>(mut sys: EigenSystem<T>) -> EigenSystem<T> {
    let tiny = T::epsilon() * T::lit(16.0);
    for v in sys.vectors.iter_mut() {
        if let Some(&first) = v.iter().find(|c| c.abs() > tiny) {
            if first < T::zero() {
                *v = v.map(|c| -c);
            }
        }
    }
    sys
}

fn dispersion<T: Real>(l: Vec3<T>) -> (T, T) {
    let mean = (l[0] + l[1] + l[2]) / T::lit(3.0);
    let dev2 = l.iter().map(|&x| (x - mean) * (x - mean)).sum();
    (mean, dev2)
}

/// Fractional anisotropy; `None` when all eigenvalues vanish.
pub fn fa<T: Real>(lambdas: Vec3<T>) -> Option<T> {
    let (_, dev2) = dispersion(lambdas);
    let sq: T = lambdas.iter().map(|&x| x * x).sum();
    if sq == T::zero() || !sq.is_finite() {
        return None;
    }
    Some((T::lit(1.5) * dev2 / sq).sqrt())
}

/// Relative anisotropy; `None` for zero trace.
pub fn ra<T: Real>(lambdas: Vec3<T>) -> Option<T> {
    let (_, dev2) = dispersion(lambdas);
    let sum = lambdas[0] + lambdas[1] + lambdas[2];
    if sum == T::zero() || !sum.is_finite() {
        return None;
    }
    Some(T::lit(3.0 / std::f64::consts::SQRT_2) * dev2.sqrt() / sum)
}

/// Per-voxel eigen systems plus FA, RA and MD volumes. Failed fits and
/// undefined scalars carry NaN.
#[derive(Clone, Debug)]
pub struct ScalarMaps<T> {
    pub fa: ScalarVolume<T>,
    pub ra: ScalarVolume<T>,
    pub md: ScalarVolume<T>,
    pub eigen: Vec<Option<EigenSystem<T>>>,
}

pub fn scalar_maps<T: Real>(tensors: &TensorField<T>) -> ScalarMaps<T> {
    let eigen: Vec<Option<EigenSystem<T>>> = (0..tensors.shape.len())
        .into_par_iter()
        .map(|i| tensors.valid(i).then(|| eigen3(&tensors.tensors[i])))
        .collect();
    let nan = T::nan();
    let make = |f: &(dyn Fn(&EigenSystem<T>) -> Option<T> + Sync)| ScalarVolume {
        shape: tensors.shape,
        data: eigen
            .iter()
            .map(|e| e.as_ref().and_then(f).unwrap_or(nan))
            .collect(),
        mask: tensors.mask.clone(),
    };
    let fa_vol = make(&|e| fa(e.lambdas));
    let ra_vol = make(&|e| ra(e.lambdas));
    let md = ScalarVolume {
        shape: tensors.shape,
        data: (0..tensors.shape.len())
            .map(|i| {
                if tensors.valid(i) {
                    tensors.tensors[i].trace() / T::lit(3.0)
                } else {
                    nan
                }
            })
            .collect(),
        mask: tensors.mask.clone(),
    };
    ScalarMaps {
        fa: fa_vol,
        ra: ra_vol,
        md,
        eigen,
    }
}
