//! Small dense linear algebra: 3x3 symmetric tensors and tiny square solves.

use crate::scalar::Real;

pub type Mat3<T> = [[T; 3]; 3];
pub type Vec3<T> = [T; 3];

/// Symmetric 3x3 matrix stored as `(D11, D22, D33, D12, D13, D23)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SymTensor<T>(pub [T; 6]);

impl<T: Real> SymTensor<T> {
    pub fn from_elements(d: [T; 6]) -> Self {
        SymTensor(d)
    }

    pub fn diagonal(a: T, b: T, c: T) -> Self {
        let z = T::zero();
        SymTensor([a, b, c, z, z, z])
    }

    pub fn scaled_identity(a: T) -> Self {
        Self::diagonal(a, a, a)
    }

    /// Symmetrises `m` by averaging off-diagonal pairs.
    pub fn from_matrix(m: &Mat3<T>) -> Self {
        let h = T::lit(0.5);
        SymTensor([
            m[0][0],
            m[1][1],
            m[2][2],
            (m[0][1] + m[1][0]) * h,
            (m[0][2] + m[2][0]) * h,
            (m[1][2] + m[2][1]) * h,
        ])
    }

    /// `Q diag(lambda) Q^T`, with the eigenvectors in the columns of `q`.
    pub fn from_eigen(q: &Mat3<T>, lambda: Vec3<T>) -> Self {
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| q[i][k] * lambda[k] * q[j][k]).sum();
            }
        }
        Self::from_matrix(&m)
    }

    pub fn to_matrix(&self) -> Mat3<T> {
        let [d11, d22, d33, d12, d13, d23] = self.0;
        [[d11, d12, d13], [d12, d22, d23], [d13, d23, d33]]
    }

    pub fn elements(&self) -> [T; 6] {
        self.0
    }

    pub fn trace(&self) -> T {
        self.0[0] + self.0[1] + self.0[2]
    }

    pub fn det(&self) -> T {
        let [a, b, c, d, e, f] = self.0;
        a * (b * c - f * f) - d * (d * c - f * e) + e * (d * f - b * e)
    }

    /// `g^T D g`.
    pub fn quadratic_form(&self, g: Vec3<T>) -> T {
        let [d11, d22, d33, d12, d13, d23] = self.0;
        let two = T::lit(2.0);
        d11 * g[0] * g[0]
            + d22 * g[1] * g[1]
            + d33 * g[2] * g[2]
            + two * (d12 * g[0] * g[1] + d13 * g[0] * g[2] + d23 * g[1] * g[2])
    }

    /// Frobenius norm, `sqrt(trace(D^2))`.
    pub fn frobenius(&self) -> T {
        let [a, b, c, d, e, f] = self.0;
        let two = T::lit(2.0);
        (a * a + b * b + c * c + two * (d * d + e * e + f * f)).sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.0;
        for (o, b) in out.iter_mut().zip(other.0) {
            *o = *o - b;
        }
        SymTensor(out)
    }

    pub fn scale(&self, c: T) -> Self {
        SymTensor(self.0.map(|x| x * c))
    }

    pub fn rotate(&self, r: &Mat3<T>) -> Self {
        let m = self.to_matrix();
        let rm = matmul(r, &m);
        Self::from_matrix(&matmul(&rm, &transpose(r)))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

pub fn matmul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = *a;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[j][i];
        }
    }
    out
}

/// Max-abs entry of `Q^T Q - I`.
pub fn orthogonality_error<T: Real>(q: &Mat3<T>) -> T {
    let qtq = matmul(&transpose(q), q);
    let mut worst = T::zero();
    for (i, row) in qtq.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((v - target).abs());
        }
    }
    worst
}

pub fn norm3<T: Real>(v: Vec3<T>) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Row-major dense square matrix of runtime size.
#[derive(Clone, Debug, PartialEq)]
pub struct Square<T> {
    pub n: usize,
    pub a: Vec<T>,
}

impl<T: Real> Square<T> {
    pub fn zeros(n: usize) -> Self {
        Square {
            n,
            a: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    /// `x^T M x`.
    pub fn quadratic_form(&self, x: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                acc = acc + x[i] * self[(i, j)] * x[j];
            }
        }
        acc
    }

    pub fn mat_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)] * x[j]).sum())
            .collect()
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    /// `None` when a pivot underflows relative to the matrix scale.
    pub fn inverse(&self) -> Option<Self> {
        let n = self.n;
        let scale = self.a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if scale == T::zero() {
            return None;
        }
        let tiny = scale * T::epsilon() * T::lit(n as f64);
        let mut m = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap())
                .unwrap();
            if m[(pivot, col)].abs() <= tiny {
                return None;
            }
            if pivot != col {
                for k in 0..n {
                    m.a.swap(pivot * n + k, col * n + k);
                    inv.a.swap(pivot * n + k, col * n + k);
                }
            }
            let p = m[(col, col)];
            for k in 0..n {
                m[(col, k)] = m[(col, k)] / p;
                inv[(col, k)] = inv[(col, k)] / p;
            }
            for row in 0..n {
                if row == col {
                    continue;
                }
                let f = m[(row, col)];
                if f == T::zero() {
                    continue;
                }
                for k in 0..n {
                    m[(row, k)] = m[(row, k)] - f * m[(col, k)];
                    inv[(row, k)] = inv[(row, k)] - f * inv[(col, k)];
                }
            }
        }
        Some(inv)
    }
}

impl<T: Real> Square<T> {
    /// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps, ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<T> {
        let n = self.n;
        let mut a = self.clone();
        let norm = self.a.iter().map(|&v| v * v).sum::<T>().sqrt();
        for _ in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off = off + a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() <= T::epsilon() * norm {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        ev
    }
}

impl<T> std::ops::Index<(usize, usize)> for Square<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.a[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Square<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.a[i * self.n + j]
    }
}
