//! Synthetic DWI phantom: acquisition scheme, tissue geometry and Rician
//! signal generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthogonality_error, Mat3, SymTensor, Vec3};
use crate::scalar::Real;
use crate::volume::{GridShape, LabelVolume, Tissue, Voxel};

/// Twelve non-collinear directions of the common vendor 12-direction table,
/// `(1, 0, 1/2)` and its cyclic/sign variants normalised to unit length.
pub const DEFAULT_GRADIENTS_12: [[f64; 3]; 12] = [
    [1.0, 0.0, 0.5],
    [0.0, 0.5, 1.0],
    [0.5, 1.0, 0.0],
    [1.0, 0.5, 0.0],
    [0.0, 1.0, 0.5],
    [0.5, 0.0, 1.0],
    [1.0, 0.0, -0.5],
    [0.0, -0.5, 1.0],
    [-0.5, 1.0, 0.0],
    [1.0, -0.5, 0.0],
    [0.0, 1.0, -0.5],
    [-0.5, 0.0, 1.0],
];

pub const DEFAULT_B: f64 = 1000.0;

/// b-value (s/mm^2) and unit gradient directions. The reference (b = 0)
/// acquisition is implicit and always comes first in a signal vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScheme<T> {
    pub b: T,
    pub gradients: Vec<Vec3<T>>,
}

impl<T: Real> AcquisitionScheme<T> {
    pub fn default_12() -> Self {
        let gradients = DEFAULT_GRADIENTS_12
            .iter()
            .map(|g| {
                let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                g.map(|c| T::lit(c / n))
            })
            .collect();
        AcquisitionScheme {
            b: T::lit(DEFAULT_B),
            gradients,
        }
    }

    /// Checks unit norms and that at least six directions are present.
    /// Rank is checked when a fitter is built.
    pub fn validate(&self) -> Result<()> {
        if !(self.b > T::zero()) {
            return Err(Error::Config(format!(
                "b-value must be positive, got {}",
                self.b
            )));
        }
        if self.gradients.len() < 6 {
            return Err(Error::Config(format!(
                "need at least 6 gradient directions, got {}",
                self.gradients.len()
            )));
        }
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(8.0));
        for g in &self.gradients {
            let n = crate::linalg::norm3(*g);
            if (n - T::one()).abs() > tol {
                return Err(Error::NonUnitGradient(n.as_f64()));
            }
        }
        Ok(())
    }

    /// Number of diffusion-weighted acquisitions `r`.
    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }

    /// Noiseless `(phi0, phi0 exp(-b g_i^T D g_i), ...)`.
    pub fn noiseless_signals(&self, phi0: T, d: &SymTensor<T>) -> Vec<T> {
        std::iter::once(phi0)
            .chain(
                self.gradients
                    .iter()
                    .map(|&g| phi0 * (-self.b * d.quadratic_form(g)).exp()),
            )
            .collect()
    }
}

/// Magnitude of a complex Gaussian-corrupted signal.
pub fn rician<T: Real, R: Rng + ?Sized>(s: T, sigma: T, rng: &mut R) -> T {
    let ex: f64 = rng.sample(StandardNormal);
    let ey: f64 = rng.sample(StandardNormal);
    let re = s + sigma * T::lit(ex);
    let im = sigma * T::lit(ey);
    (re * re + im * im).sqrt()
}

/// Per-voxel DWI signals `(phi0, phi1, ..., phir)` stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct DwiVolume<T> {
    pub shape: GridShape,
    pub scheme: AcquisitionScheme<T>,
    pub signals: Vec<T>,
    pub mask: Vec<bool>,
}

impl<T: Real> DwiVolume<T> {
    pub fn stride(&self) -> usize {
        self.scheme.len() + 1
    }

    #[inline]
    pub fn signals(&self, idx: usize) -> &[T] {
        let s = self.stride();
        &self.signals[idx * s..(idx + 1) * s]
    }
}

/// Reference signal amplitude: `low` for the first half of the x axis
/// (one-based `v_x <= nx/2`), `high` for the rest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phi0Rule {
    pub low: f64,
    pub high: f64,
    /// Zero-based x index where `high` starts.
    pub split_x: usize,
}

impl Phi0Rule {
    pub fn at(&self, v: Voxel) -> f64 {
        if v.x < self.split_x {
            self.low
        } else {
            self.high
        }
    }
}

/// Everything needed to generate signals: labels, true eigenvalues per tissue,
/// rotations per orientation tag, reference amplitude and noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec<T> {
    pub labels: LabelVolume,
    /// Indexed by tissue code; descending triples.
    pub eigenvalues: [Vec3<T>; 5],
    /// Indexed by orientation tag; eigenvectors in columns.
    pub orientations: Vec<Mat3<T>>,
    pub phi0: Phi0Rule,
    /// `None` simulates noiseless signals.
    pub snr: Option<T>,
}

impl<T: Real> PhantomSpec<T> {
    pub fn validate(&self) -> Result<()> {
        for t in Tissue::ALL_INSIDE {
            let l = self.eigenvalues[t.code() as usize];
            if !(l[0] >= l[1] && l[1] >= l[2] && l[2] > T::zero()) {
                return Err(Error::Config(format!(
                    "{} eigenvalues must be positive and descending",
                    t.name()
                )));
            }
        }
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(8.0));
        for (tag, q) in self.orientations.iter().enumerate() {
            if orthogonality_error(q) > tol {
                return Err(Error::Config(format!(
                    "orientation {tag} is not orthogonal"
                )));
            }
        }
        if let Some(&bad) = self
            .labels
            .orientation
            .iter()
            .find(|&&o| o as usize >= self.orientations.len())
        {
            return Err(Error::Config(format!(
                "orientation tag {bad} has no matrix"
            )));
        }
        if let Some(snr) = self.snr {
            if !(snr > T::zero()) {
                return Err(Error::Config("snr must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> GridShape {
        self.labels.shape
    }

    /// `Q(v) Lambda*(v) Q(v)^T`.
    pub fn true_tensor(&self, v: Voxel) -> Result<SymTensor<T>> {
        let idx = self.labels.shape.linear_index(v)?;
        self.true_tensor_at(idx)
    }

    pub fn true_tensor_at(&self, idx: usize) -> Result<SymTensor<T>> {
        let tissue = self.labels.label[idx];
        if tissue == Tissue::Outside {
            return Err(Error::OutsideMask);
        }
        let q = &self.orientations[self.labels.orientation[idx] as usize];
        Ok(SymTensor::from_eigen(
            q,
            self.eigenvalues[tissue.code() as usize],
        ))
    }
}

/// Generates a DWI volume. Each voxel draws from its own ChaCha stream keyed
/// by `(seed, linear index)`, so the result does not depend on scheduling.
pub fn simulate<T: Real>(
    spec: &PhantomSpec<T>,
    scheme: &AcquisitionScheme<T>,
    seed: u64,
) -> Result<DwiVolume<T>> {
    spec.validate()?;
    scheme.validate()?;
    let shape = spec.shape();
    let stride = scheme.len() + 1;
    let mut signals = vec![T::zero(); shape.len() * stride];
    signals
        .par_chunks_mut(stride)
        .enumerate()
        .try_for_each(|(idx, out)| -> Result<()> {
            if spec.labels.label[idx] == Tissue::Outside {
                return Ok(());
            }
            let d = spec.true_tensor_at(idx)?;
            let phi0 = T::lit(spec.phi0.at(shape.voxel(idx)));
            let clean = scheme.noiseless_signals(phi0, &d);
            match spec.snr {
                None => out.copy_from_slice(&clean),
                Some(snr) => {
                    let sigma = phi0 / snr;
                    let mut rng = voxel_rng(seed, idx);
                    for (o, &s) in out.iter_mut().zip(&clean) {
                        *o = rician(s, sigma, &mut rng);
                    }
                }
            }
            Ok(())
        })?;
    Ok(DwiVolume {
        shape,
        scheme: scheme.clone(),
        signals,
        mask: spec.labels.mask(),
    })
}

pub fn voxel_rng(seed: u64, idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(idx as u64);
    rng
}

/// One straight band of fibres through the axial plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub name: String,
    /// 1 or 2: which in-plane diagonal the fibres follow (orientation tag).
    pub orientation: u8,
    /// Crossing a bundle of the other family yields an oblate voxel when
    /// both are `false`, a nondegenerate voxel when exactly one is `true`.
    pub dominant: bool,
    /// Signed perpendicular offset of the band axis from the grid centre,
    /// as a fraction of `nx`.
    pub offset: f64,
    /// Half width in voxels at 128 voxels across; scaled with `nx`.
    pub half_width: f64,
    /// Slice range as fractions of `nz`, `[from, to)`.
    #[serde(default = "full_z")]
    pub z_range: [f64; 2],
}

fn full_z() -> [f64; 2] {
    [0.0, 1.0]
}

/// Declarative phantom description; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub shape: [usize; 3],
    pub voxel_size: [f64; 3],
    /// Brain ellipsoid semi-axes as fractions of each grid extent.
    pub brain_semi_axes: [f64; 3],
    /// Eigenvalues in 1e-3 mm^2/s.
    pub isotropic: [f64; 3],
    pub prolate: [f64; 3],
    pub oblate: [f64; 3],
    pub nondegenerate: [f64; 3],
    pub phi0_low: f64,
    pub phi0_high: f64,
    pub bundles: Vec<BundleSpec>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let b = |name: &str, orientation, dominant, offset, half_width| BundleSpec {
            name: name.into(),
            orientation,
            dominant,
            offset,
            half_width,
            z_range: full_z(),
        };
        PhantomConfig {
            shape: [256, 256, 30],
            voxel_size: crate::volume::DEFAULT_VOXEL_SIZE,
            brain_semi_axes: [0.44, 0.47, 0.75],
            isotropic: [0.7, 0.7, 0.7],
            prolate: [1.0, 0.55, 0.55],
            oblate: [0.8, 0.8, 0.5],
            nondegenerate: [0.9, 0.7, 0.5],
            phi0_low: 1200.0,
            phi0_high: 1800.0,
            bundles: vec![
                b("red", 1, true, 0.0, 4.5),
                b("narrow-1", 1, false, -0.18, 2.5),
                b("narrow-2", 1, false, 0.18, 2.5),
                b("blue", 2, false, 0.0, 3.5),
            ],
        }
    }
}

impl PhantomConfig {
    pub fn with_shape(shape: [usize; 3]) -> Self {
        PhantomConfig {
            shape,
            ..Default::default()
        }
    }

    /// Keeps the brain mask but drops every bundle.
    pub fn isotropic_only(mut self) -> Self {
        self.bundles.clear();
        self
    }

    pub fn grid(&self) -> Result<GridShape> {
        GridShape::with_voxel_size(self.shape[0], self.shape[1], self.shape[2], self.voxel_size)
    }

    pub fn labels(&self) -> Result<LabelVolume> {
        let shape = self.grid()?;
        let [nx, ny, nz] = self.shape;
        if !self.bundles.is_empty() && (nx < 24 || ny < 24) {
            return Err(Error::PhantomTooSmall(format!("{nx}x{ny}x{nz}")));
        }
        let c = [nx as f64 / 2.0, ny as f64 / 2.0, nz as f64 / 2.0];
        let semi = [
            self.brain_semi_axes[0] * nx as f64,
            self.brain_semi_axes[1] * ny as f64,
            self.brain_semi_axes[2] * nz as f64,
        ];
        let width_scale = nx as f64 / 128.0;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut label = vec![Tissue::Outside; shape.len()];
        let mut orientation = vec![0u8; shape.len()];
        for (idx, v) in shape.voxels().enumerate() {
            let p = [v.x as f64 + 0.5, v.y as f64 + 0.5, v.z as f64 + 0.5];
            let r2: f64 = (0..3).map(|k| ((p[k] - c[k]) / semi[k]).powi(2)).sum();
            if r2 > 1.0 {
                continue;
            }
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            let zf = p[2] / nz as f64;
            let mut hits: Vec<&BundleSpec> = Vec::new();
            for bundle in &self.bundles {
                // Unit normal of the band axis; tag 1 runs along (1,-1), tag 2 along (1,1).
                let normal = if bundle.orientation == 1 {
                    [s, s]
                } else {
                    [s, -s]
                };
                let dist = dx * normal[0] + dy * normal[1] - bundle.offset * nx as f64;
                if dist.abs() <= bundle.half_width * width_scale
                    && zf >= bundle.z_range[0]
                    && zf < bundle.z_range[1]
                {
                    hits.push(bundle);
                }
            }
            let (tissue, tag) = match hits.as_slice() {
                [] => (Tissue::Isotropic, 0),
                [one] => (Tissue::Prolate, one.orientation),
                many => {
                    let families_differ = many.iter().any(|b| b.orientation != many[0].orientation);
                    let dominant = many.iter().find(|b| b.dominant);
                    match (families_differ, dominant) {
                        (false, _) => (Tissue::Prolate, many[0].orientation),
                        (true, Some(d)) => (Tissue::Nondegenerate, d.orientation),
                        (true, None) => (Tissue::Oblate, many[0].orientation),
                    }
                }
            };
            label[idx] = tissue;
            orientation[idx] = tag;
        }
        let labels = LabelVolume::new(shape, label, orientation)?;
        if !self.bundles.is_empty() {
            for t in Tissue::ALL_INSIDE {
                if labels.count(t) == 0 {
                    return Err(Error::PhantomTooSmall(format!(
                        "{nx}x{ny}x{nz} (no {} voxels)",
                        t.name()
                    )));
                }
            }
        }
        Ok(labels)
    }

    pub fn build<T: Real>(&self, snr: Option<f64>) -> Result<PhantomSpec<T>> {
        let labels = self.labels()?;
        let e = |l: [f64; 3]| l.map(|x| T::lit(x * 1e-3));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let q = |m: [[f64; 3]; 3]| m.map(|row| row.map(T::lit));
        let spec = PhantomSpec {
            labels,
            eigenvalues: [
                e(self.isotropic),
                e(self.isotropic),
                e(self.prolate),
                e(self.oblate),
                e(self.nondegenerate),
            ],
            orientations: vec![
                q([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
                q([[s, s, 0.0], [-s, s, 0.0], [0.0, 0.0, 1.0]]),
                q([[s, -s, 0.0], [s, s, 0.0], [0.0, 0.0, 1.0]]),
            ],
            phi0: Phi0Rule {
                low: self.phi0_low,
                high: self.phi0_high,
                split_x: self.shape[0] / 2,
            },
            snr: snr.map(T::lit),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Default phantom geometry on `shape`, noiseless.
pub fn default_phantom<T: Real>(shape: [usize; 3]) -> Result<PhantomSpec<T>> {
    PhantomConfig::with_shape(shape).build(None)
}
