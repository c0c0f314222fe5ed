//! Voxel lattice, brain mask and per-voxel containers.

use crate::error::{Error, Result};

/// Default in-plane and slice voxel size in mm.
pub const DEFAULT_VOXEL_SIZE: [f64; 3] = [0.9375, 0.9375, 3.0];

/// Integer voxel coordinate, zero based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Voxel {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Voxel {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Voxel { x, y, z }
    }
}

impl From<[usize; 3]> for Voxel {
    fn from(v: [usize; 3]) -> Self {
        Voxel::new(v[0], v[1], v[2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// mm per axis
    pub voxel_size: [f64; 3],
}

impl GridShape {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        Self::with_voxel_size(nx, ny, nz, DEFAULT_VOXEL_SIZE)
    }

    pub fn with_voxel_size(nx: usize, ny: usize, nz: usize, voxel_size: [f64; 3]) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Shape(format!("{nx}x{ny}x{nz} has an empty axis")));
        }
        if voxel_size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Shape(format!(
                "voxel size {voxel_size:?} must be positive"
            )));
        }
        Ok(GridShape {
            nx,
            ny,
            nz,
            voxel_size,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    /// x-fastest linear index, `x + nx * (y + ny * z)`.
    pub fn linear_index(&self, v: Voxel) -> Result<usize> {
        if v.x >= self.nx || v.y >= self.ny || v.z >= self.nz {
            return Err(Error::OutOfRange {
                x: v.x,
                y: v.y,
                z: v.z,
                nx: self.nx,
                ny: self.ny,
                nz: self.nz,
            });
        }
        Ok(self.index(v))
    }

    /// Unchecked variant of [`linear_index`](Self::linear_index).
    #[inline]
    pub fn index(&self, v: Voxel) -> usize {
        v.x + self.nx * (v.y + self.ny * v.z)
    }

    #[inline]
    pub fn voxel(&self, idx: usize) -> Voxel {
        let x = idx % self.nx;
        let rest = idx / self.nx;
        Voxel::new(x, rest % self.ny, rest / self.ny)
    }

    /// Offsets a voxel by a signed displacement, returning `None` off-grid.
    #[inline]
    pub fn offset(&self, v: Voxel, d: [i64; 3]) -> Option<Voxel> {
        let x = v.x as i64 + d[0];
        let y = v.y as i64 + d[1];
        let z = v.z as i64 + d[2];
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        (x < self.nx && y < self.ny && z < self.nz).then_some(Voxel::new(x, y, z))
    }

    pub fn voxels(&self) -> impl Iterator<Item = Voxel> + '_ {
        (0..self.len()).map(move |i| self.voxel(i))
    }

    pub fn same_grid(&self, other: &GridShape) -> bool {
        self.dims() == other.dims()
    }
}

/// Per-voxel payload on a lattice together with the inside-brain mask.
///
/// Values at mask-false voxels are carried along but never read by any
/// statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<V> {
    pub shape: GridShape,
    pub data: Vec<V>,
    pub mask: Vec<bool>,
}

pub type ScalarVolume<T> = Volume<T>;
pub type BoolVolume = Volume<bool>;

impl<V: Clone> Volume<V> {
    pub fn filled(shape: GridShape, value: V, mask: Vec<bool>) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()], mask)
    }
}

impl<V> Volume<V> {
    pub fn new(shape: GridShape, data: Vec<V>, mask: Vec<bool>) -> Result<Self> {
        if data.len() != shape.len() || mask.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "grid has {} voxels, data {} and mask {}",
                shape.len(),
                data.len(),
                mask.len()
            )));
        }
        Ok(Volume { shape, data, mask })
    }

    pub fn get(&self, v: Voxel) -> &V {
        &self.data[self.shape.index(v)]
    }

    /// Indices of mask-true voxels in ascending order.
    pub fn masked_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn masked_values(&self) -> impl Iterator<Item = &V> + '_ {
        self.data
            .iter()
            .zip(&self.mask)
            .filter_map(|(d, &m)| m.then_some(d))
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn map<W>(&self, f: impl Fn(&V) -> W) -> Volume<W> {
        Volume {
            shape: self.shape,
            data: self.data.iter().map(f).collect(),
            mask: self.mask.clone(),
        }
    }
}

/// Simulated tissue class per voxel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Tissue {
    Outside = 0,
    Isotropic = 1,
    Prolate = 2,
    Oblate = 3,
    Nondegenerate = 4,
}

impl Tissue {
    pub const ALL_INSIDE: [Tissue; 4] = [
        Tissue::Isotropic,
        Tissue::Prolate,
        Tissue::Oblate,
        Tissue::Nondegenerate,
    ];

    pub fn from_code(code: u8) -> Option<Tissue> {
        match code {
            0 => Some(Tissue::Outside),
            1 => Some(Tissue::Isotropic),
            2 => Some(Tissue::Prolate),
            3 => Some(Tissue::Oblate),
            4 => Some(Tissue::Nondegenerate),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn is_anisotropic(self) -> bool {
        matches!(
            self,
            Tissue::Prolate | Tissue::Oblate | Tissue::Nondegenerate
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Tissue::Outside => "outside",
            Tissue::Isotropic => "isotropic",
            Tissue::Prolate => "prolate",
            Tissue::Oblate => "oblate",
            Tissue::Nondegenerate => "nondegenerate",
        }
    }
}

/// Ground-truth tissue labels. Label 0 is exactly the outside of the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    pub shape: GridShape,
    pub label: Vec<Tissue>,
    /// Selects the rotation used for the voxel's true tensor.
    pub orientation: Vec<u8>,
}

impl LabelVolume {
    pub fn new(shape: GridShape, label: Vec<Tissue>, orientation: Vec<u8>) -> Result<Self> {
        if label.len() != shape.len() || orientation.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "grid has {} voxels, labels {} and orientation tags {}",
                shape.len(),
                label.len(),
                orientation.len()
            )));
        }
        Ok(LabelVolume {
            shape,
            label,
            orientation,
        })
    }

    pub fn mask(&self) -> Vec<bool> {
        self.label.iter().map(|&l| l != Tissue::Outside).collect()
    }

    pub fn count(&self, tissue: Tissue) -> usize {
        self.label.iter().filter(|&&l| l == tissue).count()
    }

    /// `Some(true)` for anisotropic labels, `Some(false)` for isotropic, `None` outside.
    pub fn truth(&self, idx: usize) -> Option<bool> {
        match self.label[idx] {
            Tissue::Outside => None,
            t => Some(t.is_anisotropic()),
        }
    }
}
