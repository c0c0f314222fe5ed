//! Adaptive neighbourhood selection by tensor similarity and distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::TensorField;
use crate::linalg::SymTensor;
use crate::scalar::Real;
use crate::volume::Voxel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceUnit {
    /// Euclidean distance between index triples.
    VoxelIndex,
    /// Euclidean distance in mm using the grid's voxel size.
    Mm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborhoodConfig {
    /// Candidate cube extent per axis; odd.
    pub cube: [usize; 3],
    /// Number of selected voxels, centre included.
    pub n: usize,
    /// Weight of physical distance in the score.
    pub c: f64,
    pub distance_unit: DistanceUnit,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        NeighborhoodConfig {
            cube: [5, 5, 3],
            n: 25,
            c: 0.1,
            distance_unit: DistanceUnit::VoxelIndex,
        }
    }
}

impl NeighborhoodConfig {
    pub fn with_size(cube: [usize; 3], n: usize) -> Self {
        NeighborhoodConfig {
            cube,
            n,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cube.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(Error::Config(format!(
                "cube {:?} must have odd positive sides",
                self.cube
            )));
        }
        if self.n < 2 {
            return Err(Error::Config("neighbourhood needs n >= 2".into()));
        }
        if self.cube.iter().product::<usize>() < self.n {
            return Err(Error::Config(format!(
                "cube {:?} holds fewer than n = {} voxels",
                self.cube, self.n
            )));
        }
        if !(self.c >= 0.0) {
            return Err(Error::Config("C must be nonnegative".into()));
        }
        Ok(())
    }

    fn half(&self) -> [i64; 3] {
        self.cube.map(|k| (k / 2) as i64)
    }
}

/// Selected voxels for one centre; `members[0]` is the centre itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhood {
    pub center: usize,
    pub members: Vec<usize>,
    /// Fewer than `n` admissible candidates were available.
    pub short: bool,
}

/// `sqrt(trace[(Da - Db)^2])`.
pub fn tensor_distance<T: Real>(a: &SymTensor<T>, b: &SymTensor<T>) -> T {
    a.sub(b).frobenius()
}

fn physical_distance(a: Voxel, b: Voxel, unit: DistanceUnit, voxel_size: [f64; 3]) -> f64 {
    let d = [
        a.x as f64 - b.x as f64,
        a.y as f64 - b.y as f64,
        a.z as f64 - b.z as f64,
    ];
    let w = match unit {
        DistanceUnit::VoxelIndex => [1.0; 3],
        DistanceUnit::Mm => voxel_size,
    };
    (0..3).map(|k| (d[k] * w[k]).powi(2)).sum::<f64>().sqrt()
}

/// `d_D(D(v), D(v_l)) * exp(C d_p(v, v_l))`.
pub fn similarity_score<T: Real>(
    v: usize,
    vl: usize,
    tensors: &TensorField<T>,
    cfg: &NeighborhoodConfig,
) -> T {
    let shape = &tensors.shape;
    let dp = physical_distance(
        shape.voxel(v),
        shape.voxel(vl),
        cfg.distance_unit,
        shape.voxel_size,
    );
    tensor_distance(&tensors.tensors[v], &tensors.tensors[vl]) * T::lit((cfg.c * dp).exp())
}

/// Keeps the centre and the `n - 1` admissible candidates of lowest score.
/// Ties go to the physically closer voxel, then to the lower linear index.
pub fn select_neighbors<T: Real>(
    v: usize,
    tensors: &TensorField<T>,
    cfg: &NeighborhoodConfig,
) -> Neighborhood {
    let shape = &tensors.shape;
    if !tensors.valid(v) {
        return Neighborhood {
            center: v,
            members: vec![v],
            short: true,
        };
    }
    let center = shape.voxel(v);
    let half = cfg.half();
    let dt = &tensors.tensors[v];
    let mut scored: Vec<(T, f64, usize)> = Vec::with_capacity(cfg.cube.iter().product());
    for dz in -half[2]..=half[2] {
        for dy in -half[1]..=half[1] {
            for dx in -half[0]..=half[0] {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                let Some(w) = shape.offset(center, [dx, dy, dz]) else {
                    continue;
                };
                let wi = shape.index(w);
                if !tensors.valid(wi) {
                    continue;
                }
                let dp = physical_distance(center, w, cfg.distance_unit, shape.voxel_size);
                let f = tensor_distance(dt, &tensors.tensors[wi]) * T::lit((cfg.c * dp).exp());
                scored.push((f, dp, wi));
            }
        }
    }
    let want = cfg.n - 1;
    let short = scored.len() < want;
    let by_score = |a: &(T, f64, usize), b: &(T, f64, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    };
    if !short && scored.len() > want {
        scored.select_nth_unstable_by(want, by_score);
        scored.truncate(want);
    }
    scored.sort_by(by_score);
    let mut members = Vec::with_capacity(cfg.n);
    members.push(v);
    members.extend(scored.iter().map(|s| s.2));
    Neighborhood {
        center: v,
        members,
        short,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridShape;

    fn field(shape: GridShape, f: impl Fn(Voxel) -> SymTensor<f64>) -> TensorField<f64> {
        TensorField {
            shape,
            tensors: shape.voxels().map(f).collect(),
            fit_ok: vec![true; shape.len()],
            mask: vec![true; shape.len()],
        }
    }

    #[test]
    fn distance_examples() {
        let a = SymTensor::scaled_identity(2.0);
        assert_eq!(tensor_distance(&a, &a), 0.0);
        let b = SymTensor::scaled_identity(0.5);
        assert!((tensor_distance(&a, &b) - 3f64.sqrt() * 1.5).abs() < 1e-15);
        let x = SymTensor::diagonal(1.0, 0.0, 0.0);
        let y = SymTensor::diagonal(0.0, 1.0, 0.0);
        assert!((tensor_distance(&x, &y) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn score_examples() {
        let shape = GridShape::new(5, 5, 3).unwrap();
        let t = field(shape, |v| {
            if v.x == 2 && v.y == 2 && v.z == 1 {
                SymTensor::scaled_identity(1e-4)
            } else {
                SymTensor::scaled_identity(0.0)
            }
        });
        let cfg = NeighborhoodConfig::default();
        let c = shape.index(Voxel::new(2, 2, 1));
        assert_eq!(similarity_score(c, c, &t, &cfg), 0.0);
        let right = shape.index(Voxel::new(3, 2, 1));
        let f = similarity_score(c, right, &t, &cfg);
        assert!((f - 3f64.sqrt() * 1e-4 * 0.1f64.exp()).abs() < 1e-12);
        assert!((f - 1.9143e-4).abs() < 1e-8);
        let a = shape.index(Voxel::new(0, 0, 0));
        let b = shape.index(Voxel::new(2, 0, 0));
        assert_eq!(similarity_score(a, b, &t, &cfg), 0.0);
    }

    #[test]
    fn homogeneous_field_takes_nearest() {
        let shape = GridShape::new(9, 9, 5).unwrap();
        let t = field(shape, |_| SymTensor::scaled_identity(0.7e-3));
        let cfg = NeighborhoodConfig::default();
        let c = Voxel::new(4, 4, 2);
        let nb = select_neighbors(shape.index(c), &t, &cfg);
        assert!(!nb.short);
        assert_eq!(nb.members.len(), 25);
        assert_eq!(nb.members[0], shape.index(c));
        let dist = |i: usize| {
            let w = shape.voxel(i);
            physical_distance(c, w, DistanceUnit::VoxelIndex, shape.voxel_size)
        };
        let worst_in = nb.members.iter().map(|&i| dist(i)).fold(0.0, f64::max);
        // every unselected cube voxel is at least as far as the farthest member
        for dz in -1i64..=1 {
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let w = shape.index(shape.offset(c, [dx, dy, dz]).unwrap());
                    if !nb.members.contains(&w) {
                        assert!(dist(w) >= worst_in);
                    }
                }
            }
        }
        let again = select_neighbors(shape.index(c), &t, &cfg);
        assert_eq!(nb, again);
    }

    #[test]
    fn boundary_between_regions() {
        let shape = GridShape::new(10, 10, 3).unwrap();
        let t = field(shape, |v| {
            if v.x < 5 {
                SymTensor::scaled_identity(0.7e-3)
            } else {
                SymTensor::from_elements([0.775e-3, 0.775e-3, 0.55e-3, -0.225e-3, 0.0, 0.0])
            }
        });
        let cfg = NeighborhoodConfig::default();
        for x in [4usize, 5] {
            let v = shape.index(Voxel::new(x, 5, 1));
            let nb = select_neighbors(v, &t, &cfg);
            assert!(!nb.short);
            for &m in &nb.members {
                assert_eq!(shape.voxel(m).x < 5, x < 5);
            }
        }
    }

    #[test]
    fn short_when_mask_clips_cube() {
        let shape = GridShape::new(5, 5, 3).unwrap();
        let mut t = field(shape, |_| SymTensor::scaled_identity(0.7e-3));
        for (i, m) in t.mask.iter_mut().enumerate() {
            *m = i < 10;
        }
        let nb = select_neighbors(0, &t, &NeighborhoodConfig::default());
        assert!(nb.short);
        // only x 0..=2, y 0..=1 at z = 0 are both in the cube and the mask
        assert_eq!(nb.members.len(), 6);
    }

    #[test]
    fn config_validation() {
        assert!(NeighborhoodConfig::default().validate().is_ok());
        assert!(NeighborhoodConfig::with_size([11, 11, 3], 81)
            .validate()
            .is_ok());
        assert!(NeighborhoodConfig::with_size([4, 5, 3], 25)
            .validate()
            .is_err());
        assert!(NeighborhoodConfig::with_size([3, 3, 1], 25)
            .validate()
            .is_err());
    }
}
