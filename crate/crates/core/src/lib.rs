//! Detection of anisotropic diffusion in diffusion-tensor volumes with the
//! neighbourhood-based chi-square (chiK) test.
//!
//! The numerical kernels are generic over [`Real`] (`f32` or `f64`). The
//! aliases below fix the scalar to `f64`, which is what the pipeline, the
//! file format and the CLI use.

pub mod dist;
pub mod eigen;
pub mod error;
pub mod eval;
pub mod fdr;
pub mod fit;
pub mod io;
pub mod linalg;
pub mod neighborhood;
pub mod pipeline;
pub mod scalar;
pub mod sim;
pub mod volume;

pub use eigen::{eigen3, eigen3_matrix, fa, ra, scalar_maps, EigenSystem, ScalarMaps};
pub use error::{Error, Result};
pub use eval::{
    confusion, isolated_counts, qq_chi2, roc, ConfusionSummary, Direction, IsolatedCounts, RocCurve,
};
pub use fdr::{
    decide, fdr_threshold, smooth_p, storey_pi0, DecisionMask, FdrConfig, FdrMode, NullModel,
};
pub use fit::{design_vector, fit_volume, fit_voxel, TensorField, TensorFitter};
pub use io::{read_volume, write_volume, AnyVolume};
pub use linalg::{Mat3, SymTensor, Vec3};
pub use local_test::{
    test_volume, ContrastMatrix, NullSetConfig, NullSetState, TestConfig, TestField,
};
pub use neighborhood::{select_neighbors, DistanceUnit, Neighborhood, NeighborhoodConfig};
pub use pipeline::{
    analyze, baseline_fa_threshold, calibrate_fa_threshold, run_pipeline, RunConfig, RunManifest,
};
pub use scalar::Real;
pub use sim::{simulate, AcquisitionScheme, DwiVolume, PhantomConfig, PhantomSpec};
pub use volume::{BoolVolume, GridShape, LabelVolume, ScalarVolume, Tissue, Voxel};

pub type Tensor = SymTensor<f64>;
pub type Eigen = EigenSystem<f64>;
pub type Tensors = TensorField<f64>;
pub type Dwi = DwiVolume<f64>;
pub type Phantom = PhantomSpec<f64>;
pub type Scheme = AcquisitionScheme<f64>;
pub type Maps = ScalarMaps<f64>;
pub type Scalars = ScalarVolume<f64>;
