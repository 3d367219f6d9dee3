//! Multi-channel SAR despeckling by projection.
//!
//! A `D`-channel single-look complex image is projected onto `K >= D^2`
//! complex directions. Each projection is a single-channel SLC image whose
//! reflectivity is `p^H C p`, so any single-channel despeckler can estimate
//! it; the per-pixel covariance matrices `C` are then recovered by linear
//! least squares.
//!
//! ```
//! use muchapro::{
//!     build_operator, forward_project_field, invert_projections, shipped_directions, CMatrix,
//!     CovarianceField, Parameterization,
//! };
//! use num_complex::Complex64;
//!
//! let dirs = shipped_directions(2, Parameterization::HermitianReal).unwrap().directions;
//! let op = build_operator(&dirs, Parameterization::HermitianReal).unwrap();
//! let mut c = CMatrix::identity(2, 2);
//! c[(0, 1)] = Complex64::new(0.3, 0.4);
//! c[(1, 0)] = c[(0, 1)].conj();
//! let truth = CovarianceField::constant(4, 4, &c).unwrap();
//! let variances = forward_project_field(&op, &truth).unwrap();
//! let recovered = invert_projections(&op, &variances).unwrap();
//! assert!((recovered.matrix_at(1, 2) - c).norm() < 1e-12);
//! ```

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod despeckle;
pub mod error;
mod filter;
pub mod io;
pub mod lbfgs;
pub mod model;
pub mod pd;
pub mod projection;
pub mod render;
pub mod sim;
pub mod validate;

pub use design::{
    condition_number, optimize_directions, random_direction_study, smoothed_condition, DirectionDesign,
    RandomStudy, SmoothedConditionParams,
};
pub use despeckle::{
    parse_despeckler, Decimated, Despeckler, ExternalDespeckler, GuidedWeights, IdentityDespeckler,
    LinearDespeckler, LinearFilterWeights, LogGaussianDespeckler, WeightKernel, WeightMap,
};
pub use error::{Error, Result};
pub use io::{shipped_directions, DirectionFile};
pub use model::{
    devectorize_hermitian, interferometric_products, quadratic_form, vectorize_hermitian, CMatrix,
    CovarianceField, InterferometricProducts, MultiChannelSlc, ReflectivityImage, SingleChannelSlc,
};
pub use pd::{enforce_pd, enforce_pd_field, PdEnforceParams};
pub use projection::{
    build_operator, forward_project_field, invert_projections, project, run_muchapro, DirectionSet,
    Parameterization, PdSetting, PipelineOptions, PipelineOutput, ProjectionOperator,
};
pub use render::{render_composite, CompositeMode, Stretch};
pub use sim::{apply_transfer, make_phantom, sample_goodman, PhantomKind, PhantomSpec, TransferKernel};
pub use validate::{ValidationEntry, ValidationReport};

/// Crate version, recorded in output provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
