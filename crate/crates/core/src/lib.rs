//! Numerical laboratory for isotropic log-concave measures.
//!
//! Measures, samplers and Monte Carlo estimators for moments, centroid bodies,
//! marginal densities, the logarithmic Laplace transform and the hereditary
//! subspace parameters built from them, plus executable relation checks.

pub mod error;
pub mod functionals;
pub mod laplace;
pub mod measures;
pub mod parameters;
pub mod sampler;
pub mod special;
pub mod verify;

pub use error::{Error, Result};
pub use functionals::{BodyOracle, DirectionGrid, EstimateCI, Method};
pub use measures::{Family, MeasureModel, MeasureSpec};
pub use sampler::{draw, haar_subspace, project, tilted_draw, SampleBatch, Seed, Subspace};
pub use verify::{run_check, run_grid, Budget, GridPoint, RelationId, RelationReport, Verdict};
