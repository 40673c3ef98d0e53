//! Bayesian allocation models: marginal likelihoods of count tensors under
//! Bayesian-network factorizations, by sequential Monte Carlo, variational
//! Bayes and exhaustive enumeration.

pub mod error;
pub mod exact;
pub mod model;
pub mod rng;
pub mod smc;
pub mod special;
pub mod tensor;
pub mod tying;
pub mod urn;
pub mod vb;

pub use error::{Error, Result};
pub use model::{BaseMeasure, CatalogKind, ModelSpec, PriorSpec};
pub use smc::{Resampling, Schedule, SmcConfig, SmcEstimate};
pub use tensor::{FamilyStats, SparseCountTensor};
pub use tying::{TiedStats, TiedUrn};
pub use urn::{Bam, Urn};
pub use vb::{VbConfig, VbState};
