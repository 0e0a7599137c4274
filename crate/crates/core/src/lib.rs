//! Random feature maps for compositional kernels.
//!
//! A [`Skeleton`] describes a kernel by composing normalized base kernels
//! through conjugate activations. Sampling the skeleton with
//! [`features::build_registry`] yields sparse random features whose inner
//! products estimate that kernel without bias; [`kernel_oracle`] computes the
//! kernel exactly so estimates can be checked.
//!
//! ```
//! use comprf::prelude::*;
//!
//! let skel = Skeleton::flat(vec![BaseSpace::Circle; 4], ActivationSpec::Exp { c: 0.25 }).unwrap();
//! let registry = build_registry(&skel, 2048, 7, Execution::default()).unwrap();
//! let embedder = Embedder::new(&skel, &registry, Mode::Complex).unwrap();
//! let x = InputRecord::new((0..4).map(|i| BaseValue::circle_from_phase(i as f64)).collect());
//! let y = InputRecord::new((0..4).map(|i| BaseValue::circle_from_phase(0.5 * i as f64)).collect());
//! let approx = empirical_kernel(&embedder.embed(&x).unwrap(), &embedder.embed(&y).unwrap()).unwrap();
//! let exact = exact_kernel(&skel, &x, &y).unwrap();
//! assert!((approx - exact).abs() < 0.1);
//! ```

pub mod base_spaces;
pub mod bench;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod features;
pub mod kernel_oracle;
pub mod learner;
pub mod par;
pub mod rng;
pub mod skeleton;

pub use error::{Error, Result};
pub use skeleton::Skeleton;

pub mod prelude {
    pub use crate::base_spaces::{base_kernel, eval_base_feature, sample_base_param, BaseParam, BaseSpace, BaseValue};
    pub use crate::embedding::{empirical_kernel, eval_feature, Embedder, Embedding, InputRecord, Mode};
    pub use crate::error::{Error, Result};
    pub use crate::features::{build_registry, rfss_sample, FeatureExpr, FeatureRegistry};
    pub use crate::kernel_oracle::{exact_kernel, mc_kernel};
    pub use crate::par::Execution;
    pub use crate::rng::RandomStream;
    pub use crate::skeleton::{complexity, ActivationSpec, ConjugateActivation, NodeId, Skeleton};
}
