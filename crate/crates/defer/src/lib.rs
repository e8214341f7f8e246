//! Black-box, gradient-free estimation of an unnormalised density over a
//! bounded hyperrectangular domain by recursive ternary partitioning.
//!
//! The estimator runs a sequential decision loop: at each iteration it picks
//! a set of partitions to trisect, evaluates the density at the new
//! centroids, and maintains a piecewise-constant approximation organised in a
//! search tree. Selection combines a Lipschitz-free potential-mass rule (the
//! upper-right convex hull of (V*d/2, V*f) points) with affine-subspace and
//! neighbourhood probes seeded by high-mass partitions.
//!
//! The finished tree supports evidence estimation, constant-time proportional
//! sampling via alias tables, and density, marginal, conditional, subregion,
//! entropy, and expectation queries without further density evaluations.
//!
//! ```
//! use defer::{densities::Target, domain::DomainSpec, engine::{run, EngineConfig}, queries};
//!
//! let mut target = Target::Cigar { dim: 2 }.build().unwrap();
//! let out = run(&mut target, DomainSpec::unit_cube(2), EngineConfig::new(2000, 1)).unwrap();
//! let ev = queries::evidence(&out.tree, &out.aggregates);
//! assert!(ev.log_z.is_finite());
//! ```

pub mod accum;
pub mod alias;
pub mod criteria;
pub mod densities;
pub mod domain;
pub mod engine;
pub mod error;
pub mod external;
pub mod geom;
pub mod hull;
pub mod index;
pub mod io;
pub mod queries;
pub mod rng;
pub mod tree;

pub use alias::AliasSampler;
pub use criteria::CriteriaConfig;
pub use domain::DomainSpec;
pub use engine::{run, Aggregates, DensityFunction, EngineConfig, RunOutput, Runner};
pub use error::{DeferError, Result};
pub use tree::{NodeId, Tree};
