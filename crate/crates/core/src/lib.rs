//! Continuous-fidelity multi-objective Bayesian optimization.
//!
//! Each objective gets a Gaussian process over inputs and a fidelity knob
//! `z in [0, 1]`, where `z = 1` is the true objective. Queries are chosen by
//! output-space entropy search per unit cost, restricted to a reduced set of
//! informative fidelities.

pub mod acquisition;
pub mod benchmarks;
pub mod cfgp;
pub mod engine;
pub mod error;
pub mod fidelity;
mod linalg;
pub mod metrics;
pub mod optimizer;
pub mod oracles;
pub mod pareto;
pub mod stats;

pub use acquisition::{AcquisitionContext, Approximation, QuadConfig, Score};
pub use benchmarks::{BenchmarkProblem, FidelityKind, Problem};
pub use cfgp::{CfGpModel, JointMoments, KernelParams, Observation, Surrogate};

pub use engine::{Method, ReferenceData, RunConfig, RunTrace};
pub use error::{Error, Result};
pub use fidelity::{CostCurve, FidelityReductionConfig, Z_TOP};
pub use metrics::HypervolumeConfig;
pub use pareto::ParetoFrontSample;
