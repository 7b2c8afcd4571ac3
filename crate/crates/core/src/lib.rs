//! Preventive and reactive cyber defense dynamics on time-varying networks.
//!
//! ```
//! use cyberdyn::{attractivity_experiment, AttractivityConfig, Preset, DEFAULT_SEED};
//!
//! let preset = Preset::single("p3", DEFAULT_SEED)?;
//! let bundle = preset.desk_bundle(DEFAULT_SEED)?;
//! let cfg = AttractivityConfig::new(&[0.25, 0.5, 0.75], 100.0);
//! let run = attractivity_experiment(&preset.model, &bundle, &cfg)?;
//! assert_eq!(run.verdict.verdict, cyberdyn::Verdict::Attractive);
//! # Ok::<(), cyberdyn::Error>(())
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bundle;
pub mod error;
pub mod graph;
pub mod integrate;
pub mod model;
pub mod presets;
pub mod process;
pub mod spectral;

pub use analysis::{
    attractivity_experiment, attractivity_experiment_with, bound_envelope, periodicity_check, sandwich_check,
    scc_classification, AttractivityConfig, AttractivityVerdict, BoundConfig, BoundEnvelope, LimitKind, SccLabel,
    SccReport, Verdict,
};
pub use bundle::{ParamBundle, Snapshot};
pub use error::{Error, Result};
pub use graph::{ArcSet, Perturbation, SccDecomposition, TemporalGraph};
pub use integrate::{integrate, random_initial, trajectory_distance, IntegrateOptions, Method, Trajectory};
pub use model::{DynamicsModel, SparseJacobian};
pub use presets::{Preset, Scale, DEFAULT_SEED};
pub use process::{Index, ParamProcess, ProcessSpec};
pub use spectral::{mle, mle_blocks, threshold_report, MleOptions, Regime, SpectralEstimate};

/// `⌊t / unit⌋` with a small guard so grid times like `10.0 - 1e-12` land in the intended interval.
pub(crate) fn time_floor(t: f64, unit: f64) -> u64 {
    (t / unit + 1e-9).floor().max(0.0) as u64
}
