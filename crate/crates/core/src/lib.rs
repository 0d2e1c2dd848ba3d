//! Optimal observation-time design for logistic growth under IID and
//! Ornstein-Uhlenbeck observation noise.
//!
//! The crate covers the whole pipeline: closed-form model and sensitivities
//! ([`model`]), noise processes ([`noise`]), likelihoods and fitting
//! ([`likelihood`]), total-effect Sobol' indices ([`sobol`]), Fisher and
//! global information matrices ([`information`]), design solvers
//! ([`design`]), profile likelihoods ([`profile`]) and the replicated
//! experiment runner ([`harness`]).

pub mod design;
pub mod error;
pub mod harness;
pub mod information;
pub mod likelihood;
pub mod model;
pub mod noise;
pub mod optim;
pub mod profile;
pub mod seed;
pub mod sobol;

pub use error::{Error, Result};
pub use likelihood::{fit_mle, FitResult, FitSettings, Likelihood, NoiseFamily, NoiseSpec, ScaleMode, SearchBox};
pub use model::{LogisticParams, ParamId, ParamRanges, TimeGrid};
pub use noise::{NoiseKind, NoiseModel, Observations};
pub use design::{even_design, optimize_fim_design, optimize_global_design, CandidateGrid, Constraints, Design, DesignResult};
pub use harness::{run_scenario, Scenario, ScenarioOutput, SweepResult};
pub use information::{fim, global_info, GlobalWeighting, InfoMatrix};
pub use profile::{confidence_interval, prediction_band, profile_parameter, ConfidenceInterval, PredictionBand, ProfileResult};
pub use sobol::{total_effect_indices, Sampling, SobolProfile};
