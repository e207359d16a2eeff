//! Incidence estimation from indirect-reporting ("network scale-up")
//! surveys, cross-checked against a delay-corrected case fatality ratio and
//! calibrated with seroprevalence arithmetic.
//!
//! The crate is I/O-free apart from the CSV readers and writers in
//! [`ingest`] and [`report`]; every estimator is a pure function.

pub mod ccfr;
pub mod filter;
pub mod ingest;
pub mod model;
pub mod report;
pub mod serology;
pub mod simulator;
pub mod survey;

pub use ccfr::{CcfrError, CcfrEstimate, CcfrState};
pub use filter::{FilterError, FilterReport};
pub use ingest::{IngestError, ResponseFile};
pub use model::{
    Baseline, CountryCode, CountryInfo, DelayModel, EstimateResult, Method, OfficialSeriesPoint,
    RawResponse, RegionCode, RegionInfo, Rejection, SurveyResponse,
};
pub use serology::SerologyError;
pub use simulator::{RespondentModel, Scenario, ScenarioError, SyntheticWorld};
pub use survey::{EstimateError, StratifiedEstimate};
