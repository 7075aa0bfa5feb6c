//! Scenario files, experiment runners and result output.
//!
//! Every run is a pure function of its [`ScenarioConfig`]: repetitions draw
//! from sub-streams keyed by (cell, repetition), so parallel execution and
//! serial execution agree bit for bit.

use std::path::PathBuf;

use thiserror::Error;

mod config;
mod experiments;
mod output;
mod rss;
mod session;

pub use config::{
    BodyPreset, ChannelSection, DetectionSection, ExperimentKind, ExperimentSection, InterfererSpec,
    NoiseSection, PrimaryLink, ProgramSection, RadioSection, RelaySection, RssSection, ScenarioConfig,
    TddSection,
};
pub use experiments::{
    run_manipulation_sweep, run_ota_relay, run_reciprocity_experiment, run_rss_access, run_scenario,
    run_tdd_trace,
};
pub use output::{emit_csv, GroupSummary, Row, ScenarioResult, CSV_HEADER};
pub use rss::{boundary, AccessController, CarState, Decision, RssModel, RssThresholds};
pub use session::{Bench, Cell, Outcome, RelayPath, Role};

use crate::channel::ChannelError;
use crate::detection::DetectionError;
use crate::mcpr::McprError;
use crate::relay::RelayError;
use crate::tdd::TddError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Mcpr(#[from] McprError),
    #[error(transparent)]
    Relay(#[from] RelayError),
    #[error(transparent)]
    Tdd(#[from] TddError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}
