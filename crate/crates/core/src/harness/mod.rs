//! Deterministic simulation of whole training rounds over a device
//! population: setup, generation, the add phase with verifier fan-out, and
//! release, plus the cost ledger, scripted adversaries and report output.

mod adversary;
mod config;
mod ledger;
mod round;
mod scenario;
mod trials;
mod verify;
mod world;

use thiserror::Error;

pub use adversary::{AdversaryScript, Behavior};
pub use config::{
    AheSection, CommitteeSection, CommitteeSize, ConfigError, Derived, DpSection, ModelSection, ModulusChoice,
    NoiseCommitteeSize, PopulationConfig, VerifySection, WorldConfig, DESK_CONFIG,
};
pub use ledger::{CostLedger, Role, RoleCost};
pub use round::{
    build_tree, commit_phase, prepare_round, run_round, tamper_inputs, tamper_tree, AggregateReport, BoardReport,
    Contribution, Prepared, PrivacyReport, Rosters, RoundReport, TreeInputs,
};
pub use scenario::{run_scenario, ScenarioOptions, ScenarioOutcome};
pub use trials::{detection_trials, TrialStats};
pub use verify::{selection_probability, verifier_fanout, DetectionReport, Detections};
pub use world::{Device, KeyState, World};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

macro_rules! protocol_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Protocol(e.to_string())
            }
        }
    )*};
}

protocol_from!(
    crate::ahe::AheError,
    crate::ring::RingError,
    crate::sharing::SharingError,
    crate::committee::CommitteeError,
    crate::dpcore::DpError,
    crate::aggproto::AggError,
    crate::board::BoardError
);
