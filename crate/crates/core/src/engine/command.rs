//! The command vocabulary shared by the API, operator scripts and tests.

use crate::catalog::StrategyLevel;
use crate::ids::{ElementId, ServiceId};
use crate::sim::Incident;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeSet;
use thiserror::Error;

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Build a Proposed strategy for a problem without activating anything.
    /// `problem` is a live bottleneck id or an element id.
    Compose {
        problem: String,
        level: StrategyLevel,
        #[serde(
            default,
            rename = "override",
            skip_serializing_if = "std::ops::Not::not"
        )]
        override_gating: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        services: Option<BTreeSet<ServiceId>>,
    },
    Activate {
        strategy: String,
    },
    Escalate {
        strategy: String,
    },
    Deescalate {
        strategy: String,
    },
    Retire {
        strategy: String,
    },
    /// Operator override: keep a service on at an element regardless of
    /// strategies, gating and conflict rules.
    ForceOn {
        service: ServiceId,
        element: ElementId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        level: Option<StrategyLevel>,
    },
    /// Operator override: keep a service off at an element.
    ForceOff {
        service: ServiceId,
        element: ElementId,
    },
    /// Drop any override on the pair.
    ReleaseOverride {
        service: ServiceId,
        element: ElementId,
    },
    Decide {
        decision: String,
        choose: String,
    },
    Pause,
    Resume,
    Step {
        #[serde(default = "one")]
        ticks: u64,
    },
    /// Simulated ticks per wall-clock second when running unpaused.
    Rate {
        ticks_per_second: f64,
    },
    InjectIncident {
        incident: Incident,
    },
    SetAutoConfirm {
        enabled: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Compose { .. } => "compose",
            Command::Activate { .. } => "activate",
            Command::Escalate { .. } => "escalate",
            Command::Deescalate { .. } => "deescalate",
            Command::Retire { .. } => "retire",
            Command::ForceOn { .. } => "force_on",
            Command::ForceOff { .. } => "force_off",
            Command::ReleaseOverride { .. } => "release_override",
            Command::Decide { .. } => "decide",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Step { .. } => "step",
            Command::Rate { .. } => "rate",
            Command::InjectIncident { .. } => "inject_incident",
            Command::SetAutoConfirm { .. } => "set_auto_confirm",
        }
    }
}

/// A command plus the client's request id. Resubmitting the same id
/// returns the first reply without applying the command again.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(flatten)]
    pub command: Command,
}

impl From<Command> for CommandRequest {
    fn from(command: Command) -> Self {
        Self {
            request_id: None,
            command,
        }
    }
}

impl CommandRequest {
    pub fn with_id(id: impl Into<String>, command: Command) -> Self {
        Self {
            request_id: Some(id.into()),
            command,
        }
    }
}

/// What a committed command returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandReply {
    pub tick: u64,
    /// Sequence number of the last event emitted once the command committed.
    pub seq: u64,
    pub result: Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    NotFound,
    Conflict,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum EngineError {
    #[error("unknown strategy '{id}'")]
    UnknownStrategy { id: String },
    #[error("strategy {id} is {actual}, expected {expected}")]
    WrongStatus {
        id: String,
        expected: String,
        actual: String,
    },
    #[error("no pending decision '{id}'")]
    UnknownDecision { id: String },
    #[error("'{choice}' is not an option of decision {id}")]
    InvalidChoice { id: String, choice: String },
    #[error("unknown problem '{id}': neither a live bottleneck nor a network element")]
    UnknownProblem { id: String },
    #[error("unknown service '{id}'")]
    UnknownService { id: String },
    #[error("unknown element '{id}'")]
    UnknownElement { id: String },
    #[error("{service} does not apply to {element}")]
    NotApplicable { service: String, element: String },
    #[error("{message}")]
    Strategy { message: String },
    #[error("{message}")]
    Simulation { message: String },
    #[error("invalid command: {message}")]
    InvalidCommand { message: String },
    #[error("request id '{id}' was already used for a different command")]
    RequestIdReused { id: String },
}

impl EngineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            EngineError::UnknownStrategy { .. }
            | EngineError::UnknownDecision { .. }
            | EngineError::UnknownProblem { .. }
            | EngineError::UnknownService { .. }
            | EngineError::UnknownElement { .. } => ErrorClass::NotFound,
            EngineError::WrongStatus { .. } | EngineError::RequestIdReused { .. } => {
                ErrorClass::Conflict
            }
            EngineError::InvalidChoice { .. }
            | EngineError::NotApplicable { .. }
            | EngineError::Strategy { .. }
            | EngineError::Simulation { .. }
            | EngineError::InvalidCommand { .. } => ErrorClass::Invalid,
        }
    }
}

impl From<crate::strategy::StrategyError> for EngineError {
    fn from(e: crate::strategy::StrategyError) -> Self {
        EngineError::Strategy {
            message: e.to_string(),
        }
    }
}

impl From<crate::sim::SimError> for EngineError {
    fn from(e: crate::sim::SimError) -> Self {
        EngineError::Simulation {
            message: e.to_string(),
        }
    }
}
