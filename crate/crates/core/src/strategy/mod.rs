//! Control strategies: composition through the escalation levels,
//! regulation of conflicting services, preferred situations, response plans
//! and the pre-operational planning report.

mod compose;
mod conflicts;
mod planning;
mod plans;
mod preferred;
mod registry;

pub use compose::{compose_strategy, deescalate, escalate, Composer, DEFAULT_HORIZON};
pub use conflicts::{
    decision_id, in_scope, resolve_conflicts, DecisionReason, PendingDecision, Regulated,
};
pub use planning::{
    answer_six_questions, AvailableService, Census, CensusEntry, Contribution, NetworkSummary,
    PlanningReport,
};
pub use plans::{
    Comparator, PlanAction, PlanFiring, PlanRunner, PlansDocument, ResponsePlan, StrategyTemplate,
    Trigger, PLANS_SCHEMA_VERSION,
};
pub use preferred::{Evaluation, PreferredSituation, PreferredTracker, DEFAULT_CONSECUTIVE_TICKS};
pub use registry::{
    EnlargeOutflow, EscalationStrategy, InformTraffic, ReduceInflow, RerouteTraffic, ScopeContext,
    StrategyRegistry,
};

use crate::catalog::StrategyLevel;
use crate::ids::{ElementId, ServiceId};
use crate::sim::Bottleneck;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// One service placed on one element, for the purpose of a given level.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Activation {
    pub service: ServiceId,
    pub element: ElementId,
    pub level: StrategyLevel,
}

impl Activation {
    pub fn new(
        service: impl Into<ServiceId>,
        element: impl Into<ElementId>,
        level: StrategyLevel,
    ) -> Self {
        Self {
            service: service.into(),
            element: element.into(),
            level,
        }
    }

    pub fn pair(&self) -> (&ServiceId, &ElementId) {
        (&self.service, &self.element)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.service, self.element)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CreatedBy {
    Automatic,
    Operator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyStatus {
    Proposed,
    Active,
    Retired,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlStrategy {
    pub id: String,
    pub problem: Bottleneck,
    pub preferred_situation: PreferredSituation,
    pub level: StrategyLevel,
    pub activations: BTreeSet<Activation>,
    pub created_by: CreatedBy,
    pub status: StrategyStatus,
    /// Allows services that are not suitable for, or not deployed widely
    /// enough for, operational traffic management.
    pub override_gating: bool,
    pub horizon: usize,
    /// Lower levels this strategy was escalated from, most recent last.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<(StrategyLevel, BTreeSet<Activation>)>,
}

impl ControlStrategy {
    pub fn services(&self) -> BTreeSet<&ServiceId> {
        self.activations.iter().map(|a| &a.service).collect()
    }

    pub fn contains(&self, service: &str, element: &str) -> bool {
        self.activations
            .iter()
            .any(|a| a.service.as_str() == service && a.element.as_str() == element)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyError {
    #[error("unknown problem element '{0}'")]
    UnknownElement(String),
    #[error("strategy unservable at level {0}")]
    Unservable(StrategyLevel),
    #[error("maximum escalation: already at {0}")]
    MaximumEscalation(StrategyLevel),
    #[error("minimum escalation: already at {0}")]
    MinimumEscalation(StrategyLevel),
    #[error("no strategy registered for level {0}")]
    Unregistered(StrategyLevel),
    #[error("unknown scope strategy '{0}'")]
    UnknownScopeStrategy(String),
}
