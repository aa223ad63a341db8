//! Response plans: production rules from a traffic condition to automated
//! strategy proposals and manual operator prompts.

use crate::catalog::StrategyLevel;
use crate::ids::{ElementId, ServiceId};
use crate::network::RoadNetwork;
use crate::sim::{measure_element, Measure, ProblemElement, TrafficState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

pub const PLANS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl Comparator {
    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Comparator::Gt => value > bound,
            Comparator::Ge => value >= bound,
            Comparator::Lt => value < bound,
            Comparator::Le => value <= bound,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trigger {
    pub element: ElementId,
    pub measure: Measure,
    pub comparator: Comparator,
    pub value: f64,
}

impl Trigger {
    pub fn evaluate(&self, state: &TrafficState, net: &RoadNetwork) -> Option<f64> {
        measure_element(state, net, self.element.as_str(), self.measure)
            .filter(|v| self.comparator.holds(*v, self.value))
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}) {} {}",
            self.measure, self.element, self.comparator, self.value
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyTemplate {
    pub level: StrategyLevel,
    /// Restrict the composed strategy to these services.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub services: Option<BTreeSet<ServiceId>>,
    #[serde(
        default,
        rename = "override",
        skip_serializing_if = "std::ops::Not::not"
    )]
    pub override_gating: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanAction {
    Auto(StrategyTemplate),
    Manual(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponsePlan {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub trigger: Trigger,
    pub actions: Vec<PlanAction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlansDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub plans: Vec<ResponsePlan>,
}

impl Default for PlansDocument {
    fn default() -> Self {
        Self {
            schema_version: PLANS_SCHEMA_VERSION,
            plans: Vec::new(),
        }
    }
}

impl PlansDocument {
    pub fn validate(&self, net: &RoadNetwork, known_service: impl Fn(&str) -> bool) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema_version != PLANS_SCHEMA_VERSION {
            errs.push(format!(
                "unsupported plans schema_version {}",
                self.schema_version
            ));
        }
        let mut ids = BTreeSet::new();
        for p in &self.plans {
            if !ids.insert(p.id.as_str()) {
                errs.push(format!("plan {}: duplicate id", p.id));
            }
            if ProblemElement::resolve(net, p.trigger.element.as_str()).is_none() {
                errs.push(format!(
                    "plan {}: trigger element {} not in network",
                    p.id, p.trigger.element
                ));
            }
            if !p.trigger.value.is_finite() {
                errs.push(format!("plan {}: trigger value must be finite", p.id));
            }
            if p.actions.is_empty() {
                errs.push(format!("plan {}: at least one action required", p.id));
            }
            for a in &p.actions {
                if let PlanAction::Auto(t) = a {
                    for s in t.services.iter().flatten() {
                        if !known_service(s.as_str()) {
                            errs.push(format!("plan {}: unknown service {s}", p.id));
                        }
                    }
                }
            }
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFiring {
    pub plan: String,
    pub trigger: Trigger,
    pub value: f64,
    pub actions: Vec<PlanAction>,
}

/// Evaluates triggers each tick; a plan fires once when its trigger
/// becomes true and again only after it has been false.
#[derive(Clone, Debug, Default)]
pub struct PlanRunner {
    plans: Vec<ResponsePlan>,
    engaged: BTreeSet<String>,
}

impl PlanRunner {
    pub fn new(mut plans: Vec<ResponsePlan>) -> Self {
        plans.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            plans,
            engaged: BTreeSet::new(),
        }
    }

    pub fn plans(&self) -> &[ResponsePlan] {
        &self.plans
    }

    pub fn evaluate(&mut self, state: &TrafficState, net: &RoadNetwork) -> Vec<PlanFiring> {
        let mut out = Vec::new();
        for p in &self.plans {
            match p.trigger.evaluate(state, net) {
                Some(value) => {
                    if self.engaged.insert(p.id.clone()) {
                        out.push(PlanFiring {
                            plan: p.id.clone(),
                            trigger: p.trigger.clone(),
                            value,
                            actions: p.actions.clone(),
                        });
                    }
                }
                None => {
                    self.engaged.remove(&p.id);
                }
            }
        }
        out
    }
}
