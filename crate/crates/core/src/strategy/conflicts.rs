//! Regulation of services that must not be active together.

use super::Activation;
use crate::catalog::{Catalog, Resolution, ANY_SCOPE};
use crate::network::RoadNetwork;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    /// A catalog rule leaves the choice to the operator.
    Rule,
    /// Two effects act on the same element in opposite directions.
    PhysicalEffect,
}

/// A question for the operator. Until it is answered every activation in
/// `withheld` stays inactive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingDecision {
    pub id: String,
    pub options: Vec<String>,
    pub scope: String,
    pub reason: DecisionReason,
    pub withheld: BTreeSet<Activation>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Regulated {
    pub kept: BTreeSet<Activation>,
    /// Waiting on an operator decision.
    pub withheld: BTreeSet<Activation>,
    /// Removed by a preference rule or by the operator's answer.
    pub suppressed: BTreeSet<Activation>,
    pub pending: Vec<PendingDecision>,
}

/// Whether `element` falls under a rule scope: `*`, the element's own id,
/// or the id of an area listing it.
pub fn in_scope(net: &RoadNetwork, scope: &str, element: &str) -> bool {
    scope == ANY_SCOPE
        || scope == element
        || net
            .areas()
            .iter()
            .any(|a| a.id == scope && a.elements.iter().any(|e| e.as_str() == element))
}

pub fn decision_id(a: &str, b: &str, scope: &str) -> String {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    format!("D:{lo}:{hi}:{scope}")
}

/// Apply the catalog's conflict rules in order. `decisions` maps decision
/// ids to the option the operator chose.
pub fn resolve_conflicts(
    proposed: &BTreeSet<Activation>,
    catalog: &Catalog,
    net: &RoadNetwork,
    decisions: &BTreeMap<String, String>,
) -> Regulated {
    let mut out = Regulated {
        kept: proposed.clone(),
        ..Default::default()
    };
    for rule in catalog.conflict_rules() {
        let pick = |svc: &str, kept: &BTreeSet<Activation>| -> BTreeSet<Activation> {
            kept.iter()
                .filter(|a| {
                    a.service.as_str() == svc && in_scope(net, &rule.scope, a.element.as_str())
                })
                .cloned()
                .collect()
        };
        let a = pick(rule.service_a.as_str(), &out.kept);
        let b = pick(rule.service_b.as_str(), &out.kept);
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let drop = |set: &BTreeSet<Activation>, out: &mut Regulated| {
            for x in set {
                out.kept.remove(x);
                out.suppressed.insert(x.clone());
            }
        };
        match rule.resolution {
            Resolution::PreferA => drop(&b, &mut out),
            Resolution::PreferB => drop(&a, &mut out),
            Resolution::OperatorDecides => {
                let id = decision_id(
                    rule.service_a.as_str(),
                    rule.service_b.as_str(),
                    &rule.scope,
                );
                match decisions.get(&id).map(String::as_str) {
                    Some(c) if c == rule.service_a.as_str() => drop(&b, &mut out),
                    Some(c) if c == rule.service_b.as_str() => drop(&a, &mut out),
                    _ => {
                        let withheld: BTreeSet<Activation> = a.union(&b).cloned().collect();
                        for x in &withheld {
                            out.kept.remove(x);
                            out.withheld.insert(x.clone());
                        }
                        let mut options =
                            vec![rule.service_a.to_string(), rule.service_b.to_string()];
                        options.sort();
                        out.pending.push(PendingDecision {
                            id,
                            options,
                            scope: rule.scope.clone(),
                            reason: DecisionReason::Rule,
                            withheld,
                        });
                    }
                }
            }
        }
    }
    out
}
