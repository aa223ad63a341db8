//! The pre-operational planning report: which services, at what scale, for
//! whom, on which network, against which problems, and where each service
//! can help.

use crate::catalog::{
    Catalog, DeploymentScale, ElementKind, EndUserType, ServiceCategory, StrategyLevel,
};
use crate::ids::{ElementId, ServiceId};
use crate::network::{ElementRef, RoadNetwork};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusEntry {
    pub count: u64,
    /// Illustrative value, not a measured count.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub nonnormative: bool,
}

/// End users per type.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Census(pub BTreeMap<EndUserType, CensusEntry>);

impl Census {
    /// Parse `{type: count | {count, nonnormative}}`, collecting every
    /// problem rather than stopping at the first.
    pub fn from_value(v: &Value) -> Result<Self, Vec<String>> {
        let Some(obj) = v.as_object() else {
            return Err(vec!["census must be an object".to_owned()]);
        };
        let mut out = BTreeMap::new();
        let mut errs = Vec::new();
        for (k, v) in obj {
            let t = match k.parse::<EndUserType>() {
                Ok(t) => t,
                Err(e) => {
                    errs.push(format!("census: {e}"));
                    continue;
                }
            };
            let entry = match v {
                Value::Number(n) => n.as_u64().map(|count| CensusEntry {
                    count,
                    nonnormative: false,
                }),
                Value::Object(_) => serde_json::from_value::<CensusEntry>(v.clone()).ok(),
                _ => None,
            };
            match entry {
                Some(e) => {
                    out.insert(t, e);
                }
                None => errs.push(format!("census: bad count for {k}")),
            }
        }
        if errs.is_empty() {
            Ok(Census(out))
        } else {
            Err(errs)
        }
    }

    pub fn count(&self, t: EndUserType) -> Option<u64> {
        self.0.get(&t).map(|e| e.count)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvailableService {
    pub id: ServiceId,
    pub name: String,
    pub deployment_scale: DeploymentScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub element_counts: BTreeMap<ElementKind, usize>,
    pub route_parts: usize,
}

/// Where one service helps: elements of this network it applies to, per
/// level it contributes to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    /// Sensing only; helps every level indirectly.
    pub indirect: bool,
    pub by_level: BTreeMap<StrategyLevel, Vec<ElementId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningReport {
    pub available_services: Vec<AvailableService>,
    pub deployment_scales: BTreeMap<DeploymentScale, Vec<ServiceId>>,
    pub end_user_census: Census,
    pub network_summary: NetworkSummary,
    pub common_problems: Vec<String>,
    pub contribution_map: BTreeMap<ServiceId, Contribution>,
}

fn elements_of_kind(net: &RoadNetwork, kind: ElementKind) -> Vec<ElementId> {
    let mut out: Vec<ElementId> = (0..net.nodes().len())
        .map(ElementRef::Node)
        .chain((0..net.links().len()).map(ElementRef::Link))
        .chain((0..net.control_segments().len()).map(ElementRef::Segment))
        .filter(|r| net.element_kind_of(*r) == kind)
        .map(|r| net.element_id(r))
        .collect();
    out.sort();
    out
}

/// Answers in question order. The first two answers list C-ITS services
/// in the area's inventory; traditional services are the operator's own.
pub fn answer_six_questions(
    net: &RoadNetwork,
    catalog: &Catalog,
    census: &Census,
    common_problems: &[String],
) -> PlanningReport {
    let available: Vec<AvailableService> = catalog
        .services_in_order()
        .filter(|s| s.inventory && s.category == ServiceCategory::Cits)
        .map(|s| AvailableService {
            id: s.id.clone(),
            name: s.name.clone(),
            deployment_scale: s.deployment_scale,
        })
        .collect();
    let mut deployment_scales: BTreeMap<DeploymentScale, Vec<ServiceId>> = BTreeMap::new();
    for s in &available {
        deployment_scales
            .entry(s.deployment_scale)
            .or_default()
            .push(s.id.clone());
    }
    let by_kind: BTreeMap<ElementKind, Vec<ElementId>> = ElementKind::ALL
        .iter()
        .map(|&k| (k, elements_of_kind(net, k)))
        .collect();
    let mut contribution_map = BTreeMap::new();
    for s in catalog.services_in_order() {
        let mut elements: Vec<ElementId> = s
            .applicable_elements
            .iter()
            .flat_map(|k| by_kind[k].iter().cloned())
            .collect();
        elements.sort();
        let levels: Vec<StrategyLevel> = if s.indirect {
            StrategyLevel::ALL.to_vec()
        } else {
            s.contributions.iter().copied().collect()
        };
        if levels.is_empty() {
            continue;
        }
        let by_level = levels.into_iter().map(|l| (l, elements.clone())).collect();
        contribution_map.insert(
            s.id.clone(),
            Contribution {
                indirect: s.indirect,
                by_level,
            },
        );
    }
    PlanningReport {
        available_services: available,
        deployment_scales,
        end_user_census: census.clone(),
        network_summary: NetworkSummary {
            element_counts: net.kind_counts(),
            route_parts: net.route_parts().len(),
        },
        common_problems: common_problems.to_vec(),
        contribution_map,
    }
}

const Q: [&str; 6] = [
    "Which C-ITS services are available in the area of interest?",
    "What is the deployment scale for each C-ITS service?",
    "Who and how many are the end-users?",
    "Which is the available road network?",
    "Which are the common traffic problems in the available traffic network?",
    "How could each C-ITS service contribute to solving these traffic problems?",
];

fn join(ids: &[ServiceId]) -> String {
    ids.iter()
        .map(|s| s.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

impl fmt::Display for PlanningReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "1. {}", Q[0])?;
        for s in &self.available_services {
            writeln!(f, "   {} ({})", s.id, s.name)?;
        }
        writeln!(f, "2. {}", Q[1])?;
        for scale in DeploymentScale::ALL {
            let ids = self
                .deployment_scales
                .get(&scale)
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            writeln!(f, "   {}: {}", scale.label(), join(ids))?;
        }
        writeln!(f, "3. {}", Q[2])?;
        for (t, e) in &self.end_user_census.0 {
            let note = if e.nonnormative { " (placeholder)" } else { "" };
            writeln!(f, "   {t}: {}{note}", e.count)?;
        }
        writeln!(f, "4. {}", Q[3])?;
        for (k, n) in &self.network_summary.element_counts {
            writeln!(f, "   {}: {n}", k.label())?;
        }
        writeln!(f, "   Route parts: {}", self.network_summary.route_parts)?;
        writeln!(f, "5. {}", Q[4])?;
        for p in &self.common_problems {
            writeln!(f, "   {p}")?;
        }
        writeln!(f, "6. {}", Q[5])?;
        for (s, c) in &self.contribution_map {
            for (l, els) in &c.by_level {
                let tag = if c.indirect { " (indirect)" } else { "" };
                writeln!(f, "   {s} / {l}{tag}: {} element(s)", els.len())?;
            }
        }
        Ok(())
    }
}
