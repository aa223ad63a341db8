use crate::ids::ServiceId;
use serde::Serialize;
use std::collections::BTreeMap;

/// Where a behavioural rule came from. Mediated rules only reach agents
/// holding a delivered notification for `message`; direct rules (roadside
/// signs owned by the operator) reach every agent passing the location.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleSource {
    pub service: ServiceId,
    pub message: u64,
    pub mediated: bool,
}

/// Replace `avoid` with `via` for agents whose remaining route starts with
/// `avoid` at the rule's node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RerouteRule {
    pub source: RuleSource,
    pub avoid: Vec<usize>,
    pub via: Vec<usize>,
    /// Share of complying agents that drop the car trip instead, when the
    /// advice reaches them before departure.
    pub mode_shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemandShiftRule {
    pub source: RuleSource,
    pub share: f64,
}

/// Control-side simulation parameters produced by the active effect set.
/// The neutral value leaves the simulation identical to an uncontrolled run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlParams {
    /// Multiplier on each link's physical capacity.
    pub capacity_factor: Vec<f64>,
    /// Extra discharge multiplier applied while a link has a standing queue.
    pub queue_bonus: Vec<f64>,
    /// Keyed by node index.
    pub reroute: BTreeMap<usize, Vec<RerouteRule>>,
    /// Keyed by node index.
    pub demand_shift: BTreeMap<usize, Vec<DemandShiftRule>>,
}

impl ControlParams {
    pub fn neutral(links: usize) -> Self {
        Self {
            capacity_factor: vec![1.0; links],
            queue_bonus: vec![1.0; links],
            reroute: BTreeMap::new(),
            demand_shift: BTreeMap::new(),
        }
    }

    /// Exact comparison, used to check that removing effects restores the
    /// uncontrolled parameters bit for bit.
    pub fn bit_identical(&self, other: &Self) -> bool {
        fn bits(v: &[f64]) -> Vec<u64> {
            v.iter().map(|x| x.to_bits()).collect()
        }
        bits(&self.capacity_factor) == bits(&other.capacity_factor)
            && bits(&self.queue_bonus) == bits(&other.queue_bonus)
            && self.reroute == other.reroute
            && self.demand_shift == other.demand_shift
    }
}
