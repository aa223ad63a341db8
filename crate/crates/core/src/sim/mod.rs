//! Deterministic point-queue traffic simulation.
//!
//! Each link is a vertical queue: a vehicle entering at tick `t` becomes
//! ready to leave at `t + ceil(free_flow_time / dt)` and then leaves in FIFO
//! order as the link's discharge budget (`effective_capacity * dt / 3600`
//! vehicles per tick, fractional remainder carried) allows. Vulnerable road
//! users walk their route without loading capacity.

mod detect;
mod params;

pub use detect::{
    detect_bottlenecks, measure_element, measure_links, Bottleneck, BottleneckKind, Measure,
    ProblemElement,
};
pub use params::{ControlParams, DemandShiftRule, RerouteRule, RuleSource};

use crate::catalog::{Catalog, EndUserType};
use crate::ids::{AgentId, LinkId, NodeId, ServiceId};
use crate::network::RoadNetwork;
use crate::rng::{mix64, str_key, CounterRng, Stream};
use crate::runlog::RunLog;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;
use thiserror::Error;

pub const DEMAND_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandEntry {
    pub origin: NodeId,
    pub destination: NodeId,
    pub user_type: EndUserType,
    /// trips per hour
    pub rate: f64,
    /// seconds
    pub start: f64,
    /// seconds
    pub end: f64,
}

impl DemandEntry {
    /// Trips generated by this entry, evenly spaced over `[start, end)`.
    pub fn trip_count(&self) -> usize {
        (self.rate * (self.end - self.start) / 3600.0)
            .round()
            .max(0.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandProfile {
    pub schema_version: u32,
    #[serde(default)]
    pub entries: Vec<DemandEntry>,
}

impl Default for DemandProfile {
    fn default() -> Self {
        Self {
            schema_version: DEMAND_SCHEMA_VERSION,
            entries: Vec::new(),
        }
    }
}

impl DemandProfile {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn validate(&self, net: &RoadNetwork) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema_version != DEMAND_SCHEMA_VERSION {
            errs.push(format!(
                "unsupported demand schema_version {}",
                self.schema_version
            ));
        }
        for (i, e) in self.entries.iter().enumerate() {
            for n in [&e.origin, &e.destination] {
                if net.node(n.as_str()).is_none() {
                    errs.push(format!("demand entry {i}: unknown node {n}"));
                }
            }
            if e.origin == e.destination {
                errs.push(format!("demand entry {i}: origin equals destination"));
            }
            if !(e.rate.is_finite() && e.rate >= 0.0) {
                errs.push(format!("demand entry {i}: rate must be >= 0"));
            }
            if !(e.start.is_finite() && e.end.is_finite() && e.start < e.end && e.start >= 0.0) {
                errs.push(format!("demand entry {i}: need 0 <= start < end"));
            }
        }
        errs
    }
}

/// Probability of following a message, per advice class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Compliance {
    pub advisory: f64,
    pub reroute: f64,
    pub mode_shift: f64,
}

impl Compliance {
    pub fn uniform(p: f64) -> Self {
        Self {
            advisory: p,
            reroute: p,
            mode_shift: p,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// tick length, seconds
    pub dt: f64,
    /// km/h
    pub walking_speed: f64,
    pub compliance: BTreeMap<EndUserType, Compliance>,
    /// Share of each user type subscribed to its bundle (default 1).
    pub penetration: BTreeMap<EndUserType, f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let compliance = EndUserType::ALL
            .iter()
            .map(|&t| {
                let p = match t {
                    EndUserType::Driver => 0.6,
                    EndUserType::VRU => 0.5,
                    _ => 0.9,
                };
                (t, Compliance::uniform(p))
            })
            .collect();
        Self {
            dt: 10.0,
            walking_speed: 5.0,
            compliance,
            penetration: BTreeMap::new(),
        }
    }
}

impl SimConfig {
    pub fn compliance_of(&self, t: EndUserType) -> Compliance {
        self.compliance
            .get(&t)
            .copied()
            .unwrap_or(Compliance::uniform(0.0))
    }

    pub fn penetration_of(&self, t: EndUserType) -> f64 {
        self.penetration.get(&t).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            errs.push("dt must be > 0".to_owned());
        }
        if !(self.walking_speed.is_finite() && self.walking_speed > 0.0) {
            errs.push("walking_speed must be > 0".to_owned());
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        for (t, c) in &self.compliance {
            if !(unit(c.advisory) && unit(c.reroute) && unit(c.mode_shift)) {
                errs.push(format!("compliance for {t} must lie in [0,1]"));
            }
        }
        for (t, p) in &self.penetration {
            if !unit(*p) {
                errs.push(format!("penetration for {t} must lie in [0,1]"));
            }
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Incident {
    pub id: String,
    pub link: LinkId,
    /// Multiplier on capacity while active, in `[0, 1)`.
    pub capacity_factor: f64,
    pub start: u64,
    pub end: u64,
}

impl Incident {
    pub fn is_active(&self, tick: u64) -> bool {
        self.start <= tick && tick < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid demand: {0}")]
    InvalidDemand(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("destination {destination} unreachable from {origin}")]
    Unreachable { origin: NodeId, destination: NodeId },
    #[error("invalid incident {id}: {message}")]
    InvalidIncident { id: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Scheduled,
    OnNetwork,
    Completed,
    ModeShifted,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub id: AgentId,
    pub user_type: EndUserType,
    pub origin: NodeId,
    pub destination: NodeId,
    /// seconds
    pub departure: f64,
    pub compliance: Compliance,
    pub subscribed_services: BTreeSet<ServiceId>,
    pub status: AgentStatus,
    route: Vec<usize>,
    /// Free-flow duration of the route assigned at departure, in ticks.
    reference_ticks: u64,
    pos: usize,
    entered: u64,
    walk_ready: u64,
    notified: BTreeSet<u64>,
    decided: BTreeSet<u64>,
}

impl Agent {
    pub fn route<'a>(&'a self, net: &'a RoadNetwork) -> impl Iterator<Item = &'a LinkId> + 'a {
        self.route.iter().map(move |&l| &net.links()[l].id)
    }

    /// Current link and index within the route while on the network.
    pub fn position<'a>(&self, net: &'a RoadNetwork) -> Option<(&'a LinkId, usize)> {
        (self.status == AgentStatus::OnNetwork)
            .then(|| (&net.links()[self.route[self.pos]].id, self.pos))
    }

    pub fn has_notification(&self, message: u64) -> bool {
        self.notified.contains(&message)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub link: LinkId,
    pub vehicles_on_link: u32,
    /// vehicles past their free-flow exit time still waiting to leave
    pub queue: u32,
    pub inflow: u32,
    pub outflow: u32,
    /// veh/h, including incidents and control effects
    pub effective_capacity: f64,
    /// km/h
    pub mean_speed: f64,
    /// veh/km/lane
    pub density: f64,
    /// seconds, free-flow time plus expected queue wait
    pub travel_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficState {
    pub tick: u64,
    /// seconds
    pub time: f64,
    pub links: Vec<LinkState>,
    pub population: usize,
    pub created: u64,
    pub on_network: u64,
    pub completed: u64,
    pub mode_shifted: u64,
    pub active_incidents: Vec<Incident>,
}

impl TrafficState {
    pub fn link(&self, id: &str) -> Option<&LinkState> {
        self.links.iter().find(|l| l.link.as_str() == id)
    }

    pub fn total_queue(&self) -> u64 {
        self.links.iter().map(|l| u64::from(l.queue)).sum()
    }
}

#[derive(Clone, Debug, Default)]
struct LinkRuntime {
    vehicles: VecDeque<(u32, u64)>,
    acc: f64,
    inflow: u32,
    outflow: u32,
}

impl LinkRuntime {
    fn queue(&self, tick: u64) -> usize {
        self.vehicles.partition_point(|&(_, ready)| ready <= tick)
    }
}

/// Ticks needed to traverse `seconds` at tick length `dt`; at least one so
/// that a vehicle never crosses two links in one tick.
fn ticks_for(seconds: f64, dt: f64) -> u64 {
    ((seconds / dt) - 1e-9).ceil().max(1.0) as u64
}

/// Shortest free-flow path in ticks. Ties resolve towards links with
/// smaller ids because adjacency lists are sorted.
fn shortest_path(net: &RoadNetwork, cost: &[u64], from: usize, to: usize) -> Option<Vec<usize>> {
    let n = net.nodes().len();
    let mut dist = vec![u64::MAX; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[from] = 0;
    heap.push(Reverse((0u64, from)));
    while let Some(Reverse((d, v))) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        if v == to {
            break;
        }
        for &l in net.out_links(v) {
            let (_, w) = net
                .link_ends(l)
                .expect("adjacency only holds resolved links");
            let nd = d + cost[l];
            if nd < dist[w] {
                dist[w] = nd;
                pred[w] = Some(l);
                heap.push(Reverse((nd, w)));
            }
        }
    }
    if dist[to] == u64::MAX {
        return None;
    }
    let mut route = Vec::new();
    let mut v = to;
    while v != from {
        let l = pred[v]?;
        route.push(l);
        v = net.link_ends(l)?.0;
    }
    route.reverse();
    Some(route)
}

pub struct Simulation {
    net: Arc<RoadNetwork>,
    config: SimConfig,
    rng: CounterRng,
    tick: u64,
    agents: Vec<Agent>,
    departure_order: Vec<u32>,
    next_departure: usize,
    links: Vec<LinkRuntime>,
    ff_ticks: Vec<u64>,
    walk_ticks: Vec<u64>,
    control: ControlParams,
    incidents: Vec<Incident>,
    incident_active: Vec<bool>,
    walkers: BTreeSet<u32>,
    created: u64,
    completed: u64,
    mode_shifted: u64,
    log: RunLog,
}

enum Decision {
    Continue,
    ModeShift(ServiceId),
}

impl Simulation {
    /// Build the agent population from the demand profile. Agents subscribe
    /// to their user type's bundle with the configured penetration rate and
    /// get the free-flow shortest route at creation.
    pub fn new(
        net: Arc<RoadNetwork>,
        demand: &DemandProfile,
        catalog: &Catalog,
        config: SimConfig,
        seed: u64,
    ) -> Result<Self, SimError> {
        let errs = demand.validate(&net);
        if !errs.is_empty() {
            return Err(SimError::InvalidDemand(errs.join("; ")));
        }
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(SimError::InvalidConfig(errs.join("; ")));
        }
        let rng = CounterRng::new(seed);
        let ff_ticks: Vec<u64> = net
            .links()
            .iter()
            .map(|l| ticks_for(l.free_flow_time(), config.dt))
            .collect();
        let walk_ticks: Vec<u64> = net
            .links()
            .iter()
            .map(|l| ticks_for(l.length / (config.walking_speed / 3.6), config.dt))
            .collect();

        let bundles: BTreeMap<EndUserType, Vec<ServiceId>> = EndUserType::ALL
            .iter()
            .map(|&t| (t, catalog.bundle_for(t)))
            .collect();
        let mut routes: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut agents = Vec::new();
        for e in &demand.entries {
            let o = net.node_index(e.origin.as_str()).expect("validated");
            let d = net.node_index(e.destination.as_str()).expect("validated");
            let route = match routes.get(&(o, d)) {
                Some(r) => r.clone(),
                None => {
                    let r = shortest_path(&net, &ff_ticks, o, d).ok_or_else(|| {
                        SimError::Unreachable {
                            origin: e.origin.clone(),
                            destination: e.destination.clone(),
                        }
                    })?;
                    routes.insert((o, d), r.clone());
                    r
                }
            };
            let per_link = if e.user_type.is_motorized() {
                &ff_ticks
            } else {
                &walk_ticks
            };
            let reference_ticks = route.iter().map(|&l| per_link[l]).sum();
            let count = e.trip_count();
            let span = e.end - e.start;
            for k in 0..count {
                let id = AgentId(agents.len() as u32);
                let penetration = config.penetration_of(e.user_type);
                let subscribed_services = bundles[&e.user_type]
                    .iter()
                    .filter(|s| {
                        rng.chance(
                            penetration,
                            Stream::Subscription,
                            u64::from(id.0),
                            str_key(s.as_str()),
                        )
                    })
                    .cloned()
                    .collect();
                agents.push(Agent {
                    id,
                    user_type: e.user_type,
                    origin: e.origin.clone(),
                    destination: e.destination.clone(),
                    departure: e.start + span * k as f64 / count as f64,
                    compliance: config.compliance_of(e.user_type),
                    subscribed_services,
                    status: AgentStatus::Scheduled,
                    route: route.clone(),
                    reference_ticks,
                    pos: 0,
                    entered: 0,
                    walk_ready: 0,
                    notified: BTreeSet::new(),
                    decided: BTreeSet::new(),
                });
            }
        }
        let mut departure_order: Vec<u32> = (0..agents.len() as u32).collect();
        departure_order.sort_by(|a, b| {
            agents[*a as usize]
                .departure
                .total_cmp(&agents[*b as usize].departure)
                .then(a.cmp(b))
        });
        let links = vec![LinkRuntime::default(); net.links().len()];
        let control = ControlParams::neutral(net.links().len());
        Ok(Self {
            net,
            config,
            rng,
            tick: 0,
            agents,
            departure_order,
            next_departure: 0,
            links,
            ff_ticks,
            walk_ticks,
            control,
            incidents: Vec::new(),
            incident_active: Vec::new(),
            walkers: BTreeSet::new(),
            created: 0,
            completed: 0,
            mode_shifted: 0,
            log: RunLog::new(),
        })
    }

    pub fn network(&self) -> &Arc<RoadNetwork> {
        &self.net
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.rng.seed()
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent(&self, id: AgentId) -> Option<&Agent> {
        self.agents.get(id.0 as usize)
    }

    pub fn control(&self) -> &ControlParams {
        &self.control
    }

    pub fn set_control(&mut self, params: ControlParams) {
        assert_eq!(params.capacity_factor.len(), self.links.len());
        self.control = params;
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    /// Engine-level records share the simulation's log so one file replays
    /// the whole run.
    pub fn log_mut(&mut self) -> &mut RunLog {
        &mut self.log
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    pub fn incidents(&self) -> &[Incident] {
        &self.incidents
    }

    pub fn add_incident(&mut self, incident: Incident) -> Result<(), SimError> {
        let bad = |m: &str| SimError::InvalidIncident {
            id: incident.id.clone(),
            message: m.to_owned(),
        };
        if self.net.link(incident.link.as_str()).is_none() {
            return Err(bad("unknown link"));
        }
        if !(0.0..1.0).contains(&incident.capacity_factor) {
            return Err(bad("capacity_factor must lie in [0,1)"));
        }
        if incident.start >= incident.end {
            return Err(bad("start must precede end"));
        }
        if self.incidents.iter().any(|i| i.id == incident.id) {
            return Err(bad("duplicate incident id"));
        }
        self.incidents.push(incident);
        self.incident_active.push(false);
        Ok(())
    }

    pub fn subscribes(&self, agent: AgentId, service: &str) -> bool {
        self.agent(agent)
            .is_some_and(|a| a.subscribed_services.contains(service))
    }

    /// Record a delivered notification on the agent's device.
    pub fn notify(&mut self, agent: AgentId, message: u64) {
        if let Some(a) = self.agents.get_mut(agent.0 as usize) {
            a.notified.insert(message);
        }
    }

    /// Free-flow travel time of a link in whole ticks.
    pub fn free_flow_ticks(&self, link: usize) -> u64 {
        self.ff_ticks[link]
    }

    /// Capacity of a link this tick before the queue bonus, veh/h.
    pub fn effective_capacity(&self, link: usize) -> f64 {
        self.capacity_at(link, self.tick)
    }

    fn capacity_at(&self, link: usize, tick: u64) -> f64 {
        let mut c = self.net.links()[link].capacity * self.control.capacity_factor[link];
        for inc in &self.incidents {
            if inc.is_active(tick) && self.net.link_index(inc.link.as_str()) == Some(link) {
                c *= inc.capacity_factor;
            }
        }
        c
    }

    pub fn on_network(&self) -> u64 {
        self.created - self.completed
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn created(&self) -> u64 {
        self.created
    }

    /// Every agent is either scheduled, shifted to another mode, or done.
    pub fn is_finished(&self) -> bool {
        self.next_departure >= self.departure_order.len() && self.on_network() == 0
    }

    fn log_incident_transitions(&mut self) {
        for (i, inc) in self.incidents.iter().enumerate() {
            let active = inc.is_active(self.tick);
            if active != self.incident_active[i] {
                let kind = if active {
                    "incident_start"
                } else {
                    "incident_end"
                };
                self.log.push(
                    self.tick,
                    kind,
                    json!({"incident": inc.id, "link": inc.link, "capacity_factor": inc.capacity_factor}),
                );
                self.incident_active[i] = active;
            }
        }
    }

    fn eligible(agent: &Agent, source: &RuleSource) -> bool {
        !source.mediated || agent.notified.contains(&source.message)
    }

    /// Apply reroute advice at the node the agent is about to leave.
    fn consider_reroute(&mut self, ai: usize, at_departure: bool) -> Decision {
        let agent = &self.agents[ai];
        let node = self
            .net
            .link_ends(agent.route[agent.pos])
            .expect("routes use resolved links")
            .0;
        let Some(rules) = self.control.reroute.get(&node) else {
            return Decision::Continue;
        };
        for rule in rules {
            let agent = &self.agents[ai];
            if !agent.route[agent.pos..].starts_with(&rule.avoid)
                || !Self::eligible(agent, &rule.source)
            {
                continue;
            }
            let msg = rule.source.message;
            if !self.agents[ai].decided.insert(msg) {
                continue;
            }
            let agent = &self.agents[ai];
            let key = u64::from(agent.id.0);
            if !self.rng.chance(
                agent.compliance.reroute,
                Stream::Compliance,
                key,
                mix64(self.tick) ^ msg,
            ) {
                continue;
            }
            if at_departure
                && rule.mode_shift > 0.0
                && self
                    .rng
                    .chance(rule.mode_shift, Stream::ModeShift, key, msg)
            {
                return Decision::ModeShift(rule.source.service.clone());
            }
            let pos = agent.pos;
            let via = rule.via.clone();
            let avoid_len = rule.avoid.len();
            let service = rule.source.service.clone();
            let agent = &mut self.agents[ai];
            agent.route.splice(pos..pos + avoid_len, via);
            self.log.push(
                self.tick,
                "reroute",
                json!({"agent": agent.id, "node": self.net.nodes()[node].id, "service": service}),
            );
            break;
        }
        Decision::Continue
    }

    /// Demand-shift rules on any node of the planned route.
    fn consider_mode_shift(&mut self, ai: usize) -> Option<ServiceId> {
        let mut nodes: Vec<usize> = self.agents[ai]
            .route
            .iter()
            .map(|&l| self.net.link_ends(l).expect("resolved").0)
            .collect();
        if let Some(&last) = self.agents[ai].route.last() {
            nodes.push(self.net.link_ends(last).expect("resolved").1);
        }
        for node in nodes {
            let Some(rules) = self.control.demand_shift.get(&node) else {
                continue;
            };
            for rule in rules {
                let agent = &self.agents[ai];
                if !Self::eligible(agent, &rule.source)
                    || agent.decided.contains(&rule.source.message)
                {
                    continue;
                }
                let p = agent.compliance.mode_shift * rule.share;
                let key = u64::from(agent.id.0);
                let msg = rule.source.message;
                let hit = self
                    .rng
                    .chance(p, Stream::ModeShift, key, mix64(self.tick) ^ msg);
                self.agents[ai].decided.insert(msg);
                if hit {
                    return Some(rule.source.service.clone());
                }
            }
        }
        None
    }

    fn depart(&mut self, ai: usize) {
        let shift = if self.agents[ai].route.is_empty() {
            None
        } else {
            match self.consider_mode_shift(ai) {
                Some(s) => Some(s),
                None => match self.consider_reroute(ai, true) {
                    Decision::ModeShift(s) => Some(s),
                    Decision::Continue => None,
                },
            }
        };
        let tick = self.tick;
        let agent = &mut self.agents[ai];
        if let Some(service) = shift {
            agent.status = AgentStatus::ModeShifted;
            self.mode_shifted += 1;
            self.log.push(
                tick,
                "mode_shift",
                json!({"agent": agent.id, "service": service}),
            );
            return;
        }
        agent.status = AgentStatus::OnNetwork;
        agent.entered = tick;
        agent.pos = 0;
        self.created += 1;
        self.log.push(
            tick,
            "depart",
            json!({
                "agent": agent.id,
                "user_type": agent.user_type,
                "origin": agent.origin,
                "destination": agent.destination,
            }),
        );
        let first = agent.route[0];
        if agent.user_type.is_motorized() {
            let ready = tick + self.ff_ticks[first];
            self.links[first].vehicles.push_back((agent.id.0, ready));
            self.links[first].inflow += 1;
        } else {
            agent.walk_ready = tick + self.walk_ticks[first];
            self.walkers.insert(agent.id.0);
        }
    }

    fn arrive(&mut self, ai: usize) {
        let tick = self.tick;
        let dt = self.config.dt;
        let agent = &mut self.agents[ai];
        agent.status = AgentStatus::Completed;
        self.completed += 1;
        let travel = (tick - agent.entered) as f64 * dt;
        let reference = agent.reference_ticks as f64 * dt;
        self.log.push(
            tick,
            "arrive",
            json!({
                "agent": agent.id,
                "user_type": agent.user_type,
                "travel_time": travel,
                "free_flow_time": reference,
            }),
        );
    }

    /// Advance one tick of `config.dt` seconds.
    pub fn step(&mut self) {
        let tick = self.tick;
        let dt = self.config.dt;
        self.log_incident_transitions();
        for l in &mut self.links {
            l.inflow = 0;
            l.outflow = 0;
        }

        let now = self.time();
        while self.next_departure < self.departure_order.len() {
            let ai = self.departure_order[self.next_departure] as usize;
            if self.agents[ai].departure > now {
                break;
            }
            self.next_departure += 1;
            self.depart(ai);
        }

        for li in 0..self.links.len() {
            let queued = self.links[li].queue(tick) > 0;
            let mut cap = self.effective_capacity(li);
            if queued {
                cap *= self.control.queue_bonus[li];
            }
            let per_tick = cap * dt / 3600.0;
            self.links[li].acc += per_tick;
            loop {
                let link = &mut self.links[li];
                let ready = matches!(link.vehicles.front(), Some(&(_, r)) if r <= tick);
                if !ready {
                    // an idle link banks no discharge credit
                    link.acc = 0.0;
                    break;
                }
                if link.acc < 1.0 {
                    break;
                }
                let (agent, _) = link.vehicles.pop_front().expect("front checked");
                link.acc -= 1.0;
                link.outflow += 1;
                self.advance_vehicle(agent as usize);
            }
        }

        let walkers: Vec<u32> = self.walkers.iter().copied().collect();
        for w in walkers {
            let ai = w as usize;
            while self.agents[ai].status == AgentStatus::OnNetwork
                && self.agents[ai].walk_ready <= tick
            {
                let agent = &mut self.agents[ai];
                agent.pos += 1;
                if agent.pos == agent.route.len() {
                    self.walkers.remove(&w);
                    self.arrive(ai);
                } else {
                    agent.walk_ready = tick + self.walk_ticks[agent.route[agent.pos]];
                }
            }
        }

        let queued: u64 = self.links.iter().map(|l| l.queue(tick) as u64).sum();
        self.log.push(
            tick,
            "tick",
            json!({
                "created": self.created,
                "on_network": self.on_network(),
                "completed": self.completed,
                "mode_shifted": self.mode_shifted,
                "queued": queued,
            }),
        );
        debug_assert_eq!(self.created, self.on_network() + self.completed);
        self.tick += 1;
    }

    fn advance_vehicle(&mut self, ai: usize) {
        let tick = self.tick;
        self.agents[ai].pos += 1;
        if self.agents[ai].pos == self.agents[ai].route.len() {
            self.arrive(ai);
            return;
        }
        let _ = self.consider_reroute(ai, false);
        let agent = &self.agents[ai];
        let next = agent.route[agent.pos];
        let ready = tick + self.ff_ticks[next];
        self.links[next].vehicles.push_back((agent.id.0, ready));
        self.links[next].inflow += 1;
    }

    /// Snapshot of the state at the end of the last completed tick.
    pub fn state(&self) -> TrafficState {
        let last = self.tick.saturating_sub(1);
        let links = self
            .net
            .links()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let rt = &self.links[i];
                let queue = if self.tick == 0 { 0 } else { rt.queue(last) };
                let cap = self.capacity_at(i, last);
                let ff = l.free_flow_time();
                let wait = if queue == 0 {
                    0.0
                } else if cap > 0.0 {
                    queue as f64 / (cap / 3600.0)
                } else {
                    f64::INFINITY
                };
                let mean_speed = if wait.is_finite() {
                    l.free_flow_speed * ff / (ff + wait)
                } else {
                    0.0
                };
                LinkState {
                    link: l.id.clone(),
                    vehicles_on_link: rt.vehicles.len() as u32,
                    queue: queue as u32,
                    inflow: rt.inflow,
                    outflow: rt.outflow,
                    effective_capacity: cap,
                    mean_speed,
                    density: rt.vehicles.len() as f64 / (l.length / 1000.0 * f64::from(l.lanes)),
                    travel_time: if wait.is_finite() {
                        ff + wait
                    } else {
                        f64::MAX
                    },
                }
            })
            .collect();
        TrafficState {
            tick: self.tick,
            time: self.time(),
            links,
            population: self.agents.len(),
            created: self.created,
            on_network: self.on_network(),
            completed: self.completed,
            mode_shifted: self.mode_shifted,
            active_incidents: self
                .incidents
                .iter()
                .filter(|i| i.is_active(last))
                .cloned()
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests;
