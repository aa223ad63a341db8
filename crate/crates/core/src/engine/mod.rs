//! The operational loop: one writer owning the simulation, the strategies
//! and the activation bus, driven by a single command queue.
//!
//! Each tick the engine observes the last completed traffic state (problem
//! detection, response plans, preferred situations), lets the bus dispatch
//! and deliver, then steps the simulation. Commands are applied between
//! ticks in submission order. Every engine event is also written to the run
//! log so a run can be replayed from the log alone.

mod command;
mod script;

pub use command::{Command, CommandReply, CommandRequest, EngineError, ErrorClass};
pub use script::{parse_script, run_script, ScriptLine};

use crate::bus::{
    regulate_physical, ActivationBus, BusEvent, Effect, EffectModel, Pair, ServiceStatus,
};
use crate::catalog::{Catalog, StrategyLevel};
use crate::ids::{ElementId, ServiceId};
use crate::kpi::{KpiAccumulator, KpiReport};
use crate::network::{ElementRef, RoadNetwork};
use crate::scenario::Scenario;
use crate::sim::{
    detect_bottlenecks, measure_element, Bottleneck, BottleneckKind, Measure, ProblemElement,
    Simulation, TrafficState,
};
use crate::strategy::{
    resolve_conflicts, Activation, Composer, ControlStrategy, CreatedBy, Evaluation,
    PendingDecision, PlanAction, PlanRunner, PreferredTracker, StrategyRegistry, StrategyStatus,
    StrategyTemplate, Trigger,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

pub const DEFAULT_SNAPSHOT_EVERY: u64 = 10;
pub const DEFAULT_KPI_EVERY: u64 = 30;
pub const DEFAULT_RATE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    StateSnapshot,
    BottleneckDetected,
    StrategyProposed,
    StrategyActivated,
    StrategyRetired,
    PendingDecision,
    MessageLifecycle,
    KpiUpdate,
}

impl EventKind {
    /// Record kind used in the run log.
    pub fn log_kind(self) -> &'static str {
        match self {
            EventKind::StateSnapshot => "state_snapshot",
            EventKind::BottleneckDetected => "bottleneck_detected",
            EventKind::StrategyProposed => "strategy_proposed",
            EventKind::StrategyActivated => "strategy_activated",
            EventKind::StrategyRetired => "strategy_retired",
            EventKind::PendingDecision => "pending_decision",
            EventKind::MessageLifecycle => "message_lifecycle",
            EventKind::KpiUpdate => "kpi_update",
        }
    }

    pub fn from_log_kind(kind: &str) -> Option<Self> {
        use EventKind::*;
        [
            StateSnapshot,
            BottleneckDetected,
            StrategyProposed,
            StrategyActivated,
            StrategyRetired,
            PendingDecision,
            MessageLifecycle,
            KpiUpdate,
        ]
        .into_iter()
        .find(|k| k.log_kind() == kind)
    }
}

/// Totally ordered by `seq`; ticks never decrease along the sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineEvent {
    pub seq: u64,
    pub tick: u64,
    pub kind: EventKind,
    pub payload: Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    /// Ticks between state snapshots; 0 disables them.
    pub snapshot_every: u64,
    /// Ticks between KPI updates; 0 disables them.
    pub kpi_every: u64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            kpi_every: DEFAULT_KPI_EVERY,
        }
    }
}

/// A strategy plus the engine's bookkeeping for it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyEntry {
    pub strategy: ControlStrategy,
    pub tracker: PreferredTracker,
    pub last_evaluation: Option<Evaluation>,
    /// Plan that proposed it, if any.
    pub plan: Option<String>,
    /// A de-escalation or retirement proposal is outstanding.
    #[serde(skip)]
    proposal_sent: bool,
}

/// What activating a strategy would do given everything already active.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    /// Activations of the strategy that would be claimed.
    pub kept: BTreeSet<Activation>,
    pub withheld: BTreeSet<Activation>,
    pub suppressed: BTreeSet<Activation>,
    pub pending: Vec<PendingDecision>,
    /// Resolved effect per kept activation, keyed `service@element`.
    pub effects: BTreeMap<String, Effect>,
}

/// Per-pair view for the service status endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairStatus {
    pub service: ServiceId,
    pub element: ElementId,
    pub status: ServiceStatus,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced_on: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced_off: bool,
}

#[derive(Default)]
struct Regulation {
    /// owner -> (problem element, activations to claim)
    claims: BTreeMap<String, (String, BTreeSet<Activation>)>,
    withheld: BTreeSet<Activation>,
    suppressed: BTreeSet<Activation>,
    pending: Vec<PendingDecision>,
    effects: BTreeMap<Activation, Effect>,
}

const INFORM_OWNER: &str = "inform:";
const OVERRIDE_OWNER: &str = "override:";

pub struct Engine {
    scenario: Arc<Scenario>,
    options: EngineOptions,
    sim: Simulation,
    bus: ActivationBus,
    composer: Composer,
    plans: PlanRunner,
    strategies: BTreeMap<String, StrategyEntry>,
    standing: BTreeSet<Activation>,
    forced_on: BTreeMap<Pair, StrategyLevel>,
    decisions: BTreeMap<String, String>,
    pending: BTreeMap<String, PendingDecision>,
    claimed: BTreeSet<String>,
    bottlenecks: Vec<Bottleneck>,
    events: Vec<EngineEvent>,
    replies: BTreeMap<String, (String, Result<CommandReply, EngineError>)>,
    kpi: KpiAccumulator,
    auto_confirm: bool,
    paused: bool,
    rate: f64,
}

fn kind_for(measure: Measure) -> BottleneckKind {
    match measure {
        Measure::Queue | Measure::Density | Measure::Outflow => BottleneckKind::QueueSpill,
        Measure::MeanSpeed | Measure::SpeedRatio => BottleneckKind::SpeedDrop,
        Measure::TravelTimeRatio => BottleneckKind::TravelTimeExcess,
    }
}

fn severity_of(measure: Measure, value: f64, threshold: f64) -> f64 {
    let (num, den) = if measure.higher_is_worse() {
        (value, threshold)
    } else {
        (threshold, value)
    };
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn problem_from_trigger(t: &Trigger, value: f64) -> Bottleneck {
    let kind = kind_for(t.measure);
    Bottleneck {
        id: Bottleneck::make_id(t.element.as_str(), kind),
        element: t.element.clone(),
        kind,
        severity: severity_of(t.measure, value, t.value),
        measure: t.measure,
        value,
        threshold: t.value,
        primary_cause: None,
    }
}

fn status_name(s: StrategyStatus) -> &'static str {
    match s {
        StrategyStatus::Proposed => "Proposed",
        StrategyStatus::Active => "Active",
        StrategyStatus::Retired => "Retired",
    }
}

/// Every node, link and control segment id with its reference.
fn all_elements(net: &RoadNetwork) -> Vec<ElementRef> {
    (0..net.nodes().len())
        .map(ElementRef::Node)
        .chain((0..net.links().len()).map(ElementRef::Link))
        .chain((0..net.control_segments().len()).map(ElementRef::Segment))
        .collect()
}

impl Engine {
    pub fn new(
        scenario: Scenario,
        seed: Option<u64>,
        options: EngineOptions,
    ) -> Result<Self, EngineError> {
        let scenario = Arc::new(scenario);
        let m = &scenario.manifest;
        let seed = seed.unwrap_or(m.seed);
        let mut sim = Simulation::new(
            scenario.network.clone(),
            &scenario.demand,
            &scenario.catalog,
            m.sim.clone(),
            seed,
        )?;
        for inc in &m.incidents {
            sim.add_incident(inc.clone())?;
        }
        let mut registry = StrategyRegistry::default();
        for name in &m.strategies {
            registry.select(name)?;
        }
        let composer = Composer {
            registry,
            horizon: m.horizon,
        };
        let model = EffectModel::new(scenario.effects.clone(), m.horizon);
        let bus = ActivationBus::new(m.gateways.clone(), model, seed);
        let standing = if m.always_inform {
            Self::standing_informs(&scenario.network, &scenario.catalog)
        } else {
            BTreeSet::new()
        };
        let mut engine = Self {
            plans: PlanRunner::new(scenario.plans.plans.clone()),
            auto_confirm: m.auto_confirm,
            scenario,
            options,
            sim,
            bus,
            composer,
            strategies: BTreeMap::new(),
            standing,
            forced_on: BTreeMap::new(),
            decisions: BTreeMap::new(),
            pending: BTreeMap::new(),
            claimed: BTreeSet::new(),
            bottlenecks: Vec::new(),
            events: Vec::new(),
            replies: BTreeMap::new(),
            kpi: KpiAccumulator::default(),
            paused: false,
            rate: DEFAULT_RATE,
        };
        engine.regulate();
        engine.sync_bus();
        Ok(engine)
    }

    fn standing_informs(net: &RoadNetwork, catalog: &Catalog) -> BTreeSet<Activation> {
        let services = catalog.services_for_strategy(StrategyLevel::InformTraffic, true);
        let mut out = BTreeSet::new();
        for r in all_elements(net) {
            let kind = net.element_kind_of(r);
            for s in &services {
                if catalog
                    .get(s.as_str())
                    .is_some_and(|d| d.applicable_elements.contains(&kind))
                {
                    out.insert(Activation {
                        service: s.clone(),
                        element: net.element_id(r),
                        level: StrategyLevel::InformTraffic,
                    });
                }
            }
        }
        out
    }

    // ----- queries; none of these mutate -----

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn network(&self) -> &Arc<RoadNetwork> {
        &self.scenario.network
    }

    pub fn catalog(&self) -> &Catalog {
        &self.scenario.catalog
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn bus(&self) -> &ActivationBus {
        &self.bus
    }

    pub fn tick(&self) -> u64 {
        self.sim.tick()
    }

    pub fn options(&self) -> EngineOptions {
        self.options
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn auto_confirm(&self) -> bool {
        self.auto_confirm
    }

    pub fn traffic_state(&self) -> TrafficState {
        self.sim.state()
    }

    /// Problems found on the last completed tick, most severe first.
    pub fn bottlenecks(&self) -> &[Bottleneck] {
        &self.bottlenecks
    }

    pub fn strategies(&self) -> impl Iterator<Item = &StrategyEntry> {
        self.strategies.values()
    }

    pub fn strategy(&self, id: &str) -> Option<&StrategyEntry> {
        self.strategies.get(id)
    }

    pub fn pending_decisions(&self) -> impl Iterator<Item = &PendingDecision> {
        self.pending.values()
    }

    pub fn decisions(&self) -> &BTreeMap<String, String> {
        &self.decisions
    }

    pub fn events(&self) -> &[EngineEvent] {
        &self.events
    }

    /// Events with `seq >= from`.
    pub fn events_since(&self, from: u64) -> &[EngineEvent] {
        let start = (from.max(1) - 1) as usize;
        self.events.get(start..).unwrap_or(&[])
    }

    pub fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn kpis(&self) -> KpiReport {
        let mut acc = self.kpi.clone();
        acc.update(self.sim.log());
        acc.report()
    }

    pub fn service_statuses(&self) -> Vec<PairStatus> {
        let mut pairs: BTreeSet<Pair> = self.bus.statuses().into_keys().collect();
        pairs.extend(self.forced_on.keys().cloned());
        pairs.extend(self.bus.forced_off().iter().cloned());
        pairs
            .into_iter()
            .map(|(service, element)| PairStatus {
                status: self.bus.status(service.as_str(), element.as_str()),
                forced_on: self
                    .forced_on
                    .contains_key(&(service.clone(), element.clone())),
                forced_off: self
                    .bus
                    .forced_off()
                    .contains(&(service.clone(), element.clone())),
                service,
                element,
            })
            .collect()
    }

    /// Digest of everything a command can change.
    pub fn state_hash(&self) -> String {
        let strategies: Vec<&ControlStrategy> =
            self.strategies.values().map(|e| &e.strategy).collect();
        let v = json!({
            "tick": self.sim.tick(),
            "events": self.events.len(),
            "log": self.sim.log().len(),
            "strategies": strategies,
            "statuses": self.service_statuses(),
            "decisions": self.decisions,
            "pending": self.pending.keys().collect::<Vec<_>>(),
            "paused": self.paused,
            "rate": self.rate,
            "auto_confirm": self.auto_confirm,
        });
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    /// Effects and regulation outcome of activating `strategy` now.
    pub fn preview(&self, strategy: &ControlStrategy) -> Preview {
        let mut active: Vec<&ControlStrategy> = self.active_strategies().collect();
        if !active.iter().any(|s| s.id == strategy.id) {
            active.push(strategy);
        }
        let reg = self.regulation(active);
        let working =
            self.composer
                .working_levels(strategy, &self.scenario.network, &self.scenario.catalog);
        let kept = reg
            .claims
            .get(&strategy.id)
            .map(|(_, a)| a.clone())
            .unwrap_or_default();
        let effects = kept
            .iter()
            .filter_map(|a| reg.effects.get(a).map(|e| (a.to_string(), e.clone())))
            .collect();
        Preview {
            withheld: working.intersection(&reg.withheld).cloned().collect(),
            suppressed: working.intersection(&reg.suppressed).cloned().collect(),
            pending: reg
                .pending
                .into_iter()
                .filter(|p| p.withheld.iter().any(|a| working.contains(a)))
                .collect(),
            kept,
            effects,
        }
    }

    pub fn into_log(self) -> crate::runlog::RunLog {
        self.sim.into_log()
    }

    // ----- events -----

    fn emit(&mut self, kind: EventKind, payload: Value) {
        let seq = self.events.len() as u64 + 1;
        let tick = self.sim.tick();
        let mut logged = payload.clone();
        if let Value::Object(m) = &mut logged {
            m.insert("seq".into(), json!(seq));
        }
        self.sim.log_mut().push(tick, kind.log_kind(), logged);
        self.events.push(EngineEvent {
            seq,
            tick,
            kind,
            payload,
        });
    }

    fn emit_bus(&mut self, events: Vec<BusEvent>) {
        for e in events {
            let payload = serde_json::to_value(&e).expect("bus events serialize");
            self.emit(EventKind::MessageLifecycle, payload);
        }
    }

    fn snapshot_payload(&self) -> Value {
        json!({
            "state": self.sim.state(),
            "bottlenecks": self.bottlenecks.iter().map(|b| b.id.as_str()).collect::<Vec<_>>(),
        })
    }

    // ----- regulation -----

    fn active_strategies(&self) -> impl Iterator<Item = &ControlStrategy> {
        self.strategies
            .values()
            .map(|e| &e.strategy)
            .filter(|s| s.status == StrategyStatus::Active)
    }

    fn regulation<'a>(&self, active: impl IntoIterator<Item = &'a ControlStrategy>) -> Regulation {
        let net = &self.scenario.network;
        let catalog = &self.scenario.catalog;
        let mut owners: BTreeMap<String, (String, BTreeSet<Activation>)> = BTreeMap::new();
        for s in active {
            let working = self.composer.working_levels(s, net, catalog);
            owners.insert(s.id.clone(), (s.problem.element.to_string(), working));
        }
        for a in &self.standing {
            owners
                .entry(format!("{INFORM_OWNER}{}", a.element))
                .or_insert_with(|| (a.element.to_string(), BTreeSet::new()))
                .1
                .insert(a.clone());
        }
        let mut problem_of: BTreeMap<&Activation, &str> = BTreeMap::new();
        for (problem, acts) in owners.values() {
            for a in acts {
                problem_of.entry(a).or_insert(problem.as_str());
            }
        }
        let union: BTreeSet<Activation> = problem_of.keys().map(|a| (*a).clone()).collect();
        let rule = resolve_conflicts(&union, catalog, net, &self.decisions);
        let mut effects = BTreeMap::new();
        for a in &rule.kept {
            let one = BTreeSet::from([a.clone()]);
            effects.extend(self.bus.preview(net, catalog, problem_of[a], &one));
        }
        let (kept, suppressed, pending) = regulate_physical(net, &effects, &self.decisions);
        let mut withheld = rule.withheld;
        for p in &pending {
            withheld.extend(p.withheld.iter().cloned());
        }
        let mut all_pending = rule.pending;
        all_pending.extend(pending);
        let mut all_suppressed = rule.suppressed;
        all_suppressed.extend(suppressed);
        let mut claims: BTreeMap<String, (String, BTreeSet<Activation>)> = owners
            .into_iter()
            .map(|(o, (p, acts))| (o, (p, acts.intersection(&kept).cloned().collect())))
            .collect();
        for ((service, element), level) in &self.forced_on {
            let a = Activation {
                service: service.clone(),
                element: element.clone(),
                level: *level,
            };
            claims.insert(
                format!("{OVERRIDE_OWNER}{a}"),
                (element.to_string(), BTreeSet::from([a])),
            );
        }
        effects.retain(|a, _| kept.contains(a));
        Regulation {
            claims,
            withheld,
            suppressed: all_suppressed,
            pending: all_pending,
            effects,
        }
    }

    /// Recompute claims from the active strategies, standing informs and
    /// overrides; publish decisions that appeared or went away.
    fn regulate(&mut self) {
        let active: Vec<ControlStrategy> = self.active_strategies().cloned().collect();
        let reg = self.regulation(&active);
        for (owner, (problem, acts)) in &reg.claims {
            self.bus.claim(owner, problem, acts);
        }
        let owners: BTreeSet<String> = reg.claims.keys().cloned().collect();
        for gone in self.claimed.difference(&owners) {
            self.bus.release(gone);
        }
        self.claimed = owners;

        let now: BTreeMap<String, PendingDecision> =
            reg.pending.into_iter().map(|p| (p.id.clone(), p)).collect();
        let old = std::mem::take(&mut self.pending);
        for id in old.keys() {
            if !now.contains_key(id) {
                let payload = match self.decisions.get(id) {
                    Some(choice) => json!({"state": "resolved", "id": id, "choice": choice}),
                    None => json!({"state": "withdrawn", "id": id}),
                };
                self.emit(EventKind::PendingDecision, payload);
            }
        }
        for (id, p) in &now {
            if old.get(id) != Some(p) {
                self.emit(
                    EventKind::PendingDecision,
                    json!({"state": "open", "decision": p}),
                );
            }
        }
        self.pending = now;
    }

    fn sync_bus(&mut self) {
        let events = self.bus.update(&mut self.sim, &self.scenario.catalog);
        self.emit_bus(events);
    }

    // ----- strategy lifecycle -----

    fn unique_id(&self, base: &str) -> String {
        if !self.strategies.contains_key(base) {
            return base.to_owned();
        }
        (2..)
            .map(|n| format!("{base}~{n}"))
            .find(|id| !self.strategies.contains_key(id))
            .expect("unbounded")
    }

    /// A live bottleneck by id, the worst live bottleneck on an element, or
    /// a queue problem declared by the operator on any element.
    pub fn problem_for(&self, problem: &str) -> Result<Bottleneck, EngineError> {
        if let Some(b) = self.bottlenecks.iter().find(|b| b.id == problem) {
            return Ok(b.clone());
        }
        if let Some(b) = self
            .bottlenecks
            .iter()
            .find(|b| b.element.as_str() == problem)
        {
            return Ok(b.clone());
        }
        let net = &self.scenario.network;
        let pe = ProblemElement::resolve(net, problem)
            .ok_or_else(|| EngineError::UnknownProblem { id: problem.into() })?;
        let state = self.sim.state();
        let (measure, threshold) = match pe {
            ProblemElement::RoutePart(i) => {
                let rp = &net.route_parts()[i];
                let th = net
                    .policy()
                    .route_part_threshold(&rp.id)
                    .map_or(1.0, |t| t.max_travel_time_ratio);
                (Measure::TravelTimeRatio, th)
            }
            _ => {
                let th: f64 = pe
                    .observed_links(net)
                    .into_iter()
                    .filter_map(|l| {
                        net.policy()
                            .link_threshold(&net.links()[l].id)
                            .map(|t| t.max_queue)
                    })
                    .sum();
                (Measure::Queue, th)
            }
        };
        let value = measure_element(&state, net, problem, measure).unwrap_or(0.0);
        let kind = kind_for(measure);
        Ok(Bottleneck {
            id: Bottleneck::make_id(problem, kind),
            element: ElementId::new(problem),
            kind,
            severity: severity_of(measure, value, threshold),
            measure,
            value,
            threshold,
            primary_cause: None,
        })
    }

    fn build(
        &self,
        problem: &Bottleneck,
        level: StrategyLevel,
        override_gating: bool,
        services: Option<&BTreeSet<ServiceId>>,
        created_by: CreatedBy,
    ) -> Result<ControlStrategy, EngineError> {
        let mut s = self.composer.compose(
            problem,
            level,
            &self.scenario.network,
            &self.scenario.catalog,
            override_gating,
        )?;
        if let Some(keep) = services {
            for id in keep {
                if self.scenario.catalog.get(id.as_str()).is_none() {
                    return Err(EngineError::UnknownService { id: id.to_string() });
                }
            }
            s.activations.retain(|a| keep.contains(&a.service));
            if s.activations.is_empty() {
                return Err(crate::strategy::StrategyError::Unservable(level).into());
            }
        }
        s.id = self.unique_id(&s.id);
        s.created_by = created_by;
        Ok(s)
    }

    fn propose(&mut self, s: ControlStrategy, plan: Option<String>) -> Value {
        let preview = self.preview(&s);
        let payload = json!({
            "strategy": s.id,
            "level": s.level.name(),
            "problem": s.problem.id,
            "created_by": s.created_by,
            "plan": plan,
            "activations": s.activations,
            "preview": preview,
        });
        let reply = json!({"strategy": s, "preview": preview});
        self.strategies.insert(
            s.id.clone(),
            StrategyEntry {
                tracker: PreferredTracker::new(self.scenario.manifest.consecutive_ticks),
                strategy: s,
                last_evaluation: None,
                plan,
                proposal_sent: false,
            },
        );
        self.emit(EventKind::StrategyProposed, payload);
        reply
    }

    fn entry_in(
        &self,
        id: &str,
        expected: &[StrategyStatus],
    ) -> Result<&StrategyEntry, EngineError> {
        let e = self
            .strategies
            .get(id)
            .ok_or_else(|| EngineError::UnknownStrategy { id: id.into() })?;
        if !expected.contains(&e.strategy.status) {
            return Err(EngineError::WrongStatus {
                id: id.into(),
                expected: expected
                    .iter()
                    .map(|s| status_name(*s))
                    .collect::<Vec<_>>()
                    .join(" or "),
                actual: status_name(e.strategy.status).into(),
            });
        }
        Ok(e)
    }

    fn activate(&mut self, id: &str) -> Result<Value, EngineError> {
        self.entry_in(id, &[StrategyStatus::Proposed])?;
        let e = self.strategies.get_mut(id).expect("checked");
        e.strategy.status = StrategyStatus::Active;
        e.tracker.streak = 0;
        let (level, n) = (e.strategy.level, e.strategy.activations.len());
        self.emit(
            EventKind::StrategyActivated,
            json!({"strategy": id, "level": level.name(), "activations": n}),
        );
        self.regulate();
        self.sync_bus();
        Ok(self.strategy_reply(id))
    }

    fn retire(&mut self, id: &str, reason: &str, successor: Option<&str>) {
        let e = self.strategies.get_mut(id).expect("caller checked");
        e.strategy.status = StrategyStatus::Retired;
        let level = e.strategy.level;
        self.emit(
            EventKind::StrategyRetired,
            json!({"strategy": id, "level": level.name(), "reason": reason, "successor": successor}),
        );
    }

    /// Swap an active strategy for its escalated or de-escalated successor
    /// in one step, so pairs held by both stay on.
    fn replace(&mut self, id: &str, up: bool) -> Result<Value, EngineError> {
        let old = self.entry_in(id, &[StrategyStatus::Active])?.clone();
        let net = &self.scenario.network;
        let catalog = &self.scenario.catalog;
        let mut next = if up {
            self.composer.escalate(&old.strategy, net, catalog)?
        } else {
            self.composer.deescalate(&old.strategy, net, catalog)?
        };
        next.id = self.unique_id(&format!("{}@{}", next.problem.id, next.level.name()));
        next.status = StrategyStatus::Active;
        let new_id = next.id.clone();
        let (level, n) = (next.level, next.activations.len());
        self.strategies.insert(
            new_id.clone(),
            StrategyEntry {
                strategy: next,
                tracker: PreferredTracker::new(self.scenario.manifest.consecutive_ticks),
                last_evaluation: None,
                plan: old.plan.clone(),
                proposal_sent: false,
            },
        );
        self.retire(
            id,
            if up { "escalated" } else { "deescalated" },
            Some(&new_id),
        );
        self.emit(
            EventKind::StrategyActivated,
            json!({"strategy": new_id, "level": level.name(), "activations": n, "replaces": id}),
        );
        self.regulate();
        self.sync_bus();
        Ok(self.strategy_reply(&new_id))
    }

    fn strategy_reply(&self, id: &str) -> Value {
        let e = &self.strategies[id];
        let claimed: BTreeSet<Pair> = self.bus.claims_of(id);
        json!({"strategy": e.strategy, "claimed": claimed.len()})
    }

    fn check_pair(&self, service: &ServiceId, element: &ElementId) -> Result<(), EngineError> {
        let d = self.scenario.catalog.get(service.as_str()).ok_or_else(|| {
            EngineError::UnknownService {
                id: service.to_string(),
            }
        })?;
        let net = &self.scenario.network;
        let r = net
            .resolve(element.as_str())
            .ok_or_else(|| EngineError::UnknownElement {
                id: element.to_string(),
            })?;
        if !d.applicable_elements.contains(&net.element_kind_of(r)) {
            return Err(EngineError::NotApplicable {
                service: service.to_string(),
                element: element.to_string(),
            });
        }
        Ok(())
    }

    // ----- commands -----

    /// Apply one command. A request id seen before returns the stored reply.
    pub fn submit(&mut self, req: CommandRequest) -> Result<CommandReply, EngineError> {
        let fingerprint = serde_json::to_string(&req.command).expect("commands serialize");
        if let Some(id) = &req.request_id {
            if let Some((fp, reply)) = self.replies.get(id) {
                if *fp != fingerprint {
                    return Err(EngineError::RequestIdReused { id: id.clone() });
                }
                return reply.clone();
            }
        }
        let tick = self.sim.tick();
        let outcome = self.apply(&req.command);
        let logged = match &outcome {
            Ok(_) => json!({"request_id": req.request_id, "command": req.command, "ok": true}),
            Err(e) => {
                json!({"request_id": req.request_id, "command": req.command, "ok": false, "error": e.to_string()})
            }
        };
        self.sim.log_mut().push(tick, "command", logged);
        let reply = outcome.map(|result| CommandReply {
            tick: self.sim.tick(),
            seq: self.last_seq(),
            result,
        });
        if let Some(id) = req.request_id {
            self.replies.insert(id, (fingerprint, reply.clone()));
        }
        reply
    }

    fn apply(&mut self, cmd: &Command) -> Result<Value, EngineError> {
        match cmd {
            Command::Compose {
                problem,
                level,
                override_gating,
                services,
            } => {
                let b = self.problem_for(problem)?;
                let s = self.build(
                    &b,
                    *level,
                    *override_gating,
                    services.as_ref(),
                    CreatedBy::Operator,
                )?;
                Ok(self.propose(s, None))
            }
            Command::Activate { strategy } => self.activate(strategy),
            Command::Escalate { strategy } => self.replace(strategy, true),
            Command::Deescalate { strategy } => self.replace(strategy, false),
            Command::Retire { strategy } => {
                self.entry_in(
                    strategy,
                    &[StrategyStatus::Proposed, StrategyStatus::Active],
                )?;
                self.retire(strategy, "operator", None);
                self.regulate();
                self.sync_bus();
                Ok(self.strategy_reply(strategy))
            }
            Command::ForceOn {
                service,
                element,
                level,
            } => {
                self.check_pair(service, element)?;
                let d = self
                    .scenario
                    .catalog
                    .get(service.as_str())
                    .expect("checked");
                let level = level
                    .or_else(|| d.contributions.iter().next().copied())
                    .unwrap_or(StrategyLevel::InformTraffic);
                let pair = (service.clone(), element.clone());
                self.bus.clear_force_off(&pair);
                self.forced_on.insert(pair, level);
                self.regulate();
                self.sync_bus();
                Ok(
                    json!({"service": service, "element": element, "override": "force_on", "level": level.name()}),
                )
            }
            Command::ForceOff { service, element } => {
                self.check_pair(service, element)?;
                let pair = (service.clone(), element.clone());
                self.forced_on.remove(&pair);
                self.bus.force_off(pair);
                self.regulate();
                self.sync_bus();
                Ok(json!({"service": service, "element": element, "override": "force_off"}))
            }
            Command::ReleaseOverride { service, element } => {
                self.check_pair(service, element)?;
                let pair = (service.clone(), element.clone());
                self.forced_on.remove(&pair);
                self.bus.clear_force_off(&pair);
                self.regulate();
                self.sync_bus();
                Ok(json!({"service": service, "element": element, "override": null}))
            }
            Command::Decide { decision, choose } => {
                let p = self
                    .pending
                    .get(decision)
                    .ok_or_else(|| EngineError::UnknownDecision {
                        id: decision.clone(),
                    })?;
                if !p.options.contains(choose) {
                    return Err(EngineError::InvalidChoice {
                        id: decision.clone(),
                        choice: choose.clone(),
                    });
                }
                self.decisions.insert(decision.clone(), choose.clone());
                self.regulate();
                self.sync_bus();
                Ok(json!({"decision": decision, "choice": choose}))
            }
            Command::Pause => {
                self.paused = true;
                Ok(json!({"paused": true}))
            }
            Command::Resume => {
                self.paused = false;
                Ok(json!({"paused": false}))
            }
            Command::Step { ticks } => {
                for _ in 0..*ticks {
                    self.advance();
                }
                Ok(json!({"tick": self.sim.tick()}))
            }
            Command::Rate { ticks_per_second } => {
                if !(ticks_per_second.is_finite() && *ticks_per_second > 0.0) {
                    return Err(EngineError::InvalidCommand {
                        message: "ticks_per_second must be positive".into(),
                    });
                }
                self.rate = *ticks_per_second;
                Ok(json!({"ticks_per_second": self.rate}))
            }
            Command::InjectIncident { incident } => {
                self.sim.add_incident(incident.clone())?;
                Ok(json!({"incident": incident.id}))
            }
            Command::SetAutoConfirm { enabled } => {
                self.auto_confirm = *enabled;
                Ok(json!({"auto_confirm": enabled}))
            }
        }
    }

    // ----- the tick -----

    /// Observe the last completed tick, dispatch, then simulate one tick.
    pub fn advance(&mut self) {
        let state = self.sim.state();
        self.detect(&state);
        self.run_plans(&state);
        self.track_preferred(&state);
        self.sync_bus();
        self.sim.step();
        let t = self.sim.tick();
        if self.options.snapshot_every > 0 && t.is_multiple_of(self.options.snapshot_every) {
            let payload = self.snapshot_payload();
            self.emit(EventKind::StateSnapshot, payload);
        }
        if self.options.kpi_every > 0 && t.is_multiple_of(self.options.kpi_every) {
            self.kpi.update(self.sim.log());
            let payload = serde_json::to_value(self.kpi.report()).expect("kpis serialize");
            self.emit(EventKind::KpiUpdate, payload);
        }
    }

    /// Advance until the simulation clock reaches `tick`.
    pub fn run_until(&mut self, tick: u64) {
        while self.sim.tick() < tick {
            self.advance();
        }
    }

    fn detect(&mut self, state: &TrafficState) {
        let found = detect_bottlenecks(state, &self.scenario.network);
        let known: BTreeSet<&str> = self.bottlenecks.iter().map(|b| b.id.as_str()).collect();
        let fresh: Vec<Bottleneck> = found
            .iter()
            .filter(|b| !known.contains(b.id.as_str()))
            .cloned()
            .collect();
        self.bottlenecks = found;
        for b in fresh {
            self.emit(EventKind::BottleneckDetected, json!({"bottleneck": b}));
        }
    }

    fn run_plans(&mut self, state: &TrafficState) {
        let firings = self.plans.evaluate(state, &self.scenario.network);
        for f in firings {
            for action in &f.actions {
                match action {
                    PlanAction::Manual(prompt) => {
                        self.emit(
                            EventKind::StrategyProposed,
                            json!({"plan": f.plan, "prompt": prompt, "trigger": f.trigger.to_string(), "value": f.value}),
                        );
                    }
                    PlanAction::Auto(StrategyTemplate {
                        level,
                        services,
                        override_gating,
                    }) => {
                        let problem = problem_from_trigger(&f.trigger, f.value);
                        match self.build(
                            &problem,
                            *level,
                            *override_gating,
                            services.as_ref(),
                            CreatedBy::Automatic,
                        ) {
                            Ok(s) => {
                                let id = s.id.clone();
                                self.propose(s, Some(f.plan.clone()));
                                if self.auto_confirm {
                                    let _ = self.activate(&id);
                                }
                            }
                            Err(e) => {
                                let tick = self.sim.tick();
                                self.sim.log_mut().push(
                                    tick,
                                    "plan_failed",
                                    json!({"plan": f.plan, "error": e.to_string()}),
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    /// Met targets produce a proposal to step down (or retire at the lowest
    /// level); nothing is changed without a command.
    fn track_preferred(&mut self, state: &TrafficState) {
        let net = self.scenario.network.clone();
        let mut proposals = Vec::new();
        for (id, e) in self.strategies.iter_mut() {
            if e.strategy.status != StrategyStatus::Active {
                continue;
            }
            let p = &e.strategy.preferred_situation;
            let value = measure_element(state, &net, p.element.as_str(), p.measure);
            let eval = e.tracker.observe(p, value);
            e.last_evaluation = Some(eval);
            match eval {
                Evaluation::Met if !e.proposal_sent => {
                    e.proposal_sent = true;
                    let proposal = match e.strategy.level.previous() {
                        Some(prev) => {
                            json!({"strategy": id, "proposal": "deescalate", "level": e.strategy.level.name(), "to_level": prev.name()})
                        }
                        None => {
                            json!({"strategy": id, "proposal": "retire", "level": e.strategy.level.name()})
                        }
                    };
                    proposals.push(proposal);
                }
                Evaluation::NotMet { .. } => e.proposal_sent = false,
                Evaluation::Met => {}
            }
        }
        for p in proposals {
            self.emit(EventKind::StrategyProposed, p);
        }
    }
}
