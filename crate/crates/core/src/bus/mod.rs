//! Activation dispatch: operator to service providers to end users.
//!
//! The bus keeps one lifecycle per `(service, element)` pair. Strategies
//! claim pairs; a pair is desired while at least one claim holds it, and the
//! bus issues an activation or deactivation message whenever the desired set
//! changes. Directly controlled services take effect at the tick the message
//! is issued. Services reached through providers take effect once every
//! subscribing gateway has forwarded the message, i.e. after the largest
//! gateway latency.

mod effects;

pub use effects::{
    apply_effects, physical_conflicts, Effect, EffectContext, EffectError, EffectModel,
    EffectRegistry, EffectResolver, EffectSpec, EffectsDocument, EFFECTS_SCHEMA_VERSION,
};

use crate::catalog::{Catalog, ControlMode, EndUserType, StrategyLevel};
use crate::ids::{ElementId, ServiceId};
use crate::network::RoadNetwork;
use crate::rng::{CounterRng, Stream};
use crate::sim::{RuleSource, Simulation};
use crate::strategy::{decision_id, Activation, DecisionReason, PendingDecision};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub type Pair = (ServiceId, ElementId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationAction {
    Activate,
    Deactivate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationMessage {
    pub id: u64,
    /// First claimant, if the change came from a strategy.
    pub strategy: Option<String>,
    pub service: ServiceId,
    pub element: ElementId,
    pub action: ActivationAction,
    pub issued_tick: u64,
    pub control_mode: ControlMode,
    pub level: StrategyLevel,
}

/// A service provider's distribution channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gateway {
    pub id: String,
    pub services: BTreeSet<ServiceId>,
    /// ticks
    #[serde(default)]
    pub latency: u64,
    #[serde(default)]
    pub drop_probability: f64,
    /// End-user types reached; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subscribers: Option<BTreeSet<EndUserType>>,
}

impl Gateway {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..1.0).contains(&self.drop_probability) {
            errs.push(format!(
                "gateway {}: drop_probability outside [0, 1)",
                self.id
            ));
        }
        errs
    }

    fn reaches(&self, t: EndUserType) -> bool {
        self.subscribers.as_ref().is_none_or(|s| s.contains(&t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dispatched,
    Forwarded,
    Delivered,
    Dropped,
    DeadLetter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub message: u64,
    pub tick: u64,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateway: Option<String>,
    /// Agents reached (delivered) or lost (dropped).
    #[serde(default)]
    pub agents: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceStatus {
    Inactive,
    Pending,
    Active,
}

#[derive(Clone, Debug, PartialEq)]
struct InFlight {
    message: u64,
    action: ActivationAction,
    due: u64,
}

#[derive(Clone, Debug, PartialEq)]
struct Lifecycle {
    level: StrategyLevel,
    mode: ControlMode,
    /// Live effect and the message that carried it.
    live: Option<(u64, Effect)>,
    /// Effect waiting for its activation to arrive.
    staged: Option<Effect>,
    in_flight: Option<InFlight>,
    /// Last activation was dead-lettered: on as far as the operator is
    /// concerned, off for end users.
    dead: bool,
}

impl Lifecycle {
    fn status(&self) -> ServiceStatus {
        match (&self.in_flight, &self.live) {
            (Some(_), _) => ServiceStatus::Pending,
            (None, Some(_)) => ServiceStatus::Active,
            (None, None) => ServiceStatus::Inactive,
        }
    }

    /// Whether the pair is active or on its way to being active.
    fn heading_on(&self) -> bool {
        match &self.in_flight {
            Some(f) => f.action == ActivationAction::Activate,
            None => self.live.is_some() || self.dead,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Claim {
    level: StrategyLevel,
    problem: String,
}

/// Something the bus did, for the run log.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum BusEvent {
    Message(ActivationMessage),
    Delivery(DeliveryRecord),
    Status {
        service: ServiceId,
        element: ElementId,
        status: ServiceStatus,
    },
}

impl BusEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            BusEvent::Message(_) => "activation_message",
            BusEvent::Delivery(_) => "delivery",
            BusEvent::Status { .. } => "service_status",
        }
    }
}

/// A live effect and where it came from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LiveEffect {
    pub service: ServiceId,
    pub element: ElementId,
    pub level: StrategyLevel,
    pub message: u64,
    pub effect: Effect,
}

pub struct ActivationBus {
    gateways: Vec<Gateway>,
    model: EffectModel,
    rng: CounterRng,
    claims: BTreeMap<String, BTreeMap<Pair, Claim>>,
    forced_off: BTreeSet<Pair>,
    lifecycles: BTreeMap<Pair, Lifecycle>,
    next_message: u64,
    messages: Vec<ActivationMessage>,
    deliveries: Vec<DeliveryRecord>,
}

impl ActivationBus {
    pub fn new(mut gateways: Vec<Gateway>, model: EffectModel, seed: u64) -> Self {
        gateways.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            gateways,
            model,
            rng: CounterRng::new(seed),
            claims: BTreeMap::new(),
            forced_off: BTreeSet::new(),
            lifecycles: BTreeMap::new(),
            next_message: 1,
            messages: Vec::new(),
            deliveries: Vec::new(),
        }
    }

    pub fn gateways(&self) -> &[Gateway] {
        &self.gateways
    }

    pub fn model(&self) -> &EffectModel {
        &self.model
    }

    pub fn messages(&self) -> &[ActivationMessage] {
        &self.messages
    }

    pub fn deliveries(&self) -> &[DeliveryRecord] {
        &self.deliveries
    }

    /// Replace everything `owner` holds. `problem` names the problem element
    /// the effects are placed against.
    pub fn claim(&mut self, owner: &str, problem: &str, activations: &BTreeSet<Activation>) {
        let held = activations
            .iter()
            .map(|a| {
                (
                    (a.service.clone(), a.element.clone()),
                    Claim {
                        level: a.level,
                        problem: problem.to_owned(),
                    },
                )
            })
            .collect::<BTreeMap<_, _>>();
        if held.is_empty() {
            self.claims.remove(owner);
        } else {
            self.claims.insert(owner.to_owned(), held);
        }
    }

    pub fn release(&mut self, owner: &str) {
        self.claims.remove(owner);
    }

    pub fn claims_of(&self, owner: &str) -> BTreeSet<Pair> {
        self.claims
            .get(owner)
            .map(|c| c.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Keep a pair off whatever strategies ask for.
    pub fn force_off(&mut self, pair: Pair) {
        self.forced_off.insert(pair);
    }

    pub fn clear_force_off(&mut self, pair: &Pair) {
        self.forced_off.remove(pair);
    }

    pub fn forced_off(&self) -> &BTreeSet<Pair> {
        &self.forced_off
    }

    /// Number of claims holding each desired pair.
    pub fn reference_counts(&self) -> BTreeMap<Pair, usize> {
        let mut out = BTreeMap::new();
        for held in self.claims.values() {
            for p in held.keys() {
                if !self.forced_off.contains(p) {
                    *out.entry(p.clone()).or_insert(0) += 1;
                }
            }
        }
        out
    }

    /// Desired pairs with the lowest claimed level, the first claimant and
    /// its problem.
    fn desired(&self) -> BTreeMap<Pair, (StrategyLevel, String, String)> {
        let mut out: BTreeMap<Pair, (StrategyLevel, String, String)> = BTreeMap::new();
        for (owner, held) in &self.claims {
            for (p, c) in held {
                if self.forced_off.contains(p) {
                    continue;
                }
                out.entry(p.clone())
                    .and_modify(|e| e.0 = e.0.min(c.level))
                    .or_insert((c.level, owner.clone(), c.problem.clone()));
            }
        }
        out
    }

    pub fn status(&self, service: &str, element: &str) -> ServiceStatus {
        self.lifecycles
            .iter()
            .find(|((s, e), _)| s.as_str() == service && e.as_str() == element)
            .map(|(_, l)| l.status())
            .unwrap_or(ServiceStatus::Inactive)
    }

    pub fn statuses(&self) -> BTreeMap<Pair, ServiceStatus> {
        self.lifecycles
            .iter()
            .map(|(p, l)| (p.clone(), l.status()))
            .collect()
    }

    pub fn effective(&self) -> Vec<LiveEffect> {
        self.lifecycles
            .iter()
            .filter_map(|((s, e), l)| {
                l.live.as_ref().map(|(m, eff)| LiveEffect {
                    service: s.clone(),
                    element: e.clone(),
                    level: l.level,
                    message: *m,
                    effect: eff.clone(),
                })
            })
            .collect()
    }

    fn subscribing(&self, service: &ServiceId) -> impl Iterator<Item = &Gateway> + '_ {
        let service = service.clone();
        self.gateways
            .iter()
            .filter(move |g| g.services.contains(&service))
    }

    fn latency_ticks(&self, service: &ServiceId) -> Option<u64> {
        self.subscribing(service).map(|g| g.latency).max()
    }

    /// Issue messages for every change of the desired set, deliver whatever
    /// is due and install the resulting control parameters.
    pub fn update(&mut self, sim: &mut Simulation, catalog: &Catalog) -> Vec<BusEvent> {
        let tick = sim.tick();
        let net = sim.network().clone();
        let mut events = Vec::new();
        let desired = self.desired();

        let current: Vec<Pair> = self
            .lifecycles
            .iter()
            .filter(|(_, l)| l.heading_on())
            .map(|(p, _)| p.clone())
            .collect();
        for p in current {
            if !desired.contains_key(&p) {
                self.issue(
                    &net,
                    catalog,
                    tick,
                    &p,
                    ActivationAction::Deactivate,
                    None,
                    &mut events,
                );
            }
        }
        for (p, (level, owner, problem)) in &desired {
            let on = self.lifecycles.get(p).is_some_and(Lifecycle::heading_on);
            if !on {
                self.issue(
                    &net,
                    catalog,
                    tick,
                    p,
                    ActivationAction::Activate,
                    Some((*level, owner.clone(), problem.clone())),
                    &mut events,
                );
            } else if let Some(l) = self.lifecycles.get_mut(p) {
                l.level = *level;
            }
        }
        self.deliver(sim, tick, &mut events);
        let links = net.links().len();
        let params = apply_effects(
            links,
            self.lifecycles.iter().filter_map(|((s, _), l)| {
                l.live.as_ref().map(|(m, e)| {
                    (
                        e,
                        RuleSource {
                            service: s.clone(),
                            message: *m,
                            mediated: l.mode == ControlMode::ViaServiceProvider,
                        },
                    )
                })
            }),
        );
        if !params.bit_identical(sim.control()) {
            sim.set_control(params);
        }
        events
    }

    #[allow(clippy::too_many_arguments)]
    fn issue(
        &mut self,
        net: &RoadNetwork,
        catalog: &Catalog,
        tick: u64,
        pair: &Pair,
        action: ActivationAction,
        want: Option<(StrategyLevel, String, String)>,
        events: &mut Vec<BusEvent>,
    ) {
        let mode = catalog
            .get(pair.0.as_str())
            .map(|d| d.control_mode)
            .unwrap_or(ControlMode::ViaServiceProvider);
        let id = self.next_message;
        self.next_message += 1;
        let (level, strategy) = match &want {
            Some((l, o, _)) => (*l, Some(o.clone())),
            None => (
                self.lifecycles
                    .get(pair)
                    .map_or(StrategyLevel::InformTraffic, |l| l.level),
                None,
            ),
        };
        let staged = want.as_ref().map(|(l, _, problem)| {
            self.model
                .resolve(net, catalog, &pair.0, &pair.1, *l, problem)
                .unwrap_or(Effect::InformOnly)
        });
        let msg = ActivationMessage {
            id,
            strategy,
            service: pair.0.clone(),
            element: pair.1.clone(),
            action,
            issued_tick: tick,
            control_mode: mode,
            level,
        };
        self.messages.push(msg.clone());
        events.push(BusEvent::Message(msg));
        self.record(events, id, tick, Stage::Dispatched, None, 0);

        let due = match mode {
            ControlMode::DirectOperatorControl => Some(tick),
            ControlMode::ViaServiceProvider => self.latency_ticks(&pair.0).map(|d| tick + d),
        };
        let l = self.lifecycles.entry(pair.clone()).or_insert(Lifecycle {
            level,
            mode,
            live: None,
            staged: None,
            in_flight: None,
            dead: false,
        });
        l.level = level;
        l.mode = mode;
        let before = l.status();
        l.dead = false;
        match due {
            Some(due) => {
                l.staged = staged;
                l.in_flight = Some(InFlight {
                    message: id,
                    action,
                    due,
                });
            }
            None => {
                // nobody carries this service: nothing reaches end users
                l.in_flight = None;
                l.staged = None;
                l.dead = action == ActivationAction::Activate;
                if !l.dead {
                    l.live = None;
                }
                self.record(events, id, tick, Stage::DeadLetter, None, 0);
            }
        }
        let after = self.lifecycles[pair].status();
        if after != before {
            events.push(BusEvent::Status {
                service: pair.0.clone(),
                element: pair.1.clone(),
                status: after,
            });
        }
    }

    fn deliver(&mut self, sim: &mut Simulation, tick: u64, events: &mut Vec<BusEvent>) {
        let due: Vec<Pair> = self
            .lifecycles
            .iter()
            .filter(|(_, l)| l.in_flight.as_ref().is_some_and(|f| f.due <= tick))
            .map(|(p, _)| p.clone())
            .collect();
        for p in due {
            let l = self.lifecycles.get_mut(&p).expect("listed above");
            let f = l.in_flight.take().expect("filtered on in_flight");
            let mode = l.mode;
            match f.action {
                ActivationAction::Activate => {
                    l.live = Some((f.message, l.staged.take().unwrap_or(Effect::InformOnly)));
                }
                ActivationAction::Deactivate => {
                    l.live = None;
                }
            }
            let status = l.status();
            if mode == ControlMode::ViaServiceProvider {
                self.forward(sim, &p.0, f.message, f.action, tick, events);
            }
            events.push(BusEvent::Status {
                service: p.0.clone(),
                element: p.1.clone(),
                status,
            });
        }
    }

    /// Forward a message through every subscribing gateway and, for
    /// activations, notify each subscribed end user through the first
    /// gateway reaching them.
    fn forward(
        &mut self,
        sim: &mut Simulation,
        service: &ServiceId,
        message: u64,
        action: ActivationAction,
        tick: u64,
        events: &mut Vec<BusEvent>,
    ) {
        let gws: Vec<Gateway> = self.subscribing(service).cloned().collect();
        let mut delivered = vec![0u64; gws.len()];
        let mut dropped = vec![0u64; gws.len()];
        if action == ActivationAction::Activate {
            let targets: Vec<(crate::ids::AgentId, EndUserType)> = sim
                .agents()
                .iter()
                .filter(|a| a.subscribed_services.contains(service))
                .map(|a| (a.id, a.user_type))
                .collect();
            for (agent, t) in targets {
                let Some(gi) = gws.iter().position(|g| g.reaches(t)) else {
                    continue;
                };
                if self.rng.chance(
                    gws[gi].drop_probability,
                    Stream::Drop,
                    u64::from(agent.0),
                    message,
                ) {
                    dropped[gi] += 1;
                } else {
                    delivered[gi] += 1;
                    sim.notify(agent, message);
                }
            }
        }
        for (gi, g) in gws.iter().enumerate() {
            let gw = Some(g.id.clone());
            self.record(events, message, tick, Stage::Forwarded, gw.clone(), 0);
            if action == ActivationAction::Activate {
                self.record(
                    events,
                    message,
                    tick,
                    Stage::Delivered,
                    gw.clone(),
                    delivered[gi],
                );
                if dropped[gi] > 0 {
                    self.record(events, message, tick, Stage::Dropped, gw, dropped[gi]);
                }
            }
        }
    }

    fn record(
        &mut self,
        events: &mut Vec<BusEvent>,
        message: u64,
        tick: u64,
        stage: Stage,
        gateway: Option<String>,
        agents: u64,
    ) {
        let r = DeliveryRecord {
            message,
            tick,
            stage,
            gateway,
            agents,
        };
        self.deliveries.push(r.clone());
        events.push(BusEvent::Delivery(r));
    }

    /// Effects a set of activations would have, keyed by activation.
    pub fn preview(
        &self,
        net: &RoadNetwork,
        catalog: &Catalog,
        problem: &str,
        activations: &BTreeSet<Activation>,
    ) -> BTreeMap<Activation, Effect> {
        activations
            .iter()
            .map(|a| {
                let e = self
                    .model
                    .resolve(net, catalog, &a.service, &a.element, a.level, problem)
                    .unwrap_or(Effect::InformOnly);
                (a.clone(), e)
            })
            .collect()
    }
}

/// Withhold activations whose effects clash physically unless the operator
/// has already chosen between them. Returns `(kept, suppressed, pending)`.
pub fn regulate_physical(
    net: &RoadNetwork,
    effects: &BTreeMap<Activation, Effect>,
    decisions: &BTreeMap<String, String>,
) -> (
    BTreeSet<Activation>,
    BTreeSet<Activation>,
    Vec<PendingDecision>,
) {
    let acts: Vec<&Activation> = effects.keys().collect();
    let effs: Vec<&Effect> = effects.values().collect();
    let mut kept: BTreeSet<Activation> = effects.keys().cloned().collect();
    let mut suppressed = BTreeSet::new();
    let mut pending: Vec<PendingDecision> = Vec::new();
    for (i, j, scope) in physical_conflicts(net, &effs) {
        let (a, b) = (acts[i], acts[j]);
        let (la, lb) = (a.to_string(), b.to_string());
        let id = decision_id(&la, &lb, &scope);
        match decisions.get(&id) {
            Some(c) if *c == la => {
                kept.remove(b);
                suppressed.insert(b.clone());
            }
            Some(c) if *c == lb => {
                kept.remove(a);
                suppressed.insert(a.clone());
            }
            _ => {
                kept.remove(a);
                kept.remove(b);
                if pending.iter().any(|p| p.id == id) {
                    continue;
                }
                let mut options = vec![la, lb];
                options.sort();
                pending.push(PendingDecision {
                    id,
                    options,
                    scope,
                    reason: DecisionReason::PhysicalEffect,
                    withheld: [a.clone(), b.clone()].into_iter().collect(),
                });
            }
        }
    }
    (kept, suppressed, pending)
}
