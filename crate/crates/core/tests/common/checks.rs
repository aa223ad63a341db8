//! Property bodies shared by the property tests and the acceptance run.
//! Each returns what it checked plus every violation found.

use dtm_core::bus::{
    ActivationBus, Effect, EffectModel, EffectsDocument, Gateway, ServiceStatus, Stage,
};
use dtm_core::catalog::{Catalog, ConflictRule, ControlMode, Resolution, StrategyLevel};
use dtm_core::network::{ElementRef, RoadNetwork};
use dtm_core::scenario::{load_bundled, GENERIC_CATALOG};
use dtm_core::sim::{
    Bottleneck, BottleneckKind, ControlParams, DemandProfile, Measure, SimConfig, Simulation,
};
use dtm_core::strategy::{in_scope, resolve_conflicts, Activation, Composer, StrategyError};
use dtm_core::ElementId;
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// Both shipped catalogs.
pub fn catalogs() -> Vec<Catalog> {
    vec![
        Catalog::from_json(GENERIC_CATALOG).unwrap(),
        load_bundled("thessaloniki").unwrap().catalog,
    ]
}

/// Every link and route part as a problem.
pub fn problems(net: &RoadNetwork) -> Vec<Bottleneck> {
    let links = net
        .links()
        .iter()
        .map(|l| (l.id.to_string(), BottleneckKind::QueueSpill, Measure::Queue));
    let rps = net.route_parts().iter().map(|r| {
        (
            r.id.to_string(),
            BottleneckKind::TravelTimeExcess,
            Measure::TravelTimeRatio,
        )
    });
    links
        .chain(rps)
        .map(|(id, kind, measure)| Bottleneck {
            id: Bottleneck::make_id(&id, kind),
            element: ElementId::new(id),
            kind,
            severity: 2.0,
            measure,
            value: 2.0,
            threshold: 1.0,
            primary_cause: None,
        })
        .collect()
}

/// Default scoping, the local outflow variant, and a one-hop horizon.
pub fn composers() -> Vec<Composer> {
    let mut local = Composer::default();
    local.registry.select("enlarge_outflow_local").unwrap();
    vec![
        Composer::default(),
        local,
        Composer {
            horizon: 1,
            ..Composer::default()
        },
    ]
}

/// Activations for one problem; unservable counts as empty.
pub fn compose(
    c: &Composer,
    p: &Bottleneck,
    l: StrategyLevel,
    net: &RoadNetwork,
    cat: &Catalog,
    ov: bool,
) -> BTreeSet<Activation> {
    match c.activations(p, l, net, cat, ov) {
        Ok(a) => a,
        Err(StrategyError::Unservable(_)) => BTreeSet::new(),
        Err(e) => panic!("{e}"),
    }
}

#[derive(Debug, Default)]
pub struct CompositionTally {
    /// composed strategies
    pub strategies: usize,
    pub activations: usize,
    /// level k not contained in level k+1
    pub monotone: Vec<String>,
    /// activation on an element kind the service does not apply to
    pub applicability: Vec<String>,
    /// non-operational service composed without override
    pub gating: Vec<String>,
}

impl CompositionTally {
    pub fn absorb(&mut self, o: CompositionTally) {
        self.strategies += o.strategies;
        self.activations += o.activations;
        self.monotone.extend(o.monotone);
        self.applicability.extend(o.applicability);
        self.gating.extend(o.gating);
    }
}

/// Compose every level for every problem, catalog, composer and override
/// setting on `net`.
pub fn composition(net: &RoadNetwork) -> CompositionTally {
    let mut t = CompositionTally::default();
    for cat in catalogs() {
        for c in composers() {
            for p in problems(net) {
                for ov in [false, true] {
                    let mut prev = BTreeSet::new();
                    for l in StrategyLevel::ALL {
                        let acts = compose(&c, &p, l, net, &cat, ov);
                        t.strategies += 1;
                        t.activations += acts.len();
                        if !prev.is_subset(&acts) {
                            t.monotone.push(format!(
                                "{} {l}: lost {:?}",
                                p.id,
                                prev.difference(&acts).collect::<Vec<_>>()
                            ));
                        }
                        for a in &acts {
                            let d = cat.get(a.service.as_str()).unwrap();
                            let kind = net.element_kind(a.element.as_str()).unwrap();
                            let contributes =
                                a.level <= l && (d.contributions.contains(&a.level) || d.indirect);
                            if !d.applicable_elements.contains(&kind) || !contributes {
                                t.applicability.push(format!("{a} on {kind:?} at {l}"));
                            }
                            if !ov && (!d.is_operational() || a.service.as_str() == "EBL") {
                                t.gating.push(format!("{a} composed without override"));
                            }
                        }
                        prev = acts;
                    }
                }
            }
        }
    }
    t
}

pub type RuleSeed = (usize, usize, prop::sample::Index, u8);
pub type Answer = (prop::sample::Index, u8);

/// Extra conflict rules and a sequence of operator answers.
pub fn regulation_inputs() -> impl Strategy<Value = (Vec<RuleSeed>, Vec<Answer>)> {
    (
        prop::collection::vec(
            (0usize..6, 0usize..6, any::<prop::sample::Index>(), 0u8..3),
            0..4,
        ),
        prop::collection::vec((any::<prop::sample::Index>(), 0u8..3), 0..12),
    )
}

/// Regulate everything reroute composes on `net` under the generic rules
/// plus `extra`, feeding answers that arrive in any order, repeat, change
/// or name neither option. Returns the number of regulated sets checked.
pub fn regulation(
    net: &RoadNetwork,
    extra: &[RuleSeed],
    answers: &[Answer],
) -> Result<usize, String> {
    let base = Catalog::from_json(GENERIC_CATALOG).unwrap();
    let pool = ["IVS_ROUTE", "MTTA", "MPA", "UPA", "METERING", "FI"];
    let elements: Vec<String> = (0..net.nodes().len())
        .map(ElementRef::Node)
        .chain((0..net.links().len()).map(ElementRef::Link))
        .map(|r| net.element_id(r).to_string())
        .collect();
    let mut rules = base.conflict_rules().to_vec();
    for (a, b, scope, res) in extra {
        if a == b {
            continue;
        }
        let scope = if scope.index(elements.len() + 1) == elements.len() {
            "*".to_owned()
        } else {
            elements[scope.index(elements.len())].clone()
        };
        let resolution = [
            Resolution::PreferA,
            Resolution::PreferB,
            Resolution::OperatorDecides,
        ][*res as usize];
        let (sa, sb) = (pool[*a], pool[*b]);
        let taken = rules.iter().any(|r| {
            let pair = (r.service_a.as_str(), r.service_b.as_str());
            r.scope == scope && (pair == (sa, sb) || pair == (sb, sa))
        });
        if taken {
            continue;
        }
        rules.push(ConflictRule {
            service_a: sa.into(),
            service_b: sb.into(),
            scope,
            resolution,
        });
    }
    let cat = Catalog::new("t", base.services().cloned().collect(), rules.clone()).unwrap();
    let c = Composer::default();
    let mut proposed = BTreeSet::new();
    for p in problems(net) {
        proposed.extend(compose(
            &c,
            &p,
            StrategyLevel::RerouteTraffic,
            net,
            &cat,
            true,
        ));
    }
    let check = |decisions: &BTreeMap<String, String>| -> Result<Vec<String>, String> {
        let r = resolve_conflicts(&proposed, &cat, net, decisions);
        if r.kept.len() + r.withheld.len() + r.suppressed.len() != proposed.len() {
            return Err("regulation lost or duplicated activations".into());
        }
        for rule in &rules {
            let side = |svc: &str| {
                r.kept.iter().any(|a| {
                    a.service.as_str() == svc && in_scope(net, &rule.scope, a.element.as_str())
                })
            };
            if side(rule.service_a.as_str()) && side(rule.service_b.as_str()) {
                return Err(format!("{rule:?} keeps both sides"));
            }
        }
        for d in &r.pending {
            if decisions.get(&d.id).is_some_and(|c| d.options.contains(c)) {
                return Err(format!("{} answered but still pending", d.id));
            }
            if !d.withheld.is_subset(&r.withheld) {
                return Err(format!("{} withholds outside the withheld set", d.id));
            }
        }
        Ok(r.pending.iter().map(|d| d.id.clone()).collect())
    };
    let mut decisions: BTreeMap<String, String> = BTreeMap::new();
    let mut open = check(&decisions)?;
    let mut checked = 1;
    for (pick, choice) in answers {
        if open.is_empty() {
            break;
        }
        let id = open[pick.index(open.len())].clone();
        let parts: Vec<&str> = id.split(':').collect();
        let answer = match choice {
            0 => parts[1],
            1 => parts[2],
            _ => "neither",
        }
        .to_owned();
        decisions.insert(id, answer);
        let now = check(&decisions)?;
        checked += 1;
        // answered decisions stay open to a change of mind
        let ids: BTreeSet<String> = now.into_iter().chain(decisions.keys().cloned()).collect();
        open = ids.into_iter().collect();
    }
    Ok(checked)
}

// ----- effects -----

pub struct Setup {
    pub name: &'static str,
    pub net: Arc<RoadNetwork>,
    pub catalog: Catalog,
    pub effects: EffectsDocument,
    pub gateways: Vec<Gateway>,
    pub demand: DemandProfile,
    pub config: SimConfig,
}

/// Every shipped catalog on a shipped network with its effect table.
pub fn setups() -> Vec<Setup> {
    let mut out = Vec::new();
    for name in ["diamond", "thessaloniki"] {
        let sc = load_bundled(name).unwrap();
        out.push(Setup {
            name,
            net: sc.network.clone(),
            catalog: sc.catalog.clone(),
            effects: sc.effects.clone(),
            gateways: sc.manifest.gateways.clone(),
            demand: sc.demand.clone(),
            config: sc.manifest.sim.clone(),
        });
    }
    let site = load_bundled("thessaloniki").unwrap();
    let generic = Catalog::from_json(GENERIC_CATALOG).unwrap();
    let mut gw = site.manifest.gateways[0].clone();
    gw.services = generic.services().map(|s| s.id.clone()).collect();
    out.push(Setup {
        name: "generic",
        net: site.network.clone(),
        catalog: generic,
        effects: site.effects.clone(),
        gateways: vec![gw],
        demand: site.demand.clone(),
        config: site.manifest.sim.clone(),
    });
    out
}

pub fn elements(net: &RoadNetwork) -> Vec<ElementRef> {
    (0..net.nodes().len())
        .map(ElementRef::Node)
        .chain((0..net.links().len()).map(ElementRef::Link))
        .chain((0..net.control_segments().len()).map(ElementRef::Segment))
        .collect()
}

/// Every (service, element, level) the catalog allows on the network.
pub fn placements(s: &Setup) -> Vec<Activation> {
    let mut out = Vec::new();
    for d in s.catalog.services() {
        for r in elements(&s.net) {
            if !d.applicable_elements.contains(&s.net.element_kind_of(r)) {
                continue;
            }
            for l in StrategyLevel::ALL {
                out.push(Activation::new(d.id.clone(), s.net.element_id(r), l));
            }
        }
    }
    out
}

pub fn empty_sim(s: &Setup) -> Simulation {
    Simulation::new(
        s.net.clone(),
        &DemandProfile::default(),
        &s.catalog,
        s.config.clone(),
        1,
    )
    .unwrap()
}

pub fn bus(s: &Setup) -> ActivationBus {
    ActivationBus::new(
        s.gateways.clone(),
        EffectModel::new(s.effects.clone(), 2),
        1,
    )
}

pub fn settle(bus: &mut ActivationBus, sim: &mut Simulation, cat: &Catalog, ticks: u64) {
    for _ in 0..ticks {
        bus.update(sim, cat);
        sim.step();
    }
}

pub fn max_latency(s: &Setup) -> u64 {
    s.gateways.iter().map(|g| g.latency).max().unwrap_or(0)
}

#[derive(Debug, Default)]
pub struct ReversibilityTally {
    /// (setup, placements, placements that changed any parameter)
    pub setups: Vec<(&'static str, usize, usize)>,
    pub violations: Vec<String>,
}

/// Claim each placement alone through the bus, wait until it is active,
/// release it and wait until it is gone; parameters must be neutral again.
pub fn reversibility() -> ReversibilityTally {
    let mut t = ReversibilityTally::default();
    for s in setups() {
        let neutral = ControlParams::neutral(s.net.links().len());
        let wait = max_latency(&s) + 2;
        let all = placements(&s);
        let mut changed = 0;
        for a in &all {
            let mut sim = empty_sim(&s);
            let mut b = bus(&s);
            b.claim("t", a.element.as_str(), &BTreeSet::from([a.clone()]));
            settle(&mut b, &mut sim, &s.catalog, wait);
            if !sim.control().bit_identical(&neutral) {
                changed += 1;
            }
            b.release("t");
            settle(&mut b, &mut sim, &s.catalog, wait);
            if !sim.control().bit_identical(&neutral) {
                t.violations.push(format!(
                    "{}: {a} at {:?} left parameters changed",
                    s.name, a.level
                ));
            }
            if !b.effective().is_empty()
                || b.status(a.service.as_str(), a.element.as_str()) != ServiceStatus::Inactive
            {
                t.violations
                    .push(format!("{}: {a} still active after release", s.name));
            }
        }
        if changed == 0 {
            t.violations
                .push(format!("{}: no placement had any effect", s.name));
        }
        t.setups.push((s.name, all.len(), changed));
    }
    t
}

/// Every green-split shift the shipped effects resolve to keeps the node's
/// total capacity within one vehicle per hour. Returns shifts checked.
pub fn green_split_conservation() -> Result<usize, String> {
    let mut seen = 0;
    for s in setups() {
        let model = EffectModel::new(s.effects.clone(), 2);
        let problems: Vec<String> = (0..s.net.links().len())
            .map(|l| s.net.element_id(ElementRef::Link(l)).to_string())
            .collect();
        for a in placements(&s) {
            for problem in &problems {
                let Ok(e) =
                    model.resolve(&s.net, &s.catalog, &a.service, &a.element, a.level, problem)
                else {
                    continue;
                };
                if let Effect::GreenSplitShift {
                    approaches,
                    others,
                    raise,
                    lower,
                    ..
                } = &e
                {
                    seen += 1;
                    let cap = |l: usize| s.net.links()[l].capacity;
                    let before: f64 = approaches.iter().chain(others).map(|&l| cap(l)).sum();
                    let after: f64 = approaches.iter().map(|&l| cap(l) * raise).sum::<f64>()
                        + others.iter().map(|&l| cap(l) * lower).sum::<f64>();
                    if (before - after).abs() > 1.0 {
                        return Err(format!("{}: {a} moves {before} to {after}", s.name));
                    }
                }
            }
        }
    }
    if seen == 0 {
        return Err("no green-split shift resolved".into());
    }
    Ok(seen)
}

#[derive(Debug, Default)]
pub struct LatencyTally {
    pub direct: usize,
    pub mediated: usize,
    pub dead_lettered: usize,
    pub violations: Vec<String>,
}

/// Claim every placement at the outflow level three ticks in and record the
/// first tick its pair reports Active. Direct control is active at the issue
/// tick; mediated services exactly one gateway latency later, never earlier;
/// with no gateway they never activate.
pub fn latency_contract() -> LatencyTally {
    let mut t = LatencyTally::default();
    for s in setups() {
        for a in placements(&s)
            .into_iter()
            .filter(|a| a.level == StrategyLevel::EnlargeOutflow)
        {
            let mode = s.catalog.get(a.service.as_str()).unwrap().control_mode;
            let latency = s
                .gateways
                .iter()
                .filter(|g| g.services.contains(&a.service))
                .map(|g| g.latency)
                .max();
            let mut sim = empty_sim(&s);
            let mut b = bus(&s);
            for _ in 0..3 {
                sim.step();
            }
            let issued = sim.tick();
            b.claim("t", a.element.as_str(), &BTreeSet::from([a.clone()]));
            let mut active_at = None;
            for _ in 0..10 {
                b.update(&mut sim, &s.catalog);
                if active_at.is_none()
                    && b.status(a.service.as_str(), a.element.as_str()) == ServiceStatus::Active
                {
                    active_at = Some(sim.tick());
                }
                sim.step();
            }
            let expect = match (mode, latency) {
                (ControlMode::DirectOperatorControl, _) => {
                    t.direct += 1;
                    Some(issued)
                }
                (ControlMode::ViaServiceProvider, Some(l)) => {
                    t.mediated += 1;
                    Some(issued + l)
                }
                (ControlMode::ViaServiceProvider, None) => {
                    t.dead_lettered += 1;
                    None
                }
            };
            if active_at != expect {
                t.violations.push(format!(
                    "{}: {a} active at {active_at:?}, expected {expect:?}",
                    s.name
                ));
            }
            if mode == ControlMode::ViaServiceProvider {
                for m in b.messages() {
                    for d in b
                        .deliveries()
                        .iter()
                        .filter(|d| d.message == m.id && d.stage == Stage::Delivered)
                    {
                        if d.tick < m.issued_tick + latency.unwrap_or(0) {
                            t.violations
                                .push(format!("{}: message {} delivered early", s.name, m.id));
                        }
                    }
                }
            }
        }
    }
    t
}
