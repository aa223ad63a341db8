//! What an active service does to the simulation.

use crate::catalog::{Catalog, StrategyLevel};
use crate::ids::{ElementId, ServiceId};
use crate::network::{ElementRef, RoadNetwork};
use crate::sim::{ControlParams, DemandShiftRule, ProblemElement, RerouteRule, RuleSource};
use crate::strategy::{RerouteTraffic, ScopeContext};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const EFFECTS_SCHEMA_VERSION: u32 = 1;

/// One row of a service's effect profile. `level: None` applies to any
/// level without a more specific row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<StrategyLevel>,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_shift: Option<f64>,
}

impl EffectSpec {
    pub fn inform_only() -> Self {
        Self {
            level: None,
            kind: "inform_only".to_owned(),
            factor: None,
            share: None,
            mode_shift: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectsDocument {
    pub schema_version: u32,
    /// Keyed by service effect profile (the service id unless the
    /// descriptor names another).
    #[serde(default)]
    pub profiles: BTreeMap<String, Vec<EffectSpec>>,
}

impl Default for EffectsDocument {
    fn default() -> Self {
        Self {
            schema_version: EFFECTS_SCHEMA_VERSION,
            profiles: BTreeMap::new(),
        }
    }
}

impl EffectsDocument {
    /// Row for `profile` at `level`.
    pub fn spec_for(&self, profile: &str, level: StrategyLevel) -> EffectSpec {
        let rows = self.profiles.get(profile).map(Vec::as_slice).unwrap_or(&[]);
        rows.iter()
            .find(|r| r.level == Some(level))
            .or_else(|| rows.iter().find(|r| r.level.is_none()))
            .cloned()
            .unwrap_or_else(EffectSpec::inform_only)
    }

    pub fn validate(&self, registry: &EffectRegistry) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema_version != EFFECTS_SCHEMA_VERSION {
            errs.push(format!(
                "unsupported effects schema_version {}",
                self.schema_version
            ));
        }
        for (p, rows) in &self.profiles {
            for r in rows {
                match registry.get(&r.kind) {
                    None => errs.push(format!(
                        "effect profile {p}: unknown effect kind '{}'",
                        r.kind
                    )),
                    Some(res) => errs.extend(
                        res.check(r)
                            .into_iter()
                            .map(|e| format!("effect profile {p}: {e}")),
                    ),
                }
            }
        }
        errs
    }
}

/// A resolved effect with network indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    InformOnly,
    CapacityBoost {
        links: Vec<usize>,
        factor: f64,
    },
    CapacityRestrict {
        links: Vec<usize>,
        factor: f64,
    },
    /// Raise `approaches` by `raise` and scale `others` by `lower` so that
    /// the node's total incoming capacity is unchanged.
    GreenSplitShift {
        node: usize,
        approaches: Vec<usize>,
        others: Vec<usize>,
        raise: f64,
        lower: f64,
    },
    SpeedHarmonize {
        links: Vec<usize>,
        factor: f64,
    },
    RerouteAdvice {
        node: usize,
        avoid: Vec<usize>,
        via: Vec<usize>,
        mode_shift: f64,
    },
    DemandShift {
        node: usize,
        share: f64,
    },
}

/// Where an effect is placed and what problem it answers.
pub struct EffectContext<'a> {
    pub net: &'a RoadNetwork,
    pub element: ElementRef,
    pub level: StrategyLevel,
    /// Problem links plus upstream and downstream links within the
    /// strategy horizon.
    pub scope: ScopeContext<'a>,
}

impl EffectContext<'_> {
    fn element_links(&self) -> Vec<usize> {
        self.net.member_links(self.element)
    }

    fn corridor(&self) -> BTreeSet<usize> {
        let mut c: BTreeSet<usize> = self.scope.problem_links.iter().copied().collect();
        c.extend(self.scope.upstream());
        c.extend(self.scope.downstream());
        c
    }

    /// Incoming links of a node restricted to `set`, or all incoming links
    /// when none of them is in `set`.
    fn in_links_within(&self, node: usize, set: &BTreeSet<usize>) -> Vec<usize> {
        let all = self.net.in_links(node);
        let hit: Vec<usize> = all.iter().copied().filter(|l| set.contains(l)).collect();
        if hit.is_empty() {
            all.to_vec()
        } else {
            hit
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EffectError {
    #[error("unknown effect kind '{0}'")]
    UnknownKind(String),
    #[error("{kind} cannot be placed on {element}")]
    BadTarget { kind: String, element: String },
    #[error("{0}")]
    BadParameter(String),
}

/// Turns an effect row into concrete simulation effects.
pub trait EffectResolver: Send + Sync {
    fn kind(&self) -> &'static str;
    fn check(&self, spec: &EffectSpec) -> Vec<String>;
    fn resolve(&self, spec: &EffectSpec, ctx: &EffectContext) -> Result<Effect, EffectError>;
}

fn bad_target(kind: &str, ctx: &EffectContext) -> EffectError {
    EffectError::BadTarget {
        kind: kind.to_owned(),
        element: ctx.net.element_id(ctx.element).to_string(),
    }
}

fn need(
    spec: &EffectSpec,
    name: &str,
    v: Option<f64>,
    ok: impl Fn(f64) -> bool,
    range: &str,
) -> Vec<String> {
    match v {
        Some(x) if x.is_finite() && ok(x) => vec![],
        Some(x) => vec![format!("{} {name} {x} outside {range}", spec.kind)],
        None => vec![format!("{} needs {name}", spec.kind)],
    }
}

struct InformOnly;

impl EffectResolver for InformOnly {
    fn kind(&self) -> &'static str {
        "inform_only"
    }
    fn check(&self, _: &EffectSpec) -> Vec<String> {
        vec![]
    }
    fn resolve(&self, _: &EffectSpec, _: &EffectContext) -> Result<Effect, EffectError> {
        Ok(Effect::InformOnly)
    }
}

struct CapacityBoost;

impl EffectResolver for CapacityBoost {
    fn kind(&self) -> &'static str {
        "capacity_boost"
    }
    fn check(&self, spec: &EffectSpec) -> Vec<String> {
        need(spec, "factor", spec.factor, |f| f > 1.0, "(1, inf)")
    }
    /// Segments are capped at their boost capacity; nodes raise their
    /// incoming problem links.
    fn resolve(&self, spec: &EffectSpec, ctx: &EffectContext) -> Result<Effect, EffectError> {
        let mut factor = spec.factor.unwrap_or(1.0);
        let links = match ctx.element {
            ElementRef::Segment(i) => {
                let s = &ctx.net.control_segments()[i];
                factor = factor.min(s.boost_capacity / s.base_capacity);
                ctx.element_links()
            }
            ElementRef::Link(_) => ctx.element_links(),
            ElementRef::Node(n) => {
                let p = ctx.scope.problem_links.iter().copied().collect();
                ctx.in_links_within(n, &p)
            }
        };
        if factor <= 1.0 {
            return Ok(Effect::InformOnly);
        }
        Ok(Effect::CapacityBoost { links, factor })
    }
}

struct CapacityRestrict;

impl EffectResolver for CapacityRestrict {
    fn kind(&self) -> &'static str {
        "capacity_restrict"
    }
    fn check(&self, spec: &EffectSpec) -> Vec<String> {
        need(
            spec,
            "factor",
            spec.factor,
            |f| f > 0.0 && f < 1.0,
            "(0, 1)",
        )
    }
    /// Nodes restrict their incoming links upstream of the problem.
    fn resolve(&self, spec: &EffectSpec, ctx: &EffectContext) -> Result<Effect, EffectError> {
        let links = match ctx.element {
            ElementRef::Node(n) => ctx.in_links_within(n, &ctx.scope.upstream()),
            _ => ctx.element_links(),
        };
        Ok(Effect::CapacityRestrict {
            links,
            factor: spec.factor.unwrap_or(1.0),
        })
    }
}

struct GreenSplitShift;

impl EffectResolver for GreenSplitShift {
    fn kind(&self) -> &'static str {
        "green_split_shift"
    }
    fn check(&self, spec: &EffectSpec) -> Vec<String> {
        need(
            spec,
            "factor",
            spec.factor,
            |f| f != 0.0 && f.abs() < 1.0,
            "(-1, 0) or (0, 1)",
        )
    }
    /// Approaches are the node's incoming corridor links. A positive factor
    /// favours them, a negative one the cross streets. A node whose incoming
    /// links all lie on the corridor has nothing to shift.
    fn resolve(&self, spec: &EffectSpec, ctx: &EffectContext) -> Result<Effect, EffectError> {
        let ElementRef::Node(node) = ctx.element else {
            return Err(bad_target(self.kind(), ctx));
        };
        let corridor = ctx.corridor();
        let (mut approaches, mut others): (Vec<usize>, Vec<usize>) = ctx
            .net
            .in_links(node)
            .iter()
            .partition(|l| corridor.contains(l));
        let mut f = spec.factor.unwrap_or(0.0);
        if f < 0.0 {
            std::mem::swap(&mut approaches, &mut others);
            f = -f;
        }
        if approaches.is_empty() || others.is_empty() {
            return Ok(Effect::InformOnly);
        }
        let cap = |ls: &[usize]| ls.iter().map(|&l| ctx.net.links()[l].capacity).sum::<f64>();
        let (a, b) = (cap(&approaches), cap(&others));
        // never take more than 90 % from the other approaches
        let f = f.min(0.9 * b / a);
        Ok(Effect::GreenSplitShift {
            node,
            approaches,
            others,
            raise: 1.0 + f,
            lower: 1.0 - f * a / b,
        })
    }
}

struct SpeedHarmonize;

impl EffectResolver for SpeedHarmonize {
    fn kind(&self) -> &'static str {
        "speed_harmonize"
    }
    fn check(&self, spec: &EffectSpec) -> Vec<String> {
        need(
            spec,
            "factor",
            spec.factor,
            |f| f > 0.0 && f < 1.0,
            "(0, 1)",
        )
    }
    fn resolve(&self, spec: &EffectSpec, ctx: &EffectContext) -> Result<Effect, EffectError> {
        let links = match ctx.element {
            ElementRef::Node(n) => ctx.net.in_links(n).to_vec(),
            _ => ctx.element_links(),
        };
        Ok(Effect::SpeedHarmonize {
            links,
            factor: spec.factor.unwrap_or(0.0),
        })
    }
}

/// Links of a route part in travel order.
fn part_links(net: &RoadNetwork, rp: usize) -> Vec<usize> {
    net.route_parts()[rp]
        .member_links
        .iter()
        .filter_map(|l| net.link_index(l.as_str()))
        .collect()
}

struct RerouteAdvice;

impl EffectResolver for RerouteAdvice {
    fn kind(&self) -> &'static str {
        "reroute_advice"
    }
    fn check(&self, spec: &EffectSpec) -> Vec<String> {
        match spec.mode_shift {
            None => vec![],
            Some(_) => need(
                spec,
                "mode_shift",
                spec.mode_shift,
                |m| (0.0..=1.0).contains(&m),
                "[0, 1]",
            ),
        }
    }
    /// Detour from the choice node over the first alternative route part
    /// that avoids the problem. No detour degrades to information only.
    fn resolve(&self, spec: &EffectSpec, ctx: &EffectContext) -> Result<Effect, EffectError> {
        let ElementRef::Node(node) = ctx.element else {
            return Err(bad_target(self.kind(), ctx));
        };
        let detour = RerouteTraffic::detours(&ctx.scope)
            .into_iter()
            .find(|(c, _, _)| *c == node);
        Ok(match detour {
            Some((_, rp, alt)) => Effect::RerouteAdvice {
                node,
                avoid: part_links(ctx.net, rp),
                via: part_links(ctx.net, alt),
                mode_shift: spec.mode_shift.unwrap_or(0.0),
            },
            None => Effect::InformOnly,
        })
    }
}

struct DemandShift;

impl EffectResolver for DemandShift {
    fn kind(&self) -> &'static str {
        "demand_shift"
    }
    fn check(&self, spec: &EffectSpec) -> Vec<String> {
        need(spec, "share", spec.share, |s| s > 0.0 && s <= 1.0, "(0, 1]")
    }
    /// Trips through the node; a link or segment shifts trips through its
    /// first node.
    fn resolve(&self, spec: &EffectSpec, ctx: &EffectContext) -> Result<Effect, EffectError> {
        let node = match ctx.element {
            ElementRef::Node(n) => n,
            _ => {
                let Some(first) = ctx.element_links().first().copied() else {
                    return Err(bad_target(self.kind(), ctx));
                };
                ctx.net
                    .link_ends(first)
                    .ok_or_else(|| bad_target(self.kind(), ctx))?
                    .0
            }
        };
        Ok(Effect::DemandShift {
            node,
            share: spec.share.unwrap_or(0.0),
        })
    }
}

/// Effect resolvers by kind name.
pub struct EffectRegistry {
    by_kind: BTreeMap<&'static str, Box<dyn EffectResolver>>,
}

impl Default for EffectRegistry {
    fn default() -> Self {
        let mut r = Self {
            by_kind: BTreeMap::new(),
        };
        r.register(Box::new(InformOnly));
        r.register(Box::new(CapacityBoost));
        r.register(Box::new(CapacityRestrict));
        r.register(Box::new(GreenSplitShift));
        r.register(Box::new(SpeedHarmonize));
        r.register(Box::new(RerouteAdvice));
        r.register(Box::new(DemandShift));
        r
    }
}

impl EffectRegistry {
    pub fn register(&mut self, r: Box<dyn EffectResolver>) {
        self.by_kind.insert(r.kind(), r);
    }

    pub fn get(&self, kind: &str) -> Option<&dyn EffectResolver> {
        self.by_kind.get(kind).map(|b| b.as_ref())
    }

    pub fn kinds(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.by_kind.keys().copied()
    }
}

/// Resolves `(service, element, level, problem)` to an effect using the
/// scenario's effect table.
pub struct EffectModel {
    pub document: EffectsDocument,
    pub registry: EffectRegistry,
    pub horizon: usize,
}

impl EffectModel {
    pub fn new(document: EffectsDocument, horizon: usize) -> Self {
        Self {
            document,
            registry: EffectRegistry::default(),
            horizon,
        }
    }

    pub fn resolve(
        &self,
        net: &RoadNetwork,
        catalog: &Catalog,
        service: &ServiceId,
        element: &ElementId,
        level: StrategyLevel,
        problem: &str,
    ) -> Result<Effect, EffectError> {
        let profile = catalog
            .get(service.as_str())
            .map(|d| d.effect_key().to_owned())
            .unwrap_or_else(|| service.to_string());
        let spec = self.document.spec_for(&profile, level);
        let resolver = self
            .registry
            .get(&spec.kind)
            .ok_or_else(|| EffectError::UnknownKind(spec.kind.clone()))?;
        let el = net
            .resolve(element.as_str())
            .ok_or_else(|| EffectError::BadTarget {
                kind: spec.kind.clone(),
                element: element.to_string(),
            })?;
        let pe = ProblemElement::resolve(net, problem).unwrap_or(ProblemElement::Element(el));
        let ctx = EffectContext {
            net,
            element: el,
            level,
            scope: ScopeContext::new(net, pe, self.horizon),
        };
        resolver.resolve(&spec, &ctx)
    }
}

/// Fold `effects` into control parameters, starting from neutral every
/// time so that removing an effect restores the parameters exactly.
pub fn apply_effects<'a>(
    links: usize,
    effects: impl IntoIterator<Item = (&'a Effect, RuleSource)>,
) -> ControlParams {
    let mut p = ControlParams::neutral(links);
    for (e, source) in effects {
        match e {
            Effect::InformOnly => {}
            Effect::CapacityBoost { links, factor }
            | Effect::CapacityRestrict { links, factor } => {
                for &l in links {
                    p.capacity_factor[l] *= factor;
                }
            }
            Effect::GreenSplitShift {
                approaches,
                others,
                raise,
                lower,
                ..
            } => {
                for &l in approaches {
                    p.capacity_factor[l] *= raise;
                }
                for &l in others {
                    p.capacity_factor[l] *= lower;
                }
            }
            Effect::SpeedHarmonize { links, factor } => {
                for &l in links {
                    p.queue_bonus[l] *= 1.0 + factor;
                }
            }
            Effect::RerouteAdvice {
                node,
                avoid,
                via,
                mode_shift,
            } => p.reroute.entry(*node).or_default().push(RerouteRule {
                source,
                avoid: avoid.clone(),
                via: via.clone(),
                mode_shift: *mode_shift,
            }),
            Effect::DemandShift { node, share } => {
                p.demand_shift
                    .entry(*node)
                    .or_default()
                    .push(DemandShiftRule {
                        source,
                        share: *share,
                    })
            }
        }
    }
    p
}

/// Direction an effect pushes a link's capacity, if any.
fn pushes(e: &Effect) -> Vec<(usize, bool)> {
    match e {
        Effect::CapacityBoost { links, .. } => links.iter().map(|&l| (l, true)).collect(),
        Effect::CapacityRestrict { links, .. } => links.iter().map(|&l| (l, false)).collect(),
        _ => vec![],
    }
}

/// Pairs of effects that must not be combined silently: a boost and a
/// restriction on the same link, or two different green-split shifts at
/// one node. Returned as `(i, j, scope element)` with `i < j` indexing
/// `effects`.
pub fn physical_conflicts(net: &RoadNetwork, effects: &[&Effect]) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    for i in 0..effects.len() {
        for j in i + 1..effects.len() {
            let (a, b) = (effects[i], effects[j]);
            if let (
                Effect::GreenSplitShift {
                    node: na,
                    approaches: aa,
                    ..
                },
                Effect::GreenSplitShift {
                    node: nb,
                    approaches: ab,
                    raise: rb,
                    ..
                },
            ) = (a, b)
            {
                let Effect::GreenSplitShift { raise: ra, .. } = a else {
                    unreachable!()
                };
                if na == nb && (aa != ab || ra.to_bits() != rb.to_bits()) {
                    out.push((i, j, net.nodes()[*na].id.to_string()));
                }
                continue;
            }
            let pa = pushes(a);
            let pb = pushes(b);
            let clash = pa
                .iter()
                .filter(|(l, up)| pb.iter().any(|(m, down)| l == m && up != down))
                .map(|(l, _)| *l)
                .min();
            if let Some(l) = clash {
                out.push((i, j, net.links()[l].id.to_string()));
            }
        }
    }
    out
}
