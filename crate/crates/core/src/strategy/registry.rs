//! Scope functions for the escalation levels, registered by name.

use super::StrategyError;
use crate::catalog::StrategyLevel;
use crate::network::{ElementRef, RoadNetwork};
use crate::sim::ProblemElement;
use std::collections::{BTreeMap, BTreeSet};

/// What a scope function sees of the problem.
pub struct ScopeContext<'a> {
    pub net: &'a RoadNetwork,
    pub problem: ProblemElement,
    /// Links the problem is observed on, sorted.
    pub problem_links: Vec<usize>,
    /// Hop limit for upstream and downstream searches.
    pub horizon: usize,
}

impl<'a> ScopeContext<'a> {
    pub fn new(net: &'a RoadNetwork, problem: ProblemElement, horizon: usize) -> Self {
        let mut problem_links = problem.observed_links(net);
        problem_links.sort_unstable();
        problem_links.dedup();
        Self {
            net,
            problem,
            problem_links,
            horizon,
        }
    }

    pub fn upstream(&self) -> BTreeSet<usize> {
        self.net.upstream_links(&self.problem_links, self.horizon)
    }

    pub fn downstream(&self) -> BTreeSet<usize> {
        self.net.downstream_links(&self.problem_links, self.horizon)
    }

    fn tail_node(&self, l: usize) -> Option<usize> {
        self.net.link_ends(l).map(|e| e.0)
    }

    fn head_node(&self, l: usize) -> Option<usize> {
        self.net.link_ends(l).map(|e| e.1)
    }

    /// The problem element itself when it is a node or a segment.
    fn own_element(&self) -> Option<ElementRef> {
        match self.problem {
            ProblemElement::Element(r @ (ElementRef::Node(_) | ElementRef::Segment(_))) => Some(r),
            _ => None,
        }
    }

    fn segments_on(
        &self,
        links: impl IntoIterator<Item = usize>,
    ) -> impl Iterator<Item = ElementRef> + '_ {
        let segs: BTreeSet<usize> = links
            .into_iter()
            .flat_map(|l| self.net.segments_of_link(l).iter().copied())
            .collect();
        segs.into_iter().map(ElementRef::Segment)
    }

    fn is_control(&self, n: usize) -> bool {
        self.net.nodes()[n].kind.is_control()
    }

    /// Nodes where traffic enters the problem: from-nodes of problem links
    /// that are not themselves reached from inside the problem.
    fn entry_nodes(&self) -> BTreeSet<usize> {
        let inner: BTreeSet<usize> = self
            .problem_links
            .iter()
            .filter_map(|&l| self.head_node(l))
            .collect();
        self.problem_links
            .iter()
            .filter_map(|&l| self.tail_node(l))
            .filter(|n| !inner.contains(n))
            .collect()
    }
}

/// One escalation level's notion of where services must be placed.
pub trait EscalationStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn level(&self) -> StrategyLevel;
    /// Elements in scope for this level, without regard to services.
    fn scope(&self, ctx: &ScopeContext) -> BTreeSet<ElementRef>;
}

/// Problem links, their upstream links within the horizon, the nodes those
/// links leave from and the segments containing them.
pub struct InformTraffic;

impl EscalationStrategy for InformTraffic {
    fn name(&self) -> &'static str {
        "inform_traffic"
    }

    fn level(&self) -> StrategyLevel {
        StrategyLevel::InformTraffic
    }

    fn scope(&self, ctx: &ScopeContext) -> BTreeSet<ElementRef> {
        let links: BTreeSet<usize> = ctx
            .problem_links
            .iter()
            .copied()
            .chain(ctx.upstream())
            .collect();
        let mut out: BTreeSet<ElementRef> = links.iter().map(|&l| ElementRef::Link(l)).collect();
        out.extend(
            links
                .iter()
                .filter_map(|&l| ctx.tail_node(l))
                .map(ElementRef::Node),
        );
        out.extend(ctx.segments_on(links.iter().copied()));
        out.extend(ctx.own_element());
        out
    }
}

/// Control nodes and segments on the problem and downstream of it.
pub struct EnlargeOutflow {
    pub include_downstream: bool,
}

impl EscalationStrategy for EnlargeOutflow {
    fn name(&self) -> &'static str {
        if self.include_downstream {
            "enlarge_outflow"
        } else {
            "enlarge_outflow_local"
        }
    }

    fn level(&self) -> StrategyLevel {
        StrategyLevel::EnlargeOutflow
    }

    fn scope(&self, ctx: &ScopeContext) -> BTreeSet<ElementRef> {
        let mut links: BTreeSet<usize> = ctx.problem_links.iter().copied().collect();
        if self.include_downstream {
            links.extend(ctx.downstream());
        }
        let mut out: BTreeSet<ElementRef> = ctx.segments_on(links.iter().copied()).collect();
        out.extend(
            links
                .iter()
                .filter_map(|&l| ctx.head_node(l))
                .filter(|&n| ctx.is_control(n))
                .map(ElementRef::Node),
        );
        if let Some(r) = ctx.own_element() {
            match r {
                ElementRef::Node(n) if !ctx.is_control(n) => {}
                _ => {
                    out.insert(r);
                }
            }
        }
        out
    }
}

/// Control nodes and segments upstream of the problem.
pub struct ReduceInflow;

impl EscalationStrategy for ReduceInflow {
    fn name(&self) -> &'static str {
        "reduce_inflow"
    }

    fn level(&self) -> StrategyLevel {
        StrategyLevel::ReduceInflow
    }

    fn scope(&self, ctx: &ScopeContext) -> BTreeSet<ElementRef> {
        let up = ctx.upstream();
        let problem: BTreeSet<usize> = ctx.problem_links.iter().copied().collect();
        let mut nodes = ctx.entry_nodes();
        nodes.extend(up.iter().filter_map(|&l| ctx.tail_node(l)));
        let mut out: BTreeSet<ElementRef> = nodes
            .into_iter()
            .filter(|&n| ctx.is_control(n))
            .map(ElementRef::Node)
            .collect();
        out.extend(ctx.segments_on(up.iter().copied()).filter(|s| {
            let ElementRef::Segment(i) = *s else {
                return false;
            };
            ctx.net.control_segments()[i]
                .member_links
                .iter()
                .filter_map(|m| ctx.net.link_index(m.as_str()))
                .all(|m| !problem.contains(&m))
        }));
        out
    }
}

/// Choice nodes starting a route part through the problem that has an
/// alternative avoiding it.
pub struct RerouteTraffic;

impl RerouteTraffic {
    /// `(choice node, route part through the problem, alternative)` triples,
    /// alternatives in id order.
    pub fn detours(ctx: &ScopeContext) -> Vec<(usize, usize, usize)> {
        let net = ctx.net;
        let problem: BTreeSet<usize> = ctx.problem_links.iter().copied().collect();
        let through: BTreeSet<usize> = ctx
            .problem_links
            .iter()
            .flat_map(|&l| net.route_parts_of_link(l).iter().copied())
            .collect();
        let mut out = Vec::new();
        for rp in through {
            let part = &net.route_parts()[rp];
            let Some(c) = net.node_index(part.from_choice.as_str()) else {
                continue;
            };
            for alt in &part.alternatives {
                let Some(ai) = net.route_part_index(alt.as_str()) else {
                    continue;
                };
                let avoids = net.route_parts()[ai]
                    .member_links
                    .iter()
                    .filter_map(|m| net.link_index(m.as_str()))
                    .all(|m| !problem.contains(&m));
                if avoids {
                    out.push((c, rp, ai));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

impl EscalationStrategy for RerouteTraffic {
    fn name(&self) -> &'static str {
        "reroute_traffic"
    }

    fn level(&self) -> StrategyLevel {
        StrategyLevel::RerouteTraffic
    }

    fn scope(&self, ctx: &ScopeContext) -> BTreeSet<ElementRef> {
        Self::detours(ctx)
            .into_iter()
            .map(|(c, _, _)| ElementRef::Node(c))
            .collect()
    }
}

/// Scope functions by name, with one selected per level.
pub struct StrategyRegistry {
    by_name: BTreeMap<&'static str, Box<dyn EscalationStrategy>>,
    selected: BTreeMap<StrategyLevel, &'static str>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(InformTraffic));
        r.register(Box::new(EnlargeOutflow {
            include_downstream: true,
        }));
        r.register(Box::new(ReduceInflow));
        r.register(Box::new(RerouteTraffic));
        r.register(Box::new(EnlargeOutflow {
            include_downstream: false,
        }));
        r
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            by_name: BTreeMap::new(),
            selected: BTreeMap::new(),
        }
    }

    /// Add a scope function. The first one registered for a level is
    /// selected for it until [`select`](Self::select) says otherwise.
    pub fn register(&mut self, s: Box<dyn EscalationStrategy>) {
        let name = s.name();
        self.selected.entry(s.level()).or_insert(name);
        self.by_name.insert(name, s);
    }

    pub fn select(&mut self, name: &str) -> Result<(), StrategyError> {
        let s = self
            .by_name
            .get(name)
            .ok_or_else(|| StrategyError::UnknownScopeStrategy(name.to_owned()))?;
        self.selected.insert(s.level(), s.name());
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.by_name.keys().copied()
    }

    pub fn get(&self, name: &str) -> Option<&dyn EscalationStrategy> {
        self.by_name.get(name).map(|b| b.as_ref())
    }

    pub fn for_level(&self, level: StrategyLevel) -> Option<&dyn EscalationStrategy> {
        self.get(self.selected.get(&level)?)
    }
}
