use super::registry::{ScopeContext, StrategyRegistry};
use super::{
    Activation, ControlStrategy, CreatedBy, PreferredSituation, StrategyError, StrategyStatus,
};
use crate::catalog::{Catalog, ElementKind, StrategyLevel};
use crate::ids::{ElementId, ServiceId};
use crate::network::{ElementRef, RoadNetwork};
use crate::sim::{Bottleneck, ProblemElement};
use std::collections::{BTreeMap, BTreeSet};

pub const DEFAULT_HORIZON: usize = 2;

/// Composes strategies with a given scope registry and horizon.
pub struct Composer {
    pub registry: StrategyRegistry,
    pub horizon: usize,
}

impl Default for Composer {
    fn default() -> Self {
        Self {
            registry: StrategyRegistry::default(),
            horizon: DEFAULT_HORIZON,
        }
    }
}

impl Composer {
    /// Union over the levels up to `level` of the operational services for
    /// that level placed on every in-scope element they apply to. A pair
    /// reached at several levels keeps the least severe one. Indirect
    /// sensing services are added on the problem links.
    pub fn activations(
        &self,
        problem: &Bottleneck,
        level: StrategyLevel,
        net: &RoadNetwork,
        catalog: &Catalog,
        override_gating: bool,
    ) -> Result<BTreeSet<Activation>, StrategyError> {
        let pe = ProblemElement::resolve(net, problem.element.as_str())
            .ok_or_else(|| StrategyError::UnknownElement(problem.element.to_string()))?;
        let ctx = ScopeContext::new(net, pe, self.horizon);
        let operational_only = !override_gating;
        let mut chosen: BTreeMap<(ServiceId, ElementId), StrategyLevel> = BTreeMap::new();
        for l in level.cumulative() {
            let strat = self
                .registry
                .for_level(l)
                .ok_or(StrategyError::Unregistered(l))?;
            let scope = strat.scope(&ctx);
            let services = catalog.services_for_strategy(l, operational_only);
            for r in &scope {
                let kind = net.element_kind_of(*r);
                for s in &services {
                    let applies = catalog
                        .get(s.as_str())
                        .is_some_and(|d| d.applicable_elements.contains(&kind));
                    if applies {
                        chosen.entry((s.clone(), net.element_id(*r))).or_insert(l);
                    }
                }
            }
        }
        if chosen.is_empty() {
            return Err(StrategyError::Unservable(level));
        }
        for s in catalog.companion_services(operational_only) {
            let d = catalog.get(s.as_str()).expect("listed by the catalog");
            if d.applicable_elements.contains(&ElementKind::Link) {
                for &l in &ctx.problem_links {
                    let e = net.element_id(ElementRef::Link(l));
                    chosen
                        .entry((s.clone(), e))
                        .or_insert(StrategyLevel::InformTraffic);
                }
            }
        }
        Ok(chosen
            .into_iter()
            .map(|((service, element), level)| Activation {
                service,
                element,
                level,
            })
            .collect())
    }

    /// The strategy's activations, each at the most severe level of the
    /// strategy whose scope reaches its element and to which its service
    /// contributes. This is the level the effect is resolved at; the
    /// strategy keeps the level each pair entered at.
    pub fn working_levels(
        &self,
        strategy: &ControlStrategy,
        net: &RoadNetwork,
        catalog: &Catalog,
    ) -> BTreeSet<Activation> {
        let Some(pe) = ProblemElement::resolve(net, strategy.problem.element.as_str()) else {
            return strategy.activations.clone();
        };
        let ctx = ScopeContext::new(net, pe, strategy.horizon);
        let mut level: BTreeMap<(&ServiceId, &ElementId), StrategyLevel> = strategy
            .activations
            .iter()
            .map(|a| (a.pair(), a.level))
            .collect();
        for l in strategy.level.cumulative() {
            let Some(strat) = self.registry.for_level(l) else {
                continue;
            };
            let scope: BTreeSet<ElementId> = strat
                .scope(&ctx)
                .into_iter()
                .map(|r| net.element_id(r))
                .collect();
            let services = catalog.services_for_strategy(l, !strategy.override_gating);
            for ((s, e), current) in level.iter_mut() {
                if *current < l && scope.contains(*e) && services.contains(*s) {
                    *current = l;
                }
            }
        }
        level
            .into_iter()
            .map(|((service, element), level)| Activation {
                service: service.clone(),
                element: element.clone(),
                level,
            })
            .collect()
    }

    pub fn compose(
        &self,
        problem: &Bottleneck,
        level: StrategyLevel,
        net: &RoadNetwork,
        catalog: &Catalog,
        override_gating: bool,
    ) -> Result<ControlStrategy, StrategyError> {
        let activations = self.activations(problem, level, net, catalog, override_gating)?;
        Ok(ControlStrategy {
            id: format!("{}@{}", problem.id, level.name()),
            problem: problem.clone(),
            preferred_situation: PreferredSituation::from_bottleneck(problem),
            level,
            activations,
            created_by: CreatedBy::Operator,
            status: StrategyStatus::Proposed,
            override_gating,
            horizon: self.horizon,
            history: Vec::new(),
        })
    }

    /// The same problem one level up. The new activation set contains the
    /// old one; the old set is kept so de-escalation restores it exactly.
    pub fn escalate(
        &self,
        strategy: &ControlStrategy,
        net: &RoadNetwork,
        catalog: &Catalog,
    ) -> Result<ControlStrategy, StrategyError> {
        let next = strategy
            .level
            .next()
            .ok_or(StrategyError::MaximumEscalation(strategy.level))?;
        let mut acts = self.activations(
            &strategy.problem,
            next,
            net,
            catalog,
            strategy.override_gating,
        )?;
        acts.extend(strategy.activations.iter().cloned());
        let mut s = strategy.clone();
        s.history
            .push((strategy.level, strategy.activations.clone()));
        s.level = next;
        s.activations = acts;
        s.status = StrategyStatus::Proposed;
        Ok(s)
    }

    /// One level down: the recorded lower set when there is one, otherwise a
    /// fresh composition.
    pub fn deescalate(
        &self,
        strategy: &ControlStrategy,
        net: &RoadNetwork,
        catalog: &Catalog,
    ) -> Result<ControlStrategy, StrategyError> {
        let prev = strategy
            .level
            .previous()
            .ok_or(StrategyError::MinimumEscalation(strategy.level))?;
        let mut s = strategy.clone();
        match s.history.pop() {
            Some((level, acts)) => {
                s.level = level;
                s.activations = acts;
            }
            None => {
                s.activations = self.activations(
                    &strategy.problem,
                    prev,
                    net,
                    catalog,
                    strategy.override_gating,
                )?;
                s.level = prev;
            }
        }
        s.status = StrategyStatus::Proposed;
        Ok(s)
    }
}

/// Compose with the default scope functions and horizon.
pub fn compose_strategy(
    problem: &Bottleneck,
    level: StrategyLevel,
    net: &RoadNetwork,
    catalog: &Catalog,
) -> Result<ControlStrategy, StrategyError> {
    Composer::default().compose(problem, level, net, catalog, false)
}

pub fn escalate(
    strategy: &ControlStrategy,
    net: &RoadNetwork,
    catalog: &Catalog,
) -> Result<ControlStrategy, StrategyError> {
    Composer {
        horizon: strategy.horizon,
        ..Composer::default()
    }
    .escalate(strategy, net, catalog)
}

pub fn deescalate(
    strategy: &ControlStrategy,
    net: &RoadNetwork,
    catalog: &Catalog,
) -> Result<ControlStrategy, StrategyError> {
    Composer {
        horizon: strategy.horizon,
        ..Composer::default()
    }
    .deescalate(strategy, net, catalog)
}
