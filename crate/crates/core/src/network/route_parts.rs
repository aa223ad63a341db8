use super::{NodeKind, RoadNetwork, RoutePart};
use crate::ids::{LinkId, NodeId, RoutePartId};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutePartError {
    /// A cycle of non-choice nodes is reachable from a choice node, so some
    /// walk never reaches a second choice node.
    #[error("unterminated route part: cycle of non-choice nodes through {node}")]
    Unterminated { node: NodeId },
}

/// Maximal chain of raw edges whose interior nodes are all regular.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogicalLink {
    pub from: NodeId,
    pub to: NodeId,
    pub edges: Vec<LinkId>,
}

struct Span {
    from: usize,
    to: usize,
    links: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum OnCycle {
    Fail,
    Prune,
}

/// Enumerate every directed walk that starts at an endpoint node, ends at
/// an endpoint node and only passes through non-endpoint nodes. With
/// [`OnCycle::Fail`] returns the interior node that closes a cycle.
fn spans(
    net: &RoadNetwork,
    is_endpoint: impl Fn(NodeKind) -> bool,
    on_cycle: OnCycle,
) -> Result<Vec<Span>, usize> {
    struct Walker<'a, F> {
        net: &'a RoadNetwork,
        is_endpoint: F,
        on_cycle: OnCycle,
        out: Vec<Span>,
    }

    impl<F: Fn(NodeKind) -> bool> Walker<'_, F> {
        fn walk(
            &mut self,
            start: usize,
            path: &mut Vec<usize>,
            interior: &mut Vec<usize>,
        ) -> Result<(), usize> {
            let last = *path.last().expect("walk starts with one link");
            let Some((_, v)) = self.net.link_ends(last) else {
                return Ok(());
            };
            if (self.is_endpoint)(self.net.nodes()[v].kind) {
                self.out.push(Span {
                    from: start,
                    to: v,
                    links: path.clone(),
                });
                return Ok(());
            }
            if interior.contains(&v) {
                return match self.on_cycle {
                    OnCycle::Fail => Err(v),
                    OnCycle::Prune => Ok(()),
                };
            }
            interior.push(v);
            for &next in self.net.out_links(v) {
                path.push(next);
                self.walk(start, path, interior)?;
                path.pop();
            }
            interior.pop();
            Ok(())
        }
    }

    let mut starts: Vec<usize> = (0..net.nodes().len())
        .filter(|&i| is_endpoint(net.nodes()[i].kind))
        .collect();
    starts.sort_by(|a, b| net.nodes()[*a].id.cmp(&net.nodes()[*b].id));
    let mut w = Walker {
        net,
        is_endpoint,
        on_cycle,
        out: Vec::new(),
    };
    for s in starts {
        for &l in net.out_links(s) {
            w.walk(s, &mut vec![l], &mut Vec::new())?;
        }
    }
    Ok(w.out)
}

/// Every maximal directed path between two choice-like nodes with no choice
/// node in its interior becomes one route part. Route parts sharing both
/// endpoints list each other as alternatives.
///
/// Ids are `"{from}>{to}"`, with a `#k` suffix (k from 1, ordered by member
/// link ids) when several route parts share endpoints. Any existing route
/// parts on `net` are ignored, so the derivation is idempotent.
pub fn derive_route_parts(net: &RoadNetwork) -> Result<Vec<RoutePart>, RoutePartError> {
    let spans = spans(net, NodeKind::is_choice, OnCycle::Fail).map_err(|v| {
        RoutePartError::Unterminated {
            node: net.nodes()[v].id.clone(),
        }
    })?;

    let mut grouped: BTreeMap<(NodeId, NodeId), Vec<Vec<LinkId>>> = BTreeMap::new();
    for s in spans {
        let key = (net.nodes()[s.from].id.clone(), net.nodes()[s.to].id.clone());
        let members = s.links.iter().map(|&l| net.links()[l].id.clone()).collect();
        grouped.entry(key).or_default().push(members);
    }

    let mut parts = Vec::new();
    for ((from, to), mut members) in grouped {
        members.sort();
        members.dedup();
        let ids: Vec<RoutePartId> = if members.len() == 1 {
            vec![RoutePartId::new(format!("{from}>{to}"))]
        } else {
            (1..=members.len())
                .map(|k| RoutePartId::new(format!("{from}>{to}#{k}")))
                .collect()
        };
        for (i, m) in members.into_iter().enumerate() {
            let alternatives: BTreeSet<RoutePartId> = ids
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, id)| id.clone())
                .collect();
            parts.push(RoutePart {
                id: ids[i].clone(),
                from_choice: from.clone(),
                to_choice: to.clone(),
                member_links: m,
                alternatives,
            });
        }
    }
    Ok(parts)
}

/// Merge raw edges across regular nodes into links between
/// control/choice nodes. Walks trapped in regular-node cycles are skipped.
pub fn logical_links(net: &RoadNetwork) -> Vec<LogicalLink> {
    spans(net, |k| k != NodeKind::Regular, OnCycle::Prune)
        .unwrap_or_default()
        .into_iter()
        .map(|s| LogicalLink {
            from: net.nodes()[s.from].id.clone(),
            to: net.nodes()[s.to].id.clone(),
            edges: s.links.iter().map(|&l| net.links()[l].id.clone()).collect(),
        })
        .collect()
}
