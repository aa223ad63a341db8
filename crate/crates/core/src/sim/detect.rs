//! Bottleneck detection against the road authority's thresholds.

use super::TrafficState;
use crate::ids::{ElementId, LinkId};
use crate::network::{ElementRef, RoadNetwork};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Severity reported when a link has stopped moving entirely.
const MAX_SEVERITY: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BottleneckKind {
    QueueSpill,
    SpeedDrop,
    TravelTimeExcess,
}

/// Observable quantity of an element, aggregated over its member links.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// vehicles, summed
    Queue,
    /// veh/km/lane, worst link
    Density,
    /// km/h, slowest link
    MeanSpeed,
    /// mean speed over free-flow speed, slowest link
    SpeedRatio,
    /// summed travel time over summed free-flow time
    TravelTimeRatio,
    /// veh per tick, summed
    Outflow,
}

impl Measure {
    pub const ALL: [Measure; 6] = [
        Measure::Queue,
        Measure::Density,
        Measure::MeanSpeed,
        Measure::SpeedRatio,
        Measure::TravelTimeRatio,
        Measure::Outflow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Queue => "queue",
            Measure::Density => "density",
            Measure::MeanSpeed => "mean_speed",
            Measure::SpeedRatio => "speed_ratio",
            Measure::TravelTimeRatio => "travel_time_ratio",
            Measure::Outflow => "outflow",
        }
    }

    /// Larger values are worse for queue, density and travel time; smaller
    /// values are worse for speeds and outflow.
    pub fn higher_is_worse(self) -> bool {
        matches!(
            self,
            Measure::Queue | Measure::Density | Measure::TravelTimeRatio
        )
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown measure '{s}'"))
    }
}

/// Element a problem or trigger can refer to: any network element or a
/// route part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ProblemElement {
    Element(ElementRef),
    RoutePart(usize),
}

impl ProblemElement {
    pub fn resolve(net: &RoadNetwork, id: &str) -> Option<Self> {
        net.resolve(id)
            .map(ProblemElement::Element)
            .or_else(|| net.route_part_index(id).map(ProblemElement::RoutePart))
    }

    /// Links whose state defines the element's measures. A node is
    /// observed through its incoming links.
    pub fn observed_links(self, net: &RoadNetwork) -> Vec<usize> {
        match self {
            ProblemElement::Element(ElementRef::Node(n)) => net.in_links(n).to_vec(),
            ProblemElement::Element(r) => net.member_links(r),
            ProblemElement::RoutePart(i) => net.route_parts()[i]
                .member_links
                .iter()
                .filter_map(|l| net.link_index(l.as_str()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bottleneck {
    /// `"{element}:{kind}"`, stable across ticks.
    pub id: String,
    pub element: ElementId,
    pub kind: BottleneckKind,
    /// measure relative to threshold, > 1
    pub severity: f64,
    pub measure: Measure,
    pub value: f64,
    pub threshold: f64,
    pub primary_cause: Option<String>,
}

impl Bottleneck {
    pub fn make_id(element: &str, kind: BottleneckKind) -> String {
        format!("{element}:{kind:?}")
    }
}

/// Aggregate `m` over `links`. `None` for an empty link set.
pub fn measure_links(
    state: &TrafficState,
    net: &RoadNetwork,
    links: &[usize],
    m: Measure,
) -> Option<f64> {
    if links.is_empty() {
        return None;
    }
    let ls = |l: usize| &state.links[l];
    let v = match m {
        Measure::Queue => links.iter().map(|&l| f64::from(ls(l).queue)).sum(),
        Measure::Outflow => links.iter().map(|&l| f64::from(ls(l).outflow)).sum(),
        Measure::Density => links
            .iter()
            .map(|&l| ls(l).density)
            .fold(f64::MIN, f64::max),
        Measure::MeanSpeed => links
            .iter()
            .map(|&l| ls(l).mean_speed)
            .fold(f64::MAX, f64::min),
        Measure::SpeedRatio => links
            .iter()
            .map(|&l| ls(l).mean_speed / net.links()[l].free_flow_speed)
            .fold(f64::MAX, f64::min),
        Measure::TravelTimeRatio => {
            let tt: f64 = links.iter().map(|&l| ls(l).travel_time).sum();
            let ff: f64 = links.iter().map(|&l| net.links()[l].free_flow_time()).sum();
            tt / ff
        }
    };
    Some(v)
}

/// Value of `m` on the element named `id`.
pub fn measure_element(
    state: &TrafficState,
    net: &RoadNetwork,
    id: &str,
    m: Measure,
) -> Option<f64> {
    let links = ProblemElement::resolve(net, id)?.observed_links(net);
    measure_links(state, net, &links, m)
}

fn cause(state: &TrafficState, net: &RoadNetwork, links: &[usize]) -> Option<String> {
    let mut near: Vec<&LinkId> = Vec::new();
    for &l in links {
        near.push(&net.links()[l].id);
        if let Some((_, to)) = net.link_ends(l) {
            near.extend(net.out_links(to).iter().map(|&d| &net.links()[d].id));
        }
    }
    state
        .active_incidents
        .iter()
        .filter(|i| near.contains(&&i.link))
        .map(|i| i.id.clone())
        .min()
}

/// All threshold violations in `state`, worst first.
pub fn detect_bottlenecks(state: &TrafficState, net: &RoadNetwork) -> Vec<Bottleneck> {
    let mut out = Vec::new();
    let mut push = |element: &str,
                    links: &[usize],
                    kind,
                    measure,
                    value: f64,
                    threshold: f64,
                    severity: f64| {
        out.push(Bottleneck {
            id: Bottleneck::make_id(element, kind),
            element: ElementId::new(element),
            kind,
            severity,
            measure,
            value,
            threshold,
            primary_cause: cause(state, net, links),
        });
    };

    if state.links.len() == net.links().len() {
        for (i, link) in net.links().iter().enumerate() {
            let Some(th) = net.policy().link_threshold(&link.id) else {
                continue;
            };
            let ls = &state.links[i];
            let q = f64::from(ls.queue);
            let queue_ratio = q / th.max_queue;
            let density_ratio = ls.density / th.max_density;
            if q > th.max_queue || ls.density > th.max_density {
                if queue_ratio >= density_ratio {
                    push(
                        link.id.as_str(),
                        &[i],
                        BottleneckKind::QueueSpill,
                        Measure::Queue,
                        q,
                        th.max_queue,
                        queue_ratio,
                    );
                } else {
                    push(
                        link.id.as_str(),
                        &[i],
                        BottleneckKind::QueueSpill,
                        Measure::Density,
                        ls.density,
                        th.max_density,
                        density_ratio,
                    );
                }
            }
            let ratio = ls.mean_speed / link.free_flow_speed;
            if ratio < th.min_speed_ratio {
                let severity = if ratio > 0.0 {
                    (th.min_speed_ratio / ratio).min(MAX_SEVERITY)
                } else {
                    MAX_SEVERITY
                };
                push(
                    link.id.as_str(),
                    &[i],
                    BottleneckKind::SpeedDrop,
                    Measure::SpeedRatio,
                    ratio,
                    th.min_speed_ratio,
                    severity,
                );
            }
        }
        for (i, rp) in net.route_parts().iter().enumerate() {
            let Some(th) = net.policy().route_part_threshold(&rp.id) else {
                continue;
            };
            let links = ProblemElement::RoutePart(i).observed_links(net);
            let Some(ratio) = measure_links(state, net, &links, Measure::TravelTimeRatio) else {
                continue;
            };
            if ratio > th.max_travel_time_ratio {
                push(
                    rp.id.as_str(),
                    &links,
                    BottleneckKind::TravelTimeExcess,
                    Measure::TravelTimeRatio,
                    ratio,
                    th.max_travel_time_ratio,
                    (ratio / th.max_travel_time_ratio).min(MAX_SEVERITY),
                );
            }
        }
    }
    out.sort_by(|a, b| {
        b.severity
            .total_cmp(&a.severity)
            .then_with(|| a.element.cmp(&b.element))
            .then_with(|| a.kind.cmp(&b.kind))
    });
    out
}
