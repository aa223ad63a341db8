//! Road network taxonomy: typed nodes, directed links, control segments,
//! route parts and the road-authority policy.
//!
//! A [`RoadNetwork`] is immutable once built. Raw edges are allowed to touch
//! regular nodes; the logical view (links between control/choice nodes, route
//! parts between choice nodes) is derived by walking across the non-endpoint
//! nodes.

mod document;
mod route_parts;
mod validate;

pub use document::{
    load_network, AreaRecord, EdgeRecord, GeoPoint, NetworkDocument, NetworkError, NodeRecord,
    PolicyDocument, SegmentRecord, NETWORK_SCHEMA_VERSION,
};
pub use route_parts::{derive_route_parts, logical_links, LogicalLink, RoutePartError};
pub use validate::{validate_network, Severity, ValidationReport, Violation};

use crate::ids::{ElementId, LinkId, NodeId, RoutePartId, SegmentId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "choice")]
    Choice,
    #[serde(rename = "control")]
    Control,
    #[serde(rename = "choice_control")]
    ChoiceAndControl,
    #[serde(rename = "regular")]
    Regular,
}

impl NodeKind {
    pub fn is_choice(self) -> bool {
        matches!(self, NodeKind::Choice | NodeKind::ChoiceAndControl)
    }

    pub fn is_control(self) -> bool {
        matches!(self, NodeKind::Control | NodeKind::ChoiceAndControl)
    }
}

/// Kinds of network element a service can be placed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    ChoiceNode,
    ControlNode,
    ChoiceAndControlNode,
    RegularNode,
    ControlSegment,
    Link,
}

impl ElementKind {
    pub const ALL: [ElementKind; 6] = [
        ElementKind::ChoiceNode,
        ElementKind::ControlNode,
        ElementKind::ChoiceAndControlNode,
        ElementKind::RegularNode,
        ElementKind::ControlSegment,
        ElementKind::Link,
    ];

    pub fn of_node(kind: NodeKind) -> Self {
        match kind {
            NodeKind::Choice => ElementKind::ChoiceNode,
            NodeKind::Control => ElementKind::ControlNode,
            NodeKind::ChoiceAndControl => ElementKind::ChoiceAndControlNode,
            NodeKind::Regular => ElementKind::RegularNode,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ElementKind::ChoiceNode => "Choice Node",
            ElementKind::ControlNode => "Control Node",
            ElementKind::ChoiceAndControlNode => "Choice & Control Node",
            ElementKind::RegularNode => "Regular Node",
            ElementKind::ControlSegment => "Control Segment",
            ElementKind::Link => "Link",
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Planar position in metres, scenario-local frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub position: Point,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    /// metres
    pub length: f64,
    /// vehicles per hour
    pub capacity: f64,
    /// km/h
    pub free_flow_speed: f64,
    pub lanes: u32,
}

impl Link {
    /// Free-flow traversal time in seconds.
    pub fn free_flow_time(&self) -> f64 {
        self.length / (self.free_flow_speed / 3.6)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentState {
    #[default]
    Base,
    Boosted,
    Restricted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSegment {
    pub id: SegmentId,
    pub member_links: Vec<LinkId>,
    pub base_capacity: f64,
    pub boost_capacity: f64,
    pub state: SegmentState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutePart {
    pub id: RoutePartId,
    pub from_choice: NodeId,
    pub to_choice: NodeId,
    pub member_links: Vec<LinkId>,
    pub alternatives: BTreeSet<RoutePartId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkThresholds {
    /// vehicles per km per lane
    pub max_density: f64,
    /// vehicles
    pub max_queue: f64,
    /// fraction of free-flow speed, in (0, 1]
    pub min_speed_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutePartThreshold {
    pub max_travel_time_ratio: f64,
}

/// Name of the importance class used for links the road function map omits.
pub const DEFAULT_ROAD_CLASS: &str = "default";

/// Road-authority policy: road function plus quantitative thresholds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub road_function: BTreeMap<LinkId, String>,
    pub class_thresholds: BTreeMap<String, LinkThresholds>,
    pub link_thresholds: BTreeMap<LinkId, LinkThresholds>,
    pub route_part_thresholds: BTreeMap<RoutePartId, RoutePartThreshold>,
    pub default_route_part_threshold: Option<RoutePartThreshold>,
}

impl Policy {
    pub fn road_class<'a>(&'a self, link: &LinkId) -> &'a str {
        self.road_function
            .get(link)
            .map(String::as_str)
            .unwrap_or(DEFAULT_ROAD_CLASS)
    }

    /// Per-link override first, then the class-level default.
    pub fn link_threshold(&self, link: &LinkId) -> Option<&LinkThresholds> {
        self.link_thresholds
            .get(link)
            .or_else(|| self.class_thresholds.get(self.road_class(link)))
    }

    pub fn route_part_threshold(&self, rp: &RoutePartId) -> Option<&RoutePartThreshold> {
        self.route_part_thresholds
            .get(rp)
            .or(self.default_route_part_threshold.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Area {
    pub id: String,
    pub elements: Vec<ElementId>,
}

/// Resolved reference to an element by kind and index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElementRef {
    Node(usize),
    Link(usize),
    Segment(usize),
}

#[derive(Clone, Debug)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    links: Vec<Link>,
    segments: Vec<ControlSegment>,
    route_parts: Vec<RoutePart>,
    policy: Policy,
    areas: Vec<Area>,
    node_ix: HashMap<NodeId, usize>,
    link_ix: HashMap<LinkId, usize>,
    segment_ix: HashMap<SegmentId, usize>,
    route_part_ix: HashMap<RoutePartId, usize>,
    link_ends: Vec<Option<(usize, usize)>>,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
    segments_of_link: Vec<Vec<usize>>,
    route_parts_of_link: Vec<Vec<usize>>,
}

impl PartialEq for RoadNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.links == other.links
            && self.segments == other.segments
            && self.route_parts == other.route_parts
            && self.policy == other.policy
            && self.areas == other.areas
    }
}

impl RoadNetwork {
    /// Index the given parts. Duplicate ids keep their first occurrence in
    /// the lookup tables; dangling link endpoints leave the link out of the
    /// adjacency lists. Both are reported by [`validate_network`].
    pub fn from_parts(
        nodes: Vec<Node>,
        links: Vec<Link>,
        segments: Vec<ControlSegment>,
        policy: Policy,
        areas: Vec<Area>,
    ) -> Self {
        let mut node_ix = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            node_ix.entry(n.id.clone()).or_insert(i);
        }
        let mut link_ix = HashMap::new();
        for (i, l) in links.iter().enumerate() {
            link_ix.entry(l.id.clone()).or_insert(i);
        }
        let mut segment_ix = HashMap::new();
        for (i, s) in segments.iter().enumerate() {
            segment_ix.entry(s.id.clone()).or_insert(i);
        }
        let mut out_links = vec![Vec::new(); nodes.len()];
        let mut in_links = vec![Vec::new(); nodes.len()];
        let link_ends: Vec<Option<(usize, usize)>> = links
            .iter()
            .map(|l| Some((*node_ix.get(&l.from)?, *node_ix.get(&l.to)?)))
            .collect();
        for (i, ends) in link_ends.iter().enumerate() {
            if let Some((f, t)) = ends {
                out_links[*f].push(i);
                in_links[*t].push(i);
            }
        }
        for adj in out_links.iter_mut().chain(in_links.iter_mut()) {
            adj.sort_by(|a, b| links[*a].id.cmp(&links[*b].id));
        }
        let mut segments_of_link = vec![Vec::new(); links.len()];
        for (si, s) in segments.iter().enumerate() {
            for m in &s.member_links {
                if let Some(&li) = link_ix.get(m) {
                    if !segments_of_link[li].contains(&si) {
                        segments_of_link[li].push(si);
                    }
                }
            }
        }
        let mut net = RoadNetwork {
            nodes,
            links,
            segments,
            route_parts: Vec::new(),
            policy,
            areas,
            node_ix,
            link_ix,
            segment_ix,
            route_part_ix: HashMap::new(),
            link_ends,
            out_links,
            in_links,
            segments_of_link,
            route_parts_of_link: Vec::new(),
        };
        net.index_route_parts();
        net
    }

    /// Replace the route parts. Used by the loader after derivation and by
    /// tests constructing deliberately broken route parts.
    pub fn with_route_parts(mut self, route_parts: Vec<RoutePart>) -> Self {
        self.route_parts = route_parts;
        self.index_route_parts();
        self
    }

    /// Derive route parts from the node taxonomy and install them.
    pub fn with_derived_route_parts(self) -> Result<Self, RoutePartError> {
        let rps = derive_route_parts(&self)?;
        Ok(self.with_route_parts(rps))
    }

    fn index_route_parts(&mut self) {
        self.route_part_ix.clear();
        for (i, rp) in self.route_parts.iter().enumerate() {
            self.route_part_ix.entry(rp.id.clone()).or_insert(i);
        }
        self.route_parts_of_link = vec![Vec::new(); self.links.len()];
        for (ri, rp) in self.route_parts.iter().enumerate() {
            for m in &rp.member_links {
                if let Some(&li) = self.link_ix.get(m) {
                    if !self.route_parts_of_link[li].contains(&ri) {
                        self.route_parts_of_link[li].push(ri);
                    }
                }
            }
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn control_segments(&self) -> &[ControlSegment] {
        &self.segments
    }

    pub fn route_parts(&self) -> &[RoutePart] {
        &self.route_parts
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn areas(&self) -> &[Area] {
        &self.areas
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.links.is_empty()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_ix.get(id).copied()
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.link_ix.get(id).copied()
    }

    pub fn segment_index(&self, id: &str) -> Option<usize> {
        self.segment_ix.get(id).copied()
    }

    pub fn route_part_index(&self, id: &str) -> Option<usize> {
        self.route_part_ix.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.node_index(id).map(|i| &self.nodes[i])
    }

    pub fn link(&self, id: &str) -> Option<&Link> {
        self.link_index(id).map(|i| &self.links[i])
    }

    pub fn segment(&self, id: &str) -> Option<&ControlSegment> {
        self.segment_index(id).map(|i| &self.segments[i])
    }

    pub fn route_part(&self, id: &str) -> Option<&RoutePart> {
        self.route_part_index(id).map(|i| &self.route_parts[i])
    }

    /// `(from, to)` node indices of a link whose endpoints both exist.
    pub fn link_ends(&self, link: usize) -> Option<(usize, usize)> {
        self.link_ends[link]
    }

    /// Outgoing link indices, sorted by link id.
    pub fn out_links(&self, node: usize) -> &[usize] {
        &self.out_links[node]
    }

    /// Incoming link indices, sorted by link id.
    pub fn in_links(&self, node: usize) -> &[usize] {
        &self.in_links[node]
    }

    pub fn segments_of_link(&self, link: usize) -> &[usize] {
        &self.segments_of_link[link]
    }

    pub fn route_parts_of_link(&self, link: usize) -> &[usize] {
        &self.route_parts_of_link[link]
    }

    pub fn resolve(&self, id: &str) -> Option<ElementRef> {
        if let Some(i) = self.node_index(id) {
            return Some(ElementRef::Node(i));
        }
        if let Some(i) = self.link_index(id) {
            return Some(ElementRef::Link(i));
        }
        self.segment_index(id).map(ElementRef::Segment)
    }

    pub fn element_id(&self, r: ElementRef) -> ElementId {
        match r {
            ElementRef::Node(i) => ElementId::from(&self.nodes[i].id),
            ElementRef::Link(i) => ElementId::from(&self.links[i].id),
            ElementRef::Segment(i) => ElementId::from(&self.segments[i].id),
        }
    }

    pub fn element_kind(&self, id: &str) -> Option<ElementKind> {
        self.resolve(id).map(|r| self.element_kind_of(r))
    }

    pub fn element_kind_of(&self, r: ElementRef) -> ElementKind {
        match r {
            ElementRef::Node(i) => ElementKind::of_node(self.nodes[i].kind),
            ElementRef::Link(_) => ElementKind::Link,
            ElementRef::Segment(_) => ElementKind::ControlSegment,
        }
    }

    /// Links making up an element: the link itself, or a segment's members.
    /// Nodes have no member links.
    pub fn member_links(&self, r: ElementRef) -> Vec<usize> {
        match r {
            ElementRef::Node(_) => Vec::new(),
            ElementRef::Link(i) => vec![i],
            ElementRef::Segment(i) => self.segments[i]
                .member_links
                .iter()
                .filter_map(|l| self.link_index(l.as_str()))
                .collect(),
        }
    }

    /// Number of elements of each kind; route parts are counted separately.
    pub fn kind_counts(&self) -> BTreeMap<ElementKind, usize> {
        let mut counts: BTreeMap<ElementKind, usize> =
            ElementKind::ALL.iter().map(|k| (*k, 0)).collect();
        for n in &self.nodes {
            *counts.entry(ElementKind::of_node(n.kind)).or_default() += 1;
        }
        *counts.entry(ElementKind::ControlSegment).or_default() += self.segments.len();
        *counts.entry(ElementKind::Link).or_default() += self.links.len();
        counts
    }

    /// Links reachable backwards from `from` within `hops` hops, excluding
    /// `from` itself. Hop 1 is the set of links entering the from-nodes of
    /// `from`.
    pub fn upstream_links(&self, from: &[usize], hops: usize) -> BTreeSet<usize> {
        self.horizon(from, hops, true)
    }

    /// Links reachable forwards from `from` within `hops` hops.
    pub fn downstream_links(&self, from: &[usize], hops: usize) -> BTreeSet<usize> {
        self.horizon(from, hops, false)
    }

    fn horizon(&self, from: &[usize], hops: usize, upstream: bool) -> BTreeSet<usize> {
        let seed: BTreeSet<usize> = from.iter().copied().collect();
        let mut found = BTreeSet::new();
        let mut frontier: VecDeque<(usize, usize)> = seed.iter().map(|l| (*l, 0)).collect();
        let mut seen = seed.clone();
        while let Some((link, depth)) = frontier.pop_front() {
            if depth == hops {
                continue;
            }
            let Some((f, t)) = self.link_ends[link] else {
                continue;
            };
            let next = if upstream {
                &self.in_links[f]
            } else {
                &self.out_links[t]
            };
            for &n in next {
                if seen.insert(n) {
                    found.insert(n);
                    frontier.push_back((n, depth + 1));
                }
            }
        }
        found
    }

    /// Serialize back into the scenario document form.
    pub fn to_document(&self) -> NetworkDocument {
        document::to_document(self)
    }
}
