use super::{
    validate_network, Area, ControlSegment, Link, LinkThresholds, Node, NodeKind, Point, Policy,
    RoadNetwork, RoutePartThreshold, SegmentState, ValidationReport, Violation,
};
use crate::ids::{ElementId, LinkId, NodeId, RoutePartId, SegmentId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub capacity: f64,
    pub free_flow_speed: f64,
    #[serde(default = "one_lane")]
    pub lanes: u32,
}

fn one_lane() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub id: String,
    pub member_links: Vec<String>,
    pub base_capacity: f64,
    pub boost_capacity: f64,
    #[serde(default)]
    pub state: SegmentState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaRecord {
    pub id: String,
    pub elements: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    #[serde(default)]
    pub road_function: BTreeMap<String, String>,
    #[serde(default)]
    pub class_thresholds: BTreeMap<String, LinkThresholds>,
    #[serde(default)]
    pub link_thresholds: BTreeMap<String, LinkThresholds>,
    #[serde(default)]
    pub route_part_thresholds: BTreeMap<String, RoutePartThreshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_route_part_threshold: Option<RoutePartThreshold>,
}

/// On-disk network document (`network.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub schema_version: u32,
    /// Projection origin for nodes given in lat/lon. Defaults to the first
    /// geographic node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<GeoPoint>,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
    #[serde(default)]
    pub control_segments: Vec<SegmentRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub areas: Vec<AreaRecord>,
    pub policy: PolicyDocument,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("malformed network document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported network schema_version {found} (supported: {NETWORK_SCHEMA_VERSION})")]
    UnsupportedSchema { found: u32 },
    #[error("empty network")]
    Empty,
    #[error("invalid network:\n{0}")]
    Invalid(ValidationReport),
}

impl NetworkError {
    pub fn report(&self) -> Option<&ValidationReport> {
        match self {
            NetworkError::Invalid(r) => Some(r),
            _ => None,
        }
    }
}

/// Equirectangular projection about `origin`; accurate to well under a
/// metre over a city-sized extent.
fn project(origin: GeoPoint, p: GeoPoint) -> Point {
    let lat0 = origin.lat.to_radians();
    Point {
        x: EARTH_RADIUS_M * (p.lon - origin.lon).to_radians() * lat0.cos(),
        y: EARTH_RADIUS_M * (p.lat - origin.lat).to_radians(),
    }
}

impl NetworkDocument {
    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Build the network and report everything wrong with it. The returned
    /// network carries derived route parts whenever derivation succeeds.
    pub fn build(&self) -> (RoadNetwork, ValidationReport) {
        let mut extra = Vec::new();
        let origin = self.origin.or_else(|| {
            self.nodes.iter().find_map(|n| match (n.lat, n.lon) {
                (Some(lat), Some(lon)) => Some(GeoPoint { lat, lon }),
                _ => None,
            })
        });
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let position = match (n.x, n.y, n.lat, n.lon, origin) {
                    (Some(x), Some(y), _, _, _) => Point { x, y },
                    (_, _, Some(lat), Some(lon), Some(o)) => project(o, GeoPoint { lat, lon }),
                    _ => {
                        extra.push(Violation::error(
                            "node-missing-position",
                            n.id.as_str(),
                            "node needs x/y or lat/lon",
                        ));
                        Point::default()
                    }
                };
                Node {
                    id: NodeId::new(n.id.clone()),
                    kind: n.kind,
                    position,
                    label: n.label.clone(),
                }
            })
            .collect();
        let links = self
            .edges
            .iter()
            .map(|e| Link {
                id: LinkId::new(e.id.clone()),
                from: NodeId::new(e.from.clone()),
                to: NodeId::new(e.to.clone()),
                length: e.length,
                capacity: e.capacity,
                free_flow_speed: e.free_flow_speed,
                lanes: e.lanes,
            })
            .collect();
        let segments = self
            .control_segments
            .iter()
            .map(|s| ControlSegment {
                id: SegmentId::new(s.id.clone()),
                member_links: s
                    .member_links
                    .iter()
                    .map(|m| LinkId::new(m.clone()))
                    .collect(),
                base_capacity: s.base_capacity,
                boost_capacity: s.boost_capacity,
                state: s.state,
            })
            .collect();
        let p = &self.policy;
        let policy = Policy {
            road_function: p
                .road_function
                .iter()
                .map(|(k, v)| (LinkId::new(k.clone()), v.clone()))
                .collect(),
            class_thresholds: p.class_thresholds.clone(),
            link_thresholds: p
                .link_thresholds
                .iter()
                .map(|(k, v)| (LinkId::new(k.clone()), *v))
                .collect(),
            route_part_thresholds: p
                .route_part_thresholds
                .iter()
                .map(|(k, v)| (RoutePartId::new(k.clone()), *v))
                .collect(),
            default_route_part_threshold: p.default_route_part_threshold,
        };
        let areas = self
            .areas
            .iter()
            .map(|a| Area {
                id: a.id.clone(),
                elements: a
                    .elements
                    .iter()
                    .map(|e| ElementId::new(e.clone()))
                    .collect(),
            })
            .collect();

        let raw = RoadNetwork::from_parts(nodes, links, segments, policy, areas);
        let net = match raw.clone().with_derived_route_parts() {
            Ok(n) => n,
            Err(e) => {
                let super::RoutePartError::Unterminated { node } = &e;
                extra.push(Violation::error(
                    "route-part-unterminated",
                    node.as_str(),
                    e.to_string(),
                ));
                raw
            }
        };
        let report = validate_network(&net).merge(ValidationReport::from_violations(extra));
        (net, report)
    }
}

/// Parse, build and validate a network document.
pub fn load_network(text: &str) -> Result<RoadNetwork, NetworkError> {
    let doc = NetworkDocument::from_json(text)?;
    if doc.schema_version != NETWORK_SCHEMA_VERSION {
        return Err(NetworkError::UnsupportedSchema {
            found: doc.schema_version,
        });
    }
    if doc.nodes.is_empty() && doc.edges.is_empty() {
        return Err(NetworkError::Empty);
    }
    let (net, report) = doc.build();
    if report.is_valid() {
        Ok(net)
    } else {
        Err(NetworkError::Invalid(report))
    }
}

pub(super) fn to_document(net: &RoadNetwork) -> NetworkDocument {
    let p = net.policy();
    NetworkDocument {
        schema_version: NETWORK_SCHEMA_VERSION,
        origin: None,
        nodes: net
            .nodes()
            .iter()
            .map(|n| NodeRecord {
                id: n.id.to_string(),
                kind: n.kind,
                x: Some(n.position.x),
                y: Some(n.position.y),
                lat: None,
                lon: None,
                label: n.label.clone(),
            })
            .collect(),
        edges: net
            .links()
            .iter()
            .map(|l| EdgeRecord {
                id: l.id.to_string(),
                from: l.from.to_string(),
                to: l.to.to_string(),
                length: l.length,
                capacity: l.capacity,
                free_flow_speed: l.free_flow_speed,
                lanes: l.lanes,
            })
            .collect(),
        control_segments: net
            .control_segments()
            .iter()
            .map(|s| SegmentRecord {
                id: s.id.to_string(),
                member_links: s.member_links.iter().map(|m| m.to_string()).collect(),
                base_capacity: s.base_capacity,
                boost_capacity: s.boost_capacity,
                state: s.state,
            })
            .collect(),
        areas: net
            .areas()
            .iter()
            .map(|a| AreaRecord {
                id: a.id.clone(),
                elements: a.elements.iter().map(|e| e.to_string()).collect(),
            })
            .collect(),
        policy: PolicyDocument {
            road_function: p
                .road_function
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            class_thresholds: p.class_thresholds.clone(),
            link_thresholds: p
                .link_thresholds
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            route_part_thresholds: p
                .route_part_thresholds
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            default_route_part_threshold: p.default_route_part_threshold,
        },
    }
}
