use super::{LinkThresholds, RoadNetwork};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Info,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub element: String,
    pub severity: Severity,
    pub message: String,
}

impl Violation {
    pub fn error(rule: &str, element: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            rule: rule.to_owned(),
            element: element.into(),
            severity: Severity::Error,
            message: message.into(),
        }
    }

    pub fn info(rule: &str, element: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Info,
            ..Self::error(rule, element, message)
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Info => "info",
        };
        write!(
            f,
            "{sev} {} [{}]: {}",
            self.rule, self.element, self.message
        )
    }
}

/// Violations sorted by rule name, then element id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn from_violations(mut violations: Vec<Violation>) -> Self {
        violations.sort();
        violations.dedup();
        Self { violations }
    }

    pub fn merge(mut self, other: ValidationReport) -> Self {
        self.violations.extend(other.violations);
        Self::from_violations(self.violations)
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    /// No error-severity entries. Informational entries do not invalidate.
    pub fn is_valid(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.severity == Severity::Error)
    }

    pub fn rules(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.rule.as_str()).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "ok: no violations");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_link_thresholds(owner: &str, t: &LinkThresholds, out: &mut Vec<Violation>) {
    let ok = t.max_density.is_finite()
        && t.max_density > 0.0
        && t.max_queue.is_finite()
        && t.max_queue > 0.0
        && t.min_speed_ratio > 0.0
        && t.min_speed_ratio <= 1.0;
    if !ok {
        out.push(Violation::error(
            "policy-invalid-threshold",
            owner,
            format!(
                "thresholds must be positive with min_speed_ratio in (0,1]: {:?}",
                t
            ),
        ));
    }
}

/// Check every structural invariant of the network. Never fails; the
/// violations are the result.
pub fn validate_network(net: &RoadNetwork) -> ValidationReport {
    let mut out = Vec::new();

    if net.is_empty() {
        out.push(Violation::error("empty-network", "", "empty network"));
        return ValidationReport::from_violations(out);
    }

    // Element ids share one namespace across nodes, links and segments.
    let mut seen: HashMap<&str, &'static str> = HashMap::new();
    let all_ids = net
        .nodes()
        .iter()
        .map(|n| (n.id.as_str(), "node"))
        .chain(net.links().iter().map(|l| (l.id.as_str(), "link")))
        .chain(
            net.control_segments()
                .iter()
                .map(|s| (s.id.as_str(), "control segment")),
        );
    for (id, kind) in all_ids {
        if let Some(prev) = seen.insert(id, kind) {
            out.push(Violation::error(
                "duplicate-id",
                id,
                format!("id used by a {prev} and a {kind}"),
            ));
        }
    }
    let mut rp_seen = HashSet::new();
    for rp in net.route_parts() {
        if !rp_seen.insert(rp.id.as_str()) {
            out.push(Violation::error(
                "duplicate-id",
                rp.id.as_str(),
                "duplicate route part id",
            ));
        }
    }

    for l in net.links() {
        for (end, id) in [("from", &l.from), ("to", &l.to)] {
            if net.node(id.as_str()).is_none() {
                out.push(Violation::error(
                    "link-dangling-endpoint",
                    l.id.as_str(),
                    format!("{end} node {id} does not exist"),
                ));
            }
        }
        let attrs_ok = l.length.is_finite()
            && l.length > 0.0
            && l.capacity.is_finite()
            && l.capacity > 0.0
            && l.free_flow_speed.is_finite()
            && l.free_flow_speed > 0.0
            && l.lanes >= 1;
        if !attrs_ok {
            out.push(Violation::error(
                "link-invalid-attribute",
                l.id.as_str(),
                "length, capacity and free_flow_speed must be > 0 and lanes >= 1",
            ));
        }
        if net.policy().link_threshold(&l.id).is_none() {
            out.push(Violation::error(
                "policy-unresolved-threshold",
                l.id.as_str(),
                format!(
                    "no per-link threshold and no defaults for class '{}'",
                    net.policy().road_class(&l.id)
                ),
            ));
        }
    }

    // Weak connectivity over the nodes that links reference.
    let mut parent: Vec<usize> = (0..net.nodes().len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut referenced = Vec::new();
    for li in 0..net.links().len() {
        if let Some((f, t)) = net.link_ends(li) {
            referenced.push(f);
            referenced.push(t);
            let (a, b) = (find(&mut parent, f), find(&mut parent, t));
            if a != b {
                parent[a] = b;
            }
        }
    }
    if let Some(&first) = referenced.first() {
        let root = find(&mut parent, first);
        let mut stray = Vec::new();
        for &n in &referenced {
            if find(&mut parent, n) != root {
                stray.push(net.nodes()[n].id.as_str());
            }
        }
        stray.sort();
        stray.dedup();
        for id in stray {
            out.push(Violation::error(
                "not-weakly-connected",
                id,
                "node is not connected to the rest of the network",
            ));
        }
    }

    for s in net.control_segments() {
        let sid = s.id.as_str();
        if s.member_links.is_empty() {
            out.push(Violation::error("segment-empty", sid, "no member links"));
        }
        let mut all_exist = true;
        for m in &s.member_links {
            if net.link(m.as_str()).is_none() {
                all_exist = false;
                out.push(Violation::error(
                    "segment-dangling-link",
                    sid,
                    format!("member link {m} does not exist"),
                ));
            }
        }
        if all_exist {
            let connected = s.member_links.windows(2).all(|w| {
                let a = net.link(w[0].as_str()).unwrap();
                let b = net.link(w[1].as_str()).unwrap();
                a.to == b.from
            });
            if !connected {
                out.push(Violation::error(
                    "segment-not-a-path",
                    sid,
                    "member links do not form a connected directed path",
                ));
            }
        }
        if !(s.base_capacity > 0.0 && s.boost_capacity >= s.base_capacity) {
            out.push(Violation::error(
                "segment-capacity-order",
                sid,
                format!(
                    "need 0 < base_capacity <= boost_capacity, got {} / {}",
                    s.base_capacity, s.boost_capacity
                ),
            ));
        }
    }

    let mut link_owners: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for rp in net.route_parts() {
        let rid = rp.id.as_str();
        for (end, id) in [("from", &rp.from_choice), ("to", &rp.to_choice)] {
            match net.node(id.as_str()) {
                Some(n) if n.kind.is_choice() => {}
                Some(_) => out.push(Violation::error(
                    "route-part-endpoint-not-choice",
                    rid,
                    format!("{end} node {id} is not a choice node"),
                )),
                None => out.push(Violation::error(
                    "route-part-endpoint-not-choice",
                    rid,
                    format!("{end} node {id} does not exist"),
                )),
            }
        }
        let members: Vec<_> = rp
            .member_links
            .iter()
            .map(|m| (m, net.link(m.as_str())))
            .collect();
        let mut all_exist = !members.is_empty();
        for (m, l) in &members {
            if l.is_none() {
                all_exist = false;
                out.push(Violation::error(
                    "route-part-dangling-link",
                    rid,
                    format!("member link {m} does not exist"),
                ));
            }
        }
        if all_exist {
            let links: Vec<_> = members.iter().map(|(_, l)| l.unwrap()).collect();
            let chained = links.windows(2).all(|w| w[0].to == w[1].from);
            let anchored =
                links[0].from == rp.from_choice && links[links.len() - 1].to == rp.to_choice;
            if !(chained && anchored) {
                out.push(Violation::error(
                    "route-part-not-a-path",
                    rid,
                    "member links do not form a path between the endpoints",
                ));
            }
            for l in &links[..links.len() - 1] {
                if net.node(l.to.as_str()).is_some_and(|n| n.kind.is_choice()) {
                    out.push(Violation::error(
                        "route-part-interior-choice",
                        rid,
                        format!("interior node {} is a choice node", l.to),
                    ));
                }
            }
        }
        if rp.member_links.is_empty() {
            out.push(Violation::error(
                "route-part-not-a-path",
                rid,
                "route part has no member links",
            ));
        }
        for alt in &rp.alternatives {
            let ok = net
                .route_part(alt.as_str())
                .is_some_and(|a| a.from_choice == rp.from_choice && a.to_choice == rp.to_choice);
            if !ok || alt == &rp.id {
                out.push(Violation::error(
                    "route-part-alternative-invalid",
                    rid,
                    format!("alternative {alt} missing or not sharing both endpoints"),
                ));
            }
        }
        for m in &rp.member_links {
            link_owners.entry(m.as_str()).or_default().push(rid);
        }
    }
    for (link, owners) in link_owners {
        if owners.len() > 1 {
            out.push(Violation::info(
                "route-part-overlap",
                link,
                format!("link shared by route parts {}", owners.join(", ")),
            ));
        }
    }

    let policy = net.policy();
    for (class, t) in &policy.class_thresholds {
        check_link_thresholds(&format!("class:{class}"), t, &mut out);
    }
    for (link, t) in &policy.link_thresholds {
        check_link_thresholds(link.as_str(), t, &mut out);
        if net.link(link.as_str()).is_none() {
            out.push(Violation::error(
                "policy-unknown-element",
                link.as_str(),
                "threshold for a link that does not exist",
            ));
        }
    }
    for link in policy.road_function.keys() {
        if net.link(link.as_str()).is_none() {
            out.push(Violation::error(
                "policy-unknown-element",
                link.as_str(),
                "road function for a link that does not exist",
            ));
        }
    }
    let rp_thresholds = policy
        .route_part_thresholds
        .iter()
        .map(|(k, v)| (k.as_str().to_owned(), v))
        .chain(
            policy
                .default_route_part_threshold
                .iter()
                .map(|v| ("default".to_owned(), v)),
        );
    for (rp, t) in rp_thresholds {
        if !(t.max_travel_time_ratio.is_finite() && t.max_travel_time_ratio >= 1.0) {
            out.push(Violation::error(
                "policy-invalid-threshold",
                rp.as_str(),
                format!(
                    "max_travel_time_ratio must be >= 1, got {}",
                    t.max_travel_time_ratio
                ),
            ));
        }
    }
    for rp in policy.route_part_thresholds.keys() {
        if net.route_part(rp.as_str()).is_none() {
            out.push(Violation::error(
                "policy-unknown-element",
                rp.as_str(),
                "threshold for a route part that does not exist",
            ));
        }
    }
    for rp in net.route_parts() {
        if policy.route_part_threshold(&rp.id).is_none() {
            out.push(Violation::error(
                "policy-unresolved-threshold",
                rp.id.as_str(),
                "no route part threshold and no default",
            ));
        }
    }

    for area in net.areas() {
        for e in &area.elements {
            if net.resolve(e.as_str()).is_none() {
                out.push(Violation::error(
                    "area-dangling-element",
                    area.id.as_str(),
                    format!("element {e} does not exist"),
                ));
            }
        }
    }

    ValidationReport::from_violations(out)
}
