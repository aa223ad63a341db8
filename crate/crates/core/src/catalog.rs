//! Service catalog: C-ITS and traditional traffic-management services, their
//! end-user bundles, strategy contributions, network applicability and
//! deployment status, plus the operator conflict rules between services.

use crate::ids::ServiceId;
pub use crate::network::ElementKind;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const CATALOG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EndUserType {
    #[serde(alias = "driver", alias = "Drivers")]
    Driver,
    #[serde(alias = "vru")]
    VRU,
    #[serde(alias = "public_transport", alias = "PublicTransport")]
    PublicTransportOperator,
    #[serde(alias = "commercial_fleet", alias = "CommercialFleet")]
    CommercialFleetOperator,
    #[serde(alias = "emergency_vehicle", alias = "Emergency")]
    EmergencyVehicle,
}

impl EndUserType {
    pub const ALL: [EndUserType; 5] = [
        EndUserType::Driver,
        EndUserType::VRU,
        EndUserType::PublicTransportOperator,
        EndUserType::CommercialFleetOperator,
        EndUserType::EmergencyVehicle,
    ];

    /// Vulnerable road users walk or cycle and do not load road capacity.
    pub fn is_motorized(self) -> bool {
        self != EndUserType::VRU
    }
}

impl fmt::Display for EndUserType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown end-user type '{0}'")]
pub struct UnknownEndUserType(pub String);

impl FromStr for EndUserType {
    type Err = UnknownEndUserType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| UnknownEndUserType(s.to_owned()))
    }
}

/// The four control strategies, ordered by escalation severity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyLevel {
    #[serde(alias = "inform_traffic")]
    InformTraffic = 1,
    #[serde(alias = "enlarge_outflow")]
    EnlargeOutflow = 2,
    #[serde(alias = "reduce_inflow")]
    ReduceInflow = 3,
    #[serde(alias = "reroute_traffic")]
    RerouteTraffic = 4,
}

impl StrategyLevel {
    pub const ALL: [StrategyLevel; 4] = [
        StrategyLevel::InformTraffic,
        StrategyLevel::EnlargeOutflow,
        StrategyLevel::ReduceInflow,
        StrategyLevel::RerouteTraffic,
    ];

    pub fn severity(self) -> u8 {
        self as u8
    }

    pub fn from_severity(s: u8) -> Option<Self> {
        Self::ALL.get(usize::from(s).checked_sub(1)?).copied()
    }

    pub fn next(self) -> Option<Self> {
        Self::from_severity(self.severity() + 1)
    }

    pub fn previous(self) -> Option<Self> {
        Self::from_severity(self.severity().checked_sub(1)?)
    }

    /// Snake-case name used on the CLI, in the API and in the strategy
    /// registry.
    pub fn name(self) -> &'static str {
        match self {
            StrategyLevel::InformTraffic => "inform_traffic",
            StrategyLevel::EnlargeOutflow => "enlarge_outflow",
            StrategyLevel::ReduceInflow => "reduce_inflow",
            StrategyLevel::RerouteTraffic => "reroute_traffic",
        }
    }

    /// Levels up to and including `self`, least severe first.
    pub fn cumulative(self) -> impl Iterator<Item = StrategyLevel> {
        Self::ALL.into_iter().filter(move |l| *l <= self)
    }
}

impl fmt::Display for StrategyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown strategy level '{0}'")]
pub struct UnknownStrategyLevel(pub String);

impl FromStr for StrategyLevel {
    type Err = UnknownStrategyLevel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| UnknownStrategyLevel(s.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeploymentScale {
    LargeScale,
    LimitedScale,
    ProofOfConcept,
}

impl DeploymentScale {
    pub const ALL: [DeploymentScale; 3] = [
        DeploymentScale::LargeScale,
        DeploymentScale::LimitedScale,
        DeploymentScale::ProofOfConcept,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DeploymentScale::LargeScale => "Large-scale",
            DeploymentScale::LimitedScale => "Limited scale",
            DeploymentScale::ProofOfConcept => "Proof of concept",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServiceCategory {
    #[serde(rename = "C-ITS")]
    Cits,
    #[serde(rename = "TTM")]
    Ttm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMode {
    /// Operator owns the assets; effects are immediate.
    DirectOperatorControl,
    /// Effects reach end users through service providers.
    ViaServiceProvider,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceDescriptor {
    pub id: ServiceId,
    pub name: String,
    pub category: ServiceCategory,
    #[serde(default)]
    pub primary_objective: String,
    #[serde(default)]
    pub contributions: BTreeSet<StrategyLevel>,
    /// Contributes to every strategy only indirectly (sensing). Never
    /// selected for a level; activated alongside any active strategy.
    #[serde(default)]
    pub indirect: bool,
    #[serde(default)]
    pub applicable_elements: BTreeSet<ElementKind>,
    #[serde(default)]
    pub bundled_for: BTreeSet<EndUserType>,
    pub deployment_scale: DeploymentScale,
    pub control_mode: ControlMode,
    pub tm_suitable: bool,
    /// Key into the effect table; defaults to the service id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect_profile: Option<String>,
    /// Listed in the area's inventory of available services.
    #[serde(default = "yes")]
    pub inventory: bool,
}

impl ServiceDescriptor {
    pub fn effect_key(&self) -> &str {
        self.effect_profile
            .as_deref()
            .unwrap_or_else(|| self.id.as_str())
    }

    /// Eligible for automatic strategy composition.
    pub fn is_operational(&self) -> bool {
        self.tm_suitable && self.deployment_scale == DeploymentScale::LargeScale
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resolution {
    PreferA,
    PreferB,
    OperatorDecides,
}

impl Resolution {
    pub fn mirrored(self) -> Self {
        match self {
            Resolution::PreferA => Resolution::PreferB,
            Resolution::PreferB => Resolution::PreferA,
            Resolution::OperatorDecides => Resolution::OperatorDecides,
        }
    }
}

/// Scope value matching every element of the network.
pub const ANY_SCOPE: &str = "*";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConflictRule {
    pub service_a: ServiceId,
    pub service_b: ServiceId,
    /// Element id, area id, or `*`.
    pub scope: String,
    pub resolution: Resolution,
}

impl ConflictRule {
    pub fn mirrored(&self) -> Self {
        ConflictRule {
            service_a: self.service_b.clone(),
            service_b: self.service_a.clone(),
            scope: self.scope.clone(),
            resolution: self.resolution.mirrored(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub services: Vec<serde_json::Value>,
    #[serde(default)]
    pub conflict_rules: Vec<ConflictRule>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("malformed catalog document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported catalog schema_version {0}")]
    UnsupportedSchema(u32),
    #[error("catalog service #{index}: {message}")]
    InvalidService { index: usize, message: String },
    #[error("duplicate service id {0}")]
    DuplicateService(ServiceId),
    #[error("invalid conflict rule {a}/{b}: {message}")]
    InvalidRule {
        a: ServiceId,
        b: ServiceId,
        message: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Catalog {
    name: String,
    services: BTreeMap<ServiceId, ServiceDescriptor>,
    /// Ids in the order they were given.
    order: Vec<ServiceId>,
    rules: Vec<ConflictRule>,
}

impl Catalog {
    pub fn new(
        name: impl Into<String>,
        services: Vec<ServiceDescriptor>,
        rules: Vec<ConflictRule>,
    ) -> Result<Self, CatalogError> {
        let mut map = BTreeMap::new();
        let mut order = Vec::with_capacity(services.len());
        for s in services {
            if map.contains_key(&s.id) {
                return Err(CatalogError::DuplicateService(s.id));
            }
            order.push(s.id.clone());
            map.insert(s.id.clone(), s);
        }
        let mut seen = BTreeSet::new();
        for r in &rules {
            let bad = |message: &str| CatalogError::InvalidRule {
                a: r.service_a.clone(),
                b: r.service_b.clone(),
                message: message.to_owned(),
            };
            if r.service_a == r.service_b {
                return Err(bad("service_a and service_b must differ"));
            }
            if !map.contains_key(&r.service_a) || !map.contains_key(&r.service_b) {
                return Err(bad("rule names a service missing from the catalog"));
            }
            let (lo, hi) = if r.service_a < r.service_b {
                (&r.service_a, &r.service_b)
            } else {
                (&r.service_b, &r.service_a)
            };
            if !seen.insert((lo.clone(), hi.clone(), r.scope.clone())) {
                return Err(bad("more than one rule for this pair and scope"));
            }
        }
        Ok(Catalog {
            name: name.into(),
            services: map,
            order,
            rules,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let doc: CatalogDocument = serde_json::from_str(text)?;
        Self::from_document(doc)
    }

    pub fn from_document(doc: CatalogDocument) -> Result<Self, CatalogError> {
        if doc.schema_version != CATALOG_SCHEMA_VERSION {
            return Err(CatalogError::UnsupportedSchema(doc.schema_version));
        }
        // Parse entries one at a time so the error names the offending one.
        let services = doc
            .services
            .into_iter()
            .enumerate()
            .map(|(index, v)| {
                serde_json::from_value::<ServiceDescriptor>(v).map_err(|e| {
                    CatalogError::InvalidService {
                        index,
                        message: e.to_string(),
                    }
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (index, s) in services.iter().enumerate() {
            if s.indirect && !s.contributions.is_empty() {
                return Err(CatalogError::InvalidService {
                    index,
                    message: format!("{}: indirect services carry no direct contributions", s.id),
                });
            }
        }
        Self::new(doc.name, services, doc.conflict_rules)
    }

    pub fn to_document(&self) -> CatalogDocument {
        CatalogDocument {
            schema_version: CATALOG_SCHEMA_VERSION,
            name: self.name.clone(),
            services: self
                .services_in_order()
                .map(|s| serde_json::to_value(s).expect("descriptor serializes"))
                .collect(),
            conflict_rules: self.rules.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ServiceDescriptor> {
        self.services.get(id)
    }

    /// Services ordered by id.
    pub fn services(&self) -> impl Iterator<Item = &ServiceDescriptor> {
        self.services.values()
    }

    /// Services in the order the catalog document lists them.
    pub fn services_in_order(&self) -> impl Iterator<Item = &ServiceDescriptor> {
        self.order.iter().map(|id| &self.services[id])
    }

    pub fn conflict_rules(&self) -> &[ConflictRule] {
        &self.rules
    }

    pub fn bundle_for(&self, end_user: EndUserType) -> Vec<ServiceId> {
        self.services
            .values()
            .filter(|s| s.bundled_for.contains(&end_user))
            .map(|s| s.id.clone())
            .collect()
    }

    pub fn services_for_strategy(
        &self,
        level: StrategyLevel,
        operational_only: bool,
    ) -> Vec<ServiceId> {
        self.services
            .values()
            .filter(|s| s.contributions.contains(&level))
            .filter(|s| !operational_only || s.is_operational())
            .map(|s| s.id.clone())
            .collect()
    }

    pub fn applicable_services(&self, kind: ElementKind, operational_only: bool) -> Vec<ServiceId> {
        self.services
            .values()
            .filter(|s| s.applicable_elements.contains(&kind))
            .filter(|s| !operational_only || s.is_operational())
            .map(|s| s.id.clone())
            .collect()
    }

    /// Indirect (sensing) services auto-activated next to any strategy.
    pub fn companion_services(&self, operational_only: bool) -> Vec<ServiceId> {
        self.services
            .values()
            .filter(|s| s.indirect)
            .filter(|s| !operational_only || s.is_operational())
            .map(|s| s.id.clone())
            .collect()
    }

    /// Rules between `a` and `b`, oriented so that `service_a == a`.
    pub fn conflicts(&self, a: &str, b: &str) -> Vec<ConflictRule> {
        self.rules
            .iter()
            .filter_map(|r| {
                if r.service_a.as_str() == a && r.service_b.as_str() == b {
                    Some(r.clone())
                } else if r.service_a.as_str() == b && r.service_b.as_str() == a {
                    Some(r.mirrored())
                } else {
                    None
                }
            })
            .collect()
    }
}
