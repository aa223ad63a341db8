//! Scenario directories and the run store.
//!
//! A scenario directory holds `scenario.json` (the manifest), `network.json`,
//! `catalog.json` and `demand.json`, plus optional `plans.json` and
//! `effects.json`. The bundled scenarios are compiled in and can be loaded
//! by name.

use crate::bus::{EffectRegistry, EffectsDocument, Gateway};
use crate::catalog::{Catalog, CatalogDocument};
use crate::kpi::KpiReport;
use crate::network::{NetworkDocument, RoadNetwork};
use crate::runlog::RunLog;
use crate::sim::{DemandProfile, Incident, SimConfig};
use crate::strategy::{
    Census, PlansDocument, StrategyRegistry, DEFAULT_CONSECUTIVE_TICKS, DEFAULT_HORIZON,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "scenario.json";
pub const NETWORK_FILE: &str = "network.json";
pub const CATALOG_FILE: &str = "catalog.json";
pub const DEMAND_FILE: &str = "demand.json";
pub const PLANS_FILE: &str = "plans.json";
pub const EFFECTS_FILE: &str = "effects.json";

/// Hash order. Changing it changes every content hash.
const FILES: [&str; 6] = [
    MANIFEST_FILE,
    NETWORK_FILE,
    CATALOG_FILE,
    DEMAND_FILE,
    PLANS_FILE,
    EFFECTS_FILE,
];
const REQUIRED: [&str; 4] = [MANIFEST_FILE, NETWORK_FILE, CATALOG_FILE, DEMAND_FILE];

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn default_consecutive() -> u32 {
    DEFAULT_CONSECUTIVE_TICKS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    /// `{type: count | {count, nonnormative}}`
    #[serde(default = "empty_object")]
    pub census: Value,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub gateways: Vec<Gateway>,
    #[serde(default)]
    pub incidents: Vec<Incident>,
    #[serde(default)]
    pub common_problems: Vec<String>,
    /// Keep informational services on at every problem without waiting for
    /// a strategy.
    #[serde(default)]
    pub always_inform: bool,
    /// Activate automatic proposals without operator confirmation.
    #[serde(default)]
    pub auto_confirm: bool,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_consecutive")]
    pub consecutive_ticks: u32,
    /// Scope strategy variants to select over the defaults, by name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<String>,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

/// Every problem found while loading, one line each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub errors: Vec<String>,
}

impl ScenarioError {
    fn one(msg: impl Into<String>) -> Self {
        Self {
            errors: vec![msg.into()],
        }
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scenario invalid ({} problem(s))", self.errors.len())?;
        for e in &self.errors {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub manifest: Manifest,
    pub network_document: NetworkDocument,
    pub network: Arc<RoadNetwork>,
    pub catalog: Catalog,
    pub demand: DemandProfile,
    pub plans: PlansDocument,
    pub effects: EffectsDocument,
    pub census: Census,
    /// Hex SHA-256 over the canonical form of every input document.
    pub content_hash: String,
}

/// Raw document texts keyed by file name.
pub type Sources = BTreeMap<String, String>;

fn parse<T: for<'de> Deserialize<'de>>(
    file: &str,
    text: Option<&String>,
    errs: &mut Vec<String>,
) -> Option<T> {
    let text = text?;
    match serde_json::from_str(text) {
        Ok(v) => Some(v),
        Err(e) => {
            errs.push(format!("{file}: {e}"));
            None
        }
    }
}

/// Canonical JSON: keys sorted, no insignificant whitespace.
fn canonical(text: &str) -> Option<String> {
    serde_json::from_str::<Value>(text)
        .ok()
        .map(|v| v.to_string())
}

pub fn content_hash(sources: &Sources) -> String {
    let mut h = Sha256::new();
    for f in FILES {
        h.update(f.as_bytes());
        h.update([0]);
        if let Some(t) = sources.get(f) {
            h.update(canonical(t).unwrap_or_else(|| t.clone()).as_bytes());
        }
        h.update([0]);
    }
    hex::encode(h.finalize())
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    /// Build from document texts, collecting every problem.
    pub fn from_sources(sources: &Sources) -> Result<Self, ScenarioError> {
        let mut errs = Vec::new();
        for f in REQUIRED {
            if !sources.contains_key(f) {
                errs.push(format!("missing {f}"));
            }
        }
        let manifest: Option<Manifest> =
            parse(MANIFEST_FILE, sources.get(MANIFEST_FILE), &mut errs);
        let network_document: Option<NetworkDocument> =
            parse(NETWORK_FILE, sources.get(NETWORK_FILE), &mut errs);
        let catalog = sources
            .get(CATALOG_FILE)
            .and_then(|t| match Catalog::from_json(t) {
                Ok(c) => Some(c),
                Err(e) => {
                    errs.push(format!("{CATALOG_FILE}: {e}"));
                    None
                }
            });
        let demand: Option<DemandProfile> = parse(DEMAND_FILE, sources.get(DEMAND_FILE), &mut errs);
        let plans: PlansDocument = match sources.get(PLANS_FILE) {
            Some(t) => parse(PLANS_FILE, Some(t), &mut errs).unwrap_or_default(),
            None => PlansDocument::default(),
        };
        let effects: EffectsDocument = match sources.get(EFFECTS_FILE) {
            Some(t) => parse(EFFECTS_FILE, Some(t), &mut errs).unwrap_or_default(),
            None => EffectsDocument::default(),
        };

        let network = network_document.as_ref().map(|d| {
            let (net, report) = d.build();
            for v in report.errors() {
                errs.push(format!("{NETWORK_FILE}: {v}"));
            }
            net
        });

        let mut census = Census::default();
        if let Some(m) = &manifest {
            if m.schema_version != SCENARIO_SCHEMA_VERSION {
                errs.push(format!(
                    "{MANIFEST_FILE}: unsupported schema_version {}",
                    m.schema_version
                ));
            }
            if m.name.trim().is_empty() {
                errs.push(format!("{MANIFEST_FILE}: name must not be empty"));
            }
            match Census::from_value(&m.census) {
                Ok(c) => census = c,
                Err(e) => errs.extend(e.into_iter().map(|e| format!("{MANIFEST_FILE}: {e}"))),
            }
            errs.extend(
                m.sim
                    .validate()
                    .into_iter()
                    .map(|e| format!("{MANIFEST_FILE}: sim: {e}")),
            );
            if m.horizon == 0 {
                errs.push(format!("{MANIFEST_FILE}: horizon must be >= 1"));
            }
            if m.consecutive_ticks == 0 {
                errs.push(format!("{MANIFEST_FILE}: consecutive_ticks must be >= 1"));
            }
            let mut registry = StrategyRegistry::default();
            for s in &m.strategies {
                if let Err(e) = registry.select(s) {
                    errs.push(format!("{MANIFEST_FILE}: {e}"));
                }
            }
            for g in &m.gateways {
                errs.extend(
                    g.validate()
                        .into_iter()
                        .map(|e| format!("{MANIFEST_FILE}: {e}")),
                );
                if let Some(c) = &catalog {
                    for s in &g.services {
                        if c.get(s.as_str()).is_none() {
                            errs.push(format!(
                                "{MANIFEST_FILE}: gateway {}: unknown service {s}",
                                g.id
                            ));
                        }
                    }
                }
            }
            for i in &m.incidents {
                if !(0.0..1.0).contains(&i.capacity_factor) {
                    errs.push(format!(
                        "{MANIFEST_FILE}: incident {}: capacity_factor outside [0, 1)",
                        i.id
                    ));
                }
                if i.start >= i.end {
                    errs.push(format!(
                        "{MANIFEST_FILE}: incident {}: start must precede end",
                        i.id
                    ));
                }
                if let Some(net) = &network {
                    if net.link(i.link.as_str()).is_none() {
                        errs.push(format!(
                            "{MANIFEST_FILE}: incident {}: unknown link {}",
                            i.id, i.link
                        ));
                    }
                }
            }
        }
        if let Some(net) = &network {
            if let Some(d) = &demand {
                errs.extend(
                    d.validate(net)
                        .into_iter()
                        .map(|e| format!("{DEMAND_FILE}: {e}")),
                );
            }
            let known = |s: &str| catalog.as_ref().is_some_and(|c| c.get(s).is_some());
            errs.extend(
                plans
                    .validate(net, known)
                    .into_iter()
                    .map(|e| format!("{PLANS_FILE}: {e}")),
            );
        }
        errs.extend(
            effects
                .validate(&EffectRegistry::default())
                .into_iter()
                .map(|e| format!("{EFFECTS_FILE}: {e}")),
        );
        if let Some(c) = &catalog {
            for p in effects.profiles.keys() {
                if !c.services().any(|s| s.effect_key() == p) {
                    errs.push(format!("{EFFECTS_FILE}: profile {p} matches no service"));
                }
            }
        }

        if !errs.is_empty() {
            return Err(ScenarioError { errors: errs });
        }
        let (Some(manifest), Some(network_document), Some(network), Some(catalog), Some(demand)) =
            (manifest, network_document, network, catalog, demand)
        else {
            unreachable!("every missing part pushed an error");
        };
        Ok(Self {
            manifest,
            network_document,
            network: Arc::new(network),
            catalog,
            demand,
            plans,
            effects,
            census,
            content_hash: content_hash(sources),
        })
    }

    /// Document texts that load back into an equal scenario.
    pub fn to_sources(&self) -> Sources {
        fn pretty<T: Serialize>(v: &T) -> String {
            let mut s = serde_json::to_string_pretty(v).expect("documents serialize");
            s.push('\n');
            s
        }
        let catalog: CatalogDocument = self.catalog.to_document();
        Sources::from([
            (MANIFEST_FILE.to_owned(), pretty(&self.manifest)),
            (NETWORK_FILE.to_owned(), pretty(&self.network_document)),
            (CATALOG_FILE.to_owned(), pretty(&catalog)),
            (DEMAND_FILE.to_owned(), pretty(&self.demand)),
            (PLANS_FILE.to_owned(), pretty(&self.plans)),
            (EFFECTS_FILE.to_owned(), pretty(&self.effects)),
        ])
    }

    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (f, t) in self.to_sources() {
            fs::write(dir.join(f), t)?;
        }
        Ok(())
    }
}

pub fn read_sources(dir: &Path) -> Result<Sources, ScenarioError> {
    if !dir.is_dir() {
        return Err(ScenarioError::one(format!(
            "{}: not a scenario directory",
            dir.display()
        )));
    }
    let mut out = Sources::new();
    let mut errs = Vec::new();
    for f in FILES {
        let p = dir.join(f);
        match fs::read_to_string(&p) {
            Ok(t) => {
                out.insert(f.to_owned(), t);
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => errs.push(format!("{f}: {e}")),
        }
    }
    if errs.is_empty() {
        Ok(out)
    } else {
        Err(ScenarioError { errors: errs })
    }
}

pub fn load_scenario_dir(dir: &Path) -> Result<Scenario, ScenarioError> {
    Scenario::from_sources(&read_sources(dir)?)
}

macro_rules! bundle {
    ($name:literal) => {
        [
            (
                MANIFEST_FILE,
                include_str!(concat!("../../../scenarios/", $name, "/scenario.json")),
            ),
            (
                NETWORK_FILE,
                include_str!(concat!("../../../scenarios/", $name, "/network.json")),
            ),
            (
                CATALOG_FILE,
                include_str!(concat!("../../../scenarios/", $name, "/catalog.json")),
            ),
            (
                DEMAND_FILE,
                include_str!(concat!("../../../scenarios/", $name, "/demand.json")),
            ),
            (
                PLANS_FILE,
                include_str!(concat!("../../../scenarios/", $name, "/plans.json")),
            ),
            (
                EFFECTS_FILE,
                include_str!(concat!("../../../scenarios/", $name, "/effects.json")),
            ),
        ]
    };
}

const BUNDLED: [(&str, [(&str, &str); 6]); 2] = [
    ("diamond", bundle!("diamond")),
    ("thessaloniki", bundle!("thessaloniki")),
];

/// The generic catalog, independent of any deployment site.
pub const GENERIC_CATALOG: &str = include_str!("../../../catalogs/generic.json");

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled_sources(name: &str) -> Option<Sources> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, files)| {
        files
            .iter()
            .map(|(f, t)| ((*f).to_owned(), (*t).to_owned()))
            .collect()
    })
}

pub fn load_bundled(name: &str) -> Result<Scenario, ScenarioError> {
    let sources = bundled_sources(name)
        .ok_or_else(|| ScenarioError::one(format!("no bundled scenario '{name}'")))?;
    Scenario::from_sources(&sources)
}

/// A directory path, or the name of a bundled scenario.
pub fn load_scenario(spec: &str) -> Result<Scenario, ScenarioError> {
    let p = Path::new(spec);
    if p.is_dir() {
        load_scenario_dir(p)
    } else if let Some(s) = bundled_sources(spec) {
        Scenario::from_sources(&s)
    } else {
        Err(ScenarioError::one(format!(
            "{spec}: neither a scenario directory nor a bundled scenario ({})",
            bundled_names().collect::<Vec<_>>().join(", ")
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub scenario: String,
    pub content_hash: String,
    pub seed: u64,
    pub start_tick: u64,
    pub end_tick: u64,
    /// Relative to the store root.
    pub log_path: String,
    pub kpis: KpiReport,
}

pub const INDEX_FILE: &str = "index.jsonl";
pub const RUNS_DIR: &str = "runs";
pub const LOG_FILE: &str = "run.jsonl";
pub const KPI_FILE: &str = "kpis.json";
pub const RECORD_FILE: &str = "record.json";

/// Append-only run store: `index.jsonl` plus `runs/<id>/` holding the run
/// log, KPI report and record.
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(RUNS_DIR))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, id: &str) -> PathBuf {
        self.root.join(RUNS_DIR).join(id)
    }

    pub fn record_run(
        &self,
        scenario: &Scenario,
        seed: u64,
        start_tick: u64,
        end_tick: u64,
        log: &RunLog,
        kpis: &KpiReport,
    ) -> io::Result<RunRecord> {
        let n = self.list_runs()?.len();
        let run_id = format!("run-{:04}", n + 1);
        let dir = self.run_dir(&run_id);
        fs::create_dir_all(&dir)?;
        log.write_jsonl(io::BufWriter::new(fs::File::create(dir.join(LOG_FILE))?))?;
        fs::write(dir.join(KPI_FILE), kpi_json(kpis))?;
        let record = RunRecord {
            run_id: run_id.clone(),
            scenario: scenario.name().to_owned(),
            content_hash: scenario.content_hash.clone(),
            seed,
            start_tick,
            end_tick,
            log_path: format!("{RUNS_DIR}/{run_id}/{LOG_FILE}"),
            kpis: kpis.clone(),
        };
        fs::write(
            dir.join(RECORD_FILE),
            serde_json::to_string_pretty(&record)? + "\n",
        )?;
        let mut index = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(INDEX_FILE))?;
        writeln!(index, "{}", serde_json::to_string(&record)?)?;
        Ok(record)
    }

    /// Records in insertion order.
    pub fn list_runs(&self) -> io::Result<Vec<RunRecord>> {
        let f = match fs::File::open(self.root.join(INDEX_FILE)) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut out = Vec::new();
        for line in io::BufReader::new(f).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }
}

/// The KPI report as written to disk; byte-stable for equal reports.
pub fn kpi_json(k: &KpiReport) -> String {
    serde_json::to_string_pretty(k).expect("KPI report serializes") + "\n"
}

/// Read a KPI report from a run directory, a store root holding exactly one
/// run, or a `kpis.json` path.
pub fn read_kpis(path: &Path) -> io::Result<KpiReport> {
    let file = if path.is_file() {
        path.to_path_buf()
    } else if path.join(KPI_FILE).is_file() {
        path.join(KPI_FILE)
    } else {
        let runs = RunStore::open(path)?.list_runs()?;
        match runs.as_slice() {
            [only] => path.join(RUNS_DIR).join(&only.run_id).join(KPI_FILE),
            _ => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    format!(
                        "{}: expected a run directory or a store with one run",
                        path.display()
                    ),
                ))
            }
        }
    };
    Ok(serde_json::from_str(&fs::read_to_string(file)?)?)
}
