//! Reference tables of the catalog queries and checkers returning every
//! disagreeing cell.

use dtm_core::catalog::{Catalog, DeploymentScale, ElementKind, EndUserType, StrategyLevel};
use dtm_core::strategy::{Census, PlanningReport};
use serde_json::Value;
use std::collections::BTreeMap;

pub const TABLES: &str = include_str!("../fixtures/tables.json");

/// Outcome of one table comparison.
#[derive(Debug, Default)]
pub struct Check {
    pub cells: usize,
    pub mismatches: Vec<String>,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }

    fn cell(&mut self, what: String, expected: bool, actual: bool) {
        self.cells += 1;
        if expected != actual {
            self.mismatches
                .push(format!("{what}: expected {expected}, got {actual}"));
        }
    }
}

fn tables() -> Value {
    serde_json::from_str(TABLES).expect("fixture parses")
}

/// `(columns, rows)` of a grid table, `x` marking a set cell.
fn grid(name: &str) -> (Vec<String>, Vec<(String, Vec<bool>)>) {
    let t = &tables()[name];
    let columns: Vec<String> = serde_json::from_value(t["columns"].clone()).unwrap();
    let rows = t["rows"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| {
            let cells: Vec<bool> = v.as_str().unwrap().chars().map(|c| c == 'x').collect();
            assert_eq!(cells.len(), columns.len(), "row {k}");
            (k.clone(), cells)
        })
        .collect();
    (columns, rows)
}

fn parse<T: std::str::FromStr>(s: &str) -> T
where
    T::Err: std::fmt::Debug,
{
    s.parse().unwrap()
}

pub fn bundles(cat: &Catalog) -> Check {
    let (cols, rows) = grid("bundles");
    let mut c = Check::default();
    for (svc, cells) in rows {
        for (col, &want) in cols.iter().zip(&cells) {
            let t: EndUserType = parse(col);
            let got = cat.bundle_for(t).iter().any(|s| s.as_str() == svc);
            c.cell(format!("{svc}/{col}"), want, got);
        }
    }
    c
}

/// Contribution cells of `table` (`generic_contributions` or
/// `site_contributions`) plus the indirect-only flags.
pub fn contributions(cat: &Catalog, table: &str) -> Check {
    let (cols, rows) = grid(table);
    let mut c = Check::default();
    for (svc, cells) in rows {
        for (col, &want) in cols.iter().zip(&cells) {
            let l: StrategyLevel = parse(col);
            let got = cat
                .services_for_strategy(l, false)
                .iter()
                .any(|s| s.as_str() == svc);
            c.cell(format!("{svc}/{col}"), want, got);
        }
    }
    let indirect: Vec<String> = tables()[table]
        .get("indirect")
        .map(|v| serde_json::from_value(v.clone()).unwrap())
        .unwrap_or_default();
    for svc in &indirect {
        let got = cat.get(svc).is_some_and(|d| d.indirect);
        c.cell(format!("{svc}/indirect"), true, got);
        let companion = cat
            .companion_services(false)
            .iter()
            .any(|s| s.as_str() == svc);
        c.cell(format!("{svc}/companion"), true, companion);
    }
    c
}

pub fn applicability(cat: &Catalog) -> Check {
    let (cols, rows) = grid("applicability");
    let mut c = Check::default();
    for (kind, cells) in rows {
        let k: ElementKind = serde_json::from_value(Value::String(kind.clone())).unwrap();
        let services = cat.applicable_services(k, false);
        for (svc, &want) in cols.iter().zip(&cells) {
            let got = services.iter().any(|s| s.as_str() == svc);
            c.cell(format!("{svc}/{kind}"), want, got);
        }
    }
    c
}

/// Deployment-scale grouping and census of a planning report.
pub fn planning(report: &PlanningReport) -> Check {
    let t = tables();
    let want: BTreeMap<DeploymentScale, Vec<String>> =
        serde_json::from_value(t["site_scales"].clone()).unwrap();
    let mut c = Check::default();
    for scale in DeploymentScale::ALL {
        let mut expected = want.get(&scale).cloned().unwrap_or_default();
        let mut actual: Vec<String> = report
            .deployment_scales
            .get(&scale)
            .map(|v| v.iter().map(|s| s.to_string()).collect())
            .unwrap_or_default();
        expected.sort();
        actual.sort();
        c.cells += 1;
        if expected != actual {
            c.mismatches
                .push(format!("{scale:?}: expected {expected:?}, got {actual:?}"));
        }
    }
    let census = Census::from_value(&t["site_census"]).unwrap();
    c.cells += 1;
    if census != report.end_user_census {
        c.mismatches.push(format!(
            "census: expected {:?}, got {:?}",
            census.0, report.end_user_census.0
        ));
    }
    c
}
