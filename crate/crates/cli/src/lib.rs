//! `dtm`: validate scenarios, print planning reports, run headless
//! simulations, serve the control API and compare runs.

use clap::{Args, Parser, Subcommand};
use dtm_api::ApiConfig;
use dtm_core::engine::{parse_script, run_script, Engine, EngineOptions};
use dtm_core::kpi::{kpi_delta, KpiReport};
use dtm_core::network::{NetworkDocument, ValidationReport};
use dtm_core::scenario::{
    bundled_names, bundled_sources, kpi_json, read_kpis, read_sources, RunStore, Scenario, Sources,
    NETWORK_FILE,
};
use dtm_core::strategy::answer_six_questions;
use serde_json::{json, Value};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Exit status for a validation or runtime failure.
pub const EXIT_FAILURE: u8 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "dtm",
    version,
    about = "C-ITS bundling and dynamic traffic management engine"
)]
pub struct Cli {
    /// Print failures to stderr as one JSON document.
    #[arg(long, global = true)]
    pub json_errors: bool,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Check every scenario document and print the aggregated report.
    Validate(Target),
    /// Answer the six planning questions for a scenario.
    Plan(Target),
    /// Run a scenario headless, optionally under an operator script.
    Simulate(SimulateArgs),
    /// Serve the control API over a live engine.
    Serve(ServeArgs),
    /// Print KPI deltas from run A to run B.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct Target {
    /// Scenario directory or bundled scenario name.
    pub scenario: String,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: String,
    /// Operator script, one JSON command per line.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long, default_value_t = 360)]
    pub ticks: u64,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run store to record the run in.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub scenario: String,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Static bearer token required on every request.
    #[arg(long)]
    pub token: Option<String>,
    /// Run store listed by GET /runs; the served run is recorded there on exit.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Start with the clock stopped.
    #[arg(long)]
    pub paused: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directory, store holding one run, or kpis.json.
    pub run_a: PathBuf,
    pub run_b: PathBuf,
    #[arg(long)]
    pub json: bool,
}

/// A failure with one line per problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub kind: &'static str,
    pub messages: Vec<String>,
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            messages: vec![message.into()],
        }
    }

    fn io(context: &str, e: std::io::Error) -> Self {
        Self::new("io", format!("{context}: {e}"))
    }
}

type Outcome = Result<(), Failure>;

/// Run one invocation; returns the process exit status.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let r = match &cli.command {
        Cmd::Validate(t) => validate(t, out),
        Cmd::Plan(t) => plan(t, out),
        Cmd::Simulate(a) => simulate(a, out),
        Cmd::Serve(a) => serve(a, out),
        Cmd::Compare(a) => compare(a, out),
    };
    match r {
        Ok(()) => 0,
        Err(f) => {
            if cli.json_errors {
                let errors: Vec<Value> = f
                    .messages
                    .iter()
                    .map(|m| json!({"kind": f.kind, "message": m}))
                    .collect();
                let _ = writeln!(err, "{}", json!({ "errors": errors }));
            } else {
                for m in &f.messages {
                    let _ = writeln!(err, "error: {m}");
                }
            }
            EXIT_FAILURE
        }
    }
}

fn sources(spec: &str) -> Result<Sources, Failure> {
    let p = Path::new(spec);
    if p.is_dir() {
        return read_sources(p).map_err(|e| Failure {
            kind: "scenario",
            messages: e.errors,
        });
    }
    bundled_sources(spec).ok_or_else(|| {
        Failure::new(
            "scenario",
            format!(
                "{spec}: neither a scenario directory nor a bundled scenario ({})",
                bundled_names().collect::<Vec<_>>().join(", ")
            ),
        )
    })
}

fn load(spec: &str) -> Result<Scenario, Failure> {
    Scenario::from_sources(&sources(spec)?).map_err(|e| Failure {
        kind: "scenario",
        messages: e.errors,
    })
}

fn emit(out: &mut dyn Write, text: &str) -> Outcome {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::io("stdout", e))
}

fn validate(t: &Target, out: &mut dyn Write) -> Outcome {
    let src = sources(&t.scenario)?;
    // the network report also carries warnings and notes
    let network: Option<ValidationReport> = src
        .get(NETWORK_FILE)
        .and_then(|text| NetworkDocument::from_json(text).ok())
        .map(|d| d.build().1);
    let result = Scenario::from_sources(&src);
    let errors = result
        .as_ref()
        .err()
        .map(|e| e.errors.clone())
        .unwrap_or_default();
    if t.json {
        let v = json!({
            "scenario": t.scenario,
            "valid": errors.is_empty(),
            "errors": errors,
            "network": network,
            "content_hash": result.as_ref().ok().map(|s| s.content_hash.clone()),
        });
        emit(
            out,
            &format!(
                "{}\n",
                serde_json::to_string_pretty(&v).expect("report serializes")
            ),
        )?;
    } else {
        let mut text = String::new();
        if let Some(r) = &network {
            text.push_str("network:\n");
            for line in r.to_string().lines() {
                text.push_str(&format!("  {line}\n"));
            }
        }
        match &result {
            Ok(s) => text.push_str(&format!("{}: valid ({})\n", s.name(), s.content_hash)),
            Err(e) => text.push_str(&format!("{}: {e}\n", t.scenario)),
        }
        emit(out, &text)?;
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            kind: "scenario",
            messages: errors,
        })
    }
}

fn plan(t: &Target, out: &mut dyn Write) -> Outcome {
    let s = load(&t.scenario)?;
    let report = answer_six_questions(
        &s.network,
        &s.catalog,
        &s.census,
        &s.manifest.common_problems,
    );
    if t.json {
        emit(
            out,
            &format!(
                "{}\n",
                serde_json::to_string_pretty(&report).expect("report serializes")
            ),
        )
    } else {
        emit(out, &report.to_string())
    }
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Outcome {
    let s = load(&a.scenario)?;
    let script = match &a.script {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Failure::io(&p.display().to_string(), e))?;
            parse_script(&text).map_err(|messages| Failure {
                kind: "script",
                messages,
            })?
        }
        None => Vec::new(),
    };
    let seed = a.seed.unwrap_or(s.manifest.seed);
    let mut engine = Engine::new(s.clone(), Some(seed), EngineOptions::default())
        .map_err(|e| Failure::new("engine", e.to_string()))?;
    let outcome = run_script(&mut engine, &script, a.ticks);
    let end = engine.tick();
    let kpis = engine.kpis();
    if let Some(dir) = &a.out {
        let store = RunStore::open(dir).map_err(|e| Failure::io(&dir.display().to_string(), e))?;
        let log = engine.into_log();
        let rec = store
            .record_run(&s, seed, 0, end, &log, &kpis)
            .map_err(|e| Failure::io(&dir.display().to_string(), e))?;
        emit(
            out,
            &format!(
                "recorded {} in {}\n",
                rec.run_id,
                store.run_dir(&rec.run_id).display()
            ),
        )?;
    }
    emit(out, &kpi_json(&kpis))?;
    outcome.map_err(|(tick, e)| {
        Failure::new("script", format!("command at tick {tick} rejected: {e}"))
    })
}

fn serve(a: &ServeArgs, out: &mut dyn Write) -> Outcome {
    let s = load(&a.scenario)?;
    let seed = a.seed.unwrap_or(s.manifest.seed);
    let engine = Engine::new(s.clone(), Some(seed), EngineOptions::default())
        .map_err(|e| Failure::new("engine", e.to_string()))?;
    let config = ApiConfig {
        token: a.token.clone(),
        runs: a.runs.clone(),
        start_paused: a.paused,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::io("runtime", e))?;
    let engine = rt.block_on(async {
        let server = dtm_api::serve(engine, &a.bind, config)
            .await
            .map_err(|e| Failure::new("serve", e.to_string()))?;
        emit(
            out,
            &format!("serving {} on http://{}\n", s.name(), server.local_addr()),
        )?;
        let _ = out.flush();
        server
            .run_until_ctrl_c()
            .await
            .map_err(|e| Failure::new("serve", e.to_string()))
    })?;
    if let Some(dir) = &a.runs {
        let store = RunStore::open(dir).map_err(|e| Failure::io(&dir.display().to_string(), e))?;
        let (end, kpis) = (engine.tick(), engine.kpis());
        let rec = store
            .record_run(&s, seed, 0, end, &engine.into_log(), &kpis)
            .map_err(|e| Failure::io(&dir.display().to_string(), e))?;
        emit(out, &format!("recorded {}\n", rec.run_id))?;
    }
    Ok(())
}

fn kpis_at(p: &Path) -> Result<KpiReport, Failure> {
    read_kpis(p).map_err(|e| Failure::io(&p.display().to_string(), e))
}

fn compare(a: &CompareArgs, out: &mut dyn Write) -> Outcome {
    let (ka, kb) = (kpis_at(&a.run_a)?, kpis_at(&a.run_b)?);
    let delta = kpi_delta(&ka, &kb);
    if a.json {
        let v = json!({"a": ka, "b": kb, "delta": delta});
        return emit(
            out,
            &format!(
                "{}\n",
                serde_json::to_string_pretty(&v).expect("kpis serialize")
            ),
        );
    }
    let row = |k: &str, x: f64, y: f64| format!("{k:<14}{x:>14.3}{y:>14.3}{:>+14.3}\n", y - x);
    let mut text = format!("{:<14}{:>14}{:>14}{:>14}\n", "kpi", "A", "B", "B - A");
    text.push_str(&row("total_delay", ka.total_delay, kb.total_delay));
    text.push_str(&row(
        "throughput",
        ka.throughput as f64,
        kb.throughput as f64,
    ));
    text.push_str(&row("mean_queue", ka.mean_queue, kb.mean_queue));
    text.push_str(&row("max_queue", ka.max_queue as f64, kb.max_queue as f64));
    text.push_str(&row(
        "mode_shifted",
        ka.mode_shifted as f64,
        kb.mode_shifted as f64,
    ));
    emit(out, &text)
}
