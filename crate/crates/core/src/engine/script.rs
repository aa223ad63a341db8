//! Operator scripts: one `{tick, command, ...}` record per line.

use super::{CommandRequest, Engine, EngineError};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub tick: u64,
    #[serde(flatten)]
    pub request: CommandRequest,
}

/// Parse a script, skipping blank lines and `#` comments. Errors carry the
/// 1-based line number.
pub fn parse_script(text: &str) -> Result<Vec<ScriptLine>, Vec<String>> {
    let mut out = Vec::new();
    let mut errs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        match serde_json::from_str::<ScriptLine>(t) {
            Ok(l) => out.push(l),
            Err(e) => errs.push(format!("script line {}: {e}", i + 1)),
        }
    }
    if errs.is_empty() {
        out.sort_by_key(|l| l.tick);
        Ok(out)
    } else {
        Err(errs)
    }
}

/// Run to `ticks`, submitting each line just before its tick is simulated.
/// Lines at or after `ticks` are not applied. Stops at the first rejected
/// command.
pub fn run_script(
    engine: &mut Engine,
    script: &[ScriptLine],
    ticks: u64,
) -> Result<(), (u64, EngineError)> {
    let mut next = 0;
    while engine.tick() < ticks {
        while next < script.len() && script[next].tick <= engine.tick() {
            let line = &script[next];
            engine
                .submit(line.request.clone())
                .map_err(|e| (line.tick, e))?;
            next += 1;
        }
        if engine.tick() >= ticks {
            break;
        }
        engine.advance();
    }
    Ok(())
}
