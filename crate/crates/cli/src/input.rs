use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lfp_core::io::{load_session, load_signals, sidecar_path};
use lfp_core::pipeline::PipelineConfig;
use lfp_core::{PhaseLabel, SessionRecord};
use serde::Serialize;

use crate::commands::UsageError;

/// Reads a pipeline configuration; `.toml` files are TOML, anything else
/// is tried as JSON first and TOML second.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let parsed = if is_toml {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text)
            .map_err(|e| e.to_string())
            .or_else(|json_err| toml::from_str(&text).map_err(|_| json_err))
    };
    let config: PipelineConfig =
        parsed.map_err(|e| UsageError(format!("invalid configuration {}: {e}", path.display())))?;
    config
        .check()
        .map_err(|e| UsageError(format!("invalid configuration {}: {e}", path.display())))?;
    Ok(config)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A session from its CSV and sidecar, or from the CSV alone (rate taken
/// from the time column) labelled with `phase`.
pub fn load_record(path: &Path, phase: PhaseLabel) -> Result<SessionRecord> {
    if sidecar_path(path).exists() {
        return load_session(path).with_context(|| format!("loading {}", path.display()));
    }
    let (hip, nac) = load_signals(path, None).with_context(|| format!("loading {}", path.display()))?;
    Ok(SessionRecord::new("subject", phase, None, hip, nac)?)
}

/// Pretty JSON to `out`, or stdout.
pub fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Numeric values of one column of a CSV. A non-numeric first row is taken
/// as a header; `column` selects by header name, otherwise the first column
/// is used.
pub fn read_group(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    let split = |l: &str| l.split(',').map(|f| f.trim().to_string()).collect::<Vec<_>>();
    let mut index = 0;
    if let Some((_, first)) = lines.peek() {
        let fields = split(first);
        let has_header = fields.iter().any(|f| f.parse::<f64>().is_err());
        if has_header {
            if let Some(name) = column {
                index = fields
                    .iter()
                    .position(|f| f == name)
                    .ok_or_else(|| UsageError(format!("{} has no column {name:?}", path.display())))?;
            }
            lines.next();
        } else if column.is_some() {
            bail!(UsageError(format!(
                "{} has no header to select a column from",
                path.display()
            )));
        }
    }
    lines
        .map(|(i, l)| {
            let fields = split(l);
            let field = fields.get(index).map(String::as_str).unwrap_or("");
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .with_context(|| format!("{}: line {}: bad value {field:?}", path.display(), i + 1))
        })
        .collect()
}
