use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Error carrying the process exit code it should map to.
#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

pub fn coded(code: u8, message: impl Into<String>) -> anyhow::Error {
    Coded { code, message: message.into() }.into()
}

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

/// Identifies the run that produced a result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: BTreeMap<String, Value>,
    pub seed: u64,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, parameters: BTreeMap<String, Value>, seed: u64) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            parameters,
            seed,
            tool_version: TOOL_VERSION.to_string(),
            timestamp: timestamp()?,
        })
    }
}

/// `SOURCE_DATE_EPOCH` when set, otherwise the current time, as RFC 3339.
fn timestamp() -> Result<String> {
    let at: DateTime<Utc> = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(raw) => {
            let secs: i64 = raw
                .trim()
                .parse()
                .map_err(|_| coded(EXIT_USAGE, format!("SOURCE_DATE_EPOCH is not an integer: {raw:?}")))?;
            DateTime::from_timestamp(secs, 0)
                .ok_or_else(|| coded(EXIT_USAGE, format!("SOURCE_DATE_EPOCH out of range: {secs}")))?
        }
        Err(_) => Utc::now(),
    };
    Ok(at.to_rfc3339_opts(SecondsFormat::Secs, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Format written to stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Directory that receives every result file (JSON and CSV).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A command's results: one JSON document and any number of CSV tables.
pub struct Emission {
    pub stem: String,
    pub manifest: RunManifest,
    pub json: Value,
    /// `(file stem, body)`; the first one is what `--format csv` prints.
    pub csv: Vec<(String, String)>,
}

impl Emission {
    pub fn write(&self, args: &OutputArgs) -> Result<()> {
        let json = render_json(&self.json)?;
        if let Some(dir) = &args.out {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{}.json", self.stem));
            fs::write(&path, &json).with_context(|| format!("writing {}", path.display()))?;
            for (stem, body) in &self.csv {
                let path = dir.join(format!("{stem}.csv"));
                fs::write(&path, self.csv_with_manifest(body)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        match args.format {
            Format::Json => print!("{json}"),
            Format::Csv => match self.csv.first() {
                Some((_, body)) => print!("{}", self.csv_with_manifest(body)?),
                None => anyhow::bail!(coded(EXIT_USAGE, "this command has no CSV output")),
            },
        }
        Ok(())
    }

    fn csv_with_manifest(&self, body: &str) -> Result<String> {
        Ok(format!("# manifest: {}\n{body}", serde_json::to_string(&self.manifest)?))
    }
}

pub fn render_json(v: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Serializes `value` and prepends the manifest under the key `manifest`.
pub fn with_manifest<T: Serialize>(manifest: &RunManifest, schema: &str, value: &T) -> Result<Value> {
    let mut obj = serde_json::Map::new();
    obj.insert("schema".into(), Value::String(schema.to_string()));
    obj.insert("manifest".into(), serde_json::to_value(manifest)?);
    match serde_json::to_value(value)? {
        Value::Object(fields) => {
            for (k, v) in fields {
                obj.entry(k).or_insert(v);
            }
        }
        other => {
            obj.insert("result".into(), other);
        }
    }
    Ok(Value::Object(obj))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &PathBuf, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| coded(EXIT_USAGE, format!("reading {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| coded(EXIT_USAGE, format!("parsing {what} {}: {e}", path.display())))
}
