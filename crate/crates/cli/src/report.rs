use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bcnn::metrics::{ConfusionCounts, Metrics};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

/// Everything a command reports. The JSON file and the text rendering are
/// produced from the same value.
#[derive(Debug, Default, Serialize)]
pub struct RunReport {
    pub command: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Input name to SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionCounts>,
    /// Wall-clock seconds per phase. Measurements, not reproducible.
    pub timing_s: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub sizes: BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Map::is_empty")]
    pub details: Map<String, Value>,
}

impl RunReport {
    pub fn new(seed: Option<u64>) -> Self {
        RunReport {
            command: std::env::args().collect(),
            seed,
            ..Default::default()
        }
    }

    pub fn digest_file(&mut self, name: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(name.into(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn set_metrics(&mut self, m: &Metrics, c: ConfusionCounts) {
        for (name, v) in m.entries() {
            self.metrics
                .insert(name.into(), v.map_or_else(|| json!("undefined"), |v| json!(v)));
        }
        self.confusion = Some(c);
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details
            .insert(key.into(), serde_json::to_value(value).expect("serializable"));
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("serializable")
    }

    /// Flat `key = value` lines, one per leaf of the JSON value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        flatten("", &self.to_json(), &mut out);
        out
    }

    /// Prints the text form; with `path`, also writes the JSON there and the
    /// text beside it.
    pub fn emit(&self, path: Option<&Path>) -> Result<()> {
        let text = self.to_text();
        print!("{text}");
        if let Some(path) = path {
            let json = serde_json::to_string_pretty(&self.to_json())? + "\n";
            fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
            let txt = text_path(path);
            fs::write(&txt, text).with_context(|| format!("writing {}", txt.display()))?;
        }
        Ok(())
    }
}

pub fn text_path(report: &Path) -> PathBuf {
    let mut s = report.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                flatten(&key(k), v, out);
            }
        }
        Value::Array(a) if a.iter().all(|x| !x.is_object() && !x.is_array()) => {
            let items: Vec<String> = a.iter().map(scalar).collect();
            writeln!(out, "{prefix} = [{}]", items.join(", ")).unwrap();
        }
        Value::Array(a) => {
            for (i, v) in a.iter().enumerate() {
                flatten(&key(&i.to_string()), v, out);
            }
        }
        other => writeln!(out, "{prefix} = {}", scalar(other)).unwrap(),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
