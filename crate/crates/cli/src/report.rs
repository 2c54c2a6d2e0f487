//! Report serialization and run manifests.
//!
//! JSON reports are canonical: object keys sorted and every float rounded to
//! ten decimal places, so reruns with the same flags are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Decimal places kept for floats in reports.
pub const DECIMALS: i32 = 10;

/// Argument keys naming file locations; they do not enter the config hash,
/// so the same configuration hashes equally wherever its files live.
const LOCATION_KEYS: [&str; 4] = ["data", "model_file", "transcript", "out_dir"];

pub fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(0.0);
            let scale = 10f64.powi(DECIMALS);
            let mut r = (x * scale).round() / scale;
            if !r.is_finite() {
                r = x;
            }
            if r == 0.0 {
                r = 0.0; // drop the sign of -0
            }
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Canonical JSON text of `value`.
pub fn canonical_json(value: &impl Serialize) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Rounds a single float the same way reports do.
pub fn rounded(x: f64) -> f64 {
    let mut v = serde_json::json!(x);
    round_value(&mut v);
    v.as_f64().unwrap_or(x)
}

/// Collects the files a command writes.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        self.text(name, &canonical_json(value)?)
    }

    /// Writes `rows` under `header` as CSV; floats use report rounding.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.text(name, &String::from_utf8(bytes)?)
    }

    /// Records a file written by other means (e.g. a streamed transcript).
    pub fn record(&mut self, name: &str) {
        self.written.push(name.to_string());
    }

    pub fn finish(mut self, manifest: ManifestInputs) -> Result<PathBuf> {
        let name = format!("manifest-{}.json", manifest.command);
        self.written.push(name.clone());
        let config_hash = {
            let mut hashed = manifest.arguments.clone();
            if let Some(obj) = hashed.as_object_mut() {
                for k in LOCATION_KEYS {
                    obj.remove(k);
                }
            }
            let text = canonical_json(&hashed)?;
            let digest = Sha256::digest(text.as_bytes());
            digest
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect::<String>()
        };
        let record = RunManifest {
            command: manifest.command,
            dataset: manifest.dataset,
            seed: manifest.seed,
            config_hash,
            arguments: manifest.arguments,
            started_unix_ms: manifest.started_unix_ms,
            finished_unix_ms: unix_ms(),
            outputs: self.written.clone(),
        };
        let path = self.path(&name);
        fs::write(&path, canonical_json(&record)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub enum Cell {
    Int(usize),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => rounded(*v).to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

pub struct ManifestInputs {
    pub command: &'static str,
    pub dataset: Option<String>,
    pub seed: u64,
    pub arguments: Value,
    pub started_unix_ms: u128,
}

/// What a command read, how it was configured and what it wrote.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub dataset: Option<String>,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of `arguments`, file locations excluded.
    pub config_hash: String,
    pub arguments: Value,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<String>,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_canonical() {
        let v = serde_json::json!({"b": 0.1 + 0.2, "a": [-1e-13, 2.0, 7], "c": "x"});
        let s = canonical_json(&v).unwrap();
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.contains("0.3\n") || s.contains("0.3,"), "{s}");
        assert!(!s.contains("-0.0"));
        assert_eq!(rounded(0.123456789012345), 0.1234567890);
    }
}
