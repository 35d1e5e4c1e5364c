//! Run configuration: one declarative `key = value` sections file (TOML
//! grammar), with command-line overrides applied on top. Every typed lookup
//! failure names the exact field, so a bad config dies early, machine-
//! readably, and with a pointer to what to fix.

use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};
use toml::value::{Table, Value};

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

pub fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    table: Table,
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| field_err(&shown, format!("unreadable: {e}")))?;
        let table: Table =
            text.parse().map_err(|e| field_err(&shown, format!("parse error: {e}")))?;
        Ok(Self { table })
    }

    /// One `--override section.key=value` (bare `key=value` for top-level
    /// entries). The value is parsed as integer, float, bool, or list before
    /// falling back to a string.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let Some((key, raw)) = spec.split_once('=') else {
            return Err(field_err("--override", format!("expected KEY=VALUE, got `{spec}`")));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(field_err("--override", format!("empty key in `{spec}`")));
        }
        self.set(key, parse_value(raw.trim()));
        Ok(())
    }

    pub fn set(&mut self, dotted: &str, value: Value) {
        match dotted.split_once('.') {
            None => {
                self.table.insert(dotted.to_string(), value);
            }
            Some((section, key)) => {
                let entry =
                    self.table.entry(section.to_string()).or_insert(Value::Table(Table::new()));
                if !entry.is_table() {
                    *entry = Value::Table(Table::new());
                }
                entry.as_table_mut().unwrap().insert(key.to_string(), value);
            }
        }
    }

    fn lookup(&self, dotted: &str) -> Option<&Value> {
        match dotted.split_once('.') {
            None => self.table.get(dotted),
            Some((section, key)) => self.table.get(section)?.as_table()?.get(key),
        }
    }

    /// The first present key in `fields` wins; all absent falls back to
    /// `default`. Chains let a global flag (e.g. top-level `cfl`) back every
    /// section's own key.
    pub fn f64_or(&self, fields: &[&str], default: f64) -> Result<f64, ConfigError> {
        for field in fields {
            if let Some(v) = self.lookup(field) {
                return as_f64(v)
                    .ok_or_else(|| field_err(field, format!("expected a number, got {v}")));
            }
        }
        Ok(default)
    }

    pub fn f64_opt(&self, field: &str) -> Result<Option<f64>, ConfigError> {
        match self.lookup(field) {
            None => Ok(None),
            Some(v) => as_f64(v)
                .map(Some)
                .ok_or_else(|| field_err(field, format!("expected a number, got {v}"))),
        }
    }

    pub fn usize_or(&self, fields: &[&str], default: usize) -> Result<usize, ConfigError> {
        for field in fields {
            if let Some(v) = self.lookup(field) {
                return v
                    .as_integer()
                    .and_then(|i| usize::try_from(i).ok())
                    .ok_or_else(|| {
                        field_err(field, format!("expected a nonnegative integer, got {v}"))
                    });
            }
        }
        Ok(default)
    }

    pub fn usize_opt(&self, field: &str) -> Result<Option<usize>, ConfigError> {
        match self.lookup(field) {
            None => Ok(None),
            Some(v) => v
                .as_integer()
                .and_then(|i| usize::try_from(i).ok())
                .map(Some)
                .ok_or_else(|| field_err(field, format!("expected a nonnegative integer, got {v}"))),
        }
    }

    pub fn u64_or(&self, fields: &[&str], default: u64) -> Result<u64, ConfigError> {
        for field in fields {
            if let Some(v) = self.lookup(field) {
                return v
                    .as_integer()
                    .and_then(|i| u64::try_from(i).ok())
                    .ok_or_else(|| {
                        field_err(field, format!("expected a nonnegative integer, got {v}"))
                    });
            }
        }
        Ok(default)
    }

    pub fn bool_or(&self, field: &str, default: bool) -> Result<bool, ConfigError> {
        match self.lookup(field) {
            None => Ok(default),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| field_err(field, format!("expected true or false, got {v}"))),
        }
    }

    pub fn str_or(&self, field: &str, default: &str) -> Result<String, ConfigError> {
        match self.lookup(field) {
            None => Ok(default.to_string()),
            Some(v) => v
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| field_err(field, format!("expected a string, got {v}"))),
        }
    }

    pub fn str_opt(&self, field: &str) -> Result<Option<String>, ConfigError> {
        match self.lookup(field) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| field_err(field, format!("expected a string, got {v}"))),
        }
    }

    pub fn f64_list_opt(&self, field: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(v) = self.lookup(field) else { return Ok(None) };
        let arr = v
            .as_array()
            .ok_or_else(|| field_err(field, format!("expected a list of numbers, got {v}")))?;
        let mut out = Vec::with_capacity(arr.len());
        for item in arr {
            out.push(as_f64(item).ok_or_else(|| {
                field_err(field, format!("expected a list of numbers, found {item}"))
            })?);
        }
        Ok(Some(out))
    }

    /// Hash of the resolved config with keys sorted recursively — stable
    /// under declaration order, so two runs with the same effective settings
    /// share a hash regardless of how the file was written.
    pub fn sha256_hex(&self) -> String {
        let mut canon = String::new();
        canonical(&Value::Table(self.table.clone()), &mut canon);
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The resolved table as JSON with sorted keys, for embedding in the
    /// manifest.
    pub fn as_json(&self) -> serde_json::Value {
        to_sorted_json(&Value::Table(self.table.clone()))
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn parse_value(raw: &str) -> Value {
    if let Ok(i) = raw.parse::<i64>() {
        return Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return Value::Float(f);
    }
    match raw {
        "true" => return Value::Boolean(true),
        "false" => return Value::Boolean(false),
        _ => {}
    }
    if raw.starts_with('[') {
        if let Ok(t) = format!("v = {raw}").parse::<Table>() {
            return t["v"].clone();
        }
    }
    Value::String(raw.trim_matches('"').to_string())
}

/// Deterministic serialization for hashing: sorted keys, `{}`/`[]` JSON-ish
/// shape, floats via Rust's shortest round-trip formatting.
fn canonical(v: &Value, out: &mut String) {
    match v {
        Value::Table(t) => {
            out.push('{');
            let mut keys: Vec<&String> = t.keys().collect();
            keys.sort();
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{key:?}:"));
                canonical(&t[*key], out);
            }
            out.push('}');
        }
        Value::Array(a) => {
            out.push('[');
            for (i, item) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                canonical(item, out);
            }
            out.push(']');
        }
        Value::String(s) => out.push_str(&format!("{s:?}")),
        Value::Integer(i) => out.push_str(&i.to_string()),
        Value::Float(f) => out.push_str(&f.to_string()),
        Value::Boolean(b) => out.push_str(&b.to_string()),
        Value::Datetime(d) => out.push_str(&d.to_string()),
    }
}

fn to_sorted_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Table(t) => {
            let mut keys: Vec<&String> = t.keys().collect();
            keys.sort();
            let mut map = serde_json::Map::new();
            for key in keys {
                map.insert(key.clone(), to_sorted_json(&t[key]));
            }
            serde_json::Value::Object(map)
        }
        Value::Array(a) => serde_json::Value::Array(a.iter().map(to_sorted_json).collect()),
        Value::String(s) => serde_json::Value::String(s.clone()),
        Value::Integer(i) => serde_json::Value::from(*i),
        Value::Float(f) => serde_json::Value::from(*f),
        Value::Boolean(b) => serde_json::Value::Bool(*b),
        Value::Datetime(d) => serde_json::Value::String(d.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_text(text: &str) -> Config {
        Config { table: text.parse().unwrap() }
    }

    #[test]
    fn lookups_and_overrides() {
        let mut cfg = from_text("cfl = 0.4\n[grid]\nn = 128\n");
        assert_eq!(cfg.usize_or(&["grid.n"], 256).unwrap(), 128);
        assert_eq!(cfg.f64_or(&["evolve.cfl", "cfl"], 0.5).unwrap(), 0.4);
        cfg.apply_override("grid.n=64").unwrap();
        cfg.apply_override("scan.energies=[1.0, 2]").unwrap();
        assert_eq!(cfg.usize_or(&["grid.n"], 256).unwrap(), 64);
        assert_eq!(cfg.f64_list_opt("scan.energies").unwrap().unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn type_errors_name_the_field() {
        let cfg = from_text("[grid]\nn = \"lots\"\n");
        let e = cfg.usize_or(&["grid.n"], 256).unwrap_err();
        assert_eq!(e.field, "grid.n");
    }

    #[test]
    fn hash_ignores_declaration_order() {
        let a = from_text("[grid]\nn = 64\nk = 2\n");
        let b = from_text("[grid]\nk = 2\nn = 64\n");
        assert_eq!(a.sha256_hex(), b.sha256_hex());
        let c = from_text("[grid]\nk = 2\nn = 128\n");
        assert_ne!(a.sha256_hex(), c.sha256_hex());
    }
}
