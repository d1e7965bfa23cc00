//! Parameter resolution: command-line flag, then config file, then default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Bad or missing parameter; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Resolves parameters by flag name and records every resolved value.
#[derive(Debug, Default)]
pub struct Resolver {
    config: Map<String, Value>,
    resolved: BTreeMap<String, Value>,
}

impl Resolver {
    pub fn new(config: Map<String, Value>) -> Self {
        Self { config, resolved: BTreeMap::new() }
    }

    /// Reads a JSON object whose keys mirror the flag names.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(map)) => Ok(Self::new(map)),
            Ok(_) => usage(format!("config {} must hold a JSON object", path.display())),
            Err(e) => usage(format!("config {}: {e}", path.display())),
        }
    }

    pub fn optional<T: Serialize + DeserializeOwned>(&mut self, name: &str, flag: Option<T>) -> Result<Option<T>> {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.config.get(name) {
                Some(Value::Null) | None => None,
                Some(raw) => match serde_json::from_value(raw.clone()) {
                    Ok(v) => Some(v),
                    Err(e) => return usage(format!("config key `{name}`: {e}")),
                },
            },
        };
        if let Some(v) = &value {
            self.resolved.insert(name.to_owned(), serde_json::to_value(v)?);
        }
        Ok(value)
    }

    pub fn get<T: Serialize + DeserializeOwned>(&mut self, name: &str, flag: Option<T>, default: T) -> Result<T> {
        match self.optional(name, flag)? {
            Some(v) => Ok(v),
            None => {
                self.resolved.insert(name.to_owned(), serde_json::to_value(&default)?);
                Ok(default)
            }
        }
    }

    pub fn require<T: Serialize + DeserializeOwned>(&mut self, name: &str, flag: Option<T>) -> Result<T> {
        match self.optional(name, flag)? {
            Some(v) => Ok(v),
            None => usage(format!("missing required parameter --{name}")),
        }
    }

    /// Boolean switch: set by the flag or by a `true` config entry.
    pub fn switch(&mut self, name: &str, flag: bool) -> Result<bool> {
        let on = flag || self.optional::<bool>(name, None)?.unwrap_or(false);
        self.resolved.insert(name.to_owned(), Value::Bool(on));
        Ok(on)
    }

    pub fn into_resolved(self) -> BTreeMap<String, Value> {
        self.resolved
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flags_override_config_override_defaults() {
        let Value::Object(map) = json!({"n": 64, "alpha": 0.1}) else { unreachable!() };
        let mut r = Resolver::new(map);
        assert_eq!(r.get("n", Some(128usize), 8).unwrap(), 128);
        assert_eq!(r.get::<f64>("alpha", None, 0.05).unwrap(), 0.1);
        assert_eq!(r.get::<f64>("rho", None, 0.2).unwrap(), 0.2);
        assert!(r.require::<f64>("sigma", None).is_err());
        let resolved = r.into_resolved();
        assert_eq!(resolved["n"], json!(128));
        assert_eq!(resolved["rho"], json!(0.2));
    }

    #[test]
    fn mistyped_config_is_usage_error() {
        let Value::Object(map) = json!({"n": "many"}) else { unreachable!() };
        let err = Resolver::new(map).get::<usize>("n", None, 8).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
