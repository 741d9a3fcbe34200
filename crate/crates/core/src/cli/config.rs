use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::Dims;
use crate::train::TrainConfig;

/// Every tunable setting of a train, eval or bench run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dims: Dims,
    pub test_days: u32,
    pub val_frac: f64,
    pub ha_by_weekday: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dims: Dims::default(),
            test_days: 10,
            val_frac: 0.1,
            ha_by_weekday: false,
        }
    }
}

fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                merge(d.entry(k).or_insert(Value::Null), v);
            }
        }
        (d, s) => *d = s,
    }
}

fn keys(v: &Value, prefix: &str, out: &mut Vec<String>) {
    if let Value::Object(m) = v {
        for (k, child) in m {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            if child.is_object() {
                keys(child, &path, out);
            } else {
                out.push(path);
            }
        }
    }
}

fn slot<'a>(root: &'a mut Map<String, Value>, key: &str) -> Option<&'a mut Value> {
    if let Some((head, rest)) = key.split_once('.') {
        return match root.get_mut(head)? {
            Value::Object(m) => slot(m, rest),
            _ => None,
        };
    }
    if root.contains_key(key) {
        return root.get_mut(key);
    }
    // Bare keys may name a field of a nested section.
    let section = ["train", "dims"]
        .into_iter()
        .find(|s| root.get(*s).and_then(|v| v.get(key)).is_some())?;
    root.get_mut(section)?.get_mut(key)
}

impl RunConfig {
    /// Applies overrides in order. Each is either a JSON file (merged) or a
    /// `key=value` pair, where the key is a field name (`lr`, `hidden`) or a
    /// dotted path (`train.lr`) and the value is JSON or a bare string.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(&self)?;
        for item in overrides {
            if item.ends_with(".json") && Path::new(item).is_file() {
                let file: Value = serde_json::from_slice(&std::fs::read(item)?)?;
                merge(&mut v, file);
                continue;
            }
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("config override '{item}' is not key=value or a .json file")))?;
            let parsed = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
            let root = v.as_object_mut().expect("config is an object");
            match slot(root, key.trim()) {
                Some(target) => *target = parsed,
                None => {
                    let mut all = Vec::new();
                    keys(&v, "", &mut all);
                    return Err(Error::Usage(format!("unknown config key '{key}'; known keys: {}", all.join(", "))));
                }
            }
        }
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Usage(format!("invalid config: {e}")))?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}
