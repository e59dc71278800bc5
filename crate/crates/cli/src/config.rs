//! Flat `key = value` configuration (TOML without tables). Command-line
//! flags override file values.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use toml::Value;

/// Bad or missing configuration; the CLI exits with status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = Result<T, ConfigError>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, Value>,
    /// Defaults consulted by commands, recorded for the manifest.
    used_defaults: RefCell<BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> ConfigResult<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError(e.message().to_string()))?;
        let mut values = BTreeMap::new();
        for (k, v) in table {
            if matches!(v, Value::Table(_)) {
                return Err(ConfigError(format!("key `{k}`: nested tables are not allowed")));
            }
            values.insert(k, v);
        }
        Ok(Self { values, ..Self::default() })
    }

    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Overrides `key` when a flag was given.
    pub fn set<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), Value::String(v.to_string()));
        }
    }

    pub fn set_default<T: Into<Value>>(&mut self, key: &str, value: T) {
        self.values.entry(key.to_string()).or_insert_with(|| value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn raw(&self, key: &str) -> ConfigResult<String> {
        match self.values.get(key) {
            None => Err(ConfigError(format!("missing required key `{key}`"))),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Array(a)) => Ok(a.iter().map(scalar).collect::<Vec<_>>().join(",")),
            Some(v) => Ok(scalar(v)),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> ConfigResult<T> {
        let s = self.raw(key)?;
        s.trim().parse().map_err(|_| ConfigError(format!("key `{key}`: cannot parse `{s}`")))
    }

    pub fn get_or<T: FromStr + ToString>(&self, key: &str, default: T) -> ConfigResult<T> {
        if self.contains(key) {
            self.get(key)
        } else {
            self.used_defaults.borrow_mut().insert(key.to_string(), default.to_string());
            Ok(default)
        }
    }

    pub fn get_str(&self, key: &str) -> ConfigResult<String> {
        self.raw(key)
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> ConfigResult<Vec<T>> {
        parse_list(key, &self.raw(key)?)
    }

    pub fn get_list_or<T: FromStr>(&self, key: &str, default: &str) -> ConfigResult<Vec<T>> {
        if !self.contains(key) {
            self.used_defaults.borrow_mut().insert(key.to_string(), default.to_string());
            return parse_list(key, default);
        }
        self.get_list(key)
    }

    /// Resolved configuration for the manifest.
    pub fn to_json(&self) -> serde_json::Value {
        let mut all: BTreeMap<String, String> = self.used_defaults.borrow().clone();
        all.extend(self.values.iter().map(|(k, v)| (k.clone(), scalar(v))));
        serde_json::Value::Object(all.into_iter().map(|(k, v)| (k, serde_json::Value::String(v))).collect())
    }
}

fn parse_list<T: FromStr>(key: &str, s: &str) -> ConfigResult<Vec<T>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse().map_err(|_| ConfigError(format!("key `{key}`: cannot parse `{x}`"))))
        .collect()
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(a) => a.iter().map(scalar).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = Config::parse("beta = 1\nlambda = 0.5\ngraph = \"path:2\"\ntimes = [0.5, 1.0]\n").unwrap();
        assert_eq!(c.get::<f64>("beta").unwrap(), 1.0);
        assert_eq!(c.get_list::<f64>("times").unwrap(), vec![0.5, 1.0]);
        c.set("beta", Some(2.5));
        c.set::<f64>("lambda", None);
        assert_eq!(c.get::<f64>("beta").unwrap(), 2.5);
        assert_eq!(c.get::<f64>("lambda").unwrap(), 0.5);
        assert_eq!(c.get_str("graph").unwrap(), "path:2");
        let e = c.get::<f64>("h").unwrap_err();
        assert!(e.0.contains("`h`"));
        assert!(Config::parse("[t]\na = 1").is_err());
        assert!(c.get::<usize>("graph").is_err());
    }
}
