//! TOML configuration: one optional table per subcommand, keyed like the
//! long flags. Flags given on the command line override file values.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Error that maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub generate: Option<toml::Table>,
    pub simulate: Option<toml::Table>,
    pub estimate: Option<toml::Table>,
    pub verify_appendix: Option<toml::Table>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))
    }
}

/// File values first, then every flag that was given on top.
pub fn overlay<T: Serialize + DeserializeOwned>(flags: T, file: Option<toml::Table>) -> Result<T, UsageError> {
    let Some(mut table) = file else {
        return Ok(flags);
    };
    let given = toml::Table::try_from(&flags).map_err(|e| UsageError(e.to_string()))?;
    for (k, v) in given {
        table.insert(k, v);
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("config file: {}", e.message())))
}

fn check_keys(base: &toml::Table, over: &toml::Table, path: &str) -> Result<(), String> {
    // empty tables in the base are open maps (per-column settings)
    if base.is_empty() {
        return Ok(());
    }
    for (k, v) in over {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match (base.get(k), v) {
            (None, _) => return Err(format!("unknown key `{here}`")),
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => check_keys(b, o, &here)?,
            _ => {}
        }
    }
    Ok(())
}

fn deep_merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies a partial table of overrides to a fully specified value.
pub fn merge_into<T: Serialize + DeserializeOwned>(base: &T, over: toml::Table) -> Result<T, String> {
    let mut table = toml::Table::try_from(base).map_err(|e| e.to_string())?;
    check_keys(&table, &over, "")?;
    deep_merge(&mut table, over);
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| e.message().to_string())
}
