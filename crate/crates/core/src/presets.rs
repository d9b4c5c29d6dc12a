//! Built-in device presets, parsed from `presets/devices.toml`.

use std::collections::BTreeMap;

use crate::device::{ReducedParams, SmtjParams};
use crate::error::{Error, Result};

/// Raw text of the bundled preset file.
pub const PRESET_TOML: &str = include_str!("../presets/devices.toml");

pub fn reduced() -> BTreeMap<String, ReducedParams> {
    toml::from_str(PRESET_TOML).expect("bundled preset file parses")
}

pub fn names() -> Vec<String> {
    reduced().into_keys().collect()
}

pub fn device(name: &str) -> Result<SmtjParams> {
    let table = reduced();
    let r = table.get(name).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown device preset {name:?} (known: {})",
            table.keys().cloned().collect::<Vec<_>>().join(", ")
        ))
    })?;
    SmtjParams::from_reduced(r)
}
