//! Scenario lookup: the two bundled generator scenarios by name, or any
//! scenario JSON on disk.

use std::path::Path;

use moocpred_core::synth::ScenarioConfig;

use crate::{read_json, Error, Result};

pub const BUNDLED: [&str; 2] = ["small", "medium"];

pub fn is_bundled(name: &str) -> bool {
    BUNDLED.contains(&name)
}

/// The named bundled scenario, seeded with `seed`.
pub fn bundled(name: &str, seed: u64) -> Option<ScenarioConfig> {
    match name {
        "small" => Some(ScenarioConfig::small(seed)),
        "medium" => Some(ScenarioConfig::medium(seed)),
        _ => None,
    }
}

/// Resolves a `--scenario` argument: a bundled name or a JSON file path.
/// A explicit seed overrides whatever the scenario carries.
pub fn resolve(arg: &str, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = match bundled(arg, seed.unwrap_or(0)) {
        Some(cfg) => cfg,
        None => {
            let path = Path::new(arg);
            if !path.is_file() {
                return Err(Error::config(format!(
                    "scenario {arg:?} is neither bundled ({}) nor a file",
                    BUNDLED.join(", ")
                )));
            }
            read_json(path)?
        }
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}
