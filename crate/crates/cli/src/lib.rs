//! Config files, dataset generation, training, evaluation and mission runs
//! behind the `skyear` command.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use skyear_core::scene::Scenario;

use config::RunConfig;

/// Loads `config` (or the desert defaults) and applies command-line
/// overrides. `--seed` sets both the global and the mission seed.
pub fn resolve_config(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    scenario: Option<Scenario>,
) -> Result<RunConfig, String> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(scenario.unwrap_or(Scenario::Desert)),
    };
    if let Some(s) = scenario {
        cfg.set_scenario(s);
    }
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.mission.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    cfg.validate()?;
    Ok(cfg)
}
