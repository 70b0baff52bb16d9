use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skyear_core::features::MelConfig;
use skyear_core::mae::MaeConfig;
use skyear_core::mission::{paper_altitudes, MissionConfig};
use skyear_core::scene::Scenario;

/// The 17 swept mask ratios: 0.00 to 0.70 in steps of 0.05, then 0.80 and
/// 0.90.
pub fn rho_sweep() -> Vec<f64> {
    let mut r: Vec<f64> = (0..=14).map(|k| (k as f64 * 0.05 * 100.0).round() / 100.0).collect();
    r.extend([0.8, 0.9]);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub noise_clips: usize,
    pub victim_clips: usize,
    /// WAV full scale for noise clips, pascals.
    pub noise_full_scale_pa: f64,
    /// WAV full scale for victim clips (source level at 1 m), pascals.
    pub victim_full_scale_pa: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            noise_clips: 200,
            victim_clips: 20,
            noise_full_scale_pa: 2.0,
            victim_full_scale_pa: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    /// Noise dataset written by `gen`; defaults to `<out>/gen/<scenario>`.
    pub dataset: Option<PathBuf>,
    pub mask_ratios: Vec<f64>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub visible_weight: f64,
    pub init_seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            mask_ratios: vec![0.10],
            lr: 2e-3,
            epochs: 30,
            batch: 8,
            visible_weight: 1.0,
            init_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Altitudes to sweep; empty means the scenario's standard set.
    pub altitudes_m: Vec<f64>,
    pub mask_ratios: Vec<f64>,
    pub n_trials: usize,
    /// Fixed threshold; absent means calibrate each model on noise.
    pub threshold: Option<f64>,
    pub calibration_clips: usize,
    pub calibration_margin: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            altitudes_m: Vec::new(),
            mask_ratios: vec![0.10],
            n_trials: 100,
            threshold: None,
            calibration_clips: 200,
            calibration_margin: 0.1,
        }
    }
}

impl EvalConfig {
    pub fn altitudes(&self, scenario: Scenario) -> Vec<f64> {
        if self.altitudes_m.is_empty() {
            paper_altitudes(scenario).to_vec()
        } else {
            self.altitudes_m.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub scenario: Scenario,
    /// Directory holding checkpoints; defaults to `<out>/pretrain`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Mask ratio of the checkpoint used by `mission`.
    pub mission_rho: f64,
    /// Number of consecutive mission seeds flown by `mission`.
    pub mission_runs: usize,
    pub mel: MelConfig,
    pub mae: MaeConfig,
    pub gen: GenConfig,
    pub pretrain: PretrainConfig,
    pub eval_detect: EvalConfig,
    pub mission: MissionConfig,
}

impl RunConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            scenario,
            checkpoint_dir: None,
            mission_rho: 0.10,
            mission_runs: 1,
            mel: MelConfig::default(),
            mae: MaeConfig::default(),
            gen: GenConfig::default(),
            pretrain: PretrainConfig::default(),
            eval_detect: EvalConfig::default(),
            mission: MissionConfig::paper(scenario),
        }
    }

    /// Parses a config file. Missing sections are an error; every field is
    /// spelled out so the echoed copy is a complete record.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies a scenario override, keeping the mission consistent with it.
    pub fn set_scenario(&mut self, scenario: Scenario) {
        if self.scenario != scenario {
            let seed = self.mission.seed;
            self.scenario = scenario;
            self.mission = MissionConfig {
                seed,
                ..MissionConfig::paper(scenario)
            };
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.mission.scenario != self.scenario {
            return Err(format!(
                "mission.scenario {} differs from scenario {}",
                self.mission.scenario, self.scenario
            ));
        }
        self.mae.validate().map_err(|e| e.to_string())?;
        if !self.mae.matches_mel(&self.mel) {
            return Err("mel image size does not match the patch grid".into());
        }
        self.mission.validate().map_err(|e| e.to_string())?;
        let ratios = self.pretrain.mask_ratios.iter().chain(&self.eval_detect.mask_ratios);
        for &r in ratios.chain(std::iter::once(&self.mission_rho)) {
            if !(0.0..=0.95).contains(&r) {
                return Err(format!("mask ratio {r} outside [0, 0.95]"));
            }
        }
        if self.pretrain.epochs == 0 || self.pretrain.batch == 0 {
            return Err("pretrain epochs and batch must be positive".into());
        }
        if self.eval_detect.n_trials == 0 {
            return Err("eval_detect.n_trials must be positive".into());
        }
        if self.mission_runs == 0 {
            return Err("mission_runs must be positive".into());
        }
        Ok(())
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint_dir.clone().unwrap_or_else(|| self.out.join("pretrain"))
    }

    pub fn checkpoint_path(&self, rho: f64) -> PathBuf {
        self.checkpoint_dir()
            .join(format!("{}_rho{:.2}.ckpt", self.scenario, rho))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.pretrain
            .dataset
            .clone()
            .unwrap_or_else(|| self.out.join("gen").join(self.scenario.as_str()))
    }
}
