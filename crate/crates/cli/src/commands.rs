use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use skyear_core::mae::{load_checkpoint, pretrain, save_checkpoint, MaeModel, MaeParams, TrainHyper, TrainingSet};
use skyear_core::mission::{
    calibrate_threshold, eval_detection, model_scorer, run_mission, sub_seed, DetectionSetup, MissionLog,
};
use skyear_core::report::{
    parse_manifest_csv, write_eval_csv, write_loss_csv, write_manifest_csv, write_mission_csv, write_rates_csv,
    write_summary_csv, EvalRow, ManifestRow,
};
use skyear_core::scene::{background_noise, gen_signal, read_wav, set_level, write_wav, MultiChannelClip, SignalKind};

use crate::config::RunConfig;

const STREAM_GEN_NOISE: u64 = 11;
const STREAM_GEN_VICTIM: u64 = 12;
const STREAM_CALIBRATE: u64 = 13;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Writes the resolved config next to a command's outputs.
fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{}_config.toml", cfg.scenario));
    fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Noise and victim clips as WAV files plus `manifest.csv`. Returns the
/// dataset directory.
pub fn cmd_gen(cfg: &RunConfig) -> Result<PathBuf> {
    echo_config(cfg, &cfg.out.join("gen"))?;
    let dir = cfg.out.join("gen").join(cfg.scenario.as_str());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let seconds = cfg.mel.clip_seconds();
    let mut rows = Vec::new();
    for i in 0..cfg.gen.noise_clips {
        let seed = sub_seed(cfg.seed, STREAM_GEN_NOISE * 1_000_000 + i as u64);
        let w = background_noise(cfg.scenario, seconds, seed)?;
        let file = format!("noise_{i:04}.wav");
        let fs_pa = cfg.gen.noise_full_scale_pa;
        let clipped = write_wav(&dir.join(&file), &MultiChannelClip::new(vec![w.clone()], 0.0)?, fs_pa)?;
        rows.push(ManifestRow {
            file,
            kind: "noise".into(),
            scenario: cfg.scenario,
            seed,
            seconds,
            level_db: w.level_db(),
            full_scale_pa: fs_pa,
            clipped,
        });
    }
    let level = cfg.scenario.profile().victim_level_db;
    for i in 0..cfg.gen.victim_clips {
        let seed = sub_seed(cfg.seed, STREAM_GEN_VICTIM * 1_000_000 + i as u64);
        let kind = if i % 2 == 0 {
            SignalKind::VictimCry
        } else {
            SignalKind::VictimShout
        };
        let w = set_level(&gen_signal(kind, 1.0, seed)?, level)?;
        let file = format!("victim_{i:04}.wav");
        let fs_pa = cfg.gen.victim_full_scale_pa;
        let clipped = write_wav(&dir.join(&file), &MultiChannelClip::new(vec![w.clone()], 0.0)?, fs_pa)?;
        rows.push(ManifestRow {
            file,
            kind: kind.as_str().into(),
            scenario: cfg.scenario,
            seed,
            seconds: 1.0,
            level_db: w.level_db(),
            full_scale_pa: fs_pa,
            clipped,
        });
    }
    let mut w = create(&dir.join("manifest.csv"))?;
    write_manifest_csv(&mut w, &rows)?;
    Ok(dir)
}

/// Noise clips listed in a dataset manifest, in pascals.
pub fn load_noise_clips(dir: &Path) -> Result<Vec<Vec<f64>>> {
    let manifest = dir.join("manifest.csv");
    let text = fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let rows = parse_manifest_csv(&text).map_err(anyhow::Error::msg)?;
    let mut clips = Vec::new();
    for r in rows.iter().filter(|r| r.kind == "noise") {
        let clip = read_wav(&dir.join(&r.file), r.full_scale_pa)?;
        clips.push(clip.channel(0).samples.clone());
    }
    if clips.is_empty() {
        bail!("{} lists no noise clips", manifest.display());
    }
    Ok(clips)
}

/// Trains one model per configured mask ratio. Returns checkpoint paths.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let clips = load_noise_clips(&cfg.dataset_dir())?;
    let dir = cfg.checkpoint_dir();
    echo_config(cfg, &dir)?;
    let mut written = Vec::new();
    for &rho in &cfg.pretrain.mask_ratios {
        let mae = skyear_core::mae::MaeConfig {
            mask_ratio: rho,
            ..cfg.mae
        };
        let model = MaeModel::new(mae, cfg.mel, MaeParams::init(&mae, cfg.pretrain.init_seed))?;
        let set = TrainingSet::from_clips(&model, &clips)?;
        let hyper = TrainHyper {
            lr: cfg.pretrain.lr,
            epochs: cfg.pretrain.epochs,
            batch: cfg.pretrain.batch,
            seed: cfg.seed,
            mask_ratio: rho,
            visible_weight: cfg.pretrain.visible_weight,
        };
        let (params, report) = pretrain(model.params.clone(), &set, &hyper)?;
        let trained = MaeModel::new(mae, cfg.mel, params)?;
        let path = cfg.checkpoint_path(rho);
        save_checkpoint(&path, &trained)?;
        let loss_path = path.with_file_name(format!("{}_rho{:.2}_loss.csv", cfg.scenario, rho));
        let mut w = create(&loss_path)?;
        write_loss_csv(&mut w, &report.epoch_losses)?;
        eprintln!(
            "rho {rho:.2}: loss {:.4} -> {:.4}, wrote {}",
            report.initial_loss,
            report.final_loss,
            path.display()
        );
        written.push(path);
    }
    Ok(written)
}

/// Detection accuracy for every (altitude, mask ratio) pair. Returns the
/// accuracy CSV path.
pub fn cmd_eval_detect(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.join("eval_detect");
    echo_config(cfg, &dir)?;
    let ev = &cfg.eval_detect;
    let mut rows = Vec::new();
    for (k, &rho) in ev.mask_ratios.iter().enumerate() {
        let path = cfg.checkpoint_path(rho);
        let model = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
        let scorer = model_scorer(&model);
        let clip_seconds = model.mel.clip_seconds();
        let threshold = match ev.threshold {
            Some(t) => t,
            None => calibrate_threshold(
                &scorer,
                cfg.scenario,
                clip_seconds,
                ev.calibration_clips,
                ev.calibration_margin,
                sub_seed(cfg.seed, STREAM_CALIBRATE * 1_000 + k as u64),
            )?,
        };
        for h in ev.altitudes(cfg.scenario) {
            let setup = DetectionSetup {
                scenario: cfg.scenario,
                altitude_m: h,
                n_trials: ev.n_trials,
                threshold,
                clip_seconds,
                seed: cfg.seed,
            };
            let r = eval_detection(&scorer, &setup)?;
            eprintln!("h {h} rho {rho:.2}: accuracy {:.3}", r.accuracy);
            rows.push(EvalRow {
                scenario: cfg.scenario,
                h_m: h,
                rho,
                accuracy: r.accuracy,
                hit_rate: r.hit_rate,
                false_alarm_rate: r.false_alarm_rate,
                n_trials: r.n_trials,
                seed: cfg.seed,
            });
        }
    }
    rows.sort_by(|a, b| a.h_m.total_cmp(&b.h_m).then(a.rho.total_cmp(&b.rho)));
    let path = dir.join(format!("{}.csv", cfg.scenario));
    write_eval_csv(&mut create(&path)?, &rows)?;
    write_rates_csv(&mut create(&dir.join(format!("{}_rates.csv", cfg.scenario)))?, &rows)?;
    Ok(path)
}

/// Flies `mission_runs` consecutive seeds. Returns the per-run log paths.
pub fn cmd_mission(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.out.join("mission");
    echo_config(cfg, &dir)?;
    let path = cfg.checkpoint_path(cfg.mission_rho);
    let model = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
    let mut logs: Vec<(u64, MissionLog)> = Vec::new();
    let mut written = Vec::new();
    for k in 0..cfg.mission_runs as u64 {
        let mut mc = cfg.mission.clone();
        mc.seed = cfg.mission.seed + k;
        let log = run_mission(&mc, &model)?;
        let out = dir.join(format!("{}_seed{}.csv", cfg.scenario, mc.seed));
        write_mission_csv(&mut create(&out)?, &log)?;
        eprintln!(
            "seed {}: {} triggers, final error {}",
            mc.seed,
            log.trigger_count(),
            log.final_error().map_or("-".to_string(), |e| format!("{e:.3} m"))
        );
        written.push(out);
        logs.push((mc.seed, log));
    }
    let refs: Vec<(u64, &MissionLog)> = logs.iter().map(|(s, l)| (*s, l)).collect();
    write_summary_csv(&mut create(&dir.join(format!("{}_summary.csv", cfg.scenario)))?, &refs)?;
    Ok(written)
}
