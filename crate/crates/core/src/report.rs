//! Plain CSV writers. Numbers use Rust's shortest round-trip formatting, so
//! output is independent of locale; absent values are empty fields.

use std::io::{self, Write};

use crate::mission::MissionLog;
use crate::scene::Scenario;

pub const MISSION_HEADER: &str = "hover_idx,x,y,z,snr_db,d_re,triggered,doa_x,doa_y,doa_z,sx,sy,sz,loc_err_m";
pub const EVAL_HEADER: &str = "scenario,h_m,rho,accuracy,n_trials,seed";
pub const RATES_HEADER: &str = "scenario,h_m,rho,hit_rate,false_alarm_rate";
pub const LOSS_HEADER: &str = "epoch,loss";
pub const SUMMARY_HEADER: &str = "seed,hovers,triggers,threshold,final_error_m,median_ray_distance_m";
pub const MANIFEST_HEADER: &str = "file,kind,scenario,seed,seconds,level_db,full_scale_pa,clipped";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_mission_csv(w: &mut impl Write, log: &MissionLog) -> io::Result<()> {
    writeln!(w, "{MISSION_HEADER}")?;
    for r in &log.records {
        let u = r.doa.as_ref().map(|d| d.u);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.hover_idx,
            r.position.x,
            r.position.y,
            r.position.z,
            opt(r.snr_db),
            r.d_re,
            u8::from(r.triggered),
            opt(u.map(|u| u.x)),
            opt(u.map(|u| u.y)),
            opt(u.map(|u| u.z)),
            opt(r.fused.map(|s| s.x)),
            opt(r.fused.map(|s| s.y)),
            opt(r.fused.map(|s| s.z)),
            opt(r.loc_err_m),
        )?;
    }
    Ok(())
}

/// One line per mission run.
pub fn write_summary_csv(w: &mut impl Write, runs: &[(u64, &MissionLog)]) -> io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for (seed, log) in runs {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            seed,
            log.records.len(),
            log.trigger_count(),
            log.threshold,
            opt(log.final_error()),
            opt(log.median_ray_distance()),
        )?;
    }
    Ok(())
}

/// One detection-sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub scenario: Scenario,
    pub h_m: f64,
    pub rho: f64,
    pub accuracy: f64,
    pub hit_rate: f64,
    pub false_alarm_rate: f64,
    pub n_trials: usize,
    pub seed: u64,
}

pub fn write_eval_csv(w: &mut impl Write, rows: &[EvalRow]) -> io::Result<()> {
    writeln!(w, "{EVAL_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.scenario, r.h_m, r.rho, r.accuracy, r.n_trials, r.seed
        )?;
    }
    Ok(())
}

pub fn write_rates_csv(w: &mut impl Write, rows: &[EvalRow]) -> io::Result<()> {
    writeln!(w, "{RATES_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.scenario, r.h_m, r.rho, r.hit_rate, r.false_alarm_rate
        )?;
    }
    Ok(())
}

/// Epochs are numbered from 1.
pub fn write_loss_csv(w: &mut impl Write, losses: &[f64]) -> io::Result<()> {
    writeln!(w, "{LOSS_HEADER}")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub file: String,
    pub kind: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub seconds: f64,
    pub level_db: f64,
    pub full_scale_pa: f64,
    pub clipped: usize,
}

pub fn write_manifest_csv(w: &mut impl Write, rows: &[ManifestRow]) -> io::Result<()> {
    writeln!(w, "{MANIFEST_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.file, r.kind, r.scenario, r.seed, r.seconds, r.level_db, r.full_scale_pa, r.clipped
        )?;
    }
    Ok(())
}

/// Parses a manifest written by [`write_manifest_csv`].
pub fn parse_manifest_csv(text: &str) -> Result<Vec<ManifestRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == MANIFEST_HEADER => {}
        other => return Err(format!("unexpected manifest header {other:?}")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(format!("row {}: expected 8 fields, got {}", i + 1, f.len()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1));
        rows.push(ManifestRow {
            file: f[0].to_string(),
            kind: f[1].to_string(),
            scenario: f[2].parse().map_err(|e| format!("row {}: {e}", i + 1))?,
            seed: f[3].parse().map_err(|e| format!("row {}: {e}", i + 1))?,
            seconds: num(f[4])?,
            level_db: num(f[5])?,
            full_scale_pa: num(f[6])?,
            clipped: f[7].parse().map_err(|e| format!("row {}: {e}", i + 1))?,
        });
    }
    Ok(rows)
}
