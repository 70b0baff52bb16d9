//! Two-stage search mission and detection-accuracy evaluation.
//!
//! At every hover the sentinel scores one single-channel clip. A trigger
//! pulls a window from the ring buffer, estimates a direction with the full
//! array, and adds a weighted ray to the running cross-point fit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{fuse, FusedEstimate, FusionError, Observation};
use crate::geometry::{ArraySpec, GeometryError, PosedArray, Vec3};
use crate::localization::{
    compute_tdoas, default_max_lag, solve_doa, DoAEstimate, LocalizationError, DEFAULT_RESIDUAL_BOUND,
};
use crate::mae::{sentinel_detect, MaeError, MaeModel};
use crate::ring_buffer::{RingBuffer, RingBufferError};
use crate::scene::{
    background_noise, compose_test_clip, gen_signal, propagate, seconds_to_samples, set_level, MultiChannelClip,
    Scenario, SceneError, SignalKind, Waveform, INJECTION_SECONDS, SPEED_OF_SOUND, TEST_CLIP_SECONDS,
};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] MaeError),
    #[error(transparent)]
    Buffer(#[from] RingBufferError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("invalid mission config: {0}")]
    Config(String),
}

/// Independent seed for stream `stream` of run `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over the combined value.
    let mut z = seed
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sub_seed2(seed: u64, a: u64, b: u64) -> u64 {
    sub_seed(sub_seed(seed, a), b)
}

const STREAM_NOISE: u64 = 1;
const STREAM_BURST: u64 = 2;
const STREAM_MASK: u64 = 3;
const STREAM_PHASE: u64 = 4;
const STREAM_CALIBRATION: u64 = 5;
const STREAM_TRIAL: u64 = 6;

/// Altitudes evaluated per scenario.
pub fn paper_altitudes(scenario: Scenario) -> [f64; 4] {
    match scenario {
        Scenario::Desert => [5.0, 10.0, 15.0, 20.0],
        Scenario::Forest => [15.0, 20.0, 35.0, 50.0],
    }
}

pub fn paper_altitude(scenario: Scenario) -> f64 {
    match scenario {
        Scenario::Desert => 5.0,
        Scenario::Forest => 15.0,
    }
}

/// Corner points of the search path: takeoff, end of the y leg, end of the
/// x leg.
pub fn build_paper_trajectory(scenario: Scenario) -> Vec<Vec3> {
    trajectory_at(paper_altitude(scenario))
}

pub fn trajectory_at(h: f64) -> Vec<Vec3> {
    vec![
        Vec3::new(-500.0, -4.0, h),
        Vec3::new(-500.0, 5.0, h),
        Vec3::new(200.0, 5.0, h),
    ]
}

/// Hover points along the polyline: every corner plus interior points every
/// `spacing` metres along each leg.
pub fn hover_points(waypoints: &[Vec3], spacing: f64) -> Vec<Vec3> {
    let mut out = Vec::new();
    let Some(first) = waypoints.first() else {
        return out;
    };
    out.push(*first);
    for pair in waypoints.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let len = (b - a).norm();
        let full = (len / spacing + 1e-9).floor() as usize;
        for k in 1..=full {
            let p = a + (b - a) * (k as f64 * spacing / len);
            if (p - b).norm() > 1e-9 {
                out.push(p);
            }
        }
        out.push(b);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionConfig {
    pub scenario: Scenario,
    pub altitude_m: f64,
    pub victim_m: [f64; 3],
    /// Corner points; empty means the standard path at `altitude_m`.
    #[serde(default)]
    pub waypoints: Vec<[f64; 3]>,
    pub hover_spacing_m: f64,
    pub cruise_speed_mps: f64,
    pub retro_s: f64,
    pub post_s: f64,
    pub buffer_s: f64,
    pub victim_enabled: bool,
    pub burst_s: f64,
    pub burst_period_s: f64,
    /// Fixed detection threshold; absent means calibrate on noise.
    pub threshold: Option<f64>,
    pub calibration_clips: usize,
    pub calibration_margin: f64,
    pub residual_bound: f64,
    pub array: ArraySpec,
    pub seed: u64,
}

impl MissionConfig {
    pub fn paper(scenario: Scenario) -> Self {
        Self {
            scenario,
            altitude_m: paper_altitude(scenario),
            victim_m: [0.0, 0.0, 0.0],
            waypoints: Vec::new(),
            hover_spacing_m: 10.0,
            cruise_speed_mps: 4.0,
            retro_s: 0.5,
            post_s: 0.5,
            buffer_s: 12.0,
            victim_enabled: true,
            burst_s: 1.0,
            burst_period_s: 3.0,
            threshold: None,
            calibration_clips: 200,
            calibration_margin: 0.1,
            residual_bound: DEFAULT_RESIDUAL_BOUND,
            array: ArraySpec::default(),
            seed: 0,
        }
    }

    pub fn corner_points(&self) -> Vec<Vec3> {
        if self.waypoints.is_empty() {
            trajectory_at(self.altitude_m)
        } else {
            self.waypoints.iter().map(|w| Vec3::new(w[0], w[1], w[2])).collect()
        }
    }

    pub fn hovers(&self) -> Vec<Vec3> {
        hover_points(&self.corner_points(), self.hover_spacing_m)
    }

    pub fn victim(&self) -> Vec3 {
        Vec3::new(self.victim_m[0], self.victim_m[1], self.victim_m[2])
    }

    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |m: &str| Err(MissionError::Config(m.to_string()));
        if !(self.hover_spacing_m > 0.0) {
            return bad("hover_spacing_m must be positive");
        }
        if !(self.cruise_speed_mps > 0.0) {
            return bad("cruise_speed_mps must be positive");
        }
        if !(self.retro_s >= 0.0 && self.post_s >= 0.0 && self.retro_s + self.post_s > 0.0) {
            return bad("retro_s and post_s must be non-negative with a positive sum");
        }
        if !(self.burst_s > 0.0 && self.burst_period_s >= self.burst_s) {
            return bad("need 0 < burst_s <= burst_period_s");
        }
        if !(self.buffer_s >= self.retro_s + self.post_s) {
            return bad("buffer_s shorter than the extraction window");
        }
        if self.threshold.is_none() && self.calibration_clips == 0 {
            return bad("calibration_clips must be positive when no threshold is given");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub sentinel_calls: usize,
    pub gcc_calls: usize,
    pub extractions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoverRecord {
    pub hover_idx: usize,
    pub position: Vec3,
    /// Mission time at the start of the dwell, seconds.
    pub time: f64,
    /// Absent when no victim sound reached the array.
    pub snr_db: Option<f64>,
    pub d_re: f64,
    pub triggered: bool,
    pub doa: Option<DoAEstimate>,
    pub fused: Option<Vec3>,
    pub loc_err_m: Option<f64>,
    /// Distance from the true victim to this hover's ray.
    pub ray_distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionLog {
    pub records: Vec<HoverRecord>,
    pub observations: Vec<Observation>,
    pub final_estimate: Option<FusedEstimate>,
    pub threshold: f64,
    pub counters: Counters,
    pub degenerate_fuses: usize,
}

impl MissionLog {
    pub fn trigger_count(&self) -> usize {
        self.records.iter().filter(|r| r.triggered).count()
    }

    pub fn final_error(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.loc_err_m)
    }

    /// Median distance from the victim to the rays of triggered hovers.
    pub fn median_ray_distance(&self) -> Option<f64> {
        let mut d: Vec<f64> = self.records.iter().filter_map(|r| r.ray_distance_m).collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f64::total_cmp);
        let n = d.len();
        Some(if n % 2 == 1 {
            d[n / 2]
        } else {
            0.5 * (d[n / 2 - 1] + d[n / 2])
        })
    }
}

/// Detection threshold set just above the noise-only score distribution:
/// the largest score over `clips` fresh noise clips, times `1 + margin`.
pub fn calibrate_threshold(
    scorer: &dyn Fn(&[f64], u64) -> Result<f64, MaeError>,
    scenario: Scenario,
    clip_seconds: f64,
    clips: usize,
    margin: f64,
    seed: u64,
) -> Result<f64, MissionError> {
    let mut max = f64::NEG_INFINITY;
    for i in 0..clips as u64 {
        let s = sub_seed2(seed, STREAM_CALIBRATION, i);
        let noise = background_noise(scenario, clip_seconds, s)?;
        max = max.max(scorer(&noise.samples, s)?);
    }
    Ok(max * (1.0 + margin))
}

/// Model scoring function with the mask seeded by `seed`.
pub fn model_scorer(model: &MaeModel) -> impl Fn(&[f64], u64) -> Result<f64, MaeError> + '_ {
    move |clip: &[f64], seed: u64| Ok(model.score(clip, seed)?.0)
}

struct VictimSource<'a> {
    cfg: &'a MissionConfig,
    phase: f64,
    fs: u32,
}

impl VictimSource<'_> {
    fn burst_kind(&self, j: i64) -> SignalKind {
        if sub_seed2(self.cfg.seed, STREAM_BURST, j as u64) & 1 == 0 {
            SignalKind::VictimCry
        } else {
            SignalKind::VictimShout
        }
    }

    /// Source signal emitted over `[start, start + len / fs)`, pascals at
    /// 1 m.
    fn emitted(&self, start: f64, len: usize) -> Result<Option<Waveform>, MissionError> {
        let fs = self.fs as f64;
        let end = start + len as f64 / fs;
        let period = self.cfg.burst_period_s;
        let first = ((start - self.phase - self.cfg.burst_s) / period).floor() as i64;
        let last = ((end - self.phase) / period).ceil() as i64;
        let mut out = vec![0.0; len];
        let mut any = false;
        let level = self.cfg.scenario.profile().victim_level_db;
        for j in first.max(0)..=last {
            let b0 = self.phase + j as f64 * period;
            let b1 = b0 + self.cfg.burst_s;
            if b1 <= start || b0 >= end {
                continue;
            }
            let seed = sub_seed2(self.cfg.seed, STREAM_BURST, j as u64);
            let burst = set_level(&gen_signal(self.burst_kind(j), self.cfg.burst_s, seed)?, level)?;
            let offset = ((b0 - start) * fs).round() as i64;
            for (k, &v) in burst.samples.iter().enumerate() {
                let i = offset + k as i64;
                if i >= 0 && (i as usize) < len {
                    out[i as usize] = v;
                    any = true;
                }
            }
        }
        Ok(any.then(|| Waveform::new(out, self.fs)))
    }

    /// Victim sound received at every mic during `[t, t + len / fs)`.
    fn received(&self, posed: &PosedArray, t: f64, len: usize) -> Result<Option<MultiChannelClip>, MissionError> {
        let victim = self.cfg.victim();
        let fs = self.fs as f64;
        let dists: Vec<f64> = posed.world_positions().iter().map(|p| (p - victim).norm()).collect();
        let d_max = dists.iter().cloned().fold(0.0, f64::max);
        let d_min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let pad = crate::dsp::SINC_HALF_WIDTH as usize + 2;
        let pre = (d_max / SPEED_OF_SOUND * fs).ceil() as usize + pad;
        let post = pad.saturating_sub((d_min / SPEED_OF_SOUND * fs) as usize);
        let span = pre + len + post;
        let start = t - pre as f64 / fs;
        let Some(source) = self.emitted(start, span)? else {
            return Ok(None);
        };
        let alpha = self.cfg.scenario.profile().alpha;
        let heard = propagate(victim, posed, &source, alpha, SPEED_OF_SOUND)?;
        let clip = heard.slice(pre, len);
        Ok(Some(MultiChannelClip::new(clip.into_channels(), t)?))
    }
}

/// Flies the configured path once.
pub fn run_mission(cfg: &MissionConfig, model: &MaeModel) -> Result<MissionLog, MissionError> {
    cfg.validate()?;
    let array = cfg.array.build()?;
    let fs = model.mel.fs;
    let clip_len = model.mel.clip_samples();
    let clip_s = clip_len as f64 / fs as f64;
    let scorer = model_scorer(model);
    let threshold = match cfg.threshold {
        Some(t) => t,
        None => calibrate_threshold(
            &scorer,
            cfg.scenario,
            clip_s,
            cfg.calibration_clips,
            cfg.calibration_margin,
            cfg.seed,
        )?,
    };
    let max_lag = default_max_lag(array.radius(), SPEED_OF_SOUND);
    let mut phase_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, STREAM_PHASE));
    let source = VictimSource {
        cfg,
        phase: phase_rng.random_range(0.0..cfg.burst_period_s),
        fs,
    };
    let victim = cfg.victim();

    let mut buffer = RingBuffer::new(array.count(), fs, cfg.buffer_s);
    let mut counters = Counters::default();
    let mut observations = Vec::new();
    let mut records = Vec::new();
    let mut fused: Option<FusedEstimate> = None;
    let mut degenerate_fuses = 0;
    let mut time = 0.0;
    let hovers = cfg.hovers();
    for (idx, &p) in hovers.iter().enumerate() {
        if idx > 0 {
            time += clip_s + (p - hovers[idx - 1]).norm() / cfg.cruise_speed_mps;
        }
        let posed = array.pose_at(p);
        let noise_channels = (0..array.count())
            .map(|m| {
                background_noise(
                    cfg.scenario,
                    clip_s,
                    sub_seed2(cfg.seed, STREAM_NOISE, (idx * 64 + m) as u64),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let noise = MultiChannelClip::new(noise_channels, time)?;
        let heard = if cfg.victim_enabled {
            source.received(&posed, time, clip_len)?
        } else {
            None
        };
        let snr_db = heard.as_ref().and_then(|v| {
            let s = v.channel(0).rms();
            (s > 0.0).then(|| 20.0 * (s / noise.channel(0).rms()).log10())
        });
        let clip = match &heard {
            Some(v) => noise.mixed_with(v)?,
            None => noise,
        };
        let clip_start = buffer.clock();
        buffer.push(&clip)?;

        counters.sentinel_calls += 1;
        let verdict = sentinel_detect(
            clip.channel(0),
            model,
            threshold,
            sub_seed2(cfg.seed, STREAM_MASK, idx as u64),
        )?;
        let mut record = HoverRecord {
            hover_idx: idx,
            position: p,
            time,
            snr_db,
            d_re: verdict.score,
            triggered: verdict.triggered,
            doa: None,
            fused: None,
            loc_err_m: None,
            ray_distance_m: None,
        };
        if verdict.triggered {
            let t_trig = clip_start + clip_s / 2.0;
            let window = buffer.extract(t_trig, cfg.retro_s, cfg.post_s)?;
            counters.extractions += 1;
            let tdoas = compute_tdoas(&window, max_lag)?;
            counters.gcc_calls += tdoas.tdoas.len();
            let doa = solve_doa(&posed, &tdoas, SPEED_OF_SOUND, cfg.residual_bound)?;
            let obs = Observation::new(p, doa.u, tdoas.mean_peak(), time)?;
            record.ray_distance_m = Some(obs.distance_to(&victim));
            observations.push(obs);
            record.doa = Some(doa);
            if observations.len() >= 2 {
                match fuse(&observations) {
                    Ok(f) => fused = Some(f),
                    Err(FusionError::DegenerateGeometry { .. }) => degenerate_fuses += 1,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        if let Some(f) = &fused {
            record.fused = Some(f.position);
            record.loc_err_m = Some((f.position - victim).norm());
        }
        records.push(record);
    }
    Ok(MissionLog {
        records,
        observations,
        final_estimate: fused,
        threshold,
        counters,
        degenerate_fuses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    /// Trials with a hit on the victim and no trigger on the control.
    pub accuracy: f64,
    pub hit_rate: f64,
    pub false_alarm_rate: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSetup {
    pub scenario: Scenario,
    pub altitude_m: f64,
    pub n_trials: usize,
    pub threshold: f64,
    pub clip_seconds: f64,
    pub seed: u64,
}

/// Scores of consecutive clips of a single-channel recording, with the
/// `[start, end)` time span of each clip.
fn slide(
    scorer: &dyn Fn(&[f64], u64) -> Result<f64, MaeError>,
    samples: &[f64],
    clip_len: usize,
    fs: u32,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>, MaeError> {
    let mut out = Vec::new();
    let mut k = 0;
    while (k + 1) * clip_len <= samples.len() {
        let s = scorer(&samples[k * clip_len..(k + 1) * clip_len], sub_seed(seed, k as u64))?;
        let t0 = (k * clip_len) as f64 / fs as f64;
        out.push((t0, t0 + clip_len as f64 / fs as f64, s));
        k += 1;
    }
    Ok(out)
}

/// Detection accuracy over `n_trials` synthetic 12 s recordings with a 2 s
/// victim call injected directly below the UAV (`d = h`).
pub fn eval_detection(
    scorer: &dyn Fn(&[f64], u64) -> Result<f64, MaeError>,
    setup: &DetectionSetup,
) -> Result<DetectionResult, MissionError> {
    if setup.n_trials == 0 {
        return Err(MissionError::Config("n_trials must be at least 1".into()));
    }
    let fs = crate::scene::SAMPLE_RATE;
    let clip_len = seconds_to_samples(setup.clip_seconds, fs);
    let profile = setup.scenario.profile();
    let gain = profile.attenuation(setup.altitude_m);
    let (mut hits, mut alarms, mut successes) = (0, 0, 0);
    for trial in 0..setup.n_trials as u64 {
        let seed = sub_seed2(setup.seed, STREAM_TRIAL, trial);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bg = background_noise(setup.scenario, TEST_CLIP_SECONDS, sub_seed(seed, 1))?;
        let mut call = Vec::with_capacity(seconds_to_samples(INJECTION_SECONDS, fs));
        for part in 0..2 {
            let kind = if rng.random_bool(0.5) {
                SignalKind::VictimCry
            } else {
                SignalKind::VictimShout
            };
            let piece = set_level(
                &gen_signal(kind, INJECTION_SECONDS / 2.0, sub_seed(seed, 2 + part))?,
                profile.victim_level_db,
            )?;
            call.extend(piece.samples.iter().map(|v| v * gain));
        }
        let inject_at = rng.random_range(0.0..=(TEST_CLIP_SECONDS - INJECTION_SECONDS));
        let background = MultiChannelClip::new(vec![bg], 0.0)?;
        let victim = MultiChannelClip::new(vec![Waveform::new(call, fs)], 0.0)?;
        let (test, label) = compose_test_clip(&background, &victim, inject_at)?;

        let scored = slide(scorer, &test.channel(0).samples, clip_len, fs, sub_seed(seed, 10))?;
        let hit = scored
            .iter()
            .any(|&(a, b, s)| label.overlaps(a, b) && s > setup.threshold);
        let control = slide(scorer, &background.channel(0).samples, clip_len, fs, sub_seed(seed, 11))?;
        let alarm = control.iter().any(|&(_, _, s)| s > setup.threshold);
        hits += hit as usize;
        alarms += alarm as usize;
        successes += (hit && !alarm) as usize;
    }
    let n = setup.n_trials as f64;
    Ok(DetectionResult {
        accuracy: successes as f64 / n,
        hit_rate: hits as f64 / n,
        false_alarm_rate: alarms as f64 / n,
        n_trials: setup.n_trials,
    })
}
