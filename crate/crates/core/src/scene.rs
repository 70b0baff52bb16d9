//! Synthetic acoustic scenes.
//!
//! Sound pressure is carried in pascals, with 94 dB SPL corresponding to
//! 1 Pa RMS. All generators run at [`SAMPLE_RATE`].

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{fractional_delay, rms, shape_spectrum};
use crate::geometry::{PosedArray, Vec3};

/// Global sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;
/// Default speed of sound, m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
/// Length of an evaluation test clip, seconds.
pub const TEST_CLIP_SECONDS: f64 = 12.0;
/// Length of an injected victim segment, seconds.
pub const INJECTION_SECONDS: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot set the level of a silent waveform")]
    SilentInput,
    #[error("unknown signal kind `{0}`")]
    UnknownKind(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("source is {distance:.4} m from mic {mic}; must be more than 0.01 m")]
    SourceTooClose { mic: usize, distance: f64 },
    #[error("injection time {0} s is outside [0, 10] s")]
    InjectionOutOfRange(f64),
    #[error("clip shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("wav i/o: {0}")]
    Wav(#[from] hound::Error),
}

/// Single-channel sampled audio in pascals.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub fs: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, fs: u32) -> Self {
        Self { samples, fs }
    }

    pub fn zeros(len: usize, fs: u32) -> Self {
        Self::new(vec![0.0; len], fs)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// Level in dB SPL.
    pub fn level_db(&self) -> f64 {
        pascal_to_db(self.rms())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.samples.iter().map(|v| v * c).collect(), self.fs)
    }

    pub fn add_assign(&mut self, other: &Waveform) {
        assert_eq!(self.len(), other.len(), "waveform lengths differ");
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += b;
        }
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self::new(self.samples[start..start + len].to_vec(), self.fs)
    }
}

pub fn db_to_pascal(db: f64) -> f64 {
    10f64.powf((db - 94.0) / 20.0)
}

pub fn pascal_to_db(pa: f64) -> f64 {
    94.0 + 20.0 * pa.log10()
}

pub fn seconds_to_samples(t: f64, fs: u32) -> usize {
    (t * fs as f64).round() as usize
}

/// M aligned channels sharing one start time.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelClip {
    channels: Vec<Waveform>,
    pub start_time: f64,
}

impl MultiChannelClip {
    pub fn new(channels: Vec<Waveform>, start_time: f64) -> Result<Self, SceneError> {
        let Some(first) = channels.first() else {
            return Err(SceneError::ShapeMismatch("clip has no channels".into()));
        };
        let (len, fs) = (first.len(), first.fs);
        if channels.iter().any(|c| c.len() != len || c.fs != fs) {
            return Err(SceneError::ShapeMismatch(
                "channels differ in length or sample rate".into(),
            ));
        }
        Ok(Self { channels, start_time })
    }

    pub fn zeros(m: usize, len: usize, fs: u32, start_time: f64) -> Self {
        Self {
            channels: vec![Waveform::zeros(len, fs); m],
            start_time,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fs(&self) -> u32 {
        self.channels[0].fs
    }

    pub fn duration(&self) -> f64 {
        self.channels[0].duration()
    }

    pub fn channel(&self, m: usize) -> &Waveform {
        &self.channels[m]
    }

    pub fn channels(&self) -> &[Waveform] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Waveform> {
        self.channels
    }

    /// Sample-wise sum. Start time is taken from `self`.
    pub fn mixed_with(&self, other: &MultiChannelClip) -> Result<Self, SceneError> {
        if other.channel_count() != self.channel_count() || other.len() != self.len() {
            return Err(SceneError::ShapeMismatch("cannot mix clips of different shape".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.channels.iter_mut().zip(&other.channels) {
            a.add_assign(b);
        }
        Ok(out)
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            channels: self.channels.iter().map(|c| c.slice(start, len)).collect(),
            start_time: self.start_time + start as f64 / self.fs() as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Desert,
    Forest,
}

impl Scenario {
    pub fn profile(self) -> ScenarioProfile {
        ScenarioProfile::paper(self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Desert => "desert",
            Scenario::Forest => "forest",
        }
    }

    pub fn env_kind(self) -> SignalKind {
        match self {
            Scenario::Desert => SignalKind::EnvDesert,
            Scenario::Forest => SignalKind::EnvForest,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desert" => Ok(Scenario::Desert),
            "forest" => Ok(Scenario::Forest),
            other => Err(SceneError::UnknownScenario(other.to_string())),
        }
    }
}

/// Path loss, calibrated levels and detection threshold of one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProfile {
    pub name: Scenario,
    /// Path-loss exponent applied as `1/d^alpha`.
    pub alpha: f64,
    pub env_level_db: f64,
    pub rotor_level_db: f64,
    pub victim_level_db: f64,
    pub threshold: f64,
}

impl ScenarioProfile {
    pub fn paper(name: Scenario) -> Self {
        match name {
            Scenario::Desert => Self {
                name,
                alpha: 2.0,
                env_level_db: 25.0,
                rotor_level_db: 75.0,
                victim_level_db: 120.0,
                threshold: 1.57,
            },
            Scenario::Forest => Self {
                name,
                alpha: 2.5,
                env_level_db: 35.0,
                rotor_level_db: 75.0,
                victim_level_db: 120.0,
                threshold: 1.33,
            },
        }
    }

    /// Amplitude factor `1/d^alpha`.
    pub fn attenuation(&self, d: f64) -> f64 {
        d.powf(-self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Rotor,
    EnvDesert,
    EnvForest,
    VictimCry,
    VictimShout,
}

impl SignalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::Rotor => "rotor",
            SignalKind::EnvDesert => "env_desert",
            SignalKind::EnvForest => "env_forest",
            SignalKind::VictimCry => "victim_cry",
            SignalKind::VictimShout => "victim_shout",
        }
    }
}

impl FromStr for SignalKind {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "rotor" => SignalKind::Rotor,
            "env_desert" => SignalKind::EnvDesert,
            "env_forest" => SignalKind::EnvForest,
            "victim_cry" => SignalKind::VictimCry,
            "victim_shout" => SignalKind::VictimShout,
            other => return Err(SceneError::UnknownKind(other.to_string())),
        })
    }
}

/// Rescales `w` so its RMS matches `target_db` SPL.
pub fn set_level(w: &Waveform, target_db: f64) -> Result<Waveform, SceneError> {
    let current = w.rms();
    if current == 0.0 || !current.is_finite() {
        return Err(SceneError::SilentInput);
    }
    Ok(w.scaled(db_to_pascal(target_db) / current))
}

/// Deterministic synthetic source, normalized to unit RMS.
pub fn gen_signal(kind: SignalKind, duration: f64, seed: u64) -> Result<Waveform, SceneError> {
    if !(duration > 0.0) {
        return Err(SceneError::NonPositiveDuration(duration));
    }
    let fs = SAMPLE_RATE;
    let n = seconds_to_samples(duration, fs).max(1);
    // Mixing the kind into the seed keeps e.g. rotor and desert streams with
    // the same user seed independent.
    let stream = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(kind as u64 + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let samples = match kind {
        SignalKind::Rotor => rotor(n, fs as f64, &mut rng),
        SignalKind::EnvDesert => desert(n, fs as f64, &mut rng),
        SignalKind::EnvForest => forest(n, fs as f64, &mut rng),
        SignalKind::VictimCry => victim(n, fs as f64, (350.0, 600.0), &mut rng),
        SignalKind::VictimShout => victim(n, fs as f64, (150.0, 300.0), &mut rng),
    };
    let w = Waveform::new(samples, fs);
    let r = w.rms();
    Ok(if r > 0.0 { w.scaled(1.0 / r) } else { w })
}

fn white(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalized(mut x: Vec<f64>) -> Vec<f64> {
    let r = rms(&x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v /= r);
    }
    x
}

fn pink(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w = white(n, rng);
    normalized(shape_spectrum(&w, fs, |f| {
        if f < 1.0 {
            0.0
        } else {
            1.0 / f.max(20.0).sqrt()
        }
    }))
}

/// Sum of a few slow sinusoids: a smooth random envelope around 1.
fn slow_envelope(n: usize, fs: f64, depth: f64, rates: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    let parts: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(rates.0..rates.1),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let norm: f64 = parts.iter().map(|p| p.2).sum();
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let s: f64 = parts.iter().map(|&(f, ph, a)| a * (2.0 * PI * f * t + ph).sin()).sum();
            1.0 + depth * s / norm
        })
        .collect()
}

fn rotor(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const HARMONICS: usize = 33;
    let f0 = 180.0 * rng.random_range(0.99..1.01);
    let drift_rate = rng.random_range(0.1..0.4);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let am = slow_envelope(n, fs, 0.15, (0.3, 1.5), rng);
    let coeffs: Vec<Complex<f64>> = (0..HARMONICS)
        .map(|k| Complex::from_polar(((k + 1) as f64).powf(-0.75), rng.random_range(0.0..2.0 * PI)))
        .collect();

    let mut harm = vec![0.0; n];
    let mut phase = 0.0;
    for (i, h) in harm.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let f = f0 * (1.0 + 0.004 * (2.0 * PI * drift_rate * t + drift_phase).sin());
        phase += 2.0 * PI * f / fs;
        let step = Complex::from_polar(1.0, phase);
        let mut z = step;
        let mut acc = 0.0;
        for c in &coeffs {
            acc += (z * c).im;
            z *= step;
        }
        *h = acc * am[i];
    }
    let harm = normalized(harm);

    // Broadband part: gentle high-frequency roll-off with a motor-whine bump.
    let w = white(n, rng);
    let broad = normalized(shape_spectrum(&w, fs, |f| {
        let rolloff = 1.0 / (1.0 + (f / 2500.0).powi(2)).sqrt();
        let whine = 1.0 + 1.5 * (-((f - 3200.0) / 300.0).powi(2)).exp();
        rolloff * whine
    }));
    harm.iter().zip(&broad).map(|(h, b)| h + 0.1 * b).collect()
}

fn desert(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let p = pink(n, fs, rng);
    let gust = slow_envelope(n, fs, 0.4, (0.05, 0.5), rng);
    p.iter().zip(&gust).map(|(x, g)| x * g).collect()
}

fn forest(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = pink(n, fs, rng);
    let gust = slow_envelope(n, fs, 0.2, (0.05, 0.3), rng);
    out.iter_mut().zip(&gust).for_each(|(x, g)| *x *= g);

    // Birdsong-like chirps, about three per second.
    let duration = n as f64 / fs;
    let count = (duration * 3.0 * rng.random_range(0.5..1.5)).round() as usize;
    for _ in 0..count {
        let len = (rng.random_range(0.05..0.2) * fs) as usize;
        let start = rng.random_range(0..n.max(1));
        let f_start = rng.random_range(2000.0..6000.0);
        let f_end = rng.random_range(2000.0..6000.0);
        let amp = rng.random_range(1.0..3.0);
        let mut phase = 0.0;
        for j in 0..len.min(n - start) {
            let u = j as f64 / len as f64;
            let f = f_start + (f_end - f_start) * u;
            phase += 2.0 * PI * f / fs;
            let env = (PI * u).sin().powi(2);
            out[start + j] += amp * env * phase.sin();
        }
    }
    out
}

/// Raised-cosine attack/release envelope.
fn burst_envelope(u: f64, len_s: f64) -> f64 {
    let t = u * len_s;
    let attack = 0.04;
    let release = 0.08;
    if t < attack {
        0.5 - 0.5 * (PI * t / attack).cos()
    } else if t > len_s - release {
        0.5 - 0.5 * (PI * (len_s - t) / release).cos()
    } else {
        1.0
    }
}

fn victim(n: usize, fs: f64, f0_range: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let block = fs as usize;
    let (lo, hi) = f0_range;
    let span = hi - lo;
    let mut block_start = 0;
    while block_start < n {
        let block_len = block.min(n - block_start);
        let burst_s = rng.random_range(0.5..0.85) * block_len as f64 / fs;
        let burst_len = (burst_s * fs) as usize;
        let offset = rng.random_range(0..=(block_len - burst_len.min(block_len)));
        let f_begin = lo + span * rng.random_range(0.0..0.35);
        let f_peak = lo + span * rng.random_range(0.65..1.0);
        let f_end = lo + span * rng.random_range(0.0..0.45);
        let vib_rate = rng.random_range(4.0..7.0);
        let formants = [
            (rng.random_range(700.0..1000.0), 150.0),
            (rng.random_range(1800.0..2800.0), 300.0),
            (rng.random_range(2900.0..3500.0), 400.0),
        ];
        let mut phase = 0.0;
        for j in 0..burst_len {
            let u = j as f64 / burst_len as f64;
            // Arched pitch contour through f_peak.
            let contour = if u < 0.4 {
                f_begin + (f_peak - f_begin) * (u / 0.4)
            } else {
                f_peak + (f_end - f_peak) * ((u - 0.4) / 0.6)
            };
            let f0 = contour * (1.0 + 0.015 * (2.0 * PI * vib_rate * j as f64 / fs).sin());
            phase += 2.0 * PI * f0 / fs;
            let mut acc = 0.0;
            let mut k = 1;
            while (k as f64) * f0 < 5500.0 {
                let f = k as f64 * f0;
                let gain = 0.3
                    + formants
                        .iter()
                        .map(|&(fc, bw)| (-0.5 * ((f - fc) / bw).powi(2)).exp())
                        .sum::<f64>();
                acc += gain / k as f64 * (k as f64 * phase).sin();
                k += 1;
            }
            out[block_start + offset + j] = acc * burst_envelope(u, burst_s);
        }
        block_start += block_len;
    }
    // Breath noise under the voiced bursts.
    let breath = white(n, rng);
    let voiced = rms(&out);
    for (x, b) in out.iter_mut().zip(&breath) {
        *x += 0.05 * voiced * b;
    }
    out
}

/// Rotor plus environment noise at the scenario's calibrated levels, as
/// heard by one microphone.
pub fn background_noise(scenario: Scenario, duration: f64, seed: u64) -> Result<Waveform, SceneError> {
    let profile = scenario.profile();
    let mut rotor = set_level(&gen_signal(SignalKind::Rotor, duration, seed)?, profile.rotor_level_db)?;
    let env = set_level(
        &gen_signal(scenario.env_kind(), duration, seed ^ 0x5EED_0E17)?,
        profile.env_level_db,
    )?;
    rotor.add_assign(&env);
    Ok(rotor)
}

/// Propagates a point source to every mic of `posed`: delay `d_m / v_s`
/// (windowed-sinc fractional delay) and amplitude `1/d_m^alpha`.
///
/// Output channels have the input length; the clip starts at time zero of
/// the source signal, so inter-channel delays are physical.
pub fn propagate(
    source_pos: Vec3,
    posed: &PosedArray,
    signal: &Waveform,
    alpha: f64,
    v_s: f64,
) -> Result<MultiChannelClip, SceneError> {
    let fs = signal.fs as f64;
    let mut channels = Vec::with_capacity(posed.count());
    for m in 0..posed.count() {
        let d = (source_pos - posed.world_position(m)).norm();
        if d <= 0.01 {
            return Err(SceneError::SourceTooClose { mic: m, distance: d });
        }
        let mut x = fractional_delay(&signal.samples, d / v_s * fs);
        let gain = d.powf(-alpha);
        x.iter_mut().for_each(|v| *v *= gain);
        channels.push(Waveform::new(x, signal.fs));
    }
    MultiChannelClip::new(channels, 0.0)
}

/// Ground-truth interval of an injected anomaly, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelInterval {
    pub start: f64,
    pub end: f64,
}

impl LabelInterval {
    pub fn overlaps(&self, start: f64, end: f64) -> bool {
        start < self.end && end > self.start
    }
}

/// Adds a 2 s victim clip into a 12 s background at `inject_at` seconds.
pub fn compose_test_clip(
    background: &MultiChannelClip,
    victim: &MultiChannelClip,
    inject_at: f64,
) -> Result<(MultiChannelClip, LabelInterval), SceneError> {
    let fs = background.fs();
    let max_start = TEST_CLIP_SECONDS - INJECTION_SECONDS;
    if !(0.0..=max_start).contains(&inject_at) {
        return Err(SceneError::InjectionOutOfRange(inject_at));
    }
    if background.len() != seconds_to_samples(TEST_CLIP_SECONDS, fs) {
        return Err(SceneError::ShapeMismatch(format!(
            "background must be {TEST_CLIP_SECONDS} s, got {} s",
            background.duration()
        )));
    }
    if victim.len() != seconds_to_samples(INJECTION_SECONDS, fs) || victim.fs() != fs {
        return Err(SceneError::ShapeMismatch(format!(
            "victim segment must be {INJECTION_SECONDS} s at {fs} Hz"
        )));
    }
    if victim.channel_count() != background.channel_count() {
        return Err(SceneError::ShapeMismatch("channel counts differ".into()));
    }
    let offset = seconds_to_samples(inject_at, fs);
    let mut channels = background.clone().into_channels();
    for (bg, v) in channels.iter_mut().zip(victim.channels()) {
        for (a, b) in bg.samples[offset..offset + v.len()].iter_mut().zip(&v.samples) {
            *a += b;
        }
    }
    let clip = MultiChannelClip::new(channels, background.start_time)?;
    let start = offset as f64 / fs as f64;
    Ok((
        clip,
        LabelInterval {
            start,
            end: start + INJECTION_SECONDS,
        },
    ))
}

/// Writes a clip as 16-bit little-endian PCM. Samples are divided by
/// `full_scale` pascals before quantization; returns the number of clipped
/// samples.
pub fn write_wav(path: &Path, clip: &MultiChannelClip, full_scale: f64) -> Result<usize, SceneError> {
    let spec = hound::WavSpec {
        channels: clip.channel_count() as u16,
        sample_rate: clip.fs(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    let mut clipped = 0;
    for i in 0..clip.len() {
        for ch in clip.channels() {
            let v = ch.samples[i] / full_scale * i16::MAX as f64;
            if v.abs() > i16::MAX as f64 {
                clipped += 1;
            }
            writer.write_sample(v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)?;
        }
    }
    writer.finalize()?;
    Ok(clipped)
}

/// Reads a 16-bit PCM WAV written by [`write_wav`], rescaling to pascals.
pub fn read_wav(path: &Path, full_scale: f64) -> Result<MultiChannelClip, SceneError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let m = spec.channels as usize;
    let mut channels = vec![Vec::new(); m];
    for (i, s) in reader.samples::<i16>().enumerate() {
        channels[i % m].push(s? as f64 / i16::MAX as f64 * full_scale);
    }
    MultiChannelClip::new(
        channels
            .into_iter()
            .map(|c| Waveform::new(c, spec.sample_rate))
            .collect(),
        0.0,
    )
}
