//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test -p skyear-cli --test acceptance`, or pass
//! criterion numbers after `--` to run a subset. The process exits non-zero
//! on a failure only when `SKYEAR_ACCEPT_STRICT=1`.

use std::f64::consts::PI;
use std::fs;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use skyear_cli::commands::cmd_gen;
use skyear_cli::config::RunConfig;
use skyear_core::features::{sample_mask, MaskPartition, MelConfig, PatchGrid};
use skyear_core::fusion::{fuse, FusionError, Observation};
use skyear_core::geometry::{build_circular_array, Vec3};
use skyear_core::localization::{
    angle_deg, compute_tdoas, default_max_lag, gcc_phat_samples, solve_doa, DEFAULT_RESIDUAL_BOUND,
};
use skyear_core::mae::{
    decode, encode, encode_tokens, loss_and_grad, loss_value, pretrain, read_checkpoint, write_checkpoint, MaeConfig,
    MaeModel, MaeParams, TrainHyper, TrainingSet,
};
use skyear_core::mission::{
    calibrate_threshold, eval_detection, model_scorer, run_mission, DetectionSetup, MissionConfig, MissionLog,
};
use skyear_core::report::write_mission_csv;
use skyear_core::ring_buffer::RingBuffer;
use skyear_core::scene::{
    background_noise, gen_signal, set_level, MultiChannelClip, Scenario, SignalKind, Waveform, SAMPLE_RATE,
    SPEED_OF_SOUND,
};

// Criterion 1: DoA solver against a brute-force direction search.
const C1_SCENES: usize = 200;
const C1_MEDIAN_DEG: f64 = 2.0;
const C1_P95_DEG: f64 = 5.0;
const C1_RUNTIME_S: f64 = 5.0;
const C1_SNR_DB: f64 = 20.0;
const C1_GRID_STEP_DEG: f64 = 0.25;

// Criterion 2: GCC-PHAT delay accuracy.
const C2_FRACTIONAL_CASES: usize = 500;
const C2_SNR_DB: f64 = 10.0;
const C2_TOL_SAMPLES: f64 = 0.2;

// Criterion 3: ray fusion.
const C3_SCENES: usize = 100;
const C3_ORACLE_TOL_M: f64 = 1e-3;
const C3_EXACT_TOL_M: f64 = 1e-9;

// Criterion 4: MAE gradients and shapes.
const C4_GRAD_TOL: f64 = 1e-4;
const C4_PERM_TOL: f64 = 1e-6;

// Criterion 5: detection.
const C5_TRAIN_CLIPS: u64 = 200;
const C5_EPOCHS: usize = 30;
const C5_TRAIN_BUDGET_S: f64 = 30.0 * 60.0;
const C5_AUC_MIN: f64 = 0.9;
const C5_AUC_CLIPS: u64 = 100;
const C5_AUC_DISTANCE_M: f64 = 5.0;
const C5_TRIALS: usize = 100;

// Criterion 6: full missions.
const C6_RUNS: u64 = 50;
const C6_QUIET_RUNS: u64 = 3;
const C6_FIRST_SNR_DB: f64 = -10.0;
const C6_FUSED_FRACTION: f64 = 0.8;
const C6_RUNTIME_S: f64 = 120.0;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn white(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Adds independent white noise at `snr_db` relative to the RMS of `x`.
fn add_noise(x: &mut [f64], snr_db: f64, rng: &mut ChaCha8Rng) {
    let sigma = rms(x) * 10f64.powf(-snr_db / 20.0);
    for v in x.iter_mut() {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
}

fn percentile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = ((s.len() - 1) as f64 * q).round() as usize;
    s[idx]
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn criterion_1() -> Outcome {
    let array = build_circular_array(7, 0.25).unwrap();
    let uav = Vec3::new(0.0, 0.0, 0.0);
    let posed = array.pose_at(uav);
    let max_lag = default_max_lag(array.radius(), SPEED_OF_SOUND);
    let fs = SAMPLE_RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut errors = Vec::with_capacity(C1_SCENES);
    let mut elapsed = 0.0;
    let r0 = array.position(0);
    for scene in 0..C1_SCENES {
        let d = rng.random_range(50.0..500.0);
        let az = rng.random_range(0.0..2.0 * PI);
        let el = rng.random_range(20f64.to_radians()..90f64.to_radians());
        let toward = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), -el.sin());
        let source = uav + d * toward;
        let kind = if scene % 2 == 0 {
            SignalKind::VictimCry
        } else {
            SignalKind::VictimShout
        };
        let signal = gen_signal(kind, 1.0, 500 + scene as u64).unwrap();
        let dists: Vec<f64> = posed.world_positions().iter().map(|p| (source - p).norm()).collect();
        let d_min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let channels = dists
            .iter()
            .map(|&dm| {
                let mut x =
                    skyear_core::dsp::fractional_delay(&signal.samples, (dm - d_min) / SPEED_OF_SOUND * fs + 40.0);
                add_noise(&mut x, C1_SNR_DB, &mut rng);
                Waveform::new(x, SAMPLE_RATE)
            })
            .collect();
        let clip = MultiChannelClip::new(channels, 0.0).unwrap();

        let t = Instant::now();
        let tdoas = compute_tdoas(&clip, max_lag).unwrap();
        let est = solve_doa(&posed, &tdoas, SPEED_OF_SOUND, DEFAULT_RESIDUAL_BOUND).unwrap();
        elapsed += t.elapsed().as_secs_f64();

        // Residual sum is the quadratic u^T A u + 2 b^T u + c.
        let mut a = nalgebra::Matrix3::<f64>::zeros();
        let mut b = Vec3::zeros();
        let mut c = 0.0;
        for (m, &tau) in (1..array.count()).zip(&tdoas.tdoas) {
            let g = array.position(m) - r0;
            let y = SPEED_OF_SOUND * tau;
            a += g * g.transpose();
            b += y * g;
            c += y * y;
        }
        let mut best = (f64::INFINITY, Vec3::zeros());
        let steps_az = (360.0 / C1_GRID_STEP_DEG) as usize;
        let steps_el = (90.0 / C1_GRID_STEP_DEG) as usize;
        for i in 0..steps_az {
            let az = (i as f64 * C1_GRID_STEP_DEG).to_radians();
            for j in 0..=steps_el {
                let el = (j as f64 * C1_GRID_STEP_DEG).to_radians();
                let u = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), -el.sin());
                let r = u.dot(&(a * u)) + 2.0 * b.dot(&u) + c;
                if r < best.0 {
                    best = (r, u);
                }
            }
        }
        errors.push(angle_deg(&est.u, &best.1));
    }
    let med = median(&errors);
    let p95 = percentile(&errors, 0.95);
    Outcome::new(
        med <= C1_MEDIAN_DEG && p95 <= C1_P95_DEG && elapsed < C1_RUNTIME_S,
        format!(
            "{C1_SCENES} scenes, median {med:.3} deg (<= {C1_MEDIAN_DEG}), p95 {p95:.3} deg (<= {C1_P95_DEG}), \
             estimation runtime {elapsed:.2} s (< {C1_RUNTIME_S})"
        ),
    )
}

fn criterion_2() -> Outcome {
    let fs = SAMPLE_RATE;
    let max_lag = default_max_lag(0.25, SPEED_OF_SOUND);
    let reach = (max_lag * fs as f64).floor() as isize;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let base = 24.0;

    let mut integer_ok = 0;
    let mut integer_total = 0;
    for k in -reach..=reach {
        let s = white(4096, &mut rng);
        let reference = skyear_core::dsp::fractional_delay(&s, base);
        let x = skyear_core::dsp::fractional_delay(&s, base + k as f64);
        let p = gcc_phat_samples(&x, &reference, fs, max_lag).unwrap();
        integer_total += 1;
        if p.lag == k {
            integer_ok += 1;
        }
    }

    let mut errs = Vec::with_capacity(C2_FRACTIONAL_CASES);
    for _ in 0..C2_FRACTIONAL_CASES {
        let delay = rng.random_range(-(reach as f64) + 0.5..reach as f64 - 0.5);
        let s = white(4096, &mut rng);
        let mut reference = skyear_core::dsp::fractional_delay(&s, base);
        let mut x = skyear_core::dsp::fractional_delay(&s, base + delay);
        add_noise(&mut reference, C2_SNR_DB, &mut rng);
        add_noise(&mut x, C2_SNR_DB, &mut rng);
        let p = gcc_phat_samples(&x, &reference, fs, max_lag).unwrap();
        errs.push((p.tdoa * fs as f64 - delay).abs());
    }
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Outcome::new(
        integer_ok == integer_total && worst <= C2_TOL_SAMPLES,
        format!(
            "integer lags exact {integer_ok}/{integer_total}; fractional at {C2_SNR_DB} dB SNR: max error {worst:.4} \
             samples, median {:.4} (<= {C2_TOL_SAMPLES})",
            median(&errs)
        ),
    )
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

fn fusion_cost(obs: &[Observation], s: &Vec3) -> f64 {
    obs.iter().map(|o| o.weight * o.distance_to(s).powi(2)).sum()
}

/// Grid search over a cube followed by compass pattern search.
fn fusion_oracle(obs: &[Observation], center: Vec3, half: f64) -> Vec3 {
    let n = 20;
    let mut best = (f64::INFINITY, center);
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let s = center
                    + Vec3::new(
                        -half + 2.0 * half * i as f64 / n as f64,
                        -half + 2.0 * half * j as f64 / n as f64,
                        -half + 2.0 * half * k as f64 / n as f64,
                    );
                let c = fusion_cost(obs, &s);
                if c < best.0 {
                    best = (c, s);
                }
            }
        }
    }
    let (mut cost, mut s) = best;
    let mut step = 2.0 * half / n as f64;
    let dirs = [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()];
    while step > 1e-7 {
        let mut improved = false;
        for d in &dirs {
            let cand = s + step * d;
            let c = fusion_cost(obs, &cand);
            if c < cost {
                cost = c;
                s = cand;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    s
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..C3_SCENES {
        let k = rng.random_range(2..=8);
        let source = Vec3::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), 0.0);
        let obs: Vec<Observation> = (0..k)
            .map(|t| {
                let p = Vec3::new(
                    rng.random_range(-60.0..60.0),
                    rng.random_range(-60.0..60.0),
                    rng.random_range(5.0..30.0),
                );
                let jitter = 0.1 * random_unit(&mut rng);
                let u = ((source - p).normalize() + jitter).normalize();
                Observation::new(p, u, rng.random_range(0.1..1.0), t as f64).unwrap()
            })
            .collect();
        match fuse(&obs) {
            Ok(f) => {
                let oracle = fusion_oracle(&obs, source, 50.0);
                worst = worst.max((f.position - oracle).norm());
            }
            Err(_) => failures += 1,
        }
    }

    let mut exact_worst: f64 = 0.0;
    for _ in 0..20 {
        let source = Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0);
        let obs: Vec<Observation> = (0..rng.random_range(2..=8))
            .map(|t| {
                let p = Vec3::new(
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-30.0..30.0),
                    rng.random_range(5.0..20.0),
                );
                Observation::new(p, (source - p).normalize(), rng.random_range(0.1..1.0), t as f64).unwrap()
            })
            .collect();
        exact_worst = exact_worst.max((fuse(&obs).unwrap().position - source).norm());
    }

    let u = Vec3::new(0.3, -0.4, -0.5).normalize();
    let parallel: Vec<Observation> = (0..5)
        .map(|t| Observation::new(Vec3::new(t as f64 * 4.0, 1.0, 5.0), u, 1.0, t as f64).unwrap())
        .collect();
    let degenerate = matches!(fuse(&parallel), Err(FusionError::DegenerateGeometry { .. }));

    Outcome::new(
        failures == 0 && worst <= C3_ORACLE_TOL_M && exact_worst <= C3_EXACT_TOL_M && degenerate,
        format!(
            "{C3_SCENES} scenes: max |fused - oracle| {worst:.2e} m (<= {C3_ORACLE_TOL_M}), fuse errors {failures}; \
             exact rays {exact_worst:.2e} m (<= {C3_EXACT_TOL_M}); parallel rays rejected: {degenerate}"
        ),
    )
}

fn tiny_mae() -> MaeConfig {
    MaeConfig {
        patch: 2,
        grid_rows: 2,
        grid_cols: 3,
        embed_dim: 8,
        enc_depth: 2,
        enc_heads: 2,
        enc_mlp: 12,
        dec_dim: 6,
        dec_depth: 1,
        dec_heads: 2,
        dec_mlp: 10,
        mask_ratio: 0.34,
        top_k: 0.25,
    }
}

fn random_patches(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.5..1.5))
}

fn gradient_error(mask: &MaskPartition, rng: &mut ChaCha8Rng) -> f64 {
    let cfg = tiny_mae();
    let mut params = MaeParams::init(&cfg, 3);
    for t in params.tensors_mut() {
        t.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
    let x = random_patches(cfg.tokens(), cfg.patch_dim(), rng);
    let grid = PatchGrid {
        patches: x.clone(),
        grid_rows: cfg.grid_rows,
        grid_cols: cfg.grid_cols,
        patch: cfg.patch,
    };
    let target = grid.normalized().patches;
    let mut grad = params.zeros_like();
    loss_and_grad(&params, &x, &target, mask, 1.0, &mut grad);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for ti in 0..params.tensors().len() {
        let (rows, cols) = params.tensors()[ti].dim();
        for r in 0..rows {
            for c in 0..cols {
                let mut plus = params.clone();
                plus.tensors_mut()[ti][[r, c]] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti][[r, c]] -= h;
                let numeric = (loss_value(&plus, &x, &target, mask, 1.0) - loss_value(&minus, &x, &target, mask, 1.0))
                    / (2.0 * h);
                let analytic = grad.tensors()[ti][[r, c]];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let grad_err = gradient_error(&sample_mask(6, 0.34, 9).unwrap(), &mut rng)
        .max(gradient_error(&MaskPartition::all_visible(6), &mut rng));

    let cfg = MaeConfig::default();
    let params = MaeParams::init(&cfg, 1);
    let mut shapes_ok = true;
    for step in 0..=18 {
        let rho = step as f64 * 0.05;
        let grid = PatchGrid {
            patches: random_patches(cfg.tokens(), cfg.patch_dim(), &mut rng),
            grid_rows: cfg.grid_rows,
            grid_cols: cfg.grid_cols,
            patch: cfg.patch,
        };
        let mask = sample_mask(cfg.tokens(), rho, step as u64).unwrap();
        let enc = encode(&grid, &mask, &params).unwrap();
        let rec = decode(&enc, &mask, &params, &grid).unwrap();
        shapes_ok &= enc.tokens.dim() == (mask.visible.len() + 1, cfg.embed_dim)
            && rec.patches.dim() == grid.patches.dim()
            && rec.patches.iter().all(|v| v.is_finite());
    }

    let x = random_patches(cfg.tokens(), cfg.patch_dim(), &mut rng);
    let mask = sample_mask(cfg.tokens(), 0.1, 5).unwrap();
    let (a, _) = encode_tokens(&params, &x, &mask.visible);
    let mut shuffled = mask.visible.clone();
    shuffled.reverse();
    shuffled.swap(0, 7);
    let (b, _) = encode_tokens(&params, &x, &shuffled);
    let mut perm_err: f64 = 0.0;
    for j in 0..cfg.embed_dim {
        perm_err = perm_err.max((a.tokens[[0, j]] - b.tokens[[0, j]]).abs());
    }
    for (i, v) in shuffled.iter().enumerate() {
        let k = mask.visible.iter().position(|u| u == v).unwrap();
        for j in 0..cfg.embed_dim {
            perm_err = perm_err.max((a.tokens[[1 + k, j]] - b.tokens[[1 + i, j]]).abs());
        }
    }

    Outcome::new(
        grad_err <= C4_GRAD_TOL && shapes_ok && perm_err <= C4_PERM_TOL,
        format!(
            "max relative gradient error {grad_err:.2e} (<= {C4_GRAD_TOL}); shapes across rho 0.00-0.90: {shapes_ok}; \
             permutation error {perm_err:.2e} (<= {C4_PERM_TOL})"
        ),
    )
}

fn train_model(scenario: Scenario) -> (MaeModel, f64) {
    let t = Instant::now();
    let mel = MelConfig::default();
    let cfg = MaeConfig::default();
    let model = MaeModel::new(cfg, mel, MaeParams::init(&cfg, 1)).unwrap();
    let clips: Vec<Vec<f64>> = (0..C5_TRAIN_CLIPS)
        .map(|i| {
            background_noise(scenario, mel.clip_seconds(), 1000 + i)
                .unwrap()
                .samples
        })
        .collect();
    let set = TrainingSet::from_clips(&model, &clips).unwrap();
    let hyper = TrainHyper {
        epochs: C5_EPOCHS,
        seed: 3,
        ..TrainHyper::default()
    };
    let (params, _) = pretrain(model.params.clone(), &set, &hyper).unwrap();
    (MaeModel::new(cfg, mel, params).unwrap(), t.elapsed().as_secs_f64())
}

struct Models {
    desert: Option<(MaeModel, f64)>,
    forest: Option<(MaeModel, f64)>,
}

impl Models {
    fn desert(&mut self) -> &(MaeModel, f64) {
        self.desert.get_or_insert_with(|| train_model(Scenario::Desert))
    }

    fn forest(&mut self) -> &(MaeModel, f64) {
        self.forest.get_or_insert_with(|| train_model(Scenario::Forest))
    }
}

fn auc(model: &MaeModel, scenario: Scenario) -> f64 {
    let dur = model.mel.clip_seconds();
    let profile = scenario.profile();
    let noise: Vec<f64> = (0..C5_AUC_CLIPS)
        .map(|i| {
            model
                .score(&background_noise(scenario, dur, 150_000 + i).unwrap().samples, i)
                .unwrap()
                .0
        })
        .collect();
    let victim: Vec<f64> = (0..C5_AUC_CLIPS)
        .map(|i| {
            let kind = if i % 2 == 0 {
                SignalKind::VictimCry
            } else {
                SignalKind::VictimShout
            };
            let call = set_level(&gen_signal(kind, dur, 90_000 + i).unwrap(), profile.victim_level_db).unwrap();
            let mut x = background_noise(scenario, dur, 70_000 + i).unwrap();
            x.add_assign(&call.scaled(profile.attenuation(C5_AUC_DISTANCE_M)));
            model.score(&x.samples, i).unwrap().0
        })
        .collect();
    let mut wins = 0.0;
    for p in &victim {
        for n in &noise {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (noise.len() * victim.len()) as f64
}

fn accuracy_at(model: &MaeModel, scenario: Scenario, heights: [f64; 2]) -> [f64; 2] {
    let scorer = model_scorer(model);
    let dur = model.mel.clip_seconds();
    let threshold = calibrate_threshold(&scorer, scenario, dur, 200, 0.1, 505).unwrap();
    heights.map(|h| {
        let setup = DetectionSetup {
            scenario,
            altitude_m: h,
            n_trials: C5_TRIALS,
            threshold,
            clip_seconds: dur,
            seed: 55,
        };
        eval_detection(&scorer, &setup).unwrap().accuracy
    })
}

fn criterion_5(models: &mut Models) -> Outcome {
    let (desert, t_desert) = models.desert();
    let auc_desert = auc(desert, Scenario::Desert);
    let [d5, d20] = accuracy_at(desert, Scenario::Desert, [5.0, 20.0]);
    let t_desert = *t_desert;
    let (forest, t_forest) = models.forest();
    let auc_forest = auc(forest, Scenario::Forest);
    let [f15, f50] = accuracy_at(forest, Scenario::Forest, [15.0, 50.0]);
    let train = t_desert.max(*t_forest);
    Outcome::new(
        auc_desert >= C5_AUC_MIN && auc_forest >= C5_AUC_MIN && d5 >= d20 && f15 >= f50 && train < C5_TRAIN_BUDGET_S,
        format!(
            "AUC at d={C5_AUC_DISTANCE_M} m desert {auc_desert:.3}, forest {auc_forest:.3} (>= {C5_AUC_MIN}); \
             desert accuracy h5 {d5:.2} vs h20 {d20:.2}; forest h15 {f15:.2} vs h50 {f50:.2}; \
             training {t_desert:.0} s / {t_forest:.0} s (< {C5_TRAIN_BUDGET_S:.0})"
        ),
    )
}

/// Localization errors at triggered hovers never grow after the third trigger.
fn settles_after_third(log: &MissionLog) -> bool {
    let errs: Vec<f64> = log
        .records
        .iter()
        .filter(|r| r.triggered)
        .skip(2)
        .filter_map(|r| r.loc_err_m)
        .collect();
    errs.windows(2).all(|w| w[1] <= w[0] + 1e-9)
}

fn criterion_6(models: &mut Models) -> Outcome {
    let (model, _) = models.desert();
    let mut quiet_triggers = 0;
    for seed in 0..C6_QUIET_RUNS {
        let cfg = MissionConfig {
            victim_enabled: false,
            seed: 900 + seed,
            ..MissionConfig::paper(Scenario::Desert)
        };
        quiet_triggers += run_mission(&cfg, model).unwrap().trigger_count();
    }

    let mut snr_ok = 0;
    let mut fused_ok = 0;
    let mut counters_ok = 0;
    let mut eligible = 0;
    let mut settled = 0;
    let mut max_runtime: f64 = 0.0;
    let mut triggers = Vec::new();
    let mut errors = Vec::new();
    let mut first_range: f64 = 0.0;
    let mut first_snr = f64::INFINITY;
    for seed in 0..C6_RUNS {
        let cfg = MissionConfig {
            seed,
            ..MissionConfig::paper(Scenario::Desert)
        };
        let t = Instant::now();
        let log = run_mission(&cfg, model).unwrap();
        max_runtime = max_runtime.max(t.elapsed().as_secs_f64());
        let k = log.trigger_count();
        triggers.push(k as f64);
        let first = log.records.iter().find(|r| r.triggered);
        if first.and_then(|r| r.snr_db).is_some_and(|s| s >= C6_FIRST_SNR_DB) {
            snr_ok += 1;
        }
        if let Some(r) = first {
            first_range = first_range.max((r.position - cfg.victim()).norm());
            first_snr = first_snr.min(r.snr_db.unwrap_or(f64::NEG_INFINITY));
        }
        if let (Some(e), Some(m)) = (log.final_error(), log.median_ray_distance()) {
            errors.push(e);
            if e <= m {
                fused_ok += 1;
            }
        }
        let c = log.counters;
        if c.sentinel_calls == log.records.len() && c.extractions == k && c.gcc_calls == 6 * k {
            counters_ok += 1;
        }
        if k > 3 {
            eligible += 1;
            if settles_after_third(&log) {
                settled += 1;
            }
        }
    }
    let runs = C6_RUNS as usize;
    let fraction = fused_ok as f64 / runs as f64;
    println!(
        "  info: criterion 6 triggers per run: mean {:.2}, median {:.1}, max {}; runs with a fused estimate {}; \
         median final error {}",
        triggers.iter().sum::<f64>() / triggers.len() as f64,
        median(&triggers),
        triggers.iter().cloned().fold(0.0, f64::max),
        errors.len(),
        if errors.is_empty() {
            "-".to_string()
        } else {
            format!("{:.2} m", median(&errors))
        }
    );
    println!(
        "  info: criterion 6 first triggers at most {first_range:.1} m from the victim, lowest first-trigger clip SNR \
         {first_snr:.1} dB"
    );
    println!("  info: criterion 6 error non-increasing after the 3rd trigger in {settled}/{eligible} runs with more than 3 triggers");
    Outcome::new(
        quiet_triggers == 0
            && snr_ok == runs
            && fraction >= C6_FUSED_FRACTION
            && max_runtime < C6_RUNTIME_S
            && counters_ok == runs,
        format!(
            "victim disabled: {quiet_triggers} triggers over {C6_QUIET_RUNS} runs; first trigger SNR >= \
             {C6_FIRST_SNR_DB} dB in {snr_ok}/{runs}; fused error <= median ray distance in {fused_ok}/{runs} \
             ({:.0}%, need {:.0}%); max runtime {max_runtime:.1} s (< {C6_RUNTIME_S}); counters consistent \
             {counters_ok}/{runs}",
            100.0 * fraction,
            100.0 * C6_FUSED_FRACTION
        ),
    )
}

fn criterion_7(models: &mut Models) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut ring_ok = true;
    for _ in 0..50 {
        let m = 3;
        let mut buf = RingBuffer::new(m, 1000, rng.random_range(0.5..3.0));
        let mut stream = vec![Vec::new(); m];
        for _ in 0..rng.random_range(1..10) {
            let n = rng.random_range(1..900);
            let channels: Vec<Waveform> = (0..m).map(|_| Waveform::new(white(n, &mut rng), 1000)).collect();
            for (s, c) in stream.iter_mut().zip(&channels) {
                s.extend_from_slice(&c.samples);
            }
            buf.push(&MultiChannelClip::new(channels, 0.0).unwrap()).unwrap();
        }
        let total = stream[0].len();
        let stored = buf.stored_samples();
        let len = rng.random_range(0..=stored);
        let start = total - stored + rng.random_range(0..=stored - len);
        let clip = buf.extract_samples(start as u64, len).unwrap();
        for (c, s) in stream.iter().enumerate() {
            let got: Vec<u64> = clip.channel(c).samples.iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = s[start..start + len].iter().map(|v| v.to_bits()).collect();
            ring_ok &= got == want;
        }
    }

    let (model, _) = models.desert();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, model).unwrap();
    let restored = read_checkpoint(&mut bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    write_checkpoint(&mut again, &restored).unwrap();
    let same_params = model
        .params
        .tensors()
        .iter()
        .zip(restored.params.tensors())
        .all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let clip = background_noise(Scenario::Desert, model.mel.clip_seconds(), 4).unwrap();
    let same_score =
        model.score(&clip.samples, 1).unwrap().0.to_bits() == restored.score(&clip.samples, 1).unwrap().0.to_bits();
    let ckpt_ok = bytes == again && same_params && same_score;

    let mission = MissionConfig {
        waypoints: vec![[-30.0, 5.0, 5.0], [30.0, 5.0, 5.0]],
        calibration_clips: 20,
        seed: 17,
        ..MissionConfig::paper(Scenario::Desert)
    };
    let csv = || {
        let mut out = Vec::new();
        write_mission_csv(&mut out, &run_mission(&mission, model).unwrap()).unwrap();
        out
    };
    let csv_ok = csv() == csv();

    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(Scenario::Forest);
    cfg.out = tmp.path().to_path_buf();
    cfg.gen.noise_clips = 3;
    cfg.gen.victim_clips = 2;
    let snapshot = |dir: &std::path::Path| {
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    let dir = cmd_gen(&cfg).unwrap();
    let first = snapshot(&dir);
    let echoed = fs::read_to_string(tmp.path().join("gen/forest_config.toml")).unwrap();
    cmd_gen(&cfg).unwrap();
    let gen_ok = first == snapshot(&dir) && first.len() == 6;
    let config_ok = RunConfig::from_toml(&echoed).is_ok_and(|c| c == cfg && c.to_toml() == echoed);

    Outcome::new(
        ring_ok && ckpt_ok && csv_ok && gen_ok && config_ok,
        format!(
            "ring buffer bitwise: {ring_ok}; checkpoint round trip bitwise: {ckpt_ok}; mission CSV rerun identical: \
             {csv_ok}; generated dataset rerun identical: {gen_ok}; config echo round trip: {config_ok}"
        ),
    )
}

fn main() {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut models = Models {
        desert: None,
        forest: None,
    };
    let names = [
        "direction of arrival",
        "GCC-PHAT delays",
        "ray fusion",
        "masked autoencoder",
        "detection",
        "search mission",
        "determinism",
    ];
    let mut failed = 0;
    for n in 1..=7u32 {
        if !wanted(n) {
            continue;
        }
        let t = Instant::now();
        let outcome = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(&mut models),
            6 => criterion_6(&mut models),
            _ => criterion_7(&mut models),
        };
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "criterion {n} {} {}: {} [{:.1} s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            names[n as usize - 1],
            outcome.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 && std::env::var("SKYEAR_ACCEPT_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
