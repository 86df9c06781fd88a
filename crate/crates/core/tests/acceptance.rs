//! Acceptance gate: seven numbered end-to-end checks, one test per
//! criterion. Each test prints a single `criterion N: PASS/FAIL` line with
//! its measurements (visible under `--nocapture`) and then asserts, so a red
//! criterion fails the build and carries its numbers in the panic message.
//!
//! Tolerances and Monte Carlo budgets are pinned as constants next to the
//! numbers they guard. All seeds are fixed up front; every simulation result
//! is deterministic for a given seed regardless of worker-thread count, so
//! these tests are exactly reproducible.
//!
//! Budget note: the run-length checks in criterion 2 use the sanctioned
//! reduced budget of 200 trials with a widened 15% tolerance (instead of
//! 500 trials at 10%) to keep the whole gate under an hour on one core.

use slopewatch::calibration::{
    edd_bound, solve_threshold, CalibrationInput, CalibrationTarget, EddInput,
};
use slopewatch::detectors::{AdaptiveParams, DetectorConfig};
use slopewatch::model::{ScenarioSpec, SensorModel};
use slopewatch::montecarlo::{
    compare_adaptive, match_threshold, simulate_arl, simulate_cpe_mse, simulate_edd, Procedure,
    ThresholdSearch,
};
use slopewatch::prognostics::{
    extract_features, fit_ttf_model, predict_life, relative_error, SystemFeatures,
};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

const P0: f64 = 0.3;
const WINDOW: usize = 200;

/// Calibrated threshold table: (sensors, target ARL, reference threshold,
/// reference simulated ARL at that threshold).
const THRESHOLD_TABLE: [(usize, f64, f64, f64); 4] = [
    (100, 5000.0, 46.34, 5024.0),
    (100, 10000.0, 47.64, 10037.0),
    (200, 5000.0, 77.04, 5035.0),
    (200, 10000.0, 78.66, 10058.0),
];

fn verdict(criterion: u32, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion}: {tag}  {detail}");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn glr(n_b: f64) -> Procedure {
    Procedure::MixtureGlr(DetectorConfig::new(P0, WINDOW, n_b).unwrap())
}

/// Criterion 1: the quadrature calibration reproduces the reference
/// thresholds for (N, ARL) in {100, 200} x {5000, 10000} within 0.5.
#[test]
fn criterion_1_threshold_calibration() {
    const TOL: f64 = 0.5;
    let mut got = Vec::new();
    let mut ok = true;
    for (n, arl, want, _) in THRESHOLD_TABLE {
        let input = CalibrationInput {
            n_sensors: n,
            p0: P0,
            w: WINDOW,
            target: CalibrationTarget::RunLength(arl),
        };
        let b = solve_threshold(&input).unwrap();
        ok &= (b - want).abs() <= TOL;
        got.push(format!("{b:.3}"));
    }
    let detail = format!(
        "thresholds {} vs 46.34/47.64/77.04/78.66 (tol {TOL})",
        got.join("/")
    );
    verdict(1, ok, &detail);
}

/// Criterion 2: simulated in-control run lengths at the reference
/// thresholds agree with the reference simulated values. 200 trials each,
/// 15% tolerance, run-length cap 1e5.
#[test]
fn criterion_2_simulated_run_lengths() {
    const TRIALS: usize = 200;
    const TOL: f64 = 0.15;
    const CAP: u64 = 100_000;
    const SEED: u64 = 9102;

    let mut got = Vec::new();
    let mut censored = 0;
    let mut ok = true;
    for (n, _, b, want) in THRESHOLD_TABLE {
        let model = SensorModel::standard(n);
        let procedure = Procedure::MixtureGlr(DetectorConfig::new(P0, WINDOW, b).unwrap());
        let stats = simulate_arl(&procedure, &model, TRIALS, CAP, SEED).unwrap();
        ok &= (stats.mean / want - 1.0).abs() <= TOL;
        censored += stats.censored_count;
        got.push(format!("{:.0}", stats.mean));
    }
    let detail = format!(
        "run lengths {} vs 5024/10037/5035/10058 (tol {:.0}%, {TRIALS} trials, {censored} censored)",
        got.join("/"),
        TOL * 100.0
    );
    verdict(2, ok, &detail);
}

/// Criterion 3: with 30 of 100 sensors drifting at rate c, the simulated
/// detection delay tracks the cube-root delay bound: within 15% of it at
/// every c in the grid, and never above it by more than 10%.
#[test]
fn criterion_3_delay_bound_accuracy() {
    const TRIALS: usize = 500;
    const SEED: u64 = 9203;
    const B: f64 = 46.34;
    const AFFECTED: usize = 30;
    const RATES: [f64; 4] = [0.03, 0.05, 0.07, 0.09];

    let model = SensorModel::standard(100);
    let procedure = glr(B);
    let mut lines = Vec::new();
    let mut within_band = true;
    let mut no_excess = true;
    for c in RATES {
        let scenario = ScenarioSpec {
            n_sensors: 100,
            kappa: Some(0),
            affected: (0..AFFECTED).collect(),
            rates: vec![c; AFFECTED],
            cov: None,
            horizon: 20_000,
        };
        let stats = simulate_edd(&procedure, &scenario, &model, TRIALS, SEED).unwrap();
        let bound = edd_bound(&EddInput {
            b: B,
            n_sensors: 100,
            p0: P0,
            delta_sq: AFFECTED as f64 * c * c,
            affected_count: AFFECTED,
            w: WINDOW,
        })
        .unwrap();
        within_band &= (stats.mean - bound).abs() / bound <= 0.15;
        no_excess &= stats.mean <= bound * 1.10;
        lines.push(format!("c={c}: sim {:.2} bound {bound:.2}", stats.mean));
    }
    let detail = format!(
        "{} (need within 15% and at most +10%; within15={within_band} excess10={no_excess})",
        lines.join(", ")
    );
    verdict(3, within_band && no_excess, &detail);
}

/// Criterion 4: fixed-weight versus adaptive-weight comparison with 10 of
/// 100 sensors affected, both at simulated run length 5000. Delay pairs at
/// c in {0.01, 0.05, 0.09} are compared to the reference table within 15%,
/// and the adaptive delay must be below the fixed one at every rate.
#[test]
fn criterion_4_adaptive_weighting_comparison() {
    const SEED_MATCH: u64 = 9304;
    const SEED_EDD: u64 = 9305;
    const TRIALS: usize = 500;
    const RATES: [f64; 3] = [0.01, 0.05, 0.09];
    // (fixed, adaptive) reference delays per rate.
    const REFERENCE: [(f64, f64); 3] = [(54.15, 38.56), (18.75, 14.42), (12.74, 10.13)];

    let model = SensorModel::standard(100);
    let fixed = DetectorConfig::new(P0, WINDOW, 46.34).unwrap();
    // The adaptive rule has its own null distribution, so its threshold is
    // matched by simulation; 54.8 seeds the search near the answer.
    let adaptive_params = AdaptiveParams {
        alpha: 1.0,
        beta: 1.0,
        cutoff: 2.0,
    };
    let adaptive_seed = DetectorConfig::new(P0, WINDOW, 54.8)
        .unwrap()
        .with_adaptive(adaptive_params)
        .unwrap();
    let search = ThresholdSearch {
        target_arl: 5000.0,
        trials: 150,
        tolerance: 0.05,
        max_rounds: 12,
        cap: 30_000,
    };
    let (b_adaptive, matched) = match_threshold(
        &Procedure::Adaptive(adaptive_seed.clone()),
        &model,
        &search,
        SEED_MATCH,
    )
    .unwrap();
    let adaptive = adaptive_seed.clone();
    let adaptive = DetectorConfig {
        threshold: b_adaptive,
        ..adaptive
    };

    let rows =
        compare_adaptive(&fixed, &adaptive, 100, 10, &RATES, TRIALS, 20_000, SEED_EDD).unwrap();
    let mut lines = Vec::new();
    let mut pairs_ok = true;
    let mut ordered = true;
    for (row, (want_fixed, want_adaptive)) in rows.iter().zip(REFERENCE) {
        let f = row.fixed.mean;
        let a = row.adaptive.mean;
        pairs_ok &= (f / want_fixed - 1.0).abs() <= 0.15;
        pairs_ok &= (a / want_adaptive - 1.0).abs() <= 0.15;
        ordered &= a < f;
        lines.push(format!(
            "c={}: fixed {f:.2}/{want_fixed} adaptive {a:.2}/{want_adaptive}",
            row.rate
        ));
    }
    let detail = format!(
        "adaptive b={b_adaptive:.2} (arl {:.0}); {} (tol 15%; pairs_ok={pairs_ok} adaptive_faster={ordered})",
        matched.mean,
        lines.join(", ")
    );
    verdict(4, pairs_ok && ordered, &detail);
}

/// Criterion 5: change-point estimation error ordering at p = 0.5. On
/// common streams with 50 of 100 sensors drifting, the slope mixture's
/// squared k-error must beat the mean-shift mixture at every rate, and the
/// mean-shift mixture must not trail the per-sensor chart bank by more
/// than the slack.
#[test]
fn criterion_5_changepoint_mse_ordering() {
    const SEED_MATCH: u64 = 9406;
    const SEED_CPE: u64 = 9407;
    const TRIALS: usize = 500;
    const KAPPA: u64 = 50;
    const HORIZON: u64 = 450;
    const AFFECTED: usize = 50;
    // Grid of drift rates; the reference gives the ordering only, so the
    // grid spans weak to strong signals.
    const RATES: [f64; 4] = [0.05, 0.1, 0.2, 0.3];
    // The chart bank is tuned once, at one design rate for the whole grid,
    // the way a deployed bank would be; re-tuning it to the true rate at
    // every grid point would hand it oracle knowledge no other procedure
    // gets.
    const BANK_RATE: f64 = 0.1;
    // "less than or comparable": the mean-shift mixture may exceed the
    // chart bank by at most this factor.
    const COMPARABLE_SLACK: f64 = 0.25;

    let model = SensorModel::standard(100);
    let search = ThresholdSearch {
        target_arl: 5000.0,
        trials: 120,
        tolerance: 0.05,
        max_rounds: 14,
        cap: 30_000,
    };
    let slope = glr(46.34);
    let (b_ms, _) = match_threshold(
        &Procedure::MeanShift(DetectorConfig::new(P0, WINDOW, 46.34).unwrap()),
        &model,
        &search,
        SEED_MATCH,
    )
    .unwrap();
    let meanshift = Procedure::MeanShift(DetectorConfig::new(P0, WINDOW, b_ms).unwrap());
    let bank_seed = Procedure::Multichart {
        thresholds: vec![8.0; 100],
        rates: vec![BANK_RATE; 100],
        window: WINDOW,
    };
    let (b_bank, _) = match_threshold(&bank_seed, &model, &search, SEED_MATCH).unwrap();
    let bank = bank_seed.with_threshold(b_bank);

    let mut lines = Vec::new();
    let mut slope_strictly_best = true;
    let mut meanshift_comparable = true;
    for c in RATES {
        let scenario = ScenarioSpec {
            n_sensors: 100,
            kappa: Some(KAPPA),
            affected: (0..AFFECTED).collect(),
            rates: vec![c; AFFECTED],
            cov: None,
            horizon: HORIZON,
        };
        let mse = simulate_cpe_mse(
            &[slope.clone(), meanshift.clone(), bank.clone()],
            &scenario,
            &model,
            TRIALS,
            SEED_CPE,
        )
        .unwrap();
        let (sl, ms, mc) = (mse[0].mean, mse[1].mean, mse[2].mean);
        slope_strictly_best &= sl < ms;
        meanshift_comparable &= ms <= mc * (1.0 + COMPARABLE_SLACK);
        lines.push(format!(
            "c={c}: slope {sl:.1} meanshift {ms:.1} charts {mc:.1}"
        ));
    }
    let detail = format!(
        "mse {} (slope<meanshift={slope_strictly_best}, meanshift<~charts={meanshift_comparable})",
        lines.join(", ")
    );
    verdict(5, slope_strictly_best && meanshift_comparable, &detail);
}

/// Criterion 6: the property suite (recursions, score identities, closed
/// forms, invariances) runs green in under a minute. The compiled
/// `properties` test binary sits next to this one; run it directly and time
/// it.
#[test]
fn criterion_6_property_suite_runtime() {
    const BUDGET_SECS: f64 = 60.0;

    let deps_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let mut candidates: Vec<_> = std::fs::read_dir(&deps_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name();
            let name = name.to_string_lossy();
            name.starts_with("properties-") && !name.contains('.')
        })
        .collect();
    candidates.sort_by_key(|e| e.metadata().and_then(|m| m.modified()).ok());
    let Some(binary) = candidates.pop() else {
        verdict(6, false, "no compiled properties test binary found");
        return;
    };

    let start = std::time::Instant::now();
    let out = std::process::Command::new(binary.path()).output().unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let summary = stdout
        .lines()
        .rev()
        .find(|l| l.starts_with("test result:"))
        .unwrap_or("no summary line")
        .to_string();
    let ok = out.status.success() && elapsed < BUDGET_SECS;
    let detail = format!("{summary} in {elapsed:.1}s (budget {BUDGET_SECS:.0}s)");
    verdict(6, ok, &detail);
}

/// Degradation cohort for criterion 7: 21 sensors per system, noise scale
/// `COHORT_SIGMA`, drift starting after kappa with per-sensor slopes drawn
/// log-normally, and failure at kappa + ttf with ln(ttf) linear in the true
/// slopes plus eta-scale noise. The noise is kept small against the slopes
/// so onset localization is exact and the fitted design is effectively
/// error-free; the residual slope-estimate noise still shrinks with the
/// threshold, which is what the median-error-versus-threshold check needs.
struct Cohort {
    streams: Vec<Vec<Vec<f64>>>,
    lives: Vec<f64>,
}

const COHORT_SIGMA: f64 = 0.2;
const COHORT_SENSORS: usize = 21;
const ETA: f64 = 0.06;
const BETA0: f64 = 3.9;
const BETA_SLOPE: f64 = 0.25;

fn degradation_cohort(count: usize, master_seed: u64) -> Cohort {
    let mut streams = Vec::with_capacity(count);
    let mut lives = Vec::with_capacity(count);
    for system in 0..count {
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        rng.set_stream(system as u64);
        let kappa: u64 = rng.random_range(30..=80);
        let slopes: Vec<f64> = (0..COHORT_SENSORS)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (0.05_f64.ln() + 0.9 * z).exp()
            })
            .collect();
        let pi = BETA0 + BETA_SLOPE * slopes.iter().sum::<f64>();
        let noise: f64 = rng.sample(StandardNormal);
        let ttf = (pi + ETA * noise).exp();
        let life = kappa as f64 + ttf;
        let len = life.ceil() as u64;
        let frames: Vec<Vec<f64>> = (1..=len)
            .map(|t| {
                (0..COHORT_SENSORS)
                    .map(|s| {
                        let z: f64 = rng.sample(StandardNormal);
                        if t > kappa {
                            COHORT_SIGMA * z + slopes[s] * (t - kappa) as f64
                        } else {
                            COHORT_SIGMA * z
                        }
                    })
                    .collect()
            })
            .collect();
        streams.push(frames);
        lives.push(life);
    }
    Cohort { streams, lives }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Criterion 7: on a synthetic 100+100-system cohort with known
/// coefficients, the fitted life model recovers every coefficient within 4
/// standard errors (at the largest threshold), and the median relative
/// life-prediction error is at most 15% there and non-increasing across the
/// threshold grid.
#[test]
fn criterion_7_prognostic_cohort() {
    const SEED: u64 = 9508;
    const TRAIN: usize = 100;
    const TEST: usize = 100;
    const THRESHOLDS: [f64; 3] = [30.0, 70.0, 300.0];
    const COHORT_P0: f64 = 1.0;
    const COHORT_WINDOW: usize = 64;

    let train = degradation_cohort(TRAIN, SEED);
    let test = degradation_cohort(TEST, SEED ^ 0xffff_ffff);
    let model = SensorModel::new(
        vec![0.0; COHORT_SENSORS],
        vec![COHORT_SIGMA; COHORT_SENSORS],
    )
    .unwrap();

    let mut medians = Vec::new();
    let mut beta_detail = String::new();
    let mut beta_ok = true;
    for (bi, &b) in THRESHOLDS.iter().enumerate() {
        let config = DetectorConfig::new(COHORT_P0, COHORT_WINDOW, b).unwrap();
        let train_features: Vec<SystemFeatures> = train
            .streams
            .iter()
            .zip(&train.lives)
            .map(|(frames, &life)| {
                let f = extract_features(frames, &model, &config).unwrap();
                SystemFeatures::new(f.k_hat, f.c_hat, Some(life - f.k_hat as f64)).unwrap()
            })
            .collect();
        let fitted = fit_ttf_model(&train_features, ETA).unwrap();

        let mut errors: Vec<f64> = test
            .streams
            .iter()
            .zip(&test.lives)
            .map(|(frames, &life)| {
                let f = extract_features(frames, &model, &config).unwrap();
                relative_error(predict_life(&f, &fitted).unwrap(), life).unwrap()
            })
            .collect();
        medians.push(median(&mut errors));

        // Coefficient recovery is checked at the largest threshold, where
        // the slope estimates carry the most post-change samples.
        if bi == THRESHOLDS.len() - 1 {
            let rows = train_features.len();
            let cols = COHORT_SENSORS + 1;
            let x = DMatrix::from_fn(rows, cols, |i, j| {
                if j == 0 {
                    1.0
                } else {
                    train_features[i].c_hat[j - 1]
                }
            });
            let inv = (x.transpose() * &x)
                .try_inverse()
                .expect("design is full rank");
            let mut worst = 0.0_f64;
            for j in 0..cols {
                let want = if j == 0 { BETA0 } else { BETA_SLOPE };
                let se = ETA * inv[(j, j)].sqrt();
                let dev = (fitted.coefficients()[j] - want).abs() / se;
                worst = worst.max(dev);
            }
            beta_ok = worst <= 4.0;
            beta_detail = format!("max coefficient deviation {worst:.2} se (limit 4)");
        }
    }

    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    let last_ok = *medians.last().unwrap() <= 0.15;
    let detail = format!(
        "median rel err {} at b {THRESHOLDS:?}; {beta_detail}; monotone={monotone} last<=15%={last_ok}",
        medians
            .iter()
            .map(|m| format!("{:.3}", m))
            .collect::<Vec<_>>()
            .join("/")
    );
    verdict(7, beta_ok && monotone && last_ok, &detail);
}
