//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured margin (visible with `--nocapture`).
//!
//! Run with `cargo test --test acceptance -- --nocapture`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raar_core::bayesopt::{run_bo, BoConfig};
use raar_core::engine::{generate_recourse, RecourseRequest, RelevanceSource};
use raar_core::harness::{run_experiment, Comparison, ExperimentPlan};
use raar_core::objectives::{BoundsSpec, Mode};
use raar_core::predictor::{AnalyticFn, ExternalPredictor, PredictorError, PredictorHandle};
use raar_core::relevance::{build_relevance, ControlPoint};
use raar_core::surrogate::{fit_gp, matern25, median_lengthscale, KernelParams, MATERN_NU};

fn check_runtime(what: &str, start: Instant, budget: Duration) -> Duration {
    let elapsed = start.elapsed();
    assert!(
        elapsed < budget,
        "{what} took {elapsed:?}, over the {budget:?} budget"
    );
    elapsed
}

/// Criterion 1 — the nu = 2.5 closed form agrees with the full Matern
/// expression through the half-integer Bessel function to 1e-9.
#[test]
fn criterion_1_kernel_equivalence() {
    let start = Instant::now();

    // Independent oracle: K_{5/2}(z) = sqrt(pi/(2z)) e^{-z} (1 + 3/z + 3/z^2),
    // Gamma(5/2) = 3 sqrt(pi) / 4, assembled into the textbook Matern form.
    fn bessel_oracle(r: f64, l: f64) -> f64 {
        use std::f64::consts::PI;
        let z = (2.0 * MATERN_NU).sqrt() * r / l;
        let gamma_2_5 = 0.75 * PI.sqrt();
        let k_5_2 = (PI / (2.0 * z)).sqrt() * (-z).exp() * (1.0 + 3.0 / z + 3.0 / (z * z));
        1.0 / (gamma_2_5 * 2.0_f64.powf(MATERN_NU - 1.0)) * z.powf(MATERN_NU) * k_5_2
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let l = rng.random_range(0.01..10.0);
        let r = rng.random_range(1e-12..=10.0 * l);
        let params = KernelParams {
            length_scale: l,
            signal_variance: 1.0,
            jitter: 1e-6,
        };
        let closed = matern25(r, &params).unwrap();
        let diff = (closed - bessel_oracle(r, l)).abs();
        worst = worst.max(diff);
        assert!(diff <= 1e-9, "r={r} l={l}: |diff|={diff}");
    }

    let elapsed = check_runtime("criterion 1", start, Duration::from_secs(1));
    println!("criterion 1 (kernel equivalence): PASS — max |closed - Bessel| = {worst:.3e}, {elapsed:?}");
}

/// Criterion 2 — GP posterior mean reproduces every training target and
/// its uncertainty collapses there.
#[test]
fn criterion_2_gp_interpolation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_mu = 0.0_f64;
    let mut worst_sigma = 0.0_f64;

    for case in 0..50 {
        let n = rng.random_range(1..=5);
        let d = rng.random_range(1..=3);
        // Separated points: coincident inputs are the noisy-data regime,
        // where exact interpolation is not defined.
        let mut points: Vec<Vec<f64>> = Vec::new();
        while points.len() < n {
            let candidate: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let far_enough = points.iter().all(|p| {
                p.iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    >= 0.1
            });
            if far_enough {
                points.push(candidate);
            }
        }
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();

        let params = KernelParams {
            length_scale: median_lengthscale(&points),
            signal_variance: 1.0,
            jitter: 1e-9,
        };
        let model = fit_gp(&points, &values, params).unwrap();

        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };

        for (point, target) in points.iter().zip(&values) {
            let (mu, sigma) = model.posterior_at(point).unwrap();
            let mu_err = (mu - target).abs() / scale;
            let sigma_rel = sigma / scale;
            worst_mu = worst_mu.max(mu_err);
            worst_sigma = worst_sigma.max(sigma_rel);
            assert!(mu_err <= 1e-4, "case {case}: |mu - y| = {mu_err:.3e} of scale");
            assert!(sigma_rel <= 1e-3, "case {case}: sigma = {sigma_rel:.3e} of prior sd");
        }
    }

    let elapsed = check_runtime("criterion 2", start, Duration::from_secs(5));
    println!(
        "criterion 2 (GP interpolation): PASS — max mean err {worst_mu:.3e}, \
         max sigma {worst_sigma:.3e} of scale, {elapsed:?}"
    );
}

/// Criterion 3 — relevance functions: control-point exactness, zero slopes,
/// unit-interval codomain under fuzz, and per-segment monotonicity.
#[test]
fn criterion_3_relevance_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fuzz_evals = 0usize;

    for case in 0..100 {
        let k = rng.random_range(2..=8);
        let scale: f64 = rng.random_range(1.0..20.0);
        let offset: f64 = rng.random_range(-100.0..100.0);
        let mut y = offset;
        let points: Vec<ControlPoint> = (0..k)
            .map(|_| {
                y += rng.random_range(0.8..1.2) * scale;
                ControlPoint::new(y, rng.random_range(0.0..=1.0))
            })
            .collect();
        let spec = build_relevance(points).unwrap();
        let (y_min, y_max) = spec.domain();
        let width = y_max - y_min;

        // Control-point exactness and the zero-slope condition.
        let step = 1e-6 * width;
        for p in spec.points() {
            let value = spec.eval(p.y).unwrap();
            assert!(
                (value - p.rel).abs() <= 1e-12,
                "case {case}: |phi(y_k) - rel_k| = {:.3e}",
                (value - p.rel).abs()
            );
            let slope =
                (spec.eval(p.y + step).unwrap() - spec.eval(p.y - step).unwrap()) / (2.0 * step);
            assert!(slope.abs() <= 1e-4, "case {case}: slope {slope:.3e} at control point");
        }

        // Codomain under fuzz, including far out-of-domain queries.
        for _ in 0..100 {
            let q = rng.random_range(y_min - width..y_max + width);
            let v = spec.eval(q).unwrap();
            assert!((0.0..=1.0).contains(&v), "case {case}: phi({q}) = {v}");
            fuzz_evals += 1;
        }

        // Monotonicity between each adjacent pair of control points.
        for pair in spec.points().windows(2) {
            let sign = (pair[1].rel - pair[0].rel).signum();
            let mut prev = pair[0].rel;
            for i in 1..=1000 {
                let q = pair[0].y + (pair[1].y - pair[0].y) * i as f64 / 1000.0;
                let v = spec.eval(q).unwrap();
                assert!(
                    sign * (v - prev) >= -1e-12,
                    "case {case}: segment not monotone at {q}"
                );
                prev = v;
            }
        }
    }

    assert!(fuzz_evals >= 10_000);
    let elapsed = check_runtime("criterion 3", start, Duration::from_secs(10));
    println!("criterion 3 (relevance suite): PASS — 100 sets, {fuzz_evals} fuzz evals, {elapsed:?}");
}

/// Criterion 4 — the optimizer locates the quadratic optimum from every seed.
#[test]
fn criterion_4_bo_sanity() {
    let start = Instant::now();
    let objective = |x: &[f64]| -(x[0] - 0.7) * (x[0] - 0.7);

    // Grid-search oracle for the true maximizer.
    let (mut oracle_x, mut oracle_v) = (0.0, f64::NEG_INFINITY);
    for i in 0..=10_000 {
        let x = i as f64 / 10_000.0;
        let v = objective(&[x]);
        if v > oracle_v {
            oracle_v = v;
            oracle_x = x;
        }
    }

    let bounds = BoundsSpec {
        lower: vec![0.0],
        upper: vec![1.0],
        mutable: vec![true],
    };
    let mut worst = 0.0_f64;
    for seed in 0..20 {
        let config = BoConfig {
            n_init: 5,
            n_iter: 25,
            lambda: 1.5,
            seed,
            ..BoConfig::default()
        };
        let trace = run_bo(objective, &bounds, &config).unwrap();
        let err = (trace.best_x[0] - oracle_x).abs();
        worst = worst.max(err);
        assert!(err <= 0.05, "seed {seed}: best_x {} vs oracle {oracle_x}", trace.best_x[0]);
    }

    let elapsed = check_runtime("criterion 4", start, Duration::from_secs(30));
    println!("criterion 4 (BO sanity): PASS — 20 seeds, worst |best_x - 0.7| = {worst:.4}, {elapsed:?}");
}

/// Criterion 5 — target-mode runs land within one percentage point of the
/// requested change for the identity predictor.
#[test]
fn criterion_5_target_mode_accuracy() {
    let start = Instant::now();
    let predictor = PredictorHandle::Analytic(AnalyticFn::Identity);
    let mut worst = 0.0_f64;

    for &pct in &[10.0, 20.0, 50.0] {
        for seed in 0..100 {
            let request = RecourseRequest {
                x_orig: vec![100.0],
                ranges: vec![(0.0, 1000.0)],
                mutable: vec![true],
                mode: Mode::TargetY,
                target_pct: Some(pct),
                bounds_pct: None,
                bo: BoConfig {
                    seed,
                    ..BoConfig::default()
                },
                relevance: RelevanceSource::None,
            };
            let result = generate_recourse(&predictor, &request).unwrap();
            let err = (result.delta_y_pct - pct).abs();
            worst = worst.max(err);
            assert!(
                err <= 1.0,
                "pct {pct} seed {seed}: delta_y_pct = {}",
                result.delta_y_pct
            );
        }
    }

    let elapsed = check_runtime("criterion 5", start, Duration::from_secs(120));
    println!(
        "criterion 5 (target-mode accuracy): PASS — 300 runs, worst |delta_y% - p| = {worst:.3} pp, {elapsed:?}"
    );
}

/// The synthetic comparison suite shared by criteria 6 and 7. The longer
/// iteration budget gives the lock-in dynamics room to differentiate.
fn suite_plan(comparison: Comparison) -> ExperimentPlan {
    ExperimentPlan {
        comparisons: vec![comparison],
        seed: 42,
        bo: BoConfig {
            n_iter: 100,
            ..BoConfig::default()
        },
        ..ExperimentPlan::builtin_synthetic()
    }
}

/// Criterion 6 — target mode, paired arms: relevance recourses are found
/// in fewer iterations and with no extra cost, on average (sign only).
#[test]
fn criterion_6_target_directional() {
    let start = Instant::now();
    let report = run_experiment(&suite_plan(Comparison::Target), None, 1).unwrap();

    let failed = report.runs.iter().filter(|r| r.error.is_some()).count();
    assert_eq!(failed, 0, "suite runs must not fail");
    assert_eq!(report.paired.len(), 12, "3 predictors x 4 target pcts");
    for pair in &report.paired {
        assert_eq!(pair.n_pairs, 20);
    }

    let mean_iters: f64 = report
        .paired
        .iter()
        .map(|p| p.delta_iters_pct.unwrap())
        .sum::<f64>()
        / report.paired.len() as f64;
    let mean_cost: f64 = report
        .paired
        .iter()
        .map(|p| p.delta_cost_pct.unwrap())
        .sum::<f64>()
        / report.paired.len() as f64;

    assert!(mean_iters <= 0.0, "mean delta-iterations = {mean_iters:.3}%");
    assert!(mean_cost <= 0.0, "mean delta-cost = {mean_cost:.3}%");

    let elapsed = check_runtime("criterion 6", start, Duration::from_secs(300));
    println!(
        "criterion 6 (target directional): PASS — mean dIt = {mean_iters:.2}%, \
         mean dd = {mean_cost:.2}%, {elapsed:?}"
    );
}

/// Criterion 7 — max mode with auto right-extreme relevance: the relevance
/// arm changes the outcome no more, at no larger cost (sign only).
#[test]
fn criterion_7_max_directional() {
    let start = Instant::now();
    let mut plan = suite_plan(Comparison::Max);
    plan.bounds_pct_max = 5.0;
    let report = run_experiment(&plan, None, 1).unwrap();

    let failed = report.runs.iter().filter(|r| r.error.is_some()).count();
    assert_eq!(failed, 0, "suite runs must not fail");

    let arm_mean = |mode: Mode| -> f64 {
        let groups: Vec<&_> = report.groups.iter().filter(|g| g.mode == mode).collect();
        assert_eq!(groups.len(), 3);
        groups.iter().map(|g| g.delta_y_pct_mean).sum::<f64>() / groups.len() as f64
    };
    let rel_dy = arm_mean(Mode::MaxRel);
    let y_dy = arm_mean(Mode::MaxY);
    let mean_cost: f64 = report
        .paired
        .iter()
        .map(|p| p.delta_cost_pct.unwrap())
        .sum::<f64>()
        / report.paired.len() as f64;

    assert!(
        rel_dy <= y_dy,
        "relevance arm dy% {rel_dy:.4} exceeds y arm {y_dy:.4}"
    );
    assert!(mean_cost <= 0.0, "mean delta-cost = {mean_cost:.3}%");

    let elapsed = check_runtime("criterion 7", start, Duration::from_secs(180));
    println!(
        "criterion 7 (max directional): PASS — dy% rel {rel_dy:.3} <= y {y_dy:.3}, \
         mean dd = {mean_cost:.3}%, {elapsed:?}"
    );
}

/// Criterion 8 — fixed seeds make the CLI byte-deterministic, across
/// repeated runs and worker counts.
#[test]
fn criterion_8_cli_determinism() {
    let recourse_args = [
        "recourse",
        "--analytic",
        "interaction",
        "--mode",
        "target-rel",
        "--target-pct",
        "20",
        "--seed",
        "11",
        "--iters",
        "12",
    ];
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_raar"))
            .args(args)
            .env_remove("RAAR_SEED")
            .output()
            .expect("binary runs")
    };
    let first = run(&recourse_args);
    assert!(first.status.success(), "{first:?}");
    let second = run(&recourse_args);
    assert_eq!(first.stdout, second.stdout, "cmd_recourse output differs");

    let dir = tempfile::tempdir().unwrap();
    let plan_path = dir.path().join("plan.json");
    std::fs::write(
        &plan_path,
        r#"{
            "predictors": [
                {"kind": "analytic", "name": "identity"},
                {"kind": "analytic", "name": "additive"}
            ],
            "instances": 3,
            "seed": 5,
            "target_pcts": [10.0, 50.0],
            "bo": {"n_init": 4, "n_iter": 8, "n_candidates": 64}
        }"#,
    )
    .unwrap();

    let batch = |out: &Path, workers: &str| {
        let output = run(&[
            "batch",
            "--config",
            plan_path.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--workers",
            workers,
        ]);
        assert!(output.status.success(), "{output:?}");
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let out_c = dir.path().join("c");
    batch(&out_a, "1");
    batch(&out_b, "1");
    batch(&out_c, "8");

    for file in ["report.json", "runs.csv", "boxplot_iters.csv", "boxplot_dist.csv"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        let c = std::fs::read(out_c.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between repeated runs");
        assert_eq!(a, c, "{file} differs between worker counts");
    }
    println!("criterion 8 (determinism): PASS — recourse and batch outputs byte-identical");
}

/// Criterion 9 — external predictor protocol round-trip and violations.
#[test]
fn criterion_9_external_protocol() {
    let echo = env!("CARGO_BIN_EXE_raar-echo-predictor");
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("replies.log");

    let predictor = ExternalPredictor::spawn(
        &format!("{echo} --log {}", log_path.display()),
        3,
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut engine_side: Vec<f64> = Vec::with_capacity(1000);
    for i in 0..1000 {
        let x = [
            rng.random_range(-1e6..1e6),
            rng.random_range(-1.0..1.0),
            match i % 4 {
                0 => rng.random_range(1e-12..1e-6),
                1 => 0.0,
                _ => rng.random_range(-100.0..100.0),
            },
        ];
        engine_side.push(predictor.predict(&x).unwrap());
    }
    predictor.shutdown().unwrap();

    // The predictor logged every reply at 17 significant digits; the
    // engine-side values must reproduce those digits exactly.
    let log = std::fs::read_to_string(&log_path).unwrap();
    let logged: Vec<&str> = log.lines().collect();
    assert_eq!(logged.len(), 1000);
    for (i, (mine, theirs)) in engine_side.iter().zip(&logged).enumerate() {
        assert_eq!(
            format!("{mine:.16e}"),
            **theirs,
            "query {i}: engine-side prediction disagrees with the predictor log"
        );
    }

    // Protocol violations surface as protocol errors.
    let garbled = ExternalPredictor::spawn(&format!("{echo} --mode garbled"), 2).unwrap();
    assert!(matches!(
        garbled.predict(&[1.0, 2.0]).unwrap_err(),
        PredictorError::Protocol(_)
    ));
    assert!(matches!(
        ExternalPredictor::spawn(&format!("{echo} --mode no-ready"), 2).unwrap_err(),
        PredictorError::Protocol(_)
    ));
    let dead = ExternalPredictor::spawn(&format!("{echo} --mode close-early"), 2).unwrap();
    assert!(matches!(
        dead.predict(&[1.0, 2.0]).unwrap_err(),
        PredictorError::Protocol(_)
    ));

    println!("criterion 9 (external protocol): PASS — 1000 round-trips match the predictor log");
}
