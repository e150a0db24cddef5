//! One test per acceptance criterion. Each writes a single PASS/FAIL line to
//! stderr (uncaptured) before asserting.

mod common;

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use overem::engine::DEFAULT_GH_NODES;
use overem::lloyd::center_geometry;
use overem::sample::{radius_doubling_factor, rate_experiment, seed_schedule};
use overem::{
    build_simplex, generate_dataset, grad_neg_log_likelihood, jacobian_check, neg_log_likelihood,
    perturbation_probe, pl_inequality_probe, population_lloyd_fixed_radius, population_lloyd_radius,
    population_lloyd_update, run_population_em, run_sample_kmeans, spectral_report, EmTrace, ExpectationEngine,
    LloydConfig, MixtureSpec, RunOptions,
};
use rand::Rng;
use tempfile::tempdir;

use common::{csv_files, overem};

fn report(id: u32, passed: bool, detail: &str, started: Instant) {
    let line = format!(
        "criterion {id:>2}: {} | {detail} | {:.1}s\n",
        if passed { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn gh() -> ExpectationEngine {
    ExpectationEngine::gauss_hermite(DEFAULT_GH_NODES)
}

fn line_trace(p: f64) -> EmTrace {
    let frame = build_simplex(2, 1).unwrap();
    let spec = MixtureSpec::new(vec![p, 1.0 - p]).unwrap();
    run_population_em(&gh(), &frame, &spec, &DVector::from_element(1, 0.3), &RunOptions::default()).unwrap()
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
    let left = (m - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + m)) + f(m));
    let right = (b - m) / 6.0 * (f(m) + 4.0 * f(0.5 * (m + b)) + f(b));
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive_simpson(f, a, m, tol / 2.0, depth - 1) + adaptive_simpson(f, m, b, tol / 2.0, depth - 1)
    }
}

fn chi_mean_by_quadrature(d: usize) -> f64 {
    let pieces = 80;
    let h = 40.0 / pieces as f64;
    let integrate = |p: i32| -> f64 {
        let f = move |r: f64| r.powi(p) * (-0.5 * r * r).exp();
        (0..pieces).map(|i| adaptive_simpson(&f, i as f64 * h, (i + 1) as f64 * h, 1e-14, 30)).sum()
    };
    integrate(d as i32) / integrate(d as i32 - 1)
}

#[test]
fn criterion_01_exponential_population_decay() {
    let started = Instant::now();
    let trace = line_trace(0.7);
    let kappa = trace.meta.kappa_bound.unwrap();
    let worst = trace.above_floor(10.0).filter_map(|r| r.ratio).fold(0.0, f64::max);
    let r2 = trace.semilog_fit().unwrap().r_squared;
    let passed = (kappa - 0.96).abs() < 1e-12 && worst <= kappa && r2 >= 0.99;
    report(1, passed, &format!("kappa {kappa:.4}, max ratio above floor {worst:.4}, semilog R^2 {r2:.5}"), started);
    assert!(passed);
}

#[test]
fn criterion_02_balanced_control_has_no_geometric_decay() {
    let started = Instant::now();
    let trace = line_trace(0.5);
    let ratios: Vec<(usize, f64)> = trace.records.iter().filter_map(|r| r.ratio.map(|q| (r.t, q))).collect();
    let within_20 = ratios.iter().filter(|(t, _)| *t <= 20).map(|(_, q)| *q).fold(0.0, f64::max);
    let first_above = ratios.iter().find(|(_, q)| *q > 0.999).map(|(t, _)| *t);
    let passed = within_20 > 0.999;
    report(
        2,
        passed,
        &format!(
            "max KL ratio over t <= 20 is {within_20:.4} (target > 0.999); first ratio above 0.999 at t = {}",
            first_above.map_or("never within max_iter".to_string(), |t| t.to_string())
        ),
        started,
    );
    assert!(passed, "see the decisions ledger: the balanced ratio only approaches 1 like 1 - c/t");
}

#[test]
fn criterion_03_statistical_rate() {
    let started = Instant::now();
    let frame = build_simplex(2, 1).unwrap();
    let spec = MixtureSpec::new(vec![0.7, 0.3]).unwrap();
    let seeds = seed_schedule(1, 20);
    let report_ = rate_experiment(
        &gh(),
        &frame,
        &spec,
        &DVector::from_element(1, 0.3),
        &[1_000, 10_000, 100_000],
        &seeds,
        overem::sample::default_iterations,
    )
    .unwrap();
    let slope = report_.kl_slope.unwrap();
    let passed = (slope + 1.0).abs() <= 0.2;
    report(3, passed, &format!("log-log slope of median final KL vs n: {slope:.4}"), started);
    assert!(passed);
}

#[test]
fn criterion_04_jacobian_identity() {
    let started = Instant::now();
    let cases = [(2, 1, vec![0.7, 0.3]), (3, 2, vec![0.5, 0.3, 0.2]), (4, 3, vec![0.4, 0.3, 0.2, 0.1])];
    let errors: Vec<f64> = cases
        .iter()
        .map(|(k, d, w)| {
            let frame = build_simplex(*k, *d).unwrap();
            jacobian_check(&gh(), &frame, &MixtureSpec::new(w.clone()).unwrap(), 1e-4).unwrap().max_error
        })
        .collect();
    let passed = errors.iter().all(|&e| e <= 1e-4);
    report(4, passed, &format!("max elementwise errors {}", errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")), started);
    assert!(passed);
}

#[test]
fn criterion_05_gradient_identity() {
    let started = Instant::now();
    let frame = build_simplex(3, 2).unwrap();
    let spec = MixtureSpec::new(vec![0.5, 0.3, 0.2]).unwrap();
    let engine = gh();
    let mut rng = overem::rng::stream_rng(5, "acceptance-gradient");
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let theta = overem::population::uniform_ball_point(&mut rng, 2, 0.5);
        let grad = grad_neg_log_likelihood(&engine, &frame, &spec, &theta).unwrap();
        let fd = DVector::from_fn(2, |a, _| {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[a] += h;
            down[a] -= h;
            (neg_log_likelihood(&engine, &frame, &spec, &up).unwrap() - neg_log_likelihood(&engine, &frame, &spec, &down).unwrap())
                / (2.0 * h)
        });
        worst = worst.max((grad - fd).norm());
    }
    let passed = worst <= 1e-5;
    report(5, passed, &format!("max |(theta - M) - FD grad L| over 20 points: {worst:.3e}"), started);
    assert!(passed);
}

#[test]
fn criterion_06_spectrum_identity() {
    let started = Instant::now();
    let mut rng = overem::rng::stream_rng(6, "acceptance-spectrum");
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for k in 2..=5 {
        for _ in 0..10 {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let spec = MixtureSpec::new(raw.iter().map(|w| w / total).collect()).unwrap();
            for d in [k - 1, k + 1] {
                let r = spectral_report(&build_simplex(k, d).unwrap(), &spec);
                let mut expected = r.dft_mod_sq.clone();
                expected.extend(std::iter::repeat_n(1.0, d + 1 - k));
                expected.sort_by(f64::total_cmp);
                for (a, b) in r.eigenvalues.iter().zip(&expected) {
                    worst = worst.max((a - b).abs());
                }
                cases += 1;
            }
        }
    }
    let passed = worst <= 1e-10;
    report(6, passed, &format!("max eigenvalue deviation over {cases} cases: {worst:.3e}"), started);
    assert!(passed);
}

#[test]
fn criterion_07_local_pl_inequality() {
    let started = Instant::now();
    let a = pl_inequality_probe(&gh(), &build_simplex(2, 1).unwrap(), &MixtureSpec::new(vec![0.7, 0.3]).unwrap(), 0.2, 200, 7).unwrap();
    let b = pl_inequality_probe(
        &gh(),
        &build_simplex(3, 2).unwrap(),
        &MixtureSpec::new(vec![0.5, 0.3, 0.2]).unwrap(),
        0.2,
        200,
        7,
    )
    .unwrap();
    let passed = a.passed && b.passed;
    report(
        7,
        passed,
        &format!("min margins {:.3e} (k=2) and {:.3e} (k=3), tolerance {:.1e}", a.min_margin, b.min_margin, a.tolerance),
        started,
    );
    assert!(passed);
}

#[test]
fn criterion_08_lloyd_fixed_point() {
    let started = Instant::now();
    let mut details = Vec::new();
    let mut passed = true;
    for (k, d) in [(3, 2), (4, 3)] {
        let frame = build_simplex(k, d).unwrap();
        let engine = ExpectationEngine::monte_carlo(d, 1_000_000, 8).unwrap();
        let r0 = population_lloyd_radius(d);
        let up = population_lloyd_update(&frame, r0, &engine).unwrap();
        let moved = up.centers.iter().zip(frame.vertices()).map(|(c, v)| (c - v * r0).norm() / r0).fold(0.0, f64::max);
        let fixed = population_lloyd_fixed_radius(&frame, &engine).unwrap();
        let data = generate_dataset(10_000, d, 8).unwrap();
        let km = run_sample_kmeans(&LloydConfig::new(k, d), &data).unwrap();
        let g = center_geometry(&km.centers);
        let radius_err = (g.mean_radius - r0).abs() / r0;
        passed &= moved <= 0.02 && radius_err <= 0.07 && g.pairwise_spread <= 0.07;
        details.push(format!(
            "(k={k},d={d}) move at R0 {moved:.4}, sample radius err {radius_err:.4}, pairwise spread {:.4}, fixed radius {:.4} R0",
            g.pairwise_spread,
            fixed / r0
        ));
    }
    let r0_err = (1..=10).map(|d| (population_lloyd_radius(d) - chi_mean_by_quadrature(d)).abs()).fold(0.0, f64::max);
    passed &= r0_err <= 1e-8;
    details.push(format!("R0 closed form vs quadrature {r0_err:.2e}"));
    report(8, passed, &details.join("; "), started);
    assert!(passed, "see the decisions ledger: the fixed radius is R0 |E[u | cell]|, not R0");
}

#[test]
fn criterion_09_perturbation_bound() {
    let started = Instant::now();
    let frame = build_simplex(2, 1).unwrap();
    let spec = MixtureSpec::new(vec![0.7, 0.3]).unwrap();
    let seeds = seed_schedule(9, 10);
    let ns = [1_000, 10_000, 100_000];
    let at_r = perturbation_probe(&gh(), &frame, &spec, 0.2, &ns, 16, &seeds).unwrap();
    let at_2r = perturbation_probe(&gh(), &frame, &spec, 0.4, &ns, 16, &seeds).unwrap();
    let slope = at_r.slope.unwrap();
    let factor = radius_doubling_factor(&at_r, &at_2r).unwrap();
    let passed = (slope + 0.5).abs() <= 0.1 && (1.5..=2.5).contains(&factor);
    report(9, passed, &format!("slope {slope:.4} (target -0.5 +- 0.1), doubling factor {factor:.4} (target [1.5, 2.5])"), started);
    assert!(passed, "see the decisions ledger: the sup contains an r-independent term");
}

#[test]
fn criterion_10_em_descent() {
    let started = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    let mut steps = 0;
    for p in [0.7, 0.5] {
        let trace = line_trace(p);
        for w in trace.records.windows(2) {
            worst = worst.max(w[1].neg_log_lik - w[0].neg_log_lik);
            steps += 1;
        }
    }
    let passed = worst <= 1e-12;
    report(10, passed, &format!("largest L increase over {steps} steps: {worst:.3e}"), started);
    assert!(passed);
}

#[test]
fn criterion_11_cli_determinism() {
    let started = Instant::now();
    let commands: [&[&str]; 6] = [
        &["spectrum", "--k", "3", "--d", "2"],
        &["population-run"],
        &["sample-run", "--n-grid", "1000,10000", "--seeds", "4"],
        &["lloyd", "--k", "3", "--d", "2", "--mc-samples", "200000"],
        &["verify", "--n-grid", "1000,10000", "--seeds", "6"],
        &["perturbation", "--n-grid", "1000,10000", "--seeds", "4"],
    ];
    let mut mismatched = Vec::new();
    let mut files = 0;
    for cmd in commands {
        let runs: Vec<_> = [("1", tempdir().unwrap()), ("4", tempdir().unwrap())]
            .into_iter()
            .map(|(threads, dir)| {
                let mut args: Vec<&str> = cmd.to_vec();
                let out = dir.path().to_str().unwrap().to_string();
                args.extend(["--seed", "11", "--out", &out]);
                let o = overem(&args, &[("OVEREM_THREADS", threads)]);
                assert!(o.status.code().is_some_and(|c| c <= 1), "{cmd:?} failed to run");
                let csvs = csv_files(dir.path());
                (csvs, dir)
            })
            .collect();
        files += runs[0].0.len();
        if runs[0].0.is_empty() || runs[0].0 != runs[1].0 {
            mismatched.push(cmd[0]);
        }
    }
    let passed = mismatched.is_empty();
    report(11, passed, &format!("{files} CSV files compared across reruns with 1 and 4 threads; mismatches {mismatched:?}"), started);
    assert!(passed);
}
