use nalgebra::DVector;
use overem::dataset::{Dataset, DatasetOptions};
use overem::par::Execution;
use overem::sample::{default_iterations, radius_doubling_factor, rate_experiment, sample_em_operator_with, sphere_points, theta_grid};
use overem::{
    build_simplex, em_operator, generate_dataset, kl_to_standard_normal, perturbation_probe, run_sample_em,
    sample_em_operator, ExpectationEngine, MixtureSpec, OveremError, SampleRunOptions,
};

fn setup() -> (overem::SimplexFrame, MixtureSpec) {
    (build_simplex(3, 2).unwrap(), MixtureSpec::new(vec![0.5, 0.3, 0.2]).unwrap())
}

#[test]
fn iteration_schedule() {
    assert_eq!(default_iterations(1_000), 21);
    assert_eq!(default_iterations(10_000), 28);
    assert_eq!(default_iterations(100_000), 35);
    assert_eq!(SampleRunOptions::for_sample_size(1_000).max_iter, 21);
}

#[test]
fn sample_operator_concentrates_on_population_operator() {
    let (f, s) = setup();
    let engine = ExpectationEngine::default();
    let theta = DVector::from_column_slice(&[0.25, -0.1]);
    let m = em_operator(&engine, &f, &s, &theta).unwrap();
    let mut last = f64::INFINITY;
    for n in [2_000, 200_000] {
        let data = generate_dataset(n, 2, 9).unwrap();
        let dev = (sample_em_operator(&f, &s, &theta, &data).unwrap() - &m).norm();
        assert!(dev < 5.0 / (n as f64).sqrt(), "n={n} dev={dev}");
        assert!(dev < last);
        last = dev;
    }
}

#[test]
fn sample_operator_is_execution_independent() {
    let (f, s) = setup();
    let theta = DVector::from_column_slice(&[0.2, 0.05]);
    let data = generate_dataset(50_000, 2, 4).unwrap();
    let a = sample_em_operator_with(&f, &s, &theta, &data, Execution::Sequential).unwrap();
    let b = sample_em_operator_with(&f, &s, &theta, &data, Execution::Parallel).unwrap();
    assert_eq!(a, b);

    let chunked = Dataset::generate(
        50_000,
        2,
        4,
        "dataset",
        DatasetOptions { chunked: true, ..Default::default() },
    )
    .unwrap();
    assert_eq!(sample_em_operator(&f, &s, &theta, &chunked).unwrap(), a);
}

#[test]
fn sample_operator_rejects_mismatched_shapes() {
    let (f, s) = setup();
    let data = generate_dataset(100, 3, 1).unwrap();
    let r = sample_em_operator(&f, &s, &DVector::zeros(2), &data);
    assert!(matches!(r, Err(OveremError::Dimension { expected: 2, actual: 3 })));
}

#[test]
fn sample_run_tracks_population_kl() {
    let (f, s) = setup();
    let engine = ExpectationEngine::default();
    let theta0 = DVector::from_column_slice(&[0.3, 0.0]);
    let data = generate_dataset(10_000, 2, 2).unwrap();
    let opts = SampleRunOptions::for_sample_size(10_000);
    let trace = run_sample_em(&engine, &f, &s, &theta0, &data, &opts).unwrap();
    assert_eq!(trace.records.len(), opts.max_iter + 1);
    let kl0 = kl_to_standard_normal(&engine, &f, &s, &theta0).unwrap().value;
    assert_eq!(trace.records[0].kl, kl0);
    let last = trace.final_record();
    assert!(last.kl < kl0 / 20.0, "final {} vs start {kl0}", last.kl);
    // statistical floor of order 1/n
    assert!(last.kl < 20.0 / 10_000.0);
}

#[test]
fn rate_experiment_kl_shrinks_with_n() {
    let (f, s) = setup();
    let engine = ExpectationEngine::default();
    let theta0 = DVector::from_column_slice(&[0.3, 0.0]);
    let seeds = overem::sample::seed_schedule(1, 6);
    let report = rate_experiment(&engine, &f, &s, &theta0, &[1_000, 10_000], &seeds, default_iterations).unwrap();
    assert_eq!(report.cells.len(), 12);
    let slope = report.kl_slope.unwrap();
    assert!((-1.5..-0.5).contains(&slope), "slope {slope}");
    let single = rate_experiment(&engine, &f, &s, &theta0, &[1_000], &seeds[..2], default_iterations).unwrap();
    assert!(single.kl_slope.is_none());
}

#[test]
fn grids_cover_the_ball() {
    for d in 1..=6 {
        for u in sphere_points(d, 12) {
            assert!((u.norm() - 1.0).abs() < 1e-12);
        }
    }
    let g = theta_grid(2, 0.4, 40);
    assert_eq!(g.len(), 40);
    let max = g.iter().map(|t| t.norm()).fold(0.0, f64::max);
    assert!((max - 0.4).abs() < 1e-12);
}

#[test]
fn perturbation_deviation_scales_like_inverse_root_n() {
    let f = build_simplex(2, 1).unwrap();
    let s = MixtureSpec::new(vec![0.7, 0.3]).unwrap();
    let engine = ExpectationEngine::default();
    let seeds = overem::sample::seed_schedule(3, 8);
    let ns = [1_000, 10_000, 100_000];
    let at_r = perturbation_probe(&engine, &f, &s, 0.2, &ns, 16, &seeds).unwrap();
    let slope = at_r.slope.unwrap();
    assert!((slope + 0.5).abs() < 0.15, "slope {slope}");
    let at_2r = perturbation_probe(&engine, &f, &s, 0.4, &ns, 16, &seeds).unwrap();
    let factor = radius_doubling_factor(&at_r, &at_2r).unwrap();
    assert!(factor > 1.0 && factor < 2.5, "doubling factor {factor}");
    for c in &at_r.cells {
        assert!(c.sup_deviation >= c.deviation_at_zero * 0.5);
    }
}
