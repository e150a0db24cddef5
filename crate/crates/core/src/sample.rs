//! Finite-sample EM: the empirical operator M_n, the sample EM loop and the
//! multi-seed experiments built on them.

use nalgebra::DVector;

pub use crate::dataset::{generate_dataset, Dataset, DatasetOptions};
use crate::engine::{sample_moments, ExpectationEngine};
use crate::error::{OveremError, Result};
use crate::mixture::MixtureSpec;
use crate::par::{self, Execution};
use crate::population::{
    divergence_guard, em_operator, evaluate, spectral_report, trace_meta, EmTrace, StopReason, TraceRecord,
    DEFAULT_INIT_RADIUS,
};
use crate::simplex::SimplexFrame;
use crate::stats::{log_log_fit, median, quantile};

/// M_n(theta) = (1/n) sum_i sum_j w_j(Z_i; theta) (R^j)^T Z_i.
pub fn sample_em_operator(
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta: &DVector<f64>,
    data: &Dataset,
) -> Result<DVector<f64>> {
    sample_em_operator_with(frame, spec, theta, data, Execution::Parallel)
}

pub fn sample_em_operator_with(
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta: &DVector<f64>,
    data: &Dataset,
    execution: Execution,
) -> Result<DVector<f64>> {
    if data.d() != frame.d() {
        return Err(OveremError::Dimension { expected: frame.d(), actual: data.d() });
    }
    if theta.len() != frame.d() {
        return Err(OveremError::Dimension { expected: frame.d(), actual: theta.len() });
    }
    Ok(sample_moments(frame, spec, theta, data, execution).em_update.value)
}

/// Iteration count ceil(3 ln n).
pub fn default_iterations(n: usize) -> usize {
    (3.0 * (n as f64).ln()).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRunOptions {
    pub max_iter: usize,
    pub init_radius: f64,
    pub execution: Execution,
}

impl SampleRunOptions {
    pub fn for_sample_size(n: usize) -> Self {
        SampleRunOptions { max_iter: default_iterations(n), init_radius: DEFAULT_INIT_RADIUS, execution: Execution::Parallel }
    }
}

/// Iterates theta_{t+1} = M_n(theta_t); KL is measured against N(0, I) with
/// the population `kl_engine`, gradient norms are those of the sample objective.
pub fn run_sample_em(
    kl_engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta0: &DVector<f64>,
    data: &Dataset,
    opts: &SampleRunOptions,
) -> Result<EmTrace> {
    if opts.max_iter < 1 {
        return Err(OveremError::Domain("max_iter must be at least 1".into()));
    }
    let guard = divergence_guard(theta0.norm());
    let mut records: Vec<TraceRecord> = Vec::with_capacity(opts.max_iter + 1);
    let mut theta = theta0.clone();
    for t in 0..=opts.max_iter {
        let pop = evaluate(kl_engine, frame, spec, &theta)?;
        let next = sample_em_operator_with(frame, spec, &theta, data, opts.execution)?;
        let kl = pop.kl.value;
        let ratio = records.last().and_then(|prev| (prev.kl > 0.0).then(|| kl / prev.kl));
        records.push(TraceRecord {
            t,
            theta: theta.clone(),
            kl,
            kl_std_err: pop.kl.std_err,
            noise_floor: kl_engine.kl_noise_floor(pop.kl.std_err),
            neg_log_lik: pop.neg_log_lik.value,
            grad_norm: (&theta - &next).norm(),
            ratio,
        });
        if t == opts.max_iter {
            break;
        }
        let norm = next.norm();
        if !norm.is_finite() || norm > guard {
            return Err(OveremError::Diverged { step: t + 1, norm, guard });
        }
        theta = next;
    }
    let spectral = spectral_report(frame, spec);
    let mut meta = trace_meta(kl_engine, frame, spec, &spectral, theta0, opts.init_radius, &records, StopReason::MaxIter);
    meta.label = format!("{} {}", spec.fingerprint(), data.fingerprint());
    Ok(EmTrace { records, meta })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCell {
    pub n: usize,
    pub seed: u64,
    pub iterations: usize,
    pub final_kl: f64,
    pub final_theta_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSummary {
    pub n: usize,
    pub median_kl: f64,
    pub q25_kl: f64,
    pub q75_kl: f64,
    pub median_theta_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub cells: Vec<RateCell>,
    pub summaries: Vec<RateSummary>,
    /// Log-log slope of median final KL against n; `None` for a single n.
    pub kl_slope: Option<f64>,
    pub theta_slope: Option<f64>,
}

/// Seeds 0..count derived from `root`, one per experiment replicate.
pub fn seed_schedule(root: u64, count: usize) -> Vec<u64> {
    (0..count).map(|i| crate::rng::stream_seed(root, &format!("replicate/{i}"))).collect()
}

/// Runs sample EM for every (n, seed) cell for `iterations(n)` steps and
/// summarizes the final KL per n.
pub fn rate_experiment(
    kl_engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta0: &DVector<f64>,
    n_grid: &[usize],
    seeds: &[u64],
    iterations: impl Fn(usize) -> usize + Sync,
) -> Result<RateReport> {
    if n_grid.is_empty() || seeds.is_empty() {
        return Err(OveremError::Domain("rate experiment needs sample sizes and seeds".into()));
    }
    let jobs: Vec<(usize, u64)> = n_grid.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let results = par::map_indexed(Execution::Parallel, jobs, |(_, (n, seed))| -> Result<RateCell> {
        let data = Dataset::generate(n, frame.d(), seed, "sample-em", DatasetOptions::default())?;
        let opts = SampleRunOptions { max_iter: iterations(n), ..SampleRunOptions::for_sample_size(n) };
        let trace = run_sample_em(kl_engine, frame, spec, theta0, &data, &opts)?;
        let last = trace.final_record();
        Ok(RateCell { n, seed, iterations: opts.max_iter, final_kl: last.kl, final_theta_norm: last.theta_norm() })
    });
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summaries: Vec<RateSummary> = n_grid
        .iter()
        .map(|&n| {
            let kls: Vec<f64> = cells.iter().filter(|c| c.n == n).map(|c| c.final_kl).collect();
            let norms: Vec<f64> = cells.iter().filter(|c| c.n == n).map(|c| c.final_theta_norm).collect();
            RateSummary {
                n,
                median_kl: median(&kls),
                q25_kl: quantile(&kls, 0.25),
                q75_kl: quantile(&kls, 0.75),
                median_theta_norm: median(&norms),
            }
        })
        .collect();
    let ns: Vec<f64> = summaries.iter().map(|s| s.n as f64).collect();
    let kl: Vec<f64> = summaries.iter().map(|s| s.median_kl).collect();
    let th: Vec<f64> = summaries.iter().map(|s| s.median_theta_norm).collect();
    Ok(RateReport {
        kl_slope: log_log_fit(&ns, &kl).map(|f| f.slope),
        theta_slope: log_log_fit(&ns, &th).map(|f| f.slope),
        cells,
        summaries,
    })
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let step = 1.0 / base as f64;
    let mut f = step;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= step;
    }
    out
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Deterministic, evenly spread unit vectors in R^d.
///
/// d = 1 gives the two signs, d = 2 equally spaced angles, higher d uses a
/// Halton sequence pushed through Box-Muller and normalized.
pub fn sphere_points(d: usize, count: usize) -> Vec<DVector<f64>> {
    match d {
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..count.max(1))
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / count.max(1) as f64;
                DVector::from_column_slice(&[a.cos(), a.sin()])
            })
            .collect(),
        _ => {
            let pairs = d.div_ceil(2);
            assert!(2 * pairs <= PRIMES.len(), "sphere_points supports d <= {}", PRIMES.len());
            (1..=count.max(1))
                .map(|i| {
                    let mut v = DVector::zeros(d);
                    for p in 0..pairs {
                        let u1 = radical_inverse(i, PRIMES[2 * p]);
                        let u2 = radical_inverse(i, PRIMES[2 * p + 1]);
                        let r = (-2.0 * u1.ln()).sqrt();
                        let a = 2.0 * std::f64::consts::PI * u2;
                        v[2 * p] = r * a.cos();
                        if 2 * p + 1 < d {
                            v[2 * p + 1] = r * a.sin();
                        }
                    }
                    let norm = v.norm();
                    v / norm
                })
                .collect()
        }
    }
}

/// Radii fractions of the concentric spheres in the perturbation grid.
pub const GRID_SHELLS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Points on the shells {0.25r, 0.5r, 0.75r, r}, at least `size` in total.
pub fn theta_grid(d: usize, radius: f64, size: usize) -> Vec<DVector<f64>> {
    let per_shell = size.div_ceil(GRID_SHELLS.len()).max(1);
    let dirs = sphere_points(d, per_shell);
    GRID_SHELLS
        .iter()
        .flat_map(|f| dirs.iter().map(move |u| u * (f * radius)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationCell {
    pub n: usize,
    pub seed: u64,
    /// max over the grid of |M_n(theta) - M(theta)|, a lower bound on the sup over the ball.
    pub sup_deviation: f64,
    pub deviation_at_zero: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSummary {
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub radius: f64,
    pub grid_points: usize,
    pub cells: Vec<PerturbationCell>,
    pub summaries: Vec<PerturbationSummary>,
    /// Log-log slope of the median sup deviation against n.
    pub slope: Option<f64>,
}

/// Empirical check of the uniform deviation between M_n and M on a ball.
pub fn perturbation_probe(
    engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    radius: f64,
    n_grid: &[usize],
    theta_grid_size: usize,
    seeds: &[u64],
) -> Result<PerturbationReport> {
    if !(radius > 0.0) || n_grid.is_empty() || seeds.is_empty() || theta_grid_size == 0 {
        return Err(OveremError::Domain("perturbation probe needs radius > 0 and nonempty grids".into()));
    }
    let grid = theta_grid(frame.d(), radius, theta_grid_size);
    let population = grid
        .iter()
        .map(|t| em_operator(engine, frame, spec, t))
        .collect::<Result<Vec<_>>>()?;
    let zero = DVector::zeros(frame.d());

    let jobs: Vec<(usize, u64)> = n_grid.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let results = par::map_indexed(Execution::Parallel, jobs, |(_, (n, seed))| -> Result<PerturbationCell> {
        let data = Dataset::generate(n, frame.d(), seed, "perturbation", DatasetOptions::default())?;
        let mut sup: f64 = 0.0;
        for (theta, m) in grid.iter().zip(&population) {
            let mn = sample_em_operator(frame, spec, theta, &data)?;
            sup = sup.max((mn - m).norm());
        }
        let deviation_at_zero = sample_em_operator(frame, spec, &zero, &data)?.norm();
        Ok(PerturbationCell { n, seed, sup_deviation: sup, deviation_at_zero })
    });
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summaries: Vec<PerturbationSummary> = n_grid
        .iter()
        .map(|&n| {
            let v: Vec<f64> = cells.iter().filter(|c| c.n == n).map(|c| c.sup_deviation).collect();
            PerturbationSummary { n, median: median(&v), q25: quantile(&v, 0.25), q75: quantile(&v, 0.75) }
        })
        .collect();
    let ns: Vec<f64> = summaries.iter().map(|s| s.n as f64).collect();
    let med: Vec<f64> = summaries.iter().map(|s| s.median).collect();
    Ok(PerturbationReport {
        radius,
        grid_points: grid.len(),
        cells,
        summaries,
        slope: log_log_fit(&ns, &med).map(|f| f.slope),
    })
}

/// Geometric mean over shared n of median(sup at 2r) / median(sup at r).
pub fn radius_doubling_factor(at_r: &PerturbationReport, at_2r: &PerturbationReport) -> Option<f64> {
    let logs: Vec<f64> = at_r
        .summaries
        .iter()
        .filter_map(|a| {
            at_2r.summaries.iter().find(|b| b.n == a.n).map(|b| (b.median / a.median).ln())
        })
        .collect();
    (!logs.is_empty()).then(|| (logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::build_simplex;

    #[test]
    fn iteration_schedule() {
        assert_eq!(default_iterations(1000), 21);
        assert_eq!(default_iterations(100_000), 35);
        assert_eq!(default_iterations(1), 1);
    }

    #[test]
    fn sphere_points_are_unit() {
        for d in 1..=6 {
            let pts = sphere_points(d, 16);
            assert!(!pts.is_empty());
            for p in &pts {
                assert_eq!(p.len(), d);
                assert!((p.norm() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(sphere_points(3, 16), sphere_points(3, 16));
    }

    #[test]
    fn grid_covers_all_shells() {
        let g = theta_grid(2, 0.4, 64);
        assert_eq!(g.len(), 64);
        let max = g.iter().map(|t| t.norm()).fold(0.0, f64::max);
        let min = g.iter().map(|t| t.norm()).fold(f64::INFINITY, f64::min);
        assert!((max - 0.4).abs() < 1e-12 && (min - 0.1).abs() < 1e-12);
    }

    #[test]
    fn operator_at_zero_is_weighted_rotated_mean() {
        let f = build_simplex(3, 2).unwrap();
        let s = MixtureSpec::new(vec![0.5, 0.3, 0.2]).unwrap();
        let data = generate_dataset(5000, 2, 9).unwrap();
        let got = sample_em_operator(&f, &s, &DVector::zeros(2), &data).unwrap();
        let v = data.values();
        let mut mean = DVector::zeros(2);
        for row in v.chunks(2) {
            mean += DVector::from_column_slice(row) / 5000.0;
        }
        let want = (0..3).fold(DVector::zeros(2), |acc, j| acc + f.power(j).transpose() * &mean * s.weights()[j]);
        assert!((got - want).norm() < 1e-14);
    }

    #[test]
    fn single_sample_two_components() {
        let f = build_simplex(2, 1).unwrap();
        let s = MixtureSpec::new(vec![0.7, 0.3]).unwrap();
        let data = generate_dataset(1, 1, 3).unwrap();
        let z = data.row(0)[0];
        let t = 0.4;
        let e1 = 0.7 * (t * z).exp();
        let e2 = 0.3 * (-t * z).exp();
        let want = (e1 - e2) / (e1 + e2) * z;
        let got = sample_em_operator(&f, &s, &DVector::from_element(1, t), &data).unwrap();
        assert!((got[0] - want).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let f = build_simplex(3, 2).unwrap();
        let s = MixtureSpec::new(vec![0.5, 0.3, 0.2]).unwrap();
        let data = generate_dataset(10, 3, 1).unwrap();
        assert!(matches!(
            sample_em_operator(&f, &s, &DVector::zeros(2), &data),
            Err(OveremError::Dimension { .. })
        ));
    }

    #[test]
    fn streamed_and_sequential_agree_bitwise() {
        let f = build_simplex(3, 2).unwrap();
        let s = MixtureSpec::new(vec![0.5, 0.3, 0.2]).unwrap();
        let theta = DVector::from_column_slice(&[0.2, -0.1]);
        let a = generate_dataset(30_000, 2, 4).unwrap();
        let opts = DatasetOptions { chunked: true, ..Default::default() };
        let b = Dataset::generate(30_000, 2, 4, "dataset", opts).unwrap();
        let x = sample_em_operator(&f, &s, &theta, &a).unwrap();
        let y = sample_em_operator_with(&f, &s, &theta, &b, Execution::Sequential).unwrap();
        assert_eq!(x, y);
    }
}
