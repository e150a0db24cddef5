//! Lloyd's algorithm around simplex configurations: the population fixed
//! point on N(0, I), sample k-means, and the bridge into EM initialization.

use nalgebra::DVector;
use statrs::function::gamma::ln_gamma;

use crate::dataset::Dataset;
use crate::engine::{EngineMode, ExpectationEngine};
use crate::error::{OveremError, Result};
use crate::mixture::ThetaState;
use crate::par::{self, Execution, CHUNK};
use crate::simplex::{build_simplex, SimplexFrame};

pub const DEFAULT_CENTER_TOL: f64 = 1e-6;
pub const DEFAULT_LLOYD_MAX_ITER: usize = 300;

/// Mean of the chi distribution with d degrees of freedom,
/// sqrt(2) Gamma((d+1)/2) / Gamma(d/2).
pub fn population_lloyd_radius(d: usize) -> f64 {
    assert!(d >= 1, "dimension must be positive");
    let d = d as f64;
    std::f64::consts::SQRT_2 * (ln_gamma((d + 1.0) / 2.0) - ln_gamma(d / 2.0)).exp()
}

/// Index of the center r * v_i nearest to `x`; ties go to the lowest index.
pub fn voronoi_assign(frame: &SimplexFrame, r: f64, x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, v) in frame.vertices().iter().enumerate() {
        let dist: f64 = x.iter().zip(v.iter()).map(|(a, b)| (a - r * b).powi(2)).sum();
        if dist < best_dist {
            best_dist = dist;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydUpdate {
    /// Conditional means of N(0, I) over each Voronoi cell.
    pub centers: Vec<DVector<f64>>,
    /// Monte Carlo standard error of each center (Euclidean norm of the per-axis errors).
    pub std_err: Vec<f64>,
    /// Probability mass of each cell.
    pub mass: Vec<f64>,
}

/// One population-level Lloyd step from centers r * v_i, by Monte Carlo.
pub fn population_lloyd_update(frame: &SimplexFrame, r: f64, engine: &ExpectationEngine) -> Result<LloydUpdate> {
    if !(r > 0.0) {
        return Err(OveremError::Domain(format!("radius must be positive, got {r}")));
    }
    if engine.mode() != EngineMode::MonteCarlo {
        return Err(OveremError::Unsupported("population Lloyd update needs a Monte Carlo engine".into()));
    }
    let data = engine.samples().expect("monte carlo engine owns samples");
    let d = frame.d();
    let k = frame.k();
    if data.d() != d {
        return Err(OveremError::Dimension { expected: d, actual: data.d() });
    }
    // per cell: count, sum (d), sum of squares (d)
    let width = k * (1 + 2 * d);
    let acc = par::chunked_sum(engine.execution(), data.n(), width, |chunk, range, acc| {
        let values = data.chunk(chunk);
        for row in values.chunks_exact(d).take(range.len()) {
            let i = voronoi_assign(frame, r, row);
            let base = i * (1 + 2 * d);
            acc[base] += 1.0;
            for a in 0..d {
                acc[base + 1 + a] += row[a];
                acc[base + 1 + d + a] += row[a] * row[a];
            }
        }
    });
    let total = data.n() as f64;
    let mut centers = Vec::with_capacity(k);
    let mut std_err = Vec::with_capacity(k);
    let mut mass = Vec::with_capacity(k);
    for i in 0..k {
        let base = i * (1 + 2 * d);
        let count = acc[base];
        if count < 2.0 {
            return Err(OveremError::DegenerateData(format!("Voronoi cell {i} received {count} samples")));
        }
        let mean = DVector::from_fn(d, |a, _| acc[base + 1 + a] / count);
        let se2: f64 = (0..d)
            .map(|a| ((acc[base + 1 + d + a] / count - mean[a] * mean[a]).max(0.0)) / count)
            .sum();
        centers.push(mean);
        std_err.push(se2.sqrt());
        mass.push(count / total);
    }
    Ok(LloydUpdate { centers, std_err, mass })
}

/// Radius r* with { r* v_i } mapped to itself by the population Lloyd step.
///
/// The cells do not depend on r, so one update gives the image radius for
/// every starting radius; the fixed point is the mean image norm.
pub fn population_lloyd_fixed_radius(frame: &SimplexFrame, engine: &ExpectationEngine) -> Result<f64> {
    let update = population_lloyd_update(frame, 1.0, engine)?;
    Ok(update.centers.iter().map(|c| c.norm()).sum::<f64>() / frame.k() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LloydInit {
    /// Simplex vertices scaled by the radial factor of `population_lloyd_radius`.
    SimplexSeeded,
    Centers(Vec<DVector<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydConfig {
    pub k: usize,
    pub d: usize,
    pub max_iter: usize,
    pub center_tol: f64,
    pub init: LloydInit,
    pub execution: Execution,
}

impl LloydConfig {
    pub fn new(k: usize, d: usize) -> Self {
        LloydConfig {
            k,
            d,
            max_iter: DEFAULT_LLOYD_MAX_ITER,
            center_tol: DEFAULT_CENTER_TOL,
            init: LloydInit::SimplexSeeded,
            execution: Execution::Parallel,
        }
    }

    fn initial_centers(&self) -> Result<Vec<DVector<f64>>> {
        match &self.init {
            LloydInit::SimplexSeeded => {
                let frame = build_simplex(self.k, self.d)?;
                let r = population_lloyd_radius(self.d);
                Ok(frame.vertices().iter().map(|v| v * r).collect())
            }
            LloydInit::Centers(c) => {
                if c.len() != self.k || c.iter().any(|v| v.len() != self.d) {
                    return Err(OveremError::Domain(format!("initial centers must be {} vectors of length {}", self.k, self.d)));
                }
                Ok(c.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<DVector<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct AssignPass {
    assignments: Vec<usize>,
    sums: Vec<f64>,
    counts: Vec<f64>,
    inertia: f64,
    /// (squared distance to own center, index) of the worst-fit point.
    farthest: (f64, usize),
}

fn assign_pass(data: &Dataset, centers: &[DVector<f64>], execution: Execution) -> AssignPass {
    let d = data.d();
    let k = centers.len();
    let flat: Vec<f64> = centers.iter().flat_map(|c| c.iter().copied()).collect();
    let ranges = par::chunk_ranges(data.n(), CHUNK);
    let parts = par::map_indexed(execution, ranges, |(chunk, range)| {
        let values = data.chunk(chunk);
        let mut labels = Vec::with_capacity(range.len());
        // sums (k*d), counts (k), inertia
        let mut acc = vec![0.0; k * d + k + 1];
        let mut far = (-1.0, 0usize);
        for (offset, row) in values.chunks_exact(d).take(range.len()).enumerate() {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for i in 0..k {
                let c = &flat[i * d..(i + 1) * d];
                let dist: f64 = row.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
                if dist < best_dist {
                    best_dist = dist;
                    best = i;
                }
            }
            labels.push(best);
            for a in 0..d {
                acc[best * d + a] += row[a];
            }
            acc[k * d + best] += 1.0;
            acc[k * d + k] += best_dist;
            if best_dist > far.0 {
                far = (best_dist, range.start + offset);
            }
        }
        (labels, acc, far)
    });
    let mut assignments = Vec::with_capacity(data.n());
    let mut accs = Vec::with_capacity(parts.len());
    let mut farthest = (-1.0, 0usize);
    for (labels, acc, far) in parts {
        assignments.extend(labels);
        accs.push(acc);
        if far.0 > farthest.0 {
            farthest = far;
        }
    }
    let total = par::tree_sum(accs, k * d + k + 1);
    AssignPass {
        assignments,
        sums: total[..k * d].to_vec(),
        counts: total[k * d..k * d + k].to_vec(),
        inertia: total[k * d + k],
        farthest,
    }
}

/// Lloyd iterations on a dataset until centers move less than `center_tol`.
pub fn run_sample_kmeans(config: &LloydConfig, data: &Dataset) -> Result<KMeansResult> {
    if config.max_iter < 1 || !(config.center_tol > 0.0) {
        return Err(OveremError::Domain("need max_iter >= 1 and center_tol > 0".into()));
    }
    if data.d() != config.d {
        return Err(OveremError::Dimension { expected: config.d, actual: data.d() });
    }
    if data.n() < config.k {
        return Err(OveremError::Domain(format!("need at least k={} points, got {}", config.k, data.n())));
    }
    let values = data.values();
    let d = config.d;
    let first = &values[..d];
    if values.chunks_exact(d).all(|row| row == first) {
        return Err(OveremError::DegenerateData("all points are identical".into()));
    }
    drop(values);

    let mut centers = config.initial_centers()?;
    let mut inertia = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let pass = assign_pass(data, &centers, config.execution);
        inertia.push(pass.inertia);
        let mut moved: f64 = 0.0;
        let mut next = Vec::with_capacity(config.k);
        for (i, current) in centers.iter().enumerate() {
            let c = if pass.counts[i] > 0.0 {
                DVector::from_fn(d, |a, _| pass.sums[i * d + a] / pass.counts[i])
            } else {
                // empty cluster: reseed at the point worst served by its center
                DVector::from_vec(data.row(pass.farthest.1))
            };
            moved = moved.max((&c - current).norm());
            next.push(c);
        }
        centers = next;
        if moved <= config.center_tol {
            converged = true;
            break;
        }
    }
    let assignments = assign_pass(data, &centers, config.execution).assignments;
    Ok(KMeansResult { centers, assignments, inertia, iterations, converged })
}

/// Shape summary of a set of centers.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterGeometry {
    pub mean_radius: f64,
    /// max |radius_i - mean| / mean
    pub radius_spread: f64,
    pub mean_pairwise: f64,
    /// (max - min) / mean of pairwise distances
    pub pairwise_spread: f64,
}

pub fn center_geometry(centers: &[DVector<f64>]) -> CenterGeometry {
    let radii: Vec<f64> = centers.iter().map(|c| c.norm()).collect();
    let mean_radius = radii.iter().sum::<f64>() / radii.len() as f64;
    let radius_spread = radii.iter().map(|r| (r - mean_radius).abs()).fold(0.0, f64::max) / mean_radius;
    let mut pairs = Vec::new();
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            pairs.push((&centers[i] - &centers[j]).norm());
        }
    }
    let mean_pairwise = pairs.iter().sum::<f64>() / pairs.len().max(1) as f64;
    let max = pairs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = pairs.iter().copied().fold(f64::INFINITY, f64::min);
    let pairwise_spread = if pairs.is_empty() { 0.0 } else { (max - min) / mean_pairwise };
    CenterGeometry { mean_radius, radius_spread, mean_pairwise, pairwise_spread }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitFit {
    pub theta: ThetaState,
    /// sum_j |c_{sigma(j)} - R^j theta|^2 for the chosen alignment.
    pub residual: f64,
    /// residual / sum_j |c_j|^2
    pub alignment_score: f64,
    pub shift: usize,
    pub reversed: bool,
}

/// Least-squares theta with centers ~ { R^j theta }, searching all cyclic
/// label shifts in both orientations.
pub fn em_init_from_kmeans(frame: &SimplexFrame, centers: &[DVector<f64>]) -> Result<OrbitFit> {
    let k = frame.k();
    if centers.len() != k {
        return Err(OveremError::Domain(format!("expected {k} centers, got {}", centers.len())));
    }
    if let Some(c) = centers.iter().find(|c| c.len() != frame.d()) {
        return Err(OveremError::Dimension { expected: frame.d(), actual: c.len() });
    }
    let energy: f64 = centers.iter().map(|c| c.norm_squared()).sum();
    let mut best: Option<OrbitFit> = None;
    for reversed in [false, true] {
        for shift in 0..k {
            let label = |j: usize| if reversed { (shift + k - j) % k } else { (shift + j) % k };
            let theta = (0..k).fold(DVector::zeros(frame.d()), |acc, j| {
                acc + frame.power(j).transpose() * &centers[label(j)]
            }) / k as f64;
            let residual: f64 = (0..k).map(|j| (&centers[label(j)] - frame.power(j) * &theta).norm_squared()).sum();
            if best.as_ref().is_none_or(|b| residual < b.residual) {
                best = Some(OrbitFit {
                    theta: ThetaState::new(theta),
                    residual,
                    alignment_score: if energy > 0.0 { residual / energy } else { 0.0 },
                    shift,
                    reversed,
                });
            }
        }
    }
    Ok(best.expect("k >= 2 candidates"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_factor_closed_forms() {
        let pi = std::f64::consts::PI;
        assert!((population_lloyd_radius(1) - (2.0 / pi).sqrt()).abs() < 1e-14);
        assert!((population_lloyd_radius(2) - (pi / 2.0).sqrt()).abs() < 1e-14);
        assert!((population_lloyd_radius(3) - 2.0 * (2.0 / pi).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn kmeans_on_exact_vertices_is_fixed() {
        let frame = build_simplex(3, 2).unwrap();
        let r = population_lloyd_radius(2);
        let values: Vec<f64> = frame.vertices().iter().flat_map(|v| (v * r).iter().copied().collect::<Vec<_>>()).collect();
        let data = Dataset::from_values(2, values).unwrap();
        let out = run_sample_kmeans(&LloydConfig::new(3, 2), &data).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        for (c, v) in out.centers.iter().zip(frame.vertices()) {
            assert!((c - v * r).norm() < 1e-15);
        }
        assert_eq!(out.assignments, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_input_errors() {
        let same = Dataset::from_values(2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert!(matches!(run_sample_kmeans(&LloydConfig::new(2, 2), &same), Err(OveremError::DegenerateData(_))));
        let few = Dataset::from_values(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(run_sample_kmeans(&LloydConfig::new(3, 2), &few).is_err());
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // the third seeded center starts far from every point
        let values = vec![0.0, 0.0, 0.1, 0.0, 5.0, 0.0, 5.1, 0.0, 2.0, 0.1];
        let data = Dataset::from_values(2, values).unwrap();
        let mut cfg = LloydConfig::new(3, 2);
        cfg.init = LloydInit::Centers(vec![
            DVector::from_column_slice(&[0.0, 0.0]),
            DVector::from_column_slice(&[5.0, 0.0]),
            DVector::from_column_slice(&[100.0, 100.0]),
        ]);
        let out = run_sample_kmeans(&cfg, &data).unwrap();
        let mut counts = [0; 3];
        out.assignments.iter().for_each(|&a| counts[a] += 1);
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }

    #[test]
    fn orbit_fit_recovers_exact_orbits() {
        let frame = build_simplex(4, 3).unwrap();
        let theta = DVector::from_column_slice(&[0.3, -0.2, 0.5]);
        let centers = frame.component_means(&theta);
        let fit = em_init_from_kmeans(&frame, &centers).unwrap();
        assert!((fit.theta.theta() - &theta).norm() < 1e-14);
        assert!(fit.residual < 1e-25);

        // relabelled centers are still recognised
        let mut shuffled = centers.clone();
        shuffled.rotate_left(2);
        let fit = em_init_from_kmeans(&frame, &shuffled).unwrap();
        assert!(fit.residual < 1e-25);

        let line = build_simplex(2, 1).unwrap();
        let pair = vec![DVector::from_element(1, 0.8), DVector::from_element(1, -0.8)];
        let fit = em_init_from_kmeans(&line, &pair).unwrap();
        assert!((fit.theta.theta()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn population_update_needs_monte_carlo() {
        let frame = build_simplex(2, 1).unwrap();
        let gh = ExpectationEngine::default();
        assert!(matches!(population_lloyd_update(&frame, 1.0, &gh), Err(OveremError::Unsupported(_))));
        let mc = ExpectationEngine::monte_carlo(1, 1000, 1).unwrap();
        assert!(population_lloyd_update(&frame, 0.0, &mc).is_err());
    }

    #[test]
    fn geometry_of_regular_triangle() {
        let frame = build_simplex(3, 2).unwrap();
        let g = center_geometry(frame.vertices());
        assert!((g.mean_radius - 1.0).abs() < 1e-12);
        assert!(g.radius_spread < 1e-12 && g.pairwise_spread < 1e-12);
        assert!((g.mean_pairwise - 3f64.sqrt()).abs() < 1e-12);
    }
}
