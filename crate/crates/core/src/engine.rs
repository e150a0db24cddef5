//! Expectations under N(0, I): tensor Gauss-Hermite on the subspace the
//! integrands actually depend on, or Monte Carlo with common random numbers.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Dataset, DatasetOptions};
use crate::error::{ensure_finite, OveremError, Result};
use crate::mixture::{ComponentKernel, MixtureSpec};
use crate::par::{self, Execution};
use crate::quadrature::GaussHermite;
use crate::simplex::SimplexFrame;

pub const DEFAULT_GH_NODES: usize = 40;
pub const DEFAULT_MC_SAMPLES: usize = 2_000_000;
/// Largest subspace dimension integrated by tensor quadrature.
pub const MAX_GH_DIM: usize = 4;
/// Reported noise floor of quadrature estimates.
pub const GH_NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineMode {
    GaussHermite,
    MonteCarlo,
}

impl FromStr for EngineMode {
    type Err = OveremError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gh" | "gauss_hermite" => Ok(EngineMode::GaussHermite),
            "mc" | "monte_carlo" => Ok(EngineMode::MonteCarlo),
            other => Err(OveremError::Unsupported(format!("engine mode {other:?}"))),
        }
    }
}

/// Named integrands understood by [`ExpectationEngine::expect`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrand {
    EmUpdate,
    NegLogLik,
    GradNormSq,
}

impl FromStr for Integrand {
    type Err = OveremError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "em_update" => Ok(Integrand::EmUpdate),
            "neg_log_lik" => Ok(Integrand::NegLogLik),
            "grad_norm_sq" => Ok(Integrand::GradNormSq),
            other => Err(OveremError::Unsupported(format!("integrand {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarEstimate {
    pub value: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorEstimate {
    pub value: DVector<f64>,
    pub std_err: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expectation {
    Scalar(ScalarEstimate),
    Vector(VectorEstimate),
}

/// Everything one pass over the integration points yields.
#[derive(Debug, Clone)]
pub struct Moments {
    /// E[sum_j w_j (R^j)^T Z]
    pub em_update: VectorEstimate,
    /// E[lse_j(log pi_j + mu_j.Z) - sum_j pi_j mu_j.Z]
    pub centered_lse: ScalarEstimate,
    /// E[|Z|^2/2 - lse_j(log pi_j + mu_j.Z)]
    pub nll_core: ScalarEstimate,
}

#[derive(Debug, Clone)]
pub struct ExpectationEngine {
    mode: EngineMode,
    gh_nodes_per_axis: usize,
    mc_samples: usize,
    seed: u64,
    rule: Option<GaussHermite>,
    samples: Option<Dataset>,
    execution: Execution,
}

impl ExpectationEngine {
    pub fn gauss_hermite(nodes_per_axis: usize) -> Self {
        ExpectationEngine {
            mode: EngineMode::GaussHermite,
            gh_nodes_per_axis: nodes_per_axis,
            mc_samples: 0,
            seed: 0,
            rule: Some(GaussHermite::new(nodes_per_axis)),
            samples: None,
            execution: Execution::Parallel,
        }
    }

    /// Monte Carlo over one fixed sample set of `samples` draws in dimension `d`.
    pub fn monte_carlo(d: usize, samples: usize, seed: u64) -> Result<Self> {
        let opts = DatasetOptions::default();
        let data = Dataset::generate(samples, d, seed, "engine", opts)?;
        Ok(ExpectationEngine {
            mode: EngineMode::MonteCarlo,
            gh_nodes_per_axis: 0,
            mc_samples: samples,
            seed,
            rule: None,
            samples: Some(data),
            execution: Execution::Parallel,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn mode(&self) -> EngineMode {
        self.mode
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mc_samples(&self) -> usize {
        self.mc_samples
    }

    pub fn gh_nodes_per_axis(&self) -> usize {
        self.gh_nodes_per_axis
    }

    /// The common random numbers of a Monte Carlo engine.
    pub fn samples(&self) -> Option<&Dataset> {
        self.samples.as_ref()
    }

    pub fn fingerprint(&self) -> String {
        match self.mode {
            EngineMode::GaussHermite => format!("gh(nodes={})", self.gh_nodes_per_axis),
            EngineMode::MonteCarlo => format!(
                "mc(samples={},seed={},gen={})",
                self.mc_samples,
                self.seed,
                crate::dataset::GENERATOR_ID
            ),
        }
    }

    /// Dimension actually integrated at `theta`.
    pub fn effective_dim(&self, frame: &SimplexFrame, theta: &DVector<f64>) -> usize {
        match self.mode {
            EngineMode::GaussHermite => orbit_basis(frame, theta).ncols(),
            EngineMode::MonteCarlo => frame.d(),
        }
    }

    /// Absolute error level below which a KL value carries no information.
    pub fn kl_noise_floor(&self, kl_std_err: f64) -> f64 {
        match self.mode {
            EngineMode::GaussHermite => GH_NOISE_FLOOR,
            EngineMode::MonteCarlo => (3.0 * kl_std_err).max(GH_NOISE_FLOOR),
        }
    }

    pub fn moments(&self, frame: &SimplexFrame, spec: &MixtureSpec, theta: &DVector<f64>) -> Result<Moments> {
        if spec.k() != frame.k() {
            return Err(OveremError::Dimension { expected: frame.k(), actual: spec.k() });
        }
        if theta.len() != frame.d() {
            return Err(OveremError::Dimension { expected: frame.d(), actual: theta.len() });
        }
        ensure_finite(theta.as_slice(), "theta")?;
        match self.mode {
            EngineMode::GaussHermite => self.gh_moments(frame, spec, theta),
            EngineMode::MonteCarlo => {
                let data = self.samples.as_ref().expect("monte carlo engine owns samples");
                if data.d() != frame.d() {
                    return Err(OveremError::Dimension { expected: data.d(), actual: frame.d() });
                }
                Ok(sample_moments(frame, spec, theta, data, self.execution))
            }
        }
    }

    pub fn expect(
        &self,
        frame: &SimplexFrame,
        spec: &MixtureSpec,
        theta: &DVector<f64>,
        integrand: Integrand,
    ) -> Result<Expectation> {
        let m = self.moments(frame, spec, theta)?;
        Ok(match integrand {
            Integrand::EmUpdate => Expectation::Vector(m.em_update),
            Integrand::NegLogLik => Expectation::Scalar(neg_log_lik_from(frame.d(), theta, &m)),
            Integrand::GradNormSq => {
                let g = theta - &m.em_update.value;
                let value = g.norm_squared();
                let std_err = 2.0 * g.norm() * m.em_update.std_err.norm();
                Expectation::Scalar(ScalarEstimate { value, std_err })
            }
        })
    }

    fn gh_moments(&self, frame: &SimplexFrame, spec: &MixtureSpec, theta: &DVector<f64>) -> Result<Moments> {
        let rule = self.rule.as_ref().expect("quadrature engine owns a rule");
        let basis = orbit_basis(frame, theta);
        let m = basis.ncols();
        if m > MAX_GH_DIM {
            return Err(OveremError::Unsupported(format!(
                "Gauss-Hermite needs effective dimension <= {MAX_GH_DIM}, got {m}"
            )));
        }
        let d = frame.d();
        let k = frame.k();
        if m == 0 {
            // theta = 0: responsibilities are the weights and every projection vanishes
            let lse = crate::mixture::log_sum_exp(spec.log_weights());
            return Ok(Moments {
                em_update: VectorEstimate { value: DVector::zeros(d), std_err: DVector::zeros(d) },
                centered_lse: ScalarEstimate { value: lse, std_err: 0.0 },
                nll_core: ScalarEstimate { value: d as f64 / 2.0 - lse, std_err: 0.0 },
            });
        }

        // reduced problem: mu_j . Z = (U^T mu_j) . Y with Y ~ N(0, I_m)
        let basis_t = basis.transpose();
        let reduced_means: Vec<f64> =
            frame.component_means(theta).iter().flat_map(|mu| (&basis_t * mu).data.as_vec().clone()).collect();
        let kernel = ComponentKernel::from_means(k, m, reduced_means, spec);

        let width = k * m + 1;
        let total = rule.tensor_len(m);
        let acc = par::chunked_sum(self.execution, total, width, |_, range, acc| {
            let mut y = vec![0.0; m];
            let mut proj = vec![0.0; k];
            let mut w = vec![0.0; k];
            for idx in range {
                let weight = rule.tensor_point(idx, &mut y);
                kernel.projections(&y, &mut proj);
                let lse = kernel.weights_from_projections(&proj, &mut w);
                for j in 0..k {
                    let wj = weight * w[j];
                    for a in 0..m {
                        acc[j * m + a] += wj * y[a];
                    }
                }
                acc[k * m] += weight * (lse - kernel.weighted_projection(&proj));
            }
        });

        let mut em = DVector::zeros(d);
        for j in 0..k {
            let ewy = DVector::from_column_slice(&acc[j * m..(j + 1) * m]);
            em += frame.power(j).transpose() * (&basis * ewy);
        }
        let centered = acc[k * m];
        Ok(Moments {
            em_update: VectorEstimate { value: em, std_err: DVector::zeros(d) },
            centered_lse: ScalarEstimate { value: centered, std_err: 0.0 },
            // E[sum_j pi_j mu_j.Z] = 0 and E|Z|^2 = d
            nll_core: ScalarEstimate { value: d as f64 / 2.0 - centered, std_err: 0.0 },
        })
    }
}

impl Default for ExpectationEngine {
    fn default() -> Self {
        Self::gauss_hermite(DEFAULT_GH_NODES)
    }
}

/// Orthonormal basis (d x m) of span{R^j theta}, by modified Gram-Schmidt.
pub fn orbit_basis(frame: &SimplexFrame, theta: &DVector<f64>) -> DMatrix<f64> {
    let scale = theta.norm();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    if scale == 0.0 {
        return DMatrix::zeros(frame.d(), 0);
    }
    for mu in frame.component_means(theta) {
        let mut v = mu / scale;
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v -= c * p;
            }
        }
        let norm = v.norm();
        if norm > 1e-10 {
            cols.push(v / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// One pass of the per-sample integrands over a dataset.
pub fn sample_moments(
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta: &DVector<f64>,
    data: &Dataset,
    execution: Execution,
) -> Moments {
    let k = frame.k();
    let d = frame.d();
    let n = data.n();
    let kernel = ComponentKernel::new(frame, spec, theta);
    // rows of (R^j)^T, flattened: rot_t[j][a][b] = R^j[b][a]
    let rot_t: Vec<f64> = frame
        .powers()
        .iter()
        .flat_map(|p| {
            let t = p.transpose();
            let mut flat = Vec::with_capacity(d * d);
            for a in 0..d {
                for b in 0..d {
                    flat.push(t[(a, b)]);
                }
            }
            flat
        })
        .collect();

    let width = 2 * d + 4;
    let acc = par::chunked_sum(execution, n, width, |chunk, range, acc| {
        let values = data.chunk(chunk);
        let mut proj = vec![0.0; k];
        let mut w = vec![0.0; k];
        let mut m = vec![0.0; d];
        for row in values.chunks_exact(d).take(range.len()) {
            kernel.projections(row, &mut proj);
            let lse = kernel.weights_from_projections(&proj, &mut w);
            m.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..k {
                let r = &rot_t[j * d * d..(j + 1) * d * d];
                for a in 0..d {
                    let ra = &r[a * d..(a + 1) * d];
                    m[a] += w[j] * ra.iter().zip(row).map(|(x, z)| x * z).sum::<f64>();
                }
            }
            for a in 0..d {
                acc[a] += m[a];
                acc[d + a] += m[a] * m[a];
            }
            let g = lse - kernel.weighted_projection(&proj);
            let h = 0.5 * row.iter().map(|z| z * z).sum::<f64>() - lse;
            acc[2 * d] += g;
            acc[2 * d + 1] += g * g;
            acc[2 * d + 2] += h;
            acc[2 * d + 3] += h * h;
        }
    });

    let nf = n as f64;
    let mean_err = |sum: f64, sq: f64| {
        let mean = sum / nf;
        let var = if n > 1 { ((sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0) } else { 0.0 };
        (mean, (var / nf).sqrt())
    };
    let mut value = DVector::zeros(d);
    let mut std_err = DVector::zeros(d);
    for a in 0..d {
        let (mean, se) = mean_err(acc[a], acc[d + a]);
        value[a] = mean;
        std_err[a] = se;
    }
    let (g, g_se) = mean_err(acc[2 * d], acc[2 * d + 1]);
    let (h, h_se) = mean_err(acc[2 * d + 2], acc[2 * d + 3]);
    Moments {
        em_update: VectorEstimate { value, std_err },
        centered_lse: ScalarEstimate { value: g, std_err: g_se },
        nll_core: ScalarEstimate { value: h, std_err: h_se },
    }
}

pub(crate) fn neg_log_lik_from(d: usize, theta: &DVector<f64>, m: &Moments) -> ScalarEstimate {
    ScalarEstimate {
        value: 0.5 * d as f64 * (2.0 * PI).ln() + 0.5 * theta.norm_squared() + m.nll_core.value,
        std_err: m.nll_core.std_err,
    }
}
