//! Mixture weights, densities and posterior responsibilities.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{ensure_finite, OveremError, Result};
use crate::simplex::SimplexFrame;

/// Weight sums within this distance of one are accepted as-is.
pub const SUM_TOL: f64 = 1e-12;
/// Weight sums within this distance of one are renormalized; beyond it they are rejected.
pub const RENORMALIZE_TOL: f64 = 1e-9;
/// DFT modulus at or below which the weights count as degenerate.
pub const DFT_TOL: f64 = 1e-12;

/// Fixed mixture weights and their discrete Fourier transform.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    dft: Vec<Complex64>,
    min_dft_mod: f64,
    renormalized: bool,
}

/// pi_hat(l) = sum_j pi_j exp(i 2 pi l j / k), evaluated directly.
pub fn weight_dft(weights: &[f64]) -> Result<Vec<Complex64>> {
    if weights.is_empty() {
        return Err(OveremError::Domain("empty weight vector".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(OveremError::Domain(format!("weights must be positive and finite, got {w}")));
    }
    let k = weights.len();
    Ok((0..k)
        .map(|l| {
            weights
                .iter()
                .enumerate()
                .map(|(j, &w)| {
                    // reduce l*j mod k first so the angle stays exact for the trivial terms
                    let angle = 2.0 * PI * ((l * j) % k) as f64 / k as f64;
                    Complex64::from_polar(w, angle)
                })
                .sum()
        })
        .collect())
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(OveremError::Domain(format!(
                "need at least 2 weights, got {}",
                weights.len()
            )));
        }
        let mut weights = weights;
        // validates positivity
        weight_dft(&weights)?;
        let total: f64 = weights.iter().sum();
        let gap = (total - 1.0).abs();
        let renormalized = gap > SUM_TOL;
        if gap > RENORMALIZE_TOL {
            return Err(OveremError::Domain(format!("weights sum to {total}, expected 1")));
        }
        if renormalized {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        let dft = weight_dft(&weights)?;
        let min_dft_mod = dft[1..].iter().map(|c| c.norm()).fold(f64::INFINITY, f64::min);
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(MixtureSpec { weights, log_weights, dft, min_dft_mod, renormalized })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn dft(&self) -> &[Complex64] {
        &self.dft
    }

    pub fn min_dft_mod(&self) -> f64 {
        self.min_dft_mod
    }

    /// True when some non-trivial DFT entry vanishes.
    pub fn is_degenerate(&self) -> bool {
        self.min_dft_mod <= DFT_TOL
    }

    pub fn was_renormalized(&self) -> bool {
        self.renormalized
    }

    pub fn fingerprint(&self) -> String {
        let w: Vec<String> = self.weights.iter().map(|w| format!("{w}")).collect();
        format!("weights({})", w.join(","))
    }
}

/// Location parameter with its cached Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaState {
    theta: DVector<f64>,
    norm: f64,
}

impl ThetaState {
    pub fn new(theta: DVector<f64>) -> Self {
        let norm = theta.norm();
        ThetaState { theta, norm }
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(DVector::zeros(d))
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.theta
    }
}

impl From<DVector<f64>> for ThetaState {
    fn from(theta: DVector<f64>) -> Self {
        ThetaState::new(theta)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Component locations flattened for tight per-sample loops.
///
/// Holds `mu_j = R^j theta` row-major and `log pi_j`; the logit of component j
/// at x is `log pi_j + mu_j . x`.
#[derive(Debug, Clone)]
pub struct ComponentKernel {
    k: usize,
    d: usize,
    means: Vec<f64>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
}

impl ComponentKernel {
    pub fn new(frame: &SimplexFrame, spec: &MixtureSpec, theta: &DVector<f64>) -> Self {
        let k = frame.k();
        let d = frame.d();
        let mut means = Vec::with_capacity(k * d);
        for mu in frame.component_means(theta) {
            means.extend(mu.iter());
        }
        ComponentKernel {
            k,
            d,
            means,
            log_weights: spec.log_weights().to_vec(),
            weights: spec.weights().to_vec(),
        }
    }

    /// Kernel from explicit row-major locations (k rows of length d).
    pub fn from_means(k: usize, d: usize, means: Vec<f64>, spec: &MixtureSpec) -> Self {
        assert_eq!(means.len(), k * d);
        ComponentKernel {
            k,
            d,
            means,
            log_weights: spec.log_weights().to_vec(),
            weights: spec.weights().to_vec(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `mu_j . x` for every j.
    pub fn projections(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate().take(self.k) {
            let mu = &self.means[j * self.d..(j + 1) * self.d];
            *o = mu.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Writes responsibilities into `out` from precomputed projections and
    /// returns `log sum_j pi_j exp(proj_j)`.
    pub fn weights_from_projections(&self, proj: &[f64], out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for j in 0..self.k {
            out[j] = self.log_weights[j] + proj[j];
            max = max.max(out[j]);
        }
        let mut total = 0.0;
        for o in out.iter_mut().take(self.k) {
            *o = (*o - max).exp();
            total += *o;
        }
        for o in out.iter_mut().take(self.k) {
            *o /= total;
        }
        max + total.ln()
    }

    /// `sum_j pi_j proj_j`, the zero-mean part of the log-sum-exp under N(0, I).
    pub fn weighted_projection(&self, proj: &[f64]) -> f64 {
        self.weights.iter().zip(proj).map(|(w, p)| w * p).sum()
    }
}

/// Standard normal log-density in d dimensions.
pub fn std_normal_log_density(x: &[f64]) -> f64 {
    let sq: f64 = x.iter().map(|v| v * v).sum();
    -0.5 * x.len() as f64 * (2.0 * PI).ln() - 0.5 * sq
}

fn check_point(frame: &SimplexFrame, theta: &ThetaState, x: &DVector<f64>) -> Result<()> {
    if x.len() != frame.d() {
        return Err(OveremError::Dimension { expected: frame.d(), actual: x.len() });
    }
    if theta.dim() != frame.d() {
        return Err(OveremError::Dimension { expected: frame.d(), actual: theta.dim() });
    }
    ensure_finite(x.as_slice(), "x")?;
    ensure_finite(theta.theta().as_slice(), "theta")
}

/// log f(x; theta) using the factored form
/// `-(d/2) log 2pi - (|x|^2 + |theta|^2)/2 + lse_j(log pi_j + mu_j . x)`.
pub fn log_density(
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta: &ThetaState,
    x: &DVector<f64>,
) -> Result<f64> {
    check_point(frame, theta, x)?;
    let kernel = ComponentKernel::new(frame, spec, theta.theta());
    let mut proj = vec![0.0; frame.k()];
    let mut w = vec![0.0; frame.k()];
    kernel.projections(x.as_slice(), &mut proj);
    let lse = kernel.weights_from_projections(&proj, &mut w);
    Ok(std_normal_log_density(x.as_slice()) - 0.5 * theta.norm() * theta.norm() + lse)
}

/// Posterior probability of each component at x, computed in log space.
pub fn responsibilities(
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta: &ThetaState,
    x: &DVector<f64>,
) -> Result<Vec<f64>> {
    check_point(frame, theta, x)?;
    let kernel = ComponentKernel::new(frame, spec, theta.theta());
    let mut proj = vec![0.0; frame.k()];
    let mut w = vec![0.0; frame.k()];
    kernel.projections(x.as_slice(), &mut proj);
    kernel.weights_from_projections(&proj, &mut w);
    Ok(w)
}
