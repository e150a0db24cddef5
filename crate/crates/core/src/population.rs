//! Population EM: the operator M, the negative log-likelihood L, KL to the
//! standard normal, spectral diagnostics at the optimum and the EM loop.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::{neg_log_lik_from, EngineMode, ExpectationEngine, ScalarEstimate, VectorEstimate};
use crate::error::{OveremError, Result};
use crate::mixture::MixtureSpec;
use crate::rng::stream_rng;
use crate::simplex::SimplexFrame;
use crate::stats::{linear_fit, LinearFit};

/// Default basin radius for theta_0.
pub const DEFAULT_INIT_RADIUS: f64 = 0.25;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_KL_STOP: f64 = 1e-10;
/// Smallest singular value of A regarded as nonzero.
pub const INVERTIBILITY_TOL: f64 = 1e-10;

/// M(theta), L(theta) and KL at one point from a single engine pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub em_update: VectorEstimate,
    pub neg_log_lik: ScalarEstimate,
    pub kl: ScalarEstimate,
}

pub fn evaluate(
    engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta: &DVector<f64>,
) -> Result<Evaluation> {
    let m = engine.moments(frame, spec, theta)?;
    let neg_log_lik = neg_log_lik_from(frame.d(), theta, &m);
    let kl = if theta.iter().all(|v| *v == 0.0) {
        // G(0) is exactly N(0, I)
        ScalarEstimate { value: 0.0, std_err: 0.0 }
    } else {
        ScalarEstimate {
            value: 0.5 * theta.norm_squared() - m.centered_lse.value,
            std_err: m.centered_lse.std_err,
        }
    };
    Ok(Evaluation { em_update: m.em_update, neg_log_lik, kl })
}

/// The population EM operator M(theta) = E[sum_j w_j(Z; theta) (R^j)^T Z].
pub fn em_operator(
    engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(engine.moments(frame, spec, theta)?.em_update.value)
}

/// L(theta) = -E[log f(Z; theta)].
pub fn neg_log_likelihood(
    engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta: &DVector<f64>,
) -> Result<f64> {
    Ok(evaluate(engine, frame, spec, theta)?.neg_log_lik.value)
}

/// KL[N(0, I) || G(theta)] = L(theta) - L(0), both terms on the same points.
pub fn kl_to_standard_normal(
    engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta: &DVector<f64>,
) -> Result<ScalarEstimate> {
    Ok(evaluate(engine, frame, spec, theta)?.kl)
}

/// Gradient of L, which is theta - M(theta).
pub fn grad_neg_log_likelihood(
    engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(theta - em_operator(engine, frame, spec, theta)?)
}

/// Curvature of L at the optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    /// A = sum_j pi_j R^j
    pub a: DMatrix<f64>,
    /// Hessian of L at 0, A A^T.
    pub hessian0: DMatrix<f64>,
    /// Eigenvalues of A A^T, ascending.
    pub eigenvalues: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Smallest eigenvalue of A A^T restricted to the span of the vertices.
    pub lambda_min_simplex: f64,
    /// |pi_hat(l)|^2 for l = 1..k-1.
    pub dft_mod_sq: Vec<f64>,
    pub invertible: bool,
    /// 1 - lambda_min / 4, only when A is invertible.
    pub kappa_bound: Option<f64>,
    pub degenerate_weights: bool,
}

fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn spectral_report(frame: &SimplexFrame, spec: &MixtureSpec) -> SpectralReport {
    let d = frame.d();
    let k = frame.k();
    let a = frame
        .powers()
        .iter()
        .zip(spec.weights())
        .fold(DMatrix::zeros(d, d), |acc, (p, w)| acc + p * *w);
    let mut hessian0 = &a * a.transpose();
    // exact symmetry; the product is symmetric up to rounding
    hessian0 = (&hessian0 + hessian0.transpose()) * 0.5;
    let eigenvalues = sorted_eigenvalues(hessian0.clone());
    let mut singular_values: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| a.total_cmp(b));
    let sub = hessian0.view((0, 0), (k - 1, k - 1)).into_owned();
    let lambda_min_simplex = sorted_eigenvalues(sub)[0].max(0.0);
    let lambda_min = eigenvalues[0].max(0.0);
    let lambda_max = *eigenvalues.last().unwrap();
    let invertible = singular_values[0] > INVERTIBILITY_TOL;
    let kappa_bound = invertible.then(|| 1.0 - lambda_min / 4.0);
    SpectralReport {
        a,
        hessian0,
        eigenvalues,
        singular_values,
        lambda_min,
        lambda_max,
        lambda_min_simplex,
        dft_mod_sq: spec.dft()[1..].iter().map(|c| c.norm_sqr()).collect(),
        invertible,
        kappa_bound,
        degenerate_weights: spec.is_degenerate(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub finite_difference: DMatrix<f64>,
    /// I - A A^T
    pub analytic: DMatrix<f64>,
    pub max_error: f64,
    /// Largest asymmetry of the finite-difference Hessian I - dM/dtheta.
    pub max_asymmetry: f64,
    pub fd_step: f64,
}

/// Central-difference Jacobian of M at 0 against I - A A^T.
pub fn jacobian_check(
    engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    fd_step: f64,
) -> Result<JacobianReport> {
    if !(fd_step > 0.0) {
        return Err(OveremError::Domain(format!("fd_step must be positive, got {fd_step}")));
    }
    let d = frame.d();
    let mut fd = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut plus = DVector::zeros(d);
        plus[i] = fd_step;
        let minus = -plus.clone();
        let col = (em_operator(engine, frame, spec, &plus)? - em_operator(engine, frame, spec, &minus)?)
            / (2.0 * fd_step);
        fd.set_column(i, &col);
    }
    let report = spectral_report(frame, spec);
    let analytic = DMatrix::identity(d, d) - report.hessian0;
    let max_error = (&fd - &analytic).amax();
    let max_asymmetry = (&fd - fd.transpose()).amax();
    Ok(JacobianReport { finite_difference: fd, analytic, max_error, max_asymmetry, fd_step })
}

/// How the next iterate is formed from M(theta).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    /// theta <- M(theta)
    Em,
    /// theta <- theta - step * (theta - M(theta)); comparison mode only.
    GradientEm { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub max_iter: usize,
    pub kl_stop: f64,
    pub init_radius: f64,
    pub update: UpdateRule,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_iter: DEFAULT_MAX_ITER,
            kl_stop: DEFAULT_KL_STOP,
            init_radius: DEFAULT_INIT_RADIUS,
            update: UpdateRule::Em,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub theta: DVector<f64>,
    pub kl: f64,
    pub kl_std_err: f64,
    pub noise_floor: f64,
    pub neg_log_lik: f64,
    pub grad_norm: f64,
    /// kl_t / kl_{t-1}; absent at t = 0 or when the previous KL is not positive.
    pub ratio: Option<f64>,
}

impl TraceRecord {
    pub fn theta_norm(&self) -> f64 {
        self.theta.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIter,
    KlTarget,
    NoiseFloor,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxIter => "max_iter",
            StopReason::KlTarget => "kl_stop",
            StopReason::NoiseFloor => "noise_floor",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub kappa_bound: Option<f64>,
    pub lambda_min: f64,
    pub lambda_min_simplex: f64,
    pub hypotheses_violated: bool,
    pub engine: String,
    pub frame: String,
    pub spec: String,
    pub init_radius: f64,
    pub started_inside_radius: bool,
    /// Every step shrank the iterate norm (or kept it).
    pub contracting: bool,
    pub max_theta_norm: f64,
    pub stop_reason: StopReason,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    pub records: Vec<TraceRecord>,
    pub meta: TraceMeta,
}

impl EmTrace {
    pub fn final_record(&self) -> &TraceRecord {
        self.records.last().expect("trace holds at least theta_0")
    }

    /// Records whose KL sits above `factor` times their noise floor.
    pub fn above_floor(&self, factor: f64) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kl > factor * r.noise_floor)
    }

    /// Semilog fit of ln KL against t over records above 10x the noise floor.
    pub fn semilog_fit(&self) -> Option<LinearFit> {
        let (ts, ys): (Vec<f64>, Vec<f64>) = self.above_floor(10.0).map(|r| (r.t as f64, r.kl.ln())).unzip();
        linear_fit(&ts, &ys)
    }

    /// Empirical per-iteration KL contraction, exp(slope) of the semilog fit.
    pub fn fitted_ratio(&self) -> Option<f64> {
        self.semilog_fit().map(|f| f.slope.exp())
    }

    /// CSV with columns `t,theta_norm,kl,grad_norm,ratio`, metadata first as `#` lines.
    pub fn write_csv<W: Write>(&self, mut out: W, extra_meta: &[String]) -> io::Result<()> {
        for line in extra_meta {
            writeln!(out, "# {line}")?;
        }
        let m = &self.meta;
        writeln!(out, "# label: {}", m.label)?;
        writeln!(out, "# engine: {}", m.engine)?;
        writeln!(out, "# frame: {}", m.frame)?;
        writeln!(out, "# spec: {}", m.spec)?;
        match m.kappa_bound {
            Some(k) => writeln!(out, "# kappa_bound: {k}")?,
            None => writeln!(out, "# kappa_bound: null")?,
        }
        writeln!(out, "# lambda_min: {}", m.lambda_min)?;
        writeln!(out, "# lambda_min_simplex: {}", m.lambda_min_simplex)?;
        if m.hypotheses_violated {
            writeln!(out, "# warning: theorem hypotheses violated (zero DFT entry in weights)")?;
        }
        writeln!(out, "# init_radius: {} started_inside: {}", m.init_radius, m.started_inside_radius)?;
        writeln!(out, "# contracting: {} max_theta_norm: {}", m.contracting, m.max_theta_norm)?;
        writeln!(out, "# stop_reason: {}", m.stop_reason.as_str())?;
        writeln!(out, "t,theta_norm,kl,grad_norm,ratio")?;
        for r in &self.records {
            let ratio = r.ratio.map(|v| format!("{v:?}")).unwrap_or_default();
            writeln!(out, "{},{:?},{:?},{:?},{}", r.t, r.theta_norm(), r.kl, r.grad_norm, ratio)?;
        }
        Ok(())
    }
}

pub(crate) fn divergence_guard(theta0_norm: f64) -> f64 {
    10.0 * theta0_norm + 1.0
}

/// Iterates the population EM map from `theta0`.
pub fn run_population_em(
    engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    theta0: &DVector<f64>,
    opts: &RunOptions,
) -> Result<EmTrace> {
    if opts.max_iter < 1 {
        return Err(OveremError::Domain("max_iter must be at least 1".into()));
    }
    let spectral = spectral_report(frame, spec);
    let guard = divergence_guard(theta0.norm());
    let mut records = Vec::with_capacity(opts.max_iter + 1);
    let mut theta = theta0.clone();
    let mut eval = evaluate(engine, frame, spec, &theta)?;
    let mut stop_reason = StopReason::MaxIter;

    for t in 0..=opts.max_iter {
        let grad = &theta - &eval.em_update.value;
        let kl = eval.kl.value;
        let noise_floor = engine.kl_noise_floor(eval.kl.std_err);
        let ratio = records
            .last()
            .and_then(|prev: &TraceRecord| (prev.kl > 0.0).then(|| kl / prev.kl));
        records.push(TraceRecord {
            t,
            theta: theta.clone(),
            kl,
            kl_std_err: eval.kl.std_err,
            noise_floor,
            neg_log_lik: eval.neg_log_lik.value,
            grad_norm: grad.norm(),
            ratio,
        });
        if t >= 1 {
            if kl <= opts.kl_stop {
                stop_reason = StopReason::KlTarget;
                break;
            }
            if engine.mode() == EngineMode::MonteCarlo && kl < noise_floor {
                stop_reason = StopReason::NoiseFloor;
                break;
            }
        }
        if t == opts.max_iter {
            break;
        }
        theta = match opts.update {
            UpdateRule::Em => eval.em_update.value.clone(),
            UpdateRule::GradientEm { step } => &theta - grad * step,
        };
        let norm = theta.norm();
        if !norm.is_finite() || norm > guard {
            return Err(OveremError::Diverged { step: t + 1, norm, guard });
        }
        eval = evaluate(engine, frame, spec, &theta)?;
    }

    Ok(EmTrace {
        meta: trace_meta(engine, frame, spec, &spectral, theta0, opts.init_radius, &records, stop_reason),
        records,
    })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn trace_meta(
    engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    spectral: &SpectralReport,
    theta0: &DVector<f64>,
    init_radius: f64,
    records: &[TraceRecord],
    stop_reason: StopReason,
) -> TraceMeta {
    let norms: Vec<f64> = records.iter().map(|r| r.theta_norm()).collect();
    let hypotheses_violated = spec.is_degenerate() || !spectral.invertible;
    TraceMeta {
        kappa_bound: if hypotheses_violated { None } else { spectral.kappa_bound },
        lambda_min: spectral.lambda_min,
        lambda_min_simplex: spectral.lambda_min_simplex,
        hypotheses_violated,
        engine: engine.fingerprint(),
        frame: frame.fingerprint(),
        spec: spec.fingerprint(),
        init_radius,
        started_inside_radius: theta0.norm() <= init_radius,
        contracting: norms.windows(2).all(|w| w[1] <= w[0]),
        max_theta_norm: norms.iter().copied().fold(0.0, f64::max),
        stop_reason,
        label: spec.fingerprint(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlReport {
    /// min over probes of |grad L|^2 - lambda_min (L(theta) - L(0)).
    pub min_margin: f64,
    pub worst_theta: DVector<f64>,
    /// Margins down to -tolerance count as passing.
    pub tolerance: f64,
    pub lambda_min: f64,
    pub lambda_min_simplex: f64,
    pub probes: usize,
    pub passed: bool,
}

/// Point uniformly distributed in the ball of radius `radius` in R^d.
pub fn uniform_ball_point<R: Rng>(rng: &mut R, d: usize, radius: f64) -> DVector<f64> {
    loop {
        let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm > 0.0 {
            let u: f64 = rng.gen();
            return dir * (radius * u.powf(1.0 / d as f64) / norm);
        }
    }
}

/// Checks the local PL inequality on random points of a ball around 0.
pub fn pl_inequality_probe(
    engine: &ExpectationEngine,
    frame: &SimplexFrame,
    spec: &MixtureSpec,
    radius: f64,
    n_probes: usize,
    seed: u64,
) -> Result<PlReport> {
    if !(radius > 0.0) || n_probes == 0 {
        return Err(OveremError::Domain("PL probe needs radius > 0 and at least one probe".into()));
    }
    let spectral = spectral_report(frame, spec);
    let lambda = spectral.lambda_min;
    let mut rng = stream_rng(seed, "pl-probe");
    let mut min_margin = f64::INFINITY;
    let mut worst_theta = DVector::zeros(frame.d());
    let mut tolerance: f64 = crate::engine::GH_NOISE_FLOOR;
    for _ in 0..n_probes {
        let theta = uniform_ball_point(&mut rng, frame.d(), radius);
        let eval = evaluate(engine, frame, spec, &theta)?;
        let grad = &theta - &eval.em_update.value;
        let margin = grad.norm_squared() - lambda * eval.kl.value;
        let se = 2.0 * grad.norm() * eval.em_update.std_err.norm() + lambda * eval.kl.std_err;
        tolerance = tolerance.max(3.0 * se);
        if margin < min_margin {
            min_margin = margin;
            worst_theta = theta;
        }
    }
    Ok(PlReport {
        min_margin,
        worst_theta,
        tolerance,
        lambda_min: lambda,
        lambda_min_simplex: spectral.lambda_min_simplex,
        probes: n_probes,
        passed: min_margin >= -tolerance,
    })
}
