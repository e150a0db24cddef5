//! Layered experiment configuration: command line over config file over defaults.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::Args;
use overem::{build_simplex, EngineMode, ExpectationEngine, MixtureSpec, SimplexFrame};
use serde::Deserialize;

use crate::error::{CliError, Result};

/// One layer of settings. The config file deserializes into this directly;
/// command-line flags are converted into it.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub weights: Option<Vec<f64>>,
    pub weight_sets: Option<Vec<Vec<f64>>>,
    pub theta0_norm: Option<f64>,
    pub seed: Option<u64>,
    pub engine: Option<String>,
    pub gh_nodes: Option<usize>,
    pub mc_samples: Option<usize>,
    pub out: Option<PathBuf>,
    pub max_iter: Option<usize>,
    pub kl_stop: Option<f64>,
    pub init_radius: Option<f64>,
    pub n_grid: Option<Vec<usize>>,
    pub seeds: Option<usize>,
    pub iter_factor: Option<f64>,
    pub n: Option<usize>,
    pub radius: Option<f64>,
    pub grid_size: Option<usize>,
    pub pl_probes: Option<usize>,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Comma-separated mixing weights.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long = "theta0-norm")]
    pub theta0_norm: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// gh or mc
    #[arg(long)]
    pub engine: Option<String>,
    #[arg(long = "gh-nodes")]
    pub gh_nodes: Option<usize>,
    #[arg(long = "mc-samples")]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Comma-separated sample sizes.
    #[arg(long = "n-grid")]
    pub n_grid: Option<String>,
    /// Number of replicate seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Sample size for k-means.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
}

fn parse_list<T: std::str::FromStr>(name: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    raw.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| CliError::Config(format!("--{name}: bad entry {s:?}: {e}"))))
        .collect()
}

impl CommonArgs {
    pub fn to_layer(&self) -> Result<Layer> {
        Ok(Layer {
            k: self.k,
            d: self.d,
            weights: self.weights.as_deref().map(|w| parse_list("weights", w)).transpose()?,
            theta0_norm: self.theta0_norm,
            seed: self.seed,
            engine: self.engine.clone(),
            gh_nodes: self.gh_nodes,
            mc_samples: self.mc_samples,
            out: self.out.clone(),
            max_iter: self.max_iter,
            n_grid: self.n_grid.as_deref().map(|g| parse_list("n-grid", g)).transpose()?,
            seeds: self.seeds,
            n: self.n,
            radius: self.radius,
            ..Layer::default()
        })
    }
}

pub fn read_layer(path: &Path) -> Result<Layer> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Cli,
    File,
    Default,
}

impl Source {
    fn as_str(self) -> &'static str {
        match self {
            Source::Cli => "cli",
            Source::File => "file",
            Source::Default => "default",
        }
    }
}

/// Fully resolved and validated settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: String,
    pub k: usize,
    pub d: usize,
    pub weights: Vec<f64>,
    pub weight_sets: Vec<Vec<f64>>,
    pub theta0_norm: f64,
    pub seed: u64,
    pub engine: EngineMode,
    pub gh_nodes: usize,
    pub mc_samples: usize,
    pub out: PathBuf,
    pub max_iter: usize,
    pub kl_stop: f64,
    pub init_radius: f64,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub iter_factor: f64,
    pub n: usize,
    pub radius: f64,
    pub grid_size: usize,
    pub pl_probes: usize,
    /// (key, value, source) for every setting except the output directory.
    pub echo: Vec<(String, String, Source)>,
}

/// Weights used when none are given: (0.7, 0.3) for k = 2, (0.5, 0.3, 0.2)
/// for k = 3, otherwise linearly decreasing.
pub fn default_weights(k: usize) -> Vec<f64> {
    match k {
        2 => vec![0.7, 0.3],
        3 => vec![0.5, 0.3, 0.2],
        _ => {
            let total = (k * (k + 1) / 2) as f64;
            (0..k).map(|j| (k - j) as f64 / total).collect()
        }
    }
}

/// Geometric weights rho^j, normalized, for rho in {0.25, 0.5, 0.75}.
pub fn default_weight_sets(k: usize) -> Vec<Vec<f64>> {
    [0.25f64, 0.5, 0.75]
        .iter()
        .map(|rho| {
            let raw: Vec<f64> = (0..k).map(|j| rho.powi(j as i32)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|w| w / total).collect()
        })
        .collect()
}

fn fmt_list<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

struct Resolver<'a> {
    cli: &'a Layer,
    file: &'a Layer,
    echo: Vec<(String, String, Source)>,
}

impl Resolver<'_> {
    fn pick<T: Clone>(&mut self, key: &str, get: impl Fn(&Layer) -> Option<T>, default: impl FnOnce() -> T, show: impl Fn(&T) -> String) -> T {
        let (value, source) = match (get(self.cli), get(self.file)) {
            (Some(v), _) => (v, Source::Cli),
            (None, Some(v)) => (v, Source::File),
            (None, None) => (default(), Source::Default),
        };
        if key != "out" {
            self.echo.push((key.to_string(), show(&value), source));
        }
        value
    }
}

impl ExperimentConfig {
    /// Merges the layers and validates everything before any computation runs.
    pub fn resolve(command: &str, cli: &Layer, file: &Layer) -> Result<Self> {
        let mut r = Resolver { cli, file, echo: Vec::new() };
        let k = r.pick("k", |l| l.k, || 2, |v| v.to_string());
        let d = r.pick("d", |l| l.d, || k.saturating_sub(1).max(1), |v| v.to_string());
        if k < 2 {
            return Err(CliError::Config(format!("k must be at least 2, got {k}")));
        }
        if d + 1 < k {
            return Err(CliError::Config(format!("d = {d} is below k - 1 = {}", k - 1)));
        }
        let weights = r.pick("weights", |l| l.weights.clone(), || default_weights(k), |v| fmt_list(v));
        let explicit_weights = cli.weights.is_some() || file.weights.is_some();
        let weight_sets = r.pick(
            "weight_sets",
            |l| l.weight_sets.clone(),
            || if explicit_weights { vec![weights.clone()] } else { default_weight_sets(k) },
            |v| v.iter().map(|w| format!("[{}]", fmt_list(w))).collect::<Vec<_>>().join(";"),
        );
        let theta0_norm = r.pick("theta0_norm", |l| l.theta0_norm, || 0.3, |v| format!("{v:?}"));
        let seed = r.pick("seed", |l| l.seed, || 1, |v| v.to_string());
        let engine_name = r.pick("engine", |l| l.engine.clone(), || "gh".to_string(), |v| v.clone());
        let gh_nodes = r.pick("gh_nodes", |l| l.gh_nodes, || overem::engine::DEFAULT_GH_NODES, |v| v.to_string());
        let mc_samples = r.pick("mc_samples", |l| l.mc_samples, || overem::engine::DEFAULT_MC_SAMPLES, |v| v.to_string());
        let out = r.pick("out", |l| l.out.clone(), || PathBuf::from("out"), |v| v.display().to_string());
        let max_iter = r.pick("max_iter", |l| l.max_iter, || overem::population::DEFAULT_MAX_ITER, |v| v.to_string());
        let kl_stop = r.pick("kl_stop", |l| l.kl_stop, || overem::population::DEFAULT_KL_STOP, |v| format!("{v:?}"));
        let init_radius = r.pick("init_radius", |l| l.init_radius, || overem::population::DEFAULT_INIT_RADIUS, |v| format!("{v:?}"));
        let n_grid = r.pick("n_grid", |l| l.n_grid.clone(), || vec![1_000, 10_000, 100_000], |v| fmt_list(v));
        let seeds = r.pick("seeds", |l| l.seeds, || 20, |v| v.to_string());
        let iter_factor = r.pick("iter_factor", |l| l.iter_factor, || 3.0, |v| format!("{v:?}"));
        let n = r.pick("n", |l| l.n, || 10_000, |v| v.to_string());
        let radius = r.pick("radius", |l| l.radius, || 0.2, |v| format!("{v:?}"));
        let grid_size = r.pick("grid_size", |l| l.grid_size, || 16, |v| v.to_string());
        let pl_probes = r.pick("pl_probes", |l| l.pl_probes, || 200, |v| v.to_string());

        let engine: EngineMode = engine_name.parse().map_err(|e: overem::OveremError| CliError::Config(e.to_string()))?;
        let bad = |msg: String| Err(CliError::Config(msg));
        for (i, w) in std::iter::once(&weights).chain(weight_sets.iter()).enumerate() {
            if w.len() != k {
                return bad(format!("weight vector {i} has {} entries, expected k = {k}", w.len()));
            }
            MixtureSpec::new(w.clone()).map_err(|e| CliError::Config(format!("weights [{}]: {e}", fmt_list(w))))?;
        }
        if weight_sets.is_empty() {
            return bad("weight_sets is empty".into());
        }
        if !(theta0_norm.is_finite() && theta0_norm >= 0.0) {
            return bad(format!("theta0_norm must be finite and nonnegative, got {theta0_norm}"));
        }
        if engine == EngineMode::GaussHermite {
            if !(1..=400).contains(&gh_nodes) {
                return bad(format!("gh_nodes must be in 1..=400, got {gh_nodes}"));
            }
            if k.min(d) > overem::engine::MAX_GH_DIM {
                return bad(format!(
                    "gauss-hermite integrates up to {} dimensions; min(k, d) = {} needs --engine mc",
                    overem::engine::MAX_GH_DIM,
                    k.min(d)
                ));
            }
        }
        if mc_samples < 1_000 {
            return bad(format!("mc_samples must be at least 1000, got {mc_samples}"));
        }
        if max_iter == 0 || seeds == 0 || grid_size == 0 || pl_probes == 0 {
            return bad("max_iter, seeds, grid_size and pl_probes must be positive".into());
        }
        if n_grid.is_empty() || n_grid.iter().any(|&m| m < k) {
            return bad(format!("n_grid entries must be at least k = {k}"));
        }
        if n < k {
            return bad(format!("n must be at least k = {k}"));
        }
        if !(radius > 0.0 && radius.is_finite()) || !(iter_factor > 0.0) || !(kl_stop >= 0.0) || !(init_radius > 0.0) {
            return bad("radius, iter_factor and init_radius must be positive; kl_stop nonnegative".into());
        }

        Ok(ExperimentConfig {
            command: command.to_string(),
            k,
            d,
            weights,
            weight_sets,
            theta0_norm,
            seed,
            engine,
            gh_nodes,
            mc_samples,
            out,
            max_iter,
            kl_stop,
            init_radius,
            n_grid,
            seeds,
            iter_factor,
            n,
            radius,
            grid_size,
            pl_probes,
            echo: r.echo,
        })
    }

    pub fn from_args(command: &str, args: &CommonArgs) -> Result<Self> {
        let cli = args.to_layer()?;
        let file = match &args.config {
            Some(path) => read_layer(path)?,
            None => Layer::default(),
        };
        Self::resolve(command, &cli, &file)
    }

    /// FNV-1a of the command and every resolved value.
    pub fn hash(&self) -> u64 {
        let mut text = self.command.clone();
        for (key, value, _) in &self.echo {
            text.push_str(&format!("\n{key}={value}"));
        }
        overem::rng::fnv1a(text.as_bytes())
    }

    pub fn frame(&self) -> Result<SimplexFrame> {
        Ok(build_simplex(self.k, self.d)?)
    }

    pub fn spec(&self) -> Result<MixtureSpec> {
        Ok(MixtureSpec::new(self.weights.clone())?)
    }

    pub fn engine(&self) -> Result<ExpectationEngine> {
        match self.engine {
            EngineMode::GaussHermite => Ok(ExpectationEngine::gauss_hermite(self.gh_nodes)),
            EngineMode::MonteCarlo => Ok(ExpectationEngine::monte_carlo(self.d, self.mc_samples, self.seed)?),
        }
    }

    pub fn replicate_seeds(&self) -> Vec<u64> {
        overem::sample::seed_schedule(self.seed, self.seeds)
    }

    /// Iteration count ceil(iter_factor * ln n).
    pub fn iterations(&self, n: usize) -> usize {
        (self.iter_factor * (n as f64).ln()).ceil().max(1.0) as usize
    }

    /// Metadata lines (without the leading "# ") written atop every output file.
    pub fn metadata(&self, engine_fingerprint: &str, seeds: &[u64]) -> Vec<String> {
        let mut lines = vec![
            format!("tool: overem-cli {}", env!("CARGO_PKG_VERSION")),
            format!("command: {}", self.command),
            format!("config_hash: {:016x}", self.hash()),
            format!("seed: {}", self.seed),
        ];
        if !seeds.is_empty() {
            lines.push(format!("replicate_seeds: {}", fmt_list(seeds)));
        }
        lines.push(format!("engine: {engine_fingerprint}"));
        for (key, value, source) in &self.echo {
            lines.push(format!("config.{key}: {value} ({})", source.as_str()));
        }
        lines
    }
}
