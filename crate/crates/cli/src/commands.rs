//! The six experiment subcommands. Each writes its CSVs first, then renders
//! SVGs from the CSVs read back from disk.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use overem::dataset::{Dataset, DatasetOptions};
use overem::lloyd::center_geometry;
use overem::population::uniform_ball_point;
use overem::sample::{radius_doubling_factor, rate_experiment};
use overem::{
    check_frame, em_operator, grad_neg_log_likelihood, jacobian_check, neg_log_likelihood, perturbation_probe,
    pl_inequality_probe, population_lloyd_fixed_radius, population_lloyd_radius, population_lloyd_update,
    run_population_em, run_sample_kmeans, spectral_report, EmTrace, ExpectationEngine, LloydConfig, MixtureSpec,
    RunOptions, SimplexFrame, UpdateRule,
};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{ensure_dir, num, write_atomic, CsvBuilder, Table};
use crate::svg::{Mark, Plot, Series};

/// What a command produced. A non-empty `failed` list maps to exit code 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failed: Vec<String>,
    pub warnings: Vec<String>,
}

const POINTS_PLOTTED: usize = 5_000;

fn fmt_weights(w: &[f64]) -> String {
    w.iter().map(|&x| num(x)).collect::<Vec<_>>().join(" ")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "null".into())
}

fn theta0(cfg: &ExperimentConfig, frame: &SimplexFrame) -> DVector<f64> {
    &frame.vertices()[0] * cfg.theta0_norm
}

fn prepare(cfg: &ExperimentConfig) -> Result<&Path> {
    ensure_dir(&cfg.out)?;
    Ok(&cfg.out)
}

fn write_svg(path: &Path, plot: &Plot, files: &mut Vec<PathBuf>) -> Result<()> {
    write_atomic(path, plot.render().as_bytes())?;
    files.push(path.to_path_buf());
    Ok(())
}

pub fn spectrum(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let frame = cfg.frame()?;
    let spec = cfg.spec()?;
    let r = spectral_report(&frame, &spec);
    let mut csv = CsvBuilder::new(&cfg.metadata("closed-form", &[]), &["quantity", "index", "value"]);
    for (i, v) in r.singular_values.iter().enumerate() {
        csv.row(["singular_value".into(), i.to_string(), num(*v)]);
    }
    for (i, v) in r.eigenvalues.iter().enumerate() {
        csv.row(["eigenvalue".into(), i.to_string(), num(*v)]);
    }
    for (l, v) in r.dft_mod_sq.iter().enumerate() {
        csv.row(["dft_mod_sq".into(), (l + 1).to_string(), num(*v)]);
    }
    csv.row(["lambda_min".into(), String::new(), num(r.lambda_min)]);
    csv.row(["lambda_max".into(), String::new(), num(r.lambda_max)]);
    csv.row(["lambda_min_simplex".into(), String::new(), num(r.lambda_min_simplex)]);
    csv.row(["kappa_bound".into(), String::new(), opt(r.kappa_bound)]);
    csv.row(["invertible".into(), String::new(), (r.invertible as u8).to_string()]);
    let path = dir.join("spectrum.csv");
    csv.write(&path)?;

    println!("k={} d={} weights=[{}]", cfg.k, cfg.d, fmt_weights(&cfg.weights));
    println!("singular values of A: {}", fmt_weights(&r.singular_values));
    println!("eigenvalues of A A^T: {}", fmt_weights(&r.eigenvalues));
    println!("lambda_min = {}  lambda_max = {}", num(r.lambda_min), num(r.lambda_max));
    for (l, v) in r.dft_mod_sq.iter().enumerate() {
        println!("|pi_hat({})|^2 = {}", l + 1, num(*v));
    }
    let dft_min = r.dft_mod_sq.iter().copied().fold(f64::INFINITY, f64::min);
    println!("lambda_min on simplex span = {}  min_l |pi_hat(l)|^2 = {}", num(r.lambda_min_simplex), num(dft_min));
    let mut warnings = Vec::new();
    match r.kappa_bound {
        Some(k) => println!("kappa bound = {}", num(k)),
        None => {
            println!("degenerate: theorem hypotheses violated (A is singular, kappa bound undefined)");
            warnings.push("hypotheses violated".into());
        }
    }
    Ok(Outcome { files: vec![path], failed: Vec::new(), warnings })
}

/// Per-trace diagnostics summarized in population_summary.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub kappa_bound: Option<f64>,
    pub fitted_ratio: Option<f64>,
    pub r_squared: Option<f64>,
    /// Largest KL ratio among iterations with KL above 10x the noise floor.
    pub max_ratio: Option<f64>,
    pub descent_ok: bool,
    pub final_kl: f64,
    pub iterations: usize,
}

pub fn summarize_trace(trace: &EmTrace) -> TraceSummary {
    let fit = trace.semilog_fit();
    let max_ratio = trace.above_floor(10.0).filter_map(|r| r.ratio).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    let descent_ok = trace
        .records
        .windows(2)
        .all(|w| w[1].neg_log_lik <= w[0].neg_log_lik + 1e-12 * w[0].neg_log_lik.abs().max(1.0));
    TraceSummary {
        kappa_bound: trace.meta.kappa_bound,
        fitted_ratio: fit.as_ref().map(|f| f.slope.exp()),
        r_squared: fit.map(|f| f.r_squared),
        max_ratio,
        descent_ok,
        final_kl: trace.final_record().kl,
        iterations: trace.final_record().t,
    }
}

pub fn population_run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let frame = cfg.frame()?;
    let engine = cfg.engine()?;
    let theta0 = theta0(cfg, &frame);
    let opts = RunOptions { max_iter: cfg.max_iter, kl_stop: cfg.kl_stop, init_radius: cfg.init_radius, update: UpdateRule::Em };
    let meta = cfg.metadata(&engine.fingerprint(), &[]);

    let results: Vec<Result<(PathBuf, TraceSummary)>> = cfg
        .weight_sets
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let spec = MixtureSpec::new(w.clone())?;
            let trace = run_population_em(&engine, &frame, &spec, &theta0, &opts)?;
            let mut extra = meta.clone();
            extra.push(format!("weight_set: {i} [{}]", fmt_weights(w)));
            let mut bytes = Vec::new();
            trace.write_csv(&mut bytes, &extra).map_err(|e| CliError::io("trace buffer", e))?;
            let path = dir.join(format!("trace_{i}.csv"));
            write_atomic(&path, &bytes)?;
            Ok((path, summarize_trace(&trace)))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut csv = CsvBuilder::new(
        &meta,
        &["set", "weights", "kappa_bound", "fitted_ratio", "r_squared", "max_ratio_above_floor", "descent", "final_kl", "iterations"],
    );
    let mut warnings = Vec::new();
    for (i, (w, (_, s))) in cfg.weight_sets.iter().zip(&results).enumerate() {
        csv.row([
            i.to_string(),
            fmt_weights(w),
            opt(s.kappa_bound),
            opt(s.fitted_ratio),
            opt(s.r_squared),
            opt(s.max_ratio),
            if s.descent_ok { "ok".into() } else { "violated".into() },
            num(s.final_kl),
            s.iterations.to_string(),
        ]);
        println!(
            "set {i} [{}]: kappa bound {} fitted ratio {} final KL {:.3e} after {} iterations",
            fmt_weights(w),
            opt(s.kappa_bound),
            opt(s.fitted_ratio),
            s.final_kl,
            s.iterations
        );
        if s.kappa_bound.is_none() {
            warnings.push(format!("set {i}: hypotheses violated"));
        }
    }
    let summary_path = dir.join("population_summary.csv");
    csv.write(&summary_path)?;

    let mut files: Vec<PathBuf> = results.iter().map(|(p, _)| p.clone()).collect();
    files.push(summary_path.clone());
    let summary = Table::read(&summary_path)?;
    let mut plot = Plot {
        title: "Population EM: KL to N(0, I)".into(),
        x_label: "iteration t".into(),
        y_label: "KL (nats)".into(),
        log_y: true,
        ..Default::default()
    };
    let kappas = summary.column("kappa_bound").unwrap_or_default();
    let fitted = summary.column("fitted_ratio").unwrap_or_default();
    let weights = summary.column("weights").unwrap_or_default();
    for (i, (path, _)) in results.iter().enumerate() {
        let t = Table::read(path)?;
        let pts = t.numbers("t").into_iter().zip(t.numbers("kl")).collect();
        plot.series.push(Series::new(format!("pi=({})", weights.get(i).copied().unwrap_or("")), pts, Mark::LineDots));
        plot.notes.push(format!("set {i}: kappa {} fit {}", short(kappas.get(i)), short(fitted.get(i))));
    }
    write_svg(&dir.join("population.svg"), &plot, &mut files)?;
    Ok(Outcome { files, failed: Vec::new(), warnings })
}

fn short(v: Option<&&str>) -> String {
    match v.and_then(|s| s.parse::<f64>().ok()) {
        Some(x) => format!("{x:.4}"),
        None => "n/a".into(),
    }
}

pub fn sample_run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let frame = cfg.frame()?;
    let spec = cfg.spec()?;
    let engine = cfg.engine()?;
    let seeds = cfg.replicate_seeds();
    let report = rate_experiment(&engine, &frame, &spec, &theta0(cfg, &frame), &cfg.n_grid, &seeds, |n| cfg.iterations(n))?;
    let meta = cfg.metadata(&engine.fingerprint(), &seeds);

    let mut cells = CsvBuilder::new(&meta, &["n", "seed", "T", "final_kl", "final_theta_norm"]);
    for c in &report.cells {
        cells.row([c.n.to_string(), c.seed.to_string(), c.iterations.to_string(), num(c.final_kl), num(c.final_theta_norm)]);
    }
    let cells_path = dir.join("rate.csv");
    cells.write(&cells_path)?;

    let mut agg = CsvBuilder::new(&meta, &["n", "median_kl", "q25", "q75"]);
    for s in &report.summaries {
        agg.row([s.n.to_string(), num(s.median_kl), num(s.q25_kl), num(s.q75_kl)]);
    }
    agg.comment(&format!("fitted_slope: {}", report.kl_slope.map(num).unwrap_or_else(|| "n/a".into())));
    let agg_path = dir.join("rate_aggregate.csv");
    agg.write(&agg_path)?;
    for s in &report.summaries {
        println!("n={:>8} median KL {:.4e} [q25 {:.4e}, q75 {:.4e}]", s.n, s.median_kl, s.q25_kl, s.q75_kl);
    }
    println!("fitted log-log slope: {}", report.kl_slope.map(|s| format!("{s:.4}")).unwrap_or_else(|| "n/a".into()));

    let mut files = vec![cells_path.clone(), agg_path.clone()];
    let cells = Table::read(&cells_path)?;
    let agg = Table::read(&agg_path)?;
    let plot = Plot {
        title: "Sample EM: final KL vs n".into(),
        x_label: "n".into(),
        y_label: "final KL (nats)".into(),
        log_x: true,
        log_y: true,
        series: vec![
            Series::new("replicates", cells.numbers("n").into_iter().zip(cells.numbers("final_kl")).collect(), Mark::Dots),
            Series::new("median", agg.numbers("n").into_iter().zip(agg.numbers("median_kl")).collect(), Mark::LineDots),
        ],
        notes: vec![format!("slope {}", agg.comment_value("fitted_slope").unwrap_or("n/a"))],
    };
    write_svg(&dir.join("rate.svg"), &plot, &mut files)?;
    Ok(Outcome { files, failed: Vec::new(), warnings: Vec::new() })
}

/// Shape label for k-means centers with pairwise and radial spread below 7%.
pub fn lloyd_verdict(k: usize, d: usize, pairwise_spread: f64, radius_spread: f64) -> String {
    let regular = pairwise_spread <= 0.07 && radius_spread <= 0.07;
    let shape = match (k, d) {
        (2, _) => "symmetric pair",
        (3, 2) => "equilateral triangle",
        (4, 3) => "regular tetrahedron",
        _ => "regular simplex",
    };
    if regular {
        format!("near-{shape}")
    } else {
        format!("irregular (not a {shape})")
    }
}

pub fn lloyd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let frame = cfg.frame()?;
    let d = cfg.d;
    let data = Dataset::generate(cfg.n, d, cfg.seed, "lloyd", DatasetOptions::default())?;
    let km = run_sample_kmeans(&LloydConfig::new(cfg.k, d), &data)?;
    let geom = center_geometry(&km.centers);
    let r0 = population_lloyd_radius(d);
    let engine = ExpectationEngine::monte_carlo(d, cfg.mc_samples, cfg.seed)?;
    let update = population_lloyd_update(&frame, r0, &engine)?;
    let movement = update
        .centers
        .iter()
        .zip(frame.vertices())
        .map(|(c, v)| (c - v * r0).norm() / r0)
        .fold(0.0, f64::max);
    let fixed = population_lloyd_fixed_radius(&frame, &engine)?;
    let verdict = lloyd_verdict(cfg.k, d, geom.pairwise_spread, geom.radius_spread);
    let meta = cfg.metadata(&engine.fingerprint(), &[]);

    let mut columns: Vec<String> = vec!["center".into(), "radius".into()];
    columns.extend((1..=d).map(|a| format!("x{a}")));
    let refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut centers = CsvBuilder::new(&meta, &refs);
    for (i, c) in km.centers.iter().enumerate() {
        let mut row = vec![i.to_string(), c.norm().to_string()];
        row.extend(c.iter().map(|&x| num(x)));
        centers.row(row);
    }
    let centers_path = dir.join("centers.csv");
    centers.write(&centers_path)?;

    let mut summary = CsvBuilder::new(&meta, &["quantity", "value"]);
    let rows: Vec<(&str, String)> = vec![
        ("n", cfg.n.to_string()),
        ("kmeans_iterations", km.iterations.to_string()),
        ("kmeans_converged", km.converged.to_string()),
        ("r0", num(r0)),
        ("mean_center_radius", num(geom.mean_radius)),
        ("radius_rel_error_vs_r0", num((geom.mean_radius - r0).abs() / r0)),
        ("radius_spread", num(geom.radius_spread)),
        ("mean_pairwise_distance", num(geom.mean_pairwise)),
        ("pairwise_spread", num(geom.pairwise_spread)),
        ("population_movement_at_r0", num(movement)),
        ("population_fixed_radius", num(fixed)),
        ("fixed_radius_over_r0", num(fixed / r0)),
        ("verdict", verdict.clone()),
    ];
    for (q, v) in &rows {
        summary.row([q.to_string(), v.clone()]);
    }
    let summary_path = dir.join("lloyd_summary.csv");
    summary.write(&summary_path)?;

    let shown = cfg.n.min(POINTS_PLOTTED);
    let mut points = CsvBuilder::new(&meta, &["x", "y", "cluster"]);
    for i in 0..shown {
        let row = data.row(i);
        let y = if d > 1 { row[1] } else { 0.0 };
        points.row([num(row[0]), num(y), km.assignments[i].to_string()]);
    }
    let points_path = dir.join("lloyd_points.csv");
    points.write(&points_path)?;

    println!("k-means on n={} points in d={d}: {} iterations, converged {}", cfg.n, km.iterations, km.converged);
    println!("center radius {:.5} vs R0(d) = {r0:.5} (relative error {:.4})", geom.mean_radius, (geom.mean_radius - r0).abs() / r0);
    println!("pairwise spread {:.4}, radius spread {:.4}: {verdict}", geom.pairwise_spread, geom.radius_spread);
    println!("population update at R0 moves centers by {:.4} relative", movement);
    println!("population fixed radius {fixed:.5} = {:.4} R0; smaller radii drift outward, larger inward", fixed / r0);

    let mut files = vec![centers_path.clone(), summary_path, points_path.clone()];
    let pts = Table::read(&points_path)?;
    let cen = Table::read(&centers_path)?;
    let labels = pts.numbers("cluster");
    let xs = pts.numbers("x");
    let ys = pts.numbers("y");
    let mut plot = Plot {
        title: format!("k-means on N(0, I), k={} d={d}", cfg.k),
        x_label: "x1".into(),
        y_label: if d > 1 { "x2".into() } else { "".into() },
        notes: vec![verdict, format!("R0 = {r0:.4}")],
        ..Default::default()
    };
    for c in 0..cfg.k {
        let members: Vec<(f64, f64)> =
            (0..labels.len()).filter(|&i| labels[i] as usize == c).map(|i| (xs[i], ys[i])).collect();
        let mut s = Series::new(format!("cluster {c}"), members, Mark::Dots);
        s.color = Some(c);
        plot.series.push(s);
    }
    let cy = if d > 1 { cen.numbers("x2") } else { vec![0.0; cen.rows.len()] };
    plot.series.push(Series::new("centroids", cen.numbers("x1").into_iter().zip(cy).collect(), Mark::Cross));
    write_svg(&dir.join("lloyd.svg"), &plot, &mut files)?;
    Ok(Outcome { files, failed: Vec::new(), warnings: Vec::new() })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Pass,
    Fail,
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub value: String,
    pub threshold: String,
}

fn check(name: &'static str, ok: bool, value: f64, threshold: impl Into<String>) -> Check {
    Check { name, status: if ok { Status::Pass } else { Status::Fail }, value: num(value), threshold: threshold.into() }
}

fn skipped(name: &'static str, why: &str) -> Check {
    Check { name, status: Status::Skipped(why.into()), value: String::new(), threshold: String::new() }
}

/// Every diagnostic in one sweep; failures are reported, not raised.
pub fn run_checks(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let frame = cfg.frame()?;
    let spec = cfg.spec()?;
    let engine = cfg.engine()?;
    let spectral = spectral_report(&frame, &spec);
    let degenerate = spectral.kappa_bound.is_none();
    let mut out = Vec::new();

    let fr = check_frame(&frame, 1e-10);
    out.push(check("frame", fr.passed(), fr.worst(), "1e-10"));

    let mut expected: Vec<f64> = spectral.dft_mod_sq.clone();
    expected.extend(std::iter::repeat_n(1.0, cfg.d + 1 - cfg.k));
    expected.sort_by(f64::total_cmp);
    let spec_err = spectral.eigenvalues.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.push(check("spectrum", spec_err <= 1e-10, spec_err, "1e-10"));

    let jac = jacobian_check(&engine, &frame, &spec, 1e-4)?;
    out.push(check("jacobian", jac.max_error <= 1e-4, jac.max_error, "1e-4"));

    let mut rng = overem::rng::stream_rng(cfg.seed, "verify-gradient");
    let mut grad_err: f64 = 0.0;
    for _ in 0..20 {
        let theta = uniform_ball_point(&mut rng, cfg.d, 0.5);
        let grad = grad_neg_log_likelihood(&engine, &frame, &spec, &theta)?;
        let h = 1e-4;
        for a in 0..cfg.d {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[a] += h;
            down[a] -= h;
            let fd = (neg_log_likelihood(&engine, &frame, &spec, &up)? - neg_log_likelihood(&engine, &frame, &spec, &down)?) / (2.0 * h);
            grad_err = grad_err.max((grad[a] - fd).abs());
        }
    }
    out.push(check("gradient_identity", grad_err <= 1e-5, grad_err, "1e-5"));

    let opts = RunOptions { max_iter: cfg.max_iter, kl_stop: cfg.kl_stop, init_radius: cfg.init_radius, update: UpdateRule::Em };
    let trace = run_population_em(&engine, &frame, &spec, &theta0(cfg, &frame), &opts)?;
    let s = summarize_trace(&trace);
    let worst_rise = trace.records.windows(2).map(|w| w[1].neg_log_lik - w[0].neg_log_lik).fold(f64::NEG_INFINITY, f64::max);
    out.push(check("descent", s.descent_ok, worst_rise, "1e-12 relative"));

    if degenerate {
        out.push(skipped("contraction", "hypotheses violated"));
        out.push(skipped("pl_inequality", "hypotheses violated"));
    } else {
        let mut rng = overem::rng::stream_rng(cfg.seed, "verify-contraction");
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let theta = uniform_ball_point(&mut rng, cfg.d, cfg.radius);
            worst = worst.max(em_operator(&engine, &frame, &spec, &theta)?.norm() / theta.norm());
        }
        out.push(check("contraction", worst < 1.0, worst, "< 1"));
        let pl = pl_inequality_probe(&engine, &frame, &spec, cfg.radius, cfg.pl_probes, cfg.seed)?;
        out.push(check("pl_inequality", pl.passed, pl.min_margin, format!(">= -{}", pl.tolerance)));
    }

    if cfg.n_grid.len() < 2 {
        out.push(skipped("perturbation", "needs at least two sample sizes"));
    } else {
        let report = perturbation_probe(&engine, &frame, &spec, cfg.radius, &cfg.n_grid, cfg.grid_size, &cfg.replicate_seeds())?;
        let slope = report.slope.unwrap_or(f64::NAN);
        out.push(check("perturbation", (slope + 0.5).abs() <= 0.1, slope, "-0.5 +- 0.1"));
    }
    Ok(out)
}

pub fn verify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let checks = run_checks(cfg)?;
    let engine = cfg.engine()?;
    let mut meta = cfg.metadata(&engine.fingerprint(), &cfg.replicate_seeds());
    let mut warnings = Vec::new();
    if checks.iter().any(|c| matches!(&c.status, Status::Skipped(w) if w == "hypotheses violated")) {
        meta.push("warning: hypotheses violated; contraction and PL checks skipped".into());
        warnings.push("hypotheses violated".into());
    }
    let mut csv = CsvBuilder::new(&meta, &["check", "status", "value", "threshold", "note"]);
    let mut failed = Vec::new();
    for c in &checks {
        let (status, note) = match &c.status {
            Status::Pass => ("pass", String::new()),
            Status::Fail => {
                failed.push(c.name.to_string());
                ("fail", String::new())
            }
            Status::Skipped(why) => ("skipped", why.clone()),
        };
        println!("{:<18} {:<8} {} {}", c.name, status, c.value, note);
        csv.row([c.name.to_string(), status.to_string(), c.value.clone(), c.threshold.clone(), note]);
    }
    let path = dir.join("verify_summary.csv");
    csv.write(&path)?;
    Ok(Outcome { files: vec![path], failed, warnings })
}

pub fn perturbation(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let frame = cfg.frame()?;
    let spec = cfg.spec()?;
    let engine = cfg.engine()?;
    let seeds = cfg.replicate_seeds();
    let radii = [cfg.radius, 2.0 * cfg.radius];
    let reports = radii
        .iter()
        .map(|&r| perturbation_probe(&engine, &frame, &spec, r, &cfg.n_grid, cfg.grid_size, &seeds))
        .collect::<overem::Result<Vec<_>>>()?;
    let meta = cfg.metadata(&engine.fingerprint(), &seeds);

    let mut cells = CsvBuilder::new(&meta, &["radius", "n", "seed", "sup_deviation", "deviation_at_zero"]);
    let mut agg = CsvBuilder::new(&meta, &["radius", "n", "median", "q25", "q75"]);
    for rep in &reports {
        for c in &rep.cells {
            cells.row([num(rep.radius), c.n.to_string(), c.seed.to_string(), num(c.sup_deviation), num(c.deviation_at_zero)]);
        }
        for s in &rep.summaries {
            agg.row([num(rep.radius), s.n.to_string(), num(s.median), num(s.q25), num(s.q75)]);
        }
    }
    let show = |v: Option<f64>| v.map(num).unwrap_or_else(|| "n/a".into());
    let factor = radius_doubling_factor(&reports[0], &reports[1]);
    agg.comment(&format!("slope_r: {}", show(reports[0].slope)));
    agg.comment(&format!("slope_2r: {}", show(reports[1].slope)));
    agg.comment(&format!("doubling_factor: {}", show(factor)));
    let cells_path = dir.join("perturbation.csv");
    let agg_path = dir.join("perturbation_aggregate.csv");
    cells.write(&cells_path)?;
    agg.write(&agg_path)?;
    println!("grid points per radius: {}", reports[0].grid_points);
    for rep in &reports {
        println!("r={}: slope {}", rep.radius, show(rep.slope));
    }
    println!("doubling factor: {}", show(factor));

    let mut files = vec![cells_path, agg_path.clone()];
    let t = Table::read(&agg_path)?;
    let rs = t.numbers("radius");
    let ns = t.numbers("n");
    let med = t.numbers("median");
    let mut plot = Plot {
        title: "sup |M_n - M| over the theta grid".into(),
        x_label: "n".into(),
        y_label: "median sup deviation".into(),
        log_x: true,
        log_y: true,
        notes: vec![format!("doubling factor {}", t.comment_value("doubling_factor").unwrap_or("n/a"))],
        ..Default::default()
    };
    for r in radii {
        let pts = (0..rs.len()).filter(|&i| rs[i] == r).map(|i| (ns[i], med[i])).collect();
        plot.series.push(Series::new(format!("r = {r}"), pts, Mark::LineDots));
    }
    write_svg(&dir.join("perturbation.svg"), &plot, &mut files)?;
    Ok(Outcome { files, failed: Vec::new(), warnings: Vec::new() })
}
