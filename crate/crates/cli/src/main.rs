//! `mnpfs` command-line front end.
//!
//! Precedence for settings: built-in defaults, then a `--config` manifest,
//! then `--set key=value` pairs, then dedicated flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mnpfs::evaluation::{
    compare_hit_rates, compare_log_scores, hits, log_probs, naive_forecast, predictive_pmf, write_reports_csv,
    MetricReport,
};
use mnpfs::experiment::{
    base_sensitivity_run, read_scores_csv, run_numerical_experiment, simulate_dataset, train_test_split,
    write_curves_csv, write_experiment, write_scores_csv, ExperimentConfig, ModelKind, MuGamma, PriorSpec,
    SampleScores, ScoreTable,
};
use mnpfs::io::{read_long_csv, read_prior, write_long_csv, write_matrix_csv, write_prior, write_prior_diagnostics};
use mnpfs::model::{relabel_base_category, standardize_covariates, ScalingRecord};
use mnpfs::prior::{calibrate_prior, solve_equicorrelated_mu, CalibrationOptions, Hyperparameters};
use mnpfs::sampler::draws::{read_draws, write_draws};
use mnpfs::sampler::{run_chain, SamplerConfig, Variant};

const SIGNIFICANCE: f64 = 0.05;

#[derive(Parser)]
#[command(name = "mnpfs", version, about = "Multinomial probit with a factor-structured covariance")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory under which default output directories are created.
    #[arg(long, global = true, env = "MNPFS_RUN_ROOT", default_value = "runs")]
    run_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the angle prior for given hyperparameters.
    Calibrate(CalibrateArgs),
    /// Fit a model to a long-format choice CSV and score it on a train/test split.
    Fit(FitArgs),
    /// Simulate a dataset from the synthetic data generating process.
    Simulate(SimulateArgs),
    /// Run the numerical experiment (and optionally the base-category study).
    Experiment(ExperimentArgs),
    /// Compare scored runs with paired significance tests.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Number of differenced utilities J.
    #[arg(long = "J")]
    j: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
    /// A number, or `equicorrelated` to solve for the value giving a prior mean of (I + 11')/2.
    #[arg(long, default_value = "0")]
    mu_gamma: String,
    #[arg(long, default_value_t = 1.0)]
    sigma_gamma: f64,
    #[arg(long, default_value_t = 5.0)]
    nu: f64,
    /// Prior draws used for calibration.
    #[arg(long = "M", default_value_t = 100_000)]
    m: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Long-format CSV: obs_id, alt_id, chosen, covariates...
    #[arg(long)]
    data: PathBuf,
    /// Individual-covariate CSV: obs_id, covariates...
    #[arg(long)]
    indiv: Option<PathBuf>,
    #[arg(long)]
    no_intercept: bool,
    /// Alternative to use as the base category (0-based).
    #[arg(long)]
    base: Option<usize>,
    #[arg(long, default_value = "mnp-fs")]
    variant: Variant,
    /// Calibrated prior file (required for mnp-fs).
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Manifest with sampler.* and eval.* keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thinning: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of alternatives J + 1.
    #[arg(long, default_value_t = 10)]
    alternatives: usize,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    intercept_variance: Option<f64>,
    #[arg(long)]
    price_coefficient: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Use the full-size configuration (50 alternatives, 5000 observations, 200,000 iterations).
    #[arg(long)]
    paper_scale: bool,
    /// Also run the base-category sensitivity study.
    #[arg(long)]
    sensitivity: bool,
    /// Directory for cached prior calibrations.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directories; the first is the reference. Experiment directories expand to their models.
    #[arg(required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit status.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<mnpfs::Error> for Failure {
    fn from(e: mnpfs::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

fn io_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    subcommand: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a C,
    artifacts: Vec<String>,
}

fn write_manifest<C: Serialize>(dir: &Path, subcommand: &str, seed: u64, config: &C, artifacts: &[&str]) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let m = RunManifest {
        subcommand,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        artifacts: artifacts.iter().map(|a| dir.join(a).display().to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&m).map_err(io_err)?;
    std::fs::write(dir.join("manifest.json"), text).map_err(io_err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let root = cli.run_root.clone();
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a, &root),
        Command::Fit(a) => fit(a, &root),
        Command::Simulate(a) => simulate(a, &root),
        Command::Experiment(a) => experiment(a, &root),
        Command::Evaluate(a) => evaluate(a, &root),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

#[derive(Serialize)]
struct CalibrateConfig {
    dim: usize,
    q: usize,
    mu_gamma: f64,
    equicorrelated: bool,
    sigma_gamma: f64,
    nu: f64,
    draws: usize,
}

fn calibrate(a: CalibrateArgs, root: &Path) -> CliResult<()> {
    let out = a.out.unwrap_or_else(|| root.join("calibrate"));
    let equi = a.mu_gamma.trim() == "equicorrelated";
    let mut solved = None;
    let mu = if equi {
        let s = solve_equicorrelated_mu(0.5, a.sigma_gamma, a.nu, a.q, a.m, a.seed).map_err(usage)?;
        eprintln!("equicorrelated mu_gamma = {:.4} (E[rho] = {:.4})", s.mu_gamma, s.achieved);
        solved = Some(s);
        s.mu_gamma
    } else {
        a.mu_gamma.parse().map_err(|_| usage(format!("--mu-gamma must be a number or `equicorrelated`, got `{}`", a.mu_gamma)))?
    };
    let theta = Hyperparameters::new(mu, a.sigma_gamma, a.nu, a.q).map_err(usage)?;
    let config = CalibrateConfig { dim: a.j, q: a.q, mu_gamma: mu, equicorrelated: equi, sigma_gamma: a.sigma_gamma, nu: a.nu, draws: a.m };
    let mut artifacts = vec!["prior.txt", "diagnostics.csv"];
    if equi {
        artifacts.push("equicorrelated.json");
    }
    write_manifest(&out, "calibrate", a.seed, &config, &artifacts)?;
    if let Some(s) = solved {
        let text = format!("{{\n  \"mu_gamma\": {},\n  \"expected_correlation\": {}\n}}\n", s.mu_gamma, s.achieved);
        std::fs::write(out.join("equicorrelated.json"), text).map_err(io_err)?;
    }
    let opts = CalibrationOptions { draws: a.m, seed: a.seed, ..Default::default() };
    let prior = calibrate_prior(&theta, a.j, &opts)?;
    write_prior(&out.join("prior.txt"), &prior)?;
    write_prior_diagnostics(&out.join("diagnostics.csv"), &prior)?;
    println!("{} margins written to {}", prior.margins.len(), out.join("prior.txt").display());
    Ok(())
}

#[derive(Serialize)]
struct FitManifest<'a> {
    data: &'a Path,
    indiv: Option<&'a Path>,
    intercept: bool,
    base: Option<usize>,
    prior: Option<&'a Path>,
    sampler: &'a SamplerConfig,
    eval: &'a mnpfs::experiment::EvalConfig,
}

fn fit(a: FitArgs, root: &Path) -> CliResult<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.sampler.thinning = 1;
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        cfg.apply_manifest(&text).map_err(usage)?;
    }
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v).map_err(usage)?;
    }
    let mut sampler = SamplerConfig { variant: a.variant, ..cfg.sampler.clone() };
    if let Some(n) = a.iterations {
        sampler.total_iterations = n;
    }
    if let Some(n) = a.burn_in {
        sampler.burn_in = n;
    }
    if let Some(n) = a.thinning {
        sampler.thinning = n;
    }
    if let Some(s) = a.seed {
        sampler.seed = s;
    }
    if let Some(f) = a.train_fraction {
        cfg.eval.train_fraction = f;
    }
    sampler.validate().map_err(usage)?;
    if !(cfg.eval.train_fraction > 0.0 && cfg.eval.train_fraction < 1.0) {
        return Err(usage("train fraction must lie in (0, 1)"));
    }
    let prior = match (a.variant, &a.prior) {
        (Variant::Identity, _) => None,
        (Variant::Fs, None) => return Err(usage("--variant mnp-fs needs --prior <file>; create one with `mnpfs calibrate`")),
        (Variant::Fs, Some(p)) if !p.exists() => {
            return Err(usage(format!("prior file {} not found; create one with `mnpfs calibrate`", p.display())))
        }
        (Variant::Fs, Some(p)) => Some(read_prior(p).map_err(usage)?),
    };
    let raw = read_long_csv(&a.data, a.indiv.as_deref(), !a.no_intercept).map_err(usage)?;
    let dataset = match a.base {
        Some(b) => relabel_base_category(&raw, b).map_err(usage)?,
        None => raw,
    };
    if let Some(p) = &prior {
        if p.dim != dataset.dim() {
            return Err(usage(format!("prior was calibrated for J = {}, data have J = {}", p.dim, dataset.dim())));
        }
    }

    let out = a.out.clone().unwrap_or_else(|| root.join("fit"));
    let manifest = FitManifest {
        data: &a.data,
        indiv: a.indiv.as_deref(),
        intercept: !a.no_intercept,
        base: a.base,
        prior: a.prior.as_deref(),
        sampler: &sampler,
        eval: &cfg.eval,
    };
    write_manifest(
        &out,
        "fit",
        sampler.seed,
        &manifest,
        &["draws", "scaling.json", "split.csv", "scores.csv", "naive_scores.csv", "metrics.csv", "acceptance.csv"],
    )?;

    let (train_idx, test_idx) = train_test_split(dataset.len(), cfg.eval.train_fraction, cfg.eval.split_seed);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(usage("split leaves an empty train or test sample"));
    }
    let (train, record) = standardize_covariates(&dataset.subset(&train_idx))?;
    let test = record.apply(&dataset.subset(&test_idx))?;
    std::fs::write(out.join("scaling.json"), serde_json::to_string_pretty(&record).map_err(io_err)?).map_err(io_err)?;
    write_split(&out.join("split.csv"), &train_idx, &test_idx)?;

    sampler.stream_dir = Some(out.join("draws"));
    let draws = run_chain(&train, &sampler, prior.as_ref())?;
    sampler.stream_dir = None;
    write_draws(&out.join("draws"), &draws, Some(&sampler))?;

    let label = sampler.variant.to_string();
    let in_s = score(&train, &draws, &cfg)?;
    let out_s = score(&test, &draws, &cfg)?;
    write_scores_csv(&out.join("scores.csv"), &label, &train_idx, &test_idx, &in_s, &out_s)?;
    let n_alt = dataset.n_alternatives();
    let naive_in = naive_scores(train.choices(), train.choices(), n_alt)?;
    let naive_out = naive_scores(train.choices(), test.choices(), n_alt)?;
    write_scores_csv(&out.join("naive_scores.csv"), "naive", &train_idx, &test_idx, &naive_in, &naive_out)?;

    let mut reports = Vec::new();
    for (model, sample, s, reference) in [
        (label.as_str(), "in", &in_s, None),
        (label.as_str(), "out", &out_s, None),
        ("naive", "in", &naive_in, Some(&in_s)),
        ("naive", "out", &naive_out, Some(&out_s)),
    ] {
        let p = match reference {
            Some(r) => Some(compare_log_scores(&r.log_probs, &s.log_probs)?.p_value),
            None => None,
        };
        reports.push(MetricReport {
            model: model.into(),
            sample: sample.into(),
            hit_rate: s.hit_rate(),
            log_score: s.log_score(),
            p_vs_reference: p,
        });
    }
    write_reports_csv(&out.join("metrics.csv"), &reports)?;
    let mut w = csv::Writer::from_path(out.join("acceptance.csv")).map_err(io_err)?;
    w.write_record(["angle", "acceptance", "final_log_scale"]).map_err(io_err)?;
    for (i, (r, s)) in draws.acceptance.iter().zip(&draws.final_log_scales).enumerate() {
        w.write_record([(i + 1).to_string(), r.to_string(), s.to_string()]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    print!("{}", mnpfs::evaluation::reports_to_text(&reports));
    Ok(())
}

fn score(ds: &mnpfs::model::ChoiceDataset, draws: &mnpfs::sampler::PosteriorDraws, cfg: &ExperimentConfig) -> CliResult<SampleScores> {
    let pmf = predictive_pmf(ds, draws, cfg.eval.replicates, cfg.eval.seed)?;
    Ok(SampleScores { hits: hits(&pmf, ds.choices())?, log_probs: log_probs(&pmf, ds.choices())? })
}

fn naive_scores(train: &[usize], target: &[usize], n_alt: usize) -> CliResult<SampleScores> {
    let pmf = naive_forecast(train, n_alt, target.len())?;
    Ok(SampleScores { hits: hits(&pmf, target)?, log_probs: log_probs(&pmf, target)? })
}

fn write_split(path: &Path, train: &[usize], test: &[usize]) -> CliResult<()> {
    let mut rows: Vec<(usize, &str)> = train.iter().map(|&i| (i, "in")).collect();
    rows.extend(test.iter().map(|&i| (i, "out")));
    rows.sort_unstable();
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["obs_id", "sample"]).map_err(io_err)?;
    for (i, s) in rows {
        w.write_record([i.to_string(), s.to_string()]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn simulate(a: SimulateArgs, root: &Path) -> CliResult<()> {
    let mut dgp = mnpfs::experiment::DgpConfig { n_alternatives: a.alternatives, n: a.n, seed: a.seed, ..Default::default() };
    if let Some(v) = a.intercept_variance {
        dgp.intercept_variance = v;
    }
    if let Some(v) = a.price_coefficient {
        dgp.price_coefficient = v;
    }
    dgp.validate().map_err(usage)?;
    let out = a.out.unwrap_or_else(|| root.join("simulate"));
    write_manifest(&out, "simulate", a.seed, &dgp, &["dataset.csv", "truth_beta.csv", "truth_sigma.csv"])?;
    let (ds, truth) = simulate_dataset(&dgp)?;
    write_long_csv(&out.join("dataset.csv"), None, &ds)?;
    let mut w = csv::Writer::from_path(out.join("truth_beta.csv")).map_err(io_err)?;
    w.write_record(["coefficient", "value"]).map_err(io_err)?;
    for (n, v) in ds.coefficient_names().iter().zip(&truth.beta) {
        w.write_record([n.clone(), v.to_string()]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    write_matrix_csv(&out.join("truth_sigma.csv"), &truth.sigma, "z")?;
    println!("{} observations written to {}", ds.len(), out.join("dataset.csv").display());
    Ok(())
}

fn experiment(a: ExperimentArgs, root: &Path) -> CliResult<()> {
    let mut cfg = if a.paper_scale {
        eprintln!(
            "warning: paper-scale configuration runs 200,000 MCMC iterations per chain on 50 alternatives \
             and 5000 observations; expect many hours"
        );
        ExperimentConfig::paper_scale()
    } else {
        ExperimentConfig::desk()
    };
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        cfg.apply_manifest(&text).map_err(usage)?;
    }
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    let out = a.out.unwrap_or_else(|| root.join("experiment"));
    let mut artifacts = vec![
        "dataset.csv", "truth_beta.csv", "truth_sigma.csv", "split.csv", "metrics.csv", "metrics.txt", "recovery.csv",
        "scatter.csv",
    ];
    if a.sensitivity {
        artifacts.extend(["curves.csv", "sensitivity.csv"]);
    }
    write_manifest(&out, "experiment", cfg.dgp.seed, &cfg, &artifacts)?;
    let cache = a.cache.as_deref();
    let result = run_numerical_experiment(&cfg, cache).map_err(|e| Failure::Runtime(format!("numerical experiment: {e}")))?;
    write_experiment(&out, &result, &cfg)?;
    print!("{}", mnpfs::evaluation::reports_to_text(&result.reports));
    if a.sensitivity {
        let equi = PriorSpec { mu_gamma: MuGamma::Equicorrelated, ..cfg.prior.clone() };
        let identity = PriorSpec { mu_gamma: MuGamma::Fixed(0.0), ..cfg.prior.clone() };
        let priors = vec![("identity".to_string(), identity), ("equicorrelated".to_string(), equi)];
        let s = base_sensitivity_run(&cfg, None, &priors, cache)
            .map_err(|e| Failure::Runtime(format!("sensitivity run: {e}")))?;
        write_curves_csv(&out.join("curves.csv"), &s.curves)?;
        let mut w = csv::Writer::from_path(out.join("sensitivity.csv")).map_err(io_err)?;
        w.write_record(["prior", "base_a", "base_b", "sup_distance"]).map_err(io_err)?;
        for (label, d) in &s.discrepancies {
            w.write_record([label.clone(), s.bases[0].to_string(), s.bases[1].to_string(), d.to_string()]).map_err(io_err)?;
            println!("sup-distance between bases {} and {} under the {label} prior: {d:.4}", s.bases[0], s.bases[1]);
        }
        w.flush().map_err(io_err)?;
    }
    Ok(())
}

/// Score files under a run directory: its own, or one per model subdirectory.
fn collect_scores(dir: &Path) -> CliResult<Vec<ScoreTable>> {
    let own = dir.join("scores.csv");
    if own.exists() {
        return Ok(vec![read_scores_csv(&own)?]);
    }
    if dir.join("draws").join("draws.json").exists() {
        return Ok(vec![rescore(dir)?]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("scores.csv").exists())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(usage(format!("{} holds no scores or draws", dir.display())));
    }
    // keep the experiment's own model order
    let order = [ModelKind::Fs, ModelKind::Identity, ModelKind::Naive].map(|k| k.label());
    subdirs.sort_by_key(|p| {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        order.iter().position(|o| *o == name).unwrap_or(order.len())
    });
    subdirs.iter().map(|p| Ok(read_scores_csv(&p.join("scores.csv"))?)).collect()
}

/// Recomputes scores for a fit run whose score file is missing.
fn rescore(dir: &Path) -> CliResult<ScoreTable> {
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).map_err(usage)?).map_err(usage)?;
    let cfg = &manifest["config"];
    let path = |k: &str| cfg[k].as_str().map(PathBuf::from);
    let data = path("data").ok_or_else(|| usage("manifest lacks the data path"))?;
    let raw = read_long_csv(&data, path("indiv").as_deref(), cfg["intercept"].as_bool().unwrap_or(true))?;
    let ds = match cfg["base"].as_u64() {
        Some(b) => relabel_base_category(&raw, b as usize)?,
        None => raw,
    };
    let record: ScalingRecord =
        serde_json::from_str(&std::fs::read_to_string(dir.join("scaling.json")).map_err(usage)?).map_err(usage)?;
    let mut rdr = csv::Reader::from_path(dir.join("split.csv")).map_err(usage)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(usage)?;
        let i: usize = rec[0].parse().map_err(usage)?;
        if &rec[1] == "in" { train.push(i) } else { test.push(i) }
    }
    let mut eval_cfg = ExperimentConfig::desk();
    eval_cfg.eval = serde_json::from_value(cfg["eval"].clone()).map_err(usage)?;
    let (draws, _) = read_draws(&dir.join("draws"))?;
    let in_s = score(&record.apply(&ds.subset(&train))?, &draws, &eval_cfg)?;
    let out_s = score(&record.apply(&ds.subset(&test))?, &draws, &eval_cfg)?;
    let label = draws.variant.to_string();
    write_scores_csv(&dir.join("scores.csv"), &label, &train, &test, &in_s, &out_s)?;
    Ok(read_scores_csv(&dir.join("scores.csv"))?)
}

fn evaluate(a: EvaluateArgs, root: &Path) -> CliResult<()> {
    let mut tables = Vec::new();
    for dir in &a.runs {
        tables.extend(collect_scores(dir)?);
    }
    let reference = &tables[0];
    for t in &tables[1..] {
        if t.keys != reference.keys {
            return Err(usage(format!(
                "split mismatch: `{}` and `{}` were scored on different observations",
                reference.model, t.model
            )));
        }
    }
    // distinct labels for repeated models
    let mut labels: Vec<String> = Vec::new();
    for t in &tables {
        let mut l = t.model.clone();
        let mut k = 2;
        while labels.contains(&l) {
            l = format!("{}#{k}", t.model);
            k += 1;
        }
        labels.push(l);
    }
    let out = a.out.unwrap_or_else(|| root.join("evaluate"));
    let runs: Vec<String> = a.runs.iter().map(|p| p.display().to_string()).collect();
    write_manifest(&out, "evaluate", 0, &runs, &["comparison.csv", "comparison.txt", "pvalues.csv"])?;

    let mut table = csv::Writer::from_path(out.join("comparison.csv")).map_err(io_err)?;
    table
        .write_record(["model", "hit_rate_in", "mark", "hit_rate_out", "mark", "log_score_in", "mark", "log_score_out", "mark"])
        .map_err(io_err)?;
    let mut pvals = csv::Writer::from_path(out.join("pvalues.csv")).map_err(io_err)?;
    pvals.write_record(["model", "reference", "metric", "sample", "statistic", "p_value"]).map_err(io_err)?;
    let mut text = format!(
        "{:<14} {:>10} {:>10} {:>11} {:>11}\n",
        "model", "hit in", "hit out", "log in", "log out"
    );
    for (t, label) in tables.iter().zip(&labels) {
        let mut cells: Vec<String> = vec![label.clone()];
        let mut shown = Vec::new();
        for (metric, sample) in [("hit_rate", "in"), ("hit_rate", "out"), ("log_score", "in"), ("log_score", "out")] {
            let (s, r) = (t.sample(sample), reference.sample(sample));
            let value = if metric == "hit_rate" { s.hit_rate() } else { s.log_score() };
            let test = if metric == "hit_rate" {
                compare_hit_rates(&r.hits, &s.hits)?
            } else {
                compare_log_scores(&r.log_probs, &s.log_probs)?
            };
            let mark = if std::ptr::eq(t, reference) { "" } else { test.mark(SIGNIFICANCE) };
            cells.push(format!("{value:.4}"));
            cells.push(mark.to_string());
            shown.push(format!("{value:.4}{mark:<1}"));
            if !std::ptr::eq(t, reference) {
                pvals
                    .write_record([label, &labels[0], metric, sample, &test.statistic.to_string(), &test.p_value.to_string()])
                    .map_err(io_err)?;
            }
        }
        table.write_record(&cells).map_err(io_err)?;
        text.push_str(&format!("{:<14} {:>10} {:>10} {:>11} {:>11}\n", label, shown[0], shown[1], shown[2], shown[3]));
    }
    text.push_str(&format!(
        "+ ({}) marks a model the reference `{}` beats (is beaten by) at the 5% level\n",
        "-", labels[0]
    ));
    table.flush().map_err(io_err)?;
    pvals.flush().map_err(io_err)?;
    std::fs::write(out.join("comparison.txt"), &text).map_err(io_err)?;
    print!("{text}");
    Ok(())
}
