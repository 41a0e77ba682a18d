//! Synthetic data generation, the end-to-end numerical experiment, and the
//! base-category sensitivity runs.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    compare_log_scores, hits, log_probs, naive_forecast, predictive_pmf, predictive_pmf_design,
    recovery_by_group, GroupError, MetricReport, DEFAULT_REPLICATES,
};
use crate::io::calibrate_cached;
use crate::model::{
    build_design, choice_from_utilities, relabel_base_category, standardize_covariates,
    ChoiceDataset,
};
use crate::prior::{solve_equicorrelated_mu, CalibratedPrior, CalibrationOptions, Hyperparameters};
use crate::rng::{stream_rng, streams};
use crate::sampler::{run_chain, PosteriorDraws, SamplerConfig, Variant};
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n_alternatives: usize,
    pub n: usize,
    /// Variance of the true intercepts.
    pub intercept_variance: f64,
    pub price_coefficient: f64,
    /// Common off-diagonal element of the Inverse-Wishart scale matrix.
    pub scale_offdiag: f64,
    /// Inverse-Wishart degrees of freedom minus `J`.
    pub extra_df: usize,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DgpConfig {
    pub fn desk() -> Self {
        Self {
            n_alternatives: 10,
            n: 2000,
            intercept_variance: 0.5f64.sqrt(),
            price_coefficient: -0.7,
            scale_offdiag: 0.5,
            extra_df: 3,
            seed: 1,
        }
    }

    pub fn paper_scale() -> Self {
        Self { n_alternatives: 50, n: 5000, ..Self::desk() }
    }

    pub fn dim(&self) -> usize {
        self.n_alternatives - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_alternatives < 2 {
            return Err(Error::InvalidArgument("need n > 0 and at least two alternatives".into()));
        }
        if !(self.intercept_variance >= 0.0) {
            return Err(Error::InvalidArgument("intercept variance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// True parameters of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: Vec<f64>,
    pub sigma: DMatrix<f64>,
}

/// Inverse-Wishart draw with `df` degrees of freedom and scale `scale`, via
/// the Bartlett decomposition of the Wishart(`df`, `scale^{-1}`) precision.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= (p as f64) - 1.0 {
        return Err(Error::InvalidArgument(format!("df {df} too small for dimension {p}")));
    }
    let scale_inv = scale
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("Inverse-Wishart scale".into()))?;
    let l = scale_inv
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Inverse-Wishart scale".into()))?
        .unpack();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).expect("df checked");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let precision = &la * la.transpose();
    precision
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("Wishart draw".into()))
}

/// Truth and data from the probit DGP: standard-normal alternative covariates
/// ("log prices"), random intercepts, a fixed price coefficient, and a
/// trace-normalized Inverse-Wishart covariance.
pub fn simulate_dataset(config: &DgpConfig) -> Result<(ChoiceDataset, Truth)> {
    config.validate()?;
    let dim = config.dim();
    let n_alt = config.n_alternatives;
    let mut rng = stream_rng(config.seed, streams::SIMULATION);
    let mut beta: Vec<f64> = (0..dim)
        .map(|_| config.intercept_variance.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    beta.push(config.price_coefficient);
    let scale = DMatrix::from_fn(dim, dim, |r, c| if r == c { 1.0 } else { config.scale_offdiag });
    let raw = sample_inverse_wishart((dim + config.extra_df) as f64, &scale, &mut rng)?;
    let sigma = &raw * (dim as f64 / raw.trace());
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("true covariance".into()))?
        .unpack();

    let alt: Vec<f64> = (0..config.n * n_alt).map(|_| rng.sample(StandardNormal)).collect();
    let placeholder = ChoiceDataset::new(n_alt, vec![0; config.n], alt, 1, vec![], 0, true)?
        .with_names(vec!["log_price".into()], vec![])?;
    let b = DVector::from_column_slice(&beta);
    let choices = build_design(&placeholder)
        .iter()
        .map(|x| {
            let eps = DVector::from_fn(dim, |_, _| rng.sample(StandardNormal));
            let z = x * &b + &chol * eps;
            choice_from_utilities(z.as_slice())
        })
        .collect();
    Ok((placeholder.with_choices(choices)?, Truth { beta, sigma }))
}

/// Random partition into train and test rows; the test share is rounded down
/// so the remainder goes to training. Both index lists are sorted.
pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_test = (((1.0 - train_fraction) * n as f64) + 1e-9).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, streams::SPLIT));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Loading mean: either a number or the equicorrelated solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MuGamma {
    Fixed(f64),
    Equicorrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mu_gamma: MuGamma,
    pub sigma_gamma: f64,
    pub nu: f64,
    pub q: usize,
    pub draws: usize,
    pub seed: u64,
    /// Monte Carlo draws for the equicorrelated solver.
    pub solver_draws: usize,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            mu_gamma: MuGamma::Fixed(0.0),
            sigma_gamma: 1.0,
            nu: 5.0,
            q: 1,
            draws: 100_000,
            seed: 7,
            solver_draws: 100_000,
        }
    }
}

impl PriorSpec {
    pub fn hyperparameters(&self) -> Result<Hyperparameters> {
        let mu = match self.mu_gamma {
            MuGamma::Fixed(m) => m,
            MuGamma::Equicorrelated => {
                solve_equicorrelated_mu(0.5, self.sigma_gamma, self.nu, self.q, self.solver_draws, self.seed)?.mu_gamma
            }
        };
        Hyperparameters::new(mu, self.sigma_gamma, self.nu, self.q)
    }

    pub fn calibrate(&self, dim: usize, cache: Option<&Path>) -> Result<CalibratedPrior> {
        let theta = self.hyperparameters()?;
        let opts = CalibrationOptions { draws: self.draws, seed: self.seed, ..Default::default() };
        calibrate_cached(&theta, dim, &opts, cache)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "mnp-fs")]
    Fs,
    #[serde(rename = "mnp-i")]
    Identity,
    #[serde(rename = "naive")]
    Naive,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Fs => "mnp-fs",
            ModelKind::Identity => "mnp-i",
            ModelKind::Naive => "naive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "mnp-fs" => Ok(ModelKind::Fs),
            "mnp-i" => Ok(ModelKind::Identity),
            "naive" => Ok(ModelKind::Naive),
            other => Err(Error::InvalidArgument(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub replicates: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub seed: u64,
    pub variants: Vec<ModelKind>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            replicates: DEFAULT_REPLICATES,
            train_fraction: 0.8,
            split_seed: 11,
            seed: 13,
            variants: vec![ModelKind::Fs, ModelKind::Identity, ModelKind::Naive],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub grid_points: usize,
    /// Grid half-width in standard deviations of the price covariate.
    pub grid_width_sd: f64,
    /// Second base category; `None` picks the most popular category.
    pub alternative_base: Option<usize>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { grid_points: 25, grid_width_sd: 2.0, alternative_base: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dgp: DgpConfig,
    pub sampler: SamplerConfig,
    pub prior: PriorSpec,
    pub eval: EvalConfig,
    pub sensitivity: SensitivityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            dgp: DgpConfig::desk(),
            sampler: SamplerConfig { thinning: 5, seed: 17, ..SamplerConfig::default() },
            prior: PriorSpec::default(),
            eval: EvalConfig::default(),
            sensitivity: SensitivityConfig::default(),
        }
    }

    pub fn paper_scale() -> Self {
        Self {
            dgp: DgpConfig::paper_scale(),
            sampler: SamplerConfig {
                total_iterations: 200_000,
                burn_in: 100_000,
                thinning: 20,
                seed: 17,
                ..SamplerConfig::default()
            },
            ..Self::desk()
        }
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidArgument(format!("bad value `{v}` for `{key}`")))
        }
        let v = value.trim();
        match key.trim() {
            "dgp.n_alternatives" => self.dgp.n_alternatives = p(key, v)?,
            "dgp.n" => self.dgp.n = p(key, v)?,
            "dgp.intercept_variance" => self.dgp.intercept_variance = p(key, v)?,
            "dgp.price_coefficient" => self.dgp.price_coefficient = p(key, v)?,
            "dgp.scale_offdiag" => self.dgp.scale_offdiag = p(key, v)?,
            "dgp.extra_df" => self.dgp.extra_df = p(key, v)?,
            "dgp.seed" => self.dgp.seed = p(key, v)?,
            "sampler.total_iterations" => self.sampler.total_iterations = p(key, v)?,
            "sampler.burn_in" => self.sampler.burn_in = p(key, v)?,
            "sampler.thinning" => self.sampler.thinning = p(key, v)?,
            "sampler.prior_variance" => self.sampler.prior_variance = p(key, v)?,
            "sampler.block_size" => self.sampler.block_size = p(key, v)?,
            "sampler.adapt_batch" => self.sampler.adapt_batch = p(key, v)?,
            "sampler.band_low" => self.sampler.target_band.0 = p(key, v)?,
            "sampler.band_high" => self.sampler.target_band.1 = p(key, v)?,
            "sampler.initial_scale" => self.sampler.initial_scale = p(key, v)?,
            "sampler.seed" => self.sampler.seed = p(key, v)?,
            "prior.mu_gamma" => {
                self.prior.mu_gamma = if v == "equicorrelated" { MuGamma::Equicorrelated } else { MuGamma::Fixed(p(key, v)?) }
            }
            "prior.sigma_gamma" => self.prior.sigma_gamma = p(key, v)?,
            "prior.nu" => self.prior.nu = p(key, v)?,
            "prior.q" => self.prior.q = p(key, v)?,
            "prior.draws" => self.prior.draws = p(key, v)?,
            "prior.seed" => self.prior.seed = p(key, v)?,
            "prior.solver_draws" => self.prior.solver_draws = p(key, v)?,
            "eval.replicates" => self.eval.replicates = p(key, v)?,
            "eval.train_fraction" => self.eval.train_fraction = p(key, v)?,
            "eval.split_seed" => self.eval.split_seed = p(key, v)?,
            "eval.seed" => self.eval.seed = p(key, v)?,
            "eval.variants" => {
                self.eval.variants = v.split(',').map(ModelKind::parse).collect::<Result<_>>()?
            }
            "sensitivity.grid_points" => self.sensitivity.grid_points = p(key, v)?,
            "sensitivity.grid_width_sd" => self.sensitivity.grid_width_sd = p(key, v)?,
            "sensitivity.alternative_base" => self.sensitivity.alternative_base = Some(p(key, v)?),
            other => return Err(Error::InvalidArgument(format!("unknown manifest key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_manifest(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("manifest line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.sampler.validate()?;
        if !(self.eval.train_fraction > 0.0 && self.eval.train_fraction <= 1.0) || self.eval.replicates == 0 {
            return Err(Error::InvalidArgument("train_fraction must be in (0, 1] and replicates positive".into()));
        }
        if self.sensitivity.grid_points == 0 {
            return Err(Error::InvalidArgument("grid_points must be positive".into()));
        }
        Ok(())
    }
}

/// Per-observation hits and log probabilities for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScores {
    pub hits: Vec<bool>,
    pub log_probs: Vec<f64>,
}

impl SampleScores {
    pub fn hit_rate(&self) -> f64 {
        self.hits.iter().filter(|&&h| h).count() as f64 / self.hits.len().max(1) as f64
    }

    pub fn log_score(&self) -> f64 {
        mean(&self.log_probs)
    }
}

#[derive(Debug, Clone)]
pub struct VariantFit {
    pub kind: ModelKind,
    /// Draws on the standardized covariate scale; `None` for the naive model.
    pub draws: Option<PosteriorDraws>,
    pub in_sample: SampleScores,
    pub out_sample: SampleScores,
    /// Posterior mean of `beta` on the raw covariate scale.
    pub beta_mean: Vec<f64>,
    pub recovery: Vec<GroupError>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub dataset: ChoiceDataset,
    pub truth: Truth,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub prior: Option<CalibratedPrior>,
    pub fits: Vec<VariantFit>,
    pub reports: Vec<MetricReport>,
}

impl ExperimentResult {
    pub fn fit(&self, kind: ModelKind) -> Option<&VariantFit> {
        self.fits.iter().find(|f| f.kind == kind)
    }
}

fn scores(dataset: &ChoiceDataset, pmf: &crate::evaluation::PredictivePmf) -> Result<SampleScores> {
    Ok(SampleScores { hits: hits(pmf, dataset.choices())?, log_probs: log_probs(pmf, dataset.choices())? })
}

/// Simulates, splits, standardizes on the training rows, fits each variant and
/// evaluates it in and out of sample. Recovery errors are reported for the
/// factor model only. `cache` is an optional prior-calibration cache directory.
pub fn run_numerical_experiment(config: &ExperimentConfig, cache: Option<&Path>) -> Result<ExperimentResult> {
    config.validate()?;
    let (dataset, truth) = simulate_dataset(&config.dgp)?;
    let (train_idx, test_idx) = train_test_split(dataset.len(), config.eval.train_fraction, config.eval.split_seed);
    let (train, record) = standardize_covariates(&dataset.subset(&train_idx))?;
    let test = record.apply(&dataset.subset(&test_idx))?;
    let dim = dataset.dim();

    let prior = if config.eval.variants.contains(&ModelKind::Fs) {
        Some(config.prior.calibrate(dim, cache)?)
    } else {
        None
    };

    let mut fits = Vec::new();
    for &kind in &config.eval.variants {
        let started = Instant::now();
        let fit = match kind {
            ModelKind::Naive => {
                let n_alt = dataset.n_alternatives();
                let pin = naive_forecast(train.choices(), n_alt, train.len())?;
                let pout = naive_forecast(train.choices(), n_alt, test.len())?;
                VariantFit {
                    kind,
                    draws: None,
                    in_sample: scores(&train, &pin)?,
                    out_sample: scores(&test, &pout)?,
                    beta_mean: Vec::new(),
                    recovery: Vec::new(),
                    seconds: 0.0,
                }
            }
            ModelKind::Fs | ModelKind::Identity => {
                let variant = if kind == ModelKind::Fs { Variant::Fs } else { Variant::Identity };
                let cfg = SamplerConfig { variant, ..config.sampler.clone() };
                let draws = run_chain(&train, &cfg, prior.as_ref())?;
                let pin = predictive_pmf(&train, &draws, config.eval.replicates, config.eval.seed)?;
                let pout = predictive_pmf(&test, &draws, config.eval.replicates, config.eval.seed)?;
                let beta_mean = record.unstandardize(&draws.beta_mean(), dim, dataset.include_intercept());
                let recovery = if kind == ModelKind::Fs {
                    let mut raw = draws.clone();
                    raw.beta = draws
                        .beta
                        .iter()
                        .map(|b| record.unstandardize(b, dim, dataset.include_intercept()))
                        .collect();
                    recovery_by_group(&raw, &truth.beta, &truth.sigma)?
                } else {
                    Vec::new()
                };
                VariantFit {
                    kind,
                    in_sample: scores(&train, &pin)?,
                    out_sample: scores(&test, &pout)?,
                    draws: Some(draws),
                    beta_mean,
                    recovery,
                    seconds: 0.0,
                }
            }
        };
        fits.push(VariantFit { seconds: started.elapsed().as_secs_f64(), ..fit });
    }

    let mut reports = Vec::new();
    let reference = fits.first().map(|f| (f.in_sample.clone(), f.out_sample.clone()));
    for (idx, f) in fits.iter().enumerate() {
        for (sample, s) in [("in", &f.in_sample), ("out", &f.out_sample)] {
            let p = match (&reference, idx) {
                (Some((rin, rout)), i) if i > 0 => {
                    let r = if sample == "in" { rin } else { rout };
                    Some(compare_log_scores(&r.log_probs, &s.log_probs)?.p_value)
                }
                _ => None,
            };
            reports.push(MetricReport {
                model: f.kind.label().into(),
                sample: sample.into(),
                hit_rate: s.hit_rate(),
                log_score: s.log_score(),
                p_vs_reference: p,
            });
        }
    }
    Ok(ExperimentResult { dataset, truth, train: train_idx, test: test_idx, prior, fits, reports })
}

/// One point of a fitted purchase-probability curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub prior: String,
    pub base: usize,
    /// Category whose price varies, in the original labeling.
    pub category: usize,
    pub grid_index: usize,
    pub price: f64,
    pub probability: f64,
}

/// Least and most frequently chosen categories (lowest index on ties).
pub fn least_and_most_popular(dataset: &ChoiceDataset) -> (usize, usize) {
    let mut counts = vec![0usize; dataset.n_alternatives()];
    for &y in dataset.choices() {
        counts[y] += 1;
    }
    let least = (0..counts.len()).min_by_key(|&c| (counts[c], c)).expect("nonempty");
    let most = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).expect("nonempty");
    (least, most)
}

/// Price grid for `category` and a synthetic dataset with one observation per
/// grid point, all other prices at their per-category means.
pub fn price_grid_dataset(
    dataset: &ChoiceDataset,
    category: usize,
    points: usize,
    width_sd: f64,
) -> Result<(Vec<f64>, ChoiceDataset)> {
    if dataset.k_alt() != 1 || dataset.k_indiv() != 0 {
        return Err(Error::InvalidArgument("price curves need exactly one alternative covariate".into()));
    }
    let n_alt = dataset.n_alternatives();
    let means: Vec<f64> = (0..n_alt)
        .map(|a| (0..dataset.len()).map(|i| dataset.alt_covariate(i, a, 0)).sum::<f64>() / dataset.len() as f64)
        .collect();
    let own: Vec<f64> = (0..dataset.len()).map(|i| dataset.alt_covariate(i, category, 0)).collect();
    let sd = crate::stats::variance(&own).sqrt();
    let grid: Vec<f64> = if points == 1 {
        vec![means[category]]
    } else {
        (0..points)
            .map(|g| means[category] - width_sd * sd + 2.0 * width_sd * sd * g as f64 / (points - 1) as f64)
            .collect()
    };
    let mut alt = Vec::with_capacity(points * n_alt);
    for &price in &grid {
        for (a, &m) in means.iter().enumerate() {
            alt.push(if a == category { price } else { m });
        }
    }
    let ds = ChoiceDataset::new(n_alt, vec![0; points], alt, 1, vec![], 0, dataset.include_intercept())?;
    Ok((grid, ds))
}

/// Fitted purchase probabilities of `categories` along their own price grids
/// for a model fitted with `base` as the base category.
pub fn probability_curves(
    dataset: &ChoiceDataset,
    draws: &PosteriorDraws,
    base: usize,
    categories: &[usize],
    config: &ExperimentConfig,
    prior_label: &str,
) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for &category in categories {
        let (grid, synthetic) =
            price_grid_dataset(dataset, category, config.sensitivity.grid_points, config.sensitivity.grid_width_sd)?;
        let relabeled = relabel_base_category(&synthetic, base)?;
        let idx = relabeled.index_of_label(category).expect("label present");
        let pmf = predictive_pmf_design(&build_design(&relabeled), draws, config.eval.replicates, config.eval.seed)?;
        for (g, &price) in grid.iter().enumerate() {
            out.push(CurvePoint {
                prior: prior_label.into(),
                base,
                category,
                grid_index: g,
                price,
                probability: pmf.probs[g][idx],
            });
        }
    }
    Ok(out)
}

/// True purchase probabilities along the same grids, by direct simulation.
pub fn true_curves(
    dataset: &ChoiceDataset,
    truth: &Truth,
    categories: &[usize],
    config: &ExperimentConfig,
    samples: usize,
) -> Result<Vec<CurvePoint>> {
    let chol = truth
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("true covariance".into()))?
        .unpack();
    let beta = DVector::from_column_slice(&truth.beta);
    let dim = dataset.dim();
    let mut rng = stream_rng(config.eval.seed, streams::SIMULATION + 1);
    let mut out = Vec::new();
    for &category in categories {
        let (grid, synthetic) =
            price_grid_dataset(dataset, category, config.sensitivity.grid_points, config.sensitivity.grid_width_sd)?;
        for (g, x) in build_design(&synthetic).iter().enumerate() {
            let mu = x * &beta;
            let mut hits = 0usize;
            for _ in 0..samples {
                let eps = DVector::from_fn(dim, |_, _| rng.sample(StandardNormal));
                let z = &mu + &chol * eps;
                hits += (choice_from_utilities(z.as_slice()) == category) as usize;
            }
            out.push(CurvePoint {
                prior: "truth".into(),
                base: 0,
                category,
                grid_index: g,
                price: grid[g],
                probability: hits as f64 / samples as f64,
            });
        }
    }
    Ok(out)
}

/// Largest absolute gap between the curves of two bases under one prior.
pub fn sup_distance(points: &[CurvePoint], prior: &str, base_a: usize, base_b: usize) -> f64 {
    let pick = |b: usize| -> Vec<&CurvePoint> {
        points.iter().filter(|p| p.prior == prior && p.base == b).collect()
    };
    let (a, b) = (pick(base_a), pick(base_b));
    a.iter()
        .filter_map(|p| {
            b.iter()
                .find(|q| q.category == p.category && q.grid_index == p.grid_index)
                .map(|q| (p.probability - q.probability).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct SensitivityResult {
    pub bases: Vec<usize>,
    pub categories: Vec<usize>,
    pub curves: Vec<CurvePoint>,
    /// `(prior label, sup-distance between the first two bases)`.
    pub discrepancies: Vec<(String, f64)>,
}

/// Fits the factor model for every (base, prior) cell on the full simulated
/// dataset and evaluates the least- and most-popular categories' curves.
/// `priors` pairs a label with a prior specification.
pub fn base_sensitivity_run(
    config: &ExperimentConfig,
    bases: Option<&[usize]>,
    priors: &[(String, PriorSpec)],
    cache: Option<&Path>,
) -> Result<SensitivityResult> {
    config.validate()?;
    let (raw, truth) = simulate_dataset(&config.dgp)?;
    let (least, most) = least_and_most_popular(&raw);
    let bases: Vec<usize> = match bases {
        Some(b) => b.to_vec(),
        None => vec![0, config.sensitivity.alternative_base.unwrap_or(most)],
    };
    if let Some(&b) = bases.iter().find(|&&b| b >= raw.n_alternatives()) {
        return Err(Error::CategoryOutOfRange { category: b, n_alternatives: raw.n_alternatives() });
    }
    let mut categories = vec![least];
    if most != least {
        categories.push(most);
    }
    let dim = raw.dim();
    let mut curves = true_curves(&raw, &truth, &categories, config, 20_000)?;
    let mut discrepancies = Vec::new();
    for (label, spec) in priors {
        let prior = spec.calibrate(dim, cache)?;
        for &base in &bases {
            let ds = relabel_base_category(&raw, base)?;
            let cfg = SamplerConfig { variant: Variant::Fs, ..config.sampler.clone() };
            let draws = run_chain(&ds, &cfg, Some(&prior))?;
            curves.extend(probability_curves(&raw, &draws, base, &categories, config, label)?);
        }
        if bases.len() >= 2 {
            discrepancies.push((label.clone(), sup_distance(&curves, label, bases[0], bases[1])));
        }
    }
    Ok(SensitivityResult { bases, categories, curves, discrepancies })
}

pub fn write_curves_csv(path: &Path, curves: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["prior", "base", "category", "grid_index", "price", "probability"])?;
    for c in curves {
        w.write_record([
            c.prior.clone(),
            c.base.to_string(),
            c.category.to_string(),
            c.grid_index.to_string(),
            c.price.to_string(),
            c.probability.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Truth-versus-estimate rows for coefficients, variances and correlations.
pub fn scatter_rows(fit: &VariantFit, truth: &Truth) -> Result<Vec<(String, usize, f64, f64)>> {
    let Some(draws) = &fit.draws else {
        return Ok(Vec::new());
    };
    let mut rows = Vec::new();
    for (i, (t, e)) in truth.beta.iter().zip(&fit.beta_mean).enumerate() {
        rows.push(("coefficients".to_string(), i, *t, *e));
    }
    let sigma = draws.sigma_mean();
    for i in 0..sigma.nrows() {
        rows.push(("variances".to_string(), i, truth.sigma[(i, i)], sigma[(i, i)]));
    }
    let corr_true = crate::evaluation::off_diagonal(&crate::spherical::correlation_from_covariance(&truth.sigma)?);
    let corr_est = crate::evaluation::off_diagonal(&draws.correlation_mean());
    for (i, (t, e)) in corr_true.iter().zip(&corr_est).enumerate() {
        rows.push(("correlations".to_string(), i, *t, *e));
    }
    Ok(rows)
}

/// Writes the experiment outputs into `dir`.
pub fn write_experiment(dir: &Path, result: &ExperimentResult, config: &ExperimentConfig) -> Result<()> {
    use crate::io::{write_long_csv, write_matrix_csv};
    std::fs::create_dir_all(dir)?;
    write_long_csv(&dir.join("dataset.csv"), None, &result.dataset)?;
    {
        let mut w = csv::Writer::from_path(dir.join("truth_beta.csv"))?;
        w.write_record(["coefficient", "value"])?;
        for (name, v) in result.dataset.coefficient_names().iter().zip(&result.truth.beta) {
            w.write_record([name.clone(), v.to_string()])?;
        }
        w.flush()?;
    }
    write_matrix_csv(&dir.join("truth_sigma.csv"), &result.truth.sigma, "z")?;
    {
        let mut w = csv::Writer::from_path(dir.join("split.csv"))?;
        w.write_record(["obs_id", "sample"])?;
        let mut rows: Vec<(usize, &str)> = result.train.iter().map(|&i| (i, "in")).collect();
        rows.extend(result.test.iter().map(|&i| (i, "out")));
        rows.sort_unstable();
        for (i, s) in rows {
            w.write_record([i.to_string(), s.to_string()])?;
        }
        w.flush()?;
    }
    for fit in &result.fits {
        let fdir = dir.join(fit.kind.label());
        if let Some(draws) = &fit.draws {
            let cfg = SamplerConfig {
                variant: draws.variant,
                ..config.sampler.clone()
            };
            crate::sampler::draws::write_draws(&fdir, draws, Some(&cfg))?;
        } else {
            std::fs::create_dir_all(&fdir)?;
        }
        write_scores_csv(&fdir.join("scores.csv"), fit.kind.label(), &result.train, &result.test, &fit.in_sample, &fit.out_sample)?;
    }
    crate::evaluation::write_reports_csv(&dir.join("metrics.csv"), &result.reports)?;
    std::fs::write(dir.join("metrics.txt"), crate::evaluation::reports_to_text(&result.reports))?;
    let mut rec = csv::Writer::from_path(dir.join("recovery.csv"))?;
    rec.write_record(["model", "group", "rmse", "mae"])?;
    let mut scatter = csv::Writer::from_path(dir.join("scatter.csv"))?;
    scatter.write_record(["model", "group", "index", "truth", "estimate"])?;
    for fit in &result.fits {
        for g in &fit.recovery {
            rec.write_record([fit.kind.label().to_string(), g.group.to_string(), g.rmse.to_string(), g.mae.to_string()])?;
        }
        if fit.kind == ModelKind::Fs {
            for (group, i, t, e) in scatter_rows(fit, &result.truth)? {
                scatter.write_record([fit.kind.label().to_string(), group, i.to_string(), t.to_string(), e.to_string()])?;
            }
        }
    }
    rec.flush()?;
    scatter.flush()?;
    if let Some(prior) = &result.prior {
        crate::io::write_prior(&dir.join("prior.txt"), prior)?;
    }
    Ok(())
}

/// Convenience used by the acceptance suite and the CLI: mean of a slice of
/// posterior correlations against the truth.
pub fn correlation_agreement(fit: &VariantFit, truth: &Truth) -> Result<f64> {
    let draws = fit
        .draws
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model has no posterior draws".into()))?;
    let est = crate::evaluation::off_diagonal(&draws.correlation_mean());
    let tru = crate::evaluation::off_diagonal(&crate::spherical::correlation_from_covariance(&truth.sigma)?);
    Ok(crate::stats::pearson(&tru, &est))
}

/// Per-observation scores of one model, keyed by observation and sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub model: String,
    /// `(obs_id, sample)` in file order.
    pub keys: Vec<(usize, String)>,
    pub hits: Vec<bool>,
    pub log_probs: Vec<f64>,
}

impl ScoreTable {
    /// Hits and log probabilities restricted to one sample (`in` or `out`).
    pub fn sample(&self, name: &str) -> SampleScores {
        let mut out = SampleScores { hits: Vec::new(), log_probs: Vec::new() };
        for (i, (_, s)) in self.keys.iter().enumerate() {
            if s == name {
                out.hits.push(self.hits[i]);
                out.log_probs.push(self.log_probs[i]);
            }
        }
        out
    }
}

pub fn write_scores_csv(
    path: &Path,
    model: &str,
    train: &[usize],
    test: &[usize],
    in_sample: &SampleScores,
    out_sample: &SampleScores,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "obs_id", "sample", "hit", "log_prob"])?;
    for (sample, idx, s) in [("in", train, in_sample), ("out", test, out_sample)] {
        for ((i, h), lp) in idx.iter().zip(&s.hits).zip(&s.log_probs) {
            w.write_record([model.to_string(), i.to_string(), sample.to_string(), (*h as u8).to_string(), lp.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<ScoreTable> {
    let mut r = csv::Reader::from_path(path)?;
    let mut t = ScoreTable { model: String::new(), keys: Vec::new(), hits: Vec::new(), log_probs: Vec::new() };
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| Error::Parse { path: path.to_path_buf(), message: format!("row {}: {m}", line + 1) };
        if rec.len() != 5 {
            return Err(bad("expected model, obs_id, sample, hit, log_prob"));
        }
        if t.model.is_empty() {
            t.model = rec[0].to_string();
        }
        let obs = rec[1].parse().map_err(|_| bad("obs_id"))?;
        t.keys.push((obs, rec[2].to_string()));
        t.hits.push(match &rec[3] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("hit must be 0 or 1")),
        });
        t.log_probs.push(rec[4].parse().map_err(|_| bad("log_prob"))?);
    }
    Ok(t)
}
