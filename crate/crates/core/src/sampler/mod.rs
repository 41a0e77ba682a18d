//! Three-step MCMC: Gibbs for `beta`, truncated-normal Gibbs for the latent
//! utilities, and adaptive blocked random-walk MH for the angles.

pub mod draws;
pub mod kernel;
pub mod truncnorm;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use draws::PosteriorDraws;
pub use kernel::{
    adapt_proposals, gibbs_beta, gibbs_latent_utilities, log_acceptance_ratio, mh_angles_sweep,
    BlockTarget, ChainData,
};

use crate::error::{Error, Result};
use crate::model::{choice_from_utilities, ChoiceDataset};
use crate::prior::CalibratedPrior;
use crate::rng::{stream_rng, streams};
use crate::spherical::{covariance_from_angles, AngleVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Factor-structured covariance with the calibrated angle prior.
    #[serde(rename = "mnp-fs")]
    Fs,
    /// Identity covariance held fixed.
    #[serde(rename = "mnp-i")]
    Identity,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Fs => "mnp-fs",
            Variant::Identity => "mnp-i",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnp-fs" => Ok(Variant::Fs),
            "mnp-i" => Ok(Variant::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant `{other}` (expected mnp-fs or mnp-i)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub total_iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Prior variance of each coefficient; the prior precision is its inverse times `I_K`.
    pub prior_variance: f64,
    pub block_size: usize,
    /// Iterations between proposal adaptations during burn-in.
    pub adapt_batch: usize,
    pub target_band: (f64, f64),
    /// Initial proposal standard deviation of every angle.
    pub initial_scale: f64,
    pub seed: u64,
    pub variant: Variant,
    /// When set, retained draws are appended to CSV files here every 1,000 iterations.
    #[serde(skip)]
    pub stream_dir: Option<PathBuf>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            total_iterations: 20_000,
            burn_in: 10_000,
            thinning: 1,
            prior_variance: 0.1,
            block_size: 5,
            adapt_batch: 50,
            target_band: (0.15, 0.30),
            initial_scale: 0.1,
            seed: 0,
            variant: Variant::Fs,
            stream_dir: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.burn_in >= self.total_iterations {
            return bad("burn_in must be smaller than total_iterations");
        }
        if self.block_size == 0 || self.thinning == 0 || self.adapt_batch == 0 {
            return bad("block_size, thinning and adapt_batch must be positive");
        }
        if !(self.prior_variance > 0.0) || !(self.initial_scale > 0.0) {
            return bad("prior_variance and initial_scale must be positive");
        }
        let (lo, hi) = self.target_band;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad("target band must satisfy 0 <= low < high <= 1");
        }
        Ok(())
    }

    pub fn retained_draws(&self) -> usize {
        (self.total_iterations - self.burn_in) / self.thinning
    }

    pub fn prior_precision(&self, k: usize) -> DMatrix<f64> {
        DMatrix::identity(k, k) / self.prior_variance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcState {
    pub beta: DVector<f64>,
    /// Empty for the identity variant.
    pub kappa: AngleVector,
    /// Latent utilities, flat `N x J`.
    pub z: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub batch_accepts: Vec<u64>,
    pub batch_attempts: Vec<u64>,
    pub total_accepts: Vec<u64>,
    pub total_attempts: Vec<u64>,
}

impl McmcState {
    pub fn sigma(&self, dim: usize, q: usize) -> Result<DMatrix<f64>> {
        if self.kappa.is_empty() {
            Ok(DMatrix::identity(dim, dim))
        } else {
            covariance_from_angles(&self.kappa, dim, q)
        }
    }
}

/// Initial latent utilities for one observation: a centered standard normal
/// vector of length `J + 1` with its largest element moved to the chosen
/// category, then differenced against the base.
pub fn initial_utilities<R: Rng + ?Sized>(dim: usize, choice: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut raw: Vec<f64> = (0..=dim).map(|_| rng.sample(StandardNormal)).collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        raw.iter_mut().for_each(|v| *v -= mean);
        let argmax = (0..raw.len())
            .max_by(|&a, &b| raw[a].total_cmp(&raw[b]))
            .expect("nonempty");
        raw.swap(argmax, choice);
        let z: Vec<f64> = raw[1..].iter().map(|v| v - raw[0]).collect();
        if choice_from_utilities(&z) == choice {
            return z;
        }
    }
}

pub fn init_state<R: Rng + ?Sized>(
    dataset: &ChoiceDataset,
    config: &SamplerConfig,
    prior: Option<&CalibratedPrior>,
    rng: &mut R,
) -> Result<McmcState> {
    let dim = dataset.dim();
    let kappa = match config.variant {
        Variant::Identity => AngleVector(Vec::new()),
        Variant::Fs => {
            let prior = prior.ok_or_else(|| {
                Error::InvalidArgument("the mnp-fs variant needs a calibrated prior".into())
            })?;
            if prior.dim != dim {
                return Err(Error::Dimension(format!(
                    "prior calibrated for J = {}, data has J = {dim}",
                    prior.dim
                )));
            }
            prior.sample(rng)
        }
    };
    let n_angles = kappa.len();
    let mut z = Vec::with_capacity(dataset.len() * dim);
    for &y in dataset.choices() {
        z.extend(initial_utilities(dim, y, rng));
    }
    Ok(McmcState {
        beta: DVector::zeros(dataset.n_coefficients()),
        kappa,
        z,
        log_scales: vec![config.initial_scale.ln(); n_angles],
        batch_accepts: vec![0; n_angles],
        batch_attempts: vec![0; n_angles],
        total_accepts: vec![0; n_angles],
        total_attempts: vec![0; n_angles],
    })
}

const STREAM_EVERY: usize = 1_000;

/// Runs one chain; the seed in `config` fully determines the output.
pub fn run_chain(
    dataset: &ChoiceDataset,
    config: &SamplerConfig,
    prior: Option<&CalibratedPrior>,
) -> Result<PosteriorDraws> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot fit an empty dataset".into()));
    }
    let dim = dataset.dim();
    let q = match config.variant {
        Variant::Fs => prior.map_or(0, |p| p.q()),
        Variant::Identity => 0,
    };
    let data = ChainData::from_dataset(dataset);
    let mut rng = stream_rng(config.seed, streams::CHAIN);
    let mut state = init_state(dataset, config, prior, &mut rng)?;
    let prior_precision = config.prior_precision(data.k);
    let mut sigma = state.sigma(dim, q)?;
    let mut precision = kernel::precision_of(&sigma)?;

    let mut out = PosteriorDraws::empty(config.variant, dim, q, dataset.coefficient_names());
    let mut streamer = match &config.stream_dir {
        Some(dir) => Some(draws::DrawStreamer::create(dir, &out)?),
        None => None,
    };
    let started = Instant::now();
    let mut batch_index = 0;
    for it in 0..config.total_iterations {
        if it == config.burn_in {
            state.total_accepts.iter_mut().for_each(|c| *c = 0);
            state.total_attempts.iter_mut().for_each(|c| *c = 0);
        }
        state.beta = gibbs_beta(&data, &state.z, &precision, &prior_precision, &mut rng)?;
        let mu = data.linear_predictors(&state.beta);
        let step_seed: u64 = rng.random();
        gibbs_latent_utilities(&data, &mut state.z, &mu, &precision, step_seed)?;
        if !kernel::latent_consistent(&data, &state.z) {
            return Err(Error::Invariant {
                invariant: "latent utilities consistent with observed choices".into(),
                iteration: it,
            });
        }
        if config.variant == Variant::Fs {
            let prior = prior.expect("checked in init_state");
            let scatter = data.residual_scatter(&state.z, &mu);
            let target = BlockTarget { prior, scatter: &scatter, n_obs: data.len(), dim, q };
            mh_angles_sweep(&mut state, &target, config, it, &mut rng)?;
            sigma = state.sigma(dim, q)?;
            precision = kernel::precision_of(&sigma).map_err(|_| Error::Invariant {
                invariant: "positive definite covariance".into(),
                iteration: it,
            })?;
            if it < config.burn_in && (it + 1) % config.adapt_batch == 0 {
                batch_index += 1;
                adapt_proposals(&mut state, config, batch_index);
            }
        }
        if it >= config.burn_in && (it + 1 - config.burn_in) % config.thinning == 0 {
            if (sigma.trace() - dim as f64).abs() >= 1e-10 {
                return Err(Error::Invariant {
                    invariant: "trace restriction".into(),
                    iteration: it,
                });
            }
            out.beta.push(state.beta.iter().copied().collect());
            out.kappa.push(state.kappa.clone());
        }
        if let Some(s) = streamer.as_mut() {
            if (it + 1) % STREAM_EVERY == 0 || it + 1 == config.total_iterations {
                s.append(&out)?;
            }
        }
    }
    out.seconds_per_iteration = started.elapsed().as_secs_f64() / config.total_iterations as f64;
    out.acceptance = state
        .total_accepts
        .iter()
        .zip(&state.total_attempts)
        .map(|(&a, &n)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
        .collect();
    out.final_log_scales = state.log_scales.clone();
    Ok(out)
}
