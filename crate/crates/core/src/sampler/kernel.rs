//! The three conditional updates and the proposal adaptation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::truncnorm::{sample_interval, sample_lower, sample_upper};
use super::{McmcState, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::{build_design, choice_from_utilities, ChoiceDataset};
use crate::prior::CalibratedPrior;
use crate::rng::stream_rng;
use crate::spherical::{covariance_from_angles, AngleVector};
use crate::stats::log_norm_interval;

/// Observations per parallel work unit; fixed so results do not depend on the
/// number of threads.
const OBS_CHUNK: usize = 256;

/// Design matrices, choices and the cross-product blocks
/// `W_ab = sum_i x_ia x_ib'` (rows `a`, `b` of `X_i`), so that
/// `sum_i X_i' P X_i = sum_ab P_ab W_ab`.
#[derive(Debug, Clone)]
pub struct ChainData {
    pub design: Vec<DMatrix<f64>>,
    pub choices: Vec<usize>,
    pub dim: usize,
    pub k: usize,
    cross: Vec<DMatrix<f64>>,
}

impl ChainData {
    pub fn from_dataset(dataset: &ChoiceDataset) -> Self {
        Self::new(build_design(dataset), dataset.choices().to_vec(), dataset.dim(), dataset.n_coefficients())
    }

    pub fn new(design: Vec<DMatrix<f64>>, choices: Vec<usize>, dim: usize, k: usize) -> Self {
        assert_eq!(design.len(), choices.len());
        let mut cross = vec![DMatrix::zeros(k, k); dim * dim];
        for x in &design {
            for a in 0..dim {
                let xa = x.row(a);
                for b in a..dim {
                    let xb = x.row(b);
                    let w = &mut cross[a * dim + b];
                    *w += xa.transpose() * xb;
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                cross[a * dim + b] = cross[b * dim + a].transpose();
            }
        }
        Self { design, choices, dim, k, cross }
    }

    pub fn len(&self) -> usize {
        self.design.len()
    }

    pub fn is_empty(&self) -> bool {
        self.design.is_empty()
    }

    /// `X_i beta` for every observation, flat `N x J`.
    pub fn linear_predictors(&self, beta: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * self.dim];
        out.par_chunks_mut(self.dim)
            .zip(self.design.par_iter())
            .for_each(|(row, x)| {
                let m = x * beta;
                row.copy_from_slice(m.as_slice());
            });
        out
    }

    /// Residual scatter `S = sum_i (z_i - X_i beta)(z_i - X_i beta)'`.
    pub fn residual_scatter(&self, z: &[f64], mu: &[f64]) -> DMatrix<f64> {
        let j = self.dim;
        let parts: Vec<DMatrix<f64>> = z
            .par_chunks(j * OBS_CHUNK)
            .zip(mu.par_chunks(j * OBS_CHUNK))
            .map(|(zc, mc)| {
                let mut s = DMatrix::zeros(j, j);
                let mut e = DVector::zeros(j);
                for (zi, mi) in zc.chunks(j).zip(mc.chunks(j)) {
                    for r in 0..j {
                        e[r] = zi[r] - mi[r];
                    }
                    s.syger(1.0, &e, &e, 1.0);
                }
                s
            })
            .collect();
        let mut s = parts.into_iter().fold(DMatrix::zeros(j, j), |acc, p| acc + p);
        s.fill_upper_triangle_with_lower_triangle();
        s
    }
}

/// `Sigma^{-1}` via Cholesky.
pub fn precision_of(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sigma
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite("covariance of the latent utilities".into()))
}

/// Conditional posterior of `beta`: returns `(b_bar, B_bar)`.
pub fn beta_posterior(
    data: &ChainData,
    z: &[f64],
    precision: &DMatrix<f64>,
    prior_precision: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (j, k) = (data.dim, data.k);
    let mut bbar = prior_precision.clone();
    for a in 0..j {
        for b in 0..j {
            let p = precision[(a, b)];
            if p != 0.0 {
                bbar += &data.cross[a * j + b] * p;
            }
        }
    }
    let parts: Vec<DVector<f64>> = data
        .design
        .par_chunks(OBS_CHUNK)
        .zip(z.par_chunks(j * OBS_CHUNK))
        .map(|(xs, zc)| {
            let mut rhs = DVector::zeros(k);
            for (x, zi) in xs.iter().zip(zc.chunks(j)) {
                let pz = precision * DVector::from_column_slice(zi);
                rhs.gemv_tr(1.0, x, &pz, 1.0);
            }
            rhs
        })
        .collect();
    let rhs = parts.into_iter().fold(DVector::zeros(k), |acc, p| acc + p);
    let mean = match bbar.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => DVector::from_element(k, f64::NAN),
    };
    (mean, bbar)
}

/// Step 1: `beta ~ N(b_bar, B_bar^{-1})`.
pub fn gibbs_beta<R: Rng + ?Sized>(
    data: &ChainData,
    z: &[f64],
    precision: &DMatrix<f64>,
    prior_precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (mean, bbar) = beta_posterior(data, z, precision, prior_precision);
    let chol = bbar
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("posterior precision of beta".into()))?;
    let eps = DVector::from_fn(data.k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dev = chol
        .l()
        .tr_solve_lower_triangular(&eps)
        .expect("cholesky factor has a positive diagonal");
    Ok(mean + dev)
}

/// Mean and variance of `z_ij` given the other coordinates, from the precision
/// matrix: mean `mu_j - sum_{k != j} P_jk (z_k - mu_k) / P_jj`, variance `1 / P_jj`.
pub fn latent_conditional(
    z: &[f64],
    mu: &[f64],
    precision: &DMatrix<f64>,
    j: usize,
) -> (f64, f64) {
    let pjj = precision[(j, j)];
    let mut shift = 0.0;
    for k in 0..z.len() {
        if k != j {
            shift += precision[(j, k)] * (z[k] - mu[k]);
        }
    }
    (mu[j] - shift / pjj, 1.0 / pjj)
}

/// Step 2: one fixed-order sweep over the coordinates of every `Z_i`, each
/// drawn from its truncated conditional. `seed` drives per-chunk streams.
pub fn gibbs_latent_utilities(
    data: &ChainData,
    z: &mut [f64],
    mu: &[f64],
    precision: &DMatrix<f64>,
    seed: u64,
) -> Result<()> {
    let j = data.dim;
    for c in 0..j {
        let v = precision[(c, c)];
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::ConditionalVariance { coordinate: c, variance: 1.0 / v });
        }
    }
    let sd: Vec<f64> = (0..j).map(|c| (1.0 / precision[(c, c)]).sqrt()).collect();
    z.par_chunks_mut(j * OBS_CHUNK)
        .zip(mu.par_chunks(j * OBS_CHUNK))
        .zip(data.choices.par_chunks(OBS_CHUNK))
        .enumerate()
        .for_each(|(chunk, ((zc, mc), yc))| {
            let mut rng = stream_rng(seed, chunk as u64);
            for ((zi, mi), &y) in zc.chunks_mut(j).zip(mc.chunks(j)).zip(yc) {
                for c in 0..j {
                    let (m, _) = latent_conditional(zi, mi, precision, c);
                    let others = zi
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != c)
                        .fold(0.0_f64, |acc, (_, &v)| acc.max(v));
                    zi[c] = if y == c + 1 {
                        sample_lower(m, sd[c], others, &mut rng)
                    } else {
                        sample_upper(m, sd[c], others, &mut rng)
                    };
                }
            }
        });
    Ok(())
}

/// Checks `choice_from_utilities(Z_i) = Y_i` for every observation.
pub fn latent_consistent(data: &ChainData, z: &[f64]) -> bool {
    z.chunks(data.dim)
        .zip(&data.choices)
        .all(|(zi, &y)| choice_from_utilities(zi) == y)
}

/// `ln p(Z | X, beta, Sigma)` up to a constant, from the residual scatter.
pub fn gaussian_loglik(sigma: &DMatrix<f64>, scatter: &DMatrix<f64>, n: usize) -> f64 {
    let Some(chol) = sigma.clone().cholesky() else {
        return f64::NEG_INFINITY;
    };
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = chol.solve(scatter).trace();
    -0.5 * n as f64 * log_det - 0.5 * trace
}

/// Everything the block acceptance ratio depends on besides the angles.
pub struct BlockTarget<'a> {
    pub prior: &'a CalibratedPrior,
    pub scatter: &'a DMatrix<f64>,
    pub n_obs: usize,
    pub dim: usize,
    pub q: usize,
}

impl BlockTarget<'_> {
    pub fn loglik(&self, kappa: &AngleVector) -> f64 {
        match covariance_from_angles(kappa, self.dim, self.q) {
            Ok(sigma) => gaussian_loglik(&sigma, self.scatter, self.n_obs),
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

/// Log of the block acceptance ratio for moving `block` from `old` to `new`:
/// log-likelihood difference, prior difference over the block's margins, and
/// the truncated-normal proposal correction `ln Z(old) - ln Z(new)`, where `Z`
/// is the proposal mass inside the domain for a given center. `loglik_old` is
/// passed in to avoid recomputation; returns the ratio and the new log-likelihood.
pub fn log_acceptance_ratio(
    target: &BlockTarget<'_>,
    old: &AngleVector,
    new: &AngleVector,
    block: &[usize],
    scales: &[f64],
    loglik_old: f64,
) -> (f64, f64) {
    let loglik_new = target.loglik(new);
    let mut ratio = loglik_new - loglik_old;
    for &l in block {
        let upper = old.upper_bound(l);
        let s = scales[l];
        ratio += target.prior.log_margin(l, new.0[l]) - target.prior.log_margin(l, old.0[l]);
        let mass = |c: f64| log_norm_interval(-c / s, (upper - c) / s);
        ratio += mass(old.0[l]) - mass(new.0[l]);
    }
    (if ratio.is_nan() { f64::NEG_INFINITY } else { ratio }, loglik_new)
}

/// Step 3: random block partition of the angles, then one blocked
/// random-walk MH update per block. Returns the covariance at the final angles.
pub fn mh_angles_sweep<R: Rng + ?Sized>(
    state: &mut McmcState,
    target: &BlockTarget<'_>,
    config: &SamplerConfig,
    iteration: usize,
    rng: &mut R,
) -> Result<()> {
    let n = state.kappa.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let scales: Vec<f64> = state.log_scales.iter().map(|s| s.exp()).collect();
    let mut loglik = target.loglik(&state.kappa);
    if !loglik.is_finite() {
        return Err(Error::Invariant {
            invariant: "finite likelihood at the current angles".into(),
            iteration,
        });
    }
    for block in order.chunks(config.block_size.max(1)) {
        let mut proposal = state.kappa.clone();
        for &l in block {
            let upper = state.kappa.upper_bound(l);
            proposal.0[l] = sample_interval(state.kappa.0[l], scales[l], 0.0, upper, rng);
        }
        let (ratio, loglik_new) =
            log_acceptance_ratio(target, &state.kappa, &proposal, block, &scales, loglik);
        let u: f64 = rng.random();
        let accepted = u.ln() < ratio;
        if accepted {
            state.kappa = proposal;
            loglik = loglik_new;
        }
        for &l in block {
            state.batch_attempts[l] += 1;
            state.total_attempts[l] += 1;
            if accepted {
                state.batch_accepts[l] += 1;
                state.total_accepts[l] += 1;
            }
        }
    }
    Ok(())
}

/// Diminishing adaptation: each log-scale moves by `min(0.1, t^{-1/2})` when
/// its batch acceptance leaves the target band. Resets the batch counters.
pub fn adapt_proposals(state: &mut McmcState, config: &SamplerConfig, batch_index: usize) {
    let delta = (1.0 / (batch_index.max(1) as f64).sqrt()).min(0.1);
    let (lo, hi) = config.target_band;
    for l in 0..state.log_scales.len() {
        let attempts = state.batch_attempts[l];
        if attempts > 0 {
            let rate = state.batch_accepts[l] as f64 / attempts as f64;
            if rate > hi {
                state.log_scales[l] += delta;
            } else if rate < lo {
                state.log_scales[l] -= delta;
            }
        }
        state.batch_attempts[l] = 0;
        state.batch_accepts[l] = 0;
    }
}
