//! Solving for the loading mean `mu_gamma` that makes the prior expected
//! correlation between two utilities equal to a target.
//!
//! The correlation is scale invariant, so the trace restriction does not
//! affect it and the computation works directly with unrestricted draws. The
//! pair used carries all `q` loadings (rows `q` and `q + 1`), making the
//! result independent of `J`.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::brent::BrentRoot;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

/// Common random numbers for the pair: standardized loadings (`2q` per draw)
/// and the two idiosyncratic variances.
#[derive(Debug, Clone)]
pub struct PairDraws {
    q: usize,
    sigma_gamma: f64,
    z: Vec<f64>,
    d2: Vec<f64>,
}

impl PairDraws {
    pub fn new(sigma_gamma: f64, nu: f64, q: usize, draws: usize, seed: u64) -> Result<Self> {
        if !(nu > 1.0) || !(sigma_gamma > 0.0) || q == 0 || draws == 0 {
            return Err(Error::InvalidArgument(
                "need nu > 1, sigma_gamma > 0, q >= 1 and at least one draw".into(),
            ));
        }
        const CHUNK: usize = 4096;
        let gamma = Gamma::new(nu, 1.0).expect("nu > 1");
        let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..draws.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(seed, streams::CALIBRATION_DRAWS + c as u64);
                let len = CHUNK.min(draws - c * CHUNK);
                let mut z = Vec::with_capacity(2 * q * len);
                let mut d2 = Vec::with_capacity(2 * len);
                for _ in 0..len {
                    for _ in 0..2 * q {
                        z.push(StandardNormal.sample(&mut rng));
                    }
                    for _ in 0..2 {
                        let g: f64 = gamma.sample(&mut rng);
                        d2.push((nu - 1.0) / g);
                    }
                }
                (z, d2)
            })
            .collect();
        let mut z = Vec::with_capacity(2 * q * draws);
        let mut d2 = Vec::with_capacity(2 * draws);
        for (a, b) in chunks {
            z.extend(a);
            d2.extend(b);
        }
        Ok(Self { q, sigma_gamma, z, d2 })
    }

    pub fn len(&self) -> usize {
        self.d2.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.d2.is_empty()
    }

    /// Monte Carlo estimate of the prior expected correlation at `mu_gamma`.
    pub fn expected_correlation(&self, mu_gamma: f64) -> f64 {
        let q = self.q;
        let s = self.sigma_gamma;
        let total: f64 = self
            .z
            .par_chunks(2 * q)
            .zip(self.d2.par_chunks(2))
            .map(|(z, d2)| {
                let (mut cross, mut aa, mut bb) = (0.0, 0.0, 0.0);
                for k in 0..q {
                    let a = mu_gamma + s * z[k];
                    let b = mu_gamma + s * z[q + k];
                    cross += a * b;
                    aa += a * a;
                    bb += b * b;
                }
                cross / ((aa + d2[0]) * (bb + d2[1])).sqrt()
            })
            .sum();
        total / self.len() as f64
    }
}

struct Residual<'a> {
    draws: &'a PairDraws,
    target: f64,
}

impl CostFunction for Residual<'_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, mu: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.draws.expected_correlation(*mu) - self.target)
    }
}

/// Result of the root search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquicorrelatedSolution {
    pub mu_gamma: f64,
    pub achieved: f64,
}

/// Finds `mu_gamma` with `E[rho | mu_gamma, sigma_gamma, nu] = target` using
/// common random numbers and a bracketed Brent search.
pub fn solve_equicorrelated_mu(
    target: f64,
    sigma_gamma: f64,
    nu: f64,
    q: usize,
    draws: usize,
    seed: u64,
) -> Result<EquicorrelatedSolution> {
    // flipping the sign of every loading leaves rho unchanged, so E[rho] is
    // even in mu_gamma and never negative
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidArgument(format!("target correlation {target} outside (0, 1)")));
    }
    let pair = PairDraws::new(sigma_gamma, nu, q, draws, seed)?;
    let f = |mu: f64| pair.expected_correlation(mu) - target;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut steps = 0;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > 40 {
            return Err(Error::RootFinder(format!(
                "target {target} not bracketed; E[rho] saturates at {}",
                pair.expected_correlation(hi)
            )));
        }
    }
    let (min, max) = (lo, hi);
    let solver = BrentRoot::new(min, max, 1e-10);
    let res = Executor::new(Residual { draws: &pair, target }, solver)
        .configure(|s| s.param((min + max) / 2.0).max_iters(200))
        .run()
        .map_err(|e| Error::RootFinder(e.to_string()))?;
    let mu = *res
        .state()
        .get_best_param()
        .ok_or_else(|| Error::RootFinder("no root returned".into()))?;
    Ok(EquicorrelatedSolution {
        mu_gamma: mu,
        achieved: pair.expected_correlation(mu),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::calibrate::{sample_unrestricted_psi, Hyperparameters};
    use crate::spherical::{factor_from_psi, PsiVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_mean_loadings_give_zero_expected_correlation() {
        let pair = PairDraws::new(1.0, 5.0, 1, 50_000, 1).unwrap();
        assert!(pair.expected_correlation(0.0).abs() < 0.01);
        assert!(pair.expected_correlation(1.0) > pair.expected_correlation(0.5));
        let a = pair.expected_correlation(0.7);
        let b = pair.expected_correlation(-0.7);
        assert!((a - b).abs() < 0.02);
    }

    #[test]
    fn pair_estimate_matches_full_covariance_draws() {
        // independent route: build the whole Sigma from a full psi draw
        let theta = Hyperparameters::new(1.2, 1.0, 5.0, 2).unwrap();
        let dim = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 60_000;
        let mut acc = 0.0;
        for _ in 0..m {
            let psi = sample_unrestricted_psi(&theta, dim, &mut rng).unwrap();
            let s = factor_from_psi(&PsiVector(psi), dim, 2).unwrap().covariance();
            acc += s[(2, 3)] / (s[(2, 2)] * s[(3, 3)]).sqrt();
        }
        let full = acc / m as f64;
        let pair = PairDraws::new(1.0, 5.0, 2, 60_000, 4).unwrap();
        assert!((pair.expected_correlation(1.2) - full).abs() < 0.01);
    }

    #[test]
    fn solves_half_correlation_for_one_factor() {
        let sol = solve_equicorrelated_mu(0.5, 1.0, 5.0, 1, 200_000, 11).unwrap();
        assert!((sol.achieved - 0.5).abs() < 1e-6);
        // reference value from an independent numpy implementation
        assert!((sol.mu_gamma - 1.525).abs() < 0.02, "{sol:?}");
    }

    #[test]
    fn low_targets_and_bad_input() {
        let sol = solve_equicorrelated_mu(0.3, 1.0, 5.0, 1, 50_000, 2).unwrap();
        assert!(sol.mu_gamma > 0.0);
        assert!((sol.achieved - 0.3).abs() < 1e-6);
        assert!(solve_equicorrelated_mu(-0.3, 1.0, 5.0, 1, 100, 2).is_err());
        assert!(solve_equicorrelated_mu(1.0, 1.0, 5.0, 1, 100, 2).is_err());
        assert!(solve_equicorrelated_mu(0.5, 1.0, 1.0, 1, 100, 2).is_err());
    }
}
