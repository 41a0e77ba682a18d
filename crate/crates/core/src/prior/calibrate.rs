//! Unrestricted factor prior, its projection onto the trace-`J` sphere, and the
//! per-margin fit of the flexible angle density to draws from that prior.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;

use super::flexible::{log_warp_jacobian, nudge_inside, AngleBound, FlexibleMargin};
use super::yeo_johnson::yj_inverse;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};
use crate::spherical::{angles_from_psi, num_free_params, AngleVector, PsiVector};
use crate::stats::{ks_distance, mean, variance};

/// Hyperparameters `theta = (mu_gamma, sigma_gamma, nu)` of the factor prior and
/// the number of factors. The Inverse-Gamma rate is tied to `nu - 1` so that
/// the idiosyncratic variances have prior mean one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    pub mu_gamma: f64,
    pub sigma_gamma: f64,
    pub nu: f64,
    pub q: usize,
}

impl Hyperparameters {
    pub fn new(mu_gamma: f64, sigma_gamma: f64, nu: f64, q: usize) -> Result<Self> {
        if !(nu > 1.0) {
            return Err(Error::InvalidArgument(format!("nu must exceed 1, got {nu}")));
        }
        if !(sigma_gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma_gamma must be positive, got {sigma_gamma}"
            )));
        }
        if !mu_gamma.is_finite() || q == 0 {
            return Err(Error::InvalidArgument("mu_gamma must be finite and q >= 1".into()));
        }
        Ok(Self { mu_gamma, sigma_gamma, nu, q })
    }

    pub fn rate(&self) -> f64 {
        self.nu - 1.0
    }
}

/// One draw of the unrestricted `psi_ddot = (d_ddot', vech(gamma_ddot)')'`.
pub fn sample_unrestricted_psi<R: Rng + ?Sized>(
    theta: &Hyperparameters,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = num_free_params(dim, theta.q)?;
    let gamma_dist = Gamma::new(theta.nu, 1.0).expect("nu > 1");
    let loading = Normal::new(theta.mu_gamma, theta.sigma_gamma).expect("sigma > 0");
    let mut out = Vec::with_capacity(n);
    for _ in 0..dim {
        // d^2 ~ Inverse-Gamma(nu, nu - 1)
        let g: f64 = gamma_dist.sample(rng);
        out.push((theta.rate() / g).sqrt());
    }
    while out.len() < n {
        out.push(loading.sample(rng));
    }
    Ok(out)
}

/// `psi = sqrt(J) psi_ddot / ||psi_ddot||`.
pub fn project_to_sphere(psi_ddot: &[f64], dim: usize) -> Result<PsiVector> {
    let norm = psi_ddot.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument("cannot project a zero vector".into()));
    }
    let scale = (dim as f64).sqrt() / norm;
    Ok(PsiVector(psi_ddot.iter().map(|v| v * scale).collect()))
}

const CHUNK: usize = 4096;

/// `count` draws from the angle prior implied by `theta`, generated in fixed
/// chunks with independent streams.
pub fn sample_prior_angles(
    theta: &Hyperparameters,
    dim: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<AngleVector>> {
    num_free_params(dim, theta.q)?;
    let n_chunks = count.div_ceil(CHUNK);
    let chunks: Vec<Vec<AngleVector>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, streams::CALIBRATION_DRAWS + c as u64);
            let len = CHUNK.min(count - c * CHUNK);
            let mut out = Vec::with_capacity(len);
            while out.len() < len {
                let raw = sample_unrestricted_psi(theta, dim, &mut rng).expect("dims checked");
                let psi = project_to_sphere(&raw, dim).expect("norm positive a.s.");
                if let Ok(kappa) = angles_from_psi(&psi) {
                    out.push(kappa);
                }
            }
            out
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Fit quality of one margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginFit {
    /// Average fitted log density over the calibration draws.
    pub avg_loglik: f64,
    /// KS distance between fresh draws from the fitted margin and the calibration draws.
    pub ks_distance: f64,
}

/// Product of fitted flexible margins approximating the angle prior.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedPrior {
    pub margins: Vec<FlexibleMargin>,
    pub theta: Hyperparameters,
    pub draws: usize,
    pub seed: u64,
    pub dim: usize,
    pub diagnostics: Vec<MarginFit>,
}

impl CalibratedPrior {
    /// Prior with every margin uniform on its domain.
    pub fn uniform(theta: Hyperparameters, dim: usize) -> Result<Self> {
        let n = num_free_params(dim, theta.q)?;
        let margins = (0..n - 1)
            .map(|l| FlexibleMargin::uniform(AngleBound::for_position(l, n - 1)))
            .collect();
        Ok(Self {
            margins,
            theta,
            draws: 0,
            seed: 0,
            dim,
            diagnostics: Vec::new(),
        })
    }

    pub fn q(&self) -> usize {
        self.theta.q
    }

    pub fn n_angles(&self) -> usize {
        self.margins.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AngleVector {
        AngleVector(self.margins.iter().map(|m| m.sample(rng)).collect())
    }

    /// Log density of a single coordinate.
    pub fn log_margin(&self, index: usize, value: f64) -> f64 {
        super::flexible::flexible_logpdf(value, &self.margins[index])
    }
}

/// Sum of the margin log densities; errors on a dimension or domain violation.
pub fn log_prior_kappa(kappa: &AngleVector, prior: &CalibratedPrior) -> Result<f64> {
    if kappa.len() != prior.n_angles() {
        return Err(Error::Dimension(format!(
            "{} angles for a prior over {}",
            kappa.len(),
            prior.n_angles()
        )));
    }
    kappa.check_domain()?;
    Ok(kappa
        .as_slice()
        .iter()
        .zip(&prior.margins)
        .map(|(&k, m)| super::flexible::flexible_logpdf(k, m))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Number of prior draws `M`.
    pub draws: usize,
    pub seed: u64,
    /// Random restarts of the simplex search per margin.
    pub restarts: usize,
    pub max_iters: u64,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            draws: 100_000,
            seed: 0,
            restarts: 3,
            max_iters: 2_000,
            threads: None,
        }
    }
}

/// Fits the flexible margins to draws from the prior implied by `theta` by
/// maximizing the average log density of each margin separately; since the
/// density class is a product, this minimizes the sample KL estimate.
pub fn calibrate_prior(
    theta: &Hyperparameters,
    dim: usize,
    opts: &CalibrationOptions,
) -> Result<CalibratedPrior> {
    match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(|| calibrate_inner(theta, dim, opts)),
        None => calibrate_inner(theta, dim, opts),
    }
}

fn calibrate_inner(
    theta: &Hyperparameters,
    dim: usize,
    opts: &CalibrationOptions,
) -> Result<CalibratedPrior> {
    if opts.draws < 2 {
        return Err(Error::InvalidArgument("calibration needs at least 2 draws".into()));
    }
    let draws = sample_prior_angles(theta, dim, opts.draws, opts.seed)?;
    let n_angles = draws[0].len();
    let fits: Vec<(FlexibleMargin, MarginFit)> = (0..n_angles)
        .into_par_iter()
        .map(|l| {
            let bound = AngleBound::for_position(l, n_angles);
            let b = bound.value();
            let warped: Vec<f64> = draws
                .iter()
                .map(|k| super::flexible::FlexibleMargin::uniform(bound).warp(nudge_inside(k.0[l], b)))
                .collect();
            let mut rng = stream_rng(opts.seed, streams::MARGIN_FIT + l as u64);
            let (margin, warped_ll) =
                fit_margin(&warped, bound, None, opts.restarts, opts.max_iters, &mut rng)
                    .map_err(|reason| Error::Optimizer { margin: l, reason })?;
            let jacobian = warped.iter().map(|&g| log_warp_jacobian(g, b)).sum::<f64>()
                / warped.len() as f64;
            let mut refit_rng = stream_rng(opts.seed, streams::MARGIN_REFIT + l as u64);
            let refit: Vec<f64> = (0..warped.len())
                .map(|_| {
                    let x: f64 = refit_rng.sample(rand_distr::StandardNormal);
                    margin.mu + margin.tau * yj_inverse(x, margin.eta)
                })
                .collect();
            let fit = MarginFit {
                avg_loglik: warped_ll + jacobian,
                ks_distance: ks_distance(&refit, &warped),
            };
            Ok((margin, fit))
        })
        .collect::<Result<_>>()?;
    let (margins, diagnostics) = fits.into_iter().unzip();
    Ok(CalibratedPrior {
        margins,
        theta: *theta,
        draws: opts.draws,
        seed: opts.seed,
        dim,
        diagnostics,
    })
}

/// Negative average warped log density over `(mu, ln tau, eta)`, with `eta`
/// held to `[0, 2]` by clamping plus a quadratic penalty outside the box.
struct MarginObjective<'a> {
    warped: &'a [f64],
    bound: AngleBound,
}

impl MarginObjective<'_> {
    fn margin(&self, p: &[f64]) -> FlexibleMargin {
        FlexibleMargin {
            mu: p[0],
            tau: p[1].exp(),
            eta: p[2].clamp(0.0, 2.0),
            bound: self.bound,
        }
    }

    fn average_loglik(&self, m: &FlexibleMargin) -> f64 {
        self.warped.iter().map(|&g| m.logpdf_warped(g)).sum::<f64>() / self.warped.len() as f64
    }
}

impl CostFunction for MarginObjective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let m = self.margin(p);
        let excess = p[2] - m.eta;
        let value = -self.average_loglik(&m) + 1e3 * excess * excess;
        Ok(if value.is_finite() { value } else { 1e300 })
    }
}

fn simplex_around(p: &[f64; 3], mu_step: f64) -> Vec<Vec<f64>> {
    let eta_step = if p[2] > 1.0 { -0.4 } else { 0.4 };
    vec![
        p.to_vec(),
        vec![p[0] + mu_step, p[1], p[2]],
        vec![p[0], p[1] + 0.4, p[2]],
        vec![p[0], p[1], p[2] + eta_step],
    ]
}

fn run_simplex(
    objective: &MarginObjective<'_>,
    start: &[f64; 3],
    mu_step: f64,
    max_iters: u64,
) -> std::result::Result<(Vec<f64>, f64), String> {
    let solver = NelderMead::new(simplex_around(start, mu_step))
        .with_sd_tolerance(1e-12)
        .map_err(|e| e.to_string())?;
    let res = Executor::new(
        MarginObjective {
            warped: objective.warped,
            bound: objective.bound,
        },
        solver,
    )
    .configure(|s| s.max_iters(max_iters))
    .run()
    .map_err(|e| e.to_string())?;
    let state = res.state();
    let best = state
        .get_best_param()
        .cloned()
        .ok_or_else(|| "no best parameter".to_string())?;
    Ok((best, state.get_best_cost()))
}

/// Fits one margin to warped draws `g = G(kappa)`. Returns the fitted margin and
/// the achieved average warped log density (the `ln G'` term excluded).
///
/// Starts from the moment initialization (or `init`), then from `restarts`
/// random perturbations, and finally polishes the best point with a fresh
/// simplex.
pub fn fit_margin<R: Rng + ?Sized>(
    warped: &[f64],
    bound: AngleBound,
    init: Option<[f64; 3]>,
    restarts: usize,
    max_iters: u64,
    rng: &mut R,
) -> std::result::Result<(FlexibleMargin, f64), String> {
    if warped.len() < 2 {
        return Err("need at least two draws".into());
    }
    let sd = variance(warped).sqrt().max(1e-6);
    let start = init.unwrap_or([mean(warped), sd.ln(), 1.0]);
    let objective = MarginObjective { warped, bound };
    let mu_step = 0.5 * sd;
    let mut best = run_simplex(&objective, &start, mu_step, max_iters)?;
    for _ in 0..restarts {
        let p = [
            start[0] + mu_step * rng.sample::<f64, _>(rand_distr::StandardNormal),
            start[1] + 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.random_range(0.0..2.0),
        ];
        let candidate = run_simplex(&objective, &p, mu_step, max_iters)?;
        if candidate.1 < best.1 {
            best = candidate;
        }
    }
    let polish_start = [best.0[0], best.0[1], best.0[2].clamp(0.0, 2.0)];
    let polished = run_simplex(&objective, &polish_start, 0.1 * mu_step, max_iters)?;
    if polished.1 < best.1 {
        best = polished;
    }
    if !best.1.is_finite() || best.1 >= 1e300 {
        return Err("objective not finite at the optimum".into());
    }
    let margin = objective.margin(&best.0);
    Ok((margin, objective.average_loglik(&margin)))
}
