//! Flexible density on a bounded angle.
//!
//! A draw is produced by pushing `x ~ N(0, 1)` through the inverse
//! Yeo-Johnson transform, an affine map `g = mu + tau * t^{-1}(x)`, and the
//! warp `kappa = b * Phi(g)` onto `[0, b)`.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;

use super::yeo_johnson::{yj_inverse, yj_log_derivative, yj_transform};
use crate::stats::{norm_cdf, norm_logpdf, norm_ppf};

/// Calibration draws closer than this to a domain boundary are moved inward.
pub const BOUNDARY_NUDGE: f64 = 1e-12;

/// Angle domain upper bound: `pi` for interior angles, `2 pi` for the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleBound {
    Half,
    Full,
}

impl AngleBound {
    pub fn value(self) -> f64 {
        match self {
            AngleBound::Half => PI,
            AngleBound::Full => TAU,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            AngleBound::Half => "pi",
            AngleBound::Full => "2pi",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "pi" => Some(AngleBound::Half),
            "2pi" => Some(AngleBound::Full),
            _ => None,
        }
    }

    pub fn for_position(index: usize, n_angles: usize) -> Self {
        if index + 1 == n_angles {
            AngleBound::Full
        } else {
            AngleBound::Half
        }
    }
}

/// Parameters `(mu, tau, eta)` of one margin plus its domain bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexibleMargin {
    pub mu: f64,
    pub tau: f64,
    pub eta: f64,
    pub bound: AngleBound,
}

impl FlexibleMargin {
    /// The margin whose density is uniform on its domain.
    pub fn uniform(bound: AngleBound) -> Self {
        Self {
            mu: 0.0,
            tau: 1.0,
            eta: 1.0,
            bound,
        }
    }

    /// `G(kappa) = Phi^{-1}(kappa / b)`.
    pub fn warp(&self, kappa: f64) -> f64 {
        norm_ppf(kappa / self.bound.value())
    }

    /// Log density with the warp already applied: `g = G(kappa)`. Excludes the
    /// `ln G'(kappa)` term.
    pub fn logpdf_warped(&self, g: f64) -> f64 {
        let u = (g - self.mu) / self.tau;
        norm_logpdf(yj_transform(u, self.eta)) + yj_log_derivative(u, self.eta) - self.tau.ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x: f64 = rng.sample(StandardNormal);
        let g = self.mu + self.tau * yj_inverse(x, self.eta);
        nudge_inside(self.bound.value() * norm_cdf(g), self.bound.value())
    }
}

/// `ln G'(kappa) = -ln b - ln phi(G(kappa))`.
pub fn log_warp_jacobian(g: f64, bound: f64) -> f64 {
    -bound.ln() - norm_logpdf(g)
}

/// Log density of one angle; `-inf` on or outside the domain boundary.
pub fn flexible_logpdf(kappa: f64, margin: &FlexibleMargin) -> f64 {
    let b = margin.bound.value();
    if !(kappa > 0.0 && kappa < b) {
        return f64::NEG_INFINITY;
    }
    let g = margin.warp(kappa);
    if !g.is_finite() {
        return f64::NEG_INFINITY;
    }
    margin.logpdf_warped(g) + log_warp_jacobian(g, b)
}

/// Moves values within [`BOUNDARY_NUDGE`] of `0` or `upper` strictly inside.
pub fn nudge_inside(kappa: f64, upper: f64) -> f64 {
    kappa.clamp(BOUNDARY_NUDGE, upper - BOUNDARY_NUDGE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Adaptive Simpson quadrature; independent of the density's construction.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        // split into panels so narrow peaks are not missed by the first estimate
        let panels = 64;
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|p| {
                let (lo, hi) = (a + p as f64 * h, a + (p + 1) as f64 * h);
                let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
                let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
                rec(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40)
            })
            .sum()
    }

    fn density(m: FlexibleMargin) -> impl Fn(f64) -> f64 {
        move |k| {
            let lp = flexible_logpdf(k, &m);
            if lp.is_finite() { lp.exp() } else { 0.0 }
        }
    }

    #[test]
    fn uniform_margin_is_flat() {
        let m = FlexibleMargin::uniform(AngleBound::Half);
        for &k in &[0.01, 0.5, 1.6, 3.1] {
            assert!((flexible_logpdf(k, &m) + PI.ln()).abs() < 1e-12);
        }
        let m = FlexibleMargin::uniform(AngleBound::Full);
        assert!((flexible_logpdf(4.0, &m) + TAU.ln()).abs() < 1e-12);
    }

    #[test]
    fn boundary_is_minus_infinity() {
        let m = FlexibleMargin::uniform(AngleBound::Half);
        assert_eq!(flexible_logpdf(0.0, &m), f64::NEG_INFINITY);
        assert_eq!(flexible_logpdf(PI, &m), f64::NEG_INFINITY);
        assert_eq!(flexible_logpdf(-0.1, &m), f64::NEG_INFINITY);
    }

    #[test]
    fn integrates_to_one_for_random_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..12 {
            let m = FlexibleMargin {
                mu: rng.random_range(-1.0..1.0),
                tau: rng.random_range(0.3..0.8),
                eta: rng.random_range(0.8..1.2),
                bound: if trial % 3 == 0 { AngleBound::Full } else { AngleBound::Half },
            };
            let total = simpson(&density(m), 0.0, m.bound.value(), 1e-10);
            assert!((total - 1.0).abs() < 1e-6, "{m:?}: {total}");
        }
    }

    #[test]
    fn larger_mu_moves_mode_right() {
        let mode = |mu: f64| {
            let m = FlexibleMargin { mu, tau: 0.5, eta: 1.3, bound: AngleBound::Half };
            (1..3000)
                .map(|i| i as f64 * PI / 3000.0)
                .max_by(|a, b| flexible_logpdf(*a, &m).total_cmp(&flexible_logpdf(*b, &m)))
                .unwrap()
        };
        assert!(mode(0.4) > mode(-0.4));
    }

    #[test]
    fn samples_follow_density() {
        let m = FlexibleMargin { mu: 0.3, tau: 0.6, eta: 0.7, bound: AngleBound::Half };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..200_000).map(|_| m.sample(&mut rng)).collect();
        // P(kappa < 1.2) from quadrature versus the empirical fraction
        let p = simpson(&density(m), 0.0, 1.2, 1e-10);
        let frac = draws.iter().filter(|&&k| k < 1.2).count() as f64 / draws.len() as f64;
        assert!((p - frac).abs() < 0.005, "{p} vs {frac}");
        assert!(draws.iter().all(|&k| k > 0.0 && k < PI));
    }
}
