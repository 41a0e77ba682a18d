//! Univariate truncated normal draws.
//!
//! Inverse-cdf on whichever tail keeps precision, switching to exponential
//! (or uniform) rejection once the truncation point is beyond 4 standard
//! deviations.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::stats::{norm_cdf, norm_ppf};

const TAIL_SWITCH: f64 = 4.0;

/// `x ~ N(0, 1)` conditioned on `x > alpha`.
pub fn std_lower<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha == f64::NEG_INFINITY {
        return rng.sample(StandardNormal);
    }
    if alpha < TAIL_SWITCH {
        // -x is N(0,1) truncated above at -alpha: keep precision in its lower tail
        let u: f64 = rng.random();
        let x = -norm_ppf(u * norm_cdf(-alpha));
        return x.max(alpha);
    }
    let lambda = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let z = alpha + e / lambda;
        let u: f64 = rng.random();
        if u <= (-0.5 * (z - lambda) * (z - lambda)).exp() {
            return z;
        }
    }
}

/// `x ~ N(0, 1)` conditioned on `alpha < x < beta`.
pub fn std_interval<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    debug_assert!(alpha < beta);
    if beta <= 0.0 {
        return -std_interval(-beta, -alpha, rng);
    }
    if alpha >= TAIL_SWITCH {
        let lambda = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
        if lambda * (beta - alpha) > 1.0 {
            loop {
                let z = std_lower(alpha, rng);
                if z < beta {
                    return z;
                }
            }
        }
        loop {
            let z = alpha + (beta - alpha) * rng.random::<f64>();
            let u: f64 = rng.random();
            if u <= (0.5 * (alpha * alpha - z * z)).exp() {
                return z;
            }
        }
    }
    let u: f64 = rng.random();
    let x = if alpha > 0.0 {
        let (pa, pb) = (norm_cdf(-beta), norm_cdf(-alpha));
        -norm_ppf(pa + u * (pb - pa))
    } else {
        let (pa, pb) = (norm_cdf(alpha), norm_cdf(beta));
        norm_ppf(pa + u * (pb - pa))
    };
    x.clamp(alpha, beta)
}

/// `N(mean, sd^2)` truncated to `(lower, inf)`.
pub fn sample_lower<R: Rng + ?Sized>(mean: f64, sd: f64, lower: f64, rng: &mut R) -> f64 {
    (mean + sd * std_lower((lower - mean) / sd, rng)).max(lower)
}

/// `N(mean, sd^2)` truncated to `(-inf, upper)`.
pub fn sample_upper<R: Rng + ?Sized>(mean: f64, sd: f64, upper: f64, rng: &mut R) -> f64 {
    (mean - sd * std_lower((mean - upper) / sd, rng)).min(upper)
}

/// `N(mean, sd^2)` truncated to `(lower, upper)`.
pub fn sample_interval<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> f64 {
    let x = mean + sd * std_interval((lower - mean) / sd, (upper - mean) / sd, rng);
    x.clamp(lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_distance, mean, norm_pdf, norm_sf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // E[X | X > alpha]. Past alpha = 5 the tail mass underflows long before the
    // ratio does, so use Laplace's continued fraction for the Mills ratio.
    fn truncated_mean(alpha: f64) -> f64 {
        if alpha < 5.0 {
            return norm_pdf(alpha) / norm_sf(alpha);
        }
        let mut tail = alpha;
        for k in (1..=60).rev() {
            tail = alpha + k as f64 / tail;
        }
        tail
    }

    #[test]
    fn half_normal_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..100_000).map(|_| sample_lower(0.0, 1.0, 0.0, &mut rng)).collect();
        assert!(draws.iter().all(|&x| x >= 0.0));
        assert!((mean(&draws) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.01);
    }

    #[test]
    fn tail_regimes_match_closed_form_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &alpha in &[-2.0, 1.5, 3.9, 4.0, 6.0, 12.0, 40.0] {
            let draws: Vec<f64> = (0..50_000).map(|_| std_lower(alpha, &mut rng)).collect();
            assert!(draws.iter().all(|&x| x >= alpha));
            let m = mean(&draws);
            let expect = truncated_mean(alpha);
            assert!((m - expect).abs() < 0.01 * expect.abs().max(1.0), "alpha {alpha}: {m} vs {expect}");
        }
    }

    #[test]
    fn upper_truncation_mirrors_lower() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            assert!(sample_upper(2.0, 0.5, -1.0, &mut rng) <= -1.0);
        }
    }

    #[test]
    fn interval_draws_match_rejection_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(a, b) in &[(-1.0, 0.5), (0.3, 2.0), (-3.0, -2.5), (4.5, 4.7), (5.0, 9.0), (-0.1, 0.1)] {
            let fast: Vec<f64> = (0..20_000).map(|_| std_interval(a, b, &mut rng)).collect();
            assert!(fast.iter().all(|&x| x >= a && x <= b));
            let mut reference = Vec::new();
            // reference: uniform proposal with the normal kernel as acceptance
            let peak = if a <= 0.0 && b >= 0.0 { 0.0 } else { a.abs().min(b.abs()) };
            while reference.len() < 20_000 {
                let z = a + (b - a) * rng.random::<f64>();
                if rng.random::<f64>() <= (0.5 * (peak * peak - z * z)).exp() {
                    reference.push(z);
                }
            }
            assert!(ks_distance(&fast, &reference) < 0.02, "({a}, {b})");
        }
    }

    #[test]
    fn collapsed_scale_stays_at_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = sample_interval(1.0, 1e-8, 0.0, std::f64::consts::PI, &mut rng);
        assert!((x - 1.0).abs() < 1e-6);
        let edge = sample_interval(1e-12, 0.1, 0.0, 1.0, &mut rng);
        assert!(edge > 0.0 && edge < 1.0);
    }
}
