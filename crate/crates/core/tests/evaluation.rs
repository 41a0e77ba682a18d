use mnpfs::evaluation::{
    compare_hit_rates, compare_log_scores, log_score, predictive_pmf_design, smooth_counts, PredictivePmf,
};
use mnpfs::sampler::{PosteriorDraws, Variant};
use mnpfs::spherical::{angles_from_psi, psi_from_factor, FactorCovariance};
use mnpfs::stats::norm_cdf;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn draws_with(variant: Variant, dim: usize, beta: Vec<f64>, sigma_factor: Option<FactorCovariance>, copies: usize) -> PosteriorDraws {
    let k = beta.len();
    let names = (0..k).map(|i| format!("b{i}")).collect();
    let mut d = PosteriorDraws::empty(variant, dim, sigma_factor.as_ref().map_or(0, |f| f.n_factors()), names);
    for _ in 0..copies {
        d.beta.push(beta.clone());
        if let Some(f) = &sigma_factor {
            d.kappa.push(angles_from_psi(&psi_from_factor(f).unwrap()).unwrap());
        }
    }
    d
}

#[test]
fn exchangeable_covariance_gives_uniform_pmf() {
    // differencing iid undifferenced errors yields (I + 11') / 2 after trace scaling
    let dim = 3;
    let s = 0.5f64.sqrt();
    let fc = FactorCovariance { gamma: DMatrix::from_element(dim, 1, s), d: DVector::from_element(dim, s) };
    let sigma = fc.covariance();
    assert!((sigma[(0, 0)] - 1.0).abs() < 1e-12 && (sigma[(0, 1)] - 0.5).abs() < 1e-12);
    let draws = draws_with(Variant::Fs, dim, vec![0.0], Some(fc), 400);
    assert!((draws.sigma(0) - &sigma).abs().max() < 1e-10);
    let design = vec![DMatrix::zeros(dim, 1); 3];
    let pmf = predictive_pmf_design(&design, &draws, 100, 3).unwrap();
    for row in &pmf.probs {
        for &p in row {
            assert!((p - 0.25).abs() < 0.01, "{row:?}");
        }
    }
}

#[test]
fn dominant_category_is_one_hot_before_smoothing() {
    let dim = 3;
    let draws = draws_with(Variant::Identity, dim, vec![1.0], None, 10);
    let mut x = DMatrix::zeros(dim, 1);
    x[(1, 0)] = 40.0;
    x[(0, 0)] = -40.0;
    x[(2, 0)] = -40.0;
    let pmf = predictive_pmf_design(&[x], &draws, 5, 1).unwrap();
    let s = 50.0;
    let denom = 1.0 + 4.0 / s;
    assert!((pmf.probs[0][2] - (1.0 + 1.0 / s) / denom).abs() < 1e-15);
    for c in [0, 1, 3] {
        assert!((pmf.probs[0][c] - (1.0 / s) / denom).abs() < 1e-15);
    }
    assert!((pmf.probs[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn binary_identity_matches_normal_cdf() {
    let draws = draws_with(Variant::Identity, 1, vec![0.4, -0.8], None, 200);
    let xs: Vec<f64> = vec![-1.5, 0.0, 0.7, 2.0];
    let design: Vec<DMatrix<f64>> = xs.iter().map(|&x| DMatrix::from_row_slice(1, 2, &[1.0, x])).collect();
    let pmf = predictive_pmf_design(&design, &draws, 200, 9).unwrap();
    for (i, &x) in xs.iter().enumerate() {
        let p = norm_cdf(0.4 - 0.8 * x);
        assert!((pmf.probs[i][1] - p).abs() < 0.01, "x = {x}: {} vs {p}", pmf.probs[i][1]);
    }
}

#[test]
fn expected_log_score_peaks_at_truth() {
    let truth = [0.5, 0.3, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ys: Vec<usize> = (0..200_000)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 0.5 { 0 } else if u < 0.8 { 1 } else { 2 }
        })
        .collect();
    let score = |p: [f64; 3]| log_score(&PredictivePmf { probs: vec![p.to_vec(); ys.len()], n_samples: 1 }, &ys).unwrap();
    let best = score(truth);
    for alt in [[0.4, 0.4, 0.2], [0.6, 0.2, 0.2], [1.0 / 3.0; 3], [0.5, 0.2, 0.3]] {
        assert!(score(alt) < best);
    }
}

#[test]
fn hit_rate_test_by_hand() {
    // four discordant pairs favour a, one favours b: z = 3 / sqrt(5)
    let a = [true, true, true, true, false, true];
    let b = [false, false, false, false, true, true];
    let r = compare_hit_rates(&a, &b).unwrap();
    assert!((r.statistic - 3.0 / 5f64.sqrt()).abs() < 1e-12);
    assert!((r.p_value - 2.0 * (1.0 - norm_cdf(3.0 / 5f64.sqrt()))).abs() < 1e-12);
    assert_eq!(r.mark(0.05), "");
    let same = compare_hit_rates(&a, &a).unwrap();
    assert_eq!(same.p_value, 1.0);
}

#[test]
fn log_score_test_by_hand() {
    let a = [-1.0, -0.5, -0.7, -0.2];
    let b = [-1.2, -0.9, -0.6, -0.8];
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let m = d.iter().sum::<f64>() / 4.0;
    let v = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0;
    let r = compare_log_scores(&a, &b).unwrap();
    assert!((r.statistic - m / (v / 4.0).sqrt()).abs() < 1e-12);
    let flat = compare_log_scores(&[-1.0, -2.0, -3.0], &[-1.5, -2.5, -3.5]).unwrap();
    assert!(flat.degenerate && flat.p_value == 0.0 && flat.mark(0.05) == "+");
}

proptest! {
    #[test]
    fn smoothed_pmf_is_positive_and_sums_to_one(counts in prop::collection::vec(0u64..50, 2..8)) {
        let total: u64 = counts.iter().sum();
        prop_assume!(total > 0);
        let p = smooth_counts(&counts, total as usize);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn log_score_test_is_antisymmetric(
        pairs in prop::collection::vec((-5.0f64..0.0, -5.0f64..0.0), 3..40)
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let ab = compare_log_scores(&a, &b).unwrap();
        let ba = compare_log_scores(&b, &a).unwrap();
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!(ab.statistic == -ba.statistic || (ab.statistic + ba.statistic).abs() < 1e-9);
    }
}
