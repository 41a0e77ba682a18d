use mnpfs::experiment::{
    base_sensitivity_run, least_and_most_popular, run_numerical_experiment, sample_inverse_wishart,
    simulate_dataset, sup_distance, train_test_split, write_experiment, DgpConfig, ExperimentConfig, ModelKind,
    MuGamma, PriorSpec,
};
use mnpfs::model::{standardize_covariates, ChoiceDataset};
use mnpfs::sampler::{run_chain, SamplerConfig, Variant};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.dgp.n_alternatives = 4;
    c.dgp.n = 300;
    c.sampler.total_iterations = 300;
    c.sampler.burn_in = 150;
    c.sampler.thinning = 3;
    c.prior.draws = 5_000;
    c.prior.solver_draws = 5_000;
    c.sensitivity.grid_points = 5;
    c
}

#[test]
fn inverse_wishart_mean_matches_scale() {
    // E[W^{-1}] = S / (df - p - 1)
    let s = DMatrix::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.5 });
    let df = 9.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut acc = DMatrix::zeros(3, 3);
    let n = 20_000;
    for _ in 0..n {
        acc += sample_inverse_wishart(df, &s, &mut rng).unwrap();
    }
    let expected = &s / (df - 4.0);
    assert!((acc / n as f64 - expected).abs().max() < 0.01);
    assert!(sample_inverse_wishart(1.0, &s, &mut rng).is_err());
}

#[test]
fn simulated_truth_has_unit_average_variance() {
    let config = DgpConfig::desk();
    let (ds, truth) = simulate_dataset(&config).unwrap();
    assert_eq!(ds.len(), 2000);
    assert_eq!(ds.n_alternatives(), 10);
    assert!((truth.sigma.trace() - 9.0).abs() < 1e-9);
    assert_eq!(truth.beta.len(), 10);
    assert_eq!(truth.beta[9], -0.7);
    let mut counts = [0usize; 10];
    ds.choices().iter().for_each(|&y| counts[y] += 1);
    assert!(counts.iter().all(|&c| c < 1000), "{counts:?}");
    assert!(counts.iter().filter(|&&c| c > 0).count() >= 5);
}

#[test]
fn simulation_is_seed_deterministic() {
    let a = simulate_dataset(&DgpConfig::desk()).unwrap();
    let b = simulate_dataset(&DgpConfig::desk()).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    let c = simulate_dataset(&DgpConfig { seed: 2, ..DgpConfig::desk() }).unwrap();
    assert_ne!(a.0.choices(), c.0.choices());
}

#[test]
fn split_sizes_and_disjointness() {
    let (train, test) = train_test_split(2000, 0.8, 5);
    assert_eq!((train.len(), test.len()), (1600, 400));
    let (train, test) = train_test_split(7, 0.8, 5);
    assert_eq!((train.len(), test.len()), (6, 1));
    let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..7).collect::<Vec<_>>());
    assert_eq!(train_test_split(100, 0.8, 5), train_test_split(100, 0.8, 5));
}

#[test]
fn manifest_overrides() {
    let mut c = ExperimentConfig::desk();
    c.apply_manifest(
        "# comment\ndgp.n = 100\nsampler.burn_in=10 # trailing\nprior.mu_gamma = equicorrelated\neval.variants = mnp-i,naive\n",
    )
    .unwrap();
    assert_eq!(c.dgp.n, 100);
    assert_eq!(c.sampler.burn_in, 10);
    assert_eq!(c.prior.mu_gamma, MuGamma::Equicorrelated);
    assert_eq!(c.eval.variants, vec![ModelKind::Identity, ModelKind::Naive]);
    assert!(c.apply_manifest("nope = 1").is_err());
    assert!(c.apply_manifest("dgp.n = many").is_err());
    assert!(c.apply_manifest("dgp.n").is_err());
}

#[test]
fn standardized_fit_recovers_raw_scale_coefficients() {
    // identity errors and a diffuse coefficient prior: the unstandardized
    // posterior mean should sit near the truth even with a wide covariate
    let n = 3000;
    let n_alt = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    use rand::Rng;
    let alt: Vec<f64> = (0..n * n_alt).map(|_| 5.0 + 3.0 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let beta = [0.3, -0.2, -0.25];
    let choices = (0..n)
        .map(|i| {
            let z: Vec<f64> = (0..2)
                .map(|r| {
                    beta[r] + beta[2] * (alt[i * n_alt + r + 1] - alt[i * n_alt])
                        + rng.sample::<f64, _>(rand_distr::StandardNormal)
                })
                .collect();
            mnpfs::model::choice_from_utilities(&z)
        })
        .collect();
    let ds = ChoiceDataset::new(n_alt, choices, alt, 1, vec![], 0, true).unwrap();
    let (scaled, record) = standardize_covariates(&ds).unwrap();
    let cfg = SamplerConfig {
        total_iterations: 1500,
        burn_in: 500,
        prior_variance: 100.0,
        variant: Variant::Identity,
        seed: 3,
        ..SamplerConfig::default()
    };
    let draws = run_chain(&scaled, &cfg, None).unwrap();
    let est = record.unstandardize(&draws.beta_mean(), 2, true);
    for (e, t) in est.iter().zip(&beta) {
        assert!((e - t).abs() < 0.06, "{est:?} vs {beta:?}");
    }
}

#[test]
fn tiny_experiment_end_to_end() {
    let config = tiny_config();
    let result = run_numerical_experiment(&config, None).unwrap();
    assert_eq!(result.fits.len(), 3);
    assert_eq!(result.reports.len(), 6);
    assert!(result.reports[0].p_vs_reference.is_none());
    assert!(result.reports[2].p_vs_reference.is_some());
    let fs = result.fit(ModelKind::Fs).unwrap();
    assert_eq!(fs.recovery.len(), 3);
    assert_eq!(fs.out_sample.hits.len(), 60);
    assert!(fs.out_sample.log_score() < 0.0);
    let dir = tempfile::tempdir().unwrap();
    write_experiment(dir.path(), &result, &config).unwrap();
    for f in ["dataset.csv", "truth_beta.csv", "truth_sigma.csv", "split.csv", "metrics.csv", "recovery.csv", "scatter.csv", "prior.txt", "mnp-fs/draws.json", "mnp-i/beta.csv", "naive/scores.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("model,sample,hit_rate,log_score,p_vs_reference"));
    // rerunning gives identical results
    let again = run_numerical_experiment(&config, None).unwrap();
    assert_eq!(again.reports, result.reports);
}

#[test]
fn tiny_sensitivity_run() {
    let config = tiny_config();
    let priors = vec![
        ("identity".to_string(), PriorSpec { draws: 5_000, ..PriorSpec::default() }),
    ];
    let (raw, _) = simulate_dataset(&config.dgp).unwrap();
    let (least, most) = least_and_most_popular(&raw);
    let r = base_sensitivity_run(&config, None, &priors, None).unwrap();
    assert_eq!(r.bases, vec![0, most]);
    assert_eq!(r.categories[0], least);
    // truth rows plus one curve per (base, category)
    assert_eq!(r.curves.len(), 5 * r.categories.len() * 3);
    assert!(r.curves.iter().all(|c| c.probability > 0.0 && c.probability < 1.0));
    let d = sup_distance(&r.curves, "identity", 0, most);
    assert_eq!(r.discrepancies, vec![("identity".to_string(), d)]);
    assert!(d >= 0.0 && d < 1.0);
}
