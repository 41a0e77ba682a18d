//! Predictive pmfs, hit-rate and log-score, the naive baseline, paired
//! significance tests and parameter-recovery errors.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{build_design, choice_from_utilities, ChoiceDataset};
use crate::rng::{stream_rng, streams};
use crate::sampler::PosteriorDraws;
use crate::stats::{mean, two_sided_p, variance};

/// Default utility replicates per posterior draw.
pub const DEFAULT_REPLICATES: usize = 5;

const OBS_CHUNK: usize = 64;

/// Per-observation probabilities over the `J + 1` categories.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictivePmf {
    pub probs: Vec<Vec<f64>>,
    /// Simulated choices behind each vector (`M * R`), which sets the smoothing.
    pub n_samples: usize,
}

impl PredictivePmf {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable category; ties go to the lowest index.
    pub fn mode(&self, i: usize) -> usize {
        let p = &self.probs[i];
        let mut best = 0;
        for (c, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = c;
            }
        }
        best
    }
}

/// Additive smoothing with `alpha = 1 / samples`, then renormalization.
pub fn smooth_counts(counts: &[u64], samples: usize) -> Vec<f64> {
    let s = samples as f64;
    let alpha = 1.0 / s;
    let denom = 1.0 + counts.len() as f64 * alpha;
    counts.iter().map(|&c| (c as f64 / s + alpha) / denom).collect()
}

/// Simulated choice frequencies for the given design rows.
pub fn predictive_pmf_design(
    design: &[DMatrix<f64>],
    draws: &PosteriorDraws,
    replicates: usize,
    seed: u64,
) -> Result<PredictivePmf> {
    if draws.is_empty() || replicates == 0 {
        return Err(Error::InvalidArgument("need at least one draw and one replicate".into()));
    }
    let k = draws.n_coefficients();
    let dim = draws.dim;
    if let Some(x) = design.iter().find(|x| x.ncols() != k || x.nrows() != dim) {
        return Err(Error::Dimension(format!(
            "design rows are {}x{}, draws have J = {dim} and K = {k}",
            x.nrows(),
            x.ncols()
        )));
    }
    let betas: Vec<DVector<f64>> = draws.beta.iter().map(|b| DVector::from_column_slice(b)).collect();
    let factors: Vec<Option<DMatrix<f64>>> = (0..draws.len())
        .into_par_iter()
        .map(|m| match draws.variant {
            crate::sampler::Variant::Identity => Ok(None),
            crate::sampler::Variant::Fs => draws
                .sigma(m)
                .cholesky()
                .map(|c| Some(c.unpack()))
                .ok_or_else(|| Error::NotPositiveDefinite(format!("covariance at draw {m}"))),
        })
        .collect::<Result<_>>()?;
    let samples = draws.len() * replicates;
    let probs: Vec<Vec<f64>> = design
        .par_chunks(OBS_CHUNK)
        .enumerate()
        .flat_map_iter(|(chunk, xs)| {
            let mut rng = stream_rng(seed, streams::PREDICTIVE + chunk as u64);
            let mut out = Vec::with_capacity(xs.len());
            let mut eps = DVector::zeros(dim);
            let mut z = vec![0.0; dim];
            for x in xs {
                let mut counts = vec![0u64; dim + 1];
                for (beta, factor) in betas.iter().zip(&factors) {
                    let mu = x * beta;
                    for _ in 0..replicates {
                        eps.iter_mut().for_each(|e| *e = StandardNormal.sample(&mut rng));
                        match factor {
                            Some(l) => {
                                let shock = l * &eps;
                                for r in 0..dim {
                                    z[r] = mu[r] + shock[r];
                                }
                            }
                            None => {
                                for r in 0..dim {
                                    z[r] = mu[r] + eps[r];
                                }
                            }
                        }
                        counts[choice_from_utilities(&z)] += 1;
                    }
                }
                out.push(smooth_counts(&counts, samples));
            }
            out
        })
        .collect();
    Ok(PredictivePmf { probs, n_samples: samples })
}

/// Predictive pmf for every observation of `dataset`.
pub fn predictive_pmf(
    dataset: &ChoiceDataset,
    draws: &PosteriorDraws,
    replicates: usize,
    seed: u64,
) -> Result<PredictivePmf> {
    if dataset.n_coefficients() != draws.n_coefficients() || dataset.dim() != draws.dim {
        return Err(Error::Dimension(format!(
            "dataset has J = {}, K = {}; draws have J = {}, K = {}",
            dataset.dim(),
            dataset.n_coefficients(),
            draws.dim,
            draws.n_coefficients()
        )));
    }
    predictive_pmf_design(&build_design(dataset), draws, replicates, seed)
}

fn check_counts(pmf: &PredictivePmf, truths: &[usize]) -> Result<()> {
    if pmf.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} pmfs for {} observed choices",
            pmf.len(),
            truths.len()
        )));
    }
    Ok(())
}

/// Per-observation indicator that the pmf mode equals the truth.
pub fn hits(pmf: &PredictivePmf, truths: &[usize]) -> Result<Vec<bool>> {
    check_counts(pmf, truths)?;
    Ok(truths.iter().enumerate().map(|(i, &y)| pmf.mode(i) == y).collect())
}

pub fn hit_rate(pmf: &PredictivePmf, truths: &[usize]) -> Result<f64> {
    let h = hits(pmf, truths)?;
    if h.is_empty() {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    Ok(h.iter().filter(|&&b| b).count() as f64 / h.len() as f64)
}

/// `ln p(Y_i | X_i)` per observation.
pub fn log_probs(pmf: &PredictivePmf, truths: &[usize]) -> Result<Vec<f64>> {
    check_counts(pmf, truths)?;
    truths
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let p = *pmf.probs[i].get(y).ok_or(Error::CategoryOutOfRange {
                category: y,
                n_alternatives: pmf.probs[i].len(),
            })?;
            if p > 0.0 {
                Ok(p.ln())
            } else {
                Err(Error::ZeroProbability(i))
            }
        })
        .collect()
}

pub fn log_score(pmf: &PredictivePmf, truths: &[usize]) -> Result<f64> {
    let lp = log_probs(pmf, truths)?;
    if lp.is_empty() {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    Ok(mean(&lp))
}

/// In-sample category frequencies, smoothed like [`predictive_pmf`] with the
/// training sample size as the sample count, repeated for `n_obs` observations.
pub fn naive_forecast(train_choices: &[usize], n_alternatives: usize, n_obs: usize) -> Result<PredictivePmf> {
    if train_choices.is_empty() {
        return Err(Error::InvalidArgument("naive forecast needs training choices".into()));
    }
    let mut counts = vec![0u64; n_alternatives];
    for &y in train_choices {
        *counts.get_mut(y).ok_or(Error::CategoryOutOfRange { category: y, n_alternatives })? += 1;
    }
    let p = smooth_counts(&counts, train_choices.len());
    Ok(PredictivePmf { probs: vec![p; n_obs], n_samples: train_choices.len() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Differentials have zero variance but nonzero mean.
    pub degenerate: bool,
}

impl TestResult {
    /// `+` when the first model is significantly better, `-` when significantly worse.
    pub fn mark(&self, level: f64) -> &'static str {
        if self.p_value < level && self.statistic > 0.0 {
            "+"
        } else if self.p_value < level && self.statistic < 0.0 {
            "-"
        } else {
            ""
        }
    }
}

/// Paired normal test on hit indicators: `z = sum d / sqrt(sum d^2)` with
/// `d_i = a_i - b_i`. Positive `z` favours `a`.
pub fn compare_hit_rates(a: &[bool], b: &[bool]) -> Result<TestResult> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired hit vectors must be nonempty and equal length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let (mut sum, mut sq) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let d = x as i32 as f64 - y as i32 as f64;
        sum += d;
        sq += d * d;
    }
    if sq == 0.0 {
        return Ok(TestResult { statistic: 0.0, p_value: 1.0, degenerate: false });
    }
    let z = sum / sq.sqrt();
    Ok(TestResult { statistic: z, p_value: two_sided_p(z), degenerate: false })
}

/// Unconditional predictive-ability test for iid cross sections: the mean log
/// score differential over its standard error, against a standard normal.
pub fn compare_log_scores(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired log scores need at least two equal-length vectors ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let v = variance(&d);
    // constant differentials leave only rounding noise in the variance
    if v.sqrt() <= 1e-12 * m.abs() || v == 0.0 {
        return Ok(if m == 0.0 {
            TestResult { statistic: 0.0, p_value: 1.0, degenerate: false }
        } else {
            TestResult { statistic: m.signum() * f64::INFINITY, p_value: 0.0, degenerate: true }
        });
    }
    let t = m / (v / d.len() as f64).sqrt();
    Ok(TestResult { statistic: t, p_value: two_sided_p(t), degenerate: false })
}

/// `(RMSE, MAE)` of estimates against the truth.
pub fn recovery_errors(estimate: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension(format!(
            "{} estimates for {} true values",
            estimate.len(),
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let (mut sq, mut abs) = (0.0, 0.0);
    for (e, t) in estimate.iter().zip(truth) {
        sq += (e - t) * (e - t);
        abs += (e - t).abs();
    }
    Ok(((sq / n).sqrt(), abs / n))
}

/// Diagonal of a covariance matrix.
pub fn variances_of(sigma: &DMatrix<f64>) -> Vec<f64> {
    sigma.diagonal().iter().copied().collect()
}

/// Strictly-lower-triangular entries of a correlation matrix, row by row.
pub fn off_diagonal(corr: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..corr.nrows() {
        for c in 0..r {
            out.push(corr[(r, c)]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub group: &'static str,
    pub rmse: f64,
    pub mae: f64,
}

/// Recovery errors for coefficients, variances and correlations.
pub fn recovery_by_group(
    draws: &PosteriorDraws,
    beta_true: &[f64],
    sigma_true: &DMatrix<f64>,
) -> Result<Vec<GroupError>> {
    let corr_true = crate::spherical::correlation_from_covariance(sigma_true)?;
    let groups = [
        ("coefficients", draws.beta_mean(), beta_true.to_vec()),
        ("variances", variances_of(&draws.sigma_mean()), variances_of(sigma_true)),
        ("correlations", off_diagonal(&draws.correlation_mean()), off_diagonal(&corr_true)),
    ];
    groups
        .into_iter()
        .filter(|(_, _, t)| !t.is_empty())
        .map(|(group, e, t)| {
            let (rmse, mae) = recovery_errors(&e, &t)?;
            Ok(GroupError { group, rmse, mae })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub model: String,
    pub sample: String,
    pub hit_rate: f64,
    pub log_score: f64,
    /// p-value of the log-score test against the reference model, if any.
    pub p_vs_reference: Option<f64>,
}

pub fn reports_to_text(reports: &[MetricReport]) -> String {
    let mut s = format!("{:<12} {:<7} {:>9} {:>10} {:>15}\n", "model", "sample", "hit_rate", "log_score", "p_vs_reference");
    for r in reports {
        let p = r.p_vs_reference.map_or("-".to_string(), |p| format!("{p:.4}"));
        let _ = writeln!(s, "{:<12} {:<7} {:>9.4} {:>10.4} {:>15}", r.model, r.sample, r.hit_rate, r.log_score, p);
    }
    s
}

pub fn write_reports_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "sample", "hit_rate", "log_score", "p_vs_reference"])?;
    for r in reports {
        w.write_record([
            r.model.clone(),
            r.sample.clone(),
            r.hit_rate.to_string(),
            r.log_score.to_string(),
            r.p_vs_reference.map_or(String::new(), |p| p.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pmf(rows: Vec<Vec<f64>>) -> PredictivePmf {
        PredictivePmf { probs: rows, n_samples: 1 }
    }

    #[test]
    fn hit_rate_examples() {
        let p = pmf(vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.1, 0.9]]);
        assert_eq!(hit_rate(&p, &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(hit_rate(&p, &[0, 1, 1, 1]).unwrap(), 0.75);
        let uniform = pmf(vec![vec![0.25; 4]; 5]);
        assert_eq!(hit_rate(&uniform, &[0; 5]).unwrap(), 1.0);
        assert!(hit_rate(&p, &[0, 1]).is_err());
    }

    #[test]
    fn log_score_examples() {
        let uniform = pmf(vec![vec![1.0 / 50.0; 50]; 7]);
        let ls = log_score(&uniform, &[3, 0, 49, 7, 7, 1, 20]).unwrap();
        assert!((ls + 50f64.ln()).abs() < 1e-12);
        assert!(ls <= 0.0);

        let mut counts = vec![0u64; 50];
        counts[4] = 100_000;
        let sharp = smooth_counts(&counts, 100_000);
        assert!((sharp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = log_score(&pmf(vec![sharp.clone(); 3]), &[4, 4, 4]).unwrap();
        assert!(best < 0.0 && best > -1e-3);
        let mut worse = sharp;
        worse.swap(4, 5);
        let w = log_score(&pmf(vec![worse.clone(), worse.clone(), worse]), &[4, 4, 4]).unwrap();
        assert!(best > w);
        assert!(matches!(log_score(&pmf(vec![vec![1.0, 0.0]]), &[1]), Err(Error::ZeroProbability(0))));
    }

    #[test]
    fn scores_are_permutation_invariant() {
        let p = pmf(vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.5, 0.5]]);
        let q = pmf(vec![vec![0.5, 0.5], vec![0.7, 0.3], vec![0.2, 0.8]]);
        assert_eq!(hit_rate(&p, &[0, 0, 1]).unwrap(), hit_rate(&q, &[1, 0, 0]).unwrap());
        assert!((log_score(&p, &[0, 0, 1]).unwrap() - log_score(&q, &[1, 0, 0]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn smoothing_of_one_hot() {
        let p = smooth_counts(&[0, 1, 0], 1);
        assert!(p.iter().all(|&v| v > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[1] > p[0]);
    }

    #[test]
    fn naive_forecast_examples() {
        let n = naive_forecast(&[0, 0, 1, 1], 2, 3).unwrap();
        assert_eq!(n.len(), 3);
        // pre-smoothing (0.5, 0.5) stays exactly balanced
        assert!((n.probs[0][0] - 0.5).abs() < 1e-15);
        let single = naive_forecast(&[2, 2, 2], 4, 1).unwrap();
        assert_eq!(single.mode(0), 2);
        let train = [0, 1, 1, 2, 1, 0];
        let own = naive_forecast(&train, 3, train.len()).unwrap();
        assert!((hit_rate(&own, &train).unwrap() - 0.5).abs() < 1e-15);
        assert!(naive_forecast(&[], 3, 1).is_err());
    }

    #[test]
    fn hit_rate_test_examples() {
        let a = vec![true, false, true, true];
        let r = compare_hit_rates(&a, &a).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let r = compare_hit_rates(&[true; 100], &[false; 100]).unwrap();
        assert!(r.p_value < 0.001 && r.statistic > 0.0);
        assert_eq!(r.mark(0.05), "+");
        assert!(compare_hit_rates(&[], &[]).is_err());
        // direct recomputation from the paired differences
        let a = [true, true, false, true, false, true, true, false];
        let b = [false, true, true, false, false, false, true, false];
        let d: Vec<f64> = a.iter().zip(&b).map(|(&x, &y)| (x as u8 as f64) - (y as u8 as f64)).collect();
        let z = d.iter().sum::<f64>() / d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = compare_hit_rates(&a, &b).unwrap();
        assert!((r.statistic - z).abs() < 1e-15);
        assert!((r.statistic - 2.0 / 4f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn log_score_test_examples() {
        let a = vec![-1.0, -2.0, -0.5];
        let r = compare_log_scores(&a, &a).unwrap();
        assert_eq!((r.statistic, r.p_value, r.degenerate), (0.0, 1.0, false));
        let b: Vec<f64> = (0..100).map(|i| -(i as f64) / 10.0).collect();
        let c: Vec<f64> = b.iter().map(|v| v - 0.3).collect();
        let r = compare_log_scores(&b, &c).unwrap();
        assert!(r.degenerate && r.p_value == 0.0);
        // mean / standard error on a fixed fixture
        let x = [-1.2, -0.7, -2.5, -0.1, -1.9, -0.4];
        let y = [-1.0, -1.1, -2.0, -0.6, -2.2, -0.3];
        let d: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
        let n = d.len() as f64;
        let m = d.iter().sum::<f64>() / n;
        let s2 = d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
        let r = compare_log_scores(&x, &y).unwrap();
        assert!((r.statistic - m / (s2 / n).sqrt()).abs() < 1e-12);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }

    #[test]
    fn recovery_examples() {
        assert_eq!(recovery_errors(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        let (r, m) = recovery_errors(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-15 && (m - 1.0).abs() < 1e-15);
        let (r, m) = recovery_errors(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!((r - 2.5f64.sqrt()).abs() < 1e-15 && (m - 1.5).abs() < 1e-15);
        assert!(recovery_errors(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn report_formats() {
        let reports = vec![
            MetricReport { model: "mnp-fs".into(), sample: "in".into(), hit_rate: 0.5, log_score: -1.2, p_vs_reference: None },
            MetricReport { model: "naive".into(), sample: "out".into(), hit_rate: 0.2, log_score: -2.2, p_vs_reference: Some(0.01) },
        ];
        let text = reports_to_text(&reports);
        assert_eq!(text.lines().count(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_reports_csv(&path, &reports).unwrap();
        let body = std::fs::read_to_string(path).unwrap();
        assert!(body.starts_with("model,sample,hit_rate,log_score,p_vs_reference\n"));
        assert_eq!(body.lines().count(), 3);
    }
}
