//! Retained draws, summaries, and their on-disk form: `beta.csv`,
//! `kappa.csv` (one row per draw, labelled header) and a `draws.json` sidecar.

use std::fs::{File, OpenOptions};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{SamplerConfig, Variant};
use crate::error::{Error, Result};
use crate::spherical::{covariance_from_angles, AngleVector};

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub variant: Variant,
    pub dim: usize,
    /// Number of factors; 0 for the identity variant.
    pub q: usize,
    pub coefficient_names: Vec<String>,
    pub beta: Vec<Vec<f64>>,
    pub kappa: Vec<AngleVector>,
    /// Post-burn-in acceptance rate per angle.
    pub acceptance: Vec<f64>,
    pub final_log_scales: Vec<f64>,
    pub seconds_per_iteration: f64,
}

impl PosteriorDraws {
    pub fn empty(variant: Variant, dim: usize, q: usize, coefficient_names: Vec<String>) -> Self {
        Self {
            variant,
            dim,
            q,
            coefficient_names,
            beta: Vec::new(),
            kappa: Vec::new(),
            acceptance: Vec::new(),
            final_log_scales: Vec::new(),
            seconds_per_iteration: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn n_coefficients(&self) -> usize {
        self.coefficient_names.len()
    }

    /// `Sigma` at draw `m`; the identity for the identity variant.
    pub fn sigma(&self, m: usize) -> DMatrix<f64> {
        match self.variant {
            Variant::Identity => DMatrix::identity(self.dim, self.dim),
            Variant::Fs => covariance_from_angles(&self.kappa[m], self.dim, self.q)
                .expect("stored angles have the calibrated length"),
        }
    }

    pub fn beta_mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_coefficients()];
        for b in &self.beta {
            for (a, v) in acc.iter_mut().zip(b) {
                *a += v;
            }
        }
        acc.iter().map(|a| a / self.len() as f64).collect()
    }

    pub fn sigma_mean(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for m in 0..self.len() {
            acc += self.sigma(m);
        }
        acc / self.len() as f64
    }

    /// Posterior mean of the correlation matrix.
    pub fn correlation_mean(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for m in 0..self.len() {
            acc += crate::spherical::correlation_from_covariance(&self.sigma(m))
                .expect("positive diagonal");
        }
        acc / self.len() as f64
    }

    /// Mean and standard deviation of the post-burn-in acceptance rates.
    pub fn acceptance_summary(&self) -> (f64, f64) {
        if self.acceptance.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let m = crate::stats::mean(&self.acceptance);
        let sd = if self.acceptance.len() > 1 {
            crate::stats::variance(&self.acceptance).sqrt()
        } else {
            0.0
        };
        (m, sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsMetadata {
    pub variant: Variant,
    pub dim: usize,
    pub q: usize,
    pub coefficient_names: Vec<String>,
    pub n_draws: usize,
    pub acceptance: Vec<f64>,
    pub final_log_scales: Vec<f64>,
    pub seconds_per_iteration: f64,
    pub config: Option<SamplerConfig>,
}

fn kappa_header(n: usize) -> Vec<String> {
    (1..=n).map(|l| format!("kappa_{l}")).collect()
}

fn n_angles(draws: &PosteriorDraws) -> usize {
    match draws.variant {
        Variant::Identity => 0,
        Variant::Fs => crate::spherical::num_free_params(draws.dim, draws.q).map_or(0, |n| n - 1),
    }
}

fn write_rows<'a>(
    w: &mut csv::Writer<File>,
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<()> {
    for row in rows {
        if row.is_empty() {
            continue;
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes draws and the metadata sidecar into `dir`.
pub fn write_draws(dir: &Path, draws: &PosteriorDraws, config: Option<&SamplerConfig>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut beta = csv::Writer::from_path(dir.join("beta.csv"))?;
    beta.write_record(&draws.coefficient_names)?;
    write_rows(&mut beta, draws.beta.iter().map(|b| b.as_slice()))?;
    let mut kappa = csv::Writer::from_path(dir.join("kappa.csv"))?;
    kappa.write_record(kappa_header(n_angles(draws)))?;
    write_rows(&mut kappa, draws.kappa.iter().map(|k| k.as_slice()))?;
    let meta = DrawsMetadata {
        variant: draws.variant,
        dim: draws.dim,
        q: draws.q,
        coefficient_names: draws.coefficient_names.clone(),
        n_draws: draws.len(),
        acceptance: draws.acceptance.clone(),
        final_log_scales: draws.final_log_scales.clone(),
        seconds_per_iteration: draws.seconds_per_iteration,
        config: config.cloned(),
    };
    serde_json::to_writer_pretty(File::create(dir.join("draws.json"))?, &meta)?;
    Ok(())
}

fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::parse(path, format!("row {} has {} fields, expected {width}", line + 1, rec.len())));
        }
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 1)))?;
        out.push(row);
    }
    Ok(out)
}

/// Reads draws written by [`write_draws`]; returns them with the echoed config.
pub fn read_draws(dir: &Path) -> Result<(PosteriorDraws, Option<SamplerConfig>)> {
    let meta: DrawsMetadata = serde_json::from_reader(File::open(dir.join("draws.json"))?)?;
    let mut draws = PosteriorDraws::empty(meta.variant, meta.dim, meta.q, meta.coefficient_names);
    draws.beta = read_rows(&dir.join("beta.csv"), draws.n_coefficients())?;
    let width = n_angles(&draws);
    draws.kappa = read_rows(&dir.join("kappa.csv"), width)?
        .into_iter()
        .map(AngleVector)
        .collect();
    if draws.kappa.is_empty() && width == 0 {
        draws.kappa = vec![AngleVector(Vec::new()); draws.beta.len()];
    }
    if draws.beta.len() != meta.n_draws || draws.kappa.len() != meta.n_draws {
        return Err(Error::parse(dir, "draw counts disagree with draws.json"));
    }
    draws.acceptance = meta.acceptance;
    draws.final_log_scales = meta.final_log_scales;
    draws.seconds_per_iteration = meta.seconds_per_iteration;
    Ok((draws, meta.config))
}

/// Appends newly retained draws to `beta.csv` / `kappa.csv` while a chain runs.
pub struct DrawStreamer {
    beta: csv::Writer<File>,
    kappa: csv::Writer<File>,
    written: usize,
}

impl DrawStreamer {
    pub fn create(dir: &Path, draws: &PosteriorDraws) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<csv::Writer<File>> {
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(dir.join(name))?;
            Ok(csv::Writer::from_writer(f))
        };
        let mut beta = open("beta.csv")?;
        beta.write_record(&draws.coefficient_names)?;
        let mut kappa = open("kappa.csv")?;
        kappa.write_record(kappa_header(n_angles(draws)))?;
        Ok(Self { beta, kappa, written: 0 })
    }

    pub fn append(&mut self, draws: &PosteriorDraws) -> Result<()> {
        let from = self.written;
        write_rows(&mut self.beta, draws.beta[from..].iter().map(|b| b.as_slice()))?;
        write_rows(&mut self.kappa, draws.kappa[from..].iter().map(|k| k.as_slice()))?;
        self.written = draws.len();
        Ok(())
    }
}
