//! File formats: long-format choice CSVs, the calibrated prior file and its
//! on-disk cache, and small matrix CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::ChoiceDataset;
use crate::prior::{
    calibrate_prior, AngleBound, CalibratedPrior, CalibrationOptions, FlexibleMargin,
    Hyperparameters, MarginFit,
};

/// Reads the long-format choice CSV (`obs_id, alt_id, chosen, <alt covariates>`)
/// and the optional individual-covariate CSV (`obs_id, <covariates>`).
pub fn read_long_csv(path: &Path, indiv_path: Option<&Path>, include_intercept: bool) -> Result<ChoiceDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let expected = ["obs_id", "alt_id", "chosen"];
    if header.len() < 3 || header.iter().take(3).ne(expected.iter().copied()) {
        return Err(Error::parse(path, "header must start with obs_id, alt_id, chosen"));
    }
    let alt_names: Vec<String> = header.iter().skip(3).map(String::from).collect();
    let k_alt = alt_names.len();

    // obs_id -> alt_id -> (chosen, covariates)
    let mut rows: BTreeMap<String, BTreeMap<usize, (bool, Vec<f64>)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let at = |m: String| Error::parse(path, format!("line {}: {m}", line + 2));
        if rec.len() != header.len() {
            return Err(at(format!("{} fields, expected {}", rec.len(), header.len())));
        }
        let obs = rec[0].to_string();
        let alt: usize = rec[1].parse().map_err(|e| at(format!("alt_id: {e}")))?;
        let chosen = match &rec[2] {
            "0" => false,
            "1" => true,
            other => return Err(at(format!("chosen must be 0 or 1, got `{other}`"))),
        };
        let covs = rec
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| at(format!("covariate: {e}")))?;
        if !rows.contains_key(&obs) {
            order.push(obs.clone());
        }
        if rows.entry(obs.clone()).or_default().insert(alt, (chosen, covs)).is_some() {
            return Err(at(format!("duplicate alternative {alt} for observation {obs}")));
        }
    }
    if order.is_empty() {
        return Err(Error::parse(path, "no observations"));
    }
    let n_alt = rows.values().flat_map(|m| m.keys()).max().map_or(0, |m| m + 1);
    let mut choices = Vec::with_capacity(order.len());
    let mut alt_cov = Vec::with_capacity(order.len() * n_alt * k_alt);
    for obs in &order {
        let alts = &rows[obs];
        if alts.len() != n_alt || alts.keys().copied().ne(0..n_alt) {
            return Err(Error::parse(path, format!("observation {obs} does not list alternatives 0..{}", n_alt - 1)));
        }
        let chosen: Vec<usize> = alts.iter().filter(|(_, v)| v.0).map(|(&a, _)| a).collect();
        if chosen.len() != 1 {
            return Err(Error::parse(path, format!("observation {obs} has {} chosen alternatives", chosen.len())));
        }
        choices.push(chosen[0]);
        for (_, covs) in alts.values() {
            alt_cov.extend_from_slice(covs);
        }
    }

    let (indiv, indiv_names) = match indiv_path {
        None => (Vec::new(), Vec::new()),
        Some(ip) => {
            let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(ip)?;
            let h = r.headers()?.clone();
            if h.is_empty() || &h[0] != "obs_id" {
                return Err(Error::parse(ip, "header must start with obs_id"));
            }
            let names: Vec<String> = h.iter().skip(1).map(String::from).collect();
            let mut by_obs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (line, rec) in r.records().enumerate() {
                let rec = rec?;
                let values = rec
                    .iter()
                    .skip(1)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::parse(ip, format!("line {}: {e}", line + 2)))?;
                if values.len() != names.len() {
                    return Err(Error::parse(ip, format!("line {}: wrong field count", line + 2)));
                }
                by_obs.insert(rec[0].to_string(), values);
            }
            let mut flat = Vec::with_capacity(order.len() * names.len());
            for obs in &order {
                flat.extend(
                    by_obs
                        .get(obs)
                        .ok_or_else(|| Error::parse(ip, format!("missing observation {obs}")))?,
                );
            }
            (flat, names)
        }
    };
    let k_indiv = indiv_names.len();
    ChoiceDataset::new(n_alt, choices, alt_cov, k_alt, indiv, k_indiv, include_intercept)?
        .with_names(alt_names, indiv_names)
}

/// Writes a dataset in long format (and the individual covariates, if any).
pub fn write_long_csv(path: &Path, indiv_path: Option<&Path>, dataset: &ChoiceDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["obs_id".to_string(), "alt_id".into(), "chosen".into()];
    header.extend(dataset.alt_names().iter().cloned());
    w.write_record(&header)?;
    let ka = dataset.k_alt();
    for i in 0..dataset.len() {
        let row = dataset.alt_row(i);
        for a in 0..dataset.n_alternatives() {
            let mut rec = vec![i.to_string(), a.to_string(), ((dataset.choice(i) == a) as u8).to_string()];
            rec.extend(row[a * ka..(a + 1) * ka].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    if let (Some(ip), true) = (indiv_path, dataset.k_indiv() > 0) {
        let mut w = csv::Writer::from_path(ip)?;
        let mut header = vec!["obs_id".to_string()];
        header.extend(dataset.indiv_names().iter().cloned());
        w.write_record(&header)?;
        for i in 0..dataset.len() {
            let mut rec = vec![i.to_string()];
            rec.extend(dataset.indiv_row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(())
}

const PRIOR_MAGIC: &str = "# mnpfs-prior v1";

/// Serializes a calibrated prior. Floats are written in shortest round-trip
/// form, so reading the file back reproduces the prior exactly.
pub fn prior_to_string(prior: &CalibratedPrior) -> String {
    let t = &prior.theta;
    let mut s = String::new();
    let _ = writeln!(s, "{PRIOR_MAGIC}");
    let _ = writeln!(s, "# dim={} q={} mu_gamma={} sigma_gamma={} nu={} draws={} seed={}",
        prior.dim, t.q, t.mu_gamma, t.sigma_gamma, t.nu, prior.draws, prior.seed);
    let _ = writeln!(s, "l,mu,tau,eta,bound");
    for (l, m) in prior.margins.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{},{}", l + 1, m.mu, m.tau, m.eta, m.bound.token());
    }
    s
}

pub fn prior_from_str(text: &str, path: &Path) -> Result<CalibratedPrior> {
    let mut lines = text.lines();
    if lines.next() != Some(PRIOR_MAGIC) {
        return Err(Error::parse(path, format!("missing `{PRIOR_MAGIC}` header")));
    }
    let meta_line = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::parse(path, "missing metadata line"))?;
    let meta: BTreeMap<&str, &str> = meta_line.split_whitespace().filter_map(|kv| kv.split_once('=')).collect();
    let get = |k: &str| -> Result<&str> {
        meta.get(k).copied().ok_or_else(|| Error::parse(path, format!("metadata lacks `{k}`")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|_| Error::parse(path, format!("bad `{k}`")))
    };
    let int = |k: &str| -> Result<u64> {
        get(k)?.parse().map_err(|_| Error::parse(path, format!("bad `{k}`")))
    };
    let theta = Hyperparameters::new(num("mu_gamma")?, num("sigma_gamma")?, num("nu")?, int("q")? as usize)?;
    let dim = int("dim")? as usize;
    if lines.next() != Some("l,mu,tau,eta,bound") {
        return Err(Error::parse(path, "missing column header `l,mu,tau,eta,bound`"));
    }
    let mut margins = Vec::new();
    for (idx, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::parse(path, format!("margin line {}: `{line}`", idx + 1));
        if f.len() != 5 || f[0].parse::<usize>().ok() != Some(idx + 1) {
            return Err(bad());
        }
        let p = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let m = FlexibleMargin {
            mu: p(f[1])?,
            tau: p(f[2])?,
            eta: p(f[3])?,
            bound: AngleBound::from_token(f[4]).ok_or_else(bad)?,
        };
        if !(m.tau > 0.0) {
            return Err(bad());
        }
        margins.push(m);
    }
    let expected = crate::spherical::num_free_params(dim, theta.q)? - 1;
    if margins.len() != expected {
        return Err(Error::parse(path, format!("{} margins, expected {expected}", margins.len())));
    }
    for (l, m) in margins.iter().enumerate() {
        if m.bound != AngleBound::for_position(l, expected) {
            return Err(Error::parse(path, format!("margin {} has the wrong domain bound", l + 1)));
        }
    }
    Ok(CalibratedPrior {
        margins,
        theta,
        draws: int("draws")? as usize,
        seed: int("seed")?,
        dim,
        diagnostics: Vec::new(),
    })
}

pub fn write_prior(path: &Path, prior: &CalibratedPrior) -> Result<()> {
    std::fs::write(path, prior_to_string(prior))?;
    Ok(())
}

pub fn read_prior(path: &Path) -> Result<CalibratedPrior> {
    let text = std::fs::read_to_string(path)?;
    prior_from_str(&text, path)
}

/// Per-margin diagnostics CSV: fitted parameters, average log-likelihood, KS distance.
pub fn write_prior_diagnostics(path: &Path, prior: &CalibratedPrior) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["l", "mu", "tau", "eta", "bound", "avg_loglik", "ks_distance"])?;
    for (l, m) in prior.margins.iter().enumerate() {
        let d = prior.diagnostics.get(l).copied().unwrap_or(MarginFit { avg_loglik: f64::NAN, ks_distance: f64::NAN });
        w.write_record([
            (l + 1).to_string(),
            m.mu.to_string(),
            m.tau.to_string(),
            m.eta.to_string(),
            m.bound.token().to_string(),
            d.avg_loglik.to_string(),
            d.ks_distance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// File name under which a calibration is cached.
pub fn prior_cache_key(theta: &Hyperparameters, dim: usize, draws: usize, seed: u64) -> String {
    format!(
        "prior_J{dim}_q{}_mu{}_sg{}_nu{}_M{draws}_s{seed}.txt",
        theta.q, theta.mu_gamma, theta.sigma_gamma, theta.nu
    )
}

/// Loads a cached calibration from `cache_dir` or runs and stores it.
pub fn calibrate_cached(
    theta: &Hyperparameters,
    dim: usize,
    opts: &CalibrationOptions,
    cache_dir: Option<&Path>,
) -> Result<CalibratedPrior> {
    let Some(dir) = cache_dir else {
        return calibrate_prior(theta, dim, opts);
    };
    let path: PathBuf = dir.join(prior_cache_key(theta, dim, opts.draws, opts.seed));
    if path.exists() {
        if let Ok(prior) = read_prior(&path) {
            return Ok(prior);
        }
    }
    let prior = calibrate_prior(theta, dim, opts)?;
    std::fs::create_dir_all(dir)?;
    write_prior(&path, &prior)?;
    Ok(prior)
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((1..=m.ncols()).map(|c| format!("{prefix}{c}")))?;
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, e.to_string()))?,
        );
    }
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::parse(path, "ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), nc, |r, c| rows[r][c]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_csv_round_trip() {
        let ds = ChoiceDataset::new(3, vec![2, 0], vec![1.5, -2.0, 0.25, 3.0, 1e-9, -7.0], 1, vec![0.5, 1.0, -1.0, 2.0], 2, true)
            .unwrap()
            .with_names(vec!["price".into()], vec!["inc".into(), "age".into()])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (p, ip) = (dir.path().join("d.csv"), dir.path().join("i.csv"));
        write_long_csv(&p, Some(&ip), &ds).unwrap();
        let back = read_long_csv(&p, Some(&ip), true).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn long_csv_rejects_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let cases = [
            "obs,alt,chosen,p\n",
            "obs_id,alt_id,chosen,p\n1,0,1,0.5\n1,1,1,0.2\n",
            "obs_id,alt_id,chosen,p\n1,0,1,0.5\n1,1,0,x\n",
            "obs_id,alt_id,chosen,p\n1,0,1,0.5\n1,1,0,0.1\n2,0,1,0.3\n",
            "obs_id,alt_id,chosen,p\n1,0,2,0.5\n1,1,0,0.1\n",
        ];
        for text in cases {
            std::fs::write(&p, text).unwrap();
            assert!(matches!(read_long_csv(&p, None, true), Err(Error::Parse { .. })), "{text}");
        }
    }

    #[test]
    fn prior_file_round_trips_exactly() {
        let theta = Hyperparameters::new(1.525, 1.0, 5.0, 1).unwrap();
        let prior = calibrate_prior(&theta, 3, &CalibrationOptions { draws: 3_000, seed: 4, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("prior.txt");
        write_prior(&p, &prior).unwrap();
        let back = read_prior(&p).unwrap();
        assert_eq!(back.margins, prior.margins);
        assert_eq!((back.theta, back.dim, back.draws, back.seed), (prior.theta, prior.dim, prior.draws, prior.seed));
        assert_eq!(prior_to_string(&back), std::fs::read_to_string(&p).unwrap());
        std::fs::write(&p, prior_to_string(&prior).replace("2pi", "pi")).unwrap();
        assert!(read_prior(&p).is_err());
        std::fs::write(&p, "nonsense").unwrap();
        assert!(read_prior(&p).is_err());
    }

    #[test]
    fn cache_reuses_calibration() {
        let theta = Hyperparameters::new(0.0, 1.0, 5.0, 1).unwrap();
        let opts = CalibrationOptions { draws: 2_000, seed: 1, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let a = calibrate_cached(&theta, 3, &opts, Some(dir.path())).unwrap();
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
        let b = calibrate_cached(&theta, 3, &opts, Some(dir.path())).unwrap();
        assert_eq!(a.margins, b.margins);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1 + 0.2, -3.5, 1e-300]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_matrix_csv(&p, &m, "c").unwrap();
        assert_eq!(read_matrix_csv(&p).unwrap(), m);
    }
}
