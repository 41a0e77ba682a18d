//! Choice observations, differenced design rows and the utility-to-choice rule.
//!
//! Categories are stored in the *current* labeling, where index 0 is the base
//! category whose utility is subtracted from all others. The original label of
//! every current index is kept so that results can be mapped back after the
//! base has been moved with [`relabel_base_category`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed choices with alternative- and individual-specific covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    n_alternatives: usize,
    choices: Vec<usize>,
    /// Row-major `[obs][alternative][covariate]`.
    alt_covariates: Vec<f64>,
    k_alt: usize,
    /// Row-major `[obs][covariate]`.
    indiv_covariates: Vec<f64>,
    k_indiv: usize,
    include_intercept: bool,
    /// `labels[c]` is the original label of current category `c`.
    labels: Vec<usize>,
    alt_names: Vec<String>,
    indiv_names: Vec<String>,
}

impl ChoiceDataset {
    /// Builds a dataset from flat covariate buffers.
    ///
    /// `alt_covariates` holds `n_obs * n_alternatives * k_alt` values ordered by
    /// observation, then alternative, then covariate; `indiv_covariates` holds
    /// `n_obs * k_indiv` values.
    pub fn new(
        n_alternatives: usize,
        choices: Vec<usize>,
        alt_covariates: Vec<f64>,
        k_alt: usize,
        indiv_covariates: Vec<f64>,
        k_indiv: usize,
        include_intercept: bool,
    ) -> Result<Self> {
        if n_alternatives < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least two alternatives, got {n_alternatives}"
            )));
        }
        let n = choices.len();
        if let Some(&bad) = choices.iter().find(|&&c| c >= n_alternatives) {
            return Err(Error::CategoryOutOfRange {
                category: bad,
                n_alternatives,
            });
        }
        if alt_covariates.len() != n * n_alternatives * k_alt {
            return Err(Error::Dimension(format!(
                "alternative covariates hold {} values, expected {} = {n} obs x {n_alternatives} alternatives x {k_alt}",
                alt_covariates.len(),
                n * n_alternatives * k_alt
            )));
        }
        if indiv_covariates.len() != n * k_indiv {
            return Err(Error::Dimension(format!(
                "individual covariates hold {} values, expected {}",
                indiv_covariates.len(),
                n * k_indiv
            )));
        }
        if !include_intercept && k_alt == 0 && k_indiv == 0 {
            return Err(Error::InvalidArgument(
                "design has no columns: no intercept and no covariates".into(),
            ));
        }
        Ok(Self {
            n_alternatives,
            choices,
            alt_covariates,
            k_alt,
            indiv_covariates,
            k_indiv,
            include_intercept,
            labels: (0..n_alternatives).collect(),
            alt_names: (0..k_alt).map(|c| format!("xa{}", c + 1)).collect(),
            indiv_names: (0..k_indiv).map(|c| format!("xd{}", c + 1)).collect(),
        })
    }

    pub fn with_names(mut self, alt_names: Vec<String>, indiv_names: Vec<String>) -> Result<Self> {
        if alt_names.len() != self.k_alt || indiv_names.len() != self.k_indiv {
            return Err(Error::Dimension("covariate name count mismatch".into()));
        }
        self.alt_names = alt_names;
        self.indiv_names = indiv_names;
        Ok(self)
    }

    /// Number of observations `N`.
    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    /// `J + 1`.
    pub fn n_alternatives(&self) -> usize {
        self.n_alternatives
    }

    /// `J`, the dimension of the differenced utilities.
    pub fn dim(&self) -> usize {
        self.n_alternatives - 1
    }

    pub fn k_alt(&self) -> usize {
        self.k_alt
    }

    pub fn k_indiv(&self) -> usize {
        self.k_indiv
    }

    pub fn include_intercept(&self) -> bool {
        self.include_intercept
    }

    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    pub fn choice(&self, i: usize) -> usize {
        self.choices[i]
    }

    /// Original label of the current base category.
    pub fn base_category(&self) -> usize {
        self.labels[0]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Current index of the category whose original label is `label`.
    pub fn index_of_label(&self, label: usize) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn alt_names(&self) -> &[String] {
        &self.alt_names
    }

    pub fn indiv_names(&self) -> &[String] {
        &self.indiv_names
    }

    pub fn alt_covariate(&self, i: usize, alt: usize, cov: usize) -> f64 {
        self.alt_covariates[(i * self.n_alternatives + alt) * self.k_alt + cov]
    }

    /// `(J+1) x k_a` slice for observation `i`, alternatives by row.
    pub fn alt_row(&self, i: usize) -> &[f64] {
        let width = self.n_alternatives * self.k_alt;
        &self.alt_covariates[i * width..(i + 1) * width]
    }

    pub fn indiv_row(&self, i: usize) -> &[f64] {
        &self.indiv_covariates[i * self.k_indiv..(i + 1) * self.k_indiv]
    }

    /// Number of coefficients `K` in the differenced design.
    pub fn n_coefficients(&self) -> usize {
        let j = self.dim();
        let intercept = if self.include_intercept { j } else { 0 };
        intercept + j * self.k_indiv + self.k_alt
    }

    /// Coefficient labels in design-column order.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_coefficients());
        let non_base = &self.labels[1..];
        if self.include_intercept {
            names.extend(non_base.iter().map(|l| format!("intercept_{l}")));
        }
        for name in &self.indiv_names {
            names.extend(non_base.iter().map(|l| format!("{name}_{l}")));
        }
        names.extend(self.alt_names.iter().cloned());
        names
    }

    /// Sub-dataset with the given observations, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let wa = self.n_alternatives * self.k_alt;
        let mut alt = Vec::with_capacity(rows.len() * wa);
        let mut indiv = Vec::with_capacity(rows.len() * self.k_indiv);
        let mut choices = Vec::with_capacity(rows.len());
        for &i in rows {
            choices.push(self.choices[i]);
            alt.extend_from_slice(self.alt_row(i));
            indiv.extend_from_slice(self.indiv_row(i));
        }
        Self {
            choices,
            alt_covariates: alt,
            indiv_covariates: indiv,
            ..self.clone_header()
        }
    }

    /// Same covariates with the choices replaced.
    pub fn with_choices(&self, choices: Vec<usize>) -> Result<Self> {
        if choices.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} choices for {} observations",
                choices.len(),
                self.len()
            )));
        }
        if let Some(&bad) = choices.iter().find(|&&c| c >= self.n_alternatives) {
            return Err(Error::CategoryOutOfRange {
                category: bad,
                n_alternatives: self.n_alternatives,
            });
        }
        Ok(Self {
            choices,
            ..self.clone()
        })
    }

    fn clone_header(&self) -> Self {
        Self {
            n_alternatives: self.n_alternatives,
            choices: Vec::new(),
            alt_covariates: Vec::new(),
            k_alt: self.k_alt,
            indiv_covariates: Vec::new(),
            k_indiv: self.k_indiv,
            include_intercept: self.include_intercept,
            labels: self.labels.clone(),
            alt_names: self.alt_names.clone(),
            indiv_names: self.indiv_names.clone(),
        }
    }

    pub(crate) fn alt_covariates_mut(&mut self) -> &mut [f64] {
        &mut self.alt_covariates
    }

    pub(crate) fn indiv_covariates_mut(&mut self) -> &mut [f64] {
        &mut self.indiv_covariates
    }
}

/// Differenced design matrix `X_i` (J x K) for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub x: DMatrix<f64>,
}

impl DesignRow {
    pub fn k(&self) -> usize {
        self.x.ncols()
    }
}

/// Builds `X_i = [I_J | x_d' (x) I_J | T x_a]` with `T = [-iota_J  I_J]`.
pub fn build_design_row(dataset: &ChoiceDataset, i: usize) -> Result<DesignRow> {
    if i >= dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "observation {i} out of range for {} observations",
            dataset.len()
        )));
    }
    let j = dataset.dim();
    let k = dataset.n_coefficients();
    let mut x = DMatrix::zeros(j, k);
    let mut col = 0;
    if dataset.include_intercept {
        for r in 0..j {
            x[(r, r)] = 1.0;
        }
        col += j;
    }
    for &xd in dataset.indiv_row(i) {
        for r in 0..j {
            x[(r, col + r)] = xd;
        }
        col += j;
    }
    for c in 0..dataset.k_alt {
        let base = dataset.alt_covariate(i, 0, c);
        for r in 0..j {
            x[(r, col)] = dataset.alt_covariate(i, r + 1, c) - base;
        }
        col += 1;
    }
    debug_assert_eq!(col, k);
    Ok(DesignRow { x })
}

/// Design rows for every observation.
pub fn build_design(dataset: &ChoiceDataset) -> Vec<DMatrix<f64>> {
    (0..dataset.len())
        .map(|i| build_design_row(dataset, i).expect("index in range").x)
        .collect()
}

/// Observed category implied by differenced utilities: 0 when every element
/// is negative, otherwise the 1-based index of the largest element. Exact
/// ties go to the lowest index.
pub fn choice_from_utilities(z: &[f64]) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (idx, &v) in z.iter().enumerate() {
        if v > best_value {
            best_value = v;
            best = idx;
        }
    }
    if z.is_empty() || best_value < 0.0 {
        0
    } else {
        best + 1
    }
}

/// Choice implied by undifferenced utilities `(z_0, ..., z_J)`.
pub fn choice_from_undifferenced(z: &[f64]) -> usize {
    let diff: Vec<f64> = z[1..].iter().map(|v| v - z[0]).collect();
    choice_from_utilities(&diff)
}

/// Moves `new_base` to index 0 by swapping it with the current base.
///
/// The swap is an involution, so applying the same relabeling twice restores
/// the original dataset.
pub fn relabel_base_category(dataset: &ChoiceDataset, new_base: usize) -> Result<ChoiceDataset> {
    let m = dataset.n_alternatives;
    if new_base >= m {
        return Err(Error::CategoryOutOfRange {
            category: new_base,
            n_alternatives: m,
        });
    }
    let mut out = dataset.clone();
    if new_base == 0 {
        return Ok(out);
    }
    let swap = |c: usize| match c {
        0 => new_base,
        c if c == new_base => 0,
        c => c,
    };
    for c in out.choices.iter_mut() {
        *c = swap(*c);
    }
    let ka = dataset.k_alt;
    for i in 0..dataset.len() {
        let start = i * m * ka;
        for cov in 0..ka {
            out.alt_covariates.swap(start + cov, start + new_base * ka + cov);
        }
    }
    out.labels.swap(0, new_base);
    Ok(out)
}

/// Location and scale used to standardize each covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub alt_means: Vec<f64>,
    pub alt_sds: Vec<f64>,
    pub indiv_means: Vec<f64>,
    pub indiv_sds: Vec<f64>,
}

impl ScalingRecord {
    pub fn identity(k_alt: usize, k_indiv: usize) -> Self {
        Self {
            alt_means: vec![0.0; k_alt],
            alt_sds: vec![1.0; k_alt],
            indiv_means: vec![0.0; k_indiv],
            indiv_sds: vec![1.0; k_indiv],
        }
    }

    /// Applies the stored transformation to another dataset (e.g. a test split).
    pub fn apply(&self, dataset: &ChoiceDataset) -> Result<ChoiceDataset> {
        if dataset.k_alt != self.alt_sds.len() || dataset.k_indiv != self.indiv_sds.len() {
            return Err(Error::Dimension(
                "scaling record does not match dataset covariates".into(),
            ));
        }
        let mut out = dataset.clone();
        let ka = dataset.k_alt;
        for (idx, v) in out.alt_covariates_mut().iter_mut().enumerate() {
            let c = idx % ka;
            *v = (*v - self.alt_means[c]) / self.alt_sds[c];
        }
        let kd = dataset.k_indiv;
        for (idx, v) in out.indiv_covariates_mut().iter_mut().enumerate() {
            let c = idx % kd;
            *v = (*v - self.indiv_means[c]) / self.indiv_sds[c];
        }
        Ok(out)
    }

    /// Maps a coefficient vector sampled on the standardized scale back to the
    /// scale of the raw covariates. `dim` is `J`.
    pub fn unstandardize(&self, beta: &[f64], dim: usize, include_intercept: bool) -> Vec<f64> {
        let mut out = beta.to_vec();
        let mut col = if include_intercept { dim } else { 0 };
        for (&m, &s) in self.indiv_means.iter().zip(&self.indiv_sds) {
            for r in 0..dim {
                let b = beta[col + r] / s;
                out[col + r] = b;
                if include_intercept {
                    out[r] -= m * b;
                }
            }
            col += dim;
        }
        for &s in &self.alt_sds {
            out[col] = beta[col] / s;
            col += 1;
        }
        out
    }
}

/// Scales every covariate column to unit sample variance, pooling alternatives
/// and observations. Intercepts are never touched. Individual covariates are
/// centered only when an intercept can absorb the shift; alternative
/// covariates are centered freely since differencing removes the constant.
pub fn standardize_covariates(dataset: &ChoiceDataset) -> Result<(ChoiceDataset, ScalingRecord)> {
    let ka = dataset.k_alt;
    let kd = dataset.k_indiv;
    let mut record = ScalingRecord::identity(ka, kd);
    for c in 0..ka {
        let column = dataset.alt_covariates.iter().skip(c).step_by(ka);
        let (mean, sd) = mean_sd(column);
        if !(sd > 0.0) {
            return Err(Error::ConstantCovariate(dataset.alt_names[c].clone()));
        }
        record.alt_means[c] = mean;
        record.alt_sds[c] = sd;
    }
    for c in 0..kd {
        let column = dataset.indiv_covariates.iter().skip(c).step_by(kd);
        let (mean, sd) = mean_sd(column);
        if !(sd > 0.0) {
            return Err(Error::ConstantCovariate(dataset.indiv_names[c].clone()));
        }
        record.indiv_means[c] = if dataset.include_intercept { mean } else { 0.0 };
        record.indiv_sds[c] = sd;
    }
    let scaled = record.apply(dataset)?;
    Ok((scaled, record))
}

fn mean_sd<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), &v| (n + 1, s + v));
    if n < 2 {
        return (sum, 0.0);
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|&v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// `X_i beta` for every observation, as a flat `N x J` buffer.
pub fn linear_predictors(design: &[DMatrix<f64>], beta: &DVector<f64>) -> Vec<f64> {
    let j = design.first().map_or(0, |x| x.nrows());
    let mut out = Vec::with_capacity(design.len() * j);
    for x in design {
        out.extend((x * beta).iter());
    }
    out
}
