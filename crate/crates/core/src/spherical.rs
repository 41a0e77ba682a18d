//! Factor covariance `Sigma = gamma gamma' + D^2` under the trace restriction,
//! and the spherical-coordinate bijection between the stacked parameters
//! `psi = (d', vech(gamma)')'` on the sphere of radius `sqrt(J)` and the
//! `n - 1` free angles.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Number of free covariance parameters `n = J(q+1) - q(q-1)/2`.
pub fn num_free_params(dim: usize, q: usize) -> Result<usize> {
    if q == 0 || q >= dim {
        return Err(Error::InvalidArgument(format!(
            "factor count q = {q} must satisfy 1 <= q < J = {dim}"
        )));
    }
    Ok(dim * (q + 1) - q * (q - 1) / 2)
}

/// Upper bound of the domain of the angle at 0-based position `index` out of
/// `n_angles`: `pi` for all but the last, which ranges over a full turn.
pub fn angle_upper_bound(index: usize, n_angles: usize) -> f64 {
    if index + 1 == n_angles {
        TAU
    } else {
        PI
    }
}

/// `(d', vech(gamma)')'`, length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiVector(pub Vec<f64>);

impl PsiVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

/// Angles `kappa` in `[0, pi)^(n-2) x [0, 2 pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleVector(pub Vec<f64>);

impl AngleVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn upper_bound(&self, index: usize) -> f64 {
        angle_upper_bound(index, self.0.len())
    }

    pub fn check_domain(&self) -> Result<()> {
        for (index, &value) in self.0.iter().enumerate() {
            let upper = self.upper_bound(index);
            if !(0.0..upper).contains(&value) {
                return Err(Error::AngleOutOfDomain { index, value, upper });
            }
        }
        Ok(())
    }
}

/// Lower-trapezoid loadings `gamma` (J x q) and idiosyncratic scales `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorCovariance {
    pub gamma: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl FactorCovariance {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn n_factors(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mut sigma = &self.gamma * self.gamma.transpose();
        for (j, dj) in self.d.iter().enumerate() {
            sigma[(j, j)] += dj * dj;
        }
        sigma
    }
}

/// Spherical map from angles to a point on the sphere of radius `sqrt(J)`.
pub fn psi_from_angles(kappa: &AngleVector, dim: usize) -> PsiVector {
    let n = kappa.len() + 1;
    let mut psi = Vec::with_capacity(n);
    let mut sin_prod = (dim as f64).sqrt();
    for &k in kappa.as_slice() {
        let (s, c) = k.sin_cos();
        psi.push(sin_prod * c);
        sin_prod *= s;
    }
    psi.push(sin_prod);
    PsiVector(psi)
}

/// Closed-form inverse of [`psi_from_angles`]; invariant to positive scaling
/// of `psi`.
///
/// Each angle is computed as `atan2(sqrt(tail_{l+1}), psi_l)`, which equals
/// `arccos(psi_l / sqrt(tail_l))` without the need to clamp the argument. The
/// last angle takes the `2 pi - arccos` branch when `psi_n < 0`.
pub fn angles_from_psi(psi: &PsiVector) -> Result<AngleVector> {
    let v = psi.as_slice();
    let n = v.len();
    if n < 2 {
        return Err(Error::Dimension(format!("psi needs at least 2 entries, got {n}")));
    }
    // tails[l] = sum_{j >= l} psi_j^2
    let mut tails = vec![0.0; n + 1];
    for l in (0..n).rev() {
        tails[l] = tails[l + 1] + v[l] * v[l];
    }
    let mut kappa = Vec::with_capacity(n - 1);
    for l in 0..n - 2 {
        if tails[l] == 0.0 {
            return Err(Error::DegenerateDirection(l));
        }
        kappa.push(tails[l + 1].sqrt().atan2(v[l]));
    }
    if tails[n - 2] == 0.0 {
        return Err(Error::DegenerateDirection(n - 2));
    }
    let mut last = v[n - 1].atan2(v[n - 2]);
    if last < 0.0 {
        last += TAU;
    }
    if last >= TAU {
        last = 0.0;
    }
    kappa.push(last + 0.0);
    Ok(AngleVector(kappa))
}

fn vech_index(dim: usize, row: usize, col: usize) -> usize {
    let offset: usize = (0..col).map(|c| dim - c).sum();
    dim + offset + (row - col)
}

/// Unpacks `psi` into `d` (first J entries) and `gamma` column by column,
/// column `k` occupying rows `k..J`.
pub fn factor_from_psi(psi: &PsiVector, dim: usize, q: usize) -> Result<FactorCovariance> {
    let n = num_free_params(dim, q)?;
    if psi.len() != n {
        return Err(Error::Dimension(format!(
            "psi has length {}, expected n({dim}, {q}) = {n}",
            psi.len()
        )));
    }
    let v = psi.as_slice();
    let d = DVector::from_column_slice(&v[..dim]);
    let mut gamma = DMatrix::zeros(dim, q);
    let mut idx = dim;
    for col in 0..q {
        for row in col..dim {
            gamma[(row, col)] = v[idx];
            idx += 1;
        }
    }
    Ok(FactorCovariance { gamma, d })
}

/// Packs a factor covariance into `psi`; rejects nonzero upper-triangle loadings.
pub fn psi_from_factor(fc: &FactorCovariance) -> Result<PsiVector> {
    let dim = fc.dim();
    let q = fc.n_factors();
    if fc.gamma.nrows() != dim {
        return Err(Error::Dimension("gamma rows must equal length of d".into()));
    }
    let n = num_free_params(dim, q)?;
    let mut out = Vec::with_capacity(n);
    out.extend(fc.d.iter());
    for col in 0..q {
        for row in 0..col {
            let value = fc.gamma[(row, col)];
            if value != 0.0 {
                return Err(Error::NonZeroUpperTriangle { row, col, value });
            }
        }
        for row in col..dim {
            debug_assert_eq!(out.len(), vech_index(dim, row, col));
            out.push(fc.gamma[(row, col)]);
        }
    }
    Ok(PsiVector(out))
}

/// `kappa -> psi -> (gamma, d) -> Sigma`; the result has trace `J`.
pub fn covariance_from_angles(kappa: &AngleVector, dim: usize, q: usize) -> Result<DMatrix<f64>> {
    let psi = psi_from_angles(kappa, dim);
    Ok(factor_from_psi(&psi, dim, q)?.covariance())
}

pub fn correlation_from_covariance(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = sigma.nrows();
    let mut sd = Vec::with_capacity(dim);
    for j in 0..dim {
        let v = sigma[(j, j)];
        if !(v > 0.0) {
            return Err(Error::ZeroDiagonal(j));
        }
        sd.push(v.sqrt());
    }
    Ok(DMatrix::from_fn(dim, dim, |r, c| {
        if r == c {
            1.0
        } else {
            (sigma[(r, c)] / (sd[r] * sd[c])).clamp(-1.0, 1.0)
        }
    }))
}
