//! Yeo-Johnson power transform, its derivative and inverse.
//!
//! The power branches are evaluated through `expm1`/`ln_1p` so that `eta`
//! near 0 and 2 joins the logarithmic limit branches smoothly. For
//! `eta` in `[0, 2]` the transform is a bijection of the real line.

/// `t_eta(v)`.
pub fn yj_transform(v: f64, eta: f64) -> f64 {
    if v >= 0.0 {
        let log1p = v.ln_1p();
        if eta == 0.0 {
            log1p
        } else {
            (eta * log1p).exp_m1() / eta
        }
    } else {
        let a = 2.0 - eta;
        let log1m = (-v).ln_1p();
        if a == 0.0 {
            -log1m
        } else {
            -(a * log1m).exp_m1() / a
        }
    }
}

/// `t'_eta(v)`.
pub fn yj_derivative(v: f64, eta: f64) -> f64 {
    yj_log_derivative(v, eta).exp()
}

/// `ln t'_eta(v)`.
pub fn yj_log_derivative(v: f64, eta: f64) -> f64 {
    if v >= 0.0 {
        (eta - 1.0) * v.ln_1p()
    } else {
        (1.0 - eta) * (-v).ln_1p()
    }
}

/// Inverse of [`yj_transform`] for `eta` in `[0, 2]`.
pub fn yj_inverse(x: f64, eta: f64) -> f64 {
    if x >= 0.0 {
        if eta == 0.0 {
            x.exp_m1()
        } else {
            ((eta * x).ln_1p() / eta).exp_m1()
        }
    } else {
        let a = 2.0 - eta;
        if a == 0.0 {
            -(-x).exp_m1()
        } else {
            -((-a * x).ln_1p() / a).exp_m1()
        }
    }
}
