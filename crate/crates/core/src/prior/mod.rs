pub mod calibrate;
pub mod equicorrelated;
pub mod flexible;
pub mod yeo_johnson;

pub use calibrate::{
    calibrate_prior, log_prior_kappa, project_to_sphere, sample_prior_angles,
    sample_unrestricted_psi, CalibratedPrior, CalibrationOptions, Hyperparameters, MarginFit,
};
pub use equicorrelated::{solve_equicorrelated_mu, EquicorrelatedSolution};
pub use flexible::{flexible_logpdf, AngleBound, FlexibleMargin};
