//! Forced test problem with the closed-form solution
//! `u(x, y, t) = ω_{1+σ}(t) sin(2πx) sin(2πy)` on the unit square.
//!
//! The exterior force that makes `u` exact for the spatially discrete model
//! is assembled from power kernels:
//!
//! ```text
//! g = ω_σ(t) φ + (ε² λ_h − 1) ω_{σ+α}(t) φ
//!   + [Γ(1+3σ)/Γ(1+σ)³] ω_{3σ+α}(t) φ³,     φ = sin(2πx) sin(2πy),
//! ```
//!
//! where `λ_h = 8 sin²(πh)/h²` is the five-point eigenvalue of `φ` on the
//! grid in use (`λ_h → 8π²` under refinement). Using the discrete eigenvalue
//! makes the sampled solution exact for the semidiscrete problem, so the
//! measured errors isolate the time discretization. The stepper consumes the
//! force through exact cell averages, `∫_a^b ω_μ = ω_{μ+1}(b) − ω_{μ+1}(a)`
//! per time factor, which also absorbs the `t^{σ−1}` singularity of the first
//! step.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::kernels::{gamma_fn, omega_unchecked};
use crate::stepper::Forcing;

/// The manufactured problem: order `α`, regularity `σ`, interface width 0.1,
/// unit domain.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    alpha: f64,
    sigma: f64,
    eps_int: f64,
    grid: GridSpec,
    phi: GridField,
}

pub const MANUFACTURED_EPS_INT: f64 = 0.1;

impl ManufacturedCase {
    pub fn new(alpha: f64, sigma: f64, grid: GridSpec) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::invalid(format!(
                "regularity parameter must lie in (0,1), got {sigma}"
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!(
                "fractional order must lie in (0,1), got {alpha}"
            )));
        }
        if (grid.len() - 1.0).abs() > 1e-14 {
            return Err(Error::invalid(
                "the manufactured case lives on the unit square",
            ));
        }
        let phi = GridField::from_fn(grid, |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
        Ok(ManufacturedCase {
            alpha,
            sigma,
            eps_int: MANUFACTURED_EPS_INT,
            grid,
            phi,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eps_int(&self) -> f64 {
        self.eps_int
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Five-point eigenvalue of the separable mode on this grid.
    pub fn lambda_h(&self) -> f64 {
        let h = self.grid.spacing();
        8.0 * (PI * h).sin().powi(2) / (h * h)
    }

    /// Exact solution sampled at the grid points.
    pub fn exact(&self, t: f64) -> GridField {
        if t <= 0.0 {
            return GridField::zeros(self.grid);
        }
        let amp = omega_unchecked(1.0 + self.sigma, t);
        self.phi.map(|p| amp * p)
    }

    pub fn forcing(&self) -> ManufacturedForcing {
        ManufacturedForcing {
            alpha: self.alpha,
            sigma: self.sigma,
            lin_coeff: self.eps_int * self.eps_int * self.lambda_h() - 1.0,
            cubic_coeff: gamma_fn(1.0 + 3.0 * self.sigma) / gamma_fn(1.0 + self.sigma).powi(3),
            phi: self.phi.clone(),
        }
    }
}

/// Exact cell averages of the manufactured force.
pub struct ManufacturedForcing {
    alpha: f64,
    sigma: f64,
    lin_coeff: f64,
    cubic_coeff: f64,
    phi: GridField,
}

impl Forcing for ManufacturedForcing {
    fn cell_average(&self, t_prev: f64, t_next: f64, grid: &GridSpec) -> GridField {
        debug_assert_eq!(*grid, *self.phi.spec());
        let tau = t_next - t_prev;
        // Cell average of omega_mu is the difference of omega_{mu+1} / tau.
        let avg = |mu: f64| -> f64 {
            let upper = omega_unchecked(mu + 1.0, t_next);
            let lower = if t_prev > 0.0 {
                omega_unchecked(mu + 1.0, t_prev)
            } else {
                0.0
            };
            (upper - lower) / tau
        };
        let c1 = avg(self.sigma) + self.lin_coeff * avg(self.sigma + self.alpha);
        let c3 = self.cubic_coeff * avg(3.0 * self.sigma + self.alpha);
        self.phi.map(|p| c1 * p + c3 * p * p * p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::omega;

    #[test]
    fn exact_solution_scaling() {
        let grid = GridSpec::new(16, 1.0).unwrap();
        let case = ManufacturedCase::new(0.6, 0.4, grid).unwrap();
        assert_eq!(case.exact(0.0).norm_inf(), 0.0);
        let u1 = case.exact(1.0);
        // omega_{1.4}(1) = 1/Gamma(1.4).
        let amp = 1.0 / gamma_fn(1.4);
        // Max of |phi| on a 16-grid: attained near (1/4, 1/4).
        assert!((u1.norm_inf() - amp).abs() < 1e-12);
    }

    #[test]
    fn lambda_h_approaches_continuum() {
        let coarse = ManufacturedCase::new(0.6, 0.4, GridSpec::new(16, 1.0).unwrap()).unwrap();
        let fine = ManufacturedCase::new(0.6, 0.4, GridSpec::new(512, 1.0).unwrap()).unwrap();
        let cont = 8.0 * PI * PI;
        assert!((fine.lambda_h() - cont).abs() < (coarse.lambda_h() - cont).abs());
        assert!((fine.lambda_h() - cont).abs() / cont < 1e-4);
        // The sampled mode is an exact eigenvector of the discrete Laplacian.
        let lap = coarse.phi.laplacian();
        for (l, p) in lap.values().iter().zip(coarse.phi.values()) {
            assert!((l + coarse.lambda_h() * p).abs() < 1e-9);
        }
    }

    #[test]
    fn cell_average_of_first_cell_matches_closed_form() {
        // For sigma = alpha the second time factor is omega_{2 sigma}; its
        // average over [0, tau] is omega_{1+2 sigma}(tau)/tau.
        let grid = GridSpec::new(8, 1.0).unwrap();
        let sigma = 0.4;
        let case = ManufacturedCase::new(sigma, sigma, grid).unwrap();
        let f = case.forcing();
        let tau = 0.25;
        let g = f.cell_average(0.0, tau, &grid);
        // Reconstruct the expected coefficients at a single point.
        let lam = case.lambda_h();
        let c1 = omega(1.0 + sigma, tau).unwrap() / tau
            + (0.01 * lam - 1.0) * omega(1.0 + 2.0 * sigma, tau).unwrap() / tau;
        let c3 = gamma_fn(1.0 + 3.0 * sigma) / gamma_fn(1.0 + sigma).powi(3)
            * omega(1.0 + 4.0 * sigma, tau).unwrap()
            / tau;
        let p = case.phi.get(1, 2);
        let expected = c1 * p + c3 * p * p * p;
        assert!((g.get(1, 2) - expected).abs() < 1e-14);
    }

    #[test]
    fn cubic_term_is_pointwise() {
        let grid = GridSpec::new(8, 1.0).unwrap();
        let case = ManufacturedCase::new(0.6, 0.4, grid).unwrap();
        let cube = case.phi.map(|p| p * p * p);
        for (c, p) in cube.values().iter().zip(case.phi.values()) {
            assert_eq!(*c, p * p * p);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let grid = GridSpec::new(8, 1.0).unwrap();
        assert!(ManufacturedCase::new(0.6, 1.2, grid).is_err());
        let wrong = GridSpec::new(8, 2.0).unwrap();
        assert!(ManufacturedCase::new(0.6, 0.4, wrong).is_err());
    }
}
