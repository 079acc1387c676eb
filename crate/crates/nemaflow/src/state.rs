//! Evolving solver state: physical parameters, the discrete fields carried
//! between time steps, and optional manufactured forcing.

use crate::error::{Error, Result};
use crate::sparse::SolverOpts;

/// Physical and run parameters shared by both schemes.
#[derive(Debug, Clone, Copy)]
pub struct SimParams {
    /// Fluid viscosity.
    pub nu: f64,
    /// Elastic coupling constant.
    pub lambda: f64,
    /// Director relaxation rate.
    pub gamma: f64,
    /// Penalization length scale.
    pub eps: f64,
    /// Decay time of the auxiliary scalar, set to the final time of the run.
    pub t_sav: f64,
    /// Time step size.
    pub dt: f64,
    /// Linear solver settings used by every inner solve.
    pub solver: SolverOpts,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nu", self.nu),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("epsilon", self.eps),
            ("sav decay time", self.t_sav),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Discrete fields at the two time levels the schemes carry.
///
/// Vector fields over the quadratic space are blocked `[x-part | y-part]`
/// with `2 * n_p2` entries; the pressure-like fields live on the linear
/// space with `n_p1` entries; `q` is tracked pointwise at the quadrature
/// points, `n_qp` values in triangle-major order.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub d: Vec<f64>,
    pub d_prev: Vec<f64>,
    pub u: Vec<f64>,
    pub u_prev: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub q_prev: Vec<f64>,
    pub w: Vec<f64>,
    pub w_prev: Vec<f64>,
    pub s: f64,
    pub s_prev: f64,
    /// Accumulated divergence history from the pressure correction.
    pub g: Vec<f64>,
    /// Pressure plus divergence history, the quantity whose weak gradient
    /// enters the stability functional.
    pub h: Vec<f64>,
    /// Most recent intermediate velocity (before projection).
    pub u_star: Vec<f64>,
    pub t: f64,
    pub step: usize,
}

impl FieldState {
    /// Zero state with unit auxiliary scalar at time zero.
    pub fn new(n_p2: usize, n_p1: usize, n_qp: usize) -> Self {
        FieldState {
            d: vec![0.0; 2 * n_p2],
            d_prev: vec![0.0; 2 * n_p2],
            u: vec![0.0; 2 * n_p2],
            u_prev: vec![0.0; 2 * n_p2],
            p: vec![0.0; n_p1],
            q: vec![0.0; n_qp],
            q_prev: vec![0.0; n_qp],
            w: vec![0.0; 2 * n_p2],
            w_prev: vec![0.0; 2 * n_p2],
            s: 1.0,
            s_prev: 1.0,
            g: vec![0.0; n_p1],
            h: vec![0.0; n_p1],
            u_star: vec![0.0; 2 * n_p2],
            t: 0.0,
            step: 0,
        }
    }
}

/// Manufactured right-hand sides for the director and momentum equations,
/// evaluated pointwise as functions of `(t, x, y)`.
pub struct Forcing {
    pub director: Box<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>,
    pub momentum: Box<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>,
}

impl Forcing {
    /// Evaluates one component set at the given points.
    pub fn eval_director_qp(&self, t: f64, qp_xy: &[[f64; 2]]) -> Vec<[f64; 2]> {
        qp_xy.iter().map(|&[x, y]| (self.director)(t, x, y)).collect()
    }

    pub fn eval_momentum_qp(&self, t: f64, qp_xy: &[[f64; 2]]) -> Vec<[f64; 2]> {
        qp_xy.iter().map(|&[x, y]| (self.momentum)(t, x, y)).collect()
    }
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Forcing").finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation_rejects_nonpositive() {
        let good = SimParams {
            nu: 0.01,
            lambda: 0.1,
            gamma: 1.0,
            eps: 0.05,
            t_sav: 0.5,
            dt: 1e-3,
            solver: SolverOpts::default(),
        };
        assert!(good.validate().is_ok());
        let mut bad = good;
        bad.eps = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = good;
        bad.dt = -1.0;
        assert!(bad.validate().is_err());
        let mut bad = good;
        bad.nu = f64::NAN;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fresh_state_sizes_and_initial_scalar() {
        let st = FieldState::new(25, 9, 48);
        assert_eq!(st.d.len(), 50);
        assert_eq!(st.p.len(), 9);
        assert_eq!(st.q.len(), 48);
        assert_eq!(st.s, 1.0);
        assert_eq!(st.s_prev, 1.0);
        assert_eq!(st.step, 0);
    }
}
