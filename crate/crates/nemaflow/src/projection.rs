//! Divergence-free projection of the intermediate velocity.
//!
//! The correction is posed as a mixed Darcy problem on the velocity space
//! with a strong impermeability constraint (`u . n = 0` built into the
//! space): given the intermediate velocity and the coefficient `c`, solve
//!
//! ```text
//! (u - u*, v) = c (phi, div v)   for all admissible v,
//! (div u, psi) = 0               for all linear psi.
//! ```
//!
//! Eliminating `u` gives a Schur system `S phi = -(1/c) B u*` with
//! `S = B Mn^{-1} B^T`, where `Mn` is the constrained vector mass matrix and
//! `B` the divergence pairing. `S` is symmetric positive semidefinite with
//! the constants as null space; the outer conjugate-gradient iteration is
//! deflated against constants and preconditioned by a direct banded Cholesky
//! solve of the pinned pressure stiffness.

use crate::assemble::{zero_constrained, Assembler};
use crate::error::{Error, Result};
use crate::sparse::{cg_closure, dot, BandedCholesky, Csr, SolveStats, SolverOpts};
use std::cell::RefCell;

/// Tolerance for the inner mass solves: tighter than any outer target so the
/// Schur operator acts as a fixed linear map on the Krylov space.
const INNER_TOL: f64 = 1e-12;
const INNER_MAXIT: usize = 50_000;

pub struct Projector {
    n2: usize,
    n1: usize,
    /// Divergence pairing `(div v, psi)`, one row per linear dof.
    div: Csr,
    /// Scalar mass matrices with identity rows at the constrained dofs of
    /// each velocity component.
    mass: [Csr; 2],
    mass_inv_diag: [Vec<f64>; 2],
    /// Normal-constraint flags per component.
    flags: [Vec<bool>; 2],
    /// Plain linear-space mass matrix.
    mp: Csr,
    mp_inv_diag: Vec<f64>,
    /// Cholesky factors of the pressure stiffness with dof 0 pinned.
    kp: BandedCholesky,
    phi_warm: Vec<f64>,
}

fn inv_diag_of(a: &Csr) -> Vec<f64> {
    a.diag().into_iter().map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 }).collect()
}

impl Projector {
    pub fn new(asm: &Assembler) -> Result<Projector> {
        let (f0, f1) = asm.p2_normal_flags();
        let base_mass = asm.p2_mass();
        let mut m0 = base_mass.clone();
        asm.apply_dirichlet(&mut m0, &f0);
        let mut m1 = base_mass;
        asm.apply_dirichlet(&mut m1, &f1);
        let mp = asm.p1_mass();
        let mut kp = asm.p1_stiffness();
        let mut pin = vec![false; asm.n1];
        pin[0] = true;
        asm.apply_dirichlet(&mut kp, &pin);
        let kp = BandedCholesky::factor("pressure stiffness", &kp)?;
        let mass_inv_diag = [inv_diag_of(&m0), inv_diag_of(&m1)];
        let mp_inv_diag = inv_diag_of(&mp);
        Ok(Projector {
            n2: asm.n2,
            n1: asm.n1,
            div: asm.divergence_matrix(),
            mass: [m0, m1],
            mass_inv_diag,
            flags: [f0, f1],
            mp,
            mp_inv_diag,
            kp,
            phi_warm: vec![0.0; asm.n1],
        })
    }

    /// Weak divergence load `(div u, psi)` for every linear test function.
    pub fn divergence(&self, u: &[f64]) -> Vec<f64> {
        self.div.apply(u)
    }

    fn masked_mass_solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        debug_assert_eq!(rhs.len(), 2 * self.n2);
        let mut out = vec![0.0; 2 * self.n2];
        // Purely relative: these solves sit inside the outer Krylov
        // operator, and an absolute floor would break its linearity on
        // small search directions.
        let opts = SolverOpts { tol: INNER_TOL, maxit: INNER_MAXIT, atol: 0.0 };
        for comp in 0..2 {
            let mut r = rhs[comp * self.n2..(comp + 1) * self.n2].to_vec();
            zero_constrained(&mut r, &self.flags[comp]);
            let m = &self.mass[comp];
            let invd = &self.mass_inv_diag[comp];
            let (z, _) = cg_closure(
                "projection mass solve",
                |x, y| m.matvec(x, y),
                |r, z| {
                    for i in 0..r.len() {
                        z[i] = invd[i] * r[i];
                    }
                },
                &r,
                None,
                opts,
                false,
            )?;
            out[comp * self.n2..(comp + 1) * self.n2].copy_from_slice(&z);
        }
        Ok(out)
    }

    /// Solves `Mn z = P B^T r`; returns `(z, P B^T r)`.
    fn weak_gradient(&self, r: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut t = vec![0.0; 2 * self.n2];
        self.div.transpose_matvec(r, &mut t);
        let (head, tail) = t.split_at_mut(self.n2);
        zero_constrained(head, &self.flags[0]);
        zero_constrained(tail, &self.flags[1]);
        let z = self.masked_mass_solve(&t)?;
        Ok((z, t))
    }

    /// Squared norm of the weak gradient of a linear-space field, the
    /// quantity paired with itself in the stability functional.
    pub fn weak_gradient_norm_sq(&self, r: &[f64]) -> Result<f64> {
        let (z, t) = self.weak_gradient(r)?;
        Ok(dot(&z, &t).max(0.0))
    }

    /// Projects the intermediate velocity: returns the corrected velocity,
    /// the pressure increment and the outer solve statistics. The corrected
    /// field satisfies `(div u, psi) = 0` for every linear `psi` up to the
    /// solver tolerance and keeps the normal-constraint dofs of `u*`.
    pub fn project(
        &mut self,
        u_star: &[f64],
        c: f64,
        opts: SolverOpts,
    ) -> Result<(Vec<f64>, Vec<f64>, SolveStats)> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "projection coefficient must be positive, got {c}"
            )));
        }
        // The Schur operator is only as accurate as the inner mass solves,
        // so a tighter outer tolerance cannot be honored.
        let opts = SolverOpts {
            tol: opts.tol.max(10.0 * INNER_TOL),
            ..opts
        };
        let mut rhs = self.div.apply(u_star);
        for v in rhs.iter_mut() {
            *v *= -1.0 / c;
        }
        let inner_err: RefCell<Option<Error>> = RefCell::new(None);
        let result = cg_closure(
            "projection Schur solve",
            |x, y| {
                if inner_err.borrow().is_some() {
                    y.fill(0.0);
                    return;
                }
                match self.weak_gradient(x) {
                    Ok((z, _)) => y.copy_from_slice(&self.div.apply(&z)),
                    Err(e) => {
                        *inner_err.borrow_mut() = Some(e);
                        y.fill(0.0);
                    }
                }
            },
            |r, z| {
                let mut rp = r.to_vec();
                rp[0] = 0.0;
                self.kp.solve(&rp, z);
            },
            &rhs,
            Some(&self.phi_warm),
            opts,
            true,
        );
        if let Some(e) = inner_err.into_inner() {
            return Err(e);
        }
        let (phi, stats) = result?;
        self.phi_warm.copy_from_slice(&phi);
        let (z, _) = self.weak_gradient(&phi)?;
        let mut u = u_star.to_vec();
        for i in 0..u.len() {
            u[i] += c * z[i];
        }
        Ok((u, phi, stats))
    }

    /// L2 projection onto the linear space from an assembled load vector.
    pub fn p1_l2_projection(&self, load: &[f64]) -> Result<Vec<f64>> {
        let opts = SolverOpts { tol: INNER_TOL, maxit: INNER_MAXIT, atol: 0.0 };
        let (x, _) = cg_closure(
            "linear-space mass solve",
            |x, y| self.mp.matvec(x, y),
            |r, z| {
                for i in 0..r.len() {
                    z[i] = self.mp_inv_diag[i] * r[i];
                }
            },
            load,
            None,
            opts,
            false,
        )?;
        Ok(x)
    }

    /// Squared L2 norm of a linear-space field.
    pub fn p1_norm_sq(&self, x: &[f64]) -> f64 {
        dot(x, &self.mp.apply(x)).max(0.0)
    }

    /// Dual norm of the weak divergence: `sup |(div u, psi)| / ||psi||` over
    /// the linear space.
    pub fn div_residual(&self, u: &[f64]) -> Result<f64> {
        let r = self.div.apply(u);
        let y = self.p1_l2_projection(&r)?;
        Ok(dot(&y, &r).max(0.0).sqrt())
    }

    pub fn n_p1(&self) -> usize {
        self.n1
    }
}
