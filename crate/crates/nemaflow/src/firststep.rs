//! Starting step: a first-order coupled solve that produces the second time
//! level the multistep scheme needs.
//!
//! The director equation keeps the cubic penalty implicit, so the step is
//! nonlinear. Each outer sweep applies one Newton correction to the director
//! at the current velocity, then re-solves the velocity/pressure saddle
//! problem at the corrected director. The penalty stiffness `gamma / eps^2`
//! is far too large for a lagged fixed-point iteration on the cubic term;
//! the Newton correction is what keeps the sweep contractive.

use std::cell::RefCell;

use crate::assemble::zero_constrained;
use crate::error::{Error, Result};
use crate::sparse::{
    bicgstab_closure, cg_closure, norm, BandedCholesky, Csr, SolveStats, SolverOpts,
};
use crate::state::FieldState;
use crate::stepper::Stepper;

const SWEEP_MAXIT: usize = 100;
/// Tolerance of the solves nested inside the outer pressure iteration; the
/// outer tolerance is floored above this so the operator looks exact.
const INNER_TOL: f64 = 1e-12;
const INNER_MAXIT: usize = 100_000;

#[derive(Debug, Clone, Copy)]
pub struct FirstStepReport {
    pub sweeps: usize,
    /// Relative combined increment of the final sweep.
    pub increment: f64,
}

fn jacobi_inv(a: &Csr) -> Vec<f64> {
    a.diag()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

fn add_scaled(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn subtract_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

/// Solves the coupled starting system for the given nodal initial data and
/// returns the two-level state the multistep scheme starts from.
///
/// The director equation treats transport with the new velocity against the
/// initial director, the momentum equation carries the elastic stress in its
/// transport-substituted form, and the velocity is exactly (weakly)
/// divergence free because the pressure comes from a saddle solve rather
/// than a projection.
pub fn take_first_step(
    stp: &mut Stepper,
    d0: &[f64],
    u0: &[f64],
) -> Result<(FieldState, FirstStepReport)> {
    let p = *stp.params();
    let dt = p.dt;
    let eps2 = p.eps * p.eps;
    let gamma = p.gamma;
    let lam_g = p.lambda / gamma;
    let t1 = dt;

    let (d1, u1, p1, u0, report) = {
        let asm = stp.assembler();
        let n2 = asm.n2;
        let n1 = asm.n1;
        let sflags = asm.p2_boundary_flags().to_vec();
        let vflags = asm.p2_vector_boundary_flags();

        let mut u0 = u0.to_vec();
        zero_constrained(&mut u0[..n2], &sflags);
        zero_constrained(&mut u0[n2..], &sflags);
        let u0_active = norm(&u0) > 0.0;

        let m2 = asm.p2_mass();
        let k2 = asm.p2_stiffness();
        let bmat = asm.divergence_matrix();
        let d0_qp = asm.eval_p2_vec_qp(d0);
        let dgrad0 = asm.eval_p2_grad_qp(d0);

        let mass_blocked = |v: &[f64], scale: f64| -> Vec<f64> {
            let mut out = vec![0.0; 2 * n2];
            let (lo, hi) = out.split_at_mut(n2);
            m2.matvec(&v[..n2], lo);
            m2.matvec(&v[n2..], hi);
            drop((lo, hi));
            for x in out.iter_mut() {
                *x *= scale;
            }
            out
        };
        let stiff_blocked = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 2 * n2];
            let (lo, hi) = out.split_at_mut(n2);
            k2.matvec(&v[..n2], lo);
            k2.matvec(&v[n2..], hi);
            out
        };

        // Momentum operator: the substituted elastic stress contributes the
        // symmetric positive tensor (grad d0)^t (grad d0).
        let g_mom: Vec<[f64; 3]> = dgrad0
            .iter()
            .map(|g| {
                [
                    lam_g * (g[0][0] * g[0][0] + g[1][0] * g[1][0]),
                    lam_g * (g[0][0] * g[0][1] + g[1][0] * g[1][1]),
                    lam_g * (g[0][1] * g[0][1] + g[1][1] * g[1][1]),
                ]
            })
            .collect();
        let conv = if u0_active { Some(&u0[..]) } else { None };
        let mut au = asm.p2_full_operator(1.0 / dt, p.nu, None, Some(&g_mom), conv);
        asm.apply_dirichlet(&mut au, &vflags);
        let au_inv = jacobi_inv(&au);

        // Pressure preconditioner: an exact mass solve plus a pinned
        // stiffness solve, weighted like the operator's low- and
        // high-frequency limits.
        let mp = asm.p1_mass();
        let mut kp = asm.p1_stiffness();
        let mut pin = vec![false; n1];
        pin[0] = true;
        asm.apply_dirichlet(&mut kp, &pin);
        let kp_chol = BandedCholesky::factor("starting pressure stiffness", &kp)?;
        let mp_chol = BandedCholesky::factor("starting pressure mass", &mp)?;

        let fd_load = stp
            .forcing()
            .map(|f| asm.vector_load(|x, y| (f.director)(t1, x, y)));
        let fu_load = stp
            .forcing()
            .map(|f| asm.vector_load(|x, y| (f.momentum)(t1, x, y)));
        let fd_qp = stp.forcing().map(|f| f.eval_director_qp(t1, &asm.qp_xy));

        // Velocity right-hand side, without the director-increment stress.
        // Substituting the director equation into the stress turns the
        // director forcing into a momentum load as well.
        let mut f_base = mass_blocked(&u0, 1.0 / dt);
        if let Some(fu) = &fu_load {
            add_scaled(&mut f_base, fu, 1.0);
        }
        if let Some(fq) = &fd_qp {
            let comp = asm.elastic_load_qp(&dgrad0, fq);
            add_scaled(&mut f_base, &comp, lam_g);
        }

        // Director right-hand side, without the transport load.
        let mut rhs_d_base = mass_blocked(d0, 1.0 / dt);
        let pen0 = mass_blocked(d0, gamma / eps2);
        add_scaled(&mut rhs_d_base, &pen0, 1.0);
        if let Some(fd) = &fd_load {
            add_scaled(&mut rhs_d_base, fd, 1.0);
        }

        let inner_opts = SolverOpts {
            tol: INNER_TOL,
            maxit: INNER_MAXIT,
            atol: 0.0,
        };
        let outer_opts = SolverOpts {
            tol: p.solver.tol.max(10.0 * INNER_TOL),
            ..p.solver
        };
        let sweep_tol = (10.0 * p.solver.tol).max(1e-12);

        let solve_au = |b: &[f64], x0: Option<&[f64]>| -> Result<(Vec<f64>, SolveStats)> {
            let apply = |x: &[f64], y: &mut [f64]| au.matvec(x, y);
            let pre = |r: &[f64], z: &mut [f64]| {
                for i in 0..r.len() {
                    z[i] = au_inv[i] * r[i];
                }
            };
            if u0_active {
                bicgstab_closure("starting momentum solve", apply, pre, b, x0, inner_opts)
            } else {
                cg_closure("starting momentum solve", apply, pre, b, x0, inner_opts, false)
            }
        };
        let masked_bt = |x: &[f64]| -> Vec<f64> {
            let mut bt = vec![0.0; 2 * n2];
            bmat.transpose_matvec(x, &mut bt);
            zero_constrained(&mut bt[..n2], &sflags);
            zero_constrained(&mut bt[n2..], &sflags);
            bt
        };
        let cc_precond = |r: &[f64], z: &mut [f64]| {
            let mut mz = vec![0.0; n1];
            mp_chol.solve(r, &mut mz);
            let mut rp = r.to_vec();
            rp[0] = 0.0;
            let mut kz = vec![0.0; n1];
            kp_chol.solve(&rp, &mut kz);
            for i in 0..n1 {
                z[i] = p.nu * mz[i] + kz[i] / dt;
            }
        };

        let mut d_k = d0.to_vec();
        let mut u_k = u0.clone();
        let mut p_k = vec![0.0; n1];
        let mut converged = None;
        let mut last_rel = f64::INFINITY;

        for sweep in 1..=SWEEP_MAXIT {
            // One Newton correction of the director at the current velocity.
            let u_k_qp = asm.eval_p2_vec_qp(&u_k);
            let transport = asm.transport_load_qp(&u_k_qp, &dgrad0);
            let mut rhs_d = rhs_d_base.clone();
            add_scaled(&mut rhs_d, &transport, -1.0);

            let d_k_qp = asm.eval_p2_vec_qp(&d_k);
            let mag: Vec<f64> = d_k_qp.iter().map(|d| d[0] * d[0] + d[1] * d[1]).collect();
            let rho: Vec<f64> = mag.iter().map(|m| gamma / eps2 * m).collect();
            let gten: Vec<[f64; 3]> = d_k_qp
                .iter()
                .map(|d| {
                    let c = 2.0 * gamma / eps2;
                    [c * d[0] * d[0], c * d[0] * d[1], c * d[1] * d[1]]
                })
                .collect();
            let jac = asm.p2_full_operator(1.0 / dt, gamma, Some(&rho), Some(&gten), None);
            let jac_inv = jacobi_inv(&jac);

            let mut resid = rhs_d.clone();
            let md = mass_blocked(&d_k, 1.0 / dt);
            add_scaled(&mut resid, &md, -1.0);
            let kd = stiff_blocked(&d_k);
            add_scaled(&mut resid, &kd, -gamma);
            let cubic = asm.scaled_director_load_qp(&mag, &d_k_qp, gamma / eps2);
            add_scaled(&mut resid, &cubic, -1.0);
            let (delta, _) = cg_closure(
                "starting director correction",
                |x, y| jac.matvec(x, y),
                |r, z| {
                    for i in 0..r.len() {
                        z[i] = jac_inv[i] * r[i];
                    }
                },
                &resid,
                None,
                inner_opts,
                false,
            )?;
            let d_new: Vec<f64> = d_k.iter().zip(&delta).map(|(a, b)| a + b).collect();

            // Saddle solve for velocity and pressure at the new director.
            let d_new_qp = asm.eval_p2_vec_qp(&d_new);
            let v_qp: Vec<[f64; 2]> = d_new_qp
                .iter()
                .zip(&d0_qp)
                .map(|(a, b)| [(a[0] - b[0]) / dt, (a[1] - b[1]) / dt])
                .collect();
            let mut f = f_base.clone();
            let stress = asm.elastic_load_qp(&dgrad0, &v_qp);
            add_scaled(&mut f, &stress, -lam_g);
            zero_constrained(&mut f[..n2], &sflags);
            zero_constrained(&mut f[n2..], &sflags);

            let (au_f, _) = solve_au(&f, Some(&u_k))?;
            let mut rhs_p = bmat.apply(&au_f);
            for v in rhs_p.iter_mut() {
                *v = -*v;
            }
            let schur_err: RefCell<Option<Error>> = RefCell::new(None);
            let schur_apply = |x: &[f64], y: &mut [f64]| {
                if schur_err.borrow().is_some() {
                    y.fill(0.0);
                    return;
                }
                let bt = masked_bt(x);
                match solve_au(&bt, None) {
                    Ok((z, _)) => y.copy_from_slice(&bmat.apply(&z)),
                    Err(e) => {
                        *schur_err.borrow_mut() = Some(e);
                        y.fill(0.0);
                    }
                }
            };
            let result = if u0_active {
                bicgstab_closure(
                    "starting pressure solve",
                    schur_apply,
                    cc_precond,
                    &rhs_p,
                    Some(&p_k),
                    outer_opts,
                )
            } else {
                cg_closure(
                    "starting pressure solve",
                    schur_apply,
                    cc_precond,
                    &rhs_p,
                    Some(&p_k),
                    outer_opts,
                    true,
                )
            };
            if let Some(e) = schur_err.into_inner() {
                return Err(e);
            }
            let (mut p_new, _) = result?;
            subtract_mean(&mut p_new);

            let mut fp = f.clone();
            let bt = masked_bt(&p_new);
            add_scaled(&mut fp, &bt, 1.0);
            let (u_new, _) = solve_au(&fp, Some(&u_k))?;

            let inc = diff_norm(&d_new, &d_k) + diff_norm(&u_new, &u_k) + diff_norm(&p_new, &p_k);
            let scale = (norm(&d_new) + norm(&u_new) + norm(&p_new)).max(1.0);
            last_rel = inc / scale;
            d_k = d_new;
            u_k = u_new;
            p_k = p_new;
            if last_rel <= sweep_tol {
                converged = Some(sweep);
                break;
            }
        }
        let Some(sweeps) = converged else {
            return Err(Error::FirstStepFailure {
                increment: last_rel,
                iterations: SWEEP_MAXIT,
            });
        };
        (
            d_k,
            u_k,
            p_k,
            u0,
            FirstStepReport {
                sweeps,
                increment: last_rel,
            },
        )
    };

    let q0 = stp.assembler().q_from_director(d0, p.eps);
    let q1 = stp.assembler().q_from_director(&d1, p.eps);
    let w0 = stp.weak_w_projection(d0, &q0)?;
    let w1 = stp.weak_w_projection(&d1, &q1)?;

    let mut st = stp.fresh_state();
    st.d = d1;
    st.d_prev = d0.to_vec();
    st.u_star = u1.clone();
    st.u = u1;
    st.u_prev = u0;
    st.h = p1.clone();
    st.p = p1;
    st.q = q1;
    st.q_prev = q0;
    st.w = w1;
    st.w_prev = w0;
    st.s = (-dt / p.t_sav).exp();
    st.s_prev = 1.0;
    st.step = 1;
    st.t = dt;
    Ok((st, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::energy_terms;
    use crate::mesh::{build_rect_mesh, Rect};
    use crate::state::SimParams;
    use crate::stepper::Scheme;

    fn params(dt: f64, eps: f64) -> SimParams {
        SimParams {
            nu: 0.1,
            lambda: 0.5,
            gamma: 1.2,
            eps,
            t_sav: 0.5,
            dt,
            solver: SolverOpts {
                tol: 1e-12,
                maxit: 100_000,
                ..SolverOpts::default()
            },
        }
    }

    fn unit_director(x: f64, y: f64) -> [f64; 2] {
        let g = 0.4 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).cos();
        [g.cos(), g.sin()]
    }

    fn swirl(x: f64, y: f64) -> [f64; 2] {
        let pi = std::f64::consts::PI;
        [
            0.3 * (pi * x).sin().powi(2) * (2.0 * pi * y).sin(),
            -0.3 * (2.0 * pi * x).sin() * (pi * y).sin().powi(2),
        ]
    }

    #[test]
    fn uniform_rest_data_stays_put() {
        let mesh = build_rect_mesh(Rect::unit(), 6, 6).expect("mesh");
        let p = params(0.01, 0.3);
        let mut stp = Stepper::new(&mesh, p, Scheme::Pcsav, None, 6).expect("stepper");
        let d0 = stp.assembler().interpolate_p2_vec(|_, _| [1.0, 0.0]);
        let u0 = stp.assembler().interpolate_p2_vec(|_, _| [0.0, 0.0]);
        let (st, report) = take_first_step(&mut stp, &d0, &u0).expect("first step");
        assert!(report.sweeps <= 2, "took {} sweeps", report.sweeps);
        let drift = st
            .d
            .iter()
            .zip(&d0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(drift < 1e-10, "director moved {drift}");
        assert!(norm(&st.u) < 1e-10);
        assert!(norm(&st.p) < 1e-9);
        assert!(st.q.iter().all(|q| q.abs() < 1e-9));
        assert_eq!(st.step, 1);
        assert!((st.s - (-p.dt / p.t_sav).exp()).abs() < 1e-15);
    }

    /// The converged sweep must satisfy all three coupled equations at once;
    /// each residual is checked in assembled (weak) form on the free dofs.
    fn check_residuals(u0_field: impl Fn(f64, f64) -> [f64; 2] + Copy) {
        let mesh = build_rect_mesh(Rect::unit(), 8, 8).expect("mesh");
        let p = params(0.002, 0.15);
        let mut stp = Stepper::new(&mesh, p, Scheme::Pcsav, None, 6).expect("stepper");
        let d0 = stp.assembler().interpolate_p2_vec(unit_director);
        let u0 = stp.assembler().interpolate_p2_vec(u0_field);
        let (st, _) = take_first_step(&mut stp, &d0, &u0).expect("first step");

        let asm = stp.assembler();
        let n2 = asm.n2;
        let sflags = asm.p2_boundary_flags().to_vec();
        let m2 = asm.p2_mass();
        let k2 = asm.p2_stiffness();
        let bmat = asm.divergence_matrix();
        let dt = p.dt;
        let eps2 = p.eps * p.eps;

        let blocked = |mat: &Csr, v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 2 * n2];
            let (lo, hi) = out.split_at_mut(n2);
            mat.matvec(&v[..n2], lo);
            mat.matvec(&v[n2..], hi);
            out
        };

        // Director equation.
        let dgrad0 = asm.eval_p2_grad_qp(&d0);
        let u1_qp = asm.eval_p2_vec_qp(&st.u);
        let d1_qp = asm.eval_p2_vec_qp(&st.d);
        let ddiff: Vec<f64> = st.d.iter().zip(&d0).map(|(a, b)| a - b).collect();
        let mut r_d = blocked(&m2, &ddiff);
        for v in r_d.iter_mut() {
            *v /= dt;
        }
        let tr = asm.transport_load_qp(&u1_qp, &dgrad0);
        add_scaled(&mut r_d, &tr, 1.0);
        let kd = blocked(&k2, &st.d);
        add_scaled(&mut r_d, &kd, p.gamma);
        let mag: Vec<f64> = d1_qp.iter().map(|d| d[0] * d[0] + d[1] * d[1]).collect();
        let cubic = asm.scaled_director_load_qp(&mag, &d1_qp, p.gamma / eps2);
        add_scaled(&mut r_d, &cubic, 1.0);
        let lin = blocked(&m2, &d0);
        add_scaled(&mut r_d, &lin, -p.gamma / eps2);
        let d_scale = norm(&blocked(&m2, &st.d)) / dt;
        assert!(
            norm(&r_d) < 1e-7 * d_scale,
            "director residual {} vs scale {}",
            norm(&r_d),
            d_scale
        );

        // Momentum equation on the free dofs.
        let lam_g = p.lambda / p.gamma;
        let g_mom: Vec<[f64; 3]> = dgrad0
            .iter()
            .map(|g| {
                [
                    lam_g * (g[0][0] * g[0][0] + g[1][0] * g[1][0]),
                    lam_g * (g[0][0] * g[0][1] + g[1][0] * g[1][1]),
                    lam_g * (g[0][1] * g[0][1] + g[1][1] * g[1][1]),
                ]
            })
            .collect();
        let u0c = {
            let mut v = u0.clone();
            zero_constrained(&mut v[..n2], &sflags);
            zero_constrained(&mut v[n2..], &sflags);
            v
        };
        let conv = if norm(&u0c) > 0.0 { Some(&u0c[..]) } else { None };
        let a_free = asm.p2_full_operator(1.0 / dt, p.nu, None, Some(&g_mom), conv);
        let mut r_u = a_free.apply(&st.u);
        let mut btp = vec![0.0; 2 * n2];
        bmat.transpose_matvec(&st.p, &mut btp);
        add_scaled(&mut r_u, &btp, -1.0);
        let mu0 = blocked(&m2, &u0c);
        add_scaled(&mut r_u, &mu0, -1.0 / dt);
        let v_qp: Vec<[f64; 2]> = d1_qp
            .iter()
            .zip(asm.eval_p2_vec_qp(&d0).iter())
            .map(|(a, b)| [(a[0] - b[0]) / dt, (a[1] - b[1]) / dt])
            .collect();
        let stress = asm.elastic_load_qp(&dgrad0, &v_qp);
        add_scaled(&mut r_u, &stress, lam_g);
        zero_constrained(&mut r_u[..n2], &sflags);
        zero_constrained(&mut r_u[n2..], &sflags);
        let u_scale = (norm(&blocked(&m2, &st.u)) / dt).max(norm(&stress) * lam_g).max(1.0);
        assert!(
            norm(&r_u) < 1e-7 * u_scale,
            "momentum residual {} vs scale {}",
            norm(&r_u),
            u_scale
        );

        // Incompressibility and boundary values.
        assert!(norm(&bmat.apply(&st.u)) < 1e-8 * norm(&st.u).max(1.0));
        for i in 0..n2 {
            if sflags[i] {
                assert_eq!(st.u[i], 0.0);
                assert_eq!(st.u[n2 + i], 0.0);
            }
        }
        let mean: f64 = st.p.iter().sum::<f64>() / st.p.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn coupled_equations_hold_at_rest_start() {
        check_residuals(|_, _| [0.0, 0.0]);
    }

    #[test]
    fn coupled_equations_hold_with_a_moving_start() {
        check_residuals(swirl);
    }

    #[test]
    fn total_energy_does_not_grow_across_the_starting_step() {
        let mesh = build_rect_mesh(Rect::unit(), 8, 8).expect("mesh");
        let p = params(0.001, 0.1);
        let mut stp = Stepper::new(&mesh, p, Scheme::Pcsav, None, 6).expect("stepper");
        let d0 = stp.assembler().interpolate_p2_vec(unit_director);
        let u0 = stp.assembler().interpolate_p2_vec(|_, _| [0.0, 0.0]);
        let q0 = stp.assembler().q_from_director(&d0, p.eps);
        let w0 = stp.weak_w_projection(&d0, &q0).expect("w0");
        let mut level0 = stp.fresh_state();
        level0.d = d0.clone();
        level0.d_prev = d0.clone();
        level0.u = u0.clone();
        level0.u_prev = u0.clone();
        level0.q = q0.clone();
        level0.q_prev = q0;
        level0.w = w0.clone();
        level0.w_prev = w0;

        let (st, _) = take_first_step(&mut stp, &d0, &u0).expect("first step");
        let before = energy_terms(stp.assembler(), stp.projector(), &p, &level0).expect("terms");
        let after = energy_terms(stp.assembler(), stp.projector(), &p, &st).expect("terms");
        assert!(
            after.w <= before.w + 1e-12 * before.w.max(1.0),
            "energy grew: {} -> {}",
            before.w,
            after.w
        );
    }
}
