//! Second-order time stepper for the coupled director/flow system.
//!
//! Each step solves two linear director systems (a history part and a
//! transport part), two linear momentum systems, one scalar equation for the
//! auxiliary coefficient, and one pressure projection. The two halves of each
//! field are recombined with the scalar coefficient before the projection, so
//! every linear system has a right-hand side known at the start of the step.

use crate::assemble::{zero_constrained, Assembler};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::projection::Projector;
use crate::sparse::{bicgstab_closure, cg_closure, Csr, SolveStats, SolverOpts};
use crate::state::{FieldState, Forcing, SimParams};

/// Which decoupled splitting drives the momentum equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Implicit skew-symmetric convection; the momentum operator changes
    /// every step.
    Pcsav,
    /// Explicit convection moved into the scalar-coefficient correction; the
    /// momentum operator is constant and symmetric.
    PcsavEct,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Pcsav => "pcsav",
            Scheme::PcsavEct => "pcsav-ect",
        }
    }

    pub fn from_name(s: &str) -> Result<Scheme> {
        match s {
            "pcsav" => Ok(Scheme::Pcsav),
            "pcsav-ect" | "ect" => Ok(Scheme::PcsavEct),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme '{other}', expected 'pcsav' or 'pcsav-ect'"
            ))),
        }
    }
}

/// Per-step scalars the driver logs alongside the energy record.
#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    /// Ratio applied to the transport halves of the fields.
    pub k: f64,
    /// Denominator of the scalar equation; positive by construction.
    pub a: f64,
    /// Numerator of the scalar equation.
    pub b: f64,
    /// Dissipation functional of the step, the amount the stability
    /// functional is allowed to drop.
    pub diss: f64,
    pub projection: SolveStats,
}

/// Extrapolated fields and their quadrature caches shared by every stage of
/// a step.
struct Extrapolants {
    u: Vec<f64>,
    bdf_d: Vec<f64>,
    bdf_u: Vec<f64>,
    u_qp: Vec<[f64; 2]>,
    d_qp: Vec<[f64; 2]>,
    dgrad_qp: Vec<[[f64; 2]; 2]>,
    w_qp: Vec<[f64; 2]>,
    bdf_d_qp: Vec<[f64; 2]>,
    q_bdf_qp: Vec<f64>,
    /// Velocity gradient, needed only when convection is explicit.
    ugrad_qp: Option<Vec<[[f64; 2]; 2]>>,
}

/// Iteration seeds kept across steps; each solve starts from the previous
/// step's solution of the same subproblem.
struct WarmStarts {
    d_hat: Vec<f64>,
    d_breve: Vec<f64>,
    u_hat: Vec<f64>,
    u_breve: Vec<f64>,
    pi2: Vec<f64>,
    fd: Vec<f64>,
}

impl WarmStarts {
    fn new(n2: usize) -> Self {
        WarmStarts {
            d_hat: vec![0.0; 2 * n2],
            d_breve: vec![0.0; 2 * n2],
            u_hat: vec![0.0; 2 * n2],
            u_breve: vec![0.0; 2 * n2],
            pi2: vec![0.0; 2 * n2],
            fd: vec![0.0; 2 * n2],
        }
    }
}

pub struct Stepper {
    asm: Assembler,
    proj: Projector,
    params: SimParams,
    scheme: Scheme,
    forcing: Option<Forcing>,
    m2: Csr,
    m2_inv: Vec<f64>,
    k2: Csr,
    bflags: Vec<bool>,
    /// Constant momentum operator with boundary rows eliminated, plus its
    /// inverse diagonal; built once because it never changes.
    ect_op: Option<(Csr, Vec<f64>)>,
    warm: WarmStarts,
}

fn jacobi_inv(a: &Csr) -> Vec<f64> {
    a.diag()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

/// Solves one linear system with a Jacobi preconditioner, seeding from and
/// refreshing the warm-start slot.
fn solve_system(
    context: &str,
    op: &Csr,
    inv_diag: &[f64],
    spd: bool,
    b: &[f64],
    warm: &mut [f64],
    opts: SolverOpts,
) -> Result<(Vec<f64>, SolveStats)> {
    let apply = |x: &[f64], y: &mut [f64]| op.matvec(x, y);
    let precond = |r: &[f64], z: &mut [f64]| {
        for i in 0..r.len() {
            z[i] = inv_diag[i] * r[i];
        }
    };
    let (x, stats) = if spd {
        cg_closure(context, apply, precond, b, Some(warm), opts, false)?
    } else {
        bicgstab_closure(context, apply, precond, b, Some(warm), opts)?
    };
    warm.copy_from_slice(&x);
    Ok((x, stats))
}

/// Solves the same scalar operator against both components of a blocked
/// right-hand side.
fn solve_per_component(
    context: &str,
    op: &Csr,
    inv_diag: &[f64],
    spd: bool,
    b: &[f64],
    warm: &mut [f64],
    opts: SolverOpts,
) -> Result<Vec<f64>> {
    let n = b.len() / 2;
    let mut out = vec![0.0; b.len()];
    for c in 0..2 {
        let (x, _) = solve_system(
            context,
            op,
            inv_diag,
            spd,
            &b[c * n..][..n],
            &mut warm[c * n..][..n],
            opts,
        )?;
        out[c * n..][..n].copy_from_slice(&x);
    }
    Ok(out)
}

fn add_scaled(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

impl Stepper {
    pub fn new(
        mesh: &Mesh,
        params: SimParams,
        scheme: Scheme,
        forcing: Option<Forcing>,
        quad_degree: usize,
    ) -> Result<Stepper> {
        params.validate()?;
        let asm = Assembler::new(mesh, quad_degree)?;
        let proj = Projector::new(&asm)?;
        let m2 = asm.p2_mass();
        let m2_inv = jacobi_inv(&m2);
        let k2 = asm.p2_stiffness();
        let bflags = asm.p2_boundary_flags().to_vec();
        let ect_op = if scheme == Scheme::PcsavEct {
            let mut op = asm.p2_scalar_operator(1.5 / params.dt, params.nu, None, false);
            asm.apply_dirichlet(&mut op, &bflags);
            let inv = jacobi_inv(&op);
            Some((op, inv))
        } else {
            None
        };
        let warm = WarmStarts::new(asm.n2);
        Ok(Stepper {
            asm,
            proj,
            params,
            scheme,
            forcing,
            m2,
            m2_inv,
            k2,
            bflags,
            ect_op,
            warm,
        })
    }

    pub fn assembler(&self) -> &Assembler {
        &self.asm
    }

    pub fn projector(&self) -> &Projector {
        &self.proj
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn forcing(&self) -> Option<&Forcing> {
        self.forcing.as_ref()
    }

    /// Zero state sized for this discretization.
    pub fn fresh_state(&self) -> FieldState {
        FieldState::new(self.asm.n2, self.asm.n1, self.asm.ntri * self.asm.nq)
    }

    /// State holding the initial data at both history levels, for energy
    /// evaluation before any step is taken.
    pub fn initial_state(&mut self, d0: &[f64], u0: &[f64]) -> Result<FieldState> {
        let q0 = self.asm.q_from_director(d0, self.params.eps);
        let w0 = self.weak_w_projection(d0, &q0)?;
        let mut st = self.fresh_state();
        st.d = d0.to_vec();
        st.d_prev = d0.to_vec();
        st.u = u0.to_vec();
        st.u_prev = u0.to_vec();
        st.u_star = u0.to_vec();
        st.q = q0.clone();
        st.q_prev = q0;
        st.w = w0.clone();
        st.w_prev = w0;
        Ok(st)
    }

    /// Weak Riesz representative of the molecular field: `(w, psi) =
    /// (grad d, grad psi) + (q d, psi)` for the given director and stored
    /// penalty variable. Used to seed the history levels.
    pub fn weak_w_projection(&mut self, d: &[f64], q_qp: &[f64]) -> Result<Vec<f64>> {
        let n = self.asm.n2;
        let mut rhs = vec![0.0; 2 * n];
        {
            let (lo, hi) = rhs.split_at_mut(n);
            self.k2.matvec(&d[..n], lo);
            self.k2.matvec(&d[n..], hi);
        }
        let d_qp = self.asm.eval_p2_vec_qp(d);
        let load = self.asm.scaled_director_load_qp(q_qp, &d_qp, 1.0);
        add_scaled(&mut rhs, &load, 1.0);
        let mut warm = vec![0.0; 2 * n];
        solve_per_component(
            "molecular field projection",
            &self.m2,
            &self.m2_inv,
            true,
            &rhs,
            &mut warm,
            self.params.solver,
        )
    }

    fn mass_blocked(&self, v: &[f64], scale: f64) -> Vec<f64> {
        let n = self.asm.n2;
        let mut out = vec![0.0; 2 * n];
        {
            let (lo, hi) = out.split_at_mut(n);
            self.m2.matvec(&v[..n], lo);
            self.m2.matvec(&v[n..], hi);
        }
        for x in out.iter_mut() {
            *x *= scale;
        }
        out
    }

    fn extrapolants(&self, st: &FieldState) -> Extrapolants {
        let two_minus = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| 2.0 * x - y).collect()
        };
        let bdf = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| 4.0 * x - y).collect()
        };
        let u = two_minus(&st.u, &st.u_prev);
        let d = two_minus(&st.d, &st.d_prev);
        let w = two_minus(&st.w, &st.w_prev);
        let bdf_d = bdf(&st.d, &st.d_prev);
        let bdf_u = bdf(&st.u, &st.u_prev);
        let u_qp = self.asm.eval_p2_vec_qp(&u);
        let d_qp = self.asm.eval_p2_vec_qp(&d);
        let dgrad_qp = self.asm.eval_p2_grad_qp(&d);
        let w_qp = self.asm.eval_p2_vec_qp(&w);
        let bdf_d_qp = self.asm.eval_p2_vec_qp(&bdf_d);
        let q_bdf_qp: Vec<f64> = st
            .q
            .iter()
            .zip(&st.q_prev)
            .map(|(a, b)| 4.0 * a - b)
            .collect();
        let ugrad_qp = match self.scheme {
            Scheme::PcsavEct => Some(self.asm.eval_p2_grad_qp(&u)),
            Scheme::Pcsav => None,
        };
        Extrapolants {
            u,
            bdf_d,
            bdf_u,
            u_qp,
            d_qp,
            dgrad_qp,
            w_qp,
            bdf_d_qp,
            q_bdf_qp,
            ugrad_qp,
        }
    }

    fn director_forcing_load(&self, t: f64) -> Option<Vec<f64>> {
        self.forcing
            .as_ref()
            .map(|f| self.asm.vector_load(|x, y| (f.director)(t, x, y)))
    }

    /// Solves the two director subproblems. Returns the history half, the
    /// transport half, the transport load (reused for the molecular field)
    /// and the forcing load if one is active.
    fn director_parts(
        &mut self,
        ex: &Extrapolants,
        t_next: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
        let p = &self.params;
        let dt = p.dt;
        let gamma = p.gamma;
        let eps2 = p.eps * p.eps;
        let pen = 2.0 * gamma / eps2;
        let g_qp: Vec<[f64; 3]> = ex
            .d_qp
            .iter()
            .map(|d| [pen * d[0] * d[0], pen * d[0] * d[1], pen * d[1] * d[1]])
            .collect();
        let op = self
            .asm
            .p2_full_operator(1.5 / dt, gamma, None, Some(&g_qp), None);
        let inv = jacobi_inv(&op);

        let mut rhs_hat = self.mass_blocked(&ex.bdf_d, 0.5 / dt);
        let qd = self
            .asm
            .scaled_director_load_qp(&ex.q_bdf_qp, &ex.d_qp, -gamma / 3.0);
        add_scaled(&mut rhs_hat, &qd, 1.0);
        let proj_load =
            self.asm
                .projected_director_load_qp(&ex.d_qp, &ex.bdf_d_qp, pen / 3.0);
        add_scaled(&mut rhs_hat, &proj_load, 1.0);
        let fd_load = self.director_forcing_load(t_next);
        if let Some(fd) = &fd_load {
            add_scaled(&mut rhs_hat, fd, 1.0);
        }
        let (d_hat, _) = solve_system(
            "director history solve",
            &op,
            &inv,
            true,
            &rhs_hat,
            &mut self.warm.d_hat,
            p.solver,
        )?;

        let transport = self.asm.transport_load_qp(&ex.u_qp, &ex.dgrad_qp);
        let mut rhs_breve = vec![0.0; transport.len()];
        add_scaled(&mut rhs_breve, &transport, -1.0);
        let (d_breve, _) = solve_system(
            "director transport solve",
            &op,
            &inv,
            true,
            &rhs_breve,
            &mut self.warm.d_breve,
            p.solver,
        )?;
        Ok((d_hat, d_breve, transport, fd_load))
    }

    /// Recovers the two halves of the molecular field from the director
    /// halves; the history half absorbs the forcing through a mass solve so
    /// the discrete identity `(w, psi) = (grad d, grad psi) + (q d, psi) -
    /// (F_d, psi) / gamma` holds exactly.
    fn w_parts(
        &mut self,
        ex: &Extrapolants,
        d_hat: &[f64],
        d_breve: &[f64],
        transport: &[f64],
        fd_load: Option<&Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = &self.params;
        let dt = p.dt;
        let gamma = p.gamma;
        let mut w_hat: Vec<f64> = d_hat
            .iter()
            .zip(&ex.bdf_d)
            .map(|(dh, db)| -(3.0 * dh - db) / (2.0 * dt * gamma))
            .collect();
        if let Some(fd) = fd_load {
            let pi2_fd = solve_per_component(
                "forcing projection",
                &self.m2,
                &self.m2_inv,
                true,
                fd,
                &mut self.warm.fd,
                p.solver,
            )?;
            add_scaled(&mut w_hat, &pi2_fd, 1.0 / gamma);
        }
        let pi2_tr = solve_per_component(
            "transport projection",
            &self.m2,
            &self.m2_inv,
            true,
            transport,
            &mut self.warm.pi2,
            p.solver,
        )?;
        let w_breve: Vec<f64> = d_breve
            .iter()
            .zip(&pi2_tr)
            .map(|(db, tr)| -(1.5 * db / dt + tr) / gamma)
            .collect();
        Ok((w_hat, w_breve))
    }

    fn momentum_hat_rhs(&self, st: &FieldState, ex: &Extrapolants, t_next: f64) -> Vec<f64> {
        let n = self.asm.n2;
        let mut rhs = self.mass_blocked(&ex.bdf_u, 0.5 / self.params.dt);
        let gp = self.asm.pressure_gradient_load(&st.p);
        add_scaled(&mut rhs, &gp, -1.0);
        if let Some(f) = &self.forcing {
            let fu = self.asm.vector_load(|x, y| (f.momentum)(t_next, x, y));
            add_scaled(&mut rhs, &fu, 1.0);
        }
        zero_constrained(&mut rhs[..n], &self.bflags);
        zero_constrained(&mut rhs[n..], &self.bflags);
        rhs
    }

    /// Solves the two intermediate-velocity subproblems.
    fn velocity_parts(
        &mut self,
        st: &FieldState,
        ex: &Extrapolants,
        t_next: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.asm.n2;
        let p = self.params;
        let rhs_hat = self.momentum_hat_rhs(st, ex, t_next);
        let elastic = self.asm.elastic_load_qp(&ex.dgrad_qp, &ex.w_qp);
        let mut rhs_breve = vec![0.0; 2 * n];
        add_scaled(&mut rhs_breve, &elastic, p.lambda);
        match self.scheme {
            Scheme::Pcsav => {
                let mut op = self
                    .asm
                    .p2_scalar_operator(1.5 / p.dt, p.nu, Some(&ex.u), true);
                self.asm.apply_dirichlet(&mut op, &self.bflags);
                let inv = jacobi_inv(&op);
                zero_constrained(&mut rhs_breve[..n], &self.bflags);
                zero_constrained(&mut rhs_breve[n..], &self.bflags);
                let u_hat = solve_per_component(
                    "velocity history solve",
                    &op,
                    &inv,
                    false,
                    &rhs_hat,
                    &mut self.warm.u_hat,
                    p.solver,
                )?;
                let u_breve = solve_per_component(
                    "velocity coupling solve",
                    &op,
                    &inv,
                    false,
                    &rhs_breve,
                    &mut self.warm.u_breve,
                    p.solver,
                )?;
                Ok((u_hat, u_breve))
            }
            Scheme::PcsavEct => {
                let conv = self.asm.convection_load_qp(
                    &ex.u_qp,
                    ex.ugrad_qp.as_ref().expect("gradient cache"),
                );
                add_scaled(&mut rhs_breve, &conv, -1.0);
                zero_constrained(&mut rhs_breve[..n], &self.bflags);
                zero_constrained(&mut rhs_breve[n..], &self.bflags);
                let (op, inv) = self.ect_op.as_ref().expect("constant operator");
                let u_hat = solve_per_component(
                    "velocity history solve",
                    op,
                    inv,
                    true,
                    &rhs_hat,
                    &mut self.warm.u_hat,
                    p.solver,
                )?;
                let u_breve = solve_per_component(
                    "velocity coupling solve",
                    op,
                    inv,
                    true,
                    &rhs_breve,
                    &mut self.warm.u_breve,
                    p.solver,
                )?;
                Ok((u_hat, u_breve))
            }
        }
    }

    /// Assembles and solves the scalar equation for the recombination
    /// coefficient. The denominator is positive by construction; a
    /// non-positive value means the discretization was violated.
    #[allow(clippy::too_many_arguments)]
    fn scalar_coefficient(
        &self,
        st: &FieldState,
        ex: &Extrapolants,
        w_hat: &[f64],
        w_breve: &[f64],
        u_hat: &[f64],
        u_breve: &[f64],
        t_next: f64,
    ) -> Result<(f64, f64, f64)> {
        let p = &self.params;
        let dt = p.dt;
        let e = (-t_next / p.t_sav).exp();
        let w_hat_qp = self.asm.eval_p2_vec_qp(w_hat);
        let w_breve_qp = self.asm.eval_p2_vec_qp(w_breve);
        let u_hat_qp = self.asm.eval_p2_vec_qp(u_hat);
        let u_breve_qp = self.asm.eval_p2_vec_qp(u_breve);

        let mut a = (1.5 / dt + 1.0 / p.t_sav) * e * e
            - self
                .asm
                .inner_transport_qp(&ex.u_qp, &ex.dgrad_qp, &w_breve_qp)
            + self
                .asm
                .inner_transport_qp(&u_breve_qp, &ex.dgrad_qp, &ex.w_qp);
        let mut b = (2.0 * st.s / dt - 0.5 * st.s_prev / dt) * e
            + self
                .asm
                .inner_transport_qp(&ex.u_qp, &ex.dgrad_qp, &w_hat_qp)
            - self
                .asm
                .inner_transport_qp(&u_hat_qp, &ex.dgrad_qp, &ex.w_qp);
        if self.scheme == Scheme::PcsavEct {
            let ugrad = ex.ugrad_qp.as_ref().expect("gradient cache");
            a -= self.asm.inner_transport_qp(&ex.u_qp, ugrad, &u_breve_qp) / p.lambda;
            b += self.asm.inner_transport_qp(&ex.u_qp, ugrad, &u_hat_qp) / p.lambda;
        }
        let k = if a > 0.0 {
            if a < 1e-300 && b.abs() < 1e-300 {
                0.0
            } else {
                b / a
            }
        } else {
            return Err(Error::InvariantViolation(format!(
                "scalar equation lost positivity: denominator {a:.6e} at t = {t_next:.6}"
            )));
        };
        Ok((k, a, b))
    }

    /// Advances the state by one step. Requires two history levels, so the
    /// starting step must have run first.
    pub fn step(&mut self, st: &mut FieldState) -> Result<StepDiagnostics> {
        if st.step < 1 {
            return Err(Error::InvalidArgument(
                "the multistep update needs two time levels; run the starting step first".into(),
            ));
        }
        let p = self.params;
        let dt = p.dt;
        let t_next = (st.step as f64 + 1.0) * dt;
        let n2 = self.asm.n2;

        let ex = self.extrapolants(st);
        let (d_hat, d_breve, transport, fd_load) = self.director_parts(&ex, t_next)?;
        let (w_hat, w_breve) =
            self.w_parts(&ex, &d_hat, &d_breve, &transport, fd_load.as_ref())?;
        let (u_hat, u_breve) = self.velocity_parts(st, &ex, t_next)?;
        let (k, a, b) =
            self.scalar_coefficient(st, &ex, &w_hat, &w_breve, &u_hat, &u_breve, t_next)?;

        let recombine = |hat: &[f64], breve: &[f64]| -> Vec<f64> {
            hat.iter().zip(breve).map(|(h, r)| h + k * r).collect()
        };
        let d_next = recombine(&d_hat, &d_breve);
        let w_next = recombine(&w_hat, &w_breve);
        let u_star = recombine(&u_hat, &u_breve);

        let eps2 = p.eps * p.eps;
        let d_next_qp = self.asm.eval_p2_vec_qp(&d_next);
        let q_next: Vec<f64> = (0..st.q.len())
            .map(|m| {
                let dd = [
                    3.0 * d_next_qp[m][0] - ex.bdf_d_qp[m][0],
                    3.0 * d_next_qp[m][1] - ex.bdf_d_qp[m][1],
                ];
                ex.q_bdf_qp[m] / 3.0
                    + 2.0 / (3.0 * eps2) * (ex.d_qp[m][0] * dd[0] + ex.d_qp[m][1] * dd[1])
            })
            .collect();

        let (u_next, phi, proj_stats) = self.proj.project(&u_star, 2.0 * dt / 3.0, p.solver)?;
        let div_pi1 = self.proj.p1_l2_projection(&self.proj.divergence(&u_star))?;
        let mut p_next = st.p.clone();
        let mut g_next = st.g.clone();
        let mut h_next = st.h.clone();
        for i in 0..p_next.len() {
            p_next[i] += phi[i] - p.nu * div_pi1[i];
            g_next[i] += p.nu * div_pi1[i];
            h_next[i] += phi[i];
        }
        let s_next = e_factor(t_next, p.t_sav) * k;

        let w_next_qp = self.asm.eval_p2_vec_qp(&w_next);
        let ustar_grad = self.asm.eval_p2_grad_qp(&u_star);
        let diss = 2.0 * dt * p.lambda * p.gamma * self.asm.l2_sq_vec_qp(&w_next_qp)
            + p.nu
                * dt
                * (self.asm.h1semi_sq_grad_qp(&ustar_grad)
                    + self.asm.curl_sq_grad_qp(&ustar_grad))
            + 2.0 * dt / p.t_sav * p.lambda * s_next * s_next;

        st.d_prev = std::mem::replace(&mut st.d, d_next);
        st.u_prev = std::mem::replace(&mut st.u, u_next);
        st.w_prev = std::mem::replace(&mut st.w, w_next);
        st.q_prev = std::mem::replace(&mut st.q, q_next);
        st.s_prev = st.s;
        st.s = s_next;
        st.p = p_next;
        st.g = g_next;
        st.h = h_next;
        st.u_star = u_star;
        st.step += 1;
        st.t = st.step as f64 * dt;
        debug_assert_eq!(st.d.len(), 2 * n2);

        Ok(StepDiagnostics {
            k,
            a,
            b,
            diss,
            projection: proj_stats,
        })
    }
}

fn e_factor(t: f64, t_sav: f64) -> f64 {
    (-t / t_sav).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, Rect};
    use crate::sparse::norm;
    use crate::state::{FieldState, SimParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tight_params(dt: f64, eps: f64, t_sav: f64) -> SimParams {
        SimParams {
            nu: 0.1,
            lambda: 1.0,
            gamma: 1.0,
            eps,
            t_sav,
            dt,
            solver: SolverOpts {
                tol: 1e-13,
                maxit: 50_000,
                ..SolverOpts::default()
            },
        }
    }

    fn interp_vec(asm: &Assembler, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
        asm.interpolate_p2_vec(f)
    }

    /// State with matching history levels, penalty variable and molecular
    /// field derived from the given director and velocity.
    fn seeded_state(
        stp: &mut Stepper,
        d_now: impl Fn(f64, f64) -> [f64; 2],
        d_before: impl Fn(f64, f64) -> [f64; 2],
        u: impl Fn(f64, f64) -> [f64; 2],
    ) -> FieldState {
        let eps = stp.params().eps;
        let dt = stp.params().dt;
        let t_sav = stp.params().t_sav;
        let d = interp_vec(stp.assembler(), d_now);
        let d_prev = interp_vec(stp.assembler(), d_before);
        let u = interp_vec(stp.assembler(), u);
        let q = stp.assembler().q_from_director(&d, eps);
        let q_prev = stp.assembler().q_from_director(&d_prev, eps);
        let w = stp.weak_w_projection(&d, &q).expect("w seed");
        let w_prev = stp.weak_w_projection(&d_prev, &q_prev).expect("w seed");
        let mut st = stp.fresh_state();
        st.d = d;
        st.d_prev = d_prev;
        st.u = u.clone();
        st.u_prev = u;
        st.q = q;
        st.q_prev = q_prev;
        st.w = w;
        st.w_prev = w_prev;
        st.s = (-dt / t_sav).exp();
        st.s_prev = 1.0;
        st.step = 1;
        st.t = dt;
        st
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn uniform_director_at_rest_is_a_fixed_point() {
        let mesh = build_rect_mesh(Rect::unit(), 6, 6).expect("mesh");
        let params = tight_params(0.01, 0.3, 0.5);
        let mut stp =
            Stepper::new(&mesh, params, Scheme::Pcsav, None, 6).expect("stepper");
        let mut st = seeded_state(
            &mut stp,
            |_, _| [1.0, 0.0],
            |_, _| [1.0, 0.0],
            |_, _| [0.0, 0.0],
        );
        let d0 = st.d.clone();
        for _ in 0..10 {
            let diag = stp.step(&mut st).expect("step");
            assert!(diag.a > 0.0);
        }
        assert!(max_abs_diff(&st.d, &d0) < 1e-9, "director drifted");
        assert!(norm(&st.u) < 1e-9, "flow appeared from nothing");
        assert!(norm(&st.p) < 1e-8, "pressure appeared from nothing");
        let s_exact = (-st.t / params.t_sav).exp();
        assert!(
            (st.s - s_exact).abs() < 1e-4,
            "auxiliary scalar strayed from its decay: {} vs {}",
            st.s,
            s_exact
        );
    }

    #[test]
    fn auxiliary_scalar_follows_its_decoupled_recursion() {
        // With zero velocity every pairing vanishes and the scalar equation
        // reduces to a two-step recursion that can be iterated directly.
        let mesh = build_rect_mesh(Rect::unit(), 4, 4).expect("mesh");
        let params = tight_params(0.02, 0.4, 0.3);
        let mut stp =
            Stepper::new(&mesh, params, Scheme::Pcsav, None, 6).expect("stepper");
        let mut st = seeded_state(
            &mut stp,
            |_, _| [0.0, 1.0],
            |_, _| [0.0, 1.0],
            |_, _| [0.0, 0.0],
        );
        let a = 2.0 * params.dt / params.t_sav;
        let mut s_ref = ((-params.dt / params.t_sav).exp(), 1.0f64);
        for _ in 0..20 {
            stp.step(&mut st).expect("step");
            let s_next = (4.0 * s_ref.0 - s_ref.1) / (3.0 + a);
            s_ref = (s_next, s_ref.0);
            assert!(
                (st.s - s_ref.0).abs() <= 1e-12 * s_ref.0.abs().max(1.0),
                "scalar recursion mismatch: {} vs {}",
                st.s,
                s_ref.0
            );
        }
    }

    #[test]
    fn schemes_agree_when_the_flow_history_is_zero() {
        // Both schemes differ only through convection, so with zero velocity
        // history one step must produce the same fields.
        let mesh = build_rect_mesh(Rect::unit(), 6, 6).expect("mesh");
        let params = tight_params(0.005, 0.25, 0.4);
        let d_now = |x: f64, y: f64| {
            let g = x + 2.0 * y;
            [g.cos(), g.sin()]
        };
        let d_before = |x: f64, y: f64| {
            let g = x + 2.0 * y - 0.05;
            [g.cos(), g.sin()]
        };
        let zero = |_: f64, _: f64| [0.0, 0.0];

        let run = |scheme: Scheme| -> FieldState {
            let mut stp = Stepper::new(&mesh, params, scheme, None, 6).expect("stepper");
            let mut st = seeded_state(&mut stp, d_now, d_before, zero);
            stp.step(&mut st).expect("step");
            st
        };
        let a = run(Scheme::Pcsav);
        let b = run(Scheme::PcsavEct);
        assert!(max_abs_diff(&a.d, &b.d) < 1e-9);
        assert!(max_abs_diff(&a.u, &b.u) < 1e-9);
        assert!(max_abs_diff(&a.p, &b.p) < 1e-8);
        assert!((a.s - b.s).abs() < 1e-11);
    }

    #[test]
    fn director_transport_half_is_linear_in_the_velocity() {
        let mesh = build_rect_mesh(Rect::unit(), 5, 5).expect("mesh");
        let params = tight_params(0.01, 0.3, 0.5);
        let d_now = |x: f64, y: f64| {
            let g = 0.7 * x - y;
            [g.cos(), g.sin()]
        };
        let flow = |x: f64, y: f64| {
            let pi = std::f64::consts::PI;
            [
                0.1 * (pi * x).sin().powi(2) * (2.0 * pi * y).sin(),
                -0.1 * (2.0 * pi * x).sin() * (pi * y).sin().powi(2),
            ]
        };
        let double_flow = move |x: f64, y: f64| {
            let v = flow(x, y);
            [2.0 * v[0], 2.0 * v[1]]
        };

        let mut stp = Stepper::new(&mesh, params, Scheme::Pcsav, None, 6).expect("stepper");
        let st1 = seeded_state(&mut stp, d_now, d_now, flow);
        let st2 = seeded_state(&mut stp, d_now, d_now, double_flow);
        let t_next = 2.0 * params.dt;
        let ex1 = stp.extrapolants(&st1);
        let (hat1, breve1, _, _) = stp.director_parts(&ex1, t_next).expect("parts");
        let ex2 = stp.extrapolants(&st2);
        let (hat2, breve2, _, _) = stp.director_parts(&ex2, t_next).expect("parts");

        assert!(max_abs_diff(&hat1, &hat2) < 1e-10, "history half saw the flow");
        let breve1_doubled: Vec<f64> = breve1.iter().map(|v| 2.0 * v).collect();
        assert!(
            max_abs_diff(&breve1_doubled, &breve2) < 1e-9,
            "transport half is not linear in the velocity"
        );
    }

    #[test]
    fn recombined_molecular_field_satisfies_its_weak_identity() {
        // After a full step the stored molecular field must satisfy
        // (w, psi) = (grad d, grad psi) + (q dex, psi) against the director
        // extrapolation used inside the step. The energy audit relies on
        // this identity holding to solver tolerance.
        let mesh = build_rect_mesh(Rect::unit(), 6, 6).expect("mesh");
        let params = tight_params(0.004, 0.3, 0.4);
        for scheme in [Scheme::Pcsav, Scheme::PcsavEct] {
            let mut stp = Stepper::new(&mesh, params, scheme, None, 6).expect("stepper");
            let d_now = |x: f64, y: f64| {
                let g = x - 0.5 * y;
                [g.cos(), g.sin()]
            };
            let d_before = |x: f64, y: f64| {
                let g = x - 0.5 * y + 0.02;
                [g.cos(), g.sin()]
            };
            let flow = |x: f64, y: f64| {
                let pi = std::f64::consts::PI;
                [
                    0.2 * (pi * x).sin().powi(2) * (2.0 * pi * y).sin(),
                    -0.2 * (2.0 * pi * x).sin() * (pi * y).sin().powi(2),
                ]
            };
            let mut st = seeded_state(&mut stp, d_now, d_before, flow);
            let d_tilde: Vec<f64> = st
                .d
                .iter()
                .zip(&st.d_prev)
                .map(|(a, b)| 2.0 * a - b)
                .collect();
            stp.step(&mut st).expect("step");

            let asm = stp.assembler();
            let n = asm.n2;
            let mut lhs = vec![0.0; 2 * n];
            {
                let (lo, hi) = lhs.split_at_mut(n);
                stp.m2.matvec(&st.w[..n], lo);
                stp.m2.matvec(&st.w[n..], hi);
            }
            let mut rhs = vec![0.0; 2 * n];
            {
                let (lo, hi) = rhs.split_at_mut(n);
                stp.k2.matvec(&st.d[..n], lo);
                stp.k2.matvec(&st.d[n..], hi);
            }
            let d_tilde_qp = asm.eval_p2_vec_qp(&d_tilde);
            let load = asm.scaled_director_load_qp(&st.q, &d_tilde_qp, 1.0);
            add_scaled(&mut rhs, &load, 1.0);
            let scale = norm(&rhs).max(1.0);
            assert!(
                max_abs_diff(&lhs, &rhs) < 1e-9 * scale,
                "molecular field identity broken for {}",
                scheme.name()
            );
        }
    }

    #[test]
    fn constant_momentum_operator_matches_a_fresh_assembly() {
        let mesh = build_rect_mesh(Rect::unit(), 5, 5).expect("mesh");
        let params = tight_params(0.01, 0.3, 0.5);
        let mut stp =
            Stepper::new(&mesh, params, Scheme::PcsavEct, None, 6).expect("stepper");
        let mut st = seeded_state(
            &mut stp,
            |x, y| {
                let g = x + y;
                [g.cos(), g.sin()]
            },
            |x, y| {
                let g = x + y;
                [g.cos(), g.sin()]
            },
            |_, _| [0.0, 0.0],
        );
        stp.step(&mut st).expect("step");
        stp.step(&mut st).expect("step");
        let asm = stp.assembler();
        let mut fresh = asm.p2_scalar_operator(1.5 / params.dt, params.nu, None, false);
        asm.apply_dirichlet(&mut fresh, &stp.bflags);
        let (cached, _) = stp.ect_op.as_ref().expect("cached operator");
        assert_eq!(cached, &fresh);
    }

    #[test]
    fn quadrature_refinement_barely_moves_a_resolved_step() {
        // The default rule integrates every bilinear form exactly; only the
        // penalty loads see the rule at all, through their degree-8 parts.
        // On a mesh that resolves the fields the difference against the
        // exactness-degree rule must sit far below discretization error.
        let mesh = build_rect_mesh(Rect::unit(), 8, 8).expect("mesh");
        let params = tight_params(0.005, 0.3, 0.4);
        let d_now = |x: f64, y: f64| {
            let g = x + 2.0 * y;
            [g.cos(), g.sin()]
        };
        let d_before = |x: f64, y: f64| {
            let g = x + 2.0 * y - 0.03;
            [g.cos(), g.sin()]
        };
        let flow = |x: f64, y: f64| {
            let pi = std::f64::consts::PI;
            [
                0.1 * (pi * x).sin().powi(2) * (2.0 * pi * y).sin(),
                -0.1 * (2.0 * pi * x).sin() * (pi * y).sin().powi(2),
            ]
        };
        let run = |degree: usize| -> FieldState {
            let mut stp =
                Stepper::new(&mesh, params, Scheme::Pcsav, None, degree).expect("stepper");
            let mut st = seeded_state(&mut stp, d_now, d_before, flow);
            stp.step(&mut st).expect("step");
            st
        };
        let low = run(6);
        let high = run(8);
        let scale = norm(&high.d);
        assert!(
            max_abs_diff(&low.d, &high.d) < 1e-7 * scale,
            "director moved under quadrature refinement: {:.3e}",
            max_abs_diff(&low.d, &high.d) / scale
        );
        assert!(max_abs_diff(&low.u, &high.u) < 1e-7);
        assert!((low.s - high.s).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        /// The denominator of the scalar equation is a sum of squares plus a
        /// positive constant, whatever the state; the step must never reject
        /// it for bounded random data.
        #[test]
        fn scalar_denominator_stays_positive(seed in any::<u64>(), ect in any::<bool>()) {
            let mesh = build_rect_mesh(Rect::unit(), 3, 3).expect("mesh");
            let params = tight_params(0.01, 0.25, 0.5);
            let scheme = if ect { Scheme::PcsavEct } else { Scheme::Pcsav };
            let mut stp = Stepper::new(&mesh, params, scheme, None, 4).expect("stepper");
            let mut st = stp.fresh_state();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in st.d.iter_mut().chain(st.d_prev.iter_mut()) {
                *v = rng.gen_range(-1.0..1.0f64);
            }
            let n = stp.assembler().n2;
            let flags = stp.assembler().p2_boundary_flags().to_vec();
            for v in st.u.iter_mut().chain(st.u_prev.iter_mut()) {
                *v = rng.gen_range(-0.5..0.5f64);
            }
            for c in 0..2 {
                zero_constrained(&mut st.u[c * n..][..n], &flags);
                zero_constrained(&mut st.u_prev[c * n..][..n], &flags);
            }
            for v in st.q.iter_mut().chain(st.q_prev.iter_mut()) {
                *v = rng.gen_range(-2.0..2.0f64);
            }
            for v in st.w.iter_mut().chain(st.w_prev.iter_mut()) {
                *v = rng.gen_range(-1.0..1.0f64);
            }
            st.s = rng.gen_range(0.2..1.2f64);
            st.s_prev = rng.gen_range(0.2..1.2f64);
            st.step = 1;
            st.t = params.dt;
            let diag = stp.step(&mut st).expect("step");
            prop_assert!(diag.a > 0.0, "denominator {} not positive", diag.a);
        }
    }
}
