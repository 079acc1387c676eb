//! Experiment drivers: configured runs with file artifacts, the cross-mesh
//! refinement study for the smooth benchmark, and the scheme timing
//! comparison.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::{AuditPolicy, ExampleKind, RunConfig};
use crate::energy::{audit_energy_law, energy_terms, EnergyRecord, EnergyTerms};
use crate::error::{Error, Result};
use crate::firststep::take_first_step;
use crate::mesh::{build_rect_mesh, Mesh};
use crate::mms;
use crate::output::{vtk_snapshot, write_atomic, write_energy_csv, write_json};
use crate::problems;
use crate::space::{build_dofmap, eval_at, DofMap, ElemKind};
use crate::state::FieldState;
use crate::stepper::{Scheme, Stepper};

/// The audit allows a residual of this fraction of the initial stability
/// functional, absorbing solver and quadrature noise.
pub const ENERGY_TOL_FACTOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub schema: u32,
    pub example: ExampleKind,
    pub scheme: &'static str,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub t_final: f64,
    pub steps: usize,
    pub wall_seconds: f64,
    pub min_d_norm: f64,
    /// Whether the dissipation audit applied (it is meaningless under
    /// manufactured forcing).
    pub audited: bool,
    pub max_audit_residual: f64,
    pub audit_violations: usize,
    pub final_energy: EnergyTerms,
    pub final_s: f64,
}

pub struct RunReport {
    /// One row per time level, starting at the initial data.
    pub records: Vec<EnergyRecord>,
    pub summary: RunSummary,
}

fn record_from(terms: EnergyTerms, step: usize, t: f64, s: f64) -> EnergyRecord {
    EnergyRecord {
        step,
        t,
        w_kin: terms.w_kin,
        w_ela: terms.w_ela,
        w_pen: terms.w_pen,
        w: terms.w,
        w_s: terms.w_s,
        w_tilde: terms.w_tilde,
        w_star: terms.w_star,
        s,
        k: 1.0,
        a: 0.0,
        diss: 0.0,
        residual: 0.0,
    }
}

fn initial_fields(example: ExampleKind, stp: &Stepper) -> (Vec<f64>, Vec<f64>) {
    let asm = stp.assembler();
    match example {
        ExampleKind::Mms => (
            asm.interpolate_p2_vec(|x, y| mms::exact_director(0.0, x, y)),
            asm.interpolate_p2_vec(|x, y| mms::exact_velocity(0.0, x, y)),
        ),
        ExampleKind::Smooth => (
            asm.interpolate_p2_vec(problems::smooth_director),
            vec![0.0; 2 * asm.n2],
        ),
        ExampleKind::Defects => (
            asm.interpolate_p2_vec(problems::defect_director),
            vec![0.0; 2 * asm.n2],
        ),
    }
}

fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    let steps_f = t_final / dt;
    let steps = steps_f.round() as usize;
    if steps == 0 || (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::Config(format!(
            "dt {dt} does not divide t_final {t_final} into whole steps"
        )));
    }
    Ok(steps)
}

/// Runs one configured simulation, writing the energy CSV, field snapshots
/// and a JSON summary into the configured output directory.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let scheme = config.scheme()?;
    let params = config.sim_params()?;
    let steps = step_count(params.dt, config.time.t_final)?;
    let mesh = build_rect_mesh(config.domain(), config.mesh.nx, config.ny())?;
    let forcing = match config.example {
        ExampleKind::Mms => Some(mms::manufactured_forcing(&params)),
        _ => None,
    };
    let audited = forcing.is_none();
    let mut stp = Stepper::new(&mesh, params, scheme, forcing, 6)?;
    let (d0, u0) = initial_fields(config.example, &stp);

    let wall = Instant::now();
    let st0 = stp.initial_state(&d0, &u0)?;
    let terms0 = energy_terms(stp.assembler(), stp.projector(), &params, &st0)?;
    let mut records = Vec::with_capacity(steps + 1);
    records.push(record_from(terms0, 0, 0.0, st0.s));
    let audit_tol = ENERGY_TOL_FACTOR * terms0.w_star;

    let (mut st, _) = take_first_step(&mut stp, &d0, &u0)?;
    let terms1 = energy_terms(stp.assembler(), stp.projector(), &params, &st)?;
    records.push(record_from(terms1, 1, st.t, st.s));

    let dir = config.output.dir.as_path();
    let mut violations = 0usize;
    let mut max_residual = 0.0f64;
    while st.step < steps {
        let diag = stp.step(&mut st)?;
        let terms = energy_terms(stp.assembler(), stp.projector(), &params, &st)?;
        let mut rec = record_from(terms, st.step, st.t, st.s);
        rec.k = diag.k;
        rec.a = diag.a;
        rec.diss = diag.diss;
        if audited {
            let residual = audit_energy_law(records.last().expect("previous row"), &rec);
            rec.residual = residual;
            max_residual = max_residual.max(residual);
            if residual > audit_tol {
                violations += 1;
                let msg = format!(
                    "energy law violated at step {}: residual {residual:.3e} exceeds {audit_tol:.3e}",
                    st.step
                );
                match config.audit {
                    AuditPolicy::Abort => return Err(Error::InvariantViolation(msg)),
                    AuditPolicy::Warn => eprintln!("warning: {msg}"),
                }
            }
        }
        records.push(rec);
        if config.output.field_stride > 0
            && st.step % config.output.field_stride == 0
            && st.step != steps
        {
            let name = format!("fields_{:06}.vtk", st.step);
            write_atomic(&dir.join(name), &vtk_snapshot(&mesh, stp.assembler(), &st))?;
        }
    }

    let wall_seconds = wall.elapsed().as_secs_f64();
    let (min_d_norm, _) = problems::min_norm_node(stp.assembler(), &st.d, |_, _| true)
        .expect("nonempty mesh");
    let final_terms = energy_terms(stp.assembler(), stp.projector(), &params, &st)?;
    let summary = RunSummary {
        schema: config.schema,
        example: config.example,
        scheme: scheme.name(),
        nx: config.mesh.nx,
        ny: config.ny(),
        dt: params.dt,
        t_final: config.time.t_final,
        steps,
        wall_seconds,
        min_d_norm,
        audited,
        max_audit_residual: max_residual,
        audit_violations: violations,
        final_energy: final_terms,
        final_s: st.s,
    };

    let stride = config.output.energy_stride.max(1);
    let written: Vec<EnergyRecord> = records
        .iter()
        .filter(|r| r.step % stride == 0 || r.step == steps)
        .copied()
        .collect();
    write_energy_csv(&dir.join("energy.csv"), &written)?;
    write_atomic(
        &dir.join("fields_final.vtk"),
        &vtk_snapshot(&mesh, stp.assembler(), &st),
    )?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunReport { records, summary })
}

// ----- cross-mesh refinement study -----

struct LevelSolution {
    mesh: Mesh,
    stp: Stepper,
    st: FieldState,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CauchyRow {
    /// Pair index: row `l` compares levels `l` and `l + 1`.
    pub level: usize,
    pub h: f64,
    pub dt: f64,
    pub d_grad: f64,
    pub u_grad: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CauchyTable {
    pub scheme: &'static str,
    pub eps: f64,
    pub rows: Vec<CauchyRow>,
}

impl CauchyTable {
    /// Observed orders between consecutive difference rows.
    pub fn rates(&self) -> Vec<[f64; 3]> {
        self.rows
            .windows(2)
            .map(|w| {
                [
                    (w[0].d_grad / w[1].d_grad).log2(),
                    (w[0].u_grad / w[1].u_grad).log2(),
                    (w[0].p / w[1].p).log2(),
                ]
            })
            .collect()
    }

    pub fn csv(&self) -> String {
        let mut out =
            String::from("l,h,dt,cauchy_grad_d,rate_grad_d,cauchy_grad_u,rate_grad_u,cauchy_p,rate_p\n");
        let rates = self.rates();
        for (i, row) in self.rows.iter().enumerate() {
            let r: [String; 3] = if i == 0 {
                [String::new(), String::new(), String::new()]
            } else {
                let r = rates[i - 1];
                [r[0].to_string(), r[1].to_string(), r[2].to_string()]
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.level, row.h, row.dt, row.d_grad, r[0], row.u_grad, r[1], row.p, r[2]
            ));
        }
        out
    }
}

/// Difference norms between two solutions of the same problem on meshes of
/// different resolution, integrated on the finer mesh with the coarse
/// fields evaluated exactly as finite element functions.
fn cross_mesh_difference(coarse: &LevelSolution, fine: &LevelSolution) -> Result<[f64; 3]> {
    let dm2 = build_dofmap(&coarse.mesh, ElemKind::P2, 2)?;
    let dm1 = build_dofmap(&coarse.mesh, ElemKind::P1, 1)?;
    let asm = fine.stp.assembler();
    let nq_total = asm.qp_xy.len();
    let d_fine = asm.eval_p2_grad_qp(&fine.st.d);
    let u_fine = asm.eval_p2_grad_qp(&fine.st.u);
    let p_fine = asm.eval_p1_qp(&fine.st.p);
    let mut gd_sq = vec![0.0; nq_total];
    let mut gu_sq = vec![0.0; nq_total];
    let mut p_sq = vec![0.0; nq_total];
    let eval_grads =
        |coeffs: &[f64], dm: &DofMap, x: f64, y: f64| -> [[f64; 2]; 2] {
            let (_, g0) = eval_at(&coarse.mesh, dm, coeffs, 0, x, y);
            let (_, g1) = eval_at(&coarse.mesh, dm, coeffs, 1, x, y);
            [g0, g1]
        };
    for (k, &[x, y]) in asm.qp_xy.iter().enumerate() {
        let gd = eval_grads(&coarse.st.d, &dm2, x, y);
        let gu = eval_grads(&coarse.st.u, &dm2, x, y);
        for c in 0..2 {
            for j in 0..2 {
                gd_sq[k] += (d_fine[k][c][j] - gd[c][j]).powi(2);
                gu_sq[k] += (u_fine[k][c][j] - gu[c][j]).powi(2);
            }
        }
        let (pc, _) = eval_at(&coarse.mesh, &dm1, &coarse.st.p, 0, x, y);
        p_sq[k] = (p_fine[k] - pc) * (p_fine[k] - pc);
    }
    Ok([
        asm.integrate_qp(&gd_sq).max(0.0).sqrt(),
        asm.integrate_qp(&gu_sq).max(0.0).sqrt(),
        asm.integrate_qp(&p_sq).max(0.0).sqrt(),
    ])
}

fn smooth_level(scheme: Scheme, eps: f64, level: usize, t_final: f64) -> Result<LevelSolution> {
    let nx = 5 * (1 << (level - 1));
    let dt = 0.001 / (1 << (level - 1)) as f64;
    let params = problems::smooth_params(eps, dt, t_final);
    let mesh = build_rect_mesh(problems::square_domain(), nx, nx)?;
    let mut stp = Stepper::new(&mesh, params, scheme, None, 6)?;
    let d0 = stp.assembler().interpolate_p2_vec(problems::smooth_director);
    let u0 = vec![0.0; 2 * stp.assembler().n2];
    let (mut st, _) = take_first_step(&mut stp, &d0, &u0)?;
    let steps = step_count(dt, t_final)?;
    while st.step < steps {
        stp.step(&mut st)?;
    }
    Ok(LevelSolution { mesh, stp, st })
}

/// Refinement study without an exact solution: each level halves both the
/// mesh size and the time step, and successive solutions are differenced
/// at a fixed early time.
pub fn cauchy_study(scheme: Scheme, levels: usize, eps: f64) -> Result<CauchyTable> {
    if levels < 3 {
        return Err(Error::InvalidArgument(format!(
            "the refinement study needs at least 3 levels for a rate, got {levels}"
        )));
    }
    const T_FINAL: f64 = 0.1;
    let solutions: Vec<LevelSolution> = (1..=levels)
        .map(|l| smooth_level(scheme, eps, l, T_FINAL))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(levels - 1);
    for l in 0..levels - 1 {
        let [d_grad, u_grad, p] = cross_mesh_difference(&solutions[l], &solutions[l + 1])?;
        rows.push(CauchyRow {
            level: l + 1,
            h: 2.0 * 2.0f64.sqrt() / (5.0 * (1 << l) as f64),
            dt: 0.001 / (1 << l) as f64,
            d_grad,
            u_grad,
            p,
        });
    }
    Ok(CauchyTable { scheme: scheme.name(), eps, rows })
}

// ----- scheme timing comparison -----

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CpuReport {
    pub pcsav_seconds: f64,
    pub ect_seconds: f64,
    /// Timed-section wall-clock ratio ECT over PCSAV.
    pub ratio: f64,
    /// Relative gap of the final modified energies of the two runs.
    pub w_tilde_gap: f64,
    pub timed_steps: usize,
}

/// Times both schemes on the identical smooth-benchmark configuration.
/// The starting step and one regular step are excluded as warmup so the
/// comparison covers only the steady per-step cost.
pub fn cpu_compare(nx: usize, dt: f64, t_final: f64, eps: f64) -> Result<CpuReport> {
    let steps = step_count(dt, t_final)?;
    if steps < 4 {
        return Err(Error::InvalidArgument(format!(
            "timing needs at least 4 steps, got {steps}"
        )));
    }
    let mut seconds = [0.0f64; 2];
    let mut w_tilde = [0.0f64; 2];
    for (slot, scheme) in [Scheme::Pcsav, Scheme::PcsavEct].into_iter().enumerate() {
        let params = problems::smooth_params(eps, dt, t_final);
        let mesh = build_rect_mesh(problems::square_domain(), nx, nx)?;
        let mut stp = Stepper::new(&mesh, params, scheme, None, 6)?;
        let d0 = stp.assembler().interpolate_p2_vec(problems::smooth_director);
        let u0 = vec![0.0; 2 * stp.assembler().n2];
        let (mut st, _) = take_first_step(&mut stp, &d0, &u0)?;
        stp.step(&mut st)?;
        let timer = Instant::now();
        while st.step < steps {
            stp.step(&mut st)?;
        }
        seconds[slot] = timer.elapsed().as_secs_f64();
        let terms = energy_terms(stp.assembler(), stp.projector(), &params, &st)?;
        w_tilde[slot] = terms.w_tilde;
    }
    Ok(CpuReport {
        pcsav_seconds: seconds[0],
        ect_seconds: seconds[1],
        ratio: seconds[1] / seconds[0],
        w_tilde_gap: ((w_tilde[0] - w_tilde[1]) / w_tilde[0]).abs(),
        timed_steps: steps - 2,
    })
}

/// Runs a manufactured-solution refinement study and writes its CSV.
pub fn mms_study(
    mode: mms::StudyMode,
    scheme: Scheme,
    levels: usize,
    out_dir: &Path,
) -> Result<mms::StudyTable> {
    let table = mms::convergence_study(mode, scheme, levels)?;
    let name = match mode {
        mms::StudyMode::Temporal => format!("mms_temporal_{}.csv", scheme.name()),
        mms::StudyMode::Spatial => format!("mms_spatial_{}.csv", scheme.name()),
    };
    write_atomic(&out_dir.join(name), &table.csv())?;
    Ok(table)
}
