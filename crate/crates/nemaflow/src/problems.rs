//! Benchmark problems on the square `[-1, 1]^2`: a smooth relaxing texture
//! used for Cauchy refinement and energy-decay runs, and a two-defect
//! configuration whose singularities migrate to the origin and annihilate.

use crate::assemble::Assembler;
use crate::mesh::Rect;
use crate::sparse::SolverOpts;
use crate::state::SimParams;

pub fn square_domain() -> Rect {
    Rect::centered(1.0)
}

/// Parameters of the smooth-texture problem. The auxiliary-variable decay
/// constant always equals the run's final time, so it is passed alongside
/// the step.
pub fn smooth_params(eps: f64, dt: f64, t_final: f64) -> SimParams {
    SimParams {
        nu: 0.1,
        lambda: 1.0,
        gamma: 1.0,
        eps,
        t_sav: t_final,
        dt,
        solver: SolverOpts::default(),
    }
}

/// Unit director whose phase winds with `2 pi (cos x - sin y)`.
pub fn smooth_director(x: f64, y: f64) -> [f64; 2] {
    let a = 2.0 * std::f64::consts::PI * (x.cos() - y.sin());
    [a.sin(), a.cos()]
}

pub fn defect_params(dt: f64, t_final: f64) -> SimParams {
    SimParams {
        nu: 1.0,
        lambda: 0.01,
        gamma: 1.0,
        eps: 0.05,
        t_sav: t_final,
        dt,
        solver: SolverOpts::default(),
    }
}

/// Regularized director with isolated zeros at `(+-1/2, 0)`.
pub fn defect_director(x: f64, y: f64) -> [f64; 2] {
    let raw = [x * x + y * y - 0.25, y];
    let norm = (raw[0] * raw[0] + raw[1] * raw[1] + 0.05 * 0.05).sqrt();
    [raw[0] / norm, raw[1] / norm]
}

/// Smallest nodal director magnitude among the P2 nodes accepted by the
/// filter, with the node's coordinates.
pub fn min_norm_node(
    asm: &Assembler,
    d: &[f64],
    filter: impl Fn(f64, f64) -> bool,
) -> Option<(f64, [f64; 2])> {
    let n = asm.n2;
    let mut best: Option<(f64, [f64; 2])> = None;
    for (i, &[x, y]) in asm.p2_coords.iter().enumerate() {
        if !filter(x, y) {
            continue;
        }
        let m = (d[i] * d[i] + d[n + i] * d[n + i]).sqrt();
        if best.map_or(true, |(b, _)| m < b) {
            best = Some((m, [x, y]));
        }
    }
    best
}
