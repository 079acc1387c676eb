//! Lagrange finite-element spaces on triangles: P1 and P2, scalar or
//! two-component vector valued.
//!
//! Scalar degrees of freedom are numbered vertices first, then edge
//! midpoints (P2 only). Vector fields use a component-blocked layout: the
//! coefficients of component `c` occupy `c * n_scalar .. (c + 1) * n_scalar`.

use crate::error::{Error, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemKind {
    P1,
    P2,
}

/// Degree-of-freedom map for one field.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub kind: ElemKind,
    /// 1 for scalars, 2 for vector fields.
    pub components: usize,
    /// Scalar dofs per component.
    pub n_scalar: usize,
    /// Scalar dofs per triangle (3 or 6).
    pub stride: usize,
    /// Flattened `n_triangles x stride` scalar dof indices. For P2 the local
    /// order is the three vertices followed by the midpoints of the edges
    /// opposite local vertices 0, 1, 2.
    pub tri_dofs: Vec<usize>,
    /// Coordinates of each scalar dof.
    pub node_coords: Vec<[f64; 2]>,
    /// Per-scalar-dof boundary flag.
    pub boundary: Vec<bool>,
}

impl DofMap {
    /// Total number of coefficients including components.
    pub fn n_dofs(&self) -> usize {
        self.components * self.n_scalar
    }

    /// Scalar dof indices of triangle `t`.
    pub fn tri(&self, t: usize) -> &[usize] {
        &self.tri_dofs[t * self.stride..(t + 1) * self.stride]
    }

    /// Nodal interpolation of a scalar function.
    pub fn interpolate_scalar(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.node_coords.iter().map(|p| f(p[0], p[1])).collect()
    }

    /// Nodal interpolation of a two-component function into the blocked
    /// layout.
    pub fn interpolate_vector(&self, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
        assert_eq!(self.components, 2, "interpolate_vector needs a vector space");
        let n = self.n_scalar;
        let mut out = vec![0.0; 2 * n];
        for (i, p) in self.node_coords.iter().enumerate() {
            let v = f(p[0], p[1]);
            out[i] = v[0];
            out[n + i] = v[1];
        }
        out
    }
}

/// Builds the dof map for `kind` with `components` blocks.
pub fn build_dofmap(mesh: &Mesh, kind: ElemKind, components: usize) -> Result<DofMap> {
    if !(components == 1 || components == 2) {
        return Err(Error::InvalidArgument(format!(
            "components must be 1 or 2, got {components}"
        )));
    }
    let nv = mesh.n_vertices();
    match kind {
        ElemKind::P1 => {
            let tri_dofs = mesh.triangles.iter().flatten().copied().collect();
            Ok(DofMap {
                kind,
                components,
                n_scalar: nv,
                stride: 3,
                tri_dofs,
                node_coords: mesh.vertices.clone(),
                boundary: mesh.boundary_vertex.clone(),
            })
        }
        ElemKind::P2 => {
            let ne = mesh.n_edges();
            let mut tri_dofs = Vec::with_capacity(6 * mesh.n_triangles());
            for t in 0..mesh.n_triangles() {
                let tri = mesh.triangles[t];
                let te = mesh.tri_edges[t];
                tri_dofs.extend_from_slice(&[
                    tri[0],
                    tri[1],
                    tri[2],
                    nv + te[0],
                    nv + te[1],
                    nv + te[2],
                ]);
            }
            let mut node_coords = mesh.vertices.clone();
            node_coords.extend_from_slice(&mesh.edge_midpoints);
            let mut boundary = mesh.boundary_vertex.clone();
            boundary.extend(mesh.boundary_edge.iter().copied());
            Ok(DofMap {
                kind,
                components,
                n_scalar: nv + ne,
                stride: 6,
                tri_dofs,
                node_coords,
                boundary,
            })
        }
    }
}

/// P1 shape values at a reference point.
pub fn p1_shape(x: f64, y: f64) -> [f64; 3] {
    [1.0 - x - y, x, y]
}

/// P1 reference gradients (constant).
pub fn p1_shape_grad() -> [[f64; 2]; 3] {
    [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]
}

/// P2 shape values at a reference point. Local order: vertices 0..2 with
/// barycentric coordinates `l0 = 1 - x - y`, `l1 = x`, `l2 = y`, then the
/// midpoint bubbles `4 l1 l2`, `4 l2 l0`, `4 l0 l1` on the edges opposite
/// vertices 0, 1, 2.
pub fn p2_shape(x: f64, y: f64) -> [f64; 6] {
    let l0 = 1.0 - x - y;
    let l1 = x;
    let l2 = y;
    [
        l0 * (2.0 * l0 - 1.0),
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        4.0 * l1 * l2,
        4.0 * l2 * l0,
        4.0 * l0 * l1,
    ]
}

/// P2 reference gradients at a reference point.
pub fn p2_shape_grad(x: f64, y: f64) -> [[f64; 2]; 6] {
    let l0 = 1.0 - x - y;
    let l1 = x;
    let l2 = y;
    // dl0 = (-1, -1), dl1 = (1, 0), dl2 = (0, 1).
    [
        [-(4.0 * l0 - 1.0), -(4.0 * l0 - 1.0)],
        [4.0 * l1 - 1.0, 0.0],
        [0.0, 4.0 * l2 - 1.0],
        [4.0 * l2, 4.0 * l1],
        [-4.0 * l2, 4.0 * (l0 - l2)],
        [4.0 * (l0 - l1), -4.0 * l1],
    ]
}

/// Evaluates component `comp` of a coefficient vector at reference point
/// `xref` of triangle `tri`, returning the value and the physical gradient.
pub fn eval(
    mesh: &Mesh,
    dm: &DofMap,
    coeffs: &[f64],
    comp: usize,
    tri: usize,
    xref: [f64; 2],
) -> (f64, [f64; 2]) {
    let [a, b, c] = mesh.triangles[tri];
    let pa = mesh.vertices[a];
    let pb = mesh.vertices[b];
    let pc = mesh.vertices[c];
    // Columns of the Jacobian of the affine reference map.
    let j = [[pb[0] - pa[0], pc[0] - pa[0]], [pb[1] - pa[1], pc[1] - pa[1]]];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    // Physical gradient: grad_x = J^{-T} grad_ref.
    let invjt = [
        [j[1][1] / det, -j[1][0] / det],
        [-j[0][1] / det, j[0][0] / det],
    ];
    let offset = comp * dm.n_scalar;
    let dofs = dm.tri(tri);
    let mut value = 0.0;
    let mut grad = [0.0, 0.0];
    let mut acc = |phi: &[f64], dphi: &[[f64; 2]]| {
        for (k, &dof) in dofs.iter().enumerate() {
            let coef = coeffs[offset + dof];
            value += coef * phi[k];
            let g = dphi[k];
            grad[0] += coef * (invjt[0][0] * g[0] + invjt[0][1] * g[1]);
            grad[1] += coef * (invjt[1][0] * g[0] + invjt[1][1] * g[1]);
        }
    };
    match dm.kind {
        ElemKind::P1 => acc(&p1_shape(xref[0], xref[1]), &p1_shape_grad()),
        ElemKind::P2 => acc(&p2_shape(xref[0], xref[1]), &p2_shape_grad(xref[0], xref[1])),
    }
    (value, grad)
}

/// Evaluates a field at an arbitrary physical point via point location.
pub fn eval_at(
    mesh: &Mesh,
    dm: &DofMap,
    coeffs: &[f64],
    comp: usize,
    x: f64,
    y: f64,
) -> (f64, [f64; 2]) {
    let (tri, xref) = mesh.locate_point(x, y);
    eval(mesh, dm, coeffs, comp, tri, xref)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, Rect};

    #[test]
    fn shape_functions_are_nodal() {
        let nodes = [
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.5, 0.5],
            [0.0, 0.5],
            [0.5, 0.0],
        ];
        for (i, n) in nodes.iter().enumerate() {
            let vals = p2_shape(n[0], n[1]);
            for (j, v) in vals.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-14, "N{j} at node {i}: {v}");
            }
        }
        for (i, n) in nodes[..3].iter().enumerate() {
            let vals = p1_shape(n[0], n[1]);
            for (j, v) in vals.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_gradients_match_finite_differences() {
        let h = 1e-6;
        for &[x, y] in &[[0.2, 0.3], [0.1, 0.05], [0.4, 0.55]] {
            let g = p2_shape_grad(x, y);
            for k in 0..6 {
                let dx = (p2_shape(x + h, y)[k] - p2_shape(x - h, y)[k]) / (2.0 * h);
                let dy = (p2_shape(x, y + h)[k] - p2_shape(x, y - h)[k]) / (2.0 * h);
                assert!((g[k][0] - dx).abs() < 1e-8);
                assert!((g[k][1] - dy).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dof_counts_match_mesh_entities() {
        let mesh = build_rect_mesh(Rect::unit(), 1, 1).unwrap();
        let dm = build_dofmap(&mesh, ElemKind::P2, 1).unwrap();
        assert_eq!(dm.n_scalar, 9);
        let mesh = build_rect_mesh(Rect::unit(), 2, 2).unwrap();
        let dm = build_dofmap(&mesh, ElemKind::P2, 1).unwrap();
        assert_eq!(dm.n_scalar, 25);
        let dm1 = build_dofmap(&mesh, ElemKind::P1, 2).unwrap();
        assert_eq!(dm1.n_dofs(), 18);
    }

    #[test]
    fn p2_reproduces_quadratics_pointwise() {
        let mesh = build_rect_mesh(Rect { xmin: -1.0, xmax: 1.5, ymin: 0.0, ymax: 2.0 }, 3, 4)
            .unwrap();
        let dm = build_dofmap(&mesh, ElemKind::P2, 1).unwrap();
        let f = |x: f64, y: f64| 1.5 - 2.0 * x + 0.5 * y + x * x - 3.0 * x * y + 2.0 * y * y;
        let fg = |x: f64, y: f64| [-2.0 + 2.0 * x - 3.0 * y, 0.5 - 3.0 * x + 4.0 * y];
        let coeffs = dm.interpolate_scalar(f);
        // Deterministic pseudo-random probe points.
        let mut s = 0.123_f64;
        for _ in 0..100 {
            s = (s * 997.0).fract();
            let x = -1.0 + 2.5 * s;
            s = (s * 997.0).fract();
            let y = 2.0 * s;
            let (v, g) = eval_at(&mesh, &dm, &coeffs, 0, x, y);
            assert!((v - f(x, y)).abs() < 1e-12, "value at ({x}, {y})");
            let ge = fg(x, y);
            assert!((g[0] - ge[0]).abs() < 1e-11 && (g[1] - ge[1]).abs() < 1e-11);
        }
    }

    #[test]
    fn p2_gradient_error_for_cubic_is_second_order() {
        // For f = x^3 the P2 interpolant's gradient error is O(h^2).
        let f = |x: f64, _y: f64| x * x * x;
        let mut errs = Vec::new();
        for n in [4usize, 8, 16] {
            let mesh = build_rect_mesh(Rect::unit(), n, n).unwrap();
            let dm = build_dofmap(&mesh, ElemKind::P2, 1).unwrap();
            let coeffs = dm.interpolate_scalar(f);
            let mut max_err: f64 = 0.0;
            let mut s = 0.37_f64;
            for _ in 0..200 {
                s = (s * 997.0).fract();
                let x = s;
                s = (s * 997.0).fract();
                let y = s;
                let (_, g) = eval_at(&mesh, &dm, &coeffs, 0, x, y);
                max_err = max_err.max((g[0] - 3.0 * x * x).abs());
            }
            errs.push(max_err);
        }
        let r1 = (errs[0] / errs[1]).log2();
        let r2 = (errs[1] / errs[2]).log2();
        assert!(r1 > 1.7 && r2 > 1.7, "rates {r1}, {r2} (errors {errs:?})");
    }

    #[test]
    fn vector_interpolation_uses_blocked_layout() {
        let mesh = build_rect_mesh(Rect::unit(), 2, 2).unwrap();
        let dm = build_dofmap(&mesh, ElemKind::P2, 2).unwrap();
        let c = dm.interpolate_vector(|x, y| [x, 10.0 * y]);
        let n = dm.n_scalar;
        for (i, p) in dm.node_coords.iter().enumerate() {
            assert_eq!(c[i], p[0]);
            assert_eq!(c[n + i], 10.0 * p[1]);
        }
    }
}
