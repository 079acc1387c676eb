//! Structured triangulations of axis-aligned rectangles.
//!
//! Every cell of an `nx` by `ny` grid is split along the diagonal from its
//! lower-left to its upper-right corner, producing two counterclockwise
//! triangles. Vertices are numbered row by row from the bottom-left corner;
//! edges are numbered in first-encounter order while scanning triangles.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Geometric tolerance for deciding whether a point lies on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// An axis-aligned rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn unit() -> Rect {
        Rect { xmin: 0.0, xmax: 1.0, ymin: 0.0, ymax: 1.0 }
    }

    pub fn centered(half: f64) -> Rect {
        Rect { xmin: -half, xmax: half, ymin: -half, ymax: half }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// True if `(x, y)` lies on the boundary up to [`BOUNDARY_TOL`].
    pub fn on_boundary(&self, x: f64, y: f64) -> bool {
        (x - self.xmin).abs() <= BOUNDARY_TOL
            || (x - self.xmax).abs() <= BOUNDARY_TOL
            || (y - self.ymin).abs() <= BOUNDARY_TOL
            || (y - self.ymax).abs() <= BOUNDARY_TOL
    }

    /// True if `(x, y)` lies on one of the two vertical sides.
    pub fn on_vertical_side(&self, x: f64, _y: f64) -> bool {
        (x - self.xmin).abs() <= BOUNDARY_TOL || (x - self.xmax).abs() <= BOUNDARY_TOL
    }

    /// True if `(x, y)` lies on one of the two horizontal sides.
    pub fn on_horizontal_side(&self, _x: f64, y: f64) -> bool {
        (y - self.ymin).abs() <= BOUNDARY_TOL || (y - self.ymax).abs() <= BOUNDARY_TOL
    }
}

/// A conforming triangulation with the edge data needed by quadratic
/// elements.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: Rect,
    pub nx: usize,
    pub ny: usize,
    /// Vertex coordinates, `(nx + 1) (ny + 1)` entries.
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Unique undirected edges as sorted vertex pairs.
    pub edges: Vec<[usize; 2]>,
    /// Midpoint coordinates of each edge.
    pub edge_midpoints: Vec<[f64; 2]>,
    /// `tri_edges[t][k]` is the edge opposite local vertex `k` of triangle `t`.
    pub tri_edges: Vec<[usize; 3]>,
    /// Per-vertex boundary flag.
    pub boundary_vertex: Vec<bool>,
    /// Per-edge boundary flag (both endpoints and the midpoint on `∂Ω`).
    pub boundary_edge: Vec<bool>,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Grid spacing in x.
    pub fn hx(&self) -> f64 {
        self.domain.width() / self.nx as f64
    }

    /// Grid spacing in y.
    pub fn hy(&self) -> f64 {
        self.domain.height() / self.ny as f64
    }

    /// Signed double area of triangle `t`; positive for counterclockwise
    /// orientation.
    pub fn double_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let pc = self.vertices[c];
        (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
    }

    /// Locates the triangle containing the point and returns reference
    /// coordinates within it. Points outside the domain are clamped onto it.
    pub fn locate_point(&self, x: f64, y: f64) -> (usize, [f64; 2]) {
        let hx = self.hx();
        let hy = self.hy();
        let fx = ((x - self.domain.xmin) / hx).clamp(0.0, self.nx as f64 - 1e-12);
        let fy = ((y - self.domain.ymin) / hy).clamp(0.0, self.ny as f64 - 1e-12);
        let i = (fx.floor() as usize).min(self.nx - 1);
        let j = (fy.floor() as usize).min(self.ny - 1);
        let xi = (fx - i as f64).clamp(0.0, 1.0);
        let eta = (fy - j as f64).clamp(0.0, 1.0);
        let cell = 2 * (j * self.nx + i);
        if eta <= xi {
            // Lower triangle (v00, v10, v11): x_ref = xi - eta, y_ref = eta.
            (cell, [xi - eta, eta])
        } else {
            // Upper triangle (v00, v11, v01): x_ref = xi, y_ref = eta - xi.
            (cell + 1, [xi, eta - xi])
        }
    }
}

/// Builds a structured triangulation of `domain` with `nx` by `ny` cells.
pub fn build_rect_mesh(domain: Rect, nx: usize, ny: usize) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "mesh resolution must be positive, got {nx} x {ny}"
        )));
    }
    if !(domain.width() > 0.0 && domain.height() > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "degenerate domain [{}, {}] x [{}, {}]",
            domain.xmin, domain.xmax, domain.ymin, domain.ymax
        )));
    }

    let hx = domain.width() / nx as f64;
    let hy = domain.height() / ny as f64;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        // Exact corners keep boundary classification robust.
        let y = if j == ny { domain.ymax } else { domain.ymin + j as f64 * hy };
        for i in 0..=nx {
            let x = if i == nx { domain.xmax } else { domain.xmin + i as f64 * hx };
            vertices.push([x, y]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = j * (nx + 1) + i;
            let v10 = v00 + 1;
            let v01 = v00 + (nx + 1);
            let v11 = v01 + 1;
            // Diagonal from the lower-left to the upper-right corner.
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    // Number edges deterministically in first-encounter order.
    let mut edge_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut edges: Vec<[usize; 2]> = Vec::new();
    let mut tri_edges = Vec::with_capacity(triangles.len());
    for tri in &triangles {
        let mut local = [0usize; 3];
        for k in 0..3 {
            let a = tri[(k + 1) % 3];
            let b = tri[(k + 2) % 3];
            let key = (a.min(b), a.max(b));
            let idx = *edge_index.entry(key).or_insert_with(|| {
                edges.push([key.0, key.1]);
                edges.len() - 1
            });
            local[k] = idx;
        }
        tri_edges.push(local);
    }

    let edge_midpoints: Vec<[f64; 2]> = edges
        .iter()
        .map(|e| {
            let a = vertices[e[0]];
            let b = vertices[e[1]];
            [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
        })
        .collect();

    let boundary_vertex: Vec<bool> =
        vertices.iter().map(|p| domain.on_boundary(p[0], p[1])).collect();
    let boundary_edge: Vec<bool> = edges
        .iter()
        .zip(&edge_midpoints)
        .map(|(e, m)| {
            boundary_vertex[e[0]] && boundary_vertex[e[1]] && domain.on_boundary(m[0], m[1])
        })
        .collect();

    Ok(Mesh {
        domain,
        nx,
        ny,
        vertices,
        triangles,
        edges,
        edge_midpoints,
        tri_edges,
        boundary_vertex,
        boundary_edge,
    })
}

/// Returns the sorted index sets of boundary vertices and boundary edges.
pub fn classify_boundary(mesh: &Mesh) -> (Vec<usize>, Vec<usize>) {
    let verts = mesh
        .boundary_vertex
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    let edges = mesh
        .boundary_edge
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    (verts, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_mesh_counts() {
        let mesh = build_rect_mesh(Rect::unit(), 1, 1).unwrap();
        assert_eq!(mesh.n_vertices(), 4);
        assert_eq!(mesh.n_triangles(), 2);
        assert_eq!(mesh.n_edges(), 5);
        let (bv, be) = classify_boundary(&mesh);
        assert_eq!(bv.len(), 4);
        assert_eq!(be.len(), 4);
    }

    #[test]
    fn euler_characteristic_and_boundary_counts() {
        for (nx, ny) in [(1, 1), (2, 3), (5, 4), (8, 8)] {
            let mesh = build_rect_mesh(Rect::centered(1.0), nx, ny).unwrap();
            let v = mesh.n_vertices() as isize;
            let e = mesh.n_edges() as isize;
            let f = mesh.n_triangles() as isize;
            assert_eq!(v - e + f, 1, "disc Euler characteristic for {nx} x {ny}");
            let (_, be) = classify_boundary(&mesh);
            assert_eq!(be.len(), 2 * (nx + ny), "boundary edges for {nx} x {ny}");
        }
    }

    #[test]
    fn triangles_are_counterclockwise_and_tile_the_domain() {
        let mesh = build_rect_mesh(Rect { xmin: -1.0, xmax: 2.0, ymin: 0.5, ymax: 1.5 }, 4, 3)
            .unwrap();
        let mut area = 0.0;
        for t in 0..mesh.n_triangles() {
            let da = mesh.double_area(t);
            assert!(da > 0.0, "triangle {t} not counterclockwise");
            area += 0.5 * da;
        }
        assert!((area - mesh.domain.area()).abs() < 1e-12);
    }

    #[test]
    fn locate_point_is_consistent_with_triangle_geometry() {
        let mesh = build_rect_mesh(Rect::centered(1.0), 5, 7).unwrap();
        let probe = [
            [-0.93, -0.41],
            [0.0, 0.0],
            [0.99, 0.99],
            [-1.0, 1.0],
            [0.3, -0.77],
        ];
        for &[x, y] in &probe {
            let (t, xr) = mesh.locate_point(x, y);
            assert!(xr[0] >= -1e-12 && xr[1] >= -1e-12 && xr[0] + xr[1] <= 1.0 + 1e-12);
            // Map the reference point back through the affine map.
            let [a, b, c] = mesh.triangles[t];
            let pa = mesh.vertices[a];
            let pb = mesh.vertices[b];
            let pc = mesh.vertices[c];
            let px = pa[0] + (pb[0] - pa[0]) * xr[0] + (pc[0] - pa[0]) * xr[1];
            let py = pa[1] + (pb[1] - pa[1]) * xr[0] + (pc[1] - pa[1]) * xr[1];
            assert!((px - x).abs() < 1e-12 && (py - y).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_opposite_pairing_is_consistent() {
        let mesh = build_rect_mesh(Rect::unit(), 3, 2).unwrap();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            for k in 0..3 {
                let e = mesh.edges[mesh.tri_edges[t][k]];
                assert!(!e.contains(&tri[k]), "edge opposite vertex {k} touches it");
                assert!(e.contains(&tri[(k + 1) % 3]));
                assert!(e.contains(&tri[(k + 2) % 3]));
            }
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(build_rect_mesh(Rect::unit(), 0, 3).is_err());
        let bad = Rect { xmin: 0.0, xmax: 0.0, ymin: 0.0, ymax: 1.0 };
        assert!(build_rect_mesh(bad, 2, 2).is_err());
    }
}
