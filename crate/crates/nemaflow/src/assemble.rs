//! Finite-element assembly on a fixed mesh.
//!
//! An [`Assembler`] precomputes everything that does not change between time
//! steps: element geometry, shape values and physical gradients at the
//! quadrature points, and the sparsity patterns of every operator. Matrices
//! that depend on the evolving fields are reassembled each step by scattering
//! into a fresh copy of the cached pattern, which keeps the nonzero layout
//! (and therefore the floating-point summation order) identical across steps
//! and across runs.
//!
//! Vector-valued P2 fields use the component-blocked coefficient layout of
//! [`crate::space`]. Operators that act componentwise (mass, stiffness,
//! convection) are assembled as scalar matrices and applied per component;
//! only the director operator and the first-step stress couple components
//! and need the full two-by-two block structure.

use crate::error::Result;
use crate::mesh::{Mesh, Rect};
use crate::quad::{quad_rule, QuadRule};
use crate::space::{build_dofmap, p1_shape, p2_shape, p2_shape_grad, DofMap, ElemKind};
use crate::sparse::Csr;

/// Cached sparsity of a bilinear form between two scalar spaces.
struct Pattern {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// Position of local pair `(i, j)` of triangle `t` inside row `i`'s
    /// column slice: `rel[(t * si + i) * sj + j]`.
    rel: Vec<u32>,
    si: usize,
    sj: usize,
}

fn build_pattern(rows: &DofMap, cols: &DofMap, ntri: usize) -> Pattern {
    let si = rows.stride;
    let sj = cols.stride;
    let nr = rows.n_scalar;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nr];
    for t in 0..ntri {
        for &i in rows.tri(t) {
            adj[i].extend_from_slice(cols.tri(t));
        }
    }
    let mut row_ptr = Vec::with_capacity(nr + 1);
    row_ptr.push(0usize);
    let mut col_idx = Vec::new();
    for v in &mut adj {
        v.sort_unstable();
        v.dedup();
        col_idx.extend_from_slice(v);
        row_ptr.push(col_idx.len());
    }
    let mut rel = vec![0u32; ntri * si * sj];
    for t in 0..ntri {
        for (il, &i) in rows.tri(t).iter().enumerate() {
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            for (jl, &j) in cols.tri(t).iter().enumerate() {
                let pos = row.binary_search(&j).expect("pattern covers local pair");
                rel[(t * si + il) * sj + jl] = pos as u32;
            }
        }
    }
    Pattern { row_ptr, col_idx, rel, si, sj }
}

impl Pattern {
    fn scalar_shell(&self, ncols: usize) -> Csr {
        Csr::from_pattern(self.row_ptr.len() - 1, ncols, self.row_ptr.clone(), self.col_idx.clone())
    }

    /// Sparsity with both row and column spaces expanded to two components.
    fn full_shell(&self, nc_scalar: usize) -> Csr {
        let nr = self.row_ptr.len() - 1;
        let mut row_ptr = Vec::with_capacity(2 * nr + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::with_capacity(4 * self.col_idx.len());
        for _block in 0..2 {
            for i in 0..nr {
                let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
                col_idx.extend(cols.iter().map(|&c| c));
                col_idx.extend(cols.iter().map(|&c| nc_scalar + c));
                row_ptr.push(col_idx.len());
            }
        }
        Csr::from_pattern(2 * nr, 2 * nc_scalar, row_ptr, col_idx)
    }

    /// Sparsity with scalar rows and the column space expanded to two
    /// components.
    fn mixed_shell(&self, nc_scalar: usize) -> Csr {
        let nr = self.row_ptr.len() - 1;
        let mut row_ptr = Vec::with_capacity(nr + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::with_capacity(2 * self.col_idx.len());
        for i in 0..nr {
            let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
            col_idx.extend(cols.iter().map(|&c| c));
            col_idx.extend(cols.iter().map(|&c| nc_scalar + c));
            row_ptr.push(col_idx.len());
        }
        Csr::from_pattern(nr, 2 * nc_scalar, row_ptr, col_idx)
    }

    fn row_degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }
}

/// Precomputed geometry, shape data and sparsity for one mesh.
pub struct Assembler {
    pub rule: QuadRule,
    pub nq: usize,
    pub ntri: usize,
    /// Scalar P2 dofs.
    pub n2: usize,
    /// Scalar P1 dofs.
    pub n1: usize,
    pub domain: Rect,
    /// P2 shape values per quadrature point.
    phi2: Vec<[f64; 6]>,
    /// P1 shape values per quadrature point.
    phi1: Vec<[f64; 3]>,
    /// Absolute Jacobian determinant per triangle.
    detj: Vec<f64>,
    /// Physical P2 gradients, `ntri * nq` entries.
    gphi2: Vec<[[f64; 2]; 6]>,
    /// Physical P1 gradients (constant per triangle).
    gphi1: Vec<[[f64; 2]; 3]>,
    /// Physical coordinates of every quadrature point, `ntri * nq`.
    pub qp_xy: Vec<[f64; 2]>,
    p2_tris: Vec<[usize; 6]>,
    p1_tris: Vec<[usize; 3]>,
    p2_boundary: Vec<bool>,
    /// Coordinates of the scalar P2 dofs.
    pub p2_coords: Vec<[f64; 2]>,
    pat22: Pattern,
    pat11: Pattern,
    pat12: Pattern,
}

impl Assembler {
    pub fn new(mesh: &Mesh, quad_degree: usize) -> Result<Assembler> {
        let rule = quad_rule(quad_degree)?;
        let nq = rule.points.len();
        let p2 = build_dofmap(mesh, ElemKind::P2, 1)?;
        let p1 = build_dofmap(mesh, ElemKind::P1, 1)?;
        let ntri = mesh.n_triangles();

        let phi2: Vec<[f64; 6]> =
            rule.points.iter().map(|p| p2_shape(p[0], p[1])).collect();
        let dphi2: Vec<[[f64; 2]; 6]> =
            rule.points.iter().map(|p| p2_shape_grad(p[0], p[1])).collect();
        let phi1: Vec<[f64; 3]> =
            rule.points.iter().map(|p| p1_shape(p[0], p[1])).collect();
        let dphi1 = crate::space::p1_shape_grad();

        let mut detj = Vec::with_capacity(ntri);
        let mut gphi2 = Vec::with_capacity(ntri * nq);
        let mut gphi1 = Vec::with_capacity(ntri);
        let mut qp_xy = Vec::with_capacity(ntri * nq);
        for t in 0..ntri {
            let [a, b, c] = mesh.triangles[t];
            let pa = mesh.vertices[a];
            let pb = mesh.vertices[b];
            let pc = mesh.vertices[c];
            let j = [[pb[0] - pa[0], pc[0] - pa[0]], [pb[1] - pa[1], pc[1] - pa[1]]];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let invjt = [
                [j[1][1] / det, -j[1][0] / det],
                [-j[0][1] / det, j[0][0] / det],
            ];
            detj.push(det.abs());
            let to_phys = |g: [f64; 2]| {
                [
                    invjt[0][0] * g[0] + invjt[0][1] * g[1],
                    invjt[1][0] * g[0] + invjt[1][1] * g[1],
                ]
            };
            let mut g1 = [[0.0; 2]; 3];
            for k in 0..3 {
                g1[k] = to_phys(dphi1[k]);
            }
            gphi1.push(g1);
            for m in 0..nq {
                let mut g2 = [[0.0; 2]; 6];
                for k in 0..6 {
                    g2[k] = to_phys(dphi2[m][k]);
                }
                gphi2.push(g2);
                let r = rule.points[m];
                qp_xy.push([
                    pa[0] + j[0][0] * r[0] + j[0][1] * r[1],
                    pa[1] + j[1][0] * r[0] + j[1][1] * r[1],
                ]);
            }
        }

        let p2_tris: Vec<[usize; 6]> = (0..ntri)
            .map(|t| {
                let s = p2.tri(t);
                [s[0], s[1], s[2], s[3], s[4], s[5]]
            })
            .collect();
        let p1_tris: Vec<[usize; 3]> = (0..ntri)
            .map(|t| {
                let s = p1.tri(t);
                [s[0], s[1], s[2]]
            })
            .collect();

        let pat22 = build_pattern(&p2, &p2, ntri);
        let pat11 = build_pattern(&p1, &p1, ntri);
        let pat12 = build_pattern(&p1, &p2, ntri);

        Ok(Assembler {
            rule,
            nq,
            ntri,
            n2: p2.n_scalar,
            n1: p1.n_scalar,
            domain: mesh.domain,
            phi2,
            phi1,
            detj,
            gphi2,
            gphi1,
            qp_xy,
            p2_tris,
            p1_tris,
            p2_boundary: p2.boundary.clone(),
            p2_coords: p2.node_coords.clone(),
            pat22,
            pat11,
            pat12,
        })
    }

    /// Quadrature weight of point `m` in triangle `t` (includes the
    /// Jacobian).
    #[inline]
    fn wdet(&self, t: usize, m: usize) -> f64 {
        self.rule.weights[m] * self.detj[t]
    }

    pub fn domain_area(&self) -> f64 {
        let wsum: f64 = self.rule.weights.iter().sum();
        self.detj.iter().map(|d| d * wsum).sum()
    }

    /// Nodal interpolant of a pointwise vector field, blocked `[c0 | c1]`.
    pub fn interpolate_p2_vec(&self, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
        let n = self.n2;
        let mut out = vec![0.0; 2 * n];
        for (i, xy) in self.p2_coords.iter().enumerate() {
            let v = f(xy[0], xy[1]);
            out[i] = v[0];
            out[n + i] = v[1];
        }
        out
    }

    // ----- field evaluation at quadrature points -----

    /// Values of a blocked P2 vector field at every quadrature point.
    pub fn eval_p2_vec_qp(&self, f: &[f64]) -> Vec<[f64; 2]> {
        debug_assert_eq!(f.len(), 2 * self.n2);
        let n = self.n2;
        let mut out = vec![[0.0; 2]; self.ntri * self.nq];
        for t in 0..self.ntri {
            let dofs = &self.p2_tris[t];
            for m in 0..self.nq {
                let phi = &self.phi2[m];
                let mut v = [0.0; 2];
                for k in 0..6 {
                    v[0] += f[dofs[k]] * phi[k];
                    v[1] += f[n + dofs[k]] * phi[k];
                }
                out[t * self.nq + m] = v;
            }
        }
        out
    }

    /// Physical gradients of a blocked P2 vector field at every quadrature
    /// point; `out[q][a]` is the gradient of component `a`.
    pub fn eval_p2_grad_qp(&self, f: &[f64]) -> Vec<[[f64; 2]; 2]> {
        debug_assert_eq!(f.len(), 2 * self.n2);
        let n = self.n2;
        let mut out = vec![[[0.0; 2]; 2]; self.ntri * self.nq];
        for t in 0..self.ntri {
            let dofs = &self.p2_tris[t];
            for m in 0..self.nq {
                let g = &self.gphi2[t * self.nq + m];
                let mut gg = [[0.0; 2]; 2];
                for k in 0..6 {
                    let c0 = f[dofs[k]];
                    let c1 = f[n + dofs[k]];
                    gg[0][0] += c0 * g[k][0];
                    gg[0][1] += c0 * g[k][1];
                    gg[1][0] += c1 * g[k][0];
                    gg[1][1] += c1 * g[k][1];
                }
                out[t * self.nq + m] = gg;
            }
        }
        out
    }

    /// Values of a P1 scalar field at every quadrature point.
    pub fn eval_p1_qp(&self, p: &[f64]) -> Vec<f64> {
        debug_assert_eq!(p.len(), self.n1);
        let mut out = vec![0.0; self.ntri * self.nq];
        for t in 0..self.ntri {
            let dofs = &self.p1_tris[t];
            for m in 0..self.nq {
                let phi = &self.phi1[m];
                out[t * self.nq + m] =
                    p[dofs[0]] * phi[0] + p[dofs[1]] * phi[1] + p[dofs[2]] * phi[2];
            }
        }
        out
    }

    /// Pointwise penalty variable `(|d|^2 - 1) / eps^2` at the quadrature
    /// points of a P2 director field.
    pub fn q_from_director(&self, d: &[f64], eps: f64) -> Vec<f64> {
        let vals = self.eval_p2_vec_qp(d);
        vals.iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] - 1.0) / (eps * eps))
            .collect()
    }

    // ----- scalar matrices -----

    pub fn p1_mass(&self) -> Csr {
        let mut a = self.pat11.scalar_shell(self.n1);
        for t in 0..self.ntri {
            let mut local = [[0.0; 3]; 3];
            for m in 0..self.nq {
                let w = self.wdet(t, m);
                let phi = &self.phi1[m];
                for i in 0..3 {
                    for j in 0..3 {
                        local[i][j] += w * phi[i] * phi[j];
                    }
                }
            }
            self.scatter_scalar(&mut a, &self.pat11, t, &self.p1_tris[t], |i, j| local[i][j]);
        }
        a
    }

    pub fn p1_stiffness(&self) -> Csr {
        let wsum: f64 = self.rule.weights.iter().sum();
        let mut a = self.pat11.scalar_shell(self.n1);
        for t in 0..self.ntri {
            let g = &self.gphi1[t];
            let w = wsum * self.detj[t];
            self.scatter_scalar(&mut a, &self.pat11, t, &self.p1_tris[t], |i, j| {
                w * (g[i][0] * g[j][0] + g[i][1] * g[j][1])
            });
        }
        a
    }

    pub fn p2_mass(&self) -> Csr {
        self.p2_scalar_operator(1.0, 0.0, None, false)
    }

    pub fn p2_stiffness(&self) -> Csr {
        self.p2_scalar_operator(0.0, 1.0, None, false)
    }

    /// Fused scalar P2 operator
    /// `mass_coef * M + stiff_coef * K + C(u)`
    /// where `C(u)` is the convection form `((u . grad) phi_j, phi_i)`, made
    /// skew-symmetric by `+ (1/2) ((div u) phi_j, phi_i)` when `skew` is set.
    /// `u` is a blocked P2 vector field.
    pub fn p2_scalar_operator(
        &self,
        mass_coef: f64,
        stiff_coef: f64,
        u: Option<&[f64]>,
        skew: bool,
    ) -> Csr {
        let mut a = self.pat22.scalar_shell(self.n2);
        let n = self.n2;
        for t in 0..self.ntri {
            let dofs = &self.p2_tris[t];
            let mut local = [[0.0; 6]; 6];
            for m in 0..self.nq {
                let w = self.wdet(t, m);
                let phi = &self.phi2[m];
                let g = &self.gphi2[t * self.nq + m];
                let (uv, divu) = match u {
                    Some(u) => {
                        let mut v = [0.0; 2];
                        let mut du = 0.0;
                        for k in 0..6 {
                            let c0 = u[dofs[k]];
                            let c1 = u[n + dofs[k]];
                            v[0] += c0 * phi[k];
                            v[1] += c1 * phi[k];
                            du += c0 * g[k][0] + c1 * g[k][1];
                        }
                        (v, du)
                    }
                    None => ([0.0; 2], 0.0),
                };
                for i in 0..6 {
                    for j in 0..6 {
                        let mut v = mass_coef * phi[i] * phi[j]
                            + stiff_coef * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                        if u.is_some() {
                            v += (uv[0] * g[j][0] + uv[1] * g[j][1]) * phi[i];
                            if skew {
                                v += 0.5 * divu * phi[i] * phi[j];
                            }
                        }
                        local[i][j] += w * v;
                    }
                }
            }
            self.scatter_scalar(&mut a, &self.pat22, t, dofs, |i, j| local[i][j]);
        }
        a
    }

    /// Fused blocked P2 operator on vector fields:
    /// `delta_ab [mass_coef M + rho(x) M + stiff_coef K + C(u)] + G_ab(x) M`.
    ///
    /// `rho_qp` is a scalar weight and `g_qp` a symmetric tensor weight
    /// packed `[xx, xy, yy]`, both sampled at the quadrature points
    /// (`ntri * nq` entries). `conv_u` adds plain (non-skew) convection.
    pub fn p2_full_operator(
        &self,
        mass_coef: f64,
        stiff_coef: f64,
        rho_qp: Option<&[f64]>,
        g_qp: Option<&[[f64; 3]]>,
        conv_u: Option<&[f64]>,
    ) -> Csr {
        let mut a = self.pat22.full_shell(self.n2);
        let n = self.n2;
        for t in 0..self.ntri {
            let dofs = &self.p2_tris[t];
            // local[(a * 6 + i)][(b * 6 + j)]
            let mut local = [[0.0; 12]; 12];
            for m in 0..self.nq {
                let q = t * self.nq + m;
                let w = self.wdet(t, m);
                let phi = &self.phi2[m];
                let g = &self.gphi2[q];
                let rho = rho_qp.map_or(0.0, |r| r[q]);
                let ten = g_qp.map_or([0.0; 3], |gq| gq[q]);
                let uv = match conv_u {
                    Some(u) => {
                        let mut v = [0.0; 2];
                        for k in 0..6 {
                            v[0] += u[dofs[k]] * phi[k];
                            v[1] += u[n + dofs[k]] * phi[k];
                        }
                        v
                    }
                    None => [0.0; 2],
                };
                for i in 0..6 {
                    for j in 0..6 {
                        let mass = phi[i] * phi[j];
                        let mut diag = (mass_coef + rho) * mass
                            + stiff_coef * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                        if conv_u.is_some() {
                            diag += (uv[0] * g[j][0] + uv[1] * g[j][1]) * phi[i];
                        }
                        local[i][j] += w * (diag + ten[0] * mass);
                        local[i][6 + j] += w * ten[1] * mass;
                        local[6 + i][j] += w * ten[1] * mass;
                        local[6 + i][6 + j] += w * (diag + ten[2] * mass);
                    }
                }
            }
            self.scatter_full(&mut a, t, dofs, &local);
        }
        a
    }

    /// Divergence coupling `B` with entries `((div phi_(a,i)), psi)` for P1
    /// test functions `psi`; shape `n1 x 2 n2`.
    pub fn divergence_matrix(&self) -> Csr {
        let mut a = self.pat12.mixed_shell(self.n2);
        for t in 0..self.ntri {
            let rows = &self.p1_tris[t];
            let mut local = [[[0.0; 6]; 2]; 3]; // [i_p1][comp][j_p2]
            for m in 0..self.nq {
                let w = self.wdet(t, m);
                let phi1 = &self.phi1[m];
                let g = &self.gphi2[t * self.nq + m];
                for i in 0..3 {
                    for j in 0..6 {
                        local[i][0][j] += w * phi1[i] * g[j][0];
                        local[i][1][j] += w * phi1[i] * g[j][1];
                    }
                }
            }
            for (il, &i) in rows.iter().enumerate() {
                let base = a.row_ptr[i];
                let deg = self.pat12.row_degree(i);
                for b in 0..2 {
                    for jl in 0..6 {
                        let rel = self.pat12.rel[(t * 3 + il) * 6 + jl] as usize;
                        a.vals[base + b * deg + rel] += local[il][b][jl];
                    }
                }
            }
        }
        a
    }

    fn scatter_scalar(
        &self,
        a: &mut Csr,
        pat: &Pattern,
        t: usize,
        dofs: &[usize],
        local: impl Fn(usize, usize) -> f64,
    ) {
        let si = pat.si;
        let sj = pat.sj;
        for (il, &i) in dofs.iter().take(si).enumerate() {
            let base = a.row_ptr[i];
            for jl in 0..sj {
                let rel = pat.rel[(t * si + il) * sj + jl] as usize;
                a.vals[base + rel] += local(il, jl);
            }
        }
    }

    fn scatter_full(&self, a: &mut Csr, t: usize, dofs: &[usize; 6], local: &[[f64; 12]; 12]) {
        let n = self.n2;
        for ab in 0..2 {
            for (il, &i) in dofs.iter().enumerate() {
                let row = ab * n + i;
                let base = a.row_ptr[row];
                let deg = self.pat22.row_degree(i);
                for bb in 0..2 {
                    for jl in 0..6 {
                        let rel = self.pat22.rel[(t * 6 + il) * 6 + jl] as usize;
                        a.vals[base + bb * deg + rel] += local[ab * 6 + il][bb * 6 + jl];
                    }
                }
            }
        }
    }

    // ----- load vectors (blocked P2 test space unless stated) -----

    /// `(f, phi)` for an analytic right-hand side.
    pub fn vector_load(&self, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
        let n = self.n2;
        let mut out = vec![0.0; 2 * n];
        for t in 0..self.ntri {
            let dofs = &self.p2_tris[t];
            for m in 0..self.nq {
                let w = self.wdet(t, m);
                let xy = self.qp_xy[t * self.nq + m];
                let v = f(xy[0], xy[1]);
                let phi = &self.phi2[m];
                for k in 0..6 {
                    out[dofs[k]] += w * v[0] * phi[k];
                    out[n + dofs[k]] += w * v[1] * phi[k];
                }
            }
        }
        out
    }

    /// `((u . grad) d, phi)` from precomputed quadrature values of `u` and
    /// the gradient of `d`.
    pub fn transport_load_qp(&self, u_qp: &[[f64; 2]], dgrad_qp: &[[[f64; 2]; 2]]) -> Vec<f64> {
        let n = self.n2;
        let mut out = vec![0.0; 2 * n];
        for t in 0..self.ntri {
            let dofs = &self.p2_tris[t];
            for m in 0..self.nq {
                let q = t * self.nq + m;
                let w = self.wdet(t, m);
                let u = u_qp[q];
                let dg = dgrad_qp[q];
                let v0 = u[0] * dg[0][0] + u[1] * dg[0][1];
                let v1 = u[0] * dg[1][0] + u[1] * dg[1][1];
                let phi = &self.phi2[m];
                for k in 0..6 {
                    out[dofs[k]] += w * v0 * phi[k];
                    out[n + dofs[k]] += w * v1 * phi[k];
                }
            }
        }
        out
    }

    /// `((grad d)^T w, phi)` from precomputed quadrature values.
    pub fn elastic_load_qp(&self, dgrad_qp: &[[[f64; 2]; 2]], w_qp: &[[f64; 2]]) -> Vec<f64> {
        let n = self.n2;
        let mut out = vec![0.0; 2 * n];
        for t in 0..self.ntri {
            let dofs = &self.p2_tris[t];
            for m in 0..self.nq {
                let q = t * self.nq + m;
                let w = self.wdet(t, m);
                let dg = dgrad_qp[q];
                let wv = w_qp[q];
                // Component a of (grad d)^T w is sum_b (d_a d_b) w_b.
                let v0 = dg[0][0] * wv[0] + dg[1][0] * wv[1];
                let v1 = dg[0][1] * wv[0] + dg[1][1] * wv[1];
                let phi = &self.phi2[m];
                for k in 0..6 {
                    out[dofs[k]] += w * v0 * phi[k];
                    out[n + dofs[k]] += w * v1 * phi[k];
                }
            }
        }
        out
    }

    /// `(grad p, phi)` for a P1 pressure.
    pub fn pressure_gradient_load(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n2;
        let mut out = vec![0.0; 2 * n];
        for t in 0..self.ntri {
            let dofs = &self.p2_tris[t];
            let rows = &self.p1_tris[t];
            let g1 = &self.gphi1[t];
            // P1 gradient is constant on the triangle.
            let gp = [
                p[rows[0]] * g1[0][0] + p[rows[1]] * g1[1][0] + p[rows[2]] * g1[2][0],
                p[rows[0]] * g1[0][1] + p[rows[1]] * g1[1][1] + p[rows[2]] * g1[2][1],
            ];
            for m in 0..self.nq {
                let w = self.wdet(t, m);
                let phi = &self.phi2[m];
                for k in 0..6 {
                    out[dofs[k]] += w * gp[0] * phi[k];
                    out[n + dofs[k]] += w * gp[1] * phi[k];
                }
            }
        }
        out
    }

    /// `((div u), psi)` for P1 test functions.
    pub fn divergence_load(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n2;
        let mut out = vec![0.0; self.n1];
        for t in 0..self.ntri {
            let dofs = &self.p2_tris[t];
            let rows = &self.p1_tris[t];
            for m in 0..self.nq {
                let w = self.wdet(t, m);
                let g = &self.gphi2[t * self.nq + m];
                let mut div = 0.0;
                for k in 0..6 {
                    div += u[dofs[k]] * g[k][0] + u[n + dofs[k]] * g[k][1];
                }
                let phi1 = &self.phi1[m];
                for i in 0..3 {
                    out[rows[i]] += w * div * phi1[i];
                }
            }
        }
        out
    }

    /// `(scale(x) d(x), phi)` with a quadrature-point scale, used for the
    /// penalty history terms.
    pub fn scaled_director_load_qp(
        &self,
        scale_qp: &[f64],
        d_qp: &[[f64; 2]],
        coeff: f64,
    ) -> Vec<f64> {
        let n = self.n2;
        let mut out = vec![0.0; 2 * n];
        for t in 0..self.ntri {
            let dofs = &self.p2_tris[t];
            for m in 0..self.nq {
                let q = t * self.nq + m;
                let w = coeff * self.wdet(t, m) * scale_qp[q];
                let d = d_qp[q];
                let phi = &self.phi2[m];
                for k in 0..6 {
                    out[dofs[k]] += w * d[0] * phi[k];
                    out[n + dofs[k]] += w * d[1] * phi[k];
                }
            }
        }
        out
    }

    /// `coeff ((d . h)(x) d(x), phi)` for quadrature values of `d` and `h`;
    /// the rank-one projection load of the stabilized penalty term.
    pub fn projected_director_load_qp(
        &self,
        d_qp: &[[f64; 2]],
        h_qp: &[[f64; 2]],
        coeff: f64,
    ) -> Vec<f64> {
        let n = self.n2;
        let mut out = vec![0.0; 2 * n];
        for t in 0..self.ntri {
            let dofs = &self.p2_tris[t];
            for m in 0..self.nq {
                let q = t * self.nq + m;
                let d = d_qp[q];
                let h = h_qp[q];
                let w = coeff * self.wdet(t, m) * (d[0] * h[0] + d[1] * h[1]);
                let phi = &self.phi2[m];
                for k in 0..6 {
                    out[dofs[k]] += w * d[0] * phi[k];
                    out[n + dofs[k]] += w * d[1] * phi[k];
                }
            }
        }
        out
    }

    /// `(((u . grad) u), phi)`: the explicit convection load.
    pub fn convection_load_qp(&self, u_qp: &[[f64; 2]], ugrad_qp: &[[[f64; 2]; 2]]) -> Vec<f64> {
        self.transport_load_qp(u_qp, ugrad_qp)
    }

    // ----- quadrature functionals -----

    /// Integral of a per-quadrature-point integrand over the domain.
    pub fn integrate_qp(&self, f_qp: &[f64]) -> f64 {
        debug_assert_eq!(f_qp.len(), self.ntri * self.nq);
        let mut acc = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                acc += self.wdet(t, m) * f_qp[t * self.nq + m];
            }
        }
        acc
    }

    pub fn l2_sq_vec_qp(&self, v_qp: &[[f64; 2]]) -> f64 {
        let mut acc = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                let v = v_qp[t * self.nq + m];
                acc += self.wdet(t, m) * (v[0] * v[0] + v[1] * v[1]);
            }
        }
        acc
    }

    pub fn h1semi_sq_grad_qp(&self, g_qp: &[[[f64; 2]; 2]]) -> f64 {
        let mut acc = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                let g = g_qp[t * self.nq + m];
                acc += self.wdet(t, m)
                    * (g[0][0] * g[0][0]
                        + g[0][1] * g[0][1]
                        + g[1][0] * g[1][0]
                        + g[1][1] * g[1][1]);
            }
        }
        acc
    }

    /// `|| div v ||^2` from gradient quadrature values.
    pub fn div_sq_grad_qp(&self, g_qp: &[[[f64; 2]; 2]]) -> f64 {
        let mut acc = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                let g = g_qp[t * self.nq + m];
                let d = g[0][0] + g[1][1];
                acc += self.wdet(t, m) * d * d;
            }
        }
        acc
    }

    /// `|| curl v ||^2` (scalar curl in 2D) from gradient quadrature values.
    pub fn curl_sq_grad_qp(&self, g_qp: &[[[f64; 2]; 2]]) -> f64 {
        let mut acc = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                let g = g_qp[t * self.nq + m];
                let c = g[1][0] - g[0][1];
                acc += self.wdet(t, m) * c * c;
            }
        }
        acc
    }

    /// `int scale(x)^2` for a quadrature-point field.
    pub fn qp_l2_sq(&self, scale_qp: &[f64]) -> f64 {
        let mut acc = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                let s = scale_qp[t * self.nq + m];
                acc += self.wdet(t, m) * s * s;
            }
        }
        acc
    }

    /// `int p` over the domain for a P1 field.
    pub fn integral_p1(&self, p: &[f64]) -> f64 {
        let vals = self.eval_p1_qp(p);
        let mut acc = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                acc += self.wdet(t, m) * vals[t * self.nq + m];
            }
        }
        acc
    }

    /// `((u . grad) d, w)` from quadrature values; the coupling inner product
    /// of the auxiliary-variable solve.
    pub fn inner_transport_qp(
        &self,
        u_qp: &[[f64; 2]],
        dgrad_qp: &[[[f64; 2]; 2]],
        w_qp: &[[f64; 2]],
    ) -> f64 {
        let mut acc = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                let q = t * self.nq + m;
                let u = u_qp[q];
                let dg = dgrad_qp[q];
                let w = w_qp[q];
                let v0 = u[0] * dg[0][0] + u[1] * dg[0][1];
                let v1 = u[0] * dg[1][0] + u[1] * dg[1][1];
                acc += self.wdet(t, m) * (v0 * w[0] + v1 * w[1]);
            }
        }
        acc
    }

    // ----- error norms against analytic fields -----

    pub fn l2_error_sq_vec(&self, f: &[f64], exact: impl Fn(f64, f64) -> [f64; 2]) -> f64 {
        let vals = self.eval_p2_vec_qp(f);
        let mut acc = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                let q = t * self.nq + m;
                let xy = self.qp_xy[q];
                let e = exact(xy[0], xy[1]);
                let v = vals[q];
                let d0 = v[0] - e[0];
                let d1 = v[1] - e[1];
                acc += self.wdet(t, m) * (d0 * d0 + d1 * d1);
            }
        }
        acc
    }

    pub fn h1semi_error_sq_vec(
        &self,
        f: &[f64],
        exact_grad: impl Fn(f64, f64) -> [[f64; 2]; 2],
    ) -> f64 {
        let grads = self.eval_p2_grad_qp(f);
        let mut acc = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                let q = t * self.nq + m;
                let xy = self.qp_xy[q];
                let e = exact_grad(xy[0], xy[1]);
                let g = grads[q];
                for a in 0..2 {
                    for b in 0..2 {
                        let d = g[a][b] - e[a][b];
                        acc += self.wdet(t, m) * d * d;
                    }
                }
            }
        }
        acc
    }

    /// L2 error of a P1 pressure against an analytic field after matching
    /// means (the discrete pressure is only determined up to a constant).
    pub fn l2_error_sq_p1_mean_matched(
        &self,
        p: &[f64],
        exact: impl Fn(f64, f64) -> f64,
    ) -> f64 {
        let vals = self.eval_p1_qp(p);
        let area = self.domain_area();
        let mut mean_h = 0.0;
        let mut mean_e = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                let q = t * self.nq + m;
                let xy = self.qp_xy[q];
                mean_h += self.wdet(t, m) * vals[q];
                mean_e += self.wdet(t, m) * exact(xy[0], xy[1]);
            }
        }
        mean_h /= area;
        mean_e /= area;
        let mut acc = 0.0;
        for t in 0..self.ntri {
            for m in 0..self.nq {
                let q = t * self.nq + m;
                let xy = self.qp_xy[q];
                let d = (vals[q] - mean_h) - (exact(xy[0], xy[1]) - mean_e);
                acc += self.wdet(t, m) * d * d;
            }
        }
        acc
    }

    // ----- boundary handling -----

    /// Scalar P2 boundary flags.
    pub fn p2_boundary_flags(&self) -> &[bool] {
        &self.p2_boundary
    }

    /// Blocked flags marking every boundary dof of both components.
    pub fn p2_vector_boundary_flags(&self) -> Vec<bool> {
        let mut flags = Vec::with_capacity(2 * self.n2);
        flags.extend_from_slice(&self.p2_boundary);
        flags.extend_from_slice(&self.p2_boundary);
        flags
    }

    /// Per-component flags enforcing the impermeability constraint
    /// `u . n = 0`: component 0 on the vertical sides, component 1 on the
    /// horizontal sides (corners constrain both).
    pub fn p2_normal_flags(&self) -> (Vec<bool>, Vec<bool>) {
        let c0 = self
            .p2_coords
            .iter()
            .map(|p| self.domain.on_vertical_side(p[0], p[1]))
            .collect();
        let c1 = self
            .p2_coords
            .iter()
            .map(|p| self.domain.on_horizontal_side(p[0], p[1]))
            .collect();
        (c0, c1)
    }

    /// Eliminates constrained dofs from a square matrix: rows and columns of
    /// flagged dofs are zeroed and their diagonal set to one. Only
    /// homogeneous constraints are supported, so right-hand sides just need
    /// their flagged entries zeroed (see [`zero_constrained`]).
    pub fn apply_dirichlet(&self, a: &mut Csr, flags: &[bool]) {
        debug_assert_eq!(a.nrows, flags.len());
        debug_assert_eq!(a.ncols, flags.len());
        for r in 0..a.nrows {
            let fr = flags[r];
            for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                let c = a.col_idx[k];
                if fr || flags[c] {
                    a.vals[k] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
    }
}

/// Zeroes the flagged entries of a vector (homogeneous constraints).
pub fn zero_constrained(v: &mut [f64], flags: &[bool]) {
    for (x, &f) in v.iter_mut().zip(flags) {
        if f {
            *x = 0.0;
        }
    }
}
