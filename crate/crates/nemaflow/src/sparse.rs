//! Compressed sparse row matrices and the iterative solvers used by the
//! schemes: Jacobi-preconditioned conjugate gradients for symmetric positive
//! (semi-)definite systems and BiCGStab for the nonsymmetric ones.
//!
//! Solvers never fail silently: if the relative residual target is not met
//! within the iteration budget they return a convergence error carrying the
//! last measured residual.

use crate::error::{Error, Result};

/// Default relative residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration budget.
pub const DEFAULT_MAXIT: usize = 10_000;

/// Absolute residual floor. A right-hand side already below this is pure
/// roundoff noise for order-one nondimensional fields and is treated as
/// solved by the zero vector; relative tolerances are meaningless there.
pub const DEFAULT_ATOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy)]
pub struct SolverOpts {
    pub tol: f64,
    pub maxit: usize,
    pub atol: f64,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts { tol: DEFAULT_TOL, maxit: DEFAULT_MAXIT, atol: DEFAULT_ATOL }
    }
}

impl SolverOpts {
    /// Relative tolerance that also honors the absolute floor for the given
    /// right-hand side norm.
    fn effective_tol(&self, bnorm: f64) -> f64 {
        self.tol.max(self.atol / bnorm)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds a matrix from coordinate triplets, summing duplicates.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Csr> {
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({r}, {c}) outside a {nrows} x {ncols} matrix"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for &(r, c, v) in &sorted {
            if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c && row_ptr[r + 1] > 0 {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr[r + 1] = col_idx.len();
        }
        // Rows without entries inherit the running offset.
        for r in 0..nrows {
            row_ptr[r + 1] = row_ptr[r + 1].max(row_ptr[r]);
        }
        Ok(Csr { nrows, ncols, row_ptr, col_idx, vals })
    }

    /// Creates a matrix with a fixed sparsity pattern and zero values.
    pub fn from_pattern(nrows: usize, ncols: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>) -> Csr {
        let nnz = col_idx.len();
        assert_eq!(row_ptr.len(), nrows + 1);
        assert_eq!(row_ptr[nrows], nnz);
        Csr { nrows, ncols, row_ptr, col_idx, vals: vec![0.0; nnz] }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Sets all stored values to zero, keeping the pattern.
    pub fn reset_values(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    /// Returns `A x` as a new vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// `y = A^T x`.
    pub fn transpose_matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.nrows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.vals[k] * xr;
            }
        }
    }

    /// Main diagonal (zero where absent from the pattern).
    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows];
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] = self.vals[k];
                    break;
                }
            }
        }
        d
    }

    /// Value position of entry `(r, c)` if present.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        self.col_idx[lo..hi].binary_search(&c).ok().map(|k| lo + k)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn subtract_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Preconditioned conjugate gradients on a matrix-free operator.
///
/// `deflate_constants` restricts the iteration to the complement of the
/// constant vector, which makes semidefinite operators with a constant null
/// space (Neumann problems, Schur complements of enclosed flow) solvable;
/// the right-hand side is mean-corrected and the solution returned mean-free.
pub fn cg_closure(
    context: &str,
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: Option<&[f64]>,
    opts: SolverOpts,
    deflate_constants: bool,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let mut b = b.to_vec();
    if deflate_constants {
        subtract_mean(&mut b);
    }
    let bnorm = norm(&b);
    if bnorm <= opts.atol {
        return Ok((vec![0.0; n], SolveStats { iterations: 0, residual: 0.0 }));
    }
    let tol = opts.effective_tol(bnorm);
    let mut x = match x0 {
        Some(x0) => {
            debug_assert_eq!(x0.len(), n);
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    if deflate_constants {
        subtract_mean(&mut x);
    }
    let mut r = vec![0.0; n];
    apply(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if deflate_constants {
        subtract_mean(&mut r);
    }
    // A stale warm start can be worse than starting cold; drop it then.
    if x0.is_some() && norm(&r) > bnorm {
        x.fill(0.0);
        r.copy_from_slice(&b);
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    if deflate_constants {
        subtract_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm(&r) / bnorm;
    let mut iterations = 0;
    for it in 0..opts.maxit {
        if res <= tol {
            break;
        }
        iterations = it + 1;
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::ConvergenceFailure {
                context: format!("{context}: operator not positive on Krylov vector"),
                iterations,
                residual: res,
                tolerance: tol,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        if deflate_constants {
            subtract_mean(&mut r);
        }
        res = norm(&r) / bnorm;
        precond(&r, &mut z);
        if deflate_constants {
            subtract_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // Recompute the true residual; the recursion can drift.
    apply(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if deflate_constants {
        subtract_mean(&mut r);
        subtract_mean(&mut x);
    }
    let true_res = norm(&r) / bnorm;
    if true_res > tol * 10.0 && true_res > res.max(f64::EPSILON) * 10.0 {
        return Err(Error::ConvergenceFailure {
            context: format!("{context}: recursion residual diverged from true residual"),
            iterations,
            residual: true_res,
            tolerance: tol,
        });
    }
    if true_res > tol && iterations >= opts.maxit {
        return Err(Error::ConvergenceFailure {
            context: context.to_string(),
            iterations,
            residual: true_res,
            tolerance: tol,
        });
    }
    Ok((x, SolveStats { iterations, residual: true_res }))
}

/// Right-preconditioned BiCGStab on a matrix-free operator.
pub fn bicgstab_closure(
    context: &str,
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: Option<&[f64]>,
    opts: SolverOpts,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm <= opts.atol {
        return Ok((vec![0.0; n], SolveStats { iterations: 0, residual: 0.0 }));
    }
    let tol = opts.effective_tol(bnorm);
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    apply(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let rhat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = norm(&r) / bnorm;
    let mut iterations = 0;
    for it in 0..opts.maxit {
        if res <= tol {
            break;
        }
        iterations = it + 1;
        let rho_new = dot(&rhat, &r);
        if rho_new.abs() < f64::MIN_POSITIVE {
            break; // breakdown; the final residual check decides
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond(&p, &mut phat);
        apply(&phat, &mut v);
        let rhat_v = dot(&rhat, &v);
        if rhat_v.abs() < f64::MIN_POSITIVE {
            break;
        }
        alpha = rho / rhat_v;
        // s reuses r's storage conceptually: s = r - alpha v.
        for i in 0..n {
            r[i] -= alpha * v[i];
        }
        if norm(&r) / bnorm <= tol {
            axpy(alpha, &phat, &mut x);
            break;
        }
        precond(&r, &mut shat);
        apply(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt < f64::MIN_POSITIVE {
            axpy(alpha, &phat, &mut x);
            break;
        }
        omega = dot(&t, &r) / tt;
        axpy(alpha, &phat, &mut x);
        axpy(omega, &shat, &mut x);
        for i in 0..n {
            r[i] -= omega * t[i];
        }
        res = norm(&r) / bnorm;
        if omega.abs() < f64::MIN_POSITIVE {
            break;
        }
    }
    // True residual check.
    let mut rr = vec![0.0; n];
    apply(&x, &mut rr);
    for i in 0..n {
        rr[i] = b[i] - rr[i];
    }
    let true_res = norm(&rr) / bnorm;
    if true_res > tol {
        return Err(Error::ConvergenceFailure {
            context: context.to_string(),
            iterations,
            residual: true_res,
            tolerance: tol,
        });
    }
    Ok((x, SolveStats { iterations, residual: true_res }))
}

fn jacobi_from(a: &Csr) -> Vec<f64> {
    a.diag()
        .into_iter()
        .map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

/// Solves a symmetric positive definite system by Jacobi-preconditioned CG.
pub fn solve_spd(
    context: &str,
    a: &Csr,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: SolverOpts,
) -> Result<(Vec<f64>, SolveStats)> {
    let inv_diag = jacobi_from(a);
    cg_closure(
        context,
        |x, y| a.matvec(x, y),
        |r, z| {
            for i in 0..r.len() {
                z[i] = inv_diag[i] * r[i];
            }
        },
        b,
        x0,
        opts,
        false,
    )
}

/// Solves a symmetric positive semidefinite system whose null space is the
/// constant vector (a pure Neumann problem). The right-hand side is
/// mean-corrected and the returned solution is mean-free.
pub fn solve_spd_mean_free(
    context: &str,
    a: &Csr,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: SolverOpts,
) -> Result<(Vec<f64>, SolveStats)> {
    let inv_diag = jacobi_from(a);
    cg_closure(
        context,
        |x, y| a.matvec(x, y),
        |r, z| {
            for i in 0..r.len() {
                z[i] = inv_diag[i] * r[i];
            }
        },
        b,
        x0,
        opts,
        true,
    )
}

/// Solves a general (possibly nonsymmetric) system by Jacobi-preconditioned
/// BiCGStab.
pub fn solve_general(
    context: &str,
    a: &Csr,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: SolverOpts,
) -> Result<(Vec<f64>, SolveStats)> {
    let inv_diag = jacobi_from(a);
    bicgstab_closure(
        context,
        |x, y| a.matvec(x, y),
        |r, z| {
            for i in 0..r.len() {
                z[i] = inv_diag[i] * r[i];
            }
        },
        b,
        x0,
        opts,
    )
}

/// Dense banded Cholesky factorization of a symmetric positive definite
/// matrix, used as a direct preconditioner for pressure-space operators.
/// Storage is row-major with `bw + 1` slots per row holding the lower band
/// `a[i][i - bw ..= i]`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factors a symmetric positive definite CSR matrix. The half bandwidth
    /// is taken from the sparsity pattern; entries outside the band are
    /// rejected by construction since the band covers every stored index.
    pub fn factor(context: &str, a: &Csr) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::InvalidArgument(format!(
                "banded Cholesky needs a square matrix, got {}x{}",
                a.nrows, a.ncols
            )));
        }
        let n = a.nrows;
        let mut bw = 0usize;
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[k];
                bw = bw.max(i.abs_diff(j));
            }
        }
        let stride = bw + 1;
        let mut band = vec![0.0; n * stride];
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[k];
                if j <= i {
                    band[i * stride + (bw - (i - j))] = a.vals[k];
                }
            }
        }
        // In-place banded Cholesky: band[i][bw] ends up holding L[i][i].
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                let mut s = band[i * stride + (bw - (i - j))];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= band[i * stride + (bw - (i - k))] * band[j * stride + (bw - (j - k))];
                }
                band[i * stride + (bw - (i - j))] = s / band[j * stride + bw];
            }
            let mut s = band[i * stride + bw];
            for k in lo..i {
                let v = band[i * stride + (bw - (i - k))];
                s -= v * v;
            }
            if s <= 0.0 {
                return Err(Error::InvariantViolation(format!(
                    "{context}: banded Cholesky hit a non-positive pivot {s:.3e} at row {i}"
                )));
            }
            band[i * stride + bw] = s.sqrt();
        }
        Ok(BandedCholesky { n, bw, band })
    }

    /// Solves `A x = b` using the stored factors.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let stride = bw + 1;
        x.copy_from_slice(b);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for k in lo..i {
                s -= self.band[i * stride + (bw - (i - k))] * x[k];
            }
            x[i] = s / self.band[i * stride + bw];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = x[i];
            for k in (i + 1)..=hi {
                s -= self.band[k * stride + (bw - (k - i))] * x[k];
            }
            x[i] = s / self.band[i * stride + bw];
        }
    }
}
