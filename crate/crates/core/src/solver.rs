//! Linear solvers for the assembled systems.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Accepted solves must satisfy ‖Ax − b‖ / ‖b‖ below this.
pub const BACKWARD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Direct,
    Bicgstab,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(SolverKind::Direct),
            "bicgstab" => Ok(SolverKind::Bicgstab),
            other => Err(Error::InvalidArgument(format!("unknown solver '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverOptions {
    pub kind: SolverKind,
    /// Relative residual target of the iterative path.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kind: SolverKind::Direct,
            tolerance: 1e-12,
            max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub solution: Vec<f64>,
    pub relative_residual: f64,
    pub method: SolverKind,
    pub unknowns: usize,
    pub nnz: usize,
    /// Iterations (iterative path) or refinement steps (direct path).
    pub iterations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    a.matvec(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect()
}

fn relative(r: &[f64], b: &[f64]) -> f64 {
    let nb = norm(b);
    if nb == 0.0 {
        norm(r)
    } else {
        norm(r) / nb
    }
}

pub fn solve(a: &CsrMatrix, b: &[f64], options: &SolverOptions) -> Result<SolveReport> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs has length {}, matrix has {} rows",
            b.len(),
            a.nrows()
        )));
    }
    match options.kind {
        SolverKind::Direct => solve_direct(a, b),
        SolverKind::Bicgstab => solve_bicgstab(a, b, options),
    }
}

/// Sparse LU with partial pivoting, followed by up to three steps of iterative
/// refinement when the backward error is above [`BACKWARD_TOL`].
fn solve_direct(a: &CsrMatrix, b: &[f64]) -> Result<SolveReport> {
    let n = a.nrows();
    if n == 0 {
        return Ok(SolveReport {
            solution: Vec::new(),
            relative_residual: 0.0,
            method: SolverKind::Direct,
            unknowns: 0,
            nnz: 0,
            iterations: 0,
        });
    }
    faer::set_global_parallelism(Par::Seq);
    let triplets: Vec<Triplet<usize, usize, f64>> =
        a.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let apply = |rhs: &[f64]| -> Vec<f64> {
        let col = Col::<f64>::from_fn(n, |i| rhs[i]);
        let x = lu.solve(&col);
        (0..n).map(|i| x[i]).collect()
    };
    let mut x = apply(b);
    let mut r = residual(a, &x, b);
    let mut rel = relative(&r, b);
    let mut steps = 0;
    while !(rel <= BACKWARD_TOL) && steps < 3 {
        if !rel.is_finite() {
            break;
        }
        let dx = apply(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        r = residual(a, &x, b);
        rel = relative(&r, b);
        steps += 1;
    }
    if !(rel <= BACKWARD_TOL) {
        return Err(Error::Factorization(format!(
            "singular or ill-conditioned matrix (relative residual {rel:e})"
        )));
    }
    Ok(SolveReport {
        solution: x,
        relative_residual: rel,
        method: SolverKind::Direct,
        unknowns: n,
        nnz: a.nnz(),
        iterations: steps,
    })
}

/// Jacobi-preconditioned BiCGStab.
fn solve_bicgstab(a: &CsrMatrix, b: &[f64], options: &SolverOptions) -> Result<SolveReport> {
    let n = a.nrows();
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d.abs() > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&diag).map(|(x, d)| x * d).collect() };
    let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(a, b)| a * b).sum() };
    let nb = norm(b).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for it in 1..=options.max_iterations {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        v = a.matvec(&y);
        alpha = rho_new / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        let z = precond(&s);
        let t = a.matvec(&z);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rho = rho_new;
        let rel = norm(&r) / nb;
        if rel <= options.tolerance {
            let true_rel = relative(&residual(a, &x, b), b);
            return Ok(SolveReport {
                solution: x,
                relative_residual: true_rel,
                method: SolverKind::Bicgstab,
                unknowns: n,
                nnz: a.nnz(),
                iterations: it,
            });
        }
        if rel < 0.999 * best {
            best = rel;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if !rel.is_finite() || omega == 0.0 || stalled > 2000 {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: rel,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: options.max_iterations,
        residual: norm(&r) / nb,
    })
}
