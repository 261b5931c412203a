//! Preconditioned conjugate gradients.

use crate::error::{Error, Result};
use crate::linalg::csr::CsrMatrix;
use crate::linalg::ilu::Ilu0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondKind {
    None,
    Jacobi,
    Ilu0,
}

impl std::str::FromStr for PrecondKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PrecondKind::None),
            "jacobi" => Ok(PrecondKind::Jacobi),
            "ilu0" => Ok(PrecondKind::Ilu0),
            other => Err(Error::InvalidArgument(format!(
                "unknown preconditioner '{other}' (expected none|jacobi|ilu0)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Preconditioner {
    None,
    Jacobi(Vec<f64>),
    Ilu0(Ilu0),
}

impl Preconditioner {
    pub fn build(kind: PrecondKind, a: &CsrMatrix) -> Result<Self> {
        match kind {
            PrecondKind::None => Ok(Preconditioner::None),
            PrecondKind::Jacobi => {
                let mut d = a.diag();
                for (i, v) in d.iter_mut().enumerate() {
                    if *v == 0.0 {
                        return Err(Error::ZeroPivot { row: i });
                    }
                    *v = 1.0 / *v;
                }
                Ok(Preconditioner::Jacobi(d))
            }
            PrecondKind::Ilu0 => Ok(Preconditioner::Ilu0(Ilu0::factor(a)?)),
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Preconditioner::None => y.copy_from_slice(x),
            Preconditioner::Jacobi(dinv) => {
                for ((yi, xi), di) in y.iter_mut().zip(x).zip(dinv) {
                    *yi = xi * di;
                }
            }
            Preconditioner::Ilu0(ilu) => ilu.apply(x, y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub final_relres: f64,
    pub converged: bool,
    /// ||r||_2 after each iteration, only kept when requested.
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CgOptions {
    pub rtol: f64,
    pub max_iter: usize,
    pub record_history: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            max_iter: 10_000,
            record_history: false,
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Solves A x = b for SPD A. `x` holds the initial guess on entry and the
/// solution on exit. Non-convergence is reported in the stats, never silent.
pub fn cg_solve_guess(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: &Preconditioner,
    opts: &CgOptions,
) -> Result<SolveStats> {
    if a.n_rows() != a.n_cols() || a.n_rows() != b.len() || b.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "cg: A is {}x{}, b has {}, x has {}",
            a.n_rows(),
            a.n_cols(),
            b.len(),
            x.len()
        )));
    }
    let n = b.len();
    let bnorm = norm2(b);
    let mut history = Vec::new();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(SolveStats {
            iterations: 0,
            final_relres: 0.0,
            converged: true,
            residual_history: history,
        });
    }

    let mut r = vec![0.0; n];
    a.spmv_into(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rnorm = norm2(&r);
    if opts.record_history {
        history.push(rnorm);
    }
    if rnorm <= opts.rtol * bnorm {
        return Ok(SolveStats {
            iterations: 0,
            final_relres: rnorm / bnorm,
            converged: true,
            residual_history: history,
        });
    }

    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        a.spmv_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // loss of positive definiteness (roundoff near convergence)
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        rnorm = norm2(&r);
        if opts.record_history {
            history.push(rnorm);
        }
        if rnorm <= opts.rtol * bnorm {
            return Ok(SolveStats {
                iterations,
                final_relres: rnorm / bnorm,
                converged: true,
                residual_history: history,
            });
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    Ok(SolveStats {
        iterations,
        final_relres: rnorm / bnorm,
        converged: false,
        residual_history: history,
    })
}

/// Convenience wrapper starting from the zero vector.
pub fn cg_solve(
    a: &CsrMatrix,
    b: &[f64],
    kind: PrecondKind,
    rtol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let precond = Preconditioner::build(kind, a)?;
    let mut x = vec![0.0; b.len()];
    let opts = CgOptions {
        rtol,
        max_iter,
        record_history: false,
    };
    let stats = cg_solve_guess(a, b, &mut x, &precond, &opts)?;
    Ok((x, stats))
}
