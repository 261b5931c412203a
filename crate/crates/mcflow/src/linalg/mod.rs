//! Sparse and dense linear-algebra kernels: CSR matrices, preconditioned
//! CG, ILU(0), dense LU, banded Cholesky, and a smallest-eigenvalue probe.

pub mod accum;
pub mod band;
pub mod cg;
pub mod csr;
pub mod dense;
pub mod eigen;
pub mod ilu;
pub mod mm;

pub use band::{BandCholesky, BandMatrix};
pub use cg::{cg_solve, cg_solve_guess, CgOptions, PrecondKind, Preconditioner, SolveStats};
pub use csr::{CsrBuilder, CsrMatrix};
pub use dense::{dense_lu_solve, DenseLu, DenseMatrix};
pub use eigen::min_eigenvalue;
pub use ilu::Ilu0;

use crate::error::Result;

/// R A R^T with the output symmetrized to kill round-off skew.
pub fn triple_product(r: &CsrMatrix, a: &CsrMatrix) -> Result<CsrMatrix> {
    let ra = r.matmul(a)?;
    let rart = ra.matmul(&r.transpose())?;
    rart.symmetrize()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_product_identity() {
        let mut b = CsrBuilder::new(3, 3);
        b.push(0, 0, 2.0);
        b.push(0, 1, -1.0);
        b.push(1, 0, -1.0);
        b.push(1, 1, 2.0);
        b.push(2, 2, 5.0);
        let a = b.build();
        let r = CsrMatrix::identity(3);
        let p = triple_product(&r, &a).unwrap();
        assert_eq!(p, a);
    }

    #[test]
    fn triple_product_row_of_ones() {
        // R = (1 1 1), A = I: R A R^T = 3
        let mut rb = CsrBuilder::new(1, 3);
        for j in 0..3 {
            rb.push(0, j, 1.0);
        }
        let r = rb.build();
        let a = CsrMatrix::identity(3);
        let p = triple_product(&r, &a).unwrap();
        assert_eq!(p.n_rows(), 1);
        assert_eq!(p.get(0, 0), 3.0);
    }

    #[test]
    fn triple_product_matches_dense_oracle() {
        // random sparse R (2x6), symmetric A (6x6); compare against dense
        let vals_r = [
            (0usize, 1usize, 0.5),
            (0, 3, -1.0),
            (1, 0, 2.0),
            (1, 4, 0.25),
            (1, 5, -0.5),
        ];
        let mut rb = CsrBuilder::new(2, 6);
        for &(i, j, v) in &vals_r {
            rb.push(i, j, v);
        }
        let r = rb.build();
        let mut ab = CsrBuilder::new(6, 6);
        for i in 0..6usize {
            ab.push(i, i, (i + 1) as f64);
            if i + 1 < 6 {
                ab.push(i, i + 1, -0.5);
                ab.push(i + 1, i, -0.5);
            }
        }
        let a = ab.build();
        let p = triple_product(&r, &a).unwrap();

        // dense oracle
        let mut rd = vec![vec![0.0; 6]; 2];
        for &(i, j, v) in &vals_r {
            rd[i][j] = v;
        }
        let mut ad = vec![vec![0.0; 6]; 6];
        for i in 0..6 {
            let (cols, vals) = a.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                ad[i][c] = v;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..6 {
                    for l in 0..6 {
                        acc += rd[i][k] * ad[k][l] * rd[j][l];
                    }
                }
                assert!((p.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn triple_product_output_exactly_symmetric() {
        let mut rb = CsrBuilder::new(3, 4);
        rb.push(0, 0, 1.0);
        rb.push(0, 2, 0.3);
        rb.push(1, 1, -2.0);
        rb.push(1, 3, 0.7);
        rb.push(2, 0, 0.11);
        rb.push(2, 3, 5.0);
        let r = rb.build();
        let mut ab = CsrBuilder::new(4, 4);
        for i in 0..4usize {
            ab.push(i, i, 1.0 + i as f64 * 0.1);
            if i + 1 < 4 {
                ab.push(i, i + 1, 0.01 * (i + 1) as f64);
                ab.push(i + 1, i, 0.01 * (i + 1) as f64);
            }
        }
        let a = ab.build();
        let p = triple_product(&r, &a).unwrap();
        assert_eq!(p.asymmetry(), 0.0);
    }
}
