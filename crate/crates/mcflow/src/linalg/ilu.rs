//! ILU(0): incomplete LU restricted to the original sparsity pattern.

use crate::error::{Error, Result};
use crate::linalg::csr::CsrMatrix;

#[derive(Debug, Clone)]
pub struct Ilu0 {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    lu: Vec<f64>,
    diag_ptr: Vec<usize>,
}

impl Ilu0 {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::InvalidArgument("ILU(0) needs a square matrix".into()));
        }
        let n = a.n_rows();
        let row_ptr = a.row_ptr().to_vec();
        let col_idx = a.col_idx().to_vec();
        let mut lu = a.values().to_vec();

        let mut diag_ptr = vec![usize::MAX; n];
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                if col_idx[k] == i {
                    diag_ptr[i] = k;
                    break;
                }
            }
            if diag_ptr[i] == usize::MAX {
                return Err(Error::ZeroPivot { row: i });
            }
        }

        // position lookup within the current row, reused across rows
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                pos[col_idx[k]] = k;
            }
            for kp in row_ptr[i]..row_ptr[i + 1] {
                let k = col_idx[kp];
                if k >= i {
                    break;
                }
                let pivot = lu[diag_ptr[k]];
                if pivot == 0.0 {
                    return Err(Error::ZeroPivot { row: k });
                }
                let m = lu[kp] / pivot;
                lu[kp] = m;
                for jp in (diag_ptr[k] + 1)..row_ptr[k + 1] {
                    let j = col_idx[jp];
                    let p = pos[j];
                    if p != usize::MAX {
                        lu[p] -= m * lu[jp];
                    }
                }
            }
            if lu[diag_ptr[i]] == 0.0 {
                return Err(Error::ZeroPivot { row: i });
            }
            for k in row_ptr[i]..row_ptr[i + 1] {
                pos[col_idx[k]] = usize::MAX;
            }
        }

        Ok(Self {
            n,
            row_ptr,
            col_idx,
            lu,
            diag_ptr,
        })
    }

    /// y = (L U)^{-1} x via forward and backward substitution.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        y.copy_from_slice(x);
        for i in 0..n {
            let mut acc = y[i];
            for k in self.row_ptr[i]..self.diag_ptr[i] {
                acc -= self.lu[k] * y[self.col_idx[k]];
            }
            y[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in (self.diag_ptr[i] + 1)..self.row_ptr[i + 1] {
                acc -= self.lu[k] * y[self.col_idx[k]];
            }
            y[i] = acc / self.lu[self.diag_ptr[i]];
        }
    }
}
