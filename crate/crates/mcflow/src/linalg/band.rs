//! Symmetric banded Cholesky.
//!
//! The interior (background-grid) block of each local basis problem is
//! SPD with a small bandwidth once cells are numbered row-major; a banded
//! factorization plus a dense Schur complement over the border unknowns
//! (fracture cells and Lagrange multipliers) solves the local saddle
//! systems directly.

use crate::error::{Error, Result};

/// Lower-band storage: `band[i * (bw + 1) + (bw - (i - j))]` holds A[i][j]
/// for `i - bw <= j <= i`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw - (i - j))
    }

    /// Adds `v` at the symmetric position (i, j); only the lower half is stored.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(
            r - c <= self.bw,
            "entry ({i},{j}) outside bandwidth {}",
            self.bw
        );
        let k = self.idx(r, c);
        self.band[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            return 0.0;
        }
        self.band[self.idx(r, c)]
    }

    /// In-place banded Cholesky: A = L L^T. Fails on a non-positive pivot.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let n = self.n;
        let bw = self.bw;
        for j in 0..n {
            let start = j.saturating_sub(bw);
            for k in start..j {
                let ljk = self.band[self.idx(j, k)];
                if ljk == 0.0 {
                    continue;
                }
                let imax = (k + bw).min(n - 1);
                for i in j..=imax {
                    let lik = self.band[self.idx(i, k)];
                    if lik != 0.0 {
                        let t = lik * ljk;
                        let p = self.idx(i, j);
                        self.band[p] -= t;
                    }
                }
            }
            let djj = self.band[self.idx(j, j)];
            if djj <= 0.0 || !djj.is_finite() {
                return Err(Error::Assembly(format!(
                    "banded Cholesky pivot failure at row {j} (pivot {djj:.3e})"
                )));
            }
            let l = djj.sqrt();
            let p = self.idx(j, j);
            self.band[p] = l;
            let imax = (j + bw).min(n - 1);
            for i in (j + 1)..=imax {
                let p = self.idx(i, j);
                self.band[p] /= l;
            }
        }
        Ok(BandCholesky {
            n,
            bw,
            band: self.band,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandCholesky {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (self.bw - (i - j))
    }

    /// Solves L L^T x = b in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        let bw = self.bw;
        assert_eq!(x.len(), n);
        // forward
        for i in 0..n {
            let start = i.saturating_sub(bw);
            let mut acc = x[i];
            for j in start..i {
                let l = self.band[self.idx(i, j)];
                if l != 0.0 {
                    acc -= l * x[j];
                }
            }
            x[i] = acc / self.band[self.idx(i, i)];
        }
        // backward (uses L^T: column j of L is row j of L^T)
        for i in (0..n).rev() {
            let imax = (i + bw).min(n - 1);
            let mut acc = x[i];
            for j in (i + 1)..=imax {
                let l = self.band[self.idx(j, i)];
                if l != 0.0 {
                    acc -= l * x[j];
                }
            }
            x[i] = acc / self.band[self.idx(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve() {
        // 1D Laplacian + I, n = 6
        let n = 6;
        let mut a = BandMatrix::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 3.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        let chol = a.cholesky().unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64) - 2.5).collect();
        // b = A x
        let mut b = vec![0.0; n];
        for i in 0..n {
            b[i] = 3.0 * x_true[i];
            if i > 0 {
                b[i] -= x_true[i - 1];
            }
            if i + 1 < n {
                b[i] -= x_true[i + 1];
            }
        }
        let mut x = b;
        chol.solve_in_place(&mut x);
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_band_matches_dense() {
        use crate::linalg::dense::{dense_lu_solve, DenseMatrix};
        let n = 12;
        let bw = 4;
        let mut a = BandMatrix::zeros(n, bw);
        let mut d = DenseMatrix::zeros(n, n);
        for i in 0..n {
            a.add(i, i, 10.0 + i as f64);
            d.add_at(i, i, 10.0 + i as f64);
            for off in 1..=bw {
                if i >= off {
                    let v = -1.0 / off as f64;
                    a.add(i, i - off, v);
                    d.add_at(i, i - off, v);
                    d.add_at(i - off, i, v);
                }
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i % 3) as f64 - 1.0).collect();
        let chol = a.cholesky().unwrap();
        let mut x = b.clone();
        chol.solve_in_place(&mut x);
        let xd = dense_lu_solve(&d, &[b]).unwrap();
        for (xi, ti) in x.iter().zip(&xd[0]) {
            assert!((xi - ti).abs() < 1e-11);
        }
    }

    #[test]
    fn indefinite_rejected() {
        let mut a = BandMatrix::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -1.0);
        assert!(a.cholesky().is_err());
    }
}
