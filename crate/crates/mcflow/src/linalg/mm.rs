//! MatrixMarket I/O: coordinate format for matrix dumps, array format for
//! vectors (snapshots, cached reference trajectories).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::csr::CsrMatrix;

pub fn write_matrix(path: &Path, a: &CsrMatrix) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = String::new();
    buf.push_str("%%MatrixMarket matrix coordinate real general\n");
    buf.push_str(&format!("{} {} {}\n", a.n_rows(), a.n_cols(), a.nnz()));
    for i in 0..a.n_rows() {
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            buf.push_str(&format!("{} {} {:.17e}\n", i + 1, c + 1, v));
        }
    }
    f.write_all(buf.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = String::new();
    buf.push_str("%%MatrixMarket matrix array real general\n");
    buf.push_str(&format!("{} 1\n", v.len()));
    for x in v {
        buf.push_str(&format!("{:.17e}\n", x));
    }
    f.write_all(buf.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(f);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .unwrap_or_default();
    if !header.starts_with("%%MatrixMarket matrix array real") {
        return Err(Error::InvalidArgument(format!(
            "{}: not a MatrixMarket array file",
            path.display()
        )));
    }
    let mut n = 0usize;
    let mut values = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        if n == 0 {
            let mut parts = t.split_whitespace();
            n = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidArgument("bad array size line".into()))?;
            values.reserve(n);
            continue;
        }
        values.push(
            t.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad value '{t}'")))?,
        );
    }
    if values.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {} values, found {}",
            path.display(),
            n,
            values.len()
        )));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::csr::CsrBuilder;

    #[test]
    fn vector_roundtrip_is_exact() {
        let dir = std::env::temp_dir().join("mcflow_mm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("v.mtx");
        let v = vec![1.0, -0.25, std::f64::consts::PI, 1.0e-300];
        write_vector(&p, &v).unwrap();
        let w = read_vector(&p).unwrap();
        assert_eq!(v, w);
    }

    #[test]
    fn matrix_header() {
        let dir = std::env::temp_dir().join("mcflow_mm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("a.mtx");
        let mut b = CsrBuilder::new(2, 2);
        b.push(0, 0, 1.5);
        b.push(1, 0, -2.0);
        write_matrix(&p, &b.build()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n2 2 2\n"));
        assert!(text.contains("2 1 "));
    }
}
