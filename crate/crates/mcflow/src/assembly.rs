//! Fine-scale finite-volume assembly: mass, two-point-flux diffusion,
//! inter-continuum exchange, and their composition into the block operator.

use crate::error::{Error, Result};
use crate::geometry::{FractureMesh, StructuredGrid};
use crate::linalg::accum::Compensated;
use crate::linalg::{CsrBuilder, CsrMatrix};

/// Rounds a compensated sum up by one ulp so assembled diagonals dominate
/// their off-diagonal row sums exactly in floating point. The stability
/// checks assert positive semidefiniteness at absolute tolerances far below
/// the rounding noise of a plain accumulation.
fn dominant_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut acc = Compensated::new();
    let mut any = false;
    for t in terms {
        acc.add(t);
        any = true;
    }
    if !any {
        return 0.0;
    }
    acc.value().next_up()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContinuumKind {
    Background2d,
    Fracture1d,
}

/// One overlapping flow field with its storage and permeability.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumSpec {
    pub name: String,
    pub kind: ContinuumKind,
    pub storage: f64,
    pub permeability: f64,
}

impl ContinuumSpec {
    pub fn validate(&self) -> Result<()> {
        if self.storage <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "continuum '{}': storage coefficient must be positive",
                self.name
            )));
        }
        if self.permeability <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "continuum '{}': permeability must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

/// Coupling rule for one continuum pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExchangeRule {
    /// q = coeff * overlap measure, for colocated background continua.
    PerOverlap { coeff: f64 },
    /// q = coeff * interface length / dist, for background-fracture links.
    Efm { coeff: f64, dist: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangePair {
    pub a: usize,
    pub b: usize,
    pub rule: ExchangeRule,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExchangeSpec {
    pub pairs: Vec<ExchangePair>,
}

impl ExchangeSpec {
    pub fn validate(&self, n_continua: usize) -> Result<()> {
        for p in &self.pairs {
            if p.a >= n_continua || p.b >= n_continua || p.a == p.b {
                return Err(Error::InvalidArgument(format!(
                    "exchange pair ({}, {}) out of range",
                    p.a, p.b
                )));
            }
            let coeff = match p.rule {
                ExchangeRule::PerOverlap { coeff } => coeff,
                ExchangeRule::Efm { coeff, dist } => {
                    if dist <= 0.0 {
                        return Err(Error::InvalidArgument(
                            "exchange distance must be positive".into(),
                        ));
                    }
                    coeff
                }
            };
            if coeff < 0.0 {
                return Err(Error::InvalidArgument(
                    "exchange coefficient must be nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-cell coefficient: constant or an explicit array.
#[derive(Debug, Clone, PartialEq)]
pub enum Coeff {
    Scalar(f64),
    PerCell(Vec<f64>),
}

impl Coeff {
    pub fn at(&self, i: usize) -> f64 {
        match self {
            Coeff::Scalar(v) => *v,
            Coeff::PerCell(v) => v[i],
        }
    }

    fn min(&self) -> f64 {
        match self {
            Coeff::Scalar(v) => *v,
            Coeff::PerCell(v) => v.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Two-point-flux matrix on the background grid. Heterogeneous k uses the
/// harmonic face average; homogeneous Neumann boundaries come out of simply
/// omitting the boundary faces.
pub fn assemble_diffusion_2d(grid: &StructuredGrid, k: &Coeff) -> Result<CsrMatrix> {
    if k.min() <= 0.0 {
        return Err(Error::InvalidArgument(
            "permeability must be positive cellwise".into(),
        ));
    }
    if let Coeff::PerCell(v) = k {
        if v.len() != grid.n_cells() {
            return Err(Error::DimensionMismatch(format!(
                "k array has {} entries for {} cells",
                v.len(),
                grid.n_cells()
            )));
        }
    }
    let n = grid.n_cells();
    let hx = grid.hx();
    let hy = grid.hy();
    let tx = hy / hx; // |E| / d for x-direction faces
    let ty = hx / hy;
    let harmonic = |ka: f64, kb: f64| 2.0 * ka * kb / (ka + kb);

    let mut bld = CsrBuilder::new(n, n);
    let mut row_terms: Vec<f64> = Vec::with_capacity(4);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.index(i, j);
            row_terms.clear();
            let link = |other: usize, tgeom: f64, bld: &mut CsrBuilder, terms: &mut Vec<f64>| {
                let t = harmonic(k.at(c), k.at(other)) * tgeom;
                bld.push(c, other, -t);
                terms.push(t);
            };
            if i > 0 {
                link(grid.index(i - 1, j), tx, &mut bld, &mut row_terms);
            }
            if i + 1 < grid.nx {
                link(grid.index(i + 1, j), tx, &mut bld, &mut row_terms);
            }
            if j > 0 {
                link(grid.index(i, j - 1), ty, &mut bld, &mut row_terms);
            }
            if j + 1 < grid.ny {
                link(grid.index(i, j + 1), ty, &mut bld, &mut row_terms);
            }
            bld.push(c, c, dominant_sum(row_terms.iter().cloned()));
        }
    }
    Ok(bld.build())
}

/// 1D two-point flux along each fracture segment's cell chain, T = k_f / d
/// with d the arc distance between adjacent cell midpoints. No coupling
/// across segments.
pub fn assemble_diffusion_fracture(fmesh: &FractureMesh, k_f: f64) -> Result<CsrMatrix> {
    if k_f <= 0.0 {
        return Err(Error::InvalidArgument(
            "fracture permeability must be positive".into(),
        ));
    }
    let n = fmesh.n_cells();
    let mut bld = CsrBuilder::new(n, n);
    let mut diag_terms: Vec<Vec<f64>> = vec![Vec::new(); n];
    for range in &fmesh.seg_ranges {
        for w in range.clone().collect::<Vec<_>>().windows(2) {
            let (a, b) = (w[0], w[1]);
            let ca = &fmesh.cells[a];
            let cb = &fmesh.cells[b];
            // cells of one segment share its parameterization
            let seg_len = ca.length / (ca.t1 - ca.t0);
            let d = (cb.midpoint_t() - ca.midpoint_t()).abs() * seg_len;
            let t = k_f / d;
            bld.push(a, b, -t);
            bld.push(b, a, -t);
            diag_terms[a].push(t);
            diag_terms[b].push(t);
        }
    }
    for (i, terms) in diag_terms.iter().enumerate() {
        if !terms.is_empty() {
            bld.push(i, i, dominant_sum(terms.iter().cloned()));
        }
    }
    Ok(bld.build())
}

/// diag(c_i * |cell_i|).
pub fn assemble_mass(measures: &[f64], c: &Coeff) -> Result<Vec<f64>> {
    if let Coeff::PerCell(v) = c {
        if v.len() != measures.len() {
            return Err(Error::DimensionMismatch(
                "coefficient array length mismatch".into(),
            ));
        }
    }
    measures
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            if m <= 0.0 {
                Err(Error::InvalidArgument(format!(
                    "cell {i} has non-positive measure {m}"
                )))
            } else {
                Ok(c.at(i) * m)
            }
        })
        .collect()
}

/// Exchange links (i in continuum a, j in continuum b, transmissibility q).
/// Returns the diagonal row-sum contributions for both continua and the
/// off-diagonal block Q_ab; the assembled global exchange operator is then
/// symmetric PSD with zero row sums.
pub fn assemble_exchange(
    links: &[(usize, usize, f64)],
    n_a: usize,
    n_b: usize,
) -> Result<(Vec<f64>, Vec<f64>, CsrMatrix)> {
    let mut diag_a_terms: Vec<Vec<f64>> = vec![Vec::new(); n_a];
    let mut diag_b_terms: Vec<Vec<f64>> = vec![Vec::new(); n_b];
    let mut bld = CsrBuilder::new(n_a, n_b);
    for &(i, j, q) in links {
        if i >= n_a || j >= n_b {
            return Err(Error::InvalidArgument(format!(
                "exchange link ({i}, {j}) out of range"
            )));
        }
        if q < 0.0 {
            return Err(Error::InvalidArgument(
                "exchange transmissibility must be nonnegative".into(),
            ));
        }
        if q == 0.0 {
            continue;
        }
        bld.push(i, j, q);
        diag_a_terms[i].push(q);
        diag_b_terms[j].push(q);
    }
    let diag_a = diag_a_terms
        .iter()
        .map(|t| dominant_sum(t.iter().cloned()))
        .collect();
    let diag_b = diag_b_terms
        .iter()
        .map(|t| dominant_sum(t.iter().cloned()))
        .collect();
    Ok((diag_a, diag_b, bld.build()))
}

/// L x L grid of sparse blocks for A, diagonal mass entries, and the block
/// right-hand side. Immutable after assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    pub sizes: Vec<usize>,
    pub mass: Vec<Vec<f64>>,
    pub blocks: Vec<Vec<Option<CsrMatrix>>>,
    pub rhs: Vec<Vec<f64>>,
}

impl BlockOperator {
    pub fn n_continua(&self) -> usize {
        self.sizes.len()
    }

    pub fn total_len(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0usize];
        for s in &self.sizes {
            off.push(off.last().unwrap() + s);
        }
        off
    }

    pub fn block(&self, a: usize, b: usize) -> Option<&CsrMatrix> {
        self.blocks[a][b].as_ref()
    }

    pub fn mass_flat(&self) -> Vec<f64> {
        self.mass.concat()
    }

    pub fn rhs_flat(&self) -> Vec<f64> {
        self.rhs.concat()
    }

    /// y = A x on flat vectors.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let off = self.offsets();
        y.fill(0.0);
        for a in 0..self.n_continua() {
            for b in 0..self.n_continua() {
                if let Some(m) = self.block(a, b) {
                    m.spmv_add(&x[off[b]..off[b] + self.sizes[b]], &mut y[off[a]..off[a] + self.sizes[a]], 1.0);
                }
            }
        }
    }

    /// x^T A x with compensated accumulation across blocks.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let off = self.offsets();
        let mut acc = Compensated::new();
        for a in 0..self.n_continua() {
            let xa = &x[off[a]..off[a] + self.sizes[a]];
            for b in 0..self.n_continua() {
                if let Some(m) = self.block(a, b) {
                    let xb = &x[off[b]..off[b] + self.sizes[b]];
                    for i in 0..m.n_rows() {
                        let xi = xa[i];
                        if xi == 0.0 {
                            continue;
                        }
                        let (cols, vals) = m.row(i);
                        for (&c, &v) in cols.iter().zip(vals) {
                            acc.add_prod(xi * v, xb[c]);
                        }
                    }
                }
            }
        }
        acc.value()
    }

    /// Monolithic CSR of A in continuum-major DOF order.
    pub fn to_monolithic(&self) -> CsrMatrix {
        let n = self.total_len();
        let off = self.offsets();
        let mut bld = CsrBuilder::new(n, n);
        for a in 0..self.n_continua() {
            for b in 0..self.n_continua() {
                if let Some(m) = self.block(a, b) {
                    for i in 0..m.n_rows() {
                        let (cols, vals) = m.row(i);
                        for (&c, &v) in cols.iter().zip(vals) {
                            bld.push(off[a] + i, off[b] + c, v);
                        }
                    }
                }
            }
        }
        bld.build()
    }

    /// Cuts a monolithic matrix into the block layout given by `sizes`.
    pub fn from_monolithic(
        sizes: Vec<usize>,
        a: &CsrMatrix,
        mass: Vec<Vec<f64>>,
        rhs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if a.n_rows() != total || a.n_cols() != total {
            return Err(Error::DimensionMismatch(
                "monolithic matrix does not match block sizes".into(),
            ));
        }
        let mut off = vec![0usize];
        for s in &sizes {
            off.push(off.last().unwrap() + s);
        }
        let l = sizes.len();
        let mut blocks: Vec<Vec<Option<CsrMatrix>>> = Vec::with_capacity(l);
        for ai in 0..l {
            let mut row = Vec::with_capacity(l);
            for bi in 0..l {
                let blk = a.block(off[ai]..off[ai + 1], off[bi]..off[bi + 1]);
                row.push(if blk.nnz() == 0 { None } else { Some(blk) });
            }
            blocks.push(row);
        }
        let op = BlockOperator {
            sizes,
            mass,
            blocks,
            rhs,
        };
        Ok(op)
    }

    /// Blockwise symmetry and mass positivity; `scale`-relative tolerance on
    /// the off-diagonal transpose match.
    pub fn verify(&self) -> Result<()> {
        let l = self.n_continua();
        for a in 0..l {
            if self.mass[a].len() != self.sizes[a] || self.rhs[a].len() != self.sizes[a] {
                return Err(Error::Assembly(format!(
                    "continuum {a}: mass/rhs length mismatch"
                )));
            }
            if self.mass[a].iter().any(|&m| m < 0.0) {
                return Err(Error::Assembly(format!(
                    "continuum {a}: negative mass entry"
                )));
            }
        }
        for a in 0..l {
            for b in 0..l {
                let scale = self
                    .block(a, b)
                    .map(|m| m.max_abs())
                    .unwrap_or(0.0)
                    .max(1e-300);
                match (self.block(a, b), self.block(b, a)) {
                    (None, None) => {}
                    (Some(ab), Some(ba)) => {
                        let diff = ab.add_scaled(&ba.transpose(), -1.0)?.max_abs();
                        if diff > 1e-12 * scale {
                            return Err(Error::Assembly(format!(
                                "blocks ({a},{b}) and ({b},{a}) are not transposes (diff {diff:.3e})"
                            )));
                        }
                    }
                    _ => {
                        return Err(Error::Assembly(format!(
                            "block ({a},{b}) present without its transpose"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Everything the fine-scale assembly needs for one problem.
#[derive(Debug, Clone)]
pub struct ProblemSetup<'a> {
    pub grid: &'a StructuredGrid,
    pub fmesh: &'a FractureMesh,
    pub continua: Vec<ContinuumSpec>,
    pub exchange: ExchangeSpec,
}

impl ProblemSetup<'_> {
    pub fn continuum_size(&self, a: usize) -> usize {
        match self.continua[a].kind {
            ContinuumKind::Background2d => self.grid.n_cells(),
            ContinuumKind::Fracture1d => self.fmesh.n_cells(),
        }
    }

    pub fn continuum_measures(&self, a: usize) -> Vec<f64> {
        match self.continua[a].kind {
            ContinuumKind::Background2d => vec![self.grid.cell_area(); self.grid.n_cells()],
            ContinuumKind::Fracture1d => self.fmesh.lengths(),
        }
    }

    /// Exchange links for one pair under its rule.
    pub fn links_for(&self, pair: &ExchangePair) -> Result<Vec<(usize, usize, f64)>> {
        let ka = self.continua[pair.a].kind;
        let kb = self.continua[pair.b].kind;
        match (ka, kb, pair.rule) {
            (ContinuumKind::Background2d, ContinuumKind::Background2d, ExchangeRule::PerOverlap { coeff }) => {
                let area = self.grid.cell_area();
                Ok((0..self.grid.n_cells())
                    .map(|i| (i, i, coeff * area))
                    .collect())
            }
            (ContinuumKind::Background2d, ContinuumKind::Fracture1d, ExchangeRule::Efm { coeff, dist }) => Ok(self
                .fmesh
                .cells
                .iter()
                .enumerate()
                .map(|(j, fc)| (fc.host, j, coeff * fc.length / dist))
                .collect()),
            (ContinuumKind::Fracture1d, ContinuumKind::Background2d, ExchangeRule::Efm { coeff, dist }) => Ok(self
                .fmesh
                .cells
                .iter()
                .enumerate()
                .map(|(j, fc)| (j, fc.host, coeff * fc.length / dist))
                .collect()),
            _ => Err(Error::InvalidArgument(format!(
                "exchange rule {:?} does not fit continuum kinds ({:?}, {:?})",
                pair.rule, ka, kb
            ))),
        }
    }
}

/// Composes diffusion, exchange, and mass into the block operator
/// A_aa = D_a + sum_b Q_ab-rowsums, A_ab = -Q_ab, with symmetry verified.
pub fn assemble_block_operator(setup: &ProblemSetup) -> Result<BlockOperator> {
    let l = setup.continua.len();
    if l == 0 {
        return Err(Error::InvalidArgument("no continua".into()));
    }
    for c in &setup.continua {
        c.validate()?;
    }
    setup.exchange.validate(l)?;

    let sizes: Vec<usize> = (0..l).map(|a| setup.continuum_size(a)).collect();

    // diffusion per continuum
    let mut diff: Vec<CsrMatrix> = Vec::with_capacity(l);
    for (a, spec) in setup.continua.iter().enumerate() {
        let d = match spec.kind {
            ContinuumKind::Background2d => {
                assemble_diffusion_2d(setup.grid, &Coeff::Scalar(spec.permeability))?
            }
            ContinuumKind::Fracture1d => {
                assemble_diffusion_fracture(setup.fmesh, spec.permeability)?
            }
        };
        let _ = a;
        diff.push(d);
    }

    // exchange per pair
    let mut qdiag: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
    let mut off_blocks: Vec<Vec<Option<CsrMatrix>>> = vec![vec![None; l]; l];
    for pair in &setup.exchange.pairs {
        let links = setup.links_for(pair)?;
        let (da, db, qab) = assemble_exchange(&links, sizes[pair.a], sizes[pair.b])?;
        for (t, v) in qdiag[pair.a].iter_mut().zip(&da) {
            *t += v;
        }
        for (t, v) in qdiag[pair.b].iter_mut().zip(&db) {
            *t += v;
        }
        let neg = qab.scale(-1.0);
        off_blocks[pair.a][pair.b] = Some(match off_blocks[pair.a][pair.b].take() {
            Some(prev) => prev.add_scaled(&neg, 1.0)?,
            None => neg.clone(),
        });
        off_blocks[pair.b][pair.a] = Some(match off_blocks[pair.b][pair.a].take() {
            Some(prev) => prev.add_scaled(&neg.transpose(), 1.0)?,
            None => neg.transpose(),
        });
    }

    // A_aa = D_a + diag(q); keep exact row dominance after the combination
    let mut blocks: Vec<Vec<Option<CsrMatrix>>> = vec![vec![None; l]; l];
    for a in 0..l {
        let mut daa = diff[a].add_diag(&qdiag[a]);
        if qdiag[a].iter().any(|&v| v > 0.0) {
            daa = bump_diag(&daa);
        }
        blocks[a][a] = Some(daa);
        for b in 0..l {
            if a != b {
                blocks[a][b] = off_blocks[a][b].take();
            }
        }
    }

    let mut mass = Vec::with_capacity(l);
    for (a, spec) in setup.continua.iter().enumerate() {
        let measures = setup.continuum_measures(a);
        mass.push(assemble_mass(&measures, &Coeff::Scalar(spec.storage))?);
    }

    let rhs = sizes.iter().map(|&s| vec![0.0; s]).collect();
    let op = BlockOperator {
        sizes,
        mass,
        blocks,
        rhs,
    };
    op.verify()?;
    Ok(op)
}

/// One-ulp bump on the diagonal, restoring exact dominance after two
/// dominant sums were added together.
fn bump_diag(a: &CsrMatrix) -> CsrMatrix {
    let n = a.n_rows();
    let mut bump = vec![0.0; n];
    for i in 0..n {
        let d = a.get(i, i);
        bump[i] = d.next_up() - d;
    }
    a.add_diag(&bump)
}

/// Implicit well model: q_w |cell| joins the diagonal of the targeted rows
/// and q_w u_w |cell| joins the right-hand side, driving the continuum
/// toward the well pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct WellSpec {
    pub continuum: usize,
    pub cells: Vec<usize>,
    pub cell_measures: Vec<f64>,
    pub u_w: f64,
    pub q_w: f64,
}

impl WellSpec {
    /// Targets every fracture cell whose host background cell center lies in
    /// the box [x0,x1] x [y0,y1].
    pub fn from_box(
        fmesh: &FractureMesh,
        grid: &StructuredGrid,
        continuum: usize,
        bbox: (f64, f64, f64, f64),
        u_w: f64,
        q_w: f64,
    ) -> Self {
        let mut cells = Vec::new();
        let mut cell_measures = Vec::new();
        for (j, fc) in fmesh.cells.iter().enumerate() {
            let (x, y) = grid.cell_center(fc.host);
            if x >= bbox.0 && x <= bbox.1 && y >= bbox.2 && y <= bbox.3 {
                cells.push(j);
                cell_measures.push(fc.length);
            }
        }
        Self {
            continuum,
            cells,
            cell_measures,
            u_w,
            q_w,
        }
    }
}

pub fn apply_well(op: &BlockOperator, well: &WellSpec) -> Result<BlockOperator> {
    if well.q_w < 0.0 {
        return Err(Error::InvalidArgument("well index must be nonnegative".into()));
    }
    if well.continuum >= op.n_continua() {
        return Err(Error::InvalidArgument("well continuum out of range".into()));
    }
    let t = well.continuum;
    let n = op.sizes[t];
    let mut diag_add = vec![0.0; n];
    let mut out = op.clone();
    for (&cell, &measure) in well.cells.iter().zip(&well.cell_measures) {
        if cell >= n {
            return Err(Error::InvalidArgument(format!(
                "well cell {cell} out of range for continuum {t}"
            )));
        }
        diag_add[cell] += well.q_w * measure;
        out.rhs[t][cell] += well.q_w * well.u_w * measure;
    }
    if well.q_w > 0.0 && !well.cells.is_empty() {
        let att = out.blocks[t][t]
            .take()
            .unwrap_or_else(|| CsrMatrix::zeros(n, n));
        out.blocks[t][t] = Some(att.add_diag(&diag_add));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, mesh_fractures, FractureNetwork, Segment};
    use crate::linalg::min_eigenvalue;

    #[test]
    fn two_cell_diffusion() {
        let g = build_grid(2, 1, 2.0, 1.0).unwrap(); // h = 1 in both directions
        let a = assemble_diffusion_2d(&g, &Coeff::Scalar(1.0)).unwrap();
        assert!((a.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((a.get(0, 1) + 1.0).abs() < 1e-12);
        assert!((a.get(1, 0) + 1.0).abs() < 1e-12);
        assert!((a.get(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_cell_chain_stencil() {
        let g = build_grid(3, 1, 3.0, 1.0).unwrap();
        let a = assemble_diffusion_2d(&g, &Coeff::Scalar(1.0)).unwrap();
        let expect = [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.get(i, j) - expect[i][j]).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn diffusion_annihilates_constants() {
        let g = build_grid(7, 5, 1.4, 1.0).unwrap();
        let a = assemble_diffusion_2d(&g, &Coeff::Scalar(3.0)).unwrap();
        let ones = vec![1.0; g.n_cells()];
        let mut y = vec![0.0; g.n_cells()];
        a.spmv_into(&ones, &mut y);
        let max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1e-9 * a.max_abs());
    }

    #[test]
    fn harmonic_average_reduces_to_plain() {
        let g = build_grid(2, 1, 2.0, 1.0).unwrap();
        let hetero = assemble_diffusion_2d(&g, &Coeff::PerCell(vec![3.0, 3.0])).unwrap();
        let homo = assemble_diffusion_2d(&g, &Coeff::Scalar(3.0)).unwrap();
        assert_eq!(hetero, homo);
    }

    #[test]
    fn nonpositive_k_rejected() {
        let g = build_grid(2, 2, 1.0, 1.0).unwrap();
        assert!(assemble_diffusion_2d(&g, &Coeff::Scalar(0.0)).is_err());
        assert!(assemble_diffusion_2d(&g, &Coeff::PerCell(vec![1.0, 1.0, -1.0, 1.0])).is_err());
    }

    fn two_cell_fracture() -> FractureMesh {
        let g = build_grid(2, 1, 1.0, 1.0).unwrap();
        let net = FractureNetwork::new(vec![Segment {
            x1: 0.0,
            y1: 0.5,
            x2: 1.0,
            y2: 0.5,
        }]);
        mesh_fractures(&net, &g).unwrap()
    }

    #[test]
    fn fracture_two_equal_cells() {
        let m = two_cell_fracture();
        let a = assemble_diffusion_fracture(&m, 1.0).unwrap();
        // midpoint distance 0.5 -> T = 2
        assert!((a.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((a.get(0, 1) + 2.0).abs() < 1e-12);
        assert!((a.get(1, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fracture_single_cell_zero_matrix() {
        let g = build_grid(1, 1, 1.0, 1.0).unwrap();
        let net = FractureNetwork::new(vec![Segment {
            x1: 0.2,
            y1: 0.5,
            x2: 0.8,
            y2: 0.5,
        }]);
        let m = mesh_fractures(&net, &g).unwrap();
        let a = assemble_diffusion_fracture(&m, 5.0).unwrap();
        assert_eq!(a.n_rows(), 1);
        assert_eq!(a.nnz(), 0);
    }

    #[test]
    fn fracture_constant_nullspace() {
        let g = build_grid(10, 10, 1.0, 1.0).unwrap();
        let net = FractureNetwork::new(vec![Segment {
            x1: 0.05,
            y1: 0.13,
            x2: 0.93,
            y2: 0.78,
        }]);
        let m = mesh_fractures(&net, &g).unwrap();
        let a = assemble_diffusion_fracture(&m, 1e6).unwrap();
        let ones = vec![1.0; m.n_cells()];
        let mut y = vec![0.0; m.n_cells()];
        a.spmv_into(&ones, &mut y);
        let max = y.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
        assert!(max <= 1e-9 * a.max_abs());
    }

    #[test]
    fn mass_examples() {
        // 2x2 grid over unit square, c = 1
        let m = assemble_mass(&[0.25; 4], &Coeff::Scalar(1.0)).unwrap();
        assert_eq!(m, vec![0.25; 4]);
        // c = 0 allowed here (rejected upstream by ContinuumSpec)
        let z = assemble_mass(&[0.25; 4], &Coeff::Scalar(0.0)).unwrap();
        assert_eq!(z, vec![0.0; 4]);
        // fracture lengths
        let f = assemble_mass(&[0.5, 0.3], &Coeff::Scalar(1.0)).unwrap();
        assert_eq!(f, vec![0.5, 0.3]);
        assert!(assemble_mass(&[0.5, 0.0], &Coeff::Scalar(1.0)).is_err());
    }

    #[test]
    fn exchange_single_link() {
        let (da, db, q) = assemble_exchange(&[(0, 0, 2.0)], 1, 1).unwrap();
        assert!((da[0] - 2.0).abs() < 1e-12);
        assert!((db[0] - 2.0).abs() < 1e-12);
        assert!((q.get(0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exchange_zero_sigma() {
        let (da, db, q) = assemble_exchange(&[(0, 0, 0.0), (1, 1, 0.0)], 2, 2).unwrap();
        assert_eq!(da, vec![0.0, 0.0]);
        assert_eq!(db, vec![0.0, 0.0]);
        assert_eq!(q.nnz(), 0);
    }

    #[test]
    fn exchange_negative_rejected() {
        assert!(assemble_exchange(&[(0, 0, -1.0)], 1, 1).is_err());
    }

    #[test]
    fn exchange_eigenvalues_two_overlapping_continua() {
        // two continua on 2 cells, sigma = 1 per cell: global Q has
        // eigenvalues {0, 0, 2, 2}
        let (da, _db, q) = assemble_exchange(&[(0, 0, 1.0), (1, 1, 1.0)], 2, 2).unwrap();
        use crate::linalg::CsrBuilder;
        let mut bld = CsrBuilder::new(4, 4);
        for i in 0..2 {
            bld.push(i, i, da[i]);
            bld.push(2 + i, 2 + i, da[i]);
        }
        for i in 0..q.n_rows() {
            let (cols, vals) = q.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                bld.push(i, 2 + c, -v);
                bld.push(2 + c, i, -v);
            }
        }
        let qg = bld.build();
        let lam_min = min_eigenvalue(&qg, 1e-12).unwrap();
        assert!(lam_min.abs() < 1e-10);
        // largest eigenvalue via power-iteration-free check: trace = 4 and
        // Q acts as [[1,-1],[-1,1]] per cell, eigenvalues {0,2} each
        let x = [1.0, 0.0, -1.0, 0.0];
        let mut y = vec![0.0; 4];
        qg.spmv_into(&x, &mut y);
        assert!((y[0] - 2.0).abs() < 1e-12 && (y[2] + 2.0).abs() < 1e-12);
    }

    fn small_2c_setup<'a>(
        grid: &'a StructuredGrid,
        fmesh: &'a FractureMesh,
    ) -> ProblemSetup<'a> {
        ProblemSetup {
            grid,
            fmesh,
            continua: vec![
                ContinuumSpec {
                    name: "matrix".into(),
                    kind: ContinuumKind::Background2d,
                    storage: 0.1,
                    permeability: 1.0,
                },
                ContinuumSpec {
                    name: "fracture".into(),
                    kind: ContinuumKind::Fracture1d,
                    storage: 1.0,
                    permeability: 1e6,
                },
            ],
            exchange: ExchangeSpec {
                pairs: vec![ExchangePair {
                    a: 0,
                    b: 1,
                    rule: ExchangeRule::Efm {
                        coeff: 1.0,
                        dist: 0.25 * 0.1,
                    },
                }],
            },
        }
    }

    #[test]
    fn block_operator_single_continuum_is_diffusion() {
        let g = build_grid(4, 4, 1.0, 1.0).unwrap();
        let empty = FractureMesh {
            cells: vec![],
            seg_ranges: vec![],
        };
        let setup = ProblemSetup {
            grid: &g,
            fmesh: &empty,
            continua: vec![ContinuumSpec {
                name: "matrix".into(),
                kind: ContinuumKind::Background2d,
                storage: 1.0,
                permeability: 2.0,
            }],
            exchange: ExchangeSpec::default(),
        };
        let op = assemble_block_operator(&setup).unwrap();
        let d = assemble_diffusion_2d(&g, &Coeff::Scalar(2.0)).unwrap();
        assert_eq!(op.block(0, 0).unwrap(), &d);
    }

    #[test]
    fn block_operator_symmetric_and_constant_nullspace() {
        let g = build_grid(10, 5, 2.0, 1.0).unwrap();
        let net = FractureNetwork::new(vec![
            Segment {
                x1: 0.21,
                y1: 0.33,
                x2: 1.52,
                y2: 0.71,
            },
            Segment {
                x1: 1.1,
                y1: 0.15,
                x2: 1.9,
                y2: 0.55,
            },
        ]);
        let m = mesh_fractures(&net, &g).unwrap();
        let setup = small_2c_setup(&g, &m);
        let op = assemble_block_operator(&setup).unwrap();
        let a = op.to_monolithic();
        assert_eq!(a.asymmetry(), 0.0);

        let n = op.total_len();
        let ones = vec![1.0; n];
        let mut y = vec![0.0; n];
        a.spmv_into(&ones, &mut y);
        let maxdiag = a.diag().iter().fold(0.0f64, |mx, v| mx.max(*v));
        let res = y.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
        assert!(res <= 1e-9 * maxdiag, "A*1 = {res}, max diag {maxdiag}");

        // PSD probe
        let lam = min_eigenvalue(&a, 1e-10).unwrap();
        assert!(lam >= -1e-9 * maxdiag, "lambda_min {lam}");
    }

    #[test]
    fn exchange_psd_random_vectors() {
        let g = build_grid(6, 4, 1.2, 0.8).unwrap();
        let net = FractureNetwork::new(vec![Segment {
            x1: 0.1,
            y1: 0.2,
            x2: 1.1,
            y2: 0.7,
        }]);
        let m = mesh_fractures(&net, &g).unwrap();
        let setup = small_2c_setup(&g, &m);
        let pair = &setup.exchange.pairs[0];
        let links = setup.links_for(pair).unwrap();
        let (da, db, q) = assemble_exchange(&links, g.n_cells(), m.n_cells()).unwrap();
        let na = g.n_cells();
        let nb = m.n_cells();
        let mut seed = 0xFEEDu64;
        let mut rnd = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((seed >> 33) as f64) / (u32::MAX as f64) - 0.5
        };
        for _ in 0..100 {
            let xa: Vec<f64> = (0..na).map(|_| rnd()).collect();
            let xb: Vec<f64> = (0..nb).map(|_| rnd()).collect();
            // x^T Q x = sum_i da_i xa_i^2 + sum_j db_j xb_j^2 - 2 sum_links q xa_i xb_j
            let mut val = 0.0;
            for i in 0..na {
                val += da[i] * xa[i] * xa[i];
            }
            for j in 0..nb {
                val += db[j] * xb[j] * xb[j];
            }
            for i in 0..q.n_rows() {
                let (cols, vals) = q.row(i);
                for (&c, &v) in cols.iter().zip(vals) {
                    val -= 2.0 * v * xa[i] * xb[c];
                }
            }
            assert!(val >= -1e-12 * val.abs().max(1.0), "x^T Q x = {val}");
        }
    }

    #[test]
    fn well_application() {
        let g = build_grid(1, 1, 1.0, 1.0).unwrap();
        let net = FractureNetwork::new(vec![Segment {
            x1: 0.25,
            y1: 0.5,
            x2: 0.75,
            y2: 0.5,
        }]);
        let m = mesh_fractures(&net, &g).unwrap();
        let setup = small_2c_setup(&g, &m);
        let op = assemble_block_operator(&setup).unwrap();

        // q_w = 0 leaves the operator unchanged
        let w0 = WellSpec {
            continuum: 1,
            cells: vec![0],
            cell_measures: vec![0.5],
            u_w: 1.2,
            q_w: 0.0,
        };
        let same = apply_well(&op, &w0).unwrap();
        assert_eq!(op, same);

        // diagonal increment equals q_w * |cell| on exactly the well rows
        let w = WellSpec {
            continuum: 1,
            cells: vec![0],
            cell_measures: vec![0.5],
            u_w: 1.2,
            q_w: 1e5,
        };
        let welled = apply_well(&op, &w).unwrap();
        let d0 = op.block(1, 1).unwrap().diag();
        let d1 = welled.block(1, 1).unwrap().diag();
        assert!((d1[0] - d0[0] - 1e5 * 0.5).abs() < 1e-6);
        assert!((welled.rhs[1][0] - 1e5 * 1.2 * 0.5).abs() < 1e-6);

        // unknown cell index
        let bad = WellSpec {
            continuum: 1,
            cells: vec![99],
            cell_measures: vec![0.5],
            u_w: 1.2,
            q_w: 1.0,
        };
        assert!(apply_well(&op, &bad).is_err());
    }

    #[test]
    fn well_fixed_point_reaches_well_pressure() {
        // single-cell system, M = 1, no diffusion: steady state of
        // q_w (u_w - u) is u = u_w
        let q_w: f64 = 1e5;
        let u_w: f64 = 1.2;
        // backward Euler to steady state: (1/tau + q_w) u1 = u0/tau + q_w u_w
        let tau = 1.0;
        let mut u = 1.0;
        for _ in 0..200 {
            u = (u / tau + q_w * u_w) / (1.0 / tau + q_w);
        }
        assert!((u - u_w).abs() < 1e-9);
    }

    #[test]
    fn canonical_2c_dof_count() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
        let net =
            FractureNetwork::from_file(&root.join("../../geometry/paper_fig1.txt")).unwrap();
        let g = build_grid(400, 200, 2.0, 1.0).unwrap();
        let m = mesh_fractures(&net, &g).unwrap();
        let setup = small_2c_setup(&g, &m);
        let op = assemble_block_operator(&setup).unwrap();
        let dof = op.total_len();
        assert!(
            (dof as f64 - 81_474.0).abs() <= 0.05 * 81_474.0,
            "2C DOF = {dof}"
        );
        // three-continuum variant adds another background block
        let dof3 = dof + g.n_cells();
        assert!((dof3 as f64 - 161_474.0).abs() <= 0.05 * 161_474.0);
    }
}
