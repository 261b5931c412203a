//! Structured grids, embedded fracture meshing, and fine-to-coarse index maps.

use std::path::Path;

use crate::error::{Error, Result};

/// Line segment in domain coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Segment {
    pub fn length(&self) -> f64 {
        ((self.x2 - self.x1).powi(2) + (self.y2 - self.y1).powi(2)).sqrt()
    }

    pub fn point_at(&self, t: f64) -> (f64, f64) {
        (
            self.x1 + t * (self.x2 - self.x1),
            self.y1 + t * (self.y2 - self.y1),
        )
    }
}

/// A set of fracture segments inside the domain box.
#[derive(Debug, Clone, PartialEq)]
pub struct FractureNetwork {
    pub segments: Vec<Segment>,
}

impl FractureNetwork {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    /// Plain-text format: one `x1 y1 x2 y2` per line, `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_str_content(&text, &path.display().to_string())
    }

    pub fn from_str_content(text: &str, origin: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!(
                            "{origin}:{}: bad number '{tok}'",
                            lineno + 1
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            if nums.len() != 4 {
                return Err(Error::InvalidArgument(format!(
                    "{origin}:{}: expected 4 numbers, found {}",
                    lineno + 1,
                    nums.len()
                )));
            }
            segments.push(Segment {
                x1: nums[0],
                y1: nums[1],
                x2: nums[2],
                y2: nums[3],
            });
        }
        Ok(Self { segments })
    }

    /// Every segment must lie inside [0,lx] x [0,ly] and have positive length.
    pub fn validate(&self, lx: f64, ly: f64) -> Result<()> {
        for (k, s) in self.segments.iter().enumerate() {
            let inside = |x: f64, y: f64| x >= 0.0 && x <= lx && y >= 0.0 && y <= ly;
            if !inside(s.x1, s.y1) || !inside(s.x2, s.y2) {
                return Err(Error::InvalidArgument(format!(
                    "segment {k} leaves the domain [0,{lx}] x [0,{ly}]"
                )));
            }
            if s.length() <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "segment {k} has zero length"
                )));
            }
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }
}

/// Uniform rectangular grid over [0,lx] x [0,ly], cells in row-major order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuredGrid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl StructuredGrid {
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn cell_center(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.coords(idx);
        (
            (i as f64 + 0.5) * self.hx(),
            (j as f64 + 0.5) * self.hy(),
        )
    }

    /// Cell containing the point; boundary points resolve toward the upper cell,
    /// clamped into the grid.
    pub fn cell_of_point(&self, x: f64, y: f64) -> usize {
        let i = ((x / self.hx()).floor() as isize).clamp(0, self.nx as isize - 1) as usize;
        let j = ((y / self.hy()).floor() as isize).clamp(0, self.ny as isize - 1) as usize;
        self.index(i, j)
    }
}

pub fn build_grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<StructuredGrid> {
    if nx < 1 || ny < 1 {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least one cell per direction, got {nx} x {ny}"
        )));
    }
    if lx <= 0.0 || ly <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "domain extents must be positive, got {lx} x {ly}"
        )));
    }
    Ok(StructuredGrid { nx, ny, lx, ly })
}

/// One fracture cell: a parametric interval of a segment inside one
/// background cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FractureCell {
    pub segment: usize,
    pub t0: f64,
    pub t1: f64,
    pub length: f64,
    pub host: usize,
}

impl FractureCell {
    pub fn midpoint_t(&self) -> f64 {
        0.5 * (self.t0 + self.t1)
    }
}

/// Fracture cells grouped per segment in arc order; adjacency along a
/// segment is implied by consecutive positions within its range.
#[derive(Debug, Clone, PartialEq)]
pub struct FractureMesh {
    pub cells: Vec<FractureCell>,
    pub seg_ranges: Vec<std::ops::Range<usize>>,
}

impl FractureMesh {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.length).collect()
    }

    pub fn total_length(&self) -> f64 {
        self.cells.iter().map(|c| c.length).sum()
    }
}

/// Clips every segment against the grid lines. Slivers shorter than
/// `1e-12 * min(hx, hy)` merge into their neighbor, and consecutive pieces
/// that land in the same background cell are coalesced.
pub fn mesh_fractures(net: &FractureNetwork, grid: &StructuredGrid) -> Result<FractureMesh> {
    net.validate(grid.lx, grid.ly)?;
    let hx = grid.hx();
    let hy = grid.hy();
    let sliver = 1e-12 * hx.min(hy);

    let mut cells = Vec::new();
    let mut seg_ranges = Vec::with_capacity(net.segments.len());

    for (sid, seg) in net.segments.iter().enumerate() {
        let start = cells.len();
        let len = seg.length();
        let dx = seg.x2 - seg.x1;
        let dy = seg.y2 - seg.y1;

        let mut ts = vec![0.0, 1.0];
        if dx.abs() > 0.0 {
            let (ilo, ihi) = if dx > 0.0 {
                ((seg.x1 / hx).ceil() as isize, (seg.x2 / hx).floor() as isize)
            } else {
                ((seg.x2 / hx).ceil() as isize, (seg.x1 / hx).floor() as isize)
            };
            for i in ilo..=ihi {
                let t = (i as f64 * hx - seg.x1) / dx;
                if t > 0.0 && t < 1.0 {
                    ts.push(t);
                }
            }
        }
        if dy.abs() > 0.0 {
            let (jlo, jhi) = if dy > 0.0 {
                ((seg.y1 / hy).ceil() as isize, (seg.y2 / hy).floor() as isize)
            } else {
                ((seg.y2 / hy).ceil() as isize, (seg.y1 / hy).floor() as isize)
            };
            for j in jlo..=jhi {
                let t = (j as f64 * hy - seg.y1) / dy;
                if t > 0.0 && t < 1.0 {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

        // raw intervals
        let mut pieces: Vec<(f64, f64)> = ts.windows(2).map(|w| (w[0], w[1])).collect();

        // merge slivers into the previous piece (or the next one at the start)
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pieces.len());
        for p in pieces.drain(..) {
            let plen = (p.1 - p.0) * len;
            if plen < sliver {
                if let Some(prev) = merged.last_mut() {
                    prev.1 = p.1;
                } else {
                    merged.push(p); // absorbed by the next piece below
                }
            } else if let Some(prev) = merged.last_mut() {
                if (prev.1 - prev.0) * len < sliver {
                    prev.1 = p.1;
                } else {
                    merged.push(p);
                }
            } else {
                merged.push(p);
            }
        }

        // assign hosts; coalesce consecutive pieces with the same host
        for (t0, t1) in merged {
            let (mx, my) = seg.point_at(0.5 * (t0 + t1));
            let host = grid.cell_of_point(mx, my);
            match cells.last_mut() {
                Some(FractureCell {
                    segment,
                    t1: last_t1,
                    host: last_host,
                    ..
                }) if *segment == sid && *last_host == host => {
                    *last_t1 = t1;
                }
                _ => cells.push(FractureCell {
                    segment: sid,
                    t0,
                    t1,
                    length: 0.0,
                    host,
                }),
            }
        }
        for c in cells[start..].iter_mut() {
            c.length = (c.t1 - c.t0) * len;
        }
        seg_ranges.push(start..cells.len());
    }

    Ok(FractureMesh { cells, seg_ranges })
}

/// Fine-cell membership of each coarse cell, per continuum kind.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseCellSet {
    /// Flat index of the coarse cell in the coarse grid.
    pub coarse_idx: usize,
    /// Fine DOF indices contained in this coarse cell (background cells or
    /// fracture cells, depending on the continuum kind).
    pub members: Vec<usize>,
    /// Total measure (area for background, length for fracture continua).
    pub measure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMap {
    pub fine: StructuredGrid,
    pub coarse: StructuredGrid,
    /// All coarse cells, shared by every background continuum.
    pub background: Vec<CoarseCellSet>,
    /// Only coarse cells with fracture content, sorted by coarse index.
    pub fracture: Vec<CoarseCellSet>,
}

impl CoarseMap {
    pub fn refinement(&self) -> (usize, usize) {
        (self.fine.nx / self.coarse.nx, self.fine.ny / self.coarse.ny)
    }
}

pub fn build_coarse_map(
    fine: &StructuredGrid,
    coarse: &StructuredGrid,
    fmesh: &FractureMesh,
) -> Result<CoarseMap> {
    if (fine.lx - coarse.lx).abs() > 1e-12 || (fine.ly - coarse.ly).abs() > 1e-12 {
        return Err(Error::InvalidArgument(
            "fine and coarse grids cover different domains".into(),
        ));
    }
    if fine.nx % coarse.nx != 0 || fine.ny % coarse.ny != 0 {
        return Err(Error::InvalidArgument(format!(
            "coarse grid {}x{} does not divide fine grid {}x{}",
            coarse.nx, coarse.ny, fine.nx, fine.ny
        )));
    }
    let rx = fine.nx / coarse.nx;
    let ry = fine.ny / coarse.ny;

    let mut background = Vec::with_capacity(coarse.n_cells());
    for cj in 0..coarse.ny {
        for ci in 0..coarse.nx {
            let mut members = Vec::with_capacity(rx * ry);
            for j in (cj * ry)..((cj + 1) * ry) {
                for i in (ci * rx)..((ci + 1) * rx) {
                    members.push(fine.index(i, j));
                }
            }
            background.push(CoarseCellSet {
                coarse_idx: coarse.index(ci, cj),
                measure: members.len() as f64 * fine.cell_area(),
                members,
            });
        }
    }

    let mut per_coarse: std::collections::BTreeMap<usize, (Vec<usize>, f64)> =
        std::collections::BTreeMap::new();
    for (fidx, fc) in fmesh.cells.iter().enumerate() {
        let (fi, fj) = fine.coords(fc.host);
        let cidx = coarse.index(fi / rx, fj / ry);
        let entry = per_coarse.entry(cidx).or_default();
        entry.0.push(fidx);
        entry.1 += fc.length;
    }
    let fracture = per_coarse
        .into_iter()
        .map(|(coarse_idx, (members, measure))| CoarseCellSet {
            coarse_idx,
            members,
            measure,
        })
        .collect();

    Ok(CoarseMap {
        fine: *fine,
        coarse: *coarse,
        background,
        fracture,
    })
}
