//! Linear-multistep time schemes for the multicontinuum block systems:
//! coupled implicit two- and three-level families and decoupled
//! implicit-explicit variants with D/L/U additive splittings, plus
//! stability verdicts, energy diagnostics, and the transient driver.
//!
//! The general step is
//!
//! ```text
//! (M/tau)(a_new u' + a_old u + a_prev u_pr)
//!   + sum_{implicit blocks} A_ab (c_new u' + c_old u + c_prev u_pr)
//!   + sum_{explicit blocks} A_ab (d_old u + d_prev u_pr) = F
//! ```
//!
//! with the two-level family (a_new, a_old) = (1, -1), (c_new, c_old) =
//! (theta, 1-theta), d_old = 1, and the three-level family a = (mu, 1-2mu,
//! mu-1), c = (sigma+mu-1/2, -(2sigma+mu-3/2), sigma), d = (mu+1/2,
//! -(mu-1/2)). Coupled schemes put every block in the implicit set;
//! decoupled schemes keep the block diagonal (D), lower triangle (L), or
//! upper triangle (U) implicit and treat the remainder explicitly.

use std::time::Instant;

use crate::assembly::BlockOperator;
use crate::error::{Error, Result};
use crate::linalg::accum::Compensated;
use crate::linalg::{
    cg_solve_guess, min_eigenvalue, CgOptions, CsrMatrix, DenseLu, DenseMatrix, PrecondKind,
    Preconditioner,
};

const DIRECT_LIMIT: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    D,
    L,
    U,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "D" | "d" => Ok(SplitMode::D),
            "L" | "l" => Ok(SplitMode::L),
            "U" | "u" => Ok(SplitMode::U),
            other => Err(Error::InvalidArgument(format!(
                "unknown split mode '{other}' (expected D, L, or U)"
            ))),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitMode::D => write!(f, "D"),
            SplitMode::L => write!(f, "L"),
            SplitMode::U => write!(f, "U"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchemeFamily {
    Im1 { theta: f64 },
    Im2 { mu: f64, sigma: f64 },
    ImEx1 { theta: f64 },
    ImEx2 { mu: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeSpec {
    pub family: SchemeFamily,
    pub split: Option<SplitMode>,
}

impl SchemeSpec {
    pub fn im1(theta: f64) -> Self {
        Self {
            family: SchemeFamily::Im1 { theta },
            split: None,
        }
    }

    /// Three-level implicit presets: CN = (1, 0), BDF2 = (1.5, 0), LF = (0.5, 0).
    pub fn im2(mu: f64, sigma: f64) -> Self {
        Self {
            family: SchemeFamily::Im2 { mu, sigma },
            split: None,
        }
    }

    pub fn im2_cn() -> Self {
        Self::im2(1.0, 0.0)
    }

    pub fn im2_bdf() -> Self {
        Self::im2(1.5, 0.0)
    }

    pub fn im2_lf() -> Self {
        Self::im2(0.5, 0.0)
    }

    pub fn imex1(theta: f64, split: SplitMode) -> Self {
        Self {
            family: SchemeFamily::ImEx1 { theta },
            split: Some(split),
        }
    }

    /// Three-level implicit-explicit presets: CNAB = (1, 0), SBDF = (1.5, 0),
    /// CNLF = (0.5, sigma).
    pub fn imex2(mu: f64, sigma: f64, split: SplitMode) -> Self {
        Self {
            family: SchemeFamily::ImEx2 { mu, sigma },
            split: Some(split),
        }
    }

    pub fn imex2_cnab(split: SplitMode) -> Self {
        Self::imex2(1.0, 0.0, split)
    }

    pub fn imex2_sbdf(split: SplitMode) -> Self {
        Self::imex2(1.5, 0.0, split)
    }

    pub fn imex2_cnlf(sigma: f64, split: SplitMode) -> Self {
        Self::imex2(0.5, sigma, split)
    }

    pub fn from_name(name: &str, split: Option<SplitMode>) -> Result<Self> {
        let need_split = || {
            split.ok_or_else(|| {
                Error::InvalidArgument(format!("scheme '{name}' needs a split mode"))
            })
        };
        match name {
            "im1" => Ok(Self::im1(1.0)),
            "im2-cn" => Ok(Self::im2_cn()),
            "im2-bdf" => Ok(Self::im2_bdf()),
            "im2-lf" => Ok(Self::im2_lf()),
            "imex1" => Ok(Self::imex1(1.0, need_split()?)),
            "imex2-cnab" => Ok(Self::imex2_cnab(need_split()?)),
            "imex2-sbdf" => Ok(Self::imex2_sbdf(need_split()?)),
            "imex2-cnlf" => Ok(Self::imex2_cnlf(0.5, need_split()?)),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme '{other}'"
            ))),
        }
    }

    pub fn name(&self) -> String {
        match self.family {
            SchemeFamily::Im1 { theta } if theta == 1.0 => "im1".into(),
            SchemeFamily::Im1 { theta } => format!("im1(theta={theta})"),
            SchemeFamily::Im2 { mu, sigma } => match (mu, sigma) {
                (m, s) if m == 1.0 && s == 0.0 => "im2-cn".into(),
                (m, s) if m == 1.5 && s == 0.0 => "im2-bdf".into(),
                (m, s) if m == 0.5 && s == 0.0 => "im2-lf".into(),
                _ => format!("im2(mu={mu},sigma={sigma})"),
            },
            SchemeFamily::ImEx1 { theta } if theta == 1.0 => "imex1".into(),
            SchemeFamily::ImEx1 { theta } => format!("imex1(theta={theta})"),
            SchemeFamily::ImEx2 { mu, sigma } => match (mu, sigma) {
                (m, s) if m == 1.0 && s == 0.0 => "imex2-cnab".into(),
                (m, s) if m == 1.5 && s == 0.0 => "imex2-sbdf".into(),
                (m, s) if m == 0.5 => format!("imex2-cnlf(sigma={s})"),
                _ => format!("imex2(mu={mu},sigma={sigma})"),
            },
        }
    }

    pub fn is_imex(&self) -> bool {
        matches!(
            self.family,
            SchemeFamily::ImEx1 { .. } | SchemeFamily::ImEx2 { .. }
        )
    }

    pub fn is_three_level(&self) -> bool {
        matches!(
            self.family,
            SchemeFamily::Im2 { .. } | SchemeFamily::ImEx2 { .. }
        )
    }

    /// Scalar parameter conditions: theta >= 1/2 for two-level schemes,
    /// mu >= 1/2 and sigma >= (1 - mu)/2 for three-level schemes.
    pub fn scalar_condition_holds(&self) -> bool {
        match self.family {
            SchemeFamily::Im1 { theta } | SchemeFamily::ImEx1 { theta } => theta >= 0.5,
            SchemeFamily::Im2 { mu, sigma } | SchemeFamily::ImEx2 { mu, sigma } => {
                mu >= 0.5 && sigma >= (1.0 - mu) / 2.0
            }
        }
    }
}

/// Additive decomposition A = A1 + A2 over the block structure; blocks are
/// assigned wholesale, so the identity is exact.
#[derive(Debug, Clone, Copy)]
pub struct SplitOperator<'a> {
    pub op: &'a BlockOperator,
    pub mode: SplitMode,
}

pub fn split_operator<'a>(op: &'a BlockOperator, mode: SplitMode) -> SplitOperator<'a> {
    SplitOperator { op, mode }
}

impl<'a> SplitOperator<'a> {
    /// Continua are ordered by increasing permeability; L solves them in
    /// forward order (implicit lower triangle), U in backward order.
    pub fn in_implicit(&self, a: usize, b: usize) -> bool {
        match self.mode {
            SplitMode::D => a == b,
            SplitMode::L => b <= a,
            SplitMode::U => b >= a,
        }
    }

    pub fn a1_block(&self, a: usize, b: usize) -> Option<&CsrMatrix> {
        if self.in_implicit(a, b) {
            self.op.block(a, b)
        } else {
            None
        }
    }

    pub fn a2_block(&self, a: usize, b: usize) -> Option<&CsrMatrix> {
        if self.in_implicit(a, b) {
            None
        } else {
            self.op.block(a, b)
        }
    }

    fn monolithic_part(&self, implicit: bool) -> CsrMatrix {
        let n = self.op.total_len();
        let off = self.op.offsets();
        let l = self.op.n_continua();
        let mut bld = crate::linalg::CsrBuilder::new(n, n);
        for a in 0..l {
            for b in 0..l {
                let blk = if implicit {
                    self.a1_block(a, b)
                } else {
                    self.a2_block(a, b)
                };
                if let Some(m) = blk {
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

    pub fn a1_monolithic(&self) -> CsrMatrix {
        self.monolithic_part(true)
    }

    pub fn a2_monolithic(&self) -> CsrMatrix {
        self.monolithic_part(false)
    }
}

#[derive(Debug, Clone)]
pub enum LinearSolverKind {
    Cg {
        precond: PrecondKind,
        rtol: f64,
        max_iter: usize,
    },
    /// Dense LU; desk-scale systems only.
    Direct,
}

impl Default for LinearSolverKind {
    fn default() -> Self {
        LinearSolverKind::Cg {
            precond: PrecondKind::Ilu0,
            rtol: 1e-8,
            max_iter: 10_000,
        }
    }
}

enum FactoredSystem {
    Cg {
        matrix: CsrMatrix,
        precond: Preconditioner,
        opts: CgOptions,
    },
    Direct(DenseLu),
}

impl FactoredSystem {
    fn build(matrix: CsrMatrix, kind: &LinearSolverKind) -> Result<Self> {
        match kind {
            LinearSolverKind::Cg {
                precond,
                rtol,
                max_iter,
            } => {
                let p = Preconditioner::build(*precond, &matrix)
                    .or_else(|_| Preconditioner::build(PrecondKind::Jacobi, &matrix))?;
                Ok(FactoredSystem::Cg {
                    precond: p,
                    opts: CgOptions {
                        rtol: *rtol,
                        max_iter: *max_iter,
                        record_history: false,
                    },
                    matrix,
                })
            }
            LinearSolverKind::Direct => {
                let n = matrix.n_rows();
                if n > DIRECT_LIMIT {
                    return Err(Error::InvalidArgument(format!(
                        "direct solver limited to {DIRECT_LIMIT} unknowns, got {n}"
                    )));
                }
                let mut dense = DenseMatrix::zeros(n, n);
                for i in 0..n {
                    let (cols, vals) = matrix.row(i);
                    for (&c, &v) in cols.iter().zip(vals) {
                        dense.set(i, c, v);
                    }
                }
                Ok(FactoredSystem::Direct(DenseLu::factor(&dense)?))
            }
        }
    }

    /// Solves into `x` (which carries the warm start) and returns iterations.
    fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<usize> {
        match self {
            FactoredSystem::Cg {
                matrix,
                precond,
                opts,
            } => {
                let stats = cg_solve_guess(matrix, b, x, precond, opts)?;
                if !stats.converged {
                    return Err(Error::NonConverged {
                        context: "implicit step solve".into(),
                        iterations: stats.iterations,
                        relres: stats.final_relres,
                    });
                }
                Ok(stats.iterations)
            }
            FactoredSystem::Direct(lu) => {
                lu.solve_into(b, x);
                Ok(1)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationState {
    pub u: Vec<f64>,
    pub u_prev: Option<Vec<f64>>,
    pub step: usize,
    pub time: f64,
}

impl SimulationState {
    pub fn initial(u0: Vec<f64>) -> Self {
        Self {
            u: u0,
            u_prev: None,
            step: 0,
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: usize,
    pub per_continuum_iters: Vec<usize>,
    pub per_continuum_time: Vec<f64>,
    /// Theorem energy functional after the step, when monitoring is on.
    pub energy: Option<f64>,
}

struct Coeffs {
    a_new: f64,
    a_old: f64,
    a_prev: f64,
    c_new: f64,
    c_old: f64,
    c_prev: f64,
    d_old: f64,
    d_prev: f64,
}

fn coeffs(family: SchemeFamily) -> Coeffs {
    match family {
        SchemeFamily::Im1 { theta } | SchemeFamily::ImEx1 { theta } => Coeffs {
            a_new: 1.0,
            a_old: -1.0,
            a_prev: 0.0,
            c_new: theta,
            c_old: 1.0 - theta,
            c_prev: 0.0,
            d_old: 1.0,
            d_prev: 0.0,
        },
        SchemeFamily::Im2 { mu, sigma } | SchemeFamily::ImEx2 { mu, sigma } => Coeffs {
            a_new: mu,
            a_old: 1.0 - 2.0 * mu,
            a_prev: mu - 1.0,
            c_new: sigma + mu - 0.5,
            c_old: -(2.0 * sigma + mu - 1.5),
            c_prev: sigma,
            d_old: mu + 0.5,
            d_prev: -(mu - 0.5),
        },
    }
}

/// Prefactored stepper for one scheme on one operator. The implicit
/// matrices are constant across steps, so preconditioners and
/// factorizations are built once.
pub struct Stepper<'a> {
    op: &'a BlockOperator,
    pub scheme: SchemeSpec,
    pub tau: f64,
    cs: Coeffs,
    /// One system for coupled schemes, one per continuum for decoupled.
    systems: Vec<FactoredSystem>,
    /// Solve order over continua (decoupled only).
    order: Vec<usize>,
    offsets: Vec<usize>,
    bootstrap: Option<Box<Stepper<'a>>>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        op: &'a BlockOperator,
        scheme: SchemeSpec,
        tau: f64,
        solver: &LinearSolverKind,
        bootstrap_substeps: usize,
    ) -> Result<Self> {
        if tau <= 0.0 {
            return Err(Error::InvalidArgument("time step must be positive".into()));
        }
        if scheme.is_imex() && scheme.split.is_none() {
            return Err(Error::InvalidArgument(
                "implicit-explicit schemes need a split mode".into(),
            ));
        }
        let cs = coeffs(scheme.family);
        let l = op.n_continua();
        let offsets = op.offsets();

        let mut systems = Vec::new();
        if scheme.is_imex() {
            for a in 0..l {
                let aa = op
                    .block(a, a)
                    .cloned()
                    .unwrap_or_else(|| CsrMatrix::zeros(op.sizes[a], op.sizes[a]));
                let mut diag = vec![0.0; op.sizes[a]];
                for (d, m) in diag.iter_mut().zip(&op.mass[a]) {
                    *d = cs.a_new * m / tau;
                }
                systems.push(FactoredSystem::build(
                    aa.scale(cs.c_new).add_diag(&diag),
                    solver,
                )?);
            }
        } else {
            let a = op.to_monolithic();
            let mut diag = op.mass_flat();
            for d in diag.iter_mut() {
                *d = cs.a_new * *d / tau;
            }
            systems.push(FactoredSystem::build(a.scale(cs.c_new).add_diag(&diag), solver)?);
        }

        let order: Vec<usize> = match scheme.split {
            Some(SplitMode::U) => (0..l).rev().collect(),
            _ => (0..l).collect(),
        };

        let bootstrap = if scheme.is_three_level() {
            let m = bootstrap_substeps.max(1);
            Some(Box::new(Stepper::new(
                op,
                SchemeSpec::im1(1.0),
                tau / m as f64,
                solver,
                1,
            )?))
        } else {
            None
        };

        Ok(Self {
            op,
            scheme,
            tau,
            cs,
            systems,
            order,
            offsets,
            bootstrap,
        })
    }

    fn split(&self) -> Option<SplitOperator<'a>> {
        self.scheme
            .split
            .filter(|_| self.scheme.is_imex())
            .map(|mode| SplitOperator { op: self.op, mode })
    }

    /// Right-hand side of the solve, without the new-value off-diagonal
    /// implicit terms (those enter during the substitution sweep).
    fn base_rhs(&self, u: &[f64], u_prev: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.op.total_len();
        if u.len() != n {
            return Err(Error::DimensionMismatch(
                "state length does not match operator".into(),
            ));
        }
        let cs = &self.cs;
        let three_level = self.scheme.is_three_level();
        if three_level && u_prev.is_none() {
            return Err(Error::State(
                "three-level scheme needs the previous state; bootstrap first".into(),
            ));
        }
        let l = self.op.n_continua();
        let off = &self.offsets;
        let split = self.split();

        let mut rhs = self.op.rhs_flat();
        // mass part
        let mass = self.op.mass_flat();
        for i in 0..n {
            let mut v = -cs.a_old * mass[i] / self.tau * u[i];
            if let Some(up) = u_prev {
                v -= cs.a_prev * mass[i] / self.tau * up[i];
            }
            rhs[i] += v;
        }
        // operator parts
        for a in 0..l {
            for b in 0..l {
                let Some(m) = self.op.block(a, b) else { continue };
                let implicit = match &split {
                    Some(s) => s.in_implicit(a, b),
                    None => true,
                };
                let (w_old, w_prev) = if implicit {
                    (cs.c_old, cs.c_prev)
                } else {
                    (cs.d_old, cs.d_prev)
                };
                let dst = &mut rhs[off[a]..off[a] + self.op.sizes[a]];
                if w_old != 0.0 {
                    m.spmv_add(&u[off[b]..off[b] + self.op.sizes[b]], dst, -w_old);
                }
                if let Some(up) = u_prev {
                    if w_prev != 0.0 {
                        m.spmv_add(&up[off[b]..off[b] + self.op.sizes[b]], dst, -w_prev);
                    }
                }
            }
        }
        Ok(rhs)
    }

    /// Advances the state by one step of the configured scheme.
    pub fn step(&self, state: &mut SimulationState) -> Result<StepReport> {
        let res = self.step_inner(state);
        res.map_err(|e| Error::StepFailure {
            step: state.step + 1,
            source: Box::new(e),
        })
    }

    fn step_inner(&self, state: &mut SimulationState) -> Result<StepReport> {
        let rhs = self.base_rhs(&state.u, state.u_prev.as_deref())?;
        let off = &self.offsets;
        let mut u_new = state.u.clone(); // warm start
        let mut iters = Vec::new();
        let mut times = Vec::new();

        if let Some(split) = self.split() {
            for &a in &self.order {
                let t0 = Instant::now();
                let mut b = rhs[off[a]..off[a] + self.op.sizes[a]].to_vec();
                for bb in 0..self.op.n_continua() {
                    if bb == a {
                        continue;
                    }
                    if !split.in_implicit(a, bb) {
                        continue;
                    }
                    // already-updated neighbor in the sweep order
                    if let Some(m) = self.op.block(a, bb) {
                        m.spmv_add(
                            &u_new[off[bb]..off[bb] + self.op.sizes[bb]],
                            &mut b,
                            -self.cs.c_new,
                        );
                    }
                }
                let it = self.systems[a].solve(&b, &mut u_new[off[a]..off[a] + self.op.sizes[a]])?;
                iters.push(it);
                times.push(t0.elapsed().as_secs_f64());
            }
            // reorder reports into continuum order
            let mut by_cont_iters = vec![0usize; self.op.n_continua()];
            let mut by_cont_times = vec![0.0; self.op.n_continua()];
            for (k, &a) in self.order.iter().enumerate() {
                by_cont_iters[a] = iters[k];
                by_cont_times[a] = times[k];
            }
            iters = by_cont_iters;
            times = by_cont_times;
        } else {
            let t0 = Instant::now();
            let it = self.systems[0].solve(&rhs, &mut u_new)?;
            iters.push(it);
            times.push(t0.elapsed().as_secs_f64());
        }

        state.u_prev = Some(std::mem::replace(&mut state.u, u_new));
        state.step += 1;
        state.time += self.tau;
        Ok(StepReport {
            step: state.step,
            per_continuum_iters: iters,
            per_continuum_time: times,
            energy: None,
        })
    }

    /// Startup for three-level schemes: backward-Euler substeps covering one
    /// full step. May limit the observed order near t = tau.
    pub fn bootstrap_first_step(&self, state: &mut SimulationState) -> Result<StepReport> {
        let boot = self.bootstrap.as_ref().ok_or_else(|| {
            Error::State("bootstrap only applies to three-level schemes".into())
        })?;
        let u0 = state.u.clone();
        let substeps = (self.tau / boot.tau).round() as usize;
        let mut iters_total = vec![0usize; 1];
        let mut time_total = vec![0.0; 1];
        for _ in 0..substeps.max(1) {
            let rep = boot.step(state)?;
            iters_total[0] += rep.per_continuum_iters.iter().sum::<usize>();
            time_total[0] += rep.per_continuum_time.iter().sum::<f64>();
        }
        // the scheme sees exactly one step: u_prev = u0
        state.u_prev = Some(u0);
        state.step = 1;
        state.time = self.tau;
        Ok(StepReport {
            step: 1,
            per_continuum_iters: iters_total,
            per_continuum_time: time_total,
            energy: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StabilityVerdict {
    /// The sufficient condition of the matching theorem holds. `heuristic`
    /// marks L/U splits, where the probe uses symmetrized parts.
    Holds { heuristic: bool },
    Violated { lambda_min: Option<f64> },
    NotApplicable,
}

impl std::fmt::Display for StabilityVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StabilityVerdict::Holds { heuristic: false } => write!(f, "sufficient-condition-holds"),
            StabilityVerdict::Holds { heuristic: true } => {
                write!(f, "sufficient-condition-holds (heuristic for L/U)")
            }
            StabilityVerdict::Violated { lambda_min: Some(l) } => {
                write!(f, "violated (lambda_min = {l:.3e})")
            }
            StabilityVerdict::Violated { lambda_min: None } => write!(f, "violated"),
            StabilityVerdict::NotApplicable => write!(f, "not-applicable"),
        }
    }
}

/// Checks the stability conditions: scalar parameter bounds for coupled
/// schemes, operator inequalities for decoupled ones
/// ((theta - 1/2) A1 >= A2 / 2 two-level; mu >= 1/2 and
/// (sigma + (mu-1)/2) A1 >= (mu/2) A2 three-level).
pub fn check_stability(scheme: &SchemeSpec, op: &BlockOperator) -> Result<StabilityVerdict> {
    match scheme.family {
        SchemeFamily::Im1 { .. } | SchemeFamily::Im2 { .. } => {
            if scheme.scalar_condition_holds() {
                Ok(StabilityVerdict::Holds { heuristic: false })
            } else {
                Ok(StabilityVerdict::Violated { lambda_min: None })
            }
        }
        SchemeFamily::ImEx1 { theta } => {
            let Some(mode) = scheme.split else {
                return Ok(StabilityVerdict::NotApplicable);
            };
            operator_condition(op, mode, theta - 0.5, 0.5)
        }
        SchemeFamily::ImEx2 { mu, sigma } => {
            let Some(mode) = scheme.split else {
                return Ok(StabilityVerdict::NotApplicable);
            };
            if mu < 0.5 {
                return Ok(StabilityVerdict::Violated { lambda_min: None });
            }
            operator_condition(op, mode, sigma + (mu - 1.0) / 2.0, mu / 2.0)
        }
    }
}

/// lambda_min(c1 A1 - c2 A2) >= -tol, with symmetrized parts for L/U.
fn operator_condition(
    op: &BlockOperator,
    mode: SplitMode,
    c1: f64,
    c2: f64,
) -> Result<StabilityVerdict> {
    let split = SplitOperator { op, mode };
    let heuristic = mode != SplitMode::D;
    let a1 = split.a1_monolithic();
    let a2 = split.a2_monolithic();
    if a2.nnz() == 0 {
        // no explicit part: condition reduces to c1 A1 >= 0
        if c1 >= 0.0 {
            return Ok(StabilityVerdict::Holds { heuristic: false });
        }
    }
    let a1s = if heuristic { a1.symmetrize()? } else { a1 };
    let a2s = if heuristic { a2.symmetrize()? } else { a2 };
    let s = a1s.scale(c1).add_scaled(&a2s.scale(c2), -1.0)?;
    let scale = s.diag().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 + 1e-12 * scale;
    let lam = min_eigenvalue(&s, tol.min(1e-8))?;
    if lam >= -tol {
        Ok(StabilityVerdict::Holds { heuristic })
    } else {
        Ok(StabilityVerdict::Violated {
            lambda_min: Some(lam),
        })
    }
}

/// ||u||_A^2 via the block quadratic form (Theorem 1/3 functional).
pub fn energy_a(op: &BlockOperator, u: &[f64]) -> f64 {
    op.quad_form(u)
}

/// Three-level composite functional
/// (1/4)||u + u_prev||_A^2 + ||u - u_prev||_S^2 with
/// S = (mu - 1/2) M / tau + (sigma + (mu-1)/2) A1 - (mu/2) A2
/// (A1 = A, A2 = 0 for coupled schemes).
pub fn composite_energy(
    op: &BlockOperator,
    scheme: &SchemeSpec,
    tau: f64,
    u: &[f64],
    u_prev: &[f64],
) -> Result<f64> {
    let (mu, sigma) = match scheme.family {
        SchemeFamily::Im2 { mu, sigma } | SchemeFamily::ImEx2 { mu, sigma } => (mu, sigma),
        _ => {
            return Err(Error::InvalidArgument(
                "composite energy applies to three-level schemes".into(),
            ))
        }
    };
    let n = op.total_len();
    let mut sum = vec![0.0; n];
    let mut diff = vec![0.0; n];
    for i in 0..n {
        sum[i] = u[i] + u_prev[i];
        diff[i] = u[i] - u_prev[i];
    }
    let part_a = 0.25 * op.quad_form(&sum);

    // ||diff||_S^2
    let mass = op.mass_flat();
    let mut acc = Compensated::new();
    for i in 0..n {
        acc.add_prod((mu - 0.5) / tau * mass[i] * diff[i], diff[i]);
    }
    let mut s_part = acc.value();
    let c1 = sigma + (mu - 1.0) / 2.0;
    match scheme.split.filter(|_| scheme.is_imex()) {
        Some(mode) => {
            let split = SplitOperator { op, mode };
            s_part += c1 * quad_form_part(&split, true, &diff);
            s_part -= mu / 2.0 * quad_form_part(&split, false, &diff);
        }
        None => {
            s_part += c1 * op.quad_form(&diff);
        }
    }
    Ok(part_a + s_part)
}

fn quad_form_part(split: &SplitOperator, implicit: bool, x: &[f64]) -> f64 {
    let op = split.op;
    let off = op.offsets();
    let mut acc = Compensated::new();
    for a in 0..op.n_continua() {
        for b in 0..op.n_continua() {
            let blk = if implicit {
                split.a1_block(a, b)
            } else {
                split.a2_block(a, b)
            };
            if let Some(m) = blk {
                let xa = &x[off[a]..off[a] + op.sizes[a]];
                let xb = &x[off[b]..off[b] + op.sizes[b]];
                for i in 0..m.n_rows() {
                    if xa[i] == 0.0 {
                        continue;
                    }
                    let (cols, vals) = m.row(i);
                    for (&c, &v) in cols.iter().zip(vals) {
                        acc.add_prod(xa[i] * v, xb[c]);
                    }
                }
            }
        }
    }
    acc.value()
}

/// The theorem functional for the given scheme: Theorem 1/3 energy for
/// two-level families, Theorem 2/4 composite for three-level families.
pub fn scheme_energy(
    op: &BlockOperator,
    scheme: &SchemeSpec,
    tau: f64,
    state: &SimulationState,
) -> Result<f64> {
    if scheme.is_three_level() {
        let up = state.u_prev.as_ref().ok_or_else(|| {
            Error::State("composite energy needs the previous state".into())
        })?;
        composite_energy(op, scheme, tau, &state.u, up)
    } else {
        Ok(energy_a(op, &state.u))
    }
}

#[derive(Debug, Clone)]
pub struct TransientOptions {
    pub solver: LinearSolverKind,
    /// Step indices to snapshot (the final step is always recorded).
    pub snapshot_steps: Vec<usize>,
    pub monitor_energy: bool,
    pub bootstrap_substeps: usize,
}

impl Default for TransientOptions {
    fn default() -> Self {
        Self {
            solver: LinearSolverKind::default(),
            snapshot_steps: Vec::new(),
            monitor_energy: false,
            bootstrap_substeps: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub reports: Vec<StepReport>,
    pub final_state: SimulationState,
    /// Set when a step failed; snapshots and reports up to that point are kept.
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn avg_iters_per_continuum(&self) -> Vec<f64> {
        if self.reports.is_empty() {
            return Vec::new();
        }
        let l = self
            .reports
            .iter()
            .map(|r| r.per_continuum_iters.len())
            .max()
            .unwrap_or(0);
        let mut sums = vec![0.0; l];
        let mut counts = vec![0usize; l];
        for r in &self.reports {
            for (k, &it) in r.per_continuum_iters.iter().enumerate() {
                sums[k] += it as f64;
                counts[k] += 1;
            }
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect()
    }
}

/// Drives `n_t` steps of the scheme from `u0`, bootstrapping three-level
/// schemes with backward Euler. Step failures abort the run but the partial
/// trajectory is retained.
pub fn run_transient(
    op: &BlockOperator,
    scheme: &SchemeSpec,
    tau: f64,
    n_t: usize,
    u0: Vec<f64>,
    opts: &TransientOptions,
) -> Result<Trajectory> {
    if n_t < 1 {
        return Err(Error::InvalidArgument("n_t must be at least 1".into()));
    }
    let stepper = Stepper::new(op, *scheme, tau, &opts.solver, opts.bootstrap_substeps)?;
    let mut state = SimulationState::initial(u0);
    let mut snapshots = Vec::new();
    let mut reports = Vec::new();
    let mut want: Vec<usize> = opts.snapshot_steps.clone();
    want.push(n_t);
    want.sort_unstable();
    want.dedup();

    let mut failure = None;
    for n in 1..=n_t {
        let res = if n == 1 && scheme.is_three_level() {
            stepper.bootstrap_first_step(&mut state)
        } else {
            stepper.step(&mut state)
        };
        match res {
            Ok(mut rep) => {
                if opts.monitor_energy {
                    rep.energy = Some(scheme_energy(op, scheme, tau, &state)?);
                }
                reports.push(rep);
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
        if want.binary_search(&n).is_ok() {
            snapshots.push((n, state.u.clone()));
        }
    }

    Ok(Trajectory {
        snapshots,
        reports,
        final_state: state,
        failure: failure.map(|f| {
            let s: String = f;
            s
        }),
    })
}
