//! Preconditioned conjugate gradients for the finite volume systems.
//!
//! The default preconditioner is one geometric multigrid V-cycle on the
//! nested cell-centred hierarchy: forward Gauss-Seidel pre-smoothing,
//! backward Gauss-Seidel post-smoothing, transfer by tensor-product linear
//! interpolation and its transpose, coarse operators re-discretised from the
//! harmonic mean of the `2^d` child permeabilities, and a dense Cholesky
//! solve on the coarsest grid. Pairing forward and backward sweeps keeps the
//! cycle symmetric positive definite for any SPD coarse operator.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_operator, BoundarySpec, EdgeAveraging, StencilSystem};
use crate::grid::Grid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    #[default]
    Multigrid,
    SymmetricGaussSeidel,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Gauss-Seidel sweeps before and after each coarse correction.
    pub smoother_sweeps: usize,
    /// Grids with at most this many cells per direction are solved densely.
    pub coarsest_m: usize,
    /// Cap on multigrid levels; `None` coarsens down to `coarsest_m`.
    pub max_levels: Option<usize>,
    pub preconditioner: PreconditionerKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            smoother_sweeps: 2,
            coarsest_m: 2,
            max_levels: None,
            preconditioner: PreconditionerKind::Multigrid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    /// `|r_k| / |r_0|` after each iteration.
    pub residual_history: Vec<f64>,
    /// Energy `x^T A x / 2 - b^T x` of each iterate, from the CG recurrence.
    pub energy_history: Vec<f64>,
    pub seconds: f64,
    /// Deterministic cost: unknowns times iterations (one unit for a direct solve).
    pub work: f64,
}

pub trait Preconditioner {
    /// `z = M^{-1} r`.
    fn apply(&mut self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&mut self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn pcg(system: &StencilSystem, precond: &mut dyn Preconditioner, tol: f64, max_iter: usize) -> Result<SolveReport> {
    let start = Instant::now();
    let n = system.len();
    let mut x = vec![0.0; n];
    let mut r = system.rhs.clone();
    let r0 = dot(&r, &r).sqrt();
    if r0 == 0.0 {
        return Ok(SolveReport {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            residual_history: vec![],
            energy_history: vec![0.0],
            seconds: start.elapsed().as_secs_f64(),
            work: 0.0,
        });
    }
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rho = dot(&r, &z);
    let mut energy = 0.0;
    let mut residual_history = Vec::new();
    let mut energy_history = vec![energy];

    for it in 1..=max_iter {
        system.apply(&p, &mut q);
        let alpha = rho / dot(&p, &q);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        energy -= 0.5 * alpha * rho;
        energy_history.push(energy);
        let rel = dot(&r, &r).sqrt() / r0;
        residual_history.push(rel);
        if rel < tol {
            return Ok(SolveReport {
                solution: x,
                iterations: it,
                relative_residual: rel,
                residual_history,
                energy_history,
                seconds: start.elapsed().as_secs_f64(),
                work: (n * it) as f64,
            });
        }
        precond.apply(&r, &mut z);
        let rho_new = dot(&r, &z);
        let beta = rho_new / rho;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rho = rho_new;
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: residual_history.last().copied().unwrap_or(1.0),
        history: residual_history,
    })
}

/// Dense Cholesky factor of an SPD stencil matrix.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn new(system: &StencilSystem) -> Result<Self> {
        let n = system.len();
        let mut l = system.to_dense();
        for j in 0..n {
            let mut d = l[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return Err(Error::InvalidArgument("matrix is not positive definite".into()));
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self { n, l })
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
    }
}

/// Direct solve of a (small) system.
pub fn solve_dense(system: &StencilSystem) -> Result<Vec<f64>> {
    let chol = DenseCholesky::new(system)?;
    let mut x = vec![0.0; system.len()];
    chol.solve(&system.rhs, &mut x);
    Ok(x)
}

/// Stencil matrix viewed as a 3D box `n0 x n1 x n2` (leading extents 1 below
/// three dimensions) with per-axis couplings.
struct BoxView<'a> {
    n: [usize; 3],
    diag: &'a [f64],
    c: [&'a [f64]; 3],
}

impl<'a> BoxView<'a> {
    fn new(s: &'a StencilSystem) -> Self {
        let d = s.grid.dim();
        let m = s.grid.m();
        let mut n = [1; 3];
        let mut c: [&[f64]; 3] = [&[], &[], &[]];
        for a in 0..d {
            n[3 - d + a] = m;
            c[3 - d + a] = &s.coupling[a];
        }
        Self { n, diag: &s.diag, c }
    }

    #[inline]
    fn relax(&self, i: usize, idx: [usize; 3], b: &[f64], x: &mut [f64]) {
        let [n0, n1, n2] = self.n;
        let mut s = b[i];
        if idx[2] > 0 {
            s += self.c[2][i - 1] * x[i - 1];
        }
        if idx[2] + 1 < n2 {
            s += self.c[2][i] * x[i + 1];
        }
        if idx[1] > 0 {
            s += self.c[1][i - n2] * x[i - n2];
        }
        if idx[1] + 1 < n1 {
            s += self.c[1][i] * x[i + n2];
        }
        let s01 = n1 * n2;
        if idx[0] > 0 {
            s += self.c[0][i - s01] * x[i - s01];
        }
        if idx[0] + 1 < n0 {
            s += self.c[0][i] * x[i + s01];
        }
        x[i] = s / self.diag[i];
    }

    fn forward_sweep(&self, b: &[f64], x: &mut [f64]) {
        let [n0, n1, n2] = self.n;
        let mut i = 0;
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    self.relax(i, [i0, i1, i2], b, x);
                    i += 1;
                }
            }
        }
    }

    fn backward_sweep(&self, b: &[f64], x: &mut [f64]) {
        let [n0, n1, n2] = self.n;
        let mut i = n0 * n1 * n2;
        for i0 in (0..n0).rev() {
            for i1 in (0..n1).rev() {
                for i2 in (0..n2).rev() {
                    i -= 1;
                    self.relax(i, [i0, i1, i2], b, x);
                }
            }
        }
    }
}

/// One symmetric Gauss-Seidel sweep from a zero initial guess.
pub struct SymmetricGaussSeidel<'a> {
    system: &'a StencilSystem,
}

impl<'a> SymmetricGaussSeidel<'a> {
    pub fn new(system: &'a StencilSystem) -> Self {
        Self { system }
    }
}

impl Preconditioner for SymmetricGaussSeidel<'_> {
    fn apply(&mut self, r: &[f64], z: &mut [f64]) {
        z.iter_mut().for_each(|v| *v = 0.0);
        let view = BoxView::new(self.system);
        view.forward_sweep(r, z);
        view.backward_sweep(r, z);
    }
}

/// 1D interpolation weights `(fine, coarse, weight)` for a cell-centred
/// grid pair `mc -> 2 mc`. Interior fine cells take 3/4 of their parent and
/// 1/4 of the next coarse cell outwards; at a Dirichlet face the missing
/// neighbour is a zero ghost (parent weight 1/2), at a Neumann face the
/// parent value is extended (weight 1).
fn interpolation_1d(mc: usize, lower_dirichlet: bool, upper_dirichlet: bool) -> Vec<(usize, usize, f64)> {
    let mut w = Vec::with_capacity(4 * mc);
    for f in 0..2 * mc {
        let p = f / 2;
        let other = if f % 2 == 0 {
            p.checked_sub(1)
        } else {
            (p + 1 < mc).then_some(p + 1)
        };
        match other {
            Some(o) => {
                w.push((f, p, 0.75));
                w.push((f, o, 0.25));
            }
            None => {
                let dirichlet = if f % 2 == 0 { lower_dirichlet } else { upper_dirichlet };
                w.push((f, p, if dirichlet { 0.5 } else { 1.0 }));
            }
        }
    }
    w
}

/// Applies a 1D operator along `axis` of an array of 3D shape `shape`.
/// `transpose = false` maps coarse -> fine along the axis.
fn apply_axis(
    src: &[f64],
    shape: [usize; 3],
    axis: usize,
    new_len: usize,
    weights: &[(usize, usize, f64)],
    transpose: bool,
    dst: &mut Vec<f64>,
) -> [usize; 3] {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let old_len = shape[axis];
    let mut new_shape = shape;
    new_shape[axis] = new_len;
    dst.clear();
    dst.resize(outer * new_len * inner, 0.0);
    for o in 0..outer {
        let s_base = o * old_len * inner;
        let d_base = o * new_len * inner;
        for &(f, c, w) in weights {
            let (from, to) = if transpose { (f, c) } else { (c, f) };
            let s = &src[s_base + from * inner..s_base + (from + 1) * inner];
            let d = &mut dst[d_base + to * inner..d_base + (to + 1) * inner];
            for (dv, sv) in d.iter_mut().zip(s) {
                *dv += w * sv;
            }
        }
    }
    new_shape
}

struct Level<'a> {
    op: std::borrow::Cow<'a, StencilSystem>,
    /// Interpolation from the next coarser level, per axis.
    interp: Vec<Vec<(usize, usize, f64)>>,
    x: Vec<f64>,
    b: Vec<f64>,
    r: Vec<f64>,
}

enum Bottom {
    Direct(DenseCholesky),
    Smoother,
}

/// Geometric multigrid V-cycle preconditioner.
pub struct Multigrid<'a> {
    levels: Vec<Level<'a>>,
    bottom: Bottom,
    sweeps: usize,
    tmp: [Vec<f64>; 2],
}

impl<'a> Multigrid<'a> {
    /// Builds the hierarchy below `system`, which must have been assembled
    /// from `k` and the face types of `bc`.
    pub fn new(
        system: &'a StencilSystem,
        k: &[f64],
        bc: &BoundarySpec,
        mode: EdgeAveraging,
        config: &SolverConfig,
    ) -> Result<Self> {
        let dim = system.grid.dim();
        let max_levels = config.max_levels.unwrap_or(usize::MAX).max(1);
        let coarsest = config.coarsest_m.max(1);
        let n = system.len();
        let mut levels = vec![Level {
            op: std::borrow::Cow::Borrowed(system),
            interp: vec![],
            x: vec![0.0; n],
            b: vec![0.0; n],
            r: vec![0.0; n],
        }];
        let mut grid = system.grid;
        let mut k_level = k.to_vec();
        while levels.len() < max_levels && grid.m().is_multiple_of(2) && grid.m() > coarsest {
            let coarse = grid.coarsen(2)?;
            k_level = coarsen_harmonic(&grid, &k_level);
            let op = assemble_operator(&coarse, &k_level, bc, mode)?;
            let interp = (0..dim)
                .map(|a| {
                    interpolation_1d(
                        coarse.m(),
                        bc.face(a, false).is_dirichlet(),
                        bc.face(a, true).is_dirichlet(),
                    )
                })
                .collect();
            levels.last_mut().expect("non-empty").interp = interp;
            let nc = coarse.num_cells();
            levels.push(Level {
                op: std::borrow::Cow::Owned(op),
                interp: vec![],
                x: vec![0.0; nc],
                b: vec![0.0; nc],
                r: vec![0.0; nc],
            });
            grid = coarse;
        }
        let last = levels.last().expect("non-empty");
        let bottom = if last.op.grid.m() <= coarsest {
            Bottom::Direct(DenseCholesky::new(&last.op)?)
        } else {
            Bottom::Smoother
        };
        Ok(Self {
            levels,
            bottom,
            sweeps: config.smoother_sweeps.max(1),
            tmp: [Vec::new(), Vec::new()],
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    fn cycle(&mut self, l: usize) {
        let last = self.levels.len() - 1;
        if l == last {
            let lvl = &mut self.levels[l];
            match &self.bottom {
                Bottom::Direct(chol) => chol.solve(&lvl.b, &mut lvl.x),
                Bottom::Smoother => {
                    lvl.x.iter_mut().for_each(|v| *v = 0.0);
                    let view = BoxView::new(&lvl.op);
                    for _ in 0..self.sweeps {
                        view.forward_sweep(&lvl.b, &mut lvl.x);
                    }
                    for _ in 0..self.sweeps {
                        view.backward_sweep(&lvl.b, &mut lvl.x);
                    }
                }
            }
            return;
        }
        {
            let lvl = &mut self.levels[l];
            lvl.x.iter_mut().for_each(|v| *v = 0.0);
            let view = BoxView::new(&lvl.op);
            for _ in 0..self.sweeps {
                view.forward_sweep(&lvl.b, &mut lvl.x);
            }
            lvl.op.apply(&lvl.x, &mut lvl.r);
            for (r, b) in lvl.r.iter_mut().zip(&lvl.b) {
                *r = b - *r;
            }
        }
        let (fine, rest) = self.levels.split_at_mut(l + 1);
        let fine = &mut fine[l];
        let coarse = &mut rest[0];
        let dim = fine.op.grid.dim();
        let mc = coarse.op.grid.m();
        let mf = fine.op.grid.m();

        // restriction: transpose of interpolation, one axis at a time
        let [t0, t1] = &mut self.tmp;
        let mut shape = box_shape(dim, mf);
        t0.clear();
        t0.extend_from_slice(&fine.r);
        for a in 0..dim {
            let ax = 3 - dim + a;
            shape = apply_axis(t0, shape, ax, mc, &fine.interp[a], true, t1);
            std::mem::swap(t0, t1);
        }
        coarse.b.copy_from_slice(t0);

        self.cycle(l + 1);

        let (fine, rest) = self.levels.split_at_mut(l + 1);
        let fine = &mut fine[l];
        let coarse = &rest[0];
        let [t0, t1] = &mut self.tmp;
        let mut shape = box_shape(dim, mc);
        t0.clear();
        t0.extend_from_slice(&coarse.x);
        for a in 0..dim {
            let ax = 3 - dim + a;
            shape = apply_axis(t0, shape, ax, mf, &fine.interp[a], false, t1);
            std::mem::swap(t0, t1);
        }
        for (x, c) in fine.x.iter_mut().zip(t0.iter()) {
            *x += c;
        }
        let view = BoxView::new(&fine.op);
        for _ in 0..self.sweeps {
            view.backward_sweep(&fine.b, &mut fine.x);
        }
    }
}

fn box_shape(dim: usize, m: usize) -> [usize; 3] {
    let mut s = [1; 3];
    for a in 0..dim {
        s[3 - dim + a] = m;
    }
    s
}

impl Preconditioner for Multigrid<'_> {
    fn apply(&mut self, r: &[f64], z: &mut [f64]) {
        self.levels[0].b.copy_from_slice(r);
        self.cycle(0);
        z.copy_from_slice(&self.levels[0].x);
    }
}

/// Harmonic mean of the `2^d` children of every coarse cell.
pub fn coarsen_harmonic(fine: &Grid, k: &[f64]) -> Vec<f64> {
    let dim = fine.dim();
    let coarse = Grid::new(dim, fine.m() / 2).expect("valid coarse grid");
    let offsets = crate::grid::parity_offsets(dim);
    let children = offsets.len() as f64;
    coarse
        .cells()
        .map(|c| {
            let inv: f64 = offsets
                .iter()
                .map(|o| 1.0 / k[fine.linear_index(&crate::grid::subgrid_fine_index(dim, &c, o))])
                .sum();
            children / inv
        })
        .collect()
}

/// Solver facade choosing direct, multigrid-PCG or fallback PCG.
#[derive(Debug, Clone, Default)]
pub struct Solver {
    pub config: SolverConfig,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Self {
        Self { config }
    }

    pub fn solve(
        &self,
        system: &StencilSystem,
        k: &[f64],
        bc: &BoundarySpec,
        mode: EdgeAveraging,
    ) -> Result<SolveReport> {
        let cfg = &self.config;
        let m = system.grid.m();
        if m <= cfg.coarsest_m {
            let start = Instant::now();
            let solution = solve_dense(system)?;
            let mut r = vec![0.0; solution.len()];
            system.residual(&solution, &mut r);
            let b = dot(&system.rhs, &system.rhs).sqrt();
            let rel = if b > 0.0 { dot(&r, &r).sqrt() / b } else { 0.0 };
            return Ok(SolveReport {
                solution,
                iterations: 0,
                relative_residual: rel,
                residual_history: vec![rel],
                energy_history: vec![],
                seconds: start.elapsed().as_secs_f64(),
                work: system.len() as f64,
            });
        }
        match cfg.preconditioner {
            PreconditionerKind::Multigrid if m.is_power_of_two() => {
                let mut mg = Multigrid::new(system, k, bc, mode, cfg)?;
                pcg(system, &mut mg, cfg.tol, cfg.max_iter)
            }
            PreconditionerKind::Multigrid | PreconditionerKind::SymmetricGaussSeidel => {
                pcg(system, &mut SymmetricGaussSeidel::new(system), cfg.tol, cfg.max_iter)
            }
            PreconditionerKind::Identity => pcg(system, &mut IdentityPreconditioner, cfg.tol, cfg.max_iter),
        }
    }
}
