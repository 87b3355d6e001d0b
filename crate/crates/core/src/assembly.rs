//! Cell-centred finite volume discretisation of `-div(k grad p) = f`.
//!
//! Each cell balances the fluxes through its `2d` faces. An interior face
//! between cells `A` and `B` carries transmissibility `kbar(A,B) h^(d-2)`,
//! giving the classical 3/5/7-point stencil. A Dirichlet face uses a one-sided
//! difference over the half cell, i.e. transmissibility `2 k h^(d-2)` towards
//! the boundary value. A Neumann face contributes its prescribed outward flux
//! times the face area `h^(d-1)` to the right-hand side.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeAveraging {
    #[default]
    Harmonic,
    Arithmetic,
}

pub fn edge_permeability(ka: f64, kb: f64, mode: EdgeAveraging) -> Result<f64> {
    if !(ka > 0.0) {
        return Err(Error::NonPositivePermeability(ka));
    }
    if !(kb > 0.0) {
        return Err(Error::NonPositivePermeability(kb));
    }
    Ok(average(ka, kb, mode))
}

#[inline]
fn average(ka: f64, kb: f64, mode: EdgeAveraging) -> f64 {
    match mode {
        EdgeAveraging::Harmonic => 2.0 * ka * kb / (ka + kb),
        EdgeAveraging::Arithmetic => 0.5 * (ka + kb),
    }
}

pub type ScalarFn = Arc<dyn Fn(&[f64; 3]) -> f64 + Send + Sync>;

/// Boundary or source data as a function of position.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    Function(ScalarFn),
}

impl ScalarField {
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Function(f) => f(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarField::Constant(c) if *c == 0.0)
    }
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScalarField::Constant(c) => write!(f, "Constant({c})"),
            ScalarField::Function(_) => write!(f, "Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FaceCondition {
    /// Prescribed pressure.
    Dirichlet(ScalarField),
    /// Prescribed outward flux `-k grad p . n`.
    Neumann(ScalarField),
}

impl FaceCondition {
    pub fn is_dirichlet(&self) -> bool {
        matches!(self, FaceCondition::Dirichlet(_))
    }
}

/// Conditions on the `2d` faces of the unit cube, ordered
/// `x1 = 0, x1 = 1, x2 = 0, x2 = 1, ...`.
#[derive(Debug, Clone)]
pub struct BoundarySpec {
    faces: Vec<FaceCondition>,
}

pub fn face_index(axis: usize, upper: bool) -> usize {
    2 * axis + upper as usize
}

impl BoundarySpec {
    pub fn new(dim: usize, faces: Vec<FaceCondition>) -> Result<Self> {
        if faces.len() != 2 * dim {
            return Err(Error::InvalidArgument(format!(
                "expected {} face conditions, got {}",
                2 * dim,
                faces.len()
            )));
        }
        if !faces.iter().any(FaceCondition::is_dirichlet) {
            return Err(Error::SingularSystem);
        }
        Ok(Self { faces })
    }

    /// Homogeneous Dirichlet on every face.
    pub fn dirichlet_zero(dim: usize) -> Self {
        Self {
            faces: vec![FaceCondition::Dirichlet(ScalarField::Constant(0.0)); 2 * dim],
        }
    }

    /// `p = 1` on `x1 = 0`, `p = 0` on `x1 = 1`, no flux elsewhere.
    pub fn left_to_right(dim: usize) -> Self {
        let mut faces = vec![FaceCondition::Neumann(ScalarField::Constant(0.0)); 2 * dim];
        faces[0] = FaceCondition::Dirichlet(ScalarField::Constant(1.0));
        faces[1] = FaceCondition::Dirichlet(ScalarField::Constant(0.0));
        Self { faces }
    }

    pub fn dim(&self) -> usize {
        self.faces.len() / 2
    }

    pub fn face(&self, axis: usize, upper: bool) -> &FaceCondition {
        &self.faces[face_index(axis, upper)]
    }

    pub fn faces(&self) -> &[FaceCondition] {
        &self.faces
    }
}

/// Symmetric stencil matrix stored by faces, plus right-hand side.
///
/// `coupling[a][i]` is the transmissibility between cell `i` and its upper
/// neighbour along axis `a` (zero on the last layer). The matrix has
/// `A[i][i] = diag[i]` and `A[i][j] = -coupling` for face neighbours, so it is
/// symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilSystem {
    pub grid: Grid,
    pub diag: Vec<f64>,
    pub coupling: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl StencilSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..x.len() {
            y[i] = self.diag[i] * x[i];
        }
        for (a, c) in self.coupling.iter().enumerate() {
            let stride = self.grid.stride(a);
            for i in 0..x.len().saturating_sub(stride) {
                let t = c[i];
                if t != 0.0 {
                    y[i] -= t * x[i + stride];
                    y[i + stride] -= t * x[i];
                }
            }
        }
    }

    pub fn residual(&self, x: &[f64], r: &mut [f64]) {
        self.apply(x, r);
        for (ri, bi) in r.iter_mut().zip(self.rhs.iter()) {
            *ri = bi - *ri;
        }
    }

    /// Non-zeros as `(row, col, value)`, 0-based, row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            let mut row = vec![(i, self.diag[i])];
            for (a, c) in self.coupling.iter().enumerate() {
                let s = self.grid.stride(a);
                if i + s < n && c[i] != 0.0 {
                    row.push((i + s, -c[i]));
                }
                if i >= s && c[i - s] != 0.0 {
                    row.push((i - s, -c[i - s]));
                }
            }
            row.sort_by_key(|e| e.0);
            out.extend(row.into_iter().map(|(j, v)| (i, j, v)));
        }
        out
    }

    /// Dense row-major copy; intended for small verification problems.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.len();
        let mut a = vec![0.0; n * n];
        for (i, j, v) in self.triplets() {
            a[i * n + j] = v;
        }
        a
    }

    /// Matrix Market coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let t = self.triplets();
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.len(), self.len(), t.len())?;
        for (i, j, v) in t {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// Full system with right-hand side; `f` is sampled at cell centres.
pub fn assemble(
    grid: &Grid,
    k: &[f64],
    bc: &BoundarySpec,
    f: &ScalarField,
    mode: EdgeAveraging,
) -> Result<StencilSystem> {
    build(grid, k, bc, Some(f), mode)
}

/// Matrix only: boundary and source data are not evaluated and the
/// right-hand side is zero. Used for multigrid coarse operators.
pub fn assemble_operator(grid: &Grid, k: &[f64], bc: &BoundarySpec, mode: EdgeAveraging) -> Result<StencilSystem> {
    build(grid, k, bc, None, mode)
}

fn build(
    grid: &Grid,
    k: &[f64],
    bc: &BoundarySpec,
    source: Option<&ScalarField>,
    mode: EdgeAveraging,
) -> Result<StencilSystem> {
    let dim = grid.dim();
    let n = grid.num_cells();
    if k.len() != n {
        return Err(Error::InvalidArgument(format!(
            "permeability has {} values for {n} cells",
            k.len()
        )));
    }
    if bc.dim() != dim {
        return Err(Error::InvalidArgument("boundary spec dimension mismatch".into()));
    }
    if !bc.faces().iter().any(FaceCondition::is_dirichlet) {
        return Err(Error::SingularSystem);
    }
    if let Some(&bad) = k.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::NonPositivePermeability(bad));
    }

    let m = grid.m();
    let h = grid.h();
    let scale = h.powi(dim as i32 - 2);
    let face_area = h.powi(dim as i32 - 1);
    let volume = h.powi(dim as i32);

    let mut diag = vec![0.0; n];
    let mut coupling = vec![vec![0.0; n]; dim];
    let mut rhs = vec![0.0; n];

    for a in 0..dim {
        let stride = grid.stride(a);
        let c = &mut coupling[a];
        for i in 0..n {
            let pos = (i / stride) % m;
            if pos + 1 < m {
                let t = scale * average(k[i], k[i + stride], mode);
                c[i] = t;
                diag[i] += t;
                diag[i + stride] += t;
            }
        }
        // boundary layers
        for (upper, layer) in [(false, 0), (true, m - 1)] {
            let face = bc.face(a, upper);
            for i in (0..n).filter(|&i| (i / stride) % m == layer) {
                match face {
                    FaceCondition::Dirichlet(g) => {
                        let t = 2.0 * scale * k[i];
                        diag[i] += t;
                        if source.is_some() {
                            let value = g.eval(&face_midpoint(grid, i, a, upper));
                            rhs[i] += t * value;
                        }
                    }
                    FaceCondition::Neumann(g) => {
                        if source.is_some() && !g.is_zero() {
                            rhs[i] -= g.eval(&face_midpoint(grid, i, a, upper)) * face_area;
                        }
                    }
                }
            }
        }
    }
    if let Some(f) = source {
        if !f.is_zero() {
            for (i, r) in rhs.iter_mut().enumerate() {
                *r += f.eval(&grid.centre_of(i)) * volume;
            }
        }
    }
    Ok(StencilSystem {
        grid: *grid,
        diag,
        coupling,
        rhs,
    })
}

/// Midpoint of the boundary face of cell `i` normal to `axis`.
pub fn face_midpoint(grid: &Grid, i: usize, axis: usize, upper: bool) -> [f64; 3] {
    let mut x = grid.centre_of(i);
    x[axis] = if upper { 1.0 } else { 0.0 };
    x
}
