//! Uniform cell-centred grids on the unit cube and their nested hierarchies.
//!
//! Cells carry 1-based multi-indices `(i_1, ..., i_d)` with `1 <= i_k <= m`.
//! Storage is linear with the last coordinate varying fastest.

use crate::{Error, Result};

/// Default upper bound on the number of cells of any grid in a hierarchy.
pub const DEFAULT_CELL_BUDGET: u64 = 1 << 24;

/// Unused trailing entries of a multi-index are 1.
pub type MultiIndex = [usize; 3];

/// Offsets in `{0,1}^d`; unused trailing entries are 0.
pub type Offset = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Grid {
    dim: usize,
    m: usize,
}

impl Grid {
    pub fn new(dim: usize, m: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "dimension must be 1, 2 or 3, got {dim}"
            )));
        }
        if m == 0 {
            return Err(Error::InvalidArgument("cells per direction must be positive".into()));
        }
        Ok(Self { dim, m })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per coordinate direction.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn num_cells(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    /// Linear stride of coordinate direction `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.m.pow((self.dim - 1 - axis) as u32)
    }

    pub fn linear_index(&self, idx: &MultiIndex) -> usize {
        (0..self.dim).fold(0, |acc, a| acc * self.m + (idx[a] - 1))
    }

    pub fn multi_index(&self, mut linear: usize) -> MultiIndex {
        let mut idx = [1; 3];
        for a in (0..self.dim).rev() {
            idx[a] = linear % self.m + 1;
            linear /= self.m;
        }
        idx
    }

    /// Centre of a cell. Unused trailing coordinates are reported as 0.5.
    pub fn centre(&self, idx: &MultiIndex) -> [f64; 3] {
        let h = self.h();
        let mut x = [0.5; 3];
        for a in 0..self.dim {
            x[a] = (idx[a] as f64 - 0.5) * h;
        }
        x
    }

    pub fn centre_of(&self, linear: usize) -> [f64; 3] {
        self.centre(&self.multi_index(linear))
    }

    /// Iterator over the multi-indices of all cells in storage order.
    pub fn cells(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        (0..self.num_cells()).map(move |i| self.multi_index(i))
    }

    /// Grid with `m / factor` cells per direction.
    pub fn coarsen(&self, factor: usize) -> Result<Grid> {
        if factor == 0 || !self.m.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot coarsen m = {} by factor {factor}",
                self.m
            )));
        }
        Grid::new(self.dim, self.m / factor)
    }
}

/// Nested grids `m_l = m0 * s^l` for `l = 0..=L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridHierarchy {
    levels: Vec<Grid>,
    refinement: usize,
}

impl GridHierarchy {
    pub fn base(&self) -> Grid {
        self.levels[0]
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    pub fn finest_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> Option<Grid> {
        self.levels.get(l).copied()
    }

    pub fn grids(&self) -> &[Grid] {
        &self.levels
    }
}

pub fn build_hierarchy(dim: usize, m0: usize, s: usize, finest: usize) -> Result<GridHierarchy> {
    build_hierarchy_with_budget(dim, m0, s, finest, DEFAULT_CELL_BUDGET)
}

pub fn build_hierarchy_with_budget(
    dim: usize,
    m0: usize,
    s: usize,
    finest: usize,
    budget: u64,
) -> Result<GridHierarchy> {
    if m0 < 2 {
        return Err(Error::InvalidArgument(format!("m0 must be at least 2, got {m0}")));
    }
    if s < 2 {
        return Err(Error::InvalidArgument(format!(
            "refinement factor must be at least 2, got {s}"
        )));
    }
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidArgument(format!(
            "dimension must be 1, 2 or 3, got {dim}"
        )));
    }
    // checked in u128 so that absurd inputs cannot overflow before the budget test
    let mut m_fine: u128 = m0 as u128;
    for _ in 0..finest {
        m_fine = m_fine.saturating_mul(s as u128);
        if m_fine > budget as u128 {
            break;
        }
    }
    let cells = m_fine.saturating_pow(dim as u32);
    if cells > budget as u128 {
        return Err(Error::CellBudgetExceeded { cells, budget });
    }
    let mut levels = Vec::with_capacity(finest + 1);
    let mut m = m0;
    for _ in 0..=finest {
        levels.push(Grid::new(dim, m)?);
        m *= s;
    }
    Ok(GridHierarchy { levels, refinement: s })
}

/// All `2^d` parity offsets in lexicographic order, first coordinate most
/// significant: in 2D `(0,0), (0,1), (1,0), (1,1)`.
pub fn parity_offsets(dim: usize) -> Vec<Offset> {
    let n = 1usize << dim;
    (0..n)
        .map(|j| {
            let mut o = [0; 3];
            for (a, slot) in o.iter_mut().enumerate().take(dim) {
                *slot = (j >> (dim - 1 - a)) & 1;
            }
            o
        })
        .collect()
}

/// Fine multi-index associated with coarse multi-index `coarse` under a parity
/// offset: `2 j_k - 1 + offset_k` per direction.
pub fn subgrid_fine_index(dim: usize, coarse: &MultiIndex, offset: &Offset) -> MultiIndex {
    let mut f = [1; 3];
    for a in 0..dim {
        f[a] = 2 * coarse[a] - 1 + offset[a];
    }
    f
}

/// Map from coarse linear index (grid with `m/2` cells per direction) to the
/// fine linear index selected by `offset`.
pub fn subgrid_index_map(fine: &Grid, offset: &Offset) -> Result<Vec<usize>> {
    if !fine.m().is_multiple_of(2) {
        return Err(Error::OddGrid(fine.m()));
    }
    if offset.iter().take(fine.dim()).any(|&o| o > 1) {
        return Err(Error::InvalidArgument(format!("offset {offset:?} not in {{0,1}}^d")));
    }
    let coarse = fine.coarsen(2)?;
    Ok(coarse
        .cells()
        .map(|c| fine.linear_index(&subgrid_fine_index(fine.dim(), &c, offset)))
        .collect())
}

/// Composition of parity-zero maps from `fine` down to `coarse`: coarse cell
/// `j` takes the first fine cell of its block, `t (j - 1) + 1` with
/// `t = m_fine / m_coarse`.
pub fn nested_index_map(fine: &Grid, coarse: &Grid) -> Result<Vec<usize>> {
    if fine.dim() != coarse.dim() || coarse.m() == 0 || !fine.m().is_multiple_of(coarse.m()) {
        return Err(Error::InvalidArgument(format!(
            "grid m = {} is not nested in m = {}",
            coarse.m(),
            fine.m()
        )));
    }
    let t = fine.m() / coarse.m();
    Ok(coarse
        .cells()
        .map(|c| {
            let mut f = [1; 3];
            for a in 0..fine.dim() {
                f[a] = t * (c[a] - 1) + 1;
            }
            fine.linear_index(&f)
        })
        .collect())
}
