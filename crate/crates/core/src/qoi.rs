//! Functionals of the discrete pressure.

use serde::{Deserialize, Serialize};

use crate::assembly::{BoundarySpec, FaceCondition};
use crate::grid::Grid;
use crate::{Error, Result};

/// Axis-aligned box `centre +- side/2` in every direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingBox {
    pub centre: Vec<f64>,
    pub side: f64,
}

impl AveragingBox {
    /// Side 1/4 centred in the unit cube; aligned with every grid of 8 or
    /// more cells per direction.
    pub fn centred(dim: usize) -> Self {
        Self {
            centre: vec![0.5; dim],
            side: 0.25,
        }
    }

    /// Index range `lo..hi` (0-based, per axis) of the cells covering the box.
    pub fn cell_range(&self, grid: &Grid) -> Result<Vec<(usize, usize)>> {
        let dim = grid.dim();
        if self.centre.len() != dim || !(self.side > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bad averaging box {self:?} for d = {dim}"
            )));
        }
        let m = grid.m() as f64;
        let snap = |v: f64| -> Option<usize> {
            let s = v * m;
            let r = s.round();
            ((s - r).abs() < 1e-9 && r >= 0.0 && r <= m).then_some(r as usize)
        };
        (0..dim)
            .map(|a| {
                let lo = snap(self.centre[a] - 0.5 * self.side);
                let hi = snap(self.centre[a] + 0.5 * self.side);
                match (lo, hi) {
                    (Some(lo), Some(hi)) if hi > lo => Ok((lo, hi)),
                    _ => Err(Error::BoxNotResolvable { m: grid.m() }),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceId {
    pub axis: usize,
    pub upper: bool,
}

impl FaceId {
    pub const OUTFLOW: FaceId = FaceId { axis: 0, upper: true };
    pub const INFLOW: FaceId = FaceId { axis: 0, upper: false };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QoiSpec {
    LocalAverage(AveragingBox),
    Outflow { face: FaceId },
}

/// Mean of the cell values over the box (midpoint rule for the box average).
pub fn local_average(solution: &[f64], grid: &Grid, region: &AveragingBox) -> Result<f64> {
    let ranges = region.cell_range(grid)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, c) in grid.cells().enumerate() {
        if (0..grid.dim()).all(|a| c[a] > ranges[a].0 && c[a] <= ranges[a].1) {
            sum += solution[i];
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Outward flux `-int k grad p . n` through a Dirichlet face, with the same
/// half-cell one-sided difference as the assembly.
pub fn boundary_flux(solution: &[f64], k: &[f64], grid: &Grid, bc: &BoundarySpec, face: FaceId) -> Result<f64> {
    let FaceCondition::Dirichlet(g) = bc.face(face.axis, face.upper) else {
        return Err(Error::NeumannOutflow);
    };
    let m = grid.m();
    let stride = grid.stride(face.axis);
    let layer = if face.upper { m - 1 } else { 0 };
    let dim = grid.dim() as i32;
    let h = grid.h();
    let t = 2.0 * h.powi(dim - 2);
    let mut flux = 0.0;
    for i in (0..grid.num_cells()).filter(|&i| (i / stride) % m == layer) {
        let x = crate::assembly::face_midpoint(grid, i, face.axis, face.upper);
        flux += t * k[i] * (solution[i] - g.eval(&x));
    }
    Ok(flux)
}

/// Flow leaving the domain through `face`.
pub fn outflow(solution: &[f64], k: &[f64], grid: &Grid, bc: &BoundarySpec, face: FaceId) -> Result<f64> {
    boundary_flux(solution, k, grid, bc, face)
}

pub fn evaluate(spec: &QoiSpec, solution: &[f64], k: &[f64], grid: &Grid, bc: &BoundarySpec) -> Result<f64> {
    match spec {
        QoiSpec::LocalAverage(b) => local_average(solution, grid, b),
        QoiSpec::Outflow { face } => outflow(solution, k, grid, bc, *face),
    }
}
