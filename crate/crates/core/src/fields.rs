//! Random permeability fields at cell centres.
//!
//! Three models are supported: piecewise constant log-normal values on three
//! random layers, piecewise correlated log-normal fields on the same layers,
//! and a single stationary log-normal field. Gaussian fields are sampled
//! exactly on the cell-centre lattice by circulant embedding; every FFT yields
//! two independent fields, which are consumed in FIFO order by the stream that
//! produced them.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::grid::{nested_index_map, subgrid_index_map, Grid, Offset};
use crate::{Error, Result};

const LAYER_RANGES: [(f64, f64); 4] = [(0.8, 0.9), (0.6, 0.7), (0.2, 0.3), (0.4, 0.5)];

/// Interface ordinates of the two straight lines bounding the middle layer:
/// the upper line joins `(0, y1)` and `(1, y2)`, the lower joins `(0, y3)`
/// and `(1, y4)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSample {
    pub y: [f64; 4],
}

impl LayerSample {
    /// Maps four numbers in `[0, 1)` affinely onto the interface ranges.
    pub fn from_unit(u: [f64; 4]) -> Self {
        let mut y = [0.0; 4];
        for (i, (lo, hi)) in LAYER_RANGES.iter().enumerate() {
            y[i] = lo + (hi - lo) * u[i];
        }
        Self { y }
    }

    pub fn upper(&self, x1: f64) -> f64 {
        self.y[0] + (self.y[1] - self.y[0]) * x1
    }

    pub fn lower(&self, x1: f64) -> f64 {
        self.y[2] + (self.y[3] - self.y[2]) * x1
    }

    pub fn is_valid(&self) -> bool {
        let in_range = self
            .y
            .iter()
            .zip(LAYER_RANGES.iter())
            .all(|(&y, &(lo, hi))| (lo..=hi).contains(&y));
        // both interfaces are affine, so checking the end points suffices
        in_range && self.upper(0.0) > self.lower(0.0) && self.upper(1.0) > self.lower(1.0)
    }
}

pub fn sample_layers<R: Rng + ?Sized>(rng: &mut R) -> LayerSample {
    let u = [rng.random(), rng.random(), rng.random(), rng.random()];
    LayerSample::from_unit(u)
}

/// Layer (1 = top, 2 = middle, 3 = bottom) containing point `x`.
///
/// For `d >= 2` the test uses `(x1, x2)` only, so 3D layers are extrusions
/// along `x3`. In 1D, `x1` is compared against `y1` and `y3`.
pub fn classify_cell(x: &[f64; 3], dim: usize, layers: &LayerSample) -> usize {
    let (upper, lower, v) = if dim == 1 {
        (layers.y[0], layers.y[2], x[0])
    } else {
        (layers.upper(x[0]), layers.lower(x[0]), x[1])
    };
    if v > upper {
        1
    } else if v < lower {
        3
    } else {
        2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CovarianceNorm {
    One,
    Two,
}

impl TryFrom<u8> for CovarianceNorm {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(CovarianceNorm::One),
            2 => Ok(CovarianceNorm::Two),
            _ => Err(format!("covariance norm must be 1 or 2, got {v}")),
        }
    }
}

impl From<CovarianceNorm> for u8 {
    fn from(n: CovarianceNorm) -> u8 {
        match n {
            CovarianceNorm::One => 1,
            CovarianceNorm::Two => 2,
        }
    }
}

/// Stationary Gaussian field with exponential covariance
/// `sigma2 * exp(-|x - y|_r / lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFieldSpec {
    pub mu: f64,
    pub sigma2: f64,
    pub lambda: f64,
    pub norm: CovarianceNorm,
}

impl GaussianFieldSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid field mean/variance {self:?}")));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "correlation length must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn covariance(&self, lag: &[f64]) -> f64 {
        let dist = match self.norm {
            CovarianceNorm::One => lag.iter().map(|v| v.abs()).sum::<f64>(),
            CovarianceNorm::Two => lag.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        self.sigma2 * (-dist / self.lambda).exp()
    }
}

/// Mean and variance of a log-normal layer value `exp(Z)`, `Z ~ N(mu, sigma2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl LayerParams {
    pub const STANDARD: LayerParams = LayerParams { mu: 0.0, sigma2: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantSpec {
    pub layers: [LayerParams; 3],
}

impl PiecewiseConstantSpec {
    pub fn validate(&self) -> Result<()> {
        for p in &self.layers {
            if !(p.sigma2 >= 0.0) || !p.mu.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid layer parameters {p:?}")));
            }
        }
        Ok(())
    }
}

/// Circulant embedding of the covariance matrix of a stationary field on the
/// cell-centre lattice of `grid`, periodised on `padding * m` points per
/// direction.
pub struct CirculantEmbedding {
    spec: GaussianFieldSpec,
    grid: Grid,
    extent: usize,
    padding: usize,
    eigenvalues: Vec<f64>,
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirculantEmbedding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantEmbedding")
            .field("spec", &self.spec)
            .field("grid", &self.grid)
            .field("extent", &self.extent)
            .field("padding", &self.padding)
            .finish()
    }
}

pub const MAX_PADDING: usize = 8;

impl CirculantEmbedding {
    pub fn spec(&self) -> &GaussianFieldSpec {
        &self.spec
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Lattice points per direction of the periodic extension.
    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Work units of one FFT on the extended lattice, `M log2 M`.
    pub fn fft_work(&self) -> f64 {
        let n = self.eigenvalues.len() as f64;
        n * n.log2().max(1.0)
    }

    /// Builds the embedding at a fixed padding factor.
    pub fn with_padding(spec: GaussianFieldSpec, grid: Grid, padding: usize) -> Result<Self> {
        spec.validate()?;
        let dim = grid.dim();
        let extent = padding * grid.m();
        let total = extent.pow(dim as u32);
        let h = grid.h();
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(extent);

        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        let mut lag = [0.0; 3];
        for (i, slot) in buf.iter_mut().enumerate() {
            let mut rem = i;
            for a in (0..dim).rev() {
                let j = rem % extent;
                rem /= extent;
                lag[a] = j.min(extent - j) as f64 * h;
            }
            *slot = Complex64::new(spec.covariance(&lag[..dim]), 0.0);
        }
        fft_nd(&mut buf, extent, dim, fft.as_ref());

        let max = buf.iter().map(|c| c.re).fold(0.0, f64::max);
        let max_imag = buf.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        if max > 0.0 && max_imag > 1e-10 * max {
            return Err(Error::InvalidArgument(format!(
                "embedded covariance has non-real spectrum (|imag| {max_imag:e})"
            )));
        }
        let min = buf.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        if min < -1e-8 * max {
            return Err(Error::EmbeddingNotNonNegative {
                min_eigenvalue: min,
                padding,
            });
        }
        let mut clipped = 0usize;
        let eigenvalues: Vec<f64> = buf
            .iter()
            .map(|c| {
                if c.re < 0.0 {
                    clipped += 1;
                    0.0
                } else {
                    c.re
                }
            })
            .collect();
        if clipped > 0 {
            log::warn!("circulant embedding: clipped {clipped} slightly negative eigenvalues to zero (min {min:e})");
        }
        let scale = eigenvalues.iter().map(|&l| (l / total as f64).sqrt()).collect();
        Ok(Self {
            spec,
            grid,
            extent,
            padding,
            eigenvalues,
            scale,
            fft,
        })
    }

    /// Draws two independent realisations (mean included) on the cell centres.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let dim = self.grid.dim();
        let mut buf: Vec<Complex64> = self
            .scale
            .iter()
            .map(|&s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(s * re, s * im)
            })
            .collect();
        fft_nd(&mut buf, self.extent, dim, self.fft.as_ref());

        let m = self.grid.m();
        let n = self.grid.num_cells();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            // restriction of the periodic lattice to its first m points per direction
            let mut rem = i;
            let mut lin = 0;
            let mut mult = 1;
            for _ in 0..dim {
                lin += (rem % m) * mult;
                rem /= m;
                mult *= self.extent;
            }
            let c = buf[lin];
            a.push(self.spec.mu + c.re);
            b.push(self.spec.mu + c.im);
        }
        (a, b)
    }
}

/// In-place unnormalised forward DFT along every axis of a cube of side `n`.
fn fft_nd(buf: &mut [Complex64], n: usize, dim: usize, fft: &dyn Fft<f64>) {
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    // last axis is contiguous
    fft.process_with_scratch(buf, &mut scratch);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..dim.saturating_sub(1) {
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..buf.len()).step_by(block) {
            for off in 0..stride {
                let base = start + off;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = buf[base + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, v) in line.iter().enumerate() {
                    buf[base + j * stride] = *v;
                }
            }
        }
    }
}

/// Builds the embedding, doubling the padding factor from 2 up to
/// [`MAX_PADDING`] until the spectrum is non-negative.
pub fn build_circulant_embedding(spec: &GaussianFieldSpec, grid: &Grid) -> Result<CirculantEmbedding> {
    let mut padding = 2;
    loop {
        match CirculantEmbedding::with_padding(*spec, *grid, padding) {
            Err(Error::EmbeddingNotNonNegative { .. }) if padding < MAX_PADDING => {
                log::info!("circulant embedding: negative eigenvalues at padding {padding}, retrying");
                padding *= 2;
            }
            other => return other,
        }
    }
}

pub fn sample_gaussian_field<R: Rng + ?Sized>(embedding: &CirculantEmbedding, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    embedding.sample_pair(rng)
}

/// FIFO of Gaussian fields for one stream and one embedding: each FFT fills
/// two slots, handed out in order.
pub struct FieldQueue<'a> {
    embedding: &'a CirculantEmbedding,
    pending: Option<Vec<f64>>,
}

impl<'a> FieldQueue<'a> {
    pub fn new(embedding: &'a CirculantEmbedding) -> Self {
        Self {
            embedding,
            pending: None,
        }
    }

    /// Next field and the work units charged to it (half an FFT).
    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (Vec<f64>, f64) {
        let work = 0.5 * self.embedding.fft_work();
        if let Some(f) = self.pending.take() {
            return (f, work);
        }
        let (a, b) = self.embedding.sample_pair(rng);
        self.pending = Some(b);
        (a, work)
    }
}

/// Random input from which a permeability sample was built. Level coupling
/// re-evaluates it on coarser grids.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Constant(f64),
    /// Single stationary log-normal field; the values are all there is.
    Stationary,
    PiecewiseConstant {
        layers: LayerSample,
        log_values: [f64; 3],
    },
    /// Per-layer Gaussian fields over the whole grid; cell values read the
    /// field of the layer containing the cell centre.
    PiecewiseCorrelated {
        layers: LayerSample,
        log_fields: Vec<Vec<f64>>,
    },
}

impl Provenance {
    pub fn is_stationary(&self) -> bool {
        matches!(self, Provenance::Constant(_) | Provenance::Stationary)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermeabilitySample {
    pub level: usize,
    pub grid: Grid,
    pub values: Vec<f64>,
    pub provenance: Provenance,
    /// Generation work units.
    pub work: f64,
}

impl PermeabilitySample {
    pub fn constant(level: usize, grid: Grid, value: f64) -> Self {
        Self {
            level,
            grid,
            values: vec![value; grid.num_cells()],
            provenance: Provenance::Constant(value),
            work: 0.0,
        }
    }

    /// Writes the values as little-endian `f64`, storage order (last
    /// coordinate fastest), no header.
    pub fn write_raw<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

pub fn sample_piecewise_constant<R: Rng + ?Sized>(
    grid: &Grid,
    layers: &LayerSample,
    spec: &PiecewiseConstantSpec,
    rng: &mut R,
) -> PermeabilitySample {
    let mut log_values = [0.0; 3];
    for (v, p) in log_values.iter_mut().zip(spec.layers.iter()) {
        let z: f64 = rng.sample(StandardNormal);
        *v = p.mu + p.sigma2.sqrt() * z;
    }
    let values = piecewise_constant_values(grid, layers, &log_values);
    PermeabilitySample {
        level: 0,
        grid: *grid,
        values,
        provenance: Provenance::PiecewiseConstant {
            layers: *layers,
            log_values,
        },
        work: grid.num_cells() as f64,
    }
}

fn piecewise_constant_values(grid: &Grid, layers: &LayerSample, log_values: &[f64; 3]) -> Vec<f64> {
    let k = log_values.map(f64::exp);
    grid.cells()
        .map(|c| k[classify_cell(&grid.centre(&c), grid.dim(), layers) - 1])
        .collect()
}

fn piecewise_correlated_values(grid: &Grid, layers: &LayerSample, log_fields: &[Vec<f64>]) -> Vec<f64> {
    grid.cells()
        .enumerate()
        .map(|(i, c)| {
            let layer = classify_cell(&grid.centre(&c), grid.dim(), layers);
            log_fields[layer - 1][i].exp()
        })
        .collect()
}

/// Independent Gaussian field per layer; `queues[spec_of_layer[i]]` serves
/// layer `i + 1`.
pub fn sample_piecewise_correlated<R: Rng + ?Sized>(
    grid: &Grid,
    layers: &LayerSample,
    queues: &mut [FieldQueue<'_>],
    spec_of_layer: &[usize; 3],
    rng: &mut R,
) -> PermeabilitySample {
    let mut work = grid.num_cells() as f64;
    let log_fields: Vec<Vec<f64>> = spec_of_layer
        .iter()
        .map(|&s| {
            let (f, w) = queues[s].next(rng);
            work += w;
            f
        })
        .collect();
    let values = piecewise_correlated_values(grid, layers, &log_fields);
    PermeabilitySample {
        level: 0,
        grid: *grid,
        values,
        provenance: Provenance::PiecewiseCorrelated {
            layers: *layers,
            log_fields,
        },
        work,
    }
}

/// Coarse sample made of the fine values on one parity subgrid. Valid only
/// for stationary fields, where every subvector has the coarse-level law.
pub fn extract_coarse_subsample(fine: &PermeabilitySample, offset: &Offset) -> Result<PermeabilitySample> {
    if !fine.provenance.is_stationary() {
        return Err(Error::NonStationary);
    }
    let map = subgrid_index_map(&fine.grid, offset)?;
    let grid = fine.grid.coarsen(2)?;
    Ok(PermeabilitySample {
        level: fine.level.saturating_sub(1),
        grid,
        values: map.iter().map(|&i| fine.values[i]).collect(),
        provenance: fine.provenance.clone(),
        work: grid.num_cells() as f64,
    })
}

/// Coarse-level permeability sharing the random input of `fine`.
///
/// - constant and stationary fields: parity-zero subsample (composed when the
///   grids are several levels apart)
/// - piecewise constant: same layers and layer values, evaluated at the
///   coarse centres
/// - piecewise correlated: each layer field is subsampled on the parity-zero
///   subgrid and the layer is read at the coarse centre
pub fn couple_coarse(fine: &PermeabilitySample, coarse: &Grid, level: usize) -> Result<PermeabilitySample> {
    let work = coarse.num_cells() as f64;
    let (values, provenance) = match &fine.provenance {
        Provenance::Constant(v) => (vec![*v; coarse.num_cells()], fine.provenance.clone()),
        Provenance::Stationary => {
            let map = nested_index_map(&fine.grid, coarse)?;
            (map.iter().map(|&i| fine.values[i]).collect(), Provenance::Stationary)
        }
        Provenance::PiecewiseConstant { layers, log_values } => {
            if fine.grid.dim() != coarse.dim() {
                return Err(Error::InvalidArgument("dimension mismatch".into()));
            }
            (
                piecewise_constant_values(coarse, layers, log_values),
                fine.provenance.clone(),
            )
        }
        Provenance::PiecewiseCorrelated { layers, log_fields } => {
            let map = nested_index_map(&fine.grid, coarse)?;
            let sub: Vec<Vec<f64>> = log_fields.iter().map(|f| map.iter().map(|&i| f[i]).collect()).collect();
            (
                piecewise_correlated_values(coarse, layers, &sub),
                Provenance::PiecewiseCorrelated {
                    layers: *layers,
                    log_fields: sub,
                },
            )
        }
    };
    Ok(PermeabilitySample {
        level,
        grid: *coarse,
        values,
        provenance,
        work,
    })
}

/// Permeability models selectable from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PermeabilityModel {
    Constant {
        value: f64,
    },
    PiecewiseConstant(PiecewiseConstantSpec),
    /// Continuous stationary log-normal field.
    Lognormal(GaussianFieldSpec),
    PiecewiseCorrelated {
        layers: [GaussianFieldSpec; 3],
    },
}

impl PermeabilityModel {
    /// Standard normal layer values, as in the layered reference studies.
    pub fn standard_piecewise_constant() -> Self {
        PermeabilityModel::PiecewiseConstant(PiecewiseConstantSpec {
            layers: [LayerParams::STANDARD; 3],
        })
    }

    /// Outer layers `mu = 0, lambda = 0.3`, middle layer `mu = 4,
    /// lambda = 0.1`, unit variance, 2-norm covariance.
    pub fn standard_piecewise_correlated() -> Self {
        let outer = GaussianFieldSpec {
            mu: 0.0,
            sigma2: 1.0,
            lambda: 0.3,
            norm: CovarianceNorm::Two,
        };
        let middle = GaussianFieldSpec {
            mu: 4.0,
            lambda: 0.1,
            ..outer
        };
        PermeabilityModel::PiecewiseCorrelated {
            layers: [outer, middle, outer],
        }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(
            self,
            PermeabilityModel::Constant { .. } | PermeabilityModel::Lognormal(_)
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PermeabilityModel::Constant { value } if !(*value > 0.0) => Err(Error::NonPositivePermeability(*value)),
            PermeabilityModel::Constant { .. } => Ok(()),
            PermeabilityModel::PiecewiseConstant(s) => s.validate(),
            PermeabilityModel::Lognormal(s) => s.validate(),
            PermeabilityModel::PiecewiseCorrelated { layers } => layers.iter().try_for_each(|s| s.validate()),
        }
    }
}

/// Sampler for one model on one grid; holds the circulant embeddings of the
/// distinct Gaussian specs. Immutable and shareable across threads.
#[derive(Debug)]
pub struct PermeabilitySampler {
    model: PermeabilityModel,
    grid: Grid,
    level: usize,
    embeddings: Vec<CirculantEmbedding>,
    spec_of_layer: [usize; 3],
}

impl PermeabilitySampler {
    pub fn new(model: &PermeabilityModel, grid: Grid, level: usize) -> Result<Self> {
        model.validate()?;
        let mut embeddings = Vec::new();
        let mut spec_of_layer = [0; 3];
        match model {
            PermeabilityModel::Lognormal(spec) => embeddings.push(build_circulant_embedding(spec, &grid)?),
            PermeabilityModel::PiecewiseCorrelated { layers } => {
                let mut distinct: Vec<GaussianFieldSpec> = Vec::new();
                for (i, spec) in layers.iter().enumerate() {
                    spec_of_layer[i] = match distinct.iter().position(|s| s == spec) {
                        Some(p) => p,
                        None => {
                            distinct.push(*spec);
                            embeddings.push(build_circulant_embedding(spec, &grid)?);
                            distinct.len() - 1
                        }
                    };
                }
            }
            _ => {}
        }
        Ok(Self {
            model: model.clone(),
            grid,
            level,
            embeddings,
            spec_of_layer,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn model(&self) -> &PermeabilityModel {
        &self.model
    }

    pub fn embeddings(&self) -> &[CirculantEmbedding] {
        &self.embeddings
    }

    /// Draws `count` consecutive samples from one stream, sharing FFTs
    /// between consecutive Gaussian field requests.
    pub fn sample_block<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<PermeabilitySample> {
        let mut queues: Vec<FieldQueue<'_>> = self.embeddings.iter().map(FieldQueue::new).collect();
        (0..count)
            .map(|_| {
                let mut s = match &self.model {
                    PermeabilityModel::Constant { value } => {
                        PermeabilitySample::constant(self.level, self.grid, *value)
                    }
                    PermeabilityModel::PiecewiseConstant(spec) => {
                        let layers = sample_layers(rng);
                        sample_piecewise_constant(&self.grid, &layers, spec, rng)
                    }
                    PermeabilityModel::Lognormal(_) => {
                        let (g, w) = queues[0].next(rng);
                        PermeabilitySample {
                            level: self.level,
                            grid: self.grid,
                            values: g.into_iter().map(f64::exp).collect(),
                            provenance: Provenance::Stationary,
                            work: w + self.grid.num_cells() as f64,
                        }
                    }
                    PermeabilityModel::PiecewiseCorrelated { .. } => {
                        let layers = sample_layers(rng);
                        sample_piecewise_correlated(&self.grid, &layers, &mut queues, &self.spec_of_layer, rng)
                    }
                };
                s.level = self.level;
                s
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PermeabilitySample {
        self.sample_block(rng, 1).pop().expect("one sample")
    }
}
