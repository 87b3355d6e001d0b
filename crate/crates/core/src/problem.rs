//! The two Darcy model problems on a grid hierarchy, and the per-sample
//! pipeline: permeability -> assembly -> solve -> functional.

use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, BoundarySpec, EdgeAveraging, ScalarField};
use crate::fields::{
    couple_coarse, extract_coarse_subsample, PermeabilityModel, PermeabilitySample, PermeabilitySampler,
};
use crate::grid::{build_hierarchy, parity_offsets, Grid, GridHierarchy};
use crate::qoi::{self, AveragingBox, FaceId, QoiSpec};
use crate::rng::{Purpose, StreamKey};
use crate::solver::{SolveReport, Solver, SolverConfig};
use crate::{Error, Result};

/// Samples drawn from one random stream before a new stream is keyed; two
/// consecutive samples share the FFTs of their Gaussian fields.
pub const SAMPLES_PER_STREAM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelProblem {
    /// `-div(k grad p) = 1`, `p = 0` on the boundary, local average of `p`.
    PointAverage,
    /// `div(k grad p) = 0`, `p = 1` at `x1 = 0`, `p = 0` at `x1 = 1`, no
    /// flux elsewhere; outflow through `x1 = 1`.
    Outflow,
}

impl ModelProblem {
    pub fn boundary(self, dim: usize) -> BoundarySpec {
        match self {
            ModelProblem::PointAverage => BoundarySpec::dirichlet_zero(dim),
            ModelProblem::Outflow => BoundarySpec::left_to_right(dim),
        }
    }

    pub fn source(self) -> ScalarField {
        match self {
            ModelProblem::PointAverage => ScalarField::Constant(1.0),
            ModelProblem::Outflow => ScalarField::Constant(0.0),
        }
    }

    pub fn default_qoi(self, dim: usize) -> QoiSpec {
        match self {
            ModelProblem::PointAverage => QoiSpec::LocalAverage(AveragingBox::centred(dim)),
            ModelProblem::Outflow => QoiSpec::Outflow { face: FaceId::OUTFLOW },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    #[default]
    Standard,
    /// Coarse grid variates: average the coarse functional over all `2^d`
    /// parity subsamples of the fine field.
    Cgv,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub dim: usize,
    pub kind: ModelProblem,
    pub model: PermeabilityModel,
    pub qoi: Option<QoiSpec>,
    pub averaging: EdgeAveraging,
    pub solver: SolverConfig,
    pub m0: usize,
    pub refinement: usize,
    pub max_level: usize,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn new(dim: usize, kind: ModelProblem, model: PermeabilityModel) -> Self {
        Self {
            dim,
            kind,
            model,
            qoi: None,
            averaging: EdgeAveraging::Harmonic,
            solver: SolverConfig::default(),
            m0: 8,
            refinement: 2,
            max_level: 4,
            seed: 0,
        }
    }
}

/// Functional value of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub q: f64,
    pub work: f64,
    pub seconds: f64,
    pub iterations: usize,
}

/// One sample of `Y_l = Q_l - Q_{l-1}` with its constituents.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSample {
    pub y: f64,
    pub fine_q: f64,
    /// Coarse functionals: none on level 0, one for standard coupling, `2^d`
    /// for coarse grid variates.
    pub coarse_q: Vec<f64>,
    pub work: f64,
    pub seconds: f64,
    pub solves: usize,
}

pub struct DarcyProblem {
    spec: ProblemSpec,
    hierarchy: GridHierarchy,
    bc: BoundarySpec,
    source: ScalarField,
    qoi: QoiSpec,
    solver: Solver,
    samplers: Mutex<Vec<Option<Arc<PermeabilitySampler>>>>,
}

impl std::fmt::Debug for DarcyProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DarcyProblem").field("spec", &self.spec).finish()
    }
}

impl DarcyProblem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        spec.model.validate()?;
        let hierarchy = build_hierarchy(spec.dim, spec.m0, spec.refinement, spec.max_level)?;
        let qoi = spec.qoi.clone().unwrap_or_else(|| spec.kind.default_qoi(spec.dim));
        if let QoiSpec::LocalAverage(b) = &qoi {
            for g in hierarchy.grids() {
                b.cell_range(g)?;
            }
        }
        let bc = spec.kind.boundary(spec.dim);
        let source = spec.kind.source();
        let solver = Solver::new(spec.solver.clone());
        let samplers = Mutex::new(vec![None; spec.max_level + 1]);
        Ok(Self {
            spec,
            hierarchy,
            bc,
            source,
            qoi,
            solver,
            samplers,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn hierarchy(&self) -> &GridHierarchy {
        &self.hierarchy
    }

    pub fn grid(&self, level: usize) -> Result<Grid> {
        self.hierarchy
            .level(level)
            .ok_or_else(|| Error::InvalidArgument(format!("level {level} beyond finest level {}", self.spec.max_level)))
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.bc
    }

    pub fn qoi(&self) -> &QoiSpec {
        &self.qoi
    }

    pub fn sampler(&self, level: usize) -> Result<Arc<PermeabilitySampler>> {
        let grid = self.grid(level)?;
        let mut cache = self.samplers.lock().expect("sampler cache poisoned");
        if let Some(s) = &cache[level] {
            return Ok(s.clone());
        }
        let s = Arc::new(PermeabilitySampler::new(&self.spec.model, grid, level)?);
        cache[level] = Some(s.clone());
        Ok(s)
    }

    /// Samples `start..start+count` of the permeability sequence on `level`
    /// for `purpose`. Sample `i` comes from stream block `i / 2`.
    pub fn sample_permeability(
        &self,
        level: usize,
        start: usize,
        count: usize,
        purpose: Purpose,
    ) -> Result<Vec<PermeabilitySample>> {
        let sampler = self.sampler(level)?;
        let mut out = Vec::with_capacity(count);
        let end = start + count;
        let mut i = start;
        while i < end {
            let block = i / SAMPLES_PER_STREAM;
            let mut rng = StreamKey::new(self.spec.seed, level, block as u64, purpose).rng();
            let samples = sampler.sample_block(&mut rng, SAMPLES_PER_STREAM);
            let first = i - block * SAMPLES_PER_STREAM;
            let last = (end - block * SAMPLES_PER_STREAM).min(SAMPLES_PER_STREAM);
            out.extend(samples.into_iter().skip(first).take(last - first));
            i = (block + 1) * SAMPLES_PER_STREAM;
        }
        Ok(out)
    }

    pub fn solve(&self, k: &PermeabilitySample) -> Result<SolveReport> {
        let system = assemble(&k.grid, &k.values, &self.bc, &self.source, self.spec.averaging)?;
        self.solver.solve(&system, &k.values, &self.bc, self.spec.averaging)
    }

    /// Functional of the solution for permeability `k`; work includes the
    /// generation work recorded on `k`.
    pub fn evaluate(&self, k: &PermeabilitySample) -> Result<Evaluation> {
        let start = Instant::now();
        let rep = self.solve(k)?;
        let q = qoi::evaluate(&self.qoi, &rep.solution, &k.values, &k.grid, &self.bc)?;
        Ok(Evaluation {
            q,
            work: rep.work + k.work,
            seconds: start.elapsed().as_secs_f64(),
            iterations: rep.iterations,
        })
    }

    /// `Y_l` for an already drawn fine permeability on level `level`.
    pub fn level_difference(&self, fine: &PermeabilitySample, level: usize, coupling: Coupling) -> Result<LevelSample> {
        let f = self.evaluate(fine)?;
        if level == 0 {
            return Ok(LevelSample {
                y: f.q,
                fine_q: f.q,
                coarse_q: vec![],
                work: f.work,
                seconds: f.seconds,
                solves: 1,
            });
        }
        let coarse_grid = self.grid(level - 1)?;
        let coarse_samples = match coupling {
            Coupling::Standard => vec![couple_coarse(fine, &coarse_grid, level - 1)?],
            Coupling::Cgv => {
                if self.spec.refinement != 2 {
                    return Err(Error::InvalidArgument(
                        "coarse grid variates need refinement factor 2".into(),
                    ));
                }
                parity_offsets(self.spec.dim)
                    .iter()
                    .map(|o| extract_coarse_subsample(fine, o))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let mut work = f.work;
        let mut seconds = f.seconds;
        let mut coarse_q = Vec::with_capacity(coarse_samples.len());
        for c in &coarse_samples {
            let e = self.evaluate(c)?;
            work += e.work;
            seconds += e.seconds;
            coarse_q.push(e.q);
        }
        let mean_coarse = coarse_q.iter().sum::<f64>() / coarse_q.len() as f64;
        Ok(LevelSample {
            y: f.q - mean_coarse,
            fine_q: f.q,
            solves: 1 + coarse_q.len(),
            coarse_q,
            work,
            seconds,
        })
    }

    /// Samples `start..start+count` of `Q_level` alone.
    pub fn sample_q(&self, level: usize, start: usize, count: usize, purpose: Purpose) -> Result<Vec<Evaluation>> {
        self.sample_permeability(level, start, count, purpose)?
            .iter()
            .map(|k| self.evaluate(k))
            .collect()
    }

    /// Samples `start..start+count` of `Y_level`.
    pub fn sample_y(
        &self,
        level: usize,
        start: usize,
        count: usize,
        coupling: Coupling,
        purpose: Purpose,
    ) -> Result<Vec<LevelSample>> {
        if coupling == Coupling::Cgv && level > 0 && !self.spec.model.is_stationary() {
            return Err(Error::NonStationary);
        }
        self.sample_permeability(level, start, count, purpose)?
            .iter()
            .map(|k| self.level_difference(k, level, coupling))
            .collect()
    }
}
