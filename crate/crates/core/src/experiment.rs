//! Configuration-driven studies behind the command line tool, and the files
//! they write.
//!
//! Every run writes `levels.csv` (a `#` comment line with the command, config
//! hash and seed, then a header row), `summary.json` (the resolved config
//! echoed in full, hash, seed and results) and `config.toml` (the resolved
//! config; running it again reproduces every statistical output). Optional
//! files are `residuals.csv` and `field.bin`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::assembly::EdgeAveraging;
use crate::estimators::{
    fit_against_reference, fit_line, fit_power_law, mc_run, mlmc_run, McResult, MlmcConfig, MlmcResult, RateFit,
    SampleStats, Trend,
};
use crate::fields::{couple_coarse, extract_coarse_subsample, PermeabilityModel, PermeabilitySample};
use crate::grid::{parity_offsets, Grid};
use crate::problem::{Coupling, DarcyProblem, ModelProblem, ProblemSpec};
use crate::qoi::QoiSpec;
use crate::rng::Purpose;
use crate::solver::SolverConfig;
use crate::{Error, Result};

/// Environment variable overriding the output directory (below `--out`).
pub const OUT_DIR_ENV: &str = "DARCY_MLMC_OUT";
pub const DEFAULT_OUT_DIR: &str = "darcy-mlmc-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub permeability: PermeabilityModel,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ModelProblem,
    pub dim: usize,
    #[serde(default)]
    pub averaging: EdgeAveraging,
    /// Overrides the default functional of the model problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qoi: Option<QoiSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub m0: usize,
    pub refinement: usize,
    /// Finest study level `L`.
    pub levels: usize,
    /// Level of the reference solution in convergence studies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_level: Option<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            m0: 8,
            refinement: 2,
            levels: 3,
            reference_level: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Mlmc,
    Mc,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub seed: u64,
    /// Samples per level for convergence and CGV comparison studies.
    pub samples: usize,
    pub coupling: Coupling,
    pub eps: Vec<f64>,
    pub estimator: EstimatorKind,
    pub warmup: usize,
    pub initial_level: usize,
    pub max_level: usize,
    pub alpha_fallback: f64,
    /// Level of plain Monte Carlo; defaults to the finest level the
    /// multilevel run needed at the same tolerance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_level: Option<usize>,
    /// Cap on plain Monte Carlo samples; beyond it the cost is extrapolated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_max_samples: Option<usize>,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let m = MlmcConfig::default();
        Self {
            seed: 0,
            samples: 1000,
            coupling: Coupling::Standard,
            eps: vec![0.01],
            estimator: EstimatorKind::Mlmc,
            warmup: m.warmup,
            initial_level: m.initial_level,
            max_level: m.max_level,
            alpha_fallback: m.alpha_fallback,
            mc_level: None,
            mc_max_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Cells per direction of each benchmarked grid.
    pub m: Vec<usize>,
    pub systems: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            m: vec![16, 32, 64, 128],
            systems: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub residuals: bool,
    pub dump_field: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Convergence,
    CgvCompare,
    SolverBench,
    Mlmc,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Convergence => "convergence",
            Command::CgvCompare => "cgv-compare",
            Command::SolverBench => "solver-bench",
            Command::Mlmc => "mlmc",
        }
    }
}

/// 1-based line of the first `key =` assignment inside `[section]` (or at top
/// level for an empty section).
pub fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_start_matches('[').trim_end_matches(']').trim().to_string();
            if current == section {
                section_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    section_line
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn config_error(text: Option<&str>, section: &str, key: &str, message: String) -> Error {
    Error::Config {
        line: text.and_then(|t| locate_key(t, section, key)),
        message: format!("[{section}] {key}: {message}"),
    }
}

impl ExperimentConfig {
    /// Parses and validates TOML; errors carry the offending line.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate_with_source(Some(text))?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            line: None,
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_source(None)
    }

    fn validate_with_source(&self, text: Option<&str>) -> Result<()> {
        let err = |section: &str, key: &str, message: String| config_error(text, section, key, message);
        if !(1..=3).contains(&self.problem.dim) {
            return Err(err(
                "problem",
                "dim",
                format!("dimension must be 1, 2 or 3, got {}", self.problem.dim),
            ));
        }
        if let Err(e) = self.permeability.validate() {
            return Err(err("permeability", "model", e.to_string()));
        }
        let g = &self.grid;
        if g.m0 == 0 {
            return Err(err("grid", "m0", "coarsest grid needs at least one cell".into()));
        }
        if g.refinement < 2 {
            return Err(err(
                "grid",
                "refinement",
                format!("refinement factor must be at least 2, got {}", g.refinement),
            ));
        }
        let qoi = self
            .problem
            .qoi
            .clone()
            .unwrap_or_else(|| self.problem.kind.default_qoi(self.problem.dim));
        if let QoiSpec::LocalAverage(b) = &qoi {
            // finer levels refine by an integer factor, so level 0 decides
            if let Err(e) = Grid::new(self.problem.dim, g.m0.max(1)).and_then(|grid| b.cell_range(&grid)) {
                let key = if self.problem.qoi.is_some() { "qoi" } else { "m0" };
                let section = if self.problem.qoi.is_some() { "problem" } else { "grid" };
                return Err(err(section, key, e.to_string()));
            }
        }
        if let Some(r) = g.reference_level {
            if r <= g.levels {
                return Err(err(
                    "grid",
                    "reference_level",
                    format!(
                        "reference level {r} must be finer than every study level (levels = {})",
                        g.levels
                    ),
                ));
            }
        }
        let s = &self.sampling;
        if s.samples < 2 {
            return Err(err("sampling", "samples", "at least 2 samples are needed".into()));
        }
        if s.warmup < 2 {
            return Err(err("sampling", "warmup", "at least 2 warmup samples are needed".into()));
        }
        if let Some(bad) = s.eps.iter().find(|e| !(**e > 0.0)) {
            return Err(err(
                "sampling",
                "eps",
                format!("tolerances must be positive, got {bad}"),
            ));
        }
        if s.max_level < s.initial_level.min(1) || s.initial_level > s.max_level {
            return Err(err(
                "sampling",
                "initial_level",
                format!("initial level {} exceeds max level {}", s.initial_level, s.max_level),
            ));
        }
        if s.coupling == Coupling::Cgv && !self.permeability.is_stationary() {
            return Err(err("sampling", "coupling", Error::NonStationary.to_string()));
        }
        if s.coupling == Coupling::Cgv && g.refinement != 2 {
            return Err(err(
                "sampling",
                "coupling",
                "coarse grid variates need refinement = 2".into(),
            ));
        }
        if self.bench.systems == 0 {
            return Err(err("bench", "systems", "at least one system is needed".into()));
        }
        if let Some(m) = self.bench.m.iter().find(|m| **m < 2) {
            return Err(err(
                "bench",
                "m",
                format!("grids need at least 2 cells per direction, got {m}"),
            ));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(err("solver", "tol", "tolerance and max_iter must be positive".into()));
        }
        Ok(())
    }

    /// Short digest of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&canonical);
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn problem_spec(&self, max_level: usize) -> ProblemSpec {
        ProblemSpec {
            dim: self.problem.dim,
            kind: self.problem.kind,
            model: self.permeability.clone(),
            qoi: self.problem.qoi.clone(),
            averaging: self.problem.averaging,
            solver: self.solver.clone(),
            m0: self.grid.m0,
            refinement: self.grid.refinement,
            max_level,
            seed: self.sampling.seed,
        }
    }

    pub fn mlmc_config(&self) -> MlmcConfig {
        MlmcConfig {
            warmup: self.sampling.warmup,
            initial_level: self.sampling.initial_level,
            max_level: self.sampling.max_level,
            alpha_fallback: self.sampling.alpha_fallback,
            coupling: self.sampling.coupling,
        }
    }
}

/// Output of one command before it is written to disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub command: Command,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub levels_csv: String,
    pub results: Value,
    pub residuals_csv: Option<String>,
    pub field: Option<PermeabilitySample>,
}

impl RunOutput {
    pub fn summary(&self) -> Value {
        json!({
            "command": self.command.name(),
            "config_hash": self.config_hash,
            "seed": self.seed,
            "config": self.config,
            "results": self.results,
        })
    }
}

fn csv_header(command: Command, hash: &str, seed: u64, columns: &str) -> String {
    format!(
        "# command={} config_hash={hash} seed={seed}\n{columns}\n",
        command.name()
    )
}

pub fn run(command: Command, config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    match command {
        Command::Convergence => run_convergence_study(config),
        Command::CgvCompare => run_cgv_comparison(config),
        Command::SolverBench => run_solver_bench(config),
        Command::Mlmc => run_mlmc(config),
    }
}

fn field_dump(
    config: &ExperimentConfig,
    problem: &DarcyProblem,
    level: usize,
    purpose: Purpose,
) -> Result<Option<PermeabilitySample>> {
    if !config.output.dump_field {
        return Ok(None);
    }
    Ok(problem.sample_permeability(level, 0, 1, purpose)?.pop())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    pub samples: usize,
    /// `E[Q_ref - Q_h]`
    pub mean_error: f64,
    pub mean_error_se: f64,
    /// `V[Q_h - Q_2h]`; absent on level 0.
    pub var_y: Option<f64>,
    pub var_y_se: Option<f64>,
    pub mean_q: f64,
    pub var_q: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub reference_h: f64,
    pub mean_q_reference: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Rate of `|E[Q_ref - Q_h]| ~ C (h^alpha - h_ref^alpha)`.
    pub alpha: Option<RateFit>,
    /// Plain log-log fit of `|E[Q_ref - Q_h]|`, steepened near the reference.
    pub alpha_loglog: Option<RateFit>,
    pub beta: Option<RateFit>,
    pub gamma: Option<RateFit>,
}

/// Functionals on every study level and the reference level from one
/// reference-level sample, coupled down level by level.
fn reference_chain(problem: &DarcyProblem, fine: PermeabilitySample, levels: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let reference = fine.level;
    let mut q = vec![0.0; reference + 1];
    let mut work = vec![0.0; reference + 1];
    let mut k = fine;
    for l in (0..=reference).rev() {
        if l <= levels || l == reference {
            let e = problem.evaluate(&k)?;
            q[l] = e.q;
            work[l] = e.work;
        }
        if l > 0 {
            k = couple_coarse(&k, &problem.grid(l - 1)?, l - 1)?;
        }
    }
    Ok((q, work))
}

/// Bias and level-variance study against a reference solution.
pub fn convergence_report(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let levels = config.grid.levels;
    let reference = config.grid.reference_level.unwrap_or(levels + 1);
    let problem = DarcyProblem::new(config.problem_spec(reference))?;
    let n = config.sampling.samples;
    let chains = (0..n.div_ceil(SAMPLE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * SAMPLE_CHUNK;
            let count = SAMPLE_CHUNK.min(n - start);
            problem
                .sample_permeability(reference, start, count, Purpose::Convergence)?
                .into_iter()
                .map(|k| reference_chain(&problem, k, levels))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let grids = problem.hierarchy().grids();
    let mut rows = Vec::with_capacity(levels + 1);
    for l in 0..=levels {
        let err: Vec<f64> = chains.iter().map(|(q, _)| q[reference] - q[l]).collect();
        let ql: Vec<f64> = chains.iter().map(|(q, _)| q[l]).collect();
        let es = SampleStats::from_slice(&err);
        let qs = SampleStats::from_slice(&ql);
        let (var_y, var_y_se) = if l > 0 {
            let y: Vec<f64> = chains.iter().map(|(q, _)| q[l] - q[l - 1]).collect();
            let ys = SampleStats::from_slice(&y);
            (Some(ys.variance), Some(ys.variance_se))
        } else {
            (None, None)
        };
        rows.push(ConvergenceRow {
            level: l,
            h: grids[l].h(),
            samples: n,
            mean_error: es.mean,
            mean_error_se: es.mean_se,
            var_y,
            var_y_se,
            mean_q: qs.mean,
            var_q: qs.variance,
            cost: chains.iter().map(|(_, w)| w[l]).sum::<f64>() / n as f64,
        });
    }
    let s = config.grid.refinement;
    let h0 = grids[0].h();
    let all: Vec<usize> = (0..=levels).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.mean_error.abs()).collect();
    let costs: Vec<f64> = rows.iter().map(|r| r.cost).collect();
    let vars: Vec<f64> = rows.iter().skip(1).map(|r| r.var_y.unwrap_or(0.0)).collect();
    let fit = |lv: &[usize], v: &[f64], t| match fit_power_law(lv, v, s, h0, t) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("rate fit skipped: {e}");
            None
        }
    };
    Ok(ConvergenceReport {
        reference_h: grids[reference].h(),
        mean_q_reference: chains.iter().map(|(q, _)| q[reference]).sum::<f64>() / n as f64,
        alpha: fit_against_reference(
            &rows.iter().map(|r| r.h).collect::<Vec<_>>(),
            &errs,
            grids[reference].h(),
        )
        .map_err(|e| log::warn!("rate fit skipped: {e}"))
        .ok(),
        alpha_loglog: fit(&all, &errs, Trend::Decay),
        beta: fit(&all[1..], &vars, Trend::Decay),
        gamma: fit(&all, &costs, Trend::Growth),
        rows,
    })
}

const SAMPLE_CHUNK: usize = 8;

pub fn run_convergence_study(config: &ExperimentConfig) -> Result<RunOutput> {
    let report = convergence_report(config)?;
    let hash = config.hash();
    let seed = config.sampling.seed;
    let mut csv = csv_header(
        Command::Convergence,
        &hash,
        seed,
        "level,h,inv_h,samples,abs_mean_error,mean_error_se,var_y,var_y_se,mean_q,var_q,cost",
    );
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{},{:e},{},{},{:e},{:e},{},{},{:e},{:e},{:e}",
            r.level,
            r.h,
            (1.0 / r.h).round(),
            r.samples,
            r.mean_error.abs(),
            r.mean_error_se,
            opt(r.var_y),
            opt(r.var_y_se),
            r.mean_q,
            r.var_q,
            r.cost
        );
    }
    let reference = config.grid.reference_level.unwrap_or(config.grid.levels + 1);
    let field = if config.output.dump_field {
        let p = DarcyProblem::new(config.problem_spec(reference))?;
        field_dump(config, &p, reference, Purpose::Convergence)?
    } else {
        None
    };
    Ok(RunOutput {
        command: Command::Convergence,
        config: config.clone(),
        config_hash: hash,
        seed,
        levels_csv: csv,
        results: serde_json::to_value(&report)?,
        residuals_csv: None,
        field,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgvRow {
    pub level: usize,
    pub h: f64,
    pub samples: usize,
    pub mean_y_standard: f64,
    pub var_y_standard: f64,
    pub mean_y_cgv: f64,
    pub var_y_cgv: f64,
    /// `var_y_standard / var_y_cgv`; absent when the CGV variance is zero.
    pub reduction: Option<f64>,
    /// Mean work units per sample of `Y_l`.
    pub work_standard: f64,
    pub work_cgv: f64,
    /// Sample means of `Q` on each parity subsample, in parity order.
    pub subsample_mean_q: Vec<f64>,
}

/// Standard and CGV level differences from the same fine samples.
pub fn cgv_rows(config: &ExperimentConfig) -> Result<Vec<CgvRow>> {
    if !config.permeability.is_stationary() {
        return Err(Error::NonStationary);
    }
    let levels = config.grid.levels;
    let problem = DarcyProblem::new(config.problem_spec(levels))?;
    let offsets = parity_offsets(config.problem.dim);
    let n = config.sampling.samples;
    let mut rows = Vec::new();
    for l in 1..=levels {
        // (fine q, fine work, coarse q per parity, coarse work per parity)
        let per_sample = (0..n.div_ceil(SAMPLE_CHUNK))
            .into_par_iter()
            .map(|c| {
                let start = c * SAMPLE_CHUNK;
                let count = SAMPLE_CHUNK.min(n - start);
                problem
                    .sample_permeability(l, start, count, Purpose::CgvComparison)?
                    .into_iter()
                    .map(|k| {
                        let f = problem.evaluate(&k)?;
                        let mut cq = Vec::with_capacity(offsets.len());
                        let mut cw = Vec::with_capacity(offsets.len());
                        for o in &offsets {
                            let e = problem.evaluate(&extract_coarse_subsample(&k, o)?)?;
                            cq.push(e.q);
                            cw.push(e.work);
                        }
                        Ok((f.q, f.work, cq, cw))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect::<Vec<_>>();
        let y_std: Vec<f64> = per_sample.iter().map(|(f, _, cq, _)| f - cq[0]).collect();
        let y_cgv: Vec<f64> = per_sample
            .iter()
            .map(|(f, _, cq, _)| f - cq.iter().sum::<f64>() / cq.len() as f64)
            .collect();
        let ss = SampleStats::from_slice(&y_std);
        let sc = SampleStats::from_slice(&y_cgv);
        let nf = n as f64;
        rows.push(CgvRow {
            level: l,
            h: problem.grid(l)?.h(),
            samples: n,
            mean_y_standard: ss.mean,
            var_y_standard: ss.variance,
            mean_y_cgv: sc.mean,
            var_y_cgv: sc.variance,
            reduction: (sc.variance > 0.0).then(|| ss.variance / sc.variance),
            work_standard: per_sample.iter().map(|(_, fw, _, cw)| fw + cw[0]).sum::<f64>() / nf,
            work_cgv: per_sample
                .iter()
                .map(|(_, fw, _, cw)| fw + cw.iter().sum::<f64>())
                .sum::<f64>()
                / nf,
            subsample_mean_q: (0..offsets.len())
                .map(|j| per_sample.iter().map(|(_, _, cq, _)| cq[j]).sum::<f64>() / nf)
                .collect(),
        });
    }
    Ok(rows)
}

pub fn run_cgv_comparison(config: &ExperimentConfig) -> Result<RunOutput> {
    let rows = cgv_rows(config)?;
    let hash = config.hash();
    let seed = config.sampling.seed;
    let mut csv = csv_header(
        Command::CgvCompare,
        &hash,
        seed,
        "level,h,inv_h,samples,var_y_standard,var_y_cgv,reduction,work_standard,work_cgv,mean_y_standard,mean_y_cgv",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{:e},{},{},{:e},{:e},{},{:e},{:e},{:e},{:e}",
            r.level,
            r.h,
            (1.0 / r.h).round(),
            r.samples,
            r.var_y_standard,
            r.var_y_cgv,
            r.reduction.map(|x| format!("{x:e}")).unwrap_or_else(|| "NA".into()),
            r.work_standard,
            r.work_cgv,
            r.mean_y_standard,
            r.mean_y_cgv
        );
    }
    let field = if config.output.dump_field {
        let p = DarcyProblem::new(config.problem_spec(config.grid.levels))?;
        field_dump(config, &p, config.grid.levels, Purpose::CgvComparison)?
    } else {
        None
    };
    Ok(RunOutput {
        command: Command::CgvCompare,
        config: config.clone(),
        config_hash: hash,
        seed,
        levels_csv: csv,
        results: json!({ "rows": rows }),
        residuals_csv: None,
        field,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub m: usize,
    pub dof: usize,
    pub systems: usize,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub max_relative_residual: f64,
    pub work_per_dof: f64,
    pub mean_seconds: f64,
    pub seconds_per_dof: f64,
}

/// Solves `systems` random systems per grid size. Returns the table and the
/// residual histories as `(m, system, history)`.
#[allow(clippy::type_complexity)]
pub fn bench_rows(config: &ExperimentConfig) -> Result<(Vec<BenchRow>, Vec<(usize, usize, Vec<f64>)>)> {
    let mut rows = Vec::new();
    let mut histories = Vec::new();
    let n = config.bench.systems;
    for &m in &config.bench.m {
        let mut spec = config.problem_spec(0);
        spec.m0 = m;
        let problem = DarcyProblem::new(spec)?;
        let reports = (0..n.div_ceil(SAMPLE_CHUNK))
            .into_par_iter()
            .map(|c| {
                let start = c * SAMPLE_CHUNK;
                let count = SAMPLE_CHUNK.min(n - start);
                problem
                    .sample_permeability(0, start, count, Purpose::SolverBench)?
                    .iter()
                    .map(|k| problem.solve(k))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect::<Vec<_>>();
        let dof = problem.grid(0)?.num_cells();
        let nf = n as f64;
        let mean_seconds = reports.iter().map(|r| r.seconds).sum::<f64>() / nf;
        rows.push(BenchRow {
            m,
            dof,
            systems: n,
            mean_iterations: reports.iter().map(|r| r.iterations as f64).sum::<f64>() / nf,
            max_iterations: reports.iter().map(|r| r.iterations).max().unwrap_or(0),
            max_relative_residual: reports.iter().map(|r| r.relative_residual).fold(0.0, f64::max),
            work_per_dof: reports.iter().map(|r| r.work).sum::<f64>() / nf / dof as f64,
            mean_seconds,
            seconds_per_dof: mean_seconds / dof as f64,
        });
        if config.output.residuals {
            histories.extend(reports.into_iter().enumerate().map(|(i, r)| (m, i, r.residual_history)));
        }
    }
    Ok((rows, histories))
}

pub fn run_solver_bench(config: &ExperimentConfig) -> Result<RunOutput> {
    let (rows, histories) = bench_rows(config)?;
    let hash = config.hash();
    let seed = config.sampling.seed;
    let mut csv = csv_header(
        Command::SolverBench,
        &hash,
        seed,
        "m,dof,systems,mean_iterations,max_iterations,max_relative_residual,work_per_dof,mean_seconds,seconds_per_dof",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{:e},{:e},{:e},{:e}",
            r.m,
            r.dof,
            r.systems,
            r.mean_iterations,
            r.max_iterations,
            r.max_relative_residual,
            r.work_per_dof,
            r.mean_seconds,
            r.seconds_per_dof
        );
    }
    let residuals_csv = config.output.residuals.then(|| {
        let mut out = csv_header(
            Command::SolverBench,
            &hash,
            seed,
            "m,system,iteration,relative_residual",
        );
        for (m, i, h) in &histories {
            for (it, r) in h.iter().enumerate() {
                let _ = writeln!(out, "{m},{i},{},{r:e}", it + 1);
            }
        }
        out
    });
    let field = match (config.output.dump_field, config.bench.m.first()) {
        (true, Some(&m)) => {
            let mut spec = config.problem_spec(0);
            spec.m0 = m;
            let p = DarcyProblem::new(spec)?;
            field_dump(config, &p, 0, Purpose::SolverBench)?
        }
        _ => None,
    };
    Ok(RunOutput {
        command: Command::SolverBench,
        config: config.clone(),
        config_hash: hash,
        seed,
        levels_csv: csv,
        results: json!({ "rows": rows }),
        residuals_csv,
        field,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcSweep {
    pub mlmc: Vec<MlmcResult>,
    pub mc: Vec<McResult>,
    /// Slope of `log cost` against `log(1/eps)`; needs two or more tolerances.
    pub mlmc_cost_exponent: Option<f64>,
    pub mc_cost_exponent: Option<f64>,
}

fn cost_exponent(eps: &[f64], cost: &[f64]) -> Option<f64> {
    if eps.len() < 2 {
        return None;
    }
    let x: Vec<f64> = eps.iter().map(|e| -e.ln()).collect();
    let y: Vec<f64> = cost.iter().map(|c| c.ln()).collect();
    Some(fit_line(&x, &y).0)
}

/// Multilevel and/or plain Monte Carlo runs for each tolerance.
pub fn mlmc_sweep(config: &ExperimentConfig) -> Result<MlmcSweep> {
    let s = &config.sampling;
    let finest = s.max_level.max(s.mc_level.unwrap_or(0));
    let problem = DarcyProblem::new(config.problem_spec(finest))?;
    let mcfg = config.mlmc_config();
    let mut mlmc = Vec::new();
    let mut mc = Vec::new();
    for &eps in &s.eps {
        let ml = match s.estimator {
            EstimatorKind::Mlmc | EstimatorKind::Both => {
                let r = mlmc_run(&problem, eps, &mcfg)?;
                log::info!("mlmc eps={eps:e}: L={} work={:e}", r.levels.len() - 1, r.total_work);
                Some(r)
            }
            EstimatorKind::Mc => None,
        };
        if s.estimator != EstimatorKind::Mlmc {
            let level = match (s.mc_level, &ml) {
                (Some(l), _) => l,
                (None, Some(r)) => r.levels.len() - 1,
                (None, None) => {
                    return Err(config_error(
                        None,
                        "sampling",
                        "mc_level",
                        "plain Monte Carlo needs mc_level".into(),
                    ))
                }
            };
            mc.push(mc_run(&problem, eps, level, s.warmup, s.mc_max_samples)?);
        }
        mlmc.extend(ml);
    }
    Ok(MlmcSweep {
        mlmc_cost_exponent: (!mlmc.is_empty())
            .then(|| {
                cost_exponent(
                    &mlmc.iter().map(|r| r.eps).collect::<Vec<_>>(),
                    &mlmc.iter().map(|r| r.total_work).collect::<Vec<_>>(),
                )
            })
            .flatten(),
        mc_cost_exponent: (!mc.is_empty())
            .then(|| {
                cost_exponent(
                    &mc.iter().map(|r| r.eps).collect::<Vec<_>>(),
                    &mc.iter().map(|r| r.total_work).collect::<Vec<_>>(),
                )
            })
            .flatten(),
        mlmc,
        mc,
    })
}

pub fn run_mlmc(config: &ExperimentConfig) -> Result<RunOutput> {
    let sweep = mlmc_sweep(config)?;
    let hash = config.hash();
    let seed = config.sampling.seed;
    let mut csv = csv_header(
        Command::Mlmc,
        &hash,
        seed,
        "eps,estimator,level,h,inv_h,n,mean,variance,cost",
    );
    for r in &sweep.mlmc {
        let name = match config.sampling.coupling {
            Coupling::Standard => "mlmc",
            Coupling::Cgv => "mlmc_cgv",
        };
        for l in &r.levels {
            let _ = writeln!(
                csv,
                "{:e},{name},{},{:e},{},{},{:e},{:e},{:e}",
                r.eps,
                l.level,
                l.h,
                (1.0 / l.h).round(),
                l.n,
                l.mean,
                l.variance,
                l.cost
            );
        }
    }
    for r in &sweep.mc {
        let _ = writeln!(
            csv,
            "{:e},mc,{},{:e},{},{},{:e},{:e},{:e}",
            r.eps,
            r.level,
            r.h,
            (1.0 / r.h).round(),
            r.n_required,
            r.estimate,
            r.variance,
            r.cost_per_sample
        );
    }
    let field = if config.output.dump_field {
        let p = DarcyProblem::new(config.problem_spec(config.sampling.max_level))?;
        field_dump(config, &p, config.sampling.max_level, Purpose::Mlmc)?
    } else {
        None
    };
    Ok(RunOutput {
        command: Command::Mlmc,
        config: config.clone(),
        config_hash: hash,
        seed,
        levels_csv: csv,
        results: serde_json::to_value(&sweep)?,
        residuals_csv: None,
        field,
    })
}

/// Output directory: explicit flag, then the environment override, then the
/// default.
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

/// Writes all files of `out` into `dir` and returns their paths.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    put("levels.csv", out.levels_csv.as_bytes())?;
    let mut summary = serde_json::to_string_pretty(&out.summary())?;
    summary.push('\n');
    put("summary.json", summary.as_bytes())?;
    let config = format!(
        "# command={} config_hash={} seed={}\n{}",
        out.command.name(),
        out.config_hash,
        out.seed,
        out.config.to_toml_string()?
    );
    put("config.toml", config.as_bytes())?;
    if let Some(r) = &out.residuals_csv {
        put("residuals.csv", r.as_bytes())?;
    }
    if let Some(f) = &out.field {
        let mut buf = Vec::with_capacity(8 * f.values.len());
        f.write_raw(&mut buf)?;
        put("field.bin", &buf)?;
    }
    Ok(written)
}
