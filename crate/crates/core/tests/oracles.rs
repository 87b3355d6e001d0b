//! Comparisons against independent dense constructions written here.

use darcy_mlmc::assembly::{assemble, BoundarySpec, EdgeAveraging, ScalarField};
use darcy_mlmc::fields::{build_circulant_embedding, CovarianceNorm, GaussianFieldSpec, PermeabilityModel};
use darcy_mlmc::grid::Grid;
use darcy_mlmc::problem::{DarcyProblem, ModelProblem, ProblemSpec};
use darcy_mlmc::qoi::{self, AveragingBox, QoiSpec};
use darcy_mlmc::rng::{Purpose, StreamKey};
use darcy_mlmc::solver::{Solver, SolverConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// 0-based multi-index of storage position `i`, last coordinate fastest.
fn unravel(i: usize, dim: usize, m: usize) -> Vec<usize> {
    let mut idx = vec![0; dim];
    let mut rem = i;
    for a in (0..dim).rev() {
        idx[a] = rem % m;
        rem /= m;
    }
    idx
}

fn ravel(idx: &[usize], m: usize) -> usize {
    idx.iter().fold(0, |acc, &v| acc * m + v)
}

/// Dense two-point flux system built straight from the cell equations:
/// harmonic face coefficients, half-cell Dirichlet distance, zero Neumann.
fn dense_system(dim: usize, m: usize, k: &[f64], kind: ModelProblem) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.pow(dim as u32);
    let h = 1.0 / m as f64;
    let scale = h.powi(dim as i32 - 2);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let idx = unravel(i, dim, m);
        if kind == ModelProblem::PointAverage {
            b[i] += h.powi(dim as i32);
        }
        for axis in 0..dim {
            for dir in [-1i64, 1] {
                let nb = idx[axis] as i64 + dir;
                if nb >= 0 && nb < m as i64 {
                    let mut j = idx.clone();
                    j[axis] = nb as usize;
                    let jl = ravel(&j, m);
                    let t = 2.0 * k[i] * k[jl] / (k[i] + k[jl]) * scale;
                    a[(i, i)] += t;
                    a[(i, jl)] -= t;
                } else {
                    let t = 2.0 * k[i] * scale;
                    match kind {
                        ModelProblem::PointAverage => a[(i, i)] += t,
                        ModelProblem::Outflow if axis == 0 => {
                            a[(i, i)] += t;
                            if dir < 0 {
                                b[i] += t;
                            }
                        }
                        ModelProblem::Outflow => {}
                    }
                }
            }
        }
    }
    (a, b)
}

fn dense_solve(dim: usize, m: usize, k: &[f64], kind: ModelProblem) -> Vec<f64> {
    let (a, b) = dense_system(dim, m, k, kind);
    let chol = a.cholesky().expect("SPD");
    chol.solve(&b).iter().copied().collect()
}

fn random_lognormal(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = StreamKey::new(seed, 0, 0, Purpose::Test(77)).rng();
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (sigma * z).exp()
        })
        .collect()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

fn solve_with_library(dim: usize, m: usize, k: &[f64], kind: ModelProblem) -> Vec<f64> {
    let grid = Grid::new(dim, m).unwrap();
    let bc = kind.boundary(dim);
    let sys = assemble(&grid, k, &bc, &kind.source(), EdgeAveraging::Harmonic).unwrap();
    Solver::new(SolverConfig::default())
        .solve(&sys, k, &bc, EdgeAveraging::Harmonic)
        .unwrap()
        .solution
}

#[test]
fn matrix_matches_dense_construction() {
    for dim in 1..=3 {
        let m: usize = 4;
        let n = m.pow(dim as u32);
        let k = random_lognormal(n, 1.0, dim as u64);
        for kind in [ModelProblem::PointAverage, ModelProblem::Outflow] {
            let grid = Grid::new(dim, m).unwrap();
            let sys = assemble(&grid, &k, &kind.boundary(dim), &kind.source(), EdgeAveraging::Harmonic).unwrap();
            let (a, b) = dense_system(dim, m, &k, kind);
            let lib = sys.to_dense();
            for i in 0..n {
                for j in 0..n {
                    assert!(
                        (lib[i * n + j] - a[(i, j)]).abs() < 1e-12 * a[(i, i)].abs(),
                        "d={dim} ({i},{j})"
                    );
                }
                assert!((sys.rhs[i] - b[i]).abs() < 1e-14, "rhs d={dim} i={i}");
            }
        }
    }
}

#[test]
fn pcg_matches_dense_solve_on_random_fields() {
    for dim in [1usize, 2] {
        for m in [4usize, 8, 16] {
            for s in 0..20u64 {
                let n = m.pow(dim as u32);
                let k = random_lognormal(n, 1.0, 1000 * dim as u64 + 10 * m as u64 + s);
                for kind in [ModelProblem::PointAverage, ModelProblem::Outflow] {
                    let lib = solve_with_library(dim, m, &k, kind);
                    let dense = dense_solve(dim, m, &k, kind);
                    let r = rel_diff(&lib, &dense);
                    assert!(r < 1e-8, "d={dim} m={m} sample={s} {kind:?}: rel diff {r:e}");
                }
            }
        }
    }
}

#[test]
fn pcg_matches_dense_solve_on_layered_samples() {
    for model in [
        PermeabilityModel::standard_piecewise_constant(),
        PermeabilityModel::standard_piecewise_correlated(),
    ] {
        for kind in [ModelProblem::PointAverage, ModelProblem::Outflow] {
            let mut spec = ProblemSpec::new(2, kind, model.clone());
            spec.m0 = 16;
            spec.max_level = 0;
            let p = DarcyProblem::new(spec).unwrap();
            for k in p.sample_permeability(0, 0, 20, Purpose::Test(5)).unwrap() {
                let lib = p.solve(&k).unwrap().solution;
                let dense = dense_solve(2, 16, &k.values, kind);
                assert!(rel_diff(&lib, &dense) < 1e-8);
            }
        }
    }
}

#[test]
fn one_dimensional_outflow_is_inverse_resistance() {
    // 1D with harmonic faces: total resistance is h * sum(1/k_i)
    for m in [2usize, 8, 32, 128] {
        let k = random_lognormal(m, 1.5, m as u64);
        let grid = Grid::new(1, m).unwrap();
        let bc = BoundarySpec::left_to_right(1);
        let sys = assemble(&grid, &k, &bc, &ScalarField::Constant(0.0), EdgeAveraging::Harmonic).unwrap();
        let rep = Solver::new(tight())
            .solve(&sys, &k, &bc, EdgeAveraging::Harmonic)
            .unwrap();
        let q = qoi::outflow(&rep.solution, &k, &grid, &bc, qoi::FaceId::OUTFLOW).unwrap();
        let resistance: f64 = k.iter().map(|v| grid.h() / v).sum();
        assert!(
            (q - 1.0 / resistance).abs() < 1e-10 * q,
            "m={m}: {q} vs {}",
            1.0 / resistance
        );
    }
}

fn tight() -> SolverConfig {
    SolverConfig {
        tol: 1e-13,
        ..SolverConfig::default()
    }
}

#[test]
fn affine_pressure_is_reproduced_exactly() {
    for dim in 1..=3 {
        let levels = if dim == 3 { 2 } else { 4 };
        let mut spec = ProblemSpec::new(dim, ModelProblem::Outflow, PermeabilityModel::Constant { value: 1.0 });
        spec.m0 = 4;
        spec.max_level = levels;
        spec.solver = tight();
        let p = DarcyProblem::new(spec).unwrap();
        for l in 0..=levels {
            let k = p.sample_permeability(l, 0, 1, Purpose::Test(1)).unwrap().pop().unwrap();
            // the affine field solves the discrete system
            let grid = k.grid;
            let bc = ModelProblem::Outflow.boundary(dim);
            let sys = assemble(
                &grid,
                &k.values,
                &bc,
                &ScalarField::Constant(0.0),
                EdgeAveraging::Harmonic,
            )
            .unwrap();
            let exact: Vec<f64> = (0..grid.num_cells()).map(|i| 1.0 - grid.centre_of(i)[0]).collect();
            let mut r = vec![0.0; exact.len()];
            sys.residual(&exact, &mut r);
            let bnorm = sys.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(
                r.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-13 * bnorm,
                "d={dim} level {l}"
            );
            let q = qoi::outflow(&exact, &k.values, &grid, &bc, qoi::FaceId::OUTFLOW).unwrap();
            assert!((q - 1.0).abs() < 1e-12);
            let rep = p.solve(&k).unwrap();
            for (i, v) in rep.solution.iter().enumerate() {
                let x = k.grid.centre_of(i);
                assert!((v - (1.0 - x[0])).abs() < 1e-10, "d={dim} level {l} cell {i}");
            }
            let e = p.evaluate(&k).unwrap();
            assert!((e.q - 1.0).abs() < 1e-10, "d={dim} level {l} outflow {}", e.q);
        }
    }
}

#[test]
fn local_average_is_mean_of_covered_cells() {
    let m = 16;
    let k = random_lognormal(m * m, 0.5, 3);
    let p = dense_solve(2, m, &k, ModelProblem::PointAverage);
    let grid = Grid::new(2, m).unwrap();
    let q = qoi::evaluate(
        &QoiSpec::LocalAverage(AveragingBox::centred(2)),
        &p,
        &k,
        &grid,
        &BoundarySpec::dirichlet_zero(2),
    )
    .unwrap();
    // cells 6..10 in both directions cover [0.375, 0.625]
    let mut s = 0.0;
    for i in 6..10 {
        for j in 6..10 {
            s += p[i * m + j];
        }
    }
    assert!((q - s / 16.0).abs() < 1e-14);
}

/// Naive O(N^2) DFT of the embedded covariance on a 1D or 2D lattice.
fn naive_eigenvalues(spec: &GaussianFieldSpec, dim: usize, extent: usize, h: f64) -> Vec<f64> {
    let total = extent.pow(dim as u32);
    let lag = |j: usize| j.min(extent - j) as f64 * h;
    let c: Vec<f64> = (0..total)
        .map(|i| {
            let idx = unravel(i, dim, extent);
            let l: Vec<f64> = idx.iter().map(|&j| lag(j)).collect();
            let dist = match spec.norm {
                CovarianceNorm::One => l.iter().map(|v| v.abs()).sum::<f64>(),
                CovarianceNorm::Two => l.iter().map(|v| v * v).sum::<f64>().sqrt(),
            };
            spec.sigma2 * (-dist / spec.lambda).exp()
        })
        .collect();
    (0..total)
        .map(|kf| {
            let kidx = unravel(kf, dim, extent);
            let mut re = 0.0;
            for (j, cj) in c.iter().enumerate() {
                let jidx = unravel(j, dim, extent);
                let phase: f64 = kidx.iter().zip(&jidx).map(|(a, b)| (a * b) as f64).sum::<f64>();
                re += cj * (-2.0 * std::f64::consts::PI * phase / extent as f64).cos();
            }
            re
        })
        .collect()
}

#[test]
fn embedding_spectrum_matches_naive_dft() {
    for (dim, m, norm) in [
        (1usize, 8usize, CovarianceNorm::Two),
        (2, 4, CovarianceNorm::One),
        (2, 4, CovarianceNorm::Two),
    ] {
        let spec = GaussianFieldSpec {
            mu: 0.0,
            sigma2: 1.0,
            lambda: 0.3,
            norm,
        };
        let grid = Grid::new(dim, m).unwrap();
        let e = build_circulant_embedding(&spec, &grid).unwrap();
        let naive = naive_eigenvalues(&spec, dim, e.extent(), grid.h());
        let max = naive.iter().cloned().fold(0.0, f64::max);
        for (a, b) in e.eigenvalues().iter().zip(&naive) {
            assert!((a - b.max(0.0)).abs() < 1e-10 * max, "d={dim}: {a} vs {b}");
        }
    }
}
