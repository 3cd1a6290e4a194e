use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{DataConfig, Task};
use super::{BenchError, Result};
use crate::autodiff::Tensor;
use crate::deeponet::{ArchConfig, DatasetRole, OperatorDataset};
use crate::field::{kle_decompose, kle_decompose_grid, linspace, sample_field, se_covariance, KleBasis, RngStream, SeCovarianceParams};
use crate::pde::{make_geometry, simulate_brusselator, solve_burgers, solve_darcy, BrusselatorParams, BurgersParams, Grid2D};

/// Which distribution a sample is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
    /// Target physics with out-of-distribution inputs (1 or 2).
    Ood(u8),
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Source => 1,
            Domain::Target => 2,
            Domain::Ood(k) => 10 + u64::from(k),
        }
    }
}

const DARCY_GRID: usize = 32;
const BRUSSELATOR_GRID: usize = 28;
const BRUSSELATOR_SOURCE_B: f64 = 2.2;
/// Initial `v` is this level plus the random field, clipped at zero.
const BRUSSELATOR_V_LEVEL: f64 = 2.2;
const BURGERS_SOURCE_NU: f64 = 0.2;
const BURGERS_TARGET_NU: f64 = 0.001 / std::f64::consts::PI;

enum Kind {
    Darcy {
        basis: KleBasis,
        source: Grid2D,
        target: Grid2D,
        source_geometry: &'static str,
        target_geometry: &'static str,
    },
    Brusselator {
        grid: Grid2D,
        /// Source/target, OOD₁, OOD₂.
        bases: [KleBasis; 3],
        source: BrusselatorParams,
        target: BrusselatorParams,
    },
    Burgers {
        basis: KleBasis,
        source: BurgersParams,
        target: BurgersParams,
    },
}

/// Input sampler and reference solver of one benchmark task.
pub struct TaskSetup {
    pub task: Task,
    kind: Kind,
}

fn grid_basis(n: usize, preset: &str, fraction: f64) -> Result<KleBasis> {
    let xs = linspace(0.0, 1.0, n);
    Ok(kle_decompose_grid(&xs, &xs, &SeCovarianceParams::preset(preset)?, fraction)?)
}

fn points_tensor(points: &[[f64; 2]]) -> Tensor {
    Tensor::new(vec![points.len(), 2], points.iter().flat_map(|p| p.iter().copied()).collect()).expect("consistent length")
}

impl TaskSetup {
    pub fn new(task: Task, data: &DataConfig) -> Result<Self> {
        let fraction = data.energy_fraction;
        let kind = match task {
            Task::DarcyTl1 | Task::DarcyTl2 | Task::DarcyTl3 | Task::DarcyTl4 => {
                let n = data.grid.unwrap_or(DARCY_GRID);
                let (source_geometry, target_geometry) = match task {
                    Task::DarcyTl1 => ("square", "equilateral-triangle"),
                    Task::DarcyTl2 => ("square", "right-triangle"),
                    Task::DarcyTl3 => ("square", "triangle-notch"),
                    _ => ("square-vnotch", "square-2hnotch"),
                };
                Kind::Darcy {
                    basis: grid_basis(n, "darcy", fraction)?,
                    source: make_geometry(source_geometry, n, n)?,
                    target: make_geometry(target_geometry, n, n)?,
                    source_geometry,
                    target_geometry,
                }
            }
            Task::BrusselatorTl7 | Task::BrusselatorTl8 => {
                let n = data.grid.unwrap_or(BRUSSELATOR_GRID);
                let grid = Grid2D::square(n, n)?;
                let b = if task == Task::BrusselatorTl7 { 1.7 } else { 3.0 };
                Kind::Brusselator {
                    bases: [
                        grid_basis(n, "brusselator-source", fraction)?,
                        grid_basis(n, "brusselator-ood1", fraction)?,
                        grid_basis(n, "brusselator-ood2", fraction)?,
                    ],
                    source: BrusselatorParams::for_grid(BRUSSELATOR_SOURCE_B, &grid),
                    target: BrusselatorParams::for_grid(b, &grid),
                    grid,
                }
            }
            Task::BurgersTl13 => {
                let source = BurgersParams::new(BURGERS_SOURCE_NU);
                let points: Vec<[f64; 2]> = source.coords().into_iter().map(|x| [x, 0.0]).collect();
                let cov = se_covariance(&points, &SeCovarianceParams::preset("burgers")?)?;
                Kind::Burgers { basis: kle_decompose(&cov, fraction)?, source, target: BurgersParams::new(BURGERS_TARGET_NU) }
            }
        };
        Ok(Self { task, kind })
    }

    /// Shape of one branch input.
    pub fn branch_shape(&self) -> Vec<usize> {
        match &self.kind {
            Kind::Darcy { source, .. } => vec![source.ny, source.nx],
            Kind::Brusselator { grid, .. } => vec![grid.ny, grid.nx],
            Kind::Burgers { source, .. } => vec![source.num_points()],
        }
    }

    pub fn default_arch(&self) -> ArchConfig {
        match &self.kind {
            Kind::Darcy { source, .. } => ArchConfig::default_cnn(source.ny, source.nx, 2),
            Kind::Brusselator { grid, .. } => ArchConfig::default_cnn(grid.ny, grid.nx, 3),
            Kind::Burgers { source, .. } => ArchConfig::default_fnn(source.num_points(), 1),
        }
    }

    /// Number of out-of-distribution input families.
    pub fn ood_count(&self) -> u8 {
        match self.kind {
            Kind::Brusselator { .. } => 2,
            _ => 0,
        }
    }

    /// Evaluation coordinates `(d, coord_dim)` of the outputs.
    pub fn coords(&self, domain: Domain) -> Tensor {
        match &self.kind {
            Kind::Darcy { source, target, .. } => {
                let g = if domain == Domain::Source { source } else { target };
                points_tensor(&g.interior_points())
            }
            Kind::Brusselator { grid, source, .. } => {
                let pts = grid.points();
                let dt = source.t_final / source.snapshots as f64;
                let mut data = Vec::with_capacity(source.snapshots * pts.len() * 3);
                for s in 1..=source.snapshots {
                    for p in &pts {
                        data.extend([p[0], p[1], s as f64 * dt]);
                    }
                }
                Tensor::new(vec![source.snapshots * pts.len(), 3], data).expect("consistent length")
            }
            Kind::Burgers { source, .. } => {
                let xs = source.coords();
                Tensor::new(vec![xs.len(), 1], xs).expect("consistent length")
            }
        }
    }

    /// One flattened branch input.
    pub fn sample_input(&self, domain: Domain, rng: &mut RngStream) -> Vec<f64> {
        match &self.kind {
            Kind::Darcy { basis, .. } => sample_field(basis, rng).into_iter().map(f64::exp).collect(),
            Kind::Brusselator { bases, .. } => {
                let basis = match domain {
                    Domain::Ood(1) => &bases[1],
                    Domain::Ood(_) => &bases[2],
                    _ => &bases[0],
                };
                sample_field(basis, rng).into_iter().map(|v| (BRUSSELATOR_V_LEVEL + v).max(0.0)).collect()
            }
            Kind::Burgers { basis, .. } => sample_field(basis, rng),
        }
    }

    /// Reference solution at [`TaskSetup::coords`] for one input.
    pub fn solve(&self, domain: Domain, input: &[f64]) -> crate::pde::Result<Vec<f64>> {
        match &self.kind {
            Kind::Darcy { source, target, .. } => {
                let g = if domain == Domain::Source { source } else { target };
                let h = solve_darcy(input, &vec![1.0; input.len()], g)?;
                Ok(g.interior_indices().into_iter().map(|i| h[i]).collect())
            }
            Kind::Brusselator { grid, source, target, .. } => {
                let params = if domain == Domain::Source { source } else { target };
                let u0 = vec![params.a; grid.len()];
                Ok(simulate_brusselator(&u0, input, params, grid)?.v)
            }
            Kind::Burgers { source, target, .. } => {
                let params = if domain == Domain::Source { source } else { target };
                Ok(solve_burgers(input, params)?)
            }
        }
    }

    /// Provenance for the dataset sidecar.
    pub fn describe(&self, domain: Domain) -> Value {
        match &self.kind {
            Kind::Darcy { source, source_geometry, target_geometry, .. } => {
                let geometry = if domain == Domain::Source { source_geometry } else { target_geometry };
                json!({
                    "preset": "darcy",
                    "solver": "darcy",
                    "grid": [source.nx, source.ny],
                    "geometry": geometry,
                    "conductivity": "exp(field)",
                    "forcing": 1.0,
                })
            }
            Kind::Brusselator { grid, source, target, .. } => {
                let preset = match domain {
                    Domain::Ood(1) => "brusselator-ood1",
                    Domain::Ood(_) => "brusselator-ood2",
                    Domain::Source => "brusselator-source",
                    Domain::Target => "brusselator-target",
                };
                let params = if domain == Domain::Source { source } else { target };
                json!({
                    "preset": preset,
                    "solver": "brusselator",
                    "grid": [grid.nx, grid.ny],
                    "params": params,
                    "v0_level": BRUSSELATOR_V_LEVEL,
                })
            }
            Kind::Burgers { source, target, .. } => {
                let params = if domain == Domain::Source { source } else { target };
                json!({ "preset": "burgers", "solver": "burgers", "params": params })
            }
        }
    }
}

/// Deterministic per-sample stream for `(domain, role, sample)`.
pub fn sample_stream(seed: u64, domain: Domain, role: DatasetRole, index: usize) -> RngStream {
    let role_tag = role as u64;
    RngStream::derive(seed, (domain.tag() << 48) | (role_tag << 40) | index as u64)
}

/// Draws `n` inputs and, for labeled roles, solves each one. Samples are
/// independent streams so the result does not depend on thread count.
pub fn generate(setup: &TaskSetup, domain: Domain, role: DatasetRole, n: usize, seed: u64) -> Result<OperatorDataset> {
    let labeled = role != DatasetRole::TargetUnlabeled;
    let samples: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let input = setup.sample_input(domain, &mut sample_stream(seed, domain, role, i));
            let output = if labeled {
                Some(setup.solve(domain, &input).map_err(|source| BenchError::Sample { index: i, source })?)
            } else {
                None
            };
            Ok((input, output))
        })
        .collect::<Result<_>>()?;
    let mut shape = vec![n];
    shape.extend(setup.branch_shape());
    let inputs = Tensor::new(shape, samples.iter().flat_map(|s| s.0.iter().copied()).collect())?;
    let coords = setup.coords(domain);
    let outputs = if labeled {
        let d = coords.shape()[0];
        Some(Tensor::new(vec![n, d], samples.into_iter().flat_map(|s| s.1.expect("labeled")).collect())?)
    } else {
        None
    };
    Ok(OperatorDataset::new(role, inputs, coords, outputs)?)
}
