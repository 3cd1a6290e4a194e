//! Brusselator reaction-diffusion
//!
//! ```text
//! ∂u/∂t = D0 ∇²u + a − (b + 1) u + u² v
//! ∂v/∂t = D1 ∇²v + b u − u² v
//! ```
//!
//! with zero-flux walls and explicit Euler stepping.

use serde::{Deserialize, Serialize};

use super::{Grid2D, PdeError, Result};

/// Safety factor on the explicit diffusion limit `Δx²/(4·max D)`.
const STABILITY_FACTOR: f64 = 0.9;
const BLOWUP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrusselatorParams {
    pub a: f64,
    pub b: f64,
    pub d0: f64,
    pub d1: f64,
    pub dt: f64,
    pub snapshots: usize,
    pub t_final: f64,
    /// Drops the reaction terms, leaving pure diffusion; used to check the
    /// discrete conservation of the Laplacian.
    #[serde(default)]
    pub diffusion_only: bool,
}

impl BrusselatorParams {
    /// Reference parameters (`a = 1`, `D0 = 1`, `D1 = 0.1`, ten snapshots
    /// over `(0, 1]`) with the largest stable step that divides the
    /// snapshot interval evenly.
    pub fn for_grid(b: f64, grid: &Grid2D) -> Self {
        let mut p = Self { a: 1.0, b, d0: 1.0, d1: 0.1, dt: 0.0, snapshots: 10, t_final: 1.0, diffusion_only: false };
        p.dt = p.stable_dt(grid);
        p
    }

    /// Largest step that is below the stability bound and lands exactly on
    /// each snapshot time.
    pub fn stable_dt(&self, grid: &Grid2D) -> f64 {
        let interval = self.t_final / self.snapshots as f64;
        let steps = (interval / self.max_dt(grid)).ceil().max(1.0);
        interval / steps
    }

    pub fn max_dt(&self, grid: &Grid2D) -> f64 {
        let h = grid.dx().min(grid.dy());
        STABILITY_FACTOR * h * h / (4.0 * self.d0.max(self.d1))
    }

    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !(nonneg(self.a) && nonneg(self.b) && pos(self.d0) && pos(self.d1) && pos(self.dt) && pos(self.t_final)) {
            return Err(PdeError::InvalidParams(format!("{self:?}")));
        }
        if self.snapshots == 0 {
            return Err(PdeError::InvalidParams("at least one snapshot is required".into()));
        }
        if self.dt > self.max_dt(grid) * (1.0 + 1e-12) {
            return Err(PdeError::InvalidParams(format!(
                "dt = {} exceeds the stability bound {}",
                self.dt,
                self.max_dt(grid)
            )));
        }
        Ok(())
    }

    /// Homogeneous steady state `(a, b/a)`.
    pub fn fixed_point(&self) -> (f64, f64) {
        (self.a, self.b / self.a)
    }
}

/// Both species at every snapshot, each `snapshots x ny x nx` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct BrusselatorRun {
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// `v` at the snapshot times.
pub fn solve_brusselator(h1_init: &[f64], h2_init: &[f64], params: &BrusselatorParams, grid: &Grid2D) -> Result<Vec<f64>> {
    simulate_brusselator(h1_init, h2_init, params, grid).map(|run| run.v)
}

fn laplacian(f: &[f64], nx: usize, ny: usize, ax: f64, ay: f64, out: &mut [f64]) {
    // Zero-flux walls: the missing neighbour takes the wall node's value,
    // which makes the stencil telescope to zero when summed.
    for j in 0..ny {
        let jm = if j == 0 { 0 } else { j - 1 };
        let jp = if j + 1 == ny { j } else { j + 1 };
        for i in 0..nx {
            let im = if i == 0 { 0 } else { i - 1 };
            let ip = if i + 1 == nx { i } else { i + 1 };
            let c = f[j * nx + i];
            out[j * nx + i] =
                ax * (f[j * nx + im] - 2.0 * c + f[j * nx + ip]) + ay * (f[jm * nx + i] - 2.0 * c + f[jp * nx + i]);
        }
    }
}

pub fn simulate_brusselator(h1_init: &[f64], h2_init: &[f64], params: &BrusselatorParams, grid: &Grid2D) -> Result<BrusselatorRun> {
    params.validate(grid)?;
    let n = grid.len();
    if h1_init.len() != n || h2_init.len() != n {
        return Err(PdeError::InvalidInput(format!(
            "initial fields have {} and {} values for {} nodes",
            h1_init.len(),
            h2_init.len(),
            n
        )));
    }
    if h1_init.iter().chain(h2_init).any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(PdeError::InvalidInput("initial fields must be finite and non-negative".into()));
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let (ax, ay) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    let interval = params.t_final / params.snapshots as f64;
    let steps_per = (interval / params.dt).round().max(1.0) as usize;
    let dt = interval / steps_per as f64;
    let (a, b) = (params.a, params.b);

    let mut u = h1_init.to_vec();
    let mut v = h2_init.to_vec();
    let mut lu = vec![0.0; n];
    let mut lv = vec![0.0; n];
    let mut run = BrusselatorRun {
        times: Vec::with_capacity(params.snapshots),
        u: Vec::with_capacity(params.snapshots * n),
        v: Vec::with_capacity(params.snapshots * n),
    };
    let mut step = 0;
    for snap in 1..=params.snapshots {
        for _ in 0..steps_per {
            step += 1;
            laplacian(&u, nx, ny, ax, ay, &mut lu);
            laplacian(&v, nx, ny, ax, ay, &mut lv);
            let mut worst = 0.0f64;
            for k in 0..n {
                let (uk, vk) = (u[k], v[k]);
                let (ru, rv) = if params.diffusion_only {
                    (0.0, 0.0)
                } else {
                    let uuv = uk * uk * vk;
                    (a - (b + 1.0) * uk + uuv, b * uk - uuv)
                };
                u[k] = uk + dt * (params.d0 * lu[k] + ru);
                v[k] = vk + dt * (params.d1 * lv[k] + rv);
                worst = worst.max(u[k].abs()).max(v[k].abs());
            }
            if !(worst <= BLOWUP) {
                return Err(PdeError::Instability { step, value: worst });
            }
        }
        run.times.push(snap as f64 * interval);
        run.u.extend_from_slice(&u);
        run.v.extend_from_slice(&v);
    }
    Ok(run)
}
