//! Viscous Burgers `u_t + u u_x = ν u_xx` on an interval with the end values
//! held at their initial values.

use serde::{Deserialize, Serialize};

use super::{PdeError, Result};

const BLOWUP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurgersParams {
    pub nu: f64,
    pub dx: f64,
    pub dt: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub t_final: f64,
}

impl BurgersParams {
    /// `Δx = 0.03125`, `Δt = 0.001` on `[−1, 1]` up to `t = 1`.
    pub fn new(nu: f64) -> Self {
        Self { nu, dx: 0.03125, dt: 0.001, x_min: -1.0, x_max: 1.0, t_final: 1.0 }
    }

    pub fn num_points(&self) -> usize {
        ((self.x_max - self.x_min) / self.dx).round() as usize + 1
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.num_points()).map(|i| self.x_min + i as f64 * self.dx).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.nu) && pos(self.dx) && pos(self.dt) && pos(self.t_final) && self.x_max > self.x_min) {
            return Err(PdeError::InvalidParams(format!("{self:?}")));
        }
        let span = (self.x_max - self.x_min) / self.dx;
        if (span - span.round()).abs() > 1e-9 || span.round() < 2.0 {
            return Err(PdeError::InvalidParams(format!("dx = {} does not tile the interval", self.dx)));
        }
        let r = self.nu * self.dt / (self.dx * self.dx);
        if r > 0.5 {
            return Err(PdeError::InvalidParams(format!("diffusion number {r} exceeds 0.5")));
        }
        Ok(())
    }
}

/// Upwind convection and central diffusion; returns `u` at `t_final`.
pub fn solve_burgers(u0: &[f64], params: &BurgersParams) -> Result<Vec<f64>> {
    params.validate()?;
    let n = params.num_points();
    if u0.len() != n {
        return Err(PdeError::InvalidInput(format!("u0 has {} values, grid has {n}", u0.len())));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(PdeError::InvalidInput("u0 must be finite".into()));
    }
    let steps = (params.t_final / params.dt).round().max(1.0) as usize;
    let (dx, dt, nu) = (params.dx, params.dt, params.nu);
    let mut u = u0.to_vec();
    let mut next = u.clone();
    for step in 1..=steps {
        let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(peak <= BLOWUP) {
            return Err(PdeError::Instability { step, value: peak });
        }
        if peak * dt / dx > 1.0 {
            return Err(PdeError::Instability { step, value: peak });
        }
        for i in 1..n - 1 {
            let ui = u[i];
            let ux = if ui > 0.0 { (ui - u[i - 1]) / dx } else { (u[i + 1] - ui) / dx };
            let uxx = (u[i + 1] - 2.0 * ui + u[i - 1]) / (dx * dx);
            next[i] = ui + dt * (nu * uxx - ui * ux);
        }
        std::mem::swap(&mut u, &mut next);
    }
    Ok(u)
}
