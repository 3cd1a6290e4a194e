//! Steady Darcy flow `∇·(K∇h) = g` with `h = 0` on the domain boundary.

use super::{Grid2D, PdeError, Result};

/// Stopping threshold on `‖r‖ / ‖b‖`.
pub const CG_RELATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Five-point stencil of `−∇·(K∇·)` restricted to the unknowns.
struct Stencil {
    diag: Vec<f64>,
    /// `(neighbour unknown, coupling)`; couplings to boundary nodes are
    /// dropped since the boundary value is zero.
    off: Vec<Vec<(usize, f64)>>,
}

impl Stencil {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = self.diag[i] * x[i];
            for &(j, c) in &self.off[i] {
                acc -= c * x[j];
            }
            *yi = acc;
        }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Solves on `grid` and returns `h` at every node (zero off the unknowns).
pub fn solve_darcy(k_field: &[f64], g_field: &[f64], grid: &Grid2D) -> Result<Vec<f64>> {
    solve_darcy_with_stats(k_field, g_field, grid).map(|(h, _)| h)
}

pub fn solve_darcy_with_stats(k_field: &[f64], g_field: &[f64], grid: &Grid2D) -> Result<(Vec<f64>, CgStats)> {
    let n_nodes = grid.len();
    if k_field.len() != n_nodes || g_field.len() != n_nodes {
        return Err(PdeError::InvalidInput(format!(
            "fields have {} and {} values for {} nodes",
            k_field.len(),
            g_field.len(),
            n_nodes
        )));
    }
    for (k, (&kv, &gv)) in k_field.iter().zip(g_field).enumerate() {
        if grid.mask[k] && !(kv > 0.0 && kv.is_finite()) {
            return Err(PdeError::InvalidInput(format!("conductivity {kv} at node {k} is not positive")));
        }
        if !gv.is_finite() {
            return Err(PdeError::InvalidInput(format!("source {gv} at node {k} is not finite")));
        }
    }

    let unknowns = grid.interior_indices();
    let mut slot = vec![usize::MAX; n_nodes];
    for (u, &k) in unknowns.iter().enumerate() {
        slot[k] = u;
    }
    let (ax, ay) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    let n = unknowns.len();
    let mut stencil = Stencil { diag: vec![0.0; n], off: vec![Vec::with_capacity(4); n] };
    let mut rhs = vec![0.0; n];
    for (u, &k) in unknowns.iter().enumerate() {
        let neighbours = [(k - 1, ax), (k + 1, ax), (k - grid.nx, ay), (k + grid.nx, ay)];
        for (nb, scale) in neighbours {
            let c = scale * harmonic(k_field[k], k_field[nb]);
            stencil.diag[u] += c;
            if slot[nb] != usize::MAX {
                stencil.off[u].push((slot[nb], c));
            }
        }
        rhs[u] = -g_field[k];
    }

    let (x, stats) = preconditioned_cg(&stencil, &rhs, 50 * n.max(1))?;
    let mut h = vec![0.0; n_nodes];
    for (u, &k) in unknowns.iter().enumerate() {
        h[k] = x[u];
    }
    Ok((h, stats))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn preconditioned_cg(a: &Stencil, b: &[f64], budget: usize) -> Result<(Vec<f64>, CgStats)> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((x, CgStats { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&a.diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=budget {
        a.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        if !rel.is_finite() {
            break;
        }
        if rel <= CG_RELATIVE_TOLERANCE {
            return Ok((x, CgStats { iterations: it, relative_residual: rel }));
        }
        for i in 0..n {
            z[i] = r[i] / a.diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(PdeError::SolverDiverged { iterations: budget, residual: rel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::make_geometry;

    fn center_value(n: usize) -> f64 {
        let grid = Grid2D::square(n, n).unwrap();
        let h = solve_darcy(&vec![1.0; n * n], &vec![1.0; n * n], &grid).unwrap();
        crate::pde::interp_to_target(&h, &grid, &[[0.5, 0.5]]).unwrap()[0]
    }

    #[test]
    fn zero_source_gives_zero_head() {
        let grid = Grid2D::square(16, 16).unwrap();
        let h = solve_darcy(&vec![1.0; 256], &vec![0.0; 256], &grid).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_source_center_value_converges() {
        let coarse = center_value(64);
        let fine = center_value(256);
        assert!(coarse < 0.0, "sign follows the equation as written");
        assert!((coarse - fine).abs() / fine.abs() < 0.02, "{coarse} vs {fine}");
        assert!((fine + 0.0737).abs() < 1e-3, "{fine}");
    }

    #[test]
    fn residual_meets_tolerance() {
        let grid = Grid2D::square(24, 24).unwrap();
        let k: Vec<f64> = grid.points().iter().map(|p| (p[0] - 2.0 * p[1]).exp()).collect();
        let (_, stats) = solve_darcy_with_stats(&k, &vec![1.0; grid.len()], &grid).unwrap();
        assert!(stats.relative_residual <= CG_RELATIVE_TOLERANCE);
    }

    #[test]
    fn triangle_boundary_is_zero() {
        let grid = make_geometry("equilateral-triangle", 32, 32).unwrap();
        let h = solve_darcy(&vec![1.0; grid.len()], &vec![1.0; grid.len()], &grid).unwrap();
        let interior = grid.interior_indices();
        for (k, &v) in h.iter().enumerate() {
            if !interior.contains(&k) {
                assert_eq!(v, 0.0);
            }
        }
        assert!(interior.iter().all(|&k| h[k] < 0.0));
    }

    #[test]
    fn nonpositive_source_keeps_head_nonnegative() {
        let grid = make_geometry("square-2hnotch", 24, 24).unwrap();
        let g: Vec<f64> = grid.points().iter().map(|p| -(p[0] * 7.0).sin().abs()).collect();
        let k: Vec<f64> = grid.points().iter().map(|p| 1.0 + p[1]).collect();
        let h = solve_darcy(&k, &g, &grid).unwrap();
        assert!(h.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn rejects_nonpositive_conductivity() {
        let grid = Grid2D::square(8, 8).unwrap();
        let mut k = vec![1.0; 64];
        k[10] = 0.0;
        assert!(matches!(solve_darcy(&k, &vec![1.0; 64], &grid), Err(PdeError::InvalidInput(_))));
    }

    #[test]
    fn deterministic() {
        let grid = make_geometry("right-triangle", 20, 20).unwrap();
        let k: Vec<f64> = grid.points().iter().map(|p| 1.0 + p[0] * p[1]).collect();
        let a = solve_darcy(&k, &vec![1.0; grid.len()], &grid).unwrap();
        let b = solve_darcy(&k, &vec![1.0; grid.len()], &grid).unwrap();
        assert_eq!(a, b);
    }
}
