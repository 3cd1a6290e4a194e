use super::{PdeError, Result};

/// Names accepted by [`make_geometry`].
pub const GEOMETRIES: [&str; 6] =
    ["square", "equilateral-triangle", "right-triangle", "triangle-notch", "square-vnotch", "square-2hnotch"];

/// Node-centred structured grid over a rectangle with a domain mask.
///
/// `mask[j·nx + i]` is true when node `(i, j)` belongs to the closed domain.
/// A node is an unknown of the Darcy solve when it and its four neighbours
/// are all in the mask; every other node carries the Dirichlet value.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub mask: Vec<bool>,
}

impl Grid2D {
    /// Unit square with every node inside.
    pub fn square(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, (0.0, 1.0), (0.0, 1.0), vec![true; nx * ny])
    }

    pub fn new(nx: usize, ny: usize, x_range: (f64, f64), y_range: (f64, f64), mask: Vec<bool>) -> Result<Self> {
        if nx < 8 || ny < 8 {
            return Err(PdeError::InvalidGrid(format!("need at least 8x8 nodes, got {nx}x{ny}")));
        }
        if !(x_range.1 > x_range.0) || !(y_range.1 > y_range.0) {
            return Err(PdeError::InvalidGrid(format!("empty extent {x_range:?} x {y_range:?}")));
        }
        if mask.len() != nx * ny {
            return Err(PdeError::InvalidGrid(format!("mask has {} entries for {} nodes", mask.len(), nx * ny)));
        }
        let grid = Self { nx, ny, x_range, y_range, mask };
        if grid.mask_count() < 4 {
            return Err(PdeError::InvalidGrid("mask keeps fewer than 4 nodes".into()));
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_range.1 - self.y_range.0) / (self.ny - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_range.0 + i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_range.0 + j as f64 * self.dy()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn point(&self, idx: usize) -> [f64; 2] {
        [self.x(idx % self.nx), self.y(idx / self.nx)]
    }

    /// Every node, row by row.
    pub fn points(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        if i == 0 || j == 0 || i + 1 >= self.nx || j + 1 >= self.ny {
            return false;
        }
        let m = |a: usize, b: usize| self.mask[self.index(a, b)];
        m(i, j) && m(i - 1, j) && m(i + 1, j) && m(i, j - 1) && m(i, j + 1)
    }

    /// Node indices of the unknowns, in row-major order.
    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.ny)
            .flat_map(|j| (0..self.nx).map(move |i| (i, j)))
            .filter(|&(i, j)| self.is_interior(i, j))
            .map(|(i, j)| self.index(i, j))
            .collect()
    }

    /// Coordinates of the unknowns, in row-major order.
    pub fn interior_points(&self) -> Vec<[f64; 2]> {
        self.interior_indices().into_iter().map(|k| self.point(k)).collect()
    }

    /// True when `p` falls on a node of the closed domain or inside a cell
    /// whose four corners are all in the mask.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let Some((i, j, _, _)) = self.locate(p) else { return false };
        let m = |a: usize, b: usize| self.mask[self.index(a, b)];
        m(i, j) && m(i + 1, j) && m(i, j + 1) && m(i + 1, j + 1)
    }

    /// Lower-left cell corner and local coordinates in `[0, 1]²`.
    fn locate(&self, p: [f64; 2]) -> Option<(usize, usize, f64, f64)> {
        let tol = 1e-12;
        let fx = (p[0] - self.x_range.0) / self.dx();
        let fy = (p[1] - self.y_range.0) / self.dy();
        let (mx, my) = ((self.nx - 1) as f64, (self.ny - 1) as f64);
        if !(fx >= -tol && fx <= mx + tol && fy >= -tol && fy <= my + tol) {
            return None;
        }
        // Coordinates that hit a node up to rounding return the node value.
        let snap = |f: f64| if (f - f.round()).abs() < 1e-9 { f.round() } else { f };
        let (fx, fy) = (snap(fx).clamp(0.0, mx), snap(fy).clamp(0.0, my));
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        Some((i, j, fx - i as f64, fy - j as f64))
    }
}

/// Bilinear interpolation of a node field on the full rectangle of `grid`.
pub fn interp_to_target(field: &[f64], grid: &Grid2D, targets: &[[f64; 2]]) -> Result<Vec<f64>> {
    if field.len() != grid.len() {
        return Err(PdeError::InvalidInput(format!("field has {} values for {} nodes", field.len(), grid.len())));
    }
    targets
        .iter()
        .map(|&p| {
            let (i, j, s, t) = grid.locate(p).ok_or(PdeError::OutOfDomain { x: p[0], y: p[1] })?;
            let f = |a: usize, b: usize| field[grid.index(a, b)];
            Ok((1.0 - s) * (1.0 - t) * f(i, j)
                + s * (1.0 - t) * f(i + 1, j)
                + (1.0 - s) * t * f(i, j + 1)
                + s * t * f(i + 1, j + 1))
        })
        .collect()
}

fn in_triangle(p: [f64; 2], tri: [[f64; 2]; 3]) -> bool {
    let tol = 1e-9;
    let cross = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let d1 = cross(tri[0], tri[1], p);
    let d2 = cross(tri[1], tri[2], p);
    let d3 = cross(tri[2], tri[0], p);
    (d1 >= -tol && d2 >= -tol && d3 >= -tol) || (d1 <= tol && d2 <= tol && d3 <= tol)
}

/// Named domain on the unit square, rasterized to an `nx x ny` node mask.
///
/// Notches remove a single row or column of nodes.
pub fn make_geometry(name: &str, nx: usize, ny: usize) -> Result<Grid2D> {
    let mut grid = Grid2D::square(nx, ny)?;
    let equilateral = [[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]];
    let mid_col = ((nx - 1) as f64 * 0.5).round() as usize;
    let row_at = |y: f64| ((ny - 1) as f64 * y).round() as usize;
    let col_at = |x: f64| ((nx - 1) as f64 * x).round() as usize;
    let mut set = |pred: &dyn Fn(usize, usize, [f64; 2]) -> bool| {
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let p = [i as f64 / (nx - 1) as f64, j as f64 / (ny - 1) as f64];
                grid.mask[k] = grid.mask[k] && pred(i, j, p);
            }
        }
    };
    match name {
        "square" => {}
        "equilateral-triangle" => set(&|_, _, p| in_triangle(p, equilateral)),
        "right-triangle" => set(&|_, _, p| in_triangle(p, [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])),
        "triangle-notch" => {
            let top = row_at(0.4);
            set(&|i, j, p| in_triangle(p, equilateral) && !(i == mid_col && j <= top));
        }
        "square-vnotch" => {
            let bottom = row_at(0.5);
            set(&|i, j, _| !(i == mid_col && j >= bottom));
        }
        "square-2hnotch" => {
            let (low, high) = (row_at(1.0 / 3.0), row_at(2.0 / 3.0));
            let mid = col_at(0.5);
            set(&|i, j, _| !(j == low && i <= mid) && !(j == high && i >= mid));
        }
        other => return Err(PdeError::UnknownGeometry(other.to_string())),
    }
    if grid.mask_count() < 4 {
        return Err(PdeError::InvalidGrid(format!("{name} keeps fewer than 4 nodes at {nx}x{ny}")));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_all_true() {
        let g = make_geometry("square", 16, 16).unwrap();
        assert!(g.mask.iter().all(|&m| m));
        assert_eq!(g.interior_indices().len(), 14 * 14);
    }

    #[test]
    fn right_triangle_area_ratio() {
        let g = make_geometry("right-triangle", 64, 64).unwrap();
        let frac = g.mask_count() as f64 / g.len() as f64;
        assert!((frac - 0.5).abs() / 0.5 < 0.05, "{frac}");
    }

    #[test]
    fn equilateral_area_ratio() {
        let g = make_geometry("equilateral-triangle", 128, 128).unwrap();
        let frac = g.mask_count() as f64 / g.len() as f64;
        assert!((frac - 3f64.sqrt() / 4.0).abs() < 0.02, "{frac}");
    }

    #[test]
    fn notch_is_strict_subset() {
        let tri = make_geometry("equilateral-triangle", 32, 32).unwrap();
        let notch = make_geometry("triangle-notch", 32, 32).unwrap();
        assert!(notch.mask.iter().zip(&tri.mask).all(|(&n, &t)| !n || t));
        assert!(notch.mask_count() < tri.mask_count());
    }

    #[test]
    fn square_notches_remove_nodes() {
        for name in ["square-vnotch", "square-2hnotch"] {
            let g = make_geometry(name, 32, 32).unwrap();
            assert!(g.mask_count() < g.len());
        }
    }

    #[test]
    fn unknown_geometry() {
        assert!(matches!(make_geometry("circle", 16, 16), Err(PdeError::UnknownGeometry(_))));
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid2D::square(4, 16).is_err());
        assert!(Grid2D::new(8, 8, (0.0, 1.0), (0.0, 1.0), vec![false; 64]).is_err());
    }

    #[test]
    fn interpolation_reproduces_nodes_constants_and_linear() {
        let g = Grid2D::square(9, 11).unwrap();
        let pts = g.points();
        let f: Vec<f64> = pts.iter().map(|p| 2.0 * p[0] + 3.0 * p[1]).collect();
        let at_nodes = interp_to_target(&f, &g, &pts).unwrap();
        assert_eq!(at_nodes, f);
        let targets = [[0.123, 0.777], [0.5, 0.5], [0.999, 0.001], [1.0, 1.0]];
        for (v, p) in interp_to_target(&f, &g, &targets).unwrap().iter().zip(&targets) {
            assert!((v - (2.0 * p[0] + 3.0 * p[1])).abs() < 1e-12);
        }
        let c = interp_to_target(&vec![4.5; g.len()], &g, &targets).unwrap();
        assert!(c.iter().all(|&v| (v - 4.5).abs() < 1e-14));
    }

    #[test]
    fn interpolation_out_of_domain() {
        let g = Grid2D::square(8, 8).unwrap();
        let err = interp_to_target(&vec![0.0; 64], &g, &[[1.2, 0.5]]).unwrap_err();
        assert!(matches!(err, PdeError::OutOfDomain { .. }));
    }
}
