//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with a plain `main` so that every line reaches the terminal. Pass
//! criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 6 7`. Exits non-zero when any selected
//! criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tlon::autodiff::{Tape, Tensor, Var};
use tlon::bench::{
    cmd_finetune, cmd_gen, cmd_train_source, cmd_uq, DataConfig, ExperimentConfig, FinetuneSummary, Mode, SourceSummary,
    Task, TaskSetup,
};
use tlon::deeponet::init_model;
use tlon::field::{kle_decompose_grid, linspace, grid_points, sample_field, se_covariance, RngStream, SeCovarianceParams, DEFAULT_ENERGY_FRACTION};
use tlon::linalg::DenseMatrix;
use tlon::pde::{
    interp_to_target, simulate_brusselator, solve_burgers, solve_darcy, BrusselatorParams, BrusselatorRun, BurgersParams,
    Grid2D,
};
use tlon::rkhs::{ceod, ceod_node, median_bandwidth, ConditionalDataset, GaussianKernel, LinearKernel};
use tlon::transfer::{build_freeze_mask, FreezePolicy};

type Check = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// 1. Tape gradients against central differences on random graphs.
// ---------------------------------------------------------------------------

const GRAPHS: usize = 50;
const FD_STEP: f64 = 1e-6;
const FD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
enum Step {
    LeakyRelu,
    ScaledExp,
    HalfSquare,
    Transpose,
    Gram,
    Gaussian,
    Gather(Vec<usize>),
    Concat,
    Reshape,
    /// Solve with `MᵀM + I` where `M` is input `usize`.
    Solve(usize),
    /// `x / (1 + x²)` elementwise.
    Rational,
    /// Elementwise product / difference with input `usize`.
    Mul(usize),
    Sub(usize),
    /// Right-multiply by input `usize`.
    Matmul(usize),
}

struct Graph {
    inputs: Vec<Tensor>,
    steps: Vec<Step>,
    stride: usize,
}

fn uniform_tensor(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

/// Inputs 0..5 are the matrix `X`, the image, kernels, bias and a dense
/// map for the conv features; later inputs are added by steps.
fn random_graph(seed: u64) -> Graph {
    let mut rng = RngStream::derive(0xacce, seed);
    let (r, c) = (2 + rng.index(3), 2 + rng.index(3));
    let (batch, chans, side, out_ch, k) = (1 + rng.index(2), 1 + rng.index(2), 5 + rng.index(2), 1 + rng.index(3), 2 + rng.index(2));
    let stride = 1 + rng.index(2);
    let conv_side = (side - k) / stride + 1;
    let mut inputs = vec![
        uniform_tensor(&[r, c], &mut rng),
        uniform_tensor(&[batch, chans, side, side], &mut rng),
        uniform_tensor(&[out_ch, chans, k, k], &mut rng),
        uniform_tensor(&[out_ch], &mut rng),
        uniform_tensor(&[out_ch * conv_side * conv_side, 2], &mut rng),
    ];
    let mut shape = (r, c);
    let mut steps = Vec::new();
    let mut solves = 0;
    let count = 4 + rng.index(4);
    for s in 0..count {
        // Every graph ends in a solve when it has none yet; at most two keep
        // the values (and gradients) well away from round-off.
        let mut pick = if s + 1 == count && solves == 0 { 9 } else { rng.index(14) };
        if pick == 9 && solves == 2 {
            pick = 10;
        }
        let step = match pick {
            0 => Step::LeakyRelu,
            1 => Step::ScaledExp,
            2 => Step::HalfSquare,
            3 => {
                shape = (shape.1, shape.0);
                Step::Transpose
            }
            4 => {
                shape = (shape.0, shape.0);
                Step::Gram
            }
            5 => {
                shape = (shape.0, shape.0);
                Step::Gaussian
            }
            6 => {
                let rows: Vec<usize> = (0..1 + rng.index(4)).map(|_| rng.index(shape.0)).collect();
                shape.0 = rows.len();
                Step::Gather(rows)
            }
            7 => {
                shape.0 *= 2;
                Step::Concat
            }
            8 => {
                shape = (shape.1, shape.0);
                Step::Reshape
            }
            9 => {
                solves += 1;
                inputs.push(uniform_tensor(&[shape.0, shape.0], &mut rng));
                Step::Solve(inputs.len() - 1)
            }
            10 => Step::Rational,
            11 => {
                inputs.push(uniform_tensor(&[shape.0, shape.1], &mut rng));
                Step::Mul(inputs.len() - 1)
            }
            12 => {
                inputs.push(uniform_tensor(&[shape.0, shape.1], &mut rng));
                Step::Sub(inputs.len() - 1)
            }
            _ => {
                let cols = 1 + rng.index(3);
                inputs.push(uniform_tensor(&[shape.1, cols], &mut rng));
                shape.1 = cols;
                Step::Matmul(inputs.len() - 1)
            }
        };
        steps.push(step);
    }
    Graph { inputs, steps, stride }
}

fn build(graph: &Graph, t: &mut Tape, v: &[Var]) -> Var {
    let mut cur = v[0];
    for step in &graph.steps {
        cur = match step {
            Step::LeakyRelu => t.leaky_relu(cur, 0.1),
            Step::ScaledExp => {
                let s = t.scale(cur, 0.3);
                t.exp(s)
            }
            Step::HalfSquare => {
                let s = t.square(cur);
                t.scale(s, 0.5)
            }
            Step::Transpose => t.transpose(cur).unwrap(),
            Step::Gram => {
                let tr = t.transpose(cur).unwrap();
                let g = t.matmul(cur, tr).unwrap();
                t.scale(g, 0.5)
            }
            Step::Gaussian => {
                let d = t.sq_dist(cur, cur).unwrap();
                let d = t.scale(d, -0.5);
                t.exp(d)
            }
            Step::Gather(rows) => t.gather_rows(cur, rows).unwrap(),
            Step::Concat => {
                let s = t.scale(cur, -0.7);
                t.concat(&[cur, s]).unwrap()
            }
            Step::Reshape => {
                let s = t.shape(cur).to_vec();
                t.reshape(cur, &[s[1], s[0]]).unwrap()
            }
            Step::Solve(m) => {
                let n = t.shape(cur)[0];
                let mt = t.transpose(v[*m]).unwrap();
                let mtm = t.matmul(mt, v[*m]).unwrap();
                let eye = t.constant(Tensor::from_matrix(&DenseMatrix::identity(n)));
                let a = t.add(mtm, eye).unwrap();
                t.solve_spd(a, cur).unwrap()
            }
            Step::Rational => {
                let sq = t.square(cur);
                let one = t.constant(Tensor::full(t.shape(cur), 1.0));
                let den = t.add(sq, one).unwrap();
                t.div(cur, den).unwrap()
            }
            Step::Mul(i) => t.mul(cur, v[*i]).unwrap(),
            Step::Sub(i) => t.sub(cur, v[*i]).unwrap(),
            Step::Matmul(i) => t.matmul(cur, v[*i]).unwrap(),
        };
    }
    // Conv branch: conv → bias → activation → flatten → dense.
    let h = t.conv2d(v[1], v[2], graph.stride).unwrap();
    let h = t.add_bias(h, v[3]).unwrap();
    let h = t.leaky_relu(h, 0.1);
    let h = t.flatten(h).unwrap();
    let h = t.matmul(h, v[4]).unwrap();
    let conv_term = t.mean(h);
    // Scalar head: sqrt(1 + Σx²) + Σx + trace (when square) + conv term.
    let sq = t.square(cur);
    let ss = t.sum(sq);
    let one = t.constant(Tensor::scalar(1.0));
    let ss = t.add(ss, one).unwrap();
    let root = t.sqrt(ss);
    let linear = t.sum(cur);
    let root = t.add(root, linear).unwrap();
    let s = t.shape(cur).to_vec();
    let head = if s[0] == s[1] {
        let tr = t.trace(cur).unwrap();
        t.add(root, tr).unwrap()
    } else {
        root
    };
    t.add(head, conv_term).unwrap()
}

fn eval_graph(graph: &Graph, inputs: &[Tensor]) -> f64 {
    let mut t = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
    let out = build(graph, &mut t, &v);
    t.value(out).item()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn autodiff_correctness() -> Check {
    let mut worst: f64 = 0.0;
    let mut uses_solve = 0;
    for g in 0..GRAPHS as u64 {
        let graph = random_graph(g);
        uses_solve += usize::from(graph.steps.iter().any(|s| matches!(s, Step::Solve(_))));
        let mut t = Tape::new();
        let v: Vec<Var> = graph.inputs.iter().map(|x| t.param(x.clone())).collect();
        let out = build(&graph, &mut t, &v);
        let grads = t.backward(out).map_err(err)?;
        for (k, input) in graph.inputs.iter().enumerate() {
            let tape_grad = grads.get(v[k]).into_data();
            let fd: Vec<f64> = (0..input.len())
                .map(|i| {
                    let mut plus = graph.inputs.clone();
                    plus[k].data_mut()[i] += FD_STEP;
                    let mut minus = graph.inputs.clone();
                    minus[k].data_mut()[i] -= FD_STEP;
                    (eval_graph(&graph, &plus) - eval_graph(&graph, &minus)) / (2.0 * FD_STEP)
                })
                .collect();
            let diff: Vec<f64> = tape_grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
            let rel = norm(&diff) / norm(&fd).max(1e-8);
            if std::env::var_os("ACCEPT_DEBUG").is_some() && rel > 1e-5 { eprintln!("graph {g} input {k} rel {rel:.2e} steps {:?} fd {:?} tape {:?}", graph.steps, &fd[..fd.len().min(4)], &tape_grad[..tape_grad.len().min(4)]); }
            worst = worst.max(rel);
        }
    }
    Ok((
        worst <= FD_TOLERANCE,
        format!("{GRAPHS} graphs ({uses_solve} with SPD solves), worst per-input relative gradient error {worst:.2e} (limit {FD_TOLERANCE:.0e})"),
    ))
}

// ---------------------------------------------------------------------------
// 2. Trace formula against explicit linear feature maps.
// ---------------------------------------------------------------------------

const CEOD_LAMBDA: f64 = 1e-3;

/// Gauss–Jordan inverse with partial pivoting, independent of the library.
fn gauss_jordan_inverse(a: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        m[col].iter_mut().for_each(|x| *x /= p);
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                m[r].iter_mut().zip(&pivot_row).for_each(|(x, y)| *x -= f * y);
            }
        }
    }
    DenseMatrix::from_fn(n, n, |i, j| m[i][n + j])
}

fn mat_mul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum())
}

/// `Yᵀ (XXᵀ + λnI)⁻¹ X`: the empirical conditional-embedding operator with
/// identity feature maps.
fn explicit_operator(x: &DenseMatrix, y: &DenseMatrix, lambda: f64) -> DenseMatrix {
    let n = x.rows();
    let mut a = mat_mul(x, &x.transpose());
    for i in 0..n {
        a[(i, i)] += lambda * n as f64;
    }
    mat_mul(&mat_mul(&y.transpose(), &gauss_jordan_inverse(&a)), x)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform_range(-1.0, 1.0))
}

fn ceod_oracle() -> Check {
    let mut rng = RngStream::new(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (n1, n2) = (2 + rng.index(5), 2 + rng.index(5));
        let (dx, dy) = (1 + rng.index(3), 1 + rng.index(3));
        let p = ConditionalDataset::new(random_matrix(n1, dx, &mut rng), random_matrix(n1, dy, &mut rng)).map_err(err)?;
        let q = ConditionalDataset::new(random_matrix(n2, dx, &mut rng), random_matrix(n2, dy, &mut rng)).map_err(err)?;
        let (value, _) = ceod(&p, &q, CEOD_LAMBDA, &LinearKernel, &LinearKernel).map_err(err)?;
        let diff = explicit_operator(&p.x, &p.y, CEOD_LAMBDA).sub(&explicit_operator(&q.x, &q.y, CEOD_LAMBDA)).map_err(err)?;
        let explicit = diff.frobenius_norm().powi(2);
        worst = worst.max((value - explicit).abs() / explicit.abs().max(1.0));
    }
    Ok((worst <= 1e-9, format!("100 instances, n in 2..=6: worst |trace - explicit| / max(1, |explicit|) = {worst:.2e} (limit 1e-9)")))
}

// ---------------------------------------------------------------------------
// 3. Discrepancy properties under Gaussian kernels.
// ---------------------------------------------------------------------------

fn gaussian_pair(p: &ConditionalDataset) -> (GaussianKernel, GaussianKernel) {
    (
        GaussianKernel::new(median_bandwidth(&p.x)).unwrap(),
        GaussianKernel::new(median_bandwidth(&p.y)).unwrap(),
    )
}

fn random_dataset(n: usize, dx: usize, dy: usize, rng: &mut RngStream) -> ConditionalDataset {
    ConditionalDataset::new(random_matrix(n, dx, rng), random_matrix(n, dy, rng)).unwrap()
}

fn ceod_properties() -> Check {
    let mut rng = RngStream::new(3);
    let (mut self_max, mut min_value, mut asym_max, mut grad_max) = (0.0f64, f64::INFINITY, 0.0f64, 0.0f64);
    for trial in 0..40 {
        let n = if trial < 5 { 64 } else { 2 + rng.index(30) };
        let (dx, dy) = (1 + rng.index(4), 1 + rng.index(3));
        let p = random_dataset(n, dx, dy, &mut rng);
        let q = random_dataset(2 + rng.index(30), dx, dy, &mut rng);
        let (kx, ky) = gaussian_pair(&p);
        self_max = self_max.max(ceod(&p, &p, CEOD_LAMBDA, &kx, &ky).map_err(err)?.0.abs());
        let pq = ceod(&p, &q, CEOD_LAMBDA, &kx, &ky).map_err(err)?.0;
        let qp = ceod(&q, &p, CEOD_LAMBDA, &kx, &ky).map_err(err)?.0;
        min_value = min_value.min(pq).min(qp);
        asym_max = asym_max.max((pq - qp).abs() / pq.abs().max(1.0));

        if n <= 16 {
            let mut tape = Tape::new();
            let px = tape.constant(Tensor::from_matrix(&p.x));
            let py = tape.constant(Tensor::from_matrix(&p.y));
            let qx = tape.param(Tensor::from_matrix(&p.x));
            let qy = tape.param(Tensor::from_matrix(&p.y));
            let c = ceod_node(&mut tape, px, py, qx, qy, CEOD_LAMBDA, &kx, &ky).map_err(err)?;
            let g = tape.backward(c).map_err(err)?;
            let gmax = g.get(qx).data().iter().chain(g.get(qy).data()).fold(0.0f64, |m, v| m.max(v.abs()));
            grad_max = grad_max.max(gmax);
        }
    }
    let pass = self_max <= 1e-10 && min_value >= -1e-9 && asym_max <= 1e-12 && grad_max <= 1e-8;
    Ok((
        pass,
        format!(
            "40 random pairs (n up to 64): max |ceod(p,p)| {self_max:.1e} (<=1e-10), min ceod {min_value:.3e} (>=-1e-9), \
             max swap asymmetry {asym_max:.1e} (<=1e-12, relative to max(1,|value|)), max gradient at p=q {grad_max:.1e} (<=1e-8)"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 4. Random-field covariance.
// ---------------------------------------------------------------------------

fn kle_fidelity() -> Check {
    let xs = linspace(0.0, 1.0, 16);
    let points = grid_points(&xs, &xs);
    let d = points.len();
    let samples = 10_000;
    let mut details = Vec::new();
    let mut pass = true;
    for preset in ["darcy", "brusselator-ood1", "brusselator-ood2"] {
        let params = SeCovarianceParams::preset(preset).map_err(err)?;
        let basis = kle_decompose_grid(&xs, &xs, &params, DEFAULT_ENERGY_FRACTION).map_err(err)?;
        let mut rng = RngStream::new(4);
        let mut acc = vec![0.0; d * d];
        for _ in 0..samples {
            let f = sample_field(&basis, &mut rng);
            for i in 0..d {
                for j in 0..d {
                    acc[i * d + j] += f[i] * f[j];
                }
            }
        }
        let empirical = DenseMatrix::from_vec(d, d, acc.into_iter().map(|v| v / samples as f64).collect()).map_err(err)?;
        let analytic = se_covariance(&points, &params).map_err(err)?;
        let rel = empirical.sub(&analytic).map_err(err)?.frobenius_norm() / analytic.frobenius_norm();
        pass &= rel < 0.10;
        details.push(format!("{preset} {:.1}% ({} modes)", 100.0 * rel, basis.retained));
    }
    Ok((pass, format!("16x16 grid, {samples} samples, relative Frobenius error: {} (limit 10%)", details.join(", "))))
}

// ---------------------------------------------------------------------------
// 5. Reference solvers.
// ---------------------------------------------------------------------------

fn darcy_center(n: usize) -> Result<f64, String> {
    let grid = Grid2D::square(n, n).map_err(err)?;
    let h = solve_darcy(&vec![1.0; n * n], &vec![1.0; n * n], &grid).map_err(err)?;
    Ok(interp_to_target(&h, &grid, &[[0.5, 0.5]]).map_err(err)?[0])
}

fn perturbed(b: f64, grid: &Grid2D) -> (Vec<f64>, Vec<f64>) {
    let mut rng = RngStream::new(5);
    let u = (0..grid.len()).map(|_| 1.0 + 0.05 * rng.uniform_range(-1.0, 1.0)).collect();
    let v = (0..grid.len()).map(|_| b + 0.05 * rng.uniform_range(-1.0, 1.0)).collect();
    (u, v)
}

fn distance(run: &BrusselatorRun, n: usize, snap: usize, fp: (f64, f64)) -> f64 {
    let u = &run.u[snap * n..(snap + 1) * n];
    let v = &run.v[snap * n..(snap + 1) * n];
    u.iter().zip(v).map(|(a, b)| (a - fp.0).abs().max((b - fp.1).abs())).fold(0.0, f64::max)
}

fn long_run(b: f64) -> Result<(f64, f64), String> {
    let grid = Grid2D::square(12, 12).map_err(err)?;
    let mut p = BrusselatorParams::for_grid(b, &grid);
    p.t_final = 40.0;
    p.snapshots = 40;
    p.dt = p.stable_dt(&grid);
    let (u0, v0) = perturbed(b, &grid);
    let run = simulate_brusselator(&u0, &v0, &p, &grid).map_err(err)?;
    let fp = p.fixed_point();
    let start = distance(&run, grid.len(), 0, fp);
    let late = (30..40).map(|s| distance(&run, grid.len(), s, fp)).fold(0.0, f64::max);
    Ok((start, late))
}

fn pde_checks() -> Check {
    let mut parts = Vec::new();
    let mut pass = true;

    let grid = Grid2D::square(32, 32).map_err(err)?;
    let h = solve_darcy(&vec![1.0; grid.len()], &vec![0.0; grid.len()], &grid).map_err(err)?;
    let zero = h.iter().all(|&v| v == 0.0);
    pass &= zero;
    parts.push(format!("Darcy zero forcing exact zero: {zero}"));

    let (coarse, fine) = (darcy_center(64)?, darcy_center(256)?);
    let rel = (coarse - fine).abs() / fine.abs();
    pass &= rel < 0.02;
    parts.push(format!("Darcy centre 64 vs 256: {coarse:.5} vs {fine:.5} ({:.2}%)", 100.0 * rel));

    let grid = Grid2D::square(16, 16).map_err(err)?;
    let p = BrusselatorParams::for_grid(1.7, &grid);
    let (a, b_over_a) = p.fixed_point();
    let run = simulate_brusselator(&vec![a; grid.len()], &vec![b_over_a; grid.len()], &p, &grid).map_err(err)?;
    let drift = run.u.iter().map(|u| (u - a).abs()).chain(run.v.iter().map(|v| (v - b_over_a).abs())).fold(0.0, f64::max);
    pass &= drift <= 1e-8;
    parts.push(format!("Brusselator fixed-point drift {drift:.1e}"));

    let (s_low, l_low) = long_run(1.7)?;
    let (s_high, l_high) = long_run(3.0)?;
    let regimes = l_low < s_low && l_high > s_high;
    pass &= regimes;
    parts.push(format!("perturbation b=1.7 {s_low:.3}->{l_low:.1e}, b=3.0 {s_high:.3}->{l_high:.3}"));

    let coarse = BurgersParams::new(0.2);
    let fine = BurgersParams { dx: coarse.dx / 2.0, dt: coarse.dt / 2.0, ..coarse };
    let profile = |x: f64| (std::f64::consts::PI * x).sin() * 0.5 + 0.2 * (3.0 * x).cos();
    let uc = solve_burgers(&coarse.coords().iter().map(|&x| profile(x)).collect::<Vec<_>>(), &coarse).map_err(err)?;
    let uf = solve_burgers(&fine.coords().iter().map(|&x| profile(x)).collect::<Vec<_>>(), &fine).map_err(err)?;
    let diff = uc.iter().enumerate().map(|(i, v)| (v - uf[2 * i]).powi(2)).sum::<f64>().sqrt();
    let rel = diff / norm(&uc);
    pass &= rel < 0.05;
    parts.push(format!("Burgers refinement change {:.2}%", 100.0 * rel));
    Ok((pass, parts.join("; ")))
}

// ---------------------------------------------------------------------------
// Desk-scale experiments shared by criteria 6-10.
// ---------------------------------------------------------------------------

struct Experiment {
    cfg: ExperimentConfig,
    source: SourceSummary,
    sweep: FinetuneSummary,
    seconds: f64,
}

fn experiment(root: &Path, task: Task, tweak: impl FnOnce(&mut ExperimentConfig)) -> Result<Experiment, String> {
    let mut cfg = ExperimentConfig { task, ..ExperimentConfig::default() };
    cfg.paths.data_dir = root.join("data");
    cfg.paths.out_dir = root.join("out");
    tweak(&mut cfg);
    cfg.validate().map_err(err)?;
    let start = Instant::now();
    cmd_gen(&cfg).map_err(err)?;
    let source = cmd_train_source(&cfg).map_err(err)?;
    let sweep = cmd_finetune(&cfg).map_err(err)?;
    Ok(Experiment { cfg, source, sweep, seconds: start.elapsed().as_secs_f64() })
}

impl Experiment {
    fn mean(&self, mode: Mode, n_t: usize) -> f64 {
        self.sweep
            .rows
            .iter()
            .find(|r| r.mode == mode.as_str() && r.n_t == n_t)
            .map(|r| r.mean_rel_l2)
            .unwrap_or(f64::NAN)
    }
}

fn burgers(root: &Path) -> Result<Experiment, String> {
    experiment(root, Task::BurgersTl13, |c| {
        c.n_t = vec![5, 50, 250];
        c.seeds = vec![0, 1, 2];
        c.modes = vec![Mode::Source, Mode::Scratch, Mode::Transfer, Mode::TransferNoCeod];
    })
}

fn darcy(root: &Path) -> Result<Experiment, String> {
    experiment(root, Task::DarcyTl1, |c| {
        c.n_t = vec![5, 20, 50];
        c.seeds = vec![0, 1, 2];
        c.modes = vec![Mode::Source, Mode::Transfer, Mode::TransferNoCeod];
    })
}

fn brusselator(root: &Path) -> Result<Experiment, String> {
    experiment(root, Task::BrusselatorTl7, |c| {
        c.data = DataConfig { n_source: 300, n_source_test: 50, n_unlabeled: 100, n_target_test: 50, n_ood: 20, ..c.data.clone() };
        c.n_t = vec![100];
        c.seeds = vec![0];
        c.modes = vec![Mode::Transfer];
        c.train.epochs = 300;
        c.train.coord_batch = Some(1024);
        c.finetune.epochs = 200;
    })
}

fn tl_trend(e: &Experiment) -> Check {
    let (t50, s50) = (e.mean(Mode::Transfer, 50), e.mean(Mode::Scratch, 50));
    let (t5, t250) = (e.mean(Mode::Transfer, 5), e.mean(Mode::Transfer, 250));
    let minutes = e.seconds / 60.0;
    let pass = t50 < s50 && t250 < t5 && minutes < 30.0;
    Ok((
        pass,
        format!(
            "transfer@50 {t50:.4} vs scratch@50 {s50:.4}; transfer@250 {t250:.4} vs transfer@5 {t5:.4}; \
             transfer-no-ceod@50 {:.4}; {minutes:.1} min (limit 30)",
            e.mean(Mode::TransferNoCeod, 50)
        ),
    ))
}

fn ceod_ablation(e: &Experiment) -> Check {
    let mut parts = Vec::new();
    let mut pass = e.seconds / 60.0 < 45.0;
    for n in [5, 20, 50] {
        let (with, without) = (e.mean(Mode::Transfer, n), e.mean(Mode::TransferNoCeod, n));
        pass &= with < without;
        parts.push(format!("n_t={n}: {with:.4} vs {without:.4}"));
    }
    Ok((pass, format!("transfer vs transfer-no-ceod {}; {:.1} min (limit 45)", parts.join(", "), e.seconds / 60.0)))
}

fn economy(darcy: &Experiment) -> Check {
    let mut shares = Vec::new();
    let mut pass = true;
    for task in [Task::DarcyTl1, Task::BrusselatorTl7, Task::BurgersTl13] {
        let arch = TaskSetup::new(task, &DataConfig::default()).map_err(err)?.default_arch();
        let model = init_model(&arch, &mut RngStream::new(0)).map_err(err)?;
        let mask = build_freeze_mask(&model, FreezePolicy::PaperDefault).map_err(err)?;
        let share = mask.trainable_scalars(&model) as f64 / model.num_scalars() as f64;
        pass &= share < 0.40;
        shares.push(format!("{} {:.1}% of {}", arch_label(task), 100.0 * share, model.num_scalars()));
    }
    let transfer: Vec<f64> =
        darcy.sweep.cells.iter().filter(|c| c.mode == Mode::Transfer).map(|c| c.seconds_per_epoch).collect();
    let fine = transfer.iter().sum::<f64>() / transfer.len() as f64;
    let full = darcy.source.seconds_per_epoch;
    pass &= fine < full;
    Ok((
        pass,
        format!(
            "trainable share under paper-default: {} (limit 40%); per-epoch seconds fine-tune {fine:.4} vs full training {full:.4}",
            shares.join(", ")
        ),
    ))
}

fn arch_label(task: Task) -> &'static str {
    match task {
        Task::BurgersTl13 => "FNN",
        Task::BrusselatorTl7 | Task::BrusselatorTl8 => "CNN(x,y,t)",
        _ => "CNN(x,y)",
    }
}

fn lambda_dynamics(runs: &[&Experiment]) -> Check {
    let ceiling = 1e3;
    let (mut trajectories, mut violations, mut top) = (0, 0, 0.0f64);
    for e in runs {
        let init = e.cfg.finetune.hybrid.lambda2_init;
        for c in e.sweep.cells.iter().filter(|c| c.mode.hybrid(&e.cfg.finetune.hybrid).uses_ceod()) {
            trajectories += 1;
            let ok = c.lambda2.first().is_some_and(|&l| l >= init)
                && c.lambda2.windows(2).all(|w| w[1] >= w[0])
                && c.lambda2.iter().all(|&l| l <= ceiling);
            violations += usize::from(!ok);
            top = top.max(c.lambda2.iter().copied().fold(0.0, f64::max));
        }
    }
    Ok((
        violations == 0 && trajectories > 0,
        format!("{trajectories} trajectories, {violations} violations; largest value {top:.1} (ceiling {ceiling})"),
    ))
}

fn uq(e: &Experiment) -> Check {
    let mut cfg = e.cfg.clone();
    cfg.uq.samples = 500;
    let s = cmd_uq(&cfg, None).map_err(err)?;
    Ok((
        s.mean_rel_l2 < 0.10,
        format!(
            "{} samples: mean-field relative L2 {:.4} (limit 0.10); variance-field relative L2 {:.4} (not gated)",
            s.samples, s.mean_rel_l2, s.variance_rel_l2
        ),
    ))
}

// ---------------------------------------------------------------------------
// 11. Byte-identical reruns.
// ---------------------------------------------------------------------------

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "timings.csv") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn tiny_pipeline(root: &Path, task: Task, workers: usize) -> Result<(), String> {
    let mut cfg = ExperimentConfig { task, ..ExperimentConfig::default() };
    cfg.paths.data_dir = root.join("data");
    cfg.paths.out_dir = root.join("out");
    cfg.data = DataConfig { n_source: 24, n_source_test: 6, n_unlabeled: 12, n_target_test: 6, n_ood: 4, grid: Some(12), ..DataConfig::default() };
    cfg.n_t = vec![4, 8];
    cfg.seeds = vec![0, 1];
    cfg.train.epochs = 8;
    cfg.finetune.epochs = 6;
    cfg.uq.samples = 8;
    cfg.workers = Some(workers);
    cmd_gen(&cfg).map_err(err)?;
    cmd_train_source(&cfg).map_err(err)?;
    cmd_finetune(&cfg).map_err(err)?;
    cmd_uq(&cfg, None).map_err(err)?;
    Ok(())
}

fn reproducibility(root: &Path) -> Check {
    let dir = root.join("repro");
    let mut files = 0;
    let mut mismatched = Vec::new();
    for task in [Task::BurgersTl13, Task::DarcyTl1] {
        tiny_pipeline(&dir, task, 1)?;
        let first = snapshot(&dir);
        std::fs::remove_dir_all(&dir).map_err(err)?;
        tiny_pipeline(&dir, task, 3)?;
        let second = snapshot(&dir);
        std::fs::remove_dir_all(&dir).map_err(err)?;
        files += first.len();
        if first.keys().ne(second.keys()) {
            mismatched.push(format!("{task}: different file sets"));
        }
        mismatched.extend(first.iter().filter(|(k, v)| second.get(*k) != Some(v)).map(|(k, _)| k.display().to_string()));
    }
    Ok((
        mismatched.is_empty() && files > 0,
        if mismatched.is_empty() {
            format!("{files} files (datasets, sidecars, checkpoints, histories, field dumps, reports, moments) identical across reruns with 1 and 3 workers")
        } else {
            format!("differing: {}", mismatched.join(", "))
        },
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |i: usize| selected.is_empty() || selected.contains(&i);
    let root = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(usize, &str, Check, f64)> = Vec::new();
    let mut record = |i: usize, name: &'static str, f: &mut dyn FnMut() -> Check| {
        if !wants(i) {
            return;
        }
        let start = Instant::now();
        let check = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &check {
            Ok((true, d)) => ("PASS", d.clone()),
            Ok((false, d)) => ("FAIL", d.clone()),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        println!("{tag} [{i:>2}/11] {name}: {detail} ({secs:.1} s)");
        results.push((i, name, check, secs));
    };

    record(1, "autodiff correctness", &mut autodiff_correctness);
    record(2, "CEOD linear-kernel oracle", &mut ceod_oracle);
    record(3, "CEOD properties", &mut ceod_properties);
    record(4, "KLE fidelity", &mut kle_fidelity);
    record(5, "PDE solver checks", &mut pde_checks);

    let need = |set: &[usize]| set.iter().any(|&i| wants(i));
    let run = |ok: bool, f: &dyn Fn(&Path) -> Result<Experiment, String>, name: &str| {
        if !ok {
            return None;
        }
        let start = Instant::now();
        let e = f(&root.path().join(name));
        eprintln!("  ({name} experiment finished in {:.1} s)", start.elapsed().as_secs_f64());
        Some(e)
    };
    let burgers_run = run(need(&[6, 9]), &burgers, "burgers");
    let darcy_run = run(need(&[7, 8, 9]), &darcy, "darcy");
    let brusselator_run = run(need(&[9, 10]), &brusselator, "brusselator");
    let with = |e: &Option<Result<Experiment, String>>, f: &dyn Fn(&Experiment) -> Check| -> Check {
        match e {
            Some(Ok(e)) => f(e),
            Some(Err(msg)) => Err(msg.clone()),
            None => Err("experiment not run".into()),
        }
    };

    record(6, "end-to-end transfer trend (Burgers)", &mut || with(&burgers_run, &tl_trend));
    record(7, "CEOD ablation (Darcy)", &mut || with(&darcy_run, &ceod_ablation));
    record(8, "fine-tune economy", &mut || with(&darcy_run, &economy));
    record(9, "lambda2 dynamics", &mut || {
        let runs: Vec<&Experiment> = [&burgers_run, &darcy_run, &brusselator_run]
            .into_iter()
            .map(|r| match r {
                Some(Ok(e)) => Ok(e),
                Some(Err(m)) => Err(m.clone()),
                None => Err("experiment not run".to_string()),
            })
            .collect::<Result<_, _>>()?;
        lambda_dynamics(&runs)
    });
    record(10, "UQ moments (Brusselator)", &mut || with(&brusselator_run, &uq));
    record(11, "reproducibility", &mut || reproducibility(root.path()));

    let passed = results.iter().filter(|r| matches!(r.2, Ok((true, _)))).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
