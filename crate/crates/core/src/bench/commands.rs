use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, Mode};
use super::report::{merge_reports, read_report, render_markdown, write_report};
use super::tasks::{generate, Domain, TaskSetup};
use super::{BenchError, Result};
use crate::autodiff::Tensor;
use crate::container::TensorFile;
use crate::deeponet::{
    checkpoint_file, init_model, model_from_checkpoint, train_source, ArchConfig, DatasetRole, DeepONet, OperatorDataset,
};
use crate::field::RngStream;
use crate::transfer::{
    aggregate_seeds, build_freeze_mask, evaluate, finetune, per_sample_rel_l2, sample_moments, transfer_params, uq_moments,
    FinetuneConfig, ReportRow,
};

/// `git describe` of the source tree this binary was built from.
pub const GIT_DESCRIBE: &str = env!("TLON_GIT_DESCRIBE");

/// Stream indices for the non-sample random draws of one run.
const STREAM_SOURCE_INIT: u64 = 1 << 60;
const STREAM_SOURCE_SHUFFLE: u64 = (1 << 60) + 1;
const STREAM_UQ: u64 = 2 << 60;
const STREAM_CELL: u64 = 3 << 60;

/// Guard against division by tiny references in point-wise error fields.
const POINTWISE_EPS: f64 = 1e-12;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn write_tensors(path: &Path, file: &TensorFile) -> Result<()> {
    write_file(path, &file.to_bytes()?)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| BenchError::Schema(format!("flushing csv: {e}")))
}

pub fn dataset_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.task_data_dir().join(format!("{name}.tlon"))
}

pub fn source_checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.task_out_dir().join("source.tlon")
}

fn cell_stem(mode: Mode, n_t: usize, seed: u64) -> String {
    format!("{mode}-nt{n_t}-seed{seed}")
}

fn finetune_checkpoint_path(cfg: &ExperimentConfig, mode: Mode, n_t: usize, seed: u64) -> PathBuf {
    cfg.task_out_dir().join("finetune").join(format!("{}.tlon", cell_stem(mode, n_t, seed)))
}

pub fn read_dataset(path: &Path, role: DatasetRole) -> Result<OperatorDataset> {
    if !path.exists() {
        return Err(BenchError::MissingDataset(path.to_path_buf()));
    }
    Ok(OperatorDataset::from_tensor_file(TensorFile::read(path)?, role)?)
}

fn load_model(path: &Path, arch: &ArchConfig) -> Result<DeepONet> {
    if !path.exists() {
        return Err(BenchError::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(model_from_checkpoint(TensorFile::read(path)?, arch)?)
}

/// Architecture for the run, checked against the task's data shapes.
fn resolve_arch(cfg: &ExperimentConfig, setup: &TaskSetup) -> Result<ArchConfig> {
    let arch = cfg.arch.clone().unwrap_or_else(|| setup.default_arch());
    let expected = setup.default_arch();
    if arch.branch_input != expected.branch_input || arch.coord_dim != expected.coord_dim {
        return Err(BenchError::Config(format!(
            "architecture expects branch input {:?} and {} coordinates, task provides {:?} and {}",
            arch.branch_input, arch.coord_dim, expected.branch_input, expected.coord_dim
        )));
    }
    arch.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(arch)
}

/// Files written by `gen`: `(name, role, domain, count)`.
fn dataset_plan(cfg: &ExperimentConfig, setup: &TaskSetup) -> Vec<(String, DatasetRole, Domain, usize)> {
    let d = &cfg.data;
    let mut plan = vec![
        ("source-train".to_string(), DatasetRole::SourceTrain, Domain::Source, d.n_source),
        ("source-test".to_string(), DatasetRole::SourceTest, Domain::Source, d.n_source_test),
        ("target-labeled".to_string(), DatasetRole::TargetLabeled, Domain::Target, cfg.max_n_t()),
        ("target-unlabeled".to_string(), DatasetRole::TargetUnlabeled, Domain::Target, d.n_unlabeled),
        ("target-test".to_string(), DatasetRole::TargetTest, Domain::Target, d.n_target_test),
    ];
    for k in 1..=setup.ood_count() {
        plan.push((format!("ood-{k}"), DatasetRole::Ood, Domain::Ood(k), d.n_ood));
    }
    plan.retain(|p| p.3 > 0);
    plan
}

#[derive(Debug, Clone, Serialize)]
pub struct GenSummary {
    pub files: Vec<PathBuf>,
}

/// Generates every dataset of the task into `paths.data_dir/<task>/`.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<GenSummary> {
    let setup = TaskSetup::new(cfg.task, &cfg.data)?;
    let pool = worker_pool(cfg)?;
    let mut files = Vec::new();
    for (name, role, domain, n) in dataset_plan(cfg, &setup) {
        let ds = pool.install(|| generate(&setup, domain, role, n, cfg.seed))?;
        let path = dataset_path(cfg, &name);
        write_tensors(&path, &ds.to_tensor_file())?;
        let meta = json!({
            "task": cfg.task,
            "role": role,
            "samples": n,
            "seed": cfg.seed,
            "energy_fraction": cfg.data.energy_fraction,
            "branch_shape": ds.branch_inputs.shape(),
            "coords_shape": ds.coords.shape(),
            "generator": setup.describe(domain),
            "git_describe": GIT_DESCRIBE,
            "version": env!("CARGO_PKG_VERSION"),
        });
        write_json(&path.with_extension("json"), &meta)?;
        files.push(path);
    }
    Ok(GenSummary { files })
}

#[derive(Debug, Clone, Serialize)]
pub struct SourceSummary {
    pub checkpoint: PathBuf,
    pub final_loss: f64,
    pub test_rel_l2: f64,
    pub seconds_per_epoch: f64,
    pub trainable_scalars: usize,
}

/// Trains the source model; writes the checkpoint, its architecture and a
/// per-epoch loss history.
pub fn cmd_train_source(cfg: &ExperimentConfig) -> Result<SourceSummary> {
    let setup = TaskSetup::new(cfg.task, &cfg.data)?;
    let arch = resolve_arch(cfg, &setup)?;
    let train = read_dataset(&dataset_path(cfg, "source-train"), DatasetRole::SourceTrain)?;
    let test = read_dataset(&dataset_path(cfg, "source-test"), DatasetRole::SourceTest)?;
    let mut model = init_model(&arch, &mut RngStream::derive(cfg.seed, STREAM_SOURCE_INIT))?;
    let start = Instant::now();
    let history = train_source(&mut model, &train, &cfg.train, &mut RngStream::derive(cfg.seed, STREAM_SOURCE_SHUFFLE))?;
    let seconds = start.elapsed().as_secs_f64();
    let test_rel_l2 = evaluate(&model, &test)?;

    let out = cfg.task_out_dir();
    let checkpoint = source_checkpoint_path(cfg);
    write_tensors(&checkpoint, &checkpoint_file(&model))?;
    write_json(&out.join("arch.json"), &arch)?;
    let rows = history.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), l.to_string()]);
    write_file(&out.join("source_history.csv"), &csv_bytes(&["epoch", "loss"], rows)?)?;
    Ok(SourceSummary {
        checkpoint,
        final_loss: history.last().copied().unwrap_or(f64::NAN),
        test_rel_l2,
        seconds_per_epoch: seconds / cfg.train.epochs.max(1) as f64,
        trainable_scalars: model.num_scalars(),
    })
}

/// Result of one sweep cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellOutcome {
    pub mode: Mode,
    pub n_t: usize,
    pub seed: u64,
    pub rel_l2: f64,
    pub seconds: f64,
    pub seconds_per_epoch: f64,
    pub trainable_scalars: usize,
    pub total_scalars: usize,
    pub lambda2: Vec<f64>,
    #[serde(skip)]
    pub l_r: Vec<f64>,
    #[serde(skip)]
    pub l_ceod: Vec<f64>,
    #[serde(skip)]
    model: Option<DeepONet>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneSummary {
    pub report: PathBuf,
    pub rows: Vec<ReportRow>,
    pub cells: Vec<CellOutcome>,
}

struct SweepData {
    labeled: OperatorDataset,
    unlabeled: Option<OperatorDataset>,
    test: OperatorDataset,
}

fn cell_stream(seed: u64, mode: Mode, n_t: usize) -> RngStream {
    RngStream::derive(seed, STREAM_CELL | ((mode as u64) << 32) | n_t as u64)
}

fn run_cell(cfg: &ExperimentConfig, arch: &ArchConfig, source: &DeepONet, data: &SweepData, mode: Mode, n_t: usize, seed: u64) -> Result<CellOutcome> {
    let mut rng = cell_stream(seed, mode, n_t);
    let mut model = if mode.starts_from_source() { transfer_params(source, arch)? } else { init_model(arch, &mut rng)? };
    let policy = mode.policy().expect("fine-tuning modes have a policy");
    let mask = build_freeze_mask(&model, policy)?;
    let fcfg = FinetuneConfig { hybrid: mode.hybrid(&cfg.finetune.hybrid), ..cfg.finetune.clone() };
    let rows: Vec<usize> = (0..n_t).collect();
    let labeled = data.labeled.subset(&rows, DatasetRole::TargetLabeled)?;
    let unlabeled = if fcfg.hybrid.uses_ceod() { data.unlabeled.as_ref() } else { None };
    let start = Instant::now();
    let history = finetune(&mut model, &labeled, unlabeled, &mask, &fcfg, &mut rng)?;
    let seconds = start.elapsed().as_secs_f64();
    let rel_l2 = evaluate(&model, &data.test)?;
    let epochs = history.epoch_seconds.len().max(1) as f64;
    Ok(CellOutcome {
        mode,
        n_t,
        seed,
        rel_l2,
        seconds,
        seconds_per_epoch: history.epoch_seconds.iter().sum::<f64>() / epochs,
        trainable_scalars: mask.trainable_scalars(&model),
        total_scalars: model.num_scalars(),
        lambda2: history.lambda2,
        l_r: history.l_r,
        l_ceod: history.l_ceod,
        model: Some(model),
    })
}

/// Prediction, reference and point-wise relative error of the first test
/// samples.
fn field_dump(model: &DeepONet, test: &OperatorDataset, samples: usize) -> Result<(TensorFile, Vec<usize>)> {
    let ids: Vec<usize> = (0..samples.min(test.len())).collect();
    let subset = test.subset(&ids, DatasetRole::TargetTest)?;
    let pred = model.predict(&subset.branch_inputs, &subset.coords)?;
    let reference = subset.outputs()?.clone();
    let err: Vec<f64> =
        pred.data().iter().zip(reference.data()).map(|(p, y)| ((p - y) / y.abs().max(POINTWISE_EPS)).abs()).collect();
    let err = Tensor::new(pred.shape().to_vec(), err)?;
    let mut f = TensorFile::new();
    f.push("input", subset.branch_inputs);
    f.push("reference", reference);
    f.push("prediction", pred);
    f.push("pointwise_error", err);
    f.push("coords", subset.coords);
    Ok((f, ids))
}

fn worker_pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count()?)
        .build()
        .map_err(|e| BenchError::Config(format!("cannot start worker pool: {e}")))
}

/// Runs the `n_t × seeds × modes` sweep from the source checkpoint and
/// writes checkpoints, histories, field dumps and the report.
pub fn cmd_finetune(cfg: &ExperimentConfig) -> Result<FinetuneSummary> {
    let setup = TaskSetup::new(cfg.task, &cfg.data)?;
    let arch = resolve_arch(cfg, &setup)?;
    let source = load_model(&source_checkpoint_path(cfg), &arch)?;
    let labeled = read_dataset(&dataset_path(cfg, "target-labeled"), DatasetRole::TargetLabeled)?;
    if labeled.len() < cfg.max_n_t() {
        return Err(BenchError::Config(format!(
            "n_t up to {} requested but the labeled target set has {} samples (rerun gen)",
            cfg.max_n_t(),
            labeled.len()
        )));
    }
    let needs_pool = cfg.modes.iter().any(|m| m.hybrid(&cfg.finetune.hybrid).uses_ceod());
    let unlabeled = if needs_pool {
        Some(read_dataset(&dataset_path(cfg, "target-unlabeled"), DatasetRole::TargetUnlabeled)?)
    } else {
        None
    };
    let test = read_dataset(&dataset_path(cfg, "target-test"), DatasetRole::TargetTest)?;
    let data = SweepData { labeled, unlabeled, test };

    let mut n_ts = cfg.n_t.clone();
    n_ts.sort_unstable();
    let mut modes = cfg.modes.clone();
    modes.sort_unstable();
    let cells: Vec<(Mode, usize, u64)> = modes
        .iter()
        .filter(|m| **m != Mode::Source)
        .flat_map(|&m| n_ts.iter().flat_map(move |&n| cfg.seeds.iter().map(move |&s| (m, n, s))))
        .collect();
    let pool = worker_pool(cfg)?;
    let mut outcomes: Vec<CellOutcome> = pool.install(|| {
        cells.par_iter().map(|&(m, n, s)| run_cell(cfg, &arch, &source, &data, m, n, s)).collect::<Result<Vec<_>>>()
    })?;

    let out = cfg.task_out_dir();
    let first_seed = cfg.seeds[0];
    let mut manifest = Vec::new();
    for c in &mut outcomes {
        let model = c.model.take().expect("fresh outcome holds its model");
        write_tensors(&finetune_checkpoint_path(cfg, c.mode, c.n_t, c.seed), &checkpoint_file(&model))?;
        let rows = (0..c.l_r.len()).map(|e| {
            vec![(e + 1).to_string(), c.l_r[e].to_string(), c.l_ceod[e].to_string(), c.lambda2[e].to_string()]
        });
        let hist = out.join("finetune").join(format!("{}.csv", cell_stem(c.mode, c.n_t, c.seed)));
        write_file(&hist, &csv_bytes(&["epoch", "l_r", "l_ceod", "lambda2"], rows)?)?;
        if c.seed == first_seed && cfg.dump.samples > 0 {
            let (file, ids) = field_dump(&model, &data.test, cfg.dump.samples)?;
            let name = format!("{}-nt{}.tlon", c.mode, c.n_t);
            write_tensors(&out.join("fields").join(&name), &file)?;
            manifest.push(json!({
                "file": name,
                "mode": c.mode,
                "n_t": c.n_t,
                "seed": c.seed,
                "sample_ids": ids,
                "tensors": file.tensors.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
            }));
        }
    }

    let mut rows = Vec::new();
    let mut timing_rows = Vec::new();
    if modes.contains(&Mode::Source) {
        let err = evaluate(&source, &data.test)?;
        let r = aggregate_seeds(cfg.task.as_str(), Mode::Source.as_str(), 0, &[(cfg.seed, err)], 0.0)?;
        rows.push(r.row());
        if cfg.dump.samples > 0 {
            let (file, ids) = field_dump(&source, &data.test, cfg.dump.samples)?;
            let name = "source-nt0.tlon".to_string();
            write_tensors(&out.join("fields").join(&name), &file)?;
            manifest.insert(0, json!({
                "file": name, "mode": Mode::Source, "n_t": 0, "seed": cfg.seed, "sample_ids": ids,
                "tensors": file.tensors.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
            }));
        }
    }
    for &m in modes.iter().filter(|m| **m != Mode::Source) {
        for &n in &n_ts {
            let group: Vec<&CellOutcome> = outcomes.iter().filter(|c| c.mode == m && c.n_t == n).collect();
            let runs: Vec<(u64, f64)> = group.iter().map(|c| (c.seed, c.rel_l2)).collect();
            let seconds = group.iter().map(|c| c.seconds).sum::<f64>() / group.len() as f64;
            let reported = if cfg.report.wall_clock { seconds } else { 0.0 };
            rows.push(aggregate_seeds(cfg.task.as_str(), m.as_str(), n, &runs, reported)?.row());
            for c in group {
                timing_rows.push(vec![
                    cfg.task.to_string(),
                    m.to_string(),
                    n.to_string(),
                    c.seed.to_string(),
                    c.seconds.to_string(),
                    c.seconds_per_epoch.to_string(),
                ]);
            }
        }
    }
    let rows = merge_reports(vec![rows])?;
    let report = out.join("report.csv");
    write_file(&report, &write_report(&rows)?)?;
    write_file(
        &out.join("timings.csv"),
        &csv_bytes(&["task", "mode", "n_t", "seed", "seconds", "seconds_per_epoch"], timing_rows)?,
    )?;
    write_json(&out.join("fields").join("manifest.json"), &json!({ "task": cfg.task, "entries": manifest }))?;
    Ok(FinetuneSummary { report, rows, cells: outcomes })
}

/// Mean per-sample relative L2 of a checkpoint on a labeled dataset;
/// defaults to the source model on the target test set.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, data: Option<&Path>) -> Result<f64> {
    let setup = TaskSetup::new(cfg.task, &cfg.data)?;
    let arch = resolve_arch(cfg, &setup)?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| source_checkpoint_path(cfg));
    let model = load_model(&ckpt, &arch)?;
    let data_path = data.map(Path::to_path_buf).unwrap_or_else(|| dataset_path(cfg, "target-test"));
    let ds = read_dataset(&data_path, DatasetRole::TargetTest)?;
    Ok(evaluate(&model, &ds)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct UqSummary {
    pub checkpoint: PathBuf,
    pub samples: usize,
    /// `‖mean_surrogate − mean_solver‖ / ‖mean_solver‖`.
    pub mean_rel_l2: f64,
    pub variance_rel_l2: f64,
    pub points: Vec<UqPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct UqPoint {
    pub index: usize,
    pub coords: Vec<f64>,
    pub surrogate_mean: f64,
    pub surrogate_variance: f64,
    pub solver_mean: f64,
    pub solver_variance: f64,
}

/// Output rows nearest to the points one and two thirds of the way along
/// the diagonal of the coordinates' bounding box.
fn default_points(coords: &Tensor) -> Vec<usize> {
    let (d, k) = (coords.shape()[0], coords.shape()[1]);
    let rows: Vec<&[f64]> = coords.data().chunks(k).collect();
    let lo: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    [1.0 / 3.0, 2.0 / 3.0]
        .iter()
        .map(|&s| {
            let target: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| a + s * (b - a)).collect();
            let dist = |r: &[f64]| r.iter().zip(&target).map(|(x, t)| (x - t) * (x - t)).sum::<f64>();
            (0..d).min_by(|&a, &b| dist(rows[a]).total_cmp(&dist(rows[b]))).expect("coordinates are non-empty")
        })
        .collect()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// Monte Carlo moments of the surrogate and of the reference solver over
/// the same target-domain inputs. Defaults to the transfer-mode checkpoint
/// with the largest `n_t` and the first seed.
pub fn cmd_uq(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<UqSummary> {
    let setup = TaskSetup::new(cfg.task, &cfg.data)?;
    let arch = resolve_arch(cfg, &setup)?;
    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| finetune_checkpoint_path(cfg, Mode::Transfer, cfg.max_n_t(), cfg.seeds[0]));
    let model = load_model(&ckpt, &arch)?;
    let n = cfg.uq.samples;
    let inputs: Vec<Vec<f64>> =
        (0..n).map(|i| setup.sample_input(Domain::Target, &mut RngStream::derive(cfg.seed, STREAM_UQ | i as u64))).collect();
    let coords = setup.coords(Domain::Target);
    let d = coords.shape()[0];
    let points = if cfg.uq.points.is_empty() { default_points(&coords) } else { cfg.uq.points.clone() };

    let mut draws = inputs.iter();
    let surrogate = uq_moments(
        &model,
        |_| draws.next().expect("one input per sample").clone(),
        &coords,
        n,
        &mut RngStream::new(cfg.seed),
        &points,
    )?;
    let solved: Vec<Vec<f64>> = worker_pool(cfg)?.install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(i, x)| setup.solve(Domain::Target, x).map_err(|source| BenchError::Sample { index: i, source }))
            .collect::<Result<_>>()
    })?;
    let solved = Tensor::new(vec![n, d], solved.into_iter().flatten().collect())?;
    let solver = sample_moments(&solved, &points)?;
    // Per-sample surrogate errors on the same draws, for context.
    let mut shape = vec![n];
    shape.extend(setup.branch_shape());
    let x = Tensor::new(shape, inputs.into_iter().flatten().collect())?;
    let sample_errs = per_sample_rel_l2(&model.predict(&x, &coords)?, &solved)?;

    let summary = UqSummary {
        checkpoint: ckpt,
        samples: n,
        mean_rel_l2: rel_l2(&surrogate.mean, &solver.mean),
        variance_rel_l2: rel_l2(&surrogate.variance, &solver.variance),
        points: points
            .iter()
            .enumerate()
            .map(|(k, &i)| UqPoint {
                index: i,
                coords: coords.data()[i * coords.shape()[1]..(i + 1) * coords.shape()[1]].to_vec(),
                surrogate_mean: surrogate.points[k].mean,
                surrogate_variance: surrogate.points[k].variance,
                solver_mean: solver.points[k].mean,
                solver_variance: solver.points[k].variance,
            })
            .collect(),
    };
    let out = cfg.task_out_dir();
    let mut f = TensorFile::new();
    let field = |v: Vec<f64>| Tensor::new(vec![d], v);
    f.push("surrogate_mean", field(surrogate.mean)?);
    f.push("surrogate_variance", field(surrogate.variance)?);
    f.push("solver_mean", field(solver.mean)?);
    f.push("solver_variance", field(solver.variance)?);
    f.push("coords", coords);
    write_tensors(&out.join("uq.tlon"), &f)?;
    let mean_err = sample_errs.iter().sum::<f64>() / n as f64;
    let mut doc = serde_json::to_value(&summary)?;
    doc["sample_mean_rel_l2"] = Value::from(mean_err);
    write_json(&out.join("uq.json"), &doc)?;
    Ok(summary)
}

/// Merges report CSVs; writes the merged CSV and optionally a markdown
/// table.
pub fn cmd_report(inputs: &[PathBuf], out: &Path, markdown: Option<&Path>) -> Result<Vec<ReportRow>> {
    if inputs.is_empty() {
        return Err(BenchError::Config("report needs at least one CSV".into()));
    }
    let reports = inputs.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
    let rows = merge_reports(reports)?;
    write_file(out, &write_report(&rows)?)?;
    if let Some(md) = markdown {
        write_file(md, render_markdown(&rows).as_bytes())?;
    }
    Ok(rows)
}
