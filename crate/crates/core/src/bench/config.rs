use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BenchError, Result};
use crate::deeponet::{ArchConfig, TrainConfig};
use crate::transfer::{FinetuneConfig, FreezePolicy, HybridLossConfig};

/// Transfer scenario: source and target problem of one benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "darcy-tl1")]
    DarcyTl1,
    #[serde(rename = "darcy-tl2")]
    DarcyTl2,
    #[serde(rename = "darcy-tl3")]
    DarcyTl3,
    #[serde(rename = "darcy-tl4")]
    DarcyTl4,
    #[serde(rename = "brusselator-tl7")]
    BrusselatorTl7,
    #[serde(rename = "brusselator-tl8")]
    BrusselatorTl8,
    #[serde(rename = "burgers-tl13")]
    BurgersTl13,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::DarcyTl1,
        Task::DarcyTl2,
        Task::DarcyTl3,
        Task::DarcyTl4,
        Task::BrusselatorTl7,
        Task::BrusselatorTl8,
        Task::BurgersTl13,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::DarcyTl1 => "darcy-tl1",
            Task::DarcyTl2 => "darcy-tl2",
            Task::DarcyTl3 => "darcy-tl3",
            Task::DarcyTl4 => "darcy-tl4",
            Task::BrusselatorTl7 => "brusselator-tl7",
            Task::BrusselatorTl8 => "brusselator-tl8",
            Task::BurgersTl13 => "burgers-tl13",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown task {s:?}")))
    }
}

/// How a target model is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Source model applied to the target without any target data.
    Source,
    /// Random initialization, everything trainable, plain relative loss.
    Scratch,
    /// Transferred parameters, default freeze policy, hybrid loss.
    Transfer,
    /// As `Transfer` without the discrepancy term.
    TransferNoCeod,
    /// Transferred parameters with only the last layer of each net trainable.
    LastLayerOnly,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Source, Mode::Scratch, Mode::Transfer, Mode::TransferNoCeod, Mode::LastLayerOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Source => "source",
            Mode::Scratch => "scratch",
            Mode::Transfer => "transfer",
            Mode::TransferNoCeod => "transfer-no-ceod",
            Mode::LastLayerOnly => "last-layer-only",
        }
    }

    /// Freeze policy, or `None` when no fine-tuning happens.
    pub fn policy(self) -> Option<FreezePolicy> {
        match self {
            Mode::Source => None,
            Mode::Scratch => Some(FreezePolicy::All),
            Mode::Transfer | Mode::TransferNoCeod => Some(FreezePolicy::PaperDefault),
            Mode::LastLayerOnly => Some(FreezePolicy::LastLayerOnly),
        }
    }

    /// Loss settings for this mode derived from the configured ones.
    pub fn hybrid(self, base: &HybridLossConfig) -> HybridLossConfig {
        match self {
            Mode::Transfer | Mode::LastLayerOnly => base.clone(),
            Mode::Source | Mode::Scratch | Mode::TransferNoCeod => {
                HybridLossConfig { lambda2_init: 0.0, ..base.clone() }
            }
        }
    }

    pub fn starts_from_source(self) -> bool {
        !matches!(self, Mode::Scratch)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_source: usize,
    pub n_source_test: usize,
    pub n_unlabeled: usize,
    pub n_target_test: usize,
    /// Per out-of-distribution file; only tasks with OOD variants use it.
    pub n_ood: usize,
    /// Grid side for 2-D tasks; `None` picks the task default.
    pub grid: Option<usize>,
    pub energy_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_source: 500,
            n_source_test: 100,
            n_unlabeled: 200,
            n_target_test: 100,
            n_ood: 100,
            grid: None,
            energy_fraction: crate::field::DEFAULT_ENERGY_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqConfig {
    pub samples: usize,
    /// Output indices summarized individually; empty picks two.
    pub points: Vec<usize>,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self { samples: 500, points: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { data_dir: PathBuf::from("data"), out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Write measured seconds into the report CSV. Off by default so that
    /// reports are byte-reproducible; timings always go to `timings.csv`.
    pub wall_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumpConfig {
    /// Test samples written per dumped sweep cell (first seed only).
    pub samples: usize,
}

impl Default for DumpConfig {
    fn default() -> Self {
        Self { samples: 3 }
    }
}

/// Everything one experiment needs; serialized as a single JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Seed for data generation and source training.
    pub seed: u64,
    pub modes: Vec<Mode>,
    pub n_t: Vec<usize>,
    /// Fine-tuning seeds of the sweep.
    pub seeds: Vec<u64>,
    /// Replaces the task's default architecture.
    pub arch: Option<ArchConfig>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub uq: UqConfig,
    pub dump: DumpConfig,
    pub report: ReportConfig,
    pub paths: PathsConfig,
    /// Sweep worker threads; `TLON_WORKERS` overrides, `None` uses all cores.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::DarcyTl1,
            seed: 0,
            modes: vec![Mode::Source, Mode::Scratch, Mode::Transfer, Mode::TransferNoCeod, Mode::LastLayerOnly],
            n_t: vec![5, 20, 50, 100, 250],
            seeds: vec![0, 1, 2, 3, 4],
            arch: None,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
            uq: UqConfig::default(),
            dump: DumpConfig::default(),
            report: ReportConfig::default(),
            paths: PathsConfig::default(),
            workers: None,
        }
    }
}

/// Sets `root[path] = value`, creating objects along a dotted path.
fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(BenchError::Config(format!("malformed key {key:?}")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => return Err(BenchError::Config(format!("{key:?}: {:?} is not an object", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last key part")
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses one `key=value` override; the value is JSON when it parses as
/// JSON and a plain string otherwise.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| BenchError::Config(format!("override {s:?} is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl ExperimentConfig {
    /// Defaults, then the optional JSON file, then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default()).expect("default config serializes");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| BenchError::io(p, e))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", p.display())))?;
            merge(&mut value, file);
        }
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_dotted(&mut value, &k, v)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.n_t.is_empty() || self.n_t.contains(&0) {
            return bad(format!("n_t values must be at least 1, got {:?}", self.n_t));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() || seeds.is_empty() {
            return bad(format!("seeds must be non-empty and distinct, got {:?}", self.seeds));
        }
        let mut modes = self.modes.clone();
        modes.sort_unstable();
        modes.dedup();
        if modes.len() != self.modes.len() || modes.is_empty() {
            return bad(format!("modes must be non-empty and distinct, got {:?}", self.modes));
        }
        let d = &self.data;
        if d.n_source == 0 || d.n_source_test == 0 || d.n_target_test == 0 {
            return bad("dataset sizes must be positive".into());
        }
        if self.finetune.hybrid.lambda2_init > 0.0 && d.n_unlabeled < 2 {
            return bad("the discrepancy term needs at least 2 unlabeled samples".into());
        }
        if self.uq.samples < 2 {
            return bad("uq.samples must be at least 2".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        self.finetune.hybrid.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if let Some(a) = &self.arch {
            a.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn max_n_t(&self) -> usize {
        self.n_t.iter().copied().max().unwrap_or(0)
    }

    /// Worker count after the `TLON_WORKERS` override.
    pub fn worker_count(&self) -> Result<usize> {
        match std::env::var("TLON_WORKERS") {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(BenchError::Config(format!("TLON_WORKERS={v:?} is not a positive integer"))),
            },
            Err(_) => Ok(self.workers.unwrap_or_else(rayon::current_num_threads)),
        }
    }

    pub fn task_data_dir(&self) -> PathBuf {
        self.paths.data_dir.join(self.task.as_str())
    }

    pub fn task_out_dir(&self) -> PathBuf {
        self.paths.out_dir.join(self.task.as_str())
    }
}
