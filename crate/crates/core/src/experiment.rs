//! Experiment configuration, single runs and parameter sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::SimReport;
use crate::predictor::{MlpModel, Predictor, PredictorError, PredictorMode};
use crate::sim::{simulate_with, Capacity, PolicyKind, SimConfig, SimError};
use crate::types::PerType;
use crate::workload::{generate, load_trace, Trace, TraceFormat, WorkloadError, WorkloadSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Everything needed to reproduce one simulation run.
///
/// The workload comes either from a trace file or from a generator spec
/// (`preset`, optionally replaced wholesale by `workload`); the scalar
/// overrides apply on top of the spec.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub workload: Option<WorkloadSpec>,
    pub trace: Option<PathBuf>,
    /// Seeds both the generator and the simulator when set.
    pub seed: Option<u64>,
    pub num_sessions: Option<usize>,
    pub inject_interval: Option<f64>,
    /// Predictor weights, required when `sim.predictor_mode` is `mlp`.
    pub model: Option<PathBuf>,
    pub sim: SimConfig,
}

impl ExperimentConfig {
    /// Reads a TOML or JSON config, chosen by file extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |e: String| ExperimentError::Config(format!("{}: {e}", path.display()));
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| bad(e.to_string())),
            _ => toml::from_str(&text).map_err(|e| bad(e.to_string())),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trace.is_some() && (self.preset.is_some() || self.workload.is_some()) {
            return Err(ExperimentError::Config("give either a trace file or a workload spec, not both".into()));
        }
        if self.trace.is_some() && (self.num_sessions.is_some() || self.inject_interval.is_some()) {
            return Err(ExperimentError::Config("num_sessions and inject_interval only apply to generated workloads".into()));
        }
        if self.sim.predictor_mode == PredictorMode::Mlp && self.model.is_none() {
            return Err(ExperimentError::Config("predictor mode `mlp` needs a model file".into()));
        }
        self.sim_config().validate()?;
        Ok(())
    }

    /// The generator spec with overrides applied; `None` for trace files.
    pub fn workload_spec(&self) -> Result<Option<WorkloadSpec>> {
        if self.trace.is_some() {
            return Ok(None);
        }
        let mut spec = match (&self.workload, &self.preset) {
            (Some(w), _) => w.clone(),
            (None, Some(p)) => WorkloadSpec::preset(p)?,
            (None, None) => WorkloadSpec::preset("balanced")?,
        };
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(n) = self.num_sessions {
            spec.num_sessions = n;
        }
        if let Some(i) = self.inject_interval {
            spec.inject_interval = i;
        }
        spec.validate()?;
        Ok(Some(spec))
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut cfg = self.sim.clone();
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg
    }

    pub fn load_trace(&self) -> Result<Trace> {
        match (&self.trace, self.workload_spec()?) {
            (Some(path), _) => Ok(load_trace(path, TraceFormat::ConversationJsonl)?),
            (None, Some(spec)) => Ok(generate(&spec)?),
            (None, None) => unreachable!("workload_spec is Some without a trace"),
        }
    }

    pub fn predictor(&self) -> Result<Predictor> {
        let mode = self.sim.predictor_mode;
        match (&self.model, mode) {
            (Some(path), PredictorMode::Mlp) => Ok(Predictor::with_model(MlpModel::load(path)?)),
            _ => Ok(Predictor::new(mode)),
        }
    }

    pub fn run(&self) -> Result<SimReport> {
        self.validate()?;
        let trace = self.load_trace()?;
        self.run_on(&trace)
    }

    pub fn run_on(&self, trace: &Trace) -> Result<SimReport> {
        Ok(simulate_with(trace, &self.sim_config(), &self.predictor()?)?)
    }
}

/// Sweepable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Policy,
    Preset,
    Seed,
    NumSessions,
    InjectInterval,
    CapacityFraction,
    CapacityBlocks,
    BlockSize,
    PredictorMode,
    /// Miss coefficient of the additive token-weight rule.
    MissCoef,
    /// Reuse coefficient of the additive token-weight rule.
    ReuseCoef,
    TokenWeights,
    QueueWeights,
    LognormalLearning,
    DecayLearning,
}

impl Param {
    pub const ALL: [Param; 15] = [
        Param::Policy,
        Param::Preset,
        Param::Seed,
        Param::NumSessions,
        Param::InjectInterval,
        Param::CapacityFraction,
        Param::CapacityBlocks,
        Param::BlockSize,
        Param::PredictorMode,
        Param::MissCoef,
        Param::ReuseCoef,
        Param::TokenWeights,
        Param::QueueWeights,
        Param::LognormalLearning,
        Param::DecayLearning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Param::Policy => "policy",
            Param::Preset => "preset",
            Param::Seed => "seed",
            Param::NumSessions => "num_sessions",
            Param::InjectInterval => "inject_interval",
            Param::CapacityFraction => "capacity_fraction",
            Param::CapacityBlocks => "capacity_blocks",
            Param::BlockSize => "block_size",
            Param::PredictorMode => "predictor_mode",
            Param::MissCoef => "miss_coef",
            Param::ReuseCoef => "reuse_coef",
            Param::TokenWeights => "token_weights",
            Param::QueueWeights => "queue_weights",
            Param::LognormalLearning => "lognormal_learning",
            Param::DecayLearning => "decay_learning",
        }
    }

    /// Sets this parameter on `cfg` from its textual value.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(p: Param, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| ExperimentError::Config(format!("bad value `{v}` for {}", p.as_str())))
        }
        let v = value.trim();
        match self {
            Param::Policy => cfg.sim.policy = v.parse().map_err(ExperimentError::Config)?,
            Param::Preset => {
                cfg.preset = Some(v.to_string());
                cfg.workload = None;
            }
            Param::Seed => cfg.seed = Some(num(self, v)?),
            Param::NumSessions => cfg.num_sessions = Some(num(self, v)?),
            Param::InjectInterval => cfg.inject_interval = Some(num(self, v)?),
            Param::CapacityFraction => cfg.sim.capacity = Capacity::Fraction(num(self, v)?),
            Param::CapacityBlocks => cfg.sim.capacity = Capacity::Blocks(num(self, v)?),
            Param::BlockSize => cfg.sim.block_size = num(self, v)?,
            Param::PredictorMode => cfg.sim.predictor_mode = v.parse().map_err(ExperimentError::Config)?,
            Param::MissCoef => cfg.sim.learner.miss_coef = num(self, v)?,
            Param::ReuseCoef => cfg.sim.learner.reuse_coef = num(self, v)?,
            Param::TokenWeights => cfg.sim.learner.enable_token_weights = num(self, v)?,
            Param::QueueWeights => cfg.sim.learner.enable_queue_weights = num(self, v)?,
            Param::LognormalLearning => cfg.sim.learner.enable_lognormal_learning = num(self, v)?,
            Param::DecayLearning => cfg.sim.learner.enable_decay_learning = num(self, v)?,
        }
        Ok(())
    }
}

impl std::fmt::Display for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Param {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "a" => return Ok(Param::MissCoef),
            "b" => return Ok(Param::ReuseCoef),
            _ => {}
        }
        Param::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = Param::ALL.iter().map(|p| p.as_str()).collect();
            format!("unknown sweep parameter `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// One swept parameter and its values, written `param=v1,v2,...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub param: Param,
    pub values: Vec<String>,
}

impl Axis {
    pub fn new(param: Param, values: impl IntoIterator<Item = impl ToString>) -> Self {
        Axis { param, values: values.into_iter().map(|v| v.to_string()).collect() }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, vals) = s.split_once('=').ok_or_else(|| format!("axis `{s}` is not of the form param=v1,v2"))?;
        let values: Vec<String> = vals.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(format!("axis `{name}` has no values"));
        }
        Ok(Axis { param: name.trim().parse()?, values })
    }
}

/// Cartesian product of the axes, first axis outermost.
pub fn grid(axes: &[Axis]) -> Vec<Vec<(Param, String)>> {
    axes.iter().fold(vec![Vec::new()], |cells, axis| {
        cells
            .iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((axis.param, v.clone()));
                    c
                })
            })
            .collect()
    })
}

/// The (a, b) token-weight sensitivity grid: 6 miss × 5 reuse coefficients.
pub fn token_weight_grid() -> [Axis; 2] {
    [Axis::new(Param::MissCoef, [0.5, 1.0, 2.0, 5.0, 10.0, 20.0]), Axis::new(Param::ReuseCoef, [0.5, 1.0, 2.0, 5.0, 10.0])]
}

/// The request injection intervals swept in load experiments, in seconds.
pub const INJECT_INTERVALS: [f64; 4] = [0.02, 0.03, 0.05, 0.08];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub settings: Vec<(Param, String)>,
    pub policy: String,
    pub workload: String,
    pub num_requests: usize,
    pub capacity_blocks: usize,
    pub hit_ratio: f64,
    pub total_ttft_s: f64,
    pub mean_ttft_s: f64,
    pub evictions: u64,
    pub token_weights: Option<PerType<f64>>,
    /// Learned token types by descending weight, `>`-separated.
    pub weight_ordering: Option<String>,
    pub error: Option<String>,
}

impl SweepRow {
    fn from_report(cell: usize, settings: Vec<(Param, String)>, r: &SimReport) -> Self {
        SweepRow {
            cell,
            settings,
            policy: r.policy.clone(),
            workload: r.workload.clone(),
            num_requests: r.num_requests,
            capacity_blocks: r.capacity_blocks,
            hit_ratio: r.overall_hit_ratio,
            total_ttft_s: r.total_ttft_s,
            mean_ttft_s: r.mean_ttft_s,
            evictions: r.evictions,
            token_weights: r.learned_state.map(|s| s.token_weights),
            weight_ordering: r
                .learned_state
                .map(|s| s.weight_ordering().iter().map(|t| t.as_str()).collect::<Vec<_>>().join(">")),
            error: None,
        }
    }

    fn failed(cell: usize, settings: Vec<(Param, String)>, policy: PolicyKind, e: &ExperimentError) -> Self {
        SweepRow {
            cell,
            settings,
            policy: policy.as_str().to_string(),
            workload: String::new(),
            num_requests: 0,
            capacity_blocks: 0,
            hit_ratio: f64::NAN,
            total_ttft_s: f64::NAN,
            mean_ttft_s: f64::NAN,
            evictions: 0,
            token_weights: None,
            weight_ordering: None,
            error: Some(e.to_string()),
        }
    }
}

/// Runs one simulation per grid cell on `jobs` worker threads.
///
/// Cells sharing a workload share one generated trace. A failing cell yields
/// a row carrying the error; the other rows are unaffected. Rows come back
/// in grid order whatever the thread count.
pub fn run_sweep(base: &ExperimentConfig, axes: &[Axis], jobs: usize) -> Result<Vec<SweepRow>> {
    let cells: Vec<(Vec<(Param, String)>, Result<ExperimentConfig>)> = grid(axes)
        .into_iter()
        .map(|settings| {
            let mut cfg = base.clone();
            let applied = settings.iter().try_for_each(|(p, v)| p.apply(&mut cfg, v)).and_then(|_| cfg.validate());
            (settings, applied.map(|_| cfg))
        })
        .collect();

    // Traces keyed by their full source description.
    let mut keys: Vec<Option<String>> = Vec::with_capacity(cells.len());
    let mut traces: BTreeMap<String, std::result::Result<Trace, String>> = BTreeMap::new();
    for (_, cfg) in &cells {
        let key = match cfg {
            Ok(c) => match c.workload_spec() {
                Ok(spec) => Some(serde_json::to_string(&(spec, &c.trace)).expect("spec serializes")),
                Err(_) => None,
            },
            Err(_) => None,
        };
        if let (Some(k), Ok(c)) = (&key, cfg) {
            if !traces.contains_key(k) {
                traces.insert(k.clone(), c.load_trace().map_err(|e| e.to_string()));
            }
        }
        keys.push(key);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .zip(keys.par_iter())
            .enumerate()
            .map(|(i, ((settings, cfg), key))| {
                let run = || -> Result<SimReport> {
                    let cfg = cfg.as_ref().map_err(|e| ExperimentError::Config(e.to_string()))?;
                    let trace = match key.as_ref().and_then(|k| traces.get(k)) {
                        Some(Ok(t)) => t,
                        Some(Err(e)) => return Err(ExperimentError::Config(e.clone())),
                        None => return Err(ExperimentError::Config("workload could not be resolved".into())),
                    };
                    cfg.run_on(trace)
                };
                let policy = cfg.as_ref().map_or(base.sim.policy, |c| c.sim.policy);
                match run() {
                    Ok(r) => SweepRow::from_report(i, settings.clone(), &r),
                    Err(e) => SweepRow::failed(i, settings.clone(), policy, &e),
                }
            })
            .collect()
    });
    Ok(rows)
}

const SWEEP_COLUMNS: [&str; 10] = [
    "policy",
    "workload",
    "num_requests",
    "capacity_blocks",
    "hit_ratio",
    "total_ttft_s",
    "mean_ttft_s",
    "evictions",
    "weight_ordering",
    "error",
];

/// Sweep table as CSV: `cell`, one `sweep_<param>` column per swept parameter, the fixed
/// result columns, then one `w_<type>` column per learned token weight.
pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> std::io::Result<()> {
    let params: Vec<Param> = rows.first().map(|r| r.settings.iter().map(|s| s.0).collect()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| std::io::Error::other(e);
    let mut header: Vec<String> = vec!["cell".into()];
    header.extend(params.iter().map(|p| format!("sweep_{}", p.as_str())));
    header.extend(SWEEP_COLUMNS.iter().map(|c| c.to_string()));
    header.extend(crate::types::TokenType::ALL.iter().map(|t| format!("w_{}", t.as_str())));
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let mut rec: Vec<String> = vec![r.cell.to_string()];
        rec.extend(r.settings.iter().map(|s| s.1.clone()));
        rec.extend([
            r.policy.clone(),
            r.workload.clone(),
            r.num_requests.to_string(),
            r.capacity_blocks.to_string(),
            r.hit_ratio.to_string(),
            r.total_ttft_s.to_string(),
            r.mean_ttft_s.to_string(),
            r.evictions.to_string(),
            r.weight_ordering.clone().unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ]);
        for t in crate::types::TokenType::ALL {
            rec.push(r.token_weights.map(|tw| tw[t].to_string()).unwrap_or_default());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()
}

pub fn write_sweep_json(rows: &[SweepRow], mut out: impl Write) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, rows).map_err(std::io::Error::other)?;
    out.write_all(b"\n")
}
