use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use prefixsim::experiment::{
    run_sweep, token_weight_grid, write_sweep_csv, write_sweep_json, Axis, ExperimentConfig, Param, INJECT_INTERVALS,
};
use prefixsim::metrics::{ReportFormat, SimReport};
use prefixsim::predictor::{dataset_from_trace, MlpModel, PredictorMode, TrainConfig, FEATURE_NAMES};
use prefixsim::sim::{characterize, Capacity, PolicyKind};
use prefixsim::timing::{fit_comparison, threshold_sweep, Fitted};
use prefixsim::types::Style;
use prefixsim::workload::{reuse_probe, write_jsonl, ProbeSpec};

const SEED_ENV: &str = "PREFIXSIM_SEED";

/// Trace-driven simulator for block-based LLM prefix-cache eviction.
///
/// Configuration precedence is: command-line flags, then the --config file,
/// then built-in defaults. When no seed is given by flag or file, the
/// PREFIXSIM_SEED environment variable is used.
#[derive(Parser, Debug)]
#[command(name = "prefixsim", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Replay one workload against one policy and write the report.
    Simulate {
        #[command(flatten)]
        exp: ExpArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run one simulation per point of a parameter grid and write a table.
    ///
    /// Exits non-zero if any cell failed; the table still holds every row,
    /// with the failure in the `error` column.
    Sweep {
        #[command(flatten)]
        exp: ExpArgs,
        /// Swept parameter as `param=v1,v2,...`; repeat for a grid (first axis
        /// outermost). Parameters: policy, preset, seed, num_sessions,
        /// inject_interval, capacity_fraction, capacity_blocks, block_size,
        /// predictor_mode, miss_coef (a), reuse_coef (b), token_weights,
        /// queue_weights, lognormal_learning, decay_learning.
        #[arg(long = "axis", value_name = "PARAM=VALUES")]
        axes: Vec<Axis>,
        /// Add the 6×5 (miss_coef, reuse_coef) token-weight grid.
        #[arg(long)]
        weight_grid: bool,
        /// Add the request injection intervals 0.02, 0.03, 0.05 and 0.08 s.
        #[arg(long)]
        inject_grid: bool,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long, short = 'j')]
        jobs: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Measure reuse structure with an eviction-free cache.
    Characterize {
        #[command(flatten)]
        src: SourceArgs,
        /// Tokens per cache block.
        #[arg(long, default_value_t = 16)]
        block_size: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit inter-turn gap distributions and sweep minimum-gap thresholds.
    Fit {
        #[command(flatten)]
        src: SourceArgs,
        /// Only use gaps of this conversation style.
        #[arg(long, value_enum)]
        style: Option<StyleArg>,
        /// Minimum-gap thresholds in seconds.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.5, 1.0, 2.0, 3.0])]
        thresholds: Vec<f64>,
        /// CSV output; stdout when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Train the session-continuation predictor on a trace's first turns.
    TrainPredictor {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Hidden layer widths.
        #[arg(long, value_delimiter = ',', default_values_t = [256, 64])]
        hidden: Vec<usize>,
        /// Where to write the model JSON.
        #[arg(long)]
        model_out: PathBuf,
        /// Per-epoch loss/accuracy CSV; stdout when omitted.
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Emit a synthetic trace as JSONL.
    Generate {
        #[command(flatten)]
        src: SourceArgs,
        /// Emit the per-type reuse probe instead of a session workload.
        #[arg(long, conflicts_with_all = ["preset", "trace", "config"])]
        probe: bool,
        /// Requests in the probe trace.
        #[arg(long, default_value_t = 5000, requires = "probe")]
        probe_requests: usize,
        /// JSONL output; stdout when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

/// Where the workload comes from.
#[derive(Args, Debug, Clone, Default)]
struct SourceArgs {
    /// TOML or JSON experiment config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Synthetic workload preset: multi_turn_dominant, balanced,
    /// single_turn_dominant or tool_use.
    #[arg(long, conflicts_with = "trace")]
    preset: Option<String>,
    /// JSONL conversation trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Seed for generation and simulation.
    #[arg(long)]
    seed: Option<u64>,
    /// Sessions to generate.
    #[arg(long)]
    num_sessions: Option<usize>,
    /// Seconds between generated session starts.
    #[arg(long)]
    inject_interval: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
struct ExpArgs {
    #[command(flatten)]
    src: SourceArgs,
    /// lru, lfu, lpc_approx, saecache, token_weight_only or fixed_param_mq.
    #[arg(long)]
    policy: Option<PolicyKind>,
    /// Cache capacity as a fraction of the trace's working set.
    #[arg(long, conflicts_with = "capacity_blocks")]
    capacity_fraction: Option<f64>,
    /// Cache capacity in blocks.
    #[arg(long)]
    capacity_blocks: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    /// Continuation predictor: oracle, always_single, always_multi or mlp.
    #[arg(long)]
    predictor: Option<PredictorMode>,
    /// Trained predictor model (implies --predictor mlp).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Cache generated tokens as decode-phase blocks.
    #[arg(long)]
    cache_decode: Option<bool>,
    /// Miss coefficient `a` of the token-weight target.
    #[arg(long)]
    miss_coef: Option<f64>,
    /// Reuse coefficient `b` of the token-weight target.
    #[arg(long)]
    reuse_coef: Option<f64>,
    #[arg(long)]
    no_token_weights: bool,
    #[arg(long)]
    no_queue_weights: bool,
    #[arg(long)]
    no_lognormal_learning: bool,
    #[arg(long)]
    no_decay_learning: bool,
    /// Prefill seconds per uncached prompt token.
    #[arg(long)]
    prefill_cost: Option<f64>,
    /// Fixed seconds added to every request's TTFT.
    #[arg(long)]
    fixed_overhead: Option<f64>,
    /// Seconds added per eviction a request triggers.
    #[arg(long)]
    eviction_overhead: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
struct OutArgs {
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Output format; inferred from the output extension, else json.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum StyleArg {
    Chat,
    Agentic,
}

impl OutArgs {
    fn format(&self) -> ReportFormat {
        match self.format {
            Some(FormatArg::Json) => ReportFormat::Json,
            Some(FormatArg::Csv) => ReportFormat::Csv,
            None => match self.output.as_deref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
                Some("csv") => ReportFormat::Csv,
                _ => ReportFormat::Json,
            },
        }
    }
}

impl SourceArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.preset {
            cfg.preset = Some(p.clone());
            cfg.workload = None;
            cfg.trace = None;
        }
        if let Some(t) = &self.trace {
            cfg.trace = Some(t.clone());
            cfg.preset = None;
            cfg.workload = None;
        }
        cfg.seed = self.seed.or(cfg.seed);
        if cfg.seed.is_none() {
            if let Ok(v) = std::env::var(SEED_ENV) {
                cfg.seed = Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not an integer"))?);
            }
        }
        cfg.num_sessions = self.num_sessions.or(cfg.num_sessions);
        cfg.inject_interval = self.inject_interval.or(cfg.inject_interval);
        Ok(cfg)
    }
}

impl ExpArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.src.resolve()?;
        let sim = &mut cfg.sim;
        if let Some(p) = self.policy {
            sim.policy = p;
        }
        if let Some(f) = self.capacity_fraction {
            sim.capacity = Capacity::Fraction(f);
        }
        if let Some(b) = self.capacity_blocks {
            sim.capacity = Capacity::Blocks(b);
        }
        if let Some(b) = self.block_size {
            sim.block_size = b;
        }
        if let Some(m) = self.predictor {
            sim.predictor_mode = m;
        }
        if let Some(m) = &self.model {
            cfg.model = Some(m.clone());
            if self.predictor.is_none() {
                cfg.sim.predictor_mode = PredictorMode::Mlp;
            }
        }
        let sim = &mut cfg.sim;
        if let Some(d) = self.cache_decode {
            sim.cache_decode_blocks = d;
        }
        if let Some(a) = self.miss_coef {
            sim.learner.miss_coef = a;
        }
        if let Some(b) = self.reuse_coef {
            sim.learner.reuse_coef = b;
        }
        let l = &mut sim.learner;
        l.enable_token_weights &= !self.no_token_weights;
        l.enable_queue_weights &= !self.no_queue_weights;
        l.enable_lognormal_learning &= !self.no_lognormal_learning;
        l.enable_decay_learning &= !self.no_decay_learning;
        if let Some(c) = self.prefill_cost {
            sim.ttft.per_token_prefill_s = c;
        }
        if let Some(c) = self.fixed_overhead {
            sim.ttft.fixed_overhead_s = c;
        }
        if let Some(c) = self.eviction_overhead {
            sim.ttft.policy_overhead_per_eviction_s = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_report(report: &SimReport, out: &OutArgs) -> Result<()> {
    let mut w = open_out(out.output.as_deref())?;
    match out.format() {
        ReportFormat::Json => report.write_json(&mut w)?,
        ReportFormat::Csv => report.write_csv(&mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn summarize(r: &SimReport) {
    eprintln!(
        "{} on {}: {} requests, capacity {} blocks, hit ratio {:.4}, evictions {}, total TTFT {:.3}s",
        r.policy, r.workload, r.num_requests, r.capacity_blocks, r.overall_hit_ratio, r.evictions, r.total_ttft_s
    );
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        // `prefixsim simulate | head` should not complain.
        Err(e) if e.chain().any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { exp, out } => {
            let report = exp.resolve()?.run()?;
            write_report(&report, &out)?;
            summarize(&report);
        }
        Command::Sweep { exp, mut axes, weight_grid, inject_grid, jobs, out } => {
            let cfg = exp.resolve()?;
            if inject_grid {
                axes.push(Axis::new(Param::InjectInterval, INJECT_INTERVALS));
            }
            if weight_grid {
                axes.extend(token_weight_grid());
            }
            if axes.is_empty() {
                bail!("nothing to sweep: give --axis, --weight-grid or --inject-grid");
            }
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let rows = run_sweep(&cfg, &axes, jobs)?;
            let mut w = open_out(out.output.as_deref())?;
            match out.format() {
                ReportFormat::Json => write_sweep_json(&rows, &mut w)?,
                ReportFormat::Csv => write_sweep_csv(&rows, &mut w)?,
            }
            w.flush()?;
            let failed: Vec<_> = rows.iter().filter(|r| r.error.is_some()).collect();
            for r in &failed {
                eprintln!("cell {} failed: {}", r.cell, r.error.as_deref().unwrap_or_default());
            }
            eprintln!("{} cells, {} failed", rows.len(), failed.len());
            if !failed.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Characterize { src, block_size, out } => {
            let cfg = src.resolve()?;
            cfg.validate()?;
            let report = characterize(&cfg.load_trace()?, block_size)?;
            write_report(&report, &out)?;
            eprintln!(
                "{} requests, hit ratio {:.4}, intra-session share {:.2}% ({:.2}% on multi-turn requests)",
                report.num_requests,
                report.overall_hit_ratio,
                report.locality.intra_share_pct,
                report.locality.multi_turn_intra_share_pct
            );
        }
        Command::Fit { src, style, thresholds, output } => {
            let cfg = src.resolve()?;
            cfg.validate()?;
            let trace = cfg.load_trace()?;
            let style = style.map(|s| match s {
                StyleArg::Chat => Style::Chat,
                StyleArg::Agentic => Style::Agentic,
            });
            let gaps = trace.interval_seconds(style);
            let fits = fit_comparison(&gaps).context("fitting inter-turn gaps")?;
            let sweep = threshold_sweep(&gaps, &thresholds)?;
            let mut w = csv::Writer::from_writer(open_out(output.as_deref())?);
            w.write_record(["table", "model", "threshold_s", "n", "pct_kept", "p50_s", "p80_s", "param1", "param2", "ks_d", "r_squared", "aic"])?;
            for (rank, f) in fits.iter().enumerate() {
                let (p1, p2) = match f.params {
                    Fitted::Lognormal { mu, sigma } => (mu, Some(sigma)),
                    Fitted::Gamma { shape, scale } => (shape, Some(scale)),
                    Fitted::Exponential { rate } => (rate, None),
                };
                w.write_record([
                    "fit".to_string(),
                    f.params.name().to_string(),
                    String::new(),
                    f.n.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    p1.to_string(),
                    p2.map(|v| v.to_string()).unwrap_or_default(),
                    f.ks_d.to_string(),
                    f.r_squared.to_string(),
                    f.aic.to_string(),
                ])?;
                if rank == 0 {
                    eprintln!("best fit: {} (K-S D {:.4}) over {} gaps", f.params.name(), f.ks_d, f.n);
                }
            }
            for r in &sweep {
                w.write_record([
                    "threshold".to_string(),
                    "lognormal".to_string(),
                    r.threshold.to_string(),
                    r.n.to_string(),
                    r.pct_kept.to_string(),
                    r.p50.to_string(),
                    r.p80.to_string(),
                    r.mu.to_string(),
                    r.sigma.to_string(),
                    r.ks_d.to_string(),
                    r.r_squared.to_string(),
                    String::new(),
                ])?;
            }
            w.flush()?;
        }
        Command::TrainPredictor { src, epochs, lr, batch_size, hidden, model_out, curve_out } => {
            let cfg = src.resolve()?;
            cfg.validate()?;
            let data = dataset_from_trace(&cfg.load_trace()?);
            if data.is_empty() {
                bail!("trace has no first-turn requests with a known continuation");
            }
            let [h1, h2] = hidden[..] else { bail!("--hidden takes exactly two widths") };
            let seed = cfg.seed.unwrap_or(0);
            let mut model = MlpModel::with_hidden(FEATURE_NAMES.len(), h1, h2, seed);
            let tc = TrainConfig { epochs, lr, batch_size, seed, ..TrainConfig::default() };
            let curve = model.train(&data, &tc)?;
            model.save(&model_out)?;
            let mut w = csv::Writer::from_writer(open_out(curve_out.as_deref())?);
            w.write_record(["epoch", "loss", "accuracy"])?;
            for (i, (l, a)) in curve.loss.iter().zip(&curve.accuracy).enumerate() {
                w.write_record([(i + 1).to_string(), l.to_string(), a.to_string()])?;
            }
            w.flush()?;
            let c = model.confusion(&data)?;
            eprintln!(
                "{} examples, final accuracy {:.4} (tp {} fp {} tn {} fn {})",
                data.len(),
                c.accuracy(),
                c.tp,
                c.fp,
                c.tn,
                c.fn_
            );
        }
        Command::Generate { src, probe, probe_requests, output } => {
            let trace = if probe {
                let seed = src.resolve()?.seed.unwrap_or(0);
                reuse_probe(&ProbeSpec { num_requests: probe_requests, seed, ..ProbeSpec::default() })?
            } else {
                let cfg = src.resolve()?;
                if cfg.trace.is_some() {
                    bail!("generate needs a preset or workload spec, not a trace");
                }
                cfg.validate()?;
                cfg.load_trace()?
            };
            let mut w = open_out(output.as_deref())?;
            write_jsonl(&trace, &mut w)?;
            w.flush()?;
            eprintln!("{} requests in {} sessions", trace.requests.len(), trace.num_sessions());
        }
    }
    Ok(ExitCode::SUCCESS)
}
