//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
//! runtime failures such as unwritable outputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::config::{parse_ratio, Config, ConfigError, SystemConfig};
use crate::keyqueue::{
    stationary_closed_form, stationary_exact, transition_matrix, MarkovParams, QueueError,
};
use crate::outage::{self, Direction, OutageError, SubsetPolicy};
use crate::sim::{self, Scheme, SimError, SweepParameter, SweepSettings};
use crate::throughput::{optimize_grid, AnalyticProvider, MonteCarloProvider};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Io { .. } => 3,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Config(c),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<QueueError> for CliError {
    fn from(e: QueueError) -> Self {
        match e {
            QueueError::Probability { .. } | QueueError::Shape { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<OutageError> for CliError {
    fn from(e: OutageError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "keyassist", version, about = "Key-assisted secure OFDM transmission simulator")]
pub struct Cli {
    /// Config file with one `key = value` per line.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set snr_alice=20dB`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Output file; stdout when omitted. A manifest is written next to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one or all schemes at a single configuration.
    Simulate(SimulateArgs),
    /// Run the schemes over a parameter grid.
    Sweep(SweepArgs),
    /// Search N_data and K for the best analytic throughput.
    Optimize(OptimizeArgs),
    /// Stationary key-queue occupancy, exact and closed form.
    Markov(MarkovArgs),
    /// Secrecy-outage estimates by Monte Carlo and numerically.
    Sop(SopArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Fixed,
    Dynamic,
    Benchmark,
    All,
}

impl SchemeArg {
    fn schemes(self) -> Vec<Scheme> {
        match self {
            SchemeArg::Fixed => vec![Scheme::Fixed],
            SchemeArg::Dynamic => vec![Scheme::Dynamic],
            SchemeArg::Benchmark => vec![Scheme::Benchmark],
            SchemeArg::All => Scheme::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = SchemeArg::All)]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = 10_000)]
    pub slots: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Figure5,
    Figure6,
    Figure7,
    Figure8,
    Figure9,
    Figure10,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, conflicts_with_all = ["param", "grid"])]
    pub preset: Option<Preset>,
    /// One of snr, n_b, rate_data, gap_ab, n_data, k.
    #[arg(long, requires = "grid")]
    pub param: Option<String>,
    /// `start:step:stop` or a comma list; a trailing `dB` converts to linear.
    #[arg(long, requires = "param", allow_hyphen_values = true)]
    pub grid: Option<String>,
    #[arg(long, value_enum, default_value_t = SchemeArg::All)]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = 5_000)]
    pub slots: u64,
    /// Realizations used to re-pick the fixed scheme's N_data at each point;
    /// 0 keeps the configured value.
    #[arg(long, default_value_t = 2_000)]
    pub reoptimize_samples: usize,
    /// Use the same seed at every grid point.
    #[arg(long)]
    pub common_random_numbers: bool,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Shared channel realizations for the Monte Carlo estimates.
    #[arg(long, default_value_t = 5_000)]
    pub samples: usize,
    /// Use the large-array numerical estimates instead of Monte Carlo.
    #[arg(long)]
    pub analytic: bool,
    #[arg(long, default_value_t = 1024)]
    pub n_points: usize,
}

#[derive(Debug, Args)]
pub struct MarkovArgs {
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub f: f64,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub q_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Ab,
    Ba,
}

#[derive(Debug, Args)]
pub struct SopArgs {
    #[arg(long, value_enum, default_value_t = DirectionArg::Ab)]
    pub direction: DirectionArg,
    /// Sub-channels in the set (Alice's best for ab, Bob's best for ba).
    #[arg(long)]
    pub subchannels: Option<usize>,
    /// Target secrecy rate; defaults to R_data (ab) or R_data/K (ba).
    #[arg(long)]
    pub target: Option<f64>,
    /// Use the first sub-channels instead of the best ones.
    #[arg(long)]
    pub first: bool,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 4096)]
    pub n_points: usize,
}

/// Parses `start:step:stop` (inclusive) or `a,b,c`, with an optional `dB`
/// suffix on the whole spec or on individual list items.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::Usage(format!("malformed grid `{spec}`: {why}"));
    let t = spec.trim();
    if t.is_empty() {
        return Err(bad("empty"));
    }
    let (body, db) = match t.strip_suffix("dB").or_else(|| t.strip_suffix("db")) {
        Some(rest) if t.contains(':') => (rest, true),
        _ => (t, false),
    };
    let convert = |v: f64| if db { crate::config::db_to_linear(v) } else { v };
    let values: Vec<f64> = if body.contains(':') {
        let parts: Vec<f64> = body
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect::<Result<_, _>>()?;
        let [start, step, stop] = parts[..] else {
            return Err(bad("expected start:step:stop"));
        };
        if !(step > 0.0) || stop < start || !start.is_finite() || !stop.is_finite() {
            return Err(bad("step must be positive and stop >= start"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| convert(start + i as f64 * step)).collect()
    } else {
        body.split(',')
            .map(|p| parse_ratio(p).map_err(|_| bad("not a number")))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err(bad("no values"));
    }
    Ok(values)
}

impl Preset {
    /// Parameter, grid and config adjustments of each preset.
    pub fn expand(self, base: &mut SystemConfig) -> (SweepParameter, Vec<f64>) {
        let range = |a: usize, b: usize| (a..=b).map(|x| x as f64).collect::<Vec<_>>();
        match self {
            Preset::Figure5 => (
                SweepParameter::Snr,
                (0..=8).map(|i| crate::config::db_to_linear(5.0 * i as f64)).collect(),
            ),
            Preset::Figure6 => (SweepParameter::NB, range(1, 8)),
            Preset::Figure7 => {
                base.key_ratio = 3;
                (SweepParameter::RateData, (1..=20).map(|i| 0.5 * i as f64).collect())
            }
            Preset::Figure8 => (SweepParameter::GapAb, vec![1.0, 2.0, 4.0, 8.0]),
            Preset::Figure9 => (SweepParameter::NData, range(1, base.n_subchannels)),
            Preset::Figure10 => (SweepParameter::K, range(1, base.q_max)),
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    subcommand: &'a str,
    argv: Vec<String>,
    seed: u64,
    config: &'a SystemConfig,
    outputs: Vec<String>,
    wall_clock_seconds: f64,
}

fn load_config(cli: &Cli) -> Result<SystemConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read `{}`: {e}", path.display())))?;
            SystemConfig::parse(&text)?
        }
        None => SystemConfig::default(),
    };
    for item in &cli.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got `{item}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

struct Output {
    table: String,
    summary: String,
    config: SystemConfig,
}

fn simulate(cfg: &Config, args: &SimulateArgs, seed: u64) -> Output {
    let mut table = String::from(
        "scheme,throughput,ci95,otp_fraction,sop_events,outage_events,key_arrivals,slots,seed\n",
    );
    let mut summary = String::new();
    for scheme in args.scheme.schemes() {
        let r = sim::run_seeded(cfg, scheme, args.slots, seed);
        writeln!(
            table,
            "{},{},{},{},{},{},{},{},{}",
            scheme,
            r.secure_throughput,
            r.ci95,
            r.otp_fraction,
            r.sop_events,
            r.outage_events,
            r.key_arrivals,
            r.slots,
            seed
        )
        .unwrap();
        writeln!(
            summary,
            "{scheme}: secure throughput {:.4} +/- {:.4} bits/channel-use over {} slots",
            r.secure_throughput, r.ci95, r.slots
        )
        .unwrap();
    }
    Output {
        table,
        summary,
        config: cfg.params().clone(),
    }
}

fn sweep(base: SystemConfig, args: &SweepArgs, seed: u64) -> Result<Output, CliError> {
    let mut base = base;
    let (parameter, grid) = match (args.preset, &args.param, &args.grid) {
        (Some(p), _, _) => p.expand(&mut base),
        (None, Some(param), Some(grid)) => (param.parse::<SweepParameter>()?, parse_grid(grid)?),
        _ => return Err(CliError::Usage("give --preset or both --param and --grid".into())),
    };
    let settings = SweepSettings {
        slots: args.slots,
        seed,
        schemes: args.scheme.schemes(),
        reoptimize_samples: (args.reoptimize_samples > 0).then_some(args.reoptimize_samples),
        common_random_numbers: args.common_random_numbers,
    };
    let rows = sim::sweep(&base, parameter, &grid, &settings)?;
    let summary = settings
        .schemes
        .iter()
        .filter_map(|&s| sim::argmax(&rows, s).map(|v| format!("{s}: best {parameter} = {v}\n")))
        .collect();
    Ok(Output {
        table: sim::sweep_csv(&rows),
        summary,
        config: base,
    })
}

fn optimize(cfg: &Config, args: &OptimizeArgs, seed: u64) -> Result<Output, CliError> {
    let result = if args.analytic {
        optimize_grid(cfg, &AnalyticProvider::new(cfg, args.n_points))?
    } else {
        optimize_grid(cfg, &MonteCarloProvider::new(cfg, args.samples, seed))?
    };
    Ok(Output {
        table: result.to_csv(),
        summary: format!(
            "best n_data = {}, k = {}, throughput = {:.4}\n",
            result.best_n_data, result.best_k, result.best_throughput
        ),
        config: cfg.params().clone(),
    })
}

fn markov(args: &MarkovArgs, config: SystemConfig) -> Result<Output, CliError> {
    let params = MarkovParams {
        lambda: args.lambda,
        f: args.f,
        k: args.k,
        q_max: args.q_max,
    };
    let exact = stationary_exact(&transition_matrix(&params)?)?;
    let closed = stationary_closed_form(args.lambda, args.k, args.q_max)?;
    let mut table = String::from("state,exact,closed_form\n");
    for (i, (a, b)) in exact.pi.iter().zip(&closed.pi).enumerate() {
        writeln!(table, "{i},{a},{b}").unwrap();
    }
    Ok(Output {
        table,
        summary: format!("max abs difference {:e}\n", exact.max_abs_diff(&closed)),
        config,
    })
}

fn sop(cfg: &Config, args: &SopArgs, seed: u64) -> Result<Output, CliError> {
    let mut table = String::from("direction,subchannels,target,method,probability,std_error\n");
    let policy = |n: usize, best: SubsetPolicy| {
        if args.first {
            SubsetPolicy::Fixed((0..n.min(cfg.n_subchannels)).collect())
        } else {
            best
        }
    };
    let check = |n: usize| {
        if n == 0 || n > cfg.n_subchannels {
            Err(CliError::Usage(format!("--subchannels must be in 1..={}", cfg.n_subchannels)))
        } else {
            Ok(n)
        }
    };
    let (name, n, target, mc) = match args.direction {
        DirectionArg::Ab => {
            let n = check(args.subchannels.unwrap_or(cfg.n_data_fixed))?;
            let target = args.target.unwrap_or(cfg.rate_data);
            let c = SystemConfig {
                rate_data: target,
                ..cfg.params().clone()
            }
            .validate()?;
            let mc = outage::sop_wiretap_mc(&c, Direction::AliceToBob, &policy(n, SubsetPolicy::AliceBest(n)), target, args.trials, seed);
            ("ab", n, target, mc)
        }
        DirectionArg::Ba => {
            let n = check(args.subchannels.unwrap_or(cfg.n_key()))?;
            let target = args.target.unwrap_or(cfg.rate_key());
            let mc = outage::sop_wiretap_mc(cfg, Direction::BobToAlice, &policy(n, SubsetPolicy::BobBest(n)), target, args.trials, seed);
            ("ba", n, target, mc)
        }
    };
    writeln!(table, "{name},{n},{target},monte_carlo,{},{}", mc.probability, mc.std_error).unwrap();
    let numeric = match args.direction {
        DirectionArg::Ab => {
            let c = SystemConfig {
                rate_data: target,
                ..cfg.params().clone()
            }
            .validate()?;
            outage::sop_ab_product_numeric(&c, n, args.n_points)?
        }
        DirectionArg::Ba => outage::sop_ba_product_numeric(cfg, n, target, args.n_points)?,
    };
    writeln!(table, "{name},{n},{target},numeric,{numeric},").unwrap();
    if args.direction == DirectionArg::Ba && n == 1 {
        let closed = outage::sop_ba_closed_form(cfg.snr_bob, cfg.gap_ba, target, cfg.n_subchannels, cfg.n_cp);
        writeln!(table, "{name},{n},{target},closed_form,{closed},").unwrap();
    }
    Ok(Output {
        table,
        summary: format!("{name} SOP over {n} sub-channels: {:.5} (Monte Carlo), {numeric:.5} (numeric)\n", mc.probability),
        config: cfg.params().clone(),
    })
}

fn dispatch(cli: &Cli) -> Result<(&'static str, Output), CliError> {
    let base = load_config(cli)?;
    Ok(match &cli.command {
        Command::Simulate(a) => ("simulate", simulate(&base.validate()?, a, cli.seed)),
        Command::Sweep(a) => ("sweep", sweep(base, a, cli.seed)?),
        Command::Optimize(a) => ("optimize", optimize(&base.validate()?, a, cli.seed)?),
        Command::Markov(a) => ("markov", markov(a, base)?),
        Command::Sop(a) => ("sop", sop(&base.validate()?, a, cli.seed)?),
    })
}

fn execute(
    cli: &Cli,
    argv: &[String],
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let (name, output) = pool.install(|| dispatch(cli))?;
    let io = |e: std::io::Error| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    match &cli.out {
        Some(path) => {
            write_file(path, &output.table)?;
            let manifest = Manifest {
                version: env!("CARGO_PKG_VERSION"),
                subcommand: name,
                argv: argv.to_vec(),
                seed: cli.seed,
                config: &output.config,
                outputs: vec![path.display().to_string()],
                wall_clock_seconds: started.elapsed().as_secs_f64(),
            };
            let json = serde_json::to_string_pretty(&manifest)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            write_file(&manifest_path(path), &(json + "\n"))?;
            stdout.write_all(output.summary.as_bytes()).map_err(io)?;
        }
        None => {
            stdout.write_all(output.table.as_bytes()).map_err(io)?;
            let _ = stderr.write_all(output.summary.as_bytes());
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(text.as_bytes());
            } else {
                let _ = stderr.write_all(text.as_bytes());
            }
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &argv, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
