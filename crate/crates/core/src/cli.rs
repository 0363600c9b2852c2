//! The `wsync` command line.
//!
//! Every subcommand resolves a flat `key=value` configuration: values from
//! `--config FILE` first, then command-line flags on top. The resolved
//! configuration (including the master seed) is echoed as `#` comment lines at
//! the top of every output file.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 when `verify-bounds` finds
//! a violated bound.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bounds::{check_r_upper, check_tk_events, stationary_lower_bound_check, BETA};
use crate::env::{replicate_rng, sample_environment, Densities, Party};
use crate::error::{Error, Result};
use crate::harness::{
    compare_clocked, figure1_sweep, oblivious_sweep, run_cell, write_clocked_csv, write_gnuplot, write_oblivious_csv,
    write_sweep_csv, ExperimentConfig, Mode, DESK_REPLICATES, PAPER_REPLICATES,
};
use crate::oracle::small_n_expectation;
use crate::stats::Summary;
use crate::strategy::{default_clocked_width, StrategySpec};
use crate::sync::{
    default_max_rounds, expected_sync_time_fixed, simulate_clocked, simulate_stationary, sync_probability,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Directory for outputs when `--output` is not given.
pub const OUTPUT_DIR_VAR: &str = "WSYNC_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "wsync", version, about = "Whitespace channel rendezvous simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample one environment and print it as three 0/1 lines.
    SampleEnv(Opts),
    /// Exact and simulated sync time for one sampled environment.
    Simulate(Opts),
    /// Normalized sync time of geometric strategies over an alpha grid.
    SweepFigure1(Opts),
    /// Heavy-tail (density-oblivious) strategies over a density grid.
    SweepOblivious(Opts),
    /// Clocked partition strategy against its bounds.
    SweepClocked(Opts),
    /// Run every bound check; exit 2 if any fails.
    VerifyBounds(Opts),
    /// Exact expectation by enumerating every environment (small n).
    OracleSmallN(Opts),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SampleEnv(_) => "sample-env",
            Command::Simulate(_) => "simulate",
            Command::SweepFigure1(_) => "sweep-figure1",
            Command::SweepOblivious(_) => "sweep-oblivious",
            Command::SweepClocked(_) => "sweep-clocked",
            Command::VerifyBounds(_) => "verify-bounds",
            Command::OracleSmallN(_) => "oracle-small-n",
        }
    }

    fn opts(&self) -> &Opts {
        match self {
            Command::SampleEnv(o)
            | Command::Simulate(o)
            | Command::SweepFigure1(o)
            | Command::SweepOblivious(o)
            | Command::SweepClocked(o)
            | Command::VerifyBounds(o)
            | Command::OracleSmallN(o) => o,
        }
    }
}

#[derive(Debug, Args, Default)]
struct Opts {
    /// Flat key=value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (default: $WSYNC_OUTPUT_DIR/<subcommand>.csv, else stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    /// gnuplot data file for sweep-figure1.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
    /// Alice's openness; a value, a comma list or start:stop:step.
    #[arg(long)]
    p1: Option<String>,
    /// Bob's openness; same syntax as --p1.
    #[arg(long)]
    p2: Option<String>,
    /// Global openness; same syntax as --p1.
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    alpha_grid: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    /// Strategy spec, e.g. geometric:alpha=0.1667, heavy-tail:epsilon=1, uniform, clocked:width=16.
    #[arg(long)]
    strategy_a: Option<String>,
    #[arg(long)]
    strategy_b: Option<String>,
    /// exact | monte-carlo[:runs]
    #[arg(long)]
    mode: Option<String>,
    /// Clocked partition width.
    #[arg(long)]
    width: Option<String>,
    #[arg(long)]
    max_rounds: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    /// Replicate index of the sampled environment (sample-env, simulate).
    #[arg(long)]
    replicate: Option<String>,
    /// verify-bounds preset: paper | quick.
    #[arg(long)]
    preset: Option<String>,
    /// Run cells with n p1 p2 q < 50.
    #[arg(long)]
    allow_sparse: bool,
    /// 10^5 replicates per cell.
    #[arg(long)]
    paper_scale: bool,
}

const KNOWN_KEYS: [&str; 20] = [
    "p1",
    "p2",
    "q",
    "n",
    "replicates",
    "seed",
    "alpha",
    "alpha-grid",
    "epsilon",
    "strategy-a",
    "strategy-b",
    "mode",
    "width",
    "max-rounds",
    "samples",
    "replicate",
    "preset",
    "allow-sparse",
    "paper-scale",
    "threads",
];

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Resolved configuration: file values overlaid with flags.
#[derive(Debug, Clone, Default)]
struct Config {
    values: BTreeMap<String, String>,
}

fn parse_config_text(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", lineno + 1)))?;
        let key = k.trim().replace('_', "-");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key {key:?}", lineno + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

impl Config {
    fn resolve(opts: &Opts) -> CliResult<Self> {
        let mut values = match &opts.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        let flags: [(&str, &Option<String>); 17] = [
            ("p1", &opts.p1),
            ("p2", &opts.p2),
            ("q", &opts.q),
            ("n", &opts.n),
            ("replicates", &opts.replicates),
            ("seed", &opts.seed),
            ("alpha", &opts.alpha),
            ("alpha-grid", &opts.alpha_grid),
            ("epsilon", &opts.epsilon),
            ("strategy-a", &opts.strategy_a),
            ("strategy-b", &opts.strategy_b),
            ("mode", &opts.mode),
            ("width", &opts.width),
            ("max-rounds", &opts.max_rounds),
            ("samples", &opts.samples),
            ("replicate", &opts.replicate),
            ("preset", &opts.preset),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(k.to_string(), v.clone());
            }
        }
        if let Some(t) = opts.threads {
            values.insert("threads".into(), t.to_string());
        }
        if opts.allow_sparse {
            values.insert("allow-sparse".into(), "true".into());
        }
        if opts.paper_scale {
            values.insert("paper-scale".into(), "true".into());
        }
        Ok(Config { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Fills `key` with `default` when absent, so the header shows it.
    fn default(&mut self, key: &str, default: impl ToString) {
        self.values.entry(key.to_string()).or_insert_with(|| default.to_string());
    }

    fn require(&self, keys: &[&str]) -> CliResult<()> {
        let missing: Vec<&str> = keys.iter().copied().filter(|k| !self.values.contains_key(*k)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("missing config keys: {}", missing.join(", "))))
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| CliError::Usage(format!("missing config keys: {key}")))?;
        raw.parse()
            .map_err(|e| CliError::Usage(format!("invalid value {raw:?} for {key}: {e}")))
    }

    fn flag(&self, key: &str) -> CliResult<bool> {
        match self.get(key) {
            None => Ok(false),
            Some(_) => self.parse(key),
        }
    }

    fn floats(&self, key: &str) -> CliResult<Vec<f64>> {
        let raw = self
            .get(key)
            .ok_or_else(|| CliError::Usage(format!("missing config keys: {key}")))?;
        parse_grid(raw).map_err(|e| CliError::Usage(format!("{key}: {e}")))
    }

    /// Cartesian product of the p1, p2 and q lists.
    fn densities_grid(&self) -> CliResult<Vec<Densities>> {
        self.require(&["p1", "p2", "q"])?;
        let (p1s, p2s, qs) = (self.floats("p1")?, self.floats("p2")?, self.floats("q")?);
        let mut out = Vec::new();
        for &p1 in &p1s {
            for &p2 in &p2s {
                for &q in &qs {
                    out.push(Densities::new(p1, p2, q)?);
                }
            }
        }
        Ok(out)
    }

    fn single_densities(&self) -> CliResult<Densities> {
        let grid = self.densities_grid()?;
        match grid.as_slice() {
            [d] => Ok(*d),
            _ => Err(CliError::Usage("this subcommand takes single values for p1, p2 and q".into())),
        }
    }

    fn header(&self, command: &str) -> String {
        let mut out = format!("# wsync {VERSION}\n# command: {command}\n");
        for (k, v) in &self.values {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out
    }
}

/// A single value, a comma list, or `start:stop:step` (stop included when
/// it lands within 1e-9).
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                return Err(Error::Parse(format!("bad grid {spec:?}: need step > 0 and stop >= start")));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=count)
                .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        [_] => spec.split(',').map(num).collect(),
        _ => Err(Error::Parse(format!("bad grid {spec:?}"))),
    }
}

enum Sink {
    Stdout,
    File(PathBuf),
}

fn sink_for(opts: &Opts, command: &str) -> Sink {
    if let Some(p) = &opts.output {
        return Sink::File(p.clone());
    }
    match std::env::var_os(OUTPUT_DIR_VAR) {
        Some(dir) if !dir.is_empty() => Sink::File(Path::new(&dir).join(format!("{command}.csv"))),
        _ => Sink::Stdout,
    }
}

fn emit(sink: &Sink, stdout: &mut dyn Write, bytes: &[u8]) -> CliResult<()> {
    match sink {
        Sink::Stdout => stdout.write_all(bytes)?,
        Sink::File(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, bytes)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = if code == EXIT_OK {
                write!(stdout, "{}", e.render())
            } else {
                write!(stderr, "{}", e.render())
            };
            return code;
        }
    };
    let mut buffer: Vec<u8> = Vec::new();
    let result = Config::resolve(cli.command.opts()).and_then(|cfg| {
        let out: &mut Vec<u8> = &mut buffer;
        let threads = match cfg.get("threads") {
            Some(_) => Some(cfg.parse::<usize>("threads")?),
            None => None,
        };
        match threads {
            Some(t) if t > 0 => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                pool.install(|| dispatch(&cli.command, cfg, out))
            }
            Some(_) => Err(CliError::Usage("threads must be at least 1".into())),
            None => dispatch(&cli.command, cfg, out),
        }
    });
    if stdout.write_all(&buffer).is_err() {
        return EXIT_USAGE;
    }
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn dispatch(command: &Command, mut cfg: Config, stdout: &mut dyn Write) -> CliResult<i32> {
    let name = command.name();
    let opts = command.opts();
    let sink = sink_for(opts, name);
    cfg.default("seed", 0);
    match command {
        Command::SampleEnv(_) => sample_env(cfg, &sink, stdout),
        Command::Simulate(_) => simulate(cfg, &sink, stdout),
        Command::SweepFigure1(_) => sweep_figure1(cfg, opts, &sink, stdout),
        Command::SweepOblivious(_) => sweep_oblivious(cfg, &sink, stdout),
        Command::SweepClocked(_) => sweep_clocked(cfg, &sink, stdout),
        Command::VerifyBounds(_) => verify_bounds(cfg, &sink, stdout),
        Command::OracleSmallN(_) => oracle_small_n(cfg, &sink, stdout),
    }
}

fn sample_env(mut cfg: Config, sink: &Sink, stdout: &mut dyn Write) -> CliResult<i32> {
    cfg.require(&["p1", "p2", "q", "n"])?;
    cfg.default("replicate", 0);
    let d = cfg.single_densities()?;
    let env = sample_environment(&d, cfg.parse("n")?, &mut replicate_rng(cfg.parse("seed")?, cfg.parse("replicate")?))?;
    let mut out = cfg.header("sample-env");
    out.push_str(&env.to_string());
    emit(sink, stdout, out.as_bytes())?;
    Ok(EXIT_OK)
}

fn simulate(mut cfg: Config, sink: &Sink, stdout: &mut dyn Write) -> CliResult<i32> {
    cfg.require(&["p1", "p2", "q", "n"])?;
    let d = cfg.single_densities()?;
    cfg.default("strategy-a", StrategySpec::GeometricAware { alpha: crate::strategy::ALPHA_DEFAULT });
    let a_text = cfg.get("strategy-a").expect("defaulted").to_string();
    cfg.default("strategy-b", a_text);
    cfg.default("replicate", 0);
    cfg.default("samples", 1000);
    cfg.default("max-rounds", default_max_rounds(&d));
    let spec_a: StrategySpec = cfg.parse("strategy-a")?;
    let spec_b: StrategySpec = cfg.parse("strategy-b")?;
    let n: usize = cfg.parse("n")?;
    let seed: u64 = cfg.parse("seed")?;
    let replicate: u64 = cfg.parse("replicate")?;
    let runs: usize = cfg.parse("samples")?;
    let max_rounds: u64 = cfg.parse("max-rounds")?;
    let mut rng = replicate_rng(seed, replicate);
    let env = sample_environment(&d, n, &mut rng)?;

    let (r, expected) = match (spec_a.is_stationary(), spec_b.is_stationary()) {
        (true, true) => match (spec_a.distribution(&env, Party::Alice, &d), spec_b.distribution(&env, Party::Bob, &d)) {
            (Ok(a), Ok(b)) => {
                let r = sync_probability(&a, &b, &env);
                (Some(r.get()), expected_sync_time_fixed(r).finite())
            }
            (Err(Error::NoOpenChannels(_)), _) | (_, Err(Error::NoOpenChannels(_))) => (Some(0.0), None),
            (Err(e), _) | (_, Err(e)) => return Err(e.into()),
        },
        (false, false) => (None, None),
        _ => {
            return Err(CliError::Usage(
                "clocked strategies need a common clock: both parties must be clocked".into(),
            ))
        }
    };
    let mut rounds = Vec::with_capacity(runs);
    let mut no_sync = 0usize;
    for _ in 0..runs {
        let outcome = if spec_a.is_stationary() {
            simulate_stationary(&spec_a, &spec_b, &env, &d, max_rounds, &mut rng)?
        } else {
            let width = match (spec_a, spec_b) {
                (
                    StrategySpec::ClockedPartition { width: wa },
                    StrategySpec::ClockedPartition { width: wb },
                ) if wa == wb => wa.unwrap_or_else(|| default_clocked_width(&d, n)),
                _ => return Err(CliError::Usage("both clocked parties must use the same width".into())),
            };
            simulate_clocked(&env, width, max_rounds)?
        };
        match outcome.rounds() {
            Some(t) => rounds.push(t as f64),
            None => no_sync += 1,
        }
    }
    let s = Summary::of(&rounds);
    let mut body = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut body);
        let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let row = [
            d.p1().to_string(),
            d.p2().to_string(),
            d.q().to_string(),
            n.to_string(),
            spec_a.to_string(),
            spec_b.to_string(),
            fmt(r),
            fmt(expected),
            runs.to_string(),
            s.mean.to_string(),
            s.stderr().to_string(),
            no_sync.to_string(),
            env.triple_open_count().to_string(),
            seed.to_string(),
        ];
        let header = [
            "p1", "p2", "q", "n", "strategy_a", "strategy_b", "r", "expected_rounds", "runs", "mc_mean", "mc_stderr",
            "n_nosync", "triple_open", "seed",
        ];
        w.write_record(header).and_then(|_| w.write_record(row)).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.flush()?;
    }
    let mut out = cfg.header("simulate").into_bytes();
    out.extend(body);
    emit(sink, stdout, &out)?;
    Ok(EXIT_OK)
}

fn experiment(cfg: &mut Config) -> CliResult<ExperimentConfig> {
    cfg.require(&["p1", "p2", "q"])?;
    cfg.default("n", 10_000);
    let scale = if cfg.flag("paper-scale")? { PAPER_REPLICATES } else { DESK_REPLICATES };
    cfg.default("replicates", scale);
    cfg.default("mode", Mode::ExactR);
    cfg.default("epsilon", 1);
    Ok(ExperimentConfig {
        densities_grid: cfg.densities_grid()?,
        alpha_grid: Vec::new(),
        epsilon: cfg.parse("epsilon")?,
        n: cfg.parse("n")?,
        replicates: cfg.parse("replicates")?,
        master_seed: cfg.parse("seed")?,
        strategy_pairs: Vec::new(),
        mode: cfg.parse("mode")?,
        allow_sparse: cfg.flag("allow-sparse")?,
        clocked_width: match cfg.get("width") {
            Some(_) => Some(cfg.parse("width")?),
            None => None,
        },
    })
}

fn sweep_figure1(mut cfg: Config, opts: &Opts, sink: &Sink, stdout: &mut dyn Write) -> CliResult<i32> {
    let mut exp = experiment(&mut cfg)?;
    cfg.default("alpha-grid", "0.05:0.5:0.05");
    exp.alpha_grid = cfg.floats("alpha-grid")?;
    let rows = figure1_sweep(&exp)?;
    let header = cfg.header("sweep-figure1");
    let mut out = header.clone().into_bytes();
    write_sweep_csv(&mut out, &rows)?;
    emit(sink, stdout, &out)?;
    let plot_path = opts.gnuplot.clone().or(match sink {
        Sink::File(p) => Some(p.with_extension("dat")),
        Sink::Stdout => None,
    });
    if let Some(path) = plot_path {
        let mut plot = header.into_bytes();
        write_gnuplot(&mut plot, &rows)?;
        emit(&Sink::File(path), stdout, &plot)?;
    }
    Ok(EXIT_OK)
}

fn sweep_oblivious(mut cfg: Config, sink: &Sink, stdout: &mut dyn Write) -> CliResult<i32> {
    let exp = experiment(&mut cfg)?;
    let rows = oblivious_sweep(&exp)?;
    let mut out = cfg.header("sweep-oblivious").into_bytes();
    write_oblivious_csv(&mut out, &rows)?;
    emit(sink, stdout, &out)?;
    Ok(EXIT_OK)
}

fn sweep_clocked(mut cfg: Config, sink: &Sink, stdout: &mut dyn Write) -> CliResult<i32> {
    let exp = experiment(&mut cfg)?;
    let rows = compare_clocked(&exp)?;
    let mut out = cfg.header("sweep-clocked").into_bytes();
    write_clocked_csv(&mut out, &rows)?;
    emit(sink, stdout, &out)?;
    Ok(EXIT_OK)
}

fn oracle_small_n(mut cfg: Config, sink: &Sink, stdout: &mut dyn Write) -> CliResult<i32> {
    cfg.require(&["p1", "p2", "q", "n"])?;
    let d = cfg.single_densities()?;
    cfg.default("alpha", crate::strategy::ALPHA_DEFAULT);
    let alpha: f64 = cfg.parse("alpha")?;
    let geo = StrategySpec::GeometricAware { alpha }.to_string();
    cfg.default("strategy-a", &geo);
    cfg.default("strategy-b", &geo);
    let spec_a: StrategySpec = cfg.parse("strategy-a")?;
    let spec_b: StrategySpec = cfg.parse("strategy-b")?;
    let n: usize = cfg.parse("n")?;
    let v = small_n_expectation(&d, n, &spec_a, &spec_b)?;
    let mut out = cfg.header("oracle-small-n");
    out.push_str("n,p1,p2,q,strategy_a,strategy_b,conditional_mean,p_sync,normalized_mean\n");
    out.push_str(&format!(
        "{n},{},{},{},{spec_a},{spec_b},{},{},{}\n",
        d.p1(),
        d.p2(),
        d.q(),
        v.conditional_mean,
        v.p_sync,
        v.normalized_mean
    ));
    emit(sink, stdout, out.as_bytes())?;
    Ok(EXIT_OK)
}

struct CheckLine {
    check: String,
    value: f64,
    threshold: f64,
    pass: bool,
}

fn verify_bounds(mut cfg: Config, sink: &Sink, stdout: &mut dyn Write) -> CliResult<i32> {
    cfg.default("preset", "paper");
    let preset = cfg.get("preset").expect("defaulted").to_string();
    let (n_r, samples_r, n_tk, samples_tk, reps) = match preset.as_str() {
        "paper" => (4096, 1000, 1 << 14, 10_000, 1000),
        "quick" => (2048, 200, 4096, 1000, 200),
        other => return Err(CliError::Usage(format!("unknown preset {other:?} (paper | quick)"))),
    };
    cfg.default("p1", 0.5);
    cfg.default("p2", 0.5);
    cfg.default("q", 0.25);
    cfg.default("n", n_r);
    cfg.default("samples", samples_r);
    cfg.default("replicates", reps);
    let d = cfg.single_densities()?;
    let n: usize = cfg.parse("n")?;
    let samples: usize = cfg.parse("samples")?;
    let replicates: usize = cfg.parse("replicates")?;
    let seed: u64 = cfg.parse("seed")?;
    let allow_sparse = cfg.flag("allow-sparse")?;

    let mut lines = Vec::new();
    let geo = StrategySpec::GeometricAware { alpha: crate::strategy::ALPHA_DEFAULT };
    let strategies = [geo, StrategySpec::HeavyTailOblivious { epsilon: 1.0 }, StrategySpec::UniformNaive];
    for spec in strategies {
        let report = check_r_upper(&d, &spec, &spec, n, samples, seed)?;
        lines.push(CheckLine {
            check: format!("r_upper[{spec}] fraction_below+3se"),
            value: report.fraction_below + 3.0 * report.stderr(),
            threshold: 0.5,
            pass: report.passes(),
        });
        let mut cell = crate::harness::Cell::new(d, spec, spec, n);
        cell.replicates = replicates;
        cell.master_seed = seed;
        cell.allow_sparse = allow_sparse;
        let sweep = run_cell(&cell)?;
        let lower = stationary_lower_bound_check(&report, &sweep)?;
        lines.push(CheckLine {
            check: format!("stationary_lower_bound[{spec}] normalized_mean"),
            value: lower.normalized_mean,
            threshold: lower.c,
            pass: lower.passed,
        });
    }
    let tk = check_tk_events(&d, &geo, n_tk, samples_tk, seed, BETA)?;
    for (name, f) in tk.events() {
        lines.push(CheckLine {
            check: format!("tk_event[{name}] frequency"),
            value: f.frequency(),
            threshold: crate::bounds::BAD_EVENT_LIMIT + 3.0 * f.stderr(),
            pass: f.passes(),
        });
    }
    lines.push(CheckLine {
        check: "level_size_violations".into(),
        value: tk.level_size_violations as f64,
        threshold: 0.0,
        pass: tk.level_size_violations == 0,
    });
    lines.push(CheckLine {
        check: "cauchy_schwarz_chain_violations".into(),
        value: tk.chain_violations as f64,
        threshold: 0.0,
        pass: tk.chain_violations == 0,
    });
    let clocked_grid = if preset == "paper" {
        let mut g = Vec::new();
        for p1 in [0.25, 0.5, 0.8] {
            for p2 in [0.25, 0.5, 0.8] {
                for q in [0.1, 0.25, 0.5] {
                    g.push(Densities::new(p1, p2, q)?);
                }
            }
        }
        g
    } else {
        vec![d]
    };
    let exp = ExperimentConfig {
        densities_grid: clocked_grid,
        n: 10_000,
        replicates,
        master_seed: seed,
        allow_sparse,
        clocked_width: match cfg.get("width") {
            Some(_) => Some(cfg.parse("width")?),
            None => None,
        },
        ..Default::default()
    };
    for row in compare_clocked(&exp)? {
        let tag = format!("({},{},{})", row.densities.p1(), row.densities.p2(), row.densities.q());
        lines.push(CheckLine {
            check: format!("clocked_lower{tag} mean_rounds"),
            value: row.mean_rounds,
            threshold: row.lower_bound,
            pass: !row.violates_lower(),
        });
        lines.push(CheckLine {
            check: format!("clocked_upper{tag} mean_rounds"),
            value: row.mean_rounds,
            threshold: row.upper_bound,
            pass: !row.violates_upper(),
        });
    }

    let mut out = cfg.header("verify-bounds");
    out.push_str("check,value,threshold,pass\n");
    for l in &lines {
        out.push_str(&format!("{},{},{},{}\n", l.check, l.value, l.threshold, l.pass));
    }
    emit(sink, stdout, out.as_bytes())?;
    Ok(if lines.iter().all(|l| l.pass) { EXIT_OK } else { EXIT_CHECK_FAILED })
}
