//! Experiment sweeps over densities, strategies and geometric rate multipliers.
//!
//! Every replicate `i` of a cell samples its environment from
//! `replicate_rng(master_seed, i)`, and results are reduced in replicate
//! order, so tables are identical for any thread count. All cells of a sweep
//! share the master seed; cells with the same densities therefore see the
//! same environments.
//!
//! Environments where the two parties can never meet (`r = 0`, including a
//! party without open channels) are counted in `n_failed` and excluded from
//! the mean and standard deviation.

use std::io::Write;

use log::warn;
use rayon::prelude::*;

use crate::env::{replicate_rng, sample_environment, Densities, Party};
use crate::error::{Error, Result};
use crate::stats::Summary;
use crate::strategy::{default_clocked_width, StrategySpec};
use crate::sync::{default_max_rounds, simulate_clocked, simulate_fixed, sync_probability, RoundOutcome};

/// Minimum `n p1 p2 q` (expected number of triple-open channels) before a
/// cell needs an explicit override.
pub const SPARSE_LIMIT: f64 = 50.0;

/// Environments per cell at desk scale.
pub const DESK_REPLICATES: usize = 1_000;

/// Environments per cell at paper scale.
pub const PAPER_REPLICATES: usize = 100_000;

/// How `E[X | env]` is obtained for each environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `1 / r`, exact for fixed strategies.
    ExactR,
    /// Mean of `runs` simulated rendezvous attempts.
    MonteCarlo { runs: usize },
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::ExactR => f.write_str("exact"),
            Mode::MonteCarlo { runs } => write!(f, "monte-carlo:{runs}"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "exact" => Ok(Mode::ExactR),
            None if s == "monte-carlo" => Ok(Mode::MonteCarlo { runs: 100 }),
            Some(("monte-carlo", runs)) => runs
                .parse()
                .ok()
                .filter(|r| *r > 0)
                .map(|runs| Mode::MonteCarlo { runs })
                .ok_or_else(|| Error::Parse(format!("bad Monte Carlo run count {runs:?}"))),
            _ => Err(Error::Parse(format!("unknown mode {s:?} (exact | monte-carlo[:runs])"))),
        }
    }
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub densities: Densities,
    pub strategy_a: StrategySpec,
    pub strategy_b: StrategySpec,
    pub n: usize,
    pub replicates: usize,
    pub mode: Mode,
    pub master_seed: u64,
    /// Accept `n p1 p2 q < SPARSE_LIMIT`.
    pub allow_sparse: bool,
    /// Round cap in Monte Carlo mode; `None` uses [`default_max_rounds`].
    pub max_rounds: Option<u64>,
}

impl Cell {
    pub fn new(densities: Densities, strategy_a: StrategySpec, strategy_b: StrategySpec, n: usize) -> Self {
        Cell {
            densities,
            strategy_a,
            strategy_b,
            n,
            replicates: DESK_REPLICATES,
            mode: Mode::ExactR,
            master_seed: 0,
            allow_sparse: false,
            max_rounds: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.n == 0 {
            return Err(Error::invalid("cells need n >= 1 and replicates >= 1"));
        }
        check_regime(&self.densities, self.n, self.allow_sparse)?;
        for spec in [&self.strategy_a, &self.strategy_b] {
            spec.validate()?;
            if !spec.is_stationary() {
                return Err(Error::NotStationary(spec.to_string()));
            }
        }
        Ok(())
    }
}

fn check_regime(d: &Densities, n: usize, allow_sparse: bool) -> Result<()> {
    let expected_open = n as f64 * d.triple_open();
    if expected_open < SPARSE_LIMIT {
        if !allow_sparse {
            return Err(Error::invalid(format!(
                "n p1 p2 q = {expected_open} < {SPARSE_LIMIT} at {d}; pass the sparse override to run anyway"
            )));
        }
        warn!("n p1 p2 q = {expected_open} < {SPARSE_LIMIT} at {d}: finite-n effects are not negligible");
    }
    Ok(())
}

/// Aggregated normalized sync time of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub densities: Densities,
    pub strategy_a: StrategySpec,
    pub strategy_b: StrategySpec,
    pub n: usize,
    pub seed: u64,
    /// Mean over successful environments of `E[X | env] p1 p2 q^2`.
    pub normalized_mean: f64,
    /// Population std of the same (the envelope width).
    pub normalized_std: f64,
    /// Standard error of `normalized_mean`.
    pub stderr: f64,
    /// Environments with `r = 0`.
    pub n_failed: usize,
    pub n_total: usize,
}

impl SweepResult {
    pub fn alpha(&self) -> Option<f64> {
        self.strategy_a.alpha()
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.strategy_a.epsilon().or(self.strategy_b.epsilon())
    }

    /// Conditional mean in rounds.
    pub fn mean_rounds(&self) -> f64 {
        self.normalized_mean / self.densities.normalizer()
    }

    pub fn failure_rate(&self) -> f64 {
        self.n_failed as f64 / self.n_total as f64
    }
}

/// `(1 - p1 p2 q)^n`, the probability that no channel is open everywhere.
pub fn expected_failure_rate(d: &Densities, n: usize) -> f64 {
    (1.0 - d.triple_open()).powf(n as f64)
}

/// `E[X | env]` for replicate `i`, or `None` when the parties can never meet.
fn replicate_value(cell: &Cell, i: u64) -> Result<Option<f64>> {
    let d = &cell.densities;
    let mut rng = replicate_rng(cell.master_seed, i);
    let env = sample_environment(d, cell.n, &mut rng)?;
    let dists = cell
        .strategy_a
        .distribution(&env, Party::Alice, d)
        .and_then(|a| cell.strategy_b.distribution(&env, Party::Bob, d).map(|b| (a, b)));
    let (mu_a, mu_b) = match dists {
        Ok(pair) => pair,
        Err(Error::NoOpenChannels(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let r = sync_probability(&mu_a, &mu_b, &env);
    if r.is_zero() {
        return Ok(None);
    }
    Ok(Some(match cell.mode {
        Mode::ExactR => 1.0 / r.get(),
        Mode::MonteCarlo { runs } => {
            let cap = cell.max_rounds.unwrap_or_else(|| default_max_rounds(d));
            let total: f64 = (0..runs)
                .map(|_| match simulate_fixed(&mu_a, &mu_b, &env, cap, &mut rng) {
                    RoundOutcome::Synced { rounds, .. } => rounds as f64,
                    RoundOutcome::NoSync { max_rounds } => max_rounds as f64,
                })
                .sum();
            total / runs as f64
        }
    }))
}

fn run_replicates(cell: &Cell, order: impl IntoParallelIterator<Item = u64>) -> Result<Vec<(u64, Option<f64>)>> {
    order
        .into_par_iter()
        .map(|i| replicate_value(cell, i).map(|v| (i, v)))
        .collect()
}

fn aggregate(cell: &Cell, mut values: Vec<(u64, Option<f64>)>) -> SweepResult {
    values.sort_unstable_by_key(|(i, _)| *i);
    let norm = cell.densities.normalizer();
    let ok: Vec<f64> = values.iter().filter_map(|(_, v)| v.map(|x| x * norm)).collect();
    let summary = Summary::of(&ok);
    SweepResult {
        densities: cell.densities,
        strategy_a: cell.strategy_a,
        strategy_b: cell.strategy_b,
        n: cell.n,
        seed: cell.master_seed,
        normalized_mean: summary.mean,
        normalized_std: summary.std,
        stderr: summary.stderr(),
        n_failed: values.len() - ok.len(),
        n_total: values.len(),
    }
}

pub fn run_cell(cell: &Cell) -> Result<SweepResult> {
    cell.validate()?;
    let values = run_replicates(cell, 0..cell.replicates as u64)?;
    Ok(aggregate(cell, values))
}

/// [`run_cell`] evaluating replicates in the given order; the result must not
/// depend on it.
pub fn run_cell_in_order(cell: &Cell, order: &[u64]) -> Result<SweepResult> {
    cell.validate()?;
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..cell.replicates as u64).collect::<Vec<_>>() {
        return Err(Error::invalid("order must be a permutation of the replicate indices"));
    }
    let values = run_replicates(cell, order.to_vec())?;
    Ok(aggregate(cell, values))
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub densities_grid: Vec<Densities>,
    pub alpha_grid: Vec<f64>,
    pub epsilon: f64,
    pub n: usize,
    pub replicates: usize,
    pub master_seed: u64,
    pub strategy_pairs: Vec<(StrategySpec, StrategySpec)>,
    pub mode: Mode,
    pub allow_sparse: bool,
    /// Clocked partition width; `None` picks [`default_clocked_width`].
    pub clocked_width: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            densities_grid: vec![Densities::new(0.5, 0.5, 0.5).expect("valid")],
            alpha_grid: (1..=10).map(|i| i as f64 * 0.05).collect(),
            epsilon: 1.0,
            n: 10_000,
            replicates: DESK_REPLICATES,
            master_seed: 0,
            strategy_pairs: Vec::new(),
            mode: Mode::ExactR,
            allow_sparse: false,
            clocked_width: None,
        }
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.densities_grid.is_empty() {
            return Err(Error::invalid("config needs replicates >= 1 and a nonempty density grid"));
        }
        for d in &self.densities_grid {
            check_regime(d, self.n, self.allow_sparse)?;
        }
        Ok(())
    }

    pub fn cell(&self, densities: Densities, strategy_a: StrategySpec, strategy_b: StrategySpec) -> Cell {
        Cell {
            densities,
            strategy_a,
            strategy_b,
            n: self.n,
            replicates: self.replicates,
            mode: self.mode,
            master_seed: self.master_seed,
            allow_sparse: self.allow_sparse,
            max_rounds: None,
        }
    }
}

/// Geometric strategies on both sides for every `(alpha, densities)` cell,
/// ordered by alpha.
pub fn figure1_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepResult>> {
    cfg.validate()?;
    if cfg.alpha_grid.is_empty() || cfg.alpha_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::invalid("alpha grid must be a nonempty subset of (0, 1)"));
    }
    let mut alphas = cfg.alpha_grid.clone();
    alphas.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(alphas.len() * cfg.densities_grid.len());
    for alpha in alphas {
        let spec = StrategySpec::GeometricAware { alpha };
        for d in &cfg.densities_grid {
            out.push(run_cell(&cfg.cell(*d, spec, spec))?);
        }
    }
    Ok(out)
}

/// A heavy-tail sweep row with the polylog-normalized column.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliviousRow {
    pub result: SweepResult,
    /// `ln^(2+eps)(1 / (p1 p2 q))`.
    pub log_factor: f64,
    /// `normalized_mean / log_factor`.
    pub log_normalized: f64,
}

pub fn polylog_factor(d: &Densities, epsilon: f64) -> f64 {
    (1.0 / d.triple_open()).ln().powf(2.0 + epsilon)
}

/// Heavy-tail strategies on both sides for every density cell.
pub fn oblivious_sweep(cfg: &ExperimentConfig) -> Result<Vec<ObliviousRow>> {
    cfg.validate()?;
    if !(cfg.epsilon > 0.0 && cfg.epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {}", cfg.epsilon)));
    }
    let spec = StrategySpec::HeavyTailOblivious { epsilon: cfg.epsilon };
    cfg.densities_grid
        .iter()
        .map(|d| {
            let result = run_cell(&cfg.cell(*d, spec, spec))?;
            let log_factor = polylog_factor(d, cfg.epsilon);
            Ok(ObliviousRow {
                log_normalized: result.normalized_mean / log_factor,
                log_factor,
                result,
            })
        })
        .collect()
}

/// Arbitrary stationary strategy pairs over the density grid.
pub fn strategy_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepResult>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (a, b) in &cfg.strategy_pairs {
        for d in &cfg.densities_grid {
            out.push(run_cell(&cfg.cell(*d, *a, *b))?);
        }
    }
    Ok(out)
}

/// Clocked partition statistics for one density cell, in rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockedRow {
    pub densities: Densities,
    pub width: usize,
    pub n: usize,
    pub seed: u64,
    pub mean_rounds: f64,
    pub std_rounds: f64,
    pub stderr: f64,
    /// Environments where no residue class produced a rendezvous.
    pub n_failed: usize,
    pub n_total: usize,
    /// `1 / (4 min(p1, p2) q)`.
    pub lower_bound: f64,
    /// `2 / (min(p1, p2) q)`.
    pub upper_bound: f64,
}

impl ClockedRow {
    /// Also true when the mean or its error is undefined (too few syncs).
    pub fn violates_lower(&self) -> bool {
        !(self.mean_rounds + 3.0 * self.stderr >= self.lower_bound)
    }

    pub fn violates_upper(&self) -> bool {
        !(self.mean_rounds - 3.0 * self.stderr <= self.upper_bound)
    }
}

pub fn clocked_bounds(d: &Densities) -> (f64, f64) {
    let m = d.min_local() * d.q();
    (1.0 / (4.0 * m), 2.0 / m)
}

pub fn run_clocked_cell(d: &Densities, n: usize, width: usize, replicates: usize, master_seed: u64) -> Result<ClockedRow> {
    if width == 0 || replicates == 0 || n == 0 {
        return Err(Error::invalid("clocked cells need n, width and replicates >= 1"));
    }
    let outcomes: Vec<RoundOutcome> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let env = sample_environment(d, n, &mut replicate_rng(master_seed, i))?;
            simulate_clocked(&env, width, width as u64)
        })
        .collect::<Result<_>>()?;
    let rounds: Vec<f64> = outcomes.iter().filter_map(|o| o.rounds()).map(|t| t as f64).collect();
    let s = Summary::of(&rounds);
    let (lower_bound, upper_bound) = clocked_bounds(d);
    Ok(ClockedRow {
        densities: *d,
        width,
        n,
        seed: master_seed,
        mean_rounds: s.mean,
        std_rounds: s.std,
        stderr: s.stderr(),
        n_failed: replicates - rounds.len(),
        n_total: replicates,
        lower_bound,
        upper_bound,
    })
}

/// Clocked partition strategy on every density cell, with its bounds.
pub fn compare_clocked(cfg: &ExperimentConfig) -> Result<Vec<ClockedRow>> {
    cfg.validate()?;
    cfg.densities_grid
        .iter()
        .map(|d| {
            let width = cfg.clocked_width.unwrap_or_else(|| default_clocked_width(d, cfg.n));
            run_clocked_cell(d, cfg.n, width, cfg.replicates, cfg.master_seed)
        })
        .collect()
}

/// Column order of the sweep CSV.
pub const SWEEP_COLUMNS: [&str; 14] = [
    "p1",
    "p2",
    "q",
    "strategy_a",
    "strategy_b",
    "alpha",
    "epsilon",
    "n",
    "replicates",
    "normalized_mean",
    "normalized_std",
    "stderr",
    "n_failed",
    "seed",
];

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn sweep_record(r: &SweepResult) -> Vec<String> {
    vec![
        r.densities.p1().to_string(),
        r.densities.p2().to_string(),
        r.densities.q().to_string(),
        r.strategy_a.to_string(),
        r.strategy_b.to_string(),
        opt(r.alpha()),
        opt(r.epsilon()),
        r.n.to_string(),
        r.n_total.to_string(),
        r.normalized_mean.to_string(),
        r.normalized_std.to_string(),
        r.stderr.to_string(),
        r.n_failed.to_string(),
        r.seed.to_string(),
    ]
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record(sweep_record(r)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))
}

/// Sweep columns plus `log_factor` and `log_normalized_mean`.
pub fn write_oblivious_csv<W: Write>(out: W, rows: &[ObliviousRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = SWEEP_COLUMNS.to_vec();
    header.extend(["log_factor", "log_normalized_mean"]);
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = sweep_record(&r.result);
        rec.push(r.log_factor.to_string());
        rec.push(r.log_normalized.to_string());
        w.write_record(rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))
}

pub fn write_clocked_csv<W: Write>(out: W, rows: &[ClockedRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "p1", "p2", "q", "width", "n", "replicates", "mean_rounds", "std_rounds", "stderr", "n_failed",
        "lower_bound", "upper_bound", "violates_lower", "violates_upper", "seed",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.densities.p1().to_string(),
            r.densities.p2().to_string(),
            r.densities.q().to_string(),
            r.width.to_string(),
            r.n.to_string(),
            r.n_total.to_string(),
            r.mean_rounds.to_string(),
            r.std_rounds.to_string(),
            r.stderr.to_string(),
            r.n_failed.to_string(),
            r.lower_bound.to_string(),
            r.upper_bound.to_string(),
            r.violates_lower().to_string(),
            r.violates_upper().to_string(),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))
}

/// Whitespace-separated `alpha mean mean-std mean+std` blocks, one per density
/// triple, separated by two blank lines (gnuplot `index`).
pub fn write_gnuplot<W: Write>(mut out: W, rows: &[SweepResult]) -> std::io::Result<()> {
    let mut grids: Vec<Densities> = Vec::new();
    for r in rows {
        if !grids.contains(&r.densities) {
            grids.push(r.densities);
        }
    }
    for (block, d) in grids.iter().enumerate() {
        if block > 0 {
            writeln!(out)?;
            writeln!(out)?;
        }
        writeln!(out, "# p1={} p2={} q={}", d.p1(), d.p2(), d.q())?;
        writeln!(out, "# alpha normalized_mean lower upper")?;
        for r in rows.iter().filter(|r| r.densities == *d) {
            let Some(alpha) = r.alpha() else { continue };
            writeln!(
                out,
                "{} {} {} {}",
                alpha,
                r.normalized_mean,
                r.normalized_mean - r.normalized_std,
                r.normalized_mean + r.normalized_std
            )?;
        }
    }
    Ok(())
}
