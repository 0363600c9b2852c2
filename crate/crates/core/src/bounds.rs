//! Dyadic-level diagnostics for the stationary lower bound, and empirical
//! checks of every bound constant.
//!
//! A distribution `mu` is split into levels `S_k = { j : 2^-k < mu(j) <= 2^(-k+1) }`.
//! `T_k` keeps the channels of `S_k` that are open in the two environments
//! the party cannot see (`B, E` for Alice, `A, E` for Bob). With `beta = 20`,
//! the per-round success probability `r` falls below `C p1 p2 q^2` with
//! `C = 128 beta` for at least half of all environments, whatever the
//! stationary strategies; the expected sync time is then at least
//! `c / (p1 p2 q^2)` with `c = 1 / (8 C)`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::env::{replicate_rng, sample_environment, Densities, Environment, Party};
use crate::error::{Error, Result};
use crate::harness::SweepResult;
use crate::stats::binomial_stderr;
use crate::strategy::{ChannelDistribution, StrategySpec};
use crate::sync::sync_probability;

/// Deviation multiplier for the large-`T_k` events.
pub const BETA: f64 = 20.0;

/// `C = 128 * beta`.
pub const C_UPPER: f64 = 128.0 * BETA;

/// `c = 1 / (8 C)`.
pub const C_LOWER: f64 = 1.0 / (8.0 * C_UPPER);

/// Each bad event has probability below this.
pub const BAD_EVENT_LIMIT: f64 = 0.125;

/// `2^e`, exact over the whole normal and subnormal range (0 below it).
pub fn pow2(e: i32) -> f64 {
    if e >= -1022 {
        assert!(e <= 1023, "2^{e} overflows");
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if e >= -1074 {
        f64::from_bits(1u64 << (e + 1074))
    } else {
        0.0
    }
}

/// The level `k` with `2^-k < mu <= 2^(-k+1)`.
pub fn dyadic_level(mu: f64) -> i32 {
    assert!(mu > 0.0 && mu.is_finite(), "level of {mu} undefined");
    let mut k = (-mu.log2()).floor() as i32 + 1;
    while mu > pow2(-k + 1) {
        k -= 1;
    }
    while mu <= pow2(-k) {
        k += 1;
    }
    k
}

/// `log2(1 / (p_other q)) - 3`; levels below it should carry no `T_k`.
pub fn k_threshold(p_other: f64, q: f64) -> f64 {
    (1.0 / (p_other * q)).log2() - 3.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyadicDecomposition {
    pub side: Party,
    /// `S_k`, ascending channel ids per level.
    pub levels: BTreeMap<i32, Vec<usize>>,
    /// `T_k`, same keys as `levels` (possibly empty).
    pub t_levels: BTreeMap<i32, Vec<usize>>,
}

impl DyadicDecomposition {
    pub fn s_count(&self, k: i32) -> usize {
        self.levels.get(&k).map_or(0, Vec::len)
    }

    pub fn t_count(&self, k: i32) -> usize {
        self.t_levels.get(&k).map_or(0, Vec::len)
    }

    /// `|S_k| < 2^k` for every level.
    pub fn level_sizes_ok(&self) -> bool {
        self.levels.iter().all(|(&k, s)| k >= 64 || (s.len() as u128) < (1u128 << k.max(0)))
    }

    /// `sum_k sqrt(|T_k|) 2^-k`.
    pub fn sqrt_mass(&self) -> f64 {
        self.t_levels
            .iter()
            .map(|(&k, t)| (t.len() as f64).sqrt() * pow2(-k))
            .sum()
    }
}

pub fn decompose(dist: &ChannelDistribution, env: &Environment, side: Party) -> DyadicDecomposition {
    let (x, e) = (env.local(side.other()), env.e());
    let mut levels: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    let mut t_levels: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (j, mu) in dist.iter() {
        let k = dyadic_level(mu);
        levels.entry(k).or_default().push(j);
        let t = t_levels.entry(k).or_default();
        if x.get(j) && e.get(j) {
            t.push(j);
        }
    }
    DyadicDecomposition { side, levels, t_levels }
}

/// The chain `r <= sum_{k,l} |T^a_k ∩ T^b_l| 2^(-k+1) 2^(-l+1)
/// <= 4 (sum_k sqrt|T^a_k| 2^-k)(sum_l sqrt|T^b_l| 2^-l)` on one environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainCheck {
    pub r: f64,
    pub intersection_bound: f64,
    pub sqrt_bound: f64,
}

impl ChainCheck {
    /// Both inequalities, up to summation rounding.
    pub fn holds(&self) -> bool {
        let slack = 1.0 + 1e-12;
        self.r <= self.intersection_bound * slack && self.intersection_bound <= self.sqrt_bound * slack
    }
}

pub fn cauchy_schwarz_chain(
    mu_a: &ChannelDistribution,
    mu_b: &ChannelDistribution,
    env: &Environment,
    dec_a: &DyadicDecomposition,
    dec_b: &DyadicDecomposition,
) -> ChainCheck {
    let r = sync_probability(mu_a, mu_b, env).get();
    // |T^a_k ∩ T^b_l| counts triple-open channels at level k for Alice and l for Bob.
    let mut level_of_b = std::collections::HashMap::new();
    for (&l, t) in &dec_b.t_levels {
        for &j in t {
            level_of_b.insert(j, l);
        }
    }
    let mut intersection_bound = 0.0;
    for (&k, t) in &dec_a.t_levels {
        for j in t {
            if let Some(&l) = level_of_b.get(j) {
                intersection_bound += pow2(-k + 1) * pow2(-l + 1);
            }
        }
    }
    ChainCheck {
        r,
        intersection_bound,
        sqrt_bound: 4.0 * dec_a.sqrt_mass() * dec_b.sqrt_mass(),
    }
}

fn require_stationary(spec: &StrategySpec) -> Result<()> {
    if spec.is_stationary() {
        Ok(())
    } else {
        Err(Error::NotStationary(spec.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckReport {
    pub densities: Densities,
    pub strategy_a: StrategySpec,
    pub strategy_b: StrategySpec,
    pub n: usize,
    pub samples: usize,
    /// Fraction of environments with `r < C p1 p2 q^2`.
    pub fraction_below: f64,
    pub constant_used: f64,
    pub k_threshold_a: f64,
    pub k_threshold_b: f64,
    pub beta: f64,
}

impl BoundCheckReport {
    pub fn stderr(&self) -> f64 {
        binomial_stderr(self.fraction_below, self.samples)
    }

    /// At least half of the environments fall below, with 3-standard-error slack.
    pub fn passes(&self) -> bool {
        self.fraction_below + 3.0 * self.stderr() >= 0.5
    }
}

/// Per-environment success probability; a party without open channels gives 0.
fn sampled_r(d: &Densities, spec_a: &StrategySpec, spec_b: &StrategySpec, env: &Environment) -> Result<f64> {
    let mu_a = spec_a.distribution(env, Party::Alice, d);
    let mu_b = spec_b.distribution(env, Party::Bob, d);
    match (mu_a, mu_b) {
        (Ok(a), Ok(b)) => Ok(sync_probability(&a, &b, env).get()),
        (Err(Error::NoOpenChannels(_)), _) | (_, Err(Error::NoOpenChannels(_))) => Ok(0.0),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

pub fn check_r_upper(
    d: &Densities,
    spec_a: &StrategySpec,
    spec_b: &StrategySpec,
    n: usize,
    samples: usize,
    master_seed: u64,
) -> Result<BoundCheckReport> {
    check_r_upper_with(d, spec_a, spec_b, n, samples, master_seed, C_UPPER)
}

/// [`check_r_upper`] with an explicit constant `C`.
pub fn check_r_upper_with(
    d: &Densities,
    spec_a: &StrategySpec,
    spec_b: &StrategySpec,
    n: usize,
    samples: usize,
    master_seed: u64,
    constant: f64,
) -> Result<BoundCheckReport> {
    if samples < 100 {
        return Err(Error::invalid(format!("check_r_upper needs at least 100 samples, got {samples}")));
    }
    require_stationary(spec_a)?;
    require_stationary(spec_b)?;
    spec_a.validate()?;
    spec_b.validate()?;
    let threshold = constant * d.normalizer();
    let below: Vec<bool> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let env = sample_environment(d, n, &mut replicate_rng(master_seed, i))?;
            Ok(sampled_r(d, spec_a, spec_b, &env)? < threshold)
        })
        .collect::<Result<_>>()?;
    let hits = below.iter().filter(|b| **b).count();
    Ok(BoundCheckReport {
        densities: *d,
        strategy_a: *spec_a,
        strategy_b: *spec_b,
        n,
        samples,
        fraction_below: hits as f64 / samples as f64,
        constant_used: constant,
        k_threshold_a: k_threshold(d.p2(), d.q()),
        k_threshold_b: k_threshold(d.p1(), d.q()),
        beta: BETA,
    })
}

/// Observed frequency of one bad event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventFrequency {
    pub hits: usize,
    pub samples: usize,
}

impl EventFrequency {
    pub fn frequency(&self) -> f64 {
        self.hits as f64 / self.samples as f64
    }

    /// Binomial standard error at the limit 1/8.
    pub fn stderr(&self) -> f64 {
        binomial_stderr(BAD_EVENT_LIMIT, self.samples)
    }

    pub fn passes(&self) -> bool {
        self.frequency() < BAD_EVENT_LIMIT + 3.0 * self.stderr()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TkEventReport {
    pub densities: Densities,
    pub strategy: StrategySpec,
    pub n: usize,
    pub samples: usize,
    pub beta: f64,
    pub k_threshold_a: f64,
    pub k_threshold_b: f64,
    /// Some `k >= K_a` with `|T^a_k| > beta 2^k p2 q`.
    pub large_a: EventFrequency,
    /// Some `k >= K_b` with `|T^b_k| > beta 2^k p1 q`.
    pub large_b: EventFrequency,
    /// Some `k < K_a` with `T^a_k` nonempty.
    pub nonempty_a: EventFrequency,
    /// Some `k < K_b` with `T^b_k` nonempty.
    pub nonempty_b: EventFrequency,
    /// Environments where some `|S_k| >= 2^k` (must be 0).
    pub level_size_violations: usize,
    /// Environments where the Cauchy-Schwarz chain fails (must be 0).
    pub chain_violations: usize,
}

impl TkEventReport {
    pub fn events(&self) -> [(&'static str, EventFrequency); 4] {
        [
            ("large_a", self.large_a),
            ("large_b", self.large_b),
            ("nonempty_a", self.nonempty_a),
            ("nonempty_b", self.nonempty_b),
        ]
    }

    pub fn passes(&self) -> bool {
        self.level_size_violations == 0
            && self.chain_violations == 0
            && self.events().iter().all(|(_, f)| f.passes())
    }
}

#[derive(Default, Clone, Copy)]
struct EnvFlags {
    large_a: bool,
    large_b: bool,
    nonempty_a: bool,
    nonempty_b: bool,
    size_violation: bool,
    chain_violation: bool,
}

fn side_events(dec: &DyadicDecomposition, k_thr: f64, scale: f64, beta: f64) -> (bool, bool) {
    let mut large = false;
    let mut nonempty = false;
    for (&k, t) in &dec.t_levels {
        if (k as f64) >= k_thr {
            large |= t.len() as f64 > beta * 2f64.powi(k) * scale;
        } else {
            nonempty |= !t.is_empty();
        }
    }
    (large, nonempty)
}

/// Frequencies of the four bad events over sampled environments, both parties
/// running `spec`.
pub fn check_tk_events(
    d: &Densities,
    spec: &StrategySpec,
    n: usize,
    samples: usize,
    master_seed: u64,
    beta: f64,
) -> Result<TkEventReport> {
    if samples < 1000 {
        return Err(Error::invalid(format!("check_tk_events needs at least 1000 samples, got {samples}")));
    }
    if !(beta > 1.0) {
        return Err(Error::invalid(format!("beta must exceed 1, got {beta}")));
    }
    require_stationary(spec)?;
    spec.validate()?;
    let (ka, kb) = (k_threshold(d.p2(), d.q()), k_threshold(d.p1(), d.q()));
    let flags: Vec<EnvFlags> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let env = sample_environment(d, n, &mut replicate_rng(master_seed, i))?;
            let mut f = EnvFlags::default();
            let mu_a = spec.distribution(&env, Party::Alice, d);
            let mu_b = spec.distribution(&env, Party::Bob, d);
            let dec_a = mu_a.as_ref().ok().map(|m| decompose(m, &env, Party::Alice));
            let dec_b = mu_b.as_ref().ok().map(|m| decompose(m, &env, Party::Bob));
            if let Some(dec) = &dec_a {
                (f.large_a, f.nonempty_a) = side_events(dec, ka, d.p2() * d.q(), beta);
                f.size_violation |= !dec.level_sizes_ok();
            }
            if let Some(dec) = &dec_b {
                (f.large_b, f.nonempty_b) = side_events(dec, kb, d.p1() * d.q(), beta);
                f.size_violation |= !dec.level_sizes_ok();
            }
            if let (Ok(a), Ok(b), Some(da), Some(db)) = (&mu_a, &mu_b, &dec_a, &dec_b) {
                f.chain_violation = !cauchy_schwarz_chain(a, b, &env, da, db).holds();
            }
            for r in [&mu_a, &mu_b] {
                if let Err(e) = r {
                    if !matches!(e, Error::NoOpenChannels(_)) {
                        return Err(e.clone());
                    }
                }
            }
            Ok(f)
        })
        .collect::<Result<_>>()?;
    let count = |pick: fn(&EnvFlags) -> bool| EventFrequency {
        hits: flags.iter().filter(|f| pick(f)).count(),
        samples,
    };
    Ok(TkEventReport {
        densities: *d,
        strategy: *spec,
        n,
        samples,
        beta,
        k_threshold_a: ka,
        k_threshold_b: kb,
        large_a: count(|f| f.large_a),
        large_b: count(|f| f.large_b),
        nonempty_a: count(|f| f.nonempty_a),
        nonempty_b: count(|f| f.nonempty_b),
        level_size_violations: count(|f| f.size_violation).hits,
        chain_violations: count(|f| f.chain_violation).hits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBoundCheck {
    /// `c = 1 / (8 C)`.
    pub c: f64,
    pub normalized_mean: f64,
    /// `normalized_mean / c`.
    pub margin: f64,
    pub passed: bool,
}

/// The measured normalized mean sync time must exceed `c = 1 / (8 C)`.
pub fn stationary_lower_bound_check(report: &BoundCheckReport, sweep: &SweepResult) -> Result<LowerBoundCheck> {
    for spec in [&report.strategy_a, &report.strategy_b, &sweep.strategy_a, &sweep.strategy_b] {
        require_stationary(spec)?;
    }
    if report.densities != sweep.densities {
        return Err(Error::InputMismatch(format!(
            "report densities {} differ from sweep densities {}",
            report.densities, sweep.densities
        )));
    }
    let c = 1.0 / (8.0 * report.constant_used);
    Ok(LowerBoundCheck {
        c,
        normalized_mean: sweep.normalized_mean,
        margin: sweep.normalized_mean / c,
        passed: sweep.normalized_mean > c,
    })
}

/// One CSV row per `(densities, strategy pair, constant)`.
pub fn write_bound_reports_csv<W: std::io::Write>(out: W, reports: &[BoundCheckReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record([
        "p1", "p2", "q", "strategy_a", "strategy_b", "n", "samples", "constant", "fraction_below", "stderr",
        "k_threshold_a", "k_threshold_b", "beta", "pass",
    ])
    .map_err(io)?;
    for r in reports {
        w.write_record([
            r.densities.p1().to_string(),
            r.densities.p2().to_string(),
            r.densities.q().to_string(),
            r.strategy_a.to_string(),
            r.strategy_b.to_string(),
            r.n.to_string(),
            r.samples.to_string(),
            r.constant_used.to_string(),
            r.fraction_below.to_string(),
            r.stderr().to_string(),
            r.k_threshold_a.to_string(),
            r.k_threshold_b.to_string(),
            r.beta.to_string(),
            r.passes().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(())
}
