//! Per-round success probability and round-by-round simulation.

use rand::Rng;

use crate::env::{open_index, Densities, Environment, Party};
use crate::error::{Error, Result};
use crate::strategy::{sample_channel, ChannelDistribution, ClockedTable, StrategySpec};

/// Probability that one round of two fixed strategies ends in a rendezvous.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SyncProbability(f64);

impl SyncProbability {
    pub fn new(r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::invalid(format!("sync probability {r} outside [0, 1]")));
        }
        Ok(SyncProbability(r))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

/// `sum_j mu_a(j) mu_b(j) A_j B_j E_j`, walking only the common support.
pub fn sync_probability(mu_a: &ChannelDistribution, mu_b: &ChannelDistribution, env: &Environment) -> SyncProbability {
    let (sa, wa) = (mu_a.support(), mu_a.weights());
    let (sb, wb) = (mu_b.support(), mu_b.weights());
    debug_assert!(sa.last().is_none_or(|&j| j < env.n()));
    debug_assert!(sb.last().is_none_or(|&j| j < env.n()));
    let (mut i, mut k) = (0, 0);
    let mut r = 0.0;
    while i < sa.len() && k < sb.len() {
        match sa[i].cmp(&sb[k]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => k += 1,
            std::cmp::Ordering::Equal => {
                if env.is_triple_open(sa[i]) {
                    r += wa[i] * wb[k];
                }
                i += 1;
                k += 1;
            }
        }
    }
    SyncProbability(r.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpectedRounds {
    Finite(f64),
    /// The parties can never meet.
    Infinite,
}

impl ExpectedRounds {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExpectedRounds::Finite(x) => Some(x),
            ExpectedRounds::Infinite => None,
        }
    }
}

/// Mean of the geometric sync time of two fixed strategies.
pub fn expected_sync_time_fixed(r: SyncProbability) -> ExpectedRounds {
    if r.is_zero() {
        ExpectedRounds::Infinite
    } else {
        ExpectedRounds::Finite(1.0 / r.0)
    }
}

/// Result of one simulated rendezvous attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundOutcome {
    /// Met on `channel` (open in all three environments) in round `rounds`.
    Synced { rounds: u64, channel: usize },
    /// No rendezvous within `max_rounds`.
    NoSync { max_rounds: u64 },
}

impl RoundOutcome {
    pub fn rounds(&self) -> Option<u64> {
        match *self {
            RoundOutcome::Synced { rounds, .. } => Some(rounds),
            RoundOutcome::NoSync { .. } => None,
        }
    }

    pub fn channel(&self) -> Option<usize> {
        match *self {
            RoundOutcome::Synced { channel, .. } => Some(channel),
            RoundOutcome::NoSync { .. } => None,
        }
    }
}

/// `100 * ceil(1 / (p1 p2 q^2))` rounds.
pub fn default_max_rounds(d: &Densities) -> u64 {
    100 * (1.0 / d.normalizer()).ceil() as u64
}

/// Both parties draw independently from their fixed distributions each round.
pub fn simulate_fixed<R: Rng + ?Sized>(
    mu_a: &ChannelDistribution,
    mu_b: &ChannelDistribution,
    env: &Environment,
    max_rounds: u64,
    rng: &mut R,
) -> RoundOutcome {
    for t in 1..=max_rounds {
        let ja = sample_channel(mu_a, rng);
        let jb = sample_channel(mu_b, rng);
        if ja == jb && env.is_triple_open(ja) {
            return RoundOutcome::Synced { rounds: t, channel: ja };
        }
    }
    RoundOutcome::NoSync { max_rounds }
}

/// Round-by-round simulation of two stationary strategies.
///
/// A party without open channels cannot transmit, so the attempt ends at
/// once with [`RoundOutcome::NoSync`].
pub fn simulate_stationary<R: Rng + ?Sized>(
    spec_a: &StrategySpec,
    spec_b: &StrategySpec,
    env: &Environment,
    d: &Densities,
    max_rounds: u64,
    rng: &mut R,
) -> Result<RoundOutcome> {
    if max_rounds == 0 {
        return Err(Error::invalid("max_rounds must be at least 1"));
    }
    let dists = spec_a
        .distribution(env, Party::Alice, d)
        .and_then(|a| spec_b.distribution(env, Party::Bob, d).map(|b| (a, b)));
    match dists {
        Ok((mu_a, mu_b)) => Ok(simulate_fixed(&mu_a, &mu_b, env, max_rounds, rng)),
        Err(Error::NoOpenChannels(_)) => Ok(RoundOutcome::NoSync { max_rounds }),
        Err(e) => Err(e),
    }
}

/// Clocked partition strategy on a shared clock.
///
/// Choices are deterministic, so once all `width` residue classes have been
/// tried without success the remaining rounds repeat them and cannot succeed.
pub fn simulate_clocked(env: &Environment, width: usize, max_rounds: u64) -> Result<RoundOutcome> {
    if max_rounds == 0 || width == 0 {
        return Err(Error::invalid("simulate_clocked needs max_rounds >= 1 and width >= 1"));
    }
    let alice = ClockedTable::new(&open_index(env, Party::Alice), width);
    let bob = ClockedTable::new(&open_index(env, Party::Bob), width);
    for t in 1..=max_rounds.min(width as u64) {
        if let (Some(ja), Some(jb)) = (alice.choice(t), bob.choice(t)) {
            if ja == jb && env.e().get(ja) {
                return Ok(RoundOutcome::Synced { rounds: t, channel: ja });
            }
        }
    }
    Ok(RoundOutcome::NoSync { max_rounds })
}
