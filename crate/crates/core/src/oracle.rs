//! Exact expectations for tiny channel counts by enumerating every
//! environment.
//!
//! For `n` channels there are `2^(3n)` equally structured outcomes of
//! `(A, B, E)`. For each one the fixed-strategy sync time is geometric with
//! mean `1/r`, so
//!
//! ```text
//! E[X | r > 0] = sum_{env: r>0} P(env) / r(env)  /  P(r > 0)
//! ```
//!
//! Strategy weights are evaluated here from their closed forms and `r` by a
//! plain loop over all channels, without going through [`crate::strategy`] or
//! [`crate::sync`], so the result is an independent check on those modules.

use crate::env::Densities;
use crate::error::{Error, Result};
use crate::strategy::StrategySpec;

/// Largest channel count accepted (`2^24` environments).
pub const MAX_ORACLE_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValue {
    /// `E[X | r > 0]` in rounds.
    pub conditional_mean: f64,
    /// `P(r > 0)`.
    pub p_sync: f64,
    /// `conditional_mean * p1 p2 q^2`.
    pub normalized_mean: f64,
}

/// Weight vector (length `n`, zero off-support) for one local mask.
fn closed_form_weights(spec: &StrategySpec, mask: u32, n: usize, other_p: f64, q: f64) -> Vec<f64> {
    let open: Vec<usize> = (0..n).filter(|j| mask >> j & 1 == 1).collect();
    let m = open.len() as i32;
    let mut w = vec![0.0; n];
    match *spec {
        StrategySpec::GeometricAware { alpha } => {
            let rate = alpha * other_p * q;
            let norm = 1.0 - (1.0 - rate).powi(m);
            for (i, &j) in open.iter().enumerate() {
                w[j] = rate * (1.0 - rate).powi(i as i32) / norm;
            }
        }
        StrategySpec::HeavyTailOblivious { epsilon } => {
            let raw = |rank: usize| {
                let x = rank as f64 + 1.0;
                1.0 / (x * x.ln().powf(1.0 + epsilon / 2.0))
            };
            let norm: f64 = (1..=open.len()).map(raw).sum();
            for (i, &j) in open.iter().enumerate() {
                w[j] = raw(i + 1) / norm;
            }
        }
        StrategySpec::UniformNaive => w.iter_mut().for_each(|x| *x = 1.0 / n as f64),
        StrategySpec::ClockedPartition { .. } => unreachable!("rejected by caller"),
    }
    w
}

fn mask_probability(mask: u32, n: usize, p: f64) -> f64 {
    let ones = mask.count_ones() as i32;
    p.powi(ones) * (1.0 - p).powi(n as i32 - ones)
}

/// Exhaustive `E[X | r > 0]` for two fixed strategies over `n` channels.
pub fn small_n_expectation(d: &Densities, n: usize, spec_a: &StrategySpec, spec_b: &StrategySpec) -> Result<OracleValue> {
    if n == 0 || n > MAX_ORACLE_CHANNELS {
        return Err(Error::invalid(format!(
            "oracle supports 1..={MAX_ORACLE_CHANNELS} channels, got {n}"
        )));
    }
    for spec in [spec_a, spec_b] {
        if !spec.is_stationary() {
            return Err(Error::NotStationary(spec.to_string()));
        }
        spec.validate()?;
    }
    let masks = 1u32 << n;
    let wa: Vec<Vec<f64>> = (0..masks)
        .map(|m| closed_form_weights(spec_a, m, n, d.p2(), d.q()))
        .collect();
    let wb: Vec<Vec<f64>> = (0..masks)
        .map(|m| closed_form_weights(spec_b, m, n, d.p1(), d.q()))
        .collect();

    let mut weighted_inverse = 0.0;
    let mut p_sync = 0.0;
    for a in 0..masks {
        let pa = mask_probability(a, n, d.p1());
        for b in 0..masks {
            let pab = pa * mask_probability(b, n, d.p2());
            for e in 0..masks {
                let mut r = 0.0;
                for j in 0..n {
                    let abe = (a >> j) & (b >> j) & (e >> j) & 1;
                    r += wa[a as usize][j] * wb[b as usize][j] * abe as f64;
                }
                if r > 0.0 {
                    let p = pab * mask_probability(e, n, d.q());
                    p_sync += p;
                    weighted_inverse += p / r;
                }
            }
        }
    }
    let conditional_mean = weighted_inverse / p_sync;
    Ok(OracleValue {
        conditional_mean,
        p_sync,
        normalized_mean: conditional_mean * d.normalizer(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_channel_full_openness() {
        let d = Densities::new(1.0, 1.0, 1.0).unwrap();
        let g = StrategySpec::GeometricAware { alpha: 0.2 };
        let v = small_n_expectation(&d, 1, &g, &g).unwrap();
        assert!((v.conditional_mean - 1.0).abs() < 1e-12);
        assert_eq!(v.p_sync, 1.0);
    }

    #[test]
    fn sync_probability_is_triple_open_complement() {
        // r > 0 iff some channel is open everywhere, for strategies supported on open channels
        let d = Densities::new(0.5, 0.5, 0.5).unwrap();
        let g = StrategySpec::GeometricAware { alpha: 1.0 / 6.0 };
        let v = small_n_expectation(&d, 4, &g, &g).unwrap();
        assert!((v.p_sync - (1.0 - 0.875f64.powi(4))).abs() < 1e-14);
    }

    #[test]
    fn uniform_full_local_openness_by_hand() {
        // p1 = p2 = 1, n = 2: r = |E| / 4, so E[X | r>0] = (2q(1-q) * 4 + q^2 * 2) / (1 - (1-q)^2)
        let q = 0.5;
        let d = Densities::new(1.0, 1.0, q).unwrap();
        let u = StrategySpec::UniformNaive;
        let v = small_n_expectation(&d, 2, &u, &u).unwrap();
        let expected = (2.0 * q * (1.0 - q) * 4.0 + q * q * 2.0) / (1.0 - (1.0 - q) * (1.0 - q));
        assert!((v.conditional_mean - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_large_n_and_clocked() {
        let d = Densities::new(0.5, 0.5, 0.5).unwrap();
        let g = StrategySpec::GeometricAware { alpha: 0.1 };
        assert!(small_n_expectation(&d, 9, &g, &g).is_err());
        assert!(small_n_expectation(&d, 0, &g, &g).is_err());
        let c = StrategySpec::ClockedPartition { width: None };
        assert!(small_n_expectation(&d, 3, &c, &g).is_err());
    }
}
