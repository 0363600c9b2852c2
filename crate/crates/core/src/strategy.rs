//! Per-round channel distributions.
//!
//! A fixed strategy is a single distribution over channel ids that a party
//! samples from independently every round. Three families are built from a
//! party's open-channel list (or, for the naive baseline, from the channel
//! count alone). The clocked partition strategy is deterministic and needs a
//! shared round counter; it lives here as [`clocked_choice`].

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::Rng;

use crate::env::{open_index, Densities, Environment, OpenIndex, Party};
use crate::error::{Error, Result};
use crate::stats::pairwise_sum;

/// Finite distribution over channel ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDistribution {
    support: Vec<usize>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl ChannelDistribution {
    /// Normalizes `raw` (positive, finite) over a strictly increasing support.
    pub fn from_weights(support: Vec<usize>, raw: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::invalid("distribution needs a nonempty support"));
        }
        if support.len() != raw.len() {
            return Err(Error::invalid("support and weights differ in length"));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("support must be strictly increasing"));
        }
        if raw.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("weights must be positive and finite"));
        }
        let total = pairwise_sum(&raw);
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        if weights.iter().any(|w| *w <= 0.0) {
            return Err(Error::invalid("weight underflowed to zero after normalization"));
        }
        let cumulative = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Ok(ChannelDistribution { support, weights, cumulative })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Probability assigned to `channel` (0 outside the support).
    pub fn weight_of(&self, channel: usize) -> f64 {
        self.support
            .binary_search(&channel)
            .map_or(0.0, |k| self.weights[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Truncated geometric law over the open channels: the `j`-th open channel
/// (1-based) gets weight proportional to `(1 - rate)^(j-1) * rate`.
///
/// Tail channels whose weight would underflow are left out of the support.
pub fn geometric_strategy(open: &OpenIndex, rate: f64) -> Result<ChannelDistribution> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!("geometric rate must lie in (0, 1), got {rate}")));
    }
    if open.is_empty() {
        return Err(Error::NoOpenChannels(open.side()));
    }
    let keep = 1.0 - rate;
    let mut raw = Vec::with_capacity(open.len());
    let mut w = 1.0f64;
    for _ in open.indices() {
        if w < f64::MIN_POSITIVE {
            break;
        }
        raw.push(w);
        w *= keep;
    }
    let support = open.indices()[..raw.len()].to_vec();
    ChannelDistribution::from_weights(support, raw)
}

/// Unnormalized heavy-tail weight of the `rank`-th open channel (1-based).
pub fn heavy_tail_weight(rank: usize, epsilon: f64) -> f64 {
    let x = (rank + 1) as f64;
    1.0 / (x * x.ln().powf(1.0 + epsilon / 2.0))
}

/// Density-oblivious strategy: the `j`-th open channel gets weight
/// proportional to `1 / ((j+1) ln^(1+eps/2)(j+1))`.
pub fn heavy_tail_strategy(open: &OpenIndex, epsilon: f64) -> Result<ChannelDistribution> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if open.is_empty() {
        return Err(Error::NoOpenChannels(open.side()));
    }
    let raw = (1..=open.len()).map(|j| heavy_tail_weight(j, epsilon)).collect();
    ChannelDistribution::from_weights(open.indices().to_vec(), raw)
}

/// Uniform over all `n` channels, open or not.
pub fn uniform_strategy(n: usize) -> Result<ChannelDistribution> {
    if n == 0 {
        return Err(Error::invalid("channel count must be at least 1"));
    }
    ChannelDistribution::from_weights((0..n).collect(), vec![1.0; n])
}

/// Inverse-CDF draw.
pub fn sample_channel<R: Rng + ?Sized>(dist: &ChannelDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let k = dist.cumulative.partition_point(|&c| c <= u);
    dist.support[k.min(dist.support.len() - 1)]
}

/// Clocked partition strategy: in round `round` (1-based) a party plays the
/// smallest of its open channels whose id is congruent to `round - 1` modulo
/// `width`.
pub fn clocked_choice(open: &OpenIndex, round: u64, width: usize) -> Option<usize> {
    assert!(width >= 1 && round >= 1, "clocked_choice needs width >= 1 and round >= 1");
    let class = ((round - 1) % width as u64) as usize;
    open.indices().iter().copied().find(|j| j % width == class)
}

/// Precomputed clocked choices for every residue class.
#[derive(Debug, Clone)]
pub struct ClockedTable {
    choices: Vec<Option<usize>>,
}

impl ClockedTable {
    pub fn new(open: &OpenIndex, width: usize) -> Self {
        assert!(width >= 1, "clocked width must be at least 1");
        let mut choices = vec![None; width];
        for &j in open.indices().iter().rev() {
            choices[j % width] = Some(j);
        }
        ClockedTable { choices }
    }

    pub fn width(&self) -> usize {
        self.choices.len()
    }

    pub fn choice(&self, round: u64) -> Option<usize> {
        self.choices[((round - 1) % self.choices.len() as u64) as usize]
    }
}

/// Default clocked width for `n` channels.
///
/// Residue classes are sized so that each party has an open channel in a
/// class except with probability about 1e-3, and the width is as large as
/// that allows, so that the cycle of distinct classes rarely runs out before
/// a rendezvous.
pub fn default_clocked_width(d: &Densities, n: usize) -> usize {
    let p = d.min_local();
    let class_size = if p >= 1.0 {
        1
    } else {
        (1000f64.ln() / -(1.0 - p).ln()).ceil().max(1.0) as usize
    };
    (n / class_size).max(1)
}

/// Upper end of the recommended geometric multiplier range.
pub const ALPHA_PROVEN_MAX: f64 = 0.25;

/// Rate multiplier used in the upper-bound construction.
pub const ALPHA_DEFAULT: f64 = 1.0 / 6.0;

/// Which strategy a party runs, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategySpec {
    /// Geometric over open channels with rate `alpha * p_other * q`.
    GeometricAware { alpha: f64 },
    /// Heavy-tail weights over open channel ranks; needs no densities.
    HeavyTailOblivious { epsilon: f64 },
    /// Uniform over all channels.
    UniformNaive,
    /// Deterministic residue-class strategy; needs a common clock.
    /// `None` picks [`default_clocked_width`].
    ClockedPartition { width: Option<usize> },
}

impl StrategySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StrategySpec::GeometricAware { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
                }
                if alpha >= ALPHA_PROVEN_MAX {
                    warn!("alpha = {alpha} is outside (0, 1/4), where the upper bound is guaranteed");
                }
            }
            StrategySpec::HeavyTailOblivious { epsilon } => {
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
                }
            }
            StrategySpec::UniformNaive => {}
            StrategySpec::ClockedPartition { width } => {
                if width == Some(0) {
                    return Err(Error::invalid("clocked width must be at least 1"));
                }
            }
        }
        Ok(())
    }

    pub fn is_stationary(&self) -> bool {
        !matches!(self, StrategySpec::ClockedPartition { .. })
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            StrategySpec::GeometricAware { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            StrategySpec::HeavyTailOblivious { epsilon } => Some(epsilon),
            _ => None,
        }
    }

    /// The fixed distribution `side` plays in `env`.
    pub fn distribution(&self, env: &Environment, side: Party, d: &Densities) -> Result<ChannelDistribution> {
        match *self {
            StrategySpec::GeometricAware { alpha } => {
                geometric_strategy(&open_index(env, side), alpha * d.local(side.other()) * d.q())
            }
            StrategySpec::HeavyTailOblivious { epsilon } => heavy_tail_strategy(&open_index(env, side), epsilon),
            StrategySpec::UniformNaive => uniform_strategy(env.n()),
            StrategySpec::ClockedPartition { .. } => Err(Error::NotStationary(self.to_string())),
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategySpec::GeometricAware { alpha } => write!(f, "geometric:alpha={alpha}"),
            StrategySpec::HeavyTailOblivious { epsilon } => write!(f, "heavy-tail:epsilon={epsilon}"),
            StrategySpec::UniformNaive => f.write_str("uniform"),
            StrategySpec::ClockedPartition { width: None } => f.write_str("clocked"),
            StrategySpec::ClockedPartition { width: Some(w) } => write!(f, "clocked:width={w}"),
        }
    }
}

/// Parses `kind[:key=value[,key=value]]`, e.g. `geometric:alpha=0.1667`,
/// `heavy-tail:epsilon=1`, `uniform`, `clocked:width=16`.
impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let mut params = Vec::new();
        for item in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("strategy parameter {item:?} is not key=value")))?;
            params.push((k.trim(), v.trim()));
        }
        let mut take = |key: &str| params.iter().position(|(k, _)| *k == key).map(|i| params.remove(i).1);
        let float = |v: &str| v.parse::<f64>().map_err(|e| Error::Parse(format!("{v:?}: {e}")));
        let spec = match kind {
            "geometric" | "geometric-aware" => StrategySpec::GeometricAware {
                alpha: take("alpha").map(float).transpose()?.unwrap_or(ALPHA_DEFAULT),
            },
            "heavy-tail" | "oblivious" => StrategySpec::HeavyTailOblivious {
                epsilon: take("epsilon").map(float).transpose()?.unwrap_or(1.0),
            },
            "uniform" | "naive" => StrategySpec::UniformNaive,
            "clocked" => StrategySpec::ClockedPartition {
                width: take("width")
                    .map(|v| v.parse::<usize>().map_err(|e| Error::Parse(format!("{v:?}: {e}"))))
                    .transpose()?,
            },
            other => return Err(Error::Parse(format!("unknown strategy kind {other:?}"))),
        };
        if let Some((k, _)) = params.first() {
            return Err(Error::Parse(format!("unknown parameter {k:?} for strategy {kind}")));
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{replicate_rng, sample_environment};
    use proptest::prelude::*;

    fn alice(bits: &[u8]) -> OpenIndex {
        let zeros = vec![0u8; bits.len()];
        open_index(&Environment::from_bits(bits, &zeros, &zeros).unwrap(), Party::Alice)
    }

    fn open_at(ids: &[usize], n: usize) -> OpenIndex {
        let mut bits = vec![0u8; n];
        ids.iter().for_each(|&i| bits[i] = 1);
        alice(&bits)
    }

    #[test]
    fn geometric_singleton() {
        let d = geometric_strategy(&open_at(&[3], 5), 0.3).unwrap();
        assert_eq!(d.support(), &[3]);
        assert_eq!(d.weights(), &[1.0]);
    }

    #[test]
    fn geometric_three_channels() {
        let d = geometric_strategy(&open_at(&[2, 5, 9], 10), 0.5).unwrap();
        assert_eq!(d.support(), &[2, 5, 9]);
        for (w, e) in d.weights().iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn geometric_truncated_normalizer() {
        // first weight (1/6) / (1 - (5/6)^100), normalizer checked by direct summation
        let rate: f64 = 1.0 / 6.0;
        let direct: f64 = (0..100).map(|j| (1.0 - rate).powi(j) * rate).sum();
        let closed = 1.0 - (5.0f64 / 6.0).powi(100);
        assert!((direct - closed).abs() < 1e-14);
        let d = geometric_strategy(&alice(&[1; 100]), rate).unwrap();
        assert!((d.weights()[0] - rate / closed).abs() < 1e-14);
    }

    #[test]
    fn geometric_drops_underflowing_tail() {
        let d = geometric_strategy(&alice(&[1; 3000]), 0.5).unwrap();
        assert!(d.len() < 3000);
        assert!(d.weights().iter().all(|w| *w > 0.0));
        assert!((d.cumulative().last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_open_list_is_an_error() {
        let open = alice(&[0, 0, 0]);
        assert_eq!(geometric_strategy(&open, 0.1), Err(Error::NoOpenChannels(Party::Alice)));
        assert_eq!(heavy_tail_strategy(&open, 1.0), Err(Error::NoOpenChannels(Party::Alice)));
    }

    #[test]
    fn bad_parameters_rejected() {
        let open = alice(&[1, 1]);
        assert!(geometric_strategy(&open, 0.0).is_err());
        assert!(geometric_strategy(&open, 1.0).is_err());
        assert!(heavy_tail_strategy(&open, 0.0).is_err());
        assert!(uniform_strategy(0).is_err());
    }

    #[test]
    fn heavy_tail_two_channels() {
        // independent evaluation: 1/(2 ln^2 2) and 1/(3 ln^2 3)
        let ln2 = std::f64::consts::LN_2;
        let ln3 = 1.098_612_288_668_109_7_f64;
        let w1 = 1.0 / (2.0 * ln2 * ln2);
        let w2 = 1.0 / (3.0 * ln3 * ln3);
        let d = heavy_tail_strategy(&alice(&[1, 1]), 2.0).unwrap();
        assert!((d.weights()[0] - w1 / (w1 + w2)).abs() < 1e-14);
        assert!((d.weights()[1] - w2 / (w1 + w2)).abs() < 1e-14);
        assert!((d.weights()[0] - 0.790_275_458_617_233_2).abs() < 1e-12);
    }

    #[test]
    fn heavy_tail_singleton_and_monotone() {
        assert_eq!(heavy_tail_strategy(&alice(&[0, 1]), 1.0).unwrap().weights(), &[1.0]);
        for eps in [0.5, 1.0, 2.0] {
            let w: Vec<f64> = (1..=10_000).map(|j| heavy_tail_weight(j, eps)).collect();
            assert!(w.windows(2).all(|p| p[1] < p[0]), "eps={eps}");
        }
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_strategy(4).unwrap().weights(), &[0.25; 4]);
        assert_eq!(uniform_strategy(1).unwrap().weights(), &[1.0]);
    }

    #[test]
    fn clocked_examples() {
        let open = open_at(&[0, 3, 4, 7], 8);
        assert_eq!(clocked_choice(&open, 1, 4), Some(0));
        assert_eq!(clocked_choice(&open, 4, 4), Some(3));
        assert_eq!(clocked_choice(&open, 2, 4), None);
        assert_eq!(clocked_choice(&open, 5, 4), Some(0));
        for round in 1..10 {
            assert_eq!(clocked_choice(&open, round, 1), Some(0));
        }
    }

    #[test]
    fn clocked_table_agrees_with_scan() {
        let d = Densities::new(0.3, 0.3, 0.3).unwrap();
        for s in 0..50 {
            let env = sample_environment(&d, 97, &mut replicate_rng(8, s)).unwrap();
            let open = open_index(&env, Party::Bob);
            for width in [1, 2, 5, 16, 97, 150] {
                let table = ClockedTable::new(&open, width);
                for round in 1..=(2 * width as u64 + 3) {
                    assert_eq!(table.choice(round), clocked_choice(&open, round, width));
                }
            }
        }
    }

    #[test]
    fn default_width_sizes_classes() {
        let d = Densities::new(0.25, 0.8, 0.1).unwrap();
        let w = default_clocked_width(&d, 10_000);
        let class = 10_000 / w;
        assert!(0.75f64.powi(class as i32) <= 1.2e-3);
        assert_eq!(default_clocked_width(&Densities::new(1.0, 1.0, 0.5).unwrap(), 100), 100);
        assert_eq!(default_clocked_width(&d, 3), 1);
    }

    #[test]
    fn sample_channel_singleton_and_determinism() {
        let d = geometric_strategy(&open_at(&[4], 6), 0.2).unwrap();
        let mut rng = replicate_rng(0, 0);
        assert!((0..100).all(|_| sample_channel(&d, &mut rng) == 4));
        let d = uniform_strategy(50).unwrap();
        let x: Vec<usize> = (0..20).map({
            let mut r = replicate_rng(3, 3);
            move |_| sample_channel(&d, &mut r)
        }).collect();
        let y: Vec<usize> = (0..20).map({
            let mut r = replicate_rng(3, 3);
            let d = uniform_strategy(50).unwrap();
            move |_| sample_channel(&d, &mut r)
        }).collect();
        assert_eq!(x, y);
    }

    #[test]
    fn sample_channel_frequencies() {
        let d = geometric_strategy(&open_at(&[0, 1, 2], 3), 0.5).unwrap();
        let draws = 1_000_000;
        let mut counts = [0usize; 3];
        let mut rng = replicate_rng(77, 0);
        for _ in 0..draws {
            counts[sample_channel(&d, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            let freq = *c as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((freq - p).abs() <= 3.0 * se, "{freq} vs {p}");
        }
    }

    #[test]
    fn spec_parse_and_display() {
        let cases = [
            ("geometric:alpha=0.25", StrategySpec::GeometricAware { alpha: 0.25 }),
            ("heavy-tail:epsilon=2", StrategySpec::HeavyTailOblivious { epsilon: 2.0 }),
            ("uniform", StrategySpec::UniformNaive),
            ("clocked:width=16", StrategySpec::ClockedPartition { width: Some(16) }),
            ("clocked", StrategySpec::ClockedPartition { width: None }),
        ];
        for (text, spec) in cases {
            assert_eq!(text.parse::<StrategySpec>().unwrap(), spec);
            assert_eq!(spec.to_string().parse::<StrategySpec>().unwrap(), spec);
        }
        assert_eq!(
            "geometric".parse::<StrategySpec>().unwrap(),
            StrategySpec::GeometricAware { alpha: ALPHA_DEFAULT }
        );
        assert!("geometric:alpha=1.5".parse::<StrategySpec>().is_err());
        assert!("geometric:beta=0.1".parse::<StrategySpec>().is_err());
        assert!("heavy-tail:epsilon=0".parse::<StrategySpec>().is_err());
        assert!("zigzag".parse::<StrategySpec>().is_err());
        assert!("clocked:width=0".parse::<StrategySpec>().is_err());
    }

    #[test]
    fn clocked_spec_has_no_distribution() {
        let env = Environment::from_bits(&[1], &[1], &[1]).unwrap();
        let d = Densities::new(1.0, 1.0, 1.0).unwrap();
        let spec = StrategySpec::ClockedPartition { width: None };
        assert!(matches!(spec.distribution(&env, Party::Alice, &d), Err(Error::NotStationary(_))));
    }

    fn open_lists() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::btree_set(0usize..5000, 1..400).prop_map(|s| s.into_iter().collect())
    }

    fn from_ids(ids: &[usize]) -> OpenIndex {
        open_at(ids, 5000)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn distributions_are_normalized(ids in open_lists(), rate in 1e-4f64..0.9, eps in 0.1f64..8.0) {
            let open = from_ids(&ids);
            for d in [geometric_strategy(&open, rate).unwrap(), heavy_tail_strategy(&open, eps).unwrap()] {
                prop_assert!(d.weights().iter().all(|w| *w > 0.0));
                prop_assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!((d.cumulative().last().unwrap() - 1.0).abs() < 1e-12);
                prop_assert!(d.support().windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn geometric_ratio_and_argmax(ids in open_lists(), rate in 1e-4f64..0.9) {
            let d = geometric_strategy(&from_ids(&ids), rate).unwrap();
            for w in d.weights().windows(2) {
                prop_assert!((w[1] / w[0] - (1.0 - rate)).abs() < 1e-12);
            }
            let argmax = d.weights().iter().enumerate()
                .fold(0, |best, (k, w)| if *w > d.weights()[best] { k } else { best });
            prop_assert_eq!(d.support()[argmax], ids[0]);
        }

        #[test]
        fn heavy_tail_depends_only_on_rank(a in open_lists(), shift in 0usize..500, eps in 0.1f64..4.0) {
            let b: Vec<usize> = a.iter().map(|&j| (j + shift) % 5000).collect::<std::collections::BTreeSet<_>>()
                .into_iter().collect();
            prop_assume!(b.len() == a.len());
            let wa = heavy_tail_strategy(&from_ids(&a), eps).unwrap();
            let wb = heavy_tail_strategy(&from_ids(&b), eps).unwrap();
            prop_assert_eq!(wa.weights(), wb.weights());
        }
    }
}
