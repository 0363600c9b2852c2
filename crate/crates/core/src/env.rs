//! Random channel environments.
//!
//! Three independent Bernoulli environments over the same `n` channels: Alice's
//! local view `a`, Bob's local view `b` and the global environment `e`. Channel
//! ids are 0-based.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Openness probabilities `(p1, p2, q)` for Alice, Bob and the global
/// environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Densities {
    p1: f64,
    p2: f64,
    q: f64,
}

impl Densities {
    pub fn new(p1: f64, p2: f64, q: f64) -> Result<Self> {
        for (name, value) in [("p1", p1), ("p2", p2), ("q", q)] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::InvalidProbability { name, value });
            }
        }
        Ok(Densities { p1, p2, q })
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p2(&self) -> f64 {
        self.p2
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Local openness of `side`.
    pub fn local(&self, side: Party) -> f64 {
        match side {
            Party::Alice => self.p1,
            Party::Bob => self.p2,
        }
    }

    /// `p1 * p2 * q^2`, the scale of the optimal stationary sync time.
    pub fn normalizer(&self) -> f64 {
        self.p1 * self.p2 * self.q * self.q
    }

    /// `p1 * p2 * q`, the probability a channel is open everywhere.
    pub fn triple_open(&self) -> f64 {
        self.p1 * self.p2 * self.q
    }

    pub fn min_local(&self) -> f64 {
        self.p1.min(self.p2)
    }
}

impl fmt::Display for Densities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.p1, self.p2, self.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn other(self) -> Party {
        match self {
            Party::Alice => Party::Bob,
            Party::Bob => Party::Alice,
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Alice => f.write_str("Alice"),
            Party::Bob => f.write_str("Bob"),
        }
    }
}

const WORD: usize = 64;

/// Packed 0/1 indicator vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Indicators {
    words: Vec<u64>,
    len: usize,
}

impl Indicators {
    pub fn zeros(len: usize) -> Self {
        Indicators {
            words: vec![0; len.div_ceil(WORD)],
            len,
        }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut out = Indicators::zeros(0);
        for bit in bits {
            if out.len % WORD == 0 {
                out.words.push(0);
            }
            if bit {
                out.words[out.len / WORD] |= 1 << (out.len % WORD);
            }
            out.len += 1;
        }
        out
    }

    fn sample<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Self {
        let mut out = Indicators::zeros(len);
        for i in 0..len {
            if rng.gen_bool(p) {
                out.words[i / WORD] |= 1 << (i % WORD);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "channel {i} out of range for {} channels", self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of set bits strictly before position `end`.
    pub fn count_ones_before(&self, end: usize) -> usize {
        let end = end.min(self.len);
        let full = end / WORD;
        let mut count: usize = self.words[..full].iter().map(|w| w.count_ones() as usize).sum();
        let rem = end % WORD;
        if rem > 0 {
            count += (self.words[full] & ((1u64 << rem) - 1)).count_ones() as usize;
        }
        count
    }

    /// Positions of set bits, ascending.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(w * WORD + tz)
            })
        })
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

/// One realisation of the three environments over `n` channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Environment {
    a: Indicators,
    b: Indicators,
    e: Indicators,
}

impl Environment {
    pub fn new(a: Indicators, b: Indicators, e: Indicators) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::invalid("environment needs at least one channel"));
        }
        if a.len() != b.len() || a.len() != e.len() {
            return Err(Error::invalid(format!(
                "indicator lengths differ: {}, {}, {}",
                a.len(),
                b.len(),
                e.len()
            )));
        }
        Ok(Environment { a, b, e })
    }

    /// Builds an environment from 0/1 slices (handy in tests).
    pub fn from_bits(a: &[u8], b: &[u8], e: &[u8]) -> Result<Self> {
        let conv = |v: &[u8]| -> Result<Indicators> {
            v.iter()
                .map(|&x| match x {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::invalid(format!("indicator entry {other} is not 0/1"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Indicators::from_bools)
        };
        Environment::new(conv(a)?, conv(b)?, conv(e)?)
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &Indicators {
        &self.a
    }

    pub fn b(&self) -> &Indicators {
        &self.b
    }

    pub fn e(&self) -> &Indicators {
        &self.e
    }

    pub fn local(&self, side: Party) -> &Indicators {
        match side {
            Party::Alice => &self.a,
            Party::Bob => &self.b,
        }
    }

    pub fn is_triple_open(&self, j: usize) -> bool {
        self.a.get(j) && self.b.get(j) && self.e.get(j)
    }

    fn triple_words(&self) -> impl Iterator<Item = u64> + '_ {
        self.a
            .words
            .iter()
            .zip(&self.b.words)
            .zip(&self.e.words)
            .map(|((a, b), e)| a & b & e)
    }

    /// Number of channels open in all three environments.
    pub fn triple_open_count(&self) -> usize {
        self.triple_words().map(|w| w.count_ones() as usize).sum()
    }
}

/// Deterministic generator for replicate `index` under `master_seed`.
///
/// Every replicate gets its own ChaCha stream, so results do not depend on
/// the order or thread in which replicates are evaluated.
pub fn replicate_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Draws `A_j ~ Bern(p1)`, `B_j ~ Bern(p2)`, `E_j ~ Bern(q)` independently for
/// `j < n`.
pub fn sample_environment<R: Rng + ?Sized>(d: &Densities, n: usize, rng: &mut R) -> Result<Environment> {
    if n == 0 {
        return Err(Error::invalid("channel count must be at least 1"));
    }
    let a = Indicators::sample(n, d.p1, rng);
    let b = Indicators::sample(n, d.p2, rng);
    let e = Indicators::sample(n, d.q, rng);
    Environment::new(a, b, e)
}

/// The channels open for one party, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenIndex {
    side: Party,
    indices: Vec<usize>,
}

impl OpenIndex {
    pub fn side(&self) -> Party {
        self.side
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn open_index(env: &Environment, side: Party) -> OpenIndex {
    OpenIndex {
        side,
        indices: env.local(side).iter_ones().collect(),
    }
}

/// Smallest channel open in all three environments.
pub fn first_triple_open(env: &Environment) -> Option<usize> {
    env.triple_words()
        .enumerate()
        .find(|(_, w)| *w != 0)
        .map(|(i, w)| i * WORD + w.trailing_zeros() as usize)
}

/// `(J_a, J_b)`: locally open channels strictly before the first triple-open
/// channel, for Alice and Bob.
pub fn open_counts_before(env: &Environment) -> Option<(usize, usize)> {
    let j = first_triple_open(env)?;
    Some((env.a.count_ones_before(j), env.b.count_ones_before(j)))
}

impl fmt::Display for Indicators {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line: String = (0..self.len)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect();
        f.write_str(&line)
    }
}

impl FromStr for Indicators {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("unexpected character {other:?} in indicator line"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Indicators::from_bools)
    }
}

/// Text form: three lines (`a`, `b`, `e`) of `0`/`1` characters.
impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.a)?;
        writeln!(f, "{}", self.b)?;
        writeln!(f, "{}", self.e)
    }
}

impl FromStr for Environment {
    type Err = Error;

    /// Blank lines and lines starting with `#` are skipped.
    fn from_str(s: &str) -> Result<Self> {
        let lines: Vec<&str> = s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        if lines.len() != 3 {
            return Err(Error::Parse(format!(
                "expected 3 indicator lines, found {}",
                lines.len()
            )));
        }
        Environment::new(lines[0].parse()?, lines[1].parse()?, lines[2].parse()?)
            .map_err(|e| Error::Parse(e.to_string()))
    }
}
