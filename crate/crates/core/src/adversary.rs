//! Cost-sequence generators for experiments.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::CostSource;
use crate::error::{Error, Result};

/// Puts `magnitude` on the point carrying the most mass (smallest index on ties).
#[derive(Debug, Clone)]
pub struct GreedyMass {
    pub n: usize,
    pub magnitude: f64,
}

impl CostSource for GreedyMass {
    fn next_cost(&mut self, _t: usize, marginal: &[f64]) -> Option<Vec<f64>> {
        let mut c = vec![0.0; self.n];
        c[crate::offline::heaviest_point(marginal)] = self.magnitude;
        Some(c)
    }
}

/// Like [`GreedyMass`] but with magnitude `scale * U[lo, hi)` drawn each round.
#[derive(Debug, Clone)]
pub struct JitteredGreedyMass {
    pub n: usize,
    pub scale: f64,
    pub range: (f64, f64),
    rng: ChaCha8Rng,
}

impl JitteredGreedyMass {
    pub fn new(n: usize, scale: f64, range: (f64, f64), seed: u64) -> Self {
        JitteredGreedyMass {
            n,
            scale,
            range,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl CostSource for JitteredGreedyMass {
    fn next_cost(&mut self, _t: usize, marginal: &[f64]) -> Option<Vec<f64>> {
        let mut c = vec![0.0; self.n];
        c[crate::offline::heaviest_point(marginal)] = self.scale * self.rng.random_range(self.range.0..self.range.1);
        Some(c)
    }
}

/// Oblivious: `magnitude` on one uniformly random point per round.
#[derive(Debug, Clone)]
pub struct RandomSpike {
    pub n: usize,
    pub magnitude: f64,
    rng: ChaCha8Rng,
}

impl RandomSpike {
    pub fn new(n: usize, magnitude: f64, seed: u64) -> Self {
        RandomSpike {
            n,
            magnitude,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl CostSource for RandomSpike {
    fn next_cost(&mut self, _t: usize, _marginal: &[f64]) -> Option<Vec<f64>> {
        let mut c = vec![0.0; self.n];
        let x = self.rng.random_range(0..self.n);
        c[x] = self.magnitude;
        Some(c)
    }
}

/// Coupon-collector phases: each round hits a random point not yet hit in
/// the current phase; the phase restarts once a single point is left.
#[derive(Debug, Clone)]
pub struct BlockUniform {
    pub n: usize,
    pub magnitude: f64,
    alive: Vec<usize>,
    rng: ChaCha8Rng,
}

impl BlockUniform {
    pub fn new(n: usize, magnitude: f64, seed: u64) -> Self {
        BlockUniform {
            n,
            magnitude,
            alive: (0..n).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl CostSource for BlockUniform {
    fn next_cost(&mut self, _t: usize, _marginal: &[f64]) -> Option<Vec<f64>> {
        let mut c = vec![0.0; self.n];
        if self.n < 2 {
            return Some(c);
        }
        if self.alive.len() <= 1 {
            self.alive = (0..self.n).collect();
        }
        let &x = self.alive.choose(&mut self.rng).expect("at least two alive");
        self.alive.retain(|&y| y != x);
        c[x] = self.magnitude;
        Some(c)
    }
}

/// Textual adversary description: `greedy_mass[:m]`, `random_spike[:m]` or `block_uniform[:m]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversarySpec {
    GreedyMass { magnitude: f64 },
    RandomSpike { magnitude: f64 },
    BlockUniform { magnitude: f64 },
}

impl AdversarySpec {
    pub fn magnitude(&self) -> f64 {
        match *self {
            AdversarySpec::GreedyMass { magnitude }
            | AdversarySpec::RandomSpike { magnitude }
            | AdversarySpec::BlockUniform { magnitude } => magnitude,
        }
    }

    pub fn source(&self, n: usize, seed: u64) -> Box<dyn CostSource> {
        match *self {
            AdversarySpec::GreedyMass { magnitude } => Box::new(GreedyMass { n, magnitude }),
            AdversarySpec::RandomSpike { magnitude } => Box::new(RandomSpike::new(n, magnitude, seed)),
            AdversarySpec::BlockUniform { magnitude } => Box::new(BlockUniform::new(n, magnitude, seed)),
        }
    }
}

impl FromStr for AdversarySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, mag) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let magnitude = match mag {
            Some(m) => m
                .parse::<f64>()
                .ok()
                .filter(|x| *x >= 0.0 && x.is_finite())
                .ok_or_else(|| Error::Parse(format!("bad adversary magnitude {m:?}")))?,
            None => 1.0,
        };
        match name {
            "greedy_mass" => Ok(AdversarySpec::GreedyMass { magnitude }),
            "random_spike" => Ok(AdversarySpec::RandomSpike { magnitude }),
            "block_uniform" => Ok(AdversarySpec::BlockUniform { magnitude }),
            other => Err(Error::Parse(format!("unknown adversary {other:?}"))),
        }
    }
}

impl fmt::Display for AdversarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AdversarySpec::GreedyMass { .. } => "greedy_mass",
            AdversarySpec::RandomSpike { .. } => "random_spike",
            AdversarySpec::BlockUniform { .. } => "block_uniform",
        };
        write!(f, "{name}:{}", self.magnitude())
    }
}

/// Draws `t` rounds from an oblivious source.
pub fn collect_oblivious(source: &mut dyn CostSource, n: usize, t: usize) -> Vec<Vec<f64>> {
    let flat = vec![1.0 / n as f64; n];
    (0..t).map_while(|i| source.next_cost(i, &flat)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_hits_the_point_mass() {
        let mut g = GreedyMass { n: 4, magnitude: 1.0 };
        assert_eq!(g.next_cost(0, &[0.0, 0.0, 1.0, 0.0]).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_magnitude_spikes_are_zero() {
        let mut s = RandomSpike::new(5, 0.0, 1);
        for c in collect_oblivious(&mut s, 5, 20) {
            assert!(c.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn block_uniform_replays_identically() {
        let a = collect_oblivious(&mut BlockUniform::new(4, 1.0, 9), 4, 40);
        let b = collect_oblivious(&mut BlockUniform::new(4, 1.0, 9), 4, 40);
        assert_eq!(a, b);
        // each phase hits n - 1 distinct points
        for phase in a.chunks(3) {
            let hit: Vec<usize> = phase.iter().map(|c| c.iter().position(|&x| x > 0.0).unwrap()).collect();
            let mut d = hit.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), hit.len());
        }
    }

    #[test]
    fn specs_parse_and_print() {
        let s: AdversarySpec = "greedy_mass:0.5".parse().unwrap();
        assert_eq!(s, AdversarySpec::GreedyMass { magnitude: 0.5 });
        assert_eq!(s.to_string().parse::<AdversarySpec>().unwrap(), s);
        assert_eq!("block_uniform".parse::<AdversarySpec>().unwrap().magnitude(), 1.0);
        assert!("nope".parse::<AdversarySpec>().is_err());
        assert!("random_spike:-1".parse::<AdversarySpec>().is_err());
    }
}
