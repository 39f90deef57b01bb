use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs;
use crate::lattice::{GibbsSpec, RateTable, RingConfiguration};

/// What happened at one proposal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Particle moved from `bond` to `bond + 1`.
    Right,
    /// Particle moved from `bond + 1` to `bond`.
    Left,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub bond: usize,
    pub outcome: Outcome,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub proposals: u64,
    pub right: u64,
    pub left: u64,
}

impl EventCounts {
    pub fn accepted(&self) -> u64 {
        self.right + self.left
    }
}

/// Rejection kinetic Monte Carlo on a ring.
///
/// Proposals arrive at total rate `L`; each picks a uniform bond `(x, x+1)`
/// and is accepted with probability `c_γ` of the window around it. Because
/// every rate is at most 1 this realizes the continuous-time dynamics
/// exactly. `currents[x]` integrates the signed flow across bond `(x, x+1)`.
#[derive(Clone, Debug)]
pub struct Engine<R> {
    eta: Vec<u8>,
    radius: usize,
    rates: Vec<f64>,
    time: f64,
    next_event: f64,
    currents: Vec<i64>,
    counts: EventCounts,
    particles: usize,
    rng: R,
}

impl<R: Rng> Engine<R> {
    pub fn new(table: &RateTable, initial: RingConfiguration, mut rng: R) -> Result<Self> {
        let size = initial.len();
        if size < table.window_len() {
            return Err(Error::param(format!(
                "ring of {size} sites is shorter than the rate window of {}",
                table.window_len()
            )));
        }
        let rates = (0..table.rates().len()).map(|m| table.rate(m)).collect();
        let first = rng.sample::<f64, _>(Exp1) / size as f64;
        Ok(Self {
            particles: initial.particle_count(),
            eta: initial.occupancies().to_vec(),
            radius: table.radius(),
            rates,
            time: 0.0,
            next_event: first,
            currents: vec![0; size],
            counts: EventCounts::default(),
            rng,
        })
    }

    pub fn size(&self) -> usize {
        self.eta.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn occupancies(&self) -> &[u8] {
        &self.eta
    }

    pub fn configuration(&self) -> RingConfiguration {
        RingConfiguration::new(self.eta.clone()).expect("engine state stays binary")
    }

    pub fn currents(&self) -> &[i64] {
        &self.currents
    }

    pub fn counts(&self) -> EventCounts {
        self.counts
    }

    pub fn particle_count(&self) -> usize {
        self.particles
    }

    #[inline]
    fn window_index(&self, x: usize) -> usize {
        let n = self.eta.len();
        let w = 2 * self.radius + 2;
        let start = x + n - self.radius;
        let mut idx = 0usize;
        if start >= n && start - n + w <= n {
            for (i, &e) in self.eta[start - n..start - n + w].iter().enumerate() {
                idx |= (e as usize) << i;
            }
        } else {
            for i in 0..w {
                idx |= (self.eta[(start + i) % n] as usize) << i;
            }
        }
        idx
    }

    /// One proposal at a uniform bond, without touching the clock.
    pub fn propose(&mut self) -> Proposal {
        let n = self.eta.len();
        let bond = self.rng.random_range(0..n);
        self.counts.proposals += 1;
        let next = if bond + 1 == n { 0 } else { bond + 1 };
        let (a, b) = (self.eta[bond], self.eta[next]);
        if a == b {
            return Proposal { bond, outcome: Outcome::Rejected };
        }
        let c = self.rates[self.window_index(bond)];
        if c < 1.0 && self.rng.random::<f64>() >= c {
            return Proposal { bond, outcome: Outcome::Rejected };
        }
        self.eta[bond] = b;
        self.eta[next] = a;
        if a == 1 {
            self.currents[bond] += 1;
            self.counts.right += 1;
            Proposal { bond, outcome: Outcome::Right }
        } else {
            self.currents[bond] -= 1;
            self.counts.left += 1;
            Proposal { bond, outcome: Outcome::Left }
        }
    }

    /// Runs every proposal with arrival time at most `t`, then sets the clock
    /// to `t`. Waiting times are memoryless, so stopping here is exact.
    pub fn advance_to(&mut self, t: f64) {
        let rate = self.eta.len() as f64;
        while self.next_event <= t {
            self.propose();
            self.next_event += self.rng.sample::<f64, _>(Exp1) / rate;
        }
        if t > self.time {
            self.time = t;
        }
    }

    /// Repeats proposals until one is accepted; returns the pre-jump state
    /// index (bits little-endian over sites) and the proposal. Rings of at
    /// most 64 sites only. The clock is not advanced.
    pub fn next_jump(&mut self) -> (u64, Proposal) {
        loop {
            let before = self.state_bits();
            let p = self.propose();
            if p.outcome != Outcome::Rejected {
                return (before, p);
            }
        }
    }

    fn state_bits(&self) -> u64 {
        self.eta.iter().enumerate().fold(0u64, |acc, (i, &e)| acc | ((e as u64) << i))
    }
}

/// Random stream for replica `replica` of a run seeded by `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// Initial condition of a plan: explicit, or sampled from the Gibbs measure.
pub(crate) fn initial_state<R: Rng>(spec: &GibbsSpec, size: usize, given: Option<&RingConfiguration>, rng: &mut R) -> Result<RingConfiguration> {
    match given {
        Some(eta) => {
            if eta.len() != size {
                return Err(Error::param("initial configuration has the wrong size"));
            }
            Ok(eta.clone())
        }
        None => gibbs::sample_gibbs(spec, size, rng),
    }
}
