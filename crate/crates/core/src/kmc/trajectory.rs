use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{initial_state, replica_rng, Engine, EventCounts};
use crate::error::{Error, Result};
use crate::gibbs;
use crate::lattice::{GibbsSpec, RateTable, RingConfiguration};

/// Everything needed to run a replica ensemble.
///
/// The horizon is in microscopic time. Diffusive scaling is the caller's
/// business: multiply by `ε⁻²` before building the plan.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationPlan {
    pub rates: RateTable,
    /// Gibbs measure the initial state is drawn from.
    pub spec: GibbsSpec,
    pub size: usize,
    pub horizon: f64,
    pub seed: u64,
    pub replicas: usize,
    pub sample_times: Vec<f64>,
    /// Keep full configurations at sample times, not only currents.
    pub keep_snapshots: bool,
    pub initial: Option<RingConfiguration>,
}

impl SimulationPlan {
    /// Plan with symmetric rates (`γ` as stored in `rates`), one replica and
    /// a single sample at the horizon.
    pub fn new(rates: RateTable, spec: GibbsSpec, size: usize, horizon: f64) -> Result<Self> {
        if size < rates.window_len() {
            return Err(Error::param(format!(
                "ring of {size} sites needs at least {} for rate radius {}",
                rates.window_len(),
                rates.radius()
            )));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon must be finite and non-negative"));
        }
        Ok(Self {
            rates,
            spec,
            size,
            horizon,
            seed: 0,
            replicas: 1,
            sample_times: vec![horizon],
            keep_snapshots: false,
            initial: None,
        })
    }

    /// Sets the fugacity so the initial measure has density `rho`.
    pub fn at_density(mut self, rho: f64) -> Result<Self> {
        self.spec = gibbs::spec_at_density(&self.spec, rho)?;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.rates = self.rates.with_gamma(gamma)?;
        Ok(self)
    }

    /// Weak asymmetry `γ = a √ε`.
    pub fn with_weak_asymmetry(self, a: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || a < 0.0 {
            return Err(Error::param("need a ≥ 0 and ε > 0"));
        }
        let gamma = a * epsilon.sqrt();
        if gamma > 1.0 {
            return Err(Error::param(format!("γ = a√ε = {gamma} exceeds 1")));
        }
        self.with_gamma(gamma)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_replicas(mut self, replicas: usize) -> Self {
        self.replicas = replicas;
        self
    }

    pub fn with_sample_times(mut self, times: Vec<f64>) -> Result<Self> {
        if times.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::param("sample times must be sorted"));
        }
        if times.iter().any(|&t| !(0.0..=self.horizon).contains(&t)) {
            return Err(Error::param("sample times must lie in [0, horizon]"));
        }
        self.sample_times = times;
        Ok(self)
    }

    pub fn with_snapshots(mut self, keep: bool) -> Self {
        self.keep_snapshots = keep;
        self
    }

    pub fn with_initial(mut self, eta: RingConfiguration) -> Result<Self> {
        if eta.len() != self.size {
            return Err(Error::param("initial configuration has the wrong size"));
        }
        self.initial = Some(eta);
        Ok(self)
    }

    pub fn gamma(&self) -> f64 {
        self.rates.gamma()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub replica: u64,
    pub size: usize,
    pub particles: usize,
    pub initial: RingConfiguration,
    pub sample_times: Vec<f64>,
    /// Integrated signed current across every bond at each sample time.
    pub currents: Vec<Vec<i64>>,
    /// Configurations at sample times, if requested.
    pub snapshots: Vec<RingConfiguration>,
    pub final_configuration: RingConfiguration,
    pub final_currents: Vec<i64>,
    pub events: EventCounts,
    pub horizon: f64,
}

impl TrajectoryRecord {
    /// Net signed current per bond per unit time over the whole horizon.
    pub fn mean_current(&self) -> f64 {
        if self.horizon == 0.0 {
            return 0.0;
        }
        self.final_currents.iter().sum::<i64>() as f64 / (self.size as f64 * self.horizon)
    }

    /// Checks `η_t(x) - η_0(x) = J_{x-1,x}(t) - J_{x,x+1}(t)` at every
    /// recorded configuration and returns the largest discrepancy.
    pub fn continuity_defect(&self) -> i64 {
        let mut worst = continuity_between(&self.initial, &self.final_configuration, &self.final_currents);
        for (eta, j) in self.snapshots.iter().zip(&self.currents) {
            worst = worst.max(continuity_between(&self.initial, eta, j));
        }
        worst
    }
}

fn continuity_between(initial: &RingConfiguration, eta: &RingConfiguration, currents: &[i64]) -> i64 {
    let n = eta.len();
    (0..n)
        .map(|x| {
            let left = currents[(x + n - 1) % n];
            let change = eta.occupancies()[x] as i64 - initial.occupancies()[x] as i64;
            (change - (left - currents[x])).abs()
        })
        .max()
        .unwrap_or(0)
}

/// Runs replica `replica` of the plan.
pub fn simulate(plan: &SimulationPlan, replica: u64) -> Result<TrajectoryRecord> {
    let mut rng = replica_rng(plan.seed, replica);
    let initial = initial_state(&plan.spec, plan.size, plan.initial.as_ref(), &mut rng)?;
    let particles = initial.particle_count();
    let mut engine = Engine::new(&plan.rates, initial.clone(), rng)?;
    let mut currents = Vec::with_capacity(plan.sample_times.len());
    let mut snapshots = Vec::new();
    for &t in &plan.sample_times {
        engine.advance_to(t);
        let n: usize = engine.occupancies().iter().map(|&e| e as usize).sum();
        if n != particles {
            return Err(Error::InvariantViolation(format!(
                "particle count changed from {particles} to {n} by time {t} in replica {replica}"
            )));
        }
        currents.push(engine.currents().to_vec());
        if plan.keep_snapshots {
            snapshots.push(engine.configuration());
        }
    }
    engine.advance_to(plan.horizon);
    let record = TrajectoryRecord {
        replica,
        size: plan.size,
        particles,
        initial,
        sample_times: plan.sample_times.clone(),
        currents,
        snapshots,
        final_configuration: engine.configuration(),
        final_currents: engine.currents().to_vec(),
        events: engine.counts(),
        horizon: plan.horizon,
    };
    if record.final_configuration.particle_count() != particles {
        return Err(Error::InvariantViolation("particle count changed".into()));
    }
    Ok(record)
}

/// All replicas of the plan, in replica order. Replicas run in parallel on
/// the current rayon pool; each owns its random stream.
pub fn simulate_replicas(plan: &SimulationPlan) -> Result<Vec<TrajectoryRecord>> {
    (0..plan.replicas as u64).into_par_iter().map(|r| simulate(plan, r)).collect()
}

/// Height `h_t(x)`: integrated signed current across bond `(x, x+1)` at each
/// sample time. Its discrete gradient `h_t(x-1) - h_t(x)` is the change in
/// occupation at `x`.
pub fn height_field(record: &TrajectoryRecord) -> Vec<Vec<i64>> {
    record.currents.clone()
}

/// Mean and standard error of the per-bond current across replicas.
pub fn mean_current(records: &[TrajectoryRecord]) -> (f64, f64) {
    mean_and_stderr(&records.iter().map(TrajectoryRecord::mean_current).collect::<Vec<_>>())
}

pub(crate) fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Configurations seen from a frame moving at `v` sites per unit time:
/// `η'_t(x) = η_t(x + ⌊v t⌉)`, with `⌊·⌉` rounding half away from zero.
pub fn frame_shift(record: &TrajectoryRecord, v: f64) -> Vec<RingConfiguration> {
    record
        .snapshots
        .iter()
        .zip(&record.sample_times)
        .map(|(eta, &t)| eta.rotated(lattice_drift(v, t)))
        .collect()
}

/// Nearest-integer displacement `⌊v t⌉`.
pub fn lattice_drift(v: f64, t: f64) -> i64 {
    (v * t).round() as i64
}
