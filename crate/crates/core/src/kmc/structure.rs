use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{initial_state, replica_rng, Engine};
use super::trajectory::{lattice_drift, mean_and_stderr, SimulationPlan};
use crate::error::{Error, Result};
use crate::gibbs;

/// Sampling design for `S(x, t) = E[(η_t(x) - ρ)(η_0(0) - ρ)]`.
///
/// Each replica starts in equilibrium and uses `origins` time origins spaced
/// `origin_spacing` apart; every requested time lag must be a multiple of
/// the spacing. Spatial lags run over `|x| ≤ max_lag`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub max_lag: usize,
    pub time_lags: Vec<f64>,
    pub origin_spacing: f64,
    pub origins: usize,
    /// Frame velocity in sites per unit time; lags are measured from `⌊v t⌉`.
    pub velocity: f64,
}

impl StructureSpec {
    fn steps(&self) -> Result<Vec<usize>> {
        if !(self.origin_spacing > 0.0) || self.origins == 0 {
            return Err(Error::param("need a positive origin spacing and at least one origin"));
        }
        self.time_lags
            .iter()
            .map(|&t| {
                let m = (t / self.origin_spacing).round();
                if t < 0.0 || (m * self.origin_spacing - t).abs() > 1e-9 * t.max(1.0) {
                    return Err(Error::param(format!(
                        "time lag {t} is not a multiple of the origin spacing {}",
                        self.origin_spacing
                    )));
                }
                Ok(m as usize)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureFunction {
    pub rho: f64,
    pub chi: f64,
    pub lags: Vec<i64>,
    pub times: Vec<f64>,
    /// `values[t][x]`, averaged over replicas, origins and translations.
    pub values: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    /// `Σ_{|x| ≤ max_lag} S(x, t)` with standard error.
    pub window_sum: Vec<(f64, f64)>,
    /// Sum over the whole ring, `(N - ρL)² / L` per sample.
    pub ring_sum: Vec<(f64, f64)>,
    /// `Σ x² S(x, t) / χ` with standard error.
    pub second_moment: Vec<(f64, f64)>,
    pub replicas: usize,
    pub origins: usize,
    pub warnings: Vec<String>,
    /// Per-replica second moments, used for error bars on fitted slopes.
    #[serde(skip)]
    per_replica_moment: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
}

impl StructureFunction {
    /// Least-squares slope of `Σ x² S / χ` against `t` over `[t_min, t_max]`,
    /// fitted per replica; the error bar is the spread across replicas.
    pub fn diffusive_slope(&self, t_min: f64, t_max: f64) -> Result<SlopeFit> {
        let idx: Vec<usize> = (0..self.times.len()).filter(|&i| self.times[i] >= t_min && self.times[i] <= t_max).collect();
        if idx.len() < 2 {
            return Err(Error::param("need at least two time lags in the fit range"));
        }
        let slopes: Vec<f64> = self
            .per_replica_moment
            .iter()
            .map(|m| {
                let pts: Vec<(f64, f64)> = idx.iter().map(|&i| (self.times[i], m[i])).collect();
                gibbs::least_squares_slope(&pts)
            })
            .collect();
        let (slope, stderr) = mean_and_stderr(&slopes);
        Ok(SlopeFit { slope, stderr, points: idx.len() })
    }

    /// CSV with columns `time,lag,value,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,lag,value,stderr\n");
        for (i, &t) in self.times.iter().enumerate() {
            for (j, &x) in self.lags.iter().enumerate() {
                out.push_str(&format!("{t},{x},{:e},{:e}\n", self.values[i][j], self.stderr[i][j]));
            }
        }
        out
    }
}

/// Bits of a ring laid out twice in a row, so any rotation is a plain
/// 64-bit window read.
struct Doubled {
    words: Vec<u64>,
    size: usize,
    count: u64,
}

impl Doubled {
    fn new(eta: &[u8]) -> Self {
        let n = eta.len();
        let mut words = vec![0u64; (2 * n).div_ceil(64) + 1];
        for i in 0..2 * n {
            words[i / 64] |= (eta[i % n] as u64) << (i % 64);
        }
        let count = eta.iter().map(|&e| e as u64).sum();
        Self { words, size: n, count }
    }

    #[inline]
    fn window(&self, offset: usize) -> u64 {
        let (q, r) = (offset / 64, offset % 64);
        if r == 0 {
            self.words[q]
        } else {
            (self.words[q] >> r) | (self.words[q + 1] << (64 - r))
        }
    }

    /// `Σ_y a(y + shift) b(y)` with `b` read from its first copy.
    fn overlap(&self, b: &Doubled, shift: i64) -> u64 {
        let n = self.size;
        let s = shift.rem_euclid(n as i64) as usize;
        let full = n / 64;
        let mut total = 0u64;
        for i in 0..full {
            total += (self.window(s + 64 * i) & b.words[i]).count_ones() as u64;
        }
        let rest = n % 64;
        if rest > 0 {
            let mask = (1u64 << rest) - 1;
            total += (self.window(s + 64 * full) & b.words[full] & mask).count_ones() as u64;
        }
        total
    }
}

struct ReplicaSums {
    values: Vec<Vec<f64>>,
    ring: Vec<f64>,
}

/// Measures `S(x, t)` from the replicas of `plan` (its horizon and sample
/// times are ignored; the design comes from `design`).
pub fn structure_function(plan: &SimulationPlan, design: &StructureSpec) -> Result<StructureFunction> {
    let steps = design.steps()?;
    let n = plan.size;
    if 2 * design.max_lag + 1 > n {
        return Err(Error::param("spatial lag window exceeds the ring"));
    }
    let rho = gibbs::density(&plan.spec)?;
    let chi = gibbs::compressibility(&plan.spec, rho)?.chi;
    let max_step = steps.iter().copied().max().unwrap_or(0);
    let lags: Vec<i64> = (-(design.max_lag as i64)..=design.max_lag as i64).collect();
    let drifts: Vec<i64> = design.time_lags.iter().map(|&t| lattice_drift(design.velocity, t)).collect();

    let run = |replica: u64| -> Result<ReplicaSums> {
        let mut rng = replica_rng(plan.seed, replica);
        let initial = initial_state(&plan.spec, n, plan.initial.as_ref(), &mut rng)?;
        let mut engine = Engine::new(&plan.rates, initial, rng)?;
        let mut history: Vec<Doubled> = Vec::with_capacity(max_step + 1);
        let mut values = vec![vec![0.0; lags.len()]; steps.len()];
        let mut ring = vec![0.0; steps.len()];
        let total = design.origins - 1 + max_step;
        let nf = n as f64;
        for k in 0..=total {
            engine.advance_to(k as f64 * design.origin_spacing);
            let now = Doubled::new(engine.occupancies());
            if history.len() == max_step + 1 {
                history.remove(0);
            }
            history.push(now);
            let now = history.last().unwrap();
            for (j, &m) in steps.iter().enumerate() {
                if k < m || k - m >= design.origins {
                    continue;
                }
                let then = &history[history.len() - 1 - m];
                let centre = nf * rho * rho - rho * (now.count + then.count) as f64;
                for (xi, &x) in lags.iter().enumerate() {
                    let c = now.overlap(then, x + drifts[j]) as f64;
                    values[j][xi] += (c + centre) / nf;
                }
                let d = (now.count as f64 - rho * nf) * (then.count as f64 - rho * nf);
                ring[j] += d / nf;
            }
        }
        let o = design.origins as f64;
        values.iter_mut().flatten().for_each(|v| *v /= o);
        ring.iter_mut().for_each(|v| *v /= o);
        Ok(ReplicaSums { values, ring })
    };
    let per: Vec<ReplicaSums> = (0..plan.replicas as u64).into_par_iter().map(run).collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    if per.len() < 2 {
        warnings.push(format!("{} replica(s): standard errors unavailable", per.len()));
    }
    let moment = |s: &ReplicaSums, j: usize| -> f64 {
        lags.iter().zip(&s.values[j]).map(|(&x, v)| (x * x) as f64 * v).sum::<f64>() / chi
    };
    let mut values = Vec::new();
    let mut stderr = Vec::new();
    let mut window_sum = Vec::new();
    let mut ring_sum = Vec::new();
    let mut second_moment = Vec::new();
    for j in 0..steps.len() {
        let mut row = Vec::with_capacity(lags.len());
        let mut row_se = Vec::with_capacity(lags.len());
        for xi in 0..lags.len() {
            let (m, se) = mean_and_stderr(&per.iter().map(|s| s.values[j][xi]).collect::<Vec<_>>());
            row.push(m);
            row_se.push(se);
        }
        values.push(row);
        stderr.push(row_se);
        window_sum.push(mean_and_stderr(&per.iter().map(|s| s.values[j].iter().sum()).collect::<Vec<_>>()));
        ring_sum.push(mean_and_stderr(&per.iter().map(|s| s.ring[j]).collect::<Vec<_>>()));
        second_moment.push(mean_and_stderr(&per.iter().map(|s| moment(s, j)).collect::<Vec<_>>()));
    }
    let per_replica_moment = per.iter().map(|s| (0..steps.len()).map(|j| moment(s, j)).collect()).collect();
    Ok(StructureFunction {
        rho,
        chi,
        lags,
        times: design.time_lags.clone(),
        values,
        stderr,
        window_sum,
        ring_sum,
        second_moment,
        replicas: per.len(),
        origins: design.origins,
        warnings,
        per_replica_moment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{builtin_rate, GibbsSpec, RateFamily, RingConfiguration};

    #[test]
    fn overlap_matches_direct_sum() {
        for n in [5usize, 64, 70, 130] {
            let a: Vec<u8> = (0..n).map(|i| ((i * 7 + i / 3) % 3 == 0) as u8).collect();
            let b: Vec<u8> = (0..n).map(|i| ((i * 5 + 1) % 4 < 2) as u8).collect();
            let (da, db) = (Doubled::new(&a), Doubled::new(&b));
            for s in [-3i64, 0, 1, 63, 64, 65, n as i64 + 2] {
                let direct: u64 = (0..n).map(|y| (a[(y + s.rem_euclid(n as i64) as usize) % n] & b[y]) as u64).sum();
                assert_eq!(da.overlap(&db, s), direct, "n={n} s={s}");
            }
        }
    }

    #[test]
    fn equal_time_correlation_of_frozen_ring() {
        // a ring without particles never moves, and S(x, 0) is then ρ² exactly
        let ssep = builtin_rate(&RateFamily::Ssep).unwrap();
        let plan = SimulationPlan::new(ssep, GibbsSpec::product(0.0), 16, 1.0)
            .unwrap()
            .with_initial(RingConfiguration::empty(16))
            .unwrap();
        let design = StructureSpec { max_lag: 3, time_lags: vec![0.0, 2.0], origin_spacing: 1.0, origins: 2, velocity: 0.0 };
        let s = structure_function(&plan, &design).unwrap();
        for row in &s.values {
            for v in row {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn rejects_off_grid_lags() {
        let ssep = builtin_rate(&RateFamily::Ssep).unwrap();
        let plan = SimulationPlan::new(ssep, GibbsSpec::product(0.0), 16, 1.0).unwrap();
        let design = StructureSpec { max_lag: 3, time_lags: vec![1.5], origin_spacing: 1.0, origins: 2, velocity: 0.0 };
        assert!(structure_function(&plan, &design).is_err());
    }
}
