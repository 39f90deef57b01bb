//! Named experiments behind the `kawasaki` subcommands.
//!
//! Each command is a pure function from a configuration to an
//! [`ExperimentOutput`] (file contents plus a JSON summary); [`write_output`]
//! puts the files and a manifest on disk. Nothing time- or host-dependent is
//! recorded, so equal configurations give byte-identical directories.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ResolvedModel};
use crate::error::{Error, Result};
use crate::gradient::{self, GradientSolution};
use crate::kmc::{self, SimulationPlan, StructureSpec};
use crate::sbe::{self, FieldState};
use crate::thermo::{self, Method, ThermoCurve};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ToleranceProfile {
    Strict,
    Default,
}

/// Thresholds for residuals that should vanish identically (`exact`) and
/// for those computed through finite differences (`approximate`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub exact: f64,
    pub approximate: f64,
}

impl Tolerances {
    pub fn resolve(profile: ToleranceProfile, cfg: &ExperimentConfig) -> Self {
        let base = match profile {
            ToleranceProfile::Strict => Self { exact: 1e-12, approximate: 1e-8 },
            ToleranceProfile::Default => Self { exact: gradient::EXACT_THRESHOLD, approximate: gradient::SUSPICIOUS_THRESHOLD },
        };
        Self {
            exact: cfg.tolerances.exact.unwrap_or(base.exact),
            approximate: cfg.tolerances.approximate.unwrap_or(base.approximate),
        }
    }

    fn for_method(&self, method: Method) -> f64 {
        match method {
            Method::ExactPolynomial => self.exact,
            Method::FiniteDifference => self.approximate,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub command: &'static str,
    /// False when a check failed; the CLI maps this to exit status 1.
    pub passed: bool,
    pub summary: Value,
    pub files: Vec<OutputFile>,
}

fn file(name: &str, contents: impl Into<Vec<u8>>) -> OutputFile {
    OutputFile { name: name.into(), contents: contents.into() }
}

fn pretty(v: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: &'static str,
    pub residual: Option<f64>,
    pub threshold: f64,
    pub status: CheckStatus,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub family: String,
    pub checks: Vec<CheckEntry>,
    pub failures: Vec<&'static str>,
    pub passed: bool,
}

fn model_of(cfg: &ExperimentConfig) -> Result<ResolvedModel> {
    cfg.model.resolve()
}

fn omega_radius(cfg: &ExperimentConfig, model: &ResolvedModel) -> usize {
    cfg.check.omega_radius.unwrap_or(model.rates.radius())
}

fn rho_grid(grid: &Option<Vec<f64>>) -> Vec<f64> {
    grid.clone().unwrap_or_else(thermo::standard_rho_grid)
}

/// Detailed balance, gradient condition, current identity and the
/// fluctuation-dissipation relation for the configured model.
pub fn check_report(cfg: &ExperimentConfig, tol: Tolerances) -> Result<CheckReport> {
    let model = model_of(cfg)?;
    let c = &model.rates;
    let mut checks = Vec::new();
    // reversibility concerns the symmetric part only
    let db = gradient::check_detailed_balance(c, &model.spec);
    let db_tol = tol.exact;
    checks.push(CheckEntry {
        name: "detailed_balance",
        residual: Some(db),
        threshold: db_tol,
        status: if db <= db_tol { CheckStatus::Pass } else { CheckStatus::Fail },
        note: String::new(),
    });
    let sol = gradient::solve_gradient_condition(c, omega_radius(cfg, &model))?;
    let gradient_ok = sol.residual <= tol.exact;
    checks.push(CheckEntry {
        name: "gradient",
        residual: Some(sol.residual),
        threshold: tol.exact,
        status: if gradient_ok { CheckStatus::Pass } else { CheckStatus::Fail },
        note: format!("least-squares ω on radius {}", sol.radius),
    });
    let ci = gradient::verify_current_identity(c, &sol.omega);
    let (ci_ok, ci_note) = if gradient_ok {
        (ci <= tol.exact, String::new())
    } else {
        let consistent = (ci - 0.5 * sol.residual).abs() <= tol.exact;
        (consistent, "non-gradient model: identity holds up to half the gradient defect".to_string())
    };
    checks.push(CheckEntry {
        name: "current_identity",
        residual: Some(ci),
        threshold: tol.exact,
        status: if ci_ok { CheckStatus::Pass } else { CheckStatus::Fail },
        note: ci_note,
    });
    if gradient_ok {
        let rows = gradient::verify_fd_relation(c, &sol.omega, &model.spec, &rho_grid(&cfg.check.rho_grid))?;
        let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
        let method = if rows.iter().all(|r| r.method == Method::ExactPolynomial) {
            Method::ExactPolynomial
        } else {
            Method::FiniteDifference
        };
        let threshold = tol.for_method(method);
        checks.push(CheckEntry {
            name: "fd_relation",
            residual: Some(worst),
            threshold,
            status: if worst <= threshold { CheckStatus::Pass } else { CheckStatus::Fail },
            note: format!("max over {} densities, {method}", rows.len()),
        });
    } else {
        checks.push(CheckEntry {
            name: "fd_relation",
            residual: None,
            threshold: tol.exact,
            status: CheckStatus::Skipped,
            note: "needs a gradient potential".into(),
        });
    }
    let failures: Vec<&'static str> = checks.iter().filter(|e| e.status == CheckStatus::Fail).map(|e| e.name).collect();
    Ok(CheckReport { family: model.family.name().into(), passed: failures.is_empty(), failures, checks })
}

pub fn cmd_check(cfg: &ExperimentConfig, tol: Tolerances) -> Result<ExperimentOutput> {
    let report = check_report(cfg, tol)?;
    Ok(ExperimentOutput {
        command: "check",
        passed: report.passed,
        summary: serde_json::to_value(&report)?,
        files: vec![file("check.json", pretty(&report))],
    })
}

fn gradient_potential(model: &ResolvedModel, radius: usize, tol: Tolerances) -> Result<GradientSolution> {
    let sol = gradient::solve_gradient_condition(&model.rates, radius)?;
    if sol.residual > tol.exact {
        return Err(Error::InvariantViolation(format!(
            "{} rates are not gradient (residual {:e}); D and χD are undefined",
            model.family.name(),
            sol.residual
        )));
    }
    Ok(sol)
}

/// The thermodynamic curve with `λ` and the Einstein-relation residual.
pub fn cmd_thermo(cfg: &ExperimentConfig, tol: Tolerances) -> Result<ExperimentOutput> {
    let model = model_of(cfg)?;
    let sol = gradient_potential(&model, omega_radius(cfg, &model), tol)?;
    let symmetric = model.rates.with_gamma(0.0)?;
    let grid = rho_grid(&cfg.thermo.rho_grid);
    let curve = ThermoCurve::compute(&symmetric, &sol.omega, &model.spec, &grid, cfg.thermo.a)?;
    let mut worst = 0.0f64;
    let mut passed = true;
    for r in &curve.rows {
        worst = worst.max(r.einstein_residual);
        passed &= r.einstein_residual <= tol.for_method(r.method);
    }
    let summary = json!({
        "family": model.family.name(),
        "a": cfg.thermo.a,
        "rows": curve.rows.len(),
        "max_einstein_residual": worst,
        "passed": passed,
    });
    Ok(ExperimentOutput { command: "thermo", passed, summary, files: vec![file("thermo.csv", curve.to_csv())] })
}

/// Canonical versus grand-canonical expansion tables.
pub fn cmd_ensembles(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let model = model_of(cfg)?;
    let ens = cfg.ensembles.clone().unwrap_or_default();
    let report = crate::gibbs::equivalence_expansion_report(&ens.observable(), &model.spec, ens.rho, &ens.ells)?;
    let mut at_rho = Vec::new();
    for &ell in &ens.ells {
        if let Some(r) = report.residual_at_rho(ell) {
            at_rho.push(json!({ "ell": ell, "residual": r }));
        }
    }
    let summary = json!({
        "rho": report.rho,
        "max_errors": report.max_errors,
        "fitted_exponent": report.fitted_exponent,
        "residual_at_rho": at_rho,
    });
    Ok(ExperimentOutput {
        command: "ensembles",
        passed: true,
        summary: summary.clone(),
        files: vec![file("ensembles.csv", report.to_csv()), file("ensembles.json", pretty(&summary))],
    })
}

/// Builds the simulation plan of a configuration.
pub fn simulation_plan(cfg: &ExperimentConfig) -> Result<SimulationPlan> {
    let model = model_of(cfg)?;
    let sim = cfg.simulation.as_ref().ok_or_else(|| Error::Config("missing [simulation] section".into()))?;
    let size = cfg.model.size.ok_or_else(|| Error::Config("model.L is required for simulations".into()))?;
    let mut plan = SimulationPlan::new(model.rates.clone(), model.spec.clone(), size, sim.horizon)?
        .with_seed(cfg.seed)
        .with_replicas(sim.replicas)
        .with_snapshots(sim.snapshots);
    match (sim.a, sim.epsilon) {
        (Some(a), Some(eps)) => plan = plan.with_weak_asymmetry(a, eps)?,
        (None, None) => {}
        _ => return Err(Error::Config("give both `a` and `epsilon` or neither".into())),
    }
    let times = match (&sim.sample_times, sim.sample_every) {
        (Some(t), None) => t.clone(),
        (None, Some(every)) => {
            if !(every > 0.0) {
                return Err(Error::Config("sample_every must be positive".into()));
            }
            let n = (sim.horizon / every).floor() as usize;
            let mut t: Vec<f64> = (0..=n).map(|k| k as f64 * every).collect();
            if *t.last().unwrap() < sim.horizon {
                t.push(sim.horizon);
            }
            t
        }
        (None, None) => vec![0.0, sim.horizon],
        (Some(_), Some(_)) => return Err(Error::Config("give sample_times or sample_every, not both".into())),
    };
    plan.with_sample_times(times)
}

fn push_row(out: &mut String, time: f64, site: &str, observable: &str, value: f64, stderr: &str) {
    let _ = writeln!(out, "{time},{site},{observable},{value},{stderr}");
}

const OBSERVABLE_HEADER: &str = "time,site,observable,value,stderr\n";

/// Replica ensemble of the exchange dynamics: currents, conservation
/// columns, optional snapshots and structure function.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let model = model_of(cfg)?;
    let plan = simulation_plan(cfg)?;
    let records = kmc::simulate_replicas(&plan)?;
    let n = plan.size as f64;
    let mut csv = String::from(OBSERVABLE_HEADER);
    let mut conservation_ok = true;
    for (i, &t) in plan.sample_times.iter().enumerate() {
        let per: Vec<f64> = records.iter().map(|r| r.currents[i].iter().sum::<i64>() as f64 / n).collect();
        let (m, se) = mean_se(&per);
        push_row(&mut csv, t, "all", "integrated_current_per_bond", m, &se.to_string());
        let dens: Vec<f64> = records.iter().map(|r| r.particles as f64 / n).collect();
        let (m, se) = mean_se(&dens);
        push_row(&mut csv, t, "all", "density", m, &se.to_string());
    }
    let defect = records.iter().map(|r| r.continuity_defect()).max().unwrap_or(0);
    conservation_ok &= defect == 0;
    push_row(&mut csv, plan.horizon, "all", "continuity_defect", defect as f64, "exact");

    let (current, current_se) = kmc::mean_current(&records);
    let reverse = thermo::static_average(&model.rates.with_gamma(0.0)?.reverse_current_observable(), &model.spec, model.rho)?;
    let target = plan.gamma() * reverse.value;
    let events: u64 = records.iter().map(|r| r.events.accepted()).sum();
    let proposals: u64 = records.iter().map(|r| r.events.proposals).sum();
    let mut summary = json!({
        "family": model.family.name(),
        "rho": model.rho,
        "gamma": plan.gamma(),
        "L": plan.size,
        "horizon": plan.horizon,
        "replicas": records.len(),
        "mean_current": current,
        "mean_current_stderr": current_se,
        "target_current": target,
        "target_method": reverse.method,
        "z_score": if current_se > 0.0 { (current - target) / current_se } else { f64::NAN },
        "accepted_events": events,
        "proposals": proposals,
        "continuity_defect": defect,
    });
    let mut files = vec![file("observables.csv", csv)];
    if plan.keep_snapshots {
        for r in &records {
            let samples: Vec<_> = r.sample_times.iter().copied().zip(r.snapshots.iter().cloned()).collect();
            let mut buf = Vec::new();
            kmc::write_snapshots(&mut buf, plan.size, &samples)?;
            files.push(file(&format!("snapshots_r{:04}.bin", r.replica), buf));
        }
    }
    if let Some(sc) = cfg.simulation.as_ref().and_then(|s| s.structure.clone()) {
        let design = StructureSpec {
            max_lag: sc.max_lag,
            time_lags: sc.time_lags,
            origin_spacing: sc.origin_spacing,
            origins: sc.origins,
            velocity: sc.velocity,
        };
        let s = kmc::structure_function(&plan, &design)?;
        let mut moments = String::from(OBSERVABLE_HEADER);
        for (i, &t) in s.times.iter().enumerate() {
            push_row(&mut moments, t, "all", "second_moment_over_chi", s.second_moment[i].0, &s.second_moment[i].1.to_string());
            push_row(&mut moments, t, "all", "window_sum", s.window_sum[i].0, &s.window_sum[i].1.to_string());
            push_row(&mut moments, t, "all", "ring_sum", s.ring_sum[i].0, &s.ring_sum[i].1.to_string());
        }
        let fit = if s.times.len() >= 2 {
            let lo = s.times.iter().cloned().fold(f64::INFINITY, f64::min).max(f64::MIN_POSITIVE);
            let hi = s.times.iter().cloned().fold(0.0, f64::max);
            s.diffusive_slope(lo, hi).ok()
        } else {
            None
        };
        summary["structure"] = json!({ "chi": s.chi, "slope": fit, "warnings": s.warnings });
        files.push(file("structure.csv", s.to_csv()));
        files.push(file("structure_moments.csv", moments));
    }
    files.push(file("summary.json", pretty(&summary)));
    Ok(ExperimentOutput { command: "simulate", passed: conservation_ok, summary, files })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Replicas of the lattice SBE with coefficients matched to the model.
pub fn cmd_sbe(cfg: &ExperimentConfig, tol: Tolerances) -> Result<ExperimentOutput> {
    let model = model_of(cfg)?;
    let sc = cfg.sbe.as_ref().ok_or_else(|| Error::Config("missing [sbe] section".into()))?;
    let a = sc.a.unwrap_or(cfg.thermo.a);
    let sol = gradient_potential(&model, omega_radius(cfg, &model), tol)?;
    let curve = ThermoCurve::compute(&model.rates.with_gamma(0.0)?, &sol.omega, &model.spec, &[model.rho], a)?;
    let coefficients = sbe::match_microscopic(&curve, model.rho, a)?;
    let dx = sc.dx.unwrap_or(1.0 / sc.cells as f64);
    let mollifier = kmc::Mollifier::triangular(sc.delta)?;
    let template = FieldState::zeros(sc.cells, dx, coefficients, mollifier)?;
    let dt = sc.dt.unwrap_or(0.8 * template.max_dt());
    let every = sc.sample_every.max(1);
    let per: Vec<Vec<(f64, f64, f64)>> = {
        use rayon::prelude::*;
        (0..sc.replicas as u64)
            .into_par_iter()
            .map(|r| -> Result<Vec<(f64, f64, f64)>> {
                let mut rng = kmc::replica_rng(cfg.seed, r);
                let mut s = template.clone();
                let mut out = Vec::new();
                let mut worst_mass = 0.0f64;
                for k in 1..=sc.burn_in + sc.steps {
                    let before = s.mass();
                    s = sbe::step(&s, dt, &mut rng)?;
                    worst_mass = worst_mass.max((s.mass() - before).abs());
                    if k > sc.burn_in && (k - sc.burn_in) % every == 0 {
                        let var = s.values.iter().map(|y| y * y).sum::<f64>() / s.cells() as f64;
                        out.push((var, s.quadratic(), worst_mass));
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?
    };
    let samples = per.first().map_or(0, Vec::len);
    let mut csv = String::from(OBSERVABLE_HEADER);
    let mut mass_defect = 0.0f64;
    let mut time_avg = vec![0.0; per.len()];
    for i in 0..samples {
        let t = (sc.burn_in + (i + 1) * every) as f64 * dt;
        let (m, se) = mean_se(&per.iter().map(|p| p[i].0).collect::<Vec<_>>());
        push_row(&mut csv, t, "all", "cell_variance", m, &se.to_string());
        let (m, se) = mean_se(&per.iter().map(|p| p[i].1).collect::<Vec<_>>());
        push_row(&mut csv, t, "all", "quadratic", m, &se.to_string());
        for (j, p) in per.iter().enumerate() {
            mass_defect = mass_defect.max(p[i].2);
            time_avg[j] += p[i].0 / samples as f64;
        }
    }
    push_row(&mut csv, sc.steps as f64 * dt, "all", "max_mass_change_per_step", mass_defect, "exact");
    let (var, var_se) = mean_se(&time_avg);
    let prediction = sbe::ou_stationary_variance(&coefficients, sc.cells, dx, dt);
    let summary = json!({
        "coefficients": coefficients,
        "dt": dt,
        "dx": dx,
        "delta": sc.delta,
        "stationary_cell_variance": var,
        "stationary_cell_variance_stderr": var_se,
        "ou_prediction_at_lambda_zero": prediction,
        "max_mass_change_per_step": mass_defect,
    });
    let passed = mass_defect <= 1e-12;
    Ok(ExperimentOutput {
        command: "sbe",
        passed,
        summary: summary.clone(),
        files: vec![file("field.csv", csv), file("summary.json", pretty(&summary))],
    })
}

/// Writes the output files and `manifest.json` into `dir`.
pub fn write_output(dir: &Path, cfg: &ExperimentConfig, tol: Tolerances, out: &ExperimentOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in &out.files {
        std::fs::write(dir.join(&f.name), &f.contents)?;
    }
    let model = cfg.model.resolve()?;
    let manifest = json!({
        "tool": "kawasaki",
        "version": env!("CARGO_PKG_VERSION"),
        "command": out.command,
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "tolerances": tol,
        "config": cfg,
        "resolved_model": {
            "family": model.family,
            "rates": model.rates.to_json(),
            "gibbs": model.spec,
            "rho": model.rho,
        },
        "files": out.files.iter().map(|f| f.name.clone()).collect::<Vec<_>>(),
        "passed": out.passed,
        "summary": out.summary,
    });
    std::fs::write(dir.join("manifest.json"), pretty(&manifest))?;
    Ok(())
}
