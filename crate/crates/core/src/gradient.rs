//! Structural conditions on exchange rates: detailed balance, the gradient
//! condition `c(η)(η(0) - η(1)) = ω(η) - ω(θ_1 η)`, the current identity and
//! the fluctuation-dissipation relation, plus a linear-programming search
//! for rates that satisfy all of them at once.
//!
//! Every check scans all configurations of a finite window exhaustively.

use minilp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs;
use crate::lattice::{low_mask, GibbsSpec, LocalFunction, RateTable};
use crate::thermo::{self, Method};

/// Residual at or below this is treated as an exact identity.
pub const EXACT_THRESHOLD: f64 = 1e-10;
/// Residuals between the exact threshold and this are flagged as suspicious.
pub const SUSPICIOUS_THRESHOLD: f64 = 1e-6;

/// Largest `ω` radius accepted by the least-squares solver.
pub const MAX_OMEGA_RADIUS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Exact,
    Suspicious,
    Fails,
}

impl Verdict {
    pub fn of(residual: f64) -> Self {
        if residual <= EXACT_THRESHOLD {
            Verdict::Exact
        } else if residual <= SUSPICIOUS_THRESHOLD {
            Verdict::Suspicious
        } else {
            Verdict::Fails
        }
    }
}

/// Reads site `y` of a configuration packed over the window starting at `lo`.
#[inline]
fn reader(bits: usize, lo: i64) -> impl Fn(i64) -> u8 {
    move |y: i64| ((bits >> (y - lo)) & 1) as u8
}

/// `max |c(η) - e^{-βΔH} c(η^{0,1})|` over exchangeable window configurations.
pub fn check_detailed_balance(c: &RateTable, spec: &GibbsSpec) -> f64 {
    let r = c.radius();
    let m = r.max(spec.range());
    let width = 2 * m + 2;
    let shift = m - r;
    let rate_mask = low_mask(c.window_len());
    let beta = spec.beta();
    let mut worst = 0.0f64;
    for bits in 0..1usize << width {
        let e0 = (bits >> m) & 1;
        let e1 = (bits >> (m + 1)) & 1;
        if e0 == e1 {
            continue;
        }
        let swapped = bits ^ (1 << m) ^ (1 << (m + 1));
        let dh = spec.exchange_delta_with(reader(bits, -(m as i64)));
        let here = c.symmetric_rate((bits >> shift) & rate_mask);
        let there = c.symmetric_rate((swapped >> shift) & rate_mask);
        worst = worst.max((here - (-beta * dh).exp() * there).abs());
    }
    worst
}

/// A potential `ω` for the gradient condition with its defining-equation residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientSolution {
    pub omega: LocalFunction,
    /// Max-norm of `c(η)(η(0)-η(1)) - ω(η) + ω(θ_1 η)` over the combined window.
    pub residual: f64,
    pub radius: usize,
    pub gauge: String,
}

impl GradientSolution {
    pub fn verdict(&self) -> Verdict {
        Verdict::of(self.residual)
    }
}

/// Pointwise evaluation of the gradient equation, independent of any solver
/// matrix. The window covers `ω`, `θ_1 ω` and the rate window.
pub fn gradient_residual(c: &RateTable, omega: &LocalFunction) -> f64 {
    let r = c.radius() as i64;
    let (olo, ohi) = omega.window();
    let lo = (olo as i64).min(-r);
    let hi = (ohi as i64 + 1).max(r + 1);
    let width = (hi - lo + 1) as usize;
    let shifted = omega.shift(1);
    let mut worst = 0.0f64;
    for bits in 0..1usize << width {
        let site = reader(bits, lo);
        let rate_idx = (bits >> (-r - lo)) & low_mask(c.window_len());
        let current = c.symmetric_rate(rate_idx) * (site(0) as f64 - site(1) as f64);
        let g = current - omega.evaluate_with(&site) + shifted.evaluate_with(&site);
        worst = worst.max(g.abs());
    }
    worst
}

struct GradientSystem {
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
}

/// Linear system in the `2^(2K+1) - 1` non-constant coefficients of `ω`.
fn gradient_system(c: &RateTable, k: usize) -> GradientSystem {
    let r = c.radius();
    let omega_width = 2 * k + 1;
    let rows = 1usize << (omega_width + 1);
    let cols = (1usize << omega_width) - 1;
    let low = low_mask(omega_width);
    let mut matrix = DMatrix::zeros(rows, cols);
    let mut rhs = DVector::zeros(rows);
    for m in 0..rows {
        let here = m & low;
        let next = m >> 1;
        for a in 1..=cols {
            let v = (a & here == a) as i32 - (a & next == a) as i32;
            matrix[(m, a - 1)] = v as f64;
        }
        let e0 = ((m >> k) & 1) as f64;
        let e1 = ((m >> (k + 1)) & 1) as f64;
        let idx = (m >> (k - r)) & low_mask(c.window_len());
        rhs[m] = c.symmetric_rate(idx) * (e0 - e1);
    }
    GradientSystem { matrix, rhs }
}

fn check_radius(c: &RateTable, k: usize) -> Result<()> {
    if k < c.radius() {
        return Err(Error::param(format!("ω radius {k} smaller than rate radius {}", c.radius())));
    }
    if k > MAX_OMEGA_RADIUS {
        return Err(Error::param(format!("ω radius {k} exceeds {MAX_OMEGA_RADIUS}")));
    }
    Ok(())
}

fn omega_from_coefficients(k: usize, x: &DVector<f64>) -> LocalFunction {
    let mut coeffs = vec![0.0];
    coeffs.extend(x.iter().copied());
    let k = k as i32;
    LocalFunction::new(-k, k, coeffs).expect("coefficient count matches window")
}

/// Least-squares `ω` on `{-K, …, K}` with the constant coefficient fixed to 0.
pub fn solve_gradient_condition(c: &RateTable, k: usize) -> Result<GradientSolution> {
    solve_gradient_condition_from(c, k, None)
}

/// As [`solve_gradient_condition`], starting from an initial guess; only the
/// correction is solved for.
pub fn solve_gradient_condition_from(
    c: &RateTable,
    k: usize,
    initial: Option<&LocalFunction>,
) -> Result<GradientSolution> {
    check_radius(c, k)?;
    let sys = gradient_system(c, k);
    let ki = k as i32;
    let x0 = match initial {
        Some(w) => {
            let w = w.with_window(-ki, ki)?;
            DVector::from_iterator(sys.matrix.ncols(), w.coefficients()[1..].iter().copied())
        }
        None => DVector::zeros(sys.matrix.ncols()),
    };
    let rhs = &sys.rhs - &sys.matrix * &x0;
    let svd = sys.matrix.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let delta = svd
        .solve(&rhs, smax * 1e-12)
        .map_err(|e| Error::Numerical(format!("least-squares solve failed: {e}")))?;
    let x = x0 + delta;
    let omega = omega_from_coefficients(k, &x);
    let residual = gradient_residual(c, &omega);
    Ok(GradientSolution {
        omega,
        residual,
        radius: k,
        gauge: "coefficient of the empty monomial fixed to 0".into(),
    })
}

/// Independent route: Cholesky on the normal equations `AᵀA x = Aᵀb`.
pub fn solve_gradient_normal_equations(c: &RateTable, k: usize) -> Result<GradientSolution> {
    check_radius(c, k)?;
    let sys = gradient_system(c, k);
    let ata = sys.matrix.tr_mul(&sys.matrix);
    let atb = sys.matrix.tr_mul(&sys.rhs);
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::Numerical("normal equations are not positive definite".into()))?;
    let x = chol.solve(&atb);
    let omega = omega_from_coefficients(k, &x);
    let residual = gradient_residual(c, &omega);
    Ok(GradientSolution { omega, residual, radius: k, gauge: "coefficient of the empty monomial fixed to 0".into() })
}

/// `max |c η(1)(1-η(0)) - ½ c (η(1)-η(0))² - ½ (ω(θ_1 η) - ω(η))|` pointwise.
pub fn verify_current_identity(c: &RateTable, omega: &LocalFunction) -> f64 {
    let r = c.radius() as i64;
    let (olo, ohi) = omega.window();
    let lo = (olo as i64).min(-r);
    let hi = (ohi as i64 + 1).max(r + 1);
    let width = (hi - lo + 1) as usize;
    let shifted = omega.shift(1);
    let mut worst = 0.0f64;
    for bits in 0..1usize << width {
        let site = reader(bits, lo);
        let e0 = site(0) as f64;
        let e1 = site(1) as f64;
        let rate = c.symmetric_rate((bits >> (-r - lo)) & low_mask(c.window_len()));
        let lhs = rate * e1 * (1.0 - e0);
        let rhs = 0.5 * rate * (e1 - e0) * (e1 - e0)
            + 0.5 * (shifted.evaluate_with(&site) - omega.evaluate_with(&site));
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdRow {
    pub rho: f64,
    /// `∫ c (η(1)-η(0))² dν_ρ`
    pub activity: f64,
    /// `2 χ(ρ) D(ρ)`
    pub twice_chi_d: f64,
    pub residual: f64,
    pub method: Method,
}

/// Fluctuation-dissipation relation `∫ c (η(1)-η(0))² dν_ρ = 2 χ(ρ) D(ρ)`.
pub fn verify_fd_relation(c: &RateTable, omega: &LocalFunction, spec: &GibbsSpec, rho_grid: &[f64]) -> Result<Vec<FdRow>> {
    let activity = c.activity_observable();
    rho_grid
        .iter()
        .map(|&rho| {
            let lhs = thermo::static_average(&activity, spec, rho)?;
            let chi = gibbs::compressibility(spec, rho)?.chi;
            let d = thermo::static_average(omega, spec, rho)?;
            let rhs = 2.0 * chi * d.first;
            let method = if lhs.method == Method::ExactPolynomial && d.method == Method::ExactPolynomial {
                Method::ExactPolynomial
            } else {
                Method::FiniteDifference
            };
            Ok(FdRow { rho, activity: lhs.value, twice_chi_d: rhs, residual: (lhs.value - rhs).abs(), method })
        })
        .collect()
}

/// Outcome of the rate designer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FeasibilityCertificate {
    Feasible {
        rates: Vec<f64>,
        radius: usize,
        omega: GradientSolution,
        /// Largest violation of any constraint at the returned point.
        max_violation: f64,
    },
    Infeasible { witness: InfeasibilityWitness },
}

impl FeasibilityCertificate {
    pub fn is_feasible(&self) -> bool {
        matches!(self, FeasibilityCertificate::Feasible { .. })
    }

    pub fn rate_table(&self) -> Option<Result<RateTable>> {
        match self {
            FeasibilityCertificate::Feasible { rates, radius, .. } => {
                Some(RateTable::from_rates(*radius, rates.clone()))
            }
            FeasibilityCertificate::Infeasible { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InfeasibilityWitness {
    /// The rate bounds themselves are empty.
    Bound { lower: f64, upper: f64 },
    /// Minimal total slack needed to satisfy the equalities, and the
    /// constraints that carry it.
    Constraints { total_slack: f64, violated: Vec<(String, f64)> },
}

/// Joint linear system in `(c, ω)` for rates of radius `r` and potentials of radius `K`.
#[derive(Clone, Debug)]
pub struct GradientRateProblem {
    spec: GibbsSpec,
    radius: usize,
    omega_radius: usize,
    lower: f64,
    upper: f64,
}

struct Row {
    label: String,
    terms: Vec<(usize, f64)>,
}

pub const DESIGN_LOWER_BOUND: f64 = 1e-6;

impl GradientRateProblem {
    pub fn new(spec: &GibbsSpec, radius: usize, omega_radius: usize) -> Result<Self> {
        if radius > 2 || omega_radius > 3 {
            return Err(Error::param(format!(
                "designer windows r = {radius}, K = {omega_radius} too large (limits r ≤ 2, K ≤ 3)"
            )));
        }
        if omega_radius < radius {
            return Err(Error::param("ω radius must be at least the rate radius"));
        }
        if spec.range() > radius {
            return Err(Error::param(format!(
                "potential range {} does not fit in rate radius {radius}",
                spec.range()
            )));
        }
        Ok(Self { spec: spec.clone(), radius, omega_radius, lower: DESIGN_LOWER_BOUND, upper: 1.0 })
    }

    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    fn rate_count(&self) -> usize {
        1 << (2 * self.radius + 2)
    }

    fn omega_count(&self) -> usize {
        (1 << (2 * self.omega_radius + 1)) - 1
    }

    fn exchangeable(&self, m: usize) -> bool {
        ((m >> self.radius) & 1) != ((m >> (self.radius + 1)) & 1)
    }

    /// Equality rows over the variable vector `[c_0, …, c_{n-1}, ω_1, …]`.
    fn rows(&self) -> Vec<Row> {
        let r = self.radius;
        let k = self.omega_radius;
        let nc = self.rate_count();
        let mut rows = Vec::new();
        let beta = self.spec.beta();
        for m in 0..nc {
            let e0 = (m >> r) & 1;
            let e1 = (m >> (r + 1)) & 1;
            if e0 == 1 && e1 == 0 {
                let swapped = m ^ (1 << r) ^ (1 << (r + 1));
                let dh = self.spec.exchange_delta_with(reader(m, -(r as i64)));
                rows.push(Row {
                    label: format!("detailed_balance[{m:#b}]"),
                    terms: vec![(m, 1.0), (swapped, -(-beta * dh).exp())],
                });
            }
        }
        let omega_width = 2 * k + 1;
        let low = low_mask(omega_width);
        for m in 0..1usize << (omega_width + 1) {
            let mut terms = Vec::new();
            let e0 = ((m >> k) & 1) as f64;
            let e1 = ((m >> (k + 1)) & 1) as f64;
            if e0 != e1 {
                let idx = (m >> (k - r)) & low_mask(2 * r + 2);
                terms.push((idx, e0 - e1));
            }
            let (here, next) = (m & low, m >> 1);
            for a in 1..=self.omega_count() {
                let v = (a & here == a) as i32 - (a & next == a) as i32;
                if v != 0 {
                    terms.push((nc + a - 1, -(v as f64)));
                }
            }
            rows.push(Row { label: format!("gradient[{m:#b}]"), terms });
        }
        rows
    }

    /// Largest violation of any constraint (exclusion, bounds, detailed
    /// balance, gradient) by a candidate `(c, ω)`.
    pub fn constraint_violation(&self, rates: &[f64], omega: &LocalFunction) -> Result<f64> {
        if rates.len() != self.rate_count() {
            return Err(Error::param("rate vector has the wrong length"));
        }
        let k = self.omega_radius as i32;
        let omega = omega.with_window(-k, k)?;
        let mut vars = rates.to_vec();
        vars.extend_from_slice(&omega.coefficients()[1..]);
        let mut worst = 0.0f64;
        for (m, &c) in rates.iter().enumerate() {
            if self.exchangeable(m) {
                worst = worst.max(self.lower - c).max(c - self.upper);
            } else {
                worst = worst.max(c.abs());
            }
        }
        for row in self.rows() {
            let v: f64 = row.terms.iter().map(|&(i, a)| a * vars[i]).sum();
            worst = worst.max(v.abs());
        }
        Ok(worst)
    }

    fn build(&self, with_slack: bool) -> (Problem, Vec<Variable>, Vec<Option<(Variable, Variable)>>, Vec<Row>) {
        let direction = if with_slack { OptimizationDirection::Minimize } else { OptimizationDirection::Maximize };
        let mut lp = Problem::new(direction);
        let mut vars = Vec::new();
        for m in 0..self.rate_count() {
            let obj = if with_slack { 0.0 } else { 1.0 };
            let bounds = if self.exchangeable(m) { (self.lower, self.upper) } else { (0.0, 0.0) };
            vars.push(lp.add_var(obj, bounds));
        }
        for _ in 0..self.omega_count() {
            vars.push(lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)));
        }
        let rows = self.rows();
        let mut slacks = Vec::with_capacity(rows.len());
        for row in &rows {
            let mut expr: Vec<(Variable, f64)> = row.terms.iter().map(|&(i, a)| (vars[i], a)).collect();
            if with_slack {
                let plus = lp.add_var(1.0, (0.0, f64::INFINITY));
                let minus = lp.add_var(1.0, (0.0, f64::INFINITY));
                expr.push((plus, 1.0));
                expr.push((minus, -1.0));
                slacks.push(Some((plus, minus)));
            } else {
                slacks.push(None);
            }
            lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, 0.0);
        }
        (lp, vars, slacks, rows)
    }

    /// Maximizes `Σ c` over the feasible set, or explains why it is empty.
    pub fn solve(&self) -> Result<FeasibilityCertificate> {
        if !(self.lower <= self.upper) {
            return Ok(FeasibilityCertificate::Infeasible {
                witness: InfeasibilityWitness::Bound { lower: self.lower, upper: self.upper },
            });
        }
        let (lp, vars, _, _) = self.build(false);
        match lp.solve() {
            Ok(sol) => {
                let nc = self.rate_count();
                let rates: Vec<f64> = (0..nc)
                    .map(|m| {
                        let v = sol[vars[m]];
                        if self.exchangeable(m) {
                            v.clamp(self.lower, self.upper)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let x = DVector::from_iterator(self.omega_count(), (nc..vars.len()).map(|i| sol[vars[i]]));
                let omega = omega_from_coefficients(self.omega_radius, &x);
                let max_violation = self.constraint_violation(&rates, &omega)?;
                let table = RateTable::from_rates(self.radius, rates.clone())?;
                let residual = gradient_residual(&table, &omega);
                Ok(FeasibilityCertificate::Feasible {
                    rates,
                    radius: self.radius,
                    omega: GradientSolution {
                        omega,
                        residual,
                        radius: self.omega_radius,
                        gauge: "coefficient of the empty monomial fixed to 0".into(),
                    },
                    max_violation,
                })
            }
            Err(minilp::Error::Infeasible) => {
                let (lp, _, slacks, rows) = self.build(true);
                let sol = lp
                    .solve()
                    .map_err(|e| Error::Numerical(format!("phase-one problem failed: {e}")))?;
                let mut violated: Vec<(String, f64)> = rows
                    .iter()
                    .zip(&slacks)
                    .filter_map(|(row, s)| {
                        let (p, m) = s.expect("slack variables present");
                        let v = sol[p] + sol[m];
                        (v > 1e-9).then(|| (row.label.clone(), v))
                    })
                    .collect();
                violated.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
                Ok(FeasibilityCertificate::Infeasible {
                    witness: InfeasibilityWitness::Constraints { total_slack: sol.objective(), violated },
                })
            }
            Err(e) => Err(Error::Numerical(format!("rate design LP failed: {e}"))),
        }
    }
}

/// Searches for gradient, reversible rates of radius `r` with `ω` of radius `K`.
pub fn design_gradient_rate(spec: &GibbsSpec, r: usize, k: usize) -> Result<FeasibilityCertificate> {
    GradientRateProblem::new(spec, r, k)?.solve()
}
