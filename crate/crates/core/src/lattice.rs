//! Occupancy states on a periodic lattice, local observables, finite-range
//! potentials and exchange-rate tables.
//!
//! Windows are always contiguous runs of sites. Whenever a window is packed
//! into an integer, bit `i` holds the occupancy of the `i`-th site of the
//! window counted from its left end.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Occupancy state `η ∈ {0,1}^L` on the ring `Z / LZ`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct RingConfiguration {
    occupancy: Vec<u8>,
    particles: usize,
}

impl RingConfiguration {
    pub fn new(occupancy: Vec<u8>) -> Result<Self> {
        if occupancy.is_empty() {
            return Err(Error::InvalidConfiguration("ring must have at least one site".into()));
        }
        if let Some(pos) = occupancy.iter().position(|&v| v > 1) {
            return Err(Error::InvalidConfiguration(format!(
                "occupancy at site {pos} is {}, expected 0 or 1",
                occupancy[pos]
            )));
        }
        let particles = occupancy.iter().map(|&v| v as usize).sum();
        Ok(Self { occupancy, particles })
    }

    pub fn empty(size: usize) -> Self {
        assert!(size > 0, "ring must have at least one site");
        Self { occupancy: vec![0; size], particles: 0 }
    }

    pub fn full(size: usize) -> Self {
        assert!(size > 0, "ring must have at least one site");
        Self { occupancy: vec![1; size], particles: size }
    }

    /// Site `i` takes bit `i` of `bits`. Requires `size <= 64`.
    pub fn from_bits(bits: u64, size: usize) -> Self {
        assert!(size > 0 && size <= 64);
        let occupancy: Vec<u8> = (0..size).map(|i| ((bits >> i) & 1) as u8).collect();
        let particles = occupancy.iter().map(|&v| v as usize).sum();
        Self { occupancy, particles }
    }

    /// Alternating `1,0,1,0,…` starting with a particle at site 0.
    pub fn alternating(size: usize) -> Self {
        let occupancy: Vec<u8> = (0..size).map(|i| (i % 2 == 0) as u8).collect();
        Self::new(occupancy).expect("alternating pattern is binary")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles == 0
    }

    #[inline]
    pub fn particle_count(&self) -> usize {
        self.particles
    }

    pub fn density(&self) -> f64 {
        self.particles as f64 / self.len() as f64
    }

    pub fn occupancies(&self) -> &[u8] {
        &self.occupancy
    }

    /// Occupancy at site `x`, reduced modulo `L`.
    #[inline]
    pub fn get(&self, x: i64) -> u8 {
        self.occupancy[wrap(x, self.len())]
    }

    /// Swaps the occupancies of sites `x` and `x + 1 (mod L)`.
    #[inline]
    pub fn exchange(&mut self, x: usize) {
        let l = self.len();
        debug_assert!(x < l);
        let y = if x + 1 == l { 0 } else { x + 1 };
        self.occupancy.swap(x, y);
    }

    pub fn exchanged(&self, x: usize) -> Self {
        let mut out = self.clone();
        out.exchange(x);
        out
    }

    /// Packs sites `x + lo, …, x + lo + width - 1` (mod `L`) into an index.
    #[inline]
    pub fn window_index(&self, x: usize, lo: i64, width: usize) -> usize {
        let l = self.len() as i64;
        let start = x as i64 + lo;
        let mut idx = 0usize;
        if start >= 0 && start + width as i64 <= l {
            let s = start as usize;
            for (i, &v) in self.occupancy[s..s + width].iter().enumerate() {
                idx |= (v as usize) << i;
            }
        } else {
            for i in 0..width {
                idx |= (self.get(start + i as i64) as usize) << i;
            }
        }
        idx
    }

    /// `η'(x) = η(x + shift)`: the configuration seen from an origin moved by `shift`.
    pub fn rotated(&self, shift: i64) -> Self {
        let l = self.len();
        let occupancy = (0..l).map(|x| self.get(x as i64 + shift)).collect();
        Self { occupancy, particles: self.particles }
    }

    /// 64 sites per word, site `64 w + i` in bit `i` of word `w`.
    pub fn to_words(&self) -> Vec<u64> {
        let mut words = vec![0u64; self.len().div_ceil(64)];
        for (x, &v) in self.occupancy.iter().enumerate() {
            words[x / 64] |= (v as u64) << (x % 64);
        }
        words
    }

    pub fn from_words(words: &[u64], size: usize) -> Result<Self> {
        if words.len() != size.div_ceil(64) {
            return Err(Error::InvalidConfiguration(format!(
                "{} words cannot hold exactly {size} sites",
                words.len()
            )));
        }
        let occupancy = (0..size).map(|x| ((words[x / 64] >> (x % 64)) & 1) as u8).collect();
        Self::new(occupancy)
    }
}

impl TryFrom<Vec<u8>> for RingConfiguration {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RingConfiguration> for Vec<u8> {
    fn from(c: RingConfiguration) -> Self {
        c.occupancy
    }
}

impl fmt::Debug for RingConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.occupancy.iter().map(|&v| if v == 1 { '1' } else { '0' }).collect();
        write!(f, "Ring[{s}]")
    }
}

#[inline]
pub(crate) fn wrap(x: i64, l: usize) -> usize {
    x.rem_euclid(l as i64) as usize
}

#[inline]
pub(crate) fn low_mask(width: usize) -> usize {
    if width >= usize::BITS as usize {
        usize::MAX
    } else {
        (1usize << width) - 1
    }
}

/// Largest window handled by exhaustive tables (2^20 entries).
pub const MAX_WINDOW: usize = 20;

/// A function of the sites in `[lo, hi]`, stored in the product basis:
/// `f(η) = Σ_A coeff(A) ∏_{x∈A} η(x)` with `A` ranging over subsets of the window.
///
/// Subsets are bitmasks: bit `i` stands for site `lo + i`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFunction {
    lo: i32,
    hi: i32,
    coefficients: Vec<f64>,
}

impl LocalFunction {
    pub fn new(lo: i32, hi: i32, coefficients: Vec<f64>) -> Result<Self> {
        if hi < lo {
            return Err(Error::param(format!("empty window [{lo}, {hi}]")));
        }
        let width = (hi - lo + 1) as usize;
        if width > MAX_WINDOW {
            return Err(Error::param(format!("window of {width} sites exceeds {MAX_WINDOW}")));
        }
        if coefficients.len() != 1 << width {
            return Err(Error::param(format!(
                "window [{lo}, {hi}] needs {} coefficients, got {}",
                1usize << width,
                coefficients.len()
            )));
        }
        Ok(Self { lo, hi, coefficients })
    }

    pub fn zero(lo: i32, hi: i32) -> Self {
        let width = (hi - lo + 1) as usize;
        Self::new(lo, hi, vec![0.0; 1 << width]).expect("valid window")
    }

    pub fn constant(value: f64) -> Self {
        Self { lo: 0, hi: 0, coefficients: vec![value, 0.0] }
    }

    /// `η(site)`.
    pub fn occupation(site: i32) -> Self {
        Self { lo: site, hi: site, coefficients: vec![0.0, 1.0] }
    }

    /// `∏_{x ∈ sites} η(x)`.
    pub fn monomial(sites: &[i32]) -> Self {
        Self::from_terms(&[(sites.to_vec(), 1.0)])
    }

    /// Sum of monomials. The window is the smallest one containing every site.
    pub fn from_terms(terms: &[(Vec<i32>, f64)]) -> Self {
        let all: Vec<i32> = terms.iter().flat_map(|(s, _)| s.iter().copied()).collect();
        let lo = all.iter().copied().min().unwrap_or(0);
        let hi = all.iter().copied().max().unwrap_or(0);
        let mut f = Self::zero(lo, hi);
        for (sites, c) in terms {
            let mask = sites.iter().fold(0usize, |m, &s| m | 1 << (s - lo));
            f.coefficients[mask] += c;
        }
        f
    }

    /// Inverts the subset-sum transform: `values[m]` is `f` on the window
    /// configuration with occupied sites `m`.
    pub fn from_values(lo: i32, hi: i32, values: &[f64]) -> Result<Self> {
        let mut coefficients = values.to_vec();
        let width = (hi - lo + 1).max(0) as usize;
        if coefficients.len() != 1 << width {
            return Err(Error::param("value table does not match window"));
        }
        for bit in 0..width {
            for m in 0..coefficients.len() {
                if m & (1 << bit) != 0 {
                    coefficients[m] -= coefficients[m ^ (1 << bit)];
                }
            }
        }
        Self::new(lo, hi, coefficients)
    }

    pub fn window(&self) -> (i32, i32) {
        (self.lo, self.hi)
    }

    pub fn width(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Coefficient of the monomial over `sites` (0 if outside the window).
    pub fn coefficient(&self, sites: &[i32]) -> f64 {
        if sites.iter().any(|&s| s < self.lo || s > self.hi) {
            return 0.0;
        }
        let mask = sites.iter().fold(0usize, |m, &s| m | 1 << (s - self.lo));
        self.coefficients[mask]
    }

    /// Values on every window configuration (subset-sum transform).
    pub fn values(&self) -> Vec<f64> {
        let mut v = self.coefficients.clone();
        for bit in 0..self.width() {
            for m in 0..v.len() {
                if m & (1 << bit) != 0 {
                    v[m] += v[m ^ (1 << bit)];
                }
            }
        }
        v
    }

    /// `f` on the window configuration `mask` (bit `i` = site `lo + i`).
    pub fn evaluate_bits(&self, mask: usize) -> f64 {
        let mask = mask & low_mask(self.width());
        // iterate submasks of `mask`, including the empty set
        let mut total = 0.0;
        let mut sub = mask;
        loop {
            total += self.coefficients[sub];
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & mask;
        }
        total
    }

    /// `f_x(η) = Σ_A coeff(A) ∏_{y∈A} η(x + y mod L)`.
    pub fn evaluate(&self, eta: &RingConfiguration, x: usize) -> f64 {
        let mask = eta.window_index(x, self.lo as i64, self.width());
        self.evaluate_bits(mask)
    }

    /// Value on a configuration given by a site reader.
    pub fn evaluate_with(&self, site: impl Fn(i64) -> u8) -> f64 {
        let mut mask = 0usize;
        for i in 0..self.width() {
            mask |= (site(self.lo as i64 + i as i64) as usize) << i;
        }
        self.evaluate_bits(mask)
    }

    /// `θ_z f`, i.e. `η ↦ f(θ_z η)`: same coefficients, window moved by `z`.
    pub fn shift(&self, z: i32) -> Self {
        Self { lo: self.lo + z, hi: self.hi + z, coefficients: self.coefficients.clone() }
    }

    /// Re-expresses `f` on a larger window `[lo, hi] ⊇ window(f)`.
    pub fn with_window(&self, lo: i32, hi: i32) -> Result<Self> {
        if lo > self.lo || hi < self.hi {
            return Err(Error::param(format!(
                "window [{lo}, {hi}] does not contain [{}, {}]",
                self.lo, self.hi
            )));
        }
        let mut out = Self::zero(lo, hi);
        let offset = (self.lo - lo) as usize;
        for (m, &c) in self.coefficients.iter().enumerate() {
            out.coefficients[m << offset] += c;
        }
        Ok(out)
    }

    /// `f ∘ flip` with `flip(η)(x) = 1 - η(x)`.
    pub fn flipped(&self) -> Self {
        let v = self.values();
        let full = v.len() - 1;
        let flipped: Vec<f64> = (0..v.len()).map(|m| v[full ^ m]).collect();
        Self::from_values(self.lo, self.hi, &flipped).expect("same window")
    }

    /// Pointwise product of two local functions.
    pub fn product(&self, other: &Self) -> Self {
        let lo = self.lo.min(other.lo);
        let hi = self.hi.max(other.hi);
        let a = self.with_window(lo, hi).expect("union window").values();
        let b = other.with_window(lo, hi).expect("union window").values();
        let v: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        Self::from_values(lo, hi, &v).expect("same window")
    }

    /// Sets the coefficient of the empty monomial (the additive constant).
    pub fn with_constant(&self, value: f64) -> Self {
        let mut out = self.clone();
        out.coefficients[0] = value;
        out
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.coefficients.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// Monomials with nonzero coefficient, as `(sites, coefficient)`.
    pub fn terms(&self) -> Vec<(Vec<i32>, f64)> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(m, &c)| {
                let sites = (0..self.width()).filter(|i| m & (1 << i) != 0).map(|i| self.lo + i as i32);
                (sites.collect(), c)
            })
            .collect()
    }
}

fn combine(a: &LocalFunction, b: &LocalFunction, sign: f64) -> LocalFunction {
    let lo = a.lo.min(b.lo);
    let hi = a.hi.max(b.hi);
    let mut out = a.with_window(lo, hi).expect("union window");
    let bw = b.with_window(lo, hi).expect("union window");
    for (x, y) in out.coefficients.iter_mut().zip(&bw.coefficients) {
        *x += sign * y;
    }
    out
}

impl Add for &LocalFunction {
    type Output = LocalFunction;
    fn add(self, rhs: &LocalFunction) -> LocalFunction {
        combine(self, rhs, 1.0)
    }
}

impl Sub for &LocalFunction {
    type Output = LocalFunction;
    fn sub(self, rhs: &LocalFunction) -> LocalFunction {
        combine(self, rhs, -1.0)
    }
}

impl Mul<f64> for &LocalFunction {
    type Output = LocalFunction;
    fn mul(self, alpha: f64) -> LocalFunction {
        LocalFunction {
            lo: self.lo,
            hi: self.hi,
            coefficients: self.coefficients.iter().map(|c| c * alpha).collect(),
        }
    }
}

impl fmt::Debug for LocalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LocalFunction[{}, {}]{{", self.lo, self.hi)?;
        for (i, (sites, c)) in self.terms().iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}·η{sites:?}")?;
        }
        write!(f, "}}")
    }
}

/// One term `J_A η(A)` of a translation-invariant potential. `sites` are
/// offsets from the base site; after construction the smallest offset is 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub sites: Vec<i32>,
    #[serde(rename = "j")]
    pub strength: f64,
}

impl Coupling {
    pub fn new(sites: &[i32], strength: f64) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::param("coupling pattern must contain at least one site"));
        }
        let base = *sites.iter().min().unwrap();
        let mut s: Vec<i32> = sites.iter().map(|x| x - base).collect();
        s.sort_unstable();
        s.dedup();
        if !strength.is_finite() {
            return Err(Error::param("coupling strength must be finite"));
        }
        Ok(Self { sites: s, strength })
    }

    pub fn diameter(&self) -> usize {
        *self.sites.last().unwrap() as usize
    }
}

/// Finite-range potential `J`, inverse temperature `β` and fugacity `φ`.
///
/// Weights are `exp(-β H - φ Σ η(x))`, so the density decreases with `φ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsSpec {
    couplings: Vec<Coupling>,
    beta: f64,
    phi: f64,
}

/// Transfer matrices use `2^range` states; anything longer is refused.
pub const MAX_RANGE: usize = 4;

impl GibbsSpec {
    pub fn new(couplings: Vec<Coupling>, beta: f64, phi: f64) -> Result<Self> {
        let couplings = couplings
            .into_iter()
            .map(|c| Coupling::new(&c.sites, c.strength))
            .collect::<Result<Vec<_>>>()?;
        if !beta.is_finite() || !phi.is_finite() {
            return Err(Error::param("beta and phi must be finite"));
        }
        let spec = Self { couplings, beta, phi };
        if spec.range() > MAX_RANGE {
            return Err(Error::param(format!(
                "potential range {} exceeds the supported {MAX_RANGE}",
                spec.range()
            )));
        }
        Ok(spec)
    }

    /// No interaction: Bernoulli product measure with fugacity `phi`.
    pub fn product(phi: f64) -> Self {
        Self { couplings: Vec::new(), beta: 0.0, phi }
    }

    /// `J Σ_x η(x) η(x+1)`.
    pub fn nearest_neighbor(j: f64, beta: f64, phi: f64) -> Self {
        Self::new(vec![Coupling { sites: vec![0, 1], strength: j }], beta, phi)
            .expect("nearest-neighbour coupling is valid")
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn with_phi(&self, phi: f64) -> Self {
        Self { phi, ..self.clone() }
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..self.clone() }
    }

    /// Largest pattern diameter `R`.
    pub fn range(&self) -> usize {
        self.couplings.iter().map(Coupling::diameter).max().unwrap_or(0)
    }

    /// True when the invariant measures are Bernoulli products.
    pub fn is_product(&self) -> bool {
        self.beta == 0.0 || self.couplings.iter().all(|c| c.sites.len() == 1)
    }

    /// `β Σ J` over single-site patterns; acts as a shift of the fugacity.
    pub(crate) fn single_site_field(&self) -> f64 {
        self.beta
            * self
                .couplings
                .iter()
                .filter(|c| c.sites.len() == 1)
                .map(|c| c.strength)
                .sum::<f64>()
    }

    /// `Σ_b Σ_A J_A η(b + A)` over all bases on the ring.
    pub fn ring_energy(&self, eta: &RingConfiguration) -> f64 {
        let l = eta.len() as i64;
        let mut e = 0.0;
        for b in 0..l {
            for c in &self.couplings {
                if c.sites.iter().all(|&s| eta.get(b + s as i64) == 1) {
                    e += c.strength;
                }
            }
        }
        e
    }

    /// `H(η^{0,1}) - H(η)` for a configuration read relative to the bond `(0, 1)`.
    pub fn exchange_delta_with(&self, site: impl Fn(i64) -> u8) -> f64 {
        let a = site(0);
        let b = site(1);
        if a == b {
            return 0.0;
        }
        let swapped = |y: i64| match y {
            0 => b,
            1 => a,
            _ => site(y),
        };
        let mut delta = 0.0;
        for c in &self.couplings {
            let d = c.diameter() as i64;
            for base in -d..=1 {
                let touches = c.sites.iter().any(|&s| {
                    let y = base + s as i64;
                    y == 0 || y == 1
                });
                if !touches {
                    continue;
                }
                let before = c.sites.iter().all(|&s| site(base + s as i64) == 1);
                let after = c.sites.iter().all(|&s| swapped(base + s as i64) == 1);
                delta += c.strength * (after as u8 as f64 - before as u8 as f64);
            }
        }
        delta
    }

    /// `H(η^{x,x+1}) - H(η)` on the ring, summing only the affected terms.
    pub fn hamiltonian_exchange_delta(&self, eta: &RingConfiguration, x: usize) -> Result<f64> {
        if eta.len() < self.range() + 2 {
            return Err(Error::param(format!(
                "ring of {} sites is too small for potential range {}",
                eta.len(),
                self.range()
            )));
        }
        let x = x as i64;
        Ok(self.exchange_delta_with(|y| eta.get(x + y)))
    }
}

/// Exchange rate families shipped with the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RateFamily {
    /// Symmetric simple exclusion: `c = 1` on every exchangeable bond.
    Ssep,
    /// `c = 1 + b(η(-1) + η(2))`, divided by `1 + 2|b|`.
    SpeedChange { b: f64 },
    /// `c = min(1, exp(-β ΔH))`.
    Metropolis { spec: GibbsSpec },
}

impl RateFamily {
    pub fn name(&self) -> &'static str {
        match self {
            RateFamily::Ssep => "ssep",
            RateFamily::SpeedChange { .. } => "speed_change",
            RateFamily::Metropolis { .. } => "metropolis",
        }
    }

    /// Reference measure the family is reversible for.
    pub fn reference_spec(&self) -> GibbsSpec {
        match self {
            RateFamily::Metropolis { spec } => spec.clone(),
            _ => GibbsSpec::product(0.0),
        }
    }
}

/// Exchange rate `c` tabulated over the window `{-r, …, r+1}` around the bond
/// `(0, 1)`, together with the asymmetry `γ` of
/// `c_γ(η) = c(η)(1 - γ η(1)(1 - η(0)))`.
///
/// `normalization` records the factor by which a family was divided to
/// bring its rates into `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateTable {
    radius: usize,
    rates: Vec<f64>,
    gamma: f64,
    normalization: f64,
    effective: Vec<f64>,
}

impl RateTable {
    pub fn from_rates(radius: usize, rates: Vec<f64>) -> Result<Self> {
        Self::with_parts(radius, rates, 0.0, 1.0)
    }

    fn with_parts(radius: usize, rates: Vec<f64>, gamma: f64, normalization: f64) -> Result<Self> {
        let width = 2 * radius + 2;
        if width > MAX_WINDOW {
            return Err(Error::param(format!("rate radius {radius} is too large")));
        }
        if rates.len() != 1 << width {
            return Err(Error::param(format!(
                "radius {radius} needs {} rates, got {}",
                1usize << width,
                rates.len()
            )));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::param(format!("gamma = {gamma} outside [0, 1]")));
        }
        if !(normalization > 0.0 && normalization.is_finite()) {
            return Err(Error::param("normalization must be positive"));
        }
        for (m, &c) in rates.iter().enumerate() {
            let exchangeable = ((m >> radius) & 1) != ((m >> (radius + 1)) & 1);
            if exchangeable {
                if !(c > 0.0 && c <= 1.0) {
                    return Err(Error::param(format!(
                        "rate {c} on exchangeable configuration {m:#b} must lie in (0, 1]"
                    )));
                }
            } else if c != 0.0 {
                return Err(Error::param(format!(
                    "rate {c} on configuration {m:#b} violates the exclusion rule"
                )));
            }
        }
        let mut table = Self { radius, rates, gamma, normalization, effective: Vec::new() };
        table.effective = (0..table.rates.len()).map(|m| table.asymmetric_rate_of(m)).collect();
        Ok(table)
    }

    pub fn builtin(family: &RateFamily) -> Result<Self> {
        builtin_rate(family)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Number of sites in the window, `2r + 2`.
    pub fn window_len(&self) -> usize {
        2 * self.radius + 2
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// Symmetric rates `c`, indexed by window configuration.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    #[inline]
    pub fn symmetric_rate(&self, idx: usize) -> f64 {
        self.rates[idx]
    }

    /// `c_γ` on the window configuration `idx`.
    #[inline]
    pub fn rate(&self, idx: usize) -> f64 {
        self.effective[idx]
    }

    fn asymmetric_rate_of(&self, idx: usize) -> f64 {
        let e0 = ((idx >> self.radius) & 1) as f64;
        let e1 = ((idx >> (self.radius + 1)) & 1) as f64;
        self.rates[idx] * (1.0 - self.gamma * e1 * (1.0 - e0))
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::with_parts(self.radius, self.rates.clone(), gamma, self.normalization)
    }

    /// Window index of the bond `(x, x + 1)` on the ring.
    #[inline]
    pub fn index_at(&self, eta: &RingConfiguration, x: usize) -> usize {
        eta.window_index(x, -(self.radius as i64), self.window_len())
    }

    /// Same rate function tabulated on a larger window.
    pub fn with_radius(&self, radius: usize) -> Result<Self> {
        if radius < self.radius {
            return Err(Error::param("cannot shrink the rate window"));
        }
        let shift = radius - self.radius;
        let width = 2 * radius + 2;
        let inner = low_mask(self.window_len());
        let rates = (0..1usize << width).map(|m| self.rates[(m >> shift) & inner]).collect();
        Self::with_parts(radius, rates, self.gamma, self.normalization)
    }

    /// `c` as a local function on `[-r, r+1]`.
    pub fn as_local_function(&self) -> LocalFunction {
        let r = self.radius as i32;
        LocalFunction::from_values(-r, r + 1, &self.rates).expect("window matches table")
    }

    fn weighted(&self, weight: impl Fn(f64, f64) -> f64) -> LocalFunction {
        let r = self.radius as i32;
        let values: Vec<f64> = self
            .rates
            .iter()
            .enumerate()
            .map(|(m, &c)| {
                let e0 = ((m >> self.radius) & 1) as f64;
                let e1 = ((m >> (self.radius + 1)) & 1) as f64;
                c * weight(e0, e1)
            })
            .collect();
        LocalFunction::from_values(-r, r + 1, &values).expect("window matches table")
    }

    /// `j(η) = c(η) η(0)(1 - η(1))`, the rate of a jump from 0 to 1.
    pub fn current_observable(&self) -> LocalFunction {
        self.weighted(|e0, e1| e0 * (1.0 - e1))
    }

    /// `c(η) η(1)(1 - η(0))`, the rate of a jump from 1 to 0.
    pub fn reverse_current_observable(&self) -> LocalFunction {
        self.weighted(|e0, e1| e1 * (1.0 - e0))
    }

    /// `c(η)(η(1) - η(0))^2`.
    pub fn activity_observable(&self) -> LocalFunction {
        self.weighted(|e0, e1| (e1 - e0) * (e1 - e0))
    }

    pub fn to_json(&self) -> RateTableJson {
        RateTableJson {
            radius: self.radius,
            rates: self.rates.clone(),
            gamma: self.gamma,
            normalization: self.normalization,
        }
    }

    pub fn from_json(json: &RateTableJson) -> Result<Self> {
        Self::with_parts(json.radius, json.rates.clone(), json.gamma, json.normalization)
    }
}

/// Serialized rate table: `rates[m]` with bit `i` of `m` the occupancy of
/// site `-radius + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateTableJson {
    pub radius: usize,
    pub rates: Vec<f64>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "one")]
    pub normalization: f64,
}

fn one() -> f64 {
    1.0
}

/// Builds the rate table of one of the shipped families.
pub fn builtin_rate(family: &RateFamily) -> Result<RateTable> {
    match family {
        RateFamily::Ssep => RateTable::from_rates(0, vec![0.0, 1.0, 1.0, 0.0]),
        RateFamily::SpeedChange { b } => {
            let b = *b;
            if !(b.abs() < 0.5) {
                return Err(Error::param(format!("speed-change parameter b = {b} must satisfy |b| < 1/2")));
            }
            let norm = 1.0 / (1.0 + 2.0 * b.abs());
            // window {-1, 0, 1, 2}: bits 0..3
            let rates = (0..16usize)
                .map(|m| {
                    let bit = |i: usize| ((m >> i) & 1) as f64;
                    if bit(1) != bit(2) {
                        (1.0 + b * (bit(0) + bit(3))) * norm
                    } else {
                        0.0
                    }
                })
                .collect();
            RateTable::with_parts(1, rates, 0.0, norm)
        }
        RateFamily::Metropolis { spec } => {
            let r = spec.range();
            let width = 2 * r + 2;
            let beta = spec.beta();
            let rates = (0..1usize << width)
                .map(|m| {
                    let site = |y: i64| ((m >> (y + r as i64)) & 1) as u8;
                    if site(0) == site(1) {
                        0.0
                    } else {
                        let dh = spec.exchange_delta_with(site);
                        (-beta * dh).exp().min(1.0)
                    }
                })
                .collect();
            RateTable::from_rates(r, rates)
        }
    }
}

/// `ω = η(0) + b(η(-1)η(0) + η(0)η(1) - η(-1)η(1))`, the gradient potential
/// of the unnormalized speed-change rates.
pub fn speed_change_omega(b: f64) -> LocalFunction {
    LocalFunction::from_terms(&[
        (vec![0], 1.0),
        (vec![-1, 0], b),
        (vec![0, 1], b),
        (vec![-1, 1], -b),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exchange_swaps_neighbours() {
        let mut eta = RingConfiguration::new(vec![1, 0, 0]).unwrap();
        eta.exchange(0);
        assert_eq!(eta.occupancies(), &[0, 1, 0]);
        eta.exchange(2);
        assert_eq!(eta.occupancies(), &[0, 1, 0]);
        let mut w = RingConfiguration::new(vec![1, 0, 0]).unwrap();
        w.exchange(2);
        assert_eq!(w.occupancies(), &[0, 0, 1]);
    }

    #[test]
    fn rejects_non_binary() {
        assert!(RingConfiguration::new(vec![0, 2]).is_err());
        assert!(RingConfiguration::new(vec![]).is_err());
    }

    #[test]
    fn words_roundtrip() {
        let eta = RingConfiguration::new((0..130).map(|i| ((i * 7) % 3 == 0) as u8).collect()).unwrap();
        let back = RingConfiguration::from_words(&eta.to_words(), 130).unwrap();
        assert_eq!(eta, back);
    }

    #[test]
    fn single_site_evaluation() {
        let eta = RingConfiguration::new(vec![0, 1, 1, 0, 1]).unwrap();
        let f = LocalFunction::occupation(0);
        for x in 0..5 {
            assert_eq!(f.evaluate(&eta, x), eta.get(x as i64) as f64);
        }
        let full = RingConfiguration::full(6);
        let pair = LocalFunction::monomial(&[0, 1]);
        for x in 0..6 {
            assert_eq!(pair.evaluate(&full, x), 1.0);
        }
    }

    #[test]
    fn omega_on_alternating_by_substitution() {
        let b = 0.3;
        let omega = speed_change_omega(b);
        let eta = RingConfiguration::alternating(8);
        for x in 0..8i64 {
            let e = |y: i64| eta.get(x + y) as f64;
            let direct = e(0) + b * (e(-1) * e(0) + e(0) * e(1) - e(-1) * e(1));
            assert_eq!(omega.evaluate(&eta, x as usize), direct);
        }
    }

    #[test]
    fn values_and_coefficients_invert() {
        let f = LocalFunction::from_terms(&[(vec![-1], 0.5), (vec![0, 2], -1.25), (vec![-1, 0, 1, 2], 2.0)]);
        let g = LocalFunction::from_values(-1, 2, &f.values()).unwrap();
        for (a, b) in f.coefficients().iter().zip(g.coefficients()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn flip_is_involution() {
        let f = LocalFunction::from_terms(&[(vec![0], 1.0), (vec![0, 1], 3.0)]);
        let back = f.flipped().flipped();
        for (a, b) in f.coefficients().iter().zip(back.coefficients()) {
            assert!((a - b).abs() < 1e-14);
        }
        // η(0) ∘ flip = 1 - η(0)
        let g = LocalFunction::occupation(0).flipped();
        assert_eq!(g.coefficients(), &[1.0, -1.0]);
    }

    #[test]
    fn delta_is_zero_without_move_or_potential() {
        let spec = GibbsSpec::nearest_neighbor(1.0, 1.0, 0.0);
        let eta = RingConfiguration::new(vec![1, 1, 0, 1, 0, 0]).unwrap();
        assert_eq!(spec.hamiltonian_exchange_delta(&eta, 0).unwrap(), 0.0);
        let empty = GibbsSpec::product(0.3);
        for x in 0..6 {
            assert_eq!(empty.hamiltonian_exchange_delta(&eta, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn delta_matches_full_sum_on_small_ring() {
        let spec = GibbsSpec::new(
            vec![
                Coupling { sites: vec![0, 1], strength: 1.0 },
                Coupling { sites: vec![0, 2], strength: -0.7 },
                Coupling { sites: vec![0, 1, 2], strength: 0.4 },
            ],
            1.0,
            0.0,
        )
        .unwrap();
        for l in 4..=8usize {
            for bits in 0..(1u64 << l) {
                let eta = RingConfiguration::from_bits(bits, l);
                for x in 0..l {
                    let full = spec.ring_energy(&eta.exchanged(x)) - spec.ring_energy(&eta);
                    let local = spec.hamiltonian_exchange_delta(&eta, x).unwrap();
                    assert!((full - local).abs() < 1e-12, "L={l} bits={bits:b} x={x}");
                }
            }
        }
    }

    #[test]
    fn nearest_neighbour_delta_on_alternating_ring() {
        // (1,0,1,0): moving any particle breaks nothing and creates one bond
        let spec = GibbsSpec::nearest_neighbor(1.0, 0.5, 0.0);
        let eta = RingConfiguration::new(vec![1, 0, 1, 0]).unwrap();
        for x in 0..4 {
            let full = spec.ring_energy(&eta.exchanged(x)) - spec.ring_energy(&eta);
            assert_eq!(full, 1.0);
            assert_eq!(spec.hamiltonian_exchange_delta(&eta, x).unwrap(), full);
        }
    }

    #[test]
    fn builtin_families() {
        let ssep = builtin_rate(&RateFamily::Ssep).unwrap();
        let eta = RingConfiguration::new(vec![1, 1, 0, 0]).unwrap();
        assert_eq!(ssep.rate(ssep.index_at(&eta, 0)), 0.0);
        assert_eq!(ssep.rate(ssep.index_at(&eta, 1)), 1.0);

        let b = 0.3;
        let sc = builtin_rate(&RateFamily::SpeedChange { b }).unwrap();
        // η(-1) = η(2) = 0, η(0) = 1, η(1) = 0
        let eta = RingConfiguration::new(vec![0, 1, 0, 0, 0]).unwrap();
        assert!((sc.rate(sc.index_at(&eta, 1)) - 1.0 / (1.0 + 2.0 * b)).abs() < 1e-15);
        assert!(builtin_rate(&RateFamily::SpeedChange { b: 0.5 }).is_err());
        assert!(builtin_rate(&RateFamily::SpeedChange { b: -0.6 }).is_err());

        let metro0 = builtin_rate(&RateFamily::Metropolis { spec: GibbsSpec::nearest_neighbor(1.0, 0.0, 0.0) })
            .unwrap();
        let ssep1 = ssep.with_radius(1).unwrap();
        assert_eq!(metro0.rates(), ssep1.rates());
    }

    #[test]
    fn asymmetric_rate_is_pointwise() {
        let sc = builtin_rate(&RateFamily::SpeedChange { b: -0.2 }).unwrap().with_gamma(0.4).unwrap();
        for m in 0..16usize {
            let e0 = ((m >> 1) & 1) as f64;
            let e1 = ((m >> 2) & 1) as f64;
            let expect = sc.symmetric_rate(m) * (1.0 - 0.4 * e1 * (1.0 - e0));
            assert_eq!(sc.rate(m), expect);
        }
        assert!(sc.with_gamma(1.5).is_err());
    }

    #[test]
    fn rate_table_rejects_invariant_violations() {
        assert!(RateTable::from_rates(0, vec![0.1, 1.0, 1.0, 0.0]).is_err());
        assert!(RateTable::from_rates(0, vec![0.0, 0.0, 1.0, 0.0]).is_err());
        assert!(RateTable::from_rates(0, vec![0.0, 1.2, 1.0, 0.0]).is_err());
        assert!(RateTable::from_rates(0, vec![0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let sc = builtin_rate(&RateFamily::SpeedChange { b: 0.25 }).unwrap().with_gamma(0.1).unwrap();
        let text = serde_json::to_string(&sc.to_json()).unwrap();
        let back = RateTable::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn window_embedding_preserves_rates() {
        let sc = builtin_rate(&RateFamily::SpeedChange { b: 0.25 }).unwrap();
        let big = sc.with_radius(2).unwrap();
        let eta = RingConfiguration::new(vec![1, 0, 1, 1, 0, 0, 1, 0]).unwrap();
        for x in 0..8 {
            assert_eq!(sc.rate(sc.index_at(&eta, x)), big.rate(big.index_at(&eta, x)));
        }
    }
}
