//! Exact equilibrium computations.
//!
//! Infinite-volume grand-canonical expectations come from the dominant
//! eigenvectors of a `2^s × 2^s` transfer matrix, where `s = max(R, 1)` is the
//! width of a transfer state and `R` the potential range. A transfer state at
//! position `p` is the block of sites `p, …, p+s-1`; the transition
//! `S_p → S_{p+1}` carries every pattern based at `p` plus the fugacity of
//! site `p`.
//!
//! Canonical expectations are plain enumerations over the `k`-particle slice
//! of a periodic window of `ℓ ≤ 26` sites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{low_mask, GibbsSpec, LocalFunction, RingConfiguration};
use crate::thermo::static_average;

/// Widest window whose joint law is tabulated exhaustively.
const MAX_JOINT_WIDTH: usize = 18;

/// Dominant spectral data of the transfer matrix for one `GibbsSpec`.
#[derive(Clone, Debug)]
pub struct TransferMatrix {
    block: usize,
    matrix: DMatrix<f64>,
    lambda: f64,
    left: DVector<f64>,
    right: DVector<f64>,
    overlap: f64,
    subdominant_ratio: f64,
}

impl TransferMatrix {
    pub fn new(spec: &GibbsSpec) -> Result<Self> {
        let block = spec.range().max(1);
        let n = 1usize << block;
        let mut exponents = DMatrix::from_element(n, n, f64::NEG_INFINITY);
        for u in 0..n {
            for top in 0..2usize {
                let v = (u >> 1) | (top << (block - 1));
                // sites p..p+block packed with site p at bit 0
                let joint = u | (top << block);
                let mut energy = 0.0;
                for c in spec.couplings() {
                    if c.sites.iter().all(|&s| (joint >> s) & 1 == 1) {
                        energy += c.strength;
                    }
                }
                let e = -spec.beta() * energy - spec.phi() * (u & 1) as f64;
                exponents[(u, v)] = e;
            }
        }
        let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let matrix = exponents.map(|e| if e.is_finite() { (e - max).exp() } else { 0.0 });
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("transfer matrix has non-finite entries".into()));
        }

        // T^(2^k) with per-step normalization converges to a rank-one projector r ℓᵀ.
        let mut p = matrix.clone();
        for _ in 0..60 {
            let mut q = &p * &p;
            let s = q.max();
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Numerical("transfer-matrix power underflow".into()));
            }
            q /= s;
            let diff = (&q - &p).amax();
            p = q;
            if diff < 1e-15 {
                break;
            }
        }
        let (col, row) = {
            let (mut ci, mut cv) = (0, -1.0);
            for j in 0..n {
                let v = p.column(j).sum();
                if v > cv {
                    cv = v;
                    ci = j;
                }
            }
            (ci, ci)
        };
        let mut right: DVector<f64> = p.column(col).into_owned();
        let mut left: DVector<f64> = p.row(row).transpose();
        right /= right.max();
        left /= left.max();
        // polish by plain power iteration
        for _ in 0..8 {
            let r2 = &matrix * &right;
            right = &r2 / r2.max();
            let l2 = matrix.tr_mul(&left);
            left = &l2 / l2.max();
        }
        let lambda = left.dot(&(&matrix * &right)) / left.dot(&right);
        if !(lambda > 0.0) {
            return Err(Error::Numerical("dominant eigenvalue is not positive".into()));
        }
        if right.iter().chain(left.iter()).any(|&x| x <= 0.0) {
            return Err(Error::Numerical(
                "dominant eigenvector is not strictly positive (degenerate transfer matrix)".into(),
            ));
        }
        let overlap = left.dot(&right);

        let mut moduli: Vec<f64> = matrix.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        moduli.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let subdominant_ratio = if moduli.len() > 1 { moduli[1] / moduli[0] } else { 0.0 };
        if subdominant_ratio >= 1.0 - 1e-12 {
            return Err(Error::Numerical("degenerate dominant eigenvalue".into()));
        }

        Ok(Self { block, matrix, lambda, left, right, overlap, subdominant_ratio })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    /// `|λ₁| / λ₀`, the geometric decay rate of correlations.
    pub fn subdominant_ratio(&self) -> f64 {
        self.subdominant_ratio
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Joint law of sites `0, …, width-1` (bit `i` = site `i`).
    pub fn window_distribution(&self, width: usize) -> Result<Vec<f64>> {
        let s = self.block;
        let width = width.max(s);
        if width > MAX_JOINT_WIDTH {
            return Err(Error::param(format!("window of {width} sites is too wide")));
        }
        let steps = width - s;
        let state_mask = low_mask(s);
        let mut probs = Vec::with_capacity(1 << width);
        for c in 0..1usize << width {
            let mut w = self.left[c & state_mask] / self.overlap;
            for k in 0..steps {
                let u = (c >> k) & state_mask;
                let v = (c >> (k + 1)) & state_mask;
                w *= self.matrix[(u, v)] / self.lambda;
            }
            w *= self.right[(c >> steps) & state_mask];
            probs.push(w);
        }
        Ok(probs)
    }

    /// `∫ f dμ` in infinite volume.
    pub fn expectation(&self, f: &LocalFunction) -> Result<f64> {
        let probs = self.window_distribution(f.width())?;
        let values = f.values();
        let mask = low_mask(f.width());
        Ok(neumaier(probs.iter().enumerate().map(|(c, p)| p * values[c & mask])))
    }

    pub fn density(&self) -> f64 {
        let s = self.block;
        let mut num = 0.0;
        for u in 0..1usize << s {
            num += self.left[u] * self.right[u] * (u & 1) as f64;
        }
        num / self.overlap
    }

    /// `Σ_x Cov(η(0), η(x))` by the spectral sum, truncated once the
    /// geometric tail bound drops below `1e-14`.
    pub fn compressibility(&self) -> Compressibility {
        let n = 1usize << self.block;
        let rho = self.density();
        let d0 = DVector::from_fn(n, |u, _| (u & 1) as f64);
        let ld: DVector<f64> = self.left.component_mul(&d0);
        let mut u: DVector<f64> = self.right.component_mul(&d0);
        let variance = rho * (1.0 - rho);
        let mut sum = variance;
        let q = self.subdominant_ratio;
        let mut terms = 0;
        let mut tail_bound = 0.0;
        for x in 1..=100_000usize {
            u = &self.matrix * &u / self.lambda;
            let cov = ld.dot(&u) / self.overlap - rho * rho;
            sum += 2.0 * cov;
            terms = x;
            tail_bound = if q > 0.0 { 2.0 * cov.abs() * q / (1.0 - q) } else { 0.0 };
            if tail_bound < 1e-14 && cov.abs() < 1e-14 {
                break;
            }
        }
        Compressibility { chi: sum, variance, subdominant_ratio: q, terms, tail_bound }
    }

    /// `Σ_{x∈Z} Cov(f(θ_0 η), η(x))`, the linear response of `∫ f` to `-φ`.
    pub fn cross_susceptibility(&self, f: &LocalFunction) -> Result<f64> {
        let s = self.block;
        let w = f.width().max(s);
        let probs = self.window_distribution(w)?;
        let fv = f.values();
        let fmask = low_mask(f.width());
        let state_mask = low_mask(s);
        let n = 1usize << s;
        let rho = self.density();
        let mean_f = neumaier(probs.iter().enumerate().map(|(c, p)| p * fv[c & fmask]));

        let bit0 = DVector::from_fn(n, |u, _| (u & 1) as f64);
        // forward chain Q(u,v) = T(u,v) r(v) / (λ r(u)); backward chain uses ℓ
        let forward = DMatrix::from_fn(n, n, |u, v| {
            self.matrix[(u, v)] * self.right[v] / (self.lambda * self.right[u])
        });
        let backward = DMatrix::from_fn(n, n, |v, u| {
            self.left[u] * self.matrix[(u, v)] / (self.lambda * self.left[v])
        });
        let tail = |chain: &DMatrix<f64>, first: usize| -> DVector<f64> {
            let mut g = bit0.clone();
            for _ in 0..first {
                g = chain * &g;
            }
            let mut acc = DVector::zeros(n);
            for _ in 0..200_000 {
                let centered = g.map(|x| x - rho);
                acc += &centered;
                if centered.amax() < 1e-15 {
                    break;
                }
                g = chain * &g;
            }
            acc
        };
        let right_tail = tail(&forward, s);
        let left_tail = tail(&backward, 1);

        let mut total = 0.0;
        for (c, &p) in probs.iter().enumerate() {
            let fc = fv[c & fmask] - mean_f;
            if p == 0.0 || fc == 0.0 {
                continue;
            }
            let inside: f64 = (0..w).map(|i| ((c >> i) & 1) as f64 - rho).sum();
            let end = (c >> (w - s)) & state_mask;
            let start = c & state_mask;
            total += p * fc * (inside + right_tail[end] + left_tail[start]);
        }
        Ok(total)
    }
}

/// Result of the correlation sum for `χ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Compressibility {
    pub chi: f64,
    pub variance: f64,
    pub subdominant_ratio: f64,
    pub terms: usize,
    pub tail_bound: f64,
}

pub(crate) fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `∫ f dμ_{β,φ}` in infinite volume.
pub fn grand_canonical_expectation(spec: &GibbsSpec, f: &LocalFunction) -> Result<f64> {
    if spec.is_product() {
        let rho = product_density(spec);
        return Ok(crate::thermo::DensityPolynomial::from_local(f).eval(rho));
    }
    TransferMatrix::new(spec)?.expectation(f)
}

fn product_density(spec: &GibbsSpec) -> f64 {
    let e = spec.phi() + spec.single_site_field();
    // 1 / (1 + e^e) written to stay accurate for large |e|
    if e >= 0.0 {
        let z = (-e).exp();
        z / (1.0 + z)
    } else {
        1.0 / (1.0 + e.exp())
    }
}

/// `ρ(φ) = ∫ η(0) dμ_{β,φ}`.
pub fn density(spec: &GibbsSpec) -> Result<f64> {
    if spec.is_product() {
        return Ok(product_density(spec));
    }
    Ok(TransferMatrix::new(spec)?.density())
}

/// Solves `ρ(φ) = rho` for `φ`; `spec.phi()` is ignored.
pub fn fugacity_of_density(spec: &GibbsSpec, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::param(format!("density {rho} outside (0, 1)")));
    }
    if spec.is_product() {
        return Ok(((1.0 - rho) / rho).ln() - spec.single_site_field());
    }
    let g = |phi: f64| -> Result<f64> { Ok(density(&spec.with_phi(phi))? - rho) };
    // ρ(φ) is decreasing: g(lo) > 0 > g(hi)
    let guess = ((1.0 - rho) / rho).ln();
    let mut lo = guess - 1.0;
    let mut hi = guess + 1.0;
    let mut glo = g(lo)?;
    let mut ghi = g(hi)?;
    let mut width = 1.0;
    while glo < 0.0 {
        width *= 2.0;
        lo -= width;
        glo = g(lo)?;
        if width > 1e6 {
            return Err(Error::Numerical("could not bracket the fugacity".into()));
        }
    }
    while ghi > 0.0 {
        width *= 2.0;
        hi += width;
        ghi = g(hi)?;
        if width > 1e6 {
            return Err(Error::Numerical("could not bracket the fugacity".into()));
        }
    }
    // Illinois variant of regula falsi
    let mut side = 0i8;
    let mut best = (lo, glo.abs());
    for _ in 0..200 {
        let x = (lo * ghi - hi * glo) / (ghi - glo);
        let x = if x.is_finite() && x > lo && x < hi { x } else { 0.5 * (lo + hi) };
        let gx = g(x)?;
        if gx.abs() < best.1 {
            best = (x, gx.abs());
        }
        if gx == 0.0 || (hi - lo).abs() < 1e-15 * (1.0 + x.abs()) || gx.abs() < 1e-16 {
            break;
        }
        if gx > 0.0 {
            lo = x;
            glo = gx;
            if side == 1 {
                ghi *= 0.5;
            }
            side = 1;
        } else {
            hi = x;
            ghi = gx;
            if side == -1 {
                glo *= 0.5;
            }
            side = -1;
        }
    }
    if best.1 > 1e-12 {
        return Err(Error::Numerical(format!("fugacity solve stalled with residual {}", best.1)));
    }
    Ok(best.0)
}

/// `ν_ρ = μ_{β, φ(ρ)}`.
pub fn spec_at_density(spec: &GibbsSpec, rho: f64) -> Result<GibbsSpec> {
    Ok(spec.with_phi(fugacity_of_density(spec, rho)?))
}

/// `χ(ρ)`. Exact `ρ(1-ρ)` for product measures.
pub fn compressibility(spec: &GibbsSpec, rho: f64) -> Result<Compressibility> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::param(format!("density {rho} outside [0, 1]")));
    }
    if spec.is_product() || rho == 0.0 || rho == 1.0 {
        let v = rho * (1.0 - rho);
        return Ok(Compressibility { chi: v, variance: v, subdominant_ratio: 0.0, terms: 0, tail_bound: 0.0 });
    }
    Ok(TransferMatrix::new(&spec_at_density(spec, rho)?)?.compressibility())
}

/// Tabulated `ρ(φ)` for fixed potential and `β`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityMap {
    pub beta: f64,
    pub points: Vec<(f64, f64)>,
    #[serde(skip)]
    spec: Option<GibbsSpec>,
}

impl DensityMap {
    pub fn build(spec: &GibbsSpec, phis: &[f64]) -> Result<Self> {
        let mut phis = phis.to_vec();
        phis.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let points = phis
            .iter()
            .map(|&phi| Ok((phi, density(&spec.with_phi(phi))?)))
            .collect::<Result<Vec<_>>>()?;
        let map = Self { beta: spec.beta(), points, spec: Some(spec.clone()) };
        if !map.is_monotone() {
            return Err(Error::Numerical("ρ(φ) is not strictly decreasing on the grid".into()));
        }
        Ok(map)
    }

    /// Strictly decreasing in `φ` and inside `(0, 1)` at every grid point.
    pub fn is_monotone(&self) -> bool {
        self.points.iter().all(|&(_, r)| r > 0.0 && r < 1.0)
            && self.points.windows(2).all(|w| w[1].1 < w[0].1)
    }

    /// `φ(ρ)` through the root finder.
    pub fn phi_of(&self, rho: f64) -> Result<f64> {
        let spec = self.spec.as_ref().ok_or_else(|| Error::param("density map has no potential attached"))?;
        fugacity_of_density(spec, rho)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phi,rho\n");
        for (phi, rho) in &self.points {
            out.push_str(&format!("{phi},{rho}\n"));
        }
        out
    }
}

/// Exact sample from the Gibbs measure `μ_{β,φ}` on a ring of `size` sites.
pub fn sample_gibbs<R: Rng + ?Sized>(spec: &GibbsSpec, size: usize, rng: &mut R) -> Result<RingConfiguration> {
    let range = spec.range();
    if size <= 2 * range || size < 2 {
        return Err(Error::param(format!("ring of {size} sites too small for range {range}")));
    }
    if spec.is_product() {
        let rho = product_density(spec);
        let occ = (0..size).map(|_| (rng.random::<f64>() < rho) as u8).collect();
        return RingConfiguration::new(occ);
    }
    let tm = TransferMatrix::new(spec)?;
    let s = tm.block;
    if size <= s {
        return Err(Error::param("ring shorter than a transfer state"));
    }
    let n = 1usize << s;
    let t = &tm.matrix;

    // P(S_0 = u) ∝ (T^L)(u, u)
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut base = t.clone();
    let mut e = size;
    while e > 0 {
        if e & 1 == 1 {
            power = &power * &base;
            power /= power.max();
        }
        base = &base * &base;
        base /= base.max();
        e >>= 1;
    }
    let diag: Vec<f64> = (0..n).map(|u| power[(u, u)]).collect();
    let s0 = categorical(&diag, rng);

    // columns[m](v) ∝ (T^m)(v, S_0)
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(size);
    let mut col = DVector::from_fn(n, |v, _| if v == s0 { 1.0 } else { 0.0 });
    columns.push(col.clone());
    for _ in 1..size {
        col = t * &col;
        col /= col.max();
        columns.push(col.clone());
    }

    let mut occ = vec![0u8; size];
    for (i, o) in occ.iter_mut().enumerate().take(s) {
        *o = ((s0 >> i) & 1) as u8;
    }
    let mut state = s0;
    let mut weights = vec![0.0; n];
    for k in 0..size - 1 {
        let remaining = size - k - 1;
        for (v, w) in weights.iter_mut().enumerate() {
            *w = t[(state, v)] * columns[remaining][v];
        }
        let next = categorical(&weights, rng);
        let site = k + s;
        if site < size {
            occ[site] = (next >> (s - 1)) as u8 & 1;
        }
        state = next;
    }
    RingConfiguration::new(occ)
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// Exact grand-canonical expectation of `f` (placed at site 0) on a finite
/// ring, by enumerating all `2^L` configurations. Oracle use only.
pub fn finite_ring_expectation(spec: &GibbsSpec, f: &LocalFunction, size: usize) -> Result<f64> {
    if size > 24 {
        return Err(Error::param("finite-ring enumeration limited to 24 sites"));
    }
    let mut num = Vec::with_capacity(1 << size);
    let mut den = Vec::with_capacity(1 << size);
    let energies: Vec<f64> = (0..1u64 << size)
        .map(|bits| {
            let eta = RingConfiguration::from_bits(bits, size);
            spec.beta() * spec.ring_energy(&eta) + spec.phi() * eta.particle_count() as f64
        })
        .collect();
    let e0 = energies.iter().copied().fold(f64::INFINITY, f64::min);
    for (bits, e) in energies.iter().enumerate() {
        let eta = RingConfiguration::from_bits(bits as u64, size);
        let w = (-(e - e0)).exp();
        num.push(w * f.evaluate(&eta, 0));
        den.push(w);
    }
    Ok(neumaier(num.into_iter()) / neumaier(den.into_iter()))
}

/// Canonical ensemble on the periodic window `Λ_ℓ` with `k` particles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalSpec {
    pub ell: usize,
    pub k: usize,
}

/// Largest canonical window enumerated.
pub const MAX_CANONICAL_ELL: usize = 26;

impl CanonicalSpec {
    pub fn new(ell: usize, k: usize) -> Result<Self> {
        if ell == 0 || ell > MAX_CANONICAL_ELL {
            return Err(Error::param(format!("ℓ = {ell} outside 1..={MAX_CANONICAL_ELL}")));
        }
        if k > ell {
            return Err(Error::param(format!("k = {k} exceeds ℓ = {ell}")));
        }
        Ok(Self { ell, k })
    }

    pub fn sigma(&self) -> f64 {
        self.k as f64 / self.ell as f64
    }
}

/// Configurations of `ell` bits with exactly `k` set, in increasing order.
fn slice_iter(ell: usize, k: usize) -> impl Iterator<Item = u64> {
    let first: u64 = if k == 0 { 0 } else { (1u64 << k) - 1 };
    let limit = 1u64 << ell;
    let mut next = Some(first);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == 0 {
            None
        } else {
            // Gosper's hack
            let c = cur & cur.wrapping_neg();
            let r = cur + c;
            let n = (((r ^ cur) >> 2) / c) | r;
            if n < limit {
                Some(n)
            } else {
                None
            }
        };
        Some(cur)
    })
}

#[inline]
fn rotate_right(bits: u64, by: usize, ell: usize) -> u64 {
    if by == 0 {
        return bits;
    }
    let mask = (1u64 << ell) - 1;
    ((bits >> by) | (bits << (ell - by))) & mask
}

struct RingEnergy {
    masks: Vec<(u64, f64)>,
}

impl RingEnergy {
    fn new(spec: &GibbsSpec, ell: usize) -> Self {
        let mut masks = Vec::new();
        for b in 0..ell {
            for c in spec.couplings() {
                let m = c.sites.iter().fold(0u64, |m, &s| m | 1u64 << ((b + s as usize) % ell));
                masks.push((m, c.strength));
            }
        }
        Self { masks }
    }

    #[inline]
    fn energy(&self, bits: u64) -> f64 {
        self.masks.iter().filter(|(m, _)| bits & m == *m).map(|(_, j)| j).sum()
    }
}

/// `ψ_f^ℓ(σ) = E[f | Σ_{x∈Λ_ℓ} η(x) = k]` with periodic Gibbs weights on `Λ_ℓ`.
pub fn canonical_expectation(f: &LocalFunction, spec: &GibbsSpec, c: CanonicalSpec) -> Result<f64> {
    let CanonicalSpec { ell, k } = c;
    if f.width() > ell {
        return Err(Error::param(format!("f spans {} sites, more than ℓ = {ell}", f.width())));
    }
    let values = f.values();
    let width_mask = low_mask(f.width()) as u64;
    let lo = f.window().0.rem_euclid(ell as i32) as usize;
    let uniform = spec.is_product();
    let energy = RingEnergy::new(spec, ell);
    let beta = spec.beta();

    let e_ref = if uniform { 0.0 } else { energy.energy(slice_iter(ell, k).next().unwrap()) };
    let mut num = (0.0f64, 0.0f64);
    let mut den = (0.0f64, 0.0f64);
    let add = |acc: &mut (f64, f64), v: f64| {
        let t = acc.0 + v;
        if acc.0.abs() >= v.abs() {
            acc.1 += (acc.0 - t) + v;
        } else {
            acc.1 += (v - t) + acc.0;
        }
        acc.0 = t;
    };
    for bits in slice_iter(ell, k) {
        let w = if uniform { 1.0 } else { (-beta * (energy.energy(bits) - e_ref)).exp() };
        let idx = (rotate_right(bits, lo, ell) & width_mask) as usize;
        add(&mut num, w * values[idx]);
        add(&mut den, w);
    }
    Ok((num.0 + num.1) / (den.0 + den.1))
}

/// Probability of `k` particles on a finite ring of `ell` sites under `μ_{β,φ}`.
pub fn particle_number_law(spec: &GibbsSpec, ell: usize) -> Result<Vec<f64>> {
    if ell == 0 || ell > MAX_CANONICAL_ELL {
        return Err(Error::param(format!("ℓ = {ell} outside 1..={MAX_CANONICAL_ELL}")));
    }
    let energy = RingEnergy::new(spec, ell);
    let mut log_z: Vec<f64> = Vec::with_capacity(ell + 1);
    for k in 0..=ell {
        let es: Vec<f64> = slice_iter(ell, k).map(|b| spec.beta() * energy.energy(b)).collect();
        let m = es.iter().copied().fold(f64::INFINITY, f64::min);
        let s = neumaier(es.iter().map(|e| (-(e - m)).exp()));
        log_z.push(s.ln() - m - spec.phi() * k as f64);
    }
    let mx = log_z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_z.iter().map(|l| (l - mx).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// One row of an equivalence-of-ensembles table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub ell: usize,
    pub k: usize,
    pub sigma: f64,
    pub psi: f64,
    pub taylor: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub rho: f64,
    pub f_value: f64,
    pub f_first: f64,
    pub f_second: f64,
    pub rows: Vec<ExpansionRow>,
    /// `(ℓ, max |residual|)` over `|σ - ρ| ≤ ℓ^{-1/2}`.
    pub max_errors: Vec<(usize, f64)>,
    /// Least-squares slope of `log max_error` against `log ℓ`; `None` when
    /// some maximum vanishes.
    pub fitted_exponent: Option<f64>,
}

impl ExpansionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ell,k,sigma,psi,taylor,residual\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.ell, r.k, r.sigma, r.psi, r.taylor, r.residual));
        }
        out
    }

    /// Residual at `σ = ρ` for a given `ℓ`, if `ρℓ` is an integer.
    pub fn residual_at_rho(&self, ell: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.ell == ell && (r.sigma - self.rho).abs() < 1e-12)
            .map(|r| r.residual)
    }
}

/// Compares `ψ_f^ℓ(σ)` with the second-order expansion
/// `f̃(ρ) + f̃'(ρ)(σ-ρ) + ½ f̃''(ρ)(σ-ρ)²` for every `k` with `|σ - ρ| ≤ ℓ^{-1/2}`.
pub fn equivalence_expansion_report(
    f: &LocalFunction,
    spec: &GibbsSpec,
    rho: f64,
    ells: &[usize],
) -> Result<ExpansionReport> {
    let avg = static_average(f, spec, rho)?;
    let mut rows = Vec::new();
    let mut max_errors = Vec::new();
    for &ell in ells {
        let radius = 1.0 / (ell as f64).sqrt();
        let mut max_err = 0.0f64;
        for k in 0..=ell {
            let sigma = k as f64 / ell as f64;
            if (sigma - rho).abs() > radius + 1e-15 {
                continue;
            }
            let psi = canonical_expectation(f, spec, CanonicalSpec::new(ell, k)?)?;
            let d = sigma - rho;
            let taylor = avg.value + avg.first * d + 0.5 * avg.second * d * d;
            let residual = psi - taylor;
            max_err = max_err.max(residual.abs());
            rows.push(ExpansionRow { ell, k, sigma, psi, taylor, residual });
        }
        max_errors.push((ell, max_err));
    }
    let fitted_exponent = if max_errors.len() >= 2 && max_errors.iter().all(|&(_, e)| e > 0.0) {
        let pts: Vec<(f64, f64)> = max_errors.iter().map(|&(l, e)| ((l as f64).ln(), e.ln())).collect();
        Some(least_squares_slope(&pts))
    } else {
        None
    };
    Ok(ExpansionReport {
        rho,
        f_value: avg.value,
        f_first: avg.first,
        f_second: avg.second,
        rows,
        max_errors,
        fitted_exponent,
    })
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn product_measure_expectations() {
        let spec = GibbsSpec::product(fugacity_of_density(&GibbsSpec::product(0.0), 0.5).unwrap());
        assert!((grand_canonical_expectation(&spec, &LocalFunction::occupation(0)).unwrap() - 0.5).abs() < 1e-15);
        let spec = spec_at_density(&GibbsSpec::product(0.0), 0.3).unwrap();
        let f = LocalFunction::monomial(&[0, 3]);
        assert!((grand_canonical_expectation(&spec, &f).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn product_fugacity_closed_form() {
        let spec = GibbsSpec::product(0.0);
        for &rho in &[0.1, 0.25, 0.5, 0.9] {
            let phi = fugacity_of_density(&spec, rho).unwrap();
            assert!((phi - ((1.0 - rho) / rho).ln()).abs() < 1e-14);
            assert!((density(&spec.with_phi(phi)).unwrap() - rho).abs() < 1e-15);
        }
        assert!(fugacity_of_density(&spec, 0.0).is_err());
        assert!(fugacity_of_density(&spec, 1.2).is_err());
    }

    #[test]
    fn transfer_matrix_reduces_to_product_at_zero_coupling() {
        let spec = GibbsSpec::nearest_neighbor(0.0, 1.0, 0.4);
        let tm = TransferMatrix::new(&spec).unwrap();
        let rho = 1.0 / (1.0 + 0.4f64.exp());
        assert!((tm.density() - rho).abs() < 1e-14);
        let chi = tm.compressibility();
        assert!((chi.chi - rho * (1.0 - rho)).abs() < 1e-13);
        let f = LocalFunction::monomial(&[0, 1, 3]);
        assert!((tm.expectation(&f).unwrap() - rho.powi(3)).abs() < 1e-14);
    }

    #[test]
    fn window_distribution_is_normalized() {
        let spec = GibbsSpec::new(
            vec![
                crate::lattice::Coupling { sites: vec![0, 1], strength: 1.0 },
                crate::lattice::Coupling { sites: vec![0, 2], strength: -0.5 },
            ],
            0.8,
            -0.2,
        )
        .unwrap();
        let tm = TransferMatrix::new(&spec).unwrap();
        for w in 2..8 {
            let p = tm.window_distribution(w).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn canonical_single_site_is_sigma() {
        let f = LocalFunction::occupation(0);
        for ell in [5usize, 9, 12] {
            for k in 0..=ell {
                let v = canonical_expectation(&f, &GibbsSpec::product(0.0), CanonicalSpec::new(ell, k).unwrap())
                    .unwrap();
                assert!((v - k as f64 / ell as f64).abs() < 1e-14);
            }
        }
        let spec = GibbsSpec::nearest_neighbor(1.0, 0.7, 0.0);
        let v = canonical_expectation(&f, &spec, CanonicalSpec::new(10, 3).unwrap()).unwrap();
        assert!((v - 0.3).abs() < 1e-14);
    }

    #[test]
    fn canonical_pair_is_hypergeometric() {
        let f = LocalFunction::monomial(&[0, 1]);
        let v = canonical_expectation(&f, &GibbsSpec::product(0.0), CanonicalSpec::new(10, 4).unwrap()).unwrap();
        assert!((v - 2.0 / 15.0).abs() < 1e-15);
        // raw enumeration without the slice iterator
        let mut hits = 0u32;
        let mut total = 0u32;
        for bits in 0u32..1 << 10 {
            if bits.count_ones() == 4 {
                total += 1;
                hits += (bits & 0b11 == 0b11) as u32;
            }
        }
        assert!((v - hits as f64 / total as f64).abs() < 1e-15);
    }

    #[test]
    fn canonical_full_slice() {
        let f = LocalFunction::from_terms(&[(vec![0], 2.0), (vec![0, 1, 2], -1.5), (vec![], 0.25)]);
        let v = canonical_expectation(&f, &GibbsSpec::nearest_neighbor(1.0, 0.3, 0.0), CanonicalSpec::new(7, 7).unwrap())
            .unwrap();
        assert!((v - (2.0 - 1.5 + 0.25)).abs() < 1e-14);
    }

    #[test]
    fn slice_iterator_counts() {
        assert_eq!(slice_iter(10, 4).count(), 210);
        assert_eq!(slice_iter(10, 0).count(), 1);
        assert_eq!(slice_iter(10, 10).count(), 1);
        assert!(slice_iter(12, 5).all(|b| b.count_ones() == 5 && b < 1 << 12));
    }

    #[test]
    fn sampler_is_deterministic() {
        let spec = GibbsSpec::nearest_neighbor(-1.0, 0.6, 0.1);
        let a = sample_gibbs(&spec, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_gibbs(&spec, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(sample_gibbs(&spec, 2, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn density_map_is_monotone() {
        let spec = GibbsSpec::nearest_neighbor(1.0, 0.5, 0.0);
        let phis: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.25).collect();
        let map = DensityMap::build(&spec, &phis).unwrap();
        assert!(map.is_monotone());
        let phi = map.phi_of(0.37).unwrap();
        assert!((density(&spec.with_phi(phi)).unwrap() - 0.37).abs() < 1e-12);
    }
}
