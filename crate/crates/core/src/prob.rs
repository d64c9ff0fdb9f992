//! Probability densities over hyper-rectangular supports.
//!
//! Every density here has a finite support box. A nominally unbounded normal
//! is represented by [`TruncatedNormal::standard_tail_cut`], which truncates at
//! ±8σ where the discarded mass is below 1e-15.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use libm::erfc;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// Number of standard deviations kept on each side for an untruncated normal.
pub const TAIL_CUT_SIGMAS: f64 = 8.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Finite axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl SupportBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(Error::InvalidArgument("support box has zero dimensions".into()));
        }
        for (i, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || l >= h {
                return Err(Error::InvalidArgument(format!(
                    "support axis {i} must satisfy finite lo < hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }
}

/// Standard normal pdf.
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal cdf via the complementary error function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation for large positive `x`.
fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// `Φ⁻¹(p)`. The statrs inverse is only good to ~1e-10, so two Halley steps
/// against the libm cdf bring it to working precision. For `p > 1/2` the
/// iteration runs on the mirrored lower tail.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -std_normal_quantile(1.0 - p);
    }
    let mut z = -SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let pdf = std_normal_pdf(z);
        if pdf == 0.0 {
            break;
        }
        let r = (std_normal_cdf(z) - p) / pdf;
        z -= r / (1.0 + 0.5 * z * r);
    }
    z
}

/// Normal distribution restricted and renormalized to `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TruncatedNormalSpec", into = "TruncatedNormalSpec")]
pub struct TruncatedNormal {
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    // standardized bounds and mass of the standard normal on [a, b]
    a: f64,
    b: f64,
    mass: f64,
    upper_tail: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruncatedNormalSpec {
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
}

impl TryFrom<TruncatedNormalSpec> for TruncatedNormal {
    type Error = Error;

    fn try_from(s: TruncatedNormalSpec) -> Result<Self> {
        TruncatedNormal::new(s.mu, s.sigma, s.lo, s.hi)
    }
}

impl From<TruncatedNormal> for TruncatedNormalSpec {
    fn from(t: TruncatedNormal) -> Self {
        Self {
            mu: t.mu,
            sigma: t.sigma,
            lo: t.lo,
            hi: t.hi,
        }
    }
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidDensity(format!(
                "truncated normal needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidDensity(format!(
                "truncated normal needs finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        let a = (lo - mu) / sigma;
        let b = (hi - mu) / sigma;
        // Both bounds in the upper tail: difference of survival functions keeps
        // the relative accuracy that Φ(b) - Φ(a) would lose.
        let upper_tail = a > 0.0;
        let mass = if upper_tail {
            std_normal_sf(a) - std_normal_sf(b)
        } else {
            std_normal_cdf(b) - std_normal_cdf(a)
        };
        if !(mass > 0.0) {
            return Err(Error::InvalidDensity(format!(
                "truncated normal has no representable mass on [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            mu,
            sigma,
            lo,
            hi,
            a,
            b,
            mass,
            upper_tail,
        })
    }

    /// Normal(mu, sigma) truncated at mu ± 8 sigma.
    pub fn standard_tail_cut(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(mu, sigma, mu - TAIL_CUT_SIGMAS * sigma, mu + TAIL_CUT_SIGMAS * sigma)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Probability mass of the parent normal inside `[lo, hi]`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi || x.is_nan() {
            return 0.0;
        }
        let z = (x - self.mu) / self.sigma;
        std_normal_pdf(z) / (self.sigma * self.mass)
    }

    /// Inverse CDF on `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let z = if self.upper_tail {
            let q = std_normal_sf(self.a) - u * self.mass;
            -std_normal_quantile(q)
        } else {
            let p = std_normal_cdf(self.a) + u * self.mass;
            std_normal_quantile(p)
        };
        (self.mu + self.sigma * z).clamp(self.lo, self.hi)
    }

    /// Closed-form raw moment `E[X^k]` for `k` in `1..=6`.
    ///
    /// Moments of the standardized variable follow
    /// `M_k = (k-1) M_{k-2} + (a^{k-1} φ(a) - b^{k-1} φ(b)) / Z` with `M_0 = 1`,
    /// `M_{-1} = 0`; the result is shifted back with the binomial expansion of
    /// `(mu + sigma Z)^k`.
    pub fn raw_moment(&self, k: usize) -> Result<f64> {
        if !(1..=6).contains(&k) {
            return Err(Error::MomentOrder(k));
        }
        let std = self.standardized_moments(k);
        let mut acc = 0.0;
        for (j, m) in std.iter().enumerate() {
            acc += binomial(k, j) * self.mu.powi((k - j) as i32) * self.sigma.powi(j as i32) * m;
        }
        Ok(acc)
    }

    fn standardized_moments(&self, k: usize) -> Vec<f64> {
        let (pa, pb) = (std_normal_pdf(self.a), std_normal_pdf(self.b));
        let mut m = vec![0.0; k + 1];
        m[0] = 1.0;
        for j in 1..=k {
            let prev2 = if j >= 2 { m[j - 2] } else { 0.0 };
            let boundary = self.a.powi(j as i32 - 1) * pa - self.b.powi(j as i32 - 1) * pb;
            m[j] = (j as f64 - 1.0) * prev2 + boundary / self.mass;
        }
        m
    }

    pub fn mean(&self) -> f64 {
        self.mu + self.sigma * (std_normal_pdf(self.a) - std_normal_pdf(self.b)) / self.mass
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Uniform density on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UniformSpec", into = "UniformSpec")]
pub struct Uniform {
    lo: f64,
    hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformSpec {
    lo: f64,
    hi: f64,
}

impl TryFrom<UniformSpec> for Uniform {
    type Error = Error;

    fn try_from(s: UniformSpec) -> Result<Self> {
        Uniform::new(s.lo, s.hi)
    }
}

impl From<Uniform> for UniformSpec {
    fn from(u: Uniform) -> Self {
        Self { lo: u.lo, hi: u.hi }
    }
}

impl Uniform {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidDensity(format!(
                "uniform needs finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi || x.is_nan() {
            0.0
        } else {
            1.0 / (self.hi - self.lo)
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        (self.lo + u.clamp(0.0, 1.0) * (self.hi - self.lo)).min(self.hi)
    }

    pub fn raw_moment(&self, k: usize) -> Result<f64> {
        if !(1..=6).contains(&k) {
            return Err(Error::MomentOrder(k));
        }
        let kp = k as i32 + 1;
        Ok((self.hi.powi(kp) - self.lo.powi(kp)) / ((k + 1) as f64 * (self.hi - self.lo)))
    }
}

/// A one-dimensional density as it appears in config files:
/// `{"type":"truncated_normal","mu":0.9,"sigma":0.02,"lo":0.84,"hi":1.0}` or
/// `{"type":"uniform","lo":0.0,"hi":1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Marginal {
    TruncatedNormal(TruncatedNormal),
    Uniform(Uniform),
}

impl Marginal {
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Marginal::TruncatedNormal(d) => d.pdf(x),
            Marginal::Uniform(d) => d.pdf(x),
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Marginal::TruncatedNormal(d) => d.quantile(u),
            Marginal::Uniform(d) => d.quantile(u),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            Marginal::TruncatedNormal(d) => (d.lo(), d.hi()),
            Marginal::Uniform(d) => (d.lo(), d.hi()),
        }
    }

    pub fn raw_moment(&self, k: usize) -> Result<f64> {
        match self {
            Marginal::TruncatedNormal(d) => d.raw_moment(k),
            Marginal::Uniform(d) => d.raw_moment(k),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }
}

impl From<TruncatedNormal> for Marginal {
    fn from(d: TruncatedNormal) -> Self {
        Marginal::TruncatedNormal(d)
    }
}

impl From<Uniform> for Marginal {
    fn from(d: Uniform) -> Self {
        Marginal::Uniform(d)
    }
}

/// Joint density of independent coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductDensity {
    marginals: Vec<Marginal>,
}

impl ProductDensity {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::InvalidDensity(
                "product density needs at least one marginal".into(),
            ));
        }
        Ok(Self { marginals })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn support(&self) -> SupportBox {
        let (lo, hi) = self.marginals.iter().map(Marginal::support).unzip();
        SupportBox { lo, hi }
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.marginals.iter().zip(x).map(|(m, &xi)| m.pdf(xi)).product())
    }

    /// Draws one point; consumes exactly one uniform variate per coordinate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.marginals.iter().map(|m| m.sample(rng)).collect()
    }
}
