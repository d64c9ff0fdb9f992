//! Expectations of observables propagated through a system map.
//!
//! The Koopman operator acts on an observable by composition,
//! `U_S g = g ∘ S`, so `E[g(S(X))]` for `X ~ f0` is an ordinary integral of
//! `g(S(x)) f0(x)` over the initial-condition support. Nothing about the
//! operator itself has to be represented; each quadrature node costs exactly
//! one simulation regardless of how many observable components are requested.
//!
//! Higher-order statistics are reduced to expectations of monomials of the
//! observable (see [`mean_observable_decomposition`]) and recombined
//! afterwards.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynsys::{SolverOptions, SystemMap, Terminal};
use crate::error::{Error, Result};
use crate::prob::{Marginal, ProductDensity, SupportBox};
use crate::quad::{integrate_1d, integrate_nd, QuadOptions};

pub type ObservableFn = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

/// Function of the terminal state and terminal time.
#[derive(Clone)]
pub struct Observable {
    f: ObservableFn,
    labels: Vec<String>,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable").field("labels", &self.labels).finish()
    }
}

impl Observable {
    pub fn new<F>(labels: Vec<String>, f: F) -> Result<Self>
    where
        F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("observable needs at least one output".into()));
        }
        Ok(Self { f: Arc::new(f), labels })
    }

    pub fn scalar<F>(label: &str, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(move |y, t| vec![f(y, t)]),
            labels: vec![label.to_owned()],
        }
    }

    /// `x ↦ x[i]`.
    pub fn coordinate(i: usize) -> Self {
        Self::scalar(&format!("x{i}"), move |y, _| y[i])
    }

    pub fn one() -> Self {
        Self::scalar("1", |_, _| 1.0)
    }

    pub fn dim_out(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn eval(&self, state: &[f64], time: f64) -> Result<Vec<f64>> {
        let v = (self.f)(state, time);
        if v.len() != self.dim_out() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_out(),
                got: v.len(),
            });
        }
        Ok(v)
    }

    pub fn eval_terminal(&self, term: &Terminal) -> Result<Vec<f64>> {
        self.eval(&term.state, term.time)
    }

    /// Stacks the monomials of scalar observables into one vector observable.
    pub fn monomials(base: &[Observable], terms: &[Monomial]) -> Result<Self> {
        if base.iter().any(|b| b.dim_out() != 1) {
            return Err(Error::InvalidArgument("monomials need scalar observables".into()));
        }
        for m in terms {
            if m.powers.len() != base.len() {
                return Err(Error::DimensionMismatch {
                    expected: base.len(),
                    got: m.powers.len(),
                });
            }
        }
        let base: Vec<Observable> = base.to_vec();
        let terms_c: Vec<Monomial> = terms.to_vec();
        let labels = terms.iter().map(|m| m.to_string()).collect();
        Ok(Self {
            f: Arc::new(move |y, t| {
                let z: Vec<f64> = base.iter().map(|b| (b.f)(y, t)[0]).collect();
                terms_c.iter().map(|m| m.eval(&z)).collect()
            }),
            labels,
        })
    }

    /// Linear combination `a·self + b·other` of two observables with equal output size.
    pub fn linear_combination(&self, a: f64, other: &Observable, b: f64) -> Result<Self> {
        if self.dim_out() != other.dim_out() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_out(),
                got: other.dim_out(),
            });
        }
        let (f, g) = (self.f.clone(), other.f.clone());
        Ok(Self {
            f: Arc::new(move |y, t| f(y, t).into_iter().zip(g(y, t)).map(|(u, v)| a * u + b * v).collect()),
            labels: self.labels.iter().map(|l| format!("lin({l})")).collect(),
        })
    }
}

/// Which initial quantity an uncertain coordinate feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinate {
    State(usize),
    Param(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertainCoordinate {
    pub coord: Coordinate,
    pub density: Marginal,
}

/// A system map together with the density of its uncertain initial
/// conditions and parameters.
///
/// Uncertain parameters are bound directly instead of being appended as
/// states with null dynamics; both formulations give the same integral.
#[derive(Debug, Clone)]
pub struct UncertaintyProblem {
    map: SystemMap,
    x0: Vec<f64>,
    params: Vec<f64>,
    uncertain: Vec<UncertainCoordinate>,
}

impl UncertaintyProblem {
    pub fn new(map: SystemMap, x0: Vec<f64>, params: Vec<f64>) -> Self {
        Self {
            map,
            x0,
            params,
            uncertain: Vec::new(),
        }
    }

    pub fn with_uncertain(mut self, coord: Coordinate, density: impl Into<Marginal>) -> Result<Self> {
        let (len, idx, kind) = match coord {
            Coordinate::State(i) => (self.x0.len(), i, "state"),
            Coordinate::Param(i) => (self.params.len(), i, "parameter"),
        };
        if idx >= len {
            return Err(Error::InvalidArgument(format!(
                "{kind} index {idx} out of range (len {len})"
            )));
        }
        if self.uncertain.iter().any(|u| u.coord == coord) {
            return Err(Error::InvalidArgument(format!("coordinate {coord:?} bound twice")));
        }
        self.uncertain.push(UncertainCoordinate {
            coord,
            density: density.into(),
        });
        Ok(self)
    }

    pub fn map(&self) -> &SystemMap {
        &self.map
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn uncertain(&self) -> &[UncertainCoordinate] {
        &self.uncertain
    }

    pub fn dim(&self) -> usize {
        self.uncertain.len()
    }

    pub fn with_map(mut self, map: SystemMap) -> Self {
        self.map = map;
        self
    }

    pub fn density(&self) -> Result<ProductDensity> {
        ProductDensity::new(self.uncertain.iter().map(|u| u.density.clone()).collect())
    }

    pub fn support(&self) -> Result<SupportBox> {
        Ok(self.density()?.support())
    }

    /// Initial state and parameters for a point of the uncertain space.
    pub fn realize(&self, point: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: point.len(),
            });
        }
        let mut x0 = self.x0.clone();
        let mut p = self.params.clone();
        for (u, &v) in self.uncertain.iter().zip(point) {
            match u.coord {
                Coordinate::State(i) => x0[i] = v,
                Coordinate::Param(i) => p[i] = v,
            }
        }
        Ok((x0, p))
    }

    /// `x ↦ g(S(x))` on the uncertain space.
    pub fn koopman_action<'a>(&'a self, g: &'a Observable) -> impl Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a {
        let apply = koopman_apply(&self.map, g);
        move |point: &[f64]| {
            let (x0, p) = self.realize(point)?;
            apply(&x0, &p)
        }
    }
}

/// `U_S g`: the composition `(x0, p) ↦ g(S(x0, p))`.
pub fn koopman_apply<'a>(
    map: &'a SystemMap,
    g: &'a Observable,
) -> impl Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Sync + 'a {
    move |x0: &[f64], p: &[f64]| {
        let term = map.simulate(x0, p)?;
        g.eval_terminal(&term)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub value: Vec<f64>,
    pub error: Vec<f64>,
    /// Number of system-map simulations (distinct quadrature nodes).
    pub evals: usize,
    pub wall_time: f64,
    pub converged: bool,
}

/// `E[g(S(X))]` for `X` distributed by the problem's product density.
///
/// The ODE tolerance of a continuous map is tightened to
/// `min(1e-8, rtol / 100)` unless the map already asks for less.
pub fn koopman_expectation(
    problem: &UncertaintyProblem,
    g: &Observable,
    opts: &QuadOptions,
) -> Result<ExpectationResult> {
    let start = Instant::now();
    let coupled = SolverOptions::coupled_to_quadrature(opts.rtol.max(opts.atol));
    let map = problem.map.map_options(|o| SolverOptions {
        rtol: o.rtol.min(coupled.rtol),
        atol: o.atol.min(coupled.atol),
        ..o
    });
    let problem = problem.clone().with_map(map);
    let density = problem.density()?;
    let support = density.support();
    let action = problem.koopman_action(g);
    let integrand = |x: &[f64]| -> Result<Vec<f64>> {
        let w = density.pdf(x)?;
        let mut v = action(x)?;
        for c in &mut v {
            *c *= w;
        }
        Ok(v)
    };
    let q = if support.dim() == 1 {
        integrate_1d(|a| integrand(&[a]), support.lo()[0], support.hi()[0], opts)?
    } else {
        integrate_nd(integrand, &support, opts)?
    };
    if !q.converged {
        log::warn!(
            "quadrature stopped after {} evaluations without meeting tolerance",
            q.evals
        );
    }
    Ok(ExpectationResult {
        value: q.value,
        error: q.error,
        evals: q.evals,
        wall_time: start.elapsed().as_secs_f64(),
        converged: q.converged,
    })
}

/// Product of powers `z1^a1 · z2^a2 · …` of scalar observables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial {
    pub powers: Vec<u32>,
}

impl Monomial {
    pub fn new(powers: Vec<u32>) -> Self {
        Self { powers }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.powers.iter().zip(z).map(|(&k, &v)| v.powi(k as i32)).product()
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let single = self.powers.len() == 1;
        let mut first = true;
        for (i, &k) in self.powers.iter().enumerate() {
            if k == 0 {
                continue;
            }
            if !first {
                f.write_str("*")?;
            }
            first = false;
            if single {
                f.write_str("z")?;
            } else {
                write!(f, "z{}", i + 1)?;
            }
            if k > 1 {
                write!(f, "^{k}")?;
            }
        }
        if first {
            f.write_str("1")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    CentralMoment(u32),
    Covariance,
    Correlation,
}

/// The observables whose expectations determine a statistic:
/// `{z, …, zⁿ}`, `{z₁, z₂, z₁z₂}` or `{z₁, z₁², z₂, z₂², z₁z₂}`.
pub fn mean_observable_decomposition(stat: Statistic) -> Vec<Monomial> {
    match stat {
        Statistic::CentralMoment(n) => (1..=n).map(|k| Monomial::new(vec![k])).collect(),
        Statistic::Covariance => vec![
            Monomial::new(vec![1, 0]),
            Monomial::new(vec![0, 1]),
            Monomial::new(vec![1, 1]),
        ],
        Statistic::Correlation => vec![
            Monomial::new(vec![1, 0]),
            Monomial::new(vec![2, 0]),
            Monomial::new(vec![0, 1]),
            Monomial::new(vec![0, 2]),
            Monomial::new(vec![1, 1]),
        ],
    }
}

// Error-free transforms for a compensated dot product (Ogita–Rump–Oishi).
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Dot product accumulated in roughly twice working precision.
pub fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (p, ep) = two_prod(x, y);
        let (t, es) = two_sum(s, p);
        s = t;
        c += ep + es;
    }
    s + c
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `E[(Z − μ)ⁿ] = Σ_k C(n,k) E[Zᵏ] (−μ)^{n−k}` from raw moments `raw[k-1] = E[Zᵏ]`.
pub fn central_from_raw(raw: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if n == 1 {
        return 0.0;
    }
    let mu = raw[0];
    let mut coef = Vec::with_capacity(n + 1);
    let mut vals = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mk = if k == 0 { 1.0 } else { raw[k - 1] };
        coef.push(binomial(n, k) * (-mu).powi((n - k) as i32));
        vals.push(mk);
    }
    compensated_dot(&coef, &vals)
}

// First-order propagation of raw-moment errors into the central moment.
fn central_error(raw: &[f64], raw_err: &[f64], n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let mu = raw[0];
    // d/dμ of Σ_k C(n,k) m_k (−μ)^{n−k}, with m_1 = μ inside the sum as well
    let mut d_mu = 0.0;
    for k in 0..n {
        let mk = if k == 0 { 1.0 } else { raw[k - 1] };
        d_mu -= binomial(n, k) * mk * (n - k) as f64 * (-mu).powi((n - k - 1) as i32);
    }
    d_mu += binomial(n, 1) * (-mu).powi((n - 1) as i32);
    let mut e = d_mu.abs() * raw_err[0];
    for k in 2..=n {
        e += (binomial(n, k) * mu.powi((n - k) as i32)).abs() * raw_err[k - 1];
    }
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralMoments {
    pub mean: f64,
    /// Central moments of orders `2..=n`.
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    /// The underlying expectation of `[g, g², …, gⁿ]`.
    pub raw: ExpectationResult,
}

impl CentralMoments {
    /// Central moment of order `k`; order 1 is zero by definition.
    pub fn order(&self, k: usize) -> Option<f64> {
        match k {
            0 => Some(1.0),
            1 => Some(0.0),
            k => self.values.get(k - 2).copied(),
        }
    }
}

fn require_scalar(g: &Observable) -> Result<()> {
    if g.dim_out() != 1 {
        return Err(Error::InvalidArgument(format!(
            "expected a scalar observable, got {} outputs",
            g.dim_out()
        )));
    }
    Ok(())
}

/// Central moments `2..=n` of a scalar observable from one vector-valued expectation.
pub fn central_moments(
    problem: &UncertaintyProblem,
    g: &Observable,
    n: usize,
    opts: &QuadOptions,
) -> Result<CentralMoments> {
    require_scalar(g)?;
    if !(2..=8).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "moment order must be in 2..=8, got {n}"
        )));
    }
    let terms = mean_observable_decomposition(Statistic::CentralMoment(n as u32));
    let obs = Observable::monomials(std::slice::from_ref(g), &terms)?;
    let raw = koopman_expectation(problem, &obs, opts)?;
    let values = (2..=n).map(|k| central_from_raw(&raw.value, k)).collect();
    let errors = (2..=n).map(|k| central_error(&raw.value, &raw.error, k)).collect();
    Ok(CentralMoments {
        mean: raw.value[0],
        values,
        errors,
        raw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticResult {
    pub value: f64,
    pub error: f64,
    pub expectation: ExpectationResult,
}

/// `Cov(g1∘S, g2∘S) = E[Z₁Z₂] − E[Z₁]E[Z₂]`.
pub fn covariance(
    problem: &UncertaintyProblem,
    g1: &Observable,
    g2: &Observable,
    opts: &QuadOptions,
) -> Result<StatisticResult> {
    require_scalar(g1)?;
    require_scalar(g2)?;
    let obs = Observable::monomials(
        &[g1.clone(), g2.clone()],
        &mean_observable_decomposition(Statistic::Covariance),
    )?;
    let e = koopman_expectation(problem, &obs, opts)?;
    let (m1, m2, m12) = (e.value[0], e.value[1], e.value[2]);
    let value = compensated_dot(&[m12, -m1], &[1.0, m2]);
    let error = e.error[2] + m2.abs() * e.error[0] + m1.abs() * e.error[1];
    Ok(StatisticResult {
        value,
        error,
        expectation: e,
    })
}

/// Pearson correlation of `g1∘S` and `g2∘S`, clamped to `[-1, 1]`.
pub fn correlation(
    problem: &UncertaintyProblem,
    g1: &Observable,
    g2: &Observable,
    opts: &QuadOptions,
) -> Result<StatisticResult> {
    require_scalar(g1)?;
    require_scalar(g2)?;
    let obs = Observable::monomials(
        &[g1.clone(), g2.clone()],
        &mean_observable_decomposition(Statistic::Correlation),
    )?;
    let e = koopman_expectation(problem, &obs, opts)?;
    let v = &e.value;
    let r = &e.error;
    let var1 = compensated_dot(&[v[1], -v[0]], &[1.0, v[0]]);
    let var2 = compensated_dot(&[v[3], -v[2]], &[1.0, v[2]]);
    let var1_err = r[1] + 2.0 * v[0].abs() * r[0];
    let var2_err = r[3] + 2.0 * v[2].abs() * r[2];
    if !(var1 > var1_err) || var1 <= 0.0 {
        return Err(Error::ZeroVariance(1));
    }
    if !(var2 > var2_err) || var2 <= 0.0 {
        return Err(Error::ZeroVariance(2));
    }
    let cov = compensated_dot(&[v[4], -v[0]], &[1.0, v[2]]);
    let cov_err = r[4] + v[2].abs() * r[0] + v[0].abs() * r[2];
    let denom = (var1 * var2).sqrt();
    let raw = cov / denom;
    let error = cov_err / denom + 0.5 * raw.abs() * (var1_err / var1 + var2_err / var2);
    if raw.abs() > 1.0 && raw.abs() - 1.0 > error {
        log::warn!("correlation {raw} exceeds unit magnitude by more than its error {error:e}");
    }
    Ok(StatisticResult {
        value: raw.clamp(-1.0, 1.0),
        error,
        expectation: e,
    })
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Strictly monotone 1-D map with analytic inverse and inverse derivative.
#[derive(Clone)]
pub struct MonotoneMap1d {
    pub forward: ScalarFn,
    pub inverse: ScalarFn,
    pub inverse_derivative: ScalarFn,
}

impl fmt::Debug for MonotoneMap1d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MonotoneMap1d")
    }
}

impl MonotoneMap1d {
    pub fn new<F, I, D>(forward: F, inverse: I, inverse_derivative: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        I: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
            inverse_derivative: Arc::new(inverse_derivative),
        }
    }

    pub fn as_system_map(&self) -> SystemMap {
        let f = self.forward.clone();
        SystemMap::function(move |x, _| vec![f(x[0])])
    }
}

/// Density of `S(X)` for `X ~ f`: `x ↦ f(S⁻¹(x)) |dS⁻¹/dx|`.
#[derive(Debug, Clone)]
pub struct PushforwardDensity {
    base: Marginal,
    map: MonotoneMap1d,
    lo: f64,
    hi: f64,
}

impl PushforwardDensity {
    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        self.base.pdf((self.map.inverse)(x)) * (self.map.inverse_derivative)(x).abs()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

/// Push-forward of a 1-D density through a strictly monotone map. The map is
/// checked for strict monotonicity and inverse consistency on a grid over the
/// density's support.
pub fn fp_pushforward_1d(map: &MonotoneMap1d, f: &Marginal) -> Result<PushforwardDensity> {
    const GRID: usize = 1001;
    let (lo, hi) = f.support();
    let xs: Vec<f64> = (0..GRID)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs.iter().map(|&x| (map.forward)(x)).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonMonotone);
    }
    let increasing = ys[1] > ys[0];
    let strict = ys
        .windows(2)
        .all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] });
    if !strict {
        return Err(Error::NonMonotone);
    }
    for (&x, &y) in xs.iter().zip(&ys) {
        let back = (map.inverse)(y);
        if (back - x).abs() > 1e-8 * (1.0 + x.abs()) {
            return Err(Error::InvalidArgument(format!(
                "inverse does not match forward map at x = {x}"
            )));
        }
    }
    let (a, b) = (ys[0], ys[GRID - 1]);
    Ok(PushforwardDensity {
        base: f.clone(),
        map: map.clone(),
        lo: a.min(b),
        hi: a.max(b),
    })
}
