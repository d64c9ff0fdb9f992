//! Optimization under uncertainty: minimize `E[g]` over decision variables
//! subject to `E[c_i] ≤ λ_i`, with every expectation taken by quadrature.
//!
//! The local method is a projected BFGS on the box rescaled to `[0, 1]ⁿ`,
//! with an Armijo backtracking search along the projected path. Inequality
//! constraints go through an augmented-Lagrangian outer loop. Gradients are
//! central differences on the quadrature values, which are deterministic in
//! `u`, so the differences are not swamped by sampling noise.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::{koopman_expectation, Observable, UncertaintyProblem};
use crate::quad::QuadOptions;

pub type BindFn = Arc<dyn Fn(&[f64]) -> Result<UncertaintyProblem> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub init: f64,
}

impl Decision {
    pub fn new(name: &str, lo: f64, hi: f64, init: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!("decision {name}: need finite lo < hi")));
        }
        if !(lo..=hi).contains(&init) {
            return Err(Error::InvalidArgument(format!(
                "decision {name}: initial value {init} outside [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            name: name.to_owned(),
            lo,
            hi,
            init,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub observable: Observable,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptOptions {
    /// Stop once every `|Δu_i| ≤ xtol_rel · max(1, |u_i|)`.
    pub xtol_rel: f64,
    /// Stop once the merit changes by at most `ftol_rel` relative; 0 disables.
    pub ftol_rel: f64,
    pub max_iter: usize,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub max_outer: usize,
}

impl Default for OptOptions {
    fn default() -> Self {
        Self {
            xtol_rel: 1e-3,
            ftol_rel: 0.0,
            max_iter: 200,
            fd_step: 1e-6,
            max_outer: 20,
        }
    }
}

#[derive(Clone)]
pub struct OptProblem {
    pub decisions: Vec<Decision>,
    pub bind: BindFn,
    pub objective: Observable,
    pub constraints: Vec<Constraint>,
    pub quad: QuadOptions,
    pub options: OptOptions,
}

impl std::fmt::Debug for OptProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OptProblem")
            .field("decisions", &self.decisions)
            .field("constraints", &self.constraints.len())
            .field("quad", &self.quad)
            .field("options", &self.options)
            .finish()
    }
}

impl OptProblem {
    pub fn new<B>(decisions: Vec<Decision>, bind: B, objective: Observable) -> Result<Self>
    where
        B: Fn(&[f64]) -> Result<UncertaintyProblem> + Send + Sync + 'static,
    {
        if decisions.is_empty() {
            return Err(Error::InvalidArgument("need at least one decision variable".into()));
        }
        if objective.dim_out() != 1 {
            return Err(Error::InvalidArgument("objective must be scalar".into()));
        }
        Ok(Self {
            decisions,
            bind: Arc::new(bind),
            objective,
            constraints: Vec::new(),
            quad: QuadOptions::default(),
            options: OptOptions::default(),
        })
    }

    pub fn with_constraint(mut self, observable: Observable, threshold: f64) -> Result<Self> {
        if observable.dim_out() != 1 {
            return Err(Error::InvalidArgument("constraint must be scalar".into()));
        }
        self.constraints.push(Constraint { observable, threshold });
        Ok(self)
    }

    pub fn with_quad(mut self, quad: QuadOptions) -> Self {
        self.quad = quad;
        self
    }

    pub fn with_options(mut self, options: OptOptions) -> Self {
        self.options = options;
        self
    }

    pub fn dim(&self) -> usize {
        self.decisions.len()
    }

    fn check_u(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        for (d, &x) in self.decisions.iter().zip(u) {
            if !(d.lo..=d.hi).contains(&x) {
                return Err(Error::InvalidArgument(format!(
                    "{}={x} outside [{}, {}]",
                    d.name, d.lo, d.hi
                )));
            }
        }
        Ok(())
    }

    // Quadrature used inside the descent: no looser than a tenth of the
    // optimizer tolerance.
    fn search_quad(&self) -> QuadOptions {
        let mut q = self.quad;
        q.rtol = q.rtol.min(self.options.xtol_rel / 10.0);
        q
    }

    fn stacked(&self) -> Result<Observable> {
        let mut obs: Vec<Observable> = vec![self.objective.clone()];
        obs.extend(self.constraints.iter().map(|c| c.observable.clone()));
        let labels = obs.iter().map(|o| o.labels()[0].clone()).collect();
        Observable::new(labels, move |y, t| {
            obs.iter()
                .map(|o| o.eval(y, t).map(|v| v[0]).unwrap_or(f64::NAN))
                .collect()
        })
    }

    /// Objective and constraint expectations at `u`.
    pub fn evaluate(&self, u: &[f64], quad: &QuadOptions) -> Result<Evaluation> {
        self.check_u(u)?;
        let problem = (self.bind)(u)?;
        let r = koopman_expectation(&problem, &self.stacked()?, quad)?;
        Ok(Evaluation {
            objective: r.value[0],
            objective_error: r.error[0],
            constraints: r.value[1..].to_vec(),
            converged: r.converged,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub objective_error: f64,
    pub constraints: Vec<f64>,
    pub converged: bool,
}

/// `E[g]` under `f0(·|u)` with its quadrature error estimate.
pub fn expected_objective(p: &OptProblem, u: &[f64]) -> Result<(f64, f64)> {
    let e = p.evaluate(u, &p.quad)?;
    if !e.converged {
        log::warn!("objective quadrature did not converge at u={u:?}");
    }
    Ok((e.objective, e.objective_error))
}

// Central differences of every stacked component; one-sided at the bounds.
fn fd_jacobian(p: &OptProblem, u: &[f64], h: f64, quad: &QuadOptions) -> Result<Vec<Vec<f64>>> {
    let values = |x: &[f64]| -> Result<Vec<f64>> {
        let e = p.evaluate(x, quad)?;
        let mut v = vec![e.objective];
        v.extend(e.constraints);
        Ok(v)
    };
    let mut center: Option<Vec<f64>> = None;
    let mut jac = Vec::with_capacity(u.len());
    for (i, d) in p.decisions.iter().enumerate() {
        let step = h * u[i].abs().max(1.0);
        let mut plus = u.to_vec();
        let mut minus = u.to_vec();
        let (hi_ok, lo_ok) = (u[i] + step <= d.hi, u[i] - step >= d.lo);
        let col = if hi_ok && lo_ok {
            plus[i] += step;
            minus[i] -= step;
            let (a, b) = (values(&plus)?, values(&minus)?);
            a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * step)).collect()
        } else {
            if center.is_none() {
                center = Some(values(u)?);
            }
            let c = center.as_ref().expect("set above");
            if hi_ok {
                plus[i] += step;
                let a = values(&plus)?;
                a.iter().zip(c).map(|(x, y)| (x - y) / step).collect()
            } else {
                minus[i] -= step;
                let b = values(&minus)?;
                c.iter().zip(&b).map(|(x, y)| (x - y) / step).collect()
            }
        };
        jac.push(col);
    }
    // jac[i][j] = ∂(component j)/∂u_i
    Ok(jac)
}

/// Finite-difference gradient of `E[g]`; step `h · max(1, |u_i|)` and
/// quadrature `rtol / 10`.
pub fn gradient(p: &OptProblem, u: &[f64], h: f64) -> Result<Vec<f64>> {
    p.check_u(u)?;
    let mut quad = p.quad;
    quad.rtol /= 10.0;
    Ok(fd_jacobian(p, u, h, &quad)?.into_iter().map(|c| c[0]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub u: Vec<f64>,
    pub objective: f64,
    /// Augmented objective minimized by the current inner loop.
    pub merit: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptReport {
    pub u_star: Vec<f64>,
    pub objective_value: f64,
    pub constraint_values: Vec<f64>,
    pub n_objective_evals: usize,
    pub n_gradient_evals: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

impl OptReport {
    pub fn max_violation(&self, thresholds: &[f64]) -> f64 {
        violation(&self.constraint_values, thresholds)
    }
}

fn violation(values: &[f64], thresholds: &[f64]) -> f64 {
    values
        .iter()
        .zip(thresholds)
        .map(|(c, l)| (c - l).max(0.0))
        .fold(0.0, f64::max)
}

/// Tolerated constraint excess `1e-6 · max(1, |λ|)`.
pub fn feasibility_tol(threshold: f64) -> f64 {
    1e-6 * threshold.abs().max(1.0)
}

struct Merit {
    mu: Vec<f64>,
    rho: f64,
}

impl Merit {
    // Powell–Hestenes–Rockafellar penalty for c − λ ≤ 0.
    fn value(&self, f: f64, c: &[f64], lam: &[f64]) -> f64 {
        let mut v = f;
        for ((ci, li), mi) in c.iter().zip(lam).zip(&self.mu) {
            let s = (ci - li + mi / self.rho).max(0.0);
            v += 0.5 * self.rho * s * s - mi * mi / (2.0 * self.rho);
        }
        v
    }

    fn gradient(&self, jac: &[Vec<f64>], c: &[f64], lam: &[f64]) -> Vec<f64> {
        jac.iter()
            .map(|col| {
                let mut g = col[0];
                for (j, ((ci, li), mi)) in c.iter().zip(lam).zip(&self.mu).enumerate() {
                    let s = (ci - li + mi / self.rho).max(0.0);
                    g += self.rho * s * col[j + 1];
                }
                g
            })
            .collect()
    }
}

struct Driver<'a> {
    p: &'a OptProblem,
    quad: QuadOptions,
    lam: Vec<f64>,
    lo: Vec<f64>,
    width: Vec<f64>,
    n_obj: usize,
    n_grad: usize,
    trace: Vec<TraceEntry>,
    iteration: usize,
}

#[derive(Clone)]
struct Point {
    v: Vec<f64>,
    f: f64,
    c: Vec<f64>,
}

impl<'a> Driver<'a> {
    fn to_u(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.lo)
            .zip(&self.width)
            .zip(&self.p.decisions)
            .map(|(((x, l), w), d)| (l + x * w).clamp(d.lo, d.hi))
            .collect()
    }

    fn eval(&mut self, v: &[f64]) -> Result<Point> {
        self.n_obj += 1;
        let e = self.p.evaluate(&self.to_u(v), &self.quad)?;
        if !e.converged {
            return Err(Error::InvalidArgument("quadrature did not converge".into()));
        }
        Ok(Point {
            v: v.to_vec(),
            f: e.objective,
            c: e.constraints,
        })
    }

    fn grad(&mut self, pt: &Point, merit: &Merit) -> Result<Vec<f64>> {
        self.n_grad += 1;
        let mut quad = self.quad;
        quad.rtol /= 10.0;
        let jac = fd_jacobian(self.p, &self.to_u(&pt.v), self.p.options.fd_step, &quad)?;
        let g_u = merit.gradient(&jac, &pt.c, &self.lam);
        Ok(g_u.iter().zip(&self.width).map(|(g, w)| g * w).collect())
    }

    fn record(&mut self, pt: &Point, merit: f64) {
        self.trace.push(TraceEntry {
            iteration: self.iteration,
            u: self.to_u(&pt.v),
            objective: pt.f,
            merit,
            max_violation: violation(&pt.c, &self.lam),
        });
    }

    // Projected BFGS on the merit; returns the final point and whether a
    // stopping test (rather than the iteration cap) ended it.
    fn inner(&mut self, start: Point, merit: &Merit) -> Result<(Point, bool)> {
        let n = start.v.len();
        let opts = self.p.options;
        let mut x = start;
        let mut m = merit.value(x.f, &x.c, &self.lam);
        let mut g = self.grad(&x, merit)?;
        let mut hinv = identity(n);
        while self.iteration < opts.max_iter {
            self.iteration += 1;
            let free: Vec<bool> = (0..n)
                .map(|i| !((x.v[i] <= 0.0 && g[i] > 0.0) || (x.v[i] >= 1.0 && g[i] < 0.0)))
                .collect();
            let pg: f64 = (0..n).filter(|&i| free[i]).map(|i| g[i] * g[i]).sum::<f64>().sqrt();
            if pg <= 1e-12 * m.abs().max(1.0) {
                return Ok((x, true));
            }
            let mut d = direction(&hinv, &g, &free);
            if dot(&d, &g) >= 0.0 {
                hinv = identity(n);
                d = direction(&hinv, &g, &free);
            }
            // keep the first trial inside a quarter of the box
            let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut t = if dmax > 0.25 { 0.25 / dmax } else { 1.0 };
            let mut accepted = None;
            for _ in 0..40 {
                let v_new: Vec<f64> = x.v.iter().zip(&d).map(|(a, b)| (a + t * b).clamp(0.0, 1.0)).collect();
                let step: Vec<f64> = v_new.iter().zip(&x.v).map(|(a, b)| a - b).collect();
                if step.iter().all(|s| *s == 0.0) {
                    break;
                }
                match self.eval(&v_new) {
                    Ok(pt) => {
                        let m_new = merit.value(pt.f, &pt.c, &self.lam);
                        if m_new <= m + 1e-4 * dot(&g, &step) {
                            accepted = Some((pt, m_new, step));
                            break;
                        }
                    }
                    Err(e) => log::debug!("trial point rejected: {e}"),
                }
                t *= 0.5;
            }
            let Some((pt, m_new, s)) = accepted else {
                log::debug!("line search made no progress at iteration {}", self.iteration);
                return Ok((x, true));
            };
            let g_new = self.grad(&pt, merit)?;
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            bfgs_update(&mut hinv, &s, &y);

            let u_old = self.to_u(&x.v);
            let u_new = self.to_u(&pt.v);
            let small_step = u_new
                .iter()
                .zip(&u_old)
                .all(|(a, b)| (a - b).abs() <= opts.xtol_rel * a.abs().max(1.0));
            let small_drop = opts.ftol_rel > 0.0 && (m - m_new).abs() <= opts.ftol_rel * m_new.abs();
            x = pt;
            m = m_new;
            g = g_new;
            self.record(&x, m);
            if small_step || small_drop {
                return Ok((x, true));
            }
        }
        Ok((x, false))
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn direction(hinv: &[Vec<f64>], g: &[f64], free: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if !free[i] {
                return 0.0;
            }
            -(0..n).filter(|&j| free[j]).map(|j| hinv[i][j] * g[j]).sum::<f64>()
        })
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64]) {
    let sy = dot(s, y);
    if sy <= 1e-12 * dot(s, s).sqrt() * dot(y, y).sqrt() || sy <= 0.0 {
        return;
    }
    let n = s.len();
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    let rho = 1.0 / sy;
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + yhy * rho) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Local minimization from the decisions' initial values.
pub fn optimize(p: &OptProblem) -> Result<OptReport> {
    let lam: Vec<f64> = p.constraints.iter().map(|c| c.threshold).collect();
    let mut d = Driver {
        p,
        quad: p.search_quad(),
        lam: lam.clone(),
        lo: p.decisions.iter().map(|d| d.lo).collect(),
        width: p.decisions.iter().map(|d| d.hi - d.lo).collect(),
        n_obj: 0,
        n_grad: 0,
        trace: Vec::new(),
        iteration: 0,
    };
    let v0: Vec<f64> = p.decisions.iter().map(|d| (d.init - d.lo) / (d.hi - d.lo)).collect();
    let mut x = d.eval(&v0)?;
    let mut merit = Merit {
        mu: vec![0.0; lam.len()],
        rho: 10.0,
    };
    d.record(&x, merit.value(x.f, &x.c, &lam));
    let feasible = |c: &[f64]| c.iter().zip(&lam).all(|(ci, li)| ci - li <= feasibility_tol(*li));
    let mut converged = false;
    let mut last_violation = f64::INFINITY;
    for _ in 0..p.options.max_outer.max(1) {
        let (pt, stopped) = d.inner(x, &merit)?;
        x = pt;
        if lam.is_empty() {
            converged = stopped;
            break;
        }
        let viol = violation(&x.c, &lam);
        if feasible(&x.c) && stopped {
            let mu_next: Vec<f64> =
                x.c.iter()
                    .zip(&lam)
                    .zip(&merit.mu)
                    .map(|((c, l), m)| (m + merit.rho * (c - l)).max(0.0))
                    .collect();
            let settled = mu_next
                .iter()
                .zip(&merit.mu)
                .all(|(a, b)| (a - b).abs() <= 1e-3 * b.abs().max(1e-3));
            merit.mu = mu_next;
            if settled {
                converged = true;
                break;
            }
        } else {
            for ((m, c), l) in merit.mu.iter_mut().zip(&x.c).zip(&lam) {
                *m = (*m + merit.rho * (c - l)).max(0.0);
            }
            if viol > 0.25 * last_violation {
                merit.rho *= 10.0;
            }
        }
        last_violation = viol;
        if d.iteration >= p.options.max_iter {
            break;
        }
    }
    let u_star = d.to_u(&x.v);
    if !lam.is_empty() && !feasible(&x.c) {
        log::warn!("no feasible point found; max violation {}", violation(&x.c, &lam));
        converged = false;
    }
    Ok(OptReport {
        u_star,
        objective_value: x.f,
        constraint_values: x.c,
        n_objective_evals: d.n_obj,
        n_gradient_evals: d.n_grad,
        converged,
        trace: d.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::SystemMap;
    use crate::koopman::Coordinate;
    use crate::prob::TruncatedNormal;

    fn shifted_normal(u: &[f64]) -> Result<UncertaintyProblem> {
        UncertaintyProblem::new(SystemMap::identity(), vec![0.0], vec![]).with_uncertain(
            Coordinate::State(0),
            TruncatedNormal::new(u[0], 1.0, u[0] - 8.0, u[0] + 8.0)?,
        )
    }

    fn square() -> Observable {
        Observable::scalar("x^2", |y, _| y[0] * y[0])
    }

    #[test]
    fn second_raw_moment_objective() {
        let p = OptProblem::new(
            vec![Decision::new("u", -5.0, 5.0, 1.5).unwrap()],
            shifted_normal,
            square(),
        )
        .unwrap()
        .with_quad(QuadOptions::new(1e-10, 1e-12));
        for u in [-2.0, 0.0, 1.5, 3.0] {
            let (v, _) = expected_objective(&p, &[u]).unwrap();
            assert!((v - (u * u + 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_objective() {
        let p = OptProblem::new(
            vec![Decision::new("u", -5.0, 5.0, 1.5).unwrap()],
            shifted_normal,
            Observable::one(),
        )
        .unwrap();
        assert!((expected_objective(&p, &[2.0]).unwrap().0 - 1.0).abs() < 1e-10);
        assert!(gradient(&p, &[2.0], 1e-5).unwrap()[0].abs() < 1e-4);
    }

    // Deterministic objective `h(u)`; the uncertain coordinate is a dummy.
    fn deterministic<H>(h: H) -> impl Fn(&[f64]) -> Result<UncertaintyProblem> + Send + Sync + 'static
    where
        H: Fn(f64) -> f64 + Copy + Send + Sync + 'static,
    {
        move |u: &[f64]| {
            let value = h(u[0]);
            UncertaintyProblem::new(SystemMap::function(move |_, _| vec![value]), vec![0.0], vec![0.0])
                .with_uncertain(Coordinate::Param(0), crate::prob::Uniform::new(0.0, 1.0)?)
        }
    }

    #[test]
    fn gradient_of_quadratic() {
        let p = OptProblem::new(
            vec![Decision::new("u", -5.0, 5.0, 0.0).unwrap()],
            deterministic(|u| (u - 3.0).powi(2)),
            Observable::coordinate(0),
        )
        .unwrap();
        for u in [-1.0, 0.5, 4.0] {
            let g = gradient(&p, &[u], 1e-5).unwrap();
            assert!((g[0] - 2.0 * (u - 3.0)).abs() < 1e-4, "{g:?}");
        }
        // one-sided at the bounds
        let g = gradient(&p, &[5.0], 1e-5).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-3);
    }

    #[test]
    fn mean_minimizes_squared_error() {
        let bind = |u: &[f64]| {
            let u0 = u[0];
            UncertaintyProblem::new(SystemMap::function(move |x, _| vec![x[0] - u0]), vec![0.0], vec![])
                .with_uncertain(Coordinate::State(0), TruncatedNormal::new(0.0, 1.0, -8.0, 8.0)?)
        };
        let p = OptProblem::new(vec![Decision::new("u", -5.0, 5.0, 3.0).unwrap()], bind, square())
            .unwrap()
            .with_quad(QuadOptions::new(1e-8, 1e-12));
        let r = optimize(&p).unwrap();
        assert!(r.converged);
        assert!(r.u_star[0].abs() < 1e-3, "{:?}", r.u_star);
        assert!((r.objective_value - 1.0).abs() < 1e-6);
        for w in r.trace.windows(2) {
            assert!(w[1].merit <= w[0].merit);
        }
    }

    #[test]
    fn constrained_toy() {
        let bind = |u: &[f64]| {
            let u0 = u[0];
            UncertaintyProblem::new(SystemMap::function(move |x, _| vec![x[0] + u0]), vec![0.0], vec![])
                .with_uncertain(Coordinate::State(0), TruncatedNormal::new(0.0, 0.1, -1.0, 1.0)?)
        };
        let p = OptProblem::new(
            vec![Decision::new("u", -2.0, 2.0, 0.0).unwrap()],
            bind,
            Observable::coordinate(0),
        )
        .unwrap()
        .with_constraint(square(), 1.0)
        .unwrap()
        .with_quad(QuadOptions::new(1e-9, 1e-12))
        .with_options(OptOptions {
            xtol_rel: 1e-6,
            ..Default::default()
        });
        let r = optimize(&p).unwrap();
        let var = TruncatedNormal::new(0.0, 0.1, -1.0, 1.0)
            .unwrap()
            .raw_moment(2)
            .unwrap();
        let expect = -(1.0 - var).sqrt();
        assert!(r.converged);
        assert!((r.u_star[0] - expect).abs() < 1e-4, "{:?} vs {expect}", r.u_star);
        assert!(r.constraint_values[0] <= 1.0 + feasibility_tol(1.0));
    }

    #[test]
    fn bounds_are_respected() {
        let bind = deterministic(|u| u);
        let p = OptProblem::new(
            vec![Decision::new("u", 1.0, 4.0, 3.0).unwrap()],
            bind,
            Observable::coordinate(0),
        )
        .unwrap();
        let r = optimize(&p).unwrap();
        assert_eq!(r.u_star[0], 1.0);
        assert!(r.trace.iter().all(|t| (1.0..=4.0).contains(&t.u[0])));
        assert!(expected_objective(&p, &[5.0]).is_err());
    }

    #[test]
    fn invalid_decisions() {
        assert!(Decision::new("u", 1.0, 1.0, 1.0).is_err());
        assert!(Decision::new("u", 0.0, 1.0, 2.0).is_err());
    }
}
