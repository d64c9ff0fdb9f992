//! Finite-dimensional parameterizations of a Wiener path.
//!
//! A process-noise problem `dy = φ(y) dt + ψ(y) dW` is turned into a random
//! ODE `ẏ = φ(y) + ψ(y) Ẇ(t; ω)` whose path derivative depends on finitely
//! many random coordinates. Those coordinates are appended to the problem's
//! uncertain space, and the Koopman expectation then runs unchanged.
//!
//! Two parameterizations are provided:
//!
//! * Karhunen–Loève truncation on `[0, T]`,
//!   `W(t) = √(2T) Σ_k Z_k sin(ω_k t/T)/ω_k` with `ω_k = (k − ½)π` and
//!   `Z_k ~ N(0, 1)`. Smooth in the coordinates, so it suits quadrature.
//! * Fixed-step increments `ΔW_i ~ N(0, Δt)` summed on a grid and linearly
//!   interpolated in between. Mostly useful for Monte Carlo cross-checks.
//!
//! The pathwise reading is used for the diffusion term; for state-dependent
//! `ψ` this is not the Itô interpretation, so built-in scenarios keep the
//! noise additive.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynsys::{OdeMap, OdeSystem, SystemMap, Terminal};
use crate::error::{Error, Result};
use crate::koopman::{Coordinate, UncertaintyProblem};
use crate::mc::substream;
use crate::prob::{Marginal, ProductDensity, TruncatedNormal};

/// Uncertain dimension above which quadrature is expected to struggle.
pub const QUADRATURE_DIM_WARNING: usize = 10;

/// Config form: `{"type":"kl","K":4}` or `{"type":"fixed_step","n_steps":32}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Kl {
        #[serde(rename = "K")]
        terms: usize,
    },
    FixedStep {
        n_steps: usize,
    },
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Kl { terms: 4 }
    }
}

impl NoiseSpec {
    pub fn build(&self, horizon: f64) -> Result<Noise> {
        match *self {
            NoiseSpec::Kl { terms } => Ok(Noise::Kl(KlNoise::new(horizon, terms)?)),
            NoiseSpec::FixedStep { n_steps } => Ok(Noise::FixedStep(FixedStepNoise::new(
                horizon / n_steps as f64,
                n_steps,
            )?)),
        }
    }
}

fn omega(k: usize) -> f64 {
    (k as f64 - 0.5) * PI
}

/// `W(t)` from KL coefficients `z` on `[0, horizon]`.
pub fn kl_path(z: &[f64], t: f64, horizon: f64) -> Result<f64> {
    check_time(t, horizon)?;
    let scale = (2.0 * horizon).sqrt();
    Ok(scale
        * z.iter()
            .enumerate()
            .map(|(i, &zk)| {
                let w = omega(i + 1);
                zk * (w * t / horizon).sin() / w
            })
            .sum::<f64>())
}

/// `dW/dt` of the truncated KL path.
pub fn kl_rate(z: &[f64], t: f64, horizon: f64) -> f64 {
    let scale = (2.0 / horizon).sqrt();
    scale
        * z.iter()
            .enumerate()
            .map(|(i, &zk)| zk * (omega(i + 1) * t / horizon).cos())
            .sum::<f64>()
}

/// `Var W(T)` under truncation order `terms`: `2T Σ_{k≤K} ω_k⁻²`.
pub fn kl_variance_at_horizon(horizon: f64, terms: usize) -> f64 {
    2.0 * horizon * (1..=terms).map(|k| omega(k).powi(-2)).sum::<f64>()
}

fn check_time(t: f64, horizon: f64) -> Result<()> {
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside noise horizon [0, {horizon}]"
        )));
    }
    Ok(())
}

/// Cumulative sum of increments at grid points, linear in between.
pub fn fixed_step_path(increments: &[f64], dt: f64, t: f64) -> Result<f64> {
    let horizon = dt * increments.len() as f64;
    check_time(t, horizon)?;
    let i = step_index(t, dt, increments.len());
    let w_i: f64 = increments[..i].iter().sum();
    let frac = (t - i as f64 * dt) / dt;
    Ok(w_i + frac * increments.get(i).copied().unwrap_or(0.0))
}

// Index of the step containing t, robust to t/dt rounding up across a grid point.
fn step_index(t: f64, dt: f64, n: usize) -> usize {
    let mut i = (t / dt).floor().max(0.0) as usize;
    if i > 0 && i as f64 * dt > t {
        i -= 1;
    }
    i.min(n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlNoise {
    horizon: f64,
    terms: usize,
}

impl KlNoise {
    pub fn new(horizon: f64, terms: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) || terms == 0 {
            return Err(Error::InvalidArgument(format!(
                "KL noise needs T > 0 and K >= 1, got T={horizon}, K={terms}"
            )));
        }
        Ok(Self { horizon, terms })
    }

    pub fn terms(&self) -> usize {
        self.terms
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedStepNoise {
    dt: f64,
    n_steps: usize,
}

impl FixedStepNoise {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || n_steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "fixed-step noise needs dt > 0 and n_steps >= 1, got dt={dt}, n={n_steps}"
            )));
        }
        Ok(Self { dt, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Kl(KlNoise),
    FixedStep(FixedStepNoise),
}

impl Noise {
    pub fn horizon(&self) -> f64 {
        match self {
            Noise::Kl(k) => k.horizon,
            Noise::FixedStep(f) => f.dt * f.n_steps as f64,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Noise::Kl(k) => k.terms,
            Noise::FixedStep(f) => f.n_steps,
        }
    }

    /// Densities of the noise coordinates (normals cut at ±8σ).
    pub fn marginals(&self) -> Vec<Marginal> {
        let sigma = match self {
            Noise::Kl(_) => 1.0,
            Noise::FixedStep(f) => f.dt.sqrt(),
        };
        let d = TruncatedNormal::standard_tail_cut(0.0, sigma).expect("positive sigma");
        vec![Marginal::TruncatedNormal(d); self.dim()]
    }

    pub fn path(&self, coords: &[f64], t: f64) -> Result<f64> {
        match self {
            Noise::Kl(k) => kl_path(coords, t, k.horizon),
            Noise::FixedStep(f) => fixed_step_path(coords, f.dt, t),
        }
    }

    /// Path derivative; piecewise constant for the fixed-step form.
    pub fn rate(&self, coords: &[f64], t: f64) -> f64 {
        match self {
            Noise::Kl(k) => kl_rate(coords, t, k.horizon),
            Noise::FixedStep(f) => {
                let i = step_index(t, f.dt, f.n_steps).min(f.n_steps - 1);
                coords[i] / f.dt
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Noise::Kl(_) => Vec::new(),
            Noise::FixedStep(f) => (1..f.n_steps).map(|i| i as f64 * f.dt).collect(),
        }
    }
}

pub type DiffusionFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// A continuous map whose parameter vector carries the noise coordinates
/// after the `base_params` deterministic ones.
#[derive(Debug, Clone)]
pub struct NoisyMap {
    pub map: SystemMap,
    pub base_params: usize,
    pub noise: Noise,
}

/// Lifts `ẏ = φ(t, y, p)` to `ẏ = φ + ψ(t, y, p) Ẇ(t)`.
pub fn noisy_map(base: &OdeMap, n_base_params: usize, noise: Noise, diffusion: DiffusionFn) -> Result<NoisyMap> {
    if base.t0 < 0.0 || base.t_max > noise.horizon() * (1.0 + 1e-12) {
        return Err(Error::Horizon {
            noise: noise.horizon(),
            t0: base.t0,
            t_max: base.t_max,
        });
    }
    let dim = base.system.dim();
    let phi = base.system.drift().clone();
    let drift = move |t: f64, y: &[f64], p: &[f64], dy: &mut [f64]| {
        let (pb, pn) = p.split_at(n_base_params);
        phi(t, y, pb, dy);
        let mut psi = [0.0f64; 16];
        let mut psi_vec;
        let psi_buf: &mut [f64] = if dim <= psi.len() {
            &mut psi[..dim]
        } else {
            psi_vec = vec![0.0; dim];
            &mut psi_vec
        };
        diffusion(t, y, pb, psi_buf);
        let w_dot = noise.rate(pn, t);
        for i in 0..dim {
            dy[i] += psi_buf[i] * w_dot;
        }
    };
    let mut lifted = base.clone();
    lifted.system = OdeSystem::new(dim, drift);
    let mut bps = base.breakpoints.clone();
    bps.extend(noise.breakpoints());
    let lifted = lifted.with_breakpoints(bps);
    Ok(NoisyMap {
        map: SystemMap::Ode(lifted),
        base_params: n_base_params,
        noise,
    })
}

/// Extends a problem's uncertain space with the noise coordinates.
pub fn noisy_problem(base: &UncertaintyProblem, noise: Noise, diffusion: DiffusionFn) -> Result<UncertaintyProblem> {
    let ode = match base.map() {
        SystemMap::Ode(m) => m,
        _ => {
            return Err(Error::InvalidArgument(
                "process noise needs a continuous-time map".into(),
            ))
        }
    };
    let np = base.params().len();
    let lifted = noisy_map(ode, np, noise, diffusion)?;
    let mut params = base.params().to_vec();
    params.extend(std::iter::repeat_n(0.0, noise.dim()));
    let mut problem = UncertaintyProblem::new(lifted.map, base.x0().to_vec(), params);
    for u in base.uncertain() {
        problem = problem.with_uncertain(u.coord, u.density.clone())?;
    }
    for (i, m) in noise.marginals().into_iter().enumerate() {
        problem = problem.with_uncertain(Coordinate::Param(np + i), m)?;
    }
    if problem.dim() > QUADRATURE_DIM_WARNING {
        log::warn!(
            "uncertain dimension {} exceeds {QUADRATURE_DIM_WARNING}; adaptive cubature cost grows quickly",
            problem.dim()
        );
    }
    Ok(problem)
}

/// Deterministic map `x ↦ mean of S(x, ω_j)` over `n_inner` seeded noise
/// draws. Each outer evaluation costs `n_inner` simulations, which is why the
/// lifted formulation from [`noisy_problem`] is usually preferred.
pub fn averaged_map(noisy: &NoisyMap, n_inner: usize, seed: u64) -> Result<SystemMap> {
    if n_inner == 0 {
        return Err(Error::InvalidArgument("n_inner must be at least 1".into()));
    }
    let density = ProductDensity::new(noisy.noise.marginals())?;
    let map = noisy.map.clone();
    let base_params = noisy.base_params;
    Ok(SystemMap::Custom(Arc::new(move |x0: &[f64], p: &[f64]| {
        let mut params = p[..base_params.min(p.len())].to_vec();
        params.resize(base_params + density.dim(), 0.0);
        let mut mean: Option<Vec<f64>> = None;
        let mut t_mean = 0.0;
        for j in 0..n_inner {
            let mut rng = substream(seed, j as u64);
            let w = density.sample(&mut rng);
            params[base_params..].copy_from_slice(&w);
            let term = map.simulate(x0, &params)?;
            t_mean += term.time;
            match &mut mean {
                None => mean = Some(term.state),
                Some(m) => m.iter_mut().zip(&term.state).for_each(|(a, b)| *a += b),
            }
        }
        let inv = 1.0 / n_inner as f64;
        let state = mean.unwrap_or_default().into_iter().map(|v| v * inv).collect();
        Ok(Terminal {
            state,
            time: t_mean * inv,
            event_log: Vec::new(),
        })
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::SolverOptions;
    use crate::koopman::{koopman_expectation, Observable};
    use crate::quad::QuadOptions;

    fn integrator(t_max: f64) -> OdeMap {
        OdeMap::new(OdeSystem::new(1, |_, _, _, dy| dy[0] = 0.0), 0.0, t_max)
            .unwrap()
            .with_options(SolverOptions::with_tolerances(1e-11, 1e-11))
    }

    fn unit_diffusion() -> DiffusionFn {
        Arc::new(|_, _, _, out: &mut [f64]| out[0] = 1.0)
    }

    #[test]
    fn kl_path_values() {
        assert_eq!(kl_path(&[0.0; 4], 0.7, 1.0).unwrap(), 0.0);
        assert_eq!(kl_path(&[1.3, -0.2, 2.0], 0.0, 1.0).unwrap(), 0.0);
        let w = kl_path(&[1.0], 1.0, 1.0).unwrap();
        assert!((w - 2.0 * 2f64.sqrt() / PI).abs() < 1e-15);
        assert!(kl_path(&[1.0], 1.5, 1.0).is_err());
    }

    #[test]
    fn kl_rate_matches_finite_difference() {
        let z = [0.3, -1.2, 0.8, 2.0];
        let (t, h, horizon) = (0.37, 1e-6, 2.0);
        let fd = (kl_path(&z, t + h, horizon).unwrap() - kl_path(&z, t - h, horizon).unwrap()) / (2.0 * h);
        assert!((fd - kl_rate(&z, t, horizon)).abs() < 1e-7);
    }

    #[test]
    fn kl_partial_variances_increase_toward_horizon() {
        let mut prev = 0.0;
        for k in 1..=50 {
            let v = kl_variance_at_horizon(1.5, k);
            assert!(v > prev && v < 1.5);
            prev = v;
        }
        assert!((kl_variance_at_horizon(1.0, 1) - 8.0 / (PI * PI)).abs() < 1e-15);
        assert!((kl_variance_at_horizon(1.0, 20000) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn fixed_step_path_values() {
        assert_eq!(fixed_step_path(&[0.0; 5], 0.1, 0.33).unwrap(), 0.0);
        assert!((fixed_step_path(&[0.8], 0.25, 0.125).unwrap() - 0.4).abs() < 1e-15);
        assert!((fixed_step_path(&[0.8, -0.3], 0.25, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(fixed_step_path(&[0.8, -0.3], 0.25, 0.51).is_err());
    }

    #[test]
    fn fixed_step_grid_variance_is_exact() {
        let noise = FixedStepNoise::new(0.125, 8).unwrap();
        // ±8σ cut removes ~1e-13 of the variance
        let mut var = 0.0;
        for (k, m) in Noise::FixedStep(noise).marginals().iter().enumerate() {
            var += m.raw_moment(2).unwrap();
            let expect = (k + 1) as f64 * 0.125;
            assert!((var - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let noise = NoiseSpec::Kl { terms: 2 }.build(0.5).unwrap();
        let r = noisy_map(&integrator(1.0), 0, noise, unit_diffusion());
        assert!(matches!(r, Err(Error::Horizon { .. })));
    }

    #[test]
    fn integrated_white_noise_follows_path() {
        let noise = NoiseSpec::Kl { terms: 3 }.build(1.0).unwrap();
        let lifted = noisy_map(&integrator(1.0), 0, noise, unit_diffusion()).unwrap();
        let z = [0.4, -1.1, 0.9];
        let y = lifted.map.simulate(&[0.0], &z).unwrap();
        assert!((y.state[0] - kl_path(&z, 1.0, 1.0).unwrap()).abs() < 1e-9);

        let noise = NoiseSpec::FixedStep { n_steps: 4 }.build(1.0).unwrap();
        let lifted = noisy_map(&integrator(1.0), 0, noise, unit_diffusion()).unwrap();
        let inc = [0.1, -0.2, 0.3, 0.05];
        let y = lifted.map.simulate(&[0.0], &inc).unwrap();
        assert!((y.state[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_diffusion_reproduces_base_bitwise() {
        let base = OdeMap::new(
            OdeSystem::new(2, |_, y, p, dy| {
                dy[0] = y[1];
                dy[1] = -p[0] * y[0];
            }),
            0.0,
            2.0,
        )
        .unwrap();
        let noise = NoiseSpec::Kl { terms: 4 }.build(2.0).unwrap();
        let zero: DiffusionFn = Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0));
        let lifted = noisy_map(&base, 1, noise, zero).unwrap();
        let a = base.integrate(&[1.0, 0.0], &[3.0]).unwrap();
        let b = lifted.map.simulate(&[1.0, 0.0], &[3.0, 0.5, -2.0, 1.0, 0.1]).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn wiener_expectations_under_kl() {
        let base = UncertaintyProblem::new(SystemMap::Ode(integrator(1.0)), vec![0.0], vec![]);
        let noise = NoiseSpec::Kl { terms: 2 }.build(1.0).unwrap();
        let p = noisy_problem(&base, noise, unit_diffusion()).unwrap();
        assert_eq!(p.dim(), 2);
        let obs = Observable::new(vec!["y".into(), "y^2".into()], |y, _| vec![y[0], y[0] * y[0]]).unwrap();
        let r = koopman_expectation(&p, &obs, &QuadOptions::new(1e-8, 1e-10)).unwrap();
        assert!(r.value[0].abs() < 1e-9);
        let expect = kl_variance_at_horizon(1.0, 2);
        assert!((r.value[1] - expect).abs() < 1e-6 * expect);
    }

    #[test]
    fn averaged_map_behaviour() {
        let noise = NoiseSpec::Kl { terms: 4 }.build(1.0).unwrap();
        let zero: DiffusionFn = Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0));
        let decay = OdeMap::new(OdeSystem::new(1, |_, y, _, dy| dy[0] = -y[0]), 0.0, 1.0).unwrap();
        let quiet = noisy_map(&decay, 0, noise, zero).unwrap();
        let avg = averaged_map(&quiet, 4, 3).unwrap();
        assert_eq!(
            avg.simulate(&[2.0], &[]).unwrap().state,
            decay.integrate(&[2.0], &[]).unwrap().state
        );

        let loud = noisy_map(&integrator(1.0), 0, noise, unit_diffusion()).unwrap();
        let one = averaged_map(&loud, 1, 99).unwrap();
        let a = one.simulate(&[0.0], &[]).unwrap();
        let b = one.simulate(&[0.0], &[]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.state[0], 0.0);

        let n_inner = 10_000;
        let many = averaged_map(&loud, n_inner, 5).unwrap();
        let m = many.simulate(&[0.0], &[]).unwrap().state[0];
        assert!(m.abs() <= 4.0 / (n_inner as f64).sqrt());
    }

    #[test]
    fn noise_config_forms() {
        let kl: NoiseSpec = serde_json::from_str(r#"{"type":"kl","K":4}"#).unwrap();
        assert_eq!(kl, NoiseSpec::Kl { terms: 4 });
        let fs: NoiseSpec = serde_json::from_str(r#"{"type":"fixed_step","n_steps":32}"#).unwrap();
        assert_eq!(fs, NoiseSpec::FixedStep { n_steps: 32 });
        assert!(serde_json::from_str::<NoiseSpec>(r#"{"type":"kl","K":4,"x":1}"#).is_err());
    }
}
