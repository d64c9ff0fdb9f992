//! Built-in scenarios, the closed-form bouncing-ball oracle and run
//! configuration.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynsys::{Direction, Event, OdeMap, OdeSystem, SystemMap};
use crate::error::{Error, Result};
use crate::koopman::{Coordinate, Observable, UncertaintyProblem};
use crate::noise::{kl_variance_at_horizon, noisy_problem, NoiseSpec};
use crate::optuu::{Decision, OptProblem};
use crate::prob::{TruncatedNormal, Uniform};

/// Post-impact speed below which the ball is put to rest on the ground.
/// Without it a ball that runs out of bounces before the wall would need
/// infinitely many events.
pub const REST_SPEED: f64 = 1e-3;

pub const STATE_X: usize = 0;
pub const STATE_XDOT: usize = 1;
pub const STATE_Z: usize = 2;
pub const STATE_ZDOT: usize = 3;
pub const PARAM_ALPHA: usize = 0;
pub const PARAM_G: usize = 1;
pub const PARAM_WALL: usize = 2;
pub const EVENT_GROUND: usize = 0;
pub const EVENT_WALL: usize = 1;

fn default_alpha() -> TruncatedNormal {
    TruncatedNormal::new(0.9, 0.02, 0.84, 1.0).expect("valid default density")
}

/// Ball thrown toward a wall a horizontal distance `target_x` from the launch
/// point, bouncing on `z = 0` with restitution `α`. State is `(x, ẋ, z, ż)`,
/// parameters `(α, g, x_wall)` with `x_wall = x0 + target_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BouncingBallParams {
    pub x0: f64,
    pub xdot0: f64,
    pub z0: f64,
    pub zdot0: f64,
    pub g_accel: f64,
    pub target_x: f64,
    pub target_z: f64,
    pub alpha: TruncatedNormal,
}

impl Default for BouncingBallParams {
    fn default() -> Self {
        Self {
            x0: 2.0,
            xdot0: 2.0,
            z0: 50.0,
            zdot0: 0.0,
            g_accel: 9.807,
            target_x: 25.0,
            target_z: 25.0,
            alpha: default_alpha(),
        }
    }
}

impl BouncingBallParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.x0,
            self.xdot0,
            self.z0,
            self.zdot0,
            self.g_accel,
            self.target_x,
            self.target_z,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("bouncing ball parameters must be finite".into()));
        }
        if self.target_x <= 0.0 {
            return Err(Error::Config(format!(
                "wall distance x*={} must be positive",
                self.target_x
            )));
        }
        if self.xdot0 <= 0.0 {
            return Err(Error::Config(format!(
                "xdot0={} must be positive to reach the wall",
                self.xdot0
            )));
        }
        if self.z0 <= 0.0 {
            return Err(Error::Config(format!("z0={} must be positive", self.z0)));
        }
        if self.g_accel <= 0.0 {
            return Err(Error::Config(format!("g_accel={} must be positive", self.g_accel)));
        }
        if self.alpha.lo() <= 0.0 || self.alpha.hi() > 1.0 {
            return Err(Error::Config("restitution support must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Time of wall impact, `x*/ẋ0`.
    pub fn horizon(&self) -> f64 {
        self.target_x / self.xdot0
    }

    /// Decision vector `(x0, ẋ0, z0)`.
    pub fn decisions(&self) -> [f64; 3] {
        [self.x0, self.xdot0, self.z0]
    }

    pub fn with_decisions(&self, u: &[f64]) -> Self {
        Self {
            x0: u[0],
            xdot0: u[1],
            z0: u[2],
            ..self.clone()
        }
    }

    pub fn ode_map(&self) -> Result<OdeMap> {
        self.validate()?;
        let system = OdeSystem::new(4, |_, y, p, dy| {
            dy[STATE_X] = y[STATE_XDOT];
            dy[STATE_XDOT] = 0.0;
            dy[STATE_Z] = y[STATE_ZDOT];
            // resting exactly on the ground; every stage then keeps (0, 0)
            dy[STATE_ZDOT] = if y[STATE_Z] == 0.0 && y[STATE_ZDOT] == 0.0 {
                0.0
            } else {
                -p[PARAM_G]
            };
        });
        let ground = Event::reset(
            "ground",
            Direction::Falling,
            |_, y, _| y[STATE_Z],
            |_, y, p| {
                let v = -p[PARAM_ALPHA] * y[STATE_ZDOT];
                if v.abs() < REST_SPEED {
                    y[STATE_Z] = 0.0;
                    y[STATE_ZDOT] = 0.0;
                } else {
                    y[STATE_ZDOT] = v;
                }
            },
        );
        let wall = Event::terminal("wall", Direction::Rising, |_, y, p| y[STATE_X] - p[PARAM_WALL]);
        Ok(OdeMap::new(system, 0.0, 2.0 * self.horizon() + 1.0)?
            .with_event(ground)
            .with_event(wall))
    }

    pub fn problem(&self) -> Result<UncertaintyProblem> {
        let map = self.ode_map()?;
        UncertaintyProblem::new(
            SystemMap::Ode(map),
            vec![self.x0, self.xdot0, self.z0, self.zdot0],
            vec![self.alpha.mean(), self.g_accel, self.x0 + self.target_x],
        )
        .with_uncertain(Coordinate::Param(PARAM_ALPHA), self.alpha.clone())
    }

    /// Squared vertical miss `(z − z*)²` at the wall.
    pub fn observable(&self) -> Observable {
        let target_z = self.target_z;
        Observable::scalar("miss_sq", move |y, _| (y[STATE_Z] - target_z).powi(2))
    }

    /// Height at the wall `z`.
    pub fn height_observable(&self) -> Observable {
        Observable::scalar("z", |y, _| y[STATE_Z])
    }

    pub fn oracle(&self) -> Result<BallOracle> {
        BallOracle::new(self)
    }
}

/// Decision box for `(x0, ẋ0, z0)` used by the launch optimization.
pub const DECISION_BOUNDS: [(f64, f64); 3] = [(-100.0, 0.0), (1.0, 3.0), (10.0, 50.0)];
pub const DECISION_NAMES: [&str; 3] = ["x0", "xdot0", "z0"];

/// Minimize the expected squared miss over the launch state `(x0, ẋ0, z0)`
/// with the restitution density held fixed.
pub fn launch_optimization(base: &BouncingBallParams, bounds: &[(f64, f64); 3], init: &[f64; 3]) -> Result<OptProblem> {
    let decisions = (0..3)
        .map(|i| Decision::new(DECISION_NAMES[i], bounds[i].0, bounds[i].1, init[i]))
        .collect::<Result<Vec<_>>>()?;
    let template = base.clone();
    OptProblem::new(
        decisions,
        move |u: &[f64]| template.with_decisions(u).problem(),
        base.observable(),
    )
}

/// Closed-form impact height for a ball dropped from rest.
///
/// With `A = √(2g z0)`, `B = √(8 z0/g)` the n-th ground impact happens at
/// `t_n = B((1 − αⁿ)/(1 − α) − ½)`, so the number of impacts before the wall
/// time `T` is `⌊b(α)⌋` with `b = ln(1 − (1 − α)(T/B + ½)) / ln α`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallOracle {
    a: f64,
    b: f64,
    horizon: f64,
    g: f64,
    z0: f64,
    target_z: f64,
    alpha: TruncatedNormal,
}

impl BallOracle {
    pub fn new(p: &BouncingBallParams) -> Result<Self> {
        p.validate()?;
        if p.zdot0 != 0.0 {
            return Err(Error::OracleDomain(format!(
                "closed form assumes the ball starts at rest vertically, got zdot0={}",
                p.zdot0
            )));
        }
        Ok(Self {
            a: (2.0 * p.g_accel * p.z0).sqrt(),
            b: (8.0 * p.z0 / p.g_accel).sqrt(),
            horizon: p.horizon(),
            g: p.g_accel,
            z0: p.z0,
            target_z: p.target_z,
            alpha: p.alpha.clone(),
        })
    }

    fn check_alpha(alpha: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::OracleDomain(format!("alpha={alpha} outside (0, 1]")));
        }
        Ok(())
    }

    // T/B + ½, the b(α) value in the elastic limit.
    fn elastic_bounces(&self) -> f64 {
        self.horizon / self.b + 0.5
    }

    /// `b(α)`; the impact count is its floor. Zero when the ball is still
    /// falling at the wall.
    pub fn bounce_number(&self, alpha: f64) -> Result<f64> {
        Self::check_alpha(alpha)?;
        if self.horizon < 0.5 * self.b {
            return Ok(0.0);
        }
        let s = self.elastic_bounces();
        if alpha == 1.0 {
            return Ok(s);
        }
        let arg = 1.0 - (1.0 - alpha) * s;
        if arg <= 0.0 {
            return Err(Error::OracleDomain(format!(
                "alpha={alpha}: bounces accumulate before the wall is reached"
            )));
        }
        Ok(arg.ln() / alpha.ln())
    }

    pub fn bounce_count(&self, alpha: f64) -> Result<usize> {
        Ok(self.bounce_number(alpha)?.floor() as usize)
    }

    /// Time of the n-th ground impact (`n ≥ 1`).
    pub fn impact_time(&self, alpha: f64, n: usize) -> f64 {
        let geometric = if alpha == 1.0 {
            n as f64
        } else {
            (1.0 - alpha.powi(n as i32)) / (1.0 - alpha)
        };
        self.b * (geometric - 0.5)
    }

    /// Height `H(α)` at the wall.
    pub fn impact_height(&self, alpha: f64) -> Result<f64> {
        let n = self.bounce_count(alpha)?;
        if n == 0 {
            return Ok(self.z0 - 0.5 * self.g * self.horizon * self.horizon);
        }
        let t_r = self.horizon - self.impact_time(alpha, n);
        let v_r = alpha.powi(n as i32) * self.a;
        Ok(v_r * t_r - 0.5 * self.g * t_r * t_r)
    }

    /// Coefficients `h0..h3` of `H(α)` on the two-impact range.
    pub fn two_impact_cubic(&self) -> [f64; 4] {
        let (a, b, g) = (self.a, self.b, self.g);
        let c = self.horizon - 0.5 * b;
        [-0.5 * g * c * c, g * b * c, a * c - 0.5 * g * b * b, -a * b]
    }

    pub fn impact_height_cubic(&self, alpha: f64) -> f64 {
        let h = self.two_impact_cubic();
        ((h[3] * alpha + h[2]) * alpha + h[1]) * alpha + h[0]
    }

    /// The `α` at which the n-th impact lands exactly at the wall time,
    /// i.e. the root of `1 + α + … + α^{n−1} = T/B + ½`. At least `n` impacts
    /// occur for `α` up to this value, since flights shorten as `α` drops.
    /// `None` when every `α ∈ (0, 1]` gives `n` impacts.
    pub fn alpha_threshold(&self, n: usize) -> Option<f64> {
        let s = self.elastic_bounces();
        if self.horizon < 0.5 * self.b || (n as f64) <= s {
            return None;
        }
        let partial = |a: f64| (0..n).map(|k| a.powi(k as i32)).sum::<f64>();
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > f64::EPSILON * hi {
            let mid = 0.5 * (lo + hi);
            if partial(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// The open-closed `α` range on which exactly two impacts occur.
    pub fn two_impact_range(&self) -> Option<(f64, f64)> {
        if self.horizon < 0.5 * self.b {
            return None;
        }
        let lo = self.alpha_threshold(3)?;
        let hi = self.alpha_threshold(2).unwrap_or(f64::INFINITY);
        Some((lo, hi))
    }

    /// Coefficients `a0..a6` of `(H(α) − z*)²` on the two-impact range.
    pub fn miss_polynomial(&self) -> [f64; 7] {
        let mut h = self.two_impact_cubic();
        h[0] -= self.target_z;
        let mut out = [0.0; 7];
        for i in 0..4 {
            for j in 0..4 {
                out[i + j] += h[i] * h[j];
            }
        }
        out
    }

    /// `E[(H(α) − z*)²]` as a combination of the density's raw moments.
    pub fn analytic_expectation(&self) -> Result<f64> {
        let (lo, hi) = self
            .two_impact_range()
            .ok_or_else(|| Error::OracleDomain("no restitution gives exactly two impacts".into()))?;
        if self.alpha.lo() <= lo || self.alpha.hi() > hi {
            return Err(Error::OracleDomain(format!(
                "density support [{}, {}] not inside the two-impact range ({lo}, {hi})",
                self.alpha.lo(),
                self.alpha.hi()
            )));
        }
        let a = self.miss_polynomial();
        let mut total = a[0];
        for (k, ak) in a.iter().enumerate().skip(1) {
            total += ak * self.alpha.raw_moment(k)?;
        }
        Ok(total)
    }
}

/// Linear decay `ẏ = −k y` on `[0, 1]` with uncertain `y0` and rate `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpDecay {
    pub y0: TruncatedNormal,
    pub k: Uniform,
}

impl Default for ExpDecay {
    fn default() -> Self {
        Self {
            y0: TruncatedNormal::new(1.0, 0.1, 0.6, 1.4).expect("valid"),
            k: Uniform::new(0.5, 1.5).expect("valid"),
        }
    }
}

impl ExpDecay {
    pub fn problem(&self) -> Result<UncertaintyProblem> {
        let map = OdeMap::new(OdeSystem::new(1, |_, y, p, dy| dy[0] = -p[0] * y[0]), 0.0, 1.0)?;
        UncertaintyProblem::new(SystemMap::Ode(map), vec![self.y0.mean()], vec![1.0])
            .with_uncertain(Coordinate::State(0), self.y0.clone())?
            .with_uncertain(Coordinate::Param(0), self.k.clone())
    }

    /// `E[y(1)] = E[y0] · E[e^{−k}]`.
    pub fn reference_mean(&self) -> f64 {
        let (a, b) = (self.k.lo(), self.k.hi());
        self.y0.mean() * ((-a).exp() - (-b).exp()) / (b - a)
    }
}

/// Integrated white noise `ẏ = Ẇ`, `y(0) = 0`, on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyIntegrator {
    pub horizon: f64,
    pub noise: NoiseSpec,
}

impl Default for NoisyIntegrator {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            noise: NoiseSpec::default(),
        }
    }
}

impl NoisyIntegrator {
    pub fn problem(&self) -> Result<UncertaintyProblem> {
        let map = OdeMap::new(OdeSystem::new(1, |_, _, _, dy| dy[0] = 0.0), 0.0, self.horizon)?;
        let base = UncertaintyProblem::new(SystemMap::Ode(map), vec![0.0], vec![]);
        let noise = self.noise.build(self.horizon)?;
        noisy_problem(&base, noise, Arc::new(|_, _, _, out: &mut [f64]| out[0] = 1.0))
    }

    /// `E[y(T)²]` under the configured parameterization.
    pub fn reference_second_moment(&self) -> f64 {
        match self.noise {
            NoiseSpec::Kl { terms } => kl_variance_at_horizon(self.horizon, terms),
            NoiseSpec::FixedStep { .. } => self.horizon,
        }
    }
}

pub const SCENARIOS: [&str; 3] = ["bouncing_ball", "exp_decay", "noisy_integrator"];

#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    BouncingBall(BouncingBallParams),
    ExpDecay(ExpDecay),
    NoisyIntegrator(NoisyIntegrator),
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        match cfg.scenario.as_str() {
            "bouncing_ball" => Ok(Scenario::BouncingBall(cfg.bouncing_ball.clone())),
            "exp_decay" => Ok(Scenario::ExpDecay(ExpDecay::default())),
            "noisy_integrator" => Ok(Scenario::NoisyIntegrator(NoisyIntegrator {
                noise: cfg.noise,
                ..NoisyIntegrator::default()
            })),
            other => Err(Error::UnknownScenario(other.to_owned())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::BouncingBall(_) => SCENARIOS[0],
            Scenario::ExpDecay(_) => SCENARIOS[1],
            Scenario::NoisyIntegrator(_) => SCENARIOS[2],
        }
    }

    pub fn problem(&self) -> Result<UncertaintyProblem> {
        match self {
            Scenario::BouncingBall(p) => p.problem(),
            Scenario::ExpDecay(s) => s.problem(),
            Scenario::NoisyIntegrator(s) => s.problem(),
        }
    }

    /// The scenario's quantity of interest.
    pub fn observable(&self) -> Observable {
        match self {
            Scenario::BouncingBall(p) => p.observable(),
            Scenario::ExpDecay(_) => Observable::coordinate(0),
            Scenario::NoisyIntegrator(_) => Observable::scalar("y^2", |y, _| y[0] * y[0]),
        }
    }

    /// Scalar observable whose central moments `moments` reports.
    pub fn moment_observable(&self) -> Observable {
        match self {
            Scenario::BouncingBall(p) => p.observable(),
            _ => Observable::coordinate(0),
        }
    }

    /// Closed-form value of `E[observable]`.
    pub fn reference(&self) -> Result<f64> {
        match self {
            Scenario::BouncingBall(p) => p.oracle()?.analytic_expectation(),
            Scenario::ExpDecay(s) => Ok(s.reference_mean()),
            Scenario::NoisyIntegrator(s) => Ok(s.reference_second_moment()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSettings {
    pub rtol: f64,
    pub atol: f64,
    pub max_evals: usize,
    pub n: usize,
    pub seed: u64,
    pub checkpoints: Vec<usize>,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-2,
            atol: 1e-2,
            max_evals: 1_000_000,
            n: 100_000,
            seed: 0,
            checkpoints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

/// Run configuration as read from JSON. Missing keys take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub bouncing_ball: BouncingBallParams,
    pub noise: NoiseSpec,
    pub method: MethodSettings,
    pub output: OutputPaths,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: SCENARIOS[0].to_owned(),
            bouncing_ball: BouncingBallParams::default(),
            noise: NoiseSpec::default(),
            method: MethodSettings::default(),
            output: OutputPaths::default(),
        }
    }
}
