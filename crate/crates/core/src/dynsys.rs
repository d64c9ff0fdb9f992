//! System maps `S: x0 -> terminal state`.
//!
//! Continuous systems are integrated with the Dormand–Prince 5(4) pair under
//! PI step-size control. Events are located on the step's 4th-order
//! continuous extension with the Illinois method, so no re-integration is
//! needed to find crossings. A fired event stays disarmed until its condition
//! leaves a small dead-band, which keeps a ball resting on `z = 0` from
//! re-triggering the ground event forever.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type DriftFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type ConditionFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type EffectFn = Arc<dyn Fn(f64, &mut [f64], &[f64]) + Send + Sync>;
pub type PointMapFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type CustomMapFn = Arc<dyn Fn(&[f64], &[f64]) -> Result<Terminal> + Send + Sync>;

/// `dy/dt = drift(t, y, p)`.
#[derive(Clone)]
pub struct OdeSystem {
    dim: usize,
    drift: DriftFn,
}

impl OdeSystem {
    pub fn new<F>(dim: usize, drift: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            dim,
            drift: Arc::new(drift),
        }
    }

    pub fn from_arc(dim: usize, drift: DriftFn) -> Self {
        Self { dim, drift }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self) -> &DriftFn {
        &self.drift
    }
}

impl fmt::Debug for OdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeSystem").field("dim", &self.dim).finish()
    }
}

/// Required sign change of an event condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// positive to non-positive
    Falling,
    Either,
    /// negative to non-negative
    Rising,
}

impl Direction {
    fn crosses(self, before: f64, after: f64) -> bool {
        match self {
            Direction::Falling => before > 0.0 && after <= 0.0,
            Direction::Rising => before < 0.0 && after >= 0.0,
            Direction::Either => (before > 0.0 && after <= 0.0) || (before < 0.0 && after >= 0.0),
        }
    }
}

#[derive(Clone)]
pub struct Event {
    pub name: String,
    pub condition: ConditionFn,
    pub effect: Option<EffectFn>,
    pub terminal: bool,
    pub direction: Direction,
}

impl Event {
    pub fn terminal<C>(name: &str, direction: Direction, condition: C) -> Self
    where
        C: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.to_owned(),
            condition: Arc::new(condition),
            effect: None,
            terminal: true,
            direction,
        }
    }

    pub fn reset<C, E>(name: &str, direction: Direction, condition: C, effect: E) -> Self
    where
        C: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
        E: Fn(f64, &mut [f64], &[f64]) + Send + Sync + 'static,
    {
        Self {
            name: name.to_owned(),
            condition: Arc::new(condition),
            effect: Some(Arc::new(effect)),
            terminal: false,
            direction,
        }
    }
}

impl fmt::Debug for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Event")
            .field("name", &self.name)
            .field("terminal", &self.terminal)
            .field("direction", &self.direction)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Bracket width for event times; `None` means `1e-10 · (t_max − t0)`.
    pub event_tol_t: Option<f64>,
    /// Bound on `|condition|` at a located event.
    pub event_tol: f64,
    /// A disarmed event re-arms once `|condition|` exceeds this.
    pub dead_band: f64,
    pub max_steps: usize,
    /// Disables adaptivity; used for order-of-accuracy checks.
    pub fixed_step: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-8,
            event_tol_t: None,
            event_tol: 1e-12,
            dead_band: 1e-9,
            max_steps: 1_000_000,
            fixed_step: None,
        }
    }
}

impl SolverOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    /// Inner tolerance tied to an outer quadrature tolerance:
    /// `min(1e-8, quad_rtol / 100)`.
    pub fn coupled_to_quadrature(quad_rtol: f64) -> Self {
        let tol = (quad_rtol / 100.0).min(1e-8);
        Self::with_tolerances(tol, tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub index: usize,
}

/// Result of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Terminal {
    pub state: Vec<f64>,
    pub time: f64,
    pub event_log: Vec<EventRecord>,
}

impl Terminal {
    pub fn event_count(&self, index: usize) -> usize {
        self.event_log.iter().filter(|e| e.index == index).count()
    }
}

/// Accepted step ends plus event states.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub event_log: Vec<EventRecord>,
}

impl Trajectory {
    fn push(&mut self, t: f64, y: &[f64]) {
        if self.times.last().is_none_or(|&last| t > last) {
            self.times.push(t);
            self.states.push(y.to_vec());
        } else if let Some(last) = self.states.last_mut() {
            // same instant (event effect): keep the post-event state
            last.copy_from_slice(y);
        }
    }
}

/// Continuous flow with events, integrated from `t0` until the first
/// terminal event or `t_max`.
#[derive(Debug, Clone)]
pub struct OdeMap {
    pub system: OdeSystem,
    pub events: Vec<Event>,
    pub t0: f64,
    pub t_max: f64,
    pub options: SolverOptions,
    /// Times where the drift may be discontinuous; steps land on them exactly.
    pub breakpoints: Vec<f64>,
}

impl OdeMap {
    pub fn new(system: OdeSystem, t0: f64, t_max: f64) -> Result<Self> {
        if !(t0.is_finite() && t_max.is_finite() && t_max > t0) {
            return Err(Error::InvalidArgument(format!(
                "need finite t0 < t_max, got [{t0}, {t_max}]"
            )));
        }
        Ok(Self {
            system,
            events: Vec::new(),
            t0,
            t_max,
            options: SolverOptions::default(),
            breakpoints: Vec::new(),
        })
    }

    pub fn with_event(mut self, event: Event) -> Self {
        self.events.push(event);
        self
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_breakpoints(mut self, mut points: Vec<f64>) -> Self {
        points.retain(|&b| b > self.t0 && b < self.t_max);
        points.sort_by(f64::total_cmp);
        points.dedup();
        self.breakpoints = points;
        self
    }

    pub fn integrate(&self, x0: &[f64], p: &[f64]) -> Result<Terminal> {
        Solver::new(self, p).run(x0, None)
    }

    pub fn trajectory(&self, x0: &[f64], p: &[f64]) -> Result<(Terminal, Trajectory)> {
        let mut traj = Trajectory::default();
        let term = Solver::new(self, p).run(x0, Some(&mut traj))?;
        Ok((term, traj))
    }
}

/// The map `S` whose action on observables is taken.
#[derive(Clone)]
pub enum SystemMap {
    Ode(OdeMap),
    /// `n`-fold composition of a point map.
    Discrete {
        map: PointMapFn,
        steps: usize,
    },
    /// Closed-form map.
    Function(PointMapFn),
    /// Arbitrary fallible map, e.g. an average over inner simulations.
    Custom(CustomMapFn),
}

impl fmt::Debug for SystemMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemMap::Ode(m) => f.debug_tuple("Ode").field(m).finish(),
            SystemMap::Discrete { steps, .. } => f.debug_struct("Discrete").field("steps", steps).finish(),
            SystemMap::Function(_) => f.write_str("Function"),
            SystemMap::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl SystemMap {
    pub fn function<F>(f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        SystemMap::Function(Arc::new(f))
    }

    pub fn identity() -> Self {
        Self::function(|x, _| x.to_vec())
    }

    pub fn discrete<F>(map: F, steps: usize) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        SystemMap::Discrete {
            map: Arc::new(map),
            steps,
        }
    }

    pub fn simulate(&self, x0: &[f64], p: &[f64]) -> Result<Terminal> {
        match self {
            SystemMap::Ode(m) => m.integrate(x0, p),
            SystemMap::Discrete { map, steps } => Ok(Terminal {
                state: iterate_discrete(|y| map(y, p), x0, *steps)?,
                time: *steps as f64,
                event_log: Vec::new(),
            }),
            SystemMap::Function(f) => {
                let state = f(x0, p);
                if state.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { t: 0.0 });
                }
                Ok(Terminal {
                    state,
                    time: 0.0,
                    event_log: Vec::new(),
                })
            }
            SystemMap::Custom(f) => f(x0, p),
        }
    }

    /// Applies `f` to the tolerances of a continuous map; other maps are returned unchanged.
    pub fn map_options(&self, f: impl FnOnce(SolverOptions) -> SolverOptions) -> Self {
        match self {
            SystemMap::Ode(m) => SystemMap::Ode(m.clone().with_options(f(m.options))),
            other => other.clone(),
        }
    }
}

/// `y(n) = f(y(n-1))`, `y(0) = x0`.
pub fn iterate_discrete<F>(f: F, x0: &[f64], n: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut y = x0.to_vec();
    for k in 0..n {
        let next = f(&y);
        if next.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                got: next.len(),
            });
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: (k + 1) as f64 });
        }
        y = next;
    }
    Ok(y)
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order solution minus embedded 4th-order solution
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// continuous extension
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const MAX_EVENT_ITERS: usize = 200;

/// Interpolant of one accepted step.
struct Dense {
    t: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl Dense {
    fn eval(&self, theta: f64, out: &mut [f64]) {
        let t1 = 1.0 - theta;
        for i in 0..out.len() {
            out[i] = self.r[0][i]
                + theta * (self.r[1][i] + t1 * (self.r[2][i] + theta * (self.r[3][i] + t1 * self.r[4][i])));
        }
    }
}

struct Solver<'a> {
    map: &'a OdeMap,
    p: &'a [f64],
    n: usize,
    k: [Vec<f64>; 7],
    scratch: Vec<f64>,
    evals: usize,
}

impl<'a> Solver<'a> {
    fn new(map: &'a OdeMap, p: &'a [f64]) -> Self {
        let n = map.system.dim;
        Self {
            map,
            p,
            n,
            k: std::array::from_fn(|_| vec![0.0; n]),
            scratch: vec![0.0; n],
            evals: 0,
        }
    }

    fn drift(&mut self, t: f64, y: &[f64], out_stage: usize) -> Result<()> {
        self.evals += 1;
        let mut out = std::mem::take(&mut self.k[out_stage]);
        (self.map.system.drift)(t, y, self.p, &mut out);
        let bad = out.iter().any(|v| !v.is_finite());
        self.k[out_stage] = out;
        if bad {
            return Err(Error::NonFinite { t });
        }
        Ok(())
    }

    fn err_norm(&self, y0: &[f64], y1: &[f64], err: &[f64]) -> f64 {
        let o = &self.map.options;
        let s: f64 = (0..self.n)
            .map(|i| {
                let sk = o.atol + o.rtol * y0[i].abs().max(y1[i].abs());
                (err[i] / sk).powi(2)
            })
            .sum();
        (s / self.n as f64).sqrt()
    }

    // Hairer's starting step heuristic; leaves k[0] = f(t, y) intact.
    fn initial_step(&mut self, t: f64, y: &[f64], h_limit: f64) -> Result<f64> {
        let o = self.map.options;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..self.n {
            let sk = o.atol + o.rtol * y[i].abs();
            d0 += (y[i] / sk).powi(2);
            d1 += (self.k[0][i] / sk).powi(2);
        }
        let (d0, d1) = ((d0 / self.n as f64).sqrt(), (d1 / self.n as f64).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(h_limit);
        let y1: Vec<f64> = (0..self.n).map(|i| y[i] + h0 * self.k[0][i]).collect();
        self.drift(t + h0, &y1, 1)?;
        let mut d2 = 0.0;
        for i in 0..self.n {
            let sk = o.atol + o.rtol * y[i].abs();
            d2 += ((self.k[1][i] - self.k[0][i]) / sk).powi(2);
        }
        let d2 = (d2 / self.n as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(h_limit))
    }

    fn run(mut self, x0: &[f64], mut traj: Option<&mut Trajectory>) -> Result<Terminal> {
        let map = self.map;
        let o = map.options;
        if x0.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x0.len(),
            });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: map.t0 });
        }
        if !(o.rtol > 0.0 && o.atol > 0.0) {
            return Err(Error::InvalidArgument("ODE tolerances must be positive".into()));
        }
        let span = map.t_max - map.t0;
        let event_tol_t = o.event_tol_t.unwrap_or(1e-10 * span);
        let mut t = map.t0;
        let mut y = x0.to_vec();
        let mut log = Vec::new();
        let n_ev = map.events.len();
        let mut armed = vec![true; n_ev];
        let mut g_prev: Vec<f64> = map.events.iter().map(|e| (e.condition)(t, &y, self.p)).collect();
        for i in 0..n_ev {
            if g_prev[i].abs() <= o.dead_band {
                armed[i] = false;
            }
        }
        if let Some(tr) = traj.as_deref_mut() {
            tr.push(t, &y);
        }

        let mut bp_iter = map.breakpoints.iter().copied().peekable();
        let mut seg_end = bp_iter.next().unwrap_or(map.t_max);
        self.drift(t, &y, 0)?;
        let mut h = match o.fixed_step {
            Some(h) => h,
            None => self.initial_step(t, &y, seg_end - t)?,
        };
        let mut fac_old = 1e-4f64;
        let mut y_new = vec![0.0; self.n];
        let mut err = vec![0.0; self.n];
        let mut stage = vec![0.0; self.n];
        let mut steps = 0usize;

        loop {
            if t >= map.t_max {
                return Ok(Terminal {
                    state: y,
                    time: map.t_max,
                    event_log: log,
                });
            }
            steps += 1;
            if steps > o.max_steps {
                return Err(Error::StepSizeUnderflow { t });
            }
            let remaining = seg_end - t;
            let mut last_in_seg = false;
            if h >= remaining * (1.0 - 1e-12) {
                h = remaining;
                last_in_seg = true;
            }
            let h_min = 16.0 * f64::EPSILON * t.abs().max(span);
            if h < h_min && !last_in_seg {
                return Err(Error::StepSizeUnderflow { t });
            }

            // stages 2..7; k[0] holds f(t, y)
            for s in 1..7 {
                for i in 0..self.n {
                    let mut acc = 0.0;
                    for (j, a) in A[s][..s].iter().enumerate() {
                        acc += a * self.k[j][i];
                    }
                    stage[i] = y[i] + h * acc;
                }
                // stages at the end of a segment see the drift from the left
                let ts = if C[s] == 1.0 && last_in_seg {
                    seg_end.next_down()
                } else {
                    t + C[s] * h
                };
                self.drift(ts, &stage, s)?;
                if s == 6 {
                    y_new.copy_from_slice(&stage);
                }
            }
            for i in 0..self.n {
                err[i] = h * E.iter().zip(&self.k).map(|(e, k)| e * k[i]).sum::<f64>();
            }
            let err_n = if o.fixed_step.is_some() {
                0.0
            } else {
                self.err_norm(&y, &y_new, &err)
            };

            if err_n > 1.0 {
                let fac11 = err_n.powf(0.2 - 0.75 * PI_BETA);
                h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
                continue;
            }

            let t_new = if last_in_seg { seg_end } else { t + h };
            let dense = self.dense(t, h, &y, &y_new);

            // events on [t, t_new]
            if let Some((idx, t_ev, y_ev)) =
                self.find_first_event(&dense, &armed, &g_prev, event_tol_t, o.event_tol, o.dead_band)?
            {
                let mut y_ev = y_ev;
                log.push(EventRecord { time: t_ev, index: idx });
                let ev = &map.events[idx];
                if let Some(tr) = traj.as_deref_mut() {
                    tr.push(t_ev, &y_ev);
                    tr.event_log.push(EventRecord { time: t_ev, index: idx });
                }
                if let Some(effect) = &ev.effect {
                    effect(t_ev, &mut y_ev, self.p);
                    if y_ev.len() != self.n {
                        return Err(Error::DimensionMismatch {
                            expected: self.n,
                            got: y_ev.len(),
                        });
                    }
                }
                if let Some(tr) = traj.as_deref_mut() {
                    tr.push(t_ev, &y_ev);
                }
                if ev.terminal {
                    return Ok(Terminal {
                        state: y_ev,
                        time: t_ev,
                        event_log: log,
                    });
                }
                t = t_ev;
                y = y_ev;
                for i in 0..n_ev {
                    g_prev[i] = (map.events[i].condition)(t, &y, self.p);
                }
                armed[idx] = false;
                for i in 0..n_ev {
                    if g_prev[i].abs() <= o.dead_band {
                        armed[i] = false;
                    }
                }
                self.drift(t, &y, 0)?;
                h = match o.fixed_step {
                    Some(h) => h,
                    None => self.initial_step(t, &y, seg_end - t)?,
                };
                fac_old = 1e-4;
                continue;
            }

            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            self.k.swap(0, 6);
            for i in 0..n_ev {
                let g = (map.events[i].condition)(t, &y, self.p);
                if !armed[i] && g.abs() > o.dead_band {
                    armed[i] = true;
                }
                g_prev[i] = g;
            }
            if let Some(tr) = traj.as_deref_mut() {
                tr.push(t, &y);
            }

            if o.fixed_step.is_none() {
                let fac11 = err_n.powf(0.2 - 0.75 * PI_BETA);
                let fac = (fac11 / fac_old.powf(PI_BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                fac_old = err_n.max(1e-4);
                h /= fac;
            }
            if last_in_seg && t < map.t_max {
                seg_end = bp_iter.next().unwrap_or(map.t_max);
                // drift may jump at a breakpoint
                self.drift(t, &y, 0)?;
                if o.fixed_step.is_none() {
                    h = h.min(self.initial_step(t, &y, seg_end - t)?.max(h * 0.1));
                }
            }
        }
    }

    fn dense(&mut self, t: f64, h: f64, y0: &[f64], y1: &[f64]) -> Dense {
        let n = self.n;
        let mut r: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
        for i in 0..n {
            let ydiff = y1[i] - y0[i];
            let bspl = h * self.k[0][i] - ydiff;
            r[0][i] = y0[i];
            r[1][i] = ydiff;
            r[2][i] = bspl;
            r[3][i] = ydiff - h * self.k[6][i] - bspl;
            r[4][i] = h * D.iter().zip(&self.k).map(|(d, k)| d * k[i]).sum::<f64>();
        }
        Dense { t, h, r }
    }

    // Scans the step at a few interior points so that a condition crossing
    // zero and coming back within one step is still caught. A disarmed event
    // joins the scan from its first sample outside the dead band; if that
    // sample already lies past the crossing, the start of the step is searched
    // for an excursion to the other side that the coarse samples skipped.
    #[allow(clippy::too_many_arguments)]
    fn find_first_event(
        &mut self,
        dense: &Dense,
        armed: &[bool],
        g_prev: &[f64],
        tol_t: f64,
        tol_g: f64,
        dead_band: f64,
    ) -> Result<Option<(usize, f64, Vec<f64>)>> {
        const THETAS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.map.events.len() {
            let direction = self.map.events[i].direction;
            let mut active = armed[i];
            let mut lo = 0.0;
            let mut g_lo = g_prev[i];
            for &th in &THETAS {
                let g = self.cond_at(dense, i, th);
                if !active {
                    if g.abs() <= dead_band {
                        continue;
                    }
                    active = true;
                    if let Some((b, g_b)) = self.skipped_excursion(dense, i, direction, th, g, dead_band) {
                        lo = b;
                        g_lo = g_b;
                    } else {
                        lo = th;
                        g_lo = g;
                        continue;
                    }
                }
                if direction.crosses(g_lo, g) {
                    let root = self.illinois(dense, i, lo, th, g_lo, g, tol_t, tol_g)?;
                    if best.is_none_or(|(_, b)| root < b) {
                        best = Some((i, root));
                    }
                    break;
                }
                lo = th;
                g_lo = g;
            }
        }
        Ok(best.map(|(i, th)| {
            let mut y = vec![0.0; self.n];
            dense.eval(th, &mut y);
            (i, dense.t + th * dense.h, y)
        }))
    }

    // For a condition first seen outside the dead band at `theta` on the
    // post-crossing side, halves toward the step start looking for a sample
    // on the pre-crossing side.
    fn skipped_excursion(
        &mut self,
        dense: &Dense,
        event: usize,
        direction: Direction,
        theta: f64,
        g: f64,
        dead_band: f64,
    ) -> Option<(f64, f64)> {
        let before = |v: f64| match direction {
            Direction::Falling => v > dead_band,
            Direction::Rising => v < -dead_band,
            Direction::Either => false,
        };
        if direction == Direction::Either || !direction.crosses(-g, g) {
            return None;
        }
        let mut b = 0.5 * theta;
        while b * dense.h.abs() > 4.0 * f64::EPSILON * dense.t.abs().max(dense.h.abs()) {
            let g_b = self.cond_at(dense, event, b);
            if before(g_b) {
                return Some((b, g_b));
            }
            b *= 0.5;
        }
        None
    }

    fn cond_at(&mut self, dense: &Dense, event: usize, theta: f64) -> f64 {
        let mut y = std::mem::take(&mut self.scratch);
        dense.eval(theta, &mut y);
        let g = (self.map.events[event].condition)(dense.t + theta * dense.h, &y, self.p);
        self.scratch = y;
        g
    }

    #[allow(clippy::too_many_arguments)]
    fn illinois(
        &mut self,
        dense: &Dense,
        event: usize,
        mut a: f64,
        mut b: f64,
        mut ga: f64,
        mut gb: f64,
        tol_t: f64,
        tol_g: f64,
    ) -> Result<f64> {
        let tol_theta = tol_t / dense.h.abs();
        let ulp_theta = 4.0 * f64::EPSILON * (dense.t.abs() + dense.h.abs()) / dense.h.abs();
        if gb == 0.0 {
            return Ok(b);
        }
        let mut side = 0i8;
        for _ in 0..MAX_EVENT_ITERS {
            let width = b - a;
            let width_ok = width <= tol_theta || width <= ulp_theta;
            if width_ok && gb.abs().min(ga.abs()) <= tol_g {
                return Ok(if ga.abs() < gb.abs() { a } else { b });
            }
            if width <= ulp_theta {
                // cannot shrink further in floating point
                return Ok(if ga.abs() < gb.abs() { a } else { b });
            }
            let mut c = (a * gb - b * ga) / (gb - ga);
            if !(c > a && c < b) {
                c = 0.5 * (a + b);
            }
            let gc = self.cond_at(dense, event, c);
            if gc == 0.0 {
                return Ok(c);
            }
            if (gc > 0.0) == (gb > 0.0) {
                b = c;
                gb = gc;
                if side == 1 {
                    ga *= 0.5;
                }
                side = 1;
            } else {
                a = c;
                ga = gc;
                if side == -1 {
                    gb *= 0.5;
                }
                side = -1;
            }
        }
        Err(Error::EventLocation {
            t: dense.t + a * dense.h,
            iterations: MAX_EVENT_ITERS,
        })
    }
}

/// Locates a crossing of `condition` on `[t_lo, t_hi]` for a scalar function of
/// time. Returns `None` when there is no sign change in the required direction.
pub fn locate_event<F>(
    condition: F,
    t_lo: f64,
    t_hi: f64,
    direction: Direction,
    tol_t: f64,
    tol_g: f64,
) -> Result<Option<f64>>
where
    F: Fn(f64) -> f64,
{
    let (g_lo, g_hi) = (condition(t_lo), condition(t_hi));
    if !direction.crosses(g_lo, g_hi) {
        return Ok(None);
    }
    let (mut a, mut b, mut ga, mut gb) = (t_lo, t_hi, g_lo, g_hi);
    if gb == 0.0 {
        return Ok(Some(b));
    }
    let mut side = 0i8;
    for _ in 0..MAX_EVENT_ITERS {
        let ulp = 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0);
        if (b - a <= tol_t && ga.abs().min(gb.abs()) <= tol_g) || b - a <= ulp {
            return Ok(Some(if ga.abs() < gb.abs() { a } else { b }));
        }
        let mut c = (a * gb - b * ga) / (gb - ga);
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let gc = condition(c);
        if gc == 0.0 {
            return Ok(Some(c));
        }
        if (gc > 0.0) == (gb > 0.0) {
            b = c;
            gb = gc;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        } else {
            a = c;
            ga = gc;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        }
    }
    Err(Error::EventLocation {
        t: a,
        iterations: MAX_EVENT_ITERS,
    })
}
