//! Deterministic h-adaptive quadrature over boxes.
//!
//! One-dimensional problems use a 15-point Kronrod / 7-point Gauss pair with
//! interval bisection; higher dimensions use the degree-7/5 Genz–Malik rule
//! with the worst region split along the axis of largest fourth difference.
//! Integrands are vector valued and every component shares one region heap.
//!
//! Rule nodes are evaluated through [`batch_eval`], which may run in parallel
//! but writes each result into a pre-assigned slot, so results are bitwise
//! independent of the number of worker threads.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::SupportBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_evals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-10,
            max_evals: 1_000_000,
        }
    }
}

impl QuadOptions {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn with_max_evals(mut self, max_evals: usize) -> Self {
        self.max_evals = max_evals;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol >= 0.0 && self.atol >= 0.0) || (self.rtol == 0.0 && self.atol == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must be non-negative and not both zero (rtol={}, atol={})",
                self.rtol, self.atol
            )));
        }
        Ok(())
    }

    /// Per-component target `max(atol, rtol·|value|)`.
    pub fn target(&self, value: f64) -> f64 {
        self.atol.max(self.rtol * value.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: Vec<f64>,
    pub error: Vec<f64>,
    pub evals: usize,
    pub converged: bool,
}

/// Evaluates `f` at every point, preserving order. The first failure in point
/// order is reported together with the offending point.
pub fn batch_eval<F>(f: &F, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let raw: Vec<Result<Vec<f64>>> = points.par_iter().map(|p| f(p)).collect();
    let mut out = Vec::with_capacity(raw.len());
    for (p, r) in points.iter().zip(raw) {
        match r {
            Ok(v) => out.push(v),
            Err(e @ Error::Simulation { .. }) => return Err(e),
            Err(e) => {
                return Err(Error::Simulation {
                    point: p.clone(),
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Sequential counterpart of [`batch_eval`], used as its reference.
pub fn batch_eval_serial<F>(f: &F, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    points
        .iter()
        .map(|p| {
            f(p).map_err(|e| match e {
                Error::Simulation { .. } => e,
                other => Error::Simulation {
                    point: p.clone(),
                    reason: other.to_string(),
                },
            })
        })
        .collect()
}

// Region bookkeeping shared by both drivers.

#[derive(Debug, Clone)]
struct Region {
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: Vec<f64>,
    error: Vec<f64>,
    split_axis: usize,
    key: f64,
    seq: u64,
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Region {}

impl PartialOrd for Region {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Region {
    // Largest error first; among equal errors the earliest inserted region wins.
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct RuleOutput {
    value: Vec<f64>,
    error: Vec<f64>,
    split_axis: usize,
}

trait Rule {
    fn nodes(&self, lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>>;
    fn combine(&self, lo: &[f64], hi: &[f64], values: &[Vec<f64>]) -> RuleOutput;
    fn evals_per_region(&self) -> usize;
}

fn check_dims(values: &[Vec<f64>], dim_out: &mut Option<usize>) -> Result<()> {
    for v in values {
        match dim_out {
            None => {
                if v.is_empty() {
                    return Err(Error::InvalidArgument("integrand returned an empty vector".into()));
                }
                *dim_out = Some(v.len());
            }
            Some(d) if *d != v.len() => {
                return Err(Error::DimensionMismatch {
                    expected: *d,
                    got: v.len(),
                })
            }
            _ => {}
        }
        if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "integrand component {bad} is not finite"
            )));
        }
    }
    Ok(())
}

fn adaptive<R, F>(rule: &R, f: &F, lo: Vec<f64>, hi: Vec<f64>, opts: &QuadOptions) -> Result<QuadResult>
where
    R: Rule,
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    opts.validate()?;
    let per_region = rule.evals_per_region();
    let mut dim_out = None;
    let mut seq = 0u64;

    let nodes = rule.nodes(&lo, &hi);
    let values = batch_eval(f, &nodes)?;
    check_dims(&values, &mut dim_out)?;
    let mut evals = nodes.len();
    let first = rule.combine(&lo, &hi, &values);
    let mut heap = BinaryHeap::new();
    let mut total_value = first.value.clone();
    let mut total_error = first.error.clone();
    heap.push(make_region(lo, hi, first, &mut seq));

    let mut since_resum = 0usize;
    loop {
        if is_converged(&total_value, &total_error, opts) {
            // running sums can drift; confirm on a fresh sum before stopping
            let (v, e) = resum(&heap);
            total_value = v;
            total_error = e;
            since_resum = 0;
            if is_converged(&total_value, &total_error, opts) {
                return Ok(QuadResult {
                    value: total_value,
                    error: total_error,
                    evals,
                    converged: true,
                });
            }
        }
        if evals + 2 * per_region > opts.max_evals {
            let (value, error) = resum(&heap);
            return Ok(QuadResult {
                value,
                error,
                evals,
                converged: false,
            });
        }
        let worst = heap.pop().expect("heap holds at least one region");
        let axis = worst.split_axis;
        let mid = 0.5 * (worst.lo[axis] + worst.hi[axis]);
        let mut left_hi = worst.hi.clone();
        left_hi[axis] = mid;
        let mut right_lo = worst.lo.clone();
        right_lo[axis] = mid;
        let (left_lo, right_hi) = (worst.lo.clone(), worst.hi.clone());

        let mut nodes = rule.nodes(&left_lo, &left_hi);
        nodes.extend(rule.nodes(&right_lo, &right_hi));
        let values = batch_eval(f, &nodes)?;
        check_dims(&values, &mut dim_out)?;
        evals += nodes.len();
        let (lv, rv) = values.split_at(per_region);
        let left = rule.combine(&left_lo, &left_hi, lv);
        let right = rule.combine(&right_lo, &right_hi, rv);

        for j in 0..total_value.len() {
            total_value[j] += left.value[j] + right.value[j] - worst.value[j];
            total_error[j] += left.error[j] + right.error[j] - worst.error[j];
        }
        heap.push(make_region(left_lo, left_hi, left, &mut seq));
        heap.push(make_region(right_lo, right_hi, right, &mut seq));

        since_resum += 1;
        if since_resum >= 64 {
            let (v, e) = resum(&heap);
            total_value = v;
            total_error = e;
            since_resum = 0;
        }
    }
}

fn make_region(lo: Vec<f64>, hi: Vec<f64>, out: RuleOutput, seq: &mut u64) -> Region {
    let key = out.error.iter().copied().fold(0.0, f64::max);
    *seq += 1;
    Region {
        lo,
        hi,
        value: out.value,
        error: out.error,
        split_axis: out.split_axis,
        key,
        seq: *seq,
    }
}

// Fixed summation order (insertion sequence) so the totals do not depend on
// the heap's internal layout.
fn resum(heap: &BinaryHeap<Region>) -> (Vec<f64>, Vec<f64>) {
    let mut regions: Vec<&Region> = heap.iter().collect();
    regions.sort_by_key(|r| r.seq);
    let d = regions[0].value.len();
    let mut value = vec![0.0; d];
    let mut error = vec![0.0; d];
    for r in regions {
        for j in 0..d {
            value[j] += r.value[j];
            error[j] += r.error[j];
        }
    }
    (value, error)
}

fn is_converged(value: &[f64], error: &[f64], opts: &QuadOptions) -> bool {
    value.iter().zip(error).all(|(&v, &e)| e <= opts.target(v))
}

// Gauss–Kronrod 15/7 abscissae and weights on [-1, 1] (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct GaussKronrod15;

impl Rule for GaussKronrod15 {
    fn nodes(&self, lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
        let c = 0.5 * (lo[0] + hi[0]);
        let h = 0.5 * (hi[0] - lo[0]);
        let mut pts = Vec::with_capacity(15);
        pts.push(vec![c]);
        for &x in &XGK[..7] {
            pts.push(vec![c - h * x]);
            pts.push(vec![c + h * x]);
        }
        pts
    }

    fn combine(&self, lo: &[f64], hi: &[f64], values: &[Vec<f64>]) -> RuleOutput {
        let h = 0.5 * (hi[0] - lo[0]);
        let d = values[0].len();
        let mut value = vec![0.0; d];
        let mut error = vec![0.0; d];
        for j in 0..d {
            let fc = values[0][j];
            let mut resk = WGK[7] * fc;
            let mut resg = WG[3] * fc;
            let mut resabs = resk.abs();
            for (i, &w) in WGK[..7].iter().enumerate() {
                let (f1, f2) = (values[1 + 2 * i][j], values[2 + 2 * i][j]);
                resk += w * (f1 + f2);
                resabs += w * (f1.abs() + f2.abs());
                if i % 2 == 1 {
                    resg += WG[i / 2] * (f1 + f2);
                }
            }
            let mean = 0.5 * resk;
            let mut resasc = WGK[7] * (fc - mean).abs();
            for (i, &w) in WGK[..7].iter().enumerate() {
                let (f1, f2) = (values[1 + 2 * i][j], values[2 + 2 * i][j]);
                resasc += w * ((f1 - mean).abs() + (f2 - mean).abs());
            }
            let (resk, resabs, resasc) = (resk * h, resabs * h.abs(), resasc * h.abs());
            let mut err = (resk - resg * h).abs();
            if resasc != 0.0 && err != 0.0 {
                err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
            }
            if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
                err = err.max(50.0 * f64::EPSILON * resabs);
            }
            value[j] = resk;
            error[j] = err;
        }
        RuleOutput {
            value,
            error,
            split_axis: 0,
        }
    }

    fn evals_per_region(&self) -> usize {
        15
    }
}

/// Adaptive Gauss–Kronrod integration of a vector-valued function on `[lo, hi]`.
pub fn integrate_1d<F>(f: F, lo: f64, hi: f64, opts: &QuadOptions) -> Result<QuadResult>
where
    F: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "integration interval must be finite with lo < hi, got [{lo}, {hi}]"
        )));
    }
    let g = |x: &[f64]| f(x[0]);
    adaptive(&GaussKronrod15, &g, vec![lo], vec![hi], opts)
}

// Genz–Malik generators on [-1, 1]^n.
const GM_L2: f64 = 0.358_568_582_800_318_1; // sqrt(9/70)
const GM_L4: f64 = 0.948_683_298_050_513_8; // sqrt(9/10)
const GM_L5: f64 = 0.688_247_201_611_685_3; // sqrt(9/19)
const GM_RATIO: f64 = (GM_L2 * GM_L2) / (GM_L4 * GM_L4);

/// Degree-7 Genz–Malik rule with embedded degree-5 estimate for `dim >= 2`.
#[derive(Debug, Clone, Copy)]
pub struct GenzMalik {
    dim: usize,
    w7: [f64; 5],
    w5: [f64; 4],
}

impl GenzMalik {
    pub fn new(dim: usize) -> Result<Self> {
        if !(2..=20).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "Genz–Malik rule needs 2 <= dim <= 20, got {dim}"
            )));
        }
        let n = dim as f64;
        let w7 = [
            (12824.0 - 9120.0 * n + 400.0 * n * n) / 19683.0,
            980.0 / 6561.0,
            (1820.0 - 400.0 * n) / 19683.0,
            200.0 / 19683.0,
            6859.0 / 19683.0 / 2f64.powi(dim as i32),
        ];
        let w5 = [
            (729.0 - 950.0 * n + 50.0 * n * n) / 729.0,
            245.0 / 486.0,
            (265.0 - 100.0 * n) / 1458.0,
            25.0 / 729.0,
        ];
        Ok(Self { dim, w7, w5 })
    }

    pub fn num_points(&self) -> usize {
        let n = self.dim;
        1 + 4 * n + 2 * n * (n - 1) + (1 << n)
    }

    /// Applies the rule once on `bx`, returning the degree-7 and degree-5
    /// estimates for a scalar integrand.
    pub fn apply_scalar(&self, bx: &SupportBox, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
        let nodes = self.nodes(bx.lo(), bx.hi());
        let values: Vec<Vec<f64>> = nodes.iter().map(|p| vec![f(p)]).collect();
        let (i7, i5, _) = self.estimates(bx.lo(), bx.hi(), &values);
        (i7[0], i5[0])
    }

    fn estimates(&self, lo: &[f64], hi: &[f64], values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, usize) {
        let n = self.dim;
        let d = values[0].len();
        let vol: f64 = lo.iter().zip(hi).map(|(l, h)| h - l).product();
        let half: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)).collect();
        let mut i7 = vec![0.0; d];
        let mut i5 = vec![0.0; d];
        let mut fourth = vec![0.0; n];
        for j in 0..d {
            let f0 = values[0][j];
            let mut s2 = 0.0;
            let mut s3 = 0.0;
            for i in 0..n {
                let base = 1 + 4 * i;
                let (a, b, c, e) = (
                    values[base][j],
                    values[base + 1][j],
                    values[base + 2][j],
                    values[base + 3][j],
                );
                s2 += a + b;
                s3 += c + e;
                fourth[i] += (a + b - 2.0 * f0 - GM_RATIO * (c + e - 2.0 * f0)).abs();
            }
            let off4 = 1 + 4 * n;
            let n4 = 2 * n * (n - 1);
            let s4: f64 = values[off4..off4 + n4].iter().map(|v| v[j]).sum();
            let s5: f64 = values[off4 + n4..].iter().map(|v| v[j]).sum();
            i7[j] = vol * (self.w7[0] * f0 + self.w7[1] * s2 + self.w7[2] * s3 + self.w7[3] * s4 + self.w7[4] * s5);
            i5[j] = vol * (self.w5[0] * f0 + self.w5[1] * s2 + self.w5[2] * s3 + self.w5[3] * s4);
        }
        (i7, i5, choose_axis(&fourth, &half))
    }
}

/// Largest fourth difference wins; near-ties (and the all-flat case) go to
/// the widest axis, then the lowest index.
fn choose_axis(fourth: &[f64], half: &[f64]) -> usize {
    let max = fourth.iter().copied().fold(0.0, f64::max);
    let cutoff = max * (1.0 - 1e-10);
    let mut best: Option<usize> = None;
    for i in 0..fourth.len() {
        if fourth[i] >= cutoff {
            best = match best {
                Some(b) if half[b] >= half[i] => Some(b),
                _ => Some(i),
            };
        }
    }
    best.unwrap_or(0)
}

impl Rule for GenzMalik {
    fn nodes(&self, lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
        let n = self.dim;
        let c: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let h: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l)).collect();
        let mut pts = Vec::with_capacity(self.num_points());
        pts.push(c.clone());
        for i in 0..n {
            for s in [-GM_L2, GM_L2, -GM_L4, GM_L4] {
                let mut p = c.clone();
                p[i] += s * h[i];
                pts.push(p);
            }
        }
        for i in 0..n {
            for k in (i + 1)..n {
                for (si, sk) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                    let mut p = c.clone();
                    p[i] += si * GM_L4 * h[i];
                    p[k] += sk * GM_L4 * h[k];
                    pts.push(p);
                }
            }
        }
        for mask in 0..(1usize << n) {
            let p = (0..n)
                .map(|i| {
                    let s = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
                    c[i] + s * GM_L5 * h[i]
                })
                .collect();
            pts.push(p);
        }
        pts
    }

    fn combine(&self, lo: &[f64], hi: &[f64], values: &[Vec<f64>]) -> RuleOutput {
        let (value, i5, split_axis) = self.estimates(lo, hi, values);
        let error = value.iter().zip(&i5).map(|(a, b)| (a - b).abs()).collect();
        RuleOutput {
            value,
            error,
            split_axis,
        }
    }

    fn evals_per_region(&self) -> usize {
        self.num_points()
    }
}

/// Adaptive cubature of a vector-valued function over a box. One-dimensional
/// boxes are handed to [`integrate_1d`].
pub fn integrate_nd<F>(f: F, bx: &SupportBox, opts: &QuadOptions) -> Result<QuadResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if bx.dim() == 1 {
        return integrate_1d(|x| f(&[x]), bx.lo()[0], bx.hi()[0], opts);
    }
    let rule = GenzMalik::new(bx.dim())?;
    adaptive(&rule, &f, bx.lo().to_vec(), bx.hi().to_vec(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(f: impl Fn(f64) -> f64 + Sync) -> impl Fn(f64) -> Result<Vec<f64>> + Sync {
        move |x| Ok(vec![f(x)])
    }

    #[test]
    fn constant_needs_one_rule_application() {
        let r = integrate_1d(scalar(|_| 1.0), 0.0, 1.0, &QuadOptions::new(1e-12, 1e-14)).unwrap();
        assert!((r.value[0] - 1.0).abs() < 1e-15);
        assert_eq!(r.evals, 15);
        assert!(r.converged);
    }

    #[test]
    fn quadratic_on_unit_interval() {
        let r = integrate_1d(scalar(|x| x * x), 0.0, 1.0, &QuadOptions::new(1e-13, 1e-15)).unwrap();
        assert!((r.value[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kink_is_resolved_by_bisection() {
        let r = integrate_1d(
            scalar(|x| (x - 1.0 / 3.0).abs()),
            0.0,
            1.0,
            &QuadOptions::new(1e-10, 1e-12),
        )
        .unwrap();
        assert!(r.converged);
        assert!((r.value[0] - 5.0 / 18.0).abs() < 1e-9);
        assert!(r.evals > 15);
    }

    #[test]
    fn vector_components_converge_together() {
        let r = integrate_1d(
            |x| Ok(vec![x, x.powi(5), (10.0 * x).sin()]),
            0.0,
            2.0,
            &QuadOptions::new(1e-10, 1e-12),
        )
        .unwrap();
        assert!((r.value[0] - 2.0).abs() < 1e-10);
        assert!((r.value[1] - 64.0 / 6.0).abs() < 1e-8);
        assert!((r.value[2] - (1.0 - 20f64.cos()) / 10.0).abs() < 1e-10);
        for (v, e) in r.value.iter().zip(&r.error) {
            assert!(*e <= 1e-12f64.max(1e-10 * v.abs()));
        }
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let opts = QuadOptions::new(1e-14, 0.0).with_max_evals(60);
        let r = integrate_1d(scalar(|x| x.sqrt()), 0.0, 1.0, &opts).unwrap();
        assert!(!r.converged);
        assert!(r.evals <= 60);
        assert!((r.value[0] - 2.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn bad_interval_and_tolerances_rejected() {
        assert!(integrate_1d(scalar(|x| x), 1.0, 0.0, &QuadOptions::default()).is_err());
        assert!(integrate_1d(scalar(|x| x), 0.0, f64::INFINITY, &QuadOptions::default()).is_err());
        assert!(integrate_1d(scalar(|x| x), 0.0, 1.0, &QuadOptions::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn integrand_failure_carries_point() {
        let f = |x: f64| {
            if x > 0.5 {
                Err(Error::NonFinite { t: x })
            } else {
                Ok(vec![x])
            }
        };
        match integrate_1d(f, 0.0, 1.0, &QuadOptions::default()) {
            Err(Error::Simulation { point, .. }) => assert!(point[0] > 0.5),
            other => panic!("expected simulation error, got {other:?}"),
        }
    }

    #[test]
    fn nd_constant_and_separable() {
        let r = integrate_nd(|_| Ok(vec![1.0]), &SupportBox::unit(2), &QuadOptions::default()).unwrap();
        assert!((r.value[0] - 1.0).abs() < 1e-15);
        let r = integrate_nd(
            |x| Ok(vec![x[0] * x[1] * x[2]]),
            &SupportBox::unit(3),
            &QuadOptions::new(1e-12, 1e-14),
        )
        .unwrap();
        assert!((r.value[0] - 0.125).abs() < 1e-10);
        assert_eq!(r.evals, GenzMalik::new(3).unwrap().num_points());
    }

    #[test]
    fn split_axis_prefers_rough_direction() {
        let gm = GenzMalik::new(2).unwrap();
        let bx = SupportBox::unit(2);
        let nodes = gm.nodes(bx.lo(), bx.hi());
        let values: Vec<Vec<f64>> = nodes.iter().map(|p| vec![(8.0 * p[1]).sin()]).collect();
        let (_, _, axis) = gm.estimates(bx.lo(), bx.hi(), &values);
        assert_eq!(axis, 1);
        // flat integrand: widest axis, lowest index on ties
        let flat: Vec<Vec<f64>> = nodes.iter().map(|_| vec![2.0]).collect();
        let wide = SupportBox::new(vec![0.0, 0.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(gm.estimates(wide.lo(), wide.hi(), &flat).2, 1);
        assert_eq!(gm.estimates(bx.lo(), bx.hi(), &flat).2, 0);
    }

    #[test]
    fn batch_eval_identity_preserves_order() {
        let pts = vec![vec![1.0], vec![2.0], vec![3.0]];
        let out = batch_eval(&|p: &[f64]| Ok(p.to_vec()), &pts).unwrap();
        assert_eq!(out, pts);
    }

    #[test]
    fn genz_malik_weights_sum_to_one() {
        for dim in 2..=10 {
            let gm = GenzMalik::new(dim).unwrap();
            let (i7, i5) = gm.apply_scalar(&SupportBox::unit(dim), |_| 1.0);
            assert!((i7 - 1.0).abs() < 1e-13, "dim {dim}: {i7}");
            assert!((i5 - 1.0).abs() < 1e-13, "dim {dim}: {i5}");
        }
    }
}
