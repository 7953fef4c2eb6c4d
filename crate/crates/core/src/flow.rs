//! Piecewise representations of departure rates and cumulative counts.
//!
//! Departure rates are piecewise constant and cumulative vehicle counts
//! are piecewise linear, so every integral and norm used by the loader
//! and the solvers has a closed form on a merged breakpoint grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Network;

/// Absolute tolerance for merging nearly coincident breakpoints.
pub const TIME_EPS: f64 = 1e-12;

/// Planning horizon `[t0, tf]` plus extra loading time past `tf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeHorizon {
    pub t0: f64,
    pub tf: f64,
    #[serde(default)]
    pub slack: f64,
}

impl TimeHorizon {
    pub fn new(t0: f64, tf: f64, slack: f64) -> Result<Self> {
        if !(t0 < tf) {
            return Err(Error::InvalidHorizon(format!("t0 = {t0} must precede tf = {tf}")));
        }
        if !(slack >= 0.0) {
            return Err(Error::InvalidHorizon(format!("slack = {slack} must be nonnegative")));
        }
        Ok(Self { t0, tf, slack })
    }

    pub fn span(&self) -> f64 {
        self.tf - self.t0
    }

    pub fn loading_end(&self) -> f64 {
        self.tf + self.slack
    }
}

/// A piecewise-constant function of time, zero outside its support.
///
/// `breaks` is strictly increasing and `rates[i]` is the value on
/// `[breaks[i], breaks[i+1])`. An empty function is the zero function.
/// Rates may be negative: perturbation directions share this type with
/// nonnegative departure-rate profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepFunctionRepr", into = "StepFunctionRepr")]
pub struct StepFunction {
    breaks: Vec<f64>,
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StepFunctionRepr {
    breakpoints: Vec<f64>,
    rates: Vec<f64>,
}

impl TryFrom<StepFunctionRepr> for StepFunction {
    type Error = Error;
    fn try_from(r: StepFunctionRepr) -> Result<Self> {
        StepFunction::new(r.breakpoints, r.rates)
    }
}

impl From<StepFunction> for StepFunctionRepr {
    fn from(f: StepFunction) -> Self {
        Self { breakpoints: f.breaks, rates: f.rates }
    }
}

impl StepFunction {
    /// Builds a step function, merging duplicate breakpoints and equal
    /// adjacent rates. `rates.len()` must be `breaks.len() - 1` (both may
    /// be empty for the zero function).
    pub fn new(breaks: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if breaks.is_empty() && rates.is_empty() {
            return Ok(Self::zero());
        }
        if breaks.len() != rates.len() + 1 {
            return Err(Error::InvalidFlow(format!(
                "expected {} rates for {} breakpoints, got {}",
                breaks.len().saturating_sub(1),
                breaks.len(),
                rates.len()
            )));
        }
        for w in breaks.windows(2) {
            if w[1] < w[0] - TIME_EPS {
                return Err(Error::InvalidFlow(format!(
                    "breakpoints must be nondecreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if breaks.iter().chain(rates.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidFlow("breakpoints and rates must be finite".into()));
        }
        let mut out = Self { breaks: Vec::new(), rates: Vec::new() };
        for i in 0..rates.len() {
            out.push_piece(breaks[i], breaks[i + 1], rates[i]);
        }
        if out.breaks.len() < 2 {
            return Ok(Self::zero());
        }
        Ok(out)
    }

    pub fn zero() -> Self {
        Self { breaks: Vec::new(), rates: Vec::new() }
    }

    /// Constant rate on `[from, to)`.
    pub fn constant(rate: f64, from: f64, to: f64) -> Result<Self> {
        Self::new(vec![from, to], vec![rate])
    }

    /// Appends one piece; callers feed contiguous pieces in time order.
    /// Zero-length pieces are dropped and equal-rate neighbors merged.
    fn push_piece(&mut self, from: f64, to: f64, rate: f64) {
        if to - from <= TIME_EPS {
            return;
        }
        match self.breaks.last().copied() {
            None => self.breaks.push(from),
            Some(last) => {
                debug_assert!((from - last).abs() <= TIME_EPS, "pieces must be contiguous");
                if self.rates.last() == Some(&rate) {
                    *self.breaks.last_mut().unwrap() = to;
                    return;
                }
            }
        }
        self.breaks.push(to);
        self.rates.push(rate);
    }

    pub fn is_zero(&self) -> bool {
        self.rates.iter().all(|&r| r == 0.0)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        if self.breaks.is_empty() {
            None
        } else {
            Some((self.breaks[0], *self.breaks.last().unwrap()))
        }
    }

    /// Value at `t`; pieces are right-continuous and the function is zero
    /// outside the support.
    pub fn value_at(&self, t: f64) -> f64 {
        if self.breaks.is_empty() || t < self.breaks[0] || t >= *self.breaks.last().unwrap() {
            return 0.0;
        }
        let i = match self.breaks.binary_search_by(|b| b.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        self.rates[i.min(self.rates.len() - 1)]
    }

    /// Total signed volume `∫ f dt`.
    pub fn volume(&self) -> f64 {
        self.rates
            .iter()
            .zip(self.breaks.windows(2))
            .map(|(r, w)| r * (w[1] - w[0]))
            .sum()
    }

    /// Signed volume over `[from, to]`.
    pub fn volume_between(&self, from: f64, to: f64) -> f64 {
        let mut acc = 0.0;
        for (i, r) in self.rates.iter().enumerate() {
            let lo = self.breaks[i].max(from);
            let hi = self.breaks[i + 1].min(to);
            if hi > lo {
                acc += r * (hi - lo);
            }
        }
        acc
    }

    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::min)
    }

    pub fn max_abs_rate(&self) -> f64 {
        self.rates.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Pointwise combination on the merged breakpoint grid.
    pub fn combine(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let grid = merge_breakpoints(&self.breaks, &other.breaks);
        if grid.len() < 2 {
            let v = f(0.0, 0.0);
            debug_assert_eq!(v, 0.0);
            return Self::zero();
        }
        let mut out = Self { breaks: Vec::new(), rates: Vec::new() };
        for w in grid.windows(2) {
            let rate = f(self.value_at(w[0]), other.value_at(w[0]));
            out.push_piece(w[0], w[1], rate);
        }
        if out.breaks.len() < 2 {
            return Self::zero();
        }
        out
    }

    /// `self + c * other`, exact on the merged grid.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Self {
        self.combine(other, |a, b| a + c * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            breaks: self.breaks.clone(),
            rates: self.rates.iter().map(|r| c * r).collect(),
        }
    }

    /// Clamp negative rates to zero. The flag reports whether anything
    /// was clipped.
    pub fn clip_nonnegative(&self) -> (Self, bool) {
        let clipped = self.rates.iter().any(|&r| r < 0.0);
        let out = Self {
            breaks: self.breaks.clone(),
            rates: self.rates.iter().map(|r| r.max(0.0)).collect(),
        };
        (out, clipped)
    }

    /// Translate the support by `dt`.
    pub fn shift(&self, dt: f64) -> Self {
        Self {
            breaks: self.breaks.iter().map(|b| b + dt).collect(),
            rates: self.rates.clone(),
        }
    }

    /// Exact `∫ (self - other)^2 dt` on the merged grid.
    pub fn l2_sq_diff(&self, other: &Self) -> f64 {
        let grid = merge_breakpoints(&self.breaks, &other.breaks);
        let mut acc = 0.0;
        for w in grid.windows(2) {
            let d = self.value_at(w[0]) - other.value_at(w[0]);
            acc += d * d * (w[1] - w[0]);
        }
        acc
    }
}

/// Sorted union of two breakpoint lists with `TIME_EPS` deduplication.
pub fn merge_breakpoints(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    dedup_times(all)
}

fn dedup_times(mut ts: Vec<f64>) -> Vec<f64> {
    ts.dedup_by(|next, kept| (*next - *kept).abs() <= TIME_EPS);
    ts
}

/// A vector of per-path departure-rate profiles.
///
/// Nonnegativity and the support constraint `h_p ≡ 0` outside
/// `[t0, tf]` are checked by [`PathFlowVector::validate`] rather than at
/// construction, because perturbation directions reuse this shape with
/// signed rates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathFlowRepr", into = "PathFlowRepr")]
pub struct PathFlowVector {
    flows: BTreeMap<String, StepFunction>,
}

#[derive(Serialize, Deserialize)]
struct PathFlowRepr {
    flows: Vec<PathFlowEntry>,
}

#[derive(Serialize, Deserialize)]
struct PathFlowEntry {
    path: String,
    breakpoints: Vec<f64>,
    rates: Vec<f64>,
}

impl TryFrom<PathFlowRepr> for PathFlowVector {
    type Error = Error;
    fn try_from(r: PathFlowRepr) -> Result<Self> {
        let mut flows = BTreeMap::new();
        for e in r.flows {
            if flows.contains_key(&e.path) {
                return Err(Error::InvalidFlow(format!("duplicate flow entry for path `{}`", e.path)));
            }
            flows.insert(e.path, StepFunction::new(e.breakpoints, e.rates)?);
        }
        Ok(Self { flows })
    }
}

impl From<PathFlowVector> for PathFlowRepr {
    fn from(v: PathFlowVector) -> Self {
        Self {
            flows: v
                .flows
                .into_iter()
                .map(|(path, f)| PathFlowEntry {
                    path,
                    breakpoints: f.breaks,
                    rates: f.rates,
                })
                .collect(),
        }
    }
}

impl PathFlowVector {
    pub fn new(flows: BTreeMap<String, StepFunction>) -> Self {
        Self { flows }
    }

    pub fn empty() -> Self {
        Self { flows: BTreeMap::new() }
    }

    pub fn insert(&mut self, path: impl Into<String>, f: StepFunction) {
        self.flows.insert(path.into(), f);
    }

    pub fn get(&self, path: &str) -> Option<&StepFunction> {
        self.flows.get(path)
    }

    /// The zero function for paths without an entry.
    pub fn component(&self, path: &str) -> StepFunction {
        self.flows.get(path).cloned().unwrap_or_else(StepFunction::zero)
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.flows.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &StepFunction)> {
        self.flows.iter()
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    /// Checks nonnegativity and support within the horizon.
    pub fn validate(&self, horizon: &TimeHorizon) -> Result<()> {
        for (path, f) in &self.flows {
            if f.min_rate() < 0.0 {
                return Err(Error::InvalidFlow(format!("path `{path}` has a negative departure rate")));
            }
            if let Some((lo, hi)) = f.support() {
                if f.volume_between(f.breakpoints()[0], horizon.t0) > 0.0
                    || f.volume_between(horizon.tf, *f.breakpoints().last().unwrap()) > 0.0
                {
                    return Err(Error::InvalidFlow(format!(
                        "path `{path}` departs outside the horizon [{}, {}] (support [{lo}, {hi}])",
                        horizon.t0, horizon.tf
                    )));
                }
            }
        }
        Ok(())
    }

    /// `self + c * other` per path, over the union of path sets.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Self {
        let mut flows = self.flows.clone();
        for (path, g) in &other.flows {
            let base = flows.remove(path).unwrap_or_else(StepFunction::zero);
            flows.insert(path.clone(), base.add_scaled(g, c));
        }
        Self { flows }
    }

    pub fn volume(&self, path: &str) -> f64 {
        self.flows.get(path).map_or(0.0, StepFunction::volume)
    }

    pub fn total_volume(&self) -> f64 {
        self.flows.values().map(StepFunction::volume).sum()
    }
}

/// `L²` distance between two path flow vectors with identical path sets.
pub fn l2_distance(h: &PathFlowVector, g: &PathFlowVector) -> Result<f64> {
    if !h.flows.keys().eq(g.flows.keys()) {
        let hs: Vec<_> = h.flows.keys().cloned().collect();
        let gs: Vec<_> = g.flows.keys().cloned().collect();
        return Err(Error::MismatchedPaths(format!("{hs:?} vs {gs:?}")));
    }
    let sq: f64 = h
        .flows
        .iter()
        .map(|(path, f)| f.l2_sq_diff(&g.flows[path]))
        .sum();
    Ok(sq.sqrt())
}

/// Max absolute difference of two functions sampled on a common grid.
pub fn sup_distance(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.is_empty() || g.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if f.len() != g.len() {
        return Err(Error::InvalidFlow(format!(
            "sampled functions have different grid lengths: {} vs {}",
            f.len(),
            g.len()
        )));
    }
    Ok(f.iter().zip(g).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// A continuous nondecreasing piecewise-linear count of vehicles.
///
/// The curve extends as a constant beyond its first and last knot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulativeCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl CumulativeCurve {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::InvalidCurve(format!(
                "need equal nonzero knot counts, got {} xs and {} ys",
                xs.len(),
                ys.len()
            )));
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidCurve(format!(
                    "knot times must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for w in ys.windows(2) {
            if w[1] < w[0] {
                return Err(Error::InvalidCurve(format!(
                    "counts must be nondecreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { xs, ys })
    }

    pub fn constant(t: f64, value: f64) -> Self {
        Self { xs: vec![t], ys: vec![value] }
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.xs
    }

    pub fn first_time(&self) -> f64 {
        self.xs[0]
    }

    pub fn last_time(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    /// Final count (value of the constant right extension).
    pub fn total(&self) -> f64 {
        *self.ys.last().unwrap()
    }

    /// Exact piecewise-linear evaluation with constant extension.
    pub fn eval(&self, t: f64) -> f64 {
        eval_pl(&self.xs, &self.ys, t)
    }

    /// Pointwise sum on the merged knot grid.
    pub fn add(&self, other: &Self) -> Self {
        let grid = merge_breakpoints(&self.xs, &other.xs);
        let ys = grid.iter().map(|&t| self.eval(t) + other.eval(t)).collect();
        Self { xs: grid, ys }
    }
}

/// Linear interpolation over knot arrays with constant extension.
pub(crate) fn eval_pl(xs: &[f64], ys: &[f64], t: f64) -> f64 {
    match xs.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => ys[i],
        Err(0) => ys[0],
        Err(i) if i == xs.len() => ys[i - 1],
        Err(i) => {
            let (x0, x1) = (xs[i - 1], xs[i]);
            let (y0, y1) = (ys[i - 1], ys[i]);
            y0 + (y1 - y0) * ((t - x0) / (x1 - x0))
        }
    }
}

/// Integral `H_p(t) = ∫_{t0}^t h_p(s) ds` as a cumulative curve on the
/// horizon. The input must be supported within `[t0, tf]` and
/// nonnegative.
pub fn cumulate(h: &StepFunction, horizon: &TimeHorizon) -> Result<CumulativeCurve> {
    if h.min_rate() < 0.0 {
        return Err(Error::InvalidFlow("cannot cumulate a signed rate profile".into()));
    }
    let mut xs = vec![horizon.t0];
    let mut ys = vec![0.0];
    for (i, w) in h.breakpoints().windows(2).enumerate() {
        let rate = h.rates()[i];
        if rate != 0.0 && w[0] < horizon.t0 - TIME_EPS {
            return Err(Error::InvalidFlow(format!(
                "rate profile starts at {} before the horizon start {}",
                w[0], horizon.t0
            )));
        }
        let lo = w[0].max(horizon.t0);
        let hi = w[1];
        if hi <= lo + TIME_EPS {
            continue;
        }
        if lo > *xs.last().unwrap() + TIME_EPS {
            // zero-rate stretch before this piece
            xs.push(lo);
            ys.push(*ys.last().unwrap());
        }
        let y = *ys.last().unwrap() + rate * (hi - *xs.last().unwrap());
        xs.push(hi);
        ys.push(y);
    }
    if *xs.last().unwrap() < horizon.tf - TIME_EPS {
        xs.push(horizon.tf);
        ys.push(*ys.last().unwrap());
    }
    CumulativeCurve::new(xs, ys)
}

/// Per-OD volume conservation check against the trip table.
#[derive(Clone, Debug, Default)]
pub struct FeasibilityReport {
    pub violations: Vec<String>,
    pub max_volume_error: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `Σ_{p ∈ P_ij} ∫ h_p = Q_ij` to relative tolerance `tol`, plus
/// nonnegativity of every rate.
pub fn check_feasibility(h: &PathFlowVector, net: &Network, tol: f64) -> FeasibilityReport {
    let mut report = FeasibilityReport::default();
    for (path, f) in h.iter() {
        if f.min_rate() < 0.0 {
            report
                .violations
                .push(format!("path `{path}` has negative departure rate {}", f.min_rate()));
        }
    }
    for (od, &q) in net.trips().entries() {
        let vol: f64 = net
            .paths_for_od(od)
            .map(|p| h.volume(&p.id))
            .sum();
        let err = (vol - q).abs();
        report.max_volume_error = report.max_volume_error.max(err);
        if err > tol * q.max(1.0) {
            report.violations.push(format!(
                "od ({}, {}): path volume {vol} differs from demand {q} by {err}",
                od.0, od.1
            ));
        }
    }
    report
}
