//! The dynamic network loading core.
//!
//! Each arc is loaded exactly: with piecewise-constant departure rates
//! every cumulative curve is piecewise linear, the exit time function
//! `τ(t) = t + α·X(t) + β` is piecewise linear, and the exit curve is the
//! composition `V = U ∘ τ⁻¹`. The loader marches the computation frontier
//! forward in steps bounded by the free-flow delay: exits at time `s`
//! depend on entries no later than `s - β`, so each step only reads state
//! that earlier steps finalized.
//!
//! Network propagation runs in time windows of half the minimum
//! free-flow delay; within one window every arc's entries are fully
//! determined by exit curves computed in earlier windows, which makes the
//! sweep correct on any topology, including cyclic ones.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::flow::{
    cumulate, eval_pl, merge_breakpoints, CumulativeCurve, PathFlowVector, TimeHorizon, TIME_EPS,
};
use crate::net::{Arc, Network};

/// One path traversal of an arc: the path id and the leg index within
/// the path. The leg index keeps commodities distinct when a path
/// traverses the same arc more than once.
pub type CommodityKey = (String, usize);

/// Smallest free-flow delay the loader accepts; below this the marching
/// step collapses into the breakpoint dedup tolerance.
pub const MIN_BETA: f64 = 1e-9;

/// Absolute tolerance for drain detection and commodity consistency.
pub const MASS_TOL: f64 = 1e-9;

/// A strictly increasing piecewise-linear map from entry time to exit
/// time. Left of the first knot the map extends with unit slope (an
/// empty arc delays by exactly `β`); right of the last knot it extends
/// with unit slope only when the loading ran to completion.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitTimeFn {
    xs: Vec<f64>,
    ys: Vec<f64>,
    complete: bool,
}

impl ExitTimeFn {
    /// Builds from knots with strictly increasing entry times. Exit
    /// values are not checked for monotonicity here; the monotonicity
    /// audit is the detector for corrupted maps.
    pub fn from_knots(knots: Vec<(f64, f64)>, complete: bool) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidCurve("exit time function needs at least one knot".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidCurve(format!(
                    "entry times must be strictly increasing, got {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        let (xs, ys) = knots.into_iter().unzip();
        Ok(Self { xs, ys, complete })
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    pub fn first_entry(&self) -> f64 {
        self.xs[0]
    }

    pub fn last_entry(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// Exit time for an entry at `t`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if t < self.xs[0] {
            return Ok(self.ys[0] + (t - self.xs[0]));
        }
        if t > *self.xs.last().unwrap() {
            if self.complete {
                return Ok(self.ys.last().unwrap() + (t - self.xs.last().unwrap()));
            }
            return Err(Error::HorizonExhausted { needed: t, available: *self.xs.last().unwrap() });
        }
        Ok(eval_pl(&self.xs, &self.ys, t))
    }

    /// Entry time whose exit time is `s`; exact for piecewise-linear
    /// maps and strictly increasing in `s`.
    pub fn invert(&self, s: f64) -> Result<f64> {
        if s < self.ys[0] {
            return Ok(self.xs[0] + (s - self.ys[0]));
        }
        let last = *self.ys.last().unwrap();
        if s > last {
            if self.complete {
                return Ok(self.xs.last().unwrap() + (s - last));
            }
            return Err(Error::HorizonExhausted { needed: s, available: last });
        }
        let i = self.ys.partition_point(|&y| y < s);
        if i < self.ys.len() && self.ys[i] == s {
            return Ok(self.xs[i]);
        }
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let (y0, y1) = (self.ys[i - 1], self.ys[i]);
        assert!(y1 > y0, "exit time function is not strictly increasing at knot {i}");
        Ok(x0 + (s - y0) * (x1 - x0) / (y1 - y0))
    }

    /// Minimum segment slope; positive for a valid map.
    pub fn min_slope(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Loaded state of one arc.
#[derive(Clone, Debug)]
pub struct ArcState {
    pub arc: String,
    pub alpha: f64,
    pub beta: f64,
    pub entry: CumulativeCurve,
    pub exit: CumulativeCurve,
    pub tau: ExitTimeFn,
    pub commodity_entry: BTreeMap<CommodityKey, CumulativeCurve>,
    pub commodity_exit: BTreeMap<CommodityKey, CumulativeCurve>,
}

impl ArcState {
    /// Arc volume `X(t) = U(t) - V(t)`.
    pub fn volume_at(&self, t: f64) -> f64 {
        (self.entry.eval(t) - self.exit.eval(t)).max(0.0)
    }
}

/// Recomputes the per-commodity exit curves of `state` from its
/// commodity entries and exit time function, using the FIFO rule
/// `V_a^p = U_a^p ∘ τ_a⁻¹`. Errors if the commodity entries do not sum
/// to the aggregate entry curve.
pub fn split_commodities(state: &ArcState) -> Result<ArcState> {
    let mut grid: Vec<f64> = state.entry.knot_times().to_vec();
    for c in state.commodity_entry.values() {
        grid = merge_breakpoints(&grid, c.knot_times());
    }
    for &t in &grid {
        let total: f64 = state.commodity_entry.values().map(|c| c.eval(t)).sum();
        let want = state.entry.eval(t);
        if (total - want).abs() > MASS_TOL {
            return Err(Error::InvalidCurve(format!(
                "commodity entries sum to {total} at t = {t}, aggregate entry is {want}"
            )));
        }
    }
    let mut commodity_exit = BTreeMap::new();
    for (key, entry) in &state.commodity_entry {
        commodity_exit.insert(key.clone(), compose_exit(entry, &state.tau)?);
    }
    Ok(ArcState { commodity_exit, ..state.clone() })
}

/// `V(s) = U(τ⁻¹(s))` as an explicit piecewise-linear curve: knots at
/// the images under `τ` of both operands' knots.
fn compose_exit(entry: &CumulativeCurve, tau: &ExitTimeFn) -> Result<CumulativeCurve> {
    let t0 = tau.first_entry();
    let mut xs: Vec<f64> = entry
        .knot_times()
        .iter()
        .copied()
        .filter(|&x| x > t0 + TIME_EPS && x <= tau.last_entry() + TIME_EPS)
        .collect();
    xs = merge_breakpoints(&xs, &tau.xs);
    let mut knots = vec![(t0, entry.eval(t0))];
    for x in xs {
        let s = tau.eval(x)?;
        let v = entry.eval(x);
        if s > knots.last().unwrap().0 + TIME_EPS {
            knots.push((s, v));
        }
    }
    let (ks, mut vs): (Vec<f64>, Vec<f64>) = knots.into_iter().unzip();
    clamp_nondecreasing(&mut vs);
    CumulativeCurve::new(ks, vs)
}

/// Result of loading a whole network.
#[derive(Clone, Debug)]
pub struct LoadingResult {
    pub arcs: BTreeMap<String, ArcState>,
    pub horizon: TimeHorizon,
    /// Time by which loading stopped: all volume discharged, or the
    /// (possibly extended) loading cap when truncated.
    pub end_time: f64,
    pub truncated: bool,
    /// Residual volume per arc, nonempty only for truncated results.
    pub residual: BTreeMap<String, f64>,
}

impl LoadingResult {
    pub fn arc_state(&self, id: &str) -> Result<&ArcState> {
        self.arcs.get(id).ok_or_else(|| Error::UnknownArc(id.to_string()))
    }

    /// Exit time of the whole path for a departure at `t`: the
    /// composition of the arc exit time functions along the path.
    pub fn path_exit_time(&self, net: &Network, path_id: &str, t: f64) -> Result<f64> {
        let path = net.path(path_id)?;
        let mut time = t;
        for arc_id in &path.arcs {
            time = self.arc_state(arc_id)?.tau.eval(time)?;
        }
        Ok(time)
    }

    /// Path travel time `D_p(t, h)`.
    pub fn path_delay(&self, net: &Network, path_id: &str, t: f64) -> Result<f64> {
        Ok(self.path_exit_time(net, path_id, t)? - t)
    }
}

/// Knobs for the loading run that are not part of the scenario horizon.
#[derive(Clone, Copy, Debug)]
pub struct LoaderConfig {
    /// How many times the loading window past `tf` may double before the
    /// run is flagged truncated.
    pub extension_doublings: u32,
}

impl Default for LoaderConfig {
    fn default() -> Self {
        Self { extension_doublings: 6 }
    }
}

/// Loads a single arc from its aggregate entry curve. Returns the exit
/// time function and the exit curve, computed up to `tf + slack`.
pub fn load_arc(
    arc: &Arc,
    entry: &CumulativeCurve,
    horizon: &TimeHorizon,
) -> Result<(ExitTimeFn, CumulativeCurve)> {
    validate_arc_params(arc)?;
    if entry.eval(horizon.t0).abs() > 0.0 {
        return Err(Error::InvalidCurve(format!(
            "entry curve must start at zero, got {} at t0 = {}",
            entry.eval(horizon.t0),
            horizon.t0
        )));
    }
    let end = horizon.loading_end().max(horizon.tf);
    let mut loader = ArcLoader::new(&arc.id, arc.alpha, arc.beta, horizon.t0);
    let knots: Vec<(f64, f64)> = entry
        .knots()
        .filter(|&(x, _)| x > horizon.t0 + TIME_EPS && x < end - TIME_EPS)
        .collect();
    for (x, y) in knots {
        loader.entry.push(x, y);
    }
    loader.entry.push(end, entry.eval(end));
    loader.entry_frontier = end;
    loader.advance(end)?;
    let drained = loader.residual() <= MASS_TOL * loader.entry.last_y().abs().max(1.0);
    let state = loader.finalize(drained)?;
    Ok((state.tau, state.exit))
}

fn validate_arc_params(arc: &Arc) -> Result<()> {
    if !(arc.alpha >= 0.0) {
        return Err(Error::InvalidArc {
            id: arc.id.clone(),
            reason: format!("alpha must be nonnegative, got {}", arc.alpha),
        });
    }
    if !(arc.beta > 0.0) {
        return Err(Error::InvalidArc {
            id: arc.id.clone(),
            reason: format!("beta must be strictly positive, got {}", arc.beta),
        });
    }
    if arc.beta < MIN_BETA {
        return Err(Error::InvalidArc {
            id: arc.id.clone(),
            reason: format!("beta = {} is below the loader resolution {MIN_BETA}", arc.beta),
        });
    }
    Ok(())
}

/// Loads the network under path flow vector `h` with the default
/// configuration.
pub fn load_network(net: &Network, h: &PathFlowVector, horizon: &TimeHorizon) -> Result<LoadingResult> {
    load_network_with(net, h, horizon, &LoaderConfig::default())
}

/// Loads the network: every arc's entries are the path departures that
/// start on it plus the commodity exits of the immediately upstream
/// arcs, propagated in time windows of half the minimum free-flow
/// delay. Loading continues past `tf` until all departed volume has
/// exited, doubling the extension up to the configured cap; a run that
/// still holds volume at the cap is flagged truncated.
pub fn load_network_with(
    net: &Network,
    h: &PathFlowVector,
    horizon: &TimeHorizon,
    config: &LoaderConfig,
) -> Result<LoadingResult> {
    let report = net.validate();
    if !report.is_valid() {
        return Err(Error::InvalidNetwork(report.violations.join("; ")));
    }
    for arc in &net.arcs {
        validate_arc_params(arc)?;
    }
    h.validate(horizon)?;
    for path_id in h.paths() {
        net.path(path_id)?;
    }

    let t0 = horizon.t0;
    // cumulative departures per path
    let mut departures: BTreeMap<&str, CumulativeCurve> = BTreeMap::new();
    for path in &net.paths {
        departures.insert(&path.id, cumulate(&h.component(&path.id), horizon)?);
    }

    // per-arc loaders and commodity feed descriptions
    let mut loaders: BTreeMap<&str, ArcLoader> = BTreeMap::new();
    for arc in &net.arcs {
        loaders.insert(&arc.id, ArcLoader::new(&arc.id, arc.alpha, arc.beta, t0));
    }
    let mut feeds: BTreeMap<&str, Vec<(CommodityKey, Feed)>> = BTreeMap::new();
    for path in &net.paths {
        for (leg, arc_id) in path.arcs.iter().enumerate() {
            let feed = if leg == 0 {
                Feed::Origin(path.id.clone())
            } else {
                Feed::Upstream(path.arcs[leg - 1].clone(), (path.id.clone(), leg - 1))
            };
            feeds.entry(arc_id.as_str()).or_default().push(((path.id.clone(), leg), feed));
            loaders.get_mut(arc_id.as_str()).unwrap().add_commodity((path.id.clone(), leg));
        }
    }

    let window = net.min_beta() / 2.0;
    let total_volume = h.total_volume();
    let drain_tol = MASS_TOL * total_volume.max(1.0);
    let extension_base = horizon.slack.max(3.0 * net.beta_sum()).max(window);
    let mut end = horizon.loading_end();
    let mut doublings = 0u32;
    let mut now = t0;
    let truncated = loop {
        if now >= horizon.tf - TIME_EPS && loaders.values().all(|l| l.residual() <= drain_tol) {
            break false;
        }
        if now >= end - TIME_EPS {
            if doublings < config.extension_doublings {
                end += extension_base * f64::powi(2.0, doublings as i32);
                doublings += 1;
            } else {
                break true;
            }
        }
        let next = (now + window).min(end);

        // phase one: slice every arc's inflows on (now, next] while all
        // loaders are read-only
        let eval_feed = |feed: &Feed, x: f64| -> f64 {
            match feed {
                Feed::Origin(path) => departures[path.as_str()].eval(x),
                Feed::Upstream(up, up_key) => loaders[up.as_str()].commodity_exit[up_key].eval(x),
            }
        };
        let mut plans: Vec<(&str, Vec<(CommodityKey, Vec<(f64, f64)>)>)> = Vec::new();
        for arc in &net.arcs {
            let list = feeds.get(arc.id.as_str());
            // union grid over the arc's commodities, so commodity knots
            // stay a subset of aggregate knots
            let mut grid: Vec<f64> = vec![next];
            if let Some(list) = list {
                for (_, feed) in list {
                    let xs = match feed {
                        Feed::Origin(path) => knots_in(departures[path.as_str()].knot_times(), now, next),
                        Feed::Upstream(up, up_key) => {
                            knots_in(&loaders[up.as_str()].commodity_exit[up_key].xs, now, next)
                        }
                    };
                    grid = merge_breakpoints(&grid, &xs);
                }
            }
            let mut evaluated: Vec<(CommodityKey, Vec<(f64, f64)>)> = Vec::new();
            if let Some(list) = list {
                for (key, feed) in list {
                    let values: Vec<(f64, f64)> =
                        grid.iter().map(|&x| (x, eval_feed(feed, x))).collect();
                    evaluated.push((key.clone(), values));
                }
            }
            plans.push((arc.id.as_str(), evaluated));
        }

        // phase two: append and advance every arc to `next`
        for (arc_id, slices) in plans {
            let loader = loaders.get_mut(arc_id).unwrap();
            loader.append_window(&slices, next);
            loader.advance(next)?;
        }
        now = next;
    };

    let end_time = now;
    let mut arcs = BTreeMap::new();
    let mut residual = BTreeMap::new();
    for (id, loader) in loaders {
        if truncated {
            let r = loader.residual();
            if r > drain_tol {
                residual.insert(id.to_string(), r);
            }
        }
        arcs.insert(id.to_string(), loader.finalize(!truncated)?);
    }
    Ok(LoadingResult { arcs, horizon: *horizon, end_time, truncated, residual })
}

enum Feed {
    /// Path departures enter here (first leg).
    Origin(String),
    /// Commodity exits of the upstream arc enter here.
    Upstream(String, CommodityKey),
}

/// Knot times strictly inside `(lo, hi)`.
fn knots_in(xs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let a = xs.partition_point(|&x| x <= lo + TIME_EPS);
    let b = xs.partition_point(|&x| x < hi - TIME_EPS);
    xs[a..b.max(a)].to_vec()
}

fn clamp_nondecreasing(ys: &mut [f64]) {
    for i in 1..ys.len() {
        if ys[i] < ys[i - 1] {
            ys[i] = ys[i - 1];
        }
    }
}

/// Incremental knot list with breakpoint dedup and collinear merging.
#[derive(Clone, Debug)]
struct KnotList {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl KnotList {
    fn start(x: f64, y: f64) -> Self {
        Self { xs: vec![x], ys: vec![y] }
    }

    fn push(&mut self, x: f64, y: f64) {
        let last = *self.xs.last().unwrap();
        if x <= last + TIME_EPS {
            return;
        }
        self.xs.push(x);
        self.ys.push(y);
        let n = self.xs.len();
        if n >= 3 {
            // drop the middle knot when it lies on the chord of its
            // neighbors
            let t = (self.xs[n - 2] - self.xs[n - 3]) / (self.xs[n - 1] - self.xs[n - 3]);
            let pred = self.ys[n - 3] + t * (self.ys[n - 1] - self.ys[n - 3]);
            if (pred - self.ys[n - 2]).abs() <= 1e-12 * self.ys[n - 2].abs().max(1.0) {
                self.xs.remove(n - 2);
                self.ys.remove(n - 2);
            }
        }
    }

    fn eval(&self, x: f64) -> f64 {
        debug_assert!(x <= self.xs.last().unwrap() + TIME_EPS, "evaluation past frontier");
        eval_pl(&self.xs, &self.ys, x)
    }

    fn last_y(&self) -> f64 {
        *self.ys.last().unwrap()
    }
}

/// Per-arc incremental loading state.
struct ArcLoader {
    arc_id: String,
    alpha: f64,
    beta: f64,
    entry: KnotList,
    commodity_entry: BTreeMap<CommodityKey, KnotList>,
    /// Exit time knots `(t, τ(t))`, finalized for `t ≤ tau_frontier`.
    tau: KnotList,
    /// Exit counts `(s, V(s))`, finalized for `s ≤ exit_frontier`.
    exit: KnotList,
    commodity_exit: BTreeMap<CommodityKey, KnotList>,
    entry_frontier: f64,
    tau_frontier: f64,
    exit_frontier: f64,
    t0: f64,
}

impl ArcLoader {
    fn new(arc_id: &str, alpha: f64, beta: f64, t0: f64) -> Self {
        let mut exit = KnotList::start(t0, 0.0);
        exit.push(t0 + beta, 0.0);
        Self {
            arc_id: arc_id.to_string(),
            alpha,
            beta,
            entry: KnotList::start(t0, 0.0),
            commodity_entry: BTreeMap::new(),
            tau: KnotList::start(t0, t0 + beta),
            exit,
            commodity_exit: BTreeMap::new(),
            entry_frontier: t0,
            tau_frontier: t0,
            exit_frontier: t0 + beta,
            t0,
        }
    }

    fn add_commodity(&mut self, key: CommodityKey) {
        let mut exit = KnotList::start(self.t0, 0.0);
        exit.push(self.t0 + self.beta, 0.0);
        self.commodity_entry.entry(key.clone()).or_insert_with(|| KnotList::start(self.t0, 0.0));
        self.commodity_exit.entry(key).or_insert(exit);
    }

    /// In-network volume `X` at the entry frontier.
    fn residual(&self) -> f64 {
        (self.entry.last_y() - self.exit.eval(self.entry_frontier.min(self.exit_frontier))).max(0.0)
    }

    /// Appends one window of entry knots. `slices` carries, per
    /// commodity, the evaluated `(time, count)` knots on a shared grid
    /// whose last point is `next`.
    fn append_window(&mut self, slices: &[(CommodityKey, Vec<(f64, f64)>)], next: f64) {
        if slices.is_empty() {
            self.entry.push(next, self.entry.last_y());
            self.entry_frontier = next;
            return;
        }
        let grid_len = slices[0].1.len();
        for i in 0..grid_len {
            let x = slices[0].1[i].0;
            let mut total = 0.0;
            for (key, knots) in slices {
                debug_assert_eq!(knots.len(), grid_len);
                let (kx, ky) = knots[i];
                debug_assert_eq!(kx, x);
                total += ky;
                self.commodity_entry.get_mut(key).unwrap().push(kx, ky);
            }
            self.entry.push(x, total);
        }
        self.entry_frontier = next;
    }

    /// Advances the exit-time and exit-count frontiers to `target`,
    /// marching in steps of at most `τ(frontier) - frontier ≥ β` so each
    /// step only consumes already-final state.
    fn advance(&mut self, target: f64) -> Result<()> {
        debug_assert!(target <= self.entry_frontier + TIME_EPS);
        while self.tau_frontier < target - TIME_EPS {
            let cur = self.tau_frontier;
            let tau_cur = self.exit_frontier;
            let next = target.min(tau_cur);
            if next <= cur + TIME_EPS {
                return Err(Error::InvalidArc {
                    id: self.arc_id.clone(),
                    reason: format!("loading stalled at t = {cur}"),
                });
            }

            // exit times on (cur, next]: knots wherever U or V kink
            let mut ts = merge_breakpoints(
                &knots_in(&self.entry.xs, cur, next),
                &knots_in(&self.exit.xs, cur, next),
            );
            ts.push(next);
            for &t in &ts {
                let x = (self.entry.eval(t) - self.exit.eval(t)).max(0.0);
                self.tau.push(t, t + (self.alpha * x + self.beta));
            }
            self.tau_frontier = next;

            // exit counts on (τ(cur), τ(next)]: images of U and τ knots
            let mut xs = merge_breakpoints(
                &knots_in(&self.entry.xs, cur, next),
                &knots_in(&self.tau.xs, cur, next),
            );
            xs.push(next);
            let mut images = Vec::with_capacity(xs.len());
            for &x in &xs {
                images.push((x, self.tau.eval(x)));
            }
            for &(x, s) in &images {
                self.exit.push(s, self.entry.eval(x));
            }
            for (key, out) in self.commodity_exit.iter_mut() {
                let entry = &self.commodity_entry[key];
                // commodity kinks are a subset of aggregate kinks, so the
                // shared image grid is exact for every commodity
                for &(x, s) in &images {
                    out.push(s, entry.eval(x));
                }
            }
            self.exit_frontier = *images.last().map(|(_, s)| s).unwrap_or(&tau_cur);
        }
        Ok(())
    }

    fn finalize(self, complete: bool) -> Result<ArcState> {
        let tau = ExitTimeFn::from_knots(
            self.tau.xs.iter().copied().zip(self.tau.ys.iter().copied()).collect(),
            complete,
        )?;
        let to_curve = |k: KnotList| -> Result<CumulativeCurve> {
            let mut ys = k.ys;
            clamp_nondecreasing(&mut ys);
            CumulativeCurve::new(k.xs, ys)
        };
        let mut commodity_entry = BTreeMap::new();
        for (key, k) in self.commodity_entry {
            commodity_entry.insert(key, to_curve(k)?);
        }
        let mut commodity_exit = BTreeMap::new();
        for (key, k) in self.commodity_exit {
            commodity_exit.insert(key, to_curve(k)?);
        }
        Ok(ArcState {
            arc: self.arc_id,
            alpha: self.alpha,
            beta: self.beta,
            entry: to_curve(self.entry)?,
            exit: to_curve(self.exit)?,
            tau,
            commodity_entry,
            commodity_exit,
        })
    }
}
