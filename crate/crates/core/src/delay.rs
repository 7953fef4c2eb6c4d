//! Effective path delays: travel time plus a schedule-deviation
//! penalty around a target arrival time.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loader::LoadingResult;
use crate::net::Network;

/// Piecewise-linear arrival penalty `F` around the target arrival time:
/// `F(x) = early_coeff * max(0, -x) + late_coeff * max(0, x)` where `x`
/// is arrival time minus target. Continuous with `F(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub target: f64,
    pub early_coeff: f64,
    pub late_coeff: f64,
}

impl PenaltyParams {
    pub fn new(target: f64, early_coeff: f64, late_coeff: f64) -> Result<Self> {
        if !(early_coeff >= 0.0) || !(late_coeff >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "penalty coefficients must be nonnegative, got early {early_coeff}, late {late_coeff}"
            )));
        }
        Ok(Self { target, early_coeff, late_coeff })
    }

    /// Largest slope of `F`; the penalty is Lipschitz with this constant.
    pub fn max_slope(&self) -> f64 {
        self.early_coeff.max(self.late_coeff)
    }
}

/// Schedule-deviation cost for a signed deviation `x` (negative = early).
pub fn penalty(params: &PenaltyParams, x: f64) -> f64 {
    params.early_coeff * (-x).max(0.0) + params.late_coeff * x.max(0.0)
}

/// Effective delay `Ψ_p(t, h) = D_p(t, h) + F(t + D_p(t, h) - target)`.
pub fn effective_delay(
    result: &LoadingResult,
    net: &Network,
    params: &PenaltyParams,
    path_id: &str,
    t: f64,
) -> Result<f64> {
    let d = result.path_delay(net, path_id, t)?;
    Ok(d + penalty(params, t + d - params.target))
}

/// Delay and effective delay of one path sampled on the departure grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayRow {
    pub path: String,
    pub od: (String, String),
    pub delay: Vec<f64>,
    pub effective: Vec<f64>,
}

/// Sampled delays for every path, plus the per-OD minimum
/// effective delay `v_ij` over all paths and grid points.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayField {
    pub grid: Vec<f64>,
    pub rows: Vec<DelayRow>,
    pub od_minima: BTreeMap<(String, String), f64>,
    /// Horizon the grid lives in; quadrature cells are clamped to it.
    pub span: (f64, f64),
}

impl DelayField {
    pub fn row(&self, path: &str) -> Result<&DelayRow> {
        self.rows
            .iter()
            .find(|r| r.path == path)
            .ok_or_else(|| Error::UnknownPath(path.to_string()))
    }

    pub fn v_for_od(&self, od: &(String, String)) -> Result<f64> {
        self.od_minima
            .get(od)
            .copied()
            .ok_or_else(|| Error::UnknownOd(od.0.clone(), od.1.clone()))
    }

    /// Quadrature cells around each grid point: midpoints between
    /// neighbors, clamped to the horizon. For a uniform grid of slot
    /// midpoints this recovers the slots exactly.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let g = &self.grid;
        let n = g.len();
        let (t0, tf) = self.span;
        if n == 1 {
            return vec![(t0, tf)];
        }
        (0..n)
            .map(|i| {
                let lo = if i == 0 { t0.min(g[0]) } else { 0.5 * (g[i - 1] + g[i]) };
                let hi = if i == n - 1 { tf.max(g[n - 1]) } else { 0.5 * (g[i] + g[i + 1]) };
                (lo, hi)
            })
            .collect()
    }

    /// CSV export: `path_id,departure_time,delay,effective_delay`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "path_id,departure_time,delay,effective_delay")?;
        for row in &self.rows {
            for (i, &t) in self.grid.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    row.path,
                    fmt(t),
                    fmt(row.delay[i]),
                    fmt(row.effective[i])
                )?;
            }
        }
        Ok(())
    }

    /// CSV export of the per-OD minima: `origin,destination,v`.
    pub fn write_od_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "origin,destination,v")?;
        for (od, v) in &self.od_minima {
            writeln!(w, "{},{},{}", od.0, od.1, fmt(*v))?;
        }
        Ok(())
    }
}

/// Full-precision decimal formatting shared by the exporters.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Evaluates delays and effective delays for every path of the network
/// on `grid`, and the per-OD minima.
pub fn delay_field(
    result: &LoadingResult,
    net: &Network,
    params: &PenaltyParams,
    grid: &[f64],
) -> Result<DelayField> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let (t0, tf) = (result.horizon.t0, result.horizon.tf);
    for &t in grid {
        if t < t0 - 1e-12 || t > tf + 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "grid point {t} outside the horizon [{t0}, {tf}]"
            )));
        }
    }
    let mut rows = Vec::with_capacity(net.paths.len());
    let mut od_minima: BTreeMap<(String, String), f64> = BTreeMap::new();
    for path in &net.paths {
        let mut delay = Vec::with_capacity(grid.len());
        let mut effective = Vec::with_capacity(grid.len());
        for &t in grid {
            let d = result.path_delay(net, &path.id, t)?;
            let psi = d + penalty(params, t + d - params.target);
            delay.push(d);
            effective.push(psi);
        }
        let best = effective.iter().copied().fold(f64::INFINITY, f64::min);
        od_minima
            .entry(path.od.clone())
            .and_modify(|v| *v = v.min(best))
            .or_insert(best);
        rows.push(DelayRow { path: path.id.clone(), od: path.od.clone(), delay, effective });
    }
    Ok(DelayField { grid: grid.to_vec(), rows, od_minima, span: (t0, tf) })
}

/// Uniform grid of `n` points spanning `[lo, hi]` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Midpoints of `n` equal slots on `[lo, hi]`.
pub fn slot_midpoints(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let w = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * w).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{PathFlowVector, StepFunction, TimeHorizon};
    use crate::loader::load_network;
    use crate::net::{Arc, Path, TripTable};

    fn params(target: f64, early: f64, late: f64) -> PenaltyParams {
        PenaltyParams::new(target, early, late).unwrap()
    }

    #[test]
    fn penalty_examples() {
        let p = params(2.0, 0.5, 2.0);
        assert_eq!(penalty(&p, 0.0), 0.0);
        assert!((penalty(&p, -0.45) - 0.225).abs() < 1e-15);
        assert!((penalty(&p, 0.3) - 0.6).abs() < 1e-15);
    }

    fn single_arc_setup() -> (Network, LoadingResult) {
        let net = Network {
            nodes: vec!["1".into(), "2".into()],
            arcs: vec![Arc { id: "a".into(), tail: "1".into(), head: "2".into(), alpha: 0.01, beta: 1.0 }],
            paths: vec![Path { id: "p".into(), od: ("1".into(), "2".into()), arcs: vec!["a".into()] }],
            trips: TripTable::new([(("1".into(), "2".into()), 10.0)].into()),
        };
        let mut h = PathFlowVector::empty();
        h.insert("p", StepFunction::constant(10.0, 0.0, 1.0).unwrap());
        let hz = TimeHorizon::new(0.0, 4.0, 0.0).unwrap();
        let res = load_network(&net, &h, &hz).unwrap();
        (net, res)
    }

    #[test]
    fn effective_delay_examples() {
        let (net, res) = single_arc_setup();
        // zero penalty: Ψ = D
        let zero = params(2.0, 0.0, 0.0);
        let d = res.path_delay(&net, "p", 0.5).unwrap();
        assert_eq!(effective_delay(&res, &net, &zero, "p", 0.5).unwrap(), d);
        // D = 1.05 at t = 0.5: deviation -0.45, Ψ = 1.275
        let p = params(2.0, 0.5, 2.0);
        let psi = effective_delay(&res, &net, &p, "p", 0.5).unwrap();
        assert!((psi - 1.275).abs() < 1e-12, "psi = {psi}");
        // arrival exactly on target: Ψ = D. Solve t + D(t) = 2 on the
        // linear stretch τ(t) = 1.1 t + 1 (t ≤ 1): t = 1/1.1
        let t = 1.0 / 1.1;
        let d = res.path_delay(&net, "p", t).unwrap();
        let psi = effective_delay(&res, &net, &p, "p", t).unwrap();
        assert!((psi - d).abs() < 1e-12);
    }

    #[test]
    fn field_on_empty_paths_is_constant_beta_sum() {
        let net = Network {
            nodes: vec!["1".into(), "2".into(), "3".into()],
            arcs: vec![
                Arc { id: "a1".into(), tail: "1".into(), head: "2".into(), alpha: 0.01, beta: 1.0 },
                Arc { id: "a2".into(), tail: "2".into(), head: "3".into(), alpha: 0.01, beta: 2.0 },
            ],
            paths: vec![Path { id: "p".into(), od: ("1".into(), "3".into()), arcs: vec!["a1".into(), "a2".into()] }],
            trips: TripTable::new([(("1".into(), "3".into()), 1.0)].into()),
        };
        let mut h = PathFlowVector::empty();
        h.insert("p", StepFunction::zero());
        let hz = TimeHorizon::new(0.0, 4.0, 0.0).unwrap();
        let res = load_network(&net, &h, &hz).unwrap();
        let zero = params(2.0, 0.0, 0.0);
        let field = delay_field(&res, &net, &zero, &uniform_grid(0.0, 4.0, 9)).unwrap();
        let row = field.row("p").unwrap();
        assert!(row.effective.iter().all(|&v| (v - 3.0).abs() < 1e-12));
        assert!((field.v_for_od(&("1".into(), "3".into())).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_parallel_paths_share_the_minimum() {
        let net = Network {
            nodes: vec!["1".into(), "2".into()],
            arcs: vec![
                Arc { id: "a1".into(), tail: "1".into(), head: "2".into(), alpha: 0.0, beta: 1.5 },
                Arc { id: "a2".into(), tail: "1".into(), head: "2".into(), alpha: 0.0, beta: 1.5 },
            ],
            paths: vec![
                Path { id: "p1".into(), od: ("1".into(), "2".into()), arcs: vec!["a1".into()] },
                Path { id: "p2".into(), od: ("1".into(), "2".into()), arcs: vec!["a2".into()] },
            ],
            trips: TripTable::new([(("1".into(), "2".into()), 1.0)].into()),
        };
        let mut h = PathFlowVector::empty();
        h.insert("p1", StepFunction::zero());
        h.insert("p2", StepFunction::zero());
        let hz = TimeHorizon::new(0.0, 4.0, 0.0).unwrap();
        let res = load_network(&net, &h, &hz).unwrap();
        let p = params(2.5, 0.5, 2.0);
        let field = delay_field(&res, &net, &p, &uniform_grid(0.0, 4.0, 17)).unwrap();
        let v = field.v_for_od(&("1".into(), "2".into())).unwrap();
        let best1 = field.row("p1").unwrap().effective.iter().copied().fold(f64::INFINITY, f64::min);
        let best2 = field.row("p2").unwrap().effective.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(best1, v);
        assert_eq!(best2, v);
        // v is a lower bound for every sampled Ψ
        for row in &field.rows {
            assert!(row.effective.iter().all(|&x| x >= v));
        }
    }

    #[test]
    fn loaded_minimum_matches_exhaustive_grid_scan() {
        let (net, res) = single_arc_setup();
        let p = params(2.0, 0.5, 2.0);
        let grid = uniform_grid(0.0, 4.0, 41);
        let field = delay_field(&res, &net, &p, &grid).unwrap();
        let mut best = f64::INFINITY;
        for &t in &grid {
            best = best.min(effective_delay(&res, &net, &p, "p", t).unwrap());
        }
        assert_eq!(field.v_for_od(&("1".into(), "2".into())).unwrap(), best);
    }

    #[test]
    fn late_coefficient_monotonicity() {
        let (net, res) = single_arc_setup();
        let lo = params(1.2, 0.5, 1.0);
        let hi = params(1.2, 0.5, 3.0);
        for i in 0..=16 {
            let t = i as f64 * 0.25;
            let a = effective_delay(&res, &net, &lo, "p", t).unwrap();
            let b = effective_delay(&res, &net, &hi, "p", t).unwrap();
            let arrival = t + res.path_delay(&net, "p", t).unwrap();
            if arrival > lo.target {
                assert!(b >= a, "late arrival at t = {t} should not get cheaper");
            } else {
                assert_eq!(a, b, "early arrivals must be unaffected at t = {t}");
            }
        }
    }

    #[test]
    fn penalty_transfer_is_lipschitz() {
        // |Ψ(t, h) - Ψ(t, g)| ≤ (1 + L) |D(t, h) - D(t, g)|
        let (net, res_a) = single_arc_setup();
        let mut h2 = PathFlowVector::empty();
        h2.insert("p", StepFunction::constant(12.0, 0.0, 1.0).unwrap());
        let hz = TimeHorizon::new(0.0, 4.0, 0.0).unwrap();
        let res_b = load_network(&net, &h2, &hz).unwrap();
        let p = params(2.0, 0.5, 2.0);
        let l = p.max_slope();
        for i in 0..=20 {
            let t = i as f64 * 0.2;
            let da = res_a.path_delay(&net, "p", t).unwrap();
            let db = res_b.path_delay(&net, "p", t).unwrap();
            let pa = effective_delay(&res_a, &net, &p, "p", t).unwrap();
            let pb = effective_delay(&res_b, &net, &p, "p", t).unwrap();
            assert!((pa - pb).abs() <= (1.0 + l) * (da - db).abs() + 1e-12);
        }
    }

    #[test]
    fn od_minimum_stabilizes_under_grid_refinement() {
        let (net, res) = single_arc_setup();
        let p = params(2.0, 0.5, 2.0);
        let od = ("1".to_string(), "2".to_string());
        let coarse = delay_field(&res, &net, &p, &uniform_grid(0.0, 4.0, 65)).unwrap();
        let fine = delay_field(&res, &net, &p, &uniform_grid(0.0, 4.0, 129)).unwrap();
        let finer = delay_field(&res, &net, &p, &uniform_grid(0.0, 4.0, 257)).unwrap();
        let v1 = coarse.v_for_od(&od).unwrap();
        let v2 = fine.v_for_od(&od).unwrap();
        let v3 = finer.v_for_od(&od).unwrap();
        // nested grids: the minimum can only improve under refinement,
        // and by at most the Lipschitz constant times the spacing
        assert!(v2 <= v1 + 1e-15);
        assert!(v3 <= v2 + 1e-15);
        let lipschitz = (1.0 + p.max_slope()) * 2.0;
        assert!(v1 - v3 <= lipschitz * (4.0 / 64.0));
        assert!(v2 - v3 <= lipschitz * (4.0 / 128.0));
    }

    #[test]
    fn cells_recover_uniform_slots() {
        let (net, res) = single_arc_setup();
        let p = params(2.0, 0.5, 2.0);
        let field = delay_field(&res, &net, &p, &slot_midpoints(0.0, 4.0, 8)).unwrap();
        let cells = field.cells();
        assert_eq!(cells.len(), 8);
        assert!((cells[0].0 - 0.0).abs() < 1e-12);
        assert!((cells[7].1 - 4.0).abs() < 1e-12);
        for (i, (lo, hi)) in cells.iter().enumerate() {
            assert!((hi - lo - 0.5).abs() < 1e-12, "cell {i} has width {}", hi - lo);
        }
    }
}
