//! Route-and-departure user equilibria by fixed-point projection.
//!
//! Departure rates are discretized on uniform slots of the horizon; the
//! loading itself stays exact. One iteration maps `h` to the Euclidean
//! projection of `h - γ Ψ(·, h)` onto the per-OD demand simplex, slot by
//! slot. The gap functional certifies equilibria: it vanishes exactly
//! when every used (path, slot) attains the minimal effective delay of
//! its OD pair.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::delay::{delay_field, fmt, slot_midpoints, DelayField, PenaltyParams};
use crate::error::{Error, Result};
use crate::flow::{l2_distance, PathFlowVector, StepFunction, TimeHorizon};
use crate::loader::{load_network_with, LoaderConfig};
use crate::net::Network;

/// Step-size rule for the projection iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Fixed { size: f64 },
    /// `size = c / k` at iteration `k`.
    Diminishing { c: f64 },
}

impl StepRule {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            StepRule::Fixed { size } => size,
            StepRule::Diminishing { c } => c / k.max(1) as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub step: StepRule,
    pub max_iters: usize,
    pub gap_tol: f64,
    /// Number of uniform departure slots on `[t0, tf]`.
    pub slots: usize,
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        let positive = match self.step {
            StepRule::Fixed { size } => size > 0.0,
            StepRule::Diminishing { c } => c > 0.0,
        };
        if !positive {
            return Err(Error::InvalidConfig("step size must be positive".into()));
        }
        if !(self.gap_tol >= 0.0) {
            return Err(Error::InvalidConfig("gap tolerance must be nonnegative".into()));
        }
        if self.slots == 0 {
            return Err(Error::InvalidConfig("need at least one departure slot".into()));
        }
        Ok(())
    }
}

/// Euclidean projection of `values` onto `{ y ≥ 0 : Σ w_i y_i = q }`.
///
/// Solved exactly on the Lagrange multiplier: `y_i(λ) = max(0, v_i - λ
/// w_i)` and the constraint function is piecewise linear and decreasing
/// in `λ`, so the crossing segment is found by an active-set walk over
/// the sorted kink ratios `v_i / w_i`.
pub fn project_od(values: &[f64], weights: &[f64], q: f64) -> Result<Vec<f64>> {
    if q < 0.0 {
        return Err(Error::NegativeDemand(q));
    }
    if values.len() != weights.len() {
        return Err(Error::InvalidConfig(format!(
            "projection needs matching lengths, got {} values and {} weights",
            values.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidConfig("projection weights must be positive".into()));
    }
    let n = values.len();
    if n == 0 || q == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = values[a] / weights[a];
        let rb = values[b] / weights[b];
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut swv = 0.0;
    let mut sww = 0.0;
    let mut lambda = 0.0;
    for (k, &i) in order.iter().enumerate() {
        swv += weights[i] * values[i];
        sww += weights[i] * weights[i];
        lambda = (swv - q) / sww;
        let next_kink = if k + 1 < n {
            values[order[k + 1]] / weights[order[k + 1]]
        } else {
            f64::NEG_INFINITY
        };
        if lambda >= next_kink {
            break;
        }
    }
    Ok(values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| (v - lambda * w).max(0.0))
        .collect())
}

/// Merit value `Σ_p ∫ (Ψ_p(t, h) - v_ij(p)) h_p(t) dt` on the field's
/// quadrature cells. Nonnegative, and zero exactly when the flow only
/// uses (path, slot) pairs attaining the OD minimum.
pub fn gap(h: &PathFlowVector, field: &DelayField) -> Result<f64> {
    for (path, f) in h.iter() {
        if f.min_rate() < 0.0 {
            return Err(Error::Infeasible(format!("path `{path}` has a negative rate")));
        }
    }
    let cells = field.cells();
    let mut total = 0.0;
    for row in &field.rows {
        let v = field.v_for_od(&row.od)?;
        let hp = h.component(&row.path);
        for (i, &(lo, hi)) in cells.iter().enumerate() {
            let vol = hp.volume_between(lo, hi);
            total += (row.effective[i] - v) * vol;
        }
    }
    Ok(total)
}

/// One projection step: per OD pair, project the slot-wise vector
/// `h - γ Ψ` back onto the demand simplex.
pub fn fixed_point_step(
    h: &PathFlowVector,
    field: &DelayField,
    net: &Network,
    step_size: f64,
) -> Result<PathFlowVector> {
    let cells = field.cells();
    let widths: Vec<f64> = cells.iter().map(|&(lo, hi)| hi - lo).collect();
    let mut out = PathFlowVector::empty();
    for (od, &q) in net.trips().entries() {
        let paths: Vec<&str> = net.paths_for_od(od).map(|p| p.id.as_str()).collect();
        let mut values = Vec::with_capacity(paths.len() * cells.len());
        let mut weights = Vec::with_capacity(paths.len() * cells.len());
        for &path in &paths {
            let row = field.row(path)?;
            let hp = h.component(path);
            for (i, &(lo, hi)) in cells.iter().enumerate() {
                let rate = hp.volume_between(lo, hi) / widths[i];
                values.push(rate - step_size * row.effective[i]);
                weights.push(widths[i]);
            }
        }
        let projected = project_od(&values, &weights, q)?;
        for (j, &path) in paths.iter().enumerate() {
            let rates = projected[j * cells.len()..(j + 1) * cells.len()].to_vec();
            let mut breaks: Vec<f64> = cells.iter().map(|&(lo, _)| lo).collect();
            breaks.push(cells.last().unwrap().1);
            out.insert(path, StepFunction::new(breaks, rates)?);
        }
    }
    // paths without demand stay at zero
    for path in &net.paths {
        if out.get(&path.id).is_none() {
            out.insert(path.id.clone(), StepFunction::zero());
        }
    }
    Ok(out)
}

/// One row of the convergence trace.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub gap: f64,
    pub max_support_residual: f64,
    pub step_l2: f64,
}

/// Residual `Ψ_p - v_ij` of one used (path, slot) pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportResidual {
    pub path: String,
    pub slot_start: f64,
    pub slot_end: f64,
    pub volume: f64,
    pub residual: f64,
}

/// Equilibrium certificate: the gap value, the per-OD minimal effective
/// delays, and the residuals on the support of the returned flow.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquilibriumCertificate {
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
    pub od_minima: BTreeMap<String, f64>,
    pub support_residuals: Vec<SupportResidual>,
    pub trace: Vec<IterationRecord>,
}

impl EquilibriumCertificate {
    pub fn max_support_residual(&self) -> f64 {
        self.support_residuals.iter().fold(0.0, |m, r| m.max(r.residual))
    }

    /// CSV export: `iteration,gap,max_support_residual,step_l2`.
    pub fn write_trace_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration,gap,max_support_residual,step_l2")?;
        for r in &self.trace {
            writeln!(
                w,
                "{},{},{},{}",
                r.iter,
                fmt(r.gap),
                fmt(r.max_support_residual),
                fmt(r.step_l2)
            )?;
        }
        Ok(())
    }
}

/// Uniform initial flow: each OD demand spread evenly over its paths
/// and the whole horizon.
pub fn uniform_initial_flow(net: &Network, horizon: &TimeHorizon) -> PathFlowVector {
    let mut h = PathFlowVector::empty();
    for path in &net.paths {
        h.insert(path.id.clone(), StepFunction::zero());
    }
    for (od, &q) in net.trips().entries() {
        let paths: Vec<&str> = net.paths_for_od(od).map(|p| p.id.as_str()).collect();
        if paths.is_empty() {
            continue;
        }
        let rate = q / (paths.len() as f64 * horizon.span());
        for path in paths {
            h.insert(path, StepFunction::constant(rate, horizon.t0, horizon.tf).unwrap());
        }
    }
    h
}

fn support_residuals(
    h: &PathFlowVector,
    field: &DelayField,
    volume_tol: f64,
) -> Result<(Vec<SupportResidual>, f64)> {
    let cells = field.cells();
    let mut list = Vec::new();
    let mut max_res: f64 = 0.0;
    for row in &field.rows {
        let v = field.v_for_od(&row.od)?;
        let hp = h.component(&row.path);
        for (i, &(lo, hi)) in cells.iter().enumerate() {
            let vol = hp.volume_between(lo, hi);
            if vol > volume_tol {
                let residual = row.effective[i] - v;
                max_res = max_res.max(residual);
                list.push(SupportResidual {
                    path: row.path.clone(),
                    slot_start: lo,
                    slot_end: hi,
                    volume: vol,
                    residual,
                });
            }
        }
    }
    Ok((list, max_res))
}

/// Runs the projection iteration from `h0` (or the uniform spread) until
/// the gap falls below tolerance or the iteration budget is exhausted.
/// Non-convergence is reported in the certificate, not as an error.
pub fn solve_due(
    net: &Network,
    params: &PenaltyParams,
    cfg: &SolverConfig,
    horizon: &TimeHorizon,
    h0: Option<PathFlowVector>,
) -> Result<(PathFlowVector, EquilibriumCertificate)> {
    cfg.validate()?;
    let report = net.validate();
    if !report.is_valid() {
        return Err(Error::InvalidNetwork(report.violations.join("; ")));
    }
    let grid = slot_midpoints(horizon.t0, horizon.tf, cfg.slots);
    let loader_cfg = LoaderConfig::default();
    let total_q: f64 = net.trips().entries().map(|(_, q)| q).sum();
    let volume_tol = 1e-9 * total_q.max(1.0);

    let mut h = h0.unwrap_or_else(|| uniform_initial_flow(net, horizon));
    h.validate(horizon)?;
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut prev: Option<PathFlowVector> = None;
    let (field, residuals) = loop {
        let result = load_network_with(net, &h, horizon, &loader_cfg)?;
        let field = delay_field(&result, net, params, &grid)?;
        let g = gap(&h, &field)?;
        let (residuals, max_res) = support_residuals(&h, &field, volume_tol)?;
        let step_l2 = match &prev {
            Some(p) => l2_distance(&h, p)?,
            None => 0.0,
        };
        trace.push(IterationRecord {
            iter: trace.len(),
            gap: g,
            max_support_residual: max_res,
            step_l2,
        });
        if g <= cfg.gap_tol {
            converged = true;
            break (field, residuals);
        }
        if trace.len() > cfg.max_iters {
            break (field, residuals);
        }
        let step_size = cfg.step.at(trace.len());
        prev = Some(h.clone());
        h = fixed_point_step(&h, &field, net, step_size)?;
    };

    let od_minima = field
        .od_minima
        .iter()
        .map(|(od, &v)| (format!("{}->{}", od.0, od.1), v))
        .collect();
    let certificate = EquilibriumCertificate {
        gap: trace.last().unwrap().gap,
        converged,
        iterations: trace.len(),
        od_minima,
        support_residuals: residuals,
        trace,
    };
    Ok((h, certificate))
}
