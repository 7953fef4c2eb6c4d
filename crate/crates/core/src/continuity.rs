//! Executable continuity experiments for the effective delay operator.
//!
//! The harness builds sequences of feasible path flows converging in
//! `L²` — including tall spike profiles whose amplitude far exceeds any
//! a-priori bound — loads every term, and measures how the path delays
//! and effective delays respond. A continuous operator produces output
//! distances that decay with the input distances.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::delay::{delay_field, fmt, PenaltyParams};
use crate::error::{Error, Result};
use crate::flow::{check_feasibility, l2_distance, PathFlowVector, StepFunction, TimeHorizon};
use crate::loader::{load_network, LoadingResult};
use crate::net::Network;

/// How the converging sequence is generated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMode {
    /// `h^(n) = h + 2^{-n} g`.
    Scaled,
    /// `h^(n)` is the base with its support translated by
    /// `max_shift * 2^{-n}`.
    SupportShift { max_shift: f64 },
    /// Replaces the base by a spike profile of the given height with the
    /// same per-OD volumes, then perturbs it like `Scaled`.
    AmplitudeStress { height: f64 },
}

/// A converging-sequence experiment.
#[derive(Clone, Debug)]
pub struct SequenceSpec {
    pub base: PathFlowVector,
    pub mode: SequenceMode,
    /// Number of terms `n = 1..=len`.
    pub len: usize,
    /// Perturbation direction; zero per-OD volume keeps terms feasible
    /// without renormalization whenever clipping stays inactive.
    pub perturbation: PathFlowVector,
}

/// One generated term with its clipping flag.
#[derive(Clone, Debug)]
pub struct SequenceTerm {
    pub flow: PathFlowVector,
    pub clipped: bool,
}

/// Builds the flow sequence; every term is nonnegative and carries the
/// trip-table volumes (clip-then-renormalize when the raw term leaves
/// the feasible set).
pub fn make_sequence(net: &Network, horizon: &TimeHorizon, spec: &SequenceSpec) -> Result<Vec<SequenceTerm>> {
    let feas = check_feasibility(&spec.base, net, 1e-9);
    if !feas.is_feasible() {
        return Err(Error::Infeasible(format!(
            "sequence base is infeasible: {}",
            feas.violations.join("; ")
        )));
    }
    spec.base.validate(horizon)?;
    let base = match spec.mode {
        SequenceMode::AmplitudeStress { height } => spike_base(net, horizon, height)?,
        _ => spec.base.clone(),
    };
    let mut terms = Vec::with_capacity(spec.len);
    for n in 1..=spec.len {
        let factor = f64::powi(2.0, -(n as i32));
        let raw = match spec.mode {
            SequenceMode::Scaled | SequenceMode::AmplitudeStress { .. } => {
                base.add_scaled(&spec.perturbation, factor)
            }
            SequenceMode::SupportShift { max_shift } => {
                let dt = max_shift * factor;
                let mut shifted = PathFlowVector::empty();
                for (path, f) in base.iter() {
                    shifted.insert(path.clone(), f.shift(dt));
                }
                shifted
            }
        };
        terms.push(renormalize(net, raw)?);
    }
    for term in &terms {
        term.flow.validate(horizon)?;
    }
    Ok(terms)
}

/// Random zero-volume perturbation direction: each path gets two
/// adjacent lobes of opposite sign whose volumes cancel, so adding any
/// multiple preserves per-OD volumes.
pub fn random_direction(
    rng: &mut crate::rng::SplitMix64,
    paths: &[String],
    horizon: &TimeHorizon,
) -> PathFlowVector {
    let mut g = PathFlowVector::empty();
    for path in paths {
        let span = horizon.span();
        let a = horizon.t0 + span * rng.range(0.05, 0.3);
        let b = a + span * rng.range(0.1, 0.3);
        let c = b + span * rng.range(0.1, 0.3);
        let amp = rng.range(0.2, 2.0);
        let f = StepFunction::new(vec![a, b, c], vec![amp, -amp * (b - a) / (c - b)]).unwrap();
        g.insert(path.clone(), f);
    }
    g
}

/// Spike base: each path gets its OD volume share at the given height,
/// departing from the horizon start. Width is volume / height.
fn spike_base(net: &Network, horizon: &TimeHorizon, height: f64) -> Result<PathFlowVector> {
    if !(height > 0.0) {
        return Err(Error::InvalidConfig(format!("spike height must be positive, got {height}")));
    }
    let mut out = PathFlowVector::empty();
    for path in &net.paths {
        out.insert(path.id.clone(), StepFunction::zero());
    }
    for (od, &q) in net.trips().entries() {
        let paths: Vec<&str> = net.paths_for_od(od).map(|p| p.id.as_str()).collect();
        if paths.is_empty() {
            continue;
        }
        let share = q / paths.len() as f64;
        let width = share / height;
        if horizon.t0 + width > horizon.tf {
            return Err(Error::InvalidConfig(format!(
                "spike of height {height} for od ({}, {}) does not fit the horizon",
                od.0, od.1
            )));
        }
        for path in paths {
            out.insert(path, StepFunction::constant(height, horizon.t0, horizon.t0 + width)?);
        }
    }
    Ok(out)
}

/// Clips negative rates and rescales each OD back to its demand volume.
fn renormalize(net: &Network, raw: PathFlowVector) -> Result<SequenceTerm> {
    let mut clipped_any = false;
    let mut flows: BTreeMap<String, StepFunction> = BTreeMap::new();
    for (path, f) in raw.iter() {
        let (clip, clipped) = f.clip_nonnegative();
        clipped_any |= clipped;
        flows.insert(path.clone(), clip);
    }
    let mut flow = PathFlowVector::new(flows);
    if clipped_any {
        for (od, &q) in net.trips().entries() {
            let vol: f64 = net.paths_for_od(od).map(|p| flow.volume(&p.id)).sum();
            if vol <= 0.0 {
                return Err(Error::Infeasible(format!(
                    "clipping removed all volume for od ({}, {})",
                    od.0, od.1
                )));
            }
            let scale = q / vol;
            if (scale - 1.0).abs() > 1e-15 {
                for path in net.paths_for_od(od).map(|p| p.id.clone()).collect::<Vec<_>>() {
                    let f = flow.component(&path);
                    flow.insert(path, f.scale(scale));
                }
            }
        }
    }
    Ok(SequenceTerm { flow, clipped: clipped_any })
}

/// Distances of one sequence term from the base.
#[derive(Clone, Debug, Serialize)]
pub struct TermReport {
    pub n: usize,
    pub input_l2: f64,
    pub sup_d_by_path: BTreeMap<String, f64>,
    pub sup_psi_by_path: BTreeMap<String, f64>,
    /// Max over paths of `sup_t |D_p(t, h^n) - D_p(t, h)|`.
    pub sup_d: f64,
    /// Max over paths of `sup_t |Ψ_p(t, h^n) - Ψ_p(t, h)|`.
    pub sup_psi: f64,
    /// Grid `L²` distance of the effective delay fields.
    pub l2_psi: f64,
    /// Sup over paths and grid of the cumulative-departure difference.
    pub sup_cumulative: f64,
    pub clipped: bool,
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct ReportSummary {
    pub first_sup_psi: f64,
    pub last_sup_psi: f64,
    /// `last_sup_psi / first_sup_psi`; zero input distance gives zero.
    pub decay_ratio: f64,
    pub first_quarter_max: f64,
    pub last_quarter_max: f64,
}

/// Per-term distances plus decay summaries over the usable terms.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub terms: Vec<TermReport>,
    pub summary: ReportSummary,
}

impl ConvergenceReport {
    /// CSV export:
    /// `n,input_l2,sup_D,sup_Psi,l2_Psi,clipped,truncated`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n,input_l2,sup_D,sup_Psi,l2_Psi,clipped,truncated")?;
        for t in &self.terms {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                t.n,
                fmt(t.input_l2),
                fmt(t.sup_d),
                fmt(t.sup_psi),
                fmt(t.l2_psi),
                t.clipped as u8,
                t.truncated as u8
            )?;
        }
        Ok(())
    }

    pub fn to_plot_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Loads the base and every term of the sequence and measures input and
/// output distances on the departure grid. Truncated terms are flagged
/// and excluded from the summary ratios.
pub fn convergence_report(
    net: &Network,
    params: &PenaltyParams,
    horizon: &TimeHorizon,
    spec: &SequenceSpec,
    grid: &[f64],
) -> Result<ConvergenceReport> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let base = match spec.mode {
        SequenceMode::AmplitudeStress { height } => spike_base(net, horizon, height)?,
        _ => spec.base.clone(),
    };
    let base_result = load_network(net, &base, horizon)?;
    if base_result.truncated {
        return Err(Error::Infeasible("base flow does not discharge within the loading cap".into()));
    }
    let base_field = delay_field(&base_result, net, params, grid)?;
    let base_cumulative = cumulative_per_path(net, &base, horizon)?;

    let terms = make_sequence(net, horizon, spec)?;
    let mut reports = Vec::with_capacity(terms.len());
    for (idx, term) in terms.iter().enumerate() {
        let n = idx + 1;
        let input_l2 = l2_for_union(&term.flow, &base)?;
        let result = load_network(net, &term.flow, horizon)?;
        if result.truncated {
            reports.push(TermReport {
                n,
                input_l2,
                sup_d_by_path: BTreeMap::new(),
                sup_psi_by_path: BTreeMap::new(),
                sup_d: f64::NAN,
                sup_psi: f64::NAN,
                l2_psi: f64::NAN,
                sup_cumulative: f64::NAN,
                clipped: term.clipped,
                truncated: true,
            });
            continue;
        }
        let field = delay_field(&result, net, params, grid)?;
        let mut sup_d_by_path = BTreeMap::new();
        let mut sup_psi_by_path = BTreeMap::new();
        let mut l2_psi_sq = 0.0;
        for (row, base_row) in field.rows.iter().zip(&base_field.rows) {
            let sup_d = crate::flow::sup_distance(&row.delay, &base_row.delay)?;
            let sup_psi = crate::flow::sup_distance(&row.effective, &base_row.effective)?;
            sup_d_by_path.insert(row.path.clone(), sup_d);
            sup_psi_by_path.insert(row.path.clone(), sup_psi);
            for i in 0..grid.len().saturating_sub(1) {
                let d0 = row.effective[i] - base_row.effective[i];
                let d1 = row.effective[i + 1] - base_row.effective[i + 1];
                l2_psi_sq += 0.5 * (d0 * d0 + d1 * d1) * (grid[i + 1] - grid[i]);
            }
        }
        let term_cumulative = cumulative_per_path(net, &term.flow, horizon)?;
        let mut sup_cumulative: f64 = 0.0;
        for (path, base_curve) in &base_cumulative {
            let term_curve = &term_cumulative[path];
            let knots = crate::flow::merge_breakpoints(base_curve.knot_times(), term_curve.knot_times());
            for t in knots {
                sup_cumulative = sup_cumulative.max((base_curve.eval(t) - term_curve.eval(t)).abs());
            }
        }
        reports.push(TermReport {
            n,
            input_l2,
            sup_d: sup_d_by_path.values().copied().fold(0.0, f64::max),
            sup_psi: sup_psi_by_path.values().copied().fold(0.0, f64::max),
            sup_d_by_path,
            sup_psi_by_path,
            l2_psi: l2_psi_sq.sqrt(),
            sup_cumulative,
            clipped: term.clipped,
            truncated: false,
        });
    }
    let summary = summarize(&reports);
    Ok(ConvergenceReport { terms: reports, summary })
}

fn summarize(terms: &[TermReport]) -> ReportSummary {
    let usable: Vec<&TermReport> = terms.iter().filter(|t| !t.truncated).collect();
    if usable.is_empty() {
        return ReportSummary::default();
    }
    let first = usable.first().unwrap().sup_psi;
    let last = usable.last().unwrap().sup_psi;
    let quarter = (usable.len() / 4).max(1);
    let first_quarter_max = usable[..quarter].iter().map(|t| t.sup_psi).fold(0.0, f64::max);
    let last_quarter_max = usable[usable.len() - quarter..]
        .iter()
        .map(|t| t.sup_psi)
        .fold(0.0, f64::max);
    ReportSummary {
        first_sup_psi: first,
        last_sup_psi: last,
        decay_ratio: if first > 0.0 { last / first } else { 0.0 },
        first_quarter_max,
        last_quarter_max,
    }
}

fn cumulative_per_path(
    net: &Network,
    h: &PathFlowVector,
    horizon: &TimeHorizon,
) -> Result<BTreeMap<String, crate::flow::CumulativeCurve>> {
    let mut out = BTreeMap::new();
    for path in &net.paths {
        out.insert(path.id.clone(), crate::flow::cumulate(&h.component(&path.id), horizon)?);
    }
    Ok(out)
}

/// `L²` distance over the union of both path sets (missing components
/// are zero).
fn l2_for_union(a: &PathFlowVector, b: &PathFlowVector) -> Result<f64> {
    let mut ea = a.clone();
    let mut eb = b.clone();
    for path in b.paths() {
        if ea.get(path).is_none() {
            ea.insert(path.clone(), StepFunction::zero());
        }
    }
    for path in a.paths() {
        if eb.get(path).is_none() {
            eb.insert(path.clone(), StepFunction::zero());
        }
    }
    l2_distance(&ea, &eb)
}

/// Strict-monotonicity audit of every exit time function in a loading
/// result.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MonotonicityReport {
    pub violations: Vec<String>,
    pub min_slope: f64,
    pub knots_checked: usize,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verifies that every computed exit time function increases strictly
/// across its knots and never dips below the free-flow delay line
/// `t + β`.
pub fn monotonicity_audit(result: &LoadingResult) -> MonotonicityReport {
    let mut report = MonotonicityReport { min_slope: f64::INFINITY, ..Default::default() };
    for (id, state) in &result.arcs {
        let knots: Vec<(f64, f64)> = state.tau.knots().collect();
        report.knots_checked += knots.len();
        for (t, y) in &knots {
            if *y < t + state.beta {
                report.violations.push(format!(
                    "arc `{id}`: exit time {y} at entry {t} is below free flow {}",
                    t + state.beta
                ));
            }
        }
        for w in knots.windows(2) {
            if !(w[1].1 > w[0].1) {
                report.violations.push(format!(
                    "arc `{id}`: exit time not strictly increasing between entries {} and {}",
                    w[0].0, w[1].0
                ));
            }
        }
        report.min_slope = report.min_slope.min(state.tau.min_slope());
    }
    report
}
