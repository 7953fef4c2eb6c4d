//! The three workflows behind the CLI subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ldm_core::continuity::{
    convergence_report, monotonicity_audit, random_direction, SequenceSpec,
};
use ldm_core::delay::{delay_field, fmt, uniform_grid};
use ldm_core::due::{solve_due, uniform_initial_flow};
use ldm_core::flow::check_feasibility;
use ldm_core::loader::{load_network, LoadingResult};
use ldm_core::rng::SplitMix64;

use crate::scenario::{LoadedScenario, PerturbationSpec};

fn writer(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    let file = File::create(&path)
        .with_context(|| format!("cannot create output file `{}`", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = writer(out, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct LoadingSummary {
    end_time: f64,
    truncated: bool,
    residual: std::collections::BTreeMap<String, f64>,
}

fn write_arc_curves(out: &Path, result: &LoadingResult) -> Result<()> {
    let mut w = writer(out, "arc_curves.csv")?;
    writeln!(w, "arc_id,series,t,value")?;
    for (id, state) in &result.arcs {
        for (t, v) in state.entry.knots() {
            writeln!(w, "{id},U,{},{}", fmt(t), fmt(v))?;
        }
        for (t, v) in state.exit.knots() {
            writeln!(w, "{id},V,{},{}", fmt(t), fmt(v))?;
        }
        for (t, v) in state.tau.knots() {
            writeln!(w, "{id},tau,{},{}", fmt(t), fmt(v))?;
        }
    }
    Ok(())
}

pub fn run_load(sc: &LoadedScenario, out: &Path) -> Result<()> {
    let flows_rel = sc
        .scenario
        .flows
        .as_ref()
        .context("scenario field `flows` is required for the load workflow")?;
    let flows = sc.read_flows(flows_rel)?;
    flows.validate(&sc.horizon).context("flow input is invalid for the horizon")?;
    let feas = check_feasibility(&flows, &sc.network, 1e-6);
    for v in &feas.violations {
        eprintln!("warning: {v}");
    }

    let result = load_network(&sc.network, &flows, &sc.horizon)?;
    write_arc_curves(out, &result)?;
    write_json(
        out,
        "loading.json",
        &LoadingSummary {
            end_time: result.end_time,
            truncated: result.truncated,
            residual: result.residual.clone(),
        },
    )?;

    let audit = monotonicity_audit(&result);
    write_json(out, "audit.json", &audit)?;

    if result.truncated {
        eprintln!(
            "warning: loading truncated at t = {}; delay tables skipped (residual volume on {} arcs)",
            result.end_time,
            result.residual.len()
        );
        return Ok(());
    }

    let grid = uniform_grid(sc.horizon.t0, sc.horizon.tf, sc.scenario.departure_grid_points);
    let field = delay_field(&result, &sc.network, &sc.scenario.penalty, &grid)?;
    let mut w = writer(out, "path_delays.csv")?;
    writeln!(w, "path_id,departure_time,delay")?;
    for row in &field.rows {
        for (i, &t) in field.grid.iter().enumerate() {
            writeln!(w, "{},{},{}", row.path, fmt(t), fmt(row.delay[i]))?;
        }
    }
    let mut w = writer(out, "effective_delays.csv")?;
    field.write_csv(&mut w)?;
    let mut w = writer(out, "od_minima.csv")?;
    field.write_od_csv(&mut w)?;

    if !audit.passed() {
        bail!("monotonicity audit failed: {}", audit.violations.join("; "));
    }
    Ok(())
}

pub fn run_due(sc: &LoadedScenario, out: &Path) -> Result<()> {
    let cfg = sc
        .scenario
        .solver
        .as_ref()
        .context("scenario field `solver` is required for the due workflow")?;
    let h0 = match &sc.scenario.flows {
        Some(rel) => Some(sc.read_flows(rel)?),
        None => None,
    };
    let (h, certificate) = solve_due(&sc.network, &sc.scenario.penalty, cfg, &sc.horizon, h0)?;
    if !certificate.converged {
        eprintln!(
            "warning: gap {} above tolerance {} after {} iterations",
            certificate.gap, cfg.gap_tol, certificate.iterations
        );
    }
    write_json(out, "equilibrium.json", &h)?;
    write_json(out, "certificate.json", &certificate)?;
    let mut w = writer(out, "convergence.csv")?;
    certificate.write_trace_csv(&mut w)?;
    Ok(())
}

pub fn run_continuity(sc: &LoadedScenario, out: &Path, seed: u64) -> Result<()> {
    let spec_in = sc
        .scenario
        .continuity
        .as_ref()
        .context("scenario field `continuity` is required for the continuity workflow")?;
    let base = match &spec_in.base {
        Some(rel) => sc.read_flows(rel)?,
        None => uniform_initial_flow(&sc.network, &sc.horizon),
    };
    let perturbation = match &spec_in.perturbation {
        PerturbationSpec::File(rel) => sc.read_flows(rel)?,
        PerturbationSpec::Random { amplitude } => {
            let mut rng = SplitMix64::new(seed);
            let paths: Vec<String> = sc.network.paths.iter().map(|p| p.id.clone()).collect();
            let mut g = random_direction(&mut rng, &paths, &sc.horizon);
            for path in paths {
                let f = g.component(&path).scale(*amplitude);
                g.insert(path, f);
            }
            g
        }
    };
    let spec = SequenceSpec {
        base,
        mode: spec_in.mode,
        len: spec_in.length,
        perturbation,
    };
    let grid = uniform_grid(sc.horizon.t0, sc.horizon.tf, spec_in.grid_points);
    let report = convergence_report(&sc.network, &sc.scenario.penalty, &sc.horizon, &spec, &grid)?;
    let mut w = writer(out, "report.csv")?;
    report.write_csv(&mut w)?;
    let mut w = writer(out, "plot.json")?;
    w.write_all(report.to_plot_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}
