//! Scenario files: a single JSON document referencing the network and
//! flow inputs and carrying every knob of the three workflows.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use ldm_core::continuity::SequenceMode;
use ldm_core::delay::PenaltyParams;
use ldm_core::due::SolverConfig;
use ldm_core::flow::{PathFlowVector, TimeHorizon};
use ldm_core::net::Network;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub network: PathBuf,
    pub horizon: HorizonSpec,
    pub penalty: PenaltyParams,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    /// Path flow input for the `load` workflow and optional warm start
    /// for `due`.
    #[serde(default)]
    pub flows: Option<PathBuf>,
    #[serde(default)]
    pub continuity: Option<ContinuitySpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Number of departure samples for exported delay tables.
    #[serde(default = "default_grid_points")]
    pub departure_grid_points: usize,
}

fn default_grid_points() -> usize {
    101
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    pub t0: f64,
    pub tf: f64,
    /// Extra loading time past `tf`; defaults to three times the sum of
    /// the free-flow delays.
    #[serde(default)]
    pub slack: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuitySpec {
    pub mode: SequenceMode,
    pub length: usize,
    /// Base flow file; the demand-spread uniform flow when omitted.
    #[serde(default)]
    pub base: Option<PathBuf>,
    pub perturbation: PerturbationSpec,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationSpec {
    /// Load the direction from a path-flow JSON file.
    File(PathBuf),
    /// Draw a zero-volume direction from the scenario seed.
    Random { amplitude: f64 },
}

/// A scenario with its referenced files loaded and defaults resolved.
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub dir: PathBuf,
    pub network: Network,
    pub horizon: TimeHorizon,
}

impl LoadedScenario {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read scenario file `{}`", path.display()))?;
        let scenario: Scenario = serde_json::from_str(&text)
            .with_context(|| format!("scenario file `{}` is malformed", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();

        let net_path = dir.join(&scenario.network);
        let net_text = std::fs::read_to_string(&net_path)
            .with_context(|| format!("cannot read network file `{}`", net_path.display()))?;
        let network = Network::from_json(&net_text)
            .with_context(|| format!("network file `{}` is malformed", net_path.display()))?;
        let report = network.validate();
        if !report.is_valid() {
            bail!(
                "network file `{}` fails validation:\n  {}",
                net_path.display(),
                report.violations.join("\n  ")
            );
        }
        for warning in &report.warnings {
            eprintln!("warning: {warning}");
        }

        let slack = scenario.horizon.slack.unwrap_or_else(|| 3.0 * network.beta_sum());
        let horizon = TimeHorizon::new(scenario.horizon.t0, scenario.horizon.tf, slack)
            .context("invalid horizon in scenario")?;
        Ok(Self { scenario, dir, network, horizon })
    }

    pub fn read_flows(&self, rel: &Path) -> Result<PathFlowVector> {
        let path = self.dir.join(rel);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read flow file `{}`", path.display()))?;
        let flows: PathFlowVector = serde_json::from_str(&text)
            .with_context(|| format!("flow file `{}` is malformed", path.display()))?;
        for path_id in flows.paths() {
            self.network
                .path(path_id)
                .with_context(|| format!("flow file `{}` references unknown path", path.display()))?;
        }
        Ok(flows)
    }
}
