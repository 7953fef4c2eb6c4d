//! Test support: randomized instance generators and slow reference
//! implementations used to cross-check the fast paths. Everything here
//! is deterministic given a seed, and deliberately independent of the
//! event-driven loader and the active-set projection it validates.

use std::collections::BTreeMap;

use crate::flow::{CumulativeCurve, PathFlowVector, StepFunction, TimeHorizon};
use crate::net::{Arc, Network, Path, TripTable};
use crate::rng::SplitMix64;

/// A random network of chained and merging paths, plus a feasible
/// random piecewise-constant flow on it. At most `max_arcs` arcs and
/// `max_paths` paths.
pub fn random_instance(
    rng: &mut SplitMix64,
    max_arcs: usize,
    max_paths: usize,
    horizon: &TimeHorizon,
) -> (Network, PathFlowVector) {
    let n_paths = 1 + rng.below(max_paths.max(1));
    let mut arcs: Vec<Arc> = Vec::new();
    let mut nodes: Vec<String> = vec!["n0".to_string()];
    let mut paths = Vec::new();

    for p in 0..n_paths {
        let legs = 1 + rng.below(3);
        let mut arc_ids = Vec::new();
        // start from an existing node so merges happen
        let mut at = nodes[rng.below(nodes.len())].clone();
        let origin = at.clone();
        for _ in 0..legs {
            // reuse an outgoing arc sometimes, otherwise create one
            let reusable: Vec<usize> = arcs
                .iter()
                .enumerate()
                .filter(|(_, a)| a.tail == at)
                .map(|(i, _)| i)
                .collect();
            let arc_idx = if !reusable.is_empty() && rng.next_f64() < 0.4 && arcs.len() < max_arcs {
                reusable[rng.below(reusable.len())]
            } else if arcs.len() < max_arcs {
                // sometimes point at an existing node, so paths merge and
                // the occasional cycle appears
                let head = if rng.next_f64() < 0.25 && nodes.len() > 1 {
                    nodes[rng.below(nodes.len())].clone()
                } else {
                    let fresh = format!("n{}", nodes.len());
                    nodes.push(fresh.clone());
                    fresh
                };
                arcs.push(Arc {
                    id: format!("a{}", arcs.len()),
                    tail: at.clone(),
                    head,
                    alpha: rng.range(0.0, 0.05),
                    beta: rng.range(0.4, 2.0),
                });
                arcs.len() - 1
            } else if !reusable.is_empty() {
                reusable[rng.below(reusable.len())]
            } else {
                break;
            };
            arc_ids.push(arcs[arc_idx].id.clone());
            at = arcs[arc_idx].head.clone();
        }
        if arc_ids.is_empty() {
            continue;
        }
        paths.push(Path { id: format!("p{p}"), od: (origin, at), arcs: arc_ids });
    }
    if paths.is_empty() {
        // degenerate draw: fall back to one fresh arc
        let arc = Arc {
            id: "a0".into(),
            tail: "n0".into(),
            head: "n1".into(),
            alpha: rng.range(0.0, 0.05),
            beta: rng.range(0.4, 2.0),
        };
        nodes = vec!["n0".into(), "n1".into()];
        paths = vec![Path { id: "p0".into(), od: ("n0".into(), "n1".into()), arcs: vec!["a0".into()] }];
        arcs = vec![arc];
    }

    let mut h = PathFlowVector::empty();
    for path in &paths {
        h.insert(path.id.clone(), random_step(rng, horizon, 20.0));
    }
    let mut trips: BTreeMap<(String, String), f64> = BTreeMap::new();
    for path in &paths {
        *trips.entry(path.od.clone()).or_insert(0.0) += h.volume(&path.id);
    }
    // drop zero-volume od pairs; the schema requires positive demand
    let trips: BTreeMap<_, _> = trips.into_iter().filter(|(_, q)| *q > 0.0).collect();
    let net = Network { nodes, arcs, paths, trips: TripTable::new(trips) };
    (net, h)
}

/// Random nonnegative piecewise-constant rate profile on the horizon.
pub fn random_step(rng: &mut SplitMix64, horizon: &TimeHorizon, max_rate: f64) -> StepFunction {
    let pieces = 1 + rng.below(4);
    let mut times: Vec<f64> = (0..=pieces)
        .map(|_| rng.range(horizon.t0, horizon.tf))
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    if times.len() < 2 {
        times = vec![horizon.t0, horizon.tf];
    }
    let rates: Vec<f64> = (0..times.len() - 1).map(|_| rng.range(0.0, max_rate)).collect();
    StepFunction::new(times, rates).unwrap()
}

pub use crate::continuity::random_direction as zero_volume_direction;

/// First-order fixed-step loader for a single arc: cumulative counts
/// sampled on a uniform grid, exits interpolated through the inverse of
/// the sampled exit times. Independent of the event-driven loader.
pub struct GridLoader {
    pub times: Vec<f64>,
    pub taus: Vec<f64>,
    pub exits: Vec<f64>,
}

impl GridLoader {
    pub fn run(arc: &Arc, entry: &CumulativeCurve, t0: f64, end: f64, dt: f64) -> Self {
        assert!(dt > 0.0 && dt < arc.beta, "grid step must stay below the free-flow delay");
        let steps = ((end - t0) / dt).ceil() as usize;
        let times: Vec<f64> = (0..=steps).map(|k| t0 + k as f64 * dt).collect();
        let mut taus: Vec<f64> = Vec::with_capacity(times.len());
        let mut exits: Vec<f64> = Vec::with_capacity(times.len());
        for &t in &times {
            // V(t) = U(τ⁻¹(t)) using the already-computed samples
            let v = if taus.is_empty() || t <= taus[0] {
                0.0
            } else {
                // find j with τ_j ≤ t ≤ τ_{j+1}; τ⁻¹(t) ≤ t - β lies in
                // the computed range because dt < β
                let j = taus.partition_point(|&y| y <= t) - 1;
                let x = if j + 1 < taus.len() {
                    times[j] + (t - taus[j]) / (taus[j + 1] - taus[j]) * dt
                } else {
                    times[j]
                };
                entry.eval(x)
            };
            exits.push(v);
            let x_vol = (entry.eval(t) - v).max(0.0);
            taus.push(t + arc.alpha * x_vol + arc.beta);
        }
        Self { times, taus, exits }
    }

    /// Sampled-and-interpolated path delay for a departure at `t`.
    pub fn delay(&self, t: f64) -> f64 {
        crate::flow::eval_pl(&self.times, &self.taus, t) - t
    }
}

/// Brute-force projection onto `{ y ≥ 0 : Σ w_i y_i = q }` by active-set
/// enumeration over all subsets (dimension ≤ 20 or so). Checks primal
/// feasibility and the KKT sign condition for each candidate and keeps
/// the feasible candidate with the least objective.
pub fn brute_force_projection(values: &[f64], weights: &[f64], q: f64) -> Option<Vec<f64>> {
    let n = values.len();
    assert!(n <= 20, "enumeration explodes past 20 dimensions");
    if q == 0.0 {
        return Some(vec![0.0; n]);
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        // free set: indices allowed to be positive
        let mut swv = 0.0;
        let mut sww = 0.0;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                swv += weights[i] * values[i];
                sww += weights[i] * weights[i];
            }
        }
        let lambda = (swv - q) / sww;
        let mut y = vec![0.0; n];
        let mut ok = true;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                y[i] = values[i] - lambda * weights[i];
                if y[i] < -1e-10 {
                    ok = false;
                    break;
                }
                y[i] = y[i].max(0.0);
            } else {
                // KKT: the multiplier of a clamped coordinate must push it
                // down, i.e. v_i - λ w_i ≤ 0
                if values[i] - lambda * weights[i] > 1e-10 {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let obj: f64 = y.iter().zip(values).map(|(a, b)| (a - b) * (a - b)).sum();
        match &best {
            Some((b, _)) if *b <= obj => {}
            _ => best = Some((obj, y)),
        }
    }
    best.map(|(_, y)| y)
}
