//! Network structure: arcs with affine delays, enumerated paths, and the
//! fixed trip table.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed arc with affine traversal delay `D(x) = alpha * x + beta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub id: String,
    pub tail: String,
    pub head: String,
    /// Delay slope in time per unit volume, nonnegative.
    pub alpha: f64,
    /// Free-flow delay, strictly positive.
    pub beta: f64,
}

/// An ordered arc sequence connecting an origin-destination pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub id: String,
    pub od: (String, String),
    pub arcs: Vec<String>,
}

/// Fixed travel demand volumes per origin-destination pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TripEntry>", into = "Vec<TripEntry>")]
pub struct TripTable {
    entries: BTreeMap<(String, String), f64>,
}

#[derive(Serialize, Deserialize)]
struct TripEntry {
    od: (String, String),
    q: f64,
}

impl TryFrom<Vec<TripEntry>> for TripTable {
    type Error = Error;
    fn try_from(list: Vec<TripEntry>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for e in list {
            if entries.insert(e.od.clone(), e.q).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate trip entry for od ({}, {})",
                    e.od.0, e.od.1
                )));
            }
        }
        Ok(Self { entries })
    }
}

impl From<TripTable> for Vec<TripEntry> {
    fn from(t: TripTable) -> Self {
        t.entries.into_iter().map(|(od, q)| TripEntry { od, q }).collect()
    }
}

impl TripTable {
    pub fn new(entries: BTreeMap<(String, String), f64>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(String, String), &f64)> {
        self.entries.iter()
    }

    pub fn demand(&self, od: &(String, String)) -> Option<f64> {
        self.entries.get(od).copied()
    }

    pub fn ods(&self) -> impl Iterator<Item = &(String, String)> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The network `(A, V)` together with the employed path set and trips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub nodes: Vec<String>,
    pub arcs: Vec<Arc>,
    pub paths: Vec<Path>,
    pub trips: TripTable,
}

/// Structural consistency findings; empty `violations` means valid.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl Network {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn arc(&self, id: &str) -> Result<&Arc> {
        self.arcs
            .iter()
            .find(|a| a.id == id)
            .ok_or_else(|| Error::UnknownArc(id.to_string()))
    }

    pub fn path(&self, id: &str) -> Result<&Path> {
        self.paths
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::UnknownPath(id.to_string()))
    }

    pub fn trips(&self) -> &TripTable {
        &self.trips
    }

    pub fn paths_for_od<'a>(&'a self, od: &'a (String, String)) -> impl Iterator<Item = &'a Path> {
        self.paths.iter().filter(move |p| &p.od == od)
    }

    /// Arc-path incidence: 1 iff arc `a` belongs to path `p`.
    pub fn incidence(&self, arc_id: &str, path_id: &str) -> Result<u8> {
        self.arc(arc_id)?;
        let path = self.path(path_id)?;
        Ok(u8::from(path.arcs.iter().any(|a| a == arc_id)))
    }

    /// Arcs that immediately precede `arc_id` on some path.
    pub fn upstream_arcs(&self, arc_id: &str) -> Result<BTreeSet<String>> {
        self.arc(arc_id)?;
        let mut up = BTreeSet::new();
        for path in &self.paths {
            for pair in path.arcs.windows(2) {
                if pair[1] == arc_id {
                    up.insert(pair[0].clone());
                }
            }
        }
        Ok(up)
    }

    pub fn min_beta(&self) -> f64 {
        self.arcs.iter().map(|a| a.beta).fold(f64::INFINITY, f64::min)
    }

    pub fn beta_sum(&self) -> f64 {
        self.arcs.iter().map(|a| a.beta).sum()
    }

    /// Checks every structural invariant and reports violations by
    /// entity. Side-effect free; idempotent.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let nodes: BTreeSet<&str> = self.nodes.iter().map(String::as_str).collect();
        let mut arc_ids = BTreeSet::new();

        for arc in &self.arcs {
            if !arc_ids.insert(arc.id.as_str()) {
                report.violations.push(format!("arc `{}`: duplicate id", arc.id));
            }
            if !(arc.beta > 0.0) {
                report
                    .violations
                    .push(format!("arc `{}`: beta must be strictly positive, got {}", arc.id, arc.beta));
            }
            if !(arc.alpha >= 0.0) {
                report
                    .violations
                    .push(format!("arc `{}`: alpha must be nonnegative, got {}", arc.id, arc.alpha));
            }
            for node in [&arc.tail, &arc.head] {
                if !nodes.contains(node.as_str()) {
                    report
                        .violations
                        .push(format!("arc `{}`: unknown node `{}`", arc.id, node));
                }
            }
        }

        let mut path_ids = BTreeSet::new();
        for path in &self.paths {
            if !path_ids.insert(path.id.as_str()) {
                report.violations.push(format!("path `{}`: duplicate id", path.id));
            }
            if path.arcs.is_empty() {
                report.violations.push(format!("path `{}`: empty arc list", path.id));
                continue;
            }
            let mut resolved = Vec::with_capacity(path.arcs.len());
            let mut missing = false;
            for arc_id in &path.arcs {
                match self.arc(arc_id) {
                    Ok(a) => resolved.push(a),
                    Err(_) => {
                        report
                            .violations
                            .push(format!("path `{}`: unknown arc `{}`", path.id, arc_id));
                        missing = true;
                    }
                }
            }
            if missing {
                continue;
            }
            for pair in resolved.windows(2) {
                if pair[0].head != pair[1].tail {
                    report.violations.push(format!(
                        "path `{}`: arcs `{}` and `{}` are not connected head to tail",
                        path.id, pair[0].id, pair[1].id
                    ));
                }
            }
            if resolved[0].tail != path.od.0 {
                report.violations.push(format!(
                    "path `{}`: first arc starts at `{}`, od origin is `{}`",
                    path.id, resolved[0].tail, path.od.0
                ));
            }
            if resolved.last().unwrap().head != path.od.1 {
                report.violations.push(format!(
                    "path `{}`: last arc ends at `{}`, od destination is `{}`",
                    path.id,
                    resolved.last().unwrap().head,
                    path.od.1
                ));
            }
            let mut visited = BTreeSet::new();
            visited.insert(resolved[0].tail.as_str());
            for a in &resolved {
                if !visited.insert(a.head.as_str()) {
                    report
                        .warnings
                        .push(format!("path `{}`: revisits node `{}`", path.id, a.head));
                }
            }
            if self.trips.demand(&path.od).is_none() {
                report.warnings.push(format!(
                    "path `{}`: od ({}, {}) has no trip entry",
                    path.id, path.od.0, path.od.1
                ));
            }
        }

        for (od, &q) in self.trips.entries() {
            if !(q > 0.0) {
                report.violations.push(format!(
                    "trip ({}, {}): demand must be strictly positive, got {q}",
                    od.0, od.1
                ));
            }
            if self.paths_for_od(od).next().is_none() {
                report
                    .violations
                    .push(format!("trip ({}, {}): no path connects this od pair", od.0, od.1));
            }
        }

        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_arc_net(beta: f64) -> Network {
        Network {
            nodes: vec!["1".into(), "2".into()],
            arcs: vec![Arc {
                id: "a".into(),
                tail: "1".into(),
                head: "2".into(),
                alpha: 0.01,
                beta,
            }],
            paths: vec![Path {
                id: "p".into(),
                od: ("1".into(), "2".into()),
                arcs: vec!["a".into()],
            }],
            trips: TripTable::new([(("1".into(), "2".into()), 10.0)].into()),
        }
    }

    #[test]
    fn minimal_network_is_valid() {
        let report = single_arc_net(1.0).validate();
        assert!(report.is_valid(), "{:?}", report.violations);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn zero_beta_is_reported() {
        let report = single_arc_net(0.0).validate();
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("beta must be strictly positive")));
    }

    #[test]
    fn disconnected_path_is_reported() {
        let mut net = single_arc_net(1.0);
        net.nodes.push("3".into());
        net.arcs.push(Arc {
            id: "b".into(),
            tail: "3".into(),
            head: "2".into(),
            alpha: 0.0,
            beta: 1.0,
        });
        net.paths[0].arcs = vec!["a".into(), "b".into()];
        let report = net.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("not connected head to tail")));
    }

    #[test]
    fn trip_without_path_is_reported() {
        let mut net = single_arc_net(1.0);
        net.paths.clear();
        let report = net.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("no path connects")));
    }

    #[test]
    fn incidence_membership() {
        let mut net = single_arc_net(1.0);
        net.nodes.push("3".into());
        net.arcs.push(Arc {
            id: "b".into(),
            tail: "2".into(),
            head: "3".into(),
            alpha: 0.0,
            beta: 2.0,
        });
        net.arcs.push(Arc {
            id: "c".into(),
            tail: "1".into(),
            head: "3".into(),
            alpha: 0.0,
            beta: 5.0,
        });
        net.paths[0].arcs = vec!["a".into(), "b".into()];
        net.paths[0].od = ("1".into(), "3".into());
        assert_eq!(net.incidence("a", "p").unwrap(), 1);
        assert_eq!(net.incidence("b", "p").unwrap(), 1);
        assert_eq!(net.incidence("c", "p").unwrap(), 0);
        assert!(matches!(net.incidence("zzz", "p"), Err(Error::UnknownArc(_))));
        assert!(matches!(net.incidence("a", "zzz"), Err(Error::UnknownPath(_))));
    }

    #[test]
    fn upstream_of_chain_and_first_arc() {
        let mut net = single_arc_net(1.0);
        net.nodes.push("3".into());
        net.arcs.push(Arc {
            id: "b".into(),
            tail: "2".into(),
            head: "3".into(),
            alpha: 0.0,
            beta: 2.0,
        });
        net.paths[0].arcs = vec!["a".into(), "b".into()];
        net.paths[0].od = ("1".into(), "3".into());
        assert_eq!(
            net.upstream_arcs("b").unwrap(),
            BTreeSet::from(["a".to_string()])
        );
        assert!(net.upstream_arcs("a").unwrap().is_empty());
        assert!(net.upstream_arcs("nope").is_err());
    }

    #[test]
    fn upstream_of_merge() {
        // diamond: two branches into a shared final arc
        let net = Network {
            nodes: vec!["s".into(), "m1".into(), "m2".into(), "t".into(), "u".into()],
            arcs: vec![
                Arc { id: "a1".into(), tail: "s".into(), head: "t".into(), alpha: 0.0, beta: 1.0 },
                Arc { id: "a2".into(), tail: "m1".into(), head: "t".into(), alpha: 0.0, beta: 1.0 },
                Arc { id: "a3".into(), tail: "t".into(), head: "u".into(), alpha: 0.0, beta: 1.0 },
                Arc { id: "a0".into(), tail: "s".into(), head: "m1".into(), alpha: 0.0, beta: 1.0 },
            ],
            paths: vec![
                Path { id: "p1".into(), od: ("s".into(), "u".into()), arcs: vec!["a1".into(), "a3".into()] },
                Path { id: "p2".into(), od: ("s".into(), "u".into()), arcs: vec!["a0".into(), "a2".into(), "a3".into()] },
            ],
            trips: TripTable::new([(("s".into(), "u".into()), 1.0)].into()),
        };
        assert!(net.validate().is_valid());
        assert_eq!(
            net.upstream_arcs("a3").unwrap(),
            BTreeSet::from(["a1".to_string(), "a2".to_string()])
        );
    }

    #[test]
    fn validate_is_idempotent() {
        let net = single_arc_net(0.0);
        let a = net.validate();
        let b = net.validate();
        assert_eq!(a.violations, b.violations);
        assert_eq!(a.warnings, b.warnings);
    }

    #[test]
    fn json_schema_field_names() {
        let net = single_arc_net(1.0);
        let json = net.to_json().unwrap();
        for field in ["\"nodes\"", "\"arcs\"", "\"tail\"", "\"head\"", "\"alpha\"", "\"beta\"", "\"paths\"", "\"od\"", "\"trips\"", "\"q\""] {
            assert!(json.contains(field), "missing {field} in {json}");
        }
        let back = Network::from_json(&json).unwrap();
        assert_eq!(net, back);
    }
}
