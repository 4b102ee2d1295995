//! Marked DAGs over a finite point set.
//!
//! A [`MarkedDag`] has a single source (the root), its sinks are identified
//! with the points `0..n` of a metric space, each arc carries a length
//! `omega` and a probability `theta` (rows over out-arcs sum to one), and
//! arc lengths shrink geometrically by at least `tau` along every path.
//! Values of this type are always validated.

mod flow;
mod paths;
mod random;
mod unfold;

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use flow::{CondDistribution, UnitFlow};
pub use paths::DagPath;
pub use random::{random_layered_dag, LayeredDagParams};
pub use unfold::Unfolding;

use crate::error::{DagViolation, Error, Result};
use crate::metric::MetricSpace;

/// Default limit on the number of enumerated root-sink paths.
pub const DEFAULT_PATH_CAP: usize = 1_000_000;
/// Tolerance on theta row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Relative slack on the geometric-decay check (rounding in `10 * tau^-k`).
const GEOMETRIC_SLACK: f64 = 1e-12;

/// Path cap, overridable through `MTS_PATH_CAP`.
pub fn path_cap() -> usize {
    std::env::var("MTS_PATH_CAP")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_PATH_CAP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
}

/// Metric stored next to a DAG so that downstream tools can recover it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub points: Vec<String>,
    pub dist: Vec<Vec<f64>>,
}

/// Serialized form of a marked DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagSpec {
    pub tau: f64,
    pub root: String,
    pub nodes: Vec<NodeSpec>,
    /// `[tail, head, omega, theta]`
    pub arcs: Vec<(String, String, f64, f64)>,
    /// sink node id -> point index
    pub sinks: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricRecord>,
}

impl DagSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagArc {
    pub tail: usize,
    pub head: usize,
    pub omega: f64,
    pub theta: f64,
    /// `1 + ln(1/theta)`
    pub eta: f64,
    /// `theta / eta`
    pub delta: f64,
}

impl DagArc {
    fn new(tail: usize, head: usize, omega: f64, theta: f64) -> Self {
        let eta = 1.0 - theta.ln();
        DagArc {
            tail,
            head,
            omega,
            theta,
            eta,
            delta: theta / eta,
        }
    }

    /// `ln(1/theta)`
    pub fn info(&self) -> f64 {
        -self.theta.ln()
    }
}

#[derive(Debug, Clone)]
pub struct MarkedDag {
    tau: f64,
    nodes: Vec<Node>,
    arcs: Vec<DagArc>,
    out_arcs: Vec<Vec<usize>>,
    in_arcs: Vec<Vec<usize>>,
    root: usize,
    sink_point: Vec<Option<usize>>,
    point_sink: Vec<usize>,
    topo: Vec<usize>,
    index: HashMap<String, usize>,
    arc_index: HashMap<(usize, usize), usize>,
    metric: Option<MetricSpace>,
    paths: OnceLock<std::result::Result<Vec<DagPath>, usize>>,
}

impl MarkedDag {
    /// Checks every structural invariant, reporting the first violation.
    pub fn validate(spec: &DagSpec) -> Result<Self> {
        if spec.nodes.is_empty() {
            return Err(DagViolation::Empty.into());
        }
        if !(spec.tau >= 4.0) {
            return Err(DagViolation::TauTooSmall(spec.tau).into());
        }
        let mut index = HashMap::with_capacity(spec.nodes.len());
        let nodes: Vec<Node> = spec
            .nodes
            .iter()
            .map(|n| Node {
                id: n.id.clone(),
                level: n.level,
            })
            .collect();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(DagViolation::DuplicateNode(n.id.clone()).into());
            }
        }
        let lookup = |id: &str| -> Result<usize> {
            index
                .get(id)
                .copied()
                .ok_or_else(|| DagViolation::UnknownNode(id.to_owned()).into())
        };
        let nv = nodes.len();
        let mut arcs = Vec::with_capacity(spec.arcs.len());
        let mut arc_index = HashMap::with_capacity(spec.arcs.len());
        let mut out_arcs = vec![Vec::new(); nv];
        let mut in_arcs = vec![Vec::new(); nv];
        for (tail_id, head_id, omega, theta) in &spec.arcs {
            let tail = lookup(tail_id)?;
            let head = lookup(head_id)?;
            if tail == head {
                return Err(DagViolation::SelfLoop(tail_id.clone()).into());
            }
            if !(omega.is_finite() && *omega > 0.0) {
                return Err(DagViolation::NonPositiveOmega {
                    tail: tail_id.clone(),
                    head: head_id.clone(),
                    omega: *omega,
                }
                .into());
            }
            if !(*theta > 0.0 && *theta <= 1.0) {
                return Err(DagViolation::ThetaOutOfRange {
                    tail: tail_id.clone(),
                    head: head_id.clone(),
                    theta: *theta,
                }
                .into());
            }
            let a = arcs.len();
            if arc_index.insert((tail, head), a).is_some() {
                return Err(DagViolation::ParallelArc {
                    tail: tail_id.clone(),
                    head: head_id.clone(),
                }
                .into());
            }
            arcs.push(DagArc::new(tail, head, *omega, *theta));
            out_arcs[tail].push(a);
            in_arcs[head].push(a);
        }

        let root = lookup(&spec.root)?;
        if !in_arcs[root].is_empty() {
            return Err(DagViolation::RootHasInArc(spec.root.clone()).into());
        }
        let sources: Vec<String> = (0..nv)
            .filter(|&u| in_arcs[u].is_empty())
            .map(|u| nodes[u].id.clone())
            .collect();
        if sources.len() > 1 {
            return Err(DagViolation::MultipleSources(sources).into());
        }

        // Kahn's algorithm; queue order keeps the topological order deterministic.
        let mut indeg: Vec<usize> = in_arcs.iter().map(Vec::len).collect();
        let mut topo = Vec::with_capacity(nv);
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            topo.push(u);
            for &a in &out_arcs[u] {
                let v = arcs[a].head;
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        if topo.len() != nv {
            // With a single source, anything left over sits on or behind a cycle.
            return Err(DagViolation::Cycle.into());
        }

        let mut sink_point = vec![None; nv];
        let n_points = spec.sinks.len();
        let mut point_sink = vec![usize::MAX; n_points];
        for (id, &p) in &spec.sinks {
            let u = lookup(id)?;
            if !out_arcs[u].is_empty() {
                return Err(DagViolation::SinkMismatch(format!("declared sink {id} has out-arcs")).into());
            }
            if p >= n_points || point_sink[p] != usize::MAX {
                return Err(DagViolation::SinkMismatch(format!(
                    "point index {p} of sink {id} is out of range or duplicated"
                ))
                .into());
            }
            point_sink[p] = u;
            sink_point[u] = Some(p);
        }
        for u in 0..nv {
            if out_arcs[u].is_empty() && sink_point[u].is_none() {
                return Err(DagViolation::SinkMismatch(format!(
                    "node {} has no out-arcs but is not a declared sink",
                    nodes[u].id
                ))
                .into());
            }
        }

        for u in 0..nv {
            if out_arcs[u].is_empty() {
                continue;
            }
            let sum: f64 = out_arcs[u].iter().map(|&a| arcs[a].theta).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(DagViolation::ThetaRowSum {
                    node: nodes[u].id.clone(),
                    sum,
                }
                .into());
            }
        }

        for a in &arcs {
            for &b in &out_arcs[a.head] {
                let next = &arcs[b];
                let name = |i: usize| nodes[i].id.clone();
                if !(a.omega > next.omega) {
                    return Err(DagViolation::NonMonotoneOmega {
                        tail: name(a.tail),
                        mid: name(a.head),
                        head: name(next.head),
                    }
                    .into());
                }
                if a.omega < spec.tau * next.omega * (1.0 - GEOMETRIC_SLACK) {
                    return Err(DagViolation::NotGeometric {
                        tail: name(a.tail),
                        mid: name(a.head),
                        head: name(next.head),
                        ratio: a.omega / next.omega,
                        tau: spec.tau,
                    }
                    .into());
                }
            }
        }

        let metric = match &spec.metric {
            None => None,
            Some(rec) => {
                let m = MetricSpace::validate_and_normalize(&rec.dist, Some(rec.points.clone()))?;
                if m.len() != n_points {
                    return Err(DagViolation::SinkMismatch(format!(
                        "embedded metric has {} points but the DAG has {n_points} sinks",
                        m.len()
                    ))
                    .into());
                }
                Some(m)
            }
        };

        Ok(MarkedDag {
            tau: spec.tau,
            nodes,
            arcs,
            out_arcs,
            in_arcs,
            root,
            sink_point,
            point_sink,
            topo,
            index,
            arc_index,
            metric,
            paths: OnceLock::new(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::validate(&DagSpec::from_json(text)?)
    }

    pub fn to_spec(&self) -> DagSpec {
        DagSpec {
            tau: self.tau,
            root: self.nodes[self.root].id.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSpec {
                    id: n.id.clone(),
                    level: n.level,
                })
                .collect(),
            arcs: self
                .arcs
                .iter()
                .map(|a| {
                    (
                        self.nodes[a.tail].id.clone(),
                        self.nodes[a.head].id.clone(),
                        a.omega,
                        a.theta,
                    )
                })
                .collect(),
            sinks: self
                .point_sink
                .iter()
                .enumerate()
                .map(|(p, &u)| (self.nodes[u].id.clone(), p))
                .collect(),
            metric: self.metric.as_ref().map(|m| MetricRecord {
                points: m.points().to_vec(),
                dist: m.to_rows(),
            }),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.to_spec().to_json()
    }

    /// Same DAG with a metric attached (or replaced).
    pub fn with_metric(&self, metric: &MetricSpace) -> Result<Self> {
        let mut spec = self.to_spec();
        spec.metric = Some(MetricRecord {
            points: metric.points().to_vec(),
            dist: metric.to_rows(),
        });
        Self::validate(&spec)
    }

    /// Same structure with new arc probabilities (indexed like [`Self::arcs`]).
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let mut spec = self.to_spec();
        if theta.len() != spec.arcs.len() {
            return Err(Error::Dimension {
                expected: spec.arcs.len(),
                got: theta.len(),
            });
        }
        for (arc, &t) in spec.arcs.iter_mut().zip(theta) {
            arc.3 = t;
        }
        Self::validate(&spec)
    }

    /// Same structure with new arc lengths.
    pub fn with_omega(&self, omega: &[f64]) -> Result<Self> {
        let mut spec = self.to_spec();
        if omega.len() != spec.arcs.len() {
            return Err(Error::Dimension {
                expected: spec.arcs.len(),
                got: omega.len(),
            });
        }
        for (arc, &w) in spec.arcs.iter_mut().zip(omega) {
            arc.2 = w;
        }
        Self::validate(&spec)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn arcs(&self) -> &[DagArc] {
        &self.arcs
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn arc_between(&self, tail: usize, head: usize) -> Option<usize> {
        self.arc_index.get(&(tail, head)).copied()
    }

    pub fn out_arcs(&self, u: usize) -> &[usize] {
        &self.out_arcs[u]
    }

    pub fn in_arcs(&self, u: usize) -> &[usize] {
        &self.in_arcs[u]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn is_sink(&self, u: usize) -> bool {
        self.sink_point[u].is_some()
    }

    pub fn sink_point(&self, u: usize) -> Option<usize> {
        self.sink_point[u]
    }

    /// Sink node of point `p`.
    pub fn point_node(&self, p: usize) -> usize {
        self.point_sink[p]
    }

    pub fn num_points(&self) -> usize {
        self.point_sink.len()
    }

    /// All nodes, root first, every arc pointing forward.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// Internal (non-sink) nodes in topological order.
    pub fn internal_nodes(&self) -> impl DoubleEndedIterator<Item = usize> + '_ {
        self.topo.iter().copied().filter(|&u| !self.is_sink(u))
    }

    pub fn metric(&self) -> Option<&MetricSpace> {
        self.metric.as_ref()
    }

    pub fn omega_min(&self) -> f64 {
        self.arcs.iter().map(|a| a.omega).fold(f64::INFINITY, f64::min)
    }

    pub fn is_tree(&self) -> bool {
        self.in_arcs.iter().all(|v| v.len() <= 1)
    }

    /// Combinatorial depth: most arcs on a root-sink path.
    pub fn combinatorial_depth(&self) -> usize {
        let mut best = vec![0usize; self.nodes.len()];
        for &u in self.topo.iter().rev() {
            best[u] = self.out_arcs[u]
                .iter()
                .map(|&a| 1 + best[self.arcs[a].head])
                .max()
                .unwrap_or(0);
        }
        best[self.root]
    }

    /// Information depth: largest `ln(1/theta(path))` over root-sink paths.
    pub fn information_depth(&self) -> f64 {
        let mut best = vec![0.0f64; self.nodes.len()];
        for &u in self.topo.iter().rev() {
            best[u] = self.out_arcs[u]
                .iter()
                .map(|&a| self.arcs[a].info() + best[self.arcs[a].head])
                .fold(0.0, f64::max);
        }
        best[self.root]
    }

    /// Number of paths from each node to a sink (saturating).
    pub fn sigma_counts(&self) -> Vec<u128> {
        let mut sigma = vec![0u128; self.nodes.len()];
        for &u in self.topo.iter().rev() {
            sigma[u] = if self.is_sink(u) {
                1
            } else {
                self.out_arcs[u]
                    .iter()
                    .fold(0u128, |acc, &a| acc.saturating_add(sigma[self.arcs[a].head]))
            };
        }
        sigma
    }

    /// `|P_D|`, computed without enumeration.
    pub fn path_count(&self) -> u128 {
        self.sigma_counts()[self.root]
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn single_arc_is_valid() {
        let d = single_arc();
        assert_eq!(d.num_points(), 1);
        assert_eq!(d.combinatorial_depth(), 1);
        assert_eq!(d.information_depth(), 0.0);
    }

    #[test]
    fn theta_row_sum_is_checked() {
        let s = spec(
            4.0,
            "r",
            &["r", "x", "y"],
            &[("r", "x", 1.0, 0.6), ("r", "y", 1.0, 0.6)],
            &["x", "y"],
        );
        match MarkedDag::validate(&s).unwrap_err() {
            Error::InvalidDag(DagViolation::ThetaRowSum { sum, .. }) => assert!((sum - 1.2).abs() < 1e-12),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn geometric_decay_is_checked() {
        let s = spec(
            4.0,
            "r",
            &["r", "a", "x"],
            &[("r", "a", 1.0, 1.0), ("a", "x", 0.5, 1.0)],
            &["x"],
        );
        assert!(matches!(
            MarkedDag::validate(&s).unwrap_err(),
            Error::InvalidDag(DagViolation::NotGeometric { .. })
        ));
        let s = spec(
            4.0,
            "r",
            &["r", "a", "x"],
            &[("r", "a", 1.0, 1.0), ("a", "x", 2.0, 1.0)],
            &["x"],
        );
        assert!(matches!(
            MarkedDag::validate(&s).unwrap_err(),
            Error::InvalidDag(DagViolation::NonMonotoneOmega { .. })
        ));
    }

    #[test]
    fn structural_errors() {
        let two_sources = spec(
            4.0,
            "r",
            &["r", "s", "x"],
            &[("r", "x", 1.0, 1.0), ("s", "x", 1.0, 1.0)],
            &["x"],
        );
        assert!(matches!(
            MarkedDag::validate(&two_sources).unwrap_err(),
            Error::InvalidDag(DagViolation::MultipleSources(_))
        ));
        let cycle = spec(
            4.0,
            "r",
            &["r", "a", "b", "x"],
            &[
                ("r", "a", 64.0, 1.0),
                ("a", "b", 16.0, 0.5),
                ("b", "a", 4.0, 0.5),
                ("a", "x", 1.0, 0.5),
                ("b", "x", 1.0, 0.5),
            ],
            &["x"],
        );
        assert!(matches!(
            MarkedDag::validate(&cycle).unwrap_err(),
            Error::InvalidDag(DagViolation::Cycle)
        ));
        let undeclared_sink = spec(4.0, "r", &["r", "x"], &[("r", "x", 1.0, 1.0)], &[]);
        assert!(matches!(
            MarkedDag::validate(&undeclared_sink).unwrap_err(),
            Error::InvalidDag(DagViolation::SinkMismatch(_))
        ));
        let zero_theta = spec(
            4.0,
            "r",
            &["r", "x", "y"],
            &[("r", "x", 1.0, 1.0), ("r", "y", 1.0, 0.0)],
            &["x", "y"],
        );
        assert!(matches!(
            MarkedDag::validate(&zero_theta).unwrap_err(),
            Error::InvalidDag(DagViolation::ThetaOutOfRange { .. })
        ));
        let small_tau = spec(3.0, "r", &["r", "x"], &[("r", "x", 1.0, 1.0)], &["x"]);
        assert!(matches!(
            MarkedDag::validate(&small_tau).unwrap_err(),
            Error::InvalidDag(DagViolation::TauTooSmall(_))
        ));
    }

    #[test]
    fn single_node_dag() {
        let d = MarkedDag::validate(&spec(12.0, "x", &["x"], &[], &["x"])).unwrap();
        assert_eq!(d.combinatorial_depth(), 0);
        assert_eq!(d.path_count(), 1);
        assert_eq!(d.internal_nodes().count(), 0);
    }

    #[test]
    fn depths() {
        let c = chain();
        assert_eq!(c.combinatorial_depth(), 3);
        assert_eq!(c.information_depth(), 0.0);
        let t = binary_tree();
        assert_eq!(t.combinatorial_depth(), 2);
        assert!((t.information_depth() - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let d = random_layered_dag(&LayeredDagParams::default(), 17).unwrap();
        let text = d.to_json().unwrap();
        let back = MarkedDag::from_json(&text).unwrap();
        assert_eq!(back.to_spec(), d.to_spec());
        for (a, b) in d.arcs().iter().zip(back.arcs()) {
            assert_eq!(a.omega.to_bits(), b.omega.to_bits());
            assert_eq!(a.theta.to_bits(), b.theta.to_bits());
        }
        assert_eq!(back.to_json().unwrap(), text);
    }
}
