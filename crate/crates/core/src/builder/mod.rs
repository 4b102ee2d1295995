//! Hierarchical-net DAGs over a finite metric.

mod embed;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use embed::{ckr_partition, psi_embedding, PsiSampler, RandomPartition};

use crate::dag::{DagSpec, MarkedDag, MetricRecord, NodeSpec};
use crate::error::{Error, Result};
use crate::metric::MetricSpace;

/// Geometric ratio of the net hierarchy.
pub const NET_TAU: f64 = 12.0;

/// Scale `tau^-k`.
pub fn scale(k: usize) -> f64 {
    NET_TAU.powi(-(k as i32))
}

/// Greedy `eta`-net in selection order.
///
/// Each round picks, among points not yet within `eta` of the net, one with
/// the most points in its closed `eta/3` ball (smallest index on ties).
pub fn greedy_net(m: &MetricSpace, eta: f64) -> Vec<usize> {
    let n = m.len();
    let counts: Vec<usize> = (0..n).map(|x| m.ball_count(x, eta / 3.0)).collect();
    let mut covered = vec![false; n];
    let mut net = Vec::new();
    loop {
        let pick = (0..n)
            .filter(|&x| !covered[x])
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
        let Some(x) = pick else { break };
        net.push(x);
        for (y, c) in covered.iter_mut().enumerate() {
            if m.d(x, y) <= eta {
                *c = true;
            }
        }
    }
    net
}

/// Nets `U_0, ..., U_K` at radii `tau^-k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetHierarchy {
    pub tau: f64,
    /// `levels[k]` lists `U_k` in selection order.
    pub levels: Vec<Vec<usize>>,
    #[serde(skip)]
    member: Vec<Vec<bool>>,
}

impl NetHierarchy {
    pub fn new(m: &MetricSpace) -> Result<Self> {
        if m.len() < 2 {
            return Err(Error::Builder("a net hierarchy needs at least two points".into()));
        }
        let k_max = 1 + (1.0 / m.min_distance()).log(NET_TAU).ceil() as usize;
        let levels: Vec<Vec<usize>> = (0..=k_max).map(|k| greedy_net(m, scale(k))).collect();
        let member = levels
            .iter()
            .map(|net| {
                let mut v = vec![false; m.len()];
                for &u in net {
                    v[u] = true;
                }
                v
            })
            .collect();
        Ok(NetHierarchy {
            tau: NET_TAU,
            levels,
            member,
        })
    }

    /// `K`
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn contains(&self, k: usize, u: usize) -> bool {
        self.member[k][u]
    }

    /// `f_k(S)`: over net points within `2 tau^-k` of `S`, the one with the
    /// largest `tau^-k / 3` ball (smallest index on ties).
    pub fn selector(&self, m: &MetricSpace, k: usize, set: &[usize]) -> Result<usize> {
        let r = scale(k);
        let mut best: Option<(usize, usize)> = None;
        let mut net: Vec<usize> = self.levels[k].clone();
        net.sort_unstable();
        for y in net {
            if !set.iter().any(|&s| m.d(s, y) <= 2.0 * r) {
                continue;
            }
            let c = m.ball_count(y, r / 3.0);
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((y, c));
            }
        }
        best.map(|(y, _)| y)
            .ok_or_else(|| Error::Builder(format!("selector has no candidate at level {k}")))
    }
}

/// Identifier of net node `(u, k)`.
pub fn node_id(u: usize, k: usize) -> String {
    format!("{u}@{k}")
}

/// A built DAG together with the nets it came from.
#[derive(Debug, Clone)]
pub struct NetDag {
    pub dag: MarkedDag,
    pub hierarchy: NetHierarchy,
    /// `node_of[k][u]`: DAG node of `(u, k)` if it survived pruning.
    pub node_of: Vec<BTreeMap<usize, usize>>,
    /// Internal nodes dropped because no sink was reachable from them.
    pub pruned: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarLevel {
    pub k: usize,
    pub radius: f64,
    pub net: Vec<usize>,
    /// `|B(u, radius/3)|` for each net point in `net` order.
    pub ball_counts: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub tau: f64,
    pub pruned: usize,
    pub levels: Vec<SidecarLevel>,
}

impl NetDag {
    pub fn sidecar(&self) -> Sidecar {
        let m = self.dag.metric().expect("built DAGs carry their metric");
        Sidecar {
            tau: self.hierarchy.tau,
            pruned: self.pruned,
            levels: self
                .hierarchy
                .levels
                .iter()
                .enumerate()
                .map(|(k, net)| SidecarLevel {
                    k,
                    radius: scale(k),
                    net: net.clone(),
                    ball_counts: net.iter().map(|&u| m.ball_count(u, scale(k) / 3.0)).collect(),
                })
                .collect(),
        }
    }
}

/// Arcs `(u, u')` of level `k` before pruning: close and ball-dominating.
fn level_arcs(m: &MetricSpace, h: &NetHierarchy, k: usize) -> Vec<(usize, usize)> {
    let r = scale(k);
    let r_next = scale(k + 1);
    let mut out = Vec::new();
    for &u in &h.levels[k] {
        let bu = m.ball_count(u, r / 3.0);
        for &v in &h.levels[k + 1] {
            if m.d(u, v) > 4.0 * r {
                continue;
            }
            let dominated = m
                .ball(v, 6.0 * r_next)
                .into_iter()
                .all(|w| m.ball_count(w, r / 3.0) <= bu);
            if dominated {
                out.push((u, v));
            }
        }
    }
    out
}

/// Builds the hierarchical-net DAG of `m` (with `m` embedded).
///
/// Net nodes from which no sink is reachable are removed and probabilities
/// are normalized over the remaining arcs.
pub fn build_hierarchical_dag(m: &MetricSpace) -> Result<NetDag> {
    let record = MetricRecord {
        points: m.points().to_vec(),
        dist: m.to_rows(),
    };
    if m.len() == 1 {
        let id = node_id(0, 0);
        let dag = MarkedDag::validate(&DagSpec {
            tau: NET_TAU,
            root: id.clone(),
            nodes: vec![NodeSpec {
                id: id.clone(),
                level: Some(0),
            }],
            arcs: Vec::new(),
            sinks: BTreeMap::from([(id, 0)]),
            metric: Some(record),
        })?;
        let hierarchy = NetHierarchy {
            tau: NET_TAU,
            levels: vec![vec![0]],
            member: vec![vec![true]],
        };
        return Ok(NetDag {
            dag,
            hierarchy,
            node_of: vec![BTreeMap::from([(0, 0)])],
            pruned: 0,
        });
    }
    let h = NetHierarchy::new(m)?;
    let k_max = h.depth();
    if h.levels[0].len() != 1 {
        return Err(Error::Builder(format!("top net has {} points", h.levels[0].len())));
    }
    if h.levels[k_max].len() != m.len() {
        return Err(Error::Builder("bottom net is not the whole space".into()));
    }
    let arcs_by_level: Vec<Vec<(usize, usize)>> = (0..k_max).map(|k| level_arcs(m, &h, k)).collect();

    // alive[k][u]: a sink is reachable from (u, k).
    let mut alive: Vec<BTreeMap<usize, bool>> = vec![BTreeMap::new(); k_max + 1];
    for &x in &h.levels[k_max] {
        alive[k_max].insert(x, true);
    }
    for k in (0..k_max).rev() {
        for &u in &h.levels[k] {
            alive[k].insert(u, false);
        }
        for &(u, v) in &arcs_by_level[k] {
            if alive[k + 1][&v] {
                alive[k].insert(u, true);
            }
        }
    }
    let root = h.levels[0][0];
    if !alive[0][&root] {
        return Err(Error::Builder("no sink is reachable from the root".into()));
    }

    // Forward reachability over live arcs.
    let mut reached: Vec<BTreeMap<usize, bool>> = vec![BTreeMap::new(); k_max + 1];
    reached[0].insert(root, true);
    for k in 0..k_max {
        for &(u, v) in &arcs_by_level[k] {
            if reached[k].get(&u).copied().unwrap_or(false) && alive[k + 1][&v] {
                reached[k + 1].insert(v, true);
            }
        }
    }
    for &x in &h.levels[k_max] {
        if !reached[k_max].contains_key(&x) {
            return Err(Error::Builder(format!("sink {} is not reachable", m.points()[x])));
        }
    }

    let mut nodes = Vec::new();
    let mut node_of: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); k_max + 1];
    let mut pruned = 0;
    for (k, net) in h.levels.iter().enumerate() {
        for &u in net {
            if reached[k].contains_key(&u) {
                node_of[k].insert(u, nodes.len());
                nodes.push(NodeSpec {
                    id: node_id(u, k),
                    level: Some(k),
                });
            } else {
                pruned += 1;
            }
        }
    }

    let mut arcs = Vec::new();
    for (k, level) in arcs_by_level.iter().enumerate() {
        let omega = 10.0 * scale(k);
        let r_next = scale(k + 1) / 3.0;
        let mut by_tail: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(u, v) in level {
            if node_of[k].contains_key(&u) && node_of[k + 1].contains_key(&v) {
                by_tail.entry(u).or_default().push(v);
            }
        }
        // Arcs grouped by tail in net order.
        for &u in &h.levels[k] {
            let Some(heads) = by_tail.get(&u) else { continue };
            let weights: Vec<f64> = heads.iter().map(|&v| m.ball_count(v, r_next) as f64).collect();
            let total: f64 = weights.iter().sum();
            for (&v, w) in heads.iter().zip(weights) {
                arcs.push((node_id(u, k), node_id(v, k + 1), omega, w / total));
            }
        }
    }

    let sinks = h.levels[k_max].iter().map(|&x| (node_id(x, k_max), x)).collect();
    let dag = MarkedDag::validate(&DagSpec {
        tau: NET_TAU,
        root: node_id(root, 0),
        nodes,
        arcs,
        sinks,
        metric: Some(record),
    })?;
    Ok(NetDag {
        dag,
        hierarchy: h,
        node_of,
        pruned,
    })
}

/// Same DAG with `theta_uv = sigma(v) / sigma(u)`, so every path has
/// probability `1 / |P_D|`.
pub fn theta_from_sigma(dag: &MarkedDag) -> Result<MarkedDag> {
    let sigma = dag.sigma_counts();
    let theta: Vec<f64> = dag
        .arcs()
        .iter()
        .map(|a| sigma[a.head] as f64 / sigma[a.tail] as f64)
        .collect();
    dag.with_theta(&theta)
}
