//! Heavy-light compression of leveled marked DAGs.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dag::{DagPath, DagSpec, MarkedDag, NodeSpec};
use crate::error::{Error, Result};

/// Number of sink-bound paths from each node.
pub fn sigma_counts(dag: &MarkedDag) -> Vec<u128> {
    dag.sigma_counts()
}

/// `true` for heavy arcs: head is internal and carries more than half the
/// tail's paths.
pub fn classify_edges(dag: &MarkedDag, sigma: &[u128]) -> Result<Vec<bool>> {
    let heavy: Vec<bool> = dag
        .arcs()
        .iter()
        .map(|a| !dag.is_sink(a.head) && 2 * sigma[a.head] > sigma[a.tail])
        .collect();
    for u in dag.internal_nodes() {
        if dag.out_arcs(u).iter().filter(|&&a| heavy[a]).count() > 1 {
            return Err(Error::Compression(format!(
                "node {} has two heavy out-arcs",
                dag.nodes()[u].id
            )));
        }
    }
    Ok(heavy)
}

#[derive(Debug, Clone)]
pub struct CompressionResult {
    pub compressed: MarkedDag,
    pub sigma: Vec<u128>,
    pub heavy: Vec<bool>,
    /// Original node index -> compressed node index, for kept nodes.
    pub node_map: Vec<Option<usize>>,
    /// Original arcs making up each compressed arc.
    pub expansion: Vec<Vec<usize>>,
}

/// Serialized compression: the compressed DAG and the path map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionRecord {
    pub dag: DagSpec,
    /// `path_map[i]` is the compressed index of original path `i`.
    pub path_map: Vec<usize>,
}

/// Contracts every heavy-light path `u -> ... -> w` into one arc `uw`,
/// with probability the product along the path and length that of the
/// final light arc. Only nodes reachable from the root are kept.
pub fn compress(dag: &MarkedDag) -> Result<CompressionResult> {
    if dag.nodes().iter().any(|n| n.level.is_none()) {
        return Err(Error::Compression("input DAG is not leveled".into()));
    }
    let sigma = sigma_counts(dag);
    let heavy = classify_edges(dag, &sigma)?;

    let mut keep = vec![false; dag.node_count()];
    keep[dag.root()] = true;
    // (tail, head, omega, theta, original arcs)
    let mut new_arcs: Vec<(usize, usize, f64, f64, Vec<usize>)> = Vec::new();
    for &u in dag.topo_order() {
        if !keep[u] || dag.is_sink(u) {
            continue;
        }
        let mut at = u;
        let mut prefix: Vec<usize> = Vec::new();
        let mut prefix_theta = 1.0;
        loop {
            let mut next = None;
            for &a in dag.out_arcs(at) {
                if heavy[a] {
                    next = Some(a);
                    continue;
                }
                let arc = &dag.arcs()[a];
                let mut via = prefix.clone();
                via.push(a);
                keep[arc.head] = true;
                new_arcs.push((u, arc.head, arc.omega, prefix_theta * arc.theta, via));
            }
            match next {
                Some(a) => {
                    prefix.push(a);
                    prefix_theta *= dag.arcs()[a].theta;
                    at = dag.arcs()[a].head;
                }
                None => break,
            }
        }
    }

    let mut node_map = vec![None; dag.node_count()];
    let mut nodes = Vec::new();
    for (i, n) in dag.nodes().iter().enumerate() {
        if keep[i] {
            node_map[i] = Some(nodes.len());
            nodes.push(NodeSpec {
                id: n.id.clone(),
                level: n.level,
            });
        }
    }
    let id = |u: usize| dag.nodes()[u].id.clone();
    let sinks: BTreeMap<String, usize> = (0..dag.num_points()).map(|p| (id(dag.point_node(p)), p)).collect();
    let spec = DagSpec {
        tau: dag.tau(),
        root: id(dag.root()),
        nodes,
        arcs: new_arcs.iter().map(|(t, h, w, th, _)| (id(*t), id(*h), *w, *th)).collect(),
        sinks,
        metric: dag.to_spec().metric,
    };
    let compressed = MarkedDag::validate(&spec).map_err(|e| match e {
        Error::InvalidDag(v) => Error::Compression(format!("compressed DAG is invalid: {v}")),
        other => other,
    })?;
    Ok(CompressionResult {
        compressed,
        sigma,
        heavy,
        node_map,
        expansion: new_arcs.into_iter().map(|a| a.4).collect(),
    })
}

impl CompressionResult {
    /// `f(gamma)`: the path through the root and the heads of the light arcs of `gamma`.
    pub fn contract_path(&self, original: &MarkedDag, g: &DagPath) -> Result<DagPath> {
        let mut nodes = vec![self.node_map[original.root()].expect("root is kept")];
        for &a in g.arcs() {
            if !self.heavy[a] {
                let head = original.arcs()[a].head;
                nodes.push(self.node_map[head].ok_or_else(|| {
                    Error::InvalidPath("path visits a node missing from the compressed DAG".into())
                })?);
            }
        }
        self.compressed.path_from_nodes(&nodes)
    }

    /// Compressed path index of every original path (both in enumeration order).
    pub fn path_map(&self, original: &MarkedDag) -> Result<Vec<usize>> {
        let index: HashMap<&DagPath, usize> = self
            .compressed
            .paths()?
            .iter()
            .enumerate()
            .map(|(i, p)| (p, i))
            .collect();
        original
            .paths()?
            .iter()
            .map(|g| {
                let c = self.contract_path(original, g)?;
                Ok(index[&c])
            })
            .collect()
    }

    pub fn record(&self, original: &MarkedDag) -> Result<CompressionRecord> {
        Ok(CompressionRecord {
            dag: self.compressed.to_spec(),
            path_map: self.path_map(original)?,
        })
    }
}
