use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::MetricSpace;

use super::{path_cap, MarkedDag};

/// A root-to-sink path, stored as its arc indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DagPath {
    arcs: Vec<usize>,
    sink: usize,
}

impl DagPath {
    pub fn arcs(&self) -> &[usize] {
        &self.arcs
    }

    /// Final node.
    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }
}

impl MarkedDag {
    /// Builds a path from arc indices, checking it runs from the root to a sink.
    pub fn path_from_arcs(&self, arcs: Vec<usize>) -> Result<DagPath> {
        let mut at = self.root();
        for &a in &arcs {
            let arc = self
                .arcs()
                .get(a)
                .ok_or_else(|| Error::InvalidPath(format!("arc index {a} out of range")))?;
            if arc.tail != at {
                return Err(Error::InvalidPath(format!(
                    "arc {a} does not start at {}",
                    self.nodes()[at].id
                )));
            }
            at = arc.head;
        }
        if !self.is_sink(at) {
            return Err(Error::InvalidPath(format!(
                "path ends at internal node {}",
                self.nodes()[at].id
            )));
        }
        Ok(DagPath { arcs, sink: at })
    }

    /// Builds a path from a node sequence starting at the root.
    pub fn path_from_nodes(&self, nodes: &[usize]) -> Result<DagPath> {
        if nodes.first() != Some(&self.root()) {
            return Err(Error::InvalidPath("node sequence must start at the root".into()));
        }
        let arcs = nodes
            .windows(2)
            .map(|w| {
                self.arc_between(w[0], w[1]).ok_or_else(|| {
                    Error::InvalidPath(format!(
                        "no arc {} -> {}",
                        self.nodes()[w[0]].id,
                        self.nodes()[w[1]].id
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.path_from_arcs(arcs)
    }

    pub fn path_nodes(&self, path: &DagPath) -> Vec<usize> {
        let mut out = vec![self.root()];
        out.extend(path.arcs.iter().map(|&a| self.arcs()[a].head));
        out
    }

    /// Point of `X` the path ends at.
    pub fn path_point(&self, path: &DagPath) -> usize {
        self.sink_point(path.sink).expect("paths end at sinks")
    }

    /// `theta(path)`: product of arc probabilities.
    pub fn path_theta(&self, path: &DagPath) -> f64 {
        path.arcs.iter().map(|&a| self.arcs()[a].theta).product()
    }

    /// All root-sink paths in depth-first order (out-arcs in stored order), up to `cap`.
    pub fn enumerate_paths_capped(&self, cap: usize) -> Result<Vec<DagPath>> {
        if self.path_count() > cap as u128 {
            return Err(Error::PathCap { cap });
        }
        let mut out = Vec::new();
        let mut stack = Vec::new();
        self.dfs_paths(self.root(), &mut stack, &mut out);
        Ok(out)
    }

    fn dfs_paths(&self, u: usize, stack: &mut Vec<usize>, out: &mut Vec<DagPath>) {
        if self.is_sink(u) {
            out.push(DagPath {
                arcs: stack.clone(),
                sink: u,
            });
            return;
        }
        for &a in self.out_arcs(u) {
            stack.push(a);
            self.dfs_paths(self.arcs()[a].head, stack, out);
            stack.pop();
        }
    }

    /// Cached enumeration under [`path_cap`].
    pub fn paths(&self) -> Result<&[DagPath]> {
        let cached = self.paths.get_or_init(|| {
            let cap = path_cap();
            self.enumerate_paths_capped(cap).map_err(|_| cap)
        });
        match cached {
            Ok(p) => Ok(p),
            Err(cap) => Err(Error::PathCap { cap: *cap }),
        }
    }

    fn check_path(&self, p: &DagPath) -> Result<()> {
        let ok = p.arcs.iter().all(|&a| a < self.arc_count())
            && self.path_from_arcs(p.arcs.clone()).map(|q| q.sink == p.sink).unwrap_or(false);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidPath("path does not belong to this DAG".into()))
        }
    }

    /// Path ultrametric: the larger of the two arc lengths where the paths split.
    pub fn dag_dist(&self, g1: &DagPath, g2: &DagPath) -> Result<f64> {
        self.check_path(g1)?;
        self.check_path(g2)?;
        Ok(self.dag_dist_unchecked(g1, g2))
    }

    /// [`Self::dag_dist`] without membership checks; both paths must come from this DAG.
    pub fn dag_dist_unchecked(&self, g1: &DagPath, g2: &DagPath) -> f64 {
        for (&a, &b) in g1.arcs.iter().zip(&g2.arcs) {
            if a != b {
                return self.arcs()[a].omega.max(self.arcs()[b].omega);
            }
        }
        0.0
    }

    /// Largest `c` with `dag_dist(p, q) >= c * d(end(p), end(q))` over all path pairs.
    ///
    /// Computed per divergence point: paths splitting at `u` along arcs `a`, `b`
    /// are at distance `max(omega_a, omega_b)` and can end at any pair of
    /// points reachable through `a` and `b`. Returns `+inf` when no pair of
    /// paths ends at distinct points.
    pub fn expanding_constant(&self, metric: &MetricSpace) -> Result<f64> {
        if metric.len() != self.num_points() {
            return Err(Error::Dimension {
                expected: self.num_points(),
                got: metric.len(),
            });
        }
        let reach = self.reachable_points();
        let mut best = f64::INFINITY;
        for u in self.internal_nodes() {
            let outs = self.out_arcs(u);
            for (i, &a) in outs.iter().enumerate() {
                for &b in &outs[i + 1..] {
                    let (arc_a, arc_b) = (&self.arcs()[a], &self.arcs()[b]);
                    let mut far = 0.0f64;
                    for &x in &reach[arc_a.head] {
                        for &y in &reach[arc_b.head] {
                            far = far.max(metric.d(x, y));
                        }
                    }
                    if far > 0.0 {
                        best = best.min(arc_a.omega.max(arc_b.omega) / far);
                    }
                }
            }
        }
        Ok(best)
    }

    /// For each node, the sorted list of points whose sinks it reaches.
    pub fn reachable_points(&self) -> Vec<Vec<usize>> {
        let mut reach: Vec<Vec<usize>> = vec![Vec::new(); self.node_count()];
        for &u in self.topo_order().iter().rev() {
            if let Some(p) = self.sink_point(u) {
                reach[u] = vec![p];
                continue;
            }
            let mut set: Vec<usize> = self
                .out_arcs(u)
                .iter()
                .flat_map(|&a| reach[self.arcs()[a].head].iter().copied())
                .collect();
            set.sort_unstable();
            set.dedup();
            reach[u] = set;
        }
        reach
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{random_layered_dag, LayeredDagParams};
    use crate::metric::uniform_metric;

    #[test]
    fn enumerate_simple_shapes() {
        let c = chain();
        let p = c.paths().unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(c.path_theta(&p[0]), 1.0);

        let t = binary_tree();
        let p = t.paths().unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.iter().all(|g| t.path_theta(g) == 0.25));

        let d = diamond();
        let p = d.paths().unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|g| d.path_theta(g) == 0.5));
    }

    #[test]
    fn theta_induces_a_distribution_on_paths() {
        for seed in 0..20 {
            let d = random_layered_dag(&LayeredDagParams::default(), seed).unwrap();
            let total: f64 = d.paths().unwrap().iter().map(|g| d.path_theta(g)).sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert_eq!(d.paths().unwrap().len() as u128, d.path_count());
            // ln|P| <= information depth
            assert!((d.path_count() as f64).ln() <= d.information_depth() + 1e-9);
            let brute = d
                .paths()
                .unwrap()
                .iter()
                .map(|g| -d.path_theta(g).ln())
                .fold(0.0, f64::max);
            assert!((brute - d.information_depth()).abs() < 1e-9);
            let deepest = d.paths().unwrap().iter().map(|g| g.len()).max().unwrap();
            assert_eq!(deepest, d.combinatorial_depth());
        }
    }

    #[test]
    fn path_cap_is_enforced() {
        let t = binary_tree();
        assert!(t.enumerate_paths_capped(3).is_err());
        assert_eq!(t.enumerate_paths_capped(4).unwrap().len(), 4);
    }

    #[test]
    fn dag_dist_basics() {
        let s = star(3);
        let p = s.paths().unwrap();
        assert_eq!(s.dag_dist(&p[0], &p[0]).unwrap(), 0.0);
        assert_eq!(s.dag_dist(&p[0], &p[2]).unwrap(), 1.0);
        let other = chain();
        assert!(s.dag_dist(&p[0], &other.paths().unwrap()[0]).is_err());
    }

    #[test]
    fn dag_dist_is_an_ultrametric() {
        for seed in 0..10 {
            let d = random_layered_dag(&LayeredDagParams::default(), seed).unwrap();
            let p = d.paths().unwrap();
            for a in p {
                for b in p {
                    assert_eq!(d.dag_dist(a, b).unwrap(), d.dag_dist(b, a).unwrap());
                    for c in p {
                        let ac = d.dag_dist_unchecked(a, c);
                        assert!(ac <= d.dag_dist_unchecked(a, b).max(d.dag_dist_unchecked(b, c)));
                    }
                }
            }
        }
    }

    #[test]
    fn expanding_constant_of_star() {
        let s = star(4);
        let m = uniform_metric(4).unwrap();
        assert_eq!(s.expanding_constant(&m).unwrap(), 1.0);
        let doubled: Vec<f64> = s.arcs().iter().map(|a| 2.0 * a.omega).collect();
        let s2 = s.with_omega(&doubled).unwrap();
        assert_eq!(s2.expanding_constant(&m).unwrap(), 2.0);
    }

    #[test]
    fn expanding_constant_matches_pairwise_enumeration() {
        for seed in 0..10 {
            let params = LayeredDagParams {
                points: 5,
                ..LayeredDagParams::default()
            };
            let d = random_layered_dag(&params, seed).unwrap();
            let m = crate::metric::random_euclidean_metric(5, 2, seed).unwrap();
            let p = d.paths().unwrap();
            let mut brute = f64::INFINITY;
            for a in p {
                for b in p {
                    let (x, y) = (d.path_point(a), d.path_point(b));
                    if x != y {
                        brute = brute.min(d.dag_dist(a, b).unwrap() / m.d(x, y));
                    }
                }
            }
            assert_eq!(d.expanding_constant(&m).unwrap(), brute);
        }
    }
}
