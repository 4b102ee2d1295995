use std::collections::BTreeMap;

use crate::error::Result;

use super::{CondDistribution, DagSpec, MarkedDag, NodeSpec, UnitFlow};

/// The tree of root-anchored path prefixes of a DAG.
///
/// Tree point `i` is DAG path `i` (in [`MarkedDag::paths`] order), and each
/// tree arc copies the length and probability of the DAG arc it came from.
#[derive(Debug, Clone)]
pub struct Unfolding {
    tree: MarkedDag,
    origin: Vec<usize>,
    leaf_point: Vec<usize>,
}

impl Unfolding {
    pub fn new(dag: &MarkedDag) -> Result<Self> {
        let paths = dag.paths()?;
        let mut nodes = vec![NodeSpec {
            id: dag.nodes()[dag.root()].id.clone(),
            level: Some(0),
        }];
        let mut arcs = Vec::new();
        let mut origin = Vec::new();
        let mut sinks = BTreeMap::new();
        let mut leaf_point = Vec::with_capacity(paths.len());
        // Paths come in depth-first order, so shared prefixes are contiguous.
        let mut prev: Vec<usize> = Vec::new();
        let mut prefix_ids: Vec<String> = vec![nodes[0].id.clone()];
        for (i, p) in paths.iter().enumerate() {
            let common = prev.iter().zip(p.arcs()).take_while(|(a, b)| a == b).count();
            prefix_ids.truncate(common + 1);
            for (depth, &a) in p.arcs().iter().enumerate().skip(common) {
                let arc = &dag.arcs()[a];
                let id = format!("{}>{}", prefix_ids[depth], dag.nodes()[arc.head].id);
                nodes.push(NodeSpec {
                    id: id.clone(),
                    level: Some(depth + 1),
                });
                arcs.push((prefix_ids[depth].clone(), id.clone(), arc.omega, arc.theta));
                origin.push(a);
                prefix_ids.push(id);
            }
            sinks.insert(prefix_ids.last().unwrap().clone(), i);
            leaf_point.push(dag.path_point(p));
            prev = p.arcs().to_vec();
        }
        let tree = MarkedDag::validate(&DagSpec {
            tau: dag.tau(),
            root: nodes[0].id.clone(),
            nodes,
            arcs,
            sinks,
            metric: None,
        })?;
        Ok(Unfolding {
            tree,
            origin,
            leaf_point,
        })
    }

    pub fn tree(&self) -> &MarkedDag {
        &self.tree
    }

    /// DAG arc each tree arc copies.
    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    /// Point of `X` at the end of each tree leaf (= DAG path).
    pub fn leaf_point(&self) -> &[usize] {
        &self.leaf_point
    }

    pub fn lift_q(&self, q: &CondDistribution) -> CondDistribution {
        CondDistribution::from_raw(self.origin.iter().map(|&a| q.values()[a]).collect())
    }

    /// Cost over tree leaves induced by a cost over points.
    pub fn lift_cost(&self, cost: &[f64]) -> Vec<f64> {
        self.leaf_point.iter().map(|&x| cost[x]).collect()
    }

    /// DAG flow obtained by summing tree arcs over their origins.
    pub fn project_flow(&self, dag: &MarkedDag, f: &UnitFlow) -> UnitFlow {
        let mut v = vec![0.0; dag.arc_count()];
        for (ta, &a) in self.origin.iter().enumerate() {
            v[a] += f.values()[ta];
        }
        UnitFlow::new(dag, v).expect("projection of a unit flow is a unit flow")
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{random_layered_dag, LayeredDagParams};
    use super::*;

    #[test]
    fn diamond_unfolds_into_two_leaves() {
        let d = diamond();
        let u = Unfolding::new(&d).unwrap();
        assert!(u.tree().is_tree());
        assert_eq!(u.tree().num_points(), 2);
        assert_eq!(u.leaf_point(), &[0, 0]);
        assert_eq!(u.tree().arc_count(), 4);
    }

    #[test]
    fn unfolding_preserves_path_structure() {
        for seed in 0..15 {
            let d = random_layered_dag(&LayeredDagParams::default(), seed).unwrap();
            let u = Unfolding::new(&d).unwrap();
            let t = u.tree();
            assert!(t.is_tree());
            let dp = d.paths().unwrap();
            let tp = t.paths().unwrap();
            assert_eq!(dp.len(), tp.len());
            for (i, (a, b)) in dp.iter().zip(tp).enumerate() {
                let mapped: Vec<usize> = b.arcs().iter().map(|&x| u.origin()[x]).collect();
                assert_eq!(mapped, a.arcs());
                assert_eq!(t.path_point(b), i);
                assert_eq!(d.path_theta(a).to_bits(), t.path_theta(b).to_bits());
            }
            for (i, a) in dp.iter().enumerate() {
                for (j, b) in dp.iter().enumerate() {
                    assert_eq!(d.dag_dist_unchecked(a, b), t.dag_dist_unchecked(&tp[i], &tp[j]));
                }
            }
            assert_eq!(d.information_depth(), t.information_depth());
            let q = CondDistribution::from_theta(&d);
            let f_tree = t.lambda_map(&u.lift_q(&q));
            let back = u.project_flow(&d, &f_tree);
            for (x, y) in back.values().iter().zip(d.lambda_map(&q).values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
