use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{DagSpec, MarkedDag, NodeSpec};

/// Shape of a random layered DAG.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredDagParams {
    /// Arcs on every root-sink path.
    pub levels: usize,
    /// Nodes per intermediate layer.
    pub width: usize,
    /// Sinks; ignored for trees, where every leaf is its own point.
    pub points: usize,
    /// Probability of each optional arc between adjacent layers.
    pub density: f64,
    pub tree: bool,
}

impl Default for LayeredDagParams {
    fn default() -> Self {
        LayeredDagParams {
            levels: 3,
            width: 3,
            points: 4,
            density: 0.35,
            tree: false,
        }
    }
}

fn layer_omega(level: usize, rng: &mut ChaCha8Rng) -> f64 {
    10.0 * 12f64.powi(-(level as i32)) * rng.random_range(1.0..2.0)
}

fn normalized(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    let mut out: Vec<f64> = w.iter().map(|x| x / s).collect();
    // Push the rounding residue into the largest entry.
    let err = 1.0 - out.iter().sum::<f64>();
    let big = (0..k).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap();
    out[big] += err;
    out
}

/// Random marked DAG with `tau = 4`, arc lengths `10 * 12^-l * U[1,2)` on
/// layer `l` and random positive probabilities. Every node lies on a
/// root-sink path.
pub fn random_layered_dag(params: &LayeredDagParams, seed: u64) -> Result<MarkedDag> {
    if params.levels == 0 || (!params.tree && (params.points == 0 || params.width == 0)) {
        return Err(Error::Builder("random DAG needs positive levels, width and points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![NodeSpec {
        id: "r".into(),
        level: Some(0),
    }];
    let mut arcs: Vec<(String, String, f64, f64)> = Vec::new();
    let mut sinks = std::collections::BTreeMap::new();

    if params.tree {
        let mut frontier = vec!["r".to_owned()];
        for level in 0..params.levels {
            let mut next = Vec::new();
            for (pi, parent) in frontier.iter().enumerate() {
                let lo = if level == 0 { 2 } else { 1 };
                let k = rng.random_range(lo..=3);
                let theta = normalized(&mut rng, k);
                for (c, t) in theta.into_iter().enumerate() {
                    let id = format!("t{}_{}_{}", level + 1, pi, c);
                    nodes.push(NodeSpec {
                        id: id.clone(),
                        level: Some(level + 1),
                    });
                    arcs.push((parent.clone(), id.clone(), layer_omega(level, &mut rng), t));
                    next.push(id);
                }
            }
            frontier = next;
        }
        for (p, id) in frontier.into_iter().enumerate() {
            sinks.insert(id, p);
        }
    } else {
        let mut layers: Vec<Vec<String>> = vec![vec!["r".into()]];
        for level in 1..params.levels {
            layers.push((0..params.width).map(|i| format!("l{level}_{i}")).collect());
        }
        layers.push((0..params.points).map(|i| format!("x{i}")).collect());
        for (level, layer) in layers.iter().enumerate().skip(1) {
            for id in layer {
                nodes.push(NodeSpec {
                    id: id.clone(),
                    level: Some(level),
                });
            }
        }
        for level in 0..params.levels {
            let (up, down) = (&layers[level], &layers[level + 1]);
            let mut adj = vec![vec![false; down.len()]; up.len()];
            for j in 0..down.len() {
                adj[rng.random_range(0..up.len())][j] = true;
            }
            for row in adj.iter_mut() {
                if !row.iter().any(|&b| b) {
                    let j = *(0..down.len()).collect::<Vec<_>>().choose(&mut rng).unwrap();
                    row[j] = true;
                }
                for cell in row.iter_mut() {
                    if !*cell && rng.random_range(0.0..1.0) < params.density {
                        *cell = true;
                    }
                }
            }
            for (i, row) in adj.iter().enumerate() {
                let heads: Vec<usize> = (0..down.len()).filter(|&j| row[j]).collect();
                let theta = normalized(&mut rng, heads.len());
                for (&j, t) in heads.iter().zip(theta) {
                    arcs.push((up[i].clone(), down[j].clone(), layer_omega(level, &mut rng), t));
                }
            }
        }
        for (p, id) in layers.last().unwrap().iter().enumerate() {
            sinks.insert(id.clone(), p);
        }
    }

    MarkedDag::validate(&DagSpec {
        tau: 4.0,
        root: "r".into(),
        nodes,
        arcs,
        sinks,
        metric: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_valid_and_deterministic() {
        for seed in 0..30 {
            let d = random_layered_dag(&LayeredDagParams::default(), seed).unwrap();
            assert_eq!(d.num_points(), 4);
            assert_eq!(d.combinatorial_depth(), 3);
            assert_eq!(d.to_spec(), random_layered_dag(&LayeredDagParams::default(), seed).unwrap().to_spec());
            let t = random_layered_dag(
                &LayeredDagParams {
                    tree: true,
                    ..LayeredDagParams::default()
                },
                seed,
            )
            .unwrap();
            assert!(t.is_tree());
            assert_eq!(t.path_count() as usize, t.num_points());
        }
    }

    #[test]
    fn every_node_reaches_a_sink() {
        let d = random_layered_dag(
            &LayeredDagParams {
                levels: 4,
                width: 5,
                points: 6,
                ..LayeredDagParams::default()
            },
            3,
        )
        .unwrap();
        let reach = d.reachable_points();
        assert!(reach.iter().all(|r| !r.is_empty()));
    }
}
