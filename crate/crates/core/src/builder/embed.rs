use rand::seq::SliceRandom;
use rand::Rng;

use crate::dag::DagPath;
use crate::error::{Error, Result};
use crate::metric::MetricSpace;

use super::{scale, NetDag};

/// A partition of the points into blocks of diameter at most `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomPartition {
    pub blocks: Vec<Vec<usize>>,
    /// Block index of every point.
    pub block_of: Vec<usize>,
    pub delta: f64,
    /// Sampled cutting radius.
    pub radius: f64,
}

impl RandomPartition {
    pub fn separates(&self, x: usize, y: usize) -> bool {
        self.block_of[x] != self.block_of[y]
    }
}

/// Random partition with radius uniform on `[delta/4, delta/2]`: points are
/// visited in a uniformly random order and each claims every unassigned
/// point within the radius.
pub fn ckr_partition<R: Rng + ?Sized>(m: &MetricSpace, delta: f64, rng: &mut R) -> RandomPartition {
    let n = m.len();
    let radius = rng.random_range(delta / 4.0..=delta / 2.0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut block_of = vec![usize::MAX; n];
    let mut blocks = Vec::new();
    for &c in &order {
        let members: Vec<usize> = (0..n)
            .filter(|&x| block_of[x] == usize::MAX && m.d(x, c) <= radius)
            .collect();
        if members.is_empty() {
            continue;
        }
        for &x in &members {
            block_of[x] = blocks.len();
        }
        blocks.push(members);
    }
    RandomPartition {
        blocks,
        block_of,
        delta,
        radius,
    }
}

/// `Psi(x)`: the chain of selector images of `B(P_k(x), tau^-k / 2)`.
pub fn psi_embedding(nd: &NetDag, partitions: &[RandomPartition], x: usize) -> Result<DagPath> {
    let m = nd.dag.metric().expect("built DAGs carry their metric");
    let h = &nd.hierarchy;
    if partitions.len() != h.depth() + 1 {
        return Err(Error::Dimension {
            expected: h.depth() + 1,
            got: partitions.len(),
        });
    }
    let mut nodes = Vec::with_capacity(partitions.len());
    for (k, p) in partitions.iter().enumerate() {
        let ball = block_ball(m, &p.blocks[p.block_of[x]], scale(k) / 2.0);
        let u = h.selector(m, k, &ball)?;
        let node = nd.node_of[k]
            .get(&u)
            .copied()
            .ok_or_else(|| Error::Builder(format!("embedding visits pruned net node {u} at level {k}")))?;
        nodes.push(node);
    }
    let path = nd.dag.path_from_nodes(&nodes)?;
    if nd.dag.path_point(&path) != x {
        return Err(Error::Builder(format!("embedding of point {x} ends elsewhere")));
    }
    Ok(path)
}

fn block_ball(m: &MetricSpace, block: &[usize], r: f64) -> Vec<usize> {
    (0..m.len())
        .filter(|&y| block.iter().any(|&b| m.d(b, y) <= r))
        .collect()
}

/// Draws `Psi` for all points at once, sharing work across each block.
pub struct PsiSampler<'a> {
    nd: &'a NetDag,
}

impl<'a> PsiSampler<'a> {
    pub fn new(nd: &'a NetDag) -> Self {
        PsiSampler { nd }
    }

    pub fn partitions<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<RandomPartition> {
        let m = self.nd.dag.metric().expect("built DAGs carry their metric");
        (0..=self.nd.hierarchy.depth())
            .map(|k| ckr_partition(m, scale(k), rng))
            .collect()
    }

    /// One joint draw of `Psi(x)` for every point.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<DagPath>> {
        let nd = self.nd;
        let m = nd.dag.metric().expect("built DAGs carry their metric");
        let parts = self.partitions(rng);
        let n = m.len();
        let mut chains = vec![Vec::with_capacity(parts.len()); n];
        for (k, p) in parts.iter().enumerate() {
            for block in &p.blocks {
                let ball = block_ball(m, block, scale(k) / 2.0);
                let u = nd.hierarchy.selector(m, k, &ball)?;
                let node = nd.node_of[k].get(&u).copied().ok_or_else(|| {
                    Error::Builder(format!("embedding visits pruned net node {u} at level {k}"))
                })?;
                for &x in block {
                    chains[x].push(node);
                }
            }
        }
        chains
            .iter()
            .enumerate()
            .map(|(x, c)| {
                let path = nd.dag.path_from_nodes(c)?;
                if nd.dag.path_point(&path) != x {
                    return Err(Error::Builder(format!("embedding of point {x} ends elsewhere")));
                }
                Ok(path)
            })
            .collect()
    }

    /// Mean and standard error of `dag_dist(Psi x, Psi y)` for each listed pair.
    pub fn stretch<R: Rng + ?Sized>(
        &self,
        pairs: &[(usize, usize)],
        samples: usize,
        rng: &mut R,
    ) -> Result<Vec<(f64, f64)>> {
        let mut sum = vec![0.0; pairs.len()];
        let mut sq = vec![0.0; pairs.len()];
        for _ in 0..samples {
            let psi = self.sample(rng)?;
            for (i, &(x, y)) in pairs.iter().enumerate() {
                let d = self.nd.dag.dag_dist_unchecked(&psi[x], &psi[y]);
                sum[i] += d;
                sq[i] += d * d;
            }
        }
        let s = samples as f64;
        Ok(sum
            .iter()
            .zip(&sq)
            .map(|(&a, &b)| {
                let mean = a / s;
                let var = (b / s - mean * mean).max(0.0) * s / (s - 1.0).max(1.0);
                (mean, (var / s).sqrt())
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::build_hierarchical_dag;
    use crate::metric::{random_euclidean_metric, uniform_metric};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = random_euclidean_metric(12, 2, 5).unwrap();
        for _ in 0..50 {
            assert_eq!(ckr_partition(&m, 4.0 * m.diameter(), &mut rng).blocks.len(), 1);
            let tiny = ckr_partition(&m, 0.49 * m.min_distance(), &mut rng);
            assert_eq!(tiny.blocks.len(), 12);
        }
    }

    #[test]
    fn blocks_have_bounded_diameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_euclidean_metric(20, 3, 2).unwrap();
        for delta in [0.1, 0.3, 0.7] {
            for _ in 0..50 {
                let p = ckr_partition(&m, delta, &mut rng);
                for b in &p.blocks {
                    for &x in b {
                        for &y in b {
                            assert!(m.d(x, y) <= delta);
                        }
                    }
                }
                assert!(p.block_of.iter().all(|&b| b < p.blocks.len()));
            }
        }
    }

    #[test]
    fn two_points_embed_onto_their_own_paths() {
        let m = uniform_metric(2).unwrap();
        let nd = build_hierarchical_dag(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = PsiSampler::new(&nd);
        for _ in 0..20 {
            let psi = s.sample(&mut rng).unwrap();
            assert_eq!(psi.len(), 2);
            assert_ne!(psi[0], psi[1]);
        }
    }

    #[test]
    fn joint_sampler_agrees_with_pointwise_map() {
        let m = random_euclidean_metric(15, 2, 9).unwrap();
        let nd = build_hierarchical_dag(&m).unwrap();
        let s = PsiSampler::new(&nd);
        for seed in 0..10 {
            let mut a = ChaCha8Rng::seed_from_u64(seed);
            let mut b = ChaCha8Rng::seed_from_u64(seed);
            let joint = s.sample(&mut a).unwrap();
            let parts = s.partitions(&mut b);
            for x in 0..15 {
                let single = psi_embedding(&nd, &parts, x).unwrap();
                assert_eq!(single, joint[x]);
                assert_eq!(nd.dag.path_point(&single), x);
            }
        }
    }
}
