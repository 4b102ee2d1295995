use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::transport_cost;

use super::{DagPath, MarkedDag, ROW_SUM_TOLERANCE};

const CONSERVATION_TOLERANCE: f64 = 1e-9;
/// Residual below which an arc counts as exhausted during path peeling.
const PEEL_EPS: f64 = 1e-15;

/// Nonnegative arc vector with unit outflow at the root and conservation at
/// every internal node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitFlow(Vec<f64>);

impl UnitFlow {
    pub fn new(dag: &MarkedDag, values: Vec<f64>) -> Result<Self> {
        if values.len() != dag.arc_count() {
            return Err(Error::Dimension {
                expected: dag.arc_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|&f| !f.is_finite() || f < 0.0) {
            return Err(Error::InvalidFlow("negative or non-finite arc flow".into()));
        }
        let flow = UnitFlow(values);
        if dag.num_points() > 0 && dag.arc_count() > 0 {
            let out_root = flow.node_value(dag, dag.root());
            if (out_root - 1.0).abs() > CONSERVATION_TOLERANCE {
                return Err(Error::InvalidFlow(format!("root outflow {out_root}")));
            }
        }
        for u in dag.internal_nodes() {
            if u == dag.root() {
                continue;
            }
            let inflow: f64 = dag.in_arcs(u).iter().map(|&a| flow.0[a]).sum();
            let outflow: f64 = dag.out_arcs(u).iter().map(|&a| flow.0[a]).sum();
            if (inflow - outflow).abs() > CONSERVATION_TOLERANCE {
                return Err(Error::InvalidFlow(format!(
                    "conservation fails at {}: in {inflow}, out {outflow}",
                    dag.nodes()[u].id
                )));
            }
        }
        Ok(flow)
    }

    /// Unit flow along a single path.
    pub fn along_path(dag: &MarkedDag, path: &DagPath) -> Self {
        let mut v = vec![0.0; dag.arc_count()];
        for &a in path.arcs() {
            v[a] = 1.0;
        }
        UnitFlow(v)
    }

    /// `sum_k weight_k * 1_{path_k}`; weights should sum to one.
    pub fn from_paths(dag: &MarkedDag, weighted: &[(DagPath, f64)]) -> Self {
        let mut v = vec![0.0; dag.arc_count()];
        for (p, w) in weighted {
            for &a in p.arcs() {
                v[a] += w;
            }
        }
        UnitFlow(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Outflow at internal nodes, inflow at sinks.
    pub fn node_value(&self, dag: &MarkedDag, u: usize) -> f64 {
        if dag.is_sink(u) {
            if u == dag.root() {
                return 1.0;
            }
            dag.in_arcs(u).iter().map(|&a| self.0[a]).sum()
        } else {
            dag.out_arcs(u).iter().map(|&a| self.0[a]).sum()
        }
    }

    pub fn node_values(&self, dag: &MarkedDag) -> Vec<f64> {
        (0..dag.node_count()).map(|u| self.node_value(dag, u)).collect()
    }

    /// Mass arriving at each point.
    pub fn sink_marginal(&self, dag: &MarkedDag) -> Vec<f64> {
        (0..dag.num_points())
            .map(|p| self.node_value(dag, dag.point_node(p)))
            .collect()
    }

    /// `sum_x c_x F_x` over sinks.
    pub fn service(&self, dag: &MarkedDag, cost: &[f64]) -> f64 {
        self.sink_marginal(dag).iter().zip(cost).map(|(f, c)| f * c).sum()
    }

    /// `sum_a omega_a F_a`
    pub fn weighted_mass(&self, dag: &MarkedDag) -> f64 {
        dag.arcs().iter().zip(&self.0).map(|(a, f)| a.omega * f).sum()
    }

    /// Greedy peel-off into weighted root-sink paths.
    ///
    /// Repeatedly follows the largest-residual out-arc from the root and
    /// subtracts the bottleneck; every round zeroes at least one arc.
    pub fn path_decompose(&self, dag: &MarkedDag) -> Vec<(DagPath, f64)> {
        let mut residual = self.0.clone();
        let mut out = Vec::new();
        if dag.arc_count() == 0 {
            let trivial = dag.path_from_arcs(Vec::new()).expect("single node DAG");
            return vec![(trivial, 1.0)];
        }
        for _ in 0..=dag.arc_count() {
            let best_out = |u: usize, residual: &[f64]| {
                dag.out_arcs(u)
                    .iter()
                    .copied()
                    .max_by(|&a, &b| residual[a].total_cmp(&residual[b]).then(b.cmp(&a)))
                    .expect("internal node has out-arcs")
            };
            let first = best_out(dag.root(), &residual);
            if residual[first] <= PEEL_EPS {
                break;
            }
            let mut arcs = vec![first];
            let mut at = dag.arcs()[first].head;
            while !dag.is_sink(at) {
                let a = best_out(at, &residual);
                arcs.push(a);
                at = dag.arcs()[a].head;
            }
            let bottleneck = arcs.iter().map(|&a| residual[a]).fold(f64::INFINITY, f64::min);
            if bottleneck <= 0.0 {
                // Conservation slack left a dead end; drop the exhausted arc and retry.
                for &a in &arcs {
                    if residual[a] <= PEEL_EPS {
                        residual[a] = 0.0;
                    }
                }
                continue;
            }
            for &a in &arcs {
                residual[a] -= bottleneck;
                if residual[a] <= PEEL_EPS {
                    residual[a] = 0.0;
                }
            }
            let path = dag.path_from_arcs(arcs).expect("peeled walk is a root-sink path");
            out.push((path, bottleneck));
        }
        out
    }
}

/// Per-node probability rows over out-arcs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondDistribution(Vec<f64>);

impl CondDistribution {
    pub fn new(dag: &MarkedDag, q: Vec<f64>) -> Result<Self> {
        if q.len() != dag.arc_count() {
            return Err(Error::Dimension {
                expected: dag.arc_count(),
                got: q.len(),
            });
        }
        if q.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::InvalidFlow("negative or non-finite conditional".into()));
        }
        for u in dag.internal_nodes() {
            let sum: f64 = dag.out_arcs(u).iter().map(|&a| q[a]).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidFlow(format!(
                    "row of {} sums to {sum}",
                    dag.nodes()[u].id
                )));
            }
        }
        Ok(CondDistribution(q))
    }

    /// Rows equal to the arc probabilities of the DAG.
    pub fn from_theta(dag: &MarkedDag) -> Self {
        CondDistribution(dag.arcs().iter().map(|a| a.theta).collect())
    }

    pub(crate) fn from_raw(q: Vec<f64>) -> Self {
        CondDistribution(q)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn row(&self, dag: &MarkedDag, u: usize) -> Vec<f64> {
        dag.out_arcs(u).iter().map(|&a| self.0[a]).collect()
    }

    /// The induced unit flow: `F_uv = F_u * q_uv` from the root down.
    pub fn lambda(&self, dag: &MarkedDag) -> UnitFlow {
        let mut node = vec![0.0; dag.node_count()];
        let mut arcs = vec![0.0; dag.arc_count()];
        node[dag.root()] = 1.0;
        for &u in dag.topo_order() {
            let fu = node[u];
            for &a in dag.out_arcs(u) {
                let f = fu * self.0[a];
                arcs[a] = f;
                node[dag.arcs()[a].head] += f;
            }
        }
        UnitFlow(arcs)
    }

    /// Mass of each enumerated path under the product measure `prod q`.
    pub fn path_masses(&self, paths: &[DagPath]) -> Vec<f64> {
        paths
            .iter()
            .map(|p| p.arcs().iter().map(|&a| self.0[a]).product())
            .collect()
    }
}

impl MarkedDag {
    /// `lambda_map`: the unit flow induced by conditional rows.
    pub fn lambda_map(&self, q: &CondDistribution) -> UnitFlow {
        q.lambda(self)
    }

    /// `sum_a omega_a |F_a - F'_a|`
    pub fn l1_omega(&self, f: &UnitFlow, g: &UnitFlow) -> f64 {
        self.arcs()
            .iter()
            .zip(f.values().iter().zip(g.values()))
            .map(|(a, (x, y))| a.omega * (x - y).abs())
            .sum()
    }

    /// `sum_a omega_a (F_a - F'_a)_+`
    pub fn l1_omega_positive(&self, f: &UnitFlow, g: &UnitFlow) -> f64 {
        self.arcs()
            .iter()
            .zip(f.values().iter().zip(g.values()))
            .map(|(a, (x, y))| a.omega * (x - y).max(0.0))
            .sum()
    }

    /// Exact transport cost between two weighted path sets under [`MarkedDag::dag_dist`].
    pub fn w1_paths(&self, a: &[(DagPath, f64)], b: &[(DagPath, f64)]) -> Result<f64> {
        let supply: Vec<f64> = a.iter().map(|(_, w)| *w).collect();
        let demand: Vec<f64> = b.iter().map(|(_, w)| *w).collect();
        let cost: Vec<Vec<f64>> = a
            .iter()
            .map(|(p, _)| b.iter().map(|(q, _)| self.dag_dist_unchecked(p, q)).collect())
            .collect();
        transport_cost(&supply, &demand, &cost)
    }

    /// `W1` between two unit flows, each viewed as the path distribution
    /// produced by [`UnitFlow::path_decompose`].
    pub fn w1_dag_exact(&self, f: &UnitFlow, g: &UnitFlow) -> Result<f64> {
        // Same enumeration bound as path-based callers.
        if self.path_count() > super::path_cap() as u128 {
            return Err(Error::PathCap { cap: super::path_cap() });
        }
        self.w1_paths(&f.path_decompose(self), &g.path_decompose(self))
    }

    /// Closed-form `W1` under the path ultrametric between two mass vectors
    /// indexed like `paths` (which must be in depth-first enumeration order).
    ///
    /// The ultrametric is realized as a weighted tree (children of a split
    /// node merged in increasing arc-length order) and the tree transport
    /// formula `sum_e w_e |mass difference below e|` is applied.
    pub fn w1_ultrametric(&self, paths: &[DagPath], mu: &[f64], nu: &[f64]) -> f64 {
        debug_assert_eq!(paths.len(), mu.len());
        debug_assert_eq!(paths.len(), nu.len());
        let (_, _, cost) = self.ultra_rec(paths, mu, nu, 0, 0, paths.len());
        cost
    }

    /// Returns (height of subtree top, signed mass difference, internal cost).
    fn ultra_rec(
        &self,
        paths: &[DagPath],
        mu: &[f64],
        nu: &[f64],
        depth: usize,
        lo: usize,
        hi: usize,
    ) -> (f64, f64, f64) {
        if hi - lo == 1 && paths[lo].len() == depth {
            return (0.0, mu[lo] - nu[lo], 0.0);
        }
        // Group the range by the arc taken at this depth.
        let mut groups: Vec<(f64, f64, f64, f64)> = Vec::new(); // (omega, height, diff, cost)
        let mut start = lo;
        while start < hi {
            let arc = paths[start].arcs()[depth];
            let mut end = start + 1;
            while end < hi && paths[end].arcs()[depth] == arc {
                end += 1;
            }
            let (h, d, c) = self.ultra_rec(paths, mu, nu, depth + 1, start, end);
            groups.push((self.arcs()[arc].omega, h, d, c));
            start = end;
        }
        if groups.len() == 1 {
            let (_, h, d, c) = groups[0];
            return (h, d, c);
        }
        groups.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cost: f64 = groups.iter().map(|g| g.3).sum();
        let merge = groups[1].0;
        cost += 0.5 * (merge - groups[0].1) * groups[0].2.abs();
        cost += 0.5 * (merge - groups[1].1) * groups[1].2.abs();
        let mut cum = groups[0].2 + groups[1].2;
        let mut height = merge;
        for g in &groups[2..] {
            cost += 0.5 * (g.0 - height) * cum.abs();
            cost += 0.5 * (g.0 - g.1) * g.2.abs();
            cum += g.2;
            height = g.0;
        }
        (height, cum, cost)
    }

    /// `W1` under the path ultrametric between the product path measures of two
    /// conditional distributions.
    pub fn w1_conditional(&self, q1: &CondDistribution, q2: &CondDistribution) -> Result<f64> {
        let paths = self.paths()?;
        let mu = q1.path_masses(paths);
        let nu = q2.path_masses(paths);
        Ok(self.w1_ultrametric(paths, &mu, &nu))
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{random_layered_dag, LayeredDagParams};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_q(dag: &MarkedDag, rng: &mut ChaCha8Rng) -> CondDistribution {
        let mut q = vec![0.0; dag.arc_count()];
        for u in dag.internal_nodes() {
            let w: Vec<f64> = dag.out_arcs(u).iter().map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = w.iter().sum();
            for (&a, x) in dag.out_arcs(u).iter().zip(w) {
                q[a] = x / s;
            }
        }
        CondDistribution::new(dag, q).unwrap()
    }

    #[test]
    fn lambda_on_simple_shapes() {
        let c = chain();
        let f = c.lambda_map(&CondDistribution::from_theta(&c));
        assert_eq!(f.values(), &[1.0, 1.0, 1.0]);

        let s = star(2);
        let q = CondDistribution::new(&s, vec![0.3, 0.7]).unwrap();
        assert_eq!(s.lambda_map(&q).values(), &[0.3, 0.7]);

        let d = diamond();
        let f = d.lambda_map(&CondDistribution::from_theta(&d));
        assert_eq!(f.sink_marginal(&d), vec![1.0]);
        assert!(UnitFlow::new(&d, f.values().to_vec()).is_ok());
    }

    #[test]
    fn lambda_conserves_and_renormalizes_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let d = random_layered_dag(&LayeredDagParams::default(), seed).unwrap();
            let q = random_q(&d, &mut rng);
            let f = d.lambda_map(&q);
            assert!(UnitFlow::new(&d, f.values().to_vec()).is_ok());
            for u in d.internal_nodes() {
                let fu = f.node_value(&d, u);
                if fu > 0.0 {
                    for &a in d.out_arcs(u) {
                        assert!((f.values()[a] / fu - q.values()[a]).abs() < 1e-12);
                    }
                }
                if u != d.root() {
                    let inflow: f64 = d.in_arcs(u).iter().map(|&a| f.values()[a]).sum();
                    assert!((inflow - fu).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn decomposition_of_simple_shapes() {
        let c = chain();
        let f = c.lambda_map(&CondDistribution::from_theta(&c));
        let parts = f.path_decompose(&c);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].1, 1.0);

        let d = diamond();
        let f = UnitFlow::new(&d, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let parts = f.path_decompose(&d);
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().all(|(_, w)| *w == 0.5));
    }

    #[test]
    fn decomposition_reconstructs_the_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..30 {
            let params = LayeredDagParams {
                levels: 3,
                ..LayeredDagParams::default()
            };
            let d = random_layered_dag(&params, seed).unwrap();
            let f = d.lambda_map(&random_q(&d, &mut rng));
            let parts = f.path_decompose(&d);
            assert!(parts.iter().all(|(_, w)| *w >= 0.0));
            let back = UnitFlow::from_paths(&d, &parts);
            for (x, y) in back.values().iter().zip(f.values()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn w1_of_equal_and_point_flows() {
        let t = binary_tree();
        let f = t.lambda_map(&CondDistribution::from_theta(&t));
        assert_eq!(t.l1_omega(&f, &f), 0.0);
        assert!(t.w1_dag_exact(&f, &f).unwrap().abs() < 1e-15);
        let p = t.paths().unwrap();
        let a = UnitFlow::along_path(&t, &p[0]);
        let b = UnitFlow::along_path(&t, &p[3]);
        assert_eq!(t.w1_dag_exact(&a, &b).unwrap(), t.dag_dist(&p[0], &p[3]).unwrap());
    }

    #[test]
    fn ultrametric_formula_matches_transport() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..40 {
            let d = if seed % 2 == 0 {
                random_layered_dag(&LayeredDagParams::default(), seed).unwrap()
            } else {
                crossed()
            };
            let paths = d.paths().unwrap().to_vec();
            let draw = |rng: &mut ChaCha8Rng| {
                let mut w: Vec<f64> = paths.iter().map(|_| rng.random_range(0.0..1.0)).collect();
                // sparsify
                for x in w.iter_mut() {
                    if rng.random_range(0.0..1.0) < 0.3 {
                        *x = 0.0;
                    }
                }
                w[0] += 0.1;
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect::<Vec<_>>()
            };
            let mu = draw(&mut rng);
            let nu = draw(&mut rng);
            let closed = d.w1_ultrametric(&paths, &mu, &nu);
            let a: Vec<(DagPath, f64)> = paths.iter().cloned().zip(mu.iter().copied()).collect();
            let b: Vec<(DagPath, f64)> = paths.iter().cloned().zip(nu.iter().copied()).collect();
            let exact = d.w1_paths(&a, &b).unwrap();
            assert!((closed - exact).abs() < 1e-10, "seed {seed}: {closed} vs {exact}");
        }
    }

    #[test]
    fn l1_upper_bounds_w1_on_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..20 {
            let params = LayeredDagParams {
                tree: true,
                ..LayeredDagParams::default()
            };
            let d = random_layered_dag(&params, seed).unwrap();
            let f = d.lambda_map(&random_q(&d, &mut rng));
            let g = d.lambda_map(&random_q(&d, &mut rng));
            let w = d.w1_dag_exact(&f, &g).unwrap();
            assert!(w <= d.l1_omega(&f, &g) + 1e-9);
        }
    }

    #[test]
    fn star_flows_satisfy_the_two_sided_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = star(6);
        for _ in 0..50 {
            let f = s.lambda_map(&random_q(&s, &mut rng));
            let g = s.lambda_map(&random_q(&s, &mut rng));
            let w = s.w1_dag_exact(&f, &g).unwrap();
            let l1 = s.l1_omega(&f, &g);
            assert!(0.5 * l1 <= w + 1e-12 && w <= l1 + 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_flows() {
        let d = diamond();
        assert!(UnitFlow::new(&d, vec![0.5, 0.5, 0.4, 0.5]).is_err());
        assert!(UnitFlow::new(&d, vec![0.5, 0.6, 0.5, 0.6]).is_err());
        assert!(CondDistribution::new(&d, vec![0.5, 0.4, 1.0, 1.0]).is_err());
    }
}
