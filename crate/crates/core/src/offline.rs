//! Offline optimum and the comparator flows built from it.

use serde::{Deserialize, Serialize};

use crate::dag::{CondDistribution, DagPath, MarkedDag, UnitFlow};
use crate::engine::global_divergence;
use crate::error::{Error, Result};
use crate::metric::MetricSpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSolution {
    pub total: f64,
    pub service: f64,
    pub movement: f64,
    /// States `r_0 ..= r_T`, with `r_0` the start.
    pub path: Vec<usize>,
}

fn check_costs(n: usize, costs: &[Vec<f64>]) -> Result<()> {
    for c in costs {
        if c.len() != n {
            return Err(Error::Dimension { expected: n, got: c.len() });
        }
        if c.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidDistribution("costs must be finite and nonnegative".into()));
        }
    }
    Ok(())
}

/// Exact offline optimum over state sequences starting at `start`.
///
/// `V_t(x) = c_t(x) + min_y (V_{t-1}(y) + d(y, x))`; ties go to the smallest `y`.
pub fn offline_opt(m: &MetricSpace, costs: &[Vec<f64>], start: usize) -> Result<OfflineSolution> {
    let n = m.len();
    if start >= n {
        return Err(Error::Dimension { expected: n, got: start + 1 });
    }
    check_costs(n, costs)?;
    let mut value = vec![f64::INFINITY; n];
    value[start] = 0.0;
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(costs.len());
    for c in costs {
        let mut next = vec![0.0; n];
        let mut arg = vec![0; n];
        for x in 0..n {
            let mut best = f64::INFINITY;
            for y in 0..n {
                let v = value[y] + m.d(y, x);
                if v < best {
                    best = v;
                    arg[x] = y;
                }
            }
            next[x] = c[x] + best;
        }
        value = next;
        back.push(arg);
    }
    let mut end = 0;
    for x in 1..n {
        if value[x] < value[end] {
            end = x;
        }
    }
    let mut path = vec![end];
    for arg in back.iter().rev() {
        let prev = arg[*path.last().expect("nonempty")];
        path.push(prev);
    }
    path.reverse();
    let (service, movement) = evaluate_path(m, costs, &path);
    Ok(OfflineSolution {
        total: service + movement,
        service,
        movement,
        path,
    })
}

/// `OPT` of every prefix `c_1..c_t`, `t = 0..=T`.
pub fn offline_prefix_values(m: &MetricSpace, costs: &[Vec<f64>], start: usize) -> Result<Vec<f64>> {
    let n = m.len();
    if start >= n {
        return Err(Error::Dimension { expected: n, got: start + 1 });
    }
    check_costs(n, costs)?;
    let mut value = vec![f64::INFINITY; n];
    value[start] = 0.0;
    let mut out = vec![0.0];
    for c in costs {
        value = (0..n)
            .map(|x| c[x] + (0..n).map(|y| value[y] + m.d(y, x)).fold(f64::INFINITY, f64::min))
            .collect();
        out.push(value.iter().copied().fold(f64::INFINITY, f64::min));
    }
    Ok(out)
}

/// Service and movement of a state sequence `r_0 ..= r_T`.
pub fn evaluate_path(m: &MetricSpace, costs: &[Vec<f64>], path: &[usize]) -> (f64, f64) {
    let mut service = 0.0;
    let mut movement = 0.0;
    for (t, c) in costs.iter().enumerate() {
        movement += m.d(path[t], path[t + 1]);
        service += c[path[t + 1]];
    }
    (service, movement)
}

/// Unit flows along a fixed path to each offline state.
#[derive(Debug, Clone)]
pub struct ComparatorFlows {
    pub paths: Vec<DagPath>,
    pub flows: Vec<UnitFlow>,
    /// `|R_t - R_{t-1}|` in `l1(omega)`, for `t >= 1`.
    pub step_movement: Vec<f64>,
}

impl ComparatorFlows {
    pub fn movement(&self) -> f64 {
        self.step_movement.iter().sum()
    }

    /// `sum_t <c_t, R_t>` for `t >= 1`.
    pub fn service(&self, dag: &MarkedDag, costs: &[Vec<f64>]) -> f64 {
        costs.iter().zip(&self.flows[1..]).map(|(c, f)| f.service(dag, c)).sum()
    }

    /// `sum <c_t, R_t> + (3/kappa) sum |dR| + D(R_0 || q0)`.
    pub fn service_bound(&self, dag: &MarkedDag, costs: &[Vec<f64>], q0: &CondDistribution, kappa: f64) -> f64 {
        self.service(dag, costs) + 3.0 / kappa * self.movement() + global_divergence(dag, &self.flows[0], q0, kappa)
    }
}

/// For each point, the first enumerated root path ending there.
pub fn representative_paths(dag: &MarkedDag) -> Result<Vec<DagPath>> {
    let mut rep: Vec<Option<DagPath>> = vec![None; dag.num_points()];
    for p in dag.paths()? {
        let x = dag.path_point(p);
        if rep[x].is_none() {
            rep[x] = Some(p.clone());
        }
    }
    rep.into_iter()
        .enumerate()
        .map(|(x, p)| p.ok_or_else(|| Error::InvalidPath(format!("no root path reaches point {x}"))))
        .collect()
}

pub fn comparator_flows(dag: &MarkedDag, offline_path: &[usize]) -> Result<ComparatorFlows> {
    let rep = representative_paths(dag)?;
    let mut paths = Vec::with_capacity(offline_path.len());
    for &x in offline_path {
        let p = rep.get(x).ok_or(Error::Dimension {
            expected: dag.num_points(),
            got: x + 1,
        })?;
        paths.push(p.clone());
    }
    let flows: Vec<UnitFlow> = paths.iter().map(|p| UnitFlow::along_path(dag, p)).collect();
    let step_movement = flows.windows(2).map(|w| dag.l1_omega(&w[0], &w[1])).collect();
    Ok(ComparatorFlows {
        paths,
        flows,
        step_movement,
    })
}

/// `max dag_dist(R_x, R_y) / d(x, y)` over the representative paths.
pub fn comparator_lipschitz(dag: &MarkedDag, m: &MetricSpace) -> Result<f64> {
    let rep = representative_paths(dag)?;
    let mut l: f64 = 0.0;
    for x in 0..m.len() {
        for y in x + 1..m.len() {
            l = l.max(dag.dag_dist_unchecked(&rep[x], &rep[y]) / m.d(x, y));
        }
    }
    Ok(l)
}

/// Start state for offline comparisons: the point with the largest mass, ties to the smallest index.
pub fn heaviest_point(marginal: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in marginal.iter().enumerate() {
        if x > marginal[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::build_hierarchical_dag;
    use crate::dag::fixtures;
    use crate::metric::{emd_exact, random_euclidean_metric, uniform_metric, Distribution};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(m: &MetricSpace, costs: &[Vec<f64>], start: usize) -> f64 {
        let n = m.len();
        let t = costs.len();
        let mut best = f64::INFINITY;
        for code in 0..n.pow(t as u32) {
            let mut path = vec![start];
            let mut k = code;
            for _ in 0..t {
                path.push(k % n);
                k /= n;
            }
            let (s, mv) = evaluate_path(m, costs, &path);
            best = best.min(s + mv);
        }
        best
    }

    fn dyadic_costs(n: usize, t: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..n).map(|_| rng.random_range(0..16) as f64 / 8.0).collect())
            .collect()
    }

    #[test]
    fn trivial_instances() {
        let m = uniform_metric(4).unwrap();
        let s = offline_opt(&m, &vec![vec![0.0; 4]; 5], 2).unwrap();
        assert_eq!(s.total, 0.0);
        assert_eq!(s.path, vec![2; 6]);
        let one = MetricSpace::validate_and_normalize(&[vec![0.0]], None).unwrap();
        let s = offline_opt(&one, &[vec![1.5], vec![2.0]], 0).unwrap();
        assert_eq!(s.total, 3.5);
        let s = offline_opt(&m, &[], 1).unwrap();
        assert_eq!((s.total, s.path.clone()), (0.0, vec![1]));
    }

    #[test]
    fn dp_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for seed in 0..30 {
            let n = rng.random_range(1..=3);
            let m = if n == 1 {
                MetricSpace::validate_and_normalize(&[vec![0.0]], None).unwrap()
            } else {
                random_euclidean_metric(n, 2, seed).unwrap()
            };
            let t = rng.random_range(0..=4);
            let costs = dyadic_costs(n, t, &mut rng);
            let start = rng.random_range(0..n);
            let s = offline_opt(&m, &costs, start).unwrap();
            assert_eq!(s.total, brute_force(&m, &costs, start));
            assert_eq!(s.path[0], start);
            let (sv, mv) = evaluate_path(&m, &costs, &s.path);
            assert_eq!(s.total, sv + mv);
        }
    }

    #[test]
    fn opt_is_monotone_in_the_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_euclidean_metric(5, 2, 3).unwrap();
        let costs = dyadic_costs(5, 12, &mut rng);
        let mut last = 0.0;
        for t in 0..=12 {
            let v = offline_opt(&m, &costs[..t], 0).unwrap().total;
            assert!(v >= last);
            last = v;
        }
        let prefix = offline_prefix_values(&m, &costs, 0).unwrap();
        for t in 0..=12 {
            let v = offline_opt(&m, &costs[..t], 0).unwrap().total;
            assert!((prefix[t] - v).abs() <= 1e-12 * v.max(1.0));
        }
    }

    fn simplex_grid(n: usize, steps: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut cur = vec![0usize; n];
        fn rec(i: usize, left: usize, cur: &mut Vec<usize>, steps: usize, out: &mut Vec<Vec<f64>>) {
            if i + 1 == cur.len() {
                cur[i] = left;
                out.push(cur.iter().map(|&k| k as f64 / steps as f64).collect());
                return;
            }
            for k in 0..=left {
                cur[i] = k;
                rec(i + 1, left - k, cur, steps, out);
            }
        }
        rec(0, steps, &mut cur, steps, &mut out);
        out
    }

    #[test]
    fn fractional_grid_does_not_beat_the_integral_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for seed in 0..3 {
            let m = random_euclidean_metric(3, 2, 100 + seed).unwrap();
            let grid = simplex_grid(3, 10);
            let w1: Vec<Vec<f64>> = grid
                .iter()
                .map(|a| {
                    grid.iter()
                        .map(|b| {
                            emd_exact(&Distribution::new(a.clone()).unwrap(), &Distribution::new(b.clone()).unwrap(), &m)
                                .unwrap()
                        })
                        .collect()
                })
                .collect();
            let costs = dyadic_costs(3, 3, &mut rng);
            let start = 0;
            let s0 = grid.iter().position(|g| g[0] == 1.0).unwrap();
            let mut value: Vec<f64> = (0..grid.len()).map(|i| if i == s0 { 0.0 } else { f64::INFINITY }).collect();
            for c in &costs {
                value = (0..grid.len())
                    .map(|j| {
                        let serve: f64 = grid[j].iter().zip(c).map(|(a, b)| a * b).sum();
                        serve + (0..grid.len()).map(|i| value[i] + w1[i][j]).fold(f64::INFINITY, f64::min)
                    })
                    .collect();
            }
            let grid_min = value.iter().copied().fold(f64::INFINITY, f64::min);
            let dp = offline_opt(&m, &costs, start).unwrap().total;
            assert!(grid_min >= dp - 1e-12, "{grid_min} < {dp}");
            assert!(grid_min <= dp + 1e-12);
        }
    }

    #[test]
    fn comparator_examples() {
        let star = fixtures::star(3);
        let c = comparator_flows(&star, &[1, 1, 1]).unwrap();
        assert_eq!(c.movement(), 0.0);
        let c = comparator_flows(&star, &[0, 1, 0, 1]).unwrap();
        let per: Vec<f64> = star.arcs().iter().map(|a| a.omega).collect();
        assert!(per.iter().all(|&w| w == 1.0));
        assert_eq!(c.step_movement, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn comparator_movement_is_twice_the_disjoint_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_euclidean_metric(9, 2, 4).unwrap();
        let d = build_hierarchical_dag(&m).unwrap().dag;
        let path: Vec<usize> = (0..20).map(|_| rng.random_range(0..9)).collect();
        let c = comparator_flows(&d, &path).unwrap();
        for (t, w) in c.paths.windows(2).enumerate() {
            let mut disjoint = 0.0;
            for &a in w[0].arcs() {
                if !w[1].arcs().contains(&a) {
                    disjoint += d.arcs()[a].omega;
                }
            }
            for &a in w[1].arcs() {
                if !w[0].arcs().contains(&a) {
                    disjoint += d.arcs()[a].omega;
                }
            }
            assert!((c.step_movement[t] - disjoint).abs() < 1e-12);
            if w[0] != w[1] {
                let first = w[0].arcs().iter().zip(w[1].arcs()).position(|(a, b)| a != b).unwrap();
                let omega = d.arcs()[w[0].arcs()[first]].omega;
                assert!(disjoint >= 2.0 * omega);
            }
        }
    }

    #[test]
    fn uniform_star_comparators_have_lipschitz_ten() {
        for n in [4, 8] {
            let m = uniform_metric(n).unwrap();
            let d = build_hierarchical_dag(&m).unwrap().dag;
            assert!((comparator_lipschitz(&d, &m).unwrap() - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn heaviest_point_breaks_ties_low() {
        assert_eq!(heaviest_point(&[0.25, 0.5, 0.25, 0.5]), 1);
    }
}
