//! Exact optimal transport for small supports.
//!
//! Successive shortest augmenting paths on the bipartite transportation
//! network, with Johnson potentials so that a dense Dijkstra can be used on
//! the residual graph. Every augmentation saturates a supply, a demand or a
//! reverse residual arc, so the loop terminates after finitely many rounds.

use crate::error::{Error, Result};

use super::{Distribution, MetricSpace};

const MASS_TOLERANCE: f64 = 1e-9;
const RESIDUAL_EPS: f64 = 1e-15;

/// Minimum cost of moving `supply` onto `demand` under `cost[i][j]`.
///
/// Both sides must carry the same total mass up to `1e-9`.
pub fn transport_cost(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> Result<f64> {
    let a = supply.len();
    let b = demand.len();
    if cost.len() != a || cost.iter().any(|row| row.len() != b) {
        return Err(Error::Dimension {
            expected: a * b,
            got: cost.iter().map(Vec::len).sum(),
        });
    }
    if supply.iter().chain(demand).any(|&m| !m.is_finite() || m < 0.0) {
        return Err(Error::InvalidDistribution("negative or non-finite mass".into()));
    }
    if cost.iter().flatten().any(|&c| !c.is_finite() || c < 0.0) {
        return Err(Error::InvalidDistribution("ground costs must be finite and nonnegative".into()));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > MASS_TOLERANCE {
        return Err(Error::MassMismatch(total_s, total_d));
    }
    let tol = RESIDUAL_EPS * total_s.max(1.0);

    let mut s_left = supply.to_vec();
    let mut d_left = demand.to_vec();
    let mut flow = vec![vec![0.0f64; b]; a];
    // Potentials: sources 0..a, sinks a..a+b.
    let mut pot = vec![0.0f64; a + b];
    let nodes = a + b;
    let mut dist = vec![0.0f64; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    loop {
        let remaining: f64 = s_left.iter().filter(|&&s| s > tol).sum();
        if remaining <= tol {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..a {
            if s_left[i] > tol {
                dist[i] = 0.0;
            }
        }
        for _ in 0..nodes {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best_d {
                    best_d = dist[v];
                    best = v;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best < a {
                let i = best;
                for j in 0..b {
                    let v = a + j;
                    if done[v] {
                        continue;
                    }
                    let reduced = (cost[i][j] + pot[i] - pot[v]).max(0.0);
                    let nd = best_d + reduced;
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = i;
                    }
                }
            } else {
                let j = best - a;
                for i in 0..a {
                    if done[i] || flow[i][j] <= tol {
                        continue;
                    }
                    let reduced = (-cost[i][j] + pot[best] - pot[i]).max(0.0);
                    let nd = best_d + reduced;
                    if nd < dist[i] {
                        dist[i] = nd;
                        prev[i] = best;
                    }
                }
            }
        }
        // Closest sink that still has demand.
        let mut target = usize::MAX;
        let mut target_d = f64::INFINITY;
        for j in 0..b {
            if d_left[j] > tol && dist[a + j] < target_d {
                target_d = dist[a + j];
                target = a + j;
            }
        }
        if target == usize::MAX {
            break;
        }
        for v in 0..nodes {
            pot[v] += dist[v].min(target_d);
        }
        // Bottleneck along the path back to a source.
        let mut bottleneck = d_left[target - a];
        let mut v = target;
        loop {
            let u = prev[v];
            if v >= a {
                // forward arc u -> v
                v = u;
            } else {
                // reverse arc (sink u) -> (source v): capacity is the flow on v -> u
                bottleneck = bottleneck.min(flow[v][u - a]);
                v = u;
            }
            if v < a && prev[v] == usize::MAX {
                break;
            }
        }
        let source = v;
        bottleneck = bottleneck.min(s_left[source]);
        let mut v = target;
        loop {
            let u = prev[v];
            if v >= a {
                flow[u][v - a] += bottleneck;
            } else {
                flow[v][u - a] -= bottleneck;
                if flow[v][u - a] < tol {
                    flow[v][u - a] = 0.0;
                }
            }
            v = u;
            if v < a && prev[v] == usize::MAX {
                break;
            }
        }
        s_left[source] -= bottleneck;
        d_left[target - a] -= bottleneck;
    }

    let mut total = 0.0;
    for i in 0..a {
        for j in 0..b {
            total += flow[i][j] * cost[i][j];
        }
    }
    Ok(total)
}

/// Exact `W1` between two distributions on the same point set under `ground`.
pub fn emd_exact(mu: &Distribution, nu: &Distribution, ground: &MetricSpace) -> Result<f64> {
    let n = ground.len();
    if mu.len() != n {
        return Err(Error::Dimension { expected: n, got: mu.len() });
    }
    if nu.len() != n {
        return Err(Error::Dimension { expected: n, got: nu.len() });
    }
    emd_on_points(mu.mass(), nu.mass(), ground)
}

/// Like [`emd_exact`] but accepts raw mass vectors; zero-mass points are dropped.
pub(crate) fn emd_on_points(mu: &[f64], nu: &[f64], ground: &MetricSpace) -> Result<f64> {
    let src: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] > 0.0).collect();
    let dst: Vec<usize> = (0..nu.len()).filter(|&j| nu[j] > 0.0).collect();
    let supply: Vec<f64> = src.iter().map(|&i| mu[i]).collect();
    let demand: Vec<f64> = dst.iter().map(|&j| nu[j]).collect();
    let cost: Vec<Vec<f64>> = src
        .iter()
        .map(|&i| dst.iter().map(|&j| ground.d(i, j)).collect())
        .collect();
    transport_cost(&supply, &demand, &cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{path_metric, random_euclidean_metric, uniform_metric};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum over basic feasible plans of a 3x3 transportation problem.
    ///
    /// Bases are 5-cell subsets forming a spanning tree of K_{3,3}; each is
    /// solved by leaf peeling and kept when nonnegative.
    fn vertex_enumeration_3x3(s: [f64; 3], t: [f64; 3], c: &[[f64; 3]; 3]) -> f64 {
        let cells: Vec<(usize, usize)> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << 9) {
            if mask.count_ones() != 5 {
                continue;
            }
            let basis: Vec<(usize, usize)> = (0..9).filter(|k| mask >> k & 1 == 1).map(|k| cells[k]).collect();
            let mut rs = s;
            let mut cs = t;
            let mut open = basis.clone();
            let mut plan = [[0.0; 3]; 3];
            let mut ok = true;
            while !open.is_empty() {
                let mut progressed = false;
                for line in 0..6 {
                    let members: Vec<usize> = open
                        .iter()
                        .enumerate()
                        .filter(|(_, &(i, j))| if line < 3 { i == line } else { j == line - 3 })
                        .map(|(k, _)| k)
                        .collect();
                    if members.len() == 1 {
                        let (i, j) = open[members[0]];
                        let x = if line < 3 { rs[i] } else { cs[j] };
                        plan[i][j] = x;
                        rs[i] -= x;
                        cs[j] -= x;
                        open.remove(members[0]);
                        progressed = true;
                        break;
                    }
                }
                if !progressed {
                    ok = false;
                    break;
                }
            }
            if !ok || rs.iter().chain(cs.iter()).any(|r| r.abs() > 1e-12) {
                continue;
            }
            if plan.iter().flatten().any(|&x| x < -1e-12) {
                continue;
            }
            let cost: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| plan[i][j] * c[i][j]).sum();
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn identical_distributions_cost_nothing() {
        let m = random_euclidean_metric(6, 2, 5).unwrap();
        let mu = Distribution::new(vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.1]).unwrap();
        assert!(emd_exact(&mu, &mu, &m).unwrap().abs() < 1e-15);
    }

    #[test]
    fn point_masses_cost_their_distance() {
        let m = random_euclidean_metric(7, 3, 9).unwrap();
        for x in 0..7 {
            for y in 0..7 {
                let v = emd_exact(&Distribution::point_mass(7, x), &Distribution::point_mass(7, y), &m).unwrap();
                assert_eq!(v, m.d(x, y));
            }
        }
    }

    #[test]
    fn three_point_uniform_instance_matches_vertex_enumeration() {
        let m = uniform_metric(3).unwrap();
        let mu = Distribution::new(vec![0.5, 0.5, 0.0]).unwrap();
        let nu = Distribution::new(vec![0.0, 0.5, 0.5]).unwrap();
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = m.d(i, j);
            }
        }
        let oracle = vertex_enumeration_3x3([0.5, 0.5, 0.0], [0.0, 0.5, 0.5], &c);
        assert_eq!(oracle, 0.5);
        let v = emd_exact(&mu, &nu, &m).unwrap();
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn random_three_point_instances_match_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for seed in 0..200 {
            let m = random_euclidean_metric(3, 2, seed).unwrap();
            let mut draw = || {
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = w.iter().sum();
                [w[0] / s, w[1] / s, w[2] / s]
            };
            let s = draw();
            let t = draw();
            let mut c = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    c[i][j] = m.d(i, j);
                }
            }
            let oracle = vertex_enumeration_3x3(s, t, &c);
            let got = transport_cost(&s, &t, &c.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
            assert!((got - oracle).abs() < 1e-10, "seed {seed}: {got} vs {oracle}");
        }
    }

    #[test]
    fn path_metric_transport_is_cumulative_difference() {
        // On a line, W1 equals the L1 distance between the CDFs.
        let m = path_metric(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut w: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            let mut v: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            let mut cdf = 0.0;
            let mut expect = 0.0;
            for i in 0..5 {
                cdf += w[i] - v[i];
                expect += cdf.abs() * m.d(i, i + 1);
            }
            let got = emd_on_points(&w, &v, &m).unwrap();
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn rejects_mass_mismatch() {
        let c = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(matches!(
            transport_cost(&[0.5, 0.5], &[0.5, 0.6], &c),
            Err(Error::MassMismatch(..))
        ));
    }
}
