use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::MetricSpace;

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidMetric("generator needs n >= 1".into()));
    }
    Ok(())
}

/// All distinct points at distance 1.
pub fn uniform_metric(n: usize) -> Result<MetricSpace> {
    check_n(n)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
        .collect();
    MetricSpace::validate_and_normalize(&rows, None)
}

/// Shortest-path metric of the path graph on `n` vertices.
pub fn path_metric(n: usize) -> Result<MetricSpace> {
    check_n(n)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (i as f64 - j as f64).abs()).collect())
        .collect();
    MetricSpace::validate_and_normalize(&rows, None)
}

/// `n` i.i.d. uniform points in `[0,1]^dim` under the Euclidean norm.
pub fn random_euclidean_metric(n: usize, dim: usize, seed: u64) -> Result<MetricSpace> {
    check_n(n)?;
    if dim == 0 {
        return Err(Error::InvalidMetric("dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let rows: Vec<Vec<f64>> = pts
        .iter()
        .map(|p| {
            pts.iter()
                .map(|q| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect()
        })
        .collect();
    MetricSpace::validate_and_normalize(&rows, None)
}

/// Shortest-path metric of a random sparse graph: a Hamiltonian cycle on a
/// random vertex order plus two random chords per vertex.
pub fn expander_like_metric(n: usize, seed: u64) -> Result<MetricSpace> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = vec![Vec::<usize>::new(); n];
    let add = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
        if a != b && !adj[a].contains(&b) {
            adj[a].push(b);
            adj[b].push(a);
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for i in 0..n {
        add(&mut adj, order[i], order[(i + 1) % n]);
    }
    if n > 3 {
        for v in 0..n {
            for _ in 0..2 {
                let w = rng.random_range(0..n);
                add(&mut adj, v, w);
            }
        }
    }
    let mut rows = vec![vec![0.0; n]; n];
    for (s, row) in rows.iter_mut().enumerate() {
        let mut hops = vec![usize::MAX; n];
        hops[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if hops[w] == usize::MAX {
                    hops[w] = hops[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        for (t, h) in hops.into_iter().enumerate() {
            row[t] = h as f64;
        }
    }
    MetricSpace::validate_and_normalize(&rows, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_has_unit_distances() {
        let m = uniform_metric(3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.d(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn path_is_normalized_line() {
        let m = path_metric(3).unwrap();
        assert_eq!(
            m.to_rows(),
            vec![vec![0.0, 0.5, 1.0], vec![0.5, 0.0, 0.5], vec![1.0, 0.5, 0.0]]
        );
    }

    #[test]
    fn seeded_generators_are_deterministic() {
        assert_eq!(
            random_euclidean_metric(5, 2, 7).unwrap(),
            random_euclidean_metric(5, 2, 7).unwrap()
        );
        assert_ne!(
            random_euclidean_metric(5, 2, 7).unwrap(),
            random_euclidean_metric(5, 2, 8).unwrap()
        );
        assert_eq!(expander_like_metric(20, 3).unwrap(), expander_like_metric(20, 3).unwrap());
    }

    #[test]
    fn generated_metrics_have_unit_diameter() {
        for n in 2..12 {
            assert_eq!(expander_like_metric(n, n as u64).unwrap().diameter(), 1.0);
            assert_eq!(random_euclidean_metric(n, 3, n as u64).unwrap().diameter(), 1.0);
        }
        assert!(uniform_metric(0).is_err());
    }
}
