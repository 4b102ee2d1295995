use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_BISECTIONS: usize = 200;

/// Solution of one per-node projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOutcome {
    pub p_row: Vec<f64>,
    /// Multiplier of the simplex constraint.
    pub beta: f64,
    /// Nonnegativity multipliers; nonzero only where `p` is clipped to zero.
    pub alpha: Vec<f64>,
    pub iterations: usize,
}

/// Per-arc constants of a node's regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcWeights {
    pub omega: f64,
    pub eta: f64,
    pub delta: f64,
}

impl ArcWeights {
    pub fn from_theta(omega: f64, theta: f64) -> Self {
        let eta = 1.0 - theta.ln();
        ArcWeights {
            omega,
            eta,
            delta: theta / eta,
        }
    }

    /// `kappa * eta / omega`
    fn rate(&self, kappa: f64) -> f64 {
        kappa * self.eta / self.omega
    }
}

fn candidate(q: &[f64], c_hat: &[f64], w: &[ArcWeights], kappa: f64, beta: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..q.len() {
        let x = (q[i] + w[i].delta) * (w[i].rate(kappa) * (beta - c_hat[i])).exp() - w[i].delta;
        out[i] = x.max(0.0);
        sum += out[i];
    }
    sum
}

/// Minimizes `D(p || q) + <p, c_hat>` over the simplex.
///
/// The minimizer is `p_v = max(0, (q_v + delta_v) exp(kappa eta_v / omega_v (beta - c_v)) - delta_v)`
/// with `beta` chosen so that `p` sums to one; `beta` is found by bisection on
/// `[min c_hat, max c_hat]`, where the row sum crosses one.
pub fn node_project(q: &[f64], c_hat: &[f64], w: &[ArcWeights], kappa: f64) -> Result<ProjectionOutcome> {
    let k = q.len();
    if k == 0 || c_hat.len() != k || w.len() != k {
        return Err(Error::Projection("row lengths differ or are empty".into()));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Projection(format!("kappa must be positive, got {kappa}")));
    }
    let sum_q: f64 = q.iter().sum();
    if q.iter().any(|&x| !(x >= 0.0)) || (sum_q - 1.0).abs() > 1e-12 {
        return Err(Error::Projection(format!("q row is not a simplex point (sum {sum_q})")));
    }
    if c_hat.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
        return Err(Error::Projection("costs must be finite and nonnegative".into()));
    }
    let lo0 = c_hat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi0 = c_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo0 == hi0 {
        return Ok(ProjectionOutcome {
            p_row: q.to_vec(),
            beta: lo0,
            alpha: vec![0.0; k],
            iterations: 0,
        });
    }

    let mut buf = vec![0.0; k];
    let (mut lo, mut hi) = (lo0, hi0);
    // Rounding can push the end values a few ulps past one.
    if candidate(q, c_hat, w, kappa, lo, &mut buf) > 1.0 + 1e-9 || candidate(q, c_hat, w, kappa, hi, &mut buf) < 1.0 - 1e-9 {
        return Err(Error::Projection("row sum does not cross one on the bracket".into()));
    }
    let mut iterations = 0;
    while iterations < MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let s = candidate(q, c_hat, w, kappa, mid, &mut buf);
        if s == 1.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if s < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut p_lo = vec![0.0; k];
    let s_lo = candidate(q, c_hat, w, kappa, lo, &mut p_lo);
    let s_hi = candidate(q, c_hat, w, kappa, hi, &mut buf);
    let (beta, mut p, s) = if (s_lo - 1.0).abs() <= (s_hi - 1.0).abs() {
        (lo, p_lo, s_lo)
    } else {
        (hi, buf, s_hi)
    };
    for x in p.iter_mut() {
        *x /= s;
    }
    let alpha = (0..k)
        .map(|i| {
            if p[i] > 0.0 {
                0.0
            } else {
                let a = c_hat[i] - beta + (w[i].delta / (q[i] + w[i].delta)).ln() / w[i].rate(kappa);
                a.max(0.0)
            }
        })
        .collect();
    Ok(ProjectionOutcome {
        p_row: p,
        beta,
        alpha,
        iterations,
    })
}

/// `D^{(u)}(p || q)`
pub fn local_divergence(p: &[f64], q: &[f64], w: &[ArcWeights], kappa: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        let a = p[i] + w[i].delta;
        let b = q[i] + w[i].delta;
        total += w[i].omega / w[i].eta * (a * (a / b).ln() + q[i] - p[i]);
    }
    total / kappa
}

impl ProjectionOutcome {
    /// Largest stationarity violation
    /// `|(1/kappa)(omega/eta) ln((p+delta)/(q+delta)) - (beta - c + alpha)|`.
    pub fn kkt_residual(&self, q: &[f64], c_hat: &[f64], w: &[ArcWeights], kappa: f64) -> f64 {
        (0..q.len())
            .map(|i| {
                let lhs = ((self.p_row[i] + w[i].delta) / (q[i] + w[i].delta)).ln() / w[i].rate(kappa);
                (lhs - (self.beta - c_hat[i] + self.alpha[i])).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Objective `D(p || q) + <p, c_hat>` at the returned point.
    pub fn objective(&self, q: &[f64], c_hat: &[f64], w: &[ArcWeights], kappa: f64) -> f64 {
        objective(&self.p_row, q, c_hat, w, kappa)
    }
}

pub fn objective(p: &[f64], q: &[f64], c_hat: &[f64], w: &[ArcWeights], kappa: f64) -> f64 {
    local_divergence(p, q, w, kappa) + p.iter().zip(c_hat).map(|(a, b)| a * b).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights(omega: &[f64], theta: &[f64]) -> Vec<ArcWeights> {
        omega.iter().zip(theta).map(|(&o, &t)| ArcWeights::from_theta(o, t)).collect()
    }

    #[test]
    fn zero_and_uniform_costs_keep_q() {
        let w = weights(&[1.0, 1.0, 1.0], &[0.2, 0.3, 0.5]);
        let q = [0.1, 0.6, 0.3];
        let out = node_project(&q, &[0.0; 3], &w, 1.0).unwrap();
        assert_eq!(out.p_row, q);
        assert_eq!(out.beta, 0.0);
        assert_eq!(out.alpha, vec![0.0; 3]);
        let out = node_project(&q, &[0.7; 3], &w, 1.0).unwrap();
        assert_eq!(out.p_row, q);
        assert_eq!(out.beta, 0.7);
    }

    #[test]
    fn two_arc_instance_matches_grid_search() {
        let w = weights(&[1.0, 1.0], &[0.5, 0.5]);
        let q = [0.5, 0.5];
        let c = [1.0, 0.0];
        let out = node_project(&q, &c, &w, 1.0).unwrap();
        let mut best = f64::INFINITY;
        let steps = 10_000_000u64;
        for i in 0..=steps {
            let x = i as f64 / steps as f64;
            best = best.min(objective(&[x, 1.0 - x], &q, &c, &w, 1.0));
        }
        let got = out.objective(&q, &c, &w, 1.0);
        assert!(got <= best + 1e-12);
        assert!((got - best).abs() < 1e-6);
        assert!(out.kkt_residual(&q, &c, &w, 1.0) < 1e-10);
    }

    #[test]
    fn random_instances_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let k = rng.random_range(2..=8);
            let theta: Vec<f64> = {
                let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            };
            let omega: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..10.0)).collect();
            let w = weights(&omega, &theta);
            let mut q: Vec<f64> = (0..k)
                .map(|_| if rng.random_range(0.0..1.0) < 0.2 { 0.0 } else { rng.random_range(0.0..1.0) })
                .collect();
            q[0] += 0.01;
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|x| *x /= s);
            let c: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..3.0)).collect();
            let kappa = rng.random_range(0.2..10.0);
            let out = node_project(&q, &c, &w, kappa).unwrap();
            assert!((out.p_row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(out.kkt_residual(&q, &c, &w, kappa) < 1e-10);
            assert!(out.beta >= 0.0);
            for i in 0..k {
                assert!(out.alpha[i] >= 0.0 && out.alpha[i] <= c[i]);
                if out.alpha[i] > 0.0 {
                    assert_eq!(out.p_row[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn shifting_costs_moves_only_beta() {
        let w = weights(&[2.0, 1.0, 0.5], &[0.2, 0.3, 0.5]);
        let q = [0.3, 0.3, 0.4];
        let a = node_project(&q, &[0.3, 0.1, 0.9], &w, 2.0).unwrap();
        let b = node_project(&q, &[1.3, 1.1, 1.9], &w, 2.0).unwrap();
        for (x, y) in a.p_row.iter().zip(&b.p_row) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!((b.beta - a.beta - 1.0).abs() < 1e-10);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let w = weights(&[1.0, 1.0], &[0.5, 0.5]);
        assert!(node_project(&[0.5, 0.6], &[0.0, 1.0], &w, 1.0).is_err());
        assert!(node_project(&[0.5, 0.5], &[0.0], &w, 1.0).is_err());
        assert!(node_project(&[0.5, 0.5], &[0.0, 1.0], &w, 0.0).is_err());
    }

    #[test]
    fn divergence_vanishes_on_the_diagonal() {
        let w = weights(&[1.0, 3.0], &[0.4, 0.6]);
        assert_eq!(local_divergence(&[0.2, 0.8], &[0.2, 0.8], &w, 1.0), 0.0);
        assert!(local_divergence(&[0.9, 0.1], &[0.2, 0.8], &w, 1.0) > 0.0);
    }
}
