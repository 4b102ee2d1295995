use serde::{Deserialize, Serialize};

use crate::dag::{MarkedDag, UnitFlow};

use super::potential::{global_divergence, psi_potential, Psi_potential};
use super::{epsilon_dag, SubstepDetail};

/// Outcome of one checked inequality `lhs <= rhs`, or identity `lhs == rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs` for inequalities, `|lhs - rhs|` for identities.
    pub residual: f64,
    /// `false` when the hypothesis of the check does not hold for this step.
    pub applies: bool,
}

impl StepCheck {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        StepCheck {
            name: name.into(),
            lhs,
            rhs,
            residual: lhs - rhs,
            applies: true,
        }
    }

    fn eq(name: &str, lhs: f64, rhs: f64) -> Self {
        StepCheck {
            residual: (lhs - rhs).abs(),
            ..Self::le(name, lhs, rhs)
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        !self.applies || self.residual <= tol
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepCheckReport {
    pub checks: Vec<StepCheck>,
}

impl StepCheckReport {
    /// Largest residual among applicable checks called `name`.
    pub fn worst(&self, name: &str) -> Option<f64> {
        self.checks
            .iter()
            .filter(|c| c.applies && c.name == name)
            .map(|c| c.residual)
            .reduce(f64::max)
    }

    pub fn all_pass(&self, tol: f64) -> bool {
        self.checks.iter().all(|c| c.passes(tol))
    }

    pub fn failures(&self, tol: f64) -> Vec<&StepCheck> {
        self.checks.iter().filter(|c| !c.passes(tol)).collect()
    }
}

/// Evaluates the per-step analysis inequalities on one completed sub-step.
///
/// Checks, by name:
/// - `service`: `D(F||p) - D(F||q) <= <c, F - P>` for each comparator `F`;
/// - `height`: `|Q-P| = 2 |(Q-P)+| + psi(P) - psi(Q)`;
/// - `alphas`: `alpha_uv <= c_hat_v`;
/// - `kkt`: stationarity residual of every projection;
/// - `mv2`: `sum eta Q c_hat <= (D0 + DI) <c, Q>`;
/// - `crucial`: the per-node bound on `Psi_u(p) - Psi_u(q)`;
/// - `movement`: `(tau-3)/(kappa tau) |(Q-P)+| <= (2 D0 + DI) <c, Q> + Psi(q) - Psi(p)`;
/// - `movement_total`: `|Q-P| / kappa <= (psi(P) - psi(Q)) / kappa
///   + 4 tau/(tau-3) (Psi(q) - Psi(p) + (2 D0 + DI) <c, P>)`, applicable when `|c|_inf <= eps_D`.
pub fn verify_step_inequalities(
    dag: &MarkedDag,
    detail: &SubstepDetail,
    kappa: f64,
    comparators: &[UnitFlow],
) -> StepCheckReport {
    let mut checks = Vec::new();
    let q = &detail.q_before;
    let p = &detail.p_after;
    let c = &detail.cost;
    let big_q = dag.lambda_map(q);
    let big_p = dag.lambda_map(p);
    let serve = |f: &UnitFlow| f.service(dag, c);

    for f in comparators {
        let lhs = global_divergence(dag, f, p, kappa) - global_divergence(dag, f, q, kappa);
        checks.push(StepCheck::le("service", lhs, serve(f) - serve(&big_p)));
    }

    let full = dag.l1_omega(&big_q, &big_p);
    let pos = dag.l1_omega_positive(&big_q, &big_p);
    let (psi_q, psi_p) = (psi_potential(dag, &big_q), psi_potential(dag, &big_p));
    checks.push(StepCheck::eq("height", full, 2.0 * pos + psi_p - psi_q));

    let alpha_excess = dag
        .arcs()
        .iter()
        .zip(&detail.alpha)
        .map(|(a, &al)| al - detail.c_hat[a.head])
        .fold(f64::NEG_INFINITY, f64::max);
    if alpha_excess.is_finite() {
        checks.push(StepCheck::le("alphas", alpha_excess, 0.0));
    }
    checks.push(StepCheck::le("kkt", detail.kkt_residual, 0.0));

    let d0 = dag.combinatorial_depth() as f64;
    let di = dag.information_depth();
    let serve_q = serve(&big_q);
    let serve_p = serve(&big_p);
    let lhs_mv2: f64 = dag
        .arcs()
        .iter()
        .zip(big_q.values())
        .map(|(a, &qa)| a.eta * qa * detail.c_hat[a.head])
        .sum();
    checks.push(StepCheck::le("mv2", lhs_mv2, (d0 + di) * serve_q));

    let mut crucial_worst = f64::NEG_INFINITY;
    for u in dag.internal_nodes() {
        let qu = big_q.node_value(dag, u);
        let pu = big_p.node_value(dag, u);
        let psi_u = |mass: f64, row: Vec<f64>| {
            if mass == 0.0 {
                return 0.0;
            }
            let theta: Vec<f64> = dag.out_arcs(u).iter().map(|&a| dag.arcs()[a].theta).collect();
            -mass * super::local_divergence(&theta, &row, &super::node_weights(dag, u), kappa)
        };
        let lhs = psi_u(pu, p.row(dag, u)) - psi_u(qu, q.row(dag, u));
        let max_omega = dag.out_arcs(u).iter().map(|&a| dag.arcs()[a].omega).fold(0.0, f64::max);
        let mut rhs = 2.0 / kappa * (qu - pu).max(0.0) * max_omega;
        for &a in dag.out_arcs(u) {
            let arc = &dag.arcs()[a];
            rhs += (detail.c_hat[arc.head] - detail.alpha[a]) * (big_q.values()[a] - arc.theta * qu);
        }
        crucial_worst = crucial_worst.max(lhs - rhs);
    }
    if crucial_worst.is_finite() {
        checks.push(StepCheck::le("crucial", crucial_worst, 0.0));
    }

    let tau = dag.tau();
    let big_psi_q = Psi_potential(dag, q, kappa);
    let big_psi_p = Psi_potential(dag, p, kappa);
    checks.push(StepCheck::le(
        "movement",
        (tau - 3.0) / (kappa * tau) * pos,
        (2.0 * d0 + di) * serve_q + big_psi_q - big_psi_p,
    ));

    let sup = c.iter().copied().fold(0.0, f64::max);
    let eps = epsilon_dag(dag, kappa);
    let mut total = StepCheck::le(
        "movement_total",
        full / kappa,
        (psi_p - psi_q) / kappa + 4.0 * tau / (tau - 3.0) * (big_psi_q - big_psi_p + (2.0 * d0 + di) * serve_p),
    );
    total.applies = sup <= eps * (1.0 + 1e-12);
    checks.push(total);

    StepCheckReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::build_hierarchical_dag;
    use crate::dag::{random_layered_dag, DagPath, LayeredDagParams};
    use crate::engine::EngineState;
    use crate::metric::random_euclidean_metric;
    use rand::seq::IndexedRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_flow(dag: &MarkedDag, paths: &[DagPath], rng: &mut ChaCha8Rng) -> UnitFlow {
        let k = rng.random_range(1..=3.min(paths.len()));
        let picks: Vec<(DagPath, f64)> = paths
            .choose_multiple(rng, k)
            .map(|p| (p.clone(), 1.0 / k as f64))
            .collect();
        UnitFlow::from_paths(dag, &picks)
    }

    #[test]
    fn zero_cost_step_has_no_slack_to_spend() {
        let d = random_layered_dag(&LayeredDagParams::default(), 4).unwrap();
        let mut s = EngineState::new(d.clone(), None, 1.0).unwrap();
        let detail = s.substep(&vec![0.0; d.num_points()]).unwrap();
        let paths = d.paths().unwrap().to_vec();
        let f = UnitFlow::along_path(&d, &paths[0]);
        let r = verify_step_inequalities(&d, &detail, 1.0, &[f]);
        assert_eq!(r.worst("service"), Some(0.0));
        assert!(r.worst("alphas").unwrap() <= 0.0);
        assert!(r.all_pass(1e-12));
    }

    #[test]
    fn battery_holds_on_built_dags() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..4 {
            let m = random_euclidean_metric(6 + seed as usize, 2, seed).unwrap();
            let d = build_hierarchical_dag(&m).unwrap().dag;
            let paths = d.paths().unwrap().to_vec();
            let mut s = EngineState::new(d.clone(), None, 2.0).unwrap();
            for _ in 0..10 {
                let c: Vec<f64> = (0..d.num_points()).map(|_| rng.random_range(0.0..s.epsilon())).collect();
                let detail = s.substep(&c).unwrap();
                let comps: Vec<UnitFlow> = (0..5).map(|_| random_flow(&d, &paths, &mut rng)).collect();
                let r = verify_step_inequalities(&d, &detail, 2.0, &comps);
                assert!(r.all_pass(1e-8), "{:?}", r.failures(1e-8));
                assert!(r.worst("height").unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn large_pieces_switch_off_the_total_bound() {
        let d = random_layered_dag(&LayeredDagParams::default(), 6).unwrap();
        let mut s = EngineState::new(d.clone(), None, 1.0).unwrap();
        let big = 10.0 * s.epsilon();
        let detail = s.substep(&vec![big; d.num_points()]).unwrap();
        let r = verify_step_inequalities(&d, &detail, 1.0, &[]);
        assert!(r.checks.iter().any(|c| c.name == "movement_total" && !c.applies));
    }
}
