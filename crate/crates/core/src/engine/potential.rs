use crate::dag::{CondDistribution, MarkedDag, UnitFlow};

use super::project::{local_divergence, ArcWeights};

pub(crate) fn node_weights(dag: &MarkedDag, u: usize) -> Vec<ArcWeights> {
    dag.out_arcs(u)
        .iter()
        .map(|&a| {
            let arc = &dag.arcs()[a];
            ArcWeights {
                omega: arc.omega,
                eta: arc.eta,
                delta: arc.delta,
            }
        })
        .collect()
}

/// `D(F || q)`; arcs leaving nodes without flow contribute nothing.
pub fn global_divergence(dag: &MarkedDag, f: &UnitFlow, q: &CondDistribution, kappa: f64) -> f64 {
    let fv = f.values();
    let qv = q.values();
    let mut total = 0.0;
    for u in dag.internal_nodes() {
        let fu = f.node_value(dag, u);
        if fu <= 0.0 {
            continue;
        }
        for &a in dag.out_arcs(u) {
            let arc = &dag.arcs()[a];
            let ratio = (fv[a] / fu + arc.delta) / (qv[a] + arc.delta);
            total += arc.omega / arc.eta * ((fv[a] + fu * arc.delta) * ratio.ln() + fu * qv[a] - fv[a]);
        }
    }
    total / kappa
}

/// `psi(F) = sum omega F`
pub fn psi_potential(dag: &MarkedDag, f: &UnitFlow) -> f64 {
    f.weighted_mass(dag)
}

/// `Psi(r) = - sum_u Lambda(r)_u D^{(u)}(theta^{(u)} || r^{(u)})`
#[allow(non_snake_case)]
pub fn Psi_potential(dag: &MarkedDag, r: &CondDistribution, kappa: f64) -> f64 {
    let flow = dag.lambda_map(r);
    -dag.internal_nodes()
        .map(|u| {
            let fu = flow.node_value(dag, u);
            if fu == 0.0 {
                return 0.0;
            }
            let theta: Vec<f64> = dag.out_arcs(u).iter().map(|&a| dag.arcs()[a].theta).collect();
            fu * local_divergence(&theta, &r.row(dag, u), &node_weights(dag, u), kappa)
        })
        .sum::<f64>()
}

/// Multiscale entropy `Phi(F)`.
pub fn multiscale_entropy(dag: &MarkedDag, f: &UnitFlow, kappa: f64) -> f64 {
    let fv = f.values();
    let mut total = 0.0;
    for u in dag.internal_nodes() {
        let fu = f.node_value(dag, u);
        if fu <= 0.0 {
            continue;
        }
        for &a in dag.out_arcs(u) {
            let arc = &dag.arcs()[a];
            total += arc.omega / arc.eta * (fv[a] + arc.delta * fu) * (fv[a] / fu + arc.delta).ln();
        }
    }
    total / kappa
}
