//! Discrete mirror-descent dynamics on a marked DAG.

mod potential;
mod project;
mod verify;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use potential::{global_divergence, multiscale_entropy, psi_potential, Psi_potential};
pub use project::{local_divergence, node_project, objective, ArcWeights, ProjectionOutcome};
pub use verify::{verify_step_inequalities, StepCheck, StepCheckReport};

use crate::dag::{CondDistribution, MarkedDag, UnitFlow};
use crate::error::{Error, Result};
use crate::metric::emd_on_points;

use potential::node_weights;

/// Upper limit on cost pieces per step.
pub const MAX_SPLITS: usize = 100_000_000;

/// Largest per-piece cost for which the movement bound applies:
/// `omega_min / (2 (2 D0 + DI)) * (tau - 3) / (tau kappa)`, or `+inf` without arcs.
pub fn epsilon_dag(dag: &MarkedDag, kappa: f64) -> f64 {
    if dag.arc_count() == 0 {
        return f64::INFINITY;
    }
    let depth = 2.0 * dag.combinatorial_depth() as f64 + dag.information_depth();
    let tau = dag.tau();
    dag.omega_min() / (2.0 * depth) * ((tau - 3.0) / (tau * kappa))
}

/// Everything produced by one application of the update to one cost piece.
#[derive(Debug, Clone)]
pub struct SubstepDetail {
    pub q_before: CondDistribution,
    pub p_after: CondDistribution,
    /// Cost piece on points.
    pub cost: Vec<f64>,
    /// Backpropagated cost per node.
    pub c_hat: Vec<f64>,
    /// Simplex multiplier per node (zero at sinks).
    pub beta: Vec<f64>,
    /// Nonnegativity multiplier per arc.
    pub alpha: Vec<f64>,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// `sum over pieces <c_piece, P>`
    pub service: f64,
    pub movement_l1: f64,
    /// Transport cost between greedy path decompositions of consecutive flows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub movement_w1_dag: Option<f64>,
    /// Transport cost between the product path measures of consecutive states.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub movement_w1_paths: Option<f64>,
    /// Transport cost between consecutive point marginals under the base metric.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub movement_w1_base: Option<f64>,
    pub psi: f64,
    #[serde(rename = "Psi")]
    pub big_psi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence_to_reference: Option<f64>,
    pub splits: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub steps: usize,
    pub splits: usize,
    pub service: f64,
    pub movement_l1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub movement_w1_dag: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub movement_w1_paths: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub movement_w1_base: Option<f64>,
}

impl RunTotals {
    fn add(&mut self, r: &StepRecord) {
        fn acc(slot: &mut Option<f64>, v: Option<f64>) {
            if let Some(v) = v {
                *slot = Some(slot.unwrap_or(0.0) + v);
            }
        }
        self.steps += 1;
        self.splits += r.splits;
        self.service += r.service;
        self.movement_l1 += r.movement_l1;
        acc(&mut self.movement_w1_dag, r.movement_w1_dag);
        acc(&mut self.movement_w1_paths, r.movement_w1_paths);
        acc(&mut self.movement_w1_base, r.movement_w1_base);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub steps: Vec<StepRecord>,
    pub totals: RunTotals,
}

impl RunTrace {
    /// One JSON object per step, then `{"totals": ...}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut w, &serde_json::json!({ "totals": self.totals }))?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        let mut totals = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line)?;
            if let Some(t) = v.get("totals") {
                totals = Some(serde_json::from_value(t.clone())?);
            } else {
                steps.push(serde_json::from_value(v)?);
            }
        }
        let totals = totals.ok_or_else(|| Error::Parse("trace has no totals line".into()))?;
        Ok(RunTrace { steps, totals })
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepOptions {
    /// Record transport movement (needs enumerable paths, and a metric for the base variant).
    pub exact_w1: bool,
    /// Flow to measure `D(F || q)` against after each step.
    pub reference: Option<UnitFlow>,
}

/// Source of cost vectors; adaptive sources see the current point marginal.
pub trait CostSource {
    fn next_cost(&mut self, t: usize, marginal: &[f64]) -> Option<Vec<f64>>;
}

/// A precomputed cost sequence.
#[derive(Debug, Clone)]
pub struct FixedCosts {
    rows: Vec<Vec<f64>>,
}

impl FixedCosts {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        FixedCosts { rows }
    }
}

impl CostSource for FixedCosts {
    fn next_cost(&mut self, t: usize, _marginal: &[f64]) -> Option<Vec<f64>> {
        self.rows.get(t).cloned()
    }
}

/// Algorithm state: the DAG, the conditional distribution and `kappa`.
#[derive(Debug, Clone)]
pub struct EngineState {
    dag: MarkedDag,
    q: CondDistribution,
    kappa: f64,
    eps: f64,
    weights: Vec<Vec<ArcWeights>>,
    step_count: usize,
}

impl EngineState {
    /// Starts from `q0`, or from the arc probabilities when `None`.
    pub fn new(dag: MarkedDag, q0: Option<CondDistribution>, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Projection(format!("kappa must be positive, got {kappa}")));
        }
        let q = match q0 {
            Some(q) => CondDistribution::new(&dag, q.values().to_vec())?,
            None => CondDistribution::from_theta(&dag),
        };
        let weights = (0..dag.node_count()).map(|u| node_weights(&dag, u)).collect();
        let eps = epsilon_dag(&dag, kappa);
        Ok(EngineState {
            dag,
            q,
            kappa,
            eps,
            weights,
            step_count: 0,
        })
    }

    /// Replaces the cost-splitting threshold.
    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn dag(&self) -> &MarkedDag {
        &self.dag
    }

    pub fn q(&self) -> &CondDistribution {
        &self.q
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn flow(&self) -> UnitFlow {
        self.dag.lambda_map(&self.q)
    }

    /// Probability mass at each point.
    pub fn marginal(&self) -> Vec<f64> {
        self.flow().sink_marginal(&self.dag)
    }

    /// One update with cost `c` on points, without splitting.
    pub fn substep(&mut self, c: &[f64]) -> Result<SubstepDetail> {
        let dag = &self.dag;
        if c.len() != dag.num_points() {
            return Err(Error::Dimension {
                expected: dag.num_points(),
                got: c.len(),
            });
        }
        if c.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Projection("costs must be finite and nonnegative".into()));
        }
        let mut c_hat = vec![0.0; dag.node_count()];
        for (p, &x) in c.iter().enumerate() {
            c_hat[dag.point_node(p)] = x;
        }
        let mut beta = vec![0.0; dag.node_count()];
        let mut alpha = vec![0.0; dag.arc_count()];
        let mut p = self.q.values().to_vec();
        let mut kkt: f64 = 0.0;
        for u in dag.internal_nodes().rev() {
            let arcs = dag.out_arcs(u);
            let q_row: Vec<f64> = arcs.iter().map(|&a| self.q.values()[a]).collect();
            let c_row: Vec<f64> = arcs.iter().map(|&a| c_hat[dag.arcs()[a].head]).collect();
            let w = &self.weights[u];
            let out = node_project(&q_row, &c_row, w, self.kappa)?;
            kkt = kkt.max(out.kkt_residual(&q_row, &c_row, w, self.kappa));
            c_hat[u] = out.p_row.iter().zip(&c_row).map(|(a, b)| a * b).sum();
            beta[u] = out.beta;
            for (i, &a) in arcs.iter().enumerate() {
                p[a] = out.p_row[i];
                alpha[a] = out.alpha[i];
            }
        }
        let p = CondDistribution::from_raw(p);
        let q_before = std::mem::replace(&mut self.q, p.clone());
        Ok(SubstepDetail {
            q_before,
            p_after: p,
            cost: c.to_vec(),
            c_hat,
            beta,
            alpha,
            kkt_residual: kkt,
        })
    }

    /// Serves cost `c`, split into `ceil(|c|_inf / eps)` equal pieces.
    pub fn step(&mut self, c: &[f64], opts: &StepOptions) -> Result<StepRecord> {
        self.step_observed(c, opts, &mut |_, _| {})
    }

    /// [`Self::step`], calling `observer` after every piece.
    pub fn step_observed(
        &mut self,
        c: &[f64],
        opts: &StepOptions,
        observer: &mut dyn FnMut(&SubstepDetail, &EngineState),
    ) -> Result<StepRecord> {
        let sup = c.iter().copied().fold(0.0, f64::max);
        let ratio = (sup / self.eps).ceil();
        if ratio > MAX_SPLITS as f64 {
            return Err(Error::Projection(format!(
                "cost of size {sup} needs more than {MAX_SPLITS} pieces"
            )));
        }
        let splits = (ratio as usize).max(1);
        let piece: Vec<f64> = c.iter().map(|x| x / splits as f64).collect();

        let want_dag = opts.exact_w1;
        let want_base = opts.exact_w1 && self.dag.metric().is_some();
        let paths = if opts.exact_w1 { Some(self.dag.paths()?.to_vec()) } else { None };
        let mut service = 0.0;
        let mut movement = 0.0;
        let mut w1_dag = want_dag.then_some(0.0);
        let mut w1_paths = want_dag.then_some(0.0);
        let mut w1_base = want_base.then_some(0.0);
        let mut prev_flow = self.flow();
        let mut prev_masses = paths.as_ref().map(|ps| self.q.path_masses(ps));
        for _ in 0..splits {
            let detail = self.substep(&piece)?;
            let flow = self.flow();
            service += flow.service(&self.dag, &piece);
            movement += self.dag.l1_omega(&prev_flow, &flow);
            if let Some(acc) = w1_dag.as_mut() {
                *acc += self.dag.w1_dag_exact(&prev_flow, &flow)?;
            }
            if let (Some(acc), Some(ps)) = (w1_paths.as_mut(), paths.as_ref()) {
                let masses = self.q.path_masses(ps);
                *acc += self
                    .dag
                    .w1_ultrametric(ps, prev_masses.as_ref().expect("set with paths"), &masses);
                prev_masses = Some(masses);
            }
            if let Some(acc) = w1_base.as_mut() {
                let m = self.dag.metric().expect("checked above");
                *acc += emd_on_points(&prev_flow.sink_marginal(&self.dag), &flow.sink_marginal(&self.dag), m)?;
            }
            observer(&detail, self);
            prev_flow = flow;
        }
        self.step_count += 1;
        Ok(StepRecord {
            t: self.step_count,
            service,
            movement_l1: movement,
            movement_w1_dag: w1_dag,
            movement_w1_paths: w1_paths,
            movement_w1_base: w1_base,
            psi: psi_potential(&self.dag, &prev_flow),
            big_psi: Psi_potential(&self.dag, &self.q, self.kappa),
            divergence_to_reference: opts
                .reference
                .as_ref()
                .map(|r| global_divergence(&self.dag, r, &self.q, self.kappa)),
            splits,
        })
    }

    /// Runs up to `t_max` steps, stopping early when the source is exhausted.
    pub fn run(&mut self, source: &mut dyn CostSource, t_max: usize, opts: &StepOptions) -> Result<RunTrace> {
        self.run_observed(source, t_max, opts, &mut |_, _| {})
    }

    pub fn run_observed(
        &mut self,
        source: &mut dyn CostSource,
        t_max: usize,
        opts: &StepOptions,
        observer: &mut dyn FnMut(&SubstepDetail, &EngineState),
    ) -> Result<RunTrace> {
        let mut steps = Vec::new();
        let mut totals = RunTotals::default();
        for t in 0..t_max {
            let marginal = self.marginal();
            let Some(c) = source.next_cost(t, &marginal) else { break };
            let rec = self.step_observed(&c, opts, observer)?;
            totals.add(&rec);
            steps.push(rec);
        }
        Ok(RunTrace { steps, totals })
    }
}

/// Runs the dynamics from `q0` (arc probabilities by default) on a fixed cost sequence.
pub fn run(
    dag: &MarkedDag,
    costs: &[Vec<f64>],
    q0: Option<CondDistribution>,
    kappa: f64,
    opts: &StepOptions,
) -> Result<RunTrace> {
    let mut state = EngineState::new(dag.clone(), q0, kappa)?;
    state.run(&mut FixedCosts::new(costs.to_vec()), costs.len(), opts)
}
