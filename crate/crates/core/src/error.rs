use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// First violated structural invariant of a marked DAG.
#[derive(Debug, Clone, PartialEq)]
pub enum DagViolation {
    Empty,
    UnknownNode(String),
    DuplicateNode(String),
    ParallelArc { tail: String, head: String },
    SelfLoop(String),
    MultipleSources(Vec<String>),
    RootHasInArc(String),
    Cycle,
    Unreachable(String),
    SinkMismatch(String),
    NonPositiveOmega { tail: String, head: String, omega: f64 },
    ThetaOutOfRange { tail: String, head: String, theta: f64 },
    ThetaRowSum { node: String, sum: f64 },
    NonMonotoneOmega { tail: String, mid: String, head: String },
    NotGeometric { tail: String, mid: String, head: String, ratio: f64, tau: f64 },
    TauTooSmall(f64),
}

impl DagViolation {
    /// Stable short name, used by the CLI report.
    pub fn check_name(&self) -> &'static str {
        match self {
            DagViolation::Empty => "nonempty",
            DagViolation::UnknownNode(_) => "known_nodes",
            DagViolation::DuplicateNode(_) => "unique_nodes",
            DagViolation::ParallelArc { .. } => "no_parallel_arcs",
            DagViolation::SelfLoop(_) => "no_self_loops",
            DagViolation::MultipleSources(_) => "single_source",
            DagViolation::RootHasInArc(_) => "single_source",
            DagViolation::Cycle => "acyclic",
            DagViolation::Unreachable(_) => "reachability",
            DagViolation::SinkMismatch(_) => "sinks_are_points",
            DagViolation::NonPositiveOmega { .. } => "omega_positive",
            DagViolation::ThetaOutOfRange { .. } => "theta_range",
            DagViolation::ThetaRowSum { .. } => "theta_row_sum",
            DagViolation::NonMonotoneOmega { .. } => "omega_decreasing",
            DagViolation::NotGeometric { .. } => "tau_geometric",
            DagViolation::TauTooSmall(_) => "tau_at_least_4",
        }
    }
}

impl fmt::Display for DagViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.check_name())?;
        match self {
            DagViolation::Empty => write!(f, "DAG has no nodes"),
            DagViolation::UnknownNode(id) => write!(f, "arc references unknown node {id}"),
            DagViolation::DuplicateNode(id) => write!(f, "node {id} declared twice"),
            DagViolation::ParallelArc { tail, head } => write!(f, "parallel arc {tail} -> {head}"),
            DagViolation::SelfLoop(id) => write!(f, "self loop at {id}"),
            DagViolation::MultipleSources(ids) => write!(f, "multiple sources {ids:?}"),
            DagViolation::RootHasInArc(id) => write!(f, "root {id} has an incoming arc"),
            DagViolation::Cycle => write!(f, "graph contains a cycle"),
            DagViolation::Unreachable(id) => write!(f, "node {id} is not reachable from the root"),
            DagViolation::SinkMismatch(msg) => write!(f, "{msg}"),
            DagViolation::NonPositiveOmega { tail, head, omega } => {
                write!(f, "arc {tail} -> {head} has length {omega}")
            }
            DagViolation::ThetaOutOfRange { tail, head, theta } => {
                write!(f, "arc {tail} -> {head} has theta {theta} outside (0, 1]")
            }
            DagViolation::ThetaRowSum { node, sum } => {
                write!(f, "theta row of {node} sums to {sum}")
            }
            DagViolation::NonMonotoneOmega { tail, mid, head } => {
                write!(f, "omega not decreasing along {tail} -> {mid} -> {head}")
            }
            DagViolation::NotGeometric { tail, mid, head, ratio, tau } => write!(
                f,
                "omega ratio {ratio} < tau = {tau} along {tail} -> {mid} -> {head}"
            ),
            DagViolation::TauTooSmall(tau) => write!(f, "tau = {tau} is below 4"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("triangle inequality violated: d({i},{k}) = {direct} > d({i},{j}) + d({j},{k}) = {detour}")]
    TriangleViolation {
        i: usize,
        j: usize,
        k: usize,
        direct: f64,
        detour: f64,
    },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("transport masses differ: {0} vs {1}")]
    MassMismatch(f64, f64),
    #[error("invalid DAG: {0}")]
    InvalidDag(DagViolation),
    #[error("root-sink path count exceeds cap {cap}")]
    PathCap { cap: usize },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid flow: {0}")]
    InvalidFlow(String),
    #[error("builder invariant violated: {0}")]
    Builder(String),
    #[error("compression failed: {0}")]
    Compression(String),
    #[error("projection failed: {0}")]
    Projection(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<DagViolation> for Error {
    fn from(v: DagViolation) -> Self {
        Error::InvalidDag(v)
    }
}

impl Error {
    /// Whether the error reflects a broken mathematical invariant rather than bad input.
    pub fn is_invariant_failure(&self) -> bool {
        matches!(
            self,
            Error::InvalidDag(_)
                | Error::TriangleViolation { .. }
                | Error::Builder(_)
                | Error::Compression(_)
                | Error::Projection(_)
        )
    }
}
