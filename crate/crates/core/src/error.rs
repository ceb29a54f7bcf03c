use thiserror::Error;

use crate::mfg::MfgSolution;

/// Errors raised by the solvers and samplers in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the chart domain ({reason})")]
    OutsideDomain { point: Vec<f64>, reason: String },

    #[error("metric is not finite at {point:?}: the disk chart requires |x| < 1")]
    NonFiniteMetric { point: Vec<f64> },

    #[error("tangent vector is not unit length: g(v,v) = {norm_sq}")]
    NonUnitVector { norm_sq: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("field does not live on this grid (expected {expected} nodes, got {got})")]
    GridMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("Cole-Hopf inverse requires w > 0; found w = {value} at node {node} (the barrier bound keeps w >= exp(-C0 (T - t + 1) / 2))")]
    NonPositiveColeHopf { node: usize, value: f64 },

    #[error("barrier bound violated at step {step}, node {node}: w = {value}, bounds [{lower}, {upper}]; retry with a smaller time step than {dt}")]
    BarrierViolation {
        step: usize,
        node: usize,
        value: f64,
        lower: f64,
        upper: f64,
        dt: f64,
    },

    #[error("time step {dt} is too large for the explicit Hamiltonian (stability limit {limit})")]
    TimeStepTooLarge { dt: f64, limit: f64 },

    #[error("density became negative ({value}) at step {step}, node {node}")]
    NegativeDensity { step: usize, node: usize, value: f64 },

    #[error("mass defect {defect:e} at step {step} exceeds the conservation tolerance")]
    MassDefect { step: usize, defect: f64 },

    #[error("unbalanced transport problem: source mass {source_mass}, target mass {target_mass}")]
    UnbalancedMasses { source_mass: f64, target_mass: f64 },

    #[error("negative or non-finite weight {value} at index {index}")]
    InvalidWeight { index: usize, value: f64 },

    #[error("nodes {x} and {y} lie in different connected components")]
    Disconnected { x: usize, y: usize },

    #[error("curvature between coincident points is undefined")]
    CoincidentPoints,

    #[error("geodesic ball of radius {radius} around {center:?} leaves the chart domain")]
    BallOutsideDomain { center: Vec<f64>, radius: f64 },

    #[error("linear solver failed to converge: residual {residual:e} after {iterations} iterations")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("Picard iteration did not converge after {} iterations (last residual {:e})", .0.iterations(), .0.last_residual())]
    NotConverged(Box<MfgSolution>),

    #[error("kernel is not finite at distance {distance}")]
    NonFiniteKernel { distance: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
