//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the pruning engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Manifest JSON could not be parsed or has bad fields.
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    /// A blob slice does not match the shape it is declared to hold.
    #[error("shape mismatch for {context}: expected {expected} elements, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// Adjacent layers disagree on channel counts.
    #[error("chain broken between '{prev}' and '{next}': {prev} has {out} output channels, {next} expects {expected}")]
    ChainBroken {
        prev: String,
        next: String,
        out: usize,
        expected: usize,
    },

    /// Filesystem read/write failed.
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Fixture specification is inconsistent.
    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),

    /// A compression or maximum rate is outside its legal interval.
    #[error("invalid rate: {0}")]
    InvalidRate(String),

    /// A ledger operation was applied at the wrong layer index.
    #[error("cursor mismatch: ledger cursor is {cursor}, operation targets layer {requested}")]
    CursorMismatch { cursor: usize, requested: usize },

    /// The Eq. 2 floor exceeds alpha_max: even maximal pruning of the
    /// remaining layers cannot reach the target rate.
    #[error("infeasible budget at layer {layer}: required rate {required:.4} exceeds alpha_max {alpha_max:.4}")]
    InfeasibleBudget {
        layer: usize,
        required: f64,
        alpha_max: f64,
    },

    /// A pruning plan does not line up with the graph it is applied to.
    #[error("plan mismatch: {0}")]
    PlanMismatch(String),

    /// A plan would leave a layer with no output channels.
    #[error("plan keeps no channels for layer '{0}'")]
    EmptyLayer(String),

    /// Input tensor shape does not match what a layer expects.
    #[error("shape error: {0}")]
    ShapeError(String),

    /// A policy update produced non-finite parameters.
    #[error("diverged parameters: {0}")]
    DivergedParameters(String),

    /// Brute-force search found no rate assignment meeting the target.
    #[error("no feasible assignment: no grid combination reaches rate {beta:.4}")]
    NoFeasibleAssignment { beta: f64 },

    /// Policy file is truncated or structurally inconsistent.
    #[error("corrupt policy file: {0}")]
    CorruptPolicy(String),
}

pub type Result<T> = std::result::Result<T, Error>;
