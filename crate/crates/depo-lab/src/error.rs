//! Crate-wide error type shared by graph validation, chain construction,
//! solvers, analysis routines, and the command layer.

use thiserror::Error;

/// Everything that can go wrong across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty vertex set")]
    EmptyVertexSet,

    #[error("graph is not connected")]
    DisconnectedGraph,

    #[error("self-loop on vertex {0} (undirected graphs must be simple)")]
    SelfLoop(usize),

    #[error("duplicate edge between {0} and {1}")]
    DuplicateEdge(usize, usize),

    #[error("vertex {vertex} out of range for {n} vertices")]
    VertexOutOfRange { vertex: usize, n: usize },

    #[error("no directed path from {from} to {to}")]
    NotReachable { from: usize, to: usize },

    #[error("driver graph is not lazy: vertex {0} lacks a self-loop")]
    NotLazy(usize),

    #[error("driver graph is not irreducible")]
    NotIrreducible,

    #[error("invalid driver: {0}")]
    InvalidDriver(String),

    #[error("depth bound {bound} too small: a core state already sits at depth {needed}")]
    DepthBoundTooSmall { bound: i64, needed: i64 },

    #[error("state cap {0} exceeded during enumeration")]
    StateCapExceeded(usize),

    #[error("certificate violated: min {steps}-step core mass {found:.6e} < alpha' = {bound:.6e}")]
    CertificateViolation { steps: usize, found: f64, bound: f64 },

    #[error("core construction inconsistent: {0}")]
    ConstructionMismatch(String),

    #[error("Neumann condition fails: ||M22^{power}||_inf = {norm:.12} > 1 - alpha = {bound:.12}")]
    NeumannDivergence { power: usize, norm: f64, bound: f64 },

    #[error("power iteration did not converge within {0} iterations")]
    PerronFailure(usize),

    #[error("cycle exceeded {0} steps without returning to the anchor")]
    CycleTimeout(u64),

    #[error("graph too small for the coordinate-change indicator: |V| = {0} <= 2")]
    SmallGraph(usize),

    #[error("bound violated beyond noise: {0}")]
    BoundViolationBeyondNoise(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
