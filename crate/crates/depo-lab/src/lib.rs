//! Screened particle deposition on finite connected graphs.
//!
//! Particles drop onto the vertices of a graph; a particle dropped at a
//! vertex slides up to one above the tallest column in its closed
//! neighborhood, so columns screen their neighbors. Subtracting the running
//! maximum turns the height profile into a positive-recurrent Markov chain
//! on depth profiles, and the crate is organized around that chain:
//!
//! * [`graph`] — undirected site graphs, directed driver graphs, growth
//!   orderings, and connecting strings between driver states.
//! * [`deposition`] — height profiles, the screening operator, drop drivers
//!   (independent sites, a Markov site process, and a depth-`k` layer model
//!   that can fill holes near column tops).
//! * [`chain`] — explicit state spaces: the core of eventually-reached
//!   profiles, depth-truncated enumeration, transition matrices, and
//!   uniform-minorization certificates with checkable witnesses.
//! * [`solver`] — invariant distributions, exactly via a censored block
//!   solve and statistically via regenerative cycles, plus total-variation
//!   and growth-rate calculations.
//! * [`analysis`] — empirical verification: couplings, mixing-rate decay,
//!   maximum-height growth, concentration tails, and bias checks.
//! * [`cli`] — configuration files, run manifests, and the experiment
//!   commands behind the `depo-lab` binary.
//!
//! Every simulation is driven by a seeded [`rand_chacha::ChaCha8Rng`];
//! replicas use per-replica streams so results are reproducible under any
//! thread count.

pub mod analysis;
pub mod chain;
pub mod cli;
pub mod deposition;
pub mod error;
pub mod graph;
pub mod solver;

pub use analysis::{
    argmax_change_indicator, bias_check, concentration_report, estimate_coupling_matrix,
    layer_tv_horizon, run_product_coupling, simulate_max_height, BiasReport,
    ConcentrationReport, CouplingMatrixEstimate, CouplingRun, PathObservable,
};
pub use cli::{
    cmd_certify, cmd_couple, cmd_regen, cmd_simulate, cmd_solve, cmd_verify, exit_code_for,
    DriverField, ExperimentConfig, Overrides, RunManifest, VerifyReport,
};
pub use chain::{
    assemble_transitions, certificate_for, enumerate_states, sample_step, start_state,
    verify_certificate, ChainState, CommunicationCertificate, StateSpace, TransitionModel,
};
pub use deposition::layer::LayerConfig;
pub use deposition::{DriverSpec, HeightProfile, RelativeProfile};
pub use error::{Error, Result};
pub use graph::{DirectedDriverGraph, Graph, GrowthOrdering};
