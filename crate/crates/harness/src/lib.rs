//! Customer negotiation agent, wire protocol, role services, transports
//! and the deterministic scenario runner behind the `bandx` CLI.

pub mod envelope;
pub mod qna;
pub mod runner;
pub mod scenario;
pub mod serve;
pub mod service;
pub mod transport;
pub mod world;

pub use envelope::{msg, Envelope, EnvelopeError};
pub use qna::{Handle, HeldCredential, HeldReservation, QnaError, QnaSession};
pub use runner::{run_file, run_scenario, FailureKind, RunError, RunFailure, RunOutcome};
pub use scenario::{Scenario, ScenarioError};
pub use service::{Role, Service};
pub use transport::{Client, InProcess, TcpTransport, Transport, TransportError};
pub use world::{ConfigError, World};
