//! Discrete-event simulation of a fog data store serving mobile clients.
//!
//! The crate replays client movement (GeoLife GPS traces or synthetic
//! schedules) against a grid of fog nodes and measures how well different
//! replica-placement policies keep each client's data at its closest node.
//! Policies range from a purely reactive baseline to client-side Markov
//! predictors ([`markov`]) combined with restart prediction ([`startup`]).
//!
//! The pipeline is:
//!
//! 1. [`traces`]: parse and sessionize GPS traces into [`traces::ClientTimeline`]s.
//! 2. [`topology`]: build the fog network and answer nearest-node and
//!    transfer-time queries.
//! 3. [`simengine`]: replay timelines, drive a [`policies::Policy`] per client,
//!    and record a [`simengine::ReplicaLedger`].
//! 4. [`metrics`]: availability, excess data and memory from the ledger.
//! 5. [`experiment`]: config-driven sweeps and report files.

pub mod error;
pub mod experiment;
pub mod markov;
pub mod metrics;
pub mod policies;
pub mod simengine;
pub mod startup;
pub mod topology;
pub mod traces;

pub use error::Error;
pub use topology::NodeId;

/// Seconds since the Unix epoch (UTC). The simulation clock has one-second
/// resolution.
pub type Timestamp = i64;

/// Offset of the dataset's local wall clock from UTC (Beijing, UTC+8).
pub const DEFAULT_UTC_OFFSET_S: i64 = 8 * 3600;
