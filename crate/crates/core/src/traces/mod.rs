//! Client movement traces: GPS ingestion, sessionization and node-visit
//! timelines.

mod geolife;
mod plt;
mod sessionize;
pub mod synth;
mod visits;

use thiserror::Error;

use crate::topology::NodeId;
use crate::Timestamp;

pub use geolife::{load_geolife, GeoLifeUser};
pub use plt::{parse_plt, write_plt};
pub use sessionize::{sessionize, OverlapPolicy, SessionizedTrace, DEFAULT_GAP_THRESHOLD_S};
pub use visits::{build_timeline, map_to_node_visits, read_visits_csv, write_visits_csv};

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("trace contains no data rows")]
    EmptyTrace,
    #[error("client {client}: overlapping trajectories {pairs:?}")]
    Overlap {
        client: String,
        /// `(start, end)` windows of each offending pair of sessions.
        pairs: Vec<((Timestamp, Timestamp), (Timestamp, Timestamp))>,
    },
    #[error("invalid synthetic schedule: {0}")]
    Spec(String),
    #[error("invalid timeline for client {client}: {message}")]
    Timeline { client: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    pub t: Timestamp,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, t: Timestamp) -> Self {
        GeoPoint { lat, lon, t }
    }
}

/// One period of application activity, as raw GPS points.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub client_id: String,
    pub points: Vec<GeoPoint>,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Session {
    /// Builds a session from time-ordered, non-empty points.
    pub fn from_points(client_id: &str, points: Vec<GeoPoint>) -> Self {
        let start = points.first().map(|p| p.t).unwrap_or_default();
        let end = points.last().map(|p| p.t).unwrap_or_default();
        Session {
            client_id: client_id.to_string(),
            points,
            start,
            end,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeVisit {
    pub node: NodeId,
    pub arrival: Timestamp,
    pub departure: Timestamp,
}

impl NodeVisit {
    pub fn new(node: NodeId, arrival: Timestamp, departure: Timestamp) -> Self {
        NodeVisit {
            node,
            arrival,
            departure,
        }
    }

    pub fn duration(&self) -> i64 {
        self.departure - self.arrival
    }
}

/// A session mapped onto the fog nodes the client connected to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisitSession {
    pub id: u32,
    pub visits: Vec<NodeVisit>,
}

impl VisitSession {
    pub fn start(&self) -> Timestamp {
        self.visits[0].arrival
    }

    pub fn end(&self) -> Timestamp {
        self.visits[self.visits.len() - 1].departure
    }

    pub fn first_node(&self) -> NodeId {
        self.visits[0].node
    }

    pub fn last_node(&self) -> NodeId {
        self.visits[self.visits.len() - 1].node
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.visits.iter().map(|v| v.node)
    }
}

/// Time between a shutdown at `node` and the next startup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pause {
    pub node: NodeId,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Pause {
    pub fn duration(&self) -> i64 {
        self.end - self.start
    }
}

/// Alternating sessions and pauses of one client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientTimeline {
    pub client_id: String,
    pub sessions: Vec<VisitSession>,
    pub pauses: Vec<Pause>,
}

impl ClientTimeline {
    /// Builds a timeline from sessions, deriving the pauses between them.
    pub fn from_sessions(client_id: impl Into<String>, sessions: Vec<VisitSession>) -> Result<Self, TraceError> {
        let pauses = sessions
            .windows(2)
            .map(|pair| Pause {
                node: pair[0].last_node(),
                start: pair[0].end(),
                end: pair[1].start(),
            })
            .collect();
        let timeline = ClientTimeline {
            client_id: client_id.into(),
            sessions,
            pauses,
        };
        timeline.validate()?;
        Ok(timeline)
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn first_t(&self) -> Option<Timestamp> {
        self.sessions.first().map(VisitSession::start)
    }

    pub fn last_t(&self) -> Option<Timestamp> {
        self.sessions.last().map(VisitSession::end)
    }

    pub fn active_time(&self) -> i64 {
        self.sessions.iter().map(|s| s.end() - s.start()).sum()
    }

    pub fn visits(&self) -> impl Iterator<Item = &NodeVisit> + '_ {
        self.sessions.iter().flat_map(|s| s.visits.iter())
    }

    /// Checks visit contiguity and that sessions and pauses tile the
    /// observed lifetime.
    pub fn validate(&self) -> Result<(), TraceError> {
        let fail = |message: String| TraceError::Timeline {
            client: self.client_id.clone(),
            message,
        };
        for session in &self.sessions {
            if session.visits.is_empty() {
                return Err(fail(format!("session {} has no visits", session.id)));
            }
            for visit in &session.visits {
                if visit.departure < visit.arrival {
                    return Err(fail(format!("session {}: visit departs before it arrives", session.id)));
                }
            }
            for pair in session.visits.windows(2) {
                if pair[0].departure != pair[1].arrival {
                    return Err(fail(format!("session {}: visits are not contiguous", session.id)));
                }
                if pair[0].node == pair[1].node {
                    return Err(fail(format!(
                        "session {}: consecutive visits at node {}",
                        session.id, pair[0].node
                    )));
                }
            }
        }
        if self.pauses.len() != self.sessions.len().saturating_sub(1) {
            return Err(fail("pauses do not alternate with sessions".into()));
        }
        for (i, pause) in self.pauses.iter().enumerate() {
            let (before, after) = (&self.sessions[i], &self.sessions[i + 1]);
            if pause.start != before.end() || pause.end != after.start() {
                return Err(fail(format!("pause {i} does not tile its neighbouring sessions")));
            }
            if pause.end <= pause.start {
                return Err(fail(format!(
                    "sessions {} and {} overlap or touch",
                    before.id, after.id
                )));
            }
            if pause.node != before.last_node() {
                return Err(fail(format!("pause {i} is not anchored at the last node")));
            }
        }
        Ok(())
    }
}
