//! Discrete-event simulation of replica placement.
//!
//! Clients never share replicas, so each client's timeline is simulated by
//! its own event loop; the loops run in parallel when requested and their
//! results are collected in input order, which keeps runs deterministic.
//!
//! Events at the same second are processed in the order transfer
//! completion, arrival, session start, session end, retention expiry. A
//! replica counts as present from the completion of its transfer until it
//! is deleted or the client's horizon (its last observed timestamp) is
//! reached.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::markov::MarkovError;
use crate::policies::{PlacementAction, Policy, PolicyConfig};
use crate::topology::{NetworkModel, NodeId, Topology, TopologyError};
use crate::traces::{ClientTimeline, TraceError};
use crate::{Timestamp, DEFAULT_UTC_OFFSET_S};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("client {client}: node {node} is not an edge node of the topology")]
    UnknownNode { client: String, node: NodeId },
    #[error("client {client}: event at {t} precedes the current time {now}")]
    TimeRegression { client: String, t: Timestamp, now: Timestamp },
    #[error(transparent)]
    Timeline(#[from] TraceError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Policy(#[from] MarkovError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    TransferComplete,
    Arrival,
    SessionStart,
    SessionEnd,
    RetentionExpire,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::TransferComplete => "transfer_complete",
            EventKind::Arrival => "arrival",
            EventKind::SessionStart => "session_start",
            EventKind::SessionEnd => "session_end",
            EventKind::RetentionExpire => "retention_expire",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open presence interval `[start, end)` in epoch seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Interval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Interval {
    pub fn len(&self) -> i64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlap(&self, start: Timestamp, end: Timestamp) -> i64 {
        (self.end.min(end) - self.start.max(start)).max(0)
    }
}

/// A replication in flight: scheduled to start at `start`, present from
/// `complete`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransferJob {
    pub dst: NodeId,
    pub start: Timestamp,
    pub complete: Timestamp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub t: Timestamp,
    pub client: String,
    pub kind: EventKind,
    pub node: NodeId,
}

/// Replica presence of one client.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientLedger {
    pub client_id: String,
    pub horizon: Timestamp,
    /// Closed presence intervals per node, in time order.
    pub presence: BTreeMap<NodeId, Vec<Interval>>,
    /// Completed transfers.
    pub transfers: u64,
    /// Learned policy state at the end of the run, bytes.
    pub memory_bytes: usize,
}

impl ClientLedger {
    pub fn intervals(&self, node: NodeId) -> &[Interval] {
        self.presence.get(&node).map_or(&[], Vec::as_slice)
    }

    pub fn is_present(&self, node: NodeId, t: Timestamp) -> bool {
        self.intervals(node).iter().any(|iv| iv.start <= t && t < iv.end)
    }

    pub fn total_presence(&self) -> i64 {
        self.presence.values().flatten().map(Interval::len).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplicaLedger {
    pub clients: Vec<ClientLedger>,
}

impl ReplicaLedger {
    pub fn client(&self, id: &str) -> Option<&ClientLedger> {
        self.clients.iter().find(|c| c.client_id == id)
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub parallel: bool,
    pub record_log: bool,
    pub utc_offset_s: i64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            parallel: true,
            record_log: false,
            utc_offset_s: DEFAULT_UTC_OFFSET_S,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SimOutput {
    pub ledger: ReplicaLedger,
    pub log: Vec<LogEntry>,
}

/// Whole-second transfer delays to every node, indexed by id; zero for the
/// cloud.
pub fn transfer_delays(topology: &Topology, network: &NetworkModel) -> Result<Vec<i64>, EngineError> {
    network.validate()?;
    topology
        .nodes()
        .iter()
        .map(|n| {
            if topology.is_edge(n.id) {
                Ok(topology.replication_delay(n.id, network)?.ceil() as i64)
            } else {
                Ok(0)
            }
        })
        .collect()
}

/// Simulates every client under `policy`.
pub fn run(
    timelines: &[ClientTimeline],
    topology: &Topology,
    network: &NetworkModel,
    policy: &PolicyConfig,
    options: &RunOptions,
) -> Result<SimOutput, EngineError> {
    policy.validate()?;
    let delays = transfer_delays(topology, network)?;
    let estimates: Arc<Vec<f64>> = Arc::new(delays.iter().map(|&d| d as f64).collect());
    let sim = |tl: &ClientTimeline| simulate_client(tl, topology, &delays, estimates.clone(), policy, options);
    let results: Vec<(ClientLedger, Vec<LogEntry>)> = if options.parallel {
        timelines.par_iter().map(sim).collect::<Result<_, _>>()?
    } else {
        timelines.iter().map(sim).collect::<Result<_, _>>()?
    };
    let mut out = SimOutput::default();
    for (ledger, log) in results {
        out.ledger.clients.push(ledger);
        out.log.extend(log);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    t: Timestamp,
    kind: EventKind,
    seq: u64,
    node: NodeId,
}

struct ClientSim<'a> {
    client: &'a str,
    delays: &'a [i64],
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    present: BTreeMap<NodeId, Timestamp>,
    jobs: BTreeMap<NodeId, (TransferJob, u64)>,
    retention: Option<(NodeId, Timestamp)>,
    closed: BTreeMap<NodeId, Vec<Interval>>,
    transfers: u64,
}

impl<'a> ClientSim<'a> {
    fn push(&mut self, t: Timestamp, kind: EventKind, node: NodeId) -> u64 {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            t,
            kind,
            seq: self.seq,
            node,
        }));
        self.seq
    }

    fn close(&mut self, node: NodeId, at: Timestamp) {
        if let Some(since) = self.present.remove(&node) {
            if at > since {
                self.closed.entry(node).or_default().push(Interval { start: since, end: at });
            }
        }
    }

    fn apply(&mut self, action: PlacementAction, now: Timestamp) {
        match action {
            PlacementAction::Replicate { node, at } => {
                let at = at.max(now);
                if self.present.contains_key(&node) {
                    return;
                }
                let complete = at + self.delays[node.index()];
                if matches!(self.jobs.get(&node), Some((job, _)) if job.complete <= complete) {
                    return;
                }
                let seq = self.push(complete, EventKind::TransferComplete, node);
                self.jobs.insert(
                    node,
                    (
                        TransferJob {
                            dst: node,
                            start: at,
                            complete,
                        },
                        seq,
                    ),
                );
            }
            PlacementAction::Delete { node, at } => {
                self.jobs.remove(&node);
                self.close(node, at.max(now));
                if self.retention.is_some_and(|(n, _)| n == node) {
                    self.retention = None;
                }
            }
            PlacementAction::Retain { node, until } => {
                self.retention = Some((node, until));
                self.push(until, EventKind::RetentionExpire, node);
            }
        }
    }
}

fn simulate_client(
    timeline: &ClientTimeline,
    topology: &Topology,
    delays: &[i64],
    estimates: Arc<Vec<f64>>,
    config: &PolicyConfig,
    options: &RunOptions,
) -> Result<(ClientLedger, Vec<LogEntry>), EngineError> {
    timeline.validate()?;
    let client = timeline.client_id.as_str();
    let mut sim = ClientSim {
        client,
        delays,
        queue: BinaryHeap::new(),
        seq: 0,
        present: BTreeMap::new(),
        jobs: BTreeMap::new(),
        retention: None,
        closed: BTreeMap::new(),
        transfers: 0,
    };
    for session in &timeline.sessions {
        for (i, visit) in session.visits.iter().enumerate() {
            if !topology.is_edge(visit.node) {
                return Err(EngineError::UnknownNode {
                    client: client.to_string(),
                    node: visit.node,
                });
            }
            let kind = if i == 0 {
                EventKind::SessionStart
            } else {
                EventKind::Arrival
            };
            sim.push(visit.arrival, kind, visit.node);
        }
        sim.push(session.end(), EventKind::SessionEnd, session.last_node());
    }

    let mut policy = Policy::new(config.clone(), options.utc_offset_s, estimates)?;
    let horizon = timeline.last_t().unwrap_or(0);
    let mut log = Vec::new();
    let mut now = Timestamp::MIN;
    while let Some(Reverse(event)) = sim.queue.pop() {
        if event.t > horizon {
            break;
        }
        if event.t < now {
            return Err(EngineError::TimeRegression {
                client: sim.client.to_string(),
                t: event.t,
                now,
            });
        }
        now = event.t;
        let actions = match event.kind {
            EventKind::TransferComplete => {
                match sim.jobs.get(&event.node) {
                    Some((_, seq)) if *seq == event.seq => {
                        sim.jobs.remove(&event.node);
                        sim.present.insert(event.node, now);
                        sim.transfers += 1;
                    }
                    _ => continue,
                }
                Vec::new()
            }
            EventKind::RetentionExpire => {
                if sim.retention != Some((event.node, event.t)) {
                    continue;
                }
                vec![PlacementAction::Delete { node: event.node, at: now }]
            }
            EventKind::SessionStart => {
                sim.retention = None;
                policy.on_session_start(event.node, now)
            }
            EventKind::Arrival => policy.on_arrival(event.node, now),
            EventKind::SessionEnd => policy.on_session_end(event.node, now),
        };
        if options.record_log {
            log.push(LogEntry {
                t: now,
                client: client.to_string(),
                kind: event.kind,
                node: event.node,
            });
        }
        for action in actions {
            sim.apply(action, now);
        }
    }
    let open: Vec<NodeId> = sim.present.keys().copied().collect();
    for node in open {
        sim.close(node, horizon);
    }
    let ledger = ClientLedger {
        client_id: client.to_string(),
        horizon,
        presence: sim.closed,
        transfers: sim.transfers,
        memory_bytes: policy.memory_bytes(),
    };
    Ok((ledger, log))
}

/// Writes the event log as CSV.
pub fn write_event_log<W: Write>(log: &[LogEntry], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "client", "kind", "node"])?;
    for e in log {
        w.write_record([e.t.to_string(), e.client.clone(), e.kind.to_string(), e.node.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Learned-state bytes per client at the end of a run.
pub fn snapshot_memory(ledger: &ReplicaLedger) -> Vec<(String, usize)> {
    ledger
        .clients
        .iter()
        .map(|c| (c.client_id.clone(), c.memory_bytes))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::PredictorKind;
    use crate::policies::StartupPolicy;
    use crate::startup::ShortPauseConfig;
    use crate::topology::{build_grid, BBox};
    use crate::traces::{NodeVisit, VisitSession};

    fn topo() -> Topology {
        build_grid(2, 2, BBox::BEIJING).unwrap()
    }

    fn timeline(sessions: &[&[(u32, i64, i64)]]) -> ClientTimeline {
        let sessions = sessions
            .iter()
            .enumerate()
            .map(|(i, visits)| VisitSession {
                id: i as u32,
                visits: visits.iter().map(|&(n, a, d)| NodeVisit::new(NodeId(n), a, d)).collect(),
            })
            .collect();
        ClientTimeline::from_sessions("c", sessions).unwrap()
    }

    fn sequential() -> RunOptions {
        RunOptions {
            parallel: false,
            record_log: true,
            utc_offset_s: 0,
        }
    }

    fn fixed(delay_s: f64) -> NetworkModel {
        NetworkModel::FixedDelay { delay_s }
    }

    #[test]
    fn baseline_presence_starts_after_transfer() {
        let tl = timeline(&[&[(0, 0, 1000), (1, 1000, 1200)]]);
        let out = run(&[tl], &topo(), &fixed(300.0), &PolicyConfig::baseline(), &sequential()).unwrap();
        let c = &out.ledger.clients[0];
        assert_eq!(c.intervals(NodeId(0)), &[Interval { start: 300, end: 1000 }]);
        // the visit at node 1 ends before its transfer completes
        assert!(c.intervals(NodeId(1)).is_empty());
        assert_eq!(c.transfers, 1);
        let kinds: Vec<EventKind> = out.log.iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                EventKind::SessionStart,
                EventKind::TransferComplete,
                EventKind::Arrival,
                EventKind::SessionEnd
            ]
        );
    }

    #[test]
    fn retention_keeps_replica_across_short_pause() {
        let tl = timeline(&[&[(0, 0, 1000)], &[(0, 1300, 2000)]]);
        let mut config = PolicyConfig::baseline();
        config.startup = StartupPolicy::ShortPause(ShortPauseConfig::fixed(600));
        let out = run(&[tl], &topo(), &fixed(300.0), &config, &sequential()).unwrap();
        let c = &out.ledger.clients[0];
        assert_eq!(c.intervals(NodeId(0)), &[Interval { start: 300, end: 2000 }]);
        assert_eq!(c.transfers, 1);
    }

    #[test]
    fn retention_expires() {
        let tl = timeline(&[&[(0, 0, 1000)], &[(1, 5000, 6000)]]);
        let mut config = PolicyConfig::baseline();
        config.startup = StartupPolicy::ShortPause(ShortPauseConfig::fixed(600));
        let out = run(&[tl], &topo(), &fixed(300.0), &config, &sequential()).unwrap();
        let c = &out.ledger.clients[0];
        assert_eq!(c.intervals(NodeId(0)), &[Interval { start: 300, end: 1600 }]);
        assert!(out.log.iter().any(|e| e.kind == EventKind::RetentionExpire && e.t == 1600));
    }

    #[test]
    fn predictive_preload_is_available_on_arrival() {
        let day = 86_400;
        let trip = |d: i64| vec![(0u32, d * day, d * day + 1000), (1, d * day + 1000, d * day + 2000)];
        let trips: Vec<Vec<(u32, i64, i64)>> = (0..3).map(trip).collect();
        let refs: Vec<&[(u32, i64, i64)]> = trips.iter().map(Vec::as_slice).collect();
        let tl = timeline(&refs);
        let mut config = PolicyConfig::predictive("momm", PredictorKind::Momm { k: 1 });
        config.preload_buffer_s = 100.0;
        let out = run(&[tl], &topo(), &fixed(300.0), &config, &sequential()).unwrap();
        let c = &out.ledger.clients[0];
        // stay 1000 - transfer 300 - buffer 100 -> start at +600, present at +900
        assert!(c.intervals(NodeId(1)).contains(&Interval {
            start: day + 900,
            end: day + 2000
        }));
    }

    #[test]
    fn unknown_nodes_are_rejected() {
        let tl = timeline(&[&[(4, 0, 10)]]);
        let err = run(&[tl], &topo(), &fixed(1.0), &PolicyConfig::baseline(), &sequential()).unwrap_err();
        assert!(matches!(err, EngineError::UnknownNode { .. }));
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let tls: Vec<ClientTimeline> = (0..8)
            .map(|i| {
                let mut tl = timeline(&[&[(i % 4, 0, 500), ((i + 1) % 4, 500, 900)], &[(i % 4, 1000, 1800)]]);
                tl.client_id = format!("c{i}");
                tl
            })
            .collect();
        let config = PolicyConfig::predictive("vomm", PredictorKind::vomm(2));
        let a = run(&tls, &topo(), &fixed(60.0), &config, &sequential()).unwrap();
        let b = run(&tls, &topo(), &fixed(60.0), &config, &RunOptions {
            parallel: true,
            ..sequential()
        })
        .unwrap();
        assert_eq!(a.ledger, b.ledger);
        assert_eq!(a.log, b.log);
        let mut buf = Vec::new();
        write_event_log(&a.log, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,client,kind,node\n0,c0,session_start,0\n"));
    }
}
