//! Availability, excess data and memory, computed exactly by interval
//! algebra over the replica ledger.
//!
//! A second of active time is *available* when the client's current node
//! holds a replica. Presence that is not available time is excess; the
//! excess ratio divides it by active time and can exceed 1.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::markov::{MarkovError, MarkovModel, PredictorKind, Target};
use crate::simengine::{ClientLedger, Interval, ReplicaLedger};
use crate::topology::NodeId;
use crate::traces::ClientTimeline;
use crate::Timestamp;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric undefined: no active time")]
    NoActiveTime,
    #[error("no ledger for client {0}")]
    MissingClient(String),
    #[error("series bucket must be positive, got {0}")]
    Bucket(i64),
}

/// Raw per-client sums, seconds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClientMetrics {
    pub client_id: String,
    pub active_s: i64,
    pub available_s: i64,
    pub presence_s: i64,
    pub memory_bytes: usize,
    pub transfers: u64,
}

impl ClientMetrics {
    pub fn excess_s(&self) -> i64 {
        self.presence_s - self.available_s
    }

    pub fn availability(&self) -> Option<f64> {
        (self.active_s > 0).then(|| self.available_s as f64 / self.active_s as f64)
    }

    pub fn excess_ratio(&self) -> Option<f64> {
        (self.active_s > 0).then(|| self.excess_s() as f64 / self.active_s as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub availability: f64,
    pub excess_ratio: f64,
    pub memory_avg: f64,
    pub memory_max: usize,
    pub clients: Vec<ClientMetrics>,
}

/// Active sub-intervals of `timeline` during which the replica is present at
/// the current node, in time order.
pub fn covered_intervals(timeline: &ClientTimeline, ledger: &ClientLedger) -> Vec<Interval> {
    let mut out = Vec::new();
    for visit in timeline.visits() {
        let intervals = ledger.intervals(visit.node);
        let first = intervals.partition_point(|iv| iv.end <= visit.arrival);
        for iv in &intervals[first..] {
            if iv.start >= visit.departure {
                break;
            }
            let clipped = Interval {
                start: iv.start.max(visit.arrival),
                end: iv.end.min(visit.departure),
            };
            if !clipped.is_empty() {
                out.push(clipped);
            }
        }
    }
    out
}

fn active_intervals(timeline: &ClientTimeline) -> Vec<Interval> {
    timeline
        .visits()
        .map(|v| Interval {
            start: v.arrival,
            end: v.departure,
        })
        .filter(|iv| !iv.is_empty())
        .collect()
}

fn total(intervals: &[Interval]) -> i64 {
    intervals.iter().map(Interval::len).sum()
}

fn clipped_total(intervals: &[Interval], from: Timestamp, to: Timestamp) -> i64 {
    intervals.iter().map(|iv| iv.overlap(from, to)).sum()
}

/// Presence time, excluding the cloud.
fn presence(ledger: &ClientLedger, cloud: Option<NodeId>) -> i64 {
    ledger
        .presence
        .iter()
        .filter(|(node, _)| Some(**node) != cloud)
        .flat_map(|(_, ivs)| ivs)
        .map(Interval::len)
        .sum()
}

pub fn client_metrics(timeline: &ClientTimeline, ledger: &ClientLedger, cloud: Option<NodeId>) -> ClientMetrics {
    ClientMetrics {
        client_id: timeline.client_id.clone(),
        active_s: timeline.active_time(),
        available_s: total(&covered_intervals(timeline, ledger)),
        presence_s: presence(ledger, cloud),
        memory_bytes: ledger.memory_bytes,
        transfers: ledger.transfers,
    }
}

fn pair<'a>(
    timelines: &'a [ClientTimeline],
    ledger: &'a ReplicaLedger,
) -> Result<Vec<(&'a ClientTimeline, &'a ClientLedger)>, MetricsError> {
    timelines
        .iter()
        .enumerate()
        .map(|(i, tl)| {
            let client = match ledger.clients.get(i) {
                Some(c) if c.client_id == tl.client_id => c,
                _ => ledger
                    .client(&tl.client_id)
                    .ok_or_else(|| MetricsError::MissingClient(tl.client_id.clone()))?,
            };
            Ok((tl, client))
        })
        .collect()
}

/// Available time over active time, across all clients.
pub fn availability(ledger: &ReplicaLedger, timelines: &[ClientTimeline]) -> Result<f64, MetricsError> {
    let mut available = 0;
    let mut active = 0;
    for (tl, cl) in pair(timelines, ledger)? {
        available += total(&covered_intervals(tl, cl));
        active += tl.active_time();
    }
    ratio(available, active)
}

/// Unjustified presence over active time, across all clients.
pub fn excess_data(ledger: &ReplicaLedger, timelines: &[ClientTimeline], cloud: Option<NodeId>) -> Result<f64, MetricsError> {
    let mut excess = 0;
    let mut active = 0;
    for (tl, cl) in pair(timelines, ledger)? {
        excess += presence(cl, cloud) - total(&covered_intervals(tl, cl));
        active += tl.active_time();
    }
    ratio(excess, active)
}

fn ratio(num: i64, den: i64) -> Result<f64, MetricsError> {
    if den <= 0 {
        return Err(MetricsError::NoActiveTime);
    }
    Ok(num as f64 / den as f64)
}

/// Availability restricted to activity inside `[from, to)`.
pub fn availability_window(
    ledger: &ReplicaLedger,
    timelines: &[ClientTimeline],
    from: Timestamp,
    to: Timestamp,
) -> Result<f64, MetricsError> {
    let mut available = 0;
    let mut active = 0;
    for (tl, cl) in pair(timelines, ledger)? {
        available += clipped_total(&covered_intervals(tl, cl), from, to);
        active += clipped_total(&active_intervals(tl), from, to);
    }
    ratio(available, active)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub t: Timestamp,
    pub active_s: i64,
    pub available_s: i64,
    pub availability: f64,
}

/// Running sum of sorted, disjoint intervals clipped at increasing bounds.
struct Cumulative<'a> {
    intervals: &'a [Interval],
    next: usize,
    done: i64,
}

impl Cumulative<'_> {
    fn upto(&mut self, t: Timestamp) -> i64 {
        while self.next < self.intervals.len() && self.intervals[self.next].end <= t {
            self.done += self.intervals[self.next].len();
            self.next += 1;
        }
        let partial = self
            .intervals
            .get(self.next)
            .map_or(0, |iv| (t - iv.start).clamp(0, iv.len()));
        self.done + partial
    }
}

/// Cumulative availability at each bucket boundary, starting with the
/// bucket holding the first activity.
pub fn availability_series(
    timeline: &ClientTimeline,
    ledger: &ClientLedger,
    bucket_s: i64,
) -> Result<Vec<SeriesPoint>, MetricsError> {
    if bucket_s <= 0 {
        return Err(MetricsError::Bucket(bucket_s));
    }
    let active = active_intervals(timeline);
    let covered = covered_intervals(timeline, ledger);
    let (Some(first), Some(last)) = (active.first(), active.last()) else {
        return Ok(Vec::new());
    };
    let mut act = Cumulative {
        intervals: &active,
        next: 0,
        done: 0,
    };
    let mut cov = Cumulative {
        intervals: &covered,
        next: 0,
        done: 0,
    };
    let mut points = Vec::new();
    let mut t = first.start.div_euclid(bucket_s) * bucket_s;
    while t < last.end {
        t += bucket_s;
        let active_s = act.upto(t);
        let available_s = cov.upto(t);
        points.push(SeriesPoint {
            t,
            active_s,
            available_s,
            availability: available_s as f64 / active_s as f64,
        });
    }
    Ok(points)
}

pub fn write_series_csv<W: Write>(points: &[SeriesPoint], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "active_s", "available_s", "availability"])?;
    for p in points {
        w.write_record([
            p.t.to_string(),
            p.active_s.to_string(),
            p.available_s.to_string(),
            format!("{:.6}", p.availability),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn report(ledger: &ReplicaLedger, timelines: &[ClientTimeline], cloud: Option<NodeId>) -> Result<MetricsReport, MetricsError> {
    let clients: Vec<ClientMetrics> = pair(timelines, ledger)?
        .into_iter()
        .map(|(tl, cl)| client_metrics(tl, cl, cloud))
        .collect();
    let active: i64 = clients.iter().map(|c| c.active_s).sum();
    let available: i64 = clients.iter().map(|c| c.available_s).sum();
    let excess: i64 = clients.iter().map(ClientMetrics::excess_s).sum();
    let memory_max = clients.iter().map(|c| c.memory_bytes).max().unwrap_or(0);
    let memory_avg = if clients.is_empty() {
        0.0
    } else {
        clients.iter().map(|c| c.memory_bytes as f64).sum::<f64>() / clients.len() as f64
    };
    Ok(MetricsReport {
        availability: ratio(available, active)?,
        excess_ratio: ratio(excess, active)?,
        memory_avg,
        memory_max,
        clients,
    })
}

/// Excess ratio of keeping a replica on all `nodes` edge nodes for the whole
/// span of a client's activity, pauses included.
pub fn global_replication_excess(nodes: usize, span_s: i64, active_s: i64) -> Result<f64, MetricsError> {
    ratio(nodes as i64 * span_s - active_s, active_s)
}

/// Replays a timeline through a freshly trained predictor, training after
/// each session, and counts top-1 hits on node transitions of sessions
/// starting at or after `eval_from`. Returns `(hits, predictions)`.
pub fn top1_accuracy(
    timeline: &ClientTimeline,
    kind: &PredictorKind,
    end_of_trip: bool,
    utc_offset_s: i64,
    eval_from: Timestamp,
) -> Result<(usize, usize), MarkovError> {
    let mut model = MarkovModel::new(kind, end_of_trip, utc_offset_s)?;
    let (mut hits, mut total) = (0, 0);
    for session in &timeline.sessions {
        if session.start() >= eval_from {
            let mut history = Vec::new();
            for pair in session.visits.windows(2) {
                history.push(pair[0].node);
                total += 1;
                let top = model.predict(&history, session.start()).and_then(|set| set.top());
                if top.is_some_and(|p| p.target == Target::Node(pair[1].node)) {
                    hits += 1;
                }
            }
        }
        model.train_session(&session.visits, session.start());
    }
    Ok((hits, total))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::traces::{NodeVisit, VisitSession};

    const A: NodeId = NodeId(0);
    const B: NodeId = NodeId(1);

    fn timeline(visits: &[(NodeId, i64, i64)]) -> ClientTimeline {
        let session = VisitSession {
            id: 0,
            visits: visits.iter().map(|&(n, a, d)| NodeVisit::new(n, a, d)).collect(),
        };
        ClientTimeline::from_sessions("c", vec![session]).unwrap()
    }

    fn ledger(presence: &[(NodeId, i64, i64)]) -> ReplicaLedger {
        let mut map: BTreeMap<NodeId, Vec<Interval>> = BTreeMap::new();
        for &(n, start, end) in presence {
            map.entry(n).or_default().push(Interval { start, end });
        }
        ReplicaLedger {
            clients: vec![ClientLedger {
                client_id: "c".into(),
                horizon: 0,
                presence: map,
                transfers: 0,
                memory_bytes: 10,
            }],
        }
    }

    #[test]
    fn half_covered_visit() {
        let tl = timeline(&[(A, 0, 100)]);
        let l = ledger(&[(A, 0, 50)]);
        assert_eq!(availability(&l, std::slice::from_ref(&tl)).unwrap(), 0.5);
        assert_eq!(excess_data(&l, &[tl], None).unwrap(), 0.0);
    }

    #[test]
    fn preload_before_arrival_is_excess() {
        let tl = timeline(&[(A, 0, 1000), (B, 1000, 2000)]);
        let l = ledger(&[(A, 0, 1000), (B, 700, 2000)]);
        assert_eq!(availability(&l, std::slice::from_ref(&tl)).unwrap(), 1.0);
        assert_eq!(excess_data(&l, &[tl], None).unwrap(), 0.15);
    }

    #[test]
    fn cloud_presence_is_not_excess() {
        let tl = timeline(&[(A, 0, 100)]);
        let l = ledger(&[(A, 0, 100), (B, 0, 100)]);
        assert_eq!(excess_data(&l, std::slice::from_ref(&tl), Some(B)).unwrap(), 0.0);
        assert_eq!(excess_data(&l, &[tl], None).unwrap(), 1.0);
    }

    #[test]
    fn zero_active_time_is_an_error() {
        assert_eq!(availability(&ReplicaLedger::default(), &[]), Err(MetricsError::NoActiveTime));
    }

    #[test]
    fn series_is_cumulative_and_starts_at_first_bucket() {
        let tl = timeline(&[(A, 250, 450)]);
        let l = ledger(&[(A, 350, 450)]);
        let s = availability_series(&tl.clone(), &l.clients[0], 100).unwrap();
        let got: Vec<(i64, i64, i64)> = s.iter().map(|p| (p.t, p.active_s, p.available_s)).collect();
        assert_eq!(got, vec![(300, 50, 0), (400, 150, 50), (500, 200, 100)]);
        assert!(availability_series(&tl, &l.clients[0], 0).is_err());
    }

    #[test]
    fn global_replication_closed_form() {
        // one node active [0,100), pause, then [200,300) on four nodes
        let tl = ClientTimeline::from_sessions(
            "c",
            vec![
                VisitSession {
                    id: 0,
                    visits: vec![NodeVisit::new(A, 0, 100)],
                },
                VisitSession {
                    id: 1,
                    visits: vec![NodeVisit::new(B, 200, 300)],
                },
            ],
        )
        .unwrap();
        let all: Vec<(NodeId, i64, i64)> = (0..4).map(|n| (NodeId(n), 0, 300)).collect();
        let l = ledger(&all);
        let excess = excess_data(&l, &[tl], None).unwrap();
        assert_eq!(excess, global_replication_excess(4, 300, 200).unwrap());
        assert_eq!(excess, 5.0);
    }
}
