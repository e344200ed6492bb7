use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ClientTimeline, NodeVisit, Session, SessionizedTrace, TraceError, VisitSession};
use crate::topology::{NodeId, Topology};
use crate::Timestamp;

/// Assigns every point of `session` to its nearest edge node and collapses
/// runs of equal assignments into visits. A visit lasts until the first
/// point assigned to the next node; the last visit ends with the session.
pub fn map_to_node_visits(session: &Session, topo: &Topology) -> Vec<NodeVisit> {
    let mut visits: Vec<NodeVisit> = Vec::new();
    for p in &session.points {
        let node = topo.nearest_node(p);
        match visits.last_mut() {
            Some(last) if last.node == node => {}
            Some(last) => {
                last.departure = p.t;
                visits.push(NodeVisit::new(node, p.t, p.t));
            }
            None => visits.push(NodeVisit::new(node, p.t, p.t)),
        }
    }
    if let Some(last) = visits.last_mut() {
        last.departure = session.end;
    }
    visits
}

/// Maps a sessionized trace onto `topo`; pauses are anchored at the last
/// node of the preceding session.
pub fn build_timeline(trace: &SessionizedTrace, topo: &Topology) -> Result<ClientTimeline, TraceError> {
    let sessions = trace
        .sessions
        .iter()
        .filter(|s| !s.points.is_empty())
        .enumerate()
        .map(|(i, s)| VisitSession {
            id: i as u32,
            visits: map_to_node_visits(s, topo),
        })
        .collect();
    ClientTimeline::from_sessions(trace.client_id.clone(), sessions)
}

#[derive(Debug, Serialize, Deserialize)]
struct VisitRow {
    client_id: String,
    session_id: u32,
    node_id: u32,
    arrival_epoch_s: Timestamp,
    departure_epoch_s: Timestamp,
}

/// Writes timelines as `client_id,session_id,node_id,arrival_epoch_s,departure_epoch_s`.
pub fn write_visits_csv<W: Write>(timelines: &[ClientTimeline], out: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    for timeline in timelines {
        for session in &timeline.sessions {
            for visit in &session.visits {
                writer.serialize(VisitRow {
                    client_id: timeline.client_id.clone(),
                    session_id: session.id,
                    node_id: visit.node.0,
                    arrival_epoch_s: visit.arrival,
                    departure_epoch_s: visit.departure,
                })?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads the cached visit format back into timelines, ordered by client id.
pub fn read_visits_csv<R: Read>(input: R) -> Result<Vec<ClientTimeline>, TraceError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut clients: BTreeMap<String, BTreeMap<u32, Vec<NodeVisit>>> = BTreeMap::new();
    for (i, row) in reader.deserialize::<VisitRow>().enumerate() {
        let row = row.map_err(|e| TraceError::Record {
            line: i + 2,
            message: e.to_string(),
        })?;
        clients
            .entry(row.client_id)
            .or_default()
            .entry(row.session_id)
            .or_default()
            .push(NodeVisit::new(NodeId(row.node_id), row.arrival_epoch_s, row.departure_epoch_s));
    }
    clients
        .into_iter()
        .map(|(client, sessions)| {
            let mut sessions: Vec<VisitSession> = sessions
                .into_iter()
                .map(|(id, mut visits)| {
                    visits.sort_by_key(|v| (v.arrival, v.departure));
                    VisitSession { id, visits }
                })
                .collect();
            sessions.sort_by_key(|s| s.start());
            ClientTimeline::from_sessions(client, sessions)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_grid, BBox};
    use crate::traces::{sessionize, GeoPoint, OverlapPolicy};

    fn two_node_topology() -> Topology {
        // nodes at lon 0.25 (id 0) and 0.75 (id 1) on the equator
        build_grid(1, 2, BBox::new(-0.5, 0.5, 0.0, 1.0).unwrap()).unwrap()
    }

    fn session(points: &[(f64, i64)]) -> Session {
        Session::from_points("u", points.iter().map(|&(lon, t)| GeoPoint::new(0.0, lon, t)).collect())
    }

    #[test]
    fn constant_assignment_is_one_visit() {
        let topo = two_node_topology();
        let visits = map_to_node_visits(&session(&[(0.1, 0), (0.3, 50), (0.2, 90)]), &topo);
        assert_eq!(visits, vec![NodeVisit::new(NodeId(0), 0, 90)]);
    }

    #[test]
    fn switch_happens_at_first_point_of_new_node() {
        let topo = two_node_topology();
        let points = [(0.1, 0), (0.4, 30), (0.6, 60), (0.9, 100)];
        // brute-force nearest by |lon - center| on the equator
        let brute: Vec<u32> = points
            .iter()
            .map(|&(lon, _)| if (lon - 0.25f64).abs() <= (lon - 0.75f64).abs() { 0 } else { 1 })
            .collect();
        assert_eq!(brute, vec![0, 0, 1, 1]);
        let visits = map_to_node_visits(&session(&points), &topo);
        assert_eq!(
            visits,
            vec![NodeVisit::new(NodeId(0), 0, 60), NodeVisit::new(NodeId(1), 60, 100)]
        );
    }

    #[test]
    fn equidistant_point_goes_to_lower_id() {
        let topo = two_node_topology();
        let visits = map_to_node_visits(&session(&[(0.5, 0), (0.5, 10)]), &topo);
        assert_eq!(visits[0].node, NodeId(0));
    }

    #[test]
    fn mapping_is_idempotent() {
        let topo = build_grid(10, 10, BBox::BEIJING).unwrap();
        let s = Session::from_points(
            "u",
            (0..50)
                .map(|i| GeoPoint::new(39.6 + i as f64 * 0.013, 116.0 + i as f64 * 0.011, i * 10))
                .collect(),
        );
        assert_eq!(map_to_node_visits(&s, &topo), map_to_node_visits(&s, &topo));
    }

    #[test]
    fn timeline_tiles_observed_lifetime() {
        let topo = two_node_topology();
        let files = vec![
            vec![GeoPoint::new(0.0, 0.1, 0), GeoPoint::new(0.0, 0.9, 100)],
            vec![GeoPoint::new(0.0, 0.9, 700), GeoPoint::new(0.0, 0.1, 800)],
        ];
        let trace = sessionize("u", files, 300, OverlapPolicy::Error).unwrap();
        let timeline = build_timeline(&trace, &topo).unwrap();
        assert_eq!(timeline.sessions.len(), 2);
        assert_eq!(timeline.pauses.len(), 1);
        let pause = timeline.pauses[0];
        assert_eq!((pause.node, pause.start, pause.end), (NodeId(1), 100, 700));
        let covered: i64 = timeline.active_time() + pause.duration();
        assert_eq!(covered, timeline.last_t().unwrap() - timeline.first_t().unwrap());
    }

    #[test]
    fn csv_cache_round_trips() {
        let sessions = vec![
            VisitSession { id: 0, visits: vec![NodeVisit::new(NodeId(3), 0, 10), NodeVisit::new(NodeId(4), 10, 25)] },
            VisitSession { id: 1, visits: vec![NodeVisit::new(NodeId(4), 100, 130)] },
        ];
        let timeline = ClientTimeline::from_sessions("alice", sessions).unwrap();
        let mut buf = Vec::new();
        write_visits_csv(std::slice::from_ref(&timeline), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("client_id,session_id,node_id,arrival_epoch_s,departure_epoch_s\n"));
        assert!(text.contains("alice,0,3,0,10\n"));
        assert_eq!(read_visits_csv(buf.as_slice()).unwrap(), vec![timeline]);
    }
}
