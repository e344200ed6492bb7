//! Random scenario generators and a per-second brute-force oracle shared by
//! the integration tests.
#![allow(dead_code)]

use fogsim::markov::{PredictorKind, TopN};
use fogsim::policies::{PolicyConfig, StartupPolicy};
use fogsim::simengine::ClientLedger;
use fogsim::startup::{RetentionMode, ShortPauseConfig};
use fogsim::traces::{ClientTimeline, NodeVisit, VisitSession};
use fogsim::NodeId;
use rand::Rng;

/// A timeline over nodes `0..nodes` starting at `t0` whose sessions and
/// pauses fit into roughly `max_span` seconds.
pub fn random_timeline<R: Rng>(rng: &mut R, client: &str, nodes: u32, t0: i64, max_span: i64) -> ClientTimeline {
    let end_limit = t0 + max_span;
    let mut sessions = Vec::new();
    let mut t = t0;
    let session_count = rng.gen_range(1..=4);
    for id in 0..session_count {
        let mut visits = Vec::new();
        let mut prev: Option<u32> = None;
        for _ in 0..rng.gen_range(1..=5) {
            if nodes == 1 && prev.is_some() {
                break;
            }
            let node = loop {
                let n = rng.gen_range(0..nodes);
                if Some(n) != prev {
                    break n;
                }
            };
            let stay = rng.gen_range(1..=900);
            visits.push(NodeVisit::new(NodeId(node), t, t + stay));
            t += stay;
            prev = Some(node);
            if t >= end_limit {
                break;
            }
        }
        sessions.push(VisitSession { id, visits });
        t += rng.gen_range(1..=1500);
        if t >= end_limit {
            break;
        }
    }
    ClientTimeline::from_sessions(client, sessions).expect("generated timeline is valid")
}

/// One of a fixed menu of policies, with random parameters.
pub fn random_policy<R: Rng>(rng: &mut R) -> PolicyConfig {
    let mut policy = match rng.gen_range(0..4) {
        0 => PolicyConfig::baseline(),
        1 => PolicyConfig::predictive("momm", PredictorKind::Momm { k: rng.gen_range(1..=2) }),
        2 => PolicyConfig::predictive("vomm", PredictorKind::vomm(rng.gen_range(1..=3))),
        _ => PolicyConfig::predictive("fomm", PredictorKind::fomm(2)),
    };
    policy.eot = rng.gen_bool(0.5);
    policy.topn = if rng.gen_bool(0.5) {
        TopN::Fixed(rng.gen_range(1..=2))
    } else {
        TopN::Dynamic(rng.gen_range(0.3..=1.0))
    };
    policy.preload_buffer_s = [0.0, 30.0, 300.0, 1e9][rng.gen_range(0..4)];
    policy.startup = match rng.gen_range(0..4) {
        0 => StartupPolicy::None,
        1 => StartupPolicy::ShortPause(ShortPauseConfig::fixed(rng.gen_range(0..=1200))),
        2 => StartupPolicy::ShortPause(ShortPauseConfig::learned(RetentionMode::NodeSpecific, Some(900))),
        _ => StartupPolicy::Plmm { threshold_s: 1500.0 },
    };
    policy
}

/// Per-second metric sums: `(active, available, presence)`.
pub fn brute_force(timeline: &ClientTimeline, ledger: &ClientLedger) -> (i64, i64, i64) {
    let (mut active, mut available) = (0, 0);
    for v in timeline.visits() {
        for t in v.arrival..v.departure {
            active += 1;
            if ledger.is_present(v.node, t) {
                available += 1;
            }
        }
    }
    let first = ledger
        .presence
        .values()
        .flatten()
        .map(|iv| iv.start)
        .min()
        .unwrap_or(0);
    let mut presence = 0;
    for &node in ledger.presence.keys() {
        for t in first..ledger.horizon {
            if ledger.is_present(node, t) {
                presence += 1;
            }
        }
    }
    (active, available, presence)
}

/// Per-second cumulative `(active, available)` before `t`.
pub fn brute_force_until(timeline: &ClientTimeline, ledger: &ClientLedger, until: i64) -> (i64, i64) {
    let (mut active, mut available) = (0, 0);
    for v in timeline.visits() {
        for t in v.arrival..v.departure.min(until) {
            active += 1;
            if ledger.is_present(v.node, t) {
                available += 1;
            }
        }
    }
    (active, available)
}
