//! Deterministic synthetic timelines from weekly schedules.
//!
//! A schedule lists clients, each with repeating weekly patterns. A pattern
//! fires on a set of weekdays at a local clock time and walks a node path
//! with per-node stay durations:
//!
//! ```toml
//! start_date = "2024-01-01"
//! weeks = 2
//!
//! [[client]]
//! id = "commuter"
//!
//! [[client.pattern]]
//! days = "mon-fri"
//! start = "08:00"
//! path = [{ node = 0, stay_s = 600 }, { node = 1, stay_s = 600 }, { node = 2 }]
//! pause_after_s = 28800
//! ```
//!
//! With a noise seed, pattern start times are jittered by up to `jitter_s`.
//! Patterns may instead list weighted `routes` and a `stay_jitter_s`; those
//! draws come from the same seeded generator (seed 0 when none is given).

use std::collections::BTreeSet;

use chrono::{Datelike, Duration, NaiveDate, NaiveTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{ClientTimeline, NodeVisit, TraceError, VisitSession};
use crate::topology::NodeId;
use crate::{Timestamp, DEFAULT_UTC_OFFSET_S};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Local date of the first simulated day.
    pub start_date: NaiveDate,
    pub weeks: u32,
    #[serde(default = "default_offset")]
    pub utc_offset_s: i64,
    /// Maximum absolute start-time jitter, applied only with a noise seed.
    #[serde(default)]
    pub jitter_s: i64,
    #[serde(default, rename = "client")]
    pub clients: Vec<SynthClient>,
}

fn default_offset() -> i64 {
    DEFAULT_UTC_OFFSET_S
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthClient {
    pub id: String,
    /// Number of independent copies, named `<id>-<i>` when above one.
    #[serde(default = "one")]
    pub replicas: u32,
    #[serde(default, rename = "pattern")]
    pub patterns: Vec<Pattern>,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pattern {
    pub days: String,
    pub start: String,
    #[serde(default)]
    pub path: Vec<Stop>,
    #[serde(default)]
    pub routes: Vec<Route>,
    #[serde(default)]
    pub stay_jitter_s: i64,
    /// Minimum gap required before the client's next session.
    #[serde(default)]
    pub pause_after_s: i64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stop {
    pub node: u32,
    #[serde(default)]
    pub stay_s: i64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub weight: f64,
    pub path: Vec<Stop>,
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self, TraceError> {
        toml::from_str(text).map_err(|e| TraceError::Spec(e.to_string()))
    }
}

const WEEKDAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];

/// Parses day sets such as `mon-fri`, `sat,sun`, `daily`, `weekdays`,
/// `weekend`. Returns Monday-based weekday indices.
pub fn parse_days(days: &str) -> Result<BTreeSet<u32>, TraceError> {
    let index = |name: &str| {
        WEEKDAYS
            .iter()
            .position(|d| name.eq_ignore_ascii_case(d))
            .map(|i| i as u32)
            .ok_or_else(|| TraceError::Spec(format!("unknown weekday `{name}`")))
    };
    let mut set = BTreeSet::new();
    for token in days.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token.to_ascii_lowercase().as_str() {
            "daily" => set.extend(0..7),
            "weekdays" => set.extend(0..5),
            "weekend" => set.extend(5..7),
            _ => match token.split_once('-') {
                Some((a, b)) => {
                    let (a, b) = (index(a.trim())?, index(b.trim())?);
                    if a > b {
                        return Err(TraceError::Spec(format!("day range `{token}` runs backwards")));
                    }
                    set.extend(a..=b);
                }
                None => {
                    set.insert(index(token)?);
                }
            },
        }
    }
    if set.is_empty() {
        return Err(TraceError::Spec(format!("empty day set `{days}`")));
    }
    Ok(set)
}

fn parse_clock(s: &str) -> Result<i64, TraceError> {
    let time = NaiveTime::parse_from_str(s, "%H:%M")
        .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M:%S"))
        .map_err(|_| TraceError::Spec(format!("bad clock time `{s}`, expected HH:MM")))?;
    Ok(time.num_seconds_from_midnight() as i64)
}

struct CompiledPattern {
    days: BTreeSet<u32>,
    start: i64,
    routes: Vec<(f64, Vec<Stop>)>,
    stay_jitter_s: i64,
    pause_after_s: i64,
}

fn compile(pattern: &Pattern) -> Result<CompiledPattern, TraceError> {
    let routes: Vec<(f64, Vec<Stop>)> = match (pattern.path.is_empty(), pattern.routes.is_empty()) {
        (false, true) => vec![(1.0, pattern.path.clone())],
        (true, false) => pattern.routes.iter().map(|r| (r.weight, r.path.clone())).collect(),
        _ => return Err(TraceError::Spec("a pattern needs exactly one of `path` or `routes`".into())),
    };
    for (weight, path) in &routes {
        if !(*weight > 0.0) || path.is_empty() {
            return Err(TraceError::Spec("routes need a positive weight and a non-empty path".into()));
        }
        if path.iter().any(|s| s.stay_s < 0) {
            return Err(TraceError::Spec("stay durations must be non-negative".into()));
        }
        if path.windows(2).any(|w| w[0].node == w[1].node) {
            return Err(TraceError::Spec("a path may not repeat a node consecutively".into()));
        }
    }
    Ok(CompiledPattern {
        days: parse_days(&pattern.days)?,
        start: parse_clock(&pattern.start)?,
        routes,
        stay_jitter_s: pattern.stay_jitter_s.max(0),
        pause_after_s: pattern.pause_after_s.max(0),
    })
}

/// Expands a schedule into timelines, one per client replica, in spec order.
pub fn synth_generate(spec: &SynthSpec, noise_seed: Option<u64>) -> Result<Vec<ClientTimeline>, TraceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed.unwrap_or(0));
    let jitter = if noise_seed.is_some() { spec.jitter_s.max(0) } else { 0 };
    let mut timelines = Vec::new();
    for client in &spec.clients {
        let patterns: Vec<CompiledPattern> = client.patterns.iter().map(compile).collect::<Result<_, _>>()?;
        for replica in 0..client.replicas {
            let id = if client.replicas > 1 {
                format!("{}-{replica}", client.id)
            } else {
                client.id.clone()
            };
            let mut sessions: Vec<(Vec<NodeVisit>, i64)> = Vec::new();
            for day in 0..spec.weeks as i64 * 7 {
                let date = spec.start_date + Duration::days(day);
                let weekday = date.weekday().num_days_from_monday();
                let midnight_local = date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp();
                for pattern in patterns.iter().filter(|p| p.days.contains(&weekday)) {
                    let shift = if jitter > 0 { rng.gen_range(-jitter..=jitter) } else { 0 };
                    let path = pick_route(&pattern.routes, &mut rng);
                    let mut t: Timestamp = midnight_local + pattern.start + shift - spec.utc_offset_s;
                    let mut visits = Vec::with_capacity(path.len());
                    for stop in path {
                        let mut stay = stop.stay_s;
                        if pattern.stay_jitter_s > 0 && stay > 0 {
                            stay = (stay + rng.gen_range(-pattern.stay_jitter_s..=pattern.stay_jitter_s)).max(1);
                        }
                        visits.push(NodeVisit::new(NodeId(stop.node), t, t + stay));
                        t += stay;
                    }
                    sessions.push((visits, pattern.pause_after_s));
                }
            }
            sessions.sort_by_key(|(v, _)| v[0].arrival);
            for pair in sessions.windows(2) {
                let (prev, gap) = (&pair[0].0, pair[0].1);
                let (prev_end, next_start) = (prev[prev.len() - 1].departure, pair[1].0[0].arrival);
                if next_start <= prev_end {
                    return Err(TraceError::Spec(format!(
                        "client {id}: scheduled sessions overlap at epoch {next_start}"
                    )));
                }
                if next_start - prev_end < gap {
                    return Err(TraceError::Spec(format!(
                        "client {id}: session at epoch {next_start} starts within the required pause"
                    )));
                }
            }
            let sessions = sessions
                .into_iter()
                .enumerate()
                .map(|(i, (visits, _))| VisitSession { id: i as u32, visits })
                .collect();
            timelines.push(ClientTimeline::from_sessions(id, sessions)?);
        }
    }
    Ok(timelines)
}

fn pick_route<'a>(routes: &'a [(f64, Vec<Stop>)], rng: &mut ChaCha8Rng) -> &'a [Stop] {
    if routes.len() == 1 {
        return &routes[0].1;
    }
    let total: f64 = routes.iter().map(|r| r.0).sum();
    let mut draw = rng.gen_range(0.0..total);
    for (weight, path) in routes {
        if draw < *weight {
            return path;
        }
        draw -= weight;
    }
    &routes[routes.len() - 1].1
}

#[cfg(test)]
mod tests {
    use super::*;

    const COMMUTE: &str = r#"
start_date = "2024-01-01"
weeks = 2

[[client]]
id = "commuter"

[[client.pattern]]
days = "mon-fri"
start = "08:00"
path = [{ node = 0, stay_s = 600 }, { node = 1, stay_s = 600 }, { node = 2 }]
pause_after_s = 28800
"#;

    #[test]
    fn weekday_commute_expands() {
        let spec = SynthSpec::from_toml(COMMUTE).unwrap();
        let timelines = synth_generate(&spec, None).unwrap();
        assert_eq!(timelines.len(), 1);
        let t = &timelines[0];
        assert_eq!(t.sessions.len(), 10);
        for s in &t.sessions {
            assert_eq!(s.nodes().map(|n| n.0).collect::<Vec<_>>(), vec![0, 1, 2]);
            assert_eq!(s.visits[0].duration(), 600);
        }
        // 2024-01-01 08:00 at UTC+8 is 00:00 UTC
        assert_eq!(t.sessions[0].start(), 1_704_067_200);
        assert_eq!(t.pauses.len(), 9);
    }

    #[test]
    fn empty_spec_is_empty() {
        let spec = SynthSpec::from_toml("start_date = \"2024-01-01\"\nweeks = 3\n").unwrap();
        assert!(synth_generate(&spec, Some(7)).unwrap().is_empty());
    }

    #[test]
    fn seeded_jitter_is_deterministic() {
        let text = format!("jitter_s = 300\n{COMMUTE}");
        let spec = SynthSpec::from_toml(&text).unwrap();
        let a = synth_generate(&spec, Some(42)).unwrap();
        let b = synth_generate(&spec, Some(42)).unwrap();
        assert_eq!(a, b);
        let plain = synth_generate(&spec, None).unwrap();
        assert_ne!(a, plain);
        for (j, p) in a[0].sessions.iter().zip(&plain[0].sessions) {
            assert!((j.start() - p.start()).abs() <= 300);
            // stays are untouched by start jitter
            assert_eq!(j.visits[0].duration(), p.visits[0].duration());
        }
    }

    #[test]
    fn overlapping_patterns_are_rejected() {
        let text = r#"
start_date = "2024-01-01"
weeks = 1
[[client]]
id = "x"
[[client.pattern]]
days = "mon"
start = "08:00"
path = [{ node = 0, stay_s = 3600 }]
[[client.pattern]]
days = "mon"
start = "08:30"
path = [{ node = 1, stay_s = 60 }]
"#;
        let spec = SynthSpec::from_toml(text).unwrap();
        assert!(matches!(synth_generate(&spec, None), Err(TraceError::Spec(_))));
    }

    #[test]
    fn day_sets() {
        assert_eq!(parse_days("mon-fri").unwrap(), (0..5).collect());
        assert_eq!(parse_days("sat, sun").unwrap(), [5, 6].into_iter().collect());
        assert_eq!(parse_days("daily").unwrap().len(), 7);
        assert!(parse_days("fri-mon").is_err());
        assert!(parse_days("funday").is_err());
    }

    #[test]
    fn weighted_routes_and_replicas() {
        let text = r#"
start_date = "2024-01-01"
weeks = 4
[[client]]
id = "walker"
replicas = 3
[[client.pattern]]
days = "daily"
start = "09:00"
stay_jitter_s = 120
routes = [
  { weight = 3.0, path = [{ node = 0, stay_s = 600 }, { node = 1, stay_s = 600 }] },
  { weight = 1.0, path = [{ node = 0, stay_s = 600 }, { node = 2, stay_s = 600 }] },
]
"#;
        let spec = SynthSpec::from_toml(text).unwrap();
        let timelines = synth_generate(&spec, Some(1)).unwrap();
        assert_eq!(timelines.len(), 3);
        assert_eq!(timelines[2].client_id, "walker-2");
        let second: Vec<u32> = timelines.iter().flat_map(|t| t.sessions.iter().map(|s| s.visits[1].node.0)).collect();
        assert!(second.contains(&1) && second.contains(&2));
        assert!(timelines[0].visits().all(|v| (480..=720).contains(&v.duration())));
    }
}
