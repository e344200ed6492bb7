//! Replica placement policies.
//!
//! A [`Policy`] holds one client's state and reacts to the events of that
//! client's timeline with [`PlacementAction`]s. The reactive baseline keeps
//! the data only at the node the client is connected to. Predictive policies
//! additionally replicate to the successors their Markov model expects,
//! timed by the expected stay, and startup policies keep the data at the
//! shutdown node for a while after the application stops.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::markov::{dynamic_topn, MarkovError, MarkovModel, PredictorKind, Target, TopN};
use crate::startup::{plmm_retention, record_pause, short_pause_retention, PauseStats, Plmm, RetentionDecision, RetentionMode, ShortPauseConfig, DEFAULT_PLMM_THRESHOLD_S};
use crate::topology::NodeId;
use crate::traces::NodeVisit;
use crate::{Timestamp, DEFAULT_UTC_OFFSET_S};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum StartupPolicy {
    #[default]
    None,
    ShortPause(ShortPauseConfig),
    Plmm {
        #[serde(default = "default_plmm_threshold")]
        threshold_s: f64,
    },
}

fn default_plmm_threshold() -> f64 {
    DEFAULT_PLMM_THRESHOLD_S
}


fn default_topn() -> TopN {
    TopN::Fixed(1)
}

fn default_buffer() -> f64 {
    86_400.0
}

fn yes() -> bool {
    true
}

/// A placement policy as written in experiment configs. Without a predictor
/// the policy is the reactive baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub name: String,
    #[serde(default)]
    pub predictor: Option<PredictorKind>,
    /// Train and act on the End-of-Trip state.
    #[serde(default)]
    pub eot: bool,
    #[serde(default = "default_topn")]
    pub topn: TopN,
    /// Whether EoT probability counts towards a dynamic topN threshold.
    #[serde(default = "yes")]
    pub eot_in_threshold: bool,
    /// Lead time before the predicted departure at which the transfer to a
    /// predicted node should complete, seconds.
    #[serde(default = "default_buffer")]
    pub preload_buffer_s: f64,
    #[serde(default)]
    pub startup: StartupPolicy,
}

impl PolicyConfig {
    pub fn baseline() -> Self {
        PolicyConfig {
            name: "baseline".into(),
            predictor: None,
            eot: false,
            topn: TopN::Fixed(1),
            eot_in_threshold: true,
            preload_buffer_s: default_buffer(),
            startup: StartupPolicy::None,
        }
    }

    pub fn predictive(name: &str, kind: PredictorKind) -> Self {
        PolicyConfig {
            name: name.into(),
            predictor: Some(kind),
            ..Self::baseline()
        }
    }

    pub fn validate(&self) -> Result<(), MarkovError> {
        self.topn.validate()?;
        if self.preload_buffer_s.is_nan() {
            return Err(MarkovError::Config("preload buffer must be a number".into()));
        }
        if let Some(kind) = &self.predictor {
            MarkovModel::new(kind, self.eot, 0)?;
        }
        match &self.startup {
            StartupPolicy::Plmm { threshold_s } if !(*threshold_s > 0.0) => Err(MarkovError::Config(format!(
                "PLMM threshold must be positive, got {threshold_s}"
            ))),
            StartupPolicy::ShortPause(config) if config.duration_s < 0 => {
                Err(MarkovError::Config("short pause duration must be non-negative".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PlacementAction {
    Replicate { node: NodeId, at: Timestamp },
    Delete { node: NodeId, at: Timestamp },
    Retain { node: NodeId, until: Timestamp },
}

/// Estimated transfer time to a node, used to time preloads.
pub trait TransferEstimator: Send + Sync {
    fn estimate(&self, dst: NodeId) -> f64;
}

/// Exact per-node transfer times, indexed by node id.
impl TransferEstimator for Vec<f64> {
    fn estimate(&self, dst: NodeId) -> f64 {
        self.get(dst.index()).copied().unwrap_or(0.0)
    }
}

/// One client's policy state.
pub struct Policy {
    config: PolicyConfig,
    model: Option<MarkovModel>,
    transfer: Arc<dyn TransferEstimator>,
    stats: PauseStats,
    plmm: Plmm,
    trip_start: Timestamp,
    visits: Vec<NodeVisit>,
    history: Vec<NodeId>,
    /// Predicted successors holding (or about to hold) a replica.
    predicted: BTreeMap<NodeId, Timestamp>,
    last_shutdown: Option<(NodeId, Timestamp)>,
    retained: Option<NodeId>,
}

impl Policy {
    pub fn new(config: PolicyConfig, utc_offset_s: i64, transfer: Arc<dyn TransferEstimator>) -> Result<Self, MarkovError> {
        config.validate()?;
        let model = config
            .predictor
            .as_ref()
            .map(|kind| MarkovModel::new(kind, config.eot, utc_offset_s))
            .transpose()?;
        Ok(Policy {
            config,
            model,
            transfer,
            stats: PauseStats::new(),
            plmm: Plmm::new(),
            trip_start: 0,
            visits: Vec::new(),
            history: Vec::new(),
            predicted: BTreeMap::new(),
            last_shutdown: None,
            retained: None,
        })
    }

    /// A policy with the default UTC offset and a fixed transfer estimate.
    pub fn with_fixed_transfer(config: PolicyConfig, transfer_s: f64, nodes: usize) -> Result<Self, MarkovError> {
        Self::new(config, DEFAULT_UTC_OFFSET_S, Arc::new(vec![transfer_s; nodes]))
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn model(&self) -> Option<&MarkovModel> {
        self.model.as_ref()
    }

    pub fn pause_stats(&self) -> &PauseStats {
        &self.stats
    }

    pub fn plmm(&self) -> &Plmm {
        &self.plmm
    }

    /// The application starts at `node`.
    pub fn on_session_start(&mut self, node: NodeId, t: Timestamp) -> Vec<PlacementAction> {
        let mut actions = Vec::new();
        if let Some((shutdown_node, shutdown_t)) = self.last_shutdown.take() {
            self.on_pause_observed(shutdown_node, node, t - shutdown_t);
        }
        if let Some(retained) = self.retained.take() {
            if retained != node {
                actions.push(PlacementAction::Delete { node: retained, at: t });
            }
        }
        self.trip_start = t;
        self.visits = vec![NodeVisit::new(node, t, t)];
        self.history = vec![node];
        actions.push(PlacementAction::Replicate { node, at: t });
        actions.extend(self.predict_successors(node, t));
        actions
    }

    /// The client switched to `node` during an active session.
    pub fn on_arrival(&mut self, node: NodeId, t: Timestamp) -> Vec<PlacementAction> {
        let previous = self.history.last().copied();
        if let Some(last) = self.visits.last_mut() {
            last.departure = t;
        }
        self.visits.push(NodeVisit::new(node, t, t));
        self.history.push(node);

        let mut actions = vec![PlacementAction::Replicate { node, at: t }];
        // the replica at the new node now serves the client
        self.predicted.remove(&node);
        let stale: Vec<NodeId> = self.predicted.keys().copied().collect();
        let mut scheduled = self.predict_successors(node, t);
        for stale_node in stale {
            let immediate = scheduled.contains(&PlacementAction::Replicate { node: stale_node, at: t });
            if !immediate {
                self.predicted.remove(&stale_node);
                actions.push(PlacementAction::Delete { node: stale_node, at: t });
            }
        }
        if let Some(prev) = previous.filter(|&p| p != node) {
            let keep = self.predicted.get(&prev) == Some(&t);
            if !keep {
                actions.push(PlacementAction::Delete { node: prev, at: t });
            }
        }
        actions.append(&mut scheduled);
        actions
    }

    /// The application stops at `node`.
    pub fn on_session_end(&mut self, node: NodeId, t: Timestamp) -> Vec<PlacementAction> {
        if let Some(last) = self.visits.last_mut() {
            last.departure = t;
        }
        let visits = std::mem::take(&mut self.visits);
        self.on_training_feedback(&visits, self.trip_start);
        self.history.clear();

        let mut actions: Vec<PlacementAction> = std::mem::take(&mut self.predicted)
            .into_keys()
            .filter(|&n| n != node)
            .map(|n| PlacementAction::Delete { node: n, at: t })
            .collect();
        let decision = match &self.config.startup {
            StartupPolicy::None => RetentionDecision::DROP,
            StartupPolicy::ShortPause(config) => short_pause_retention(config, &self.stats, node, t),
            StartupPolicy::Plmm { threshold_s } => plmm_retention(&self.plmm, node, t, *threshold_s),
        };
        match decision.until {
            Some(until) if decision.keep && until > t => {
                self.retained = Some(node);
                actions.push(PlacementAction::Retain { node, until });
            }
            _ => actions.push(PlacementAction::Delete { node, at: t }),
        }
        self.last_shutdown = Some((node, t));
        actions
    }

    /// Trains the predictor on a completed session.
    pub fn on_training_feedback(&mut self, visits: &[NodeVisit], trip_start: Timestamp) {
        if let Some(model) = &mut self.model {
            model.train_session(visits, trip_start);
        }
    }

    /// Records a pause once the following startup has been observed.
    pub fn on_pause_observed(&mut self, shutdown_node: NodeId, startup_node: NodeId, duration: i64) {
        if let Err(e) = record_pause(&mut self.stats, &mut self.plmm, shutdown_node, startup_node, duration) {
            log::debug!("ignoring pause: {e}");
        }
    }

    fn predict_successors(&mut self, current: NodeId, t: Timestamp) -> Vec<PlacementAction> {
        let Some(model) = &self.model else {
            return Vec::new();
        };
        let Some(set) = model.predict(&self.history, self.trip_start) else {
            return Vec::new();
        };
        if self.config.eot && set.top().is_some_and(|p| p.target == Target::EoT) {
            return Vec::new();
        }
        let selection = dynamic_topn(&set, self.config.topn, self.config.eot_in_threshold).unwrap_or_default();
        let mut actions = Vec::new();
        for target in selection {
            let Some(node) = target.node().filter(|&n| n != current) else {
                continue;
            };
            let stay = set.get(target).and_then(|p| p.expected_stay).unwrap_or(0.0);
            let lead = stay - self.transfer.estimate(node) - self.config.preload_buffer_s;
            let at = if lead > 0.0 { t + lead.round() as i64 } else { t };
            self.predicted.insert(node, at);
            actions.push(PlacementAction::Replicate { node, at });
        }
        actions
    }

    /// Bytes of learned state: the Markov tables, plus the pause lists and
    /// PLMM when the startup policy uses them.
    pub fn memory_bytes(&self) -> usize {
        let model = self.model.as_ref().map_or(0, MarkovModel::memory_bytes);
        let startup = match &self.config.startup {
            StartupPolicy::None => 0,
            StartupPolicy::ShortPause(config) => match config.mode {
                RetentionMode::Fixed => 0,
                RetentionMode::Learned => self.stats.memory_bytes(false),
                RetentionMode::NodeSpecific => self.stats.memory_bytes(true),
            },
            StartupPolicy::Plmm { .. } => self.plmm.memory_bytes(),
        };
        model + startup
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PlacementAction::*;

    const A: NodeId = NodeId(0);
    const B: NodeId = NodeId(1);
    const C: NodeId = NodeId(2);

    fn policy(config: PolicyConfig) -> Policy {
        Policy::new(config, 0, Arc::new(vec![300.0; 4])).unwrap()
    }

    fn trained_on_abc(mut config: PolicyConfig) -> Policy {
        config.preload_buffer_s = 10.0;
        let mut p = policy(config);
        p.on_session_start(A, 0);
        p.on_arrival(B, 600);
        p.on_arrival(C, 1200);
        p.on_session_end(C, 1500);
        p
    }

    #[test]
    fn baseline_cold_start_and_hops() {
        let mut p = policy(PolicyConfig::baseline());
        assert_eq!(p.on_session_start(A, 0), vec![Replicate { node: A, at: 0 }]);
        assert_eq!(
            p.on_arrival(B, 100),
            vec![Replicate { node: B, at: 100 }, Delete { node: A, at: 100 }]
        );
        assert_eq!(p.on_session_end(B, 200), vec![Delete { node: B, at: 200 }]);
        assert_eq!(p.memory_bytes(), 0);
    }

    #[test]
    fn predictive_timing_uses_stay_transfer_and_buffer() {
        let mut p = trained_on_abc(PolicyConfig::predictive("vomm", PredictorKind::vomm(2)));
        // day two: at A, expected stay 600, transfer 300, buffer 10 -> t + 290
        let actions = p.on_session_start(A, 86_400);
        assert_eq!(
            actions,
            vec![Replicate { node: A, at: 86_400 }, Replicate { node: B, at: 86_400 + 290 }]
        );
    }

    #[test]
    fn huge_buffer_replicates_immediately() {
        let mut config = PolicyConfig::predictive("vomm", PredictorKind::vomm(2));
        config.preload_buffer_s = 86_400.0;
        let mut p = policy(config);
        p.on_session_start(A, 0);
        p.on_arrival(B, 600);
        p.on_session_end(B, 900);
        let actions = p.on_session_start(A, 10_000);
        assert!(actions.contains(&Replicate { node: B, at: 10_000 }));
    }

    #[test]
    fn unknown_context_behaves_like_baseline() {
        let mut p = trained_on_abc(PolicyConfig::predictive("vomm", PredictorKind::vomm(2)));
        assert_eq!(p.on_session_start(NodeId(3), 90_000), vec![Replicate { node: NodeId(3), at: 90_000 }]);
    }

    #[test]
    fn wrong_prediction_is_deleted_on_next_arrival() {
        let mut config = PolicyConfig::predictive("momm", PredictorKind::Momm { k: 1 });
        config.preload_buffer_s = 1e9;
        let mut p = policy(config);
        p.on_session_start(A, 0);
        p.on_arrival(B, 100);
        p.on_session_end(B, 200);
        assert!(p.on_session_start(A, 1000).contains(&Replicate { node: B, at: 1000 }));
        let actions = p.on_arrival(C, 1100);
        assert!(actions.contains(&Delete { node: B, at: 1100 }));
        assert!(actions.contains(&Delete { node: A, at: 1100 }));
        assert!(actions.contains(&Replicate { node: C, at: 1100 }));
    }

    #[test]
    fn eot_top_prediction_schedules_nothing() {
        let mut config = PolicyConfig::predictive("vomm", PredictorKind::vomm(1));
        config.eot = true;
        let mut p = policy(config);
        p.on_session_start(A, 0);
        p.on_session_end(A, 100);
        // [A] -> EoT with probability 1
        assert_eq!(p.on_session_start(A, 1000), vec![Replicate { node: A, at: 1000 }]);
    }

    #[test]
    fn session_end_with_startup_policies() {
        let mut config = PolicyConfig::baseline();
        config.startup = StartupPolicy::ShortPause(ShortPauseConfig::fixed(600));
        let mut p = policy(config);
        p.on_session_start(A, 0);
        assert_eq!(p.on_session_end(A, 100), vec![Retain { node: A, until: 700 }]);
        // restarting elsewhere drops the retained copy
        assert_eq!(
            p.on_session_start(B, 500),
            vec![Delete { node: A, at: 500 }, Replicate { node: B, at: 500 }]
        );
        assert_eq!(p.pause_stats().client_durations(), &[400]);

        let mut config = PolicyConfig::baseline();
        config.startup = StartupPolicy::Plmm { threshold_s: 1500.0 };
        let mut p = policy(config);
        p.on_session_start(A, 0);
        assert_eq!(p.on_session_end(A, 100), vec![Delete { node: A, at: 100 }]);
        p.on_session_start(B, 400);
        // PLMM learned A -> B, so a shutdown at A does not keep data
        assert_eq!(p.on_session_end(A, 500), vec![Delete { node: A, at: 500 }]);
        p.on_session_start(A, 800);
        p.on_session_end(A, 900);
        p.on_session_start(A, 1100);
        // now A -> A (twice, mean pause 250) outweighs A -> B
        assert_eq!(p.on_session_end(A, 1200), vec![Retain { node: A, until: 1575 }]);
    }

    #[test]
    fn predicted_replicas_are_deleted_at_session_end() {
        let mut config = PolicyConfig::predictive("vomm", PredictorKind::vomm(1));
        config.preload_buffer_s = 1e9;
        let mut p = policy(config);
        p.on_session_start(A, 0);
        p.on_arrival(B, 100);
        p.on_session_end(B, 200);
        p.on_session_start(A, 1000);
        let actions = p.on_session_end(A, 1050);
        assert_eq!(actions, vec![Delete { node: B, at: 1050 }, Delete { node: A, at: 1050 }]);
    }

    #[test]
    fn config_parsing_names_bad_fields() {
        let err = toml::from_str::<PolicyConfig>("name = \"x\"\npredictor = { kind = \"hmm\", k = 1 }\n").unwrap_err();
        assert!(err.to_string().contains("hmm"), "{err}");
        let ok: PolicyConfig = toml::from_str(
            "name = \"combo\"\npredictor = { kind = \"fomm\", k_max = 2 }\ntopn = { dynamic = 0.9 }\neot = true\nstartup = { kind = \"short_pause\", mode = \"fixed\", duration_s = 600 }\n",
        )
        .unwrap();
        assert_eq!(ok.topn, TopN::Dynamic(0.9));
        assert!(matches!(ok.startup, StartupPolicy::ShortPause(_)));
        let bad = PolicyConfig {
            topn: TopN::Dynamic(1.5),
            ..PolicyConfig::baseline()
        };
        assert!(bad.validate().is_err());
    }
}
