//! Restart prediction: how long to keep a client's data at its last node
//! after the application shuts down.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::{ContextKey, MarkovModel, PredictorKind, Target};
use crate::topology::NodeId;
use crate::Timestamp;

/// Minimum per-node samples before a node-specific median is trusted.
pub const DEFAULT_MIN_SAMPLES: usize = 3;
/// Default PLMM keep threshold (25 minutes).
pub const DEFAULT_PLMM_THRESHOLD_S: f64 = 1500.0;
/// Retention window as a multiple of the predicted pause.
pub const PLMM_SAFETY_FACTOR: f64 = 1.5;
/// Fallback short-pause duration (10 minutes).
pub const DEFAULT_SHORT_PAUSE_S: i64 = 600;

#[derive(Debug, Error, PartialEq)]
pub enum StartupError {
    #[error("pause duration must be positive, got {0}")]
    NonPositivePause(i64),
}

/// Observed pause durations of one client, kept sorted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PauseStats {
    client: Vec<i64>,
    per_node: HashMap<NodeId, Vec<i64>>,
}

fn insert_sorted(list: &mut Vec<i64>, value: i64) {
    let pos = list.partition_point(|&v| v <= value);
    list.insert(pos, value);
}

fn lower_median(sorted: &[i64]) -> Option<i64> {
    if sorted.is_empty() {
        None
    } else {
        Some(sorted[(sorted.len() - 1) / 2])
    }
}

impl PauseStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn client_durations(&self) -> &[i64] {
        &self.client
    }

    pub fn node_durations(&self, node: NodeId) -> &[i64] {
        self.per_node.get(&node).map_or(&[], Vec::as_slice)
    }

    pub fn sample_count(&self) -> usize {
        self.client.len()
    }

    /// Four bytes per stored duration, counting both the client list and the
    /// per-node lists.
    pub fn memory_bytes(&self, node_lists: bool) -> usize {
        let per_node: usize = if node_lists {
            self.per_node.values().map(Vec::len).sum()
        } else {
            0
        };
        4 * (self.client.len() + per_node)
    }
}

/// Pause Length Markov Model: history one, keyed by the shutdown node,
/// predicting the startup node and the mean pause before it.
#[derive(Clone, Debug, PartialEq)]
pub struct Plmm {
    model: MarkovModel,
}

impl Default for Plmm {
    fn default() -> Self {
        Plmm {
            model: MarkovModel::new(&PredictorKind::Momm { k: 1 }, false, 0).expect("order-1 model is valid"),
        }
    }
}

impl Plmm {
    pub fn new() -> Self {
        Self::default()
    }

    /// The underlying order-1 table; pause sums are stored as stay sums.
    pub fn model(&self) -> &MarkovModel {
        &self.model
    }

    pub fn from_model(model: MarkovModel) -> Self {
        Plmm { model }
    }

    pub fn memory_bytes(&self) -> usize {
        self.model.memory_bytes()
    }

    fn record(&mut self, shutdown: NodeId, startup: NodeId, duration: i64) {
        let key = ContextKey {
            history: vec![shutdown],
            day_bucket: 0,
            time_bucket: 0,
        };
        self.model.submodels_mut()[0]
            .table
            .record(key, Target::Node(startup), Some(duration as f64));
    }

    /// `(startup node, count share)` for every successor of `shutdown`.
    pub fn distribution(&self, shutdown: NodeId) -> Vec<(NodeId, f64)> {
        let key = ContextKey {
            history: vec![shutdown],
            day_bucket: 0,
            time_bucket: 0,
        };
        let Some(targets) = self.model.submodels()[0].table.get(&key) else {
            return Vec::new();
        };
        let total: u32 = targets.iter().map(|(_, r)| r.count).sum();
        targets
            .iter()
            .filter_map(|(t, r)| Some((t.node()?, r.count as f64 / total as f64)))
            .collect()
    }
}

/// Records a completed pause into the duration lists and the PLMM.
pub fn record_pause(
    stats: &mut PauseStats,
    plmm: &mut Plmm,
    shutdown_node: NodeId,
    startup_node: NodeId,
    duration: i64,
) -> Result<(), StartupError> {
    if duration <= 0 {
        return Err(StartupError::NonPositivePause(duration));
    }
    insert_sorted(&mut stats.client, duration);
    insert_sorted(stats.per_node.entry(shutdown_node).or_default(), duration);
    plmm.record(shutdown_node, startup_node, duration);
    Ok(())
}

/// Median pause (lower middle for even counts). With `node`, the node's own
/// list is used once it has `min_samples` entries; otherwise the client-wide
/// list.
pub fn median_pause(stats: &PauseStats, node: Option<NodeId>, min_samples: usize) -> Option<i64> {
    let min_samples = min_samples.max(1);
    if let Some(node) = node {
        let list = stats.node_durations(node);
        if list.len() >= min_samples {
            return lower_median(list);
        }
    }
    lower_median(&stats.client)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionMode {
    Fixed,
    Learned,
    NodeSpecific,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortPauseConfig {
    pub mode: RetentionMode,
    /// Retention for `fixed`, and the fallback for learned modes without
    /// history.
    #[serde(default = "default_short_pause")]
    pub duration_s: i64,
    /// Cap on the retention window.
    #[serde(default)]
    pub max_s: Option<i64>,
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
}

fn default_short_pause() -> i64 {
    DEFAULT_SHORT_PAUSE_S
}

fn default_min_samples() -> usize {
    DEFAULT_MIN_SAMPLES
}

impl ShortPauseConfig {
    pub fn fixed(duration_s: i64) -> Self {
        ShortPauseConfig {
            mode: RetentionMode::Fixed,
            duration_s,
            max_s: None,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }

    pub fn learned(mode: RetentionMode, max_s: Option<i64>) -> Self {
        ShortPauseConfig {
            mode,
            duration_s: DEFAULT_SHORT_PAUSE_S,
            max_s,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetentionDecision {
    pub keep: bool,
    pub until: Option<Timestamp>,
}

impl RetentionDecision {
    pub const DROP: RetentionDecision = RetentionDecision {
        keep: false,
        until: None,
    };

    pub fn keep_until(until: Timestamp) -> Self {
        RetentionDecision {
            keep: true,
            until: Some(until),
        }
    }
}

/// Keep the data at the shutdown node for a fixed, learned or node-specific
/// duration.
pub fn short_pause_retention(
    config: &ShortPauseConfig,
    stats: &PauseStats,
    shutdown_node: NodeId,
    shutdown_t: Timestamp,
) -> RetentionDecision {
    let learned = match config.mode {
        RetentionMode::Fixed => None,
        RetentionMode::Learned => median_pause(stats, None, config.min_samples),
        RetentionMode::NodeSpecific => median_pause(stats, Some(shutdown_node), config.min_samples),
    };
    let mut duration = learned.unwrap_or(config.duration_s);
    if let Some(max) = config.max_s {
        duration = duration.min(max);
    }
    if duration <= 0 {
        return RetentionDecision::DROP;
    }
    RetentionDecision::keep_until(shutdown_t + duration)
}

/// Most frequent startup node after shutting down at `shutdown_node` (ties to
/// the smaller id) and the mean pause before it.
pub fn plmm_predict(plmm: &Plmm, shutdown_node: NodeId) -> Option<(NodeId, f64)> {
    let key = ContextKey {
        history: vec![shutdown_node],
        day_bucket: 0,
        time_bucket: 0,
    };
    let targets = plmm.model.submodels()[0].table.get(&key)?;
    targets
        .iter()
        .filter_map(|(t, r)| Some((t.node()?, r)))
        .max_by(|(na, ra), (nb, rb)| ra.count.cmp(&rb.count).then(nb.cmp(na)))
        .map(|(node, r)| (node, r.stay_sum / r.count as f64))
}

/// Keep the data only if the PLMM expects a restart at the same node within
/// `threshold_s`; the window is the predicted pause times the safety factor.
pub fn plmm_retention(plmm: &Plmm, shutdown_node: NodeId, shutdown_t: Timestamp, threshold_s: f64) -> RetentionDecision {
    match plmm_predict(plmm, shutdown_node) {
        Some((node, pause)) if node == shutdown_node && pause <= threshold_s => {
            RetentionDecision::keep_until(shutdown_t + (pause * PLMM_SAFETY_FACTOR).round() as i64)
        }
        _ => RetentionDecision::DROP,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: NodeId = NodeId(0);
    const B: NodeId = NodeId(1);

    fn plmm_entry(plmm: &Plmm, startup: NodeId) -> (u32, f64) {
        let key = ContextKey {
            history: vec![A],
            day_bucket: 0,
            time_bucket: 0,
        };
        let targets = plmm.model().submodels()[0].table.get(&key).unwrap();
        let (_, r) = targets.iter().find(|(t, _)| *t == Target::Node(startup)).unwrap();
        (r.count, r.stay_sum)
    }

    #[test]
    fn recording_pauses() {
        let (mut stats, mut plmm) = (PauseStats::new(), Plmm::new());
        record_pause(&mut stats, &mut plmm, A, A, 600).unwrap();
        assert_eq!(plmm_entry(&plmm, A), (1, 600.0));
        record_pause(&mut stats, &mut plmm, A, B, 300).unwrap();
        assert_eq!(plmm_entry(&plmm, A), (1, 600.0));
        assert_eq!(plmm_entry(&plmm, B), (1, 300.0));
        assert_eq!(stats.client_durations(), &[300, 600]);
        assert_eq!(
            record_pause(&mut stats, &mut plmm, A, B, 0),
            Err(StartupError::NonPositivePause(0))
        );
    }

    #[test]
    fn medians() {
        let (mut stats, mut plmm) = (PauseStats::new(), Plmm::new());
        assert_eq!(median_pause(&stats, None, 1), None);
        for d in [900, 100, 600] {
            record_pause(&mut stats, &mut plmm, A, A, d).unwrap();
        }
        assert_eq!(median_pause(&stats, None, 1), Some(600));
        record_pause(&mut stats, &mut plmm, B, A, 1000).unwrap();
        // even count: lower middle of [100, 600, 900, 1000]
        assert_eq!(median_pause(&stats, None, 1), Some(600));
    }

    #[test]
    fn node_median_falls_back_to_client() {
        let (mut stats, mut plmm) = (PauseStats::new(), Plmm::new());
        for d in [100, 200, 300] {
            record_pause(&mut stats, &mut plmm, A, A, d).unwrap();
        }
        let mut with_b = stats.clone();
        record_pause(&mut with_b, &mut plmm, B, B, 50).unwrap();
        // B has one sample, below min_samples = 3: client list [50,100,200,300]
        assert_eq!(median_pause(&with_b, Some(B), 3), Some(100));
        // the documented fixture: node list [50], client list [100, 200, 300]
        let mut fixture = PauseStats::new();
        fixture.client = vec![100, 200, 300];
        fixture.per_node.insert(B, vec![50]);
        assert_eq!(median_pause(&fixture, Some(B), 3), Some(200));
        assert_eq!(median_pause(&fixture, Some(B), 3), median_pause(&fixture, None, 3));
    }

    #[test]
    fn short_pause_modes() {
        let stats = PauseStats::new();
        let fixed = short_pause_retention(&ShortPauseConfig::fixed(600), &stats, A, 1000);
        assert_eq!(fixed, RetentionDecision::keep_until(1600));
        // learned without history uses the fixed default
        let learned = short_pause_retention(&ShortPauseConfig::learned(RetentionMode::Learned, None), &stats, A, 0);
        assert_eq!(learned, RetentionDecision::keep_until(DEFAULT_SHORT_PAUSE_S));

        let (mut stats, mut plmm) = (PauseStats::new(), Plmm::new());
        for d in [400, 595, 5000] {
            record_pause(&mut stats, &mut plmm, B, A, d).unwrap();
        }
        let learned = short_pause_retention(&ShortPauseConfig::learned(RetentionMode::Learned, None), &stats, A, 0);
        assert_eq!(learned.until, Some(595));
        let capped = short_pause_retention(&ShortPauseConfig::learned(RetentionMode::Learned, Some(500)), &stats, A, 0);
        assert_eq!(capped.until, Some(500));
    }

    #[test]
    fn plmm_prediction() {
        let mut plmm = Plmm::new();
        let mut stats = PauseStats::new();
        assert_eq!(plmm_predict(&plmm, A), None);
        record_pause(&mut stats, &mut plmm, A, B, 300).unwrap();
        assert_eq!(plmm_predict(&plmm, A), Some((B, 300.0)));
        for d in [500, 600, 700] {
            record_pause(&mut stats, &mut plmm, A, A, d).unwrap();
        }
        assert_eq!(plmm_predict(&plmm, A), Some((A, 600.0)));
        let shares: f64 = plmm.distribution(A).iter().map(|(_, p)| p).sum();
        assert!((shares - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plmm_tie_goes_to_smaller_id() {
        let (mut stats, mut plmm) = (PauseStats::new(), Plmm::new());
        record_pause(&mut stats, &mut plmm, A, B, 300).unwrap();
        record_pause(&mut stats, &mut plmm, A, A, 900).unwrap();
        assert_eq!(plmm_predict(&plmm, A), Some((A, 900.0)));
    }

    #[test]
    fn plmm_keep_rules() {
        let (mut stats, mut plmm) = (PauseStats::new(), Plmm::new());
        record_pause(&mut stats, &mut plmm, A, A, 600).unwrap();
        assert_eq!(plmm_retention(&plmm, A, 100, 1500.0), RetentionDecision::keep_until(1000));

        let (mut stats, mut plmm) = (PauseStats::new(), Plmm::new());
        record_pause(&mut stats, &mut plmm, A, B, 600).unwrap();
        assert_eq!(plmm_retention(&plmm, A, 100, 1500.0), RetentionDecision::DROP);

        let (mut stats, mut plmm) = (PauseStats::new(), Plmm::new());
        record_pause(&mut stats, &mut plmm, A, A, 3000).unwrap();
        assert_eq!(plmm_retention(&plmm, A, 100, 1500.0), RetentionDecision::DROP);
    }
}
