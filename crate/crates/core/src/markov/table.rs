use std::collections::HashMap;

use super::bucket::{bucketize, DaySplit, TimeSplit};
use super::{MarkovError, Prediction, PredictionSet, Target};
use crate::topology::NodeId;
use crate::traces::NodeVisit;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextKey {
    pub history: Vec<NodeId>,
    pub day_bucket: u8,
    pub time_bucket: u8,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Record {
    pub count: u32,
    pub stay_sum: f64,
    pub stay_count: u32,
}

impl Record {
    pub fn mean_stay(&self) -> Option<f64> {
        (self.stay_count > 0).then(|| self.stay_sum / self.stay_count as f64)
    }
}

/// Transition counts for one fixed history length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionTable {
    entries: HashMap<ContextKey, Vec<(Target, Record)>>,
}

impl TransitionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds one observed transition. `stay` is the time spent at the last
    /// history node before the transition.
    pub fn record(&mut self, key: ContextKey, target: Target, stay: Option<f64>) {
        let targets = self.entries.entry(key).or_default();
        let i = match targets.binary_search_by_key(&target, |(t, _)| *t) {
            Ok(i) => i,
            Err(i) => {
                targets.insert(i, (target, Record::default()));
                i
            }
        };
        let record = &mut targets[i].1;
        record.count += 1;
        if let Some(stay) = stay {
            record.stay_sum += stay;
            record.stay_count += 1;
        }
    }

    pub fn get(&self, key: &ContextKey) -> Option<&[(Target, Record)]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    /// Fixed-order prediction: the empirical successor distribution of the
    /// context, or `None` if the context was never seen.
    pub fn predict(&self, history: &[NodeId], day_bucket: u8, time_bucket: u8) -> Option<PredictionSet> {
        let key = ContextKey {
            history: history.to_vec(),
            day_bucket,
            time_bucket,
        };
        let targets = self.entries.get(&key)?;
        let total: u32 = targets.iter().map(|(_, r)| r.count).sum();
        Some(PredictionSet::new(
            targets
                .iter()
                .map(|(target, record)| Prediction {
                    target: *target,
                    probability: record.count as f64 / total as f64,
                    expected_stay: record.mean_stay(),
                })
                .collect(),
        ))
    }

    /// Entries in canonical order: contexts ascending, targets ascending.
    pub fn sorted_entries(&self) -> Vec<(&ContextKey, Vec<(Target, Record)>)> {
        let mut entries: Vec<_> = self
            .entries
            .iter()
            .map(|(k, v)| {
                let mut targets = v.clone();
                targets.sort_by_key(|(t, _)| *t);
                (k, targets)
            })
            .collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        entries
    }

    pub(crate) fn insert_raw(&mut self, key: ContextKey, targets: Vec<(Target, Record)>) {
        self.entries.insert(key, targets);
    }

    pub(crate) fn entries(&self) -> impl Iterator<Item = (&ContextKey, &Vec<(Target, Record)>)> {
        self.entries.iter()
    }
}

/// Order, time discretization and fusion weight of one table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubModelSpec {
    pub order: usize,
    pub day_split: DaySplit,
    pub time_split: TimeSplit,
    pub weight: f64,
}

impl SubModelSpec {
    pub fn validate(&self) -> Result<(), MarkovError> {
        if self.order == 0 || self.order > u8::MAX as usize {
            return Err(MarkovError::Config(format!("order must be in 1..=255, got {}", self.order)));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(MarkovError::Config(format!("weight must be positive, got {}", self.weight)));
        }
        Ok(())
    }

    pub fn buckets(&self, local_trip_start: i64) -> (u8, u8) {
        bucketize(local_trip_start, self.day_split, self.time_split)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubModel {
    pub spec: SubModelSpec,
    pub table: TransitionTable,
}

impl SubModel {
    pub fn new(spec: SubModelSpec) -> Self {
        SubModel {
            spec,
            table: TransitionTable::new(),
        }
    }

    /// Records every transition of a completed trip. Contexts are the `order`
    /// nodes before each visit, bucketed by the trip's local start time. With
    /// `end_of_trip`, the final `order` nodes also record an EoT transition.
    pub fn train_session(&mut self, visits: &[NodeVisit], local_trip_start: i64, end_of_trip: bool) {
        let k = self.spec.order;
        let (day_bucket, time_bucket) = self.spec.buckets(local_trip_start);
        let nodes: Vec<NodeId> = visits.iter().map(|v| v.node).collect();
        for i in k..nodes.len() {
            let key = ContextKey {
                history: nodes[i - k..i].to_vec(),
                day_bucket,
                time_bucket,
            };
            let stay = visits[i - 1].duration() as f64;
            self.table.record(key, Target::Node(nodes[i]), Some(stay));
        }
        if end_of_trip && nodes.len() >= k {
            let key = ContextKey {
                history: nodes[nodes.len() - k..].to_vec(),
                day_bucket,
                time_bucket,
            };
            self.table.record(key, Target::EoT, None);
        }
    }

    /// Prediction from the last `order` nodes of `history`; `None` when the
    /// history is shorter than the order or the context is unknown.
    pub fn predict(&self, history: &[NodeId], local_trip_start: i64) -> Option<PredictionSet> {
        let k = self.spec.order;
        if history.len() < k {
            return None;
        }
        let (day_bucket, time_bucket) = self.spec.buckets(local_trip_start);
        self.table.predict(&history[history.len() - k..], day_bucket, time_bucket)
    }
}
