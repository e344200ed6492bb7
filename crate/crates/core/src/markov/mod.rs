//! Client-side Markov predictors over node-visit sequences.
//!
//! Three predictors share one transition-table representation:
//!
//! * MOMM: a single table of fixed order `k`.
//! * VOMM: tables of orders `1..=k_max`, queried from the highest order
//!   down until one has seen the context.
//! * FOMM: the cartesian product of orders, day-of-week splits and
//!   time-of-day splits. Every table that knows the context contributes its
//!   distribution scaled by the table's weight; the sum is renormalized.
//!
//! Contexts are bucketed by the local start time of the trip. Tables can
//! also learn an End-of-Trip target and record the mean stay at the current
//! node before each transition.

mod bucket;
mod codec;
mod model;
mod table;
mod topn;

use std::cmp::Ordering;

use thiserror::Error;

use crate::topology::NodeId;

pub use bucket::{bucketize, DaySplit, TimeSplit};
pub use codec::{decode_model, encode_model, encode_tables};
pub use model::{default_weight, fuse, MarkovModel, PredictorKind};
pub use table::{ContextKey, Record, SubModel, SubModelSpec, TransitionTable};
pub use topn::{dynamic_topn, TopN};

#[derive(Debug, Error, PartialEq)]
pub enum MarkovError {
    #[error("invalid predictor config: {0}")]
    Config(String),
    #[error("model encoding: {0}")]
    Codec(String),
}

/// Successor state of a transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Node(NodeId),
    /// The trip ends at the current node.
    EoT,
}

impl Target {
    pub fn node(self) -> Option<NodeId> {
        match self {
            Target::Node(n) => Some(n),
            Target::EoT => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub target: Target,
    pub probability: f64,
    /// Mean stay at the current node before moving to `target`, seconds.
    pub expected_stay: Option<f64>,
}

/// A normalized distribution over successor targets, sorted by target.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionSet(Vec<Prediction>);

impl PredictionSet {
    /// Wraps predictions, sorting them by target.
    pub fn new(mut predictions: Vec<Prediction>) -> Self {
        predictions.sort_by_key(|p| p.target);
        PredictionSet(predictions)
    }

    pub fn as_slice(&self) -> &[Prediction] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, target: Target) -> Option<&Prediction> {
        self.0
            .binary_search_by_key(&target, |p| p.target)
            .ok()
            .map(|i| &self.0[i])
    }

    pub fn probability(&self, target: Target) -> f64 {
        self.get(target).map_or(0.0, |p| p.probability)
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|p| p.probability).sum()
    }

    /// Predictions by descending probability; ties by ascending node id with
    /// EoT last.
    pub fn ranked(&self) -> Vec<Prediction> {
        let mut ranked = self.0.clone();
        ranked.sort_by(rank_order);
        ranked
    }

    pub fn top(&self) -> Option<Prediction> {
        self.0.iter().copied().min_by(rank_order)
    }
}

fn rank_order(a: &Prediction, b: &Prediction) -> Ordering {
    b.probability
        .partial_cmp(&a.probability)
        .unwrap_or(Ordering::Equal)
        .then(a.target.cmp(&b.target))
}
