use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bucket::{DaySplit, TimeSplit};
use super::table::{SubModel, SubModelSpec};
use super::{MarkovError, Prediction, PredictionSet, Target};
use crate::topology::NodeId;
use crate::traces::NodeVisit;
use crate::Timestamp;

/// Which predictor to build, as written in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PredictorKind {
    Momm {
        k: usize,
    },
    Vomm {
        k_max: usize,
        #[serde(default = "day_one")]
        day_split: DaySplit,
        #[serde(default = "time_one")]
        time_split: TimeSplit,
    },
    Fomm {
        k_max: usize,
        #[serde(default = "all_days")]
        day_splits: Vec<DaySplit>,
        #[serde(default = "all_times")]
        time_splits: Vec<TimeSplit>,
    },
}

fn day_one() -> DaySplit {
    DaySplit::One
}

fn time_one() -> TimeSplit {
    TimeSplit::One
}

fn all_days() -> Vec<DaySplit> {
    vec![DaySplit::One, DaySplit::Two, DaySplit::Seven]
}

fn all_times() -> Vec<TimeSplit> {
    vec![TimeSplit::One, TimeSplit::Four, TimeSplit::TwentyFour]
}

impl PredictorKind {
    pub fn vomm(k_max: usize) -> Self {
        PredictorKind::Vomm {
            k_max,
            day_split: DaySplit::One,
            time_split: TimeSplit::One,
        }
    }

    pub fn fomm(k_max: usize) -> Self {
        PredictorKind::Fomm {
            k_max,
            day_splits: all_days(),
            time_splits: all_times(),
        }
    }
}

/// Default fusion weight: more specific tables weigh more.
pub fn default_weight(order: usize, day: DaySplit, time: TimeSplit) -> f64 {
    (order * day.groups() as usize * time.groups() as usize) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Mode {
    Fixed,
    Variable,
    Fusion,
}

/// One client's predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovModel {
    pub(crate) mode: Mode,
    pub(crate) submodels: Vec<SubModel>,
    pub(crate) end_of_trip: bool,
    pub(crate) utc_offset_s: i64,
}

impl MarkovModel {
    pub fn new(kind: &PredictorKind, end_of_trip: bool, utc_offset_s: i64) -> Result<Self, MarkovError> {
        let spec = |order, day_split, time_split| SubModelSpec {
            order,
            day_split,
            time_split,
            weight: default_weight(order, day_split, time_split),
        };
        let (mode, specs): (Mode, Vec<SubModelSpec>) = match kind {
            PredictorKind::Momm { k } => (Mode::Fixed, vec![spec(*k, DaySplit::One, TimeSplit::One)]),
            PredictorKind::Vomm {
                k_max,
                day_split,
                time_split,
            } => (
                Mode::Variable,
                (1..=*k_max).map(|k| spec(k, *day_split, *time_split)).collect(),
            ),
            PredictorKind::Fomm {
                k_max,
                day_splits,
                time_splits,
            } => {
                let mut days = day_splits.clone();
                days.sort();
                days.dedup();
                let mut times = time_splits.clone();
                times.sort();
                times.dedup();
                if days.is_empty() || times.is_empty() {
                    return Err(MarkovError::Config("FOMM needs at least one day and one time split".into()));
                }
                let mut specs = Vec::new();
                for k in 1..=*k_max {
                    for &d in &days {
                        for &t in &times {
                            specs.push(spec(k, d, t));
                        }
                    }
                }
                (Mode::Fusion, specs)
            }
        };
        if specs.is_empty() {
            return Err(MarkovError::Config("history size must be at least 1".into()));
        }
        Self::from_parts(mode, specs, end_of_trip, utc_offset_s)
    }

    /// A fusion model over explicitly weighted tables.
    pub fn fusion(specs: Vec<SubModelSpec>, end_of_trip: bool, utc_offset_s: i64) -> Result<Self, MarkovError> {
        Self::from_parts(Mode::Fusion, specs, end_of_trip, utc_offset_s)
    }

    pub(crate) fn from_parts(
        mode: Mode,
        specs: Vec<SubModelSpec>,
        end_of_trip: bool,
        utc_offset_s: i64,
    ) -> Result<Self, MarkovError> {
        if specs.is_empty() {
            return Err(MarkovError::Config("a model needs at least one table".into()));
        }
        for spec in &specs {
            spec.validate()?;
        }
        Ok(MarkovModel {
            mode,
            submodels: specs.into_iter().map(SubModel::new).collect(),
            end_of_trip,
            utc_offset_s,
        })
    }

    pub fn submodels(&self) -> &[SubModel] {
        &self.submodels
    }

    pub fn submodels_mut(&mut self) -> &mut [SubModel] {
        &mut self.submodels
    }

    pub fn end_of_trip(&self) -> bool {
        self.end_of_trip
    }

    pub fn max_order(&self) -> usize {
        self.submodels.iter().map(|s| s.spec.order).max().unwrap_or(0)
    }

    /// Trains every table on a completed trip.
    pub fn train_session(&mut self, visits: &[NodeVisit], trip_start: Timestamp) {
        if visits.is_empty() {
            return;
        }
        let local = trip_start + self.utc_offset_s;
        for sub in &mut self.submodels {
            sub.train_session(visits, local, self.end_of_trip);
        }
    }

    /// Successor distribution for a trip that visited `history` so far and
    /// started at `trip_start`.
    pub fn predict(&self, history: &[NodeId], trip_start: Timestamp) -> Option<PredictionSet> {
        let local = trip_start + self.utc_offset_s;
        match self.mode {
            Mode::Fixed => self.submodels[0].predict(history, local),
            Mode::Variable => {
                let mut by_order: Vec<&SubModel> = self.submodels.iter().collect();
                by_order.sort_by(|a, b| b.spec.order.cmp(&a.spec.order));
                by_order.into_iter().find_map(|sub| sub.predict(history, local))
            }
            Mode::Fusion => fuse(
                self.submodels
                    .iter()
                    .filter_map(|sub| sub.predict(history, local).map(|set| (sub.spec.weight, set))),
            ),
        }
    }

    /// Size of the canonical table encoding in bytes: per context two bytes
    /// per history node and two per bucket, then 20 bytes per target.
    pub fn memory_bytes(&self) -> usize {
        self.submodels
            .iter()
            .flat_map(|sub| sub.table.entries())
            .map(|(key, targets)| 2 * key.history.len() + 4 + 20 * targets.len())
            .sum()
    }
}

/// Weighted fusion: sums `weight * probability` per target over all
/// contributing distributions and renormalizes. Expected stays are averaged
/// with the same weights over the contributions that report one.
pub fn fuse<I>(contributions: I) -> Option<PredictionSet>
where
    I: IntoIterator<Item = (f64, PredictionSet)>,
{
    #[derive(Default)]
    struct Acc {
        mass: f64,
        stay_weighted: f64,
        stay_weight: f64,
    }
    let mut acc: BTreeMap<Target, Acc> = BTreeMap::new();
    for (weight, set) in contributions {
        for p in set.as_slice() {
            let entry = acc.entry(p.target).or_default();
            entry.mass += weight * p.probability;
            if let Some(stay) = p.expected_stay {
                entry.stay_weighted += weight * stay;
                entry.stay_weight += weight;
            }
        }
    }
    let total: f64 = acc.values().map(|a| a.mass).sum();
    if acc.is_empty() || total <= 0.0 {
        return None;
    }
    Some(PredictionSet::new(
        acc.into_iter()
            .map(|(target, a)| Prediction {
                target,
                probability: a.mass / total,
                expected_stay: (a.stay_weight > 0.0).then(|| a.stay_weighted / a.stay_weight),
            })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::table::TransitionTable;

    const A: NodeId = NodeId(0);
    const B: NodeId = NodeId(1);
    const C: NodeId = NodeId(2);

    fn set(entries: &[(Target, f64)]) -> PredictionSet {
        PredictionSet::new(
            entries
                .iter()
                .map(|&(target, probability)| Prediction {
                    target,
                    probability,
                    expected_stay: None,
                })
                .collect(),
        )
    }

    #[test]
    fn lone_weight_cancels() {
        let fused = fuse([(3.0, set(&[(Target::Node(B), 0.5), (Target::Node(C), 0.5)]))]).unwrap();
        assert_eq!(fused, set(&[(Target::Node(B), 0.5), (Target::Node(C), 0.5)]));
    }

    #[test]
    fn two_weighted_tables() {
        // raw mass {B: 1*0.5 + 2*1.0, C: 1*0.5} = {2.5, 0.5}, total 3
        let fused = fuse([
            (1.0, set(&[(Target::Node(B), 0.5), (Target::Node(C), 0.5)])),
            (2.0, set(&[(Target::Node(B), 1.0)])),
        ])
        .unwrap();
        assert!((fused.probability(Target::Node(B)) - 5.0 / 6.0).abs() < 1e-12);
        assert!((fused.probability(Target::Node(C)) - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn nothing_to_fuse() {
        assert!(fuse(std::iter::empty()).is_none());
        let model = MarkovModel::new(&PredictorKind::fomm(2), true, 0).unwrap();
        assert!(model.predict(&[A], 0).is_none());
        assert_eq!(model.memory_bytes(), 0);
    }

    #[test]
    fn fused_stay_is_weighted_mean() {
        let with_stay = |stay| {
            PredictionSet::new(vec![Prediction {
                target: Target::Node(B),
                probability: 1.0,
                expected_stay: Some(stay),
            }])
        };
        let fused = fuse([(1.0, with_stay(100.0)), (3.0, with_stay(500.0))]).unwrap();
        assert_eq!(fused.get(Target::Node(B)).unwrap().expected_stay, Some(400.0));
    }

    #[test]
    fn fomm_has_cartesian_product_of_tables() {
        let model = MarkovModel::new(
            &PredictorKind::Fomm {
                k_max: 2,
                day_splits: vec![DaySplit::Two, DaySplit::Seven],
                time_splits: vec![TimeSplit::Four, TimeSplit::TwentyFour],
            },
            false,
            0,
        )
        .unwrap();
        assert_eq!(model.submodels().len(), 8);
        let heaviest = model.submodels().iter().map(|s| s.spec.weight).fold(0.0, f64::max);
        assert_eq!(heaviest, 2.0 * 7.0 * 24.0);
    }

    #[test]
    fn vomm_prefers_highest_order_hit() {
        let mut model = MarkovModel::new(&PredictorKind::vomm(2), false, 0).unwrap();
        // A B C then X B A: order 1 at [B] is split, order 2 at [A, B] is certain
        model.train_session(&[NodeVisit::new(A, 0, 10), NodeVisit::new(B, 10, 20), NodeVisit::new(C, 20, 30)], 0);
        model.train_session(&[NodeVisit::new(NodeId(9), 0, 10), NodeVisit::new(B, 10, 20), NodeVisit::new(A, 20, 30)], 0);
        let p = model.predict(&[A, B], 0).unwrap();
        assert_eq!(p.probability(Target::Node(C)), 1.0);
        // unseen order-2 context falls back to order 1
        let p = model.predict(&[NodeId(5), B], 0).unwrap();
        assert_eq!(p.probability(Target::Node(C)), 0.5);
        assert!(model.predict(&[NodeId(5), NodeId(6)], 0).is_none());
    }

    #[test]
    fn momm_needs_full_history() {
        let mut model = MarkovModel::new(&PredictorKind::Momm { k: 2 }, false, 0).unwrap();
        model.train_session(&[NodeVisit::new(A, 0, 10), NodeVisit::new(B, 10, 20), NodeVisit::new(C, 20, 30)], 0);
        assert!(model.predict(&[B], 0).is_none());
        assert_eq!(model.predict(&[A, B], 0).unwrap().probability(Target::Node(C)), 1.0);
    }

    #[test]
    fn memory_of_one_entry() {
        let mut model = MarkovModel::new(&PredictorKind::Momm { k: 1 }, false, 0).unwrap();
        model.train_session(&[NodeVisit::new(A, 0, 600), NodeVisit::new(B, 600, 900)], 0);
        assert_eq!(model.memory_bytes(), 2 + 4 + (4 + 4 + 8 + 4));
    }

    #[test]
    fn table_prediction_matches_momm() {
        let mut table = TransitionTable::new();
        table.record(
            crate::markov::ContextKey {
                history: vec![A],
                day_bucket: 0,
                time_bucket: 0,
            },
            Target::Node(B),
            Some(1.0),
        );
        assert!(table.predict(&[A], 0, 0).is_some());
    }
}
