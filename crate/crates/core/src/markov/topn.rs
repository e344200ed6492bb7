use serde::{Deserialize, Serialize};

use super::{MarkovError, PredictionSet, Target};

/// How many predicted targets to act on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopN {
    /// The `n` most probable targets.
    Fixed(usize),
    /// The shortest ranked prefix whose cumulative probability reaches the
    /// threshold.
    Dynamic(f64),
}

impl TopN {
    pub fn validate(&self) -> Result<(), MarkovError> {
        match *self {
            TopN::Fixed(0) => Err(MarkovError::Config("fixed topN must be at least 1".into())),
            TopN::Dynamic(th) if !(th > 0.0 && th <= 1.0) => Err(MarkovError::Config(format!(
                "dynamic topN threshold must be in (0, 1], got {th}"
            ))),
            _ => Ok(()),
        }
    }
}

const CUMULATIVE_EPS: f64 = 1e-12;

/// Selects targets in rank order. When `count_eot` is false, EoT is neither
/// selected nor counted towards a dynamic threshold.
pub fn dynamic_topn(preds: &PredictionSet, topn: TopN, count_eot: bool) -> Result<Vec<Target>, MarkovError> {
    topn.validate()?;
    let ranked = preds
        .ranked()
        .into_iter()
        .filter(|p| count_eot || p.target != Target::EoT);
    let selected = match topn {
        TopN::Fixed(n) => ranked.take(n).map(|p| p.target).collect(),
        TopN::Dynamic(threshold) => {
            let mut selected = Vec::new();
            let mut cumulative = 0.0;
            for p in ranked {
                if p.probability <= 0.0 {
                    break;
                }
                selected.push(p.target);
                cumulative += p.probability;
                if cumulative >= threshold - CUMULATIVE_EPS {
                    break;
                }
            }
            selected
        }
    };
    Ok(selected)
}
