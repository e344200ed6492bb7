use serde::{Deserialize, Serialize};

use super::{GeoPoint, Session, TraceError};
use crate::Timestamp;

/// Intra-file gap above which a trajectory is split into two sessions.
pub const DEFAULT_GAP_THRESHOLD_S: i64 = 300;

/// What to do when two trajectory files of one client overlap in time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapPolicy {
    /// Fail with [`TraceError::Overlap`].
    #[default]
    Error,
    /// Drop points of the later file that do not come after the earlier
    /// file's end.
    Trim,
}

/// Sessions of one client, in time order, with the gaps between them.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionizedTrace {
    pub client_id: String,
    pub sessions: Vec<Session>,
}

impl SessionizedTrace {
    /// `(start, end)` of every pause between consecutive sessions.
    pub fn pauses(&self) -> Vec<(Timestamp, Timestamp)> {
        self.sessions.windows(2).map(|w| (w[0].end, w[1].start)).collect()
    }
}

/// Splits one client's trajectory files into sessions.
///
/// Every file is one session, further split wherever two consecutive points
/// are more than `gap_threshold` seconds apart. Files that touch exactly are
/// merged, since a pause must have positive length.
pub fn sessionize(
    client_id: &str,
    files: Vec<Vec<GeoPoint>>,
    gap_threshold: i64,
    overlap: OverlapPolicy,
) -> Result<SessionizedTrace, TraceError> {
    if gap_threshold <= 0 {
        return Err(TraceError::Spec(format!("gap threshold must be positive, got {gap_threshold}")));
    }
    let mut files: Vec<Vec<GeoPoint>> = files
        .into_iter()
        .filter(|f| !f.is_empty())
        .map(|mut f| {
            f.sort_by_key(|p| p.t);
            f
        })
        .collect();
    files.sort_by_key(|f| (f[0].t, f[f.len() - 1].t));

    let mut kept: Vec<Vec<GeoPoint>> = Vec::with_capacity(files.len());
    let mut overlaps = Vec::new();
    for file in files {
        let window = (file[0].t, file[file.len() - 1].t);
        let Some(prev) = kept.last_mut() else {
            kept.push(file);
            continue;
        };
        let prev_window = (prev[0].t, prev[prev.len() - 1].t);
        if window.0 < prev_window.1 {
            match overlap {
                OverlapPolicy::Error => overlaps.push((prev_window, window)),
                OverlapPolicy::Trim => {
                    let rest: Vec<GeoPoint> = file.into_iter().filter(|p| p.t > prev_window.1).collect();
                    if !rest.is_empty() {
                        kept.push(rest);
                    }
                }
            }
        } else if window.0 == prev_window.1 {
            prev.extend(file);
        } else {
            kept.push(file);
        }
    }
    if !overlaps.is_empty() {
        return Err(TraceError::Overlap {
            client: client_id.to_string(),
            pairs: overlaps,
        });
    }

    let mut sessions = Vec::new();
    for file in kept {
        let mut current: Vec<GeoPoint> = Vec::new();
        for p in file {
            if let Some(last) = current.last() {
                if p.t - last.t > gap_threshold {
                    sessions.push(Session::from_points(client_id, std::mem::take(&mut current)));
                }
            }
            current.push(p);
        }
        sessions.push(Session::from_points(client_id, current));
    }
    Ok(SessionizedTrace {
        client_id: client_id.to_string(),
        sessions,
    })
}
