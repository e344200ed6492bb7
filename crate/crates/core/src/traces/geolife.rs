use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{parse_plt, GeoPoint, TraceError};
use crate::Error;

/// All trajectory files of one GeoLife user.
#[derive(Debug)]
pub struct GeoLifeUser {
    pub client_id: String,
    pub files: Vec<Vec<GeoPoint>>,
}

/// Loads `Data/<user>/Trajectory/*.plt`. `root` may point at the dataset
/// root or at its `Data` directory. Users are returned sorted by id.
pub fn load_geolife(root: &Path) -> Result<Vec<GeoLifeUser>, Error> {
    let data = if root.join("Data").is_dir() {
        root.join("Data")
    } else {
        root.to_path_buf()
    };
    if !data.is_dir() {
        return Err(Error::MissingDataset {
            path: root.to_path_buf(),
            hint: "download the GeoLife Trajectories 1.3 archive and point `trace.path` at the extracted \
                   directory containing Data/<user>/Trajectory/*.plt"
                .into(),
        });
    }
    let mut users: Vec<(String, PathBuf)> = fs::read_dir(&data)
        .map_err(|e| Error::io(&data, e))?
        .filter_map(Result::ok)
        .map(|entry| entry.path())
        .filter(|p| p.join("Trajectory").is_dir())
        .filter_map(|p| Some((p.file_name()?.to_string_lossy().into_owned(), p)))
        .collect();
    users.sort();
    if users.is_empty() {
        return Err(Error::MissingDataset {
            path: root.to_path_buf(),
            hint: "no <user>/Trajectory directories found".into(),
        });
    }

    users
        .into_par_iter()
        .map(|(client_id, dir)| {
            let traj = dir.join("Trajectory");
            let mut paths: Vec<PathBuf> = fs::read_dir(&traj)
                .map_err(|e| Error::io(&traj, e))?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("plt")))
                .collect();
            paths.sort();
            let mut files = Vec::with_capacity(paths.len());
            for path in paths {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                match parse_plt(&bytes) {
                    Ok(points) => files.push(points),
                    Err(TraceError::EmptyTrace) => log::warn!("{}: no data rows, skipped", path.display()),
                    Err(TraceError::Record { line, message }) => {
                        return Err(Error::Trace(TraceError::Record {
                            line,
                            message: format!("{}: {message}", path.display()),
                        }))
                    }
                    Err(other) => return Err(other.into()),
                }
            }
            Ok(GeoLifeUser { client_id, files })
        })
        .collect()
}
