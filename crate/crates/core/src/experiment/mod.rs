//! Declarative experiments: one TOML file names a trace source, a list of
//! topologies and a list of policies; every (topology, policy) pair is a
//! sweep point that is simulated and measured independently.
//!
//! ```toml
//! name = "smoke"
//! seed = 7
//!
//! [trace]
//! source = "synthetic"
//! spec = "synth/commuter.toml"
//!
//! [[topology]]
//! name = "grid-2x2"
//! rows = 2
//! cols = 2
//! network = { model = "fixed_delay", delay_s = 300 }
//!
//! [[policy]]
//! name = "baseline"
//!
//! [[policy]]
//! name = "vomm"
//! predictor = { kind = "vomm", k_max = 2 }
//! ```
//!
//! Relative paths are resolved against the config file's directory.

mod output;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::metrics::{self, MetricsReport, SeriesPoint};
use crate::policies::PolicyConfig;
use crate::simengine::{self, RunOptions};
use crate::topology::{build_complex_network, build_grid, BBox, NetworkModel, Neighborhood, Topology};
use crate::traces::synth::{synth_generate, SynthSpec};
use crate::traces::{
    build_timeline, load_geolife, read_visits_csv, sessionize, write_visits_csv, ClientTimeline, OverlapPolicy,
    SessionizedTrace, DEFAULT_GAP_THRESHOLD_S,
};
use crate::{Error, DEFAULT_UTC_OFFSET_S};

pub use output::{merge_results, render_pareto_svg, write_clients_csv, write_results_csv, ResultRow};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_offset")]
    pub utc_offset_s: i64,
    pub trace: TraceSource,
    #[serde(rename = "topology")]
    pub topologies: Vec<TopologyConfig>,
    #[serde(rename = "policy")]
    pub policies: Vec<PolicyConfig>,
    #[serde(default)]
    pub metrics: MetricsOptions,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_offset() -> i64 {
    DEFAULT_UTC_OFFSET_S
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSource {
    /// Weekly schedule file, see [`crate::traces::synth`].
    Synthetic { spec: PathBuf },
    /// GeoLife dataset directory.
    Geolife {
        path: PathBuf,
        #[serde(default = "default_gap")]
        gap_threshold_s: i64,
        #[serde(default = "default_overlap")]
        overlap: OverlapPolicy,
        /// Use only the first `max_users` users (sorted by id).
        #[serde(default)]
        max_users: Option<usize>,
    },
    /// Visit CSV written by `ingest`; node ids must match every topology.
    Visits { path: PathBuf },
}

fn default_gap() -> i64 {
    DEFAULT_GAP_THRESHOLD_S
}

fn default_overlap() -> OverlapPolicy {
    OverlapPolicy::Trim
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    #[default]
    Simple,
    Complex,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkConfig {
    FixedDelay { delay_s: f64 },
    FlowGraph {
        #[serde(default = "default_data_size")]
        data_size_bytes: f64,
    },
}

fn default_data_size() -> f64 {
    1e9
}

impl From<NetworkConfig> for NetworkModel {
    fn from(c: NetworkConfig) -> Self {
        match c {
            NetworkConfig::FixedDelay { delay_s } => NetworkModel::FixedDelay { delay_s },
            NetworkConfig::FlowGraph { data_size_bytes } => NetworkModel::FlowGraph {
                data_size_bits: data_size_bytes * 8.0,
            },
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub kind: TopologyKind,
    pub rows: u32,
    pub cols: u32,
    #[serde(default)]
    pub bbox: BBox,
    #[serde(default)]
    pub neighborhood: Neighborhood,
    #[serde(default = "default_edge_rate")]
    pub edge_rate_bps: f64,
    #[serde(default = "default_uplink_rate")]
    pub uplink_rate_bps: f64,
    pub network: NetworkConfig,
}

fn default_edge_rate() -> f64 {
    40e6
}

fn default_uplink_rate() -> f64 {
    800e6
}

impl TopologyConfig {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let kind = match self.kind {
                TopologyKind::Simple => "simple",
                TopologyKind::Complex => "complex",
            };
            format!("{kind}-{}x{}", self.rows, self.cols)
        })
    }

    pub fn build(&self) -> Result<Topology, Error> {
        let bbox = BBox::new(self.bbox.lat_min, self.bbox.lat_max, self.bbox.lon_min, self.bbox.lon_max)?;
        Ok(match self.kind {
            TopologyKind::Simple => build_grid(self.rows, self.cols, bbox)?,
            TopologyKind::Complex => build_complex_network(
                self.rows,
                self.cols,
                bbox,
                self.edge_rate_bps,
                self.uplink_rate_bps,
                self.neighborhood,
            )?,
        })
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsOptions {
    /// Width of availability-series buckets, seconds.
    #[serde(default = "default_bucket")]
    pub series_bucket_s: i64,
    /// Clients to write series for; `"*"` selects all.
    #[serde(default = "all_clients")]
    pub series_clients: Vec<String>,
    /// Activity before `first activity + warmup_s` is excluded from the
    /// after-warm-up availability column.
    #[serde(default = "default_warmup")]
    pub warmup_s: i64,
    #[serde(default = "yes")]
    pub pareto_svg: bool,
}

fn default_bucket() -> i64 {
    86_400
}

fn all_clients() -> Vec<String> {
    vec!["*".into()]
}

fn default_warmup() -> i64 {
    7 * 86_400
}

fn yes() -> bool {
    true
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            series_bucket_s: default_bucket(),
            series_clients: all_clients(),
            warmup_s: default_warmup(),
            pareto_svg: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|message| Error::ConfigFile {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.trace.resolve(base);
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        if self.topologies.is_empty() {
            return Err("`topology`: at least one topology is required".into());
        }
        if self.policies.is_empty() {
            return Err("`policy`: at least one policy is required".into());
        }
        let mut names = BTreeSet::new();
        for policy in &self.policies {
            if !names.insert(policy.name.as_str()) {
                return Err(format!("`policy.name`: duplicate policy name {:?}", policy.name));
            }
            policy
                .validate()
                .map_err(|e| format!("policy {:?}: {e}", policy.name))?;
        }
        let mut labels = BTreeSet::new();
        for topology in &self.topologies {
            if !labels.insert(topology.label()) {
                return Err(format!("`topology.name`: duplicate topology {:?}", topology.label()));
            }
            NetworkModel::from(topology.network)
                .validate()
                .map_err(|e| format!("topology {:?}: {e}", topology.label()))?;
        }
        if self.metrics.series_bucket_s <= 0 {
            return Err("`metrics.series_bucket_s` must be positive".into());
        }
        Ok(())
    }
}

impl TraceSource {
    fn resolve(&mut self, base: &Path) {
        let path = match self {
            TraceSource::Synthetic { spec } => spec,
            TraceSource::Geolife { path, .. } | TraceSource::Visits { path } => path,
        };
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

/// Traces loaded once and mapped onto each topology on demand.
pub enum LoadedTraces {
    /// Node-level timelines, valid for every topology.
    Fixed(Vec<ClientTimeline>),
    /// GPS sessions that still need nearest-node mapping.
    Gps(Vec<SessionizedTrace>),
}

impl LoadedTraces {
    pub fn load(source: &TraceSource, seed: u64) -> Result<Self, Error> {
        match source {
            TraceSource::Synthetic { spec } => {
                let text = fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
                let spec_data = SynthSpec::from_toml(&text).map_err(|e| Error::ConfigFile {
                    path: spec.clone(),
                    message: e.to_string(),
                })?;
                Ok(LoadedTraces::Fixed(synth_generate(&spec_data, Some(seed))?))
            }
            TraceSource::Visits { path } => {
                let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
                Ok(LoadedTraces::Fixed(read_visits_csv(file)?))
            }
            TraceSource::Geolife {
                path,
                gap_threshold_s,
                overlap,
                max_users,
            } => {
                let mut users = load_geolife(path)?;
                if let Some(max) = max_users {
                    users.truncate(*max);
                }
                let traces = users
                    .into_par_iter()
                    .map(|u| sessionize(&u.client_id, u.files, *gap_threshold_s, *overlap))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(LoadedTraces::Gps(traces))
            }
        }
    }

    pub fn timelines(&self, topology: &Topology) -> Result<Vec<ClientTimeline>, Error> {
        match self {
            LoadedTraces::Fixed(t) => Ok(t.clone()),
            LoadedTraces::Gps(traces) => Ok(traces
                .par_iter()
                .map(|t| build_timeline(t, topology))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .filter(|t| !t.is_empty())
                .collect()),
        }
    }
}

/// Outcome of one (topology, policy) sweep point.
#[derive(Clone, Debug)]
pub struct PointResult {
    pub topology: String,
    pub policy: String,
    pub report: MetricsReport,
    pub availability_after_warmup: Option<f64>,
    pub transfers: u64,
    pub series: Vec<(String, Vec<SeriesPoint>)>,
}

impl PointResult {
    pub fn row(&self) -> ResultRow {
        ResultRow {
            topology: self.topology.clone(),
            policy: self.policy.clone(),
            availability: self.report.availability,
            excess: self.report.excess_ratio,
            memory_avg_bytes: self.report.memory_avg,
            memory_max_bytes: self.report.memory_max,
            availability_after_warmup: self.availability_after_warmup,
            transfers: self.transfers,
        }
    }
}

/// Runs every sweep point, at most `jobs` at a time.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<Vec<PointResult>, Error> {
    let traces = LoadedTraces::load(&config.trace, config.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut results = Vec::new();
        for topo_config in &config.topologies {
            let topology = topo_config.build()?;
            let network = NetworkModel::from(topo_config.network);
            let timelines = traces.timelines(&topology)?;
            log::info!(
                "topology {}: {} clients, {} edge nodes",
                topo_config.label(),
                timelines.len(),
                topology.edge_count()
            );
            let points = config
                .policies
                .par_iter()
                .map(|policy| run_point(config, topo_config, &topology, &network, &timelines, policy))
                .collect::<Result<Vec<_>, _>>()?;
            results.extend(points);
        }
        Ok(results)
    })
}

fn run_point(
    config: &ExperimentConfig,
    topo_config: &TopologyConfig,
    topology: &Topology,
    network: &NetworkModel,
    timelines: &[ClientTimeline],
    policy: &PolicyConfig,
) -> Result<PointResult, Error> {
    let options = RunOptions {
        parallel: true,
        record_log: false,
        utc_offset_s: config.utc_offset_s,
    };
    let out = simengine::run(timelines, topology, network, policy, &options)?;
    let cloud = topology.cloud();
    let report = metrics::report(&out.ledger, timelines, cloud)?;
    let first = timelines.iter().filter_map(ClientTimeline::first_t).min();
    let availability_after_warmup = first.and_then(|first| {
        metrics::availability_window(&out.ledger, timelines, first + config.metrics.warmup_s, i64::MAX).ok()
    });
    let all = config.metrics.series_clients.iter().any(|c| c == "*");
    let mut series = Vec::new();
    for (tl, cl) in timelines.iter().zip(&out.ledger.clients) {
        if all || config.metrics.series_clients.contains(&tl.client_id) {
            series.push((
                tl.client_id.clone(),
                metrics::availability_series(tl, cl, config.metrics.series_bucket_s)?,
            ));
        }
    }
    log::info!(
        "{} / {}: availability {:.4}, excess {:.4}",
        topo_config.label(),
        policy.name,
        report.availability,
        report.excess_ratio
    );
    Ok(PointResult {
        topology: topo_config.label(),
        policy: policy.name.clone(),
        transfers: out.ledger.clients.iter().map(|c| c.transfers).sum(),
        report,
        availability_after_warmup,
        series,
    })
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn create(path: &Path) -> Result<fs::File, Error> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, `clients.csv`, per-point series files and the
/// optional Pareto plot into `out_dir`.
pub fn write_outputs(config: &ExperimentConfig, results: &[PointResult], out_dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows: Vec<ResultRow> = results.iter().map(PointResult::row).collect();
    write_results_csv(&rows, create(&out_dir.join("results.csv"))?)?;
    write_clients_csv(results, create(&out_dir.join("clients.csv"))?)?;
    for r in results {
        if r.series.is_empty() {
            continue;
        }
        let dir = out_dir
            .join("series")
            .join(safe_name(&r.topology))
            .join(safe_name(&r.policy));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (client, points) in &r.series {
            let path = dir.join(format!("series_{}.csv", safe_name(client)));
            metrics::write_series_csv(points, create(&path)?)?;
        }
    }
    if config.metrics.pareto_svg {
        let path = out_dir.join("pareto.svg");
        fs::write(&path, render_pareto_svg(&config.name, &rows)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Writes the node-level visits of every topology as
/// `visits_<topology>.csv`; returns the written paths.
pub fn ingest(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let traces = LoadedTraces::load(&config.trace, config.seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for topo_config in &config.topologies {
        let topology = topo_config.build()?;
        let timelines = traces.timelines(&topology)?;
        let path = out_dir.join(format!("visits_{}.csv", safe_name(&topo_config.label())));
        write_visits_csv(&timelines, create(&path)?)?;
        written.push(path);
    }
    Ok(written)
}
