//! Fog topologies: edge node grids, the optional cloud/router/link graph,
//! nearest-node lookup and transfer times.

use std::collections::VecDeque;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traces::GeoPoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("invalid topology config: {0}")]
    Config(String),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("transfer endpoints must differ (got {0} twice)")]
    SameEndpoints(NodeId),
    #[error("no path between {0:?} and {1:?}")]
    Disconnected(Endpoint, Endpoint),
    #[error("topology has no cloud node to replicate from")]
    NoCloud,
    #[error("topology file line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Edge,
    Cloud,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FogNode {
    pub id: NodeId,
    pub lat: f64,
    pub lon: f64,
    pub kind: NodeKind,
}

/// A vertex of the network graph. Nodes order before routers so that
/// lexicographic path comparison prefers node ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Node(NodeId),
    Router(u32),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Node(id) => write!(f, "n{}", id.0),
            Endpoint::Router(id) => write!(f, "r{id}"),
        }
    }
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, num) = s.split_at(s.len().min(1));
        let id: u32 = num.parse().map_err(|_| format!("bad endpoint `{s}`"))?;
        match kind {
            "n" => Ok(Endpoint::Node(NodeId(id))),
            "r" => Ok(Endpoint::Router(id)),
            _ => Err(format!("bad endpoint `{s}`, expected n<id> or r<id>")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Link {
    pub a: Endpoint,
    pub b: Endpoint,
    pub rate_bps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BBox {
    /// Greater Beijing.
    pub const BEIJING: BBox = BBox {
        lat_min: 39.6,
        lat_max: 40.3,
        lon_min: 116.0,
        lon_max: 116.8,
    };

    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self, TopologyError> {
        let bbox = BBox {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        bbox.validate()?;
        Ok(bbox)
    }

    fn validate(&self) -> Result<(), TopologyError> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lat_max <= self.lat_min || self.lon_max <= self.lon_min {
            return Err(TopologyError::Config(format!("degenerate bounding box {self:?}")));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.lat_min + self.lat_max) / 2.0,
            (self.lon_min + self.lon_max) / 2.0,
        )
    }
}

impl Default for BBox {
    fn default() -> Self {
        BBox::BEIJING
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
    pub bbox: BBox,
}

impl GridSpec {
    fn cell_lat(&self, row: u32) -> f64 {
        let step = (self.bbox.lat_max - self.bbox.lat_min) / self.rows as f64;
        self.bbox.lat_min + (row as f64 + 0.5) * step
    }

    fn cell_lon(&self, col: u32) -> f64 {
        let step = (self.bbox.lon_max - self.bbox.lon_min) / self.cols as f64;
        self.bbox.lon_min + (col as f64 + 0.5) * step
    }
}

/// Router interconnection pattern for the complex network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Neighborhood {
    #[default]
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

/// How long it takes to move a client's data to a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NetworkModel {
    /// Every transfer takes the same time regardless of endpoints.
    FixedDelay { delay_s: f64 },
    /// Transfers of `data_size_bits` over the topology's links, limited by
    /// the slowest link on the minimum-hop path.
    FlowGraph { data_size_bits: f64 },
}

impl NetworkModel {
    pub fn validate(&self) -> Result<(), TopologyError> {
        match *self {
            NetworkModel::FixedDelay { delay_s } if !(delay_s > 0.0 && delay_s.is_finite()) => Err(
                TopologyError::Config(format!("fixed delay must be positive, got {delay_s}")),
            ),
            NetworkModel::FlowGraph { data_size_bits } if !(data_size_bits > 0.0 && data_size_bits.is_finite()) => {
                Err(TopologyError::Config(format!(
                    "data size must be positive, got {data_size_bits}"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Topology {
    nodes: Vec<FogNode>,
    routers: Vec<u32>,
    links: Vec<Link>,
    grid: Option<GridSpec>,
    edge_count: usize,
    cloud: Option<NodeId>,
    // adjacency over dense vertex indices: nodes first, then routers
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Topology {
    /// Assembles and validates a topology from its parts.
    pub fn new(
        nodes: Vec<FogNode>,
        routers: Vec<u32>,
        links: Vec<Link>,
        grid: Option<GridSpec>,
    ) -> Result<Self, TopologyError> {
        for (i, node) in nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(TopologyError::Config(format!(
                    "node ids must be dense from 0, found {} at position {i}",
                    node.id
                )));
            }
        }
        let clouds: Vec<NodeId> = nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Cloud)
            .map(|n| n.id)
            .collect();
        if clouds.len() > 1 {
            return Err(TopologyError::Config(format!(
                "at most one cloud node allowed, found {}",
                clouds.len()
            )));
        }
        let edge_count = nodes.len() - clouds.len();
        if edge_count == 0 {
            return Err(TopologyError::Config("topology has no edge nodes".into()));
        }
        if let Some(first_cloud) = clouds.first() {
            if first_cloud.index() != nodes.len() - 1 {
                return Err(TopologyError::Config("the cloud node must have the largest id".into()));
            }
        }
        let mut routers = routers;
        routers.sort_unstable();
        routers.dedup();

        let mut topo = Topology {
            nodes,
            routers,
            links,
            grid,
            edge_count,
            cloud: clouds.first().copied(),
            adjacency: Vec::new(),
        };
        topo.build_adjacency()?;
        if let Some(grid) = topo.grid {
            if !topo.matches_grid(&grid) {
                topo.grid = None;
            }
        }
        Ok(topo)
    }

    fn build_adjacency(&mut self) -> Result<(), TopologyError> {
        let vertex_count = self.nodes.len() + self.routers.len();
        let mut adjacency = vec![Vec::new(); vertex_count];
        for link in &self.links {
            if !(link.rate_bps > 0.0 && link.rate_bps.is_finite()) {
                return Err(TopologyError::Config(format!(
                    "link {}-{} has non-positive rate {}",
                    link.a, link.b, link.rate_bps
                )));
            }
            let a = self.vertex_index(link.a)?;
            let b = self.vertex_index(link.b)?;
            adjacency[a].push((b, link.rate_bps));
            adjacency[b].push((a, link.rate_bps));
        }
        for neighbours in &mut adjacency {
            neighbours.sort_by_key(|x| x.0);
        }
        self.adjacency = adjacency;

        if !self.links.is_empty() {
            let dist = self.hop_distances(0);
            if let Some(unreached) = dist.iter().position(|d| d.is_none()) {
                return Err(TopologyError::Config(format!(
                    "link graph is not connected: {} unreachable",
                    self.vertex_endpoint(unreached)
                )));
            }
        }
        Ok(())
    }

    fn matches_grid(&self, grid: &GridSpec) -> bool {
        let n = (grid.rows * grid.cols) as usize;
        n == self.edge_count
            && self.nodes[..n].iter().enumerate().all(|(i, node)| {
                let (r, c) = (i as u32 / grid.cols, i as u32 % grid.cols);
                node.lat == grid.cell_lat(r) && node.lon == grid.cell_lon(c)
            })
    }

    fn vertex_index(&self, endpoint: Endpoint) -> Result<usize, TopologyError> {
        match endpoint {
            Endpoint::Node(id) if id.index() < self.nodes.len() => Ok(id.index()),
            Endpoint::Node(id) => Err(TopologyError::UnknownNode(id)),
            Endpoint::Router(r) => self
                .routers
                .binary_search(&r)
                .map(|pos| self.nodes.len() + pos)
                .map_err(|_| TopologyError::Config(format!("unknown router r{r}"))),
        }
    }

    fn vertex_endpoint(&self, index: usize) -> Endpoint {
        if index < self.nodes.len() {
            Endpoint::Node(NodeId(index as u32))
        } else {
            Endpoint::Router(self.routers[index - self.nodes.len()])
        }
    }

    pub fn nodes(&self) -> &[FogNode] {
        &self.nodes
    }

    pub fn edge_nodes(&self) -> &[FogNode] {
        &self.nodes[..self.edge_count]
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn routers(&self) -> &[u32] {
        &self.routers
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.grid.as_ref()
    }

    pub fn cloud(&self) -> Option<NodeId> {
        self.cloud
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn is_edge(&self, id: NodeId) -> bool {
        id.index() < self.edge_count
    }

    /// Closest edge node to `p`; ties go to the smaller id. The cloud node is
    /// never returned.
    pub fn nearest_node(&self, p: &GeoPoint) -> NodeId {
        self.nearest_node_at(p.lat, p.lon)
    }

    pub fn nearest_node_at(&self, lat: f64, lon: f64) -> NodeId {
        match &self.grid {
            Some(grid) => self.nearest_in_grid(grid, lat, lon),
            None => self.nearest_node_scan(lat, lon),
        }
    }

    /// Exhaustive scan over all edge nodes.
    pub fn nearest_node_scan(&self, lat: f64, lon: f64) -> NodeId {
        let scale = lon_scale(lat);
        let mut best = (f64::INFINITY, NodeId(0));
        for node in self.edge_nodes() {
            let d = distance_sq(lat, lon, scale, node);
            if d < best.0 {
                best = (d, node.id);
            }
        }
        best.1
    }

    // The metric is separable per axis, so the nearest center lies in or next
    // to the cell containing the (clamped) point.
    fn nearest_in_grid(&self, grid: &GridSpec, lat: f64, lon: f64) -> NodeId {
        let cell = |value: f64, min: f64, max: f64, count: u32| -> i64 {
            let step = (max - min) / count as f64;
            let raw = ((value - min) / step).floor();
            if raw.is_nan() {
                0
            } else {
                (raw as i64).clamp(0, count as i64 - 1)
            }
        };
        let row = cell(lat, grid.bbox.lat_min, grid.bbox.lat_max, grid.rows);
        let col = cell(lon, grid.bbox.lon_min, grid.bbox.lon_max, grid.cols);
        let scale = lon_scale(lat);
        let mut best = (f64::INFINITY, NodeId(u32::MAX));
        for r in (row - 1).max(0)..=(row + 1).min(grid.rows as i64 - 1) {
            for c in (col - 1).max(0)..=(col + 1).min(grid.cols as i64 - 1) {
                let node = &self.nodes[(r * grid.cols as i64 + c) as usize];
                let d = distance_sq(lat, lon, scale, node);
                if d < best.0 || (d == best.0 && node.id < best.1) {
                    best = (d, node.id);
                }
            }
        }
        best.1
    }

    /// Time to move one client data set from `src` to `dst`.
    pub fn transfer_time(&self, src: NodeId, dst: NodeId, model: &NetworkModel) -> Result<f64, TopologyError> {
        for id in [src, dst] {
            if !self.contains(id) {
                return Err(TopologyError::UnknownNode(id));
            }
        }
        if src == dst {
            return Err(TopologyError::SameEndpoints(src));
        }
        match *model {
            NetworkModel::FixedDelay { delay_s } => Ok(delay_s),
            NetworkModel::FlowGraph { data_size_bits } => {
                let bottleneck = self.bottleneck_rate(src, dst)?;
                Ok(data_size_bits / bottleneck)
            }
        }
    }

    /// Delay for placing a replica at `dst`. Flow-graph transfers are always
    /// sourced from the cloud, which holds every client's data.
    pub fn replication_delay(&self, dst: NodeId, model: &NetworkModel) -> Result<f64, TopologyError> {
        match model {
            NetworkModel::FixedDelay { delay_s } => {
                if !self.contains(dst) {
                    return Err(TopologyError::UnknownNode(dst));
                }
                Ok(*delay_s)
            }
            NetworkModel::FlowGraph { .. } => {
                let cloud = self.cloud.ok_or(TopologyError::NoCloud)?;
                self.transfer_time(cloud, dst, model)
            }
        }
    }

    /// Minimum-hop path between two nodes. Among equal-hop paths the
    /// lexicographically smallest one (oriented from the smaller id) is used,
    /// which makes the result symmetric in its endpoints.
    pub fn route(&self, a: NodeId, b: NodeId) -> Result<Vec<Endpoint>, TopologyError> {
        let (from, to) = if a <= b { (a, b) } else { (b, a) };
        let src = self.vertex_index(Endpoint::Node(from))?;
        let dst = self.vertex_index(Endpoint::Node(to))?;
        let dist = self.hop_distances(dst);
        let Some(mut remaining) = dist[src] else {
            return Err(TopologyError::Disconnected(Endpoint::Node(from), Endpoint::Node(to)));
        };
        let mut path = vec![src];
        let mut at = src;
        while remaining > 0 {
            // adjacency is sorted by index, so the first match is the smallest
            let next = self.adjacency[at]
                .iter()
                .map(|&(v, _)| v)
                .find(|&v| dist[v] == Some(remaining - 1))
                .expect("BFS distances are consistent");
            path.push(next);
            at = next;
            remaining -= 1;
        }
        let mut endpoints: Vec<Endpoint> = path.into_iter().map(|v| self.vertex_endpoint(v)).collect();
        if a > b {
            endpoints.reverse();
        }
        Ok(endpoints)
    }

    fn bottleneck_rate(&self, a: NodeId, b: NodeId) -> Result<f64, TopologyError> {
        let path = self.route(a, b)?;
        let mut rate = f64::INFINITY;
        for pair in path.windows(2) {
            let u = self.vertex_index(pair[0])?;
            let v = self.vertex_index(pair[1])?;
            let link_rate = self.adjacency[u]
                .iter()
                .filter(|&&(w, _)| w == v)
                .map(|&(_, r)| r)
                .fold(0.0_f64, f64::max);
            rate = rate.min(link_rate);
        }
        Ok(rate)
    }

    fn hop_distances(&self, from: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.adjacency.len()];
        let mut queue = VecDeque::new();
        dist[from] = Some(0);
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &(v, _) in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Plain-text dump: one `grid`, `node`, `router` or `link` record per line.
    pub fn dump(&self) -> String {
        let mut out = String::from("# fog topology\n");
        if let Some(g) = &self.grid {
            let b = g.bbox;
            let _ = writeln!(
                out,
                "grid {} {} {:?} {:?} {:?} {:?}",
                g.rows, g.cols, b.lat_min, b.lat_max, b.lon_min, b.lon_max
            );
        }
        for node in &self.nodes {
            let kind = match node.kind {
                NodeKind::Edge => "edge",
                NodeKind::Cloud => "cloud",
            };
            let _ = writeln!(out, "node {} {:?} {:?} {kind}", node.id, node.lat, node.lon);
        }
        for r in &self.routers {
            let _ = writeln!(out, "router {r}");
        }
        for link in &self.links {
            let _ = writeln!(out, "link {} {} {:?}", link.a, link.b, link.rate_bps);
        }
        out
    }

    pub fn load(text: &str) -> Result<Self, TopologyError> {
        let mut nodes = Vec::new();
        let mut routers = Vec::new();
        let mut links = Vec::new();
        let mut grid = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| TopologyError::Parse { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
            let int = |s: &str| s.parse::<u32>().map_err(|_| err(format!("bad integer `{s}`")));
            match (fields[0], fields.len()) {
                ("grid", 7) => {
                    let bbox = BBox::new(num(fields[3])?, num(fields[4])?, num(fields[5])?, num(fields[6])?)
                        .map_err(|e| err(e.to_string()))?;
                    grid = Some(GridSpec {
                        rows: int(fields[1])?,
                        cols: int(fields[2])?,
                        bbox,
                    });
                }
                ("node", 5) => {
                    let kind = match fields[4] {
                        "edge" => NodeKind::Edge,
                        "cloud" => NodeKind::Cloud,
                        other => return Err(err(format!("unknown node kind `{other}`"))),
                    };
                    nodes.push(FogNode {
                        id: NodeId(int(fields[1])?),
                        lat: num(fields[2])?,
                        lon: num(fields[3])?,
                        kind,
                    });
                }
                ("router", 2) => routers.push(int(fields[1])?),
                ("link", 4) => links.push(Link {
                    a: fields[1].parse().map_err(err)?,
                    b: fields[2].parse().map_err(err)?,
                    rate_bps: num(fields[3])?,
                }),
                (kind, n) => return Err(err(format!("unrecognized record `{kind}` with {n} fields"))),
            }
        }
        Topology::new(nodes, routers, links, grid)
    }
}

fn lon_scale(lat: f64) -> f64 {
    lat.to_radians().cos()
}

fn distance_sq(lat: f64, lon: f64, scale: f64, node: &FogNode) -> f64 {
    let dy = lat - node.lat;
    let dx = (lon - node.lon) * scale;
    dy * dy + dx * dx
}

fn grid_nodes(rows: u32, cols: u32, bbox: BBox) -> Result<(GridSpec, Vec<FogNode>), TopologyError> {
    if rows == 0 || cols == 0 {
        return Err(TopologyError::Config(format!("grid must be at least 1x1, got {rows}x{cols}")));
    }
    bbox.validate()?;
    let grid = GridSpec { rows, cols, bbox };
    let nodes = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| FogNode {
            id: NodeId(r * cols + c),
            lat: grid.cell_lat(r),
            lon: grid.cell_lon(c),
            kind: NodeKind::Edge,
        })
        .collect();
    Ok((grid, nodes))
}

/// `rows x cols` edge nodes at the cell centers of `bbox`, row-major ids.
pub fn build_grid(rows: u32, cols: u32, bbox: BBox) -> Result<Topology, TopologyError> {
    let (grid, nodes) = grid_nodes(rows, cols, bbox)?;
    Topology::new(nodes, Vec::new(), Vec::new(), Some(grid))
}

/// Grid of edge nodes, each behind its own router. Routers of neighbouring
/// cells are meshed at `edge_rate_bps` and every router has an uplink to a
/// single cloud node at `uplink_rate_bps`.
pub fn build_complex_network(
    rows: u32,
    cols: u32,
    bbox: BBox,
    edge_rate_bps: f64,
    uplink_rate_bps: f64,
    neighborhood: Neighborhood,
) -> Result<Topology, TopologyError> {
    let (grid, mut nodes) = grid_nodes(rows, cols, bbox)?;
    let n = nodes.len() as u32;
    let (clat, clon) = bbox.center();
    let cloud = NodeId(n);
    nodes.push(FogNode {
        id: cloud,
        lat: clat,
        lon: clon,
        kind: NodeKind::Cloud,
    });
    let routers: Vec<u32> = (0..n).collect();
    let mut links = Vec::new();
    let edge = |a, b| Link {
        a,
        b,
        rate_bps: edge_rate_bps,
    };
    for i in 0..n {
        links.push(edge(Endpoint::Node(NodeId(i)), Endpoint::Router(i)));
    }
    let mut offsets = vec![(0i64, 1i64), (1, 0)];
    if neighborhood == Neighborhood::Eight {
        offsets.extend([(1, 1), (1, -1)]);
    }
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            for &(dr, dc) in &offsets {
                let (nr, nc) = (r + dr, c + dc);
                if nr < rows as i64 && nc >= 0 && nc < cols as i64 {
                    let a = (r * cols as i64 + c) as u32;
                    let b = (nr * cols as i64 + nc) as u32;
                    links.push(edge(Endpoint::Router(a), Endpoint::Router(b)));
                }
            }
        }
    }
    for i in 0..n {
        links.push(Link {
            a: Endpoint::Router(i),
            b: Endpoint::Node(cloud),
            rate_bps: uplink_rate_bps,
        });
    }
    Topology::new(nodes, routers, links, Some(grid))
}
