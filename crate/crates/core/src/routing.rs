//! Directed road graph with congestion-dependent travel times.
//!
//! Edge cost follows the BPR volume-delay curve
//! `t = t0 * (1 + 0.15 * ratio^4)` with `t0 = length / free-flow speed`,
//! so congested segments are avoided through cost rather than removed.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

pub const BPR_ALPHA: f64 = 0.15;

/// Latest occupancy ratio per segment id.
pub type RatioSnapshot = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoutingError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("no path from `{from}` to `{to}`")]
    NoPath { from: String, to: String },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Edge {
    pub edge_id: String,
    pub from: String,
    pub to: String,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub segment_id: Option<String>,
    pub length_m: f64,
    pub free_flow_speed_mps: f64,
}

impl Edge {
    pub fn free_flow_time_s(&self) -> f64 {
        self.length_m / self.free_flow_speed_mps
    }

    /// Ratio of the edge's monitored segment, 0 when unmonitored or unknown.
    pub fn ratio_in(&self, ratios: &RatioSnapshot) -> f64 {
        self.segment_id
            .as_ref()
            .and_then(|s| ratios.get(s))
            .copied()
            .unwrap_or(0.0)
    }
}

pub fn bpr_travel_time(t0: f64, ratio: f64) -> f64 {
    let r2 = ratio * ratio;
    t0 * (1.0 + BPR_ALPHA * r2 * r2)
}

pub fn edge_travel_time(edge: &Edge, ratio: f64) -> f64 {
    bpr_travel_time(edge.free_flow_time_s(), ratio)
}

pub fn estimated_delay(edge: &Edge, ratio: f64) -> f64 {
    edge_travel_time(edge, ratio) - edge.free_flow_time_s()
}

#[derive(Debug, Clone)]
pub struct RoadGraph {
    nodes: Vec<String>,
    index: BTreeMap<String, usize>,
    edges: Vec<Edge>,
    /// Outgoing edge indices per node.
    outgoing: Vec<Vec<usize>>,
}

impl RoadGraph {
    pub fn new(nodes: impl IntoIterator<Item = String>, edges: Vec<Edge>) -> Result<Self, RoutingError> {
        let nodes: Vec<String> = nodes.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index: BTreeMap<String, usize> = nodes.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        let mut outgoing = alloc::vec![Vec::new(); nodes.len()];
        let mut seen_ids = BTreeSet::new();
        for (i, edge) in edges.iter().enumerate() {
            let invalid = |msg: &str| RoutingError::InvalidGraph(alloc::format!("edge `{}`: {msg}", edge.edge_id));
            if !seen_ids.insert(edge.edge_id.as_str()) {
                return Err(invalid("duplicate edge id"));
            }
            let from = *index.get(&edge.from).ok_or_else(|| invalid("unknown `from` node"))?;
            if !index.contains_key(&edge.to) {
                return Err(invalid("unknown `to` node"));
            }
            if !(edge.length_m > 0.0 && edge.length_m.is_finite()) {
                return Err(invalid("length_m must be positive"));
            }
            if !(edge.free_flow_speed_mps > 0.0 && edge.free_flow_speed_mps.is_finite()) {
                return Err(invalid("free_flow_speed_mps must be positive"));
            }
            outgoing[from].push(i);
        }
        Ok(RoadGraph {
            nodes,
            index,
            edges,
            outgoing,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn contains_node(&self, node: &str) -> bool {
        self.index.contains_key(node)
    }

    pub fn edge(&self, edge_id: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.edge_id == edge_id)
    }

    /// Edges carrying the given monitored segment, in edge-id order.
    pub fn edges_of_segment<'a>(&'a self, segment_id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        let mut found: Vec<&Edge> = self
            .edges
            .iter()
            .filter(|e| e.segment_id.as_deref() == Some(segment_id))
            .collect();
        found.sort_by(|a, b| a.edge_id.cmp(&b.edge_id));
        found.into_iter()
    }

    fn node_index(&self, node: &str) -> Result<usize, RoutingError> {
        self.index
            .get(node)
            .copied()
            .ok_or_else(|| RoutingError::UnknownNode(node.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Route {
    pub edge_ids: Vec<String>,
    /// Visited nodes, origin first.
    pub nodes: Vec<String>,
    pub total_time_s: f64,
    pub total_length_m: f64,
}

impl Route {
    pub fn uses_segment(&self, graph: &RoadGraph, segment_id: &str) -> bool {
        self.edge_ids
            .iter()
            .filter_map(|id| graph.edge(id))
            .any(|e| e.segment_id.as_deref() == Some(segment_id))
    }
}

/// Travel time of an edge sequence, accumulated in path order.
pub fn path_time(graph: &RoadGraph, edge_ids: &[String], ratios: &RatioSnapshot) -> Option<f64> {
    edge_ids.iter().try_fold(0.0, |acc, id| {
        graph.edge(id).map(|e| acc + edge_travel_time(e, e.ratio_in(ratios)))
    })
}

struct Label {
    cost: f64,
    path: Vec<usize>,
    node: usize,
}

impl Label {
    fn rank(&self, other: &Label, edges: &[Edge]) -> Ordering {
        self.cost.total_cmp(&other.cost).then_with(|| {
            let a = self.path.iter().map(|&i| &edges[i].edge_id);
            let b = other.path.iter().map(|&i| &edges[i].edge_id);
            a.cmp(b)
        })
    }
}

/// Heap entry; reversed so the max-heap pops the cheapest label first.
struct Queued<'g> {
    label: Label,
    edges: &'g [Edge],
}

impl PartialEq for Queued<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued<'_> {}

impl PartialOrd for Queued<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.label.rank(&self.label, self.edges)
    }
}

/// Minimum-time route under the given ratio snapshot. Equal-time routes
/// are ordered by their edge-id sequence and the smallest wins.
pub fn best_route(
    graph: &RoadGraph,
    origin: &str,
    dest: &str,
    ratios: &RatioSnapshot,
) -> Result<Route, RoutingError> {
    let start = graph.node_index(origin)?;
    let goal = graph.node_index(dest)?;
    let edges = graph.edges.as_slice();
    let weights: Vec<f64> = edges
        .iter()
        .map(|e| edge_travel_time(e, e.ratio_in(ratios)))
        .collect();

    let mut best: Vec<Option<Label>> = (0..graph.nodes.len()).map(|_| None).collect();
    let mut settled = alloc::vec![false; graph.nodes.len()];
    let mut heap = BinaryHeap::new();
    heap.push(Queued {
        label: Label { cost: 0.0, path: Vec::new(), node: start },
        edges,
    });

    while let Some(Queued { label, .. }) = heap.pop() {
        if settled[label.node] {
            continue;
        }
        settled[label.node] = true;
        if label.node == goal {
            return Ok(build_route(graph, start, label.path, label.cost));
        }
        for &ei in &graph.outgoing[label.node] {
            let to = graph.index[&edges[ei].to];
            if settled[to] {
                continue;
            }
            let mut path = label.path.clone();
            path.push(ei);
            let candidate = Label { cost: label.cost + weights[ei], path, node: to };
            let improves = best[to]
                .as_ref()
                .is_none_or(|b| candidate.rank(b, edges) == Ordering::Less);
            if improves {
                best[to] = Some(Label {
                    cost: candidate.cost,
                    path: candidate.path.clone(),
                    node: to,
                });
                heap.push(Queued { label: candidate, edges });
            }
        }
    }
    Err(RoutingError::NoPath {
        from: origin.into(),
        to: dest.into(),
    })
}

fn build_route(graph: &RoadGraph, start: usize, path: Vec<usize>, cost: f64) -> Route {
    let mut nodes = Vec::with_capacity(path.len() + 1);
    nodes.push(graph.nodes[start].clone());
    let mut edge_ids = Vec::with_capacity(path.len());
    let mut total_length_m = 0.0;
    for &ei in &path {
        let e = &graph.edges[ei];
        nodes.push(e.to.clone());
        edge_ids.push(e.edge_id.clone());
        total_length_m += e.length_m;
    }
    Route {
        edge_ids,
        nodes,
        total_time_s: cost,
        total_length_m,
    }
}
