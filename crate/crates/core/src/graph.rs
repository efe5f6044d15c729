//! Time-varying V2V neighbour graphs.
//!
//! `adjacency[i]` lists the nodes whose broadcast node `i` receives. Node
//! indices are positions in the active fleet ordering; `nodes[i]` carries
//! the vehicle id for index `i` so graphs from different rounds can be
//! compared by id.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use crate::VehicleId;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborGraph {
    pub round: u64,
    nodes: Vec<VehicleId>,
    adjacency: Vec<Vec<usize>>,
}

/// Degree summary of one graph.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DegreeStats {
    pub mean: f64,
    pub max: usize,
    pub isolated: usize,
}

impl NeighborGraph {
    /// Builds a graph from neighbour lists; duplicates are removed, lists are
    /// sorted and self-loops dropped.
    pub fn from_adjacency(mut adjacency: Vec<Vec<usize>>) -> Self {
        let n = adjacency.len();
        for (i, row) in adjacency.iter_mut().enumerate() {
            row.retain(|&j| j != i && j < n);
            row.sort_unstable();
            row.dedup();
        }
        let nodes = (0..n as u32).map(VehicleId).collect();
        Self { round: 0, nodes, adjacency }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_adjacency(vec![Vec::new(); n])
    }

    pub fn complete(n: usize) -> Self {
        Self::from_adjacency((0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect())
    }

    /// Relabels the nodes with vehicle ids.
    pub fn with_nodes(mut self, nodes: &[VehicleId]) -> Self {
        assert_eq!(nodes.len(), self.adjacency.len(), "node labels must match graph size");
        self.nodes = nodes.to_vec();
        self
    }

    pub fn at_round(mut self, round: u64) -> Self {
        self.round = round;
        self
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn nodes(&self) -> &[VehicleId] {
        &self.nodes
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_in_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().all(|&j| self.adjacency[j].binary_search(&i).is_ok()))
    }

    /// Number of nodes that receive the broadcast of each node.
    pub fn out_degrees(&self) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for row in &self.adjacency {
            for &j in row {
                out[j] += 1;
            }
        }
        out
    }

    pub fn degree_stats(&self) -> DegreeStats {
        if self.is_empty() {
            return DegreeStats::default();
        }
        DegreeStats {
            mean: self.edge_count() as f64 / self.len() as f64,
            max: self.max_in_degree(),
            isolated: self.adjacency.iter().filter(|r| r.is_empty()).count(),
        }
    }
}

/// `j` neighbours `i` iff their longitudinal distance is at most `r`.
pub fn radius_graph(positions: &[f64], r: f64) -> NeighborGraph {
    let n = positions.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| positions[a].total_cmp(&positions[b]));
    let mut adjacency = vec![Vec::new(); n];
    for (slot, &i) in order.iter().enumerate() {
        for &j in &order[slot + 1..] {
            if positions[j] - positions[i] > r {
                break;
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
    }
    NeighborGraph::from_adjacency(adjacency)
}

/// Radius rule on a closed loop of the given circumference.
pub fn radius_graph_on_ring(positions: &[f64], r: f64, circumference: f64) -> NeighborGraph {
    let n = positions.len();
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (positions[i] - positions[j]).rem_euclid(circumference);
            if d.min(circumference - d) <= r {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    NeighborGraph::from_adjacency(adjacency)
}

/// Each directed link is present independently with probability `p_edge`.
pub fn random_graph<R: Rng + ?Sized>(n: usize, p_edge: f64, rng: &mut R) -> NeighborGraph {
    let p = p_edge.clamp(0.0, 1.0);
    let adjacency = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && rng.gen_bool(p)).collect())
        .collect();
    NeighborGraph::from_adjacency(adjacency)
}

/// Whether the union of the window's edges is strongly connected over the
/// vehicles present in every graph of the window.
pub fn union_strongly_connected(window: &[NeighborGraph]) -> bool {
    let Some(first) = window.first() else {
        return false;
    };
    let mut common: BTreeSet<VehicleId> = first.nodes().iter().copied().collect();
    for g in &window[1..] {
        let ids: BTreeSet<VehicleId> = g.nodes().iter().copied().collect();
        common.retain(|id| ids.contains(id));
    }
    if common.len() <= 1 {
        return true;
    }
    let index: BTreeMap<VehicleId, usize> = common.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let n = index.len();
    let mut forward = vec![BTreeSet::new(); n];
    let mut backward = vec![BTreeSet::new(); n];
    for g in window {
        for (i, row) in g.adjacency.iter().enumerate() {
            let Some(&to) = index.get(&g.nodes[i]) else { continue };
            for &j in row {
                if let Some(&from) = index.get(&g.nodes[j]) {
                    forward[from].insert(to);
                    backward[to].insert(from);
                }
            }
        }
    }
    reaches_all(&forward) && reaches_all(&backward)
}

fn reaches_all(edges: &[BTreeSet<usize>]) -> bool {
    let mut seen = vec![false; edges.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &edges[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == edges.len()
}
