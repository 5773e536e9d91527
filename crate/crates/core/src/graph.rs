//! The precinct graph: vertices with population, area and a planar
//! embedding, plus the undirected adjacency the plans are drawn on.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::GraphError;

/// A point (or vector) in the plane.
pub type Point = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub pop: f64,
    pub area: f64,
    pub centroid: Point,
    #[serde(default)]
    pub outer_boundary: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub shared: f64,
}

/// On-disk layout of a graph file.
#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

/// Shape of a rectangular lattice, when the graph was built as one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeShape {
    pub width: usize,
    pub height: usize,
}

/// Immutable, connected, undirected precinct graph.
///
/// Vertex ids are dense `0..n`. Adjacency is stored in compressed rows;
/// each entry carries the neighbor and the index of the connecting edge.
#[derive(Clone, Debug)]
pub struct PrecinctGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    adjacency: Vec<(u32, u32)>,
    lattice: Option<LatticeShape>,
}

impl PrecinctGraph {
    /// Builds and validates a graph from nodes and undirected edges.
    ///
    /// Each undirected edge may be listed once, or once per orientation
    /// with the same shared length.
    pub fn new(mut nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let n = nodes.len();
        if n == 0 {
            return Err(GraphError::Malformed("graph has no vertices".into()));
        }
        let mut seen = vec![false; n];
        for node in &nodes {
            if node.id >= n {
                if nodes.iter().filter(|m| m.id == node.id).count() > 1 {
                    return Err(GraphError::DuplicateId(node.id));
                }
                return Err(GraphError::SparseIds { id: node.id, n });
            }
            if seen[node.id] {
                return Err(GraphError::DuplicateId(node.id));
            }
            seen[node.id] = true;
            if !(node.pop >= 0.0 && node.pop.is_finite()) {
                return Err(GraphError::BadAttribute {
                    id: node.id,
                    reason: format!("population {} must be a nonnegative number", node.pop),
                });
            }
            if !(node.area > 0.0 && node.area.is_finite()) {
                return Err(GraphError::BadAttribute {
                    id: node.id,
                    reason: format!("area {} must be positive", node.area),
                });
            }
            if !(node.centroid[0].is_finite() && node.centroid[1].is_finite()) {
                return Err(GraphError::BadAttribute {
                    id: node.id,
                    reason: "centroid must be finite".into(),
                });
            }
        }
        nodes.sort_by_key(|node| node.id);

        let mut unique: HashMap<(usize, usize), (usize, f64)> = HashMap::new();
        let mut kept: Vec<Edge> = Vec::with_capacity(edges.len());
        for edge in &edges {
            for &end in &[edge.u, edge.v] {
                if end >= n {
                    return Err(GraphError::UnknownVertex {
                        u: edge.u,
                        v: edge.v,
                        missing: end,
                    });
                }
            }
            if edge.u == edge.v {
                return Err(GraphError::SelfLoop(edge.u));
            }
            if !(edge.shared > 0.0 && edge.shared.is_finite()) {
                return Err(GraphError::Malformed(format!(
                    "edge ({},{}) has non-positive shared length {}",
                    edge.u, edge.v, edge.shared
                )));
            }
            let key = (edge.u.min(edge.v), edge.u.max(edge.v));
            match unique.get_mut(&key) {
                None => {
                    unique.insert(key, (edge.u, edge.shared));
                    kept.push(Edge {
                        u: key.0,
                        v: key.1,
                        shared: edge.shared,
                    });
                }
                Some((first_u, shared)) => {
                    if *first_u == edge.u || *first_u == usize::MAX {
                        return Err(GraphError::DuplicateEdge(edge.u, edge.v));
                    }
                    if *shared != edge.shared {
                        return Err(GraphError::Asymmetric(edge.u, edge.v));
                    }
                    // Both orientations are now consumed.
                    *first_u = usize::MAX;
                }
            }
        }

        let mut degree = vec![0usize; n];
        for edge in &kept {
            degree[edge.u] += 1;
            degree[edge.v] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut fill = offsets.clone();
        let mut adjacency = vec![(0u32, 0u32); offsets[n]];
        for (index, edge) in kept.iter().enumerate() {
            adjacency[fill[edge.u]] = (edge.v as u32, index as u32);
            fill[edge.u] += 1;
            adjacency[fill[edge.v]] = (edge.u as u32, index as u32);
            fill[edge.v] += 1;
        }
        for v in 0..n {
            adjacency[offsets[v]..offsets[v + 1]].sort_unstable();
        }

        let graph = PrecinctGraph {
            nodes,
            edges: kept,
            offsets,
            adjacency,
            lattice: None,
        };
        if let Some(unreached) = graph.first_unreachable() {
            return Err(GraphError::Disconnected(unreached));
        }
        Ok(graph)
    }

    fn first_unreachable(&self) -> Option<usize> {
        let n = self.num_vertices();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for w in self.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.iter().position(|&s| !s)
    }

    pub fn num_vertices(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, v: usize) -> &Node {
        &self.nodes[v]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    #[inline]
    pub fn pop(&self, v: usize) -> f64 {
        self.nodes[v].pop
    }

    #[inline]
    pub fn area(&self, v: usize) -> f64 {
        self.nodes[v].area
    }

    #[inline]
    pub fn centroid(&self, v: usize) -> Point {
        self.nodes[v].centroid
    }

    /// Neighbor ids of `v`, ascending.
    #[inline]
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[self.offsets[v]..self.offsets[v + 1]]
            .iter()
            .map(|&(w, _)| w as usize)
    }

    /// Neighbor ids of `v` paired with the connecting edge index.
    #[inline]
    pub fn incident(&self, v: usize) -> &[(u32, u32)] {
        &self.adjacency[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn are_adjacent(&self, u: usize, v: usize) -> bool {
        u < self.num_vertices()
            && v < self.num_vertices()
            && self.incident(u)
                .binary_search_by_key(&(v as u32), |&(w, _)| w)
                .is_ok()
    }

    /// Index of the edge joining `u` and `v`, if any.
    pub fn edge_between(&self, u: usize, v: usize) -> Option<usize> {
        let row = self.incident(u);
        row.binary_search_by_key(&(v as u32), |&(w, _)| w)
            .ok()
            .map(|i| row[i].1 as usize)
    }

    pub fn total_pop(&self) -> f64 {
        self.nodes.iter().map(|n| n.pop).sum()
    }

    pub fn lattice_shape(&self) -> Option<LatticeShape> {
        self.lattice
    }

    /// Parses and validates the JSON graph format.
    pub fn from_json(bytes: &[u8]) -> Result<Self, GraphError> {
        let file: GraphFile =
            serde_json::from_slice(bytes).map_err(|e| GraphError::Malformed(e.to_string()))?;
        Self::new(file.nodes, file.edges)
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }
}

/// Loads a graph from its serialized JSON form.
pub fn load_graph(bytes: &[u8]) -> Result<PrecinctGraph, GraphError> {
    PrecinctGraph::from_json(bytes)
}

/// Rook-adjacent `width x height` lattice with unit population, area and
/// shared boundary. Vertex `row * width + col` sits at `(col, row)`.
pub fn build_lattice(width: usize, height: usize) -> Result<PrecinctGraph, GraphError> {
    if width < 2 || height < 2 {
        return Err(GraphError::InvalidArgument(format!(
            "lattice dimensions must be at least 2, got {width}x{height}"
        )));
    }
    build_grid(width, height)
}

/// Like [`build_lattice`] but also accepts a single row or column
/// (a path graph), which the small oracle instances use.
pub fn build_grid(width: usize, height: usize) -> Result<PrecinctGraph, GraphError> {
    if width == 0 || height == 0 || width * height < 2 {
        return Err(GraphError::InvalidArgument(format!(
            "grid must have at least two vertices, got {width}x{height}"
        )));
    }
    let mut nodes = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let border = [col == 0, col + 1 == width, row == 0, row + 1 == height]
                .iter()
                .filter(|&&b| b)
                .count();
            nodes.push(Node {
                id: row * width + col,
                pop: 1.0,
                area: 1.0,
                centroid: [col as f64, row as f64],
                outer_boundary: border as f64,
            });
        }
    }
    let mut edges = Vec::with_capacity(2 * width * height);
    for row in 0..height {
        for col in 0..width {
            let id = row * width + col;
            if col + 1 < width {
                edges.push(Edge { u: id, v: id + 1, shared: 1.0 });
            }
            if row + 1 < height {
                edges.push(Edge { u: id, v: id + width, shared: 1.0 });
            }
        }
    }
    let mut graph = PrecinctGraph::new(nodes, edges)?;
    graph.lattice = Some(LatticeShape { width, height });
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_counts() {
        let g = build_lattice(10, 10).unwrap();
        assert_eq!((g.num_vertices(), g.num_edges()), (100, 180));
        let g = build_lattice(2, 2).unwrap();
        assert_eq!((g.num_vertices(), g.num_edges()), (4, 4));
        let g = build_lattice(4, 4).unwrap();
        assert_eq!((g.num_vertices(), g.num_edges()), (16, 24));
        assert_eq!(g.centroid(5), [1.0, 1.0]);
        assert_eq!(g.lattice_shape(), Some(LatticeShape { width: 4, height: 4 }));
    }

    #[test]
    fn lattice_rejects_small_dimensions() {
        assert!(matches!(build_lattice(1, 5), Err(GraphError::InvalidArgument(_))));
        assert!(matches!(build_lattice(3, 0), Err(GraphError::InvalidArgument(_))));
    }

    #[test]
    fn adjacency_is_symmetric() {
        let g = build_lattice(5, 3).unwrap();
        for v in 0..g.num_vertices() {
            for w in g.neighbors(v) {
                assert!(g.are_adjacent(w, v));
                assert_eq!(g.edge_between(v, w), g.edge_between(w, v));
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let g = build_lattice(2, 2).unwrap();
        let back = load_graph(g.to_json().as_bytes()).unwrap();
        assert_eq!(back.num_vertices(), 4);
        assert_eq!(back.edges(), g.edges());
    }

    fn node(id: usize) -> Node {
        Node { id, pop: 1.0, area: 1.0, centroid: [id as f64, 0.0], outer_boundary: 0.0 }
    }

    #[test]
    fn load_errors() {
        let err = PrecinctGraph::new(vec![node(0), node(1)], vec![Edge { u: 0, v: 2, shared: 1.0 }])
            .unwrap_err();
        assert!(matches!(err, GraphError::UnknownVertex { missing: 2, .. }));
        assert!(err.to_string().contains("unknown vertex"));

        let err = PrecinctGraph::new(vec![node(0), node(0)], vec![]).unwrap_err();
        assert_eq!(err, GraphError::DuplicateId(0));
        assert!(err.to_string().contains("duplicate id"));

        let err = PrecinctGraph::new(
            vec![node(0), node(1)],
            vec![Edge { u: 0, v: 1, shared: 1.0 }, Edge { u: 1, v: 0, shared: 2.0 }],
        )
        .unwrap_err();
        assert_eq!(err, GraphError::Asymmetric(1, 0));

        let err = PrecinctGraph::new(vec![node(0), node(1), node(2)], vec![Edge { u: 0, v: 1, shared: 1.0 }])
            .unwrap_err();
        assert_eq!(err, GraphError::Disconnected(2));

        let err = load_graph(b"{\"nodes\": 3}").unwrap_err();
        assert!(matches!(err, GraphError::Malformed(_)));
    }

    #[test]
    fn both_orientations_accepted_once() {
        let g = PrecinctGraph::new(
            vec![node(0), node(1)],
            vec![Edge { u: 0, v: 1, shared: 1.0 }, Edge { u: 1, v: 0, shared: 1.0 }],
        )
        .unwrap();
        assert_eq!(g.num_edges(), 1);
        let err = PrecinctGraph::new(
            vec![node(0), node(1)],
            vec![
                Edge { u: 0, v: 1, shared: 1.0 },
                Edge { u: 1, v: 0, shared: 1.0 },
                Edge { u: 0, v: 1, shared: 1.0 },
            ],
        )
        .unwrap_err();
        assert_eq!(err, GraphError::DuplicateEdge(0, 1));
    }
}
