//! Districting plans with incrementally maintained per-district caches,
//! the single-node flip operator and plan validity.
//!
//! Districts are 0-based inside the library; plan files use 1-based ids.

use std::collections::VecDeque;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::PlanError;
use crate::graph::{Point, PrecinctGraph};

/// The flip `F_(u,v)`: vertex `v` takes the district of its neighbor `u`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Flip {
    pub u: usize,
    pub v: usize,
}

impl Flip {
    pub fn new(u: usize, v: usize) -> Self {
        Flip { u, v }
    }
}

/// Aggregates of one district.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DistrictStats {
    pub pop: f64,
    pub area: f64,
    /// Area-weighted sum of vertex embeddings.
    pub moment: Point,
    pub count: usize,
}

impl DistrictStats {
    pub fn centroid(&self) -> Option<Point> {
        (self.count > 0).then(|| [self.moment[0] / self.area, self.moment[1] / self.area])
    }
}

/// Hard constraints defining the plan space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValiditySpec {
    pub pop_min: f64,
    pub pop_max: f64,
    #[serde(default = "default_true")]
    pub require_connected: bool,
    #[serde(default)]
    pub require_simply_connected: bool,
}

fn default_true() -> bool {
    true
}

impl ValiditySpec {
    pub fn new(pop_min: f64, pop_max: f64) -> Self {
        ValiditySpec {
            pop_min,
            pop_max,
            require_connected: true,
            require_simply_connected: false,
        }
    }

    /// No population bounds, connectivity only.
    pub fn connected_only() -> Self {
        ValiditySpec::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.pop_min.is_nan() || self.pop_max.is_nan() || self.pop_min > self.pop_max {
            return Err(format!(
                "pop_min {} must not exceed pop_max {}",
                self.pop_min, self.pop_max
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn pop_ok(&self, pop: f64) -> bool {
        pop >= self.pop_min && pop <= self.pop_max
    }
}

#[inline]
fn zobrist(v: usize, label: u16) -> u64 {
    // splitmix64 finalizer over (vertex, label)
    let mut z = ((v as u64) << 16 | label as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A district labeling together with caches that are kept equal to a
/// from-scratch recomputation under flips.
#[derive(Clone, Debug)]
pub struct Plan {
    labels: Vec<u16>,
    stats: Vec<DistrictStats>,
    cut_edges: usize,
    cut_length: f64,
    fingerprint: u64,
}

impl PartialEq for Plan {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.stats.len() == other.stats.len()
    }
}

impl Eq for Plan {}

impl Plan {
    /// Builds a plan from 0-based district labels.
    pub fn from_labels(
        graph: &PrecinctGraph,
        labels: Vec<u16>,
        n_districts: usize,
    ) -> Result<Self, PlanError> {
        if labels.len() != graph.num_vertices() {
            return Err(PlanError::SizeMismatch {
                labels: labels.len(),
                vertices: graph.num_vertices(),
            });
        }
        if n_districts == 0 || n_districts > u16::MAX as usize {
            return Err(PlanError::Format(format!(
                "district count {n_districts} out of range"
            )));
        }
        if let Some((vertex, &d)) = labels
            .iter()
            .enumerate()
            .find(|(_, &d)| d as usize >= n_districts)
        {
            return Err(PlanError::LabelOutOfRange {
                vertex,
                district: d as usize + 1,
                n_districts,
            });
        }
        let mut plan = Plan {
            labels,
            stats: vec![DistrictStats::default(); n_districts],
            cut_edges: 0,
            cut_length: 0.0,
            fingerprint: 0,
        };
        plan.recompute(graph);
        Ok(plan)
    }

    /// Rebuilds every cache from the labels.
    fn recompute(&mut self, graph: &PrecinctGraph) {
        for s in &mut self.stats {
            *s = DistrictStats::default();
        }
        self.fingerprint = 0;
        for (v, &d) in self.labels.iter().enumerate() {
            let node = graph.node(v);
            let s = &mut self.stats[d as usize];
            s.pop += node.pop;
            s.area += node.area;
            s.moment[0] += node.area * node.centroid[0];
            s.moment[1] += node.area * node.centroid[1];
            s.count += 1;
            self.fingerprint ^= zobrist(v, d);
        }
        self.cut_edges = 0;
        self.cut_length = 0.0;
        for edge in graph.edges() {
            if self.labels[edge.u] != self.labels[edge.v] {
                self.cut_edges += 1;
                self.cut_length += edge.shared;
            }
        }
    }

    /// A fresh plan with caches recomputed from this plan's labels.
    pub fn recomputed(&self, graph: &PrecinctGraph) -> Plan {
        let mut fresh = self.clone();
        fresh.recompute(graph);
        fresh
    }

    /// Builds a plan from 1-based district ids.
    pub fn from_one_based(
        graph: &PrecinctGraph,
        districts: &[usize],
        n_districts: usize,
    ) -> Result<Self, PlanError> {
        let mut labels = Vec::with_capacity(districts.len());
        for (vertex, &d) in districts.iter().enumerate() {
            if d == 0 || d > n_districts {
                return Err(PlanError::LabelOutOfRange {
                    vertex,
                    district: d,
                    n_districts,
                });
            }
            labels.push((d - 1) as u16);
        }
        Self::from_labels(graph, labels, n_districts)
    }

    pub fn n_districts(&self) -> usize {
        self.stats.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn district_of(&self, v: usize) -> usize {
        self.labels[v] as usize
    }

    pub fn stats(&self, district: usize) -> &DistrictStats {
        &self.stats[district]
    }

    pub fn all_stats(&self) -> &[DistrictStats] {
        &self.stats
    }

    /// Number of edges whose endpoints lie in different districts.
    pub fn cut_edges(&self) -> usize {
        self.cut_edges
    }

    /// Total shared boundary length over cut edges.
    pub fn cut_length(&self) -> f64 {
        self.cut_length
    }

    /// Order-independent hash of the labeling, maintained under flips.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Fingerprint of the plan obtained by moving `v` to `to`.
    #[inline]
    pub fn fingerprint_after(&self, v: usize, to: usize) -> u64 {
        self.fingerprint ^ zobrist(v, self.labels[v]) ^ zobrist(v, to as u16)
    }

    /// Area-weighted centroid of a district.
    pub fn district_centroid(&self, district: usize) -> Result<Point, PlanError> {
        self.stats
            .get(district)
            .and_then(DistrictStats::centroid)
            .ok_or(PlanError::EmptyDistrict(district + 1))
    }

    /// Vertices of one district, ascending.
    pub fn members(&self, district: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &d)| d as usize == district)
            .map(|(v, _)| v)
            .collect()
    }

    /// Applies `F_(u,v)` after checking its preconditions.
    pub fn apply_flip(&mut self, graph: &PrecinctGraph, flip: Flip) -> Result<(), PlanError> {
        let Flip { u, v } = flip;
        if u >= self.labels.len() || v >= self.labels.len() || !graph.are_adjacent(u, v) {
            return Err(PlanError::BadFlip {
                u,
                v,
                reason: "vertices are not adjacent".into(),
            });
        }
        if self.labels[u] == self.labels[v] {
            return Err(PlanError::BadFlip {
                u,
                v,
                reason: "endpoints already share a district".into(),
            });
        }
        self.move_vertex(graph, v, self.labels[u] as usize);
        Ok(())
    }

    /// Reassigns `v` to `to`, updating only the two touched districts.
    ///
    /// The caller guarantees `to` differs from the current district.
    pub fn move_vertex(&mut self, graph: &PrecinctGraph, v: usize, to: usize) {
        let from = self.labels[v] as usize;
        debug_assert_ne!(from, to);
        let node = graph.node(v);
        {
            let s = &mut self.stats[from];
            s.pop -= node.pop;
            s.area -= node.area;
            s.moment[0] -= node.area * node.centroid[0];
            s.moment[1] -= node.area * node.centroid[1];
            s.count -= 1;
        }
        {
            let s = &mut self.stats[to];
            s.pop += node.pop;
            s.area += node.area;
            s.moment[0] += node.area * node.centroid[0];
            s.moment[1] += node.area * node.centroid[1];
            s.count += 1;
        }
        for &(w, e) in graph.incident(v) {
            let dw = self.labels[w as usize] as usize;
            let shared = graph.edges()[e as usize].shared;
            if dw == from {
                self.cut_edges += 1;
                self.cut_length += shared;
            } else if dw == to {
                self.cut_edges -= 1;
                self.cut_length -= shared;
            }
        }
        self.fingerprint = self.fingerprint_after(v, to);
        self.labels[v] = to as u16;
    }

    /// True when every cache agrees with a from-scratch recomputation
    /// (exact for counts, `rel_tol` relative for real aggregates).
    pub fn caches_consistent(&self, graph: &PrecinctGraph, rel_tol: f64) -> bool {
        let fresh = self.recomputed(graph);
        let close = |a: f64, b: f64| (a - b).abs() <= rel_tol * a.abs().max(b.abs()).max(1.0);
        fresh.cut_edges == self.cut_edges
            && fresh.fingerprint == self.fingerprint
            && close(fresh.cut_length, self.cut_length)
            && fresh.stats.iter().zip(&self.stats).all(|(a, b)| {
                a.count == b.count
                    && close(a.pop, b.pop)
                    && close(a.area, b.area)
                    && close(a.moment[0], b.moment[0])
                    && close(a.moment[1], b.moment[1])
            })
    }

    /// Writes the plan as CSV with header `vertex_id,district` (1-based).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PlanError> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["vertex_id", "district"])?;
        for (v, &d) in self.labels.iter().enumerate() {
            out.write_record([v.to_string(), (d as usize + 1).to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a `vertex_id,district` CSV plan.
    pub fn read_csv<R: Read>(
        graph: &PrecinctGraph,
        reader: R,
        n_districts: usize,
    ) -> Result<Self, PlanError> {
        let mut input = csv::Reader::from_reader(reader);
        let headers = input.headers()?.clone();
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["vertex_id", "district"] {
            return Err(PlanError::Format(format!(
                "expected header vertex_id,district, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let n = graph.num_vertices();
        let mut districts = vec![0usize; n];
        let mut seen = vec![false; n];
        for record in input.records() {
            let record = record?;
            let parse = |i: usize| -> Result<usize, PlanError> {
                record
                    .get(i)
                    .map(str::trim)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| PlanError::Format(format!("bad row {:?}", record)))
            };
            let (v, d) = (parse(0)?, parse(1)?);
            if v >= n || seen[v] {
                return Err(PlanError::Format(format!("vertex id {v} unknown or repeated")));
            }
            seen[v] = true;
            districts[v] = d;
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(PlanError::Format(format!("vertex {v} has no district")));
        }
        Self::from_one_based(graph, &districts, n_districts)
    }
}

/// Connectivity of the subgraph induced by `district`, optionally with
/// one vertex removed. Empty sets count as disconnected.
pub fn district_connected(
    graph: &PrecinctGraph,
    plan: &Plan,
    district: usize,
    removed: Option<usize>,
) -> bool {
    let inside = |w: usize| plan.district_of(w) == district && Some(w) != removed;
    induced_connected(graph, inside)
}

/// Connectivity of the vertices outside `district`; used as the simple
/// connectivity test for three or more districts.
pub fn complement_connected(graph: &PrecinctGraph, plan: &Plan, district: usize) -> bool {
    induced_connected(graph, |w| plan.district_of(w) != district)
}

fn induced_connected(graph: &PrecinctGraph, inside: impl Fn(usize) -> bool) -> bool {
    let n = graph.num_vertices();
    let Some(start) = (0..n).find(|&w| inside(w)) else {
        return false;
    };
    let total = (0..n).filter(|&w| inside(w)).count();
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut reached = 1;
    while let Some(w) = queue.pop_front() {
        for x in graph.neighbors(w) {
            if !seen[x] && inside(x) {
                seen[x] = true;
                reached += 1;
                queue.push_back(x);
            }
        }
    }
    reached == total
}

/// Whether `plan` satisfies every enabled predicate of `validity`.
pub fn is_valid(graph: &PrecinctGraph, plan: &Plan, validity: &ValiditySpec) -> bool {
    (0..plan.n_districts()).all(|d| {
        let s = plan.stats(d);
        s.count > 0
            && validity.pop_ok(s.pop)
            && (!validity.require_connected || district_connected(graph, plan, d, None))
            && (!validity.require_simply_connected
                || plan.n_districts() < 2
                || complement_connected(graph, plan, d))
    })
}

/// Validity of `F_(u,v)(plan)` by breadth-first search on the shrinking
/// district. Assumes `plan` itself is valid.
pub fn flip_is_valid(
    graph: &PrecinctGraph,
    plan: &Plan,
    validity: &ValiditySpec,
    flip: Flip,
) -> bool {
    let Flip { u, v } = flip;
    let (from, to) = (plan.district_of(v), plan.district_of(u));
    if from == to || !graph.are_adjacent(u, v) {
        return false;
    }
    let pop = graph.pop(v);
    if plan.stats(from).count <= 1
        || !validity.pop_ok(plan.stats(from).pop - pop)
        || !validity.pop_ok(plan.stats(to).pop + pop)
    {
        return false;
    }
    if validity.require_connected && !district_connected(graph, plan, from, Some(v)) {
        return false;
    }
    if validity.require_simply_connected && plan.n_districts() >= 2 {
        let mut after = plan.clone();
        after.move_vertex(graph, v, to);
        return (0..after.n_districts()).all(|d| complement_connected(graph, &after, d));
    }
    true
}

/// Horizontal stripes of rows on a lattice; with two districts, district
/// 0 holds the northern (high row) half.
pub fn lattice_stripes(graph: &PrecinctGraph, n_districts: usize) -> Result<Plan, PlanError> {
    let shape = graph
        .lattice_shape()
        .ok_or_else(|| PlanError::Format("stripe plans need a lattice graph".into()))?;
    if n_districts == 0 || n_districts > shape.height {
        return Err(PlanError::Format(format!(
            "cannot cut {} rows into {n_districts} stripes",
            shape.height
        )));
    }
    let labels = (0..graph.num_vertices())
        .map(|v| {
            let row = v / shape.width;
            let from_top = shape.height - 1 - row;
            (from_top * n_districts / shape.height) as u16
        })
        .collect();
    Plan::from_labels(graph, labels, n_districts)
}

/// Vertical stripes of columns on a lattice, district 0 leftmost.
pub fn lattice_columns(graph: &PrecinctGraph, n_districts: usize) -> Result<Plan, PlanError> {
    let shape = graph
        .lattice_shape()
        .ok_or_else(|| PlanError::Format("stripe plans need a lattice graph".into()))?;
    if n_districts == 0 || n_districts > shape.width {
        return Err(PlanError::Format(format!(
            "cannot cut {} columns into {n_districts} stripes",
            shape.width
        )));
    }
    let labels = (0..graph.num_vertices())
        .map(|v| ((v % shape.width) * n_districts / shape.width) as u16)
        .collect();
    Plan::from_labels(graph, labels, n_districts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid, build_lattice};

    fn path4() -> PrecinctGraph {
        build_grid(4, 1).unwrap()
    }

    #[test]
    fn flip_on_path() {
        let g = path4();
        let mut plan = Plan::from_one_based(&g, &[1, 1, 2, 2], 2).unwrap();
        plan.apply_flip(&g, Flip::new(1, 2)).unwrap();
        assert_eq!(plan.labels(), &[0, 0, 0, 1]);
        assert!(plan.caches_consistent(&g, 0.0));
    }

    #[test]
    fn flip_preconditions() {
        let g = path4();
        let mut plan = Plan::from_one_based(&g, &[1, 1, 2, 2], 2).unwrap();
        assert!(matches!(plan.apply_flip(&g, Flip::new(0, 1)), Err(PlanError::BadFlip { .. })));
        assert!(matches!(plan.apply_flip(&g, Flip::new(0, 3)), Err(PlanError::BadFlip { .. })));
    }

    #[test]
    fn flip_then_restore() {
        let g = build_lattice(4, 4).unwrap();
        let original = lattice_stripes(&g, 2).unwrap();
        let mut plan = original.clone();
        // vertex 9 (row 2) is in district 0, vertex 5 (row 1) in district 1
        let old = plan.district_of(5);
        plan.apply_flip(&g, Flip::new(9, 5)).unwrap();
        let w = g.neighbors(5).find(|&w| plan.district_of(w) == old).unwrap();
        plan.apply_flip(&g, Flip::new(w, 5)).unwrap();
        assert_eq!(plan.labels(), original.labels());
        assert_eq!(plan.fingerprint(), original.fingerprint());
    }

    #[test]
    fn horizontal_cut_transfer() {
        let g = build_lattice(10, 10).unwrap();
        let mut plan = lattice_stripes(&g, 2).unwrap();
        assert_eq!((plan.stats(0).count, plan.stats(1).count), (50, 50));
        assert_eq!(plan.cut_edges(), 10);
        // vertex 53 (row 5) north, vertex 43 (row 4) south
        plan.apply_flip(&g, Flip::new(53, 43)).unwrap();
        assert_eq!((plan.stats(0).pop, plan.stats(1).pop), (51.0, 49.0));
    }

    #[test]
    fn validity_examples() {
        let g = build_lattice(10, 10).unwrap();
        let spec = ValiditySpec::new(45.0, 55.0);
        let cut = lattice_stripes(&g, 2).unwrap();
        assert!(is_valid(&g, &cut, &spec));
        let lopsided: Vec<u16> = (0..100).map(|v| if v / 10 >= 6 { 0 } else { 1 }).collect();
        let lopsided = Plan::from_labels(&g, lopsided, 2).unwrap();
        assert!(!is_valid(&g, &lopsided, &spec));
        // district 0 = top two rows plus the bottom row: split in two pieces
        let split: Vec<u16> = (0..100)
            .map(|v| if v / 10 >= 8 || v / 10 == 0 { 0 } else { 1 })
            .collect();
        let split = Plan::from_labels(&g, split, 2).unwrap();
        assert!(!is_valid(&g, &split, &ValiditySpec::connected_only()));
    }

    #[test]
    fn centroids() {
        let g = build_lattice(10, 10).unwrap();
        let plan = lattice_stripes(&g, 2).unwrap();
        assert_eq!(plan.district_centroid(0).unwrap(), [4.5, 7.0]);
        let single = build_lattice(5, 5).unwrap();
        let labels: Vec<u16> = (0..25).map(|v| if v == 23 { 1 } else { 0 }).collect();
        let plan = Plan::from_labels(&single, labels, 2).unwrap();
        assert_eq!(plan.district_centroid(1).unwrap(), [3.0, 4.0]);
        let labels = vec![0u16; 25];
        let plan = Plan::from_labels(&single, labels, 2).unwrap();
        assert!(matches!(plan.district_centroid(1), Err(PlanError::EmptyDistrict(2))));
    }

    #[test]
    fn csv_round_trip() {
        let g = build_lattice(3, 3).unwrap();
        let plan = lattice_columns(&g, 3).unwrap();
        let mut buf = Vec::new();
        plan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("vertex_id,district\n0,1\n1,2\n2,3\n"));
        let back = Plan::read_csv(&g, buf.as_slice(), 3).unwrap();
        assert_eq!(back, plan);
        assert!(Plan::read_csv(&g, "vertex_id,district\n0,1\n".as_bytes(), 3).is_err());
        assert!(Plan::read_csv(&g, "id,d\n".as_bytes(), 3).is_err());
    }

    #[test]
    fn bfs_flip_validity_matches_full_check() {
        let g = build_lattice(4, 4).unwrap();
        let spec = ValiditySpec::new(6.0, 10.0);
        let plan = lattice_stripes(&g, 2).unwrap();
        for e in g.edges() {
            for flip in [Flip::new(e.u, e.v), Flip::new(e.v, e.u)] {
                if plan.district_of(flip.u) == plan.district_of(flip.v) {
                    continue;
                }
                let mut after = plan.clone();
                after.apply_flip(&g, flip).unwrap();
                assert_eq!(flip_is_valid(&g, &plan, &spec, flip), is_valid(&g, &after, &spec));
            }
        }
    }
}
