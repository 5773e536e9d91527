//! Conflicted edges, the single-node-flip neighborhood `N(plan)` and the
//! district graph.
//!
//! A neighborhood member is identified by the moved vertex and its new
//! district, so two conflicted orientations `(u,v)`, `(u',v)` with
//! `u`, `u'` in the same district yield one member.

use std::collections::BTreeSet;

use crate::model::Model;
use crate::plan::{flip_is_valid, Flip, Plan};
use crate::score::{move_delta, total_score};

/// One member of `N(plan)`: vertex `vertex` moves from `from` to `to`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Move {
    pub vertex: u32,
    pub from: u16,
    pub to: u16,
    /// Smallest neighbor of `vertex` in district `to`.
    pub source: u32,
    /// Score change `J(after) - J(before)`.
    pub delta: f64,
}

impl Move {
    pub fn flip(&self) -> Flip {
        Flip::new(self.source as usize, self.vertex as usize)
    }

    #[inline]
    pub fn vertex(&self) -> usize {
        self.vertex as usize
    }

    #[inline]
    pub fn from(&self) -> usize {
        self.from as usize
    }

    #[inline]
    pub fn to(&self) -> usize {
        self.to as usize
    }
}

/// `N(plan)` with the score of every member, sorted by `(vertex, to)`.
#[derive(Clone, Debug, Default)]
pub struct Neighborhood {
    pub energy: f64,
    pub moves: Vec<Move>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    /// `J` of the plan reached by move `i`.
    #[inline]
    pub fn energy_of(&self, i: usize) -> f64 {
        self.energy + self.moves[i].delta
    }

    /// Index of the move sending `vertex` to `to`.
    pub fn find(&self, vertex: usize, to: usize) -> Option<usize> {
        self.moves
            .binary_search_by(|m| (m.vertex as usize, m.to as usize).cmp(&(vertex, to)))
            .ok()
    }
}

/// Reusable scratch space for neighborhood construction.
///
/// Connectivity after removing a vertex is decided from the articulation
/// points of each district's induced subgraph, found with one
/// depth-first pass per district.
#[derive(Clone, Debug, Default)]
pub struct NeighborhoodBuilder {
    disc: Vec<u32>,
    low: Vec<u32>,
    is_cut: Vec<bool>,
    stack: Vec<(u32, u32, u32)>,
    targets: Vec<(u16, u32)>,
}

impl NeighborhoodBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn articulation_points(&mut self, model: &Model, plan: &Plan) {
        let graph = &model.graph;
        let n = graph.num_vertices();
        self.disc.clear();
        self.disc.resize(n, 0);
        self.low.clear();
        self.low.resize(n, 0);
        self.is_cut.clear();
        self.is_cut.resize(n, false);
        let labels = plan.labels();
        let mut timer = 0u32;
        for root in 0..n {
            if self.disc[root] != 0 {
                continue;
            }
            timer += 1;
            self.disc[root] = timer;
            self.low[root] = timer;
            let mut root_children = 0;
            self.stack.clear();
            self.stack.push((root as u32, u32::MAX, 0));
            while let Some(top) = self.stack.last_mut() {
                let (v, parent, idx) = (top.0 as usize, top.1, top.2 as usize);
                let row = graph.incident(v);
                if idx < row.len() {
                    top.2 += 1;
                    let w = row[idx].0 as usize;
                    if labels[w] != labels[v] {
                        continue;
                    }
                    if self.disc[w] == 0 {
                        timer += 1;
                        self.disc[w] = timer;
                        self.low[w] = timer;
                        if v == root {
                            root_children += 1;
                        }
                        self.stack.push((w as u32, v as u32, 0));
                    } else if w as u32 != parent {
                        self.low[v] = self.low[v].min(self.disc[w]);
                    }
                } else {
                    self.stack.pop();
                    if let Some(&(p, _, _)) = self.stack.last() {
                        let p = p as usize;
                        self.low[p] = self.low[p].min(self.low[v]);
                        if p != root && self.low[v] >= self.disc[p] {
                            self.is_cut[p] = true;
                        }
                    }
                }
            }
            if root_children > 1 {
                self.is_cut[root] = true;
            }
        }
    }

    /// Computes `N(plan)` into `out`. `plan` must belong to the space.
    pub fn build_into(&mut self, model: &Model, plan: &Plan, out: &mut Neighborhood) {
        let graph = &model.graph;
        let validity = &model.validity;
        out.moves.clear();
        out.energy = total_score(plan, &model.score);
        if validity.require_connected {
            self.articulation_points(model, plan);
        }
        for v in 0..graph.num_vertices() {
            let from = plan.district_of(v);
            self.targets.clear();
            for w in graph.neighbors(v) {
                let d = plan.district_of(w);
                if d != from && !self.targets.iter().any(|&(t, _)| t as usize == d) {
                    self.targets.push((d as u16, w as u32));
                }
            }
            if self.targets.is_empty() {
                continue;
            }
            let stats_from = plan.stats(from);
            if stats_from.count <= 1 {
                continue;
            }
            if validity.require_connected && self.is_cut[v] {
                continue;
            }
            let pop = graph.pop(v);
            if !validity.pop_ok(stats_from.pop - pop) {
                continue;
            }
            self.targets.sort_unstable();
            for &(to, source) in &self.targets {
                let to = to as usize;
                if !validity.pop_ok(plan.stats(to).pop + pop) {
                    continue;
                }
                if validity.require_simply_connected
                    && !flip_is_valid(graph, plan, validity, Flip::new(source as usize, v))
                {
                    continue;
                }
                let delta = move_delta(graph, plan, v, to, &model.score);
                if !delta.is_finite() {
                    continue;
                }
                out.moves.push(Move {
                    vertex: v as u32,
                    from: from as u16,
                    to: to as u16,
                    source,
                    delta,
                });
            }
        }
    }

    pub fn build(&mut self, model: &Model, plan: &Plan) -> Neighborhood {
        let mut out = Neighborhood::default();
        self.build_into(model, plan, &mut out);
        out
    }
}

/// `N(plan)` computed with a fresh builder.
pub fn neighborhood(model: &Model, plan: &Plan) -> Neighborhood {
    NeighborhoodBuilder::new().build(model, plan)
}

/// `C(plan)`: every ordered pair `(u,v)` of adjacent vertices in
/// different districts whose flip stays in the plan space, sorted.
pub fn conflicted_edges(model: &Model, plan: &Plan) -> Vec<Flip> {
    let nb = neighborhood(model, plan);
    let mut out = Vec::new();
    for m in &nb.moves {
        for u in model.graph.neighbors(m.vertex()) {
            if plan.district_of(u) == m.to() {
                out.push(Flip::new(u, m.vertex()));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Members of `N(plan)` as plans, each with one generating flip.
pub fn valid_neighborhood(model: &Model, plan: &Plan) -> Vec<(Plan, Flip)> {
    neighborhood(model, plan)
        .moves
        .iter()
        .map(|m| {
            let mut next = plan.clone();
            next.move_vertex(&model.graph, m.vertex(), m.to());
            (next, m.flip())
        })
        .collect()
}

/// Unordered district pairs `(i,j)`, `i < j`, sharing at least one
/// conflicted orientation.
pub fn district_graph(model: &Model, plan: &Plan) -> BTreeSet<(usize, usize)> {
    neighborhood(model, plan)
        .moves
        .iter()
        .map(|m| (m.from().min(m.to()), m.from().max(m.to())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_lattice;
    use crate::plan::{flip_is_valid, is_valid, lattice_columns, lattice_stripes, ValiditySpec};
    use crate::score::ScoreSpec;

    fn lattice_model(side: usize, n_districts: usize, lo: f64, hi: f64) -> Model {
        Model::new(
            build_lattice(side, side).unwrap(),
            n_districts,
            ValiditySpec::new(lo, hi),
            ScoreSpec::cut_edges_with_bounds(lo, hi),
        )
        .unwrap()
    }

    #[test]
    fn straight_cut_has_twenty_conflicts() {
        let model = lattice_model(10, 2, 45.0, 55.0);
        let plan = lattice_stripes(&model.graph, 2).unwrap();
        assert_eq!(conflicted_edges(&model, &plan).len(), 20);
        let nb = valid_neighborhood(&model, &plan);
        assert_eq!(nb.len(), 20);
        let distinct: BTreeSet<_> = nb.iter().map(|(p, _)| p.labels().to_vec()).collect();
        assert_eq!(distinct.len(), 20);
    }

    #[test]
    fn single_district_is_isolated() {
        let graph = build_lattice(4, 4).unwrap();
        let model = Model::new(
            graph,
            1,
            ValiditySpec::connected_only(),
            ScoreSpec::cut_edges_with_bounds(f64::NEG_INFINITY, f64::INFINITY),
        )
        .unwrap();
        let plan = Plan::from_labels(&model.graph, vec![0; 16], 1).unwrap();
        assert!(conflicted_edges(&model, &plan).is_empty());
        assert!(valid_neighborhood(&model, &plan).is_empty());
    }

    #[test]
    fn brute_force_conflicts_on_4x4() {
        let model = lattice_model(4, 2, 6.0, 10.0);
        // an L-shaped district 0 so some flips disconnect it
        let labels: Vec<u16> = (0..16)
            .map(|v| if v / 4 == 3 || v % 4 == 0 { 0 } else { 1 })
            .collect();
        let plan = Plan::from_labels(&model.graph, labels, 2).unwrap();
        assert!(is_valid(&model.graph, &plan, &model.validity));
        let mut expected = Vec::new();
        for u in 0..16 {
            for v in model.graph.neighbors(u) {
                if plan.district_of(u) == plan.district_of(v) {
                    continue;
                }
                let mut after = plan.clone();
                after.apply_flip(&model.graph, Flip::new(u, v)).unwrap();
                if model.admits(&after) {
                    expected.push(Flip::new(u, v));
                }
            }
        }
        expected.sort_unstable();
        let got = conflicted_edges(&model, &plan);
        assert_eq!(got, expected);
        // vertex 8 links the bottom of column 0 to the top row
        assert!(!got.contains(&Flip::new(9, 8)));
        assert!(got.contains(&Flip::new(4, 5)));
    }

    #[test]
    fn neighborhood_symmetry() {
        let model = lattice_model(4, 2, 6.0, 10.0);
        let plan = lattice_stripes(&model.graph, 2).unwrap();
        for (next, _) in valid_neighborhood(&model, &plan) {
            let back = valid_neighborhood(&model, &next);
            assert!(back.iter().any(|(p, _)| *p == plan));
        }
    }

    #[test]
    fn articulation_matches_bfs() {
        let model = lattice_model(6, 3, 8.0, 16.0);
        let plan = lattice_columns(&model.graph, 3).unwrap();
        let nb = neighborhood(&model, &plan);
        let mut count = 0;
        for v in 0..36 {
            for d in 0..3 {
                if d == plan.district_of(v) {
                    continue;
                }
                let Some(u) = model.graph.neighbors(v).find(|&u| plan.district_of(u) == d) else {
                    continue;
                };
                let bfs = flip_is_valid(&model.graph, &plan, &model.validity, Flip::new(u, v));
                assert_eq!(bfs, nb.find(v, d).is_some(), "vertex {v} to {d}");
                count += usize::from(bfs);
            }
        }
        assert_eq!(count, nb.len());
    }

    #[test]
    fn district_graph_examples() {
        let model = lattice_model(10, 3, 20.0, 50.0);
        let plan = lattice_columns(&model.graph, 3).unwrap();
        let dg = district_graph(&model, &plan);
        assert_eq!(dg.into_iter().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);

        let two = lattice_model(10, 2, 45.0, 55.0);
        let plan = lattice_stripes(&two.graph, 2).unwrap();
        assert_eq!(district_graph(&two, &plan).into_iter().collect::<Vec<_>>(), vec![(0, 1)]);

        // three mutually adjacent districts: north half, south-west, south-east
        let labels: Vec<u16> = (0..100)
            .map(|v| if v / 10 >= 5 { 0 } else if v % 10 < 5 { 1 } else { 2 })
            .collect();
        let plan = Plan::from_labels(&model.graph, labels, 3).unwrap();
        let model3 = lattice_model(10, 3, 20.0, 55.0);
        assert_eq!(
            district_graph(&model3, &plan).into_iter().collect::<Vec<_>>(),
            vec![(0, 1), (0, 2), (1, 2)]
        );
    }
}
