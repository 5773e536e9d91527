//! Score function `J = w_pop * J_pop + w_c * J_c` and its local update
//! under single-node flips. The target is the Gibbs measure `exp(-J)`.

use serde::{Deserialize, Serialize};

use crate::graph::PrecinctGraph;
use crate::plan::Plan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopMode {
    /// `J_pop = 0` when every district population is within
    /// `[pop_min, pop_max]`, `+inf` otherwise. Enforced regardless of
    /// `w_pop`.
    HardBounds,
    /// `J_pop = sum_i (pop_i - pop_target)^2`, unnormalized.
    SquaredDeviation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompactMode {
    /// Number of cut edges (unordered).
    ConflictedEdgeCount,
    /// Total shared boundary length across cut edges.
    SharedBoundaryLength,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub w_pop: f64,
    pub w_c: f64,
    pub pop_mode: PopMode,
    #[serde(default = "neg_inf")]
    pub pop_min: f64,
    #[serde(default = "pos_inf")]
    pub pop_max: f64,
    #[serde(default)]
    pub pop_target: f64,
    pub compact_mode: CompactMode,
    #[serde(default = "one")]
    pub compact_scale: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}
fn pos_inf() -> f64 {
    f64::INFINITY
}
fn one() -> f64 {
    1.0
}

impl ScoreSpec {
    /// Hard population bounds plus cut-edge compactness with unit weight.
    pub fn cut_edges_with_bounds(pop_min: f64, pop_max: f64) -> Self {
        ScoreSpec {
            w_pop: 1.0,
            w_c: 1.0,
            pop_mode: PopMode::HardBounds,
            pop_min,
            pop_max,
            pop_target: 0.0,
            compact_mode: CompactMode::ConflictedEdgeCount,
            compact_scale: 1.0,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.w_pop >= 0.0 && self.w_c >= 0.0) {
            return Err("score weights must be nonnegative".into());
        }
        if !self.compact_scale.is_finite() || self.compact_scale < 0.0 {
            return Err("compact_scale must be a nonnegative number".into());
        }
        let pop_enabled = self.pop_mode == PopMode::HardBounds || self.w_pop > 0.0;
        let compact_enabled = self.w_c > 0.0 && self.compact_scale > 0.0;
        if !pop_enabled && !compact_enabled {
            return Err("at least one sub-score must be enabled".into());
        }
        if self.pop_mode == PopMode::HardBounds && self.pop_min > self.pop_max {
            return Err("pop_min must not exceed pop_max".into());
        }
        Ok(())
    }

    #[inline]
    fn pop_term(&self, pop: f64) -> f64 {
        match self.pop_mode {
            PopMode::HardBounds => {
                if pop >= self.pop_min && pop <= self.pop_max {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            PopMode::SquaredDeviation => {
                let d = pop - self.pop_target;
                self.w_pop * d * d
            }
        }
    }

    #[inline]
    fn compact_weight(&self) -> f64 {
        self.w_c * self.compact_scale
    }
}

/// `J(plan)`; `+inf` when a hard population bound is violated.
pub fn total_score(plan: &Plan, spec: &ScoreSpec) -> f64 {
    let pop: f64 = plan.all_stats().iter().map(|s| spec.pop_term(s.pop)).sum();
    if pop.is_infinite() {
        return f64::INFINITY;
    }
    let compact = match spec.compact_mode {
        CompactMode::ConflictedEdgeCount => plan.cut_edges() as f64,
        CompactMode::SharedBoundaryLength => plan.cut_length(),
    };
    pop + spec.compact_weight() * compact
}

/// `J(plan with v moved to district `to`) - J(plan)`, touching only the
/// two modified districts. `+inf` if the move breaks a hard bound.
#[inline]
pub fn move_delta(graph: &PrecinctGraph, plan: &Plan, v: usize, to: usize, spec: &ScoreSpec) -> f64 {
    let from = plan.district_of(v);
    let p = graph.pop(v);
    let (pf, pt) = (plan.stats(from).pop, plan.stats(to).pop);
    let pop_delta = match spec.pop_mode {
        PopMode::HardBounds => {
            if spec.pop_term(pf - p).is_infinite() || spec.pop_term(pt + p).is_infinite() {
                return f64::INFINITY;
            }
            0.0
        }
        PopMode::SquaredDeviation => {
            spec.pop_term(pf - p) - spec.pop_term(pf) + spec.pop_term(pt + p) - spec.pop_term(pt)
        }
    };
    let weight = spec.compact_weight();
    if weight == 0.0 {
        return pop_delta;
    }
    // Edges to `from` become cut; edges to `to` stop being cut.
    let compact_delta = match spec.compact_mode {
        CompactMode::ConflictedEdgeCount => {
            let mut delta = 0i64;
            for w in graph.neighbors(v) {
                let d = plan.district_of(w);
                if d == from {
                    delta += 1;
                } else if d == to {
                    delta -= 1;
                }
            }
            delta as f64
        }
        CompactMode::SharedBoundaryLength => {
            let mut delta = 0.0;
            for &(w, e) in graph.incident(v) {
                let d = plan.district_of(w as usize);
                let shared = graph.edges()[e as usize].shared;
                if d == from {
                    delta += shared;
                } else if d == to {
                    delta -= shared;
                }
            }
            delta
        }
    };
    pop_delta + weight * compact_delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_lattice;
    use crate::plan::{lattice_stripes, Flip};

    #[test]
    fn straight_cut_scores_ten() {
        let g = build_lattice(10, 10).unwrap();
        let spec = ScoreSpec::cut_edges_with_bounds(45.0, 55.0);
        let plan = lattice_stripes(&g, 2).unwrap();
        assert_eq!(total_score(&plan, &spec), 10.0);
    }

    #[test]
    fn out_of_bounds_is_infinite() {
        let g = build_lattice(10, 10).unwrap();
        let spec = ScoreSpec::cut_edges_with_bounds(45.0, 55.0);
        // district 0 = rows 5..9 minus six vertices of row 5 -> 44 vertices
        let labels: Vec<u16> = (0..100)
            .map(|v| if v / 10 >= 5 && !(50..56).contains(&v) { 0 } else { 1 })
            .collect();
        let plan = Plan::from_labels(&g, labels, 2).unwrap();
        assert_eq!(plan.stats(0).count, 44);
        assert_eq!(total_score(&plan, &spec), f64::INFINITY);
    }

    #[test]
    fn single_district_compactness_only() {
        let g = build_lattice(3, 3).unwrap();
        let spec = ScoreSpec {
            w_pop: 0.0,
            pop_mode: PopMode::SquaredDeviation,
            ..ScoreSpec::cut_edges_with_bounds(0.0, 0.0)
        };
        let plan = Plan::from_labels(&g, vec![0; 9], 1).unwrap();
        assert_eq!(total_score(&plan, &spec), 0.0);
    }

    #[test]
    fn notch_costs_two() {
        let g = build_lattice(10, 10).unwrap();
        let spec = ScoreSpec::cut_edges_with_bounds(45.0, 55.0);
        let mut plan = lattice_stripes(&g, 2).unwrap();
        let before = total_score(&plan, &spec);
        // vertex 45 (row 4, interior column) joins the north district
        let delta = move_delta(&g, &plan, 45, 0, &spec);
        assert_eq!(delta, 2.0);
        plan.apply_flip(&g, Flip::new(55, 45)).unwrap();
        assert_eq!(total_score(&plan, &spec) - before, 2.0);
        let back = move_delta(&g, &plan, 45, 1, &spec);
        assert_eq!(delta + back, 0.0);
    }

    #[test]
    fn squared_deviation_delta() {
        let g = build_lattice(4, 4).unwrap();
        let spec = ScoreSpec {
            w_pop: 0.5,
            w_c: 2.0,
            pop_mode: PopMode::SquaredDeviation,
            pop_min: f64::NEG_INFINITY,
            pop_max: f64::INFINITY,
            pop_target: 8.0,
            compact_mode: CompactMode::SharedBoundaryLength,
            compact_scale: 1.5,
        };
        let plan = lattice_stripes(&g, 2).unwrap();
        let delta = move_delta(&g, &plan, 5, 0, &spec);
        let mut after = plan.clone();
        after.move_vertex(&g, 5, 0);
        let direct = total_score(&after, &spec) - total_score(&plan, &spec);
        assert!((delta - direct).abs() < 1e-12);
        // 0.5 * (9-8)^2 + 0.5 * (7-8)^2 + 2 * 1.5 * 2 cut edges more
        assert!((direct - (1.0 + 6.0)).abs() < 1e-12);
    }

    #[test]
    fn spec_checks() {
        let mut spec = ScoreSpec::cut_edges_with_bounds(45.0, 55.0);
        assert!(spec.check().is_ok());
        spec.pop_mode = PopMode::SquaredDeviation;
        spec.w_pop = 0.0;
        spec.w_c = 0.0;
        assert!(spec.check().is_err());
    }
}
