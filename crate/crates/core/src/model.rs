use crate::graph::PrecinctGraph;
use crate::plan::{is_valid, Plan, ValiditySpec};
use crate::score::{total_score, ScoreSpec};

/// A sampling problem: the graph, the district count, the plan space
/// constraints and the score defining the target `exp(-J)`.
///
/// A plan belongs to the space iff it satisfies `validity` and has a
/// finite score.
#[derive(Clone, Debug)]
pub struct Model {
    pub graph: PrecinctGraph,
    pub n_districts: usize,
    pub validity: ValiditySpec,
    pub score: ScoreSpec,
}

impl Model {
    pub fn new(
        graph: PrecinctGraph,
        n_districts: usize,
        validity: ValiditySpec,
        score: ScoreSpec,
    ) -> Result<Self, String> {
        validity.check()?;
        score.check()?;
        if n_districts == 0 || n_districts > graph.num_vertices() {
            return Err(format!(
                "district count {n_districts} incompatible with {} vertices",
                graph.num_vertices()
            ));
        }
        Ok(Model {
            graph,
            n_districts,
            validity,
            score,
        })
    }

    pub fn admits(&self, plan: &Plan) -> bool {
        plan.n_districts() == self.n_districts
            && is_valid(&self.graph, plan, &self.validity)
            && total_score(plan, &self.score).is_finite()
    }

    /// `J(plan)`, or `+inf` outside the plan space.
    pub fn energy(&self, plan: &Plan) -> f64 {
        if self.admits(plan) {
            total_score(plan, &self.score)
        } else {
            f64::INFINITY
        }
    }
}
