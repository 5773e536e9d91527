//! Tempered single-node-flip proposal and the reversible
//! Metropolis-Hastings chain built on it.
//!
//! The proposal restricted to a candidate set `S` draws `p` with
//! probability `exp(-beta J(p)) / Z_beta(S)`. All partition functions are
//! carried as logarithms.

use rand::distributions::Open01;
use rand::Rng;

use crate::error::SamplerError;
use crate::model::Model;
use crate::neighborhood::{Neighborhood, NeighborhoodBuilder};
use crate::plan::Plan;

/// `log sum exp(-beta * J)` over the given scores; `-inf` when empty.
pub fn log_partition<I>(energies: I, beta: f64) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = energies.into_iter();
    let Some(top) = iter.clone().map(|j| -beta * j).reduce(f64::max) else {
        return f64::NEG_INFINITY;
    };
    if top == f64::NEG_INFINITY {
        return top;
    }
    let sum: f64 = iter.map(|j| (-beta * j - top).exp()).sum();
    top + sum.ln()
}

/// `log Z_beta(subset)` for a subset of the neighborhood given by move
/// indices.
pub fn local_partition_function(nbhd: &Neighborhood, subset: &[usize], beta: f64) -> f64 {
    log_partition(subset.iter().map(|&i| nbhd.energy_of(i)), beta)
}

/// Draws an index of `energies` with probability proportional to
/// `exp(-beta * J)` using the Gumbel-max construction.
pub fn sample_tempered_index<R: Rng + ?Sized>(
    energies: impl Iterator<Item = f64>,
    beta: f64,
    rng: &mut R,
) -> Result<usize, SamplerError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, j) in energies.enumerate() {
        let u: f64 = rng.sample(Open01);
        let key = -beta * j - (-u.ln()).ln();
        if best.is_none_or(|(_, b)| key > b) {
            best = Some((i, key));
        }
    }
    best.map(|(i, _)| i).ok_or(SamplerError::EmptyCandidates)
}

/// Draws a member of `subset` (move indices of `nbhd`) from the tempered
/// law; returns the move index.
pub fn sample_tempered<R: Rng + ?Sized>(
    nbhd: &Neighborhood,
    subset: &[usize],
    beta: f64,
    rng: &mut R,
) -> Result<usize, SamplerError> {
    let k = sample_tempered_index(subset.iter().map(|&i| nbhd.energy_of(i)), beta, rng)?;
    Ok(subset[k])
}

/// Log acceptance ratio of the tempered single-node-flip chain:
/// `log [exp(-J' + beta J') Z(x) / (exp(-J + beta J) Z(x'))]`.
#[inline]
pub fn snf_log_ratio(beta: f64, energy: f64, energy_next: f64, log_z: f64, log_z_next: f64) -> f64 {
    (beta - 1.0) * (energy_next - energy) + log_z - log_z_next
}

fn neighborhood_log_z(nbhd: &Neighborhood, beta: f64) -> f64 {
    log_partition((0..nbhd.len()).map(|i| nbhd.energy_of(i)), beta)
}

/// Single-node-flip chain state. The neighborhood of the current plan is
/// kept between steps; after an accepted move the neighborhood computed
/// for the proposal becomes the current one.
#[derive(Clone, Debug)]
pub struct SnfChain {
    pub beta: f64,
    plan: Plan,
    current: Neighborhood,
    log_z: f64,
    proposal_plan: Plan,
    proposal: Neighborhood,
    builder: NeighborhoodBuilder,
}

impl SnfChain {
    pub fn new(model: &Model, plan: Plan, beta: f64) -> Result<Self, SamplerError> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(SamplerError::InvalidParameter(format!(
                "beta {beta} outside [0, 1]"
            )));
        }
        if !model.admits(&plan) {
            return Err(SamplerError::InvalidParameter(
                "initial plan is outside the plan space".into(),
            ));
        }
        let mut builder = NeighborhoodBuilder::new();
        let current = builder.build(model, &plan);
        let log_z = neighborhood_log_z(&current, beta);
        Ok(SnfChain {
            beta,
            proposal_plan: plan.clone(),
            plan,
            current,
            log_z,
            proposal: Neighborhood::default(),
            builder,
        })
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn energy(&self) -> f64 {
        self.current.energy
    }

    pub fn neighborhood(&self) -> &Neighborhood {
        &self.current
    }

    pub fn into_plan(self) -> Plan {
        self.plan
    }

    /// One Metropolis-Hastings step. Returns the moved vertex when the
    /// proposal is accepted; `None` on rejection or an empty neighborhood.
    pub fn step<R: Rng + ?Sized>(&mut self, model: &Model, rng: &mut R) -> Option<usize> {
        let n = self.current.len();
        if n == 0 {
            return None;
        }
        let k = sample_tempered_index((0..n).map(|i| self.current.energy_of(i)), self.beta, rng)
            .expect("nonempty neighborhood");
        let mv = self.current.moves[k];
        self.proposal_plan.clone_from(&self.plan);
        self.proposal_plan
            .move_vertex(&model.graph, mv.vertex(), mv.to());
        self.builder
            .build_into(model, &self.proposal_plan, &mut self.proposal);
        let log_z_next = neighborhood_log_z(&self.proposal, self.beta);
        let log_r = snf_log_ratio(
            self.beta,
            self.current.energy,
            self.proposal.energy,
            self.log_z,
            log_z_next,
        );
        let u: f64 = rng.gen();
        if u < log_r.exp() {
            std::mem::swap(&mut self.plan, &mut self.proposal_plan);
            std::mem::swap(&mut self.current, &mut self.proposal);
            self.log_z = log_z_next;
            Some(mv.vertex())
        } else {
            None
        }
    }
}

/// One step of the tempered single-node-flip Metropolis-Hastings chain on
/// `plan`; returns whether the proposal was accepted. An empty
/// neighborhood leaves the plan unchanged.
pub fn snf_mh_step<R: Rng + ?Sized>(
    model: &Model,
    plan: &mut Plan,
    beta: f64,
    rng: &mut R,
) -> Result<bool, SamplerError> {
    let mut chain = SnfChain::new(model, plan.clone(), beta)?;
    let accepted = chain.step(model, rng).is_some();
    *plan = chain.into_plan();
    Ok(accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_lattice;
    use crate::neighborhood::neighborhood;
    use crate::plan::{lattice_stripes, ValiditySpec};
    use crate::score::ScoreSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_function_examples() {
        assert!((log_partition(vec![3.0; 20], 0.0) - 20f64.ln()).abs() < 1e-15);
        assert_eq!(log_partition(Vec::<f64>::new(), 1.0), f64::NEG_INFINITY);
        let expected = ((-10f64).exp() + 2.0 * (-12f64).exp()).ln();
        assert!((log_partition(vec![10.0, 12.0, 12.0], 1.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn uniform_at_beta_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let energies = [1.0, 5.0, 2.0, 9.0, 0.5];
        let draws = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[sample_tempered_index(energies.iter().copied(), 0.0, &mut rng).unwrap()] += 1;
        }
        let expected = draws as f64 / 5.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 4 degrees of freedom, 99.9% quantile
        assert!(chi2 < 18.47, "chi2 = {chi2}");
    }

    #[test]
    fn singleton_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_tempered_index([4.0].into_iter(), 0.7, &mut rng).unwrap(), 0);
        }
        assert!(matches!(
            sample_tempered_index(std::iter::empty(), 1.0, &mut rng),
            Err(SamplerError::EmptyCandidates)
        ));
    }

    #[test]
    fn unit_gap_ratio_is_e() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let low = (0..draws)
            .filter(|_| sample_tempered_index([1.0, 2.0].into_iter(), 1.0, &mut rng).unwrap() == 0)
            .count() as f64;
        let p = std::f64::consts::E / (1.0 + std::f64::consts::E);
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!((low - draws as f64 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn ratio_special_cases() {
        // beta = 1: Z(x)/Z(x')
        assert!((snf_log_ratio(1.0, 10.0, 14.0, 2.0, 3.5) - (2.0 - 3.5)).abs() < 1e-15);
        // beta = 0: exp(-dJ) |N(x)| / |N(x')|
        let r = snf_log_ratio(0.0, 10.0, 12.0, 20f64.ln(), 22f64.ln());
        assert!((r - (-2.0 + (20.0f64 / 22.0).ln())).abs() < 1e-14);
    }

    #[test]
    fn chain_stays_valid() {
        let graph = build_lattice(10, 10).unwrap();
        let model = Model::new(
            graph,
            2,
            ValiditySpec::new(45.0, 55.0),
            ScoreSpec::cut_edges_with_bounds(45.0, 55.0),
        )
        .unwrap();
        let plan = lattice_stripes(&model.graph, 2).unwrap();
        let mut chain = SnfChain::new(&model, plan, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut accepted = 0;
        for step in 0..5_000 {
            accepted += usize::from(chain.step(&model, &mut rng).is_some());
            if step % 500 == 0 {
                assert!(model.admits(chain.plan()));
                assert!(chain.plan().caches_consistent(&model.graph, 1e-9));
                let fresh = neighborhood(&model, chain.plan());
                assert_eq!(fresh.moves, chain.neighborhood().moves);
            }
        }
        assert!(accepted > 100);
    }

    #[test]
    fn empty_neighborhood_rejects() {
        let graph = build_lattice(2, 2).unwrap();
        let model = Model::new(
            graph,
            2,
            ValiditySpec::new(2.0, 2.0),
            ScoreSpec::cut_edges_with_bounds(2.0, 2.0),
        )
        .unwrap();
        let mut plan = lattice_stripes(&model.graph, 2).unwrap();
        let before = plan.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(!snf_mh_step(&model, &mut plan, 1.0, &mut rng).unwrap());
        assert_eq!(plan, before);
    }
}
