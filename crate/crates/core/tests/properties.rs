//! Randomized invariants along random walks through the plan space.

use std::collections::BTreeSet;

use proptest::prelude::*;

use districtflow::flows::{orientation, VectorField};
use districtflow::graph::build_lattice;
use districtflow::neighborhood::neighborhood;
use districtflow::plan::{is_valid, lattice_stripes};
use districtflow::score::{total_score, CompactMode, PopMode};
use districtflow::{Model, NeighborhoodBuilder, Plan, ScoreSpec, ValiditySpec};

fn model(districts: usize, squared: bool) -> Model {
    let score = if squared {
        ScoreSpec {
            w_pop: 0.01,
            w_c: 0.7,
            pop_mode: PopMode::SquaredDeviation,
            pop_min: f64::NEG_INFINITY,
            pop_max: f64::INFINITY,
            pop_target: 25.0 / districts as f64,
            compact_mode: CompactMode::ConflictedEdgeCount,
            compact_scale: 1.0,
        }
    } else {
        ScoreSpec::cut_edges_with_bounds(4.0, 21.0)
    };
    let validity = if squared {
        ValiditySpec::connected_only()
    } else {
        ValiditySpec::new(4.0, 21.0)
    };
    Model::new(build_lattice(5, 5).unwrap(), districts, validity, score).unwrap()
}

/// Every `(vertex, to)` whose single reassignment yields a valid plan.
fn brute_force_moves(model: &Model, plan: &Plan) -> BTreeSet<(usize, usize)> {
    let g = &model.graph;
    let mut out = BTreeSet::new();
    for v in 0..g.num_vertices() {
        let from = plan.district_of(v);
        let targets: BTreeSet<usize> = g
            .neighbors(v)
            .map(|w| plan.district_of(w))
            .filter(|&d| d != from)
            .collect();
        for to in targets {
            let mut labels = plan.labels().to_vec();
            labels[v] = to as u16;
            let next = Plan::from_labels(g, labels, plan.n_districts()).unwrap();
            if is_valid(g, &next, &model.validity) {
                out.insert((v, to));
            }
        }
    }
    out
}

fn walk(model: &Model, picks: &[u32], mut visit: impl FnMut(&Plan)) {
    let mut plan = lattice_stripes(&model.graph, model.n_districts).unwrap();
    let mut builder = NeighborhoodBuilder::new();
    visit(&plan);
    for &p in picks {
        let nb = builder.build(model, &plan);
        if nb.is_empty() {
            break;
        }
        let mv = nb.moves[p as usize % nb.len()];
        plan.move_vertex(&model.graph, mv.vertex(), mv.to());
        visit(&plan);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn neighborhood_matches_brute_force(
        districts in 2usize..=3,
        squared in any::<bool>(),
        picks in prop::collection::vec(any::<u32>(), 0..40),
    ) {
        let model = model(districts, squared);
        walk(&model, &picks, |plan| {
            let nb = neighborhood(&model, plan);
            let fast: BTreeSet<(usize, usize)> =
                nb.moves.iter().map(|m| (m.vertex(), m.to())).collect();
            assert_eq!(fast.len(), nb.len());
            assert_eq!(fast, brute_force_moves(&model, plan));
        });
    }

    #[test]
    fn caches_and_deltas_stay_coherent(
        districts in 2usize..=3,
        squared in any::<bool>(),
        picks in prop::collection::vec(any::<u32>(), 1..40),
    ) {
        let model = model(districts, squared);
        walk(&model, &picks, |plan| {
            assert!(plan.caches_consistent(&model.graph, 1e-12));
            assert_eq!(plan, &plan.recomputed(&model.graph));
            let here = total_score(plan, &model.score);
            for mv in &neighborhood(&model, plan).moves {
                let mut next = plan.clone();
                next.move_vertex(&model.graph, mv.vertex(), mv.to());
                let there = total_score(&next, &model.score);
                assert!((mv.delta - (there - here)).abs() <= 1e-9 * there.abs().max(1.0));
            }
        });
    }

    #[test]
    fn flips_are_involutions(
        districts in 2usize..=3,
        picks in prop::collection::vec(any::<u32>(), 1..40),
    ) {
        let model = model(districts, false);
        walk(&model, &picks, |plan| {
            for mv in &neighborhood(&model, plan).moves {
                let mut next = plan.clone();
                assert_eq!(next.fingerprint_after(mv.vertex(), mv.to()), {
                    next.move_vertex(&model.graph, mv.vertex(), mv.to());
                    next.fingerprint()
                });
                next.move_vertex(&model.graph, mv.vertex(), mv.from());
                assert_eq!(next.labels(), plan.labels());
                assert_eq!(next.fingerprint(), plan.fingerprint());
                assert!(next.caches_consistent(&model.graph, 1e-12));
            }
        });
    }

    #[test]
    fn orientation_reverses_with_the_move(
        districts in 2usize..=3,
        cx in 0.0f64..4.0,
        cy in 0.0f64..4.0,
        salt in any::<u64>(),
        picks in prop::collection::vec(any::<u32>(), 1..30),
    ) {
        let model = model(districts, false);
        let field = VectorField::vortex([cx, cy]);
        walk(&model, &picks, |plan| {
            for mv in &neighborhood(&model, plan).moves {
                let mut next = plan.clone();
                next.move_vertex(&model.graph, mv.vertex(), mv.to());
                let back = neighborhood(&model, &next);
                let k = back.find(mv.vertex(), mv.from()).expect("reverse move exists");
                let fwd = orientation(&model, plan, mv, &field, salt);
                let rev = orientation(&model, &next, &back.moves[k], &field, salt);
                assert_eq!(fwd, rev.flipped());
            }
        });
    }
}
