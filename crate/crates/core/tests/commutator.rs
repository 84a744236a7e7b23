mod common;

use common::*;
use mfd_core::commutator::*;
use mfd_core::model::{Observable, ReservoirObservable, ReservoirState, SystemModel};
use mfd_core::tensor::pauli::*;
use mfd_core::tensor::{embed_slots, OperatorMatrix, Propagator};
use mfd_core::{Error, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

#[test]
fn first_and_second_order_templates() {
    let t1 = expand_multicommutator(1, 8).unwrap();
    assert_eq!(t1.len(), 2);
    assert_eq!((t1[0].sign, t1[0].order.clone()), (1, vec![Slot::Factor(0), Slot::Center]));
    assert_eq!((t1[1].sign, t1[1].order.clone()), (-1, vec![Slot::Center, Slot::Factor(0)]));
    let signs: Vec<i8> = expand_multicommutator(2, 8).unwrap().iter().map(|t| t.sign).collect();
    assert_eq!(signs, vec![1, -1, -1, 1]);
    let t0 = expand_multicommutator(0, 8).unwrap();
    assert_eq!(t0.len(), 1);
    assert_eq!(t0[0].order, vec![Slot::Center]);
    assert!(matches!(expand_multicommutator(9, 8), Err(Error::OrderCap { .. })));
}

#[test]
fn template_sum_equals_nested_commutator() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for r in 1..=4 {
        let ops: Vec<OperatorMatrix> = (0..r).map(|_| random_matrix(&mut rng, &[3])).collect();
        let a = random_matrix(&mut rng, &[3]);
        let mut nested = a.clone();
        for v in &ops {
            nested = v.commutator(&nested);
        }
        let expanded = expand_with_operators(&ops, &a).unwrap();
        assert!(expanded.max_abs_diff(&nested) < 1e-12, "r = {r}");
    }
}

#[test]
fn class_enumeration_examples() {
    let tuples: Vec<Vec<usize>> = enumerate_class(&IndexClass::new(vec![2, 1])).collect();
    assert_eq!(tuples, vec![vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 0]]);
    assert_eq!(enumerate_class(&IndexClass::new(vec![0, 4, 0])).count(), 1);
    let all: usize = profiles(4, 3).iter().map(|p| enumerate_class(p).count()).sum();
    assert_eq!(all, 81);
    for p in profiles(4, 3) {
        assert_eq!(enumerate_class(&p).count() as u128, p.member_count());
    }
}

#[test]
fn limit_class_examples() {
    let d: Vec<Vec<usize>> = enumerate_limit_classes(LimitKind::D, 2, 1, &[0]).unwrap().collect();
    assert_eq!(d, vec![vec![1, 1]]);
    let e: Vec<Vec<usize>> = enumerate_limit_classes(LimitKind::E, 1, 1, &[1]).unwrap().collect();
    assert_eq!(e, vec![vec![0]]);
    let d4: Vec<Vec<usize>> = enumerate_limit_classes(LimitKind::D, 4, 0, &[]).unwrap().collect();
    assert_eq!(d4.len(), 6);
    assert!(d4.iter().all(|t| t.iter().filter(|&&j| j == 0).count() == 2));
    assert!(matches!(enumerate_limit_classes(LimitKind::D, 3, 1, &[1]), Err(Error::InconsistentClass(_))));
    assert!(matches!(enumerate_limit_classes(LimitKind::E, 4, 1, &[2]), Err(Error::InconsistentClass(_))));
    assert!(matches!(enumerate_limit_classes(LimitKind::D, 2, 2, &[0]), Err(Error::InconsistentClass(_))));
}

#[test]
fn canonical_assignment_weights_count_all_tuples() {
    for (r, n, pool) in [(3, 1, vec![(0, 3)]), (4, 0, vec![(0, 2), (1, 3)]), (4, 2, vec![(0, 4)])] {
        let total: usize = n + pool.iter().map(|p| p.1).sum::<usize>();
        let w: f64 = canonical_assignments(r, n, &pool, false).iter().map(|a| a.weight).sum();
        assert_eq!(w, (total as f64).powi(r as i32));
    }
    // even occupation: r = 2 over one system particle and three fresh ones
    let even = canonical_assignments(2, 1, &[(0, 3)], true);
    let w: f64 = even.iter().map(|a| a.weight).sum();
    assert_eq!(w, 1.0 + 3.0);
}

/// Exact `omega_N` of the ordered product of a term on the full tensor space.
fn brute_force_term(model: &SystemModel, n_particles: usize, obs: &Observable, t: f64, term: &CommutatorTerm) -> C64 {
    let dims = model.dims(n_particles);
    let res_slot = n_particles;
    let free = {
        let mut h = embed_slots(&model.reservoir.hamiltonian(), &[res_slot], &dims).unwrap();
        for j in 0..n_particles {
            h = &h + &embed_slots(&model.particle(j).h, &[j], &dims).unwrap();
        }
        Propagator::new(h).unwrap()
    };
    let v = |j: usize, s: f64| {
        let p = model.particle(j);
        let op = p.g.kron(&model.reservoir.coupling(p.channel).unwrap());
        free.heisenberg(&embed_slots(&op, &[j, res_slot], &dims).unwrap(), s).unwrap()
    };
    let center = free.heisenberg(&model.embed_observable(n_particles, obs).unwrap(), t).unwrap();
    let mut prod = OperatorMatrix::identity(&dims);
    for &(j, s) in &term.left_ops {
        prod = prod.matmul(&v(j, s));
    }
    prod = prod.matmul(&center);
    for &(j, s) in &term.right_ops {
        prod = prod.matmul(&v(j, s));
    }
    model.initial_density(n_particles).unwrap().trace_product(&prod) * term.sign as f64
}

#[test]
fn factorized_expectation_matches_full_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let parts = vec![
        mfd_core::model::ParticleSpec::new(random_hermitian(&mut rng, &[2]), random_hermitian(&mut rng, &[2]), random_density(&mut rng, 2), 0).unwrap(),
        mfd_core::model::ParticleSpec::new(random_hermitian(&mut rng, &[2]), random_hermitian(&mut rng, &[2]), random_density(&mut rng, 2), 0).unwrap(),
    ];
    let res = fock(&[(8, 0.9)], vec![vec![C64::new(0.8, 0.3)]], ReservoirState::Coherent { alpha: vec![C64::new(0.3, -0.2)] });
    let model = SystemModel::new(parts, res, 0.5).unwrap();
    let a_s = random_hermitian(&mut rng, &[2]);
    let obs = Observable::product(a_s, ReservoirObservable::Field(vec![C64::new(0.4, 0.1)]));
    let provider = FockMoments::new(&model.reservoir, &obs.reservoir).unwrap();
    let t = 1.1;
    let times = [0.9, 0.6, 0.2];
    for tuple in [[0, 1, 2], [2, 2, 1], [1, 0, 1], [2, 2, 2]] {
        for term in terms_for_tuple(&tuple, &times, 8).unwrap() {
            let f = factorized_expectation(&term, &model, 3, &obs, t, &provider).unwrap();
            let b = brute_force_term(&model, 3, &obs, t, &term);
            assert!(close(f, b, 1e-10), "{tuple:?} {term:?}: {f} vs {b}");
        }
    }
}

#[test]
fn odd_occupation_of_unobserved_particle_vanishes() {
    let model = spin_boson(1.0, 0.7, 1.2, 10, 0.3, ReservoirState::Coherent { alpha: vec![c(0.4)] });
    let obs = Observable::system(sigma_z());
    let provider = FockMoments::new(&model.reservoir, &obs.reservoir).unwrap();
    for tuple in [[1, 0, 0], [1, 1, 1], [0, 2, 0]] {
        let sum: C64 = terms_for_tuple(&tuple, &[0.8, 0.5, 0.1], 8)
            .unwrap()
            .iter()
            .map(|term| factorized_expectation(term, &model, 3, &obs, 1.0, &provider).unwrap())
            .sum();
        assert!(sum.norm() < 1e-14, "{tuple:?}: {sum}");
    }
}

#[test]
fn two_fresh_factors_left_left_template() {
    let model = spin_boson(1.0, 0.7, 1.2, 6, 0.3, ReservoirState::Vacuum);
    let obs = Observable::product(sigma_z(), ReservoirObservable::Number);
    let provider = FockMoments::new(&model.reservoir, &obs.reservoir).unwrap();
    let (t, t1, t2) = (1.0, 0.7, 0.3);
    let tpl = &expand_multicommutator(2, 8).unwrap()[0];
    let term = CommutatorTerm::from_template(tpl, &[1, 1], &[t1, t2]);
    let value = factorized_expectation(&term, &model, 2, &obs, t, &provider).unwrap();
    let p = model.particle(0);
    let heis = |a: &OperatorMatrix, s: f64| Propagator::new(p.h.clone()).unwrap().heisenberg(a, s).unwrap();
    let mu = |a: &OperatorMatrix| p.state.trace_product(a);
    let sys = mu(&heis(&p.g, t2).matmul(&heis(&p.g, t1))) * mu(&heis(&sigma_z(), t));
    let res_moment = provider
        .moment(&[ResOp::Coupling { channel: 0, time: t2 }, ResOp::Coupling { channel: 0, time: t1 }, ResOp::Observable { time: t }])
        .unwrap();
    assert!(close(value, sys * res_moment, 1e-12));
}

fn term_sum(model: &SystemModel, obs: &Observable, n_particles: usize, tuple: &[usize], times: &[f64], provider: &FockMoments) -> C64 {
    terms_for_tuple(tuple, times, 8).unwrap().iter().map(|term| factorized_expectation(term, model, n_particles, obs, 1.0, provider).unwrap()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn regrouping_by_class_preserves_the_tuple_sum(seed in 0u64..1000, r in 1usize..=3, n_particles in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = SystemModel::new(vec![random_a0_particle(&mut rng)], single_mode(3, 1.0, ReservoirState::Vacuum), 0.4).unwrap();
        let obs = Observable::product(sigma_x(), ReservoirObservable::Number);
        let provider = FockMoments::new(&model.reservoir, &obs.reservoir).unwrap();
        let times: Vec<f64> = (0..r).map(|i| 0.9 - 0.25 * i as f64).collect();
        let mut seen = HashSet::new();
        let mut grouped = C64::new(0.0, 0.0);
        for class in profiles(r, n_particles) {
            for tuple in enumerate_class(&class) {
                prop_assert_eq!(IndexClass::of_tuple(&tuple, n_particles), class.clone());
                prop_assert!(seen.insert(tuple.clone()));
                grouped += term_sum(&model, &obs, n_particles, &tuple, &times, &provider);
            }
        }
        let mut raw = C64::new(0.0, 0.0);
        for idx in 0..n_particles.pow(r as u32) {
            let tuple: Vec<usize> = (0..r).map(|k| idx / n_particles.pow(k as u32) % n_particles).collect();
            raw += term_sum(&model, &obs, n_particles, &tuple, &times, &provider);
        }
        prop_assert_eq!(seen.len(), n_particles.pow(r as u32));
        prop_assert!((grouped - raw).norm() <= 1e-10 * raw.norm().max(1.0));
    }

    #[test]
    fn member_count_is_multinomial(profile in proptest::collection::vec(0usize..4, 1..4)) {
        let class = IndexClass::new(profile);
        prop_assert_eq!(enumerate_class(&class).count() as u128, class.member_count());
    }
}
