mod common;

use common::*;
use mfd_core::closed_forms::{fluctuation_closed, fluctuation_integral, kappa, number_limit};
use mfd_core::commutator::FockMoments;
use mfd_core::dyson::*;
use mfd_core::model::{Observable, ReservoirObservable, ReservoirState, SystemModel};
use mfd_core::oracle::{dyson_direct, evolve_expectation};
use mfd_core::quadrature::QuadratureSpec;
use mfd_core::reservoir::DiscretizedField;
use mfd_core::tensor::pauli::*;
use mfd_core::tensor::OperatorMatrix;
use mfd_core::{Error, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn provider(model: &SystemModel, obs: &Observable) -> FockMoments {
    FockMoments::new(&model.reservoir, &obs.reservoir).unwrap()
}

#[test]
fn x0_vanishes_on_particle_observables() {
    let model = spin_boson(1.0, 1.0, 1.2, 6, 0.4, ReservoirState::Vacuum);
    let obs = Observable::system(sigma_z());
    let p = provider(&model, &obs);
    let exp = Expansion::new(&model, &obs, 1.5, Numerics::new(4), &p).unwrap();
    for n_particles in [2, 4, 8] {
        let x0 = exp.coefficient(CoefficientKind::X, 0, n_particles).unwrap();
        assert!(x0.value.norm() < 1e-8, "N = {n_particles}: {}", x0.value);
    }
}

#[test]
fn lambda_zero_gives_zero_coefficients_and_base_value() {
    let model = spin_boson(1.0, 1.0, 1.2, 6, 0.0, ReservoirState::Vacuum);
    let obs = Observable::product(sigma_z(), ReservoirObservable::Number);
    let p = provider(&model, &obs);
    let exp = Expansion::new(&model, &obs, 0.7, Numerics::new(4), &p).unwrap();
    for nu in 0..3 {
        for kind in [CoefficientKind::X, CoefficientKind::Y] {
            let c = exp.coefficient(kind, nu, 3).unwrap();
            assert_eq!(c.value, C64::new(0.0, 0.0));
            assert_eq!(c.tail_bound, 0.0);
        }
    }
    let res = exp.assemble(2, Some(3)).unwrap();
    assert_eq!(res.value, res.base);
    assert_eq!(res.remainder, 0.0);
    let lim = exp.assemble(2, None).unwrap();
    assert_eq!(lim.value, lim.base);
}

#[test]
fn reservoir_only_observable_has_no_y_coefficients() {
    let model = spin_boson(1.0, 1.0, 1.1, 6, 0.3, ReservoirState::Vacuum);
    let obs = Observable::reservoir(ReservoirObservable::Number);
    let p = provider(&model, &obs);
    let exp = Expansion::new(&model, &obs, 1.0, Numerics::new(4), &p).unwrap();
    for nu in 0..2 {
        assert_eq!(exp.coefficient(CoefficientKind::Y, nu, 3).unwrap().value, C64::new(0.0, 0.0));
    }
}

#[test]
fn limit_x0_vanishes_on_particle_observables() {
    let model = spin_boson(1.0, 0.5, 0.9, 6, 0.3, ReservoirState::Vacuum);
    let obs = Observable::system(sigma_x());
    let p = provider(&model, &obs);
    let exp = Expansion::new(&model, &obs, 1.2, Numerics::new(4), &p).unwrap();
    assert!(exp.limit_coefficient(CoefficientKind::X, 0).unwrap().value.norm() < 1e-10);
    let zero = model.with_lambda(0.0);
    let exp0 = Expansion::new(&zero, &obs, 1.2, Numerics::new(4), &p).unwrap();
    assert_eq!(exp0.limit_coefficient(CoefficientKind::X, 0).unwrap().value, C64::new(0.0, 0.0));
}

#[test]
fn regrouped_series_equals_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let parts = vec![random_a0_particle(&mut rng), random_a0_particle(&mut rng)];
    let res = fock(&[(4, 0.8), (3, 1.3)], vec![vec![c(0.7), C64::new(0.2, 0.4)]], ReservoirState::Thermal { beta: 1.5 });
    let model = SystemModel::new(parts, res, 0.6).unwrap();
    let field = vec![c(0.5), C64::new(0.0, 0.3)];
    let a_s = random_hermitian(&mut rng, &[2]);
    let numerics = Numerics::new(4).with_quadrature(QuadratureSpec::gauss(5));
    for obs in [Observable::system(a_s.clone()), Observable::product(a_s, ReservoirObservable::Field(field)), Observable::reservoir(ReservoirObservable::Number)] {
        let p = provider(&model, &obs);
        let exp = Expansion::new(&model, &obs, 0.9, numerics.clone(), &p).unwrap();
        for n_particles in [2, 3, 4] {
            let grouped = exp.assemble(2, Some(n_particles)).unwrap();
            let direct = dyson_direct(&model, n_particles, &obs, 0.9, &numerics, &p).unwrap();
            assert!(close(grouped.value, direct.value, 1e-10), "N = {n_particles}: {} vs {}", grouped.value, direct.value);
        }
    }
}

#[test]
fn direct_series_matches_oracle() {
    let model = spin_boson(1.0, 1.0, 1.3, 8, 0.25, ReservoirState::Vacuum);
    let obs = Observable::product(sigma_x(), ReservoirObservable::Field(vec![c(1.0)]));
    let p = provider(&model, &obs);
    for n_particles in [1, 2, 3] {
        let exact = evolve_expectation(&model, n_particles, &obs, 1.0).unwrap();
        let direct = dyson_direct(&model, n_particles, &obs, 1.0, &Numerics::new(5).with_quadrature(QuadratureSpec::gauss(6)), &p).unwrap();
        let allowed = direct.tail_bound + direct.quadrature_error + 1e-9;
        assert!((direct.value - exact).norm() <= allowed, "N = {n_particles}: {} vs {exact}", direct.value);
        assert!(direct.certified);
    }
}

#[test]
fn assembled_expansion_matches_oracle_within_remainder() {
    let model = spin_boson(1.0, 1.0, 1.0, 8, 0.2, ReservoirState::Vacuum);
    for obs in [Observable::system(sigma_z()), Observable::reservoir(ReservoirObservable::Number)] {
        let p = provider(&model, &obs);
        let exp = Expansion::new(&model, &obs, 1.2, Numerics::new(4), &p).unwrap();
        for n_particles in [2, 3] {
            let res = exp.assemble(1, Some(n_particles)).unwrap();
            let exact = evolve_expectation(&model, n_particles, &obs, 1.2).unwrap();
            assert!((res.value - exact).norm() <= res.remainder, "{} vs {exact}, remainder {}", res.value, res.remainder);
        }
    }
}

#[test]
fn coefficients_respect_a_priori_bound() {
    let model = spin_boson(1.0, 1.0, 1.0, 8, 0.3, ReservoirState::Vacuum);
    let obs = Observable::product(sigma_z(), ReservoirObservable::Number);
    let p = provider(&model, &obs);
    let exp = Expansion::new(&model, &obs, 1.0, Numerics::new(4), &p).unwrap();
    for nu in 0..2 {
        for kind in [CoefficientKind::X, CoefficientKind::Y] {
            for n_particles in [2, 4] {
                let c = exp.coefficient(kind, nu, n_particles).unwrap();
                assert!(c.value.norm() <= c.a_priori_bound, "{kind:?}{nu} N = {n_particles}: {} > {}", c.value.norm(), c.a_priori_bound);
            }
        }
    }
}

#[test]
fn limit_number_matches_exact_formula() {
    let omega = 1.3;
    let model = SystemModel::new(vec![dephasing_spin(0.8)], single_mode(10, omega, ReservoirState::Vacuum), 0.3).unwrap();
    let obs = Observable::reservoir(ReservoirObservable::Number);
    let p = provider(&model, &obs);
    let field = DiscretizedField::single(omega, c(1.0)).unwrap();
    let kap = kappa(&model);
    for t in [0.5, 1.5, 3.0] {
        let exp = Expansion::new(&model, &obs, t, Numerics::new(4), &p).unwrap();
        let lim = exp.assemble(0, None).unwrap();
        let formula = number_limit(&field, kap, t, 0.0).unwrap();
        assert!((lim.value.re - formula).abs() < 1e-9 && lim.value.im.abs() < 1e-9, "t = {t}: {} vs {formula}", lim.value);
    }
}

#[test]
fn finite_n_coefficients_approach_limit() {
    let model = SystemModel::new(vec![dephasing_spin(0.8)], single_mode(10, 1.1, ReservoirState::Vacuum), 0.4).unwrap();
    let obs = Observable::reservoir(ReservoirObservable::Number);
    let p = provider(&model, &obs);
    let exp = Expansion::new(&model, &obs, 1.0, Numerics::new(4), &p).unwrap();
    let lim = exp.limit_coefficient(CoefficientKind::X, 0).unwrap().value;
    let gaps: Vec<f64> = [2, 4, 8].iter().map(|&n| (exp.coefficient(CoefficientKind::X, 0, n).unwrap().value - lim).norm()).collect();
    assert!(gaps.iter().all(|g| *g < 1e-10), "{gaps:?}");
}

#[test]
fn odd_moment_violation_names_particle() {
    let h = sigma_z().scale(c(0.5));
    let polarized = OperatorMatrix::from_real_rows(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap();
    let bad = mfd_core::model::ParticleSpec::new(h, sigma_x(), polarized, 0).unwrap();
    let model = SystemModel::new(vec![spin(1.0, 1.0), bad], single_mode(4, 1.0, ReservoirState::Vacuum), 0.2).unwrap();
    let obs = Observable::system(sigma_z());
    let p = provider(&model, &obs);
    let exp = Expansion::new(&model, &obs, 1.0, Numerics::new(2), &p).unwrap();
    match exp.coefficient(CoefficientKind::X, 0, 3) {
        Err(Error::OddMoment { particle, .. }) => assert_eq!(particle, 2),
        other => panic!("expected odd-moment failure, got {other:?}"),
    }
}

#[test]
fn order_cap_is_enforced() {
    let model = spin_boson(1.0, 1.0, 1.0, 4, 0.2, ReservoirState::Vacuum);
    let obs = Observable::system(sigma_z());
    let p = provider(&model, &obs);
    let mut numerics = Numerics::new(5);
    numerics.order_cap = 4;
    assert!(matches!(Expansion::new(&model, &obs, 1.0, numerics, &p), Err(Error::OrderCap { .. })));
}

#[test]
fn wick_and_fock_providers_agree_on_coefficients() {
    let model = spin_boson(1.0, 1.0, 0.9, 14, 0.3, ReservoirState::Vacuum);
    let obs = Observable::product(sigma_x(), ReservoirObservable::Field(vec![c(1.0)]));
    let fock = make_provider(&model, &obs.reservoir, ProviderKind::Fock).unwrap();
    let wick = make_provider(&model, &obs.reservoir, ProviderKind::Wick).unwrap();
    let a = Expansion::new(&model, &obs, 1.0, Numerics::new(3), fock.as_ref()).unwrap().assemble(1, Some(3)).unwrap();
    let b = Expansion::new(&model, &obs, 1.0, Numerics::new(3), wick.as_ref()).unwrap().assemble(1, Some(3)).unwrap();
    assert!(close(a.value, b.value, 1e-10), "{} vs {}", a.value, b.value);
}

fn coherent_model(alpha: f64, omega0: f64, omega_r: f64, beta_s: f64, lambda: f64) -> SystemModel {
    let state = ReservoirState::Coherent { alpha: vec![c(alpha)] };
    SystemModel::new(vec![spin(omega0, beta_s)], single_mode(20, omega_r, state), lambda).unwrap()
}

#[test]
fn first_order_fluctuations_match_closed_form() {
    let (alpha, omega0, omega_r, temp, lambda) = (0.6, 1.0, 1.7, 0.8, 0.2);
    let model = coherent_model(alpha, omega0, omega_r, 1.0 / temp, lambda);
    let obs = Observable::reservoir(ReservoirObservable::Identity);
    let p = provider(&model, &obs);
    let a = sigma_x();
    for t in [0.5, 1.3, 2.4] {
        let series = fluctuation_series(&model, &a, t, &Numerics::new(1), &p).unwrap();
        let closed = fluctuation_closed(alpha, 1.0, omega0, omega_r, temp, lambda, t);
        let integral = fluctuation_integral(&model.particles[0].h, &sigma_x(), &model.particles[0].state, &a, c(alpha), omega_r, lambda, t).unwrap();
        assert!((series.re - closed).abs() < 1e-6 && series.im.abs() < 1e-9, "t = {t}: {series} vs {closed}");
        assert!((integral - closed).abs() < 1e-10);
    }
}

#[test]
fn fluctuations_vanish_for_gauge_invariant_states_and_diagonal_observables() {
    for state in [ReservoirState::Vacuum, ReservoirState::Thermal { beta: 1.0 }] {
        let model = SystemModel::new(vec![spin(1.0, 1.0)], single_mode(12, 1.4, state), 0.3).unwrap();
        let p = provider(&model, &Observable::reservoir(ReservoirObservable::Identity));
        let v = fluctuation_series(&model, &sigma_x(), 1.1, &Numerics::new(3), &p).unwrap();
        assert!(v.norm() < 1e-10, "{v}");
    }
    let model = coherent_model(0.5, 1.0, 1.5, 1.0, 0.3);
    let p = provider(&model, &Observable::reservoir(ReservoirObservable::Identity));
    assert!(fluctuation_series(&model, &sigma_z(), 1.1, &Numerics::new(3), &p).unwrap().norm() < 1e-10);
    let zero = model.with_lambda(0.0);
    assert_eq!(fluctuation_series(&zero, &sigma_x(), 1.1, &Numerics::new(3), &p).unwrap(), C64::new(0.0, 0.0));
}
