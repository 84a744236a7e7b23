mod common;

use common::*;
use mfd_core::closed_forms::*;
use mfd_core::commutator::{FockMoments, TermContext};
use mfd_core::dyson::{base_value, finite_table, Numerics};
use mfd_core::model::{Observable, ParticleSpec, ReservoirObservable, ReservoirState, SystemModel};
use mfd_core::oracle::evolve_expectation;
use mfd_core::quadrature::QuadratureSpec;
use mfd_core::reservoir::{DiscretizedField, QuasifreeField};
use mfd_core::tensor::pauli::*;
use mfd_core::tensor::OperatorMatrix;
use mfd_core::{Error, C64};
use proptest::prelude::*;
use std::f64::consts::PI;

#[test]
fn removable_singularities_are_continuous() {
    for t in [0.3f64, 1.0, 4.0] {
        for x in [0.0f64, 5e-5, 9.99e-5] {
            let exact = if x == 0.0 { t * t / 2.0 } else { 2.0 * ((0.5 * x * t).sin() / x).powi(2) };
            assert!((one_minus_cos_over_sq(x, t) - exact).abs() < 1e-9 * exact.max(1.0));
            let exact_s = if x == 0.0 { t } else { (x * t).sin() / x };
            assert!((sinc_t(x, t) - exact_s).abs() < 1e-12);
        }
        let below = one_minus_cos_over_sq(0.99999e-4, t);
        let above = one_minus_cos_over_sq(1.00001e-4, t);
        assert!((below - above).abs() < 1e-10);
        assert!((one_minus_cos_over_sq(2.0, t) - (1.0 - (2.0 * t).cos()) / 4.0).abs() < 1e-14);
    }
}

#[test]
fn leading_order_at_zero_coupling_is_free() {
    let model = spin_boson(1.0, 0.8, 1.3, 10, 0.0, ReservoirState::Coherent { alpha: vec![c(0.3)] });
    let obs = Observable::product(sigma_x(), ReservoirObservable::Field(vec![c(1.0)]));
    let p = FockMoments::new(&model.reservoir, &obs.reservoir).unwrap();
    let t = 0.9;
    let lead = leading_order(&model, &obs, 4, t, &p).unwrap();
    let free = evolve_expectation(&model, 1, &obs, t).unwrap();
    assert!(close(lead, free, 1e-12), "{lead} vs {free}");
}

#[test]
fn leading_order_equals_low_orders_of_the_series() {
    let model = spin_boson(1.0, 0.8, 1.3, 8, 0.3, ReservoirState::Thermal { beta: 1.2 });
    let t = 1.4;
    for obs in [
        Observable::system(sigma_x()),
        Observable::product(sigma_z(), ReservoirObservable::Number),
        Observable::reservoir(ReservoirObservable::Field(vec![c(1.0)])),
    ] {
        let p = FockMoments::new(&model.reservoir, &obs.reservoir).unwrap();
        let ctx = TermContext::new(&model, &obs, t, &p).unwrap();
        let numerics = Numerics::new(2).with_quadrature(QuadratureSpec::gauss(20));
        for n_particles in [2, 5] {
            let pre = C64::new(0.0, model.lambda / (n_particles as f64).sqrt());
            let t1 = finite_table(&ctx, &model, n_particles, 1, &numerics).unwrap();
            let t2 = finite_table(&ctx, &model, n_particles, 2, &numerics).unwrap();
            let series = base_value(&ctx).unwrap() + pre * t1.values.iter().sum::<C64>() + pre * pre * t2.values[0];
            let lead = leading_order(&model, &obs, n_particles, t, &p).unwrap();
            assert!(close(lead, series, 1e-9), "N = {n_particles}: {lead} vs {series}");
        }
    }
}

#[test]
fn leading_order_needs_unobserved_particles() {
    let model = spin_boson(1.0, 0.8, 1.3, 4, 0.3, ReservoirState::Vacuum);
    let obs = Observable::system(sigma_x());
    let p = FockMoments::new(&model.reservoir, &obs.reservoir).unwrap();
    assert!(matches!(leading_order(&model, &obs, 1, 1.0, &p), Err(Error::InvalidParameter(_))));
}

fn dephasing_model(omega: f64, cutoff: usize, lambda: f64, state: ReservoirState) -> SystemModel {
    SystemModel::new(vec![dephasing_spin(0.7)], single_mode(cutoff, omega, state), lambda).unwrap()
}

#[test]
fn ancilla_limit_trivial_cases() {
    let model = dephasing_model(1.2, 10, 0.0, ReservoirState::Coherent { alpha: vec![c(0.5)] });
    let obs = ReservoirObservable::Field(vec![c(1.0)]);
    let times = [0.0, 0.8, 2.1];
    let limit = energy_conserving_limit(&model, &obs, &times, 8).unwrap();
    let free: Vec<C64> = times.iter().map(|&t| evolve_expectation(&model, 1, &Observable::reservoir(obs.clone()), t).unwrap()).collect();
    for (a, b) in limit.iter().zip(&free) {
        assert!(close(*a, *b, 1e-12));
    }
    let coupled = model.with_lambda(0.4);
    let at_zero = energy_conserving_limit(&coupled, &obs, &[0.0], 8).unwrap()[0];
    assert!(close(at_zero, free[0], 1e-12));
    let not_conserving = spin_boson(1.0, 1.0, 1.0, 6, 0.2, ReservoirState::Vacuum);
    assert!(matches!(energy_conserving_limit(&not_conserving, &obs, &times, 8), Err(Error::NotEnergyConserving { .. })));
}

#[test]
fn ancilla_limit_matches_number_formula() {
    let omega = 1.1;
    let field = DiscretizedField::single(omega, c(1.0)).unwrap();
    for lambda in [0.2, 0.5] {
        let model = dephasing_model(omega, 24, lambda, ReservoirState::Vacuum);
        let times = [0.4, 1.7, 3.0];
        // N(t) is quadratic in the ancilla field, which a 7-level ancilla integrates exactly
        let limit = energy_conserving_limit(&model, &ReservoirObservable::Number, &times, 6).unwrap();
        for (v, &t) in limit.iter().zip(&times) {
            let formula = number_limit(&field, kappa(&model), t, 0.0).unwrap();
            assert!((v.re - formula).abs() < 1e-6 && v.im.abs() < 1e-9, "lambda = {lambda}, t = {t}: {v} vs {formula}");
        }
    }
}

#[test]
fn ancilla_limit_matches_weyl_formula() {
    let omega = 0.9;
    let field = DiscretizedField::single(omega, c(1.0)).unwrap();
    let h = vec![C64::new(0.4, 0.3)];
    for state in [ReservoirState::Vacuum, ReservoirState::Thermal { beta: 2.0 }] {
        let quasifree = match state {
            ReservoirState::Vacuum => QuasifreeField::vacuum(vec![omega]),
            _ => QuasifreeField::thermal(vec![omega], 2.0).unwrap(),
        };
        let model = dephasing_model(omega, 22, 0.4, state);
        let times = [0.5, 2.0, 4.0];
        let limit = energy_conserving_limit(&model, &ReservoirObservable::Weyl(h.clone()), &times, 16).unwrap();
        for (v, &t) in limit.iter().zip(&times) {
            let formula = weyl_limit(&field, &quasifree, &h, kappa(&model), t).unwrap();
            assert!(close(*v, formula, 1e-6), "t = {t}: {v} vs {formula}");
        }
    }
}

#[test]
fn exact_number_formula_holds_at_finite_n() {
    let omega = 1.3;
    let field = DiscretizedField::single(omega, c(1.0)).unwrap();
    let model = dephasing_model(omega, 14, 0.5, ReservoirState::Vacuum);
    let obs = Observable::reservoir(ReservoirObservable::Number);
    for n_particles in [1, 3, 5] {
        let exact = evolve_expectation(&model, n_particles, &obs, 2.2).unwrap();
        let formula = number_limit(&field, kappa(&model), 2.2, 0.0).unwrap();
        assert!((exact.re - formula).abs() < 1e-7, "N = {n_particles}: {exact} vs {formula}");
    }
}

#[test]
fn weyl_limit_trivial_cases() {
    let field = DiscretizedField::new(vec![0.8, 1.5], vec![c(1.0), c(0.5)], vec![0.5, 0.5]).unwrap();
    let state = QuasifreeField::vacuum(vec![0.8, 1.5]);
    let h = vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.4)];
    let norm_sq: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    let at_zero = weyl_limit(&field, &state, &h, 0.7, 0.0).unwrap();
    assert!(close(at_zero, c((-norm_sq / 4.0).exp()), 1e-15));
    assert!((quasifree_weyl(&state, &h) - (-norm_sq / 4.0).exp()).abs() < 1e-15);
    let free = weyl_limit(&field, &state, &h, 0.0, 1.3).unwrap();
    assert!(close(free, c(quasifree_weyl(&state, &h)), 1e-15));
    assert!(weyl_limit(&field, &state, &h[..1], 0.7, 1.0).is_err());
}

#[test]
fn number_limit_trivial_cases() {
    let field = DiscretizedField::single(1.0, c(1.0)).unwrap();
    assert_eq!(number_limit(&field, 0.4, 0.0, 2.5).unwrap(), 2.5);
    let a = number_limit(&field, 0.04, 1.7, 0.0).unwrap();
    let b = number_limit(&field, 0.01, 1.7, 0.0).unwrap();
    let slope = (a / b).ln() / (0.2f64 / 0.1).ln();
    assert!((slope - 2.0).abs() < 1e-12, "{slope}");
}

#[test]
fn dicke_trivial_cases() {
    let field = DiscretizedField::single(1.0, C64::new(0.6, 0.8)).unwrap();
    assert_eq!(dicke_number_leading(&field, 0.5, 1.0, 0.1, 0.0).unwrap(), 0.0);
    for t in [0.5, 2.0] {
        let v = dicke_number_leading(&field, 1.0, 1.0, 0.1, t).unwrap();
        assert!((v - 0.01 * t * t / 2.0).abs() < 1e-15);
    }
    assert!(dicke_number_leading(&field, 1.5, 1.0, 0.1, 1.0).is_err());
}

fn dicke_model(p: f64, lambda: f64) -> SystemModel {
    let h = sigma_z().scale(c(0.5));
    let state = OperatorMatrix::from_real_rows(&[&[p, 0.0], &[0.0, 1.0 - p]]).unwrap();
    let spin = ParticleSpec::new(h, sigma_x(), state, 0).unwrap();
    SystemModel::new(vec![spin], single_mode(6, 1.1, ReservoirState::Vacuum), lambda).unwrap()
}

#[test]
fn dicke_leading_order_against_oracle() {
    let field = DiscretizedField::single(1.1, c(1.0)).unwrap();
    let obs = Observable::reservoir(ReservoirObservable::Number);
    let t = 2.0;
    for p in [0.0, 0.5, 1.0] {
        let residual =
            |lambda: f64| evolve_expectation(&dicke_model(p, lambda), 2, &obs, t).unwrap().re - dicke_number_leading(&field, p, 1.0, lambda, t).unwrap();
        let (r1, r2) = (residual(0.1).abs(), residual(0.05).abs());
        let slope = (r1 / r2).ln() / 2f64.ln();
        assert!(slope > 3.5, "p = {p}: slope {slope} ({r1}, {r2})");
    }
}

#[test]
fn fluctuation_closed_trivial_cases() {
    assert_eq!(fluctuation_closed(0.5, 0.0, 1.0, 1.4, 0.3, 0.2, 1.0), 0.0);
    assert_eq!(fluctuation_closed(0.5, 1.0, 1.0, 1.4, 0.3, 0.2, 0.0), 0.0);
    // degenerate denominator: removable limit
    let near = fluctuation_closed(0.5, 1.0, 1.0, 1.0 + 1e-7, 0.3, 0.2, 1.3);
    let at = fluctuation_closed(0.5, 1.0, 1.0, 1.0, 0.3, 0.2, 1.3);
    assert!((near - at).abs() < 1e-6 && at.is_finite());
}

#[test]
fn fluctuation_closed_matches_integral() {
    let (omega0, omega_r, lambda) = (1.0, 1.6, 0.3);
    for temp in [0.0, 0.5, 2.0] {
        let h = sigma_z().scale(c(omega0 / 2.0));
        let state = gibbs(&h, if temp == 0.0 { f64::INFINITY } else { 1.0 / temp }).unwrap();
        for t in [0.7, 2.5] {
            let a = OperatorMatrix::from_real_rows(&[&[0.3, 0.8], &[0.8, -0.1]]).unwrap();
            let integral = fluctuation_integral(&h, &sigma_x(), &state, &a, c(0.7), omega_r, lambda, t).unwrap();
            let closed = fluctuation_closed(0.7, 0.8, omega0, omega_r, temp, lambda, t);
            assert!((integral - closed).abs() < 1e-10, "T = {temp}, t = {t}: {integral} vs {closed}");
        }
    }
}

proptest! {
    #[test]
    fn number_limit_is_periodic(t in 0.0f64..10.0, omega in 0.3f64..3.0, kappa in 0.0f64..1.0) {
        let field = DiscretizedField::single(omega, c(1.0)).unwrap();
        let a = number_limit(&field, kappa, t, 0.3).unwrap();
        let b = number_limit(&field, kappa, t + 2.0 * PI / omega, 0.3).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn dicke_leading_is_nonnegative(p in 0.0f64..=1.0, t in 0.0f64..20.0, omega0 in 0.1f64..3.0, lambda in -1.0f64..1.0) {
        let field = DiscretizedField::new(vec![0.5, 1.0, 2.0], vec![c(1.0), C64::new(0.2, 0.7), c(0.3)], vec![0.2, 0.5, 0.3]).unwrap();
        prop_assert!(dicke_number_leading(&field, p, omega0, lambda, t).unwrap() >= 0.0);
    }

    #[test]
    fn weyl_limit_modulus_at_most_one(t in 0.0f64..10.0, kappa in 0.0f64..2.0, re in -2.0f64..2.0, im in -2.0f64..2.0, beta in 0.3f64..5.0) {
        let field = DiscretizedField::new(vec![0.7, 1.9], vec![c(1.0), c(0.4)], vec![0.5, 0.5]).unwrap();
        let state = QuasifreeField::thermal(vec![0.7, 1.9], beta).unwrap();
        let v = weyl_limit(&field, &state, &[C64::new(re, im), C64::new(im, -re)], kappa, t).unwrap();
        prop_assert!(v.norm() <= 1.0 + 1e-15);
    }

    #[test]
    fn fluctuation_magnitude_decreases_with_temperature(t1 in 0.05f64..5.0, dt in 0.01f64..5.0, t in 0.1f64..6.0) {
        let a = fluctuation_closed(0.5, 1.0, 1.0, 1.7, t1, 0.2, t).abs();
        let b = fluctuation_closed(0.5, 1.0, 1.0, 1.7, t1 + dt, 0.2, t).abs();
        prop_assert!(b <= a + 1e-15);
    }
}
