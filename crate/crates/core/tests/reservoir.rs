mod common;

use common::*;
use mfd_core::model::{ReservoirObservable, ReservoirState};
use mfd_core::reservoir::*;
use mfd_core::tensor::{OperatorMatrix, Propagator};
use mfd_core::{Error, C64};
use proptest::prelude::*;

#[test]
fn lowest_truncation_annihilator() {
    let ops = fock_operators(&FockMode::new(1, 1.0).unwrap());
    assert_eq!(ops.a, OperatorMatrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap());
}

#[test]
fn truncated_ccr_and_vacuum_moments() {
    let n_max = 5;
    let ops = fock_operators(&FockMode::new(n_max, 0.7).unwrap());
    let comm = ops.a.commutator(&ops.a_dag);
    let mut expected = OperatorMatrix::identity(&[n_max + 1]);
    expected[(n_max, n_max)] = c(-(n_max as f64));
    assert!(comm.max_abs_diff(&expected) < 1e-14);
    assert!(ops.phi.hermitian_deviation() == 0.0);
    let diag: Vec<f64> = (0..=n_max).map(|i| ops.number[(i, i)].re).collect();
    assert_eq!(diag, (0..=n_max).map(|i| i as f64).collect::<Vec<_>>());
    assert!(close(ops.phi.matmul(&ops.phi)[(0, 0)], c(0.5), 1e-15));
    assert!(ops.hamiltonian.max_abs_diff(&ops.number.scale(c(0.7))) < 1e-15);
    assert!(FockMode::new(0, 1.0).is_err());
    assert!(FockMode::new(3, -1.0).is_err());
}

#[test]
fn weyl_operator_basics() {
    let mode = FockMode::new(30, 1.0).unwrap();
    assert!(weyl(&mode, c(0.0)).unwrap().max_abs_diff(&OperatorMatrix::identity(&[31])) < 1e-12);
    let f = C64::new(0.6, -0.4);
    let w = weyl(&mode, f).unwrap();
    let w_inv = weyl(&mode, -f).unwrap();
    assert!(w.matmul(&w_inv).max_abs_diff(&OperatorMatrix::identity(&[31])) < 1e-8);
    assert!(w.matmul(&w.adjoint()).max_abs_diff(&OperatorMatrix::identity(&[31])) < 1e-8);
    assert!(matches!(weyl(&FockMode::new(3, 1.0).unwrap(), c(3.0)), Err(Error::TruncationDominated { .. })));
}

#[test]
fn weyl_ccr_on_low_states() {
    let mode = FockMode::new(40, 1.0).unwrap();
    let f = C64::new(0.5, 0.3);
    let h = C64::new(-0.2, 0.7);
    let lhs = weyl(&mode, f).unwrap().matmul(&weyl(&mode, h).unwrap());
    let phase = C64::from_polar(1.0, -0.5 * (f.conj() * h).im);
    let rhs = weyl(&mode, f + h).unwrap().scale(phase);
    // compare on the low-lying states, away from the truncation edge
    for col in 0..6 {
        for row in 0..20 {
            assert!((lhs[(row, col)] - rhs[(row, col)]).norm() < 1e-7, "({row}, {col})");
        }
    }
}

#[test]
fn vacuum_correlation_examples() {
    let single = DiscretizedField::single(1.3, c(1.0)).unwrap();
    let corr = correlation_vacuum(&single);
    let (s, sp) = (0.7, 0.2);
    assert!(close(corr.eval(s, sp), 0.5 * C64::from_polar(1.0, -1.3 * (s - sp)), 1e-15));
    let field = DiscretizedField::new(vec![0.8, 1.7], vec![C64::new(1.0, 0.5), c(0.3)], vec![0.4, 0.6]).unwrap();
    let corr = correlation_vacuum(&field);
    let diag = corr.eval(0.9, 0.9);
    assert!(diag.im.abs() < 1e-15 && (diag.re - 0.5 * field.norm_sq()).abs() < 1e-15 && diag.re > 0.0);
    // truncated Fock cross-check on two modes
    let amps = field.amplitudes();
    let res = fock(&[(6, 0.8), (6, 1.7)], vec![amps.clone()], ReservoirState::Vacuum);
    let space = match &res {
        mfd_core::model::Reservoir::Fock { space, .. } => space.clone(),
        _ => unreachable!(),
    };
    let prop = Propagator::new(space.hamiltonian()).unwrap();
    let phi = space.field(&amps).unwrap();
    let vac = space.vacuum();
    for (s, sp) in [(0.0, 0.0), (1.1, 0.3), (-0.4, 2.2)] {
        let prod = prop.heisenberg(&phi, s).unwrap().matmul(&prop.heisenberg(&phi, sp).unwrap());
        let exact: C64 = vac.iter().zip(prod.apply(&vac)).map(|(a, b)| a.conj() * b).sum();
        assert!(close(exact, corr.eval(s, sp), 1e-9));
    }
}

#[test]
fn thermal_correlation_examples() {
    let field = DiscretizedField::new(vec![0.8, 1.7], vec![C64::new(1.0, 0.5), c(0.3)], vec![0.4, 0.6]).unwrap();
    let cold = correlation_thermal(&field, f64::INFINITY).unwrap();
    let vac = correlation_vacuum(&field);
    let hot = correlation_thermal(&field, 0.4).unwrap();
    for (s, sp) in [(0.0, 0.3), (1.2, -0.7)] {
        assert!(close(cold.eval(s, sp), vac.eval(s, sp), 1e-10));
        assert!((hot.eval(s, sp).im - vac.eval(s, sp).im).abs() < 1e-14);
    }
    assert!(correlation_thermal(&field, 0.0).is_err());

    let single = DiscretizedField::single(1.1, c(1.0)).unwrap();
    let corr = correlation_thermal(&single, 2.0).unwrap();
    let res = fock(&[(30, 1.1)], vec![vec![c(1.0)]], ReservoirState::Thermal { beta: 2.0 });
    let moments = mfd_core::commutator::FockMoments::new(&res, &ReservoirObservable::Identity).unwrap();
    use mfd_core::commutator::{ReservoirMoments, ResOp};
    for (s, sp) in [(0.0, 0.0), (0.9, 0.1), (2.0, 3.5)] {
        let ops = [ResOp::Coupling { channel: 0, time: s }, ResOp::Coupling { channel: 0, time: sp }];
        assert!(close(moments.moment(&ops).unwrap(), corr.eval(s, sp), 1e-6));
    }
}

#[test]
fn flat_radial_density_gives_gauss_nodes() {
    let field = discretize_radial(|_| 1.0, 1.0, 2).unwrap();
    let d = 1.0 / (2.0 * 3f64.sqrt());
    assert!((field.frequencies[0] - (0.5 - d)).abs() < 1e-15);
    assert!((field.frequencies[1] - (0.5 + d)).abs() < 1e-15);
    assert!((field.norm_sq() - 1.0).abs() < 1e-15);
    let quad = discretize_radial(|w| w * w, 2.0, 6).unwrap();
    assert!((quad.norm_sq() - 8.0 / 3.0).abs() < 1e-13);
    assert!(discretize_radial(|_| -1.0, 1.0, 4).is_err());
    assert!(discretize_radial(|_| 1.0, 1.0, 1).is_err());
}

#[test]
fn coherent_state_is_displaced_vacuum() {
    let space = FockSpace::new(vec![FockMode::new(25, 1.0).unwrap()]).unwrap();
    let alpha = C64::new(0.8, -0.3);
    let psi = space.coherent(&[alpha]).unwrap();
    let a = space.annihilation(0);
    let a_psi = a.apply(&psi);
    for n in 0..15 {
        assert!((a_psi[n] - alpha * psi[n]).norm() < 1e-8);
    }
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    assert!((norm - 1.0).abs() < 1e-10);
}

#[test]
fn thermal_weights_are_normalized_gibbs() {
    let space = FockSpace::new(vec![FockMode::new(4, 0.5).unwrap(), FockMode::new(3, 1.2).unwrap()]).unwrap();
    let w = space.thermal_weights(1.3);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    let e = space.energies();
    for i in 0..w.len() {
        assert!((w[i] / w[0] - (-1.3 * e[i]).exp()).abs() < 1e-14);
    }
}

proptest! {
    #[test]
    fn correlation_is_hermitian(s in -5.0f64..5.0, sp in -5.0f64..5.0, beta in 0.1f64..10.0) {
        let field = DiscretizedField::new(vec![0.6, 2.1], vec![C64::new(0.7, 0.2), c(1.1)], vec![0.5, 0.5]).unwrap();
        let corr = correlation_thermal(&field, beta).unwrap();
        prop_assert!((corr.eval(s, sp) - corr.eval(sp, s).conj()).norm() < 1e-14);
        prop_assert!(corr.eval(s, s).norm() >= corr.eval(s, sp).norm() - 1e-14);
    }

    #[test]
    fn gram_matrix_is_positive(t0 in 0.0f64..3.0, dt in 0.01f64..1.0) {
        let field = DiscretizedField::new(vec![0.6, 2.1, 1.3], vec![c(1.0), c(0.5), c(0.8)], vec![0.3, 0.3, 0.4]).unwrap();
        let grid: Vec<f64> = (0..5).map(|i| t0 + dt * i as f64).collect();
        let gram = correlation_vacuum(&field).gram(&grid);
        let eig = gram.eigh().unwrap();
        prop_assert!(eig.values.iter().all(|&v| v > -1e-12));
    }
}
