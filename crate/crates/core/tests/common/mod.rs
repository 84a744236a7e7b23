#![allow(dead_code)]

use mfd_core::model::{ParticleSpec, Reservoir, ReservoirState, SystemModel};
use mfd_core::reservoir::{FockMode, FockSpace};
use mfd_core::tensor::pauli::*;
use mfd_core::tensor::OperatorMatrix;
use mfd_core::C64;
use rand::Rng;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn close(a: C64, b: C64, tol: f64) -> bool {
    (a - b).norm() <= tol
}

pub fn random_matrix(rng: &mut impl Rng, dims: &[usize]) -> OperatorMatrix {
    OperatorMatrix::from_fn(dims, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub fn random_hermitian(rng: &mut impl Rng, dims: &[usize]) -> OperatorMatrix {
    let m = random_matrix(rng, dims);
    (&m + &m.adjoint()).scale(c(0.5))
}

pub fn random_density(rng: &mut impl Rng, d: usize) -> OperatorMatrix {
    let m = random_matrix(rng, &[d]);
    let p = m.matmul(&m.adjoint());
    let rho = p.scale(p.trace().inv());
    let adj = rho.adjoint();
    (&rho + &adj).scale(c(0.5))
}

pub fn fock(modes: &[(usize, f64)], channels: Vec<Vec<C64>>, state: ReservoirState) -> Reservoir {
    let modes = modes.iter().map(|&(n, w)| FockMode::new(n, w).unwrap()).collect();
    Reservoir::Fock { space: FockSpace::new(modes).unwrap(), channels, state }
}

pub fn single_mode(cutoff: usize, omega: f64, state: ReservoirState) -> Reservoir {
    fock(&[(cutoff, omega)], vec![vec![c(1.0)]], state)
}

/// `h = omega0 sigma_z / 2`, `G = sigma_x`, Gibbs state at `beta_s`.
pub fn spin(omega0: f64, beta_s: f64) -> ParticleSpec {
    let h = sigma_z().scale(c(omega0 / 2.0));
    let state = gibbs(&h, beta_s).unwrap();
    ParticleSpec::new(h, sigma_x(), state, 0).unwrap()
}

/// Dephasing spin: `G = sigma_z` commutes with `h`; state with zero mean of `G`.
pub fn dephasing_spin(omega0: f64) -> ParticleSpec {
    let h = sigma_z().scale(c(omega0 / 2.0));
    let state = OperatorMatrix::identity(&[2]).scale(c(0.5));
    ParticleSpec::new(h, sigma_z(), state, 0).unwrap()
}

pub fn spin_boson(omega0: f64, beta_s: f64, omega: f64, cutoff: usize, lambda: f64, state: ReservoirState) -> SystemModel {
    SystemModel::new(vec![spin(omega0, beta_s)], single_mode(cutoff, omega, state), lambda).unwrap()
}

/// Two-level species with random diagonal `h`, complex off-diagonal `G` and a
/// diagonal state, so all odd free moments of `G` vanish.
pub fn random_a0_particle(rng: &mut impl Rng) -> ParticleSpec {
    let e = rng.gen_range(0.3..1.5);
    let h = OperatorMatrix::from_real_rows(&[&[e / 2.0, 0.0], &[0.0, -e / 2.0]]).unwrap();
    let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let zero = c(0.0);
    let g = OperatorMatrix::new(vec![2], vec![zero, z, z.conj(), zero]).unwrap();
    let p = rng.gen_range(0.1..0.9);
    let state = OperatorMatrix::from_real_rows(&[&[p, 0.0], &[0.0, 1.0 - p]]).unwrap();
    ParticleSpec::new(h, g, state, 0).unwrap()
}
