//! Analytic reference formulas: leading orders, the energy-conserving
//! resummation, the Dicke photon number and the lowest fluctuation.

use std::f64::consts::SQRT_2;

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::commutator::{ReservoirMoments, ResOp};
use crate::error::{Error, Result};
use crate::model::{Observable, Reservoir, ReservoirObservable, SystemModel};
use crate::quadrature::{gauss_legendre, integrate_simplex, QuadratureSpec};
use crate::reservoir::{fock_operators, DiscretizedField, FockMode, QuasifreeField};
use crate::tensor::{embed, heisenberg, OperatorMatrix, Propagator};
use crate::oracle::TRUNCATION_TOL;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Values of one formula on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClosedFormReport {
    pub formula: String,
    pub inputs: Vec<(String, f64)>,
    pub times: Vec<f64>,
    pub values: Vec<C64>,
    /// Condition under which the formula's remainder statement applies.
    pub validity: String,
}

/// Below this the removable singularities switch to their series.
const SERIES_CUTOFF: f64 = 1e-4;

/// `(1 - cos(x t)) / x^2`, equal to `t^2/2` at `x = 0`.
pub fn one_minus_cos_over_sq(x: f64, t: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let u = (x * t).powi(2);
        t * t * (0.5 - u / 24.0 + u * u / 720.0)
    } else {
        let s = (0.5 * x * t).sin() / x;
        2.0 * s * s
    }
}

/// `sin(x t) / x`, equal to `t` at `x = 0`.
pub fn sinc_t(x: f64, t: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let u = (x * t).powi(2);
        t * (1.0 - u / 6.0 + u * u / 120.0)
    } else {
        (x * t).sin() / x
    }
}

fn leading_spec() -> QuadratureSpec {
    QuadratureSpec::gauss(24)
}

/// Joint data of the observed particles `1..n`.
struct SystemBlock {
    h: OperatorMatrix,
    rho: OperatorMatrix,
    dims: Vec<usize>,
}

impl SystemBlock {
    fn new(model: &SystemModel, n: usize) -> Result<Self> {
        let dims: Vec<usize> = (0..n).map(|j| model.particle(j).dim()).collect();
        let mut h = OperatorMatrix::zeros(&dims);
        let mut rho = OperatorMatrix::identity(&[1]);
        for j in 0..n {
            h = &h + &embed(&model.particle(j).h, j, &dims)?;
            rho = rho.kron(&model.particle(j).state);
        }
        let rho = rho.with_dims(dims.clone())?;
        Ok(Self { h, rho, dims })
    }
}

/// The three displayed leading terms: free part, `lambda^2 / N` reservoir
/// back-action of the unobserved particles, and `lambda / sqrt N` correlation
/// with the observed ones. Hermitian observables only.
pub fn leading_order(model: &SystemModel, obs: &Observable, n_particles: usize, t: f64, provider: &dyn ReservoirMoments) -> Result<C64> {
    let n = obs.support();
    if n >= n_particles {
        return Err(Error::InvalidParameter(format!("leading order needs n < N, got n = {n}, N = {n_particles}")));
    }
    let lambda = model.lambda;
    let big_n = n_particles as f64;
    let moment = |ops: &[ResOp]| provider.moment(ops);
    let a_r = |time: f64| ResOp::Observable { time };
    let b = |channel: usize, time: f64| ResOp::Coupling { channel, time };

    let (mu_s, block) = match &obs.system {
        Some(a_s) => {
            let block = SystemBlock::new(model, n)?;
            let a_s = a_s.clone().with_dims(block.dims.clone())?;
            let a_t = heisenberg(&block.h, &a_s, t)?;
            (block.rho.trace_product(&a_t), Some((block, a_t)))
        }
        None => (C64::new(1.0, 0.0), None),
    };
    let mut value = mu_s * moment(&[a_r(t)])?;
    if lambda == 0.0 {
        return Ok(value);
    }

    // unobserved particles, grouped by species
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for j in n..n_particles {
        let s = model.species(j);
        match counts.iter_mut().find(|(x, _)| *x == s) {
            Some(c) => c.1 += 1,
            None => counts.push((s, 1)),
        }
    }
    let spec = leading_spec();
    for (s, count) in counts {
        let p = &model.particles[s];
        let ch = p.channel;
        let prop = Propagator::new(p.h.clone())?;
        let failure = std::sync::Mutex::new(None);
        let f = |ts: &[f64]| -> C64 {
            let (s1, s2) = (ts[0], ts[1]);
            let eval = || -> Result<C64> {
                let gg = p.state.trace_product(&prop.heisenberg(&p.g, s2)?.matmul(&prop.heisenberg(&p.g, s1)?));
                let comm = moment(&[b(ch, s2), b(ch, s1), a_r(t)])? - moment(&[b(ch, s2), a_r(t), b(ch, s1)])?;
                Ok(C64::new((gg * comm).re, 0.0))
            };
            eval().unwrap_or_else(|e| {
                failure.lock().expect("poisoned").get_or_insert(e);
                ZERO
            })
        };
        let (integral, _) = integrate_simplex(f, t, 2, &spec)?;
        if let Some(e) = failure.into_inner().expect("poisoned") {
            return Err(e);
        }
        value -= 2.0 * lambda * lambda / big_n * count as f64 * mu_s * integral;
    }

    // observed particles
    if let Some((block, a_t)) = &block {
        let prop = Propagator::new(block.h.clone())?;
        for j in 0..n {
            let pj = model.particle(j);
            let g = embed(&pj.g, j, &block.dims)?;
            let failure = std::sync::Mutex::new(None);
            let f = |ts: &[f64]| -> C64 {
                let eval = || -> Result<C64> {
                    let sys = block.rho.trace_product(&prop.heisenberg(&g, ts[0])?.matmul(a_t));
                    let res = moment(&[b(pj.channel, ts[0]), a_r(t)])?;
                    Ok(C64::new((sys * res).im, 0.0))
                };
                eval().unwrap_or_else(|e| {
                    failure.lock().expect("poisoned").get_or_insert(e);
                    ZERO
                })
            };
            let (integral, _) = integrate_simplex(f, t, 1, &spec)?;
            if let Some(e) = failure.into_inner().expect("poisoned") {
                return Err(e);
            }
            value -= 2.0 * lambda / big_n.sqrt() * integral;
        }
    }
    Ok(value)
}

/// `kappa = lambda^2 mu_S(G^2)`.
pub fn kappa(model: &SystemModel) -> f64 {
    let p = &model.particles[0];
    model.lambda * model.lambda * p.state.trace_product(&p.g.matmul(&p.g)).re
}

/// Limit dynamics of a reservoir observable in the energy-conserving
/// symmetric case: a zero-frequency ancilla oscillator in its vacuum coupled
/// to the reservoir by `sqrt(2 kappa) phi ⊗ B`, propagated exactly.
pub fn energy_conserving_limit(model: &SystemModel, observable: &ReservoirObservable, times: &[f64], ancilla_cutoff: usize) -> Result<Vec<C64>> {
    if !model.symmetric() {
        return Err(Error::NotSymmetric);
    }
    model.ensure_energy_conserving()?;
    let ch = model.particles[0].channel;
    let kappa = kappa(model);
    let ancilla = fock_operators(&FockMode::new(ancilla_cutoff, 0.0)?);
    let h_r = model.reservoir.hamiltonian();
    let d_a = ancilla_cutoff + 1;
    let mut dims = vec![d_a];
    dims.extend(model.reservoir.dims());
    let lift = |m: &OperatorMatrix| OperatorMatrix::identity(&[d_a]).kron(m).with_dims(dims.clone());
    let coupling = ancilla.phi.kron(&model.reservoir.coupling(ch)?).with_dims(dims.clone())?;
    let h = &lift(&h_r)? + &coupling.scale(C64::new((2.0 * kappa).sqrt(), 0.0));
    let mut vac = OperatorMatrix::zeros(&[d_a]);
    vac[(0, 0)] = C64::new(1.0, 0.0);
    let rho = vac.kron(&model.reservoir.density()?).with_dims(dims.clone())?;
    let prop = Propagator::new(h)?;
    let tr = prop.trajectory(&rho, &lift(&model.reservoir.observable_matrix(observable)?)?)?;
    if let Reservoir::Fock { space, .. } = &model.reservoir {
        let top = prop.trajectory(&rho, &lift(&space.top_levels_projector())?)?;
        for &t in times {
            let population = top.value(t).re;
            if population > TRUNCATION_TOL {
                return Err(Error::TruncationCertificate { population, time: t });
            }
        }
    }
    Ok(times.iter().map(|&t| tr.value(t)).collect())
}

fn check_frequencies(field: &DiscretizedField) -> Result<()> {
    if field.frequencies.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidParameter("closed forms need positive mode frequencies".into()));
    }
    Ok(())
}

/// `mu_r(W(f))` in a gauge-invariant quasifree state: `exp(-C_ff/2)`, which is
/// `exp(-||f||^2/4)` in the vacuum.
pub fn quasifree_weyl(state: &QuasifreeField, f: &[C64]) -> f64 {
    (-0.5 * state.two_point(f, 0.0, f, 0.0).re).exp()
}

/// `exp(-(kappa/2) (Re <g, (1 - e^{i omega t}) h / omega>)^2) mu_r(W(e^{i omega t} h))`,
/// with `<g, x> = sum_k sqrt(w_k) conj(g_k) x_k` over the discretized modes.
pub fn weyl_limit(field: &DiscretizedField, state: &QuasifreeField, h: &[C64], kappa: f64, t: f64) -> Result<C64> {
    check_frequencies(field)?;
    if h.len() != field.len() || state.len() != field.len() {
        return Err(Error::DimensionMismatch { expected: field.len(), found: h.len() });
    }
    let amps = field.amplitudes();
    let mut overlap = ZERO;
    let mut evolved = Vec::with_capacity(h.len());
    for k in 0..field.len() {
        let w = field.frequencies[k];
        let phase = C64::from_polar(1.0, w * t);
        overlap += amps[k].conj() * (1.0 - phase) * h[k] / w;
        evolved.push(phase * h[k]);
    }
    Ok(C64::new((-0.5 * kappa * overlap.re * overlap.re).exp() * quasifree_weyl(state, &evolved), 0.0))
}

/// `N_0 + kappa sum_k w_k |g_k|^2 (1 - cos(omega_k t)) / omega_k^2`.
pub fn number_limit(field: &DiscretizedField, kappa: f64, t: f64, n0: f64) -> Result<f64> {
    check_frequencies(field)?;
    Ok(n0 + kappa * field.weighted_sum(|w| one_minus_cos_over_sq(w, t)))
}

/// `lambda^2 sum_k w_k |g_k|^2 [p (1-cos((w0-w)t))/(w0-w)^2 + (1-p)(1-cos((w0+w)t))/(w0+w)^2]`.
pub fn dicke_number_leading(field: &DiscretizedField, p: f64, omega0: f64, lambda: f64, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("excited weight p = {p} outside [0, 1]")));
    }
    Ok(lambda
        * lambda
        * field.weighted_sum(|w| p * one_minus_cos_over_sq(omega0 - w, t) + (1.0 - p) * one_minus_cos_over_sq(omega0 + w, t)))
}

/// `tanh(omega0 / 2T)`, the polarization of a spin Gibbs state.
fn polarization(omega0: f64, temperature: f64) -> f64 {
    if temperature == 0.0 {
        omega0.signum()
    } else {
        (0.5 * omega0 / temperature).tanh()
    }
}

/// Lowest-order fluctuation for a spin-1/2 with `h = omega0 sigma_z / 2`,
/// `G = sigma_x`, Gibbs state at temperature `T`, coupled by `phi(1)` to one
/// mode of frequency `omega_r` in the coherent state `alpha` (real):
/// `2 sqrt(2) lambda alpha A_{ud} tanh(omega0/2T) omega0 (cos omega0 t - cos omega_r t)/(omega0^2 - omega_r^2)`.
pub fn fluctuation_closed(alpha: f64, a_offdiag: f64, omega0: f64, omega_r: f64, temperature: f64, lambda: f64, t: f64) -> f64 {
    let sum = omega0 + omega_r;
    let diff = omega0 - omega_r;
    // cos a - cos b = -2 sin((a+b)/2) sin((a-b)/2)
    let structure = -2.0 * sinc_t(sum, 0.5 * t) * sinc_t(diff, 0.5 * t) * omega0;
    2.0 * SQRT_2 * lambda * alpha * a_offdiag * polarization(omega0, temperature) * structure
}

/// `-2 sqrt(2) lambda int_0^t Im mu_S(G(s) A(t)) Re(e^{-i omega_r s} alpha) ds`
/// for a general single-particle model and complex `alpha`.
pub fn fluctuation_integral(h: &OperatorMatrix, g: &OperatorMatrix, state: &OperatorMatrix, a: &OperatorMatrix, alpha: C64, omega_r: f64, lambda: f64, t: f64) -> Result<f64> {
    let prop = Propagator::new(h.clone())?;
    let a_t = prop.heisenberg(a, t)?;
    let (x, w) = gauss_legendre(48);
    let mut acc = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        let s = 0.5 * t * (xi + 1.0);
        let sys = state.trace_product(&prop.heisenberg(g, s)?.matmul(&a_t)).im;
        acc += 0.5 * t * wi * sys * (C64::from_polar(1.0, -omega_r * s) * alpha).re;
    }
    Ok(-2.0 * SQRT_2 * lambda * acc)
}
