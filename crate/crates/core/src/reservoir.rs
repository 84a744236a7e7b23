//! Bosonic reservoirs: truncated Fock modes, field and Weyl operators,
//! quasifree two-point functions and discretized continuum fields.
//!
//! Conventions used throughout the crate:
//! * `phi(f) = (conj(f) a + f a^dag) / sqrt(2)`, so `phi(f)` is real-linear in `f`;
//! * free evolution with `H = omega a^dag a` acts as `phi(f)(t) = phi(e^{i omega t} f)`;
//! * `W(f) = exp(i phi(f))`, with vacuum expectation `exp(-|f|^2 / 4)`;
//! * the coherent state `|alpha>` is `W(-i sqrt(2) alpha) |0>`.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::tensor::{embed, OperatorMatrix};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Weyl operators whose action on the vacuum leaves more than this weight in
/// the two highest Fock levels are rejected.
pub const WEYL_TRUNCATION_TOL: f64 = 1e-8;

/// Single bosonic mode truncated at `cutoff` quanta.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FockMode {
    pub cutoff: usize,
    pub frequency: f64,
}

impl FockMode {
    pub fn new(cutoff: usize, frequency: f64) -> Result<Self> {
        if cutoff < 1 {
            return Err(Error::InvalidParameter("Fock cutoff must be at least 1".into()));
        }
        if !(frequency.is_finite() && frequency >= 0.0) {
            return Err(Error::InvalidParameter(format!("mode frequency {frequency} must be finite and >= 0")));
        }
        Ok(Self { cutoff, frequency })
    }

    pub fn dim(&self) -> usize {
        self.cutoff + 1
    }
}

/// Matrices of a single truncated mode.
#[derive(Clone, Debug)]
pub struct FockOperators {
    pub a: OperatorMatrix,
    pub a_dag: OperatorMatrix,
    pub phi: OperatorMatrix,
    pub number: OperatorMatrix,
    pub hamiltonian: OperatorMatrix,
}

pub fn fock_operators(mode: &FockMode) -> FockOperators {
    let d = mode.dim();
    let a = OperatorMatrix::from_fn(&[d], |i, j| if j == i + 1 { C64::new((j as f64).sqrt(), 0.0) } else { ZERO });
    let a_dag = a.adjoint();
    let phi = (&a + &a_dag).scale(C64::new(1.0 / SQRT_2, 0.0));
    let number = OperatorMatrix::from_fn(&[d], |i, j| if i == j { C64::new(i as f64, 0.0) } else { ZERO });
    let hamiltonian = number.scale(C64::new(mode.frequency, 0.0));
    FockOperators { a, a_dag, phi, number, hamiltonian }
}

/// `phi(f)` on a single mode.
pub fn field_operator(mode: &FockMode, f: C64) -> OperatorMatrix {
    let ops = fock_operators(mode);
    (&ops.a.scale(f.conj()) + &ops.a_dag.scale(f)).scale(C64::new(1.0 / SQRT_2, 0.0))
}

/// `exp(i X)` for hermitian `X`.
pub fn exp_i_hermitian(x: &OperatorMatrix) -> Result<OperatorMatrix> {
    x.ensure_hermitian()?;
    let eig = x.eigh()?;
    let diag: Vec<C64> = eig.values.iter().map(|&v| C64::from_polar(1.0, v)).collect();
    let d = OperatorMatrix::diagonal(x.dims(), &diag)?;
    Ok(eig.vectors.matmul(&d.matmul(&eig.vectors.adjoint())))
}

fn top_two_population(psi: &[C64], dim: usize) -> f64 {
    psi[dim.saturating_sub(2)..dim].iter().map(|z| z.norm_sqr()).sum()
}

/// Weyl operator `W(f) = exp(i phi(f))` on a single truncated mode.
pub fn weyl(mode: &FockMode, f: C64) -> Result<OperatorMatrix> {
    let w = exp_i_hermitian(&field_operator(mode, f))?;
    let mut vac = vec![ZERO; mode.dim()];
    vac[0] = C64::new(1.0, 0.0);
    let population = top_two_population(&w.apply(&vac), mode.dim());
    if population > WEYL_TRUNCATION_TOL {
        return Err(Error::TruncationDominated { population });
    }
    Ok(w)
}

/// Several truncated modes on the tensor product of their Fock spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct FockSpace {
    pub modes: Vec<FockMode>,
}

impl FockSpace {
    pub fn new(modes: Vec<FockMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidParameter("Fock space needs at least one mode".into()));
        }
        Ok(Self { modes })
    }

    pub fn dims(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m.dim()).collect()
    }

    pub fn dim(&self) -> usize {
        self.dims().iter().product()
    }

    fn check_amplitudes(&self, f: &[C64]) -> Result<()> {
        if f.len() != self.modes.len() {
            return Err(Error::DimensionMismatch { expected: self.modes.len(), found: f.len() });
        }
        Ok(())
    }

    fn embed_mode(&self, k: usize, op: &OperatorMatrix) -> OperatorMatrix {
        embed(op, k, &self.dims()).expect("mode slot in range")
    }

    pub fn annihilation(&self, k: usize) -> OperatorMatrix {
        self.embed_mode(k, &fock_operators(&self.modes[k]).a)
    }

    /// `phi(f) = sum_k phi_k(f_k)`.
    pub fn field(&self, f: &[C64]) -> Result<OperatorMatrix> {
        self.check_amplitudes(f)?;
        let mut out = OperatorMatrix::zeros(&self.dims());
        for (k, (m, &fk)) in self.modes.iter().zip(f).enumerate() {
            if fk != ZERO {
                out = &out + &self.embed_mode(k, &field_operator(m, fk));
            }
        }
        Ok(out)
    }

    pub fn number(&self) -> OperatorMatrix {
        let mut out = OperatorMatrix::zeros(&self.dims());
        for (k, m) in self.modes.iter().enumerate() {
            out = &out + &self.embed_mode(k, &fock_operators(m).number);
        }
        out
    }

    /// Occupation of every basis state (row-major over modes).
    pub fn occupations(&self, index: usize) -> Vec<usize> {
        let dims = self.dims();
        let mut occ = vec![0; dims.len()];
        let mut rest = index;
        for k in (0..dims.len()).rev() {
            occ[k] = rest % dims[k];
            rest /= dims[k];
        }
        occ
    }

    /// Diagonal of `H_r = sum_k omega_k a_k^dag a_k` in the number basis.
    pub fn energies(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.occupations(i).iter().zip(&self.modes).map(|(&n, m)| n as f64 * m.frequency).sum())
            .collect()
    }

    pub fn hamiltonian(&self) -> OperatorMatrix {
        let e: Vec<C64> = self.energies().into_iter().map(|x| C64::new(x, 0.0)).collect();
        OperatorMatrix::diagonal(&self.dims(), &e).expect("dims")
    }

    /// Projector onto states where some mode has one of its two highest
    /// occupations.
    pub fn top_levels_projector(&self) -> OperatorMatrix {
        let diag: Vec<C64> = (0..self.dim())
            .map(|i| {
                let top = self.occupations(i).iter().zip(&self.modes).any(|(&n, m)| n + 2 > m.cutoff);
                C64::new(if top { 1.0 } else { 0.0 }, 0.0)
            })
            .collect();
        OperatorMatrix::diagonal(&self.dims(), &diag).expect("dims")
    }

    /// `W(f)` as the product of commuting single-mode Weyl operators.
    pub fn weyl(&self, f: &[C64]) -> Result<OperatorMatrix> {
        self.check_amplitudes(f)?;
        let mut out = OperatorMatrix::identity(&self.dims());
        for (k, (m, &fk)) in self.modes.iter().zip(f).enumerate() {
            if fk != ZERO {
                out = out.matmul(&self.embed_mode(k, &weyl(m, fk)?));
            }
        }
        Ok(out)
    }

    pub fn vacuum(&self) -> Vec<C64> {
        let mut v = vec![ZERO; self.dim()];
        v[0] = C64::new(1.0, 0.0);
        v
    }

    /// Coherent state `D(alpha)|0> = W(-i sqrt(2) alpha)|0>`.
    pub fn coherent(&self, alpha: &[C64]) -> Result<Vec<C64>> {
        let f: Vec<C64> = alpha.iter().map(|&a| -I * SQRT_2 * a).collect();
        Ok(self.weyl(&f)?.apply(&self.vacuum()))
    }

    /// Truncated Gibbs state: mixture of number states with weights
    /// `prod_k (1 - x_k) x_k^{n_k}` renormalized on the truncated space.
    pub fn thermal_weights(&self, beta: f64) -> Vec<f64> {
        let w: Vec<f64> = self.energies().iter().map(|&e| (-beta * e).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }
}

/// Origin of a correlation function, kept for reports.
#[derive(Clone, Debug, PartialEq)]
pub enum CorrelationLabel {
    Vacuum,
    Thermal { beta: f64 },
    CoherentShifted,
    Custom(String),
}

impl fmt::Display for CorrelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Vacuum => write!(f, "vacuum"),
            Self::Thermal { beta } => write!(f, "thermal(beta={beta})"),
            Self::CoherentShifted => write!(f, "coherent-shifted"),
            Self::Custom(s) => write!(f, "custom({s})"),
        }
    }
}

type Evaluator = dyn Fn(f64, f64) -> C64 + Send + Sync;

/// Two-point function `C(s, s') = mu_r(B(s) B(s'))`.
#[derive(Clone)]
pub struct CorrelationFunction {
    evaluator: Arc<Evaluator>,
    pub label: CorrelationLabel,
}

impl fmt::Debug for CorrelationFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CorrelationFunction").field("label", &self.label).finish_non_exhaustive()
    }
}

impl CorrelationFunction {
    pub fn new(label: CorrelationLabel, evaluator: impl Fn(f64, f64) -> C64 + Send + Sync + 'static) -> Self {
        Self { evaluator: Arc::new(evaluator), label }
    }

    pub fn eval(&self, s: f64, s_prime: f64) -> C64 {
        (self.evaluator)(s, s_prime)
    }

    /// Gram matrix `C(s_i, s_j)` on a time grid.
    pub fn gram(&self, grid: &[f64]) -> OperatorMatrix {
        OperatorMatrix::from_fn(&[grid.len()], |i, j| self.eval(grid[i], grid[j]))
    }
}

/// Continuum field reduced to finitely many modes `(omega_k, g_k)` with
/// quadrature weights `w_k`; mode `k` couples with amplitude `sqrt(w_k) g_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedField {
    pub frequencies: Vec<f64>,
    pub couplings: Vec<C64>,
    pub weights: Vec<f64>,
}

impl DiscretizedField {
    pub fn new(frequencies: Vec<f64>, couplings: Vec<C64>, weights: Vec<f64>) -> Result<Self> {
        let k = frequencies.len();
        if k == 0 {
            return Err(Error::InvalidParameter("field needs at least one mode".into()));
        }
        for len in [couplings.len(), weights.len()] {
            if len != k {
                return Err(Error::DimensionMismatch { expected: k, found: len });
            }
        }
        if frequencies.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::InvalidParameter("field frequencies must be positive".into()));
        }
        if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::InvalidParameter("quadrature weights must be nonnegative".into()));
        }
        Ok(Self { frequencies, couplings, weights })
    }

    /// One mode of weight one.
    pub fn single(frequency: f64, coupling: C64) -> Result<Self> {
        Self::new(vec![frequency], vec![coupling], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Per-mode amplitudes `sqrt(w_k) g_k` of the coupling field.
    pub fn amplitudes(&self) -> Vec<C64> {
        self.couplings.iter().zip(&self.weights).map(|(g, w)| g * w.sqrt()).collect()
    }

    /// `sum_k w_k |g_k|^2`.
    pub fn norm_sq(&self) -> f64 {
        self.couplings.iter().zip(&self.weights).map(|(g, w)| w * g.norm_sqr()).sum()
    }

    /// `sum_k w_k F(omega_k) |g_k|^2`.
    pub fn weighted_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        (0..self.len()).map(|k| self.weights[k] * self.couplings[k].norm_sqr() * f(self.frequencies[k])).sum()
    }

    pub fn modes(&self, cutoff: usize) -> Result<Vec<FockMode>> {
        self.frequencies.iter().map(|&w| FockMode::new(cutoff, w)).collect()
    }
}

/// Gauss-Legendre discretization of `int_0^omega_max rho(omega) d omega`; the
/// radial Jacobian and angular factors are the caller's responsibility.
pub fn discretize_radial(density: impl Fn(f64) -> f64, omega_max: f64, k: usize) -> Result<DiscretizedField> {
    if k < 2 {
        return Err(Error::InvalidParameter("need at least two modes".into()));
    }
    if !(omega_max.is_finite() && omega_max > 0.0) {
        return Err(Error::InvalidParameter(format!("omega_max = {omega_max}")));
    }
    let (x, w) = gauss_legendre(k);
    let half = 0.5 * omega_max;
    let mut freqs = Vec::with_capacity(k);
    let mut couplings = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for (xi, wi) in x.iter().zip(&w) {
        let omega = half * (xi + 1.0);
        let rho = density(omega);
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(Error::InvalidParameter(format!("density {rho} at omega = {omega} is not integrable")));
        }
        freqs.push(omega);
        couplings.push(C64::new(rho.sqrt(), 0.0));
        weights.push(half * wi);
    }
    DiscretizedField::new(freqs, couplings, weights)
}

/// Gauge-invariant quasifree state of independent modes with mean occupations
/// `n_k` (zero for the vacuum).
#[derive(Clone, Debug, PartialEq)]
pub struct QuasifreeField {
    pub frequencies: Vec<f64>,
    pub occupations: Vec<f64>,
}

impl QuasifreeField {
    pub fn vacuum(frequencies: Vec<f64>) -> Self {
        let occupations = vec![0.0; frequencies.len()];
        Self { frequencies, occupations }
    }

    /// Bose-Einstein occupations at inverse temperature `beta` (`inf` gives the vacuum).
    pub fn thermal(frequencies: Vec<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta = {beta} must be positive")));
        }
        let occupations = frequencies
            .iter()
            .map(|&w| {
                if w <= 0.0 {
                    Err(Error::InvalidParameter("thermal mode with zero frequency".into()))
                } else if beta.is_infinite() {
                    Ok(0.0)
                } else {
                    Ok(1.0 / (beta * w).exp_m1())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { frequencies, occupations })
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// `mu(phi(e^{i s omega} f) phi(e^{i s' omega} h))`.
    pub fn two_point(&self, f: &[C64], s: f64, h: &[C64], s_prime: f64) -> C64 {
        let mut acc = ZERO;
        for k in 0..self.len() {
            let w = self.frequencies[k];
            let n = self.occupations[k];
            let phase = C64::from_polar(1.0, -w * (s - s_prime));
            acc += (n + 1.0) * f[k].conj() * h[k] * phase + n * f[k] * h[k].conj() * phase.conj();
        }
        0.5 * acc
    }

    /// Correlation function of the field `phi(f)` with itself.
    pub fn correlation(&self, f: &[C64], label: CorrelationLabel) -> CorrelationFunction {
        let field = self.clone();
        let f = f.to_vec();
        CorrelationFunction::new(label, move |s, sp| field.two_point(&f, s, &f, sp))
    }

    /// `sup_{s, s'} |C_{f h}(s, s')| <= C_{ff}(0,0)^{1/2} C_{hh}(0,0)^{1/2}` by
    /// Cauchy-Schwarz; the diagonal is time independent.
    pub fn bound_constant(&self, fields: &[&[C64]]) -> f64 {
        fields.iter().map(|f| self.two_point(f, 0.0, f, 0.0).re).fold(0.0, f64::max)
    }
}

/// `C(s,s') = 1/2 sum_k w_k |g_k|^2 e^{-i omega_k (s - s')}`.
pub fn correlation_vacuum(field: &DiscretizedField) -> CorrelationFunction {
    let q = QuasifreeField::vacuum(field.frequencies.clone());
    q.correlation(&field.amplitudes(), CorrelationLabel::Vacuum)
}

/// `C(s,s') = 1/2 sum_k w_k |g_k|^2 [coth(beta omega_k / 2) cos - i sin](omega_k (s - s'))`.
pub fn correlation_thermal(field: &DiscretizedField, beta: f64) -> Result<CorrelationFunction> {
    let q = QuasifreeField::thermal(field.frequencies.clone(), beta)?;
    Ok(q.correlation(&field.amplitudes(), CorrelationLabel::Thermal { beta }))
}
