//! Model description shared by the exact oracle and the expansion engine.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::reservoir::{FockSpace, QuasifreeField};
use crate::tensor::{embed_slots, OperatorMatrix, HERMITIAN_TOL};

/// Largest total Hilbert-space dimension the dense oracle will build.
pub const DEFAULT_DIMENSION_CAP: usize = 4096;

/// Tolerance on `||[G, h]||` for the energy-conserving flag.
pub const ENERGY_CONSERVING_TOL: f64 = 1e-12;

/// One particle type: free Hamiltonian `h`, coupling operator `G`, initial
/// state and the index of the reservoir operator `B` it couples to.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSpec {
    pub h: OperatorMatrix,
    pub g: OperatorMatrix,
    pub state: OperatorMatrix,
    pub channel: usize,
}

impl ParticleSpec {
    pub fn new(h: OperatorMatrix, g: OperatorMatrix, state: OperatorMatrix, channel: usize) -> Result<Self> {
        let d = h.dim();
        for m in [&g, &state] {
            if m.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: m.dim() });
            }
        }
        h.ensure_hermitian()?;
        g.ensure_hermitian()?;
        state.ensure_density()?;
        let one = |m: OperatorMatrix| m.with_dims(vec![d]);
        Ok(Self { h: one(h)?, g: one(g)?, state: one(state)?, channel })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// `||[G, h]||_max`.
    pub fn energy_deviation(&self) -> f64 {
        self.g.commutator(&self.h).max_abs()
    }
}

/// Initial state of a bosonic reservoir.
#[derive(Clone, Debug, PartialEq)]
pub enum ReservoirState {
    Vacuum,
    /// Gibbs state of `H_r`, truncated and renormalized.
    Thermal { beta: f64 },
    /// Product of coherent states, one amplitude per mode.
    Coherent { alpha: Vec<C64> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reservoir {
    /// Truncated free bosons. Channel `c` is the field `phi(f_c)` with
    /// amplitudes `channels[c][k]` on mode `k`.
    Fock { space: FockSpace, channels: Vec<Vec<C64>>, state: ReservoirState },
    /// Arbitrary finite-dimensional reservoir with bounded couplings.
    Finite { h: OperatorMatrix, couplings: Vec<OperatorMatrix>, state: OperatorMatrix },
}

/// Reservoir part `A_r` of a product observable.
#[derive(Clone, Debug, PartialEq)]
pub enum ReservoirObservable {
    Identity,
    /// Total number operator of a Fock reservoir.
    Number,
    /// `phi(f)`.
    Field(Vec<C64>),
    /// `phi(f_1) ... phi(f_k)`.
    FieldProduct(Vec<Vec<C64>>),
    /// `W(f)`.
    Weyl(Vec<C64>),
    Matrix(OperatorMatrix),
}

/// `A = A_S ⊗ A_r`, with `A_S` acting on particles `1..n` (`n = 0` when absent).
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    pub system: Option<OperatorMatrix>,
    pub reservoir: ReservoirObservable,
}

impl Observable {
    pub fn system(op: OperatorMatrix) -> Self {
        Self { system: Some(op), reservoir: ReservoirObservable::Identity }
    }

    pub fn reservoir(op: ReservoirObservable) -> Self {
        Self { system: None, reservoir: op }
    }

    pub fn product(system: OperatorMatrix, reservoir: ReservoirObservable) -> Self {
        Self { system: Some(system), reservoir }
    }

    /// Number of particle slots `A_S` acts on.
    pub fn support(&self) -> usize {
        self.system.as_ref().map_or(0, |s| s.dims().len())
    }

    pub fn system_norm(&self) -> f64 {
        self.system.as_ref().map_or(1.0, |s| s.operator_norm())
    }
}

impl Reservoir {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            Reservoir::Fock { space, .. } => space.dims(),
            Reservoir::Finite { h, .. } => vec![h.dim()],
        }
    }

    pub fn dim(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn channel_count(&self) -> usize {
        match self {
            Reservoir::Fock { channels, .. } => channels.len(),
            Reservoir::Finite { couplings, .. } => couplings.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Reservoir::Fock { space, channels, state } => {
                if channels.is_empty() {
                    return Err(Error::InvalidParameter("reservoir needs at least one coupling channel".into()));
                }
                for c in channels {
                    if c.len() != space.modes.len() {
                        return Err(Error::DimensionMismatch { expected: space.modes.len(), found: c.len() });
                    }
                }
                match state {
                    ReservoirState::Thermal { beta } if !(*beta > 0.0) => {
                        Err(Error::InvalidParameter(format!("beta = {beta} must be positive")))
                    }
                    ReservoirState::Coherent { alpha } if alpha.len() != space.modes.len() => {
                        Err(Error::DimensionMismatch { expected: space.modes.len(), found: alpha.len() })
                    }
                    _ => Ok(()),
                }
            }
            Reservoir::Finite { h, couplings, state } => {
                h.ensure_hermitian()?;
                state.ensure_density()?;
                if couplings.is_empty() {
                    return Err(Error::InvalidParameter("reservoir needs at least one coupling channel".into()));
                }
                for b in couplings {
                    if b.dim() != h.dim() {
                        return Err(Error::DimensionMismatch { expected: h.dim(), found: b.dim() });
                    }
                    b.ensure_hermitian()?;
                }
                Ok(())
            }
        }
    }

    pub fn hamiltonian(&self) -> OperatorMatrix {
        match self {
            Reservoir::Fock { space, .. } => space.hamiltonian(),
            Reservoir::Finite { h, .. } => h.clone(),
        }
    }

    /// Coupling operator `B_c`.
    pub fn coupling(&self, c: usize) -> Result<OperatorMatrix> {
        match self {
            Reservoir::Fock { space, channels, .. } => {
                let f = channels.get(c).ok_or_else(|| Error::InvalidParameter(format!("no coupling channel {c}")))?;
                space.field(f)
            }
            Reservoir::Finite { couplings, .. } => {
                couplings.get(c).cloned().ok_or_else(|| Error::InvalidParameter(format!("no coupling channel {c}")))
            }
        }
    }

    /// Initial reservoir state as a mixture `sum_i p_i |psi_i><psi_i|` in the
    /// computational basis.
    pub fn state_mixture(&self) -> Result<Vec<(f64, Vec<C64>)>> {
        let basis = |i: usize, d: usize| {
            let mut v = vec![C64::new(0.0, 0.0); d];
            v[i] = C64::new(1.0, 0.0);
            v
        };
        match self {
            Reservoir::Fock { space, state, .. } => match state {
                ReservoirState::Vacuum => Ok(vec![(1.0, space.vacuum())]),
                ReservoirState::Thermal { beta } => Ok(space
                    .thermal_weights(*beta)
                    .into_iter()
                    .enumerate()
                    .filter(|(_, p)| *p > 1e-18)
                    .map(|(i, p)| (p, basis(i, space.dim())))
                    .collect()),
                ReservoirState::Coherent { alpha } => Ok(vec![(1.0, space.coherent(alpha)?)]),
            },
            Reservoir::Finite { state, .. } => {
                let eig = state.eigh()?;
                let d = state.dim();
                Ok(eig
                    .values
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 1e-18)
                    .map(|(k, &p)| (p, (0..d).map(|i| eig.vectors[(i, k)]).collect()))
                    .collect())
            }
        }
    }

    pub fn density(&self) -> Result<OperatorMatrix> {
        let dims = self.dims();
        let mut rho = OperatorMatrix::zeros(&dims);
        for (p, psi) in self.state_mixture()? {
            rho = &rho + &OperatorMatrix::projector(&psi).with_dims(dims.clone())?.scale(C64::new(p, 0.0));
        }
        Ok(rho)
    }

    /// Matrix of `A_r` on the reservoir space.
    pub fn observable_matrix(&self, obs: &ReservoirObservable) -> Result<OperatorMatrix> {
        let dims = self.dims();
        match (self, obs) {
            (_, ReservoirObservable::Identity) => Ok(OperatorMatrix::identity(&dims)),
            (_, ReservoirObservable::Matrix(m)) => {
                if m.dim() != self.dim() {
                    return Err(Error::DimensionMismatch { expected: self.dim(), found: m.dim() });
                }
                m.clone().with_dims(dims)
            }
            (Reservoir::Fock { space, .. }, ReservoirObservable::Number) => Ok(space.number()),
            (Reservoir::Fock { space, .. }, ReservoirObservable::Field(f)) => space.field(f),
            (Reservoir::Fock { space, .. }, ReservoirObservable::FieldProduct(fs)) => {
                let mut out = OperatorMatrix::identity(&dims);
                for f in fs {
                    out = out.matmul(&space.field(f)?);
                }
                Ok(out)
            }
            (Reservoir::Fock { space, .. }, ReservoirObservable::Weyl(f)) => space.weyl(f),
            (Reservoir::Finite { .. }, other) => {
                Err(Error::Unsupported(format!("{other:?} on a finite reservoir")))
            }
        }
    }

    /// Operator norm of every coupling, the `g_r` of the bounded-reservoir case.
    pub fn coupling_norm(&self) -> Result<f64> {
        let mut g: f64 = 0.0;
        for c in 0..self.channel_count() {
            g = g.max(self.coupling(c)?.operator_norm());
        }
        Ok(g)
    }

    /// Quasifree description of a vacuum or thermal Fock reservoir.
    pub fn quasifree(&self) -> Option<QuasifreeField> {
        match self {
            Reservoir::Fock { space, state, .. } => {
                let freqs: Vec<f64> = space.modes.iter().map(|m| m.frequency).collect();
                match state {
                    ReservoirState::Vacuum => Some(QuasifreeField::vacuum(freqs)),
                    ReservoirState::Thermal { beta } => QuasifreeField::thermal(freqs, *beta).ok(),
                    ReservoirState::Coherent { .. } => None,
                }
            }
            Reservoir::Finite { .. } => None,
        }
    }

    pub fn channel_amplitudes(&self, c: usize) -> Option<&[C64]> {
        match self {
            Reservoir::Fock { channels, .. } => channels.get(c).map(|v| v.as_slice()),
            Reservoir::Finite { .. } => None,
        }
    }
}

/// `N` particles coupled to one reservoir. Particle `j` (0-based) uses
/// `particles[min(j, len - 1)]`, so the last entry repeats indefinitely.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub particles: Vec<ParticleSpec>,
    pub reservoir: Reservoir,
    pub lambda: f64,
}

impl SystemModel {
    pub fn new(particles: Vec<ParticleSpec>, reservoir: Reservoir, lambda: f64) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::InvalidParameter("model needs at least one particle spec".into()));
        }
        if !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda = {lambda}")));
        }
        reservoir.validate()?;
        for p in &particles {
            if p.channel >= reservoir.channel_count() {
                return Err(Error::InvalidParameter(format!("particle couples to missing channel {}", p.channel)));
            }
        }
        Ok(Self { particles, reservoir, lambda })
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    /// Species index of particle `j` (0-based).
    pub fn species(&self, j: usize) -> usize {
        j.min(self.particles.len() - 1)
    }

    pub fn particle(&self, j: usize) -> &ParticleSpec {
        &self.particles[self.species(j)]
    }

    /// `g = max_j ||G_j||`.
    pub fn g(&self) -> f64 {
        self.particles.iter().map(|p| p.g.operator_norm()).fold(0.0, f64::max)
    }

    /// All particles identical.
    pub fn symmetric(&self) -> bool {
        self.particles.windows(2).all(|w| w[0] == w[1])
    }

    pub fn energy_deviation(&self) -> f64 {
        self.particles.iter().map(|p| p.energy_deviation()).fold(0.0, f64::max)
    }

    pub fn energy_conserving(&self) -> bool {
        self.energy_deviation() <= ENERGY_CONSERVING_TOL
    }

    pub fn ensure_energy_conserving(&self) -> Result<()> {
        let deviation = self.energy_deviation();
        if deviation > ENERGY_CONSERVING_TOL {
            return Err(Error::NotEnergyConserving { deviation });
        }
        Ok(())
    }

    /// Tensor factor dimensions `[d_1, ..., d_N, reservoir...]`.
    pub fn dims(&self, n_particles: usize) -> Vec<usize> {
        let mut dims: Vec<usize> = (0..n_particles).map(|j| self.particle(j).dim()).collect();
        dims.extend(self.reservoir.dims());
        dims
    }

    pub fn total_dim(&self, n_particles: usize) -> usize {
        self.dims(n_particles).iter().product()
    }

    fn reservoir_slots(&self, n_particles: usize) -> Vec<usize> {
        (n_particles..n_particles + self.reservoir.dims().len()).collect()
    }

    /// Embed `A_S ⊗ A_r` into the `N`-particle space.
    pub fn embed_observable(&self, n_particles: usize, obs: &Observable) -> Result<OperatorMatrix> {
        let n = obs.support();
        if n > n_particles {
            return Err(Error::InvalidParameter(format!("observable acts on {n} particles but N = {n_particles}")));
        }
        let ar = self.reservoir.observable_matrix(&obs.reservoir)?;
        let (op, mut slots) = match &obs.system {
            Some(s) => {
                for (j, &d) in s.dims().iter().enumerate() {
                    if d != self.particle(j).dim() {
                        return Err(Error::DimensionMismatch { expected: self.particle(j).dim(), found: d });
                    }
                }
                (s.kron(&ar), (0..n).collect::<Vec<_>>())
            }
            None => (ar, Vec::new()),
        };
        slots.extend(self.reservoir_slots(n_particles));
        embed_slots(&op, &slots, &self.dims(n_particles))
    }

    /// Initial density matrix `mu_1 ⊗ ... ⊗ mu_N ⊗ mu_r`.
    pub fn initial_density(&self, n_particles: usize) -> Result<OperatorMatrix> {
        let mut rho = self.particle(0).state.clone();
        for j in 1..n_particles {
            rho = rho.kron(&self.particle(j).state);
        }
        let res = self.reservoir.density()?;
        Ok(if n_particles == 0 { res } else { rho.kron(&res) })
    }
}

/// `H_N = sum_j h_j + H_r + (lambda / sqrt(N)) sum_j G_j ⊗ B_j`.
pub fn build_hamiltonian(model: &SystemModel, n_particles: usize, cap: usize) -> Result<OperatorMatrix> {
    if n_particles == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    let dims = model.dims(n_particles);
    let dim: usize = dims.iter().product();
    if dim > cap {
        return Err(Error::DimensionCap { dim, cap });
    }
    let res_slots = model.reservoir_slots(n_particles);
    let mut h = embed_slots(&model.reservoir.hamiltonian(), &res_slots, &dims)?;
    let scale = C64::new(model.lambda / (n_particles as f64).sqrt(), 0.0);
    let couplings: Vec<OperatorMatrix> =
        (0..model.reservoir.channel_count()).map(|c| model.reservoir.coupling(c)).collect::<Result<_>>()?;
    for j in 0..n_particles {
        let p = model.particle(j);
        h = &h + &embed_slots(&p.h, &[j], &dims)?;
        if model.lambda != 0.0 {
            let mut slots = vec![j];
            slots.extend(&res_slots);
            let v = p.g.kron(&couplings[p.channel]).scale(scale);
            h = &h + &embed_slots(&v, &slots, &dims)?;
        }
    }
    let dev = h.hermitian_deviation();
    if dev > HERMITIAN_TOL {
        return Err(Error::NotHermitian { deviation: dev });
    }
    Ok(h)
}
