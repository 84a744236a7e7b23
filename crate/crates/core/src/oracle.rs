//! Brute-force reference values from the full `N`-particle Hamiltonian.

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::dyson::{base_value, raw_table, Numerics};
use crate::commutator::{ReservoirMoments, TermContext};
use crate::error::{Error, Result};
use crate::model::{build_hamiltonian, Observable, Reservoir, ReservoirObservable, SystemModel, DEFAULT_DIMENSION_CAP};
use crate::tensor::{embed, OperatorMatrix, Propagator, Trajectory};
use crate::wick::{certify, remainder_bound, BetaBounds};

/// Largest population of the two highest Fock levels tolerated along a trajectory.
pub const TRUNCATION_TOL: f64 = 1e-6;

/// Eigendecomposition of `H_N` and the initial state, reusable across
/// observables and times.
pub struct Oracle {
    n_particles: usize,
    propagator: Propagator,
    rho: OperatorMatrix,
    truncation: Option<Trajectory>,
}

fn top_levels(model: &SystemModel, dims: &[usize]) -> Result<Option<OperatorMatrix>> {
    match &model.reservoir {
        Reservoir::Fock { space, .. } => Ok(Some(embed(&space.top_levels_projector(), dims.len() - 1, dims)?)),
        Reservoir::Finite { .. } => Ok(None),
    }
}

impl Oracle {
    pub fn new(model: &SystemModel, n_particles: usize, cap: usize) -> Result<Self> {
        let h = build_hamiltonian(model, n_particles, cap)?;
        let rho = model.initial_density(n_particles)?;
        let propagator = Propagator::new(h)?;
        let truncation = match top_levels(model, &model.dims(n_particles))? {
            Some(p) => Some(propagator.trajectory(&rho, &p)?),
            None => None,
        };
        Ok(Self { n_particles, propagator, rho, truncation })
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    /// Population of the two highest Fock levels at time `t`.
    pub fn truncation_population(&self, t: f64) -> f64 {
        self.truncation.as_ref().map_or(0.0, |tr| tr.value(t).re)
    }

    pub fn certify_truncation(&self, times: &[f64]) -> Result<()> {
        for &t in times {
            let population = self.truncation_population(t);
            if population > TRUNCATION_TOL {
                return Err(Error::TruncationCertificate { population, time: t });
            }
        }
        Ok(())
    }

    pub fn trajectory(&self, model: &SystemModel, obs: &Observable) -> Result<Trajectory> {
        if obs.support() > self.n_particles {
            return Err(Error::InvalidParameter(format!("observable on {} particles, N = {}", obs.support(), self.n_particles)));
        }
        self.propagator.trajectory(&self.rho, &model.embed_observable(self.n_particles, obs)?)
    }

    /// `omega_N(tau^t(A))` at every time, after the truncation certificate.
    pub fn expectations(&self, model: &SystemModel, obs: &Observable, times: &[f64]) -> Result<Vec<C64>> {
        self.certify_truncation(times)?;
        let tr = self.trajectory(model, obs)?;
        Ok(times.iter().map(|&t| tr.value(t)).collect())
    }
}

/// `omega_N(tau^t_{lambda,N}(A))` by exact propagation. At `lambda = 0` only
/// the observed particles and the reservoir are built.
pub fn evolve_expectation(model: &SystemModel, n_particles: usize, obs: &Observable, t: f64) -> Result<C64> {
    evolve_expectations(model, n_particles, obs, &[t]).map(|v| v[0])
}

pub fn evolve_expectations(model: &SystemModel, n_particles: usize, obs: &Observable, times: &[f64]) -> Result<Vec<C64>> {
    if n_particles == 0 || obs.support() > n_particles {
        return Err(Error::InvalidParameter(format!("need 1 <= n <= N, got n = {}, N = {n_particles}", obs.support())));
    }
    let n_eff = if model.lambda == 0.0 { obs.support().max(1) } else { n_particles };
    Oracle::new(model, n_eff, DEFAULT_DIMENSION_CAP)?.expectations(model, obs, times)
}

/// Distribution of the eigenvalues of `sum_j G_j` in the product state.
fn collective_distribution(model: &SystemModel, n_particles: usize) -> Result<Vec<(f64, f64)>> {
    const MERGE_TOL: f64 = 1e-9;
    let mut per_species = Vec::new();
    for p in &model.particles {
        let eig = p.g.eigh()?;
        let d = p.dim();
        let dist: Vec<(f64, f64)> = (0..d)
            .map(|k| {
                let v: Vec<C64> = (0..d).map(|i| eig.vectors[(i, k)]).collect();
                let w: C64 = v.iter().zip(p.state.apply(&v)).map(|(a, b)| a.conj() * b).sum();
                (eig.values[k], w.re)
            })
            .collect();
        per_species.push(dist);
    }
    let mut dist = vec![(0.0, 1.0)];
    for j in 0..n_particles {
        let single = &per_species[model.species(j)];
        let mut next: Vec<(f64, f64)> = Vec::with_capacity(dist.len() * single.len());
        for &(s, ps) in &dist {
            for &(g, pg) in single {
                if ps * pg > 0.0 {
                    next.push((s + g, ps * pg));
                }
            }
        }
        next.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite eigenvalues"));
        dist.clear();
        for (s, p) in next {
            match dist.last_mut() {
                Some(last) if (s - last.0).abs() < MERGE_TOL => last.1 += p,
                _ => dist.push((s, p)),
            }
        }
    }
    Ok(dist)
}

/// Exact `omega_N(tau^t(1 ⊗ A_r))` for an energy-conserving model whose
/// particles all couple to the same reservoir operator: the collective
/// operator `S = sum_j G_j` is conserved, so the dynamics splits into
/// reservoir evolutions under `H_r + (lambda / sqrt N) s B` weighted by the
/// distribution of `s`.
pub fn sector_expectations(model: &SystemModel, n_particles: usize, observable: &ReservoirObservable, times: &[f64]) -> Result<Vec<C64>> {
    model.ensure_energy_conserving()?;
    let channel = model.particles[0].channel;
    if model.particles.iter().any(|p| p.channel != channel) {
        return Err(Error::Unsupported("sector oracle needs a shared coupling channel".into()));
    }
    if n_particles == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    let h_r = model.reservoir.hamiltonian();
    let b = model.reservoir.coupling(channel)?;
    let a_r = model.reservoir.observable_matrix(observable)?;
    let rho = model.reservoir.density()?;
    let top = match &model.reservoir {
        Reservoir::Fock { space, .. } => Some(space.top_levels_projector()),
        Reservoir::Finite { .. } => None,
    };
    let scale = model.lambda / (n_particles as f64).sqrt();
    let mut values = vec![C64::new(0.0, 0.0); times.len()];
    let mut population = vec![0.0; times.len()];
    for (s, p) in collective_distribution(model, n_particles)? {
        let k = &h_r + &b.scale(C64::new(scale * s, 0.0));
        let prop = Propagator::new(k)?;
        let tr = prop.trajectory(&rho, &a_r)?;
        let top_tr = top.as_ref().map(|pr| prop.trajectory(&rho, pr)).transpose()?;
        for (i, &t) in times.iter().enumerate() {
            values[i] += p * tr.value(t);
            if let Some(tt) = &top_tr {
                population[i] += p * tt.value(t).re;
            }
        }
    }
    for (i, &t) in times.iter().enumerate() {
        if population[i] > TRUNCATION_TOL {
            return Err(Error::TruncationCertificate { population: population[i], time: t });
        }
    }
    Ok(values)
}

/// Partial Dyson sum over raw index tuples with its error budget.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectSeries {
    pub value: C64,
    /// Per-order contributions `(i lambda / sqrt N)^r int sum omega(T)`, `r = 0..=r_max`.
    pub orders: Vec<C64>,
    pub quadrature_error: f64,
    /// Bound on all orders beyond `r_max`.
    pub tail_bound: f64,
    /// The `(A1)` margin is below one; otherwise the tail bound is only formal.
    pub certified: bool,
}

/// Dyson series through order `r_max`, summing every tuple `(j_1, ..., j_r)`
/// without the regrouping into index classes.
pub fn dyson_direct(
    model: &SystemModel,
    n_particles: usize,
    obs: &Observable,
    t: f64,
    numerics: &Numerics,
    provider: &dyn ReservoirMoments,
) -> Result<DirectSeries> {
    if obs.support() > n_particles || n_particles == 0 {
        return Err(Error::InvalidParameter(format!("need 1 <= n <= N, got n = {}, N = {n_particles}", obs.support())));
    }
    let ctx = TermContext::new(model, obs, t, provider)?;
    let base = base_value(&ctx)?;
    let mut orders = vec![base];
    let mut value = base;
    let mut quadrature_error = 0.0;
    if model.lambda != 0.0 {
        let pre = C64::new(0.0, model.lambda / (n_particles as f64).sqrt());
        for r in 1..=numerics.r_max {
            let table = raw_table(&ctx, model, n_particles, r, numerics)?;
            let scale = pre.powu(r as u32);
            let sum: C64 = table.values.iter().sum();
            orders.push(scale * sum);
            value += scale * sum;
            quadrature_error += scale.norm() * table.errors.iter().sum::<f64>();
        }
    }
    let bounds = BetaBounds::from_model(model, &obs.reservoir)?;
    let n = obs.support();
    let tail_bound = if model.lambda == 0.0 {
        0.0
    } else {
        remainder_bound(&bounds, obs.system_norm(), model.lambda, model.g(), t, n, Some(n_particles), numerics.r_max, numerics.r_max)
    };
    let certified = certify(model, &obs.reservoir, obs.system_norm(), t, n, 0)?.a1_ok;
    Ok(DirectSeries { value, orders, quadrature_error, tail_bound, certified })
}
