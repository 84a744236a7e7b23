//! Task dispatch: turns a prepared configuration into CSV rows.

use mfd_core::closed_forms::{
    dicke_number_leading, energy_conserving_limit, fluctuation_integral, kappa, leading_order, number_limit, weyl_limit,
};
use mfd_core::dyson::{check_odd_moments, fluctuation_series, make_provider, Expansion};
use mfd_core::model::{Observable, Reservoir, ReservoirObservable, ReservoirState, SystemModel};
use mfd_core::oracle::{evolve_expectations, sector_expectations};
use mfd_core::reservoir::DiscretizedField;
use mfd_core::wick::{certify, BoundCertificate};
use mfd_core::C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ClosedFormId, Prepared, Task};
use crate::CliError;

/// One CSV row. `n_particles = None` marks an `N -> infinity` quantity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub task: String,
    pub n_particles: Option<usize>,
    pub t: f64,
    pub value: C64,
    pub error_bound: f64,
    pub certified: bool,
    pub r_max: usize,
    pub nu_max: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateRecord {
    pub n_particles: Option<usize>,
    pub t: f64,
    pub certificate: BoundCertificate,
}

/// Everything a run produces before it is written out.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub rows: Vec<Row>,
    pub notes: Vec<String>,
    pub certificates: Vec<CertificateRecord>,
    /// Set when the artifacts are written but the run must still fail.
    pub failure: Option<String>,
}

impl Prepared {
    fn row(&self, task: &str, n_particles: Option<usize>, t: f64, value: C64, error_bound: f64, certified: bool) -> Row {
        Row { task: task.to_string(), n_particles, t, value, error_bound, certified, r_max: self.numerics.r_max, nu_max: self.nu_max }
    }
}

/// Runs the configured task.
pub fn execute(p: &Prepared) -> Result<RunOutput, CliError> {
    execute_task(p, p.task)
}

pub fn execute_task(p: &Prepared, task: Task) -> Result<RunOutput, CliError> {
    match task {
        Task::Oracle => Ok(RunOutput { rows: oracle_rows(p, "oracle")?, ..Default::default() }),
        Task::Dyson => Ok(RunOutput { rows: expansion_rows(p, "dyson", true)?, ..Default::default() }),
        Task::Limits => Ok(RunOutput { rows: expansion_rows(p, "limits", false)?, ..Default::default() }),
        Task::ClosedForm => closed_form(p),
        Task::Certify => certify_task(p),
        Task::Fluctuations => fluctuations(p),
        Task::Compare => compare(p),
    }
}

/// Exact expectations; rows are certified by the Fock truncation check,
/// which aborts the run when it fails.
fn oracle_rows(p: &Prepared, label: &str) -> Result<Vec<Row>, CliError> {
    let mut rows = Vec::new();
    // the sector decomposition is exact and far cheaper when it applies
    let sectors = p.observable.system.is_none() && p.model.energy_conserving() && matches!(p.model.reservoir, Reservoir::Fock { .. });
    for &n in &p.n_list {
        let values = if sectors {
            sector_expectations(&p.model, n, &p.observable.reservoir, &p.times)?
        } else {
            evolve_expectations(&p.model, n, &p.observable, &p.times)?
        };
        rows.extend(p.times.iter().zip(values).map(|(&t, v)| p.row(label, Some(n), t, v, 0.0, true)));
    }
    Ok(rows)
}

/// Assembled expansion at each finite `N` (or in the limit), in parallel over times.
fn expansion_rows(p: &Prepared, label: &str, finite: bool) -> Result<Vec<Row>, CliError> {
    let provider = make_provider(&p.model, &p.observable.reservoir, p.provider)?;
    let ns: Vec<Option<usize>> = if finite { p.n_list.iter().map(|&n| Some(n)).collect() } else { vec![None] };
    let mut rows = Vec::new();
    for n in ns {
        let results: Vec<Result<Row, CliError>> = p
            .times
            .par_iter()
            .map(|&t| {
                let exp = Expansion::new(&p.model, &p.observable, t, p.numerics.clone(), provider.as_ref())?;
                let res = exp.assemble(p.nu_max, n)?;
                Ok(p.row(label, n, t, res.value, res.remainder, res.certificate.certified))
            })
            .collect();
        for r in results {
            rows.push(r?);
        }
    }
    Ok(rows)
}

/// Relative floating-point allowance of the oracle/expansion comparison; the
/// two sides are computed along different arithmetic paths.
pub const ROUNDING: f64 = 1e-12;

fn compare(p: &Prepared) -> Result<RunOutput, CliError> {
    let oracle = oracle_rows(p, "oracle")?;
    let expansion = expansion_rows(p, "dyson", true)?;
    let mut out = RunOutput::default();
    let mut violations = 0;
    for (o, e) in oracle.iter().zip(&expansion) {
        let diff = (o.value - e.value).norm();
        let ok = diff <= e.error_bound + ROUNDING * (1.0 + o.value.norm());
        if !ok {
            violations += 1;
        }
        out.notes.push(format!(
            "N = {}, t = {}: |oracle - expansion| = {diff:.3e}, bound = {:.3e} [{}]",
            o.n_particles.expect("finite N"),
            o.t,
            e.error_bound,
            if ok { "ok" } else { "VIOLATED" }
        ));
        out.rows.push(o.clone());
        out.rows.push(e.clone());
    }
    if violations > 0 {
        out.failure = Some(format!("{violations} grid points exceed the reported error bound"));
    }
    Ok(out)
}

fn certify_task(p: &Prepared) -> Result<RunOutput, CliError> {
    let mut out = RunOutput::default();
    let ns: Vec<Option<usize>> = if p.n_list.is_empty() { vec![None] } else { p.n_list.iter().map(|&n| Some(n)).collect() };
    let t_max = p.times.iter().cloned().fold(0.0, f64::max);
    check_odd_moments(&p.model, p.n_list.iter().copied().max().unwrap_or(p.model.particles.len()), t_max)?;
    out.notes.push("vanishing odd moments: ok".into());
    let n = p.observable.support();
    for &big_n in &ns {
        for &t in &p.times {
            let cert = certify(&p.model, &p.observable.reservoir, p.observable.system_norm(), t, n, p.nu_max)?;
            let bound = cert.x_bounds[p.nu_max];
            out.rows.push(p.row("certify", big_n, t, C64::new(cert.a1_margin, cert.convergence_product), bound, cert.certified));
            out.certificates.push(CertificateRecord { n_particles: big_n, t, certificate: cert });
        }
    }
    let failed = out.certificates.iter().filter(|c| !c.certificate.certified).count();
    out.notes.push(format!("{} of {} grid points certified", out.certificates.len() - failed, out.certificates.len()));
    Ok(out)
}

fn single_particle_observable(p: &Prepared) -> Result<mfd_core::tensor::OperatorMatrix, CliError> {
    match &p.observable.system {
        Some(a) if p.observable.support() == 1 && p.observable.reservoir == ReservoirObservable::Identity => Ok(a.clone()),
        _ => Err(CliError::Schema("fluctuations need a single-particle system observable and no reservoir part".into())),
    }
}

fn fluctuations(p: &Prepared) -> Result<RunOutput, CliError> {
    let a = single_particle_observable(p)?;
    let provider = make_provider(&p.model, &ReservoirObservable::Identity, p.provider)?;
    let results: Vec<Result<Row, CliError>> = p
        .times
        .par_iter()
        .map(|&t| {
            let v = fluctuation_series(&p.model, &a, t, &p.numerics, provider.as_ref())?;
            Ok(p.row("fluctuations", None, t, v, 0.0, false))
        })
        .collect();
    Ok(RunOutput { rows: results.into_iter().collect::<Result<_, _>>()?, ..Default::default() })
}

/// The coupling field of the (shared) channel as a discretized field of unit weights.
fn coupling_field(model: &SystemModel) -> Result<DiscretizedField, CliError> {
    let channel = model.particles[0].channel;
    match &model.reservoir {
        Reservoir::Fock { space, channels, .. } => {
            let freqs = space.modes.iter().map(|m| m.frequency).collect::<Vec<_>>();
            let k = freqs.len();
            Ok(DiscretizedField::new(freqs, channels[channel].clone(), vec![1.0; k])?)
        }
        Reservoir::Finite { .. } => Err(CliError::Schema("closed forms need a Fock reservoir".into())),
    }
}

/// Level splitting and excited weight of a two-level particle.
fn two_level_parameters(model: &SystemModel) -> Result<(f64, f64), CliError> {
    let particle = &model.particles[0];
    if particle.dim() != 2 {
        return Err(CliError::Schema("dicke-number needs two-level particles".into()));
    }
    let eig = particle.h.eigh()?;
    let (lo, hi) = if eig.values[0] <= eig.values[1] { (0, 1) } else { (1, 0) };
    let omega0 = eig.values[hi] - eig.values[lo];
    let up: Vec<C64> = (0..2).map(|i| eig.vectors[(i, hi)]).collect();
    let rho_up = particle.state.apply(&up);
    let p: C64 = up.iter().zip(&rho_up).map(|(a, b)| a.conj() * b).sum();
    Ok((omega0, p.re))
}

fn closed_form(p: &Prepared) -> Result<RunOutput, CliError> {
    let cf = p.closed_form.as_ref().ok_or_else(|| CliError::Schema("missing [closed_form] block".into()))?;
    let label = format!("closed-form/{}", cf.id.name());
    let model = &p.model;
    let mut out = RunOutput::default();
    match cf.id {
        ClosedFormId::NumberLimit => {
            if p.observable.reservoir != ReservoirObservable::Number || p.observable.system.is_some() {
                return Err(CliError::Schema("number-limit needs the observable `reservoir = \"number\"`".into()));
            }
            require_limit_model(model)?;
            let field = coupling_field(model)?;
            let k = kappa(model);
            let rho = model.reservoir.density()?;
            let n0 = rho.trace_product(&model.reservoir.observable_matrix(&ReservoirObservable::Number)?).re;
            for &t in &p.times {
                out.rows.push(p.row(&label, None, t, C64::new(number_limit(&field, k, t, n0)?, 0.0), 0.0, true));
            }
        }
        ClosedFormId::WeylLimit => {
            let h = match (&p.observable.reservoir, &p.observable.system) {
                (ReservoirObservable::Weyl(h), None) => h.clone(),
                _ => return Err(CliError::Schema("weyl-limit needs a reservoir Weyl observable".into())),
            };
            require_limit_model(model)?;
            let field = coupling_field(model)?;
            let state = model.reservoir.quasifree().ok_or_else(|| CliError::Schema("weyl-limit needs a vacuum or thermal reservoir".into()))?;
            let k = kappa(model);
            for &t in &p.times {
                out.rows.push(p.row(&label, None, t, weyl_limit(&field, &state, &h, k, t)?, 0.0, true));
            }
        }
        ClosedFormId::Ancilla => {
            if p.observable.system.is_some() {
                return Err(CliError::Schema("ancilla needs a reservoir-only observable".into()));
            }
            let values = energy_conserving_limit(model, &p.observable.reservoir, &p.times, p.ancilla_cutoff)?;
            for (&t, v) in p.times.iter().zip(values) {
                out.rows.push(p.row(&label, None, t, v, 0.0, true));
            }
        }
        ClosedFormId::DickeNumber => {
            if !model.symmetric() {
                return Err(CliError::Schema("dicke-number needs identical particles".into()));
            }
            let field = coupling_field(model)?;
            let (omega0, weight) = two_level_parameters(model)?;
            let omega0 = cf.omega0.unwrap_or(omega0);
            let weight = cf.p.unwrap_or(weight);
            for &t in &p.times {
                let v = dicke_number_leading(&field, weight, omega0, model.lambda, t)?;
                out.rows.push(p.row(&label, None, t, C64::new(v, 0.0), 0.0, false));
            }
        }
        ClosedFormId::Fluctuation => {
            let a = single_particle_observable(p)?;
            let (omega_r, alpha) = match &model.reservoir {
                Reservoir::Fock { space, channels, state: ReservoirState::Coherent { alpha } }
                    if space.modes.len() == 1 && channels[model.particles[0].channel][0] == C64::new(1.0, 0.0) =>
                {
                    (space.modes[0].frequency, alpha[0])
                }
                _ => return Err(CliError::Schema("fluctuation needs one mode in a coherent state with unit coupling".into())),
            };
            if !model.symmetric() {
                return Err(CliError::Schema("fluctuation needs identical particles".into()));
            }
            let particle = &model.particles[0];
            for &t in &p.times {
                let v = fluctuation_integral(&particle.h, &particle.g, &particle.state, &a, alpha, omega_r, model.lambda, t)?;
                out.rows.push(p.row(&label, None, t, C64::new(v, 0.0), 0.0, false));
            }
        }
        ClosedFormId::LeadingOrder => {
            let provider = make_provider(model, &p.observable.reservoir, p.provider)?;
            for &n in &p.n_list {
                let results: Vec<Result<Row, CliError>> = p
                    .times
                    .par_iter()
                    .map(|&t| Ok(p.row(&label, Some(n), t, leading_order(model, &p.observable, n, t, provider.as_ref())?, 0.0, false)))
                    .collect();
                for r in results {
                    out.rows.push(r?);
                }
            }
        }
    }
    Ok(out)
}

fn require_limit_model(model: &SystemModel) -> Result<(), CliError> {
    if !model.symmetric() {
        return Err(CliError::Schema("limit closed forms need identical particles".into()));
    }
    model.ensure_energy_conserving()?;
    Ok(())
}

/// Observable as a plain description for the report.
pub fn describe_observable(obs: &Observable) -> String {
    let sys = match &obs.system {
        Some(s) => format!("A_S on {} particle(s)", s.dims().len()),
        None => "1".into(),
    };
    let res = match &obs.reservoir {
        ReservoirObservable::Identity => "1".to_string(),
        ReservoirObservable::Number => "N".to_string(),
        ReservoirObservable::Field(_) => "phi(f)".to_string(),
        ReservoirObservable::FieldProduct(fs) => format!("product of {} fields", fs.len()),
        ReservoirObservable::Weyl(_) => "W(f)".to_string(),
        ReservoirObservable::Matrix(m) => format!("{}x{} matrix", m.dim(), m.dim()),
    };
    format!("{sys} (x) {res}")
}
