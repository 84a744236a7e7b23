//! TOML run configuration and its translation into core model types.

use std::path::Path;

use mfd_core::dyson::{Numerics, ProviderKind};
use mfd_core::model::{Observable, ParticleSpec, Reservoir, ReservoirObservable, ReservoirState, SystemModel};
use mfd_core::quadrature::QuadratureSpec;
use mfd_core::reservoir::{FockMode, FockSpace};
use mfd_core::tensor::pauli::{self, gibbs};
use mfd_core::tensor::OperatorMatrix;
use mfd_core::C64;
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Oracle,
    Dyson,
    Limits,
    ClosedForm,
    Certify,
    Fluctuations,
    Compare,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Oracle => "oracle",
            Task::Dyson => "dyson",
            Task::Limits => "limits",
            Task::ClosedForm => "closed-form",
            Task::Certify => "certify",
            Task::Fluctuations => "fluctuations",
            Task::Compare => "compare",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub model: ModelConfig,
    #[serde(default)]
    pub observable: ObservableConfig,
    pub numerics: NumericsConfig,
    pub closed_form: Option<ClosedFormConfig>,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lambda: f64,
    /// Particle species; particle `j` uses entry `min(j, len - 1)`.
    pub particles: Vec<ParticleConfig>,
    pub reservoir: ReservoirConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub h: MatrixSpec,
    pub g: MatrixSpec,
    pub state: StateSpec,
    #[serde(default)]
    pub channel: usize,
}

/// A real number or a `[re, im]` pair.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(untagged)]
pub enum ComplexSpec {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexSpec {
    pub fn value(self) -> C64 {
        match self {
            ComplexSpec::Real(x) => C64::new(x, 0.0),
            ComplexSpec::Pair([re, im]) => C64::new(re, im),
        }
    }
}

fn complex_vec(v: &[ComplexSpec]) -> Vec<C64> {
    v.iter().map(|z| z.value()).collect()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Preset(String),
    Scaled {
        preset: String,
        scale: f64,
    },
    /// Row-major entries; `im` may be omitted for real matrices.
    Dense {
        dim: usize,
        re: Vec<f64>,
        #[serde(default)]
        im: Vec<f64>,
    },
}

fn preset(name: &str) -> Result<OperatorMatrix, CliError> {
    let diag = |a: f64, b: f64| OperatorMatrix::from_real_rows(&[&[a, 0.0], &[0.0, b]]).expect("2x2");
    Ok(match name {
        "pauli-x" => pauli::sigma_x(),
        "pauli-y" => pauli::sigma_y(),
        "pauli-z" => pauli::sigma_z(),
        "sigma-plus" => pauli::sigma_plus(),
        "sigma-minus" => pauli::sigma_plus().adjoint(),
        "identity" => OperatorMatrix::identity(&[2]),
        "projector-up" => diag(1.0, 0.0),
        "projector-down" => diag(0.0, 1.0),
        "maximally-mixed" => diag(0.5, 0.5),
        other => return Err(CliError::Schema(format!("unknown matrix preset `{other}`"))),
    })
}

impl MatrixSpec {
    pub fn build(&self) -> Result<OperatorMatrix, CliError> {
        match self {
            MatrixSpec::Preset(name) => preset(name),
            MatrixSpec::Scaled { preset: name, scale } => {
                finite("matrix scale", *scale)?;
                Ok(preset(name)?.scale(C64::new(*scale, 0.0)))
            }
            MatrixSpec::Dense { dim, re, im } => {
                let n = dim * dim;
                if *dim == 0 || re.len() != n || !(im.is_empty() || im.len() == n) {
                    return Err(CliError::Schema(format!("dense matrix of dim {dim} needs {n} entries per part")));
                }
                let data: Vec<C64> = (0..n).map(|i| C64::new(re[i], im.get(i).copied().unwrap_or(0.0))).collect();
                if data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                    return Err(CliError::Schema("matrix entries must be finite".into()));
                }
                Ok(OperatorMatrix::new(vec![*dim], data)?)
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    /// Gibbs state of the particle's (or finite reservoir's) Hamiltonian.
    Gibbs { gibbs_beta: f64 },
    /// `diag(p, 1 - p)` for a two-level particle.
    Excited { excited: f64 },
    Matrix(MatrixSpec),
}

impl StateSpec {
    fn build(&self, h: &OperatorMatrix) -> Result<OperatorMatrix, CliError> {
        match self {
            StateSpec::Gibbs { gibbs_beta } => {
                if !(*gibbs_beta >= 0.0) {
                    return Err(CliError::Schema(format!("gibbs_beta = {gibbs_beta} must be nonnegative")));
                }
                Ok(gibbs(h, *gibbs_beta)?)
            }
            StateSpec::Excited { excited } => {
                if !(0.0..=1.0).contains(excited) {
                    return Err(CliError::Schema(format!("excited = {excited} outside [0, 1]")));
                }
                Ok(OperatorMatrix::from_real_rows(&[&[*excited, 0.0], &[0.0, 1.0 - excited]])?)
            }
            StateSpec::Matrix(m) => m.build(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReservoirConfig {
    Fock {
        modes: Vec<ModeConfig>,
        /// Coupling amplitudes per channel and mode; one channel of unit
        /// amplitudes on every mode when omitted.
        #[serde(default)]
        channels: Vec<Vec<ComplexSpec>>,
        state: ReservoirStateSpec,
    },
    Finite {
        h: MatrixSpec,
        couplings: Vec<MatrixSpec>,
        state: StateSpec,
    },
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub frequency: f64,
    pub cutoff: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ReservoirStateSpec {
    /// Only `"vacuum"`.
    Named(String),
    Thermal { thermal_beta: f64 },
    Coherent { coherent: Vec<ComplexSpec> },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    /// Tensor factors on particles `1..n`, one matrix per particle.
    #[serde(default)]
    pub system: Vec<MatrixSpec>,
    #[serde(default)]
    pub reservoir: ReservoirObservableSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ReservoirObservableSpec {
    /// `"identity"` or `"number"`.
    Named(String),
    Field { field: Vec<ComplexSpec> },
    FieldProduct { field_product: Vec<Vec<ComplexSpec>> },
    Weyl { weyl: Vec<ComplexSpec> },
    Matrix { matrix: MatrixSpec },
}

impl Default for ReservoirObservableSpec {
    fn default() -> Self {
        ReservoirObservableSpec::Named("identity".into())
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum QuadratureConfig {
    Gauss { order: usize, tolerance: Option<f64> },
    MonteCarlo { samples: usize, seed: Option<u64>, tolerance: Option<f64> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderConfig {
    #[default]
    Fock,
    Wick,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    pub t: Option<Vec<f64>>,
    pub t_grid: Option<TimeGrid>,
    /// Particle numbers `N`.
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub nu_max: usize,
    #[serde(default = "default_r_max")]
    pub r_max: usize,
    pub order_cap: Option<usize>,
    pub quadrature: Option<QuadratureConfig>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default = "default_ancilla_cutoff")]
    pub ancilla_cutoff: usize,
}

fn default_r_max() -> usize {
    2
}

fn default_ancilla_cutoff() -> usize {
    12
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosedFormId {
    /// Exact limit photon number of the energy-conserving model.
    NumberLimit,
    /// Exact limit Weyl expectation of the energy-conserving model.
    WeylLimit,
    /// Ancilla propagation of the energy-conserving limit.
    Ancilla,
    /// Photon number to second order in `lambda` for two-level particles.
    DickeNumber,
    /// Lowest-order fluctuation in a coherent reservoir.
    Fluctuation,
    /// Free part plus the `lambda^2 / N` and `lambda / sqrt N` corrections.
    LeadingOrder,
}

impl ClosedFormId {
    pub fn name(self) -> &'static str {
        match self {
            ClosedFormId::NumberLimit => "number-limit",
            ClosedFormId::WeylLimit => "weyl-limit",
            ClosedFormId::Ancilla => "ancilla",
            ClosedFormId::DickeNumber => "dicke-number",
            ClosedFormId::Fluctuation => "fluctuation",
            ClosedFormId::LeadingOrder => "leading-order",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedFormConfig {
    pub id: ClosedFormId,
    /// Excited-state weight for `dicke-number`; read from the state otherwise.
    pub p: Option<f64>,
    /// Level splitting for `dicke-number`; read from `h` otherwise.
    pub omega0: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Task whose value is subtracted before the slope fit, e.g. `limits`
    /// or `closed-form` (which uses the `[closed_form]` block).
    pub subtract: Option<Task>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

/// A validated configuration, ready to run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub task: Task,
    pub model: SystemModel,
    pub observable: Observable,
    pub times: Vec<f64>,
    pub n_list: Vec<usize>,
    pub numerics: Numerics,
    pub provider: ProviderKind,
    pub nu_max: usize,
    pub ancilla_cutoff: usize,
    pub closed_form: Option<ClosedFormConfig>,
}

fn finite(what: &str, x: f64) -> Result<f64, CliError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::Schema(format!("{what} must be finite, got {x}")))
    }
}

/// Model construction failures are configuration errors.
fn schema<T>(r: mfd_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Schema(e.to_string()))
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))
    }

    pub fn times(&self) -> Result<Vec<f64>, CliError> {
        let times = match (&self.numerics.t, &self.numerics.t_grid) {
            (Some(_), Some(_)) => return Err(CliError::Schema("give either `t` or `t_grid`, not both".into())),
            (Some(t), None) => t.clone(),
            (None, Some(g)) => {
                finite("t_grid.start", g.start)?;
                finite("t_grid.stop", g.stop)?;
                match g.points {
                    0 => Vec::new(),
                    1 => vec![g.start],
                    p => (0..p).map(|i| g.start + (g.stop - g.start) * i as f64 / (p - 1) as f64).collect(),
                }
            }
            (None, None) => Vec::new(),
        };
        if times.is_empty() {
            return Err(CliError::Schema("time grid is empty".into()));
        }
        for &t in &times {
            if !(t.is_finite() && t >= 0.0) {
                return Err(CliError::Schema(format!("times must be finite and nonnegative, got {t}")));
            }
        }
        Ok(times)
    }

    fn reservoir(&self) -> Result<Reservoir, CliError> {
        match &self.model.reservoir {
            ReservoirConfig::Fock { modes, channels, state } => {
                if modes.is_empty() {
                    return Err(CliError::Schema("Fock reservoir needs at least one mode".into()));
                }
                let modes: Vec<FockMode> = modes
                    .iter()
                    .map(|m| {
                        finite("mode frequency", m.frequency)?;
                        schema(FockMode::new(m.cutoff, m.frequency))
                    })
                    .collect::<Result<_, _>>()?;
                let k = modes.len();
                let channels: Vec<Vec<C64>> =
                    if channels.is_empty() { vec![vec![C64::new(1.0, 0.0); k]] } else { channels.iter().map(|c| complex_vec(c)).collect() };
                let state = match state {
                    ReservoirStateSpec::Named(s) if s == "vacuum" => ReservoirState::Vacuum,
                    ReservoirStateSpec::Named(s) => return Err(CliError::Schema(format!("unknown reservoir state `{s}`"))),
                    ReservoirStateSpec::Thermal { thermal_beta } => ReservoirState::Thermal { beta: *thermal_beta },
                    ReservoirStateSpec::Coherent { coherent } => ReservoirState::Coherent { alpha: complex_vec(coherent) },
                };
                let space = schema(FockSpace::new(modes))?;
                let res = Reservoir::Fock { space, channels, state };
                schema(res.validate())?;
                Ok(res)
            }
            ReservoirConfig::Finite { h, couplings, state } => {
                let h = h.build()?;
                let couplings = couplings.iter().map(|m| m.build()).collect::<Result<Vec<_>, _>>()?;
                let state = state.build(&h)?;
                let res = Reservoir::Finite { h, couplings, state };
                schema(res.validate())?;
                Ok(res)
            }
        }
    }

    fn observable(&self) -> Result<Observable, CliError> {
        let reservoir = match &self.observable.reservoir {
            ReservoirObservableSpec::Named(s) => match s.as_str() {
                "identity" => ReservoirObservable::Identity,
                "number" => ReservoirObservable::Number,
                other => return Err(CliError::Schema(format!("unknown reservoir observable `{other}`"))),
            },
            ReservoirObservableSpec::Field { field } => ReservoirObservable::Field(complex_vec(field)),
            ReservoirObservableSpec::FieldProduct { field_product } => {
                ReservoirObservable::FieldProduct(field_product.iter().map(|f| complex_vec(f)).collect())
            }
            ReservoirObservableSpec::Weyl { weyl } => ReservoirObservable::Weyl(complex_vec(weyl)),
            ReservoirObservableSpec::Matrix { matrix } => ReservoirObservable::Matrix(matrix.build()?),
        };
        let mut system: Option<OperatorMatrix> = None;
        for m in &self.observable.system {
            let factor = m.build()?;
            system = Some(match system {
                None => factor,
                Some(s) => s.kron(&factor),
            });
        }
        Ok(Observable { system, reservoir })
    }

    fn numerics(&self, seed_override: Option<u64>) -> Result<(Numerics, Option<u64>), CliError> {
        let cfg = &self.numerics;
        let seed = seed_override.or(cfg.seed);
        let mut numerics = Numerics::new(cfg.r_max);
        if let Some(cap) = cfg.order_cap {
            numerics.order_cap = cap;
        }
        numerics.seed = seed.unwrap_or(0);
        let tol = |t: Option<f64>| -> Result<Option<f64>, CliError> {
            match t {
                Some(x) if !(x.is_finite() && x > 0.0) => Err(CliError::Schema(format!("quadrature tolerance {x} must be positive"))),
                other => Ok(other),
            }
        };
        match &cfg.quadrature {
            Some(QuadratureConfig::Gauss { order, tolerance }) => {
                let mut spec = QuadratureSpec::gauss(*order);
                if let Some(t) = tol(*tolerance)? {
                    spec = spec.with_tolerance(t);
                }
                numerics = numerics.with_quadrature(spec);
            }
            Some(QuadratureConfig::MonteCarlo { samples, seed: mc_seed, tolerance }) => {
                let s = seed_override.or(*mc_seed).or(cfg.seed).ok_or_else(|| CliError::Schema("Monte Carlo quadrature needs a seed".into()))?;
                let mut spec = QuadratureSpec::monte_carlo(*samples, s);
                if let Some(t) = tol(*tolerance)? {
                    spec = spec.with_tolerance(t);
                }
                numerics = numerics.with_quadrature(spec);
            }
            None => {
                // the depth-dependent default switches to Monte Carlo beyond r = 6
                if cfg.r_max > 6 && seed.is_none() {
                    return Err(CliError::Schema("r_max > 6 uses Monte Carlo quadrature and needs a seed".into()));
                }
            }
        }
        for r in 0..=cfg.r_max {
            schema(numerics.spec(r).validate())?;
        }
        Ok((numerics, seed))
    }

    /// Validates the configuration and builds the model.
    pub fn prepare(&self, seed_override: Option<u64>) -> Result<Prepared, CliError> {
        finite("lambda", self.model.lambda)?;
        if self.model.particles.is_empty() {
            return Err(CliError::Schema("at least one particle species is required".into()));
        }
        let times = self.times()?;
        let particles = self
            .model
            .particles
            .iter()
            .map(|p| {
                let h = p.h.build()?;
                let g = p.g.build()?;
                let state = p.state.build(&h)?;
                schema(ParticleSpec::new(h, g, state, p.channel))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let model = schema(SystemModel::new(particles, self.reservoir()?, self.model.lambda))?;
        let observable = self.observable()?;
        if let Some(s) = &observable.system {
            let n = observable.support();
            let expected: Vec<usize> = (0..n).map(|j| model.particle(j).dim()).collect();
            if s.dims() != expected.as_slice() {
                return Err(CliError::Schema(format!("system observable dims {:?} do not match particles {expected:?}", s.dims())));
            }
        }
        if self.numerics.n.iter().any(|&n| n == 0) {
            return Err(CliError::Schema("particle numbers must be positive".into()));
        }
        let needs_n = matches!(self.task, Task::Oracle | Task::Dyson | Task::Compare)
            || (self.task == Task::ClosedForm && self.closed_form.as_ref().is_some_and(|c| c.id == ClosedFormId::LeadingOrder));
        if needs_n && self.numerics.n.is_empty() {
            return Err(CliError::Schema(format!("task `{}` needs a nonempty `numerics.n` list", self.task.name())));
        }
        if self.task == Task::ClosedForm && self.closed_form.is_none() {
            return Err(CliError::Schema("task `closed-form` needs a `[closed_form]` block".into()));
        }
        if self.numerics.ancilla_cutoff == 0 {
            return Err(CliError::Schema("ancilla_cutoff must be positive".into()));
        }
        let (numerics, _) = self.numerics(seed_override)?;
        let provider = match self.numerics.provider {
            ProviderConfig::Fock => ProviderKind::Fock,
            ProviderConfig::Wick => ProviderKind::Wick,
        };
        Ok(Prepared {
            task: self.task,
            model,
            observable,
            times,
            n_list: self.numerics.n.clone(),
            numerics,
            provider,
            nu_max: self.numerics.nu_max,
            ancilla_cutoff: self.numerics.ancilla_cutoff,
            closed_form: self.closed_form.clone(),
        })
    }
}
