//! The expansion coefficients `X_{nu,N}`, `Y_{nu,N}`, their symmetric limits,
//! assembly of the `1/sqrt(N)` expansion and the fluctuation series.

use std::sync::Mutex;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::commutator::{
    canonical_assignments, enumerate_limit_classes, expand_multicommutator, fresh_pool, profiles, Assignment, CenterOp,
    FockMoments, LimitKind, ReservoirMoments, TermContext, Template, DEFAULT_MAX_ORDER,
};
use crate::error::{Error, Result};
use crate::model::{Observable, ReservoirObservable, SystemModel};
use crate::quadrature::{integrate_simplex_vec, QuadratureSpec, SimplexIntegral};
use crate::tensor::{heisenberg, OperatorMatrix};
use crate::wick::{certify, order_bound, remainder_bound, BetaBounds, BoundCertificate, WickMoments};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Tolerance of the numerical vanishing-odd-moment check.
pub const ODD_MOMENT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum CoefficientKind {
    X,
    Y,
}

/// Source of reservoir moments for the expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProviderKind {
    /// Exact moments of the truncated reservoir.
    #[default]
    Fock,
    /// Wick's theorem for the untruncated quasifree field.
    Wick,
}

pub fn make_provider(model: &SystemModel, observable: &ReservoirObservable, kind: ProviderKind) -> Result<Box<dyn ReservoirMoments>> {
    Ok(match kind {
        ProviderKind::Fock => Box::new(FockMoments::new(&model.reservoir, observable)?),
        ProviderKind::Wick => Box::new(WickMoments::from_model(model, observable)?),
    })
}

/// Truncation order and quadrature choice shared by all series evaluations.
#[derive(Clone, Debug, PartialEq)]
pub struct Numerics {
    pub r_max: usize,
    /// Fixed rule for every depth; `None` uses the depth-dependent default.
    pub quadrature: Option<QuadratureSpec>,
    pub seed: u64,
    pub order_cap: usize,
}

impl Numerics {
    pub fn new(r_max: usize) -> Self {
        Self { r_max, quadrature: None, seed: 0, order_cap: DEFAULT_MAX_ORDER }
    }

    pub fn with_quadrature(mut self, spec: QuadratureSpec) -> Self {
        self.quadrature = Some(spec);
        self
    }

    pub fn spec(&self, r: usize) -> QuadratureSpec {
        self.quadrature.clone().unwrap_or_else(|| QuadratureSpec::default_for_depth(r, self.seed))
    }

    fn check(&self) -> Result<()> {
        if self.r_max > self.order_cap {
            return Err(Error::OrderCap { r: self.r_max, cap: self.order_cap });
        }
        Ok(())
    }
}

/// Integrals over the `r`-simplex of the summed terms, split by the number
/// `q` of factors on the observed particles.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderTable {
    pub r: usize,
    pub values: Vec<C64>,
    pub errors: Vec<f64>,
}

/// `int_{simplex} sum_{assignments, templates} omega(T)`, by system weight.
fn integrate_assignments(
    ctx: &TermContext,
    templates: &[Template],
    assignments: Vec<Assignment>,
    depth: usize,
    spec: &QuadratureSpec,
) -> Result<SimplexIntegral> {
    let slices = depth + 1;
    let batch = ctx.batch(assignments);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let t = ctx.observable_time();
    let f = |ts: &[f64], out: &mut [C64]| {
        if let Err(e) = ctx.accumulate_node(templates, &batch, ts, t, out) {
            failure.lock().expect("poisoned").get_or_insert(e);
        }
    };
    let res = integrate_simplex_vec(&f, slices, t, depth, spec)?;
    if let Some(e) = failure.into_inner().expect("poisoned") {
        return Err(e);
    }
    Ok(res)
}

fn table_from(r: usize, res: SimplexIntegral) -> OrderTable {
    OrderTable { r, values: res.values, errors: res.errors }
}

/// `omega_n(A_S(t)) mu_r(A_r(t))`.
pub fn base_value(ctx: &TermContext) -> Result<C64> {
    let templates = expand_multicommutator(0, 0)?;
    let batch = ctx.batch(vec![Assignment { labels: Vec::new(), species: Vec::new(), weight: 1.0 }]);
    let mut out = [ZERO];
    ctx.accumulate_node(&templates, &batch, &[], ctx.observable_time(), &mut out)?;
    Ok(out[0])
}

/// Order-`r` table at finite `N`, over canonical assignments with even
/// occupation of every unobserved particle.
pub fn finite_table(ctx: &TermContext, model: &SystemModel, n_particles: usize, r: usize, numerics: &Numerics) -> Result<OrderTable> {
    let n = ctx.support();
    let templates = expand_multicommutator(r, numerics.order_cap)?;
    let assignments = canonical_assignments(r, n, &fresh_pool(model, n, n_particles), true);
    Ok(table_from(r, integrate_assignments(ctx, &templates, assignments, r, &numerics.spec(r))?))
}

/// Order-`r` table over all raw tuples `(j_1, ..., j_r)`, without regrouping.
pub fn raw_table(ctx: &TermContext, model: &SystemModel, n_particles: usize, r: usize, numerics: &Numerics) -> Result<OrderTable> {
    let templates = expand_multicommutator(r, numerics.order_cap)?;
    let species: Vec<usize> = (0..n_particles.max(ctx.support())).map(|j| model.species(j)).collect();
    let total = n_particles.checked_pow(r as u32).ok_or_else(|| Error::InvalidParameter("tuple count overflow".into()))?;
    let assignments = (0..total)
        .map(|mut idx| {
            let labels = (0..r)
                .map(|_| {
                    let j = idx % n_particles;
                    idx /= n_particles;
                    j
                })
                .collect();
            Assignment { labels, species: species.clone(), weight: 1.0 }
        })
        .collect();
    Ok(table_from(r, integrate_assignments(ctx, &templates, assignments, r, &numerics.spec(r))?))
}

/// Order-`r` table of the symmetric limit: the `D_r` (even `q`) and `E_r`
/// (odd `q`) classes on the reduced space, without the `1/k!` factor.
pub fn limit_table(ctx: &TermContext, model: &SystemModel, r: usize, numerics: &Numerics) -> Result<OrderTable> {
    let n = ctx.support();
    let templates = expand_multicommutator(r, numerics.order_cap)?;
    let mut assignments = Vec::new();
    for q in (r % 2..=r.min(if n == 0 { 0 } else { r })).step_by(2) {
        let kind = if q % 2 == 0 { LimitKind::D } else { LimitKind::E };
        for class in profiles(q, n) {
            let k = (r - q) / 2;
            let species: Vec<usize> = (0..n + k).map(|j| model.species(j)).collect();
            for labels in enumerate_limit_classes(kind, r, n, &class.profile)? {
                assignments.push(Assignment { labels, species: species.clone(), weight: 1.0 });
            }
        }
    }
    Ok(table_from(r, integrate_assignments(ctx, &templates, assignments, r, &numerics.spec(r))?))
}

fn i_lambda_pow(lambda: f64, r: usize) -> C64 {
    C64::new(0.0, lambda).powu(r as u32)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Checks `mu_j(G(t_1) ... G(t_{2k+1})) = 0` for `k <= 2` on random times in
/// `[0, t]` for the particles `0..n_particles`.
pub fn check_odd_moments(model: &SystemModel, n_particles: usize, t: f64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0);
    let species_count = model.particles.len().min(n_particles.max(1));
    for s in 0..species_count {
        let p = &model.particles[s];
        for k in 0..=2 {
            for _ in 0..16 {
                let mut prod = OperatorMatrix::identity(p.g.dims());
                for _ in 0..2 * k + 1 {
                    let ti = t * rng.gen::<f64>();
                    prod = prod.matmul(&heisenberg(&p.h, &p.g, ti)?);
                }
                let moment = p.state.trace_product(&prod).norm();
                if moment > ODD_MOMENT_TOL {
                    return Err(Error::OddMoment { particle: s + 1, moment });
                }
            }
        }
    }
    Ok(())
}

/// A coefficient value with its error budget.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coefficient {
    pub kind: CoefficientKind,
    pub nu: usize,
    /// `None` for the `N -> infinity` limit.
    pub n_particles: Option<usize>,
    pub value: C64,
    pub quadrature_error: f64,
    /// Bound on the orders beyond `r_max`.
    pub tail_bound: f64,
    /// `||A_S|| (2n|lambda|gt)^{2nu (+1)} / (2nu (+1))! S_nu`.
    pub a_priori_bound: f64,
    pub r_max: usize,
}

/// Everything needed to evaluate coefficients for one model, observable and time.
pub struct Expansion<'a> {
    pub model: &'a SystemModel,
    pub observable: &'a Observable,
    pub t: f64,
    pub numerics: Numerics,
    ctx: TermContext<'a>,
    bounds: BetaBounds,
}

impl<'a> Expansion<'a> {
    pub fn new(model: &'a SystemModel, observable: &'a Observable, t: f64, numerics: Numerics, provider: &'a dyn ReservoirMoments) -> Result<Self> {
        numerics.check()?;
        let ctx = TermContext::new(model, observable, t, provider)?;
        let bounds = BetaBounds::from_model(model, &observable.reservoir)?;
        Ok(Self { model, observable, t, numerics, ctx, bounds })
    }

    pub fn support(&self) -> usize {
        self.observable.support()
    }

    pub fn context(&self) -> &TermContext<'a> {
        &self.ctx
    }

    pub fn base(&self) -> Result<C64> {
        base_value(&self.ctx)
    }

    fn a_s_norm(&self) -> f64 {
        self.observable.system_norm()
    }

    fn coefficient_tail(&self, q: usize) -> f64 {
        let n = self.support();
        let g = self.model.g();
        let mut tail = 0.0;
        let mut r = (self.numerics.r_max + 1).max(q);
        while (r - q) % 2 != 0 {
            r += 1;
        }
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let term = order_bound(&self.bounds, self.a_s_norm(), self.model.lambda, g, self.t, n, None, r, q);
            tail += term;
            if !term.is_finite() {
                return f64::INFINITY;
            }
            if term + prev <= 1e-18 * tail {
                break;
            }
            prev = term;
            r += 2;
        }
        tail
    }

    pub fn certificate(&self, nu_max: usize) -> Result<BoundCertificate> {
        certify(self.model, &self.observable.reservoir, self.a_s_norm(), self.t, self.support(), nu_max)
    }

    fn a_priori_bound(&self, kind: CoefficientKind, nu: usize) -> Result<f64> {
        let cert = self.certificate(nu)?;
        Ok(match kind {
            CoefficientKind::X => cert.x_bounds[nu],
            CoefficientKind::Y => cert.y_bounds[nu],
        })
    }

    fn validate_finite(&self, n_particles: usize) -> Result<()> {
        if self.support() >= n_particles {
            return Err(Error::InvalidParameter(format!("observable on {} particles needs N > n, got N = {n_particles}", self.support())));
        }
        check_odd_moments(self.model, n_particles, self.t)
    }

    /// Tables for orders `1..=r_max` at finite `N`.
    pub fn finite_tables(&self, n_particles: usize) -> Result<Vec<OrderTable>> {
        self.validate_finite(n_particles)?;
        if self.model.lambda == 0.0 {
            return Ok(Vec::new());
        }
        (1..=self.numerics.r_max).map(|r| finite_table(&self.ctx, self.model, n_particles, r, &self.numerics)).collect()
    }

    pub fn limit_tables(&self) -> Result<Vec<OrderTable>> {
        if !self.model.symmetric() {
            return Err(Error::NotSymmetric);
        }
        check_odd_moments(self.model, self.support() + 1, self.t)?;
        if self.model.lambda == 0.0 {
            return Ok(Vec::new());
        }
        (1..=self.numerics.r_max).map(|r| limit_table(&self.ctx, self.model, r, &self.numerics)).collect()
    }

    fn coefficient_from(&self, kind: CoefficientKind, nu: usize, n_particles: Option<usize>, tables: &[OrderTable]) -> Result<Coefficient> {
        let q = match kind {
            CoefficientKind::X => 2 * nu,
            CoefficientKind::Y => 2 * nu + 1,
        };
        let lambda = self.model.lambda;
        let mut value = ZERO;
        let mut quadrature_error = 0.0;
        for table in tables {
            let r = table.r;
            if r < q.max(1) || (r - q) % 2 != 0 || q >= table.values.len() {
                continue;
            }
            let pre = match n_particles {
                Some(big_n) => i_lambda_pow(lambda, r) * (big_n as f64).powf(0.5 * q as f64 - 0.5 * r as f64),
                None => i_lambda_pow(lambda, r) / factorial((r - q) / 2),
            };
            value += pre * table.values[q];
            quadrature_error += pre.norm() * table.errors[q];
        }
        Ok(Coefficient {
            kind,
            nu,
            n_particles,
            value,
            quadrature_error,
            tail_bound: if lambda == 0.0 { 0.0 } else { self.coefficient_tail(q) },
            a_priori_bound: self.a_priori_bound(kind, nu)?,
            r_max: self.numerics.r_max,
        })
    }

    pub fn coefficient(&self, kind: CoefficientKind, nu: usize, n_particles: usize) -> Result<Coefficient> {
        let tables = self.finite_tables(n_particles)?;
        self.coefficient_from(kind, nu, Some(n_particles), &tables)
    }

    pub fn limit_coefficient(&self, kind: CoefficientKind, nu: usize) -> Result<Coefficient> {
        let tables = self.limit_tables()?;
        self.coefficient_from(kind, nu, None, &tables)
    }

    /// Partial sum of the expansion through `nu_max` at finite `N` or in the limit.
    pub fn assemble(&self, nu_max: usize, n_particles: Option<usize>) -> Result<ExpansionResult> {
        let tables = match n_particles {
            Some(big_n) => self.finite_tables(big_n)?,
            None => self.limit_tables()?,
        };
        let base = self.base()?;
        let mut coefficients = Vec::new();
        let mut value = base;
        let mut quadrature_error = 0.0;
        for nu in 0..=nu_max {
            for kind in [CoefficientKind::X, CoefficientKind::Y] {
                let c = self.coefficient_from(kind, nu, n_particles, &tables)?;
                let scale = match (n_particles, kind) {
                    (Some(big_n), CoefficientKind::X) => (big_n as f64).powi(-(nu as i32)),
                    (Some(big_n), CoefficientKind::Y) => (big_n as f64).powf(-(nu as f64) - 0.5),
                    (None, _) => 1.0,
                };
                if n_particles.is_some() || (kind == CoefficientKind::X && nu == 0) {
                    value += c.value * scale;
                    quadrature_error += c.quadrature_error * scale;
                }
                coefficients.push(c);
            }
        }
        let certificate = self.certificate(nu_max)?;
        let series_tail = if self.model.lambda == 0.0 {
            0.0
        } else {
            match n_particles {
                Some(big_n) => remainder_bound(
                    &self.bounds,
                    self.a_s_norm(),
                    self.model.lambda,
                    self.model.g(),
                    self.t,
                    self.support(),
                    Some(big_n),
                    self.numerics.r_max,
                    2 * nu_max + 1,
                ),
                None => coefficients.iter().filter(|c| c.kind == CoefficientKind::X && c.nu == 0).map(|c| c.tail_bound).sum(),
            }
        };
        Ok(ExpansionResult {
            base,
            coefficients,
            value,
            series_tail,
            quadrature_error,
            remainder: series_tail + quadrature_error,
            certificate,
            n_particles,
            nu_max,
            r_max: self.numerics.r_max,
        })
    }
}

/// Assembled expansion with its error budget.
#[derive(Clone, Debug, Serialize)]
pub struct ExpansionResult {
    pub base: C64,
    pub coefficients: Vec<Coefficient>,
    /// `base + sum_nu N^{-nu} X + N^{-nu-1/2} Y` (finite `N`), or
    /// `base + X_0` in the limit.
    pub value: C64,
    pub series_tail: f64,
    pub quadrature_error: f64,
    pub remainder: f64,
    pub certificate: BoundCertificate,
    pub n_particles: Option<usize>,
    pub nu_max: usize,
    pub r_max: usize,
}

impl ExpansionResult {
    pub fn coefficient(&self, kind: CoefficientKind, nu: usize) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.kind == kind && c.nu == nu)
    }
}

/// `X_{nu,N}` with a fresh provider of the given kind.
pub fn coefficient_x(model: &SystemModel, obs: &Observable, t: f64, nu: usize, n_particles: usize, numerics: Numerics) -> Result<Coefficient> {
    let provider = make_provider(model, &obs.reservoir, ProviderKind::Fock)?;
    Expansion::new(model, obs, t, numerics, provider.as_ref())?.coefficient(CoefficientKind::X, nu, n_particles)
}

pub fn coefficient_y(model: &SystemModel, obs: &Observable, t: f64, nu: usize, n_particles: usize, numerics: Numerics) -> Result<Coefficient> {
    let provider = make_provider(model, &obs.reservoir, ProviderKind::Fock)?;
    Expansion::new(model, obs, t, numerics, provider.as_ref())?.coefficient(CoefficientKind::Y, nu, n_particles)
}

pub fn limit_coefficient(model: &SystemModel, obs: &Observable, t: f64, kind: CoefficientKind, nu: usize, numerics: Numerics) -> Result<Coefficient> {
    let provider = make_provider(model, &obs.reservoir, ProviderKind::Fock)?;
    Expansion::new(model, obs, t, numerics, provider.as_ref())?.limit_coefficient(kind, nu)
}

pub fn assemble(model: &SystemModel, obs: &Observable, t: f64, nu_max: usize, n_particles: Option<usize>, numerics: Numerics) -> Result<ExpansionResult> {
    let provider = make_provider(model, &obs.reservoir, ProviderKind::Fock)?;
    Expansion::new(model, obs, t, numerics, provider.as_ref())?.assemble(nu_max, n_particles)
}

/// Limit of `omega_N(F_N(A, t))` through odd order `r_max`, for a
/// single-particle observable `a` of a symmetric model.
pub fn fluctuation_series(model: &SystemModel, a: &OperatorMatrix, t: f64, numerics: &Numerics, provider: &dyn ReservoirMoments) -> Result<C64> {
    if !model.symmetric() {
        return Err(Error::NotSymmetric);
    }
    check_odd_moments(model, 2, t)?;
    let p = model.particle(0);
    if a.dim() != p.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), found: a.dim() });
    }
    if model.lambda == 0.0 {
        return Ok(ZERO);
    }
    let a_t = heisenberg(&p.h, a, t)?;
    let eig = p.h.eigh()?;
    let reservoir_only = Observable::reservoir(ReservoirObservable::Identity);
    let ctx = TermContext::new(model, &reservoir_only, t, provider)?.with_center(CenterOp::Coupling(p.channel));
    let g = eig.vectors.adjoint().matmul(&p.g.matmul(&eig.vectors));
    let d = p.dim();
    // mu_S([G(t_1), A(t)])
    let system_factor = |t1: f64| -> C64 {
        let g_t = OperatorMatrix::from_fn(&[d], |i, j| g[(i, j)] * C64::from_polar(1.0, t1 * (eig.values[i] - eig.values[j])));
        let g_t = eig.vectors.matmul(&g_t.matmul(&eig.vectors.adjoint()));
        p.state.trace_product(&g_t.commutator(&a_t))
    };
    let mut total = ZERO;
    for r in (1..=numerics.r_max).step_by(2) {
        let inner = r - 1;
        let templates = expand_multicommutator(inner, numerics.order_cap)?;
        let species = vec![0; inner / 2];
        let assignments: Vec<Assignment> = enumerate_limit_classes(LimitKind::D, inner, 0, &[])?
            .map(|labels| Assignment { labels, species: species.clone(), weight: 1.0 })
            .collect();
        let batch = ctx.batch(assignments);
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let f = |ts: &[f64], out: &mut [C64]| {
            let mut buf = [ZERO];
            if let Err(e) = ctx.accumulate_node(&templates, &batch, &ts[1..], ts[0], &mut buf) {
                failure.lock().expect("poisoned").get_or_insert(e);
            }
            out[0] = system_factor(ts[0]) * buf[0];
        };
        let res = integrate_simplex_vec(&f, 1, t, r, &numerics.spec(r))?;
        if let Some(e) = failure.into_inner().expect("poisoned") {
            return Err(e);
        }
        total += i_lambda_pow(model.lambda, r) / factorial(inner / 2) * res.values[0];
    }
    Ok(total)
}
