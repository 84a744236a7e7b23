//! Quasifree (Wick) reservoir moments, the `beta_r` / `b` / `S_nu` bounds and
//! convergence certificates.

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::commutator::{ReservoirMoments, ResOp};
use crate::error::{Error, Result};
use crate::model::{Reservoir, ReservoirObservable, ReservoirState, SystemModel};
use crate::reservoir::{CorrelationFunction, QuasifreeField};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Sum over perfect pairings of a matrix of ordered two-point values
/// (`pair[i][j]` with `i < j`), by recursive first-element matching.
fn pairing_sum(pair: &[Vec<C64>], used: &mut Vec<bool>) -> C64 {
    let Some(i) = used.iter().position(|u| !u) else {
        return ONE;
    };
    used[i] = true;
    let mut acc = ZERO;
    for j in i + 1..pair.len() {
        if !used[j] {
            used[j] = true;
            acc += pair[i][j] * pairing_sum(pair, used);
            used[j] = false;
        }
    }
    used[i] = false;
    acc
}

fn pairings(pair: &[Vec<C64>]) -> C64 {
    if pair.len() % 2 == 1 {
        return ZERO;
    }
    pairing_sum(pair, &mut vec![false; pair.len()])
}

/// `mu(B(s_1) ... B(s_r))` for a single field with correlation `c`; the
/// identity inserted anywhere does not change the value.
pub fn wick_moment(times: &[f64], c: &CorrelationFunction) -> C64 {
    let m = times.len();
    let pair: Vec<Vec<C64>> = (0..m).map(|i| (0..m).map(|j| if j > i { c.eval(times[i], times[j]) } else { ZERO }).collect()).collect();
    pairings(&pair)
}

/// `mu(phi(f_1)(s_1) ... phi(f_m)(s_m))` in a gauge-invariant quasifree state.
pub fn wick_moment_fields(field: &QuasifreeField, ops: &[(&[C64], f64)]) -> C64 {
    let m = ops.len();
    let pair: Vec<Vec<C64>> = (0..m)
        .map(|i| (0..m).map(|j| if j > i { field.two_point(ops[i].0, ops[i].1, ops[j].0, ops[j].1) } else { ZERO }).collect())
        .collect();
    pairings(&pair)
}

/// Wick moments for centre observables that are products of fields.
#[derive(Clone, Debug)]
pub struct WickMoments {
    field: QuasifreeField,
    channels: Vec<Vec<C64>>,
    observable: Vec<Vec<C64>>,
}

impl WickMoments {
    pub fn new(field: QuasifreeField, channels: Vec<Vec<C64>>, observable: &ReservoirObservable) -> Result<Self> {
        let observable = match observable {
            ReservoirObservable::Identity => Vec::new(),
            ReservoirObservable::Field(f) => vec![f.clone()],
            ReservoirObservable::FieldProduct(fs) => fs.clone(),
            other => return Err(Error::Unsupported(format!("Wick moments with {other:?} inserted"))),
        };
        for f in channels.iter().chain(&observable) {
            if f.len() != field.len() {
                return Err(Error::DimensionMismatch { expected: field.len(), found: f.len() });
            }
        }
        Ok(Self { field, channels, observable })
    }

    /// Provider for a vacuum or thermal Fock reservoir of a model.
    pub fn from_model(model: &SystemModel, observable: &ReservoirObservable) -> Result<Self> {
        match &model.reservoir {
            Reservoir::Fock { channels, .. } => {
                let field = model
                    .reservoir
                    .quasifree()
                    .ok_or_else(|| Error::Unsupported("Wick moments need a vacuum or thermal reservoir".into()))?;
                Self::new(field, channels.clone(), observable)
            }
            Reservoir::Finite { .. } => Err(Error::Unsupported("Wick moments on a finite reservoir".into())),
        }
    }
}

impl ReservoirMoments for WickMoments {
    fn moment(&self, ops: &[ResOp]) -> Result<C64> {
        let mut fields: Vec<(&[C64], f64)> = Vec::with_capacity(ops.len() + self.observable.len());
        for op in ops {
            match *op {
                ResOp::Coupling { channel, time } => {
                    let f = self.channels.get(channel).ok_or_else(|| Error::InvalidParameter(format!("no channel {channel}")))?;
                    fields.push((f, time));
                }
                ResOp::Observable { time } => fields.extend(self.observable.iter().map(|f| (f.as_slice(), time))),
            }
        }
        Ok(wick_moment_fields(&self.field, &fields))
    }
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `ln` of Gaussian moment bound `(e / sqrt(pi)) a (C/e)^{m/2} m^{m/2}`.
fn ln_gaussian_bound(m: usize, c: f64, a: f64) -> f64 {
    if m == 0 {
        return a.ln();
    }
    let m = m as f64;
    1.0 - 0.5 * std::f64::consts::PI.ln() + a.ln() + 0.5 * m * (c.ln() - 1.0) + 0.5 * m * m.ln()
}

/// Which analytic estimate controls `beta_r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Bounded couplings: `beta_r <= ||A_r|| g_r^r`.
    Bounded,
    /// Gaussian field: Gaussian moment bounds with constant `C`.
    Gaussian,
}

/// Upper bounds on `beta_r(A_r, t)` for one model and reservoir observable.
#[derive(Clone, Debug)]
pub struct BetaBounds {
    pub regime: Regime,
    /// Norm of `A_r` and of the couplings on the (possibly truncated) space.
    pub a_norm: f64,
    pub b_norm: f64,
    /// Gaussian moment constant `C` or `C(A_r, t)` (Gaussian regime only).
    pub c: f64,
    /// Number of field factors in `A_r`.
    pub k: usize,
    /// `A_r` is the number operator and the state has at most `n0` particles.
    pub number_n0: Option<usize>,
    /// Smallest Fock cutoff; Gaussian bounds describe the truncated moments
    /// exactly only while `(r + k)/2 < cutoff`.
    pub exact_below: usize,
}

impl BetaBounds {
    pub fn from_model(model: &SystemModel, observable: &ReservoirObservable) -> Result<Self> {
        let res = &model.reservoir;
        let a_norm = res.observable_matrix(observable)?.operator_norm();
        let b_norm = res.coupling_norm()?;
        let mut out = Self { regime: Regime::Bounded, a_norm, b_norm, c: 0.0, k: 0, number_n0: None, exact_below: 0 };
        if let (Reservoir::Fock { space, channels, state }, Some(field)) = (res, res.quasifree()) {
            let (k, extra): (usize, Vec<&[C64]>) = match observable {
                ReservoirObservable::Field(f) => (1, vec![f.as_slice()]),
                ReservoirObservable::FieldProduct(fs) => (fs.len(), fs.iter().map(|f| f.as_slice()).collect()),
                _ => (0, Vec::new()),
            };
            let fields: Vec<&[C64]> = channels.iter().map(|c| c.as_slice()).chain(extra).collect();
            out.regime = Regime::Gaussian;
            out.c = field.bound_constant(&fields);
            out.k = k;
            if matches!(observable, ReservoirObservable::Number) && matches!(state, ReservoirState::Vacuum) {
                out.number_n0 = Some(0);
            }
            out.exact_below = space.modes.iter().map(|m| m.cutoff).min().unwrap_or(0);
            if matches!(state, ReservoirState::Thermal { .. }) {
                // thermal populations reach the cutoff, so truncated moments are never exact
                out.exact_below = 0;
            }
        }
        Ok(out)
    }

    /// `||A_r|| g_r^r`, valid for every bounded (or truncated) reservoir.
    pub fn ln_bounded(&self, r: usize) -> f64 {
        self.a_norm.ln() + r as f64 * self.b_norm.ln()
    }

    /// Gaussian moment bound, when it applies to the truncated moments.
    pub fn ln_moment_bound(&self, r: usize) -> Option<f64> {
        if self.regime != Regime::Gaussian || 2 * self.exact_below <= r + self.k {
            return None;
        }
        if let Some(n0) = self.number_n0 {
            let a = (n0 + r / 2) as f64;
            return Some(if a == 0.0 { f64::NEG_INFINITY } else { ln_gaussian_bound(r, self.c, a) });
        }
        if self.k > 0 {
            return Some(ln_gaussian_bound(r + self.k, self.c, 1.0));
        }
        Some(ln_gaussian_bound(r, self.c, self.a_norm))
    }

    pub fn moment_bound(&self, r: usize) -> Option<f64> {
        self.ln_moment_bound(r).map(f64::exp)
    }

    pub fn ln_bound(&self, r: usize) -> f64 {
        let e1 = self.ln_bounded(r);
        self.ln_moment_bound(r).map_or(e1, |l| l.min(e1))
    }

    pub fn bound(&self, r: usize) -> f64 {
        self.ln_bound(r).exp()
    }

    /// Analytic estimate of `b(A_r, t)`: `0` when bounded, `sqrt(C/e)` when Gaussian.
    pub fn b_analytic(&self) -> f64 {
        match self.regime {
            Regime::Bounded => 0.0,
            Regime::Gaussian => (self.c / std::f64::consts::E).sqrt(),
        }
    }
}

/// Grid search for `beta_r`: the maximum of `|mu_r(B ... A_r(t) ... B)|` over
/// time tuples on `points` equispaced nodes of `[0, t]`, all channel
/// sequences in `channels` and all insertion positions. A lower bound on the
/// true supremum.
pub fn beta_grid(provider: &dyn ReservoirMoments, channels: &[usize], r: usize, t: f64, points: usize) -> Result<f64> {
    let points = points.max(2);
    let grid: Vec<f64> = (0..points).map(|i| t * i as f64 / (points - 1) as f64).collect();
    let mut best: f64 = 0.0;
    let total_times = points.pow(r as u32);
    let total_chans = channels.len().pow(r as u32);
    let mut ops = Vec::with_capacity(r + 1);
    for ti in 0..total_times {
        for ci in 0..total_chans {
            for pos in 0..=r {
                ops.clear();
                let (mut a, mut b) = (ti, ci);
                for i in 0..r {
                    if i == pos {
                        ops.push(ResOp::Observable { time: t });
                    }
                    ops.push(ResOp::Coupling { channel: channels[b % channels.len()], time: grid[a % points] });
                    a /= points;
                    b /= channels.len();
                }
                if pos == r {
                    ops.push(ResOp::Observable { time: t });
                }
                best = best.max(provider.moment(&ops)?.norm());
            }
        }
    }
    Ok(best)
}

/// Finite-range proxy `max_{r in range} beta_r^{1/r} / sqrt(r)`.
pub fn b_estimate(beta: impl Fn(usize) -> f64, r_range: std::ops::RangeInclusive<usize>) -> f64 {
    r_range.filter(|&r| r > 0).map(|r| beta(r).powf(1.0 / r as f64) / (r as f64).sqrt()).fold(0.0, f64::max)
}

/// Partial sum of `sum_{s >= s0} x^{2s}/s! beta_{m0 + 2s}` with a geometric tail
/// estimate. `m0 = 2 nu` gives `S_nu` (`s0 = 1` when `nu = 0`), `m0 = 2 nu + 1`
/// gives `S_{nu + 1/2}`. Returns `(value, tail)`; `tail` is infinite when the
/// terms stop decreasing within `s_max`.
pub fn s_nu(m0: usize, x: f64, ln_beta: impl Fn(usize) -> f64, s_max: usize) -> (f64, f64) {
    let s0 = usize::from(m0 == 0);
    if x == 0.0 {
        return if s0 == 0 { (ln_beta(m0).exp(), 0.0) } else { (0.0, 0.0) };
    }
    let ln_term = |s: usize| 2.0 * s as f64 * x.ln() - ln_factorial(s) + ln_beta(m0 + 2 * s);
    let mut sum = 0.0;
    let mut last = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    for s in s0..=s_max.max(s0) {
        prev = last;
        last = ln_term(s);
        sum += last.exp();
        if s > s0 + 2 && last < prev && last.exp() < 1e-17 * sum {
            break;
        }
    }
    let ratio = (last - prev).exp();
    let tail = if ratio < 1.0 { last.exp() * ratio / (1.0 - ratio) } else { f64::INFINITY };
    (sum, tail)
}

/// `(A0)` and growth certificates at `(lambda, t)`.
#[derive(Clone, Debug, Serialize)]
pub struct BoundCertificate {
    pub regime: Regime,
    pub g: f64,
    pub lambda: f64,
    pub t: f64,
    pub n: usize,
    /// Gaussian moment constant (0 when bounded).
    pub c: f64,
    pub b_estimate: f64,
    pub b_proxy: f64,
    pub a1_margin: f64,
    /// `None` when the radius is unbounded (`b = 0`).
    pub radius_lower_bound: Option<f64>,
    /// `16 lambda^2 g^2 t^2 C`.
    pub convergence_product: f64,
    pub s_nu: Vec<f64>,
    pub s_nu_half: Vec<f64>,
    pub x_bounds: Vec<f64>,
    pub y_bounds: Vec<f64>,
    pub thmbnd_margin: f64,
    pub a1_ok: bool,
    pub convergence_ok: bool,
    pub bounded: bool,
    pub certified: bool,
}

/// Evaluates the convergence conditions and coefficient bounds for `nu <= nu_max`.
pub fn certify(model: &SystemModel, observable: &ReservoirObservable, a_s_norm: f64, t: f64, n: usize, nu_max: usize) -> Result<BoundCertificate> {
    let bounds = BetaBounds::from_model(model, observable)?;
    let lambda = model.lambda;
    let g = model.g();
    let x = 2.0 * lambda.abs() * g * t;
    let b = bounds.b_analytic();
    let a1_margin = 2.0 * (2.0 * std::f64::consts::E).sqrt() * lambda.abs() * g * t * b;
    let radius_lower_bound = if g * t * b > 0.0 { Some(1.0 / (2.0 * (2.0 * std::f64::consts::E).sqrt() * g * t * b)) } else { None };
    let convergence_product = 16.0 * lambda * lambda * g * g * t * t * bounds.c;
    let bounded = bounds.regime == Regime::Bounded;
    let ln_beta = |r: usize| bounds.ln_bound(r);
    let mut s_vals = Vec::new();
    let mut s_half = Vec::new();
    let mut x_bounds = Vec::new();
    let mut y_bounds = Vec::new();
    let nx = 2.0 * n as f64 * lambda.abs() * g * t;
    for nu in 0..=nu_max {
        let (s, tail) = s_nu(2 * nu, x, ln_beta, 400);
        let (sh, tail_h) = s_nu(2 * nu + 1, x, ln_beta, 400);
        let s = s + tail;
        let sh = sh + tail_h;
        s_vals.push(s);
        s_half.push(sh);
        x_bounds.push(a_s_norm * nx.powi(2 * nu as i32) / ln_factorial(2 * nu).exp() * s);
        y_bounds.push(a_s_norm * nx.powi(2 * nu as i32 + 1) / ln_factorial(2 * nu + 1).exp() * sh);
    }
    let ne = n as f64 * std::f64::consts::E * lambda.abs() * g * t;
    let thmbnd_margin = (1..=nu_max.max(1))
        .map(|nu| {
            let s = s_vals.get(nu).copied().unwrap_or_else(|| s_nu(2 * nu, x, ln_beta, 400).0);
            ne * ne * s.powf(1.0 / nu as f64) / (nu * nu) as f64
        })
        .fold(0.0, f64::max);
    let b_proxy = b_estimate(|r| bounds.bound(r), 1..=10);
    let a1_ok = a1_margin < 1.0;
    let convergence_ok = convergence_product < 1.0;
    Ok(BoundCertificate {
        regime: bounds.regime,
        g,
        lambda,
        t,
        n,
        c: bounds.c,
        b_estimate: b,
        b_proxy,
        a1_margin,
        radius_lower_bound,
        convergence_product,
        s_nu: s_vals,
        s_nu_half: s_half,
        x_bounds,
        y_bounds,
        thmbnd_margin,
        a1_ok,
        convergence_ok,
        bounded,
        certified: a1_ok && (convergence_ok || bounded),
    })
}

/// Bound on the total contribution of order `r` with `q` interaction factors
/// on the observed particles: `||A_S|| (2|lambda| g t)^r n^q / (q! ((r-q)/2)!) beta_r N^{-q/2}`.
pub fn order_bound(bounds: &BetaBounds, a_s_norm: f64, lambda: f64, g: f64, t: f64, n: usize, n_particles: Option<usize>, r: usize, q: usize) -> f64 {
    if q > r || (r - q) % 2 == 1 || (n == 0 && q > 0) {
        return 0.0;
    }
    let x = 2.0 * lambda.abs() * g * t;
    if x == 0.0 {
        return 0.0;
    }
    let mut ln = a_s_norm.ln() + r as f64 * x.ln() + q as f64 * (n.max(1) as f64).ln() - ln_factorial(q) - ln_factorial((r - q) / 2)
        + bounds.ln_bound(r);
    if let Some(big_n) = n_particles {
        ln -= 0.5 * q as f64 * (big_n as f64).ln();
    }
    ln.exp()
}

/// Sum of [`order_bound`] over all `(r, q)` outside the computed set:
/// every `r > r_max`, plus `q > q_max` at `r <= r_max`.
pub fn remainder_bound(
    bounds: &BetaBounds,
    a_s_norm: f64,
    lambda: f64,
    g: f64,
    t: f64,
    n: usize,
    n_particles: Option<usize>,
    r_max: usize,
    q_max: usize,
) -> f64 {
    let term = |r: usize, q: usize| order_bound(bounds, a_s_norm, lambda, g, t, n, n_particles, r, q);
    let mut total = 0.0;
    for r in 1..=r_max {
        for q in q_max + 1..=r {
            total += term(r, q);
        }
    }
    let mut prev = f64::INFINITY;
    for r in r_max + 1..r_max + 400 {
        let row: f64 = (0..=r).map(|q| term(r, q)).sum();
        if !row.is_finite() {
            return f64::INFINITY;
        }
        total += row;
        if r > r_max + 4 && row + prev <= 1e-18 * total {
            break;
        }
        prev = row;
    }
    total
}
