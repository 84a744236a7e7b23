//! Time-ordered integrals over the simplex `t >= t_1 >= ... >= t_r >= 0`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Nodes per parallel work unit; fixed so the reduction order is reproducible.
const CHUNK: usize = 2048;

/// Gauss-Legendre nodes (ascending) and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre order must be positive");
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Compensated sum of complex numbers.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: C64,
    comp: C64,
}

impl KahanSum {
    pub fn add(&mut self, x: C64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> C64 {
        self.sum
    }
}

/// Elementwise compensated accumulation of complex vectors.
#[derive(Clone, Debug)]
pub struct KahanVec {
    sums: Vec<KahanSum>,
}

impl KahanVec {
    pub fn new(len: usize) -> Self {
        Self { sums: vec![KahanSum::default(); len] }
    }

    pub fn add_scaled(&mut self, xs: &[C64], w: f64) {
        for (s, &x) in self.sums.iter_mut().zip(xs) {
            s.add(x * w);
        }
    }

    pub fn merge(&mut self, other: &KahanVec) {
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            s.add(o.sum);
            s.add(-o.comp);
        }
    }

    pub fn values(&self) -> Vec<C64> {
        self.sums.iter().map(|s| s.value()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum QuadratureMethod {
    NestedGauss {
        order: usize,
    },
    SimplexMonteCarlo {
        samples: usize,
        seed: u64,
    },
}

/// How to evaluate a simplex integral. `tolerance` is relative to the
/// integral of `|f|`; `None` disables refinement and the tolerance check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    #[serde(flatten)]
    pub method: QuadratureMethod,
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Largest nested-Gauss order tried while refining.
    #[serde(default = "default_max_order")]
    pub max_order: usize,
}

fn default_max_order() -> usize {
    24
}

impl QuadratureSpec {
    pub fn gauss(order: usize) -> Self {
        Self { method: QuadratureMethod::NestedGauss { order }, tolerance: None, max_order: order.max(default_max_order()) }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self { method: QuadratureMethod::SimplexMonteCarlo { samples, seed }, tolerance: None, max_order: default_max_order() }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = Some(tol);
        self
    }

    /// Order 12 up to depth 4, order 8 for depths 5 and 6, sampling beyond.
    pub fn default_for_depth(r: usize, seed: u64) -> Self {
        match r {
            0..=4 => Self::gauss(12),
            5 | 6 => Self::gauss(8),
            _ => Self::monte_carlo(100_000, seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            QuadratureMethod::NestedGauss { order } if order < 2 => {
                Err(Error::InvalidParameter(format!("nested-gauss order {order} < 2")))
            }
            QuadratureMethod::SimplexMonteCarlo { samples, .. } if samples < 1000 => {
                Err(Error::InvalidParameter(format!("Monte Carlo sample count {samples} < 1000")))
            }
            _ => match self.tolerance {
                Some(tol) if !(tol > 0.0) => Err(Error::InvalidParameter(format!("tolerance {tol} must be positive"))),
                _ => Ok(()),
            },
        }
    }
}

/// Vector-valued simplex integral.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexIntegral {
    pub values: Vec<C64>,
    /// Per-component error estimates.
    pub errors: Vec<f64>,
    /// Integral of `max_i |f_i|`, the scale the tolerance refers to.
    pub magnitude: f64,
    pub evaluations: usize,
}

impl SimplexIntegral {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// `int_0^t dt_1 ... int_0^{t_{r-1}} dt_r f(t_1, ..., t_r)` for scalar `f`.
pub fn integrate_simplex(f: impl Fn(&[f64]) -> C64 + Sync, t: f64, r: usize, spec: &QuadratureSpec) -> Result<(C64, f64)> {
    let res = integrate_simplex_vec(&|ts: &[f64], out: &mut [C64]| out[0] = f(ts), 1, t, r, spec)?;
    Ok((res.values[0], res.errors[0]))
}

/// Vector-valued version; `f` writes its `len` components into the buffer.
pub fn integrate_simplex_vec(
    f: &(dyn Fn(&[f64], &mut [C64]) + Sync),
    len: usize,
    t: f64,
    r: usize,
    spec: &QuadratureSpec,
) -> Result<SimplexIntegral> {
    spec.validate()?;
    if r == 0 {
        let mut out = vec![ZERO; len];
        f(&[], &mut out);
        let magnitude = out.iter().map(|z| z.norm()).fold(0.0, f64::max);
        return Ok(SimplexIntegral { values: out, errors: vec![0.0; len], magnitude, evaluations: 1 });
    }
    match spec.method {
        QuadratureMethod::NestedGauss { order } => {
            let mut order = order;
            loop {
                let res = nested_gauss_with_estimate(f, len, t, r, order);
                match spec.tolerance {
                    None => return Ok(res),
                    Some(tol) => {
                        let target = tol * res.magnitude;
                        if res.max_error() <= target {
                            return Ok(res);
                        }
                        if order >= spec.max_order {
                            return Err(Error::Quadrature { error: res.max_error(), target });
                        }
                        order = (order + 4).min(spec.max_order);
                    }
                }
            }
        }
        QuadratureMethod::SimplexMonteCarlo { samples, seed } => {
            let res = simplex_monte_carlo(f, len, t, r, samples, seed);
            if let Some(tol) = spec.tolerance {
                let target = tol * res.magnitude;
                if res.max_error() > target {
                    return Err(Error::Quadrature { error: res.max_error(), target });
                }
            }
            Ok(res)
        }
    }
}

/// Order-`k` rule with error estimate `|Q_k - Q_{k-2}|` per component.
fn nested_gauss_with_estimate(f: &(dyn Fn(&[f64], &mut [C64]) + Sync), len: usize, t: f64, r: usize, k: usize) -> SimplexIntegral {
    let (hi, mag, n_hi) = nested_gauss(f, len, t, r, k);
    let coarse = if k >= 4 { k - 2 } else { k - 1 };
    let (lo, _, n_lo) = nested_gauss(f, len, t, r, coarse);
    let errors = hi.iter().zip(&lo).map(|(a, b)| (a - b).norm()).collect();
    SimplexIntegral { values: hi, errors, magnitude: mag, evaluations: n_hi + n_lo }
}

fn nested_gauss(f: &(dyn Fn(&[f64], &mut [C64]) + Sync), len: usize, t: f64, r: usize, k: usize) -> (Vec<C64>, f64, usize) {
    let (x, w) = gauss_legendre(k);
    // nodes and weights on [0, 1]
    let u: Vec<f64> = x.iter().map(|xi| 0.5 * (xi + 1.0)).collect();
    let v: Vec<f64> = w.iter().map(|wi| 0.5 * wi).collect();
    let total = k.checked_pow(r as u32).expect("node count overflow");
    let chunks: Vec<(KahanVec, f64)> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = KahanVec::new(len);
            let mut mag = 0.0;
            let mut ts = vec![0.0; r];
            let mut out = vec![ZERO; len];
            for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let mut rest = idx;
                let mut upper = t;
                let mut weight = 1.0;
                for slot in ts.iter_mut() {
                    let d = rest % k;
                    rest /= k;
                    *slot = upper * u[d];
                    weight *= upper * v[d];
                    upper = *slot;
                }
                out.iter_mut().for_each(|z| *z = ZERO);
                f(&ts, &mut out);
                acc.add_scaled(&out, weight);
                mag += weight * out.iter().map(|z| z.norm()).fold(0.0, f64::max);
            }
            (acc, mag)
        })
        .collect();
    let mut total_acc = KahanVec::new(len);
    let mut mag = 0.0;
    for (acc, m) in &chunks {
        total_acc.merge(acc);
        mag += m;
    }
    (total_acc.values(), mag, total)
}

/// Uniform point in the ordered simplex for sample `i`; each sample has its
/// own ChaCha stream, so the sample set does not depend on scheduling.
pub fn simplex_sample(seed: u64, i: u64, t: f64, ts: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    for x in ts.iter_mut() {
        *x = t * rng.gen::<f64>();
    }
    ts.sort_by(|a, b| b.partial_cmp(a).expect("finite samples"));
}

fn simplex_monte_carlo(
    f: &(dyn Fn(&[f64], &mut [C64]) + Sync),
    len: usize,
    t: f64,
    r: usize,
    samples: usize,
    seed: u64,
) -> SimplexIntegral {
    let volume = t.powi(r as i32) / (1..=r).map(|k| k as f64).product::<f64>();
    let chunks: Vec<(KahanVec, Vec<f64>, f64)> = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = KahanVec::new(len);
            let mut sq = vec![0.0; len];
            let mut mag = 0.0;
            let mut ts = vec![0.0; r];
            let mut out = vec![ZERO; len];
            for i in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                simplex_sample(seed, i as u64, t, &mut ts);
                out.iter_mut().for_each(|z| *z = ZERO);
                f(&ts, &mut out);
                acc.add_scaled(&out, 1.0);
                for (s, z) in sq.iter_mut().zip(&out) {
                    *s += z.norm_sqr();
                }
                mag += out.iter().map(|z| z.norm()).fold(0.0, f64::max);
            }
            (acc, sq, mag)
        })
        .collect();
    let mut acc = KahanVec::new(len);
    let mut sq = vec![0.0; len];
    let mut mag = 0.0;
    for (a, s, m) in &chunks {
        acc.merge(a);
        for (x, y) in sq.iter_mut().zip(s) {
            *x += y;
        }
        mag += m;
    }
    let m = samples as f64;
    let means = acc.values();
    let values = means.iter().map(|s| s * (volume / m)).collect();
    let errors = means
        .iter()
        .zip(&sq)
        .map(|(s, q)| {
            let mean = s / m;
            let var = (q / m - mean.norm_sqr()).max(0.0) * m / (m - 1.0);
            volume * (var / m).sqrt()
        })
        .collect();
    SimplexIntegral { values, errors, magnitude: volume * mag / m, evaluations: samples }
}
