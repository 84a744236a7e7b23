//! Dense complex operators on small tensor-product Hilbert spaces.
//!
//! [`OperatorMatrix`] stores a square matrix in row-major order together with
//! the dimensions of its tensor factors. Propagation uses a cached hermitian
//! eigendecomposition ([`Propagator`]), so that evaluating `e^{itH} A e^{-itH}`
//! at many times costs one `O(d^3)` factorization and `O(d^2)` per time.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use faer::complex_native::c64;
use faer::{Mat, Side};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Tolerance on `max |M - M^dag|` for a matrix to count as hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance on `|Tr rho - 1|` for density matrices.
pub const TRACE_TOL: f64 = 1e-12;
/// Smallest admissible eigenvalue of a density matrix.
pub const POSITIVITY_TOL: f64 = -1e-10;

/// Below this dimension matrix products use the plain triple loop.
const DENSE_KERNEL_MIN_DIM: usize = 48;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Square complex matrix acting on `dims[0] ⊗ dims[1] ⊗ ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    dims: Vec<usize>,
    dim: usize,
    data: Vec<C64>,
}

impl OperatorMatrix {
    pub fn new(dims: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let dim = total_dim(&dims)?;
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: data.len() });
        }
        Ok(Self { dims, dim, data })
    }

    /// Hermitian matrix, validated against [`HERMITIAN_TOL`].
    pub fn hermitian(dims: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let m = Self::new(dims, data)?;
        m.ensure_hermitian()?;
        Ok(m)
    }

    /// Density matrix: hermitian, unit trace, positive semidefinite.
    pub fn density(dims: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let m = Self::new(dims, data)?;
        m.ensure_density()?;
        Ok(m)
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let dim: usize = dims.iter().product();
        Self { dims: dims.to_vec(), dim, data: vec![ZERO; dim * dim] }
    }

    pub fn identity(dims: &[usize]) -> Self {
        let mut m = Self::zeros(dims);
        for i in 0..m.dim {
            m.data[i * m.dim + i] = ONE;
        }
        m
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(dims);
        let d = m.dim;
        for i in 0..d {
            for j in 0..d {
                m.data[i * d + j] = f(i, j);
            }
        }
        m
    }

    pub fn diagonal(dims: &[usize], diag: &[C64]) -> Result<Self> {
        let mut m = Self::zeros(dims);
        if diag.len() != m.dim {
            return Err(Error::DimensionMismatch { expected: m.dim, found: diag.len() });
        }
        for (i, &z) in diag.iter().enumerate() {
            m.data[i * m.dim + i] = z;
        }
        Ok(m)
    }

    /// Matrix from nested real rows, single tensor factor.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let d = rows.len();
        let mut data = Vec::with_capacity(d * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: row.len() });
            }
            data.extend(row.iter().map(|&x| C64::new(x, 0.0)));
        }
        Self::new(vec![d], data)
    }

    /// Rank-one projector `|psi><psi|` on a single factor.
    pub fn projector(psi: &[C64]) -> Self {
        let d = psi.len();
        Self::from_fn(&[d], |i, j| psi[i] * psi[j].conj())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// Same entries, new factor structure with the same total dimension.
    pub fn with_dims(mut self, dims: Vec<usize>) -> Result<Self> {
        let dim = total_dim(&dims)?;
        if dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: dim });
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(&self.dims);
        for i in 0..d {
            for j in 0..d {
                out.data[j * d + i] = self.data[i * d + j].conj();
            }
        }
        out
    }

    pub fn scale(&self, z: C64) -> Self {
        Self { dims: self.dims.clone(), dim: self.dim, data: self.data.iter().map(|&x| x * z).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// `Tr(self * other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let d = self.dim;
        let mut acc = ZERO;
        for i in 0..d {
            for j in 0..d {
                acc += self.data[i * d + j] * other.data[j * d + i];
            }
        }
        acc
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let d = self.dim;
        if d >= DENSE_KERNEL_MIN_DIM {
            let prod = &self.to_faer() * &other.to_faer();
            return Self::from_faer(&self.dims, &prod);
        }
        let mut out = vec![ZERO; d * d];
        for i in 0..d {
            let row = &mut out[i * d..(i + 1) * d];
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == ZERO {
                    continue;
                }
                let orow = &other.data[k * d..(k + 1) * d];
                for (o, &b) in row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Self { dims: self.dims.clone(), dim: d, data: out }
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &Self) -> Self {
        &self.matmul(other) - &other.matmul(self)
    }

    /// Kronecker product `self ⊗ other`; factor lists are concatenated.
    pub fn kron(&self, other: &Self) -> Self {
        let (da, db) = (self.dim, other.dim);
        let d = da * db;
        let mut data = vec![ZERO; d * d];
        for i in 0..da {
            for j in 0..da {
                let a = self.data[i * da + j];
                if a == ZERO {
                    continue;
                }
                for k in 0..db {
                    for l in 0..db {
                        data[(i * db + k) * d + j * db + l] = a * other.data[k * db + l];
                    }
                }
            }
        }
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Self { dims, dim: d, data }
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let d = self.dim;
        assert_eq!(v.len(), d);
        (0..d)
            .map(|i| self.data[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Row vector times matrix, `v^T M`.
    pub fn apply_left(&self, v: &[C64]) -> Vec<C64> {
        let d = self.dim;
        let mut out = vec![ZERO; d];
        for (k, &vk) in v.iter().enumerate() {
            if vk == ZERO {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(&self.data[k * d..(k + 1) * d]) {
                *o += vk * m;
            }
        }
        out
    }

    pub fn hermitian_deviation(&self) -> f64 {
        let d = self.dim;
        let mut dev: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                dev = dev.max((self.data[i * d + j] - self.data[j * d + i].conj()).norm());
            }
        }
        dev
    }

    pub fn ensure_hermitian(&self) -> Result<()> {
        let deviation = self.hermitian_deviation();
        if deviation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(())
    }

    pub fn ensure_density(&self) -> Result<()> {
        self.ensure_hermitian()
            .map_err(|e| Error::NotDensity { reason: e.to_string() })?;
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::NotDensity { reason: format!("trace {tr}") });
        }
        let min = self.eigh()?.values.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < POSITIVITY_TOL {
            return Err(Error::NotDensity { reason: format!("min eigenvalue {min:.3e}") });
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        if self.data.iter().all(|&z| z == ZERO) {
            return 0.0;
        }
        let gram = self.adjoint().matmul(self);
        match gram.eigh() {
            Ok(e) => e.values.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt(),
            Err(_) => self.frobenius_norm(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Hermitian eigendecomposition `self = V diag(values) V^dag`.
    pub fn eigh(&self) -> Result<Eigh> {
        let d = self.dim;
        let evd = self.to_faer().selfadjoint_eigendecomposition(Side::Lower);
        let s = evd.s().column_vector();
        let u = evd.u();
        let values: Vec<f64> = (0..d).map(|i| s.read(i).re).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Eigen("non-finite eigenvalue".into()));
        }
        let vectors = Self::from_fn(&self.dims, |i, j| {
            let z = u.read(i, j);
            C64::new(z.re, z.im)
        });
        Ok(Eigh { values, vectors })
    }

    fn to_faer(&self) -> Mat<c64> {
        let d = self.dim;
        Mat::from_fn(d, d, |i, j| {
            let z = self.data[i * d + j];
            c64::new(z.re, z.im)
        })
    }

    fn from_faer(dims: &[usize], m: &Mat<c64>) -> Self {
        Self::from_fn(dims, |i, j| {
            let z = m.read(i, j);
            C64::new(z.re, z.im)
        })
    }
}

impl Index<(usize, usize)> for OperatorMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for OperatorMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.dim, rhs.dim);
        OperatorMatrix {
            dims: self.dims.clone(),
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.dim, rhs.dim);
        OperatorMatrix {
            dims: self.dims.clone(),
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        self.matmul(rhs)
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors stored as columns.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: OperatorMatrix,
}

impl Eigh {
    /// Orthonormality defect `max |V^dag V - I|`.
    pub fn unitarity_error(&self) -> f64 {
        let v = &self.vectors;
        v.adjoint().matmul(v).max_abs_diff(&OperatorMatrix::identity(v.dims()))
    }
}

fn total_dim(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidParameter(format!("invalid factor dimensions {dims:?}")));
    }
    Ok(dims.iter().product())
}

/// Tensor product `mu_1 ⊗ ... ⊗ mu_k` of single-factor density matrices.
#[derive(Clone, Debug)]
pub struct ProductState {
    factors: Vec<OperatorMatrix>,
}

impl ProductState {
    pub fn new(factors: Vec<OperatorMatrix>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("product state needs at least one factor".into()));
        }
        for f in &factors {
            if f.dims().len() != 1 {
                return Err(Error::InvalidParameter("product-state factors must be single-slot".into()));
            }
            f.ensure_density()?;
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[OperatorMatrix] {
        &self.factors
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.dim()).collect()
    }

    /// The full density matrix `⊗ factors`.
    pub fn to_density(&self) -> OperatorMatrix {
        let mut it = self.factors.iter();
        let first = it.next().expect("nonempty").clone();
        it.fold(first, |acc, f| acc.kron(f))
    }
}

/// `I ⊗ ... ⊗ op ⊗ ... ⊗ I` with `op` on `slot`.
pub fn embed(op: &OperatorMatrix, slot: usize, dims: &[usize]) -> Result<OperatorMatrix> {
    embed_slots(op, &[slot], dims)
}

/// Embed an operator acting on the (strictly increasing) `slots` into the
/// full space with factor dimensions `dims`.
pub fn embed_slots(op: &OperatorMatrix, slots: &[usize], dims: &[usize]) -> Result<OperatorMatrix> {
    let layout = SlotLayout::new(slots, dims)?;
    if op.dim() != layout.sub_dim {
        return Err(Error::DimensionMismatch { expected: layout.sub_dim, found: op.dim() });
    }
    let mut out = OperatorMatrix::zeros(dims);
    let d = out.dim();
    let ds = layout.sub_dim;
    for rest in 0..layout.rest_dim {
        for a in 0..ds {
            let i = layout.full_index(a, rest);
            for b in 0..ds {
                let z = op.data[a * ds + b];
                if z != ZERO {
                    out.data[i * d + layout.full_index(b, rest)] = z;
                }
            }
        }
    }
    Ok(out)
}

/// Reduced operator on `keep` (strictly increasing), summing over the other
/// factors.
pub fn partial_trace(a: &OperatorMatrix, keep: &[usize]) -> Result<OperatorMatrix> {
    let dims = a.dims().to_vec();
    if keep.is_empty() {
        return OperatorMatrix::new(vec![1], vec![a.trace()]);
    }
    let layout = SlotLayout::new(keep, &dims)?;
    let kept: Vec<usize> = keep.iter().map(|&s| dims[s]).collect();
    let mut out = OperatorMatrix::zeros(&kept);
    let ds = layout.sub_dim;
    let d = a.dim();
    for rest in 0..layout.rest_dim {
        for x in 0..ds {
            let i = layout.full_index(x, rest);
            for y in 0..ds {
                out.data[x * ds + y] += a.data[i * d + layout.full_index(y, rest)];
            }
        }
    }
    Ok(out)
}

/// Index bookkeeping for a subset of tensor slots.
struct SlotLayout {
    /// Row-major strides of every slot in the full space.
    strides: Vec<usize>,
    sub: Vec<usize>,
    rest: Vec<usize>,
    dims: Vec<usize>,
    sub_dim: usize,
    rest_dim: usize,
}

impl SlotLayout {
    fn new(slots: &[usize], dims: &[usize]) -> Result<Self> {
        total_dim(dims)?;
        for (k, &s) in slots.iter().enumerate() {
            if s >= dims.len() {
                return Err(Error::SlotOutOfRange { slot: s, slots: dims.len() });
            }
            if k > 0 && slots[k - 1] >= s {
                return Err(Error::InvalidParameter("slots must be strictly increasing".into()));
            }
        }
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let rest: Vec<usize> = (0..dims.len()).filter(|s| !slots.contains(s)).collect();
        Ok(Self {
            sub_dim: slots.iter().map(|&s| dims[s]).product(),
            rest_dim: rest.iter().map(|&s| dims[s]).product(),
            strides,
            sub: slots.to_vec(),
            rest,
            dims: dims.to_vec(),
        })
    }

    fn full_index(&self, mut sub_idx: usize, mut rest_idx: usize) -> usize {
        let mut full = 0;
        for &s in self.sub.iter().rev() {
            full += (sub_idx % self.dims[s]) * self.strides[s];
            sub_idx /= self.dims[s];
        }
        for &s in self.rest.iter().rev() {
            full += (rest_idx % self.dims[s]) * self.strides[s];
            rest_idx /= self.dims[s];
        }
        full
    }
}

/// `Tr(rho A)` for a product state.
pub fn expectation(state: &ProductState, a: &OperatorMatrix) -> Result<C64> {
    let dim: usize = state.dims().iter().product();
    if dim != a.dim() {
        return Err(Error::DimensionMismatch { expected: dim, found: a.dim() });
    }
    Ok(state.to_density().trace_product(a))
}

/// Time evolution generated by a fixed hermitian Hamiltonian.
///
/// The eigendecomposition is computed once at construction; all methods take
/// `&self` and the type is `Sync`.
#[derive(Clone, Debug)]
pub struct Propagator {
    hamiltonian: OperatorMatrix,
    eig: Eigh,
}

/// Maximal orthonormality defect accepted from the eigensolver.
pub const UNITARITY_TOL: f64 = 1e-10;

impl Propagator {
    pub fn new(hamiltonian: OperatorMatrix) -> Result<Self> {
        hamiltonian.ensure_hermitian()?;
        let eig = hamiltonian.eigh()?;
        let err = eig.unitarity_error();
        if err > UNITARITY_TOL {
            return Err(Error::Eigen(format!("eigenvectors not orthonormal ({err:.3e})")));
        }
        Ok(Self { hamiltonian, eig })
    }

    pub fn hamiltonian(&self) -> &OperatorMatrix {
        &self.hamiltonian
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig.values
    }

    /// `V^dag A V`.
    pub fn to_eigenbasis(&self, a: &OperatorMatrix) -> OperatorMatrix {
        let v = &self.eig.vectors;
        v.adjoint().matmul(&a.matmul(v))
    }

    pub fn from_eigenbasis(&self, a: &OperatorMatrix) -> OperatorMatrix {
        let v = &self.eig.vectors;
        v.matmul(&a.matmul(&v.adjoint()))
    }

    /// `e^{itH} A e^{-itH}`.
    pub fn heisenberg(&self, a: &OperatorMatrix, t: f64) -> Result<OperatorMatrix> {
        if a.dim() != self.hamiltonian.dim() {
            return Err(Error::DimensionMismatch { expected: self.hamiltonian.dim(), found: a.dim() });
        }
        let mut ab = self.to_eigenbasis(a);
        self.rotate_eigenbasis(&mut ab, t);
        Ok(self.from_eigenbasis(&ab).with_dims(a.dims().to_vec())?)
    }

    /// In-place `A_{jk} <- e^{it(E_j - E_k)} A_{jk}` for an operator already in
    /// the eigenbasis.
    pub fn rotate_eigenbasis(&self, ab: &mut OperatorMatrix, t: f64) {
        let d = ab.dim();
        let phases: Vec<C64> = self.eig.values.iter().map(|&e| C64::from_polar(1.0, t * e)).collect();
        for j in 0..d {
            for k in 0..d {
                ab.data[j * d + k] *= phases[j] * phases[k].conj();
            }
        }
    }

    /// `e^{itH}`.
    pub fn unitary(&self, t: f64) -> OperatorMatrix {
        let d = self.hamiltonian.dim();
        let diag: Vec<C64> = self.eig.values.iter().map(|&e| C64::from_polar(1.0, t * e)).collect();
        let dm = OperatorMatrix::diagonal(self.hamiltonian.dims(), &diag).expect("dims");
        debug_assert_eq!(dm.dim(), d);
        self.from_eigenbasis(&dm)
    }

    /// Precomputes `Tr(rho e^{itH} A e^{-itH})` for repeated evaluation in `t`.
    pub fn trajectory(&self, rho: &OperatorMatrix, a: &OperatorMatrix) -> Result<Trajectory> {
        let d = self.hamiltonian.dim();
        for m in [rho, a] {
            if m.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: m.dim() });
            }
        }
        let rb = self.to_eigenbasis(rho);
        let ab = self.to_eigenbasis(a);
        // weight_{jk} = rho'_{kj} A'_{jk}
        let mut weights = vec![ZERO; d * d];
        for j in 0..d {
            for k in 0..d {
                weights[j * d + k] = rb.data[k * d + j] * ab.data[j * d + k];
            }
        }
        Ok(Trajectory { energies: self.eig.values.clone(), weights })
    }
}

/// `t -> Tr(rho A(t))` in spectral form.
#[derive(Clone, Debug)]
pub struct Trajectory {
    energies: Vec<f64>,
    weights: Vec<C64>,
}

impl Trajectory {
    pub fn value(&self, t: f64) -> C64 {
        let d = self.energies.len();
        let phases: Vec<C64> = self.energies.iter().map(|&e| C64::from_polar(1.0, t * e)).collect();
        let mut acc = ZERO;
        for j in 0..d {
            let mut row = ZERO;
            for k in 0..d {
                row += self.weights[j * d + k] * phases[k].conj();
            }
            acc += row * phases[j];
        }
        acc
    }
}

/// `e^{itH} A e^{-itH}` via eigendecomposition of `H`.
pub fn heisenberg(h: &OperatorMatrix, a: &OperatorMatrix, t: f64) -> Result<OperatorMatrix> {
    Propagator::new(h.clone())?.heisenberg(a, t)
}

/// Pauli matrices and spin-1/2 helpers, basis order `(|up>, |down>)`.
pub mod pauli {
    use super::*;

    pub fn sigma_x() -> OperatorMatrix {
        OperatorMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap()
    }

    pub fn sigma_y() -> OperatorMatrix {
        OperatorMatrix::new(vec![2], vec![ZERO, C64::new(0.0, -1.0), C64::new(0.0, 1.0), ZERO]).unwrap()
    }

    pub fn sigma_z() -> OperatorMatrix {
        OperatorMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]).unwrap()
    }

    /// `|up><down|`.
    pub fn sigma_plus() -> OperatorMatrix {
        OperatorMatrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap()
    }

    /// Gibbs state of `h` at inverse temperature `beta` (`beta = inf` gives the
    /// ground-state projector for nondegenerate spectra).
    pub fn gibbs(h: &OperatorMatrix, beta: f64) -> Result<OperatorMatrix> {
        let eig = h.eigh()?;
        let e0 = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = eig
            .values
            .iter()
            .map(|&e| if beta.is_infinite() { if e - e0 < 1e-12 { 1.0 } else { 0.0 } } else { (-beta * (e - e0)).exp() })
            .collect();
        let z: f64 = w.iter().sum();
        let diag: Vec<C64> = w.iter().map(|&x| C64::new(x / z, 0.0)).collect();
        let dm = OperatorMatrix::diagonal(h.dims(), &diag)?;
        let v = &eig.vectors;
        let mut rho = v.matmul(&dm.matmul(&v.adjoint()));
        // symmetrize away rounding so the density check is exact
        let adj = rho.adjoint();
        rho = (&rho + &adj).scale(C64::new(0.5, 0.0));
        Ok(rho)
    }
}

