//! Multi-commutator expansion, index classes and factorized expectations.
//!
//! The `r`-fold commutator `[V_r, [..., [V_1, A(t)]]]` with
//! `V_i = G_{j_i}(t_i) ⊗ B_{j_i}(t_i)` expands into `2^r` ordered products.
//! In template `mask`, bit `i` set means `V_{i+1}` sits to the right of `A(t)`;
//! left factors appear in descending index order, right factors ascending,
//! and the sign is `(-1)^{#right}`.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::{Observable, Reservoir, ReservoirObservable, SystemModel};
use crate::tensor::{embed, OperatorMatrix};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Default cap on the commutator order.
pub const DEFAULT_MAX_ORDER: usize = 8;

/// Element of an ordered product: interaction factor `V_{i+1}` or the centre.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Factor(usize),
    Center,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub mask: u32,
    pub sign: i8,
    pub order: Vec<Slot>,
}

/// The `2^r` signed placements of an `r`-fold multi-commutator.
pub fn expand_multicommutator(r: usize, cap: usize) -> Result<Vec<Template>> {
    if r > cap || r > 30 {
        return Err(Error::OrderCap { r, cap });
    }
    Ok((0..1u32 << r)
        .map(|mask| {
            let right = |i: usize| mask >> i & 1 == 1;
            let mut order: Vec<Slot> = (0..r).rev().filter(|&i| !right(i)).map(Slot::Factor).collect();
            order.push(Slot::Center);
            order.extend((0..r).filter(|&i| right(i)).map(Slot::Factor));
            let sign = if mask.count_ones() % 2 == 0 { 1 } else { -1 };
            Template { mask, sign, order }
        })
        .collect())
}

/// Sum of the templates with concrete operators; `ops[i]` is `V_{i+1}`.
pub fn expand_with_operators(ops: &[OperatorMatrix], center: &OperatorMatrix) -> Result<OperatorMatrix> {
    let mut out = OperatorMatrix::zeros(center.dims());
    for tpl in expand_multicommutator(ops.len(), 30)? {
        let mut prod = OperatorMatrix::identity(center.dims());
        for s in &tpl.order {
            prod = prod.matmul(match s {
                Slot::Center => center,
                Slot::Factor(i) => &ops[*i],
            });
        }
        out = &out + &prod.scale(C64::new(tpl.sign as f64, 0.0));
    }
    Ok(out)
}

/// One signed ordered product `(prod left) A(t) (prod right)`; each tag is a
/// particle index and the time of its factor `G_j(t_i) ⊗ B_j(t_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CommutatorTerm {
    pub sign: i8,
    pub left_ops: Vec<(usize, f64)>,
    pub right_ops: Vec<(usize, f64)>,
}

impl CommutatorTerm {
    pub fn from_template(tpl: &Template, tuple: &[usize], times: &[f64]) -> Self {
        let mut left_ops = Vec::new();
        let mut right_ops = Vec::new();
        let mut past_center = false;
        for s in &tpl.order {
            match *s {
                Slot::Center => past_center = true,
                Slot::Factor(i) if past_center => right_ops.push((tuple[i], times[i])),
                Slot::Factor(i) => left_ops.push((tuple[i], times[i])),
            }
        }
        Self { sign: tpl.sign, left_ops, right_ops }
    }

    pub fn order(&self) -> usize {
        self.left_ops.len() + self.right_ops.len()
    }
}

/// All terms of the commutator for a fixed index tuple and times.
pub fn terms_for_tuple(tuple: &[usize], times: &[f64], cap: usize) -> Result<Vec<CommutatorTerm>> {
    Ok(expand_multicommutator(tuple.len(), cap)?.iter().map(|tpl| CommutatorTerm::from_template(tpl, tuple, times)).collect())
}

/// Occupation profile `(p_1, ..., p_N)` of an index tuple.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IndexClass {
    pub profile: Vec<usize>,
}

impl IndexClass {
    pub fn new(profile: Vec<usize>) -> Self {
        Self { profile }
    }

    pub fn r(&self) -> usize {
        self.profile.iter().sum()
    }

    /// `r! / (p_1! ... p_N!)`.
    pub fn member_count(&self) -> u128 {
        let mut count: u128 = 1;
        let mut placed: u128 = 0;
        for &p in &self.profile {
            for k in 1..=p as u128 {
                placed += 1;
                count = count * placed / k;
            }
        }
        count
    }

    /// Profile of a tuple over `n_particles` particles.
    pub fn of_tuple(tuple: &[usize], n_particles: usize) -> Self {
        let mut profile = vec![0; n_particles];
        for &j in tuple {
            profile[j] += 1;
        }
        Self { profile }
    }
}

/// Lazily streams the distinct arrangements of a multiset in lexicographic order.
#[derive(Clone, Debug)]
pub struct ClassTuples {
    current: Vec<usize>,
    done: bool,
}

impl Iterator for ClassTuples {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let v = &mut self.current;
        match (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) {
            None => self.done = true,
            Some(i) => {
                let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot exists");
                v.swap(i - 1, j);
                v[i..].reverse();
            }
        }
        Some(out)
    }
}

/// Tuples `(j_1, ..., j_r)` (0-based particles) in which `j` occurs `p_j` times.
pub fn enumerate_class(class: &IndexClass) -> ClassTuples {
    let mut current = Vec::with_capacity(class.r());
    for (j, &p) in class.profile.iter().enumerate() {
        current.extend(std::iter::repeat(j).take(p));
    }
    ClassTuples { current, done: false }
}

/// Every profile of `n_particles` nonnegative entries summing to `r`.
pub fn profiles(r: usize, n_particles: usize) -> Vec<IndexClass> {
    fn rec(r: usize, slots: usize, prefix: &mut Vec<usize>, out: &mut Vec<IndexClass>) {
        if slots == 1 {
            prefix.push(r);
            out.push(IndexClass::new(prefix.clone()));
            prefix.pop();
            return;
        }
        for p in 0..=r {
            prefix.push(p);
            rec(r - p, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n_particles == 0 {
        if r == 0 {
            out.push(IndexClass::new(Vec::new()));
        }
        return out;
    }
    rec(r, n_particles, &mut Vec::new(), &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LimitKind {
    /// Even system weight, the classes of the `X` limits.
    D,
    /// Odd system weight, the classes of the `Y` limits.
    E,
}

/// Tuples with `p_j` occurrences of system particle `j < n` and exactly two
/// occurrences of each fresh particle `n, ..., n + k - 1`, `k = (r - sum p) / 2`.
pub fn enumerate_limit_classes(kind: LimitKind, r: usize, n: usize, p: &[usize]) -> Result<ClassTuples> {
    if p.len() != n {
        return Err(Error::InconsistentClass(format!("{} system occupations for n = {n}", p.len())));
    }
    let sys: usize = p.iter().sum();
    let parity_ok = match kind {
        LimitKind::D => sys % 2 == 0,
        LimitKind::E => sys % 2 == 1,
    };
    if !parity_ok {
        return Err(Error::InconsistentClass(format!("system weight {sys} has wrong parity for {kind:?}")));
    }
    if sys > r || (r - sys) % 2 != 0 {
        return Err(Error::InconsistentClass(format!("r = {r} cannot be split into {sys} plus pairs")));
    }
    let mut profile = p.to_vec();
    profile.extend(std::iter::repeat(2).take((r - sys) / 2));
    Ok(enumerate_class(&IndexClass::new(profile)))
}

/// A labelled index tuple with multiplicity. Labels `< n` are the system
/// particles; larger labels are distinct fresh particles with species
/// `species[label]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub labels: Vec<usize>,
    pub species: Vec<usize>,
    pub weight: f64,
}

impl Assignment {
    /// Number of positions carried by system particles.
    pub fn system_weight(&self, n: usize) -> usize {
        self.labels.iter().filter(|&&l| l < n).count()
    }
}

fn falling(m: usize, k: usize) -> f64 {
    (0..k).map(|i| m.saturating_sub(i) as f64).product()
}

/// Canonical representatives of all tuples over `n` system particles and a
/// pool of fresh particles (`(species, count)` pairs). Fresh particles are
/// relabelled by first appearance and each representative carries the number
/// of tuples it stands for. With `even_fresh`, fresh particles occurring an
/// odd number of times are dropped.
pub fn canonical_assignments(r: usize, n: usize, pool: &[(usize, usize)], even_fresh: bool) -> Vec<Assignment> {
    struct State<'a> {
        r: usize,
        n: usize,
        pool: &'a [(usize, usize)],
        even: bool,
        labels: Vec<usize>,
        fresh_species: Vec<usize>,
        out: Vec<Assignment>,
    }
    fn rec(st: &mut State) {
        if st.labels.len() == st.r {
            let k = st.fresh_species.len();
            let mut counts = vec![0usize; k];
            for &l in &st.labels {
                if l >= st.n {
                    counts[l - st.n] += 1;
                }
            }
            if st.even && counts.iter().any(|c| c % 2 == 1) {
                return;
            }
            let mut weight = 1.0;
            for &(s, count) in st.pool {
                weight *= falling(count, st.fresh_species.iter().filter(|&&x| x == s).count());
            }
            if weight == 0.0 {
                return;
            }
            let mut species = vec![usize::MAX; st.n];
            species.extend(&st.fresh_species);
            st.out.push(Assignment { labels: st.labels.clone(), species, weight });
            return;
        }
        for j in 0..st.n + st.fresh_species.len() {
            st.labels.push(j);
            rec(st);
            st.labels.pop();
        }
        for pi in 0..st.pool.len() {
            let (s, count) = st.pool[pi];
            if st.fresh_species.iter().filter(|&&x| x == s).count() >= count {
                continue;
            }
            st.labels.push(st.n + st.fresh_species.len());
            st.fresh_species.push(s);
            rec(st);
            st.fresh_species.pop();
            st.labels.pop();
        }
    }
    let mut st = State { r, n, pool, even: even_fresh, labels: Vec::new(), fresh_species: Vec::new(), out: Vec::new() };
    rec(&mut st);
    st.out
}

/// Fresh-particle pool `(species, count)` for particles `n..N` of a model.
pub fn fresh_pool(model: &SystemModel, n: usize, n_particles: usize) -> Vec<(usize, usize)> {
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for j in n..n_particles {
        let s = model.species(j);
        match pool.iter_mut().find(|(x, _)| *x == s) {
            Some(entry) => entry.1 += 1,
            None => pool.push((s, 1)),
        }
    }
    pool
}

/// One element of an ordered reservoir product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResOp {
    /// `B_c(time)`.
    Coupling { channel: usize, time: f64 },
    /// `A_r(time)`.
    Observable { time: f64 },
}

/// Source of reservoir moments `mu_r(X_1 ... X_m)`.
pub trait ReservoirMoments: Sync {
    fn moment(&self, ops: &[ResOp]) -> Result<C64>;
}

/// Sparse matrix in coordinate form.
#[derive(Clone, Debug)]
struct Sparse {
    entries: Vec<(usize, usize, C64)>,
}

impl Sparse {
    fn from_dense(m: &OperatorMatrix) -> Self {
        let d = m.dim();
        let mut entries = Vec::new();
        for i in 0..d {
            for j in 0..d {
                let z = m[(i, j)];
                if z != ZERO {
                    entries.push((i, j, z));
                }
            }
        }
        Self { entries }
    }
}

/// Exact moments of a finite (possibly truncated) reservoir, evaluated by
/// row-vector products in the eigenbasis of `H_r`.
#[derive(Clone, Debug)]
pub struct FockMoments {
    energies: Vec<f64>,
    couplings: Vec<Sparse>,
    observable: Option<Sparse>,
    /// Mixture of the initial state in the eigenbasis.
    components: Vec<(f64, Vec<C64>)>,
}

impl FockMoments {
    pub fn new(reservoir: &Reservoir, observable: &ReservoirObservable) -> Result<Self> {
        let h = reservoir.hamiltonian();
        let d = h.dim();
        // Fock Hamiltonians are diagonal in the number basis.
        let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || h[(i, j)] == ZERO));
        let (energies, basis) = if diagonal {
            ((0..d).map(|i| h[(i, i)].re).collect::<Vec<_>>(), None)
        } else {
            let eig = h.eigh()?;
            (eig.values, Some(eig.vectors))
        };
        let to_eig = |m: &OperatorMatrix| match &basis {
            None => m.clone(),
            Some(v) => v.adjoint().matmul(&m.matmul(v)),
        };
        let couplings =
            (0..reservoir.channel_count()).map(|c| Ok(Sparse::from_dense(&to_eig(&reservoir.coupling(c)?)))).collect::<Result<_>>()?;
        let observable = match observable {
            ReservoirObservable::Identity => None,
            other => Some(Sparse::from_dense(&to_eig(&reservoir.observable_matrix(other)?))),
        };
        let components = reservoir
            .state_mixture()?
            .into_iter()
            .map(|(p, psi)| {
                let psi = match &basis {
                    None => psi,
                    Some(v) => v.adjoint().apply(&psi),
                };
                (p, psi)
            })
            .collect();
        Ok(Self { energies, couplings, observable, components })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }
}

impl ReservoirMoments for FockMoments {
    fn moment(&self, ops: &[ResOp]) -> Result<C64> {
        let d = self.dim();
        let mut rows: Vec<Vec<C64>> = self.components.iter().map(|(_, psi)| psi.iter().map(|z| z.conj()).collect()).collect();
        let mut next = vec![ZERO; d];
        let mut phase = vec![ZERO; d];
        for op in ops {
            let (matrix, time) = match *op {
                ResOp::Coupling { channel, time } => (
                    self.couplings.get(channel).ok_or_else(|| Error::InvalidParameter(format!("no channel {channel}")))?,
                    time,
                ),
                ResOp::Observable { time } => match &self.observable {
                    None => continue,
                    Some(m) => (m, time),
                },
            };
            for (ph, &e) in phase.iter_mut().zip(&self.energies) {
                *ph = C64::from_polar(1.0, time * e);
            }
            for row in rows.iter_mut() {
                next.iter_mut().for_each(|z| *z = ZERO);
                for &(m, n, x) in &matrix.entries {
                    next[n] += row[m] * phase[m] * x;
                }
                for (z, ph) in next.iter_mut().zip(&phase) {
                    *z *= ph.conj();
                }
                std::mem::swap(row, &mut next);
            }
        }
        let mut acc = ZERO;
        for (row, (p, psi)) in rows.iter().zip(&self.components) {
            let v: C64 = row.iter().zip(psi).map(|(a, b)| a * b).sum();
            acc += *p * v;
        }
        Ok(acc)
    }
}

/// Small dense square matrices in row-major order.
fn small_mul(a: &[C64], b: &[C64], d: usize, out: &mut [C64]) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = ZERO;
            for k in 0..d {
                acc += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = acc;
        }
    }
}

/// `Tr(rho M) = sum_{ab} rho_{ba} M_{ab}`.
fn small_trace(rho: &[C64], m: &[C64], d: usize) -> C64 {
    let mut acc = ZERO;
    for a in 0..d {
        for b in 0..d {
            acc += rho[b * d + a] * m[a * d + b];
        }
    }
    acc
}

fn dressed(m: &[C64], energies: &[f64], time: f64) -> Vec<C64> {
    let d = energies.len();
    let ph: Vec<C64> = energies.iter().map(|&e| C64::from_polar(1.0, time * e)).collect();
    let mut out = m.to_vec();
    for a in 0..d {
        for b in 0..d {
            out[a * d + b] *= ph[a] * ph[b].conj();
        }
    }
    out
}

/// Single-particle data in the eigenbasis of `h`.
#[derive(Clone, Debug)]
struct SpeciesData {
    dim: usize,
    energies: Vec<f64>,
    g: Vec<C64>,
    rho: Vec<C64>,
    channel: usize,
}

/// Joint data of the observed particles `1..n` in the eigenbasis of their
/// total free Hamiltonian.
#[derive(Clone, Debug)]
struct SystemBlock {
    dim: usize,
    energies: Vec<f64>,
    g: Vec<Vec<C64>>,
    a: Vec<C64>,
    rho: Vec<C64>,
    channels: Vec<usize>,
}

fn eigen_frame(h: &OperatorMatrix) -> Result<(Vec<f64>, OperatorMatrix)> {
    let eig = h.eigh()?;
    Ok((eig.values, eig.vectors))
}

fn to_frame(v: &OperatorMatrix, m: &OperatorMatrix) -> Vec<C64> {
    v.adjoint().matmul(&m.matmul(v)).data().to_vec()
}

/// What sits at the centre of the nested commutator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CenterOp {
    /// `A_S(t) ⊗ A_r(t)`.
    Observable,
    /// The bare coupling `B_c`, used by the fluctuation series.
    Coupling(usize),
}

/// Everything needed to evaluate factorized expectations of commutator terms
/// for one model, observable and time.
pub struct TermContext<'a> {
    n: usize,
    system: Option<SystemBlock>,
    species: Vec<SpeciesData>,
    provider: &'a dyn ReservoirMoments,
    t: f64,
    center: CenterOp,
}

impl<'a> TermContext<'a> {
    pub fn new(model: &SystemModel, obs: &Observable, t: f64, provider: &'a dyn ReservoirMoments) -> Result<Self> {
        let n = obs.support();
        let species = model
            .particles
            .iter()
            .map(|p| {
                let (energies, v) = eigen_frame(&p.h)?;
                Ok(SpeciesData { dim: p.dim(), energies, g: to_frame(&v, &p.g), rho: to_frame(&v, &p.state), channel: p.channel })
            })
            .collect::<Result<Vec<_>>>()?;
        let system = match &obs.system {
            None => None,
            Some(a_s) => {
                let dims: Vec<usize> = (0..n).map(|j| model.particle(j).dim()).collect();
                if a_s.dims() != dims.as_slice() {
                    return Err(Error::DimensionMismatch { expected: dims.iter().product(), found: a_s.dim() });
                }
                let mut h = OperatorMatrix::zeros(&dims);
                let mut rho = model.particle(0).state.clone();
                for j in 0..n {
                    h = &h + &embed(&model.particle(j).h, j, &dims)?;
                    if j > 0 {
                        rho = rho.kron(&model.particle(j).state);
                    }
                }
                let (energies, v) = eigen_frame(&h)?;
                let g = (0..n).map(|j| Ok(to_frame(&v, &embed(&model.particle(j).g, j, &dims)?))).collect::<Result<_>>()?;
                Some(SystemBlock {
                    dim: v.dim(),
                    energies,
                    g,
                    a: to_frame(&v, &a_s.clone().with_dims(dims.clone())?),
                    rho: to_frame(&v, &rho.with_dims(dims)?),
                    channels: (0..n).map(|j| model.particle(j).channel).collect(),
                })
            }
        };
        Ok(Self { n, system, species, provider, t, center: CenterOp::Observable })
    }

    pub fn with_center(mut self, center: CenterOp) -> Self {
        self.center = center;
        self
    }

    pub fn support(&self) -> usize {
        self.n
    }

    pub fn observable_time(&self) -> f64 {
        self.t
    }

    fn channel_of(&self, label: usize, species: &[usize]) -> usize {
        match &self.system {
            Some(sys) if label < self.n => sys.channels[label],
            _ => self.species[species[label]].channel,
        }
    }

    /// Value of one term for an explicit particle tuple of the model
    /// (`model_species[j]` is the species of particle `j`).
    pub fn term_value(&self, term: &CommutatorTerm, model: &SystemModel) -> Result<C64> {
        let r = term.order();
        let mut tuple = Vec::with_capacity(r);
        let mut times = Vec::with_capacity(r);
        let mut order = Vec::with_capacity(r + 1);
        for &(j, s) in &term.left_ops {
            order.push(Slot::Factor(tuple.len()));
            tuple.push(j);
            times.push(s);
        }
        order.push(Slot::Center);
        for &(j, s) in &term.right_ops {
            order.push(Slot::Factor(tuple.len()));
            tuple.push(j);
            times.push(s);
        }
        let max_label = tuple.iter().cloned().max().unwrap_or(0).max(self.n);
        let species: Vec<usize> = (0..=max_label).map(|j| model.species(j)).collect();
        let tpl = Template { mask: 0, sign: term.sign, order };
        let frame = NodeFrame::new(self, &species_needed(&species, self.n, &tuple), &times, self.t);
        let chans: Vec<usize> = tuple.iter().map(|&l| self.channel_of(l, &species)).collect();
        let res = self.provider.moment(&reservoir_ops(&tpl, &chans, &times, self.t, self.center))?;
        Ok(C64::new(tpl.sign as f64, 0.0) * self.particle_factor(&frame, &tpl, &tuple, &species) * res)
    }

    fn particle_factor(&self, frame: &NodeFrame, tpl: &Template, labels: &[usize], species: &[usize]) -> C64 {
        let mut value = ONE;
        // system block (observed particles and the centre)
        if let Some(sys) = &self.system {
            let d = sys.dim;
            let mut acc = identity_small(d);
            let mut tmp = vec![ZERO; d * d];
            for s in &tpl.order {
                let m = match *s {
                    Slot::Center => &frame.system_a,
                    Slot::Factor(i) if labels[i] < self.n => &frame.system_g[labels[i]][i],
                    Slot::Factor(_) => continue,
                };
                small_mul(&acc, m, d, &mut tmp);
                std::mem::swap(&mut acc, &mut tmp);
            }
            value *= small_trace(&sys.rho, &acc, d);
        }
        // fresh particles, grouped by label
        let mut done: u64 = 0;
        for (i0, &l) in labels.iter().enumerate() {
            if l < self.n || done >> i0 & 1 == 1 {
                continue;
            }
            let sp = &self.species[species[l]];
            let g = &frame.species_g[species[l]];
            let d = sp.dim;
            let mut acc = identity_small(d);
            let mut tmp = vec![ZERO; d * d];
            for s in &tpl.order {
                if let Slot::Factor(i) = *s {
                    if labels[i] == l {
                        small_mul(&acc, &g[i], d, &mut tmp);
                        std::mem::swap(&mut acc, &mut tmp);
                        done |= 1 << i;
                    }
                }
            }
            value *= small_trace(&sp.rho, &acc, d);
            if value == ZERO {
                break;
            }
        }
        value
    }

    /// Sum over templates and assignments at one node, accumulated by the
    /// system weight of each assignment into `out[weight]`. `times` are the
    /// factor times and `center_time` the time of the centre operator.
    pub fn accumulate_node(
        &self,
        templates: &[Template],
        batch: &AssignmentBatch,
        times: &[f64],
        center_time: f64,
        out: &mut [C64],
    ) -> Result<()> {
        let frame = NodeFrame::new(self, &batch.species_used, times, center_time);
        let mut res = vec![ZERO; batch.channel_seqs.len() * templates.len()];
        for (si, chans) in batch.channel_seqs.iter().enumerate() {
            for (ti, tpl) in templates.iter().enumerate() {
                res[si * templates.len() + ti] = self.provider.moment(&reservoir_ops(tpl, chans, times, center_time, self.center))?;
            }
        }
        for (a, (&seq, &slice)) in batch.assignments.iter().zip(batch.seq_ids.iter().zip(&batch.slices)) {
            let mut acc = ZERO;
            for (ti, tpl) in templates.iter().enumerate() {
                let rm = res[seq * templates.len() + ti];
                if rm == ZERO {
                    continue;
                }
                let pf = self.particle_factor(&frame, tpl, &a.labels, &a.species);
                if tpl.sign > 0 {
                    acc += pf * rm;
                } else {
                    acc -= pf * rm;
                }
            }
            out[slice] += acc * a.weight;
        }
        Ok(())
    }

    /// Pre-processed assignments sharing channel-sequence bookkeeping.
    pub fn batch(&self, assignments: Vec<Assignment>) -> AssignmentBatch {
        let mut channel_seqs: Vec<Vec<usize>> = Vec::new();
        let mut seq_ids = Vec::with_capacity(assignments.len());
        let mut slices = Vec::with_capacity(assignments.len());
        let mut species_used: Vec<usize> = Vec::new();
        for a in &assignments {
            let chans: Vec<usize> = a.labels.iter().map(|&l| self.channel_of(l, &a.species)).collect();
            let id = match channel_seqs.iter().position(|c| *c == chans) {
                Some(id) => id,
                None => {
                    channel_seqs.push(chans);
                    channel_seqs.len() - 1
                }
            };
            seq_ids.push(id);
            slices.push(a.system_weight(self.n));
            for &l in &a.labels {
                if l >= self.n && !species_used.contains(&a.species[l]) {
                    species_used.push(a.species[l]);
                }
            }
        }
        AssignmentBatch { assignments, channel_seqs, seq_ids, slices, species_used }
    }
}

fn species_needed(species: &[usize], n: usize, tuple: &[usize]) -> Vec<usize> {
    let mut used = Vec::new();
    for &l in tuple {
        if l >= n && !used.contains(&species[l]) {
            used.push(species[l]);
        }
    }
    used
}

fn identity_small(d: usize) -> Vec<C64> {
    let mut m = vec![ZERO; d * d];
    for i in 0..d {
        m[i * d + i] = ONE;
    }
    m
}

fn reservoir_ops(tpl: &Template, chans: &[usize], times: &[f64], center_time: f64, center: CenterOp) -> Vec<ResOp> {
    tpl.order
        .iter()
        .map(|s| match *s {
            Slot::Factor(i) => ResOp::Coupling { channel: chans[i], time: times[i] },
            Slot::Center => match center {
                CenterOp::Observable => ResOp::Observable { time: center_time },
                CenterOp::Coupling(channel) => ResOp::Coupling { channel, time: center_time },
            },
        })
        .collect()
}

/// Assignments prepared for repeated node evaluation.
#[derive(Clone, Debug)]
pub struct AssignmentBatch {
    pub assignments: Vec<Assignment>,
    channel_seqs: Vec<Vec<usize>>,
    seq_ids: Vec<usize>,
    slices: Vec<usize>,
    species_used: Vec<usize>,
}

impl AssignmentBatch {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Phase-dressed single-particle matrices at the times of one node.
struct NodeFrame {
    species_g: Vec<Vec<Vec<C64>>>,
    system_g: Vec<Vec<Vec<C64>>>,
    system_a: Vec<C64>,
}

impl NodeFrame {
    fn new(ctx: &TermContext, species_used: &[usize], times: &[f64], center_time: f64) -> Self {
        let species_g = ctx
            .species
            .iter()
            .enumerate()
            .map(|(s, sp)| {
                if species_used.contains(&s) {
                    times.iter().map(|&ti| dressed(&sp.g, &sp.energies, ti)).collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        let (system_g, system_a) = match &ctx.system {
            None => (Vec::new(), Vec::new()),
            Some(sys) => (
                sys.g.iter().map(|g| times.iter().map(|&ti| dressed(g, &sys.energies, ti)).collect()).collect(),
                if ctx.center == CenterOp::Observable {
                    dressed(&sys.a, &sys.energies, center_time)
                } else {
                    identity_small(sys.dim)
                },
            ),
        };
        Self { species_g, system_g, system_a }
    }
}

/// Factorized expectation `omega_N(term)` of a single commutator term.
pub fn factorized_expectation(
    term: &CommutatorTerm,
    model: &SystemModel,
    n_particles: usize,
    obs: &Observable,
    t: f64,
    provider: &dyn ReservoirMoments,
) -> Result<C64> {
    for &(j, _) in term.left_ops.iter().chain(&term.right_ops) {
        if j >= n_particles {
            return Err(Error::InvalidParameter(format!("term references particle {j} but N = {n_particles}")));
        }
    }
    TermContext::new(model, obs, t, provider)?.term_value(term, model)
}
