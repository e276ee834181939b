//! Open-boundary matrix product states with physical dimension two.
//!
//! Site `k` holds a tensor `A_k[l, s, r]` stored row-major, so the same
//! buffer reads as an `(l·2) × r` matrix (left grouping) or an `l × (2·r)`
//! matrix (right grouping). Site `k` is qubit `k` of the dense state.
//!
//! A state on `n_R + n_S` sites represents the mixed state
//! `ω = Tr_R |ψ⟩⟨ψ| / ⟨ψ|ψ⟩` on its last `n_S` sites. `Tr[Hω]` is a
//! two-layer network sandwiching each Pauli string; `Tr[ω²]` is a four-layer
//! network whose layers are, in slot order, bra 1, ket 1, bra 2, ket 2.
//! Reference sites connect (bra 1, ket 1) and (bra 2, ket 2); system sites
//! connect (bra 1, ket 2) and (bra 2, ket 1).

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{input, Error, Result};
use crate::hamiltonian::{PauliHamiltonian, PauliOp, DENSE_QUBIT_LIMIT};
use crate::linalg::{pauli_x, pauli_y, pauli_z, CMatrix, Mat2, Mat4, C64, ONE, ZERO};
use crate::objective::{breakdown_from_moments, optimal_dual, DualProblem, Moments, ObjectiveBreakdown};
use crate::optimizer::{normalize_gradient, Aborted, TraceRow, TrainingTrace};
use crate::sim::StateVector;

/// Singular values at or below this fraction of the largest are dropped by
/// the exact (non-truncating) factorizations.
const ZERO_SINGULAR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct SiteTensor {
    l: usize,
    r: usize,
    data: Vec<C64>,
}

impl SiteTensor {
    pub fn new(l: usize, r: usize, data: Vec<C64>) -> Result<Self> {
        if l == 0 || r == 0 || data.len() != l * 2 * r {
            return input(format!("site tensor {l}x2x{r} cannot hold {} entries", data.len()));
        }
        Ok(SiteTensor { l, r, data })
    }

    pub fn zeros(l: usize, r: usize) -> Self {
        SiteTensor { l, r, data: vec![ZERO; l * 2 * r] }
    }

    pub fn left_dim(&self) -> usize {
        self.l
    }

    pub fn right_dim(&self) -> usize {
        self.r
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, a: usize, s: usize, b: usize) -> C64 {
        self.data[(a * 2 + s) * self.r + b]
    }

    #[inline]
    fn at_mut(&mut self, a: usize, s: usize, b: usize) -> &mut C64 {
        &mut self.data[(a * 2 + s) * self.r + b]
    }

    /// `(l·2) × r` view.
    pub fn left_matrix(&self) -> CMatrix {
        CMatrix::from_row_slice(self.l * 2, self.r, &self.data)
    }

    /// `l × (2·r)` view.
    pub fn right_matrix(&self) -> CMatrix {
        CMatrix::from_row_slice(self.l, 2 * self.r, &self.data)
    }

    fn from_left_matrix(m: &CMatrix) -> Self {
        SiteTensor { l: m.nrows() / 2, r: m.ncols(), data: row_major(m) }
    }

    fn from_right_matrix(m: &CMatrix) -> Self {
        SiteTensor { l: m.nrows(), r: m.ncols() / 2, data: row_major(m) }
    }

    /// `Σ_t op[s, t] A[a, t, b]`.
    fn with_physical_op(&self, op: &Mat2) -> Self {
        let mut out = SiteTensor::zeros(self.l, self.r);
        for a in 0..self.l {
            for b in 0..self.r {
                for s in 0..2 {
                    *out.at_mut(a, s, b) = op[(s, 0)] * self.get(a, 0, b) + op[(s, 1)] * self.get(a, 1, b);
                }
            }
        }
        out
    }

    fn scale(&mut self, a: C64) {
        self.data.iter_mut().for_each(|z| *z *= a);
    }
}

fn row_major(m: &CMatrix) -> Vec<C64> {
    m.transpose().as_slice().to_vec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mps {
    sites: Vec<SiteTensor>,
}

/// Bond dimensions `min(χ, 2^k, 2^{n−k})` for `k = 0..=n`.
pub fn bond_profile(n: usize, chi_max: usize) -> Vec<usize> {
    let pow = |k: usize| 1usize.checked_shl(k as u32).filter(|&v| v != 0).unwrap_or(usize::MAX);
    (0..=n).map(|k| chi_max.min(pow(k)).min(pow(n - k))).collect()
}

/// Random state with i.i.d. standard normal real entries, brought to
/// right-canonical form and unit norm.
pub fn random_mps(n: usize, chi_max: usize, seed: u64) -> Result<Mps> {
    if n == 0 || chi_max == 0 {
        return input("random MPS needs at least one site and χ ≥ 1");
    }
    let dims = bond_profile(n, chi_max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = (0..n)
        .map(|k| {
            let (l, r) = (dims[k], dims[k + 1]);
            let data = (0..l * 2 * r).map(|_| C64::new(rng.sample(StandardNormal), 0.0)).collect();
            SiteTensor { l, r, data }
        })
        .collect();
    let mut mps = Mps { sites };
    mps.canonicalize(0);
    mps.normalize()?;
    Ok(mps)
}

impl Mps {
    pub fn new(sites: Vec<SiteTensor>) -> Result<Self> {
        if sites.is_empty() {
            return input("MPS needs at least one site");
        }
        if sites[0].l != 1 || sites[sites.len() - 1].r != 1 {
            return input("boundary bonds must have dimension 1");
        }
        for k in 1..sites.len() {
            if sites[k - 1].r != sites[k].l {
                return input(format!("bond {k} mismatch: {} vs {}", sites[k - 1].r, sites[k].l));
            }
        }
        Ok(Mps { sites })
    }

    /// `|x⟩` for the bit string `bits` (site 0 first).
    pub fn product_basis(bits: &[usize]) -> Result<Self> {
        let sites = bits
            .iter()
            .map(|&b| {
                let mut t = SiteTensor::zeros(1, 1);
                *t.at_mut(0, b & 1, 0) = ONE;
                t
            })
            .collect();
        Self::new(sites)
    }

    /// Exact MPS of a dense state by successive SVDs.
    pub fn from_dense(state: &StateVector) -> Result<Self> {
        let n = state.n_qubits();
        let mut rest = CMatrix::from_row_slice(1, 1 << n, state.amplitudes());
        let mut sites = Vec::with_capacity(n);
        for k in 0..n {
            let l = rest.nrows();
            let cols = rest.ncols() / 2;
            // Rows (a, s), columns the remaining sites.
            let m = CMatrix::from_row_slice(l * 2, cols, &row_major(&rest));
            if k == n - 1 {
                sites.push(SiteTensor::from_left_matrix(&m));
                break;
            }
            let svd = m.svd(true, true);
            let (u, v_t, s) = (svd.u.expect("u"), svd.v_t.expect("v_t"), svd.singular_values);
            let smax = s.iter().copied().fold(0.0, f64::max);
            let keep = s.iter().filter(|&&x| x > ZERO_SINGULAR * smax).count().max(1);
            sites.push(SiteTensor::from_left_matrix(&u.columns(0, keep).into_owned()));
            let sv = CMatrix::from_fn(keep, cols, |i, j| v_t[(i, j)] * s[i]);
            rest = sv;
        }
        Self::new(sites)
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[SiteTensor] {
        &self.sites
    }

    /// Bond dimensions including the two trivial boundary bonds.
    pub fn bond_dims(&self) -> Vec<usize> {
        std::iter::once(1).chain(self.sites.iter().map(|t| t.r)).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn n_params(&self) -> usize {
        self.sites.iter().map(|t| t.data.len()).sum()
    }

    /// Left-isometric sites before `center`, right-isometric after it.
    pub fn canonicalize(&mut self, center: usize) {
        let n = self.sites.len();
        let center = center.min(n - 1);
        for k in 0..center {
            let qr = self.sites[k].left_matrix().qr();
            let (q, r) = (qr.q(), qr.r());
            self.sites[k] = SiteTensor::from_left_matrix(&q);
            let next = &r * self.sites[k + 1].right_matrix();
            self.sites[k + 1] = SiteTensor::from_right_matrix(&next);
        }
        for k in (center + 1..n).rev() {
            let qr = self.sites[k].right_matrix().adjoint().qr();
            let (q, r) = (qr.q(), qr.r());
            self.sites[k] = SiteTensor::from_right_matrix(&q.adjoint());
            let prev = self.sites[k - 1].left_matrix() * r.adjoint();
            self.sites[k - 1] = SiteTensor::from_left_matrix(&prev);
        }
    }

    pub fn canonicalized(&self, center: usize) -> Self {
        let mut m = self.clone();
        m.canonicalize(center);
        m
    }

    /// `⟨ψ|ψ⟩` by transfer matrices.
    pub fn norm_sqr(&self) -> f64 {
        self.inner(self).re
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Mps) -> C64 {
        let mut env = CMatrix::from_element(1, 1, ONE);
        for (a, b) in self.sites.iter().zip(&other.sites) {
            let mut next = CMatrix::from_element(a.r, b.r, ZERO);
            for x in 0..a.l {
                for y in 0..b.l {
                    let e = env[(x, y)];
                    if e == ZERO {
                        continue;
                    }
                    for s in 0..2 {
                        for xp in 0..a.r {
                            let ca = a.get(x, s, xp).conj() * e;
                            for yp in 0..b.r {
                                next[(xp, yp)] += ca * b.get(y, s, yp);
                            }
                        }
                    }
                }
            }
            env = next;
        }
        env[(0, 0)]
    }

    /// Rescales to unit norm; the orthogonality centre is taken as site 0
    /// when the state is right-canonical and the scale is spread otherwise.
    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm_sqr().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numeric("cannot normalize a zero or non-finite MPS".into()));
        }
        self.sites[0].scale(C64::from(1.0 / norm));
        Ok(())
    }

    pub fn to_dense(&self) -> Result<StateVector> {
        let n = self.sites.len();
        if n > DENSE_QUBIT_LIMIT {
            return Err(Error::Resource(format!("{n} sites exceed the dense simulation cap")));
        }
        // Rows: prefix basis index; columns: open bond.
        let mut acc = CMatrix::from_element(1, 1, ONE);
        for t in &self.sites {
            let mut next = CMatrix::from_element(acc.nrows() * 2, t.r, ZERO);
            for p in 0..acc.nrows() {
                for a in 0..t.l {
                    let v = acc[(p, a)];
                    if v == ZERO {
                        continue;
                    }
                    for s in 0..2 {
                        for b in 0..t.r {
                            next[(p * 2 + s, b)] += v * t.get(a, s, b);
                        }
                    }
                }
            }
            acc = next;
        }
        StateVector::normalized(n, acc.column(0).iter().copied().collect())
    }

    /// Applies `u` to sites `(k, k+1)` without truncation; the new bond keeps
    /// every nonzero singular value.
    pub fn apply_two_site(&mut self, k: usize, u: &Mat4) -> Result<()> {
        if k + 1 >= self.sites.len() {
            return input(format!("no bond at site {k}"));
        }
        let (a, b) = (&self.sites[k], &self.sites[k + 1]);
        let (l, r) = (a.l, b.r);
        // theta[(x, s), (t, y)] = Σ_m A[x,s,m] B[m,t,y], then gate on (s, t).
        let theta = a.left_matrix() * b.right_matrix();
        let mut gated = CMatrix::from_element(l * 2, 2 * r, ZERO);
        for x in 0..l {
            for y in 0..r {
                for so in 0..2 {
                    for to in 0..2 {
                        let mut acc = ZERO;
                        for si in 0..2 {
                            for ti in 0..2 {
                                acc += u[(so * 2 + to, si * 2 + ti)] * theta[(x * 2 + si, ti * r + y)];
                            }
                        }
                        gated[(x * 2 + so, to * r + y)] = acc;
                    }
                }
            }
        }
        let svd = gated.svd(true, true);
        let (uu, v_t, s) = (svd.u.expect("u"), svd.v_t.expect("v_t"), svd.singular_values);
        let smax = s.iter().copied().fold(0.0, f64::max);
        let keep = s.iter().filter(|&&x| x > ZERO_SINGULAR * smax).count().max(1);
        self.sites[k] = SiteTensor::from_left_matrix(&uu.columns(0, keep).into_owned());
        let sv = CMatrix::from_fn(keep, 2 * r, |i, j| v_t[(i, j)] * s[i]);
        self.sites[k + 1] = SiteTensor::from_right_matrix(&sv);
        Ok(())
    }

    /// SVD truncation to bond dimension `chi`.
    pub fn truncate(&self, chi: usize) -> Result<Truncation> {
        if chi == 0 {
            return input("truncation bond dimension must be at least 1");
        }
        let mut m = self.canonicalized(0);
        m.normalize()?;
        let n = m.sites.len();
        let mut fidelity = 1.0;
        for k in 0..n - 1 {
            let svd = m.sites[k].left_matrix().svd(true, true);
            let (u, v_t, s) = (svd.u.expect("u"), svd.v_t.expect("v_t"), svd.singular_values);
            let total: f64 = s.iter().map(|x| x * x).sum();
            let keep = chi.min(s.iter().filter(|&&x| x > 0.0).count().max(1));
            let kept: f64 = s.iter().take(keep).map(|x| x * x).sum();
            fidelity *= kept / total;
            let scale = 1.0 / kept.sqrt();
            m.sites[k] = SiteTensor::from_left_matrix(&u.columns(0, keep).into_owned());
            let sv = CMatrix::from_fn(keep, v_t.ncols(), |i, j| v_t[(i, j)] * (s[i] * scale));
            let next = sv * m.sites[k + 1].right_matrix();
            m.sites[k + 1] = SiteTensor::from_right_matrix(&next);
        }
        m.normalize()?;
        Ok(Truncation { mps: m, fidelity })
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Resource(format!("writing MPS checkpoint: {e}"));
        out.write_all(&(self.sites.len() as u64).to_le_bytes()).map_err(io)?;
        for d in self.bond_dims() {
            out.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        for t in &self.sites {
            for z in &t.data {
                out.write_all(&z.re.to_le_bytes()).map_err(io)?;
                out.write_all(&z.im.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut src: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |src: &mut R| -> Result<[u8; 8]> {
            src.read_exact(&mut word).map_err(|e| Error::Input(format!("truncated MPS checkpoint: {e}")))?;
            Ok(word)
        };
        let n = u64::from_le_bytes(next(&mut src)?) as usize;
        if n == 0 || n > 1 << 20 {
            return input(format!("implausible site count {n} in checkpoint"));
        }
        let dims = (0..=n).map(|_| Ok(u64::from_le_bytes(next(&mut src)?) as usize)).collect::<Result<Vec<_>>>()?;
        if dims.iter().any(|&d| d == 0 || d > 1 << 16) {
            return input("implausible bond dimension in checkpoint");
        }
        let mut sites = Vec::with_capacity(n);
        for k in 0..n {
            let len = dims[k] * 2 * dims[k + 1];
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let re = f64::from_le_bytes(next(&mut src)?);
                let im = f64::from_le_bytes(next(&mut src)?);
                data.push(C64::new(re, im));
            }
            sites.push(SiteTensor::new(dims[k], dims[k + 1], data)?);
        }
        let mut rest = Vec::new();
        src.read_to_end(&mut rest).map_err(|e| Error::Input(format!("reading MPS checkpoint: {e}")))?;
        if !rest.is_empty() {
            return input("trailing bytes after MPS checkpoint");
        }
        Self::new(sites)
    }
}

#[derive(Debug, Clone)]
pub struct Truncation {
    pub mps: Mps,
    /// `|⟨ψ|ψ_χ⟩|²` for the normalized input and output: the product over
    /// bonds of the retained squared-singular-value weight.
    pub fidelity: f64,
}

/// `|⟨reference|ψ⟩|²` for normalized `ψ`.
pub fn mps_fidelity(mps: &Mps, reference: &StateVector) -> Result<f64> {
    if reference.n_qubits() != mps.n_sites() {
        return input("MPS and reference state sizes differ");
    }
    Ok(mps.to_dense()?.fidelity(reference))
}

/// Reference/system split: the first `n_r` sites are traced out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub n_r: usize,
    pub n_s: usize,
}

impl Partition {
    pub fn new(n_r: usize, n_s: usize) -> Result<Self> {
        if n_s == 0 || n_s < n_r {
            return input(format!("system size {n_s} must be positive and at least the reference size {n_r}"));
        }
        Ok(Partition { n_r, n_s })
    }

    pub fn n_sites(&self) -> usize {
        self.n_r + self.n_s
    }

    fn check(&self, mps: &Mps) -> Result<()> {
        if mps.n_sites() != self.n_sites() {
            return input(format!("MPS has {} sites, partition expects {}", mps.n_sites(), self.n_sites()));
        }
        Ok(())
    }

    fn is_reference(&self, k: usize) -> bool {
        k < self.n_r
    }
}

/// Four-slot environment with an optional open physical index.
#[derive(Debug, Clone)]
struct Env {
    dims: [usize; 4],
    phys: usize,
    data: Vec<C64>,
}

impl Env {
    fn unit() -> Self {
        Env { dims: [1; 4], phys: 1, data: vec![ONE] }
    }

    /// `new[.., o, ..; q] = Σ_{i,p} old[.., i, ..; p] · m[(i, p), (o, q)]`.
    fn apply(&self, slot: usize, m: &CMatrix, out_dim: usize, out_phys: usize) -> Env {
        let d = self.dims;
        let p = self.phys;
        let outer: usize = d[..slot].iter().product();
        let inner: usize = d[slot + 1..].iter().product();
        let din = d[slot];
        debug_assert_eq!(m.nrows(), din * p);
        debug_assert_eq!(m.ncols(), out_dim * out_phys);
        let mut nd = d;
        nd[slot] = out_dim;
        let mut out = vec![ZERO; outer * out_dim * inner * out_phys];
        let width = out_dim * out_phys;
        for o in 0..outer {
            for j in 0..inner {
                for i in 0..din {
                    for ip in 0..p {
                        let v = self.data[((o * din + i) * inner + j) * p + ip];
                        if v == ZERO {
                            continue;
                        }
                        let row = i * p + ip;
                        for c in 0..width {
                            let (oi, oq) = (c / out_phys, c % out_phys);
                            out[((o * out_dim + oi) * inner + j) * out_phys + oq] += v * m[(row, c)];
                        }
                    }
                }
            }
        }
        Env { dims: nd, phys: out_phys, data: out }
    }

    /// Advances a ket slot across a site from the left, opening `s`.
    fn ket_left(&self, slot: usize, t: &SiteTensor) -> Env {
        let m = CMatrix::from_fn(t.l, t.r * 2, |y, c| t.get(y, c % 2, c / 2));
        self.apply(slot, &m, t.r, 2)
    }

    /// Advances a bra slot across a site from the left, closing `s`.
    fn bra_left(&self, slot: usize, t: &SiteTensor) -> Env {
        let m = CMatrix::from_fn(t.l * 2, t.r, |row, b| t.get(row / 2, row % 2, b).conj());
        self.apply(slot, &m, t.r, 1)
    }

    fn ket_right(&self, slot: usize, t: &SiteTensor) -> Env {
        let m = CMatrix::from_fn(t.r, t.l * 2, |y, c| t.get(c / 2, c % 2, y));
        self.apply(slot, &m, t.l, 2)
    }

    fn bra_right(&self, slot: usize, t: &SiteTensor) -> Env {
        let m = CMatrix::from_fn(t.r * 2, t.l, |row, a| t.get(a, row % 2, row / 2).conj());
        self.apply(slot, &m, t.l, 1)
    }

    /// `G[a, s, a'] = Σ_{b,c,d} self[a, b, c, d; s] · right[a', b, c, d]`.
    fn open_bra(&self, right: &Env) -> SiteTensor {
        let (l, r) = (self.dims[0], right.dims[0]);
        let rest: usize = self.dims[1..].iter().product();
        debug_assert_eq!(self.phys, 2);
        debug_assert_eq!(self.dims[1..], right.dims[1..]);
        let mut g = SiteTensor::zeros(l, r);
        for a in 0..l {
            for j in 0..rest {
                for s in 0..2 {
                    let v = self.data[(a * rest + j) * 2 + s];
                    if v == ZERO {
                        continue;
                    }
                    for ap in 0..r {
                        *g.at_mut(a, s, ap) += v * right.data[ap * rest + j];
                    }
                }
            }
        }
        g
    }
}

/// `(bra slot, ket slot)` pairs joined by each site's physical index.
fn pairs(part: &Partition, k: usize) -> [(usize, usize); 2] {
    if part.is_reference(k) {
        [(0, 1), (2, 3)]
    } else {
        [(0, 3), (2, 1)]
    }
}

/// Left environments `L_0..=L_n` and right environments `R_0..=R_n`.
struct Network {
    left: Vec<Env>,
    right: Vec<Env>,
}

impl Network {
    fn build(n: usize, step_left: impl Fn(&Env, usize) -> Env, step_right: impl Fn(&Env, usize) -> Env) -> Self {
        let mut left = vec![Env::unit()];
        for k in 0..n {
            let next = step_left(&left[k], k);
            left.push(next);
        }
        let mut right = vec![Env::unit(); n + 1];
        for k in (0..n).rev() {
            right[k] = step_right(&right[k + 1], k);
        }
        Network { left, right }
    }

    fn value(&self) -> C64 {
        self.left.last().expect("nonempty").data[0]
    }
}

fn pauli_matrix(op: PauliOp) -> Mat2 {
    match op {
        PauliOp::I => Mat2::identity(),
        PauliOp::X => pauli_x(),
        PauliOp::Y => pauli_y(),
        PauliOp::Z => pauli_z(),
    }
}

/// Two-layer sandwich `⟨ψ|O|ψ⟩` with `O = ⊗_k ops[k]` and its gradient with
/// respect to each conjugated site tensor.
fn sandwich(mps: &Mps, ops: &[Option<Mat2>], gradient: bool) -> (C64, Vec<SiteTensor>) {
    let n = mps.n_sites();
    let kets: Vec<SiteTensor> = mps
        .sites
        .iter()
        .zip(ops)
        .map(|(t, op)| op.as_ref().map_or_else(|| t.clone(), |o| t.with_physical_op(o)))
        .collect();
    let net = Network::build(
        n,
        |e, k| e.ket_left(1, &kets[k]).bra_left(0, &mps.sites[k]),
        |e, k| e.ket_right(1, &kets[k]).bra_right(0, &mps.sites[k]),
    );
    let grads = if gradient {
        (0..n).map(|k| net.left[k].ket_left(1, &kets[k]).open_bra(&net.right[k + 1])).collect()
    } else {
        Vec::new()
    };
    (net.value(), grads)
}

/// Unnormalized `Σ_x α_x ⟨ψ|I_R ⊗ σ_x|ψ⟩` and its gradient.
fn raw_expectation(h: &PauliHamiltonian, mps: &Mps, part: &Partition, gradient: bool) -> (f64, Vec<SiteTensor>) {
    let n = mps.n_sites();
    let mut value = 0.0;
    let mut grads: Vec<SiteTensor> = if gradient { mps.sites.iter().map(|t| SiteTensor::zeros(t.l, t.r)).collect() } else { Vec::new() };
    for (s, a) in h.terms() {
        let mut ops = vec![None; n];
        for (q, &op) in s.ops().iter().enumerate() {
            if op != PauliOp::I {
                ops[part.n_r + q] = Some(pauli_matrix(op));
            }
        }
        let (v, g) = sandwich(mps, &ops, gradient);
        value += a * v.re;
        for (acc, gk) in grads.iter_mut().zip(g) {
            for (x, y) in acc.data.iter_mut().zip(gk.data) {
                *x += y * *a;
            }
        }
    }
    (value, grads)
}

/// Unnormalized `Tr[(Tr_R|ψ⟩⟨ψ|)²]` and its gradient with respect to the
/// conjugated site tensors (both bra layers contribute equally).
fn raw_purity(mps: &Mps, part: &Partition, gradient: bool) -> (f64, Vec<SiteTensor>) {
    let n = mps.n_sites();
    let a = &mps.sites;
    let net = Network::build(
        n,
        |e, k| {
            let [(b0, k0), (b1, k1)] = pairs(part, k);
            e.ket_left(k0, &a[k]).bra_left(b0, &a[k]).ket_left(k1, &a[k]).bra_left(b1, &a[k])
        },
        |e, k| {
            let [(b0, k0), (b1, k1)] = pairs(part, k);
            e.ket_right(k0, &a[k]).bra_right(b0, &a[k]).ket_right(k1, &a[k]).bra_right(b1, &a[k])
        },
    );
    let grads = if gradient {
        (0..n)
            .map(|k| {
                let [(_, partner), (ob, ok)] = pairs(part, k);
                let mut g = net.left[k].ket_left(ok, &a[k]).bra_left(ob, &a[k]).ket_left(partner, &a[k]).open_bra(&net.right[k + 1]);
                g.scale(C64::from(2.0));
                g
            })
            .collect()
    } else {
        Vec::new()
    };
    (net.value().re, grads)
}

/// `Tr[Hω]` for `ω = Tr_R|ψ⟩⟨ψ| / ⟨ψ|ψ⟩`, `H` acting on the system sites.
pub fn mps_expectation(h: &PauliHamiltonian, mps: &Mps, part: &Partition) -> Result<f64> {
    part.check(mps)?;
    if h.n_qubits() != part.n_s {
        return input(format!("Hamiltonian acts on {} qubits, system has {}", h.n_qubits(), part.n_s));
    }
    Ok(raw_expectation(h, mps, part, false).0 / mps.norm_sqr())
}

/// `Tr[ω²]` for `ω = Tr_R|ψ⟩⟨ψ| / ⟨ψ|ψ⟩`.
pub fn mps_purity(mps: &Mps, part: &Partition) -> Result<f64> {
    part.check(mps)?;
    let nrm = mps.norm_sqr();
    Ok(raw_purity(mps, part, false).0 / (nrm * nrm))
}

/// `⟨ψ|ψ⟩`, `Tr[Hω]`, `Tr[ω²]` and the gradients of their unnormalized
/// numerators with respect to each conjugated site tensor.
#[derive(Debug, Clone)]
struct RawMoments {
    norm: f64,
    moments: Moments,
    d_norm: Vec<SiteTensor>,
    d_e_raw: Vec<SiteTensor>,
    d_p_raw: Vec<SiteTensor>,
}

impl RawMoments {
    fn new(problem: &DualProblem, mps: &Mps, part: &Partition) -> Result<Self> {
        part.check(mps)?;
        if problem.n_qubits() != part.n_s {
            return input("Hamiltonian does not match the system register");
        }
        let (norm, d_norm) = sandwich(mps, &vec![None; mps.n_sites()], true);
        let norm = norm.re;
        let (e_raw, d_e_raw) = raw_expectation(problem.hamiltonian(), mps, part, true);
        let (p_raw, d_p_raw) = raw_purity(mps, part, true);
        let moments = Moments { expectation: e_raw / norm, purity: p_raw / (norm * norm) };
        Ok(RawMoments { norm, moments, d_norm, d_e_raw, d_p_raw })
    }

    fn gradient(&self, problem: &DualProblem, eta: f64, nu: f64, c: f64) -> Result<MpsGradient> {
        let breakdown = breakdown_from_moments(problem, eta, nu, c, self.moments)?;
        let (n, e, p) = (self.norm, self.moments.expectation, self.moments.purity);
        let d_sites = self
            .d_norm
            .iter()
            .zip(&self.d_e_raw)
            .zip(&self.d_p_raw)
            .map(|((dn, de), dp)| {
                let mut g = SiteTensor::zeros(dn.l, dn.r);
                for (i, out) in g.data.iter_mut().enumerate() {
                    let de = (de.data[i] - dn.data[i] * e) / n;
                    let dp = (dp.data[i] - dn.data[i] * (2.0 * p * n)) / (n * n);
                    *out = (dp * (nu * nu) - de * (2.0 * nu)) * (-c * 2.0);
                }
                g
            })
            .collect();
        let d_eta = 1.0 - c * (2.0 * eta * problem.dim() - 2.0 * problem.trace() + 2.0 * nu);
        let d_nu = -c * (2.0 * nu * p - 2.0 * e + 2.0 * eta);
        Ok(MpsGradient { breakdown, moments: self.moments, d_eta, d_nu, d_sites })
    }
}

/// Dual objective at `(η, ν, ψ)` with gradients.
#[derive(Debug, Clone)]
pub struct MpsGradient {
    pub breakdown: ObjectiveBreakdown,
    pub moments: Moments,
    pub d_eta: f64,
    pub d_nu: f64,
    /// `2·∂f/∂A_k*`; its real and imaginary parts are the derivatives with
    /// respect to the real and imaginary parts of `A_k`.
    pub d_sites: Vec<SiteTensor>,
}

pub fn mps_objective_gradient(problem: &DualProblem, mps: &Mps, part: &Partition, eta: f64, nu: f64, c: f64) -> Result<MpsGradient> {
    RawMoments::new(problem, mps, part)?.gradient(problem, eta, nu, c)
}

/// Step rule for the tensors (and for `η, ν` under [`DualUpdate::Gradient`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainOptimizer {
    /// `x += lr · g / max(1, |g|)`.
    Normalized,
    /// Adam with moment decays `0.9` and `0.999`.
    Adam,
}

/// How `η` and `ν` move between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualUpdate {
    /// Jointly with the tensors, same step rule and learning rate.
    Gradient,
    /// Set to the maximizer of `f` for the current state whenever that
    /// maximizer has `ν > 0`; a gradient step otherwise.
    Optimal,
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Ascent step for gradient `g`.
    fn step(&mut self, g: &[f64], lr: f64) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        g.iter()
            .enumerate()
            .map(|(i, &gi)| {
                self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * gi;
                self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * gi * gi;
                lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub chi_max: usize,
    pub c: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: PretrainOptimizer,
    pub dual_update: DualUpdate,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn new(chi_max: usize, iterations: usize, seed: u64) -> Self {
        PretrainConfig {
            chi_max,
            c: 30.0,
            iterations,
            learning_rate: 1e-2,
            optimizer: PretrainOptimizer::Adam,
            dual_update: DualUpdate::Optimal,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub mps: Mps,
    pub eta: f64,
    pub nu: f64,
    pub trace: TrainingTrace,
}

/// Dual variables at which `H − ηI` is positive semidefinite and
/// `ν = Tr[H − ηI]`: `η = −Σ|α_x|`.
pub fn feasible_dual_start(problem: &DualProblem) -> (f64, f64) {
    let eta = -problem.hamiltonian().l1_norm();
    (eta, problem.trace() - problem.dim() * eta)
}

/// Gradient ascent on the dual objective over the MPS tensors, `η` and `ν`
/// at fixed penalty, from a random MPS and [`feasible_dual_start`].
pub fn pretrain_mps(problem: &DualProblem, part: Partition, cfg: &PretrainConfig) -> std::result::Result<Pretrained, Aborted> {
    let trace = TrainingTrace::default();
    let mps = random_mps(part.n_sites(), cfg.chi_max, cfg.seed).map_err(|error| Aborted { trace, error })?;
    let (eta, nu) = feasible_dual_start(problem);
    pretrain_from(problem, part, mps, eta, nu, cfg)
}

/// [`pretrain_mps`] from a given state and dual variables. Every step is
/// followed by re-canonicalization, renormalization and clipping `ν ≥ 0`.
pub fn pretrain_from(
    problem: &DualProblem,
    part: Partition,
    mut mps: Mps,
    mut eta: f64,
    mut nu: f64,
    cfg: &PretrainConfig,
) -> std::result::Result<Pretrained, Aborted> {
    let mut trace = TrainingTrace::default();
    let fail = |trace: &TrainingTrace, error: Error| Aborted { trace: trace.clone(), error };
    if !(cfg.c > 0.0) || !(cfg.learning_rate > 0.0) || !eta.is_finite() || !(nu >= 0.0) {
        return Err(fail(&trace, Error::Input("penalty and learning rate must be positive, η finite and ν ≥ 0".into())));
    }
    let mut adam = (cfg.optimizer == PretrainOptimizer::Adam).then(|| Adam::new(2 + 2 * mps.n_params()));
    for t in 0..=cfg.iterations {
        let raw = RawMoments::new(problem, &mps, &part).map_err(|e| fail(&trace, e))?;
        let mut joint = true;
        if cfg.dual_update == DualUpdate::Optimal && t > 0 {
            if let Some((e, v)) = optimal_dual(problem, cfg.c, raw.moments) {
                (eta, nu, joint) = (e, v, false);
            }
        }
        let g = raw.gradient(problem, eta, nu, cfg.c).map_err(|e| fail(&trace, e))?;
        if !g.breakdown.f.is_finite() {
            return Err(fail(&trace, Error::Numeric(format!("non-finite pretraining objective at iteration {t}"))));
        }
        trace.rows.push(TraceRow {
            iteration: t,
            eta,
            nu,
            c: cfg.c,
            penalty: g.breakdown.penalty,
            f: g.breakdown.f,
            beta_omega: cfg.learning_rate,
            beta_eta_nu: cfg.learning_rate,
            seed: cfg.seed,
        });
        if t == cfg.iterations {
            break;
        }
        let (d_eta, d_nu) = if joint { (g.d_eta, g.d_nu) } else { (0.0, 0.0) };
        let mut flat = vec![d_eta, d_nu];
        for site in &g.d_sites {
            for z in &site.data {
                flat.push(z.re);
                flat.push(z.im);
            }
        }
        let step = match &mut adam {
            Some(state) => state.step(&flat, cfg.learning_rate),
            None => normalize_gradient(&flat).into_iter().map(|x| x * cfg.learning_rate).collect(),
        };
        eta += step[0];
        nu = (nu + step[1]).max(0.0);
        let mut i = 2;
        for site in mps.sites.iter_mut() {
            for z in site.data.iter_mut() {
                *z += C64::new(step[i], step[i + 1]);
                i += 2;
            }
        }
        mps.canonicalize(0);
        mps.normalize().map_err(|e| fail(&trace, e))?;
    }
    Ok(Pretrained { mps, eta, nu, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::PauliString;
    use crate::sim::exact_expectation;
    use proptest::prelude::*;

    fn max_dev_from_identity(m: &CMatrix) -> f64 {
        let d = m.nrows();
        (m - CMatrix::identity(d, d)).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn random_complex_mps(n: usize, chi: usize, seed: u64) -> Mps {
        let dims = bond_profile(n, chi);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sites = (0..n)
            .map(|k| {
                let len = dims[k] * 2 * dims[k + 1];
                let data = (0..len).map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
                SiteTensor::new(dims[k], dims[k + 1], data).unwrap()
            })
            .collect();
        let mut m = Mps::new(sites).unwrap();
        m.normalize().unwrap();
        m
    }

    fn bell() -> Mps {
        let r = C64::from(0.5f64.sqrt());
        Mps::from_dense(&StateVector::from_amplitudes(2, vec![r, ZERO, ZERO, r]).unwrap()).unwrap()
    }

    fn dense_moments(h: &PauliHamiltonian, mps: &Mps, part: &Partition) -> (f64, f64) {
        let keep: Vec<usize> = (part.n_r..part.n_sites()).collect();
        let rho = mps.to_dense().unwrap().partial_trace(&keep).unwrap();
        (exact_expectation(h, &rho).unwrap(), rho.exact_purity())
    }

    #[test]
    fn random_mps_profiles() {
        let one = random_mps(1, 4, 0).unwrap();
        assert_eq!(one.bond_dims(), vec![1, 1]);
        assert!((one.norm_sqr() - 1.0).abs() < 1e-12);
        let six = random_mps(6, 8, 1).unwrap();
        assert_eq!(six.bond_dims(), vec![1, 2, 4, 8, 4, 2, 1]);
        assert!((six.norm_sqr() - 1.0).abs() < 1e-12);
        assert_eq!(random_mps(6, 3, 1).unwrap().bond_dims(), vec![1, 2, 3, 3, 3, 2, 1]);
        assert!(six.n_params() <= 2 * 6 * 64);
        assert!(six.sites().iter().all(|t| t.data().iter().all(|z| z.im == 0.0)));
    }

    #[test]
    fn canonical_forms_keep_the_state() {
        let m = random_complex_mps(4, 4, 3);
        let dense = m.to_dense().unwrap();
        for center in 0..4 {
            let c = m.canonicalized(center);
            assert!((c.to_dense().unwrap().fidelity(&dense) - 1.0).abs() < 1e-12);
            assert!((c.norm_sqr() - m.norm_sqr()).abs() < 1e-12);
            for k in 0..center {
                let a = c.sites[k].left_matrix();
                assert!(max_dev_from_identity(&(a.adjoint() * &a)) < 1e-12);
            }
            for k in center + 1..4 {
                let b = c.sites[k].right_matrix();
                assert!(max_dev_from_identity(&(&b * b.adjoint())) < 1e-12);
            }
        }
        let c = m.canonicalized(2);
        assert!((c.canonicalized(2).to_dense().unwrap().fidelity(&dense) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = StateVector::random(5, &mut rng);
        let m = Mps::from_dense(&s).unwrap();
        assert_eq!(m.bond_dims(), vec![1, 2, 4, 4, 2, 1]);
        assert!((m.to_dense().unwrap().fidelity(&s) - 1.0).abs() < 1e-12);
        let basis = Mps::product_basis(&[1, 0, 1]).unwrap();
        assert_eq!(basis.to_dense().unwrap(), StateVector::basis(3, 5));
    }

    #[test]
    fn truncation_examples() {
        let m = random_complex_mps(4, 4, 5);
        let same = m.truncate(4).unwrap();
        assert!((same.fidelity - 1.0).abs() < 1e-12);
        assert!((same.mps.to_dense().unwrap().fidelity(&m.to_dense().unwrap()) - 1.0).abs() < 1e-12);
        let prod = Mps::product_basis(&[0, 1, 1]).unwrap().truncate(1).unwrap();
        assert!((prod.fidelity - 1.0).abs() < 1e-14);
        let t = m.truncate(2).unwrap();
        assert!(t.mps.max_bond() <= 2);
        let overlap = t.mps.to_dense().unwrap().fidelity(&m.to_dense().unwrap());
        assert!((overlap - t.fidelity).abs() < 1e-12, "{overlap} vs {}", t.fidelity);
        assert!((t.mps.norm_sqr() - 1.0).abs() < 1e-12);
        assert!(m.truncate(0).is_err());
    }

    #[test]
    fn single_cut_truncation_matches_dense_best_rank() {
        // Two sides of one cut: the MPS truncation equals Eckart-Young.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = StateVector::random(4, &mut rng);
        let mat = CMatrix::from_row_slice(4, 4, s.amplitudes());
        let sv = mat.svd(false, false).singular_values;
        let best: f64 = sv.iter().take(2).map(|x| x * x).sum();
        let mps = Mps::from_dense(&s).unwrap();
        // Bonds (2, 4, 2): only the middle bond exceeds 2.
        let t = mps.truncate(2).unwrap();
        assert!((t.fidelity - best).abs() < 1e-12);
    }

    #[test]
    fn simple_mixed_state_values() {
        let part = Partition::new(1, 1).unwrap();
        let z = PauliHamiltonian::new(1, [("Z".parse::<PauliString>().unwrap(), 1.0)]).unwrap();
        let prod = Mps::product_basis(&[0, 0]).unwrap();
        assert!((mps_expectation(&z, &prod, &part).unwrap() - 1.0).abs() < 1e-15);
        assert!((mps_purity(&prod, &part).unwrap() - 1.0).abs() < 1e-15);
        assert!(mps_expectation(&z, &bell(), &part).unwrap().abs() < 1e-15);
        assert!((mps_purity(&bell(), &part).unwrap() - 0.5).abs() < 1e-15);
        let tfi = PauliHamiltonian::tfi_uniform(2).unwrap();
        assert!(mps_expectation(&tfi, &prod, &part).is_err());
        assert!(Partition::new(2, 1).is_err());
    }

    #[test]
    fn maximally_entangled_system_gives_zero_energy() {
        // Two Bell pairs between reference site k and system site k + 2.
        let r = 0.5;
        let mut amps = vec![ZERO; 16];
        for a in 0..2 {
            for b in 0..2 {
                amps[(a << 3) | (b << 2) | (a << 1) | b] = C64::from(r);
            }
        }
        let m = Mps::from_dense(&StateVector::from_amplitudes(4, amps).unwrap()).unwrap();
        let part = Partition::new(2, 2).unwrap();
        let tfi = PauliHamiltonian::tfi_uniform(2).unwrap();
        assert!(mps_expectation(&tfi, &m, &part).unwrap().abs() < 1e-14);
        assert!((mps_purity(&m, &part).unwrap() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn fidelity_with_dense_states() {
        let m = random_complex_mps(3, 2, 7);
        assert!((mps_fidelity(&m, &m.to_dense().unwrap()).unwrap() - 1.0).abs() < 1e-12);
        let b = Mps::product_basis(&[0, 1, 0]).unwrap();
        assert_eq!(mps_fidelity(&b, &StateVector::basis(3, 3)).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = StateVector::random(3, &mut rng);
        let want = m.to_dense().unwrap().inner(&s).norm_sqr();
        assert!((mps_fidelity(&m, &s).unwrap() - want).abs() < 1e-12);
        assert!(mps_fidelity(&m, &StateVector::zero(2)).is_err());
    }

    #[test]
    fn two_site_gates_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_complex_mps(4, 2, 10);
        let u = crate::kak::random_unitary4(&mut rng);
        let mut g = m.clone();
        g.apply_two_site(1, &u).unwrap();
        let mut want = m.to_dense().unwrap();
        want.apply_2q(1, 2, &u);
        assert!((g.to_dense().unwrap().fidelity(&want) - 1.0).abs() < 1e-12);
        assert!((g.norm_sqr() - m.norm_sqr()).abs() < 1e-12);
        assert!(g.apply_two_site(3, &u).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = random_complex_mps(5, 4, 11);
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let entries: usize = m.n_params();
        assert_eq!(buf.len(), 8 * (1 + 6) + 16 * entries);
        assert_eq!(u64::from_le_bytes(buf[0..8].try_into().unwrap()), 5);
        assert_eq!(Mps::read_checkpoint(buf.as_slice()).unwrap(), m);
        assert!(Mps::read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(Mps::read_checkpoint(extra.as_slice()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let part = Partition::new(1, 2).unwrap();
        let h = PauliHamiltonian::new(
            2,
            [("ZZ", 1.0), ("XI", 0.7), ("IY", -0.4), ("II", 0.3), ("YX", 0.5)].map(|(s, a)| (s.parse::<PauliString>().unwrap(), a)),
        )
        .unwrap();
        let problem = DualProblem::new(h);
        let (eta, nu, c) = (-0.8, 1.7, 3.0);
        for seed in 0..3 {
            let m = random_complex_mps(3, 2, 20 + seed);
            let g = mps_objective_gradient(&problem, &m, &part, eta, nu, c).unwrap();
            let f = |mm: &Mps| mps_objective_gradient(&problem, mm, &part, eta, nu, c).unwrap().breakdown.f;
            let h = 1e-5;
            for k in 0..3 {
                for i in 0..m.sites[k].data.len() {
                    for (dir, part_of) in [(ONE, 0), (C64::new(0.0, 1.0), 1)] {
                        let mut plus = m.clone();
                        plus.sites[k].data[i] += dir * h;
                        let mut minus = m.clone();
                        minus.sites[k].data[i] -= dir * h;
                        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                        let an = if part_of == 0 { g.d_sites[k].data[i].re } else { g.d_sites[k].data[i].im };
                        assert!((fd - an).abs() <= 1e-4 * an.abs().max(1.0), "site {k} entry {i}: {fd} vs {an}");
                    }
                }
            }
            let fe = |e: f64| mps_objective_gradient(&problem, &m, &part, e, nu, c).unwrap().breakdown.f;
            let fnu = |v: f64| mps_objective_gradient(&problem, &m, &part, eta, v, c).unwrap().breakdown.f;
            assert!(((fe(eta + 1e-5) - fe(eta - 1e-5)) / 2e-5 - g.d_eta).abs() < 1e-4 * g.d_eta.abs().max(1.0));
            assert!(((fnu(nu + 1e-5) - fnu(nu - 1e-5)) / 2e-5 - g.d_nu).abs() < 1e-4 * g.d_nu.abs().max(1.0));
        }
    }

    #[test]
    fn zero_iteration_pretraining_returns_the_initial_state() {
        let problem = DualProblem::new(PauliHamiltonian::tfi_uniform(1).unwrap());
        let part = Partition::new(1, 1).unwrap();
        let cfg = PretrainConfig { c: 10.0, ..PretrainConfig::new(2, 0, 4) };
        let run = pretrain_mps(&problem, part, &cfg).unwrap();
        assert_eq!(run.mps, random_mps(2, 2, 4).unwrap());
        assert_eq!(run.trace.len(), 1);
        assert_eq!((run.eta, run.nu), feasible_dual_start(&problem));
    }

    #[test]
    fn pretraining_sigma_x() {
        let x = PauliHamiltonian::new(1, [("X".parse::<PauliString>().unwrap(), 1.0)]).unwrap();
        let problem = DualProblem::new(x);
        let part = Partition::new(1, 1).unwrap();
        let run = pretrain_mps(&problem, part, &PretrainConfig::new(2, 2000, 1)).unwrap();
        let last = run.trace.last().unwrap();
        assert!((last.f + 1.0).abs() < 0.1, "{last:?}");
        assert!((run.mps.norm_sqr() - 1.0).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn contractions_match_dense_partial_traces(n_r in 0usize..4, extra in 0usize..3, chi in 1usize..6, seed in any::<u64>()) {
            let n_s = (n_r + extra).max(1);
            let part = Partition::new(n_r, n_s).unwrap();
            let m = random_complex_mps(n_r + n_s, chi, seed);
            let h = PauliHamiltonian::tfi_uniform(n_s).unwrap().add(
                &PauliHamiltonian::new(n_s, [(PauliString::with_ops(n_s, &[(0, PauliOp::Y)]), 0.3)]).unwrap()
            ).unwrap();
            let (e, p) = dense_moments(&h, &m, &part);
            prop_assert!((mps_expectation(&h, &m, &part).unwrap() - e).abs() < 1e-10);
            prop_assert!((mps_purity(&m, &part).unwrap() - p).abs() < 1e-10);
        }

        #[test]
        fn truncation_fidelity_is_monotone(seed in any::<u64>()) {
            let m = random_complex_mps(6, 8, seed);
            let f: Vec<f64> = [1usize, 2, 4, 8].iter().map(|&c| m.truncate(c).unwrap().fidelity).collect();
            prop_assert!(f.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            prop_assert!((f[3] - 1.0).abs() < 1e-10);
            for chi in [1usize, 2, 4] {
                let t = m.truncate(chi).unwrap();
                let overlap = t.mps.to_dense().unwrap().fidelity(&m.to_dense().unwrap());
                prop_assert!((overlap - t.fidelity).abs() < 1e-10);
            }
        }
    }
}
