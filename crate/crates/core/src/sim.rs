//! Dense statevector and density-matrix simulation.
//!
//! Basis index bit `n − 1 − q` holds qubit `q`, so qubit 0 is the leftmost
//! tensor factor. Rotations are `R_a(θ) = exp(−iθσ_a/2)`.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::{input, Error, Result};
use crate::hamiltonian::{PauliHamiltonian, PauliMasks, DENSE_QUBIT_LIMIT};
use crate::kak::kak_unitary;
use crate::linalg::{hermiticity_error, CMatrix, Mat2, Mat4, C64, I, ONE, ZERO};

const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// `|0…0⟩`.
    pub fn zero(n: usize) -> Self {
        Self::basis(n, 0)
    }

    pub fn basis(n: usize, index: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n];
        amps[index] = ONE;
        StateVector { n, amps }
    }

    /// Wraps amplitudes that are already normalized.
    pub fn from_amplitudes(n: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != 1 << n {
            return input(format!("{} amplitudes do not describe {n} qubits", amps.len()));
        }
        let s = StateVector { n, amps };
        if (s.norm() - 1.0).abs() > NORM_TOL {
            return input(format!("state has norm {}", s.norm()));
        }
        Ok(s)
    }

    /// Normalizes arbitrary nonzero amplitudes.
    pub fn normalized(n: usize, mut amps: Vec<C64>) -> Result<Self> {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Numeric("cannot normalize a zero or non-finite vector".into()));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Self::from_amplitudes(n, amps)
    }

    /// Haar-random state from normalized complex Gaussians.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let amps = (0..1usize << n)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        Self::normalized(n, amps).expect("Gaussian vector is nonzero")
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn fidelity(&self, other: &StateVector) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// Computational-basis probabilities `|ψ_x|²`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    fn bit(&self, q: usize) -> usize {
        1 << (self.n - 1 - q)
    }

    pub fn apply_1q(&mut self, q: usize, u: &Mat2) {
        let b = self.bit(q);
        for j in 0..self.amps.len() {
            if j & b == 0 {
                let (a0, a1) = (self.amps[j], self.amps[j | b]);
                self.amps[j] = u[(0, 0)] * a0 + u[(0, 1)] * a1;
                self.amps[j | b] = u[(1, 0)] * a0 + u[(1, 1)] * a1;
            }
        }
    }

    /// Applies `u` with `q0` as the left tensor factor and `q1` as the right.
    pub fn apply_2q(&mut self, q0: usize, q1: usize, u: &Mat4) {
        let (b0, b1) = (self.bit(q0), self.bit(q1));
        let idx = |j: usize| [j, j | b1, j | b0, j | b0 | b1];
        for j in 0..self.amps.len() {
            if j & (b0 | b1) == 0 {
                let ix = idx(j);
                let v = ix.map(|k| self.amps[k]);
                for (r, &k) in ix.iter().enumerate() {
                    self.amps[k] = (0..4).map(|c| u[(r, c)] * v[c]).sum();
                }
            }
        }
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        let (bc, bt) = (self.bit(control), self.bit(target));
        for j in 0..self.amps.len() {
            if j & bc != 0 && j & bt == 0 {
                self.amps.swap(j, j | bt);
            }
        }
    }

    pub fn apply_cz(&mut self, a: usize, b: usize) {
        let mask = self.bit(a) | self.bit(b);
        for (j, amp) in self.amps.iter_mut().enumerate() {
            if j & mask == mask {
                *amp = -*amp;
            }
        }
    }

    /// Reduced density matrix on `keep`; qubit `k` of the result is `keep[k]`.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityMatrix> {
        if keep.is_empty() {
            return input("partial trace must keep at least one qubit");
        }
        let mut seen = vec![false; self.n];
        for &q in keep {
            if q >= self.n || seen[q] {
                return input(format!("invalid or repeated qubit {q} in keep set"));
            }
            seen[q] = true;
        }
        let rest: Vec<usize> = (0..self.n).filter(|&q| !seen[q]).collect();
        let (dk, dr) = (1usize << keep.len(), 1usize << rest.len());
        let gather = |qs: &[usize], j: usize| {
            qs.iter().fold(0usize, |acc, &q| (acc << 1) | ((j >> (self.n - 1 - q)) & 1))
        };
        let mut psi = CMatrix::from_element(dk, dr, ZERO);
        for (j, a) in self.amps.iter().enumerate() {
            psi[(gather(keep, j), gather(&rest, j))] = *a;
        }
        Ok(DensityMatrix { n: keep.len(), m: &psi * psi.adjoint() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    m: CMatrix,
}

impl DensityMatrix {
    pub fn from_pure(state: &StateVector) -> Self {
        let v = nalgebra::DVector::from_column_slice(state.amplitudes());
        DensityMatrix { n: state.n, m: &v * v.adjoint() }
    }

    /// Validates Hermiticity, unit trace and positivity.
    pub fn from_matrix(n: usize, m: CMatrix) -> Result<Self> {
        let d = 1usize << n;
        if m.nrows() != d || m.ncols() != d {
            return input(format!("{}x{} matrix is not a {n}-qubit operator", m.nrows(), m.ncols()));
        }
        if hermiticity_error(&m) > NORM_TOL {
            return input("density matrix is not Hermitian");
        }
        let rho = DensityMatrix { n, m };
        if (rho.trace() - 1.0).abs() > NORM_TOL {
            return input(format!("density matrix has trace {}", rho.trace()));
        }
        if rho.eigenvalues().first().is_some_and(|&e| e < -1e-9) {
            return input("density matrix is not positive semidefinite");
        }
        Ok(rho)
    }

    pub fn maximally_mixed(n: usize) -> Self {
        let d = 1usize << n;
        DensityMatrix { n, m: CMatrix::identity(d, d) / C64::from(d as f64) }
    }

    pub fn diagonal(probs: &[f64]) -> Result<Self> {
        let n = probs.len().trailing_zeros() as usize;
        let m = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(probs.len(), probs.iter().map(|&p| C64::from(p))));
        Self::from_matrix(n, m)
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace().re
    }

    /// `Tr[ρ²] = Σ |ρ_ij|²` for Hermitian `ρ`.
    pub fn exact_purity(&self) -> f64 {
        self.m.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(self.m.clone()).eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }
}

/// States whose Pauli-string expectations can be evaluated exactly.
pub trait PauliMeasurable {
    fn n_qubits(&self) -> usize;
    fn pauli_expectation(&self, masks: &PauliMasks) -> f64;
}

impl PauliMeasurable for StateVector {
    fn n_qubits(&self) -> usize {
        self.n
    }

    fn pauli_expectation(&self, masks: &PauliMasks) -> f64 {
        let mut acc = ZERO;
        for (j, a) in self.amps.iter().enumerate() {
            let (k, phase) = masks.apply(j);
            acc += self.amps[k].conj() * phase * a;
        }
        acc.re
    }
}

impl PauliMeasurable for DensityMatrix {
    fn n_qubits(&self) -> usize {
        self.n
    }

    fn pauli_expectation(&self, masks: &PauliMasks) -> f64 {
        let mut acc = ZERO;
        for j in 0..self.m.nrows() {
            let (k, phase) = masks.apply(j);
            acc += phase * self.m[(j, k)];
        }
        acc.re
    }
}

fn check_qubits(h: &PauliHamiltonian, n: usize) -> Result<()> {
    if h.n_qubits() != n {
        return input(format!("Hamiltonian acts on {} qubits but the state has {n}", h.n_qubits()));
    }
    Ok(())
}

/// `Tr[Hρ]` without sampling.
pub fn exact_expectation<S: PauliMeasurable + ?Sized>(h: &PauliHamiltonian, state: &S) -> Result<f64> {
    check_qubits(h, state.n_qubits())?;
    Ok(h.terms().iter().map(|(s, a)| a * state.pauli_expectation(&s.masks())).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShotMode {
    Exact,
    /// Binomial outcome counts per Pauli term and per swap test.
    Sampled,
    /// Normal approximation with the binomial variance, for shot counts too
    /// large to sample.
    Gaussian,
}

/// Measurement model plus the random stream that drives it.
#[derive(Debug, Clone)]
pub struct ShotModel {
    pub mode: ShotMode,
    pub shots: u64,
    pub purity_shots: u64,
    rng: ChaCha8Rng,
}

impl ShotModel {
    pub fn exact() -> Self {
        ShotModel { mode: ShotMode::Exact, shots: 0, purity_shots: 0, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    pub fn sampled(shots: u64, seed: u64) -> Result<Self> {
        Self::new(ShotMode::Sampled, shots, seed)
    }

    pub fn gaussian(shots: u64, seed: u64) -> Result<Self> {
        Self::new(ShotMode::Gaussian, shots, seed)
    }

    pub fn new(mode: ShotMode, shots: u64, seed: u64) -> Result<Self> {
        if mode != ShotMode::Exact && shots == 0 {
            return input("sampled measurement needs at least one shot");
        }
        Ok(ShotModel { mode, shots, purity_shots: shots, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// Sets the swap-test and collision-test sample count separately from the
    /// expectation shots.
    pub fn with_purity_shots(mut self, shots: u64) -> Result<Self> {
        if self.mode != ShotMode::Exact && shots == 0 {
            return input("purity estimation needs at least one shot");
        }
        self.purity_shots = shots;
        Ok(self)
    }

    pub fn is_exact(&self) -> bool {
        self.mode == ShotMode::Exact
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Estimate of a ±1 observable with mean `e` from `shots` outcomes.
    pub fn estimate_pm1(&mut self, e: f64, shots: u64) -> f64 {
        let e = e.clamp(-1.0, 1.0);
        match self.mode {
            ShotMode::Exact => e,
            ShotMode::Sampled => {
                let k = Binomial::new(shots, (1.0 + e) / 2.0).expect("probability in [0,1]").sample(&mut self.rng);
                2.0 * k as f64 / shots as f64 - 1.0
            }
            ShotMode::Gaussian => {
                let z: f64 = self.rng.sample(StandardNormal);
                e + z * ((1.0 - e * e) / shots as f64).sqrt()
            }
        }
    }
}

/// `Tr[Hρ]`, exact or estimated term by term.
pub fn expectation<S: PauliMeasurable + ?Sized>(h: &PauliHamiltonian, state: &S, shot: &mut ShotModel) -> Result<f64> {
    check_qubits(h, state.n_qubits())?;
    let shots = shot.shots;
    Ok(h.terms()
        .iter()
        .map(|(s, a)| {
            if s.is_identity() {
                *a
            } else {
                a * shot.estimate_pm1(state.pauli_expectation(&s.masks()), shots)
            }
        })
        .sum())
}

/// `Tr[ρ²]`; sampled modes emulate the swap test, whose ±1 outcome has mean
/// `Tr[ρ²]`.
pub fn purity(rho: &DensityMatrix, shot: &mut ShotModel) -> f64 {
    let p = rho.exact_purity();
    let shots = shot.purity_shots;
    shot.estimate_pm1(p, shots)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

pub fn rotation(axis: Axis, theta: f64) -> Mat2 {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let (c, s) = (C64::from(c), C64::from(s));
    match axis {
        Axis::X => Mat2::new(c, -I * s, -I * s, c),
        Axis::Y => Mat2::new(c, -s, s, c),
        Axis::Z => Mat2::new(c - I * s, ZERO, ZERO, c + I * s),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    Rotation { axis: Axis, qubit: usize, param: usize },
    Cnot { control: usize, target: usize },
    Cz { a: usize, b: usize },
    /// Two-qubit block driven by `params[offset..offset + 15]`.
    Kak { q0: usize, q1: usize, offset: usize },
}

/// Ordered gate list over a shared real parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCircuit {
    n: usize,
    n_params: usize,
    gates: Vec<Gate>,
}

impl ParamCircuit {
    pub fn new(n: usize) -> Self {
        ParamCircuit { n, n_params: 0, gates: Vec::new() }
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n {
            return input(format!("qubit {q} out of range for {} qubits", self.n));
        }
        Ok(())
    }

    fn check_pair(&self, a: usize, b: usize) -> Result<()> {
        self.check_qubit(a)?;
        self.check_qubit(b)?;
        if a == b {
            return input("two-qubit gate needs distinct qubits");
        }
        Ok(())
    }

    /// Appends a rotation with a fresh parameter and returns its index.
    pub fn rotation(&mut self, axis: Axis, qubit: usize) -> Result<usize> {
        self.check_qubit(qubit)?;
        let param = self.n_params;
        self.n_params += 1;
        self.gates.push(Gate::Rotation { axis, qubit, param });
        Ok(param)
    }

    pub fn cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_pair(control, target)?;
        self.gates.push(Gate::Cnot { control, target });
        Ok(())
    }

    pub fn cz(&mut self, a: usize, b: usize) -> Result<()> {
        self.check_pair(a, b)?;
        self.gates.push(Gate::Cz { a, b });
        Ok(())
    }

    /// Appends a KAK block with 15 fresh parameters and returns the offset.
    pub fn kak(&mut self, q0: usize, q1: usize) -> Result<usize> {
        self.check_pair(q0, q1)?;
        let offset = self.n_params;
        self.n_params += 15;
        self.gates.push(Gate::Kak { q0, q1, offset });
        Ok(offset)
    }

    /// Appends `other`'s gates with its parameters renumbered after ours.
    pub fn extend(&mut self, other: &ParamCircuit) -> Result<()> {
        if other.n != self.n {
            return input("cannot concatenate circuits on different qubit counts");
        }
        let shift = self.n_params;
        self.gates.extend(other.gates.iter().map(|g| match *g {
            Gate::Rotation { axis, qubit, param } => Gate::Rotation { axis, qubit, param: param + shift },
            Gate::Kak { q0, q1, offset } => Gate::Kak { q0, q1, offset: offset + shift },
            ref g => g.clone(),
        }));
        self.n_params += other.n_params;
        Ok(())
    }

    pub fn apply(&self, params: &[f64], input_state: &StateVector) -> Result<StateVector> {
        if params.len() != self.n_params {
            return input(format!("circuit takes {} parameters, got {}", self.n_params, params.len()));
        }
        if input_state.n != self.n {
            return input(format!("circuit acts on {} qubits but the state has {}", self.n, input_state.n));
        }
        let mut s = input_state.clone();
        for g in &self.gates {
            match *g {
                Gate::Rotation { axis, qubit, param } => s.apply_1q(qubit, &rotation(axis, params[param])),
                Gate::Cnot { control, target } => s.apply_cnot(control, target),
                Gate::Cz { a, b } => s.apply_cz(a, b),
                Gate::Kak { q0, q1, offset } => {
                    let u = kak_unitary(&params[offset..offset + 15])?;
                    s.apply_2q(q0, q1, &u);
                }
            }
        }
        Ok(s)
    }

    /// Output state for input `|0…0⟩`.
    pub fn run(&self, params: &[f64]) -> Result<StateVector> {
        self.apply(params, &StateVector::zero(self.n))
    }

    /// Dense unitary, column `j` being the image of basis state `j`.
    pub fn unitary(&self, params: &[f64]) -> Result<CMatrix> {
        if self.n > DENSE_QUBIT_LIMIT {
            return Err(Error::Resource(format!("{} qubits exceed the dense simulation cap", self.n)));
        }
        let d = 1usize << self.n;
        let mut u = CMatrix::from_element(d, d, ZERO);
        for j in 0..d {
            let col = self.apply(params, &StateVector::basis(self.n, j))?;
            u.column_mut(j).copy_from_slice(col.amplitudes());
        }
        Ok(u)
    }
}
