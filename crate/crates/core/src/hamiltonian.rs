//! Hamiltonians as real linear combinations of Pauli strings.
//!
//! ```text
//!   H = Σ_x α_x σ_x,    σ_x = σ_{x_1} ⊗ ··· ⊗ σ_{x_n}
//! ```
//!
//! Qubit `q` of a string corresponds to the letter at position `q`, and to
//! bit `n − 1 − q` of a computational-basis index (qubit 0 is the most
//! significant bit). Orthogonality of Pauli strings gives the closed forms
//! `Tr[H] = 2ⁿ α_I` and `Tr[H²] = 2ⁿ ‖α‖²`, which the dual objective uses
//! instead of dense traces.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::SymmetricEigen;

use crate::error::{input, Error, Result};
use crate::linalg::{CMatrix, C64, ZERO};

/// Dense materialisation (and therefore the exact eigensolver) is refused
/// above this many qubits.
pub const DENSE_QUBIT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PauliOp {
    I = 0,
    X = 1,
    Y = 2,
    Z = 3,
}

impl PauliOp {
    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'I' | 'i' => Some(PauliOp::I),
            'X' | 'x' => Some(PauliOp::X),
            'Y' | 'y' => Some(PauliOp::Y),
            'Z' | 'z' => Some(PauliOp::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            PauliOp::I => 'I',
            PauliOp::X => 'X',
            PauliOp::Y => 'Y',
            PauliOp::Z => 'Z',
        }
    }
}

/// A tensor product of single-qubit Paulis, one letter per qubit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliString(Vec<PauliOp>);

impl PauliString {
    pub fn new(ops: Vec<PauliOp>) -> Self {
        PauliString(ops)
    }

    pub fn identity(n: usize) -> Self {
        PauliString(vec![PauliOp::I; n])
    }

    /// Identity everywhere except the listed `(qubit, op)` pairs.
    pub fn with_ops(n: usize, ops: &[(usize, PauliOp)]) -> Self {
        let mut s = vec![PauliOp::I; n];
        for &(q, op) in ops {
            s[q] = op;
        }
        PauliString(s)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ops(&self) -> &[PauliOp] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&p| p == PauliOp::I)
    }

    /// Pads the string with identities on `before` leading and `after`
    /// trailing qubits.
    pub fn embed(&self, before: usize, after: usize) -> Self {
        let mut s = vec![PauliOp::I; before];
        s.extend_from_slice(&self.0);
        s.extend(std::iter::repeat_n(PauliOp::I, after));
        PauliString(s)
    }

    /// Bit-level description of the string's action on basis states:
    /// `σ|j⟩ = i^{n_y} (−1)^{|j ∧ z|} |j ⊕ x⟩`.
    pub fn masks(&self) -> PauliMasks {
        let n = self.0.len();
        let mut x = 0usize;
        let mut z = 0usize;
        let mut ny = 0u32;
        for (q, op) in self.0.iter().enumerate() {
            let bit = 1usize << (n - 1 - q);
            match op {
                PauliOp::I => {}
                PauliOp::X => x |= bit,
                PauliOp::Y => {
                    x |= bit;
                    z |= bit;
                    ny += 1;
                }
                PauliOp::Z => z |= bit,
            }
        }
        let y_phase = match ny % 4 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        };
        PauliMasks { x, z, y_phase }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PauliMasks {
    pub x: usize,
    pub z: usize,
    pub y_phase: C64,
}

impl PauliMasks {
    /// Image of basis state `j`: `(j ⊕ x, phase)`.
    #[inline]
    pub fn apply(&self, j: usize) -> (usize, C64) {
        let sign = if (j & self.z).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
        (j ^ self.x, self.y_phase * sign)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for op in &self.0 {
            write!(f, "{}", op.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ops = s
            .chars()
            .map(|c| PauliOp::from_char(c).ok_or_else(|| Error::Input(format!("bad Pauli letter {c:?} in {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if ops.is_empty() {
            return input("empty Pauli string");
        }
        Ok(PauliString(ops))
    }
}

/// `H = Σ α_x σ_x` on `n` qubits with real coefficients.
///
/// Duplicate strings are merged by adding coefficients and terms whose merged
/// coefficient is exactly zero are dropped. Terms are kept in lexicographic
/// order of their strings.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliHamiltonian {
    n: usize,
    terms: Vec<(PauliString, f64)>,
}

impl PauliHamiltonian {
    pub fn new(n: usize, terms: impl IntoIterator<Item = (PauliString, f64)>) -> Result<Self> {
        if n == 0 {
            return input("Hamiltonian needs at least one qubit");
        }
        let mut merged: BTreeMap<PauliString, f64> = BTreeMap::new();
        for (s, a) in terms {
            if s.len() != n {
                return input(format!("Pauli string {s} has length {} but the Hamiltonian has {n} qubits", s.len()));
            }
            if !a.is_finite() {
                return input(format!("coefficient of {s} is not finite"));
            }
            *merged.entry(s).or_insert(0.0) += a;
        }
        let terms = merged.into_iter().filter(|(_, a)| *a != 0.0).collect();
        Ok(PauliHamiltonian { n, terms })
    }

    /// The zero operator on `n` qubits.
    pub fn zero(n: usize) -> Result<Self> {
        Self::new(n, std::iter::empty())
    }

    /// `Σ J_i Z_i Z_{i+1} + Σ g_i X_i`, the open-chain transverse-field Ising model.
    pub fn tfi(n: usize, couplings: &[f64], fields: &[f64]) -> Result<Self> {
        if n == 0 {
            return input("TFI model needs at least one qubit");
        }
        if couplings.len() != n - 1 {
            return input(format!("expected {} couplings, got {}", n - 1, couplings.len()));
        }
        if fields.len() != n {
            return input(format!("expected {n} fields, got {}", fields.len()));
        }
        let zz = couplings
            .iter()
            .enumerate()
            .map(|(i, &j)| (PauliString::with_ops(n, &[(i, PauliOp::Z), (i + 1, PauliOp::Z)]), j));
        let x = fields.iter().enumerate().map(|(i, &g)| (PauliString::with_ops(n, &[(i, PauliOp::X)]), g));
        Self::new(n, zz.chain(x))
    }

    /// TFI chain with unit couplings and unit fields.
    pub fn tfi_uniform(n: usize) -> Result<Self> {
        Self::tfi(n, &vec![1.0; n.saturating_sub(1)], &vec![1.0; n])
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[(PauliString, f64)] {
        &self.terms
    }

    pub fn dim(&self) -> f64 {
        (self.n as f64).exp2()
    }

    /// Coefficient of the identity string (zero if absent).
    pub fn identity_coefficient(&self) -> f64 {
        self.terms.iter().find(|(s, _)| s.is_identity()).map_or(0.0, |(_, a)| *a)
    }

    /// `Tr[H] = 2ⁿ α_I`.
    pub fn trace(&self) -> f64 {
        self.dim() * self.identity_coefficient()
    }

    /// `Tr[H²] = 2ⁿ Σ α²`.
    pub fn trace_sq(&self) -> f64 {
        self.dim() * self.terms.iter().map(|(_, a)| a * a).sum::<f64>()
    }

    /// `Σ |α|`, the scale of per-term shot noise.
    pub fn l1_norm(&self) -> f64 {
        self.terms.iter().map(|(_, a)| a.abs()).sum()
    }

    /// `H + s·I`.
    pub fn shifted(&self, s: f64) -> Self {
        let id = (PauliString::identity(self.n), s);
        Self::new(self.n, self.terms.iter().cloned().chain(std::iter::once(id))).expect("shift keeps validity")
    }

    /// `a·H`.
    pub fn scaled(&self, a: f64) -> Self {
        Self::new(self.n, self.terms.iter().map(|(s, c)| (s.clone(), a * c))).expect("scaling keeps validity")
    }

    /// `H₁ + H₂` on the same qubits.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return input("cannot add Hamiltonians on different qubit counts");
        }
        Self::new(self.n, self.terms.iter().chain(other.terms.iter()).cloned())
    }

    /// Dense `2ⁿ × 2ⁿ` matrix, built column by column from the Pauli action.
    pub fn to_dense(&self) -> Result<CMatrix> {
        if self.n > DENSE_QUBIT_LIMIT {
            return Err(Error::Resource(format!(
                "dense materialisation of {} qubits exceeds the {DENSE_QUBIT_LIMIT}-qubit cap",
                self.n
            )));
        }
        let d = 1usize << self.n;
        let mut m = CMatrix::from_element(d, d, ZERO);
        for (s, a) in &self.terms {
            let masks = s.masks();
            for j in 0..d {
                let (k, phase) = masks.apply(j);
                m[(k, j)] += phase * *a;
            }
        }
        Ok(m)
    }

    /// Smallest eigenvalue from a dense Hermitian eigensolver.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self
            .spectrum()?
            .into_iter()
            .next()
            .expect("dimension is at least two"))
    }

    /// All eigenvalues in ascending order.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        let dense = self.to_dense()?;
        let eig = SymmetricEigen::try_new(dense, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numeric("Hermitian eigensolver did not converge".into()))?;
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("eigensolver returned non-finite eigenvalues".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(values)
    }

    /// Parses the line format `<coeff> <letters>`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let mut n = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let coeff_tok = parts.next().expect("line is non-empty");
            let letters = parts
                .next()
                .ok_or_else(|| Error::Input(format!("line {}: missing Pauli string", lineno + 1)))?;
            if parts.next().is_some() {
                return input(format!("line {}: trailing tokens", lineno + 1));
            }
            let coeff: f64 = coeff_tok.parse().map_err(|_| {
                if coeff_tok.contains(['i', 'j']) && !coeff_tok.eq_ignore_ascii_case("inf") {
                    Error::Input(format!("line {}: complex coefficient {coeff_tok:?} not allowed", lineno + 1))
                } else {
                    Error::Input(format!("line {}: bad coefficient {coeff_tok:?}", lineno + 1))
                }
            })?;
            let s: PauliString = letters.parse()?;
            match n {
                None => n = Some(s.len()),
                Some(n) if n != s.len() => {
                    return input(format!("line {}: expected {n} letters, got {}", lineno + 1, s.len()));
                }
                _ => {}
            }
            terms.push((s, coeff));
        }
        let n = n.ok_or_else(|| Error::Input("no Hamiltonian terms found".into()))?;
        Self::new(n, terms)
    }

    pub fn to_text(&self) -> String {
        self.terms.iter().map(|(s, a)| format!("{a} {s}\n")).collect()
    }
}
