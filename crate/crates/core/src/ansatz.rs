//! Parameterized mixed states.
//!
//! * Purification: `ω(θ) = Tr_R |ψ(θ)⟩⟨ψ(θ)|` where the first `n_R` qubits
//!   of the circuit form the reference register `R`.
//! * Convex combination: `ω(φ, γ) = Σ_x p_φ(x) U(γ)|x⟩⟨x|U(γ)†` with `p_φ`
//!   the output distribution of a circuit Born machine.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;

use crate::error::{input, Result};
use crate::hamiltonian::PauliHamiltonian;
use crate::linalg::{CMatrix, C64};
use crate::sim::{Axis, DensityMatrix, ParamCircuit, PauliMeasurable, StateVector};

pub const DEFAULT_PURIFICATION_LAYERS: usize = 3;
pub const DEFAULT_BORN_LAYERS: usize = 2;
pub const DEFAULT_UNITARY_LAYERS: usize = 2;

/// `layers` × (RY on every qubit, RZ on every qubit, CNOT chain).
pub fn hardware_efficient_circuit(n: usize, layers: usize) -> ParamCircuit {
    let mut c = ParamCircuit::new(n);
    for _ in 0..layers {
        for axis in [Axis::Y, Axis::Z] {
            for q in 0..n {
                c.rotation(axis, q).expect("qubit in range");
            }
        }
        for q in 0..n.saturating_sub(1) {
            c.cnot(q, q + 1).expect("qubits in range");
        }
    }
    c
}

/// `layers` × (RY on every qubit, CZ ring). Two qubits get a single CZ.
pub fn ry_cz_circuit(n: usize, layers: usize) -> ParamCircuit {
    let mut c = ParamCircuit::new(n);
    for _ in 0..layers {
        for q in 0..n {
            c.rotation(Axis::Y, q).expect("qubit in range");
        }
        for q in 0..n.saturating_sub(1) {
            c.cz(q, q + 1).expect("qubits in range");
        }
        if n > 2 {
            c.cz(n - 1, 0).expect("qubits in range");
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurificationAnsatz {
    n_r: usize,
    n_s: usize,
    circuit: ParamCircuit,
}

impl PurificationAnsatz {
    pub fn new(n_r: usize, n_s: usize, layers: usize) -> Result<Self> {
        Self::with_circuit(n_r, n_s, hardware_efficient_circuit(n_r + n_s, layers))
    }

    /// Uses an arbitrary circuit on `n_R + n_S` qubits.
    pub fn with_circuit(n_r: usize, n_s: usize, circuit: ParamCircuit) -> Result<Self> {
        if n_r == 0 || n_s == 0 {
            return input("purification needs nonempty reference and system registers");
        }
        if n_s < n_r {
            return input(format!("system register ({n_s}) must be at least as large as the reference ({n_r})"));
        }
        if circuit.n_qubits() != n_r + n_s {
            return input(format!("circuit acts on {} qubits, expected {}", circuit.n_qubits(), n_r + n_s));
        }
        Ok(PurificationAnsatz { n_r, n_s, circuit })
    }

    pub fn n_reference(&self) -> usize {
        self.n_r
    }

    pub fn n_system(&self) -> usize {
        self.n_s
    }

    pub fn circuit(&self) -> &ParamCircuit {
        &self.circuit
    }

    pub fn n_params(&self) -> usize {
        self.circuit.n_params()
    }

    pub fn pure_state(&self, theta: &[f64]) -> Result<StateVector> {
        self.circuit.run(theta)
    }

    pub fn state(&self, theta: &[f64]) -> Result<DensityMatrix> {
        let keep: Vec<usize> = (self.n_r..self.n_r + self.n_s).collect();
        self.pure_state(theta)?.partial_trace(&keep)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexCombinationAnsatz {
    n: usize,
    born: ParamCircuit,
    unitary: ParamCircuit,
}

impl ConvexCombinationAnsatz {
    pub fn new(n: usize, born_layers: usize, unitary_layers: usize) -> Result<Self> {
        Self::with_circuits(ry_cz_circuit(n, born_layers), ry_cz_circuit(n, unitary_layers))
    }

    pub fn with_circuits(born: ParamCircuit, unitary: ParamCircuit) -> Result<Self> {
        let n = born.n_qubits();
        if n == 0 || unitary.n_qubits() != n {
            return input("Born machine and eigenbasis circuit must act on the same nonzero qubit count");
        }
        Ok(ConvexCombinationAnsatz { n, born, unitary })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn n_born_params(&self) -> usize {
        self.born.n_params()
    }

    /// Total parameter count; the flat vector is `φ` followed by `γ`.
    pub fn n_params(&self) -> usize {
        self.born.n_params() + self.unitary.n_params()
    }

    pub fn split<'a>(&self, params: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        if params.len() != self.n_params() {
            return input(format!("ansatz takes {} parameters, got {}", self.n_params(), params.len()));
        }
        Ok(params.split_at(self.born.n_params()))
    }

    /// `p_φ(x) = |⟨x|B(φ)|0⟩|²`.
    pub fn born_distribution(&self, phi: &[f64]) -> Result<Vec<f64>> {
        Ok(self.born.run(phi)?.probabilities())
    }

    /// `U(γ)|x⟩` for every basis state `x`, as the columns of `U(γ)`.
    pub fn eigenbasis(&self, gamma: &[f64]) -> Result<CMatrix> {
        self.unitary.unitary(gamma)
    }

    pub fn state(&self, phi: &[f64], gamma: &[f64]) -> Result<DensityMatrix> {
        let p = self.born_distribution(phi)?;
        let u = self.eigenbasis(gamma)?;
        let scaled = CMatrix::from_fn(u.nrows(), u.ncols(), |r, c| u[(r, c)] * p[c]);
        Ok(DensityMatrix::from_matrix(self.n, scaled * u.adjoint()).expect("convex combination is a state"))
    }

    /// Like [`Self::state`] on the flat `φ ‖ γ` vector.
    pub fn state_flat(&self, params: &[f64]) -> Result<DensityMatrix> {
        let (phi, gamma) = self.split(params)?;
        self.state(phi, gamma)
    }
}

/// Fraction of colliding pairs among `⌊samples/2⌋` disjoint pairs of
/// independent draws; an unbiased estimate of `Σ_x p(x)²`.
pub fn collision_purity<R, F>(mut sampler: F, samples: u64, rng: &mut R) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> usize,
{
    if samples < 2 {
        return input("collision test needs at least two samples");
    }
    let pairs = samples / 2;
    let hits = (0..pairs).filter(|_| sampler(rng) == sampler(rng)).count();
    Ok(hits as f64 / pairs as f64)
}

/// Sampler over indices with probabilities `p`.
pub fn distribution_sampler(p: &[f64]) -> Result<impl Fn(&mut dyn rand::RngCore) -> usize + '_> {
    let dist = WeightedIndex::new(p.iter().map(|&x| x.max(0.0)))
        .map_err(|e| crate::Error::Input(format!("invalid probability vector: {e}")))?;
    Ok(move |rng: &mut dyn rand::RngCore| dist.sample(rng))
}

/// [`collision_purity`] for an explicit distribution.
pub fn collision_purity_of(p: &[f64], samples: u64, seed: u64) -> Result<f64> {
    let sample = distribution_sampler(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    collision_purity(|r: &mut ChaCha8Rng| sample(r), samples, &mut rng)
}

/// Estimates `Tr[Hω(φ,γ)]` the way hardware would: every shot of every
/// Pauli term draws `x ~ p_φ`, prepares `U(γ)|x⟩` and records a ±1 outcome.
pub fn cc_expectation_sampled<R: Rng + ?Sized>(
    h: &PauliHamiltonian,
    ansatz: &ConvexCombinationAnsatz,
    phi: &[f64],
    gamma: &[f64],
    shots: u64,
    rng: &mut R,
) -> Result<f64> {
    if h.n_qubits() != ansatz.n {
        return input("Hamiltonian and ansatz qubit counts differ");
    }
    if shots == 0 {
        return input("sampled expectation needs at least one shot");
    }
    let p = ansatz.born_distribution(phi)?;
    let u = ansatz.eigenbasis(gamma)?;
    let columns: Vec<StateVector> = (0..u.ncols())
        .map(|x| StateVector::from_amplitudes(ansatz.n, u.column(x).iter().copied().collect::<Vec<C64>>()))
        .collect::<Result<_>>()?;
    let dist = WeightedIndex::new(&p).map_err(|e| crate::Error::Numeric(format!("Born distribution: {e}")))?;
    let mut total = 0.0;
    for (s, a) in h.terms() {
        if s.is_identity() {
            total += a;
            continue;
        }
        let masks = s.masks();
        let mut counts = vec![0u64; p.len()];
        for _ in 0..shots {
            counts[dist.sample(rng)] += 1;
        }
        let mut plus = 0u64;
        for (x, &k) in counts.iter().enumerate() {
            if k > 0 {
                let e = columns[x].pauli_expectation(&masks).clamp(-1.0, 1.0);
                plus += Binomial::new(k, (1.0 + e) / 2.0).expect("probability in [0,1]").sample(rng);
            }
        }
        total += a * (2.0 * plus as f64 / shots as f64 - 1.0);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::hamiltonian::PauliString;
    use crate::sim::exact_expectation;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn random_params<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect()
    }

    #[test]
    fn layer_parameter_counts() {
        assert_eq!(PurificationAnsatz::new(1, 1, 3).unwrap().n_params(), 12);
        assert_eq!(PurificationAnsatz::new(2, 3, 2).unwrap().n_params(), 20);
        let cc = ConvexCombinationAnsatz::new(3, 2, 2).unwrap();
        assert_eq!((cc.n_born_params(), cc.n_params()), (6, 12));
        assert!(PurificationAnsatz::new(2, 1, 1).is_err());
    }

    #[test]
    fn zero_parameters_give_the_zero_state() {
        let a = PurificationAnsatz::new(2, 2, 3).unwrap();
        let rho = a.state(&vec![0.0; a.n_params()]).unwrap();
        assert!((rho.matrix()[(0, 0)].re - 1.0).abs() < 1e-15);
        assert!((rho.exact_purity() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bell_pair_purification_is_maximally_mixed() {
        let mut c = ParamCircuit::new(2);
        c.rotation(Axis::Y, 0).unwrap();
        c.cnot(0, 1).unwrap();
        let a = PurificationAnsatz::with_circuit(1, 1, c).unwrap();
        let rho = a.state(&[PI / 2.0]).unwrap();
        assert!((rho.matrix() - DensityMatrix::maximally_mixed(1).matrix()).norm() < 1e-15);
    }

    #[test]
    fn born_distributions() {
        let cc = ConvexCombinationAnsatz::with_circuits(ParamCircuit::new(2), ParamCircuit::new(2)).unwrap();
        assert_eq!(cc.born_distribution(&[]).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let mut b = ParamCircuit::new(1);
        b.rotation(Axis::Y, 0).unwrap();
        let cc1 = ConvexCombinationAnsatz::with_circuits(b, ParamCircuit::new(1)).unwrap();
        let p = cc1.born_distribution(&[PI / 2.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert!(matches!(cc1.born_distribution(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn cc_fixed_points() {
        let mut b = ParamCircuit::new(2);
        b.rotation(Axis::Y, 0).unwrap();
        b.rotation(Axis::Y, 1).unwrap();
        let cc = ConvexCombinationAnsatz::with_circuits(b, ry_cz_circuit(2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gamma = random_params(4, &mut rng);
        let uniform = cc.state(&[PI / 2.0, PI / 2.0], &gamma).unwrap();
        assert!((uniform.matrix() - DensityMatrix::maximally_mixed(2).matrix()).norm() < 1e-14);
        let point = cc.state(&[0.0, 0.0], &[0.0; 4]).unwrap();
        assert!((point.matrix() - DensityMatrix::from_pure(&StateVector::zero(2)).matrix()).norm() < 1e-15);
    }

    #[test]
    fn collision_test_examples() {
        assert_eq!(collision_purity_of(&[0.0, 1.0, 0.0], 10, 3).unwrap(), 1.0);
        assert_eq!(collision_purity_of(&[1.0], 2, 3).unwrap(), 1.0);
        assert!(matches!(collision_purity_of(&[0.5, 0.5], 1, 3), Err(Error::Input(_))));
        let mut ok_uniform = 0;
        let mut ok_skewed = 0;
        for seed in 0..100 {
            ok_uniform += ((collision_purity_of(&[0.25; 4], 1_000_000, seed).unwrap() - 0.25).abs() <= 5e-3) as usize;
            ok_skewed += ((collision_purity_of(&[0.75, 0.25], 1_000_000, seed).unwrap() - 0.625).abs() <= 5e-3) as usize;
        }
        assert!(ok_uniform >= 99 && ok_skewed >= 99, "{ok_uniform} {ok_skewed}");
    }

    #[test]
    fn collision_test_is_unbiased() {
        let p = [0.5, 0.3, 0.15, 0.05];
        let exact: f64 = p.iter().map(|x| x * x).sum();
        let xs: Vec<f64> = (0..1000).map(|s| collision_purity_of(&p, 200, s).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((mean - exact).abs() < 3.0 * (var / xs.len() as f64).sqrt());
    }

    #[test]
    fn sampled_cc_expectation() {
        let z = PauliHamiltonian::new(1, [("Z".parse::<PauliString>().unwrap(), 1.0)]).unwrap();
        let point = ConvexCombinationAnsatz::new(1, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(cc_expectation_sampled(&z, &point, &[0.0], &[0.0], 100, &mut rng).unwrap(), 1.0);

        let tfi = PauliHamiltonian::tfi_uniform(2).unwrap();
        let mut b = ParamCircuit::new(2);
        b.rotation(Axis::Y, 0).unwrap();
        b.rotation(Axis::Y, 1).unwrap();
        let uniform = ConvexCombinationAnsatz::with_circuits(b, ry_cz_circuit(2, 2)).unwrap();
        let gamma = random_params(4, &mut rng);
        let e = cc_expectation_sampled(&tfi, &uniform, &[PI / 2.0, PI / 2.0], &gamma, 100_000, &mut rng).unwrap();
        assert!(e.abs() < 3.0 * 3.0 / (100_000f64).sqrt());

        let cc = ConvexCombinationAnsatz::new(2, 2, 2).unwrap();
        let params = random_params(cc.n_params(), &mut rng);
        let (phi, gamma) = cc.split(&params).unwrap();
        let exact = exact_expectation(&tfi, &cc.state(phi, gamma).unwrap()).unwrap();
        let shots = 1_000_000;
        let got = cc_expectation_sampled(&tfi, &cc, phi, gamma, shots, &mut rng).unwrap();
        // Each of the three terms has variance at most 1/shots.
        let se = (3.0 / shots as f64).sqrt();
        assert!((got - exact).abs() < 3.0 * se, "{got} vs {exact}");
    }

    proptest! {
        #[test]
        fn purification_purity_bounds(n_r in 1usize..3, extra in 0usize..2, layers in 1usize..4, seed in any::<u64>()) {
            let n_s = n_r + extra;
            let a = PurificationAnsatz::new(n_r, n_s, layers).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = a.state(&random_params(a.n_params(), &mut rng)).unwrap();
            let p = rho.exact_purity();
            prop_assert!(p >= 0.5f64.powi(n_r as i32) - 1e-12 && p <= 1.0 + 1e-12);
            prop_assert!((rho.trace() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn convex_combination_spectrum_is_born_distribution(n in 1usize..4, seed in any::<u64>()) {
            let cc = ConvexCombinationAnsatz::new(n, 2, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = random_params(cc.n_params(), &mut rng);
            let (phi, gamma) = cc.split(&params).unwrap();
            let mut p = cc.born_distribution(phi).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            let rho = cc.state(phi, gamma).unwrap();
            let sum_sq: f64 = p.iter().map(|x| x * x).sum();
            prop_assert!((rho.exact_purity() - sum_sq).abs() < 1e-10);
            prop_assert!((rho.trace() - 1.0).abs() < 1e-12);
            p.sort_by(f64::total_cmp);
            let eig = rho.eigenvalues();
            for (a, b) in eig.iter().zip(&p) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
