//! The dual objective, its penalty decomposition, and the plain VQE energy.
//!
//! Expanding `‖H − ηI − νω‖²` with `Tr[ω] = 1` gives
//!
//! ```text
//!   f = η − c (Tr[H²] + η²2ⁿ + ν²Tr[ω²] − 2ηTr[H] − 2νTr[Hω] + 2ην)
//! ```
//!
//! so the state enters only through `Tr[Hω]` and `Tr[ω²]`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::ansatz::{cc_expectation_sampled, collision_purity, distribution_sampler, ConvexCombinationAnsatz, PurificationAnsatz};
use crate::error::{input, Result};
use crate::hamiltonian::PauliHamiltonian;
use crate::linalg::{CMatrix, C64};
use crate::sim::{self, exact_expectation, DensityMatrix, ParamCircuit, ShotMode, ShotModel};

/// A Hamiltonian together with the traces the objective needs.
#[derive(Debug, Clone)]
pub struct DualProblem {
    h: PauliHamiltonian,
    dim: f64,
    tr_h: f64,
    tr_h2: f64,
}

impl DualProblem {
    pub fn new(h: PauliHamiltonian) -> Self {
        DualProblem { dim: h.dim(), tr_h: h.trace(), tr_h2: h.trace_sq(), h }
    }

    pub fn hamiltonian(&self) -> &PauliHamiltonian {
        &self.h
    }

    pub fn n_qubits(&self) -> usize {
        self.h.n_qubits()
    }

    pub fn dim(&self) -> f64 {
        self.dim
    }

    pub fn trace(&self) -> f64 {
        self.tr_h
    }

    pub fn trace_sq(&self) -> f64 {
        self.tr_h2
    }
}

/// Optimization variables of the dual problem and the current penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub eta: f64,
    pub nu: f64,
    pub params: Vec<f64>,
    pub c: f64,
}

impl DualPoint {
    pub fn validate(&self) -> Result<()> {
        check_scalars(self.nu, self.c)
    }
}

fn check_scalars(nu: f64, c: f64) -> Result<()> {
    if !(nu >= 0.0) {
        return input(format!("ν must be non-negative, got {nu}"));
    }
    if !(c > 0.0) {
        return input(format!("penalty c must be positive, got {c}"));
    }
    Ok(())
}

/// `Tr[Hω]` and `Tr[ω²]`, exact or estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub expectation: f64,
    pub purity: f64,
}

/// The six penalty terms in the order of the expanded norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyTerms {
    pub tr_h2: f64,
    pub eta_sq_dim: f64,
    pub nu_sq_purity: f64,
    pub minus_two_eta_tr_h: f64,
    pub minus_two_nu_expectation: f64,
    pub two_eta_nu: f64,
}

impl PenaltyTerms {
    pub fn sum(&self) -> f64 {
        self.tr_h2 + self.eta_sq_dim + self.nu_sq_purity + self.minus_two_eta_tr_h + self.minus_two_nu_expectation + self.two_eta_nu
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    pub f: f64,
    pub objective: f64,
    pub penalty: f64,
    pub terms: PenaltyTerms,
}

pub fn breakdown_from_moments(problem: &DualProblem, eta: f64, nu: f64, c: f64, m: Moments) -> Result<ObjectiveBreakdown> {
    check_scalars(nu, c)?;
    let terms = PenaltyTerms {
        tr_h2: problem.tr_h2,
        eta_sq_dim: eta * eta * problem.dim,
        nu_sq_purity: nu * nu * m.purity,
        minus_two_eta_tr_h: -2.0 * eta * problem.tr_h,
        minus_two_nu_expectation: -2.0 * nu * m.expectation,
        two_eta_nu: 2.0 * eta * nu,
    };
    let penalty = terms.sum();
    Ok(ObjectiveBreakdown { f: eta - c * penalty, objective: eta, penalty, terms })
}

/// Maximizer of `f` over `(η, ν)` for fixed moments, where `f` is a concave
/// quadratic. `None` when the maximizer has `ν ≤ 0` or the quadratic is
/// degenerate (`2ⁿ·P = 1`); on that boundary the ansatz gradient vanishes.
pub fn optimal_dual(problem: &DualProblem, c: f64, m: Moments) -> Option<(f64, f64)> {
    let d = problem.dim;
    let det = d * m.purity - 1.0;
    if !(c > 0.0) || !(det > 1e-12) {
        return None;
    }
    let nu = (d * m.expectation - problem.tr_h - 0.5 / c) / det;
    (nu > 0.0).then_some((m.expectation - nu * m.purity, nu))
}

/// A parameterized family of mixed states `ω(θ)`.
pub trait MixedStateModel {
    fn n_qubits(&self) -> usize;
    fn n_params(&self) -> usize;
    fn density(&self, params: &[f64]) -> Result<DensityMatrix>;
    /// Moments as an experiment would report them under `shot`.
    fn moments(&self, h: &PauliHamiltonian, params: &[f64], shot: &mut ShotModel) -> Result<Moments>;
}

fn exact_moments(h: &PauliHamiltonian, rho: &DensityMatrix) -> Result<Moments> {
    Ok(Moments { expectation: exact_expectation(h, rho)?, purity: rho.exact_purity() })
}

impl MixedStateModel for PurificationAnsatz {
    fn n_qubits(&self) -> usize {
        self.n_system()
    }

    fn n_params(&self) -> usize {
        PurificationAnsatz::n_params(self)
    }

    fn density(&self, params: &[f64]) -> Result<DensityMatrix> {
        self.state(params)
    }

    /// Sampled purity comes from the swap test on two copies of `ω`.
    fn moments(&self, h: &PauliHamiltonian, params: &[f64], shot: &mut ShotModel) -> Result<Moments> {
        let rho = self.state(params)?;
        if shot.is_exact() {
            return exact_moments(h, &rho);
        }
        Ok(Moments { expectation: sim::expectation(h, &rho, shot)?, purity: sim::purity(&rho, shot) })
    }
}

impl MixedStateModel for ConvexCombinationAnsatz {
    fn n_qubits(&self) -> usize {
        ConvexCombinationAnsatz::n_qubits(self)
    }

    fn n_params(&self) -> usize {
        ConvexCombinationAnsatz::n_params(self)
    }

    fn density(&self, params: &[f64]) -> Result<DensityMatrix> {
        self.state_flat(params)
    }

    /// Sampled purity comes from a collision test on Born-machine samples.
    fn moments(&self, h: &PauliHamiltonian, params: &[f64], shot: &mut ShotModel) -> Result<Moments> {
        let (phi, gamma) = self.split(params)?;
        match shot.mode {
            ShotMode::Exact => exact_moments(h, &self.state(phi, gamma)?),
            ShotMode::Sampled => {
                let shots = shot.shots;
                let expectation = cc_expectation_sampled(h, self, phi, gamma, shots, shot.rng())?;
                let p = self.born_distribution(phi)?;
                let sample = distribution_sampler(&p)?;
                let samples = shot.purity_shots.max(2);
                let purity = collision_purity(|r: &mut rand_chacha::ChaCha8Rng| sample(r), samples, shot.rng())?;
                Ok(Moments { expectation, purity })
            }
            ShotMode::Gaussian => {
                let rho = self.state(phi, gamma)?;
                let expectation = sim::expectation(h, &rho, shot)?;
                let p = rho.exact_purity();
                let pairs = (shot.purity_shots / 2).max(1) as f64;
                let z: f64 = shot.rng().sample(StandardNormal);
                Ok(Moments { expectation, purity: p + z * (p * (1.0 - p)).max(0.0).sqrt() / pairs.sqrt() })
            }
        }
    }
}

/// A parameter-free model holding one fixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedState(pub DensityMatrix);

impl MixedStateModel for FixedState {
    fn n_qubits(&self) -> usize {
        self.0.n_qubits()
    }

    fn n_params(&self) -> usize {
        0
    }

    fn density(&self, params: &[f64]) -> Result<DensityMatrix> {
        if !params.is_empty() {
            return input("a fixed state takes no parameters");
        }
        Ok(self.0.clone())
    }

    fn moments(&self, h: &PauliHamiltonian, params: &[f64], shot: &mut ShotModel) -> Result<Moments> {
        let rho = self.density(params)?;
        if shot.is_exact() {
            return exact_moments(h, &rho);
        }
        Ok(Moments { expectation: sim::expectation(h, &rho, shot)?, purity: sim::purity(&rho, shot) })
    }
}

pub fn dual_objective<M: MixedStateModel + ?Sized>(
    problem: &DualProblem,
    point: &DualPoint,
    model: &M,
    shot: &mut ShotModel,
) -> Result<ObjectiveBreakdown> {
    point.validate()?;
    if model.n_qubits() != problem.n_qubits() {
        return input(format!("ansatz acts on {} qubits but H on {}", model.n_qubits(), problem.n_qubits()));
    }
    let m = model.moments(&problem.h, &point.params, shot)?;
    breakdown_from_moments(problem, point.eta, point.nu, point.c, m)
}

/// `‖H − ηI − νω‖²` by dense subtraction.
pub fn slack_residual(h: &PauliHamiltonian, eta: f64, nu: f64, omega: &DensityMatrix) -> Result<f64> {
    if omega.n_qubits() != h.n_qubits() {
        return input("state and Hamiltonian qubit counts differ");
    }
    let d = 1usize << h.n_qubits();
    let r: CMatrix = h.to_dense()? - CMatrix::identity(d, d) * C64::from(eta) - omega.matrix() * C64::from(nu);
    Ok(r.norm_squared())
}

/// `⟨ψ(θ)|H|ψ(θ)⟩`, exact or estimated.
pub fn vqe_objective(h: &PauliHamiltonian, circuit: &ParamCircuit, theta: &[f64], shot: &mut ShotModel) -> Result<f64> {
    let psi = circuit.run(theta)?;
    sim::expectation(h, &psi, shot)
}
