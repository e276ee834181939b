//! Bracketing ground-state energies of Pauli-sum Hamiltonians.
//!
//! Plain VQE bounds the ground-state energy from above. The dual objective
//!
//! ```text
//!   f(η, ν, θ, c) = η − c ‖H − ηI − ν ω(θ)‖²
//! ```
//!
//! approaches it from below as the penalty `c` grows. Mixed states `ω` come
//! either from a parameterized circuit ([`ansatz`]) or from a matrix product
//! state ([`mps`]); a trained MPS can be lowered to a circuit ([`translate`])
//! to warm-start the circuit optimization ([`pipeline`]).

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ansatz;
pub mod error;
pub mod hamiltonian;
pub mod kak;
pub mod linalg;
pub mod mps;
pub mod objective;
pub mod optimizer;
pub mod pipeline;
pub mod sim;
pub mod translate;

pub use error::{Error, Result};
