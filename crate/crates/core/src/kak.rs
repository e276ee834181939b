//! Fifteen-parameter form of two-qubit unitaries.
//!
//! ```text
//!   U ≃ (A₁ ⊗ A₂) · exp(i(k_x XX + k_y YY + k_z ZZ)) · (B₁ ⊗ B₂)
//! ```
//!
//! Parameters are laid out as `[A₁(3), A₂(3), k_x, k_y, k_z, B₁(3), B₂(3)]`,
//! each local factor being `Rz(φ)·Ry(θ)·Rz(λ)` with angles `(φ, θ, λ)`.
//! Decomposition recovers `U` up to global phase, with
//! `π/4 ≥ k_x ≥ k_y ≥ |k_z|`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::{Matrix4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{input, Error, Result};
use crate::linalg::{haar_unitary, kron2, pauli_x, pauli_y, pauli_z, to_fixed4, Mat2, Mat4, C64, I, ONE, ZERO};
use crate::sim::{rotation, Axis};

pub const KAK_PARAMS: usize = 15;

const UNITARY_TOL: f64 = 1e-8;

pub fn euler_zyz(phi: f64, theta: f64, lambda: f64) -> Mat2 {
    rotation(Axis::Z, phi) * rotation(Axis::Y, theta) * rotation(Axis::Z, lambda)
}

/// ZYZ angles `(φ, θ, λ)` of a single-qubit unitary, ignoring its phase.
pub fn zyz_angles(u: &Mat2) -> [f64; 3] {
    let (c, s) = (u[(0, 0)].norm(), u[(1, 0)].norm());
    let theta = 2.0 * s.atan2(c);
    if s < 1e-14 {
        [u[(1, 1)].arg() - u[(0, 0)].arg(), theta, 0.0]
    } else if c < 1e-14 {
        [u[(1, 0)].arg() - (-u[(0, 1)]).arg(), theta, 0.0]
    } else {
        [u[(1, 0)].arg() - u[(0, 0)].arg(), theta, u[(1, 1)].arg() - u[(1, 0)].arg()]
    }
}

/// `exp(i(k_x XX + k_y YY + k_z ZZ))` in closed form.
pub fn interaction(kx: f64, ky: f64, kz: f64) -> Mat4 {
    let even = C64::from_polar(1.0, kz);
    let odd = C64::from_polar(1.0, -kz);
    let (ce, se) = ((kx - ky).cos(), (kx - ky).sin());
    let (co, so) = ((kx + ky).cos(), (kx + ky).sin());
    let mut m = Mat4::zeros();
    m[(0, 0)] = even * ce;
    m[(3, 3)] = even * ce;
    m[(0, 3)] = even * I * se;
    m[(3, 0)] = even * I * se;
    m[(1, 1)] = odd * co;
    m[(2, 2)] = odd * co;
    m[(1, 2)] = odd * I * so;
    m[(2, 1)] = odd * I * so;
    m
}

pub fn kak_unitary(params: &[f64]) -> Result<Mat4> {
    if params.len() != KAK_PARAMS {
        return input(format!("KAK block takes {KAK_PARAMS} parameters, got {}", params.len()));
    }
    let p = params;
    let a = kron2(&euler_zyz(p[0], p[1], p[2]), &euler_zyz(p[3], p[4], p[5]));
    let b = kron2(&euler_zyz(p[9], p[10], p[11]), &euler_zyz(p[12], p[13], p[14]));
    Ok(a * interaction(p[6], p[7], p[8]) * b)
}

/// Haar-random two-qubit unitary.
pub fn random_unitary4<R: Rng + ?Sized>(rng: &mut R) -> Mat4 {
    to_fixed4(&haar_unitary(4, rng))
}

fn magic() -> Mat4 {
    let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
    let (o, z, i) = (ONE * s, ZERO, I * s);
    Matrix4::new(o, z, z, i, z, i, o, z, z, i, -o, z, o, z, z, -i)
}

/// Splits `u ≃ a ⊗ b` into its factors, each rescaled to unit determinant.
fn split_product(u: &Mat4) -> (Mat2, Mat2) {
    let block = |r: usize, c: usize| Mat2::new(u[(r, c)], u[(r, c + 1)], u[(r + 1, c)], u[(r + 1, c + 1)]);
    let b = [(0, 0), (0, 2), (2, 0), (2, 2)]
        .into_iter()
        .map(|(r, c)| block(r, c))
        .max_by(|x, y| x.determinant().norm().total_cmp(&y.determinant().norm()))
        .expect("four blocks");
    let b = b / b.determinant().sqrt();
    let t = u * kron2(&Mat2::identity(), &b.adjoint());
    let a = Mat2::new(t[(0, 0)], t[(0, 2)], t[(2, 0)], t[(2, 2)]);
    let a = a / a.determinant().sqrt();
    (a, b)
}

/// Running decomposition `U ≃ (A₁⊗A₂)·N(k)·(B₁⊗B₂)` during canonicalisation.
struct Parts {
    a: (Mat2, Mat2),
    k: [f64; 3],
    b: (Mat2, Mat2),
}

impl Parts {
    /// Moves a conjugation `N(k) = V† N(k') V` into the local factors.
    fn conjugate(&mut self, v: (Mat2, Mat2)) {
        self.a = (self.a.0 * v.0.adjoint(), self.a.1 * v.1.adjoint());
        self.b = (v.0 * self.b.0, v.1 * self.b.1);
    }

    /// Brings `k[axis]` into `(−π/4, π/4]` using `exp(i(π/2)PP) = i·PP`.
    fn reduce(&mut self, axis: usize, p: Mat2) {
        while self.k[axis] > FRAC_PI_4 {
            self.k[axis] -= FRAC_PI_2;
            self.b = (p * self.b.0, p * self.b.1);
        }
        while self.k[axis] <= -FRAC_PI_4 {
            self.k[axis] += FRAC_PI_2;
            self.b = (p * self.b.0, p * self.b.1);
        }
    }

    fn swap(&mut self, i: usize, j: usize) {
        let s = Mat2::new(ONE, ZERO, ZERO, I);
        let h = Mat2::new(ONE, ONE, ONE, -ONE) / C64::from(2f64.sqrt());
        let rx = rotation(Axis::X, FRAC_PI_2);
        let v = match (i.min(j), i.max(j)) {
            (0, 1) => s,
            (1, 2) => rx,
            (0, 2) => h,
            _ => unreachable!("axes are 0, 1, 2"),
        };
        self.conjugate((v, v));
        self.k.swap(i, j);
    }

    fn params(&self) -> [f64; KAK_PARAMS] {
        let mut out = [0.0; KAK_PARAMS];
        out[0..3].copy_from_slice(&zyz_angles(&self.a.0));
        out[3..6].copy_from_slice(&zyz_angles(&self.a.1));
        out[6..9].copy_from_slice(&self.k);
        out[9..12].copy_from_slice(&zyz_angles(&self.b.0));
        out[12..15].copy_from_slice(&zyz_angles(&self.b.1));
        out
    }
}

/// Real orthogonal `P` with `Pᵀ m P` diagonal, for complex symmetric
/// unitary `m`. Real and imaginary parts commute, so a generic real
/// combination of them shares their eigenvectors.
fn diagonalize_symmetric_unitary(m: &Mat4) -> Result<Matrix4<f64>> {
    let re = m.map(|z| z.re);
    let im = m.map(|z| z.im);
    let mut rng = ChaCha8Rng::seed_from_u64(0x004b_414b);
    for _ in 0..100 {
        let (r1, r2): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mut p = SymmetricEigen::new(re * r1 + im * r2).eigenvectors;
        let d = p.transpose().map(C64::from) * m * p.map(C64::from);
        let off: f64 = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| d[(i, j)].norm())
            .fold(0.0, f64::max);
        if off < 1e-10 {
            if p.determinant() < 0.0 {
                p.column_mut(0).neg_mut();
            }
            return Ok(p);
        }
    }
    Err(Error::Numeric("could not diagonalize the KAK magic-basis square".into()))
}

/// Parameters whose [`kak_unitary`] equals `u` up to global phase.
pub fn kak_decompose(u: &Mat4) -> Result<[f64; KAK_PARAMS]> {
    let err = (u.adjoint() * u - Mat4::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !(err <= UNITARY_TOL) {
        return input(format!("KAK input is not unitary (error {err:e})"));
    }
    let u = u / u.determinant().powf(0.25);
    let m = magic();
    let up = m.adjoint() * u * m;
    let m2 = up.transpose() * up;
    let p = diagonalize_symmetric_unitary(&m2)?;
    let pc = p.map(C64::from);
    let d = pc.transpose() * m2 * pc;
    let mut theta: [f64; 4] = std::array::from_fn(|j| d[(j, j)].arg() / 2.0);
    let half = |theta: &[f64; 4]| Mat4::from_diagonal(&nalgebra::Vector4::from_fn(|j, _| C64::from_polar(1.0, theta[j])));
    let mut o1 = up * pc * half(&theta).adjoint();
    if o1.map(|z| z.re).determinant() < 0.0 {
        theta[0] += PI;
        o1 = up * pc * half(&theta).adjoint();
    }
    let k1 = m * o1 * m.adjoint();
    let k2 = m * pc.transpose() * m.adjoint();

    let coefficient = |pauli: Mat2| {
        let v = m.adjoint() * kron2(&pauli, &pauli) * m;
        (0..4).map(|j| theta[j] * v[(j, j)].re).sum::<f64>() / 4.0
    };
    let mut parts = Parts {
        a: split_product(&k1),
        k: [coefficient(pauli_x()), coefficient(pauli_y()), coefficient(pauli_z())],
        b: split_product(&k2),
    };

    for (axis, p) in [pauli_x(), pauli_y(), pauli_z()].into_iter().enumerate() {
        parts.reduce(axis, p);
    }
    for (i, j) in [(0, 1), (1, 2), (0, 1)] {
        if parts.k[i].abs() < parts.k[j].abs() {
            parts.swap(i, j);
        }
    }
    if parts.k[0] < 0.0 {
        parts.k[0] = -parts.k[0];
        parts.k[2] = -parts.k[2];
        parts.conjugate((pauli_y(), Mat2::identity()));
    }
    if parts.k[1] < 0.0 {
        parts.k[1] = -parts.k[1];
        parts.k[2] = -parts.k[2];
        parts.conjugate((pauli_x(), Mat2::identity()));
    }
    Ok(parts.params())
}
