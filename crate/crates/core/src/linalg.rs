//! Small dense complex linear-algebra helpers shared by the simulators and
//! the circuit translation code.

use nalgebra::{DMatrix, Matrix2, Matrix4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Singular values below this are treated as exactly zero when projecting
/// onto the unitary group.
pub const RANK_TOL: f64 = 1e-12;

pub fn pauli_x() -> Mat2 {
    Mat2::new(ZERO, ONE, ONE, ZERO)
}

pub fn pauli_y() -> Mat2 {
    Mat2::new(ZERO, -I, I, ZERO)
}

pub fn pauli_z() -> Mat2 {
    Mat2::new(ONE, ZERO, ZERO, -ONE)
}

pub fn kron2(a: &Mat2, b: &Mat2) -> Mat4 {
    Mat4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

pub fn to_dynamic4(m: &Mat4) -> CMatrix {
    CMatrix::from_fn(4, 4, |r, c| m[(r, c)])
}

pub fn to_fixed4(m: &CMatrix) -> Mat4 {
    Mat4::from_fn(|r, c| m[(r, c)])
}

/// Largest entrywise deviation of `m†m` from the identity.
pub fn unitarity_error(m: &CMatrix) -> f64 {
    let n = m.ncols();
    let g = m.adjoint() * m;
    let mut worst = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            let target = if r == c { ONE } else { ZERO };
            worst = worst.max((g[(r, c)] - target).norm());
        }
    }
    worst
}

/// Largest entrywise deviation of `m` from `m†`.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

/// Frobenius distance between two equally sized unitaries after optimally
/// aligning their global phases: `min_φ ‖e^{iφ}a − b‖_F`.
pub fn phase_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let overlap = (a.adjoint() * b).trace();
    let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { ONE };
    (a * phase - b).norm()
}

/// Extends a matrix with orthonormal columns to a full unitary.
///
/// Candidate directions are the standard basis vectors in order, each
/// Gram-Schmidt orthogonalised (twice) against the current columns. The
/// first entry of every appended column with modulus above `RANK_TOL` is made
/// real and positive, so the completion is deterministic.
pub fn complete_isometry(cols: &CMatrix) -> CMatrix {
    let d = cols.nrows();
    let mut basis: Vec<Vec<C64>> = (0..cols.ncols())
        .map(|j| cols.column(j).iter().copied().collect())
        .collect();
    for e in 0..d {
        if basis.len() == d {
            break;
        }
        let mut v = vec![ZERO; d];
        v[e] = ONE;
        for _ in 0..2 {
            for b in &basis {
                let proj: C64 = b.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= proj * bi;
                }
            }
        }
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        fix_phase(&mut v);
        basis.push(v);
    }
    CMatrix::from_fn(d, d, |r, c| basis[c][r])
}

fn fix_phase(v: &mut [C64]) {
    if let Some(first) = v.iter().find(|x| x.norm() > RANK_TOL).copied() {
        let phase = first.conj() / first.norm();
        for x in v.iter_mut() {
            *x *= phase;
        }
    }
}

/// Unitary polar factor `W V†` of `m = W S V†`.
///
/// Singular directions whose singular value is below `RANK_TOL` (relative to
/// the largest) are not trusted from the SVD; both factors are instead
/// completed with [`complete_isometry`], which keeps the result reproducible
/// for rank-deficient inputs.
pub fn closest_unitary(m: &CMatrix) -> CMatrix {
    let d = m.nrows();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..s.len())
        .filter(|&i| smax > 0.0 && s[i] > RANK_TOL * smax.max(1.0))
        .collect();
    if keep.len() == d {
        return u * v_t;
    }
    let w_cols = CMatrix::from_fn(d, keep.len(), |r, c| u[(r, keep[c])]);
    let v_cols = CMatrix::from_fn(d, keep.len(), |r, c| v_t[(keep[c], r)].conj());
    let w = complete_isometry(&w_cols);
    let v = complete_isometry(&v_cols);
    w * v.adjoint()
}

/// Haar-random `d × d` unitary: QR of a complex Ginibre matrix with the
/// phases of `R`'s diagonal moved into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let g = CMatrix::from_fn(d, d, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { ONE };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}
