//! MPS to circuit translation.
//!
//! A [`UnitaryLayer`] on `n` qubits is a staircase of two-qubit blocks on
//! `(0,1), (1,2), …, (n−2,n−1)`, applied in that order. A translation is a
//! list of layers in application order acting on `|0…0⟩`. Fidelities are
//! `|⟨ψ|C|0…0⟩|²` for the normalized target `ψ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{input, Error, Result};
use crate::kak::{kak_decompose, KAK_PARAMS};
use crate::linalg::{closest_unitary, complete_isometry, haar_unitary, to_dynamic4, to_fixed4, unitarity_error, CMatrix, Mat4, C64, ONE, ZERO};
use crate::mps::{Mps, SiteTensor};
use crate::sim::{ParamCircuit, StateVector};

#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryLayer {
    n: usize,
    blocks: Vec<Mat4>,
}

impl UnitaryLayer {
    pub fn new(n: usize, blocks: Vec<Mat4>) -> Result<Self> {
        if n < 2 || blocks.len() != n - 1 {
            return input(format!("a staircase on {n} qubits needs {} blocks, got {}", n.saturating_sub(1), blocks.len()));
        }
        for (i, b) in blocks.iter().enumerate() {
            let err = unitarity_error(&to_dynamic4(b));
            if err > 1e-10 {
                return input(format!("block {i} is not unitary (error {err:.2e})"));
            }
        }
        Ok(UnitaryLayer { n, blocks })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(n, vec![Mat4::identity(); n.saturating_sub(1)])
    }

    pub fn random(n: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::new(n, (1..n).map(|_| to_fixed4(&haar_unitary(4, rng))).collect())
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    /// Block `i` acts on qubits `(i, i+1)`.
    pub fn blocks(&self) -> &[Mat4] {
        &self.blocks
    }

    pub fn apply(&self, state: &mut StateVector) {
        for (i, b) in self.blocks.iter().enumerate() {
            state.apply_2q(i, i + 1, b);
        }
    }

    pub fn apply_adjoint(&self, state: &mut StateVector) {
        for (i, b) in self.blocks.iter().enumerate().rev() {
            state.apply_2q(i, i + 1, &b.adjoint());
        }
    }
}

/// `C|0…0⟩` with `layers` applied in order.
pub fn prepare(n: usize, layers: &[UnitaryLayer]) -> Result<StateVector> {
    let mut s = StateVector::zero(n);
    for l in layers {
        if l.n != n {
            return input("layer size does not match the register");
        }
        l.apply(&mut s);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    DAll,
    OAll,
    DAllOAll,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::DAll => "D_all",
            Variant::OAll => "O_all",
            Variant::DAllOAll => "D_allO_all",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationResult {
    pub variant: Variant,
    /// Application order.
    pub layers: Vec<UnitaryLayer>,
    pub fidelity: f64,
    /// Fidelity after each AD layer or OD block update, starting with the
    /// initial circuit.
    pub history: Vec<f64>,
}

fn dense_target(target: &Mps) -> Result<StateVector> {
    target.to_dense()
}

fn check_bonds(mps: &Mps) -> Result<()> {
    if mps.n_sites() < 2 {
        return input("a staircase layer needs at least two qubits");
    }
    if mps.max_bond() > 2 {
        return input(format!("bond dimension {} exceeds 2", mps.max_bond()));
    }
    Ok(())
}

/// Single layer `L` with `L|0…0⟩ = ψ` for an MPS with every bond ≤ 2.
///
/// In right-canonical form, block `k < n−2` maps `|l⟩|0⟩ ↦ Σ B_k[l,s,r]|s⟩|r⟩`
/// and the last block maps `|l⟩|0⟩` onto the merged tensor of the last two
/// sites. Columns for an ancilla input of `|1⟩` are completed
/// deterministically.
pub fn chi2_layer(mps: &Mps) -> Result<UnitaryLayer> {
    check_bonds(mps)?;
    let mut m = mps.canonicalized(0);
    m.normalize()?;
    let n = m.n_sites();
    let sites = m.sites();
    let mut blocks = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let (l, cols) = if k == n - 2 {
            let (a, b) = (&sites[k], &sites[k + 1]);
            let merged = a.left_matrix() * b.right_matrix();
            // merged[(x, s), t] with b's right bond 1.
            (a.left_dim(), CMatrix::from_fn(4, a.left_dim(), |row, x| merged[(x * 2 + row / 2, row % 2)]))
        } else {
            let t: &SiteTensor = &sites[k];
            let r = t.right_dim();
            (t.left_dim(), CMatrix::from_fn(4, t.left_dim(), |row, x| if row % 2 < r { t.get(x, row / 2, row % 2) } else { ZERO }))
        };
        let full = complete_isometry(&cols);
        // Given columns belong at inputs |l⟩|0⟩ = 2l; the completion fills 2l+1.
        let mut u = Mat4::zeros();
        let mut extra = l;
        for j in 0..4 {
            let src = if j % 2 == 0 && j / 2 < l {
                j / 2
            } else {
                let e = extra;
                extra += 1;
                e
            };
            for i in 0..4 {
                u[(i, j)] = full[(i, src)];
            }
        }
        blocks.push(u);
    }
    UnitaryLayer::new(n, blocks)
}

/// `⟨0…0|ψ⟩` of an MPS.
fn zero_amplitude(mps: &Mps) -> C64 {
    let mut v = vec![ONE];
    for t in mps.sites() {
        v = (0..t.right_dim()).map(|b| (0..t.left_dim()).map(|a| v[a] * t.get(a, 0, b)).sum()).collect();
    }
    v[0]
}

fn apply_layer_adjoint(mps: &mut Mps, layer: &UnitaryLayer) -> Result<()> {
    for (i, b) in layer.blocks.iter().enumerate().rev() {
        mps.apply_two_site(i, &b.adjoint())?;
    }
    Ok(())
}

/// Iterated disentangling: truncate to χ=2, convert to a layer, undo that
/// layer on the exact state, until `max_layers` layers or fidelity `target`.
pub fn analytic_decomposition(target: &Mps, max_layers: usize, target_fidelity: f64) -> Result<TranslationResult> {
    if !(target_fidelity > 0.0 && target_fidelity <= 1.0) {
        return input("target fidelity must lie in (0, 1]");
    }
    let mut psi = target.canonicalized(0);
    psi.normalize()?;
    let mut fidelity = zero_amplitude(&psi).norm_sqr();
    let mut history = vec![fidelity];
    let mut peeled = Vec::new();
    while peeled.len() < max_layers && fidelity < target_fidelity {
        let truncated = psi.truncate(2)?;
        let layer = chi2_layer(&truncated.mps)?;
        apply_layer_adjoint(&mut psi, &layer)?;
        psi.normalize()?;
        fidelity = zero_amplitude(&psi).norm_sqr();
        history.push(fidelity);
        peeled.push(layer);
    }
    peeled.reverse();
    Ok(TranslationResult { variant: Variant::DAll, layers: peeled, fidelity, history })
}

/// Blocks of `layers` in application order as `(first qubit, unitary)`.
fn flatten(layers: &[UnitaryLayer]) -> Vec<(usize, Mat4)> {
    layers.iter().flat_map(|l| l.blocks.iter().copied().enumerate()).collect()
}

fn unflatten(n: usize, blocks: &[(usize, Mat4)]) -> Result<Vec<UnitaryLayer>> {
    blocks.chunks(n - 1).map(|c| UnitaryLayer::new(n, c.iter().map(|&(_, u)| u).collect())).collect()
}

/// `F[i, j] = Σ_rest b[i, rest] · conj(a[j, rest])` over the pair `(q, q+1)`,
/// so that `Tr[U†F] = ⟨a|U†|b⟩`.
fn pair_environment(a: &StateVector, b: &StateVector, q: usize) -> CMatrix {
    let n = a.n_qubits();
    let (s0, s1) = (n - 1 - q, n - 2 - q);
    let mask = (1usize << s0) | (1usize << s1);
    let (av, bv) = (a.amplitudes(), b.amplitudes());
    let mut f = CMatrix::zeros(4, 4);
    for base in (0..av.len()).filter(|j| j & mask == 0) {
        let idx = |k: usize| base | ((k >> 1) << s0) | ((k & 1) << s1);
        for i in 0..4 {
            let bi = bv[idx(i)];
            if bi == ZERO {
                continue;
            }
            for j in 0..4 {
                f[(i, j)] += bi * av[idx(j)].conj();
            }
        }
    }
    f
}

/// States before (`a_m = U_{m−1}⋯U_1|0⟩`) and behind
/// (`b_m = U_{m+1}†⋯U_M†|ψ⟩`) every block.
fn back_states(blocks: &[(usize, Mat4)], psi: &StateVector) -> Vec<StateVector> {
    let mut out = vec![psi.clone(); blocks.len()];
    for m in (0..blocks.len().saturating_sub(1)).rev() {
        let mut s = out[m + 1].clone();
        let (q, u) = &blocks[m + 1];
        s.apply_2q(*q, *q + 1, &u.adjoint());
        out[m] = s;
    }
    out
}

/// Environment of block `m` (application order across all layers) in the
/// amplitude `⟨0|Π U†|ψ⟩ = Tr[U_m† F_m]`.
pub fn environment_tensor(layers: &[UnitaryLayer], m: usize, target: &Mps) -> Result<Mat4> {
    let blocks = flatten(layers);
    if m >= blocks.len() {
        return input(format!("block index {m} out of range for {} blocks", blocks.len()));
    }
    let psi = dense_target(target)?;
    let n = psi.n_qubits();
    if layers.iter().any(|l| l.n != n) {
        return input("layer size does not match the target");
    }
    let mut a = StateVector::zero(n);
    for (q, u) in &blocks[..m] {
        a.apply_2q(*q, *q + 1, u);
    }
    let b = back_states(&blocks, &psi).swap_remove(m);
    Ok(to_fixed4(&pair_environment(&a, &b, blocks[m].0)))
}

/// `polar((1−β)U + β·polar(F))`; `β = 1` takes the locally optimal block.
pub fn od_update(u: &Mat4, env: &Mat4, beta: f64) -> Result<Mat4> {
    if !(beta > 0.0 && beta <= 1.0) {
        return input("OD learning rate must lie in (0, 1]");
    }
    let u_new = closest_unitary(&to_dynamic4(env));
    if beta == 1.0 {
        return Ok(to_fixed4(&u_new));
    }
    let mixed = to_dynamic4(u) * C64::from(1.0 - beta) + u_new * C64::from(beta);
    Ok(to_fixed4(&closest_unitary(&mixed)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdConfig {
    pub sweeps: usize,
    pub target_fidelity: f64,
    pub beta: f64,
}

impl OdConfig {
    /// Sweeps sized so that about `block_updates` single-block updates run.
    pub fn with_budget(block_updates: usize, n_blocks: usize) -> Self {
        OdConfig { sweeps: block_updates.div_ceil(n_blocks.max(1)), target_fidelity: 0.999, beta: 0.2 }
    }
}

/// Sweeps over all blocks in application order, replacing each with the
/// damped SVD projection of its environment.
pub fn optimizing_decomposition(init: &[UnitaryLayer], target: &Mps, cfg: &OdConfig) -> Result<TranslationResult> {
    if !(cfg.beta > 0.0 && cfg.beta <= 1.0) {
        return input("OD learning rate must lie in (0, 1]");
    }
    let psi = dense_target(target)?;
    let n = psi.n_qubits();
    let fid = |blocks: &[(usize, Mat4)]| -> Result<f64> { Ok(prepare(n, &unflatten(n, blocks)?)?.fidelity(&psi)) };
    if init.iter().any(|l| l.n != n) {
        return input("layer size does not match the target");
    }
    let mut blocks = flatten(init);
    let mut fidelity = if blocks.is_empty() { StateVector::zero(n).fidelity(&psi) } else { fid(&blocks)? };
    let mut history = vec![fidelity];
    let mut sweep = 0;
    while sweep < cfg.sweeps && fidelity < cfg.target_fidelity && !blocks.is_empty() {
        let behind = back_states(&blocks, &psi);
        let mut a = StateVector::zero(n);
        for m in 0..blocks.len() {
            let (q, u) = blocks[m];
            let env = pair_environment(&a, &behind[m], q);
            let updated = od_update(&u, &to_fixed4(&env), cfg.beta)?;
            let amp = (to_dynamic4(&updated).adjoint() * &env).trace();
            fidelity = amp.norm_sqr();
            history.push(fidelity);
            blocks[m].1 = updated;
            a.apply_2q(q, q + 1, &updated);
        }
        sweep += 1;
    }
    let layers = unflatten(n, &blocks)?;
    Ok(TranslationResult { variant: Variant::OAll, layers, fidelity, history })
}

/// What one OD iteration counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdAccounting {
    /// A sweep over every block.
    Sweep,
    /// A single block update.
    BlockUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslateConfig {
    pub layers: usize,
    pub ad_target_fidelity: f64,
    pub od_iterations: usize,
    pub od_accounting: OdAccounting,
    pub od_target_fidelity: f64,
    pub beta: f64,
    pub seed: u64,
}

impl TranslateConfig {
    pub fn new(seed: u64) -> Self {
        TranslateConfig {
            layers: 3,
            ad_target_fidelity: 0.999,
            od_iterations: 2000,
            od_accounting: OdAccounting::Sweep,
            od_target_fidelity: 0.999,
            beta: 0.2,
            seed,
        }
    }

    fn od(&self, n_blocks: usize) -> OdConfig {
        let sweeps = match self.od_accounting {
            OdAccounting::Sweep => self.od_iterations,
            OdAccounting::BlockUpdate => self.od_iterations.div_ceil(n_blocks.max(1)),
        };
        OdConfig { sweeps, target_fidelity: self.od_target_fidelity, beta: self.beta }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub best: TranslationResult,
    /// `D_all`, `O_all`, `D_allO_all` in that order.
    pub variants: Vec<TranslationResult>,
}

pub const TRANSLATION_HEADER: [&str; 3] = ["variant", "step", "fidelity"];

impl Translation {
    /// Fidelity history of every variant, one row per recorded step.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let csv_err = |e: csv::Error| Error::Resource(format!("writing translation: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRANSLATION_HEADER).map_err(csv_err)?;
        for v in &self.variants {
            for (step, f) in v.history.iter().enumerate() {
                w.write_record([v.variant.name().to_string(), step.to_string(), f.to_string()]).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::Resource(format!("writing translation: {e}")))
    }
}

/// Runs all three variants and keeps the highest fidelity (ties go to the
/// earlier variant).
pub fn translate(target: &Mps, cfg: &TranslateConfig) -> Result<Translation> {
    let n = target.n_sites();
    if n < 2 {
        return input("translation needs at least two qubits");
    }
    let d_all = analytic_decomposition(target, cfg.layers, cfg.ad_target_fidelity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let random: Vec<UnitaryLayer> = (0..cfg.layers).map(|_| UnitaryLayer::random(n, &mut rng)).collect::<Result<_>>()?;
    let mut o_all = optimizing_decomposition(&random, target, &cfg.od(random.len() * (n - 1)))?;
    o_all.variant = Variant::OAll;
    let mut warm = optimizing_decomposition(&d_all.layers, target, &cfg.od(d_all.layers.len() * (n - 1)))?;
    warm.variant = Variant::DAllOAll;
    let variants = vec![d_all, o_all, warm];
    let best = variants
        .iter()
        .fold(None::<&TranslationResult>, |best, r| match best {
            Some(b) if b.fidelity >= r.fidelity => Some(b),
            _ => Some(r),
        })
        .cloned()
        .ok_or_else(|| Error::Numeric("no translation variant produced a result".into()))?;
    Ok(Translation { best, variants })
}

/// KAK-lowers every block into a 15-parameter [`ParamCircuit`] block.
pub fn layers_to_param_circuit(n: usize, layers: &[UnitaryLayer]) -> Result<(ParamCircuit, Vec<f64>)> {
    let mut circuit = ParamCircuit::new(n);
    let mut params = Vec::with_capacity(KAK_PARAMS * layers.len() * n.saturating_sub(1));
    for l in layers {
        if l.n != n {
            return input("layer size does not match the register");
        }
        for (i, b) in l.blocks.iter().enumerate() {
            circuit.kak(i, i + 1)?;
            params.extend_from_slice(&kak_decompose(b)?);
        }
    }
    Ok((circuit, params))
}
