//! Gradient estimation, learning-rate and penalty schedules, and the VQE and
//! dual-VQE training loops.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{input, Error, Result};
use crate::hamiltonian::PauliHamiltonian;
use crate::objective::{breakdown_from_moments, DualPoint, DualProblem, MixedStateModel, Moments};
use crate::sim::{ParamCircuit, ShotModel};

pub const SPSA_DELTA: f64 = 0.05;
pub const FD_DELTA: f64 = 1e-6;
pub const VQE_LEARNING_RATE: f64 = 0.005;

/// Two-evaluation gradient estimate along a random ±1 direction `Δ`:
/// `g_i = [f(p + δΔ) − f(p − δΔ)] / (2δΔ_i)`.
pub fn spsa_gradient<R, F>(mut f: F, params: &[f64], delta: f64, rng: &mut R) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(delta > 0.0) {
        return input(format!("SPSA perturbation must be positive, got {delta}"));
    }
    if params.is_empty() {
        return Ok(Vec::new());
    }
    let dir: Vec<f64> = params.iter().map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let plus: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + delta * d).collect();
    let minus: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p - delta * d).collect();
    let (fp, fm) = (f(&plus)?, f(&minus)?);
    if !fp.is_finite() || !fm.is_finite() {
        return Err(Error::Numeric("SPSA evaluation returned a non-finite value".into()));
    }
    Ok(dir.iter().map(|d| (fp - fm) / (2.0 * delta * d)).collect())
}

/// Rescales `g` to unit norm when its norm exceeds one.
pub fn normalize_gradient(g: &[f64]) -> Vec<f64> {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1.0 {
        g.iter().map(|x| x / norm).collect()
    } else {
        g.to_vec()
    }
}

/// Least-squares slope of `values` against their index.
pub fn least_squares_slope(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let xbar = (n - 1) as f64 / 2.0;
    let ybar = values.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Uniform angles on `[0, 2π)`.
pub fn random_params<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect()
}

/// Current learning rates and penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub beta_omega: f64,
    pub beta_eta_nu: f64,
    pub c: f64,
}

/// Halve the rate on three consecutive checkpoint decreases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicSchedule {
    pub initial: f64,
    pub floor: f64,
    pub every: usize,
}

impl Default for BasicSchedule {
    fn default() -> Self {
        BasicSchedule { initial: 0.1, floor: 0.01, every: 100 }
    }
}

/// Slope-driven rate adaptation with optional penalty adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeSchedule {
    pub beta_omega: f64,
    pub beta_eta_nu: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub every: usize,
    pub adapt_penalty: bool,
    pub c_max: f64,
    pub penalty_slope_threshold: f64,
}

impl Default for SlopeSchedule {
    fn default() -> Self {
        SlopeSchedule {
            beta_omega: 3e-3,
            beta_eta_nu: 1e-3,
            beta_min: 1e-4,
            beta_max: 1e-3,
            every: 200,
            adapt_penalty: true,
            c_max: 40.0,
            penalty_slope_threshold: 5e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Fixed { beta_omega: f64, beta_eta_nu: f64 },
    Basic(BasicSchedule),
    Slope(SlopeSchedule),
}

impl Schedule {
    pub fn initial_state(&self, c: f64) -> ScheduleState {
        match *self {
            Schedule::Fixed { beta_omega, beta_eta_nu } => ScheduleState { beta_omega, beta_eta_nu, c },
            Schedule::Basic(b) => ScheduleState { beta_omega: b.initial, beta_eta_nu: b.initial, c },
            Schedule::Slope(s) => ScheduleState { beta_omega: s.beta_omega, beta_eta_nu: s.beta_eta_nu, c },
        }
    }
}

/// True when the last four checkpoints strictly decrease.
pub fn decreased_three_times(checkpoints: &[f64]) -> bool {
    checkpoints.len() >= 4 && checkpoints[checkpoints.len() - 4..].windows(2).all(|w| w[1] < w[0])
}

/// Halves both rates (floored) when the checkpoints decreased three times in
/// a row; returns whether it did.
pub fn lr_schedule_basic(state: &mut ScheduleState, cfg: &BasicSchedule, checkpoints: &[f64]) -> bool {
    if !decreased_three_times(checkpoints) {
        return false;
    }
    state.beta_omega = (state.beta_omega / 2.0).max(cfg.floor);
    state.beta_eta_nu = (state.beta_eta_nu / 2.0).max(cfg.floor);
    true
}

pub fn slope_update(state: &mut ScheduleState, cfg: &SlopeSchedule, slope: f64) {
    if slope < 0.0 {
        state.beta_omega = (0.9 * state.beta_omega).max(cfg.beta_min);
        state.beta_eta_nu = (0.9 * state.beta_eta_nu).max(3.0 * cfg.beta_min);
    } else if slope > 0.0 {
        state.beta_omega = (1.05 * state.beta_omega).min(cfg.beta_max);
        state.beta_eta_nu = (1.02 * state.beta_eta_nu).min(3.0 * cfg.beta_max);
    }
}

/// Applies [`slope_update`] with the least-squares slope of `window`.
pub fn lr_schedule_slope(state: &mut ScheduleState, cfg: &SlopeSchedule, window: &[f64]) {
    slope_update(state, cfg, least_squares_slope(window));
}

pub fn penalty_update(state: &mut ScheduleState, cfg: &SlopeSchedule, slope: f64) {
    if slope > cfg.penalty_slope_threshold {
        state.c *= 0.9;
    } else if slope >= 0.0 {
        state.c = (1.04 * state.c).min(cfg.c_max);
    }
}

/// Applies [`penalty_update`] with the least-squares slope of `window`.
pub fn penalty_schedule(state: &mut ScheduleState, cfg: &SlopeSchedule, window: &[f64]) {
    penalty_update(state, cfg, least_squares_slope(window));
}

pub const TRACE_HEADER: [&str; 9] = ["iteration", "eta", "nu", "c", "penalty", "f", "beta_omega", "beta_eta_nu", "seed"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub eta: f64,
    pub nu: f64,
    pub c: f64,
    pub penalty: f64,
    pub f: f64,
    pub beta_omega: f64,
    pub beta_eta_nu: f64,
    pub seed: u64,
}

/// One row per evaluated iterate, starting with the initial point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, pick: impl Fn(&TraceRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(pick).collect()
    }

    /// Appends `other`, renumbering its iterations to follow ours.
    pub fn append(&mut self, other: &TrainingTrace) {
        let offset = self.rows.last().map_or(0, |r| r.iteration + 1);
        self.rows.extend(other.rows.iter().map(|r| TraceRow { iteration: r.iteration + offset, ..*r }));
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Resource(format!("writing trace: {e}"));
        w.write_record(TRACE_HEADER).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                r.eta.to_string(),
                r.nu.to_string(),
                r.c.to_string(),
                r.penalty.to_string(),
                r.f.to_string(),
                r.beta_omega.to_string(),
                r.beta_eta_nu.to_string(),
                r.seed.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Resource(format!("writing trace: {e}")))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    pub fn read_csv<R: Read>(input_data: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input_data);
        let header = r.headers().map_err(|e| Error::Input(format!("reading trace header: {e}")))?;
        if header.iter().ne(TRACE_HEADER.iter().copied()) {
            return input(format!("unexpected trace columns {:?}", header.iter().collect::<Vec<_>>()));
        }
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Input(format!("trace row {}: {e}", k + 1)))?;
            let num = |i: usize| {
                rec[i].parse::<f64>().map_err(|_| Error::Input(format!("trace row {}: bad {} {:?}", k + 1, TRACE_HEADER[i], &rec[i])))
            };
            let int = |i: usize| {
                rec[i].parse::<u64>().map_err(|_| Error::Input(format!("trace row {}: bad {} {:?}", k + 1, TRACE_HEADER[i], &rec[i])))
            };
            rows.push(TraceRow {
                iteration: int(0)? as usize,
                eta: num(1)?,
                nu: num(2)?,
                c: num(3)?,
                penalty: num(4)?,
                f: num(5)?,
                beta_omega: num(6)?,
                beta_eta_nu: num(7)?,
                seed: int(8)?,
            });
        }
        Ok(TrainingTrace { rows })
    }
}

/// A training run that stopped early; the trace holds every row recorded
/// before the failure.
#[derive(Debug, Clone)]
pub struct Aborted {
    pub trace: TrainingTrace,
    pub error: Error,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted after {} rows: {}", self.trace.len(), self.error)
    }
}

impl std::error::Error for Aborted {}

/// Which per-iteration value drives the learning-rate schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleSignal {
    /// `η`.
    Objective,
    /// `η − c·penalty`.
    F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualTrainConfig {
    pub iterations: usize,
    pub schedule: Schedule,
    pub signal: ScheduleSignal,
    pub spsa_delta: f64,
    pub fd_delta: f64,
    pub seed: u64,
}

impl DualTrainConfig {
    /// Fixed penalty with the halving schedule from 0.1 down to 0.01.
    pub fn basic(iterations: usize, seed: u64) -> Self {
        Self::with_schedule(Schedule::Basic(BasicSchedule::default()), iterations, seed)
    }

    /// Slope-driven rates and penalty.
    pub fn slope(iterations: usize, seed: u64) -> Self {
        Self::with_schedule(Schedule::Slope(SlopeSchedule::default()), iterations, seed)
    }

    pub fn with_schedule(schedule: Schedule, iterations: usize, seed: u64) -> Self {
        DualTrainConfig { iterations, schedule, signal: ScheduleSignal::F, spsa_delta: SPSA_DELTA, fd_delta: FD_DELTA, seed }
    }
}

#[derive(Debug, Clone)]
pub struct DualRun {
    pub trace: TrainingTrace,
    pub point: DualPoint,
}

/// `f` from moments without validating `ν`, for finite differences that
/// may step below zero.
fn f_from_moments(problem: &DualProblem, eta: f64, nu: f64, c: f64, m: Moments) -> f64 {
    let penalty = problem.trace_sq() + eta * eta * problem.dim() + nu * nu * m.purity
        - 2.0 * eta * problem.trace()
        - 2.0 * nu * m.expectation
        + 2.0 * eta * nu;
    eta - c * penalty
}

fn block_mean(values: &[f64], len: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(len)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Gradient ascent on the dual objective.
///
/// Every iteration estimates the circuit-parameter gradient with SPSA and
/// the `η`, `ν` gradients with central differences on the same moment
/// estimates, normalizes the concatenated gradient, steps, and clips `ν`
/// at zero. A run of `T` iterations records `T + 1` rows.
pub fn train_dual_vqe<M: MixedStateModel + ?Sized>(
    problem: &DualProblem,
    model: &M,
    init: DualPoint,
    cfg: &DualTrainConfig,
    shot: &mut ShotModel,
) -> std::result::Result<DualRun, Aborted> {
    let mut trace = TrainingTrace::default();
    let abort = |trace: &TrainingTrace, error: Error| Aborted { trace: trace.clone(), error };
    if let Err(e) = init.validate() {
        return Err(abort(&trace, e));
    }
    if init.params.len() != model.n_params() || model.n_qubits() != problem.n_qubits() {
        return Err(abort(&trace, Error::Input("initial point does not match the ansatz".into())));
    }
    let h: &PauliHamiltonian = problem.hamiltonian();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = cfg.schedule.initial_state(init.c);
    let mut point = init;
    let mut signal = Vec::with_capacity(cfg.iterations + 1);
    let mut penalties = Vec::with_capacity(cfg.iterations + 1);
    let mut checkpoints = Vec::new();

    for t in 0..=cfg.iterations {
        let m = match model.moments(h, &point.params, shot) {
            Ok(m) => m,
            Err(e) => return Err(abort(&trace, e)),
        };
        let b = match breakdown_from_moments(problem, point.eta, point.nu, point.c, m) {
            Ok(b) => b,
            Err(e) => return Err(abort(&trace, e)),
        };
        if !b.f.is_finite() {
            return Err(abort(&trace, Error::Numeric(format!("non-finite objective at iteration {t}"))));
        }
        trace.rows.push(TraceRow {
            iteration: t,
            eta: point.eta,
            nu: point.nu,
            c: point.c,
            penalty: b.penalty,
            f: b.f,
            beta_omega: state.beta_omega,
            beta_eta_nu: state.beta_eta_nu,
            seed: cfg.seed,
        });
        signal.push(match cfg.signal {
            ScheduleSignal::Objective => b.objective,
            ScheduleSignal::F => b.f,
        });
        penalties.push(b.penalty);
        if t == cfg.iterations {
            break;
        }

        let d = cfg.fd_delta;
        let (eta, nu, c) = (point.eta, point.nu, point.c);
        let g_eta = (f_from_moments(problem, eta + d, nu, c, m) - f_from_moments(problem, eta - d, nu, c, m)) / (2.0 * d);
        let g_nu = (f_from_moments(problem, eta, nu + d, c, m) - f_from_moments(problem, eta, nu - d, c, m)) / (2.0 * d);
        let g_theta = spsa_gradient(
            |p| model.moments(h, p, shot).map(|mm| f_from_moments(problem, eta, nu, c, mm)),
            &point.params,
            cfg.spsa_delta,
            &mut rng,
        );
        let g_theta = match g_theta {
            Ok(g) => g,
            Err(e) => return Err(abort(&trace, e)),
        };
        let mut g = Vec::with_capacity(g_theta.len() + 2);
        g.push(g_eta);
        g.push(g_nu);
        g.extend(g_theta);
        let g = normalize_gradient(&g);
        point.eta += state.beta_eta_nu * g[0];
        point.nu = (point.nu + state.beta_eta_nu * g[1]).max(0.0);
        for (p, gi) in point.params.iter_mut().zip(&g[2..]) {
            *p += state.beta_omega * gi;
        }

        let done = t + 1;
        match cfg.schedule {
            Schedule::Fixed { .. } => {}
            Schedule::Basic(bs) => {
                if done % bs.every == 0 {
                    checkpoints.push(block_mean(&signal, bs.every));
                    if lr_schedule_basic(&mut state, &bs, &checkpoints) {
                        checkpoints.drain(..checkpoints.len() - 1);
                    }
                }
            }
            Schedule::Slope(ss) => {
                if done % ss.every == 0 {
                    lr_schedule_slope(&mut state, &ss, &signal[signal.len() - ss.every..]);
                    if ss.adapt_penalty {
                        penalty_schedule(&mut state, &ss, &penalties[penalties.len() - ss.every..]);
                        point.c = state.c;
                    }
                }
            }
        }
    }
    Ok(DualRun { trace, point })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqeTrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub spsa_delta: f64,
    pub seed: u64,
}

impl VqeTrainConfig {
    pub fn new(iterations: usize, seed: u64) -> Self {
        VqeTrainConfig { iterations, learning_rate: VQE_LEARNING_RATE, spsa_delta: SPSA_DELTA, seed }
    }
}

#[derive(Debug, Clone)]
pub struct VqeRun {
    pub trace: TrainingTrace,
    pub params: Vec<f64>,
}

/// Gradient descent on `⟨ψ(θ)|H|ψ(θ)⟩` with normalized SPSA and a fixed
/// rate. Rows carry the energy in both the `eta` and `f` columns.
pub fn train_vqe(
    h: &PauliHamiltonian,
    circuit: &ParamCircuit,
    init: Vec<f64>,
    cfg: &VqeTrainConfig,
    shot: &mut ShotModel,
) -> std::result::Result<VqeRun, Aborted> {
    let mut trace = TrainingTrace::default();
    let abort = |trace: &TrainingTrace, error: Error| Aborted { trace: trace.clone(), error };
    if h.n_qubits() != circuit.n_qubits() {
        return Err(abort(&trace, Error::Input("Hamiltonian and circuit qubit counts differ".into())));
    }
    let energy = |p: &[f64], shot: &mut ShotModel| crate::objective::vqe_objective(h, circuit, p, shot);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init;
    for t in 0..=cfg.iterations {
        let e = match energy(&params, shot) {
            Ok(e) if e.is_finite() => e,
            Ok(_) => return Err(abort(&trace, Error::Numeric(format!("non-finite energy at iteration {t}")))),
            Err(e) => return Err(abort(&trace, e)),
        };
        trace.rows.push(TraceRow {
            iteration: t,
            eta: e,
            nu: 0.0,
            c: 0.0,
            penalty: 0.0,
            f: e,
            beta_omega: cfg.learning_rate,
            beta_eta_nu: 0.0,
            seed: cfg.seed,
        });
        if t == cfg.iterations {
            break;
        }
        let g = match spsa_gradient(|p| energy(p, shot), &params, cfg.spsa_delta, &mut rng) {
            Ok(g) => normalize_gradient(&g),
            Err(e) => return Err(abort(&trace, e)),
        };
        for (p, gi) in params.iter_mut().zip(&g) {
            *p -= cfg.learning_rate * gi;
        }
    }
    Ok(VqeRun { trace, params })
}
