//! Pretrain, translate, then train on the simulated device.
//!
//! The MPS lives on `n_R + n_S` sites with the reference register first, so
//! a translated circuit on all sites is directly a purification ansatz.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ansatz::PurificationAnsatz;
use crate::error::Error;
use crate::mps::{pretrain_mps, Partition, PretrainConfig, Pretrained};
use crate::objective::{DualPoint, DualProblem};
use crate::optimizer::{random_params, Aborted, DualRun, DualTrainConfig, Schedule, SlopeSchedule, TrainingTrace};
use crate::sim::{ParamCircuit, ShotModel};
use crate::translate::{layers_to_param_circuit, translate, TranslateConfig, Translation, UnitaryLayer};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub n_reference: usize,
    pub pretrain: PretrainConfig,
    pub translate: TranslateConfig,
    /// Identity-initialized staircase layers appended after `translate.layers`.
    pub extra_layers: usize,
    pub quantum_iterations: usize,
    pub schedule: Schedule,
    pub seed: u64,
}

impl PipelineConfig {
    /// Full-rank purification (`n_R = n_S`), 2000 pretraining iterations at
    /// `c = 30`, three translated layers plus one trainable layer, and the
    /// slope schedules for the quantum phase.
    pub fn new(n_system: usize, chi_max: usize, quantum_iterations: usize, seed: u64) -> Self {
        PipelineConfig {
            n_reference: n_system,
            pretrain: PretrainConfig::new(chi_max, 2000, seed),
            translate: TranslateConfig::new(seed),
            extra_layers: 1,
            quantum_iterations,
            schedule: Schedule::Slope(SlopeSchedule::default()),
            seed,
        }
    }

    pub fn total_layers(&self) -> usize {
        self.translate.layers + self.extra_layers
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub pretrained: Pretrained,
    pub translation: Translation,
    pub circuit: ParamCircuit,
    pub initial: DualPoint,
    pub quantum: DualRun,
}

impl PipelineRun {
    /// Pretraining rows followed by quantum-training rows.
    pub fn combined_trace(&self) -> TrainingTrace {
        let mut t = self.pretrained.trace.clone();
        t.append(&self.quantum.trace);
        t
    }
}

fn staircase_circuit(n: usize, layers: &[UnitaryLayer], extra: usize) -> Result<(ParamCircuit, Vec<f64>), Error> {
    let (mut circuit, mut params) = layers_to_param_circuit(n, layers)?;
    for _ in 0..extra {
        for q in 0..n - 1 {
            circuit.kak(q, q + 1)?;
        }
    }
    params.resize(circuit.n_params(), 0.0);
    Ok((circuit, params))
}

/// Circuit shape used by the pipeline with no translated layers: `layers`
/// staircases of 15-parameter blocks.
pub fn staircase_ansatz(n_reference: usize, n_system: usize, layers: usize) -> Result<PurificationAnsatz, Error> {
    let (circuit, _) = staircase_circuit(n_reference + n_system, &[], layers)?;
    PurificationAnsatz::with_circuit(n_reference, n_system, circuit)
}

pub fn run_pipeline(problem: &DualProblem, cfg: &PipelineConfig, shot: &mut ShotModel) -> Result<PipelineRun, Aborted> {
    let part = Partition::new(cfg.n_reference, problem.n_qubits()).map_err(|error| Aborted { trace: TrainingTrace::default(), error })?;
    let pretrained = pretrain_mps(problem, part, &cfg.pretrain)?;
    let fail = |error: Error| Aborted { trace: pretrained.trace.clone(), error };
    let translation = translate(&pretrained.mps, &cfg.translate).map_err(fail)?;
    let n = part.n_sites();
    // Variants that stop early are padded so the trained circuit always has
    // `total_layers` staircases.
    let extra = cfg.total_layers() - translation.best.layers.len();
    let (circuit, params) = staircase_circuit(n, &translation.best.layers, extra).map_err(fail)?;
    let model = PurificationAnsatz::with_circuit(cfg.n_reference, problem.n_qubits(), circuit.clone()).map_err(fail)?;
    let initial = DualPoint { eta: pretrained.eta, nu: pretrained.nu, params, c: cfg.pretrain.c };
    let train = DualTrainConfig::with_schedule(cfg.schedule, cfg.quantum_iterations, cfg.seed);
    let quantum = crate::optimizer::train_dual_vqe(problem, &model, initial.clone(), &train, shot).map_err(|mut a| {
        let mut t = pretrained.trace.clone();
        t.append(&a.trace);
        a.trace = t;
        a
    })?;
    Ok(PipelineRun { pretrained, translation, circuit, initial, quantum })
}

/// The comparison run without pretraining: the pipeline's circuit shape with
/// uniform random parameters and `η = 0`, `ν = 1`.
pub fn run_without_pretraining(problem: &DualProblem, cfg: &PipelineConfig, shot: &mut ShotModel) -> Result<DualRun, Aborted> {
    let model = staircase_ansatz(cfg.n_reference, problem.n_qubits(), cfg.total_layers())
        .map_err(|error| Aborted { trace: TrainingTrace::default(), error })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = random_params(model.n_params(), &mut rng);
    let initial = DualPoint { eta: 0.0, nu: 1.0, params, c: cfg.pretrain.c };
    let train = DualTrainConfig::with_schedule(cfg.schedule, cfg.quantum_iterations, cfg.seed);
    crate::optimizer::train_dual_vqe(problem, &model, initial, &train, shot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::PauliHamiltonian;
    use crate::objective::dual_objective;

    fn small(seed: u64) -> (DualProblem, PipelineConfig) {
        let problem = DualProblem::new(PauliHamiltonian::tfi_uniform(2).unwrap());
        let mut cfg = PipelineConfig::new(2, 4, 20, seed);
        cfg.pretrain.iterations = 300;
        cfg.translate.od_iterations = 20;
        (problem, cfg)
    }

    #[test]
    fn circuit_reproduces_the_translation() {
        let (problem, cfg) = small(1);
        let run = run_pipeline(&problem, &cfg, &mut ShotModel::exact()).unwrap();
        assert_eq!(run.circuit.n_params(), 15 * 3 * cfg.total_layers());
        let model = PurificationAnsatz::with_circuit(2, 2, run.circuit.clone()).unwrap();
        let prepared = model.pure_state(&run.initial.params).unwrap();
        let target = run.pretrained.mps.to_dense().unwrap();
        assert!((prepared.fidelity(&target) - run.translation.best.fidelity).abs() < 1e-7);
        assert_eq!(run.quantum.trace.len(), 21);
        assert_eq!(run.combined_trace().len(), 301 + 21);
        let start = dual_objective(&problem, &run.initial, &model, &mut ShotModel::exact()).unwrap();
        assert!((start.f - run.quantum.trace.rows[0].f).abs() < 1e-12);
        assert_eq!((run.initial.eta, run.initial.nu), (run.pretrained.eta, run.pretrained.nu));
    }

    #[test]
    fn runs_are_deterministic() {
        let (problem, cfg) = small(2);
        let a = run_pipeline(&problem, &cfg, &mut ShotModel::exact()).unwrap();
        let b = run_pipeline(&problem, &cfg, &mut ShotModel::exact()).unwrap();
        assert_eq!(a.combined_trace().to_csv_string(), b.combined_trace().to_csv_string());
        let base = run_without_pretraining(&problem, &cfg, &mut ShotModel::exact()).unwrap();
        assert_eq!(base.point.params.len(), a.circuit.n_params());
        assert_eq!((base.trace.rows[0].eta, base.trace.rows[0].nu), (0.0, 1.0));
    }
}
