//! Per-seed experiment execution.
//!
//! Every seed writes its own files, so worker threads never share an output
//! path. Shot noise uses an independent stream seeded from the run seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dualvqe_core::ansatz::{hardware_efficient_circuit, ConvexCombinationAnsatz, PurificationAnsatz};
use dualvqe_core::mps::{pretrain_mps, Mps, Partition, PretrainConfig};
use dualvqe_core::objective::{DualPoint, DualProblem, MixedStateModel};
use dualvqe_core::optimizer::{
    random_params, train_dual_vqe, train_vqe, Aborted, BasicSchedule, DualTrainConfig, Schedule, SlopeSchedule, TrainingTrace,
    VqeTrainConfig,
};
use dualvqe_core::pipeline::{run_pipeline, run_without_pretraining, PipelineConfig};
use dualvqe_core::sim::ShotModel;
use dualvqe_core::translate::{translate, TranslateConfig};

use crate::config::{AnsatzKind, Kind, RunConfig, ScheduleKind};
use crate::{io_err, summary, CliError};

const SHOT_SEED_OFFSET: u64 = 0x5eed_0000;

pub fn run(config_path: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::from_file(config_path)?;
    let h = cfg.hamiltonian.load()?;
    let oracle = match h.min_eigenvalue() {
        Ok(l) => Some(l),
        Err(e) => {
            eprintln!("warning: no exact ground energy ({e})");
            None
        }
    };
    std::fs::create_dir_all(&cfg.output).map_err(io_err(cfg.output.display()))?;
    write_manifest(&cfg, oracle)?;
    if cfg.kind == Kind::Oracle {
        match oracle {
            Some(l) => println!("λ_min = {l:.7}"),
            None => return Err(CliError::Input("Hamiltonian too large for the dense eigensolver".into())),
        }
        return Ok(());
    }

    let problem = DualProblem::new(h);
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..cfg.threads.min(cfg.seeds.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                if let Err(e) = run_seed(&cfg, &problem, seed) {
                    eprintln!("seed {seed}: {e}");
                    failures.lock().expect("no worker panics while holding the lock").push(e);
                }
            });
        }
    });
    let mut failures = failures.into_inner().expect("workers have finished");
    // Aborts outrank configuration-shaped failures so the exit code reports
    // that partial traces were written.
    failures.sort_by_key(|e| std::cmp::Reverse(e.exit_code_rank()));
    if let Some(e) = failures.into_iter().next() {
        return Err(e);
    }
    let report = summary::summarize_dir(&cfg.output, oracle)?;
    print!("{}", report.to_text());
    Ok(())
}

impl CliError {
    fn exit_code_rank(&self) -> u8 {
        match self {
            CliError::Aborted(_) => 2,
            CliError::Core(dualvqe_core::Error::Numeric(_)) => 2,
            _ => 1,
        }
    }
}

fn write_manifest(cfg: &RunConfig, oracle: Option<f64>) -> Result<(), CliError> {
    let path = cfg.output.join("manifest.txt");
    let mut out = String::new();
    out.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
    match oracle {
        Some(l) => out.push_str(&format!("oracle = {l}\n")),
        None => out.push_str("oracle = none\n"),
    }
    for (k, v) in &cfg.echo {
        out.push_str(&format!("config.{k} = {v}\n"));
    }
    std::fs::write(&path, out).map_err(io_err(path.display()))
}

fn shot_model(cfg: &RunConfig, seed: u64) -> Result<ShotModel, CliError> {
    let shot = ShotModel::new(cfg.shots, cfg.shot_count, seed.wrapping_add(SHOT_SEED_OFFSET))?;
    Ok(match cfg.purity_shots {
        Some(p) => shot.with_purity_shots(p)?,
        None => shot,
    })
}

fn schedule(cfg: &RunConfig) -> Schedule {
    match cfg.schedule {
        ScheduleKind::Basic => Schedule::Basic(BasicSchedule::default()),
        ScheduleKind::Slope => Schedule::Slope(SlopeSchedule::default()),
        ScheduleKind::Fixed => Schedule::Fixed { beta_omega: cfg.learning_rate, beta_eta_nu: cfg.learning_rate },
    }
}

fn seed_path(cfg: &RunConfig, stem: &str, seed: u64, ext: &str) -> PathBuf {
    cfg.output.join(format!("{stem}_seed{seed}.{ext}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path.display()))?))
}

fn write_trace(cfg: &RunConfig, stem: &str, seed: u64, trace: &TrainingTrace) -> Result<(), CliError> {
    let path = seed_path(cfg, stem, seed, "csv");
    let mut out = create(&path)?;
    trace.write_csv(&mut out)?;
    out.flush().map_err(io_err(path.display()))
}

/// Writes the trace either way and turns an abort into an error.
fn finish<T>(cfg: &RunConfig, stem: &str, seed: u64, run: Result<T, Aborted>, trace: impl Fn(&T) -> &TrainingTrace) -> Result<T, CliError> {
    match run {
        Ok(r) => {
            write_trace(cfg, stem, seed, trace(&r))?;
            Ok(r)
        }
        Err(a) => {
            write_trace(cfg, stem, seed, &a.trace)?;
            Err(CliError::Aborted(format!("{stem}: {a}")))
        }
    }
}

fn pretrain_config(cfg: &RunConfig, seed: u64) -> PretrainConfig {
    let mut p = PretrainConfig::new(cfg.chi_max, cfg.pretrain_iterations, seed);
    p.c = cfg.pretrain_c;
    p.learning_rate = cfg.pretrain_learning_rate;
    p
}

fn translate_config(cfg: &RunConfig, seed: u64) -> TranslateConfig {
    let mut t = TranslateConfig::new(seed);
    t.layers = cfg.translate_layers;
    t.od_iterations = cfg.od_iterations;
    t.od_accounting = cfg.od_accounting;
    t.beta = cfg.od_beta;
    t
}

fn write_translation(cfg: &RunConfig, seed: u64, t: &dualvqe_core::translate::Translation) -> Result<(), CliError> {
    let path = seed_path(cfg, "translation", seed, "csv");
    let mut out = create(&path)?;
    t.write_csv(&mut out)?;
    out.flush().map_err(io_err(path.display()))
}

fn run_seed(cfg: &RunConfig, problem: &DualProblem, seed: u64) -> Result<(), CliError> {
    let n = problem.n_qubits();
    let n_r = cfg.reference_qubits.unwrap_or(n);
    let mut shot = shot_model(cfg, seed)?;
    match cfg.kind {
        Kind::Oracle => unreachable!("oracle runs have no seeds"),
        Kind::Vqe => {
            let circuit = hardware_efficient_circuit(n, cfg.vqe_layers);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            vqe_arm(cfg, problem, &circuit, &mut rng, seed, &mut shot)?;
        }
        Kind::DualVqe => {
            let model: Box<dyn MixedStateModel> = match cfg.ansatz {
                AnsatzKind::Purification => Box::new(PurificationAnsatz::new(n_r, n, cfg.layers)?),
                AnsatzKind::Convex => Box::new(ConvexCombinationAnsatz::new(n, cfg.born_layers, cfg.unitary_layers)?),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = DualPoint { eta: cfg.eta, nu: cfg.nu, params: random_params(model.n_params(), &mut rng), c: cfg.c };
            let mut train = DualTrainConfig::with_schedule(schedule(cfg), cfg.iterations, seed);
            train.signal = cfg.signal;
            let dual = finish(cfg, "dual", seed, train_dual_vqe(problem, model.as_ref(), init, &train, &mut shot), |r| &r.trace);
            // VQE draws its parameters after the dual ones, so a dual abort
            // must not shift the VQE stream.
            if cfg.vqe {
                let circuit = hardware_efficient_circuit(n, cfg.vqe_layers);
                vqe_arm(cfg, problem, &circuit, &mut rng, seed, &mut shot_model(cfg, seed)?)?;
            }
            dual?;
        }
        Kind::Pretrain => {
            pretrain(cfg, problem, n_r, seed)?;
        }
        Kind::Translate => {
            let mps = match &cfg.mps {
                Some(path) => {
                    let file = File::open(path).map_err(io_err(path.display()))?;
                    Mps::read_checkpoint(std::io::BufReader::new(file))?
                }
                None => pretrain(cfg, problem, n_r, seed)?,
            };
            let t = translate(&mps, &translate_config(cfg, seed))?;
            write_translation(cfg, seed, &t)?;
        }
        Kind::Pipeline => {
            let mut p = PipelineConfig::new(n, cfg.chi_max, cfg.quantum_iterations, seed);
            p.n_reference = n_r;
            p.pretrain = pretrain_config(cfg, seed);
            p.translate = translate_config(cfg, seed);
            p.extra_layers = cfg.extra_layers;
            p.schedule = schedule(cfg);
            let run = finish(cfg, "pipeline", seed, run_pipeline(problem, &p, &mut shot).map(|r| (r.combined_trace(), r)), |r| &r.0)?;
            write_translation(cfg, seed, &run.1.translation)?;
            if cfg.baseline {
                let mut shot = shot_model(cfg, seed)?;
                finish(cfg, "baseline", seed, run_without_pretraining(problem, &p, &mut shot), |r| &r.trace)?;
            }
        }
    }
    Ok(())
}

fn vqe_arm(
    cfg: &RunConfig,
    problem: &DualProblem,
    circuit: &dualvqe_core::sim::ParamCircuit,
    rng: &mut ChaCha8Rng,
    seed: u64,
    shot: &mut ShotModel,
) -> Result<(), CliError> {
    let theta = random_params(circuit.n_params(), rng);
    let mut train = VqeTrainConfig::new(cfg.iterations, seed);
    train.learning_rate = cfg.vqe_learning_rate;
    finish(cfg, "vqe", seed, train_vqe(problem.hamiltonian(), circuit, theta, &train, shot), |r| &r.trace)?;
    Ok(())
}

fn pretrain(cfg: &RunConfig, problem: &DualProblem, n_r: usize, seed: u64) -> Result<Mps, CliError> {
    let part = Partition::new(n_r, problem.n_qubits())?;
    let pre = finish(cfg, "pretrain", seed, pretrain_mps(problem, part, &pretrain_config(cfg, seed)), |r| &r.trace)?;
    let path = seed_path(cfg, "mps", seed, "bin");
    let mut out = create(&path)?;
    pre.mps.write_checkpoint(&mut out)?;
    out.flush().map_err(io_err(path.display()))?;
    Ok(pre.mps)
}
