//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors. Relative paths resolve against the config file's directory.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `kind` | required | `vqe`, `dual-vqe`, `pretrain`, `translate`, `pipeline` or `oracle` |
//! | `hamiltonian` | required | `tfi:N` (open-chain TFI, unit couplings) or a Pauli-sum file |
//! | `seeds` | required except for `oracle` | `0-9`, `1,4,7` or a mix |
//! | `output` | required | output directory |
//! | `threads` | `1` | seeds trained concurrently |
//! | `iterations` | `20000` | dual-VQE and VQE iterations |
//! | `ansatz` | `purification` | `purification` or `convex` |
//! | `layers` | `3` | purification circuit layers |
//! | `reference_qubits` | system size | purification reference register |
//! | `born_layers`, `unitary_layers` | `2`, `2` | convex-combination circuits |
//! | `c` | `10` | initial penalty |
//! | `eta`, `nu` | `0`, `1` | initial dual variables |
//! | `schedule` | `basic` | `basic`, `slope` or `fixed` |
//! | `learning_rate` | `0.1` | both rates under `schedule = fixed` |
//! | `signal` | `f` | schedule signal, `f` or `objective` (η) |
//! | `vqe` | `true` | also run plain VQE beside dual-VQE |
//! | `vqe_layers` | `3` | VQE circuit layers |
//! | `vqe_learning_rate` | `0.005` | VQE step size |
//! | `shots` | `exact` | `exact`, `sampled` or `gaussian` |
//! | `shot_count` | `1000` | shots per Pauli term |
//! | `purity_shots` | `shot_count` | shots for purity estimates |
//! | `chi_max` | `8` | MPS bond cap |
//! | `pretrain_iterations` | `2000` | MPS gradient steps |
//! | `pretrain_c` | `30` | penalty during pretraining and the initial quantum penalty |
//! | `pretrain_learning_rate` | `0.01` | MPS step size |
//! | `mps` | none | `translate` only: checkpoint to translate instead of pretraining |
//! | `translate_layers` | `3` | staircase layers |
//! | `od_iterations` | `2000` | OD budget |
//! | `od_accounting` | `sweep` | `sweep` or `block` |
//! | `od_beta` | `0.2` | OD learning rate |
//! | `extra_layers` | `1` | identity layers appended before quantum training |
//! | `quantum_iterations` | `25000` | pipeline quantum-training iterations |
//! | `baseline` | `true` | pipeline: also train without pretraining |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dualvqe_core::hamiltonian::PauliHamiltonian;
use dualvqe_core::optimizer::ScheduleSignal;
use dualvqe_core::sim::ShotMode;
use dualvqe_core::translate::OdAccounting;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Vqe,
    DualVqe,
    Pretrain,
    Translate,
    Pipeline,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnsatzKind {
    Purification,
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Basic,
    Slope,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HamiltonianSource {
    Tfi(usize),
    File(PathBuf),
}

impl HamiltonianSource {
    pub fn parse(value: &str, base: &Path) -> Result<Self, CliError> {
        if let Some(n) = value.strip_prefix("tfi:") {
            let n = n.parse().map_err(|_| CliError::Config(format!("bad TFI size in {value:?}")))?;
            return Ok(HamiltonianSource::Tfi(n));
        }
        let path = base.join(value);
        if !path.is_file() {
            return Err(CliError::Config(format!("Hamiltonian file {} does not exist", path.display())));
        }
        Ok(HamiltonianSource::File(path))
    }

    pub fn load(&self) -> Result<PauliHamiltonian, CliError> {
        match self {
            HamiltonianSource::Tfi(n) => Ok(PauliHamiltonian::tfi_uniform(*n)?),
            HamiltonianSource::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("reading {}: {e}", p.display())))?;
                Ok(PauliHamiltonian::parse(&text)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: Kind,
    pub hamiltonian: HamiltonianSource,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub threads: usize,
    pub iterations: usize,
    pub ansatz: AnsatzKind,
    pub layers: usize,
    pub reference_qubits: Option<usize>,
    pub born_layers: usize,
    pub unitary_layers: usize,
    pub c: f64,
    pub eta: f64,
    pub nu: f64,
    pub schedule: ScheduleKind,
    pub learning_rate: f64,
    pub signal: ScheduleSignal,
    pub vqe: bool,
    pub vqe_layers: usize,
    pub vqe_learning_rate: f64,
    pub shots: ShotMode,
    pub shot_count: u64,
    pub purity_shots: Option<u64>,
    pub chi_max: usize,
    pub pretrain_iterations: usize,
    pub pretrain_c: f64,
    pub pretrain_learning_rate: f64,
    pub mps: Option<PathBuf>,
    pub translate_layers: usize,
    pub od_iterations: usize,
    pub od_accounting: OdAccounting,
    pub od_beta: f64,
    pub extra_layers: usize,
    pub quantum_iterations: usize,
    pub baseline: bool,
    /// Every key as given, for the manifest.
    pub echo: BTreeMap<String, String>,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

pub fn parse_seeds(value: &str) -> Result<Vec<u64>, CliError> {
    let mut seeds = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| CliError::Config(format!("bad seed {s:?}")));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return config_err(format!("empty seed range {part:?}"));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(num(part)?),
        }
    }
    if seeds.is_empty() {
        return config_err("seeds must list at least one seed");
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return config_err("seeds repeat");
    }
    Ok(seeds)
}

struct Keys {
    map: BTreeMap<String, String>,
    used: Vec<&'static str>,
}

impl Keys {
    fn raw(&mut self, key: &'static str) -> Option<String> {
        self.used.push(key);
        self.map.get(key).cloned()
    }

    fn required(&mut self, key: &'static str) -> Result<String, CliError> {
        self.raw(key).ok_or_else(|| CliError::Config(format!("missing required key {key:?}")))
    }

    fn get<T: std::str::FromStr>(&mut self, key: &'static str, default: T) -> Result<T, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| CliError::Config(format!("bad value {v:?} for {key:?}"))),
        }
    }

    fn choice<T: Copy>(&mut self, key: &'static str, default: T, options: &[(&str, T)]) -> Result<T, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => options.iter().find(|(name, _)| *name == v).map(|&(_, t)| t).ok_or_else(|| {
                let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
                CliError::Config(format!("{key:?} must be one of {names:?}, got {v:?}"))
            }),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return config_err(format!("line {}: expected key = value", no + 1));
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if map.insert(k.clone(), v).is_some() {
                return config_err(format!("line {}: key {k:?} repeated", no + 1));
            }
        }
        let mut keys = Keys { map: map.clone(), used: Vec::new() };
        let k = &mut keys;
        let kind = match k.required("kind")?.as_str() {
            "vqe" => Kind::Vqe,
            "dual-vqe" => Kind::DualVqe,
            "pretrain" => Kind::Pretrain,
            "translate" => Kind::Translate,
            "pipeline" => Kind::Pipeline,
            "oracle" => Kind::Oracle,
            other => return config_err(format!("unknown kind {other:?}")),
        };
        let hamiltonian = HamiltonianSource::parse(&k.required("hamiltonian")?, base)?;
        let seeds = match (kind, k.raw("seeds")) {
            (_, Some(s)) => parse_seeds(&s)?,
            (Kind::Oracle, None) => Vec::new(),
            _ => return config_err("missing required key \"seeds\""),
        };
        let output = base.join(k.required("output")?);
        let mps = k.raw("mps").map(|p| base.join(p));
        if let Some(p) = &mps {
            if kind != Kind::Translate {
                return config_err("\"mps\" only applies to kind = translate");
            }
            if !p.is_file() {
                return config_err(format!("MPS checkpoint {} does not exist", p.display()));
            }
        }
        let cfg = RunConfig {
            kind,
            hamiltonian,
            seeds,
            output,
            threads: k.get("threads", 1)?,
            iterations: k.get("iterations", 20_000)?,
            ansatz: k.choice("ansatz", AnsatzKind::Purification, &[("purification", AnsatzKind::Purification), ("convex", AnsatzKind::Convex)])?,
            layers: k.get("layers", 3)?,
            reference_qubits: k.raw("reference_qubits").map(|v| v.parse()).transpose().map_err(|_| CliError::Config("bad reference_qubits".into()))?,
            born_layers: k.get("born_layers", 2)?,
            unitary_layers: k.get("unitary_layers", 2)?,
            c: k.get("c", 10.0)?,
            eta: k.get("eta", 0.0)?,
            nu: k.get("nu", 1.0)?,
            schedule: k.choice("schedule", ScheduleKind::Basic, &[("basic", ScheduleKind::Basic), ("slope", ScheduleKind::Slope), ("fixed", ScheduleKind::Fixed)])?,
            learning_rate: k.get("learning_rate", 0.1)?,
            signal: k.choice("signal", ScheduleSignal::F, &[("f", ScheduleSignal::F), ("objective", ScheduleSignal::Objective)])?,
            vqe: k.get("vqe", true)?,
            vqe_layers: k.get("vqe_layers", 3)?,
            vqe_learning_rate: k.get("vqe_learning_rate", 0.005)?,
            shots: k.choice("shots", ShotMode::Exact, &[("exact", ShotMode::Exact), ("sampled", ShotMode::Sampled), ("gaussian", ShotMode::Gaussian)])?,
            shot_count: k.get("shot_count", 1000)?,
            purity_shots: k.raw("purity_shots").map(|v| v.parse()).transpose().map_err(|_| CliError::Config("bad purity_shots".into()))?,
            chi_max: k.get("chi_max", 8)?,
            pretrain_iterations: k.get("pretrain_iterations", 2000)?,
            pretrain_c: k.get("pretrain_c", 30.0)?,
            pretrain_learning_rate: k.get("pretrain_learning_rate", 1e-2)?,
            mps,
            translate_layers: k.get("translate_layers", 3)?,
            od_iterations: k.get("od_iterations", 2000)?,
            od_accounting: k.choice("od_accounting", OdAccounting::Sweep, &[("sweep", OdAccounting::Sweep), ("block", OdAccounting::BlockUpdate)])?,
            od_beta: k.get("od_beta", 0.2)?,
            extra_layers: k.get("extra_layers", 1)?,
            quantum_iterations: k.get("quantum_iterations", 25_000)?,
            baseline: k.get("baseline", true)?,
            echo: map,
        };
        if let Some(unknown) = keys.map.keys().find(|key| !keys.used.contains(&key.as_str())) {
            return config_err(format!("unknown key {unknown:?}"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.threads == 0 {
            return config_err("threads must be at least 1");
        }
        if !(self.c > 0.0 && self.pretrain_c > 0.0) {
            return config_err("penalties must be positive");
        }
        if !(self.nu >= 0.0) {
            return config_err("nu must be non-negative");
        }
        if !(self.od_beta > 0.0 && self.od_beta <= 1.0) {
            return config_err("od_beta must lie in (0, 1]");
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("vqe_learning_rate", self.vqe_learning_rate), ("pretrain_learning_rate", self.pretrain_learning_rate)] {
            if !(v > 0.0) {
                return config_err(format!("{name} must be positive"));
            }
        }
        if self.shots != ShotMode::Exact && self.shot_count == 0 {
            return config_err("shot_count must be positive");
        }
        Ok(())
    }
}
