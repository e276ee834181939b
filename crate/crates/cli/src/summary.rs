//! Aggregation of per-seed outputs into median and interquartile traces.
//!
//! Files named `<stem>_seed<k>.csv` form one arm per stem. Trace arms get
//! `<stem>_aggregate.csv`; translation arms contribute their best fidelity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use dualvqe_core::optimizer::{TraceRow, TrainingTrace};
use dualvqe_core::translate::TRANSLATION_HEADER;

use crate::{io_err, CliError};

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        Spread { median: quantile(values, 0.5), q1: quantile(values, 0.25), q3: quantile(values, 0.75) }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Rows per aggregated trace; zero for translation arms.
    pub rows: usize,
    /// Final `f` for trace arms, best fidelity for translation arms.
    pub final_value: Spread,
    /// Per-seed final values in seed order.
    pub per_seed: Vec<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryReport {
    pub oracle: Option<f64>,
    pub arms: Vec<ArmSummary>,
}

impl SummaryReport {
    fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn final_vqe(&self) -> Option<f64> {
        self.arm("vqe").map(|a| a.final_value.median)
    }

    /// The dual-VQE arm, or the pipeline arm for pipeline runs.
    pub fn final_dual(&self) -> Option<f64> {
        self.arm("dual").or_else(|| self.arm("pipeline")).map(|a| a.final_value.median)
    }

    pub fn gap(&self) -> Option<f64> {
        Some(self.final_vqe()? - self.final_dual()?)
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.7}"));
        let mut s = String::new();
        let _ = writeln!(s, "oracle λ_min: {}", opt(self.oracle));
        let _ = writeln!(s, "final VQE median: {}", opt(self.final_vqe()));
        let _ = writeln!(s, "final dual-VQE median: {}", opt(self.final_dual()));
        let _ = writeln!(s, "gap (VQE - dual): {}", opt(self.gap()));
        for a in &self.arms {
            let rel = a.relative_error.map_or(String::new(), |r| format!(", relative error {:.4}%", 100.0 * r));
            let _ = writeln!(
                s,
                "{}: {} seeds, final median {:.7}, IQR {:.3e} [{:.7}, {:.7}]{rel}",
                a.name,
                a.seeds.len(),
                a.final_value.median,
                a.final_value.iqr(),
                a.final_value.q1,
                a.final_value.q3
            );
        }
        s
    }

    fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut rows = vec![
            ["arm", "seeds", "rows", "final_median", "final_q1", "final_q3", "relative_error"].map(String::from).to_vec(),
        ];
        for a in &self.arms {
            rows.push(vec![
                a.name.clone(),
                a.seeds.len().to_string(),
                a.rows.to_string(),
                a.final_value.median.to_string(),
                a.final_value.q1.to_string(),
                a.final_value.q3.to_string(),
                fmt(a.relative_error),
            ]);
        }
        rows.push(vec!["oracle".into(), String::new(), String::new(), fmt(self.oracle), String::new(), String::new(), String::new()]);
        rows.push(vec!["gap".into(), String::new(), String::new(), fmt(self.gap()), String::new(), String::new(), String::new()]);
        for r in rows {
            w.write_record(r).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(io_err(path.display()))
    }
}

fn split_seed_file(path: &Path) -> Option<(String, u64)> {
    if path.extension()? != "csv" {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    let (arm, seed) = stem.rsplit_once("_seed")?;
    Some((arm.to_string(), seed.parse().ok()?))
}

fn manifest_oracle(dir: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(dir.join("manifest.txt")).ok()?;
    text.lines().find_map(|l| l.strip_prefix("oracle = ")?.trim().parse().ok())
}

/// Per-iteration median and quartiles of `f`, `eta` and `penalty` over
/// traces cut to their common length.
pub fn aggregate(traces: &[TrainingTrace]) -> Vec<(usize, [Spread; 3])> {
    let len = traces.iter().map(TrainingTrace::len).min().unwrap_or(0);
    let pick: [fn(&TraceRow) -> f64; 3] = [|r| r.f, |r| r.eta, |r| r.penalty];
    (0..len)
        .map(|t| {
            let spreads = pick.map(|p| Spread::of(&traces.iter().map(|tr| p(&tr.rows[t])).collect::<Vec<_>>()));
            (traces[0].rows[t].iteration, spreads)
        })
        .collect()
}

fn write_aggregate(path: &Path, rows: &[(usize, [Spread; 3])]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record([
        "iteration", "f_median", "f_q1", "f_q3", "eta_median", "eta_q1", "eta_q3", "penalty_median", "penalty_q1", "penalty_q3",
    ])
    .map_err(err)?;
    for (it, s) in rows {
        let mut rec = vec![it.to_string()];
        for sp in s {
            rec.extend([sp.median.to_string(), sp.q1.to_string(), sp.q3.to_string()]);
        }
        w.write_record(rec).map_err(err)?;
    }
    w.flush().map_err(io_err(path.display()))
}

fn best_fidelity(path: &Path) -> Result<f64, CliError> {
    let bad = |msg: String| CliError::Input(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(TRANSLATION_HEADER.iter().copied()) {
        return Err(bad(format!("unexpected translation columns {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut best = f64::NEG_INFINITY;
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f: f64 = rec[2].parse().map_err(|_| bad(format!("bad fidelity {:?}", &rec[2])))?;
        best = best.max(f);
    }
    if best == f64::NEG_INFINITY {
        return Err(bad("no rows".into()));
    }
    Ok(best)
}

fn read_trace(path: &Path) -> Result<TrainingTrace, CliError> {
    let file = File::open(path).map_err(io_err(path.display()))?;
    TrainingTrace::read_csv(std::io::BufReader::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Summarizes a directory of per-seed files and writes the aggregate CSVs,
/// `summary.csv` and `summary.txt` into it.
pub fn summarize_dir(dir: &Path, oracle: Option<f64>) -> Result<SummaryReport, CliError> {
    let oracle = oracle.or_else(|| manifest_oracle(dir));
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut groups: BTreeMap<String, Vec<(u64, PathBuf)>> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(io_err(dir.display()))?.path();
        if let Some((arm, seed)) = split_seed_file(&path) {
            groups.entry(arm).or_default().push((seed, path));
        }
    }
    if groups.is_empty() {
        return Err(CliError::Input(format!("no per-seed CSV files in {}", dir.display())));
    }
    let mut arms = Vec::new();
    for (name, mut files) in groups {
        files.sort();
        let seeds: Vec<u64> = files.iter().map(|(s, _)| *s).collect();
        let (rows, per_seed) = if name == "translation" {
            (0, files.iter().map(|(_, p)| best_fidelity(p)).collect::<Result<Vec<_>, _>>()?)
        } else {
            let traces = files.iter().map(|(_, p)| read_trace(p)).collect::<Result<Vec<_>, _>>()?;
            if traces.iter().any(TrainingTrace::is_empty) {
                return Err(CliError::Input(format!("arm {name:?} has an empty trace")));
            }
            let common = traces.iter().map(TrainingTrace::len).min().unwrap_or(0);
            if traces.iter().any(|t| t.len() != common) {
                eprintln!("warning: arm {name:?} traces differ in length; truncating to {common} rows");
            }
            write_aggregate(&dir.join(format!("{name}_aggregate.csv")), &aggregate(&traces))?;
            (common, traces.iter().map(|t| t.rows[common - 1].f).collect())
        };
        let final_value = Spread::of(&per_seed);
        let relative_error = match oracle {
            Some(l) if name != "translation" && l != 0.0 => Some(((final_value.median - l) / l).abs()),
            _ => None,
        };
        arms.push(ArmSummary { name, seeds, rows, final_value, per_seed, relative_error });
    }
    let report = SummaryReport { oracle, arms };
    report.write_csv(&dir.join("summary.csv"))?;
    let txt = dir.join("summary.txt");
    std::fs::write(&txt, report.to_text()).map_err(io_err(txt.display()))?;
    Ok(report)
}
