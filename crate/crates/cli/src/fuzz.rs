//! Fuzz campaigns: many fuzzed runs judged by every checker, summarized in
//! one aggregate CSV.

use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Result;
use linstab_core::checkers::{check_admissibility, check_all, Status};
use linstab_core::sim::{fuzz_case, run, RunEnd};
use linstab_core::ProtocolConfig;
use serde::Serialize;

use crate::output::{create, hex};

pub struct Campaign {
    pub n: RangeInclusive<usize>,
    pub runs: u64,
    pub seed: u64,
    pub protocol: ProtocolConfig,
    pub leaving_fraction: f64,
    pub out: PathBuf,
    pub failures: PathBuf,
    /// Rebuilds the command line for a single failing run.
    pub replay: Box<dyn Fn(usize, u64) -> String + Sync>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub n: usize,
    pub converged_at: Option<u64>,
    pub first_admissible: Option<u64>,
    /// `property@step: witness` for each failed property.
    pub violations: Vec<String>,
    pub digest: u64,
}

impl Campaign {
    /// Run `i` uses seed `seed + i` and a node count drawn from the range by
    /// that seed, so `--runs 1 --seed S --n k..k` repeats any single run.
    pub fn case(&self, i: u64) -> (u64, usize) {
        let seed = self.seed.wrapping_add(i);
        let span = (self.n.end() - self.n.start() + 1) as u64;
        (seed, self.n.start() + (seed % span) as usize)
    }

    pub fn run_one(&self, i: u64) -> Result<RunResult> {
        let (seed, n) = self.case(i);
        let (s, cfg) = fuzz_case(n, self.protocol, self.leaving_fraction, seed)?;
        let t = run(s, cfg)?;
        let verdicts = check_all(&t);
        let violations = verdicts
            .iter()
            .filter(|v| !v.passed())
            .map(|v| {
                let at = v.status.step().map(|k| format!("@{k}")).unwrap_or_default();
                format!("{}{at}: {}", v.property, v.witness.as_deref().unwrap_or(v.status.name()))
            })
            .collect();
        let first_admissible = match check_admissibility(&t).status {
            Status::EstablishedAt(k) => Some(k),
            _ => None,
        };
        let converged_at = match t.end {
            RunEnd::Converged { at } => Some(at),
            _ => None,
        };
        log::info!("run {i}: seed {seed}, n {n}, {} steps, {:?}", t.steps(), t.end);
        Ok(RunResult { seed, n, converged_at, first_admissible, violations, digest: t.digest() })
    }

    /// All runs, in order. Independent runs are spread over the available cores.
    pub fn execute(&self) -> Result<Vec<RunResult>> {
        let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(self.runs as usize).max(1);
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new((0..self.runs).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i as u64 >= self.runs {
                        break;
                    }
                    let r = self.run_one(i as u64);
                    results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
                });
            }
        });
        results.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every run executed")).collect()
    }
}

#[derive(Serialize)]
struct Row {
    metric: &'static str,
    count: usize,
    min: Option<u64>,
    p50: Option<u64>,
    p90: Option<u64>,
    max: Option<u64>,
}

fn distribution(metric: &'static str, mut xs: Vec<u64>) -> Row {
    xs.sort_unstable();
    let q = |f: f64| xs.get(((xs.len() as f64 - 1.0) * f).round() as usize).copied();
    Row { metric, count: xs.len(), min: xs.first().copied(), p50: q(0.5), p90: q(0.9), max: xs.last().copied() }
}

/// Writes the aggregate CSV and, when some run failed, the failing seeds
/// with their replay commands. Returns the number of failed runs.
pub fn report(c: &Campaign, results: &[RunResult]) -> Result<usize> {
    let mut w = csv::Writer::from_writer(create(&c.out)?);
    w.serialize(distribution("convergence_step", results.iter().filter_map(|r| r.converged_at).collect()))?;
    w.serialize(distribution("first_admissible_step", results.iter().filter_map(|r| r.first_admissible).collect()))?;
    let failed: Vec<&RunResult> = results.iter().filter(|r| !r.violations.is_empty()).collect();
    w.serialize(Row { metric: "violations", count: failed.len(), min: None, p50: None, p90: None, max: None })?;
    w.flush()?;
    if !failed.is_empty() {
        let mut lines = String::new();
        for r in &failed {
            lines.push_str(&format!("seed {} n {} digest {}\n", r.seed, r.n, hex(r.digest)));
            for v in &r.violations {
                lines.push_str(&format!("  {v}\n"));
            }
            lines.push_str(&format!("  replay: {}\n", (c.replay)(r.n, r.seed)));
        }
        std::fs::write(&c.failures, lines)?;
    }
    Ok(failed.len())
}
