//! `linstab`: run scenarios, fuzz the protocols, render trace snapshots.

mod fuzz;
mod output;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use linstab_core::checkers::check_property;
use linstab_core::sim::{generate_initial_state, run, state_at, RunEnd};
use linstab_core::{Mutation, ProtocolConfig};

use crate::fuzz::Campaign;
use crate::scenario::Scenario;

#[derive(Parser)]
#[command(name = "linstab", version, about = "Simulator and property checker for self-stabilizing sorted lists")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mutant {
    /// Hand surplus neighbors on without introducing them first.
    DirectDelegation,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    Plus,
    Star,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario file and judge its properties.
    Run {
        file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long, value_enum)]
        mutant: Option<Mutant>,
    },
    /// Run many fuzzed initial states under every checker.
    Fuzz {
        /// Node count range, `A..B` inclusive.
        #[arg(long, value_parser = parse_range)]
        n: (usize, usize),
        #[arg(long, default_value_t = 100)]
        runs: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "plus")]
        protocol: ProtocolArg,
        /// Share of nodes that leave (Build-List* only).
        #[arg(long, default_value_t = 0.0)]
        leaving_fraction: f64,
        #[arg(long, value_enum)]
        mutant: Option<Mutant>,
        /// Aggregate CSV.
        #[arg(long, default_value = "fuzz_summary.csv")]
        out: PathBuf,
        /// Written only when some run fails.
        #[arg(long, default_value = "fuzz_failures.txt")]
        failures: PathBuf,
    },
    /// Render the network graph after `step` events of a trace as DOT.
    Snapshot {
        trace: PathBuf,
        #[arg(long)]
        step: u64,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("`{s}` is not of the form A..B"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?;
    if a == 0 || a > b {
        return Err(format!("`{s}` must satisfy 1 <= A <= B"));
    }
    Ok((a, b))
}

fn with_mutant(mut p: ProtocolConfig, mutant: Option<Mutant>) -> ProtocolConfig {
    if let Some(Mutant::DirectDelegation) = mutant {
        p.mutation = Some(Mutation::DirectDelegation);
    }
    p
}

fn mutant_flag(mutant: Option<Mutant>) -> &'static str {
    match mutant {
        Some(Mutant::DirectDelegation) => " --mutant direct-delegation",
        None => "",
    }
}

fn cmd_run(file: &Path, seed: Option<u64>, max_steps: Option<u64>, mutant: Option<Mutant>) -> Result<ExitCode> {
    let mut sc = Scenario::load(file)?;
    sc.seed = seed.unwrap_or(sc.seed);
    sc.max_steps = max_steps.unwrap_or(sc.max_steps);
    sc.protocol = with_mutant(sc.protocol, mutant);
    let initial = generate_initial_state(&sc.initial_spec()).context("building the initial state")?;
    log::info!("{} nodes, {} messages in flight", initial.nodes.len(), initial.message_count());
    let t = run(initial, sc.run_config())?;
    let verdicts: Vec<_> = sc.properties.iter().map(|&p| check_property(&t, p)).collect();

    if let Some(path) = &sc.outputs.trace {
        output::write_trace(path, &t)?;
    }
    if let (Some(every), Some(dir)) = (sc.outputs.dot_every, &sc.outputs.dot_dir) {
        output::write_snapshots(dir, every, &t)?;
    }
    if let Some(path) = &sc.outputs.summary {
        output::write_summary(path, &verdicts)?;
    }

    let end = match t.end {
        RunEnd::Converged { at } => format!("converged at step {at}"),
        RunEnd::StepLimit => "step limit reached".into(),
        RunEnd::ScriptExhausted => "script exhausted".into(),
    };
    println!("{}: {} steps, {end}, digest {}", file.display(), t.steps(), output::hex(t.digest()));
    for v in &verdicts {
        let status = format!("{:?}", v.status);
        match &v.witness {
            Some(w) => println!("  {:<18} {status:<18} {w}", v.property.name()),
            None => println!("  {:<18} {status}", v.property.name()),
        }
    }
    if verdicts.iter().all(|v| v.passed()) {
        return Ok(ExitCode::SUCCESS);
    }
    for v in verdicts.iter().filter(|v| !v.passed()) {
        eprintln!("violation: {} {:?}: {}", v.property, v.status, v.witness.as_deref().unwrap_or("no witness"));
    }
    eprintln!(
        "replay: linstab run {} --seed {} --max-steps {}{}",
        file.display(),
        sc.seed,
        sc.max_steps,
        mutant_flag(mutant)
    );
    Ok(ExitCode::from(1))
}

#[allow(clippy::too_many_arguments)]
fn cmd_fuzz(
    n: (usize, usize),
    runs: u64,
    seed: u64,
    protocol: ProtocolArg,
    leaving_fraction: f64,
    mutant: Option<Mutant>,
    out: PathBuf,
    failures: PathBuf,
) -> Result<ExitCode> {
    if runs == 0 {
        bail!("--runs must be at least 1");
    }
    if !(0.0..1.0).contains(&leaving_fraction) {
        bail!("--leaving-fraction must lie in [0, 1)");
    }
    let (config, name) = match protocol {
        ProtocolArg::Plus => (ProtocolConfig::plus(), "plus"),
        ProtocolArg::Star => (ProtocolConfig::star(), "star"),
    };
    let replay = Box::new(move |n: usize, seed: u64| {
        format!(
            "linstab fuzz --n {n}..{n} --runs 1 --seed {seed} --protocol {name} --leaving-fraction {leaving_fraction}{}",
            mutant_flag(mutant)
        )
    });
    let campaign = Campaign {
        n: n.0..=n.1,
        runs,
        seed,
        protocol: with_mutant(config, mutant),
        leaving_fraction,
        out,
        failures,
        replay,
    };
    let results = campaign.execute()?;
    let failed = fuzz::report(&campaign, &results)?;
    let converged = results.iter().filter(|r| r.converged_at.is_some()).count();
    println!("{runs} runs, {converged} converged, {failed} with violations; summary in {}", campaign.out.display());
    if failed == 0 {
        return Ok(ExitCode::SUCCESS);
    }
    for r in results.iter().filter(|r| !r.violations.is_empty()).take(5) {
        eprintln!("seed {} (n {}): {}", r.seed, r.n, r.violations.join("; "));
        eprintln!("replay: {}", (campaign.replay)(r.n, r.seed));
    }
    eprintln!("failing seeds written to {}", campaign.failures.display());
    Ok(ExitCode::from(1))
}

fn cmd_snapshot(trace: &Path, step: u64, out: Option<&Path>) -> Result<ExitCode> {
    let t = output::read_trace(trace)?;
    let len = t.events.len() as u64;
    if step > len {
        bail!("step {step} is out of range: the trace has steps 0..={len}");
    }
    let s = state_at(&t.initial, &t.protocol, &t.events, step as usize)?;
    let doc = output::dot(&s, &format!("step {step}"));
    match out {
        Some(path) => std::fs::write(path, doc).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{doc}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LINSTAB_LOG")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { file, seed, max_steps, mutant } => cmd_run(&file, seed, max_steps, mutant),
        Command::Fuzz { n, runs, seed, protocol, leaving_fraction, mutant, out, failures } => {
            cmd_fuzz(n, runs, seed, protocol, leaving_fraction, mutant, out, failures)
        }
        Command::Snapshot { trace, step, out } => cmd_snapshot(&trace, step, out.as_deref()),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
