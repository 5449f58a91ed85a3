//! File formats: NDJSON traces, DOT snapshots and the summary CSV.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use linstab_core::checkers::PropertyVerdict;
use linstab_core::graph::{network_graph, EdgeKind};
use linstab_core::model::{digest_of, NeighborSet};
use linstab_core::sim::{replay, Event, RunEnd, Trace};
use linstab_core::{ProtocolConfig, SystemState};
use serde::{Deserialize, Serialize};

pub const TRACE_VERSION: u64 = 1;

/// One line of a trace file: a header, then one record per event, then the end.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header { version: u64, protocol: ProtocolConfig, seed: u64, initial: SystemState },
    Event(Event),
    End { end: RunEnd, steps: u64, final_digest: String, trace_digest: String },
}

pub fn hex(d: u64) -> String {
    format!("{d:016x}")
}

pub fn write_trace(path: &Path, t: &Trace) -> Result<()> {
    let mut out = BufWriter::new(create(path)?);
    let header =
        Record::Header { version: TRACE_VERSION, protocol: t.protocol, seed: t.seed, initial: t.initial.clone() };
    serde_json::to_writer(&mut out, &header)?;
    writeln!(out)?;
    for e in &t.events {
        log::trace!("step {} at {}: {:?}", e.step, e.actor, e.kind);
        serde_json::to_writer(&mut out, &Record::Event(e.clone()))?;
        writeln!(out)?;
    }
    let end = Record::End {
        end: t.end,
        steps: t.steps(),
        final_digest: hex(t.final_digest()),
        trace_digest: hex(t.digest()),
    };
    serde_json::to_writer(&mut out, &end)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// What a trace file holds, enough to rebuild any intermediate state.
pub struct LoadedTrace {
    pub protocol: ProtocolConfig,
    pub initial: SystemState,
    pub events: Vec<Event>,
}

pub fn read_trace(path: &Path) -> Result<LoadedTrace> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut loaded: Option<LoadedTrace> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad trace record", path.display(), i + 1))?;
        match (record, loaded.as_mut()) {
            (Record::Header { version, protocol, initial, .. }, None) => {
                if version != TRACE_VERSION {
                    bail!("trace version {version} is not supported (expected {TRACE_VERSION})");
                }
                loaded = Some(LoadedTrace { protocol, initial, events: Vec::new() });
            }
            (Record::Event(e), Some(t)) => {
                let want = t.events.len() as u64 + 1;
                if e.step != want {
                    bail!("{}:{}: expected step {want}, found {}", path.display(), i + 1, e.step);
                }
                t.events.push(e);
            }
            (Record::End { .. }, Some(_)) => break,
            _ => bail!("{}:{}: the trace must start with exactly one header", path.display(), i + 1),
        }
    }
    loaded.with_context(|| format!("{} holds no trace header", path.display()))
}

/// The network graph of `s`: stored references solid, references in transit
/// dashed, leaving nodes shaded, exited nodes left out.
pub fn dot(s: &SystemState, name: &str) -> String {
    let mut out = format!("digraph \"{name}\" {{\n  node [shape=circle];\n");
    for n in s.present() {
        let shade = if n.is_leaving() { " [style=filled, fillcolor=gray80]" } else { "" };
        let _ = writeln!(out, "  \"{}\"{shade};", n.id);
    }
    for e in network_graph(s) {
        if !s.is_present(e.to) {
            continue;
        }
        let attrs = match e.kind {
            EdgeKind::Explicit(NeighborSet::Left) => "[label=\"left\"]",
            EdgeKind::Explicit(NeighborSet::Right) => "[label=\"right\"]",
            EdgeKind::Explicit(NeighborSet::TempLeft) => "[label=\"temp_left\"]",
            EdgeKind::Explicit(NeighborSet::TempRight) => "[label=\"temp_right\"]",
            EdgeKind::Implicit => "[style=dashed]",
        };
        let _ = writeln!(out, "  \"{}\" -> \"{}\" {attrs};", e.from, e.to);
    }
    out.push_str("}\n");
    out
}

/// DOT files for steps 0, `every`, `2·every`, ... and the final step.
pub fn write_snapshots(dir: &Path, every: u64, t: &Trace) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let last = t.steps();
    let mut steps: Vec<u64> = (0..=last).step_by(every as usize).collect();
    if steps.last() != Some(&last) {
        steps.push(last);
    }
    let mut s = t.initial.clone();
    let mut at = 0;
    for k in steps {
        s = replay(&s, &t.protocol, &t.events[at as usize..k as usize])?;
        at = k;
        let path = dir.join(format!("step_{k:06}.dot"));
        std::fs::write(&path, dot(&s, &format!("step {k}"))).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    property: &'a str,
    status: &'a str,
    step: Option<u64>,
    witness_digest: Option<String>,
    witness: Option<&'a str>,
}

pub fn write_summary(path: &Path, verdicts: &[PropertyVerdict]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for v in verdicts {
        w.serialize(SummaryRow {
            property: v.property.name(),
            status: v.status.name(),
            step: v.status.step(),
            witness_digest: v.witness.as_ref().map(|s| hex(digest_of(s))),
            witness: v.witness.as_deref(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use linstab_core::model::{Message, Mode, NodeId, NodeState};

    #[test]
    fn dot_draws_stored_solid_and_transit_dashed() {
        let mut s = SystemState::from_nodes([
            NodeState::with_neighbors(NodeId(1), [], [2]),
            NodeState::new(NodeId(2)),
            NodeState { mode: Mode::Leaving, ..NodeState::new(NodeId(3)) },
            NodeState { exited: true, ..NodeState::new(NodeId(4)) },
        ]);
        s.send(NodeId(2), Message::TempDelegate { u: NodeId(3) });
        let d = dot(&s, "t");
        assert!(d.contains("\"1\" -> \"2\" [label=\"right\"];"), "{d}");
        assert!(d.contains("\"2\" -> \"3\" [style=dashed];"), "{d}");
        assert!(d.contains("\"3\" [style=filled, fillcolor=gray80];"), "{d}");
        assert!(!d.contains("\"4\""), "{d}");
    }
}
