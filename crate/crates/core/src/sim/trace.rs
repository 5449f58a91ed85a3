//! Run records: events with digests, per-step observations, search outcomes,
//! and deterministic replay.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::build_list::Outgoing;
use crate::checkers::StepViolation;
use crate::model::{digest_of, Message, NodeId, SearchTag, SystemState};
use crate::protocol::{self, Action, ProtocolConfig};
use crate::sim::run::apply_outcome;
use crate::sim::scheduler::FairnessReport;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    /// `oracle` is the NIDEC answer when the actor was leaving.
    Timeout {
        oracle: Option<bool>,
    },
    /// A leaving node's timeout under a true NIDEC answer.
    Exit,
    Deliver {
        index: usize,
        message: Message,
    },
    InitSearch {
        dest_id: NodeId,
        tag: SearchTag,
    },
    Leave,
}

/// One atomic step. `state_digest` is taken after the step.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub actor: NodeId,
    pub kind: EventKind,
    pub outbox_digest: u64,
    pub state_digest: u64,
}

impl Event {
    pub fn action(&self) -> Action {
        match &self.kind {
            EventKind::Timeout { .. } | EventKind::Exit => Action::Timeout,
            EventKind::Deliver { message, .. } => Action::Deliver { message: message.clone() },
            EventKind::InitSearch { dest_id, tag } => Action::InitSearch { dest_id: *dest_id, tag: *tag },
            EventKind::Leave => Action::Leave,
        }
    }
}

pub fn outbox_digest(outbox: &[Outgoing]) -> u64 {
    digest_of(outbox)
}

/// Checker-facing summary of one state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    /// Φ over present nodes (Build-List+ runs only).
    pub phi: Option<u64>,
    /// NG restricted to present nodes is weakly connected.
    pub connected: bool,
    pub admissible: bool,
    /// Numbers of the message invariants that fail.
    pub failing: Vec<u8>,
    /// The invariants guarding reachability monotonicity hold.
    pub reach_guard: bool,
    pub fixed_point: bool,
    pub eng_digest: u64,
    pub present: usize,
    pub leaving: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchOutcome {
    Pending,
    Delivered,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub tag: SearchTag,
    pub origin: NodeId,
    pub dest_id: NodeId,
    pub initiated_at: u64,
    pub initiated_admissible: bool,
    /// `seq[dest_id]` at the origin right after initiation; requests of one
    /// batch share it.
    pub batch_seq: Option<u64>,
    pub outcome: SearchOutcome,
    pub resolved_at: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub step: u64,
    pub node: NodeId,
    /// NIDEC as evaluated by the checker on the state the exit ran in.
    pub nidec: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeChange {
    pub step: u64,
    pub node: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "end", rename_all = "snake_case")]
pub enum RunEnd {
    /// The stop condition fired; `at` is the first step of the fixed point.
    Converged {
        at: u64,
    },
    StepLimit,
    ScriptExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub protocol: ProtocolConfig,
    pub seed: u64,
    pub initial: SystemState,
    pub events: Vec<Event>,
    /// `observations[i]` describes the state after `i` events.
    pub observations: Vec<Observation>,
    pub searches: Vec<SearchRecord>,
    pub exits: Vec<ExitRecord>,
    pub mode_changes: Vec<ModeChange>,
    /// Weak components of the initial state, staying nodes only.
    pub initial_components: Vec<BTreeSet<NodeId>>,
    pub violations: Vec<StepViolation>,
    pub fairness: FairnessReport,
    pub end: RunEnd,
    pub final_state: SystemState,
}

impl Trace {
    pub fn steps(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn final_digest(&self) -> u64 {
        self.events.last().map_or_else(|| self.initial.digest(), |e| e.state_digest)
    }

    /// Digest over every event; equal traces of equal runs share it.
    pub fn digest(&self) -> u64 {
        digest_of(&(self.initial.digest(), &self.events))
    }

    /// Step at which `node` became leaving, 0 if it started that way.
    pub fn leaving_since(&self, node: NodeId) -> Option<u64> {
        if self.initial.node(node).is_some_and(|n| n.is_leaving()) {
            return Some(0);
        }
        self.mode_changes.iter().find(|c| c.node == node).map(|c| c.step)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplayError {
    /// The event could not be applied (unknown actor or missing message).
    Inapplicable {
        step: u64,
    },
    Diverged {
        step: u64,
        expected: u64,
        actual: u64,
    },
}

impl fmt::Display for ReplayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayError::Inapplicable { step } => write!(f, "event {step} cannot be applied"),
            ReplayError::Diverged { step, expected, actual } => {
                write!(f, "digest diverged at step {step}: expected {expected:016x}, got {actual:016x}")
            }
        }
    }
}

impl core::error::Error for ReplayError {}

/// Re-executes `events` from `initial`. Returns the state after the last
/// event, or the first step whose digests disagree.
pub fn replay(initial: &SystemState, protocol: &ProtocolConfig, events: &[Event]) -> Result<SystemState, ReplayError> {
    let mut s = initial.clone();
    for e in events {
        let node = s.node(e.actor).filter(|n| n.is_present()).ok_or(ReplayError::Inapplicable { step: e.step })?;
        let node = node.clone();
        if let EventKind::Deliver { index, message } = &e.kind {
            if s.channel(e.actor).get(*index) != Some(message) {
                return Err(ReplayError::Inapplicable { step: e.step });
            }
            s.channels.get_mut(&e.actor).expect("present").remove(*index);
        }
        let oracle = crate::departure::nidec(&s, e.actor);
        let out = protocol::execute(protocol, &node, &e.action(), || oracle);
        let outbox = outbox_digest(&out.outbox);
        apply_outcome(&mut s, e.actor, out, |_, _| {});
        let actual = s.digest();
        if actual != e.state_digest || outbox != e.outbox_digest {
            return Err(ReplayError::Diverged { step: e.step, expected: e.state_digest, actual });
        }
    }
    Ok(s)
}

/// The state after the first `k` events.
pub fn state_at(
    initial: &SystemState,
    protocol: &ProtocolConfig,
    events: &[Event],
    k: usize,
) -> Result<SystemState, ReplayError> {
    replay(initial, protocol, &events[..k.min(events.len())])
}
