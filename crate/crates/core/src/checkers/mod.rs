//! Observers over states and traces. Nothing here mutates a [`SystemState`].

pub mod invariants;
pub mod properties;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::build_list::Outgoing;
use crate::graph::{
    closest_neighbor_graph, explicit_graph, is_weakly_connected, potential_phi, Reach, Reachability, StayingPaths,
};
use crate::model::{digest_of, Direction, Message, NodeId, NodeState, SystemState};
use crate::protocol::{Action, Protocol};
use crate::sim::Observation;

pub use invariants::{
    check_invariants, check_invariants_plus, check_invariants_star, invariant_count, AdmissibilityReport,
    InvariantViolation, SeqHistory,
};
pub use properties::{
    check_admissibility, check_all, check_connectivity, check_convergence, check_exit_gating, check_fairness,
    check_fdp, check_leaving_self_refs, check_phi_monotone, check_property, check_r_monotone, check_searchability,
    is_fixed_point, is_fixed_point_cached, FixedPointCache, Property, PropertyVerdict, Status, UnknownProperty,
};

/// A violation detected while the run was in progress.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepViolation {
    pub step: u64,
    pub property: Property,
    pub detail: String,
}

/// Per-step observer used by the simulator.
pub struct Monitor {
    protocol: Protocol,
    paths: StayingPaths,
    history: SeqHistory,
    prev: Option<(Reach, bool)>,
    fixed_point: FixedPointCache,
    violations: Vec<StepViolation>,
}

impl Monitor {
    pub fn new(protocol: Protocol, paths: StayingPaths, initial: &SystemState) -> Self {
        Monitor {
            protocol,
            paths,
            history: SeqHistory::new(initial),
            prev: None,
            fixed_point: FixedPointCache::default(),
            violations: Vec::new(),
        }
    }

    pub fn observe(&mut self, step: u64, s: &SystemState) -> Observation {
        let reach = Reach::with_paths(s, self.paths);
        let report = check_invariants(s, &reach, &self.history, self.protocol);
        let admissible = report.admissible();
        if admissible {
            self.history.record(s, &reach, self.protocol);
        }
        if let Some((prev, true)) = self.prev.take() {
            self.check_reach_monotone(step, s, &prev, &reach);
        }
        let guard = report.reach_guard();
        self.prev = Some((reach, guard));
        let mut eng: Vec<(NodeId, NodeId)> = explicit_graph(s).into_iter().collect();
        eng.sort();
        Observation {
            phi: (self.protocol == Protocol::Plus).then(|| potential_phi(s)),
            connected: is_weakly_connected(s),
            admissible,
            failing: report.failing(),
            reach_guard: guard,
            fixed_point: is_fixed_point_cached(s, self.protocol, &mut self.fixed_point),
            eng_digest: digest_of(&eng),
            present: s.present().count(),
            leaving: s.present().filter(|n| n.is_leaving()).count(),
        }
    }

    fn check_reach_monotone(&mut self, step: u64, s: &SystemState, prev: &Reach, cur: &Reach) {
        let family = match self.protocol {
            Protocol::Plus => Reachability::All,
            Protocol::Star => Reachability::Staying,
        };
        for v in s.present() {
            if self.protocol == Protocol::Star && !v.is_staying() {
                continue;
            }
            for side in [Direction::Left, Direction::Right] {
                let before = prev.bits(family, side, v.id);
                let mut lost = before.clone();
                lost.intersect_with(&complement(&cur.bits(family, side, v.id), cur.len()));
                if family == Reachability::Staying {
                    lost.intersect_with(cur.staying_mask());
                }
                let first = lost.iter().next();
                if let Some(x) = first {
                    self.violations.push(StepViolation {
                        step,
                        property: Property::RMonotone,
                        detail: format!("{} lost {} from its {:?} reachability set", v.id, cur.id_at(x), side),
                    });
                    return;
                }
            }
        }
    }

    /// The checker's own NIDEC evaluation, computed from NG rather than from
    /// the node variables directly.
    pub fn exit_permitted(&self, s: &SystemState, u: NodeId) -> bool {
        s.is_present(u)
            && s.channel(u).is_empty()
            && crate::graph::network_graph(s).iter().all(|e| e.to != u || e.from == u)
    }

    /// A leaving node must not hand its own reference to anybody. The
    /// handshake replies that name the sender by construction are exempt.
    pub fn check_outbox(&mut self, step: u64, pre: &NodeState, action: &Action, outbox: &[Outgoing]) {
        if self.protocol != Protocol::Star || !pre.is_leaving() {
            return;
        }
        let me = pre.id;
        for o in outbox {
            if o.to == me || !o.message.carries(me) {
                continue;
            }
            let exempt = match (&o.message, action) {
                (Message::RevAndLinAck { v, .. }, _) => *v == me,
                (Message::Introduce { v, w: None }, Action::Deliver { message: Message::RevAndLin { .. } }) => *v == me,
                (
                    Message::ForwardProbe { source, .. },
                    Action::Deliver { message: Message::ForwardProbe { source: s, .. } },
                ) => source == s && *source == me,
                _ => false,
            };
            if !exempt {
                self.violations.push(StepViolation {
                    step,
                    property: Property::LeavingSelfRefs,
                    detail: format!("leaving {me} sent {} carrying itself to {}", o.message.kind_name(), o.to),
                });
            }
        }
    }

    pub fn violations(&self) -> &[StepViolation] {
        &self.violations
    }

    pub fn into_violations(self) -> Vec<StepViolation> {
        self.violations
    }
}

fn complement(b: &crate::graph::BitSet, len: usize) -> crate::graph::BitSet {
    let mut out = crate::graph::BitSet::new(len);
    for i in 0..len {
        if !b.contains(i) {
            out.insert(i);
        }
    }
    out
}

/// G_NB of `s` equals the sorted line over its present nodes.
pub fn closest_graph_is_line(s: &SystemState) -> bool {
    closest_neighbor_graph(s) == crate::graph::line_edges(&s.present_ids())
}
