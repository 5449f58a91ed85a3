//! Message invariants and the admissibility test.
//!
//! A few readings are fixed here that the invariant text leaves open:
//!
//! * A probe, answer or search whose destination is its own origin is judged
//!   by the only shape the protocol can produce (a self-addressed probe with
//!   `next ⊆ {source}`, an answer naming the origin itself).
//! * An introduction `Introduce(v, w)` at `u` also requires `v` to lie beyond
//!   `u` as seen from `w`, which is how timeouts create them. Otherwise `u`
//!   files `v` on the side that cannot support the `Linearize(v)` it sends.
//! * The probe-position clause also bounds `Next` by the destination id.
//!   Without that bound a probe holding a node beyond the destination is
//!   admissible, yet the next hop routes it back the other way.
//! * The probe-content clause compares `R(next)` against `R({source})`, which
//!   contains the source; the mirror clause is symmetric.
//! * "Every admissible state with `seq[d] < seq`" ranges over the admissible
//!   states seen so far plus the current one. A probe or failure whose `seq`
//!   exceeds the origin's current `seq[d]` can only stem from corruption and
//!   counts as violating the clause.
//! * In the departure variant, acknowledgements are checked against the
//!   sender's token table, and set comparisons that involve `R_s` of a node
//!   list look at staying members only.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::{BitSet, Reach, Reachability};
use crate::model::{Direction, Message, NodeId, SystemState};
use crate::protocol::Protocol;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantViolation {
    /// 1-based invariant number.
    pub invariant: u8,
    pub owner: NodeId,
    pub message: Message,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub protocol: Protocol,
    /// `holds[i]` is invariant `i + 1`; 6 entries for Build-List+, 8 for Build-List*.
    pub holds: Vec<bool>,
    pub violations: Vec<InvariantViolation>,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.holds.iter().all(|h| *h)
    }

    pub fn failing(&self) -> Vec<u8> {
        (1..=self.holds.len() as u8).filter(|i| !self.holds[*i as usize - 1]).collect()
    }

    /// The invariants that, once true, keep reachability from shrinking.
    pub fn reach_guard(&self) -> bool {
        let k = match self.protocol {
            Protocol::Plus => 2,
            Protocol::Star => 4,
        };
        self.holds[..k].iter().all(|h| *h)
    }
}

pub fn invariant_count(p: Protocol) -> usize {
    match p {
        Protocol::Plus => 6,
        Protocol::Star => 8,
    }
}

fn family(p: Protocol) -> Reachability {
    match p {
        Protocol::Plus => Reachability::All,
        Protocol::Star => Reachability::Staying,
    }
}

/// Per (origin, node) the smallest `origin.seq[id(node)]` seen in an
/// admissible state in which the node was reachable from the origin
/// (through R/L, or R_s/L_s for the departure variant).
#[derive(Clone, Debug)]
pub struct SeqHistory {
    n: usize,
    min_seq: Vec<u64>,
}

impl SeqHistory {
    pub fn new(s: &SystemState) -> Self {
        let n = s.nodes.len();
        SeqHistory { n, min_seq: vec![u64::MAX; n * n] }
    }

    fn cell(&self, reach: &Reach, origin: NodeId, v: NodeId) -> u64 {
        match (reach.index_of(origin), reach.index_of(v)) {
            (Some(i), Some(j)) if i < self.n && j < self.n => self.min_seq[i * self.n + j],
            _ => u64::MAX,
        }
    }

    /// Folds an admissible state into the record.
    pub fn record(&mut self, s: &SystemState, reach: &Reach, protocol: Protocol) {
        let fam = family(protocol);
        for (i, (id, node)) in s.nodes.iter().enumerate() {
            if !node.is_present() || i >= self.n {
                continue;
            }
            for side in [Direction::Left, Direction::Right] {
                for j in reach.bits(fam, side, *id).iter() {
                    let seq = node.seq_for(reach.id_at(j));
                    let cell = &mut self.min_seq[i * self.n + j];
                    *cell = (*cell).min(seq);
                }
            }
        }
    }
}

struct Eval<'a> {
    s: &'a SystemState,
    reach: &'a Reach,
    history: &'a SeqHistory,
    protocol: Protocol,
}

impl Eval<'_> {
    fn fam(&self) -> Reachability {
        family(self.protocol)
    }

    fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        let side = if to > from { Direction::Right } else { Direction::Left };
        to != from && self.reach.reaches(self.fam(), side, from, to)
    }

    fn exists(&self, id: NodeId) -> bool {
        match self.protocol {
            Protocol::Plus => self.s.is_present(id),
            Protocol::Star => self.reach.is_staying(id),
        }
    }

    fn leaving(&self, id: NodeId) -> bool {
        self.s.node(id).is_some_and(|n| n.is_present() && n.is_leaving())
    }

    /// No admissible state so far (nor the current one) has `origin.seq[d]`
    /// below `seq` while `v` was reachable from `origin`; and `seq` is not
    /// from the future.
    fn seq_clause(&self, origin: NodeId, v: NodeId, seq: u64) -> bool {
        let Some(o) = self.s.node(origin) else { return false };
        let current = o.seq_for(v);
        if seq > current {
            return false;
        }
        let mut min = self.history.cell(self.reach, origin, v);
        if self.reaches(origin, v) {
            min = min.min(current);
        }
        min >= seq
    }

    fn subset_staying(&self, a: &BitSet, b: &BitSet) -> bool {
        let mut a = a.clone();
        a.intersect_with(self.reach.staying_mask());
        a.is_subset(b)
    }

    fn introduce(&self, u: NodeId, v: NodeId, w: Option<NodeId>) -> bool {
        let Some(w) = w else { return true };
        if v == w || u == w {
            return false;
        }
        let side = if u > w { Direction::Right } else { Direction::Left };
        let beyond = if u > w { v > u } else { v < u };
        beyond
            && match self.protocol {
                Protocol::Plus => self.reaches(w, u),
                Protocol::Star => {
                    self.reach.staying_plus(side, u).is_subset(&self.reach.bits(Reachability::Staying, side, w))
                }
            }
    }

    fn linearize(&self, w: NodeId, v: NodeId) -> bool {
        if v == w {
            return true;
        }
        let Some(node) = self.s.node(w) else { return false };
        let (side, set) = if w < v { (Direction::Right, &node.right) } else { (Direction::Left, &node.left) };
        set.iter().filter(|&&u| u != v).any(|&u| match self.protocol {
            Protocol::Plus => self.reach.reaches(Reachability::All, side, u, v),
            Protocol::Star => {
                self.reach.staying_plus(side, v).is_subset(&self.reach.bits(Reachability::Staying, side, u))
            }
        })
    }

    fn probe(
        &self,
        u: NodeId,
        source: NodeId,
        d: NodeId,
        next: &alloc::collections::BTreeSet<NodeId>,
        seq: u64,
    ) -> [bool; 3] {
        if source == d {
            let ok = u == source && next.iter().all(|&x| x == source);
            return [ok, true, true];
        }
        let side = if source < d { Direction::Right } else { Direction::Left };
        // Next also stays within the destination id, or the probe turns around.
        let a = match side {
            Direction::Right => next.first() == Some(&u) && next.last().is_some_and(|&x| x <= d),
            Direction::Left => next.last() == Some(&u) && next.first().is_some_and(|&x| x >= d),
        };
        let fam = self.fam();
        let closure = self.reach.closure_of(fam, side, next.iter().copied());
        let b = match self.protocol {
            Protocol::Plus => closure.is_subset(&self.reach.closure_of(fam, side, [source])),
            Protocol::Star => self.subset_staying(&closure, &self.reach.staying_plus(side, source)),
        };
        let c = match self.s.node(d).filter(|_| self.exists(d)) {
            Some(_) => {
                let in_next = self.reach.index_of(d).is_some_and(|j| closure.contains(j));
                in_next || self.seq_clause(source, d, seq)
            }
            None => true,
        };
        [a, b, c]
    }

    fn probe_success(&self, u: NodeId, d: NodeId, dest: NodeId) -> bool {
        if dest != d {
            return false;
        }
        let reached = if d == u { dest == u } else { self.reaches(u, dest) };
        reached || (self.protocol == Protocol::Star && self.leaving(dest))
    }

    fn probe_fail(&self, u: NodeId, d: NodeId, seq: u64) -> bool {
        !self.exists(d) || self.seq_clause(u, d, seq)
    }

    fn search(&self, u: NodeId, origin: NodeId, d: NodeId) -> bool {
        if self.protocol == Protocol::Star && !self.reach.is_staying(u) {
            return true;
        }
        u == d && (origin == d || self.reaches(origin, u))
    }

    fn ack(&self, u: NodeId, v: NodeId, token: crate::model::Token) -> bool {
        let Some(sender) = self.s.node(v) else { return false };
        u != v
            && sender.unique_values.get(&u) == Some(&token)
            && sender.unique_values.iter().filter(|(_, t)| **t == token).count() == 1
    }

    fn rev_and_lin(&self, u: NodeId, list: &alloc::collections::BTreeSet<NodeId>, token: crate::model::Token) -> bool {
        let Some(node) = self.s.node(u) else { return false };
        // Only a neighbor holding the token is matched on delivery; with no
        // such neighbor the message is absorbed as plain references.
        let mut holders = node.all_neighbors().into_iter().filter(|v| node.unique_values.get(v) == Some(&token));
        let Some(v) = holders.next() else { return true };
        if holders.next().is_some() {
            return false;
        }
        if !self.leaving(v) || v == u {
            return false;
        }
        let side = if u < v { Direction::Right } else { Direction::Left };
        let mut closure = self.reach.closure_of(Reachability::Staying, side, list.iter().copied());
        closure.intersect_with(self.reach.staying_mask());
        closure == self.reach.bits(Reachability::Staying, side, v)
    }
}

/// Evaluates every message invariant of `protocol` on `s`.
pub fn check_invariants(
    s: &SystemState,
    reach: &Reach,
    history: &SeqHistory,
    protocol: Protocol,
) -> AdmissibilityReport {
    let e = Eval { s, reach, history, protocol };
    let mut holds = vec![true; invariant_count(protocol)];
    let mut violations = Vec::new();
    // Star numbering shifts the shared invariants by two after the handshake pair.
    let (probe_no, success_no, fail_no, search_no) = match protocol {
        Protocol::Plus => (3, 4, 5, 6),
        Protocol::Star => (5, 6, 7, 8),
    };
    for owner in s.present() {
        let u = owner.id;
        for m in s.channel(u) {
            let verdict: Option<u8> = match m {
                Message::Introduce { v, w } => (!e.introduce(u, *v, *w)).then_some(1),
                Message::Linearize { v } => (!e.linearize(u, *v)).then_some(2),
                Message::ForwardProbe { source, dest_id, next, seq } => {
                    (!e.probe(u, *source, *dest_id, next, *seq).iter().all(|b| *b)).then_some(probe_no)
                }
                Message::ProbeSuccess { dest_id, dest, .. } => {
                    (!e.probe_success(u, *dest_id, *dest)).then_some(success_no)
                }
                Message::ProbeFail { dest_id, seq } => (!e.probe_fail(u, *dest_id, *seq)).then_some(fail_no),
                Message::Search(r) => (!e.search(u, r.origin, r.dest_id)).then_some(search_no),
                Message::RevAndLinAck { v, token } if protocol == Protocol::Star => {
                    (!e.ack(u, *v, *token)).then_some(3)
                }
                Message::RevAndLin { node_list, token } if protocol == Protocol::Star => {
                    (!e.rev_and_lin(u, node_list, *token)).then_some(4)
                }
                _ => None,
            };
            if let Some(i) = verdict {
                holds[i as usize - 1] = false;
                violations.push(InvariantViolation { invariant: i, owner: u, message: m.clone() });
            }
        }
    }
    AdmissibilityReport { protocol, holds, violations }
}

/// Single-state evaluation for Build-List+ with no recorded history.
pub fn check_invariants_plus(s: &SystemState) -> AdmissibilityReport {
    check_invariants(s, &Reach::new(s), &SeqHistory::new(s), Protocol::Plus)
}

/// Single-state evaluation for Build-List* with no recorded history.
pub fn check_invariants_star(s: &SystemState) -> AdmissibilityReport {
    check_invariants(s, &Reach::new(s), &SeqHistory::new(s), Protocol::Star)
}
