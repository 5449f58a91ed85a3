//! Brute-force oracles shared by the integration tests.
//!
//! Nothing here calls into `graph::Reach` or `checkers`: reachability is plain
//! DFS over the raw node variables and every invariant is evaluated from
//! scratch, so the two implementations only share the data model.

#![allow(dead_code)]

use std::collections::BTreeSet;

use linstab_core::model::{Message, NodeId, NodeState, SearchRequest, SearchTag, SystemState, Token};
use linstab_core::sim::{
    generate_initial_state, run, state_at, InitialStateSpec, RunConfig, ScriptStep, StopCondition,
};
use linstab_core::{Protocol, ProtocolConfig};
use rand::seq::IteratorRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

fn side_of(from: NodeId, to: NodeId) -> Side {
    if to > from {
        Side::Right
    } else {
        Side::Left
    }
}

fn toward(side: Side, from: NodeId, to: NodeId) -> bool {
    match side {
        Side::Right => to > from,
        Side::Left => to < from,
    }
}

pub fn staying(s: &SystemState, id: NodeId) -> bool {
    s.nodes.get(&id).is_some_and(|n| !n.exited && n.is_staying())
}

pub fn leaving(s: &SystemState, id: NodeId) -> bool {
    s.nodes.get(&id).is_some_and(|n| !n.exited && n.is_leaving())
}

/// R(v) / L(v): nodes reachable from `v` along explicit edges that all point
/// to the given side.
pub fn reach_all(s: &SystemState, side: Side, v: NodeId) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![v];
    while let Some(x) = stack.pop() {
        let Some(node) = s.nodes.get(&x) else { continue };
        let refs = node.left.iter().chain(&node.right).chain(&node.temp_left).chain(&node.temp_right);
        for &y in refs {
            if toward(side, x, y) && s.nodes.contains_key(&y) && seen.insert(y) {
                stack.push(y);
            }
        }
    }
    seen
}

/// R_s(v) / L_s(v): staying nodes reachable from `v` through `Right`
/// (`Left`) sets only. Intermediate hops may be leaving.
pub fn reach_staying(s: &SystemState, side: Side, v: NodeId) -> BTreeSet<NodeId> {
    let mut visited = BTreeSet::new();
    let mut stack = vec![v];
    while let Some(x) = stack.pop() {
        let Some(node) = s.nodes.get(&x) else { continue };
        let set = match side {
            Side::Right => &node.right,
            Side::Left => &node.left,
        };
        for &y in set {
            if toward(side, x, y) && s.nodes.contains_key(&y) && visited.insert(y) {
                stack.push(y);
            }
        }
    }
    visited.into_iter().filter(|&y| staying(s, y)).collect()
}

pub struct Oracle<'a> {
    pub s: &'a SystemState,
    pub protocol: Protocol,
}

impl Oracle<'_> {
    fn star(&self) -> bool {
        self.protocol == Protocol::Star
    }

    fn reach(&self, side: Side, v: NodeId) -> BTreeSet<NodeId> {
        if self.star() {
            reach_staying(self.s, side, v)
        } else {
            reach_all(self.s, side, v)
        }
    }

    fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        from != to && self.reach(side_of(from, to), from).contains(&to)
    }

    fn closure(&self, side: Side, set: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        for &u in set.iter().filter(|u| self.s.nodes.contains_key(u)) {
            out.insert(u);
            out.extend(self.reach(side, u));
        }
        out
    }

    fn plus_set(&self, side: Side, v: NodeId) -> BTreeSet<NodeId> {
        let mut out = reach_staying(self.s, side, v);
        if staying(self.s, v) {
            out.insert(v);
        }
        out
    }

    fn exists(&self, id: NodeId) -> bool {
        if self.star() {
            staying(self.s, id)
        } else {
            self.s.is_present(id)
        }
    }

    /// With no history beyond the current state the clause reduces to the
    /// origin's table not having moved below `seq`.
    fn seq_ok(&self, origin: NodeId, d: NodeId, seq: u64) -> bool {
        self.s.nodes.get(&origin).is_some_and(|o| seq <= o.seq_for(d))
    }

    fn introduce(&self, u: NodeId, v: NodeId, w: Option<NodeId>) -> bool {
        let Some(w) = w else { return true };
        if v == w || u == w {
            return false;
        }
        let side = side_of(w, u);
        if !toward(side, u, v) {
            return false;
        }
        if self.star() {
            self.plus_set(side, u).is_subset(&reach_staying(self.s, side, w))
        } else {
            reach_all(self.s, side, w).contains(&u)
        }
    }

    fn linearize(&self, w: NodeId, v: NodeId) -> bool {
        if v == w {
            return true;
        }
        let node = &self.s.nodes[&w];
        let side = side_of(w, v);
        let set = if side == Side::Right { &node.right } else { &node.left };
        set.iter().filter(|&&u| u != v).any(|&u| {
            if self.star() {
                self.plus_set(side, v).is_subset(&reach_staying(self.s, side, u))
            } else {
                reach_all(self.s, side, u).contains(&v)
            }
        })
    }

    fn probe(&self, u: NodeId, source: NodeId, d: NodeId, next: &BTreeSet<NodeId>, seq: u64) -> bool {
        if source == d {
            return u == source && next.iter().all(|&x| x == source);
        }
        let side = side_of(source, d);
        let (Some(&lo), Some(&hi)) = (next.iter().min(), next.iter().max()) else { return false };
        let position = match side {
            Side::Right => lo == u && hi <= d,
            Side::Left => hi == u && lo >= d,
        };
        let reach_next = self.closure(side, next);
        let content = if self.star() {
            let source_plus = self.plus_set(side, source);
            reach_next.iter().filter(|&&x| staying(self.s, x)).all(|x| source_plus.contains(x))
        } else {
            reach_next.is_subset(&self.closure(side, &BTreeSet::from([source])))
        };
        let history = !(self.s.nodes.contains_key(&d) && self.exists(d))
            || reach_next.contains(&d)
            || self.seq_ok(source, d, seq);
        position && content && history
    }

    fn success(&self, u: NodeId, d: NodeId, dest: NodeId) -> bool {
        if dest != d {
            return false;
        }
        let reached = if d == u { true } else { self.reaches(u, dest) };
        reached || (self.star() && leaving(self.s, dest))
    }

    fn fail(&self, u: NodeId, d: NodeId, seq: u64) -> bool {
        !self.exists(d) || self.seq_ok(u, d, seq)
    }

    fn search(&self, u: NodeId, r: &SearchRequest) -> bool {
        if self.star() && !staying(self.s, u) {
            return true;
        }
        u == r.dest_id && (r.origin == r.dest_id || self.reaches(r.origin, u))
    }

    fn ack(&self, u: NodeId, v: NodeId, token: Token) -> bool {
        let Some(sender) = self.s.nodes.get(&v) else { return false };
        u != v
            && sender.unique_values.get(&u) == Some(&token)
            && sender.unique_values.values().filter(|t| **t == token).count() == 1
    }

    fn rev_and_lin(&self, u: NodeId, list: &BTreeSet<NodeId>, token: Token) -> bool {
        let node = &self.s.nodes[&u];
        let neighbors: BTreeSet<NodeId> =
            node.left.iter().chain(&node.right).chain(&node.temp_left).chain(&node.temp_right).copied().collect();
        let holders: Vec<NodeId> =
            neighbors.into_iter().filter(|h| node.unique_values.get(h) == Some(&token)).collect();
        match holders[..] {
            [] => true,
            [v] => {
                let side = side_of(u, v);
                let got: BTreeSet<NodeId> =
                    self.closure(side, list).into_iter().filter(|&x| staying(self.s, x)).collect();
                leaving(self.s, v) && v != u && got == reach_staying(self.s, side, v)
            }
            _ => false,
        }
    }

    /// Numbers of the invariants violated by some message.
    pub fn failing(&self) -> BTreeSet<u8> {
        let star = self.star();
        let shift = if star { 2 } else { 0 };
        let mut out = BTreeSet::new();
        for (owner, ch) in &self.s.channels {
            if !self.s.is_present(*owner) {
                continue;
            }
            let u = *owner;
            for m in ch {
                let bad = match m {
                    Message::Introduce { v, w } => (!self.introduce(u, *v, *w)).then_some(1),
                    Message::Linearize { v } => (!self.linearize(u, *v)).then_some(2),
                    Message::ForwardProbe { source, dest_id, next, seq } => {
                        (!self.probe(u, *source, *dest_id, next, *seq)).then_some(3 + shift)
                    }
                    Message::ProbeSuccess { dest_id, dest, .. } => {
                        (!self.success(u, *dest_id, *dest)).then_some(4 + shift)
                    }
                    Message::ProbeFail { dest_id, seq } => (!self.fail(u, *dest_id, *seq)).then_some(5 + shift),
                    Message::Search(r) => (!self.search(u, r)).then_some(6 + shift),
                    Message::RevAndLinAck { v, token } if star => (!self.ack(u, *v, *token)).then_some(3),
                    Message::RevAndLin { node_list, token } if star => {
                        (!self.rev_and_lin(u, node_list, *token)).then_some(4)
                    }
                    _ => None,
                };
                out.extend(bad);
            }
        }
        out
    }
}

/// NIDEC by definition: no other present node stores `u` or has it in transit,
/// and `u`'s own channel is empty.
pub fn nidec_oracle(s: &SystemState, u: NodeId) -> bool {
    s.is_present(u)
        && s.channel(u).is_empty()
        && s.present().filter(|n| n.id != u).all(|n| {
            !n.left.contains(&u)
                && !n.right.contains(&u)
                && !n.temp_left.contains(&u)
                && !n.temp_right.contains(&u)
                && s.channel(n.id).iter().all(|m| !m.refs().contains(&u))
        })
}

/// Any message kind with random arguments drawn from `ids`.
pub fn random_message(rng: &mut ChaCha8Rng, ids: &[NodeId], star: bool) -> Message {
    let pick = |rng: &mut ChaCha8Rng| ids[rng.gen_range(0..ids.len())];
    let some = |rng: &mut ChaCha8Rng| -> BTreeSet<NodeId> {
        let k = rng.gen_range(1..=ids.len().min(3));
        ids.iter().copied().choose_multiple(rng, k).into_iter().collect()
    };
    let token = |rng: &mut ChaCha8Rng| Token { minted_by: pick(rng), counter: rng.gen_range(0..4) };
    let kinds = if star { 10 } else { 7 };
    match rng.gen_range(0..kinds) {
        0 => Message::Introduce { v: pick(rng), w: rng.gen_bool(0.7).then(|| pick(rng)) },
        1 => Message::Linearize { v: pick(rng) },
        2 => Message::TempDelegate { u: pick(rng) },
        3 => Message::ForwardProbe {
            source: pick(rng),
            dest_id: NodeId(rng.gen_range(0..ids.last().unwrap().0 + 2)),
            next: some(rng),
            seq: rng.gen_range(0..3),
        },
        4 => {
            let d = pick(rng);
            Message::ProbeSuccess {
                dest_id: d,
                seq: rng.gen_range(0..3),
                dest: if rng.gen_bool(0.8) { d } else { pick(rng) },
            }
        }
        5 => Message::ProbeFail {
            dest_id: NodeId(rng.gen_range(0..ids.last().unwrap().0 + 2)),
            seq: rng.gen_range(0..3),
        },
        6 => Message::Search(SearchRequest { origin: pick(rng), dest_id: pick(rng), tag: SearchTag(rng.gen()) }),
        7 => Message::RevAndLinReq {
            dir: if rng.gen_bool(0.5) {
                linstab_core::model::Direction::Left
            } else {
                linstab_core::model::Direction::Right
            },
        },
        8 => Message::RevAndLinAck { v: pick(rng), token: token(rng) },
        _ => Message::RevAndLin { node_list: some(rng), token: token(rng) },
    }
}

/// A mix of freshly generated corrupt states and states sampled from runs,
/// each optionally carrying one extra random message.
pub fn random_states(count: usize, max_n: usize, seed: u64) -> Vec<(SystemState, Protocol)> {
    let mut rng = linstab_core::sim::stream(seed, linstab_core::sim::Stream::Workload);
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    while out.len() < count {
        i += 1;
        let protocol = if rng.gen_bool(0.5) { Protocol::Plus } else { Protocol::Star };
        let n = rng.gen_range(2..=max_n);
        let mut spec = InitialStateSpec::fuzz(n, protocol, seed.wrapping_mul(1_000_003).wrapping_add(i));
        if protocol == Protocol::Star {
            spec.leaving = rng.gen_range(0..=n / 2);
        }
        let Ok(initial) = generate_initial_state(&spec) else { continue };
        let mut s = if rng.gen_bool(0.5) {
            initial
        } else {
            let cfg = RunConfig {
                protocol: if protocol == Protocol::Star { ProtocolConfig::star() } else { ProtocolConfig::plus() },
                seed: i,
                max_steps: rng.gen_range(1..400),
                stop: StopCondition::StepLimit,
                ..RunConfig::default()
            };
            let trace = run(initial, cfg.clone()).expect("generated states are valid");
            let k = rng.gen_range(0..=trace.events.len());
            state_at(&trace.initial, &cfg.protocol, &trace.events, k).expect("recorded events replay")
        };
        if rng.gen_bool(0.5) {
            let ids = s.present_ids();
            if !ids.is_empty() {
                let to = ids[rng.gen_range(0..ids.len())];
                let m = random_message(&mut rng, &ids, protocol == Protocol::Star);
                s.send(to, m);
            }
        }
        out.push((s, protocol));
    }
    out
}

pub fn node(id: u64, left: &[u64], right: &[u64]) -> NodeState {
    NodeState::with_neighbors(NodeId(id), left.iter().copied(), right.iter().copied())
}

/// The sorted line over `ids`.
pub fn line(ids: &[u64]) -> SystemState {
    SystemState::from_nodes(ids.iter().enumerate().map(|(i, &id)| {
        let l: Vec<u64> = if i > 0 { vec![ids[i - 1]] } else { vec![] };
        let r: Vec<u64> = ids.get(i + 1).map(|&x| vec![x]).unwrap_or_default();
        node(id, &l, &r)
    }))
}

/// A three-node corrupted start in which a later search fails before an
/// earlier one to the same destination arrives: 1 stores 2,
/// 2 only has 3 in transit, and 1 holds a forged failure for destination 3
/// carrying a sequence number 1 has not reached yet.
pub fn forged_failure() -> (SystemState, Vec<ScriptStep>) {
    let (u, v, w) = (NodeId(1), NodeId(2), NodeId(3));
    let mut s = SystemState::from_nodes([node(1, &[], &[2]), node(2, &[], &[]), node(3, &[], &[])]);
    s.send(v, Message::TempDelegate { u: w });
    let forged = Message::ProbeFail { dest_id: w, seq: 2 };
    s.send(u, forged.clone());
    let probe = |next: &[u64]| Message::ForwardProbe {
        source: u,
        dest_id: w,
        next: next.iter().copied().map(NodeId).collect(),
        seq: 1,
    };
    let deliver = |node: NodeId, message: Message| ScriptStep::Deliver { node, message };
    let a = SearchRequest { origin: u, dest_id: w, tag: SearchTag(0) };
    let script = vec![
        ScriptStep::InitSearch { node: u, dest_id: w },
        ScriptStep::Timeout { node: u },
        deliver(u, probe(&[1])),
        deliver(v, Message::TempDelegate { u: w }),
        deliver(v, probe(&[2])),
        deliver(w, probe(&[3])),
        deliver(u, Message::ProbeSuccess { dest_id: w, seq: 1, dest: w }),
        ScriptStep::InitSearch { node: u, dest_id: w },
        deliver(u, forged),
        deliver(w, Message::Search(a)),
    ];
    (s, script)
}

/// A node with arbitrary (possibly insane) variables over `ids`.
pub fn random_node(rng: &mut ChaCha8Rng, ids: &[NodeId], mode: linstab_core::model::Mode) -> NodeState {
    let subset = |rng: &mut ChaCha8Rng| -> BTreeSet<NodeId> {
        let k = rng.gen_range(0..=ids.len().min(3));
        ids.iter().copied().choose_multiple(rng, k).into_iter().collect()
    };
    let id = ids[rng.gen_range(0..ids.len())];
    let mut n = NodeState { id, mode, ..NodeState::default() };
    n.left = subset(rng);
    n.right = subset(rng);
    if rng.gen_bool(0.3) {
        n.temp_left = subset(rng);
        n.temp_right = subset(rng);
    }
    n.seq = rng.gen_range(0..4);
    for d in subset(rng) {
        n.seq_table.insert(d, rng.gen_range(0..4));
    }
    for d in subset(rng) {
        n.waiting_for.entry(d).or_default().push(SearchRequest { origin: id, dest_id: d, tag: SearchTag(rng.gen()) });
    }
    n
}
