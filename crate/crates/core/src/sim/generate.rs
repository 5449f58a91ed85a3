//! Random initial states: weakly connected, all references resolvable, and
//! optionally salted with corrupted messages and corrupted variables.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    Direction, Message, Mode, ModelError, NodeId, NodeState, SearchRequest, SearchTag, SystemState, Token,
};
use crate::protocol::Protocol;
use crate::sim::{stream, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdAssignment {
    /// Ids 1..=n.
    #[default]
    Sequential,
    /// Distinct random ids below 8n, so that searches can target gaps.
    Sparse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum EdgeModel {
    /// A random spanning tree of stored references plus extra stored
    /// references, each unordered pair independently with probability `density`.
    RandomWeaklyConnectedExplicit { density: f64 },
    /// As above, but each edge is a reference in transit with probability 1/2.
    RandomMixedImplicit { density: f64 },
    /// A given state, taken verbatim. `n`, `ids` and `leaving` are ignored;
    /// corrupted and injected messages are still added.
    Handcrafted { state: SystemState },
}

impl Default for EdgeModel {
    fn default() -> Self {
        EdgeModel::RandomMixedImplicit { density: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialStateSpec {
    pub n: usize,
    #[serde(default)]
    pub ids: IdAssignment,
    #[serde(default)]
    pub edges: EdgeModel,
    /// Selects the message kinds used for implicit edges and corruption.
    #[serde(default)]
    pub protocol: Protocol,
    /// Number of random, typically corrupted, messages to add.
    #[serde(default)]
    pub corrupted_messages: usize,
    /// Messages placed verbatim into the named node's channel.
    #[serde(default)]
    pub injected: Vec<(NodeId, Message)>,
    /// Randomize sequence numbers, pending batches and reversal tokens.
    #[serde(default)]
    pub corrupt_variables: bool,
    /// Number of nodes that start out leaving.
    #[serde(default)]
    pub leaving: usize,
    #[serde(default)]
    pub seed: u64,
}

impl InitialStateSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        InitialStateSpec {
            n,
            ids: IdAssignment::default(),
            edges: EdgeModel::default(),
            protocol: Protocol::Plus,
            corrupted_messages: 0,
            injected: Vec::new(),
            corrupt_variables: false,
            leaving: 0,
            seed,
        }
    }

    /// The fuzzing default: implicit edges, corrupted messages and variables.
    pub fn fuzz(n: usize, protocol: Protocol, seed: u64) -> Self {
        InitialStateSpec {
            ids: IdAssignment::Sparse,
            edges: EdgeModel::RandomMixedImplicit { density: 0.15 },
            protocol,
            corrupted_messages: n / 2 + 1,
            corrupt_variables: true,
            ..InitialStateSpec::new(n, seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GenerateError {
    NoNodes,
    Invalid(ModelError),
}

impl fmt::Display for GenerateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenerateError::NoNodes => write!(f, "an initial state needs at least one node"),
            GenerateError::Invalid(e) => write!(f, "invalid initial state: {e}"),
        }
    }
}

impl core::error::Error for GenerateError {}

struct Gen<'a> {
    rng: ChaCha8Rng,
    ids: Vec<NodeId>,
    state: SystemState,
    protocol: Protocol,
    tags: &'a mut u64,
}

impl Gen<'_> {
    fn any_id(&mut self) -> NodeId {
        *self.ids.choose(&mut self.rng).expect("non-empty")
    }

    /// A destination id that may or may not belong to a node.
    fn any_dest(&mut self) -> NodeId {
        if self.rng.gen_bool(0.7) {
            self.any_id()
        } else {
            let max = self.ids.last().map_or(0, |m| m.0) + 2;
            NodeId(self.rng.gen_range(0..max))
        }
    }

    fn token(&mut self) -> Token {
        Token { minted_by: self.any_id(), counter: self.rng.gen_range(1..4) }
    }

    fn tag(&mut self) -> SearchTag {
        *self.tags += 1;
        SearchTag(*self.tags - 1)
    }

    fn some_ids(&mut self, max: usize) -> BTreeSet<NodeId> {
        let k = self.rng.gen_range(0..=max);
        (0..k).map(|_| self.any_id()).collect()
    }

    /// A message that carries `target` as a reference.
    fn carrying(&mut self, target: NodeId) -> Message {
        let kinds = if self.protocol == Protocol::Star { 9 } else { 7 };
        match self.rng.gen_range(0..kinds) {
            0 | 1 => Message::TempDelegate { u: target },
            2 => Message::Introduce { v: target, w: None },
            3 => {
                let w = self.any_id();
                Message::Introduce { v: target, w: Some(w) }
            }
            4 => Message::Linearize { v: target },
            5 => {
                let (dest_id, seq) = (target, self.rng.gen_range(0..4));
                Message::ProbeSuccess { dest_id, seq, dest: target }
            }
            6 => {
                let mut next = self.some_ids(2);
                next.insert(target);
                let (dest_id, seq) = (self.any_dest(), self.rng.gen_range(0..4));
                Message::ForwardProbe { source: self.any_id(), dest_id, next, seq }
            }
            7 => Message::RevAndLinAck { v: target, token: self.token() },
            _ => {
                let mut node_list = self.some_ids(2);
                node_list.insert(target);
                Message::RevAndLin { node_list, token: self.token() }
            }
        }
    }

    fn random_message(&mut self) -> Message {
        let kinds = if self.protocol == Protocol::Star { 4 } else { 3 };
        match self.rng.gen_range(0..kinds) {
            0 => {
                let t = self.any_id();
                self.carrying(t)
            }
            1 => Message::ProbeFail { dest_id: self.any_dest(), seq: self.rng.gen_range(0..4) },
            2 => {
                let origin = self.any_id();
                let (dest_id, tag) = (self.any_dest(), self.tag());
                Message::Search(SearchRequest { origin, dest_id, tag })
            }
            _ => {
                let dir = if self.rng.gen_bool(0.5) { Direction::Left } else { Direction::Right };
                Message::RevAndLinReq { dir }
            }
        }
    }

    fn link(&mut self, a: NodeId, b: NodeId, implicit: bool) {
        let (holder, target) = if self.rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        if implicit {
            let m = self.carrying(target);
            self.state.send(holder, m);
            return;
        }
        let temp = self.state.nodes[&holder].is_leaving() && self.rng.gen_bool(0.3);
        let node = self.state.node_mut(holder).expect("known");
        let set = match (target < holder, temp) {
            (true, false) => &mut node.left,
            (false, false) => &mut node.right,
            (true, true) => &mut node.temp_left,
            (false, true) => &mut node.temp_right,
        };
        set.insert(target);
    }

    fn corrupt_variables(&mut self, id: NodeId) {
        let seq = self.rng.gen_range(0..4);
        let entries: Vec<(NodeId, u64)> =
            (0..self.rng.gen_range(0..3)).map(|_| (self.any_dest(), self.rng.gen_range(0..6))).collect();
        let batch = if self.rng.gen_bool(0.25) { Some((self.any_dest(), self.tag())) } else { None };
        let tokens: Vec<(NodeId, Token)> = if self.protocol == Protocol::Star {
            (0..self.rng.gen_range(0..2)).map(|_| (self.any_id(), self.token())).collect()
        } else {
            Vec::new()
        };
        let counter = self.rng.gen_range(0..3);
        let n = self.state.node_mut(id).expect("known");
        n.seq = seq;
        n.seq_table.extend(entries);
        if let Some((dest_id, tag)) = batch {
            n.waiting_for.entry(dest_id).or_default().push(SearchRequest { origin: id, dest_id, tag });
        }
        n.unique_values.extend(tokens.into_iter().filter(|(v, _)| *v != id));
        n.token_counter = counter;
    }
}

/// Builds the initial state described by `spec`. Deterministic in `spec.seed`.
///
/// Search tags used by requests inside the generated state are numbered from
/// zero; the simulator continues numbering after the largest one.
pub fn generate_initial_state(spec: &InitialStateSpec) -> Result<SystemState, GenerateError> {
    let mut rng = stream(spec.seed, Stream::Generator);
    let (state, ids) = match &spec.edges {
        EdgeModel::Handcrafted { state } => {
            state.validate().map_err(GenerateError::Invalid)?;
            let mut state = state.clone();
            let ids: Vec<NodeId> = state.nodes.keys().copied().collect();
            for id in &ids {
                state.channels.entry(*id).or_default();
            }
            (state, ids)
        }
        _ => {
            let ids: Vec<NodeId> = match spec.ids {
                IdAssignment::Sequential => (1..=spec.n as u64).map(NodeId).collect(),
                IdAssignment::Sparse => {
                    let mut v: Vec<NodeId> =
                        (0..8 * spec.n as u64).choose_multiple(&mut rng, spec.n).into_iter().map(NodeId).collect();
                    v.sort();
                    v
                }
            };
            let mut state = SystemState::from_nodes(ids.iter().map(|&id| NodeState::new(id)));
            if spec.protocol == Protocol::Star {
                for id in ids.choose_multiple(&mut rng, spec.leaving.min(spec.n)) {
                    state.node_mut(*id).expect("known").mode = Mode::Leaving;
                }
            }
            (state, ids)
        }
    };
    if ids.is_empty() {
        return Err(GenerateError::NoNodes);
    }
    let mut tags = 0;
    let mut g = Gen { rng, ids: ids.clone(), state, protocol: spec.protocol, tags: &mut tags };

    let (density, implicit_share) = match spec.edges {
        EdgeModel::RandomWeaklyConnectedExplicit { density } => (density, 0.0),
        EdgeModel::RandomMixedImplicit { density } => (density, 0.5),
        EdgeModel::Handcrafted { .. } => (0.0, 0.0),
    };
    if !matches!(spec.edges, EdgeModel::Handcrafted { .. }) {
        let mut order = ids.clone();
        order.shuffle(&mut g.rng);
        for i in 1..order.len() {
            let j = g.rng.gen_range(0..i);
            let implicit = g.rng.gen_bool(implicit_share);
            g.link(order[i], order[j], implicit);
        }
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                if g.rng.gen_bool(density.clamp(0.0, 1.0)) {
                    let implicit = g.rng.gen_bool(implicit_share);
                    g.link(ids[i], ids[j], implicit);
                }
            }
        }
    }
    for _ in 0..spec.corrupted_messages {
        let holder = g.any_id();
        let m = g.random_message();
        g.state.send(holder, m);
    }
    if spec.corrupt_variables {
        for &id in &ids {
            g.corrupt_variables(id);
        }
    }
    for (holder, m) in &spec.injected {
        if !g.state.nodes.contains_key(holder) {
            return Err(GenerateError::Invalid(ModelError::UnknownChannel(*holder)));
        }
        g.state.send(*holder, m.clone());
    }
    let state = g.state;
    state.validate().map_err(GenerateError::Invalid)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::is_weakly_connected;

    #[test]
    fn handcrafted_state_is_taken_verbatim() {
        let mut s = SystemState::from_nodes([NodeState::new(NodeId(1)), NodeState::new(NodeId(2))]);
        s.node_mut(NodeId(1)).unwrap().right.insert(NodeId(2));
        s.send(NodeId(2), Message::TempDelegate { u: NodeId(1) });
        let spec =
            InitialStateSpec { edges: EdgeModel::Handcrafted { state: s.clone() }, ..InitialStateSpec::new(0, 9) };
        assert_eq!(generate_initial_state(&spec), Ok(s));
        let empty = InitialStateSpec { edges: EdgeModel::Handcrafted { state: SystemState::default() }, ..spec };
        assert_eq!(generate_initial_state(&empty), Err(GenerateError::NoNodes));
    }

    #[test]
    fn single_node() {
        let s = generate_initial_state(&InitialStateSpec::new(1, 0)).unwrap();
        assert_eq!(s.nodes.len(), 1);
        assert_eq!(s.message_count(), 0);
        assert!(s.nodes.values().all(|n| n.all_neighbors().is_empty()));
    }

    #[test]
    fn generated_states_are_connected_and_closed() {
        for seed in 0..50 {
            for protocol in [Protocol::Plus, Protocol::Star] {
                let mut spec = InitialStateSpec::fuzz(3 + (seed as usize % 10), protocol, seed);
                spec.leaving = 2;
                let s = generate_initial_state(&spec).unwrap();
                assert!(is_weakly_connected(&s), "seed {seed}");
                assert_eq!(s.validate(), Ok(()));
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = InitialStateSpec::fuzz(8, Protocol::Star, 42);
        assert_eq!(generate_initial_state(&spec), generate_initial_state(&spec));
        let other = InitialStateSpec { seed: 43, ..spec.clone() };
        assert_ne!(generate_initial_state(&spec), generate_initial_state(&other));
    }

    #[test]
    fn explicit_model_has_empty_channels() {
        let spec = InitialStateSpec {
            edges: EdgeModel::RandomWeaklyConnectedExplicit { density: 0.2 },
            ..InitialStateSpec::new(6, 7)
        };
        let s = generate_initial_state(&spec).unwrap();
        assert_eq!(s.message_count(), 0);
        assert!(is_weakly_connected(&s));
    }

    #[test]
    fn rejects_bad_injections() {
        let spec = InitialStateSpec {
            injected: alloc::vec![(NodeId(1), Message::TempDelegate { u: NodeId(99) })],
            ..InitialStateSpec::new(2, 0)
        };
        assert!(matches!(generate_initial_state(&spec), Err(GenerateError::Invalid(_))));
        assert_eq!(generate_initial_state(&InitialStateSpec::new(0, 0)), Err(GenerateError::NoNodes));
    }
}
