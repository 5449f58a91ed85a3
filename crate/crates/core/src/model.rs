//! Domain types shared by every protocol module: node identifiers, protocol
//! messages, per-node protocol variables and the global system state.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;
use core::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

/// Totally ordered, immutable node identifier.
///
/// Search destinations share this value space, so a `NodeId` may also name an
/// id that no node in the system carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

/// Also accepts decimal strings, the form ids take as JSON map keys.
impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Id;

        impl serde::de::Visitor<'_> for Id {
            type Value = NodeId;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a node id")
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<NodeId, E> {
                Ok(NodeId(v))
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<NodeId, E> {
                u64::try_from(v).map(NodeId).map_err(|_| E::custom("node ids are not negative"))
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<NodeId, E> {
                v.parse().map(NodeId).map_err(|_| E::invalid_value(serde::de::Unexpected::Str(v), &self))
            }
        }

        d.deserialize_any(Id)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for NodeId {
    fn from(v: u64) -> Self {
        NodeId(v)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Staying,
    Leaving,
}

/// Side of a node, used by the reversal request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

/// Value minted by a node to identify one pending edge reversal.
///
/// The minting node's id is fused with a per-node counter so tokens stay
/// globally distinct even when initial counters are arbitrary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Token {
    pub minted_by: NodeId,
    pub counter: u64,
}

/// Observer-side identity of a search request. Never compared by the protocol.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchTag(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SearchRequest {
    pub origin: NodeId,
    pub dest_id: NodeId,
    pub tag: SearchTag,
}

/// Every message kind that can sit in a channel.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    Introduce { v: NodeId, w: Option<NodeId> },
    Linearize { v: NodeId },
    TempDelegate { u: NodeId },
    ForwardProbe { source: NodeId, dest_id: NodeId, next: BTreeSet<NodeId>, seq: u64 },
    ProbeSuccess { dest_id: NodeId, seq: u64, dest: NodeId },
    ProbeFail { dest_id: NodeId, seq: u64 },
    Search(SearchRequest),
    RevAndLinReq { dir: Direction },
    RevAndLinAck { v: NodeId, token: Token },
    RevAndLin { node_list: BTreeSet<NodeId>, token: Token },
}

impl Message {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Message::Introduce { .. } => "introduce",
            Message::Linearize { .. } => "linearize",
            Message::TempDelegate { .. } => "temp_delegate",
            Message::ForwardProbe { .. } => "forward_probe",
            Message::ProbeSuccess { .. } => "probe_success",
            Message::ProbeFail { .. } => "probe_fail",
            Message::Search(_) => "search",
            Message::RevAndLinReq { .. } => "rev_and_lin_req",
            Message::RevAndLinAck { .. } => "rev_and_lin_ack",
            Message::RevAndLin { .. } => "rev_and_lin",
        }
    }

    /// Calls `f` for every node reference carried by the message, i.e. every
    /// implicit edge it creates from the channel owner. Destination ids are
    /// plain integers and are not references.
    pub fn visit_refs(&self, mut f: impl FnMut(NodeId)) {
        match self {
            Message::Introduce { v, w } => {
                f(*v);
                if let Some(w) = w {
                    f(*w);
                }
            }
            Message::Linearize { v } => f(*v),
            Message::TempDelegate { u } => f(*u),
            Message::ForwardProbe { source, next, .. } => {
                f(*source);
                next.iter().copied().for_each(f);
            }
            Message::ProbeSuccess { dest, .. } => f(*dest),
            Message::ProbeFail { .. } => {}
            Message::Search(req) => f(req.origin),
            Message::RevAndLinReq { .. } => {}
            Message::RevAndLinAck { v, .. } => f(*v),
            Message::RevAndLin { node_list, .. } => node_list.iter().copied().for_each(f),
        }
    }

    pub fn refs(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.visit_refs(|r| out.push(r));
        out
    }

    pub fn carries(&self, id: NodeId) -> bool {
        let mut hit = false;
        self.visit_refs(|r| hit |= r == id);
        hit
    }

    /// True when the message is a temporary (connectivity-only) edge.
    pub fn is_temporary(&self) -> bool {
        matches!(self, Message::TempDelegate { .. })
    }
}

/// Which neighbor set a stored reference lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSet {
    Left,
    Right,
    TempLeft,
    TempRight,
}

/// Protocol variables of one node.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeState {
    pub id: NodeId,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub exited: bool,
    #[serde(default)]
    pub left: BTreeSet<NodeId>,
    #[serde(default)]
    pub right: BTreeSet<NodeId>,
    #[serde(default)]
    pub temp_left: BTreeSet<NodeId>,
    #[serde(default)]
    pub temp_right: BTreeSet<NodeId>,
    #[serde(default)]
    pub seq: u64,
    #[serde(default)]
    pub seq_table: BTreeMap<NodeId, u64>,
    #[serde(default)]
    pub waiting_for: BTreeMap<NodeId, Vec<SearchRequest>>,
    #[serde(default)]
    pub unique_values: BTreeMap<NodeId, Token>,
    /// Counter behind `generateUniqueValue`.
    #[serde(default)]
    pub token_counter: u64,
}

impl NodeState {
    pub fn new(id: NodeId) -> Self {
        NodeState { id, ..Default::default() }
    }

    pub fn with_neighbors(
        id: NodeId,
        left: impl IntoIterator<Item = u64>,
        right: impl IntoIterator<Item = u64>,
    ) -> Self {
        let mut n = NodeState::new(id);
        n.left = left.into_iter().map(NodeId).collect();
        n.right = right.into_iter().map(NodeId).collect();
        n
    }

    pub fn is_staying(&self) -> bool {
        self.mode == Mode::Staying
    }

    pub fn is_leaving(&self) -> bool {
        self.mode == Mode::Leaving
    }

    pub fn is_present(&self) -> bool {
        !self.exited
    }

    pub fn next_left(&self) -> Option<NodeId> {
        self.left.last().copied()
    }

    pub fn next_right(&self) -> Option<NodeId> {
        self.right.first().copied()
    }

    /// `seq[destID]`, reading a missing entry as zero.
    pub fn seq_for(&self, dest_id: NodeId) -> u64 {
        self.seq_table.get(&dest_id).copied().unwrap_or(0)
    }

    pub fn set(&self, which: NeighborSet) -> &BTreeSet<NodeId> {
        match which {
            NeighborSet::Left => &self.left,
            NeighborSet::Right => &self.right,
            NeighborSet::TempLeft => &self.temp_left,
            NeighborSet::TempRight => &self.temp_right,
        }
    }

    /// Every stored reference with the set that holds it.
    pub fn stored_refs(&self) -> impl Iterator<Item = (NeighborSet, NodeId)> + '_ {
        let tag = |s: NeighborSet| move |id: &NodeId| (s, *id);
        self.left
            .iter()
            .map(tag(NeighborSet::Left))
            .chain(self.right.iter().map(tag(NeighborSet::Right)))
            .chain(self.temp_left.iter().map(tag(NeighborSet::TempLeft)))
            .chain(self.temp_right.iter().map(tag(NeighborSet::TempRight)))
    }

    /// `Left ∪ Right ∪ TempLeft ∪ TempRight`.
    pub fn all_neighbors(&self) -> BTreeSet<NodeId> {
        self.stored_refs().map(|(_, id)| id).collect()
    }

    pub fn holds(&self, id: NodeId) -> bool {
        self.left.contains(&id)
            || self.right.contains(&id)
            || self.temp_left.contains(&id)
            || self.temp_right.contains(&id)
    }

    /// Whether all stored references sit on the side their id demands and no
    /// set contains the node itself.
    pub fn is_sane(&self) -> bool {
        let id = self.id;
        self.left.iter().chain(&self.temp_left).all(|&x| x < id)
            && self.right.iter().chain(&self.temp_right).all(|&y| y > id)
            && (self.is_leaving() || (self.temp_left.is_empty() && self.temp_right.is_empty()))
    }

    /// Pre-action sanity repair: wrong-side references move to the matching
    /// set on the correct side and self-references are dropped. A staying
    /// node folds stray temporary references into its regular sets.
    ///
    /// Returns whether anything changed.
    pub fn repair(&mut self) -> bool {
        if self.is_sane() {
            return false;
        }
        let id = self.id;
        let staying = self.is_staying();
        let mut left = BTreeSet::new();
        let mut right = BTreeSet::new();
        let mut temp_left = BTreeSet::new();
        let mut temp_right = BTreeSet::new();
        for x in core::mem::take(&mut self.left).into_iter().chain(core::mem::take(&mut self.right)) {
            if x < id {
                left.insert(x);
            } else if x > id {
                right.insert(x);
            }
        }
        for x in core::mem::take(&mut self.temp_left).into_iter().chain(core::mem::take(&mut self.temp_right)) {
            let (l, r) = if staying { (&mut left, &mut right) } else { (&mut temp_left, &mut temp_right) };
            if x < id {
                l.insert(x);
            } else if x > id {
                r.insert(x);
            }
        }
        self.left = left;
        self.right = right;
        self.temp_left = temp_left;
        self.temp_right = temp_right;
        true
    }

    /// `generateUniqueValue()`: a token not stored in `unique_values`, even
    /// if corruption planted entries ahead of the counter.
    pub fn mint_token(&mut self) -> Token {
        loop {
            self.token_counter += 1;
            let t = Token { minted_by: self.id, counter: self.token_counter };
            if !self.unique_values.values().any(|u| *u == t) {
                return t;
            }
        }
    }
}

/// Unordered multiset of pending messages for one node. Arrival order is kept
/// only so that runs are reproducible; delivery order is the scheduler's call.
pub type Channel = Vec<Message>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelError {
    DuplicateNode(NodeId),
    UnknownReference { holder: NodeId, target: NodeId },
    UnknownChannel(NodeId),
    IdMismatch { key: NodeId, id: NodeId },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::DuplicateNode(id) => write!(f, "node {id} defined twice"),
            ModelError::UnknownReference { holder, target } => {
                write!(f, "node {holder} references unknown node {target}")
            }
            ModelError::UnknownChannel(id) => write!(f, "channel for unknown node {id}"),
            ModelError::IdMismatch { key, id } => {
                write!(f, "node stored under key {key} carries id {id}")
            }
        }
    }
}

impl core::error::Error for ModelError {}

/// All node states plus one channel per node.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    pub nodes: BTreeMap<NodeId, NodeState>,
    #[serde(default)]
    pub channels: BTreeMap<NodeId, Channel>,
}

impl SystemState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_nodes(nodes: impl IntoIterator<Item = NodeState>) -> Self {
        let mut s = SystemState::new();
        for n in nodes {
            s.insert_node(n);
        }
        s
    }

    pub fn insert_node(&mut self, node: NodeState) {
        self.channels.entry(node.id).or_default();
        self.nodes.insert(node.id, node);
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeState> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut NodeState> {
        self.nodes.get_mut(&id)
    }

    pub fn channel(&self, id: NodeId) -> &[Message] {
        self.channels.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_present(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(NodeState::is_present)
    }

    pub fn present(&self) -> impl Iterator<Item = &NodeState> + '_ {
        self.nodes.values().filter(|n| n.is_present())
    }

    pub fn present_ids(&self) -> Vec<NodeId> {
        self.present().map(|n| n.id).collect()
    }

    pub fn message_count(&self) -> usize {
        self.channels.iter().filter(|(id, _)| self.is_present(**id)).map(|(_, c)| c.len()).sum()
    }

    /// Appends `msg` to the channel of `to`. Messages addressed to a gone or
    /// unknown node vanish; returns whether the message was enqueued.
    pub fn send(&mut self, to: NodeId, msg: Message) -> bool {
        if !self.is_present(to) {
            return false;
        }
        self.channels.entry(to).or_default().push(msg);
        true
    }

    /// Checks that every reference in a set or a message resolves to a node and
    /// that map keys agree with node ids.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (key, n) in &self.nodes {
            if *key != n.id {
                return Err(ModelError::IdMismatch { key: *key, id: n.id });
            }
            for (_, r) in n.stored_refs() {
                if !self.nodes.contains_key(&r) {
                    return Err(ModelError::UnknownReference { holder: n.id, target: r });
                }
            }
        }
        for (owner, ch) in &self.channels {
            if !self.nodes.contains_key(owner) {
                return Err(ModelError::UnknownChannel(*owner));
            }
            for m in ch {
                let mut bad = None;
                m.visit_refs(|r| {
                    if bad.is_none() && !self.nodes.contains_key(&r) {
                        bad = Some(r);
                    }
                });
                if let Some(target) = bad {
                    return Err(ModelError::UnknownReference { holder: *owner, target });
                }
            }
        }
        Ok(())
    }

    /// Stable 64-bit digest of the complete state.
    pub fn digest(&self) -> u64 {
        digest_of(self)
    }
}

/// FNV-1a digest of any hashable value; stable across runs on one platform.
pub fn digest_of<T: Hash + ?Sized>(value: &T) -> u64 {
    let mut h = fnv::FnvHasher::default();
    value.hash(&mut h);
    h.finish()
}
