//! Build-List+: list maintenance with the introduce-then-delegate rule.
//!
//! Every function here assumes the caller already ran [`NodeState::repair`].

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{Message, NodeId, NodeState, SearchRequest};
use crate::protocol::{Mutation, ProtocolConfig, SelfIntro};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Outgoing {
    pub to: NodeId,
    pub message: Message,
}

/// Observer-side effect of an action on a search request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SearchEffect {
    Delivered(SearchRequest),
    Failed(SearchRequest),
}

/// Result of one atomic action at one node.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub state: NodeState,
    pub outbox: Vec<Outgoing>,
    pub exited: bool,
    pub searches: Vec<SearchEffect>,
}

impl ActionOutcome {
    pub(crate) fn begin(n: &NodeState) -> Self {
        ActionOutcome { state: n.clone(), outbox: Vec::new(), exited: false, searches: Vec::new() }
    }

    pub(crate) fn me(&self) -> NodeId {
        self.state.id
    }

    pub(crate) fn send(&mut self, to: NodeId, message: Message) {
        // A temporary edge from a node to itself carries nothing.
        if matches!(message, Message::TempDelegate { u } if u == to && to == self.me()) {
            return;
        }
        self.outbox.push(Outgoing { to, message });
    }

    /// `send TempDelegate(u) to self`.
    pub(crate) fn keep(&mut self, u: NodeId) {
        let me = self.me();
        self.send(me, Message::TempDelegate { u });
    }

    /// Every reference carried by the outbox or stored in the new state.
    pub fn references(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.state.stored_refs().map(|(_, id)| id).chain(self.outbox.iter().flat_map(|o| {
            let mut v = o.message.refs();
            v.push(o.to);
            v
        }))
    }
}

pub fn timeout(n: &NodeState) -> ActionOutcome {
    timeout_with(n, &ProtocolConfig::plus())
}

pub(crate) fn timeout_with(n: &NodeState, cfg: &ProtocolConfig) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    crate::search::emit_probes(&mut out);
    let me = n.id;
    let left: Vec<NodeId> = n.left.iter().copied().collect();
    let right: Vec<NodeId> = n.right.iter().copied().collect();
    match cfg.mutation {
        None => {
            for pair in left.windows(2) {
                out.send(pair[1], Message::Introduce { v: pair[0], w: Some(me) });
            }
            for pair in right.windows(2) {
                out.send(pair[0], Message::Introduce { v: pair[1], w: Some(me) });
            }
        }
        Some(Mutation::DirectDelegation) => {
            for pair in left.windows(2) {
                out.state.left.remove(&pair[0]);
                out.send(pair[1], Message::TempDelegate { u: pair[0] });
            }
            for pair in right.windows(2) {
                out.state.right.remove(&pair[1]);
                out.send(pair[0], Message::TempDelegate { u: pair[1] });
            }
        }
    }
    let left_target = match cfg.self_intro {
        SelfIntro::Closest => left.last(),
        SelfIntro::Extreme => left.first(),
    };
    if let Some(&v) = left_target {
        out.send(v, Message::Introduce { v: me, w: None });
    }
    if let Some(&w) = right.first() {
        out.send(w, Message::Introduce { v: me, w: None });
    }
    out
}

pub fn on_introduce(n: &NodeState, v: NodeId, w: Option<NodeId>) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    // A pairing of a node with itself is corrupt; keep only the reference.
    let w = w.filter(|&w| w != v);
    if v == n.id {
        if let Some(w) = w {
            out.keep(w);
        }
        return out;
    }
    match w {
        Some(w) => {
            if v < n.id {
                out.state.left.insert(v);
            } else {
                out.state.right.insert(v);
            }
            out.send(w, Message::Linearize { v });
            out.keep(w);
        }
        None => out.keep(v),
    }
    out
}

pub fn on_linearize(n: &NodeState, v: NodeId) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    out.keep(v);
    if v < n.id {
        if let Some(&closest) = n.left.last() {
            if v != closest {
                if let Some(&w) = n.left.range(v..).find(|&&x| x > v) {
                    out.state.left.remove(&v);
                    out.send(w, Message::TempDelegate { u: v });
                }
            }
        }
    } else if v > n.id {
        if let Some(&closest) = n.right.first() {
            if v != closest {
                if let Some(&w) = n.right.range(..v).next_back() {
                    out.state.right.remove(&v);
                    out.send(w, Message::TempDelegate { u: v });
                }
            }
        }
    }
    out
}

pub fn on_temp_delegate(n: &NodeState, u: NodeId) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    if u < n.id {
        match n.left.last() {
            Some(&x) if x > u => out.send(x, Message::TempDelegate { u }),
            _ => {
                out.state.left.insert(u);
            }
        }
    } else if u > n.id {
        match n.right.first() {
            Some(&x) if x < u => out.send(x, Message::TempDelegate { u }),
            _ => {
                out.state.right.insert(u);
            }
        }
    }
    out
}
