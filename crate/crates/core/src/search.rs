//! Search+: probe-before-send routing of search requests along explicit edges.

use alloc::collections::BTreeSet;

use crate::build_list::{ActionOutcome, SearchEffect};
use crate::model::{Message, NodeId, NodeState, SearchRequest, SearchTag};

/// Probe emission shared by every timeout: one self-addressed probe per
/// destination with a pending batch, tagged with that batch's sequence number.
pub(crate) fn emit_probes(out: &mut ActionOutcome) {
    let me = out.me();
    let pending: alloc::vec::Vec<(NodeId, u64)> = out
        .state
        .waiting_for
        .iter()
        .filter(|(_, batch)| !batch.is_empty())
        .map(|(d, _)| (*d, out.state.seq_for(*d)))
        .collect();
    for (dest_id, seq) in pending {
        out.send(me, Message::ForwardProbe { source: me, dest_id, next: BTreeSet::from([me]), seq });
    }
}

pub fn init_search(n: &NodeState, dest_id: NodeId, tag: SearchTag) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    let req = SearchRequest { origin: n.id, dest_id, tag };
    let st = &mut out.state;
    if st.waiting_for.get(&dest_id).is_none_or(|b| b.is_empty()) {
        st.seq += 1;
        st.seq_table.insert(dest_id, st.seq);
    }
    st.waiting_for.entry(dest_id).or_default().push(req);
    out
}

/// What a node does with a probe that is not addressed to it. `store` decides
/// where a newly learned closer neighbor goes.
pub(crate) fn forward(
    out: &mut ActionOutcome,
    source: NodeId,
    dest_id: NodeId,
    mut next: BTreeSet<NodeId>,
    seq: u64,
    store: impl FnOnce(&mut NodeState, NodeId),
) {
    let me = out.me();
    next.remove(&me);
    let u = if dest_id > me {
        next.extend(out.state.right.range(..=dest_id).copied());
        next.first().copied()
    } else {
        next.extend(out.state.left.range(dest_id..).copied());
        next.last().copied()
    };
    let Some(u) = u else {
        out.send(source, Message::ProbeFail { dest_id, seq });
        out.keep(source);
        return;
    };
    if dest_id > me {
        if u < me {
            out.keep(u);
        } else if out.state.right.first().is_none_or(|&r| u < r) {
            store(&mut out.state, u);
        }
    } else if u > me {
        out.keep(u);
    } else if out.state.left.last().is_none_or(|&l| u > l) {
        store(&mut out.state, u);
    }
    out.send(u, Message::ForwardProbe { source, dest_id, next, seq });
}

pub fn on_forward_probe(
    n: &NodeState,
    source: NodeId,
    dest_id: NodeId,
    next: &BTreeSet<NodeId>,
    seq: u64,
) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    if dest_id == n.id {
        for &u in next {
            out.keep(u);
        }
        out.send(source, Message::ProbeSuccess { dest_id, seq, dest: n.id });
        out.keep(source);
    } else {
        forward(&mut out, source, dest_id, next.clone(), seq, |st, u| {
            if u > st.id {
                st.right.insert(u);
            } else {
                st.left.insert(u);
            }
        });
    }
    out
}

pub fn on_probe_success(n: &NodeState, dest_id: NodeId, seq: u64, dest: NodeId) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    if seq >= n.seq_for(dest_id) {
        for req in out.state.waiting_for.remove(&dest_id).unwrap_or_default() {
            out.send(dest, Message::Search(req));
        }
    }
    out.keep(dest);
    out
}

pub fn on_probe_fail(n: &NodeState, dest_id: NodeId, seq: u64) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    if seq >= n.seq_for(dest_id) {
        for req in out.state.waiting_for.remove(&dest_id).unwrap_or_default() {
            out.searches.push(SearchEffect::Failed(req));
        }
    }
    out
}

/// Terminal handling of a search request. One that lands anywhere but its
/// destination can only stem from a corrupted state; it is dropped and its
/// origin reference kept as a temporary edge.
pub fn on_search(n: &NodeState, req: SearchRequest) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    if req.dest_id == n.id {
        out.searches.push(SearchEffect::Delivered(req));
    } else {
        out.keep(req.origin);
        out.searches.push(SearchEffect::Failed(req));
    }
    out
}
