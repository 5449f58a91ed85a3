//! Build-List* and Search*: leaving-mode behavior, the edge-reversal
//! handshake, the NIDEC oracle and exit.
//!
//! Staying nodes run the base protocol unchanged; every function below
//! dispatches to `build_list` / `search` for them.

use alloc::collections::BTreeSet;

use crate::build_list::{self, ActionOutcome, SearchEffect};
use crate::model::{Direction, Message, NodeId, NodeState, SearchRequest, SearchTag, SystemState, Token};
use crate::protocol::ProtocolConfig;
use crate::search;

/// NIDEC: nobody but `u` holds a reference to `u`, and `u`'s channel is empty.
pub fn nidec(s: &SystemState, u: NodeId) -> bool {
    if !s.is_present(u) || !s.channel(u).is_empty() {
        return false;
    }
    s.present().filter(|n| n.id != u).all(|n| !n.holds(u) && !s.channel(n.id).iter().any(|m| m.carries(u)))
}

fn store_temp(st: &mut NodeState, x: NodeId) {
    if x < st.id {
        st.temp_left.insert(x);
    } else if x > st.id {
        st.temp_right.insert(x);
    }
}

fn exit(out: &mut ActionOutcome) {
    let st = &mut out.state;
    st.exited = true;
    st.left.clear();
    st.right.clear();
    st.temp_left.clear();
    st.temp_right.clear();
    for (_, batch) in core::mem::take(&mut st.waiting_for) {
        out.searches.extend(batch.into_iter().map(SearchEffect::Failed));
    }
    out.exited = true;
}

pub fn timeout_star(n: &NodeState, oracle: bool) -> ActionOutcome {
    timeout_star_with(n, oracle, &ProtocolConfig::star())
}

pub(crate) fn timeout_star_with(n: &NodeState, oracle: bool, cfg: &ProtocolConfig) -> ActionOutcome {
    if n.is_staying() {
        return build_list::timeout_with(n, cfg);
    }
    let mut out = ActionOutcome::begin(n);
    if oracle {
        let all = n.all_neighbors();
        for &v in &all {
            for &w in &all {
                if v != w {
                    out.send(v, Message::Introduce { v: w, w: None });
                }
            }
        }
        exit(&mut out);
    } else {
        for &v in n.left.iter().chain(&n.temp_left) {
            out.send(v, Message::RevAndLinReq { dir: Direction::Right });
        }
        for &w in n.right.iter().chain(&n.temp_right) {
            out.send(w, Message::RevAndLinReq { dir: Direction::Left });
        }
    }
    out
}

pub fn on_introduce_star(n: &NodeState, v: NodeId, w: Option<NodeId>) -> ActionOutcome {
    if n.is_staying() {
        return build_list::on_introduce(n, v, w);
    }
    let mut out = ActionOutcome::begin(n);
    for x in core::iter::once(v).chain(w) {
        let held = if x < n.id { n.left.contains(&x) } else { n.right.contains(&x) };
        if !held {
            store_temp(&mut out.state, x);
        }
    }
    out
}

pub fn on_linearize_star(n: &NodeState, v: NodeId) -> ActionOutcome {
    if n.is_staying() {
        return build_list::on_linearize(n, v);
    }
    let mut out = ActionOutcome::begin(n);
    store_temp(&mut out.state, v);
    out
}

pub fn on_temp_delegate_star(n: &NodeState, u: NodeId) -> ActionOutcome {
    if n.is_staying() {
        return build_list::on_temp_delegate(n, u);
    }
    let mut out = ActionOutcome::begin(n);
    let closer = if u < n.id { n.left.last().filter(|&&x| x > u) } else { n.right.first().filter(|&&x| x < u) };
    match closer {
        Some(&x) => out.send(x, Message::TempDelegate { u }),
        None => {
            let held = if u < n.id { n.left.contains(&u) } else { n.right.contains(&u) };
            if !held {
                store_temp(&mut out.state, u);
            }
        }
    }
    out
}

pub fn on_rev_and_lin_req(n: &NodeState, dir: Direction) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    let targets: BTreeSet<NodeId> = match dir {
        Direction::Right => n.right.union(&n.temp_right).copied().collect(),
        Direction::Left if n.is_staying() => n.left.union(&n.temp_left).copied().collect(),
        Direction::Left => return out,
    };
    for v in targets {
        let table = &out.state.unique_values;
        let unique = |t: &Token| table.values().filter(|u| *u == t).count() == 1;
        let token = match table.get(&v).filter(|t| unique(t)) {
            Some(t) => *t,
            None => {
                let t = out.state.mint_token();
                out.state.unique_values.insert(v, t);
                t
            }
        };
        out.send(v, Message::RevAndLinAck { v: n.id, token });
    }
    out
}

pub fn on_rev_and_lin_ack(n: &NodeState, v: NodeId, token: Token) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    if v == n.id {
        return out;
    }
    if n.is_staying() {
        out.keep(v);
        return out;
    }
    let node_list = if v < n.id {
        out.state.temp_left.insert(v);
        n.right.clone()
    } else {
        out.state.temp_right.insert(v);
        n.left.clone()
    };
    out.send(v, Message::RevAndLin { node_list, token });
    out
}

pub fn on_rev_and_lin(n: &NodeState, node_list: &BTreeSet<NodeId>, token: Token) -> ActionOutcome {
    let mut out = ActionOutcome::begin(n);
    let me = n.id;
    let all_left = node_list.iter().all(|&x| x < me);
    let all_right = node_list.iter().all(|&x| x > me);
    let requester = n.all_neighbors().into_iter().find(|v| n.unique_values.get(v) == Some(&token));
    // The list must lie on one side of us, namely the side of the node whose
    // reversal it answers.
    let consistent = match requester {
        Some(v) if v < me => all_left,
        Some(_) => all_right,
        None => false,
    };
    let Some(v) = requester.filter(|_| consistent) else {
        for &u in node_list {
            out.keep(u);
        }
        return out;
    };
    let st = &mut out.state;
    if st.is_staying() {
        let set = if v < me { &mut st.left } else { &mut st.right };
        set.extend(node_list.iter().copied());
        set.remove(&v);
        out.send(v, Message::Introduce { v: me, w: None });
    } else if v < me {
        st.temp_left.extend(node_list.iter().copied());
    } else {
        let set = if st.right.contains(&v) { &mut st.right } else { &mut st.temp_right };
        set.extend(node_list.iter().copied());
        set.remove(&v);
        out.send(v, Message::Introduce { v: me, w: None });
    }
    out
}

pub fn init_search_star(n: &NodeState, dest_id: NodeId, tag: SearchTag) -> ActionOutcome {
    if n.is_staying() {
        return search::init_search(n, dest_id, tag);
    }
    let mut out = ActionOutcome::begin(n);
    out.searches.push(SearchEffect::Failed(SearchRequest { origin: n.id, dest_id, tag }));
    out
}

pub fn on_forward_probe_star(
    n: &NodeState,
    source: NodeId,
    dest_id: NodeId,
    next: &BTreeSet<NodeId>,
    seq: u64,
) -> ActionOutcome {
    if n.is_staying() {
        return search::on_forward_probe(n, source, dest_id, next, seq);
    }
    let mut out = ActionOutcome::begin(n);
    if dest_id == n.id {
        out.send(source, Message::ProbeFail { dest_id, seq });
        for &u in next {
            out.keep(u);
        }
        out.keep(source);
    } else {
        search::forward(&mut out, source, dest_id, next.clone(), seq, store_temp);
    }
    out
}

pub fn on_probe_success_star(n: &NodeState, dest_id: NodeId, seq: u64, dest: NodeId) -> ActionOutcome {
    if n.is_staying() {
        return search::on_probe_success(n, dest_id, seq, dest);
    }
    let mut out = ActionOutcome::begin(n);
    out.keep(dest);
    out
}

pub fn on_probe_fail_star(n: &NodeState, dest_id: NodeId, seq: u64) -> ActionOutcome {
    if n.is_staying() {
        return search::on_probe_fail(n, dest_id, seq);
    }
    ActionOutcome::begin(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;
    use alloc::vec;
    use alloc::vec::Vec;

    fn node(id: u64, left: &[u64], right: &[u64]) -> NodeState {
        NodeState::with_neighbors(NodeId(id), left.iter().copied(), right.iter().copied())
    }

    fn leaving(id: u64, left: &[u64], right: &[u64]) -> NodeState {
        let mut n = node(id, left, right);
        n.mode = Mode::Leaving;
        n
    }

    fn ids(v: &[u64]) -> BTreeSet<NodeId> {
        v.iter().copied().map(NodeId).collect()
    }

    fn sent(out: &ActionOutcome) -> Vec<(u64, Message)> {
        let mut v: Vec<_> = out.outbox.iter().map(|o| (o.to.0, o.message.clone())).collect();
        v.sort();
        v
    }

    fn tok(by: u64, c: u64) -> Token {
        Token { minted_by: NodeId(by), counter: c }
    }

    #[test]
    fn nidec_examples() {
        let mut s = SystemState::from_nodes([node(1, &[], &[]), node(2, &[], &[])]);
        assert!(nidec(&s, NodeId(1)));
        s.node_mut(NodeId(2)).unwrap().left.insert(NodeId(1));
        assert!(!nidec(&s, NodeId(1)));
        s.node_mut(NodeId(2)).unwrap().left.clear();
        s.send(NodeId(2), Message::TempDelegate { u: NodeId(1) });
        assert!(!nidec(&s, NodeId(1)));
        let mut s2 = SystemState::from_nodes([node(1, &[], &[])]);
        s2.send(NodeId(1), Message::ProbeFail { dest_id: NodeId(3), seq: 0 });
        assert!(!nidec(&s2, NodeId(1)));
    }

    #[test]
    fn leaving_timeout_requests_reversal() {
        let out = timeout_star(&leaving(5, &[3], &[7]), false);
        let mut want = vec![
            (3, Message::RevAndLinReq { dir: Direction::Right }),
            (7, Message::RevAndLinReq { dir: Direction::Left }),
        ];
        want.sort();
        assert_eq!(sent(&out), want);
        assert!(!out.exited);
    }

    #[test]
    fn leaving_timeout_with_oracle_introduces_and_exits() {
        let out = timeout_star(&leaving(5, &[3], &[7]), true);
        let mut want =
            vec![(3, Message::Introduce { v: NodeId(7), w: None }), (7, Message::Introduce { v: NodeId(3), w: None })];
        want.sort();
        assert_eq!(sent(&out), want);
        assert!(out.exited && out.state.exited);
        assert!(out.state.all_neighbors().is_empty());

        let out = timeout_star(&leaving(5, &[], &[]), true);
        assert!(out.exited && out.outbox.is_empty());
    }

    #[test]
    fn reversal_request_mints_once() {
        let out = on_rev_and_lin_req(&node(5, &[], &[7]), Direction::Right);
        let t = out.state.unique_values[&NodeId(7)];
        assert_eq!(sent(&out), vec![(7, Message::RevAndLinAck { v: NodeId(5), token: t })]);
        let again = on_rev_and_lin_req(&out.state, Direction::Right);
        assert_eq!(sent(&again), sent(&out));
        assert_eq!(again.state, out.state);
        assert!(on_rev_and_lin_req(&leaving(5, &[3], &[]), Direction::Left).outbox.is_empty());
    }

    #[test]
    fn ack_at_leaving_node_answers_with_opposite_side() {
        let out = on_rev_and_lin_ack(&leaving(7, &[], &[9]), NodeId(5), tok(5, 1));
        assert_eq!(out.state.temp_left, ids(&[5]));
        assert_eq!(sent(&out), vec![(5, Message::RevAndLin { node_list: ids(&[9]), token: tok(5, 1) })]);
        let out = on_rev_and_lin_ack(&node(7, &[], &[]), NodeId(5), tok(5, 1));
        assert_eq!(sent(&out), vec![(7, Message::TempDelegate { u: NodeId(5) })]);
        let out = on_rev_and_lin_ack(&leaving(7, &[], &[]), NodeId(5), tok(5, 1));
        assert_eq!(sent(&out), vec![(5, Message::RevAndLin { node_list: ids(&[]), token: tok(5, 1) })]);
    }

    #[test]
    fn rev_and_lin_replaces_leaving_neighbor() {
        let mut n = node(3, &[], &[5]);
        n.unique_values.insert(NodeId(5), tok(3, 1));
        let out = on_rev_and_lin(&n, &ids(&[7]), tok(3, 1));
        assert_eq!(out.state.right, ids(&[7]));
        assert_eq!(sent(&out), vec![(5, Message::Introduce { v: NodeId(3), w: None })]);
    }

    #[test]
    fn leaving_node_ignores_reversal_from_the_left() {
        let mut n = leaving(9, &[5], &[]);
        n.unique_values.insert(NodeId(5), tok(9, 1));
        let out = on_rev_and_lin(&n, &ids(&[2]), tok(9, 1));
        assert_eq!(out.state.temp_left, ids(&[2]));
        assert_eq!(out.state.left, ids(&[5]));
        assert!(out.outbox.is_empty());
    }

    #[test]
    fn leaving_node_completes_reversal_from_the_right() {
        let mut n = leaving(3, &[], &[]);
        n.temp_right.insert(NodeId(5));
        n.unique_values.insert(NodeId(5), tok(3, 1));
        let out = on_rev_and_lin(&n, &ids(&[8]), tok(3, 1));
        assert_eq!(out.state.temp_right, ids(&[8]));
        assert_eq!(sent(&out), vec![(5, Message::Introduce { v: NodeId(3), w: None })]);
    }

    #[test]
    fn unmatched_or_inconsistent_lists_are_absorbed() {
        let n = node(3, &[], &[5]);
        let out = on_rev_and_lin(&n, &ids(&[7]), tok(1, 1));
        assert_eq!(sent(&out), vec![(3, Message::TempDelegate { u: NodeId(7) })]);

        let mut n = node(5, &[], &[7]);
        n.unique_values.insert(NodeId(7), tok(5, 1));
        let out = on_rev_and_lin(&n, &ids(&[2, 9]), tok(5, 1));
        assert_eq!(out.state.right, ids(&[7]));
        assert_eq!(out.outbox.len(), 2);
    }

    #[test]
    fn leaving_destination_refuses_probes() {
        let out = on_forward_probe_star(&leaving(9, &[], &[]), NodeId(1), NodeId(9), &ids(&[9]), 3);
        let mut want =
            vec![(1, Message::ProbeFail { dest_id: NodeId(9), seq: 3 }), (9, Message::TempDelegate { u: NodeId(1) })];
        want.sort();
        assert_eq!(sent(&out), want);
    }

    #[test]
    fn leaving_stores_go_to_temp_sets() {
        let out = on_temp_delegate_star(&leaving(5, &[], &[]), NodeId(3));
        assert_eq!(out.state.temp_left, ids(&[3]));
        assert!(out.state.left.is_empty());

        let out = on_introduce_star(&leaving(5, &[], &[]), NodeId(3), Some(NodeId(9)));
        assert_eq!(out.state.temp_left, ids(&[3]));
        assert_eq!(out.state.temp_right, ids(&[9]));
        assert!(out.outbox.is_empty());

        let out = on_forward_probe_star(&leaving(5, &[], &[]), NodeId(1), NodeId(9), &ids(&[5, 7]), 1);
        assert_eq!(out.state.temp_right, ids(&[7]));
        assert!(out.state.right.is_empty());
    }

    #[test]
    fn leaving_search_side_effects() {
        let out = on_probe_success_star(&leaving(5, &[], &[]), NodeId(9), 1, NodeId(9));
        assert_eq!(sent(&out), vec![(5, Message::TempDelegate { u: NodeId(9) })]);
        let mut n = leaving(5, &[], &[]);
        n.waiting_for
            .insert(NodeId(9), vec![SearchRequest { origin: NodeId(5), dest_id: NodeId(9), tag: SearchTag(0) }]);
        assert_eq!(on_probe_fail_star(&n, NodeId(9), 5).state, n);
        let out = init_search_star(&leaving(5, &[], &[]), NodeId(9), SearchTag(1));
        assert!(out.state.waiting_for.is_empty());
    }
}
