//! Protocol selection and the single dispatch point from an action to the
//! matching handler.

use serde::{Deserialize, Serialize};

use crate::build_list::{self, ActionOutcome};
use crate::departure as star;
use crate::model::{Message, Mode, NodeId, NodeState, SearchTag};
use crate::search;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Build-List+ / Search+.
    #[default]
    Plus,
    /// Build-List* / Search*, with departures.
    Star,
}

/// Which left neighbor receives a node's own reference on timeout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfIntro {
    /// The closest left neighbor.
    #[default]
    Closest,
    /// The smallest (farthest) left neighbor.
    Extreme,
}

/// Deliberately broken protocol variants used to test the checkers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Timeout hands surplus neighbors straight to the next node instead of
    /// introducing them first.
    DirectDelegation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    #[serde(default)]
    pub self_intro: SelfIntro,
    #[serde(default)]
    pub mutation: Option<Mutation>,
}

impl ProtocolConfig {
    pub fn plus() -> Self {
        ProtocolConfig { protocol: Protocol::Plus, ..Default::default() }
    }

    pub fn star() -> Self {
        ProtocolConfig { protocol: Protocol::Star, ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Timeout,
    Deliver {
        message: Message,
    },
    InitSearch {
        dest_id: NodeId,
        tag: SearchTag,
    },
    /// The node decides to leave.
    Leave,
}

/// Runs `action` at `node`, sanity repair included. `oracle` is consulted only
/// by the timeout of a leaving node.
pub fn execute(
    cfg: &ProtocolConfig,
    node: &NodeState,
    action: &Action,
    oracle: impl FnOnce() -> bool,
) -> ActionOutcome {
    let mut n = node.clone();
    n.repair();
    match cfg.protocol {
        Protocol::Plus => execute_plus(cfg, &n, action),
        Protocol::Star => execute_star(cfg, &n, action, oracle),
    }
}

fn execute_plus(cfg: &ProtocolConfig, n: &NodeState, action: &Action) -> ActionOutcome {
    match action {
        Action::Timeout => build_list::timeout_with(n, cfg),
        Action::InitSearch { dest_id, tag } => search::init_search(n, *dest_id, *tag),
        Action::Leave => ActionOutcome::begin(n),
        Action::Deliver { message } => match message {
            Message::Introduce { v, w } => build_list::on_introduce(n, *v, *w),
            Message::Linearize { v } => build_list::on_linearize(n, *v),
            Message::TempDelegate { u } => build_list::on_temp_delegate(n, *u),
            Message::ForwardProbe { source, dest_id, next, seq } => {
                search::on_forward_probe(n, *source, *dest_id, next, *seq)
            }
            Message::ProbeSuccess { dest_id, seq, dest } => search::on_probe_success(n, *dest_id, *seq, *dest),
            Message::ProbeFail { dest_id, seq } => search::on_probe_fail(n, *dest_id, *seq),
            Message::Search(req) => search::on_search(n, *req),
            // Departure traffic means nothing here; keep its references.
            other => {
                let mut out = ActionOutcome::begin(n);
                other.visit_refs(|r| out.keep(r));
                out
            }
        },
    }
}

fn execute_star(cfg: &ProtocolConfig, n: &NodeState, action: &Action, oracle: impl FnOnce() -> bool) -> ActionOutcome {
    match action {
        Action::Timeout => {
            let verdict = n.is_leaving() && oracle();
            star::timeout_star_with(n, verdict, cfg)
        }
        Action::InitSearch { dest_id, tag } => star::init_search_star(n, *dest_id, *tag),
        Action::Leave => {
            let mut out = ActionOutcome::begin(n);
            out.state.mode = Mode::Leaving;
            out
        }
        Action::Deliver { message } => match message {
            Message::Introduce { v, w } => star::on_introduce_star(n, *v, *w),
            Message::Linearize { v } => star::on_linearize_star(n, *v),
            Message::TempDelegate { u } => star::on_temp_delegate_star(n, *u),
            Message::ForwardProbe { source, dest_id, next, seq } => {
                star::on_forward_probe_star(n, *source, *dest_id, next, *seq)
            }
            Message::ProbeSuccess { dest_id, seq, dest } => star::on_probe_success_star(n, *dest_id, *seq, *dest),
            Message::ProbeFail { dest_id, seq } => star::on_probe_fail_star(n, *dest_id, *seq),
            Message::Search(req) => search::on_search(n, *req),
            Message::RevAndLinReq { dir } => star::on_rev_and_lin_req(n, *dir),
            Message::RevAndLinAck { v, token } => star::on_rev_and_lin_ack(n, *v, *token),
            Message::RevAndLin { node_list, token } => star::on_rev_and_lin(n, node_list, *token),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Direction;

    #[test]
    fn repair_runs_before_the_action() {
        let n = NodeState::with_neighbors(NodeId(5), [9], []);
        let out = execute(&ProtocolConfig::plus(), &n, &Action::Timeout, || false);
        assert_eq!(out.state.right, [NodeId(9)].into());
        assert!(out.state.left.is_empty());
    }

    #[test]
    fn plus_absorbs_departure_messages() {
        let n = NodeState::new(NodeId(5));
        let msg =
            Message::RevAndLinAck { v: NodeId(3), token: crate::model::Token { minted_by: NodeId(3), counter: 1 } };
        let out = execute(&ProtocolConfig::plus(), &n, &Action::Deliver { message: msg }, || false);
        assert_eq!(out.outbox[0].message, Message::TempDelegate { u: NodeId(3) });
        let req = Message::RevAndLinReq { dir: Direction::Left };
        assert!(execute(&ProtocolConfig::plus(), &n, &Action::Deliver { message: req }, || false).outbox.is_empty());
    }

    #[test]
    fn oracle_only_asked_for_leaving_timeouts() {
        let n = NodeState::with_neighbors(NodeId(5), [3], []);
        let out = execute(&ProtocolConfig::star(), &n, &Action::Timeout, || panic!("asked"));
        assert!(!out.exited);
        let mut l = n.clone();
        l.mode = Mode::Leaving;
        assert!(execute(&ProtocolConfig::star(), &l, &Action::Timeout, || true).exited);
    }

    #[test]
    fn leave_is_one_way() {
        let n = NodeState::new(NodeId(5));
        let out = execute(&ProtocolConfig::star(), &n, &Action::Leave, || false);
        assert_eq!(out.state.mode, Mode::Leaving);
        let again = execute(&ProtocolConfig::star(), &out.state, &Action::Leave, || false);
        assert_eq!(again.state.mode, Mode::Leaving);
    }
}
