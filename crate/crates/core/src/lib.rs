//! Self-stabilizing sorted-list protocols with monotonic searchability and
//! graceful node departures.
//!
//! The crate holds the pure protocol state machines (`build_list`, `search`,
//! `departure`), the derived graph views used to reason about them (`graph`),
//! a deterministic simulator of the asynchronous message-passing model
//! (`sim`) and the property checkers evaluated over its runs (`checkers`).
#![no_std]

extern crate alloc;

pub mod build_list;
pub mod checkers;
pub mod departure;
pub mod graph;
pub mod model;
pub mod protocol;
pub mod search;
pub mod sim;

pub use build_list::{ActionOutcome, Outgoing, SearchEffect};
pub use model::{
    digest_of, Direction, Message, Mode, ModelError, NeighborSet, NodeId, NodeState, SearchRequest, SearchTag,
    SystemState, Token,
};
pub use protocol::{Action, Mutation, Protocol, ProtocolConfig, SelfIntro};
