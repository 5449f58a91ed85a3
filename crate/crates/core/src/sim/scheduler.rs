//! Step selection. Fair schedulers force overdue work once it has waited half
//! its deadline, so the post-hoc audit can demand the full deadline.
//!
//! The fairness bound `B` caps how long a nonempty channel goes unserved and
//! how often a message is overtaken. A node's timeout deadline is `n·B`: at
//! the line every timeout triggers about four deliveries, so forcing one
//! timeout per node every `B` steps would outpace the deliveries.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Message, NodeId, SystemState};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum ScriptStep {
    Timeout {
        node: NodeId,
    },
    /// Delivers the first message in `node`'s channel equal to `message`.
    Deliver {
        node: NodeId,
        message: Message,
    },
    InitSearch {
        node: NodeId,
        dest_id: NodeId,
    },
    Leave {
        node: NodeId,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerKind {
    FairRoundRobin,
    #[default]
    RandomFair,
    Adversary {
        script: Vec<ScriptStep>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSpec {
    #[serde(flatten)]
    pub kind: SchedulerKind,
    /// Defaults to 4·(n + initial message count).
    #[serde(default)]
    pub fairness_bound: Option<u64>,
    /// Chance that an unforced random step is a timeout, scaled down by
    /// `n / (n + in-flight messages)`.
    #[serde(default = "default_timeout_probability")]
    pub timeout_probability: f64,
}

fn default_timeout_probability() -> f64 {
    0.1
}

impl Default for SchedulerSpec {
    fn default() -> Self {
        SchedulerSpec { kind: SchedulerKind::RandomFair, fairness_bound: None, timeout_probability: 0.1 }
    }
}

impl SchedulerSpec {
    pub fn random() -> Self {
        Self::default()
    }

    pub fn round_robin() -> Self {
        SchedulerSpec { kind: SchedulerKind::FairRoundRobin, ..Self::default() }
    }

    pub fn adversary(script: Vec<ScriptStep>) -> Self {
        SchedulerSpec { kind: SchedulerKind::Adversary { script }, ..Self::default() }
    }
}

pub fn default_fairness_bound(s: &SystemState) -> u64 {
    4 * (s.nodes.len() + s.message_count()) as u64
}

/// What the scheduler decided to do next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Choice {
    Timeout(NodeId),
    Deliver(NodeId, usize),
    InitSearch(NodeId, NodeId),
    Leave(NodeId),
    /// The adversary script is exhausted.
    Done,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FairnessReport {
    pub bound: u64,
    pub timeout_bound: u64,
    pub max_timeout_gap: u64,
    pub max_channel_wait: u64,
    pub max_overtaken: u64,
}

impl FairnessReport {
    pub fn is_fair(&self) -> bool {
        self.max_timeout_gap <= self.timeout_bound
            && self.max_channel_wait <= self.bound
            && self.max_overtaken <= self.bound
    }
}

/// Per-node and per-message waiting times, kept in lockstep with the channels.
#[derive(Clone, Debug)]
pub struct Tracker {
    bound: u64,
    timeout_bound: u64,
    last_timeout: BTreeMap<NodeId, u64>,
    /// Step since which a nonempty channel has not been served.
    waiting_since: BTreeMap<NodeId, u64>,
    /// Parallel to each channel: how often each message was overtaken.
    overtaken: BTreeMap<NodeId, Vec<u64>>,
    report: FairnessReport,
}

impl Tracker {
    pub fn new(s: &SystemState, bound: u64) -> Self {
        let timeout_bound = bound * s.nodes.len().max(1) as u64;
        let mut t = Tracker {
            bound,
            timeout_bound,
            last_timeout: BTreeMap::new(),
            waiting_since: BTreeMap::new(),
            overtaken: BTreeMap::new(),
            report: FairnessReport { bound, timeout_bound, ..Default::default() },
        };
        for id in s.present_ids() {
            t.last_timeout.insert(id, 0);
            let len = s.channel(id).len();
            t.overtaken.insert(id, alloc::vec![0; len]);
            if len > 0 {
                t.waiting_since.insert(id, 0);
            }
        }
        t
    }

    pub fn bound(&self) -> u64 {
        self.bound
    }

    pub fn on_timeout(&mut self, node: NodeId, step: u64) {
        if let Some(last) = self.last_timeout.insert(node, step) {
            self.report.max_timeout_gap = self.report.max_timeout_gap.max(step - last);
        }
    }

    pub fn on_enqueue(&mut self, node: NodeId, step: u64) {
        if let Some(v) = self.overtaken.get_mut(&node) {
            v.push(0);
            self.waiting_since.entry(node).or_insert(step);
        }
    }

    pub fn on_deliver(&mut self, node: NodeId, index: usize, step: u64) {
        let Some(v) = self.overtaken.get_mut(&node) else { return };
        for older in &mut v[..index] {
            *older += 1;
            self.report.max_overtaken = self.report.max_overtaken.max(*older);
        }
        v.remove(index);
        if let Some(since) = self.waiting_since.remove(&node) {
            self.report.max_channel_wait = self.report.max_channel_wait.max(step - since);
        }
        if !v.is_empty() {
            self.waiting_since.insert(node, step);
        }
    }

    pub fn on_exit(&mut self, node: NodeId) {
        self.last_timeout.remove(&node);
        self.waiting_since.remove(&node);
        self.overtaken.remove(&node);
    }

    /// Folds still-open waits into the report.
    pub fn finish(&self, step: u64) -> FairnessReport {
        let mut r = self.report;
        for last in self.last_timeout.values() {
            r.max_timeout_gap = r.max_timeout_gap.max(step - last);
        }
        for since in self.waiting_since.values() {
            r.max_channel_wait = r.max_channel_wait.max(step - since);
        }
        r
    }

    fn oldest_overdue(&self, node: NodeId) -> Option<usize> {
        let v = self.overtaken.get(&node)?;
        let (i, &c) = v.iter().enumerate().max_by_key(|(i, c)| (**c, core::cmp::Reverse(*i)))?;
        (c >= self.bound / 2).then_some(i)
    }

    pub fn timeout_bound(&self) -> u64 {
        self.timeout_bound
    }

    /// The most overdue piece of work, if anything has waited half its
    /// deadline. Timeout lags are rescaled to the channel deadline.
    fn forced(&self, step: u64) -> Option<Choice> {
        let half = self.bound / 2;
        let scale = (self.timeout_bound / self.bound.max(1)).max(1);
        let timeout = self.last_timeout.iter().map(|(n, t)| ((step - t) / scale, Choice::Timeout(*n)));
        let channel = self
            .waiting_since
            .iter()
            .map(|(n, t)| (step - t, Choice::Deliver(*n, self.oldest_overdue(*n).unwrap_or(0))));
        let overtaken = self.overtaken.iter().filter_map(|(n, v)| {
            let i = self.oldest_overdue(*n)?;
            Some((v[i], Choice::Deliver(*n, i)))
        });
        timeout
            .chain(channel)
            .chain(overtaken)
            .filter(|(lag, _)| *lag >= half)
            .fold(None, |best: Option<(u64, Choice)>, (lag, c)| match best {
                Some((b, _)) if b >= lag => best,
                _ => Some((lag, c)),
            })
            .map(|(_, c)| c)
    }
}

/// Mutable scheduler state for one run.
#[derive(Clone, Debug)]
pub struct Scheduler {
    spec: SchedulerSpec,
    cursor: usize,
    script_pos: usize,
}

impl Scheduler {
    pub fn new(spec: SchedulerSpec) -> Self {
        Scheduler { spec, cursor: 0, script_pos: 0 }
    }

    pub fn spec(&self) -> &SchedulerSpec {
        &self.spec
    }

    pub fn is_scripted(&self) -> bool {
        matches!(self.spec.kind, SchedulerKind::Adversary { .. })
    }

    pub fn choose(
        &mut self,
        s: &SystemState,
        tracker: &Tracker,
        step: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Choice, NodeId> {
        match &self.spec.kind {
            SchedulerKind::Adversary { script } => {
                let Some(next) = script.get(self.script_pos) else { return Ok(Choice::Done) };
                self.script_pos += 1;
                Ok(match next {
                    ScriptStep::Timeout { node } => Choice::Timeout(*node),
                    ScriptStep::InitSearch { node, dest_id } => Choice::InitSearch(*node, *dest_id),
                    ScriptStep::Leave { node } => Choice::Leave(*node),
                    ScriptStep::Deliver { node, message } => {
                        let i = s.channel(*node).iter().position(|m| m == message).ok_or(*node)?;
                        Choice::Deliver(*node, i)
                    }
                })
            }
            SchedulerKind::FairRoundRobin => Ok(self.round_robin(s, tracker, step)),
            SchedulerKind::RandomFair => Ok(self.random(s, tracker, step, rng)),
        }
    }

    fn round_robin(&mut self, s: &SystemState, tracker: &Tracker, step: u64) -> Choice {
        let ids = s.present_ids();
        let node = ids[self.cursor % ids.len()];
        self.cursor = (self.cursor + 1) % ids.len();
        let lag = step - tracker.last_timeout.get(&node).copied().unwrap_or(0);
        if lag < tracker.timeout_bound / 2 && !s.channel(node).is_empty() {
            Choice::Deliver(node, tracker.oldest_overdue(node).unwrap_or(0))
        } else {
            Choice::Timeout(node)
        }
    }

    fn random(&mut self, s: &SystemState, tracker: &Tracker, step: u64, rng: &mut ChaCha8Rng) -> Choice {
        if let Some(c) = tracker.forced(step) {
            return c;
        }
        let busy: Vec<NodeId> = s.present().map(|n| n.id).filter(|id| !s.channel(*id).is_empty()).collect();
        let ids = s.present_ids();
        // Backlog dampens unforced timeouts: a leaving node's timeout fans
        // out into a handshake with every neighbor, and at a flat rate the
        // channels can grow faster than one delivery per step drains them.
        let in_flight: usize = busy.iter().map(|id| s.channel(*id).len()).sum();
        let p = self.spec.timeout_probability.clamp(0.0, 1.0) * ids.len() as f64 / (ids.len() + in_flight) as f64;
        if busy.is_empty() || rng.gen_bool(p) {
            return Choice::Timeout(ids[rng.gen_range(0..ids.len())]);
        }
        let node = busy[rng.gen_range(0..busy.len())];
        let index = tracker.oldest_overdue(node).unwrap_or_else(|| rng.gen_range(0..s.channel(node).len()));
        Choice::Deliver(node, index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NodeState;
    use crate::sim::{stream, Stream};

    fn state() -> SystemState {
        let mut s = SystemState::from_nodes((1..=3).map(|i| NodeState::new(NodeId(i))));
        for _ in 0..3 {
            s.send(NodeId(1), Message::TempDelegate { u: NodeId(2) });
        }
        s
    }

    #[test]
    fn default_bound_counts_nodes_and_messages() {
        assert_eq!(default_fairness_bound(&state()), 24);
    }

    #[test]
    fn overtakes_are_counted_for_older_messages() {
        let s = state();
        let mut t = Tracker::new(&s, 4);
        t.on_deliver(NodeId(1), 2, 1);
        t.on_deliver(NodeId(1), 1, 2);
        assert_eq!(t.overtaken[&NodeId(1)], alloc::vec![2]);
        assert_eq!(t.oldest_overdue(NodeId(1)), Some(0));
        assert_eq!(t.finish(2).max_overtaken, 2);
    }

    #[test]
    fn overdue_timeouts_are_forced() {
        let s = state();
        let mut t = Tracker::new(&s, 4);
        t.on_timeout(NodeId(1), 4);
        t.on_timeout(NodeId(3), 4);
        t.on_deliver(NodeId(1), 0, 4);
        t.on_deliver(NodeId(1), 0, 4);
        t.on_deliver(NodeId(1), 0, 4);
        // Node 2 last timed out at 0: at step 6 its lag reaches half of 3·4.
        assert_eq!(t.timeout_bound(), 12);
        assert_eq!(t.forced(6), Some(Choice::Timeout(NodeId(2))));
        assert_eq!(t.forced(5), None);
    }

    #[test]
    fn random_scheduler_respects_the_bound() {
        let mut s = state();
        let bound = default_fairness_bound(&s);
        let mut t = Tracker::new(&s, bound);
        let mut sched = Scheduler::new(SchedulerSpec::random());
        let mut rng = stream(1, Stream::Scheduler);
        for step in 1..2000 {
            match sched.choose(&s, &t, step, &mut rng).unwrap() {
                Choice::Timeout(n) => {
                    t.on_timeout(n, step);
                    // Keep channels busy so deliveries compete.
                    s.send(n, Message::TempDelegate { u: n });
                    t.on_enqueue(n, step);
                }
                Choice::Deliver(n, i) => {
                    s.channels.get_mut(&n).unwrap().remove(i);
                    t.on_deliver(n, i, step);
                }
                c => panic!("{c:?}"),
            }
        }
        assert!(t.finish(2000).is_fair(), "{:?}", t.finish(2000));
    }

    #[test]
    fn adversary_names_exact_messages() {
        let mut s = state();
        s.send(NodeId(1), Message::Linearize { v: NodeId(3) });
        let t = Tracker::new(&s, 8);
        let mut sched = Scheduler::new(SchedulerSpec::adversary(alloc::vec![ScriptStep::Deliver {
            node: NodeId(1),
            message: Message::Linearize { v: NodeId(3) },
        }]));
        let mut rng = stream(1, Stream::Scheduler);
        assert_eq!(sched.choose(&s, &t, 1, &mut rng), Ok(Choice::Deliver(NodeId(1), 3)));
        assert_eq!(sched.choose(&s, &t, 2, &mut rng), Ok(Choice::Done));
    }
}
