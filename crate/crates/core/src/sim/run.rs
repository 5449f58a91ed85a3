use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::build_list::{ActionOutcome, SearchEffect};
use crate::checkers::Monitor;
use crate::departure::nidec;
use crate::graph::{weak_components, StayingPaths};
use crate::model::{NodeId, SearchTag, SystemState};
use crate::protocol::{self, Action, Protocol, ProtocolConfig};
use crate::sim::scheduler::{default_fairness_bound, Choice, Scheduler, SchedulerSpec, Tracker};
use crate::sim::trace::{
    outbox_digest, Event, EventKind, ExitRecord, ModeChange, Observation, RunEnd, SearchOutcome, SearchRecord, Trace,
};
use crate::sim::{stream, Stream};

/// Node `node` decides to leave right before step `step` executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeaveAt {
    pub step: u64,
    pub node: NodeId,
}

/// Randomized search injections interleaved with protocol steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchWorkload {
    /// Chance per step of injecting a search instead of a protocol step.
    pub rate: f64,
    /// Inject only while the current state is admissible.
    #[serde(default = "yes")]
    pub admissible_only: bool,
    /// Share of searches aimed at ids that belong to no node.
    #[serde(default)]
    pub missing_fraction: f64,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "until", rename_all = "snake_case")]
pub enum StopCondition {
    StepLimit,
    /// Stop once the fixed point has held for `closure_steps` further steps.
    Converged {
        closure_steps: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub protocol: ProtocolConfig,
    pub scheduler: SchedulerSpec,
    pub seed: u64,
    pub max_steps: u64,
    pub stop: StopCondition,
    #[serde(default)]
    pub leaves: Vec<LeaveAt>,
    #[serde(default)]
    pub workload: Option<SearchWorkload>,
    #[serde(default)]
    pub staying_paths: StayingPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            protocol: ProtocolConfig::plus(),
            scheduler: SchedulerSpec::default(),
            seed: 0,
            max_steps: 100_000,
            stop: StopCondition::Converged { closure_steps: 1000 },
            leaves: Vec::new(),
            workload: None,
            staying_paths: StayingPaths::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SimError {
    InvalidState(crate::model::ModelError),
    /// The chosen actor does not exist or has exited.
    NotPresent {
        step: u64,
        node: NodeId,
    },
    /// The adversary named a message that is not in the channel.
    MissingMessage {
        step: u64,
        node: NodeId,
    },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidState(e) => write!(f, "invalid initial state: {e}"),
            SimError::NotPresent { step, node } => write!(f, "step {step}: node {node} is not present"),
            SimError::MissingMessage { step, node } => {
                write!(f, "step {step}: scripted message not found in channel of {node}")
            }
        }
    }
}

impl core::error::Error for SimError {}

/// Writes an outcome into the global state: the node's new variables, the
/// outbox appended to the recipients' channels, and a sealed channel on exit.
/// `enqueued` is told about every message that reached a channel.
pub(crate) fn apply_outcome(
    s: &mut SystemState,
    actor: NodeId,
    out: ActionOutcome,
    mut enqueued: impl FnMut(NodeId, usize),
) {
    s.nodes.insert(actor, out.state);
    for o in out.outbox {
        if s.send(o.to, o.message) {
            enqueued(o.to, s.channel(o.to).len() - 1);
        }
    }
    if out.exited {
        if let Some(ch) = s.channels.get_mut(&actor) {
            ch.clear();
        }
    }
}

/// Outcome of the post-convergence all-pairs search sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepReport {
    pub requested: usize,
    pub delivered: usize,
    pub failed: usize,
    pub pending: usize,
}

impl SweepReport {
    pub fn all_delivered(&self) -> bool {
        self.delivered == self.requested
    }
}

pub struct Simulator {
    cfg: RunConfig,
    state: SystemState,
    initial: SystemState,
    tracker: Tracker,
    scheduler: Scheduler,
    rng_sched: ChaCha8Rng,
    rng_work: ChaCha8Rng,
    step: u64,
    monitor: Monitor,
    events: Vec<Event>,
    observations: Vec<Observation>,
    searches: Vec<SearchRecord>,
    search_index: BTreeMap<SearchTag, usize>,
    exits: Vec<ExitRecord>,
    mode_changes: Vec<ModeChange>,
    initial_components: Vec<alloc::collections::BTreeSet<NodeId>>,
    next_tag: u64,
    next_leave: usize,
    fixed_since: Option<(u64, u64)>,
    injecting: bool,
    end: Option<RunEnd>,
}

impl Simulator {
    pub fn new(initial: SystemState, mut cfg: RunConfig) -> Result<Self, SimError> {
        initial.validate().map_err(SimError::InvalidState)?;
        cfg.leaves.sort();
        let bound = cfg.scheduler.fairness_bound.unwrap_or_else(|| default_fairness_bound(&initial)).max(2);
        let mut monitor = Monitor::new(cfg.protocol.protocol, cfg.staying_paths, &initial);
        let obs = monitor.observe(0, &initial);
        let initial_components = weak_components(&initial)
            .into_iter()
            .map(|c| c.into_iter().filter(|id| initial.nodes[id].is_staying()).collect())
            .filter(|c: &alloc::collections::BTreeSet<NodeId>| !c.is_empty())
            .collect();
        let mut sim = Simulator {
            tracker: Tracker::new(&initial, bound),
            scheduler: Scheduler::new(cfg.scheduler.clone()),
            rng_sched: stream(cfg.seed, Stream::Scheduler),
            rng_work: stream(cfg.seed, Stream::Workload),
            step: 0,
            monitor,
            events: Vec::new(),
            observations: Vec::new(),
            searches: Vec::new(),
            search_index: BTreeMap::new(),
            exits: Vec::new(),
            mode_changes: Vec::new(),
            initial_components,
            next_tag: 0,
            next_leave: 0,
            fixed_since: None,
            injecting: true,
            end: None,
            state: initial.clone(),
            initial,
            cfg,
        };
        sim.register_initial_searches();
        sim.note_fixed_point(&obs, 0);
        sim.observations.push(obs);
        Ok(sim)
    }

    fn register_initial_searches(&mut self) {
        let mut reqs = Vec::new();
        for n in self.state.nodes.values() {
            reqs.extend(n.waiting_for.values().flatten().copied());
        }
        for ch in self.state.channels.values() {
            reqs.extend(ch.iter().filter_map(|m| match m {
                crate::model::Message::Search(r) => Some(*r),
                _ => None,
            }));
        }
        for r in reqs {
            self.next_tag = self.next_tag.max(r.tag.0 + 1);
            if self.search_index.contains_key(&r.tag) {
                continue;
            }
            self.search_index.insert(r.tag, self.searches.len());
            self.searches.push(SearchRecord {
                tag: r.tag,
                origin: r.origin,
                dest_id: r.dest_id,
                initiated_at: 0,
                initiated_admissible: false,
                batch_seq: None,
                outcome: SearchOutcome::Pending,
                resolved_at: None,
            });
        }
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn fairness_bound(&self) -> u64 {
        self.tracker.bound()
    }

    pub fn observation(&self) -> &Observation {
        self.observations.last().expect("initial observation")
    }

    pub fn searches(&self) -> &[SearchRecord] {
        &self.searches
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// First step of the current fixed-point streak.
    pub fn fixed_since(&self) -> Option<u64> {
        self.fixed_since.map(|(s, _)| s)
    }

    pub fn pending_searches(&self) -> usize {
        self.searches.iter().filter(|r| r.outcome == SearchOutcome::Pending).count()
    }

    fn note_fixed_point(&mut self, obs: &Observation, step: u64) {
        self.fixed_since = match self.fixed_since {
            Some((since, eng)) if obs.fixed_point && obs.eng_digest == eng => Some((since, eng)),
            _ if obs.fixed_point => Some((step, obs.eng_digest)),
            _ => None,
        };
    }

    /// Executes one scheduler-chosen step. Returns `false` once an adversary
    /// script is exhausted.
    pub fn step(&mut self) -> Result<bool, SimError> {
        if let Some(leave) = self.cfg.leaves.get(self.next_leave).copied() {
            if leave.step <= self.step + 1 {
                self.next_leave += 1;
                if self.state.node(leave.node).is_some_and(|n| n.is_present() && n.is_staying()) {
                    self.apply(Choice::Leave(leave.node))?;
                    return Ok(true);
                }
                return self.step();
            }
        }
        if let Some(w) = self.cfg.workload.filter(|_| self.injecting) {
            if self.rng_work.gen_bool(w.rate.clamp(0.0, 1.0)) && (!w.admissible_only || self.observation().admissible) {
                if let Some((origin, dest)) = self.pick_search(w.missing_fraction) {
                    self.apply(Choice::InitSearch(origin, dest))?;
                    return Ok(true);
                }
            }
        }
        let choice = self
            .scheduler
            .choose(&self.state, &self.tracker, self.step + 1, &mut self.rng_sched)
            .map_err(|node| SimError::MissingMessage { step: self.step + 1, node })?;
        if choice == Choice::Done {
            return Ok(false);
        }
        self.apply(choice)?;
        Ok(true)
    }

    fn pick_search(&mut self, missing_fraction: f64) -> Option<(NodeId, NodeId)> {
        let origins: Vec<NodeId> = self.state.present().filter(|n| n.is_staying()).map(|n| n.id).collect();
        let origin = *origins.choose(&mut self.rng_work)?;
        let dest = if self.rng_work.gen_bool(missing_fraction.clamp(0.0, 1.0)) {
            let max = self.state.nodes.keys().last().map_or(0, |m| m.0) + 2;
            let id = NodeId(self.rng_work.gen_range(0..max));
            if self.state.nodes.contains_key(&id) {
                return None;
            }
            id
        } else {
            *self.state.present_ids().choose(&mut self.rng_work)?
        };
        Some((origin, dest))
    }

    /// Initiates a search at `origin` as its own step.
    pub fn init_search(&mut self, origin: NodeId, dest_id: NodeId) -> Result<SearchTag, SimError> {
        let tag = SearchTag(self.next_tag);
        self.apply(Choice::InitSearch(origin, dest_id))?;
        Ok(tag)
    }

    pub fn apply(&mut self, choice: Choice) -> Result<&Event, SimError> {
        let step = self.step + 1;
        let actor = match &choice {
            Choice::Timeout(n) | Choice::Deliver(n, _) | Choice::InitSearch(n, _) | Choice::Leave(n) => *n,
            Choice::Done => unreachable!("no step to apply"),
        };
        let node = match self.state.node(actor) {
            Some(n) if n.is_present() => n.clone(),
            _ => return Err(SimError::NotPresent { step, node: actor }),
        };
        let (action, mut kind) = match choice {
            Choice::Timeout(_) => {
                self.tracker.on_timeout(actor, step);
                (Action::Timeout, EventKind::Timeout { oracle: None })
            }
            Choice::Deliver(_, index) => {
                let ch = self.state.channels.get_mut(&actor).expect("present node has a channel");
                if index >= ch.len() {
                    return Err(SimError::MissingMessage { step, node: actor });
                }
                let message = ch.remove(index);
                self.tracker.on_deliver(actor, index, step);
                (Action::Deliver { message: message.clone() }, EventKind::Deliver { index, message })
            }
            Choice::InitSearch(_, dest_id) => {
                let tag = SearchTag(self.next_tag);
                self.next_tag += 1;
                (Action::InitSearch { dest_id, tag }, EventKind::InitSearch { dest_id, tag })
            }
            Choice::Leave(_) => (Action::Leave, EventKind::Leave),
            Choice::Done => unreachable!(),
        };

        let asks_oracle =
            self.cfg.protocol.protocol == Protocol::Star && node.is_leaving() && action == Action::Timeout;
        let oracle = asks_oracle.then(|| nidec(&self.state, actor));
        let gate = asks_oracle.then(|| self.monitor.exit_permitted(&self.state, actor));
        let out = protocol::execute(&self.cfg.protocol, &node, &action, || oracle.unwrap_or(false));
        if asks_oracle {
            kind = if out.exited { EventKind::Exit } else { EventKind::Timeout { oracle } };
        }
        self.monitor.check_outbox(step, &node, &action, &out.outbox);
        let outbox = outbox_digest(&out.outbox);
        let effects = out.searches.clone();
        let exited = out.exited;
        let tracker = &mut self.tracker;
        apply_outcome(&mut self.state, actor, out, |to, _| tracker.on_enqueue(to, step));

        if exited {
            self.tracker.on_exit(actor);
            self.exits.push(ExitRecord { step, node: actor, nidec: gate.unwrap_or(false) });
        }
        match &kind {
            EventKind::Leave if node.is_staying() && self.state.nodes[&actor].is_leaving() => {
                self.mode_changes.push(ModeChange { step, node: actor });
            }
            EventKind::InitSearch { dest_id, tag } => {
                let admissible = self.observation().admissible;
                let batch_seq = self.state.nodes[&actor]
                    .waiting_for
                    .get(dest_id)
                    .map(|_| self.state.nodes[&actor].seq_for(*dest_id));
                self.search_index.insert(*tag, self.searches.len());
                self.searches.push(SearchRecord {
                    tag: *tag,
                    origin: actor,
                    dest_id: *dest_id,
                    initiated_at: step,
                    initiated_admissible: admissible,
                    batch_seq,
                    outcome: SearchOutcome::Pending,
                    resolved_at: None,
                });
            }
            _ => {}
        }
        for effect in effects {
            let (req, outcome) = match effect {
                SearchEffect::Delivered(r) => (r, SearchOutcome::Delivered),
                SearchEffect::Failed(r) => (r, SearchOutcome::Failed),
            };
            if let Some(&i) = self.search_index.get(&req.tag) {
                let rec = &mut self.searches[i];
                if rec.outcome == SearchOutcome::Pending {
                    rec.outcome = outcome;
                    rec.resolved_at = Some(step);
                }
            }
        }

        let obs = self.monitor.observe(step, &self.state);
        self.note_fixed_point(&obs, step);
        self.observations.push(obs);
        self.events.push(Event { step, actor, kind, outbox_digest: outbox, state_digest: self.state.digest() });
        self.step = step;
        Ok(self.events.last().expect("just pushed"))
    }

    fn stop_reached(&self) -> Option<RunEnd> {
        if self.next_leave < self.cfg.leaves.len() {
            return None;
        }
        match (self.cfg.stop, self.fixed_since) {
            (StopCondition::Converged { closure_steps }, Some((since, _))) if self.step - since >= closure_steps => {
                Some(RunEnd::Converged { at: since })
            }
            _ => None,
        }
    }

    /// Steps until the stop condition, the step limit, or the end of the script.
    pub fn run_until_stop(&mut self) -> Result<RunEnd, SimError> {
        loop {
            if let Some(end) = self.stop_reached() {
                self.end = Some(end);
                return Ok(end);
            }
            if self.step >= self.cfg.max_steps {
                self.end = Some(RunEnd::StepLimit);
                return Ok(RunEnd::StepLimit);
            }
            if !self.step()? {
                self.end = Some(RunEnd::ScriptExhausted);
                return Ok(RunEnd::ScriptExhausted);
            }
        }
    }

    /// Stops injecting searches and steps until none is pending, for at most
    /// `budget` steps. Returns whether everything resolved.
    pub fn drain_searches(&mut self, budget: u64) -> Result<bool, SimError> {
        self.injecting = false;
        for _ in 0..budget {
            if self.pending_searches() == 0 {
                return Ok(true);
            }
            if !self.step()? {
                break;
            }
        }
        Ok(self.pending_searches() == 0)
    }

    /// Searches from every present staying node to every present id, one
    /// origin at a time, stepping until each origin's searches resolve. At
    /// most `budget` steps in total.
    pub fn sweep(&mut self, budget: u64) -> Result<SweepReport, SimError> {
        self.injecting = false;
        let origins: Vec<NodeId> = self.state.present().filter(|n| n.is_staying()).map(|n| n.id).collect();
        let targets = self.state.present_ids();
        let mut tags = Vec::new();
        let mut left = budget;
        for &u in &origins {
            let batch = tags.len();
            for &d in &targets {
                tags.push(self.init_search(u, d)?);
            }
            while left > 0 && tags[batch..].iter().any(|t| self.outcome(*t) == Some(SearchOutcome::Pending)) {
                self.step()?;
                left -= 1;
            }
        }
        let mut report = SweepReport { requested: tags.len(), ..Default::default() };
        for t in tags {
            match self.outcome(t) {
                Some(SearchOutcome::Delivered) => report.delivered += 1,
                Some(SearchOutcome::Failed) => report.failed += 1,
                _ => report.pending += 1,
            }
        }
        Ok(report)
    }

    pub fn outcome(&self, tag: SearchTag) -> Option<SearchOutcome> {
        self.search_index.get(&tag).map(|&i| self.searches[i].outcome)
    }

    pub fn into_trace(self) -> Trace {
        Trace {
            protocol: self.cfg.protocol,
            seed: self.cfg.seed,
            fairness: self.tracker.finish(self.step),
            violations: self.monitor.into_violations(),
            initial: self.initial,
            events: self.events,
            observations: self.observations,
            searches: self.searches,
            exits: self.exits,
            mode_changes: self.mode_changes,
            initial_components: self.initial_components,
            end: self.end.unwrap_or(RunEnd::StepLimit),
            final_state: self.state,
        }
    }
}

/// Runs to the stop condition; with a search workload, afterwards drains the
/// pending searches for up to `max_steps` more steps.
pub fn run(initial: SystemState, cfg: RunConfig) -> Result<Trace, SimError> {
    let drain = cfg.workload.is_some().then_some(cfg.max_steps);
    let mut sim = Simulator::new(initial, cfg)?;
    sim.run_until_stop()?;
    if let Some(budget) = drain {
        sim.drain_searches(budget)?;
    }
    Ok(sim.into_trace())
}
