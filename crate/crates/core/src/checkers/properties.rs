//! Trace-level verdicts.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::weak_components;
use crate::model::{digest_of, Message, NodeId, SystemState};
use crate::protocol::{self, Action, Protocol, ProtocolConfig};
use crate::sim::{SearchOutcome, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Connectivity,
    PhiMonotone,
    Admissibility,
    RMonotone,
    Convergence,
    Searchability,
    Fdp,
    Fairness,
    LeavingSelfRefs,
    ExitGating,
}

impl Property {
    pub const ALL: [Property; 10] = [
        Property::Connectivity,
        Property::PhiMonotone,
        Property::Admissibility,
        Property::RMonotone,
        Property::Convergence,
        Property::Searchability,
        Property::Fdp,
        Property::Fairness,
        Property::LeavingSelfRefs,
        Property::ExitGating,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Connectivity => "connectivity",
            Property::PhiMonotone => "phi_monotone",
            Property::Admissibility => "admissibility",
            Property::RMonotone => "r_monotone",
            Property::Convergence => "convergence",
            Property::Searchability => "searchability",
            Property::Fdp => "fdp",
            Property::Fairness => "fairness",
            Property::LeavingSelfRefs => "leaving_self_refs",
            Property::ExitGating => "exit_gating",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnknownProperty(pub String);

impl fmt::Display for UnknownProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown property `{}`", self.0)
    }
}

impl core::error::Error for UnknownProperty {}

impl FromStr for Property {
    type Err = UnknownProperty;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Property::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| UnknownProperty(s.into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "step", rename_all = "snake_case")]
pub enum Status {
    Holds,
    ViolatedAt(u64),
    EstablishedAt(u64),
    NeverEstablished,
    /// The property does not apply to this protocol or this run.
    NotApplicable,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Holds => "holds",
            Status::ViolatedAt(_) => "violated",
            Status::EstablishedAt(_) => "established",
            Status::NeverEstablished => "never_established",
            Status::NotApplicable => "not_applicable",
        }
    }

    pub fn step(self) -> Option<u64> {
        match self {
            Status::ViolatedAt(k) | Status::EstablishedAt(k) => Some(k),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyVerdict {
    pub property: Property,
    pub status: Status,
    pub witness: Option<String>,
}

impl PropertyVerdict {
    fn new(property: Property, status: Status) -> Self {
        PropertyVerdict { property, status, witness: None }
    }

    fn with(property: Property, status: Status, witness: String) -> Self {
        PropertyVerdict { property, status, witness: Some(witness) }
    }

    /// Holds, established, or not applicable.
    pub fn passed(&self) -> bool {
        !matches!(self.status, Status::ViolatedAt(_) | Status::NeverEstablished)
    }
}

/// The convergence fixed point: every present node is staying, ENG is the
/// sorted line with empty temporary sets, and delivering any message in
/// flight leaves every neighbor set as it is (followed a few hops through
/// what that delivery sends).
pub fn is_fixed_point(s: &SystemState, protocol: Protocol) -> bool {
    is_fixed_point_cached(s, protocol, &mut FixedPointCache::default())
}

/// Memoized hops of the fixed-point test. A hop's verdict depends on the
/// receiving node's variables, the message and the set of present nodes, so
/// it survives any step that leaves those alone.
#[derive(Clone, Debug, Default)]
pub struct FixedPointCache {
    present_digest: u64,
    hops: BTreeMap<(NodeId, u64, u64, u8), bool>,
}

const CACHE_LIMIT: usize = 1 << 16;

/// [`is_fixed_point`] reusing verdicts from earlier calls.
pub fn is_fixed_point_cached(s: &SystemState, protocol: Protocol, cache: &mut FixedPointCache) -> bool {
    let ids = s.present_ids();
    for (i, id) in ids.iter().enumerate() {
        let n = &s.nodes[id];
        let want_left = i.checked_sub(1).map(|j| ids[j]);
        let want_right = ids.get(i + 1).copied();
        if !n.is_staying()
            || !n.temp_left.is_empty()
            || !n.temp_right.is_empty()
            || n.left.iter().copied().ne(want_left)
            || n.right.iter().copied().ne(want_right)
        {
            return false;
        }
    }
    let cfg = match protocol {
        Protocol::Plus => ProtocolConfig::plus(),
        Protocol::Star => ProtocolConfig::star(),
    };
    let present = digest_of(&ids);
    if present != cache.present_digest || cache.hops.len() > CACHE_LIMIT {
        cache.present_digest = present;
        cache.hops.clear();
    }
    let digests: BTreeMap<NodeId, u64> = ids.iter().map(|id| (*id, digest_of(&s.nodes[id]))).collect();
    let mut hop = Hop { s, cfg: &cfg, digests: &digests, cache };
    ids.iter().all(|id| s.channel(*id).iter().all(|m| hop.preserves_line(*id, m, 3)))
}

struct Hop<'a> {
    s: &'a SystemState,
    cfg: &'a ProtocolConfig,
    digests: &'a BTreeMap<NodeId, u64>,
    cache: &'a mut FixedPointCache,
}

impl Hop<'_> {
    /// Delivering `m` at `at` keeps its neighbor sets and mode, and so does
    /// everything it sends, followed `depth` more hops.
    fn preserves_line(&mut self, at: NodeId, m: &Message, depth: u8) -> bool {
        let Some(&digest) = self.digests.get(&at) else { return true };
        let key = (at, digest, digest_of(m), depth);
        if let Some(&v) = self.cache.hops.get(&key) {
            return v;
        }
        let v = self.compute(at, m, depth);
        self.cache.hops.insert(key, v);
        v
    }

    fn compute(&mut self, at: NodeId, m: &Message, depth: u8) -> bool {
        let s = self.s;
        let node = &s.nodes[&at];
        if m.refs().iter().any(|r| !s.is_present(*r)) {
            return false;
        }
        let out = protocol::execute(self.cfg, node, &Action::Deliver { message: m.clone() }, || false);
        let after = &out.state;
        if after.left != node.left
            || after.right != node.right
            || after.temp_left != node.temp_left
            || after.temp_right != node.temp_right
            || after.mode != node.mode
        {
            return false;
        }
        depth == 0 || out.outbox.iter().all(|o| self.preserves_line(o.to, &o.message, depth - 1))
    }
}

pub fn check_connectivity(t: &Trace) -> PropertyVerdict {
    let p = Property::Connectivity;
    if !t.observations.first().is_some_and(|o| o.connected) {
        return PropertyVerdict::with(p, Status::NotApplicable, "initial state is not weakly connected".into());
    }
    match t.observations.iter().position(|o| !o.connected) {
        Some(k) => PropertyVerdict::with(p, Status::ViolatedAt(k as u64), event_line(t, k)),
        None => PropertyVerdict::new(p, Status::Holds),
    }
}

fn event_line(t: &Trace, k: usize) -> String {
    match k.checked_sub(1).and_then(|i| t.events.get(i)) {
        Some(e) => format!("step {} actor {} {:?}", e.step, e.actor, e.kind),
        None => "initial state".into(),
    }
}

pub fn check_phi_monotone(t: &Trace) -> PropertyVerdict {
    let p = Property::PhiMonotone;
    if t.protocol.protocol != Protocol::Plus {
        return PropertyVerdict::new(p, Status::NotApplicable);
    }
    for (k, w) in t.observations.windows(2).enumerate() {
        if let (Some(a), Some(b)) = (w[0].phi, w[1].phi) {
            if b > a {
                let k = k + 1;
                return PropertyVerdict::with(
                    p,
                    Status::ViolatedAt(k as u64),
                    format!("Φ {a} -> {b} at {}", event_line(t, k)),
                );
            }
        }
    }
    PropertyVerdict::new(p, Status::Holds)
}

/// Established at the first admissible state; violated if a later state is not.
pub fn check_admissibility(t: &Trace) -> PropertyVerdict {
    let p = Property::Admissibility;
    let Some(first) = t.observations.iter().position(|o| o.admissible) else {
        return PropertyVerdict::new(p, Status::NeverEstablished);
    };
    match t.observations[first..].iter().position(|o| !o.admissible) {
        Some(off) => {
            let k = first + off;
            let w = format!("invariants {:?} fail after {}", t.observations[k].failing, event_line(t, k));
            PropertyVerdict::with(p, Status::ViolatedAt(k as u64), w)
        }
        None => PropertyVerdict::new(p, Status::EstablishedAt(first as u64)),
    }
}

fn from_violations(t: &Trace, p: Property) -> PropertyVerdict {
    match t.violations.iter().find(|v| v.property == p) {
        Some(v) => PropertyVerdict::with(p, Status::ViolatedAt(v.step), v.detail.clone()),
        None => PropertyVerdict::new(p, Status::Holds),
    }
}

pub fn check_r_monotone(t: &Trace) -> PropertyVerdict {
    from_violations(t, Property::RMonotone)
}

pub fn check_leaving_self_refs(t: &Trace) -> PropertyVerdict {
    if t.protocol.protocol != Protocol::Star {
        return PropertyVerdict::new(Property::LeavingSelfRefs, Status::NotApplicable);
    }
    from_violations(t, Property::LeavingSelfRefs)
}

/// Established at the first step of the final fixed-point streak (same ENG throughout).
pub fn check_convergence(t: &Trace) -> PropertyVerdict {
    let p = Property::Convergence;
    let Some(last) = t.observations.last().filter(|o| o.fixed_point) else {
        return PropertyVerdict::new(p, Status::NeverEstablished);
    };
    let mut k = t.observations.len() - 1;
    while k > 0 && t.observations[k - 1].fixed_point && t.observations[k - 1].eng_digest == last.eng_digest {
        k -= 1;
    }
    PropertyVerdict::new(p, Status::EstablishedAt(k as u64))
}

pub fn check_fairness(t: &Trace) -> PropertyVerdict {
    let f = &t.fairness;
    if f.is_fair() {
        PropertyVerdict::new(Property::Fairness, Status::Holds)
    } else {
        let w = format!(
            "bound {}: timeout gap {}, channel wait {}, overtaken {}",
            f.bound, f.max_timeout_gap, f.max_channel_wait, f.max_overtaken
        );
        PropertyVerdict::with(Property::Fairness, Status::ViolatedAt(t.steps()), w)
    }
}

/// Steps a search may stay pending in a fair run before it counts as lost.
pub fn search_patience(t: &Trace) -> u64 {
    2 * t.fairness.timeout_bound + (t.initial.nodes.len() as u64 + 2) * t.fairness.bound
}

/// Monotonic searchability over searches initiated in admissible states.
/// Once a search from `u` to `d` was delivered, every later one must be
/// delivered too. Pairs stop counting once either endpoint became leaving.
pub fn check_searchability(t: &Trace) -> PropertyVerdict {
    let p = Property::Searchability;
    let exempt = t.searches.iter().filter(|r| !r.initiated_admissible).count();
    let leaving_since = |id: NodeId| t.leaving_since(id).unwrap_or(u64::MAX);
    let patience = search_patience(t);
    let mut first_delivery: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
    for r in t.searches.iter().filter(|r| r.initiated_admissible) {
        if r.outcome == SearchOutcome::Delivered {
            let at = r.resolved_at.unwrap_or(r.initiated_at);
            let e = first_delivery.entry((r.origin, r.dest_id)).or_insert(at);
            *e = (*e).min(at);
        }
    }
    let mut worst: Option<(u64, String)> = None;
    for r in t.searches.iter().filter(|r| r.initiated_admissible) {
        let Some(&delivered) = first_delivery.get(&(r.origin, r.dest_id)) else { continue };
        if r.initiated_at <= delivered {
            continue;
        }
        let cutoff = leaving_since(r.origin).min(leaving_since(r.dest_id));
        if r.initiated_at >= cutoff {
            continue;
        }
        let bad = match r.outcome {
            SearchOutcome::Failed => r.resolved_at.filter(|at| *at < cutoff),
            SearchOutcome::Pending
                if cutoff == u64::MAX && t.fairness.is_fair() && t.steps() - r.initiated_at > patience =>
            {
                Some(t.steps())
            }
            _ => None,
        };
        if let Some(at) = bad {
            if worst.as_ref().is_none_or(|(w, _)| at < *w) {
                let w = format!(
                    "search {} from {} to {} initiated at {} is {:?}; an earlier one was delivered at {}",
                    r.tag.0, r.origin, r.dest_id, r.initiated_at, r.outcome, delivered
                );
                worst = Some((at, w));
            }
        }
    }
    match worst {
        Some((at, w)) => PropertyVerdict::with(p, Status::ViolatedAt(at), w),
        None if exempt > 0 => PropertyVerdict::with(
            p,
            Status::Holds,
            format!("{exempt} searches exempt: initiated in non-admissible states"),
        ),
        None => PropertyVerdict::new(p, Status::Holds),
    }
}

pub fn check_exit_gating(t: &Trace) -> PropertyVerdict {
    let p = Property::ExitGating;
    if t.protocol.protocol != Protocol::Star {
        return PropertyVerdict::new(p, Status::NotApplicable);
    }
    match t.exits.iter().find(|e| !e.nidec) {
        Some(e) => PropertyVerdict::with(p, Status::ViolatedAt(e.step), format!("{} exited without NIDEC", e.node)),
        None => PropertyVerdict::new(p, Status::Holds),
    }
}

/// Finite departure: PNG stays weakly connected, the staying nodes of each
/// initial component end up together, exits are NIDEC-gated, and no leaving
/// node is present at the end.
pub fn check_fdp(t: &Trace) -> PropertyVerdict {
    let p = Property::Fdp;
    if t.protocol.protocol != Protocol::Star {
        return PropertyVerdict::new(p, Status::NotApplicable);
    }
    if let Some(k) = t.observations.iter().position(|o| !o.connected).filter(|_| t.observations[0].connected) {
        return PropertyVerdict::with(
            p,
            Status::ViolatedAt(k as u64),
            format!("PNG disconnected after {}", event_line(t, k)),
        );
    }
    let gating = check_exit_gating(t);
    if !gating.passed() {
        return PropertyVerdict { property: p, ..gating };
    }
    let end = t.steps();
    let finals = weak_components(&t.final_state);
    for comp in &t.initial_components {
        let staying: Vec<NodeId> = comp.iter().copied().filter(|id| t.final_state.nodes[id].is_staying()).collect();
        let Some(first) = staying.first() else { continue };
        let home = finals.iter().find(|c| c.contains(first));
        if let Some(stray) = staying.iter().find(|id| !home.is_some_and(|c| c.contains(id))) {
            return PropertyVerdict::with(
                p,
                Status::ViolatedAt(end),
                format!("{first} and {stray} ended in different components"),
            );
        }
    }
    let lingering: Vec<String> =
        t.final_state.present().filter(|n| n.is_leaving()).map(|n| format!("{}", n.id)).collect();
    if !lingering.is_empty() {
        return PropertyVerdict::with(p, Status::ViolatedAt(end), format!("still present: {}", lingering.join(",")));
    }
    PropertyVerdict::new(p, Status::Holds)
}

pub fn check_property(t: &Trace, p: Property) -> PropertyVerdict {
    match p {
        Property::Connectivity => check_connectivity(t),
        Property::PhiMonotone => check_phi_monotone(t),
        Property::Admissibility => check_admissibility(t),
        Property::RMonotone => check_r_monotone(t),
        Property::Convergence => check_convergence(t),
        Property::Searchability => check_searchability(t),
        Property::Fdp => check_fdp(t),
        Property::Fairness => check_fairness(t),
        Property::LeavingSelfRefs => check_leaving_self_refs(t),
        Property::ExitGating => check_exit_gating(t),
    }
}

pub fn check_all(t: &Trace) -> Vec<PropertyVerdict> {
    Property::ALL.into_iter().map(|p| check_property(t, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NodeState;

    fn line(n: u64) -> SystemState {
        SystemState::from_nodes(
            (1..=n).map(|i| NodeState::with_neighbors(NodeId(i), (i > 1).then_some(i - 1), (i < n).then_some(i + 1))),
        )
    }

    #[test]
    fn property_names_round_trip() {
        for p in Property::ALL {
            assert_eq!(p.name().parse::<Property>(), Ok(p));
        }
        assert!("bogus".parse::<Property>().is_err());
    }

    #[test]
    fn line_with_harmless_traffic_is_fixed() {
        let mut s = line(4);
        assert!(is_fixed_point(&s, Protocol::Plus));
        s.send(NodeId(3), Message::Introduce { v: NodeId(2), w: None });
        s.send(NodeId(1), Message::TempDelegate { u: NodeId(4) });
        s.send(NodeId(2), Message::Introduce { v: NodeId(1), w: Some(NodeId(3)) });
        assert!(is_fixed_point(&s, Protocol::Plus));
        s.send(NodeId(1), Message::Introduce { v: NodeId(3), w: None });
        assert!(is_fixed_point(&s, Protocol::Plus));
        s.send(NodeId(1), Message::Introduce { v: NodeId(3), w: Some(NodeId(2)) });
        assert!(!is_fixed_point(&s, Protocol::Plus));
    }

    #[test]
    fn extra_edge_is_not_fixed() {
        let mut s = line(4);
        s.nodes.get_mut(&NodeId(1)).unwrap().right.insert(NodeId(3));
        assert!(!is_fixed_point(&s, Protocol::Plus));
    }
}
