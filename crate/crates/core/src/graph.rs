//! Derived views of a [`SystemState`]: the network graph and its explicit
//! subgraph, the closest-neighbor graph, weak connectivity, the potential Φ
//! and the directed reachability sets used by the message invariants.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{Direction, NeighborSet, NodeId, SystemState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Explicit(NeighborSet),
    Implicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn is_explicit(&self) -> bool {
        matches!(self.kind, EdgeKind::Explicit(_))
    }
}

/// NG: one edge per stored reference and per reference carried by a message
/// waiting in the holder's channel. Gone nodes contribute nothing.
pub fn network_graph(s: &SystemState) -> Vec<Edge> {
    let mut edges = Vec::new();
    for n in s.present() {
        for (set, to) in n.stored_refs() {
            edges.push(Edge { from: n.id, to, kind: EdgeKind::Explicit(set) });
        }
        for m in s.channel(n.id) {
            m.visit_refs(|to| edges.push(Edge { from: n.id, to, kind: EdgeKind::Implicit }));
        }
    }
    edges
}

/// ENG as a plain edge set.
pub fn explicit_graph(s: &SystemState) -> BTreeSet<(NodeId, NodeId)> {
    s.present().flat_map(|n| n.stored_refs().map(move |(_, to)| (n.id, to))).collect()
}

/// G_NB: edges to each present node's closest stored left and right neighbor.
pub fn closest_neighbor_graph(s: &SystemState) -> BTreeSet<(NodeId, NodeId)> {
    let mut out = BTreeSet::new();
    for n in s.present() {
        if let Some(l) = n.left.iter().rev().find(|&&x| x < n.id) {
            out.insert((n.id, *l));
        }
        if let Some(r) = n.right.iter().find(|&&x| x > n.id) {
            out.insert((n.id, *r));
        }
    }
    out
}

/// The sorted bidirected line over `ids`.
pub fn line_edges(ids: &[NodeId]) -> BTreeSet<(NodeId, NodeId)> {
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.windows(2).flat_map(|w| [(w[0], w[1]), (w[1], w[0])]).collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Weakly connected components of NG restricted to present nodes (PNG).
/// Components come out sorted by their smallest member.
pub fn weak_components(s: &SystemState) -> Vec<BTreeSet<NodeId>> {
    let ids = s.present_ids();
    let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut uf = UnionFind::new(ids.len());
    for e in network_graph(s) {
        if let (Some(&a), Some(&b)) = (index.get(&e.from), index.get(&e.to)) {
            uf.union(a, b);
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<NodeId>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().insert(*id);
    }
    let mut comps: Vec<_> = groups.into_values().collect();
    comps.sort_by_key(|c| c.first().copied());
    comps
}

pub fn is_weakly_connected(s: &SystemState) -> bool {
    weak_components(s).len() <= 1
}

/// Φ over the present nodes: for each node the line distance to its closest
/// right (left) neighbor, or `n` when there is none. The rightmost node's
/// right term and the leftmost node's left term are not counted.
pub fn potential_phi(s: &SystemState) -> u64 {
    let ids = s.present_ids();
    let n = ids.len();
    if n < 2 {
        return 0;
    }
    let pos: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut phi = 0u64;
    for (i, id) in ids.iter().enumerate() {
        let node = &s.nodes[id];
        if i + 1 < n {
            let next = node.right.iter().find(|&&x| x > *id).and_then(|x| pos.get(x));
            phi += next.map_or(n, |&j| j - i) as u64;
        }
        if i > 0 {
            let next = node.left.iter().rev().find(|&&x| x < *id).and_then(|x| pos.get(x));
            phi += next.map_or(n, |&j| i - j) as u64;
        }
    }
    phi
}

/// Fixed-capacity bit set over node indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    pub fn new(len: usize) -> Self {
        BitSet { words: vec![0; len.div_ceil(64)] }
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words.get(i / 64).is_some_and(|w| w & (1 << (i % 64)) != 0)
    }

    pub fn union_with(&mut self, other: &BitSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
    }

    pub fn intersect_with(&mut self, other: &BitSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= *b;
        }
    }

    pub fn is_subset(&self, other: &BitSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            core::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

/// Whether a path counted by R_s/L_s may pass through a leaving node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StayingPaths {
    /// Any `Right`/`Left` edge is traversable; only staying nodes are members.
    #[default]
    ThroughLeaving,
    /// Paths may only pass through staying nodes.
    StayingOnly,
}

/// Which family of reachability sets to query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reachability {
    /// R / L: every explicit edge pointing in the right direction.
    All,
    /// R_s / L_s: only `Right` (`Left`) edges, staying members.
    Staying,
}

/// All R, L, R_s and L_s sets of one state, computed in a single pass.
///
/// Directed edges used by these sets strictly increase (or decrease) ids, so
/// each family is a DAG closure computed in id order.
#[derive(Clone, Debug)]
pub struct Reach {
    ids: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    staying: BitSet,
    right: Vec<BitSet>,
    left: Vec<BitSet>,
    right_s: Vec<BitSet>,
    left_s: Vec<BitSet>,
}

impl Reach {
    pub fn new(s: &SystemState) -> Self {
        Self::with_paths(s, StayingPaths::default())
    }

    pub fn with_paths(s: &SystemState, paths: StayingPaths) -> Self {
        let ids: Vec<NodeId> = s.nodes.keys().copied().collect();
        let n = ids.len();
        let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut staying = BitSet::new(n);
        let mut explicit_out: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut right_out: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut left_out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, id) in ids.iter().enumerate() {
            let node = &s.nodes[id];
            if node.is_staying() && node.is_present() {
                staying.insert(i);
            }
            for (_, to) in node.stored_refs() {
                if let Some(&j) = index.get(&to) {
                    explicit_out[i].push(j);
                }
            }
            right_out[i] = node.right.iter().filter_map(|x| index.get(x).copied()).collect();
            left_out[i] = node.left.iter().filter_map(|x| index.get(x).copied()).collect();
        }

        let through = |j: usize| paths == StayingPaths::ThroughLeaving || staying.contains(j);
        let mut right = vec![BitSet::new(n); n];
        let mut right_s = vec![BitSet::new(n); n];
        for i in (0..n).rev() {
            let mut r = BitSet::new(n);
            for &j in explicit_out[i].iter().filter(|&&j| j > i) {
                r.insert(j);
                r.union_with(&right[j]);
            }
            right[i] = r;
            let mut rs = BitSet::new(n);
            for &j in right_out[i].iter().filter(|&&j| j > i && through(j)) {
                if staying.contains(j) {
                    rs.insert(j);
                }
                rs.union_with(&right_s[j]);
            }
            right_s[i] = rs;
        }
        let mut left = vec![BitSet::new(n); n];
        let mut left_s = vec![BitSet::new(n); n];
        for i in 0..n {
            let mut l = BitSet::new(n);
            for &j in explicit_out[i].iter().filter(|&&j| j < i) {
                l.insert(j);
                l.union_with(&left[j]);
            }
            left[i] = l;
            let mut ls = BitSet::new(n);
            for &j in left_out[i].iter().filter(|&&j| j < i && through(j)) {
                if staying.contains(j) {
                    ls.insert(j);
                }
                ls.union_with(&left_s[j]);
            }
            left_s[i] = ls;
        }
        Reach { ids, index, staying, right, left, right_s, left_s }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn id_at(&self, i: usize) -> NodeId {
        self.ids[i]
    }

    pub fn empty_set(&self) -> BitSet {
        BitSet::new(self.ids.len())
    }

    pub fn is_staying(&self, id: NodeId) -> bool {
        self.index_of(id).is_some_and(|i| self.staying.contains(i))
    }

    pub fn staying_mask(&self) -> &BitSet {
        &self.staying
    }

    /// R(v) / L(v) / R_s(v) / L_s(v) as a bit set. Unknown nodes reach nothing.
    pub fn bits(&self, family: Reachability, side: Direction, v: NodeId) -> BitSet {
        match self.index_of(v) {
            Some(i) => self.bits_at(family, side, i).clone(),
            None => self.empty_set(),
        }
    }

    fn bits_at(&self, family: Reachability, side: Direction, i: usize) -> &BitSet {
        match (family, side) {
            (Reachability::All, Direction::Right) => &self.right[i],
            (Reachability::All, Direction::Left) => &self.left[i],
            (Reachability::Staying, Direction::Right) => &self.right_s[i],
            (Reachability::Staying, Direction::Left) => &self.left_s[i],
        }
    }

    pub fn reaches(&self, family: Reachability, side: Direction, v: NodeId, x: NodeId) -> bool {
        match (self.index_of(v), self.index_of(x)) {
            (Some(i), Some(j)) => self.bits_at(family, side, i).contains(j),
            _ => false,
        }
    }

    /// R(U) = U ∪ ⋃ R(u), and the L / R_s / L_s analogues.
    pub fn closure_of(&self, family: Reachability, side: Direction, set: impl IntoIterator<Item = NodeId>) -> BitSet {
        let mut out = self.empty_set();
        for u in set {
            if let Some(i) = self.index_of(u) {
                out.insert(i);
                out.union_with(self.bits_at(family, side, i));
            }
        }
        out
    }

    /// R_s⁺(v) / L_s⁺(v): R_s(v), plus v itself when v is staying.
    pub fn staying_plus(&self, side: Direction, v: NodeId) -> BitSet {
        let mut out = self.bits(Reachability::Staying, side, v);
        if let Some(i) = self.index_of(v) {
            if self.staying.contains(i) {
                out.insert(i);
            }
        }
        out
    }

    pub fn to_ids(&self, bits: &BitSet) -> BTreeSet<NodeId> {
        bits.iter().map(|i| self.ids[i]).collect()
    }
}

pub fn reach_right(s: &SystemState, v: NodeId) -> BTreeSet<NodeId> {
    let r = Reach::new(s);
    r.to_ids(&r.bits(Reachability::All, Direction::Right, v))
}

pub fn reach_left(s: &SystemState, v: NodeId) -> BTreeSet<NodeId> {
    let r = Reach::new(s);
    r.to_ids(&r.bits(Reachability::All, Direction::Left, v))
}

pub fn reach_right_staying(s: &SystemState, v: NodeId) -> BTreeSet<NodeId> {
    let r = Reach::new(s);
    r.to_ids(&r.bits(Reachability::Staying, Direction::Right, v))
}

pub fn reach_left_staying(s: &SystemState, v: NodeId) -> BTreeSet<NodeId> {
    let r = Reach::new(s);
    r.to_ids(&r.bits(Reachability::Staying, Direction::Left, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Message, Mode, NodeState};

    fn ids(v: &[u64]) -> BTreeSet<NodeId> {
        v.iter().copied().map(NodeId).collect()
    }

    fn line(n: u64) -> SystemState {
        SystemState::from_nodes(
            (1..=n).map(|i| NodeState::with_neighbors(NodeId(i), (i > 1).then_some(i - 1), (i < n).then_some(i + 1))),
        )
    }

    fn one_stored_one_in_transit() -> SystemState {
        let mut s = SystemState::from_nodes([
            NodeState::with_neighbors(NodeId(1), [], [2]),
            NodeState::new(NodeId(2)),
            NodeState::new(NodeId(3)),
        ]);
        s.send(NodeId(2), Message::TempDelegate { u: NodeId(3) });
        s
    }

    #[test]
    fn stored_and_in_transit_edges() {
        let s = one_stored_one_in_transit();
        let ng = network_graph(&s);
        assert_eq!(ng.len(), 2);
        assert!(ng.contains(&Edge { from: NodeId(1), to: NodeId(2), kind: EdgeKind::Explicit(NeighborSet::Right) }));
        assert!(ng.contains(&Edge { from: NodeId(2), to: NodeId(3), kind: EdgeKind::Implicit }));
        assert_eq!(explicit_graph(&s), [(NodeId(1), NodeId(2))].into());
        assert!(is_weakly_connected(&s));
    }

    #[test]
    fn line_of_three_has_four_explicit_edges() {
        assert_eq!(explicit_graph(&line(3)).len(), 4);
        assert_eq!(closest_neighbor_graph(&line(3)), line_edges(&[NodeId(1), NodeId(2), NodeId(3)]));
    }

    #[test]
    fn closest_neighbor_picks_nearest() {
        let s = SystemState::from_nodes([5, 7, 9].map(|i| {
            if i == 5 {
                NodeState::with_neighbors(NodeId(5), [], [7, 9])
            } else {
                NodeState::new(NodeId(i))
            }
        }));
        assert_eq!(closest_neighbor_graph(&s), [(NodeId(5), NodeId(7))].into());
    }

    #[test]
    fn phi_examples() {
        assert_eq!(potential_phi(&line(3)), 4);
        let empty = SystemState::from_nodes((1..=3).map(|i| NodeState::new(NodeId(i))));
        assert_eq!(potential_phi(&empty), 12);
        assert_eq!(potential_phi(&line(2)), 2);
        assert_eq!(potential_phi(&line(1)), 0);
        assert_eq!(potential_phi(&SystemState::new()), 0);
    }

    #[test]
    fn reach_on_line() {
        let s = line(3);
        assert_eq!(reach_right(&s, NodeId(1)), ids(&[2, 3]));
        assert!(reach_right(&s, NodeId(3)).is_empty());
        assert_eq!(reach_left(&s, NodeId(3)), ids(&[1, 2]));
    }

    #[test]
    fn staying_reach_skips_leaving_members_but_not_paths() {
        // 1 -> 2 (leaving) -> 3
        let mut s = SystemState::from_nodes([
            NodeState::with_neighbors(NodeId(1), [], [2]),
            NodeState::with_neighbors(NodeId(2), [], [3]),
            NodeState::new(NodeId(3)),
        ]);
        s.node_mut(NodeId(2)).unwrap().mode = Mode::Leaving;
        assert_eq!(reach_right_staying(&s, NodeId(1)), ids(&[3]));
        let strict = Reach::with_paths(&s, StayingPaths::StayingOnly);
        assert!(strict.bits(Reachability::Staying, Direction::Right, NodeId(1)).is_empty());

        let r = Reach::new(&s);
        assert_eq!(r.to_ids(&r.staying_plus(Direction::Right, NodeId(2))), ids(&[3]));
        assert_eq!(r.to_ids(&r.staying_plus(Direction::Right, NodeId(1))), ids(&[1, 3]));
    }

    #[test]
    fn staying_reach_ignores_temp_sets() {
        let mut s = SystemState::from_nodes([NodeState::new(NodeId(1)), NodeState::new(NodeId(2))]);
        s.node_mut(NodeId(1)).unwrap().mode = Mode::Leaving;
        s.node_mut(NodeId(1)).unwrap().temp_right.insert(NodeId(2));
        assert!(reach_right_staying(&s, NodeId(1)).is_empty());
        assert_eq!(reach_right(&s, NodeId(1)), ids(&[2]));
    }

    #[test]
    fn components_split_on_missing_edges() {
        let s = SystemState::from_nodes([
            NodeState::with_neighbors(NodeId(1), [], [2]),
            NodeState::new(NodeId(2)),
            NodeState::new(NodeId(3)),
        ]);
        assert_eq!(weak_components(&s), vec![ids(&[1, 2]), ids(&[3])]);
    }

    #[test]
    fn bitset_ops() {
        let mut a = BitSet::new(130);
        a.insert(3);
        a.insert(129);
        let mut b = a.clone();
        b.insert(64);
        assert!(a.is_subset(&b));
        assert!(!b.is_subset(&a));
        assert_eq!(b.iter().collect::<Vec<_>>(), vec![3, 64, 129]);
        b.remove(64);
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }
}
