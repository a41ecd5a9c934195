//! Load-balanced asynchronous threshold counting.
//!
//! Tree nodes are numbered from 1 (the root). The root's `j`-th child is the
//! root of collection subtree `j`, a complete binary tree whose leaves
//! (collection nodes) absorb flags and whose internal nodes (adding nodes)
//! combine counts. The remaining ids are assigned breadth first. Node `k`
//! is played by actor `k`; the down stage is the binary tree over all actor
//! ids.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec;
use crate::simnet::{Context, Metrics, Node, Payload, PlayerId, SimError, Simulation, Strategy};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CounterError {
    #[error("n = {n}, tau = {tau} gives no collection subtrees")]
    ParamsTooSmall { n: usize, tau: usize },
    #[error("tau = {tau} must be at least n/2 and at most n = {n}")]
    BadThreshold { n: usize, tau: usize },
}

/// How collection quotas and root credits are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMode {
    /// Leaves absorb `a = ⌈τ / 2^(D+1)⌉` flags and forward at most `2a`;
    /// a count from subtree `j` credits `a · 2^(D+1−j)`. Every credited unit
    /// is backed by an absorbed flag, and a full set of counts plus direct
    /// flags can reach τ with exactly τ flags in the system.
    Balanced,
    /// Leaves absorb `⌈7 log2 n⌉` flags and forward at most `⌈14 log2 n⌉`;
    /// a count from subtree `j` credits `τ / 2^j`.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Root,
    Adding { subtree: u32 },
    Collection { subtree: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutNode {
    pub id: u32,
    pub kind: NodeKind,
    pub parent: Option<u32>,
    pub children: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterLayout {
    pub n: usize,
    pub tau: usize,
    /// Number of collection subtrees; 0 for the flat layout where every
    /// flag goes straight to the root.
    pub depth: u32,
    pub mode: ThresholdMode,
    pub collect_threshold: usize,
    pub forward_cap: usize,
    /// `nodes[k - 1]` is node `k`.
    pub nodes: Vec<LayoutNode>,
    /// Leaf ids of subtree `j` at index `j - 1`.
    pub leaves: Vec<Vec<u32>>,
    /// Root accounting is done in units of `1 / scale` flags.
    pub scale: u64,
    /// Scaled credit of a count from subtree `j`, at index `j - 1`.
    pub credit: Vec<u64>,
}

fn log2_ceil_f(n: usize) -> f64 {
    (n as f64).log2()
}

/// `⌈log2(τ / (14 log2 n))⌉`, possibly ≤ 0.
pub fn subtree_count(n: usize, tau: usize) -> i64 {
    let x = tau as f64 / (14.0 * log2_ceil_f(n));
    (x.log2() - 1e-9).ceil() as i64
}

impl CounterLayout {
    pub fn node(&self, id: u32) -> &LayoutNode {
        &self.nodes[id as usize - 1]
    }

    pub fn up_stage_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Scaled target sum at the root.
    pub fn target(&self) -> u64 {
        self.tau as u64 * self.scale
    }

    pub fn subtree_root(&self, j: u32) -> u32 {
        j + 1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serialises")
    }
}

/// Full tree layout; fails if fewer than one subtree would exist.
pub fn build_layout(n: usize, tau: usize, mode: ThresholdMode) -> Result<CounterLayout, CounterError> {
    if 2 * tau < n || tau > n || n < 2 {
        return Err(CounterError::BadThreshold { n, tau });
    }
    let d = subtree_count(n, tau);
    if d < 1 {
        return Err(CounterError::ParamsTooSmall { n, tau });
    }
    let d = d as u32;
    // breadth-first numbering: root, subtree roots, then subtree levels
    let mut nodes = vec![LayoutNode { id: 1, kind: NodeKind::Root, parent: None, children: Vec::new() }];
    let mut frontier: Vec<(u32, u32, u32)> = Vec::new(); // (id, subtree, remaining depth)
    for j in 1..=d {
        let id = nodes.len() as u32 + 1;
        let depth = d + 1 - j;
        nodes.push(LayoutNode { id, kind: NodeKind::Adding { subtree: j }, parent: Some(1), children: Vec::new() });
        nodes[0].children.push(id);
        frontier.push((id, j, depth));
    }
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (pid, j, rem) in frontier {
            if rem == 0 {
                nodes[pid as usize - 1].kind = NodeKind::Collection { subtree: j };
                continue;
            }
            for _ in 0..2 {
                let id = nodes.len() as u32 + 1;
                nodes.push(LayoutNode { id, kind: NodeKind::Adding { subtree: j }, parent: Some(pid), children: Vec::new() });
                nodes[pid as usize - 1].children.push(id);
                next.push((id, j, rem - 1));
            }
        }
        frontier = next;
    }
    let mut leaves = vec![Vec::new(); d as usize];
    for nd in &nodes {
        if let NodeKind::Collection { subtree } = nd.kind {
            leaves[subtree as usize - 1].push(nd.id);
        }
    }
    let l = log2_ceil_f(n);
    let (collect_threshold, forward_cap, scale, credit) = match mode {
        ThresholdMode::Balanced => {
            let a = tau.div_ceil(1 << (d + 1));
            let credit = (1..=d).map(|j| (a as u64) << (d + 1 - j)).collect();
            (a, 2 * a, 1, credit)
        }
        ThresholdMode::Literal => {
            let scale = 1u64 << d;
            let credit = (1..=d).map(|j| tau as u64 * (scale >> j)).collect();
            ((7.0 * l).ceil() as usize, (14.0 * l).ceil() as usize, scale, credit)
        }
    };
    Ok(CounterLayout { n, tau, depth: d, mode, collect_threshold, forward_cap, nodes, leaves, scale, credit })
}

/// Like [`build_layout`], but falls back to a root-only layout when the
/// parameters are too small for any collection subtree.
pub fn build_or_flat(n: usize, tau: usize, mode: ThresholdMode) -> Result<CounterLayout, CounterError> {
    match build_layout(n, tau, mode) {
        Err(CounterError::ParamsTooSmall { .. }) => Ok(CounterLayout {
            n,
            tau,
            depth: 0,
            mode,
            collect_threshold: 0,
            forward_cap: 0,
            nodes: vec![LayoutNode { id: 1, kind: NodeKind::Root, parent: None, children: Vec::new() }],
            leaves: Vec::new(),
            scale: 1,
            credit: Vec::new(),
        }),
        other => other,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CounterMsg {
    /// `origin` identifies the 0→1 transition for lineage audits.
    Flag { origin: u32 },
    Count { subtree: u32 },
    Done,
}

impl CounterMsg {
    pub fn tag(&self) -> u8 {
        match self {
            CounterMsg::Flag { .. } => codec::FLAG,
            CounterMsg::Count { subtree } => codec::count_tag(*subtree),
            CounterMsg::Done => codec::DONE,
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.tag());
        if let CounterMsg::Flag { origin } = self {
            out.extend_from_slice(&origin.to_le_bytes());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum CounterEvent {
    FlagIssued { origin: u32, to: u32 },
    Absorbed { node: u32, subtree: u32, origin: u32 },
    Forwarded { node: u32, origin: u32, to: u32 },
    Dropped { node: u32, origin: u32 },
    CountSent { node: u32, subtree: u32 },
    RootFlag { origin: u32 },
    RootCredit { subtree: u32, credit: u64 },
    DoneIssued { sum: u64 },
    DoneReceived { actor: u32 },
}

#[derive(Clone, Debug)]
enum NodeState {
    Root { sum: u64, credited: BTreeSet<u32>, done: bool },
    Adding { got: BTreeSet<u32>, sent: bool },
    Collection { received: usize, forwarded: usize },
}

/// One actor: hosts the tree node with its id (if any) and its place in the
/// down stage.
#[derive(Clone, Debug)]
pub struct CounterActor {
    id: u32,
    layout: Arc<CounterLayout>,
    node: Option<NodeState>,
    flag_sent: bool,
    done: bool,
    relabel: bool,
    pub events: Vec<CounterEvent>,
}

/// Outgoing `(actor id, message)` pairs.
pub type CounterOut = Vec<(u32, CounterMsg)>;

impl CounterActor {
    pub fn new(id: u32, layout: Arc<CounterLayout>) -> Self {
        let node = (id as usize <= layout.nodes.len()).then(|| match layout.node(id).kind {
            NodeKind::Root => NodeState::Root { sum: 0, credited: BTreeSet::new(), done: false },
            NodeKind::Adding { .. } => NodeState::Adding { got: BTreeSet::new(), sent: false },
            NodeKind::Collection { .. } => NodeState::Collection { received: 0, forwarded: 0 },
        });
        CounterActor { id, layout, node, flag_sent: false, done: false, relabel: false, events: Vec::new() }
    }

    /// Forwarded flags carry `(node << 16) | k` for the node's `k`-th
    /// forward instead of the original origin. Replicas of one actor that
    /// see flags in different orders then still emit identical messages.
    pub fn with_forward_labels(mut self) -> Self {
        self.relabel = true;
        self
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn done(&self) -> bool {
        self.done
    }

    /// Root's current scaled sum.
    pub fn root_sum(&self) -> Option<u64> {
        match &self.node {
            Some(NodeState::Root { sum, .. }) => Some(*sum),
            _ => None,
        }
    }

    fn random_leaf(&self, subtree: u32, pick: &mut dyn FnMut(usize) -> usize) -> u32 {
        let leaves = &self.layout.leaves[subtree as usize - 1];
        leaves[pick(leaves.len()) % leaves.len()]
    }

    /// The actor's input bit became 1: one flag to a random subtree-1 leaf
    /// (or the root in the flat layout). `origin` tags the transition.
    pub fn input_set(&mut self, origin: u32, pick: &mut dyn FnMut(usize) -> usize) -> CounterOut {
        if self.flag_sent {
            return Vec::new();
        }
        self.flag_sent = true;
        let to = if self.layout.depth == 0 { 1 } else { self.random_leaf(1, pick) };
        self.events.push(CounterEvent::FlagIssued { origin, to });
        vec![(to, CounterMsg::Flag { origin })]
    }

    fn issue_done(&mut self) -> CounterOut {
        self.done = true;
        self.down_children()
    }

    fn down_children(&self) -> CounterOut {
        let n = self.layout.n as u32;
        [2 * self.id, 2 * self.id + 1].into_iter().filter(|&c| c <= n).map(|c| (c, CounterMsg::Done)).collect()
    }

    pub fn handle(&mut self, from: u32, msg: CounterMsg, pick: &mut dyn FnMut(usize) -> usize) -> CounterOut {
        let layout = self.layout.clone();
        match msg {
            CounterMsg::Done => {
                if self.done || from != self.id / 2 {
                    return Vec::new();
                }
                self.done = true;
                self.events.push(CounterEvent::DoneReceived { actor: self.id });
                self.down_children()
            }
            CounterMsg::Flag { origin } => {
                let id = self.id;
                match self.node.as_mut() {
                    Some(NodeState::Root { sum, done, .. }) => {
                        if *done {
                            return Vec::new();
                        }
                        *sum += layout.scale;
                        self.events.push(CounterEvent::RootFlag { origin });
                        self.check_root()
                    }
                    Some(NodeState::Collection { received, forwarded }) => {
                        let NodeKind::Collection { subtree } = layout.node(id).kind else { unreachable!() };
                        if *received < layout.collect_threshold {
                            *received += 1;
                            self.events.push(CounterEvent::Absorbed { node: id, subtree, origin });
                            if *received == layout.collect_threshold {
                                let parent = layout.node(id).parent.expect("leaf has a parent");
                                self.events.push(CounterEvent::CountSent { node: id, subtree });
                                return vec![(parent, CounterMsg::Count { subtree })];
                            }
                            Vec::new()
                        } else if *forwarded < layout.forward_cap {
                            *forwarded += 1;
                            let label = if self.relabel { (id << 16) | *forwarded as u32 } else { origin };
                            let to = if subtree < layout.depth { self.random_leaf(subtree + 1, pick) } else { 1 };
                            self.events.push(CounterEvent::Forwarded { node: id, origin, to });
                            vec![(to, CounterMsg::Flag { origin: label })]
                        } else {
                            self.events.push(CounterEvent::Dropped { node: id, origin });
                            Vec::new()
                        }
                    }
                    _ => Vec::new(),
                }
            }
            CounterMsg::Count { subtree } => {
                let id = self.id;
                match self.node.as_mut() {
                    Some(NodeState::Root { sum, credited, done }) => {
                        if *done || from != layout.subtree_root(subtree) || !credited.insert(subtree) {
                            return Vec::new();
                        }
                        let c = layout.credit[subtree as usize - 1];
                        *sum += c;
                        self.events.push(CounterEvent::RootCredit { subtree, credit: c });
                        self.check_root()
                    }
                    Some(NodeState::Adding { got, sent }) => {
                        let nd = layout.node(id);
                        if *sent || !nd.children.contains(&from) {
                            return Vec::new();
                        }
                        got.insert(from);
                        if got.len() == nd.children.len() {
                            *sent = true;
                            self.events.push(CounterEvent::CountSent { node: id, subtree });
                            return vec![(nd.parent.expect("adding node has a parent"), CounterMsg::Count { subtree })];
                        }
                        Vec::new()
                    }
                    _ => Vec::new(),
                }
            }
        }
    }

    fn check_root(&mut self) -> CounterOut {
        let target = self.layout.target();
        let Some(NodeState::Root { sum, done, .. }) = self.node.as_mut() else { return Vec::new() };
        if !*done && *sum >= target {
            *done = true;
            let s = *sum;
            self.events.push(CounterEvent::DoneIssued { sum: s });
            return self.issue_done();
        }
        Vec::new()
    }
}

/// Post-run lineage audit. `ones` is the set of origins whose bit was 1.
pub fn audit_events(layout: &CounterLayout, events: &[CounterEvent], ones: &BTreeSet<u32>) -> Result<(), String> {
    audit_events_at(layout, events, ones).map_err(|(_, e)| e)
}

/// As [`audit_events`], also returning the index of the offending event
/// (`events.len()` for whole-trace checks).
pub fn audit_events_at(
    layout: &CounterLayout,
    events: &[CounterEvent],
    ones: &BTreeSet<u32>,
) -> Result<(), (usize, String)> {
    let mut issued = BTreeSet::new();
    let mut accounted = BTreeSet::new();
    let mut absorbed: BTreeMap<u32, u64> = BTreeMap::new();
    let mut root_sum = 0u64;
    for (i, e) in events.iter().enumerate() {
        match *e {
            CounterEvent::FlagIssued { origin, .. } => {
                if !ones.contains(&origin) {
                    return Err((i, format!("flag issued by {origin} whose bit is 0")));
                }
                if !issued.insert(origin) {
                    return Err((i, format!("origin {origin} issued two flags")));
                }
            }
            CounterEvent::Absorbed { subtree, origin, .. } => {
                if !accounted.insert(origin) {
                    return Err((i, format!("flag {origin} accounted twice")));
                }
                *absorbed.entry(subtree).or_default() += 1;
            }
            CounterEvent::RootFlag { origin } => {
                if !accounted.insert(origin) {
                    return Err((i, format!("flag {origin} accounted twice")));
                }
                root_sum += layout.scale;
            }
            CounterEvent::RootCredit { credit, .. } => {
                root_sum += credit;
            }
            CounterEvent::DoneIssued { sum } => {
                if sum != root_sum {
                    return Err((i, format!("root reported {sum}, lineage gives {root_sum}")));
                }
                if sum > ones.len() as u64 * layout.scale {
                    return Err((i, format!("sum {sum} exceeds the {} set bits", ones.len())));
                }
            }
            _ => {}
        }
    }
    // every credited subtree is backed by absorbed flags
    for (i, e) in events.iter().enumerate() {
        if let CounterEvent::RootCredit { subtree, credit } = *e {
            let a = absorbed.get(&subtree).copied().unwrap_or(0) * layout.scale;
            if a < credit {
                return Err((i, format!("subtree {subtree} credited {credit} but absorbed only {a}")));
            }
        }
    }
    if !accounted.is_subset(&issued) {
        return Err((events.len(), "accounted flag that was never issued".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Player mode on the simulator

#[derive(Clone, Debug)]
pub struct CounterPayload(pub CounterMsg);

impl Payload for CounterPayload {
    fn field_elements(&self) -> usize {
        0
    }
    fn tag(&self) -> u8 {
        self.0.tag()
    }
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out)
    }
    fn tamper(&mut self, _rng: &mut ChaCha8Rng) -> bool {
        false
    }
}

pub struct CounterPlayer {
    pub actor: CounterActor,
    pub bit: bool,
}

fn pick_with(rng: &mut ChaCha8Rng) -> impl FnMut(usize) -> usize + '_ {
    move |k| rng.gen_range(0..k.max(1))
}

impl CounterPlayer {
    fn send(out: CounterOut, ctx: &mut Context<'_, CounterPayload>) {
        for (to, m) in out {
            ctx.send(to - 1, CounterPayload(m));
        }
    }
}

impl Node for CounterPlayer {
    type Msg = CounterPayload;

    fn start(&mut self, ctx: &mut Context<'_, CounterPayload>) {
        if self.bit {
            let origin = self.actor.id();
            let out = self.actor.input_set(origin, &mut pick_with(ctx.rng()));
            Self::send(out, ctx);
        }
    }

    fn handle(&mut self, from: PlayerId, msg: CounterPayload, ctx: &mut Context<'_, CounterPayload>) {
        let out = self.actor.handle(from + 1, msg.0, &mut pick_with(ctx.rng()));
        Self::send(out, ctx);
    }
}

#[derive(Clone, Debug)]
pub struct CounterReport {
    pub all_done: bool,
    pub done_count: usize,
    pub ones: usize,
    pub metrics: Metrics,
    /// Audit order: every non-root actor's history, then the root's.
    pub events: Vec<CounterEvent>,
    pub audit: Result<(), String>,
}

/// Runs the counter among `n` good players where the players in `ones`
/// (1-based actor ids) have their bit set.
pub fn run_counter(
    layout: Arc<CounterLayout>,
    ones: &BTreeSet<u32>,
    strategy: Strategy,
    seed: u64,
) -> Result<CounterReport, SimError> {
    let n = layout.n;
    let nodes = (1..=n as u32)
        .map(|id| CounterPlayer { actor: CounterActor::new(id, layout.clone()), bit: ones.contains(&id) })
        .collect();
    let mut sim = Simulation::spawn(nodes, &BTreeMap::new(), 0, strategy, seed)?.with_step_budget(50_000_000);
    let metrics = sim.run_to_quiescence()?;
    let events = ordered(&sim);
    let done_count = sim.nodes().iter().filter(|p| p.actor.done()).count();
    let audit = audit_events(&layout, &events, ones);
    Ok(CounterReport { all_done: done_count == n, done_count, ones: ones.len(), metrics, events, audit })
}

/// Events in an order where each node's own history is preserved and the
/// root's history comes last (so every credited flag was absorbed before
/// the audit reaches the root).
fn ordered(sim: &Simulation<CounterPlayer>) -> Vec<CounterEvent> {
    let mut v: Vec<CounterEvent> = sim.nodes().iter().skip(1).flat_map(|p| p.actor.events.iter().cloned()).collect();
    v.extend(sim.nodes()[0].actor.events.iter().cloned());
    v
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn layout(n: usize, tau: usize) -> CounterLayout {
        build_layout(n, tau, ThresholdMode::Balanced).unwrap()
    }

    #[test]
    fn depth_formula() {
        assert_eq!(subtree_count(1024, 896), 3);
        assert_eq!(subtree_count(256, 224), 1);
        assert!(subtree_count(64, 56) < 1);
    }

    #[test]
    fn layout_1024() {
        let l = layout(1024, 896);
        assert_eq!(l.depth, 3);
        let leaves: Vec<usize> = l.leaves.iter().map(Vec::len).collect();
        assert_eq!(leaves, vec![8, 4, 2]);
        assert!(l.up_stage_nodes() <= 29);
        assert_eq!(l.up_stage_nodes(), 26);
        // root's children are subtree roots 2..=4
        assert_eq!(l.node(1).children, vec![2, 3, 4]);
        assert_eq!(l.credit, vec![448, 224, 112]);
        assert_eq!(l.credit.iter().sum::<u64>(), 784);
        // quota per leaf times leaves matches τ/2^j
        for j in 1..=3u32 {
            assert_eq!((l.collect_threshold * l.leaves[j as usize - 1].len()) as u64, l.credit[j as usize - 1]);
        }
    }

    #[test]
    fn literal_layout_thresholds() {
        let l = build_layout(1024, 896, ThresholdMode::Literal).unwrap();
        assert_eq!(l.collect_threshold, 70);
        assert_eq!(l.forward_cap, 140);
        assert_eq!(l.scale, 8);
        assert_eq!(l.credit, vec![448 * 8, 224 * 8, 112 * 8]);
    }

    #[test]
    fn small_params_rejected_or_flat() {
        assert_eq!(build_layout(64, 56, ThresholdMode::Balanced), Err(CounterError::ParamsTooSmall { n: 64, tau: 56 }));
        let f = build_or_flat(64, 56, ThresholdMode::Balanced).unwrap();
        assert_eq!(f.depth, 0);
        assert_eq!(f.nodes.len(), 1);
    }

    #[test]
    fn collection_threshold_and_forward_cap() {
        let l = Arc::new(layout(256, 224));
        let leaf = l.leaves[0][0];
        let mut a = CounterActor::new(leaf, l.clone());
        let mut pick = |_k: usize| 0usize;
        for i in 0..55 {
            assert!(a.handle(1000, CounterMsg::Flag { origin: i }, &mut pick).is_empty());
        }
        let out = a.handle(1000, CounterMsg::Flag { origin: 55 }, &mut pick);
        assert_eq!(out, vec![(l.node(leaf).parent.unwrap(), CounterMsg::Count { subtree: 1 })]);
        for i in 0..112 {
            // subtree 1 is the last one: overflow goes to the root
            assert_eq!(a.handle(1000, CounterMsg::Flag { origin: 100 + i }, &mut pick), vec![(1, CounterMsg::Flag { origin: 100 + i })]);
        }
        assert!(a.handle(1000, CounterMsg::Flag { origin: 999 }, &mut pick).is_empty());
        assert!(matches!(a.events.last(), Some(CounterEvent::Dropped { .. })));
    }

    #[test]
    fn adding_node_sends_once() {
        let l = Arc::new(layout(1024, 896));
        let id = 2; // subtree 1 root
        let ch = l.node(id).children.clone();
        let mut a = CounterActor::new(id, l.clone());
        let mut pick = |_k: usize| 0usize;
        assert!(a.handle(ch[1], CounterMsg::Count { subtree: 1 }, &mut pick).is_empty());
        assert!(a.handle(ch[1], CounterMsg::Count { subtree: 1 }, &mut pick).is_empty());
        assert_eq!(a.handle(ch[0], CounterMsg::Count { subtree: 1 }, &mut pick), vec![(1, CounterMsg::Count { subtree: 1 })]);
        assert!(a.handle(ch[0], CounterMsg::Count { subtree: 1 }, &mut pick).is_empty());
    }

    #[test]
    fn root_accounting() {
        let l = Arc::new(layout(1024, 896));
        let mut r = CounterActor::new(1, l.clone());
        let mut pick = |_k: usize| 0usize;
        for j in 1..=3 {
            assert!(r.handle(j + 1, CounterMsg::Count { subtree: j }, &mut pick).is_empty());
        }
        assert_eq!(r.root_sum(), Some(784));
        for i in 0..111 {
            assert!(r.handle(50, CounterMsg::Flag { origin: i }, &mut pick).is_empty());
        }
        let out = r.handle(50, CounterMsg::Flag { origin: 111 }, &mut pick);
        assert_eq!(out, vec![(2, CounterMsg::Done), (3, CounterMsg::Done)]);
        assert_eq!(r.root_sum(), Some(896));
    }

    #[test]
    fn down_stage_forwarding() {
        let l = Arc::new(layout(256, 224));
        let mut pick = |_k: usize| 0usize;
        let mut a = CounterActor::new(5, l.clone());
        assert_eq!(a.handle(2, CounterMsg::Done, &mut pick), vec![(10, CounterMsg::Done), (11, CounterMsg::Done)]);
        let mut leaf = CounterActor::new(200, l);
        assert!(leaf.handle(100, CounterMsg::Done, &mut pick).is_empty());
        assert!(leaf.done());
    }

    #[test]
    fn first_flag_uniform_over_leaves() {
        let l = Arc::new(layout(1024, 896));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for i in 0..10_000 {
            let mut a = CounterActor::new(500, l.clone());
            let out = a.input_set(i, &mut pick_with(&mut rng));
            assert!(a.input_set(i, &mut pick_with(&mut rng)).is_empty());
            *counts.entry(out[0].0).or_default() += 1.0;
        }
        assert_eq!(counts.len(), 8);
        let e = 10_000.0 / 8.0;
        let chi2: f64 = counts.values().map(|c| (c - e).powi(2) / e).sum();
        assert!(chi2 < 18.48);
    }

    #[test]
    fn full_run_n256_all_ones() {
        let l = Arc::new(layout(256, 224));
        let ones: BTreeSet<u32> = (1..=256).collect();
        for s in [Strategy::Fifo, Strategy::RandomDelay, Strategy::MaxChain] {
            let r = run_counter(l.clone(), &ones, s, 3).unwrap();
            assert!(r.all_done);
            assert_eq!(r.audit, Ok(()));
        }
    }

    #[test]
    fn below_threshold_never_done() {
        let l = Arc::new(layout(256, 224));
        let ones: BTreeSet<u32> = (1..=200).collect();
        let r = run_counter(l, &ones, Strategy::RandomDelay, 1).unwrap();
        assert_eq!(r.done_count, 0);
        assert_eq!(r.audit, Ok(()));
    }

    #[test]
    fn audit_catches_mutations() {
        let l = Arc::new(layout(256, 224));
        let ones: BTreeSet<u32> = (1..=256).collect();
        let r = run_counter(l.clone(), &ones, Strategy::Fifo, 2).unwrap();
        let mut ev = r.events.clone();
        // double-count one flag
        let dup = ev.iter().find_map(|e| match e {
            CounterEvent::Absorbed { .. } => Some(e.clone()),
            _ => None,
        });
        ev.push(dup.unwrap());
        assert!(audit_events(&l, &ev, &ones).is_err());
        // claim fewer ones than the root counted
        let fewer: BTreeSet<u32> = (1..=100).collect();
        assert!(audit_events(&l, &r.events, &fewer).is_err());
    }
}
