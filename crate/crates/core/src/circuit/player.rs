//! Per-player state machine for masked circuit evaluation over quorums.
//!
//! A player hosts one [`Role`] per quorum it belongs to and, separately,
//! acts as the owner of its own input. Every node value `ŷ_v = y_v + r_v`
//! is public inside the node's quorum, while the mask `r_v` exists only as a
//! degree-`d` sharing among the quorum members.
//!
//! Masks come from batched verifiable sharings with bivariate polynomials of
//! degree `2d` in `x` and `d` in `y`: member `j` ends up with the row share
//! `S(0, α_j)` (degree `d` in `j`), the column share `S(α_j, 0)` (degree
//! `2d`) and its column polynomial `y ↦ S(α_j, y)`. Evaluating the column at
//! a receiver's abscissa moves a `d`-sharing of the same mask into another
//! quorum without reconstructing it; the receiver interpolates the `2d`
//! points it gets and takes the value at 0.
//!
//! Gates open `ŷ_L + ŷ_R − r_L − r_R + r_v` (ADD, degree `d`) or
//! `(ŷ_L − r_L)(ŷ_R − r_R) + r_v` (MUL, using the degree-`2d` column share
//! of `r_v`), with robust decoding against up to `b` bad members.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{CircuitGraph, GateOp, NodeId, NodeKind};
use crate::agreement::{Acs, Ba, BaMsg, Rbc, RbcMsg};
use crate::codec;
use crate::field::{Field, Polynomial};
use crate::proto::{mix64, Dest, MemberSet, Outgoing, Purpose, SessionId};
use crate::quorum::{seven_eighths, QuorumId, QuorumTable, QuorumTally};
use crate::sharing::{avss_deal, robust_decode, AvssMember, AvssMsg, AvssParams};
use crate::simnet::{Context, Node, Payload, PlayerId};
use crate::tcounter::{CounterActor, CounterLayout, CounterMsg};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MpcError {
    #[error("quorum size {q} cannot tolerate {b} bad members: {why}")]
    Unsupported { q: usize, b: usize, why: String },
    #[error("circuit has {circuit} inputs but the quorum table has {table} players")]
    SizeMismatch { circuit: usize, table: usize },
}

/// Parameters and public structure shared by all players of one run.
#[derive(Debug)]
pub struct MpcSetup<F> {
    pub graph: CircuitGraph,
    pub table: QuorumTable,
    pub layout: Arc<CounterLayout>,
    pub q: usize,
    /// Sharing degree of masks.
    pub d: usize,
    /// Bad members tolerated per quorum.
    pub b: usize,
    pub avss: AvssParams,
    /// Seed of the public randomness beacon (agreement coins, counter
    /// forwarding choices).
    pub beacon: u64,
    pub default_input: F,
    gates_of: Vec<Vec<NodeId>>,
    parent_quorums: Vec<Vec<QuorumId>>,
}

impl<F: Field> MpcSetup<F> {
    pub fn new(
        graph: CircuitGraph,
        table: QuorumTable,
        layout: Arc<CounterLayout>,
        b: usize,
        beacon: u64,
        default_input: F,
    ) -> Result<Self, MpcError> {
        if graph.n != table.n {
            return Err(MpcError::SizeMismatch { circuit: graph.n, table: table.n });
        }
        let q = table.q;
        let d = mask_degree(q, b);
        let avss = AvssParams { q, dx: 2 * d, dy: d, f: b };
        let unsupported = |why: String| MpcError::Unsupported { q, b, why };
        avss.validate().map_err(|e| unsupported(e.to_string()))?;
        if q < seven_eighths(q) + b {
            return Err(unsupported(format!("7/8 acceptance needs {} good members", seven_eighths(q))));
        }
        if vote_threshold(q, b) <= b {
            return Err(unsupported("majority vote threshold does not exceed b".into()));
        }
        let n = graph.n;
        let gates_of = (1..=n as u32).map(|k| graph.gates_of(k)).collect();
        let parent_quorums = graph
            .nodes()
            .iter()
            .map(|v| {
                let set: BTreeSet<QuorumId> = v.parents.iter().map(|&p| graph.node(p).quorum).collect();
                set.into_iter().collect()
            })
            .collect();
        Ok(MpcSetup { graph, table, layout, q, d, b, avss, beacon, default_input, gates_of, parent_quorums })
    }

    pub fn gates_of(&self, k: QuorumId) -> &[NodeId] {
        &self.gates_of[k as usize - 1]
    }

    fn parent_quorums(&self, v: NodeId) -> &[QuorumId] {
        &self.parent_quorums[v as usize - 1]
    }

    fn n(&self) -> u32 {
        self.graph.n as u32
    }

    fn coin_seed(&self, s: SessionId) -> u64 {
        mix64(self.beacon ^ s.digest())
    }
}

/// `d = max(⌈q/4⌉ − 1, 2b, 1)`: at least the usual quorum threshold, and
/// large enough that rows leaked by two quorums' bad members stay below it.
pub fn mask_degree(q: usize, b: usize) -> usize {
    q.div_ceil(4).saturating_sub(1).max(2 * b).max(1)
}

/// Ones needed among `q − b` collected votes for a member to enter the
/// majority agreement with 1.
pub fn vote_threshold(q: usize, b: usize) -> usize {
    (5 * q).div_ceil(8).saturating_sub(2 * b)
}

// ---------------------------------------------------------------------------
// Messages

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body<F> {
    /// Broadcast of the owner's masked input.
    InRbc(RbcMsg<F>),
    /// Sharing of the owner's input mask.
    InAvss(AvssMsg<F>),
    /// The sender's commitment bit for the quorum's input became 1.
    Bit,
    /// Commitment bit as seen once the counter finished.
    Vote(bool),
    MajBa(BaMsg),
    MaskAvss { dealer: u16, msg: AvssMsg<F> },
    MaskBa { inst: u16, msg: BaMsg },
    /// Masked value of `node` and one point of its mask-column polynomial.
    Transfer { node: NodeId, yhat: F, point: F },
    Open { node: NodeId, value: F },
    OutShare(F),
    Counter(CounterMsg),
    Size(u32),
    Output { value: F, size: u32 },
}

/// `from_q`/`to_q` name the sending and receiving roles; 0 stands for the
/// player acting on its own behalf (input owner, output recipient).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MpcMsg<F> {
    pub from_q: QuorumId,
    pub to_q: QuorumId,
    pub body: Body<F>,
}

fn ba_tag(m: &BaMsg) -> u8 {
    match m {
        BaMsg::Coin { .. } => codec::BA_COIN,
        _ => codec::BA_VOTE,
    }
}

impl<F: Field> Payload for MpcMsg<F> {
    fn field_elements(&self) -> usize {
        match &self.body {
            Body::InRbc(_) | Body::OutShare(_) | Body::Open { .. } | Body::Output { .. } => 1,
            Body::InAvss(m) | Body::MaskAvss { msg: m, .. } => m.field_elements(),
            Body::Transfer { .. } => 2,
            _ => 0,
        }
    }

    fn tag(&self) -> u8 {
        match &self.body {
            Body::InRbc(RbcMsg::Init(_)) => codec::RBC_INIT,
            Body::InRbc(RbcMsg::Echo(_)) => codec::RBC_ECHO,
            Body::InRbc(RbcMsg::Ready(_)) => codec::RBC_READY,
            Body::InAvss(m) | Body::MaskAvss { msg: m, .. } => m.tag(),
            Body::Bit => codec::BIT,
            Body::Vote(_) => codec::VOTE,
            Body::MajBa(m) | Body::MaskBa { msg: m, .. } => ba_tag(m),
            Body::Transfer { .. } => codec::GATE_SHARE,
            Body::Open { .. } => codec::OPEN_SHARE,
            Body::OutShare(_) => codec::REC_SHARE,
            Body::Counter(m) => m.tag(),
            Body::Size(_) => codec::SIZE,
            Body::Output { .. } => codec::OUTPUT,
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.tag());
        out.extend_from_slice(&self.from_q.to_le_bytes());
        out.extend_from_slice(&self.to_q.to_le_bytes());
        match &self.body {
            Body::InRbc(RbcMsg::Init(v) | RbcMsg::Echo(v) | RbcMsg::Ready(v)) => codec::put_field(v, out),
            Body::InAvss(m) => m.encode(out),
            Body::MaskAvss { dealer, msg } => {
                out.extend_from_slice(&dealer.to_le_bytes());
                msg.encode(out);
            }
            Body::Bit => {}
            Body::Vote(v) => out.push(*v as u8),
            Body::MajBa(m) => codec::encode_ba(m, out),
            Body::MaskBa { inst, msg } => {
                out.extend_from_slice(&inst.to_le_bytes());
                codec::encode_ba(msg, out);
            }
            Body::Transfer { node, yhat, point } => {
                out.extend_from_slice(&node.to_le_bytes());
                codec::put_field(yhat, out);
                codec::put_field(point, out);
            }
            Body::Open { node, value } => {
                out.extend_from_slice(&node.to_le_bytes());
                codec::put_field(value, out);
            }
            Body::OutShare(v) => codec::put_field(v, out),
            Body::Counter(m) => m.encode(out),
            Body::Size(s) => out.extend_from_slice(&s.to_le_bytes()),
            Body::Output { value, size } => {
                codec::put_field(value, out);
                out.extend_from_slice(&size.to_le_bytes());
            }
        }
    }

    fn tamper(&mut self, rng: &mut ChaCha8Rng) -> bool {
        match &mut self.body {
            Body::InRbc(RbcMsg::Init(v) | RbcMsg::Echo(v) | RbcMsg::Ready(v)) => *v = F::random(rng),
            Body::InAvss(m) | Body::MaskAvss { msg: m, .. } => return m.tamper(rng),
            Body::Vote(v) => *v = !*v,
            Body::MajBa(m) | Body::MaskBa { msg: m, .. } => m.flip(),
            Body::Transfer { yhat, point, .. } => {
                *yhat = F::random(rng);
                *point = F::random(rng);
            }
            Body::Open { value, .. } | Body::OutShare(value) => *value = F::random(rng),
            Body::Size(s) => *s = s.wrapping_add(1 + rng.gen_range(0..8)),
            Body::Output { value, size } => {
                *value = F::random(rng);
                *size = size.wrapping_add(1);
            }
            Body::Bit | Body::Counter(_) => return false,
        }
        true
    }
}

// ---------------------------------------------------------------------------
// Quorum roles

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum To {
    Quorum(QuorumId),
    Member(QuorumId, usize),
    Player(PlayerId),
}

type Out<F> = Vec<(To, Body<F>)>;

fn lift<M, F>(k: QuorumId, out: Outgoing<M>, wrap: impl Fn(M) -> Body<F>) -> Out<F> {
    out.into_iter()
        .map(|(d, m)| {
            let to = match d {
                Dest::All => To::Quorum(k),
                Dest::One(j) => To::Member(k, j),
            };
            (to, wrap(m))
        })
        .collect()
}

/// A member's final view of one circuit node.
#[derive(Clone, Debug)]
pub struct NodeShare<F> {
    pub yhat: F,
    /// Degree-`d` share of the node's mask.
    pub share: F,
    /// Mask column polynomial, used to transfer the sharing.
    col: Polynomial<F>,
}

#[derive(Clone, Debug)]
struct Mask<F> {
    d: F,
    d2: F,
    col: Polynomial<F>,
}

#[derive(Clone, Debug)]
struct MaskGen<F> {
    avss: Vec<AvssMember<F>>,
    proposed: MemberSet,
    acs: Acs,
    masks: Option<Vec<Mask<F>>>,
}

/// Membership of one player in quorum `k` at position `pos`.
#[derive(Clone, Debug)]
pub struct Role<F> {
    k: QuorumId,
    pos: usize,
    // input commitment of input node k
    in_rbc: Rbc<F>,
    in_avss: AvssMember<F>,
    bit: bool,
    bits: MemberSet,
    flagged: bool,
    votes: Vec<Option<bool>>,
    voted: bool,
    maj: Ba,
    in_s: Option<bool>,
    // masks for the quorum's gates
    gates: Vec<NodeId>,
    mask: Option<MaskGen<F>>,
    // gate evaluation
    child_yhat: HashMap<NodeId, QuorumTally<F>>,
    child_points: HashMap<NodeId, Vec<Option<F>>>,
    child_share: HashMap<NodeId, F>,
    open_sent: BTreeSet<NodeId>,
    opens: HashMap<NodeId, Vec<Option<F>>>,
    opened: HashMap<NodeId, F>,
    vals: BTreeMap<NodeId, NodeShare<F>>,
    transferred: BTreeSet<NodeId>,
    // threshold counter
    actor: CounterActor,
    counter_tally: HashMap<(QuorumId, CounterMsg), QuorumTally<()>>,
    picks: u64,
    // |S| aggregation
    size_tally: BTreeMap<QuorumId, QuorumTally<u32>>,
    size_done: bool,
    size_total: Option<u32>,
    // output
    out_share_sent: bool,
    out_shares: Vec<Option<F>>,
    out_value: Option<F>,
    out_tally: QuorumTally<(F, u32)>,
    out_sent: bool,
}

impl<F: Field> Role<F> {
    fn new(s: &MpcSetup<F>, k: QuorumId, pos: usize) -> Self {
        let q = s.q;
        let gates = s.gates_of(k).to_vec();
        let mask = (!gates.is_empty()).then(|| MaskGen {
            avss: (0..q).map(|_| AvssMember::new(s.avss, pos, gates.len())).collect(),
            proposed: MemberSet::new(q),
            acs: Acs::new(q, s.b, s.coin_seed(SessionId::new(k, 0, Purpose::MaskAcs, 0))),
            masks: None,
        });
        let n = s.n();
        let size_tally = [2 * k, 2 * k + 1].into_iter().filter(|&c| c <= n).map(|c| (c, QuorumTally::new(q))).collect();
        Role {
            k,
            pos,
            in_rbc: Rbc::new(q, s.b),
            in_avss: AvssMember::new(s.avss, pos, 1),
            bit: false,
            bits: MemberSet::new(q),
            flagged: false,
            votes: vec![None; q],
            voted: false,
            maj: Ba::new(q, s.b, s.coin_seed(SessionId::new(k, k, Purpose::MajorityBa, 0))),
            in_s: None,
            gates,
            mask,
            child_yhat: HashMap::new(),
            child_points: HashMap::new(),
            child_share: HashMap::new(),
            open_sent: BTreeSet::new(),
            opens: HashMap::new(),
            opened: HashMap::new(),
            vals: BTreeMap::new(),
            transferred: BTreeSet::new(),
            actor: CounterActor::new(k, s.layout.clone()).with_forward_labels(),
            counter_tally: HashMap::new(),
            picks: 0,
            size_tally,
            size_done: false,
            size_total: None,
            out_share_sent: false,
            out_shares: vec![None; q],
            out_value: None,
            out_tally: QuorumTally::new(q),
            out_sent: false,
        }
    }

    pub fn quorum(&self) -> QuorumId {
        self.k
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Whether input `k` was kept, once the majority agreement decided.
    pub fn in_s(&self) -> Option<bool> {
        self.in_s
    }

    pub fn node_share(&self, v: NodeId) -> Option<&NodeShare<F>> {
        self.vals.get(&v)
    }

    pub fn counter_done(&self) -> bool {
        self.actor.done()
    }

    pub fn actor(&self) -> &CounterActor {
        &self.actor
    }

    fn start<R: Rng + ?Sized>(&mut self, s: &MpcSetup<F>, rng: &mut R) -> Out<F> {
        let Some(mg) = &self.mask else { return Vec::new() };
        if mg.avss.is_empty() {
            return Vec::new();
        }
        let secrets: Vec<F> = (0..self.gates.len()).map(|_| F::random(rng)).collect();
        let (_, deal) = avss_deal(&secrets, &s.avss, rng);
        let dealer = self.pos as u16;
        lift(self.k, deal, |msg| Body::MaskAvss { dealer, msg })
    }

    /// Beacon-derived choice for the counter; identical at every member.
    fn pick(beacon: u64, k: QuorumId, salt: u64) -> impl FnMut(usize) -> usize {
        move |len| (mix64(beacon ^ ((k as u64) << 32) ^ salt) % len.max(1) as u64) as usize
    }

    /// `pos` is the sender's position in `from_q` (or `usize::MAX` for the
    /// input owner).
    fn handle(&mut self, s: &MpcSetup<F>, from_q: QuorumId, pos: usize, body: Body<F>) -> Out<F> {
        let k = self.k;
        let mut out = Vec::new();
        match body {
            Body::InRbc(m) => {
                let is_init = matches!(m, RbcMsg::Init(_));
                if is_init != (from_q == 0) {
                    return out;
                }
                out.extend(lift(k, self.in_rbc.handle(pos, m), Body::InRbc));
            }
            Body::InAvss(m) => {
                let is_deal = matches!(m, AvssMsg::ShareRow(_) | AvssMsg::ShareCol(_));
                if is_deal != (from_q == 0) {
                    return out;
                }
                let from = if is_deal { 0 } else { pos };
                out.extend(lift(k, self.in_avss.handle(from, m), Body::InAvss));
            }
            Body::Bit => {
                if from_q == k {
                    self.bits.insert(pos);
                }
            }
            Body::Vote(v) => {
                if from_q == k && self.votes[pos].is_none() {
                    self.votes[pos] = Some(v);
                }
            }
            Body::MajBa(m) => {
                if from_q == k {
                    out.extend(lift(k, self.maj.handle(pos, m), Body::MajBa));
                }
            }
            Body::MaskAvss { dealer, msg } => {
                let Some(mg) = self.mask.as_mut() else { return out };
                let dealer = dealer as usize;
                let is_deal = matches!(msg, AvssMsg::ShareRow(_) | AvssMsg::ShareCol(_));
                if from_q != k || dealer >= s.q || (is_deal && pos != dealer) {
                    return out;
                }
                let d16 = dealer as u16;
                out.extend(lift(k, mg.avss[dealer].handle(pos, msg), |msg| Body::MaskAvss { dealer: d16, msg }));
            }
            Body::MaskBa { inst, msg } => {
                let Some(mg) = self.mask.as_mut() else { return out };
                if from_q == k {
                    let o = mg.acs.handle(pos, inst as usize, msg);
                    out.extend(lift(k, o, |(i, msg)| Body::MaskBa { inst: i as u16, msg }));
                }
            }
            Body::Transfer { node, yhat, point } => {
                if node == 0 || node as usize > s.graph.nodes().len() || s.graph.node(node).quorum != from_q {
                    return out;
                }
                if !s.graph.node(node).parents.iter().any(|&p| s.graph.node(p).quorum == k) {
                    return out;
                }
                let q = s.q;
                self.child_yhat.entry(node).or_insert_with(|| QuorumTally::new(q)).record(pos, yhat);
                let pts = self.child_points.entry(node).or_insert_with(|| vec![None; q]);
                if pts[pos].is_none() {
                    pts[pos] = Some(point);
                    if !self.child_share.contains_key(&node) {
                        if let Some(v) = decode_at_zero(pts, 2 * s.d, s.b) {
                            self.child_share.insert(node, v);
                        }
                    }
                }
            }
            Body::Open { node, value } => {
                if from_q != k || !self.gates.contains(&node) || self.opened.contains_key(&node) {
                    return out;
                }
                let deg = match s.graph.node(node).kind {
                    NodeKind::Gate { op: GateOp::Mul, .. } => 2 * s.d,
                    _ => s.d,
                };
                let q = s.q;
                let pts = self.opens.entry(node).or_insert_with(|| vec![None; q]);
                if pts[pos].is_none() {
                    pts[pos] = Some(value);
                    if let Some(v) = decode_at_zero(pts, deg, s.b) {
                        self.opened.insert(node, v);
                    }
                }
            }
            Body::OutShare(v) => {
                if from_q == k && k == 1 && self.out_shares[pos].is_none() {
                    self.out_shares[pos] = Some(v);
                }
            }
            Body::Counter(m) => {
                if from_q == 0 {
                    return out;
                }
                let q = s.q;
                let accepted = self.counter_tally.entry((from_q, m)).or_insert_with(|| QuorumTally::new(q)).record(pos, ());
                if accepted.is_some() {
                    let salt = self.picks;
                    self.picks += 1;
                    let mut pick = Self::pick(s.beacon, k, salt);
                    let o = self.actor.handle(from_q, m, &mut pick);
                    out.extend(o.into_iter().map(|(to, m)| (To::Quorum(to), Body::Counter(m))));
                }
            }
            Body::Size(v) => {
                if let Some(t) = self.size_tally.get_mut(&from_q) {
                    t.record(pos, v);
                }
            }
            Body::Output { value, size } => {
                if from_q == k / 2 && k > 1 {
                    self.out_tally.record(pos, (value, size));
                }
            }
        }
        self.pump(s, &mut out);
        out
    }

    /// Fires every transition whose preconditions now hold.
    fn pump(&mut self, s: &MpcSetup<F>, out: &mut Out<F>) {
        let (k, q, b, n) = (self.k, s.q, s.b, s.n());
        // input commitment
        if !self.bit && self.in_rbc.delivered().is_some() && self.in_avss.is_complete() {
            self.bit = true;
            out.push((To::Quorum(k), Body::Bit));
        }
        if !self.flagged && self.bits.len() >= (5 * q).div_ceil(8) {
            self.flagged = true;
            let mut pick = Self::pick(s.beacon, k, u64::MAX);
            let o = self.actor.input_set(k, &mut pick);
            out.extend(o.into_iter().map(|(to, m)| (To::Quorum(to), Body::Counter(m))));
        }
        if !self.voted && self.actor.done() {
            self.voted = true;
            out.push((To::Quorum(k), Body::Vote(self.bit)));
        }
        if !self.maj.has_input() && self.voted {
            let got: Vec<bool> = self.votes.iter().flatten().copied().collect();
            if got.len() >= q - b {
                let ones = got.iter().filter(|&&v| v).count();
                let o = self.maj.input(ones >= vote_threshold(q, b));
                out.extend(lift(k, o, Body::MajBa));
            }
        }
        if self.in_s.is_none() {
            match self.maj.decided() {
                Some(false) => {
                    self.in_s = Some(false);
                    let zero = Polynomial::new(vec![F::zero()]);
                    self.vals.insert(k, NodeShare { yhat: s.default_input, share: F::zero(), col: zero });
                }
                Some(true) => {
                    if let (Some(&yhat), Some(cols), Some(sh)) = (self.in_rbc.delivered(), self.in_avss.cols(), self.in_avss.shares()) {
                        self.in_s = Some(true);
                        self.vals.insert(k, NodeShare { yhat, share: sh[0].row0, col: cols[0].clone() });
                    }
                }
                None => {}
            }
        }
        // masks
        if let Some(mg) = self.mask.as_mut() {
            for dealer in 0..q {
                if mg.avss[dealer].is_complete() && mg.proposed.insert(dealer) {
                    let o = mg.acs.proposal_ready(dealer);
                    out.extend(lift(k, o, |(i, msg)| Body::MaskBa { inst: i as u16, msg }));
                }
            }
            if mg.masks.is_none() {
                if let Some(set) = mg.acs.output() {
                    if set.iter().all(|&i| mg.avss[i].is_complete()) {
                        let masks = (0..self.gates.len())
                            .map(|g| {
                                let mut m = Mask { d: F::zero(), d2: F::zero(), col: Polynomial::new(vec![F::zero()]) };
                                for &i in &set {
                                    let a = &mg.avss[i];
                                    let sh = a.shares().expect("complete")[g];
                                    m.d += sh.row0;
                                    m.d2 += sh.col0;
                                    m.col = m.col.add(&a.cols().expect("complete")[g]);
                                }
                                m
                            })
                            .collect();
                        mg.masks = Some(masks);
                    }
                }
            }
        }
        // gates
        for gi in 0..self.gates.len() {
            let v = self.gates[gi];
            let Some(masks) = self.mask.as_ref().and_then(|m| m.masks.as_ref()) else { break };
            let mask = &masks[gi];
            if !self.open_sent.contains(&v) {
                let NodeKind::Gate { op, left, right } = s.graph.node(v).kind else { continue };
                let child = |c: NodeId| -> Option<(F, F)> {
                    let y = *self.child_yhat.get(&c)?.accepted()?;
                    Some((y, *self.child_share.get(&c)?))
                };
                if let (Some((yl, sl)), Some((yr, sr))) = (child(left), child(right)) {
                    let value = match op {
                        GateOp::Add => yl + yr - sl - sr + mask.d,
                        GateOp::Mul => (yl - sl) * (yr - sr) + mask.d2,
                    };
                    self.open_sent.insert(v);
                    out.push((To::Quorum(k), Body::Open { node: v, value }));
                }
            }
            if !self.vals.contains_key(&v) {
                if let Some(&yhat) = self.opened.get(&v) {
                    self.vals.insert(v, NodeShare { yhat, share: mask.d, col: mask.col.clone() });
                }
            }
        }
        // transfers to parent quorums
        let ready: Vec<NodeId> = self.vals.keys().filter(|v| !self.transferred.contains(v)).copied().collect();
        for v in ready {
            self.transferred.insert(v);
            let ns = &self.vals[&v];
            for &pq in s.parent_quorums(v) {
                for j in 0..q {
                    let point = ns.col.eval(F::abscissa(j));
                    out.push((To::Member(pq, j), Body::Transfer { node: v, yhat: ns.yhat, point }));
                }
            }
        }
        // |S|
        if !self.size_done {
            if let Some(in_s) = self.in_s {
                if self.size_tally.values().all(|t| t.accepted().is_some()) {
                    self.size_done = true;
                    let total = in_s as u32 + self.size_tally.values().map(|t| *t.accepted().unwrap()).sum::<u32>();
                    if k == 1 {
                        self.size_total = Some(total);
                    } else {
                        out.push((To::Quorum(k / 2), Body::Size(total)));
                    }
                }
            }
        }
        // output reconstruction at quorum 1
        if k == 1 {
            let o = s.graph.output();
            if !self.out_share_sent {
                if let Some(ns) = self.vals.get(&o) {
                    self.out_share_sent = true;
                    out.push((To::Quorum(1), Body::OutShare(ns.share)));
                }
            }
            if self.out_value.is_none() {
                if let Some(ns) = self.vals.get(&o) {
                    if let Some(r) = decode_at_zero(&self.out_shares, s.d, b) {
                        self.out_value = Some(ns.yhat - r);
                    }
                }
            }
        }
        // output propagation
        if !self.out_sent {
            let result = if k == 1 {
                self.out_value.zip(self.size_total)
            } else {
                self.out_tally.accepted().copied()
            };
            if let Some((value, size)) = result {
                self.out_sent = true;
                for c in [2 * k, 2 * k + 1] {
                    if c <= n {
                        out.push((To::Quorum(c), Body::Output { value, size }));
                    }
                }
                out.push((To::Player(k - 1), Body::Output { value, size }));
            }
        }
    }
}

/// Robustly decodes the points received so far (indexed by position) as a
/// polynomial of degree `deg` with at most `b` wrong points, and returns its
/// value at 0.
fn decode_at_zero<F: Field>(pts: &[Option<F>], deg: usize, b: usize) -> Option<F> {
    let need = deg + 1 + b;
    let got: Vec<(F, F)> = pts.iter().enumerate().filter_map(|(j, v)| v.map(|v| (F::abscissa(j), v))).collect();
    if got.len() < need {
        return None;
    }
    robust_decode(&got, deg, need).ok().map(|p| p.constant_term())
}

// ---------------------------------------------------------------------------
// Players

pub struct MpcPlayer<F> {
    setup: Arc<MpcSetup<F>>,
    me: PlayerId,
    input: F,
    roles: BTreeMap<QuorumId, Role<F>>,
    out_tally: QuorumTally<(F, u32)>,
    /// Output value and `|S|`, once accepted from this player's quorum.
    pub output: Option<(F, u32)>,
    /// The mask this player chose for its own input.
    pub input_mask: Option<F>,
}

impl<F: Field> MpcPlayer<F> {
    pub fn new(setup: Arc<MpcSetup<F>>, me: PlayerId, input: F) -> Self {
        let roles = setup
            .table
            .quorums_of(me)
            .iter()
            .map(|&k| (k, Role::new(&setup, k, setup.table.position(k, me).expect("member"))))
            .collect();
        let out_tally = QuorumTally::new(setup.q);
        MpcPlayer { setup, me, input, roles, out_tally, output: None, input_mask: None }
    }

    pub fn roles(&self) -> impl Iterator<Item = &Role<F>> {
        self.roles.values()
    }

    pub fn role(&self, k: QuorumId) -> Option<&Role<F>> {
        self.roles.get(&k)
    }

    fn emit(&self, from_q: QuorumId, out: Out<F>, ctx: &mut Context<'_, MpcMsg<F>>) {
        let table = &self.setup.table;
        for (to, body) in out {
            match to {
                To::Quorum(k) => {
                    for &p in table.members(k) {
                        ctx.send(p, MpcMsg { from_q, to_q: k, body: body.clone() });
                    }
                }
                To::Member(k, j) => {
                    if let Some(&p) = table.members(k).get(j) {
                        ctx.send(p, MpcMsg { from_q, to_q: k, body });
                    }
                }
                To::Player(p) => ctx.send(p, MpcMsg { from_q, to_q: 0, body }),
            }
        }
    }
}

impl<F: Field> Node for MpcPlayer<F> {
    type Msg = MpcMsg<F>;

    fn start(&mut self, ctx: &mut Context<'_, MpcMsg<F>>) {
        let s = self.setup.clone();
        // Commit the own input to quorum me + 1.
        let k = self.me + 1;
        let r = F::random(ctx.rng());
        self.input_mask = Some(r);
        let (_, deal) = avss_deal(&[r], &s.avss, ctx.rng());
        let mut out = lift(k, deal, Body::InAvss);
        out.extend(lift(k, Rbc::broadcast(self.input + r), Body::InRbc));
        self.emit(0, out, ctx);
        let ks: Vec<QuorumId> = self.roles.keys().copied().collect();
        for k in ks {
            let role = self.roles.get_mut(&k).expect("role");
            let out = role.start(&s, ctx.rng());
            self.emit(k, out, ctx);
        }
    }

    fn handle(&mut self, from: PlayerId, msg: MpcMsg<F>, ctx: &mut Context<'_, MpcMsg<F>>) {
        let s = self.setup.clone();
        let MpcMsg { from_q, to_q, body } = msg;
        if to_q == 0 {
            if let Body::Output { value, size } = body {
                if from_q == self.me + 1 {
                    if let Some(pos) = s.table.position(from_q, from) {
                        if let Some(v) = self.out_tally.record(pos, (value, size)) {
                            self.output = Some(v);
                        }
                    }
                }
            }
            return;
        }
        let pos = if from_q == 0 {
            if from + 1 != to_q {
                return;
            }
            usize::MAX
        } else {
            match s.table.position(from_q, from) {
                Some(p) => p,
                None => return,
            }
        };
        let Some(role) = self.roles.get_mut(&to_q) else { return };
        let out = role.handle(&s, from_q, pos, body);
        self.emit(to_q, out, ctx);
    }
}
