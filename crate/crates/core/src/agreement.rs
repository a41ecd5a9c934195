//! Reliable broadcast and randomized binary Byzantine agreement at quorum
//! scale, plus agreement on a common subset built from them.
//!
//! All thresholds are in terms of `q` participants of which at most `f` are
//! faulty, with `q ≥ 3f + 1`.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::proto::{mix64, Dest, MemberSet, Outgoing};

// ---------------------------------------------------------------------------
// Reliable broadcast

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RbcMsg<V> {
    Init(V),
    Echo(V),
    Ready(V),
}

/// Bracha reliable broadcast, participant side. The sender may or may not be
/// a participant; the host only passes `Init` messages that really come from
/// the designated sender.
#[derive(Clone, Debug)]
pub struct Rbc<V> {
    q: usize,
    f: usize,
    echoed: bool,
    ready_sent: bool,
    echo_from: MemberSet,
    ready_from: MemberSet,
    echo_counts: HashMap<V, usize>,
    ready_counts: HashMap<V, usize>,
    delivered: Option<V>,
}

impl<V: Clone + Eq + Hash> Rbc<V> {
    pub fn new(q: usize, f: usize) -> Self {
        Rbc {
            q,
            f,
            echoed: false,
            ready_sent: false,
            echo_from: MemberSet::new(q),
            ready_from: MemberSet::new(q),
            echo_counts: HashMap::new(),
            ready_counts: HashMap::new(),
            delivered: None,
        }
    }

    /// Echo threshold `⌈(q + f + 1) / 2⌉`.
    pub fn echo_threshold(&self) -> usize {
        (self.q + self.f + 1).div_ceil(2)
    }

    pub fn delivered(&self) -> Option<&V> {
        self.delivered.as_ref()
    }

    /// Sender side: the initial message to every participant.
    pub fn broadcast(value: V) -> Outgoing<RbcMsg<V>> {
        vec![(Dest::All, RbcMsg::Init(value))]
    }

    /// `from` is the sender's participant position, or `usize::MAX` for an
    /// `Init` from an external sender.
    pub fn handle(&mut self, from: usize, msg: RbcMsg<V>) -> Outgoing<RbcMsg<V>> {
        let mut out = Vec::new();
        match msg {
            RbcMsg::Init(v) => {
                if !self.echoed {
                    self.echoed = true;
                    out.push((Dest::All, RbcMsg::Echo(v)));
                }
            }
            RbcMsg::Echo(v) => {
                if from < self.q && self.echo_from.insert(from) {
                    let c = self.echo_counts.entry(v.clone()).or_insert(0);
                    *c += 1;
                    if *c >= self.echo_threshold() && !self.ready_sent {
                        self.ready_sent = true;
                        out.push((Dest::All, RbcMsg::Ready(v)));
                    }
                }
            }
            RbcMsg::Ready(v) => {
                if from < self.q && self.ready_from.insert(from) {
                    let c = self.ready_counts.entry(v.clone()).or_insert(0);
                    *c += 1;
                    let c = *c;
                    if c > self.f && !self.ready_sent {
                        self.ready_sent = true;
                        out.push((Dest::All, RbcMsg::Ready(v.clone())));
                    }
                    if c > 2 * self.f && self.delivered.is_none() {
                        self.delivered = Some(v);
                    }
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Binary agreement

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaMsg {
    BVal { round: u32, bit: bool },
    Aux { round: u32, bit: bool },
    /// Coin share: the round's beacon bit is revealed once `f + 1` arrive.
    Coin { round: u32 },
    Decide { bit: bool },
}

impl BaMsg {
    pub fn flip(&mut self) {
        match self {
            BaMsg::BVal { bit, .. } | BaMsg::Aux { bit, .. } | BaMsg::Decide { bit } => *bit = !*bit,
            BaMsg::Coin { round } => *round = round.wrapping_add(1),
        }
    }
}

#[derive(Clone, Debug)]
struct BaRound {
    bval_from: [MemberSet; 2],
    bval_sent: [bool; 2],
    bin_values: [bool; 2],
    first_bin: Option<bool>,
    aux_from: Vec<Option<bool>>,
    aux_sent: bool,
    vals: Option<[bool; 2]>,
    coin_from: MemberSet,
    coin_sent: bool,
}

impl BaRound {
    fn new(q: usize) -> Self {
        BaRound {
            bval_from: [MemberSet::new(q), MemberSet::new(q)],
            bval_sent: [false; 2],
            bin_values: [false; 2],
            first_bin: None,
            aux_from: vec![None; q],
            aux_sent: false,
            vals: None,
            coin_from: MemberSet::new(q),
            coin_sent: false,
        }
    }
}

/// Randomized binary agreement (binary-value broadcast rounds with a common
/// coin) with an explicit decide/terminate phase.
///
/// The common coin is an idealised beacon: the bit for round `r` is a hash
/// of `(coin_seed, r)`, and a participant may only read it after `f + 1`
/// participants have released their coin share for that round, i.e. after
/// at least one good participant finished the round's vote exchange.
#[derive(Clone, Debug)]
pub struct Ba {
    q: usize,
    f: usize,
    coin_seed: u64,
    est: Option<bool>,
    round: u32,
    rounds: BTreeMap<u32, BaRound>,
    decided: Option<bool>,
    decided_round: Option<u32>,
    decide_from: [MemberSet; 2],
    decide_sent: bool,
    terminated: bool,
}

impl Ba {
    pub fn new(q: usize, f: usize, coin_seed: u64) -> Self {
        Ba {
            q,
            f,
            coin_seed,
            est: None,
            round: 1,
            rounds: BTreeMap::new(),
            decided: None,
            decided_round: None,
            decide_from: [MemberSet::new(q), MemberSet::new(q)],
            decide_sent: false,
            terminated: false,
        }
    }

    pub fn has_input(&self) -> bool {
        self.est.is_some()
    }

    pub fn decided(&self) -> Option<bool> {
        self.decided
    }

    /// Round in which this participant decided.
    pub fn decision_round(&self) -> Option<u32> {
        self.decided_round
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn coin(&self, round: u32) -> bool {
        mix64(self.coin_seed ^ (round as u64).wrapping_mul(0xA24B_AED4_963E_E407)) & 1 == 1
    }

    fn round_mut(&mut self, r: u32) -> &mut BaRound {
        let q = self.q;
        self.rounds.entry(r).or_insert_with(|| BaRound::new(q))
    }

    /// Supplies this participant's input bit. Later calls are ignored.
    pub fn input(&mut self, bit: bool) -> Outgoing<BaMsg> {
        let mut out = Vec::new();
        if self.est.is_some() || self.terminated {
            return out;
        }
        self.est = Some(bit);
        let r = self.round;
        self.send_bval(r, bit, &mut out);
        self.progress(&mut out);
        out
    }

    fn send_bval(&mut self, r: u32, bit: bool, out: &mut Outgoing<BaMsg>) {
        let rd = self.round_mut(r);
        if !rd.bval_sent[bit as usize] {
            rd.bval_sent[bit as usize] = true;
            out.push((Dest::All, BaMsg::BVal { round: r, bit }));
        }
    }

    pub fn handle(&mut self, from: usize, msg: BaMsg) -> Outgoing<BaMsg> {
        let mut out = Vec::new();
        if from >= self.q || self.terminated {
            return out;
        }
        match msg {
            BaMsg::BVal { round, bit } => {
                let (f, b) = (self.f, bit as usize);
                let rd = self.round_mut(round);
                if rd.bval_from[b].insert(from) {
                    let c = rd.bval_from[b].len();
                    if c > 2 * f && !rd.bin_values[b] {
                        rd.bin_values[b] = true;
                        rd.first_bin.get_or_insert(bit);
                    }
                    if c > f {
                        // f + 1 votes include a good input: adopt it if we have none
                        if self.est.is_none() && round == self.round {
                            self.est = Some(bit);
                        }
                        if self.est.is_some() {
                            self.send_bval(round, bit, &mut out);
                        }
                    }
                }
            }
            BaMsg::Aux { round, bit } => {
                let rd = self.round_mut(round);
                if rd.aux_from[from].is_none() {
                    rd.aux_from[from] = Some(bit);
                }
            }
            BaMsg::Coin { round } => {
                self.round_mut(round).coin_from.insert(from);
            }
            BaMsg::Decide { bit } => {
                let b = bit as usize;
                if self.decide_from[b].insert(from) {
                    let c = self.decide_from[b].len();
                    if c > self.f && !self.decide_sent {
                        self.decide_sent = true;
                        out.push((Dest::All, BaMsg::Decide { bit }));
                    }
                    if c > 2 * self.f {
                        if self.decided.is_none() {
                            self.decided = Some(bit);
                            self.decided_round = Some(self.round);
                        }
                        self.terminated = true;
                        return out;
                    }
                }
            }
        }
        self.progress(&mut out);
        out
    }

    fn progress(&mut self, out: &mut Outgoing<BaMsg>) {
        while !self.terminated && self.est.is_some() {
            let (q, f, r) = (self.q, self.f, self.round);
            // catch up on amplification for values seen before our input
            for bit in [false, true] {
                let c = self.round_mut(r).bval_from[bit as usize].len();
                if c > f {
                    self.send_bval(r, bit, out);
                }
            }
            let rd = self.round_mut(r);
            if let Some(w) = rd.first_bin {
                if !rd.aux_sent {
                    rd.aux_sent = true;
                    out.push((Dest::All, BaMsg::Aux { round: r, bit: w }));
                }
            }
            if rd.vals.is_none() {
                let mut vals = [false; 2];
                let mut count = 0;
                for b in rd.aux_from.iter().flatten() {
                    if rd.bin_values[*b as usize] {
                        vals[*b as usize] = true;
                        count += 1;
                    }
                }
                if count >= q - f {
                    rd.vals = Some(vals);
                }
            }
            let Some(vals) = rd.vals else { return };
            if !rd.coin_sent {
                rd.coin_sent = true;
                out.push((Dest::All, BaMsg::Coin { round: r }));
            }
            if rd.coin_from.len() <= f {
                return;
            }
            let coin = self.coin(r);
            let next = if vals[0] != vals[1] {
                let v = vals[1];
                if v == coin && self.decided.is_none() {
                    self.decided = Some(v);
                    self.decided_round = Some(r);
                    if !self.decide_sent {
                        self.decide_sent = true;
                        out.push((Dest::All, BaMsg::Decide { bit: v }));
                    }
                }
                v
            } else {
                coin
            };
            self.est = Some(next);
            self.round += 1;
            let nr = self.round;
            self.send_bval(nr, next, out);
        }
    }
}

// ---------------------------------------------------------------------------
// Agreement on a common subset

/// Agreement on which of `q` proposals (e.g. verifiable sharings) to use:
/// one binary agreement per proposer. A participant votes 1 for a proposer
/// once it has locally seen that proposal complete; after `q − f`
/// agreements decided 1 it votes 0 on the rest.
#[derive(Clone, Debug)]
pub struct Acs {
    f: usize,
    bas: Vec<Ba>,
}

impl Acs {
    pub fn new(q: usize, f: usize, coin_seed: u64) -> Self {
        let bas = (0..q).map(|k| Ba::new(q, f, mix64(coin_seed ^ (k as u64 + 1)))).collect();
        Acs { f, bas }
    }

    pub fn instances(&self) -> usize {
        self.bas.len()
    }

    pub fn ba(&self, k: usize) -> &Ba {
        &self.bas[k]
    }

    /// Proposal `k` completed locally.
    pub fn proposal_ready(&mut self, k: usize) -> Outgoing<(u32, BaMsg)> {
        let out = self.bas[k].input(true);
        let mut all = tag(k, out);
        self.after_progress(&mut all);
        all
    }

    pub fn handle(&mut self, from: usize, k: usize, msg: BaMsg) -> Outgoing<(u32, BaMsg)> {
        if k >= self.bas.len() {
            return Vec::new();
        }
        let out = self.bas[k].handle(from, msg);
        let mut all = tag(k, out);
        self.after_progress(&mut all);
        all
    }

    fn after_progress(&mut self, out: &mut Outgoing<(u32, BaMsg)>) {
        let ones = self.bas.iter().filter(|b| b.decided() == Some(true)).count();
        if ones + self.f >= self.bas.len() {
            for k in 0..self.bas.len() {
                if !self.bas[k].has_input() {
                    let o = self.bas[k].input(false);
                    out.extend(tag(k, o));
                }
            }
        }
    }

    /// The agreed subset, once every instance has decided.
    pub fn output(&self) -> Option<Vec<usize>> {
        if self.bas.iter().all(|b| b.decided().is_some()) {
            Some((0..self.bas.len()).filter(|&k| self.bas[k].decided() == Some(true)).collect())
        } else {
            None
        }
    }
}

fn tag(k: usize, out: Outgoing<BaMsg>) -> Outgoing<(u32, BaMsg)> {
    out.into_iter().map(|(d, m)| (d, (k as u32, m))).collect()
}

// ---------------------------------------------------------------------------
// Standalone runners on the simulator

pub mod standalone {
    //! Single-instance nodes used by tests, the acceptance suite and the
    //! harness to exercise the agreement primitives on the simulator.

    use std::collections::BTreeMap;

    use super::*;
    use crate::codec;
    use crate::simnet::{Behavior, Context, Node, Payload, PlayerId, SimError, Simulation, Strategy};

    #[derive(Clone, Debug)]
    pub enum StandaloneMsg {
        Rbc(RbcMsg<Vec<u64>>),
        Ba(BaMsg),
    }

    impl Payload for StandaloneMsg {
        fn field_elements(&self) -> usize {
            match self {
                StandaloneMsg::Rbc(RbcMsg::Init(v) | RbcMsg::Echo(v) | RbcMsg::Ready(v)) => v.len(),
                StandaloneMsg::Ba(_) => 0,
            }
        }
        fn tag(&self) -> u8 {
            match self {
                StandaloneMsg::Rbc(RbcMsg::Init(_)) => codec::RBC_INIT,
                StandaloneMsg::Rbc(RbcMsg::Echo(_)) => codec::RBC_ECHO,
                StandaloneMsg::Rbc(RbcMsg::Ready(_)) => codec::RBC_READY,
                StandaloneMsg::Ba(BaMsg::Coin { .. }) => codec::BA_COIN,
                StandaloneMsg::Ba(_) => codec::BA_VOTE,
            }
        }
        fn encode(&self, out: &mut Vec<u8>) {
            out.push(self.tag());
            match self {
                StandaloneMsg::Rbc(RbcMsg::Init(v) | RbcMsg::Echo(v) | RbcMsg::Ready(v)) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                StandaloneMsg::Ba(m) => codec::encode_ba(m, out),
            }
        }
        fn tamper(&mut self, rng: &mut ChaCha8Rng) -> bool {
            match self {
                StandaloneMsg::Rbc(RbcMsg::Init(v) | RbcMsg::Echo(v) | RbcMsg::Ready(v)) => {
                    for x in v.iter_mut() {
                        *x = rng.gen();
                    }
                }
                StandaloneMsg::Ba(m) => m.flip(),
            }
            true
        }
    }

    pub struct RbcNode {
        pub sender: PlayerId,
        pub value: Option<Vec<u64>>,
        pub rbc: Rbc<Vec<u64>>,
        /// Sender-side equivocation: value for odd receivers.
        pub split_value: Option<Vec<u64>>,
    }

    impl Node for RbcNode {
        type Msg = StandaloneMsg;
        fn start(&mut self, ctx: &mut Context<'_, StandaloneMsg>) {
            if ctx.me() == self.sender {
                if let Some(v) = self.value.clone() {
                    for p in 0..ctx.n() as PlayerId {
                        let val = match &self.split_value {
                            Some(s) if p % 2 == 1 => s.clone(),
                            _ => v.clone(),
                        };
                        ctx.send(p, StandaloneMsg::Rbc(RbcMsg::Init(val)));
                    }
                }
            }
        }
        fn handle(&mut self, from: PlayerId, msg: StandaloneMsg, ctx: &mut Context<'_, StandaloneMsg>) {
            let StandaloneMsg::Rbc(m) = msg else { return };
            if matches!(m, RbcMsg::Init(_)) && from != self.sender {
                return;
            }
            for (d, o) in self.rbc.handle(from as usize, m) {
                send(ctx, d, StandaloneMsg::Rbc(o));
            }
        }
    }

    fn send(ctx: &mut Context<'_, StandaloneMsg>, d: Dest, m: StandaloneMsg) {
        match d {
            Dest::All => {
                for p in 0..ctx.n() as PlayerId {
                    ctx.send(p, m.clone());
                }
            }
            Dest::One(i) => ctx.send(i as PlayerId, m),
        }
    }

    /// Runs one reliable broadcast among `q` players; returns each player's
    /// delivered value (None if nothing delivered).
    pub fn run_rbc(
        q: usize,
        f: usize,
        sender: PlayerId,
        value: Vec<u64>,
        split_value: Option<Vec<u64>>,
        bad: &BTreeMap<PlayerId, Behavior>,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Vec<Option<Vec<u64>>>, SimError> {
        let nodes = (0..q)
            .map(|_| RbcNode { sender, value: Some(value.clone()), rbc: Rbc::new(q, f), split_value: split_value.clone() })
            .collect();
        let mut sim = Simulation::spawn(nodes, bad, f, strategy, seed)?.with_step_budget(10_000_000);
        sim.run_to_quiescence()?;
        Ok(sim.nodes().iter().map(|n| n.rbc.delivered().cloned()).collect())
    }

    pub struct BaNode {
        pub input: bool,
        pub ba: Ba,
    }

    impl Node for BaNode {
        type Msg = StandaloneMsg;
        fn start(&mut self, ctx: &mut Context<'_, StandaloneMsg>) {
            for (d, o) in self.ba.input(self.input) {
                send(ctx, d, StandaloneMsg::Ba(o));
            }
        }
        fn handle(&mut self, from: PlayerId, msg: StandaloneMsg, ctx: &mut Context<'_, StandaloneMsg>) {
            let StandaloneMsg::Ba(m) = msg else { return };
            for (d, o) in self.ba.handle(from as usize, m) {
                send(ctx, d, StandaloneMsg::Ba(o));
            }
        }
    }

    #[derive(Clone, Debug)]
    pub struct BaReport {
        /// Decision of every good player (None = did not decide).
        pub decisions: Vec<Option<bool>>,
        pub good_inputs: Vec<bool>,
        pub max_round: u32,
    }

    impl BaReport {
        pub fn agreement(&self) -> bool {
            let d: Vec<_> = self.decisions.iter().flatten().collect();
            d.len() == self.decisions.len() && d.windows(2).all(|w| w[0] == w[1])
        }
        pub fn validity(&self) -> bool {
            self.decisions.iter().flatten().all(|d| self.good_inputs.contains(d))
        }
    }

    pub fn run_ba(
        inputs: &[bool],
        f: usize,
        bad: &BTreeMap<PlayerId, Behavior>,
        strategy: Strategy,
        seed: u64,
    ) -> Result<BaReport, SimError> {
        let q = inputs.len();
        let coin_seed = mix64(seed ^ 0xc011);
        let nodes = inputs.iter().map(|&b| BaNode { input: b, ba: Ba::new(q, f, coin_seed) }).collect();
        let mut sim = Simulation::spawn(nodes, bad, f, strategy, seed)?.with_step_budget(50_000_000);
        sim.run_until(|s| (0..q as PlayerId).filter(|&p| s.is_good(p)).all(|p| s.node(p).ba.terminated()))?;
        let good: Vec<PlayerId> = (0..q as PlayerId).filter(|&p| sim.is_good(p)).collect();
        Ok(BaReport {
            decisions: good.iter().map(|&p| sim.node(p).ba.decided()).collect(),
            good_inputs: good.iter().map(|&p| inputs[p as usize]).collect(),
            max_round: good.iter().filter_map(|&p| sim.node(p).ba.decision_round()).max().unwrap_or(0),
        })
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::standalone::*;
    use super::*;
    use crate::simnet::{Behavior, Strategy};

    fn strategies() -> Vec<Strategy> {
        vec![Strategy::Fifo, Strategy::RandomDelay, Strategy::MaxChain]
    }

    #[test]
    fn rbc_honest_sender_delivers_everywhere() {
        let out = run_rbc(16, 3, 0, vec![42], None, &BTreeMap::new(), Strategy::RandomDelay, 1).unwrap();
        assert!(out.iter().all(|v| v.as_deref() == Some(&[42][..])));
    }

    #[test]
    fn rbc_thresholds() {
        let r: Rbc<u8> = Rbc::new(16, 3);
        assert_eq!(r.echo_threshold(), 10);
    }

    #[test]
    fn rbc_equivocating_sender_all_or_nothing() {
        for seed in 0..30 {
            for s in strategies() {
                let out = run_rbc(16, 3, 0, vec![42], Some(vec![17]), &BTreeMap::new(), s, seed).unwrap();
                let delivered: Vec<_> = out.iter().flatten().collect();
                // 8 echoes per value never reach the echo threshold of 10
                assert!(delivered.is_empty());
            }
        }
    }

    #[test]
    fn rbc_crashed_sender_delivers_nothing() {
        let bad = BTreeMap::from([(0, Behavior::Crash)]);
        let out = run_rbc(16, 3, 0, vec![42], None, &bad, Strategy::Fifo, 0).unwrap();
        assert!(out.iter().all(Option::is_none));
    }

    #[test]
    fn rbc_consistency_with_bad_echoers() {
        let bad: BTreeMap<_, _> = [(1, Behavior::Equivocate), (2, Behavior::WrongShare), (3, Behavior::Crash)].into();
        for seed in 0..20 {
            let out = run_rbc(16, 3, 0, vec![5, 6], None, &bad, Strategy::RandomDelay, seed).unwrap();
            for (p, v) in out.iter().enumerate() {
                if !bad.contains_key(&(p as u32)) {
                    assert_eq!(v.as_deref(), Some(&[5, 6][..]));
                }
            }
        }
    }

    #[test]
    fn ba_unanimous_inputs() {
        for bit in [false, true] {
            for s in strategies() {
                let r = run_ba(&[bit; 16], 3, &BTreeMap::new(), s, 4).unwrap();
                assert!(r.agreement());
                assert_eq!(r.decisions[0], Some(bit));
            }
        }
    }

    #[test]
    fn ba_mixed_inputs_with_bad_players() {
        let bad: BTreeMap<_, _> = [(0, Behavior::Equivocate), (5, Behavior::WrongShare), (9, Behavior::Crash)].into();
        for seed in 0..60 {
            let inputs: Vec<bool> = (0..16).map(|i| (i * 7 + seed) % 3 == 0).collect();
            for s in strategies() {
                let r = run_ba(&inputs, 3, &bad, s, seed as u64).unwrap();
                assert!(r.agreement(), "seed {seed}");
                assert!(r.validity(), "seed {seed}");
            }
        }
    }

    #[test]
    fn acs_includes_all_honest_proposals() {
        // simulate locally: all 4 proposals ready everywhere, no faults
        let q = 4;
        let mut parts: Vec<Acs> = (0..q).map(|_| Acs::new(q, 1, 99)).collect();
        let mut queue: Vec<(usize, usize, (u32, BaMsg))> = Vec::new();
        for (i, acs) in parts.iter_mut().enumerate() {
            for k in 0..q {
                for (d, m) in acs.proposal_ready(k) {
                    assert_eq!(d, Dest::All);
                    for to in 0..q {
                        queue.push((i, to, m));
                    }
                }
            }
        }
        while let Some((from, to, (k, m))) = queue.pop() {
            for (_, m2) in parts[to].handle(from, k as usize, m) {
                for t in 0..q {
                    queue.push((to, t, m2));
                }
            }
        }
        for acs in &parts {
            assert_eq!(acs.output(), Some(vec![0, 1, 2, 3]));
        }
    }
}
