//! Deterministic discrete-event asynchronous network.
//!
//! Players are sans-IO state machines ([`Node`]). The simulation keeps every
//! in-flight message in a scheduler pool and delivers exactly one per
//! [`Simulation::step`]. Latency is the causal chain depth of delivered
//! messages: a message sent while handling a message of depth `k` has depth
//! `k + 1`; sends made outside any handler have depth 0.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt::Debug;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::field_ops;

pub type PlayerId = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("{bad} bad players exceed the bound of {bound}")]
    BadFractionExceeded { bad: usize, bound: usize },
    #[error("step budget of {0} exhausted before the predicate held")]
    NonTermination(u64),
    #[error("player {0} out of range")]
    UnknownPlayer(PlayerId),
}

/// A message body that the network can meter, trace and tamper with.
pub trait Payload: Clone + Debug {
    /// Number of field elements carried, for communication metrics.
    fn field_elements(&self) -> usize;
    /// Wire tag byte (see `docs/payload-codec.md`).
    fn tag(&self) -> u8;
    fn encode(&self, out: &mut Vec<u8>);
    /// Replace carried share material with garbage. Returns false if the
    /// message carries nothing worth corrupting.
    fn tamper(&mut self, rng: &mut ChaCha8Rng) -> bool;
}

/// Per-player protocol state machine.
pub trait Node {
    type Msg: Payload;

    fn start(&mut self, _ctx: &mut Context<'_, Self::Msg>) {}

    fn handle(&mut self, from: PlayerId, msg: Self::Msg, ctx: &mut Context<'_, Self::Msg>);
}

/// Handler-side view of the network: the player's identity, its private
/// randomness and an outbox.
pub struct Context<'a, M> {
    me: PlayerId,
    n: usize,
    rng: &'a mut ChaCha8Rng,
    outbox: Vec<(PlayerId, M)>,
}

impl<'a, M> Context<'a, M> {
    pub fn me(&self) -> PlayerId {
        self.me
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn send(&mut self, to: PlayerId, msg: M) {
        self.outbox.push((to, msg));
    }

    pub fn send_all<I: IntoIterator<Item = PlayerId>>(&mut self, to: I, msg: M)
    where
        M: Clone,
    {
        for p in to {
            self.outbox.push((p, msg.clone()));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Behavior {
    Honest,
    /// Never sends anything.
    Crash,
    /// Sends tampered payloads to roughly half of its receivers and honest
    /// ones to the rest, with different garbage per receiver.
    Equivocate,
    /// Tampers with every share-bearing payload.
    WrongShare,
    /// Follows the protocol; the scheduler delivers its messages first.
    Colluding,
}

impl Behavior {
    pub fn parse(s: &str) -> Option<Behavior> {
        match s.to_ascii_lowercase().as_str() {
            "honest" | "none" => Some(Behavior::Honest),
            "crash" => Some(Behavior::Crash),
            "equivocate" => Some(Behavior::Equivocate),
            "wrongshare" | "wrong_share" | "wrong-share" => Some(Behavior::WrongShare),
            "colluding" => Some(Behavior::Colluding),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Fifo,
    RandomDelay,
    /// Always deliver the deepest in-flight message.
    MaxChain,
    /// Messages from or to these players wait until nothing else is in flight.
    TargetedStall(BTreeSet<PlayerId>),
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Strategy> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "fifo" => Some(Strategy::Fifo),
            "randomdelay" | "random" | "random_delay" => Some(Strategy::RandomDelay),
            "maxchain" | "max_chain" => Some(Strategy::MaxChain),
            _ => {
                let rest = lower.strip_prefix("stall:")?;
                let set = rest
                    .split(',')
                    .filter(|t| !t.is_empty())
                    .map(|t| t.trim().parse().ok())
                    .collect::<Option<BTreeSet<PlayerId>>>()?;
                Some(Strategy::TargetedStall(set))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Strategy::Fifo => "fifo".into(),
            Strategy::RandomDelay => "random".into(),
            Strategy::MaxChain => "maxchain".into(),
            Strategy::TargetedStall(s) => {
                format!("stall:{}", s.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Envelope<M> {
    pub seq: u64,
    pub from: PlayerId,
    pub to: PlayerId,
    pub depth: u32,
    pub msg: M,
}

struct DepthKey<M>(Envelope<M>);

impl<M> PartialEq for DepthKey<M> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}
impl<M> Eq for DepthKey<M> {}
impl<M> PartialOrd for DepthKey<M> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for DepthKey<M> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // deepest first, oldest first among equals
        self.0.depth.cmp(&other.0.depth).then(other.0.seq.cmp(&self.0.seq))
    }
}

enum Pool<M> {
    Fifo(VecDeque<Envelope<M>>),
    Random(Vec<Envelope<M>>),
    Deepest(BinaryHeap<DepthKey<M>>),
}

impl<M> Pool<M> {
    fn for_strategy(s: &Strategy) -> Self {
        match s {
            Strategy::Fifo => Pool::Fifo(VecDeque::new()),
            Strategy::RandomDelay | Strategy::TargetedStall(_) => Pool::Random(Vec::new()),
            Strategy::MaxChain => Pool::Deepest(BinaryHeap::new()),
        }
    }

    fn len(&self) -> usize {
        match self {
            Pool::Fifo(q) => q.len(),
            Pool::Random(v) => v.len(),
            Pool::Deepest(h) => h.len(),
        }
    }

    fn push(&mut self, e: Envelope<M>) {
        match self {
            Pool::Fifo(q) => q.push_back(e),
            Pool::Random(v) => v.push(e),
            Pool::Deepest(h) => h.push(DepthKey(e)),
        }
    }

    fn pop(&mut self, rng: &mut ChaCha8Rng) -> Option<Envelope<M>> {
        match self {
            Pool::Fifo(q) => q.pop_front(),
            Pool::Random(v) => {
                if v.is_empty() {
                    None
                } else {
                    let i = rng.gen_range(0..v.len());
                    Some(v.swap_remove(i))
                }
            }
            Pool::Deepest(h) => h.pop().map(|k| k.0),
        }
    }
}

/// Adversarial scheduler: three priority tiers (colluding senders, normal,
/// stalled), each ordered by the configured strategy.
pub struct Scheduler<M> {
    strategy: Strategy,
    favored: BTreeSet<PlayerId>,
    tiers: [Pool<M>; 3],
    rng: ChaCha8Rng,
}

impl<M> Scheduler<M> {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        let tiers = [
            Pool::for_strategy(&strategy),
            Pool::for_strategy(&strategy),
            Pool::Fifo(VecDeque::new()),
        ];
        Scheduler { strategy, favored: BTreeSet::new(), tiers, rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5c4e_d01e) }
    }

    pub fn in_flight(&self) -> usize {
        self.tiers.iter().map(Pool::len).sum()
    }

    fn push(&mut self, e: Envelope<M>) {
        let tier = if self.favored.contains(&e.from) {
            0
        } else if let Strategy::TargetedStall(set) = &self.strategy {
            if set.contains(&e.from) || set.contains(&e.to) {
                2
            } else {
                1
            }
        } else {
            1
        };
        self.tiers[tier].push(e);
    }

    fn pop(&mut self) -> Option<Envelope<M>> {
        let rng = &mut self.rng;
        self.tiers.iter_mut().find(|p| p.len() > 0).and_then(|p| p.pop(rng))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerMetrics {
    pub msgs_sent: u64,
    pub msgs_received: u64,
    pub field_elements_sent: u64,
    pub computation_steps: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub players: Vec<PlayerMetrics>,
    pub good: Vec<bool>,
    pub max_chain_depth_delivered: u32,
    pub deliveries: u64,
}

impl Metrics {
    fn new(n: usize, good: Vec<bool>) -> Self {
        Metrics { players: vec![PlayerMetrics::default(); n], good, ..Default::default() }
    }

    fn good_iter(&self) -> impl Iterator<Item = &PlayerMetrics> {
        self.players.iter().zip(&self.good).filter(|(_, g)| **g).map(|(p, _)| p)
    }

    pub fn max_good_field_elements(&self) -> u64 {
        self.good_iter().map(|p| p.field_elements_sent).max().unwrap_or(0)
    }

    pub fn max_good_msgs_sent(&self) -> u64 {
        self.good_iter().map(|p| p.msgs_sent).max().unwrap_or(0)
    }

    pub fn max_good_msgs_received(&self) -> u64 {
        self.good_iter().map(|p| p.msgs_received).max().unwrap_or(0)
    }

    pub fn max_good_computation(&self) -> u64 {
        self.good_iter().map(|p| p.computation_steps).max().unwrap_or(0)
    }

    pub fn total_msgs(&self) -> u64 {
        self.players.iter().map(|p| p.msgs_sent).sum()
    }

    pub fn total_field_elements(&self) -> u64 {
        self.players.iter().map(|p| p.field_elements_sent).sum()
    }

    /// One row per player: `id,good,msgs_sent,field_elements_sent,computation_steps`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "id,good,msgs_sent,field_elements_sent,computation_steps")?;
        for (i, p) in self.players.iter().enumerate() {
            let g = if self.good.get(i).copied().unwrap_or(true) { "good" } else { "bad" };
            writeln!(w, "{},{},{},{},{}", i, g, p.msgs_sent, p.field_elements_sent, p.computation_steps)?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "max_chain_depth": self.max_chain_depth_delivered,
            "deliveries": self.deliveries,
            "total_msgs": self.total_msgs(),
            "total_field_elements": self.total_field_elements(),
            "max_good_msgs_sent": self.max_good_msgs_sent(),
            "max_good_msgs_received": self.max_good_msgs_received(),
            "max_good_field_elements": self.max_good_field_elements(),
            "max_good_computation_steps": self.max_good_computation(),
            "computation_unit": "field operations",
        })
    }
}

/// A delivered message as recorded in the trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub from: PlayerId,
    pub to: PlayerId,
    pub depth: u32,
    pub tag: u8,
}

#[derive(Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Delivered { from: PlayerId, to: PlayerId, depth: u32 },
    Quiescent,
}

/// `⌊(1/8 − ε)·n⌋`, the largest admissible number of bad players.
pub fn max_bad(n: usize, epsilon: f64) -> usize {
    ((0.125 - epsilon) * n as f64 + 1e-9).floor().max(0.0) as usize
}

pub struct Simulation<N: Node> {
    nodes: Vec<N>,
    behaviors: Vec<Behavior>,
    rngs: Vec<ChaCha8Rng>,
    adversary_rng: ChaCha8Rng,
    scheduler: Scheduler<N::Msg>,
    metrics: Metrics,
    next_seq: u64,
    steps: u64,
    step_budget: u64,
    hasher: Option<Sha256>,
    trace: Option<Vec<TraceEvent>>,
    started: bool,
}

impl<N: Node> Simulation<N> {
    /// Registers `nodes` (index = player id). Players listed in `bad` run
    /// the given behavior instead of honest; the set is fixed here, before
    /// any event, and must not exceed `bad_bound`.
    pub fn spawn(
        nodes: Vec<N>,
        bad: &BTreeMap<PlayerId, Behavior>,
        bad_bound: usize,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Self, SimError> {
        let n = nodes.len();
        let actually_bad = bad.values().filter(|b| **b != Behavior::Honest).count();
        if actually_bad > bad_bound {
            return Err(SimError::BadFractionExceeded { bad: actually_bad, bound: bad_bound });
        }
        let mut behaviors = vec![Behavior::Honest; n];
        for (&p, &b) in bad {
            *behaviors.get_mut(p as usize).ok_or(SimError::UnknownPlayer(p))? = b;
        }
        let good = behaviors.iter().map(|b| *b == Behavior::Honest).collect();
        let mut scheduler = Scheduler::new(strategy, seed);
        scheduler.favored =
            bad.iter().filter(|(_, b)| **b == Behavior::Colluding).map(|(p, _)| *p).collect();
        let rngs = (0..n as u64)
            .map(|i| ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i + 1)))
            .collect();
        Ok(Simulation {
            nodes,
            behaviors,
            rngs,
            adversary_rng: ChaCha8Rng::seed_from_u64(seed ^ 0xbad0_bad0),
            scheduler,
            metrics: Metrics::new(n, good),
            next_seq: 0,
            steps: 0,
            step_budget: u64::MAX,
            hasher: None,
            trace: None,
            started: false,
        })
    }

    pub fn with_step_budget(mut self, budget: u64) -> Self {
        self.step_budget = budget;
        self
    }

    /// Keep a running SHA-256 over every delivered envelope.
    pub fn with_transcript_hash(mut self) -> Self {
        self.hasher = Some(Sha256::new());
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, p: PlayerId) -> &N {
        &self.nodes[p as usize]
    }

    pub fn nodes(&self) -> &[N] {
        &self.nodes
    }

    pub fn behavior(&self, p: PlayerId) -> Behavior {
        self.behaviors[p as usize]
    }

    pub fn is_good(&self, p: PlayerId) -> bool {
        self.behaviors[p as usize] == Behavior::Honest
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn in_flight(&self) -> usize {
        self.scheduler.in_flight()
    }

    pub fn trace(&self) -> Option<&[TraceEvent]> {
        self.trace.as_deref()
    }

    pub fn transcript_digest(&self) -> Option<[u8; 32]> {
        self.hasher.as_ref().map(|h| h.clone().finalize().into())
    }

    fn runs_protocol(&self, p: PlayerId) -> bool {
        self.behaviors[p as usize] != Behavior::Crash
    }

    /// Calls [`Node::start`] on every non-crashed player. Idempotent.
    pub fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for p in 0..self.nodes.len() as PlayerId {
            if self.runs_protocol(p) {
                self.invoke(p, 0, |node, ctx| node.start(ctx));
            }
        }
    }

    /// Runs `f` on player `p` outside any handler; its sends have depth 0.
    pub fn external<F>(&mut self, p: PlayerId, f: F)
    where
        F: FnOnce(&mut N, &mut Context<'_, N::Msg>),
    {
        if self.runs_protocol(p) {
            self.invoke(p, 0, f);
        }
    }

    fn invoke<F>(&mut self, p: PlayerId, depth: u32, f: F)
    where
        F: FnOnce(&mut N, &mut Context<'_, N::Msg>),
    {
        let n = self.nodes.len();
        let ops_before = field_ops();
        let mut ctx = Context { me: p, n, rng: &mut self.rngs[p as usize], outbox: Vec::new() };
        f(&mut self.nodes[p as usize], &mut ctx);
        let outbox = std::mem::take(&mut ctx.outbox);
        let ops = field_ops() - ops_before;
        self.metrics.players[p as usize].computation_steps += ops;
        let behavior = self.behaviors[p as usize];
        for (i, (to, mut msg)) in outbox.into_iter().enumerate() {
            if to as usize >= n {
                continue;
            }
            match behavior {
                Behavior::Crash => continue,
                Behavior::WrongShare => {
                    msg.tamper(&mut self.adversary_rng);
                }
                Behavior::Equivocate => {
                    if (to as usize + i) % 2 == 1 {
                        msg.tamper(&mut self.adversary_rng);
                    }
                }
                Behavior::Honest | Behavior::Colluding => {}
            }
            let pm = &mut self.metrics.players[p as usize];
            pm.msgs_sent += 1;
            pm.field_elements_sent += msg.field_elements() as u64;
            let seq = self.next_seq;
            self.next_seq += 1;
            self.scheduler.push(Envelope { seq, from: p, to, depth, msg });
        }
    }

    /// Delivers one message chosen by the scheduler.
    pub fn step(&mut self) -> StepOutcome {
        if !self.started {
            self.start();
        }
        let Some(env) = self.scheduler.pop() else {
            return StepOutcome::Quiescent;
        };
        self.steps += 1;
        self.metrics.deliveries += 1;
        self.metrics.players[env.to as usize].msgs_received += 1;
        self.metrics.max_chain_depth_delivered = self.metrics.max_chain_depth_delivered.max(env.depth);
        if let Some(h) = self.hasher.as_mut() {
            let mut buf = Vec::with_capacity(64);
            buf.extend_from_slice(&env.from.to_le_bytes());
            buf.extend_from_slice(&env.to.to_le_bytes());
            buf.extend_from_slice(&env.depth.to_le_bytes());
            env.msg.encode(&mut buf);
            h.update(&buf);
        }
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceEvent { seq: env.seq, from: env.from, to: env.to, depth: env.depth, tag: env.msg.tag() });
        }
        let outcome = StepOutcome::Delivered { from: env.from, to: env.to, depth: env.depth };
        if self.runs_protocol(env.to) {
            let Envelope { from, to, depth, msg, .. } = env;
            self.invoke(to, depth + 1, move |node, ctx| node.handle(from, msg, ctx));
        }
        outcome
    }

    /// Steps until `done` holds or the network is quiescent. Exceeding the
    /// step budget is an error.
    pub fn run_until<P>(&mut self, mut done: P) -> Result<Metrics, SimError>
    where
        P: FnMut(&Self) -> bool,
    {
        self.start();
        while !done(self) {
            if self.steps >= self.step_budget {
                return Err(SimError::NonTermination(self.step_budget));
            }
            if self.step() == StepOutcome::Quiescent {
                break;
            }
        }
        Ok(self.metrics.clone())
    }

    /// Runs until no message is in flight.
    pub fn run_to_quiescence(&mut self) -> Result<Metrics, SimError> {
        self.run_until(|_| false)
    }
}
