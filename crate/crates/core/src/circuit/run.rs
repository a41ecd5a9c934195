//! End-to-end runs on the simulator, with post-run audits.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::player::{MpcError, MpcPlayer, MpcSetup};
use super::{CircuitError, CircuitGraph, Family, NodeId};
use crate::field::Field;
use crate::proto::mix64;
use crate::quorum::{create_quorums, QuorumError, QuorumParams, QuorumTable};
use crate::sharing::robust_decode;
use crate::simnet::{Behavior, Metrics, PlayerId, SimError, Simulation, Strategy, TraceEvent};
use crate::tcounter::{build_or_flat, CounterError, ThresholdMode};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Quorum(#[from] QuorumError),
    #[error(transparent)]
    Counter(#[from] CounterError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Config(String),
}

/// Where the circuit comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CircuitSource {
    Family(Family),
    Graph(CircuitGraph),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub n: usize,
    /// Number of bad players; they are drawn uniformly from the seed.
    pub t: usize,
    /// Behaviors dealt round-robin to the bad players, in id order.
    pub behaviors: Vec<Behavior>,
    pub strategy: Strategy,
    pub seed: u64,
    pub circuit: CircuitSource,
    pub quorum: QuorumParams,
    pub step_budget: u64,
    pub default_input: u64,
    /// Keep the full delivery trace.
    pub trace: bool,
}

impl MpcConfig {
    pub fn new(n: usize, t: usize, circuit: Family, seed: u64) -> Self {
        MpcConfig {
            n,
            t,
            behaviors: vec![Behavior::Crash],
            strategy: Strategy::RandomDelay,
            seed,
            circuit: CircuitSource::Family(circuit),
            quorum: quorum_params_for(n),
            step_budget: 200_000_000,
            default_input: 0,
            trace: false,
        }
    }
}

/// Quorum sizing used by default: small networks get a larger constant so
/// that a quorum of at least ten members can absorb one bad member.
pub fn quorum_params_for(n: usize) -> QuorumParams {
    let c = if n <= 16 { 2.5 } else { 2.0 };
    QuorumParams { c, ..QuorumParams::default() }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpcReport {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub q: usize,
    pub d: usize,
    pub b: usize,
    pub depth: u32,
    pub seed: u64,
    pub behaviors: Vec<Behavior>,
    pub strategy: String,
    pub bad: Vec<PlayerId>,
    /// Public output as seen by good players (if they agree).
    pub output: Option<u64>,
    pub oracle: u64,
    pub size_s: Option<u32>,
    pub effective_inputs: Vec<u64>,
    pub in_s: Vec<bool>,
    pub all_terminated: bool,
    pub output_correct: bool,
    pub size_ok: bool,
    pub mask_invariant: bool,
    pub failures: Vec<String>,
    pub modulus: u64,
    /// Audit-only reconstruction of every node, in id order.
    pub nodes: Vec<NodeAudit>,
    pub metrics: Metrics,
    pub steps: u64,
    #[serde(skip)]
    pub trace: Option<Vec<TraceEvent>>,
    #[serde(skip)]
    pub table: Option<QuorumTable>,
}

impl MpcReport {
    pub fn passed(&self) -> bool {
        self.all_terminated && self.output_correct && self.size_ok && self.mask_invariant && self.failures.is_empty()
    }

    pub fn max_chain_depth(&self) -> u32 {
        self.metrics.max_chain_depth_delivered
    }
}

/// One node after the run: clear value, reconstructed mask and the masked
/// value the quorum agreed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAudit {
    pub node: NodeId,
    pub clear: u64,
    pub mask: u64,
    pub yhat: u64,
}

/// Checks `clear + mask = yhat (mod p)` for every record; reports the first
/// violation.
pub fn audit_masks(modulus: u64, nodes: &[NodeAudit]) -> Result<(), String> {
    for r in nodes {
        if (r.clear as u128 + r.mask as u128) % modulus as u128 != r.yhat as u128 % modulus as u128 {
            return Err(format!("node {}: masked value is not value + mask", r.node));
        }
    }
    Ok(())
}

/// Bad players drawn from the seed.
pub fn pick_bad(n: usize, t: usize, seed: u64) -> BTreeSet<PlayerId> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x6261_6473));
    sample(&mut rng, n, t.min(n)).into_iter().map(|i| i as PlayerId).collect()
}

pub fn run_mpc<F: Field>(cfg: &MpcConfig) -> Result<MpcReport, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let graph = match &cfg.circuit {
        CircuitSource::Family(f) => f.build(cfg.n, F::MODULUS, &mut rng)?,
        CircuitSource::Graph(g) => g.clone(),
    };
    if graph.n != cfg.n {
        return Err(RunError::Config(format!("circuit has {} inputs, n = {}", graph.n, cfg.n)));
    }
    let adversarial = cfg.behaviors.iter().any(|b| *b != Behavior::Honest);
    let bad = if adversarial { pick_bad(cfg.n, cfg.t, cfg.seed) } else { BTreeSet::new() };
    let table = create_quorums(cfg.n, &bad, cfg.quorum, mix64(cfg.seed ^ 0x71))?;
    let inputs: Vec<F> = (0..cfg.n).map(|_| F::random(&mut rng)).collect();
    run_with(cfg, graph, table, &bad, inputs)
}

/// Runs on a given graph, table and inputs.
pub fn run_with<F: Field>(
    cfg: &MpcConfig,
    graph: CircuitGraph,
    table: QuorumTable,
    bad: &BTreeSet<PlayerId>,
    inputs: Vec<F>,
) -> Result<MpcReport, RunError> {
    let n = cfg.n;
    let tau = n - cfg.t;
    let layout = Arc::new(build_or_flat(n, tau.max(n.div_ceil(2)), ThresholdMode::Balanced)?);
    let b = cfg.quorum.bad_bound(n, cfg.t);
    let setup = Arc::new(MpcSetup::new(graph, table, layout, b, mix64(cfg.seed ^ 0xbeac), F::from_u64(cfg.default_input))?);
    let players: Vec<MpcPlayer<F>> = (0..n as PlayerId).map(|p| MpcPlayer::new(setup.clone(), p, inputs[p as usize])).collect();
    if cfg.behaviors.is_empty() && !bad.is_empty() {
        return Err(RunError::Config("bad players need at least one behavior".into()));
    }
    let behaviors: BTreeMap<PlayerId, Behavior> =
        bad.iter().enumerate().map(|(i, &p)| (p, cfg.behaviors[i % cfg.behaviors.len()])).collect();
    let mut sim = Simulation::spawn(players, &behaviors, cfg.t, cfg.strategy.clone(), cfg.seed)?.with_step_budget(cfg.step_budget);
    if cfg.trace {
        sim = sim.with_trace();
    }
    let metrics = sim.run_to_quiescence()?;
    let mut report = audit(&sim, &setup, &inputs, cfg);
    report.metrics = metrics;
    report.steps = sim.steps();
    report.trace = sim.trace().map(|t| t.to_vec());
    Ok(report)
}

/// Reconstructs the sharing held by the good members of a node's quorum,
/// requiring all of their shares to lie on one polynomial of degree `d`.
fn good_sharing<F: Field>(
    sim: &Simulation<MpcPlayer<F>>,
    setup: &MpcSetup<F>,
    v: NodeId,
) -> Result<(F, F), String> {
    let k = setup.graph.node(v).quorum;
    let mut yhat = None;
    let mut pts = Vec::new();
    for (pos, &p) in setup.table.members(k).iter().enumerate() {
        if !sim.is_good(p) {
            continue;
        }
        let role = sim.node(p).role(k).expect("member hosts role");
        let Some(ns) = role.node_share(v) else {
            return Err(format!("node {v}: good member {p} of quorum {k} never finished"));
        };
        match yhat {
            None => yhat = Some(ns.yhat),
            Some(y) if y != ns.yhat => return Err(format!("node {v}: good members disagree on the masked value")),
            _ => {}
        }
        pts.push((F::abscissa(pos), ns.share));
    }
    let yhat = yhat.ok_or_else(|| format!("node {v}: no good member in quorum {k}"))?;
    let need = pts.len();
    let poly = robust_decode(&pts, setup.d, need).map_err(|_| format!("node {v}: mask shares are not a degree-{} sharing", setup.d))?;
    Ok((yhat, poly.constant_term()))
}

fn audit<F: Field>(sim: &Simulation<MpcPlayer<F>>, setup: &MpcSetup<F>, inputs: &[F], cfg: &MpcConfig) -> MpcReport {
    let g = &setup.graph;
    let n = g.n;
    let mut failures = Vec::new();
    let good: Vec<PlayerId> = (0..n as PlayerId).filter(|&p| sim.is_good(p)).collect();

    // Input nodes: agreement on membership in S and effective inputs.
    let mut in_s = vec![false; n];
    let mut effective = vec![setup.default_input; n];
    let mut node_vals: Vec<Option<(F, F)>> = vec![None; g.nodes().len()];
    for i in 1..=n as NodeId {
        let k = g.node(i).quorum;
        let decisions: BTreeSet<Option<bool>> = setup
            .table
            .members(k)
            .iter()
            .filter(|&&p| sim.is_good(p))
            .map(|&p| sim.node(p).role(k).and_then(|r| r.in_s()))
            .collect();
        match decisions.iter().next() {
            Some(Some(d)) if decisions.len() == 1 => in_s[i as usize - 1] = *d,
            _ => failures.push(format!("input {i}: good members did not agree on inclusion ({decisions:?})")),
        }
        match good_sharing(sim, setup, i) {
            Ok((yhat, r)) => {
                effective[i as usize - 1] = yhat - r;
                node_vals[i as usize - 1] = Some((yhat, r));
            }
            Err(e) => failures.push(e),
        }
        let p = i - 1;
        if sim.is_good(p) && in_s[i as usize - 1] && effective[i as usize - 1] != inputs[p as usize] {
            failures.push(format!("input {i}: good player's committed input differs from its real input"));
        }
        if !in_s[i as usize - 1] && effective[i as usize - 1] != setup.default_input {
            failures.push(format!("input {i}: excluded input is not the default"));
        }
    }

    // Every node: mask invariant against the in-the-clear evaluation.
    let clear = g.eval_all(&effective);
    let mut mask_ok = true;
    for &v in g.gates_topo() {
        match good_sharing(sim, setup, v) {
            Ok(val) => node_vals[v as usize - 1] = Some(val),
            Err(e) => {
                mask_ok = false;
                failures.push(e);
            }
        }
    }
    let nodes: Vec<NodeAudit> = node_vals
        .iter()
        .enumerate()
        .filter_map(|(i, v)| {
            v.map(|(yhat, mask)| NodeAudit { node: i as NodeId + 1, clear: clear[i].value(), mask: mask.value(), yhat: yhat.value() })
        })
        .collect();
    if let Err(e) = audit_masks(F::MODULUS, &nodes) {
        mask_ok = false;
        failures.push(e);
    }

    let oracle = g.eval(&effective);
    let size = in_s.iter().filter(|&&x| x).count() as u32;
    let outs: BTreeSet<Option<(F, u32)>> = good.iter().map(|&p| sim.node(p).output).collect();
    let all_terminated = !outs.contains(&None);
    let agreed = if outs.len() == 1 { outs.iter().next().copied().flatten() } else { None };
    if outs.len() > 1 {
        failures.push("good players disagree on the output".into());
    }
    let output_correct = agreed.map(|(o, _)| o == oracle).unwrap_or(false);
    let size_s = agreed.map(|(_, s)| s);
    let size_ok = size_s == Some(size) && (size as usize) + cfg.t >= n;
    if size_s.is_some() && size_s != Some(size) {
        failures.push(format!("reported |S| = {size_s:?}, audited {size}"));
    }
    MpcReport {
        n,
        m: g.m,
        t: cfg.t,
        q: setup.q,
        d: setup.d,
        b: setup.b,
        depth: g.depth(),
        seed: cfg.seed,
        behaviors: cfg.behaviors.clone(),
        strategy: cfg.strategy.name(),
        bad: (0..n as PlayerId).filter(|&p| !sim.is_good(p)).collect(),
        output: agreed.map(|(o, _)| o.value()),
        oracle: oracle.value(),
        size_s,
        effective_inputs: effective.iter().map(|x| x.value()).collect(),
        in_s,
        all_terminated,
        output_correct,
        size_ok,
        mask_invariant: mask_ok,
        modulus: F::MODULUS,
        nodes,
        failures,
        metrics: Metrics::default(),
        steps: 0,
        trace: None,
        table: Some(setup.table.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Fp31;

    fn run(n: usize, t: usize, family: Family, behavior: Behavior, strategy: Strategy, seed: u64) -> MpcReport {
        let mut cfg = MpcConfig::new(n, t, family, seed);
        cfg.behaviors = vec![behavior];
        cfg.strategy = strategy;
        run_mpc::<Fp31>(&cfg).expect("run completes")
    }

    #[test]
    fn honest_addition_tree() {
        let r = run(16, 0, Family::AdditionTree, Behavior::Honest, Strategy::Fifo, 1);
        assert!(r.passed(), "{:?}", r.failures);
        assert_eq!(r.size_s, Some(16));
        assert_eq!(r.output, Some(r.oracle));
    }

    #[test]
    fn crash_inner_product() {
        let r = run(16, 1, Family::InnerProduct, Behavior::Crash, Strategy::RandomDelay, 2);
        assert!(r.passed(), "{:?}", r.failures);
        assert!(r.size_s.unwrap() >= 15);
    }

    #[test]
    fn wrong_share_random_dag() {
        let r = run(16, 1, Family::RandomDag { m: 64 }, Behavior::WrongShare, Strategy::RandomDelay, 3);
        assert!(r.passed(), "{:?}", r.failures);
    }

    #[test]
    fn equivocation_with_stalling() {
        let r = run(16, 1, Family::InnerProduct, Behavior::Equivocate, Strategy::TargetedStall([0, 1, 2].into()), 4);
        assert!(r.passed(), "{:?}", r.failures);
    }
}
