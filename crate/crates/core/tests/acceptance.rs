//! Acceptance suite. Runs every criterion and prints one line per criterion;
//! exits non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test --test acceptance -- 3 7`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quorum_mpc::agreement::standalone::run_ba;
use quorum_mpc::circuit::run::{quorum_params_for, run_with, CircuitSource, MpcConfig, MpcReport};
use quorum_mpc::circuit::{CircuitGraph, Family, GateOp, NodeKind};
use quorum_mpc::field::Field;
use quorum_mpc::hwmpc::standalone::run_hw;
use quorum_mpc::hwmpc::{HwCircuit, HwParams, RoleAssignment};
use quorum_mpc::quorum::{create_quorums, QuorumParams};
use quorum_mpc::sharing::standalone::{run_avss, DealerMode, Outcome};
use quorum_mpc::sharing::{AvssParams, Bivariate};
use quorum_mpc::tcounter::{build_or_flat, run_counter, CounterEvent, ThresholdMode};
use quorum_mpc::{Behavior, Fp31, PlayerId, Strategy, F11};

const P: u64 = 2_147_483_647;

// ---------------------------------------------------------------------------
// Plain modular arithmetic, kept apart from the library's field types.

fn add(a: u64, b: u64) -> u64 {
    ((a as u128 + b as u128) % P as u128) as u64
}
fn sub(a: u64, b: u64) -> u64 {
    ((a as u128 + P as u128 - b as u128 % P as u128) % P as u128) as u64
}
fn mul(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) % P as u128) as u64
}
fn pow(mut a: u64, mut e: u64) -> u64 {
    let mut r = 1;
    while e > 0 {
        if e & 1 == 1 {
            r = mul(r, a);
        }
        a = mul(a, a);
        e >>= 1;
    }
    r
}
fn inv(a: u64) -> u64 {
    pow(a, P - 2)
}

/// Value at `x` of the unique polynomial through `pts`.
fn lagrange(pts: &[(u64, u64)], x: u64) -> u64 {
    let mut acc = 0;
    for (i, &(xi, yi)) in pts.iter().enumerate() {
        let (mut num, mut den) = (1, 1);
        for (j, &(xj, _)) in pts.iter().enumerate() {
            if i != j {
                num = mul(num, sub(x, xj));
                den = mul(den, sub(xi, xj));
            }
        }
        acc = add(acc, mul(yi, mul(num, inv(den))));
    }
    acc
}

fn strategy_for(i: u64) -> Strategy {
    [Strategy::Fifo, Strategy::RandomDelay, Strategy::MaxChain][(i % 3) as usize].clone()
}

fn log2(n: usize) -> f64 {
    (n as f64).log2()
}

fn p99(v: &mut [u64]) -> u64 {
    v.sort_unstable();
    let rank = ((0.99 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// ---------------------------------------------------------------------------
// Criteria 1 and 2: threshold counter.

fn counter_criteria() -> (Verdict, Verdict) {
    let (mut runs, mut incomplete, mut unsound) = (0usize, 0usize, 0usize);
    let (mut below_runs, mut below_done) = (0usize, 0usize);
    let mut load_fail = 0usize;
    let mut worst_load = 0.0f64;
    let mut worst_depth = 0.0f64;
    let mut first_err = String::new();
    for n in [256usize, 1024] {
        let tau = (7 * n).div_ceil(8);
        let layout = Arc::new(build_or_flat(n, tau, ThresholdMode::Balanced).expect("layout"));
        let load_cap = 30.0 * log2(n);
        let depth_cap = 10.0 * log2(n);
        for s in 0..3u64 {
            for seed in 0..200u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64) << 20 ^ s << 40);
                let k = rng.gen_range(tau..=n);
                let mut ids: Vec<u32> = (1..=n as u32).collect();
                ids.shuffle(&mut rng);
                let ones: BTreeSet<u32> = ids[..k].iter().copied().collect();
                let r = run_counter(layout.clone(), &ones, strategy_for(s), seed).expect("counter run");
                runs += 1;
                if !r.all_done {
                    incomplete += 1;
                }
                if let Err(e) = sound(&r.events, &ones, layout.scale).and(r.audit.clone()) {
                    unsound += 1;
                    if first_err.is_empty() {
                        first_err = format!("n={n} seed={seed}: {e}");
                    }
                }
                let load = r.metrics.players.iter().map(|p| p.msgs_sent.max(p.msgs_received)).max().unwrap_or(0) as f64;
                let depth = r.metrics.max_chain_depth_delivered as f64;
                worst_load = worst_load.max(load / log2(n));
                worst_depth = worst_depth.max(depth / log2(n));
                if load > load_cap || depth > depth_cap {
                    load_fail += 1;
                }
            }
            // below threshold: nobody may finish
            for seed in 0..25u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(!seed ^ (n as u64) << 20 ^ s << 40);
                let mut ids: Vec<u32> = (1..=n as u32).collect();
                ids.shuffle(&mut rng);
                let ones: BTreeSet<u32> = ids[..tau - 1].iter().copied().collect();
                let r = run_counter(layout.clone(), &ones, strategy_for(s), seed).expect("counter run");
                below_runs += 1;
                if r.done_count > 0 {
                    below_done += 1;
                }
                if let Err(e) = sound(&r.events, &ones, layout.scale).and(r.audit.clone()) {
                    unsound += 1;
                    if first_err.is_empty() {
                        first_err = format!("n={n} seed={seed} (below tau): {e}");
                    }
                }
            }
        }
    }
    let c1 = verdict(
        (incomplete as f64) < 0.01 * runs as f64 && unsound == 0 && below_done == 0,
        format!(
            "{runs} runs at >= tau bits: {incomplete} incomplete; soundness violations {unsound}; \
             {below_done}/{below_runs} below-threshold runs finished {first_err}"
        ),
    );
    let c2 = verdict(
        load_fail == 0,
        format!(
            "{load_fail} of {runs} runs over the caps; worst load {worst_load:.2}·log2 n (cap 30), \
             worst chain depth {worst_depth:.2}·log2 n (cap 10)"
        ),
    );
    (c1, c2)
}

/// Independent soundness check over the lineage events.
fn sound(events: &[CounterEvent], ones: &BTreeSet<u32>, scale: u64) -> Result<(), String> {
    let mut issued = BTreeSet::new();
    for e in events {
        match *e {
            CounterEvent::FlagIssued { origin, .. } => {
                if !ones.contains(&origin) || !issued.insert(origin) {
                    return Err(format!("bad flag from {origin}"));
                }
            }
            CounterEvent::DoneIssued { sum } if sum > ones.len() as u64 * scale => {
                return Err(format!("sum {sum} over {} ones", ones.len()));
            }
            _ => {}
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Criteria 3 and 4: end-to-end MPC.

/// Clear evaluation of every node, memoised, on `inputs` (1-based ids).
fn eval_nodes(g: &CircuitGraph, inputs: &[u64]) -> HashMap<u32, u64> {
    fn go(g: &CircuitGraph, v: u32, inputs: &[u64], memo: &mut HashMap<u32, u64>) -> u64 {
        if let Some(&x) = memo.get(&v) {
            return x;
        }
        let x = match g.node(v).kind {
            NodeKind::Input => inputs[v as usize - 1],
            NodeKind::Gate { op, left, right } => {
                let (a, b) = (go(g, left, inputs, memo), go(g, right, inputs, memo));
                match op {
                    GateOp::Add => add(a, b),
                    GateOp::Mul => mul(a, b),
                }
            }
        };
        memo.insert(v, x);
        x
    }
    let mut memo = HashMap::new();
    for node in g.nodes() {
        go(g, node.id, inputs, &mut memo);
    }
    memo
}

struct MpcRun {
    report: MpcReport,
    graph: CircuitGraph,
    inputs: Vec<u64>,
    bad: BTreeSet<PlayerId>,
}

fn mpc_run(n: usize, t: usize, family: Family, behaviors: Vec<Behavior>, strategy: Strategy, seed: u64) -> MpcRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9) ^ n as u64);
    let graph = family.build(n, P, &mut rng).expect("circuit");
    let mut players: Vec<PlayerId> = (0..n as PlayerId).collect();
    players.shuffle(&mut rng);
    let bad: BTreeSet<PlayerId> = players[..t].iter().copied().collect();
    let inputs: Vec<u64> = (0..n).map(|_| rng.gen_range(0..P)).collect();
    let cfg = MpcConfig {
        behaviors,
        strategy,
        circuit: CircuitSource::Graph(graph.clone()),
        quorum: quorum_params_for(n),
        ..MpcConfig::new(n, t, family, seed)
    };
    let table = create_quorums(n, &bad, cfg.quorum, rng.gen()).expect("quorum table");
    let fin: Vec<Fp31> = inputs.iter().map(|&x| Fp31::from_u64(x)).collect();
    let report = run_with::<Fp31>(&cfg, graph.clone(), table, &bad, fin).expect("mpc run");
    MpcRun { report, graph, inputs, bad }
}

/// Problems with the result of one run (empty = correct).
fn check_mpc(run: &MpcRun) -> (Vec<String>, Vec<String>) {
    let r = &run.report;
    let n = r.n;
    let mut c3 = Vec::new();
    let mut c4 = Vec::new();
    // effective inputs: real input for committed good players, default otherwise
    for i in 0..n {
        let good = !run.bad.contains(&(i as PlayerId));
        if good && r.in_s[i] && r.effective_inputs[i] != run.inputs[i] {
            c3.push(format!("good player {i} committed the wrong input"));
        }
        if !r.in_s[i] && r.effective_inputs[i] != 0 {
            c3.push(format!("excluded player {i} not defaulted"));
        }
    }
    let values = eval_nodes(&run.graph, &r.effective_inputs);
    let oracle = values[&run.graph.output()];
    if r.output != Some(oracle) {
        c3.push(format!("output {:?} != oracle {oracle}", r.output));
    }
    let size = r.in_s.iter().filter(|&&b| b).count();
    if size + r.t < n || r.size_s != Some(size as u32) {
        c3.push(format!("|S| reported {:?}, counted {size}, n - t = {}", r.size_s, n - r.t));
    }
    if !r.all_terminated {
        c3.push("a good player did not terminate with the output".into());
    }
    if r.nodes.len() != run.graph.nodes().len() {
        c4.push(format!("{} of {} nodes audited", r.nodes.len(), run.graph.nodes().len()));
    }
    for a in &r.nodes {
        if a.clear != values[&a.node] {
            c4.push(format!("node {} clear value mismatch", a.node));
        } else if add(a.clear, a.mask) != a.yhat {
            c4.push(format!("node {}: y + r != masked value", a.node));
        }
    }
    (c3, c4)
}

fn mpc_criteria() -> (Verdict, Verdict) {
    let all = [Behavior::Crash, Behavior::Equivocate, Behavior::WrongShare];
    let (mut runs, mut bad3, mut bad4) = (0usize, 0usize, 0usize);
    let (mut first3, mut first4) = (String::new(), String::new());
    let mut per_behavior: BTreeMap<String, usize> = BTreeMap::new();
    for n in [16usize, 32, 64] {
        let t = (n as f64 * (0.125 - 0.01) + 1e-9).floor() as usize;
        for family in [Family::AdditionTree, Family::InnerProduct, Family::RandomDag { m: 4 * n }] {
            for seed in 0..50u64 {
                // rotate the behavior list so every behavior appears even when t = 1
                let mut behaviors = all.to_vec();
                behaviors.rotate_left((seed % 3) as usize);
                for b in behaviors.iter().take(t) {
                    *per_behavior.entry(format!("{b:?}")).or_default() += 1;
                }
                let run = mpc_run(n, t, family, behaviors, strategy_for(seed / 3), seed);
                let (c3, c4) = check_mpc(&run);
                runs += 1;
                if !c3.is_empty() {
                    bad3 += 1;
                    if first3.is_empty() {
                        first3 = format!("; first: n={n} {} seed={seed}: {}", family.name(), c3[0]);
                    }
                }
                if !c4.is_empty() {
                    bad4 += 1;
                    if first4.is_empty() {
                        first4 = format!("; first: n={n} {} seed={seed}: {}", family.name(), c4[0]);
                    }
                }
            }
        }
    }
    let mix: Vec<String> = per_behavior.iter().map(|(k, v)| format!("{k}×{v}")).collect();
    (
        verdict(bad3 == 0, format!("{} of {runs} runs correct (bad players {}){first3}", runs - bad3, mix.join(", "))),
        verdict(bad4 == 0, format!("{} of {runs} runs hold the mask invariant at every node{first4}", runs - bad4)),
    )
}

// ---------------------------------------------------------------------------
// Criterion 5: AVSS binding and secrecy.

fn avss_criterion() -> Verdict {
    let params = AvssParams::symmetric(16, 3, 3);
    let member_behaviors = [Behavior::Crash, Behavior::Equivocate, Behavior::WrongShare];
    let (mut sessions, mut violations, mut committed, mut aborted, mut stalled) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let mut first = String::new();
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa55);
        let mut players: Vec<usize> = (0..16).collect();
        players.shuffle(&mut rng);
        let dealer = players[0];
        let secret = Fp31::random(&mut rng);
        // even seeds: faulty dealer plus two bad members; odd: three bad members
        let (mode, members) = if seed % 2 == 0 {
            let k = rng.gen_range(1..=8);
            let victims: Vec<usize> = players[1..=k].to_vec();
            let mode = match (seed / 2) % 3 {
                0 => DealerMode::Inconsistent(victims),
                1 => DealerMode::BrokenRows(victims),
                _ => DealerMode::Silent,
            };
            (mode, &players[1..3])
        } else {
            (DealerMode::Honest, &players[1..4])
        };
        let bad: BTreeMap<PlayerId, Behavior> =
            members.iter().map(|&p| (p as PlayerId, *member_behaviors.choose(&mut rng).unwrap())).collect();
        let honest_dealer = mode == DealerMode::Honest;
        let r = run_avss(params, dealer, secret, mode, &bad, strategy_for(seed / 2), seed).expect("avss run");
        sessions += 1;
        let mut err = None;
        let values: BTreeSet<u64> = r
            .outcomes
            .iter()
            .filter_map(|o| match o {
                Outcome::Committed(v) => Some(v.value()),
                _ => None,
            })
            .collect();
        let pending = r.outcomes.iter().filter(|o| **o == Outcome::Pending).count();
        if pending == r.outcomes.len() && !honest_dealer {
            // a faulty dealer may stall its own session; nothing was bound
            stalled += 1;
        } else if pending > 0 {
            err = Some("some good members finished and others did not".to_string());
        } else if values.len() > 1 || (values.len() == 1 && r.outcomes.iter().any(|o| *o == Outcome::Aborted)) {
            err = Some("good members disagree".into());
        } else if honest_dealer && values.iter().next() != Some(&secret.value()) {
            err = Some("honest dealer's secret not committed".into());
        } else if let Some(&v) = values.iter().next() {
            committed += 1;
            // every good committed share lies on one degree-3 polynomial through v
            let pts: Vec<(u64, u64)> = r.shares.iter().map(|&(j, s)| (j as u64 + 1, s.value())).collect();
            if pts.len() < 4 || lagrange(&pts[..4], 0) != v || pts.iter().any(|&(x, y)| lagrange(&pts[..4], x) != y) {
                err = Some("committed shares do not determine the committed value".into());
            }
        } else {
            aborted += 1;
        }
        if let Some(e) = err {
            violations += 1;
            if first.is_empty() {
                first = format!("; first: seed {seed}: {e}");
            }
        }
    }
    let secrecy = avss_secrecy_f11();
    verdict(
        violations == 0 && secrecy.is_ok(),
        format!(
            "binding held in {}/{sessions} sessions ({committed} committed, {aborted} aborted, {stalled} stalled by the dealer){first}; \
             secrecy over all 11^4 bivariates of F_11 at q=4, d=1: {}",
            sessions - violations,
            secrecy.err().unwrap_or_else(|| "every member view is consistent with all 11 secrets, uniformly".into())
        ),
    )
}

/// Enumerates every degree-(1,1) bivariate over F_11 and groups by the view
/// of each of 4 members: each view must occur exactly once per secret.
fn avss_secrecy_f11() -> Result<(), String> {
    for j in 0..4u64 {
        let alpha = F11::from_u64(j + 1);
        let mut views: HashMap<[u64; 4], [u32; 11]> = HashMap::new();
        for c in 0..11u64.pow(4) {
            let cs = [c % 11, c / 11 % 11, c / 121 % 11, c / 1331];
            let b = Bivariate {
                coeffs: vec![
                    vec![F11::from_u64(cs[0]), F11::from_u64(cs[1])],
                    vec![F11::from_u64(cs[2]), F11::from_u64(cs[3])],
                ],
            };
            let (row, col) = (b.row(alpha), b.col(alpha));
            // cross-check the library against S(x, y) = c00 + c01 y + c10 x + c11 xy
            let a = j + 1;
            let want_row = [(cs[0] + cs[1] * a) % 11, (cs[2] + cs[3] * a) % 11];
            let want_col = [(cs[0] + cs[2] * a) % 11, (cs[1] + cs[3] * a) % 11];
            let got_row = [row.coeffs[0].value(), row.coeffs.get(1).map_or(0, |x| x.value())];
            let got_col = [col.coeffs[0].value(), col.coeffs.get(1).map_or(0, |x| x.value())];
            if got_row != want_row || got_col != want_col {
                return Err(format!("member {j}: row/column polynomials disagree with the definition"));
            }
            views.entry([want_row[0], want_row[1], want_col[0], want_col[1]]).or_insert([0; 11])[cs[0] as usize] += 1;
        }
        for (view, counts) in &views {
            if counts.iter().any(|&k| k != counts[0]) || counts[0] == 0 {
                return Err(format!("member {j}: view {view:?} not consistent with every secret equally"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 6: quorum-internal MPC and agreement.

fn hw_criterion() -> Verdict {
    let params = HwParams::for_quorum(16);
    let behaviors = [Behavior::Crash, Behavior::Equivocate, Behavior::WrongShare];
    let threshold = 10u64; // ⌈5·16/8⌉
    let (mut sessions, mut mismatches) = (0usize, 0usize);
    let mut first = String::new();
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4a);
        let mut roles: Vec<usize> = (0..16).collect();
        roles.shuffle(&mut rng);
        let k = rng.gen_range(0..=3);
        let bad: BTreeMap<PlayerId, Behavior> =
            roles[..k].iter().map(|&r| (r as PlayerId, *behaviors.choose(&mut rng).unwrap())).collect();
        let kind = seed % 3;
        let (circuit, inputs): (HwCircuit<Fp31>, Vec<u64>) = match kind {
            0 => (HwCircuit::add2(roles[3], roles[4]), vec![rng.gen_range(0..P), rng.gen_range(0..P)]),
            1 => (HwCircuit::mul2(roles[3], roles[4]), vec![rng.gen_range(0..P), rng.gen_range(0..P)]),
            _ => {
                let ones = rng.gen_range(6..=14);
                let mut bits = vec![0u64; 16];
                bits[..ones].iter_mut().for_each(|b| *b = 1);
                bits.shuffle(&mut rng);
                (HwCircuit::five_eighths_majority(16), bits)
            }
        };
        let fin: Vec<Fp31> = inputs.iter().map(|&x| Fp31::from_u64(x)).collect();
        let r = run_hw(params, circuit, &fin, RoleAssignment::identity(16), &bad, strategy_for(seed / 3), seed)
            .expect("hw run");
        sessions += 1;
        let e: Vec<u64> = r.effective_inputs.iter().map(|x| x.value()).collect();
        let want = match kind {
            0 => add(e[0], e[1]),
            1 => mul(e[0], e[1]),
            _ => {
                // indicator polynomial of the count, evaluated at the sum
                let pts: Vec<(u64, u64)> = (0..=16).map(|c| (c, (c >= threshold) as u64)).collect();
                lagrange(&pts, e.iter().fold(0, |a, &x| add(a, x)))
            }
        };
        // a good owner's input is either used as chosen or, if its sharing
        // missed the agreed subset, replaced by the default 0; at most f are
        let owned: Vec<(usize, usize)> = match kind {
            0 | 1 => vec![(0, roles[3]), (1, roles[4])],
            _ => (0..16).map(|i| (i, i)).collect(),
        };
        let good_owned: Vec<usize> = owned.iter().filter(|(_, r)| !bad.contains_key(&(*r as PlayerId))).map(|&(i, _)| i).collect();
        let excluded = good_owned.iter().filter(|&&i| e[i] != inputs[i]).count();
        let owners_ok = good_owned.iter().all(|&i| e[i] == inputs[i] || e[i] == 0) && excluded <= params.f;
        let ok = owners_ok && r.outputs.iter().all(|o| o.as_ref().map(|v| v.len() == 1 && v[0].value() == want) == Some(true));
        if !ok {
            mismatches += 1;
            if first.is_empty() {
                first = format!("; first: seed {seed} kind {kind}");
            }
        }
    }
    let (mut ba_runs, mut ba_fail, mut rounds) = (0usize, 0usize, Vec::new());
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba);
        let inputs: Vec<bool> = match seed % 3 {
            0 => vec![rng.gen(); 16],
            _ => (0..16).map(|_| rng.gen()).collect(),
        };
        let mut ps: Vec<PlayerId> = (0..16).collect();
        ps.shuffle(&mut rng);
        let k = rng.gen_range(0..=3);
        let bad: BTreeMap<PlayerId, Behavior> = ps[..k].iter().map(|&p| (p, *behaviors.choose(&mut rng).unwrap())).collect();
        let r = run_ba(&inputs, 3, &bad, strategy_for(seed), seed).expect("ba run");
        ba_runs += 1;
        // independent validity: a decided bit must be some good player's input
        let good_inputs: BTreeSet<bool> =
            (0..16).filter(|p| !bad.contains_key(&(*p as PlayerId))).map(|p| inputs[p]).collect();
        let decided: BTreeSet<bool> = r.decisions.iter().flatten().copied().collect();
        if r.decisions.iter().any(Option::is_none) || decided.len() != 1 || !decided.is_subset(&good_inputs) {
            ba_fail += 1;
        }
        rounds.push(r.max_round as u64);
    }
    let rp99 = p99(&mut rounds);
    verdict(
        mismatches == 0 && ba_fail == 0 && rp99 <= 40,
        format!(
            "{}/{sessions} HW-MPC sessions match the oracle{first}; agreement {}/{ba_runs} with validity, p99 rounds {rp99} (cap 40)",
            sessions - mismatches,
            ba_runs - ba_fail
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 7: per-player communication against circuit size.

fn scaling_criterion() -> Verdict {
    let n = 32;
    let t = 3;
    let ms = [64usize, 128, 256, 512];
    let mut means = Vec::new();
    for &m in &ms {
        let mut total = 0.0;
        let seeds = 5;
        for seed in 0..seeds {
            let run = mpc_run(n, t, Family::RandomDag { m }, vec![Behavior::Crash], Strategy::RandomDelay, seed);
            assert!(check_mpc(&run).0.is_empty(), "scaling run n={n} m={m} seed={seed} incorrect");
            total += run.report.metrics.max_good_field_elements() as f64;
        }
        means.push(total / seeds as f64);
    }
    let ratios: Vec<f64> = means.windows(2).map(|w| w[1] / w[0]).collect();
    let pass = ratios.iter().all(|r| (1.6..=2.6).contains(r));
    let pts: Vec<String> = ms.iter().zip(&means).map(|(m, v)| format!("m={m}: {v:.0}")).collect();
    let rs: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    verdict(
        pass,
        format!(
            "max field elements per good player {}; ratios per doubling [{}] (band 1.6..2.6; quorum formation not simulated)",
            pts.join(", "),
            rs.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 8: latency against circuit depth.

fn depth_criterion() -> Verdict {
    let n = 32;
    let t = 3;
    let depths = [2u32, 4, 8];
    let mut means = Vec::new();
    let mut measured = Vec::new();
    for &d in &depths {
        let mut total = 0.0;
        let mut circuit_depth = 0;
        for seed in 0..100u64 {
            let run = mpc_run(n, t, Family::Layered { depth: d }, vec![Behavior::Crash], strategy_for(seed), seed);
            assert!(check_mpc(&run).0.is_empty(), "depth run d={d} seed={seed} incorrect");
            circuit_depth = run.graph.depth();
            total += run.report.max_chain_depth() as f64;
        }
        means.push(total / 100.0);
        measured.push(circuit_depth);
    }
    // within 1.5 of proportional growth from the shallowest circuit
    let base = (measured[0] as f64, means[0]);
    let pass = measured.iter().zip(&means).all(|(&d, &c)| c / base.1 <= 1.5 * d as f64 / base.0);
    let pts: Vec<String> = measured.iter().zip(&means).map(|(d, c)| format!("d={d}: {c:.1}")).collect();
    verdict(pass, format!("mean max chain depth {} (bound: growth ≤ 1.5 × d/d0)", pts.join(", ")))
}

// ---------------------------------------------------------------------------
// Criterion 9: quorum goodness and load.

fn quorum_criterion() -> Verdict {
    let (n, t) = (64usize, 7usize);
    let params = QuorumParams::default();
    let q = (params.c * log2(n)).ceil() as usize;
    let bound = (t as f64 / n as f64 + params.delta) * q as f64;
    let load_cap = params.c_lb * log2(n);
    let (mut accepted, mut rejected, mut violations) = (0usize, 0usize, 0usize);
    let mut worst_bad = 0usize;
    let mut worst_load = 0usize;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x90);
        let mut ps: Vec<PlayerId> = (0..n as PlayerId).collect();
        ps.shuffle(&mut rng);
        let bad: BTreeSet<PlayerId> = ps[..t].iter().copied().collect();
        let Ok(table) = create_quorums(n, &bad, params, seed) else {
            rejected += 1;
            continue;
        };
        accepted += 1;
        let mut load = vec![0usize; n];
        let mut ok = table.quorums.len() == n;
        for members in &table.quorums {
            let distinct: BTreeSet<_> = members.iter().collect();
            let b = members.iter().filter(|p| bad.contains(p)).count();
            worst_bad = worst_bad.max(b);
            ok &= members.len() == q && distinct.len() == q && b as f64 <= bound;
            for &p in members {
                load[p as usize] += 1;
            }
        }
        let max_load = load.into_iter().max().unwrap_or(0);
        worst_load = worst_load.max(max_load);
        ok &= max_load as f64 <= load_cap;
        if !ok {
            violations += 1;
        }
    }
    verdict(
        violations == 0 && accepted > 0,
        format!(
            "{accepted} tables accepted, {rejected} rejected; {violations} violations; \
             worst bad per quorum {worst_bad} (bound {bound:.2}, q={q}), worst load {worst_load} (cap {load_cap:.0})"
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let wanted: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let mut results: Vec<(u32, &str, Verdict, f64)> = Vec::new();
    let mut timed = |f: &mut dyn FnMut() -> Vec<(u32, &'static str, Verdict)>| {
        let t0 = Instant::now();
        let out = f();
        let secs = t0.elapsed().as_secs_f64();
        for (k, name, o) in out {
            println!("criterion {k} [{}] {name}: {} ({secs:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            results.push((k, name, o, secs));
        }
    };
    if want(1) || want(2) {
        timed(&mut || {
            let (a, b) = counter_criteria();
            vec![(1, "counter correctness", a), (2, "counter load and latency", b)]
        });
    }
    if want(3) || want(4) {
        timed(&mut || {
            let (a, b) = mpc_criteria();
            vec![(3, "end-to-end correctness", a), (4, "mask invariant", b)]
        });
    }
    if want(5) {
        timed(&mut || vec![(5, "AVSS binding and secrecy", avss_criterion())]);
    }
    if want(6) {
        timed(&mut || vec![(6, "quorum-internal MPC and agreement", hw_criterion())]);
    }
    if want(7) {
        timed(&mut || vec![(7, "communication scaling", scaling_criterion())]);
    }
    if want(8) {
        timed(&mut || vec![(8, "depth latency", depth_criterion())]);
    }
    if want(9) {
        timed(&mut || vec![(9, "quorum goodness", quorum_criterion())]);
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
