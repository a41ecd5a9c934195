//! Parameter sweeps, aggregation, trend fits and post-run audits.
//!
//! A grid (JSON) expands into cells; every cell runs one configuration over
//! a list of seeds and aggregates per-run metrics. The report carries a
//! SHA-256 hash of the canonical grid so results can be matched to inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::circuit::run::{audit_masks, quorum_params_for, run_mpc, CircuitSource, MpcConfig, MpcReport, NodeAudit};
use crate::circuit::Family;
use crate::field::Field;
use crate::hwmpc::standalone::run_hw_copies;
use crate::hwmpc::{HwCircuit, HwGate, HwParams, InputOwner, RoleAssignment};
use crate::config::SUPPORTED_MODULI;
use crate::simnet::{max_bad, Behavior, PlayerId, Strategy};
use crate::tcounter::{audit_events_at, build_or_flat, run_counter, CounterEvent, CounterLayout, ThresholdMode};
use crate::with_field;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A failed audit and the first event (or record) at which it fails.
#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[error("{audit} audit failed at event {index}: {detail}")]
pub struct AuditFailure {
    pub audit: String,
    pub index: usize,
    pub detail: String,
}

// ---------------------------------------------------------------------------
// Audits

/// Counter soundness and flag lineage.
pub fn audit_counter(layout: &CounterLayout, events: &[CounterEvent], ones: &BTreeSet<u32>) -> Result<(), AuditFailure> {
    audit_events_at(layout, events, ones)
        .map_err(|(index, detail)| AuditFailure { audit: "counter soundness".into(), index, detail })
}

/// Mask invariant over per-node records.
pub fn audit_mask(modulus: u64, nodes: &[NodeAudit]) -> Result<(), AuditFailure> {
    for (i, r) in nodes.iter().enumerate() {
        if let Err(detail) = audit_masks(modulus, std::slice::from_ref(r)) {
            return Err(AuditFailure { audit: "mask invariant".into(), index: i, detail });
        }
    }
    Ok(())
}

/// `|S| ≥ n − t` and the reported size matches the audited inclusion bits.
pub fn audit_size(n: usize, t: usize, in_s: &[bool], reported: Option<u32>) -> Result<(), AuditFailure> {
    let size = in_s.iter().filter(|&&b| b).count();
    let fail = |detail: String| Err(AuditFailure { audit: "size of S".into(), index: 0, detail });
    match reported {
        None => fail("no size reported".into()),
        Some(r) if r as usize != size => fail(format!("reported {r}, audited {size}")),
        Some(_) if size + t < n => fail(format!("|S| = {size} < n - t = {}", n - t)),
        Some(_) => Ok(()),
    }
}

/// All audits that apply to one end-to-end report.
pub fn audit_report(r: &MpcReport) -> Vec<AuditFailure> {
    let mut out = Vec::new();
    if let Err(e) = audit_mask(r.modulus, &r.nodes) {
        out.push(e);
    }
    if let Err(e) = audit_size(r.n, r.t, &r.in_s, r.size_s) {
        out.push(e);
    }
    if r.output != Some(r.oracle) {
        out.push(AuditFailure {
            audit: "output".into(),
            index: 0,
            detail: format!("output {:?}, oracle {}", r.output, r.oracle),
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Agg {
    pub mean: f64,
    pub max: f64,
    pub p99: f64,
}

impl Agg {
    pub fn of(xs: &[f64]) -> Agg {
        if xs.is_empty() {
            return Agg::default();
        }
        let mut v = xs.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let rank = ((0.99 * v.len() as f64).ceil() as usize).clamp(1, v.len());
        Agg { mean: v.iter().sum::<f64>() / v.len() as f64, max: v[v.len() - 1], p99: v[rank - 1] }
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

// ---------------------------------------------------------------------------
// Grids

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn list(&self) -> Vec<u64> {
        match self {
            Seeds::Count(k) => (0..*k).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Mpc,
    Counter,
    /// One quorum-internal evaluation of `a · b` on pre-shared inputs, with
    /// `n` roles.
    Hwmpc,
}

fn default_kind() -> CellKind {
    CellKind::Mpc
}
fn default_strategies() -> Vec<String> {
    vec!["random".into()]
}
fn default_behaviors() -> Vec<String> {
    vec!["crash".into()]
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_modulus() -> u64 {
    SUPPORTED_MODULI[0]
}
fn default_tau() -> f64 {
    0.875
}
fn default_copies() -> Vec<usize> {
    vec![1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(default = "default_kind")]
    pub kind: CellKind,
    pub n: Vec<usize>,
    /// Circuit families by name (`addition_tree`, `inner_product`,
    /// `random_dag:M`, `layered:D`).
    #[serde(default)]
    pub families: Vec<String>,
    /// Extra random-DAG cells, one per gate count.
    #[serde(default)]
    pub m: Vec<usize>,
    /// Behavior names; `mixed` deals crash/equivocate/wrongshare in turn.
    #[serde(default = "default_behaviors")]
    pub behaviors: Vec<String>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    pub seeds: Seeds,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub t: Option<usize>,
    #[serde(default = "default_modulus")]
    pub modulus: u64,
    /// Counter cells: τ = ⌈fraction · n⌉ and every player's bit is set.
    #[serde(default = "default_tau")]
    pub tau_fraction: f64,
    /// Hwmpc cells: independent copies run side by side.
    #[serde(default = "default_copies")]
    pub copies: Vec<usize>,
}

impl Grid {
    pub fn from_json(s: &str) -> Result<Grid, HarnessError> {
        let g: Grid = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !SUPPORTED_MODULI.contains(&self.modulus) {
            return Err(HarnessError::Grid(format!("unsupported modulus {}", self.modulus)));
        }
        for s in &self.strategies {
            Strategy::parse(s).ok_or_else(|| HarnessError::Grid(format!("unknown strategy '{s}'")))?;
        }
        for b in &self.behaviors {
            parse_behaviors(b).ok_or_else(|| HarnessError::Grid(format!("unknown behavior '{b}'")))?;
        }
        for f in &self.families {
            Family::parse(f).ok_or_else(|| HarnessError::Grid(format!("unknown family '{f}'")))?;
        }
        if self.copies.is_empty() || self.copies.contains(&0) {
            return Err(HarnessError::Grid("copies must be positive".into()));
        }
        if self.kind == CellKind::Mpc && self.families.is_empty() && self.m.is_empty() {
            return Err(HarnessError::Grid("mpc grid needs families or m".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("grid serialises");
        Sha256::digest(canon.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        let mut families: Vec<Family> = self.families.iter().filter_map(|f| Family::parse(f)).collect();
        families.extend(self.m.iter().map(|&m| Family::RandomDag { m }));
        for &n in &self.n {
            let t = self.t.unwrap_or_else(|| max_bad(n, self.epsilon));
            for s in &self.strategies {
                let strategy = Strategy::parse(s).expect("validated");
                match self.kind {
                    CellKind::Counter => cells.push(Cell {
                        kind: CellKind::Counter,
                        n,
                        t,
                        family: None,
                        behaviors: Vec::new(),
                        behavior_name: "honest".into(),
                        strategy: strategy.clone(),
                        seeds: self.seeds.list(),
                        modulus: self.modulus,
                        tau: (self.tau_fraction * n as f64).ceil() as usize,
                        copies: 1,
                    }),
                    CellKind::Hwmpc => {
                        for b in &self.behaviors {
                            for &copies in &self.copies {
                                cells.push(Cell {
                                    kind: CellKind::Hwmpc,
                                    n,
                                    t,
                                    family: None,
                                    behaviors: parse_behaviors(b).expect("validated"),
                                    behavior_name: b.clone(),
                                    strategy: strategy.clone(),
                                    seeds: self.seeds.list(),
                                    modulus: self.modulus,
                                    tau: 0,
                                    copies,
                                });
                            }
                        }
                    }
                    CellKind::Mpc => {
                        for &f in &families {
                            for b in &self.behaviors {
                                cells.push(Cell {
                                    kind: CellKind::Mpc,
                                    n,
                                    t,
                                    family: Some(f),
                                    behaviors: parse_behaviors(b).expect("validated"),
                                    behavior_name: b.clone(),
                                    strategy: strategy.clone(),
                                    seeds: self.seeds.list(),
                                    modulus: self.modulus,
                                    tau: n - t,
                                    copies: 1,
                                });
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

pub fn parse_behaviors(s: &str) -> Option<Vec<Behavior>> {
    if s.eq_ignore_ascii_case("mixed") {
        return Some(vec![Behavior::Crash, Behavior::Equivocate, Behavior::WrongShare]);
    }
    s.split('+').map(Behavior::parse).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CellKind,
    pub n: usize,
    pub t: usize,
    pub family: Option<Family>,
    pub behaviors: Vec<Behavior>,
    pub behavior_name: String,
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub modulus: u64,
    pub tau: usize,
    pub copies: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub kind: String,
    pub n: usize,
    pub t: usize,
    pub circuit: String,
    /// Gate count (MPC) or τ (counter).
    pub size: usize,
    pub behavior: String,
    pub strategy: String,
    pub copies: usize,
    pub runs: usize,
    pub passed: usize,
    /// Max per good player field elements sent.
    pub field_elements: Agg,
    /// Max per good player messages sent.
    pub msgs: Agg,
    pub chain_depth: Agg,
    pub errors: Vec<String>,
}

impl Cell {
    pub fn run(&self) -> CellReport {
        let mut rep = CellReport {
            kind: match self.kind {
                CellKind::Mpc => "mpc".into(),
                CellKind::Counter => "counter".into(),
                CellKind::Hwmpc => "hwmpc".into(),
            },
            n: self.n,
            t: self.t,
            circuit: match self.kind {
                CellKind::Mpc => self.family.map(|f| f.name()).unwrap_or_default(),
                CellKind::Counter => "counter".into(),
                CellKind::Hwmpc => "shared_mul".into(),
            },
            copies: self.copies,
            behavior: self.behavior_name.clone(),
            strategy: self.strategy.name(),
            ..Default::default()
        };
        let (mut fe, mut msgs, mut depth) = (Vec::new(), Vec::new(), Vec::new());
        for &seed in &self.seeds {
            match self.run_seed(seed) {
                Ok(r) => {
                    rep.size = r.size;
                    rep.runs += 1;
                    rep.passed += r.ok as usize;
                    fe.push(r.fe as f64);
                    msgs.push(r.msgs as f64);
                    depth.push(r.depth as f64);
                    if !r.ok && rep.errors.len() < 5 {
                        rep.errors.push(format!("seed {seed}: {}", r.why));
                    }
                }
                Err(e) => {
                    rep.runs += 1;
                    if rep.errors.len() < 5 {
                        rep.errors.push(format!("seed {seed}: {e}"));
                    }
                }
            }
        }
        rep.field_elements = Agg::of(&fe);
        rep.msgs = Agg::of(&msgs);
        rep.chain_depth = Agg::of(&depth);
        rep
    }

    fn run_seed(&self, seed: u64) -> Result<SeedResult, String> {
        match self.kind {
            CellKind::Counter => {
                let layout = Arc::new(build_or_flat(self.n, self.tau, ThresholdMode::Balanced).map_err(|e| e.to_string())?);
                let ones: BTreeSet<u32> = (1..=self.n as u32).collect();
                let r = run_counter(layout, &ones, self.strategy.clone(), seed).map_err(|e| e.to_string())?;
                let m = &r.metrics;
                let per_actor = m.players.iter().map(|p| p.msgs_sent.max(p.msgs_received)).max().unwrap_or(0);
                let ok = r.all_done && r.audit.is_ok();
                Ok(SeedResult {
                    size: self.tau,
                    ok,
                    why: r.audit.err().unwrap_or_else(|| "Done did not reach every player".into()),
                    fe: m.max_good_field_elements(),
                    msgs: per_actor,
                    depth: m.max_chain_depth_delivered,
                })
            }
            CellKind::Hwmpc => with_field!(self.modulus, F => self.run_hw::<F>(seed)),
            CellKind::Mpc => {
                let family = self.family.expect("mpc cell has a family");
                let cfg = MpcConfig {
                    behaviors: self.behaviors.clone(),
                    strategy: self.strategy.clone(),
                    circuit: CircuitSource::Family(family),
                    quorum: quorum_params_for(self.n),
                    ..MpcConfig::new(self.n, self.t, family, seed)
                };
                let r = with_field!(self.modulus, F => run_mpc::<F>(&cfg)).map_err(|e| e.to_string())?;
                let audits = audit_report(&r);
                let ok = r.passed() && audits.is_empty();
                let why = r.failures.first().cloned().or_else(|| audits.first().map(|a| a.to_string())).unwrap_or_default();
                Ok(SeedResult {
                    size: r.m,
                    ok,
                    why,
                    fe: r.metrics.max_good_field_elements(),
                    msgs: r.metrics.max_good_msgs_sent(),
                    depth: r.max_chain_depth(),
                })
            }
        }
    }
}

impl Cell {
    fn run_hw<F: Field>(&self, seed: u64) -> Result<SeedResult, String> {
        let params = HwParams::for_quorum(self.n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bad: BTreeMap<PlayerId, Behavior> = if self.behaviors.iter().all(|b| *b == Behavior::Honest) {
            BTreeMap::new()
        } else {
            rand::seq::index::sample(&mut rng, self.n, self.t.min(self.n))
                .into_iter()
                .enumerate()
                .map(|(i, p)| (p as PlayerId, self.behaviors[i % self.behaviors.len()]))
                .collect()
        };
        let (a, b) = (F::random(&mut rng), F::random(&mut rng));
        let circuit = HwCircuit {
            inputs: vec![InputOwner::Shared, InputOwner::Shared],
            gates: vec![HwGate::Input(0), HwGate::Input(1), HwGate::Mul(0, 1), HwGate::Output(2)],
        };
        let r = run_hw_copies(params, circuit, &[a, b], RoleAssignment::identity(self.n), &bad, self.strategy.clone(), seed, self.copies)
            .map_err(|e| e.to_string())?;
        let ok = r.outputs.iter().all(|o| o.as_deref() == Some(&[a * b][..]));
        Ok(SeedResult {
            size: self.copies,
            ok,
            why: if ok { String::new() } else { "output differs from a * b".into() },
            fe: r.metrics.max_good_field_elements(),
            msgs: r.metrics.max_good_msgs_sent(),
            depth: r.rounds as u32,
        })
    }
}

struct SeedResult {
    size: usize,
    ok: bool,
    why: String,
    fe: u64,
    msgs: u64,
    depth: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    /// Cells sharing everything but the gate count.
    pub group: String,
    /// `(m, mean max field elements)` points.
    pub points: Vec<(f64, f64)>,
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub grid: Grid,
    pub cells: Vec<CellReport>,
    pub fits: Vec<Fit>,
}

/// Runs every cell of the grid; cell failures are recorded, not fatal.
pub fn sweep(grid: &Grid) -> Report {
    let cells: Vec<CellReport> = grid.cells().iter().map(Cell::run).collect();
    let fits = fit_random_dags(&cells);
    Report { config_hash: grid.hash(), grid: grid.clone(), cells, fits }
}

/// Log-log slope of max field elements against gate count for random-DAG
/// cells grouped by `(n, behavior, strategy)`.
pub fn fit_random_dags(cells: &[CellReport]) -> Vec<Fit> {
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for c in cells.iter().filter(|c| c.kind == "mpc" && c.circuit.starts_with("random_dag") && c.runs > 0) {
        let key = format!("n={} behavior={} strategy={}", c.n, c.behavior, c.strategy);
        let pt = (c.size as f64, c.field_elements.mean);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(pt),
            None => groups.push((key, vec![pt])),
        }
    }
    groups
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(group, points)| Fit { slope: loglog_slope(&points), group, points })
        .collect()
}

pub const CSV_HEADER: &str = "kind,n,t,circuit,size,behavior,strategy,copies,runs,passed,\
fe_mean,fe_max,fe_p99,msgs_mean,msgs_max,msgs_p99,depth_mean,depth_max,depth_p99";

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{:.2},{},{},{:.2},{},{},{:.2},{},{}",
                c.kind,
                c.n,
                c.t,
                c.circuit,
                c.size,
                c.behavior,
                c.strategy,
                c.copies,
                c.runs,
                c.passed,
                c.field_elements.mean,
                c.field_elements.max,
                c.field_elements.p99,
                c.msgs.mean,
                c.msgs.max,
                c.msgs.p99,
                c.chain_depth.mean,
                c.chain_depth.max,
                c.chain_depth.p99
            );
        }
        s
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
