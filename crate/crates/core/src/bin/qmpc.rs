use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use quorum_mpc::circuit::run::{run_mpc, CircuitSource};
use quorum_mpc::circuit::{CircuitGraph, Family};
use quorum_mpc::config::RunConfig;
use quorum_mpc::harness::{audit_counter, audit_report, parse_behaviors, sweep, Grid};
use quorum_mpc::tcounter::{build_or_flat, run_counter, ThresholdMode};
use quorum_mpc::{with_field, Strategy};

#[derive(Parser)]
#[command(name = "qmpc", version, about = "Asynchronous quorum-based MPC simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one end-to-end computation.
    Run {
        /// Circuit file, or a family: addition_tree, inner_product,
        /// random_dag:M, layered:D.
        #[arg(long)]
        circuit: Option<String>,
        /// Key-value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed from the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// honest, crash, equivocate, wrongshare, colluding, mixed, or a
        /// `+`-joined list dealt round-robin to the bad players.
        #[arg(long, default_value = "crash")]
        adversary: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the threshold counter alone and write its lineage trace.
    Counter {
        #[arg(long)]
        n: usize,
        /// Threshold; defaults to ⌈7n/8⌉.
        #[arg(long)]
        tau: Option<usize>,
        /// Number of set bits (random players); defaults to τ.
        #[arg(long)]
        ones: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "random")]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a parameter grid and write report.csv / report.json.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { circuit, config, seed, adversary, out } => run(circuit, config, seed, &adversary, &out),
        Cmd::Counter { n, tau, ones, seed, strategy, out } => run_counter_cmd(n, tau, ones, seed, &strategy, &out),
        Cmd::Sweep { grid, out } => run_sweep(&grid, &out),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn circuit_source(arg: Option<String>, cfg: &RunConfig) -> Res<CircuitSource> {
    match arg {
        Some(s) if Path::new(&s).is_file() => Ok(CircuitSource::Graph(CircuitGraph::parse(&std::fs::read_to_string(&s)?)?)),
        Some(s) => Family::parse(&s).map(CircuitSource::Family).ok_or_else(|| format!("unknown circuit '{s}'").into()),
        None => cfg.circuit.map(CircuitSource::Family).ok_or_else(|| "no circuit given".into()),
    }
}

fn run(circuit: Option<String>, config: Option<PathBuf>, seed: Option<u64>, adversary: &str, out: &Path) -> Res<bool> {
    let mut cfg = match config {
        Some(p) => RunConfig::parse(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let behaviors = parse_behaviors(adversary).ok_or_else(|| format!("unknown adversary '{adversary}'"))?;
    let source = circuit_source(circuit, &cfg)?;
    let mut mpc = cfg.mpc(source, behaviors);
    mpc.trace = true;
    let report = with_field!(cfg.modulus, F => run_mpc::<F>(&mpc))?;
    let audits = audit_report(&report);

    std::fs::create_dir_all(out)?;
    report.metrics.write_csv(BufWriter::new(File::create(out.join("metrics.csv"))?))?;
    let summary = serde_json::json!({
        "metrics": report.metrics.summary_json(),
        "report": &report,
        "audits": &audits,
        "config": cfg.to_text(),
    });
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let mut tr = BufWriter::new(File::create(out.join("trace.jsonl"))?);
    for e in report.trace.iter().flatten() {
        serde_json::to_writer(&mut tr, e)?;
        tr.write_all(b"\n")?;
    }
    tr.flush()?;
    if let Some(table) = &report.table {
        std::fs::write(out.join("quorums.json"), table.to_json())?;
    }

    let ok = report.passed() && audits.is_empty();
    println!(
        "n={} m={} t={} output={:?} oracle={} |S|={:?} max_fe={} depth={} {}",
        report.n,
        report.m,
        report.t,
        report.output,
        report.oracle,
        report.size_s,
        report.metrics.max_good_field_elements(),
        report.max_chain_depth(),
        if ok { "PASS" } else { "FAIL" }
    );
    for f in &report.failures {
        println!("  failure: {f}");
    }
    for a in &audits {
        println!("  audit: {a}");
    }
    Ok(ok)
}

fn run_counter_cmd(n: usize, tau: Option<usize>, ones: Option<usize>, seed: u64, strategy: &str, out: &Path) -> Res<bool> {
    let tau = tau.unwrap_or((7 * n).div_ceil(8));
    let k = ones.unwrap_or(tau).min(n);
    let strategy = Strategy::parse(strategy).ok_or_else(|| format!("unknown strategy '{strategy}'"))?;
    let layout = Arc::new(build_or_flat(n, tau, ThresholdMode::Balanced)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set: BTreeSet<u32> = rand::seq::index::sample(&mut rng, n, k).into_iter().map(|i| i as u32 + 1).collect();
    let r = run_counter(layout.clone(), &set, strategy, seed)?;

    std::fs::create_dir_all(out)?;
    r.metrics.write_csv(BufWriter::new(File::create(out.join("metrics.csv"))?))?;
    let mut ev = BufWriter::new(File::create(out.join("events.jsonl"))?);
    for e in &r.events {
        serde_json::to_writer(&mut ev, e)?;
        ev.write_all(b"\n")?;
    }
    ev.flush()?;
    std::fs::write(out.join("layout.json"), layout.to_json())?;
    let audit = audit_counter(&layout, &r.events, &set);
    let summary = serde_json::json!({
        "n": n,
        "tau": tau,
        "ones": k,
        "done": r.done_count,
        "all_done": r.all_done,
        "audit": audit.as_ref().err(),
        "metrics": r.metrics.summary_json(),
    });
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    // finishing is correct exactly when the threshold was reached
    let ok = audit.is_ok() && r.all_done == (k >= tau) && (k >= tau || r.done_count == 0);
    println!(
        "n={n} tau={tau} ones={k} done={}/{n} depth={} {}",
        r.done_count,
        r.metrics.max_chain_depth_delivered,
        if ok { "PASS" } else { "FAIL" }
    );
    if let Err(a) = audit {
        println!("  audit: {a}");
    }
    Ok(ok)
}

fn run_sweep(grid: &Path, out: &Path) -> Res<bool> {
    let grid = Grid::from_json(&std::fs::read_to_string(grid)?)?;
    let report = sweep(&grid);
    report.write(out)?;
    let mut ok = true;
    for c in &report.cells {
        ok &= c.passed == c.runs;
        println!(
            "{} n={} {} size={} {} {}: {}/{} passed, fe mean {:.1}",
            c.kind, c.n, c.circuit, c.size, c.behavior, c.strategy, c.passed, c.runs, c.field_elements.mean
        );
    }
    for f in &report.fits {
        println!("fit {}: slope {:?}", f.group, f.slope);
    }
    println!("config hash {}", report.config_hash);
    Ok(ok)
}
