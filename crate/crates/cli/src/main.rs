//! `pangea-bench`: runs the engine micro-benchmarks and writes one CSV row
//! per phase.

mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pangea_engine::bench::{
    bench_hash, bench_recovery, bench_seq, bench_shuffle, paging_compare, BenchResult, EngineSetup, HashBench,
    KeyDistribution, RecoveryBench, SeqBench, ShuffleBench,
};
use pangea_engine::{AllocatorKind, CostModelParams, Durability, ExecMode, PolicyKind, WriteCostForm};
use settings::{FileConfig, Size};

const MIB: u64 = 1 << 20;

#[derive(Parser, Debug)]
#[command(name = "pangea-bench", version, about = "Counter-based storage engine benchmarks with CSV output")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// key=value file; flags override its entries
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Buffer pool size, e.g. 512MiB
    #[arg(long, global = true)]
    memory: Option<Size>,
    /// segregated-fit or slab
    #[arg(long, global = true)]
    allocator: Option<String>,
    /// data-aware, lru, mru, dbmin-adaptive, dbmin-1 or dbmin-1000
    #[arg(long, global = true)]
    policy: Option<String>,
    /// Reuse horizon t in ticks
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Use min(lambda t, 1) for the reuse probability
    #[arg(long, global = true)]
    linear_approx: bool,
    /// divided or times
    #[arg(long, global = true)]
    write_cost_form: Option<String>,
    /// Comma-separated directories for page files
    #[arg(long, global = true, value_delimiter = ',')]
    storage_dirs: Vec<PathBuf>,
    /// Desk scale: 64 MiB pages become 1 MiB, object counts and memory shrink 1000x
    #[arg(long, global = true)]
    desk: bool,
    /// CSV output path
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run data-parallel steps on one thread
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sequential write, repeated scans, delete
    Seq(SeqArgs),
    /// Hash-routed shuffle with read-back verification
    Shuffle(ShuffleArgs),
    /// Sum aggregation of <string, int> pairs
    HashAgg(HashArgs),
    /// The sequential benchmark under several policies
    PagingCompare(PagingArgs),
    /// Replica group build, node failure and recovery
    RecoveryDrill(RecoveryArgs),
}

#[derive(Args, Debug)]
struct SeqArgs {
    #[arg(long)]
    objects: Option<u64>,
    #[arg(long)]
    object_size: Option<usize>,
    /// write-back or write-through
    #[arg(long)]
    durability: Option<String>,
    #[arg(long)]
    page_size: Option<Size>,
    #[arg(long)]
    scans: Option<usize>,
}

#[derive(Args, Debug)]
struct PagingArgs {
    #[command(flatten)]
    seq: SeqArgs,
    /// Comma-separated policies; all by default
    #[arg(long)]
    policies: Option<String>,
}

#[derive(Args, Debug)]
struct ShuffleArgs {
    #[arg(long)]
    writers: Option<usize>,
    #[arg(long)]
    readers: Option<usize>,
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    mb_per_thread: Option<f64>,
    #[arg(long)]
    page_size: Option<Size>,
    #[arg(long)]
    small_page_size: Option<Size>,
}

#[derive(Args, Debug)]
struct HashArgs {
    #[arg(long)]
    pairs: Option<u64>,
    /// Distinct keys; pairs / 10 by default
    #[arg(long)]
    key_space: Option<u64>,
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    page_size: Option<Size>,
    /// uniform or zipf
    #[arg(long)]
    distribution: Option<String>,
    #[arg(long)]
    zipf_s: Option<f64>,
}

#[derive(Args, Debug)]
struct RecoveryArgs {
    /// Comma-separated cluster sizes
    #[arg(long)]
    nodes: Option<String>,
    #[arg(long)]
    objects: Option<u64>,
    /// Runs per cluster size, seeds counting up from --seed
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    mem_per_node: Option<Size>,
    #[arg(long)]
    page_size: Option<Size>,
}

const KNOWN_KEYS: &[&str] = &[
    "memory", "allocator", "policy", "horizon", "linear-approx", "write-cost-form", "storage-dirs", "desk", "out",
    "seed", "sequential", "objects", "object-size", "durability", "page-size", "scans", "policies", "writers",
    "readers", "partitions", "mb-per-thread", "small-page-size", "pairs", "key-space", "distribution", "zipf-s",
    "nodes", "seeds", "mem-per-node",
];

/// Full-scale defaults and their desk-scale reduction.
struct Scale {
    desk: bool,
}

impl Scale {
    fn count(&self, full: u64) -> u64 {
        if self.desk {
            (full / 1000).max(1)
        } else {
            full
        }
    }

    fn page(&self, full: u64) -> u64 {
        if self.desk {
            (full / 64).max(4096)
        } else {
            full
        }
    }

    fn memory(&self, full: u64) -> u64 {
        if self.desk {
            full / 1000
        } else {
            full
        }
    }
}

struct Resolved {
    file: FileConfig,
    scale: Scale,
    setup: EngineSetup,
    seed: u64,
    exec: ExecMode,
    out: Option<PathBuf>,
}

fn parse_policy(s: &str) -> Result<PolicyKind> {
    PolicyKind::parse(s.trim()).ok_or_else(|| {
        anyhow!("unknown policy `{s}` (expected one of {})", PolicyKind::ALL.map(|p| p.name()).join(", "))
    })
}

fn resolve(common: &Common) -> Result<Resolved> {
    let file = match &common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    for k in file.unknown_keys(KNOWN_KEYS) {
        eprintln!("warning: unknown config key `{k}`");
    }
    let scale = Scale { desk: file.pick_bool(common.desk, "desk")? };
    let memory = file.pick_size(common.memory, "memory")?.unwrap_or(scale.memory(10 << 30));
    let allocator = match file.pick(common.allocator.clone(), "allocator")?.as_deref() {
        None | Some("segregated-fit") => AllocatorKind::SegregatedFit,
        Some("slab") => AllocatorKind::Slab,
        Some(other) => bail!("unknown allocator `{other}` (segregated-fit or slab)"),
    };
    let policy = match file.pick(common.policy.clone(), "policy")? {
        Some(p) => parse_policy(&p)?,
        None => PolicyKind::DataAware,
    };
    let write_cost_form = match file.pick(common.write_cost_form.clone(), "write-cost-form")?.as_deref() {
        None | Some("times") => WriteCostForm::TimesVw,
        Some("divided") => WriteCostForm::DividedByVw,
        Some(other) => bail!("unknown write cost form `{other}` (divided or times)"),
    };
    let cost = CostModelParams {
        horizon_t: file.pick(common.horizon, "horizon")?.unwrap_or(1.0),
        use_linear_approx: file.pick_bool(common.linear_approx, "linear-approx")?,
        write_cost_form,
    };
    cost.validate()?;
    let storage_dirs = if common.storage_dirs.is_empty() {
        file.raw("storage-dirs").map(|v| v.split(',').map(|d| PathBuf::from(d.trim())).collect()).unwrap_or_default()
    } else {
        common.storage_dirs.clone()
    };
    let exec = if file.pick_bool(common.sequential, "sequential")? { ExecMode::Sequential } else { ExecMode::Parallel };
    let setup = EngineSetup { memory, allocator, policy, cost, storage_dirs };
    Ok(Resolved {
        seed: file.pick(common.seed, "seed")?.unwrap_or(42),
        out: file.pick(common.out.clone(), "out")?,
        file,
        scale,
        setup,
        exec,
    })
}

fn seq_config(r: &Resolved, a: &SeqArgs) -> Result<SeqBench> {
    let f = &r.file;
    let durability = match f.pick(a.durability.clone(), "durability")?.as_deref() {
        None | Some("write-back") => Durability::WriteBack,
        Some("write-through") => Durability::WriteThrough,
        Some(other) => bail!("unknown durability `{other}` (write-back or write-through)"),
    };
    Ok(SeqBench {
        num_objects: f.pick(a.objects, "objects")?.unwrap_or(r.scale.count(160_000_000)),
        object_size: f.pick(a.object_size, "object-size")?.unwrap_or(80),
        durability,
        page_size: f.pick_size(a.page_size, "page-size")?.unwrap_or(r.scale.page(64 * MIB)),
        scans: f.pick(a.scans, "scans")?.unwrap_or(5),
        setup: r.setup.clone(),
    })
}

fn run(cli: Cli) -> Result<Vec<BenchResult>> {
    let r = resolve(&cli.common)?;
    let f = &r.file;
    Ok(match &cli.command {
        Command::Seq(a) => vec![bench_seq(&seq_config(&r, a)?)?],
        Command::PagingCompare(a) => {
            let policies = match f.pick(a.policies.clone(), "policies")? {
                Some(list) => list.split(',').map(parse_policy).collect::<Result<Vec<_>>>()?,
                None => PolicyKind::ALL.to_vec(),
            };
            paging_compare(&seq_config(&r, &a.seq)?, &policies)?
        }
        Command::Shuffle(a) => {
            let page_size = f.pick_size(a.page_size, "page-size")?.unwrap_or(r.scale.page(64 * MIB));
            let cfg = ShuffleBench {
                writers: f.pick(a.writers, "writers")?.unwrap_or(4),
                readers: f.pick(a.readers, "readers")?.unwrap_or(4),
                partitions: f.pick(a.partitions, "partitions")?.unwrap_or(4),
                mb_per_thread: f.pick(a.mb_per_thread, "mb-per-thread")?.unwrap_or(if r.scale.desk { 1.024 } else { 1024.0 }),
                page_size,
                small_page_size: f.pick_size(a.small_page_size, "small-page-size")?.unwrap_or(page_size / 4),
                seed: r.seed,
                setup: r.setup.clone(),
            };
            vec![bench_shuffle(&cfg)?]
        }
        Command::HashAgg(a) => {
            let pairs = f.pick(a.pairs, "pairs")?.unwrap_or(r.scale.count(100_000_000));
            let distribution = match f.pick(a.distribution.clone(), "distribution")?.as_deref() {
                None | Some("uniform") => KeyDistribution::Uniform,
                Some("zipf") => KeyDistribution::Zipf { s: f.pick(a.zipf_s, "zipf-s")?.unwrap_or(1.1) },
                Some(other) => bail!("unknown distribution `{other}` (uniform or zipf)"),
            };
            let cfg = HashBench {
                num_pairs: pairs,
                key_space: f.pick(a.key_space, "key-space")?.unwrap_or((pairs / 10).max(1)),
                partitions: f.pick(a.partitions, "partitions")?.unwrap_or(200),
                page_size: f.pick_size(a.page_size, "page-size")?.unwrap_or(r.scale.page(MIB)),
                distribution,
                seed: r.seed,
                exec: r.exec,
                setup: r.setup.clone(),
            };
            vec![bench_hash(&cfg)?]
        }
        Command::RecoveryDrill(a) => {
            let nodes: Vec<usize> = f
                .pick(a.nodes.clone(), "nodes")?
                .unwrap_or_else(|| "3,5,10".into())
                .split(',')
                .map(|n| n.trim().parse::<usize>().with_context(|| format!("bad node count `{n}`")))
                .collect::<Result<_>>()?;
            let objects = f.pick(a.objects, "objects")?.unwrap_or(r.scale.count(3_000_000));
            let seeds = f.pick(a.seeds, "seeds")?.unwrap_or(1);
            let mut out = Vec::new();
            for &k in &nodes {
                for s in 0..seeds {
                    let mut cfg = RecoveryBench::new(k, objects, r.seed + s);
                    cfg.exec = r.exec;
                    if let Some(m) = f.pick_size(a.mem_per_node, "mem-per-node")? {
                        cfg.mem_per_node = m;
                    }
                    if let Some(p) = f.pick_size(a.page_size, "page-size")? {
                        cfg.page_size = p;
                    }
                    out.push(bench_recovery(&cfg)?);
                }
            }
            out
        }
    })
    .and_then(|results| {
        if let Some(path) = &r.out {
            write_csv(path, &results)?;
        }
        Ok(results)
    })
}

const HEADER: [&str; 14] = [
    "benchmark",
    "run",
    "status",
    "verified",
    "phase",
    "wall_seconds",
    "pages_loaded",
    "pages_evicted",
    "bytes_written",
    "bytes_read",
    "spills",
    "config",
    "metrics",
    "detail",
];

fn write_csv(path: &std::path::Path, results: &[BenchResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(HEADER)?;
    for (run, r) in results.iter().enumerate() {
        let status = format!("{:?}", r.status);
        let config = serde_json::to_string(&r.config)?;
        let metrics = serde_json::to_string(&r.metrics)?;
        let common = |phase: &str, nums: [String; 6]| -> Vec<String> {
            let mut row = vec![r.benchmark.clone(), run.to_string(), status.clone(), r.verified.to_string(), phase.to_string()];
            row.extend(nums);
            row.extend([config.clone(), metrics.clone(), r.detail.clone()]);
            row
        };
        if r.phases.is_empty() {
            w.write_record(common("-", Default::default()))?;
        }
        for p in &r.phases {
            w.write_record(common(
                &p.phase,
                [
                    format!("{:.6}", p.wall_seconds),
                    p.pages_loaded.to_string(),
                    p.pages_evicted.to_string(),
                    p.bytes_written.to_string(),
                    p.bytes_read.to_string(),
                    p.spills.to_string(),
                ],
            ))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn report(r: &BenchResult) {
    let policy = r.config.get("policy").map_or("", String::as_str);
    let verdict = match (r.ok(), r.verified) {
        (true, true) => "ok",
        (true, false) => "blocked",
        _ => "FAILED",
    };
    println!(
        "{:<15} {:<15} {verdict:<8} loaded={} written={} read={} spills={}{}",
        r.benchmark,
        policy,
        r.sum("", |p| p.pages_loaded),
        r.sum("", |p| p.bytes_written),
        r.sum("", |p| p.bytes_read),
        r.sum("", |p| p.spills),
        if r.detail.is_empty() { String::new() } else { format!(" ({})", r.detail) },
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(results) => {
            results.iter().for_each(report);
            if results.iter().all(BenchResult::ok) {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: a self-check failed");
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
