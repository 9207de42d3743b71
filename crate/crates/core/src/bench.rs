//! Counter-based micro-benchmarks: sequential write and repeated scans,
//! shuffle, hash aggregation and a failure/recovery drill.
//!
//! Every run is single-threaded at the driver level so that, for a given
//! config and seed, the I/O counters are reproducible. Wall time is recorded
//! but never compared.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::Serialize;

use crate::buffer_pool::AllocatorKind;
use crate::cluster::{Cluster, ClusterConfig, DispatchStrategy};
use crate::engine::{Engine, EngineConfig, PoolStats};
use crate::error::{Error, Result};
use crate::file_store::IoStats;
use crate::locality::Durability;
use crate::paging::{CostModelParams, PolicyKind};
use crate::parallel::ExecMode;
use crate::placement::{partition_set, recover_node, register_replica, PartitionScheme};
use crate::services::hash::{decode_i64, sum_i64, HashConfig, VirtualHashBuffer};
use crate::services::sequential::{seq_get_iterators, SeqWriter};
use crate::services::shuffle::{Shuffle, ShuffleConfig};

const MIB: u64 = 1 << 20;

/// Pool and storage settings shared by the single-node benchmarks.
#[derive(Debug, Clone)]
pub struct EngineSetup {
    pub memory: u64,
    pub allocator: AllocatorKind,
    pub policy: PolicyKind,
    pub cost: CostModelParams,
    /// Each run gets a fresh subdirectory of every entry. Empty means a
    /// temporary directory.
    pub storage_dirs: Vec<PathBuf>,
}

impl EngineSetup {
    pub fn new(memory: u64, policy: PolicyKind) -> Self {
        EngineSetup {
            memory,
            allocator: AllocatorKind::SegregatedFit,
            policy,
            cost: CostModelParams::default(),
            storage_dirs: Vec::new(),
        }
    }

    fn open(&self) -> Result<(Vec<tempfile::TempDir>, Engine)> {
        let tmps = if self.storage_dirs.is_empty() {
            vec![tempfile::tempdir()?]
        } else {
            self.storage_dirs
                .iter()
                .map(|d| {
                    std::fs::create_dir_all(d)?;
                    tempfile::Builder::new().prefix("run").tempdir_in(d)
                })
                .collect::<std::io::Result<_>>()?
        };
        let mut cfg = EngineConfig::new(self.memory, tmps.iter().map(|t| t.path().to_path_buf()).collect())
            .with_policy(self.policy)
            .with_allocator(self.allocator);
        cfg.cost = self.cost;
        let engine = Engine::open(cfg)?;
        Ok((tmps, engine))
    }

    fn echo(&self, out: &mut BTreeMap<String, String>) {
        out.insert("memory".into(), self.memory.to_string());
        out.insert("allocator".into(), format!("{:?}", self.allocator));
        out.insert("policy".into(), self.policy.name().into());
        out.insert("horizon".into(), self.cost.horizon_t.to_string());
        out.insert("linear_approx".into(), self.cost.use_linear_approx.to_string());
        out.insert("write_cost_form".into(), format!("{:?}", self.cost.write_cost_form));
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PhaseResult {
    pub phase: String,
    pub wall_seconds: f64,
    pub pages_loaded: u64,
    pub pages_evicted: u64,
    pub bytes_written: u64,
    pub bytes_read: u64,
    pub spills: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Completed,
    /// The policy could not run in this much memory.
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub benchmark: String,
    pub config: BTreeMap<String, String>,
    pub status: Status,
    pub detail: String,
    pub phases: Vec<PhaseResult>,
    pub metrics: BTreeMap<String, f64>,
    /// Self-check outcome; meaningful only when completed.
    pub verified: bool,
}

impl BenchResult {
    fn new(benchmark: &str, config: BTreeMap<String, String>) -> Self {
        BenchResult {
            benchmark: benchmark.into(),
            config,
            status: Status::Completed,
            detail: String::new(),
            phases: Vec::new(),
            metrics: BTreeMap::new(),
            verified: false,
        }
    }

    /// A blocked policy is an outcome, not a failure.
    fn absorb(&mut self, outcome: Result<()>) -> Result<()> {
        match outcome {
            Err(e @ Error::PolicyBlocked { .. }) => {
                self.status = Status::Blocked;
                self.detail = e.to_string();
                self.verified = false;
                Ok(())
            }
            other => other,
        }
    }

    /// Passed its self-check, or was blocked.
    pub fn ok(&self) -> bool {
        self.status == Status::Blocked || self.verified
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseResult> {
        self.phases.iter().find(|p| p.phase == name)
    }

    /// Sum of a counter over phases whose name starts with `prefix`.
    pub fn sum(&self, prefix: &str, field: impl Fn(&PhaseResult) -> u64) -> u64 {
        self.phases.iter().filter(|p| p.phase.starts_with(prefix)).map(field).sum()
    }
}

struct Meter {
    start: Instant,
    pool: PoolStats,
    io: IoStats,
}

impl Meter {
    fn start(engine: &Engine) -> Self {
        Meter { start: Instant::now(), pool: engine.stats(), io: engine.io_stats() }
    }

    fn finish(self, engine: &Engine, phase: &str, spills: u64) -> PhaseResult {
        let (pool, io) = (engine.stats(), engine.io_stats());
        PhaseResult {
            phase: phase.into(),
            wall_seconds: self.start.elapsed().as_secs_f64(),
            pages_loaded: pool.pages_loaded - self.pool.pages_loaded,
            pages_evicted: pool.pages_evicted - self.pool.pages_evicted,
            bytes_written: io.bytes_written - self.io.bytes_written,
            bytes_read: io.bytes_read - self.io.bytes_read,
            spills,
        }
    }
}

fn byte_sum(r: &[u8]) -> u64 {
    r.iter().map(|&b| b as u64).sum()
}

/// Object `i` of the sequential benchmark: `size` printable bytes.
pub fn seq_object(i: u64, size: usize) -> Vec<u8> {
    (0..size).map(|j| b'a' + ((i as usize + j) % 26) as u8).collect()
}

// ----- sequential -----

#[derive(Debug, Clone)]
pub struct SeqBench {
    pub num_objects: u64,
    pub object_size: usize,
    pub durability: Durability,
    pub page_size: u64,
    pub scans: usize,
    pub setup: EngineSetup,
}

impl SeqBench {
    fn validate(&self) -> Result<()> {
        if self.object_size == 0 || self.page_size == 0 {
            return Err(Error::InvalidArgs("object and page size must be positive".into()));
        }
        Ok(())
    }

    fn echo(&self) -> BTreeMap<String, String> {
        let mut c = BTreeMap::new();
        self.setup.echo(&mut c);
        c.insert("num_objects".into(), self.num_objects.to_string());
        c.insert("object_size".into(), self.object_size.to_string());
        c.insert("durability".into(), format!("{:?}", self.durability));
        c.insert("page_size".into(), self.page_size.to_string());
        c.insert("scans".into(), self.scans.to_string());
        c
    }
}

/// Writes the objects, scans them `scans` times summing their bytes, then
/// deletes the set.
pub fn bench_seq(cfg: &SeqBench) -> Result<BenchResult> {
    cfg.validate()?;
    let (_tmp, engine) = cfg.setup.open()?;
    let mut res = BenchResult::new("seq", cfg.echo());
    let outcome = (|| -> Result<()> {
        let set = engine.create_set("seq", cfg.page_size, cfg.durability)?;
        let m = Meter::start(&engine);
        let mut w = SeqWriter::new(&engine, set)?;
        let mut expected = 0;
        for i in 0..cfg.num_objects {
            let o = seq_object(i, cfg.object_size);
            expected += byte_sum(&o);
            w.add_object(&o)?;
        }
        w.finish()?;
        res.phases.push(m.finish(&engine, "write", 0));
        let mut ok = true;
        for s in 0..cfg.scans {
            let m = Meter::start(&engine);
            let (mut sum, mut count) = (0, 0);
            for mut it in seq_get_iterators(&engine, set, 1)? {
                count += it.for_each_record(|r| sum += byte_sum(r))?;
            }
            ok &= sum == expected && count == cfg.num_objects;
            res.phases.push(m.finish(&engine, &format!("scan{}", s + 1), 0));
        }
        let m = Meter::start(&engine);
        engine.mark_lifetime_ended(set)?;
        engine.remove_set(set)?;
        res.phases.push(m.finish(&engine, "delete", 0));
        res.verified = ok;
        Ok(())
    })();
    res.absorb(outcome)?;
    Ok(res)
}

/// The sequential benchmark once per policy.
pub fn paging_compare(base: &SeqBench, policies: &[PolicyKind]) -> Result<Vec<BenchResult>> {
    policies
        .iter()
        .map(|&policy| {
            let mut cfg = base.clone();
            cfg.setup.policy = policy;
            bench_seq(&cfg)
        })
        .collect()
}

// ----- shuffle -----

#[derive(Debug, Clone)]
pub struct ShuffleBench {
    pub writers: usize,
    pub readers: usize,
    pub partitions: usize,
    /// Bytes of records produced by each writer, in MiB.
    pub mb_per_thread: f64,
    pub page_size: u64,
    pub small_page_size: u64,
    pub seed: u64,
    pub setup: EngineSetup,
}

impl ShuffleBench {
    fn validate(&self) -> Result<()> {
        if self.writers == 0 || self.readers == 0 || self.partitions == 0 {
            return Err(Error::InvalidArgs("writers, readers and partitions must be positive".into()));
        }
        if !(self.mb_per_thread >= 0.0) {
            return Err(Error::InvalidArgs("mb_per_thread must be non-negative".into()));
        }
        Ok(())
    }

    fn echo(&self) -> BTreeMap<String, String> {
        let mut c = BTreeMap::new();
        self.setup.echo(&mut c);
        c.insert("writers".into(), self.writers.to_string());
        c.insert("readers".into(), self.readers.to_string());
        c.insert("partitions".into(), self.partitions.to_string());
        c.insert("mb_per_thread".into(), self.mb_per_thread.to_string());
        c.insert("page_size".into(), self.page_size.to_string());
        c.insert("small_page_size".into(), self.small_page_size.to_string());
        c.insert("seed".into(), self.seed.to_string());
        c
    }
}

/// Record `i` of writer `w`: a short decimal string.
pub fn shuffle_record(w: usize, i: u64) -> Vec<u8> {
    format!("{w:02}{i:08}").into_bytes()
}

/// Writers produce records in round-robin turns, each routed by hash through
/// its own buffer per partition; readers then scan their partitions and
/// check the per-partition byte sums.
pub fn bench_shuffle(cfg: &ShuffleBench) -> Result<BenchResult> {
    cfg.validate()?;
    let (_tmp, engine) = cfg.setup.open()?;
    let mut res = BenchResult::new("shuffle", cfg.echo());
    let per_writer = (cfg.mb_per_thread * MIB as f64 / shuffle_record(0, 0).len() as f64) as u64;
    let outcome = (|| -> Result<()> {
        let sc = ShuffleConfig {
            partitions: cfg.partitions,
            page_size: cfg.page_size,
            small_page_size: cfg.small_page_size,
            durability: Durability::WriteBack,
            seed: cfg.seed,
        };
        let m = Meter::start(&engine);
        let shuffle = Shuffle::create(&engine, "shuffle", sc)?;
        let mut expected = vec![(0u64, 0u64); cfg.partitions];
        {
            let mut bufs = Vec::with_capacity(cfg.writers);
            for w in 0..cfg.writers {
                bufs.push((0..cfg.partitions).map(|p| shuffle.buffer(w, p)).collect::<Result<Vec<_>>>()?);
            }
            for i in 0..per_writer {
                for (w, wb) in bufs.iter_mut().enumerate() {
                    let r = shuffle_record(w, i);
                    let p = shuffle.route(&r);
                    expected[p].0 += 1;
                    expected[p].1 += byte_sum(&r);
                    wb[p].add_object(&r)?;
                }
            }
            for b in bufs.into_iter().flatten() {
                b.close()?;
            }
        }
        let sets = shuffle.partition_sets().to_vec();
        let summary = shuffle.finish()?;
        res.phases.push(m.finish(&engine, "write", summary.spill_files as u64));
        res.metrics.insert("spill_files".into(), summary.spill_files as f64);
        res.metrics.insert("pages".into(), summary.pages as f64);
        res.metrics.insert("records".into(), (per_writer * cfg.writers as u64) as f64);

        let m = Meter::start(&engine);
        let mut got = vec![(0u64, 0u64); cfg.partitions];
        for r in 0..cfg.readers {
            for p in (r..cfg.partitions).step_by(cfg.readers) {
                for mut it in seq_get_iterators(&engine, sets[p], 1)? {
                    let g = &mut got[p];
                    g.0 += it.for_each_record(|rec| g.1 += byte_sum(rec))?;
                }
            }
        }
        res.phases.push(m.finish(&engine, "read", 0));
        let m = Meter::start(&engine);
        for &s in &sets {
            engine.mark_lifetime_ended(s)?;
            engine.remove_set(s)?;
        }
        res.phases.push(m.finish(&engine, "delete", 0));
        res.verified = got == expected && summary.spill_files <= cfg.partitions;
        Ok(())
    })();
    res.absorb(outcome)?;
    Ok(res)
}

// ----- hash aggregation -----

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum KeyDistribution {
    Uniform,
    Zipf { s: f64 },
}

#[derive(Debug, Clone)]
pub struct HashBench {
    /// Number of `<string, int>` pairs.
    pub num_pairs: u64,
    /// Distinct keys the pairs are drawn from.
    pub key_space: u64,
    pub partitions: usize,
    pub page_size: u64,
    pub distribution: KeyDistribution,
    pub seed: u64,
    pub exec: ExecMode,
    pub setup: EngineSetup,
}

impl HashBench {
    fn validate(&self) -> Result<()> {
        if self.partitions == 0 || self.key_space == 0 {
            return Err(Error::InvalidArgs("partitions and key space must be positive".into()));
        }
        if let KeyDistribution::Zipf { s } = self.distribution {
            if !(s > 0.0) {
                return Err(Error::InvalidArgs("zipf exponent must be positive".into()));
            }
        }
        Ok(())
    }

    fn echo(&self) -> BTreeMap<String, String> {
        let mut c = BTreeMap::new();
        self.setup.echo(&mut c);
        c.insert("num_pairs".into(), self.num_pairs.to_string());
        c.insert("key_space".into(), self.key_space.to_string());
        c.insert("partitions".into(), self.partitions.to_string());
        c.insert("page_size".into(), self.page_size.to_string());
        c.insert("distribution".into(), format!("{:?}", self.distribution));
        c.insert("seed".into(), self.seed.to_string());
        c
    }
}

/// The `(key, value)` pairs of a hash run.
pub fn hash_pairs(cfg: &HashBench) -> Result<Vec<(Vec<u8>, i64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = match cfg.distribution {
        KeyDistribution::Zipf { s } => {
            Some(Zipf::new(cfg.key_space as f64, s).map_err(|e| Error::InvalidArgs(e.to_string()))?)
        }
        KeyDistribution::Uniform => None,
    };
    Ok((0..cfg.num_pairs)
        .map(|_| {
            let k = match &zipf {
                Some(z) => z.sample(&mut rng) as u64 - 1,
                None => rng.random_range(0..cfg.key_space),
            };
            (format!("key{k:010}").into_bytes(), rng.random_range(1..=100))
        })
        .collect())
}

/// Sums values per key through a hash buffer and checks the result against
/// an in-memory map.
pub fn bench_hash(cfg: &HashBench) -> Result<BenchResult> {
    cfg.validate()?;
    let (_tmp, engine) = cfg.setup.open()?;
    let mut res = BenchResult::new("hash-agg", cfg.echo());
    let pairs = hash_pairs(cfg)?;
    let outcome = (|| -> Result<()> {
        let mut oracle: HashMap<&[u8], i64> = HashMap::new();
        for (k, v) in &pairs {
            *oracle.entry(k).or_insert(0) += v;
        }
        let set = engine.create_set("agg", cfg.page_size, Durability::WriteBack)?;
        let hc = HashConfig { roots: cfg.partitions, seed: cfg.seed, ..HashConfig::default() };
        let m = Meter::start(&engine);
        let buf = VirtualHashBuffer::new(&engine, set, hc, sum_i64)?;
        for (k, v) in &pairs {
            buf.upsert(k, &v.to_le_bytes())?;
        }
        let stats = buf.stats();
        res.phases.push(m.finish(&engine, "aggregate", stats.spills));
        let m = Meter::start(&engine);
        let out = buf.finalize(cfg.exec)?;
        res.phases.push(m.finish(&engine, "finalize", 0));
        engine.remove_set(set)?;
        res.metrics.insert("splits".into(), stats.splits as f64);
        res.metrics.insert("spills".into(), stats.spills as f64);
        res.metrics.insert("distinct_keys".into(), oracle.len() as f64);
        res.verified = out.len() == oracle.len()
            && out.iter().all(|(k, v)| oracle.get(k.as_slice()) == Some(&decode_i64(v)));
        Ok(())
    })();
    res.absorb(outcome)?;
    Ok(res)
}

// ----- recovery drill -----

#[derive(Debug, Clone)]
pub struct RecoveryBench {
    pub nodes: usize,
    pub objects: u64,
    pub seed: u64,
    pub mem_per_node: u64,
    pub page_size: u64,
    pub exec: ExecMode,
}

impl RecoveryBench {
    pub fn new(nodes: usize, objects: u64, seed: u64) -> Self {
        RecoveryBench { nodes, objects, seed, mem_per_node: 16 * MIB, page_size: 64 << 10, exec: ExecMode::Parallel }
    }

    fn echo(&self) -> BTreeMap<String, String> {
        let mut c = BTreeMap::new();
        c.insert("nodes".into(), self.nodes.to_string());
        c.insert("objects".into(), self.objects.to_string());
        c.insert("seed".into(), self.seed.to_string());
        c.insert("mem_per_node".into(), self.mem_per_node.to_string());
        c.insert("page_size".into(), self.page_size.to_string());
        c
    }
}

struct ClusterMeter {
    start: Instant,
    before: Vec<Option<(PoolStats, IoStats)>>,
}

impl ClusterMeter {
    fn snapshot(c: &Cluster) -> Vec<Option<(PoolStats, IoStats)>> {
        (0..c.len()).map(|n| c.node(n).ok().map(|e| (e.stats(), e.io_stats()))).collect()
    }

    fn start(c: &Cluster) -> Self {
        ClusterMeter { start: Instant::now(), before: Self::snapshot(c) }
    }

    /// Sums deltas over nodes that were up at both ends of the phase.
    fn finish(self, c: &Cluster, phase: &str) -> PhaseResult {
        let mut r = PhaseResult { phase: phase.into(), wall_seconds: self.start.elapsed().as_secs_f64(), ..Default::default() };
        for (b, a) in self.before.iter().zip(Self::snapshot(c)) {
            if let (Some((bp, bi)), Some((ap, ai))) = (b, a) {
                r.pages_loaded += ap.pages_loaded - bp.pages_loaded;
                r.pages_evicted += ap.pages_evicted - bp.pages_evicted;
                r.bytes_written += ai.bytes_written - bi.bytes_written;
                r.bytes_read += ai.bytes_read - bi.bytes_read;
            }
        }
        r
    }
}

/// Object `i` of a recovery drill.
pub fn recovery_object(seed: u64, i: u64) -> Vec<u8> {
    format!("obj-{seed}-{i:09}").into_bytes()
}

/// Builds two independently hash-partitioned copies of the objects as one
/// replica group, fails a node and rebuilds both copies from each other and
/// the colliding set.
pub fn bench_recovery(cfg: &RecoveryBench) -> Result<BenchResult> {
    if cfg.nodes < 2 {
        return Err(Error::InvalidArgs("a replica group needs at least two nodes to survive a failure".into()));
    }
    let mut cc = ClusterConfig::new(cfg.nodes, cfg.mem_per_node);
    cc.page_size = cfg.page_size;
    cc.exec = cfg.exec;
    let mut cluster = Cluster::spawn(cc)?;
    let mut res = BenchResult::new("recovery-drill", cfg.echo());
    let k = cfg.nodes;
    let records: Vec<Vec<u8>> = (0..cfg.objects).map(|i| recovery_object(cfg.seed, i)).collect();

    let m = ClusterMeter::start(&cluster);
    cluster.dispatch_data("data", &records, DispatchStrategy::RoundRobin)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let key = PartitionScheme::whole_record_key();
    let a = PartitionScheme::hash(1, k, k, rng.random(), key.clone())?;
    let b = PartitionScheme::hash(2, k, k, rng.random(), key)?;
    partition_set(&mut cluster, "data", "r1", a)?;
    partition_set(&mut cluster, "data", "r2", b)?;
    let group = register_replica(&mut cluster, "r1", "r2", 1)?;
    res.phases.push(m.finish(&cluster, "build"));
    let colliding = cluster.catalog.groups[&group].colliding_objects;

    let mut snapshot = cluster.read_set("r2")?;
    snapshot.sort();
    let failed = (cfg.seed % k as u64) as usize;
    cluster.fail_node(failed)?;
    let m = ClusterMeter::start(&cluster);
    let transferred = cluster.pages_transferred();
    let r2 = recover_node(&mut cluster, group, "r2", failed)?;
    let r1 = recover_node(&mut cluster, group, "r1", failed)?;
    let mut p = m.finish(&cluster, "recover");
    p.spills = 0;
    res.phases.push(p);

    let mut ok = true;
    for name in ["r1", "r2"] {
        let mut got = cluster.read_set(name)?;
        got.sort();
        ok &= got == snapshot;
    }
    res.verified = ok;
    res.metrics.insert("failed_node".into(), failed as f64);
    res.metrics.insert("colliding_objects".into(), colliding as f64);
    res.metrics.insert("colliding_fraction".into(), colliding as f64 / cfg.objects.max(1) as f64);
    res.metrics.insert("expected_fraction".into(), 1.0 / k as f64);
    res.metrics.insert("objects_restored".into(), (r1.objects_restored + r2.objects_restored) as f64);
    res.metrics.insert("colliding_restored".into(), (r1.colliding_restored + r2.colliding_restored) as f64);
    res.metrics.insert("pages_transferred".into(), (cluster.pages_transferred() - transferred) as f64);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(policy: PolicyKind, objects: u64, memory: u64) -> SeqBench {
        SeqBench {
            num_objects: objects,
            object_size: 80,
            durability: Durability::WriteBack,
            page_size: 64 << 10,
            scans: 3,
            setup: EngineSetup::new(memory, policy),
        }
    }

    #[test]
    fn resident_scans_load_nothing() {
        let r = bench_seq(&seq(PolicyKind::DataAware, 10_000, 4 * MIB)).unwrap();
        assert!(r.verified);
        assert_eq!(r.sum("scan", |p| p.pages_loaded), 0);
        assert_eq!(r.sum("", |p| p.bytes_written), 0);
    }

    #[test]
    fn dbmin_1000_blocks() {
        let r = bench_seq(&seq(PolicyKind::Dbmin1000, 40_000, 2 * MIB)).unwrap();
        assert_eq!(r.status, Status::Blocked);
        assert!(r.ok() && !r.verified);
    }

    #[test]
    fn seq_is_reproducible() {
        let strip = |mut r: BenchResult| {
            r.phases.iter_mut().for_each(|p| p.wall_seconds = 0.0);
            r
        };
        let c = seq(PolicyKind::GlobalLru, 20_000, MIB);
        assert_eq!(strip(bench_seq(&c).unwrap()), strip(bench_seq(&c).unwrap()));
    }

    #[test]
    fn shuffle_small() {
        let cfg = ShuffleBench {
            writers: 3,
            readers: 2,
            partitions: 4,
            mb_per_thread: 0.25,
            page_size: 64 << 10,
            small_page_size: 16 << 10,
            seed: 1,
            setup: EngineSetup::new(MIB / 2, PolicyKind::DataAware),
        };
        let r = bench_shuffle(&cfg).unwrap();
        assert!(r.verified);
        assert!(r.metrics["spill_files"] <= 4.0);
    }

    #[test]
    fn hash_small_zipf() {
        let cfg = HashBench {
            num_pairs: 20_000,
            key_space: 5_000,
            partitions: 8,
            page_size: 16 << 10,
            distribution: KeyDistribution::Zipf { s: 1.1 },
            seed: 3,
            exec: ExecMode::Parallel,
            setup: EngineSetup::new(MIB, PolicyKind::DataAware),
        };
        assert!(bench_hash(&cfg).unwrap().verified);
    }

    #[test]
    fn recovery_small() {
        let r = bench_recovery(&RecoveryBench::new(3, 2_000, 4)).unwrap();
        assert!(r.verified);
        assert!(r.metrics["colliding_objects"] > 0.0);
        assert!(bench_recovery(&RecoveryBench::new(1, 10, 0)).is_err());
    }
}
