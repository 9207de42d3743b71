//! In-process cluster: a manager catalog plus worker nodes, each with its own
//! engine (pool, file store, stripe directories). Nodes exchange data only
//! by copying whole pages.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::buffer_pool::PageKey;
use crate::engine::{Engine, EngineConfig};
use crate::error::{Error, Result};
use crate::locality::{Durability, SetId};
use crate::paging::PolicyKind;
use crate::parallel::{self, ExecMode};
use crate::placement::{PartitionScheme, ReplicaGroup};
use crate::services::sequential::{seq_get_iterators, SeqWriter};

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub workers: usize,
    pub mem_per_worker: u64,
    pub dirs_per_worker: usize,
    pub page_size: u64,
    pub policy: PolicyKind,
    /// Failing a node also deletes its disk contents.
    pub wipe_disk_on_failure: bool,
    pub exec: ExecMode,
}

impl ClusterConfig {
    pub fn new(workers: usize, mem_per_worker: u64) -> Self {
        ClusterConfig {
            workers,
            mem_per_worker,
            dirs_per_worker: 1,
            page_size: 64 << 10,
            policy: PolicyKind::DataAware,
            wipe_disk_on_failure: true,
            exec: ExecMode::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchStrategy {
    RoundRobin,
    Random { seed: u64 },
}

/// One node-local piece of a distributed set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fragment {
    /// Local set name on the node.
    pub local_name: String,
    pub node: usize,
    /// Partition id under the set's scheme; the node index for dispatched
    /// sets.
    pub partition: usize,
    pub records: u64,
}

/// Manager-side metadata of a distributed set.
#[derive(Debug, Clone)]
pub struct DistSet {
    pub name: String,
    pub page_size: u64,
    pub durability: Durability,
    pub scheme: Option<PartitionScheme>,
    pub fragments: Vec<Fragment>,
    pub replica_group: Option<u64>,
}

impl DistSet {
    pub fn record_count(&self) -> u64 {
        self.fragments.iter().map(|f| f.records).sum()
    }
}

/// Set metadata kept by the manager. Survives worker failures.
#[derive(Debug, Default)]
pub struct ManagerCatalog {
    pub sets: BTreeMap<String, DistSet>,
    pub groups: BTreeMap<u64, ReplicaGroup>,
    pub next_group: u64,
}

#[derive(Debug)]
pub struct SimNode {
    pub id: usize,
    dirs: Vec<PathBuf>,
    engine: Option<Engine>,
    pages_sent: AtomicU64,
    pages_received: AtomicU64,
}

impl SimNode {
    pub fn is_alive(&self) -> bool {
        self.engine.is_some()
    }

    pub fn pages_sent(&self) -> u64 {
        self.pages_sent.load(Ordering::Relaxed)
    }

    pub fn pages_received(&self) -> u64 {
        self.pages_received.load(Ordering::Relaxed)
    }
}

#[derive(Debug)]
pub struct Cluster {
    config: ClusterConfig,
    root: PathBuf,
    _tmp: Option<tempfile::TempDir>,
    nodes: Vec<SimNode>,
    pub catalog: ManagerCatalog,
}

impl Cluster {
    /// Spawns a cluster under a fresh temporary directory.
    pub fn spawn(config: ClusterConfig) -> Result<Self> {
        let tmp = tempfile::tempdir()?;
        let root = tmp.path().to_path_buf();
        let mut c = Self::spawn_at(config, &root)?;
        c._tmp = Some(tmp);
        Ok(c)
    }

    /// Spawns a cluster with node directories `<root>/node<i>`.
    pub fn spawn_at(config: ClusterConfig, root: &Path) -> Result<Self> {
        if config.workers == 0 {
            return Err(Error::InvalidArgs("a cluster needs at least one worker".into()));
        }
        if config.dirs_per_worker == 0 {
            return Err(Error::InvalidArgs("each worker needs at least one storage directory".into()));
        }
        let mut nodes = Vec::with_capacity(config.workers);
        for id in 0..config.workers {
            let base = root.join(format!("node{id}"));
            let dirs: Vec<PathBuf> = (0..config.dirs_per_worker).map(|d| base.join(format!("disk{d}"))).collect();
            let engine = open_engine(&config, &dirs).map_err(|e| match e {
                Error::Io(io) if io.kind() == std::io::ErrorKind::StorageFull => {
                    Error::InsufficientDiskSpace(format!("node {id}: {io}"))
                }
                other => other,
            })?;
            nodes.push(SimNode {
                id,
                dirs,
                engine: Some(engine),
                pages_sent: AtomicU64::new(0),
                pages_received: AtomicU64::new(0),
            });
        }
        Ok(Cluster { config, root: root.to_path_buf(), _tmp: None, nodes, catalog: ManagerCatalog::default() })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SimNode] {
        &self.nodes
    }

    pub fn alive_nodes(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.is_alive()).map(|n| n.id).collect()
    }

    pub fn total_memory(&self) -> u64 {
        self.config.mem_per_worker * self.nodes.len() as u64
    }

    /// The engine of a live node.
    pub fn node(&self, id: usize) -> Result<&Engine> {
        let node = self.nodes.get(id).ok_or(Error::UnknownNode(id))?;
        node.engine.as_ref().ok_or(Error::NodeDown(id))
    }

    /// Drops the node's memory and, in drill mode, its disk.
    pub fn fail_node(&mut self, id: usize) -> Result<()> {
        let wipe = self.config.wipe_disk_on_failure;
        let node = self.nodes.get_mut(id).ok_or(Error::UnknownNode(id))?;
        node.engine = None;
        if wipe {
            for d in &node.dirs {
                if d.exists() {
                    fs::remove_dir_all(d)?;
                }
            }
        }
        Ok(())
    }

    /// Brings a failed node back. It rejoins with whatever its disk still
    /// holds, which is nothing after a wiping failure.
    pub fn restart_node(&mut self, id: usize) -> Result<()> {
        let config = self.config.clone();
        let node = self.nodes.get_mut(id).ok_or(Error::UnknownNode(id))?;
        if node.engine.is_none() {
            node.engine = Some(open_engine(&config, &node.dirs)?);
        }
        Ok(())
    }

    /// Writes records to nodes through the sequential service, as the set
    /// `name` with one fragment `<name>#p<node>` per node.
    pub fn dispatch_data(&mut self, name: &str, records: &[Vec<u8>], strategy: DispatchStrategy) -> Result<()> {
        if self.catalog.sets.contains_key(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        if let Some(dead) = self.nodes.iter().find(|n| !n.is_alive()) {
            return Err(Error::NodeDown(dead.id));
        }
        let k = self.nodes.len();
        let mut per_node: Vec<Vec<&[u8]>> = vec![Vec::new(); k];
        match strategy {
            DispatchStrategy::RoundRobin => {
                for (i, r) in records.iter().enumerate() {
                    per_node[i % k].push(r);
                }
            }
            DispatchStrategy::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for r in records {
                    per_node[rng.random_range(0..k)].push(r);
                }
            }
        }
        let page_size = self.config.page_size;
        let fragments = parallel::try_map(self.config.exec, per_node.into_iter().enumerate().collect(), |(node, recs)| {
            let local_name = fragment_name(name, node);
            let engine = self.node(node)?;
            let set = engine.create_set(&local_name, page_size, Durability::WriteThrough)?;
            let mut w = SeqWriter::new(engine, set)?;
            for r in &recs {
                w.add_object(r)?;
            }
            let n = w.finish()?;
            Ok::<_, Error>(Fragment { local_name, node, partition: node, records: n })
        })?;
        self.catalog.sets.insert(
            name.to_string(),
            DistSet {
                name: name.to_string(),
                page_size,
                durability: Durability::WriteThrough,
                scheme: None,
                fragments,
                replica_group: None,
            },
        );
        Ok(())
    }

    pub fn dist_set(&self, name: &str) -> Result<&DistSet> {
        self.catalog.sets.get(name).ok_or_else(|| Error::SetNameNotFound(name.to_string()))
    }

    /// Records of one fragment, in page order.
    pub fn read_fragment(&self, fragment: &Fragment) -> Result<Vec<Vec<u8>>> {
        let engine = self.node(fragment.node)?;
        let set = engine.set_id(&fragment.local_name)?;
        read_local(engine, set)
    }

    /// Every record of a distributed set. Fails with `NodeDown` if any
    /// fragment lives on a failed node.
    pub fn read_set(&self, name: &str) -> Result<Vec<Vec<u8>>> {
        let frags = self.dist_set(name)?.fragments.clone();
        let parts = parallel::try_map(self.config.exec, frags, |f| self.read_fragment(&f))?;
        Ok(parts.into_iter().flatten().collect())
    }

    /// Copies one page from `from` into a new page of `to_set` on `to`.
    pub fn transfer_page(&self, from: usize, key: PageKey, to: usize, to_set: SetId) -> Result<()> {
        let src = self.node(from)?;
        let dst = self.node(to)?;
        let page = src.pin_page(key)?;
        let out = dst.allocate_page(to_set)?;
        {
            let data = page.read();
            let mut w = out.write();
            if w.len() != data.len() {
                return Err(Error::SizeMismatch { expected: w.len() as u64, actual: data.len() as u64 });
            }
            w.copy_from_slice(&data);
        }
        out.unpin(true)?;
        page.unpin(false)?;
        if from != to {
            self.nodes[from].pages_sent.fetch_add(1, Ordering::Relaxed);
            self.nodes[to].pages_received.fetch_add(1, Ordering::Relaxed);
        }
        Ok(())
    }

    pub fn pages_transferred(&self) -> u64 {
        self.nodes.iter().map(SimNode::pages_sent).sum()
    }
}

fn open_engine(config: &ClusterConfig, dirs: &[PathBuf]) -> Result<Engine> {
    Engine::open(EngineConfig::new(config.mem_per_worker, dirs.to_vec()).with_policy(config.policy))
}

pub fn fragment_name(set: &str, partition: usize) -> String {
    format!("{set}#p{partition}")
}

pub(crate) fn read_local(engine: &Engine, set: SetId) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    for mut it in seq_get_iterators(engine, set, 1)? {
        it.for_each_record(|r| out.push(r.to_vec()))?;
    }
    Ok(out)
}
