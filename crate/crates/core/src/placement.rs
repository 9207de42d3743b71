//! Partitioning across nodes, replica groups of differently partitioned
//! copies, colliding objects and recovery from a node failure.
//!
//! An object *collides* when every member copy of it sits on one node: that
//! node's failure would lose all copies, so such objects are also written to
//! a side set kept on other nodes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::cluster::{fragment_name, read_local, Cluster, DistSet, Fragment};
use crate::error::{Error, Result};
use crate::locality::Durability;
use crate::parallel;
use crate::services::sequential::SeqWriter;
use crate::services::shuffle::{Shuffle, ShuffleConfig};
use crate::services::stable_hash;

/// Below this many objects replica registration compares full multisets;
/// above it, a 1% hash sample.
pub const FULL_CHECK_LIMIT: usize = 1_000_000;

pub type KeyFn = Arc<dyn Fn(&[u8]) -> Vec<u8> + Send + Sync>;

/// Routes records to partitions by a hash of their key and partitions to
/// nodes by a fixed map.
#[derive(Clone)]
pub struct PartitionScheme {
    pub scheme_id: u64,
    pub num_partitions: usize,
    pub partition_map: Vec<usize>,
    pub seed: u64,
    pub key_extractor: KeyFn,
}

impl fmt::Debug for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartitionScheme")
            .field("scheme_id", &self.scheme_id)
            .field("num_partitions", &self.num_partitions)
            .field("partition_map", &self.partition_map)
            .field("seed", &self.seed)
            .finish()
    }
}

impl PartitionScheme {
    /// `num_partitions` partitions laid round-robin over `nodes` nodes.
    pub fn hash(scheme_id: u64, num_partitions: usize, nodes: usize, seed: u64, key_extractor: KeyFn) -> Result<Self> {
        if num_partitions == 0 || nodes == 0 {
            return Err(Error::InvalidArgs("partitions and nodes must be positive".into()));
        }
        Ok(PartitionScheme {
            scheme_id,
            num_partitions,
            partition_map: (0..num_partitions).map(|p| p % nodes).collect(),
            seed,
            key_extractor,
        })
    }

    /// Uses the whole record as its key.
    pub fn whole_record_key() -> KeyFn {
        Arc::new(|r: &[u8]| r.to_vec())
    }

    pub fn validate(&self, nodes: usize) -> Result<()> {
        if self.num_partitions == 0 || self.partition_map.len() != self.num_partitions {
            return Err(Error::InvalidArgs("partition map must cover every partition".into()));
        }
        if let Some(&bad) = self.partition_map.iter().find(|&&n| n >= nodes) {
            return Err(Error::UnknownNode(bad));
        }
        Ok(())
    }

    pub fn partition_of(&self, record: &[u8]) -> usize {
        let key = (self.key_extractor)(record);
        (stable_hash(&key, self.seed) % self.num_partitions as u64) as usize
    }

    pub fn node_of(&self, record: &[u8]) -> usize {
        self.partition_map[self.partition_of(record)]
    }
}

#[derive(Debug, Clone)]
pub struct ReplicaGroup {
    pub id: u64,
    pub members: Vec<String>,
    /// Distributed set holding `[entry id u64][home node u32][object]`.
    pub colliding_set: String,
    pub colliding_objects: u64,
    /// Node failures the colliding set is sized for.
    pub failures_tolerated: usize,
}

/// n/k: colliding objects expected when two independent uniform schemes
/// place n objects on k nodes.
pub fn expected_collisions(n: f64, k: u64) -> f64 {
    n / k as f64
}

/// Fraction of objects whose copies span fewer than r + 1 nodes, the ones an
/// r-node failure can wipe out: 1 - k(k-1)...(k-r) / k^(r+1).
pub fn multi_failure_ratio(k: u64, r: u64) -> Result<f64> {
    if r < 1 || r >= k {
        return Err(Error::InvalidArgs(format!("need 1 <= r < k, got k={k} r={r}")));
    }
    // exact in integers while k^(r+1) fits, so small cases round once
    let mut whole: Option<u128> = Some(1);
    let mut kept: u128 = 1;
    for i in 0..=r {
        whole = whole.and_then(|w| w.checked_mul(k as u128));
        kept = kept.saturating_mul((k - i) as u128);
    }
    match whole {
        Some(w) => Ok((w - kept) as f64 / w as f64),
        None => Ok(1.0 - (0..=r).map(|i| (k - i) as f64 / k as f64).product::<f64>()),
    }
}

/// Objects whose copies under `a` and `b` share a node.
pub fn count_collisions<'r>(records: impl IntoIterator<Item = &'r [u8]>, a: &PartitionScheme, b: &PartitionScheme) -> u64 {
    records.into_iter().filter(|r| a.node_of(r) == b.node_of(r)).count() as u64
}

/// Writes every record of `source` into `target`, partitioned by `scheme`:
/// each source node shuffles its records into per-partition pages, then the
/// pages move to the partition's node.
pub fn partition_set(cluster: &mut Cluster, source: &str, target: &str, scheme: PartitionScheme) -> Result<()> {
    scheme.validate(cluster.len())?;
    if let Some(t) = cluster.catalog.sets.get(target) {
        if t.record_count() > 0 || !t.fragments.is_empty() {
            return Err(Error::TargetNotEmpty(target.to_string()));
        }
    }
    let src = cluster.dist_set(source)?.clone();
    let page_size = src.page_size;
    let small = shuffle_chunk(page_size);
    // one fragment per partition, created empty on its node
    let mut fragments = Vec::with_capacity(scheme.num_partitions);
    for pid in 0..scheme.num_partitions {
        let node = scheme.partition_map[pid];
        let local_name = fragment_name(target, pid);
        let engine = cluster.node(node)?;
        let set = engine.create_set(&local_name, page_size, Durability::WriteThrough)?;
        engine.set_chunk_size(set, small)?;
        fragments.push(Fragment { local_name, node, partition: pid, records: 0 });
    }
    let cl: &Cluster = cluster;
    let counts = parallel::try_map(cl.config().exec, src.fragments.clone(), |frag| -> Result<Vec<u64>> {
        let records = cl.read_fragment(&frag)?;
        let routed: Vec<(usize, &[u8])> = records.iter().map(|r| (scheme.partition_of(r), r.as_slice())).collect();
        ship(cl, frag.node, target, &scheme.partition_map, page_size, &routed)
    })?;
    for c in counts {
        for (pid, n) in c.into_iter().enumerate() {
            fragments[pid].records += n;
        }
    }
    cluster.catalog.sets.insert(
        target.to_string(),
        DistSet {
            name: target.to_string(),
            page_size,
            durability: Durability::WriteThrough,
            scheme: Some(scheme),
            fragments,
            replica_group: None,
        },
    );
    Ok(())
}

fn shuffle_chunk(page_size: u64) -> u64 {
    if page_size.is_multiple_of(4) {
        page_size / 4
    } else {
        page_size
    }
}

/// Shuffles `routed` records on node `from` into staging pages, then copies
/// each page to `<target>#p<pid>` on `partition_map[pid]`. Returns records
/// per partition.
fn ship(
    cluster: &Cluster,
    from: usize,
    target: &str,
    partition_map: &[usize],
    page_size: u64,
    routed: &[(usize, &[u8])],
) -> Result<Vec<u64>> {
    let partitions = partition_map.len();
    let mut counts = vec![0u64; partitions];
    if routed.is_empty() {
        return Ok(counts);
    }
    let engine = cluster.node(from)?;
    let cfg = ShuffleConfig { small_page_size: shuffle_chunk(page_size), ..ShuffleConfig::new(partitions, page_size) };
    let stage_name = format!("{target}@stage{from}#{}", engine.now());
    let shuffle = Shuffle::create(engine, &stage_name, cfg)?;
    {
        let mut bufs = (0..partitions).map(|p| shuffle.buffer(0, p)).collect::<Result<Vec<_>>>()?;
        for &(pid, rec) in routed {
            bufs[pid].add_object(rec)?;
            counts[pid] += 1;
        }
        for b in bufs {
            b.close()?;
        }
    }
    let stage_sets = shuffle.partition_sets().to_vec();
    shuffle.finish()?;
    for (pid, &stage) in stage_sets.iter().enumerate() {
        let to = partition_map[pid];
        let dst = cluster.node(to)?;
        let dst_set = dst.set_id(&fragment_name(target, pid))?;
        for seq in engine.set_info(stage)?.pages {
            cluster.transfer_page(from, crate::buffer_pool::PageKey::new(stage, seq), to, dst_set)?;
        }
        engine.mark_lifetime_ended(stage)?;
        engine.remove_set(stage)?;
    }
    Ok(counts)
}

fn multiset<'r>(records: impl IntoIterator<Item = &'r Vec<u8>>) -> HashMap<&'r [u8], u64> {
    let mut m = HashMap::new();
    for r in records {
        *m.entry(r.as_slice()).or_insert(0) += 1;
    }
    m
}

/// Registers `target` as a replica of `source` and materializes their
/// colliding objects into a side set. `failures` is the number of
/// concurrent node failures to survive (1 by default in callers).
pub fn register_replica(cluster: &mut Cluster, source: &str, target: &str, failures: usize) -> Result<u64> {
    let k = cluster.len();
    let failures = failures.max(1);
    let a = cluster.dist_set(source)?.clone();
    let b = cluster.dist_set(target)?.clone();
    if a.page_size != b.page_size {
        return Err(Error::ObjectSetMismatch("members differ in page size".into()));
    }
    // object -> nodes holding a copy, per member
    let placed = |set: &DistSet| -> Result<Vec<(Vec<u8>, usize)>> {
        let mut out = Vec::new();
        for f in &set.fragments {
            for r in cluster.read_fragment(f)? {
                out.push((r, f.node));
            }
        }
        Ok(out)
    };
    let pa = placed(&a)?;
    let pb = placed(&b)?;
    verify_same_objects(&pa, &pb)?;

    // occurrences of a record on a node, per member; the copies of an
    // object pair up node by node first
    let mut on_a: HashMap<&[u8], BTreeMap<usize, u64>> = HashMap::new();
    for (r, n) in &pa {
        *on_a.entry(r).or_default().entry(*n).or_insert(0) += 1;
    }
    let mut on_b: HashMap<&[u8], BTreeMap<usize, u64>> = HashMap::new();
    for (r, n) in &pb {
        *on_b.entry(r).or_default().entry(*n).or_insert(0) += 1;
    }
    let mut colliding: Vec<(&[u8], usize)> = Vec::new();
    let mut keys: Vec<&&[u8]> = on_a.keys().collect();
    keys.sort();
    for r in keys {
        let na = &on_a[*r];
        let nb = &on_b[*r];
        if failures == 1 {
            for (node, ca) in na {
                let shared = (*ca).min(nb.get(node).copied().unwrap_or(0));
                for _ in 0..shared {
                    colliding.push((r, *node));
                }
            }
        } else {
            // copies spread over fewer than failures + 1 nodes
            let span: BTreeSet<usize> = na.keys().chain(nb.keys()).copied().collect();
            if span.len() <= failures {
                let home = *span.iter().next().expect("object has a copy");
                for _ in 0..na.values().sum::<u64>() {
                    colliding.push((r, home));
                }
            }
        }
    }

    let gid = cluster.catalog.next_group;
    cluster.catalog.next_group += 1;
    let side = format!("collide{gid}");
    let copies = (failures + 1).min(k);
    let mut load = vec![0u64; k];
    let mut per_node: Vec<Vec<Vec<u8>>> = vec![Vec::new(); k];
    for (entry_id, (rec, home)) in colliding.iter().enumerate() {
        let mut candidates: Vec<usize> = (0..k).collect();
        // other nodes first, then least loaded, then lowest id
        candidates.sort_by_key(|&n| (n == *home, load[n], n));
        for &n in candidates.iter().take(copies) {
            load[n] += 1;
            per_node[n].push(encode_colliding(entry_id as u64, *home, rec));
        }
    }
    let page_size = a.page_size;
    let mut fragments = Vec::new();
    for (node, recs) in per_node.into_iter().enumerate() {
        let local_name = fragment_name(&side, node);
        let engine = cluster.node(node)?;
        let set = engine.create_set(&local_name, page_size, Durability::WriteThrough)?;
        let mut w = SeqWriter::new(engine, set)?;
        for r in &recs {
            w.add_object(r)?;
        }
        let records = w.finish()?;
        fragments.push(Fragment { local_name, node, partition: node, records });
    }
    cluster.catalog.sets.insert(
        side.clone(),
        DistSet {
            name: side.clone(),
            page_size,
            durability: Durability::WriteThrough,
            scheme: None,
            fragments,
            replica_group: Some(gid),
        },
    );
    for m in [source, target] {
        cluster.catalog.sets.get_mut(m).expect("checked above").replica_group = Some(gid);
    }
    cluster.catalog.groups.insert(
        gid,
        ReplicaGroup {
            id: gid,
            members: vec![source.to_string(), target.to_string()],
            colliding_set: side,
            colliding_objects: colliding.len() as u64,
            failures_tolerated: failures,
        },
    );
    Ok(gid)
}

fn verify_same_objects(a: &[(Vec<u8>, usize)], b: &[(Vec<u8>, usize)]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ObjectSetMismatch(format!("{} objects vs {}", a.len(), b.len())));
    }
    let sample = a.len() > FULL_CHECK_LIMIT;
    let keep = |r: &Vec<u8>| !sample || stable_hash(r, 0x5eed).is_multiple_of(100);
    let ma = multiset(a.iter().map(|(r, _)| r).filter(|r| keep(r)));
    let mb = multiset(b.iter().map(|(r, _)| r).filter(|r| keep(r)));
    if ma != mb {
        return Err(Error::ObjectSetMismatch("members hold different objects".into()));
    }
    Ok(())
}

fn encode_colliding(entry_id: u64, home: usize, rec: &[u8]) -> Vec<u8> {
    let mut v = Vec::with_capacity(12 + rec.len());
    v.extend_from_slice(&entry_id.to_le_bytes());
    v.extend_from_slice(&(home as u32).to_le_bytes());
    v.extend_from_slice(rec);
    v
}

fn decode_colliding(v: &[u8]) -> (u64, usize, &[u8]) {
    let id = u64::from_le_bytes(v[..8].try_into().unwrap());
    let home = u32::from_le_bytes(v[8..12].try_into().unwrap()) as usize;
    (id, home, &v[12..])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecoveryReport {
    pub target: String,
    pub source_replica: String,
    pub failed_node: usize,
    pub lost_partitions: Vec<usize>,
    /// Lost partition -> node that took it over.
    pub takeover: Vec<(usize, usize)>,
    pub objects_restored: u64,
    pub colliding_restored: u64,
    pub pages_transferred: u64,
}

/// Rebuilds the partitions of `target` that lived on `failed_node` from
/// another member of its group, plus the group's colliding set for objects
/// that had every copy on the failed node.
pub fn recover_node(cluster: &mut Cluster, group: u64, target: &str, failed_node: usize) -> Result<RecoveryReport> {
    let g = cluster.catalog.groups.get(&group).ok_or(Error::GroupNotFound(group))?.clone();
    if !g.members.iter().any(|m| m == target) {
        return Err(Error::InvalidArgs(format!("`{target}` is not a member of group {group}")));
    }
    let t = cluster.dist_set(target)?.clone();
    let mut scheme = t.scheme.clone().ok_or_else(|| Error::NotPartitioned(target.to_string()))?;
    let source_name = g.members.iter().find(|m| *m != target).ok_or(Error::NoSurvivingReplica)?.clone();
    let source = cluster.dist_set(&source_name)?.clone();
    let survivors: Vec<usize> = cluster.alive_nodes().into_iter().filter(|&n| n != failed_node).collect();
    if survivors.is_empty() {
        return Err(Error::NoSurvivingReplica);
    }
    if failed_node >= cluster.len() {
        return Err(Error::UnknownNode(failed_node));
    }
    let transferred_before = cluster.pages_transferred();

    let lost: Vec<usize> = (0..scheme.num_partitions).filter(|&p| scheme.partition_map[p] == failed_node).collect();
    let lost_set: BTreeSet<usize> = lost.iter().copied().collect();
    let takeover: Vec<(usize, usize)> =
        lost.iter().enumerate().map(|(i, &p)| (p, survivors[i % survivors.len()])).collect();
    for &(p, n) in &takeover {
        scheme.partition_map[p] = n;
    }
    // fresh fragments on the takeover nodes
    let small = shuffle_chunk(t.page_size);
    for &(p, n) in &takeover {
        let engine = cluster.node(n)?;
        let name = fragment_name(target, p);
        let set = match engine.set_id(&name) {
            Ok(stale) => {
                engine.mark_lifetime_ended(stale)?;
                engine.remove_set(stale)?;
                engine.create_set(&name, t.page_size, Durability::WriteThrough)?
            }
            Err(_) => engine.create_set(&name, t.page_size, Durability::WriteThrough)?,
        };
        engine.set_chunk_size(set, small)?;
    }

    let cl: &Cluster = cluster;
    let live_source: Vec<Fragment> = source.fragments.iter().filter(|f| f.node != failed_node).cloned().collect();
    let scheme_ref = &scheme;
    let lost_ref = &lost_set;
    let per_fragment = parallel::try_map(cl.config().exec, live_source, |frag| -> Result<(Vec<u64>, Vec<Vec<u8>>)> {
        let records = cl.read_fragment(&frag)?;
        let routed: Vec<(usize, &[u8])> = records
            .iter()
            .map(|r| (scheme_ref.partition_of(r), r.as_slice()))
            .filter(|(p, _)| lost_ref.contains(p))
            .collect();
        let counts = ship(cl, frag.node, target, &scheme_ref.partition_map, t.page_size, &routed)?;
        Ok((counts, routed.into_iter().map(|(_, r)| r.to_vec()).collect()))
    })?;
    let mut restored_per_partition = vec![0u64; scheme.num_partitions];
    // copies already rebuilt from the replica; a colliding entry for one of
    // these lost only one of its copies (e.g. after an earlier recovery)
    let mut rebuilt: HashMap<Vec<u8>, u64> = HashMap::new();
    for (c, recs) in per_fragment {
        for (p, n) in c.into_iter().enumerate() {
            restored_per_partition[p] += n;
        }
        for r in recs {
            *rebuilt.entry(r).or_insert(0) += 1;
        }
    }
    let from_source: u64 = restored_per_partition.iter().sum();

    // objects whose every copy was on the failed node
    let side = cl.dist_set(&g.colliding_set)?.clone();
    let mut seen = BTreeSet::new();
    let mut by_node: BTreeMap<usize, Vec<(usize, Vec<u8>)>> = BTreeMap::new();
    for frag in side.fragments.iter().filter(|f| f.node != failed_node) {
        let engine = cl.node(frag.node)?;
        for entry in read_local(engine, engine.set_id(&frag.local_name)?)? {
            let (id, home, rec) = decode_colliding(&entry);
            if home != failed_node || !seen.insert(id) {
                continue;
            }
            if let Some(n) = rebuilt.get_mut(rec).filter(|n| **n > 0) {
                *n -= 1;
                continue;
            }
            let p = scheme.partition_of(rec);
            if lost_set.contains(&p) {
                by_node.entry(frag.node).or_default().push((p, rec.to_vec()));
            }
        }
    }
    let mut colliding_restored = 0;
    for (node, recs) in &by_node {
        let routed: Vec<(usize, &[u8])> = recs.iter().map(|(p, r)| (*p, r.as_slice())).collect();
        let c = ship(cl, *node, target, &scheme.partition_map, t.page_size, &routed)?;
        for (p, n) in c.into_iter().enumerate() {
            restored_per_partition[p] += n;
            colliding_restored += n;
        }
    }

    let expected: u64 = t.fragments.iter().filter(|f| lost_set.contains(&f.partition)).map(|f| f.records).sum();
    let restored = from_source + colliding_restored;
    if restored < expected {
        return Err(Error::UnrecoverableObjects((expected - restored) as usize));
    }
    let pages_transferred = cluster.pages_transferred() - transferred_before;
    let entry = cluster.catalog.sets.get_mut(target).expect("checked above");
    for f in entry.fragments.iter_mut().filter(|f| lost_set.contains(&f.partition)) {
        f.node = scheme.partition_map[f.partition];
        f.records = restored_per_partition[f.partition];
    }
    entry.scheme = Some(scheme);
    Ok(RecoveryReport {
        target: target.to_string(),
        source_replica: source_name,
        failed_node,
        lost_partitions: lost,
        takeover,
        objects_restored: restored,
        colliding_restored,
        pages_transferred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ClusterConfig, DispatchStrategy};

    fn records(n: usize) -> Vec<Vec<u8>> {
        (0..n).map(|i| format!("object-{i:07}").into_bytes()).collect()
    }

    fn scheme(id: u64, k: usize, seed: u64) -> PartitionScheme {
        PartitionScheme::hash(id, k, k, seed, PartitionScheme::whole_record_key()).unwrap()
    }

    fn sorted(mut v: Vec<Vec<u8>>) -> Vec<Vec<u8>> {
        v.sort();
        v
    }

    #[test]
    fn closed_forms() {
        assert_eq!(multi_failure_ratio(10, 1).unwrap(), 0.1);
        assert_eq!(multi_failure_ratio(10, 2).unwrap(), 0.28);
        assert!((multi_failure_ratio(1000, 40).unwrap() - 0.564517).abs() < 1e-6);
        assert!(multi_failure_ratio(5, 5).is_err());
        assert!(multi_failure_ratio(5, 0).is_err());
        assert_eq!(expected_collisions(5.98e9, 10), 5.98e8);
        assert_eq!(expected_collisions(0.0, 4), 0.0);
        assert_eq!(expected_collisions(7.0, 1), 7.0);
    }

    #[test]
    fn partition_routes_and_conserves() {
        let mut c = Cluster::spawn(ClusterConfig::new(3, 8 << 20)).unwrap();
        let recs = records(3000);
        c.dispatch_data("src", &recs, DispatchStrategy::RoundRobin).unwrap();
        let s = scheme(1, 3, 11);
        partition_set(&mut c, "src", "dst", s.clone()).unwrap();
        let set = c.dist_set("dst").unwrap().clone();
        for f in &set.fragments {
            for r in c.read_fragment(f).unwrap() {
                assert_eq!(s.node_of(&r), f.node);
            }
        }
        assert_eq!(sorted(c.read_set("dst").unwrap()), recs);
        assert!(matches!(partition_set(&mut c, "src", "dst", s), Err(Error::TargetNotEmpty(_))));
    }

    #[test]
    fn identical_schemes_collide_everywhere() {
        let mut c = Cluster::spawn(ClusterConfig::new(3, 8 << 20)).unwrap();
        let recs = records(600);
        c.dispatch_data("src", &recs, DispatchStrategy::RoundRobin).unwrap();
        partition_set(&mut c, "src", "a", scheme(1, 3, 5)).unwrap();
        partition_set(&mut c, "src", "b", scheme(2, 3, 5)).unwrap();
        let g = register_replica(&mut c, "a", "b", 1).unwrap();
        assert_eq!(c.catalog.groups[&g].colliding_objects, 600);
    }

    #[test]
    fn disjoint_placement_has_no_collisions() {
        let mut c = Cluster::spawn(ClusterConfig::new(4, 8 << 20)).unwrap();
        let recs = records(400);
        c.dispatch_data("src", &recs, DispatchStrategy::RoundRobin).unwrap();
        let mut a = scheme(1, 2, 5);
        a.partition_map = vec![0, 1];
        let mut b = scheme(2, 2, 9);
        b.partition_map = vec![2, 3];
        partition_set(&mut c, "src", "a", a).unwrap();
        partition_set(&mut c, "src", "b", b).unwrap();
        let g = register_replica(&mut c, "a", "b", 1).unwrap();
        assert_eq!(c.catalog.groups[&g].colliding_objects, 0);
    }

    #[test]
    fn mismatched_members_rejected() {
        let mut c = Cluster::spawn(ClusterConfig::new(2, 8 << 20)).unwrap();
        c.dispatch_data("x", &records(10), DispatchStrategy::RoundRobin).unwrap();
        c.dispatch_data("y", &records(11), DispatchStrategy::RoundRobin).unwrap();
        assert!(matches!(register_replica(&mut c, "x", "y", 1), Err(Error::ObjectSetMismatch(_))));
    }

    #[test]
    fn recovery_restores_snapshot() {
        let mut c = Cluster::spawn(ClusterConfig::new(3, 8 << 20)).unwrap();
        let recs = records(3000);
        c.dispatch_data("src", &recs, DispatchStrategy::RoundRobin).unwrap();
        partition_set(&mut c, "src", "a", scheme(1, 3, 21)).unwrap();
        partition_set(&mut c, "src", "b", scheme(2, 3, 22)).unwrap();
        let g = register_replica(&mut c, "a", "b", 1).unwrap();
        let colliding = c.catalog.groups[&g].colliding_objects;
        assert!(colliding > 0);
        let snapshot = sorted(c.read_set("b").unwrap());
        c.fail_node(0).unwrap();
        assert!(matches!(c.read_set("b"), Err(Error::NodeDown(0))));
        let rep = recover_node(&mut c, g, "b", 0).unwrap();
        assert!(rep.colliding_restored > 0);
        assert_eq!(sorted(c.read_set("b").unwrap()), snapshot);
        // the other member recovers from the repaired one
        recover_node(&mut c, g, "a", 0).unwrap();
        assert_eq!(sorted(c.read_set("a").unwrap()), snapshot);
    }

    #[test]
    fn unpartitioned_target_and_single_member() {
        let mut c = Cluster::spawn(ClusterConfig::new(2, 8 << 20)).unwrap();
        c.dispatch_data("x", &records(10), DispatchStrategy::RoundRobin).unwrap();
        c.dispatch_data("y", &records(10), DispatchStrategy::RoundRobin).unwrap();
        let g = register_replica(&mut c, "x", "y", 1).unwrap();
        assert!(matches!(recover_node(&mut c, g, "y", 0), Err(Error::NotPartitioned(_))));
        c.catalog.groups.get_mut(&g).unwrap().members.truncate(1);
        let mut c2 = Cluster::spawn(ClusterConfig::new(2, 8 << 20)).unwrap();
        c2.dispatch_data("src", &records(10), DispatchStrategy::RoundRobin).unwrap();
        partition_set(&mut c2, "src", "a", scheme(1, 2, 1)).unwrap();
        partition_set(&mut c2, "src", "b", scheme(2, 2, 2)).unwrap();
        let g2 = register_replica(&mut c2, "a", "b", 1).unwrap();
        c2.catalog.groups.get_mut(&g2).unwrap().members = vec!["b".into()];
        assert!(matches!(recover_node(&mut c2, g2, "b", 0), Err(Error::NoSurvivingReplica)));
    }

    #[test]
    fn colliding_copies_span_two_nodes() {
        let mut c = Cluster::spawn(ClusterConfig::new(3, 8 << 20)).unwrap();
        let recs = records(900);
        c.dispatch_data("src", &recs, DispatchStrategy::RoundRobin).unwrap();
        let a = scheme(1, 3, 3);
        let b = scheme(2, 3, 4);
        partition_set(&mut c, "src", "a", a.clone()).unwrap();
        partition_set(&mut c, "src", "b", b.clone()).unwrap();
        let g = register_replica(&mut c, "a", "b", 1).unwrap();
        let side = c.catalog.groups[&g].colliding_set.clone();
        let mut side_nodes: HashMap<Vec<u8>, BTreeSet<usize>> = HashMap::new();
        for f in c.dist_set(&side).unwrap().fragments.clone() {
            for e in c.read_fragment(&f).unwrap() {
                side_nodes.entry(decode_colliding(&e).2.to_vec()).or_default().insert(f.node);
            }
        }
        for r in &recs {
            let mut nodes: BTreeSet<usize> = [a.node_of(r), b.node_of(r)].into();
            if let Some(extra) = side_nodes.get(r) {
                nodes.extend(extra);
            }
            assert!(nodes.len() >= 2);
        }
        assert_eq!(count_collisions(recs.iter().map(|r| r.as_slice()), &a, &b), c.catalog.groups[&g].colliding_objects);
    }
}
