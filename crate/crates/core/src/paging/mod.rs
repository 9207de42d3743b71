//! Victim selection.
//!
//! The data-aware policy picks the locality set whose next victim page has
//! the lowest expected eviction cost (ended sets first), then evicts one page
//! from sets being written or 10% of the resident unpinned pages from sets
//! being read. The baselines (global LRU/MRU and DBMIN variants) exist for
//! comparison runs.

pub mod cost;

use serde::{Deserialize, Serialize};

use crate::buffer_pool::PageKey;
use crate::error::{Error, Result};
use crate::locality::{EvictionOrder, LocalitySet, ReadingPattern, SetId, WritingPattern};

pub use cost::{
    eviction_cost, lambda_clamped, lambda_estimate, p_reuse, CostInputs, CostModelParams, WriteCostForm,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    DataAware,
    GlobalLru,
    GlobalMru,
    DbminAdaptive,
    Dbmin1,
    Dbmin1000,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::DataAware,
        PolicyKind::GlobalLru,
        PolicyKind::GlobalMru,
        PolicyKind::DbminAdaptive,
        PolicyKind::Dbmin1,
        PolicyKind::Dbmin1000,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::DataAware => "data-aware",
            PolicyKind::GlobalLru => "lru",
            PolicyKind::GlobalMru => "mru",
            PolicyKind::DbminAdaptive => "dbmin-adaptive",
            PolicyKind::Dbmin1 => "dbmin-1",
            PolicyKind::Dbmin1000 => "dbmin-1000",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvictionDecision {
    pub victim_set: SetId,
    pub victim_pages: Vec<PageKey>,
    /// Expected cost of the page that drove the choice; 0 for baselines.
    pub predicted_cost: f64,
}

/// Pages evicted per decision from `set`.
pub fn eviction_quota(set: &LocalitySet) -> usize {
    if set.attributes.current_operation.is_writing() {
        1
    } else {
        ten_percent(set.evictable.len())
    }
}

fn ten_percent(n: usize) -> usize {
    n.div_ceil(10).max(1)
}

/// The page `set` would give up next, as (last access tick, seq).
pub fn next_victim(set: &LocalitySet) -> Option<(u64, u64)> {
    match set.attributes.eviction_order() {
        EvictionOrder::Mru => set.evictable.last().copied(),
        EvictionOrder::Lru => set.evictable.first().copied(),
    }
}

pub fn select_victim_pages(set: &LocalitySet, quota: usize) -> Result<Vec<PageKey>> {
    if set.evictable.is_empty() {
        return Err(Error::NoEvictablePage);
    }
    let keys = |it: &mut dyn Iterator<Item = &(u64, u64)>| -> Vec<PageKey> {
        it.take(quota).map(|&(_, seq)| PageKey::new(set.id, seq)).collect()
    };
    Ok(match set.attributes.eviction_order() {
        EvictionOrder::Mru => keys(&mut set.evictable.iter().rev()),
        EvictionOrder::Lru => keys(&mut set.evictable.iter()),
    })
}

/// Cost of evicting the page `(last_access, seq)` of `set`.
pub fn page_cost(set: &LocalitySet, last_access: u64, dirty: bool, params: &CostModelParams, now: u64) -> f64 {
    let inputs = CostInputs {
        dirty,
        durability: set.attributes.durability,
        v_r: set.profiled_v_r,
        v_w: set.profiled_v_w,
        w_r: set.read_penalty(),
        last_access,
    };
    eviction_cost(&inputs, params, now)
}

/// Data-aware choice of victim set. Returns the set and the cost of its next
/// victim page.
pub fn select_victim_set<'a>(
    sets: impl IntoIterator<Item = &'a LocalitySet>,
    is_dirty: &dyn Fn(PageKey) -> bool,
    now: u64,
    params: &CostModelParams,
) -> Result<(SetId, f64)> {
    // (ended, cost, id): alive sets only compete when no ended set can give a page
    let mut best: Option<(bool, f64, SetId)> = None;
    for set in sets {
        let Some((last, seq)) = next_victim(set) else { continue };
        let ended = set.attributes.is_ended();
        let cost = page_cost(set, last, is_dirty(PageKey::new(set.id, seq)), params, now);
        let better = match best {
            None => true,
            Some((b_ended, b_cost, b_id)) => {
                (ended && !b_ended) || (ended == b_ended && (cost < b_cost || (cost == b_cost && set.id < b_id)))
            }
        };
        if better {
            best = Some((ended, cost, set.id));
        }
    }
    best.map(|(_, cost, id)| (id, cost)).ok_or(Error::NoEvictablePage)
}

/// Everything a policy needs to decide.
pub struct PolicyContext<'a> {
    pub sets: &'a [&'a LocalitySet],
    pub is_dirty: &'a dyn Fn(PageKey) -> bool,
    pub now: u64,
    pub params: &'a CostModelParams,
    pub capacity: u64,
}

pub fn decide(kind: PolicyKind, ctx: &PolicyContext<'_>) -> Result<EvictionDecision> {
    match kind {
        PolicyKind::DataAware => decide_data_aware(ctx),
        PolicyKind::GlobalLru => decide_global(ctx, EvictionOrder::Lru),
        PolicyKind::GlobalMru => decide_global(ctx, EvictionOrder::Mru),
        PolicyKind::DbminAdaptive | PolicyKind::Dbmin1 | PolicyKind::Dbmin1000 => decide_dbmin(kind, ctx),
    }
}

fn decide_data_aware(ctx: &PolicyContext<'_>) -> Result<EvictionDecision> {
    let (victim, cost) = select_victim_set(ctx.sets.iter().copied(), ctx.is_dirty, ctx.now, ctx.params)?;
    let set = ctx.sets.iter().find(|s| s.id == victim).expect("selected set exists");
    Ok(EvictionDecision {
        victim_set: victim,
        victim_pages: select_victim_pages(set, eviction_quota(set))?,
        predicted_cost: cost,
    })
}

/// Up to 10% of all unpinned resident pages, by global recency.
fn decide_global(ctx: &PolicyContext<'_>, order: EvictionOrder) -> Result<EvictionDecision> {
    let mut all: Vec<(u64, PageKey)> = ctx
        .sets
        .iter()
        .flat_map(|s| s.evictable.iter().map(move |&(t, seq)| (t, PageKey::new(s.id, seq))))
        .collect();
    if all.is_empty() {
        return Err(Error::NoEvictablePage);
    }
    all.sort_unstable();
    if order == EvictionOrder::Mru {
        all.reverse();
    }
    let quota = ten_percent(all.len());
    let victim_pages: Vec<PageKey> = all.into_iter().take(quota).map(|(_, k)| k).collect();
    Ok(EvictionDecision { victim_set: victim_pages[0].set, victim_pages, predicted_cost: 0.0 })
}

/// Desired locality-set size, in pages, under a DBMIN variant.
pub fn dbmin_desired_pages(kind: PolicyKind, set: &LocalitySet, pool_pages: u64) -> u64 {
    match kind {
        PolicyKind::Dbmin1 => 1,
        PolicyKind::Dbmin1000 => 1000,
        _ => {
            let a = &set.attributes;
            if a.reading_pattern == ReadingPattern::RandomRead || a.writing_pattern == WritingPattern::RandomMutableWrite {
                (pool_pages * 5 / 100).max(4)
            } else if a.reading_pattern == ReadingPattern::SequentialRead {
                // loop-sequential, capped at the pool so it never blocks alone
                (set.page_count() as u64).min(pool_pages)
            } else {
                1
            }
        }
    }
}

fn decide_dbmin(kind: PolicyKind, ctx: &PolicyContext<'_>) -> Result<EvictionDecision> {
    let mut desired_bytes = 0u64;
    let mut over: Option<(u64, SetId)> = None;
    let mut fallback: Option<(usize, SetId)> = None;
    for set in ctx.sets {
        if set.attributes.is_ended() || set.page_count() == 0 {
            continue;
        }
        let desired = dbmin_desired_pages(kind, set, ctx.capacity / set.page_size);
        desired_bytes = desired_bytes.saturating_add(desired.saturating_mul(set.page_size));
        if set.evictable.is_empty() {
            continue;
        }
        if set.resident_pages > desired {
            let excess = set.resident_pages - desired;
            if over.is_none_or(|(e, id)| excess > e || (excess == e && set.id < id)) {
                over = Some((excess, set.id));
            }
        }
        let n = set.evictable.len();
        if fallback.is_none_or(|(m, id)| n > m || (n == m && set.id < id)) {
            fallback = Some((n, set.id));
        }
    }
    if desired_bytes > ctx.capacity {
        return Err(Error::PolicyBlocked { desired_bytes, capacity: ctx.capacity });
    }
    // ended sets hold no desired share; drain them first
    let ended = ctx.sets.iter().filter(|s| s.attributes.is_ended() && !s.evictable.is_empty()).min_by_key(|s| s.id);
    let victim = match (ended, over, fallback) {
        (Some(s), _, _) => s.id,
        (None, Some((_, id)), _) | (None, None, Some((_, id))) => id,
        (None, None, None) => return Err(Error::NoEvictablePage),
    };
    let set = ctx.sets.iter().find(|s| s.id == victim).expect("selected set exists");
    Ok(EvictionDecision { victim_set: victim, victim_pages: select_victim_pages(set, 1)?, predicted_cost: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locality::{Durability, Registry, ServiceKind};

    const PAGE: u64 = 1 << 20;

    fn set_with(reg: &mut Registry, name: &str, durability: Durability, kind: Option<ServiceKind>, ticks: &[u64]) -> SetId {
        let id = reg.create_set(name, PAGE, durability, 1 << 40, 0).unwrap();
        if let Some(k) = kind {
            reg.infer_attributes(id, k).unwrap();
        }
        let s = reg.get_mut(id).unwrap();
        for (seq, &t) in ticks.iter().enumerate() {
            s.pages.insert(seq as u64);
            s.evictable.insert((t, seq as u64));
            s.resident_pages += 1;
        }
        s.next_seq = ticks.len() as u64;
        id
    }

    fn ticks_of(set: &LocalitySet, keys: &[PageKey]) -> Vec<u64> {
        keys.iter().map(|k| set.evictable.iter().find(|(_, s)| *s == k.seq).unwrap().0).collect()
    }

    #[test]
    fn mru_and_lru_pick_by_pattern() {
        let mut reg = Registry::new();
        let seq = set_with(&mut reg, "seq", Durability::WriteBack, Some(ServiceKind::SeqRead), &[3, 9, 5]);
        let rnd = set_with(&mut reg, "rnd", Durability::WriteBack, Some(ServiceKind::Hash), &[3, 9, 5]);
        let s = reg.get(seq).unwrap();
        assert_eq!(ticks_of(s, &select_victim_pages(s, 1).unwrap()), vec![9]);
        let r = reg.get(rnd).unwrap();
        assert_eq!(ticks_of(r, &select_victim_pages(r, 2).unwrap()), vec![3, 5]);
    }

    #[test]
    fn pinned_pages_are_skipped() {
        let mut reg = Registry::new();
        let id = set_with(&mut reg, "seq", Durability::WriteBack, Some(ServiceKind::SeqRead), &[3, 9, 5]);
        // pinning removes the page from the evictable index
        reg.get_mut(id).unwrap().evictable.remove(&(9, 1));
        let s = reg.get(id).unwrap();
        assert_eq!(ticks_of(s, &select_victim_pages(s, 1).unwrap()), vec![5]);
    }

    #[test]
    fn quota_by_operation() {
        let mut reg = Registry::new();
        let w = set_with(&mut reg, "w", Durability::WriteBack, Some(ServiceKind::SeqWrite), &(0..500).collect::<Vec<_>>());
        assert_eq!(eviction_quota(reg.get(w).unwrap()), 1);
        let r = set_with(&mut reg, "r", Durability::WriteBack, Some(ServiceKind::SeqRead), &(0..37).collect::<Vec<_>>());
        assert_eq!(eviction_quota(reg.get(r).unwrap()), 4);
        let small = set_with(&mut reg, "s", Durability::WriteBack, Some(ServiceKind::SeqRead), &[1, 2, 3]);
        assert_eq!(eviction_quota(reg.get(small).unwrap()), 1);
        let idle = set_with(&mut reg, "i", Durability::WriteBack, None, &(0..20).collect::<Vec<_>>());
        assert_eq!(eviction_quota(reg.get(idle).unwrap()), 2);
    }

    #[test]
    fn ended_set_wins() {
        let mut reg = Registry::new();
        let a = set_with(&mut reg, "a", Durability::WriteThrough, Some(ServiceKind::SeqRead), &[1]);
        let b = set_with(&mut reg, "b", Durability::WriteBack, Some(ServiceKind::SeqRead), &[99]);
        reg.mark_lifetime_ended(b).unwrap();
        let sets: Vec<_> = reg.iter().collect();
        let (v, _) = select_victim_set(sets, &|_| true, 100, &CostModelParams::default()).unwrap();
        assert_eq!(v, b);
        let _ = a;
    }

    #[test]
    fn clean_old_page_beats_fresh_dirty_page() {
        let mut reg = Registry::new();
        let a = set_with(&mut reg, "a", Durability::WriteBack, Some(ServiceKind::SeqRead), &[1]);
        let b = set_with(&mut reg, "b", Durability::WriteBack, Some(ServiceKind::SeqWrite), &[999]);
        let sets: Vec<_> = reg.iter().collect();
        let dirty = |k: PageKey| k.set == b;
        let (v, _) = select_victim_set(sets, &dirty, 1000, &CostModelParams::default()).unwrap();
        assert_eq!(v, a);
    }

    #[test]
    fn nothing_evictable() {
        let mut reg = Registry::new();
        set_with(&mut reg, "a", Durability::WriteBack, None, &[]);
        let sets: Vec<_> = reg.iter().collect();
        assert!(matches!(
            select_victim_set(sets, &|_| false, 10, &CostModelParams::default()),
            Err(Error::NoEvictablePage)
        ));
    }

    #[test]
    fn global_lru_takes_ten_percent_oldest() {
        let mut reg = Registry::new();
        set_with(&mut reg, "a", Durability::WriteBack, None, &(0..10).map(|i| i * 2).collect::<Vec<_>>());
        set_with(&mut reg, "b", Durability::WriteBack, None, &(0..10).map(|i| i * 2 + 1).collect::<Vec<_>>());
        let sets: Vec<_> = reg.iter().collect();
        let params = CostModelParams::default();
        let ctx = PolicyContext { sets: &sets, is_dirty: &|_| false, now: 100, params: &params, capacity: 1 << 40 };
        let d = decide(PolicyKind::GlobalLru, &ctx).unwrap();
        assert_eq!(d.victim_pages, vec![PageKey::new(SetId(0), 0), PageKey::new(SetId(1), 0)]);
        let d = decide(PolicyKind::GlobalMru, &ctx).unwrap();
        assert_eq!(d.victim_pages, vec![PageKey::new(SetId(1), 9), PageKey::new(SetId(0), 9)]);
    }

    #[test]
    fn dbmin_1000_blocks_on_small_pool() {
        let mut reg = Registry::new();
        set_with(&mut reg, "a", Durability::WriteBack, Some(ServiceKind::SeqWrite), &[1, 2, 3]);
        let sets: Vec<_> = reg.iter().collect();
        let params = CostModelParams::default();
        let ctx = PolicyContext { sets: &sets, is_dirty: &|_| false, now: 10, params: &params, capacity: 512 * PAGE };
        assert!(matches!(decide(PolicyKind::Dbmin1000, &ctx), Err(Error::PolicyBlocked { .. })));
        assert!(decide(PolicyKind::Dbmin1, &ctx).is_ok());
    }

    #[test]
    fn dbmin_adaptive_caps_loop_sequential_at_pool() {
        let mut reg = Registry::new();
        let id = set_with(&mut reg, "a", Durability::WriteBack, Some(ServiceKind::SeqRead), &(0..8).collect::<Vec<_>>());
        // the set is larger than the pool: 20 pages, 8 resident
        reg.get_mut(id).unwrap().pages.extend(8..20);
        let set = reg.get(id).unwrap();
        assert_eq!(dbmin_desired_pages(PolicyKind::DbminAdaptive, set, 8), 8);
        let sets: Vec<_> = reg.iter().collect();
        let params = CostModelParams::default();
        let ctx = PolicyContext { sets: &sets, is_dirty: &|_| false, now: 10, params: &params, capacity: 8 * PAGE };
        let d = decide(PolicyKind::DbminAdaptive, &ctx).unwrap();
        assert_eq!(d.victim_pages, vec![PageKey::new(id, 7)]);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(PolicyKind::parse(p.name()), Some(p));
        }
    }
}
