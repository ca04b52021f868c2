use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set-associative table of tagged keys with true LRU replacement.
///
/// Recency is tracked with a per-table access stamp; the way with the
/// smallest stamp in a set is the LRU victim. Used for caches (keyed by line
/// number), TLBs (keyed by virtual page number) and the page-walk cache.
#[derive(Clone, Debug)]
pub struct LruSets {
    sets: usize,
    ways: usize,
    keys: Vec<u64>,
    valid: Vec<bool>,
    dirty: Vec<bool>,
    stamps: Vec<u64>,
    clock: u64,
}

/// Entry pushed out of a set by an insertion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Eviction {
    pub key: u64,
    pub dirty: bool,
}

impl LruSets {
    pub fn new(sets: usize, ways: usize) -> LruSets {
        assert!(sets >= 1 && ways >= 1);
        let n = sets * ways;
        LruSets {
            sets,
            ways,
            keys: vec![0; n],
            valid: vec![false; n],
            dirty: vec![false; n],
            stamps: vec![0; n],
            clock: 0,
        }
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    fn set_range(&self, key: u64) -> std::ops::Range<usize> {
        let set = (key % self.sets as u64) as usize;
        set * self.ways..(set + 1) * self.ways
    }

    fn find(&self, key: u64) -> Option<usize> {
        self.set_range(key)
            .find(|&i| self.valid[i] && self.keys[i] == key)
    }

    pub fn contains(&self, key: u64) -> bool {
        self.find(key).is_some()
    }

    pub fn is_dirty(&self, key: u64) -> bool {
        self.find(key).is_some_and(|i| self.dirty[i])
    }

    /// Looks `key` up, refreshing its recency on a hit.
    pub fn touch(&mut self, key: u64, make_dirty: bool) -> bool {
        match self.find(key) {
            Some(i) => {
                self.clock += 1;
                self.stamps[i] = self.clock;
                self.dirty[i] |= make_dirty;
                true
            }
            None => false,
        }
    }

    /// Sets the dirty bit of a resident key without changing recency.
    pub fn mark_dirty(&mut self, key: u64) -> bool {
        match self.find(key) {
            Some(i) => {
                self.dirty[i] = true;
                true
            }
            None => false,
        }
    }

    /// Inserts a key known to be absent as the most recent entry of its set.
    pub fn insert(&mut self, key: u64, dirty: bool) -> Option<Eviction> {
        debug_assert!(!self.contains(key));
        let range = self.set_range(key);
        let slot = range
            .clone()
            .find(|&i| !self.valid[i])
            .unwrap_or_else(|| range.min_by_key(|&i| self.stamps[i]).unwrap());
        let evicted = self.valid[slot].then(|| Eviction {
            key: self.keys[slot],
            dirty: self.dirty[slot],
        });
        self.clock += 1;
        self.keys[slot] = key;
        self.valid[slot] = true;
        self.dirty[slot] = dirty;
        self.stamps[slot] = self.clock;
        evicted
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheLevelConfig {
    pub size_bytes: u64,
    pub ways: u32,
    pub latency_cycles: u32,
}

impl CacheLevelConfig {
    pub fn new(size_bytes: u64, ways: u32, latency_cycles: u32) -> CacheLevelConfig {
        CacheLevelConfig {
            size_bytes,
            ways,
            latency_cycles,
        }
    }

    pub fn sets(&self, line_size: u64) -> usize {
        (self.size_bytes / (self.ways as u64 * line_size)) as usize
    }

    pub fn validate(&self, name: &str, line_size: u64) -> Result<()> {
        if self.ways == 0 || self.size_bytes == 0 {
            return Err(Error::Config(format!("{name}: size and ways must be positive")));
        }
        if self.size_bytes % (self.ways as u64 * line_size) != 0 {
            return Err(Error::Config(format!(
                "{name}: size {} is not a multiple of ways x line size",
                self.size_bytes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlbConfig {
    pub l1_entries: u32,
    pub l1_ways: u32,
    pub l2_entries: u32,
    pub l2_ways: u32,
    /// Entries per page-walk-cache level (upper two page-table levels).
    pub walk_cache_entries: u32,
}

impl Default for TlbConfig {
    fn default() -> Self {
        TlbConfig {
            l1_entries: 32,
            l1_ways: 8,
            l2_entries: 128,
            l2_ways: 8,
            walk_cache_entries: 16,
        }
    }
}

impl TlbConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, entries, ways) in [
            ("l1 tlb", self.l1_entries, self.l1_ways),
            ("l2 tlb", self.l2_entries, self.l2_ways),
        ] {
            if ways == 0 || entries == 0 || entries % ways != 0 {
                return Err(Error::Config(format!(
                    "{name}: {entries} entries not divisible into {ways} ways"
                )));
            }
        }
        if self.walk_cache_entries == 0 {
            return Err(Error::Config("walk cache needs at least one entry".into()));
        }
        Ok(())
    }
}

/// Memory hierarchy parameters: split L1, unified L2, per-side TLBs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub line_size_bytes: u64,
    pub l1i: CacheLevelConfig,
    pub l1d: CacheLevelConfig,
    pub l2: CacheLevelConfig,
    pub tlb: TlbConfig,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            line_size_bytes: 64,
            l1i: CacheLevelConfig::new(48 << 10, 3, 1),
            l1d: CacheLevelConfig::new(32 << 10, 2, 5),
            l2: CacheLevelConfig::new(1 << 20, 16, 29),
            tlb: TlbConfig::default(),
        }
    }
}

impl CacheConfig {
    pub const LEVELS: u8 = 2;
    pub const MEMORY_LEVEL: u8 = 3;

    pub fn validate(&self) -> Result<()> {
        let line = self.line_size_bytes;
        if line == 0 || !line.is_power_of_two() {
            return Err(Error::Config(format!("line size {line} is not a power of two")));
        }
        self.l1i.validate("l1i", line)?;
        self.l1d.validate("l1d", line)?;
        self.l2.validate("l2", line)?;
        self.tlb.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Ifetch,
    Load,
    Store,
}

/// Outcome of one hierarchy access.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AccessResult {
    /// 1 = L1 hit, 2 = L2 hit, 3 = memory.
    pub level: u8,
    /// Per page-table level: 0 not walked, 1 walk-cache hit, 2 L2, 3 memory.
    pub walk_levels: [u8; 3],
    /// Dirty evictions from L1, from L2 on the demand fill, and from L2 while
    /// filling page-table entries.
    pub writebacks: [u16; 3],
}

pub const PAGE_BYTES: u64 = 4096;
const VPN_BITS: u32 = 27;
const PT_ROOT: u64 = 0x7000_0000_0000;
const PT_MID: u64 = 0x7100_0000_0000;
const PT_LEAF: u64 = 0x7200_0000_0000;

fn pte_addr(level: usize, vpn: u64) -> u64 {
    let vpn = vpn & ((1 << VPN_BITS) - 1);
    match level {
        0 => PT_ROOT + (vpn >> 18) * 8,
        1 => PT_MID + (vpn >> 18) * PAGE_BYTES + ((vpn >> 9) & 511) * 8,
        _ => PT_LEAF + (vpn >> 9) * PAGE_BYTES + (vpn & 511) * 8,
    }
}

#[derive(Clone, Debug)]
struct Translation {
    l1: LruSets,
    l2: LruSets,
    /// Walk caches for the root and middle page-table levels.
    walk: [LruSets; 2],
}

impl Translation {
    fn new(cfg: &TlbConfig) -> Translation {
        let lru = |entries: u32, ways: u32| LruSets::new((entries / ways) as usize, ways as usize);
        let pwc = || LruSets::new(1, cfg.walk_cache_entries as usize);
        Translation {
            l1: lru(cfg.l1_entries, cfg.l1_ways),
            l2: lru(cfg.l2_entries, cfg.l2_ways),
            walk: [pwc(), pwc()],
        }
    }
}

/// Caches and TLBs of one core. State mutates on every access.
#[derive(Clone, Debug)]
pub struct CacheHierarchy {
    cfg: CacheConfig,
    line_shift: u32,
    l1i: LruSets,
    l1d: LruSets,
    l2: LruSets,
    itlb: Translation,
    dtlb: Translation,
}

impl CacheHierarchy {
    pub fn new(cfg: &CacheConfig) -> Result<CacheHierarchy> {
        cfg.validate()?;
        let line = cfg.line_size_bytes;
        let level = |c: &CacheLevelConfig| LruSets::new(c.sets(line), c.ways as usize);
        Ok(CacheHierarchy {
            cfg: *cfg,
            line_shift: line.trailing_zeros(),
            l1i: level(&cfg.l1i),
            l1d: level(&cfg.l1d),
            l2: level(&cfg.l2),
            itlb: Translation::new(&cfg.tlb),
            dtlb: Translation::new(&cfg.tlb),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        addr >> self.line_shift
    }

    pub fn l1_contains(&self, kind: AccessKind, addr: u64) -> bool {
        let line = self.line_of(addr);
        match kind {
            AccessKind::Ifetch => self.l1i.contains(line),
            _ => self.l1d.contains(line),
        }
    }

    pub fn l2_contains(&self, addr: u64) -> bool {
        self.l2.contains(self.line_of(addr))
    }

    /// Reads one page-table entry through L2. Returns its level code and
    /// whether the fill evicted a dirty L2 line.
    fn read_pte(&mut self, addr: u64) -> (u8, bool) {
        let line = self.line_of(addr);
        if self.l2.touch(line, false) {
            (2, false)
        } else {
            let dirty = self.l2.insert(line, false).is_some_and(|e| e.dirty);
            (3, dirty)
        }
    }

    fn translate(&mut self, kind: AccessKind, addr: u64) -> ([u8; 3], u16) {
        let vpn = addr / PAGE_BYTES;
        let tlb = match kind {
            AccessKind::Ifetch => &mut self.itlb,
            _ => &mut self.dtlb,
        };
        if tlb.l1.touch(vpn, false) {
            return ([0; 3], 0);
        }
        if tlb.l2.touch(vpn, false) {
            tlb.l1.insert(vpn, false);
            return ([0; 3], 0);
        }
        let mid_key = vpn >> 9;
        let root_key = vpn >> 18;
        let start = if tlb.walk[1].touch(mid_key, false) {
            2
        } else if tlb.walk[0].touch(root_key, false) {
            1
        } else {
            0
        };
        let mut levels = [0u8; 3];
        if start > 0 {
            levels[start - 1] = 1;
        }
        let mut writebacks = 0u16;
        for (level, code) in levels.iter_mut().enumerate().skip(start) {
            let (c, dirty) = self.read_pte(pte_addr(level, vpn));
            *code = c;
            writebacks += dirty as u16;
        }
        let tlb = match kind {
            AccessKind::Ifetch => &mut self.itlb,
            _ => &mut self.dtlb,
        };
        if start == 0 {
            tlb.walk[0].insert(root_key, false);
        }
        if start <= 1 {
            tlb.walk[1].insert(mid_key, false);
        }
        tlb.l2.insert(vpn, false);
        tlb.l1.insert(vpn, false);
        (levels, writebacks)
    }

    /// Performs one access: TLB lookup (and walk on a miss), then the cache
    /// lookup with write-allocate fills into every level above the hit.
    pub fn access(&mut self, addr: u64, kind: AccessKind) -> AccessResult {
        let (walk_levels, walk_wb) = self.translate(kind, addr);
        let line = self.line_of(addr);
        let store = kind == AccessKind::Store;
        let l1 = match kind {
            AccessKind::Ifetch => &mut self.l1i,
            _ => &mut self.l1d,
        };
        let mut result = AccessResult {
            level: 1,
            walk_levels,
            writebacks: [0, 0, walk_wb],
        };
        if l1.touch(line, store) {
            return result;
        }
        if self.l2.touch(line, false) {
            result.level = 2;
        } else {
            result.level = 3;
            if self.l2.insert(line, false).is_some_and(|e| e.dirty) {
                result.writebacks[1] += 1;
            }
        }
        let l1 = match kind {
            AccessKind::Ifetch => &mut self.l1i,
            _ => &mut self.l1d,
        };
        if let Some(victim) = l1.insert(line, store) {
            if victim.dirty {
                result.writebacks[0] += 1;
                // Absorbed by L2 when resident, otherwise written to memory.
                self.l2.mark_dirty(victim.key);
            }
        }
        result
    }
}
