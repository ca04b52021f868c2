//! Brute-force cache, TLB and branch predictor references.

use insnsim::history::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recency-ordered sets, least recent first.
#[derive(Clone)]
struct ListLru {
    sets: Vec<Vec<(u64, bool)>>,
    ways: usize,
}

impl ListLru {
    fn new(sets: usize, ways: usize) -> Self {
        ListLru {
            sets: vec![Vec::new(); sets],
            ways,
        }
    }

    fn set(&mut self, key: u64) -> &mut Vec<(u64, bool)> {
        let n = self.sets.len() as u64;
        &mut self.sets[(key % n) as usize]
    }

    fn contains(&self, key: u64) -> bool {
        let n = self.sets.len() as u64;
        self.sets[(key % n) as usize].iter().any(|e| e.0 == key)
    }

    fn touch(&mut self, key: u64, dirty: bool) -> bool {
        let set = self.set(key);
        match set.iter().position(|e| e.0 == key) {
            Some(i) => {
                let (k, d) = set.remove(i);
                set.push((k, d || dirty));
                true
            }
            None => false,
        }
    }

    fn mark_dirty(&mut self, key: u64) {
        if let Some(e) = self.set(key).iter_mut().find(|e| e.0 == key) {
            e.1 = true;
        }
    }

    fn insert(&mut self, key: u64, dirty: bool) -> Option<(u64, bool)> {
        let ways = self.ways;
        let set = self.set(key);
        let victim = (set.len() == ways).then(|| set.remove(0));
        set.push((key, dirty));
        victim
    }
}

/// Random touches, inserts and dirty marks on both LRU models.
pub fn check_lru_sets(seed: u64, accesses: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fast = LruSets::new(4, 3);
    let mut slow = ListLru::new(4, 3);
    for _ in 0..accesses {
        let key = rng.random_range(0..40u64);
        let dirty = rng.random_bool(0.3);
        assert_eq!(fast.contains(key), slow.contains(key));
        if rng.random_bool(0.1) {
            assert_eq!(fast.mark_dirty(key), slow.contains(key));
            slow.mark_dirty(key);
        } else if !fast.touch(key, dirty) {
            assert!(!slow.touch(key, dirty));
            let a = fast.insert(key, dirty).map(|e| (e.key, e.dirty));
            assert_eq!(a, slow.insert(key, dirty));
        } else {
            assert!(slow.touch(key, dirty));
        }
    }
}

const PAGE: u64 = 4096;

fn pte(level: usize, vpn: u64) -> u64 {
    let vpn = vpn & ((1 << 27) - 1);
    match level {
        0 => 0x7000_0000_0000 + (vpn >> 18) * 8,
        1 => 0x7100_0000_0000 + (vpn >> 18) * PAGE + ((vpn >> 9) & 511) * 8,
        _ => 0x7200_0000_0000 + (vpn >> 9) * PAGE + (vpn & 511) * 8,
    }
}

struct Tlb {
    l1: ListLru,
    l2: ListLru,
    walk: [ListLru; 2],
}

/// Straight-line restatement of the hierarchy's access rules.
struct SlowHierarchy {
    l1i: ListLru,
    l1d: ListLru,
    l2: ListLru,
    tlbs: [Tlb; 2],
}

impl SlowHierarchy {
    fn new(cfg: &CacheConfig) -> Self {
        let lvl = |c: &CacheLevelConfig| {
            ListLru::new((c.size_bytes / (c.ways as u64 * 64)) as usize, c.ways as usize)
        };
        let t = &cfg.tlb;
        let tlb = || Tlb {
            l1: ListLru::new((t.l1_entries / t.l1_ways) as usize, t.l1_ways as usize),
            l2: ListLru::new((t.l2_entries / t.l2_ways) as usize, t.l2_ways as usize),
            walk: [
                ListLru::new(1, t.walk_cache_entries as usize),
                ListLru::new(1, t.walk_cache_entries as usize),
            ],
        };
        SlowHierarchy {
            l1i: lvl(&cfg.l1i),
            l1d: lvl(&cfg.l1d),
            l2: lvl(&cfg.l2),
            tlbs: [tlb(), tlb()],
        }
    }

    fn access(&mut self, addr: u64, kind: AccessKind) -> AccessResult {
        let mut r = AccessResult::default();
        let vpn = addr / PAGE;
        let t = usize::from(kind != AccessKind::Ifetch);
        let tlb_hit = self.tlbs[t].l1.touch(vpn, false) || {
            let hit = self.tlbs[t].l2.touch(vpn, false);
            if hit {
                self.tlbs[t].l1.insert(vpn, false);
            }
            hit
        };
        if !tlb_hit {
            let (mid, root) = (vpn >> 9, vpn >> 18);
            let start = if self.tlbs[t].walk[1].touch(mid, false) {
                2
            } else if self.tlbs[t].walk[0].touch(root, false) {
                1
            } else {
                0
            };
            if start > 0 {
                r.walk_levels[start - 1] = 1;
            }
            for level in start..3 {
                let line = pte(level, vpn) / 64;
                if self.l2.touch(line, false) {
                    r.walk_levels[level] = 2;
                } else {
                    r.walk_levels[level] = 3;
                    if self.l2.insert(line, false).is_some_and(|v| v.1) {
                        r.writebacks[2] += 1;
                    }
                }
            }
            if start == 0 {
                self.tlbs[t].walk[0].insert(root, false);
            }
            if start <= 1 {
                self.tlbs[t].walk[1].insert(mid, false);
            }
            self.tlbs[t].l2.insert(vpn, false);
            self.tlbs[t].l1.insert(vpn, false);
        }
        let line = addr / 64;
        let store = kind == AccessKind::Store;
        let l1 = if kind == AccessKind::Ifetch { &mut self.l1i } else { &mut self.l1d };
        r.level = 1;
        if l1.touch(line, store) {
            return r;
        }
        if self.l2.touch(line, false) {
            r.level = 2;
        } else {
            r.level = 3;
            if self.l2.insert(line, false).is_some_and(|v| v.1) {
                r.writebacks[1] += 1;
            }
        }
        let l1 = if kind == AccessKind::Ifetch { &mut self.l1i } else { &mut self.l1d };
        if let Some((victim, true)) = l1.insert(line, store) {
            r.writebacks[0] += 1;
            self.l2.mark_dirty(victim);
        }
        r
    }
}

pub fn small_config() -> CacheConfig {
    CacheConfig {
        line_size_bytes: 64,
        l1i: CacheLevelConfig::new(512, 2, 1),
        l1d: CacheLevelConfig::new(1024, 2, 5),
        l2: CacheLevelConfig::new(4096, 4, 29),
        tlb: TlbConfig {
            l1_entries: 4,
            l1_ways: 2,
            l2_entries: 8,
            l2_ways: 2,
            walk_cache_entries: 2,
        },
    }
}

/// Random mixed accesses through both hierarchies; also requires that
/// writebacks actually occur.
pub fn check_hierarchy(seeds: std::ops::Range<u64>, accesses: usize) {
    let cfg = small_config();
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fast = CacheHierarchy::new(&cfg).unwrap();
        let mut slow = SlowHierarchy::new(&cfg);
        let mut writebacks = [0u64; 3];
        for i in 0..accesses {
            // Mostly a few hot pages, sometimes far pages that need full walks.
            let page = if rng.random_bool(0.9) {
                rng.random_range(0..12u64)
            } else {
                rng.random_range(0..1u64 << 20)
            };
            let addr = page * PAGE + rng.random_range(0..PAGE);
            let kind = match rng.random_range(0..10) {
                0..=1 => AccessKind::Ifetch,
                2..=5 => AccessKind::Load,
                _ => AccessKind::Store,
            };
            let a = fast.access(addr, kind);
            let b = slow.access(addr, kind);
            assert_eq!(a, b, "seed {seed} access {i} at {addr:#x} {kind:?}");
            for k in 0..3 {
                writebacks[k] += a.writebacks[k] as u64;
            }
        }
        assert!(writebacks[0] > 0 && writebacks[1] > 0, "{writebacks:?}");
    }
}

/// Bi-mode predictor written from its definition with plain arithmetic.
struct SlowBiMode {
    choice: Vec<i32>,
    tables: [Vec<i32>; 2],
    history: u64,
    bits: u32,
    btb: Vec<(u64, u64, bool)>,
}

impl SlowBiMode {
    fn new(cfg: &BranchConfig) -> Self {
        SlowBiMode {
            choice: vec![2; cfg.choice_entries as usize],
            tables: [
                vec![1; cfg.direction_entries as usize],
                vec![2; cfg.direction_entries as usize],
            ],
            history: 0,
            bits: cfg.history_bits,
            btb: vec![(0, 0, false); cfg.btb_entries as usize],
        }
    }

    fn step(&mut self, pc: u64, conditional: bool, taken: bool, target: u64) -> bool {
        let word = pc / 4;
        let c = (word % self.choice.len() as u64) as usize;
        let d = ((word ^ self.history) % self.tables[0].len() as u64) as usize;
        let which = usize::from(self.choice[c] > 1);
        let guess = !conditional || self.tables[which][d] > 1;
        let b = (word % self.btb.len() as u64) as usize;
        let target_known = self.btb[b].2 && self.btb[b].0 == pc && self.btb[b].1 == target;
        let wrong = guess != taken || (taken && !target_known);
        if conditional {
            let table_right = (self.tables[which][d] > 1) == taken;
            let step = if taken { 1 } else { -1 };
            self.tables[which][d] = (self.tables[which][d] + step).clamp(0, 3);
            let choice_agrees = (which == 1) == taken;
            if choice_agrees || !table_right {
                self.choice[c] = (self.choice[c] + step).clamp(0, 3);
            }
            self.history = ((self.history << 1) | taken as u64) % (1u64 << self.bits);
        }
        if taken {
            self.btb[b] = (pc, target, true);
        }
        wrong
    }
}

/// Biased random branch stream through both predictors.
pub fn check_bimode(seed: u64, events: usize) {
    let cfg = BranchConfig {
        choice_entries: 64,
        direction_entries: 128,
        history_bits: 6,
        btb_entries: 32,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fast = BranchPredictor::new(&cfg).unwrap();
    let mut slow = SlowBiMode::new(&cfg);
    let bias: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let mut mispredicts = 0;
    for i in 0..events {
        let site = rng.random_range(0..200usize);
        let pc = 0x40_0000 + site as u64 * 4;
        let conditional = site % 7 != 0;
        let taken = !conditional || rng.random_bool(bias[site]);
        let target = 0x50_0000 + (site as u64 % 13) * 64 + u64::from(rng.random_bool(0.05)) * 4;
        let a = fast.predict_and_update(pc, conditional, taken, target);
        let b = slow.step(pc, conditional, taken, target);
        assert_eq!(a, b, "event {i}");
        mispredicts += a as u32;
    }
    let (c, t, n) = fast.counters();
    assert!(c.iter().zip(&slow.choice).all(|(&x, &y)| x as i32 == y));
    assert!(t.iter().zip(&slow.tables[1]).all(|(&x, &y)| x as i32 == y));
    assert!(n.iter().zip(&slow.tables[0]).all(|(&x, &y)| x as i32 == y));
    assert!(mispredicts as usize > events / 100 && (mispredicts as usize) < events * 9 / 10);
}
