//! L1 model + inclusive write-back L2 + flat memory.
//!
//! The L2 is a conventional set-associative LRU cache: hits match on address
//! only. Its lines still carry the installing domain and a speculation bit so
//! that squash invalidations can find speculative fills there.

use thiserror::Error;

use crate::addr::{Address, CacheGeometry, DomainId, GeometryError};
use crate::memory::{FlatMemory, LineData};
use crate::model::{
    build_model, CacheLine, CacheModel, MemoryRequest, MissPath, ModelKind, Mutation, Op, OutcomeKind, SetAssocLru,
    SfillInvAction, SfillInvRequest,
};
use crate::mshr::{Mshr, MshrAlloc};
use crate::rng::SimRng;

/// Per-level access latencies in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Latencies {
    pub l1: u32,
    pub l2: u32,
    pub memory: u32,
}

impl Default for Latencies {
    fn default() -> Self {
        Self {
            l1: 1,
            l2: 8,
            memory: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyConfig {
    pub model: ModelKind,
    pub l1: CacheGeometry,
    pub l2: CacheGeometry,
    pub latencies: Latencies,
    pub mshr_entries: usize,
    pub mutation: Option<Mutation>,
}

impl HierarchyConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            l1: CacheGeometry::default_l1(),
            l2: CacheGeometry::default_l2(),
            latencies: Latencies::default(),
            mshr_entries: Mshr::DEFAULT_ENTRIES,
            mutation: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("L1 and L2 line sizes differ ({l1} vs {l2})")]
    LineSizeMismatch { l1: usize, l2: usize },
    #[error("L2 ({l2} lines) must be larger than L1 ({l1} lines) to stay inclusive")]
    L2TooSmall { l1: usize, l2: usize },
    #[error("latency `{0}` must be at least 1 cycle")]
    ZeroLatency(&'static str),
    #[error("MSHR needs at least one entry")]
    NoMshr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryResponse {
    pub data: LineData,
    pub latency: u32,
    /// 1 = L1 hit, 2 = L2 hit, 3 = memory.
    pub source_level: u8,
    pub kind: OutcomeKind,
    pub path: Option<MissPath>,
}

impl MemoryResponse {
    pub fn byte(&self, addr: Address) -> u8 {
        self.data[(addr.value() as usize) & (self.data.len() - 1)]
    }
}

/// Where an SFill-Inv request went and what each level did with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SfillInvTrace {
    pub l1: SfillInvAction,
    pub l2: Option<SfillInvAction>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HierarchyStats {
    pub l1_hits: u64,
    pub l1_miss_l2_hit: u64,
    pub l1_miss_memory: u64,
    pub tagmiss_forward_nofill: u64,
    pub stores: u64,
    pub flushes: u64,
    pub writebacks: u64,
    /// Cycles spent on write-backs. Kept apart from response latencies.
    pub writeback_cycles: u64,
    pub back_invalidations: u64,
    pub mshr_stalls: u64,
    pub sfill_inv_received: u64,
    /// Requests dropped at some level because the line was non-speculative.
    pub sfill_inv_dropped: u64,
    pub sfill_inv_invalidated_l1: u64,
    pub sfill_inv_invalidated_l2: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("L1 holds {addr} (domain {domain}) but L2 does not")]
pub struct InclusionViolation {
    pub addr: Address,
    pub domain: DomainId,
}

pub struct Hierarchy {
    config: HierarchyConfig,
    l1: Box<dyn CacheModel>,
    l2: SetAssocLru,
    memory: FlatMemory,
    mshr: Mshr,
    rng: SimRng,
    stats: HierarchyStats,
    next_request: u64,
    check_inclusion: bool,
}

impl std::fmt::Debug for Hierarchy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hierarchy")
            .field("config", &self.config)
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

impl Hierarchy {
    pub fn new(config: HierarchyConfig, seed: u64) -> Result<Self, ConfigError> {
        if config.l1.line_size != config.l2.line_size {
            return Err(ConfigError::LineSizeMismatch {
                l1: config.l1.line_size,
                l2: config.l2.line_size,
            });
        }
        if config.l2.total_lines <= config.l1.total_lines {
            return Err(ConfigError::L2TooSmall {
                l1: config.l1.total_lines,
                l2: config.l2.total_lines,
            });
        }
        for (name, v) in [
            ("l1", config.latencies.l1),
            ("l2", config.latencies.l2),
            ("memory", config.latencies.memory),
        ] {
            if v == 0 {
                return Err(ConfigError::ZeroLatency(name));
            }
        }
        if config.mshr_entries == 0 {
            return Err(ConfigError::NoMshr);
        }
        Ok(Self {
            l1: build_model(config.model, config.l1, config.mutation)?,
            l2: SetAssocLru::new(config.l2),
            memory: FlatMemory::new(config.l1.line_size),
            mshr: Mshr::new(config.mshr_entries),
            rng: SimRng::new(seed),
            stats: HierarchyStats::default(),
            next_request: 0,
            check_inclusion: false,
            config,
        })
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.config
    }

    pub fn l1(&self) -> &dyn CacheModel {
        self.l1.as_ref()
    }

    pub fn l2(&self) -> &SetAssocLru {
        &self.l2
    }

    pub fn memory(&self) -> &FlatMemory {
        &self.memory
    }

    /// Direct access to backing memory, for setting up initial contents.
    pub fn memory_mut(&mut self) -> &mut FlatMemory {
        &mut self.memory
    }

    pub fn stats(&self) -> &HierarchyStats {
        &self.stats
    }

    pub fn latencies(&self) -> Latencies {
        self.config.latencies
    }

    /// Check inclusion after every operation and panic on a violation.
    pub fn set_inclusion_checking(&mut self, on: bool) {
        self.check_inclusion = on;
    }

    fn line_of(&self, addr: Address) -> Address {
        addr.line(self.config.l1.line_size)
    }

    /// Serves a load.
    ///
    /// # Panics
    /// If `req` is not a load; stores and flushes have their own entry points.
    pub fn access(&mut self, req: &MemoryRequest) -> MemoryResponse {
        assert_eq!(req.op, Op::Load, "use store() or flush() for {:?}", req.op);
        let resp = self.load(req);
        self.after_op();
        resp
    }

    fn load(&mut self, req: &MemoryRequest) -> MemoryResponse {
        let lat = self.config.latencies;
        let line = self.line_of(req.addr);
        if let Some(slot) = self.l1.lookup(req) {
            if !req.speculative {
                self.clear_l2_spec(line);
            }
            self.stats.l1_hits += 1;
            return MemoryResponse {
                data: self.l1.line(slot).data.clone(),
                latency: lat.l1,
                source_level: 1,
                kind: OutcomeKind::Hit,
                path: None,
            };
        }

        let id = self.next_request;
        self.next_request += 1;
        let mut latency = lat.l1 + lat.l2;
        if self.mshr.request(line, req.domain, id) == MshrAlloc::Full {
            // Never reached with one outstanding miss, kept for completeness.
            self.stats.mshr_stalls += 1;
            latency += lat.memory;
        }

        self.write_back_l1_copies(line);
        let (data, source_level) = self.fetch_from_l2(req, line);
        if source_level == 3 {
            latency += lat.memory;
            self.stats.l1_miss_memory += 1;
        } else {
            self.stats.l1_miss_l2_hit += 1;
        }
        self.mshr.complete(line, req.domain);

        let fill = self.l1.fill(req, data.clone(), &mut self.rng);
        if fill.kind == OutcomeKind::MissForwardNoFill {
            self.stats.tagmiss_forward_nofill += 1;
        }
        if let Some(victim) = fill.evicted {
            self.l1_victim(victim);
        }
        MemoryResponse {
            data,
            latency,
            source_level,
            kind: fill.kind,
            path: Some(fill.path),
        }
    }

    fn clear_l2_spec(&mut self, line: Address) {
        if let Some(s) = self.l2.find_addr(line) {
            self.l2.line_mut(s).spec = false;
        }
    }

    fn fetch_from_l2(&mut self, req: &MemoryRequest, line: Address) -> (LineData, u8) {
        if let Some(slot) = self.l2.find_addr(line) {
            self.l2.touch(slot);
            if !req.speculative {
                self.l2.line_mut(slot).spec = false;
            }
            return (self.l2.line(slot).data.clone(), 2);
        }
        let data = self.memory.read_line(line);
        let (_, evicted) = self
            .l2
            .install(line, req.domain, req.speculative, req.origin, data.clone());
        if let Some(victim) = evicted {
            self.l2_victim(victim);
        }
        (data, 3)
    }

    /// Dirty L1 copies (any domain) are written to L2 before another copy is
    /// fetched, so a second domain never reads stale data.
    fn write_back_l1_copies(&mut self, line: Address) {
        for slot in self.l1.copies_of(line) {
            if self.l1.line(slot).dirty {
                let data = self.l1.line(slot).data.clone();
                self.l1.line_mut(slot).dirty = false;
                self.write_to_l2(line, data);
            }
        }
    }

    fn write_to_l2(&mut self, line: Address, data: LineData) {
        self.stats.writebacks += 1;
        self.stats.writeback_cycles += u64::from(self.config.latencies.l2);
        match self.l2.find_addr(line) {
            Some(s) => {
                let l = self.l2.line_mut(s);
                l.data = data;
                l.dirty = true;
            }
            None => self.memory.write_line(line, &data),
        }
    }

    fn l1_victim(&mut self, victim: CacheLine) {
        if victim.dirty {
            self.write_to_l2(victim.addr, victim.data);
        }
    }

    /// Removes an L2 line, back-invalidating every L1 copy. The newest data
    /// (a dirty L1 copy if one exists) goes to memory.
    fn l2_victim(&mut self, victim: CacheLine) {
        let mut newest = victim.dirty.then_some(victim.data);
        for slot in self.l1.copies_of(victim.addr) {
            let old = self.l1.invalidate(slot);
            self.stats.back_invalidations += 1;
            if old.dirty {
                newest = Some(old.data);
            }
        }
        if let Some(data) = newest {
            self.stats.writebacks += 1;
            self.stats.writeback_cycles += u64::from(self.config.latencies.memory);
            self.memory.write_line(victim.addr, &data);
        }
    }

    /// Write-allocate store of one byte. Other domains' L1 copies of the line
    /// are invalidated.
    ///
    /// # Panics
    /// If the request is speculative or not a store.
    pub fn store(&mut self, req: &MemoryRequest, value: u8) -> MemoryResponse {
        assert_eq!(req.op, Op::Store);
        assert!(!req.speculative, "stores issue at commit and are never speculative");
        let line = self.line_of(req.addr);
        let load = MemoryRequest { op: Op::Load, ..*req };
        let mut resp = self.load(&load);
        let slot = self
            .l1
            .find(line, req.domain)
            .expect("a non-speculative access always installs its line");
        for other in self.l1.copies_of(line) {
            if other != slot {
                let old = self.l1.invalidate(other);
                debug_assert!(!old.dirty, "dirty copies were written back by the load");
            }
        }
        let offset = (req.addr.value() - line.value()) as usize;
        let l = self.l1.line_mut(slot);
        l.data[offset] = value;
        l.dirty = true;
        l.spec = false;
        resp.data = l.data.clone();
        self.stats.stores += 1;
        self.after_op();
        resp
    }

    /// Flushes the caller's copy of `addr` at every level, writing back dirty
    /// data. On STAR models only lines owned by `domain` are affected; the
    /// baseline flushes by address like `clflush`.
    pub fn flush(&mut self, addr: Address, domain: DomainId) -> bool {
        self.stats.flushes += 1;
        let line = self.line_of(addr);
        let star = self.config.model.is_star();
        let slots: Vec<usize> = if star {
            self.l1.find(line, domain).into_iter().collect()
        } else {
            self.l1.copies_of(line)
        };
        let mut flushed = false;
        for slot in slots {
            let old = self.l1.invalidate(slot);
            flushed = true;
            if old.dirty {
                self.write_to_l2(line, old.data);
            }
        }
        if let Some(s2) = self.l2.find_addr(line) {
            if !star || self.l2.line(s2).domain == domain {
                let old = self.l2.invalidate(s2);
                flushed = true;
                self.l2_victim(old);
            }
        }
        self.after_op();
        flushed
    }

    /// One-way squash invalidation. The caller does not wait on it and gets
    /// nothing back that would alter its timing.
    pub fn sfill_inv(&mut self, req: &SfillInvRequest) -> SfillInvTrace {
        debug_assert!(req.source_level >= 2, "L1 hits never send SFill-Inv");
        self.stats.sfill_inv_received += 1;
        let l1 = self.l1.handle_sfill_inv(req, 1);
        match l1 {
            SfillInvAction::Dropped => self.stats.sfill_inv_dropped += 1,
            SfillInvAction::Invalidated { .. } => self.stats.sfill_inv_invalidated_l1 += 1,
            SfillInvAction::NotFound { .. } => {}
        }
        let l2 = l1.propagates().then(|| {
            let line = self.line_of(req.addr);
            let action = self.l2.handle_sfill_inv(req, 2);
            match action {
                SfillInvAction::Dropped => self.stats.sfill_inv_dropped += 1,
                SfillInvAction::Invalidated { .. } => {
                    self.stats.sfill_inv_invalidated_l2 += 1;
                    for slot in self.l1.copies_of(line) {
                        let old = self.l1.invalidate(slot);
                        self.stats.back_invalidations += 1;
                        if old.dirty {
                            self.memory.write_line(line, &old.data);
                        }
                    }
                }
                SfillInvAction::NotFound { .. } => {}
            }
            action
        });
        self.after_op();
        SfillInvTrace { l1, l2 }
    }

    /// Clears the speculation bit on `domain`'s copy of `addr` at both levels.
    pub fn clear_spec(&mut self, addr: Address, domain: DomainId) {
        let line = self.line_of(addr);
        if let Some(s) = self.l1.find(line, domain) {
            self.l1.line_mut(s).spec = false;
        }
        self.clear_l2_spec(line);
    }

    /// Writes every dirty line back to memory and empties both caches.
    pub fn drain(&mut self) {
        for slot in 0..self.l1.lines().len() {
            if self.l1.line(slot).valid {
                let old = self.l1.invalidate(slot);
                if old.dirty {
                    self.write_to_l2(old.addr, old.data);
                }
            }
        }
        for slot in 0..self.l2.lines().len() {
            if self.l2.line(slot).valid {
                let old = self.l2.invalidate(slot);
                self.l2_victim(old);
            }
        }
    }

    /// Every valid L1 line must have its address present in L2.
    pub fn check_inclusion(&self) -> Result<(), InclusionViolation> {
        for l in self.l1.lines().iter().filter(|l| l.valid) {
            if self.l2.find_addr(l.addr).is_none() {
                return Err(InclusionViolation {
                    addr: l.addr,
                    domain: l.domain,
                });
            }
        }
        Ok(())
    }

    fn after_op(&self) {
        if self.check_inclusion {
            if let Err(e) = self.check_inclusion() {
                panic!("inclusion violated: {e}");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(v: u64) -> Address {
        Address::from_raw(v)
    }

    fn hier(model: ModelKind) -> Hierarchy {
        let mut h = Hierarchy::new(HierarchyConfig::new(model), 1).unwrap();
        h.set_inclusion_checking(true);
        h
    }

    const D: DomainId = DomainId::new(1);

    #[test]
    fn cold_load_comes_from_memory() {
        for model in [
            ModelKind::SaLru,
            ModelKind::StarFarr,
            ModelKind::StarNews { extra_index_bits: 4 },
        ] {
            let mut h = hier(model);
            let r = h.access(&MemoryRequest::load(a(0x1000), D));
            assert_eq!(r.source_level, 3);
            assert_eq!(r.latency, 1 + 8 + 100);
            let r = h.access(&MemoryRequest::load(a(0x1000), D));
            assert_eq!((r.source_level, r.latency), (1, 1));
        }
    }

    #[test]
    fn l1_conflict_eviction_then_l2_hit() {
        let mut h = hier(ModelKind::SaLru);
        // Three lines in the same 2-way set.
        for i in 0..3 {
            h.access(&MemoryRequest::load(a(i * 0x4000), D));
        }
        let r = h.access(&MemoryRequest::load(a(0), D));
        assert_eq!(r.source_level, 2);
        assert_eq!(r.latency, 9);
    }

    #[test]
    fn forward_no_fill_leaves_line_in_l2_only() {
        let mut h = hier(ModelKind::StarNews { extra_index_bits: 0 });
        h.access(&MemoryRequest::load(a(0x40), D));
        let target = a(0x40 + 0x8000);
        let r = h.access(&MemoryRequest::spec_load(target, D));
        assert_eq!(r.kind, OutcomeKind::MissForwardNoFill);
        assert!(h.l1().find(target, D).is_none());
        let s2 = h.l2().find_addr(target).unwrap();
        assert!(h.l2().line(s2).spec);
        assert_eq!(h.stats().tagmiss_forward_nofill, 1);
    }

    #[test]
    fn store_then_load_returns_data() {
        let mut h = hier(ModelKind::StarFarr);
        h.store(&MemoryRequest::store(a(0x1003), D), 0xab);
        let r = h.access(&MemoryRequest::load(a(0x1003), D));
        assert_eq!(r.source_level, 1);
        assert_eq!(r.byte(a(0x1003)), 0xab);
    }

    #[test]
    fn other_domain_sees_stored_data() {
        let mut h = hier(ModelKind::StarFarr);
        h.store(&MemoryRequest::store(a(0x1003), D), 0x5a);
        let r = h.access(&MemoryRequest::load(a(0x1003), DomainId::new(2)));
        assert_eq!(r.source_level, 2);
        assert_eq!(r.byte(a(0x1003)), 0x5a);
    }

    #[test]
    fn flush_absent_and_present() {
        let mut h = hier(ModelKind::SaLru);
        assert!(!h.flush(a(0x80), D));
        h.access(&MemoryRequest::load(a(0x80), D));
        assert!(h.flush(a(0x80), D));
        assert_eq!(h.access(&MemoryRequest::load(a(0x80), D)).source_level, 3);
    }

    #[test]
    fn flush_writes_back_dirty_line() {
        let mut h = hier(ModelKind::StarNews { extra_index_bits: 2 });
        h.store(&MemoryRequest::store(a(0x2001), D), 7);
        assert_eq!(h.memory().read_byte(a(0x2001)), 0);
        h.flush(a(0x2001), D);
        assert_eq!(h.memory().read_byte(a(0x2001)), 7);
    }

    #[test]
    fn star_flush_is_domain_scoped() {
        let mut h = hier(ModelKind::StarFarr);
        let other = DomainId::new(2);
        h.access(&MemoryRequest::load(a(0x40), D));
        assert!(!h.flush(a(0x40), other), "other domain owns no copy at either level");
        assert_eq!(h.access(&MemoryRequest::load(a(0x40), D)).source_level, 1);
    }

    #[test]
    fn sfill_inv_removes_speculative_fill_from_both_levels() {
        let mut h = hier(ModelKind::StarFarr);
        let r = h.access(&MemoryRequest::spec_load(a(0x40), D));
        let t = h.sfill_inv(&SfillInvRequest {
            addr: a(0x40),
            domain: D,
            source_level: r.source_level,
        });
        assert_eq!(t.l1, SfillInvAction::Invalidated { propagate: true });
        assert_eq!(t.l2, Some(SfillInvAction::Invalidated { propagate: true }));
        assert!(h.l1().find(a(0x40), D).is_none());
        assert!(h.l2().find_addr(a(0x40)).is_none());
    }

    #[test]
    fn sfill_inv_dropped_after_non_speculative_touch() {
        let mut h = hier(ModelKind::StarFarr);
        h.access(&MemoryRequest::spec_load(a(0x40), D));
        h.access(&MemoryRequest::load(a(0x40), D));
        let t = h.sfill_inv(&SfillInvRequest {
            addr: a(0x40),
            domain: D,
            source_level: 3,
        });
        assert_eq!(t.l1, SfillInvAction::Dropped);
        assert_eq!(t.l2, None);
        assert!(h.l1().find(a(0x40), D).is_some());
    }

    #[test]
    fn store_clears_spec_bit() {
        let mut h = hier(ModelKind::StarNews { extra_index_bits: 4 });
        h.access(&MemoryRequest::spec_load(a(0x40), D));
        h.store(&MemoryRequest::store(a(0x41), D), 1);
        let t = h.sfill_inv(&SfillInvRequest {
            addr: a(0x40),
            domain: D,
            source_level: 3,
        });
        assert_eq!(t.l1, SfillInvAction::Dropped);
    }

    #[test]
    fn drain_matches_reference_memory() {
        let mut h = hier(ModelKind::SaLru);
        let mut reference = FlatMemory::new(64);
        let mut rng = SimRng::new(9);
        for i in 0..20_000u32 {
            let addr = a(rng.choose(4096) as u64 * 64 + rng.choose(64) as u64);
            if rng.chance(0.4) {
                let v = (i % 251) as u8;
                h.store(&MemoryRequest::store(addr, D), v);
                reference.write_byte(addr, v);
            } else {
                h.access(&MemoryRequest::load(addr, D));
            }
        }
        assert!(h.stats().writebacks > 0);
        h.drain();
        assert!(h.memory() == &reference);
    }

    #[test]
    fn zero_latency_rejected() {
        let mut c = HierarchyConfig::new(ModelKind::SaLru);
        c.latencies.l2 = 0;
        assert_eq!(Hierarchy::new(c, 0).unwrap_err(), ConfigError::ZeroLatency("l2"));
    }
}
