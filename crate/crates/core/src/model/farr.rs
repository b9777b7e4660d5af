use std::collections::HashMap;

use super::line_store::LineStore;
use super::{CacheLine, CacheModel, FillResult, MemoryRequest, MissPath, ModelKind, Mutation, OutcomeKind};
use crate::addr::{Address, AddressLayout, CacheGeometry, DomainId};
use crate::memory::LineData;
use crate::rng::SimRng;

/// Fully associative cache with uniformly random replacement and
/// domain-tagged lines.
///
/// A hit needs both the tag and the domain to match. Any line, speculative
/// or not, may be chosen as the victim of a miss.
#[derive(Debug, Clone)]
pub struct FarrCache {
    geometry: CacheGeometry,
    layout: AddressLayout,
    store: LineStore,
    by_key: HashMap<(DomainId, Address), usize>,
}

impl FarrCache {
    pub fn new(geometry: CacheGeometry, mutation: Option<Mutation>) -> Self {
        let deterministic = mutation == Some(Mutation::FarrDeterministicVictim);
        Self {
            geometry,
            layout: AddressLayout::fully_associative(&geometry),
            store: LineStore::new(geometry.total_lines, geometry.line_size, deterministic),
            by_key: HashMap::new(),
        }
    }
}

impl CacheModel for FarrCache {
    fn kind(&self) -> ModelKind {
        ModelKind::StarFarr
    }

    fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    fn find(&self, addr: Address, domain: DomainId) -> Option<usize> {
        if domain.is_none() {
            return None;
        }
        self.by_key.get(&(domain, addr.line(self.geometry.line_size))).copied()
    }

    fn copies_of(&self, addr: Address) -> Vec<usize> {
        self.store.copies_of(addr.line(self.geometry.line_size))
    }

    fn lines(&self) -> &[CacheLine] {
        &self.store.lines
    }

    fn line_mut(&mut self, slot: usize) -> &mut CacheLine {
        &mut self.store.lines[slot]
    }

    fn touch(&mut self, _slot: usize) {}

    fn fill(&mut self, req: &MemoryRequest, data: LineData, rng: &mut SimRng) -> FillResult {
        let addr = req.addr.line(self.geometry.line_size);
        let (slot, evicted) = self.store.make_room(rng);
        if let Some(old) = &evicted {
            self.by_key.remove(&(old.domain, old.addr));
        }
        let parts = self.layout.decompose(addr);
        self.store.place(
            slot,
            CacheLine {
                valid: true,
                dirty: false,
                spec: req.speculative,
                domain: req.domain,
                addr,
                tag: parts.tag,
                index: 0,
                origin: req.origin,
                data,
                lru: 0,
            },
        );
        self.by_key.insert((req.domain, addr), slot);
        FillResult {
            kind: OutcomeKind::MissFilled,
            path: MissPath::Conventional,
            evicted,
            slot: Some(slot),
        }
    }

    fn invalidate(&mut self, slot: usize) -> CacheLine {
        let old = self.store.take(slot);
        self.by_key.remove(&(old.domain, old.addr));
        old
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OutcomeKind::*;
    use crate::stats::{chi_square_uniform, fold_bins};

    fn a(v: u64) -> Address {
        Address::from_raw(v)
    }

    #[test]
    fn cross_domain_access_misses() {
        let mut c = FarrCache::new(CacheGeometry::default_l1(), None);
        let mut rng = SimRng::new(1);
        c.access(&MemoryRequest::load(a(0x1000), DomainId::new(1)), &mut rng);
        let out = c.access(&MemoryRequest::load(a(0x1000), DomainId::new(2)), &mut rng);
        assert_eq!(out.kind, MissFilled);
        assert_eq!(c.copies_of(a(0x1000)).len(), 2);
        let again = c.access(&MemoryRequest::load(a(0x1000), DomainId::new(1)), &mut rng);
        assert_eq!(again.kind, Hit);
    }

    #[test]
    fn non_speculative_hit_clears_spec_bit() {
        let mut c = FarrCache::new(CacheGeometry::default_l1(), None);
        let mut rng = SimRng::new(1);
        let d = DomainId::new(1);
        c.access(&MemoryRequest::spec_load(a(0x40), d), &mut rng);
        let slot = c.find(a(0x40), d).unwrap();
        assert!(c.line(slot).spec);
        c.access(&MemoryRequest::spec_load(a(0x40), d), &mut rng);
        assert!(c.line(slot).spec, "a speculative hit leaves the bit set");
        c.access(&MemoryRequest::load(a(0x40), d), &mut rng);
        assert!(!c.line(slot).spec);
    }

    #[test]
    fn invalid_slots_fill_before_eviction() {
        let g = CacheGeometry::new(64, 8, 1).unwrap();
        let mut c = FarrCache::new(g, None);
        let mut rng = SimRng::new(3);
        let d = DomainId::new(0);
        for i in 0..8 {
            let out = c.access(&MemoryRequest::load(a(i * 64), d), &mut rng);
            assert!(out.victim_evicted.is_none());
        }
        let out = c.access(&MemoryRequest::load(a(8 * 64), d), &mut rng);
        assert!(out.victim_evicted.is_some());
        assert_eq!(c.valid_lines(), 8);
    }

    #[test]
    fn victims_are_uniform_over_full_cache() {
        let mut c = FarrCache::new(CacheGeometry::default_l1(), None);
        let mut rng = SimRng::new(11);
        let d = DomainId::new(0);
        for i in 0..512 {
            c.access(&MemoryRequest::load(a(i * 64), d), &mut rng);
        }
        let mut counts = vec![0u64; 512];
        for i in 0..100_000u64 {
            let out = c.fill(
                &MemoryRequest::load(a((1000 + i) * 64), d),
                vec![0; 64].into(),
                &mut rng,
            );
            counts[out.slot.unwrap()] += 1;
        }
        let r = chi_square_uniform(&fold_bins(&counts, 16));
        assert!(r.p_value > 0.001, "{r:?}");
    }

    #[test]
    fn deterministic_mutation_breaks_uniformity() {
        let mut c = FarrCache::new(CacheGeometry::default_l1(), Some(Mutation::FarrDeterministicVictim));
        let mut rng = SimRng::new(11);
        let d = DomainId::new(0);
        let mut counts = vec![0u64; 512];
        for i in 0..10_000u64 {
            let out = c.fill(&MemoryRequest::load(a(i * 64), d), vec![0; 64].into(), &mut rng);
            counts[out.slot.unwrap()] += 1;
        }
        assert!(chi_square_uniform(&fold_bins(&counts, 16)).p_value < 0.001);
    }
}
