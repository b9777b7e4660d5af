use super::{CacheLine, CacheModel, FillResult, MemoryRequest, MissPath, ModelKind, OutcomeKind};
use crate::addr::{Address, AddressLayout, CacheGeometry, DomainId};
use crate::memory::LineData;
use crate::rng::SimRng;

/// Set-associative cache with true LRU replacement.
///
/// Lookups match on address only. The same structure backs the L2.
#[derive(Debug, Clone)]
pub struct SetAssocLru {
    geometry: CacheGeometry,
    layout: AddressLayout,
    lines: Vec<CacheLine>,
    clock: u64,
}

impl SetAssocLru {
    pub fn new(geometry: CacheGeometry) -> Self {
        Self {
            geometry,
            layout: AddressLayout::set_associative(&geometry),
            lines: vec![CacheLine::empty(geometry.line_size); geometry.total_lines],
            clock: 0,
        }
    }

    pub fn set_of(&self, addr: Address) -> usize {
        self.layout.decompose(addr).index as usize
    }

    fn set_slots(&self, set: usize) -> std::ops::Range<usize> {
        let ways = self.geometry.associativity;
        set * ways..(set + 1) * ways
    }

    pub fn find_addr(&self, addr: Address) -> Option<usize> {
        let parts = self.layout.decompose(addr);
        self.set_slots(parts.index as usize)
            .find(|&s| self.lines[s].valid && self.lines[s].tag == parts.tag)
    }

    /// Installs `addr`, evicting the LRU way of its set if the set is full.
    pub fn install(
        &mut self,
        addr: Address,
        domain: DomainId,
        spec: bool,
        origin: u64,
        data: LineData,
    ) -> (usize, Option<CacheLine>) {
        let addr = addr.line(self.geometry.line_size);
        let parts = self.layout.decompose(addr);
        let slots = self.set_slots(parts.index as usize);
        let slot = slots
            .clone()
            .find(|&s| !self.lines[s].valid)
            .unwrap_or_else(|| slots.min_by_key(|&s| self.lines[s].lru).unwrap());
        let evicted = self.lines[slot].valid.then(|| self.invalidate(slot));
        self.clock += 1;
        self.lines[slot] = CacheLine {
            valid: true,
            dirty: false,
            spec,
            domain,
            addr,
            tag: parts.tag,
            index: parts.index,
            origin,
            data,
            lru: self.clock,
        };
        (slot, evicted)
    }
}

impl CacheModel for SetAssocLru {
    fn kind(&self) -> ModelKind {
        ModelKind::SaLru
    }

    fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    fn find(&self, addr: Address, _domain: DomainId) -> Option<usize> {
        self.find_addr(addr)
    }

    fn copies_of(&self, addr: Address) -> Vec<usize> {
        self.find_addr(addr).into_iter().collect()
    }

    fn lines(&self) -> &[CacheLine] {
        &self.lines
    }

    fn line_mut(&mut self, slot: usize) -> &mut CacheLine {
        &mut self.lines[slot]
    }

    fn touch(&mut self, slot: usize) {
        self.clock += 1;
        self.lines[slot].lru = self.clock;
    }

    fn fill(&mut self, req: &MemoryRequest, data: LineData, _rng: &mut SimRng) -> FillResult {
        let (slot, evicted) = self.install(req.addr, req.domain, req.speculative, req.origin, data);
        FillResult {
            kind: OutcomeKind::MissFilled,
            path: MissPath::Conventional,
            evicted,
            slot: Some(slot),
        }
    }

    fn invalidate(&mut self, slot: usize) -> CacheLine {
        let empty = CacheLine::empty(self.geometry.line_size);
        std::mem::replace(&mut self.lines[slot], empty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OutcomeKind::*;

    fn d() -> DomainId {
        DomainId::new(1)
    }

    /// 4 sets x 4 ways of 64-byte lines. Lines `0x100` apart share set 0.
    fn small() -> SetAssocLru {
        SetAssocLru::new(CacheGeometry::new(64, 16, 4).unwrap())
    }

    fn load(cache: &mut SetAssocLru, rng: &mut SimRng, a: u64) -> OutcomeKind {
        cache.access(&MemoryRequest::load(Address::from_raw(a), d()), rng).kind
    }

    #[test]
    fn cold_miss_then_hit() {
        let mut c = small();
        let mut rng = SimRng::new(0);
        assert_eq!(load(&mut c, &mut rng, 0x1000), MissFilled);
        assert_eq!(load(&mut c, &mut rng, 0x1000), Hit);
        assert_eq!(load(&mut c, &mut rng, 0x1008), Hit);
    }

    #[test]
    fn lru_victim_in_four_way_set() {
        let mut c = small();
        let mut rng = SimRng::new(0);
        let [a, b, cc, dd, e] = [0x000, 0x100, 0x200, 0x300, 0x400];
        for x in [a, b, cc, dd] {
            assert_eq!(load(&mut c, &mut rng, x), MissFilled);
        }
        assert_eq!(load(&mut c, &mut rng, e), MissFilled);
        assert_eq!(
            load(&mut c, &mut rng, a),
            MissFilled,
            "A was LRU and must have been evicted"
        );
        // B became LRU after A's eviction and was displaced by A's refill.
        assert_eq!(load(&mut c, &mut rng, b), MissFilled);
        assert_eq!(load(&mut c, &mut rng, e), Hit);
    }

    #[test]
    fn recency_protects_line() {
        let mut c = small();
        let mut rng = SimRng::new(0);
        for x in [0x000, 0x100, 0x200, 0x300] {
            load(&mut c, &mut rng, x);
        }
        assert_eq!(load(&mut c, &mut rng, 0x000), Hit);
        load(&mut c, &mut rng, 0x400);
        assert_eq!(load(&mut c, &mut rng, 0x000), Hit);
        assert_eq!(load(&mut c, &mut rng, 0x100), MissFilled);
    }

    #[test]
    fn no_domain_filtering() {
        let mut c = small();
        let mut rng = SimRng::new(0);
        let a = Address::from_raw(0x40);
        c.access(&MemoryRequest::load(a, DomainId::new(1)), &mut rng);
        let out = c.access(&MemoryRequest::load(a, DomainId::new(2)), &mut rng);
        assert_eq!(out.kind, Hit);
    }

    #[test]
    fn evicted_address_reported() {
        let mut c = small();
        let mut rng = SimRng::new(0);
        for x in [0x000, 0x100, 0x200, 0x300] {
            load(&mut c, &mut rng, x);
        }
        let out = c.access(&MemoryRequest::load(Address::from_raw(0x400), d()), &mut rng);
        assert_eq!(out.victim_evicted, Some(Address::from_raw(0x000)));
    }
}
