use std::collections::HashMap;

use super::line_store::LineStore;
use super::{CacheLine, CacheModel, FillResult, MemoryRequest, MissPath, ModelKind, Mutation, OutcomeKind};
use crate::addr::{Address, AddressLayout, CacheGeometry, DomainId, GeometryError};
use crate::memory::LineData;
use crate::rng::SimRng;

/// Remapping cache in the style of NewCache, made speculation-aware.
///
/// Each line carries a mapping entry `(domain, index)` where the index is
/// `log2(lines) + k` address bits, so the cache behaves like a `2^k` times
/// larger logical direct-mapped cache remapped onto the physical lines. At
/// most one valid line exists per mapping entry.
///
/// Miss handling:
/// * mapping miss: a random line is replaced by the request;
/// * mapping hit, Tag' miss, non-speculative: the conflicting line is
///   replaced in place;
/// * mapping hit, Tag' miss, speculative: the data is forwarded without a
///   fill and a random line is evicted instead.
#[derive(Debug, Clone)]
pub struct NewsCache {
    geometry: CacheGeometry,
    layout: AddressLayout,
    extra_index_bits: u32,
    store: LineStore,
    mapping: HashMap<(DomainId, u64), usize>,
    fill_on_spec_tag_miss: bool,
}

impl NewsCache {
    pub fn new(
        geometry: CacheGeometry,
        extra_index_bits: u32,
        mutation: Option<Mutation>,
    ) -> Result<Self, GeometryError> {
        Ok(Self {
            geometry,
            layout: AddressLayout::news(&geometry, extra_index_bits)?,
            extra_index_bits,
            store: LineStore::new(geometry.total_lines, geometry.line_size, false),
            mapping: HashMap::new(),
            fill_on_spec_tag_miss: mutation == Some(Mutation::NewsFillOnSpecTagMiss),
        })
    }

    pub fn layout(&self) -> &AddressLayout {
        &self.layout
    }

    /// Slot whose mapping entry equals `(domain, index of addr)`.
    pub fn mapping_hit(&self, addr: Address, domain: DomainId) -> Option<usize> {
        if domain.is_none() {
            return None;
        }
        let index = self.layout.decompose(addr).index;
        self.mapping.get(&(domain, index)).copied()
    }

    fn install(&mut self, slot: usize, req: &MemoryRequest, addr: Address, data: LineData) {
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
                index: parts.index,
                origin: req.origin,
                data,
                lru: 0,
            },
        );
        self.mapping.insert((req.domain, parts.index), slot);
    }
}

impl CacheModel for NewsCache {
    fn kind(&self) -> ModelKind {
        ModelKind::StarNews {
            extra_index_bits: self.extra_index_bits,
        }
    }

    fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    fn find(&self, addr: Address, domain: DomainId) -> Option<usize> {
        let slot = self.mapping_hit(addr, domain)?;
        let tag = self.layout.decompose(addr).tag;
        (self.store.lines[slot].tag == tag).then_some(slot)
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
        match self.mapping_hit(addr, req.domain) {
            Some(conflict) => {
                debug_assert_ne!(self.store.lines[conflict].addr, addr, "fill on a hit");
                if req.speculative && !self.fill_on_spec_tag_miss {
                    let evicted = self.store.evict_like_fill(rng);
                    if let Some(old) = &evicted {
                        self.mapping.remove(&(old.domain, old.index));
                    }
                    return FillResult {
                        kind: OutcomeKind::MissForwardNoFill,
                        path: MissPath::TagMiss,
                        evicted,
                        slot: None,
                    };
                }
                let old = self.invalidate(conflict);
                self.install(conflict, req, addr, data);
                FillResult {
                    kind: OutcomeKind::MissFilled,
                    path: MissPath::TagMiss,
                    evicted: Some(old),
                    slot: Some(conflict),
                }
            }
            None => {
                let (slot, evicted) = self.store.make_room(rng);
                if let Some(old) = &evicted {
                    self.mapping.remove(&(old.domain, old.index));
                }
                self.install(slot, req, addr, data);
                FillResult {
                    kind: OutcomeKind::MissFilled,
                    path: MissPath::MappingMiss,
                    evicted,
                    slot: Some(slot),
                }
            }
        }
    }

    fn invalidate(&mut self, slot: usize) -> CacheLine {
        let old = self.store.take(slot);
        self.mapping.remove(&(old.domain, old.index));
        old
    }
}
