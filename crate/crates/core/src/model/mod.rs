//! L1 cache designs behind one interface.
//!
//! * [`SetAssocLru`]: conventional set-associative cache with LRU replacement.
//!   No domain filtering; the speculation bit is carried but never acted on.
//! * [`FarrCache`]: fully associative, uniformly random replacement, hits
//!   require a domain match.
//! * [`NewsCache`]: dynamic remapping through `(domain, index)` mapping
//!   entries with `k` extra index bits, speculation-aware miss handling.
//!
//! A model only decides placement and hit/miss. Fetching data from the next
//! level, write-backs and timing are done by [`crate::hierarchy::Hierarchy`],
//! which drives a model through [`CacheModel::lookup`] and
//! [`CacheModel::fill`].

mod farr;
mod line_store;
mod news;
mod set_assoc;

use std::fmt;
use std::str::FromStr;

pub use farr::FarrCache;
pub use news::NewsCache;
pub use set_assoc::SetAssocLru;

use crate::addr::{Address, CacheGeometry, DomainId, GeometryError};
use crate::memory::LineData;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    SaLru,
    StarFarr,
    StarNews { extra_index_bits: u32 },
}

impl ModelKind {
    /// STAR models tag lines with domains and invalidate squashed fills.
    pub fn is_star(self) -> bool {
        !matches!(self, ModelKind::SaLru)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SaLru => "sa-lru",
            ModelKind::StarFarr => "star-farr",
            ModelKind::StarNews { .. } => "star-news",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::StarNews { extra_index_bits } => write!(f, "star-news-k{extra_index_bits}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    /// Accepts `sa-lru`, `star-farr`, `star-news` (k = 0) and `star-news-k<N>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sa-lru" => Ok(ModelKind::SaLru),
            "star-farr" => Ok(ModelKind::StarFarr),
            "star-news" => Ok(ModelKind::StarNews { extra_index_bits: 0 }),
            other => {
                if let Some(k) = other.strip_prefix("star-news-k") {
                    let k = k.parse().map_err(|_| format!("bad k in model name {other:?}"))?;
                    Ok(ModelKind::StarNews { extra_index_bits: k })
                } else {
                    Err(format!(
                        "unknown model {other:?} (expected sa-lru, star-farr or star-news)"
                    ))
                }
            }
        }
    }
}

/// Deliberate defects used by the self-test to prove its checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// FARR always evicts slot 0.
    FarrDeterministicVictim,
    /// NEWS fills on a speculative mapping-hit/tag-miss like a non-speculative load.
    NewsFillOnSpecTagMiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Load,
    Store,
    Flush,
}

/// A typed access to the cache hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryRequest {
    pub op: Op,
    pub addr: Address,
    pub domain: DomainId,
    pub speculative: bool,
    /// Identifier of the instruction that issued the request. Lines remember
    /// the origin of the request that installed them.
    pub origin: u64,
}

impl MemoryRequest {
    pub fn load(addr: Address, domain: DomainId) -> Self {
        Self {
            op: Op::Load,
            addr,
            domain,
            speculative: false,
            origin: 0,
        }
    }

    pub fn spec_load(addr: Address, domain: DomainId) -> Self {
        Self {
            speculative: true,
            ..Self::load(addr, domain)
        }
    }

    /// Stores never carry the speculation bit.
    pub fn store(addr: Address, domain: DomainId) -> Self {
        Self {
            op: Op::Store,
            ..Self::load(addr, domain)
        }
    }

    pub fn flush(addr: Address, domain: DomainId) -> Self {
        Self {
            op: Op::Flush,
            ..Self::load(addr, domain)
        }
    }

    pub fn with_origin(mut self, origin: u64) -> Self {
        self.origin = origin;
        self
    }
}

/// State of one line at one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheLine {
    pub valid: bool,
    pub dirty: bool,
    pub spec: bool,
    pub domain: DomainId,
    /// Line-aligned address held by this line.
    pub addr: Address,
    /// Model-specific tag bits (Tag' for NEWS).
    pub tag: u64,
    /// Set number (SA), mapping index (NEWS), unused for FARR.
    pub index: u64,
    pub origin: u64,
    pub data: LineData,
    pub(crate) lru: u64,
}

impl CacheLine {
    pub(crate) fn empty(line_size: usize) -> Self {
        Self {
            valid: false,
            dirty: false,
            spec: false,
            domain: DomainId::NONE,
            addr: Address::ZERO,
            tag: 0,
            index: 0,
            origin: 0,
            data: vec![0u8; line_size].into_boxed_slice(),
            lru: 0,
        }
    }
}

/// Which miss path a fill took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissPath {
    /// Plain miss in a set-associative or fully associative cache.
    Conventional,
    /// NEWS: no line with the request's `(domain, index)`.
    MappingMiss,
    /// NEWS: mapping hit on a line with a different Tag'.
    TagMiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Hit,
    MissFilled,
    MissForwardNoFill,
}

#[derive(Debug, Clone)]
pub struct FillResult {
    pub kind: OutcomeKind,
    pub path: MissPath,
    /// Line removed to make room (or, for forward-no-fill, the random eviction).
    pub evicted: Option<CacheLine>,
    pub slot: Option<usize>,
}

/// Outcome of a standalone model access (no lower levels attached).
#[derive(Debug, Clone)]
pub struct AccessOutcome {
    pub kind: OutcomeKind,
    pub path: Option<MissPath>,
    pub victim_evicted: Option<Address>,
}

/// One-way squash invalidation produced by the speculation engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SfillInvRequest {
    pub addr: Address,
    pub domain: DomainId,
    /// Level that served the squashed load: 2 or 3.
    pub source_level: u8,
}

/// How one cache level disposed of an SFill-Inv request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfillInvAction {
    /// Found with the speculation bit clear: the line is safe, request dropped.
    Dropped,
    /// Found speculative and invalidated.
    Invalidated { propagate: bool },
    /// Not present at this level.
    NotFound { propagate: bool },
}

impl SfillInvAction {
    pub fn propagates(self) -> bool {
        match self {
            SfillInvAction::Dropped => false,
            SfillInvAction::Invalidated { propagate } | SfillInvAction::NotFound { propagate } => propagate,
        }
    }
}

/// Common surface of the three L1 designs.
pub trait CacheModel: Send {
    fn kind(&self) -> ModelKind;
    fn geometry(&self) -> &CacheGeometry;

    /// Slot of the line that would satisfy a hit for `(addr, domain)`.
    fn find(&self, addr: Address, domain: DomainId) -> Option<usize>;

    /// Every valid slot holding `addr`, whatever its domain.
    fn copies_of(&self, addr: Address) -> Vec<usize>;

    fn lines(&self) -> &[CacheLine];
    fn line_mut(&mut self, slot: usize) -> &mut CacheLine;

    /// Replacement-state update on a hit.
    fn touch(&mut self, slot: usize);

    /// Completes a miss for `req` with `data` from the next level.
    fn fill(&mut self, req: &MemoryRequest, data: LineData, rng: &mut SimRng) -> FillResult;

    /// Removes the line in `slot` and returns its previous state.
    fn invalidate(&mut self, slot: usize) -> CacheLine;

    fn line(&self, slot: usize) -> &CacheLine {
        &self.lines()[slot]
    }

    /// Hit check with side effects: replacement update and, for a
    /// non-speculative request, clearing the line's speculation bit.
    fn lookup(&mut self, req: &MemoryRequest) -> Option<usize> {
        let slot = self.find(req.addr, req.domain)?;
        self.touch(slot);
        if !req.speculative {
            self.line_mut(slot).spec = false;
        }
        Some(slot)
    }

    /// Standalone access with a zero-filled next level.
    fn access(&mut self, req: &MemoryRequest, rng: &mut SimRng) -> AccessOutcome {
        if self.lookup(req).is_some() {
            return AccessOutcome {
                kind: OutcomeKind::Hit,
                path: None,
                victim_evicted: None,
            };
        }
        let data = vec![0u8; self.geometry().line_size].into_boxed_slice();
        let fill = self.fill(req, data, rng);
        AccessOutcome {
            kind: fill.kind,
            path: Some(fill.path),
            victim_evicted: fill.evicted.map(|l| l.addr),
        }
    }

    /// SFill-Inv handling at cache level `level`.
    ///
    /// Invalidated lines are discarded without write-back: a speculative line
    /// is never dirty.
    fn handle_sfill_inv(&mut self, req: &SfillInvRequest, level: u8) -> SfillInvAction {
        let propagate = req.source_level > level;
        match self.find(req.addr, req.domain) {
            Some(slot) if !self.line(slot).spec => SfillInvAction::Dropped,
            Some(slot) => {
                let old = self.invalidate(slot);
                debug_assert!(!old.dirty, "speculative line was dirty");
                SfillInvAction::Invalidated { propagate }
            }
            None => SfillInvAction::NotFound { propagate },
        }
    }

    /// Removes the caller's copy of `addr` and returns it for write-back.
    fn flush(&mut self, addr: Address, domain: DomainId) -> Option<CacheLine> {
        let slot = self.find(addr, domain)?;
        Some(self.invalidate(slot))
    }

    fn valid_lines(&self) -> usize {
        self.lines().iter().filter(|l| l.valid).count()
    }
}

/// Builds the L1 model for `kind`.
pub fn build_model(
    kind: ModelKind,
    geometry: CacheGeometry,
    mutation: Option<Mutation>,
) -> Result<Box<dyn CacheModel>, GeometryError> {
    Ok(match kind {
        ModelKind::SaLru => Box::new(SetAssocLru::new(geometry)),
        ModelKind::StarFarr => Box::new(FarrCache::new(geometry, mutation)),
        ModelKind::StarNews { extra_index_bits } => Box::new(NewsCache::new(geometry, extra_index_bits, mutation)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_parse() {
        assert_eq!("sa-lru".parse::<ModelKind>().unwrap(), ModelKind::SaLru);
        assert_eq!("star-farr".parse::<ModelKind>().unwrap(), ModelKind::StarFarr);
        assert_eq!(
            "star-news-k6".parse::<ModelKind>().unwrap(),
            ModelKind::StarNews { extra_index_bits: 6 }
        );
        assert!("lru".parse::<ModelKind>().is_err());
    }

    #[test]
    fn requests_carry_expected_spec_bits() {
        let a = Address::from_raw(0x40);
        let d = DomainId::new(1);
        assert!(!MemoryRequest::store(a, d).speculative);
        assert!(!MemoryRequest::flush(a, d).speculative);
        assert!(MemoryRequest::spec_load(a, d).speculative);
    }
}
