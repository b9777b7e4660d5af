//! In-order window of in-flight memory instructions.
//!
//! Loads execute as soon as they are issued (or later, via
//! [`SpecEngine::execute`], for loads dispatched without executing). A load
//! is speculative when any older entry is still unresolved: an unexecuted
//! load or an unresolved barrier (a branch whose outcome is pending). Stores
//! wait in the window and are performed non-speculatively at commit.

use std::collections::VecDeque;

use thiserror::Error;

use crate::addr::{Address, DomainId};
use crate::hierarchy::{Hierarchy, MemoryResponse};
use crate::model::{MemoryRequest, SfillInvRequest};

pub type EntryId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Load,
    Store { value: u8 },
    Barrier,
}

#[derive(Debug, Clone)]
pub struct WindowEntry {
    pub id: EntryId,
    pub kind: EntryKind,
    pub addr: Address,
    pub domain: DomainId,
    pub executed: bool,
    /// Barriers only: the branch outcome is known.
    pub resolved: bool,
    /// Speculation bit the load carried when it executed.
    pub spec: bool,
    pub source_level: Option<u8>,
}

impl WindowEntry {
    fn is_resolved(&self) -> bool {
        match self.kind {
            EntryKind::Load => self.executed,
            EntryKind::Store { .. } => true,
            EntryKind::Barrier => self.resolved,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("speculation window is full ({0} entries)")]
    WindowFull(usize),
    #[error("no in-flight entry with id {0}")]
    UnknownId(EntryId),
    #[error("entry {0} has not executed and cannot commit")]
    Unexecuted(EntryId),
    #[error("entry {0} is not an unexecuted load")]
    NotExecutable(EntryId),
}

/// Per-squash accounting. `loads_squashed` is always the sum of the four
/// outcome counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SquashReport {
    pub loads_squashed: u64,
    pub sfill_inv_sent: u64,
    pub skipped_l1_hit: u64,
    pub skipped_unexecuted: u64,
    /// Squashed loads that would have sent SFill-Inv on a model without it.
    pub suppressed: u64,
}

impl SquashReport {
    fn add(&mut self, other: &SquashReport) {
        self.loads_squashed += other.loads_squashed;
        self.sfill_inv_sent += other.sfill_inv_sent;
        self.skipped_l1_hit += other.skipped_l1_hit;
        self.skipped_unexecuted += other.skipped_unexecuted;
        self.suppressed += other.suppressed;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub loads: u64,
    pub speculative_loads: u64,
    pub committed_loads: u64,
    pub stores_committed: u64,
    pub squashes: u64,
    pub squashed: SquashReport,
}

#[derive(Debug, Clone)]
pub struct LoadIssue {
    pub id: EntryId,
    pub speculative: bool,
    pub response: MemoryResponse,
}

#[derive(Debug)]
pub struct SpecEngine {
    hierarchy: Hierarchy,
    window: VecDeque<WindowEntry>,
    capacity: usize,
    next_id: EntryId,
    clear_specbit_on_commit: bool,
    stats: EngineStats,
}

impl SpecEngine {
    pub const DEFAULT_CAPACITY: usize = 64;

    pub fn new(hierarchy: Hierarchy) -> Self {
        Self::with_capacity(hierarchy, Self::DEFAULT_CAPACITY)
    }

    pub fn with_capacity(hierarchy: Hierarchy, capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            hierarchy,
            window: VecDeque::with_capacity(capacity),
            capacity,
            // Id 0 is the origin of requests made outside the engine.
            next_id: 1,
            clear_specbit_on_commit: false,
            stats: EngineStats::default(),
        }
    }

    /// When on, a committed load clears the speculation bit of the line it
    /// fetched. Off by default: the bit then stays set until a later
    /// non-speculative hit.
    pub fn set_clear_specbit_on_commit(&mut self, on: bool) {
        self.clear_specbit_on_commit = on;
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn hierarchy_mut(&mut self) -> &mut Hierarchy {
        &mut self.hierarchy
    }

    pub fn into_hierarchy(self) -> Hierarchy {
        self.hierarchy
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn window(&self) -> impl Iterator<Item = &WindowEntry> {
        self.window.iter()
    }

    pub fn in_flight(&self) -> usize {
        self.window.len()
    }

    fn sends_sfill_inv(&self) -> bool {
        self.hierarchy.config().model.is_star()
    }

    fn position(&self, id: EntryId) -> Result<usize, EngineError> {
        self.window
            .binary_search_by_key(&id, |e| e.id)
            .map_err(|_| EngineError::UnknownId(id))
    }

    fn older_unresolved(&self, pos: usize) -> bool {
        self.window.iter().take(pos).any(|e| !e.is_resolved())
    }

    /// Makes room by committing the oldest entries if they are committable.
    fn reserve(&mut self) -> Result<(), EngineError> {
        while self.window.len() >= self.capacity {
            match self.window.front() {
                Some(e) if e.is_resolved() => {
                    let id = e.id;
                    self.resolve_to(id)?;
                }
                _ => return Err(EngineError::WindowFull(self.capacity)),
            }
        }
        Ok(())
    }

    fn push(&mut self, kind: EntryKind, addr: Address, domain: DomainId) -> Result<EntryId, EngineError> {
        self.reserve()?;
        let id = self.next_id;
        self.next_id += 1;
        self.window.push_back(WindowEntry {
            id,
            kind,
            addr,
            domain,
            executed: false,
            resolved: false,
            spec: false,
            source_level: None,
        });
        Ok(id)
    }

    /// Appends a load without executing it.
    pub fn dispatch_load(&mut self, addr: Address, domain: DomainId) -> Result<EntryId, EngineError> {
        self.stats.loads += 1;
        self.push(EntryKind::Load, addr, domain)
    }

    /// Executes a dispatched load against the hierarchy.
    pub fn execute(&mut self, id: EntryId) -> Result<LoadIssue, EngineError> {
        let pos = self.position(id)?;
        let entry = &self.window[pos];
        if entry.kind != EntryKind::Load || entry.executed {
            return Err(EngineError::NotExecutable(id));
        }
        let speculative = self.older_unresolved(pos);
        let mut req = MemoryRequest::load(entry.addr, entry.domain).with_origin(id);
        req.speculative = speculative;
        let response = self.hierarchy.access(&req);
        let entry = &mut self.window[pos];
        entry.executed = true;
        entry.spec = speculative;
        entry.source_level = Some(response.source_level);
        if speculative {
            self.stats.speculative_loads += 1;
        }
        Ok(LoadIssue {
            id,
            speculative,
            response,
        })
    }

    /// Appends and immediately executes a load.
    pub fn issue_load(&mut self, addr: Address, domain: DomainId) -> Result<LoadIssue, EngineError> {
        let id = self.dispatch_load(addr, domain)?;
        self.execute(id)
    }

    /// Appends a store; it reaches the hierarchy when it commits.
    pub fn issue_store(&mut self, addr: Address, domain: DomainId, value: u8) -> Result<EntryId, EngineError> {
        self.push(EntryKind::Store { value }, addr, domain)
    }

    /// Appends an unresolved branch. Younger loads are speculative until it
    /// resolves.
    pub fn issue_barrier(&mut self) -> Result<EntryId, EngineError> {
        self.push(EntryKind::Barrier, Address::ZERO, DomainId::NONE)
    }

    /// Marks a barrier resolved (the branch went the predicted way).
    pub fn resolve_barrier(&mut self, id: EntryId) -> Result<(), EngineError> {
        let pos = self.position(id)?;
        self.window[pos].resolved = true;
        Ok(())
    }

    /// Squashes `id` and every younger entry. Each squashed load that
    /// executed and was not served by L1 sends one SFill-Inv request; the
    /// engine carries on without waiting for it.
    pub fn squash_from(&mut self, id: EntryId) -> Result<SquashReport, EngineError> {
        let pos = self.position(id)?;
        let send = self.sends_sfill_inv();
        let mut report = SquashReport::default();
        let squashed: Vec<WindowEntry> = self.window.drain(pos..).collect();
        for e in squashed.iter().filter(|e| e.kind == EntryKind::Load) {
            report.loads_squashed += 1;
            match e.source_level {
                None => report.skipped_unexecuted += 1,
                Some(1) => report.skipped_l1_hit += 1,
                Some(level) if send => {
                    self.hierarchy.sfill_inv(&SfillInvRequest {
                        addr: e.addr,
                        domain: e.domain,
                        source_level: level,
                    });
                    report.sfill_inv_sent += 1;
                }
                Some(_) => report.suppressed += 1,
            }
        }
        self.stats.squashes += 1;
        self.stats.squashed.add(&report);
        Ok(report)
    }

    /// Commits every entry up to and including `id`, performing stores.
    /// Unresolved barriers in the range resolve as predicted.
    pub fn resolve_to(&mut self, id: EntryId) -> Result<(), EngineError> {
        let pos = self.position(id)?;
        if let Some(e) = self
            .window
            .iter()
            .take(pos + 1)
            .find(|e| e.kind == EntryKind::Load && !e.executed)
        {
            return Err(EngineError::Unexecuted(e.id));
        }
        for e in self.window.drain(..=pos).collect::<Vec<_>>() {
            match e.kind {
                EntryKind::Load => {
                    self.stats.committed_loads += 1;
                    if self.clear_specbit_on_commit && e.spec {
                        self.hierarchy.clear_spec(e.addr, e.domain);
                    }
                }
                EntryKind::Store { value } => {
                    self.hierarchy
                        .store(&MemoryRequest::store(e.addr, e.domain).with_origin(e.id), value);
                    self.stats.stores_committed += 1;
                }
                EntryKind::Barrier => {}
            }
        }
        Ok(())
    }

    /// Commits everything in flight.
    pub fn drain(&mut self) -> Result<(), EngineError> {
        match self.window.back() {
            Some(e) => {
                let id = e.id;
                self.resolve_to(id)
            }
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierarchyConfig;
    use crate::model::ModelKind;

    const D: DomainId = DomainId::new(1);

    fn engine(model: ModelKind) -> SpecEngine {
        SpecEngine::new(Hierarchy::new(HierarchyConfig::new(model), 3).unwrap())
    }

    fn a(v: u64) -> Address {
        Address::from_raw(v)
    }

    #[test]
    fn load_in_empty_window_is_not_speculative() {
        let mut e = engine(ModelKind::StarFarr);
        assert!(!e.issue_load(a(0x40), D).unwrap().speculative);
    }

    #[test]
    fn loads_behind_unresolved_barrier_are_speculative() {
        let mut e = engine(ModelKind::StarFarr);
        e.issue_barrier().unwrap();
        for i in 0..5 {
            assert!(e.issue_load(a(0x1000 + i * 64), D).unwrap().speculative);
        }
    }

    #[test]
    fn resolved_barrier_does_not_make_loads_speculative() {
        let mut e = engine(ModelKind::StarFarr);
        let b = e.issue_barrier().unwrap();
        e.resolve_barrier(b).unwrap();
        assert!(!e.issue_load(a(0x40), D).unwrap().speculative);
    }

    #[test]
    fn unexecuted_older_load_makes_younger_speculative() {
        let mut e = engine(ModelKind::StarFarr);
        let first = e.dispatch_load(a(0x40), D).unwrap();
        assert!(e.issue_load(a(0x80), D).unwrap().speculative);
        assert!(!e.execute(first).unwrap().speculative);
    }

    #[test]
    fn squash_sends_one_request_per_missing_load() {
        let mut e = engine(ModelKind::StarFarr);
        e.issue_load(a(0x40), D).unwrap();
        let b = e.issue_barrier().unwrap();
        e.issue_load(a(0x40), D).unwrap(); // L1 hit
        let miss = e.issue_load(a(0x2000), D).unwrap();
        assert_eq!(miss.response.source_level, 3);
        e.dispatch_load(a(0x3000), D).unwrap();
        let r = e.squash_from(b).unwrap();
        assert_eq!(
            r,
            SquashReport {
                loads_squashed: 3,
                sfill_inv_sent: 1,
                skipped_l1_hit: 1,
                skipped_unexecuted: 1,
                suppressed: 0,
            }
        );
        assert!(e.hierarchy().l1().find(a(0x2000), D).is_none());
        assert!(e.hierarchy().l1().find(a(0x40), D).is_some());
    }

    #[test]
    fn baseline_squash_sends_nothing() {
        let mut e = engine(ModelKind::SaLru);
        let b = e.issue_barrier().unwrap();
        e.issue_load(a(0x2000), D).unwrap();
        let r = e.squash_from(b).unwrap();
        assert_eq!((r.sfill_inv_sent, r.suppressed), (0, 1));
        assert!(e.hierarchy().l1().find(a(0x2000), D).is_some());
    }

    #[test]
    fn committed_loads_never_send() {
        let mut e = engine(ModelKind::StarNews { extra_index_bits: 4 });
        let b = e.issue_barrier().unwrap();
        let l = e.issue_load(a(0x2000), D).unwrap();
        e.resolve_barrier(b).unwrap();
        e.resolve_to(l.id).unwrap();
        assert_eq!(e.hierarchy().stats().sfill_inv_received, 0);
        assert_eq!(e.in_flight(), 0);
        // The literal rule keeps the bit set after commit.
        let slot = e.hierarchy().l1().find(a(0x2000), D).unwrap();
        assert!(e.hierarchy().l1().line(slot).spec);
    }

    #[test]
    fn commit_can_clear_spec_bit_when_enabled() {
        let mut e = engine(ModelKind::StarFarr);
        e.set_clear_specbit_on_commit(true);
        let b = e.issue_barrier().unwrap();
        let l = e.issue_load(a(0x2000), D).unwrap();
        e.resolve_barrier(b).unwrap();
        e.resolve_to(l.id).unwrap();
        let slot = e.hierarchy().l1().find(a(0x2000), D).unwrap();
        assert!(!e.hierarchy().l1().line(slot).spec);
    }

    #[test]
    fn stores_perform_at_commit_only() {
        let mut e = engine(ModelKind::StarFarr);
        let s = e.issue_store(a(0x100), D, 9).unwrap();
        assert_eq!(e.hierarchy().stats().stores, 0);
        e.resolve_to(s).unwrap();
        assert_eq!(e.hierarchy().stats().stores, 1);
        let b = e.issue_barrier().unwrap();
        e.issue_store(a(0x200), D, 1).unwrap();
        e.squash_from(b).unwrap();
        assert_eq!(e.hierarchy().stats().stores, 1);
    }

    #[test]
    fn commit_past_unexecuted_load_is_rejected() {
        let mut e = engine(ModelKind::StarFarr);
        let l = e.dispatch_load(a(0x40), D).unwrap();
        assert_eq!(e.resolve_to(l), Err(EngineError::Unexecuted(l)));
        assert_eq!(e.squash_from(999), Err(EngineError::UnknownId(999)));
    }

    #[test]
    fn full_window_commits_eagerly_or_refuses() {
        let mut e = SpecEngine::with_capacity(Hierarchy::new(HierarchyConfig::new(ModelKind::SaLru), 0).unwrap(), 4);
        for i in 0..10 {
            e.issue_load(a(i * 64), D).unwrap();
        }
        assert!(e.in_flight() <= 4);
        e.drain().unwrap();
        e.issue_barrier().unwrap();
        for i in 0..3 {
            e.issue_load(a(i * 64), D).unwrap();
        }
        assert_eq!(e.issue_load(a(0x1000), D).unwrap_err(), EngineError::WindowFull(4));
    }
}
