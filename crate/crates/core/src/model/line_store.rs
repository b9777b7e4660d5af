use std::collections::HashMap;

use super::CacheLine;
use crate::addr::Address;
use crate::rng::SimRng;

/// Line array for the randomized designs: free-slot tracking, an address
/// index over all domains, and uniform victim selection.
#[derive(Debug, Clone)]
pub(crate) struct LineStore {
    pub lines: Vec<CacheLine>,
    // Stack of slots that were invalid when pushed; stale entries are
    // skipped lazily.
    free: Vec<usize>,
    by_addr: HashMap<Address, Vec<usize>>,
    deterministic_victim: bool,
}

impl LineStore {
    pub fn new(total_lines: usize, line_size: usize, deterministic_victim: bool) -> Self {
        Self {
            lines: vec![CacheLine::empty(line_size); total_lines],
            free: (0..total_lines).rev().collect(),
            by_addr: HashMap::new(),
            deterministic_victim,
        }
    }

    pub fn copies_of(&self, addr: Address) -> Vec<usize> {
        self.by_addr.get(&addr).cloned().unwrap_or_default()
    }

    fn next_free(&mut self) -> Option<usize> {
        while let Some(&slot) = self.free.last() {
            if !self.lines[slot].valid {
                return Some(slot);
            }
            self.free.pop();
        }
        None
    }

    pub fn take(&mut self, slot: usize) -> CacheLine {
        assert!(self.lines[slot].valid, "taking an invalid slot");
        let line_size = self.lines[slot].data.len();
        let old = std::mem::replace(&mut self.lines[slot], CacheLine::empty(line_size));
        if let Some(slots) = self.by_addr.get_mut(&old.addr) {
            slots.retain(|&s| s != slot);
            if slots.is_empty() {
                self.by_addr.remove(&old.addr);
            }
        }
        self.free.push(slot);
        old
    }

    pub fn place(&mut self, slot: usize, line: CacheLine) {
        debug_assert!(!self.lines[slot].valid, "placing over a valid line");
        debug_assert!(line.valid);
        self.by_addr.entry(line.addr).or_default().push(slot);
        self.lines[slot] = line;
    }

    /// Uniformly random slot over the whole array.
    fn random_slot(&self, rng: &mut SimRng) -> usize {
        if self.deterministic_victim {
            0
        } else {
            rng.choose(self.lines.len())
        }
    }

    /// Slot for a new line: an invalid slot if any, otherwise a uniformly
    /// random valid line, which is evicted and returned.
    pub fn make_room(&mut self, rng: &mut SimRng) -> (usize, Option<CacheLine>) {
        if let Some(slot) = self.next_free() {
            self.free.pop();
            return (slot, None);
        }
        let slot = self.random_slot(rng);
        let old = self.take(slot);
        // `take` pushed the slot back as free; the caller fills it immediately.
        self.free.pop();
        (slot, Some(old))
    }

    /// The eviction a fill would cause, without the fill.
    pub fn evict_like_fill(&mut self, rng: &mut SimRng) -> Option<CacheLine> {
        if self.next_free().is_some() {
            return None;
        }
        let slot = self.random_slot(rng);
        Some(self.take(slot))
    }
}
