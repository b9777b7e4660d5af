use crate::addr::{Address, DomainId};

/// Result of presenting a miss to the MSHR file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MshrAlloc {
    /// A new entry was opened for this miss.
    Allocated,
    /// An outstanding miss for the same line *and* domain absorbed the request.
    Merged,
    /// No entry free; the requester must stall until one completes.
    Full,
}

#[derive(Debug, Clone)]
struct MshrEntry {
    line: Address,
    domain: DomainId,
    waiting: Vec<u64>,
}

/// Miss status holding registers keyed by `(line, domain)`.
///
/// Two misses to the same line from different domains never share an entry,
/// so one domain cannot observe another's outstanding miss as a
/// hit-under-miss.
#[derive(Debug, Clone)]
pub struct Mshr {
    capacity: usize,
    entries: Vec<MshrEntry>,
}

impl Mshr {
    pub const DEFAULT_ENTRIES: usize = 16;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "MSHR needs at least one entry");
        Self {
            capacity,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn outstanding(&self) -> usize {
        self.entries.len()
    }

    pub fn request(&mut self, line: Address, domain: DomainId, id: u64) -> MshrAlloc {
        if let Some(e) = self.entries.iter_mut().find(|e| e.line == line && e.domain == domain) {
            e.waiting.push(id);
            return MshrAlloc::Merged;
        }
        if self.entries.len() == self.capacity {
            return MshrAlloc::Full;
        }
        self.entries.push(MshrEntry {
            line,
            domain,
            waiting: vec![id],
        });
        MshrAlloc::Allocated
    }

    /// Retires the entry for `(line, domain)` and returns the request ids it held.
    pub fn complete(&mut self, line: Address, domain: DomainId) -> Vec<u64> {
        match self.entries.iter().position(|e| e.line == line && e.domain == domain) {
            Some(i) => self.entries.swap_remove(i).waiting,
            None => Vec::new(),
        }
    }
}

impl Default for Mshr {
    fn default() -> Self {
        Self::new(Self::DEFAULT_ENTRIES)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merges_only_within_a_domain() {
        let mut m = Mshr::new(4);
        let a = Address::from_raw(0x1000);
        assert_eq!(m.request(a, DomainId::new(1), 1), MshrAlloc::Allocated);
        assert_eq!(m.request(a, DomainId::new(1), 2), MshrAlloc::Merged);
        assert_eq!(m.request(a, DomainId::new(2), 3), MshrAlloc::Allocated);
        assert_eq!(m.complete(a, DomainId::new(1)), vec![1, 2]);
        assert_eq!(m.complete(a, DomainId::new(2)), vec![3]);
        assert_eq!(m.outstanding(), 0);
    }

    #[test]
    fn full_file_reports_stall() {
        let mut m = Mshr::new(2);
        let d = DomainId::new(0);
        m.request(Address::from_raw(0), d, 0);
        m.request(Address::from_raw(64), d, 1);
        assert_eq!(m.request(Address::from_raw(128), d, 2), MshrAlloc::Full);
        // Merging still works when full.
        assert_eq!(m.request(Address::from_raw(64), d, 3), MshrAlloc::Merged);
    }
}
