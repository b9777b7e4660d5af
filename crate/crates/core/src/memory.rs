//! Flat backing memory.

use std::collections::HashMap;

use crate::addr::Address;

/// Contents of one cache line.
pub type LineData = Box<[u8]>;

/// Sparse, line-granular backing store. Unwritten lines read as zero.
#[derive(Debug, Clone)]
pub struct FlatMemory {
    line_size: usize,
    lines: HashMap<Address, LineData>,
}

impl FlatMemory {
    pub fn new(line_size: usize) -> Self {
        assert!(line_size.is_power_of_two());
        Self {
            line_size,
            lines: HashMap::new(),
        }
    }

    pub fn line_size(&self) -> usize {
        self.line_size
    }

    pub fn read_line(&self, addr: Address) -> LineData {
        let line = addr.line(self.line_size);
        match self.lines.get(&line) {
            Some(data) => data.clone(),
            None => vec![0u8; self.line_size].into_boxed_slice(),
        }
    }

    pub fn write_line(&mut self, addr: Address, data: &[u8]) {
        assert_eq!(data.len(), self.line_size, "line write of wrong size");
        let line = addr.line(self.line_size);
        if data.iter().all(|&b| b == 0) {
            self.lines.remove(&line);
        } else {
            self.lines.insert(line, data.into());
        }
    }

    pub fn read_byte(&self, addr: Address) -> u8 {
        let line = addr.line(self.line_size);
        let offset = (addr.value() - line.value()) as usize;
        self.lines.get(&line).map_or(0, |d| d[offset])
    }

    pub fn write_byte(&mut self, addr: Address, value: u8) {
        let mut data = self.read_line(addr);
        let offset = (addr.value() & (self.line_size as u64 - 1)) as usize;
        data[offset] = value;
        self.write_line(addr, &data);
    }

    /// Non-zero lines, sorted by address.
    pub fn nonzero_lines(&self) -> Vec<(Address, &[u8])> {
        let mut out: Vec<_> = self.lines.iter().map(|(a, d)| (*a, &d[..])).collect();
        out.sort_by_key(|(a, _)| *a);
        out
    }
}

impl PartialEq for FlatMemory {
    fn eq(&self, other: &Self) -> bool {
        self.line_size == other.line_size && self.lines == other.lines
    }
}
