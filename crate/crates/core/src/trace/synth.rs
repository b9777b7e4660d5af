//! Synthetic workload generators.

use std::fmt;
use std::str::FromStr;

use super::{LocatedEvent, SpecOutcome, TraceEvent};
use crate::addr::{Address, DomainId};
use crate::rng::SimRng;

const LINE: u64 = 64;
const REGION_BASE: u64 = 0x100_0000;
const UNIFORM_LINES: usize = 2048;
const CHASE_LINES: usize = 1024;
/// L1 capacity in bytes: addresses this far apart share an index at k = 0.
const CONFLICT_STRIDE: u64 = 32 * 1024;
const CONFLICT_ALIASES: u64 = 64;
const CONFLICT_BASES: u64 = 8;
const SPEC_MIX_LINES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthProfile {
    /// Loads and stores spread uniformly over a 2048-line region, one
    /// domain, no speculation.
    UniformRandom,
    /// Loads walking a random cycle over 1024 lines.
    PointerChase,
    /// Lines that collide on the L1 index when no extra index bits are used;
    /// about half the loads sit in speculation windows.
    ConflictHeavy,
    /// Short non-speculative runs between speculation windows, each window
    /// squashed with the given probability.
    SpecMix { p_squash: f64 },
}

impl SynthProfile {
    pub const NAMES: [&'static str; 4] = ["uniform-random", "pointer-chase", "conflict-heavy", "spec-mix"];

    pub fn name(&self) -> &'static str {
        match self {
            SynthProfile::UniformRandom => "uniform-random",
            SynthProfile::PointerChase => "pointer-chase",
            SynthProfile::ConflictHeavy => "conflict-heavy",
            SynthProfile::SpecMix { .. } => "spec-mix",
        }
    }
}

impl fmt::Display for SynthProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthProfile::SpecMix { p_squash } => write!(f, "spec-mix(p={p_squash})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Parses a profile name. `spec-mix` takes its squash probability from
/// [`SynthParams`] and defaults to 0.111 here.
impl FromStr for SynthProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform-random" => Ok(SynthProfile::UniformRandom),
            "pointer-chase" => Ok(SynthProfile::PointerChase),
            "conflict-heavy" => Ok(SynthProfile::ConflictHeavy),
            "spec-mix" => Ok(SynthProfile::SpecMix { p_squash: 0.111 }),
            _ => Err(format!(
                "unknown profile {s:?} (expected one of {})",
                Self::NAMES.join(", ")
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    /// Approximate number of events; the generator stops at the first
    /// window boundary past it.
    pub length: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            length: 100_000,
            seed: 1,
        }
    }
}

struct Builder {
    events: Vec<LocatedEvent>,
}

impl Builder {
    fn push(&mut self, event: TraceEvent) {
        let line = self.events.len() + 1;
        self.events.push(LocatedEvent { line, event });
    }

    fn load(&mut self, addr: u64) {
        self.push(TraceEvent::Load {
            addr: Address::from_raw(addr),
            domain: None,
        });
    }

    fn len(&self) -> usize {
        self.events.len()
    }
}

fn line_addr(rng: &mut SimRng, line: u64) -> u64 {
    REGION_BASE + line * LINE + rng.choose(LINE as usize) as u64
}

/// Generates a trace. Every event uses the default domain 0 and line
/// numbers match the text rendering.
pub fn synth_trace(profile: SynthProfile, params: &SynthParams) -> Vec<LocatedEvent> {
    let mut rng = SimRng::new(params.seed);
    let mut b = Builder { events: Vec::new() };
    let n = params.length;
    match profile {
        SynthProfile::UniformRandom => {
            while b.len() < n {
                let l = rng.choose(UNIFORM_LINES) as u64;
                let a = line_addr(&mut rng, l);
                if rng.chance(0.25) {
                    b.push(TraceEvent::Store {
                        addr: Address::from_raw(a),
                        domain: None,
                        value: None,
                    });
                } else {
                    b.load(a);
                }
            }
        }
        SynthProfile::PointerChase => {
            let mut order: Vec<u64> = (0..CHASE_LINES as u64).collect();
            rng.shuffle(&mut order);
            let mut i = 0;
            while b.len() < n {
                b.load(REGION_BASE + order[i] * LINE);
                i = (i + 1) % order.len();
            }
        }
        SynthProfile::ConflictHeavy => {
            let conflict = |rng: &mut SimRng| {
                let base = rng.choose(CONFLICT_BASES as usize) as u64 * 37 * LINE;
                let j = rng.choose(CONFLICT_ALIASES as usize) as u64;
                REGION_BASE + base + j * CONFLICT_STRIDE + rng.choose(LINE as usize) as u64
            };
            while b.len() < n {
                if rng.chance(0.5) {
                    b.push(TraceEvent::SpecBegin);
                    for _ in 0..1 + rng.choose(4) {
                        b.load(conflict(&mut rng));
                    }
                    let out = if rng.chance(0.5) {
                        SpecOutcome::Squash
                    } else {
                        SpecOutcome::Commit
                    };
                    b.push(TraceEvent::SpecEnd(out));
                } else {
                    for _ in 0..1 + rng.choose(4) {
                        b.load(conflict(&mut rng));
                    }
                }
            }
        }
        SynthProfile::SpecMix { p_squash } => {
            while b.len() < n {
                for _ in 0..rng.choose(4) {
                    let l = rng.choose(SPEC_MIX_LINES) as u64;
                    b.load(line_addr(&mut rng, l));
                }
                b.push(TraceEvent::SpecBegin);
                for _ in 0..1 + rng.choose(8) {
                    let l = rng.choose(SPEC_MIX_LINES) as u64;
                    b.load(line_addr(&mut rng, l));
                }
                let out = if rng.chance(p_squash) {
                    SpecOutcome::Squash
                } else {
                    SpecOutcome::Commit
                };
                b.push(TraceEvent::SpecEnd(out));
            }
        }
    }
    b.events
}

/// Domain used by every synthetic event.
pub const SYNTH_DOMAIN: DomainId = DomainId::new(0);
