//! Drives a trace through the speculative window and the hierarchy.
//!
//! Outside a window each load or store is issued and committed at once.
//! `SPEC_BEGIN` issues an unresolved branch, so everything up to the matching
//! `SPEC_END` is speculative. `squash` discards the window (stores inside it
//! never reach the hierarchy); `commit` resolves the branch and retires it.

use thiserror::Error;

use super::{LocatedEvent, SpecOutcome, TraceEvent};
use crate::addr::{Address, DomainId};
use crate::engine::{EngineError, EntryId, SpecEngine};
use crate::hierarchy::{ConfigError, Hierarchy, HierarchyConfig, InclusionViolation};
use crate::model::Op;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub hierarchy: HierarchyConfig,
    pub seed: u64,
    pub clear_specbit_on_commit: bool,
    /// Check L1 ⊆ L2 after every event.
    pub check_inclusion: bool,
    pub window_capacity: usize,
}

impl ReplayConfig {
    pub fn new(hierarchy: HierarchyConfig) -> Self {
        Self {
            hierarchy,
            seed: 1,
            clear_specbit_on_commit: false,
            check_inclusion: cfg!(debug_assertions),
            window_capacity: 1024,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("line {line}: {source}")]
    Engine { line: usize, source: EngineError },
    #[error("line {line}: {source}")]
    Inclusion { line: usize, source: InclusionViolation },
    #[error("line {line}: {what}")]
    Structure { line: usize, what: &'static str },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayStats {
    pub loads: u64,
    pub stores: u64,
    pub l1_hits: u64,
    pub l1_miss_l2: u64,
    pub l1_miss_mem: u64,
    pub spec_loads: u64,
    pub squashed_loads: u64,
    /// Squashed loads over speculative loads.
    pub squashed_load_fraction: f64,
    pub sfill_inv_sent: u64,
    /// SFill-Inv requests that met a non-speculative copy and stopped.
    pub sfill_inv_dropped_case_i: u64,
    pub tagmiss_forward_nofill: u64,
    pub windows: u64,
    pub squashed_windows: u64,
}

impl ReplayStats {
    pub const CSV_HEADER: &'static str = "loads,stores,l1_hits,l1_miss_l2,l1_miss_mem,spec_loads,squashed_loads,\
squashed_load_fraction,sfill_inv_sent,sfill_inv_dropped_case_i,tagmiss_forward_nofill,windows,squashed_windows";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6},{},{},{},{},{}",
            self.loads,
            self.stores,
            self.l1_hits,
            self.l1_miss_l2,
            self.l1_miss_mem,
            self.spec_loads,
            self.squashed_loads,
            self.squashed_load_fraction,
            self.sfill_inv_sent,
            self.sfill_inv_dropped_case_i,
            self.tagmiss_forward_nofill,
            self.windows,
            self.squashed_windows
        )
    }
}

/// One access as performed by the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessRecord {
    pub line: usize,
    pub op: Op,
    pub addr: Address,
    pub domain: DomainId,
    pub speculative: bool,
    /// Level that served the access. Unknown for stores retired with a
    /// committed window, since several may retire at once.
    pub source_level: Option<u8>,
}

pub struct Replayer {
    engine: SpecEngine,
    check_inclusion: bool,
    domain: DomainId,
    branch: Option<EntryId>,
    stores_seen: u64,
    stats: ReplayStats,
}

impl Replayer {
    pub fn new(cfg: &ReplayConfig) -> Result<Self, ConfigError> {
        let mut h = Hierarchy::new(cfg.hierarchy.clone(), cfg.seed)?;
        h.set_inclusion_checking(false);
        let mut engine = SpecEngine::with_capacity(h, cfg.window_capacity);
        engine.set_clear_specbit_on_commit(cfg.clear_specbit_on_commit);
        Ok(Self {
            engine,
            check_inclusion: cfg.check_inclusion,
            domain: DomainId::new(0),
            branch: None,
            stores_seen: 0,
            stats: ReplayStats::default(),
        })
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        self.engine.hierarchy()
    }

    pub fn hierarchy_mut(&mut self) -> &mut Hierarchy {
        self.engine.hierarchy_mut()
    }

    fn served(&self) -> [u64; 3] {
        let s = self.engine.hierarchy().stats();
        [s.l1_hits, s.l1_miss_l2_hit, s.l1_miss_memory]
    }

    /// Applies one event. Returns the access it performed, if any.
    pub fn step(&mut self, ev: &LocatedEvent) -> Result<Option<AccessRecord>, ReplayError> {
        let line = ev.line;
        let eng = |source| ReplayError::Engine { line, source };
        let rec = match &ev.event {
            TraceEvent::Load { addr, domain } => {
                let domain = domain.unwrap_or(self.domain);
                let issue = self.engine.issue_load(*addr, domain).map_err(eng)?;
                let level = issue.response.source_level;
                self.stats.loads += 1;
                match level {
                    1 => self.stats.l1_hits += 1,
                    2 => self.stats.l1_miss_l2 += 1,
                    _ => self.stats.l1_miss_mem += 1,
                }
                if issue.speculative {
                    self.stats.spec_loads += 1;
                }
                if self.branch.is_none() {
                    self.engine.resolve_to(issue.id).map_err(eng)?;
                }
                Some(AccessRecord {
                    line,
                    op: Op::Load,
                    addr: *addr,
                    domain,
                    speculative: issue.speculative,
                    source_level: Some(level),
                })
            }
            TraceEvent::Store { addr, domain, value } => {
                let domain = domain.unwrap_or(self.domain);
                // Without an explicit value, store the low byte of the
                // store's ordinal so successive writes differ.
                let value = value.unwrap_or(self.stores_seen as u8);
                self.stores_seen += 1;
                let id = self.engine.issue_store(*addr, domain, value).map_err(eng)?;
                if self.branch.is_none() {
                    let before = self.served();
                    self.engine.resolve_to(id).map_err(eng)?;
                    let after = self.served();
                    self.stats.stores += 1;
                    let level = (0..3).find(|&i| after[i] > before[i]).map(|i| i as u8 + 1);
                    Some(AccessRecord {
                        line,
                        op: Op::Store,
                        addr: *addr,
                        domain,
                        speculative: false,
                        source_level: level,
                    })
                } else {
                    None
                }
            }
            TraceEvent::SpecBegin => {
                if self.branch.is_some() {
                    return Err(ReplayError::Structure {
                        line,
                        what: "nested SPEC_BEGIN",
                    });
                }
                self.branch = Some(self.engine.issue_barrier().map_err(eng)?);
                self.stats.windows += 1;
                None
            }
            TraceEvent::SpecEnd(outcome) => {
                let Some(branch) = self.branch.take() else {
                    return Err(ReplayError::Structure {
                        line,
                        what: "SPEC_END without SPEC_BEGIN",
                    });
                };
                match outcome {
                    SpecOutcome::Squash => {
                        self.stats.squashed_windows += 1;
                        let r = self.engine.squash_from(branch).map_err(eng)?;
                        self.stats.squashed_loads += r.loads_squashed;
                        self.stats.sfill_inv_sent += r.sfill_inv_sent;
                    }
                    SpecOutcome::Commit => {
                        let stores_before = self.engine.stats().stores_committed;
                        self.engine.resolve_barrier(branch).map_err(eng)?;
                        self.engine.drain().map_err(eng)?;
                        self.stats.stores += self.engine.stats().stores_committed - stores_before;
                    }
                }
                None
            }
            TraceEvent::DomainSwitch(d) => {
                if self.branch.is_some() {
                    return Err(ReplayError::Structure {
                        line,
                        what: "DOMAIN switch inside a window",
                    });
                }
                self.domain = *d;
                None
            }
            TraceEvent::Comment(_) => None,
        };
        if self.check_inclusion {
            self.engine
                .hierarchy()
                .check_inclusion()
                .map_err(|source| ReplayError::Inclusion { line, source })?;
        }
        Ok(rec)
    }

    /// Statistics so far, with hierarchy-side counters filled in.
    pub fn stats(&self) -> ReplayStats {
        let mut s = self.stats.clone();
        let h = self.engine.hierarchy().stats();
        s.tagmiss_forward_nofill = h.tagmiss_forward_nofill;
        s.sfill_inv_dropped_case_i = h.sfill_inv_dropped;
        s.squashed_load_fraction = if s.spec_loads == 0 {
            0.0
        } else {
            s.squashed_loads as f64 / s.spec_loads as f64
        };
        s
    }

    /// Retires anything still in flight and returns the final statistics.
    pub fn finish(mut self) -> Result<(ReplayStats, Hierarchy), ReplayError> {
        if self.branch.is_some() {
            return Err(ReplayError::Structure {
                line: 0,
                what: "trace ended inside a window",
            });
        }
        self.engine
            .drain()
            .map_err(|source| ReplayError::Engine { line: 0, source })?;
        let stats = self.stats();
        Ok((stats, self.engine.into_hierarchy()))
    }
}

/// Replays a whole trace.
pub fn replay(events: &[LocatedEvent], cfg: &ReplayConfig) -> Result<ReplayStats, ReplayError> {
    let mut r = Replayer::new(cfg)?;
    for ev in events {
        r.step(ev)?;
    }
    Ok(r.finish()?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::trace::parse;

    fn run(model: ModelKind, text: &str) -> ReplayStats {
        let mut cfg = ReplayConfig::new(HierarchyConfig::new(model));
        cfg.check_inclusion = true;
        replay(&parse(text).unwrap(), &cfg).unwrap()
    }

    #[test]
    fn repeated_load_hits() {
        let s = run(ModelKind::SaLru, "L 1000\nL 1008\nL 2000\n");
        assert_eq!((s.loads, s.l1_hits, s.l1_miss_mem), (3, 1, 2));
        assert_eq!(s.spec_loads, 0);
    }

    #[test]
    fn squashed_window_counts() {
        let text = "SPEC_BEGIN\nL 1000\nL 2000\nSPEC_END squash\nSPEC_BEGIN\nL 3000\nSPEC_END commit\n";
        let s = run(ModelKind::StarFarr, text);
        assert_eq!((s.spec_loads, s.squashed_loads), (3, 2));
        assert!((s.squashed_load_fraction - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.sfill_inv_sent, 2);
        assert_eq!((s.windows, s.squashed_windows), (2, 1));
    }

    #[test]
    fn baseline_never_sends_sfill_inv() {
        let s = run(ModelKind::SaLru, "SPEC_BEGIN\nL 1000\nSPEC_END squash\n");
        assert_eq!((s.squashed_loads, s.sfill_inv_sent), (1, 0));
    }

    #[test]
    fn squashed_store_never_lands() {
        let cfg = ReplayConfig::new(HierarchyConfig::new(ModelKind::SaLru));
        let ev = parse("SPEC_BEGIN\nS 40 0 11\nSPEC_END squash\nS 80 0 22\nSPEC_BEGIN\nS c0 0 33\nSPEC_END commit\n")
            .unwrap();
        let mut r = Replayer::new(&cfg).unwrap();
        for e in &ev {
            r.step(e).unwrap();
        }
        let (s, mut h) = r.finish().unwrap();
        assert_eq!(s.stores, 2);
        h.drain();
        assert_eq!(h.memory().read_byte(Address::from_raw(0x40)), 0);
        assert_eq!(h.memory().read_byte(Address::from_raw(0x80)), 0x22);
        assert_eq!(h.memory().read_byte(Address::from_raw(0xc0)), 0x33);
    }

    #[test]
    fn domain_switch_changes_default_domain() {
        // Same address in two domains never hits on STAR.
        let s = run(ModelKind::StarFarr, "L 40\nDOMAIN 1\nL 40\nL 40 0\n");
        assert_eq!(s.l1_hits, 1);
    }

    #[test]
    fn store_record_reports_level() {
        let cfg = ReplayConfig::new(HierarchyConfig::new(ModelKind::SaLru));
        let ev = parse("S 40\nS 48\n").unwrap();
        let mut r = Replayer::new(&cfg).unwrap();
        assert_eq!(r.step(&ev[0]).unwrap().unwrap().source_level, Some(3));
        assert_eq!(r.step(&ev[1]).unwrap().unwrap().source_level, Some(1));
    }
}
