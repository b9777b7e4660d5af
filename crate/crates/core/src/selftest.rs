//! Built-in invariant suites, run at reduced scale.
//!
//! Each suite checks one property against a direct oracle: a chi-square
//! uniformity test, a literal SFill-Inv outcome table, a byte-level reference
//! memory, and so on. A [`Mutation`] can be injected to confirm the suites
//! actually catch a broken model.

use std::collections::HashMap;
use std::fmt;

use crate::addr::{Address, CacheGeometry, DomainId};
use crate::hierarchy::{Hierarchy, HierarchyConfig};
use crate::model::{
    build_model, CacheModel, MemoryRequest, ModelKind, Mutation, OutcomeKind, SetAssocLru, SfillInvAction,
    SfillInvRequest,
};
use crate::rng::SimRng;
use crate::stats::{chi_square_uniform, fold_bins};
use crate::trace::{replay, synth_trace, ReplayConfig, SynthParams, SynthProfile};

const P_THRESHOLD: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Replacement events per uniformity test.
    pub uniformity_events: usize,
    /// Events per replayed or oracle trace.
    pub trace_events: usize,
    pub mutation: Option<Mutation>,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            uniformity_events: 20_000,
            trace_events: 20_000,
            mutation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn result(name: &'static str, failures: Vec<String>, ok_detail: String) -> SuiteResult {
    SuiteResult {
        name,
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            ok_detail
        } else {
            failures.join("; ")
        },
    }
}

pub fn star_models() -> [ModelKind; 2] {
    [ModelKind::StarFarr, ModelKind::StarNews { extra_index_bits: 4 }]
}

pub fn all_models() -> [ModelKind; 3] {
    [
        ModelKind::SaLru,
        ModelKind::StarFarr,
        ModelKind::StarNews { extra_index_bits: 4 },
    ]
}

fn line(i: u64) -> Address {
    Address::from_raw(i * 64)
}

fn zero_line() -> Box<[u8]> {
    vec![0u8; 64].into_boxed_slice()
}

/// Slot histogram of FARR victims once the cache is full.
pub fn farr_victim_counts(events: usize, seed: u64, mutation: Option<Mutation>) -> Vec<u64> {
    let geom = CacheGeometry::default_l1();
    let mut c = build_model(ModelKind::StarFarr, geom, mutation).expect("default geometry");
    let mut rng = SimRng::new(seed);
    let d = DomainId::new(0);
    for i in 0..geom.total_lines as u64 {
        c.access(&MemoryRequest::load(line(i), d), &mut rng);
    }
    let mut counts = vec![0u64; geom.total_lines];
    for i in 0..events as u64 {
        let f = c.fill(&MemoryRequest::load(line(1 << 20 | i), d), zero_line(), &mut rng);
        counts[f.slot.expect("FARR always fills")] += 1;
    }
    counts
}

/// Slot histogram of NEWS victims on mapping misses once the cache is full.
/// Every request comes from a domain with no mapping entries.
pub fn news_mapping_miss_counts(events: usize, seed: u64, k: u32, mutation: Option<Mutation>) -> Vec<u64> {
    let geom = CacheGeometry::default_l1();
    let mut c = build_model(ModelKind::StarNews { extra_index_bits: k }, geom, mutation).expect("valid k");
    let mut rng = SimRng::new(seed);
    for i in 0..geom.total_lines as u64 {
        c.access(&MemoryRequest::load(line(i), DomainId::new(0)), &mut rng);
    }
    let mut counts = vec![0u64; geom.total_lines];
    for i in 0..events as u64 {
        // Alternate two domains over fresh lines so the mapping never hits.
        let d = DomainId::new(1 + (i % 2) as u16);
        let f = c.fill(&MemoryRequest::load(line(1 << 24 | i), d), zero_line(), &mut rng);
        counts[f.slot.expect("mapping miss always fills")] += 1;
    }
    counts
}

fn uniformity(opts: &SelftestOptions) -> SuiteResult {
    let farr = chi_square_uniform(&fold_bins(
        &farr_victim_counts(
            opts.uniformity_events,
            SimRng::fork(opts.seed, 1).next_u64(),
            opts.mutation,
        ),
        16,
    ));
    let news = chi_square_uniform(&fold_bins(
        &news_mapping_miss_counts(
            opts.uniformity_events,
            SimRng::fork(opts.seed, 2).next_u64(),
            4,
            opts.mutation,
        ),
        16,
    ));
    let mut failures = Vec::new();
    if farr.p_value <= P_THRESHOLD {
        failures.push(format!("FARR victims not uniform (p = {:.2e})", farr.p_value));
    }
    if news.p_value <= P_THRESHOLD {
        failures.push(format!(
            "NEWS mapping-miss victims not uniform (p = {:.2e})",
            news.p_value
        ));
    }
    result(
        "uniformity",
        failures,
        format!("FARR p = {:.3}, NEWS p = {:.3}", farr.p_value, news.p_value),
    )
}

fn inclusion(opts: &SelftestOptions) -> SuiteResult {
    let mut failures = Vec::new();
    let mut checked = 0;
    for model in all_models() {
        for profile in [SynthProfile::UniformRandom, SynthProfile::SpecMix { p_squash: 0.5 }] {
            let ev = synth_trace(
                profile,
                &SynthParams {
                    length: opts.trace_events,
                    seed: opts.seed,
                },
            );
            let mut hc = HierarchyConfig::new(model);
            hc.mutation = opts.mutation;
            let mut cfg = ReplayConfig::new(hc);
            cfg.seed = opts.seed;
            cfg.check_inclusion = true;
            match replay(&ev, &cfg) {
                Ok(_) => checked += ev.len(),
                Err(e) => failures.push(format!("{model} {profile}: {e}")),
            }
        }
    }
    result(
        "inclusion",
        failures,
        format!("L1 within L2 after each of {checked} events"),
    )
}

fn hierarchy(model: ModelKind, opts: &SelftestOptions) -> Hierarchy {
    let mut hc = HierarchyConfig::new(model);
    hc.mutation = opts.mutation;
    Hierarchy::new(hc, opts.seed).expect("default hierarchy")
}

fn no_hit(opts: &SelftestOptions) -> SuiteResult {
    let mut failures = Vec::new();
    let mut rng = SimRng::new(opts.seed);
    let (owner, other) = (DomainId::new(1), DomainId::new(2));
    for model in star_models() {
        let mut h = hierarchy(model, opts);
        let mut hits = 0;
        for _ in 0..256 {
            let a = line(rng.choose(1 << 16) as u64);
            h.access(&MemoryRequest::load(a, owner));
            if h.access(&MemoryRequest::load(a, other)).source_level == 1 {
                hits += 1;
            }
            h.flush(a, owner);
            h.flush(a, other);
        }
        if hits > 0 {
            failures.push(format!("{model}: {hits} cross-domain L1 hits"));
        }
    }
    result("no-hit", failures, "no cross-domain L1 hits on STAR models".into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfillCase {
    FoundNonSpec,
    FoundSpec,
    Absent,
}

impl SfillCase {
    pub const ALL: [SfillCase; 3] = [SfillCase::FoundNonSpec, SfillCase::FoundSpec, SfillCase::Absent];
}

/// The rule as a literal table: (case, source level, receiving level) →
/// expected action.
pub fn sfill_expected(case: SfillCase, source_level: u8, level: u8) -> SfillInvAction {
    match (case, source_level, level) {
        (SfillCase::FoundNonSpec, _, _) => SfillInvAction::Dropped,
        (SfillCase::FoundSpec, 2, 1) => SfillInvAction::Invalidated { propagate: true },
        (SfillCase::FoundSpec, 3, 1) => SfillInvAction::Invalidated { propagate: true },
        (SfillCase::FoundSpec, 2, 2) => SfillInvAction::Invalidated { propagate: false },
        (SfillCase::FoundSpec, 3, 2) => SfillInvAction::Invalidated { propagate: true },
        (SfillCase::Absent, 2, 1) => SfillInvAction::NotFound { propagate: true },
        (SfillCase::Absent, 3, 1) => SfillInvAction::NotFound { propagate: true },
        (SfillCase::Absent, 2, 2) => SfillInvAction::NotFound { propagate: false },
        (SfillCase::Absent, 3, 2) => SfillInvAction::NotFound { propagate: true },
        other => panic!("no table entry for {other:?}"),
    }
}

/// Sets up `case` in a fresh cache and applies one SFill-Inv. Returns the
/// action and whether the line is still present afterwards.
pub fn sfill_observe(
    cache: &mut dyn CacheModel,
    case: SfillCase,
    source_level: u8,
    level: u8,
    rng: &mut SimRng,
) -> (SfillInvAction, bool) {
    let d = DomainId::new(1);
    let a = line(0x123);
    match case {
        SfillCase::FoundNonSpec => {
            cache.access(&MemoryRequest::load(a, d), rng);
        }
        SfillCase::FoundSpec => {
            cache.access(&MemoryRequest::spec_load(a, d), rng);
        }
        SfillCase::Absent => {}
    }
    let action = cache.handle_sfill_inv(
        &SfillInvRequest {
            addr: a,
            domain: d,
            source_level,
        },
        level,
    );
    (action, cache.find(a, d).is_some())
}

fn sfill_table(opts: &SelftestOptions) -> SuiteResult {
    let mut failures = Vec::new();
    let mut cases = 0;
    let mut rng = SimRng::new(opts.seed);
    for model in star_models() {
        for level in [1u8, 2] {
            for source in [2u8, 3] {
                for case in SfillCase::ALL {
                    let mut cache: Box<dyn CacheModel> = if level == 1 {
                        build_model(model, CacheGeometry::default_l1(), opts.mutation).expect("default geometry")
                    } else {
                        Box::new(SetAssocLru::new(CacheGeometry::default_l2()))
                    };
                    let (got, present) = sfill_observe(cache.as_mut(), case, source, level, &mut rng);
                    let want = sfill_expected(case, source, level);
                    let want_present = case == SfillCase::FoundNonSpec;
                    if got != want || present != want_present {
                        failures.push(format!(
                            "{model} L{level} {case:?} src={source}: got {got:?} (present {present}), want {want:?}"
                        ));
                    }
                    cases += 1;
                }
            }
        }
    }
    result("sfill-inv-table", failures, format!("{cases}/{cases} cases match"))
}

/// A speculative mapping-hit/tag-miss on NEWS must forward the data without
/// installing it, or the load's footprint becomes visible to same-domain
/// probing before any squash.
fn spec_tag_miss(opts: &SelftestOptions) -> SuiteResult {
    let mut failures = Vec::new();
    let d = DomainId::new(1);
    let stride = 64u64 << 9;
    let mut h = hierarchy(ModelKind::StarNews { extra_index_bits: 0 }, opts);
    let mut forwarded = 0;
    for i in 0..64u64 {
        let a = Address::from_raw(i * 64);
        let b = Address::from_raw(i * 64 + stride * (1 + i % 7));
        h.access(&MemoryRequest::load(a, d));
        let r = h.access(&MemoryRequest::spec_load(b, d));
        if r.kind != OutcomeKind::MissForwardNoFill {
            failures.push(format!("spec tag miss on {b} was {:?}", r.kind));
            break;
        }
        if h.l1().find(b, d).is_some() {
            failures.push(format!("spec tag miss on {b} installed the line in L1"));
            break;
        }
        forwarded += 1;
    }
    result(
        "spec-tag-miss",
        failures,
        format!("{forwarded} speculative tag misses forwarded without fill"),
    )
}

fn flat_memory(opts: &SelftestOptions) -> SuiteResult {
    let mut failures = Vec::new();
    let mut ops = 0;
    for model in all_models() {
        let mut h = hierarchy(model, opts);
        let mut rng = SimRng::fork(opts.seed, 0xf1a7);
        let mut reference: HashMap<u64, u8> = HashMap::new();
        'trace: for _ in 0..opts.trace_events {
            // 3072 lines exceed L1 and stress L2 conflicts through a few hot sets.
            let a = Address::from_raw(rng.choose(3072) as u64 * 64 * 5 + rng.choose(64) as u64);
            let d = DomainId::new(rng.choose(3) as u16);
            match rng.choose(8) {
                0..=2 => {
                    let v = rng.next_u8();
                    h.store(&MemoryRequest::store(a, d), v);
                    reference.insert(a.value(), v);
                }
                3 => {
                    h.flush(a, d);
                }
                _ => {
                    let got = h.access(&MemoryRequest::load(a, d)).byte(a);
                    let want = reference.get(&a.value()).copied().unwrap_or(0);
                    if got != want {
                        failures.push(format!("{model}: load {a} returned {got:#04x}, expected {want:#04x}"));
                        break 'trace;
                    }
                }
            }
            ops += 1;
        }
        h.drain();
        for (&addr, &want) in &reference {
            let got = h.memory().read_byte(Address::from_raw(addr));
            if got != want {
                failures.push(format!(
                    "{model}: memory at {addr:#x} is {got:#04x} after drain, expected {want:#04x}"
                ));
                break;
            }
        }
    }
    result(
        "flat-memory",
        failures,
        format!("{ops} operations match the reference memory"),
    )
}

/// Runs every suite in a fixed order.
pub fn run_selftest(opts: &SelftestOptions) -> Vec<SuiteResult> {
    vec![
        uniformity(opts),
        inclusion(opts),
        no_hit(opts),
        sfill_table(opts),
        spec_tag_miss(opts),
        flat_memory(opts),
    ]
}
