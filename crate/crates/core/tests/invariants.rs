use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use starsim_core::model::OutcomeKind;
use starsim_core::selftest::{sfill_observe, SfillCase};
use starsim_core::{
    Address, CacheGeometry, DomainId, Hierarchy, HierarchyConfig, MemoryRequest, ModelKind, SfillInvAction, SimRng,
};

#[derive(Debug, Clone, Copy)]
enum Step {
    Load { line: u64, domain: u16, spec: bool },
    Store { line: u64, domain: u16, value: u8 },
    Flush { line: u64, domain: u16 },
}

/// Lines drawn from a small pool with a 32 KiB stride component so they
/// collide in every model.
fn steps(max: usize) -> impl Strategy<Value = Vec<Step>> {
    let line = (0u64..24, 0u64..6).prop_map(|(a, b)| a + b * 512);
    let step = prop_oneof![
        4 => (line.clone(), 0u16..3, any::<bool>()).prop_map(|(line, domain, spec)| Step::Load { line, domain, spec }),
        2 => (line.clone(), 0u16..3, any::<u8>()).prop_map(|(line, domain, value)| Step::Store { line, domain, value }),
        1 => (line, 0u16..3).prop_map(|(line, domain)| Step::Flush { line, domain }),
    ];
    proptest::collection::vec(step, 1..max)
}

fn models() -> impl Strategy<Value = ModelKind> {
    prop_oneof![
        Just(ModelKind::SaLru),
        Just(ModelKind::StarFarr),
        (0u32..=6).prop_map(|k| ModelKind::StarNews { extra_index_bits: k }),
    ]
}

fn star_models() -> impl Strategy<Value = ModelKind> {
    prop_oneof![
        Just(ModelKind::StarFarr),
        (0u32..=6).prop_map(|k| ModelKind::StarNews { extra_index_bits: k }),
    ]
}

fn small_hierarchy(model: ModelKind, seed: u64) -> Hierarchy {
    // A 16-line L1 and 64-line L2 so short sequences see evictions.
    let mut c = HierarchyConfig::new(model);
    c.l1 = CacheGeometry::new(64, 16, 2).unwrap();
    c.l2 = CacheGeometry::new(64, 64, 4).unwrap();
    Hierarchy::new(c, seed).unwrap()
}

fn addr(line: u64) -> Address {
    Address::from_raw(0x10_0000 + line * 64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn star_l1_hits_only_own_domain(model in star_models(), seq in steps(300), seed in any::<u64>()) {
        let mut h = Hierarchy::new(HierarchyConfig::new(model), seed).unwrap();
        let mut touched: HashSet<(u64, u16)> = HashSet::new();
        for s in &seq {
            if let Step::Load { line, domain, spec } = *s {
                let req = MemoryRequest { speculative: spec, ..MemoryRequest::load(addr(line), DomainId::new(domain)) };
                let r = h.access(&req);
                if r.source_level == 1 {
                    prop_assert!(touched.contains(&(line, domain)), "cross-domain hit on line {line}");
                }
                touched.insert((line, domain));
            }
        }
    }

    #[test]
    fn news_mapping_entries_unique(k in 0u32..=6, seq in steps(400), seed in any::<u64>()) {
        let mut h = small_hierarchy(ModelKind::StarNews { extra_index_bits: k }, seed);
        for s in &seq {
            apply(&mut h, s);
            let mut seen = HashSet::new();
            for l in h.l1().lines().iter().filter(|l| l.valid) {
                prop_assert!(seen.insert((l.domain, l.index)), "duplicate mapping {:?}/{}", l.domain, l.index);
            }
        }
    }

    #[test]
    fn spec_bit_follows_provenance(model in models(), seq in steps(300), seed in any::<u64>()) {
        let mut h = small_hierarchy(model, seed);
        for s in &seq {
            let r = apply(&mut h, s);
            match (*s, r) {
                (Step::Load { line, domain, spec: false }, _) | (Step::Store { line, domain, .. }, _) => {
                    let slot = h.l1().find(addr(line), DomainId::new(domain));
                    prop_assert!(slot.is_some(), "non-speculative access did not install its line");
                    prop_assert!(!h.l1().line(slot.unwrap()).spec);
                }
                (Step::Load { line, domain, spec: true }, Some(OutcomeKind::MissFilled)) => {
                    let slot = h.l1().find(addr(line), DomainId::new(domain)).unwrap();
                    prop_assert!(h.l1().line(slot).spec);
                }
                (Step::Load { line, domain, spec: true }, Some(OutcomeKind::MissForwardNoFill)) => {
                    prop_assert!(h.l1().find(addr(line), DomainId::new(domain)).is_none());
                }
                _ => {}
            }
        }
    }

    #[test]
    fn memory_matches_reference(model in models(), seq in steps(400), seed in any::<u64>()) {
        let mut h = small_hierarchy(model, seed);
        let mut reference: HashMap<u64, u8> = HashMap::new();
        for s in &seq {
            match *s {
                Step::Store { line, domain, value } => {
                    h.store(&MemoryRequest::store(addr(line).offset(line % 64), DomainId::new(domain)), value);
                    reference.insert(line, value);
                }
                Step::Load { line, domain, spec } => {
                    let a = addr(line).offset(line % 64);
                    let req = MemoryRequest { speculative: spec, ..MemoryRequest::load(a, DomainId::new(domain)) };
                    let got = h.access(&req).byte(a);
                    prop_assert_eq!(got, reference.get(&line).copied().unwrap_or(0));
                }
                Step::Flush { line, domain } => {
                    h.flush(addr(line), DomainId::new(domain));
                }
            }
            prop_assert!(h.check_inclusion().is_ok());
        }
        h.drain();
        for (line, v) in reference {
            prop_assert_eq!(h.memory().read_byte(addr(line).offset(line % 64)), v);
        }
    }
}

fn apply(h: &mut Hierarchy, s: &Step) -> Option<OutcomeKind> {
    match *s {
        Step::Load { line, domain, spec } => {
            let req = MemoryRequest {
                speculative: spec,
                ..MemoryRequest::load(addr(line), DomainId::new(domain))
            };
            Some(h.access(&req).kind)
        }
        Step::Store { line, domain, value } => {
            h.store(&MemoryRequest::store(addr(line), DomainId::new(domain)), value);
            None
        }
        Step::Flush { line, domain } => {
            h.flush(addr(line), DomainId::new(domain));
            None
        }
    }
}

#[test]
fn sfill_inv_case_table_is_exhaustive() {
    let mut rng = SimRng::new(3);
    let mut checked = 0;
    for model in [
        ModelKind::SaLru,
        ModelKind::StarFarr,
        ModelKind::StarNews { extra_index_bits: 4 },
    ] {
        for case in SfillCase::ALL {
            for source in [2u8, 3] {
                let mut l1 = starsim_core::model::build_model(model, CacheGeometry::default_l1(), None).unwrap();
                let (got, present) = sfill_observe(l1.as_mut(), case, source, 1, &mut rng);
                // Every squashed non-L1 load reaches past L1.
                let want = match case {
                    SfillCase::FoundNonSpec => SfillInvAction::Dropped,
                    SfillCase::FoundSpec => SfillInvAction::Invalidated { propagate: true },
                    SfillCase::Absent => SfillInvAction::NotFound { propagate: true },
                };
                assert_eq!(got, want, "{model} {case:?} src {source}");
                assert_eq!(present, case == SfillCase::FoundNonSpec);
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 18);
}
