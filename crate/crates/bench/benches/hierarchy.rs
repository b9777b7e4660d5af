use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use starsim_core::trace::{replay, synth_trace, SynthParams, SynthProfile};
use starsim_core::{Address, DomainId, Hierarchy, HierarchyConfig, MemoryRequest, ModelKind, ReplayConfig, SimRng};

const MODELS: [ModelKind; 3] = [
    ModelKind::SaLru,
    ModelKind::StarFarr,
    ModelKind::StarNews { extra_index_bits: 4 },
];

fn access_loop(c: &mut Criterion) {
    const N: usize = 10_000;
    let mut rng = SimRng::new(7);
    let addrs: Vec<Address> = (0..N)
        .map(|_| Address::from_raw(0x10_0000 + rng.choose(4096) as u64 * 64))
        .collect();
    let mut g = c.benchmark_group("access");
    g.throughput(Throughput::Elements(N as u64));
    for model in MODELS {
        g.bench_function(model.to_string(), |b| {
            b.iter_batched(
                || {
                    let mut h = Hierarchy::new(HierarchyConfig::new(model), 1).unwrap();
                    h.set_inclusion_checking(false);
                    h
                },
                |mut h| {
                    for a in &addrs {
                        h.access(&MemoryRequest::load(*a, DomainId::new(0)));
                    }
                    h
                },
                BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

fn replay_profiles(c: &mut Criterion) {
    let params = SynthParams {
        length: 20_000,
        seed: 1,
    };
    let mut g = c.benchmark_group("replay");
    g.throughput(Throughput::Elements(params.length as u64));
    for profile in [SynthProfile::ConflictHeavy, SynthProfile::SpecMix { p_squash: 0.111 }] {
        let events = synth_trace(profile, &params);
        for model in MODELS {
            let mut cfg = ReplayConfig::new(HierarchyConfig::new(model));
            cfg.check_inclusion = false;
            g.bench_function(format!("{profile}/{model}"), |b| {
                b.iter(|| replay(&events, &cfg).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, access_loop, replay_profiles);
criterion_main!(benches);
