use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use starsim_core::attacks::aes::{run_flush_reload_aes, run_prime_probe_aes};
use starsim_core::attacks::spectre::{run_spectre_fr, run_spectre_pp, sweep_spectre};
use starsim_core::attacks::{AesAttackResult, LeakageScore, SpectreResult, SpectreSweep};
use starsim_core::selftest::{run_selftest, SelftestOptions};
use starsim_core::trace::{parse, replay as replay_trace, synth_trace, LocatedEvent, SynthParams, SynthProfile};
use starsim_core::{AttackConfig, AttackKind, ModelKind, Mutation, ObservationMatrix, ReplayConfig, ReplayStats};

use crate::config::{ConfigError, RunConfig, DEFAULT_K};

const DEFAULT_SECRET: u8 = 30;

type Header = Vec<(String, String)>;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok((path, BufWriter::new(f)))
}

fn write_header(w: &mut impl Write, header: &Header) -> Result<()> {
    for (k, v) in header {
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

/// Long-form matrix CSV: one line per populated cell.
fn write_matrices(dir: &Path, header: &Header, matrices: &[(usize, &ObservationMatrix)]) -> Result<PathBuf> {
    let (path, mut w) = create(dir, "matrix.csv")?;
    write_header(&mut w, header)?;
    writeln!(w, "matrix,row,col,mean_latency,trials")?;
    for (id, m) in matrices {
        for (r, c, mean, n) in m.cells() {
            writeln!(w, "{id},{r},{c},{mean:.6},{n}")?;
        }
    }
    w.flush()?;
    Ok(path)
}

fn write_json(dir: &Path, value: &impl Serialize) -> Result<PathBuf> {
    let (path, mut w) = create(dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(path)
}

#[derive(Debug, Serialize)]
struct Leakage {
    bits: f64,
    noise_floor: f64,
    trials: usize,
    leaks: bool,
}

fn leakage(s: Option<LeakageScore>) -> Option<Leakage> {
    s.map(|s| Leakage {
        bits: s.bits,
        noise_floor: s.noise_floor,
        trials: s.trials,
        leaks: s.leaks(),
    })
}

fn header_map(h: &Header) -> std::collections::BTreeMap<String, String> {
    h.iter().cloned().collect()
}

fn show(v: Option<u8>) -> String {
    v.map_or("NONE".into(), |v| v.to_string())
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// fr-aes, pp-aes, fr-spectre or pp-spectre.
    pub kind: AttackKind,
    /// Spectre secret byte (default 30).
    #[arg(long, conflicts_with = "sweep")]
    pub secret: Option<u8>,
    /// Spectre: attack every secret value 0..=255.
    #[arg(long)]
    pub sweep: bool,
    /// AES key as 32 hex digits (default all zero).
    #[arg(long)]
    pub key: Option<String>,
    /// Spectre: receiver runs in a different domain from the sender.
    #[arg(long)]
    pub cross_domain: bool,
    /// Spectre: never mispredict the bounds check.
    #[arg(long)]
    pub no_mistrain: bool,
}

fn parse_key(s: &str) -> Result<[u8; 16]> {
    let s = s.strip_prefix("0x").unwrap_or(s);
    if s.len() != 32 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(usage(format!("--key needs 32 hex digits, got {s:?}")));
    }
    let mut key = [0u8; 16];
    for (i, b) in key.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).expect("checked hex");
    }
    Ok(key)
}

fn attack_config(cfg: &RunConfig, kind: AttackKind) -> AttackConfig {
    let mut a = AttackConfig::new(cfg.model, kind);
    a.hierarchy = cfg.hierarchy();
    a.seed = cfg.seed;
    a.noise_sigma = cfg.noise;
    if let Some(t) = cfg.trials {
        a.trials = t;
    }
    a
}

fn run_aes(kind: AttackKind, key: &[u8; 16], a: &AttackConfig) -> Result<AesAttackResult> {
    Ok(match kind {
        AttackKind::FrAes => run_flush_reload_aes(key, a)?,
        AttackKind::PpAes => run_prime_probe_aes(key, a)?,
        _ => unreachable!("not an AES attack"),
    })
}

fn run_spectre(kind: AttackKind, secret: u8, a: &AttackConfig) -> Result<SpectreResult> {
    Ok(match kind {
        AttackKind::FrSpectre => run_spectre_fr(secret, a)?,
        AttackKind::PpSpectre => run_spectre_pp(secret, a)?,
        _ => unreachable!("not a Spectre attack"),
    })
}

#[derive(Debug, Serialize)]
struct AesSummary {
    attack: String,
    config: std::collections::BTreeMap<String, String>,
    key: String,
    /// Recovered high nibble per key byte, or null.
    recovered_nibbles: Vec<Option<u8>>,
    votes: Vec<usize>,
    voting_rows: Vec<usize>,
    matches_key: bool,
    leakage: Option<Leakage>,
}

#[derive(Debug, Serialize)]
struct SpectreSummary {
    attack: String,
    config: std::collections::BTreeMap<String, String>,
    secret: u8,
    recovered: Option<u8>,
    differential: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct SpectreSweepSummary {
    attack: String,
    config: std::collections::BTreeMap<String, String>,
    secrets: usize,
    recovered_correctly: usize,
    recovered_any: usize,
    recovered: Vec<Option<u8>>,
    leakage: Option<Leakage>,
}

pub fn attack(cfg: &RunConfig, args: &AttackArgs) -> Result<ExitCode> {
    let kind = args.kind;
    let mut a = attack_config(cfg, kind);
    let mut header = vec![("command".to_string(), format!("attack {kind}"))];
    header.extend(cfg.echo(a.trials));
    if kind.is_spectre() {
        if args.key.is_some() {
            return Err(usage("--key applies to AES attacks only"));
        }
        a.same_domain = !args.cross_domain;
        a.mistrain = !args.no_mistrain;
        header.push(("cross_domain".into(), args.cross_domain.to_string()));
        header.push(("mistrain".into(), a.mistrain.to_string()));
        if args.sweep {
            header.push(("secrets".into(), "0-255".into()));
            let secrets: Vec<u8> = (0..=255).collect();
            let s: SpectreSweep = sweep_spectre(kind, &secrets, &a)?;
            let m = write_matrices(&cfg.out, &header, &[(0, &s.matrix)])?;
            let summary = SpectreSweepSummary {
                attack: kind.to_string(),
                config: header_map(&header),
                secrets: s.results.len(),
                recovered_correctly: s.recovered_correctly(),
                recovered_any: s.recovered_any(),
                recovered: s.results.iter().map(|r| r.recovered).collect(),
                leakage: leakage(s.leakage),
            };
            let j = write_json(&cfg.out, &summary)?;
            println!(
                "{kind} on {}: recovered {}/256 secrets correctly ({} with any guess)",
                cfg.model, summary.recovered_correctly, summary.recovered_any
            );
            if let Some(l) = &summary.leakage {
                println!("leakage {:.4} bits (noise floor {:.4})", l.bits, l.noise_floor);
            }
            eprintln!("wrote {} and {}", m.display(), j.display());
        } else {
            let secret = args.secret.unwrap_or(DEFAULT_SECRET);
            header.push(("secret".into(), secret.to_string()));
            let r = run_spectre(kind, secret, &a)?;
            let mut mats = vec![(0, &r.matrix)];
            if let Some(b) = &r.baseline {
                mats.push((1, b));
            }
            let m = write_matrices(&cfg.out, &header, &mats)?;
            let summary = SpectreSummary {
                attack: kind.to_string(),
                config: header_map(&header),
                secret,
                recovered: r.recovered,
                differential: r.differential.clone(),
            };
            let j = write_json(&cfg.out, &summary)?;
            println!("recovered={}", show(r.recovered));
            eprintln!("wrote {} and {}", m.display(), j.display());
        }
    } else {
        if args.secret.is_some() || args.sweep || args.cross_domain || args.no_mistrain {
            return Err(usage(
                "--secret, --sweep, --cross-domain and --no-mistrain apply to Spectre attacks only",
            ));
        }
        let key = match &args.key {
            Some(k) => parse_key(k)?,
            None => [0u8; 16],
        };
        let key_hex: String = key.iter().map(|b| format!("{b:02x}")).collect();
        header.push(("key".into(), key_hex.clone()));
        let r = run_aes(kind, &key, &a)?;
        let mats: Vec<(usize, &ObservationMatrix)> = r.matrices.iter().enumerate().collect();
        let m = write_matrices(&cfg.out, &header, &mats)?;
        let nibbles = r.recovery.nibbles();
        let summary = AesSummary {
            attack: kind.to_string(),
            config: header_map(&header),
            key: key_hex,
            recovered_nibbles: nibbles.to_vec(),
            votes: r.recovery.bytes.iter().map(|n| n.votes).collect(),
            voting_rows: r.recovery.bytes.iter().map(|n| n.voting_rows).collect(),
            matches_key: r.recovery.matches_key(&key),
            leakage: leakage(r.leakage),
        };
        let j = write_json(&cfg.out, &summary)?;
        let shown: Vec<String> = nibbles
            .iter()
            .map(|n| n.map_or("NONE".into(), |v| format!("{v:#x}")))
            .collect();
        println!("recovered high nibbles: {}", shown.join(" "));
        if let Some(l) = &summary.leakage {
            println!("leakage {:.4} bits (noise floor {:.4})", l.bits, l.noise_floor);
        }
        eprintln!("wrote {} and {}", m.display(), j.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthName {
    UniformRandom,
    PointerChase,
    ConflictHeavy,
    SpecMix,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trace file in the line format described in the README.
    #[arg(required_unless_present = "synth", conflicts_with = "synth")]
    pub trace: Option<PathBuf>,
    /// Generate a synthetic workload instead of reading a file.
    #[arg(long, value_enum)]
    pub synth: Option<SynthName>,
    /// spec-mix: probability that a window is squashed.
    #[arg(long, default_value_t = 0.111)]
    pub p_squash: f64,
    /// Synthetic trace length in events.
    #[arg(long, default_value_t = 200_000)]
    pub length: usize,
    /// Replay once per listed k (implies star-news), e.g. 0,2,4,6.
    #[arg(long, value_delimiter = ',')]
    pub sweep_k: Option<Vec<u32>>,
    /// Clear the speculation bit of committed loads' lines.
    #[arg(long)]
    pub clear_specbit_on_commit: bool,
}

fn load_events(cfg: &RunConfig, args: &ReplayArgs, header: &mut Header) -> Result<Vec<LocatedEvent>> {
    if let Some(name) = args.synth {
        if !(0.0..=1.0).contains(&args.p_squash) {
            return Err(usage(format!(
                "--p-squash must be within [0, 1], got {}",
                args.p_squash
            )));
        }
        let profile = match name {
            SynthName::UniformRandom => SynthProfile::UniformRandom,
            SynthName::PointerChase => SynthProfile::PointerChase,
            SynthName::ConflictHeavy => SynthProfile::ConflictHeavy,
            SynthName::SpecMix => SynthProfile::SpecMix {
                p_squash: args.p_squash,
            },
        };
        header.push(("synth".into(), profile.to_string()));
        header.push(("length".into(), args.length.to_string()));
        return Ok(synth_trace(
            profile,
            &SynthParams {
                length: args.length,
                seed: cfg.seed,
            },
        ));
    }
    let path = args.trace.as_ref().expect("clap requires a trace or --synth");
    header.push(("trace".into(), path.display().to_string()));
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse(&text).with_context(|| path.display().to_string())
}

fn stats_table(rows: &[(ModelKind, ReplayStats)]) {
    println!(
        "{:<14} {:>9} {:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "model", "loads", "stores", "l1_hits", "miss_l2", "miss_mem", "squashed", "sq_frac", "sfill_inv", "tagmiss"
    );
    for (model, s) in rows {
        println!(
            "{:<14} {:>9} {:>8} {:>9} {:>9} {:>9} {:>9} {:>9.4} {:>9} {:>9}",
            model.to_string(),
            s.loads,
            s.stores,
            s.l1_hits,
            s.l1_miss_l2,
            s.l1_miss_mem,
            s.squashed_loads,
            s.squashed_load_fraction,
            s.sfill_inv_sent,
            s.tagmiss_forward_nofill
        );
    }
}

pub fn replay(cfg: &RunConfig, args: &ReplayArgs) -> Result<ExitCode> {
    let models: Vec<ModelKind> = match &args.sweep_k {
        Some(ks) => {
            if cfg.k().is_none() {
                return Err(usage("--sweep-k needs --model star-news"));
            }
            if let Some(&k) = ks.iter().find(|&&k| k > starsim_core::addr::MAX_EXTRA_INDEX_BITS) {
                return Err(usage(format!("k must be at most 16, got {k}")));
            }
            ks.iter()
                .map(|&k| ModelKind::StarNews { extra_index_bits: k })
                .collect()
        }
        None => vec![cfg.model],
    };
    let mut header = vec![("command".to_string(), "replay".to_string())];
    header.extend(cfg.echo(0).into_iter().filter(|(k, _)| k != "trials" && k != "noise"));
    if let Some(ks) = &args.sweep_k {
        let list: Vec<String> = ks.iter().map(|k| k.to_string()).collect();
        header.retain(|(k, _)| k != "model" && k != "k");
        header.push(("model".into(), "star-news".into()));
        header.push(("sweep_k".into(), list.join(",")));
    }
    header.push((
        "clear_specbit_on_commit".into(),
        args.clear_specbit_on_commit.to_string(),
    ));
    let events = load_events(cfg, args, &mut header)?;

    let mut rows = Vec::new();
    for model in models {
        let mut h = cfg.hierarchy();
        h.model = model;
        let mut rc = ReplayConfig::new(h);
        rc.seed = cfg.seed;
        rc.clear_specbit_on_commit = args.clear_specbit_on_commit;
        rc.check_inclusion = false;
        let s = replay_trace(&events, &rc)?;
        rows.push((model, s));
    }

    let (path, mut w) = create(&cfg.out, "stats.csv")?;
    write_header(&mut w, &header)?;
    writeln!(w, "model,k,{}", ReplayStats::CSV_HEADER)?;
    for (model, s) in &rows {
        let k = match model {
            ModelKind::StarNews { extra_index_bits } => extra_index_bits.to_string(),
            _ => String::new(),
        };
        writeln!(w, "{},{k},{}", model.name(), s.csv_row())?;
    }
    w.flush()?;
    stats_table(&rows);
    eprintln!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Attack to run for every combination.
    pub kind: AttackKind,
    /// Models to compare; star-news uses --k (default 4).
    #[arg(long, value_delimiter = ',', default_value = "sa-lru,star-farr,star-news")]
    pub models: Vec<String>,
    /// Timer noise levels in cycles.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub noise_levels: Vec<f64>,
}

pub fn sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<ExitCode> {
    let kind = args.kind;
    let k = cfg.k().unwrap_or(DEFAULT_K);
    let mut models = Vec::new();
    for name in &args.models {
        models.push(match name.as_str() {
            "sa-lru" => ModelKind::SaLru,
            "star-farr" => ModelKind::StarFarr,
            "star-news" => ModelKind::StarNews { extra_index_bits: k },
            other => return Err(usage(format!("unknown model {other:?} in --models"))),
        });
    }
    if let Some(n) = args.noise_levels.iter().find(|n| !(**n >= 0.0 && n.is_finite())) {
        return Err(usage(format!("noise levels must be non-negative, got {n}")));
    }
    let probe = attack_config(cfg, kind);
    let mut header = vec![("command".to_string(), format!("sweep {kind}"))];
    header.extend(
        cfg.echo(probe.trials)
            .into_iter()
            .filter(|(key, _)| key != "model" && key != "noise"),
    );
    header.retain(|(key, _)| key != "k");
    header.push(("k".into(), k.to_string()));

    let (path, mut w) = create(&cfg.out, "sweep.csv")?;
    write_header(&mut w, &header)?;
    writeln!(w, "model,k,noise,recovered,total,leakage_bits,noise_floor,leaks")?;
    for &model in &models {
        for &noise in &args.noise_levels {
            let mut a = attack_config(cfg, kind);
            a.hierarchy.model = model;
            a.noise_sigma = noise;
            let (recovered, total, leak) = if kind.is_spectre() {
                let secrets: Vec<u8> = (0..=255).collect();
                let s = sweep_spectre(kind, &secrets, &a)?;
                (s.recovered_correctly(), 256, s.leakage)
            } else {
                let key = [0u8; 16];
                let r = run_aes(kind, &key, &a)?;
                let ok = r
                    .recovery
                    .nibbles()
                    .iter()
                    .zip(key)
                    .filter(|(n, b)| **n == Some(b >> 4))
                    .count();
                (ok, 16, r.leakage)
            };
            let mk = match model {
                ModelKind::StarNews { extra_index_bits } => extra_index_bits.to_string(),
                _ => String::new(),
            };
            let (bits, floor, leaks) = match leak {
                Some(l) => (
                    format!("{:.6}", l.bits),
                    format!("{:.6}", l.noise_floor),
                    l.leaks().to_string(),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            writeln!(
                w,
                "{},{mk},{noise},{recovered},{total},{bits},{floor},{leaks}",
                model.name()
            )?;
            println!(
                "{:<14} noise {noise:<6} recovered {recovered}/{total}",
                model.to_string()
            );
        }
    }
    w.flush()?;
    eprintln!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MutationName {
    FarrDeterministicVictim,
    NewsFillOnSpecTagMiss,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Deliberately break a model to check that the suites notice.
    #[arg(long, value_enum, hide = true)]
    pub inject_mutation: Option<MutationName>,
}

pub fn selftest(cfg: &RunConfig, args: &SelftestArgs) -> Result<ExitCode> {
    let mutation = args.inject_mutation.map(|m| match m {
        MutationName::FarrDeterministicVictim => Mutation::FarrDeterministicVictim,
        MutationName::NewsFillOnSpecTagMiss => Mutation::NewsFillOnSpecTagMiss,
    });
    let results = run_selftest(&SelftestOptions {
        seed: cfg.seed,
        mutation,
        ..SelftestOptions::default()
    });
    let mut failed = 0;
    for r in &results {
        println!("{r}");
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} of {} suites failed", results.len());
        return Ok(ExitCode::FAILURE);
    }
    println!("all {} suites passed", results.len());
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_parsing() {
        let k = parse_key("000102030405060708090a0b0c0d0e0f").unwrap();
        assert_eq!(k[15], 0x0f);
        assert!(parse_key("00").is_err());
        assert!(parse_key(&"zz".repeat(16)).is_err());
    }
}
