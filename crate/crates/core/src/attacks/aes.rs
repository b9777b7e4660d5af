//! First-round AES T-table lookups under flush-reload and prime-probe.
//!
//! The first round reads `T_t[D_j ^ K_j]` where table `t` serves key bytes
//! `j ≡ t (mod 4)`: T1 gets bytes 1, 5, 9, 13, T2 gets 2, 6, 10, 14 and so
//! on (1-based). Each table has 256 four-byte entries, so one 64-byte line
//! holds 16 entries and a lookup only reveals the high nibble of `D ^ K`.

use super::leakage::{leakage_score, LeakageScore};
use super::matrix::{ObservationMatrix, Polarity};
use super::{extreme_with_margin, run_chunks, AttackConfig, AttackError, Machine, PrimeArray, ATTACKER, VICTIM};
use crate::addr::Address;

pub const AES_BASE: u64 = 0x10_0000;
/// Tables are 5 KiB apart so their lines land in disjoint L1 sets and each
/// table's 4 KiB monitored region stays clear of the next table.
pub const TABLE_STRIDE: u64 = 0x1400;
pub const ENTRY_BYTES: u64 = 4;
pub const ENTRIES: usize = 256;
pub const LINE_BYTES: u64 = 64;
pub const LINES_PER_TABLE: usize = 16;
/// Flush-reload watches 64 blocks (4 KiB) starting at each table.
pub const MONITORED_BLOCKS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AesTables {
    pub bases: [Address; 4],
}

impl AesTables {
    pub fn standard() -> Self {
        Self {
            bases: std::array::from_fn(|t| Address::from_raw(AES_BASE + t as u64 * TABLE_STRIDE)),
        }
    }

    pub fn entry(&self, table: usize, index: u8) -> Address {
        self.bases[table].offset(ENTRY_BYTES * u64::from(index))
    }

    /// Address of block `b` of the region that starts at table `t`.
    pub fn block(&self, table: usize, b: usize) -> Address {
        self.bases[table].offset(LINE_BYTES * b as u64)
    }
}

/// Table serving 0-based key byte `j`.
pub fn table_of_byte(j: usize) -> usize {
    j % 4
}

/// The 16 first-round lookups in table order: T1 for bytes 1, 5, 9, 13,
/// then T2, T3, T4. Addresses are entry addresses in the standard layout;
/// `.line(64)` gives the cache line.
pub fn aes_first_round_accesses(key: &[u8; 16], input: &[u8; 16]) -> [Address; 16] {
    let tables = AesTables::standard();
    std::array::from_fn(|i| {
        let (t, n) = (i / 4, i % 4);
        let j = t + 4 * n;
        tables.entry(t, input[j] ^ key[j])
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NibbleRecovery {
    pub nibble: Option<u8>,
    /// Rows that voted for the winning nibble.
    pub votes: usize,
    /// Rows with a clear extreme in the table window.
    pub voting_rows: usize,
    /// Rows with any data.
    pub rows: usize,
}

impl NibbleRecovery {
    pub fn confidence(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.votes as f64 / self.rows as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AesRecovery {
    pub bytes: [NibbleRecovery; 16],
}

impl AesRecovery {
    pub fn nibbles(&self) -> [Option<u8>; 16] {
        std::array::from_fn(|j| self.bytes[j].nibble)
    }

    pub fn matches_key(&self, key: &[u8; 16]) -> bool {
        (0..16).all(|j| self.bytes[j].nibble == Some(key[j] >> 4))
    }

    pub fn none_recovered(&self) -> bool {
        self.bytes.iter().all(|b| b.nibble.is_none())
    }
}

#[derive(Debug, Clone)]
pub struct AesAttackResult {
    /// One matrix per key byte; rows are that byte's input value.
    pub matrices: Vec<ObservationMatrix>,
    pub recovery: AesRecovery,
    /// Leakage of the first key byte's matrix.
    pub leakage: Option<LeakageScore>,
}

impl AesAttackResult {
    /// The matrix for key byte 1, the one plotted as a heatmap.
    pub fn matrix(&self) -> &ObservationMatrix {
        &self.matrices[0]
    }
}

/// Per-row voting: a row votes when its extreme over the 16 table lines
/// beats the runner-up by a quarter of `penalty`; the vote is
/// `line ^ (input >> 4)`. A nibble is recovered when it wins at least half
/// of the rows with data.
fn recover_nibble(
    m: &ObservationMatrix,
    polarity: Polarity,
    penalty: f64,
    value: impl Fn(usize, usize) -> Option<f64>,
) -> NibbleRecovery {
    let mut votes = [0usize; 16];
    let (mut rows, mut voting) = (0, 0);
    for d in 0..m.rows() {
        if !m.row_populated(d) {
            continue;
        }
        rows += 1;
        let window: Vec<Option<f64>> = (0..LINES_PER_TABLE).map(|b| value(d, b)).collect();
        if let Some((b, margin)) = extreme_with_margin(&window, polarity) {
            if margin >= 0.25 * penalty {
                votes[b ^ (d >> 4)] += 1;
                voting += 1;
            }
        }
    }
    let (best, &n) = votes
        .iter()
        .enumerate()
        .max_by_key(|&(i, n)| (*n, std::cmp::Reverse(i)))
        .unwrap();
    let recovered = rows > 0 && n > 0 && 2 * n >= rows;
    NibbleRecovery {
        nibble: recovered.then_some(best as u8),
        votes: n,
        voting_rows: voting,
        rows,
    }
}

fn random_block(m: &mut Machine) -> [u8; 16] {
    std::array::from_fn(|_| m.rng.next_u8())
}

fn warm_tables(m: &mut Machine, tables: &AesTables) {
    for t in 0..4 {
        for b in 0..LINES_PER_TABLE {
            m.load(tables.block(t, b), VICTIM);
        }
    }
}

fn victim_round(m: &mut Machine, key: &[u8; 16], input: &[u8; 16]) {
    for a in aes_first_round_accesses(key, input) {
        m.load(a, VICTIM);
    }
}

fn merge_all(parts: Vec<Vec<ObservationMatrix>>) -> Vec<ObservationMatrix> {
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("at least one chunk");
    for part in it {
        for (a, b) in acc.iter_mut().zip(&part) {
            a.merge(b);
        }
    }
    acc
}

/// Flush-reload: the attacker flushes the 64 blocks after each table,
/// the victim runs the first round, the attacker reloads and times them.
pub fn run_flush_reload_aes(key: &[u8; 16], cfg: &AttackConfig) -> Result<AesAttackResult, AttackError> {
    let tables = AesTables::standard();
    let parts = run_chunks(cfg.trials, cfg.seed, |trials, seed| -> Result<_, AttackError> {
        let mut m = Machine::new(cfg, seed)?;
        warm_tables(&mut m, &tables);
        let mut mats: Vec<ObservationMatrix> = (0..16)
            .map(|_| {
                ObservationMatrix::new(ENTRIES, MONITORED_BLOCKS, Polarity::Min)
                    .with_extreme_columns((0..LINES_PER_TABLE).collect())
            })
            .collect();
        let mut lat = vec![vec![0.0; MONITORED_BLOCKS]; 4];
        for _ in 0..trials {
            let input = random_block(&mut m);
            for t in 0..4 {
                for b in 0..MONITORED_BLOCKS {
                    m.flush(tables.block(t, b), ATTACKER);
                }
            }
            victim_round(&mut m, key, &input);
            for (t, row) in lat.iter_mut().enumerate() {
                for (b, l) in row.iter_mut().enumerate() {
                    *l = m.timed_load(tables.block(t, b), ATTACKER);
                }
            }
            for (j, mat) in mats.iter_mut().enumerate() {
                mat.record_trial(input[j] as usize, &lat[table_of_byte(j)]);
            }
        }
        Ok(mats)
    });
    let matrices = merge_all(parts.into_iter().collect::<Result<_, _>>()?);
    let penalty = cfg.penalty_memory();
    let bytes = std::array::from_fn(|j| {
        let m = &matrices[j];
        recover_nibble(m, Polarity::Min, penalty, |d, b| m.mean(d, b))
    });
    Ok(AesAttackResult {
        leakage: leakage_score(&matrices[0]).ok(),
        recovery: AesRecovery { bytes },
        matrices,
    })
}

/// Prime-probe: the attacker fills L1 with its own array, the victim runs
/// the first round, the attacker probes per set (baseline) or per prime
/// position (randomized designs).
pub fn run_prime_probe_aes(key: &[u8; 16], cfg: &AttackConfig) -> Result<AesAttackResult, AttackError> {
    let tables = AesTables::standard();
    let prime = PrimeArray::new(&cfg.hierarchy);
    let sets = prime.sets();
    let line_size = cfg.hierarchy.l1.line_size;
    let table_sets: Vec<Vec<usize>> = (0..4)
        .map(|t| {
            (0..LINES_PER_TABLE)
                .map(|b| (tables.block(t, b).value() as usize / line_size) % sets)
                .collect()
        })
        .collect();
    let parts = run_chunks(cfg.trials, cfg.seed, |trials, seed| -> Result<_, AttackError> {
        let mut m = Machine::new(cfg, seed)?;
        warm_tables(&mut m, &tables);
        prime.prime(&mut m, ATTACKER);
        let mut mats: Vec<ObservationMatrix> = (0..16)
            .map(|j| {
                ObservationMatrix::new(ENTRIES, prime.columns(), Polarity::Max)
                    .with_extreme_columns(prime.columns_for_sets(&table_sets[table_of_byte(j)]))
            })
            .collect();
        for _ in 0..trials {
            let input = random_block(&mut m);
            prime.prime(&mut m, ATTACKER);
            victim_round(&mut m, key, &input);
            let lat = prime.probe(&mut m, ATTACKER);
            for (j, mat) in mats.iter_mut().enumerate() {
                mat.record_trial(input[j] as usize, &lat);
            }
        }
        Ok(mats)
    });
    let matrices = merge_all(parts.into_iter().collect::<Result<_, _>>()?);
    let penalty = cfg.penalty_l2();
    let bytes = std::array::from_fn(|j| {
        let m = &matrices[j];
        let ts = &table_sets[table_of_byte(j)];
        recover_nibble(m, Polarity::Max, penalty, |d, b| m.folded_mean(d, ts[b], sets))
    });
    Ok(AesAttackResult {
        leakage: leakage_score(&matrices[0]).ok(),
        recovery: AesRecovery { bytes },
        matrices,
    })
}
