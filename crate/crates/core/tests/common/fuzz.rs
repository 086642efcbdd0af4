//! Time-bounded mutation fuzzing of the decoders.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mlt_core::encodings::EncodingProfile;
use mlt_core::memory::decode_vector_tile;
use mlt_core::model::TileCoord;
use mlt_core::mvt::{mvt_parse, mvt_write};
use mlt_core::storage::{decode_tile, encode_tile, DecodeOptions};

use super::{random_tile, TileOpts};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Mlt,
    Mvt,
}

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub execs: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub crashes: Vec<(Target, Vec<u8>, String)>,
}

impl FuzzReport {
    fn merge(&mut self, other: FuzzReport) {
        self.execs += other.execs;
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.crashes.extend(other.crashes);
    }
}

/// Budget from `MLT_FUZZ_SECS`, or `default_secs` when unset.
pub fn budget(default_secs: u64) -> Duration {
    let secs = std::env::var("MLT_FUZZ_SECS").ok().and_then(|s| s.parse().ok()).unwrap_or(default_secs);
    Duration::from_secs(secs)
}

/// Valid encodings of random tiles to mutate.
pub fn seed_corpus(seed: u64, n: usize) -> Vec<(Target, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..n {
        let small = TileOpts { max_tables: 2, max_rows: 12, ..TileOpts::default() };
        let tile = random_tile(&mut rng, &small);
        let profile = if i % 2 == 0 { EncodingProfile::Advanced } else { EncodingProfile::Simple };
        out.push((Target::Mlt, encode_tile(&tile, profile, rng.gen()).unwrap()));
        let flat = random_tile(&mut rng, &TileOpts { allow_3d: false, allow_vertex_columns: false, ..small });
        out.push((Target::Mvt, mvt_write(&flat).unwrap()));
    }
    out
}

fn mutate(rng: &mut ChaCha8Rng, input: &[u8]) -> Vec<u8> {
    let mut b = input.to_vec();
    for _ in 0..rng.gen_range(1..=4) {
        let len = b.len();
        match rng.gen_range(0..7) {
            0 if len > 0 => {
                let i = rng.gen_range(0..len);
                b[i] ^= 1 << rng.gen_range(0..8);
            }
            1 if len > 0 => {
                let i = rng.gen_range(0..len);
                b[i] = rng.gen();
            }
            2 if len > 0 => b.truncate(rng.gen_range(0..len)),
            3 => {
                let i = rng.gen_range(0..=len);
                let extra: Vec<u8> = (0..rng.gen_range(1..8)).map(|_| rng.gen()).collect();
                b.splice(i..i, extra);
            }
            4 if len > 0 => {
                // oversized varint
                let i = rng.gen_range(0..len);
                let n = rng.gen_range(1..=10).min(len - i);
                b[i..i + n].fill(0xFF);
            }
            5 if len > 1 => {
                let (i, j) = (rng.gen_range(0..len), rng.gen_range(0..len));
                let n = rng.gen_range(1..=16).min(len - i.max(j));
                let chunk = b[i..i + n].to_vec();
                b[j..j + n].copy_from_slice(&chunk);
            }
            6 if len > 0 => {
                let i = rng.gen_range(0..len);
                b[i] = *[0, 1, 0x7F, 0x80, 0xFF].get(rng.gen_range(0..5)).unwrap();
            }
            _ => {}
        }
    }
    b
}

/// Decodes `bytes` through every entry point; true if any accepted it.
pub fn run_one(target: Target, bytes: &[u8]) -> bool {
    match target {
        Target::Mlt => {
            let opts = DecodeOptions::default();
            let logical = decode_tile(bytes, TileCoord::default()).is_ok();
            let vectors = match decode_vector_tile(bytes, &opts) {
                Ok(tables) => {
                    for t in &tables {
                        let _ = t.to_feature_table();
                    }
                    true
                }
                Err(_) => false,
            };
            logical || vectors
        }
        Target::Mvt => mvt_parse(bytes, TileCoord::default()).is_ok(),
    }
}

fn worker(seeds: &[(Target, Vec<u8>)], rng_seed: u64, deadline: Instant) -> FuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut report = FuzzReport::default();
    while Instant::now() < deadline {
        for _ in 0..64 {
            let (target, base) = &seeds[rng.gen_range(0..seeds.len())];
            let input = mutate(&mut rng, base);
            report.execs += 1;
            match catch_unwind(AssertUnwindSafe(|| run_one(*target, &input))) {
                Ok(true) => report.accepted += 1,
                Ok(false) => report.rejected += 1,
                Err(payload) => {
                    let msg = payload
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default();
                    report.crashes.push((*target, input, msg));
                }
            }
        }
    }
    report
}

/// Fuzzes on all cores until `budget` elapses. Panics are caught and reported.
pub fn fuzz(budget: Duration, seed: u64) -> FuzzReport {
    let seeds = seed_corpus(seed, 64);
    let deadline = Instant::now() + budget;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut report = FuzzReport::default();
    std::thread::scope(|s| {
        let handles: Vec<_> =
            (0..threads).map(|t| s.spawn({ let seeds = &seeds; move || worker(seeds, seed ^ (t as u64 + 1), deadline) })).collect();
        for h in handles {
            report.merge(h.join().expect("worker thread"));
        }
    });
    std::panic::set_hook(hook);
    report
}
