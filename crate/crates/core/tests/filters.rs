//! Vectorized filter evaluation against the tuple-at-a-time oracle.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_filter, random_table, TileOpts};
use mlt_core::encodings::EncodingProfile;
use mlt_core::filter::{check, compile, evaluate, evaluate_tuple_at_a_time, parse, FilterExpr};
use mlt_core::memory::decode_vector_tile;
use mlt_core::model::{Tile, TileCoord};
use mlt_core::storage::{encode_tile, DecodeOptions};

const TABLES: u64 = 1000;
const FILTERS_PER_TABLE: usize = 10;

#[test]
fn vectorized_matches_oracle() {
    let opts = TileOpts { max_rows: 60, ..TileOpts::default() };
    let mut pairs = 0;
    let mut nonempty = 0;
    for seed in 0..TABLES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random_table(&mut rng, "t".into(), &opts);
        let mut tile = Tile::new(TileCoord::new(0, 0, 0).unwrap());
        tile.tables.push(table);
        let profile = if rng.gen() { EncodingProfile::Advanced } else { EncodingProfile::Simple };
        let bytes = encode_tile(&tile, profile, false).unwrap();
        let vectors = decode_vector_tile(&bytes, &DecodeOptions::default()).unwrap().remove(0);
        let table = &tile.tables[0];
        for _ in 0..FILTERS_PER_TABLE {
            let depth = rng.gen_range(0..=3);
            let expr = random_filter(&mut rng, table, depth);
            let schema: Vec<_> = table.columns.iter().map(|c| c.def.clone()).collect();
            check(&expr, &schema).unwrap_or_else(|e| panic!("seed {seed}: {expr}: {e}"));
            let expected = evaluate_tuple_at_a_time(&expr, table).unwrap();
            let plan = compile(&expr, &vectors).unwrap_or_else(|e| panic!("seed {seed}: {expr}: {e}"));
            let got = evaluate(&plan, &vectors);
            assert_eq!(got.as_slice(), expected.as_slice(), "seed {seed}: {expr}");
            assert!(got.is_valid_for(table.len()));
            pairs += 1;
            nonempty += (!got.is_empty() && got.len() < table.len()) as usize;
        }
    }
    assert_eq!(pairs, TABLES as usize * FILTERS_PER_TABLE);
    // the generator must produce selective filters, not only all-or-nothing ones
    assert!(nonempty > pairs / 10, "{nonempty} selective filters out of {pairs}");
}

#[test]
fn print_then_parse_is_identity() {
    let opts = TileOpts::default();
    for seed in 0..TABLES {
        let mut rng = ChaCha8Rng::seed_from_u64(50_000 + seed);
        let table = random_table(&mut rng, "t".into(), &opts);
        for _ in 0..FILTERS_PER_TABLE {
            let expr = random_filter(&mut rng, &table, 3);
            let text = expr.to_string();
            let back: FilterExpr = parse(&text).unwrap_or_else(|e| panic!("{text}: {e}"));
            assert_eq!(back, expr, "{text}");
        }
    }
}
