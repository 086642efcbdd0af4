//! Storage and in-memory round-trips over random tiles.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_tile, TileOpts};
use mlt_core::encodings::EncodingProfile;
use mlt_core::geometry::tessellate_table;
use mlt_core::memory::{alignment_of, decode_vector_tile};
use mlt_core::model::validate_tile;
use mlt_core::storage::{decode_tile, encode_tile, DecodeOptions};

const TILES: u64 = 1000;
const ENVELOPE_SLACK: usize = 64;

#[test]
fn random_tiles_round_trip_in_both_profiles() {
    let opts = TileOpts::default();
    for seed in 0..TILES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tile = random_tile(&mut rng, &opts);
        assert!(validate_tile(&tile).is_empty(), "seed {seed}: {:?}", validate_tile(&tile));
        let tessellate = rng.gen_bool(0.5);
        let mut sizes = Vec::new();
        for profile in [EncodingProfile::Simple, EncodingProfile::Advanced] {
            let bytes = encode_tile(&tile, profile, tessellate).unwrap_or_else(|e| panic!("seed {seed} {profile:?}: {e}"));
            assert_eq!(encode_tile(&tile, profile, tessellate).unwrap(), bytes, "seed {seed}: not deterministic");
            let decoded = decode_tile(&bytes, tile.coord).unwrap_or_else(|e| panic!("seed {seed} {profile:?}: {e}"));
            assert_eq!(decoded, tile, "seed {seed} {profile:?}");
            sizes.push(bytes.len());
        }
        assert!(sizes[1] <= sizes[0] + ENVELOPE_SLACK, "seed {seed}: advanced {} vs simple {}", sizes[1], sizes[0]);
    }
}

#[test]
fn vectors_match_logical_decode_and_are_aligned() {
    let opts = TileOpts::default();
    for seed in 0..TILES {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let tile = random_tile(&mut rng, &opts);
        let profile = if seed % 2 == 0 { EncodingProfile::Simple } else { EncodingProfile::Advanced };
        let tessellate = rng.gen_bool(0.5);
        let bytes = encode_tile(&tile, profile, tessellate).unwrap();
        let tables = decode_vector_tile(&bytes, &DecodeOptions::default()).unwrap();
        assert_eq!(tables.len(), tile.tables.len());
        for (vt, table) in tables.iter().zip(&tile.tables) {
            assert_eq!(vt.rows, table.len(), "seed {seed}");
            assert_eq!(&vt.to_feature_table().unwrap(), table, "seed {seed}");
            assert_eq!(alignment_of(&vt.ids) % 16, 0, "seed {seed}");
            for (d, v) in &vt.columns {
                for (role, a) in v.alignments() {
                    assert_eq!(a % 16, 0, "seed {seed} column {} {role}", d.name);
                }
            }
            let g = &vt.geometry;
            assert_eq!(g.types.alignment() % 16, 0);
            assert_eq!(g.vertices.alignment() % 16, 0);
            for b in [&g.geometries, &g.rings, &g.vertex_counts].into_iter().flatten() {
                assert_eq!(b.alignment() % 16, 0);
            }
            let polygonal = table.geometries.iter().any(|g| g.geometry_type().is_polygonal());
            match &g.index_buffer {
                Some(ib) => {
                    assert!(tessellate && polygonal, "seed {seed}");
                    assert_eq!(ib, &tessellate_table(&table.geometries), "seed {seed}");
                }
                None => assert!(!(tessellate && polygonal), "seed {seed}"),
            }
        }
    }
}
