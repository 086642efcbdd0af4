//! End-to-end runs of the `mlt` binary.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use mlt_cli::corpus::{default_layers, generate_corpus, CorpusSpec, Generator};
use mlt_core::encodings::bitpack_for_encode;
use mlt_core::geometry::encode_vertex_dictionary;
use mlt_core::model::{Geometry, Vertex};
use tempfile::TempDir;

fn mlt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlt")).args(args).output().expect("run mlt")
}

fn ok(args: &[&str]) -> String {
    let out = mlt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn metric(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("metric {key} ")))
        .unwrap_or_else(|| panic!("no metric {key} in\n{report}"))
        .parse()
        .unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    walk(dir, dir)
}

fn walk(root: &Path, dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(root, &path));
        } else {
            out.insert(path.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&path).unwrap());
        }
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_zooms(dir: &Path, max_zoom: &str, extra: &[&str]) -> String {
    let mut args = vec!["gen-corpus", "--out", s(dir), "--seed", "1", "--min-zoom", "0", "--max-zoom", max_zoom];
    args.extend_from_slice(extra);
    ok(&args)
}

fn gen(dir: &Path, extra: &[&str]) -> String {
    gen_zooms(dir, "4", extra)
}

#[test]
fn gen_corpus_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let report = gen(a.path(), &[]);
    gen(b.path(), &[]);
    assert_eq!(metric(&report, "gen.tiles"), 5.0);
    let fa = files(a.path());
    assert_eq!(fa.keys().filter(|k| k.ends_with(".mvt")).count(), 5);
    assert_eq!(fa.keys().filter(|k| k.ends_with(".json")).count(), 5);
    assert_eq!(fa, files(b.path()));
}

#[test]
fn encode_compare_decode_pipeline() {
    let dirs: Vec<TempDir> = (0..4).map(|_| TempDir::new().unwrap()).collect();
    let (corpus, adv, simple, back) = (dirs[0].path(), dirs[1].path(), dirs[2].path(), dirs[3].path());
    gen(corpus, &[]);
    let ra = ok(&["encode", s(corpus), "--out", s(adv), "--profile", "advanced"]);
    let rs = ok(&["encode", s(corpus), "--out", s(simple), "--profile", "simple"]);
    assert_eq!(metric(&ra, "encode.tiles"), 5.0);
    assert_eq!(files(adv).len(), 5);
    assert!(metric(&ra, "encode.bytes") <= metric(&rs, "encode.bytes"));
    let rt = ok(&["encode", s(corpus), "--out", s(adv), "--profile", "advanced", "--tessellate"]);
    assert!(metric(&rt, "encode.bytes") > metric(&ra, "encode.bytes"));

    let same = ok(&["compare", s(corpus), s(corpus)]);
    assert_eq!(metric(&same, "compare.sr"), 1.0);
    assert_eq!(metric(&same, "compare.max_sr"), 1.0);
    let cmp = ok(&["compare", s(corpus), s(simple)]);
    assert_eq!(metric(&cmp, "compare.candidate_bytes"), metric(&rs, "encode.bytes"));

    // MLT back to JSON reproduces the generated fixtures exactly
    ok(&["decode", s(simple), "--out", s(back)]);
    let fixtures: BTreeMap<_, _> = files(corpus).into_iter().filter(|(k, _)| k.ends_with(".json")).collect();
    assert_eq!(files(back), fixtures);

    let bench = ok(&["bench-decode", s(adv), "--reps", "5"]);
    assert!(bench.contains("reps: 5"));
    assert!(metric(&bench, "decode.mlt.min_ms") <= metric(&bench, "decode.mlt.max_ms"));
    ok(&["bench-decode", s(corpus), "--reps", "5"]);
    let filters = ok(&["bench-filter", s(adv), "--reps", "5"]);
    assert!(metric(&filters, "filter.pairs") > 0.0);
}

#[test]
fn constant_true_suite_selects_every_row() {
    let dirs: Vec<TempDir> = (0..3).map(|_| TempDir::new().unwrap()).collect();
    let (corpus, mlt_dir) = (dirs[0].path(), dirs[1].path());
    gen(corpus, &[]);
    ok(&["encode", s(corpus), "--out", s(mlt_dir)]);
    let spec = CorpusSpec { min_zoom: 0, max_zoom: 4, ..CorpusSpec::default() };
    let mut suite = String::new();
    for layer in &spec.layers {
        suite.push_str(&format!("(layer \"{}\" true)\n", layer.name));
    }
    let path = dirs[2].path().join("true.sexp");
    std::fs::write(&path, suite).unwrap();
    let report = ok(&["bench-filter", s(mlt_dir), "--suite", s(&path), "--reps", "5"]);
    let rows: usize = generate_corpus(&spec).iter().flat_map(|t| &t.tables).map(|t| t.len()).sum();
    assert!(rows > 0);
    assert_eq!(metric(&report, "filter.selected"), rows as f64);
}

#[test]
fn zero_density_gives_valid_empty_tiles() {
    let (corpus, out) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let report = gen(corpus.path(), &["--density", "0"]);
    assert_eq!(metric(&report, "gen.features"), 0.0);
    ok(&["encode", s(corpus.path()), "--out", s(out.path())]);
    ok(&["bench-decode", s(out.path()), "--reps", "5"]);
}

/// Bytes for a Morton dictionary of `vertices`: bit-packed code deltas plus offsets.
fn dictionary_bytes(vertices: &[Vertex]) -> usize {
    let (dict, offsets) = encode_vertex_dictionary(vertices, 4096, 64).unwrap();
    let deltas: Vec<u64> = dict.codes.iter().scan(0, |prev, &c| Some(c - std::mem::replace(prev, c))).collect();
    bitpack_for_encode(&deltas).len() + bitpack_for_encode(&offsets.iter().map(|&o| o as u64).collect::<Vec<_>>()).len()
}

#[test]
fn clustering_shrinks_morton_dictionaries() {
    let poi = default_layers().into_iter().find(|l| l.name == "poi").unwrap();
    let size = |seed: u64, clustering: f64| -> usize {
        let mut gen = Generator::new(seed, clustering);
        let vertices: Vec<Vertex> = (0..2000)
            .flat_map(|_| match gen.geometry(&poi) {
                Geometry::Point(v) => vec![v],
                Geometry::MultiPoint(vs) => vs,
                g => panic!("unexpected {g:?}"),
            })
            .collect();
        dictionary_bytes(&vertices)
    };
    for seed in 0..8 {
        let (uniform, clustered) = (size(seed, 0.0), size(seed, 1.0));
        assert!(clustered < uniform, "seed {seed}: clustered {clustered} vs uniform {uniform}");
    }
}

#[test]
fn exit_codes() {
    let empty = TempDir::new().unwrap();
    let out = TempDir::new().unwrap();
    assert_eq!(mlt(&["bench-decode", s(empty.path())]).status.code(), Some(2));
    assert_eq!(mlt(&["encode", s(empty.path()), "--out", s(out.path())]).status.code(), Some(2));
    assert_eq!(mlt(&["bench-decode", s(empty.path()), "--reps", "3"]).status.code(), Some(2));
    assert_eq!(mlt(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mlt(&["encode", s(empty.path()), "--out", s(out.path()), "--profile", "extreme"]).status.code(), Some(2));

    let corpus = TempDir::new().unwrap();
    gen_zooms(corpus.path(), "1", &[]);
    let bad = corpus.path().join("1/1/0.mvt");
    assert!(bad.exists(), "corpus layout changed");
    std::fs::remove_file(corpus.path().join("1/1/0.json")).unwrap();
    std::fs::write(&bad, [0x1A, 0x05, 0x0A]).unwrap();
    let res = mlt(&["encode", s(corpus.path()), "--out", s(out.path())]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("0.mvt"), "{}", String::from_utf8_lossy(&res.stderr));

    let other = TempDir::new().unwrap();
    gen_zooms(other.path(), "2", &[]);
    let res = mlt(&["compare", s(corpus.path()), s(other.path())]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing"));
}
