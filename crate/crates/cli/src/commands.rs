//! Implementations of the CLI verbs.
//!
//! Tile trees are laid out as `<dir>/<z>/<x>/<y>.<ext>` with `ext` one of
//! `mvt`, `mlt` or `json` (a logical tile fixture).

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use flate2::write::DeflateEncoder;
use flate2::Compression;
use rayon::prelude::*;
use walkdir::WalkDir;

use mlt_core::filter::{compile, evaluate, evaluate_tuple_at_a_time, parse_suite, SuiteEntry};
use mlt_core::memory::{decode_vector_tile, VectorTable};
use mlt_core::model::{FeatureTable, Tile, TileCoord};
use mlt_core::mvt::{mvt_parse, mvt_write};
use mlt_core::storage::{decode_tile, encode_tile, DecodeOptions};
use mlt_core::EncodingProfile;

use crate::corpus::{generate_tile, CorpusSpec};
use crate::report::{measure, metric, ms, table, Stats};
use crate::CliError;

pub const DEFAULT_SUITE: &str = include_str!("../data/filters.sexp");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Format {
    Mvt,
    Mlt,
    Json,
}

impl Format {
    pub fn ext(self) -> &'static str {
        match self {
            Format::Mvt => "mvt",
            Format::Mlt => "mlt",
            Format::Json => "json",
        }
    }

    fn from_ext(ext: &str) -> Option<Format> {
        match ext {
            "mvt" => Some(Format::Mvt),
            "mlt" => Some(Format::Mlt),
            "json" => Some(Format::Json),
            _ => None,
        }
    }
}

pub fn tile_path(dir: &Path, coord: TileCoord, format: Format) -> PathBuf {
    dir.join(coord.z.to_string()).join(coord.x.to_string()).join(format!("{}.{}", coord.y, format.ext()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(io_err(path))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn coord_of(rel: &Path) -> Option<TileCoord> {
    let parts: Vec<_> = rel.iter().map(|c| c.to_str()).collect::<Option<_>>()?;
    let [z, x, file] = parts[..] else { return None };
    let y = file.split('.').next()?;
    TileCoord::new(z.parse().ok()?, x.parse().ok()?, y.parse().ok()?).ok()
}

/// Every tile file under `dir`, keyed by coordinate.
pub fn scan(dir: &Path) -> Result<BTreeMap<TileCoord, Vec<(Format, PathBuf)>>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        });
    }
    let mut out: BTreeMap<TileCoord, Vec<(Format, PathBuf)>> = BTreeMap::new();
    for entry in WalkDir::new(dir).min_depth(3).max_depth(3).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Io { path: dir.to_path_buf(), source: e.into() })?;
        let path = entry.path();
        let Some(format) = path.extension().and_then(|e| e.to_str()).and_then(Format::from_ext) else { continue };
        let Some(coord) = coord_of(path.strip_prefix(dir).unwrap()) else { continue };
        out.entry(coord).or_default().push((format, path.to_path_buf()));
    }
    Ok(out)
}

/// Tiles of one binary format; JSON fixtures are ignored.
fn scan_binary(dir: &Path) -> Result<Vec<(TileCoord, Format, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for (coord, files) in scan(dir)? {
        let bin: Vec<_> = files.into_iter().filter(|(f, _)| *f != Format::Json).collect();
        match &bin[..] {
            [] => {}
            [(f, p)] => out.push((coord, *f, p.clone())),
            _ => return Err(CliError::Usage(format!("{}: tile {coord} exists in more than one format", dir.display()))),
        }
    }
    Ok(out)
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input { path: path.to_path_buf(), message: e.to_string() }
}

/// Reads any tile file into the logical model.
pub fn load_tile(coord: TileCoord, format: Format, path: &Path) -> Result<Tile, CliError> {
    let bytes = read(path)?;
    match format {
        Format::Json => {
            let mut tile: Tile = serde_json::from_slice(&bytes).map_err(|e| input_err(path, e))?;
            tile.coord = coord;
            Ok(tile)
        }
        Format::Mvt => mvt_parse(&bytes, coord).map_err(|e| input_err(path, e)),
        Format::Mlt => decode_tile(&bytes, coord).map_err(|e| input_err(path, e)),
    }
}

// ---------------------------------------------------------------------------
// gen-corpus

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTile {
    pub coord: TileCoord,
    pub mvt_bytes: usize,
    pub features: usize,
}

/// Writes `z/x/y.mvt` and the logical fixture `z/x/y.json` per zoom level.
pub fn gen_corpus(spec: &CorpusSpec, out: &Path) -> Result<Vec<GeneratedTile>, CliError> {
    let zooms: Vec<u8> = (spec.min_zoom..=spec.max_zoom).collect();
    zooms
        .par_iter()
        .map(|&z| {
            let tile = generate_tile(spec, z);
            let mvt = mvt_write(&tile).map_err(|e| CliError::Usage(e.to_string()))?;
            let json = serde_json::to_vec(&tile).expect("tiles serialize");
            write(&tile_path(out, tile.coord, Format::Mvt), &mvt)?;
            write(&tile_path(out, tile.coord, Format::Json), &json)?;
            let features = tile.tables.iter().map(FeatureTable::len).sum();
            Ok(GeneratedTile { coord: tile.coord, mvt_bytes: mvt.len(), features })
        })
        .collect()
}

pub fn render_gen(tiles: &[GeneratedTile]) -> String {
    let mut rows = vec![vec!["tile".to_string(), "features".into(), "mvt bytes".into()]];
    for t in tiles {
        rows.push(vec![t.coord.to_string(), t.features.to_string(), t.mvt_bytes.to_string()]);
    }
    let mut out = table(&rows);
    metric(&mut out, "gen.tiles", tiles.len());
    metric(&mut out, "gen.features", tiles.iter().map(|t| t.features).sum::<usize>());
    out
}

// ---------------------------------------------------------------------------
// encode / decode

#[derive(Debug, Clone, PartialEq)]
pub struct SizeSummary {
    pub tiles: Vec<(TileCoord, usize)>,
}

impl SizeSummary {
    pub fn total(&self) -> usize {
        self.tiles.iter().map(|t| t.1).sum()
    }

    pub fn render(&self, section: &str) -> String {
        let mut rows = vec![vec!["tile".to_string(), "bytes".into()]];
        for (c, n) in &self.tiles {
            rows.push(vec![c.to_string(), n.to_string()]);
        }
        rows.push(vec!["total".into(), self.total().to_string()]);
        let mut out = table(&rows);
        metric(&mut out, &format!("{section}.tiles"), self.tiles.len());
        metric(&mut out, &format!("{section}.bytes"), self.total());
        out
    }
}

pub fn encode(input: &Path, out: &Path, profile: EncodingProfile, tessellate: bool) -> Result<SizeSummary, CliError> {
    let inputs = pick_sources(input)?;
    let tiles = inputs
        .par_iter()
        .map(|(coord, format, path)| {
            let tile = load_tile(*coord, *format, path)?;
            let bytes = encode_tile(&tile, profile, tessellate).map_err(|e| input_err(path, e))?;
            write(&tile_path(out, *coord, Format::Mlt), &bytes)?;
            Ok((*coord, bytes.len()))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(SizeSummary { tiles })
}

/// One source per tile: the JSON fixture if present, else MVT, else MLT.
fn pick_sources(dir: &Path) -> Result<Vec<(TileCoord, Format, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for (coord, files) in scan(dir)? {
        let pick = [Format::Json, Format::Mvt, Format::Mlt]
            .into_iter()
            .find_map(|f| files.iter().find(|(g, _)| *g == f).cloned())
            .expect("scan yields non-empty entries");
        out.push((coord, pick.0, pick.1));
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{}: no tiles found", dir.display())));
    }
    Ok(out)
}

/// Decodes every binary tile to a JSON fixture.
pub fn decode(input: &Path, out: &Path) -> Result<SizeSummary, CliError> {
    let inputs = scan_binary(input)?;
    if inputs.is_empty() {
        return Err(CliError::Usage(format!("{}: no tiles found", input.display())));
    }
    let tiles = inputs
        .par_iter()
        .map(|(coord, format, path)| {
            let tile = load_tile(*coord, *format, path)?;
            let json = serde_json::to_vec(&tile).expect("tiles serialize");
            write(&tile_path(out, *coord, Format::Json), &json)?;
            Ok((*coord, json.len()))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(SizeSummary { tiles })
}

// ---------------------------------------------------------------------------
// compare

pub fn deflate(bytes: &[u8]) -> Vec<u8> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(6));
    enc.write_all(bytes).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileSizes {
    pub coord: TileCoord,
    pub baseline: usize,
    pub candidate: usize,
    pub baseline_deflate: usize,
    pub candidate_deflate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub tiles: Vec<TileSizes>,
}

impl CompareReport {
    pub fn totals(&self) -> [usize; 4] {
        self.tiles.iter().fold([0; 4], |acc, t| {
            [acc[0] + t.baseline, acc[1] + t.candidate, acc[2] + t.baseline_deflate, acc[3] + t.candidate_deflate]
        })
    }

    /// Baseline size over candidate size, encoded and compressed.
    pub fn size_reduction(&self) -> (f64, f64) {
        let [a, b, ad, bd] = self.totals();
        (a as f64 / b as f64, ad as f64 / bd as f64)
    }

    /// Largest per-tile ratio, encoded and compressed.
    pub fn max_size_reduction(&self) -> (f64, f64) {
        self.tiles.iter().fold((0.0f64, 0.0f64), |(e, c), t| {
            (e.max(t.baseline as f64 / t.candidate as f64), c.max(t.baseline_deflate as f64 / t.candidate_deflate as f64))
        })
    }

    pub fn render(&self) -> String {
        let [a, b, ad, bd] = self.totals();
        let (sr, src) = self.size_reduction();
        let (msr, msrc) = self.max_size_reduction();
        let rows = vec![
            vec![String::new(), "encoded".into(), "compressed".into()],
            vec!["baseline bytes".into(), a.to_string(), ad.to_string()],
            vec!["candidate bytes".into(), b.to_string(), bd.to_string()],
            vec!["SR".into(), format!("{sr:.2}"), format!("{src:.2}")],
            vec!["Max SR".into(), format!("{msr:.2}"), format!("{msrc:.2}")],
        ];
        let mut out = format!("tiles: {}\n", self.tiles.len());
        out.push_str(&table(&rows));
        metric(&mut out, "compare.tiles", self.tiles.len());
        metric(&mut out, "compare.baseline_bytes", a);
        metric(&mut out, "compare.candidate_bytes", b);
        metric(&mut out, "compare.baseline_deflate_bytes", ad);
        metric(&mut out, "compare.candidate_deflate_bytes", bd);
        metric(&mut out, "compare.sr", format!("{sr:.4}"));
        metric(&mut out, "compare.sr_deflate", format!("{src:.4}"));
        metric(&mut out, "compare.max_sr", format!("{msr:.4}"));
        metric(&mut out, "compare.max_sr_deflate", format!("{msrc:.4}"));
        out
    }
}

pub fn compare_bytes(tiles: Vec<(TileCoord, Vec<u8>, Vec<u8>)>) -> CompareReport {
    let tiles = tiles
        .par_iter()
        .map(|(coord, a, b)| TileSizes {
            coord: *coord,
            baseline: a.len(),
            candidate: b.len(),
            baseline_deflate: deflate(a).len(),
            candidate_deflate: deflate(b).len(),
        })
        .collect();
    CompareReport { tiles }
}

/// Size comparison of two tile trees; `baseline` is usually MVT.
pub fn compare(baseline: &Path, candidate: &Path) -> Result<CompareReport, CliError> {
    let a = scan_binary(baseline)?;
    let b = scan_binary(candidate)?;
    let a_coords: Vec<_> = a.iter().map(|t| t.0).collect();
    let b_coords: Vec<_> = b.iter().map(|t| t.0).collect();
    if a_coords != b_coords {
        let missing: Vec<String> = a_coords
            .iter()
            .filter(|c| !b_coords.contains(c))
            .map(|c| format!("{c} missing in {}", candidate.display()))
            .chain(b_coords.iter().filter(|c| !a_coords.contains(c)).map(|c| format!("{c} missing in {}", baseline.display())))
            .collect();
        return Err(CliError::Usage(format!("tile sets differ: {}", missing.join(", "))));
    }
    if a.is_empty() {
        return Err(CliError::Usage(format!("{}: no tiles found", baseline.display())));
    }
    let pairs = a
        .iter()
        .zip(&b)
        .map(|((c, _, pa), (_, _, pb))| Ok((*c, read(pa)?, read(pb)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(compare_bytes(pairs))
}

// ---------------------------------------------------------------------------
// bench-decode

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeReport {
    pub format: Format,
    pub tiles: Vec<(TileCoord, Stats)>,
    pub total: Stats,
    pub bytes: usize,
}

impl DecodeReport {
    pub fn render(&self) -> String {
        let mut rows = vec![vec!["tile".to_string(), "median ms".into(), "min ms".into(), "max ms".into()]];
        let row = |label: String, s: &Stats| {
            vec![label, format!("{:.3}", ms(s.median)), format!("{:.3}", ms(s.min)), format!("{:.3}", ms(s.max))]
        };
        for (c, s) in &self.tiles {
            rows.push(row(c.to_string(), s));
        }
        rows.push(row("total".into(), &self.total));
        let mut out = format!("format: {}  reps: {}\n", self.format.ext(), self.total.reps);
        out.push_str(&table(&rows));
        let key = format!("decode.{}", self.format.ext());
        metric(&mut out, &format!("{key}.median_ms"), format!("{:.4}", ms(self.total.median)));
        metric(&mut out, &format!("{key}.min_ms"), format!("{:.4}", ms(self.total.min)));
        metric(&mut out, &format!("{key}.max_ms"), format!("{:.4}", ms(self.total.max)));
        metric(&mut out, &format!("{key}.mb_per_s"), format!("{:.2}", self.bytes as f64 / 1e6 / self.total.median.as_secs_f64()));
        out
    }
}

/// Decodes one tile to its in-memory end state: vectors for MLT, the
/// logical tile for MVT.
pub fn decode_in_memory(format: Format, coord: TileCoord, bytes: &[u8]) -> Result<usize, String> {
    match format {
        Format::Mlt => decode_vector_tile(bytes, &DecodeOptions::default()).map(|t| t.len()).map_err(|e| e.to_string()),
        Format::Mvt => mvt_parse(bytes, coord).map(|t| t.tables.len()).map_err(|e| e.to_string()),
        Format::Json => Err("JSON fixtures are not a benchmark format".into()),
    }
}

/// Single-threaded decode timing over in-memory tiles.
pub fn bench_decode_bytes(format: Format, tiles: &[(TileCoord, Vec<u8>)], reps: usize) -> Result<DecodeReport, CliError> {
    if tiles.is_empty() {
        return Err(CliError::Usage("no tiles to decode".into()));
    }
    for (c, b) in tiles {
        decode_in_memory(format, *c, b).map_err(|e| CliError::Input { path: PathBuf::from(c.to_string()), message: e })?;
    }
    let per_tile = tiles
        .iter()
        .map(|(c, b)| (*c, measure(reps, || decode_in_memory(format, *c, b))))
        .collect();
    let total = measure(reps, || {
        for (c, b) in tiles {
            let _ = std::hint::black_box(decode_in_memory(format, *c, b));
        }
    });
    Ok(DecodeReport { format, tiles: per_tile, total, bytes: tiles.iter().map(|t| t.1.len()).sum() })
}

pub fn bench_decode(input: &Path, reps: usize) -> Result<DecodeReport, CliError> {
    let inputs = scan_binary(input)?;
    let formats: std::collections::BTreeSet<_> = inputs.iter().map(|t| t.1).collect();
    let format = match formats.len() {
        0 => return Err(CliError::Usage(format!("{}: no tiles found", input.display()))),
        1 => *formats.iter().next().unwrap(),
        _ => return Err(CliError::Usage(format!("{}: mixed tile formats", input.display()))),
    };
    let tiles = inputs.iter().map(|(c, _, p)| Ok((*c, read(p)?))).collect::<Result<Vec<_>, CliError>>()?;
    bench_decode_bytes(format, &tiles, reps)
}

// ---------------------------------------------------------------------------
// bench-filter

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub pairs: usize,
    pub selected: usize,
    pub vectorized: Stats,
    pub tuple_at_a_time: Stats,
}

impl FilterReport {
    pub fn speedup(&self) -> f64 {
        self.tuple_at_a_time.median.as_secs_f64() / self.vectorized.median.as_secs_f64()
    }

    pub fn render(&self) -> String {
        let row = |name: &str, s: &Stats| {
            vec![name.to_string(), format!("{:.3}", ms(s.median)), format!("{:.3}", ms(s.min)), format!("{:.3}", ms(s.max))]
        };
        let rows = vec![
            vec!["engine".to_string(), "median ms".into(), "min ms".into(), "max ms".into()],
            row("vectorized", &self.vectorized),
            row("tuple-at-a-time", &self.tuple_at_a_time),
        ];
        let mut out = format!(
            "(table, filter) pairs: {}  selected rows: {}  reps: {}\n",
            self.pairs, self.selected, self.vectorized.reps
        );
        out.push_str(&table(&rows));
        out.push_str(&format!("speedup: {:.2}\n", self.speedup()));
        metric(&mut out, "filter.pairs", self.pairs);
        metric(&mut out, "filter.selected", self.selected);
        metric(&mut out, "filter.vectorized_median_ms", format!("{:.4}", ms(self.vectorized.median)));
        metric(&mut out, "filter.tuple_median_ms", format!("{:.4}", ms(self.tuple_at_a_time.median)));
        metric(&mut out, "filter.speedup", format!("{:.3}", self.speedup()));
        out
    }
}

/// A decoded table in both representations.
pub struct FilterTarget {
    pub label: String,
    pub vectors: VectorTable,
    pub logical: FeatureTable,
}

impl FilterTarget {
    pub fn from_table(label: String, table: &FeatureTable, profile: EncodingProfile) -> Result<FilterTarget, CliError> {
        let tile = Tile { coord: TileCoord::default(), tables: vec![table.clone()] };
        let bytes = encode_tile(&tile, profile, false).map_err(|e| CliError::Usage(e.to_string()))?;
        let vectors = decode_vector_tile(&bytes, &DecodeOptions::default())
            .map_err(|e| CliError::Correctness(e.to_string()))?
            .pop()
            .expect("one table");
        Ok(FilterTarget { label, vectors, logical: table.clone() })
    }
}

/// Loads every table of an MLT tree.
pub fn load_filter_targets(input: &Path) -> Result<Vec<FilterTarget>, CliError> {
    let inputs = scan_binary(input)?;
    if inputs.is_empty() {
        return Err(CliError::Usage(format!("{}: no tiles found", input.display())));
    }
    let mut out = Vec::new();
    for (coord, format, path) in inputs {
        if format != Format::Mlt {
            return Err(CliError::Usage(format!("{}: bench-filter reads MLT tiles", path.display())));
        }
        let bytes = read(&path)?;
        let vectors = decode_vector_tile(&bytes, &DecodeOptions::default()).map_err(|e| input_err(&path, e))?;
        let logical = decode_tile(&bytes, coord).map_err(|e| input_err(&path, e))?;
        for (v, l) in vectors.into_iter().zip(logical.tables) {
            out.push(FilterTarget { label: format!("{coord}/{}", l.name), vectors: v, logical: l });
        }
    }
    Ok(out)
}

pub fn load_suite(path: Option<&Path>) -> Result<Vec<SuiteEntry>, CliError> {
    let src = match path {
        Some(p) => std::fs::read_to_string(p).map_err(io_err(p))?,
        None => DEFAULT_SUITE.to_string(),
    };
    parse_suite(&src).map_err(|e| CliError::Usage(format!("filter suite: {e}")))
}

/// Runs every suite entry whose layer matches a target (or every entry on
/// every target when `any_layer`), checks the engines agree, then times both.
pub fn bench_filter_targets(
    targets: &[FilterTarget],
    suite: &[SuiteEntry],
    reps: usize,
    any_layer: bool,
) -> Result<FilterReport, CliError> {
    let pairs: Vec<(&FilterTarget, &SuiteEntry)> = targets
        .iter()
        .flat_map(|t| suite.iter().filter(move |e| any_layer || e.layer == t.logical.name).map(move |e| (t, e)))
        .collect();
    let mut selected = 0;
    for (t, e) in &pairs {
        let fail = |err: mlt_core::filter::FilterError| CliError::Usage(format!("{} on {}: {err}", e.filter, t.label));
        let plan = compile(&e.filter, &t.vectors).map_err(fail)?;
        let fast = evaluate(&plan, &t.vectors);
        let slow = evaluate_tuple_at_a_time(&e.filter, &t.logical).map_err(fail)?;
        if fast != slow {
            return Err(CliError::Correctness(format!(
                "selection mismatch for {} on {}: vectorized {} rows, tuple-at-a-time {} rows",
                e.filter,
                t.label,
                fast.len(),
                slow.len()
            )));
        }
        selected += fast.len();
    }
    let vectorized = measure(reps, || {
        let mut n = 0;
        for (t, e) in &pairs {
            let plan = compile(&e.filter, &t.vectors).expect("checked above");
            n += evaluate(&plan, &t.vectors).len();
        }
        n
    });
    let tuple_at_a_time = measure(reps, || {
        let mut n = 0;
        for (t, e) in &pairs {
            n += evaluate_tuple_at_a_time(&e.filter, &t.logical).expect("checked above").len();
        }
        n
    });
    Ok(FilterReport { pairs: pairs.len(), selected, vectorized, tuple_at_a_time })
}
