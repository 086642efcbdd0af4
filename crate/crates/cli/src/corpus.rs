//! Deterministic synthetic tile corpus.
//!
//! One tile per zoom level along the zoom path into a fixed center. Layers
//! mimic an OpenMapTiles-like basemap: skewed class vocabularies, sparse
//! optional attributes, sorted ids with gaps, and vertices that cluster
//! around a handful of centers.

use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mlt_core::model::{
    ring_signed_area2, Column, ColumnDef, ColumnType, FeatureTable, Geometry, Polygon, Ring, ScalarType, Tile,
    TileCoord, Value, Vertex, DEFAULT_EXTENT,
};

/// Center of the zoom path (lon, lat).
pub const CENTER: (f64, f64) = (11.5755, 48.1374);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Point,
    Line,
    Polygon,
    /// Rotated rectangles and L-shapes.
    Footprint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub shape: Shape,
    pub min_zoom: u8,
    /// Features at `min_zoom`, and added per zoom level above it.
    pub base: f64,
    pub per_zoom: f64,
    /// Share of features that are multi geometries.
    pub multi_rate: f64,
    /// Polygon radius range in tile units.
    pub size: (f64, f64),
    pub max_holes: usize,
    pub columns: Vec<(&'static str, Gen)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub min_zoom: u8,
    pub max_zoom: u8,
    /// 0 places vertices uniformly, 1 places every anchor inside a cluster.
    pub clustering: f64,
    /// Multiplier on every layer's feature count.
    pub density: f64,
    pub layers: Vec<LayerSpec>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { seed: 1, min_zoom: 0, max_zoom: 14, clustering: 0.8, density: 1.0, layers: default_layers() }
    }
}

/// Attribute value generators.
#[derive(Debug, Clone, PartialEq)]
pub enum Gen {
    /// Zipf-distributed choice from a fixed vocabulary.
    Class { vocab: &'static [&'static str], null_rate: f64 },
    /// Zipf-distributed choice from the generated place-name pool.
    Name { null_rate: f64 },
    Int { ty: ScalarType, min: i64, max: i64, null_rate: f64 },
    /// Heavy-tailed float, rounded to one decimal.
    Float { ty: ScalarType, scale: f64, null_rate: f64 },
    Bool { null_rate: f64 },
    /// `{en, de}` name translations; either field may be absent.
    Names { null_rate: f64 },
    /// Short list of amenity tags.
    Tags { null_rate: f64 },
    HouseNumber,
}

impl Gen {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Gen::Class { .. } | Gen::Name { .. } | Gen::HouseNumber => ColumnType::Scalar(ScalarType::String),
            Gen::Int { ty, .. } | Gen::Float { ty, .. } => ColumnType::Scalar(*ty),
            Gen::Bool { .. } => ColumnType::Scalar(ScalarType::Boolean),
            Gen::Names { .. } => ColumnType::Struct(vec![
                ("en".into(), ScalarType::String),
                ("de".into(), ScalarType::String),
            ]),
            Gen::Tags { .. } => ColumnType::List(ScalarType::String),
        }
    }

    fn null_rate(&self) -> f64 {
        match self {
            Gen::Class { null_rate, .. }
            | Gen::Name { null_rate }
            | Gen::Int { null_rate, .. }
            | Gen::Float { null_rate, .. }
            | Gen::Bool { null_rate }
            | Gen::Names { null_rate }
            | Gen::Tags { null_rate } => *null_rate,
            Gen::HouseNumber => 0.0,
        }
    }
}

const WATER: &[&str] = &["lake", "river", "pond", "ocean", "reservoir", "basin", "swimming_pool", "lagoon"];
const LANDUSE: &[&str] = &[
    "residential", "farmland", "forest", "grass", "meadow", "industrial", "commercial", "cemetery", "park",
    "allotments", "quarry", "retail",
];
const ROAD: &[&str] = &[
    "minor", "service", "path", "track", "tertiary", "secondary", "primary", "rail", "trunk", "motorway", "transit",
];
const SUBCLASS: &[&str] = &["footway", "cycleway", "steps", "driveway", "parking_aisle", "tram", "subway", "platform"];
const BRUNNEL: &[&str] = &["bridge", "tunnel", "ford"];
const SURFACE: &[&str] = &["paved", "unpaved"];
const POI: &[&str] = &[
    "shop", "restaurant", "cafe", "bus", "school", "parking", "bar", "bank", "pharmacy", "place_of_worship",
    "hospital", "library", "museum", "fuel", "hotel", "attraction",
];
const POI_SUBCLASS: &[&str] = &[
    "supermarket", "cafe", "restaurant", "bus_stop", "bar", "pub", "bakery", "kindergarten", "clothes", "atm",
    "fast_food", "hairdresser", "doctors", "dentist",
];
const PLACE: &[&str] = &["neighbourhood", "suburb", "village", "hamlet", "town", "city", "isolated_dwelling"];

pub fn default_layers() -> Vec<LayerSpec> {
    let layer = |name, shape, min_zoom, base, per_zoom, multi_rate, size, max_holes, columns| LayerSpec {
        name,
        shape,
        min_zoom,
        base,
        per_zoom,
        multi_rate,
        size,
        max_holes,
        columns,
    };
    vec![
        layer("water", Shape::Polygon, 0, 8.0, 4.0, 0.15, (40.0, 500.0), 3, vec![
            ("class", Gen::Class { vocab: WATER, null_rate: 0.0 }),
            ("intermittent", Gen::Bool { null_rate: 0.7 }),
        ]),
        layer("landuse", Shape::Polygon, 4, 10.0, 8.0, 0.05, (60.0, 600.0), 2, vec![
            ("class", Gen::Class { vocab: LANDUSE, null_rate: 0.0 }),
        ]),
        layer("transportation", Shape::Line, 4, 30.0, 30.0, 0.1, (0.0, 0.0), 0, vec![
            ("class", Gen::Class { vocab: ROAD, null_rate: 0.0 }),
            ("subclass", Gen::Class { vocab: SUBCLASS, null_rate: 0.75 }),
            ("oneway", Gen::Int { ty: ScalarType::Int32, min: -1, max: 1, null_rate: 0.6 }),
            ("layer", Gen::Int { ty: ScalarType::Int32, min: -2, max: 3, null_rate: 0.85 }),
            ("brunnel", Gen::Class { vocab: BRUNNEL, null_rate: 0.85 }),
            ("ramp", Gen::Bool { null_rate: 0.9 }),
            ("surface", Gen::Class { vocab: SURFACE, null_rate: 0.5 }),
        ]),
        layer("transportation_name", Shape::Line, 8, 20.0, 12.0, 0.05, (0.0, 0.0), 0, vec![
            ("name", Gen::Name { null_rate: 0.05 }),
            ("ref", Gen::Class { vocab: &["A8", "A9", "A99", "B2", "B11", "B13", "B304", "M5"], null_rate: 0.8 }),
            ("class", Gen::Class { vocab: ROAD, null_rate: 0.0 }),
        ]),
        layer("building", Shape::Footprint, 12, 300.0, 300.0, 0.0, (6.0, 30.0), 0, vec![
            ("render_height", Gen::Float { ty: ScalarType::Float32, scale: 12.0, null_rate: 0.0 }),
            ("render_min_height", Gen::Float { ty: ScalarType::Float32, scale: 0.4, null_rate: 0.0 }),
        ]),
        layer("poi", Shape::Point, 10, 40.0, 50.0, 0.0, (0.0, 0.0), 0, vec![
            ("class", Gen::Class { vocab: POI, null_rate: 0.0 }),
            ("subclass", Gen::Class { vocab: POI_SUBCLASS, null_rate: 0.1 }),
            ("name", Gen::Name { null_rate: 0.3 }),
            ("names", Gen::Names { null_rate: 0.5 }),
            ("rank", Gen::Int { ty: ScalarType::UInt32, min: 1, max: 60, null_rate: 0.0 }),
            ("agg_stop", Gen::Int { ty: ScalarType::Int32, min: 1, max: 1, null_rate: 0.95 }),
            ("tags", Gen::Tags { null_rate: 0.6 }),
        ]),
        layer("place", Shape::Point, 0, 4.0, 4.0, 0.05, (0.0, 0.0), 0, vec![
            ("class", Gen::Class { vocab: PLACE, null_rate: 0.0 }),
            ("name", Gen::Name { null_rate: 0.02 }),
            ("names", Gen::Names { null_rate: 0.3 }),
            ("rank", Gen::Int { ty: ScalarType::UInt32, min: 1, max: 20, null_rate: 0.0 }),
            ("capital", Gen::Int { ty: ScalarType::Int32, min: 2, max: 6, null_rate: 0.9 }),
            ("population", Gen::Int { ty: ScalarType::Int64, min: 50, max: 1_500_000, null_rate: 0.4 }),
        ]),
        layer("housenumber", Shape::Point, 13, 200.0, 200.0, 0.0, (0.0, 0.0), 0, vec![
            ("housenumber", Gen::HouseNumber),
        ]),
    ]
}

/// Tile containing `CENTER` at zoom `z`.
pub fn path_coord(z: u8) -> TileCoord {
    let n = (1u64 << z) as f64;
    let (lon, lat) = CENTER;
    let x = ((lon + 180.0) / 360.0 * n).floor();
    let lat = lat.to_radians();
    let y = ((1.0 - (lat.tan() + 1.0 / lat.cos()).ln() / PI) / 2.0 * n).floor();
    TileCoord::new(z, x as u32, y as u32).expect("center lies inside the tile grid")
}

struct Zipf(WeightedIndex<f64>);

impl Zipf {
    fn new(n: usize, skew: f64) -> Self {
        Zipf(WeightedIndex::new((1..=n).map(|k| 1.0 / (k as f64).powf(skew))).expect("non-empty vocabulary"))
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        self.0.sample(rng)
    }
}

const SYLLABLES: &[&str] = &[
    "an", "ber", "burg", "dorf", "el", "en", "feld", "gar", "hau", "heim", "in", "ka", "lin", "mar", "mun", "ne",
    "ober", "ring", "sen", "stein", "tal", "ten", "wald", "weg", "wies",
];
const SUFFIXES: &[&str] = &["straße", "weg", "platz", "allee", "gasse", "ring", ""];

fn name_pool(seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e61_6d65);
    (0..2000)
        .map(|_| {
            let mut s = String::new();
            for _ in 0..rng.gen_range(2..=3) {
                s.push_str(SYLLABLES[rng.gen_range(0..SYLLABLES.len())]);
            }
            let mut chars = s.chars();
            let first = chars.next().unwrap().to_uppercase().collect::<String>();
            format!("{first}{}{}", chars.as_str(), SUFFIXES[rng.gen_range(0..SUFFIXES.len())])
        })
        .collect()
}

/// Shared generator state for one tile or table.
pub struct Generator {
    rng: ChaCha8Rng,
    names: Vec<String>,
    name_zipf: Zipf,
    centers: Vec<(f64, f64)>,
    clustering: f64,
    extent: f64,
}

impl Generator {
    pub fn new(seed: u64, clustering: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extent = DEFAULT_EXTENT as f64;
        let centers = (0..8).map(|_| (rng.gen_range(0.1..0.9) * extent, rng.gen_range(0.1..0.9) * extent)).collect();
        Generator { rng, names: name_pool(seed), name_zipf: Zipf::new(2000, 1.0), centers, clustering, extent }
    }

    fn gaussian(&mut self) -> f64 {
        // Box-Muller; one sample is enough here
        let u: f64 = self.rng.gen_range(f64::EPSILON..1.0);
        let v: f64 = self.rng.gen();
        (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
    }

    fn anchor(&mut self) -> (f64, f64) {
        if self.rng.gen_bool(self.clustering.clamp(0.0, 1.0)) {
            let (cx, cy) = self.centers[self.rng.gen_range(0..self.centers.len())];
            let sigma = self.extent * 0.04;
            let x = cx + self.gaussian() * sigma;
            let y = cy + self.gaussian() * sigma;
            (x.clamp(0.0, self.extent), y.clamp(0.0, self.extent))
        } else {
            (self.rng.gen_range(0.0..self.extent), self.rng.gen_range(0.0..self.extent))
        }
    }

    fn vertex(x: f64, y: f64) -> Vertex {
        Vertex::new(x.round() as i32, y.round() as i32)
    }

    fn point(&mut self) -> Vertex {
        let (x, y) = self.anchor();
        Self::vertex(x, y)
    }

    fn line(&mut self) -> Vec<Vertex> {
        let (mut x, mut y) = self.anchor();
        let n = self.rng.gen_range(2..=12);
        let mut heading = self.rng.gen_range(0.0..2.0 * PI);
        let step = self.rng.gen_range(8.0..120.0);
        let mut out = vec![Self::vertex(x, y)];
        for _ in 0..4 * n {
            if out.len() == n {
                break;
            }
            heading += self.gaussian() * 0.35;
            x = (x + heading.cos() * step).clamp(-64.0, self.extent + 64.0);
            y = (y + heading.sin() * step).clamp(-64.0, self.extent + 64.0);
            let v = Self::vertex(x, y);
            if *out.last().unwrap() != v {
                out.push(v);
            }
        }
        if out.len() < 2 {
            out.push(Vertex::new(out[0].x + 1, out[0].y));
        }
        out
    }

    /// Star-shaped ring around `c` with radii in `[lo, hi]`, wound per `exterior`.
    fn ring(&mut self, c: (f64, f64), lo: f64, hi: f64, exterior: bool) -> Option<Ring> {
        let k = if hi > 30.0 { self.rng.gen_range(8..=24) } else { self.rng.gen_range(4..=8) };
        let phase = self.rng.gen_range(0.0..2.0 * PI);
        let mut ring: Ring = Vec::with_capacity(k);
        for i in 0..k {
            let a = phase + 2.0 * PI * i as f64 / k as f64;
            let r = self.rng.gen_range(lo..=hi);
            let v = Self::vertex(c.0 + a.cos() * r, c.1 + a.sin() * r);
            if ring.last() != Some(&v) && ring.first() != Some(&v) {
                ring.push(v);
            }
        }
        let area = ring_signed_area2(&ring).ok()?;
        if area == 0 {
            return None;
        }
        if (area > 0) != exterior {
            ring.reverse();
        }
        Some(ring)
    }

    fn polygon(&mut self, c: (f64, f64), size: (f64, f64), max_holes: usize) -> Polygon {
        loop {
            let r = self.rng.gen_range(size.0..=size.1);
            let Some(outer) = self.ring(c, 0.75 * r, r, true) else { continue };
            let mut polygon = vec![outer];
            let holes = if r >= 100.0 && max_holes > 0 { self.rng.gen_range(0..=max_holes) } else { 0 };
            let phase = self.rng.gen_range(0.0..2.0 * PI);
            for h in 0..holes {
                let a = phase + 2.0 * PI * h as f64 / holes as f64;
                let hc = (c.0 + a.cos() * 0.45 * r, c.1 + a.sin() * 0.45 * r);
                if let Some(hole) = self.ring(hc, 0.08 * r, 0.15 * r, false) {
                    polygon.push(hole);
                }
            }
            return polygon;
        }
    }

    fn footprint(&mut self, size: (f64, f64)) -> Polygon {
        loop {
            let c = self.anchor();
            let w = self.rng.gen_range(size.0..=size.1);
            let h = self.rng.gen_range(size.0..=size.1);
            let template: Vec<(f64, f64)> = if self.rng.gen_bool(0.3) {
                let (w1, h1) = (w * self.rng.gen_range(0.3..0.7), h * self.rng.gen_range(0.3..0.7));
                vec![(0.0, 0.0), (w, 0.0), (w, h1), (w1, h1), (w1, h), (0.0, h)]
            } else {
                vec![(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
            };
            let theta = self.rng.gen_range(0.0..PI);
            let (sin, cos) = theta.sin_cos();
            let mut ring: Ring = Vec::with_capacity(template.len());
            for (x, y) in template {
                let (x, y) = (x - w / 2.0, y - h / 2.0);
                let v = Self::vertex(c.0 + x * cos - y * sin, c.1 + x * sin + y * cos);
                if ring.last() != Some(&v) && ring.first() != Some(&v) {
                    ring.push(v);
                }
            }
            match ring_signed_area2(&ring) {
                Ok(a) if a > 0 => return vec![ring],
                Ok(a) if a < 0 => {
                    ring.reverse();
                    return vec![ring];
                }
                _ => continue,
            }
        }
    }

    pub fn geometry(&mut self, layer: &LayerSpec) -> Geometry {
        let multi = layer.multi_rate > 0.0 && self.rng.gen_bool(layer.multi_rate);
        match layer.shape {
            Shape::Point if multi => Geometry::MultiPoint((0..self.rng.gen_range(2..=4)).map(|_| self.point()).collect()),
            Shape::Point => Geometry::Point(self.point()),
            Shape::Line if multi => Geometry::MultiLineString((0..self.rng.gen_range(2..=3)).map(|_| self.line()).collect()),
            Shape::Line => Geometry::LineString(self.line()),
            Shape::Footprint => Geometry::Polygon(self.footprint(layer.size)),
            Shape::Polygon => {
                let c = self.anchor();
                if multi {
                    let r = layer.size.1;
                    let parts = self.rng.gen_range(2..=3);
                    let polygons = (0..parts)
                        .map(|i| {
                            let c = (c.0 + 2.5 * r * i as f64, c.1);
                            self.polygon(c, (layer.size.0, r), layer.max_holes)
                        })
                        .collect();
                    Geometry::MultiPolygon(polygons)
                } else {
                    Geometry::Polygon(self.polygon(c, layer.size, layer.max_holes))
                }
            }
        }
    }

    fn name(&mut self) -> String {
        let i = self.name_zipf.sample(&mut self.rng);
        self.names[i].clone()
    }

    pub fn value(&mut self, gen: &Gen) -> Value {
        if gen.null_rate() > 0.0 && self.rng.gen_bool(gen.null_rate()) {
            return Value::Null;
        }
        match gen {
            Gen::Class { vocab, .. } => {
                let zipf = Zipf::new(vocab.len(), 1.3);
                Value::String(vocab[zipf.sample(&mut self.rng)].to_string())
            }
            Gen::Name { .. } => Value::String(self.name()),
            Gen::Int { ty, min, max, .. } => {
                // skewed toward the low end
                let u: f64 = self.rng.gen();
                let v = *min + ((u * u * u) * (max - min + 1) as f64).floor() as i64;
                let v = v.min(*max);
                match ty {
                    ScalarType::Int32 => Value::I32(v as i32),
                    ScalarType::UInt32 => Value::U32(v as u32),
                    ScalarType::UInt64 => Value::U64(v as u64),
                    _ => Value::I64(v),
                }
            }
            Gen::Float { ty, scale, .. } => {
                let v = (-self.rng.gen_range(f64::EPSILON..1.0f64).ln() * scale * 10.0).round() / 10.0;
                match ty {
                    ScalarType::Float32 => Value::F32(v as f32),
                    _ => Value::F64(v),
                }
            }
            Gen::Bool { .. } => Value::Bool(self.rng.gen_bool(0.3)),
            Gen::Names { .. } => {
                let en = if self.rng.gen_bool(0.7) { Value::String(self.name()) } else { Value::Null };
                let de = if self.rng.gen_bool(0.5) { Value::String(self.name()) } else { Value::Null };
                Value::Struct(vec![en, de])
            }
            Gen::Tags { .. } => {
                const TAGS: &[&str] = &["wheelchair", "wifi", "outdoor_seating", "vegan", "takeaway", "toilets"];
                let n = self.rng.gen_range(0..=3);
                Value::List((0..n).map(|_| Value::String(TAGS[self.rng.gen_range(0..TAGS.len())].into())).collect())
            }
            Gen::HouseNumber => {
                let u: f64 = self.rng.gen();
                let n = 1 + (u * u * 240.0) as u32;
                let suffix = if self.rng.gen_bool(0.08) { "a" } else { "" };
                Value::String(format!("{n}{suffix}"))
            }
        }
    }

    /// A table of `rows` features drawn from `layer`, with sorted gapped ids.
    pub fn table(&mut self, layer: &LayerSpec, rows: usize) -> FeatureTable {
        let mut table = FeatureTable::new(layer.name);
        let mut id = self.rng.gen_range(1..1_000_000u64);
        for _ in 0..rows {
            id += self.rng.gen_range(1..=40);
            table.ids.push(id);
            table.geometries.push(self.geometry(layer));
        }
        for (name, gen) in &layer.columns {
            let values = (0..rows).map(|_| self.value(gen)).collect();
            let def = ColumnDef::new(*name, gen.column_type(), gen.null_rate() > 0.0);
            table.columns.push(Column::new(def, values));
        }
        table
    }
}

fn feature_count(layer: &LayerSpec, z: u8, density: f64, rng: &mut ChaCha8Rng) -> usize {
    if z < layer.min_zoom {
        return 0;
    }
    let mean = (layer.base + layer.per_zoom * (z - layer.min_zoom) as f64) * density;
    (mean * rng.gen_range(0.7..1.3)).round().max(0.0) as usize
}

/// The corpus tile at zoom `z`; a function of `(spec, z)` only.
pub fn generate_tile(spec: &CorpusSpec, z: u8) -> Tile {
    let seed = spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ z as u64;
    let mut gen = Generator::new(seed, spec.clustering);
    let mut counts = ChaCha8Rng::seed_from_u64(seed ^ 0xc0u64);
    let mut tile = Tile::new(path_coord(z));
    for layer in &spec.layers {
        let rows = feature_count(layer, z, spec.density, &mut counts);
        if z >= layer.min_zoom {
            tile.tables.push(gen.table(layer, rows));
        }
    }
    tile
}

pub fn generate_corpus(spec: &CorpusSpec) -> Vec<Tile> {
    (spec.min_zoom..=spec.max_zoom).map(|z| generate_tile(spec, z)).collect()
}

/// One mixed-geometry table carrying every attribute column of every layer,
/// so each filter of the suite applies to it.
pub fn bench_table(rows: usize, seed: u64) -> FeatureTable {
    let layers = default_layers();
    let mut gen = Generator::new(seed, 0.8);
    let mut columns: Vec<(&'static str, Gen)> = Vec::new();
    for layer in &layers {
        for (name, g) in &layer.columns {
            if !columns.iter().any(|(n, _)| n == name) {
                columns.push((name, g.clone()));
            }
        }
    }
    let shapes = [&layers[0], &layers[2], &layers[5]];
    let mut table = FeatureTable::new("bench");
    let mut id = 0;
    for i in 0..rows {
        id += gen.rng.gen_range(1..=40);
        table.ids.push(id);
        table.geometries.push(gen.geometry(shapes[i % shapes.len()]));
    }
    for (name, g) in &columns {
        let values = (0..rows).map(|_| gen.value(g)).collect();
        table.columns.push(Column::new(ColumnDef::new(*name, g.column_type(), g.null_rate() > 0.0), values));
    }
    table
}
