//! Seeded random tiles, polygons and filters for integration tests.
#![allow(dead_code)]

pub mod fuzz;

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use mlt_core::filter::{CmpOp, FilterExpr, Literal, TYPE_COLUMN};
use mlt_core::model::{
    ring_signed_area2, AttributeScope, Column, ColumnDef, ColumnType, FeatureTable, Geometry, GeometryType,
    Polygon, Ring, ScalarType, Tile, TileCoord, Value, Vertex,
};

#[derive(Debug, Clone, Copy)]
pub struct TileOpts {
    pub max_tables: usize,
    pub max_rows: usize,
    pub allow_3d: bool,
    pub allow_vertex_columns: bool,
    pub nested: bool,
}

impl Default for TileOpts {
    fn default() -> Self {
        TileOpts { max_tables: 3, max_rows: 40, allow_3d: true, allow_vertex_columns: true, nested: true }
    }
}

fn vertex(x: f64, y: f64, z: Option<i32>) -> Vertex {
    match z {
        Some(z) => Vertex::new_3d(x.round() as i32, y.round() as i32, z),
        None => Vertex::new(x.round() as i32, y.round() as i32),
    }
}

/// Star-shaped ring wound as an exterior (`true`) or hole.
pub fn star_ring(rng: &mut ChaCha8Rng, c: (f64, f64), lo: f64, hi: f64, k: usize, exterior: bool, z: bool) -> Option<Ring> {
    let phase = rng.gen_range(0.0..2.0 * PI);
    let mut ring: Ring = Vec::new();
    for i in 0..k {
        let a = phase + 2.0 * PI * i as f64 / k as f64;
        let r = rng.gen_range(lo..=hi);
        let zv = z.then(|| rng.gen_range(-100..100));
        let v = vertex(c.0 + a.cos() * r, c.1 + a.sin() * r, zv);
        if ring.last().map_or(true, |l| (l.x, l.y) != (v.x, v.y)) && ring.first().map_or(true, |f| (f.x, f.y) != (v.x, v.y)) {
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

/// Simple polygon with `holes` disjoint holes strictly inside the exterior.
pub fn random_polygon(rng: &mut ChaCha8Rng, c: (f64, f64), r: f64, holes: usize, z: bool) -> Polygon {
    loop {
        let k = rng.gen_range(8..=16);
        let Some(outer) = star_ring(rng, c, 0.8 * r, r, k, true, z) else { continue };
        let mut polygon = vec![outer];
        let phase = rng.gen_range(0.0..2.0 * PI);
        for h in 0..holes {
            let a = phase + 2.0 * PI * h as f64 / holes.max(1) as f64;
            let hc = (c.0 + a.cos() * 0.45 * r, c.1 + a.sin() * 0.45 * r);
            let k = rng.gen_range(3..=6);
            match star_ring(rng, hc, 0.1 * r, 0.18 * r, k, false, z) {
                Some(hole) => polygon.push(hole),
                None => break,
            }
        }
        if polygon.len() == holes + 1 {
            return polygon;
        }
    }
}

fn line(rng: &mut ChaCha8Rng, z: bool) -> Vec<Vertex> {
    let n = rng.gen_range(2..=8);
    let mut out: Vec<Vertex> = Vec::new();
    let (mut x, mut y) = (rng.gen_range(-64.0..4160.0), rng.gen_range(-64.0..4160.0));
    while out.len() < n {
        x += rng.gen_range(-200.0..200.0);
        y += rng.gen_range(-200.0..200.0);
        out.push(vertex(x, y, z.then(|| rng.gen_range(-1000..1000))));
    }
    out
}

fn point(rng: &mut ChaCha8Rng, z: bool) -> Vertex {
    let zv = z.then(|| rng.gen_range(-1000..1000));
    vertex(rng.gen_range(-64.0..4160.0), rng.gen_range(-64.0..4160.0), zv)
}

pub fn random_geometry(rng: &mut ChaCha8Rng, ty: GeometryType, z: bool) -> Geometry {
    let poly = |rng: &mut ChaCha8Rng| {
        let c = (rng.gen_range(0.0..4096.0), rng.gen_range(0.0..4096.0));
        let r = rng.gen_range(20.0..300.0);
        let holes = if r > 60.0 { rng.gen_range(0..=2) } else { 0 };
        random_polygon(rng, c, r, holes, z)
    };
    match ty {
        GeometryType::Point => Geometry::Point(point(rng, z)),
        GeometryType::MultiPoint => Geometry::MultiPoint((0..rng.gen_range(1..=4)).map(|_| point(rng, z)).collect()),
        GeometryType::LineString => Geometry::LineString(line(rng, z)),
        GeometryType::MultiLineString => Geometry::MultiLineString((0..rng.gen_range(1..=3)).map(|_| line(rng, z)).collect()),
        GeometryType::Polygon => Geometry::Polygon(poly(rng)),
        GeometryType::MultiPolygon => Geometry::MultiPolygon((0..rng.gen_range(1..=3)).map(|_| poly(rng)).collect()),
    }
}

#[derive(Debug, Clone, Copy)]
enum Pattern {
    Const,
    Runs,
    Sorted,
    Small,
    Full,
}

const WORDS: &[&str] = &["", "a", "river", "lake", "ß-straße", "東京", "primary", "x y", "\u{1F600}"];

fn random_string(rng: &mut ChaCha8Rng, pattern: Pattern) -> String {
    match pattern {
        Pattern::Full => {
            let n = rng.gen_range(0..12);
            (0..n).map(|_| rng.gen_range('\u{20}'..='\u{2FF}')).collect()
        }
        _ => WORDS.choose(rng).unwrap().to_string(),
    }
}

struct Sampler {
    pattern: Pattern,
    run_left: usize,
    last: Option<Value>,
    counter: i64,
}

impl Sampler {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let pattern = *[Pattern::Const, Pattern::Runs, Pattern::Sorted, Pattern::Small, Pattern::Full].choose(rng).unwrap();
        Sampler { pattern, run_left: 0, last: None, counter: rng.gen_range(-50..50) }
    }

    fn fresh(&mut self, rng: &mut ChaCha8Rng, ty: ScalarType) -> Value {
        let p = self.pattern;
        if matches!(p, Pattern::Sorted) {
            self.counter += rng.gen_range(0..5);
        }
        let small = |rng: &mut ChaCha8Rng| rng.gen_range(-20i64..20);
        let n: i64 = match p {
            Pattern::Sorted => self.counter,
            Pattern::Full => 0,
            _ => small(rng),
        };
        match ty {
            ScalarType::Boolean => Value::Bool(rng.gen()),
            ScalarType::Int32 => Value::I32(if matches!(p, Pattern::Full) { rng.gen() } else { n as i32 }),
            ScalarType::UInt32 => Value::U32(if matches!(p, Pattern::Full) { rng.gen() } else { n.unsigned_abs() as u32 }),
            ScalarType::Int64 => Value::I64(if matches!(p, Pattern::Full) { rng.gen() } else { n }),
            ScalarType::UInt64 => Value::U64(if matches!(p, Pattern::Full) { rng.gen() } else { n.unsigned_abs() }),
            ScalarType::Float32 => Value::F32(if matches!(p, Pattern::Full) {
                loop {
                    let f = f32::from_bits(rng.gen());
                    if !f.is_nan() {
                        break f;
                    }
                }
            } else {
                n as f32 / 4.0
            }),
            ScalarType::Float64 => Value::F64(if matches!(p, Pattern::Full) {
                loop {
                    let f = f64::from_bits(rng.gen());
                    if !f.is_nan() {
                        break f;
                    }
                }
            } else {
                n as f64 / 8.0
            }),
            ScalarType::String => Value::String(random_string(rng, p)),
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng, ty: ScalarType) -> Value {
        match self.pattern {
            Pattern::Const | Pattern::Runs if self.last.is_some() && self.run_left > 0 => {
                self.run_left -= 1;
                self.last.clone().unwrap()
            }
            _ => {
                let v = self.fresh(rng, ty);
                self.run_left = match self.pattern {
                    Pattern::Const => usize::MAX,
                    Pattern::Runs => rng.gen_range(1..10),
                    _ => 0,
                };
                self.last = Some(v.clone());
                v
            }
        }
    }
}

pub fn random_scalar_type(rng: &mut ChaCha8Rng) -> ScalarType {
    *ScalarType::ALL.choose(rng).unwrap()
}

fn random_column(rng: &mut ChaCha8Rng, name: String, rows: usize, vertices: usize, opts: &TileOpts) -> Column {
    let nullable = rng.gen_bool(0.5);
    let null_rate = if nullable { *[0.0, 0.1, 0.5, 1.0].choose(rng).unwrap() } else { 0.0 };
    let kind = if opts.nested { rng.gen_range(0..10) } else { 0 };
    let mut sampler = Sampler::new(rng);
    let null = |rng: &mut ChaCha8Rng| null_rate > 0.0 && rng.gen_bool(null_rate);
    match kind {
        7 | 8 => {
            let t = random_scalar_type(rng);
            let values = (0..rows)
                .map(|_| {
                    if null(rng) {
                        return Value::Null;
                    }
                    let n = rng.gen_range(0..4);
                    Value::List((0..n).map(|_| sampler.next(rng, t)).collect())
                })
                .collect();
            Column::new(ColumnDef::new(name, ColumnType::List(t), nullable), values)
        }
        9 => {
            let fields: Vec<(String, ScalarType)> =
                (0..rng.gen_range(1..=3)).map(|i| (format!("f{i}"), random_scalar_type(rng))).collect();
            let mut samplers: Vec<Sampler> = fields.iter().map(|_| Sampler::new(rng)).collect();
            let values = (0..rows)
                .map(|_| {
                    if null(rng) {
                        return Value::Null;
                    }
                    Value::Struct(
                        fields
                            .iter()
                            .zip(samplers.iter_mut())
                            .map(|((_, t), s)| if null(rng) { Value::Null } else { s.next(rng, *t) })
                            .collect(),
                    )
                })
                .collect();
            Column::new(ColumnDef::new(name, ColumnType::Struct(fields), nullable), values)
        }
        _ => {
            let t = random_scalar_type(rng);
            let vertex_scope = opts.allow_vertex_columns && vertices > 0 && rng.gen_bool(0.1);
            let n = if vertex_scope { vertices } else { rows };
            let values = (0..n).map(|_| if null(rng) { Value::Null } else { sampler.next(rng, t) }).collect();
            let mut def = ColumnDef::scalar(name, t, nullable);
            if vertex_scope {
                def.scope = AttributeScope::Vertex;
            }
            Column::new(def, values)
        }
    }
}

pub fn random_table(rng: &mut ChaCha8Rng, name: String, opts: &TileOpts) -> FeatureTable {
    let rows = rng.gen_range(0..=opts.max_rows);
    let mut t = FeatureTable::new(name);
    t.extent = 1 << rng.gen_range(8..=14);
    let three_d = opts.allow_3d && rng.gen_bool(0.2);
    t.dimensions = if three_d { 3 } else { 2 };
    // single-type, few-type, or fully mixed tables
    let types: Vec<GeometryType> = match rng.gen_range(0..3) {
        0 => vec![*GeometryType::ALL.choose(rng).unwrap()],
        1 => GeometryType::ALL.choose_multiple(rng, 2).copied().collect(),
        _ => GeometryType::ALL.to_vec(),
    };
    let sorted_ids = rng.gen_bool(0.5);
    let mut id = rng.gen_range(0..1000u64);
    let mut used = std::collections::HashSet::new();
    for _ in 0..rows {
        if sorted_ids {
            id += rng.gen_range(1..10);
        } else {
            id = loop {
                let c = rng.gen::<u64>() >> rng.gen_range(0..64);
                if used.insert(c) {
                    break c;
                }
            };
        }
        t.ids.push(id);
        let ty = *types.choose(rng).unwrap();
        t.geometries.push(random_geometry(rng, ty, three_d));
    }
    t.synthetic_ids = rng.gen_bool(0.1);
    let vertices = t.vertex_count();
    for c in 0..rng.gen_range(0..=5) {
        t.columns.push(random_column(rng, format!("c{c}"), rows, vertices, opts));
    }
    t
}

pub fn random_tile(rng: &mut ChaCha8Rng, opts: &TileOpts) -> Tile {
    let z = rng.gen_range(0..=14u8);
    let coord = TileCoord::new(z, rng.gen_range(0..1u32 << z), rng.gen_range(0..1u32 << z)).unwrap();
    let mut tile = Tile::new(coord);
    for i in 0..rng.gen_range(0..=opts.max_tables) {
        tile.tables.push(random_table(rng, format!("layer{i}"), opts));
    }
    tile
}

/// Inputs of the frozen bit-packing golden files, by file name.
pub fn bitpack_golden_inputs() -> Vec<(&'static str, Vec<u64>)> {
    vec![
        ("bitpack_empty.bin", vec![]),
        ("bitpack_constant.bin", vec![7; 130]),
        ("bitpack_ramp.bin", (0..300).collect()),
        ("bitpack_exceptions.bin", (0..256).map(|i| if i % 37 == 0 { 1 << 40 } else { i % 5 }).collect()),
        ("bitpack_wide.bin", (0..129).map(|i: u64| i.wrapping_mul(0x9E37_79B9_7F4A_7C15)).collect()),
    ]
}

// ---------------------------------------------------------------------------
// filters

fn literal_for(rng: &mut ChaCha8Rng, ty: ScalarType, sample: Option<&Value>) -> Literal {
    if let Some(v) = sample.filter(|v| !v.is_null()) {
        if rng.gen_bool(0.7) {
            return match v {
                Value::Bool(b) => Literal::Bool(*b),
                Value::String(s) => Literal::String(s.clone()),
                v => Literal::Number(v.as_f64().unwrap() + *[0.0, 0.0, 0.5, -1.0].choose(rng).unwrap()),
            };
        }
    }
    match ty {
        ScalarType::Boolean => Literal::Bool(rng.gen()),
        ScalarType::String => Literal::String(WORDS.choose(rng).unwrap().to_string()),
        _ => Literal::Number(rng.gen_range(-30.0..30.0f64).round()),
    }
}

/// Filterable columns of a table: `(name, scalar type, sample values)`.
fn filter_targets(table: &FeatureTable) -> Vec<(String, Option<ScalarType>, Vec<Value>)> {
    let mut out = Vec::new();
    for c in &table.columns {
        if c.def.scope == AttributeScope::Vertex {
            continue;
        }
        match &c.def.ty {
            ColumnType::Scalar(t) => out.push((c.def.name.clone(), Some(*t), c.values.clone())),
            ColumnType::List(_) => out.push((c.def.name.clone(), None, Vec::new())),
            ColumnType::Struct(fields) => {
                out.push((c.def.name.clone(), None, Vec::new()));
                for (k, (f, t)) in fields.iter().enumerate() {
                    let vals = c
                        .values
                        .iter()
                        .map(|v| match v {
                            Value::Struct(fs) => fs[k].clone(),
                            _ => Value::Null,
                        })
                        .collect();
                    out.push((format!("{}.{f}", c.def.name), Some(*t), vals));
                }
            }
        }
    }
    out
}

/// A type-correct random filter over `table`'s columns (plus `$type` and
/// absent columns).
pub fn random_filter(rng: &mut ChaCha8Rng, table: &FeatureTable, depth: usize) -> FilterExpr {
    let targets = filter_targets(table);
    random_filter_in(rng, table, &targets, depth)
}

fn random_filter_in(
    rng: &mut ChaCha8Rng,
    table: &FeatureTable,
    targets: &[(String, Option<ScalarType>, Vec<Value>)],
    depth: usize,
) -> FilterExpr {
    let choice = rng.gen_range(0..if depth == 0 { 6 } else { 9 });
    match choice {
        0 => FilterExpr::Const(rng.gen()),
        1 => {
            let names: Vec<String> = ["Point", "LineString", "Polygon", "MultiPoint"].iter().map(|s| s.to_string()).collect();
            let k = rng.gen_range(1..=2);
            let values: Vec<Literal> = names.choose_multiple(rng, k).cloned().map(Literal::String).collect();
            if rng.gen_bool(0.5) {
                FilterExpr::Compare { column: TYPE_COLUMN.into(), op: CmpOp::Eq, literal: values[0].clone() }
            } else {
                FilterExpr::In { column: TYPE_COLUMN.into(), values, negated: rng.gen() }
            }
        }
        2 => {
            let column = match targets.choose(rng) {
                Some(t) if rng.gen_bool(0.9) => t.0.clone(),
                _ => "missing".into(),
            };
            FilterExpr::Has { column, negated: rng.gen() }
        }
        3..=5 => {
            let scalars: Vec<_> = targets.iter().filter(|t| t.1.is_some()).collect();
            let Some((column, ty, values)) = scalars.choose(rng).map(|t| (t.0.clone(), t.1.unwrap(), &t.2)) else {
                return FilterExpr::Has { column: "missing".into(), negated: rng.gen() };
            };
            let sample = |rng: &mut ChaCha8Rng| values.choose(rng).cloned();
            if choice == 5 {
                let n = rng.gen_range(0..=4);
                let values = (0..n).map(|_| { let s = sample(rng); literal_for(rng, ty, s.as_ref()) }).collect();
                FilterExpr::In { column, values, negated: rng.gen() }
            } else {
                let op = *[CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge].choose(rng).unwrap();
                let s = sample(rng);
                FilterExpr::Compare { column, op, literal: literal_for(rng, ty, s.as_ref()) }
            }
        }
        _ => {
            let n = rng.gen_range(0..=3);
            let children = (0..n).map(|_| random_filter_in(rng, table, targets, depth - 1)).collect();
            match choice {
                6 => FilterExpr::All(children),
                7 => FilterExpr::Any(children),
                _ => FilterExpr::None(children),
            }
        }
    }
}
