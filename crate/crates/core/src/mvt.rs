//! Mapbox Vector Tile (2.1) codec, used as the comparison baseline.
//!
//! Writing flattens nested attributes to dotted keys (`tags.0`, `names.en`)
//! and drops vertex-scoped columns. Parsing maps each layer to a table whose
//! columns are the layer's keys, all nullable:
//!
//! - `int64`/`sint64` values become `Int64`, `uint64` becomes `UInt64`,
//!   `float` and `double` keep their width;
//! - a key holding both signed and unsigned integers becomes `Int64` when
//!   every value fits, otherwise `Float64`; any other numeric mix becomes
//!   `Float64`; mixes with strings or booleans become `String`;
//! - single-part multi geometries read back as their single-part type;
//! - missing or duplicate feature ids are replaced by row numbers and the
//!   table is flagged as having synthetic ids; an empty layer never is.
//!
//! [`normalize`] applies the same mapping to a logical tile, so
//! `mvt_parse(mvt_write(t)) == normalize(t)`.

use std::collections::HashMap;

use thiserror::Error;

use crate::encodings::{unzigzag, varint_put, zigzag, EncodingError, Reader};
use crate::model::{
    ring_signed_area2, AttributeScope, Column, ColumnDef, ColumnType, FeatureTable, Geometry, Polygon,
    ScalarType, Tile, TileCoord, Value, Vertex, DEFAULT_EXTENT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MvtError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("table {0}: MVT geometry is two-dimensional")]
    Unsupported3d(String),
    #[error("table {table}: flattened key {key} occurs twice")]
    KeyCollision { table: String, key: String },
}

fn parse_err<T>(offset: usize, message: impl Into<String>) -> Result<T, MvtError> {
    Err(MvtError::Parse { offset, message: message.into() })
}

const GEOM_POINT: u64 = 1;
const GEOM_LINESTRING: u64 = 2;
const GEOM_POLYGON: u64 = 3;

const CMD_MOVE_TO: u32 = 1;
const CMD_LINE_TO: u32 = 2;
const CMD_CLOSE_PATH: u32 = 7;

fn command(id: u32, count: u32) -> u32 {
    (id & 0x7) | (count << 3)
}

// ---------------------------------------------------------------------------
// writing

fn put_key(field: u32, wire: u32, out: &mut Vec<u8>) {
    varint_put(((field << 3) | wire) as u64, out);
}

fn put_bytes(field: u32, bytes: &[u8], out: &mut Vec<u8>) {
    put_key(field, 2, out);
    varint_put(bytes.len() as u64, out);
    out.extend_from_slice(bytes);
}

fn put_varint(field: u32, v: u64, out: &mut Vec<u8>) {
    put_key(field, 0, out);
    varint_put(v, out);
}

fn put_packed(field: u32, values: &[u32], out: &mut Vec<u8>) {
    let mut buf = Vec::with_capacity(values.len() * 2);
    for &v in values {
        varint_put(v as u64, &mut buf);
    }
    put_bytes(field, &buf, out);
}

/// Hashable identity of a tag value for the layer's value table.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum ValueKey {
    String(String),
    Float(u32),
    Double(u64),
    Int(i64),
    UInt(u64),
    Bool(bool),
}

fn value_key(v: &Value) -> Option<ValueKey> {
    Some(match v {
        Value::Null | Value::List(_) | Value::Struct(_) => return None,
        Value::Bool(b) => ValueKey::Bool(*b),
        Value::I32(x) => ValueKey::Int(*x as i64),
        Value::I64(x) => ValueKey::Int(*x),
        Value::U32(x) => ValueKey::UInt(*x as u64),
        Value::U64(x) => ValueKey::UInt(*x),
        Value::F32(x) => ValueKey::Float(x.to_bits()),
        Value::F64(x) => ValueKey::Double(x.to_bits()),
        Value::String(s) => ValueKey::String(s.clone()),
    })
}

fn write_value(v: &ValueKey, out: &mut Vec<u8>) {
    let mut msg = Vec::new();
    match v {
        ValueKey::String(s) => put_bytes(1, s.as_bytes(), &mut msg),
        ValueKey::Float(bits) => {
            put_key(2, 5, &mut msg);
            msg.extend_from_slice(&bits.to_le_bytes());
        }
        ValueKey::Double(bits) => {
            put_key(3, 1, &mut msg);
            msg.extend_from_slice(&bits.to_le_bytes());
        }
        ValueKey::Int(x) if *x >= 0 => put_varint(4, *x as u64, &mut msg),
        ValueKey::Int(x) => put_varint(6, zigzag(*x), &mut msg),
        ValueKey::UInt(x) => put_varint(5, *x, &mut msg),
        ValueKey::Bool(b) => put_varint(7, *b as u64, &mut msg),
    }
    put_bytes(4, &msg, out);
}

/// Attribute columns as MVT sees them: flattened, feature-scoped, and
/// without all-null columns.
fn flatten_columns(table: &FeatureTable) -> Vec<(String, Vec<Value>)> {
    let rows = table.len();
    let mut out = Vec::new();
    for col in &table.columns {
        if col.def.scope == AttributeScope::Vertex {
            continue;
        }
        match &col.def.ty {
            ColumnType::Scalar(_) => out.push((col.def.name.clone(), col.values.clone())),
            ColumnType::List(_) => {
                let width = col.values.iter().map(|v| if let Value::List(l) = v { l.len() } else { 0 }).max().unwrap_or(0);
                for i in 0..width {
                    let values = col
                        .values
                        .iter()
                        .map(|v| match v {
                            Value::List(l) => l.get(i).cloned().unwrap_or(Value::Null),
                            _ => Value::Null,
                        })
                        .collect();
                    out.push((format!("{}.{i}", col.def.name), values));
                }
            }
            ColumnType::Struct(fields) => {
                for (k, (field, _)) in fields.iter().enumerate() {
                    let values = col
                        .values
                        .iter()
                        .map(|v| match v {
                            Value::Struct(f) => f[k].clone(),
                            _ => Value::Null,
                        })
                        .collect();
                    out.push((format!("{}.{field}", col.def.name), values));
                }
            }
        }
    }
    out.retain(|(_, values)| values.len() == rows && values.iter().any(|v| !v.is_null()));
    out
}

fn encode_geometry(geom: &Geometry, out: &mut Vec<u32>) -> u64 {
    let mut cursor = (0i64, 0i64);
    let mut param = |v: &Vertex, out: &mut Vec<u32>| {
        let (dx, dy) = (v.x as i64 - cursor.0, v.y as i64 - cursor.1);
        cursor = (v.x as i64, v.y as i64);
        out.push(zigzag(dx) as u32);
        out.push(zigzag(dy) as u32);
    };
    let mut line = |vs: &[Vertex], close: bool, out: &mut Vec<u32>| {
        out.push(command(CMD_MOVE_TO, 1));
        param(&vs[0], out);
        out.push(command(CMD_LINE_TO, (vs.len() - 1) as u32));
        for v in &vs[1..] {
            param(v, out);
        }
        if close {
            out.push(command(CMD_CLOSE_PATH, 1));
        }
    };
    match geom {
        Geometry::Point(v) => {
            out.push(command(CMD_MOVE_TO, 1));
            let (dx, dy) = (v.x as i64, v.y as i64);
            out.push(zigzag(dx) as u32);
            out.push(zigzag(dy) as u32);
            GEOM_POINT
        }
        Geometry::MultiPoint(points) => {
            out.push(command(CMD_MOVE_TO, points.len() as u32));
            let mut c = (0i64, 0i64);
            for v in points {
                out.push(zigzag(v.x as i64 - c.0) as u32);
                out.push(zigzag(v.y as i64 - c.1) as u32);
                c = (v.x as i64, v.y as i64);
            }
            GEOM_POINT
        }
        Geometry::LineString(l) => {
            line(l, false, out);
            GEOM_LINESTRING
        }
        Geometry::MultiLineString(ls) => {
            for l in ls {
                line(l, false, out);
            }
            GEOM_LINESTRING
        }
        Geometry::Polygon(p) => {
            for r in p {
                line(r, true, out);
            }
            GEOM_POLYGON
        }
        Geometry::MultiPolygon(ps) => {
            for r in ps.iter().flatten() {
                line(r, true, out);
            }
            GEOM_POLYGON
        }
    }
}

fn write_layer(table: &FeatureTable, out: &mut Vec<u8>) -> Result<(), MvtError> {
    if table.dimensions != 2 || table.geometries.iter().any(|g| g.vertices().any(|v| v.z != 0)) {
        return Err(MvtError::Unsupported3d(table.name.clone()));
    }
    let columns = flatten_columns(table);
    let mut seen = std::collections::HashSet::new();
    for (k, _) in &columns {
        if !seen.insert(k.as_str()) {
            return Err(MvtError::KeyCollision { table: table.name.clone(), key: k.clone() });
        }
    }
    let mut layer = Vec::new();
    put_bytes(1, table.name.as_bytes(), &mut layer);

    let mut values: Vec<ValueKey> = Vec::new();
    let mut value_ids: HashMap<ValueKey, u32> = HashMap::new();
    let mut feature = Vec::new();
    let mut tags = Vec::new();
    let mut geometry = Vec::new();
    for row in 0..table.len() {
        feature.clear();
        tags.clear();
        geometry.clear();
        if !table.synthetic_ids {
            put_varint(1, table.ids[row], &mut feature);
        }
        for (k, (_, col)) in columns.iter().enumerate() {
            if let Some(key) = value_key(&col[row]) {
                let next = values.len() as u32;
                let id = *value_ids.entry(key.clone()).or_insert_with(|| {
                    values.push(key);
                    next
                });
                tags.push(k as u32);
                tags.push(id);
            }
        }
        if !tags.is_empty() {
            put_packed(2, &tags, &mut feature);
        }
        let ty = encode_geometry(&table.geometries[row], &mut geometry);
        put_varint(3, ty, &mut feature);
        put_packed(4, &geometry, &mut feature);
        put_bytes(2, &feature, &mut layer);
    }
    for (k, _) in &columns {
        put_bytes(3, k.as_bytes(), &mut layer);
    }
    for v in &values {
        write_value(v, &mut layer);
    }
    put_varint(5, table.extent as u64, &mut layer);
    put_varint(15, 2, &mut layer);
    put_bytes(3, &layer, out);
    Ok(())
}

/// Encodes a 2D tile as MVT. The tile coordinate is not part of the format.
pub fn mvt_write(tile: &Tile) -> Result<Vec<u8>, MvtError> {
    let mut out = Vec::new();
    for table in &tile.tables {
        write_layer(table, &mut out)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// parsing

struct Field<'a> {
    number: u64,
    offset: usize,
    value: FieldValue<'a>,
}

enum FieldValue<'a> {
    Varint(u64),
    Fixed64(u64),
    Bytes(&'a [u8], usize),
    Fixed32(u32),
}

struct Message<'a> {
    r: Reader<'a>,
    base: usize,
}

impl<'a> Message<'a> {
    fn new(buf: &'a [u8], base: usize) -> Self {
        Message { r: Reader::new(buf), base }
    }

    fn lift<T>(&self, res: Result<T, EncodingError>) -> Result<T, MvtError> {
        res.map_err(|e| {
            let offset = match e {
                EncodingError::Truncated { offset } | EncodingError::VarintOverflow { offset } => offset,
                _ => self.r.position(),
            };
            MvtError::Parse { offset: self.base + offset, message: e.to_string() }
        })
    }

    fn next(&mut self) -> Result<Option<Field<'a>>, MvtError> {
        if self.r.is_empty() {
            return Ok(None);
        }
        let offset = self.base + self.r.position();
        let key = self.r.varint();
        let key = self.lift(key)?;
        let number = key >> 3;
        if number == 0 {
            return parse_err(offset, "field number 0");
        }
        let value = match key & 7 {
            0 => {
                let v = self.r.varint();
                FieldValue::Varint(self.lift(v)?)
            }
            1 => {
                let b = self.r.bytes(8);
                FieldValue::Fixed64(u64::from_le_bytes(self.lift(b)?.try_into().unwrap()))
            }
            2 => {
                let n = self.r.varint();
                let n = self.lift(n)?;
                if n > self.r.remaining() as u64 {
                    return parse_err(self.base + self.r.position(), "length-delimited field overruns buffer");
                }
                let start = self.base + self.r.position();
                let b = self.r.bytes(n as usize);
                FieldValue::Bytes(self.lift(b)?, start)
            }
            5 => {
                let b = self.r.bytes(4);
                FieldValue::Fixed32(u32::from_le_bytes(self.lift(b)?.try_into().unwrap()))
            }
            w => return parse_err(offset, format!("unsupported wire type {w}")),
        };
        Ok(Some(Field { number, offset, value }))
    }
}

fn expect_varint(f: &Field<'_>) -> Result<u64, MvtError> {
    match f.value {
        FieldValue::Varint(v) => Ok(v),
        _ => parse_err(f.offset, format!("field {} must be a varint", f.number)),
    }
}

fn expect_bytes<'a>(f: &Field<'a>) -> Result<(&'a [u8], usize), MvtError> {
    match f.value {
        FieldValue::Bytes(b, at) => Ok((b, at)),
        _ => parse_err(f.offset, format!("field {} must be length-delimited", f.number)),
    }
}

fn expect_str(f: &Field<'_>) -> Result<String, MvtError> {
    let (b, at) = expect_bytes(f)?;
    std::str::from_utf8(b).map(str::to_owned).or_else(|_| parse_err(at, "invalid UTF-8"))
}

/// Packed or single repeated varints.
fn repeated_varints(f: &Field<'_>, out: &mut Vec<u64>) -> Result<(), MvtError> {
    match f.value {
        FieldValue::Varint(v) => out.push(v),
        FieldValue::Bytes(b, at) => {
            let mut m = Message::new(b, at);
            while !m.r.is_empty() {
                let v = m.r.varint();
                out.push(m.lift(v)?);
            }
        }
        _ => return parse_err(f.offset, format!("field {} must be varints", f.number)),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum RawValue {
    String(String),
    Float(f32),
    Double(f64),
    Int(i64),
    UInt(u64),
    Bool(bool),
}

fn parse_value(buf: &[u8], base: usize) -> Result<RawValue, MvtError> {
    let mut m = Message::new(buf, base);
    let mut value = None;
    while let Some(f) = m.next()? {
        value = Some(match (f.number, &f.value) {
            (1, _) => RawValue::String(expect_str(&f)?),
            (2, FieldValue::Fixed32(bits)) => RawValue::Float(f32::from_bits(*bits)),
            (3, FieldValue::Fixed64(bits)) => RawValue::Double(f64::from_bits(*bits)),
            (4, FieldValue::Varint(v)) => RawValue::Int(*v as i64),
            (5, FieldValue::Varint(v)) => RawValue::UInt(*v),
            (6, FieldValue::Varint(v)) => RawValue::Int(unzigzag(*v)),
            (7, FieldValue::Varint(v)) => RawValue::Bool(*v != 0),
            (2..=7, _) => return parse_err(f.offset, format!("value field {} has the wrong wire type", f.number)),
            _ => continue,
        });
    }
    value.map_or_else(|| parse_err(base, "value message without a value"), Ok)
}

struct RawFeature {
    id: Option<u64>,
    tags: Vec<u64>,
    ty: u64,
    geometry: Vec<u64>,
    offset: usize,
}

fn parse_feature(buf: &[u8], base: usize) -> Result<RawFeature, MvtError> {
    let mut m = Message::new(buf, base);
    let mut feat = RawFeature { id: None, tags: Vec::new(), ty: 0, geometry: Vec::new(), offset: base };
    while let Some(f) = m.next()? {
        match f.number {
            1 => feat.id = Some(expect_varint(&f)?),
            2 => repeated_varints(&f, &mut feat.tags)?,
            3 => feat.ty = expect_varint(&f)?,
            4 => repeated_varints(&f, &mut feat.geometry)?,
            _ => {}
        }
    }
    Ok(feat)
}

fn decode_geometry(feat: &RawFeature) -> Result<Geometry, MvtError> {
    let at = feat.offset;
    let g = &feat.geometry;
    let mut i = 0;
    let mut cursor = (0i64, 0i64);
    let mut read_point = |i: &mut usize| -> Result<Vertex, MvtError> {
        if *i + 2 > g.len() {
            return parse_err(at, "geometry command runs out of parameters");
        }
        cursor.0 = cursor.0.saturating_add(unzigzag(g[*i]));
        cursor.1 = cursor.1.saturating_add(unzigzag(g[*i + 1]));
        *i += 2;
        match (i32::try_from(cursor.0), i32::try_from(cursor.1)) {
            (Ok(x), Ok(y)) => Ok(Vertex::new(x, y)),
            _ => parse_err(at, "coordinate exceeds 32 bits"),
        }
    };
    let next_command = |i: &mut usize| -> Result<(u32, usize), MvtError> {
        let c = u32::try_from(g[*i]).or_else(|_| parse_err(at, "command integer exceeds 32 bits"))?;
        *i += 1;
        Ok((c & 7, (c >> 3) as usize))
    };
    match feat.ty {
        GEOM_POINT => {
            let mut points = Vec::new();
            while i < g.len() {
                let (id, count) = next_command(&mut i)?;
                if id != CMD_MOVE_TO || count == 0 || count > (g.len() - i) / 2 {
                    return parse_err(at, "invalid point command");
                }
                for _ in 0..count {
                    points.push(read_point(&mut i)?);
                }
            }
            match points.len() {
                0 => parse_err(at, "empty point geometry"),
                1 => Ok(Geometry::Point(points[0])),
                _ => Ok(Geometry::MultiPoint(points)),
            }
        }
        GEOM_LINESTRING | GEOM_POLYGON => {
            let polygon = feat.ty == GEOM_POLYGON;
            let mut paths = Vec::new();
            while i < g.len() {
                let (id, count) = next_command(&mut i)?;
                if id != CMD_MOVE_TO || count != 1 {
                    return parse_err(at, "path must start with a single MoveTo");
                }
                let mut path = vec![read_point(&mut i)?];
                if i >= g.len() {
                    return parse_err(at, "path without LineTo");
                }
                let (id, count) = next_command(&mut i)?;
                if id != CMD_LINE_TO || count == 0 || count > (g.len() - i) / 2 {
                    return parse_err(at, "invalid LineTo");
                }
                for _ in 0..count {
                    path.push(read_point(&mut i)?);
                }
                if polygon {
                    if i >= g.len() || next_command(&mut i)? != (CMD_CLOSE_PATH, 1) {
                        return parse_err(at, "ring without ClosePath");
                    }
                    if path.len() < 3 {
                        return parse_err(at, "ring with fewer than 3 vertices");
                    }
                }
                paths.push(path);
            }
            if paths.is_empty() {
                return parse_err(at, "empty geometry");
            }
            if !polygon {
                return Ok(if paths.len() == 1 {
                    Geometry::LineString(paths.pop().unwrap())
                } else {
                    Geometry::MultiLineString(paths)
                });
            }
            classify_rings(paths, at)
        }
        t => parse_err(at, format!("unsupported geometry type {t}")),
    }
}

/// Groups rings into polygons: rings wound like the first ring start new
/// polygons, the others are holes. A tile written with the opposite winding
/// convention is repaired by reversing every ring.
fn classify_rings(rings: Vec<Vec<Vertex>>, at: usize) -> Result<Geometry, MvtError> {
    let mut areas = Vec::with_capacity(rings.len());
    for r in &rings {
        match ring_signed_area2(r) {
            Ok(0) | Err(_) => return parse_err(at, "degenerate ring"),
            Ok(a) => areas.push(a),
        }
    }
    let flip = areas[0] < 0;
    let mut polygons: Vec<Polygon> = Vec::new();
    for (mut ring, area) in rings.into_iter().zip(areas) {
        if flip {
            ring.reverse();
        }
        if (area > 0) != flip {
            polygons.push(vec![ring]);
        } else {
            polygons.last_mut().expect("first ring is an exterior").push(ring);
        }
    }
    Ok(if polygons.len() == 1 {
        Geometry::Polygon(polygons.pop().unwrap())
    } else {
        Geometry::MultiPolygon(polygons)
    })
}

fn unify(values: &[Option<&RawValue>]) -> ScalarType {
    let (mut int, mut uint, mut big_uint, mut float, mut double, mut string, mut boolean) =
        (false, false, false, false, false, false, false);
    for v in values.iter().flatten() {
        match v {
            RawValue::Int(_) => int = true,
            RawValue::UInt(u) => {
                uint = true;
                big_uint |= *u > i64::MAX as u64;
            }
            RawValue::Float(_) => float = true,
            RawValue::Double(_) => double = true,
            RawValue::String(_) => string = true,
            RawValue::Bool(_) => boolean = true,
        }
    }
    let numeric = int || uint || float || double;
    match () {
        _ if string && !numeric && !boolean => ScalarType::String,
        _ if boolean && !numeric && !string => ScalarType::Boolean,
        _ if string || boolean => ScalarType::String,
        _ if float && !double && !int && !uint => ScalarType::Float32,
        _ if float || double => ScalarType::Float64,
        _ if uint && !int => ScalarType::UInt64,
        _ if int && !uint => ScalarType::Int64,
        _ if big_uint => ScalarType::Float64,
        _ if numeric => ScalarType::Int64,
        _ => ScalarType::String,
    }
}

fn convert(v: &RawValue, ty: ScalarType) -> Value {
    match (ty, v) {
        (ScalarType::String, RawValue::String(s)) => Value::String(s.clone()),
        (ScalarType::String, RawValue::Bool(b)) => Value::String(b.to_string()),
        (ScalarType::String, RawValue::Int(x)) => Value::String(x.to_string()),
        (ScalarType::String, RawValue::UInt(x)) => Value::String(x.to_string()),
        (ScalarType::String, RawValue::Float(x)) => Value::String(x.to_string()),
        (ScalarType::String, RawValue::Double(x)) => Value::String(x.to_string()),
        (ScalarType::Boolean, RawValue::Bool(b)) => Value::Bool(*b),
        (ScalarType::Float32, RawValue::Float(x)) => Value::F32(*x),
        (ScalarType::Int64, RawValue::Int(x)) => Value::I64(*x),
        (ScalarType::Int64, RawValue::UInt(x)) => Value::I64(*x as i64),
        (ScalarType::UInt64, RawValue::UInt(x)) => Value::U64(*x),
        (ScalarType::Float64, RawValue::Float(x)) => Value::F64(*x as f64),
        (ScalarType::Float64, RawValue::Double(x)) => Value::F64(*x),
        (ScalarType::Float64, RawValue::Int(x)) => Value::F64(*x as f64),
        (ScalarType::Float64, RawValue::UInt(x)) => Value::F64(*x as f64),
        _ => unreachable!("unify picks a type every value converts to"),
    }
}

fn parse_layer(buf: &[u8], base: usize) -> Result<FeatureTable, MvtError> {
    let mut m = Message::new(buf, base);
    let mut name = None;
    let mut extent = DEFAULT_EXTENT as u64;
    let mut keys = Vec::new();
    let mut values = Vec::new();
    let mut features = Vec::new();
    while let Some(f) = m.next()? {
        match f.number {
            1 => name = Some(expect_str(&f)?),
            2 => {
                let (b, at) = expect_bytes(&f)?;
                features.push(parse_feature(b, at)?);
            }
            3 => keys.push(expect_str(&f)?),
            4 => {
                let (b, at) = expect_bytes(&f)?;
                values.push(parse_value(b, at)?);
            }
            5 => extent = expect_varint(&f)?,
            15 => {
                let v = expect_varint(&f)?;
                if !(1..=2).contains(&v) {
                    return parse_err(f.offset, format!("unsupported layer version {v}"));
                }
            }
            _ => {}
        }
    }
    let Some(name) = name else {
        return parse_err(base, "layer without a name");
    };
    let extent = match u32::try_from(extent) {
        Ok(e) if e > 0 => e,
        _ => return parse_err(base, format!("invalid extent {extent}")),
    };

    let mut table = FeatureTable::new(name);
    table.extent = extent;
    let mut cells: Vec<Vec<Option<&RawValue>>> = vec![vec![None; features.len()]; keys.len()];
    for (row, feat) in features.iter().enumerate() {
        if feat.tags.len() % 2 != 0 {
            return parse_err(feat.offset, "odd number of tag indices");
        }
        for pair in feat.tags.chunks_exact(2) {
            let (k, v) = (pair[0] as usize, pair[1] as usize);
            if k >= keys.len() || v >= values.len() {
                return parse_err(feat.offset, "tag index out of range");
            }
            cells[k][row] = Some(&values[v]);
        }
        table.geometries.push(decode_geometry(feat)?);
    }
    let mut seen = std::collections::HashSet::new();
    let unique = features.iter().all(|f| f.id.is_some_and(|id| seen.insert(id)));
    if unique {
        table.ids = features.iter().map(|f| f.id.unwrap()).collect();
    } else {
        table.ids = (0..features.len() as u64).collect();
        table.synthetic_ids = true;
    }
    let mut names = std::collections::HashSet::new();
    for (key, col) in keys.into_iter().zip(&cells) {
        if !names.insert(key.clone()) {
            return parse_err(base, format!("duplicate key {key}"));
        }
        let ty = unify(col);
        let values = col.iter().map(|v| v.map_or(Value::Null, |v| convert(v, ty))).collect();
        table.columns.push(Column::new(ColumnDef::scalar(key, ty, true), values));
    }
    Ok(table)
}

/// Parses an MVT tile. The coordinate comes from the caller (file path).
pub fn mvt_parse(bytes: &[u8], coord: TileCoord) -> Result<Tile, MvtError> {
    let mut m = Message::new(bytes, 0);
    let mut tile = Tile::new(coord);
    while let Some(f) = m.next()? {
        if f.number == 3 {
            let (b, at) = expect_bytes(&f)?;
            tile.tables.push(parse_layer(b, at)?);
        }
    }
    Ok(tile)
}

// ---------------------------------------------------------------------------
// normalization

fn widen(v: Value) -> Value {
    match v {
        Value::I32(x) => Value::I64(x as i64),
        Value::U32(x) => Value::U64(x as u64),
        v => v,
    }
}

fn widen_type(t: ScalarType) -> ScalarType {
    match t {
        ScalarType::Int32 => ScalarType::Int64,
        ScalarType::UInt32 => ScalarType::UInt64,
        t => t,
    }
}

fn collapse(g: &Geometry) -> Geometry {
    match g {
        Geometry::MultiPoint(p) if p.len() == 1 => Geometry::Point(p[0]),
        Geometry::MultiLineString(l) if l.len() == 1 => Geometry::LineString(l[0].clone()),
        Geometry::MultiPolygon(p) if p.len() == 1 => Geometry::Polygon(p[0].clone()),
        g => g.clone(),
    }
}

/// The tile `mvt_parse(mvt_write(tile))` yields.
pub fn normalize(tile: &Tile) -> Tile {
    let mut out = Tile::new(tile.coord);
    for table in &tile.tables {
        let mut t = FeatureTable::new(table.name.clone());
        t.extent = table.extent;
        t.synthetic_ids = table.synthetic_ids && !table.is_empty();
        t.ids = if t.synthetic_ids { (0..table.len() as u64).collect() } else { table.ids.clone() };
        t.geometries = table.geometries.iter().map(collapse).collect();
        for (name, values) in flatten_columns(table) {
            let ty = values.iter().find_map(Value::scalar_type).map(widen_type).expect("non-null column");
            t.columns.push(Column::new(ColumnDef::scalar(name, ty, true), values.into_iter().map(widen).collect()));
        }
        out.tables.push(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_tile() -> Tile {
        let mut t = FeatureTable::new("poi");
        t.ids = vec![1];
        t.geometries = vec![Geometry::Point(Vertex::new(25, 17))];
        t.columns.push(Column::new(ColumnDef::scalar("name", ScalarType::String, false), vec![Value::String("cafe".into())]));
        Tile { coord: TileCoord::default(), tables: vec![t] }
    }

    #[test]
    fn point_command_stream() {
        let mut g = Vec::new();
        assert_eq!(encode_geometry(&Geometry::Point(Vertex::new(25, 17)), &mut g), GEOM_POINT);
        assert_eq!(g, [9, 50, 34]);
    }

    #[test]
    fn round_trip_point_tile() {
        let tile = point_tile();
        let bytes = mvt_write(&tile).unwrap();
        assert_eq!(mvt_parse(&bytes, tile.coord).unwrap(), normalize(&tile));
    }

    #[test]
    fn empty_and_truncated() {
        assert_eq!(mvt_parse(&[], TileCoord::default()).unwrap(), Tile::default());
        let bytes = mvt_write(&point_tile()).unwrap();
        assert!(matches!(mvt_parse(&bytes[..bytes.len() - 3], TileCoord::default()), Err(MvtError::Parse { .. })));
        // value message whose int64 varint is cut short
        let mut layer = Vec::new();
        put_bytes(1, b"l", &mut layer);
        put_bytes(4, &[0x20, 0x80], &mut layer);
        let mut tile = Vec::new();
        put_bytes(3, &layer, &mut tile);
        assert!(matches!(mvt_parse(&tile, TileCoord::default()), Err(MvtError::Parse { .. })));
    }

    #[test]
    fn lists_flatten_to_dotted_keys() {
        let mut tile = point_tile();
        tile.tables[0].columns.push(Column::new(
            ColumnDef::new("tags", ColumnType::List(ScalarType::Int32), false),
            vec![Value::List(vec![Value::I32(-3), Value::I32(4)])],
        ));
        let parsed = mvt_parse(&mvt_write(&tile).unwrap(), tile.coord).unwrap();
        let names: Vec<_> = parsed.tables[0].columns.iter().map(|c| c.def.name.as_str()).collect();
        assert_eq!(names, ["name", "tags.0", "tags.1"]);
        assert_eq!(parsed.tables[0].columns[1].values, [Value::I64(-3)]);
        assert_eq!(parsed, normalize(&tile));
    }

    #[test]
    fn three_d_is_rejected() {
        let mut tile = point_tile();
        tile.tables[0].dimensions = 3;
        tile.tables[0].geometries[0] = Geometry::Point(Vertex::new_3d(1, 2, 3));
        assert_eq!(mvt_write(&tile), Err(MvtError::Unsupported3d("poi".into())));
    }

    #[test]
    fn reversed_winding_is_repaired() {
        let outer = vec![Vertex::new(0, 0), Vertex::new(10, 0), Vertex::new(10, 10), Vertex::new(0, 10)];
        assert!(ring_signed_area2(&outer).unwrap() > 0);
        let hole = vec![Vertex::new(2, 2), Vertex::new(2, 4), Vertex::new(4, 4), Vertex::new(4, 2)];
        let mut reversed_outer = outer.clone();
        reversed_outer.reverse();
        let mut reversed_hole = hole.clone();
        reversed_hole.reverse();
        let g = classify_rings(vec![reversed_outer, reversed_hole], 0).unwrap();
        assert_eq!(g, Geometry::Polygon(vec![outer, hole]));
    }

    #[test]
    fn mixed_value_types_unify() {
        let i = RawValue::Int(-1);
        let u = RawValue::UInt(5);
        let s = RawValue::String("x".into());
        assert_eq!(unify(&[Some(&i), Some(&u)]), ScalarType::Int64);
        assert_eq!(unify(&[Some(&u), None]), ScalarType::UInt64);
        assert_eq!(unify(&[Some(&u), Some(&s)]), ScalarType::String);
        assert_eq!(unify(&[None]), ScalarType::String);
        assert_eq!(unify(&[Some(&RawValue::UInt(u64::MAX)), Some(&i)]), ScalarType::Float64);
    }
}
