//! Logical data model shared by every codec path.
//!
//! Coordinates are integer grid units with y pointing down. Rings are stored
//! open: the closing vertex is implicit. An exterior ring has a positive
//! signed area per [`ring_signed_area`] (clockwise on screen, the MVT
//! convention) and interior rings have a negative one.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EXTENT: u32 = 4096;
pub const MAX_ZOOM: u8 = 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("degenerate ring: {0} vertices, at least 3 required")]
    DegenerateRing(usize),
    #[error("tile coordinate {z}/{x}/{y} out of range")]
    InvalidTileCoord { z: u8, x: u32, y: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub z: u8,
    pub x: u32,
    pub y: u32,
}

impl TileCoord {
    pub fn new(z: u8, x: u32, y: u32) -> Result<Self, ModelError> {
        let coord = TileCoord { z, x, y };
        if coord.is_valid() {
            Ok(coord)
        } else {
            Err(ModelError::InvalidTileCoord { z, x, y })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.z <= MAX_ZOOM && (self.x as u64) < (1u64 << self.z) && (self.y as u64) < (1u64 << self.z)
    }
}

impl Default for TileCoord {
    fn default() -> Self {
        TileCoord { z: 0, x: 0, y: 0 }
    }
}

impl fmt::Display for TileCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.z, self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarType {
    Boolean,
    Int32,
    UInt32,
    Int64,
    UInt64,
    Float32,
    Float64,
    String,
}

impl ScalarType {
    pub const ALL: [ScalarType; 8] = [
        ScalarType::Boolean,
        ScalarType::Int32,
        ScalarType::UInt32,
        ScalarType::Int64,
        ScalarType::UInt64,
        ScalarType::Float32,
        ScalarType::Float64,
        ScalarType::String,
    ];

    pub fn is_numeric(self) -> bool {
        !matches!(self, ScalarType::Boolean | ScalarType::String)
    }

    /// The value a null slot holds in placeholder layout.
    pub fn zero(self) -> Value {
        match self {
            ScalarType::Boolean => Value::Bool(false),
            ScalarType::Int32 => Value::I32(0),
            ScalarType::UInt32 => Value::U32(0),
            ScalarType::Int64 => Value::I64(0),
            ScalarType::UInt64 => Value::U64(0),
            ScalarType::Float32 => Value::F32(0.0),
            ScalarType::Float64 => Value::F64(0.0),
            ScalarType::String => Value::String(String::new()),
        }
    }
}

/// Attribute column type. Nesting depth is capped at one level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnType {
    Scalar(ScalarType),
    List(ScalarType),
    Struct(Vec<(String, ScalarType)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttributeScope {
    Feature,
    Vertex,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
    pub nullable: bool,
    pub scope: AttributeScope,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, ty: ColumnType, nullable: bool) -> Self {
        ColumnDef { name: name.into(), ty, nullable, scope: AttributeScope::Feature }
    }

    pub fn scalar(name: impl Into<String>, ty: ScalarType, nullable: bool) -> Self {
        Self::new(name, ColumnType::Scalar(ty), nullable)
    }

    pub fn vertex(name: impl Into<String>, ty: ScalarType, nullable: bool) -> Self {
        ColumnDef {
            name: name.into(),
            ty: ColumnType::Scalar(ty),
            nullable,
            scope: AttributeScope::Vertex,
        }
    }
}

/// Geometry type codes as written to the Type stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum GeometryType {
    Point = 0,
    LineString = 1,
    Polygon = 2,
    MultiPoint = 3,
    MultiLineString = 4,
    MultiPolygon = 5,
}

impl GeometryType {
    pub const ALL: [GeometryType; 6] = [
        GeometryType::Point,
        GeometryType::LineString,
        GeometryType::Polygon,
        GeometryType::MultiPoint,
        GeometryType::MultiLineString,
        GeometryType::MultiPolygon,
    ];

    pub fn from_code(code: u64) -> Option<Self> {
        Self::ALL.get(usize::try_from(code).ok()?).copied()
    }

    pub fn is_multi(self) -> bool {
        matches!(
            self,
            GeometryType::MultiPoint | GeometryType::MultiLineString | GeometryType::MultiPolygon
        )
    }

    pub fn is_polygonal(self) -> bool {
        matches!(self, GeometryType::Polygon | GeometryType::MultiPolygon)
    }

    pub fn name(self) -> &'static str {
        match self {
            GeometryType::Point => "Point",
            GeometryType::LineString => "LineString",
            GeometryType::Polygon => "Polygon",
            GeometryType::MultiPoint => "MultiPoint",
            GeometryType::MultiLineString => "MultiLineString",
            GeometryType::MultiPolygon => "MultiPolygon",
        }
    }
}

/// A vertex in tile grid units. `z` is zero in 2D tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Vertex {
    pub x: i32,
    pub y: i32,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub z: i32,
}

fn is_zero(v: &i32) -> bool {
    *v == 0
}

impl Vertex {
    pub const fn new(x: i32, y: i32) -> Self {
        Vertex { x, y, z: 0 }
    }

    pub const fn new_3d(x: i32, y: i32, z: i32) -> Self {
        Vertex { x, y, z }
    }
}

impl From<(i32, i32)> for Vertex {
    fn from((x, y): (i32, i32)) -> Self {
        Vertex::new(x, y)
    }
}

pub type Ring = Vec<Vertex>;
pub type Polygon = Vec<Ring>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Geometry {
    Point(Vertex),
    LineString(Vec<Vertex>),
    Polygon(Polygon),
    MultiPoint(Vec<Vertex>),
    MultiLineString(Vec<Vec<Vertex>>),
    MultiPolygon(Vec<Polygon>),
}

impl Geometry {
    pub fn geometry_type(&self) -> GeometryType {
        match self {
            Geometry::Point(_) => GeometryType::Point,
            Geometry::LineString(_) => GeometryType::LineString,
            Geometry::Polygon(_) => GeometryType::Polygon,
            Geometry::MultiPoint(_) => GeometryType::MultiPoint,
            Geometry::MultiLineString(_) => GeometryType::MultiLineString,
            Geometry::MultiPolygon(_) => GeometryType::MultiPolygon,
        }
    }

    /// Vertices in topology order.
    pub fn vertices(&self) -> Box<dyn Iterator<Item = &Vertex> + '_> {
        match self {
            Geometry::Point(v) => Box::new(std::iter::once(v)),
            Geometry::LineString(vs) | Geometry::MultiPoint(vs) => Box::new(vs.iter()),
            Geometry::Polygon(rings) | Geometry::MultiLineString(rings) => {
                Box::new(rings.iter().flatten())
            }
            Geometry::MultiPolygon(polys) => Box::new(polys.iter().flatten().flatten()),
        }
    }

    pub fn vertex_count(&self) -> usize {
        match self {
            Geometry::Point(_) => 1,
            Geometry::LineString(vs) | Geometry::MultiPoint(vs) => vs.len(),
            Geometry::Polygon(rings) | Geometry::MultiLineString(rings) => {
                rings.iter().map(Vec::len).sum()
            }
            Geometry::MultiPolygon(polys) => polys.iter().flatten().map(Vec::len).sum(),
        }
    }

    /// Polygons of a polygonal geometry, empty otherwise.
    pub fn polygons(&self) -> &[Polygon] {
        match self {
            Geometry::Polygon(p) => std::slice::from_ref(p),
            Geometry::MultiPolygon(ps) => ps,
            _ => &[],
        }
    }
}

/// An attribute value. `Struct` carries field values in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Null,
    Bool(bool),
    I32(i32),
    U32(u32),
    I64(i64),
    U64(u64),
    F32(f32),
    F64(f64),
    String(String),
    List(Vec<Value>),
    Struct(Vec<Value>),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn scalar_type(&self) -> Option<ScalarType> {
        Some(match self {
            Value::Bool(_) => ScalarType::Boolean,
            Value::I32(_) => ScalarType::Int32,
            Value::U32(_) => ScalarType::UInt32,
            Value::I64(_) => ScalarType::Int64,
            Value::U64(_) => ScalarType::UInt64,
            Value::F32(_) => ScalarType::Float32,
            Value::F64(_) => ScalarType::Float64,
            Value::String(_) => ScalarType::String,
            _ => return None,
        })
    }

    pub fn as_f64(&self) -> Option<f64> {
        Some(match *self {
            Value::I32(v) => v as f64,
            Value::U32(v) => v as f64,
            Value::I64(v) => v as f64,
            Value::U64(v) => v as f64,
            Value::F32(v) => v as f64,
            Value::F64(v) => v,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    /// True when the value is a non-null instance of `ty`.
    pub fn conforms(&self, ty: &ColumnType) -> bool {
        match (ty, self) {
            (ColumnType::Scalar(t), v) => v.scalar_type() == Some(*t),
            (ColumnType::List(t), Value::List(items)) => {
                items.iter().all(|v| v.scalar_type() == Some(*t))
            }
            (ColumnType::Struct(fields), Value::Struct(values)) => {
                fields.len() == values.len()
                    && fields.iter().zip(values).all(|((_, t), v)| v.scalar_type() == Some(*t))
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub def: ColumnDef,
    /// One entry per feature, or per vertex for vertex-scoped columns.
    pub values: Vec<Value>,
}

impl Column {
    pub fn new(def: ColumnDef, values: Vec<Value>) -> Self {
        Column { def, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub name: String,
    pub extent: u32,
    pub dimensions: u8,
    /// Set when ids were assigned by a reader rather than present in the source.
    #[serde(default)]
    pub synthetic_ids: bool,
    pub ids: Vec<u64>,
    pub geometries: Vec<Geometry>,
    pub columns: Vec<Column>,
}

impl FeatureTable {
    pub fn new(name: impl Into<String>) -> Self {
        FeatureTable {
            name: name.into(),
            extent: DEFAULT_EXTENT,
            dimensions: 2,
            synthetic_ids: false,
            ids: Vec::new(),
            geometries: Vec::new(),
            columns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.geometries.iter().map(Geometry::vertex_count).sum()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.def.name == name)
    }

    pub fn schema(&self) -> Vec<ColumnDef> {
        self.columns.iter().map(|c| c.def.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tile {
    pub coord: TileCoord,
    pub tables: Vec<FeatureTable>,
}

impl Tile {
    pub fn new(coord: TileCoord) -> Self {
        Tile { coord, tables: Vec::new() }
    }

    pub fn table(&self, name: &str) -> Option<&FeatureTable> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Twice the signed area of an implicitly closed ring, exact.
///
/// Positive for rings that run clockwise on screen (y down).
pub fn ring_signed_area2(ring: &[Vertex]) -> Result<i128, ModelError> {
    if ring.len() < 3 {
        return Err(ModelError::DegenerateRing(ring.len()));
    }
    let mut sum: i128 = 0;
    let mut prev = ring[ring.len() - 1];
    for &v in ring {
        sum += prev.x as i128 * v.y as i128 - v.x as i128 * prev.y as i128;
        prev = v;
    }
    Ok(sum)
}

/// Signed area of an implicitly closed ring in grid units squared.
pub fn ring_signed_area(ring: &[Vertex]) -> Result<f64, ModelError> {
    ring_signed_area2(ring).map(|a| a as f64 / 2.0)
}

/// A single validation finding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    DuplicateId { id: u64, rows: Vec<usize> },
    InvalidExtent { extent: u32 },
    InvalidDimensions { dimensions: u8 },
    DuplicateColumn { name: String },
    DuplicateStructField { column: String, field: String },
    InvalidVertexColumn { column: String },
    RowCount { column: Option<String>, expected: usize, actual: usize },
    TypeMismatch { row: usize, column: String },
    NullNotAllowed { row: usize, column: String },
    EmptyGeometry { row: usize },
    DimensionMismatch { row: usize },
    TooFewVertices { row: usize, part: usize },
    RingTooShort { row: usize, ring: usize },
    RingOrientation { row: usize, ring: usize },
    DuplicateTable { name: String },
    InvalidTileCoord,
}

impl Diagnostic {
    pub fn rule_id(&self) -> &'static str {
        match self {
            Diagnostic::DuplicateId { .. } => "duplicate-id",
            Diagnostic::InvalidExtent { .. } => "invalid-extent",
            Diagnostic::InvalidDimensions { .. } => "invalid-dimensions",
            Diagnostic::DuplicateColumn { .. } => "duplicate-column",
            Diagnostic::DuplicateStructField { .. } => "duplicate-struct-field",
            Diagnostic::InvalidVertexColumn { .. } => "invalid-vertex-column",
            Diagnostic::RowCount { .. } => "row-count",
            Diagnostic::TypeMismatch { .. } => "type-mismatch",
            Diagnostic::NullNotAllowed { .. } => "null-not-allowed",
            Diagnostic::EmptyGeometry { .. } => "empty-geometry",
            Diagnostic::DimensionMismatch { .. } => "dimension-mismatch",
            Diagnostic::TooFewVertices { .. } => "too-few-vertices",
            Diagnostic::RingTooShort { .. } => "ring-too-short",
            Diagnostic::RingOrientation { .. } => "ring-orientation",
            Diagnostic::DuplicateTable { .. } => "duplicate-table",
            Diagnostic::InvalidTileCoord => "invalid-tile-coord",
        }
    }

    /// Row the finding refers to, when it is row-specific.
    pub fn row(&self) -> Option<usize> {
        match self {
            Diagnostic::DuplicateId { rows, .. } => rows.first().copied(),
            Diagnostic::TypeMismatch { row, .. }
            | Diagnostic::NullNotAllowed { row, .. }
            | Diagnostic::EmptyGeometry { row }
            | Diagnostic::DimensionMismatch { row }
            | Diagnostic::TooFewVertices { row, .. }
            | Diagnostic::RingTooShort { row, .. }
            | Diagnostic::RingOrientation { row, .. } => Some(*row),
            _ => None,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id = self.rule_id();
        match self {
            Diagnostic::DuplicateId { id: dup, rows } => {
                let rows: Vec<String> = rows.iter().map(|r| r.to_string()).collect();
                write!(f, "{id}({dup}, rows {})", rows.join(","))
            }
            Diagnostic::InvalidExtent { extent } => write!(f, "{id}({extent})"),
            Diagnostic::InvalidDimensions { dimensions } => write!(f, "{id}({dimensions})"),
            Diagnostic::DuplicateColumn { name } => write!(f, "{id}({name})"),
            Diagnostic::DuplicateStructField { column, field } => {
                write!(f, "{id}({column}.{field})")
            }
            Diagnostic::InvalidVertexColumn { column } => write!(f, "{id}({column})"),
            Diagnostic::RowCount { column, expected, actual } => write!(
                f,
                "{id}({}, expected {expected}, got {actual})",
                column.as_deref().unwrap_or("geometry")
            ),
            Diagnostic::TypeMismatch { row, column } | Diagnostic::NullNotAllowed { row, column } => {
                write!(f, "{id}(row {row}, {column})")
            }
            Diagnostic::EmptyGeometry { row } | Diagnostic::DimensionMismatch { row } => {
                write!(f, "{id}(row {row})")
            }
            Diagnostic::TooFewVertices { row, part } => write!(f, "{id}(row {row}, part {part})"),
            Diagnostic::RingTooShort { row, ring } | Diagnostic::RingOrientation { row, ring } => {
                write!(f, "{id}(row {row}, ring {ring})")
            }
            Diagnostic::DuplicateTable { name } => write!(f, "{id}({name})"),
            Diagnostic::InvalidTileCoord => write!(f, "{id}"),
        }
    }
}

/// Checks every table and geometry invariant. Returns an empty list iff the
/// table is valid.
pub fn validate_table(table: &FeatureTable) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    if !table.extent.is_power_of_two() {
        out.push(Diagnostic::InvalidExtent { extent: table.extent });
    }
    if !(2..=3).contains(&table.dimensions) {
        out.push(Diagnostic::InvalidDimensions { dimensions: table.dimensions });
    }

    let rows = table.ids.len();
    if table.geometries.len() != rows {
        out.push(Diagnostic::RowCount { column: None, expected: rows, actual: table.geometries.len() });
    }

    let mut seen: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut order = Vec::new();
    for (row, &id) in table.ids.iter().enumerate() {
        let rows = seen.entry(id).or_default();
        if rows.len() == 1 {
            order.push(id);
        }
        rows.push(row);
    }
    for id in order {
        out.push(Diagnostic::DuplicateId { id, rows: seen[&id].clone() });
    }

    for (row, geom) in table.geometries.iter().enumerate() {
        validate_geometry(row, geom, table.dimensions, &mut out);
    }

    let vertex_count = table.vertex_count();
    let mut names = HashSet::new();
    for col in &table.columns {
        let def = &col.def;
        if !names.insert(def.name.as_str()) {
            out.push(Diagnostic::DuplicateColumn { name: def.name.clone() });
        }
        if let ColumnType::Struct(fields) = &def.ty {
            let mut field_names = HashSet::new();
            for (field, _) in fields {
                if !field_names.insert(field.as_str()) {
                    out.push(Diagnostic::DuplicateStructField {
                        column: def.name.clone(),
                        field: field.clone(),
                    });
                }
            }
        }
        let expected = match def.scope {
            AttributeScope::Feature => rows,
            AttributeScope::Vertex => {
                if !matches!(def.ty, ColumnType::Scalar(_)) {
                    out.push(Diagnostic::InvalidVertexColumn { column: def.name.clone() });
                }
                vertex_count
            }
        };
        if col.values.len() != expected {
            out.push(Diagnostic::RowCount {
                column: Some(def.name.clone()),
                expected,
                actual: col.values.len(),
            });
        }
        for (row, value) in col.values.iter().enumerate() {
            match value {
                Value::Null if def.nullable => {}
                Value::Null => out.push(Diagnostic::NullNotAllowed { row, column: def.name.clone() }),
                Value::Struct(fields) if matches!(def.ty, ColumnType::Struct(_)) => {
                    // struct fields may individually be null when the column is nullable
                    let ColumnType::Struct(types) = &def.ty else { unreachable!() };
                    let ok = types.len() == fields.len()
                        && types.iter().zip(fields).all(|((_, t), v)| {
                            (v.is_null() && def.nullable) || v.scalar_type() == Some(*t)
                        });
                    if !ok {
                        out.push(Diagnostic::TypeMismatch { row, column: def.name.clone() });
                    }
                }
                v if v.conforms(&def.ty) => {}
                _ => out.push(Diagnostic::TypeMismatch { row, column: def.name.clone() }),
            }
        }
    }
    out
}

fn validate_geometry(row: usize, geom: &Geometry, dims: u8, out: &mut Vec<Diagnostic>) {
    if dims == 2 && geom.vertices().any(|v| v.z != 0) {
        out.push(Diagnostic::DimensionMismatch { row });
    }
    let check_line = |part: usize, line: &[Vertex], out: &mut Vec<Diagnostic>| {
        if line.len() < 2 {
            out.push(Diagnostic::TooFewVertices { row, part });
        }
    };
    let mut ring_index = 0;
    let mut check_polygon = |poly: &Polygon, out: &mut Vec<Diagnostic>| {
        if poly.is_empty() {
            out.push(Diagnostic::EmptyGeometry { row });
        }
        for (i, ring) in poly.iter().enumerate() {
            match ring_signed_area2(ring) {
                Err(_) => out.push(Diagnostic::RingTooShort { row, ring: ring_index }),
                Ok(area) => {
                    let ok = if i == 0 { area > 0 } else { area < 0 };
                    if !ok {
                        out.push(Diagnostic::RingOrientation { row, ring: ring_index });
                    }
                }
            }
            ring_index += 1;
        }
    };
    match geom {
        Geometry::Point(_) => {}
        Geometry::LineString(line) => check_line(0, line, out),
        Geometry::Polygon(poly) => check_polygon(poly, out),
        Geometry::MultiPoint(points) => {
            if points.is_empty() {
                out.push(Diagnostic::EmptyGeometry { row });
            }
        }
        Geometry::MultiLineString(lines) => {
            if lines.is_empty() {
                out.push(Diagnostic::EmptyGeometry { row });
            }
            for (i, line) in lines.iter().enumerate() {
                check_line(i, line, out);
            }
        }
        Geometry::MultiPolygon(polys) => {
            if polys.is_empty() {
                out.push(Diagnostic::EmptyGeometry { row });
            }
            for poly in polys {
                check_polygon(poly, out);
            }
        }
    }
}

/// Validates every table plus tile-level invariants.
pub fn validate_tile(tile: &Tile) -> Vec<(Option<String>, Diagnostic)> {
    let mut out = Vec::new();
    if !tile.coord.is_valid() {
        out.push((None, Diagnostic::InvalidTileCoord));
    }
    let mut names = HashSet::new();
    for table in &tile.tables {
        if !names.insert(table.name.as_str()) {
            out.push((None, Diagnostic::DuplicateTable { name: table.name.clone() }));
        }
        for d in validate_table(table) {
            out.push((Some(table.name.clone()), d));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(pts: &[(i32, i32)]) -> Vec<Vertex> {
        pts.iter().map(|&p| p.into()).collect()
    }

    #[test]
    fn signed_area_follows_screen_clockwise_convention() {
        // (0,0) -> (10,0) -> (10,10) -> (0,10) runs clockwise with y down.
        let cw = ring(&[(0, 0), (10, 0), (10, 10), (0, 10)]);
        assert_eq!(ring_signed_area(&cw).unwrap(), 100.0);
        let ccw = ring(&[(0, 0), (0, 10), (10, 10), (10, 0)]);
        assert_eq!(ring_signed_area(&ccw).unwrap(), -100.0);
        assert_eq!(ring_signed_area(&ring(&[(0, 0), (5, 5), (10, 10)])).unwrap(), 0.0);
    }

    #[test]
    fn signed_area_rejects_degenerate_ring() {
        assert_eq!(
            ring_signed_area(&ring(&[(0, 0), (1, 1)])),
            Err(ModelError::DegenerateRing(2))
        );
    }

    #[test]
    fn tile_coord_range() {
        assert!(TileCoord::new(0, 0, 0).is_ok());
        assert!(TileCoord::new(2, 3, 3).is_ok());
        assert!(TileCoord::new(2, 4, 0).is_err());
        assert!(TileCoord::new(31, 0, 0).is_err());
    }

    fn point_table(ids: &[u64]) -> FeatureTable {
        let mut t = FeatureTable::new("pts");
        t.ids = ids.to_vec();
        t.geometries = ids.iter().map(|&i| Geometry::Point(Vertex::new(i as i32, 0))).collect();
        t
    }

    #[test]
    fn duplicate_ids_reported_once_with_all_rows() {
        let t = point_table(&[1, 2, 7, 3, 4, 7]);
        let diags = validate_table(&t);
        assert_eq!(diags, vec![Diagnostic::DuplicateId { id: 7, rows: vec![2, 5] }]);
        assert_eq!(diags[0].to_string(), "duplicate-id(7, rows 2,5)");
    }

    #[test]
    fn empty_table_is_valid() {
        assert!(validate_table(&FeatureTable::new("empty")).is_empty());
    }

    #[test]
    fn counter_clockwise_exterior_is_reported() {
        let mut t = FeatureTable::new("polys");
        t.ids = vec![0, 1];
        t.geometries = vec![
            Geometry::Polygon(vec![ring(&[(0, 0), (10, 0), (10, 10), (0, 10)])]),
            Geometry::Polygon(vec![ring(&[(0, 0), (0, 10), (10, 10), (10, 0)])]),
        ];
        let diags = validate_table(&t);
        assert_eq!(diags, vec![Diagnostic::RingOrientation { row: 1, ring: 0 }]);
        assert_eq!(diags[0].row(), Some(1));
    }

    #[test]
    fn hole_must_run_opposite_to_exterior() {
        let mut t = FeatureTable::new("polys");
        t.ids = vec![0];
        let outer = ring(&[(0, 0), (10, 0), (10, 10), (0, 10)]);
        let hole_cw = ring(&[(2, 2), (4, 2), (4, 4), (2, 4)]);
        t.geometries = vec![Geometry::Polygon(vec![outer.clone(), hole_cw.clone()])];
        assert_eq!(validate_table(&t), vec![Diagnostic::RingOrientation { row: 0, ring: 1 }]);
        let mut hole = hole_cw;
        hole.reverse();
        t.geometries = vec![Geometry::Polygon(vec![outer, hole])];
        assert!(validate_table(&t).is_empty());
    }

    #[test]
    fn schema_violations() {
        let mut t = point_table(&[1, 2]);
        t.columns.push(Column::new(
            ColumnDef::scalar("name", ScalarType::String, false),
            vec![Value::String("a".into()), Value::Null],
        ));
        t.columns.push(Column::new(
            ColumnDef::scalar("rank", ScalarType::Int32, true),
            vec![Value::I64(1), Value::Null],
        ));
        t.columns.push(Column::new(ColumnDef::vertex("m", ScalarType::Float64, false), vec![]));
        let rules: Vec<&str> = validate_table(&t).iter().map(|d| d.rule_id()).collect();
        assert_eq!(rules, vec!["null-not-allowed", "type-mismatch", "row-count"]);
    }

    #[test]
    fn validation_is_idempotent() {
        let t = point_table(&[3, 3, 3]);
        assert_eq!(validate_table(&t), validate_table(&t));
    }

    #[test]
    fn three_d_vertex_in_2d_table() {
        let mut t = point_table(&[1]);
        t.geometries[0] = Geometry::Point(Vertex::new_3d(1, 2, 3));
        assert_eq!(validate_table(&t), vec![Diagnostic::DimensionMismatch { row: 0 }]);
        t.dimensions = 3;
        assert!(validate_table(&t).is_empty());
    }
}
