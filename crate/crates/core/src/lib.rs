//! Columnar vector tile codec.
//!
//! The crate is split along the life of a tile:
//!
//! * [`model`] — the logical tile / feature table / geometry model and its validation rules.
//! * [`encodings`] — lightweight integer and string codecs and the cascade selector.
//! * [`geometry`] — topology streams, Morton vertex dictionaries and offline tessellation.
//! * [`storage`] — the `.mlt` byte container.
//! * [`memory`] — the in-memory vector format decoded from the container.
//! * [`filter`] — vectorized filter evaluation over in-memory vectors.
//! * [`mvt`] — a Mapbox Vector Tile reader/writer used as the comparison baseline.

pub mod encodings;
pub mod filter;
pub mod geometry;
pub mod memory;
pub mod model;
pub mod mvt;
pub mod storage;

pub use model::{
    AttributeScope, Column, ColumnDef, ColumnType, FeatureTable, Geometry, GeometryType,
    ScalarType, Tile, TileCoord, Value, Vertex,
};
pub use encodings::EncodingProfile;
pub use storage::{decode_tile, encode_tile};
