//! In-memory vector format.
//!
//! Storage columns are turned into vectors in three steps: opaque encodings
//! are decoded, nullable columns are expanded to a placeholder layout (null
//! slots hold the type's zero value and a cleared validity bit), and string
//! lengths become offsets. Dictionary-coded strings and run-coded id columns
//! stay compressed.
//!
//! Every buffer lives in an [`AlignedBuf`], which starts on a 16-byte boundary
//! and rounds its capacity to a power of two below 4 KiB and to 4 KiB
//! multiples above.

use std::cell::Cell;
use std::fmt;
use std::marker::PhantomData;

use crate::encodings::{EncodingProfile, LogicalTechnique};
use crate::geometry::{morton_decode, rebuild_geometries, IndexBuffer, TopologySet, VertexBuffer, VertexDictionary};
use crate::model::{AttributeScope, Column, ColumnType, FeatureTable, GeometryType, ScalarType, Value};
use crate::storage::{
    self, count_of, decode_geometry_streams, decode_lanes, decode_present_bits, decode_stream_runs,
    decode_string_streams, expect_count, invalid, read_tile, ColumnDescriptor, ColumnError, ColumnResult,
    CorruptKind, DecodeOptions, DescriptorType, StorageError, Stream, StreamCursor, StreamKind,
};

// ---------------------------------------------------------------------------
// buffers

#[derive(Clone, Copy, Default)]
#[repr(C, align(16))]
struct Block([u8; 16]);

mod sealed {
    pub trait Sealed {}
}

/// Fixed-width element types that may live in an [`AlignedBuf`]. All bit
/// patterns are valid values for every implementor.
pub trait Lane: sealed::Sealed + Copy + Default + PartialEq + fmt::Debug + Send + Sync + 'static {}

macro_rules! lanes {
    ($($t:ty),*) => {$(
        impl sealed::Sealed for $t {}
        impl Lane for $t {}
    )*};
}
lanes!(u8, i32, u32, i64, u64, f32, f64);

/// Capacity policy: next power of two below 4096 bytes, 4096-byte multiples
/// from there on.
pub fn rounded_capacity(bytes: usize) -> usize {
    if bytes == 0 {
        0
    } else if bytes < 4096 {
        bytes.next_power_of_two().max(16)
    } else {
        bytes.div_ceil(4096) * 4096
    }
}

/// A growable buffer of lanes starting on a 16-byte boundary.
pub struct AlignedBuf<T: Lane> {
    blocks: Vec<Block>,
    len: usize,
    _lane: PhantomData<T>,
}

impl<T: Lane> AlignedBuf<T> {
    pub fn new() -> Self {
        AlignedBuf { blocks: Vec::new(), len: 0, _lane: PhantomData }
    }

    pub fn with_capacity(n: usize) -> Self {
        let mut b = Self::new();
        b.reserve(n);
        b
    }

    /// Buffer of `n` zero values.
    pub fn zeroed(n: usize) -> Self {
        let mut b = Self::with_capacity(n);
        b.len = n;
        b
    }

    pub fn from_slice(xs: &[T]) -> Self {
        let mut b = Self::with_capacity(xs.len());
        b.extend_from_slice(xs);
        b
    }

    fn reserve(&mut self, additional: usize) {
        let needed = (self.len + additional) * size_of::<T>();
        if needed <= self.blocks.len() * 16 {
            return;
        }
        let cap = rounded_capacity(needed) / 16;
        let mut blocks = Vec::with_capacity(cap);
        blocks.extend_from_slice(&self.blocks);
        blocks.resize(cap, Block::default());
        self.blocks = blocks;
    }

    pub fn push(&mut self, x: T) {
        self.reserve(1);
        self.len += 1;
        let n = self.len;
        self.as_mut_slice()[n - 1] = x;
    }

    pub fn extend_from_slice(&mut self, xs: &[T]) {
        self.reserve(xs.len());
        let start = self.len;
        self.len += xs.len();
        self.as_mut_slice()[start..].copy_from_slice(xs);
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity_bytes(&self) -> usize {
        self.blocks.len() * 16
    }

    pub fn as_ptr(&self) -> *const T {
        self.blocks.as_ptr().cast()
    }

    pub fn as_slice(&self) -> &[T] {
        // SAFETY: blocks hold at least len * size_of::<T>() initialized bytes,
        // the start is 16-aligned (>= align_of::<T>()), and every bit pattern
        // is a valid T (sealed Lane types only).
        unsafe { std::slice::from_raw_parts(self.as_ptr(), self.len) }
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        // SAFETY: as in as_slice, with exclusive access through &mut self.
        unsafe { std::slice::from_raw_parts_mut(self.blocks.as_mut_ptr().cast(), self.len) }
    }

    /// Actual alignment of the buffer start address.
    pub fn alignment(&self) -> usize {
        address_alignment(self.as_ptr() as usize)
    }
}

fn address_alignment(addr: usize) -> usize {
    1usize << addr.trailing_zeros().min(12)
}

impl<T: Lane> Default for AlignedBuf<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Lane> Clone for AlignedBuf<T> {
    fn clone(&self) -> Self {
        Self::from_slice(self.as_slice())
    }
}

impl<T: Lane> PartialEq for AlignedBuf<T> {
    fn eq(&self, other: &Self) -> bool {
        self.as_slice() == other.as_slice()
    }
}

impl<T: Lane> fmt::Debug for AlignedBuf<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

impl<T: Lane> std::ops::Deref for AlignedBuf<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        self.as_slice()
    }
}

impl<T: Lane> FromIterator<T> for AlignedBuf<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let iter = iter.into_iter();
        let mut b = Self::with_capacity(iter.size_hint().0);
        for x in iter {
            b.push(x);
        }
        b
    }
}

/// LSB-first bitset in 64-bit words.
#[derive(Clone, PartialEq, Default)]
pub struct Bitmap {
    words: AlignedBuf<u64>,
    len: usize,
}

impl Bitmap {
    pub fn from_bools(bits: &[bool]) -> Self {
        let mut words = AlignedBuf::zeroed(bits.len().div_ceil(64));
        let w = words.as_mut_slice();
        for (i, &b) in bits.iter().enumerate() {
            w[i / 64] |= (b as u64) << (i % 64);
        }
        Bitmap { words, len: bits.len() }
    }

    /// From the storage bitset layout (byte `i / 8`, bit `i % 8`).
    pub fn from_bytes(bytes: &[u8], len: usize) -> Self {
        let mut words = AlignedBuf::zeroed(len.div_ceil(64));
        let w = words.as_mut_slice();
        for (i, chunk) in bytes.chunks(8).enumerate().take(w.len()) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            w[i] = u64::from_le_bytes(buf);
        }
        if len % 64 != 0 {
            if let Some(last) = w.last_mut() {
                *last &= (1u64 << (len % 64)) - 1;
            }
        }
        Bitmap { words, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    pub fn alignment(&self) -> usize {
        self.words.alignment()
    }
}

impl fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
        write!(f, "Bitmap({s})")
    }
}

fn is_valid(validity: &Option<Bitmap>, i: usize) -> bool {
    validity.as_ref().is_none_or(|v| v.get(i))
}

// ---------------------------------------------------------------------------
// selection vectors

/// Strictly increasing row indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelectionVector {
    rows: Vec<u32>,
}

impl SelectionVector {
    pub fn all(n: usize) -> Self {
        SelectionVector { rows: (0..n as u32).collect() }
    }

    pub fn empty() -> Self {
        SelectionVector::default()
    }

    /// Returns `None` unless `rows` is strictly increasing.
    pub fn from_rows(rows: Vec<u32>) -> Option<Self> {
        rows.windows(2).all(|w| w[0] < w[1]).then_some(SelectionVector { rows })
    }


    pub fn as_slice(&self) -> &[u32] {
        &self.rows
    }

    pub fn into_vec(self) -> Vec<u32> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_valid_for(&self, rows: usize) -> bool {
        self.rows.last().is_none_or(|&r| (r as usize) < rows)
    }
}

// ---------------------------------------------------------------------------
// vectors

thread_local! {
    static DICTIONARY_LOOKUPS: Cell<u64> = const { Cell::new(0) };
}

/// Dictionary entries resolved on this thread since the last reset.
pub fn dictionary_lookups() -> u64 {
    DICTIONARY_LOOKUPS.with(Cell::get)
}

pub fn reset_dictionary_lookups() {
    DICTIONARY_LOOKUPS.with(|c| c.set(0));
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlatVector<T: Lane> {
    pub values: AlignedBuf<T>,
    pub validity: Option<Bitmap>,
}

impl<T: Lane> FlatVector<T> {
    pub fn new(values: AlignedBuf<T>, validity: Option<Bitmap>) -> Self {
        FlatVector { values, validity }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        is_valid(&self.validity, i)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoolVector {
    pub values: Bitmap,
    pub validity: Option<Bitmap>,
}

/// Variable-size values addressed through `len + 1` offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetVector {
    pub offsets: AlignedBuf<u32>,
    pub data: AlignedBuf<u8>,
    pub validity: Option<Bitmap>,
}

impl Default for OffsetVector {
    fn default() -> Self {
        OffsetVector { offsets: AlignedBuf::from_slice(&[0]), data: AlignedBuf::new(), validity: None }
    }
}

impl OffsetVector {
    pub fn from_strs<S: AsRef<str>>(xs: &[S]) -> Self {
        let mut offsets = AlignedBuf::with_capacity(xs.len() + 1);
        let mut data = AlignedBuf::new();
        offsets.push(0);
        for s in xs {
            data.extend_from_slice(s.as_ref().as_bytes());
            offsets.push(data.len() as u32);
        }
        OffsetVector { offsets, data, validity: None }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bytes(&self, i: usize) -> &[u8] {
        &self.data[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    pub fn str(&self, i: usize) -> &str {
        // SAFETY: construction validates UTF-8 and that every offset is a
        // character boundary.
        unsafe { std::str::from_utf8_unchecked(self.bytes(i)) }
    }

    pub fn is_valid(&self, i: usize) -> bool {
        is_valid(&self.validity, i)
    }

    pub fn find(&self, s: &str) -> Option<u32> {
        (0..self.len()).find(|&i| self.bytes(i) == s.as_bytes()).map(|i| i as u32)
    }
}

/// Dictionary-coded strings: indices per row into unique values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DictionaryVector {
    pub indices: FlatVector<u32>,
    pub dictionary: OffsetVector,
}

impl DictionaryVector {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Resolves one row; counted by [`dictionary_lookups`].
    pub fn lookup(&self, i: usize) -> &str {
        DICTIONARY_LOOKUPS.with(|c| c.set(c.get() + 1));
        self.dictionary.str(self.indices.values[i] as usize)
    }
}

/// Run-coded unsigned values with cumulative run ends, kept compressed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunVector {
    pub values: AlignedBuf<u64>,
    /// `ends[k]` is one past the last row of run `k`.
    pub ends: AlignedBuf<u64>,
}

impl RunVector {
    pub fn len(&self) -> usize {
        self.ends.last().copied().unwrap_or(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// O(log runs) random access.
    pub fn get(&self, i: usize) -> u64 {
        let k = self.ends.partition_point(|&e| e <= i as u64);
        self.values[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListVector {
    pub offsets: AlignedBuf<u32>,
    pub child: Box<Vector>,
    pub validity: Option<Bitmap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructVector {
    pub fields: Vec<(String, Vector)>,
    pub validity: Option<Bitmap>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Vector {
    Bool(BoolVector),
    I32(FlatVector<i32>),
    U32(FlatVector<u32>),
    I64(FlatVector<i64>),
    U64(FlatVector<u64>),
    F32(FlatVector<f32>),
    F64(FlatVector<f64>),
    String(OffsetVector),
    Dictionary(DictionaryVector),
    Run(RunVector),
    List(ListVector),
    Struct(StructVector),
}

impl Vector {
    pub fn len(&self) -> usize {
        match self {
            Vector::Bool(v) => v.values.len(),
            Vector::I32(v) => v.len(),
            Vector::U32(v) => v.len(),
            Vector::I64(v) => v.len(),
            Vector::U64(v) => v.len(),
            Vector::F32(v) => v.len(),
            Vector::F64(v) => v.len(),
            Vector::String(v) => v.len(),
            Vector::Dictionary(v) => v.len(),
            Vector::Run(v) => v.len(),
            Vector::List(v) => v.offsets.len() - 1,
            Vector::Struct(v) => v.len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validity(&self) -> Option<&Bitmap> {
        match self {
            Vector::Bool(v) => v.validity.as_ref(),
            Vector::I32(v) => v.validity.as_ref(),
            Vector::U32(v) => v.validity.as_ref(),
            Vector::I64(v) => v.validity.as_ref(),
            Vector::U64(v) => v.validity.as_ref(),
            Vector::F32(v) => v.validity.as_ref(),
            Vector::F64(v) => v.validity.as_ref(),
            Vector::String(v) => v.validity.as_ref(),
            Vector::Dictionary(v) => v.indices.validity.as_ref(),
            Vector::Run(_) => None,
            Vector::List(v) => v.validity.as_ref(),
            Vector::Struct(v) => v.validity.as_ref(),
        }
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.validity().is_none_or(|v| v.get(i))
    }

    /// Logical value of row `i`, `Null` where the validity bit is clear.
    pub fn value(&self, i: usize) -> Value {
        if !self.is_valid(i) {
            return Value::Null;
        }
        match self {
            Vector::Bool(v) => Value::Bool(v.values.get(i)),
            Vector::I32(v) => Value::I32(v.values[i]),
            Vector::U32(v) => Value::U32(v.values[i]),
            Vector::I64(v) => Value::I64(v.values[i]),
            Vector::U64(v) => Value::U64(v.values[i]),
            Vector::F32(v) => Value::F32(v.values[i]),
            Vector::F64(v) => Value::F64(v.values[i]),
            Vector::String(v) => Value::String(v.str(i).to_owned()),
            Vector::Dictionary(v) => Value::String(v.lookup(i).to_owned()),
            Vector::Run(v) => Value::U64(v.get(i)),
            Vector::List(v) => {
                let (a, b) = (v.offsets[i] as usize, v.offsets[i + 1] as usize);
                Value::List((a..b).map(|j| v.child.value(j)).collect())
            }
            Vector::Struct(v) => Value::Struct(v.fields.iter().map(|(_, f)| f.value(i)).collect()),
        }
    }

    pub fn to_values(&self) -> Vec<Value> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    /// Start-address alignment of every buffer, labelled by role.
    pub fn alignments(&self) -> Vec<(&'static str, usize)> {
        let mut out = Vec::new();
        self.collect_alignments(&mut out);
        out
    }

    fn collect_alignments(&self, out: &mut Vec<(&'static str, usize)>) {
        if let Some(v) = self.validity() {
            out.push(("validity", v.alignment()));
        }
        match self {
            Vector::Bool(v) => out.push(("values", v.values.alignment())),
            Vector::I32(v) => out.push(("values", v.values.alignment())),
            Vector::U32(v) => out.push(("values", v.values.alignment())),
            Vector::I64(v) => out.push(("values", v.values.alignment())),
            Vector::U64(v) => out.push(("values", v.values.alignment())),
            Vector::F32(v) => out.push(("values", v.values.alignment())),
            Vector::F64(v) => out.push(("values", v.values.alignment())),
            Vector::String(v) => {
                out.push(("offsets", v.offsets.alignment()));
                out.push(("data", v.data.alignment()));
            }
            Vector::Dictionary(v) => {
                out.push(("indices", v.indices.values.alignment()));
                out.push(("offsets", v.dictionary.offsets.alignment()));
                out.push(("data", v.dictionary.data.alignment()));
            }
            Vector::Run(v) => {
                out.push(("values", v.values.alignment()));
                out.push(("ends", v.ends.alignment()));
            }
            Vector::List(v) => {
                out.push(("offsets", v.offsets.alignment()));
                v.child.collect_alignments(out);
            }
            Vector::Struct(v) => {
                for (_, f) in &v.fields {
                    f.collect_alignments(out);
                }
            }
        }
    }
}

/// Minimum start-address alignment over all buffers of a vector.
pub fn alignment_of(vector: &Vector) -> usize {
    vector.alignments().into_iter().map(|(_, a)| a).min().unwrap_or(16)
}

/// Values of the selected rows, in selection order. Dictionary vectors
/// resolve one entry per selected row.
pub fn gather(vector: &Vector, selection: &SelectionVector) -> Vec<Value> {
    selection.as_slice().iter().map(|&i| vector.value(i as usize)).collect()
}

// ---------------------------------------------------------------------------
// geometry vectors

#[derive(Debug, Clone, PartialEq)]
pub enum VertexVector {
    /// `x, y` per vertex.
    Plain2d(AlignedBuf<i32>),
    /// `x, y, z, 0` per vertex, one 16-byte record each.
    Plain3d(AlignedBuf<i32>),
    /// Decoded dictionary vertices (`x, y` each) and one index per vertex.
    Dictionary { vertices: AlignedBuf<i32>, offsets: AlignedBuf<u32> },
}

impl VertexVector {
    pub fn len(&self) -> usize {
        match self {
            VertexVector::Plain2d(b) => b.len() / 2,
            VertexVector::Plain3d(b) => b.len() / 4,
            VertexVector::Dictionary { offsets, .. } => offsets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vertex(&self, i: usize) -> (i32, i32, i32) {
        match self {
            VertexVector::Plain2d(b) => (b[2 * i], b[2 * i + 1], 0),
            VertexVector::Plain3d(b) => (b[4 * i], b[4 * i + 1], b[4 * i + 2]),
            VertexVector::Dictionary { vertices, offsets } => {
                let k = offsets[i] as usize;
                (vertices[2 * k], vertices[2 * k + 1], 0)
            }
        }
    }

    pub fn alignment(&self) -> usize {
        match self {
            VertexVector::Plain2d(b) | VertexVector::Plain3d(b) => b.alignment(),
            VertexVector::Dictionary { vertices, offsets } => vertices.alignment().min(offsets.alignment()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryVector {
    pub dimensions: u8,
    /// Geometry type code per row.
    pub types: AlignedBuf<u8>,
    pub geometries: Option<AlignedBuf<u32>>,
    pub rings: Option<AlignedBuf<u32>>,
    pub vertex_counts: Option<AlignedBuf<u32>>,
    pub vertices: VertexVector,
    pub index_buffer: Option<IndexBuffer>,
}

impl GeometryVector {
    pub fn geometry_type(&self, row: usize) -> GeometryType {
        GeometryType::from_code(self.types[row] as u64).expect("validated at construction")
    }

    /// Topology view with a plain vertex buffer, for rebuilding geometries.
    pub fn to_topology(&self) -> TopologySet {
        let dims = self.dimensions as usize;
        let mut coords = Vec::with_capacity(self.vertices.len() * dims);
        for i in 0..self.vertices.len() {
            let (x, y, z) = self.vertices.vertex(i);
            coords.extend_from_slice(&[x, y, z][..dims]);
        }
        TopologySet {
            dimensions: self.dimensions,
            types: (0..self.types.len()).map(|i| self.geometry_type(i)).collect(),
            geometries: self.geometries.as_ref().map(|b| b.to_vec()),
            rings: self.rings.as_ref().map(|b| b.to_vec()),
            vertices: self.vertex_counts.as_ref().map(|b| b.to_vec()),
            vertex_buffer: VertexBuffer::Plain(coords),
        }
    }
}

fn geometry_vector(topology: TopologySet, index_buffer: Option<IndexBuffer>) -> ColumnResult<GeometryVector> {
    let buf = |v: Option<Vec<u32>>| v.map(|v| AlignedBuf::from_slice(&v));
    let vertices = match topology.vertex_buffer {
        VertexBuffer::Plain(coords) if topology.dimensions == 3 => {
            let mut b = AlignedBuf::zeroed(coords.len() / 3 * 4);
            for (dst, src) in b.as_mut_slice().chunks_exact_mut(4).zip(coords.chunks_exact(3)) {
                dst[..3].copy_from_slice(src);
            }
            VertexVector::Plain3d(b)
        }
        VertexBuffer::Plain(coords) => VertexVector::Plain2d(AlignedBuf::from_slice(&coords)),
        VertexBuffer::Dictionary { dictionary, offsets } => VertexVector::Dictionary {
            vertices: dictionary_vertices(&dictionary),
            offsets: AlignedBuf::from_slice(&offsets),
        },
    };
    Ok(GeometryVector {
        dimensions: topology.dimensions,
        types: topology.types.iter().map(|&t| t as u8).collect(),
        geometries: buf(topology.geometries),
        rings: buf(topology.rings),
        vertex_counts: buf(topology.vertices),
        vertices,
        index_buffer,
    })
}

fn dictionary_vertices(dict: &VertexDictionary) -> AlignedBuf<i32> {
    let mut b = AlignedBuf::zeroed(dict.codes.len() * 2);
    for (dst, &code) in b.as_mut_slice().chunks_exact_mut(2).zip(&dict.codes) {
        let (x, y) = morton_decode(code, dict.bias, dict.shift);
        dst[0] = x;
        dst[1] = y;
    }
    b
}

// ---------------------------------------------------------------------------
// stream -> vector

fn present_rows(present: &Option<Bitmap>, rows: usize) -> usize {
    present.as_ref().map_or(rows, Bitmap::count_ones)
}

/// Writes compact values to their row slots, leaving zeros at null rows.
fn scatter<T: Lane>(compact: &[T], present: &Option<Bitmap>, rows: usize) -> AlignedBuf<T> {
    let Some(p) = present else {
        return AlignedBuf::from_slice(compact);
    };
    let mut out = AlignedBuf::zeroed(rows);
    let dst = out.as_mut_slice();
    let mut k = 0;
    for (w, &word) in p.words().iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            let i = w * 64 + bits.trailing_zeros() as usize;
            dst[i] = compact[k];
            k += 1;
            bits &= bits - 1;
        }
    }
    out
}

fn map_lanes<T: Lane>(lanes: &[u64], f: impl Fn(u64) -> Option<T>, ty: ScalarType) -> ColumnResult<Vec<T>> {
    lanes
        .iter()
        .map(|&v| f(v).ok_or_else(|| invalid(format!("value {v} out of range for {ty:?}"))))
        .collect()
}

fn flat<T: Lane>(compact: &[T], present: Option<Bitmap>, rows: usize) -> FlatVector<T> {
    FlatVector { values: scatter(compact, &present, rows), validity: present }
}

fn fixed_width<const N: usize, T: Lane>(stream: &Stream<'_>, f: fn([u8; N]) -> T) -> ColumnResult<Vec<T>> {
    Ok(storage::decode_fixed::<N>(stream)?.into_iter().map(f).collect())
}

/// Offsets for the placeholder layout: null rows get empty values.
fn row_offsets(lengths: &[u64], present: &Option<Bitmap>, rows: usize) -> ColumnResult<AlignedBuf<u32>> {
    let mut offsets = AlignedBuf::with_capacity(rows + 1);
    offsets.push(0u32);
    let mut acc = 0u64;
    let mut k = 0;
    for i in 0..rows {
        if is_valid(present, i) {
            acc += lengths[k];
            k += 1;
        }
        offsets.push(u32::try_from(acc).map_err(|_| invalid("offset exceeds u32"))?);
    }
    Ok(offsets)
}

fn check_boundaries(data: &[u8], offsets: &[u32]) -> ColumnResult<()> {
    let s = std::str::from_utf8(data).map_err(|_| invalid("invalid UTF-8 in string data"))?;
    if offsets.iter().any(|&o| !s.is_char_boundary(o as usize)) {
        return Err(invalid("string offset splits a character"));
    }
    Ok(())
}

fn string_vector(cursor: &mut StreamCursor<'_, '_>, present: Option<Bitmap>, rows: usize) -> ColumnResult<Vector> {
    let count = present_rows(&present, rows);
    let ss = decode_string_streams(cursor, count)?;
    match ss.indices {
        None => {
            let offsets = row_offsets(&ss.lengths, &present, rows)?;
            check_boundaries(ss.data, &offsets)?;
            Ok(Vector::String(OffsetVector { offsets, data: AlignedBuf::from_slice(ss.data), validity: present }))
        }
        Some(idx) => {
            let dict_offsets = row_offsets(&ss.lengths, &None, ss.lengths.len())?;
            check_boundaries(ss.data, &dict_offsets)?;
            let dictionary = OffsetVector { offsets: dict_offsets, data: AlignedBuf::from_slice(ss.data), validity: None };
            let n = dictionary.len() as u64;
            let indices = map_lanes(&decode_lanes(&idx)?, |v| (v < n).then_some(v as u32), ScalarType::String)?;
            Ok(Vector::Dictionary(DictionaryVector { indices: flat(&indices, present, rows), dictionary }))
        }
    }
}

fn scalar_vector(
    cursor: &mut StreamCursor<'_, '_>,
    ty: ScalarType,
    present: Option<Bitmap>,
    rows: usize,
) -> ColumnResult<Vector> {
    if ty == ScalarType::String {
        return string_vector(cursor, present, rows);
    }
    let count = present_rows(&present, rows);
    let s = cursor.expect(StreamKind::Data, "data")?;
    expect_count(&s, count)?;
    Ok(match ty {
        ScalarType::Boolean => {
            let bits = storage::decode_bitset(&s)?;
            let rows_bits: Vec<bool> = match &present {
                None => bits,
                Some(p) => {
                    let mut it = bits.into_iter();
                    p.iter().map(|v| v && it.next().unwrap()).collect()
                }
            };
            Vector::Bool(BoolVector { values: Bitmap::from_bools(&rows_bits), validity: present })
        }
        ScalarType::Int32 => {
            let v = map_lanes(&decode_lanes(&s)?, |v| i32::try_from(v as i64).ok(), ty)?;
            Vector::I32(flat(&v, present, rows))
        }
        ScalarType::UInt32 => {
            let v = map_lanes(&decode_lanes(&s)?, |v| u32::try_from(v).ok(), ty)?;
            Vector::U32(flat(&v, present, rows))
        }
        ScalarType::Int64 => {
            let lanes = decode_lanes(&s)?;
            let v: Vec<i64> = lanes.iter().map(|&v| v as i64).collect();
            Vector::I64(flat(&v, present, rows))
        }
        ScalarType::UInt64 => Vector::U64(flat(&decode_lanes(&s)?, present, rows)),
        ScalarType::Float32 => Vector::F32(flat(&fixed_width::<4, f32>(&s, f32::from_le_bytes)?, present, rows)),
        ScalarType::Float64 => Vector::F64(flat(&fixed_width::<8, f64>(&s, f64::from_le_bytes)?, present, rows)),
        ScalarType::String => unreachable!(),
    })
}

/// Present bits over `count` rows, widened to the `rows` slots marked in
/// `outer` when the column lives inside a struct.
fn widen(inner: Option<Bitmap>, outer: &Option<Bitmap>, rows: usize) -> Option<Bitmap> {
    match (inner, outer) {
        (inner, None) => inner,
        (None, Some(o)) => Some(o.clone()),
        (Some(i), Some(o)) => {
            let mut it = i.iter();
            let bits: Vec<bool> = (0..rows).map(|r| o.get(r) && it.next().unwrap()).collect();
            Some(Bitmap::from_bools(&bits))
        }
    }
}

fn attribute_vector(
    cursor: &mut StreamCursor<'_, '_>,
    ty: &ColumnType,
    nullable: bool,
    rows: usize,
) -> ColumnResult<Vector> {
    let present = decode_present_bits(cursor, nullable, rows)?.map(|(bytes, n)| Bitmap::from_bytes(bytes, n));
    let count = present_rows(&present, rows);
    match ty {
        ColumnType::Scalar(t) => scalar_vector(cursor, *t, present, rows),
        ColumnType::List(t) => {
            let len_stream = cursor.expect(StreamKind::Length, "length")?;
            expect_count(&len_stream, count)?;
            let lengths = decode_lanes(&len_stream)?;
            let total = lengths.iter().try_fold(0u64, |a, &l| a.checked_add(l)).ok_or_else(|| invalid("list length overflow"))?;
            if total > cursor.max_values() as u64 {
                return Err(ColumnError(CorruptKind::LimitExceeded { count: total, limit: cursor.max_values() }));
            }
            let offsets = row_offsets(&lengths, &present, rows)?;
            let child = scalar_vector(cursor, *t, None, total as usize)?;
            Ok(Vector::List(ListVector { offsets, child: Box::new(child), validity: present }))
        }
        ColumnType::Struct(fields) => {
            let mut out = Vec::with_capacity(fields.len());
            for (name, t) in fields {
                let inner = decode_present_bits(cursor, nullable, count)?.map(|(b, n)| Bitmap::from_bytes(b, n));
                let field_present = if nullable { widen(inner, &present, rows) } else { None };
                out.push((name.clone(), scalar_vector(cursor, *t, field_present, rows)?));
            }
            Ok(Vector::Struct(StructVector { fields: out, validity: present, len: rows }))
        }
    }
}

/// Builds the vector for one attribute column.
pub fn column_to_vector(
    streams: &[Stream<'_>],
    descriptor: &ColumnDescriptor,
    rows: usize,
    profile: EncodingProfile,
    opts: &DecodeOptions,
) -> ColumnResult<Vector> {
    let DescriptorType::Attribute(ty) = &descriptor.ty else {
        return Err(invalid("not an attribute column"));
    };
    let mut cursor = StreamCursor::new(streams, profile, opts);
    let v = attribute_vector(&mut cursor, ty, descriptor.nullable, rows)?;
    cursor.finish()?;
    Ok(v)
}

/// Id column; run-coded ids stay compressed.
pub fn id_vector(streams: &[Stream<'_>], rows: usize, profile: EncodingProfile, opts: &DecodeOptions) -> ColumnResult<Vector> {
    let mut cursor = StreamCursor::new(streams, profile, opts);
    let s = cursor.expect(StreamKind::Data, "data")?;
    cursor.finish()?;
    expect_count(&s, rows)?;
    if matches!(s.header.logical.technique, LogicalTechnique::Rle | LogicalTechnique::DeltaRle) {
        let runs = decode_stream_runs(&s)?;
        let mut ends = AlignedBuf::with_capacity(runs.lengths.len());
        let mut acc = 0u64;
        for l in &runs.lengths {
            acc += l;
            ends.push(acc);
        }
        return Ok(Vector::Run(RunVector { values: AlignedBuf::from_slice(&runs.values), ends }));
    }
    debug_assert_eq!(count_of(&s), rows);
    Ok(Vector::U64(FlatVector { values: AlignedBuf::from_slice(&decode_lanes(&s)?), validity: None }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    pub name: String,
    pub extent: u32,
    pub dimensions: u8,
    pub synthetic_ids: bool,
    pub rows: usize,
    pub ids: Vector,
    pub geometry: GeometryVector,
    pub columns: Vec<(ColumnDescriptor, Vector)>,
}

impl VectorTable {
    pub fn column(&self, name: &str) -> Option<&Vector> {
        self.columns.iter().find(|(d, _)| d.name == name).map(|(_, v)| v)
    }

    pub fn descriptor(&self, name: &str) -> Option<&ColumnDescriptor> {
        self.columns.iter().find(|(d, _)| d.name == name).map(|(d, _)| d)
    }

    /// Logical table equivalent to the vectors.
    pub fn to_feature_table(&self) -> ColumnResult<FeatureTable> {
        Ok(FeatureTable {
            name: self.name.clone(),
            extent: self.extent,
            dimensions: self.dimensions,
            synthetic_ids: self.synthetic_ids,
            ids: (0..self.rows)
                .map(|i| match self.ids.value(i) {
                    Value::U64(id) => id,
                    _ => unreachable!("id vectors are non-null u64"),
                })
                .collect(),
            geometries: rebuild_geometries(&self.geometry.to_topology())?,
            columns: self
                .columns
                .iter()
                .map(|(d, v)| Column::new(d.column_def().unwrap(), v.to_values()))
                .collect(),
        })
    }
}

pub fn decode_vector_table(
    raw: &storage::RawTable<'_>,
    profile: EncodingProfile,
    opts: &DecodeOptions,
) -> Result<VectorTable, StorageError> {
    let ctx = |column: &str| {
        let table = raw.name.clone();
        let column = column.to_string();
        move |e: ColumnError| StorageError::CorruptStream { table: table.clone(), column: column.clone(), kind: e.0 }
    };
    let rows = raw.feature_count;
    let ids = id_vector(&raw.columns[0].streams, rows, profile, opts).map_err(ctx("id"))?;
    let gs = decode_geometry_streams(&raw.columns[1].streams, rows, raw.dimensions, profile, opts).map_err(ctx("geometry"))?;
    let vertex_count = gs.topology.vertex_count();
    let geometry = geometry_vector(gs.topology, gs.index_buffer).map_err(ctx("geometry"))?;
    let mut columns = Vec::with_capacity(raw.columns.len() - 2);
    for col in &raw.columns[2..] {
        let d = &col.descriptor;
        let n = match d.scope {
            AttributeScope::Feature => rows,
            AttributeScope::Vertex => vertex_count,
        };
        let v = column_to_vector(&col.streams, d, n, profile, opts).map_err(ctx(&d.name))?;
        columns.push((d.clone(), v));
    }
    Ok(VectorTable {
        name: raw.name.clone(),
        extent: raw.extent,
        dimensions: raw.dimensions,
        synthetic_ids: raw.synthetic_ids,
        rows,
        ids,
        geometry,
        columns,
    })
}

/// Decodes a `.mlt` tile straight into vector tables.
pub fn decode_vector_tile(bytes: &[u8], opts: &DecodeOptions) -> Result<Vec<VectorTable>, StorageError> {
    let raw = read_tile(bytes, opts)?;
    raw.tables.iter().map(|t| decode_vector_table(t, raw.profile, opts)).collect()
}
