//! Lightweight codec primitives and the cascade selector.
//!
//! Integer streams are handled as `u64` lanes. Signed domains store the
//! two's-complement bits of each `i64` in the lane and set the zigzag flag of
//! their [`LogicalEncoding`], so the transform runs after the logical stage and
//! before the physical one.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Values per frame-of-reference block.
pub const BLOCK_LEN: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodingError {
    #[error("truncated input at byte {offset}")]
    Truncated { offset: usize },
    #[error("varint longer than 10 bytes at byte {offset}")]
    VarintOverflow { offset: usize },
    #[error("invalid bit width {width}")]
    InvalidWidth { width: u8 },
    #[error("invalid exception at block position {position}")]
    InvalidException { position: usize },
    #[error("decoded value overflows 64 bits")]
    ValueOverflow,
    #[error("run lengths sum to {actual}, expected {expected}")]
    RunLengthMismatch { expected: u64, actual: u64 },
    #[error("{count} values cannot fit in {bytes} bytes")]
    ImplausibleCount { count: usize, bytes: usize },
    #[error("unknown encoding id {0}")]
    UnknownEncoding(u8),
    #[error("encoding not permitted: {0}")]
    NotPermitted(&'static str),
}

pub type Result<T> = std::result::Result<T, EncodingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EncodingProfile {
    Simple,
    Advanced,
}

impl EncodingProfile {
    pub fn code(self) -> u8 {
        match self {
            EncodingProfile::Simple => 0,
            EncodingProfile::Advanced => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EncodingProfile::Simple),
            1 => Some(EncodingProfile::Advanced),
            _ => None,
        }
    }

    fn default_physical(self) -> PhysicalEncoding {
        match self {
            EncodingProfile::Simple => PhysicalEncoding::Varint,
            EncodingProfile::Advanced => PhysicalEncoding::BitpackFor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhysicalEncoding {
    Plain,
    Varint,
    BitpackFor,
}

impl PhysicalEncoding {
    pub fn code(self) -> u8 {
        match self {
            PhysicalEncoding::Plain => 0,
            PhysicalEncoding::Varint => 1,
            PhysicalEncoding::BitpackFor => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(PhysicalEncoding::Plain),
            1 => Ok(PhysicalEncoding::Varint),
            2 => Ok(PhysicalEncoding::BitpackFor),
            _ => Err(EncodingError::UnknownEncoding(code)),
        }
    }

    pub fn allowed_in(self, profile: EncodingProfile) -> bool {
        self != PhysicalEncoding::BitpackFor || profile == EncodingProfile::Advanced
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogicalTechnique {
    None,
    Delta,
    Rle,
    DeltaRle,
    Dictionary,
}

/// A logical stage with an optional zigzag step composed after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogicalEncoding {
    pub technique: LogicalTechnique,
    pub zigzag: bool,
}

impl LogicalEncoding {
    pub const NONE: LogicalEncoding = LogicalEncoding { technique: LogicalTechnique::None, zigzag: false };

    pub const fn new(technique: LogicalTechnique, zigzag: bool) -> Self {
        LogicalEncoding { technique, zigzag }
    }

    pub fn code(self) -> u8 {
        let t = match self.technique {
            LogicalTechnique::None => 0,
            LogicalTechnique::Delta => 1,
            LogicalTechnique::Rle => 2,
            LogicalTechnique::DeltaRle => 3,
            LogicalTechnique::Dictionary => 4,
        };
        t | (self.zigzag as u8) << 3
    }

    pub fn from_code(code: u8) -> Result<Self> {
        if code & !0x0f != 0 {
            return Err(EncodingError::UnknownEncoding(code));
        }
        let technique = match code & 0x07 {
            0 => LogicalTechnique::None,
            1 => LogicalTechnique::Delta,
            2 => LogicalTechnique::Rle,
            3 => LogicalTechnique::DeltaRle,
            4 => LogicalTechnique::Dictionary,
            _ => return Err(EncodingError::UnknownEncoding(code)),
        };
        Ok(LogicalEncoding { technique, zigzag: code & 0x08 != 0 })
    }

    /// Encodings that allow operating on the compressed form directly.
    pub fn is_transparent(self) -> bool {
        matches!(
            self.technique,
            LogicalTechnique::Rle | LogicalTechnique::DeltaRle | LogicalTechnique::Dictionary
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Signed,
    Unsigned,
    String,
}

// ---------------------------------------------------------------------------
// zigzag / varint

#[inline]
pub fn zigzag(n: i64) -> u64 {
    ((n << 1) ^ (n >> 63)) as u64
}

#[inline]
pub fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

/// Appends the LEB128 encoding of `u`, returning the number of bytes written.
#[inline]
pub fn varint_put(mut u: u64, out: &mut Vec<u8>) -> usize {
    let mut n = 1;
    while u >= 0x80 {
        out.push((u as u8) | 0x80);
        u >>= 7;
        n += 1;
    }
    out.push(u as u8);
    n
}

/// Reads one LEB128 value from the front of `buf`, returning it and the
/// number of bytes consumed.
#[inline]
pub fn varint_get(buf: &[u8]) -> Result<(u64, usize)> {
    let mut value: u64 = 0;
    for (i, &b) in buf.iter().enumerate().take(10) {
        let payload = (b & 0x7f) as u64;
        if i == 9 && payload > 1 {
            return Err(EncodingError::VarintOverflow { offset: i });
        }
        value |= payload << (7 * i);
        if b & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    if buf.len() >= 10 {
        Err(EncodingError::VarintOverflow { offset: 9 })
    } else {
        Err(EncodingError::Truncated { offset: buf.len() })
    }
}

pub fn varint_len(u: u64) -> usize {
    (64 - (u | 1).leading_zeros() as usize).div_ceil(7)
}

/// Bounds-checked cursor over an encoded buffer.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    #[inline]
    pub fn varint(&mut self) -> Result<u64> {
        match varint_get(&self.buf[self.pos..]) {
            Ok((v, n)) => {
                self.pos += n;
                Ok(v)
            }
            Err(EncodingError::Truncated { offset }) => {
                Err(EncodingError::Truncated { offset: self.pos + offset })
            }
            Err(EncodingError::VarintOverflow { offset }) => {
                Err(EncodingError::VarintOverflow { offset: self.pos + offset })
            }
            Err(e) => Err(e),
        }
    }

    pub fn varint_usize(&mut self) -> Result<usize> {
        let v = self.varint()?;
        usize::try_from(v).map_err(|_| EncodingError::ValueOverflow)
    }

    pub fn u8(&mut self) -> Result<u8> {
        let b = *self.buf.get(self.pos).ok_or(EncodingError::Truncated { offset: self.pos })?;
        self.pos += 1;
        Ok(b)
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(EncodingError::Truncated { offset: self.buf.len() });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

pub fn varint_encode_all(values: &[u64], out: &mut Vec<u8>) {
    for &v in values {
        varint_put(v, out);
    }
}

pub fn varint_decode_all(reader: &mut Reader<'_>, count: usize) -> Result<Vec<u64>> {
    if count > reader.remaining() {
        return Err(EncodingError::ImplausibleCount { count, bytes: reader.remaining() });
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(reader.varint()?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// delta / rle

/// `out[0] = xs[0]`, `out[i] = xs[i] - xs[i-1]` with wrapping arithmetic.
pub fn delta_encode(xs: &[i64]) -> Vec<i64> {
    let mut prev = 0i64;
    xs.iter()
        .map(|&x| {
            let d = x.wrapping_sub(prev);
            prev = x;
            d
        })
        .collect()
}

pub fn prefix_sum(deltas: &[i64]) -> Vec<i64> {
    let mut acc = 0i64;
    deltas
        .iter()
        .map(|&d| {
            acc = acc.wrapping_add(d);
            acc
        })
        .collect()
}

fn delta_lanes(xs: &[u64]) -> Vec<u64> {
    let mut prev = 0u64;
    xs.iter()
        .map(|&x| {
            let d = x.wrapping_sub(prev);
            prev = x;
            d
        })
        .collect()
}

fn prefix_sum_lanes(xs: &mut [u64]) {
    let mut acc = 0u64;
    for x in xs {
        acc = acc.wrapping_add(*x);
        *x = acc;
    }
}

/// Splits `xs` into maximal runs, returning `(values, run_lengths)`.
pub fn rle_encode(xs: &[u64]) -> (Vec<u64>, Vec<u64>) {
    let mut values = Vec::new();
    let mut lengths: Vec<u64> = Vec::new();
    for &x in xs {
        match values.last() {
            Some(&last) if last == x => *lengths.last_mut().unwrap() += 1,
            _ => {
                values.push(x);
                lengths.push(1);
            }
        }
    }
    (values, lengths)
}

/// Expands runs back into `expected` values.
pub fn rle_decode(values: &[u64], lengths: &[u64], expected: usize) -> Result<Vec<u64>> {
    let total = lengths.iter().try_fold(0u64, |acc, &l| acc.checked_add(l));
    match total {
        Some(t) if t == expected as u64 && values.len() == lengths.len() => {}
        other => {
            return Err(EncodingError::RunLengthMismatch {
                expected: expected as u64,
                actual: other.unwrap_or(u64::MAX),
            })
        }
    }
    let mut out = Vec::with_capacity(expected);
    for (&v, &l) in values.iter().zip(lengths) {
        out.extend(std::iter::repeat(v).take(l as usize));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// patched frame-of-reference bit packing

fn bit_width(v: u64) -> u8 {
    (64 - v.leading_zeros()) as u8
}

/// Header of one packed block, exposed for inspection in tests and tools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockInfo {
    pub reference: u64,
    pub width: u8,
    pub exceptions: Vec<(usize, u64)>,
    pub payload_len: usize,
}

/// Packs `xs` in blocks of 128 values. Each block stores its minimum as a
/// reference, a bit width covering the 90th-percentile residual, the packed
/// low bits of every residual (LSB-first) and a patch list holding the high
/// bits of residuals wider than the block width.
pub fn bitpack_for_encode(xs: &[u64]) -> Vec<u8> {
    let mut out = Vec::new();
    bitpack_for_encode_into(xs, &mut out);
    out
}

pub fn bitpack_for_encode_into(xs: &[u64], out: &mut Vec<u8>) {
    let mut residuals = Vec::with_capacity(BLOCK_LEN);
    let mut sorted = Vec::with_capacity(BLOCK_LEN);
    for block in xs.chunks(BLOCK_LEN) {
        let reference = *block.iter().min().unwrap();
        residuals.clear();
        residuals.extend(block.iter().map(|&x| x - reference));
        sorted.clear();
        sorted.extend_from_slice(&residuals);
        sorted.sort_unstable();
        let rank = (block.len() * 9).div_ceil(10) - 1;
        let width = bit_width(sorted[rank]);

        varint_put(reference, out);
        out.push(width);
        let exceptions: Vec<(usize, u64)> = if width == 64 {
            Vec::new()
        } else {
            residuals
                .iter()
                .enumerate()
                .filter(|(_, &r)| r >> width != 0)
                .map(|(i, &r)| (i, r >> width))
                .collect()
        };
        varint_put(exceptions.len() as u64, out);

        let mask = low_mask(width);
        let mut acc: u128 = 0;
        let mut nbits = 0u32;
        for &r in &residuals {
            acc |= ((r & mask) as u128) << nbits;
            nbits += width as u32;
            while nbits >= 8 {
                out.push(acc as u8);
                acc >>= 8;
                nbits -= 8;
            }
        }
        if nbits > 0 {
            out.push(acc as u8);
        }
        for (pos, high) in exceptions {
            out.push(pos as u8);
            varint_put(high, out);
        }
    }
}

#[inline]
fn low_mask(width: u8) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Decodes `count` values written by [`bitpack_for_encode`].
pub fn bitpack_for_decode(buf: &[u8], count: usize) -> Result<Vec<u64>> {
    let mut reader = Reader::new(buf);
    let out = bitpack_for_decode_from(&mut reader, count)?;
    Ok(out)
}

pub fn bitpack_for_decode_from(reader: &mut Reader<'_>, count: usize) -> Result<Vec<u64>> {
    // every block carries at least three header bytes
    let max_blocks = reader.remaining() / 3;
    if count.div_ceil(BLOCK_LEN) > max_blocks {
        return Err(EncodingError::ImplausibleCount { count, bytes: reader.remaining() });
    }
    let mut out = Vec::with_capacity(count);
    let mut left = count;
    while left > 0 {
        let n = left.min(BLOCK_LEN);
        decode_block(reader, n, &mut out)?;
        left -= n;
    }
    Ok(out)
}

fn decode_block(reader: &mut Reader<'_>, n: usize, out: &mut Vec<u64>) -> Result<()> {
    let reference = reader.varint()?;
    let width = reader.u8()?;
    if width > 64 {
        return Err(EncodingError::InvalidWidth { width });
    }
    let exception_count = reader.varint_usize()?;
    if exception_count > n || (width == 64 && exception_count > 0) {
        return Err(EncodingError::InvalidException { position: exception_count });
    }
    let packed = reader.bytes((n * width as usize).div_ceil(8))?;
    let start = out.len();
    unpack(packed, width, n, out);
    for _ in 0..exception_count {
        let pos = reader.u8()? as usize;
        let high = reader.varint()?;
        if pos >= n || high.leading_zeros() < width as u32 {
            return Err(EncodingError::InvalidException { position: pos });
        }
        out[start + pos] |= high << width;
    }
    for v in &mut out[start..] {
        *v = v.checked_add(reference).ok_or(EncodingError::ValueOverflow)?;
    }
    Ok(())
}

#[inline]
fn unpack(packed: &[u8], width: u8, n: usize, out: &mut Vec<u64>) {
    if width == 0 {
        out.extend(std::iter::repeat(0).take(n));
        return;
    }
    let w = width as usize;
    let mask = low_mask(width);
    for i in 0..n {
        let bit = i * w;
        let byte = bit / 8;
        let shift = bit % 8;
        let mut window = [0u8; 16];
        let end = (byte + 16).min(packed.len());
        window[..end - byte].copy_from_slice(&packed[byte..end]);
        let word = u128::from_le_bytes(window) >> shift;
        out.push(word as u64 & mask);
    }
}

/// Block headers of a packed buffer.
pub fn bitpack_for_blocks(buf: &[u8], count: usize) -> Result<Vec<BlockInfo>> {
    let mut reader = Reader::new(buf);
    let mut blocks = Vec::new();
    let mut left = count;
    while left > 0 {
        let n = left.min(BLOCK_LEN);
        let reference = reader.varint()?;
        let width = reader.u8()?;
        let exception_count = reader.varint_usize()?;
        let payload_len = (n * width as usize).div_ceil(8);
        reader.bytes(payload_len)?;
        let mut exceptions = Vec::new();
        for _ in 0..exception_count {
            let pos = reader.u8()? as usize;
            exceptions.push((pos, reader.varint()?));
        }
        blocks.push(BlockInfo { reference, width, exceptions, payload_len });
        left -= n;
    }
    Ok(blocks)
}

// ---------------------------------------------------------------------------
// bitsets and dictionaries

/// Bit `i` of byte `i / 8`, LSB-first; trailing pad bits are zero.
pub fn bitset_encode(flags: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; flags.len().div_ceil(8)];
    for (i, &f) in flags.iter().enumerate() {
        if f {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn bitset_decode(bytes: &[u8], count: usize) -> Result<Vec<bool>> {
    if bytes.len() < count.div_ceil(8) {
        return Err(EncodingError::Truncated { offset: bytes.len() });
    }
    Ok((0..count).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

/// Dictionary in first-occurrence order plus one index per input value.
pub fn dict_encode<S: AsRef<str>>(xs: &[S]) -> (Vec<String>, Vec<u64>) {
    let mut lookup: std::collections::HashMap<&str, u64> = std::collections::HashMap::new();
    let mut dictionary = Vec::new();
    let indices = xs
        .iter()
        .map(|s| {
            let s = s.as_ref();
            *lookup.entry(s).or_insert_with(|| {
                dictionary.push(s.to_string());
                dictionary.len() as u64 - 1
            })
        })
        .collect();
    (dictionary, indices)
}

// ---------------------------------------------------------------------------
// cascade selection

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamStats {
    pub count: usize,
    pub min: i128,
    pub max: i128,
    pub distinct_count: usize,
    /// Non-decreasing in the stream's domain order.
    pub sorted: bool,
    /// Number of maximal runs of equal values.
    pub run_count: usize,
}

impl StreamStats {
    /// Stats over lanes; `signed` selects `i64` ordering.
    pub fn from_lanes(values: &[u64], signed: bool) -> Self {
        let key = |v: u64| if signed { v as i64 as i128 } else { v as i128 };
        let mut stats = StreamStats {
            count: values.len(),
            min: 0,
            max: 0,
            distinct_count: 0,
            sorted: true,
            run_count: 0,
        };
        if values.is_empty() {
            return stats;
        }
        stats.min = i128::MAX;
        stats.max = i128::MIN;
        let mut prev: Option<i128> = None;
        let mut distinct = HashSet::with_capacity(values.len().min(1 << 16));
        for &v in values {
            let k = key(v);
            stats.min = stats.min.min(k);
            stats.max = stats.max.max(k);
            match prev {
                Some(p) if p == k => {}
                Some(p) => {
                    if k < p {
                        stats.sorted = false;
                    }
                    stats.run_count += 1;
                }
                None => stats.run_count += 1,
            }
            prev = Some(k);
            distinct.insert(v);
        }
        stats.distinct_count = distinct.len();
        stats
    }

    pub fn from_unsigned(values: &[u64]) -> Self {
        Self::from_lanes(values, false)
    }

    pub fn from_signed(values: &[i64]) -> Self {
        let lanes: Vec<u64> = values.iter().map(|&v| v as u64).collect();
        Self::from_lanes(&lanes, true)
    }

    pub fn from_strings<S: AsRef<str>>(values: &[S]) -> Self {
        let distinct: HashSet<&str> = values.iter().map(|s| s.as_ref()).collect();
        let run_count = values
            .iter()
            .enumerate()
            .filter(|(i, s)| *i == 0 || values[i - 1].as_ref() != s.as_ref())
            .count();
        let sorted = values.windows(2).all(|w| w[0].as_ref() <= w[1].as_ref());
        StreamStats {
            count: values.len(),
            min: 0,
            max: 0,
            distinct_count: distinct.len(),
            sorted,
            run_count,
        }
    }
}

/// Picks a legal encoding for a stream from its stats.
///
/// Rule ladder, first match wins:
/// 1. sorted and all distinct: delta.
/// 2. sorted with at most `count / 4` runs: delta-RLE (run values delta coded).
/// 3. at most `count / 4` runs: RLE.
/// 4. otherwise no logical stage.
///
/// The physical stage is varint under the simple profile and bit-packed FOR
/// under the advanced one; signed domains are zigzagged. Strings use a
/// dictionary whenever any value repeats.
pub fn select_encoding(
    stats: &StreamStats,
    domain: Domain,
    profile: EncodingProfile,
) -> (LogicalEncoding, PhysicalEncoding) {
    let physical = profile.default_physical();
    let zigzag = domain == Domain::Signed;
    let technique = match domain {
        Domain::String => {
            return if stats.count > 0 && stats.distinct_count < stats.count {
                (LogicalEncoding::new(LogicalTechnique::Dictionary, false), PhysicalEncoding::Plain)
            } else {
                (LogicalEncoding::NONE, PhysicalEncoding::Plain)
            };
        }
        _ if stats.count == 0 => LogicalTechnique::None,
        _ if stats.sorted && stats.distinct_count == stats.count => LogicalTechnique::Delta,
        _ if stats.sorted && stats.run_count <= stats.count / 4 => LogicalTechnique::DeltaRle,
        _ if stats.run_count <= stats.count / 4 => LogicalTechnique::Rle,
        _ => LogicalTechnique::None,
    };
    (LogicalEncoding::new(technique, zigzag), physical)
}

// ---------------------------------------------------------------------------
// integer stream payloads

fn encode_physical(values: &[u64], physical: PhysicalEncoding, out: &mut Vec<u8>) {
    match physical {
        PhysicalEncoding::Plain => {
            for &v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        PhysicalEncoding::Varint => varint_encode_all(values, out),
        PhysicalEncoding::BitpackFor => bitpack_for_encode_into(values, out),
    }
}

fn decode_physical(reader: &mut Reader<'_>, count: usize, physical: PhysicalEncoding) -> Result<Vec<u64>> {
    match physical {
        PhysicalEncoding::Plain => {
            let bytes = count
                .checked_mul(8)
                .filter(|&b| b <= reader.remaining())
                .ok_or(EncodingError::ImplausibleCount { count, bytes: reader.remaining() })?;
            let raw = reader.bytes(bytes)?;
            Ok(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
        }
        PhysicalEncoding::Varint => varint_decode_all(reader, count),
        PhysicalEncoding::BitpackFor => bitpack_for_decode_from(reader, count),
    }
}

fn zigzag_lanes(values: &mut [u64]) {
    for v in values {
        *v = zigzag(*v as i64);
    }
}

fn unzigzag_lanes(values: &mut [u64]) {
    for v in values {
        *v = unzigzag(*v) as u64;
    }
}

/// Writes the payload of an integer stream under a fixed encoding.
pub fn encode_int_payload(
    values: &[u64],
    logical: LogicalEncoding,
    physical: PhysicalEncoding,
    out: &mut Vec<u8>,
) -> Result<()> {
    let zz = |mut v: Vec<u64>| {
        if logical.zigzag {
            zigzag_lanes(&mut v);
        }
        v
    };
    match logical.technique {
        LogicalTechnique::None => encode_physical(&zz(values.to_vec()), physical, out),
        LogicalTechnique::Delta => encode_physical(&zz(delta_lanes(values)), physical, out),
        LogicalTechnique::Rle | LogicalTechnique::DeltaRle => {
            let (run_values, lengths) = rle_encode(values);
            varint_put(run_values.len() as u64, out);
            encode_physical(&lengths, physical, out);
            let run_values = if logical.technique == LogicalTechnique::DeltaRle {
                delta_lanes(&run_values)
            } else {
                run_values
            };
            encode_physical(&zz(run_values), physical, out);
        }
        LogicalTechnique::Dictionary => {
            return Err(EncodingError::NotPermitted("dictionary on an integer stream"))
        }
    }
    Ok(())
}

/// Run-compressed form of an RLE or delta-RLE stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Runs {
    /// Lane value of each run, fully decoded.
    pub values: Vec<u64>,
    pub lengths: Vec<u64>,
}

/// Reads the runs of an RLE / delta-RLE payload without expanding them.
pub fn decode_runs(
    reader: &mut Reader<'_>,
    count: usize,
    logical: LogicalEncoding,
    physical: PhysicalEncoding,
) -> Result<Runs> {
    let runs = reader.varint_usize()?;
    if runs > count {
        return Err(EncodingError::RunLengthMismatch { expected: count as u64, actual: runs as u64 });
    }
    let lengths = decode_physical(reader, runs, physical)?;
    let mut values = decode_physical(reader, runs, physical)?;
    if logical.zigzag {
        unzigzag_lanes(&mut values);
    }
    if logical.technique == LogicalTechnique::DeltaRle {
        prefix_sum_lanes(&mut values);
    }
    let total = lengths.iter().try_fold(0u64, |acc, &l| acc.checked_add(l));
    if total != Some(count as u64) || lengths.contains(&0) {
        return Err(EncodingError::RunLengthMismatch {
            expected: count as u64,
            actual: total.unwrap_or(u64::MAX),
        });
    }
    Ok(Runs { values, lengths })
}

/// Decodes `count` lanes of an integer stream payload.
pub fn decode_int_payload(
    reader: &mut Reader<'_>,
    count: usize,
    logical: LogicalEncoding,
    physical: PhysicalEncoding,
) -> Result<Vec<u64>> {
    match logical.technique {
        LogicalTechnique::None | LogicalTechnique::Delta => {
            let mut values = decode_physical(reader, count, physical)?;
            if logical.zigzag {
                unzigzag_lanes(&mut values);
            }
            if logical.technique == LogicalTechnique::Delta {
                prefix_sum_lanes(&mut values);
            }
            Ok(values)
        }
        LogicalTechnique::Rle | LogicalTechnique::DeltaRle => {
            let runs = decode_runs(reader, count, logical, physical)?;
            rle_decode(&runs.values, &runs.lengths, count)
        }
        LogicalTechnique::Dictionary => Err(EncodingError::NotPermitted("dictionary on an integer stream")),
    }
}

/// Encodes lanes with the selected encoding. Under the advanced profile the
/// varint alternative of the same logical stage is also tried and the smaller
/// payload kept, so the superset profile never produces a larger stream.
pub fn encode_int_auto(
    values: &[u64],
    signed: bool,
    profile: EncodingProfile,
) -> (LogicalEncoding, PhysicalEncoding, Vec<u8>) {
    let stats = StreamStats::from_lanes(values, signed);
    let domain = if signed { Domain::Signed } else { Domain::Unsigned };
    let (logical, physical) = select_encoding(&stats, domain, profile);
    let mut out = Vec::new();
    encode_int_payload(values, logical, physical, &mut out).expect("ladder never selects dictionary");
    if physical == PhysicalEncoding::BitpackFor {
        let mut alt = Vec::new();
        encode_int_payload(values, logical, PhysicalEncoding::Varint, &mut alt)
            .expect("ladder never selects dictionary");
        if alt.len() < out.len() {
            return (logical, PhysicalEncoding::Varint, alt);
        }
    }
    (logical, physical, out)
}
