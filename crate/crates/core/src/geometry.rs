//! Topology streams, vertex buffers and offline tessellation.
//!
//! A table's geometries are flattened into a Type stream (one code per
//! feature), a Geometries stream (parts per multi-part feature), a Rings
//! stream (rings per polygon), a Vertices stream (vertices per line string or
//! ring) and a single interleaved vertex buffer. Points contribute exactly one
//! vertex and multi-points one vertex per part, so neither touches the
//! Vertices stream.

use std::cmp::Ordering;

use thiserror::Error;

use crate::model::{Geometry, GeometryType, Polygon, Ring, Vertex};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("geometry dimension mismatch: expected {expected}, found {found} at feature {row}")]
    DimensionMismatch { row: usize, expected: u8, found: u8 },
    #[error("corrupt topology: {0}")]
    CorruptTopology(String),
    #[error("coordinate ({x}, {y}) out of Morton range (bias {bias}, shift {shift})")]
    MortonRange { x: i64, y: i64, bias: u32, shift: u32 },
    #[error("vertex dictionaries are 2D only")]
    Unsupported3d,
}

fn corrupt(msg: impl Into<String>) -> GeometryError {
    GeometryError::CorruptTopology(msg.into())
}

/// Dictionary of unique 2D vertices sorted along the Z-order curve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexDictionary {
    /// Strictly increasing Morton codes.
    pub codes: Vec<u64>,
    /// Added to each coordinate before interleaving.
    pub bias: u32,
    /// Bits per component.
    pub shift: u32,
}

impl VertexDictionary {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn vertex(&self, index: usize) -> Vertex {
        let (x, y) = morton_decode(self.codes[index], self.bias, self.shift);
        Vertex::new(x, y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VertexBuffer {
    /// Interleaved `x, y[, z]` per vertex reference.
    Plain(Vec<i32>),
    /// One dictionary index per vertex reference.
    Dictionary { dictionary: VertexDictionary, offsets: Vec<u32> },
}

impl VertexBuffer {
    pub fn vertex_count(&self, dimensions: u8) -> usize {
        match self {
            VertexBuffer::Plain(coords) => coords.len() / dimensions.max(1) as usize,
            VertexBuffer::Dictionary { offsets, .. } => offsets.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologySet {
    pub dimensions: u8,
    pub types: Vec<GeometryType>,
    /// Parts per multi-part feature; present iff any multi type occurs.
    pub geometries: Option<Vec<u32>>,
    /// Rings per polygon; present iff polygonal types occur.
    pub rings: Option<Vec<u32>>,
    /// Vertices per line string or ring; absent for point-only tables.
    pub vertices: Option<Vec<u32>>,
    pub vertex_buffer: VertexBuffer,
}

impl TopologySet {
    pub fn vertex_count(&self) -> usize {
        self.vertex_buffer.vertex_count(self.dimensions)
    }
}

fn len_u32(n: usize) -> u32 {
    u32::try_from(n).expect("topology count exceeds u32")
}

/// Flattens geometries into topology streams with a plain vertex buffer.
pub fn build_topology(geometries: &[Geometry], dimensions: u8) -> Result<TopologySet, GeometryError> {
    let mut types = Vec::with_capacity(geometries.len());
    let mut parts = Vec::new();
    let mut rings = Vec::new();
    let mut vertices = Vec::new();
    let mut coords = Vec::new();
    let (mut any_multi, mut any_poly, mut any_line) = (false, false, false);

    let push = |v: &Vertex, row: usize, coords: &mut Vec<i32>| {
        if dimensions == 2 && v.z != 0 {
            return Err(GeometryError::DimensionMismatch { row, expected: 2, found: 3 });
        }
        coords.push(v.x);
        coords.push(v.y);
        if dimensions == 3 {
            coords.push(v.z);
        }
        Ok(())
    };

    for (row, geom) in geometries.iter().enumerate() {
        let ty = geom.geometry_type();
        types.push(ty);
        any_multi |= ty.is_multi();
        any_poly |= ty.is_polygonal();
        any_line |= !matches!(ty, GeometryType::Point | GeometryType::MultiPoint);
        let polygon = |poly: &Polygon, rings: &mut Vec<u32>, vertices: &mut Vec<u32>, coords: &mut Vec<i32>| {
            rings.push(len_u32(poly.len()));
            for ring in poly {
                vertices.push(len_u32(ring.len()));
                for v in ring {
                    push(v, row, coords)?;
                }
            }
            Ok::<(), GeometryError>(())
        };
        match geom {
            Geometry::Point(v) => push(v, row, &mut coords)?,
            Geometry::LineString(line) => {
                vertices.push(len_u32(line.len()));
                for v in line {
                    push(v, row, &mut coords)?;
                }
            }
            Geometry::Polygon(poly) => polygon(poly, &mut rings, &mut vertices, &mut coords)?,
            Geometry::MultiPoint(points) => {
                parts.push(len_u32(points.len()));
                for v in points {
                    push(v, row, &mut coords)?;
                }
            }
            Geometry::MultiLineString(lines) => {
                parts.push(len_u32(lines.len()));
                for line in lines {
                    vertices.push(len_u32(line.len()));
                    for v in line {
                        push(v, row, &mut coords)?;
                    }
                }
            }
            Geometry::MultiPolygon(polys) => {
                parts.push(len_u32(polys.len()));
                for poly in polys {
                    polygon(poly, &mut rings, &mut vertices, &mut coords)?;
                }
            }
        }
    }

    Ok(TopologySet {
        dimensions,
        types,
        geometries: any_multi.then_some(parts),
        rings: any_poly.then_some(rings),
        vertices: any_line.then_some(vertices),
        vertex_buffer: VertexBuffer::Plain(coords),
    })
}

struct Cursor<'a> {
    name: &'static str,
    values: &'a [u32],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(name: &'static str, values: Option<&'a Vec<u32>>) -> Self {
        Cursor { name, values: values.map(Vec::as_slice).unwrap_or(&[]), pos: 0 }
    }

    fn next(&mut self) -> Result<usize, GeometryError> {
        let v = self
            .values
            .get(self.pos)
            .ok_or_else(|| corrupt(format!("{} stream exhausted", self.name)))?;
        self.pos += 1;
        Ok(*v as usize)
    }

    fn finish(&self) -> Result<(), GeometryError> {
        if self.pos != self.values.len() {
            return Err(corrupt(format!(
                "{} stream has {} values, {} consumed",
                self.name,
                self.values.len(),
                self.pos
            )));
        }
        Ok(())
    }
}

/// Exact inverse of [`build_topology`] (after resolving any vertex dictionary).
pub fn rebuild_geometries(topology: &TopologySet) -> Result<Vec<Geometry>, GeometryError> {
    let dims = topology.dimensions as usize;
    if !(2..=3).contains(&dims) {
        return Err(corrupt(format!("invalid dimensions {dims}")));
    }
    let total = topology.vertex_count();
    let resolve: Box<dyn Fn(usize) -> Result<Vertex, GeometryError> + '_> = match &topology.vertex_buffer {
        VertexBuffer::Plain(coords) => {
            if coords.len() % dims != 0 {
                return Err(corrupt("vertex buffer length not a multiple of dimensions"));
            }
            Box::new(move |i| {
                let c = &coords[i * dims..(i + 1) * dims];
                Ok(Vertex { x: c[0], y: c[1], z: if dims == 3 { c[2] } else { 0 } })
            })
        }
        VertexBuffer::Dictionary { dictionary, offsets } => {
            if dims != 2 {
                return Err(GeometryError::Unsupported3d);
            }
            Box::new(move |i| {
                let idx = offsets[i] as usize;
                if idx >= dictionary.len() {
                    return Err(corrupt(format!("vertex offset {idx} outside dictionary")));
                }
                Ok(dictionary.vertex(idx))
            })
        }
    };

    let mut parts = Cursor::new("geometries", topology.geometries.as_ref());
    let mut rings = Cursor::new("rings", topology.rings.as_ref());
    let mut counts = Cursor::new("vertices", topology.vertices.as_ref());
    let mut next_vertex = 0usize;

    let mut take = |n: usize| -> Result<Vec<Vertex>, GeometryError> {
        if n > total - next_vertex {
            return Err(corrupt(format!(
                "topology references vertex {} but buffer holds {total}",
                next_vertex.saturating_add(n)
            )));
        }
        let out = (next_vertex..next_vertex + n).map(&resolve).collect::<Result<Vec<_>, _>>()?;
        next_vertex += n;
        Ok(out)
    };

    let mut out = Vec::with_capacity(topology.types.len());
    for &ty in &topology.types {
        let geom = match ty {
            GeometryType::Point => Geometry::Point(take(1)?[0]),
            GeometryType::LineString => Geometry::LineString(take(counts.next()?)?),
            GeometryType::Polygon => {
                let n = rings.next()?;
                let mut poly = Vec::with_capacity(n.min(counts.values.len()));
                for _ in 0..n {
                    poly.push(take(counts.next()?)?);
                }
                Geometry::Polygon(poly)
            }
            GeometryType::MultiPoint => Geometry::MultiPoint(take(parts.next()?)?),
            GeometryType::MultiLineString => {
                let n = parts.next()?;
                let mut lines = Vec::with_capacity(n.min(counts.values.len()));
                for _ in 0..n {
                    lines.push(take(counts.next()?)?);
                }
                Geometry::MultiLineString(lines)
            }
            GeometryType::MultiPolygon => {
                let n = parts.next()?;
                let mut polys = Vec::with_capacity(n.min(rings.values.len()));
                for _ in 0..n {
                    let r = rings.next()?;
                    let mut poly = Vec::with_capacity(r.min(counts.values.len()));
                    for _ in 0..r {
                        poly.push(take(counts.next()?)?);
                    }
                    polys.push(poly);
                }
                Geometry::MultiPolygon(polys)
            }
        };
        out.push(geom);
    }
    parts.finish()?;
    rings.finish()?;
    counts.finish()?;
    if next_vertex != total {
        return Err(corrupt(format!("{total} buffered vertices, {next_vertex} referenced")));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Morton codes

#[inline]
fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64;
    x = (x | (x << 16)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x << 8)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

#[inline]
fn compact_bits(code: u64) -> u32 {
    let mut x = code & 0x5555_5555_5555_5555;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x >> 4)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x >> 8)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x >> 16)) & 0x0000_0000_FFFF_FFFF;
    x as u32
}

/// Interleaves `x + bias` (even bits) and `y + bias` (odd bits).
pub fn morton_encode(x: i32, y: i32, bias: u32, shift: u32) -> Result<u64, GeometryError> {
    let bx = x as i64 + bias as i64;
    let by = y as i64 + bias as i64;
    let limit = 1i64 << shift.min(32);
    if shift > 32 || bx < 0 || by < 0 || bx >= limit || by >= limit {
        return Err(GeometryError::MortonRange { x: x as i64, y: y as i64, bias, shift });
    }
    Ok(spread_bits(bx as u32) | spread_bits(by as u32) << 1)
}

pub fn morton_decode(code: u64, bias: u32, _shift: u32) -> (i32, i32) {
    let x = compact_bits(code) as i64 - bias as i64;
    let y = compact_bits(code >> 1) as i64 - bias as i64;
    (x as i32, y as i32)
}

/// Bits per component needed to cover `[-margin, extent + margin)`.
pub fn morton_shift(extent: u32, margin: u32) -> u32 {
    let span = extent as u64 + 2 * margin as u64;
    (64 - (span.max(2) - 1).leading_zeros()).max(1)
}

/// Builds a Morton-sorted dictionary of the unique vertices and maps every
/// input vertex to the rank of its code.
pub fn encode_vertex_dictionary(
    vertices: &[Vertex],
    extent: u32,
    margin: u32,
) -> Result<(VertexDictionary, Vec<u32>), GeometryError> {
    if vertices.iter().any(|v| v.z != 0) {
        return Err(GeometryError::Unsupported3d);
    }
    let shift = morton_shift(extent, margin);
    if shift > 32 {
        return Err(GeometryError::MortonRange { x: 0, y: 0, bias: margin, shift });
    }
    let raw: Vec<u64> = vertices
        .iter()
        .map(|v| {
            let code = morton_encode(v.x, v.y, margin, shift)?;
            // enforce the upper bound of the declared range, not just the code width
            let hi = extent as i64 + margin as i64;
            if v.x as i64 >= hi || v.y as i64 >= hi {
                return Err(GeometryError::MortonRange { x: v.x as i64, y: v.y as i64, bias: margin, shift });
            }
            Ok(code)
        })
        .collect::<Result<_, _>>()?;
    let mut codes = raw.clone();
    codes.sort_unstable();
    codes.dedup();
    let offsets = raw
        .iter()
        .map(|c| codes.binary_search(c).expect("code present") as u32)
        .collect();
    Ok((VertexDictionary { codes, bias: margin, shift }, offsets))
}

/// Smallest margin that makes every vertex fit `[-margin, extent + margin)`.
pub fn required_margin<'a>(vertices: impl IntoIterator<Item = &'a Vertex>, extent: u32) -> u64 {
    let mut margin = 0i64;
    for v in vertices {
        for c in [v.x as i64, v.y as i64] {
            margin = margin.max(-c).max(c - extent as i64 + 1);
        }
    }
    margin as u64
}

// ---------------------------------------------------------------------------
// tessellation

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Tessellation {
    /// Three indices per triangle into the polygon's own vertex order.
    pub indices: Vec<u32>,
    /// Set when the input could not be triangulated cleanly.
    pub degenerate: bool,
}

impl Tessellation {
    pub fn triangle_count(&self) -> usize {
        self.indices.len() / 3
    }
}

type P = (i64, i64);

#[inline]
fn cross(o: P, a: P, b: P) -> i128 {
    (a.0 - o.0) as i128 * (b.1 - o.1) as i128 - (a.1 - o.1) as i128 * (b.0 - o.0) as i128
}

#[inline]
fn vcross(a: P, b: P) -> i128 {
    a.0 as i128 * b.1 as i128 - a.1 as i128 * b.0 as i128
}

fn sub(a: P, b: P) -> P {
    (a.0 - b.0, a.1 - b.1)
}

fn ring_area2(pts: &[P], ring: &[usize]) -> i128 {
    let mut s = 0i128;
    for i in 0..ring.len() {
        let a = pts[ring[i]];
        let b = pts[ring[(i + 1) % ring.len()]];
        s += vcross(a, b);
    }
    s
}

/// Inclusive point-in-triangle for a positively oriented triangle.
fn in_triangle(a: P, b: P, c: P, p: P) -> bool {
    cross(a, b, p) >= 0 && cross(b, c, p) >= 0 && cross(c, a, p) >= 0
}

fn on_segment(a: P, b: P, p: P) -> bool {
    cross(a, b, p) == 0 && p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// True when segments `pq` and `rs` share any point.
fn segments_touch(p: P, q: P, r: P, s: P) -> bool {
    let d1 = cross(p, q, r).signum();
    let d2 = cross(p, q, s).signum();
    let d3 = cross(r, s, p).signum();
    let d4 = cross(r, s, q).signum();
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    on_segment(p, q, r) || on_segment(p, q, s) || on_segment(r, s, p) || on_segment(r, s, q)
}

/// Whether direction `d` leaves vertex `p` into the interior of a positively
/// oriented boundary `prev -> p -> next`.
fn locally_inside(prev: P, p: P, next: P, d: P) -> bool {
    let e0 = sub(prev, p);
    let e1 = sub(next, p);
    let turn = vcross(e1, e0);
    if turn > 0 {
        vcross(e1, d) > 0 && vcross(d, e0) > 0
    } else if turn < 0 {
        !(vcross(e0, d) >= 0 && vcross(d, e1) >= 0)
    } else {
        vcross(e1, d) > 0 || (vcross(e1, d) == 0 && (e1.0 as i128 * d.0 as i128 + e1.1 as i128 * d.1 as i128) < 0 && vcross(e0, e1) != 0)
    }
}

/// Ear-clipping triangulation of a polygon (exterior ring first, then holes).
///
/// Holes are merged into the boundary through bridges from their rightmost
/// vertex, which adds two vertices per hole, so a clean result has
/// `n + 2h - 2` triangles.
pub fn tessellate_polygon(rings: &[Ring]) -> Tessellation {
    let mut pts: Vec<P> = Vec::new();
    let mut ring_indices: Vec<Vec<usize>> = Vec::new();
    for ring in rings {
        let start = pts.len();
        pts.extend(ring.iter().map(|v| (v.x as i64, v.y as i64)));
        ring_indices.push((start..pts.len()).collect());
    }
    let mut out = Tessellation::default();
    if ring_indices.is_empty() || ring_indices[0].len() < 3 {
        out.degenerate = true;
        return out;
    }

    let mut outer = ring_indices[0].clone();
    if ring_area2(&pts, &outer) < 0 {
        outer.reverse();
        out.degenerate = true;
    }
    let mut holes: Vec<Vec<usize>> = Vec::new();
    for ring in &ring_indices[1..] {
        if ring.len() < 3 {
            out.degenerate = true;
            continue;
        }
        let mut h = ring.clone();
        if ring_area2(&pts, &h) > 0 {
            h.reverse();
            out.degenerate = true;
        }
        holes.push(h);
    }
    holes.sort_by(|a, b| {
        let ma = a.iter().map(|&i| pts[i].0).max().unwrap();
        let mb = b.iter().map(|&i| pts[i].0).max().unwrap();
        mb.cmp(&ma)
    });

    let mut boundary = outer;
    for (k, hole) in holes.iter().enumerate() {
        let rest = &holes[k + 1..];
        if !merge_hole(&pts, &mut boundary, hole, rest) {
            out.degenerate = true;
        }
    }

    clip_ears(&pts, &boundary, &mut out);
    out
}

/// Splices `hole` into `boundary` through a bridge; returns false when only a
/// fallback (possibly crossing) bridge was found.
fn merge_hole(pts: &[P], boundary: &mut Vec<usize>, hole: &[usize], rest: &[Vec<usize>]) -> bool {
    let (m_pos, _) = hole
        .iter()
        .enumerate()
        .max_by(|(_, &a), (_, &b)| pts[a].0.cmp(&pts[b].0).then(pts[b].1.cmp(&pts[a].1)))
        .unwrap();
    let m = pts[hole[m_pos]];
    let hn = hole.len();
    let (h_prev, h_next) = (pts[hole[(m_pos + hn - 1) % hn]], pts[hole[(m_pos + 1) % hn]]);

    let visible = |bi: usize| -> bool {
        let n = boundary.len();
        let p = pts[boundary[bi]];
        if p == m {
            return false;
        }
        let prev = pts[boundary[(bi + n - 1) % n]];
        let next = pts[boundary[(bi + 1) % n]];
        if !locally_inside(prev, p, next, sub(m, p)) || !locally_inside(h_prev, m, h_next, sub(p, m)) {
            return false;
        }
        let blocked_by = |ring: &[usize], ignore: P| {
            (0..ring.len()).any(|i| {
                let a = pts[ring[i]];
                let b = pts[ring[(i + 1) % ring.len()]];
                if a == ignore || b == ignore {
                    return false;
                }
                segments_touch(m, p, a, b)
            })
        };
        !(blocked_by(boundary, p) || blocked_by(hole, m) || rest.iter().any(|r| blocked_by(r, m)))
    };

    let chosen = eberly_candidate(pts, boundary, m)
        .filter(|&bi| visible(bi))
        .or_else(|| {
            let mut order: Vec<usize> = (0..boundary.len()).collect();
            order.sort_by_key(|&bi| {
                let p = pts[boundary[bi]];
                let d = sub(p, m);
                (d.0 as i128 * d.0 as i128 + d.1 as i128 * d.1 as i128, bi)
            });
            order.into_iter().find(|&bi| visible(bi))
        });
    let (bi, clean) = match chosen {
        Some(bi) => (bi, true),
        None => {
            let bi = (0..boundary.len())
                .min_by_key(|&bi| {
                    let d = sub(pts[boundary[bi]], m);
                    d.0 as i128 * d.0 as i128 + d.1 as i128 * d.1 as i128
                })
                .unwrap();
            (bi, false)
        }
    };

    let mut spliced = Vec::with_capacity(boundary.len() + hn + 2);
    spliced.extend_from_slice(&boundary[..=bi]);
    for k in 0..=hn {
        spliced.push(hole[(m_pos + k) % hn]);
    }
    spliced.extend_from_slice(&boundary[bi..]);
    *boundary = spliced;
    clean
}

/// Classic rightward-ray bridge candidate: the closest boundary edge hit by
/// the ray from `m` towards +x, refined to the reflex vertex with the smallest
/// angle inside the triangle `(m, hit, endpoint)`.
fn eberly_candidate(pts: &[P], boundary: &[usize], m: P) -> Option<usize> {
    let n = boundary.len();
    // hit x as the fraction num/den, den > 0
    let mut best: Option<(i128, i128, usize)> = None;
    for i in 0..n {
        let a = pts[boundary[i]];
        let b = pts[boundary[(i + 1) % n]];
        if (a.1 > m.1) == (b.1 > m.1) && a.1 != m.1 && b.1 != m.1 {
            continue;
        }
        if a.1 == b.1 {
            continue;
        }
        let den = (b.1 - a.1) as i128;
        let num = a.0 as i128 * den + (m.1 - a.1) as i128 * (b.0 - a.0) as i128;
        let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
        if num < m.0 as i128 * den {
            continue;
        }
        let closer = match best {
            None => true,
            Some((bn, bd, _)) => num * bd < bn * den,
        };
        if closer {
            best = Some((num, den, i));
        }
    }
    let (num, den, edge) = best?;
    let a_idx = edge;
    let b_idx = (edge + 1) % n;
    let (a, b) = (pts[boundary[a_idx]], pts[boundary[b_idx]]);
    if num == a.0 as i128 * den && a.1 == m.1 {
        return Some(a_idx);
    }
    if num == b.0 as i128 * den && b.1 == m.1 {
        return Some(b_idx);
    }
    let p_idx = if a.0 > b.0 { a_idx } else { b_idx };
    let p = pts[boundary[p_idx]];

    // hit point scaled by den: (num, m.1 * den)
    let in_tri = |q: P| -> bool {
        let qs = (q.0 as i128 * den, q.1 as i128 * den);
        let ms = (m.0 as i128 * den, m.1 as i128 * den);
        let is = (num, m.1 as i128 * den);
        let ps = (p.0 as i128 * den, p.1 as i128 * den);
        let c = |o: (i128, i128), u: (i128, i128), v: (i128, i128)| {
            (u.0 - o.0) * (v.1 - o.1) - (u.1 - o.1) * (v.0 - o.0)
        };
        let s1 = c(ms, is, qs).signum();
        let s2 = c(is, ps, qs).signum();
        let s3 = c(ps, ms, qs).signum();
        (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0)
    };
    let mut chosen = p_idx;
    let mut best_key: Option<(i128, i128, i128)> = None;
    for i in 0..n {
        let q = pts[boundary[i]];
        if i == p_idx || q.0 < m.0 || q == m {
            continue;
        }
        let prev = pts[boundary[(i + n - 1) % n]];
        let next = pts[boundary[(i + 1) % n]];
        let reflex = cross(prev, q, next) < 0;
        if !reflex || !in_tri(q) {
            continue;
        }
        // compare |dy|/dx by cross multiplication, then distance
        let d = sub(q, m);
        let key = (d.1.unsigned_abs() as i128, d.0 as i128, d.0 as i128 * d.0 as i128 + d.1 as i128 * d.1 as i128);
        let better = match best_key {
            None => true,
            Some((ady, adx, dist)) => match (key.0 * adx).cmp(&(ady * key.1)) {
                Ordering::Less => true,
                Ordering::Equal => key.2 < dist,
                Ordering::Greater => false,
            },
        };
        if better {
            best_key = Some(key);
            chosen = i;
        }
    }
    Some(chosen)
}

fn clip_ears(pts: &[P], boundary: &[usize], out: &mut Tessellation) {
    let m = boundary.len();
    if m < 3 {
        out.degenerate = true;
        return;
    }
    let mut prev: Vec<usize> = (0..m).map(|i| (i + m - 1) % m).collect();
    let mut next: Vec<usize> = (0..m).map(|i| (i + 1) % m).collect();
    let pos = |i: usize| pts[boundary[i]];
    let mut remaining = m;
    let mut cur = 0usize;
    let mut stalled = 0usize;

    let is_ear = |a: usize, b: usize, c: usize, next: &[usize]| -> bool {
        let (pa, pb, pc) = (pos(a), pos(b), pos(c));
        let turn = cross(pa, pb, pc);
        if turn < 0 {
            return false;
        }
        if turn == 0 {
            return true;
        }
        let mut i = next[c];
        while i != a {
            let q = pos(i);
            if q != pa && q != pb && q != pc && in_triangle(pa, pb, pc, q) {
                return false;
            }
            i = next[i];
        }
        true
    };

    while remaining > 3 {
        let (a, c) = (prev[cur], next[cur]);
        let ear = is_ear(a, cur, c, &next);
        if ear || stalled >= remaining {
            if !ear {
                out.degenerate = true;
            }
            out.indices.extend([boundary[a] as u32, boundary[cur] as u32, boundary[c] as u32]);
            next[a] = c;
            prev[c] = a;
            remaining -= 1;
            cur = a;
            stalled = 0;
        } else {
            cur = c;
            stalled += 1;
        }
    }
    let (a, c) = (prev[cur], next[cur]);
    out.indices.extend([boundary[a] as u32, boundary[cur] as u32, boundary[c] as u32]);
}

/// Table-level index buffer: triangles of every polygon, with indices into
/// the table's vertex sequence, plus triangle counts per polygon.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexBuffer {
    pub indices: Vec<u32>,
    pub triangles_per_polygon: Vec<u32>,
}

pub fn tessellate_table(geometries: &[Geometry]) -> IndexBuffer {
    let mut out = IndexBuffer::default();
    let mut base = 0usize;
    for geom in geometries {
        let polys = geom.polygons();
        if polys.is_empty() {
            base += geom.vertex_count();
            continue;
        }
        for poly in polys {
            let t = tessellate_polygon(poly);
            out.indices.extend(t.indices.iter().map(|&i| i + base as u32));
            out.triangles_per_polygon.push(t.triangle_count() as u32);
            base += poly.iter().map(Vec::len).sum::<usize>();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ring_signed_area2;

    fn v(x: i32, y: i32) -> Vertex {
        Vertex::new(x, y)
    }

    #[test]
    fn single_point_topology() {
        let t = build_topology(&[Geometry::Point(v(4, 9))], 2).unwrap();
        assert_eq!(t.types, vec![GeometryType::Point]);
        assert_eq!((t.geometries.as_ref(), t.rings.as_ref(), t.vertices.as_ref()), (None, None, None));
        assert_eq!(t.vertex_buffer, VertexBuffer::Plain(vec![4, 9]));
        assert_eq!(rebuild_geometries(&t).unwrap(), vec![Geometry::Point(v(4, 9))]);
    }

    #[test]
    fn linestring_topology() {
        let g = vec![Geometry::LineString(vec![v(0, 0), v(2, 3), v(5, 5)])];
        let t = build_topology(&g, 2).unwrap();
        assert_eq!(t.types, vec![GeometryType::LineString]);
        assert_eq!(t.vertices, Some(vec![3]));
        assert_eq!(t.vertex_buffer, VertexBuffer::Plain(vec![0, 0, 2, 3, 5, 5]));
        assert_eq!(rebuild_geometries(&t).unwrap(), g);
    }

    #[test]
    fn multipolygon_topology() {
        let tri = |o: i32| vec![v(o, 0), v(o + 4, 0), v(o, 4)];
        let g = vec![Geometry::MultiPolygon(vec![vec![tri(0)], vec![tri(10)]])];
        let t = build_topology(&g, 2).unwrap();
        assert_eq!(t.geometries, Some(vec![2]));
        assert_eq!(t.rings, Some(vec![1, 1]));
        assert_eq!(t.vertices, Some(vec![3, 3]));
        assert_eq!(rebuild_geometries(&t).unwrap(), g);
    }

    #[test]
    fn rebuild_detects_short_buffer() {
        let t = TopologySet {
            dimensions: 2,
            types: vec![GeometryType::LineString],
            geometries: None,
            rings: None,
            vertices: Some(vec![5]),
            vertex_buffer: VertexBuffer::Plain(vec![0; 8]),
        };
        assert!(matches!(rebuild_geometries(&t), Err(GeometryError::CorruptTopology(_))));
    }

    #[test]
    fn rebuild_points_without_vertices_stream() {
        let t = TopologySet {
            dimensions: 2,
            types: vec![GeometryType::Point, GeometryType::Point],
            geometries: None,
            rings: None,
            vertices: None,
            vertex_buffer: VertexBuffer::Plain(vec![1, 2, 3, 4]),
        };
        assert_eq!(
            rebuild_geometries(&t).unwrap(),
            vec![Geometry::Point(v(1, 2)), Geometry::Point(v(3, 4))]
        );
    }

    #[test]
    fn rebuild_rejects_unconsumed_streams() {
        let mut t = build_topology(&[Geometry::LineString(vec![v(0, 0), v(1, 1)])], 2).unwrap();
        t.vertices.as_mut().unwrap().push(0);
        assert!(rebuild_geometries(&t).is_err());
    }

    #[test]
    fn topology_dimension_mismatch() {
        let g = vec![Geometry::Point(Vertex::new_3d(1, 2, 3))];
        assert!(matches!(build_topology(&g, 2), Err(GeometryError::DimensionMismatch { .. })));
        let t = build_topology(&g, 3).unwrap();
        assert_eq!(rebuild_geometries(&t).unwrap(), g);
    }

    #[test]
    fn morton_examples() {
        assert_eq!(morton_encode(0, 0, 0, 12).unwrap(), 0);
        assert_eq!(morton_encode(3, 5, 0, 12).unwrap(), 39);
        assert_eq!(morton_encode(-2, 0, 2, 12).unwrap(), morton_encode(0, 2, 0, 12).unwrap());
        assert_eq!(morton_encode(-2, 0, 2, 12).unwrap(), 8);
        assert!(morton_encode(-3, 0, 2, 12).is_err());
        assert!(morton_encode(4096, 0, 0, 12).is_err());
        assert_eq!(morton_decode(39, 0, 12), (3, 5));
        assert_eq!(morton_decode(8, 2, 12), (-2, 0));
    }

    #[test]
    fn morton_shift_covers_margin() {
        assert_eq!(morton_shift(4096, 0), 12);
        assert_eq!(morton_shift(4096, 1), 13);
        assert_eq!(morton_shift(4096, 2048), 13);
        assert_eq!(morton_shift(1, 0), 1);
    }

    #[test]
    fn vertex_dictionary_examples() {
        let (d, offs) = encode_vertex_dictionary(&[v(1, 1), v(1, 1), v(2, 2)], 4096, 0).unwrap();
        assert_eq!(d.codes.len(), 2);
        assert_eq!(offs, vec![0, 0, 1]);
        let (d, offs) = encode_vertex_dictionary(&[v(0, 0)], 4096, 0).unwrap();
        assert_eq!(d.codes, vec![0]);
        assert_eq!(offs, vec![0]);
        assert!(encode_vertex_dictionary(&[Vertex::new_3d(0, 0, 1)], 4096, 0).is_err());
        assert!(encode_vertex_dictionary(&[v(-1, 0)], 4096, 0).is_err());
        assert!(encode_vertex_dictionary(&[v(4096, 0)], 4096, 0).is_err());
    }

    #[test]
    fn required_margin_examples() {
        assert_eq!(required_margin(&[v(0, 0), v(4095, 10)], 4096), 0);
        assert_eq!(required_margin(&[v(-5, 0), v(4100, 10)], 4096), 5);
        assert_eq!(required_margin(&[v(0, 4100)], 4096), 5);
    }

    fn area2_of_triangles(rings: &[Ring], t: &Tessellation) -> i128 {
        let flat: Vec<Vertex> = rings.iter().flatten().copied().collect();
        t.indices
            .chunks(3)
            .map(|tri| {
                let r = [flat[tri[0] as usize], flat[tri[1] as usize], flat[tri[2] as usize]];
                ring_signed_area2(&r).unwrap().abs()
            })
            .sum()
    }

    fn polygon_area2(rings: &[Ring]) -> i128 {
        rings.iter().map(|r| ring_signed_area2(r).unwrap()).sum()
    }

    #[test]
    fn tessellate_square() {
        let sq = vec![vec![v(0, 0), v(10, 0), v(10, 10), v(0, 10)]];
        let t = tessellate_polygon(&sq);
        assert_eq!(t.triangle_count(), 2);
        assert!(!t.degenerate);
        assert_eq!(area2_of_triangles(&sq, &t), 200);
    }

    #[test]
    fn tessellate_convex_pentagon() {
        let p = vec![vec![v(0, 0), v(10, 0), v(14, 8), v(5, 14), v(-4, 8)]];
        let t = tessellate_polygon(&p);
        assert_eq!(t.triangle_count(), 3);
        assert_eq!(area2_of_triangles(&p, &t), polygon_area2(&p));
    }

    #[test]
    fn tessellate_square_with_hole() {
        let outer = vec![v(0, 0), v(10, 0), v(10, 10), v(0, 10)];
        let hole = vec![v(3, 3), v(3, 6), v(6, 6), v(6, 3)];
        let p = vec![outer, hole];
        let t = tessellate_polygon(&p);
        assert_eq!(t.triangle_count(), 8);
        assert!(!t.degenerate);
        assert_eq!(area2_of_triangles(&p, &t), polygon_area2(&p));
        assert_eq!(polygon_area2(&p), 200 - 18);
    }

    #[test]
    fn tessellate_concave_with_two_holes() {
        // U shape with holes in both arms
        let outer = vec![v(0, 0), v(30, 0), v(30, 30), v(20, 30), v(20, 10), v(10, 10), v(10, 30), v(0, 30)];
        let h1 = vec![v(2, 12), v(2, 20), v(6, 20), v(6, 12)];
        let h2 = vec![v(22, 12), v(22, 20), v(26, 20), v(26, 12)];
        let p = vec![outer, h1, h2];
        let t = tessellate_polygon(&p);
        assert!(!t.degenerate);
        assert_eq!(t.triangle_count(), 16 + 4 - 2);
        assert_eq!(area2_of_triangles(&p, &t), polygon_area2(&p));
    }

    #[test]
    fn self_intersecting_input_is_flagged_not_fatal() {
        let bowtie = vec![vec![v(0, 0), v(10, 10), v(10, 0), v(0, 10)]];
        let t = tessellate_polygon(&bowtie);
        assert_eq!(t.triangle_count(), 2);
    }

    #[test]
    fn table_index_buffer_offsets_by_vertex_position() {
        let sq = |o: i32| vec![vec![v(o, 0), v(o + 10, 0), v(o + 10, 10), v(o, 10)]];
        let g = vec![
            Geometry::LineString(vec![v(0, 0), v(1, 1)]),
            Geometry::Polygon(sq(0)),
            Geometry::MultiPolygon(vec![sq(20), sq(40)]),
        ];
        let ib = tessellate_table(&g);
        assert_eq!(ib.triangles_per_polygon, vec![2, 2, 2]);
        assert_eq!(ib.indices.len(), 18);
        assert!(ib.indices[..6].iter().all(|&i| (2..6).contains(&i)));
        assert!(ib.indices[6..12].iter().all(|&i| (6..10).contains(&i)));
        assert!(ib.indices[12..].iter().all(|&i| (10..14).contains(&i)));
    }
}
