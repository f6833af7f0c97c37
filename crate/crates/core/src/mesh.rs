//! Isosurface extraction by marching tetrahedra, enclosed-volume
//! computation, and mesh export.
//!
//! Each grid cube is split into the six Kuhn tetrahedra around its main
//! diagonal, which triangulates space consistently across neighboring cubes.
//! The sublevel region {field <= c} is capped against the box faces so the
//! emitted surface is always closed and its enclosed volume well-defined.

use crate::{Box3, Error, Result, ScalarField};
use rayon::prelude::*;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Triangle surface mesh with welded vertices and outward-oriented triangles.
#[derive(Debug, Clone, Default)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) =
            (self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]);
        let u = sub(b, a);
        let v = sub(c, a);
        0.5 * norm(cross(u, v))
    }

    /// Connected components of the vertex graph induced by triangle edges,
    /// with the total triangle area of each, largest first.
    pub fn component_areas(&self) -> Vec<f64> {
        if self.triangles.is_empty() {
            return Vec::new();
        }
        let n = self.vertices.len();
        let mut parent: Vec<u32> = (0..n as u32).collect();
        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                parent[x as usize] = parent[parent[x as usize] as usize];
                x = parent[x as usize];
            }
            x
        }
        for t in &self.triangles {
            let r = find(&mut parent, t[0]);
            for &v in &t[1..] {
                let rv = find(&mut parent, v);
                parent[rv as usize] = r;
            }
        }
        let mut areas: HashMap<u32, f64> = HashMap::new();
        for i in 0..self.triangles.len() {
            let root = find(&mut parent, self.triangles[i][0]);
            *areas.entry(root).or_default() += self.triangle_area(i);
        }
        let mut out: Vec<f64> = areas.into_values().collect();
        out.sort_by(|a, b| b.partial_cmp(a).unwrap());
        out
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Welds coordinates quantized to a 1e-9 lattice.
struct Welder {
    map: HashMap<[i64; 3], u32>,
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[u32; 3]>,
}

impl Welder {
    fn new() -> Self {
        Self { map: HashMap::new(), vertices: Vec::new(), triangles: Vec::new() }
    }

    fn vertex(&mut self, p: [f64; 3]) -> u32 {
        let key = [
            (p[0] * 1e9).round() as i64,
            (p[1] * 1e9).round() as i64,
            (p[2] * 1e9).round() as i64,
        ];
        *self.map.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            (self.vertices.len() - 1) as u32
        })
    }

    fn triangle(&mut self, a: [f64; 3], b: [f64; 3], c: [f64; 3]) {
        let (ia, ib, ic) = (self.vertex(a), self.vertex(b), self.vertex(c));
        if ia != ib && ib != ic && ia != ic {
            self.triangles.push([ia, ib, ic]);
        }
    }

    fn finish(self) -> TriMesh {
        TriMesh { vertices: self.vertices, triangles: self.triangles }
    }
}

/// The six Kuhn tetrahedra of a unit cube, as corner bitmasks
/// (bit 0 = +x, bit 1 = +y, bit 2 = +z). Every tet shares the main diagonal
/// 000 -> 111, so faces of adjacent cubes match.
const KUHN_TETS: [[u8; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

struct MtGrid {
    res: usize,
    bounds: Box3,
    /// field - c, nudged away from exact zero; index (ix*(n)+iy)*(n)+iz
    /// with n = res + 1.
    signed: Vec<f64>,
}

impl MtGrid {
    fn n(&self) -> usize {
        self.res + 1
    }
    fn idx(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n() + iy) * self.n() + iz
    }
    fn coords(&self, v: usize) -> [usize; 3] {
        let n = self.n();
        [v / (n * n), (v / n) % n, v % n]
    }
    fn position(&self, v: usize) -> [f64; 3] {
        let c = self.coords(v);
        self.bounds.lattice_point(c, [self.n(); 3])
    }
    /// Interpolated zero crossing on the edge (a, b), canonicalized so the
    /// same edge yields the bitwise-identical point from any caller.
    fn crossing(&self, mut a: usize, mut b: usize) -> [f64; 3] {
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        let (sa, sb) = (self.signed[a], self.signed[b]);
        let t = sa / (sa - sb);
        let (pa, pb) = (self.position(a), self.position(b));
        [
            pa[0] + t * (pb[0] - pa[0]),
            pa[1] + t * (pb[1] - pa[1]),
            pa[2] + t * (pb[2] - pa[2]),
        ]
    }
}

fn oriented(
    welder: &mut Welder,
    a: [f64; 3],
    b: [f64; 3],
    c: [f64; 3],
    outward: [f64; 3],
) {
    let n = cross(sub(b, a), sub(c, a));
    if dot(n, outward) >= 0.0 {
        welder.triangle(a, b, c);
    } else {
        welder.triangle(a, c, b);
    }
}

fn centroid(points: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for p in points {
        for i in 0..3 {
            c[i] += p[i];
        }
    }
    for v in &mut c {
        *v /= points.len() as f64;
    }
    c
}

/// Emit the isosurface triangles of one tetrahedron (vertices as grid
/// indices). The solid side is signed < 0.
fn emit_tet(grid: &MtGrid, welder: &mut Welder, tet: [usize; 4]) {
    let mut inside = [0usize; 4];
    let mut outside = [0usize; 4];
    let (mut ni, mut no) = (0, 0);
    for &v in &tet {
        if grid.signed[v] < 0.0 {
            inside[ni] = v;
            ni += 1;
        } else {
            outside[no] = v;
            no += 1;
        }
    }
    if ni == 0 || ni == 4 {
        return;
    }
    let in_pts: Vec<[f64; 3]> = inside[..ni].iter().map(|&v| grid.position(v)).collect();
    let out_pts: Vec<[f64; 3]> = outside[..no].iter().map(|&v| grid.position(v)).collect();
    // outward = from the solid side toward the void side
    let outward = sub(centroid(&out_pts), centroid(&in_pts));
    match ni {
        1 => {
            let a = grid.crossing(inside[0], outside[0]);
            let b = grid.crossing(inside[0], outside[1]);
            let c = grid.crossing(inside[0], outside[2]);
            oriented(welder, a, b, c, outward);
        }
        3 => {
            let a = grid.crossing(outside[0], inside[0]);
            let b = grid.crossing(outside[0], inside[1]);
            let c = grid.crossing(outside[0], inside[2]);
            oriented(welder, a, b, c, outward);
        }
        2 => {
            let q0 = grid.crossing(inside[0], outside[0]);
            let q1 = grid.crossing(inside[0], outside[1]);
            let q2 = grid.crossing(inside[1], outside[1]);
            let q3 = grid.crossing(inside[1], outside[0]);
            oriented(welder, q0, q1, q2, outward);
            oriented(welder, q0, q2, q3, outward);
        }
        _ => unreachable!(),
    }
}

/// Clip a boundary-face triangle to the solid side and emit cap triangles
/// with the box's outward normal.
fn emit_cap(grid: &MtGrid, welder: &mut Welder, face: [usize; 3], outward: [f64; 3]) {
    let mut inside = [0usize; 3];
    let mut outside = [0usize; 3];
    let (mut ni, mut no) = (0, 0);
    for &v in &face {
        if grid.signed[v] < 0.0 {
            inside[ni] = v;
            ni += 1;
        } else {
            outside[no] = v;
            no += 1;
        }
    }
    match ni {
        0 => {}
        3 => {
            let (a, b, c) =
                (grid.position(face[0]), grid.position(face[1]), grid.position(face[2]));
            oriented(welder, a, b, c, outward);
        }
        1 => {
            let a = grid.position(inside[0]);
            let b = grid.crossing(inside[0], outside[0]);
            let c = grid.crossing(inside[0], outside[1]);
            oriented(welder, a, b, c, outward);
        }
        2 => {
            let a = grid.position(inside[0]);
            let b = grid.position(inside[1]);
            let c = grid.crossing(inside[1], outside[0]);
            let d = grid.crossing(inside[0], outside[0]);
            oriented(welder, a, b, c, outward);
            oriented(welder, a, c, d, outward);
        }
        _ => unreachable!(),
    }
}

/// Extract the closed surface of {field <= c} within `bounds`.
///
/// `resolution` is the number of cells per axis. Exact-zero signed values at
/// grid vertices are nudged by +1e-12 to avoid degenerate cases.
pub fn marching_tetrahedra(
    field: &impl ScalarField,
    bounds: Box3,
    c: f64,
    resolution: usize,
) -> Result<TriMesh> {
    if resolution < 2 {
        return Err(Error::Domain("mesh resolution must be >= 2".into()));
    }
    if bounds.is_degenerate() {
        return Err(Error::Domain("degenerate mesh box".into()));
    }
    let n = resolution + 1;
    let mut signed = vec![0.0f64; n * n * n];
    signed.par_chunks_mut(n * n).enumerate().for_each(|(ix, slab)| {
        for iy in 0..n {
            for iz in 0..n {
                let p = bounds.lattice_point([ix, iy, iz], [n; 3]);
                let mut s = field.value(p) - c;
                if s == 0.0 {
                    s = 1e-12;
                }
                slab[iy * n + iz] = s;
            }
        }
    });
    if let Some(i) = signed.iter().position(|v| !v.is_finite()) {
        let g = MtGrid { res: resolution, bounds, signed: Vec::new() };
        let point = g.position(i);
        return Err(Error::NonFiniteSample { index: i, point });
    }
    let grid = MtGrid { res: resolution, bounds, signed };
    let mut welder = Welder::new();

    for cx in 0..resolution {
        for cy in 0..resolution {
            for cz in 0..resolution {
                let corner = |bits: u8| -> usize {
                    grid.idx(
                        cx + (bits & 1) as usize,
                        cy + (bits >> 1 & 1) as usize,
                        cz + (bits >> 2 & 1) as usize,
                    )
                };
                let on_boundary = cx == 0
                    || cy == 0
                    || cz == 0
                    || cx + 1 == resolution
                    || cy + 1 == resolution
                    || cz + 1 == resolution;
                for tet_bits in &KUHN_TETS {
                    let tet = [
                        corner(tet_bits[0]),
                        corner(tet_bits[1]),
                        corner(tet_bits[2]),
                        corner(tet_bits[3]),
                    ];
                    emit_tet(&grid, &mut welder, tet);
                    if !on_boundary {
                        continue;
                    }
                    // cap faces lying on the box boundary
                    for omit in 0..4 {
                        let mut face = [0usize; 3];
                        let mut w = 0;
                        for (i, &v) in tet.iter().enumerate() {
                            if i != omit {
                                face[w] = v;
                                w += 1;
                            }
                        }
                        let coords =
                            [grid.coords(face[0]), grid.coords(face[1]), grid.coords(face[2])];
                        for axis in 0..3 {
                            for (bound, sign) in [(0usize, -1.0), (resolution, 1.0)] {
                                if coords.iter().all(|c| c[axis] == bound) {
                                    let mut outward = [0.0; 3];
                                    outward[axis] = sign;
                                    emit_cap(&grid, &mut welder, face, outward);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(welder.finish())
}

/// Signed divergence-theorem volume; positive for outward orientation.
/// Errors if the mesh has unmatched (boundary) edges.
pub fn enclosed_volume(mesh: &TriMesh) -> Result<f64> {
    let mut edges: HashMap<(u32, u32), i64> = HashMap::new();
    for t in &mesh.triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let (key, dir) = if a < b { ((a, b), 1) } else { ((b, a), -1) };
            *edges.entry(key).or_default() += dir;
        }
    }
    let boundary = edges.values().filter(|&&v| v != 0).count();
    if boundary > 0 {
        return Err(Error::OpenMesh { boundary_edges: boundary });
    }
    let volume: f64 = mesh
        .triangles
        .iter()
        .map(|t| {
            let a = mesh.vertices[t[0] as usize];
            let b = mesh.vertices[t[1] as usize];
            let c = mesh.vertices[t[2] as usize];
            dot(a, cross(b, c)) / 6.0
        })
        .sum();
    Ok(volume)
}

/// Binary STL export: 80-byte header, little-endian triangle count, then
/// 50-byte records with normals recomputed from vertex winding.
pub fn export_stl(mesh: &TriMesh, path: &Path) -> Result<()> {
    let ctx = |e: std::io::Error| Error::Io { context: format!("writing {}", path.display()), source: e };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(ctx)?);
    let mut header = [0u8; 80];
    let tag = b"tpms-edr binary stl";
    header[..tag.len()].copy_from_slice(tag);
    file.write_all(&header).map_err(ctx)?;
    file.write_all(&(mesh.triangles.len() as u32).to_le_bytes()).map_err(ctx)?;
    for t in &mesh.triangles {
        let a = mesh.vertices[t[0] as usize];
        let b = mesh.vertices[t[1] as usize];
        let c = mesh.vertices[t[2] as usize];
        let mut n = cross(sub(b, a), sub(c, a));
        let len = norm(n);
        if len > 0.0 {
            for v in &mut n {
                *v /= len;
            }
        }
        for v in n {
            file.write_all(&(v as f32).to_le_bytes()).map_err(ctx)?;
        }
        for p in [a, b, c] {
            for v in p {
                file.write_all(&(v as f32).to_le_bytes()).map_err(ctx)?;
            }
        }
        file.write_all(&0u16.to_le_bytes()).map_err(ctx)?;
    }
    file.flush().map_err(ctx)?;
    Ok(())
}

/// Minimal binary STL reader (vertices are not welded).
pub fn read_stl(path: &Path) -> Result<TriMesh> {
    let ctx = |e: std::io::Error| Error::Io { context: format!("reading {}", path.display()), source: e };
    let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(ctx)?);
    let mut header = [0u8; 80];
    file.read_exact(&mut header).map_err(ctx)?;
    let mut count_buf = [0u8; 4];
    file.read_exact(&mut count_buf).map_err(ctx)?;
    let count = u32::from_le_bytes(count_buf) as usize;
    let mut mesh = TriMesh::default();
    let mut rec = [0u8; 50];
    for _ in 0..count {
        file.read_exact(&mut rec).map_err(ctx)?;
        let base = mesh.vertices.len() as u32;
        for v in 0..3 {
            let off = 12 + v * 12;
            let read_f32 = |o: usize| {
                f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as f64
            };
            mesh.vertices.push([read_f32(off), read_f32(off + 4), read_f32(off + 8)]);
        }
        mesh.triangles.push([base, base + 1, base + 2]);
    }
    Ok(mesh)
}

/// ASCII OBJ export for inspection.
pub fn export_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let ctx = |e: std::io::Error| Error::Io { context: format!("writing {}", path.display()), source: e };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(ctx)?);
    for v in &mesh.vertices {
        writeln!(file, "v {} {} {}", v[0], v[1], v[2]).map_err(ctx)?;
    }
    for t in &mesh.triangles {
        writeln!(file, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(ctx)?;
    }
    file.flush().map_err(ctx)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_field(center: f64, r: f64) -> impl Fn([f64; 3]) -> f64 {
        move |p: [f64; 3]| {
            ((p[0] - center).powi(2) + (p[1] - center).powi(2) + (p[2] - center).powi(2)).sqrt()
                - r
        }
    }

    #[test]
    fn empty_below_minimum() {
        let field = |p: [f64; 3]| p[0] + 10.0;
        let mesh = marching_tetrahedra(&field, Box3::cube(0.0, 1.0), 0.0, 8).unwrap();
        assert!(mesh.is_empty());
        assert_eq!(enclosed_volume(&mesh).unwrap(), 0.0);
    }

    #[test]
    fn full_box_volume() {
        let field = |_: [f64; 3]| -1.0;
        let mesh = marching_tetrahedra(&field, Box3::cube(0.0, 1.0), 0.0, 4).unwrap();
        let v = enclosed_volume(&mesh).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "volume = {v}");
    }

    #[test]
    fn sphere_volume_and_radius() {
        let r = 0.25;
        let mesh =
            marching_tetrahedra(&sphere_field(0.5, r), Box3::cube(0.0, 1.0), 0.0, 64).unwrap();
        let v = enclosed_volume(&mesh).unwrap();
        let expect = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        assert!((v - expect).abs() / expect < 0.01, "volume {v} vs {expect}");
        for p in &mesh.vertices {
            let rr = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) + (p[2] - 0.5).powi(2)).sqrt();
            assert!((rr - r).abs() / r < 0.02, "radial error at {p:?}");
        }
        assert_eq!(mesh.component_areas().len(), 1);
    }

    #[test]
    fn sphere_volume_converges_with_resolution() {
        let r = 0.3f64;
        let expect = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        let mut errs = Vec::new();
        for res in [16, 32, 64] {
            let mesh =
                marching_tetrahedra(&sphere_field(0.5, r), Box3::cube(0.0, 1.0), 0.0, res)
                    .unwrap();
            errs.push((enclosed_volume(&mesh).unwrap() - expect).abs());
        }
        // error halves when resolution doubles, up to 1.5x slack
        assert!(errs[1] <= errs[0] / 2.0 * 1.5, "{errs:?}");
        assert!(errs[2] <= errs[1] / 2.0 * 1.5, "{errs:?}");
    }

    #[test]
    fn no_duplicate_vertices_after_weld() {
        let mesh =
            marching_tetrahedra(&sphere_field(0.5, 0.3), Box3::cube(0.0, 1.0), 0.0, 12).unwrap();
        for i in 0..mesh.vertices.len() {
            for j in i + 1..mesh.vertices.len() {
                let d = norm(sub(mesh.vertices[i], mesh.vertices[j]));
                assert!(d > 1e-10, "vertices {i} and {j} coincide");
            }
        }
        // no degenerate triangles
        for t in 0..mesh.triangles.len() {
            assert!(mesh.triangle_area(t) > 1e-14);
        }
    }

    #[test]
    fn open_mesh_rejected() {
        let mesh = TriMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        assert!(matches!(enclosed_volume(&mesh), Err(Error::OpenMesh { .. })));
    }

    #[test]
    fn stl_byte_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let single = TriMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        let p1 = dir.path().join("one.stl");
        export_stl(&single, &p1).unwrap();
        assert_eq!(std::fs::metadata(&p1).unwrap().len(), 134);
        let p0 = dir.path().join("zero.stl");
        export_stl(&TriMesh::default(), &p0).unwrap();
        assert_eq!(std::fs::metadata(&p0).unwrap().len(), 84);
    }

    #[test]
    fn stl_round_trip_count() {
        let dir = tempfile::tempdir().unwrap();
        let mesh =
            marching_tetrahedra(&sphere_field(0.5, 0.3), Box3::cube(0.0, 1.0), 0.0, 16).unwrap();
        let p = dir.path().join("sphere.stl");
        export_stl(&mesh, &p).unwrap();
        let back = read_stl(&p).unwrap();
        assert_eq!(back.triangles.len(), mesh.triangles.len());
    }

    #[test]
    fn volume_monotone_in_threshold() {
        let field =
            |p: [f64; 3]| (3.0 * p[0]).sin() + (2.0 * p[1]).cos() + (4.0 * p[2]).sin();
        let mut prev = -1.0;
        for i in 0..20 {
            let c = -3.2 + 6.4 * i as f64 / 19.0;
            let mesh = marching_tetrahedra(&field, Box3::cube(0.0, 2.0), c, 12).unwrap();
            let v = enclosed_volume(&mesh).unwrap();
            assert!(v >= prev * (1.0 - 1e-9) - 1e-12, "volume decreased {prev} -> {v}");
            prev = v;
        }
    }
}
