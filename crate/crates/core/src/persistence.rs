//! Sublevel filtrations of scalar fields on 3D grids as cubical complexes,
//! and persistence pairs in dimensions 0, 1, 2 with the inverse mapping to
//! generating vertices.
//!
//! The complex is the full cubical complex of the vertex grid under the
//! lower-star (max-over-vertices) rule. Pairs are computed by boundary
//! matrix reduction over GF(2) with the clearing optimization, processing
//! dimensions top-down. Cells are ordered by (value, dimension, anchor
//! vertex index), so equal-valued vertices enter lower index first.

use crate::{Box3, Error, Result, ScalarField};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Scalar samples on a closed uniform vertex lattice, filtered by the
/// max-over-vertices rule.
#[derive(Debug, Clone)]
pub struct FiltrationGrid {
    pub dims: [usize; 3],
    pub bounds: Box3,
    /// Vertex values, index (ix*ny + iy)*nz + iz.
    pub vertex_values: Vec<f64>,
}

impl FiltrationGrid {
    pub fn new(dims: [usize; 3], bounds: Box3, vertex_values: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 1) || dims.iter().all(|&d| d < 2) {
            return Err(Error::Domain(format!("grid dims too small: {dims:?}")));
        }
        if vertex_values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::Domain("vertex value count mismatch".into()));
        }
        if let Some(i) = vertex_values.iter().position(|v| !v.is_finite()) {
            let g = Self { dims, bounds, vertex_values: Vec::new() };
            let point = g.vertex_position(i);
            return Err(Error::NonFiniteSample { index: i, point });
        }
        Ok(Self { dims, bounds, vertex_values })
    }

    pub fn vertex_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn vertex_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    pub fn vertex_coords(&self, index: usize) -> [usize; 3] {
        let nz = self.dims[2];
        let ny = self.dims[1];
        [index / (ny * nz), (index / nz) % ny, index % nz]
    }

    pub fn vertex_position(&self, index: usize) -> [f64; 3] {
        self.bounds.lattice_point(self.vertex_coords(index), self.dims)
    }

    pub fn min_value(&self) -> f64 {
        self.vertex_values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.vertex_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Filtration value of the cube with anchor vertex `anchor` and extent
    /// bits `bits` (bit a set = extent along axis a): the max over vertices.
    pub fn cube_value(&self, anchor: usize, bits: u8) -> f64 {
        let mut v = self.vertex_values[anchor];
        let strides = [self.dims[1] * self.dims[2], self.dims[2], 1];
        for corner in 1u8..8 {
            if corner & bits == corner {
                let mut idx = anchor;
                for a in 0..3 {
                    if corner >> a & 1 == 1 {
                        idx += strides[a];
                    }
                }
                v = v.max(self.vertex_values[idx]);
            }
        }
        v
    }

    /// Vertex realizing a cube's filtration value; ties resolved to the
    /// vertex entering the filtration last (largest index).
    pub fn cube_generating_vertex(&self, anchor: usize, bits: u8) -> usize {
        let strides = [self.dims[1] * self.dims[2], self.dims[2], 1];
        let mut best = anchor;
        let mut best_v = self.vertex_values[anchor];
        for corner in 1u8..8 {
            if corner & bits == corner {
                let mut idx = anchor;
                for a in 0..3 {
                    if corner >> a & 1 == 1 {
                        idx += strides[a];
                    }
                }
                let v = self.vertex_values[idx];
                if v > best_v || (v == best_v && idx > best) {
                    best = idx;
                    best_v = v;
                }
            }
        }
        best
    }

    /// Number of cells of each dimension on the closed grid.
    pub fn cell_counts(&self) -> [usize; 4] {
        let [nx, ny, nz] = self.dims;
        let e = |n: usize| n.saturating_sub(1);
        [
            nx * ny * nz,
            e(nx) * ny * nz + nx * e(ny) * nz + nx * ny * e(nz),
            nx * e(ny) * e(nz) + e(nx) * ny * e(nz) + e(nx) * e(ny) * nz,
            e(nx) * e(ny) * e(nz),
        ]
    }
}

/// Sample a field on the closed lattice of `bounds`.
pub fn build_filtration(
    field: &impl ScalarField,
    bounds: Box3,
    dims: [usize; 3],
) -> Result<FiltrationGrid> {
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::Domain(format!("grid dims must be >= 2 per axis: {dims:?}")));
    }
    if bounds.is_degenerate() {
        return Err(Error::Domain("degenerate filtration box".into()));
    }
    let [nx, ny, nz] = dims;
    let mut values = vec![0.0; nx * ny * nz];
    values.par_chunks_mut(ny * nz).enumerate().for_each(|(ix, slab)| {
        for iy in 0..ny {
            for iz in 0..nz {
                slab[iy * nz + iz] = field.value(bounds.lattice_point([ix, iy, iz], dims));
            }
        }
    });
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        let g = FiltrationGrid { dims, bounds, vertex_values: Vec::new() };
        return Err(Error::NonFiniteSample { index: i, point: g.vertex_position(i) });
    }
    FiltrationGrid::new(dims, bounds, values)
}

/// One persistent pair with the generating vertices of its birth and death.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePair {
    pub dim: u8,
    pub birth: f64,
    /// `f64::INFINITY` for essential classes.
    pub death: f64,
    pub birth_vertex: usize,
    pub death_vertex: Option<usize>,
}

impl PersistencePair {
    pub fn is_infinite(&self) -> bool {
        self.death.is_infinite()
    }
}

/// Multiset of positive-persistence pairs grouped by dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    pub pairs: Vec<PersistencePair>,
    pub min_value: f64,
    pub max_value: f64,
    pub grid_dims: [usize; 3],
}

impl PersistenceDiagram {
    pub fn pairs_of_dim(&self, dim: u8) -> impl Iterator<Item = &PersistencePair> {
        self.pairs.iter().filter(move |p| p.dim == dim)
    }
}

fn popcount3(bits: u8) -> u8 {
    (bits & 1) + (bits >> 1 & 1) + (bits >> 2 & 1)
}

/// Boundary matrix reduction over GF(2) with clearing, top dimension first.
pub fn compute_persistence(grid: &FiltrationGrid) -> PersistenceDiagram {
    let [nx, ny, nz] = grid.dims;
    let nverts = nx * ny * nz;
    let strides = [ny * nz, nz, 1usize];

    // Enumerate valid cells: id = anchor * 8 + bits.
    let mut cells: Vec<(f64, u32)> = Vec::with_capacity(nverts * 4);
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let anchor = (ix * ny + iy) * nz + iz;
                for bits in 0u8..8 {
                    if (bits & 1 == 1 && ix + 1 >= nx)
                        || (bits & 2 == 2 && iy + 1 >= ny)
                        || (bits & 4 == 4 && iz + 1 >= nz)
                    {
                        continue;
                    }
                    cells.push((grid.cube_value(anchor, bits), (anchor * 8 + bits as usize) as u32));
                }
            }
        }
    }
    // Filtration order: (value, dim, anchor, bits). Faces precede cofaces.
    cells.par_sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then_with(|| popcount3((a.1 & 7) as u8).cmp(&popcount3((b.1 & 7) as u8)))
            .then_with(|| a.1.cmp(&b.1))
    });
    let ncells = cells.len();
    let mut pos = vec![u32::MAX; nverts * 8];
    for (p, &(_, id)) in cells.iter().enumerate() {
        pos[id as usize] = p as u32;
    }

    const NONE: u32 = u32::MAX;
    let mut pivot_of_row: Vec<u32> = vec![NONE; ncells];
    let mut columns: Vec<Vec<u32>> = vec![Vec::new(); ncells];
    let mut cleared: Vec<bool> = vec![false; ncells];
    let mut is_destroyer: Vec<bool> = vec![false; ncells];
    // (row position, col position) pairs.
    let mut raw_pairs: Vec<(u32, u32)> = Vec::new();

    // Positions grouped by dimension, ascending within each.
    let mut by_dim: [Vec<u32>; 4] = Default::default();
    for (p, &(_, id)) in cells.iter().enumerate() {
        by_dim[popcount3((id & 7) as u8) as usize].push(p as u32);
    }

    let mut chain: Vec<u32> = Vec::new();
    let mut merged: Vec<u32> = Vec::new();
    for d in (1..=3usize).rev() {
        for &col in &by_dim[d] {
            if cleared[col as usize] {
                continue;
            }
            let id = cells[col as usize].1;
            let anchor = (id / 8) as usize;
            let bits = (id & 7) as u8;
            chain.clear();
            for a in 0..3 {
                if bits >> a & 1 == 1 {
                    let fbits = bits & !(1 << a);
                    let lo = anchor * 8 + fbits as usize;
                    let hi = (anchor + strides[a]) * 8 + fbits as usize;
                    chain.push(pos[lo]);
                    chain.push(pos[hi]);
                }
            }
            chain.sort_unstable();
            loop {
                let Some(&low) = chain.last() else { break };
                let owner = pivot_of_row[low as usize];
                if owner == NONE {
                    pivot_of_row[low as usize] = col;
                    raw_pairs.push((low, col));
                    is_destroyer[col as usize] = true;
                    cleared[low as usize] = true;
                    columns[col as usize] = chain.clone();
                    break;
                }
                // chain ^= columns[owner]
                let other = &columns[owner as usize];
                merged.clear();
                let (mut i, mut j) = (0, 0);
                while i < chain.len() && j < other.len() {
                    match chain[i].cmp(&other[j]) {
                        std::cmp::Ordering::Less => {
                            merged.push(chain[i]);
                            i += 1;
                        }
                        std::cmp::Ordering::Greater => {
                            merged.push(other[j]);
                            j += 1;
                        }
                        std::cmp::Ordering::Equal => {
                            i += 1;
                            j += 1;
                        }
                    }
                }
                merged.extend_from_slice(&chain[i..]);
                merged.extend_from_slice(&other[j..]);
                std::mem::swap(&mut chain, &mut merged);
            }
        }
    }

    let mut pairs = Vec::new();
    for &(row, col) in &raw_pairs {
        let (birth, cid) = cells[row as usize];
        let (death, did) = cells[col as usize];
        if birth < death {
            let dim = popcount3((cid & 7) as u8);
            pairs.push(PersistencePair {
                dim,
                birth,
                death,
                birth_vertex: grid
                    .cube_generating_vertex((cid / 8) as usize, (cid & 7) as u8),
                death_vertex: Some(
                    grid.cube_generating_vertex((did / 8) as usize, (did & 7) as u8),
                ),
            });
        }
    }
    // Essential classes: positive cells whose row was never claimed.
    for (p, &(value, id)) in cells.iter().enumerate() {
        if !is_destroyer[p] && pivot_of_row[p] == NONE {
            let dim = popcount3((id & 7) as u8);
            if dim <= 2 {
                pairs.push(PersistencePair {
                    dim,
                    birth: value,
                    death: f64::INFINITY,
                    birth_vertex: grid.cube_generating_vertex((id / 8) as usize, (id & 7) as u8),
                    death_vertex: None,
                });
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.dim
            .cmp(&b.dim)
            .then_with(|| a.birth.partial_cmp(&b.birth).unwrap())
            .then_with(|| a.death.partial_cmp(&b.death).unwrap())
            .then_with(|| a.birth_vertex.cmp(&b.birth_vertex))
    });
    PersistenceDiagram {
        pairs,
        min_value: grid.min_value(),
        max_value: grid.max_value(),
        grid_dims: grid.dims,
    }
}

/// Betti numbers at threshold t: pairs with birth <= t < death.
pub fn betti_at(diagram: &PersistenceDiagram, t: f64) -> [usize; 3] {
    let mut betti = [0usize; 3];
    for p in &diagram.pairs {
        if p.dim <= 2 && p.birth <= t && t < p.death {
            betti[p.dim as usize] += 1;
        }
    }
    betti
}

/// CSV export: dim,birth,death,bx,by,bz,dx,dy,dz with spatial coordinates of
/// the generating vertices; death fields empty for infinite pairs.
pub fn export_csv<W: std::io::Write>(
    diagram: &PersistenceDiagram,
    grid: &FiltrationGrid,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "dim,birth,death,bx,by,bz,dx,dy,dz")?;
    for p in &diagram.pairs {
        let b = grid.vertex_position(p.birth_vertex);
        if let Some(dv) = p.death_vertex {
            let d = grid.vertex_position(dv);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                p.dim, p.birth, p.death, b[0], b[1], b[2], d[0], d[1], d[2]
            )?;
        } else {
            writeln!(out, "{},{},,{},{},{},,,", p.dim, p.birth, b[0], b[1], b[2])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_from(dims: [usize; 3], values: Vec<f64>) -> FiltrationGrid {
        FiltrationGrid::new(dims, Box3::cube(0.0, 1.0), values).unwrap()
    }

    #[test]
    fn constant_field_cube_values() {
        let g = grid_from([2, 2, 2], vec![0.0; 8]);
        for bits in 0..8u8 {
            assert_eq!(g.cube_value(0, bits), 0.0);
        }
        assert_eq!(g.cell_counts(), [8, 12, 6, 1]);
    }

    #[test]
    fn edge_value_is_max_rule() {
        // f(x) = x on [0,1] with 3 samples along x.
        let mut values = vec![0.0; 3 * 2 * 2];
        let g0 = grid_from([3, 2, 2], values.clone());
        for i in 0..12 {
            let [ix, _, _] = g0.vertex_coords(i);
            values[i] = ix as f64 * 0.5;
        }
        let g = grid_from([3, 2, 2], values);
        // edge along x from vertex (0,0,0) to (1,0,0)
        assert_eq!(g.cube_value(g.vertex_index(0, 0, 0), 1), 0.5);
    }

    #[test]
    fn single_minimum_is_contractible() {
        // f = distance to center: sublevels are balls.
        let n = 7;
        let c = (n - 1) as f64 / 2.0;
        let mut values = vec![0.0; n * n * n];
        let g0 = grid_from([n, n, n], values.clone());
        for i in 0..values.len() {
            let [x, y, z] = g0.vertex_coords(i);
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2))
                .sqrt();
            values[i] = d;
        }
        let g = grid_from([n, n, n], values);
        let pd = compute_persistence(&g);
        let infinite: Vec<_> = pd.pairs.iter().filter(|p| p.is_infinite()).collect();
        assert_eq!(infinite.len(), 1);
        assert_eq!(infinite[0].dim, 0);
        assert_eq!(pd.pairs_of_dim(2).count(), 0);
    }

    #[test]
    fn spherical_shell_creates_cavity() {
        // f = |distance to center - r|: the shell closes, enclosing a cavity
        // that fills when the interior is absorbed.
        let n = 9;
        let c = (n - 1) as f64 / 2.0;
        let r = 2.6;
        let mut values = vec![0.0; n * n * n];
        let g0 = grid_from([n, n, n], values.clone());
        for i in 0..values.len() {
            let [x, y, z] = g0.vertex_coords(i);
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2))
                .sqrt();
            values[i] = (d - r).abs();
        }
        let g = grid_from([n, n, n], values);
        let pd = compute_persistence(&g);
        let cavities: Vec<_> = pd.pairs_of_dim(2).filter(|p| !p.is_infinite()).collect();
        assert_eq!(cavities.len(), 1, "pairs: {:?}", cavities);
        let cav = cavities[0];
        // cavity dies when the interior (distance r from the shell at the
        // center) fills in
        assert!(cav.birth < cav.death);
        assert!((cav.death - r).abs() < 0.5, "death = {}", cav.death);
    }

    /// Two-minima ring: 0-dim pairs {(0,1),(0,inf)} and 1-dim pair (1,2).
    #[test]
    fn two_minima_loop_profile() {
        // 3x3 ring: minima 0 at opposite corners, saddles 1 on the ring,
        // center 2.
        let values = vec![
            0.0, 1.0, 1.0, // (0,0) (0,1) (0,2)
            1.0, 2.0, 1.0, // (1,0) (1,1) (1,2)
            1.0, 1.0, 0.0, // (2,0) (2,1) (2,2)
        ];
        // dims (3,3,1): a flat 2D grid.
        let g = grid_from([3, 3, 1], values);
        let pd = compute_persistence(&g);
        let d0: Vec<_> = pd.pairs_of_dim(0).collect();
        assert_eq!(d0.len(), 2);
        let finite0 = d0.iter().find(|p| !p.is_infinite()).unwrap();
        assert_eq!((finite0.birth, finite0.death), (0.0, 1.0));
        let inf0 = d0.iter().find(|p| p.is_infinite()).unwrap();
        assert_eq!(inf0.birth, 0.0);
        let d1: Vec<_> = pd.pairs_of_dim(1).collect();
        assert_eq!(d1.len(), 1);
        assert_eq!((d1[0].birth, d1[0].death), (1.0, 2.0));

        assert_eq!(betti_at(&pd, 0.5), [2, 0, 0]);
        assert_eq!(betti_at(&pd, 1.5), [1, 1, 0]);
    }

    #[test]
    fn betti_of_empty_diagram() {
        let pd = PersistenceDiagram {
            pairs: vec![],
            min_value: 0.0,
            max_value: 0.0,
            grid_dims: [2, 2, 2],
        };
        assert_eq!(betti_at(&pd, 0.0), [0, 0, 0]);
    }

    #[test]
    fn inverse_mapping_reproduces_values() {
        let n = 6;
        let mut values = vec![0.0; n * n * n];
        let g0 = grid_from([n, n, n], values.clone());
        for i in 0..values.len() {
            let [x, y, z] = g0.vertex_coords(i);
            values[i] = ((x * 7 + y * 3 + z * 11) % 17) as f64 * 0.25 + (i % 5) as f64 * 0.01;
        }
        let g = grid_from([n, n, n], values);
        let pd = compute_persistence(&g);
        for p in &pd.pairs {
            assert!((g.vertex_values[p.birth_vertex] - p.birth).abs() < 1e-12);
            if let Some(dv) = p.death_vertex {
                assert!((g.vertex_values[dv] - p.death).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stability_under_small_perturbation() {
        let n = 6;
        let mut values = vec![0.0; n * n * n];
        let g0 = grid_from([n, n, n], values.clone());
        for i in 0..values.len() {
            let [x, y, z] = g0.vertex_coords(i);
            values[i] = (x as f64 * 0.9).sin() + (y as f64 * 1.3).cos() + (z as f64 * 0.7).sin();
        }
        let delta = 1e-4;
        let perturbed: Vec<f64> = values
            .iter()
            .enumerate()
            .map(|(i, v)| v + delta * ((i % 3) as f64 - 1.0))
            .collect();
        let pd_a = compute_persistence(&grid_from([n, n, n], values));
        let pd_b = compute_persistence(&grid_from([n, n, n], perturbed));
        // generic values: match pairs one-to-one per dimension by order
        for d in 0..3u8 {
            let a: Vec<_> = pd_a.pairs_of_dim(d).filter(|p| !p.is_infinite()).collect();
            let b: Vec<_> = pd_b.pairs_of_dim(d).filter(|p| !p.is_infinite()).collect();
            assert_eq!(a.len(), b.len());
            for (pa, pb) in a.iter().zip(&b) {
                assert!((pa.birth - pb.birth).abs() <= delta + 1e-12);
                assert!((pa.death - pb.death).abs() <= delta + 1e-12);
            }
        }
    }
}
