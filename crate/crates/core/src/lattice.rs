//! Finite rectangular subdomains of Z^d and their cable-graph edge structure.
//!
//! A domain is an axis-aligned box of interior lattice points. The boundary
//! shell (points at L1-distance exactly 1 from the interior) is collapsed to a
//! single absorbing sink: the walk is killed there and the field vanishes
//! there, so individual boundary identities never matter. Every interior
//! vertex of Z^d has exactly `2d` incident cable edges, counting sink edges.
//!
//! Vertices carry dense ids in lexicographic order of their coordinates
//! (coordinate 0 most significant). Edge ids are dense as well, in two blocks:
//! `v*d + axis` for the edge from `v` towards `+e_axis` (owned by the lower
//! endpoint), followed by one block per axis for the edges that leave the
//! lower face of the box towards the boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on interior vertices; `build_box` refuses larger domains.
pub const DEFAULT_VERTEX_BUDGET: usize = 1 << 24;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("domain has {vertices} vertices, exceeding the budget of {budget}")]
    CapacityExceeded { vertices: u128, budget: usize },
    #[error("invalid domain spec: {0}")]
    InvalidSpec(String),
    #[error("vertex id {0} out of range")]
    UnknownVertex(usize),
    #[error("edge id {0} out of range")]
    UnknownEdge(usize),
    #[error("rect {0:?}..{1:?} is not contained in the domain interior")]
    RectOutsideDomain(Vec<i64>, Vec<i64>),
}

/// A centered box Λ_N = [-N, N]^d ∩ Z^d.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub dim: usize,
    pub half_width: i64,
}

impl BoxSpec {
    pub fn new(dim: usize, half_width: i64) -> Self {
        Self { dim, half_width }
    }

    /// (2N+1)^d, computed in wide arithmetic so oversized specs are reportable.
    pub fn vertex_count_wide(&self) -> u128 {
        let side = (2 * self.half_width + 1) as u128;
        (0..self.dim).fold(1u128, |acc, _| acc.saturating_mul(side))
    }
}

/// Where a lattice step out of an interior vertex lands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Neighbor {
    Interior(usize),
    /// The absorbing sink standing for the whole boundary shell.
    Sink,
}

/// An axis-aligned sub-box, used for cluster/box intersection counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl Rect {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, p: &[i64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (lo, hi))| lo <= x && x <= hi)
    }
}

/// A finite rectangular interior in Z^d with its collapsed boundary sink.
#[derive(Clone, Debug)]
pub struct LatticeDomain {
    lo: Vec<i64>,
    hi: Vec<i64>,
    sides: Vec<usize>,
    strides: Vec<usize>,
    vertex_count: usize,
    edge_count: usize,
    /// Number of "up" edges (one per vertex per axis); down-boundary edge ids
    /// start here.
    up_block: usize,
    /// Per-axis offsets of the down-boundary edge blocks.
    face_offsets: Vec<usize>,
}

impl LatticeDomain {
    /// Builds Λ_N with the default vertex budget.
    pub fn build_box(spec: &BoxSpec) -> Result<Self, LatticeError> {
        Self::build_box_with_budget(spec, DEFAULT_VERTEX_BUDGET)
    }

    pub fn build_box_with_budget(spec: &BoxSpec, budget: usize) -> Result<Self, LatticeError> {
        if spec.dim < 1 {
            return Err(LatticeError::InvalidSpec("dimension must be >= 1".into()));
        }
        if spec.half_width < 1 {
            return Err(LatticeError::InvalidSpec("half-width must be >= 1".into()));
        }
        let wide = spec.vertex_count_wide();
        if wide > budget as u128 {
            return Err(LatticeError::CapacityExceeded {
                vertices: wide,
                budget,
            });
        }
        let lo = vec![-spec.half_width; spec.dim];
        let hi = vec![spec.half_width; spec.dim];
        Ok(Self::from_rect(lo, hi))
    }

    /// A path fixture: interior {1..k} in Z^1, boundary {0, k+1}.
    pub fn build_path(k: usize) -> Result<Self, LatticeError> {
        if k < 1 {
            return Err(LatticeError::InvalidSpec("path length must be >= 1".into()));
        }
        Ok(Self::from_rect(vec![1], vec![k as i64]))
    }

    fn from_rect(lo: Vec<i64>, hi: Vec<i64>) -> Self {
        let dim = lo.len();
        let sides: Vec<usize> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| (h - l + 1) as usize)
            .collect();
        let mut strides = vec![1usize; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * sides[a + 1];
        }
        let vertex_count: usize = sides.iter().product();
        let up_block = dim * vertex_count;
        let mut face_offsets = Vec::with_capacity(dim);
        let mut acc = 0usize;
        for &side in &sides {
            face_offsets.push(acc);
            acc += vertex_count / side;
        }
        let edge_count = up_block + acc;
        Self {
            lo,
            hi,
            sides,
            strides,
            vertex_count,
            edge_count,
            up_block,
            face_offsets,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Every interior vertex has exactly 2d incident cable edges.
    pub fn degree(&self) -> usize {
        2 * self.dim()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    /// Number of boundary-shell points (faces only; corners of the enlarged
    /// box are at L1-distance >= 2 and not part of the shell).
    pub fn boundary_count(&self) -> usize {
        (0..self.dim())
            .map(|a| 2 * self.vertex_count / self.sides[a])
            .sum()
    }

    /// Explicit boundary shell; intended for small domains and tests.
    pub fn boundary_points(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::with_capacity(self.boundary_count());
        let mut p = vec![0i64; self.dim()];
        for a in 0..self.dim() {
            let face = self.vertex_count / self.sides[a];
            for rank in 0..face {
                self.face_point_into(a, rank, &mut p);
                p[a] = self.lo[a] - 1;
                out.push(p.clone());
                p[a] = self.hi[a] + 1;
                out.push(p.clone());
            }
        }
        out
    }

    #[inline]
    pub fn digit(&self, v: usize, axis: usize) -> usize {
        (v / self.strides[axis]) % self.sides[axis]
    }

    pub fn index_of(&self, p: &[i64]) -> Option<usize> {
        if p.len() != self.dim() {
            return None;
        }
        let mut id = 0usize;
        for (a, &pa) in p.iter().enumerate() {
            if pa < self.lo[a] || pa > self.hi[a] {
                return None;
            }
            id += (pa - self.lo[a]) as usize * self.strides[a];
        }
        Some(id)
    }

    pub fn is_interior(&self, p: &[i64]) -> bool {
        self.index_of(p).is_some()
    }

    pub fn point(&self, v: usize) -> Vec<i64> {
        let mut p = vec![0i64; self.dim()];
        self.point_into(v, &mut p);
        p
    }

    pub fn point_into(&self, v: usize, out: &mut [i64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.lo[a] + self.digit(v, a) as i64;
        }
    }

    /// Coordinates of the `rank`-th point of the lower face of `axis`
    /// (the face coordinate itself is left untouched).
    fn face_point_into(&self, axis: usize, rank: usize, out: &mut [i64]) {
        let mut rem = rank;
        for (a, o) in out.iter_mut().enumerate() {
            if a == axis {
                continue;
            }
            let stride = if a < axis {
                self.strides[a] / self.sides[axis]
            } else {
                self.strides[a]
            };
            *o = self.lo[a] + (rem / stride) as i64;
            rem %= stride;
        }
    }

    /// Rank of a lower-face vertex within its face block (digit on `axis` is 0).
    #[inline]
    fn face_rank(&self, v: usize, axis: usize) -> usize {
        let span = self.strides[axis] * self.sides[axis];
        (v / span) * self.strides[axis] + v % self.strides[axis]
    }

    /// Edge id of {v, v + e_axis}; valid for every interior v.
    #[inline]
    pub fn up_edge(&self, v: usize, axis: usize) -> usize {
        v * self.dim() + axis
    }

    /// Edge id of {v - e_axis, v} when v sits on the lower face of `axis`.
    #[inline]
    fn down_boundary_edge(&self, v: usize, axis: usize) -> usize {
        self.up_block + self.face_offsets[axis] + self.face_rank(v, axis)
    }

    /// Visits the 2d neighbors of `v` in a fixed order (axis-major, down then
    /// up), passing the landing site and the cable-edge id.
    #[inline]
    pub fn for_each_neighbor<F: FnMut(Neighbor, usize)>(&self, v: usize, mut f: F) {
        for a in 0..self.dim() {
            let digit = self.digit(v, a);
            if digit > 0 {
                let w = v - self.strides[a];
                f(Neighbor::Interior(w), self.up_edge(w, a));
            } else {
                f(Neighbor::Sink, self.down_boundary_edge(v, a));
            }
            if digit + 1 < self.sides[a] {
                f(Neighbor::Interior(v + self.strides[a]), self.up_edge(v, a));
            } else {
                f(Neighbor::Sink, self.up_edge(v, a));
            }
        }
    }

    pub fn neighbors(&self, v: usize) -> Result<Vec<(Neighbor, usize)>, LatticeError> {
        if v >= self.vertex_count {
            return Err(LatticeError::UnknownVertex(v));
        }
        let mut out = Vec::with_capacity(self.degree());
        self.for_each_neighbor(v, |n, e| out.push((n, e)));
        Ok(out)
    }

    /// Both endpoints of an edge; boundary endpoints come back as lattice points.
    pub fn edge_endpoints(&self, e: usize) -> Result<(usize, Neighbor, Vec<i64>), LatticeError> {
        if e >= self.edge_count {
            return Err(LatticeError::UnknownEdge(e));
        }
        if e < self.up_block {
            let v = e / self.dim();
            let a = e % self.dim();
            if self.digit(v, a) + 1 < self.sides[a] {
                let w = v + self.strides[a];
                Ok((v, Neighbor::Interior(w), self.point(w)))
            } else {
                let mut p = self.point(v);
                p[a] += 1;
                Ok((v, Neighbor::Sink, p))
            }
        } else {
            let rel = e - self.up_block;
            let a = match self.face_offsets.binary_search(&rel) {
                Ok(i) => i,
                Err(i) => i - 1,
            };
            let rank = rel - self.face_offsets[a];
            let span = self.strides[a] * self.sides[a];
            let v = (rank / self.strides[a]) * span + rank % self.strides[a];
            let mut p = self.point(v);
            p[a] -= 1;
            Ok((v, Neighbor::Sink, p))
        }
    }

    /// Iterates interior-interior edges as (lower id, upper id, edge id).
    pub fn interior_edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.vertex_count).flat_map(move |v| {
            (0..self.dim()).filter_map(move |a| {
                if self.digit(v, a) + 1 < self.sides[a] {
                    Some((v, v + self.strides[a], self.up_edge(v, a)))
                } else {
                    None
                }
            })
        })
    }

    /// Ids of interior vertices inside `rect`; errors if the rect leaks outside.
    pub fn vertices_in_rect(&self, rect: &Rect) -> Result<Vec<usize>, LatticeError> {
        if rect.lo.len() != self.dim()
            || rect
                .lo
                .iter()
                .zip(&rect.hi)
                .zip(self.lo.iter().zip(&self.hi))
                .any(|((rl, rh), (dl, dh))| rl < dl || rh > dh || rl > rh)
        {
            return Err(LatticeError::RectOutsideDomain(
                rect.lo.clone(),
                rect.hi.clone(),
            ));
        }
        let mut ids = Vec::new();
        let mut p = rect.lo.clone();
        loop {
            ids.push(self.index_of(&p).expect("rect checked against interior"));
            let mut a = self.dim();
            loop {
                if a == 0 {
                    return Ok(ids);
                }
                a -= 1;
                p[a] += 1;
                if p[a] <= rect.hi[a] {
                    break;
                }
                p[a] = rect.lo[a];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    /// Brute-force enumeration of interior, boundary, and edges of a rect.
    fn enumerate_rect(lo: &[i64], hi: &[i64]) -> (Vec<Vec<i64>>, HashSet<Vec<i64>>, usize, usize) {
        let d = lo.len();
        let mut interior = vec![];
        let mut p = lo.to_vec();
        'outer: loop {
            interior.push(p.clone());
            let mut a = d;
            loop {
                if a == 0 {
                    break 'outer;
                }
                a -= 1;
                p[a] += 1;
                if p[a] <= hi[a] {
                    break;
                }
                p[a] = lo[a];
            }
        }
        let inside: HashSet<Vec<i64>> = interior.iter().cloned().collect();
        let mut boundary = HashSet::new();
        let mut ii_edges = 0usize;
        let mut ib_edges = 0usize;
        for q in &interior {
            for a in 0..d {
                for s in [-1i64, 1] {
                    let mut r = q.clone();
                    r[a] += s;
                    if inside.contains(&r) {
                        if s == 1 {
                            ii_edges += 1;
                        }
                    } else {
                        boundary.insert(r);
                        ib_edges += 1;
                    }
                }
            }
        }
        (interior, boundary, ii_edges, ib_edges)
    }

    #[test]
    fn box_d1_n1_counts() {
        let dom = LatticeDomain::build_box(&BoxSpec::new(1, 1)).unwrap();
        assert_eq!(dom.vertex_count(), 3);
        assert_eq!(dom.edge_count(), 4);
        let b: HashSet<Vec<i64>> = dom.boundary_points().into_iter().collect();
        assert_eq!(b, HashSet::from([vec![-2], vec![2]]));
    }

    #[test]
    fn box_d7_n3_vertex_count() {
        let spec = BoxSpec::new(7, 3);
        assert_eq!(spec.vertex_count_wide(), 823_543);
        let dom = LatticeDomain::build_box(&spec).unwrap();
        assert_eq!(dom.vertex_count(), 823_543);
    }

    #[test]
    fn box_d2_n2_matches_enumeration_oracle() {
        let dom = LatticeDomain::build_box(&BoxSpec::new(2, 2)).unwrap();
        let (interior, boundary, ii, ib) = enumerate_rect(dom.lo(), dom.hi());
        assert_eq!(dom.vertex_count(), interior.len());
        assert_eq!(dom.vertex_count(), 25);
        assert_eq!(dom.boundary_count(), boundary.len());
        assert_eq!(dom.boundary_count(), 20);
        assert_eq!(dom.edge_count(), ii + ib);
        assert_eq!(dom.edge_count(), 60);
        assert_eq!((ii, ib), (40, 20));
        let pts: HashSet<Vec<i64>> = dom.boundary_points().into_iter().collect();
        assert_eq!(pts, boundary);
    }

    #[test]
    fn path_fixtures() {
        let p1 = LatticeDomain::build_path(1).unwrap();
        assert_eq!(p1.vertex_count(), 1);
        assert_eq!(p1.edge_count(), 2);

        let p2 = LatticeDomain::build_path(2).unwrap();
        assert_eq!(p2.vertex_count(), 2);
        assert_eq!(p2.index_of(&[1]), Some(0));
        assert_eq!(p2.index_of(&[2]), Some(1));

        let p3 = LatticeDomain::build_path(3).unwrap();
        assert_eq!(p3.vertex_count(), 3);
        assert_eq!(p3.edge_count(), 4);
        let b: HashSet<Vec<i64>> = p3.boundary_points().into_iter().collect();
        assert_eq!(b, HashSet::from([vec![0], vec![4]]));
    }

    #[test]
    fn capacity_budget_enforced() {
        let err = LatticeDomain::build_box_with_budget(&BoxSpec::new(3, 10), 1000).unwrap_err();
        assert!(matches!(err, LatticeError::CapacityExceeded { .. }));
        // A spec too large for usize arithmetic must not panic.
        let err = LatticeDomain::build_box(&BoxSpec::new(40, 1_000_000)).unwrap_err();
        assert!(matches!(err, LatticeError::CapacityExceeded { .. }));
    }

    #[test]
    fn neighbors_center_and_corner() {
        let dom = LatticeDomain::build_box(&BoxSpec::new(2, 1)).unwrap();
        let center = dom.index_of(&[0, 0]).unwrap();
        let ns = dom.neighbors(center).unwrap();
        assert_eq!(ns.len(), 4);
        assert!(ns.iter().all(|(n, _)| matches!(n, Neighbor::Interior(_))));

        let dom3 = LatticeDomain::build_box(&BoxSpec::new(3, 1)).unwrap();
        let corner = dom3.index_of(&[1, 1, 1]).unwrap();
        let ns = dom3.neighbors(corner).unwrap();
        assert_eq!(ns.len(), 6);
        let sinks = ns
            .iter()
            .filter(|(n, _)| matches!(n, Neighbor::Sink))
            .count();
        assert_eq!(sinks, 3);

        let p2 = LatticeDomain::build_path(2).unwrap();
        let ns = p2.neighbors(0).unwrap();
        assert_eq!(ns.len(), 2);
        assert!(ns.contains(&(Neighbor::Interior(1), p2.up_edge(0, 0))));
        assert_eq!(
            ns.iter()
                .filter(|(n, _)| matches!(n, Neighbor::Sink))
                .count(),
            1
        );

        assert!(p2.neighbors(2).is_err());
    }

    #[test]
    fn degree_sum_identity() {
        for (d, n) in [(1, 3), (2, 2), (3, 1), (4, 1)] {
            let dom = LatticeDomain::build_box(&BoxSpec::new(d, n)).unwrap();
            let (_, _, ii, ib) = enumerate_rect(dom.lo(), dom.hi());
            let degree_sum: usize = (0..dom.vertex_count())
                .map(|v| dom.neighbors(v).unwrap().len())
                .sum();
            assert_eq!(degree_sum, 2 * ii + ib);
            assert_eq!(degree_sum, dom.vertex_count() * 2 * d);
        }
    }

    #[test]
    fn edge_ids_are_dense_and_consistent() {
        for dom in [
            LatticeDomain::build_box(&BoxSpec::new(2, 2)).unwrap(),
            LatticeDomain::build_box(&BoxSpec::new(3, 1)).unwrap(),
            LatticeDomain::build_path(3).unwrap(),
        ] {
            let mut seen = vec![0usize; dom.edge_count()];
            for v in 0..dom.vertex_count() {
                for (_, e) in dom.neighbors(v).unwrap() {
                    seen[e] += 1;
                }
            }
            // Interior-interior edges are reported by both endpoints, sink
            // edges by one.
            let (_, _, ii, ib) = enumerate_rect(dom.lo(), dom.hi());
            assert_eq!(seen.iter().filter(|&&c| c == 2).count(), ii);
            assert_eq!(seen.iter().filter(|&&c| c == 1).count(), ib);
            assert!(seen.iter().all(|&c| c > 0));

            // Endpoint decoding matches the neighbor listing.
            for (x, y, e) in dom.interior_edges() {
                let (a, b, _) = dom.edge_endpoints(e).unwrap();
                assert_eq!((a, b), (x, Neighbor::Interior(y)));
            }
        }
    }

    #[test]
    fn interior_connected_by_bfs() {
        for dom in [
            LatticeDomain::build_box(&BoxSpec::new(2, 2)).unwrap(),
            LatticeDomain::build_box(&BoxSpec::new(3, 2)).unwrap(),
            LatticeDomain::build_path(5).unwrap(),
        ] {
            let mut seen = vec![false; dom.vertex_count()];
            let mut queue = vec![0usize];
            seen[0] = true;
            while let Some(v) = queue.pop() {
                dom.for_each_neighbor(v, |n, _| {
                    if let Neighbor::Interior(w) = n {
                        if !seen[w] {
                            seen[w] = true;
                            queue.push(w);
                        }
                    }
                });
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn vertices_in_rect_and_errors() {
        let dom = LatticeDomain::build_box(&BoxSpec::new(2, 2)).unwrap();
        let ids = dom
            .vertices_in_rect(&Rect::new(vec![-1, 0], vec![1, 1]))
            .unwrap();
        assert_eq!(ids.len(), 6);
        assert!(dom
            .vertices_in_rect(&Rect::new(vec![-3, 0], vec![0, 0]))
            .is_err());
    }

    proptest::proptest! {
        #[test]
        fn index_roundtrip(d in 1usize..4, n in 1i64..4, salt in 0usize..1000) {
            let dom = LatticeDomain::build_box(&BoxSpec::new(d, n)).unwrap();
            let v = salt % dom.vertex_count();
            let p = dom.point(v);
            proptest::prop_assert_eq!(dom.index_of(&p), Some(v));
        }
    }
}
