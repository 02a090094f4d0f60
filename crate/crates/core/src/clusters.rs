//! Cluster extraction from per-edge open marks and the cluster statistics
//! used by the high-dimensional scans.
//!
//! Clusters are connected components of the open-edge graph on interior
//! vertices. The boundary sink never joins a cluster (its edges are always
//! closed), and since the field/occupation vanishes nowhere almost surely,
//! every interior vertex carries a label; isolated vertices are legitimate
//! size-1 clusters. Components are canonically ordered by their minimal
//! vertex id.

use thiserror::Error;

use crate::lattice::{LatticeDomain, Rect};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("open-mark vector has length {got}, domain has {want} edges")]
    MarkLengthMismatch { got: usize, want: usize },
    #[error(transparent)]
    Lattice(#[from] crate::lattice::LatticeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClusterStat {
    /// Minimal vertex id contained in the cluster (the deterministic label).
    pub canonical: u32,
    pub size: u32,
    /// L-infinity diameter in lattice coordinates.
    pub diam_linf: u32,
}

#[derive(Clone, Debug)]
pub struct ClusterReport {
    /// Per vertex: index into `clusters`.
    labels: Vec<u32>,
    /// Ascending in `canonical`.
    clusters: Vec<ClusterStat>,
}

impl ClusterReport {
    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn clusters(&self) -> &[ClusterStat] {
        &self.clusters
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn cluster_index(&self, v: usize) -> usize {
        self.labels[v] as usize
    }

    /// C(x): the cluster containing `x`.
    pub fn cluster_of(&self, v: usize) -> &ClusterStat {
        &self.clusters[self.labels[v] as usize]
    }

    pub fn same_cluster(&self, x: usize, y: usize) -> bool {
        self.labels[x] == self.labels[y]
    }

    /// Vertex ids of C(x); linear scan, intended for small domains.
    pub fn members(&self, v: usize) -> Vec<usize> {
        let slot = self.labels[v];
        (0..self.labels.len())
            .filter(|&w| self.labels[w] == slot)
            .collect()
    }

    pub fn max_size(&self) -> u32 {
        self.clusters.iter().map(|c| c.size).max().unwrap_or(0)
    }

    /// Number of clusters with L-infinity diameter strictly above `threshold`.
    pub fn large_cluster_count(&self, threshold: f64) -> usize {
        self.clusters
            .iter()
            .filter(|c| c.diam_linf as f64 > threshold)
            .count()
    }

    /// Sum over clusters of |C_n|^2; exact integer arithmetic.
    pub fn sum_sizes_squared(&self) -> u64 {
        self.clusters
            .iter()
            .map(|c| c.size as u64 * c.size as u64)
            .sum()
    }

    /// Sum over vertices of |C(x)|, computed through the labels; equals
    /// `sum_sizes_squared` identically (double counting), which the
    /// per-sample identity checks exploit.
    pub fn sum_cluster_size_over_vertices(&self) -> u64 {
        self.labels
            .iter()
            .map(|&s| self.clusters[s as usize].size as u64)
            .sum()
    }
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut v: u32) -> u32 {
        // Path halving.
        while self.parent[v as usize] != v {
            let p = self.parent[v as usize];
            self.parent[v as usize] = self.parent[p as usize];
            v = self.parent[v as usize];
        }
        v
    }

    /// Union by size; returns (surviving root, absorbed root) when a merge
    /// happened.
    fn union(&mut self, a: u32, b: u32) -> Option<(u32, u32)> {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return None;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        Some((ra, rb))
    }
}

/// Union-find pass over the open interior-interior edges, then one labeling
/// pass assigning canonical ids and collecting sizes and bounding boxes.
pub fn extract_clusters(
    dom: &LatticeDomain,
    open: &[bool],
) -> Result<ClusterReport, ClusterError> {
    if open.len() != dom.edge_count() {
        return Err(ClusterError::MarkLengthMismatch {
            got: open.len(),
            want: dom.edge_count(),
        });
    }
    let n = dom.vertex_count();
    let d = dom.dim();
    let sides = dom.sides();
    let mut uf = UnionFind::new(n);

    // Per-root bounding box in digit coordinates, merged on union.
    let mut bb_lo = vec![0u32; n * d];
    let mut bb_hi = vec![0u32; n * d];
    {
        let mut digits = vec![0u32; d];
        for v in 0..n {
            bb_lo[v * d..(v + 1) * d].copy_from_slice(&digits);
            bb_hi[v * d..(v + 1) * d].copy_from_slice(&digits);
            let mut a = d;
            while a > 0 {
                a -= 1;
                digits[a] += 1;
                if (digits[a] as usize) < sides[a] {
                    break;
                }
                digits[a] = 0;
            }
        }
    }

    let mut strides = vec![0usize; d];
    for a in 0..d {
        strides[a] = if a + 1 < d {
            sides[a + 1..].iter().product()
        } else {
            1
        };
    }
    {
        let mut digits = vec![0usize; d];
        for v in 0..n {
            for a in 0..d {
                if digits[a] + 1 < sides[a] && open[dom.up_edge(v, a)] {
                    if let Some((root, old)) = uf.union(v as u32, (v + strides[a]) as u32) {
                        for i in 0..d {
                            let (r, o) = (root as usize * d + i, old as usize * d + i);
                            bb_lo[r] = bb_lo[r].min(bb_lo[o]);
                            bb_hi[r] = bb_hi[r].max(bb_hi[o]);
                        }
                    }
                }
            }
            let mut a = d;
            while a > 0 {
                a -= 1;
                digits[a] += 1;
                if digits[a] < sides[a] {
                    break;
                }
                digits[a] = 0;
            }
        }
    }

    // Ascending scan: the first vertex seen for each root is its minimal one,
    // so slots come out sorted by canonical id.
    let mut labels = vec![u32::MAX; n];
    let mut slot_of_root = vec![u32::MAX; n];
    let mut clusters = Vec::new();
    for v in 0..n as u32 {
        let root = uf.find(v);
        let mut slot = slot_of_root[root as usize];
        if slot == u32::MAX {
            slot = clusters.len() as u32;
            slot_of_root[root as usize] = slot;
            let diam = (0..d)
                .map(|i| bb_hi[root as usize * d + i] - bb_lo[root as usize * d + i])
                .max()
                .unwrap_or(0);
            clusters.push(ClusterStat {
                canonical: v,
                size: uf.size[root as usize],
                diam_linf: diam,
            });
        }
        labels[v as usize] = slot;
    }
    Ok(ClusterReport { labels, clusters })
}

/// Per-cluster intersection counts with two boxes and the cross statistic
/// X = sum_n |C_n ∩ B1| * |C_n ∩ B2|.
#[derive(Clone, Debug)]
pub struct BoxIntersections {
    /// (cluster slot, |C ∩ B1|, |C ∩ B2|) for clusters meeting either box.
    pub counts: Vec<(u32, u64, u64)>,
    pub cross_sum: u64,
}

pub fn box_intersections(
    dom: &LatticeDomain,
    report: &ClusterReport,
    b1: &Rect,
    b2: &Rect,
) -> Result<BoxIntersections, ClusterError> {
    let slots = report.num_clusters();
    let mut c1 = vec![0u64; slots];
    let mut c2 = vec![0u64; slots];
    for v in dom.vertices_in_rect(b1)? {
        c1[report.cluster_index(v)] += 1;
    }
    for v in dom.vertices_in_rect(b2)? {
        c2[report.cluster_index(v)] += 1;
    }
    let mut counts = Vec::new();
    let mut cross_sum = 0u64;
    for s in 0..slots {
        if c1[s] > 0 || c2[s] > 0 {
            counts.push((s as u32, c1[s], c2[s]));
            cross_sum += c1[s] * c2[s];
        }
    }
    Ok(BoxIntersections { counts, cross_sum })
}
