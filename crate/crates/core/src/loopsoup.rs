//! Discrete random-walk loop soup at the field intensity alpha = 1/2, its
//! occupation field, and the loop-side route to cable-graph clusters.
//!
//! Sampling uses the rooted decomposition: vertices are taken in a fixed
//! order, and the loops rooted at the i-th vertex x_i live in the shrinking
//! domain D_i with the earlier vertices removed. The measure of loops
//! through x_i in D_i is ln G_{D_i}(x_i, x_i), the Poisson count at
//! intensity alpha follows, the number of returns per loop is logarithmic
//! with parameter R_i = 1 - 1/G_{D_i}(x_i, x_i), and each return excursion
//! is the walk conditioned to hit x_i before leaving D_i (h-transform with
//! h(y) = G_{D_i}(y, x_i) / G_{D_i}(x_i, x_i)).
//!
//! The soup law does not depend on the vertex order, which doubles as a
//! statistical self-test. The occupation field adds an Exp(mean 1/2d)
//! holding time per loop visit on top of an independent Gamma(1/2, 1/2d)
//! base per vertex (the point-loop part), normalized so that gamma equals
//! phi^2/2 in law under the C = L^-1 field convention.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use thiserror::Error;

use crate::gff::EdgeCoupling;
use crate::green::{green_solve_masked, GreenError};
use crate::lattice::{LatticeDomain, Neighbor};

/// The loop route precomputes one Green solve per vertex, so it is a
/// validation device for moderate domains, not the scaling workhorse.
pub const DEFAULT_LOOP_ROUTE_CAP: usize = 2048;

/// Loops longer than this keep visit and traversal counts but drop the
/// explicit step sequence.
pub const DEFAULT_STEP_CAP: usize = 1_000_000;

/// Runaway guard for a single conditioned excursion.
const EXCURSION_HARD_CAP: usize = 50_000_000;

#[derive(Debug, Error)]
pub enum LoopSoupError {
    #[error("domain with {vertices} vertices exceeds the loop-route cap of {cap}")]
    DomainTooLarge { vertices: usize, cap: usize },
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error("vertex order is not a permutation of the domain")]
    BadOrder,
    #[error("h-transform has no admissible step at vertex {vertex}")]
    ZeroTransitionMass { vertex: usize },
    #[error("conditioned excursion exceeded {cap} steps; h-function looks corrupted")]
    ExcursionOverrun { cap: usize },
    #[error("loop soup intensity must be positive, got {0}")]
    BadIntensity(f64),
}

/// A rooted discrete loop. The root is the first vertex of the fixed order
/// the loop visits; `steps` is the cyclic vertex sequence starting at the
/// root (the closing return is implicit).
#[derive(Clone, Debug)]
pub struct DiscreteLoop {
    pub root: usize,
    pub num_steps: usize,
    pub steps: Option<Vec<usize>>,
    /// (vertex, visits), ascending in vertex id.
    pub visit_counts: Vec<(usize, u32)>,
    /// (edge id, traversals), ascending in edge id.
    pub edge_counts: Vec<(usize, u32)>,
}

/// One soup realization with its derived fields.
#[derive(Clone, Debug)]
pub struct LoopSoupSample {
    pub loops: Vec<DiscreteLoop>,
    /// Occupation local time per vertex.
    pub gamma: Vec<f64>,
    pub edge_traversals: Vec<u32>,
    /// Open marks per edge: traversed, or glued through the occupation field.
    pub glue_open: Vec<bool>,
}

/// Per-domain precomputation for the rooted decomposition: return masses and
/// h-functions of every shrinking domain. Immutable after construction and
/// shared across sampling threads.
pub struct LoopSoupEngine {
    dom: Arc<LatticeDomain>,
    /// order[i] = vertex handled at rank i.
    order: Vec<usize>,
    /// r_return[i] = 1 - 1/G_{D_i}(x_i, x_i).
    r_return: Vec<f64>,
    /// log_mass[i] = ln G_{D_i}(x_i, x_i), the loop measure rooted at x_i.
    log_mass: Vec<f64>,
    /// h[i][y] = P_y[hit x_i before leaving D_i]; h[i][x_i] = 1, zero
    /// outside D_i. Doubles as the h-transform step weight.
    h: Vec<Vec<f64>>,
    step_cap: usize,
}

impl LoopSoupEngine {
    /// Engine with the lexicographic (vertex-id) order.
    pub fn new(dom: Arc<LatticeDomain>, max_vertices: usize) -> Result<Self, LoopSoupError> {
        let order: Vec<usize> = (0..dom.vertex_count()).collect();
        Self::with_order(dom, order, max_vertices)
    }

    pub fn with_order(
        dom: Arc<LatticeDomain>,
        order: Vec<usize>,
        max_vertices: usize,
    ) -> Result<Self, LoopSoupError> {
        let n = dom.vertex_count();
        if n > max_vertices {
            return Err(LoopSoupError::DomainTooLarge {
                vertices: n,
                cap: max_vertices,
            });
        }
        if order.len() != n {
            return Err(LoopSoupError::BadOrder);
        }
        let mut seen = vec![false; n];
        for &v in &order {
            if v >= n || seen[v] {
                return Err(LoopSoupError::BadOrder);
            }
            seen[v] = true;
        }

        let mut active = vec![true; n];
        let mut r_return = Vec::with_capacity(n);
        let mut log_mass = Vec::with_capacity(n);
        let mut h = Vec::with_capacity(n);
        for &x in &order {
            let g = green_solve_masked(&dom, x, Some(&active))?;
            let gxx = g[x].max(1.0);
            r_return.push(1.0 - 1.0 / gxx);
            log_mass.push(gxx.ln());
            let mut hx: Vec<f64> = g.iter().map(|&v| (v / gxx).clamp(0.0, 1.0)).collect();
            hx[x] = 1.0;
            h.push(hx);
            active[x] = false;
        }
        Ok(Self {
            dom,
            order,
            r_return,
            log_mass,
            h,
            step_cap: DEFAULT_STEP_CAP,
        })
    }

    pub fn domain(&self) -> &Arc<LatticeDomain> {
        &self.dom
    }

    pub fn return_probability(&self, rank: usize) -> f64 {
        self.r_return[rank]
    }

    /// Loop-measure mass rooted at rank `rank`; the total over ranks is
    /// -ln det(I - P).
    pub fn log_mass(&self, rank: usize) -> f64 {
        self.log_mass[rank]
    }

    pub fn total_log_mass(&self) -> f64 {
        self.log_mass.iter().sum()
    }

    pub fn set_step_cap(&mut self, cap: usize) {
        self.step_cap = cap;
    }

    /// Draws one soup at intensity `alpha` (the field intensity is 1/2).
    pub fn sample_loops<R: Rng>(
        &self,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Vec<DiscreteLoop>, LoopSoupError> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(LoopSoupError::BadIntensity(alpha));
        }
        let mut loops = Vec::new();
        for rank in 0..self.order.len() {
            let lambda = alpha * self.log_mass[rank];
            if lambda <= 0.0 {
                continue;
            }
            let poisson = Poisson::new(lambda).expect("positive intensity");
            let count = poisson.sample(rng) as u64;
            for _ in 0..count {
                loops.push(self.sample_loop(rank, rng)?);
            }
        }
        Ok(loops)
    }

    fn sample_loop<R: Rng>(&self, rank: usize, rng: &mut R) -> Result<DiscreteLoop, LoopSoupError> {
        let returns = sample_logarithmic(self.r_return[rank], rng);
        let root = self.order[rank];
        let mut steps: Vec<usize> = Vec::new();
        let mut edges: Vec<usize> = Vec::new();
        let mut scratch = Vec::with_capacity(self.dom.degree());
        for _ in 0..returns {
            self.extend_excursion(rank, &mut steps, &mut edges, &mut scratch, rng)?;
        }
        let num_steps = steps.len();
        let mut visit_counts: HashMap<usize, u32> = HashMap::new();
        for &v in &steps {
            *visit_counts.entry(v).or_insert(0) += 1;
        }
        let mut visit_counts: Vec<(usize, u32)> = visit_counts.into_iter().collect();
        visit_counts.sort_unstable();
        let mut edge_counts: HashMap<usize, u32> = HashMap::new();
        for &e in &edges {
            *edge_counts.entry(e).or_insert(0) += 1;
        }
        let mut edge_counts: Vec<(usize, u32)> = edge_counts.into_iter().collect();
        edge_counts.sort_unstable();
        Ok(DiscreteLoop {
            root,
            num_steps,
            steps: if num_steps > self.step_cap {
                None
            } else {
                Some(steps)
            },
            visit_counts,
            edge_counts,
        })
    }

    /// One conditioned excursion root -> ... -> root, appending the visited
    /// vertices (root included, terminal return excluded) and every edge.
    fn extend_excursion<R: Rng>(
        &self,
        rank: usize,
        steps: &mut Vec<usize>,
        edges: &mut Vec<usize>,
        scratch: &mut Vec<(usize, usize, f64)>,
        rng: &mut R,
    ) -> Result<(), LoopSoupError> {
        let root = self.order[rank];
        let h = &self.h[rank];
        let mut current = root;
        let mut taken = 0usize;
        steps.push(root);
        loop {
            // Step weights P(current, z) h~(z); the uniform kernel cancels,
            // and h already carries h~(root) = 1 and 0 off D_i.
            scratch.clear();
            let mut total = 0.0;
            self.dom.for_each_neighbor(current, |n, e| {
                if let Neighbor::Interior(w) = n {
                    let wgt = h[w];
                    if wgt > 0.0 {
                        scratch.push((w, e, wgt));
                        total += wgt;
                    }
                }
            });
            if total <= 0.0 {
                return Err(LoopSoupError::ZeroTransitionMass { vertex: current });
            }
            let mut u = rng.random::<f64>() * total;
            let mut chosen = scratch.len() - 1;
            for (i, cand) in scratch.iter().enumerate() {
                u -= cand.2;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            let (target, edge, _) = scratch[chosen];
            edges.push(edge);
            taken += 1;
            if target == root {
                return Ok(());
            }
            steps.push(target);
            current = target;
            if taken > EXCURSION_HARD_CAP {
                return Err(LoopSoupError::ExcursionOverrun {
                    cap: EXCURSION_HARD_CAP,
                });
            }
        }
    }

    /// Full pipeline: loops, occupation field, traversal counts, glue marks.
    pub fn sample<R: Rng>(
        &self,
        alpha: f64,
        coupling: EdgeCoupling,
        rng: &mut R,
    ) -> Result<LoopSoupSample, LoopSoupError> {
        let loops = self.sample_loops(alpha, rng)?;
        let gamma = accumulate_gamma(&self.dom, &loops, rng);
        let edge_traversals = edge_traversal_counts(&self.dom, &loops);
        let glue_open = glue_edges(&self.dom, &gamma, &edge_traversals, coupling, rng);
        Ok(LoopSoupSample {
            loops,
            gamma,
            edge_traversals,
            glue_open,
        })
    }
}

/// Logarithmic distribution P[n] = R^n / (n ln(1/(1-R))), n >= 1, by
/// sequential inversion.
fn sample_logarithmic<R: Rng>(r: f64, rng: &mut R) -> u64 {
    debug_assert!((0.0..1.0).contains(&r));
    if r <= 0.0 {
        return 1;
    }
    let norm = -(1.0 - r).ln();
    let u: f64 = rng.random();
    let mut n = 1u64;
    let mut term = r / norm;
    let mut cum = term;
    while cum < u && n < 10_000_000 {
        term *= r * n as f64 / (n + 1) as f64;
        n += 1;
        cum += term;
    }
    n
}

/// Occupation local time: an independent Gamma(1/2, 1/2d) base per vertex
/// (the loops visiting a single point) plus one Exp(mean 1/2d) holding time
/// per loop visit, drawn as a Gamma(count, 1/2d) block per visited vertex.
pub fn accumulate_gamma<R: Rng>(
    dom: &LatticeDomain,
    loops: &[DiscreteLoop],
    rng: &mut R,
) -> Vec<f64> {
    let scale = 1.0 / (2 * dom.dim()) as f64;
    let base = Gamma::new(0.5, scale).expect("valid base shape");
    let mut gamma: Vec<f64> = (0..dom.vertex_count())
        .map(|_| base.sample(rng))
        .collect();
    for l in loops {
        for &(v, c) in &l.visit_counts {
            let block = Gamma::new(c as f64, scale).expect("positive visit count");
            gamma[v] += block.sample(rng);
        }
    }
    gamma
}

/// Per-edge traversal counts summed over the soup.
pub fn edge_traversal_counts(dom: &LatticeDomain, loops: &[DiscreteLoop]) -> Vec<u32> {
    let mut counts = vec![0u32; dom.edge_count()];
    for l in loops {
        for &(e, c) in &l.edge_counts {
            counts[e] += c;
        }
    }
    counts
}

/// Open marks for the loop route: an edge is open when a loop traverses it,
/// or through the occupation glue 1 - exp(-kappa sqrt(gamma_x gamma_y)).
///
/// The glue coefficient is the same kappa as the field route; in field units
/// (|phi| = sqrt(2 gamma)) it reads kappa/2 * |phi_x||phi_y|, and the
/// two-point law matches the arcsin formula exactly — the coupling-
/// equivalence experiment demotes any mismatch to a calibration failure
/// instead of absorbing it.
pub fn glue_edges<R: Rng>(
    dom: &LatticeDomain,
    gamma: &[f64],
    traversals: &[u32],
    coupling: EdgeCoupling,
    rng: &mut R,
) -> Vec<bool> {
    let mut open = vec![false; dom.edge_count()];
    for (x, y, e) in dom.interior_edges() {
        if traversals[e] > 0 {
            open[e] = true;
            continue;
        }
        let g = gamma[x] * gamma[y];
        if g > 0.0 {
            let u: f64 = rng.random();
            open[e] = u >= (-coupling.kappa * g.sqrt()).exp();
        }
    }
    open
}

/// Partitions loops into vertex-sharing chains (the discrete cluster
/// relation before cable effects); label = least loop index in the chain.
pub fn loop_chain_clusters(loops: &[DiscreteLoop]) -> Vec<usize> {
    let n = loops.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (j, l) in loops.iter().enumerate() {
        for &(v, _) in &l.visit_counts {
            match owner.entry(v) {
                std::collections::hash_map::Entry::Occupied(o) => {
                    let a = find(&mut parent, j);
                    let b = find(&mut parent, *o.get());
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
                std::collections::hash_map::Entry::Vacant(v_entry) => {
                    v_entry.insert(j);
                }
            }
        }
    }
    // With unions always hanging the larger index under the smaller, the
    // root is the least index of its chain.
    (0..n).map(|j| find(&mut parent, j)).collect()
}

/// Debug-scale dump: one line per loop with root, length, and the vertex
/// sequence (`-` when the sequence was dropped by the step cap).
pub fn dump_loops<W: Write>(w: &mut W, loops: &[DiscreteLoop]) -> std::io::Result<()> {
    for l in loops {
        write!(w, "{} {}", l.root, l.num_steps)?;
        match &l.steps {
            Some(seq) => {
                for v in seq {
                    write!(w, " {v}")?;
                }
            }
            None => write!(w, " -")?,
        }
        writeln!(w)?;
    }
    Ok(())
}
