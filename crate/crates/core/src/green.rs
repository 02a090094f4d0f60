//! Dirichlet Green's function of the simple random walk and the exact
//! connection-probability formula.
//!
//! Two conventions coexist deliberately. `G(x,y)` counts expected visits of
//! `y` by the walk from `x` killed at the boundary sink, so `G = (I - P)^-1`
//! with `P` the killed step kernel. The Gaussian field sampler works with the
//! covariance `C = L^-1 = G / 2d`, where `L` is the Dirichlet graph
//! Laplacian. Every probability formula below is a ratio, hence identical in
//! both conventions.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::lattice::LatticeDomain;

/// Largest vertex count for which a full covariance matrix is materialized.
pub const DEFAULT_DENSE_CAP: usize = 20_000;

/// Residual target of the conjugate-gradient solve.
pub const CG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GreenError {
    #[error("conjugate gradient failed to reach {tolerance:e} after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("domain with {vertices} vertices exceeds the dense cap of {cap}")]
    DenseCapExceeded { vertices: usize, cap: usize },
    #[error("green table looks corrupted: correlation ratio {ratio} outside [0,1]")]
    CorruptTable { ratio: f64 },
    #[error("connection probability is defined for distinct vertices")]
    SamePair,
    #[error("vertex id {0} out of range")]
    VertexOutOfRange(usize),
    #[error("two-point decay profile needs d >= 3, got d = {0}")]
    ProfileRequiresD3(usize),
    #[error("profile point {0:?} is not interior")]
    PointNotInterior(Vec<i64>),
}

/// Applies `v_out = (I - P) v_in` restricted to `active` vertices (inactive
/// vertices behave as killed). The odometer over digits avoids per-vertex
/// divisions.
fn apply_i_minus_p(
    dom: &LatticeDomain,
    active: Option<&[bool]>,
    v_in: &[f64],
    v_out: &mut [f64],
) {
    let d = dom.dim();
    let inv_deg = 1.0 / (2 * d) as f64;
    let sides = dom.sides();
    let mut strides = vec![0usize; d];
    for a in 0..d {
        strides[a] = if a + 1 < d {
            sides[a + 1..].iter().product()
        } else {
            1
        };
    }
    let mut digits = vec![0usize; d];
    for t in 0..dom.vertex_count() {
        let alive = active.is_none_or(|m| m[t]);
        if alive {
            let mut s = 0.0;
            for a in 0..d {
                if digits[a] > 0 {
                    let w = t - strides[a];
                    if active.is_none_or(|m| m[w]) {
                        s += v_in[w];
                    }
                }
                if digits[a] + 1 < sides[a] {
                    let w = t + strides[a];
                    if active.is_none_or(|m| m[w]) {
                        s += v_in[w];
                    }
                }
            }
            v_out[t] = v_in[t] - s * inv_deg;
        } else {
            v_out[t] = 0.0;
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

/// Solves `(I - P) g = delta_x` by conjugate gradient; `g` is the Green
/// column `G(x, .)` in visit-count units.
pub fn green_solve(dom: &LatticeDomain, x: usize) -> Result<Vec<f64>, GreenError> {
    green_solve_masked(dom, x, None)
}

/// Same solve on the subdomain of `active` vertices; entries outside stay 0.
/// Used by the loop-soup rooted decomposition on its shrinking domains.
pub fn green_solve_masked(
    dom: &LatticeDomain,
    x: usize,
    active: Option<&[bool]>,
) -> Result<Vec<f64>, GreenError> {
    let n = dom.vertex_count();
    if x >= n {
        return Err(GreenError::VertexOutOfRange(x));
    }
    debug_assert!(active.is_none_or(|m| m[x]));
    let mut g = vec![0.0; n];
    let mut r = vec![0.0; n];
    r[x] = 1.0;
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr: f64 = 1.0;
    let cap = 10 * n.max(10);
    for it in 0..cap {
        if rr.sqrt() <= CG_TOLERANCE {
            return Ok(g);
        }
        apply_i_minus_p(dom, active, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rr / pap;
        for i in 0..n {
            g[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        if it == cap - 1 {
            return Err(GreenError::NoConvergence {
                iterations: cap,
                residual: rr.sqrt(),
                tolerance: CG_TOLERANCE,
            });
        }
    }
    Ok(g)
}

/// Memoizing table of Green columns. Columns are solved on first use and
/// shared behind an `RwLock`, so the table can be pre-warmed before parallel
/// phases or filled lazily from a single thread.
pub struct GreenTable {
    dom: Arc<LatticeDomain>,
    dense_cap: usize,
    cols: RwLock<HashMap<usize, Arc<Vec<f64>>>>,
}

impl GreenTable {
    pub fn new(dom: Arc<LatticeDomain>) -> Self {
        Self::with_dense_cap(dom, DEFAULT_DENSE_CAP)
    }

    pub fn with_dense_cap(dom: Arc<LatticeDomain>, dense_cap: usize) -> Self {
        Self {
            dom,
            dense_cap,
            cols: RwLock::new(HashMap::new()),
        }
    }

    pub fn domain(&self) -> &Arc<LatticeDomain> {
        &self.dom
    }

    pub fn column(&self, x: usize) -> Result<Arc<Vec<f64>>, GreenError> {
        if let Some(col) = self.cols.read().expect("green table lock").get(&x) {
            return Ok(Arc::clone(col));
        }
        let col = Arc::new(green_solve(&self.dom, x)?);
        let mut w = self.cols.write().expect("green table lock");
        Ok(Arc::clone(w.entry(x).or_insert(col)))
    }

    /// Visit-count Green value G(x, y).
    pub fn value(&self, x: usize, y: usize) -> Result<f64, GreenError> {
        // Reuse whichever column is already memoized before solving a new one.
        {
            let r = self.cols.read().expect("green table lock");
            if let Some(col) = r.get(&x) {
                return Ok(col[y]);
            }
            if let Some(col) = r.get(&y) {
                return Ok(col[x]);
            }
        }
        Ok(self.column(x)?[y])
    }

    /// Full Gaussian covariance C = G / 2d, refused above the dense cap.
    pub fn covariance_matrix(&self) -> Result<Vec<f64>, GreenError> {
        let n = self.dom.vertex_count();
        if n > self.dense_cap {
            return Err(GreenError::DenseCapExceeded {
                vertices: n,
                cap: self.dense_cap,
            });
        }
        let scale = 1.0 / (2 * self.dom.dim()) as f64;
        let mut c = vec![0.0; n * n];
        for x in 0..n {
            let col = self.column(x)?;
            for y in 0..n {
                c[x * n + y] = col[y] * scale;
            }
        }
        // Symmetrize away the solver tolerance so downstream factorizations
        // see an exactly symmetric matrix.
        for x in 0..n {
            for y in (x + 1)..n {
                let m = 0.5 * (c[x * n + y] + c[y * n + x]);
                c[x * n + y] = m;
                c[y * n + x] = m;
            }
        }
        Ok(c)
    }
}

/// Separable sine eigenbasis of the Dirichlet Laplacian on a rectangular
/// interior: per-axis eigenvalues 2 - 2cos(pi k / (n+1)) and normalized
/// eigenvectors sqrt(2/(n+1)) sin(pi k j / (n+1)).
pub struct SpectralBasis {
    sides: Vec<usize>,
    /// psi[a][k * n + j], k and j zero-based.
    psi: Vec<Vec<f64>>,
    lambda_axis: Vec<Vec<f64>>,
}

impl SpectralBasis {
    pub fn new(dom: &LatticeDomain) -> Self {
        let sides = dom.sides().to_vec();
        let mut psi = Vec::with_capacity(sides.len());
        let mut lambda_axis = Vec::with_capacity(sides.len());
        for &n in &sides {
            let m = (n + 1) as f64;
            let norm = (2.0 / m).sqrt();
            let mut table = vec![0.0; n * n];
            let mut lam = vec![0.0; n];
            for k in 0..n {
                lam[k] = 2.0 - 2.0 * (std::f64::consts::PI * (k + 1) as f64 / m).cos();
                for j in 0..n {
                    table[k * n + j] =
                        norm * (std::f64::consts::PI * ((k + 1) * (j + 1)) as f64 / m).sin();
                }
            }
            psi.push(table);
            lambda_axis.push(lam);
        }
        Self {
            sides,
            psi,
            lambda_axis,
        }
    }

    pub fn mode_count(&self) -> usize {
        self.sides.iter().product()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn axis_eigenvalues(&self, axis: usize) -> &[f64] {
        &self.lambda_axis[axis]
    }

    pub fn axis_eigenvector_table(&self, axis: usize) -> &[f64] {
        &self.psi[axis]
    }

    /// Laplacian eigenvalue of the mode with per-axis indices `k` (zero-based).
    pub fn eigenvalue(&self, k: &[usize]) -> f64 {
        k.iter()
            .enumerate()
            .map(|(a, &ka)| self.lambda_axis[a][ka])
            .sum()
    }

    /// Trace of L^-1 = sum over modes of 1/lambda; equals sum_x G(x,x)/2d.
    pub fn trace_inverse_laplacian(&self) -> f64 {
        let d = self.sides.len();
        let mut k = vec![0usize; d];
        let mut total = 0.0;
        loop {
            total += 1.0 / self.eigenvalue(&k);
            let mut a = d;
            loop {
                if a == 0 {
                    return total;
                }
                a -= 1;
                k[a] += 1;
                if k[a] < self.sides[a] {
                    break;
                }
                k[a] = 0;
            }
        }
    }
}

/// Exact Green values on rectangular domains through the sine eigenbasis.
/// Symmetric in (x, y) by construction.
pub struct SpectralGreen {
    dom: Arc<LatticeDomain>,
    basis: SpectralBasis,
}

impl SpectralGreen {
    pub fn new(dom: Arc<LatticeDomain>) -> Self {
        let basis = SpectralBasis::new(&dom);
        Self { dom, basis }
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    /// G(x, y) = 2d * sum_k psi_k(x) psi_k(y) / lambda_k.
    pub fn value(&self, x: usize, y: usize) -> f64 {
        let d = self.dom.dim();
        let sides = self.basis.sides();
        let xd: Vec<usize> = (0..d).map(|a| self.dom.digit(x, a)).collect();
        let yd: Vec<usize> = (0..d).map(|a| self.dom.digit(y, a)).collect();
        let mut k = vec![0usize; d];
        let mut total = 0.0;
        loop {
            let mut num = 1.0;
            let mut lam = 0.0;
            for a in 0..d {
                let n = sides[a];
                let t = &self.basis.psi[a];
                num *= t[k[a] * n + xd[a]] * t[k[a] * n + yd[a]];
                lam += self.basis.lambda_axis[a][k[a]];
            }
            total += num / lam;
            let mut a = d;
            loop {
                if a == 0 {
                    return total * (2 * d) as f64;
                }
                a -= 1;
                k[a] += 1;
                if k[a] < sides[a] {
                    break;
                }
                k[a] = 0;
            }
        }
    }
}

/// Sheppard's sign-covariance formula: the probability that two vertices lie
/// in the same cable-graph cluster is (2/pi) arcsin of the Green ratio.
/// Invariant under G -> cG.
pub fn connection_probability_from_values(gxy: f64, gxx: f64, gyy: f64) -> Result<f64, GreenError> {
    let denom = (gxx * gyy).sqrt();
    if denom <= 0.0 || denom.is_nan() {
        return Err(GreenError::CorruptTable { ratio: f64::NAN });
    }
    let ratio = gxy / denom;
    if !(-1e-9..=1.0 + 1e-9).contains(&ratio) {
        return Err(GreenError::CorruptTable { ratio });
    }
    let clamped = ratio.clamp(0.0, 1.0);
    Ok(2.0 / std::f64::consts::PI * clamped.asin())
}

pub fn connection_probability(table: &GreenTable, x: usize, y: usize) -> Result<f64, GreenError> {
    if x == y {
        return Err(GreenError::SamePair);
    }
    // Canonical pair order: both argument orders share one solve path, so
    // the result is exactly symmetric.
    let (lo, hi) = (x.min(y), x.max(y));
    let col = table.column(lo)?;
    let ghh = table.value(hi, hi)?;
    connection_probability_from_values(col[hi], col[lo], ghh)
}

/// One row of the two-point decay profile along the first axis.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ProfilePoint {
    pub r: i64,
    pub probability: f64,
    /// probability * r^(d-2); flat in r on the scaling window.
    pub scaled: f64,
}

/// Evaluates `P[0 <-> (r, 0, ..., 0)] * r^(d-2)` for each radius through the
/// exact spectral Green values.
pub fn twopoint_decay_profile(
    dom: &Arc<LatticeDomain>,
    radii: &[i64],
) -> Result<Vec<ProfilePoint>, GreenError> {
    let d = dom.dim();
    if d < 3 {
        return Err(GreenError::ProfileRequiresD3(d));
    }
    let green = SpectralGreen::new(Arc::clone(dom));
    let origin_pt = vec![0i64; d];
    let origin = dom
        .index_of(&origin_pt)
        .ok_or(GreenError::PointNotInterior(origin_pt))?;
    let g00 = green.value(origin, origin);
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut p = vec![0i64; d];
        p[0] = r;
        let xr = dom
            .index_of(&p)
            .ok_or_else(|| GreenError::PointNotInterior(p.clone()))?;
        let prob = connection_probability_from_values(
            green.value(origin, xr),
            g00,
            green.value(xr, xr),
        )?;
        out.push(ProfilePoint {
            r,
            probability: prob,
            scaled: prob * (r as f64).powi(d as i32 - 2),
        });
    }
    Ok(out)
}
