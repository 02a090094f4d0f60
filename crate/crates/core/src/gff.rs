//! Cable-graph Gaussian free field sampling: Gaussian vertex values plus the
//! per-edge zero-hitting marks that turn a field sample into percolation
//! clusters.
//!
//! The vertex field is centred Gaussian with covariance C = L^-1 (unit
//! conductances). Conditionally on same-sign endpoint values a, b of a unit
//! edge, the field inside the edge is a Brownian bridge and avoids zero with
//! probability 1 - exp(-2ab); opposite signs force a zero. Edges to the
//! boundary sink (field value 0 there) are always closed, so clusters never
//! touch the boundary. The coupling constant is configuration, not a
//! hard-coded truth: `EdgeCoupling::default()` carries the value 2 that the
//! edge-oracle experiment pins against the arcsin law before any large run.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::clusters::ClusterReport;
use crate::green::{GreenError, GreenTable, SpectralBasis};
use crate::lattice::LatticeDomain;
use crate::numeric::{cholesky_lower, lower_triangular_apply, NumericError};

#[derive(Debug, Error)]
pub enum GffError {
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error("covariance factorization failed: {0}")]
    Factorization(#[from] NumericError),
    #[error("field/domain size mismatch: field has {got} entries, domain {want} vertices")]
    LengthMismatch { got: usize, want: usize },
    #[error("cluster labels inconsistent with sign constancy at vertex {vertex}")]
    InconsistentClusters { vertex: usize },
    #[error("edge coupling constant must be positive, got {0}")]
    BadCoupling(f64),
}

/// The bridge zero-hitting coefficient; open probability of a same-sign edge
/// is 1 - exp(-kappa |phi_x| |phi_y|).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EdgeCoupling {
    pub kappa: f64,
}

impl Default for EdgeCoupling {
    fn default() -> Self {
        Self { kappa: 2.0 }
    }
}

impl EdgeCoupling {
    pub fn new(kappa: f64) -> Result<Self, GffError> {
        if kappa > 0.0 && kappa.is_finite() {
            Ok(Self { kappa })
        } else {
            Err(GffError::BadCoupling(kappa))
        }
    }
}

/// One field realization: a value per interior vertex plus open/closed marks
/// per cable edge.
#[derive(Clone, Debug)]
pub struct FieldSample {
    pub phi: Vec<f64>,
    pub edge_open: Vec<bool>,
    /// Sample index of the RNG stream that produced this realization.
    pub stream: u64,
}

/// Dense-route sampler: phi = A z with A A^T = C = G/2d, the factor computed
/// once. Intended for fixture-sized domains.
pub struct DenseGffSampler {
    dom: Arc<LatticeDomain>,
    chol: Vec<f64>,
}

impl DenseGffSampler {
    pub fn new(table: &GreenTable) -> Result<Self, GffError> {
        let dom = Arc::clone(table.domain());
        let mut c = table.covariance_matrix()?;
        cholesky_lower(&mut c, dom.vertex_count())?;
        Ok(Self { dom, chol: c })
    }

    pub fn domain(&self) -> &Arc<LatticeDomain> {
        &self.dom
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dom.vertex_count();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut phi = vec![0.0; n];
        lower_triangular_apply(&self.chol, n, &z, &mut phi);
        phi
    }
}

/// Spectral-route sampler for rectangular domains: draws one standard normal
/// per sine mode, scales by 1/sqrt(lambda), and synthesizes the field with d
/// separable sine transforms. Identical in law to the dense route, and the
/// only practical route for large boxes.
pub struct SpectralGffSampler {
    dom: Arc<LatticeDomain>,
    basis: SpectralBasis,
    inv_sqrt_lambda: Vec<f64>,
}

impl SpectralGffSampler {
    pub fn new(dom: Arc<LatticeDomain>) -> Self {
        let basis = SpectralBasis::new(&dom);
        let d = dom.dim();
        let sides = basis.sides().to_vec();
        let mut inv_sqrt_lambda = Vec::with_capacity(dom.vertex_count());
        let mut k = vec![0usize; d];
        loop {
            inv_sqrt_lambda.push(1.0 / basis.eigenvalue(&k).sqrt());
            let mut a = d;
            loop {
                if a == 0 {
                    return Self {
                        dom,
                        basis,
                        inv_sqrt_lambda,
                    };
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

    pub fn domain(&self) -> &Arc<LatticeDomain> {
        &self.dom
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dom.vertex_count();
        let mut z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        self.synthesize(&mut z);
        z
    }

    /// Mode coefficients -> field values, in place: scale by 1/sqrt(lambda)
    /// and apply the sine transform along each axis. Linear in `z`.
    pub fn synthesize(&self, z: &mut [f64]) {
        let n = self.dom.vertex_count();
        assert_eq!(z.len(), n);
        for (zi, s) in z.iter_mut().zip(&self.inv_sqrt_lambda) {
            *zi *= s;
        }
        let d = self.dom.dim();
        let sides = self.basis.sides();
        let mut stride = vec![0usize; d];
        for a in 0..d {
            stride[a] = if a + 1 < d {
                sides[a + 1..].iter().product()
            } else {
                1
            };
        }
        let mut line_in = Vec::new();
        let mut line_out = Vec::new();
        for a in 0..d {
            let na = sides[a];
            let table = self.basis.axis_eigenvector_table(a);
            line_in.resize(na, 0.0);
            line_out.resize(na, 0.0);
            let span = na * stride[a];
            for block in (0..n).step_by(span) {
                for r in 0..stride[a] {
                    let base = block + r;
                    for j in 0..na {
                        line_in[j] = z[base + j * stride[a]];
                    }
                    line_out.iter_mut().for_each(|v| *v = 0.0);
                    for (k, &c) in line_in.iter().enumerate() {
                        if c != 0.0 {
                            let row = &table[k * na..(k + 1) * na];
                            for (o, &t) in line_out.iter_mut().zip(row) {
                                *o += c * t;
                            }
                        }
                    }
                    for j in 0..na {
                        z[base + j * stride[a]] = line_out[j];
                    }
                }
            }
        }
    }
}

/// Either sampling route behind one call site; both produce fields with the
/// same law.
pub enum FieldSampler {
    Dense(DenseGffSampler),
    Spectral(SpectralGffSampler),
}

impl FieldSampler {
    pub fn domain(&self) -> &Arc<LatticeDomain> {
        match self {
            FieldSampler::Dense(s) => s.domain(),
            FieldSampler::Spectral(s) => s.domain(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            FieldSampler::Dense(s) => s.sample(rng),
            FieldSampler::Spectral(s) => s.sample(rng),
        }
    }
}

/// Draws the open/closed mark of every cable edge given the vertex field.
///
/// Interior-interior edges are visited in ascending edge-owner order and one
/// uniform is drawn for each same-sign edge, so the draw sequence is a
/// deterministic function of `phi`. Edges to the sink stay closed.
pub fn mark_edges<R: Rng>(
    dom: &LatticeDomain,
    phi: &[f64],
    coupling: EdgeCoupling,
    rng: &mut R,
) -> Result<Vec<bool>, GffError> {
    if phi.len() != dom.vertex_count() {
        return Err(GffError::LengthMismatch {
            got: phi.len(),
            want: dom.vertex_count(),
        });
    }
    let mut open = vec![false; dom.edge_count()];
    for (x, y, e) in dom.interior_edges() {
        let prod = phi[x] * phi[y];
        if prod > 0.0 {
            let u: f64 = rng.random();
            open[e] = u >= (-coupling.kappa * prod).exp();
        }
    }
    Ok(open)
}

/// Convenience wrapper producing a full `FieldSample` from one RNG stream.
pub fn sample_field<R: Rng>(
    sampler: &FieldSampler,
    coupling: EdgeCoupling,
    stream: u64,
    rng: &mut R,
) -> Result<FieldSample, GffError> {
    let phi = sampler.sample(rng);
    let edge_open = mark_edges(sampler.domain(), &phi, coupling, rng)?;
    Ok(FieldSample {
        phi,
        edge_open,
        stream,
    })
}

/// Resamples one fair sign per cluster and returns eps'(x) |phi(x)|; the
/// output is distributed exactly like the field itself. Errors if the given
/// clusters do not have constant sign under `phi`.
pub fn signed_field<R: Rng>(
    phi: &[f64],
    report: &ClusterReport,
    rng: &mut R,
) -> Result<Vec<f64>, GffError> {
    if phi.len() != report.labels().len() {
        return Err(GffError::LengthMismatch {
            got: phi.len(),
            want: report.labels().len(),
        });
    }
    // Sign constancy check: a cluster mixing both strict signs means the
    // report does not belong to this sample.
    let mut seen_sign = vec![0i8; report.num_clusters()];
    for (v, &value) in phi.iter().enumerate() {
        let s = if value > 0.0 {
            1
        } else if value < 0.0 {
            -1
        } else {
            0
        };
        if s == 0 {
            continue;
        }
        let slot = report.cluster_index(v);
        if seen_sign[slot] == 0 {
            seen_sign[slot] = s;
        } else if seen_sign[slot] != s {
            return Err(GffError::InconsistentClusters { vertex: v });
        }
    }
    // Fresh fair coins in canonical cluster order.
    let eps: Vec<f64> = (0..report.num_clusters())
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    Ok(phi
        .iter()
        .enumerate()
        .map(|(v, &value)| eps[report.cluster_index(v)] * value.abs())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusters::extract_clusters;
    use crate::estimators::ks_two_sample;
    use crate::lattice::BoxSpec;
    use crate::numeric::edge_open_integral;
    use crate::rng::{sample_rng, StreamClass};

    fn path(k: usize) -> Arc<LatticeDomain> {
        Arc::new(LatticeDomain::build_path(k).unwrap())
    }

    fn boxdom(d: usize, n: i64) -> Arc<LatticeDomain> {
        Arc::new(LatticeDomain::build_box(&BoxSpec::new(d, n)).unwrap())
    }

    fn dense_sampler(dom: &Arc<LatticeDomain>) -> DenseGffSampler {
        let table = GreenTable::new(Arc::clone(dom));
        DenseGffSampler::new(&table).unwrap()
    }

    #[test]
    fn dense_path2_moments_match_covariance() {
        // C = (1/3) [[2,1],[1,2]] from the hand-computed Green matrix.
        let dom = path(2);
        let sampler = dense_sampler(&dom);
        let mut rng = sample_rng(1, StreamClass::GffRoute, 0);
        let n = 100_000usize;
        let (mut s0, mut s1, mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let phi = sampler.sample(&mut rng);
            s0 += phi[0];
            s1 += phi[1];
            s00 += phi[0] * phi[0];
            s11 += phi[1] * phi[1];
            s01 += phi[0] * phi[1];
        }
        let nf = n as f64;
        let (c00, c11, c01) = (2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0);
        // Mean zero within 4 SE.
        assert!((s0 / nf).abs() <= 4.0 * (c00 / nf).sqrt());
        assert!((s1 / nf).abs() <= 4.0 * (c11 / nf).sqrt());
        // Second moments within 4 SE (Gaussian: Var[xy] = Cxx Cyy + Cxy^2).
        let se_var = (2.0 * c00 * c00 / nf).sqrt();
        assert!((s00 / nf - c00).abs() <= 4.0 * se_var);
        assert!((s11 / nf - c11).abs() <= 4.0 * se_var);
        let se_cov = ((c00 * c11 + c01 * c01) / nf).sqrt();
        assert!((s01 / nf - c01).abs() <= 4.0 * se_cov);
    }

    #[test]
    fn dense_single_vertex_variance() {
        // G = 1, 2d = 2, so phi ~ N(0, 1/2).
        let dom = path(1);
        let sampler = dense_sampler(&dom);
        let mut rng = sample_rng(2, StreamClass::GffRoute, 0);
        let n = 100_000usize;
        let mut s2 = 0.0;
        for _ in 0..n {
            let phi = sampler.sample(&mut rng);
            s2 += phi[0] * phi[0];
        }
        let var = s2 / n as f64;
        assert!((var - 0.5).abs() <= 4.0 * (2.0f64 * 0.25 / n as f64).sqrt());
    }

    #[test]
    fn spectral_center_variance_of_three_path() {
        // Var phi(center) = C(0,0) = G(0,0)/2 = 1 on the d=1, N=1 box.
        let dom = boxdom(1, 1);
        let sampler = SpectralGffSampler::new(Arc::clone(&dom));
        let c = dom.index_of(&[0]).unwrap();
        let mut rng = sample_rng(3, StreamClass::GffRoute, 0);
        let n = 100_000usize;
        let mut s2 = 0.0;
        for _ in 0..n {
            let phi = sampler.sample(&mut rng);
            s2 += phi[c] * phi[c];
        }
        let var = s2 / n as f64;
        assert!((var - 1.0).abs() <= 4.0 * (2.0f64 / n as f64).sqrt());
    }

    #[test]
    fn spectral_synthesis_is_linear() {
        let dom = boxdom(2, 2);
        let sampler = SpectralGffSampler::new(Arc::clone(&dom));
        let mut rng = sample_rng(4, StreamClass::GffRoute, 0);
        let z: Vec<f64> = (0..dom.vertex_count())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut pos = z.clone();
        sampler.synthesize(&mut pos);
        let mut neg: Vec<f64> = z.iter().map(|v| -v).collect();
        sampler.synthesize(&mut neg);
        for (p, m) in pos.iter().zip(&neg) {
            assert_eq!(*p, -*m);
        }
    }

    #[test]
    fn spectral_and_dense_routes_agree_in_law() {
        // Marginal KS test at a fixed vertex of the d=2, N=2 box.
        let dom = boxdom(2, 2);
        let spectral = SpectralGffSampler::new(Arc::clone(&dom));
        let dense = dense_sampler(&dom);
        let v = dom.index_of(&[1, -1]).unwrap();
        let n = 20_000usize;
        let mut rng_a = sample_rng(5, StreamClass::GffRoute, 0);
        let mut rng_b = sample_rng(5, StreamClass::GffRoute, 1);
        let a: Vec<f64> = (0..n).map(|_| spectral.sample(&mut rng_a)[v]).collect();
        let b: Vec<f64> = (0..n).map(|_| dense.sample(&mut rng_b)[v]).collect();
        let ks = ks_two_sample(&a, &b);
        assert!(ks.p_value > 0.01, "KS p = {}", ks.p_value);
    }

    #[test]
    fn spectral_covariance_matches_green_on_boxes() {
        // Empirical Cov(phi(x), phi(y)) against C = G/2d over every vertex
        // pair of small box fixtures; 100k samples, 4 SE per entry.
        use crate::green::SpectralGreen;
        for (d, n, seed) in [(3usize, 1i64, 31u64), (2, 3, 32)] {
            let dom = boxdom(d, n);
            let nv = dom.vertex_count();
            let green = SpectralGreen::new(Arc::clone(&dom));
            let scale = 1.0 / (2 * d) as f64;
            let sampler = SpectralGffSampler::new(Arc::clone(&dom));
            let n_samples = 100_000usize;
            let mut sums = vec![0.0f64; nv * nv];
            let mut rng = sample_rng(seed, StreamClass::GffRoute, 0);
            for _ in 0..n_samples {
                let phi = sampler.sample(&mut rng);
                for i in 0..nv {
                    let pi = phi[i];
                    for j in i..nv {
                        sums[i * nv + j] += pi * phi[j];
                    }
                }
            }
            let nf = n_samples as f64;
            let mut worst = 0.0f64;
            for i in 0..nv {
                for j in i..nv {
                    let c_ij = green.value(i, j) * scale;
                    let c_ii = green.value(i, i) * scale;
                    let c_jj = green.value(j, j) * scale;
                    let se = ((c_ii * c_jj + c_ij * c_ij) / nf).sqrt();
                    worst = worst.max(((sums[i * nv + j] / nf - c_ij) / se).abs());
                }
            }
            assert!(worst <= 4.0, "d={d} n={n}: worst covariance |z| = {worst:.2}");
        }
    }

    #[test]
    fn open_edges_have_equal_signs() {
        // Sign constancy holds per sample by construction; assert it over
        // many realizations on a box.
        let dom = boxdom(2, 2);
        let sampler = SpectralGffSampler::new(Arc::clone(&dom));
        let coupling = EdgeCoupling::default();
        let mut rng = sample_rng(21, StreamClass::GffRoute, 0);
        for _ in 0..500 {
            let phi = sampler.sample(&mut rng);
            let open = mark_edges(&dom, &phi, coupling, &mut rng).unwrap();
            for (x, y, e) in dom.interior_edges() {
                if open[e] {
                    assert!(phi[x] * phi[y] > 0.0);
                }
            }
        }
    }

    #[test]
    fn sample_field_reproduces_the_stream() {
        // The convenience wrapper must consume the stream exactly like the
        // two-step calls the experiments make.
        let dom = path(3);
        let table = GreenTable::new(Arc::clone(&dom));
        let sampler = FieldSampler::Dense(DenseGffSampler::new(&table).unwrap());
        let coupling = EdgeCoupling::default();
        let mut rng_a = sample_rng(5, StreamClass::GffRoute, 9);
        let sample = sample_field(&sampler, coupling, 9, &mut rng_a).unwrap();
        let mut rng_b = sample_rng(5, StreamClass::GffRoute, 9);
        let phi = sampler.sample(&mut rng_b);
        let open = mark_edges(&dom, &phi, coupling, &mut rng_b).unwrap();
        assert_eq!(sample.phi, phi);
        assert_eq!(sample.edge_open, open);
        assert_eq!(sample.stream, 9);
    }

    #[test]
    fn mark_edges_sign_rules() {
        let dom = path(2);
        let coupling = EdgeCoupling::default();
        let mut rng = sample_rng(6, StreamClass::GffRoute, 0);
        // Opposite signs: closed with probability 1.
        for _ in 0..200 {
            let open = mark_edges(&dom, &[1.3, -0.2], coupling, &mut rng).unwrap();
            assert!(!open.iter().any(|&o| o));
        }
        // Huge same-sign product: open with probability -> 1.
        let edge = dom.up_edge(0, 0);
        for _ in 0..200 {
            let open = mark_edges(&dom, &[40.0, 60.0], coupling, &mut rng).unwrap();
            assert!(open[edge]);
            // Boundary cables stay closed.
            assert_eq!(open.iter().filter(|&&o| o).count(), 1);
        }
    }

    #[test]
    fn path2_edge_open_frequency_matches_integral_oracle() {
        // Numerical Gaussian integration oracle; equals the arcsin value 1/3
        // at kappa = 2, which pins the coupling constant.
        let oracle = edge_open_integral(2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 2.0);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-9);

        let dom = path(2);
        let sampler = dense_sampler(&dom);
        let coupling = EdgeCoupling::default();
        let edge = dom.up_edge(0, 0);
        let n = 100_000usize;
        let mut hits = 0u64;
        let mut rng = sample_rng(7, StreamClass::GffRoute, 0);
        for _ in 0..n {
            let phi = sampler.sample(&mut rng);
            let open = mark_edges(&dom, &phi, coupling, &mut rng).unwrap();
            hits += open[edge] as u64;
        }
        let freq = hits as f64 / n as f64;
        let se = (oracle * (1.0 - oracle) / n as f64).sqrt();
        assert!(
            (freq - oracle).abs() <= 4.0 * se,
            "freq {freq} vs oracle {oracle}"
        );
    }

    #[test]
    fn signed_field_preserves_magnitudes_and_cluster_signs() {
        let dom = boxdom(2, 1);
        let sampler = dense_sampler(&dom);
        let coupling = EdgeCoupling::default();
        let mut rng = sample_rng(8, StreamClass::GffRoute, 0);
        for _ in 0..100 {
            let phi = sampler.sample(&mut rng);
            let open = mark_edges(&dom, &phi, coupling, &mut rng).unwrap();
            let report = extract_clusters(&dom, &open).unwrap();
            let out = signed_field(&phi, &report, &mut rng).unwrap();
            for v in 0..dom.vertex_count() {
                assert_eq!(out[v].abs(), phi[v].abs());
            }
            for slot in 0..report.num_clusters() {
                let signs: Vec<f64> = (0..dom.vertex_count())
                    .filter(|&v| report.cluster_index(v) == slot)
                    .map(|v| out[v].signum())
                    .collect();
                assert!(signs.windows(2).all(|w| w[0] == w[1]));
            }
        }
    }

    #[test]
    fn signed_field_covariance_matches_original() {
        // The resampled-sign field must be another field sample in law;
        // check the full covariance on the path-2 fixture.
        let dom = path(2);
        let sampler = dense_sampler(&dom);
        let coupling = EdgeCoupling::default();
        let mut rng = sample_rng(9, StreamClass::GffRoute, 0);
        let n = 100_000usize;
        let (mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let phi = sampler.sample(&mut rng);
            let open = mark_edges(&dom, &phi, coupling, &mut rng).unwrap();
            let report = extract_clusters(&dom, &open).unwrap();
            let out = signed_field(&phi, &report, &mut rng).unwrap();
            s00 += out[0] * out[0];
            s11 += out[1] * out[1];
            s01 += out[0] * out[1];
        }
        let nf = n as f64;
        let (c00, c11, c01) = (2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0);
        assert!((s00 / nf - c00).abs() <= 4.0 * (2.0 * c00 * c00 / nf).sqrt());
        assert!((s11 / nf - c11).abs() <= 4.0 * (2.0 * c11 * c11 / nf).sqrt());
        assert!((s01 / nf - c01).abs() <= 4.0 * ((c00 * c11 + c01 * c01) / nf).sqrt());
    }

    #[test]
    fn signed_field_rejects_foreign_reports() {
        let dom = path(2);
        // A report joining both vertices while the field signs differ.
        let mut marks = vec![false; dom.edge_count()];
        marks[dom.up_edge(0, 0)] = true;
        let report = extract_clusters(&dom, &marks).unwrap();
        let mut rng = sample_rng(10, StreamClass::GffRoute, 0);
        let err = signed_field(&[1.0, -1.0], &report, &mut rng).unwrap_err();
        assert!(matches!(err, GffError::InconsistentClusters { .. }));
    }

    #[test]
    fn coupling_validation() {
        assert!(EdgeCoupling::new(0.0).is_err());
        assert!(EdgeCoupling::new(-1.0).is_err());
        assert!(EdgeCoupling::new(2.0).is_ok());
        assert_eq!(EdgeCoupling::default().kappa, 2.0);
    }
}
