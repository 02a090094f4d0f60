//! Python bindings: domains, Green tables, both field/loop samplers,
//! cluster extraction, and the experiment runner.
//!
//! Sampling methods take (seed, index) pairs and reproduce exactly the
//! streams the Rust experiments use, so Python-side checks can replay any
//! record.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cablesoup::clusters::{extract_clusters, ClusterReport};
use cablesoup::experiment::{parse_config, run, validate, ExperimentKind};
use cablesoup::gff::{mark_edges, signed_field, DenseGffSampler, EdgeCoupling, SpectralGffSampler};
use cablesoup::green::{connection_probability, twopoint_decay_profile, GreenTable};
use cablesoup::lattice::{BoxSpec, LatticeDomain, Neighbor};
use cablesoup::loopsoup::LoopSoupEngine;
use cablesoup::rng::{sample_rng, StreamClass};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// (root, num_steps, steps or None when dropped by the step cap).
type LoopTriple = (usize, usize, Option<Vec<usize>>);

/// A finite box or path interior in Z^d with its cable-edge structure.
#[pyclass(name = "Domain", frozen)]
struct PyDomain {
    inner: Arc<LatticeDomain>,
}

#[pymethods]
impl PyDomain {
    /// Lambda_N = [-N, N]^d.
    #[staticmethod]
    #[pyo3(signature = (d, n))]
    fn r#box(d: usize, n: i64) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(LatticeDomain::build_box(&BoxSpec::new(d, n)).map_err(err)?),
        })
    }

    /// Path fixture with interior {1..k} in Z.
    #[staticmethod]
    fn path(k: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(LatticeDomain::build_path(k).map_err(err)?),
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn boundary_count(&self) -> usize {
        self.inner.boundary_count()
    }

    fn index_of(&self, point: Vec<i64>) -> Option<usize> {
        self.inner.index_of(&point)
    }

    fn point(&self, v: usize) -> PyResult<Vec<i64>> {
        if v >= self.inner.vertex_count() {
            return Err(PyValueError::new_err(format!("vertex {v} out of range")));
        }
        Ok(self.inner.point(v))
    }

    /// 2d entries of (neighbor id or None for the boundary sink, edge id).
    fn neighbors(&self, v: usize) -> PyResult<Vec<(Option<usize>, usize)>> {
        Ok(self
            .inner
            .neighbors(v)
            .map_err(err)?
            .into_iter()
            .map(|(n, e)| match n {
                Neighbor::Interior(w) => (Some(w), e),
                Neighbor::Sink => (None, e),
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Domain(dim={}, vertices={}, edges={})",
            self.inner.dim(),
            self.inner.vertex_count(),
            self.inner.edge_count()
        )
    }
}

/// Memoized Dirichlet Green's function of the killed walk.
#[pyclass(name = "Green", frozen)]
struct PyGreen {
    table: GreenTable,
}

#[pymethods]
impl PyGreen {
    #[new]
    fn new(domain: &PyDomain) -> Self {
        Self {
            table: GreenTable::new(Arc::clone(&domain.inner)),
        }
    }

    /// Expected visit count G(x, y).
    fn value(&self, x: usize, y: usize) -> PyResult<f64> {
        self.table.value(x, y).map_err(err)
    }

    /// P[x <-> y] = (2/pi) arcsin(G(x,y)/sqrt(G(x,x)G(y,y))).
    fn connection_probability(&self, x: usize, y: usize) -> PyResult<f64> {
        connection_probability(&self.table, x, y).map_err(err)
    }
}

/// Gaussian field sampler (dense factorization or spectral synthesis).
#[pyclass(name = "FieldSampler", frozen)]
struct PyFieldSampler {
    dom: Arc<LatticeDomain>,
    dense: Option<DenseGffSampler>,
    spectral: Option<SpectralGffSampler>,
}

#[pymethods]
impl PyFieldSampler {
    #[staticmethod]
    fn dense(domain: &PyDomain) -> PyResult<Self> {
        let table = GreenTable::new(Arc::clone(&domain.inner));
        Ok(Self {
            dom: Arc::clone(&domain.inner),
            dense: Some(DenseGffSampler::new(&table).map_err(err)?),
            spectral: None,
        })
    }

    #[staticmethod]
    fn spectral(domain: &PyDomain) -> Self {
        Self {
            dom: Arc::clone(&domain.inner),
            dense: None,
            spectral: Some(SpectralGffSampler::new(Arc::clone(&domain.inner))),
        }
    }

    /// One field realization from the stream (seed, index).
    fn sample(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = sample_rng(seed, StreamClass::GffRoute, index);
        match (&self.dense, &self.spectral) {
            (Some(s), _) => s.sample(&mut rng),
            (_, Some(s)) => s.sample(&mut rng),
            _ => unreachable!("one route is always set"),
        }
    }

    /// (phi, edge_open) drawn from one stream, as the experiments do.
    #[pyo3(signature = (seed, index, kappa = 2.0))]
    fn sample_with_marks(
        &self,
        seed: u64,
        index: u64,
        kappa: f64,
    ) -> PyResult<(Vec<f64>, Vec<bool>)> {
        let coupling = EdgeCoupling::new(kappa).map_err(err)?;
        let mut rng = sample_rng(seed, StreamClass::GffRoute, index);
        let phi = match (&self.dense, &self.spectral) {
            (Some(s), _) => s.sample(&mut rng),
            (_, Some(s)) => s.sample(&mut rng),
            _ => unreachable!(),
        };
        let open = mark_edges(&self.dom, &phi, coupling, &mut rng).map_err(err)?;
        Ok((phi, open))
    }
}

/// Rooted-decomposition loop-soup sampler.
#[pyclass(name = "LoopEngine", frozen)]
struct PyLoopEngine {
    engine: LoopSoupEngine,
}

#[pymethods]
impl PyLoopEngine {
    #[new]
    #[pyo3(signature = (domain, max_vertices = 2048))]
    fn new(domain: &PyDomain, max_vertices: usize) -> PyResult<Self> {
        Ok(Self {
            engine: LoopSoupEngine::new(Arc::clone(&domain.inner), max_vertices).map_err(err)?,
        })
    }

    /// One soup: (loop count, occupation field, glue-open marks).
    #[pyo3(signature = (seed, index, alpha = 0.5, kappa = 2.0))]
    fn sample(
        &self,
        seed: u64,
        index: u64,
        alpha: f64,
        kappa: f64,
    ) -> PyResult<(usize, Vec<f64>, Vec<bool>)> {
        let coupling = EdgeCoupling::new(kappa).map_err(err)?;
        let mut rng = sample_rng(seed, StreamClass::LoopRoute, index);
        let sample = self.engine.sample(alpha, coupling, &mut rng).map_err(err)?;
        Ok((sample.loops.len(), sample.gamma, sample.glue_open))
    }

    /// Loops of one soup as (root, num_steps, steps or None) triples.
    #[pyo3(signature = (seed, index, alpha = 0.5))]
    fn loops(&self, seed: u64, index: u64, alpha: f64) -> PyResult<Vec<LoopTriple>> {
        let mut rng = sample_rng(seed, StreamClass::LoopRoute, index);
        Ok(self
            .engine
            .sample_loops(alpha, &mut rng)
            .map_err(err)?
            .into_iter()
            .map(|l| (l.root, l.num_steps, l.steps))
            .collect())
    }
}

fn report_for(dom: &LatticeDomain, open: &[bool]) -> PyResult<ClusterReport> {
    extract_clusters(dom, open).map_err(err)
}

/// Per-vertex cluster labels (index of the cluster in canonical order).
#[pyfunction]
fn cluster_labels(domain: &PyDomain, open: Vec<bool>) -> PyResult<Vec<u32>> {
    Ok(report_for(&domain.inner, &open)?.labels().to_vec())
}

/// (canonical vertex, size, L-infinity diameter) per cluster.
#[pyfunction]
fn cluster_stats(domain: &PyDomain, open: Vec<bool>) -> PyResult<Vec<(u32, u32, u32)>> {
    Ok(report_for(&domain.inner, &open)?
        .clusters()
        .iter()
        .map(|c| (c.canonical, c.size, c.diam_linf))
        .collect())
}

/// Resample fair cluster signs: eps'(x) |phi(x)|, equal in law to phi.
#[pyfunction]
fn resample_signs(
    domain: &PyDomain,
    phi: Vec<f64>,
    open: Vec<bool>,
    seed: u64,
    index: u64,
) -> PyResult<Vec<f64>> {
    let report = report_for(&domain.inner, &open)?;
    let mut rng = sample_rng(seed, StreamClass::Auxiliary, index);
    signed_field(&phi, &report, &mut rng).map_err(err)
}

/// [(r, P[0 <-> r e1], r^(d-2) P)] for a box domain.
#[pyfunction]
fn twopoint_profile(domain: &PyDomain, radii: Vec<i64>) -> PyResult<Vec<(i64, f64, f64)>> {
    Ok(twopoint_decay_profile(&domain.inner, &radii)
        .map_err(err)?
        .into_iter()
        .map(|p| (p.r, p.probability, p.scaled))
        .collect())
}

/// Run an experiment from a TOML config string; returns (all_pass, jsonl).
#[pyfunction]
fn run_config(text: &str) -> PyResult<(bool, String)> {
    let raw = parse_config(text).map_err(err)?;
    let cfg = validate(&raw).map_err(err)?;
    let outcome = run(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let jsonl = outcome
        .to_jsonl()
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((outcome.all_pass, jsonl))
}

/// The experiment catalogue as (name, description) pairs.
#[pyfunction]
fn list_experiments() -> Vec<(String, String)> {
    ExperimentKind::ALL
        .iter()
        .map(|k| (k.name().to_string(), k.describe().to_string()))
        .collect()
}

#[pymodule]
fn cablesoup_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDomain>()?;
    m.add_class::<PyGreen>()?;
    m.add_class::<PyFieldSampler>()?;
    m.add_class::<PyLoopEngine>()?;
    m.add_function(wrap_pyfunction!(cluster_labels, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_stats, m)?)?;
    m.add_function(wrap_pyfunction!(resample_signs, m)?)?;
    m.add_function(wrap_pyfunction!(twopoint_profile, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(list_experiments, m)?)?;
    Ok(())
}
