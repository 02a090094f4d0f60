//! Config-driven experiments: named, reproducible wiring of the samplers,
//! cluster extraction, and estimators, with JSON-lines result records.
//!
//! Determinism contract: every record is a pure function of (config, master
//! seed). Samples own private RNG streams derived from the seed and the
//! sample index, workers only fill pre-indexed slots, and reductions run in
//! index order, so output bytes are independent of the worker-thread count
//! (the `wall_clock_ms` field is the one exception and is excluded from
//! comparisons).

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clusters::{self, box_intersections, extract_clusters, ClusterError};
use crate::estimators::{
    highdim_row, isomorphism_tests, moment_scan, twopoint_empirical, EstimatorSummary,
    HighdimRow, MomentScanRow, PairEstimate, Quantity, Verdict, VertexComparison,
};
use crate::gff::{
    mark_edges, DenseGffSampler, EdgeCoupling, FieldSampler, GffError, SpectralGffSampler,
};
use crate::green::{
    connection_probability, twopoint_decay_profile, GreenError, GreenTable, ProfilePoint,
    DEFAULT_DENSE_CAP,
};
use crate::lattice::{BoxSpec, LatticeDomain, LatticeError, Rect, DEFAULT_VERTEX_BUDGET};
use crate::loopsoup::{dump_loops, LoopSoupEngine, LoopSoupError, DEFAULT_LOOP_ROUTE_CAP};
use crate::numeric::{edge_open_integral, inverse_normal_cdf};
use crate::rng::{sample_rng, StreamClass};

pub const FORMAT_VERSION: u32 = 1;

/// Absolute tolerance of the edge-coupling calibration gate.
pub const CALIBRATION_TOLERANCE: f64 = 1e-6;

/// Environment variable consulted for the default worker count.
pub const THREADS_ENV: &str = "CABLESOUP_THREADS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config:\n  {}", errors.join("\n  "))]
    InvalidConfig { errors: Vec<String> },
    #[error("edge-coupling calibration failed: quadrature {integral:.9} vs exact {exact:.9} at kappa = {kappa} (tolerance {tol:e}); dependent experiments aborted")]
    Calibration {
        integral: f64,
        exact: f64,
        kappa: f64,
        tol: f64,
    },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error(transparent)]
    Gff(#[from] GffError),
    #[error(transparent)]
    LoopSoup(#[from] LoopSoupError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("worker pool error: {0}")]
    Pool(String),
}

// ---------------------------------------------------------------------------
// Config surface
// ---------------------------------------------------------------------------

/// On-disk config as written by users; everything optional so `validate`
/// can report all violations at once.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<String>,
    pub route: Option<String>,
    pub samples: Option<u64>,
    pub seed: Option<u64>,
    pub kappa: Option<f64>,
    pub alpha: Option<f64>,
    pub threads: Option<usize>,
    pub out: Option<String>,
    pub csv: Option<String>,
    pub loop_dump: Option<String>,
    pub pairs: Option<usize>,
    pub radii: Option<Vec<i64>>,
    pub domain: Option<RawDomain>,
    pub ladder: Option<RawLadder>,
    pub thresholds: Option<RawThresholds>,
    pub vertex_budget: Option<usize>,
    pub dense_cap: Option<usize>,
    pub loop_route_cap: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDomain {
    pub kind: Option<String>,
    pub d: Option<usize>,
    pub n: Option<i64>,
    pub k: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLadder {
    pub d: Option<usize>,
    pub ns: Option<Vec<i64>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawThresholds {
    pub z_max: Option<f64>,
    pub ks_p_min: Option<f64>,
    pub ci_level: Option<f64>,
    pub min_cover_fraction: Option<f64>,
    pub plateau_ratio_max: Option<f64>,
    pub max_cluster_spread_max: Option<f64>,
    pub moment_ratio_spread_max: Option<f64>,
}

pub fn parse_config(text: &str) -> Result<RawConfig, ExperimentError> {
    toml::from_str(text).map_err(|e| ExperimentError::InvalidConfig {
        errors: vec![e.to_string()],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ArcsinCheck,
    IsomorphismCheck,
    CouplingEquivalence,
    TwopointDecay,
    HighdimScan,
    EdgeOracle,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::ArcsinCheck,
        ExperimentKind::IsomorphismCheck,
        ExperimentKind::CouplingEquivalence,
        ExperimentKind::TwopointDecay,
        ExperimentKind::HighdimScan,
        ExperimentKind::EdgeOracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::ArcsinCheck => "arcsin-check",
            ExperimentKind::IsomorphismCheck => "isomorphism-check",
            ExperimentKind::CouplingEquivalence => "coupling-equivalence",
            ExperimentKind::TwopointDecay => "twopoint-decay",
            ExperimentKind::HighdimScan => "highdim-scan",
            ExperimentKind::EdgeOracle => "edge-oracle",
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            ExperimentKind::ArcsinCheck => {
                "empirical two-point connection frequencies against the exact arcsin formula"
            }
            ExperimentKind::IsomorphismCheck => {
                "occupation field vs half the squared field, per-vertex KS and moment tests"
            }
            ExperimentKind::CouplingEquivalence => {
                "field-route vs loop-route cluster connectivity on fixture domains"
            }
            ExperimentKind::TwopointDecay => {
                "analytic r^(d-2)-scaled two-point profile along an axis"
            }
            ExperimentKind::HighdimScan => {
                "cluster-size and large-cluster trends over an N ladder at fixed d > 6"
            }
            ExperimentKind::EdgeOracle => {
                "quadrature + simulation pinning of the edge coupling constant"
            }
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Route selection; the occupation-coupling experiments always need both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Gff,
    Loopsoup,
    Both,
}

impl Route {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "gff" => Some(Route::Gff),
            "loopsoup" => Some(Route::Loopsoup),
            "both" => Some(Route::Both),
            _ => None,
        }
    }

    fn runs_gff(&self) -> bool {
        matches!(self, Route::Gff | Route::Both)
    }

    fn runs_loopsoup(&self) -> bool {
        matches!(self, Route::Loopsoup | Route::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DomainSpec {
    Box { d: usize, n: i64 },
    Path { k: usize },
}

impl DomainSpec {
    pub fn build(&self, budget: usize) -> Result<Arc<LatticeDomain>, LatticeError> {
        match self {
            DomainSpec::Box { d, n } => Ok(Arc::new(LatticeDomain::build_box_with_budget(
                &BoxSpec::new(*d, *n),
                budget,
            )?)),
            DomainSpec::Path { k } => Ok(Arc::new(LatticeDomain::build_path(*k)?)),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Ladder {
    pub d: usize,
    pub ns: Vec<i64>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Thresholds {
    pub z_max: f64,
    pub ks_p_min: f64,
    pub ci_level: f64,
    pub min_cover_fraction: f64,
    pub plateau_ratio_max: f64,
    pub max_cluster_spread_max: f64,
    pub moment_ratio_spread_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        // ~1e-4 per-test false-alarm rate at the suite's test count.
        Self {
            z_max: 4.0,
            ks_p_min: 0.01,
            ci_level: 0.99,
            min_cover_fraction: 0.9,
            plateau_ratio_max: 1.5,
            max_cluster_spread_max: 10.0,
            moment_ratio_spread_max: 3.0,
        }
    }
}

/// Fully validated, defaulted experiment configuration. This struct is the
/// config echo embedded in every record; `threads` and the output paths
/// deliberately do not serialize so records stay byte-identical across
/// worker counts and output destinations.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub route: Route,
    pub samples: u64,
    pub seed: u64,
    pub kappa: f64,
    pub alpha: f64,
    #[serde(skip)]
    pub threads: usize,
    #[serde(skip)]
    pub out: Option<String>,
    #[serde(skip)]
    pub csv: Option<String>,
    #[serde(skip)]
    pub loop_dump: Option<String>,
    pub pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ladder: Option<Ladder>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub radii: Vec<i64>,
    pub thresholds: Thresholds,
    pub vertex_budget: usize,
    pub dense_cap: usize,
    pub loop_route_cap: usize,
}

impl ExperimentConfig {
    fn ci_z(&self) -> f64 {
        inverse_normal_cdf(0.5 + self.thresholds.ci_level / 2.0)
    }
}

/// Checks every field, fills defaults, and normalizes (ladder sorted
/// ascending, radii sorted); reports all violations, not just the first.
pub fn validate(raw: &RawConfig) -> Result<ExperimentConfig, ExperimentError> {
    let mut errors = Vec::new();

    let experiment = match &raw.experiment {
        None => {
            errors.push("missing `experiment`".to_string());
            None
        }
        Some(name) => {
            let kind = ExperimentKind::from_name(name);
            if kind.is_none() {
                let valid: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                errors.push(format!(
                    "unknown experiment `{name}`; valid names: {}",
                    valid.join(", ")
                ));
            }
            kind
        }
    };

    let route = match &raw.route {
        None => None,
        Some(name) => {
            let r = Route::from_name(name);
            if r.is_none() {
                errors.push(format!(
                    "unknown route `{name}`; valid routes: gff, loopsoup, both"
                ));
            }
            r
        }
    };

    let domain = match &raw.domain {
        None => None,
        Some(rd) => match rd.kind.as_deref() {
            Some("box") => {
                let mut ok = true;
                if rd.d.is_none() {
                    errors.push("domain: missing `d` for a box domain".into());
                    ok = false;
                }
                if rd.n.is_none() {
                    errors.push("domain: missing `n` for a box domain".into());
                    ok = false;
                }
                if ok {
                    Some(DomainSpec::Box {
                        d: rd.d.unwrap(),
                        n: rd.n.unwrap(),
                    })
                } else {
                    None
                }
            }
            Some("path") => match rd.k {
                Some(k) => Some(DomainSpec::Path { k }),
                None => {
                    errors.push("domain: missing `k` for a path domain".into());
                    None
                }
            },
            Some(other) => {
                errors.push(format!(
                    "domain: unknown kind `{other}`; valid kinds: box, path"
                ));
                None
            }
            None => {
                errors.push("domain: missing `kind` (box or path)".into());
                None
            }
        },
    };

    let ladder = match &raw.ladder {
        None => None,
        Some(rl) => {
            let mut ok = true;
            if rl.d.is_none() {
                errors.push("ladder: missing `d`".into());
                ok = false;
            }
            match &rl.ns {
                None => {
                    errors.push("ladder: missing `ns`".into());
                    ok = false;
                }
                Some(ns) if ns.is_empty() => {
                    errors.push("ladder: `ns` must be non-empty".into());
                    ok = false;
                }
                Some(ns) if ns.iter().any(|&n| n < 1) => {
                    errors.push("ladder: every N must be >= 1".into());
                    ok = false;
                }
                _ => {}
            }
            if ok {
                let mut ns = rl.ns.clone().unwrap();
                ns.sort_unstable();
                ns.dedup();
                Some(Ladder {
                    d: rl.d.unwrap(),
                    ns,
                })
            } else {
                None
            }
        }
    };

    let kappa = raw.kappa.unwrap_or(2.0);
    if kappa <= 0.0 || !kappa.is_finite() {
        errors.push(format!("kappa must be positive and finite, got {kappa}"));
    }
    let alpha = raw.alpha.unwrap_or(0.5);
    if alpha <= 0.0 || !alpha.is_finite() {
        errors.push(format!("alpha must be positive and finite, got {alpha}"));
    }

    let td = Thresholds::default();
    let rt = raw.thresholds.clone().unwrap_or_default();
    let thresholds = Thresholds {
        z_max: rt.z_max.unwrap_or(td.z_max),
        ks_p_min: rt.ks_p_min.unwrap_or(td.ks_p_min),
        ci_level: rt.ci_level.unwrap_or(td.ci_level),
        min_cover_fraction: rt.min_cover_fraction.unwrap_or(td.min_cover_fraction),
        plateau_ratio_max: rt.plateau_ratio_max.unwrap_or(td.plateau_ratio_max),
        max_cluster_spread_max: rt
            .max_cluster_spread_max
            .unwrap_or(td.max_cluster_spread_max),
        moment_ratio_spread_max: rt
            .moment_ratio_spread_max
            .unwrap_or(td.moment_ratio_spread_max),
    };
    if !(thresholds.ci_level > 0.0 && thresholds.ci_level < 1.0) {
        errors.push(format!(
            "thresholds.ci_level must be in (0,1), got {}",
            thresholds.ci_level
        ));
    }

    // Per-experiment requirements and defaults.
    let mut samples = raw.samples.unwrap_or(0);
    let mut route_final = route.unwrap_or(Route::Gff);
    let mut radii = raw.radii.clone().unwrap_or_default();
    if let Some(kind) = experiment {
        match kind {
            ExperimentKind::ArcsinCheck
            | ExperimentKind::IsomorphismCheck
            | ExperimentKind::CouplingEquivalence => {
                if raw.domain.is_none() {
                    errors.push(format!("{} requires a [domain] section", kind.name()));
                }
                if samples == 0 {
                    samples = 100_000;
                }
                if matches!(
                    kind,
                    ExperimentKind::IsomorphismCheck | ExperimentKind::CouplingEquivalence
                ) {
                    if let Some(r) = route {
                        if r != Route::Both {
                            errors.push(format!(
                                "{} compares both routes; set route = \"both\" or omit it",
                                kind.name()
                            ));
                        }
                    }
                    route_final = Route::Both;
                }
            }
            ExperimentKind::TwopointDecay => {
                match &domain {
                    Some(DomainSpec::Box { d, n }) => {
                        if *d < 3 {
                            errors.push("twopoint-decay requires a box with d >= 3".into());
                        }
                        if radii.is_empty() {
                            radii = (1..=(*n).min(12))
                                .filter(|&r| r >= (*n / 6).max(1))
                                .collect();
                            if radii.is_empty() {
                                radii = vec![1];
                            }
                        }
                        radii.sort_unstable();
                        radii.dedup();
                        if radii.iter().any(|&r| r < 1 || r > *n) {
                            errors.push(format!(
                                "radii must lie in [1, {n}] so the profile stays interior"
                            ));
                        }
                    }
                    Some(DomainSpec::Path { .. }) => {
                        errors.push("twopoint-decay requires a box domain".into())
                    }
                    None => errors.push("twopoint-decay requires a [domain] box section".into()),
                }
                samples = 0; // analytic, no sampling
            }
            ExperimentKind::HighdimScan => {
                if raw.ladder.is_none() {
                    errors.push("highdim-scan requires a [ladder] section (d, ns)".into());
                }
                if let Some(l) = &ladder {
                    if l.d <= 6 {
                        errors.push(format!(
                            "highdim-scan targets d > 6 (got d = {}); the trend statements need it",
                            l.d
                        ));
                    }
                }
                if samples == 0 {
                    samples = 200;
                }
                if samples < 200 {
                    errors.push(format!(
                        "highdim-scan needs >= 200 samples per rung, got {samples}"
                    ));
                }
                if let Some(r) = route {
                    if r != Route::Gff {
                        errors.push(
                            "highdim-scan runs the gff route only (the loop route is \
                             capped far below these domain sizes)"
                                .into(),
                        );
                    }
                }
                route_final = Route::Gff;
            }
            ExperimentKind::EdgeOracle => {
                if samples == 0 {
                    samples = 100_000;
                }
                // Domain is pinned to the 2-vertex path fixture.
            }
        }
        if samples > 0 && samples < 1000 && kind != ExperimentKind::HighdimScan {
            errors.push(format!(
                "{} needs at least 1000 samples for its interval estimates, got {samples}",
                kind.name()
            ));
        }
    }

    let vertex_budget = raw.vertex_budget.unwrap_or(DEFAULT_VERTEX_BUDGET);
    let dense_cap = raw.dense_cap.unwrap_or(DEFAULT_DENSE_CAP);
    let loop_route_cap = raw.loop_route_cap.unwrap_or(DEFAULT_LOOP_ROUTE_CAP);

    // Domain buildability and loop-route capacity checks.
    if let Some(spec) = &domain {
        match spec.build(vertex_budget) {
            Err(e) => errors.push(e.to_string()),
            Ok(dom) => {
                if route_final.runs_loopsoup() && dom.vertex_count() > loop_route_cap {
                    errors.push(format!(
                        "loop route requested on {} vertices but the loop-route cap is {}; \
                         use route = \"gff\" or raise loop_route_cap",
                        dom.vertex_count(),
                        loop_route_cap
                    ));
                }
            }
        }
    }
    if let Some(l) = &ladder {
        for &n in &l.ns {
            let wide = BoxSpec::new(l.d, n).vertex_count_wide();
            if wide > vertex_budget as u128 {
                errors.push(format!(
                    "ladder rung N = {n} has {wide} vertices, exceeding the budget {vertex_budget}"
                ));
            }
        }
    }

    if !errors.is_empty() {
        return Err(ExperimentError::InvalidConfig { errors });
    }
    Ok(ExperimentConfig {
        experiment: experiment.unwrap(),
        route: route_final,
        samples,
        seed: raw.seed.unwrap_or(42),
        kappa,
        alpha,
        threads: raw.threads.unwrap_or(0),
        out: raw.out.clone(),
        csv: raw.csv.clone(),
        loop_dump: raw.loop_dump.clone(),
        pairs: raw.pairs.unwrap_or(10),
        domain,
        ladder,
        radii,
        thresholds,
        vertex_budget,
        dense_cap,
        loop_route_cap,
    })
}

// ---------------------------------------------------------------------------
// Result records
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct ResultRecord {
    pub format_version: u32,
    pub experiment: String,
    /// "aggregate" or a ladder rung like "n=3".
    pub label: String,
    pub config: ExperimentConfig,
    pub code_version: String,
    /// The documented per-sample stream derivation.
    pub rng_scheme: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
    pub results: serde_json::Value,
    pub summary: EstimatorSummary,
    pub wall_clock_ms: u64,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub records: Vec<ResultRecord>,
    /// Exit-code contract: true iff every asserted verdict passed.
    pub all_pass: bool,
    /// Per-sample CSV (header + rows) when the config asked for one.
    pub csv: Option<String>,
}

impl RunOutcome {
    pub fn to_jsonl(&self) -> Result<String, ExperimentError> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

const RNG_SCHEME: &str = "chacha12(seed || class || sample_index || \"cablesoup.v1\")";

fn record(
    cfg: &ExperimentConfig,
    label: &str,
    notices: Vec<String>,
    results: serde_json::Value,
    summary: EstimatorSummary,
    started: std::time::Instant,
) -> ResultRecord {
    ResultRecord {
        format_version: FORMAT_VERSION,
        experiment: cfg.experiment.name().to_string(),
        label: label.to_string(),
        config: cfg.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        rng_scheme: RNG_SCHEME.to_string(),
        notices,
        results,
        summary,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    }
}

// ---------------------------------------------------------------------------
// Shared machinery
// ---------------------------------------------------------------------------

/// The calibration gate every sampling experiment passes first: the
/// edge-opening quadrature on the 2-vertex path must reproduce the exact
/// arcsin value at the configured kappa.
pub fn calibration_gate(kappa: f64) -> Result<(f64, f64), ExperimentError> {
    let dom = Arc::new(LatticeDomain::build_path(2)?);
    let table = GreenTable::new(Arc::clone(&dom));
    let c = table.covariance_matrix()?;
    let exact = connection_probability(&table, 0, 1)?;
    let integral = edge_open_integral(c[0], c[1], c[3], kappa);
    if (integral - exact).abs() > CALIBRATION_TOLERANCE {
        return Err(ExperimentError::Calibration {
            integral,
            exact,
            kappa,
            tol: CALIBRATION_TOLERANCE,
        });
    }
    Ok((integral, exact))
}

/// Deterministic sampler choice: paths exercise the dense factorization
/// route, boxes the spectral route.
fn make_field_sampler(
    cfg: &ExperimentConfig,
    dom: &Arc<LatticeDomain>,
) -> Result<FieldSampler, ExperimentError> {
    match cfg.domain {
        Some(DomainSpec::Path { .. }) => {
            let table = GreenTable::with_dense_cap(Arc::clone(dom), cfg.dense_cap);
            Ok(FieldSampler::Dense(DenseGffSampler::new(&table)?))
        }
        _ => Ok(FieldSampler::Spectral(SpectralGffSampler::new(Arc::clone(
            dom,
        )))),
    }
}

/// Deterministic vertex pairs for a domain: on small domains, all pairs in
/// lex order; on boxes, the centre paired with offsets of growing L1 norm
/// along the leading axes, so the list is identical across runs.
fn pairs_for_domain(dom: &LatticeDomain, want: usize) -> Vec<(usize, usize)> {
    let n = dom.vertex_count();
    let d = dom.dim();
    let all_pairs = n * n.saturating_sub(1) / 2;
    if all_pairs <= want || n <= 32 {
        let mut pairs = Vec::new();
        'outer: for x in 0..n {
            for y in (x + 1)..n {
                pairs.push((x, y));
                if pairs.len() == want {
                    break 'outer;
                }
            }
        }
        return pairs;
    }
    let center = vec![0i64; d];
    let center_id = dom.index_of(&center).unwrap_or(0);
    let mut pairs = Vec::new();
    let max_r = 4i64;
    let free_axes = d.min(3);
    'radius: for l1 in 1..=(max_r * free_axes as i64) {
        // All offsets on the first free_axes axes with this L1 norm, lex
        // order, coordinates in [0, max_r].
        let mut offset = vec![0i64; free_axes];
        loop {
            let norm: i64 = offset.iter().sum();
            if norm == l1 {
                let mut p = center.clone();
                for (a, &o) in offset.iter().enumerate() {
                    p[a] += o;
                }
                if let Some(id) = dom.index_of(&p) {
                    if id != center_id {
                        pairs.push((center_id.min(id), center_id.max(id)));
                        if pairs.len() == want {
                            break 'radius;
                        }
                    }
                }
            }
            let mut a = free_axes;
            let mut done = true;
            while a > 0 {
                a -= 1;
                offset[a] += 1;
                if offset[a] <= max_r {
                    done = false;
                    break;
                }
                offset[a] = 0;
            }
            if done {
                break;
            }
        }
    }
    pairs
}

fn exact_pair_probabilities(
    dom: &Arc<LatticeDomain>,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>, ExperimentError> {
    let table = GreenTable::new(Arc::clone(dom));
    pairs
        .iter()
        .map(|&(x, y)| connection_probability(&table, x, y).map_err(ExperimentError::from))
        .collect()
}

/// Connectivity indicators of the listed pairs packed into a bitmask
/// (pair lists here are always <= 64 long).
fn pair_mask(report: &clusters::ClusterReport, pairs: &[(usize, usize)]) -> u64 {
    let mut mask = 0u64;
    for (i, &(x, y)) in pairs.iter().enumerate() {
        if report.same_cluster(x, y) {
            mask |= 1 << i;
        }
    }
    mask
}

fn gff_route_masks(
    cfg: &ExperimentConfig,
    dom: &Arc<LatticeDomain>,
    pairs: &[(usize, usize)],
) -> Result<Vec<u64>, ExperimentError> {
    let sampler = make_field_sampler(cfg, dom)?;
    let coupling = EdgeCoupling::new(cfg.kappa)?;
    (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, StreamClass::GffRoute, i);
            let phi = sampler.sample(&mut rng);
            let open = mark_edges(dom, &phi, coupling, &mut rng)?;
            let report = extract_clusters(dom, &open)?;
            Ok(pair_mask(&report, pairs))
        })
        .collect()
}

fn loop_route_masks(
    cfg: &ExperimentConfig,
    engine: &LoopSoupEngine,
    pairs: &[(usize, usize)],
) -> Result<Vec<u64>, ExperimentError> {
    let coupling = EdgeCoupling::new(cfg.kappa)?;
    (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, StreamClass::LoopRoute, i);
            let sample = engine.sample(cfg.alpha, coupling, &mut rng)?;
            let report = extract_clusters(engine.domain(), &sample.glue_open)?;
            Ok(pair_mask(&report, pairs))
        })
        .collect()
}

fn mask_counts(masks: &[u64], pairs: usize) -> Vec<u64> {
    let mut counts = vec![0u64; pairs];
    for &m in masks {
        for (i, c) in counts.iter_mut().enumerate() {
            *c += (m >> i) & 1;
        }
    }
    counts
}

fn write_loop_dump(
    cfg: &ExperimentConfig,
    engine: &LoopSoupEngine,
) -> Result<Option<String>, ExperimentError> {
    let Some(path) = &cfg.loop_dump else {
        return Ok(None);
    };
    let mut file = std::fs::File::create(path)?;
    // Re-derive the first few sample streams; identical loops to the run's.
    for i in 0..cfg.samples.min(3) {
        let mut rng = sample_rng(cfg.seed, StreamClass::LoopRoute, i);
        let loops = engine.sample_loops(cfg.alpha, &mut rng)?;
        writeln!(file, "# sample {i}: {} loops", loops.len())?;
        dump_loops(&mut file, &loops)?;
    }
    Ok(Some(format!("loop dump written to {path}")))
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ArcsinRouteResults {
    route: &'static str,
    pairs: Vec<PairEstimate>,
    covered: usize,
    required: usize,
}

fn run_arcsin(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let started = std::time::Instant::now();
    calibration_gate(cfg.kappa)?;
    let dom = cfg
        .domain
        .as_ref()
        .expect("validated")
        .build(cfg.vertex_budget)?;
    let pairs = pairs_for_domain(&dom, cfg.pairs.min(64));
    let exact = exact_pair_probabilities(&dom, &pairs)?;
    let ci_z = cfg.ci_z();
    let required = (cfg.thresholds.min_cover_fraction * pairs.len() as f64).ceil() as usize;

    let mut notices = Vec::new();
    let mut route_blocks = Vec::new();
    let mut quantities = Vec::new();
    let mut csv: Option<String> = None;

    let mut handle_route = |name: &'static str, masks: Vec<u64>| {
        let counts = mask_counts(&masks, pairs.len());
        let rows = twopoint_empirical(&pairs, &counts, cfg.samples, ci_z, Some(&exact));
        let covered = rows.iter().filter(|r| r.covered == Some(true)).count();
        quantities.push(Quantity {
            name: format!("{name}.pairs_covered"),
            estimate: covered as f64,
            se: None,
            samples: cfg.samples,
            verdict: Some(Verdict {
                pass: covered >= required,
                z: None,
                p: None,
                criterion: format!(
                    "{} CI covers the arcsin value for >= {required}/{} pairs",
                    cfg.thresholds.ci_level,
                    pairs.len()
                ),
            }),
        });
        if cfg.csv.is_some() && csv.is_none() {
            let mut text = String::from("sample");
            for (x, y) in &pairs {
                text.push_str(&format!(",connected_{x}_{y}"));
            }
            text.push('\n');
            for (i, m) in masks.iter().enumerate() {
                text.push_str(&i.to_string());
                for bit in 0..pairs.len() {
                    text.push_str(if (m >> bit) & 1 == 1 { ",1" } else { ",0" });
                }
                text.push('\n');
            }
            csv = Some(text);
        }
        route_blocks.push(ArcsinRouteResults {
            route: name,
            pairs: rows,
            covered,
            required,
        });
    };

    if cfg.route.runs_gff() {
        handle_route("gff", gff_route_masks(cfg, &dom, &pairs)?);
    }
    if cfg.route.runs_loopsoup() {
        let engine = LoopSoupEngine::new(Arc::clone(&dom), cfg.loop_route_cap)?;
        handle_route("loopsoup", loop_route_masks(cfg, &engine, &pairs)?);
        if let Some(n) = write_loop_dump(cfg, &engine)? {
            notices.push(n);
        }
    }

    let summary = EstimatorSummary::new(cfg.experiment.name(), quantities);
    let all_pass = summary.all_pass;
    let results = serde_json::json!({ "routes": route_blocks });
    let rec = record(cfg, "aggregate", notices, results, summary, started);
    Ok(RunOutcome {
        records: vec![rec],
        all_pass,
        csv,
    })
}

#[derive(Serialize)]
struct EdgeOracleResults {
    kappa: f64,
    quadrature: f64,
    exact_arcsin: f64,
    quadrature_abs_err: f64,
    simulated_frequency: f64,
    z_vs_exact: f64,
    z_vs_quadrature: f64,
}

fn run_edge_oracle(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let started = std::time::Instant::now();
    let dom = Arc::new(LatticeDomain::build_path(2)?);
    let table = GreenTable::new(Arc::clone(&dom));
    let c = table.covariance_matrix()?;
    let exact = connection_probability(&table, 0, 1)?;
    let quadrature = edge_open_integral(c[0], c[1], c[3], cfg.kappa);

    let sampler = FieldSampler::Dense(DenseGffSampler::new(&table)?);
    let coupling = EdgeCoupling::new(cfg.kappa)?;
    let edge = dom.up_edge(0, 0);
    let hits: Vec<u64> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, StreamClass::GffRoute, i);
            let phi = sampler.sample(&mut rng);
            let open = mark_edges(&dom, &phi, coupling, &mut rng)?;
            Ok(open[edge] as u64)
        })
        .collect::<Result<_, ExperimentError>>()?;
    let freq = hits.iter().sum::<u64>() as f64 / cfg.samples as f64;
    let se_exact = (exact * (1.0 - exact) / cfg.samples as f64).sqrt();
    let se_quad = (quadrature * (1.0 - quadrature) / cfg.samples as f64)
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let z_exact = (freq - exact) / se_exact;
    let z_quad = (freq - quadrature) / se_quad;

    let quad_err = (quadrature - exact).abs();
    let quantities = vec![
        Quantity {
            name: "quadrature_vs_arcsin".into(),
            estimate: quadrature,
            se: None,
            samples: 0,
            verdict: Some(Verdict {
                pass: quad_err <= CALIBRATION_TOLERANCE,
                z: None,
                p: None,
                criterion: format!("|quadrature - exact| <= {CALIBRATION_TOLERANCE:e}"),
            }),
        },
        Quantity {
            name: "simulation_vs_arcsin".into(),
            estimate: freq,
            se: Some(se_exact),
            samples: cfg.samples,
            verdict: Some(Verdict {
                pass: z_exact.abs() <= cfg.thresholds.z_max,
                z: Some(z_exact),
                p: None,
                criterion: format!("|z| <= {}", cfg.thresholds.z_max),
            }),
        },
        Quantity {
            name: "simulation_vs_quadrature".into(),
            estimate: freq,
            se: Some(se_quad),
            samples: cfg.samples,
            verdict: Some(Verdict {
                pass: z_quad.abs() <= cfg.thresholds.z_max,
                z: Some(z_quad),
                p: None,
                criterion: format!(
                    "|z| <= {} (sampler internal consistency)",
                    cfg.thresholds.z_max
                ),
            }),
        },
    ];
    let summary = EstimatorSummary::new(cfg.experiment.name(), quantities);
    let all_pass = summary.all_pass;
    let results = serde_json::to_value(EdgeOracleResults {
        kappa: cfg.kappa,
        quadrature,
        exact_arcsin: exact,
        quadrature_abs_err: quad_err,
        simulated_frequency: freq,
        z_vs_exact: z_exact,
        z_vs_quadrature: z_quad,
    })?;
    let rec = record(cfg, "aggregate", vec![], results, summary, started);
    Ok(RunOutcome {
        records: vec![rec],
        all_pass,
        csv: None,
    })
}

#[derive(Serialize)]
struct IsomorphismResults {
    vertices: Vec<VertexComparison>,
    min_ks_p: f64,
    max_abs_mean_z: f64,
    max_abs_m2_z: f64,
}

fn run_isomorphism(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let started = std::time::Instant::now();
    calibration_gate(cfg.kappa)?;
    let dom = cfg
        .domain
        .as_ref()
        .expect("validated")
        .build(cfg.vertex_budget)?;
    let mut notices = Vec::new();
    if (cfg.alpha - 0.5).abs() > 1e-12 {
        notices.push(format!(
            "occupation/field identity holds at alpha = 1/2; running at alpha = {}",
            cfg.alpha
        ));
    }
    let n_vertices = dom.vertex_count();
    let engine = LoopSoupEngine::new(Arc::clone(&dom), cfg.loop_route_cap)?;

    // Loop route: per-sample occupation vectors.
    let gamma_rows: Vec<Vec<f64>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, StreamClass::LoopRoute, i);
            let loops = engine.sample_loops(cfg.alpha, &mut rng)?;
            Ok(crate::loopsoup::accumulate_gamma(&dom, &loops, &mut rng))
        })
        .collect::<Result<_, ExperimentError>>()?;

    // Field route: per-sample phi^2/2, independent by stream class.
    let sampler = make_field_sampler(cfg, &dom)?;
    let half_sq_rows: Vec<Vec<f64>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, StreamClass::GffRoute, i);
            let phi = sampler.sample(&mut rng);
            Ok(phi.iter().map(|p| p * p / 2.0).collect())
        })
        .collect::<Result<_, ExperimentError>>()?;

    // Transpose to per-vertex series.
    let column = |rows: &[Vec<f64>], v: usize| -> Vec<f64> { rows.iter().map(|r| r[v]).collect() };
    let gamma_cols: Vec<Vec<f64>> = (0..n_vertices).map(|v| column(&gamma_rows, v)).collect();
    let half_cols: Vec<Vec<f64>> = (0..n_vertices).map(|v| column(&half_sq_rows, v)).collect();
    let comparisons = isomorphism_tests(&gamma_cols, &half_cols);

    let min_p = comparisons
        .iter()
        .map(|c| c.ks.p_value)
        .fold(f64::INFINITY, f64::min);
    let max_mean_z = comparisons
        .iter()
        .map(|c| c.mean_z.abs())
        .fold(0.0f64, f64::max);
    let max_m2_z = comparisons
        .iter()
        .map(|c| c.m2_z.abs())
        .fold(0.0f64, f64::max);

    let quantities = vec![
        Quantity {
            name: "min_ks_p".into(),
            estimate: min_p,
            se: None,
            samples: cfg.samples,
            verdict: Some(Verdict {
                pass: min_p >= cfg.thresholds.ks_p_min,
                z: None,
                p: Some(min_p),
                criterion: format!("per-vertex KS p >= {}", cfg.thresholds.ks_p_min),
            }),
        },
        Quantity {
            name: "max_abs_mean_z".into(),
            estimate: max_mean_z,
            se: None,
            samples: cfg.samples,
            verdict: Some(Verdict {
                pass: max_mean_z <= cfg.thresholds.z_max,
                z: Some(max_mean_z),
                p: None,
                criterion: format!("per-vertex mean |z| <= {}", cfg.thresholds.z_max),
            }),
        },
        Quantity {
            name: "max_abs_m2_z".into(),
            estimate: max_m2_z,
            se: None,
            samples: cfg.samples,
            verdict: Some(Verdict {
                pass: max_m2_z <= cfg.thresholds.z_max,
                z: Some(max_m2_z),
                p: None,
                criterion: format!("per-vertex second-moment |z| <= {}", cfg.thresholds.z_max),
            }),
        },
    ];
    if let Some(n) = write_loop_dump(cfg, &engine)? {
        notices.push(n);
    }
    let summary = EstimatorSummary::new(cfg.experiment.name(), quantities);
    let all_pass = summary.all_pass;
    let results = serde_json::to_value(IsomorphismResults {
        vertices: comparisons,
        min_ks_p: min_p,
        max_abs_mean_z: max_mean_z,
        max_abs_m2_z: max_m2_z,
    })?;
    let rec = record(cfg, "aggregate", notices, results, summary, started);
    Ok(RunOutcome {
        records: vec![rec],
        all_pass,
        csv: None,
    })
}

#[derive(Serialize)]
struct CouplingPair {
    x: usize,
    y: usize,
    exact: f64,
    gff_frequency: f64,
    loopsoup_frequency: f64,
    z_between_routes: f64,
    z_gff_vs_exact: f64,
    z_loopsoup_vs_exact: f64,
}

#[derive(Serialize)]
struct CouplingResults {
    pairs: Vec<CouplingPair>,
    max_abs_z_between: f64,
}

fn run_coupling(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let started = std::time::Instant::now();
    calibration_gate(cfg.kappa)?;
    let dom = cfg
        .domain
        .as_ref()
        .expect("validated")
        .build(cfg.vertex_budget)?;
    // Every pair on fixture-sized domains, a deterministic selection beyond.
    let want = if dom.vertex_count() <= 12 {
        dom.vertex_count() * (dom.vertex_count() - 1) / 2
    } else {
        cfg.pairs
    };
    let pairs = pairs_for_domain(&dom, want.clamp(1, 64));
    let exact = exact_pair_probabilities(&dom, &pairs)?;

    let gff_masks = gff_route_masks(cfg, &dom, &pairs)?;
    let engine = LoopSoupEngine::new(Arc::clone(&dom), cfg.loop_route_cap)?;
    let loop_masks = loop_route_masks(cfg, &engine, &pairs)?;
    let gff_counts = mask_counts(&gff_masks, pairs.len());
    let loop_counts = mask_counts(&loop_masks, pairs.len());

    let nf = cfg.samples as f64;
    let mut rows = Vec::with_capacity(pairs.len());
    let mut max_z = 0.0f64;
    let mut all_within = true;
    for (i, &(x, y)) in pairs.iter().enumerate() {
        let pg = gff_counts[i] as f64 / nf;
        let pl = loop_counts[i] as f64 / nf;
        let se_between = ((pg * (1.0 - pg) + pl * (1.0 - pl)) / nf).sqrt();
        let z_between = if se_between > 0.0 {
            (pg - pl) / se_between
        } else {
            0.0
        };
        let se_exact = (exact[i] * (1.0 - exact[i]) / nf).sqrt();
        let z_g = (pg - exact[i]) / se_exact;
        let z_l = (pl - exact[i]) / se_exact;
        max_z = max_z.max(z_between.abs());
        if z_between.abs() > cfg.thresholds.z_max
            || z_g.abs() > cfg.thresholds.z_max
            || z_l.abs() > cfg.thresholds.z_max
        {
            all_within = false;
        }
        rows.push(CouplingPair {
            x,
            y,
            exact: exact[i],
            gff_frequency: pg,
            loopsoup_frequency: pl,
            z_between_routes: z_between,
            z_gff_vs_exact: z_g,
            z_loopsoup_vs_exact: z_l,
        });
    }

    let quantities = vec![Quantity {
        name: "max_abs_z_between_routes".into(),
        estimate: max_z,
        se: None,
        samples: cfg.samples,
        verdict: Some(Verdict {
            pass: all_within,
            z: Some(max_z),
            p: None,
            criterion: format!(
                "each pair: routes within {} SE of each other and of the arcsin value",
                cfg.thresholds.z_max
            ),
        }),
    }];
    let mut notices = Vec::new();
    if let Some(n) = write_loop_dump(cfg, &engine)? {
        notices.push(n);
    }
    let csv = cfg.csv.as_ref().map(|_| {
        let mut text = String::from("sample,gff_mask,loopsoup_mask\n");
        for i in 0..cfg.samples as usize {
            text.push_str(&format!("{i},{:#x},{:#x}\n", gff_masks[i], loop_masks[i]));
        }
        text
    });
    let summary = EstimatorSummary::new(cfg.experiment.name(), quantities);
    let pass = summary.all_pass;
    let results = serde_json::to_value(CouplingResults {
        pairs: rows,
        max_abs_z_between: max_z,
    })?;
    let rec = record(cfg, "aggregate", notices, results, summary, started);
    Ok(RunOutcome {
        records: vec![rec],
        all_pass: pass,
        csv,
    })
}

#[derive(Serialize)]
struct TwopointResults {
    profile: Vec<ProfilePoint>,
    plateau_ratio: f64,
    monotone_decreasing: bool,
}

fn run_twopoint(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let started = std::time::Instant::now();
    let dom = cfg
        .domain
        .as_ref()
        .expect("validated")
        .build(cfg.vertex_budget)?;
    let profile = twopoint_decay_profile(&dom, &cfg.radii)?;
    let scaled: Vec<f64> = profile.iter().map(|p| p.scaled).collect();
    let ratio = scaled.iter().cloned().fold(f64::MIN, f64::max)
        / scaled.iter().cloned().fold(f64::MAX, f64::min);
    let monotone = profile
        .windows(2)
        .all(|w| w[1].probability < w[0].probability);

    let quantities = vec![
        Quantity {
            name: "plateau_ratio".into(),
            estimate: ratio,
            se: None,
            samples: 0,
            verdict: Some(Verdict {
                pass: ratio < cfg.thresholds.plateau_ratio_max,
                z: None,
                p: None,
                criterion: format!(
                    "max/min of r^(d-2) P(r) < {}",
                    cfg.thresholds.plateau_ratio_max
                ),
            }),
        },
        Quantity {
            name: "monotone_decreasing".into(),
            estimate: monotone as u8 as f64,
            se: None,
            samples: 0,
            verdict: Some(Verdict {
                pass: monotone,
                z: None,
                p: None,
                criterion: "P(r) strictly decreasing in r".into(),
            }),
        },
    ];
    let summary = EstimatorSummary::new(cfg.experiment.name(), quantities);
    let all_pass = summary.all_pass;
    let results = serde_json::to_value(TwopointResults {
        profile,
        plateau_ratio: ratio,
        monotone_decreasing: monotone,
    })?;
    let rec = record(cfg, "aggregate", vec![], results, summary, started);
    Ok(RunOutcome {
        records: vec![rec],
        all_pass,
        csv: None,
    })
}

/// Per-sample scalars retained from one high-dimensional cluster sample.
struct HighdimSample {
    large_count: u64,
    max_size: u32,
    c0_size: u32,
    sum_sq: u64,
    identity_ok: bool,
    x_cross: Option<u64>,
}

#[derive(Serialize)]
struct HighdimResults {
    rows: Vec<HighdimRow>,
    moments: Vec<MomentScanRow>,
    large_count_nondecreasing: bool,
    max_cluster_ratio_spread: f64,
    moment_ratio_spread: f64,
}

/// B1, B2: quarter boxes shifted along the first axis by -N/2 and +N/2;
/// integer half-width floor(N/4) (single points at N in {2,3}).
fn cross_boxes(d: usize, n: i64) -> (Rect, Rect) {
    let h = n / 4;
    let s = n / 2;
    let mut lo1 = vec![-h; d];
    let mut hi1 = vec![h; d];
    lo1[0] = -s - h;
    hi1[0] = -s + h;
    let mut lo2 = vec![-h; d];
    let mut hi2 = vec![h; d];
    lo2[0] = s - h;
    hi2[0] = s + h;
    (Rect::new(lo1, hi1), Rect::new(lo2, hi2))
}

fn run_highdim(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let started = std::time::Instant::now();
    calibration_gate(cfg.kappa)?;
    let ladder = cfg.ladder.as_ref().expect("validated");
    let coupling = EdgeCoupling::new(cfg.kappa)?;

    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut moment_data: Vec<(i64, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut csv_text = cfg
        .csv
        .as_ref()
        .map(|_| String::from("n,sample,large_count,max_cluster,c0_size,sum_sizes_sq,x_cross\n"));

    for (rung, &n) in ladder.ns.iter().enumerate() {
        let rung_started = std::time::Instant::now();
        let dom = DomainSpec::Box { d: ladder.d, n }.build(cfg.vertex_budget)?;
        let sampler = SpectralGffSampler::new(Arc::clone(&dom));
        let origin = dom
            .index_of(&vec![0i64; ladder.d])
            .expect("origin interior");
        let (b1, b2) = cross_boxes(ladder.d, n);
        let b1_ids = dom.vertices_in_rect(&b1)?;
        let b2_ids = dom.vertices_in_rect(&b2)?;
        // The E[X] cross-check needs the exact connection sum; only feasible
        // when the boxes are small (single points at N in {2,3}).
        let run_cross = b1_ids.len() * b2_ids.len() <= 64;
        let threshold = n as f64 / 2.0;

        let samples: Vec<HighdimSample> = (0..cfg.samples)
            .into_par_iter()
            .map(|i| {
                let stream = ((rung as u64) << 40) | i;
                let mut rng = sample_rng(cfg.seed, StreamClass::GffRoute, stream);
                let phi = sampler.sample(&mut rng);
                let open = mark_edges(&dom, &phi, coupling, &mut rng)?;
                let report = extract_clusters(&dom, &open)?;
                let sum_sq = report.sum_sizes_squared();
                let identity_ok = sum_sq == report.sum_cluster_size_over_vertices();
                let x_cross = if run_cross {
                    Some(box_intersections(&dom, &report, &b1, &b2)?.cross_sum)
                } else {
                    None
                };
                Ok(HighdimSample {
                    large_count: report.large_cluster_count(threshold) as u64,
                    max_size: report.max_size(),
                    c0_size: report.cluster_of(origin).size,
                    sum_sq,
                    identity_ok,
                    x_cross,
                })
            })
            .collect::<Result<_, ExperimentError>>()?;

        let large: Vec<f64> = samples.iter().map(|s| s.large_count as f64).collect();
        let maxes: Vec<f64> = samples.iter().map(|s| s.max_size as f64).collect();
        let c0: Vec<f64> = samples.iter().map(|s| s.c0_size as f64).collect();
        let sums: Vec<f64> = samples.iter().map(|s| s.sum_sq as f64).collect();
        let identity = samples.iter().all(|s| s.identity_ok);

        let x_stats = if run_cross {
            let xs: Vec<f64> = samples
                .iter()
                .map(|s| s.x_cross.unwrap_or(0) as f64)
                .collect();
            // Exact E[X] = sum over box pairs of the arcsin probability.
            let table = GreenTable::new(Arc::clone(&dom));
            let mut exact_sum = 0.0;
            for &x1 in &b1_ids {
                for &x2 in &b2_ids {
                    exact_sum += if x1 == x2 {
                        1.0
                    } else {
                        connection_probability(&table, x1, x2)?
                    };
                }
            }
            // Single-pair boxes make X a Bernoulli(exact_sum) indicator with
            // known null variance; rare events at a few hundred samples need
            // that rather than the sample variance.
            let exact_sd = if b1_ids.len() == 1 && b2_ids.len() == 1 {
                Some((exact_sum * (1.0 - exact_sum)).sqrt())
            } else {
                None
            };
            Some((xs, exact_sum, exact_sd))
        } else {
            None
        };
        let row = highdim_row(
            n,
            &large,
            &maxes,
            identity,
            x_stats.as_ref().map(|(xs, e, sd)| (xs.as_slice(), *e, *sd)),
        );

        if let Some(text) = csv_text.as_mut() {
            for (i, s) in samples.iter().enumerate() {
                text.push_str(&format!(
                    "{n},{i},{},{},{},{},{}\n",
                    s.large_count,
                    s.max_size,
                    s.c0_size,
                    s.sum_sq,
                    s.x_cross.map_or(String::new(), |x| x.to_string())
                ));
            }
        }

        let results = serde_json::to_value(&row)?;
        let summary = EstimatorSummary::new(cfg.experiment.name(), vec![]);
        records.push(record(
            cfg,
            &format!("n={n}"),
            vec![],
            results,
            summary,
            rung_started,
        ));
        rows.push(row);
        moment_data.push((n, c0, sums));
    }

    let moments = moment_scan(ladder.d, &moment_data);

    // Trend verdicts across the ladder.
    let nondecreasing = rows
        .windows(2)
        .all(|w| w[1].mean_large_count >= w[0].mean_large_count);
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio_max_cluster).collect();
    let ratio_spread = ratios.iter().cloned().fold(f64::MIN, f64::max)
        / ratios.iter().cloned().fold(f64::MAX, f64::min);
    let m_ratios: Vec<f64> = moments.iter().map(|m| m.ratio_c0).collect();
    let moment_spread = m_ratios.iter().cloned().fold(f64::MIN, f64::max)
        / m_ratios.iter().cloned().fold(f64::MAX, f64::min);
    let identity_all = rows.iter().all(|r| r.identity_exact);
    let worst_x_z = rows
        .iter()
        .filter_map(|r| r.x_cross.as_ref())
        .map(|c| c.z.abs())
        .fold(0.0f64, f64::max);

    let mut quantities = vec![
        Quantity {
            name: "large_count_nondecreasing".into(),
            estimate: nondecreasing as u8 as f64,
            se: None,
            samples: cfg.samples,
            verdict: Some(Verdict {
                pass: nondecreasing,
                z: None,
                p: None,
                criterion: "mean count of diameter > N/2 clusters non-decreasing in N".into(),
            }),
        },
        Quantity {
            name: "max_cluster_ratio_spread".into(),
            estimate: ratio_spread,
            se: None,
            samples: cfg.samples,
            verdict: Some(Verdict {
                pass: ratio_spread < cfg.thresholds.max_cluster_spread_max,
                z: None,
                p: None,
                criterion: format!(
                    "spread of mean max|C| / (N^4 log N) < {}",
                    cfg.thresholds.max_cluster_spread_max
                ),
            }),
        },
        Quantity {
            name: "per_sample_identity".into(),
            estimate: identity_all as u8 as f64,
            se: None,
            samples: cfg.samples,
            verdict: Some(Verdict {
                pass: identity_all,
                z: None,
                p: None,
                criterion: "sum |C_n|^2 = sum_x |C(x)| exactly in every sample".into(),
            }),
        },
        Quantity {
            name: "moment_ratio_spread".into(),
            estimate: moment_spread,
            se: None,
            samples: cfg.samples,
            verdict: Some(Verdict {
                pass: moment_spread < cfg.thresholds.moment_ratio_spread_max,
                z: None,
                p: None,
                criterion: format!(
                    "spread of E|C(0)| / N^2 across the ladder < {}",
                    cfg.thresholds.moment_ratio_spread_max
                ),
            }),
        },
    ];
    if rows.iter().any(|r| r.x_cross.is_some()) {
        quantities.push(Quantity {
            name: "x_cross_check_max_abs_z".into(),
            estimate: worst_x_z,
            se: None,
            samples: cfg.samples,
            verdict: Some(Verdict {
                pass: worst_x_z <= cfg.thresholds.z_max,
                z: Some(worst_x_z),
                p: None,
                criterion: format!(
                    "E[X] within {} SE of the summed arcsin probabilities",
                    cfg.thresholds.z_max
                ),
            }),
        });
    }

    let summary = EstimatorSummary::new(cfg.experiment.name(), quantities);
    let all_pass = summary.all_pass;
    let results = serde_json::to_value(HighdimResults {
        rows,
        moments,
        large_count_nondecreasing: nondecreasing,
        max_cluster_ratio_spread: ratio_spread,
        moment_ratio_spread: moment_spread,
    })?;
    records.push(record(cfg, "aggregate", vec![], results, summary, started));
    Ok(RunOutcome {
        records,
        all_pass,
        csv: csv_text,
    })
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

fn dispatch(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    match cfg.experiment {
        ExperimentKind::ArcsinCheck => run_arcsin(cfg),
        ExperimentKind::IsomorphismCheck => run_isomorphism(cfg),
        ExperimentKind::CouplingEquivalence => run_coupling(cfg),
        ExperimentKind::TwopointDecay => run_twopoint(cfg),
        ExperimentKind::HighdimScan => run_highdim(cfg),
        ExperimentKind::EdgeOracle => run_edge_oracle(cfg),
    }
}

/// Resolved worker count: explicit config, then the environment variable,
/// then the rayon default.
pub fn effective_threads(cfg: &ExperimentConfig) -> usize {
    if cfg.threads > 0 {
        return cfg.threads;
    }
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

/// Runs the configured experiment on a private worker pool.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let threads = effective_threads(cfg);
    if threads == 0 {
        dispatch(cfg)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?;
        pool.install(|| dispatch(cfg))
    }
}

/// Parses, validates, runs, and writes out; the convenience used by the CLI
/// and the bindings.
pub fn run_from_toml(text: &str) -> Result<RunOutcome, ExperimentError> {
    let raw = parse_config(text)?;
    let cfg = validate(&raw)?;
    let outcome = run(&cfg)?;
    if let Some(path) = &cfg.out {
        std::fs::write(path, outcome.to_jsonl()?)?;
    }
    if let (Some(path), Some(csv)) = (&cfg.csv, &outcome.csv) {
        std::fs::write(path, csv)?;
    }
    Ok(outcome)
}
