//! Statistical reductions over per-sample simulation output: binomial
//! frequencies with score intervals, two-sample distribution comparisons,
//! and the cluster-moment scans, each with explicit error bars and
//! reproducible verdicts.

use serde::Serialize;

/// Wilson score interval for a binomial frequency; stable near 0 and 1.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct WilsonCi {
    pub lo: f64,
    pub hi: f64,
}

pub fn wilson_ci(successes: u64, samples: u64, z: f64) -> WilsonCi {
    assert!(samples > 0, "empty sample");
    let n = samples as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * ((p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()) / denom;
    WilsonCi {
        lo: (center - half).max(0.0),
        hi: (center + half).min(1.0),
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction applied to the argument).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("non-NaN samples"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("non-NaN samples"));
    let (n1, n2) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n1 && j < n2 {
        let t = xs[i].min(ys[j]);
        while i < n1 && xs[i] <= t {
            i += 1;
        }
        while j < n2 && ys[j] <= t {
            j += 1;
        }
        let gap = (i as f64 / n1 as f64 - j as f64 / n2 as f64).abs();
        d = d.max(gap);
    }
    let ne = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    KsResult {
        statistic: d,
        p_value: ks_survival(lambda),
        n_effective: ne,
    }
}

/// Q_KS(lambda) = 2 sum_j (-1)^(j-1) exp(-2 j^2 lambda^2).
pub fn ks_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        total += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// Empirical two-point frequency for one vertex pair, with its score
/// interval and (when an exact value is supplied) a coverage flag.
#[derive(Clone, Debug, Serialize)]
pub struct PairEstimate {
    pub x: usize,
    pub y: usize,
    pub successes: u64,
    pub samples: u64,
    pub frequency: f64,
    pub ci: WilsonCi,
    pub exact: Option<f64>,
    pub covered: Option<bool>,
}

pub fn twopoint_empirical(
    pairs: &[(usize, usize)],
    successes: &[u64],
    samples: u64,
    ci_z: f64,
    exact: Option<&[f64]>,
) -> Vec<PairEstimate> {
    assert_eq!(pairs.len(), successes.len());
    if let Some(e) = exact {
        assert_eq!(e.len(), pairs.len());
    }
    pairs
        .iter()
        .zip(successes)
        .enumerate()
        .map(|(idx, (&(x, y), &s))| {
            let ci = wilson_ci(s, samples, ci_z);
            let exact_p = exact.map(|e| e[idx]);
            let covered = exact_p.map(|p| ci.lo <= p && p <= ci.hi);
            PairEstimate {
                x,
                y,
                successes: s,
                samples,
                frequency: s as f64 / samples as f64,
                ci,
                exact: exact_p,
                covered,
            }
        })
        .collect()
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

/// Mean difference in units of the pooled standard error.
pub fn mean_z_score(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_and_var(a);
    let (mb, vb) = mean_and_var(b);
    let se = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    (ma - mb) / se
}

/// Per-vertex comparison of the occupation field against half the squared
/// field: KS on the raw values plus z-scores for the first two moments.
#[derive(Clone, Debug, Serialize)]
pub struct VertexComparison {
    pub vertex: usize,
    pub ks: KsResult,
    pub mean_gamma: f64,
    pub mean_half_phi_sq: f64,
    pub mean_z: f64,
    pub m2_z: f64,
}

/// `gamma[v]` and `half_phi_sq[v]` hold the per-sample values at vertex `v`,
/// generated from independent seeds.
pub fn isomorphism_tests(gamma: &[Vec<f64>], half_phi_sq: &[Vec<f64>]) -> Vec<VertexComparison> {
    assert_eq!(gamma.len(), half_phi_sq.len());
    gamma
        .iter()
        .zip(half_phi_sq)
        .enumerate()
        .map(|(vertex, (g, h))| {
            let ks = ks_two_sample(g, h);
            let (mg, _) = mean_and_var(g);
            let (mh, _) = mean_and_var(h);
            let g2: Vec<f64> = g.iter().map(|x| x * x).collect();
            let h2: Vec<f64> = h.iter().map(|x| x * x).collect();
            VertexComparison {
                vertex,
                ks,
                mean_gamma: mg,
                mean_half_phi_sq: mh,
                mean_z: mean_z_score(g, h),
                m2_z: mean_z_score(&g2, &h2),
            }
        })
        .collect()
}

/// One rung of the cluster-moment ladder. Asymptotic constants are unknown,
/// so only the N-normalized ratios are reported; verdicts are trend checks.
#[derive(Clone, Debug, Serialize)]
pub struct MomentScanRow {
    pub n: i64,
    pub samples: u64,
    pub mean_c0: f64,
    pub se_c0: f64,
    /// E|C(0)| / N^2.
    pub ratio_c0: f64,
    pub mean_sum_sq: f64,
    pub se_sum_sq: f64,
    /// E[sum |C_n|^2] / N^(d+2).
    pub ratio_sum_sq: f64,
}

/// `per_n` holds, for each ladder rung, per-sample |C(0)| and per-sample
/// sum_n |C_n|^2.
pub fn moment_scan(d: usize, per_n: &[(i64, Vec<f64>, Vec<f64>)]) -> Vec<MomentScanRow> {
    per_n
        .iter()
        .map(|(n, c0, sum_sq)| {
            let (mean_c0, var_c0) = mean_and_var(c0);
            let (mean_sq, var_sq) = mean_and_var(sum_sq);
            let n2 = (*n as f64).powi(2);
            let nd2 = (*n as f64).powi(d as i32 + 2);
            MomentScanRow {
                n: *n,
                samples: c0.len() as u64,
                mean_c0,
                se_c0: (var_c0 / c0.len() as f64).sqrt(),
                ratio_c0: mean_c0 / n2,
                mean_sum_sq: mean_sq,
                se_sum_sq: (var_sq / sum_sq.len() as f64).sqrt(),
                ratio_sum_sq: mean_sq / nd2,
            }
        })
        .collect()
}

/// Per-N aggregates for the high-dimensional cluster scans.
#[derive(Clone, Debug, Serialize)]
pub struct HighdimRow {
    pub n: i64,
    pub samples: u64,
    /// Clusters with L-infinity diameter > N/2.
    pub mean_large_count: f64,
    pub se_large_count: f64,
    pub mean_max_cluster: f64,
    pub max_max_cluster: u64,
    /// mean max|C| / (N^4 log N).
    pub ratio_max_cluster: f64,
    /// Per-sample identity sum |C_n|^2 = sum_x |C(x)| held in every sample.
    pub identity_exact: bool,
    pub x_cross: Option<CrossCheck>,
}

/// E[X] against the exact connection-probability sum.
#[derive(Clone, Debug, Serialize)]
pub struct CrossCheck {
    pub mean: f64,
    pub se: f64,
    pub exact: f64,
    pub z: f64,
}

/// `x_samples` optionally carries the exact null standard deviation of one
/// X draw (known when X is a single-pair indicator: sqrt(p(1-p))); without
/// it the z-score falls back on the sample deviation, which is unusable for
/// rare events at small sample counts.
pub fn highdim_row(
    n: i64,
    large_counts: &[f64],
    max_sizes: &[f64],
    identity_exact: bool,
    x_samples: Option<(&[f64], f64, Option<f64>)>,
) -> HighdimRow {
    let (ml, vl) = mean_and_var(large_counts);
    let (mm, _) = mean_and_var(max_sizes);
    let norm = (n as f64).powi(4) * (n as f64).ln();
    let x_cross = x_samples.map(|(xs, exact, exact_sd)| {
        let (mx, vx) = mean_and_var(xs);
        let nf = xs.len() as f64;
        let se_sample = (vx / nf).sqrt();
        let se_null = exact_sd.map(|sd| sd / nf.sqrt()).unwrap_or(se_sample);
        CrossCheck {
            mean: mx,
            se: se_sample,
            exact,
            z: if se_null > 0.0 {
                (mx - exact) / se_null
            } else {
                f64::INFINITY
            },
        }
    });
    HighdimRow {
        n,
        samples: large_counts.len() as u64,
        mean_large_count: ml,
        se_large_count: (vl / large_counts.len() as f64).sqrt(),
        mean_max_cluster: mm,
        max_max_cluster: max_sizes.iter().map(|&m| m as u64).max().unwrap_or(0),
        ratio_max_cluster: mm / norm,
        identity_exact,
        x_cross,
    }
}

/// One named quantity of an experiment summary.
#[derive(Clone, Debug, Serialize)]
pub struct Quantity {
    pub name: String,
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    pub samples: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub criterion: String,
}

/// The rolled-up table an experiment reports: reproducible from
/// (master seed, config) alone.
#[derive(Clone, Debug, Serialize)]
pub struct EstimatorSummary {
    pub experiment: String,
    pub quantities: Vec<Quantity>,
    pub all_pass: bool,
}

impl EstimatorSummary {
    pub fn new(experiment: &str, quantities: Vec<Quantity>) -> Self {
        let all_pass = quantities
            .iter()
            .all(|q| q.verdict.as_ref().is_none_or(|v| v.pass));
        Self {
            experiment: experiment.to_string(),
            quantities,
            all_pass,
        }
    }
}
