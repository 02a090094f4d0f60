//! Cross-module statistical integration checks that do not belong to any
//! single unit suite.

use std::sync::Arc;

use cablesoup::clusters::{box_intersections, extract_clusters};
use cablesoup::gff::{mark_edges, EdgeCoupling, SpectralGffSampler};
use cablesoup::green::{connection_probability, GreenTable};
use cablesoup::lattice::{BoxSpec, LatticeDomain, Rect};
use cablesoup::rng::{sample_rng, StreamClass};

/// E[X] identity at low dimension: the sampled mean of the box-intersection
/// statistic equals the summed arcsin probabilities over the box pairs.
#[test]
fn cross_statistic_matches_connection_sum_d2() {
    let dom = Arc::new(LatticeDomain::build_box(&BoxSpec::new(2, 2)).unwrap());
    let b1 = Rect::new(vec![-2, -1], vec![-1, 1]);
    let b2 = Rect::new(vec![1, -1], vec![2, 1]);
    let b1_ids = dom.vertices_in_rect(&b1).unwrap();
    let b2_ids = dom.vertices_in_rect(&b2).unwrap();

    let table = GreenTable::new(Arc::clone(&dom));
    let mut exact = 0.0;
    for &x in &b1_ids {
        for &y in &b2_ids {
            exact += connection_probability(&table, x, y).unwrap();
        }
    }

    let sampler = SpectralGffSampler::new(Arc::clone(&dom));
    let coupling = EdgeCoupling::default();
    let n = 40_000u64;
    let mut rng = sample_rng(17, StreamClass::GffRoute, 0);
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let phi = sampler.sample(&mut rng);
        let open = mark_edges(&dom, &phi, coupling, &mut rng).unwrap();
        let report = extract_clusters(&dom, &open).unwrap();
        let x = box_intersections(&dom, &report, &b1, &b2).unwrap().cross_sum as f64;
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    let se = (var / n as f64).sqrt();
    assert!(
        (mean - exact).abs() <= 4.0 * se,
        "mean X {mean:.4} vs exact sum {exact:.4} (se {se:.4})"
    );
}
