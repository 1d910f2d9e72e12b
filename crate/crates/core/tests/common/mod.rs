#![allow(dead_code)]

use walkaudit::auditor::{run_audit, WalkOptions};
use walkaudit::catalog::{generate_catalog, CatalogConfig};
use walkaudit::{AuditRun, Catalog, PlatformSim, RecommendationPolicy};

/// Catalog of `n_videos` plus a `n_walks` audit, both seeded by `seed`.
pub fn simulated_audit(
    policy: &RecommendationPolicy,
    n_videos: usize,
    seed: u64,
    n_walks: usize,
) -> (Catalog, AuditRun) {
    let catalog = generate_catalog(&CatalogConfig::with_videos(n_videos), seed).unwrap();
    let topics: Vec<_> = catalog.topics().iter().map(|t| t.id).collect();
    let sim = PlatformSim::new(catalog.as_of_walk_time(), policy.clone()).unwrap();
    let audit = run_audit(&sim, &topics, n_walks, seed, &WalkOptions::default(), Some(1)).unwrap();
    (catalog, audit)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}
