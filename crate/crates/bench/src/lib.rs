//! Fixtures shared by the benches.

use rand::Rng;
use sgground_core::inference::{UnaryKind, Variable};
use sgground_core::relmodel::PairFeatures;
use sgground_core::rng::substream;
use sgground_core::FactorGraph;

/// Random graph with one unary per variable and a binary per edge.
pub fn random_graph(seed: u64, domains: &[usize], edges: &[(usize, usize)]) -> FactorGraph {
    let mut rng = substream(seed, "bench-graph");
    let vars = domains
        .iter()
        .enumerate()
        .map(|(i, &d)| Variable {
            node_id: i as u32,
            domain: d,
        })
        .collect();
    let unaries = domains
        .iter()
        .enumerate()
        .map(|(i, &d)| (i, UnaryKind::Object(format!("c{i}")), (0..d).map(|_| rng.random()).collect()))
        .collect();
    let binaries = edges
        .iter()
        .map(|&(s, o)| (s, o, "r".to_string(), (0..domains[s] * domains[o]).map(|_| rng.random()).collect()))
        .collect();
    FactorGraph::new(vars, unaries, binaries).expect("valid graph")
}

/// A chain of `n` variables.
pub fn chain(seed: u64, n: usize, domain: usize) -> FactorGraph {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    random_graph(seed, &vec![domain; n], &edges)
}

/// Every pair of `n` variables connected.
pub fn clique(seed: u64, n: usize, domain: usize) -> FactorGraph {
    let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    random_graph(seed, &vec![domain; n], &edges)
}

/// Samples from two well separated clusters.
pub fn two_clusters(seed: u64, n: usize) -> Vec<PairFeatures> {
    let mut rng = substream(seed, "bench-clusters");
    (0..n)
        .map(|i| {
            let c = if i % 2 == 0 { 2.0 } else { -2.0 };
            PairFeatures([0; 4].map(|_| c + rng.random_range(-1.0..1.0)))
        })
        .collect()
}

/// Scores with labels drawn from a logistic in the score.
pub fn platt_data(seed: u64, n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut rng = substream(seed, "bench-platt");
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
    let labels = scores
        .iter()
        .map(|s| rng.random::<f64>() < 1.0 / (1.0 + (-2.0 * s + 1.0).exp()))
        .collect();
    (scores, labels)
}
