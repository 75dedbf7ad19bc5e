//! Deterministic synthetic datasets for benchmarks and validation
//! sweeps. All randomness flows through a counter-based generator so
//! the same seed reproduces the same graphs on any platform.

use gntk::graph::{random_dataset, Dataset, Graph};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `n` random graphs with `num_nodes` nodes each, edge probability 0.3
/// and 8-dimensional positive features.
pub fn synthetic_dataset(n: usize, num_nodes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_dataset(&mut rng, n, num_nodes, 0.3, 8)
}

/// Random dataset with feature norms damped by `scale`. Backend
/// equivalence checks compare at an absolute tolerance, so the sweep
/// keeps kernel magnitudes small.
pub fn damped_dataset(
    n: usize,
    num_nodes: usize,
    edge_prob: f64,
    feature_dim: usize,
    scale: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = random_dataset(&mut rng, n, num_nodes, edge_prob, feature_dim);
    let graphs = ds
        .graphs
        .iter()
        .map(|g| {
            Graph::new(g.adjacency().clone(), g.features().scale(scale), g.label())
                .expect("scaling preserves validity")
        })
        .collect();
    Dataset::new(ds.name.clone(), graphs).expect("uniform dims")
}
