//! Small hand-analysable instances with known values, shared by tests,
//! the CLI and the browser demo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::PatrollingGraph;
use crate::strategy::{AugLabel, MemoryMap, RegularStrategy};

fn label(name: &str, m: usize) -> AugLabel {
    AugLabel(name.to_owned(), m)
}

/// Two targets `t1`, `t2` of cost 1, joined both ways and each with a
/// self-loop; every edge takes one time unit.
pub fn two_target_graph() -> PatrollingGraph {
    PatrollingGraph::new(
        &["t1", "t2"],
        &[("t1", 1.0), ("t2", 1.0)],
        &[("t1", "t2", 1), ("t2", "t1", 1), ("t1", "t1", 1), ("t2", "t2", 1)],
    )
    .expect("fixture graph")
}

/// `t1 ⇄ v ⇄ t2` with costs α(t1) = 1, α(t2) = 2 and unit times.
pub fn weighted_fork_graph() -> PatrollingGraph {
    PatrollingGraph::new(
        &["t1", "v", "t2"],
        &[("t1", 1.0), ("t2", 2.0)],
        &[("t1", "v", 1), ("v", "t1", 1), ("v", "t2", 1), ("t2", "v", 1)],
    )
    .expect("fixture graph")
}

/// Deterministic `t1 → t2 → t1` loop on [`two_target_graph`]. Value 2.
pub fn alternating_loop() -> RegularStrategy {
    let g = two_target_graph();
    RegularStrategy::from_entries(
        &g,
        MemoryMap::uniform(&g, 1),
        &[
            (label("t1", 1), label("t2", 1), 1.0),
            (label("t2", 1), label("t1", 1), 1.0),
        ],
    )
    .expect("fixture strategy")
}

/// On [`two_target_graph`], stay put with probability `stay`, otherwise
/// switch target. For `stay = 0.99` the expected time to reach the other
/// target is 100.
pub fn lazy_loop(stay: f64) -> RegularStrategy {
    let g = two_target_graph();
    RegularStrategy::from_entries(
        &g,
        MemoryMap::uniform(&g, 1),
        &[
            (label("t1", 1), label("t1", 1), stay),
            (label("t1", 1), label("t2", 1), 1.0 - stay),
            (label("t2", 1), label("t2", 1), stay),
            (label("t2", 1), label("t1", 1), 1.0 - stay),
        ],
    )
    .expect("fixture strategy")
}

/// Probability of heading to `t1` that balances the two worst attacks of
/// [`memoryless_fork`]: the smaller root of `p² − 7p + 2 = 0`.
pub fn balanced_fork_probability() -> f64 {
    (7.0 - 41f64.sqrt()) / 2.0
}

/// Memoryless strategy on [`weighted_fork_graph`]: from `v` go to `t1` with
/// probability `p` and to `t2` otherwise; targets return to `v`. Its value
/// is `2 + (2 − p)/p` at the balanced probability.
pub fn memoryless_fork(p: f64) -> RegularStrategy {
    let g = weighted_fork_graph();
    RegularStrategy::from_entries(
        &g,
        MemoryMap::uniform(&g, 1),
        &[
            (label("t1", 1), label("v", 1), 1.0),
            (label("t2", 1), label("v", 1), 1.0),
            (label("v", 1), label("t1", 1), p),
            (label("v", 1), label("t2", 1), 1.0 - p),
        ],
    )
    .expect("fixture strategy")
}

/// Two memory elements at `v`: coming from `t1` (element 1) always continue
/// to `t2`; coming from `t2` (element 2) pick either target uniformly.
/// Value 6.
pub fn memory_fork() -> RegularStrategy {
    let g = weighted_fork_graph();
    let mem = MemoryMap::uniform(&g, 1).with(1, 2);
    RegularStrategy::from_entries(
        &g,
        mem,
        &[
            (label("t1", 1), label("v", 1), 1.0),
            (label("v", 1), label("t2", 1), 1.0),
            (label("t2", 1), label("v", 2), 1.0),
            (label("v", 2), label("t1", 1), 0.5),
            (label("v", 2), label("t2", 1), 0.5),
        ],
    )
    .expect("fixture strategy")
}

/// Seeded random strongly connected graph with 2 to `max_vertices` vertices
/// and a random memory map with sizes up to `max_mem`. A Hamiltonian cycle
/// guarantees strong connectivity; other edges appear with probability 0.3.
/// Times lie in 1..=3, costs in [0.5, 3) and at least one vertex is a target.
pub fn random_instance(seed: u64, max_vertices: usize, max_mem: usize) -> (PatrollingGraph, MemoryMap) {
    assert!(max_vertices >= 2 && max_mem >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_vertices);
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if v == (u + 1) % n || (u != v && rng.random_bool(0.3)) {
                edges.push((names[u].clone(), names[v].clone(), rng.random_range(1..=3u32)));
            }
        }
    }
    let mut targets: Vec<(String, f64)> = Vec::new();
    for v in &names {
        if rng.random_bool(0.5) {
            targets.push((v.clone(), rng.random_range(0.5..3.0)));
        }
    }
    if targets.is_empty() {
        targets.push((names[0].clone(), 1.0));
    }
    let g = PatrollingGraph::new(&names, &targets, &edges).expect("random graph");
    let mem = MemoryMap::from_vec((0..n).map(|_| rng.random_range(1..=max_mem)).collect()).expect("sizes ≥ 1");
    (g, mem)
}
