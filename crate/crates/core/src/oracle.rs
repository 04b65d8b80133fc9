//! Independent cross-checks for the evaluator: fixed-point iteration of the
//! hitting-time equations, Monte Carlo simulation of the Defender walk, and
//! exhaustive search over deterministic strategies of small instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluator::{evaluate, Damage};
use crate::gradient::{grad, surrogate_loss};
use crate::graph::PatrollingGraph;
use crate::strategy::{AugmentedSpace, CoefficientMatrix, MemoryMap, RegularStrategy};
use std::sync::Arc;

/// Expected hitting times of `target` from each augmented vertex of `members`
/// by Jacobi iteration, in the order of `members`. Stops when the largest
/// update falls below `tol`.
pub fn value_iteration_hitting(
    sigma: &RegularStrategy,
    members: &[usize],
    target: usize,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    let space = sigma.space();
    let mut local = vec![usize::MAX; space.len()];
    for (i, &a) in members.iter().enumerate() {
        local[a] = i;
    }
    let mut y = vec![0.0; members.len()];
    for _ in 0..max_iters {
        let mut next = vec![0.0; members.len()];
        let mut delta = 0.0f64;
        for (i, &u) in members.iter().enumerate() {
            if space.base(u) == target {
                continue;
            }
            let mut s = 0.0;
            for (succ, &p) in space.successors(u).iter().zip(sigma.row(u)) {
                if p > 0.0 {
                    let j = local[succ.to];
                    if j == usize::MAX {
                        return Err(Error::InvalidArgument(
                            "members are not closed under the strategy".into(),
                        ));
                    }
                    s += p * (succ.time as f64 + y[j]);
                }
            }
            next[i] = s;
            delta = delta.max((s - y[i]).abs());
        }
        y = next;
        if delta < tol {
            return Ok(y);
        }
    }
    Err(Error::NoConvergence(max_iters))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    /// Walks stopped at the horizon before reaching the target.
    pub truncated: usize,
}

impl MonteCarloEstimate {
    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

/// Samples the damage of attacking `target` when the Defender has just
/// started traversing `edge` (a pair of augmented indices). Each sample walks
/// from the head of the edge until a copy of `target` is entered. Walks whose
/// elapsed time exceeds the horizon are dropped from the mean and counted in
/// `truncated`. Without an explicit horizon a pilot of 1000 walks picks
/// 100 times the longest pilot walk.
pub fn monte_carlo_damage(
    sigma: &RegularStrategy,
    g: &PatrollingGraph,
    edge: (usize, usize),
    target: usize,
    samples: usize,
    horizon: Option<u64>,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    let space = sigma.space();
    let (from, to) = edge;
    let slot = space
        .successor_slot(from, to)
        .ok_or_else(|| Error::InvalidArgument(format!("no augmented edge {from} -> {to}")))?;
    let alpha = g
        .cost(target)
        .ok_or_else(|| Error::InvalidArgument(format!("vertex {} is not a target", g.name(target))))?;
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is needed".into()));
    }
    let first = space.successors(from)[slot].time as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);

    let horizon = match horizon {
        Some(h) => h,
        None => {
            let mut longest = 0;
            for _ in 0..PILOT_WALKS {
                if let Some(t) = walk(sigma, to, target, PILOT_CAP, &mut rng) {
                    longest = longest.max(t);
                }
            }
            100 * longest.max(1)
        }
    };

    // Welford running mean and variance over the completed walks.
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    let mut done = 0usize;
    for _ in 0..samples {
        let Some(elapsed) = walk(sigma, to, target, horizon, &mut rng) else {
            continue;
        };
        done += 1;
        let x = alpha * (first + elapsed) as f64;
        let d = x - mean;
        mean += d / done as f64;
        m2 += d * (x - mean);
    }
    let var = if done > 1 { m2 / (done - 1) as f64 } else { 0.0 };
    Ok(MonteCarloEstimate {
        mean: if done > 0 { mean } else { f64::INFINITY },
        std_error: if done > 0 {
            (var / done as f64).sqrt()
        } else {
            f64::INFINITY
        },
        samples: done,
        truncated: samples - done,
    })
}

const PILOT_WALKS: usize = 1000;
const PILOT_CAP: u64 = 10_000_000;

/// Elapsed time from `start` until a copy of `target` is entered, or `None`
/// past `horizon`.
fn walk(sigma: &RegularStrategy, start: usize, target: usize, horizon: u64, rng: &mut ChaCha8Rng) -> Option<u64> {
    let space = sigma.space();
    let mut at = start;
    let mut elapsed = 0u64;
    while space.base(at) != target {
        if elapsed > horizon {
            return None;
        }
        let u: f64 = rng.random();
        let row = sigma.row(at);
        let mut acc = 0.0;
        let mut pick = row.len() - 1;
        for (i, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        // Rounding can leave `u` past the last positive entry.
        while row[pick] == 0.0 {
            pick -= 1;
        }
        let s = &space.successors(at)[pick];
        elapsed += s.time as u64;
        at = s.to;
    }
    Some(elapsed)
}

/// Outcome of comparing the adjoint gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck {
    /// Largest `|adjoint − fd| / max(|adjoint|, 1e−3·‖adjoint‖∞, 1e−12)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±h perturbation moved a damage across the lower
    /// edge of the Φ ramp, where the loss is not differentiable.
    pub skipped: usize,
}

/// Central differences of the surrogate loss with the hard maximum frozen at
/// its unperturbed value, against [`grad`](crate::gradient::grad).
pub fn gradient_check(
    theta: &CoefficientMatrix,
    g: &PatrollingGraph,
    eps: f64,
    beta: f64,
    h: f64,
) -> Result<GradientCheck> {
    let (base, adjoint) = grad(theta, g, eps, beta)?;
    let m = base.hard_max;
    let lower = m - eps * m;
    let band = |d: &[f64]| d.iter().map(|&t| t >= lower).collect::<Vec<bool>>();
    let inside = band(&base.damages);
    let scale = adjoint.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut check = GradientCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (u, row) in theta.rows().iter().enumerate() {
        for k in 0..row.len() {
            let mut plus = theta.clone();
            plus.rows_mut()[u][k] += h;
            let mut minus = theta.clone();
            minus.rows_mut()[u][k] -= h;
            let fp = surrogate_loss(&plus, g, eps, beta, Some(m))?;
            let fm = surrogate_loss(&minus, g, eps, beta, Some(m))?;
            if band(&fp.damages) != inside || band(&fm.damages) != inside {
                check.skipped += 1;
                continue;
            }
            let fd = (fp.total - fm.total) / (2.0 * h);
            let a = adjoint.rows()[u][k];
            let rel = (a - fd).abs() / a.abs().max(1e-3 * scale).max(1e-12);
            check.max_rel_error = check.max_rel_error.max(rel);
            check.checked += 1;
        }
    }
    Ok(check)
}

pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone)]
pub struct EnumerationResult {
    pub value: Damage,
    pub strategy: RegularStrategy,
    pub count: u128,
}

/// Number of deterministic strategies over the augmented space.
pub fn deterministic_count(space: &AugmentedSpace) -> u128 {
    (0..space.len())
        .map(|a| space.successors(a).len() as u128)
        .fold(1u128, |acc, k| acc.saturating_mul(k))
}

/// Evaluates every deterministic strategy and returns the first one with the
/// smallest value. Refuses instances with more than [`ENUMERATION_LIMIT`]
/// strategies.
pub fn enumerate_deterministic(g: &PatrollingGraph, mem: MemoryMap) -> Result<EnumerationResult> {
    let space = Arc::new(AugmentedSpace::new(g, mem)?);
    let count = deterministic_count(&space);
    if count > ENUMERATION_LIMIT {
        return Err(Error::TooLarge(count));
    }
    let radix: Vec<usize> = (0..space.len()).map(|a| space.successors(a).len()).collect();
    let mut choice = vec![0usize; space.len()];
    let mut best: Option<(Damage, RegularStrategy)> = None;
    loop {
        let sigma = RegularStrategy::deterministic(space.clone(), &choice);
        let v = evaluate(&sigma, g)?.value;
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, sigma));
        }
        // Odometer increment, least significant digit first.
        let mut i = 0;
        loop {
            if i == choice.len() {
                let (value, strategy) = best.expect("at least one strategy");
                return Ok(EnumerationResult { value, strategy, count });
            }
            choice[i] += 1;
            if choice[i] < radix[i] {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{bottom_sccs, solve_hitting};
    use crate::fixtures;

    #[test]
    fn value_iteration_matches_lazy_loop() {
        let sigma = fixtures::lazy_loop(0.99);
        let g = fixtures::two_target_graph();
        let t2 = g.vertex_index("t2").unwrap();
        let members: Vec<usize> = (0..sigma.space().len()).collect();
        let y = value_iteration_hitting(&sigma, &members, t2, 1e-10, 1_000_000).unwrap();
        let t1 = sigma.space().index(g.vertex_index("t1").unwrap(), 1).unwrap();
        assert!((y[t1] - 100.0).abs() < 1e-6);
    }

    #[test]
    fn value_iteration_agrees_with_linear_solve() {
        let g = fixtures::weighted_fork_graph();
        let sigma = fixtures::memoryless_fork(0.3);
        let bscc = bottom_sccs(&sigma.support_graph());
        let members = bscc.bottom()[0].to_vec();
        for &t in g.targets() {
            let exact = solve_hitting(&sigma, &g, 0, &members, t).unwrap();
            let vi = value_iteration_hitting(&sigma, &members, t, 1e-12, 1_000_000).unwrap();
            for (i, &a) in members.iter().enumerate() {
                let e = exact.get(a).unwrap().to_f64();
                assert!((e - vi[i]).abs() < 1e-8 * e.max(1.0), "{e} vs {}", vi[i]);
            }
        }
    }

    #[test]
    fn value_iteration_reports_non_convergence() {
        let sigma = fixtures::lazy_loop(0.999);
        let g = fixtures::two_target_graph();
        let members: Vec<usize> = (0..sigma.space().len()).collect();
        let r = value_iteration_hitting(&sigma, &members, g.vertex_index("t2").unwrap(), 1e-12, 10);
        assert!(matches!(r, Err(Error::NoConvergence(10))));
    }

    #[test]
    fn monte_carlo_matches_memory_fork_damage() {
        let g = fixtures::weighted_fork_graph();
        let sigma = fixtures::memory_fork();
        let sp = sigma.space();
        let v = g.vertex_index("v").unwrap();
        let t2 = g.vertex_index("t2").unwrap();
        let from = sp.index(t2, 1).unwrap();
        let to = sp.index(v, 2).unwrap();
        // Damage of attacking t2 as the Defender leaves it: 2·(1 + 2).
        let est = monte_carlo_damage(&sigma, &g, (from, to), t2, 20_000, None, 5).unwrap();
        assert_eq!(est.truncated, 0);
        assert!(est.agrees_with(6.0, 4.0), "{est:?}");
    }

    #[test]
    fn edge_into_target_has_no_variance() {
        let g = fixtures::weighted_fork_graph();
        let sigma = fixtures::memory_fork();
        let sp = sigma.space();
        let e = (sp.index(1, 1).unwrap(), sp.index(2, 1).unwrap());
        let est = monte_carlo_damage(&sigma, &g, e, 2, 100, None, 0).unwrap();
        assert_eq!((est.mean, est.std_error, est.truncated), (2.0, 0.0, 0));
    }

    #[test]
    fn truncated_walks_are_excluded() {
        let g = fixtures::two_target_graph();
        let sigma = fixtures::lazy_loop(0.99);
        let e = (0, 0);
        let est = monte_carlo_damage(&sigma, &g, e, 1, 2000, Some(5), 4).unwrap();
        assert!(est.truncated > 0);
        assert_eq!(est.samples + est.truncated, 2000);
        assert!(est.mean <= 1.0 * (1.0 + 5.0 + 1.0));
    }

    #[test]
    fn monte_carlo_is_seeded() {
        let g = fixtures::weighted_fork_graph();
        let sigma = fixtures::memoryless_fork(0.4);
        let sp = sigma.space();
        let e = (sp.index(1, 1).unwrap(), sp.index(0, 1).unwrap());
        let a = monte_carlo_damage(&sigma, &g, e, 2, 500, Some(1000), 9).unwrap();
        let b = monte_carlo_damage(&sigma, &g, e, 2, 500, Some(1000), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn enumeration_reference_values() {
        let g = fixtures::weighted_fork_graph();
        let v = g.vertex_index("v").unwrap();
        let with_memory = enumerate_deterministic(&g, MemoryMap::uniform(&g, 1).with(v, 2)).unwrap();
        assert_eq!(with_memory.value, Damage::Finite(8.0));
        assert_eq!(with_memory.count, 16);
        let without = enumerate_deterministic(&g, MemoryMap::uniform(&g, 1)).unwrap();
        assert_eq!(without.value, Damage::Infinite);
        let two = fixtures::two_target_graph();
        let r = enumerate_deterministic(&two, MemoryMap::uniform(&two, 1)).unwrap();
        assert_eq!(r.value, Damage::Finite(2.0));
    }

    #[test]
    fn gradient_check_on_random_instances() {
        for seed in 0..5 {
            let (g, mem) = fixtures::random_instance(seed, 6, 2);
            let space = Arc::new(AugmentedSpace::new(&g, mem).unwrap());
            let theta = CoefficientMatrix::random_init(space, seed);
            let c = gradient_check(&theta, &g, 0.3, 0.2, 1e-5).unwrap();
            assert!(c.checked > 0);
            assert!(c.max_rel_error <= 1e-4, "seed {seed}: {c:?}");
        }
    }

    #[test]
    fn enumeration_refuses_large_instances() {
        let g = crate::graph::gen_grid(10, 1).unwrap();
        let r = enumerate_deterministic(&g, MemoryMap::uniform(&g, 6));
        assert!(matches!(r, Err(Error::TooLarge(_))));
    }
}
