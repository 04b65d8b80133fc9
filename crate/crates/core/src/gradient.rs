//! Differentiable surrogate of the protection value and its exact gradient.
//!
//! The forward pass runs on the full softmax strategy, whose support is the
//! whole augmented edge structure and hence a single bottom component. For
//! each target `τ` it solves `(I − P_τ) y_τ = c_τ` and forms the damages
//! `L_{τ,ê} = α(τ)(tm(ê) + y_τ(v̂))` of every augmented edge `ê = (û, v̂)`.
//! With `m` the largest damage, held constant under differentiation, the loss is
//!
//! ```text
//! Σ_{τ,ê} Φ_ε(L_{τ,ê})² + β · mean row entropy
//! Φ_ε(t) = 0 for t < m − εm,   1 + (t − m)/(εm) otherwise
//! ```
//!
//! The gradient through the linear systems is computed with one transposed
//! solve per target: `(I − P_τ)ᵀ λ_τ = ∂loss/∂y_τ`, then
//! `∂loss/∂σ(v̂)(ŵ) += λ_τ(v̂) · (tm(v, w) + y_τ(ŵ))` on non-target rows.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::PatrollingGraph;
use crate::linalg::{DenseMatrix, Lu};
use crate::par;
use crate::strategy::{CoefficientMatrix, RegularStrategy};

/// Relative residual accepted for the forward and adjoint solves.
const RELATIVE_RESIDUAL_LIMIT: f64 = 1e-8;

/// Piecewise-linear ramp: 0 below `m(1 − ε)`, rising to 1 at `m`. Values of
/// `t` above `m` continue on the same line.
pub fn phi(t: f64, m: f64, eps: f64) -> f64 {
    if t < m - eps * m {
        0.0
    } else {
        1.0 + (t - m) / (eps * m)
    }
}

/// Derivative of [`phi`] in `t`; at the lower kink the ramp side is used.
pub fn phi_slope(t: f64, m: f64, eps: f64) -> f64 {
    if t < m - eps * m {
        0.0
    } else {
        1.0 / (eps * m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// Largest damage of the forward strategy (the stop-gradient `m`).
    pub hard_max: f64,
    /// `Σ Φ_ε(L)²`
    pub soft_loss: f64,
    /// Mean row entropy in nats.
    pub entropy: f64,
    /// `β · entropy`
    pub entropy_term: f64,
    pub total: f64,
    /// Damages of every (target, augmented edge) pair, target-major.
    #[serde(skip)]
    pub damages: Vec<f64>,
    /// `Φ_ε` of each entry of `damages`.
    pub phi: Vec<f64>,
}

impl LossBreakdown {
    fn assemble(damages: Vec<f64>, m: f64, eps: f64, beta: f64, entropy: f64) -> Self {
        let phi: Vec<f64> = damages.iter().map(|&t| phi(t, m, eps)).collect();
        let soft_loss = phi.iter().map(|p| p * p).sum();
        let entropy_term = beta * entropy;
        Self {
            hard_max: m,
            soft_loss,
            entropy,
            entropy_term,
            total: soft_loss + entropy_term,
            damages,
            phi,
        }
    }
}

/// Loss over already computed damages of a full-support strategy.
///
/// `damages` are the damages of every (target, edge) pair of the single bottom
/// component; any infinite entry means the support was not full and is
/// rejected.
pub fn loss(
    sigma: &RegularStrategy,
    damages: &crate::evaluator::ComponentDamages,
    eps: f64,
    beta: f64,
) -> Result<LossBreakdown> {
    let flat = damages
        .targets
        .iter()
        .flat_map(|t| t.damages.iter())
        .map(|d| {
            d.finite().ok_or_else(|| {
                Error::InvalidArgument("infinite damage in the forward pass: support is not full".into())
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LossBreakdown::assemble(flat, m, eps, beta, sigma.entropy()))
}

/// Gradient of the loss with respect to the coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    rows: Vec<Vec<f64>>,
}

impl GradientMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn zeros_like(theta: &CoefficientMatrix) -> Self {
        Self {
            rows: theta.rows().iter().map(|r| vec![0.0; r.len()]).collect(),
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.rows
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().flatten().copied()
    }

    /// Entry-wise `self += other`.
    pub fn add_assign(&mut self, other: &GradientMatrix) {
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

struct TargetSolve {
    target: usize,
    alpha: f64,
    lu: Lu,
    y: Vec<f64>,
}

struct Forward {
    sigma: RegularStrategy,
    solves: Vec<TargetSolve>,
    breakdown: LossBreakdown,
}

/// `(I − P_τ) x` using the sparse strategy rows.
fn apply(sigma: &RegularStrategy, target: usize, x: &[f64]) -> Vec<f64> {
    let space = sigma.space();
    (0..space.len())
        .map(|u| {
            if space.base(u) == target {
                return x[u];
            }
            let px: f64 = space
                .successors(u)
                .iter()
                .zip(sigma.row(u))
                .map(|(s, &p)| p * x[s.to])
                .sum();
            x[u] - px
        })
        .collect()
}

/// `(I − P_τ)ᵀ x`
fn apply_transposed(sigma: &RegularStrategy, target: usize, x: &[f64]) -> Vec<f64> {
    let space = sigma.space();
    let mut out = x.to_vec();
    for u in 0..space.len() {
        if space.base(u) == target || x[u] == 0.0 {
            continue;
        }
        for (s, &p) in space.successors(u).iter().zip(sigma.row(u)) {
            out[s.to] -= p * x[u];
        }
    }
    out
}

fn refine(solve: impl Fn(&[f64]) -> Vec<f64>, apply: impl Fn(&[f64]) -> Vec<f64>, b: &[f64]) -> (Vec<f64>, f64) {
    let mut x = solve(b);
    let r: Vec<f64> = b.iter().zip(apply(&x)).map(|(bi, ax)| bi - ax).collect();
    x.iter_mut().zip(solve(&r)).for_each(|(xi, d)| *xi += d);
    let res = apply(&x)
        .iter()
        .zip(b)
        .map(|(ax, bi)| (ax - bi).abs())
        .fold(0.0, f64::max);
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    (x, res / scale)
}

fn solve_target(sigma: &RegularStrategy, g: &PatrollingGraph, target: usize) -> Result<TargetSolve> {
    let space = sigma.space();
    let n = space.len();
    let mut a = DenseMatrix::identity(n);
    let mut c = vec![0.0; n];
    for u in 0..n {
        if space.base(u) == target {
            continue;
        }
        for (s, &p) in space.successors(u).iter().zip(sigma.row(u)) {
            a[(u, s.to)] -= p;
            c[u] += p * s.time as f64;
        }
    }
    let fail = |residual| Error::Conditioning {
        component: 0,
        target: g.name(target).to_owned(),
        residual,
    };
    let lu = Lu::factor(a).map_err(|s| fail(s.pivot))?;
    let (y, residual) = refine(|b| lu.solve(b), |x| apply(sigma, target, x), &c);
    if !(residual <= RELATIVE_RESIDUAL_LIMIT) {
        return Err(fail(residual));
    }
    Ok(TargetSolve {
        target,
        alpha: g.cost(target).expect("target cost"),
        lu,
        y,
    })
}

fn forward(
    theta: &CoefficientMatrix,
    g: &PatrollingGraph,
    eps: f64,
    beta: f64,
    fixed_max: Option<f64>,
) -> Result<Forward> {
    if theta.space().memory().len() != g.vertex_count() {
        return Err(Error::InvalidArgument(
            "coefficients were built for a different graph".into(),
        ));
    }
    let sigma = theta.softmax();
    let space = sigma.space();
    let solves = par::map(g.targets(), |&t| solve_target(&sigma, g, t))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut damages = Vec::with_capacity(solves.len() * space.edge_count());
    for ts in &solves {
        for u in 0..space.len() {
            for s in space.successors(u) {
                damages.push(ts.alpha * (s.time as f64 + ts.y[s.to]));
            }
        }
    }
    let m = fixed_max.unwrap_or_else(|| damages.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let breakdown = LossBreakdown::assemble(damages, m, eps, beta, sigma.entropy());
    Ok(Forward {
        sigma,
        solves,
        breakdown,
    })
}

/// Loss of `softmax(theta)`. With `fixed_max` the ramp uses the given `m`
/// instead of the current hard maximum, which makes the function seen by a
/// finite-difference probe identical to the one differentiated by [`grad`].
pub fn surrogate_loss(
    theta: &CoefficientMatrix,
    g: &PatrollingGraph,
    eps: f64,
    beta: f64,
    fixed_max: Option<f64>,
) -> Result<LossBreakdown> {
    Ok(forward(theta, g, eps, beta, fixed_max)?.breakdown)
}

/// Loss and its exact gradient with respect to `theta`.
pub fn grad(
    theta: &CoefficientMatrix,
    g: &PatrollingGraph,
    eps: f64,
    beta: f64,
) -> Result<(LossBreakdown, GradientMatrix)> {
    let fw = forward(theta, g, eps, beta, None)?;
    let sigma = &fw.sigma;
    let space = sigma.space();
    let n = space.len();
    let edges = space.edge_count();
    let m = fw.breakdown.hard_max;

    // ∂loss/∂σ from the damage terms, one target at a time.
    let jobs: Vec<usize> = (0..fw.solves.len()).collect();
    let per_target = par::map(&jobs, |&ti| -> Result<Option<Vec<f64>>> {
        let ts = &fw.solves[ti];
        let mut gy = vec![0.0; n];
        let mut k = ti * edges;
        for u in 0..n {
            for s in space.successors(u) {
                let t = fw.breakdown.damages[k];
                let dl = 2.0 * phi(t, m, eps) * phi_slope(t, m, eps);
                gy[s.to] += ts.alpha * dl;
                k += 1;
            }
        }
        if gy.iter().all(|&x| x == 0.0) {
            return Ok(None);
        }
        let (lambda, residual) = refine(
            |b| ts.lu.solve_transposed(b),
            |x| apply_transposed(sigma, ts.target, x),
            &gy,
        );
        if !(residual <= RELATIVE_RESIDUAL_LIMIT) {
            return Err(Error::Conditioning {
                component: 0,
                target: g.name(ts.target).to_owned(),
                residual,
            });
        }
        let mut dsigma = Vec::with_capacity(edges);
        for u in 0..n {
            let non_target = space.base(u) != ts.target;
            for s in space.successors(u) {
                dsigma.push(if non_target {
                    lambda[u] * (s.time as f64 + ts.y[s.to])
                } else {
                    0.0
                });
            }
        }
        Ok(Some(dsigma))
    });

    let mut dsigma = vec![0.0; edges];
    for contribution in per_target {
        if let Some(c) = contribution? {
            dsigma.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
    }

    // Entropy term and softmax backpropagation.
    let inv_rows = 1.0 / n as f64;
    let mut rows = Vec::with_capacity(n);
    let mut k = 0;
    for u in 0..n {
        let p = sigma.row(u);
        let d: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(i, &pi)| {
                let entropy = if pi > 0.0 { -(pi.ln() + 1.0) * inv_rows } else { 0.0 };
                dsigma[k + i] + beta * entropy
            })
            .collect();
        k += p.len();
        let mean: f64 = p.iter().zip(&d).map(|(pi, di)| pi * di).sum();
        rows.push(p.iter().zip(&d).map(|(pi, di)| pi * (di - mean)).collect());
    }

    Ok((fw.breakdown, GradientMatrix { rows }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::evaluate;
    use crate::fixtures;
    use crate::strategy::{AugmentedSpace, MemoryMap};
    use std::sync::Arc;

    #[test]
    fn phi_examples() {
        assert_eq!(phi(10.0, 10.0, 0.3), 1.0);
        assert!(phi(10.0 * 0.7, 10.0, 0.3).abs() < 1e-15);
        assert!((phi(10.0 * (1.0 - 0.15), 10.0, 0.3) - 0.5).abs() < 1e-12);
        assert_eq!(phi(6.0, 10.0, 0.3), 0.0);
        assert_eq!(phi_slope(6.0, 10.0, 0.3), 0.0);
        assert!((phi_slope(7.0, 10.0, 0.3) - 1.0 / 3.0).abs() < 1e-15);
    }

    fn fork_theta(mem_v: usize, seed: u64) -> (PatrollingGraph, CoefficientMatrix) {
        let g = fixtures::weighted_fork_graph();
        let mem = MemoryMap::uniform(&g, 1).with(1, mem_v);
        let space = Arc::new(AugmentedSpace::new(&g, mem).unwrap());
        (g, CoefficientMatrix::random_init(space, seed))
    }

    #[test]
    fn forward_damages_match_evaluator() {
        let (g, theta) = fork_theta(2, 4);
        let sigma = theta.softmax();
        let report = evaluate(&sigma, &g).unwrap();
        assert_eq!(report.components.len(), 1);
        let from_eval = loss(&sigma, &report.components[0], 0.3, 0.2).unwrap();
        let direct = surrogate_loss(&theta, &g, 0.3, 0.2, None).unwrap();
        assert!((from_eval.hard_max - direct.hard_max).abs() < 1e-10);
        assert!((from_eval.total - direct.total).abs() < 1e-9);
        assert!((direct.hard_max - report.value.to_f64()).abs() < 1e-10);
    }

    #[test]
    fn alternating_loop_band() {
        // Attacks as the walk leaves a target cost 2, attacks on the edge
        // into the target cost 1 and fall below the band.
        let g = fixtures::two_target_graph();
        let sigma = fixtures::alternating_loop();
        let report = evaluate(&sigma, &g).unwrap();
        let l = loss(&sigma, &report.components[0], 0.3, 0.0).unwrap();
        assert_eq!(l.soft_loss, 2.0);
        assert_eq!(l.total, l.soft_loss);
    }

    #[test]
    fn only_band_edges_count() {
        let (g, theta) = fork_theta(2, 9);
        let l = surrogate_loss(&theta, &g, 0.3, 0.0, None).unwrap();
        let m = l.hard_max;
        let expected: f64 = l
            .damages
            .iter()
            .filter(|&&t| t > 0.7 * m)
            .map(|&t| phi(t, m, 0.3).powi(2))
            .sum();
        assert!((l.soft_loss - expected).abs() < 1e-12);
        assert!(l.phi.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(l.phi.contains(&1.0));
    }

    #[test]
    fn infinite_forward_damage_is_rejected() {
        let g = fixtures::weighted_fork_graph();
        let s = fixtures::memory_fork();
        let mut report = evaluate(&s, &g).unwrap();
        report.components[0].targets[0].damages[0] = crate::Damage::Infinite;
        assert!(loss(&s, &report.components[0], 0.3, 0.2).is_err());
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let (g, theta) = fork_theta(3, 2);
        let (_, gm) = grad(&theta, &g, 0.3, 0.2).unwrap();
        for row in gm.rows() {
            assert!(row.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (g, theta) = fork_theta(2, 5);
        let (l, gm) = grad(&theta, &g, 0.3, 0.2).unwrap();
        let h = 1e-5;
        for (u, row) in theta.rows().iter().enumerate() {
            for k in 0..row.len() {
                let mut plus = theta.clone();
                plus.rows_mut()[u][k] += h;
                let mut minus = theta.clone();
                minus.rows_mut()[u][k] -= h;
                let fp = surrogate_loss(&plus, &g, 0.3, 0.2, Some(l.hard_max)).unwrap().total;
                let fm = surrogate_loss(&minus, &g, 0.3, 0.2, Some(l.hard_max)).unwrap().total;
                let fd = (fp - fm) / (2.0 * h);
                let a = gm.rows()[u][k];
                assert!((a - fd).abs() <= 1e-6 * a.abs().max(1.0), "{u},{k}: {a} vs {fd}");
            }
        }
    }
}
