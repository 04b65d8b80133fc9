//! Strategy synthesis: softmax forward pass, adjoint gradient, decaying
//! gradient noise and Adam updates, with the cut strategy evaluated after
//! every step and the best one kept.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{evaluate, Damage};
use crate::gradient::{grad, surrogate_loss, GradientMatrix};
use crate::graph::PatrollingGraph;
use crate::strategy::{AugmentedSpace, CoefficientMatrix, MemoryMap, RegularStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub steps: usize,
    /// Width of the Φ ramp relative to the hard maximum.
    pub eps: f64,
    /// Weight of the mean row entropy.
    pub beta: f64,
    pub learning_rate: f64,
    pub cutoff_threshold: f64,
    pub rounding_threshold: f64,
    /// Standard deviation of the gradient noise at step 0.
    pub noise_std0: f64,
    /// Per-step geometric decay of the noise standard deviation.
    pub noise_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            eps: 0.3,
            beta: 0.2,
            learning_rate: 0.5,
            cutoff_threshold: 0.1,
            rounding_threshold: 0.001,
            noise_std0: 0.05,
            noise_decay: 0.95,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_owned()));
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad("eps must lie in (0, 1)");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be nonnegative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.cutoff_threshold) || !(0.0..0.5).contains(&self.rounding_threshold) {
            return bad("thresholds must lie in [0, 1) (rounding below 0.5)");
        }
        if !(self.noise_std0 >= 0.0) || !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return bad("noise std must be ≥ 0 and decay in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam constants out of range");
        }
        Ok(())
    }

    /// Noise standard deviation at a 0-based step.
    pub fn noise_std(&self, step: usize) -> f64 {
        self.noise_std0 * self.noise_decay.powi(step as i32)
    }
}

/// Adam moment accumulators with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(theta: &CoefficientMatrix, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = theta.rows().iter().map(|r| vec![0.0; r.len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            first: zeros.clone(),
            second: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, theta: &mut CoefficientMatrix, grad: &GradientMatrix, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (u, row) in theta.rows_mut().iter_mut().enumerate() {
            for (k, x) in row.iter_mut().enumerate() {
                let g = grad.rows()[u][k];
                let m = &mut self.first[u][k];
                let v = &mut self.second[u][k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// I.i.d. Gaussian noise shaped like `theta` with the configured standard
/// deviation for `step`.
pub fn noise(theta: &CoefficientMatrix, step: usize, cfg: &OptimizerConfig, rng: &mut ChaCha8Rng) -> GradientMatrix {
    let std = cfg.noise_std(step);
    let mut out = GradientMatrix::zeros_like(theta);
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("finite std");
        for row in out.rows_mut() {
            row.iter_mut().for_each(|x| *x = normal.sample(rng));
        }
    }
    out
}

/// One row of the convergence trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    /// Surrogate loss (including the entropy term) of the forward pass.
    pub loss: f64,
    /// Hard maximum damage of the forward pass.
    pub hard_max: f64,
    /// Value of the cut and rounded strategy after the update.
    pub eval_value: Damage,
    pub unambiguous: bool,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub best_strategy: RegularStrategy,
    pub best_value: Damage,
    pub best_step: usize,
    pub trace: Vec<TraceRecord>,
    pub final_coefficients: CoefficientMatrix,
}

pub const TRACE_HEADER: &str = "step,loss,hard_max,eval_value,unambiguous";

impl SynthesisResult {
    /// Trace as CSV with header `step,loss,hard_max,eval_value,unambiguous`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.step, r.loss, r.hard_max, r.eval_value, r.unambiguous
            );
        }
        s
    }
}

/// Stepwise driver of the synthesis loop.
pub struct Synthesizer<'g> {
    graph: &'g PatrollingGraph,
    cfg: OptimizerConfig,
    theta: CoefficientMatrix,
    adam: Adam,
    noise_rng: ChaCha8Rng,
    step: usize,
    trace: Vec<TraceRecord>,
    best: Option<(Damage, usize, RegularStrategy)>,
}

impl<'g> Synthesizer<'g> {
    pub fn new(g: &'g PatrollingGraph, mem: MemoryMap, cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        g.validate().into_result()?;
        let space = Arc::new(AugmentedSpace::new(g, mem)?);
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let theta = CoefficientMatrix::random_with(space, &mut init_rng);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise_rng.set_stream(1);
        let adam = Adam::new(&theta, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        Ok(Self {
            graph: g,
            cfg,
            theta,
            adam,
            noise_rng,
            step: 0,
            trace: Vec::new(),
            best: None,
        })
    }

    pub fn coefficients(&self) -> &CoefficientMatrix {
        &self.theta
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn best_value(&self) -> Option<Damage> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// The strategy that is evaluated for coefficients `theta`.
    pub fn evaluation_strategy(&self, theta: &CoefficientMatrix) -> RegularStrategy {
        theta
            .softmax()
            .cutoff(self.cfg.cutoff_threshold)
            .round_endpoints(self.cfg.rounding_threshold)
    }

    fn record(&mut self, loss: f64, hard_max: f64) -> Result<()> {
        let sigma = self.evaluation_strategy(&self.theta);
        let report = evaluate(&sigma, self.graph)?;
        self.trace.push(TraceRecord {
            step: self.step,
            loss,
            hard_max,
            eval_value: report.value,
            unambiguous: report.unambiguous,
        });
        let improves = match &self.best {
            None => true,
            Some((v, _, _)) => report.value < *v,
        };
        if improves {
            self.best = Some((report.value, self.step, sigma));
        }
        Ok(())
    }

    /// One optimization step followed by evaluation of the updated strategy.
    pub fn step(&mut self) -> Result<&TraceRecord> {
        let step = self.step;
        let at = move |e: Error| Error::AtStep {
            step,
            source: Box::new(e),
        };
        let (breakdown, mut gradient) = grad(&self.theta, self.graph, self.cfg.eps, self.cfg.beta).map_err(at)?;
        gradient.add_assign(&noise(&self.theta, self.step, &self.cfg, &mut self.noise_rng));
        self.adam.step(&mut self.theta, &gradient, self.cfg.learning_rate);
        self.record(breakdown.total, breakdown.hard_max).map_err(at)?;
        self.step += 1;
        Ok(self.trace.last().expect("just recorded"))
    }

    pub fn finish(mut self) -> Result<SynthesisResult> {
        if self.best.is_none() {
            let l = surrogate_loss(&self.theta, self.graph, self.cfg.eps, self.cfg.beta, None)?;
            self.record(l.total, l.hard_max)?;
        }
        let (best_value, best_step, best_strategy) = self.best.expect("at least one evaluation");
        Ok(SynthesisResult {
            best_strategy,
            best_value,
            best_step,
            trace: self.trace,
            final_coefficients: self.theta,
        })
    }
}

/// Runs `cfg.steps` optimization steps and returns the best evaluated
/// strategy. With zero steps the initial strategy is evaluated once and the
/// trace holds that single record.
pub fn synthesize(g: &PatrollingGraph, mem: MemoryMap, cfg: OptimizerConfig) -> Result<SynthesisResult> {
    let steps = cfg.steps;
    let mut s = Synthesizer::new(g, mem, cfg)?;
    for _ in 0..steps {
        s.step()?;
    }
    s.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn fork_mem(g: &PatrollingGraph) -> MemoryMap {
        MemoryMap::uniform(g, 1).with(g.vertex_index("v").unwrap(), 2)
    }

    #[test]
    fn defaults_match_published_hyperparameters() {
        let c = OptimizerConfig::default();
        assert_eq!((c.eps, c.beta, c.learning_rate), (0.3, 0.2, 0.5));
        assert_eq!((c.cutoff_threshold, c.rounding_threshold), (0.1, 0.001));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let g = fixtures::weighted_fork_graph();
        let space = Arc::new(AugmentedSpace::new(&g, fork_mem(&g)).unwrap());
        let mut theta = CoefficientMatrix::random_init(space, 1);
        let before = theta.clone();
        let mut adam = Adam::new(&theta, 0.9, 0.999, 1e-8);
        let zero = GradientMatrix::zeros_like(&theta);
        for _ in 0..10 {
            adam.step(&mut theta, &zero, 0.5);
        }
        assert_eq!(theta, before);
    }

    #[test]
    fn adam_first_step_has_unit_magnitude() {
        let g = fixtures::weighted_fork_graph();
        let space = Arc::new(AugmentedSpace::new(&g, fork_mem(&g)).unwrap());
        let mut theta = CoefficientMatrix::zeros(space);
        let mut grad = GradientMatrix::zeros_like(&theta);
        grad.rows_mut().iter_mut().flatten().for_each(|x| *x = 3.7);
        let mut adam = Adam::new(&theta, 0.9, 0.999, 1e-8);
        adam.step(&mut theta, &grad, 0.5);
        // m̂ = g, v̂ = g², so the step is lr · g/(|g| + eps).
        for x in theta.iter() {
            assert!((x + 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn noise_schedule() {
        let cfg = OptimizerConfig::default();
        assert!((cfg.noise_std(3) - 0.05 * 0.95f64.powi(3)).abs() < 1e-15);
        assert!(cfg.noise_std(76) >= 1e-3);
        assert!(cfg.noise_std(77) < 1e-3);
        let g = fixtures::weighted_fork_graph();
        let space = Arc::new(AugmentedSpace::new(&g, fork_mem(&g)).unwrap());
        let theta = CoefficientMatrix::zeros(space);
        let quiet = OptimizerConfig { noise_std0: 0.0, ..cfg };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(noise(&theta, 0, &quiet, &mut rng).iter().all(|x| x == 0.0));
    }

    #[test]
    fn zero_steps_evaluates_initial_strategy() {
        let g = fixtures::weighted_fork_graph();
        let cfg = OptimizerConfig {
            steps: 0,
            seed: 3,
            ..Default::default()
        };
        let r = synthesize(&g, fork_mem(&g), cfg.clone()).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.best_step, 0);
        let s = Synthesizer::new(&g, fork_mem(&g), cfg).unwrap();
        let expected = evaluate(&s.evaluation_strategy(s.coefficients()), &g).unwrap();
        assert_eq!(r.best_value, expected.value);
    }

    #[test]
    fn runs_are_reproducible_and_best_is_consistent() {
        let g = fixtures::weighted_fork_graph();
        let cfg = OptimizerConfig {
            steps: 40,
            seed: 8,
            ..Default::default()
        };
        let a = synthesize(&g, fork_mem(&g), cfg.clone()).unwrap();
        let b = synthesize(&g, fork_mem(&g), cfg).unwrap();
        assert_eq!(a.trace_csv(), b.trace_csv());
        assert_eq!(a.trace.len(), 40);
        let min = a
            .trace
            .iter()
            .map(|r| r.eval_value)
            .fold(Damage::Infinite, |m, d| if d < m { d } else { m });
        assert_eq!(a.best_value, min);
        let again = evaluate(&a.best_strategy, &g).unwrap().value;
        assert!((again.to_f64() - a.best_value.to_f64()).abs() <= 1e-9 || again == a.best_value);
    }

    #[test]
    fn loop_without_self_loops_reaches_two() {
        let g = PatrollingGraph::new(
            &["t1", "t2"],
            &[("t1", 1.0), ("t2", 1.0)],
            &[("t1", "t2", 1), ("t2", "t1", 1)],
        )
        .unwrap();
        let cfg = OptimizerConfig {
            steps: 5,
            ..Default::default()
        };
        let r = synthesize(&g, MemoryMap::uniform(&g, 1), cfg).unwrap();
        assert_eq!(r.best_value, Damage::Finite(2.0));
    }

    #[test]
    fn trace_csv_format() {
        let g = fixtures::weighted_fork_graph();
        let cfg = OptimizerConfig {
            steps: 3,
            ..Default::default()
        };
        let csv = synthesize(&g, fork_mem(&g), cfg).unwrap().trace_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
        assert_eq!(lines[1].split(',').count(), 5);
    }
}
