//! Browser bindings: the value of the memoryless fork as its branching
//! probability moves, a convergence trace of the synthesis loop, and
//! synthesis on freshly generated grid and airport graphs.

use patrol_core::graph::{airport_baseline, gen_airport, gen_grid};
use patrol_core::optimizer::Synthesizer;
use patrol_core::{evaluate, fixtures, MemoryMap, OptimizerConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Probability of the balanced memoryless fork.
#[wasm_bindgen]
pub fn balanced_probability() -> f64 {
    fixtures::balanced_fork_probability()
}

/// Value of the memoryless fork strategy that heads to `t1` with probability
/// `p`, and the worst damage of each target, as JSON.
#[wasm_bindgen]
pub fn fork_value(p: f64) -> Result<String, JsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(JsError::new("p must lie strictly between 0 and 1"));
    }
    let g = fixtures::weighted_fork_graph();
    let sigma = fixtures::memoryless_fork(p);
    let r = evaluate(&sigma, &g).map_err(js_err)?;
    let comp = &r.components[r.best_component];
    let per_target: Vec<_> = comp
        .targets
        .iter()
        .map(|t| {
            let worst = t.damages.iter().map(|d| d.to_f64()).fold(f64::NEG_INFINITY, f64::max);
            json!({ "target": g.name(t.hitting.target), "worst": worst })
        })
        .collect();
    let w = &r.witness[r.best_component];
    Ok(json!({
        "value": r.value.to_f64(),
        "targets": per_target,
        "witness": g.name(w.target),
    })
    .to_string())
}

fn config(steps: usize, seed: u64, eps: f64, beta: f64, lr: f64) -> OptimizerConfig {
    OptimizerConfig {
        steps,
        seed,
        eps,
        beta,
        learning_rate: lr,
        ..Default::default()
    }
}

/// Runs synthesis on the fork with two memory elements at the hub and
/// returns the trace CSV.
#[wasm_bindgen]
pub fn fork_trace(steps: usize, seed: u64, eps: f64, beta: f64, lr: f64) -> Result<String, JsError> {
    let g = fixtures::weighted_fork_graph();
    let mem = MemoryMap::uniform(&g, 1).with(g.vertex_index("v").expect("hub"), 2);
    let r = patrol_core::synthesize(&g, mem, config(steps, seed, eps, beta, lr)).map_err(js_err)?;
    Ok(r.trace_csv())
}

/// Generates a graph (`"grid"` with `size` vertices, or `"airport"` with
/// comma separated gate counts in `gates`), synthesizes for `steps` steps
/// and summarizes the outcome as JSON.
#[wasm_bindgen]
pub fn synthesize_generated(kind: &str, size: usize, gates: &str, seed: u64, steps: usize) -> Result<String, JsError> {
    let (g, mem) = match kind {
        "grid" => {
            let g = gen_grid(size, seed).map_err(js_err)?;
            let mem = MemoryMap::uniform(&g, 6);
            (g, mem)
        }
        "airport" => {
            let counts = gates
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| JsError::new("gate counts must be integers"))?;
            let g = gen_airport(&counts).map_err(js_err)?;
            let mem = MemoryMap::by_role(&g, 1, 4);
            (g, mem)
        }
        _ => return Err(JsError::new("kind must be grid or airport")),
    };
    let mut s = Synthesizer::new(
        &g,
        mem,
        OptimizerConfig {
            steps,
            seed,
            ..Default::default()
        },
    )
    .map_err(js_err)?;
    for _ in 0..steps {
        s.step().map_err(js_err)?;
    }
    let r = s.finish().map_err(js_err)?;
    let baseline = (kind == "airport").then(|| airport_baseline(&g) as f64);
    Ok(json!({
        "vertices": g.vertex_count(),
        "targets": g.targets().len(),
        "edges": g.edges().len(),
        "best_value": r.best_value.to_f64(),
        "best_step": r.best_step,
        "baseline": baseline,
        "normalized": baseline.map(|b| r.best_value.to_f64() / b),
        "values": r.trace.iter().map(|t| t.eval_value.to_f64()).collect::<Vec<_>>(),
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_fork_is_the_minimum_of_the_slider() {
        let at = |p: f64| {
            let v: serde_json::Value = serde_json::from_str(&fork_value(p).unwrap()).unwrap();
            v["value"].as_f64().unwrap()
        };
        let p = balanced_probability();
        assert!(at(p) < at(p - 0.02) && at(p) < at(p + 0.02));
    }

    #[test]
    fn trace_has_one_row_per_step() {
        assert_eq!(fork_trace(12, 1, 0.3, 0.2, 0.5).unwrap().lines().count(), 13);
    }

    #[test]
    fn generated_airport_is_normalized() {
        let v: serde_json::Value =
            serde_json::from_str(&synthesize_generated("airport", 0, "2,2", 0, 20).unwrap()).unwrap();
        assert!(v["normalized"].as_f64().unwrap() >= 1.0 - 1e-9);
        assert_eq!(v["values"].as_array().unwrap().len(), 20);
    }
}
