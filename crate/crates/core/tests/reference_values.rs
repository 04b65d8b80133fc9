use patrol_core::evaluator::{bottom_sccs, solve_hitting};
use patrol_core::fixtures;
use patrol_core::oracle::enumerate_deterministic;
use patrol_core::{evaluate, Damage, MemoryMap};

#[test]
fn alternating_loop_value_is_two() {
    let r = evaluate(&fixtures::alternating_loop(), &fixtures::two_target_graph()).unwrap();
    assert!((r.value.to_f64() - 2.0).abs() <= 1e-12);
    assert!(r.unambiguous);
}

#[test]
fn lazy_loop_takes_a_hundred_steps() {
    let g = fixtures::two_target_graph();
    let s = fixtures::lazy_loop(0.99);
    let t1 = g.vertex_index("t1").unwrap();
    let t2 = g.vertex_index("t2").unwrap();
    let bscc = bottom_sccs(&s.support_graph());
    let y = solve_hitting(&s, &g, 0, bscc.bottom()[0], t2).unwrap();
    let a = s.space().index(t1, 1).unwrap();
    assert!((y.get(a).unwrap().to_f64() - 100.0).abs() <= 1e-9);
    let r = evaluate(&s, &g).unwrap();
    assert!((r.value.to_f64() - 101.0).abs() <= 1e-9);
}

#[test]
fn memory_fork_value_and_tied_attacks() {
    let g = fixtures::weighted_fork_graph();
    let s = fixtures::memory_fork();
    let r = evaluate(&s, &g).unwrap();
    assert!((r.value.to_f64() - 6.0).abs() <= 1e-9);
    assert!(r.unambiguous && r.val_equals_bound);
    let sp = s.space();
    let (t1, v, t2) = (0, 1, 2);
    let ties: Vec<_> = r
        .tied_attacks(r.best_component)
        .iter()
        .map(|w| (w.target, w.edge))
        .collect();
    let t2_leaving = (t2, (sp.index(t2, 1).unwrap(), sp.index(v, 2).unwrap()));
    assert!(ties.contains(&t2_leaving), "{ties:?}");
    // Attack on t1 as the walk leaves it costs 1 + 5, the same.
    let t1_leaving = (t1, (sp.index(t1, 1).unwrap(), sp.index(v, 1).unwrap()));
    assert!(ties.contains(&t1_leaving));
    assert_eq!(r.witness[0].target, ties[0].0);
}

#[test]
fn balanced_memoryless_fork() {
    let g = fixtures::weighted_fork_graph();
    let p = fixtures::balanced_fork_probability();
    assert!((p * p - 7.0 * p + 2.0).abs() < 1e-12);
    let r = evaluate(&fixtures::memoryless_fork(p), &g).unwrap();
    let closed_form = 2.0 + (2.0 - p) / p;
    assert!((r.value.to_f64() - closed_form).abs() <= 1e-9);
    assert!((r.value.to_f64() - 7.7).abs() < 0.01);
    // Both worst attacks, t1 while heading to t2 and t2 while heading to t1,
    // are balanced.
    let ties = r.tied_attacks(0);
    let targets: Vec<usize> = ties.iter().map(|w| w.target).collect();
    assert!(targets.contains(&0) && targets.contains(&2), "{targets:?}");
}

#[test]
fn unbalanced_fork_is_worse() {
    let g = fixtures::weighted_fork_graph();
    let p = fixtures::balanced_fork_probability();
    let best = evaluate(&fixtures::memoryless_fork(p), &g).unwrap().value;
    for q in [p - 0.05, p + 0.05, 0.5] {
        assert!(evaluate(&fixtures::memoryless_fork(q), &g).unwrap().value > best);
    }
}

#[test]
fn deterministic_strategies_on_the_fork() {
    let g = fixtures::weighted_fork_graph();
    let r = enumerate_deterministic(&g, MemoryMap::uniform(&g, 1).with(1, 2)).unwrap();
    assert_eq!(r.value, Damage::Finite(8.0));
    let r = enumerate_deterministic(&g, MemoryMap::uniform(&g, 1)).unwrap();
    assert_eq!(r.value, Damage::Infinite);
    let loop_graph = fixtures::two_target_graph();
    let r = enumerate_deterministic(&loop_graph, MemoryMap::uniform(&loop_graph, 1)).unwrap();
    assert_eq!(r.value, Damage::Finite(2.0));
}

#[test]
fn scaling_costs_scales_the_value() {
    let g = fixtures::weighted_fork_graph();
    let s = fixtures::memoryless_fork(0.4);
    let base = evaluate(&s, &g).unwrap();
    let scaled = evaluate(&s, &g.scale_costs(3.5)).unwrap();
    assert!((scaled.value.to_f64() - 3.5 * base.value.to_f64()).abs() < 1e-9);
    assert_eq!(scaled.witness[0].target, base.witness[0].target);
    assert_eq!(scaled.witness[0].edge, base.witness[0].edge);
}
