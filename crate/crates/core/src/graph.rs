//! Patrolling graphs: data model, validation, benchmark generators and JSON I/O.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed edge between two vertex indices with its traversal time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub time: u32,
}

/// Terrain model: vertices, targets with costs, and timed edges.
///
/// Vertices are addressed by their position in the vertex list. The graph is
/// immutable once built; [`PatrollingGraph::validate`] checks the model
/// invariants (positive times and costs, strong connectivity, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct PatrollingGraph {
    names: Vec<String>,
    index: HashMap<String, usize>,
    /// Cost per time unit, `None` for non-target vertices.
    costs: Vec<Option<f64>>,
    /// Targets in declaration order.
    targets: Vec<usize>,
    edges: Vec<Edge>,
    /// Outgoing edge indices per vertex, in declaration order.
    out: Vec<Vec<usize>>,
    duplicate_targets: Vec<usize>,
}

impl PatrollingGraph {
    /// Builds a graph from named parts. Only structural errors (unknown or
    /// repeated vertex names) fail here; model invariants are checked by
    /// [`validate`](Self::validate).
    pub fn new<S: AsRef<str>>(vertices: &[S], targets: &[(S, f64)], edges: &[(S, S, u32)]) -> Result<Self> {
        let names: Vec<String> = vertices.iter().map(|v| v.as_ref().to_owned()).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vertex `{n}`")));
            }
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::UnknownVertex(name.to_owned()))
        };

        let mut costs = vec![None; names.len()];
        let mut target_list = Vec::with_capacity(targets.len());
        let mut duplicate_targets = Vec::new();
        for (name, cost) in targets {
            let v = lookup(name.as_ref())?;
            if costs[v].is_some() {
                duplicate_targets.push(v);
                continue;
            }
            costs[v] = Some(*cost);
            target_list.push(v);
        }

        let mut edge_list = Vec::with_capacity(edges.len());
        let mut out = vec![Vec::new(); names.len()];
        for (from, to, time) in edges {
            let e = Edge {
                from: lookup(from.as_ref())?,
                to: lookup(to.as_ref())?,
                time: *time,
            };
            out[e.from].push(edge_list.len());
            edge_list.push(e);
        }

        Ok(Self {
            names,
            index,
            costs,
            targets: target_list,
            edges: edge_list,
            out,
            duplicate_targets,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vertex_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn is_target(&self, v: usize) -> bool {
        self.costs[v].is_some()
    }

    /// Target cost α(v), or `None` when `v` is not a target.
    pub fn cost(&self, v: usize) -> Option<f64> {
        self.costs[v]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Outgoing edges of `v` in declaration order.
    pub fn out_edges(&self, v: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.out[v].iter().map(move |&e| &self.edges[e])
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.out[v].len()
    }

    pub fn edge_time(&self, from: usize, to: usize) -> Option<u32> {
        self.out_edges(from).find(|e| e.to == to).map(|e| e.time)
    }

    pub fn max_cost(&self) -> f64 {
        self.targets.iter().filter_map(|&t| self.costs[t]).fold(0.0, f64::max)
    }

    pub fn max_time(&self) -> u32 {
        self.edges.iter().map(|e| e.time).max().unwrap_or(0)
    }

    /// Same graph with every target cost multiplied by `factor`.
    pub fn scale_costs(&self, factor: f64) -> Self {
        let mut g = self.clone();
        for c in g.costs.iter_mut().flatten() {
            *c *= factor;
        }
        g
    }

    /// Checks all model invariants and reports every violation found.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();

        if self.targets.is_empty() {
            report.push("targets-nonempty", "at least one target is required".into());
        }
        for &v in &self.duplicate_targets {
            report.push(
                "targets-unique",
                format!("target `{}` is listed more than once", self.names[v]),
            );
        }
        for &t in &self.targets {
            let c = self.costs[t].unwrap_or(0.0);
            if !(c > 0.0 && c.is_finite()) {
                report.push(
                    "cost-positive",
                    format!("cost of target `{}` must be > 0 (got {c})", self.names[t]),
                );
            }
        }

        let mut seen = HashSet::with_capacity(self.edges.len());
        for e in &self.edges {
            if e.time < 1 {
                report.push(
                    "time-positive",
                    format!(
                        "traversal time must be ≥ 1 (edge `{}` → `{}` has {})",
                        self.names[e.from], self.names[e.to], e.time
                    ),
                );
            }
            if !seen.insert((e.from, e.to)) {
                report.push(
                    "edges-unique",
                    format!("duplicate edge `{}` → `{}`", self.names[e.from], self.names[e.to]),
                );
            }
        }

        if !self.is_strongly_connected() {
            report.push("strongly-connected", "graph is not strongly connected".into());
        }
        report
    }

    pub fn is_strongly_connected(&self) -> bool {
        let n = self.vertex_count();
        if n == 0 {
            return false;
        }
        // A lone vertex still needs a way to keep moving.
        if n == 1 && self.edges.is_empty() {
            return false;
        }
        let mut dg = DiGraph::<(), ()>::with_capacity(n, self.edges.len());
        let nodes: Vec<_> = (0..n).map(|_| dg.add_node(())).collect();
        for e in &self.edges {
            dg.add_edge(nodes[e.from], nodes[e.to], ());
        }
        tarjan_scc(&dg).len() == 1
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            vertices: self.names.clone(),
            targets: self
                .targets
                .iter()
                .map(|&t| TargetEntry {
                    vertex: self.names[t].clone(),
                    cost: self.costs[t].unwrap_or_default(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeEntry {
                    from: self.names[e.from].clone(),
                    to: self.names[e.to].clone(),
                    time: e.time,
                })
                .collect(),
        }
    }

    /// Builds and validates a graph from its serialized form.
    pub fn from_file(file: &GraphFile) -> Result<Self> {
        let targets: Vec<(&str, f64)> = file.targets.iter().map(|t| (t.vertex.as_str(), t.cost)).collect();
        let edges: Vec<(&str, &str, u32)> = file
            .edges
            .iter()
            .map(|e| (e.from.as_str(), e.to.as_str(), e.time))
            .collect();
        let vertices: Vec<&str> = file.vertices.iter().map(String::as_str).collect();
        let g = Self::new(&vertices, &targets, &edges)?;
        g.validate().into_result()?;
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("graph serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Outcome of [`PatrollingGraph::validate`]; `ok` holds iff there are no violations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    /// `(rule id, message)` pairs.
    pub violations: Vec<(String, String)>,
}

impl Default for ValidationReport {
    fn default() -> Self {
        Self {
            ok: true,
            violations: Vec::new(),
        }
    }
}

impl ValidationReport {
    fn push(&mut self, rule: &str, message: String) {
        self.ok = false;
        self.violations.push((rule.to_owned(), message));
    }

    pub fn has(&self, rule: &str) -> bool {
        self.violations.iter().any(|(r, _)| r == rule)
    }

    pub fn into_result(self) -> Result<()> {
        if self.ok {
            Ok(())
        } else {
            Err(Error::InvalidGraph(
                self.violations.into_iter().map(|(_, m)| m).collect(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub vertices: Vec<String>,
    pub targets: Vec<TargetEntry>,
    pub edges: Vec<EdgeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    pub vertex: String,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub from: String,
    pub to: String,
    pub time: u32,
}

/// Random grid-derived instance with `n` vertices.
///
/// `n` distinct cells of an `n × n` grid are sampled; the first `⌈n/2⌉` in
/// shuffled order become targets with cost 1. Travel times are grid hop counts
/// and an edge `(u, v)` is dropped when some third chosen cell `w` gives
/// `d(u, w) + d(w, v) ≤ d(u, v)`.
pub fn gen_grid(n: usize, seed: u64) -> Result<PatrollingGraph> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("grid size must be ≥ 2 (got {n})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = index::sample(&mut rng, n * n, n).into_vec();
    cells.shuffle(&mut rng);

    let pos: Vec<(i64, i64)> = cells.iter().map(|&c| ((c / n) as i64, (c % n) as i64)).collect();
    let dist = |a: usize, b: usize| -> u32 { ((pos[a].0 - pos[b].0).abs() + (pos[a].1 - pos[b].1).abs()) as u32 };

    let names: Vec<String> = pos.iter().map(|(r, c)| format!("r{r}c{c}")).collect();
    let targets: Vec<(String, f64)> = names[..n.div_ceil(2)].iter().map(|s| (s.clone(), 1.0)).collect();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            let d = dist(u, v);
            let dominated = (0..n).any(|w| w != u && w != v && dist(u, w) + dist(w, v) <= d);
            if !dominated {
                edges.push((names[u].clone(), names[v].clone(), d));
            }
        }
    }

    let g = PatrollingGraph::new(&names, &targets, &edges)?;
    let report = g.validate();
    assert!(report.ok, "grid pruning broke an invariant: {:?}", report.violations);
    Ok(g)
}

/// Airport instance: a central node `C` and one terminal per entry of
/// `gate_counts`. A terminal is a chain of halls, one per gate pair, whose
/// first hall attaches to `C`; each hall serves two gates. All edges are
/// bidirectional with time 1 and every gate is a target with cost 1.
pub fn gen_airport(gate_counts: &[usize]) -> Result<PatrollingGraph> {
    if gate_counts.is_empty() {
        return Err(Error::InvalidArgument("at least one terminal is required".into()));
    }
    if let Some((terminal, &count)) = gate_counts.iter().enumerate().find(|(_, &c)| c < 2 || c % 2 != 0) {
        return Err(Error::OddGateCount { terminal, count });
    }

    let mut vertices = vec!["C".to_owned()];
    let mut targets = Vec::new();
    let mut edges = Vec::new();
    let mut link = |a: &str, b: &str| {
        edges.push((a.to_owned(), b.to_owned(), 1));
        edges.push((b.to_owned(), a.to_owned(), 1));
    };
    for (t, &gates) in gate_counts.iter().enumerate() {
        let mut prev = "C".to_owned();
        for h in 0..gates / 2 {
            let hall = format!("T{t}H{h}");
            vertices.push(hall.clone());
            link(&prev, &hall);
            for side in ["a", "b"] {
                let gate = format!("T{t}G{h}{side}");
                vertices.push(gate.clone());
                targets.push((gate.clone(), 1.0));
                link(&hall, &gate);
            }
            prev = hall;
        }
    }

    let g = PatrollingGraph::new(&vertices, &targets, &edges)?;
    debug_assert!(g.validate().ok);
    Ok(g)
}

/// Splits `total_gates` at random into `terminals` even gate counts (each ≥ 2)
/// and builds the corresponding airport.
pub fn gen_random_airport(terminals: usize, total_gates: usize, seed: u64) -> Result<PatrollingGraph> {
    if terminals == 0 || !total_gates.is_multiple_of(2) || total_gates < 2 * terminals {
        return Err(Error::InvalidArgument(format!(
            "cannot split {total_gates} gates into {terminals} terminals of even size ≥ 2"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = vec![1usize; terminals];
    for _ in 0..(total_gates / 2 - terminals) {
        let t = rand::Rng::random_range(&mut rng, 0..terminals);
        pairs[t] += 1;
    }
    let counts: Vec<usize> = pairs.iter().map(|p| 2 * p).collect();
    gen_airport(&counts)
}

/// Length of the shortest closed walk through all gates of an airport graph:
/// every tree edge is traversed twice.
pub fn airport_baseline(g: &PatrollingGraph) -> u64 {
    2 * (g.vertex_count() as u64).saturating_sub(1)
}
