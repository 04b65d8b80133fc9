//! Finite-memory strategies over memory-augmented vertices.
//!
//! An augmented vertex is a pair `(v, m)` with `1 ≤ m ≤ mem(v)`. Augmented
//! vertices are numbered contiguously, vertex by vertex, so `(v, m)` lives at
//! `offset(v) + m - 1`. Every augmented vertex has a fixed list of admissible
//! successors (all `(w, m')` with `v → w`), and both [`RegularStrategy`] and
//! [`CoefficientMatrix`] store one row per augmented vertex aligned with that
//! list.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PatrollingGraph;

/// Number of memory elements per vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryMap(Vec<usize>);

impl MemoryMap {
    pub fn uniform(g: &PatrollingGraph, size: usize) -> Self {
        Self(vec![size.max(1); g.vertex_count()])
    }

    /// Targets get `target_mem` elements, all other vertices `other_mem`.
    pub fn by_role(g: &PatrollingGraph, target_mem: usize, other_mem: usize) -> Self {
        Self(
            (0..g.vertex_count())
                .map(|v| if g.is_target(v) { target_mem } else { other_mem }.max(1))
                .collect(),
        )
    }

    pub fn from_vec(sizes: Vec<usize>) -> Result<Self> {
        if let Some(v) = sizes.iter().position(|&m| m == 0) {
            return Err(Error::InvalidArgument(format!("memory size of vertex {v} must be ≥ 1")));
        }
        Ok(Self(sizes))
    }

    pub fn with(mut self, v: usize, size: usize) -> Self {
        self.0[v] = size.max(1);
        self
    }

    pub fn get(&self, v: usize) -> usize {
        self.0[v]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// An admissible augmented successor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Successor {
    /// Augmented index of `(w, m')`.
    pub to: usize,
    /// Base vertex `w`.
    pub vertex: usize,
    /// Traversal time of the base edge `v → w`.
    pub time: u32,
}

/// Augmented vertex set of a graph under a memory map, together with the full
/// augmented edge structure.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSpace {
    memory: MemoryMap,
    offsets: Vec<usize>,
    base: Vec<usize>,
    successors: Vec<Vec<Successor>>,
    target: Vec<bool>,
}

impl AugmentedSpace {
    pub fn new(g: &PatrollingGraph, memory: MemoryMap) -> Result<Self> {
        if memory.len() != g.vertex_count() {
            return Err(Error::InvalidArgument(format!(
                "memory map covers {} vertices, graph has {}",
                memory.len(),
                g.vertex_count()
            )));
        }
        let mut offsets = Vec::with_capacity(g.vertex_count() + 1);
        let mut base = Vec::new();
        offsets.push(0);
        for v in 0..g.vertex_count() {
            base.extend(std::iter::repeat_n(v, memory.get(v)));
            offsets.push(base.len());
        }
        let successors = base
            .iter()
            .map(|&v| {
                g.out_edges(v)
                    .flat_map(|e| {
                        (offsets[e.to]..offsets[e.to + 1]).map(move |to| Successor {
                            to,
                            vertex: e.to,
                            time: e.time,
                        })
                    })
                    .collect()
            })
            .collect();
        let target = base.iter().map(|&v| g.is_target(v)).collect();
        Ok(Self {
            memory,
            offsets,
            base,
            successors,
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn memory(&self) -> &MemoryMap {
        &self.memory
    }

    /// Augmented index of `(v, m)` with a 1-based memory element.
    pub fn index(&self, v: usize, m: usize) -> Option<usize> {
        (m >= 1 && m <= self.memory.get(v)).then(|| self.offsets[v] + m - 1)
    }

    /// `(vertex, 1-based memory element)` of an augmented index.
    pub fn vertex(&self, a: usize) -> (usize, usize) {
        let v = self.base[a];
        (v, a - self.offsets[v] + 1)
    }

    pub fn base(&self, a: usize) -> usize {
        self.base[a]
    }

    pub fn is_target_copy(&self, a: usize) -> bool {
        self.target[a]
    }

    pub fn copies(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    pub fn successors(&self, a: usize) -> &[Successor] {
        &self.successors[a]
    }

    /// Total number of augmented edges.
    pub fn edge_count(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }

    /// Position of augmented successor `to` in the row of `from`.
    pub fn successor_slot(&self, from: usize, to: usize) -> Option<usize> {
        self.successors[from].iter().position(|s| s.to == to)
    }

    pub fn label(&self, g: &PatrollingGraph, a: usize) -> AugLabel {
        let (v, m) = self.vertex(a);
        AugLabel(g.name(v).to_owned(), m)
    }
}

/// `(vertex name, 1-based memory element)`, serialized as a two-element array.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AugLabel(pub String, pub usize);

impl fmt::Display for AugLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.0, self.1)
    }
}

/// A directed graph over augmented vertex indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedGraph {
    adjacency: Vec<Vec<usize>>,
}

impl AugmentedGraph {
    pub fn from_adjacency(adjacency: Vec<Vec<usize>>) -> Self {
        Self { adjacency }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn successors(&self, a: usize) -> &[usize] {
        &self.adjacency[a]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, vs)| vs.iter().map(move |&v| (u, v)))
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].contains(&v)
    }
}

/// Tolerance for row sums of externally supplied strategies.
const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// A regular strategy: one distribution per augmented vertex over its
/// admissible successors.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularStrategy {
    space: Arc<AugmentedSpace>,
    rows: Vec<Vec<f64>>,
}

impl RegularStrategy {
    /// Wraps rows aligned with `space`'s successor lists. Rows must be
    /// nonnegative and sum to 1 within 1e-9; they are renormalized exactly.
    pub fn from_rows(space: Arc<AugmentedSpace>, mut rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != space.len() {
            return Err(Error::InvalidStrategy(format!(
                "{} rows for {} augmented vertices",
                rows.len(),
                space.len()
            )));
        }
        for (a, row) in rows.iter_mut().enumerate() {
            if row.len() != space.successors(a).len() {
                return Err(Error::InvalidStrategy(format!(
                    "row {a} has {} entries, expected {}",
                    row.len(),
                    space.successors(a).len()
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0 + ROW_SUM_TOLERANCE).contains(&p)) {
                return Err(Error::InvalidStrategy(format!(
                    "row {a} has a probability outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidStrategy(format!("row {a} sums to {sum}, expected 1")));
            }
            row.iter_mut().for_each(|p| *p /= sum);
        }
        Ok(Self { space, rows })
    }

    /// Builds a strategy from `(from, to, p)` triples of augmented labels,
    /// as in the strategy file format. Missing vertices in `memory` default
    /// to one memory element.
    pub fn from_entries(g: &PatrollingGraph, memory: MemoryMap, entries: &[(AugLabel, AugLabel, f64)]) -> Result<Self> {
        let space = Arc::new(AugmentedSpace::new(g, memory)?);
        let resolve = |l: &AugLabel| -> Result<usize> {
            let v = g.vertex_index(&l.0).ok_or_else(|| Error::UnknownVertex(l.0.clone()))?;
            space
                .index(v, l.1)
                .ok_or_else(|| Error::InvalidStrategy(format!("memory element {} out of range for `{}`", l.1, l.0)))
        };
        let mut rows: Vec<Vec<f64>> = (0..space.len()).map(|a| vec![0.0; space.successors(a).len()]).collect();
        for (from, to, p) in entries {
            let (u, v) = (resolve(from)?, resolve(to)?);
            let slot = space
                .successor_slot(u, v)
                .ok_or_else(|| Error::InvalidStrategy(format!("no edge `{}` → `{}` in the graph", from.0, to.0)))?;
            rows[u][slot] += p;
        }
        if let Some(a) = rows.iter().position(|r| r.iter().all(|&p| p == 0.0)) {
            return Err(Error::InvalidStrategy(format!(
                "augmented vertex {} has no outgoing probability",
                space.label(g, a)
            )));
        }
        Self::from_rows(space, rows)
    }

    /// Deterministic strategy choosing successor slot `choice[a]` in every row.
    pub fn deterministic(space: Arc<AugmentedSpace>, choice: &[usize]) -> Self {
        let rows = choice
            .iter()
            .enumerate()
            .map(|(a, &c)| {
                let mut row = vec![0.0; space.successors(a).len()];
                row[c] = 1.0;
                row
            })
            .collect();
        Self { space, rows }
    }

    pub fn space(&self) -> &Arc<AugmentedSpace> {
        &self.space
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.rows[a]
    }

    /// Probability of moving from augmented vertex `from` to `to`.
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.space.successor_slot(from, to).map_or(0.0, |s| self.rows[from][s])
    }

    /// Zeroes entries strictly below `threshold` (keeping each row's maximum)
    /// and renormalizes.
    pub fn cutoff(&self, threshold: f64) -> Self {
        self.map_rows(|row| {
            let keep = argmax(row);
            for (i, p) in row.iter_mut().enumerate() {
                if i != keep && *p < threshold {
                    *p = 0.0;
                }
            }
        })
    }

    /// Snaps entries within `threshold` of 0 to 0 and within `threshold` of 1
    /// to 1, then renormalizes. A row never becomes empty.
    pub fn round_endpoints(&self, threshold: f64) -> Self {
        self.map_rows(|row| {
            let keep = argmax(row);
            for (i, p) in row.iter_mut().enumerate() {
                if *p > 1.0 - threshold {
                    *p = 1.0;
                } else if *p < threshold && i != keep {
                    *p = 0.0;
                }
            }
        })
    }

    fn map_rows(&self, f: impl Fn(&mut Vec<f64>)) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut row = row.clone();
                f(&mut row);
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= sum);
                row
            })
            .collect();
        Self {
            space: Arc::clone(&self.space),
            rows,
        }
    }

    /// Mean Shannon entropy of the rows, in nats.
    pub fn entropy(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .rows
            .iter()
            .map(|row| -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
            .sum();
        total / self.rows.len() as f64
    }

    /// No row puts positive probability on two memory elements of the same
    /// successor vertex.
    pub fn is_unambiguous(&self) -> bool {
        self.rows.iter().enumerate().all(|(a, row)| {
            let succ = self.space.successors(a);
            let mut seen = Vec::new();
            succ.iter().zip(row).filter(|(_, &p)| p > 0.0).all(|(s, _)| {
                if seen.contains(&s.vertex) {
                    false
                } else {
                    seen.push(s.vertex);
                    true
                }
            })
        })
    }

    /// The augmented edges used with positive probability.
    pub fn support_graph(&self) -> AugmentedGraph {
        AugmentedGraph::from_adjacency(
            self.rows
                .iter()
                .enumerate()
                .map(|(a, row)| {
                    self.space
                        .successors(a)
                        .iter()
                        .zip(row)
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(s, _)| s.to)
                        .collect()
                })
                .collect(),
        )
    }

    pub fn to_file(&self, g: &PatrollingGraph) -> StrategyFile {
        let memory = (0..g.vertex_count())
            .map(|v| (g.name(v).to_owned(), self.space.memory().get(v)))
            .collect();
        let mut rows = Vec::new();
        for (a, row) in self.rows.iter().enumerate() {
            for (s, &p) in self.space.successors(a).iter().zip(row) {
                if p > 0.0 {
                    rows.push(StrategyEntry {
                        from: self.space.label(g, a),
                        to: self.space.label(g, s.to),
                        p,
                    });
                }
            }
        }
        StrategyFile { memory, rows }
    }

    pub fn from_file(g: &PatrollingGraph, file: &StrategyFile) -> Result<Self> {
        let mut sizes = vec![1; g.vertex_count()];
        for (name, &m) in &file.memory {
            let v = g.vertex_index(name).ok_or_else(|| Error::UnknownVertex(name.clone()))?;
            sizes[v] = m;
        }
        let entries: Vec<_> = file.rows.iter().map(|e| (e.from.clone(), e.to.clone(), e.p)).collect();
        Self::from_entries(g, MemoryMap::from_vec(sizes)?, &entries)
    }

    pub fn to_json(&self, g: &PatrollingGraph) -> String {
        serde_json::to_string_pretty(&self.to_file(g)).expect("strategy serialization cannot fail")
    }

    pub fn from_json(g: &PatrollingGraph, text: &str) -> Result<Self> {
        Self::from_file(g, &serde_json::from_str(text)?)
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bp), (i, &p)| {
                if p > bp {
                    (i, p)
                } else {
                    (bi, bp)
                }
            },
        )
        .0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyFile {
    pub memory: BTreeMap<String, usize>,
    pub rows: Vec<StrategyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub from: AugLabel,
    pub to: AugLabel,
    pub p: f64,
}

/// Unconstrained real parameters, one per admissible augmented edge; the
/// strategy is their row-wise softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    space: Arc<AugmentedSpace>,
    rows: Vec<Vec<f64>>,
}

impl CoefficientMatrix {
    pub fn zeros(space: Arc<AugmentedSpace>) -> Self {
        let rows = (0..space.len()).map(|a| vec![0.0; space.successors(a).len()]).collect();
        Self { space, rows }
    }

    pub fn from_rows(space: Arc<AugmentedSpace>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let shape_ok = rows.len() == space.len()
            && rows
                .iter()
                .enumerate()
                .all(|(a, r)| r.len() == space.successors(a).len());
        if !shape_ok {
            return Err(Error::InvalidArgument(
                "coefficient rows do not match the augmented edge structure".into(),
            ));
        }
        Ok(Self { space, rows })
    }

    /// I.i.d. standard normal coefficients.
    pub fn random_init(space: Arc<AugmentedSpace>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(space, &mut rng)
    }

    pub(crate) fn random_with(space: Arc<AugmentedSpace>, rng: &mut ChaCha8Rng) -> Self {
        let rows = (0..space.len())
            .map(|a| {
                (0..space.successors(a).len())
                    .map(|_| StandardNormal.sample(rng))
                    .collect()
            })
            .collect();
        Self { space, rows }
    }

    pub fn space(&self) -> &Arc<AugmentedSpace> {
        &self.space
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

    pub fn len(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-wise softmax. Every entry of the result is strictly positive
    /// unless a row is so spread out that entries underflow.
    pub fn softmax(&self) -> RegularStrategy {
        let rows = self.rows.iter().map(|r| softmax_row(r)).collect();
        RegularStrategy {
            space: Arc::clone(&self.space),
            rows,
        }
    }
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
