//! Exact protection value of a regular strategy.
//!
//! The support graph of the strategy is split into strongly connected
//! components. In every bottom component `B` and for every target `τ`, the
//! expected time `y(v̂)` to reach a copy of `τ` solves
//!
//! ```text
//! y(v̂) = 0                                   if v = τ
//! y(v̂) = Σ_ŵ σ(v̂)(ŵ) · (tm(v, w) + y(ŵ))     otherwise
//! ```
//!
//! and an attack on `τ` launched as the Defender starts along the augmented
//! edge `(û, v̂)` costs `α(τ) · (tm(u, v) + y(v̂))` in expectation. The value is
//! the minimum over bottom components of the worst such damage.

use std::cmp::Ordering;
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::PatrollingGraph;
use crate::linalg::{solve_refined, DenseMatrix, Lu};
use crate::par;
use crate::strategy::{AugLabel, AugmentedGraph, AugmentedSpace, RegularStrategy};

/// Largest accepted residual `‖(I − P) y − c‖∞` of a hitting-time solve,
/// relative to `max(1, ‖y‖∞)`.
pub const RESIDUAL_LIMIT: f64 = 1e-8;

/// Relative tolerance under which two damages count as tied when picking witnesses.
const TIE_TOLERANCE: f64 = 1e-9;

/// Expected damage or time: a finite nonnegative number or infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damage {
    Finite(f64),
    Infinite,
}

impl Damage {
    pub fn is_finite(self) -> bool {
        matches!(self, Damage::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Damage::Finite(x) => Some(x),
            Damage::Infinite => None,
        }
    }

    /// As `f64`, mapping [`Damage::Infinite`] to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    pub fn scale(self, c: f64) -> Self {
        match self {
            Damage::Finite(x) => Damage::Finite(x * c),
            Damage::Infinite => Damage::Infinite,
        }
    }

    fn ties_with(self, best: Damage) -> bool {
        match (self, best) {
            (Damage::Infinite, Damage::Infinite) => true,
            (Damage::Finite(x), Damage::Finite(b)) => (x - b).abs() <= TIE_TOLERANCE * b.abs().max(1.0),
            _ => false,
        }
    }
}

impl PartialOrd for Damage {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Damage::Finite(a), Damage::Finite(b)) => a.partial_cmp(b),
            (Damage::Finite(_), Damage::Infinite) => Some(Ordering::Less),
            (Damage::Infinite, Damage::Finite(_)) => Some(Ordering::Greater),
            (Damage::Infinite, Damage::Infinite) => Some(Ordering::Equal),
        }
    }
}

impl fmt::Display for Damage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Damage::Finite(x) => write!(f, "{x}"),
            Damage::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Damage {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Damage::Finite(x) => s.serialize_f64(*x),
            Damage::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Damage {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Damage::Finite(x)),
            Raw::Str(s) if s == "inf" => Ok(Damage::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected number or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// Strongly connected components of a support graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BsccDecomposition {
    /// Components with sorted members, ordered by smallest member.
    pub components: Vec<Vec<usize>>,
    /// Whether no support edge leaves the component.
    pub bottom_flags: Vec<bool>,
}

impl BsccDecomposition {
    /// Members of the bottom components, in component order.
    pub fn bottom(&self) -> Vec<&[usize]> {
        self.components
            .iter()
            .zip(&self.bottom_flags)
            .filter(|(_, &b)| b)
            .map(|(c, _)| c.as_slice())
            .collect()
    }
}

pub fn bottom_sccs(support: &AugmentedGraph) -> BsccDecomposition {
    let n = support.node_count();
    let mut dg = DiGraph::<(), ()>::with_capacity(n, support.edge_count());
    let nodes: Vec<_> = (0..n).map(|_| dg.add_node(())).collect();
    for (u, v) in support.edges() {
        dg.add_edge(nodes[u], nodes[v], ());
    }
    let mut components: Vec<Vec<usize>> = tarjan_scc(&dg)
        .into_iter()
        .map(|c| {
            let mut m: Vec<usize> = c.into_iter().map(|x| x.index()).collect();
            m.sort_unstable();
            m
        })
        .collect();
    components.sort_by_key(|c| c[0]);

    let mut component_of = vec![0; n];
    for (i, c) in components.iter().enumerate() {
        for &a in c {
            component_of[a] = i;
        }
    }
    let bottom_flags = components
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.iter()
                .all(|&a| support.successors(a).iter().all(|&b| component_of[b] == i))
        })
        .collect();
    BsccDecomposition {
        components,
        bottom_flags,
    }
}

/// Expected times to reach `target` from each member of a bottom component.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingTimeVector {
    pub component: usize,
    pub target: usize,
    /// Members of the component, sorted.
    pub vertices: Vec<usize>,
    /// Aligned with `vertices`; `None` when the component has no copy of the target.
    pub times: Option<Vec<f64>>,
}

impl HittingTimeVector {
    /// Hitting time from augmented vertex `a`, or `None` if `a` is not in the component.
    pub fn get(&self, a: usize) -> Option<Damage> {
        let i = self.vertices.binary_search(&a).ok()?;
        Some(match &self.times {
            Some(y) => Damage::Finite(y[i]),
            None => Damage::Infinite,
        })
    }
}

/// `(I − P) y = c` restricted to `members`, with target rows pinned to zero.
/// Returns `None` when no member is a copy of `target`.
pub(crate) fn hitting_system(
    sigma: &RegularStrategy,
    members: &[usize],
    target: usize,
) -> Option<(DenseMatrix, Vec<f64>)> {
    let space = sigma.space();
    if !members.iter().any(|&a| space.base(a) == target) {
        return None;
    }
    let local = local_index(space, members);
    let n = members.len();
    let mut a = DenseMatrix::identity(n);
    let mut c = vec![0.0; n];
    for (i, &u) in members.iter().enumerate() {
        if space.base(u) == target {
            continue;
        }
        for (s, &p) in space.successors(u).iter().zip(sigma.row(u)) {
            if p > 0.0 {
                a[(i, local[s.to])] -= p;
                c[i] += p * s.time as f64;
            }
        }
    }
    Some((a, c))
}

fn local_index(space: &AugmentedSpace, members: &[usize]) -> Vec<usize> {
    let mut local = vec![usize::MAX; space.len()];
    for (i, &a) in members.iter().enumerate() {
        local[a] = i;
    }
    local
}

/// Solves the hitting-time system of `target` on a bottom component.
pub fn solve_hitting(
    sigma: &RegularStrategy,
    g: &PatrollingGraph,
    component: usize,
    members: &[usize],
    target: usize,
) -> Result<HittingTimeVector> {
    let times = match hitting_system(sigma, members, target) {
        None => None,
        Some((a, c)) => {
            let fail = |residual| Error::Conditioning {
                component,
                target: g.name(target).to_owned(),
                residual,
            };
            let lu = Lu::factor(a.clone()).map_err(|s| fail(s.pivot))?;
            let (y, residual) = solve_refined(&a, &lu, &c);
            let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if !(residual <= RESIDUAL_LIMIT * scale) {
                return Err(fail(residual));
            }
            Some(y)
        }
    };
    Ok(HittingTimeVector {
        component,
        target,
        vertices: members.to_vec(),
        times,
    })
}

/// Support edges `(û, v̂)` inside a bottom component, ordered by source and
/// then by successor slot.
pub fn component_edges(sigma: &RegularStrategy, members: &[usize]) -> Vec<(usize, usize)> {
    let space = sigma.space();
    members
        .iter()
        .flat_map(|&u| {
            space
                .successors(u)
                .iter()
                .zip(sigma.row(u))
                .filter(|(_, &p)| p > 0.0)
                .map(move |(s, _)| (u, s.to))
        })
        .collect()
}

/// Expected damage `α(τ) · (tm(u, v) + y(v̂))` of attacking `y.target` along
/// each edge.
pub fn damage_edges(
    y: &HittingTimeVector,
    edges: &[(usize, usize)],
    g: &PatrollingGraph,
    space: &AugmentedSpace,
) -> Vec<Damage> {
    let alpha = g.cost(y.target).expect("hitting target must be a target");
    edges
        .iter()
        .map(|&(u, v)| match y.get(v).expect("edge inside component") {
            Damage::Finite(t) => {
                let tm = g
                    .edge_time(space.base(u), space.base(v))
                    .expect("support edge follows a graph edge");
                Damage::Finite(alpha * (tm as f64 + t))
            }
            Damage::Infinite => Damage::Infinite,
        })
        .collect()
}

/// Damages of every (target, edge) pair of one bottom component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDamages {
    pub members: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    /// In the graph's target order.
    pub targets: Vec<TargetDamages>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetDamages {
    pub hitting: HittingTimeVector,
    /// Aligned with [`ComponentDamages::edges`].
    pub damages: Vec<Damage>,
}

impl ComponentDamages {
    pub fn max(&self) -> Damage {
        self.targets
            .iter()
            .flat_map(|t| t.damages.iter().copied())
            .fold(Damage::Finite(f64::NEG_INFINITY), |m, d| if d > m { d } else { m })
    }

    /// All `(target position, edge position)` pairs tied with the maximum.
    pub fn maximizers(&self) -> Vec<(usize, usize)> {
        let max = self.max();
        let mut out = Vec::new();
        for (ti, t) in self.targets.iter().enumerate() {
            for (ei, &d) in t.damages.iter().enumerate() {
                if d.ties_with(max) {
                    out.push((ti, ei));
                }
            }
        }
        out
    }
}

/// The attack realizing a component's worst damage.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub component: usize,
    pub target: usize,
    pub edge: (usize, usize),
    pub damage: Damage,
    /// The component never visits `target`.
    pub unreachable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// Minimum over bottom components of the worst expected damage.
    pub value: Damage,
    /// Index into the bottom components.
    pub best_component: usize,
    /// One per bottom component.
    pub witness: Vec<Witness>,
    pub unambiguous: bool,
    /// For unambiguous strategies the value is exact, otherwise an upper bound.
    pub val_equals_bound: bool,
    pub decomposition: BsccDecomposition,
    /// One per bottom component.
    pub components: Vec<ComponentDamages>,
}

pub fn evaluate(sigma: &RegularStrategy, g: &PatrollingGraph) -> Result<EvaluationReport> {
    let space = sigma.space();
    if space.memory().len() != g.vertex_count() {
        return Err(Error::InvalidArgument(
            "strategy was built for a different graph".into(),
        ));
    }
    let decomposition = bottom_sccs(&sigma.support_graph());
    let bottom = decomposition.bottom();

    let jobs: Vec<(usize, usize)> = (0..bottom.len())
        .flat_map(|c| g.targets().iter().map(move |&t| (c, t)))
        .collect();
    let edges: Vec<Vec<(usize, usize)>> = bottom.iter().map(|members| component_edges(sigma, members)).collect();
    let solved = par::map(&jobs, |&(c, t)| -> Result<TargetDamages> {
        let hitting = solve_hitting(sigma, g, c, bottom[c], t)?;
        let damages = damage_edges(&hitting, &edges[c], g, space);
        Ok(TargetDamages { hitting, damages })
    });

    let mut solved = solved.into_iter();
    let mut components = Vec::with_capacity(bottom.len());
    for (members, edges) in bottom.iter().zip(edges) {
        let targets = solved.by_ref().take(g.targets().len()).collect::<Result<Vec<_>>>()?;
        components.push(ComponentDamages {
            members: members.to_vec(),
            edges,
            targets,
        });
    }

    let witness: Vec<Witness> = components
        .iter()
        .enumerate()
        .map(|(c, comp)| {
            let (ti, ei) = comp.maximizers()[0];
            let t = &comp.targets[ti];
            Witness {
                component: c,
                target: t.hitting.target,
                edge: comp.edges[ei],
                damage: t.damages[ei],
                unreachable: t.hitting.times.is_none(),
            }
        })
        .collect();

    let value = components
        .iter()
        .map(ComponentDamages::max)
        .fold(Damage::Infinite, |m, d| if d < m { d } else { m });
    let best_component = components.iter().position(|c| c.max().ties_with(value)).unwrap_or(0);

    let unambiguous = sigma.is_unambiguous();
    Ok(EvaluationReport {
        value,
        best_component,
        witness,
        unambiguous,
        val_equals_bound: unambiguous,
        decomposition,
        components,
    })
}

/// The attack chosen against each bottom component: the target and the
/// augmented edge whose traversal triggers it.
pub fn attacker_best_response(report: &EvaluationReport) -> &[Witness] {
    &report.witness
}

impl EvaluationReport {
    /// Every attack of `component` whose damage ties with its maximum, in
    /// witness order. The first one is the witness.
    pub fn tied_attacks(&self, component: usize) -> Vec<Witness> {
        let comp = &self.components[component];
        comp.maximizers()
            .into_iter()
            .map(|(ti, ei)| {
                let t = &comp.targets[ti];
                Witness {
                    component,
                    target: t.hitting.target,
                    edge: comp.edges[ei],
                    damage: t.damages[ei],
                    unreachable: t.hitting.times.is_none(),
                }
            })
            .collect()
    }

    pub fn to_file(&self, g: &PatrollingGraph, space: &AugmentedSpace) -> ReportFile {
        let entry = |w: &Witness| WitnessEntry {
            component: w.component,
            target: g.name(w.target).to_owned(),
            edge: [space.label(g, w.edge.0), space.label(g, w.edge.1)],
            damage: w.damage,
            unreachable: w.unreachable,
        };
        ReportFile {
            value: self.value,
            unambiguous: self.unambiguous,
            val_equals_bound: self.val_equals_bound,
            best_component: self.best_component,
            witness: self.witness.iter().map(entry).collect(),
            ties: self.tied_attacks(self.best_component).iter().map(entry).collect(),
        }
    }
}

/// Serialized form of an [`EvaluationReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub value: Damage,
    pub unambiguous: bool,
    pub val_equals_bound: bool,
    pub best_component: usize,
    pub witness: Vec<WitnessEntry>,
    /// All attacks tied with the maximum in the best component.
    #[serde(default)]
    pub ties: Vec<WitnessEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessEntry {
    pub component: usize,
    pub target: String,
    pub edge: [AugLabel; 2],
    pub damage: Damage,
    #[serde(default)]
    pub unreachable: bool,
}
