//! Command-line front end: graph generation, multi-trial synthesis with CSV
//! output, evaluation reports and oracle cross-checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use patrol_core::evaluator::{bottom_sccs, solve_hitting};
use patrol_core::graph::{self, airport_baseline};
use patrol_core::oracle::{self, MonteCarloEstimate};
use patrol_core::{evaluate, Damage, MemoryMap, OptimizerConfig, PatrollingGraph, RegularStrategy};

#[derive(Debug, Parser)]
#[command(
    name = "patrol",
    version,
    about = "Synthesize and check Defender patrolling strategies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a graph file.
    Gen(GenArgs),
    /// Run independent synthesis trials.
    Synth(SynthArgs),
    /// Evaluate a strategy and print the report.
    Eval(EvalArgs),
    /// Cross-check the evaluator with value iteration, Monte Carlo walks and
    /// optionally deterministic enumeration.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphKind {
    Grid,
    Airport,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    pub kind: GraphKind,
    /// Grid: number of vertices.
    #[arg(long)]
    pub n: Option<usize>,
    /// Airport: gate count per terminal, e.g. 4,2,6.
    #[arg(long, value_delimiter = ',')]
    pub gates: Option<Vec<usize>>,
    /// Airport: random terminal count (with --total-gates).
    #[arg(long)]
    pub terminals: Option<usize>,
    #[arg(long)]
    pub total_gates: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides of [`OptimizerConfig`] fields; unset flags keep the base value.
#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub rounding: Option<f64>,
    #[arg(long)]
    pub noise_std0: Option<f64>,
    #[arg(long)]
    pub noise_decay: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

impl HyperArgs {
    pub fn apply(&self, mut cfg: OptimizerConfig) -> OptimizerConfig {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(x) = self.$flag { cfg.$field = x; }
            )*};
        }
        set!(eps => eps, beta => beta, lr => learning_rate, cutoff => cutoff_threshold,
             rounding => rounding_threshold, noise_std0 => noise_std0, noise_decay => noise_decay,
             steps => steps);
        cfg
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Graph file (not needed with --replay).
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Memory sizes: comma separated `default=N`, `targets=N`, `halls=N`
    /// (every non-target) or `<vertex>=N`.
    #[arg(long, default_value = "default=1")]
    pub mem: String,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Seed of trial 0; trial k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for trials (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Add normalized_value = best / 2(|V|-1) to the summary.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Re-run the command recorded in a manifest.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub strategy: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub strategy: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also enumerate deterministic strategies over the strategy's memory.
    #[arg(long)]
    pub enumerate: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let g = cmd_gen(&a)?;
            eprintln!(
                "wrote {} ({} vertices, {} targets)",
                a.out.display(),
                g.vertex_count(),
                g.targets().len()
            );
        }
        Command::Synth(a) => {
            let m = cmd_synth(&a)?;
            let failed: Vec<_> = m.trials.iter().filter(|t| t.error.is_some()).collect();
            for t in &failed {
                eprintln!("trial {} failed: {}", t.trial, t.error.as_deref().unwrap_or_default());
            }
            if !failed.is_empty() {
                bail!("{} of {} trials failed", failed.len(), m.trials.len());
            }
        }
        Command::Eval(a) => {
            let text = cmd_eval(&a.graph, &a.strategy)?;
            emit(&text, a.out.as_deref())?;
        }
        Command::Oracle(a) => {
            let r = cmd_oracle(&a)?;
            emit(&serde_json::to_string_pretty(&r)?, a.out.as_deref())?;
        }
    }
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_gen(a: &GenArgs) -> anyhow::Result<PatrollingGraph> {
    let g = match a.kind {
        GraphKind::Grid => graph::gen_grid(a.n.context("grid needs --n")?, a.seed)?,
        GraphKind::Airport => match (&a.gates, a.terminals, a.total_gates) {
            (Some(gates), None, None) => graph::gen_airport(gates)?,
            (None, Some(t), Some(n)) => graph::gen_random_airport(t, n, a.seed)?,
            _ => bail!("airport needs either --gates or both --terminals and --total-gates"),
        },
    };
    g.save(&a.out)?;
    Ok(g)
}

/// Parses a memory spec such as `default=6` or `targets=1,halls=4,C=2`.
/// Later entries override earlier ones of the same or a broader kind.
pub fn parse_mem(spec: &str, g: &PatrollingGraph) -> anyhow::Result<MemoryMap> {
    let mut default = 1;
    let mut targets = None;
    let mut halls = None;
    let mut vertices = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .with_context(|| format!("memory entry `{part}` is not key=value"))?;
        let n: usize = value
            .trim()
            .parse()
            .with_context(|| format!("memory size `{value}` is not a positive integer"))?;
        if n == 0 {
            bail!("memory size must be at least 1 (`{part}`)");
        }
        match key.trim() {
            "default" => default = n,
            "targets" => targets = Some(n),
            "halls" => halls = Some(n),
            name => {
                let v = g
                    .vertex_index(name)
                    .with_context(|| format!("unknown vertex `{name}` in memory spec"))?;
                vertices.push((v, n));
            }
        }
    }
    let mut mem = MemoryMap::by_role(g, targets.unwrap_or(default), halls.unwrap_or(default));
    for (v, n) in vertices {
        mem = mem.with(v, n);
    }
    Ok(mem)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub best_value: Option<Damage>,
    pub best_step: Option<usize>,
    pub mean_step_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub normalized_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub graph: PathBuf,
    pub mem: String,
    pub config: OptimizerConfig,
    pub seeds: Vec<u64>,
    pub normalize: bool,
    pub out: PathBuf,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Produced files, relative to `out`.
    pub files: Vec<String>,
    pub trials: Vec<TrialSummary>,
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

struct TrialOutput {
    summary: TrialSummary,
    trace_csv: Option<String>,
    strategy: Option<RegularStrategy>,
}

fn run_trial(
    g: &PatrollingGraph,
    mem: &MemoryMap,
    cfg: &OptimizerConfig,
    trial: usize,
    normalize: bool,
) -> TrialOutput {
    let started = Instant::now();
    let result = patrol_core::synthesize(g, mem.clone(), cfg.clone());
    let elapsed = started.elapsed().as_secs_f64();
    match result {
        Ok(r) => TrialOutput {
            summary: TrialSummary {
                trial,
                seed: cfg.seed,
                best_value: Some(r.best_value),
                best_step: Some(r.best_step),
                mean_step_seconds: Some(elapsed / cfg.steps.max(1) as f64),
                normalized_value: normalize.then(|| r.best_value.to_f64() / airport_baseline(g) as f64),
                error: None,
            },
            trace_csv: Some(r.trace_csv()),
            strategy: Some(r.best_strategy),
        },
        Err(e) => TrialOutput {
            summary: TrialSummary {
                trial,
                seed: cfg.seed,
                best_value: None,
                best_step: None,
                mean_step_seconds: None,
                normalized_value: None,
                error: Some(e.to_string()),
            },
            trace_csv: None,
            strategy: None,
        },
    }
}

pub fn trace_file_name(trial: usize) -> String {
    format!("trace_{trial:03}.csv")
}

/// Runs the trials, writes `trace_NNN.csv`, `summary.csv`, `strategy.json`
/// (best over all trials) and `manifest.json` into the output directory.
/// Failed trials are recorded in the manifest and do not stop the others.
pub fn cmd_synth(a: &SynthArgs) -> anyhow::Result<RunManifest> {
    let (graph_path, mem_spec, cfg, seeds, normalize) = match &a.replay {
        Some(p) => {
            let m = RunManifest::load(p)?;
            (m.graph, m.mem, m.config, m.seeds, m.normalize)
        }
        None => {
            let graph = a.graph.clone().context("synth needs --graph (or --replay)")?;
            let cfg = a.hyper.apply(OptimizerConfig::default());
            let seeds = (0..a.trials as u64).map(|k| a.seed + k).collect();
            (graph, a.mem.clone(), cfg, seeds, a.normalize)
        }
    };
    cfg.validate()?;
    let g = PatrollingGraph::load(&graph_path).with_context(|| format!("loading graph {}", graph_path.display()))?;
    let mem = parse_mem(&mem_spec, &g)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let started_unix = unix_now();

    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build()?;
    let outputs: Vec<TrialOutput> = pool.install(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(k, &seed)| {
                let cfg = OptimizerConfig { seed, ..cfg.clone() };
                let out = run_trial(&g, &mem, &cfg, k, normalize);
                if let Some(csv) = &out.trace_csv {
                    let path = a.out.join(trace_file_name(k));
                    if let Err(e) = fs::write(&path, csv) {
                        eprintln!("writing {}: {e}", path.display());
                    }
                }
                out
            })
            .collect()
    });

    let mut files: Vec<String> = outputs
        .iter()
        .filter(|o| o.trace_csv.is_some())
        .map(|o| trace_file_name(o.summary.trial))
        .collect();

    let mut w = csv::Writer::from_path(a.out.join("summary.csv"))?;
    let mut header = vec!["trial", "best_value", "best_step", "mean_step_seconds"];
    if normalize {
        header.push("normalized_value");
    }
    w.write_record(&header)?;
    for o in outputs.iter().filter(|o| o.summary.error.is_none()) {
        let s = &o.summary;
        let mut row = vec![
            s.trial.to_string(),
            s.best_value.expect("successful trial").to_string(),
            s.best_step.expect("successful trial").to_string(),
            s.mean_step_seconds.expect("successful trial").to_string(),
        ];
        if let Some(n) = s.normalized_value {
            row.push(n.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    files.push("summary.csv".into());

    let best = outputs
        .iter()
        .filter_map(|o| Some((o.summary.best_value?, o.strategy.as_ref()?)))
        .fold(None, |acc: Option<(Damage, &RegularStrategy)>, (v, s)| match acc {
            Some((b, _)) if b <= v => acc,
            _ => Some((v, s)),
        });
    if let Some((_, s)) = best {
        fs::write(a.out.join("strategy.json"), s.to_json(&g) + "\n")?;
        files.push("strategy.json".into());
    }
    files.push("manifest.json".into());

    let manifest = RunManifest {
        command: "synth".into(),
        graph: graph_path,
        mem: mem_spec,
        config: cfg,
        seeds,
        normalize,
        out: a.out.clone(),
        started_unix,
        finished_unix: unix_now(),
        files,
        trials: outputs.into_iter().map(|o| o.summary).collect(),
    };
    fs::write(
        a.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

pub fn cmd_eval(graph_path: &Path, strategy_path: &Path) -> anyhow::Result<String> {
    let g = PatrollingGraph::load(graph_path)?;
    let text = fs::read_to_string(strategy_path).with_context(|| format!("reading {}", strategy_path.display()))?;
    let sigma = RegularStrategy::from_json(&g, &text)?;
    let report = evaluate(&sigma, &g)?;
    Ok(serde_json::to_string_pretty(&report.to_file(&g, sigma.space()))?)
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloCheck {
    pub component: usize,
    pub target: String,
    pub edge: [patrol_core::strategy::AugLabel; 2],
    pub evaluator: Damage,
    pub estimate: MonteCarloEstimate,
    pub within_3se: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnumerationCheck {
    pub strategies: u128,
    pub deterministic_best: Damage,
    /// Whether the deterministic optimum is no better than the strategy.
    pub deterministic_not_better: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub value: Damage,
    /// Largest gap between direct solves and value iteration over all
    /// bottom components and targets.
    pub value_iteration_max_diff: f64,
    pub monte_carlo: Vec<MonteCarloCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enumeration: Option<EnumerationCheck>,
}

pub fn cmd_oracle(a: &OracleArgs) -> anyhow::Result<OracleReport> {
    let g = PatrollingGraph::load(&a.graph)?;
    let text = fs::read_to_string(&a.strategy).with_context(|| format!("reading {}", a.strategy.display()))?;
    let sigma = RegularStrategy::from_json(&g, &text)?;
    oracle_report(&g, &sigma, a.samples, a.seed, a.enumerate)
}

pub fn oracle_report(
    g: &PatrollingGraph,
    sigma: &RegularStrategy,
    samples: usize,
    seed: u64,
    enumerate: bool,
) -> anyhow::Result<OracleReport> {
    let report = evaluate(sigma, g)?;
    let space = sigma.space();
    let bscc = bottom_sccs(&sigma.support_graph());
    let mut max_diff = 0.0f64;
    for (c, members) in bscc.bottom().into_iter().enumerate() {
        for &t in g.targets() {
            let direct = solve_hitting(sigma, g, c, members, t)?;
            if direct.times.is_none() {
                continue;
            }
            let vi = oracle::value_iteration_hitting(sigma, members, t, 1e-10, 10_000_000)?;
            for (i, &u) in members.iter().enumerate() {
                let d = direct.get(u).expect("member").to_f64();
                max_diff = max_diff.max((d - vi[i]).abs());
            }
        }
    }
    let mut monte_carlo = Vec::new();
    for w in report.witness.iter().filter(|w| !w.unreachable && w.damage.is_finite()) {
        let est = oracle::monte_carlo_damage(sigma, g, w.edge, w.target, samples, None, seed)?;
        monte_carlo.push(MonteCarloCheck {
            component: w.component,
            target: g.name(w.target).to_owned(),
            edge: [space.label(g, w.edge.0), space.label(g, w.edge.1)],
            evaluator: w.damage,
            within_3se: est.agrees_with(w.damage.to_f64(), 3.0),
            estimate: est,
        });
    }
    let enumeration = if enumerate {
        let r = oracle::enumerate_deterministic(g, space.memory().clone())?;
        Some(EnumerationCheck {
            strategies: r.count,
            deterministic_best: r.value,
            deterministic_not_better: r.value >= report.value,
        })
    } else {
        None
    };
    Ok(OracleReport {
        value: report.value,
        value_iteration_max_diff: max_diff,
        monte_carlo,
        enumeration,
    })
}
