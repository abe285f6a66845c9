//! Benchmark harness: solve generated instances under several ρ policies and
//! aggregate iteration counts per (family, size bucket, policy).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::admm::{solve, AdmmError, AdmmSettings, SolveStatus, TraceRecord};
use crate::policy::{CaAdmmActor, CaAdmmPolicy, FixedPolicy, HeuristicPolicy, PolicyError, RhoPolicy, RlqpPolicy};
use crate::probgen::{Family, GenError, GeneratorSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bad policy '{0}': expected fixed:<rho>, heuristic, rlqp[:<seed>] or ca-admm")]
    BadPolicy(String),
    #[error("bad size bucket '{0}': expected <n> or <min>-<max>")]
    BadBucket(String),
    #[error("instances must be positive")]
    NoInstances,
    #[error("check interval must be positive")]
    BadInterval,
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// A ρ policy by name. Learned actors are attached by the caller.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    Fixed(f64),
    Heuristic,
    /// Per-constraint MLP with random weights from `seed`.
    Rlqp(u64),
    CaAdmm { label: String, actor: Arc<CaAdmmActor> },
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Fixed(r) => format!("fixed:{r}"),
            PolicySpec::Heuristic => "heuristic".into(),
            PolicySpec::Rlqp(s) => format!("rlqp:{s}"),
            PolicySpec::CaAdmm { label, .. } => label.clone(),
        }
    }

    pub fn build(&self, settings: &AdmmSettings) -> Result<Box<dyn RhoPolicy>, BenchError> {
        Ok(match self {
            PolicySpec::Fixed(r) => Box::new(FixedPolicy::checked(*r, settings)?),
            PolicySpec::Heuristic => Box::new(HeuristicPolicy::new()),
            PolicySpec::Rlqp(s) => Box::new(RlqpPolicy::new(&mut ChaCha8Rng::seed_from_u64(*s))?),
            PolicySpec::CaAdmm { actor, .. } => Box::new(CaAdmmPolicy::new(actor.clone())),
        })
    }
}

/// Parses everything except `ca-admm`, which needs a checkpoint.
impl FromStr for PolicySpec {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BenchError::BadPolicy(s.to_string());
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head.to_ascii_lowercase().as_str(), arg) {
            ("fixed", Some(a)) => {
                let r: f64 = a.parse().map_err(|_| bad())?;
                if r.is_finite() && r > 0.0 {
                    Ok(PolicySpec::Fixed(r))
                } else {
                    Err(bad())
                }
            }
            ("heuristic", None) => Ok(PolicySpec::Heuristic),
            ("rlqp", None) => Ok(PolicySpec::Rlqp(0)),
            ("rlqp", Some(a)) => Ok(PolicySpec::Rlqp(a.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

/// Inclusive primal-dimension range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SizeBucket {
    pub n_min: usize,
    pub n_max: usize,
}

impl SizeBucket {
    pub fn new(n_min: usize, n_max: usize) -> Result<Self, BenchError> {
        if n_min == 0 || n_min > n_max {
            return Err(BenchError::BadBucket(format!("{n_min}-{n_max}")));
        }
        Ok(Self { n_min, n_max })
    }

    pub fn mid(&self) -> f64 {
        (self.n_min + self.n_max) as f64 / 2.0
    }
}

impl fmt::Display for SizeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.n_min, self.n_max)
    }
}

impl FromStr for SizeBucket {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BenchError::BadBucket(s.to_string());
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        match s.split_once('-') {
            Some((a, b)) => Self::new(parse(a)?, parse(b)?).map_err(|_| bad()),
            None => {
                let n = parse(s)?;
                Self::new(n, n).map_err(|_| bad())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub families: Vec<Family>,
    /// Empty means each family's default range.
    pub buckets: Vec<SizeBucket>,
    pub policies: Vec<PolicySpec>,
    pub instances: usize,
    pub seed: u64,
    pub settings: AdmmSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub family: Family,
    pub bucket: SizeBucket,
    pub policy: String,
    pub instances: usize,
    pub solved: usize,
    /// Over solved instances only; `None` when nothing solved.
    pub mean_iterations: Option<f64>,
    pub std_iterations: Option<f64>,
    pub wall_time_s: f64,
}

impl BenchRow {
    pub fn solve_rate(&self) -> f64 {
        self.solved as f64 / self.instances as f64
    }
}

pub const REPORT_HEADER: &str = "family,n_range,policy,instances,mean_iterations,std_iterations,solve_rate,wall_time_s";
pub const PLOT_HEADER: &str = "family,n_min,n_max,n_mid,policy,mean_iterations,std_iterations,solve_rate";
pub const ABLATION_HEADER: &str =
    "check_interval,instances,mean_iterations,std_iterations,solve_rate,mean_policy_calls,trace_consistent";

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Every (family, bucket, policy) cell solves the same `instances` problems
/// per (family, bucket). Rows come out sorted by family, bucket, then policy
/// order as given.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>, BenchError> {
    if cfg.instances == 0 {
        return Err(BenchError::NoInstances);
    }
    let mut families = cfg.families.clone();
    families.sort_by_key(|f| Family::ALL.iter().position(|g| g == f));
    families.dedup();
    let mut rows = Vec::new();
    for family in families {
        let mut buckets = if cfg.buckets.is_empty() {
            let (a, b) = family.default_n_range();
            vec![SizeBucket::new(a, b)?]
        } else {
            cfg.buckets.clone()
        };
        buckets.sort();
        buckets.dedup();
        for bucket in buckets {
            let spec = GeneratorSpec::new(family, (bucket.n_min, bucket.n_max), cfg.seed);
            let problems = (0..cfg.instances as u64)
                .map(|i| spec.sample(i).map(|inst| inst.problem))
                .collect::<Result<Vec<_>, _>>()?;
            for policy in &cfg.policies {
                let mut its = Vec::new();
                let start = Instant::now();
                for p in &problems {
                    let mut pol = policy.build(&cfg.settings)?;
                    let (sol, _) = solve(p, pol.as_mut(), &cfg.settings)?;
                    if sol.status == SolveStatus::Solved {
                        its.push(sol.iterations as f64);
                    }
                }
                let wall = start.elapsed().as_secs_f64();
                let ms = mean_std(&its);
                rows.push(BenchRow {
                    family,
                    bucket,
                    policy: policy.label(),
                    instances: problems.len(),
                    solved: its.len(),
                    mean_iterations: ms.map(|m| m.0),
                    std_iterations: ms.map(|m| m.1),
                    wall_time_s: wall,
                });
            }
        }
    }
    Ok(rows)
}

/// Report CSV. With `timing = false` the wall-time column is left blank so
/// the file is reproducible byte for byte.
pub fn report_csv(rows: &[BenchRow], timing: bool) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in rows {
        let wall = if timing {
            format!("{:.3}", r.wall_time_s)
        } else {
            String::new()
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{:.4},{}\n",
            r.family.name(),
            r.bucket,
            r.policy,
            r.instances,
            opt(r.mean_iterations),
            opt(r.std_iterations),
            r.solve_rate(),
            wall
        ));
    }
    s
}

/// One row per (family, bucket, policy): iterations against problem size.
pub fn plot_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{PLOT_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{:.4}\n",
            r.family.name(),
            r.bucket.n_min,
            r.bucket.n_max,
            r.bucket.mid(),
            r.policy,
            opt(r.mean_iterations),
            opt(r.std_iterations),
            r.solve_rate()
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub check_interval: usize,
    pub instances: usize,
    pub solved: usize,
    pub mean_iterations: Option<f64>,
    pub std_iterations: Option<f64>,
    pub mean_policy_calls: f64,
    pub trace_consistent: bool,
}

/// A trace is consistent when record k sits at iteration k·interval (the
/// last one possibly capped at the budget) and ends at `iterations`.
pub fn trace_consistent(trace: &[TraceRecord], interval: usize, iterations: usize, max_iterations: usize) -> bool {
    if trace.is_empty() {
        return iterations == 0;
    }
    let steps_ok = trace
        .iter()
        .enumerate()
        .all(|(k, r)| r.iteration == ((k + 1) * interval).min(max_iterations));
    steps_ok && trace.last().map(|r| r.iteration) == Some(iterations)
}

pub const ABLATION_INTERVALS: [usize; 4] = [5, 10, 50, 100];

/// Re-solves the same instances with each check interval. The policy is
/// consulted once per interval, so calls × interval tracks iterations.
pub fn check_interval_ablation(
    family: Family,
    bucket: SizeBucket,
    policy: &PolicySpec,
    instances: usize,
    seed: u64,
    base: &AdmmSettings,
    intervals: &[usize],
) -> Result<Vec<AblationRow>, BenchError> {
    if instances == 0 {
        return Err(BenchError::NoInstances);
    }
    if intervals.iter().any(|&k| k == 0) {
        return Err(BenchError::BadInterval);
    }
    let spec = GeneratorSpec::new(family, (bucket.n_min, bucket.n_max), seed);
    let problems = (0..instances as u64)
        .map(|i| spec.sample(i).map(|inst| inst.problem))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for &k in intervals {
        let settings = AdmmSettings {
            check_interval: k,
            ..base.clone()
        };
        let mut its = Vec::new();
        let mut calls = 0usize;
        let mut consistent = true;
        for p in &problems {
            let mut pol = policy.build(&settings)?;
            let (sol, trace) = solve(p, pol.as_mut(), &settings)?;
            calls += trace.len();
            consistent &= trace_consistent(&trace, k, sol.iterations, settings.max_iterations);
            if sol.status == SolveStatus::Solved {
                its.push(sol.iterations as f64);
            }
        }
        let ms = mean_std(&its);
        rows.push(AblationRow {
            check_interval: k,
            instances,
            solved: its.len(),
            mean_iterations: ms.map(|m| m.0),
            std_iterations: ms.map(|m| m.1),
            mean_policy_calls: calls as f64 / instances as f64,
            trace_consistent: consistent,
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{}\n",
            r.check_interval,
            r.instances,
            opt(r.mean_iterations),
            opt(r.std_iterations),
            r.solved as f64 / r.instances as f64,
            r.mean_policy_calls,
            r.trace_consistent
        ));
    }
    s
}
