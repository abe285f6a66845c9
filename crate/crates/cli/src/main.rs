//! `caadmm`: generate problems, solve them, train the learned ρ policy and
//! run benchmarks.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 the solver did not converge.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use caadmm::admm::{AdmmSession, SolveStatus};
use caadmm::bench::{
    ablation_csv, check_interval_ablation, plot_csv, report_csv, run_bench, BenchConfig, PolicySpec, SizeBucket,
    ABLATION_INTERVALS,
};
use caadmm::format::{problem_from_str, problem_to_string, write_trace_csv};
use caadmm::graph::{build_graph, graph_to_json};
use caadmm::nn::Checkpoint;
use caadmm::probgen::{generate, Family};
use caadmm::qp::preprocess;
use caadmm::rl::{load_actor, log_csv, TrainConfig, Trainer};
use caadmm::{solve, AdmmSettings};

#[derive(Parser)]
#[command(name = "caadmm", version, about = "ADMM QP solver with learned per-constraint step sizes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write generated problems as JSON files named <family>-<n>-<seed>.json
    Gen(GenArgs),
    /// Solve one JSON problem and print a summary line
    Solve(SolveArgs),
    /// Train the actor-critic from a key = value config file
    Train(TrainArgs),
    /// Benchmark policies on generated problems
    Bench(BenchArgs),
    /// Dump the graph observation of a problem after some iterations
    Inspect(InspectArgs),
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Absolute primal and dual tolerance
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// ADMM iterations between policy calls and convergence checks
    #[arg(long, default_value_t = 10)]
    check_interval: usize,
    #[arg(long, default_value_t = 0.1)]
    rho_init: f64,
}

impl SolverArgs {
    fn settings(&self) -> Result<AdmmSettings> {
        let s = AdmmSettings {
            eps_primal: self.eps,
            eps_dual: self.eps,
            max_iterations: self.max_iter,
            check_interval: self.check_interval,
            rho_init: self.rho_init,
            ..AdmmSettings::default()
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    family: String,
    #[arg(long)]
    n: usize,
    /// Constraint count (family default when omitted)
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    problem: PathBuf,
    /// fixed:<rho>, heuristic, rlqp[:<seed>] or ca-admm (needs --checkpoint)
    #[arg(long, default_value = "fixed:0.1")]
    policy: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the residual/ρ trace CSV here
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Final checkpoint; periodic checkpoints overwrite it too
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV (default: <out>.log.csv)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from this checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated families
    #[arg(long, value_delimiter = ',', default_value = "random-qp")]
    families: Vec<String>,
    /// Comma-separated size buckets like 10-15 (family defaults when omitted)
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<String>,
    /// Comma-separated policies: fixed:<rho>, heuristic, rlqp[:<seed>], ca-admm
    #[arg(long, value_delimiter = ',', default_value = "fixed:0.1,heuristic")]
    policies: Vec<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plot-data CSV
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Leave the wall-time column blank for reproducible output
    #[arg(long)]
    no_timing: bool,
    /// Run the check-interval ablation on the first family, size and policy
    #[arg(long)]
    ablation: bool,
    /// Intervals for --ablation
    #[arg(long, value_delimiter = ',', default_values_t = ABLATION_INTERVALS)]
    intervals: Vec<usize>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct InspectArgs {
    problem: PathBuf,
    /// ADMM iterations to run before building the graph
    #[arg(long, default_value_t = 0)]
    iterations: usize,
    /// Constant ρ used for those iterations and recorded in the graph
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

enum Outcome {
    Ok,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_family(s: &str) -> Result<Family> {
    Ok(s.parse::<Family>()?)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(text: &str) -> Result<()> {
    std::io::stdout().lock().write_all(text.as_bytes())?;
    Ok(())
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&read_file(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn policy_spec(name: &str, checkpoint: Option<&Path>) -> Result<PolicySpec> {
    if name.eq_ignore_ascii_case("ca-admm") {
        let path = checkpoint.ok_or_else(|| anyhow!("policy ca-admm needs --checkpoint"))?;
        let actor = load_actor(&load_checkpoint(path)?)?;
        return Ok(PolicySpec::CaAdmm {
            label: "ca-admm".into(),
            actor: Arc::new(actor),
        });
    }
    Ok(name.parse::<PolicySpec>()?)
}

fn cmd_gen(a: GenArgs) -> Result<Outcome> {
    let family = parse_family(&a.family)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for i in 0..a.count {
        let seed = a.seed.wrapping_add(i);
        let inst = generate(family, a.n, a.m, seed)?;
        let path = a.out_dir.join(format!("{}-{}-{}.json", family.name(), a.n, seed));
        write_file(&path, &problem_to_string(&inst.problem))?;
        println!("{}", path.display());
    }
    Ok(Outcome::Ok)
}

fn cmd_solve(a: SolveArgs) -> Result<Outcome> {
    let settings = a.solver.settings()?;
    let problem = problem_from_str(&read_file(&a.problem)?).with_context(|| format!("parsing {}", a.problem.display()))?;
    let spec = policy_spec(&a.policy, a.checkpoint.as_deref())?;
    let mut policy = spec.build(&settings)?;
    let (sol, trace) = solve(&problem, policy.as_mut(), &settings)?;
    if let Some(path) = &a.trace {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace)?;
        write_file(path, &String::from_utf8(buf)?)?;
    }
    println!(
        "status={} iterations={} r_primal={:e} r_dual={:e} objective={}",
        sol.status.as_str(),
        sol.iterations,
        sol.norm_r_primal,
        sol.norm_r_dual,
        problem.objective(&sol.x)
    );
    Ok(if sol.status == SolveStatus::Solved {
        Outcome::Ok
    } else {
        Outcome::NotConverged
    })
}

fn cmd_train(a: TrainArgs) -> Result<Outcome> {
    let config = TrainConfig::parse(&read_file(&a.config)?)?;
    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(config, &load_checkpoint(path)?)?,
        None => Trainer::new(config)?,
    };
    let out = a.out.clone();
    trainer.run(|ck| {
        ck.save(&out)?;
        Ok(())
    })?;
    trainer.checkpoint().save(&a.out)?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    write_file(&log_path, &log_csv(trainer.log()))?;
    println!(
        "updates={} episodes={} checkpoint={} log={}",
        trainer.updates_done(),
        trainer.episodes_done(),
        a.out.display(),
        log_path.display()
    );
    Ok(Outcome::Ok)
}

fn cmd_bench(a: BenchArgs) -> Result<Outcome> {
    let settings = a.solver.settings()?;
    let families = a.families.iter().map(|f| parse_family(f)).collect::<Result<Vec<_>>>()?;
    let buckets = a
        .sizes
        .iter()
        .map(|s| Ok(s.parse::<SizeBucket>()?))
        .collect::<Result<Vec<_>>>()?;
    let policies = a
        .policies
        .iter()
        .map(|p| policy_spec(p, a.checkpoint.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    if families.is_empty() || policies.is_empty() {
        bail!("need at least one family and one policy");
    }
    let report = if a.ablation {
        let family = families[0];
        let bucket = match buckets.first() {
            Some(b) => *b,
            None => {
                let (lo, hi) = family.default_n_range();
                SizeBucket::new(lo, hi)?
            }
        };
        let rows = check_interval_ablation(family, bucket, &policies[0], a.instances, a.seed, &settings, &a.intervals)
            ?;
        ablation_csv(&rows)
    } else {
        let cfg = BenchConfig {
            families,
            buckets,
            policies,
            instances: a.instances,
            seed: a.seed,
            settings,
        };
        let rows = run_bench(&cfg)?;
        if let Some(path) = &a.plot {
            write_file(path, &plot_csv(&rows))?;
        }
        report_csv(&rows, !a.no_timing)
    };
    match &a.out {
        Some(path) => write_file(path, &report)?,
        None => emit(&report)?,
    }
    Ok(Outcome::Ok)
}

fn cmd_inspect(a: InspectArgs) -> Result<Outcome> {
    let settings = a.solver.settings()?;
    let problem = problem_from_str(&read_file(&a.problem)?).with_context(|| format!("parsing {}", a.problem.display()))?;
    let scaled = Arc::new(if problem.scaled { problem } else { preprocess(&problem)? });
    let mut session = AdmmSession::new(scaled.clone(), settings.clone(), None)?;
    session.set_rho(&vec![a.rho; scaled.m])?;
    if a.iterations > 0 {
        session.run_iterations(a.iterations)?;
    }
    let graph = build_graph(&scaled, session.state(), &settings, true)?;
    let text = serde_json::to_string_pretty(&graph_to_json(&graph))?;
    match &a.out {
        Some(path) => write_file(path, &text)?,
        None => emit(&format!("{text}\n"))?,
    }
    Ok(Outcome::Ok)
}
