use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qrrn::checkpoint::{self, CheckpointError};
use qrrn::env::EnvConfig;
use qrrn::oracle::{empirical_quantiles, greedy_rollout, mc_returns, policy_from_route, value_iteration};
use qrrn::policies::ExecPolicy;
use qrrn::report;
use qrrn::roadnet::{
    enumerate_simple_paths, generate_scenario, render_routes, shortest_path, GraphMap, MapError, Route,
    ScenarioKind, ScenarioParams,
};
use qrrn::trainer::{run_sweep, run_trials, RunConfig, Session, TrainError};

const BUNDLED: &[(&str, &str)] = &[
    ("mini-town-a", include_str!("../../../configs/mini-town-a.json")),
    ("mini-town-b", include_str!("../../../configs/mini-town-b.json")),
];

#[derive(Parser)]
#[command(name = "qrrn", version, about = "Distributional route planning on road networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario map and list its routes.
    GenMap(GenMapArgs),
    /// Train a single seed, optionally resuming from a checkpoint.
    Train(TrainArgs),
    /// Roll out execution policies from a checkpoint.
    Eval(EvalArgs),
    /// Train every seed of a config and write curves, routes and checkpoints.
    Trials(TrialsArgs),
    /// Value iteration, shortest path and Monte-Carlo returns on a map.
    Oracle(OracleArgs),
    /// Print the learned return distributions at one state.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    TwoRoute,
    ThreeRoute,
}

#[derive(Args)]
struct GenMapArgs {
    kind: Kind,
    #[arg(long)]
    noisy_len: usize,
    #[arg(long)]
    robust_len: usize,
    #[arg(long)]
    robust2_len: Option<usize>,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write a DOT rendering with the enumerated routes.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigSource {
    /// Run config JSON file.
    config: Option<PathBuf>,
    /// Use a bundled config instead (mini-town-a, mini-town-b).
    #[arg(long, conflicts_with = "config")]
    bundled: Option<String>,
    /// Override the seed list, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    total_steps: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Seed to train (default: the first config seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after this many steps (checkpoint and resume later).
    #[arg(long)]
    until: Option<u64>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory (default: the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyName {
    Greedy,
    Ssd,
    TSsd,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    /// Policy to roll out (default: every configured policy).
    #[arg(long)]
    policy: Option<PolicyName>,
    #[arg(long)]
    ssd_thres: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the rolled-out routes as DOT.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct TrialsArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Worker threads (default: number of seeds capped at available cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also draw the aggregate curves as SVG.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct OracleArgs {
    map: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    r_base: f64,
    #[arg(long, default_value_t = 0.0)]
    r_loopback: f64,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    /// Route file (`{"nodes": [...]}` or a bare array) to evaluate by Monte Carlo.
    #[arg(long)]
    mc_policy: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    episodes: usize,
    #[arg(long, default_value_t = 4)]
    quantiles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    state: usize,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn runtime(m: impl ToString) -> Self {
        Failure { code: 1, message: m.to_string() }
    }
    fn usage(m: impl ToString) -> Self {
        Failure { code: 2, message: m.to_string() }
    }
    fn io(path: &Path, e: impl ToString) -> Self {
        Failure { code: 3, message: format!("{}: {}", path.display(), e.to_string()) }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Map(_) | TrainError::Io { .. } => Failure::usage(e),
            TrainError::Env(_) | TrainError::Learner(_) => Failure::runtime(e),
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<Session, Failure> {
    checkpoint::load(path).map_err(|e| match e {
        CheckpointError::Io { .. } | CheckpointError::Corrupt(_) | CheckpointError::VersionMismatch { .. } => {
            Failure::usage(e)
        }
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

fn seed_offset() -> Result<i64, Failure> {
    match std::env::var("QRRN_SEED_OFFSET") {
        Ok(v) => v.trim().parse().map_err(|_| Failure::usage(format!("QRRN_SEED_OFFSET is not an integer: {:?}", v))),
        Err(_) => Ok(0),
    }
}

fn load_config(src: &ConfigSource) -> Result<RunConfig, Failure> {
    let mut cfg = match (&src.config, &src.bundled) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => {
            let text = BUNDLED
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| *t)
                .ok_or_else(|| Failure::usage(format!("no bundled config named {:?}", name)))?;
            RunConfig::from_json(text)?
        }
        (None, None) => return Err(Failure::usage("give a config path or --bundled NAME")),
    };
    if let Some(seeds) = &src.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(steps) = src.total_steps {
        cfg.total_steps = steps;
    }
    cfg.offset_seeds(seed_offset()? as u64);
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.name.as_deref().unwrap_or("run")))
}

fn route_inventory(map: &GraphMap, max_len: usize) -> String {
    let mut out = String::new();
    for r in enumerate_simple_paths(map, max_len) {
        let flag = if r.passes_crosswalk(map) { "crosswalk" } else { "clear" };
        writeln!(out, "{:>3} edges  {:<9}  {:?}", r.len(), flag, r.nodes).unwrap();
    }
    out
}

fn cmd_gen_map(args: GenMapArgs) -> Result<(), Failure> {
    let kind = match args.kind {
        Kind::TwoRoute => ScenarioKind::TwoRoute,
        Kind::ThreeRoute => ScenarioKind::ThreeRoute,
    };
    let params = ScenarioParams { noisy_len: args.noisy_len, robust_len: args.robust_len, robust2_len: args.robust2_len };
    let map = generate_scenario(kind, params).map_err(Failure::usage)?;
    write_file(&args.output, map.to_json() + "\n")?;
    let max_len = args.robust2_len.unwrap_or(0).max(args.robust_len).max(args.noisy_len);
    let routes = enumerate_simple_paths(&map, max_len);
    print!("{}", route_inventory(&map, max_len));
    if let Some(dot) = &args.dot {
        let labelled: Vec<(Route, String)> =
            routes.iter().enumerate().map(|(i, r)| (r.clone(), format!("route {}", i))).collect();
        write_file(dot, render_routes(&map, &labelled).map_err(Failure::runtime)?)?;
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let mut session = match &args.resume {
        Some(path) => load_checkpoint(path)?,
        None => {
            let cfg = load_config(&args.source)?;
            let seed = args.seed.unwrap_or(cfg.seeds[0]);
            let map = Arc::new(cfg.map.load()?);
            Session::new(&cfg, map, seed)?
        }
    };
    let cfg = session.config().clone();
    let target = args.until.unwrap_or(cfg.total_steps);
    session.run_until(target)?;
    let dir = output_dir(&cfg, &args.out);
    let seed = session.seed();
    let policies = cfg.exec_policies().iter().map(|p| p.name().to_string()).collect();
    let rep = qrrn::trainer::TrialReport::from_seeds(policies, vec![session.report()]);
    write_file(&dir.join(format!("curves-seed-{}.csv", seed)), report::curves_csv(&rep))?;
    let ck = dir.join(format!("seed-{}.qrrn", seed));
    write_file(&ck, checkpoint::to_bytes(&session))?;
    println!("seed {} at step {} of {}; checkpoint {}", seed, session.step(), cfg.total_steps, ck.display());
    for p in session.points().iter().rev().take(cfg.exec_policies().len()).rev() {
        println!("{:<8} step {:>8} return {:>10.3} {}", p.policy, p.step, p.discounted_return, p.route_class);
    }
    Ok(())
}

fn policy_from(name: PolicyName, thres: Option<f64>, cfg: &RunConfig) -> ExecPolicy {
    match name {
        PolicyName::Greedy => ExecPolicy::Greedy,
        PolicyName::Ssd => ExecPolicy::ssd(),
        PolicyName::TSsd => {
            let configured = cfg.exec_policies().into_iter().find_map(|p| match p {
                ExecPolicy::ThresholdedSsd { thres } => Some(thres),
                _ => None,
            });
            ExecPolicy::ThresholdedSsd { thres: thres.or(configured).unwrap_or(5.0 * cfg.env.r_base) }
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let session = load_checkpoint(&args.checkpoint)?;
    let cfg = session.config().clone();
    let policies = match args.policy {
        Some(p) => vec![policy_from(p, args.ssd_thres, &cfg)],
        None => cfg.exec_policies(),
    };
    let mut routes = Vec::new();
    for p in policies {
        let trace = session.evaluate(&p, args.seed)?;
        let class = session.classify(&trace);
        println!(
            "{:<8} return {:>10.3} reached_goal {} class {} steps {} route {:?}",
            p.name(),
            trace.discounted_return,
            trace.reached_goal,
            class,
            trace.actions.len(),
            qrrn::roadnet::collapse_repeats(&trace.visited).nodes
        );
        routes.push((qrrn::roadnet::collapse_repeats(&trace.visited), p.name().to_string()));
    }
    if let Some(dot) = &args.dot {
        write_file(dot, render_routes(session.map(), &routes).map_err(Failure::runtime)?)?;
    }
    Ok(())
}

fn cmd_trials(args: TrialsArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.source)?;
    let map = Arc::new(cfg.map.load()?);
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let jobs = args.jobs.unwrap_or_else(|| cfg.seeds.len().min(cores)).max(1);
    let dir = output_dir(&cfg, &args.out);

    if cfg.lr_sweep.is_some() {
        let sweep = run_sweep(&cfg, map, jobs)?;
        let csv = report::sweep_csv(&sweep);
        write_file(&dir.join("sweep.csv"), &csv)?;
        print!("{}", csv);
        return Ok(());
    }

    let trials = run_trials(&cfg, map.clone(), jobs)?;
    write_file(&dir.join("curves.csv"), report::curves_csv(&trials.report))?;
    write_file(&dir.join("aggregate.csv"), report::aggregate_csv(&trials.report))?;
    if args.svg {
        write_file(&dir.join("curves.svg"), report::curves_svg(&trials.report))?;
    }
    for policy in &trials.report.policies {
        let mut counts: BTreeMap<Route, usize> = BTreeMap::new();
        for s in &trials.report.seeds {
            if let Some((_, r)) = s.final_routes.get(policy) {
                *counts.entry(r.clone()).or_default() += 1;
            }
        }
        let labelled: Vec<(Route, String)> =
            counts.into_iter().map(|(r, n)| (r, format!("{} x{}", policy, n))).collect();
        let dot = render_routes(&map, &labelled).map_err(Failure::runtime)?;
        write_file(&dir.join(format!("routes-{}.dot", policy)), dot)?;
    }
    for s in &trials.sessions {
        write_file(&dir.join("checkpoints").join(format!("seed-{}.qrrn", s.seed())), checkpoint::to_bytes(s))?;
    }
    print!("{}", report::summary_table(&trials.report));
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn read_route(path: &Path) -> Result<Route, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {}", path.display(), e)))?;
    serde_json::from_str::<Route>(&text)
        .or_else(|_| serde_json::from_str::<Vec<usize>>(&text).map(Route::new))
        .map_err(|e| Failure::usage(format!("{}: not a route: {}", path.display(), e)))
}

fn cmd_oracle(args: OracleArgs) -> Result<(), Failure> {
    let text =
        std::fs::read_to_string(&args.map).map_err(|e| Failure::usage(format!("{}: {}", args.map.display(), e)))?;
    let map = Arc::new(GraphMap::from_json(&text).map_err(Failure::usage)?);
    let cfg = EnvConfig::new(args.r_base, args.r_loopback);
    cfg.validate().map_err(Failure::usage)?;
    if !(0.0..1.0).contains(&args.gamma) {
        return Err(Failure::usage("gamma must lie in [0, 1)"));
    }
    let q = value_iteration(&map, &cfg, args.gamma, 1e-12);
    println!("Q* (gamma {}, r_base {}, r_loopback {})", args.gamma, args.r_base, args.r_loopback);
    print!("{:>6}", "state");
    for a in 0..map.action_dim() {
        print!(" {:>12}", format!("a{}", a));
    }
    println!();
    for s in 0..map.num_states() {
        print!("{:>6}", s);
        for a in 0..map.action_dim() {
            print!(" {:>12.6}", q.get(s, a));
        }
        println!();
    }
    let sp = shortest_path(&map, map.start(), map.goals()).map_err(|e: MapError| Failure::runtime(e))?;
    println!("shortest path ({} edges): {:?}", sp.len(), sp.nodes);
    let rollout = greedy_rollout(&map, &q, 10 * map.num_states());
    println!("greedy Q* rollout ({} edges): {:?}", rollout.len(), rollout.nodes);

    if let Some(path) = &args.mc_policy {
        let route = read_route(path)?;
        route.validate(&map).map_err(Failure::usage)?;
        if route.nodes.first() != Some(&map.start()) || !route.nodes.last().is_some_and(|n| map.goals().contains(n)) {
            return Err(Failure::usage("monte-carlo route must run from the start node to a goal"));
        }
        let policy = policy_from_route(&map, &route);
        let d = mc_returns(&map, &cfg, &policy, map.start(), args.gamma, args.episodes, args.seed)
            .map_err(Failure::runtime)?;
        println!(
            "monte carlo over {} episodes: mean {:.6} sample variance {:.6} std error {:.6}",
            d.len(),
            d.mean(),
            d.sample_variance(),
            d.std_error()
        );
        let q = empirical_quantiles(&d, args.quantiles).map_err(Failure::runtime)?;
        println!("empirical quantiles (N = {}): {:?}", args.quantiles, q.atoms());
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), Failure> {
    let session = load_checkpoint(&args.checkpoint)?;
    let map = session.map();
    if args.state >= map.num_states() {
        return Err(Failure::usage(format!("state {} out of range (map has {})", args.state, map.num_states())));
    }
    let agent = session.agent();
    let dists = agent.action_dists(args.state);
    println!("state {} at step {} (seed {})", args.state, session.step(), session.seed());
    for (a, d) in dists.iter().enumerate() {
        let next = map.transition(args.state, a).map_err(Failure::runtime)?;
        let dest = if next == args.state { "loopback".to_string() } else { format!("-> {}", next) };
        println!(
            "  a{} {:<9} atoms {:?} mean {:.4} variance {:.4}",
            a,
            dest,
            d.atoms().iter().map(|x| format!("{:.4}", x)).collect::<Vec<_>>(),
            d.mean(),
            d.variance()
        );
    }
    let mut policies = session.config().exec_policies();
    if !policies.iter().any(|p| matches!(p, ExecPolicy::ThresholdedSsd { .. })) {
        policies.push(policy_from(PolicyName::TSsd, None, session.config()));
    }
    for p in policies {
        let label = match p {
            ExecPolicy::ThresholdedSsd { thres } => format!("t-ssd({})", thres),
            _ => p.name().to_string(),
        };
        println!("  {:<12} chooses a{}", label, p.select(&dists));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenMap(a) => cmd_gen_map(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Trials(a) => cmd_trials(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
