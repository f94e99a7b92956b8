use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lrq_core::assign::{build_gap_model, SeedMode};
use lrq_core::bandit::{train_offline, BanditModel, TrainConfig};
use lrq_core::control::{
    run_episode, ControlError, Controller, ControllerConfig, EpisodeConfig, LocalSampler, Policy, QuboExecutor,
    SolverChoice,
};
use lrq_core::hardware::load_pool;
use lrq_core::instance::{generate_instance, GeneratorConfig};
use lrq_core::orchestrate::{Orchestrator, OrchestratorConfig, SUMMARY_HEADER};
use lrq_core::primal::{gap_pct, ScoreMode};
use lrq_core::report::{bucket_table, instance_table, SolveResult};
use lrq_core::subsolve::SamplerConfig;
use lrq_core::{Execution, Instance, PenaltyConfig, PenaltyKind};

#[derive(Parser)]
#[command(name = "lrq", version, about = "Lagrangian knapsack-QUBO decomposition for CVRP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one or more instances and write result, episode and audit artifacts.
    Solve(SolveArgs),
    /// Generate random instances in VRP format.
    Gen(GenArgs),
    /// Train the configuration bandit offline on a device pool.
    BanditTrain(TrainArgs),
    /// Aggregate result JSON files into summary tables.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum SolverArg {
    Exact,
    Sampler,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum PolicyArg {
    SubgradientConst,
    SubgradientDiminishing,
    Polyak,
    DiagPrecond,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum PenaltyArg {
    Tilted,
    Taylor,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum ScoreArg {
    Proxy,
    Routing,
}

#[derive(Args, Default)]
struct SolveArgs {
    /// Flat `key = value` file; explicit flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    instance: Vec<PathBuf>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long, value_enum)]
    penalty: Option<PenaltyArg>,
    /// Bandit model JSON, or `off`.
    #[arg(long)]
    bandit: Option<String>,
    /// Directory of device descriptors, or `off`.
    #[arg(long)]
    pool: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_enum)]
    score: Option<ScoreArg>,
    /// Record measured wall-clock time (makes artifacts run-dependent).
    #[arg(long)]
    wall_clock: bool,
    /// Update the loaded bandit from executed calls.
    #[arg(long)]
    online_updates: bool,
    /// Run every loop sequentially.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    n_min: usize,
    #[arg(long, default_value_t = 50)]
    n_max: usize,
    #[arg(long, default_value_t = 100)]
    capacity: u32,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    episodes: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding `*.result.json` files.
    results: PathBuf,
    /// Where to write the tables; defaults to the results directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Settings after merging defaults, the config file and explicit flags.
#[derive(Debug, Clone, PartialEq)]
struct RunConfig {
    instances: Vec<PathBuf>,
    solver: SolverArg,
    policy: Policy,
    penalty: PenaltyKind,
    bandit: Option<PathBuf>,
    pool: Option<PathBuf>,
    seed: u64,
    out: PathBuf,
    t_max: usize,
    eta0: f64,
    sampler: SamplerConfig,
    score: ScoreMode,
    wall_clock: bool,
    online_updates: bool,
    exec: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cc = ControllerConfig::default();
        RunConfig {
            instances: Vec::new(),
            solver: SolverArg::Exact,
            policy: cc.policy,
            penalty: PenaltyKind::Tilted,
            bandit: None,
            pool: None,
            seed: 0,
            out: PathBuf::from("out"),
            t_max: cc.t_max,
            eta0: cc.eta0,
            sampler: SamplerConfig::default(),
            score: ScoreMode::Proxy,
            wall_clock: false,
            online_updates: false,
            exec: Execution::Parallel,
        }
    }
}

fn parse_enum<T: ValueEnum>(key: &str, v: &str) -> Result<T> {
    T::from_str(v, true).map_err(|_| anyhow!("invalid value `{v}` for `{key}`"))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("invalid value `{v}` for `{key}`"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("invalid value `{v}` for `{key}`"),
    }
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (v != "off" && !v.is_empty()).then(|| PathBuf::from(v))
}

fn policy_of(p: PolicyArg) -> Policy {
    match p {
        PolicyArg::SubgradientConst => Policy::SubgradientConst,
        PolicyArg::SubgradientDiminishing => Policy::SubgradientDiminishing,
        PolicyArg::Polyak => Policy::Polyak,
        PolicyArg::DiagPrecond => Policy::DiagPrecond,
    }
}

fn penalty_of(p: PenaltyArg) -> PenaltyKind {
    match p {
        PenaltyArg::Tilted => PenaltyKind::Tilted,
        PenaltyArg::Taylor => PenaltyKind::Taylor,
    }
}

fn score_of(s: ScoreArg) -> ScoreMode {
    match s {
        ScoreArg::Proxy => ScoreMode::Proxy,
        ScoreArg::Routing => ScoreMode::Routing,
    }
}

/// Parses `key = value` lines; `#` starts a comment.
fn read_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("config line {}: expected key = value", no + 1))?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

fn apply_config(cfg: &mut RunConfig, map: &BTreeMap<String, String>) -> Result<()> {
    for (k, v) in map {
        match k.as_str() {
            "instance" => cfg.instances = v.split(',').map(|s| PathBuf::from(s.trim())).collect(),
            "solver" => cfg.solver = parse_enum(k, v)?,
            "policy" => cfg.policy = policy_of(parse_enum(k, v)?),
            "penalty" => cfg.penalty = penalty_of(parse_enum(k, v)?),
            "bandit" => cfg.bandit = optional_path(v),
            "pool" => cfg.pool = optional_path(v),
            "seed" => cfg.seed = parse_num(k, v)?,
            "out" => cfg.out = PathBuf::from(v),
            "t_max" => cfg.t_max = parse_num(k, v)?,
            "eta0" => cfg.eta0 = parse_num(k, v)?,
            "shots" => cfg.sampler.shots = parse_num(k, v)?,
            "sweeps" => cfg.sampler.sweeps = parse_num(k, v)?,
            "temperature" => cfg.sampler.temperature = parse_num(k, v)?,
            "noise" => cfg.sampler.noise_flip_prob = parse_num(k, v)?,
            "score" => cfg.score = score_of(parse_enum(k, v)?),
            "wall_clock" => cfg.wall_clock = parse_bool(k, v)?,
            "online_updates" => cfg.online_updates = parse_bool(k, v)?,
            "sequential" => {
                cfg.exec = if parse_bool(k, v)? { Execution::Sequential } else { Execution::Parallel }
            }
            _ => bail!("unknown config key `{k}`"),
        }
    }
    Ok(())
}

fn apply_flags(cfg: &mut RunConfig, a: &SolveArgs) {
    if !a.instance.is_empty() {
        cfg.instances = a.instance.clone();
    }
    if let Some(v) = a.solver {
        cfg.solver = v;
    }
    if let Some(v) = a.policy {
        cfg.policy = policy_of(v);
    }
    if let Some(v) = a.penalty {
        cfg.penalty = penalty_of(v);
    }
    if let Some(v) = &a.bandit {
        cfg.bandit = optional_path(v);
    }
    if let Some(v) = &a.pool {
        cfg.pool = optional_path(v);
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = a.t_max {
        cfg.t_max = v;
    }
    if let Some(v) = a.eta0 {
        cfg.eta0 = v;
    }
    if let Some(v) = a.shots {
        cfg.sampler.shots = v;
    }
    if let Some(v) = a.sweeps {
        cfg.sampler.sweeps = v;
    }
    if let Some(v) = a.temperature {
        cfg.sampler.temperature = v;
    }
    if let Some(v) = a.noise {
        cfg.sampler.noise_flip_prob = v;
    }
    if let Some(v) = a.score {
        cfg.score = score_of(v);
    }
    cfg.wall_clock |= a.wall_clock;
    cfg.online_updates |= a.online_updates;
    if a.sequential {
        cfg.exec = Execution::Sequential;
    }
}

fn resolve(a: &SolveArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        apply_config(&mut cfg, &read_config(&text)?)?;
    }
    apply_flags(&mut cfg, a);
    if cfg.instances.is_empty() {
        bail!("no instance given");
    }
    for p in cfg.instances.iter().chain(&cfg.bandit).chain(&cfg.pool) {
        if !p.exists() {
            bail!("path does not exist: {}", p.display());
        }
    }
    Ok(cfg)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "instance".into())
}

enum Solved {
    Feasible,
    NoFeasible,
}

fn solve_one(cfg: &RunConfig, path: &Path, summary: &mut String) -> Result<Solved> {
    let inst = Instance::load(path).with_context(|| format!("loading {}", path.display()))?;
    let name = if inst.name.is_empty() { stem(path) } else { inst.name.clone() };
    let model = build_gap_model(&inst, SeedMode::Angular).with_context(|| format!("building assignment model for {name}"))?;
    let solver = match cfg.solver {
        SolverArg::Exact => SolverChoice::Exact,
        SolverArg::Sampler => SolverChoice::Sampler {
            sampler: SamplerConfig { seed: cfg.seed, ..cfg.sampler },
            penalty: PenaltyConfig { kind: cfg.penalty, ..Default::default() },
        },
    };
    let ecfg = EpisodeConfig {
        controller: ControllerConfig { policy: cfg.policy, t_max: cfg.t_max, eta0: cfg.eta0, ..Default::default() },
        solver,
        score_mode: cfg.score,
        seed: cfg.seed,
        exec: cfg.exec,
        record_wall_clock: cfg.wall_clock,
        ..Default::default()
    };
    let mut ctl = Controller::for_instance(ecfg.controller, &inst);

    let mut orchestrator = match &cfg.pool {
        Some(dir) => {
            let pool = load_pool(dir).with_context(|| format!("loading device pool {}", dir.display()))?;
            let bandit = match &cfg.bandit {
                Some(p) => Some(BanditModel::from_json(&fs::read_to_string(p)?).context("reading bandit model")?),
                None => None,
            };
            let ocfg = OrchestratorConfig { seed: cfg.seed, online_updates: cfg.online_updates, ..Default::default() };
            Some(Orchestrator::from_pool(pool, ocfg, bandit).context("building orchestrator")?)
        }
        None => None,
    };
    let mut local = LocalSampler;
    let executor: &mut dyn QuboExecutor = match orchestrator.as_mut() {
        Some(o) => o,
        None => &mut local,
    };

    let started = Instant::now();
    let outcome = run_episode(&inst, &model, &ecfg, &mut ctl, executor);
    let wall = cfg.wall_clock.then(|| started.elapsed().as_secs_f64());
    let out = &cfg.out;
    let file = |ext: &str| out.join(format!("{name}.{ext}"));

    let (result, status) = match outcome {
        Ok(r) => {
            fs::write(file("episode.jsonl"), r.log.to_jsonl())?;
            let feasible = r.best.assignment_feasible && r.best.route_feasible;
            let res = SolveResult {
                instance: name.clone(),
                n: inst.n(),
                fleet: inst.fleet,
                cost: Some(r.best.cost),
                bks: inst.bks,
                gap: gap_pct(r.best.cost, inst.bks).ok(),
                feasible,
                iterations: r.iterations,
                circuits: r.qubo_calls,
                lower_bound: r.lb.is_finite().then_some(r.lb),
                max_width: r.max_width,
                virtual_time: r.virtual_time,
                wall_time: wall,
                routes: r.best.routes.clone(),
                device_mix: orchestrator.as_ref().map(|o| o.device_mix()).unwrap_or_default(),
            };
            (res, if feasible { Solved::Feasible } else { Solved::NoFeasible })
        }
        Err(ControlError::NoFeasibleSolution) => {
            let res = SolveResult {
                instance: name.clone(),
                n: inst.n(),
                fleet: inst.fleet,
                cost: None,
                bks: inst.bks,
                gap: None,
                feasible: false,
                iterations: 0,
                circuits: 0,
                lower_bound: None,
                max_width: 0,
                virtual_time: orchestrator.as_ref().map_or(0.0, |o| o.clock),
                wall_time: wall,
                routes: Vec::new(),
                device_mix: orchestrator.as_ref().map(|o| o.device_mix()).unwrap_or_default(),
            };
            (res, Solved::NoFeasible)
        }
        Err(e) => return Err(anyhow!(e).context(format!("solving {name}"))),
    };
    fs::write(file("result.json"), serde_json::to_string_pretty(&result)? + "\n")?;
    if let Some(o) = &orchestrator {
        fs::write(file("audit.jsonl"), o.audit_jsonl())?;
        summary.push_str(&o.summary_row(&name));
        summary.push('\n');
    }
    match &result.gap {
        Some(g) => eprintln!("{name}: cost {:.1} gap {g:.2}% feasible {}", result.cost.unwrap_or(f64::NAN), result.feasible),
        None => eprintln!("{name}: cost {:?} feasible {}", result.cost, result.feasible),
    }
    Ok(status)
}

fn cmd_solve(a: &SolveArgs) -> Result<ExitCode> {
    let cfg = resolve(a)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut summary = String::new();
    let mut all_feasible = true;
    for path in &cfg.instances {
        if let Solved::NoFeasible = solve_one(&cfg, path, &mut summary)? {
            all_feasible = false;
        }
    }
    if cfg.pool.is_some() {
        fs::write(cfg.out.join("summary.csv"), format!("{SUMMARY_HEADER}\n{summary}"))?;
    }
    Ok(if all_feasible { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_gen(a: &GenArgs) -> Result<ExitCode> {
    fs::create_dir_all(&a.out)?;
    for i in 0..a.count {
        let gc = GeneratorConfig {
            n_range: (a.n_min, a.n_max),
            capacity: a.capacity,
            seed: a.seed.wrapping_add(i as u64),
            ..Default::default()
        };
        let inst = generate_instance(&gc)?;
        let path = a.out.join(format!("{}.vrp", inst.name));
        fs::write(&path, inst.to_vrp_string())?;
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(a: &TrainArgs) -> Result<ExitCode> {
    let pool = load_pool(&a.pool).with_context(|| format!("loading device pool {}", a.pool.display()))?;
    let cfg = TrainConfig { episodes: a.episodes, seed: a.seed, alpha: a.alpha, ..Default::default() };
    let out = train_offline(&pool, &cfg)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("bandit.json"), out.model.to_json())?;
    fs::write(a.out.join("curve.csv"), out.curve_csv())?;
    let last = out.curve.last().map_or(0.0, |p| p.rolling_mean);
    eprintln!("trained {} episodes, final rolling reward {last:.3}", out.curve.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(a: &ReportArgs) -> Result<ExitCode> {
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.results)
        .with_context(|| format!("reading {}", a.results.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".result.json"))
        .collect();
    paths.sort();
    let results = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<SolveResult>(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = instance_table(&results)?;
    let buckets = bucket_table(&results)?;
    let out = a.out.clone().unwrap_or_else(|| a.results.clone());
    fs::create_dir_all(&out)?;
    fs::write(out.join("instances.csv"), &table)?;
    fs::write(out.join("buckets.csv"), &buckets)?;
    // A closed pipe (e.g. `| head`) is not an error; the tables are already on disk.
    match write!(std::io::stdout().lock(), "{table}\n{buckets}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Gen(a) => cmd_gen(a),
        Command::BanditTrain(a) => cmd_train(a),
        Command::Report(a) => cmd_report(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
