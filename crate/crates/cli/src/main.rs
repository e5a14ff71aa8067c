use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use oraclab::agent::AgentKind;
use oraclab::config::RunConfig;
use oraclab::harness::{self, Checkpoint, EvalReport};

const OUT_ENV: &str = "ORACLAB_OUT";

#[derive(Parser)]
#[command(name = "oraclab", version, about = "Train and evaluate risk-averse constrained RL agents")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one agent on one seed.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint with the deterministic policy.
    Eval(EvalArgs),
    /// Train several agents over several seeds and aggregate the results.
    Sweep(SweepArgs),
}

/// Flags that map onto run configuration keys.
#[derive(Args, Clone, Default)]
struct ConfigFlags {
    /// JSON file with configuration keys (flags override it).
    #[arg(long)]
    config: Option<PathBuf>,
    /// guardedmaze or riskybandit.
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    total_steps: Option<u64>,
    /// Worst-case fraction of the cost distribution to constrain.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    cost_limit: Option<f64>,
    #[arg(long)]
    guard_prob: Option<f64>,
    #[arg(long)]
    beta_r: Option<f64>,
    #[arg(long)]
    beta_c: Option<f64>,
    /// Initial exploration radius.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Any other configuration key, as KEY=VALUE with a JSON value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    /// saclag, wcsac or orac.
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Root directory for run directories (default: $ORACLAB_OUT or ./runs).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    guard_prob: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Also write the report to `<out-dir>/eval.json`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    /// Comma-separated agents.
    #[arg(long, value_delimiter = ',', default_value = "saclag,wcsac,orac")]
    agent: Vec<String>,
    /// Number of seeds per agent.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// First seed; runs use seeds `seed .. seed + seeds`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of runs executed at once, each in its own process.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Layers: built-in defaults < config file < `--set` < named flags.
fn overrides(flags: &ConfigFlags, extra: &[(&str, Option<Value>)]) -> Result<Map<String, Value>, String> {
    let mut map = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            match serde_json::from_str::<Value>(&text).map_err(|e| format!("{}: {e}", path.display()))? {
                Value::Object(m) => m,
                _ => return Err(format!("{}: config must be a JSON object", path.display())),
            }
        }
        None => Map::new(),
    };
    for item in &flags.set {
        let (key, raw) = item.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{item}`"))?;
        // Bare words are taken as strings so `--set critic-mode=iqn` works unquoted.
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        map.insert(key.to_string(), value);
    }
    let named = [
        ("env", flags.env.clone().map(Value::from)),
        ("total-steps", flags.total_steps.map(Value::from)),
        ("rho", flags.rho.map(Value::from)),
        ("cost-limit", flags.cost_limit.map(Value::from)),
        ("guard-prob", flags.guard_prob.map(Value::from)),
        ("beta-r", flags.beta_r.map(Value::from)),
        ("beta-c", flags.beta_c.map(Value::from)),
        ("delta", flags.delta.map(Value::from)),
        ("eval-episodes", flags.eval_episodes.map(Value::from)),
    ];
    for (key, value) in named.into_iter().chain(extra.iter().map(|(k, v)| (*k, v.clone()))) {
        if let Some(v) = value {
            map.insert(key.to_string(), v);
        }
    }
    Ok(map)
}

fn parse_agent(name: &str) -> Result<Value, String> {
    let kind: AgentKind = name.trim().parse()?;
    Ok(json!(kind))
}

fn cmd_train(args: TrainArgs) -> Result<(), String> {
    let agent = args.agent.as_deref().map(parse_agent).transpose()?;
    let map = overrides(&args.flags, &[("agent", agent), ("seed", args.seed.map(Value::from))])?;
    let config = RunConfig::from_overrides(&map)?;
    let dir = harness::train(&config, &out_root(args.out_dir)).map_err(|e| e.to_string())?;
    let report: EvalReport = read_json(&dir.join("result.json"))?;
    println!("{}", dir.display());
    println!("{}", summary_line(&report));
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), String> {
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| e.to_string())?;
    let agent = ckpt.restore().map_err(|e| e.to_string())?;
    let mut run = ckpt.run.clone();
    if let Some(p) = args.guard_prob {
        run.guard_prob = p;
    }
    if let Some(n) = args.eval_episodes {
        run.eval_episodes = n;
    }
    if let Some(r) = args.rho {
        run.rho = r;
    }
    run.validate()?;
    let make_env = || run.make_env();
    let report = harness::evaluate(
        &agent.policy,
        &make_env,
        run.eval_episodes,
        run.rho,
        run.seed,
        ckpt.step,
        run.eval_workers,
    );
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    if let Some(dir) = args.out_dir {
        fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let path = dir.join("eval.json");
        fs::write(&path, &json).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), String> {
    let root = out_root(args.out_dir);
    let mut configs = Vec::new();
    for name in &args.agent {
        let agent = parse_agent(name)?;
        for seed in args.seed..args.seed + args.seeds {
            let map = overrides(&args.flags, &[("agent", Some(agent.clone())), ("seed", Some(Value::from(seed)))])?;
            configs.push(RunConfig::from_overrides(&map)?);
        }
    }
    fs::create_dir_all(&root).map_err(|e| format!("{}: {e}", root.display()))?;
    for c in &configs {
        let dir = root.join(harness::run_name(c));
        if dir.exists() {
            return Err(format!("run directory already exists: {}", dir.display()));
        }
    }
    if args.jobs <= 1 {
        for c in &configs {
            harness::train(c, &root).map_err(|e| e.to_string())?;
        }
    } else {
        run_in_processes(&configs, &root, args.jobs)?;
    }

    let mut rows = Vec::new();
    for c in &configs {
        let report: EvalReport = read_json(&root.join(harness::run_name(c)).join("result.json"))?;
        rows.push((c.clone(), report));
    }
    let (per_run, summary) = sweep_tables(&rows);
    write_file(&root.join("sweep.csv"), &per_run)?;
    write_file(&root.join("sweep_summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

/// Runs each config as `oraclab train --config <file>` with at most `jobs` children.
fn run_in_processes(configs: &[RunConfig], root: &Path, jobs: usize) -> Result<(), String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut pending = configs.iter().enumerate();
    let mut running: Vec<(String, std::process::Child)> = Vec::new();
    let mut failures = Vec::new();
    loop {
        while running.len() < jobs {
            let Some((i, c)) = pending.next() else { break };
            let path = tmp.path().join(format!("run{i}.json"));
            write_file(&path, &c.to_json())?;
            let child = Command::new(&exe)
                .arg("train")
                .arg("--config")
                .arg(&path)
                .arg("--out-dir")
                .arg(root)
                .spawn()
                .map_err(|e| format!("failed to start {}: {e}", exe.display()))?;
            running.push((harness::run_name(c), child));
        }
        if running.is_empty() {
            break;
        }
        let (name, mut child) = running.remove(0);
        let status = child.wait().map_err(|e| e.to_string())?;
        if !status.success() {
            failures.push(name);
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(format!("runs failed: {}", failures.join(", ")))
    }
}

fn sweep_tables(rows: &[(RunConfig, EvalReport)]) -> (String, String) {
    let mut per_run = String::from(
        "agent,seed,long_path_converged,steps_to_convergence,mean_reward,mean_cost,cvar_cost,path_short,path_long,path_none,risky_rate\n",
    );
    for (c, r) in rows {
        per_run.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            c.agent,
            c.seed,
            r.long_path_converged,
            r.steps_to_convergence.map(|s| s.to_string()).unwrap_or_default(),
            r.mean_reward,
            r.mean_cost,
            r.cvar_cost,
            r.path_histogram.short,
            r.path_histogram.long,
            r.path_histogram.none,
            r.risky_rate.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    let mut summary = String::from("agent,seeds,converged,success_rate,mean_steps_to_convergence\n");
    let mut agents: Vec<AgentKind> = rows.iter().map(|(c, _)| c.agent).collect();
    agents.dedup();
    for agent in agents {
        let runs: Vec<&EvalReport> = rows.iter().filter(|(c, _)| c.agent == agent).map(|(_, r)| r).collect();
        let steps: Vec<u64> = runs.iter().filter_map(|r| r.steps_to_convergence).collect();
        let mean_steps = if steps.is_empty() {
            String::new()
        } else {
            (steps.iter().sum::<u64>() as f64 / steps.len() as f64).to_string()
        };
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            agent,
            runs.len(),
            steps.len(),
            steps.len() as f64 / runs.len() as f64,
            mean_steps
        ));
    }
    (per_run, summary)
}

fn summary_line(r: &EvalReport) -> String {
    let mut line = format!(
        "step {}: mean reward {:.3}, mean cost {:.3}, cvar cost {:.3}, paths short/long/none {}/{}/{}",
        r.step,
        r.mean_reward,
        r.mean_cost,
        r.cvar_cost,
        r.path_histogram.short,
        r.path_histogram.long,
        r.path_histogram.none
    );
    if let Some(rate) = r.risky_rate {
        line.push_str(&format!(", risky choice rate {rate:.3}"));
    }
    if let Some(s) = r.steps_to_convergence {
        line.push_str(&format!(", converged to the long path at step {s}"));
    }
    line
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}
