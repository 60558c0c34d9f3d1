use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use scb::agent::Exploration;
use scb::env::{LabelColumn, Sampling};
use scb::glm::{GaussianPosterior, GlmAgent, Matrix, Vector};
use scb::harness::{emit_results, run_experiment, ExperimentConfig};
use scb::replay::{
    delta_sweep, generate_log, load_log, replay_evaluate_with, write_log, Fallback, FixedArmPolicy,
    FrozenScbPolicy, GreedyContextualPolicy, LoggedEvent, ReplayOptions, ReplayPolicy,
    ReplayReport, RewardModel, SyntheticLogSpec,
};
use scb::scb::{Comparator, NcSourceKind, Scoring};
use scb::{ArmId, Error, Result, RngStream};

#[derive(Parser)]
#[command(
    name = "scb",
    version,
    about = "Selectively contextual bandit experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run agents on a classification dataset and write regret traces.
    Run(RunArgs),
    /// Evaluate a policy on a uniformly logged dataset.
    Replay(ReplayArgs),
    /// Write a synthetic uniformly logged dataset.
    GenLog(GenLogArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML file with the same keys as the flags (underscored); flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Header name, zero-based index, or `last`.
    #[arg(long)]
    label_column: Option<String>,
    /// Roster name or `scb:<ts|ucb|eg>[:<comparator>[:<source>]]`; repeatable.
    #[arg(long = "agent")]
    agents: Vec<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    ucb_width: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// `ratio` or `diff`; applies to composite specs.
    #[arg(long)]
    comparator: Option<String>,
    #[arg(long)]
    anneal_rate: Option<f64>,
    /// Comma-separated timesteps.
    #[arg(long, value_delimiter = ',')]
    anneal_epochs: Option<Vec<usize>>,
    /// `beta`, `mean`, `default:<arm>`, `majority[:<feature>]`; applies to composite specs.
    #[arg(long)]
    nc_source: Option<String>,
    /// `selection`, `mean` or `per-policy`.
    #[arg(long)]
    scoring: Option<String>,
    #[arg(long)]
    no_intercept: bool,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    per_step_beta: bool,
    #[arg(long)]
    with_replacement: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunFile {
    dataset: Option<PathBuf>,
    label_column: Option<String>,
    agent: Option<AgentList>,
    runs: Option<usize>,
    horizon: Option<usize>,
    batch_size: Option<usize>,
    epsilon: Option<f64>,
    ucb_width: Option<f64>,
    lambda: Option<f64>,
    delta: Option<f64>,
    comparator: Option<String>,
    anneal_rate: Option<f64>,
    anneal_epochs: Option<Vec<usize>>,
    nc_source: Option<String>,
    scoring: Option<String>,
    intercept: Option<bool>,
    standardize: Option<bool>,
    per_step_beta: Option<bool>,
    with_replacement: Option<bool>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AgentList {
    One(String),
    Many(Vec<String>),
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[allow(clippy::field_reassign_with_default)]
fn experiment_config(args: RunArgs) -> Result<ExperimentConfig> {
    let file: RunFile = match &args.config {
        Some(p) => read_toml(p)?,
        None => RunFile::default(),
    };
    let mut c = ExperimentConfig::default();
    c.dataset = args
        .dataset
        .or(file.dataset)
        .ok_or_else(|| Error::Config("--dataset is required".into()))?;
    if let Some(l) = args.label_column.or(file.label_column) {
        c.label_column = l.parse::<LabelColumn>().expect("infallible");
    }
    let agents = if args.agents.is_empty() {
        match file.agent {
            Some(AgentList::One(a)) => vec![a],
            Some(AgentList::Many(v)) => v,
            None => c.agents.clone(),
        }
    } else {
        args.agents
    };
    c.agents = agents
        .iter()
        .flat_map(|a| a.split(','))
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .collect();
    macro_rules! pick {
        ($field:ident) => {
            if let Some(v) = args.$field.or(file.$field) {
                c.$field = v;
            }
        };
    }
    pick!(runs);
    pick!(horizon);
    pick!(batch_size);
    pick!(epsilon);
    pick!(ucb_width);
    pick!(lambda);
    pick!(anneal_rate);
    pick!(anneal_epochs);
    pick!(seed);
    c.delta = args.delta.or(file.delta);
    c.comparator = args
        .comparator
        .or(file.comparator)
        .map(|s| s.parse::<Comparator>())
        .transpose()?;
    c.nc_source = args
        .nc_source
        .or(file.nc_source)
        .map(|s| s.parse::<NcSourceKind>())
        .transpose()?;
    if let Some(s) = args.scoring.or(file.scoring) {
        c.scoring = s.parse::<Scoring>()?;
    }
    c.intercept = !args.no_intercept && file.intercept.unwrap_or(true);
    c.standardize = !args.no_standardize && file.standardize.unwrap_or(true);
    c.per_step_beta = args.per_step_beta || file.per_step_beta.unwrap_or(false);
    if args.with_replacement || file.with_replacement.unwrap_or(false) {
        c.sampling = Sampling::WithReplacement;
    }
    c.out = args.out.or(file.out);
    Ok(c)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = experiment_config(args)?;
    let result = run_experiment(&config)?;
    for a in &result.agents {
        let (m, s) = a.final_regret();
        match a.noncontextual_fraction() {
            Some((f, _)) => println!(
                "{}: final regret {m:.4} ± {s:.4}, noncontextual {:.2}%",
                a.spec,
                100.0 * f
            ),
            None => println!("{}: final regret {m:.4} ± {s:.4}", a.spec),
        }
    }
    if let Some(dir) = &config.out {
        let files = emit_results(&result, dir)?;
        log::info!("wrote {} files under {}", files.len(), dir.display());
    }
    if result.failure_count() > 0 {
        let f = result
            .agents
            .iter()
            .flat_map(|a| &a.failures)
            .next()
            .expect("counted above");
        return Err(Error::RunAborted(format!(
            "{} run(s) failed; run {} at t={}: {}",
            result.failure_count(),
            f.run,
            f.t,
            f.error
        )));
    }
    Ok(())
}

#[derive(Args, Default)]
struct ReplayArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
    /// `fixed:<arm>`, `greedy:<checkpoint>` or `scb:<checkpoint>`.
    #[arg(long)]
    policy: Option<String>,
    /// Comma-separated thresholds; requires an `scb:` policy.
    #[arg(long, value_delimiter = ',')]
    delta_sweep: Option<Vec<f64>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    comparator: Option<String>,
    /// `default:<arm>`, `majority[:<group column>]` or `mean`.
    #[arg(long)]
    fallback: Option<String>,
    /// Contexts are used as-is instead of gaining a constant feature.
    #[arg(long)]
    no_intercept: bool,
    /// Feed matched events back to the policy.
    #[arg(long)]
    learn: bool,
    /// JSON report (or sweep CSV with --delta-sweep); stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ReplayFile {
    log: Option<PathBuf>,
    policy: Option<String>,
    delta_sweep: Option<Vec<f64>>,
    delta: Option<f64>,
    comparator: Option<String>,
    fallback: Option<String>,
    intercept: Option<bool>,
    learn: Option<bool>,
    out: Option<PathBuf>,
}

fn load_model(path: &Path) -> Result<GlmAgent> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let posts = GlmAgent::read_checkpoint(file)?;
    let lambda = posts[0].lambda0();
    GlmAgent::new(
        posts.len(),
        posts[0].dim(),
        lambda,
        Exploration::EpsilonGreedy { epsilon: 0.0 },
        RngStream::new(0),
    )?
    .with_posteriors(posts)
}

fn parse_fallback(
    s: &str,
    model: &GlmAgent,
    log: &[LoggedEvent],
    intercept: bool,
) -> Result<Fallback> {
    use scb::Agent as _;
    match s.split_once(':') {
        Some(("default", a)) => {
            let arm = a
                .parse()
                .map_err(|_| Error::Config(format!("bad fallback arm {a:?}")))?;
            Ok(Fallback::Fixed(ArmId::checked(arm, model.arm_count())?))
        }
        Some(("majority", g)) => {
            Fallback::majority_from_log(log, model.arm_count(), Some(g.to_string()))
        }
        None if s == "majority" => Fallback::majority_from_log(log, model.arm_count(), None),
        None if s == "mean" => Fallback::mean_from_log(model, log, intercept),
        _ => Err(Error::Config(format!("unknown fallback {s:?}"))),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn report_json(report: &ReplayReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let file: ReplayFile = match &args.config {
        Some(p) => read_toml(p)?,
        None => ReplayFile::default(),
    };
    let log_path = args
        .log
        .or(file.log)
        .ok_or_else(|| Error::Config("--log is required".into()))?;
    let policy = args
        .policy
        .or(file.policy)
        .ok_or_else(|| Error::Config("--policy is required".into()))?;
    let sweep = args.delta_sweep.or(file.delta_sweep);
    let comparator: Comparator = args
        .comparator
        .or(file.comparator)
        .as_deref()
        .unwrap_or("ratio")
        .parse()?;
    let intercept = !args.no_intercept && file.intercept.unwrap_or(true);
    let opts = ReplayOptions {
        learn_on_match: args.learn || file.learn.unwrap_or(false),
    };
    let out = args.out.or(file.out);
    let log = load_log(&log_path)?;

    let (kind, arg) = policy.split_once(':').unwrap_or((policy.as_str(), ""));
    if sweep.is_some() && kind != "scb" {
        return Err(Error::Config("--delta-sweep needs an scb: policy".into()));
    }
    let mut boxed: Box<dyn ReplayPolicy> = match kind {
        "fixed" => {
            let arm = arg
                .parse()
                .map_err(|_| Error::Config(format!("bad policy arm {arg:?}")))?;
            Box::new(FixedArmPolicy(ArmId(arm)))
        }
        "greedy" => Box::new(GreedyContextualPolicy {
            model: load_model(Path::new(arg))?,
            intercept,
        }),
        "scb" => {
            let model = load_model(Path::new(arg))?;
            let fallback = parse_fallback(
                args.fallback
                    .or(file.fallback)
                    .as_deref()
                    .unwrap_or("default:0"),
                &model,
                &log,
                intercept,
            )?;
            if let Some(deltas) = sweep {
                let factory = |delta: f64| -> Result<FrozenScbPolicy> {
                    Ok(FrozenScbPolicy {
                        model: model.clone(),
                        fallback: fallback.clone(),
                        comparator,
                        delta,
                        intercept,
                    })
                };
                let points = delta_sweep(factory, &log, &deltas)?;
                let mut text = String::from(
                    "delta,matched,total,estimated_rate,standard_error,noncontextual_fraction\n",
                );
                for p in &points {
                    let r = &p.report;
                    let opt = |v: Option<f64>| v.map(scb::domain::fmt_real).unwrap_or_default();
                    text.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        scb::domain::fmt_real(p.delta),
                        r.matched_count,
                        r.total_count,
                        opt(r.estimated_rate),
                        opt(r.standard_error),
                        scb::domain::fmt_real(p.noncontextual_fraction)
                    ));
                }
                return write_or_print(out.as_deref(), &text);
            }
            let delta = args
                .delta
                .or(file.delta)
                .unwrap_or(scb::harness::default_delta(comparator));
            Box::new(FrozenScbPolicy {
                model,
                fallback,
                comparator,
                delta,
                intercept,
            })
        }
        other => return Err(Error::Config(format!("unknown policy kind {other:?}"))),
    };
    let report = replay_evaluate_with(boxed.as_mut(), &log, opts)?;
    write_or_print(out.as_deref(), &report_json(&report))
}

#[derive(Args, Default)]
struct GenLogArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    arms: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Number of values of the `group` column; 0 omits it.
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    min_candidates: Option<usize>,
    /// Comma-separated context-free arm means; overrides the logistic model.
    #[arg(long, value_delimiter = ',')]
    arm_means: Option<Vec<f64>>,
    /// Standard deviation of random logistic weights.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Log CSV; `<stem>.manifest.json` and `<stem>.truth.csv` go alongside.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GenLogFile {
    events: Option<usize>,
    arms: Option<usize>,
    dim: Option<usize>,
    groups: Option<usize>,
    min_candidates: Option<usize>,
    arm_means: Option<Vec<f64>>,
    scale: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

/// Ground-truth model in checkpoint form, bias as the trailing coordinate.
fn truth_checkpoint(model: &RewardModel, dim: usize) -> Result<GlmAgent> {
    let coefs: Vec<Vec<f64>> = match model {
        RewardModel::ContextFree { means } => means
            .iter()
            .map(|&m| {
                let p = m.clamp(1e-9, 1.0 - 1e-9);
                let mut w = vec![0.0; dim];
                w.push((p / (1.0 - p)).ln());
                w
            })
            .collect(),
        RewardModel::Logistic { weights, bias, .. } => weights
            .iter()
            .zip(bias)
            .map(|(w, b)| w.iter().copied().chain([*b]).collect())
            .collect(),
    };
    let posts = coefs
        .into_iter()
        .map(|w| {
            GaussianPosterior::from_parts(
                Vector::from_vec(w),
                Matrix::identity(dim + 1, dim + 1),
                1.0,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    GlmAgent::new(
        posts.len(),
        dim + 1,
        1.0,
        Exploration::EpsilonGreedy { epsilon: 0.0 },
        RngStream::new(0),
    )?
    .with_posteriors(posts)
}

fn cmd_gen_log(args: GenLogArgs) -> Result<()> {
    let file: GenLogFile = match &args.config {
        Some(p) => read_toml(p)?,
        None => GenLogFile::default(),
    };
    let events = args.events.or(file.events).unwrap_or(10_000);
    let dim = args.dim.or(file.dim).unwrap_or(5);
    let groups = args.groups.or(file.groups).unwrap_or(0);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let scale = args.scale.or(file.scale).unwrap_or(1.0);
    let out = args
        .out
        .or(file.out)
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    let model = match args.arm_means.or(file.arm_means) {
        Some(means) => RewardModel::ContextFree { means },
        None => {
            let arms = args.arms.or(file.arms).unwrap_or(5);
            let mut rng = RngStream::new(seed).substream(1);
            RewardModel::random_logistic(arms, dim, groups, scale, &mut rng)
        }
    };
    let arms = model.arm_count();
    if let Some(k) = args.arms.or(file.arms) {
        if k != arms {
            return Err(Error::Config(format!(
                "--arms {k} disagrees with {arms} arm means"
            )));
        }
    }
    let spec = SyntheticLogSpec {
        events,
        dim,
        groups,
        min_candidates: args.min_candidates.or(file.min_candidates).unwrap_or(arms),
        seed,
        model,
    };
    let (log, manifest) = generate_log(&spec)?;
    let io = |p: &Path, e: std::io::Error| Error::io(p, e);
    let f = fs::File::create(&out).map_err(|e| io(&out, e))?;
    write_log(&log, f)?;
    let stem = out.with_extension("");
    let manifest_path = PathBuf::from(format!("{}.manifest.json", stem.display()));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&manifest_path, text).map_err(|e| io(&manifest_path, e))?;
    let truth_path = PathBuf::from(format!("{}.truth.csv", stem.display()));
    let f = fs::File::create(&truth_path).map_err(|e| io(&truth_path, e))?;
    truth_checkpoint(&spec.model, dim)?.write_checkpoint(f)?;
    println!(
        "wrote {} events ({} arms) to {}; logged mean reward {:.4}",
        log.len(),
        arms,
        out.display(),
        manifest.logged_mean_reward
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Replay(a) => cmd_replay(a),
        Command::GenLog(a) => cmd_gen_log(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
