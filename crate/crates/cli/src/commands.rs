use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use permurank::baselines::{train_naive, train_pgrank, train_urcc, NaiveTarget};
use permurank::config::RunConfig;
use permurank::data::{generate, load_split, save_splits, Dataset, LabelMode, Split};
use permurank::diagnostics::gradient_suite;
use permurank::evaluation::{
    dcg_clicks, eval_kd, eval_lau, export_requests, import_responses, rank_all, simulate_responses, MetricsReport,
};
use permurank::models::{Checkpoint, RankerModel, RewardModel};
use permurank::oracles::BehavioralUser;
use permurank::pipeline::{prepare_data, reward_config, run_kd, run_lau, RunDir, REWARDRANK};
use permurank::training::{train_ranker, train_reward, TrainConfig, TrainReport};
use permurank::{Error, Result};

/// Relative-error threshold of the `gradcheck` command.
const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "permurank", version, about = "Counterfactual learning-to-rank experiments")]
pub struct Cli {
    /// Run configuration file (JSON); defaults to the `paper-kd` preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Named preset used when no config file is given.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Seed for data, initialization and sampling; overrides the config.
    #[arg(long, global = true, env = "PERMURANK_SEED")]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory (default: runs/<timestamp>-s<seed>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic world and write its three splits.
    GenData {
        /// Query groups over all splits.
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long, value_enum)]
        label_mode: Option<LabelArg>,
        /// Items per group.
        #[arg(long)]
        list_len: Option<usize>,
        /// Write gzip-compressed files.
        #[arg(long)]
        gzip: bool,
    },
    /// Fit the utility model on logged permutations.
    TrainReward {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train a ranker against a frozen utility model.
    TrainRanker {
        #[command(flatten)]
        data: DataArgs,
        /// Utility model checkpoint.
        #[arg(long)]
        reward: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        /// SoftSort temperature.
        #[arg(long)]
        tau: Option<f64>,
        /// Hard forward pass with the relaxed gradient.
        #[arg(long)]
        ste: bool,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train a comparison ranker.
    TrainBaseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[command(flatten)]
        data: DataArgs,
        /// Utility model checkpoint (pgrank, urcc).
        #[arg(long)]
        reward: Option<PathBuf>,
        /// Per-item target of the naive ranker.
        #[arg(long, value_enum)]
        target: Option<TargetArg>,
        /// Permutations sampled per group and step (pgrank).
        #[arg(long)]
        samples: Option<usize>,
        /// Ranker checkpoint to start from (urcc).
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score a ranker under one protocol.
    Eval {
        #[arg(value_enum)]
        protocol: Protocol,
        #[command(flatten)]
        data: DataArgs,
        /// Ranker checkpoint.
        #[arg(long)]
        ranker: PathBuf,
        /// Method name in the metrics file.
        #[arg(long)]
        method: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Also write judge requests for the ranked lists (lau).
        #[arg(long)]
        export_requests: Option<PathBuf>,
        /// Score from judge responses instead of the built-in user (lau).
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// Answer a judge request file with the built-in behavioral user.
    Judge {
        /// Request file written by `eval lau --export-requests`.
        #[arg(long)]
        requests: PathBuf,
        /// Response file to write.
        #[arg(long)]
        responses: PathBuf,
    },
    /// Compare analytic gradients of every component with finite differences.
    Gradcheck {
        /// Random instances per component.
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Print the metric tables stored in run directories.
    Report {
        /// Run directories to aggregate.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Run a whole experiment chain.
    Run {
        #[arg(value_enum, default_value = "kd")]
        protocol: RunProtocol,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory written by `gen-data` (or its `data` subdirectory).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BaselineKind {
    Naive,
    Pgrank,
    Urcc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Protocol {
    Kd,
    Lau,
    Logged,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RunProtocol {
    Kd,
    Lau,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LabelArg {
    BinaryClick,
    SoftIps,
    Behavioral,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    Relevance,
    LoggedClick,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Outcome of a command that ran to completion.
pub enum Status {
    Success(String),
    /// Ran, but a numerical check failed.
    Failed(String),
}

struct Context {
    cfg: RunConfig,
    out: Option<PathBuf>,
}

impl Context {
    /// Creates the run directory and records the resolved config in it.
    fn run_dir(&self) -> Result<RunDir> {
        let root = self.out.clone().unwrap_or_else(|| {
            let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
            PathBuf::from("runs").join(format!("{stamp}-s{}", self.cfg.seed))
        });
        let dir = RunDir::create(root)?;
        dir.write(&dir.config(), &self.cfg.to_json_pretty()?)?;
        info!("writing to {}", dir.root.display());
        Ok(dir)
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::paper_kd(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<Status> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Contract("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Contract(e.to_string()))?;
    }
    let mut cfg = base_config(&cli)?;
    if let Command::GenData {
        groups,
        label_mode,
        list_len,
        ..
    } = &cli.command
    {
        if let Some(g) = groups {
            cfg.queries = queries_for(*g, cfg.world.logged_per_query)?;
        }
        if let Some(m) = label_mode {
            cfg.world.label_mode = match m {
                LabelArg::BinaryClick => LabelMode::BinaryClick,
                LabelArg::SoftIps => LabelMode::SoftIps,
                LabelArg::Behavioral => LabelMode::Behavioral,
            };
        }
        if let Some(l) = list_len {
            cfg.world.list_len = *l;
        }
    }
    if let Command::Run { protocol: RunProtocol::Lau } = cli.command {
        if cli.config.is_none() && cli.preset.is_none() {
            cfg = RunConfig {
                seed: cfg.seed,
                ..RunConfig::paper_lau()
            };
        }
    }
    let ctx = Context {
        cfg: cfg.resolved()?,
        out: cli.out,
    };
    match cli.command {
        Command::GenData { gzip, .. } => gen_data(&ctx, gzip),
        Command::TrainReward { data, train } => cmd_train_reward(&ctx, &data, &train),
        Command::TrainRanker {
            data,
            reward,
            lambda,
            tau,
            ste,
            train,
        } => {
            let mut t = overridden(&ctx.cfg.ranker, &train);
            t.lambda = lambda.unwrap_or(t.lambda);
            t.tau = tau.unwrap_or(t.tau);
            t.use_ste |= ste;
            cmd_train_ranker(&ctx, &data, &reward, t)
        }
        Command::TrainBaseline {
            kind,
            data,
            reward,
            target,
            samples,
            init,
            train,
        } => {
            let opts = BaselineOpts {
                reward,
                target,
                samples,
                init,
            };
            cmd_train_baseline(&ctx, kind, &data, opts, &train)
        }
        Command::Eval {
            protocol,
            data,
            ranker,
            method,
            split,
            export_requests,
            responses,
        } => {
            let opts = EvalOpts {
                method,
                split: split.into(),
                export_requests,
                responses,
            };
            cmd_eval(&ctx, protocol, &data, &ranker, opts)
        }
        Command::Judge { requests, responses } => cmd_judge(&ctx, &requests, &responses),
        Command::Gradcheck { trials } => cmd_gradcheck(&ctx, trials),
        Command::Report { runs } => cmd_report(&runs),
        Command::Run { protocol } => cmd_run(&ctx, protocol),
    }
}

fn queries_for(groups: usize, per_query: usize) -> Result<usize> {
    if groups % per_query != 0 {
        return Err(Error::Contract(format!(
            "{groups} groups is not a multiple of {per_query} logged permutations per query"
        )));
    }
    Ok(groups / per_query)
}

fn overridden(base: &TrainConfig, args: &TrainArgs) -> TrainConfig {
    let mut t = base.clone();
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.lr = args.lr.unwrap_or(t.lr);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t
}

fn data_dir(args: &DataArgs) -> PathBuf {
    let nested = args.data.join("data");
    if nested.is_dir() {
        nested
    } else {
        args.data.clone()
    }
}

fn load_train_val(args: &DataArgs) -> Result<(Dataset, Dataset)> {
    let dir = data_dir(args);
    Ok((load_split(&dir, Split::Train)?, load_split(&dir, Split::Val)?))
}

fn load_reward(path: &Path) -> Result<RewardModel> {
    Checkpoint::load(path)?.into_reward()
}

fn load_ranker(path: &Path) -> Result<RankerModel> {
    Checkpoint::load(path)?.into_ranker()
}

fn save_model(dir: &RunDir, method: &str, ckpt: Checkpoint, report: &mut TrainReport) -> Result<PathBuf> {
    let path = dir.checkpoint(method);
    ckpt.save(&path)?;
    report.checkpoint = Some(path.clone());
    report.write_csv(&dir.train_report(method))?;
    Ok(path)
}

fn gen_data(ctx: &Context, gzip: bool) -> Result<Status> {
    let dir = ctx.run_dir()?;
    let splits = generate(&ctx.cfg.world, ctx.cfg.queries)?;
    save_splits(&splits, dir.data(), gzip)?;
    Ok(Status::Success(format!(
        "gen-data: {}/{}/{} groups in {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        dir.data().display()
    )))
}

fn cmd_train_reward(ctx: &Context, data: &DataArgs, args: &TrainArgs) -> Result<Status> {
    let (train, val) = load_train_val(data)?;
    let mut t = overridden(&reward_config(&ctx.cfg, train.world.label_mode), args);
    t.seed = ctx.cfg.seed;
    let dir = ctx.run_dir()?;
    let (model, mut report) = train_reward(&train, &val, &t)?;
    let path = save_model(&dir, "reward", Checkpoint::from_reward(&model), &mut report)?;
    let loss = report.best("val", "loss").unwrap_or(f64::NAN);
    Ok(Status::Success(format!(
        "train-reward: best epoch {}, val loss {loss:.5}, checkpoint {}",
        report.best_epoch,
        path.display()
    )))
}

fn cmd_train_ranker(ctx: &Context, data: &DataArgs, reward: &Path, t: TrainConfig) -> Result<Status> {
    let (train, val) = load_train_val(data)?;
    let reward = load_reward(reward)?;
    let dir = ctx.run_dir()?;
    let (model, mut report) = train_ranker(&train, &val, &reward, &t)?;
    let method = permurank::pipeline::lambda_method(t.lambda);
    let path = save_model(&dir, &method, Checkpoint::from_ranker(&model), &mut report)?;
    let hard = report.best("val", "hard_reward").unwrap_or(f64::NAN);
    Ok(Status::Success(format!(
        "train-ranker: lambda {}, val reward {hard:.5}, checkpoint {}",
        t.lambda,
        path.display()
    )))
}

struct BaselineOpts {
    reward: Option<PathBuf>,
    target: Option<TargetArg>,
    samples: Option<usize>,
    init: Option<PathBuf>,
}

fn cmd_train_baseline(ctx: &Context, kind: BaselineKind, data: &DataArgs, opts: BaselineOpts, args: &TrainArgs) -> Result<Status> {
    let (train, val) = load_train_val(data)?;
    let t = overridden(&ctx.cfg.baseline, args);
    let need_reward = || -> Result<RewardModel> {
        let path = opts
            .reward
            .as_deref()
            .ok_or_else(|| Error::Contract("this baseline needs --reward".into()))?;
        load_reward(path)
    };
    let (method, (model, mut report)) = match kind {
        BaselineKind::Naive => {
            let target = match opts.target {
                Some(TargetArg::Relevance) => NaiveTarget::Relevance,
                Some(TargetArg::LoggedClick) => NaiveTarget::LoggedClick,
                None => ctx.cfg.baselines.naive_target,
            };
            ("naive".to_string(), train_naive(&train, &val, &t, target)?)
        }
        BaselineKind::Pgrank => {
            let reward = need_reward()?;
            let mut sampler = ctx.cfg.baselines.sampler.clone();
            sampler.samples = opts.samples.unwrap_or(sampler.samples);
            (permurank::pipeline::pg_method(sampler.samples), train_pgrank(&train, &val, &reward, &t, &sampler)?)
        }
        BaselineKind::Urcc => {
            let reward = need_reward()?;
            let init = opts.init.as_deref().map(load_ranker).transpose()?;
            let name = if init.is_some() { "urcc_init" } else { "urcc_scratch" };
            (name.to_string(), train_urcc(&train, &val, &reward, &t, init)?)
        }
    };
    let dir = ctx.run_dir()?;
    let path = save_model(&dir, &method, Checkpoint::from_ranker(&model), &mut report)?;
    Ok(Status::Success(format!(
        "train-baseline: {method}, best epoch {}, checkpoint {}",
        report.best_epoch,
        path.display()
    )))
}

struct EvalOpts {
    method: Option<String>,
    split: Split,
    export_requests: Option<PathBuf>,
    responses: Option<PathBuf>,
}

fn headline(metrics: &MetricsReport, method: &str) -> String {
    metrics
        .entries
        .iter()
        .filter(|e| e.cutoff.is_none())
        .filter(|e| e.method == method || e.method == "ideal" || e.method == "logged" || e.method == "policy_in_data")
        .map(|e| format!("{} {}={:.4}±{:.4}", e.method, e.metric, e.mean, e.se))
        .collect::<Vec<_>>()
        .join(", ")
}

fn cmd_eval(ctx: &Context, protocol: Protocol, data: &DataArgs, ranker: &Path, opts: EvalOpts) -> Result<Status> {
    let ds = load_split(data_dir(data), opts.split)?;
    let model = load_ranker(ranker)?;
    let method = opts.method.unwrap_or_else(|| {
        ranker
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "ranker".into())
    });
    let eval = &ctx.cfg.eval;
    let (name, metrics) = match protocol {
        Protocol::Kd => ("kd", eval_kd(&method, &model, &ds.world.examination, &ds, &eval.kd)?),
        Protocol::Logged => {
            let mut m = MetricsReport::new();
            for &k in &eval.dcg_k {
                m.merge(dcg_clicks(&method, &model, &ds, k.min(ds.world.list_len))?);
            }
            ("logged", m)
        }
        Protocol::Lau => {
            let user_cfg = &ds.world.behavioral;
            if let Some(path) = &opts.export_requests {
                let text = export_requests(&ds, &rank_all(&model, &ds)?)?;
                std::fs::write(path, text).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
            }
            let metrics = match &opts.responses {
                Some(path) => {
                    let file = File::open(path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    let origin = path.display().to_string();
                    let (m, stats) = import_responses(BufReader::new(file), &origin, &ds, &method, user_cfg, &eval.cutoffs)?;
                    info!("judge responses: {stats:?}");
                    m
                }
                None => eval_lau(&method, &model, user_cfg, &ds, &eval.cutoffs)?,
            };
            ("lau", metrics)
        }
    };
    let dir = ctx.run_dir()?;
    let path = dir.metrics(name);
    dir.write(&path, &metrics.to_csv()?)?;
    Ok(Status::Success(format!("eval {name}: {} ({})", headline(&metrics, &method), path.display())))
}

fn cmd_judge(ctx: &Context, requests: &Path, responses: &Path) -> Result<Status> {
    let file = File::open(requests).map_err(|e| Error::Io {
        path: requests.to_path_buf(),
        source: e,
    })?;
    let user = BehavioralUser::new(ctx.cfg.world.behavioral.clone())?;
    let text = simulate_responses(BufReader::new(file), &user)?;
    let n = text.lines().count().saturating_sub(1);
    std::fs::write(responses, text).map_err(|e| Error::Io {
        path: responses.to_path_buf(),
        source: e,
    })?;
    Ok(Status::Success(format!("judge: {n} responses in {}", responses.display())))
}

fn cmd_gradcheck(ctx: &Context, trials: usize) -> Result<Status> {
    let checks = gradient_suite(ctx.cfg.seed, trials)?;
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for c in &checks {
        let status = if c.passed(GRAD_TOL) { "ok" } else { "FAIL" };
        println!("{:<22} max rel error {:.3e} {status}", c.name, c.max_rel_error);
        worst = worst.max(c.max_rel_error);
        if !c.passed(GRAD_TOL) {
            failed.push(c.name);
        }
    }
    let summary = format!(
        "gradcheck: {} components x {trials} trials, worst {worst:.3e}, {} failed",
        checks.len(),
        failed.len()
    );
    Ok(if failed.is_empty() {
        Status::Success(summary)
    } else {
        Status::Failed(format!("{summary}: {}", failed.join(", ")))
    })
}

fn cmd_report(runs: &[PathBuf]) -> Result<Status> {
    let mut tables = 0;
    for run in runs {
        let entries = std::fs::read_dir(run).map_err(|e| Error::Io {
            path: run.clone(),
            source: e,
        })?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("metrics_") && n.ends_with(".csv"))
            })
            .collect();
        files.sort();
        for f in files {
            let text = std::fs::read_to_string(&f).map_err(|e| Error::Io { path: f.clone(), source: e })?;
            let metrics = MetricsReport::from_csv(&text, &f.display().to_string())?;
            println!("== {}", f.display());
            print!("{}", metrics.to_table());
            tables += 1;
        }
    }
    Ok(Status::Success(format!("report: {tables} tables from {} run directories", runs.len())))
}

fn cmd_run(ctx: &Context, protocol: RunProtocol) -> Result<Status> {
    let dir = ctx.run_dir()?;
    let splits = prepare_data(&ctx.cfg, Some(&dir))?;
    let (outcome, metric) = match protocol {
        RunProtocol::Kd => (run_kd(&ctx.cfg, &splits, Some(&dir))?, "u_ips"),
        RunProtocol::Lau => (run_lau(&ctx.cfg, &splits, Some(&dir))?, "p_purchase"),
    };
    print!("{}", outcome.metrics.to_table());
    let line = outcome
        .metrics
        .entries
        .iter()
        .filter(|e| e.metric == metric && e.cutoff.is_none())
        .map(|e| format!("{}={:.4}", e.method, e.mean))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Status::Success(format!(
        "run: best lambda {} ({REWARDRANK}), {metric}: {line} ({})",
        outcome.best_lambda,
        dir.root.display()
    )))
}
