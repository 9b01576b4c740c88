//! End-to-end experiment chains shared by the CLI and the acceptance suite.

use std::path::{Path, PathBuf};

use crate::baselines::{train_naive, train_pgrank, train_urcc, NaiveTarget, UrccInit};
use crate::config::RunConfig;
use crate::data::{generate, save_splits, DatasetSplits, LabelMode};
use crate::error::{Error, Result};
use crate::evaluation::{eval_kd, eval_lau, BehavioralOraclePolicy, MetricsReport, RankingPolicy};
use crate::models::{Checkpoint, RankerModel, RewardModel};
use crate::oracles::BehavioralUser;
use crate::training::{train_ranker, train_reward, LossKind, TrainConfig, TrainReport};

/// Method name of the ranker selected across the lambda grid.
pub const REWARDRANK: &str = "rewardrank";
pub const NAIVE: &str = "naive";

pub fn lambda_method(lambda: f64) -> String {
    format!("rewardrank_l{lambda}")
}

pub fn pg_method(samples: usize) -> String {
    format!("pgrank_k{samples}")
}

/// A trained ranker with its training history.
pub struct TrainedRanker {
    pub method: String,
    pub model: RankerModel,
    pub report: TrainReport,
}

pub struct Outcome {
    pub metrics: MetricsReport,
    pub reward_report: TrainReport,
    pub rankers: Vec<TrainedRanker>,
    /// Lambda whose ranker had the highest validation reward.
    pub best_lambda: f64,
}

impl Outcome {
    pub fn ranker(&self, method: &str) -> Option<&TrainedRanker> {
        self.rankers.iter().find(|r| r.method == method)
    }
}

/// Output layout of a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["", "data", "checkpoints", "reports"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(Self { root })
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn checkpoint(&self, method: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{method}.json"))
    }

    pub fn train_report(&self, method: &str) -> PathBuf {
        self.root.join("reports").join(format!("{method}.train.csv"))
    }

    pub fn metrics(&self, protocol: &str) -> PathBuf {
        self.root.join(format!("metrics_{protocol}.csv"))
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn write(&self, path: &Path, text: &str) -> Result<()> {
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Generates the configured world, saving it under `dir` if given.
pub fn prepare_data(cfg: &RunConfig, dir: Option<&RunDir>) -> Result<DatasetSplits> {
    let splits = generate(&cfg.world, cfg.queries)?;
    if let Some(d) = dir {
        save_splits(&splits, d.data(), false)?;
    }
    Ok(splits)
}

/// Stage-1 settings for data labelled in `mode`: binary labels switch the
/// loss to cross-entropy.
pub fn reward_config(cfg: &RunConfig, mode: LabelMode) -> TrainConfig {
    let mut t = cfg.reward.clone();
    if mode == LabelMode::BinaryClick {
        t.loss = LossKind::CrossEntropy;
    }
    t
}

fn record(dir: Option<&RunDir>, method: &str, report: &mut TrainReport, ckpt: Checkpoint) -> Result<()> {
    if let Some(d) = dir {
        let path = d.checkpoint(method);
        ckpt.save(&path)?;
        report.checkpoint = Some(path);
        report.write_csv(&d.train_report(method))?;
    }
    Ok(())
}

/// Stage 1 and Stage 2 over the lambda grid; the selected ranker is also
/// listed under [`REWARDRANK`].
pub fn run_rewardrank(cfg: &RunConfig, splits: &DatasetSplits, dir: Option<&RunDir>) -> Result<(RewardModel, TrainReport, Vec<TrainedRanker>, f64)> {
    let (train, val) = (&splits.train, &splits.val);
    let (reward, mut reward_report) = train_reward(train, val, &reward_config(cfg, cfg.world.label_mode))?;
    record(dir, "reward", &mut reward_report, Checkpoint::from_reward(&reward))?;
    let mut rankers = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    for &lambda in &cfg.lambdas {
        let t = TrainConfig {
            lambda,
            ..cfg.ranker.clone()
        };
        let (model, mut report) = train_ranker(train, val, &reward, &t)?;
        let method = lambda_method(lambda);
        record(dir, &method, &mut report, Checkpoint::from_ranker(&model))?;
        let score = report.best("val", "hard_reward").unwrap_or(f64::NEG_INFINITY);
        log::info!("{method}: validation reward {score:.5}");
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, rankers.len()));
        }
        rankers.push(TrainedRanker { method, model, report });
    }
    let (_, idx) = best.expect("validated lambda grid");
    let best_lambda = cfg.lambdas[idx];
    let chosen = &rankers[idx];
    rankers.push(TrainedRanker {
        method: REWARDRANK.into(),
        model: chosen.model.clone(),
        report: chosen.report.clone(),
    });
    Ok((reward, reward_report, rankers, best_lambda))
}

fn other_target(t: NaiveTarget) -> (NaiveTarget, &'static str) {
    match t {
        NaiveTarget::Relevance => (NaiveTarget::LoggedClick, "naive_logged_click"),
        NaiveTarget::LoggedClick => (NaiveTarget::Relevance, "naive_relevance"),
    }
}

/// The position-bias experiment: RewardRank over the lambda grid and every
/// baseline, evaluated on the test split.
pub fn run_kd(cfg: &RunConfig, splits: &DatasetSplits, dir: Option<&RunDir>) -> Result<Outcome> {
    let (train, val, test) = (&splits.train, &splits.val, &splits.test);
    let (reward, reward_report, mut rankers, best_lambda) = run_rewardrank(cfg, splits, dir)?;

    let target = cfg.baselines.naive_target;
    let (naive, mut report) = train_naive(train, val, &cfg.baseline, target)?;
    record(dir, NAIVE, &mut report, Checkpoint::from_ranker(&naive))?;
    rankers.push(TrainedRanker {
        method: NAIVE.into(),
        model: naive.clone(),
        report,
    });
    let (alt, alt_name) = other_target(target);
    let (model, mut report) = train_naive(train, val, &cfg.baseline, alt)?;
    record(dir, alt_name, &mut report, Checkpoint::from_ranker(&model))?;
    rankers.push(TrainedRanker {
        method: alt_name.into(),
        model,
        report,
    });

    for &k in &cfg.pg_samples {
        let mut sampler = cfg.baselines.sampler.clone();
        sampler.samples = k;
        let (model, mut report) = train_pgrank(train, val, &reward, &cfg.baseline, &sampler)?;
        let method = pg_method(k);
        record(dir, &method, &mut report, Checkpoint::from_ranker(&model))?;
        rankers.push(TrainedRanker { method, model, report });
    }

    let mut inits = vec![("urcc_scratch", None)];
    if cfg.baselines.urcc_init == UrccInit::Naive {
        inits.insert(0, ("urcc_naive", Some(naive)));
    }
    for (method, init) in inits {
        let (model, mut report) = train_urcc(train, val, &reward, &cfg.baseline, init)?;
        record(dir, method, &mut report, Checkpoint::from_ranker(&model))?;
        rankers.push(TrainedRanker {
            method: method.into(),
            model,
            report,
        });
    }

    let mut metrics = MetricsReport::new();
    for r in &rankers {
        metrics.merge(eval_kd(&r.method, &r.model, &cfg.world.examination, test, &cfg.eval.kd)?);
    }
    if let Some(d) = dir {
        d.write(&d.metrics("kd"), &metrics.to_csv()?)?;
    }
    Ok(Outcome {
        metrics,
        reward_report,
        rankers,
        best_lambda,
    })
}

/// The behavioral-user experiment: RewardRank over the lambda grid and the
/// naive ranker, scored overall and per logged-utility cutoff.
pub fn run_lau(cfg: &RunConfig, splits: &DatasetSplits, dir: Option<&RunDir>) -> Result<Outcome> {
    if cfg.world.label_mode != LabelMode::Behavioral {
        return Err(Error::contract("the behavioral protocol needs purchase-probability labels"));
    }
    let (train, val, test) = (&splits.train, &splits.val, &splits.test);
    let (_, reward_report, mut rankers, best_lambda) = run_rewardrank(cfg, splits, dir)?;
    let (naive, mut report) = train_naive(train, val, &cfg.baseline, cfg.baselines.naive_target)?;
    record(dir, NAIVE, &mut report, Checkpoint::from_ranker(&naive))?;
    rankers.push(TrainedRanker {
        method: NAIVE.into(),
        model: naive,
        report,
    });
    let user_cfg = &cfg.world.behavioral;
    let mut metrics = MetricsReport::new();
    for r in &rankers {
        metrics.merge(eval_lau(&r.method, &r.model, user_cfg, test, &cfg.eval.cutoffs)?);
    }
    if cfg.world.list_len <= 8 {
        let oracle = BehavioralOraclePolicy {
            user: BehavioralUser::new(user_cfg.clone())?,
        };
        metrics.merge(eval_lau("simulator_max", &oracle as &dyn RankingPolicy, user_cfg, test, &cfg.eval.cutoffs)?);
    }
    if let Some(d) = dir {
        d.write(&d.metrics("lau"), &metrics.to_csv()?)?;
    }
    Ok(Outcome {
        metrics,
        reward_report,
        rankers,
        best_lambda,
    })
}
