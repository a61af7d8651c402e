//! Plain gradient descent driven by the balancer, with worst-group early
//! stopping on the validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balancer::{self, BalancerConfig, Branch, Diagnostics, Strategy};
use crate::data_synth::Dataset;
use crate::error::{Error, Result};
use crate::group_state::{ControllingVector, LossVector, SimplexWeights};
use crate::metrics::{self, GroupMetrics};
use crate::models::{self, Batch, ModelParams, ModelSpec};

/// Any group loss above this (or non-finite) aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One step per epoch on the full training split.
    #[default]
    Full,
    /// `size` samples per group per step, drawn without replacement from a
    /// per-epoch shuffle; a group smaller than `size` contributes all of
    /// its samples. An epoch is `ceil(N / (K·size))` steps.
    GroupMinibatch { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_mode: BatchMode,
    pub balancer: BalancerConfig,
    /// All ones when absent.
    pub control: Option<ControllingVector>,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Cpt,
            learning_rate: 0.5,
            epochs: 300,
            batch_mode: BatchMode::Full,
            balancer: BalancerConfig::default(),
            control: None,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(
                "train.learning_rate",
                format!("must be finite and >= 0, got {}", self.learning_rate),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("train.epochs", "must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("train.eval_every", "must be >= 1"));
        }
        if let BatchMode::GroupMinibatch { size: 0 } = self.batch_mode {
            return Err(Error::invalid("train.batch_mode.size", "must be >= 1"));
        }
        self.balancer.validate()
    }

    /// The controlling vector for `k` groups.
    pub fn control_for(&self, k: usize) -> Result<ControllingVector> {
        match &self.control {
            None => Ok(ControllingVector::ones(k)),
            Some(c) if c.len() == k => Ok(c.clone()),
            Some(c) => Err(Error::Shape {
                context: "controlling vector",
                expected: k,
                got: c.len(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BranchCounts {
    pub lp_optimal: usize,
    pub lp_fallback: usize,
    pub eps_balanced: usize,
    pub strategy_fixed: usize,
}

impl BranchCounts {
    pub fn add(&mut self, b: Branch) {
        match b {
            Branch::LpOptimal => self.lp_optimal += 1,
            Branch::LpFallback => self.lp_fallback += 1,
            Branch::EpsBalanced => self.eps_balanced += 1,
            Branch::StrategyFixed => self.strategy_fixed += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.lp_optimal + self.lp_fallback + self.eps_balanced + self.strategy_fixed
    }
}

/// Everything the balancer saw and produced for one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    /// Unscaled per-group losses.
    pub losses: Vec<f64>,
    /// Unscaled per-group gradients.
    pub grads: Vec<Vec<f64>>,
    pub control: Vec<f64>,
    pub weights: Vec<f64>,
    pub direction: Vec<f64>,
    pub branch: Branch,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub train_loss: Vec<f64>,
    pub val: GroupMetrics,
    /// Branch of the last update before this evaluation.
    pub branch: Branch,
    /// Branches taken since the previous evaluation.
    pub branch_counts: BranchCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub strategy: Strategy,
    pub model: ModelSpec,
    pub config: TrainConfig,
    pub trajectory: Vec<EvalRecord>,
    pub branch_counts: BranchCounts,
    pub best_epoch: usize,
    pub best_val: GroupMetrics,
    /// Test metrics at `best_epoch`'s parameters.
    pub test: GroupMetrics,
    /// Binary AUROC of the class-1 probability at `best_epoch`, when defined.
    pub test_auroc: Option<f64>,
    /// Per-group train loss after the last epoch.
    pub final_train_loss: Vec<f64>,
    pub final_loss_gap: f64,
    pub best_params: ModelParams,
}

struct GroupSampler {
    rng: ChaCha20Rng,
    perms: Vec<Vec<usize>>,
    cursor: Vec<usize>,
    size: usize,
}

impl GroupSampler {
    fn new(groups: &[Vec<usize>], size: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(3);
        Self {
            rng,
            perms: groups.to_vec(),
            cursor: vec![0; groups.len()],
            size,
        }
    }

    fn start_epoch(&mut self) {
        for (p, c) in self.perms.iter_mut().zip(&mut self.cursor) {
            p.shuffle(&mut self.rng);
            *c = 0;
        }
    }

    fn next_batch(&mut self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.perms.len());
        for (p, c) in self.perms.iter_mut().zip(&mut self.cursor) {
            let take = self.size.min(p.len());
            if *c + take > p.len() {
                p.shuffle(&mut self.rng);
                *c = 0;
            }
            out.push(p[*c..*c + take].to_vec());
            *c += take;
        }
        out
    }
}

fn check_divergence(losses: &[f64], epoch: usize) -> Result<()> {
    match losses.iter().position(|l| !l.is_finite() || *l > DIVERGENCE_LIMIT) {
        Some(group) => Err(Error::Divergence {
            epoch,
            group,
            loss: losses[group],
        }),
        None => Ok(()),
    }
}

/// Stateful single-run driver; [`fit`] is built on it.
pub struct Trainer<'a> {
    spec: ModelSpec,
    train: &'a Batch,
    cfg: TrainConfig,
    control: ControllingVector,
    params: ModelParams,
    groups: Vec<Vec<usize>>,
    sampler: Option<GroupSampler>,
    epoch: usize,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(spec: &ModelSpec, train: &'a Batch, cfg: &TrainConfig) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        if train.feature_dim() != spec.feature_dim {
            return Err(Error::Shape {
                context: "train features",
                expected: spec.feature_dim,
                got: train.feature_dim(),
            });
        }
        let groups = train.group_indices();
        if let Some(g) = groups.iter().position(|v| v.is_empty()) {
            return Err(Error::EmptyGroup { group: g });
        }
        let control = cfg.control_for(groups.len())?;
        let sampler = match cfg.batch_mode {
            BatchMode::Full => None,
            BatchMode::GroupMinibatch { size } => Some(GroupSampler::new(&groups, size, cfg.seed)),
        };
        Ok(Self {
            spec: *spec,
            train,
            cfg: cfg.clone(),
            control,
            params: models::init(spec, cfg.seed),
            groups,
            sampler,
            epoch: 0,
            step: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn set_params(&mut self, params: ModelParams) -> Result<()> {
        if params.theta.len() != self.spec.num_params() {
            return Err(Error::Shape {
                context: "model parameters",
                expected: self.spec.num_params(),
                got: params.theta.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        match self.cfg.batch_mode {
            BatchMode::Full => 1,
            BatchMode::GroupMinibatch { size } => {
                let per_step = self.groups.len() * size;
                self.train.len().div_ceil(per_step).max(1)
            }
        }
    }

    /// One balancer decision and parameter update.
    pub fn step(&mut self) -> Result<StepLog> {
        let batch = match &mut self.sampler {
            None => models::group_losses_and_grads_on(&self.spec, &self.params, self.train, &self.groups)?,
            Some(s) => {
                let idx = s.next_batch();
                models::group_losses_and_grads_on(&self.spec, &self.params, self.train, &idx)?
            }
        };
        check_divergence(&batch.losses, self.epoch)?;
        let losses: LossVector = batch.loss_vector()?;
        let grads = batch.gradient_set()?;
        let decision = balancer::step(&losses, &grads, &self.control, self.cfg.strategy, &self.cfg.balancer)?;
        let eta = self.cfg.learning_rate;
        for (t, d) in self.params.theta.iter_mut().zip(decision.direction.as_slice()) {
            *t -= eta * d;
        }
        self.step += 1;
        Ok(StepLog {
            epoch: self.epoch,
            step: self.step,
            losses: batch.losses,
            grads: batch.grads,
            control: self.control.as_slice().to_vec(),
            weights: decision.weights.as_slice().to_vec(),
            direction: decision.direction.0,
            branch: decision.branch,
            diagnostics: decision.diagnostics,
        })
    }

    /// Runs one epoch of updates and returns their logs.
    pub fn run_epoch(&mut self) -> Result<Vec<StepLog>> {
        self.epoch += 1;
        if let Some(s) = &mut self.sampler {
            s.start_epoch();
        }
        (0..self.steps_per_epoch()).map(|_| self.step()).collect()
    }
}

fn eval_split(spec: &ModelSpec, params: &ModelParams, b: &Batch, w: &SimplexWeights) -> Result<(GroupMetrics, Vec<f64>)> {
    let (pred, scores) = models::predict(spec, params, b.inputs())?;
    Ok((metrics::group_accuracy(&pred, b.labels(), b.groups(), w)?, scores))
}

fn run(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig, mut log: Option<&mut Vec<StepLog>>) -> Result<TrainReport> {
    let mut trainer = Trainer::new(spec, &data.train, cfg)?;
    let k = data.train.num_groups();
    if data.val.num_groups() != k || data.test.num_groups() != k {
        return Err(Error::Shape {
            context: "eval split groups",
            expected: k,
            got: data.val.num_groups().min(data.test.num_groups()),
        });
    }
    let train_w = SimplexWeights::proportional(&data.train.group_counts())?;
    let mut trajectory: Vec<EvalRecord> = Vec::new();
    let mut totals = BranchCounts::default();
    let mut span = BranchCounts::default();
    let mut best: Option<(usize, ModelParams, GroupMetrics)> = None;
    let mut last_branch = Branch::StrategyFixed;

    for epoch in 1..=cfg.epochs {
        for s in trainer.run_epoch()? {
            totals.add(s.branch);
            span.add(s.branch);
            last_branch = s.branch;
            if let Some(l) = log.as_deref_mut() {
                l.push(s);
            }
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let train_loss = models::group_losses(spec, trainer.params(), &data.train)?;
            check_divergence(&train_loss, epoch)?;
            let (val, _) = eval_split(spec, trainer.params(), &data.val, &train_w)?;
            if best.as_ref().is_none_or(|b| val.worst > b.2.worst) {
                best = Some((epoch, trainer.params().clone(), val.clone()));
            }
            trajectory.push(EvalRecord {
                epoch,
                train_loss,
                val,
                branch: last_branch,
                branch_counts: std::mem::take(&mut span),
            });
        }
    }

    let (best_epoch, best_params, best_val) = best.expect("at least one evaluation");
    let (test, scores) = eval_split(spec, &best_params, &data.test, &train_w)?;
    let test_auroc = if spec.classes == 2 {
        metrics::auroc(&scores, data.test.labels()).ok()
    } else {
        None
    };
    let final_train_loss = trajectory.last().expect("at least one evaluation").train_loss.clone();
    let final_loss_gap = metrics::loss_gap(&LossVector::new(final_train_loss.clone())?);
    let mut config = cfg.clone();
    config.control = Some(trainer.control.clone());
    Ok(TrainReport {
        strategy: cfg.strategy,
        model: *spec,
        config,
        trajectory,
        branch_counts: totals,
        best_epoch,
        best_val,
        test,
        test_auroc,
        final_train_loss,
        final_loss_gap,
        best_params,
    })
}

pub fn fit(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    run(spec, data, cfg, None)
}

/// [`fit`] that also returns every step's balancer inputs and outputs.
pub fn fit_logged(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<(TrainReport, Vec<StepLog>)> {
    let mut log = Vec::new();
    let report = run(spec, data, cfg, Some(&mut log))?;
    Ok((report, log))
}

/// One independent fit per controlling vector, in input order.
pub fn sweep_control(
    spec: &ModelSpec,
    data: &Dataset,
    base: &TrainConfig,
    c_list: &[ControllingVector],
) -> Result<Vec<TrainReport>> {
    c_list
        .par_iter()
        .map(|c| {
            let cfg = TrainConfig {
                control: Some(c.clone()),
                ..base.clone()
            };
            fit(spec, data, &cfg)
        })
        .collect()
}

/// Trajectory as CSV: `epoch, loss_g*, acc_g*, worst, avg, mean, branch`.
pub fn trajectory_csv(report: &TrainReport) -> String {
    let k = report.best_val.per_group_accuracy.len();
    let mut out = String::from("epoch");
    for g in 0..k {
        out.push_str(&format!(",loss_g{g}"));
    }
    for g in 0..k {
        out.push_str(&format!(",acc_g{g}"));
    }
    out.push_str(",worst,avg,mean,branch\n");
    for r in &report.trajectory {
        out.push_str(&r.epoch.to_string());
        for v in r.train_loss.iter().chain(&r.val.per_group_accuracy) {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(
            ",{},{},{},{}\n",
            r.val.worst,
            r.val.weighted_average,
            r.val.mean,
            r.branch.name()
        ));
    }
    out
}
