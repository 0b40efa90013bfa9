//! Response-based learning.
//!
//! For every training instance a coin with bias `lambda` decides between a
//! student rollout and teacher forcing. A student rollout that completes
//! the task is reinforced with its own actions; a failed one is corrected
//! with the oracle's action at every state the student visited. Teacher
//! forcing replays the gold actions. The policy takes one update per
//! instance, and after each epoch the snapshot with the best development
//! task completion is kept.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{EpisodeRunner, EpisodeTrace};
use crate::metrics::task_completion;
use crate::nav_graph::{derive_gold_actions_with, GoldActionSequence, NavInstance};
use crate::policy::{LiteralScores, Oracle, Policy, PolicyError, TrainingExample};

pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum RblError {
    #[error("lambda must lie in [0, 1], got {0}")]
    BadLambda(f64),
    #[error("no usable training instances")]
    NoInstances,
    #[error("instance {id}: {message}")]
    Instance { id: String, message: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RblConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Instances whose references are collected in parallel against the
    /// same weights before their updates are applied in order.
    pub batch_size: usize,
}

impl Default for RblConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            epochs: 20,
            seed: 0,
            batch_size: 1,
        }
    }
}

impl RblConfig {
    pub fn validate(&self) -> Result<(), RblError> {
        if (0.0..=1.0).contains(&self.lambda) {
            Ok(())
        } else {
            Err(RblError::BadLambda(self.lambda))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Teacher,
    StudentSelf,
    StudentOracle,
}

#[derive(Debug, Clone)]
pub struct TrainingReference {
    pub branch: Branch,
    pub examples: Vec<TrainingExample>,
    /// The trace the references were collected on.
    pub trace: EpisodeTrace,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub teacher: usize,
    #[serde(rename = "self")]
    pub student_self: usize,
    #[serde(rename = "oracle")]
    pub student_oracle: usize,
}

impl BranchCounts {
    pub fn add(&mut self, b: Branch) {
        match b {
            Branch::Teacher => self.teacher += 1,
            Branch::StudentSelf => self.student_self += 1,
            Branch::StudentOracle => self.student_oracle += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.teacher + self.student_self + self.student_oracle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_tc: f64,
    pub branches: BranchCounts,
}

/// Everything an RBL step needs besides the policy.
#[derive(Clone)]
pub struct RblContext<'a> {
    pub runner: EpisodeRunner<'a>,
    pub oracle: Arc<Oracle>,
}

impl<'a> RblContext<'a> {
    pub fn new(runner: EpisodeRunner<'a>) -> Self {
        let oracle = Arc::new(Oracle::from_graph(runner.graph, runner.env));
        Self { runner, oracle }
    }

    pub fn gold(&self, inst: &NavInstance) -> Result<GoldActionSequence, RblError> {
        derive_gold_actions_with(self.runner.graph, inst, &self.runner.env).map_err(|e| {
            RblError::Instance {
                id: inst.id.clone(),
                message: e.to_string(),
            }
        })
    }

    /// References for one instance with a pre-drawn branch decision.
    pub fn collect(
        &self,
        inst: &NavInstance,
        gold: &GoldActionSequence,
        policy: &dyn Policy,
        student: bool,
    ) -> Result<TrainingReference, RblError> {
        let fail = |message: String| RblError::Instance {
            id: inst.id.clone(),
            message,
        };
        let runner = &self.runner;
        if !student {
            let trace = runner
                .drive(inst, |_, ctx| {
                    let a = gold.actions.get(ctx.t - 1).copied().ok_or_else(|| {
                        PolicyError::Input("gold actions exhausted".into())
                    })?;
                    Ok((a, LiteralScores::indicator(a)))
                })
                .map_err(|e| fail(e.to_string()))?;
            if let Some(e) = &trace.log.summary.error {
                return Err(fail(e.clone()));
            }
            let examples = examples(&trace, trace.log.actions());
            return Ok(TrainingReference {
                branch: Branch::Teacher,
                examples,
                trace,
            });
        }
        let trace = runner.trace(inst, policy).map_err(|e| fail(e.to_string()))?;
        if let Some(e) = &trace.log.summary.error {
            return Err(fail(e.clone()));
        }
        let tc = task_completion(runner.graph, &trace.log, inst).map_err(|e| fail(e.to_string()))?;
        if tc == 1 {
            let examples = examples(&trace, trace.log.actions());
            return Ok(TrainingReference {
                branch: Branch::StudentSelf,
                examples,
                trace,
            });
        }
        let refs = trace
            .contexts
            .iter()
            .map(|c| self.oracle.next_action(c.state, c.target))
            .collect::<Result<Vec<_>, _>>()
            .map_err(PolicyError::from)?;
        let examples = examples(&trace, refs.into_iter());
        Ok(TrainingReference {
            branch: Branch::StudentOracle,
            examples,
            trace,
        })
    }

    /// Task completion of greedy rollouts, averaged over `instances`.
    pub fn task_completion_rate(&self, policy: &dyn Policy, instances: &[NavInstance]) -> f64 {
        if instances.is_empty() {
            return 0.0;
        }
        let done: usize = instances
            .par_iter()
            .map(|inst| {
                self.runner
                    .run(inst, policy)
                    .ok()
                    .and_then(|log| task_completion(self.runner.graph, &log, inst).ok())
                    .map_or(0, usize::from)
            })
            .sum();
        done as f64 / instances.len() as f64
    }
}

fn examples(
    trace: &EpisodeTrace,
    refs: impl Iterator<Item = crate::environment::Action>,
) -> Vec<TrainingExample> {
    trace
        .prompts
        .iter()
        .zip(&trace.contexts)
        .zip(refs)
        .map(|((p, c), r)| TrainingExample {
            prompt: p.clone(),
            context: c.clone(),
            reference: r,
        })
        .collect()
}

/// One step of the algorithm on a single instance: draws the branch,
/// collects references, and updates the policy. Returns the references
/// and the loss before the update.
pub fn rbl_step<P: Policy>(
    ctx: &RblContext<'_>,
    inst: &NavInstance,
    policy: &mut P,
    cfg: &RblConfig,
    rng: &mut impl Rng,
) -> Result<(TrainingReference, f64), RblError> {
    cfg.validate()?;
    let gold = ctx.gold(inst)?;
    let student = rng.random::<f64>() < cfg.lambda;
    let reference = ctx.collect(inst, &gold, policy, student)?;
    let loss = policy.loss(&reference.examples)?;
    policy.update(&reference.examples)?;
    Ok((reference, loss))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    /// Snapshot with the best development task completion.
    pub policy: P,
    pub best_epoch: usize,
    pub initial_dev_tc: f64,
    pub epochs: Vec<EpochReport>,
    /// Instance-steps skipped because the rollout failed.
    pub skipped: usize,
}

/// Trains `policy` on `train`, selecting the epoch snapshot by task
/// completion on `dev`.
pub fn train<P: Policy + Clone>(
    ctx: &RblContext<'_>,
    train: &[NavInstance],
    dev: &[NavInstance],
    mut policy: P,
    cfg: &RblConfig,
) -> Result<TrainOutcome<P>, RblError> {
    cfg.validate()?;
    let usable: Vec<(&NavInstance, GoldActionSequence)> = train
        .iter()
        .filter_map(|i| match ctx.gold(i) {
            Ok(g) => Some((i, g)),
            Err(e) => {
                log::warn!("skipping training instance: {e}");
                None
            }
        })
        .collect();
    if usable.is_empty() {
        return Err(RblError::NoInstances);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial_dev_tc = ctx.task_completion_rate(&policy, dev);
    let mut best = (policy.clone(), 0usize, f64::NEG_INFINITY);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut skipped = 0;
    let batch = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..usable.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut branches = BranchCounts::default();
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for chunk in order.chunks(batch) {
            let draws: Vec<bool> = chunk
                .iter()
                .map(|_| rng.random::<f64>() < cfg.lambda)
                .collect();
            let frozen = &policy;
            let refs: Vec<Result<TrainingReference, RblError>> = if chunk.len() == 1 {
                vec![ctx.collect(usable[chunk[0]].0, &usable[chunk[0]].1, frozen, draws[0])]
            } else {
                chunk
                    .par_iter()
                    .zip(&draws)
                    .map(|(&i, &s)| ctx.collect(usable[i].0, &usable[i].1, frozen, s))
                    .collect()
            };
            for r in refs {
                match r {
                    Ok(r) => {
                        branches.add(r.branch);
                        loss_sum += policy.loss(&r.examples)?;
                        loss_n += 1;
                        policy.update(&r.examples)?;
                    }
                    Err(e) => {
                        log::warn!("epoch {epoch}: {e}");
                        skipped += 1;
                    }
                }
            }
        }
        let dev_tc = ctx.task_completion_rate(&policy, dev);
        let mean_loss = if loss_n == 0 { 0.0 } else { loss_sum / loss_n as f64 };
        log::info!("epoch {epoch}: loss {mean_loss:.4} dev tc {dev_tc:.3}");
        epochs.push(EpochReport {
            epoch,
            mean_loss,
            dev_tc,
            branches,
        });
        if dev_tc > best.2 {
            best = (policy.clone(), epoch, dev_tc);
        }
    }
    if cfg.epochs == 0 {
        best.2 = initial_dev_tc;
    }
    Ok(TrainOutcome {
        policy: best.0,
        best_epoch: best.1,
        initial_dev_tc,
        epochs,
        skipped,
    })
}

pub fn report_jsonl(epochs: &[EpochReport]) -> String {
    let mut out = String::new();
    for e in epochs {
        out.push_str(&serde_json::to_string(e).expect("report serializes"));
        out.push('\n');
    }
    out
}

/// Held-out task completion of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub lambda: f64,
    pub untrained_tc: f64,
    pub trained_tc: f64,
    pub best_epoch: usize,
}

impl AblationRun {
    pub fn gain(&self) -> f64 {
        self.trained_tc - self.untrained_tc
    }
}

/// Trains a fresh `initial` policy once per entry of `lambdas` on `train`,
/// selects snapshots on `dev` and reports task completion on `test`.
pub fn lambda_ablation<P: Policy + Clone>(
    ctx: &RblContext<'_>,
    splits: [&[NavInstance]; 3],
    initial: &P,
    lambdas: &[f64],
    base: &RblConfig,
) -> Result<Vec<AblationRun>, RblError> {
    let [train_set, dev, test] = splits;
    let untrained_tc = ctx.task_completion_rate(initial, test);
    lambdas
        .iter()
        .map(|&lambda| {
            let cfg = RblConfig { lambda, ..*base };
            let out = train(ctx, train_set, dev, initial.clone(), &cfg)?;
            Ok(AblationRun {
                lambda,
                untrained_tc,
                trained_tc: ctx.task_completion_rate(&out.policy, test),
                best_epoch: out.best_epoch,
            })
        })
        .collect()
}
