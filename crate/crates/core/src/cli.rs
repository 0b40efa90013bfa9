//! The `urbannav` command line.
//!
//! Settings resolve in the order flag, environment variable (for the
//! endpoint URL), `--config` TOML file, built-in default. Configuration
//! problems exit with status 2, runtime failures with status 1.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::environment::fixtures;
use crate::environment::{EnvConfig, EpisodeLog, EpisodeRunner, Perception, Semantics, DEFAULT_MAX_STEPS};
use crate::landmarks::{
    build_extraction_prompt, parse_extraction_response, DatasetStyle, ScoreTable, DEFAULT_TAU,
};
use crate::metrics::{evaluate, EvalReport, EvalResult};
use crate::nav_graph::{
    derive_gold_actions_with, generate_world, load_graph, load_instances, store_graph,
    store_instances, NavGraph, NavInstance, SyntheticConfig,
};
use crate::policy::{
    complete_text, Cassette, CassetteMode, ExternalLmConfig, ExternalPolicy, ForwardPolicy,
    InteractivePolicy, Oracle, OraclePolicy, Policy, ScriptedPolicy, ToyPolicy,
};
use crate::rbl::{report_jsonl, train, RblConfig, RblContext, DEFAULT_LAMBDA};
use crate::verbalizer::{assemble_prompt_from_text, observe, render_observation, PromptParts, Templates};

pub const LM_URL_ENV: &str = "URBANNAV_LM_URL";

/// Invalid settings or inputs, reported with exit status 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "urbannav", version, about = "Street-graph navigation simulator")]
pub struct Cli {
    /// TOML file with defaults for any run setting (kebab-case keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay the intersection fixture table under both semantics.
    EnvCheck {
        /// Directory with three_way.json, four_way.json, five_way.json and
        /// intersection_table.json; the bundled copies are used otherwise.
        #[arg(long)]
        fixtures_dir: Option<PathBuf>,
    },
    /// Generate a synthetic graph, instances and score tables.
    GraphGen(GraphGenArgs),
    /// Run episodes and write their logs.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Only run the instance with this id.
        #[arg(long)]
        instance_id: Option<String>,
        /// Type actions on stdin instead of using --policy.
        #[arg(long)]
        interactive: bool,
    },
    /// Run episodes and report TC, SPD and KPA.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train the toy policy with response-based learning.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Print the prompt for an instance, optionally from a recorded episode.
    DumpPrompt {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        instance_id: String,
        /// Episode log to rebuild the prompt from.
        #[arg(long)]
        episode: Option<PathBuf>,
        /// Print the prompt shown at this step instead of the full transcript.
        #[arg(long)]
        step: Option<usize>,
    },
    /// Extract landmarks from instance instructions with a completion endpoint.
    Extract {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "touchdown")]
        dataset_style: DatasetStyle,
        /// Print the extraction prompts without calling the endpoint.
        #[arg(long)]
        print_prompts: bool,
    },
}

#[derive(Debug, Args)]
pub struct GraphGenArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub nodes: usize,
    #[arg(long, default_value_t = 0.3)]
    pub intersection_ratio: f64,
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub instances: Option<PathBuf>,
    /// Landmark statistics (JSON-lines).
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Raw landmark scores (JSON-lines).
    #[arg(long)]
    pub raw_scores: Option<PathBuf>,
    /// oracle | forward | gold | toy[:weights.json] | external |
    /// record:<cassette> | replay:<cassette>
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub semantics: Option<Semantics>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// key=value template overrides.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, env = LM_URL_ENV)]
    pub lm_url: Option<String>,
    /// Worker threads for evaluate and train.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub dev_instances: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    graph: Option<PathBuf>,
    instances: Option<PathBuf>,
    stats: Option<PathBuf>,
    raw_scores: Option<PathBuf>,
    policy: Option<String>,
    semantics: Option<String>,
    tau: Option<f64>,
    max_steps: Option<usize>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    templates: Option<PathBuf>,
    lm_url: Option<String>,
    workers: Option<usize>,
    dev_instances: Option<PathBuf>,
    lambda: Option<f64>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_err(format!("config {}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Oracle,
    Forward,
    Gold,
    Toy(Option<PathBuf>),
    External,
    Record(PathBuf),
    Replay(PathBuf),
}

impl std::str::FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let need = |a: Option<&str>| {
            a.filter(|a| !a.is_empty())
                .map(PathBuf::from)
                .ok_or_else(|| format!("policy {head:?} needs a cassette path"))
        };
        match (head, arg) {
            ("oracle", None) => Ok(Self::Oracle),
            ("forward", None) => Ok(Self::Forward),
            ("gold", None) => Ok(Self::Gold),
            ("toy", a) => Ok(Self::Toy(a.map(PathBuf::from))),
            ("external", None) => Ok(Self::External),
            ("record", a) => Ok(Self::Record(need(a)?)),
            ("replay", a) => Ok(Self::Replay(need(a)?)),
            _ => Err(format!(
                "unknown policy {s:?} (expected oracle|forward|gold|toy[:weights]|external|record:<file>|replay:<file>)"
            )),
        }
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub graph: PathBuf,
    pub instances: PathBuf,
    pub stats: Option<PathBuf>,
    pub raw_scores: Option<PathBuf>,
    pub policy: PolicySpec,
    pub semantics: Semantics,
    pub tau: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub templates: Option<PathBuf>,
    pub lm_url: Option<String>,
    pub workers: Option<usize>,
}

fn existing(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = p.ok_or_else(|| config_err(format!("--{what} is required")))?;
    if !p.exists() {
        return Err(config_err(format!("--{what} {}: no such file", p.display())));
    }
    Ok(p)
}

fn optional_existing(p: Option<PathBuf>, what: &str) -> Result<Option<PathBuf>> {
    match p {
        Some(p) if !p.exists() => Err(config_err(format!("--{what} {}: no such file", p.display()))),
        p => Ok(p),
    }
}

impl RunConfig {
    fn resolve(a: RunArgs, f: &FileConfig) -> Result<Self> {
        let semantics = match a.semantics {
            Some(s) => s,
            None => match &f.semantics {
                Some(s) => s.parse().map_err(config_err)?,
                None => Semantics::default(),
            },
        };
        let policy = a
            .policy
            .or_else(|| f.policy.clone())
            .unwrap_or_else(|| "oracle".into())
            .parse::<PolicySpec>()
            .map_err(config_err)?;
        let tau = a.tau.or(f.tau).unwrap_or(DEFAULT_TAU);
        if tau.is_nan() {
            return Err(config_err("--tau must be a number"));
        }
        let cfg = Self {
            graph: existing(a.graph.or_else(|| f.graph.clone()), "graph")?,
            instances: existing(a.instances.or_else(|| f.instances.clone()), "instances")?,
            stats: optional_existing(a.stats.or_else(|| f.stats.clone()), "stats")?,
            raw_scores: optional_existing(a.raw_scores.or_else(|| f.raw_scores.clone()), "raw-scores")?,
            policy,
            semantics,
            tau,
            max_steps: a.max_steps.or(f.max_steps).unwrap_or(DEFAULT_MAX_STEPS),
            seed: a.seed.or(f.seed).unwrap_or(0),
            out_dir: a
                .out_dir
                .or_else(|| f.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("urbannav-out")),
            templates: optional_existing(a.templates.or_else(|| f.templates.clone()), "templates")?,
            lm_url: a.lm_url.or_else(|| f.lm_url.clone()),
            workers: a.workers.or(f.workers),
        };
        if cfg.stats.is_some() != cfg.raw_scores.is_some() {
            return Err(config_err("--stats and --raw-scores must be given together"));
        }
        if matches!(cfg.policy, PolicySpec::External | PolicySpec::Record(_)) && cfg.lm_url.is_none() {
            return Err(config_err(format!("policy needs --lm-url or {LM_URL_ENV}")));
        }
        Ok(cfg)
    }

    fn env(&self) -> EnvConfig {
        EnvConfig::new(self.semantics)
    }
}

/// Loaded inputs shared by the run-style commands.
struct Workspace {
    cfg: RunConfig,
    graph: NavGraph,
    instances: Vec<NavInstance>,
    perception: Perception,
    oracle: Arc<Oracle>,
}

impl Workspace {
    fn load(cfg: RunConfig) -> Result<Self> {
        let graph = load_graph(&cfg.graph).map_err(|e| config_err(e.to_string()))?;
        let instances = load_instances(&cfg.instances).map_err(|e| config_err(e.to_string()))?;
        for inst in &instances {
            inst.resolve(&graph).map_err(|e| config_err(e.to_string()))?;
        }
        let table = match (&cfg.stats, &cfg.raw_scores) {
            (Some(s), Some(r)) => ScoreTable::load(s, r).map_err(|e| config_err(e.to_string()))?,
            _ => ScoreTable::new(),
        };
        let templates = match &cfg.templates {
            Some(p) => Templates::load(p).map_err(|e| config_err(e.to_string()))?,
            None => Templates::default(),
        };
        let perception = Perception {
            table,
            tau: cfg.tau,
            templates,
        };
        let oracle = Arc::new(Oracle::from_graph(&graph, cfg.env()));
        Ok(Self {
            cfg,
            graph,
            instances,
            perception,
            oracle,
        })
    }

    fn runner(&self) -> EpisodeRunner<'_> {
        EpisodeRunner::new(&self.graph, self.cfg.env(), &self.perception).with_max_steps(self.cfg.max_steps)
    }

    fn lm_config(&self) -> Result<ExternalLmConfig> {
        let url = self
            .cfg
            .lm_url
            .clone()
            .ok_or_else(|| config_err(format!("no endpoint: pass --lm-url or set {LM_URL_ENV}")))?;
        Ok(ExternalLmConfig::new(url))
    }

    /// Policy shared by all instances, or `None` for per-instance gold.
    fn shared_policy(&self) -> Result<Option<Box<dyn Policy>>> {
        Ok(Some(match &self.cfg.policy {
            PolicySpec::Gold => return Ok(None),
            PolicySpec::Oracle => Box::new(OraclePolicy::new(self.oracle.clone())),
            PolicySpec::Forward => Box::new(ForwardPolicy),
            PolicySpec::Toy(None) => Box::new(ToyPolicy::default()),
            PolicySpec::Toy(Some(p)) => {
                Box::new(ToyPolicy::load(p).map_err(|e| config_err(e.to_string()))?)
            }
            PolicySpec::External => Box::new(ExternalPolicy::live(self.lm_config()?)),
            PolicySpec::Record(p) => {
                let c = Cassette::open(p, CassetteMode::Record).map_err(|e| config_err(e.to_string()))?;
                Box::new(ExternalPolicy::recording(self.lm_config()?, c))
            }
            PolicySpec::Replay(p) => {
                let c = Cassette::open(p, CassetteMode::Replay).map_err(|e| config_err(e.to_string()))?;
                Box::new(ExternalPolicy::replaying(c))
            }
        }))
    }

    fn gold_policy(&self, inst: &NavInstance) -> Result<ScriptedPolicy> {
        let gold = derive_gold_actions_with(&self.graph, inst, &self.cfg.env())?;
        Ok(ScriptedPolicy::new(gold.actions))
    }

    fn episodes_dir(&self) -> Result<PathBuf> {
        let dir = self.cfg.out_dir.join("episodes");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    /// Runs `instances`, in parallel when the policy allows it.
    fn run_all(&self, instances: &[&NavInstance], policy: Option<&dyn Policy>) -> Result<Vec<EpisodeLog>> {
        let runner = self.runner();
        let one = |inst: &NavInstance| -> Result<EpisodeLog> {
            match policy {
                Some(p) => Ok(runner.run(inst, p)?),
                None => Ok(runner.run(inst, &self.gold_policy(inst)?)?),
            }
        };
        let sequential = matches!(
            self.cfg.policy,
            PolicySpec::External | PolicySpec::Record(_) | PolicySpec::Replay(_)
        );
        if sequential {
            instances.iter().map(|i| one(i)).collect()
        } else {
            with_pool(self.cfg.workers, || instances.par_iter().map(|i| one(i)).collect())
        }
    }
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn file_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn cmd_env_check(dir: Option<PathBuf>) -> Result<i32> {
    let set = match dir {
        Some(d) => fixtures::load_dir(&d).map_err(|e| config_err(e.to_string()))?,
        None => fixtures::bundled(),
    };
    let checks = set.check()?;
    let list = |s: &[crate::environment::Action]| {
        s.iter().map(|a| a.literal()).collect::<Vec<_>>().join(", ")
    };
    println!("{:<10} {:<10} {:<44} {:<44}", "fixture", "path", "original", "modified");
    let mut failures = Vec::new();
    for pair in checks.chunks(2) {
        let cell = |c: &fixtures::RowCheck| {
            let mark = match (c.passed(), c.is_shortest()) {
                (false, _) => "FAIL",
                (true, true) => "ok",
                (true, false) => "ok*",
            };
            format!("[{}] {mark}", list(&c.expected))
        };
        println!(
            "{:<10} {:<10} {:<44} {:<44}",
            pair[0].fixture,
            pair[0].path,
            cell(&pair[0]),
            pair.get(1).map(cell).unwrap_or_default()
        );
        failures.extend(pair.iter().filter(|c| !c.passed()));
    }
    for f in &failures {
        eprintln!("mismatch: {f}");
    }
    println!("{} rows, {} mismatches", checks.len() / 2, failures.len());
    if checks.iter().any(|c| c.passed() && !c.is_shortest()) {
        println!("* replays correctly but a shorter sequence exists");
    }
    Ok(i32::from(!failures.is_empty()))
}

fn cmd_graph_gen(a: GraphGenArgs) -> Result<i32> {
    if a.nodes < 4 {
        return Err(config_err("--nodes must be at least 4"));
    }
    if !(0.0..=1.0).contains(&a.intersection_ratio) {
        return Err(config_err("--intersection-ratio must lie in [0, 1]"));
    }
    let cfg = SyntheticConfig {
        seed: a.seed,
        n_nodes: a.nodes,
        intersection_ratio: a.intersection_ratio,
        n_instances: a.instances,
        ..SyntheticConfig::default()
    };
    let w = generate_world(&cfg);
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    store_graph(&w.graph, a.out_dir.join("graph.json"))?;
    store_instances(&w.instances, a.out_dir.join("instances.jsonl"))?;
    w.scores
        .store(a.out_dir.join("stats.jsonl"), a.out_dir.join("raw_scores.jsonl"))?;
    println!(
        "wrote {} nodes, {} edges, {} instances to {}",
        w.graph.node_count(),
        w.graph.edge_count(),
        w.instances.len(),
        a.out_dir.display()
    );
    Ok(0)
}

fn cmd_run(ws: &Workspace, instance_id: Option<String>, interactive: bool) -> Result<i32> {
    let selected: Vec<&NavInstance> = ws
        .instances
        .iter()
        .filter(|i| instance_id.as_deref().is_none_or(|id| i.id == id))
        .collect();
    if selected.is_empty() {
        return Err(config_err("no instance matches --instance-id"));
    }
    let logs = if interactive {
        let p = InteractivePolicy::stdio();
        let runner = ws.runner();
        selected
            .iter()
            .map(|i| runner.run(i, &p).map_err(anyhow::Error::from))
            .collect::<Result<Vec<_>>>()?
    } else {
        let shared = ws.shared_policy()?;
        ws.run_all(&selected, shared.as_deref())?
    };
    let dir = ws.episodes_dir()?;
    let mut failed = false;
    for log in &logs {
        let s = &log.summary;
        log.write_jsonl(dir.join(format!("{}.jsonl", file_name(&s.instance_id))))?;
        println!(
            "{}: steps={} stopped={} final={}{}",
            s.instance_id,
            s.steps,
            s.stopped,
            s.final_node,
            s.error.as_deref().map(|e| format!(" error={e}")).unwrap_or_default()
        );
        failed |= s.error.is_some();
    }
    Ok(i32::from(failed))
}

fn cmd_evaluate(ws: &Workspace) -> Result<i32> {
    let shared = ws.shared_policy()?;
    let all: Vec<&NavInstance> = ws.instances.iter().collect();
    let logs = ws.run_all(&all, shared.as_deref())?;
    let dir = ws.episodes_dir()?;
    let env = ws.cfg.env();
    let mut results: Vec<EvalResult> = Vec::with_capacity(logs.len());
    let mut per_instance = String::new();
    let mut failed = false;
    for (inst, log) in ws.instances.iter().zip(&logs) {
        log.write_jsonl(dir.join(format!("{}.jsonl", file_name(&inst.id))))?;
        failed |= log.summary.error.is_some();
        let gold = derive_gold_actions_with(&ws.graph, inst, &env)?;
        let r = evaluate(&ws.graph, log, inst, &gold, &env)?;
        per_instance.push_str(&serde_json::to_string(&r)?);
        per_instance.push('\n');
        results.push(r);
    }
    let report = EvalReport::from_results(&results);
    write(&ws.cfg.out_dir.join("per_instance.jsonl"), &per_instance)?;
    write(
        &ws.cfg.out_dir.join("report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "n={} tc={:.4} spd={:.4} kpa={:.4}",
        report.n, report.tc, report.spd, report.kpa
    );
    Ok(i32::from(failed))
}

fn cmd_train(ws: &Workspace, t: TrainArgs, f: &FileConfig) -> Result<i32> {
    let mut policy = match &ws.cfg.policy {
        PolicySpec::Toy(None) => ToyPolicy::default(),
        PolicySpec::Toy(Some(p)) => ToyPolicy::load(p).map_err(|e| config_err(e.to_string()))?,
        other => return Err(config_err(format!("train needs a toy policy, got {other:?}"))),
    };
    if let Some(lr) = t.learning_rate.or(f.learning_rate) {
        policy.learning_rate = lr;
    }
    let dev = match optional_existing(t.dev_instances.or_else(|| f.dev_instances.clone()), "dev-instances")? {
        Some(p) => load_instances(&p).map_err(|e| config_err(e.to_string()))?,
        None => ws.instances.clone(),
    };
    let cfg = RblConfig {
        lambda: t.lambda.or(f.lambda).unwrap_or(DEFAULT_LAMBDA),
        epochs: t.epochs.or(f.epochs).unwrap_or(20),
        seed: ws.cfg.seed,
        batch_size: t.batch_size.or(f.batch_size).unwrap_or(1),
    };
    cfg.validate().map_err(|e| config_err(e.to_string()))?;
    let ctx = RblContext {
        runner: ws.runner(),
        oracle: ws.oracle.clone(),
    };
    let out = with_pool(ws.cfg.workers, || train(&ctx, &ws.instances, &dev, policy, &cfg))?;
    fs::create_dir_all(&ws.cfg.out_dir)?;
    out.policy.store(ws.cfg.out_dir.join("weights.json"))?;
    write(&ws.cfg.out_dir.join("train_report.jsonl"), &report_jsonl(&out.epochs))?;
    for e in &out.epochs {
        println!(
            "epoch {:>3} loss={:.4} dev_tc={:.4} teacher={} self={} oracle={}",
            e.epoch, e.mean_loss, e.dev_tc, e.branches.teacher, e.branches.student_self, e.branches.student_oracle
        );
    }
    println!(
        "untrained dev_tc={:.4}; best epoch {} kept",
        out.initial_dev_tc, out.best_epoch
    );
    Ok(0)
}

fn cmd_dump_prompt(ws: &Workspace, id: &str, episode: Option<PathBuf>, step: Option<usize>) -> Result<i32> {
    let inst = ws
        .instances
        .iter()
        .find(|i| i.id == id)
        .ok_or_else(|| config_err(format!("no instance with id {id:?}")))?;
    let parts = PromptParts::new(&ws.perception.templates, &inst.instructions);
    let text = match episode {
        None => {
            let r = inst.resolve(&ws.graph)?;
            let start = ws.cfg.env().reset(&ws.graph, r.start);
            let lms = crate::landmarks::LandmarkSet::new(inst.landmarks.clone().unwrap_or_default())?;
            let p = &ws.perception;
            let obs = observe(&ws.graph, start, &lms, &p.table, p.tau);
            assemble_prompt_from_text(&parts, &[], &render_observation(&obs, &p.templates))
        }
        Some(path) => {
            let log = EpisodeLog::read_jsonl(&path)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            let steps: Vec<(String, crate::environment::Action)> = log
                .records
                .iter()
                .map(|r| (r.observation.clone(), r.action))
                .collect();
            if steps.is_empty() {
                bail!("episode {} has no steps", path.display());
            }
            let n = step.unwrap_or(steps.len());
            if n == 0 || n > steps.len() {
                return Err(config_err(format!("--step must lie in 1..={}", steps.len())));
            }
            let prompt = assemble_prompt_from_text(&parts, &steps[..n - 1], &steps[n - 1].0);
            if step.is_some() {
                prompt
            } else {
                format!("{prompt} {}", steps[n - 1].1.literal())
            }
        }
    };
    println!("{text}");
    Ok(0)
}

fn cmd_extract(ws: &Workspace, style: DatasetStyle, print_only: bool) -> Result<i32> {
    let mut out = Vec::with_capacity(ws.instances.len());
    let lm = if print_only { None } else { Some(ws.lm_config()?) };
    for inst in &ws.instances {
        let prompt = build_extraction_prompt(&inst.instructions, style)?;
        let Some(lm) = &lm else {
            println!("# {}\n{prompt}\n", inst.id);
            continue;
        };
        let resp = complete_text(lm, &prompt)?;
        let set = parse_extraction_response(&resp)?;
        println!("{}: {}", inst.id, set.iter().collect::<Vec<_>>().join(" | "));
        let mut inst = inst.clone();
        inst.landmarks = Some(set.into_vec());
        out.push(inst);
    }
    if lm.is_some() {
        fs::create_dir_all(&ws.cfg.out_dir)?;
        store_instances(&out, ws.cfg.out_dir.join("instances_with_landmarks.jsonl"))?;
    }
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<i32> {
    let file = load_file_config(cli.config.as_deref())?;
    let load = |run: RunArgs| RunConfig::resolve(run, &file).and_then(Workspace::load);
    match cli.command {
        Command::EnvCheck { fixtures_dir } => cmd_env_check(fixtures_dir),
        Command::GraphGen(a) => cmd_graph_gen(a),
        Command::Run {
            run,
            instance_id,
            interactive,
        } => cmd_run(&load(run)?, instance_id, interactive),
        Command::Evaluate { run } => cmd_evaluate(&load(run)?),
        Command::Train { run, train } => cmd_train(&load(run)?, train, &file),
        Command::DumpPrompt {
            run,
            instance_id,
            episode,
            step,
        } => cmd_dump_prompt(&load(run)?, &instance_id, episode, step),
        Command::Extract {
            run,
            dataset_style,
            print_prompts,
        } => cmd_extract(&load(run)?, dataset_style, print_prompts),
    }
}

/// Runs the command line and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_specs_parse() {
        assert_eq!("oracle".parse::<PolicySpec>().unwrap(), PolicySpec::Oracle);
        assert_eq!("toy".parse::<PolicySpec>().unwrap(), PolicySpec::Toy(None));
        assert_eq!(
            "toy:w.json".parse::<PolicySpec>().unwrap(),
            PolicySpec::Toy(Some("w.json".into()))
        );
        assert_eq!(
            "replay:c.jsonl".parse::<PolicySpec>().unwrap(),
            PolicySpec::Replay("c.jsonl".into())
        );
        assert!("replay".parse::<PolicySpec>().is_err());
        assert!("gpt".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn flags_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.json");
        let i = dir.path().join("i.jsonl");
        fs::write(&g, "{}").unwrap();
        fs::write(&i, "").unwrap();
        let file: FileConfig = toml::from_str(&format!(
            "graph = {:?}\ninstances = {:?}\ntau = 2.0\nmax-steps = 9\nsemantics = \"original\"",
            g, i
        ))
        .unwrap();
        let args = RunArgs {
            tau: Some(4.0),
            ..RunArgs::default()
        };
        let cfg = RunConfig::resolve(args, &file).unwrap();
        assert_eq!(cfg.tau, 4.0);
        assert_eq!(cfg.max_steps, 9);
        assert_eq!(cfg.semantics, Semantics::Original);
        assert_eq!(cfg.policy, PolicySpec::Oracle);
    }

    #[test]
    fn missing_files_are_config_errors() {
        let err = RunConfig::resolve(RunArgs::default(), &FileConfig::default()).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }
}
