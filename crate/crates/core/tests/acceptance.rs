//! One line per acceptance criterion: `PASS` or `FAIL`, the measured values
//! and the pinned tolerance. Exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use urbannav::environment::{fixtures, EpisodeRunner, Semantics};
use urbannav::landmarks::{parse_extraction_response, visible_sightings, z_score, LandmarkSet, ScoreTable, VIEW_OFFSETS};
use urbannav::metrics::{evaluate, EvalReport};
use urbannav::nav_graph::derive_gold_actions;
use urbannav::policy::{Oracle, OraclePolicy, ToyPolicy, TrainingExample, FEATURE_COUNT};
use urbannav::rbl::{lambda_ablation, RblConfig, RblContext};
use urbannav::verbalizer::{assemble_prompt, assemble_prompt_from_text, Observation, PromptParts, Templates};
use urbannav::{step_modified, Action, AgentState, EnvConfig, Policy, Sighting};

const TABLE_BUDGET: Duration = Duration::from_secs(1);
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const RBL_BUDGET: Duration = Duration::from_secs(300);
const Z_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-5;
const RBL_MIN_GAIN: f64 = 0.20;
const RBL_MIN_MARGIN: f64 = 0.05;
const RBL_SEEDS: [u64; 3] = [1, 2, 3];

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let (pass, detail) = f();
    Verdict { name, pass, detail }
}

fn intersection_table() -> (bool, String) {
    let t0 = Instant::now();
    let checks = fixtures::bundled().check().expect("bundled fixtures load");
    let elapsed = t0.elapsed();
    let failed = checks.iter().filter(|c| !c.passed()).count();
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_urbannav"))
        .arg("env-check")
        .output()
        .expect("binary runs")
        .status;
    let pass = checks.len() == 18 && failed == 0 && status.success() && elapsed < TABLE_BUDGET;
    (
        pass,
        format!(
            "{} row/semantics cases, {failed} mismatches, env-check exit {:?}, {:.1} ms (< {} s)",
            checks.len(),
            status.code(),
            elapsed.as_secs_f64() * 1e3,
            TABLE_BUDGET.as_secs()
        ),
    )
}

fn four_way_forward() -> (bool, String) {
    let fx = fixtures::four_way();
    let g = &fx.graph;
    let start = AgentState::new(g.index_of("v2").unwrap(), 20.0);
    let v3 = g.index_of("v3").unwrap();
    let orig = EnvConfig::new(Semantics::Original)
        .step(g, start, Action::Forward)
        .unwrap()
        .next_state;
    let arrived = step_modified(g, start, Action::Forward).next_state;
    let turned = step_modified(g, arrived, Action::Right).next_state;
    let pass = orig.same_as(&AgentState::new(v3, 50.0))
        && arrived.same_as(&AgentState::new(v3, 20.0))
        && turned.same_as(&AgentState::new(v3, 50.0));
    (
        pass,
        format!(
            "original forward -> {:.0}°, modified forward -> {:.0}° then right -> {:.0}°",
            orig.heading_deg, arrived.heading_deg, turned.heading_deg
        ),
    )
}

fn oracle_soundness() -> (bool, String) {
    let t0 = Instant::now();
    let w = common::world(2024, 120, 200);
    let p = common::perception(&w);
    let env = EnvConfig::default();
    let runner = EpisodeRunner::new(&w.graph, env, &p);
    let policy = OraclePolicy::new(Arc::new(Oracle::from_graph(&w.graph, env)));
    let results: Vec<_> = w
        .instances
        .iter()
        .map(|inst| {
            let gold = derive_gold_actions(&w.graph, inst).unwrap();
            let log = runner.run(inst, &policy).unwrap();
            evaluate(&w.graph, &log, inst, &gold, &env).unwrap()
        })
        .collect();
    let r = EvalReport::from_results(&results);
    let elapsed = t0.elapsed();
    let pass = r.n == 200 && r.tc == 1.0 && r.spd == 0.0 && r.kpa == 1.0 && elapsed < ORACLE_BUDGET;
    (
        pass,
        format!(
            "n={} TC={:.3} SPD={:.3} KPA={:.3} (exact), {:.2} s (< {} s)",
            r.n,
            r.tc,
            r.spd,
            r.kpa,
            elapsed.as_secs_f64(),
            ORACLE_BUDGET.as_secs()
        ),
    )
}

fn metric_oracles() -> (bool, String) {
    let env = EnvConfig::default();
    let w = common::world(5, 60, 50);
    let p = common::perception(&w);
    let runner = EpisodeRunner::new(&w.graph, env, &p);
    let mut mismatches = 0;
    for (i, inst) in w.instances.iter().enumerate() {
        let gold = derive_gold_actions(&w.graph, inst).unwrap();
        let policy = common::RandomPolicy {
            seed: i as u64,
            stop_prob: 0.15,
        };
        let log = runner.run(inst, &policy).unwrap();
        let r = evaluate(&w.graph, &log, inst, &gold, &env).unwrap();
        let ok = r.tc == common::brute_tc(&w.graph, &log, inst)
            && r.spd == common::brute_spd(&w.graph, &log, inst)
            && r.kpa == common::brute_kpa(&w.graph, &log, inst, &gold, &env);
        mismatches += usize::from(!ok);
    }

    let mut fuzzed = 0;
    let mut violations = 0;
    for seed in 0..10u64 {
        let w = common::world(100 + seed, 40, 100);
        let p = common::perception(&w);
        let runner = EpisodeRunner::new(&w.graph, env, &p).with_max_steps(20);
        for (i, inst) in w.instances.iter().enumerate() {
            let gold = derive_gold_actions(&w.graph, inst).unwrap();
            let policy = common::RandomPolicy {
                seed: seed * 1000 + i as u64,
                stop_prob: 0.05 + 0.1 * (i % 4) as f64,
            };
            let log = runner.run(inst, &policy).unwrap();
            let r = evaluate(&w.graph, &log, inst, &gold, &env).unwrap();
            let bad = (r.tc == 1 && r.spd > 1) || (r.spd == 0 && log.stopped() && r.tc != 1);
            violations += usize::from(bad);
            fuzzed += 1;
        }
    }
    (
        mismatches == 0 && violations == 0 && fuzzed == 1000,
        format!("50 episodes, {mismatches} brute-force mismatches; {fuzzed} fuzzed, {violations} invariant violations"),
    )
}

fn standardization() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut affine_worst: f64 = 0.0;
    let mut monotone_ok = true;
    let set = LandmarkSet::new(vec!["lm".into()]).unwrap();
    for _ in 0..1000 {
        let raw: f64 = rng.random_range(-1.0..1.0);
        let mu: f64 = rng.random_range(-1.0..1.0);
        let sigma: f64 = rng.random_range(1e-3..1.0);
        let o = VIEW_OFFSETS[rng.random_range(0..5)];
        let mut t = ScoreTable::new();
        t.insert_stats("lm", mu, sigma).unwrap();
        t.insert_raw("lm", "n", o, raw).unwrap();
        let z = z_score(&t, "lm", "n", o).unwrap().unwrap();
        worst = worst.max((z - (raw - mu) / sigma).abs());

        let a: f64 = rng.random_range(0.1..10.0);
        let b: f64 = rng.random_range(-5.0..5.0);
        let mut t2 = ScoreTable::new();
        t2.insert_stats("lm", a * mu + b, a * sigma).unwrap();
        t2.insert_raw("lm", "n", o, a * raw + b).unwrap();
        let z2 = z_score(&t2, "lm", "n", o).unwrap().unwrap();
        affine_worst = affine_worst.max((z - z2).abs());

        let tau: f64 = rng.random_range(-3.0..3.0);
        let hi = tau + rng.random_range(0.0..2.0);
        let low = visible_sightings(&t, &set, "n", tau);
        let high = visible_sightings(&t, &set, "n", hi);
        monotone_ok &= high.len() <= low.len() && high.iter().all(|s| low.contains(s));
    }
    (
        worst <= Z_TOL && affine_worst <= Z_TOL && monotone_ok,
        format!(
            "1000 triples: max |z - (s-mu)/sigma| = {worst:.1e}, max affine drift = {affine_worst:.1e} (<= {Z_TOL:.0e}); tau-monotone: {monotone_ok}"
        ),
    )
}

fn prompt_goldens() -> (bool, String) {
    let t = Templates::default();
    let parts = PromptParts::new(
        &t,
        "Turn right at the 4-way intersection with a red mailbox on your right. Stop in front of Chase.",
    );
    let sighting = |l: &str, d| Sighting {
        landmark: l.into(),
        direction: d,
        z: 4.0,
    };
    use urbannav::landmarks::Direction;
    let history = vec![
        (Observation::default(), Action::Forward),
        (
            Observation {
                intersection_arity: Some(4),
                sightings: vec![sighting("a red mailbox", Direction::Right)],
            },
            Action::Right,
        ),
        (
            Observation {
                intersection_arity: Some(4),
                sightings: vec![],
            },
            Action::Forward,
        ),
    ];
    let current = Observation {
        intersection_arity: None,
        sightings: vec![sighting("Chase", Direction::Ahead)],
    };
    let golden = include_str!("golden/prompt_three_steps.txt");
    let stable = (0..3).all(|_| assemble_prompt(&parts, &t, &history, &current) == golden);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let texts = ["", "There is a 3-way intersection.", "There is a bakery on your left."];
    let mut monotone = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..30);
        let hist: Vec<(String, Action)> = (0..n)
            .map(|_| (texts[rng.random_range(0..3)].to_string(), Action::ALL[rng.random_range(0..5)]))
            .collect();
        let ok = (0..n - 1).all(|k| {
            let a = assemble_prompt_from_text(&parts, &hist[..k], &hist[k].0);
            let b = assemble_prompt_from_text(&parts, &hist[..k + 1], &hist[k + 1].0);
            b.starts_with(&format!("{a} {}\n", hist[k].1.literal()))
        });
        monotone += usize::from(ok);
    }
    (
        stable && monotone == 100,
        format!("golden byte-identical over 3 runs: {stable}; prefix-monotone histories: {monotone}/100"),
    )
}

fn rbl_effectiveness() -> (bool, String) {
    let t0 = Instant::now();
    let runs: Vec<(u64, f64, f64, f64)> = RBL_SEEDS
        .par_iter()
        .map(|&seed| {
            let w = common::world(seed, 100, 300);
            let (train, rest) = w.instances.split_at(50);
            let (dev, test) = rest.split_at(50);
            let p = common::perception(&w);
            let env = EnvConfig::default();
            let ctx = RblContext::new(EpisodeRunner::new(&w.graph, env, &p));
            let base = RblConfig {
                seed,
                epochs: 20,
                ..RblConfig::default()
            };
            let r = lambda_ablation(&ctx, [train, dev, test], &ToyPolicy::new(1.0), &[0.0, 0.5], &base)
                .expect("training runs");
            (seed, r[0].untrained_tc, r[0].trained_tc, r[1].trained_tc)
        })
        .collect();
    let elapsed = t0.elapsed();
    let mut passed = 0;
    let mut parts = Vec::new();
    for (seed, untrained, tf, rbl) in runs {
        let ok = rbl - untrained >= RBL_MIN_GAIN - 1e-12 && rbl - tf >= RBL_MIN_MARGIN - 1e-12;
        passed += usize::from(ok);
        parts.push(format!(
            "seed {seed}: untrained {untrained:.3}, lambda=0 {tf:.3}, lambda=0.5 {rbl:.3} [{}]",
            if ok { "ok" } else { "miss" }
        ));
    }
    let pass = passed * 2 > RBL_SEEDS.len() && elapsed < RBL_BUDGET;
    (
        pass,
        format!(
            "{}; {passed}/3 seeds meet gain >= {RBL_MIN_GAIN} and margin >= {RBL_MIN_MARGIN}; {:.0} s (< {} s)",
            parts.join("; "),
            elapsed.as_secs_f64(),
            RBL_BUDGET.as_secs()
        ),
    )
}

fn gradient_check() -> (bool, String) {
    // Contexts from real rollouts, references drawn at random.
    let w = common::world(31, 60, 20);
    let p = common::perception(&w);
    let runner = EpisodeRunner::new(&w.graph, EnvConfig::default(), &p);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut examples = Vec::new();
    for (i, inst) in w.instances.iter().enumerate() {
        let policy = common::RandomPolicy {
            seed: i as u64,
            stop_prob: 0.1,
        };
        let trace = runner.trace(inst, &policy).unwrap();
        for (prompt, ctx) in trace.prompts.into_iter().zip(trace.contexts).take(6) {
            examples.push(TrainingExample {
                prompt,
                context: ctx,
                reference: Action::ALL[rng.random_range(0..5)],
            });
        }
    }
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..20 {
        let w: Vec<f64> = (0..5 * FEATURE_COUNT).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut p = ToyPolicy::default();
        p.set_weights(&w);
        let (_, grad) = p.loss_and_gradient(&examples);
        for k in 0..w.len() {
            let mut q = p.clone();
            let mut wk = w.clone();
            wk[k] = w[k] + h;
            q.set_weights(&wk);
            let up = q.loss(&examples).unwrap();
            wk[k] = w[k] - h;
            q.set_weights(&wk);
            let down = q.loss(&examples).unwrap();
            worst = worst.max(((up - down) / (2.0 * h) - grad[k]).abs());
        }
    }
    (
        worst < GRAD_TOL,
        format!(
            "20 weight vectors x {} coordinates on {} examples: max |analytic - central difference| = {worst:.1e} (< {GRAD_TOL:.0e})",
            5 * FEATURE_COUNT,
            examples.len()
        ),
    )
}

fn extraction_parsing() -> (bool, String) {
    let worked = parse_extraction_response("1. a market\n2. a cathedral\n3. a Delicatessen\n4. a fire hall").unwrap();
    let expected = ["a market", "a cathedral", "a Delicatessen", "a fire hall"];
    let none = parse_extraction_response("None").unwrap();
    let pass = worked.iter().eq(expected.iter().copied()) && none.is_empty();
    (
        pass,
        format!(
            "6205 -> {:?}; \"None\" -> {} landmarks",
            worked.iter().collect::<Vec<_>>(),
            none.len()
        ),
    )
}

fn main() -> ExitCode {
    let verdicts = [
        check("intersection table", intersection_table),
        check("four-way forward regression", four_way_forward),
        check("oracle soundness", oracle_soundness),
        check("metric oracles", metric_oracles),
        check("standardization identities", standardization),
        check("prompt goldens", prompt_goldens),
        check("response-based learning", rbl_effectiveness),
        check("toy gradient check", gradient_check),
        check("extraction parsing", extraction_parsing),
    ];
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    for v in &verdicts {
        println!("{} {:<28} {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    println!("{} of {} criteria pass", verdicts.len() - failed, verdicts.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
