//! Scores several policies on synthetic instances under both semantics.

use std::sync::Arc;

use urbannav::environment::{EnvConfig, EpisodeRunner, Perception, Semantics};
use urbannav::metrics::{evaluate, EvalReport};
use urbannav::nav_graph::{derive_gold_actions_with, generate_world, SyntheticConfig};
use urbannav::policy::{ForwardPolicy, Oracle, OraclePolicy, Policy, ScriptedPolicy};

fn main() -> anyhow::Result<()> {
    let world = generate_world(&SyntheticConfig {
        n_instances: 100,
        ..SyntheticConfig::new(21, 80, 0.3)
    });
    let perception = Perception {
        table: world.scores.clone(),
        ..Perception::default()
    };

    println!("{:<9} {:<8} {:>6} {:>6} {:>6}", "semantics", "policy", "TC", "SPD", "KPA");
    for semantics in [Semantics::Modified, Semantics::Original] {
        let env = EnvConfig::new(semantics);
        let runner = EpisodeRunner::new(&world.graph, env, &perception);
        let oracle = OraclePolicy::new(Arc::new(Oracle::from_graph(&world.graph, env)));
        for name in ["oracle", "gold", "forward"] {
            let mut results = Vec::new();
            for inst in &world.instances {
                let gold = derive_gold_actions_with(&world.graph, inst, &env)?;
                let scripted = ScriptedPolicy::new(gold.actions.clone());
                let policy: &dyn Policy = match name {
                    "oracle" => &oracle,
                    "gold" => &scripted,
                    _ => &ForwardPolicy,
                };
                let log = runner.run(inst, policy)?;
                results.push(evaluate(&world.graph, &log, inst, &gold, &env)?);
            }
            let r = EvalReport::from_results(&results);
            println!(
                "{:<9} {:<8} {:>6.3} {:>6.2} {:>6.3}",
                semantics.to_string(),
                name,
                r.tc,
                r.spd,
                r.kpa
            );
        }
    }
    Ok(())
}
