//! Runs the oracle on one synthetic instance and prints the prompt the
//! policy saw at its final step, followed by the step log.

use std::sync::Arc;

use urbannav::environment::{EnvConfig, EpisodeRunner, Perception};
use urbannav::nav_graph::{generate_world, SyntheticConfig};
use urbannav::policy::{Oracle, OraclePolicy};

fn main() -> anyhow::Result<()> {
    let world = generate_world(&SyntheticConfig {
        n_instances: 3,
        ..SyntheticConfig::new(11, 40, 0.3)
    });
    let env = EnvConfig::default();
    let perception = Perception {
        table: world.scores.clone(),
        ..Perception::default()
    };
    let policy = OraclePolicy::new(Arc::new(Oracle::from_graph(&world.graph, env)));
    let runner = EpisodeRunner::new(&world.graph, env, &perception);

    let inst = &world.instances[0];
    let trace = runner.trace(inst, &policy)?;
    let last = trace.prompts.last().expect("at least one step");
    println!("{last}\n");
    for r in &trace.log.records {
        println!(
            "t={:<2} {:<4} {:>5.1}° {:<11} {}",
            r.t,
            r.node,
            r.heading_deg,
            r.action.literal(),
            r.observation
        );
    }
    println!("stopped={} at {}", trace.log.summary.stopped, trace.log.summary.final_node);
    Ok(())
}
