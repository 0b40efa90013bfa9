//! Trains the toy policy on a synthetic world with and without student
//! rollouts and compares held-out task completion.
//!
//! cargo run --release --example rbl_training -- [seed] [nodes] [test instances] [learning rate]

use std::sync::Arc;

use urbannav::environment::{EnvConfig, EpisodeRunner, Perception};
use urbannav::nav_graph::{generate_world, SyntheticConfig};
use urbannav::policy::{Oracle, ToyPolicy};
use urbannav::rbl::{lambda_ablation, RblConfig, RblContext};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let nodes: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let n_test: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let lr: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1.0);

    let world = generate_world(&SyntheticConfig {
        n_instances: 100 + n_test,
        ..SyntheticConfig::new(seed, nodes, 0.3)
    });
    let (train, rest) = world.instances.split_at(50);
    let (dev, test) = rest.split_at(50);

    let perception = Perception {
        table: world.scores.clone(),
        ..Perception::default()
    };
    let env = EnvConfig::default();
    let runner = EpisodeRunner::new(&world.graph, env, &perception);
    let ctx = RblContext {
        runner,
        oracle: Arc::new(Oracle::from_graph(&world.graph, env)),
    };
    let base = RblConfig {
        seed,
        ..RblConfig::default()
    };
    let runs = lambda_ablation(&ctx, [train, dev, test], &ToyPolicy::new(lr), &[0.0, 0.5, 1.0], &base)?;

    println!("world seed {seed}: {} nodes, {} test instances", world.graph.node_count(), test.len());
    println!("untrained test TC {:.3}", runs[0].untrained_tc);
    for r in &runs {
        println!(
            "lambda {:.1}: test TC {:.3} (gain {:+.3}, best epoch {})",
            r.lambda,
            r.trained_tc,
            r.gain(),
            r.best_epoch
        );
    }
    Ok(())
}
