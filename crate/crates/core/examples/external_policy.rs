//! Drives an episode through an HTTP scoring endpoint, records the
//! exchanges to a cassette, then replays them offline.
//!
//! A local mock server stands in for a real language model. It prefers
//! "forward" until the prompt has seen four actions, then "stop".

use urbannav::environment::{EnvConfig, EpisodeRunner, Perception};
use urbannav::nav_graph::{generate_world, SyntheticConfig};
use urbannav::policy::{
    Cassette, CassetteMode, ExternalLmConfig, ExternalPolicy, MockLmServer, MockReply,
};

fn main() -> anyhow::Result<()> {
    let server = MockLmServer::start(MockReply::scored(|prompt| {
        let steps = prompt
            .lines()
            .filter(|l| l.split_once(". ").is_some_and(|(n, _)| n.parse::<u32>().is_ok()))
            .count();
        if steps < 4 {
            vec![-0.1, -3.0, -3.0, -4.0, -5.0]
        } else {
            vec![-3.0, -3.0, -3.0, -4.0, -0.1]
        }
    }))?;
    println!("mock endpoint at {}", server.url());

    let world = generate_world(&SyntheticConfig {
        n_instances: 1,
        ..SyntheticConfig::new(3, 40, 0.3)
    });
    let perception = Perception {
        table: world.scores.clone(),
        ..Perception::default()
    };
    let runner = EpisodeRunner::new(&world.graph, EnvConfig::default(), &perception);
    let inst = &world.instances[0];

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("cassette.jsonl");

    let recorder = ExternalPolicy::recording(
        ExternalLmConfig::new(server.url()),
        Cassette::open(&path, CassetteMode::Record)?,
    );
    let live = runner.run(inst, &recorder)?;
    println!(
        "recorded {} steps, {} requests",
        live.records.len(),
        server.request_count()
    );
    drop(server);

    let replayer = ExternalPolicy::replaying(Cassette::open(&path, CassetteMode::Replay)?);
    let replayed = runner.run(inst, &replayer)?;
    let same = live.to_jsonl() == replayed.to_jsonl();
    println!("replayed offline, identical log: {same}");
    anyhow::ensure!(same, "replay diverged from the recording");
    Ok(())
}
