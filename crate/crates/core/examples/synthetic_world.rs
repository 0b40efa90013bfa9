//! Generates a synthetic street grid, prints one instance with its gold
//! actions, and optionally writes the world to a directory.
//!
//! cargo run --example synthetic_world -- [seed] [nodes] [out dir]

use urbannav::nav_graph::{
    derive_gold_actions, generate_world, store_graph, store_instances, SyntheticConfig,
};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let nodes: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(60);
    let out = args.next();

    let cfg = SyntheticConfig {
        n_instances: 10,
        ..SyntheticConfig::new(seed, nodes, 0.3)
    };
    let world = generate_world(&cfg);
    let g = &world.graph;
    let junctions = g.nodes().filter(|&n| g.out_degree(n) >= 3).count();
    println!(
        "{} nodes, {} directed edges, {} intersections, {} instances",
        g.node_count(),
        g.edge_count(),
        junctions,
        world.instances.len()
    );

    let inst = &world.instances[0];
    let gold = derive_gold_actions(g, inst)?;
    println!("\n{}: {} -> {}", inst.id, inst.start_node, inst.target_node);
    println!("route: {}", inst.gold_path.join(" "));
    println!("instructions: {}", inst.instructions);
    println!("landmarks: {:?}", inst.landmarks.as_deref().unwrap_or_default());
    let actions: Vec<&str> = gold.actions.iter().map(|a| a.literal()).collect();
    println!("gold actions: {}", actions.join(", "));

    if let Some(dir) = out {
        let dir = std::path::PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        store_graph(g, dir.join("graph.json"))?;
        store_instances(&world.instances, dir.join("instances.jsonl"))?;
        world
            .scores
            .store(dir.join("stats.jsonl"), dir.join("raw_scores.jsonl"))?;
        println!("\nwrote world to {}", dir.display());
    }
    Ok(())
}
