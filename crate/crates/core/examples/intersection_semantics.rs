//! Walks through one intersection under both transition semantics and
//! replays the bundled fixture table.

use urbannav::environment::fixtures;
use urbannav::{step_modified, step_original, Action, AgentState, NavGraph};

fn show(graph: &NavGraph, s: AgentState) -> String {
    format!("({}, {:.0}°)", graph.id(s.node), s.heading_deg)
}

fn main() -> anyhow::Result<()> {
    let fx = fixtures::four_way();
    let g = &fx.graph;
    let start = fx.start();
    println!("4-way fixture, start {}", show(g, start));

    // The original semantics rotate onto the closest outgoing edge on arrival.
    let arrived = step_original(g, start, Action::Forward)?.next_state;
    println!("original  forward -> {}", show(g, arrived));

    // The modified semantics keep the heading and let the agent choose.
    let mut s = step_modified(g, start, Action::Forward).next_state;
    println!("modified  forward -> {}", show(g, s));
    for a in [Action::Right, Action::Left, Action::Left, Action::TurnAround] {
        let out = step_modified(g, s, a);
        println!("modified  {:<11} -> {} {:?}", a.literal(), show(g, out.next_state), out.note);
        s = out.next_state;
    }

    println!();
    let checks = fixtures::bundled().check()?;
    for c in &checks {
        let mark = if c.passed() { "ok" } else { "FAIL" };
        println!("{mark:<4} {c}");
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    anyhow::ensure!(failed == 0, "{failed} table rows do not replay");
    Ok(())
}
