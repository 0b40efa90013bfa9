//! From instructions to visible landmarks: the extraction prompt, parsing a
//! completion, standardizing raw scores and thresholding them.

use urbannav::landmarks::{
    build_extraction_prompt, parse_extraction_response, visible_sightings, z_score, DatasetStyle,
    Direction, ScoreTable, DEFAULT_TAU,
};

fn main() -> anyhow::Result<()> {
    let instructions = "Head past the market and the cathedral and make a right at the light. \
        At the next light with the Delicatessen on the corner make a left. \
        Stop in front of the fire hall.";
    let prompt = build_extraction_prompt(instructions, DatasetStyle::Map2seq)?;
    println!("--- prompt tail ---\n{}", tail(&prompt, 4));

    let completion = "1. a market\n2. a cathedral\n3. a Delicatessen\n4. a fire hall\n\nThese are all.";
    let landmarks = parse_extraction_response(completion)?;
    println!("--- parsed ---\n{:?}", landmarks.iter().collect::<Vec<_>>());

    // Raw similarity scores only mean something relative to each
    // landmark's own distribution.
    let mut table = ScoreTable::new();
    table.insert_stats("a cathedral", 0.21, 0.03)?;
    table.insert_stats("a fire hall", 0.25, 0.02)?;
    table.insert_raw("a cathedral", "n1", -45, 0.34)?;
    table.insert_raw("a cathedral", "n1", 0, 0.27)?;
    table.insert_raw("a fire hall", "n1", 90, 0.31)?;

    println!("--- standardized at n1 ---");
    for lm in ["a cathedral", "a fire hall"] {
        for d in Direction::ALL {
            if let Some(z) = z_score(&table, lm, "n1", d.offset_deg())? {
                println!("{lm:<12} {:<14} z = {z:.2}", d.literal());
            }
        }
    }
    for tau in [2.5, DEFAULT_TAU] {
        let seen = visible_sightings(&table, &landmarks, "n1", tau);
        let names: Vec<String> = seen
            .iter()
            .map(|s| format!("{} ({})", s.landmark, s.direction.literal()))
            .collect();
        println!("tau {tau}: {}", if names.is_empty() { "nothing".into() } else { names.join(", ") });
    }
    Ok(())
}

fn tail(text: &str, lines: usize) -> String {
    let all: Vec<&str> = text.lines().collect();
    all[all.len().saturating_sub(lines)..].join("\n")
}
