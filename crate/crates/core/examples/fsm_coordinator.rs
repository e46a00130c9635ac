//! Runs a noisy decision stream through the milling FSM and prints what the
//! coordinator commits and rejects.

use millwatch::coordinator::{Coordinator, CoordinatorConfig, FsmDefinition, Outcome};

fn main() -> millwatch::Result<()> {
    let fsm = FsmDefinition::milling();
    for (x, e, y) in fsm.transitions() {
        println!(
            "{} -[{}]-> {}",
            fsm.states()[x],
            fsm.events()[e],
            fsm.states()[y]
        );
    }
    println!();

    // Class indices: 0..4 are states, 4..7 are events. The stray 2 and 6
    // are classifier glitches; the second 4 repeats an already taken event.
    let decisions = [0, 0, 2, 0, 4, 1, 4, 1, 6, 1, 5, 2, 2, 6, 3];
    let mut coord = Coordinator::new(fsm.clone(), CoordinatorConfig::default());
    for (i, &d) in decisions.iter().enumerate() {
        let t = i as f64 * 0.1;
        let outcome = coord.step(d, t, None)?;
        let detail = match &outcome {
            Outcome::Hold => String::new(),
            Outcome::Transition(tr) => {
                format!("{} -> {}", fsm.states()[tr.from], fsm.states()[tr.to])
            }
            Outcome::Rejected(inc) => format!("{:?}", inc.severity).to_lowercase(),
        };
        println!(
            "t={t:.1} {:<14} {:<20} {detail}",
            fsm.class_name(d).unwrap_or("?"),
            outcome.label()
        );
    }
    println!(
        "\nfinal state {}, {} incidents kept, {} repeats",
        coord.state_name(),
        coord.incidents().len(),
        coord.repeat_count()
    );
    Ok(())
}
