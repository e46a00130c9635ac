mod common;

use common::fuzz_fsm;
use millwatch::coordinator::{
    Coordinator, CoordinatorConfig, FsmDefinition, Outcome, RejectReason,
};

fn reason(o: Outcome) -> Option<RejectReason> {
    match o {
        Outcome::Rejected(i) => Some(i.reason),
        _ => None,
    }
}

#[test]
fn fuzzed_streams_commit_only_permitted_transitions() {
    let fsm = FsmDefinition::milling();
    let (violations, commits) = fuzz_fsm(&fsm, 20_000, 11);
    assert_eq!(violations, 0);
    assert!(commits > 0);
}

#[test]
fn every_state_jump_and_inactive_event_is_rejected() {
    let fsm = FsmDefinition::milling();
    let path = [None, Some(4), Some(5), Some(6)];
    for x in 0..4 {
        for class in 0..fsm.classes() {
            let mut c = Coordinator::new(fsm.clone(), CoordinatorConfig::default());
            for e in path[1..=x].iter().flatten() {
                c.step(*e, 0.0, None).unwrap();
            }
            assert_eq!(c.state(), x);
            let expected = match class {
                s if s < 4 && s == x => None,
                s if s < 4 => Some(RejectReason::StateJump),
                e if e - 4 == x => None,
                _ => Some(RejectReason::InactiveEvent),
            };
            assert_eq!(
                reason(c.step(class, 1.0, None).unwrap()),
                expected,
                "state {x} class {class}"
            );
        }
    }
}

#[test]
fn milling_trajectories_are_prefixes_of_the_milling_path() {
    use rand::{Rng, SeedableRng};
    let fsm = FsmDefinition::milling();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let mut c = Coordinator::new(fsm.clone(), CoordinatorConfig::default());
        let mut states = vec![c.state()];
        for i in 0..30 {
            if let Outcome::Transition(t) = c.step(rng.random_range(0..7), i as f64, None).unwrap()
            {
                states.push(t.to);
            }
        }
        assert!(
            states.iter().enumerate().all(|(i, &s)| s == i),
            "{states:?}"
        );
    }
}

#[test]
fn replay_is_deterministic() {
    let fsm = FsmDefinition::milling();
    let trace = [0, 2, 4, 4, 1, 6, 5, 2, 6, 3, 0];
    let run = || {
        let mut c = Coordinator::new(fsm.clone(), CoordinatorConfig::default());
        let outs: Vec<String> = trace
            .iter()
            .enumerate()
            .map(|(i, &d)| c.step(d, i as f64, None).unwrap().label().to_string())
            .collect();
        (outs, c.state())
    };
    assert_eq!(run(), run());
    assert_eq!(run().1, 3);
}
