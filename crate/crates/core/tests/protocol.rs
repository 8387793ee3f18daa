use myoloop::experiment::{Phase, SessionState};
use proptest::prelude::*;

const PHASES: [Phase; 6] = [
    Phase::Pretrain,
    Phase::Familiarize,
    Phase::Play,
    Phase::Train,
    Phase::MotionTest,
    Phase::Done,
];

fn legal_path(n: usize) -> Vec<(Phase, Option<usize>)> {
    let mut s = SessionState::new(n);
    let mut path = Vec::new();
    while let Some(step) = s.next() {
        s.advance(step.0, step.1).unwrap();
        path.push(step);
    }
    path
}

#[test]
fn legal_path_shape() {
    let path = legal_path(8);
    let labels: Vec<String> = path
        .iter()
        .map(|(p, r)| r.map_or(p.to_string(), |k| format!("{p}[{k}]")))
        .collect();
    assert_eq!(labels[..4], ["familiarize", "play[0]", "train[0]", "play[1]"]);
    assert_eq!(labels[labels.len() - 5..], ["play[8]", "play[9]", "motion_test", "motion_test", "done"]);
    assert_eq!(path.len(), 1 + 2 * 8 + 1 + 1 + 2 + 1);
}

proptest! {
    // Whatever a client tries, the only accepted step is the one `next` names,
    // and a rejected attempt leaves the state untouched.
    #[test]
    fn only_the_next_step_is_accepted(
        n in 1usize..6,
        attempts in prop::collection::vec((0usize..6, prop::option::of(0usize..9)), 0..200),
    ) {
        let mut s = SessionState::new(n);
        for (p, r) in attempts {
            let (phase, rep) = (PHASES[p], r);
            let expected = s.next();
            let before = s.clone();
            match s.advance(phase, rep) {
                Ok(()) => {
                    let skip_familiarize = before.phase == Phase::Pretrain && phase == Phase::Play && rep == Some(0);
                    prop_assert!(expected == Some((phase, rep)) || skip_familiarize);
                    prop_assert_eq!(s.history.len(), before.history.len() + 1);
                }
                Err(_) => prop_assert_eq!(&s, &before),
            }
            prop_assert_eq!(SessionState::replay(n, &s.history).unwrap(), s.clone());
        }
    }

    #[test]
    fn plays_use_current_or_initial_policy(n in 1usize..12) {
        let s = SessionState::new(n);
        for k in 0..=n {
            prop_assert_eq!(s.policy_for(k), k);
        }
        prop_assert_eq!(s.policy_for(n + 1), 0);
        let plays: Vec<usize> = legal_path(n).into_iter().filter(|(p, _)| *p == Phase::Play).filter_map(|(_, r)| r).collect();
        prop_assert_eq!(plays, (0..=n + 1).collect::<Vec<_>>());
    }
}
