mod support;

use linstab_core::checkers::{check_invariants_plus, check_invariants_star};
use linstab_core::departure::nidec;
use linstab_core::graph::{reach_left, reach_left_staying, reach_right, reach_right_staying};
use linstab_core::Protocol;
use std::collections::BTreeSet;
use support::{nidec_oracle, random_states, reach_all, reach_staying, Oracle, Side};

#[test]
fn invariant_evaluation_matches_brute_force() {
    let states = random_states(1000, 6, 7);
    let mut admissible = 0;
    for (i, (s, protocol)) in states.iter().enumerate() {
        let report = match protocol {
            Protocol::Plus => check_invariants_plus(s),
            Protocol::Star => check_invariants_star(s),
        };
        let got: BTreeSet<u8> = report.failing().into_iter().collect();
        let want = Oracle { s, protocol: *protocol }.failing();
        assert_eq!(got, want, "state #{i} ({protocol:?}) disagrees: {s:?}");
        admissible += usize::from(want.is_empty());
    }
    // Both verdicts must be well represented for the agreement to mean much.
    assert!(admissible > 100 && admissible < 900, "{admissible} of 1000 admissible");
}

#[test]
fn reachability_sets_match_dfs() {
    for (s, _) in random_states(300, 8, 11) {
        for &v in s.nodes.keys() {
            assert_eq!(reach_right(&s, v), reach_all(&s, Side::Right, v));
            assert_eq!(reach_left(&s, v), reach_all(&s, Side::Left, v));
            assert_eq!(reach_right_staying(&s, v), reach_staying(&s, Side::Right, v));
            assert_eq!(reach_left_staying(&s, v), reach_staying(&s, Side::Left, v));
        }
    }
}

#[test]
fn nidec_matches_definition() {
    let mut hits = 0;
    for (s, _) in random_states(300, 6, 13) {
        for &v in s.nodes.keys() {
            let want = nidec_oracle(&s, v);
            assert_eq!(nidec(&s, v), want);
            hits += usize::from(want);
        }
    }
    assert!(hits > 0);
}
