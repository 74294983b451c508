mod common;

use common::checks::*;

#[test]
fn split_ratios_hold_on_a_large_tensor() {
    split_proportions(100_000, 0.02).unwrap();
}

#[test]
fn convergence_stops_on_the_first_small_change() {
    convergence_trigger(1e-5).unwrap();
}

#[test]
fn checkpoint_preserves_predictions() {
    let worst = checkpoint_round_trip().unwrap();
    assert_eq!(worst, 0.0);
}

#[test]
fn degenerate_swarm_is_plain_training() {
    degenerate_swarm_matches_train(150).unwrap();
}

#[test]
fn global_best_never_worsens() {
    let trace = gb_trace(60, 4).unwrap();
    assert_eq!(trace.len(), 60);
    non_increasing(&trace).unwrap();
}

#[test]
fn metric_identities_hold() {
    metric_identities(1000).unwrap();
}
