mod common;

#[test]
fn greedy_selection_matches_enumeration() {
    let (mismatches, compose_gap) = common::recommender_oracle();
    assert_eq!(mismatches, 0);
    assert!(compose_gap < 1e-12, "{compose_gap}");
}
