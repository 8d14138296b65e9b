mod common;

use common::{dice_oracle_mismatches, naive_dice};

#[test]
fn dice_matches_brute_force_counter() {
    assert_eq!(dice_oracle_mismatches(1000, 11), 0);
}

#[test]
fn oracle_sanity() {
    assert_eq!(naive_dice(&[1, 1, 0], &[1, 0, 0], 3), vec![Some(2.0 / 3.0), Some(2.0 / 3.0), None]);
}
