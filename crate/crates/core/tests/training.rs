mod common;

use common::overfit;

#[test]
fn overfits_one_frozen_batch() {
    let r = overfit(8, 200);
    assert!((r.initial - r.log_c).abs() < 0.1, "initial {} vs ln C {}", r.initial, r.log_c);
    assert!(r.reached_at.is_some(), "best {} of initial {}", r.best, r.initial);
}
