mod common;

use common::checks::gradient_suite;
use proptest::prelude::*;

#[test]
fn analytic_gradients_match_finite_differences() {
    for check in gradient_suite(10, 7) {
        assert!(check.passed(), "{check}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn gradients_hold_for_arbitrary_seeds(seed in any::<u64>()) {
        for check in gradient_suite(2, seed) {
            prop_assert!(check.passed(), "{}", check);
        }
    }
}
