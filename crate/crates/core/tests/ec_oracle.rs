mod support;

use proptest::prelude::*;
use support::ec_oracle::case;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn engine_agrees_with_replay(c in case()) {
        if let Err(e) = c.check() {
            prop_assert!(false, "{}", e);
        }
    }
}
