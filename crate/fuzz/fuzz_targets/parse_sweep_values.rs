#![no_main]

use isac_ota::config::parse_sweep_values;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(v) = parse_sweep_values(text) {
        assert!(!v.values.is_empty());
        assert!(v.values.windows(2).all(|w| w[0] < w[1]));
        assert!(v.values.iter().all(|x| x.is_finite()));
    }
});
