#![no_main]

use isac_ota::config::ScenarioConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ScenarioConfig::from_json_str(text) {
        // Accepted configs must survive a round trip unchanged.
        let again = ScenarioConfig::from_json_str(&cfg.to_json_pretty()).expect("normalized config re-parses");
        assert_eq!(again, cfg);
    }
});
