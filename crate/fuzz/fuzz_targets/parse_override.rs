#![no_main]

use isac_ota::config::{parse_override, ScenarioConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((path, _)) = parse_override(text) {
        assert!(!path.is_empty() && path.iter().all(|p| !p.is_empty()));
    }
    if let Ok(cfg) = ScenarioConfig::fast().with_overrides(&[text]) {
        cfg.validate().expect("overridden config is valid");
    }
});
