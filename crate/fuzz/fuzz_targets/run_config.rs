#![no_main]

use libfuzzer_sys::fuzz_target;
use permurank::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json_str(text) {
        let again = RunConfig::from_json_str(&cfg.to_json_pretty().expect("serializes")).expect("round trip");
        assert_eq!(again, cfg);
    }
});
