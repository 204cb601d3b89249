#![no_main]
use libfuzzer_sys::fuzz_target;
use xmodal_core::harness::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_json_str(text) {
        assert_eq!(RunConfig::from_json_str(&cfg.to_json_pretty()).expect("round trip"), cfg);
    }
});
