#![no_main]
use libfuzzer_sys::fuzz_target;
use xmodal_core::scanpaths::ScanPlan;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(plan) = ScanPlan::from_json(text) {
        plan.verify().expect("parsed plans are verified");
        assert_eq!(ScanPlan::from_json(&plan.to_json()).expect("round trip"), plan);
    }
});
