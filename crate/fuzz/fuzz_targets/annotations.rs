#![no_main]
use libfuzzer_sys::fuzz_target;
use xmodal_core::offsets::{offset_report, parse_annotations, OffsetOptions};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Anything that parses must also survive matching and binning.
    if let Ok(anns) = parse_annotations(text) {
        let report = offset_report(&anns, &OffsetOptions::default()).expect("default options are valid");
        assert!(report.matched <= anns.len());
        let h = &report.histogram;
        assert!((0.0..=1.0).contains(&h.misaligned_fraction));
    }
});
