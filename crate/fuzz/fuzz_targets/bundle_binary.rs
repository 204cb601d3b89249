#![no_main]
use libfuzzer_sys::fuzz_target;
use xmodal_core::bundle::TensorBundle;

fuzz_target!(|data: &[u8]| {
    // The encoding is canonical, so a successful decode re-encodes to the input.
    if let Ok(b) = TensorBundle::from_bytes(data) {
        assert_eq!(b.to_bytes(), data);
    }
});
