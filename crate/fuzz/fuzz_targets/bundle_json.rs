#![no_main]
use libfuzzer_sys::fuzz_target;
use xmodal_core::bundle::TensorBundle;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(b) = TensorBundle::from_json_str(text) {
        let again = TensorBundle::from_json_str(&b.to_json_string()).expect("re-encoded bundle parses");
        assert_eq!(again.to_bytes(), b.to_bytes());
        assert_eq!(TensorBundle::from_bytes(&b.to_bytes()).expect("binary form parses").to_bytes(), b.to_bytes());
    }
});
