#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The tensor batch decoder takes untrusted files and must never panic
    // or over-allocate. Accepted inputs must round-trip losslessly.
    if let Ok(tensor) = sipp_core::io::parse_batch(data) {
        let bytes = sipp_core::io::batch_to_bytes(&tensor);
        let again = sipp_core::io::parse_batch(&bytes).expect("re-encoded batch must parse");
        assert_eq!(again.shape(), tensor.shape());
        assert_eq!(again.data(), tensor.data());
    }
});
