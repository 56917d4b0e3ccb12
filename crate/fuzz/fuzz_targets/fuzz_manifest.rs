#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Manifest JSON is untrusted; parsing must never panic.
    let _ = sipp_core::io::parse_manifest(data);
});
