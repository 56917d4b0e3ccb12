#![no_main]

use libfuzzer_sys::fuzz_target;

// Input: u16 manifest length prefix, manifest JSON bytes, then the weight
// blob. Exercises the full bundle loader: offsets, shapes, activations,
// and tensor validation all come from attacker-controlled bytes.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let split = u16::from_le_bytes([data[0], data[1]]) as usize;
    let rest = &data[2..];
    if split > rest.len() {
        return;
    }
    let (manifest_bytes, blob) = rest.split_at(split);
    if let Ok(manifest) = sipp_core::io::parse_manifest(manifest_bytes) {
        let _ = sipp_core::io::model_from_parts(&manifest, blob);
    }
});
