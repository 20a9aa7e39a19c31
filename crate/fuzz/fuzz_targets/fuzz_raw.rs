#![no_main]

use libfuzzer_sys::fuzz_target;
use specsched::io::parse_raw;

// Input layout: sidecar JSON, a NUL byte, then the payload.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(side) = std::str::from_utf8(&data[..split]) else { return };
    let payload = data.get(split + 1..).unwrap_or(&[]);
    if let Ok((s, values)) = parse_raw(payload, side) {
        assert_eq!(values.len(), s.dim * s.count);
    }
});
