#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = specsched::io::parse_wav(data) {
        assert!(samples.iter().all(|s| (-1.0..1.0).contains(s)));
    }
});
