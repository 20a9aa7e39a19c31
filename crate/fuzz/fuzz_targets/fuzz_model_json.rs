#![no_main]

use libfuzzer_sys::fuzz_target;
use specsched::SpectralModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = SpectralModel::from_json(text) {
        assert_eq!(SpectralModel::from_json(&m.to_json()).unwrap(), m);
    }
});
