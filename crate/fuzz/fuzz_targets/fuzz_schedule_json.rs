#![no_main]

use libfuzzer_sys::fuzz_target;
use specsched::{Schedule, VeSchedule};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = Schedule::from_json(text) {
        assert_eq!(Schedule::from_json(&s.to_json()).unwrap(), s);
        let _ = specsched::spectral::vp_to_ve(&s);
    }
    if let Ok(v) = VeSchedule::from_json(text) {
        let _ = specsched::spectral::ve_to_vp(&v);
    }
});
