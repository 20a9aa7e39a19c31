#![no_main]

use libfuzzer_sys::fuzz_target;
use specsched::io::{parse_csv_rows, write_csv_rows};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_csv_rows(text) {
        // Whatever parses must survive a write/parse round trip unchanged.
        let again = parse_csv_rows(&write_csv_rows(None, rows.iter())).unwrap();
        assert_eq!(again, rows);
    }
});
