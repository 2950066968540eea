#![no_main]
use cognet::export::{read_tidy_csv, write_tidy_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(series) = read_tidy_csv(text) else { return };
    let written = write_tidy_csv(&series).expect("parsed series serialize");
    let back = read_tidy_csv(&written).expect("written csv parses");
    assert_eq!(back.len(), series.len());
});
