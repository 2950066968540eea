#![no_main]
use cognet::mlp::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&dims, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let (n_in, n_out) = ((dims & 0x0f) as usize, (dims >> 4) as usize);
    if let Ok(d) = Dataset::from_csv_str(text, n_in, n_out) {
        assert!(!d.is_empty());
    }
});
