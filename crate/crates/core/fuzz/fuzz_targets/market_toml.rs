#![no_main]
use cognet::market::MarketSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = MarketSpec::from_toml_str(text) {
        let _ = spec.build();
    }
});
