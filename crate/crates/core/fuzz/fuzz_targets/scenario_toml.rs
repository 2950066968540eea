#![no_main]
use cognet::scenario::Scenario;
use libfuzzer_sys::fuzz_target;

// Paths inside the scenario resolve against a directory that does not exist,
// so only inline sections reach the builders.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(s) = Scenario::from_toml_str(text, "/nonexistent") else { return };
    let _ = s.network();
    let _ = s.market();
    let _ = s.aco_instance();
});
