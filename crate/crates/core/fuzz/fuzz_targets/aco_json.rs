#![no_main]
use cognet::aco::{shortest_path_oracle, AcoInstance};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(inst) = AcoInstance::from_json_str(text) else { return };
    let _ = shortest_path_oracle(inst.graph(), inst.lengths(), inst.colony(), inst.food());
    let _ = inst.ant_walk(0);
});
