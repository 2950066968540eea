#![no_main]
use cognet::mlp::Perceptron;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = Perceptron::from_json_str(text) {
        let back = Perceptron::from_json_str(&p.to_json_string()).expect("saved model reloads");
        assert_eq!(back.to_json_string(), p.to_json_string());
    }
});
