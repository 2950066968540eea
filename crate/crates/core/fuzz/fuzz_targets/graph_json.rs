#![no_main]
use cognet::graph::DirectedGraph;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = DirectedGraph::from_json_str(text) {
        let again = g.to_spec().build().expect("a built graph's spec rebuilds");
        assert_eq!(again.arc_count(), g.arc_count());
    }
});
