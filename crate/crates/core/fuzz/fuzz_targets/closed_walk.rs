#![no_main]
use cognet::feedback::{enumerate_candidate_walks, ClosedWalk};
use cognet::graph::{ArcId, DirectedGraph};
use libfuzzer_sys::fuzz_target;

// Byte 0: vertex count. Then pairs of bytes are arcs until a 0xff separator;
// the remaining bytes index arcs of the walk.
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    let n = (n % 8) as usize + 1;
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let split = rest.iter().position(|&b| b == 0xff).unwrap_or(rest.len());
    let (arc_bytes, walk_bytes) = rest.split_at(split);
    let arcs: Vec<(&str, &str)> = arc_bytes
        .chunks_exact(2)
        .map(|p| (names[p[0] as usize % n].as_str(), names[p[1] as usize % n].as_str()))
        .collect();
    let Ok(g) = DirectedGraph::new(names.iter().map(String::as_str), &arcs) else { return };
    let walk: Vec<ArcId> = walk_bytes.iter().skip(1).map(|&b| ArcId(b as usize)).collect();
    let _ = ClosedWalk::in_graph(&g, &walk);
    for w in enumerate_candidate_walks(&g, 4) {
        ClosedWalk::in_graph(&g, &w.arcs).expect("enumerated walks validate");
    }
});
