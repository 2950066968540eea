//! Feedback loops over closed walks: candidate enumeration, the supermodular
//! reinforcement inequality, coherence, robustness, and Lyapunov patterns.

use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Network;
use crate::error::{Error, Result};
use crate::graph::{ArcId, DirectedGraph, VertexId};
use crate::pattern::{run_coupled, CoupledConfig, CoupledRun, PatternConfig};
use crate::propagation::{solve_aggregate, PropagationConfig};
use crate::signal::{rho_on, SignalSpace, SignalVector};

/// A strongly connected arc subset and the vertices it touches.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClosedWalk {
    pub vertices: Vec<VertexId>,
    pub arcs: Vec<ArcId>,
}

/// True when the edge set is nonempty and strongly connected on its endpoints.
pub fn is_strongly_connected(edges: &[(VertexId, VertexId)]) -> bool {
    let vertices: BTreeSet<VertexId> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let Some(&start) = vertices.iter().next() else {
        return false;
    };
    let reach = |forward: bool| -> usize {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(a, b) in edges {
                let (from, to) = if forward { (a, b) } else { (b, a) };
                if from == u && seen.insert(to) {
                    queue.push_back(to);
                }
            }
        }
        seen.len()
    };
    reach(true) == vertices.len() && reach(false) == vertices.len()
}

impl ClosedWalk {
    /// Walk over graph arcs, validated on the arcs' own direction.
    pub fn in_graph(graph: &DirectedGraph, arcs: &[ArcId]) -> Result<Self> {
        let mut arcs = arcs.to_vec();
        arcs.sort();
        arcs.dedup();
        if let Some(e) = arcs.iter().find(|e| e.0 >= graph.arc_count()) {
            return Err(Error::domain(format!("arc {e} not in graph")));
        }
        let edges: Vec<_> = arcs.iter().map(|&e| graph.arc(e)).collect();
        Self::from_edges(arcs, &edges)
    }

    /// Walk over network arcs, validated on the information flow they carry.
    ///
    /// In a lifted two-way network one arc carries flow both ways, so a path
    /// and its mirror form a closed walk.
    pub fn in_network(net: &Network, arcs: &[ArcId]) -> Result<Self> {
        let mut arcs = arcs.to_vec();
        arcs.sort();
        arcs.dedup();
        if let Some(e) = arcs.iter().find(|e| e.0 >= net.graph().arc_count()) {
            return Err(Error::domain(format!("arc {e} not in network")));
        }
        let edges = net.flow_edges(&arcs);
        Self::from_edges(arcs, &edges)
    }

    fn from_edges(arcs: Vec<ArcId>, edges: &[(VertexId, VertexId)]) -> Result<Self> {
        if !is_strongly_connected(edges) {
            return Err(Error::domain(format!("arcs {arcs:?} do not form a closed walk")));
        }
        let vertices: BTreeSet<VertexId> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
        Ok(ClosedWalk { vertices: vertices.into_iter().collect(), arcs })
    }

    pub fn contains_vertex(&self, v: VertexId) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }
}

/// Simple directed cycles with at most `max_len` vertices, as edge-index lists.
fn simple_cycles(edges: &[(VertexId, VertexId)], max_len: usize) -> Vec<Vec<usize>> {
    let n = edges.iter().map(|&(a, b)| a.0.max(b.0) + 1).max().unwrap_or(0);
    let mut out_edges = vec![Vec::new(); n];
    for (i, &(a, _)) in edges.iter().enumerate() {
        out_edges[a.0].push(i);
    }
    let mut cycles = Vec::new();
    let mut on_path = vec![false; n];
    let mut path = Vec::new();

    // Cycles are listed from their smallest vertex, so each is found once.
    fn extend(
        s: usize,
        u: usize,
        depth: usize,
        max_len: usize,
        edges: &[(VertexId, VertexId)],
        out_edges: &[Vec<usize>],
        on_path: &mut [bool],
        path: &mut Vec<usize>,
        cycles: &mut Vec<Vec<usize>>,
    ) {
        for &i in &out_edges[u] {
            let w = edges[i].1 .0;
            if w == s {
                path.push(i);
                cycles.push(path.clone());
                path.pop();
            } else if w > s && !on_path[w] && depth < max_len {
                on_path[w] = true;
                path.push(i);
                extend(s, w, depth + 1, max_len, edges, out_edges, on_path, path, cycles);
                path.pop();
                on_path[w] = false;
            }
        }
    }

    for s in 0..n {
        on_path[s] = true;
        extend(s, s, 1, max_len, edges, &out_edges, &mut on_path, &mut path, &mut cycles);
        on_path[s] = false;
    }
    cycles
}

/// Strongly connected label sets built from cycles of `edges` and their
/// vertex-overlapping unions, each touching at most `max_size` vertices.
///
/// `labels[i]` is the arc that carries edge `i`; one arc may carry several edges.
fn closed_label_sets<F>(edges: &[(VertexId, VertexId)], labels: &[ArcId], max_size: usize, valid: F) -> Vec<Vec<ArcId>>
where
    F: Fn(&[ArcId]) -> Option<usize>,
{
    if max_size < 2 {
        return Vec::new();
    }
    type Entry = (BTreeSet<ArcId>, BTreeSet<VertexId>);
    let mut found: Vec<Entry> = Vec::new();
    let mut seen: HashSet<Vec<ArcId>> = HashSet::new();
    let mut push = |arcs: BTreeSet<ArcId>, found: &mut Vec<Entry>| {
        let key: Vec<ArcId> = arcs.iter().copied().collect();
        if seen.contains(&key) {
            return;
        }
        seen.insert(key.clone());
        if let Some(size) = valid(&key) {
            if size <= max_size {
                let verts = key
                    .iter()
                    .flat_map(|e| {
                        labels
                            .iter()
                            .zip(edges)
                            .filter(move |(l, _)| *l == e)
                            .flat_map(|(_, &(a, b))| [a, b])
                    })
                    .collect();
                found.push((arcs, verts));
            }
        }
    };
    for cycle in simple_cycles(edges, max_size) {
        let arcs: BTreeSet<ArcId> = cycle.iter().map(|&i| labels[i]).collect();
        push(arcs, &mut found);
    }
    let mut i = 0;
    while i < found.len() {
        for j in 0..i {
            let (a, va) = &found[i];
            let (b, vb) = &found[j];
            if va.is_disjoint(vb) || a.is_subset(b) || b.is_subset(a) || va.union(vb).count() > max_size {
                continue;
            }
            let union: BTreeSet<ArcId> = a.union(b).copied().collect();
            push(union, &mut found);
        }
        i += 1;
    }
    let mut out: Vec<Vec<ArcId>> = found.into_iter().map(|(a, _)| a.into_iter().collect()).collect();
    out.sort();
    out
}

/// All simple cycles with at most `max_size` vertices plus their strongly
/// connected overlapping unions, ordered lexicographically by sorted arc ids.
pub fn enumerate_candidate_walks(graph: &DirectedGraph, max_size: usize) -> Vec<ClosedWalk> {
    let edges: Vec<_> = graph.arc_ids().map(|e| graph.arc(e)).collect();
    let labels: Vec<ArcId> = graph.arc_ids().collect();
    let valid = |arcs: &[ArcId]| ClosedWalk::in_graph(graph, arcs).ok().map(|w| w.vertices.len());
    closed_label_sets(&edges, &labels, max_size, valid)
        .into_iter()
        .map(|arcs| ClosedWalk::in_graph(graph, &arcs).expect("validated"))
        .collect()
}

/// Candidate walks on the network's information-flow graph.
pub fn enumerate_network_walks(net: &Network, max_size: usize) -> Vec<ClosedWalk> {
    let arcs: Vec<ArcId> = net.graph().arc_ids().collect();
    let (edges, labels) = flow_edges_labelled(net, &arcs);
    let valid = |arcs: &[ArcId]| ClosedWalk::in_network(net, arcs).ok().map(|w| w.vertices.len());
    closed_label_sets(&edges, &labels, max_size, valid)
        .into_iter()
        .map(|arcs| ClosedWalk::in_network(net, &arcs).expect("validated"))
        .collect()
}

fn flow_edges_labelled(net: &Network, arcs: &[ArcId]) -> (Vec<(VertexId, VertexId)>, Vec<ArcId>) {
    let mut edges = Vec::new();
    let mut labels = Vec::new();
    for &e in arcs {
        for edge in net.flow_edges(&[e]) {
            edges.push(edge);
            labels.push(e);
        }
    }
    (edges, labels)
}

/// Proper closed sub-walks of `walk`.
pub fn sub_walks(net: &Network, walk: &ClosedWalk) -> Vec<ClosedWalk> {
    let (edges, labels) = flow_edges_labelled(net, &walk.arcs);
    let valid = |arcs: &[ArcId]| ClosedWalk::in_network(net, arcs).ok().map(|w| w.vertices.len());
    closed_label_sets(&edges, &labels, walk.vertices.len(), valid)
        .into_iter()
        .filter(|arcs| arcs.len() < walk.arcs.len())
        .map(|arcs| ClosedWalk::in_network(net, &arcs).expect("validated"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackConfig {
    /// Separation tolerance; sampled signals stay within this of the aggregate.
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig { epsilon: 0.1, samples: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentVerdict {
    pub vertex: VertexId,
    pub name: String,
    pub passed: bool,
    /// Minimum over samples of `LHS - RHS`.
    pub worst_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternVerdict {
    pub radius: f64,
    pub amplification: f64,
    pub window: usize,
    pub drift: f64,
    /// Largest `ρ_EC` to the aggregate seen after a perturbation, divided by `radius`.
    pub worst_ratio: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub walk: ClosedWalk,
    pub agents: Vec<AgentVerdict>,
    pub samples_used: usize,
    pub samples_skipped: usize,
    pub pairs: Vec<(SignalVector, SignalVector)>,
    pub is_feedback_loop: bool,
    pub is_coherent: Option<bool>,
    pub robustness: Option<f64>,
    pub pattern: Option<PatternVerdict>,
}

impl FeedbackReport {
    pub fn worst_slack(&self) -> f64 {
        self.agents.iter().map(|a| a.worst_slack).fold(f64::INFINITY, f64::min)
    }

    pub fn failing_agents(&self) -> Vec<&str> {
        self.agents.iter().filter(|a| !a.passed).map(|a| a.name.as_str()).collect()
    }

    pub fn is_pattern(&self) -> bool {
        self.is_feedback_loop && self.pattern.as_ref().is_some_and(|p| p.stable)
    }

    /// `is_pattern ⇒ is_feedback_loop ⇒ every agent passed`.
    pub fn is_consistent(&self) -> bool {
        (!self.is_feedback_loop || self.agents.iter().all(|a| a.passed)) && (!self.is_pattern() || self.is_feedback_loop)
    }
}

/// Splits `size` across arcs at random and perturbs each by its share.
pub fn perturb_arcs<R: Rng + ?Sized>(space: &SignalSpace, x: &SignalVector, arcs: &[ArcId], size: f64, rng: &mut R) -> SignalVector {
    let weights: Vec<f64> = arcs.iter().map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    let mut out = x.clone();
    for (&e, w) in arcs.iter().zip(&weights) {
        if let Some(slot) = out.get_mut(e) {
            *slot = space.perturb(slot, size * w / total, rng);
        }
    }
    out
}

/// One ordered pair `(x, x')` near `z`, strictly increasing on every walk arc.
fn sample_pair<R: Rng + ?Sized>(
    space: &SignalSpace,
    z: &SignalVector,
    walk: &[ArcId],
    epsilon: f64,
    rng: &mut R,
) -> Result<Option<(SignalVector, SignalVector)>> {
    // Noise and increase each take at most a third of ε, so both stay inside the ball.
    let all: Vec<ArcId> = z.arcs().to_vec();
    let x = perturb_arcs(space, z, &all, epsilon / 3.0 * rng.random::<f64>(), rng);
    let budget = epsilon / 3.0 * (0.5 + 0.5 * rng.random::<f64>());
    let mut xp = x.clone();
    for &e in walk {
        let cur = x.get(e).ok_or_else(|| Error::domain(format!("arc {e} missing from aggregate")))?;
        match space.increase(cur, budget / walk.len() as f64, rng)? {
            Some(up) if space.precedes(cur, &up) == Some(true) => xp.set(e, up)?,
            _ => return Ok(None),
        }
    }
    Ok(Some((x, xp)))
}

/// `LHS - RHS` of the reinforcement inequality for agent `v` on one pair.
pub fn reinforcement_slack(net: &Network, v: VertexId, walk: &[ArcId], x: &SignalVector, xp: &SignalVector) -> Result<(f64, f64)> {
    let agent = net.agent(v);
    let spliced = x.splice(&xp.subvector(walk)?);
    let t0 = net.inputs(v, x)?;
    let t1 = net.inputs(v, &spliced)?;
    let f0 = net.outputs(v, x)?;
    let f1 = net.outputs(v, &spliced)?;
    let q = |i: &[crate::signal::Signal], o: &[crate::signal::Signal]| agent.model.utility(&agent.params, i, o);
    let (a, b, c, d) = (q(&t1, &f1), q(&t1, &f0), q(&t0, &f1), q(&t0, &f0));
    let scale = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
    Ok(((a - b) - (c - d), scale))
}

/// Tests the reinforcement inequality for every agent on the walk.
pub fn check_feedback_loop(net: &Network, walk: &ClosedWalk, z: &SignalVector, config: &FeedbackConfig) -> Result<FeedbackReport> {
    check_agents(net, walk, &walk.vertices, z, config)
}

fn check_agents(
    net: &Network,
    walk: &ClosedWalk,
    members: &[VertexId],
    z: &SignalVector,
    config: &FeedbackConfig,
) -> Result<FeedbackReport> {
    let space = net.space();
    if !space.is_ordered() {
        return Err(Error::UnorderedSpace(space.name().into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agents: Vec<AgentVerdict> = members
        .iter()
        .map(|&v| AgentVerdict {
            vertex: v,
            name: net.graph().name(v).to_string(),
            passed: true,
            worst_slack: f64::INFINITY,
        })
        .collect();
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for _ in 0..config.samples {
        let Some((x, xp)) = sample_pair(space, z, &walk.arcs, config.epsilon, &mut rng)? else {
            skipped += 1;
            continue;
        };
        for verdict in agents.iter_mut() {
            let (slack, scale) = reinforcement_slack(net, verdict.vertex, &walk.arcs, &x, &xp)?;
            verdict.worst_slack = verdict.worst_slack.min(slack);
            // Allow rounding in the four utility evaluations.
            if slack < -1e-12 * (1.0 + scale) {
                verdict.passed = false;
            }
        }
        pairs.push((x, xp));
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientSamples(format!(
            "all {} sampled pairs lacked a strict increase on the walk",
            config.samples
        )));
    }
    let is_feedback_loop = agents.iter().all(|a| a.passed);
    Ok(FeedbackReport {
        walk: walk.clone(),
        agents,
        samples_used: pairs.len(),
        samples_skipped: skipped,
        pairs,
        is_feedback_loop,
        is_coherent: None,
        robustness: None,
        pattern: None,
    })
}

/// The reinforcement inequality for `u` and `v` on the 2-cycle between them.
pub fn check_supermodular_pair(net: &Network, u: VertexId, v: VertexId, z: &SignalVector, config: &FeedbackConfig) -> Result<FeedbackReport> {
    let g = net.graph();
    let (Some(uv), Some(vu)) = (g.find_arc(u, v), g.find_arc(v, u)) else {
        return Err(Error::domain(format!("no 2-cycle between `{}` and `{}`", g.name(u), g.name(v))));
    };
    let walk = ClosedWalk::in_network(net, &[uv, vu])?;
    check_agents(net, &walk, &[u, v], z, config)
}

/// Coherent iff no proper closed sub-walk is itself a feedback loop.
pub fn check_coherence(net: &Network, walk: &ClosedWalk, z: &SignalVector, config: &FeedbackConfig) -> Result<bool> {
    for sub in sub_walks(net, walk) {
        if check_feedback_loop(net, &sub, z, config)?.is_feedback_loop {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Fraction of background states `f_{V-V_C}` under which the walk stays a feedback loop.
///
/// Mobile agents off the walk are redrawn uniformly from their parameter
/// boxes and the aggregate is re-solved; a failed solve counts as a failure.
pub fn check_robustness(
    net: &Network,
    walk: &ClosedWalk,
    z: &SignalVector,
    config: &FeedbackConfig,
    prop: &PropagationConfig,
    background_samples: usize,
) -> Result<f64> {
    let outside: Vec<VertexId> = net
        .graph()
        .vertices()
        .filter(|&v| !walk.contains_vertex(v) && !net.agent(v).frozen)
        .collect();
    if outside.is_empty() || background_samples == 0 {
        return Ok(1.0);
    }
    for &v in &outside {
        if net.agent(v).model.bounds().iter().any(|(lo, hi)| !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::domain(format!("agent `{}` has an unbounded parameter box", net.graph().name(v))));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e_ed0f_b4c6);
    let mut passed = 0;
    for k in 0..background_samples {
        let mut params = net.params();
        for &v in &outside {
            params[v.0] = net
                .agent(v)
                .model
                .bounds()
                .iter()
                .map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) })
                .collect();
        }
        let trial = net.with_params(params)?;
        let solved = match solve_aggregate(&trial, z, prop) {
            Ok(r) if r.converged => r.fixed_point,
            _ => continue,
        };
        let cfg = FeedbackConfig { seed: config.seed.wrapping_add(k as u64 + 1), ..*config };
        match check_feedback_loop(&trial, walk, &solved, &cfg) {
            Ok(r) if r.is_feedback_loop => passed += 1,
            Ok(_) => {}
            Err(Error::InsufficientSamples(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(passed as f64 / background_samples as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovConfig {
    /// Stability radius `r`.
    pub radius: f64,
    /// Allowed amplification `c`.
    pub amplification: f64,
    /// Steps examined for drift and simulated after each perturbation.
    pub window: usize,
    pub perturbations: usize,
    /// Largest drift of `z_EC` over the last `window` steps still counted as at rest.
    pub drift_tolerance: f64,
    pub seed: u64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig {
            radius: 1e-2,
            amplification: 3.0,
            window: 200,
            perturbations: 8,
            drift_tolerance: 1e-6,
            seed: 0,
        }
    }
}

/// Bounded-amplification test of `z_EC` at the end of a coupled run.
///
/// Drift is the largest `ρ_EC` between the final aggregate and any aggregate
/// in the last `window` steps. Each perturbation moves the walk's signals by
/// at most `r` off the final aggregate and resumes the coupled dynamics for
/// `window` steps; `ρ_EC` to the final aggregate must stay within `c r`.
pub fn check_pattern(
    walk: &ClosedWalk,
    run: &CoupledRun,
    prop: &PropagationConfig,
    pattern: &PatternConfig,
    config: &LyapunovConfig,
) -> Result<PatternVerdict> {
    if !(config.radius > 0.0) {
        return Err(Error::domain("stability radius must be positive"));
    }
    let net = &run.network;
    if run.aggregates.len() < config.window + 1 {
        return Err(Error::domain(format!(
            "trace has {} steps, window needs {}",
            run.aggregates.len().saturating_sub(1),
            config.window
        )));
    }
    let space = net.space();
    let z_end = run.aggregates.last().expect("nonempty");
    let tail = &run.aggregates[run.aggregates.len() - 1 - config.window..];
    let mut drift: f64 = 0.0;
    for z in tail {
        drift = drift.max(rho_on(space, &walk.arcs, z, z_end)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut worst: f64 = 0.0;
    let coupled = CoupledConfig { steps: config.window, epsilon: f64::INFINITY, delta_max: None };
    for k in 0..config.perturbations {
        let x0 = perturb_arcs(space, z_end, &walk.arcs, config.radius, &mut rng);
        let cfg = PatternConfig { seed: pattern.seed.wrapping_add(k as u64 + 1), ..pattern.clone() };
        let resumed = run_coupled(net, &x0, prop, &cfg, &coupled)?;
        for x in &resumed.signals {
            worst = worst.max(rho_on(space, &walk.arcs, x, z_end)? / config.radius);
        }
    }
    Ok(PatternVerdict {
        radius: config.radius,
        amplification: config.amplification,
        window: config.window,
        drift,
        worst_ratio: worst,
        stable: drift <= config.drift_tolerance && worst <= config.amplification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Affine, Agent, AgentModel, Constant, Utility};
    use crate::signal::Signal;
    use std::sync::Arc;

    fn close(g: &DirectedGraph) -> Vec<Vec<ArcId>> {
        enumerate_candidate_walks(g, g.vertex_count()).into_iter().map(|w| w.arcs).collect()
    }

    /// Every arc subset that is strongly connected on its endpoints.
    fn brute_force(g: &DirectedGraph, max_size: usize) -> Vec<Vec<ArcId>> {
        let m = g.arc_count();
        let mut out = Vec::new();
        for mask in 1u32..(1 << m) {
            let arcs: Vec<ArcId> = (0..m).filter(|i| mask & (1 << i) != 0).map(ArcId).collect();
            if let Ok(w) = ClosedWalk::in_graph(g, &arcs) {
                if w.vertices.len() <= max_size {
                    out.push(arcs);
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn walk_counts() {
        let two = DirectedGraph::new(["u", "v"], &[("u", "v"), ("v", "u")]).unwrap();
        assert_eq!(close(&two).len(), 1);
        let tri = DirectedGraph::new(["a", "b", "c"], &[("a", "b"), ("b", "c"), ("c", "a")]).unwrap();
        assert_eq!(close(&tri).len(), 1);
        assert!(enumerate_candidate_walks(&two, 1).is_empty());
    }

    #[test]
    fn complete_digraph_on_three_vertices() {
        let names = ["a", "b", "c"];
        let mut arcs = Vec::new();
        for t in names {
            for h in names {
                if t != h {
                    arcs.push((t, h));
                }
            }
        }
        let g = DirectedGraph::new(names, &arcs).unwrap();
        let edges: Vec<_> = g.arc_ids().map(|e| g.arc(e)).collect();
        let cycles = simple_cycles(&edges, 3);
        assert_eq!(cycles.iter().filter(|c| c.len() == 2).count(), 3);
        assert_eq!(cycles.iter().filter(|c| c.len() == 3).count(), 2);
        assert_eq!(close(&g), brute_force(&g, 3));
        assert_eq!(enumerate_candidate_walks(&g, 2).len(), 3);
    }

    #[test]
    fn enumeration_matches_brute_force_on_small_graphs() {
        let g = DirectedGraph::new(
            ["a", "b", "c", "d"],
            &[("a", "b"), ("b", "a"), ("b", "c"), ("c", "d"), ("d", "b"), ("c", "b"), ("d", "a")],
        )
        .unwrap();
        for k in 2..=4 {
            let got: Vec<_> = enumerate_candidate_walks(&g, k).into_iter().map(|w| w.arcs).collect();
            assert_eq!(got, brute_force(&g, k), "max_size {k}");
        }
    }

    fn loop_net(signs: &[f64], bounds: (f64, f64)) -> Network {
        let n = signs.len();
        let names: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
        let arcs: Vec<(String, String)> = if n == 2 {
            vec![(names[0].clone(), names[1].clone()), (names[1].clone(), names[0].clone())]
        } else {
            (0..n).map(|i| (names[i].clone(), names[(i + 1) % n].clone())).collect()
        };
        let arc_refs: Vec<(&str, &str)> = arcs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let g = DirectedGraph::new(names.iter().map(String::as_str), &arc_refs).unwrap();
        let agents = g
            .vertices()
            .map(|v| {
                let m = Affine::new(0.5, 1, 1)
                    .with_bounds(bounds.0, bounds.1)
                    .with_utility(Utility::Bilinear { sign: signs[v.0] });
                Agent::oneway(&g, v, Arc::new(m), vec![0.1])
            })
            .collect();
        Network::new(g, SignalSpace::scalar(), agents).unwrap()
    }

    fn aggregate(net: &Network) -> SignalVector {
        solve_aggregate(net, &net.zero_signals(), &PropagationConfig::synchronous(1e-12)).unwrap().fixed_point
    }

    #[test]
    fn bilinear_pair_is_supermodular() {
        let cfg = FeedbackConfig { epsilon: 0.1, samples: 32, seed: 4 };
        let good = loop_net(&[1.0, 1.0], (0.0, 1.0));
        let r = check_supermodular_pair(&good, VertexId(0), VertexId(1), &aggregate(&good), &cfg).unwrap();
        assert!(r.is_feedback_loop && r.worst_slack() > 0.0);
        let bad = loop_net(&[-1.0, -1.0], (0.0, 1.0));
        let r2 = check_supermodular_pair(&bad, VertexId(0), VertexId(1), &aggregate(&bad), &cfg).unwrap();
        assert!(!r2.is_feedback_loop && r2.worst_slack() < 0.0);
        assert_eq!(r, check_supermodular_pair(&good, VertexId(0), VertexId(1), &aggregate(&good), &cfg).unwrap());
    }

    #[test]
    fn degenerate_pairs_are_skipped() {
        let g = DirectedGraph::new(["u", "v"], &[("u", "v"), ("v", "u")]).unwrap();
        let agents = g
            .vertices()
            .map(|v| Agent::oneway(&g, v, Arc::new(Affine::new(0.5, 1, 1)), vec![0.0]))
            .collect();
        let sets = Network::new(g, SignalSpace::Set { universe: 4 }, agents).unwrap();
        let z = SignalVector::filled(2, Signal::set([]));
        // ε/3 split over two arcs never reaches a whole element.
        let cfg = FeedbackConfig { epsilon: 1.0, samples: 8, seed: 0 };
        assert!(matches!(
            check_supermodular_pair(&sets, VertexId(0), VertexId(1), &z, &cfg),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn unordered_space_is_rejected() {
        let g = DirectedGraph::new(["u", "v"], &[("u", "v"), ("v", "u")]).unwrap();
        let fixed = |g: &DirectedGraph, v| {
            Agent::oneway(
                g,
                v,
                Arc::new(crate::agent::Fixed { outputs: vec![Signal::Distribution(vec![0.5, 0.5])] }),
                vec![],
            )
        };
        let agents = vec![fixed(&g, VertexId(0)), fixed(&g, VertexId(1))];
        let net = Network::new(g, SignalSpace::Distribution { outcomes: 2 }, agents).unwrap();
        let z = net.zero_signals();
        let walk = ClosedWalk::in_network(&net, &[ArcId(0), ArcId(1)]).unwrap();
        assert!(matches!(
            check_feedback_loop(&net, &walk, &z, &FeedbackConfig::default()),
            Err(Error::UnorderedSpace(_))
        ));
    }

    #[test]
    fn four_cycle_with_a_submodular_agent_fails_there() {
        let net = loop_net(&[1.0, 1.0, -1.0, 1.0], (0.0, 1.0));
        let walk = ClosedWalk::in_network(&net, &[ArcId(0), ArcId(1), ArcId(2), ArcId(3)]).unwrap();
        let r = check_feedback_loop(&net, &walk, &aggregate(&net), &FeedbackConfig::default()).unwrap();
        assert!(!r.is_feedback_loop);
        assert_eq!(r.failing_agents(), vec!["a2"]);
        assert!(r.is_consistent());
    }

    #[test]
    fn constant_utility_holds_with_equality() {
        let g = DirectedGraph::new(["u", "v"], &[("u", "v"), ("v", "u")]).unwrap();
        let agents = g
            .vertices()
            .map(|v| Agent::oneway(&g, v, Arc::new(Constant::new(1, 1)), vec![1.0]))
            .collect();
        let net = Network::new(g, SignalSpace::scalar(), agents).unwrap();
        let walk = ClosedWalk::in_network(&net, &[ArcId(0), ArcId(1)]).unwrap();
        let r = check_feedback_loop(&net, &walk, &aggregate(&net), &FeedbackConfig::default()).unwrap();
        assert!(r.is_feedback_loop);
        assert!(r.agents.iter().all(|a| a.worst_slack == 0.0));
    }

    #[test]
    fn coherence_examples() {
        let cfg = FeedbackConfig::default();
        let pair = loop_net(&[1.0, 1.0], (0.0, 1.0));
        let walk = ClosedWalk::in_network(&pair, &[ArcId(0), ArcId(1)]).unwrap();
        assert!(check_coherence(&pair, &walk, &aggregate(&pair), &cfg).unwrap());

        let tri = loop_net(&[1.0, 1.0, 1.0], (0.0, 1.0));
        let walk = ClosedWalk::in_network(&tri, &[ArcId(0), ArcId(1), ArcId(2)]).unwrap();
        assert!(check_coherence(&tri, &walk, &aggregate(&tri), &cfg).unwrap());

        // a <-> b <-> c: two 2-cycles sharing b.
        let g = DirectedGraph::new(["a", "b", "c"], &[("a", "b"), ("b", "a"), ("b", "c"), ("c", "b")]).unwrap();
        let agents = g
            .vertices()
            .map(|v| {
                let k = g.incoming(v).len();
                let m = Affine::new(0.2, k, g.outgoing(v).len()).with_utility(Utility::Bilinear { sign: 1.0 });
                Agent::oneway(&g, v, Arc::new(m), vec![0.1])
            })
            .collect();
        let net = Network::new(g, SignalSpace::scalar(), agents).unwrap();
        let all = ClosedWalk::in_network(&net, &[ArcId(0), ArcId(1), ArcId(2), ArcId(3)]).unwrap();
        let z = aggregate(&net);
        assert!(check_feedback_loop(&net, &all, &z, &cfg).unwrap().is_feedback_loop);
        assert_eq!(sub_walks(&net, &all).len(), 2);
        assert!(!check_coherence(&net, &all, &z, &cfg).unwrap());
    }

    #[test]
    fn union_walk_uses_the_union_arc_set() {
        let g = DirectedGraph::new(["a", "b", "c"], &[("a", "b"), ("b", "a"), ("b", "c"), ("c", "b")]).unwrap();
        let walks = enumerate_candidate_walks(&g, 3);
        let arcs: Vec<_> = walks.iter().map(|w| w.arcs.clone()).collect();
        assert!(arcs.contains(&vec![ArcId(0), ArcId(1), ArcId(2), ArcId(3)]));
    }

    /// `out = 0.5 in_0 + offset`; utility `in_1 * in_0 * out` gated by a side input.
    #[derive(Debug)]
    struct Gated;

    impl AgentModel for Gated {
        fn name(&self) -> &str {
            "gated"
        }
        fn evaluate(&self, p: &[f64], x: &[Signal]) -> std::result::Result<Vec<Signal>, String> {
            Ok(vec![Signal::scalar(0.5 * x[0].first_real() + p[0])])
        }
        fn utility(&self, _p: &[f64], x: &[Signal], o: &[Signal]) -> f64 {
            x[1].first_real() * x[0].first_real() * o[0].first_real()
        }
        fn bounds(&self) -> Vec<(f64, f64)> {
            vec![(0.0, 1.0)]
        }
    }

    fn robustness_net(gated: bool) -> Network {
        // u <-> v loop, w feeds v from outside.
        let g = DirectedGraph::new(["u", "v", "w"], &[("u", "v"), ("v", "u"), ("w", "v")]).unwrap();
        let u = Agent::oneway(
            &g,
            VertexId(0),
            Arc::new(Affine::new(0.5, 1, 1).with_bounds(0.0, 1.0).with_utility(Utility::Bilinear { sign: 1.0 })),
            vec![0.5],
        );
        let v_model: Arc<dyn AgentModel> = if gated {
            Arc::new(Gated)
        } else {
            Arc::new(Affine::new(0.5, 2, 1).with_bounds(0.0, 1.0).with_utility(Utility::Bilinear { sign: 1.0 }))
        };
        let v = Agent::oneway(&g, VertexId(1), v_model, vec![0.5]);
        let w = Agent::oneway(&g, VertexId(2), Arc::new(Constant::new(1, 1).with_bounds(-1.0, 1.0)), vec![0.5]);
        Network::new(g, SignalSpace::scalar(), vec![u, v, w]).unwrap()
    }

    #[test]
    fn robustness_examples() {
        let cfg = FeedbackConfig { epsilon: 0.01, samples: 16, seed: 2 };
        let prop = PropagationConfig::synchronous(1e-12);

        let pair = loop_net(&[1.0, 1.0], (0.0, 1.0));
        let walk = ClosedWalk::in_network(&pair, &[ArcId(0), ArcId(1)]).unwrap();
        assert_eq!(check_robustness(&pair, &walk, &aggregate(&pair), &cfg, &prop, 20).unwrap(), 1.0);

        let walk = ClosedWalk::in_network(&robustness_net(false), &[ArcId(0), ArcId(1)]).unwrap();
        let plain = robustness_net(false);
        assert!(check_feedback_loop(&plain, &walk, &aggregate(&plain), &cfg).unwrap().is_feedback_loop);
        assert_eq!(check_robustness(&plain, &walk, &aggregate(&plain), &cfg, &prop, 40).unwrap(), 1.0);

        let gated = robustness_net(true);
        assert!(check_feedback_loop(&gated, &walk, &aggregate(&gated), &cfg).unwrap().is_feedback_loop);
        let frac = check_robustness(&gated, &walk, &aggregate(&gated), &cfg, &prop, 40).unwrap();
        assert!(frac > 0.0 && frac < 1.0, "fraction {frac}");
    }

    #[test]
    fn reports_are_deterministic() {
        let net = loop_net(&[1.0, -1.0, 1.0], (0.0, 1.0));
        let walk = ClosedWalk::in_network(&net, &[ArcId(0), ArcId(1), ArcId(2)]).unwrap();
        let z = aggregate(&net);
        let cfg = FeedbackConfig { seed: 77, ..Default::default() };
        assert_eq!(check_feedback_loop(&net, &walk, &z, &cfg).unwrap(), check_feedback_loop(&net, &walk, &z, &cfg).unwrap());
    }

    #[test]
    fn static_network_at_fixed_point_is_a_pattern() {
        let net = loop_net(&[1.0, 1.0], (0.0, 1.0));
        let prop = PropagationConfig::synchronous(1e-12);
        let pattern = PatternConfig { lipschitz: 0.0, step: 1.0, candidates: 1, seed: 0 };
        let z = aggregate(&net);
        let run = run_coupled(&net, &z, &prop, &pattern, &CoupledConfig { steps: 20, epsilon: 1e-6, delta_max: None }).unwrap();
        let walk = ClosedWalk::in_network(&net, &[ArcId(0), ArcId(1)]).unwrap();
        let cfg = LyapunovConfig { window: 20, ..Default::default() };
        let v = check_pattern(&walk, &run, &prop, &pattern, &cfg).unwrap();
        assert!(v.stable, "{v:?}");
        assert!(v.drift <= 1e-9);
        let short = LyapunovConfig { window: 50, ..cfg };
        assert!(check_pattern(&walk, &run, &prop, &pattern, &short).is_err());
    }
}
