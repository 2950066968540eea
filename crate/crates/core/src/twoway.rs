//! Two-way networks: forward signals follow the arcs, backward signals run
//! along their mirror images, and each vertex maps both kinds of input to
//! both kinds of output.
//!
//! The lift stores one engine arc per mirrored pair, carrying the product
//! signal `(x, y)`. A lifted agent reads `x` on `T(v)` then `y` on `F(v)`,
//! and writes `x` on `F(v)` then `y` on `T(v)`, in arc order. Models written
//! for two-way networks are ordinary [`AgentModel`]s following that layout.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentModel, Network, Part, Port};
use crate::error::{Error, Result};
use crate::graph::{ArcId, DirectedGraph, EnvRole, GraphSpec, VertexId};
use crate::signal::{Signal, SignalSpace, SignalVector};

/// Read and write ports of `v` under the two-way layout.
pub fn two_way_ports(graph: &DirectedGraph, v: VertexId) -> (Vec<Port>, Vec<Port>) {
    let port = |arc, part| Port { arc, part };
    let reads = graph
        .incoming(v)
        .iter()
        .map(|&e| port(e, Part::Forward))
        .chain(graph.outgoing(v).iter().map(|&e| port(e, Part::Backward)))
        .collect();
    let writes = graph
        .outgoing(v)
        .iter()
        .map(|&e| port(e, Part::Forward))
        .chain(graph.incoming(v).iter().map(|&e| port(e, Part::Backward)))
        .collect();
    (reads, writes)
}

#[derive(Debug, Clone)]
pub struct TwoWayAgent {
    pub vertex: VertexId,
    pub model: Arc<dyn AgentModel>,
    pub params: Vec<f64>,
}

/// A forward graph, its mirror, and one two-way agent per vertex.
#[derive(Debug, Clone)]
pub struct TwoWayNetwork {
    forward: SignalSpace,
    backward: SignalSpace,
    lifted: Network,
}

impl TwoWayNetwork {
    /// Entry and exit vertices come from the graph's environment roles and are frozen.
    pub fn new(graph: DirectedGraph, forward: SignalSpace, backward: SignalSpace, agents: Vec<TwoWayAgent>) -> Result<Self> {
        if graph.vertices().any(|v| graph.is_environment(v) && graph.role(v).is_none()) {
            return Err(Error::InvalidGraph("two-way environment vertices must be entries or exits".into()));
        }
        let agents = agents
            .into_iter()
            .map(|a| {
                let (reads, writes) = two_way_ports(&graph, a.vertex);
                Agent {
                    vertex: a.vertex,
                    reads,
                    writes,
                    model: a.model,
                    params: a.params,
                    frozen: graph.is_environment(a.vertex),
                }
            })
            .collect();
        let space = SignalSpace::product(forward.clone(), backward.clone());
        let lifted = Network::new(graph, space, agents)?;
        Ok(TwoWayNetwork { forward, backward, lifted })
    }

    pub fn graph(&self) -> &DirectedGraph {
        self.lifted.graph()
    }

    pub fn forward_space(&self) -> &SignalSpace {
        &self.forward
    }

    pub fn backward_space(&self) -> &SignalSpace {
        &self.backward
    }

    pub fn entries(&self) -> Vec<VertexId> {
        self.graph().vertices_with_role(EnvRole::Entry)
    }

    pub fn exits(&self) -> Vec<VertexId> {
        self.graph().vertices_with_role(EnvRole::Exit)
    }

    /// The engine network on product signals.
    pub fn lifted(&self) -> &Network {
        &self.lifted
    }

    pub fn lifted_mut(&mut self) -> &mut Network {
        &mut self.lifted
    }

    /// Splits a lifted signal vector into its forward and backward halves.
    pub fn lower(&self, z: &SignalVector) -> Result<(SignalVector, SignalVector)> {
        let mut xs = Vec::with_capacity(z.len());
        let mut ys = Vec::with_capacity(z.len());
        for (e, s) in z.iter() {
            match s {
                Signal::Pair(x, y) => {
                    xs.push((e, (**x).clone()));
                    ys.push((e, (**y).clone()));
                }
                _ => return Err(Error::domain(format!("arc {e} does not carry a pair"))),
            }
        }
        Ok((SignalVector::from_pairs(xs)?, SignalVector::from_pairs(ys)?))
    }

    /// Inverse of [`TwoWayNetwork::lower`].
    pub fn raise(&self, x: &SignalVector, y: &SignalVector) -> Result<SignalVector> {
        if !x.same_index(y) {
            return Err(Error::domain("forward and backward vectors index different arcs"));
        }
        SignalVector::from_pairs(x.iter().zip(y.values()).map(|((e, a), b)| (e, Signal::pair(a.clone(), b.clone()))))
    }

    /// Largest distance between an agent's posted outputs and `f_v(x_T, y_F)`.
    pub fn two_way_residual(&self, z: &SignalVector) -> Result<f64> {
        let net = &self.lifted;
        let mut worst: f64 = 0.0;
        for v in net.graph().vertices() {
            let fresh = net.evaluate(v, z)?;
            let posted = net.outputs(v, z)?;
            worst = worst.max(net.output_distance(v, &fresh, &posted));
        }
        Ok(worst)
    }
}

/// Two-way graph file: a plain graph plus entry and exit lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoWaySpec {
    pub vertices: Vec<String>,
    #[serde(default)]
    pub arcs: Vec<[String; 2]>,
    #[serde(default)]
    pub entries: Vec<String>,
    #[serde(default)]
    pub exits: Vec<String>,
}

impl TwoWaySpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<DirectedGraph> {
        let mut environment = BTreeMap::new();
        for name in &self.entries {
            environment.insert(name.clone(), Some(EnvRole::Entry));
        }
        for name in &self.exits {
            if environment.insert(name.clone(), Some(EnvRole::Exit)).is_some() {
                return Err(Error::InvalidGraph(format!("`{name}` is both an entry and an exit")));
            }
        }
        GraphSpec { vertices: self.vertices.clone(), arcs: self.arcs.clone(), environment }.build()
    }
}

/// Linear two-way agent on scalar signals, parameterized by offsets `[bx, by]`.
///
/// Every forward output is `xx Σx + xy Σy + bx`; every backward output is
/// `yx Σx + yy Σy + by`, with sums over the agent's forward and backward inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoWayAffine {
    pub xx: f64,
    pub xy: f64,
    pub yx: f64,
    pub yy: f64,
    /// `|T(v)|`, the number of forward inputs.
    pub x_inputs: usize,
    /// `|F(v)|`, the number of forward outputs.
    pub x_outputs: usize,
}

impl TwoWayAffine {
    pub fn at(graph: &DirectedGraph, v: VertexId, xx: f64, xy: f64, yx: f64, yy: f64) -> Self {
        TwoWayAffine { xx, xy, yx, yy, x_inputs: graph.incoming(v).len(), x_outputs: graph.outgoing(v).len() }
    }
}

impl AgentModel for TwoWayAffine {
    fn name(&self) -> &str {
        "two-way-affine"
    }

    fn evaluate(&self, params: &[f64], inputs: &[Signal]) -> std::result::Result<Vec<Signal>, String> {
        if inputs.len() != self.x_inputs + self.x_outputs {
            return Err(format!("expected {} inputs, got {}", self.x_inputs + self.x_outputs, inputs.len()));
        }
        let (xs, ys) = inputs.split_at(self.x_inputs);
        let sx: f64 = xs.iter().map(Signal::first_real).sum();
        let sy: f64 = ys.iter().map(Signal::first_real).sum();
        let x = self.xx * sx + self.xy * sy + params[0];
        let y = self.yx * sx + self.yy * sy + params[1];
        Ok(std::iter::repeat_n(Signal::scalar(x), self.x_outputs)
            .chain(std::iter::repeat_n(Signal::scalar(y), self.x_inputs))
            .collect())
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY); 2]
    }

    fn contraction(&self, _params: &[f64]) -> Option<f64> {
        let (nf, nt) = (self.x_outputs as f64, self.x_inputs as f64);
        Some((nf * self.xx.abs() + nt * self.yx.abs()).max(nf * self.xy.abs() + nt * self.yy.abs()))
    }

    fn state_distance(&self, f: &[f64], g: &[f64]) -> Option<f64> {
        Some(self.x_outputs as f64 * (f[0] - g[0]).abs() + self.x_inputs as f64 * (f[1] - g[1]).abs())
    }
}

/// Cross gains along one mirrored pair `e = (u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossGain {
    pub arc: ArcId,
    /// Sensitivity of `v`'s backward outputs to the forward signal on `e`.
    pub backward_from_forward: f64,
    /// Sensitivity of `u`'s forward outputs to the backward signal on `e`.
    pub forward_from_backward: f64,
    pub product: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFeedbackReport {
    pub pairs: Vec<CrossGain>,
    pub passed: bool,
}

impl CrossFeedbackReport {
    pub fn failures(&self) -> Vec<ArcId> {
        self.pairs.iter().filter(|p| !p.passed).map(|p| p.arc).collect()
    }
}

fn fd_step(space: &SignalSpace) -> f64 {
    match space {
        SignalSpace::Set { .. } => 1.0,
        _ => 1e-6,
    }
}

/// Finite-difference gain of agent `v`'s `out_part` outputs with respect to
/// the `in_part` half of arc `e` among its inputs, at `x`.
fn port_gain(net: &Network, v: VertexId, e: ArcId, in_part: Part, out_part: Part, x: &SignalVector, rng: &mut ChaCha8Rng) -> Result<f64> {
    let agent = net.agent(v);
    let Some(slot) = agent.reads.iter().position(|p| p.arc == e && p.part == in_part) else {
        return Ok(0.0);
    };
    let space = net.space().part(in_part);
    let inputs = net.inputs(v, x)?;
    let mut bumped = inputs.clone();
    bumped[slot] = space.perturb(&inputs[slot], fd_step(space), rng);
    let moved = space.distance(&inputs[slot], &bumped[slot]);
    if moved == 0.0 {
        return Ok(0.0);
    }
    let a = net.evaluate_with(v, &agent.params, &inputs)?;
    let b = net.evaluate_with(v, &agent.params, &bumped)?;
    let change: f64 = agent
        .writes
        .iter()
        .zip(a.iter().zip(&b))
        .filter(|(p, _)| p.part == out_part)
        .map(|(p, (s, t))| net.port_space(p).distance(s, t))
        .sum();
    Ok(change / moved)
}

/// Checks that no mirrored pair couples forward and backward signals into
/// positive feedback: the product of cross gains must stay below one.
///
/// Gains are the largest finite-difference ratios over `samples` points near `z`.
pub fn check_no_cross_feedback(net: &TwoWayNetwork, z: &SignalVector, samples: usize, seed: u64) -> Result<CrossFeedbackReport> {
    let lifted = net.lifted();
    let space = lifted.space();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arcs: Vec<ArcId> = net.graph().arc_ids().collect();
    let mut points = vec![z.clone()];
    for _ in 1..samples.max(1) {
        points.push(crate::feedback::perturb_arcs(space, z, &arcs, 1e-2, &mut rng));
    }
    let mut pairs = Vec::with_capacity(arcs.len());
    for &e in &arcs {
        let (u, v) = net.graph().arc(e);
        let (mut yx, mut xy): (f64, f64) = (0.0, 0.0);
        for x in &points {
            yx = yx.max(port_gain(lifted, v, e, Part::Forward, Part::Backward, x, &mut rng)?);
            xy = xy.max(port_gain(lifted, u, e, Part::Backward, Part::Forward, x, &mut rng)?);
        }
        let product = yx * xy;
        pairs.push(CrossGain {
            arc: e,
            backward_from_forward: yx,
            forward_from_backward: xy,
            product,
            // Gains well below one can pick up rounding from the finite difference.
            passed: product < 1.0,
        });
    }
    let passed = pairs.iter().all(|p| p.passed);
    Ok(CrossFeedbackReport { pairs, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{run_coupled, CoupledConfig, PatternConfig};
    use crate::propagation::{solve_aggregate, step_synchronous, PropagationConfig};

    fn chain_graph() -> DirectedGraph {
        TwoWaySpec {
            vertices: vec!["in".into(), "v".into(), "out".into()],
            arcs: vec![["in".into(), "v".into()], ["v".into(), "out".into()]],
            entries: vec!["in".into()],
            exits: vec!["out".into()],
        }
        .build()
        .unwrap()
    }

    fn chain(mid: (f64, f64, f64, f64), exit_yx: f64) -> TwoWayNetwork {
        let g = chain_graph();
        let (i, v, o) = (VertexId(0), VertexId(1), VertexId(2));
        let agents = vec![
            TwoWayAgent { vertex: i, model: Arc::new(TwoWayAffine::at(&g, i, 0.0, 0.0, 0.0, 0.0)), params: vec![1.0, 0.0] },
            TwoWayAgent {
                vertex: v,
                model: Arc::new(TwoWayAffine::at(&g, v, mid.0, mid.1, mid.2, mid.3)),
                params: vec![0.0, 0.0],
            },
            TwoWayAgent { vertex: o, model: Arc::new(TwoWayAffine::at(&g, o, 0.0, 0.0, exit_yx, 0.0)), params: vec![0.0, 2.0] },
        ];
        TwoWayNetwork::new(g, SignalSpace::scalar(), SignalSpace::scalar(), agents).unwrap()
    }

    fn solve(net: &TwoWayNetwork) -> SignalVector {
        let lifted = net.lifted();
        solve_aggregate(lifted, &lifted.zero_signals(), &PropagationConfig::synchronous(1e-13)).unwrap().fixed_point
    }

    #[test]
    fn chain_matches_hand_solution() {
        // x1 = 0.5 x0 + 0.25 y1, y1 = 2 + 0.5 x1, y0 = 0.5 y1 + 0.1 x0, x0 = 1.
        let net = chain((0.5, 0.25, 0.1, 0.5), 0.5);
        assert_eq!(net.lifted().graph().arc_count(), 2);
        let (x, y) = net.lower(&solve(&net)).unwrap();
        let x1 = 8.0 / 7.0;
        let y1 = 18.0 / 7.0;
        assert!((x.get(ArcId(0)).unwrap().first_real() - 1.0).abs() < 1e-12);
        assert!((x.get(ArcId(1)).unwrap().first_real() - x1).abs() < 1e-12);
        assert!((y.get(ArcId(1)).unwrap().first_real() - y1).abs() < 1e-12);
        assert!((y.get(ArcId(0)).unwrap().first_real() - (0.5 * y1 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn identity_agents_pass_boundary_values_through() {
        let net = chain((1.0, 0.0, 0.0, 1.0), 0.0);
        let z = solve(&net);
        let (x, y) = net.lower(&z).unwrap();
        assert!(x.values().iter().all(|s| s.first_real() == 1.0));
        assert!(y.values().iter().all(|s| s.first_real() == 2.0));
        assert!(net.two_way_residual(&z).unwrap() == 0.0);
    }

    #[test]
    fn lower_then_raise_round_trips() {
        let net = chain((0.5, 0.25, 0.1, 0.5), 0.5);
        let z = solve(&net);
        let (x, y) = net.lower(&z).unwrap();
        assert_eq!(net.raise(&x, &y).unwrap(), z);
        assert!(net.lower(&SignalVector::filled(2, Signal::scalar(0.0))).is_err());
    }

    #[test]
    fn lifted_fixed_point_satisfies_two_way_condition() {
        let net = chain((0.3, -0.2, 0.4, 0.1), 0.25);
        let z = solve(&net);
        assert!(net.two_way_residual(&z).unwrap() < 1e-12);
        let again = step_synchronous(net.lifted(), &z).unwrap();
        assert!(crate::signal::rho_set(net.lifted().space(), &again, &z).unwrap() < 1e-12);
    }

    #[test]
    fn environment_is_frozen_and_invariant() {
        let net = chain((0.5, 0.25, 0.1, 0.5), 0.5);
        assert_eq!(net.entries(), vec![VertexId(0)]);
        assert_eq!(net.exits(), vec![VertexId(2)]);
        assert!(net.lifted().agent(VertexId(0)).frozen && net.lifted().agent(VertexId(2)).frozen);
        let z = solve(&net);
        let pattern = PatternConfig { lipschitz: 0.1, step: 1.0, candidates: 4, seed: 3 };
        let run = run_coupled(
            net.lifted(),
            &z,
            &PropagationConfig::synchronous(1e-12),
            &pattern,
            &CoupledConfig { steps: 10, epsilon: 1.0, delta_max: None },
        )
        .unwrap();
        for state in &run.states {
            assert_eq!(state[0], vec![1.0, 0.0]);
            assert_eq!(state[2], vec![0.0, 2.0]);
        }
        for x in &run.signals[1..] {
            let (fx, _) = net.lower(x).unwrap();
            assert_eq!(fx.get(ArcId(0)).unwrap().first_real(), 1.0);
        }
    }

    #[test]
    fn cross_feedback_examples() {
        // y-output = 2·x-input and x-output = 2·y-input on the pair (in, v).
        let g = DirectedGraph::new(["u", "v"], &[("u", "v")]).unwrap();
        let agents = vec![
            TwoWayAgent { vertex: VertexId(0), model: Arc::new(TwoWayAffine::at(&g, VertexId(0), 0.0, 2.0, 0.0, 0.0)), params: vec![0.0, 0.0] },
            TwoWayAgent { vertex: VertexId(1), model: Arc::new(TwoWayAffine::at(&g, VertexId(1), 0.0, 0.0, 2.0, 0.0)), params: vec![0.0, 0.0] },
        ];
        let net = TwoWayNetwork::new(g, SignalSpace::scalar(), SignalSpace::scalar(), agents).unwrap();
        let z = net.lifted().zero_signals();
        let r = check_no_cross_feedback(&net, &z, 4, 0).unwrap();
        assert!(!r.passed);
        assert_eq!(r.failures(), vec![ArcId(0)]);
        assert!((r.pairs[0].product - 4.0).abs() < 1e-6);

        let constant = chain((0.0, 0.0, 0.0, 0.0), 0.0);
        let r = check_no_cross_feedback(&constant, &solve(&constant), 4, 0).unwrap();
        assert!(r.passed && r.pairs.iter().all(|p| p.product == 0.0));

        let mixed = chain((0.5, 0.25, 0.1, 0.5), 0.5);
        let r = check_no_cross_feedback(&mixed, &solve(&mixed), 8, 1).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn spec_rejects_conflicting_roles() {
        let spec = TwoWaySpec {
            vertices: vec!["a".into(), "b".into()],
            arcs: vec![["a".into(), "b".into()]],
            entries: vec!["a".into()],
            exits: vec!["a".into()],
        };
        assert!(spec.build().is_err());
        let parsed = TwoWaySpec::from_json_str(r#"{"vertices":["a","b"],"arcs":[["a","b"]],"entries":["a"],"exits":["b"]}"#).unwrap();
        assert_eq!(parsed.build().unwrap().role(VertexId(1)), Some(EnvRole::Exit));
    }
}
