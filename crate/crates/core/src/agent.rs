//! Agents and the networks they form.
//!
//! An agent's state is a parameter vector drawn from a box; its
//! [`AgentModel`] turns those parameters into a function from the signals it
//! reads to the signals it writes. In a one-way network an agent reads
//! `T(v)` and writes `F(v)`. In a lifted two-way network arcs carry
//! forward/backward pairs and an agent writes the forward half of `F(v)` and
//! the backward half of `T(v)`; [`Port`] names which half.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ArcId, DirectedGraph, VertexId};
use crate::signal::{Signal, SignalSpace, SignalVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Whole,
    Forward,
    Backward,
}

/// One readable or writable slot: an arc, or one half of a paired arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Port {
    pub arc: ArcId,
    pub part: Part,
}

impl Port {
    pub fn whole(arc: ArcId) -> Self {
        Port { arc, part: Part::Whole }
    }
}

pub(crate) fn part_of(signal: &Signal, part: Part) -> &Signal {
    match (part, signal) {
        (Part::Forward, Signal::Pair(a, _)) => a,
        (Part::Backward, Signal::Pair(_, b)) => b,
        _ => signal,
    }
}

fn part_of_mut(signal: &mut Signal, part: Part) -> &mut Signal {
    match (part, signal) {
        (Part::Forward, Signal::Pair(a, _)) => a,
        (Part::Backward, Signal::Pair(_, b)) => b,
        (_, s) => s,
    }
}

/// A family of agent functions indexed by a parameter vector.
pub trait AgentModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Output signals, one per write port, for the given read-port signals.
    fn evaluate(&self, params: &[f64], inputs: &[Signal]) -> std::result::Result<Vec<Signal>, String>;

    /// Local utility `q_v(inputs, outputs)` the agent greedily maximizes.
    fn utility(&self, _params: &[f64], _inputs: &[Signal], _outputs: &[Signal]) -> f64 {
        0.0
    }

    /// Parameter box; one `(lo, hi)` per parameter.
    fn bounds(&self) -> Vec<(f64, f64)>;

    /// Declared contraction factor, when known.
    fn contraction(&self, _params: &[f64]) -> Option<f64> {
        None
    }

    /// Closed-form state metric `d_v`, when the model knows one.
    fn state_distance(&self, _f: &[f64], _g: &[f64]) -> Option<f64> {
        None
    }

    /// Probe inputs used to estimate `d_v` as a supremum over inputs.
    fn probes(&self) -> Vec<Vec<Signal>> {
        Vec::new()
    }

    /// Model-specific slow dynamics. `None` selects the sampled greedy ascent.
    fn pattern_move(&self, _params: &[f64], _inputs: &[Signal], _outputs: &[Signal], _budget: f64) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub vertex: VertexId,
    pub reads: Vec<Port>,
    pub writes: Vec<Port>,
    pub model: Arc<dyn AgentModel>,
    pub params: Vec<f64>,
    pub frozen: bool,
}

impl Agent {
    /// One-way agent reading `T(v)` and writing `F(v)`; environment vertices are frozen.
    pub fn oneway(graph: &DirectedGraph, vertex: VertexId, model: Arc<dyn AgentModel>, params: Vec<f64>) -> Self {
        Agent {
            vertex,
            reads: graph.incoming(vertex).iter().map(|&e| Port::whole(e)).collect(),
            writes: graph.outgoing(vertex).iter().map(|&e| Port::whole(e)).collect(),
            model,
            params,
            frozen: graph.is_environment(vertex),
        }
    }

    pub fn frozen(mut self, frozen: bool) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn read_arcs(&self) -> Vec<ArcId> {
        self.reads.iter().map(|p| p.arc).collect()
    }

    pub fn write_arcs(&self) -> Vec<ArcId> {
        self.writes.iter().map(|p| p.arc).collect()
    }
}

/// A graph, its signal space, and one agent per vertex.
#[derive(Debug, Clone)]
pub struct Network {
    graph: DirectedGraph,
    space: SignalSpace,
    agents: Vec<Agent>,
}

impl Network {
    /// Validates that every `(arc, half)` slot is written by exactly one agent.
    pub fn new(graph: DirectedGraph, space: SignalSpace, mut agents: Vec<Agent>) -> Result<Self> {
        agents.sort_by_key(|a| a.vertex);
        if agents.len() != graph.vertex_count()
            || agents.iter().enumerate().any(|(i, a)| a.vertex.0 != i)
        {
            return Err(Error::InvalidGraph("need exactly one agent per vertex".into()));
        }
        let halves: &[Part] = match space {
            SignalSpace::Product { .. } => &[Part::Forward, Part::Backward],
            _ => &[Part::Whole],
        };
        let mut writers = vec![0usize; graph.arc_count() * halves.len()];
        for agent in &agents {
            if agent.params.len() != agent.model.bounds().len() {
                return Err(Error::domain(format!(
                    "agent `{}`: {} params but {} bounds",
                    graph.name(agent.vertex),
                    agent.params.len(),
                    agent.model.bounds().len()
                )));
            }
            for port in &agent.writes {
                let h = halves
                    .iter()
                    .position(|p| *p == port.part)
                    .ok_or_else(|| Error::InvalidGraph(format!("port part {:?} invalid for {} space", port.part, space.name())))?;
                if port.arc.0 >= graph.arc_count() {
                    return Err(Error::InvalidGraph(format!("port on unknown arc {}", port.arc)));
                }
                writers[port.arc.0 * halves.len() + h] += 1;
            }
        }
        if let Some(slot) = writers.iter().position(|&n| n != 1) {
            return Err(Error::InvalidGraph(format!(
                "arc {} half {:?} written by {} agents",
                slot / halves.len(),
                halves[slot % halves.len()],
                writers[slot]
            )));
        }
        Ok(Network { graph, space, agents })
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn space(&self) -> &SignalSpace {
        &self.space
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent(&self, v: VertexId) -> &Agent {
        &self.agents[v.0]
    }

    pub fn agent_mut(&mut self, v: VertexId) -> &mut Agent {
        &mut self.agents[v.0]
    }

    pub fn vertex_count(&self) -> usize {
        self.agents.len()
    }

    pub fn port_space(&self, port: &Port) -> &SignalSpace {
        self.space.part(port.part)
    }

    pub fn params(&self) -> Vec<Vec<f64>> {
        self.agents.iter().map(|a| a.params.clone()).collect()
    }

    pub fn set_params(&mut self, params: Vec<Vec<f64>>) -> Result<()> {
        if params.len() != self.agents.len() {
            return Err(Error::domain("parameter list does not match vertex set"));
        }
        for (agent, p) in self.agents.iter_mut().zip(params) {
            agent.params = p;
        }
        Ok(())
    }

    pub fn with_params(&self, params: Vec<Vec<f64>>) -> Result<Self> {
        let mut out = self.clone();
        out.set_params(params)?;
        Ok(out)
    }

    /// Every arc carrying the space's zero signal.
    pub fn zero_signals(&self) -> SignalVector {
        SignalVector::filled(self.graph.arc_count(), self.space.zero())
    }

    pub fn read_ports(&self, ports: &[Port], x: &SignalVector) -> Result<Vec<Signal>> {
        ports
            .iter()
            .map(|p| {
                x.get(p.arc)
                    .map(|s| part_of(s, p.part).clone())
                    .ok_or_else(|| Error::domain(format!("arc {} missing from signal vector", p.arc)))
            })
            .collect()
    }

    pub fn inputs(&self, v: VertexId, x: &SignalVector) -> Result<Vec<Signal>> {
        self.read_ports(&self.agents[v.0].reads, x)
    }

    /// Current values on the agent's write ports.
    pub fn outputs(&self, v: VertexId, x: &SignalVector) -> Result<Vec<Signal>> {
        self.read_ports(&self.agents[v.0].writes, x)
    }

    /// `f_v(x_in)` with the agent's current parameters.
    pub fn evaluate(&self, v: VertexId, x: &SignalVector) -> Result<Vec<Signal>> {
        let agent = &self.agents[v.0];
        self.evaluate_with(v, &agent.params, &self.inputs(v, x)?)
    }

    pub fn evaluate_with(&self, v: VertexId, params: &[f64], inputs: &[Signal]) -> Result<Vec<Signal>> {
        let agent = &self.agents[v.0];
        let out = agent.model.evaluate(params, inputs).map_err(|message| Error::Agent {
            vertex: self.graph.name(v).to_string(),
            message,
        })?;
        if out.len() != agent.writes.len() {
            return Err(Error::Agent {
                vertex: self.graph.name(v).to_string(),
                message: format!("returned {} outputs for {} write ports", out.len(), agent.writes.len()),
            });
        }
        Ok(out)
    }

    /// Writes one agent's outputs into `x`.
    pub fn write_outputs(&self, v: VertexId, x: &mut SignalVector, outputs: Vec<Signal>) -> Result<()> {
        for (port, value) in self.agents[v.0].writes.iter().zip(outputs) {
            let slot = x
                .get_mut(port.arc)
                .ok_or_else(|| Error::domain(format!("arc {} missing from signal vector", port.arc)))?;
            *part_of_mut(slot, port.part) = value;
        }
        Ok(())
    }

    /// `q_v` evaluated on the signals currently in `x`.
    pub fn utility_at(&self, v: VertexId, x: &SignalVector) -> Result<f64> {
        let agent = &self.agents[v.0];
        Ok(agent.model.utility(&agent.params, &self.inputs(v, x)?, &self.outputs(v, x)?))
    }

    /// Information-flow edges (writer → reader) carried by the given arcs.
    pub fn flow_edges(&self, arcs: &[ArcId]) -> Vec<(VertexId, VertexId)> {
        let mut edges = Vec::new();
        for writer in &self.agents {
            for port in writer.writes.iter().filter(|p| arcs.contains(&p.arc)) {
                for reader in &self.agents {
                    if reader.reads.contains(port) {
                        edges.push((writer.vertex, reader.vertex));
                    }
                }
            }
        }
        edges.sort();
        edges.dedup();
        edges
    }

    /// Distance between two output lists of agent `v`, summed over its write ports.
    pub fn output_distance(&self, v: VertexId, a: &[Signal], b: &[Signal]) -> f64 {
        self.agents[v.0]
            .writes
            .iter()
            .zip(a.iter().zip(b))
            .map(|(p, (x, y))| self.port_space(p).distance(x, y))
            .sum()
    }

    pub fn input_distance(&self, v: VertexId, a: &[Signal], b: &[Signal]) -> f64 {
        self.agents[v.0]
            .reads
            .iter()
            .zip(a.iter().zip(b))
            .map(|(p, (x, y))| self.port_space(p).distance(x, y))
            .sum()
    }
}

/// How an [`Affine`] agent scores its local signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Utility {
    /// Constant zero.
    None,
    /// `sign * (sum of inputs) * (sum of outputs)`.
    Bilinear { sign: f64 },
    /// `-sum (output - target)^2`.
    Target { target: f64 },
    /// `sign * sum of outputs`.
    Output { sign: f64 },
}

impl Utility {
    pub fn score(&self, inputs: &[Signal], outputs: &[Signal]) -> f64 {
        let total = |s: &[Signal]| s.iter().flat_map(|x| x.reals().iter()).sum::<f64>();
        match *self {
            Utility::None => 0.0,
            Utility::Bilinear { sign } => sign * total(inputs) * total(outputs),
            Utility::Target { target } => -outputs
                .iter()
                .flat_map(|x| x.reals().iter())
                .map(|o| (o - target).powi(2))
                .sum::<f64>(),
            Utility::Output { sign } => sign * total(outputs),
        }
    }
}

/// Real-valued agent `out = gain * sum_i w_i x_i + offset`, the same value on every output.
///
/// The single parameter is `offset`. Inputs and outputs are real vectors of
/// width `width`; the map is applied componentwise.
#[derive(Debug, Clone)]
pub struct Affine {
    pub gain: f64,
    pub weights: Vec<f64>,
    pub outputs: usize,
    pub width: usize,
    pub bounds: (f64, f64),
    pub utility: Utility,
}

impl Affine {
    /// Unit weights on each of `inputs` arcs, unbounded offset, no utility.
    pub fn new(gain: f64, inputs: usize, outputs: usize) -> Self {
        Affine {
            gain,
            weights: vec![1.0; inputs],
            outputs,
            width: 1,
            bounds: (f64::NEG_INFINITY, f64::INFINITY),
            utility: Utility::None,
        }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = (lo, hi);
        self
    }

    pub fn with_utility(mut self, utility: Utility) -> Self {
        self.utility = utility;
        self
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }
}

impl AgentModel for Affine {
    fn name(&self) -> &str {
        "affine"
    }

    fn evaluate(&self, params: &[f64], inputs: &[Signal]) -> std::result::Result<Vec<Signal>, String> {
        if inputs.len() != self.weights.len() {
            return Err(format!("expected {} inputs, got {}", self.weights.len(), inputs.len()));
        }
        let offset = params.first().copied().unwrap_or(0.0);
        let mut acc = vec![0.0; self.width];
        for (w, x) in self.weights.iter().zip(inputs) {
            let x = x.reals();
            if x.len() != self.width {
                return Err(format!("input width {} != {}", x.len(), self.width));
            }
            for (a, xi) in acc.iter_mut().zip(x) {
                *a += w * xi;
            }
        }
        let out = Signal::Real(acc.into_iter().map(|a| self.gain * a + offset).collect());
        Ok(vec![out; self.outputs])
    }

    fn utility(&self, _params: &[f64], inputs: &[Signal], outputs: &[Signal]) -> f64 {
        self.utility.score(inputs, outputs)
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![self.bounds]
    }

    fn contraction(&self, _params: &[f64]) -> Option<f64> {
        let wmax = self.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        Some(self.gain.abs() * wmax * self.outputs as f64)
    }

    fn state_distance(&self, f: &[f64], g: &[f64]) -> Option<f64> {
        Some((self.outputs * self.width) as f64 * (f[0] - g[0]).abs())
    }
}

/// Agent whose outputs ignore its inputs: every output carries `params` as a real vector.
#[derive(Debug, Clone)]
pub struct Constant {
    pub outputs: usize,
    pub width: usize,
    pub bounds: (f64, f64),
    pub utility: Utility,
}

impl Constant {
    pub fn new(outputs: usize, width: usize) -> Self {
        Constant {
            outputs,
            width,
            bounds: (f64::NEG_INFINITY, f64::INFINITY),
            utility: Utility::None,
        }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = (lo, hi);
        self
    }

    pub fn with_utility(mut self, utility: Utility) -> Self {
        self.utility = utility;
        self
    }
}

impl AgentModel for Constant {
    fn name(&self) -> &str {
        "constant"
    }

    fn evaluate(&self, params: &[f64], _inputs: &[Signal]) -> std::result::Result<Vec<Signal>, String> {
        Ok(vec![Signal::Real(params.to_vec()); self.outputs])
    }

    fn utility(&self, _params: &[f64], inputs: &[Signal], outputs: &[Signal]) -> f64 {
        self.utility.score(inputs, outputs)
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![self.bounds; self.width]
    }

    fn contraction(&self, _params: &[f64]) -> Option<f64> {
        Some(0.0)
    }

    fn state_distance(&self, f: &[f64], g: &[f64]) -> Option<f64> {
        Some(self.outputs as f64 * f.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }
}

/// Parameterless agent emitting fixed signals of any space.
#[derive(Debug, Clone)]
pub struct Fixed {
    pub outputs: Vec<Signal>,
}

impl AgentModel for Fixed {
    fn name(&self) -> &str {
        "fixed"
    }

    fn evaluate(&self, _params: &[f64], _inputs: &[Signal]) -> std::result::Result<Vec<Signal>, String> {
        Ok(self.outputs.clone())
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        Vec::new()
    }

    fn contraction(&self, _params: &[f64]) -> Option<f64> {
        Some(0.0)
    }

    fn state_distance(&self, _f: &[f64], _g: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// Shorthand for a one-way network of scalar [`Affine`] agents.
///
/// `specs[v] = (gain, offset)`; each agent gets unit weights on its inputs.
pub fn affine_network(graph: DirectedGraph, specs: &[(f64, f64)]) -> Result<Network> {
    if specs.len() != graph.vertex_count() {
        return Err(Error::domain("one (gain, offset) per vertex"));
    }
    let agents = graph
        .vertices()
        .map(|v| {
            let (gain, offset) = specs[v.0];
            let model = Affine::new(gain, graph.incoming(v).len(), graph.outgoing(v).len());
            Agent::oneway(&graph, v, Arc::new(model), vec![offset])
        })
        .collect();
    Network::new(graph, SignalSpace::scalar(), agents)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cycle() -> Network {
        let g = DirectedGraph::new(["u", "v"], &[("u", "v"), ("v", "u")]).unwrap();
        affine_network(g, &[(0.5, 1.0), (0.5, 0.0)]).unwrap()
    }

    #[test]
    fn outputs_are_indexed_by_write_ports() {
        let net = two_cycle();
        let x = SignalVector::dense(vec![Signal::scalar(2.0), Signal::scalar(4.0)]);
        let out = net.evaluate(VertexId(0), &x).unwrap();
        assert_eq!(out, vec![Signal::scalar(3.0)]);
        assert_eq!(net.agent(VertexId(0)).write_arcs(), net.graph().outgoing(VertexId(0)));
    }

    #[test]
    fn rejects_missing_or_double_writers() {
        let g = DirectedGraph::new(["u", "v"], &[("u", "v")]).unwrap();
        let a = Agent::oneway(&g, VertexId(0), Arc::new(Affine::new(0.5, 0, 1)), vec![0.0]);
        assert!(Network::new(g.clone(), SignalSpace::scalar(), vec![a.clone()]).is_err());
        let b = Agent {
            writes: vec![Port::whole(ArcId(0))],
            ..Agent::oneway(&g, VertexId(1), Arc::new(Affine::new(0.5, 1, 1)), vec![0.0])
        };
        assert!(Network::new(g, SignalSpace::scalar(), vec![a, b]).is_err());
    }

    #[test]
    fn affine_contraction_factor() {
        let m = Affine::new(0.5, 2, 3);
        assert_eq!(m.contraction(&[0.0]), Some(1.5));
    }

    #[test]
    fn utilities() {
        let i = [Signal::scalar(2.0)];
        let o = [Signal::scalar(3.0)];
        assert_eq!(Utility::Bilinear { sign: 1.0 }.score(&i, &o), 6.0);
        assert_eq!(Utility::Bilinear { sign: -1.0 }.score(&i, &o), -6.0);
        assert_eq!(Utility::Target { target: 7.0 }.score(&i, &o), -16.0);
        assert_eq!(Utility::None.score(&i, &o), 0.0);
    }

    #[test]
    fn flow_edges_follow_arcs() {
        let net = two_cycle();
        assert_eq!(net.flow_edges(&[ArcId(0)]), vec![(VertexId(0), VertexId(1))]);
    }
}
