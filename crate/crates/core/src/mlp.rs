//! Multilayer perceptron trained by backpropagation, viewed as a two-way
//! network: firing activity flows forward, error gradients flow back, and
//! weights and biases are the agents' states.
//!
//! Signals are vectors over the data set, one component per data point.
//! Backward signals follow the error-gradient convention `y = x^d - x`, so
//! they are negated derivatives of the squared error; parameter gradients
//! below are true derivatives of `Err` and training descends them.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::AgentModel;
use crate::error::{Error, Result};
use crate::feedback::reinforcement_slack;
use crate::graph::{ArcId, DirectedGraph, EnvRole, VertexId};
use crate::propagation::{solve_aggregate, PropagationConfig};
use crate::signal::{Signal, SignalSpace, SignalVector};
use crate::twoway::{TwoWayAgent, TwoWayNetwork};

/// Logistic function with unit steepness, evaluated without overflow.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `S'(z) = S(z)(1 - S(z))`.
pub fn logistic_slope(z: f64) -> f64 {
    let s = logistic(z);
    s * (1.0 - s)
}

/// Heaviside unit on binary activity, with `H(0) = 1`.
pub fn threshold_unit(bias: f64, weights: &[f64], inputs: &[bool]) -> bool {
    let z: f64 = bias + weights.iter().zip(inputs).map(|(w, &x)| if x { *w } else { 0.0 }).sum::<f64>();
    z >= 0.0
}

/// Training set: `inputs[m]` and `targets[m]` for data point `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::domain(format!("{} input rows but {} target rows", inputs.len(), targets.len())));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn xor() -> Self {
        Dataset {
            inputs: vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            targets: vec![vec![0.0], vec![1.0], vec![1.0], vec![0.0]],
        }
    }

    /// Rows of `n_inputs` inputs followed by `n_targets` targets. A first row
    /// that does not parse as numbers is taken as a header.
    pub fn from_csv_str(text: &str, n_inputs: usize, n_targets: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
        let (mut inputs, mut targets) = (Vec::new(), Vec::new());
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let values: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            let values = match values {
                Ok(v) => v,
                Err(_) if row == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("row {}: {e}", row + 1))),
            };
            if values.len() != n_inputs + n_targets {
                return Err(Error::Parse(format!(
                    "row {} has {} columns, expected {}",
                    row + 1,
                    values.len(),
                    n_inputs + n_targets
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse(format!("row {} has a non-finite value", row + 1)));
            }
            inputs.push(values[..n_inputs].to_vec());
            targets.push(values[n_inputs..].to_vec());
        }
        if inputs.is_empty() {
            return Err(Error::Parse("training data has no rows".into()));
        }
        Dataset::new(inputs, targets)
    }
}

/// Layered perceptron. `weights[t][j][i]` is the weight from neuron `i` of
/// layer `t` to neuron `j` of layer `t + 1`; `biases[t][j]` belongs to neuron
/// `j` of layer `t + 1`. The input layer has no parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perceptron {
    pub layers: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

/// Saved form: weights row-major by arc id, biases by neuron in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptronFile {
    pub layers: Vec<usize>,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Activity per layer and neuron, one component per data point.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub activity: Vec<Vec<Vec<f64>>>,
    /// Pre-activations; empty for the input layer.
    pub pre: Vec<Vec<Vec<f64>>>,
}

impl ForwardPass {
    pub fn output(&self) -> &[Vec<f64>] {
        self.activity.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    /// `arcs[t][j][i]`: backward signal on the arc from neuron `i` of layer `t` to `j` of layer `t + 1`.
    pub arcs: Vec<Vec<Vec<Vec<f64>>>>,
    /// Backward signals from the exit vertex, one per output neuron.
    pub exit: Vec<Vec<f64>>,
    /// `sums[t][i]`: backward signals summed over the out-arcs of neuron `i` in layer `t`.
    pub sums: Vec<Vec<Vec<f64>>>,
}

/// Per-data-point parameter gradients, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub biases: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<Vec<Vec<Vec<f64>>>>,
}

impl Gradients {
    pub fn bias_total(&self, t: usize, j: usize) -> f64 {
        self.biases[t][j].iter().sum()
    }

    pub fn weight_total(&self, t: usize, j: usize, i: usize) -> f64 {
        self.weights[t][j][i].iter().sum()
    }
}

/// Backward-signal magnitudes per layer and their successive ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientDiagnostic {
    /// L1 norm of the backward signals arriving at each layer, input layer first.
    pub norms: Vec<f64>,
    /// `norms[t] / norms[t + 1]`: growth as the signal moves one layer back.
    pub ratios: Vec<f64>,
    pub mean_ratio: f64,
    pub exploding: bool,
    pub fading: bool,
}

impl Perceptron {
    pub fn new(layers: Vec<usize>, weights: Vec<Vec<Vec<f64>>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if layers.len() < 2 || layers.contains(&0) {
            return Err(Error::domain("a perceptron needs at least two nonempty layers"));
        }
        let shaped = weights.len() == layers.len() - 1
            && biases.len() == layers.len() - 1
            && weights
                .iter()
                .zip(&biases)
                .enumerate()
                .all(|(t, (w, b))| w.len() == layers[t + 1] && b.len() == layers[t + 1] && w.iter().all(|r| r.len() == layers[t]));
        if !shaped {
            return Err(Error::domain(format!("parameters do not match layers {layers:?}")));
        }
        if weights.iter().flatten().flatten().chain(biases.iter().flatten()).any(|p| !p.is_finite()) {
            return Err(Error::domain("non-finite parameter"));
        }
        Ok(Perceptron { layers, weights, biases })
    }

    /// Weights uniform in `[-0.5, 0.5]`, biases zero.
    pub fn random(layers: Vec<usize>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if layers.len() < 2 || layers.contains(&0) {
            return Err(Error::domain("a perceptron needs at least two nonempty layers"));
        }
        let weights = (1..layers.len())
            .map(|t| (0..layers[t]).map(|_| (0..layers[t - 1]).map(|_| rng.random_range(-0.5..=0.5)).collect()).collect())
            .collect();
        let biases = (1..layers.len()).map(|t| vec![0.0; layers[t]]).collect();
        Perceptron::new(layers, weights, biases)
    }

    /// A single neuron per layer with the given weights along the chain.
    pub fn chain(weights: &[f64], biases: &[f64]) -> Result<Self> {
        Perceptron::new(
            vec![1; weights.len() + 1],
            weights.iter().map(|&w| vec![vec![w]]).collect(),
            biases.iter().map(|&b| vec![b]).collect(),
        )
    }

    pub fn to_file(&self) -> PerceptronFile {
        PerceptronFile {
            layers: self.layers.clone(),
            weights: self.weights.iter().flatten().flatten().copied().collect(),
            biases: self.biases.iter().flatten().copied().collect(),
        }
    }

    pub fn from_file(file: &PerceptronFile) -> Result<Self> {
        let l = &file.layers;
        if l.len() < 2 || l.contains(&0) {
            return Err(Error::domain("a perceptron needs at least two nonempty layers"));
        }
        let n_w = l.windows(2).try_fold(0usize, |acc, p| acc.checked_add(p[0].checked_mul(p[1])?));
        let n_b = l[1..].iter().try_fold(0usize, |acc, &n| acc.checked_add(n));
        let (Some(n_w), Some(n_b)) = (n_w, n_b) else {
            return Err(Error::domain(format!("layer sizes {l:?} overflow")));
        };
        if file.weights.len() != n_w || file.biases.len() != n_b {
            return Err(Error::domain(format!(
                "expected {n_w} weights and {n_b} biases, got {} and {}",
                file.weights.len(),
                file.biases.len()
            )));
        }
        let (mut w, mut b) = (file.weights.iter().copied(), file.biases.iter().copied());
        let weights = (1..l.len())
            .map(|t| (0..l[t]).map(|_| w.by_ref().take(l[t - 1]).collect()).collect())
            .collect();
        let biases = (1..l.len()).map(|t| b.by_ref().take(l[t]).collect()).collect();
        Perceptron::new(l.clone(), weights, biases)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Perceptron::from_file(&serde_json::from_str(text)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("plain data")
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        let (n_in, n_out) = (self.layers[0], *self.layers.last().expect("layers"));
        if let Some((m, _)) = data.inputs.iter().enumerate().find(|(_, r)| r.len() != n_in) {
            return Err(Error::domain(format!("data point {m} has wrong input width, expected {n_in}")));
        }
        if let Some((m, _)) = data.targets.iter().enumerate().find(|(_, r)| r.len() != n_out) {
            return Err(Error::domain(format!("data point {m} has wrong target width, expected {n_out}")));
        }
        Ok(())
    }

    /// One layer-by-layer sweep of `x_j = S(b_j + Σ w_ji x_i)`.
    pub fn forward_pass(&self, inputs: &[Vec<f64>]) -> Result<ForwardPass> {
        let m = inputs.len();
        if let Some(row) = inputs.iter().find(|r| r.len() != self.layers[0]) {
            return Err(Error::domain(format!("input width {} does not match layer size {}", row.len(), self.layers[0])));
        }
        let first: Vec<Vec<f64>> = (0..self.layers[0]).map(|i| inputs.iter().map(|r| r[i]).collect()).collect();
        let mut activity = vec![first];
        let mut pre = vec![Vec::new()];
        for t in 0..self.weights.len() {
            let prev = &activity[t];
            let z: Vec<Vec<f64>> = (0..self.layers[t + 1])
                .map(|j| (0..m).map(|k| preactivation(self.biases[t][j], &self.weights[t][j], prev.iter().map(|x| x[k]))).collect())
                .collect();
            activity.push(z.iter().map(|row| row.iter().map(|&v| logistic(v)).collect()).collect());
            pre.push(z);
        }
        Ok(ForwardPass { activity, pre })
    }

    /// Runs the backward sweep from the output layer down to the input layer.
    pub fn backward_pass(&self, forward: &ForwardPass, exit: &[Vec<f64>]) -> Result<BackwardPass> {
        let k_out = self.layers.len() - 1;
        if exit.len() != self.layers[k_out] || exit.iter().zip(forward.output()).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::domain("exit gradients do not match the output layer"));
        }
        let m = exit.first().map_or(0, Vec::len);
        let mut sums = vec![Vec::new(); self.layers.len()];
        sums[k_out] = exit.to_vec();
        let mut arcs = vec![Vec::new(); self.weights.len()];
        for t in (0..self.weights.len()).rev() {
            let g = &sums[t + 1];
            let layer: Vec<Vec<Vec<f64>>> = (0..self.layers[t + 1])
                .map(|j| {
                    (0..self.layers[t])
                        .map(|i| (0..m).map(|k| self.weights[t][j][i] * logistic_slope(forward.pre[t + 1][j][k]) * g[j][k]).collect())
                        .collect()
                })
                .collect();
            // Sum in out-arc order of each sender: ascending receiver index.
            let mut below = vec![vec![0.0; m]; self.layers[t]];
            for (i, acc) in below.iter_mut().enumerate() {
                for k in 0..m {
                    let mut s = 0.0;
                    for row in &layer {
                        s += row[i][k];
                    }
                    acc[k] = s;
                }
            }
            sums[t] = below;
            arcs[t] = layer;
        }
        Ok(BackwardPass { arcs, exit: exit.to_vec(), sums })
    }

    /// `∂Err/∂b_v = -S'(pre) Σ_F y` and `∂Err/∂w_e = (∂Err/∂b_v) x_e`, per data point.
    pub fn parameter_gradients(&self, forward: &ForwardPass, backward: &BackwardPass) -> Gradients {
        let mut biases = Vec::with_capacity(self.weights.len());
        let mut weights = Vec::with_capacity(self.weights.len());
        for t in 0..self.weights.len() {
            let db: Vec<Vec<f64>> = (0..self.layers[t + 1])
                .map(|j| {
                    forward.pre[t + 1][j]
                        .iter()
                        .zip(&backward.sums[t + 1][j])
                        .map(|(&z, &g)| -logistic_slope(z) * g)
                        .collect()
                })
                .collect();
            let dw: Vec<Vec<Vec<f64>>> = db
                .iter()
                .map(|bj| {
                    (0..self.layers[t])
                        .map(|i| bj.iter().zip(&forward.activity[t][i]).map(|(b, x)| b * x).collect())
                        .collect()
                })
                .collect();
            biases.push(db);
            weights.push(dw);
        }
        Gradients { biases, weights }
    }

    /// `q_v = -Σ_m (|∂Err/∂b_v|_m + Σ_e |∂Err/∂w_e|_m)` for neuron `j` of layer `t + 1`.
    pub fn neuron_objective(&self, grads: &Gradients, t: usize, j: usize) -> f64 {
        let b: f64 = grads.biases[t][j].iter().map(|g| g.abs()).sum();
        let w: f64 = grads.weights[t][j].iter().flatten().map(|g| g.abs()).sum();
        -(b + w)
    }

    /// Forward pass, output gradients, backward pass and parameter gradients.
    pub fn gradients(&self, data: &Dataset) -> Result<(ForwardPass, BackwardPass, Gradients)> {
        self.check_data(data)?;
        let fwd = self.forward_pass(&data.inputs)?;
        let y = output_error_gradient(fwd.output(), &transpose(&data.targets, self.layers[self.layers.len() - 1]))?;
        let bwd = self.backward_pass(&fwd, &y)?;
        let grads = self.parameter_gradients(&fwd, &bwd);
        Ok((fwd, bwd, grads))
    }

    /// Squared error summed over outputs and data points.
    pub fn error(&self, data: &Dataset) -> Result<f64> {
        self.check_data(data)?;
        let fwd = self.forward_pass(&data.inputs)?;
        let y = output_error_gradient(fwd.output(), &transpose(&data.targets, self.layers[self.layers.len() - 1]))?;
        Ok(squared_error(&y))
    }

    /// One batch gradient-descent step; returns the error before the step.
    pub fn train_step(&mut self, data: &Dataset, eta: f64) -> Result<f64> {
        if !(eta > 0.0) {
            return Err(Error::domain("step size must be positive"));
        }
        let (_, bwd, grads) = self.gradients(data)?;
        for t in 0..self.weights.len() {
            for j in 0..self.layers[t + 1] {
                self.biases[t][j] -= eta * grads.bias_total(t, j);
                for i in 0..self.layers[t] {
                    self.weights[t][j][i] -= eta * grads.weight_total(t, j, i);
                }
            }
        }
        Ok(squared_error(&bwd.exit))
    }

    /// Trains until `Err < target` or `max_steps`; returns `(steps, final error)`.
    pub fn train(&mut self, data: &Dataset, eta: f64, target: f64, max_steps: usize) -> Result<(usize, f64)> {
        for step in 0..max_steps {
            let err = self.train_step(data, eta)?;
            if err < target {
                return Ok((step, err));
            }
        }
        Ok((max_steps, self.error(data)?))
    }

    /// Layer-by-layer backward norms from one backward pass.
    pub fn gradient_diagnostic(&self, backward: &BackwardPass) -> GradientDiagnostic {
        let norms: Vec<f64> = backward.sums.iter().map(|layer| layer.iter().flatten().map(|g| g.abs()).sum()).collect();
        let ratios: Vec<f64> = norms.windows(2).map(|w| if w[1] == 0.0 { 0.0 } else { w[0] / w[1] }).collect();
        let mean_ratio = if ratios.is_empty() { 0.0 } else { ratios.iter().sum::<f64>() / ratios.len() as f64 };
        GradientDiagnostic { norms, ratios, mean_ratio, exploding: mean_ratio > 1.0, fading: mean_ratio < 1.0 }
    }

    /// Vertex of neuron `i` in layer `t`; the exit vertex follows all neurons.
    pub fn vertex(&self, t: usize, i: usize) -> VertexId {
        VertexId(self.layers[..t].iter().sum::<usize>() + i)
    }

    pub fn exit_vertex(&self) -> VertexId {
        VertexId(self.layers.iter().sum())
    }

    /// Layered graph with arcs between consecutive layers (receiver-major) and
    /// from each output neuron to the exit vertex.
    pub fn graph(&self) -> DirectedGraph {
        let mut names: Vec<String> = Vec::new();
        for (t, &n) in self.layers.iter().enumerate() {
            names.extend((0..n).map(|i| format!("L{}n{}", t + 1, i)));
        }
        names.push("exit".into());
        let mut arcs: Vec<(String, String)> = Vec::new();
        for t in 0..self.weights.len() {
            for j in 0..self.layers[t + 1] {
                for i in 0..self.layers[t] {
                    arcs.push((names[self.vertex(t, i).0].clone(), names[self.vertex(t + 1, j).0].clone()));
                }
            }
        }
        let last = self.layers.len() - 1;
        for i in 0..self.layers[last] {
            arcs.push((names[self.vertex(last, i).0].clone(), "exit".into()));
        }
        let refs: Vec<(&str, &str)> = arcs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let mut g = DirectedGraph::new(names.iter().map(String::as_str), &refs).expect("layered graph is simple");
        for i in 0..self.layers[0] {
            g.set_environment(self.vertex(0, i), Some(EnvRole::Entry));
        }
        g.set_environment(self.exit_vertex(), Some(EnvRole::Exit));
        g
    }

    /// Arc from neuron `i` of layer `t` to neuron `j` of layer `t + 1`.
    pub fn arc(&self, t: usize, i: usize, j: usize) -> ArcId {
        let before: usize = (0..t).map(|s| self.layers[s] * self.layers[s + 1]).sum();
        ArcId(before + j * self.layers[t] + i)
    }

    pub fn exit_arc(&self, i: usize) -> ArcId {
        ArcId(self.layers.windows(2).map(|p| p[0] * p[1]).sum::<usize>() + i)
    }

    /// The two-way network: input neurons are entries emitting the data,
    /// hidden and output neurons carry `[b, w...]`, the exit holds the targets.
    pub fn to_two_way(&self, data: &Dataset) -> Result<TwoWayNetwork> {
        self.check_data(data)?;
        let g = self.graph();
        let m = data.len();
        let mut agents = Vec::new();
        for i in 0..self.layers[0] {
            let v = self.vertex(0, i);
            let values = data.inputs.iter().map(|r| r[i]).collect();
            agents.push(TwoWayAgent {
                vertex: v,
                model: Arc::new(InputNeuron { values, outputs: g.outgoing(v).len() }),
                params: vec![],
            });
        }
        for t in 0..self.weights.len() {
            for j in 0..self.layers[t + 1] {
                let v = self.vertex(t + 1, j);
                let mut params = vec![self.biases[t][j]];
                params.extend(&self.weights[t][j]);
                agents.push(TwoWayAgent {
                    vertex: v,
                    model: Arc::new(Neuron { inputs: self.layers[t], outputs: g.outgoing(v).len(), width: m }),
                    params,
                });
            }
        }
        let n_out = self.layers[self.layers.len() - 1];
        agents.push(TwoWayAgent {
            vertex: self.exit_vertex(),
            model: Arc::new(ExitNeuron { targets: transpose(&data.targets, n_out) }),
            params: vec![],
        });
        let space = SignalSpace::Real { width: m };
        TwoWayNetwork::new(g, space.clone(), space, agents)
    }

    /// The lifted signal vector assembled from direct forward and backward passes.
    pub fn signals(&self, data: &Dataset) -> Result<SignalVector> {
        let (fwd, bwd, _) = self.gradients(data)?;
        let mut pairs = Vec::new();
        for t in 0..self.weights.len() {
            for j in 0..self.layers[t + 1] {
                for i in 0..self.layers[t] {
                    let x = Signal::Real(fwd.activity[t][i].clone());
                    let y = Signal::Real(bwd.arcs[t][j][i].clone());
                    pairs.push((self.arc(t, i, j), Signal::pair(x, y)));
                }
            }
        }
        for (i, y) in bwd.exit.iter().enumerate() {
            pairs.push((self.exit_arc(i), Signal::pair(Signal::Real(fwd.output()[i].clone()), Signal::Real(y.clone()))));
        }
        SignalVector::from_pairs(pairs)
    }

    /// Four-point reinforcement slack along an input-to-output path and its mirror.
    ///
    /// `path[t]` picks one neuron per layer. The comparison point `x'` is the
    /// aggregate after adding `probe` to the first neuron's input activity, so
    /// the change has travelled to the exit and back. The ordering this
    /// presumes is not local to any neuron; treat the result as a diagnostic.
    pub fn neural_feedback_diagnostic(&self, data: &Dataset, path: &[usize], probe: f64) -> Result<NeuralFeedbackReport> {
        if path.len() != self.layers.len() || path.iter().zip(&self.layers).any(|(&i, &n)| i >= n) {
            return Err(Error::domain(format!("path {path:?} does not pick one neuron per layer")));
        }
        let net = self.to_two_way(data)?;
        let x = self.signals(data)?;
        let mut shifted = data.clone();
        for row in &mut shifted.inputs {
            row[path[0]] += probe;
        }
        let xp = self.signals(&shifted)?;
        let mut arcs: Vec<ArcId> = (0..self.weights.len()).map(|t| self.arc(t, path[t], path[t + 1])).collect();
        arcs.push(self.exit_arc(path[path.len() - 1]));
        let lifted = net.lifted();
        let mut agents = Vec::new();
        for (t, &i) in path.iter().enumerate().skip(1) {
            let v = self.vertex(t, i);
            let (slack, _) = reinforcement_slack(lifted, v, &arcs, &x, &xp)?;
            agents.push((lifted.graph().name(v).to_string(), slack));
        }
        let total = agents.iter().map(|(_, s)| s).sum();
        let worst = agents.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
        Ok(NeuralFeedbackReport { arcs, agents, total_slack: total, worst_slack: worst, authoritative: false })
    }

    /// Whether repeated lifted sweeps leave the direct-pass signals exactly unchanged.
    pub fn lifted_fixed_point(&self, data: &Dataset) -> Result<(SignalVector, SignalVector)> {
        let net = self.to_two_way(data)?;
        let z = self.signals(data)?;
        let next = crate::propagation::step_synchronous(net.lifted(), &z)?;
        Ok((z, next))
    }

    /// Solves the lifted network from zero signals; returns `(aggregate, sweeps)`.
    pub fn solve_lifted(&self, data: &Dataset) -> Result<(SignalVector, usize)> {
        let net = self.to_two_way(data)?;
        let cfg = PropagationConfig { tolerance: 0.0, max_iterations: 4 * self.layers.len() + 8, ..PropagationConfig::synchronous(0.0) };
        let r = solve_aggregate(net.lifted(), &net.lifted().zero_signals(), &cfg)?;
        Ok((r.fixed_point, r.iterations))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralFeedbackReport {
    pub arcs: Vec<ArcId>,
    /// `(neuron, LHS - RHS)` for each parameterized neuron on the path.
    pub agents: Vec<(String, f64)>,
    pub total_slack: f64,
    pub worst_slack: f64,
    /// Always false: the two-way reinforcement condition is conjectural.
    pub authoritative: bool,
}

fn preactivation(bias: f64, weights: &[f64], xs: impl Iterator<Item = f64>) -> f64 {
    let mut z = bias;
    for (w, x) in weights.iter().zip(xs) {
        z += w * x;
    }
    z
}

fn transpose(rows: &[Vec<f64>], width: usize) -> Vec<Vec<f64>> {
    (0..width).map(|i| rows.iter().map(|r| r[i]).collect()).collect()
}

/// `y_i = x^d_i - x_i` per output and data point.
pub fn output_error_gradient(x: &[Vec<f64>], desired: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if x.len() != desired.len() || x.iter().zip(desired).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::domain("output and target shapes differ"));
    }
    Ok(x.iter().zip(desired).map(|(a, d)| a.iter().zip(d).map(|(x, t)| t - x).collect()).collect())
}

/// `Err = ½ Σ y²`.
pub fn squared_error(y: &[Vec<f64>]) -> f64 {
    0.5 * y.iter().flatten().map(|v| v * v).sum::<f64>()
}

/// Entry neuron emitting fixed input activity.
#[derive(Debug, Clone)]
struct InputNeuron {
    values: Vec<f64>,
    outputs: usize,
}

impl AgentModel for InputNeuron {
    fn name(&self) -> &str {
        "input-neuron"
    }

    fn evaluate(&self, _params: &[f64], _inputs: &[Signal]) -> std::result::Result<Vec<Signal>, String> {
        Ok(vec![Signal::Real(self.values.clone()); self.outputs])
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        Vec::new()
    }
}

/// Hidden or output neuron with parameters `[b, w_1, ..., w_n]`.
#[derive(Debug, Clone)]
struct Neuron {
    inputs: usize,
    outputs: usize,
    width: usize,
}

impl Neuron {
    fn split<'a>(&self, inputs: &'a [Signal]) -> std::result::Result<(&'a [Signal], &'a [Signal]), String> {
        if inputs.len() != self.inputs + self.outputs {
            return Err(format!("expected {} inputs, got {}", self.inputs + self.outputs, inputs.len()));
        }
        Ok(inputs.split_at(self.inputs))
    }

    fn backward_sum(&self, ys: &[Signal]) -> Vec<f64> {
        (0..self.width)
            .map(|k| {
                let mut s = 0.0;
                for y in ys {
                    s += y.reals()[k];
                }
                s
            })
            .collect()
    }
}

impl AgentModel for Neuron {
    fn name(&self) -> &str {
        "neuron"
    }

    fn evaluate(&self, params: &[f64], inputs: &[Signal]) -> std::result::Result<Vec<Signal>, String> {
        let (xs, ys) = self.split(inputs)?;
        let (b, w) = (params[0], &params[1..]);
        let z: Vec<f64> = (0..self.width).map(|k| preactivation(b, w, xs.iter().map(|x| x.reals()[k]))).collect();
        let g = self.backward_sum(ys);
        let x_out = Signal::Real(z.iter().map(|&v| logistic(v)).collect());
        let mut out = vec![x_out; self.outputs];
        for wi in w {
            out.push(Signal::Real((0..self.width).map(|k| wi * logistic_slope(z[k]) * g[k]).collect()));
        }
        Ok(out)
    }

    /// Uses the posted firing activity for the slope, so the objective sees the agent's outputs.
    fn utility(&self, _params: &[f64], inputs: &[Signal], outputs: &[Signal]) -> f64 {
        let Ok((xs, ys)) = self.split(inputs) else {
            return f64::NEG_INFINITY;
        };
        let g = self.backward_sum(ys);
        let fire = outputs.first().map(Signal::reals).unwrap_or(&[]);
        let mut q = 0.0;
        for k in 0..self.width {
            let s = fire.get(k).copied().unwrap_or(0.5);
            let db = (s * (1.0 - s) * g[k]).abs();
            q += db;
            for x in xs {
                q += db * x.reals()[k].abs();
            }
        }
        -q
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY); self.inputs + 1]
    }
}

/// Exit vertex returning `x^d - x` to each output neuron.
#[derive(Debug, Clone)]
struct ExitNeuron {
    targets: Vec<Vec<f64>>,
}

impl AgentModel for ExitNeuron {
    fn name(&self) -> &str {
        "exit"
    }

    fn evaluate(&self, _params: &[f64], inputs: &[Signal]) -> std::result::Result<Vec<Signal>, String> {
        if inputs.len() != self.targets.len() {
            return Err(format!("expected {} inputs, got {}", self.targets.len(), inputs.len()));
        }
        Ok(inputs
            .iter()
            .zip(&self.targets)
            .map(|(x, t)| Signal::Real(x.reals().iter().zip(t).map(|(a, d)| d - a).collect()))
            .collect())
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn threshold_examples() {
        assert!(threshold_unit(0.0, &[], &[]));
        assert!(threshold_unit(-1.0, &[1.0], &[true]));
        assert!(!threshold_unit(-1.5, &[1.0, 1.0], &[true, false]));
    }

    #[test]
    fn forward_examples() {
        let p = Perceptron::chain(&[0.0], &[0.0]).unwrap();
        assert_eq!(p.forward_pass(&[vec![1.0]]).unwrap().output()[0][0], 0.5);
        let p = Perceptron::chain(&[1.0], &[0.0]).unwrap();
        assert!(close(p.forward_pass(&[vec![1.0]]).unwrap().output()[0][0], 0.731_058_578_630_004_9, 1e-12));
        for (w, sat) in [(40.0, 1.0), (-40.0, 0.0)] {
            let p = Perceptron::chain(&[w], &[0.0]).unwrap();
            assert!((p.forward_pass(&[vec![1.0]]).unwrap().output()[0][0] - sat).abs() <= 1e-15);
        }
        assert!(logistic(-800.0) == 0.0 && logistic(800.0) == 1.0);
    }

    #[test]
    fn output_gradient_examples() {
        let zero = output_error_gradient(&[vec![0.3, 0.2]], &[vec![0.3, 0.2]]).unwrap();
        assert!(zero.iter().flatten().all(|&y| y == 0.0));
        let y = output_error_gradient(&[vec![0.75]], &[vec![1.0]]).unwrap();
        assert_eq!(y[0][0], 0.25);
        assert_eq!(squared_error(&y), 0.031_25);
        assert!(output_error_gradient(&[vec![0.75]], &[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn zero_backward_signals_give_zero_gradients() {
        let p = Perceptron::random(vec![2, 3, 1], 1).unwrap();
        let fwd = p.forward_pass(&[vec![0.2, 0.9]]).unwrap();
        let bwd = p.backward_pass(&fwd, &[vec![0.0]]).unwrap();
        assert!(bwd.sums.iter().flatten().flatten().all(|&y| y == 0.0));
        let g = p.parameter_gradients(&fwd, &bwd);
        assert!(g.biases.iter().flatten().flatten().chain(g.weights.iter().flatten().flatten().flatten()).all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_chain_matches_symbolic_chain_rule() {
        // x1 = S(b1 + w1 x0), x2 = S(b2 + w2 x1), Err = ½ (d - x2)².
        let (w1, w2, b1, b2, x0, d) = (0.7, -1.3, 0.1, 0.4, 0.9, 0.2);
        let p = Perceptron::chain(&[w1, w2], &[b1, b2]).unwrap();
        let data = Dataset::new(vec![vec![x0]], vec![vec![d]]).unwrap();
        let (_, _, g) = p.gradients(&data).unwrap();
        let z1 = b1 + w1 * x0;
        let x1 = logistic(z1);
        let z2 = b2 + w2 * x1;
        let x2 = logistic(z2);
        let e2 = -(d - x2) * logistic_slope(z2);
        let e1 = e2 * w2 * logistic_slope(z1);
        assert!(close(g.bias_total(1, 0), e2, 1e-15));
        assert!(close(g.weight_total(1, 0, 0), e2 * x1, 1e-15));
        assert!(close(g.bias_total(0, 0), e1, 1e-15));
        assert!(close(g.weight_total(0, 0, 0), e1 * x0, 1e-15));
    }

    #[test]
    fn saturated_neuron_has_fading_gradient() {
        let p = Perceptron::chain(&[1.0], &[39.0]).unwrap();
        let data = Dataset::new(vec![vec![1.0]], vec![vec![0.0]]).unwrap();
        let (_, _, g) = p.gradients(&data).unwrap();
        assert!(g.bias_total(0, 0).abs() <= 1e-15);
    }

    #[test]
    fn deep_chain_backward_signal_scales_with_weights() {
        let data = Dataset::new(vec![vec![0.5]], vec![vec![1.0]]).unwrap();
        for (w, grows) in [(2.0, false), (0.1, false)] {
            let p = Perceptron::chain(&[w; 10], &[0.0; 10]).unwrap();
            let (_, bwd, _) = p.gradients(&data).unwrap();
            let d = p.gradient_diagnostic(&bwd);
            assert_eq!(d.ratios.len(), 10);
            // Each ratio is |w| S'(z) ≤ |w| / 4.
            assert!(d.ratios.iter().all(|&r| r <= w / 4.0 + 1e-15));
            assert_eq!(d.exploding, grows);
        }
        let p = Perceptron::chain(&[8.0; 6], &[-4.0; 6]).unwrap();
        let (_, bwd, _) = p.gradients(&data).unwrap();
        assert!(p.gradient_diagnostic(&bwd).exploding);
    }

    #[test]
    fn objective_is_zero_only_without_gradient() {
        let p = Perceptron::random(vec![2, 2, 1], 3).unwrap();
        let data = Dataset::xor();
        let (_, _, g) = p.gradients(&data).unwrap();
        assert!(p.neuron_objective(&g, 0, 0) < 0.0);
        let fwd = p.forward_pass(&data.inputs).unwrap();
        let bwd = p.backward_pass(&fwd, &[vec![0.0; 4]]).unwrap();
        let g0 = p.parameter_gradients(&fwd, &bwd);
        assert_eq!(p.neuron_objective(&g0, 1, 0), 0.0);
    }

    #[test]
    fn train_step_is_plain_gradient_descent() {
        let data = Dataset::new(vec![vec![1.0]], vec![vec![0.2]]).unwrap();
        let mut p = Perceptron::chain(&[0.3], &[0.1]).unwrap();
        let (_, _, g) = p.gradients(&data).unwrap();
        let expect = 0.3 - 0.5 * g.weight_total(0, 0, 0);
        p.train_step(&data, 0.5).unwrap();
        assert_eq!(p.weights[0][0][0], expect);

        // Targets equal to the outputs leave the network unchanged.
        let q = Perceptron::random(vec![2, 2, 1], 9).unwrap();
        let out = q.forward_pass(&Dataset::xor().inputs).unwrap().output()[0].clone();
        let exact = Dataset::new(Dataset::xor().inputs, out.iter().map(|&x| vec![x]).collect()).unwrap();
        let mut r = q.clone();
        r.train_step(&exact, 0.5).unwrap();
        assert_eq!(r, q);
        assert!(q.clone().train_step(&exact, 0.0).is_err());
    }

    #[test]
    fn objective_improves_along_training() {
        let data = Dataset::xor();
        let mut p = Perceptron::random(vec![2, 2, 1], 0).unwrap();
        let (_, _, g) = p.gradients(&data).unwrap();
        let before = p.neuron_objective(&g, 1, 0);
        p.train(&data, 0.5, 0.01, 20_000).unwrap();
        let (_, _, g) = p.gradients(&data).unwrap();
        assert!(p.neuron_objective(&g, 1, 0) > before);
    }

    #[test]
    fn lifted_network_reaches_the_direct_passes_in_one_round_trip() {
        let p = Perceptron::random(vec![2, 3, 2], 4).unwrap();
        let data = Dataset::new(vec![vec![0.1, 0.7], vec![0.9, 0.3]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (z, next) = p.lifted_fixed_point(&data).unwrap();
        assert_eq!(z, next);
        let (solved, sweeps) = p.solve_lifted(&data).unwrap();
        assert_eq!(solved, z);
        // Forward over two transitions, exit, back over two transitions, then a confirming sweep.
        assert!(sweeps <= 2 * p.layers.len() + 1, "{sweeps} sweeps");
    }

    #[test]
    fn model_file_round_trips() {
        let p = Perceptron::random(vec![3, 2, 2], 5).unwrap();
        let back = Perceptron::from_json_str(&p.to_json_string()).unwrap();
        assert_eq!(back, p);
        assert_eq!(p.to_file().weights[p.arc(0, 2, 1).0], p.weights[0][1][2]);
        assert!(Perceptron::from_json_str(r#"{"layers":[2,1],"weights":[1.0],"biases":[0.0]}"#).is_err());
    }

    #[test]
    fn csv_loading() {
        let d = Dataset::from_csv_str("a,b,t\n0,0,0\n0,1,1\n1,0,1\n1,1,0\n", 2, 1).unwrap();
        assert_eq!(d, Dataset::xor());
        assert!(Dataset::from_csv_str("0,0\n", 2, 1).is_err());
        assert!(Dataset::from_csv_str("a,b,t\n", 2, 1).is_err());
        assert!(Dataset::from_csv_str("0,0,0\nx,1,1\n", 2, 1).is_err());
    }

    #[test]
    fn neural_feedback_examples() {
        // All weights zero and targets at S(b): every gradient vanishes.
        let flat = Perceptron::chain(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        let data = Dataset::new(vec![vec![0.3]], vec![vec![0.5]]).unwrap();
        let r = flat.neural_feedback_diagnostic(&data, &[0, 0, 0], 0.1).unwrap();
        assert!(!r.authoritative);
        assert!(r.agents.iter().all(|(_, s)| *s == 0.0));

        let data = Dataset::new(vec![vec![0.5]], vec![vec![0.0]]).unwrap();
        let reinforcing = Perceptron::chain(&[1.5, 1.5], &[0.0, 0.0]).unwrap();
        let r = reinforcing.neural_feedback_diagnostic(&data, &[0, 0, 0], 0.1).unwrap();
        assert!(r.total_slack > 0.0, "{r:?}");
        let flipped = Perceptron::chain(&[1.5, -1.5], &[0.0, 0.0]).unwrap();
        let r = flipped.neural_feedback_diagnostic(&data, &[0, 0, 0], 0.1).unwrap();
        assert!(r.total_slack < 0.0, "{r:?}");
    }

    fn central_difference(p: &Perceptron, data: &Dataset, read: impl Fn(&mut Perceptron) -> &mut f64) -> f64 {
        let h = 1e-5;
        let mut a = p.clone();
        *read(&mut a) += h;
        let mut b = p.clone();
        *read(&mut b) -= h;
        (a.error(data).unwrap() - b.error(data).unwrap()) / (2.0 * h)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gradients_match_finite_differences(
            hidden in prop::collection::vec(1usize..=5, 0..=1),
            n_in in 1usize..=4,
            n_out in 1usize..=3,
            m in 1usize..=4,
            seed in any::<u64>(),
        ) {
            let mut layers = vec![n_in];
            layers.extend(&hidden);
            layers.push(n_out);
            let p = Perceptron::random(layers.clone(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let data = Dataset::new(
                (0..m).map(|_| (0..n_in).map(|_| rng.random::<f64>()).collect()).collect(),
                (0..m).map(|_| (0..n_out).map(|_| rng.random::<f64>()).collect()).collect(),
            ).unwrap();
            let (_, _, g) = p.gradients(&data).unwrap();
            for t in 0..layers.len() - 1 {
                for j in 0..layers[t + 1] {
                    let fd = central_difference(&p, &data, |q| &mut q.biases[t][j]);
                    let an = g.bias_total(t, j);
                    prop_assert!((fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()).max(1e-8), "bias {t} {j}: {an} vs {fd}");
                    for i in 0..layers[t] {
                        let fd = central_difference(&p, &data, |q| &mut q.weights[t][j][i]);
                        let an = g.weight_total(t, j, i);
                        prop_assert!((fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()).max(1e-8), "weight {t} {j} {i}: {an} vs {fd}");
                    }
                }
            }
        }

        #[test]
        fn small_steps_do_not_increase_error(seed in any::<u64>()) {
            let data = Dataset::xor();
            let p = Perceptron::random(vec![2, 3, 1], seed).unwrap();
            let before = p.error(&data).unwrap();
            let mut eta = 1.0;
            let mut decreased = false;
            for _ in 0..30 {
                let mut q = p.clone();
                q.train_step(&data, eta).unwrap();
                if q.error(&data).unwrap() <= before {
                    decreased = true;
                    break;
                }
                eta /= 2.0;
            }
            prop_assert!(decreased);
        }
    }
}
