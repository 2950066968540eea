//! TOML scenarios and the drivers behind the command-line front end.
//!
//! A scenario names one engine (`generic`, `mlp`, `aco` or `market`), its
//! inputs and per-module config sections. Running it yields a deterministic
//! summary, tidy time series and extra artifacts; nothing here touches the
//! file system except reading the referenced inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aco::{separation_quality, shortest_path_oracle, AcoInstance, AcoParams};
use crate::agent::{Affine, Agent, AgentModel, Constant, Fixed, Network, Utility};
use crate::error::{Error, Result};
use crate::export::Series;
use crate::feedback::{check_feedback_loop, enumerate_candidate_walks, enumerate_network_walks, FeedbackConfig, FeedbackReport};
use crate::graph::DirectedGraph;
use crate::market::{coupled_rows, tatonnement, Market, MarketSpec, NicheState, TatonnementConfig};
use crate::mlp::{Dataset, GradientDiagnostic, Perceptron};
use crate::pattern::{network_distance, run_coupled, CoupledConfig, PatternConfig};
use crate::propagation::{profile_convergence, solve_aggregate, AggregateResult, ConvergenceProfile, Mode, PropagationConfig};
use crate::signal::{Signal, SignalSpace, SignalVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Generic,
    Mlp,
    Aco,
    Market,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Generic => "generic",
            ScenarioKind::Mlp => "mlp",
            ScenarioKind::Aco => "aco",
            ScenarioKind::Market => "market",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SpaceSpec {
    Real { width: usize },
    Set { universe: u32 },
    Distribution { outcomes: usize },
}

impl Default for SpaceSpec {
    fn default() -> Self {
        SpaceSpec::Real { width: 1 }
    }
}

impl SpaceSpec {
    pub fn space(self) -> SignalSpace {
        match self {
            SpaceSpec::Real { width } => SignalSpace::Real { width },
            SpaceSpec::Set { universe } => SignalSpace::Set { universe },
            SpaceSpec::Distribution { outcomes } => SignalSpace::Distribution { outcomes },
        }
    }
}

/// One agent of a generic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase", deny_unknown_fields)]
pub enum AgentSpec {
    /// `gain * Σ w_i x_i + offset` on every output.
    Affine {
        vertex: String,
        gain: f64,
        #[serde(default)]
        offset: f64,
        /// Per-input weights; unit weights when absent.
        weights: Option<Vec<f64>>,
        lo: Option<f64>,
        hi: Option<f64>,
        #[serde(default = "no_utility")]
        utility: Utility,
        #[serde(default)]
        frozen: bool,
    },
    /// Emits its parameters as a real vector.
    Constant {
        vertex: String,
        value: Vec<f64>,
        lo: Option<f64>,
        hi: Option<f64>,
        #[serde(default = "no_utility")]
        utility: Utility,
        #[serde(default)]
        frozen: bool,
    },
    /// Emits one fixed signal of any space on every output.
    Fixed { vertex: String, signal: Signal },
}

fn no_utility() -> Utility {
    Utility::None
}

impl AgentSpec {
    pub fn vertex(&self) -> &str {
        match self {
            AgentSpec::Affine { vertex, .. } | AgentSpec::Constant { vertex, .. } | AgentSpec::Fixed { vertex, .. } => vertex,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSection {
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    /// Saved model JSON; a seeded random model when absent.
    pub source: Option<PathBuf>,
    /// `"xor"` or a CSV path.
    #[serde(default = "default_data")]
    pub data: String,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_target")]
    pub target: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_layers() -> Vec<usize> {
    vec![2, 2, 1]
}
fn default_data() -> String {
    "xor".into()
}
fn default_eta() -> f64 {
    0.5
}
fn default_target() -> f64 {
    0.05
}
fn default_max_steps() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AcoGenerator {
    Diamond { short: f64, long: f64 },
    Chain { n: usize },
    RandomDag { n: usize, p: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcoSection {
    /// Instance JSON.
    pub instance: Option<PathBuf>,
    pub generator: Option<AcoGenerator>,
    /// Overrides the instance's parameters.
    pub params: Option<AcoParams>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

fn default_iterations() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    /// Market TOML.
    pub source: Option<PathBuf>,
    pub spec: Option<MarketSpec>,
    #[serde(default)]
    pub tatonnement: TatonnementConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Replaces every section's seed.
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the scenario file.
    pub output: Option<PathBuf>,
    /// Graph JSON for generic scenarios.
    pub graph: Option<PathBuf>,
    #[serde(default)]
    pub space: SpaceSpec,
    /// Gain of affine agents for vertices without an entry in `agents`.
    #[serde(default = "default_gain")]
    pub default_gain: f64,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub propagation: PropagationConfig,
    #[serde(default)]
    pub pattern: PatternConfig,
    #[serde(default)]
    pub coupled: CoupledConfig,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    pub mlp: Option<MlpSection>,
    pub aco: Option<AcoSection>,
    pub market: Option<MarketSection>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base: PathBuf,
}

fn default_gain() -> f64 {
    0.5
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

impl Scenario {
    pub fn from_toml_str(text: &str, base: impl Into<PathBuf>) -> Result<Self> {
        let mut s: Scenario = toml::from_str(text)?;
        s.base = base.into();
        s.check_sections()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let s = Self::from_toml_str(&text, base)?;
        s.validate()?;
        Ok(s)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    /// Kind-specific sections present, without touching files.
    fn check_sections(&self) -> Result<()> {
        match self.kind {
            ScenarioKind::Generic => {
                if self.graph.is_none() {
                    return Err(Error::domain("generic scenario needs `graph`"));
                }
            }
            ScenarioKind::Mlp => {
                if self.mlp.is_none() {
                    return Err(Error::domain("mlp scenario needs an [mlp] section"));
                }
            }
            ScenarioKind::Aco => match &self.aco {
                Some(a) if a.instance.is_some() != a.generator.is_some() => {}
                Some(_) => return Err(Error::domain("[aco] needs exactly one of `instance` or `generator`")),
                None => return Err(Error::domain("aco scenario needs an [aco] section")),
            },
            ScenarioKind::Market => match &self.market {
                Some(m) if m.source.is_some() != m.spec.is_some() => {}
                Some(_) => return Err(Error::domain("[market] needs exactly one of `source` or `spec`")),
                None => return Err(Error::domain("market scenario needs a [market] section")),
            },
        }
        Ok(())
    }

    /// Sections present and every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        self.check_sections()?;
        let mut files: Vec<&Path> = Vec::new();
        files.extend(self.graph.as_deref());
        if let Some(m) = &self.mlp {
            files.extend(m.source.as_deref());
            if m.data != "xor" {
                files.push(Path::new(&m.data));
            }
        }
        files.extend(self.aco.as_ref().and_then(|a| a.instance.as_deref()));
        files.extend(self.market.as_ref().and_then(|m| m.source.as_deref()));
        for f in files {
            let p = self.resolve(f);
            if !p.is_file() {
                return Err(Error::Io(format!("{}: file not found", p.display())));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn propagation_config(&self) -> PropagationConfig {
        PropagationConfig { seed: self.seed, ..self.propagation.clone() }
    }

    fn pattern_config(&self) -> PatternConfig {
        PatternConfig { seed: self.seed, ..self.pattern.clone() }
    }

    fn feedback_config(&self) -> FeedbackConfig {
        FeedbackConfig { seed: self.seed, ..self.feedback }
    }

    /// The network of a generic scenario.
    pub fn network(&self) -> Result<Network> {
        let path = self.graph.as_ref().ok_or_else(|| Error::domain("generic scenario needs `graph`"))?;
        let graph = DirectedGraph::from_json_str(&read(&self.resolve(path))?)?;
        build_network(graph, self.space, self.default_gain, &self.agents)
    }

    pub fn market(&self) -> Result<Market> {
        let section = self.market.as_ref().ok_or_else(|| Error::domain("market scenario needs a [market] section"))?;
        let spec = match (&section.source, &section.spec) {
            (Some(p), _) => MarketSpec::from_toml_str(&read(&self.resolve(p))?)?,
            (None, Some(s)) => s.clone(),
            (None, None) => return Err(Error::domain("[market] needs `source` or `spec`")),
        };
        spec.build()
    }

    pub fn aco_instance(&self) -> Result<AcoInstance> {
        let section = self.aco.as_ref().ok_or_else(|| Error::domain("aco scenario needs an [aco] section"))?;
        let params = section.params.unwrap_or_default();
        let mut inst = match (&section.instance, &section.generator) {
            (Some(p), _) => AcoInstance::from_json_str(&read(&self.resolve(p))?)?,
            (None, Some(AcoGenerator::Diamond { short, long })) => AcoInstance::diamond(*short, *long, params)?,
            (None, Some(AcoGenerator::Chain { n })) => AcoInstance::chain(*n, params)?,
            (None, Some(AcoGenerator::RandomDag { n, p, seed })) => AcoInstance::random_dag(*n, *p, *seed, params)?,
            (None, None) => return Err(Error::domain("[aco] needs `instance` or `generator`")),
        };
        if let (Some(p), Some(_)) = (section.params, &section.instance) {
            let file = inst.to_file();
            inst = crate::aco::AcoFile { params: p, ..file }.build()?;
        }
        Ok(inst)
    }

    fn mlp_inputs(&self) -> Result<(Perceptron, Dataset, &MlpSection)> {
        let section = self.mlp.as_ref().ok_or_else(|| Error::domain("mlp scenario needs an [mlp] section"))?;
        let model = match &section.source {
            Some(p) => Perceptron::from_json_str(&read(&self.resolve(p))?)?,
            None => Perceptron::random(section.layers.clone(), self.seed)?,
        };
        let layers = &model.layers;
        let data = if section.data == "xor" {
            Dataset::xor()
        } else {
            let text = read(&self.resolve(Path::new(&section.data)))?;
            Dataset::from_csv_str(&text, layers[0], *layers.last().expect("validated layers"))?
        };
        Ok((model, data, section))
    }
}

/// Generic network from a graph and agent entries; missing vertices get affine agents.
pub fn build_network(graph: DirectedGraph, space: SpaceSpec, default_gain: f64, specs: &[AgentSpec]) -> Result<Network> {
    let mut by_vertex: BTreeMap<&str, &AgentSpec> = BTreeMap::new();
    for s in specs {
        graph.vertex(s.vertex())?;
        if by_vertex.insert(s.vertex(), s).is_some() {
            return Err(Error::domain(format!("vertex `{}` has two agents", s.vertex())));
        }
    }
    let width = match space {
        SpaceSpec::Real { width } => width,
        _ => 1,
    };
    let mut agents = Vec::with_capacity(graph.vertex_count());
    for v in graph.vertices() {
        let (n_in, n_out) = (graph.incoming(v).len(), graph.outgoing(v).len());
        let bounds = |lo: Option<f64>, hi: Option<f64>| (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY));
        let (model, params, frozen): (Arc<dyn AgentModel>, Vec<f64>, Option<bool>) = match by_vertex.get(graph.name(v)) {
            None => (Arc::new(Affine::new(default_gain, n_in, n_out).with_width(width)), vec![0.0], None),
            Some(AgentSpec::Affine { gain, offset, weights, lo, hi, utility, frozen, .. }) => {
                let mut m = Affine::new(*gain, n_in, n_out).with_width(width).with_utility(*utility);
                let (lo, hi) = bounds(*lo, *hi);
                m = m.with_bounds(lo, hi);
                if let Some(w) = weights {
                    if w.len() != n_in {
                        return Err(Error::domain(format!("`{}` has {n_in} inputs but {} weights", graph.name(v), w.len())));
                    }
                    m.weights = w.clone();
                }
                (Arc::new(m), vec![*offset], Some(*frozen))
            }
            Some(AgentSpec::Constant { value, lo, hi, utility, frozen, .. }) => {
                if value.len() != width {
                    return Err(Error::domain(format!("`{}` value needs width {width}", graph.name(v))));
                }
                let (lo, hi) = bounds(*lo, *hi);
                let m = Constant::new(n_out, width).with_bounds(lo, hi).with_utility(*utility);
                (Arc::new(m), value.clone(), Some(*frozen))
            }
            Some(AgentSpec::Fixed { signal, .. }) => {
                if !space.space().contains(signal) {
                    return Err(Error::domain(format!("`{}` signal is not in the {} space", graph.name(v), space.space().name())));
                }
                (Arc::new(Fixed { outputs: vec![signal.clone(); n_out] }), vec![], Some(true))
            }
        };
        let mut agent = Agent::oneway(&graph, v, model, params);
        if let Some(f) = frozen {
            agent = agent.frozen(f || graph.is_environment(v));
        }
        agents.push(agent);
    }
    Network::new(graph, space.space(), agents)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveInfo {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

impl From<&AggregateResult> for SolveInfo {
    fn from(r: &AggregateResult) -> Self {
        SolveInfo { iterations: r.iterations, residual: r.residual, converged: r.converged }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenericSummary {
    pub vertices: usize,
    pub arcs: usize,
    pub initial: SolveInfo,
    pub steps: usize,
    pub entry_time: Option<f64>,
    pub violations: usize,
    pub separated: bool,
    pub final_states: BTreeMap<String, Vec<f64>>,
    pub final_aggregate: BTreeMap<String, Signal>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlpSummary {
    pub layers: Vec<usize>,
    pub steps: usize,
    pub final_error: f64,
    pub reached_target: bool,
    pub outputs: Vec<Vec<f64>>,
    pub diagnostic: GradientDiagnostic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcoSummary {
    pub vertices: usize,
    pub arcs: usize,
    pub iterations: usize,
    pub best_path: Option<Vec<String>>,
    pub best_length: Option<f64>,
    pub modal_path: Option<Vec<String>>,
    pub modal_mass: f64,
    pub oracle_path: Vec<String>,
    pub oracle_length: f64,
    pub matches_oracle: bool,
    pub support_nonincreasing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketSummary {
    pub tatonnement: SolveInfo,
    pub initial: Vec<NicheState>,
    pub steps: usize,
    pub separated: bool,
    pub niches: Vec<NicheState>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Outcome {
    Generic(GenericSummary),
    Mlp(MlpSummary),
    Aco(AcoSummary),
    Market(MarketSummary),
}

/// Deterministic result of a run; nothing time-dependent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    pub series: Vec<Series>,
    /// Extra `(file name, contents)` pairs.
    pub artifacts: Vec<(String, String)>,
}

pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    match scenario.kind {
        ScenarioKind::Generic => run_generic(scenario),
        ScenarioKind::Mlp => run_mlp(scenario),
        ScenarioKind::Aco => run_aco(scenario),
        ScenarioKind::Market => run_market(scenario),
    }
}

fn wrap(scenario: &Scenario, outcome: Outcome, series: Vec<Series>, artifacts: Vec<(String, String)>) -> RunOutput {
    RunOutput { summary: Summary { seed: scenario.seed, outcome }, series, artifacts }
}

fn run_generic(scenario: &Scenario) -> Result<RunOutput> {
    let net = scenario.network()?;
    let prop = scenario.propagation_config();
    let solved = solve_aggregate(&net, &net.zero_signals(), &PropagationConfig { mode: Mode::Synchronous, ..prop.clone() })?;
    let run = run_coupled(&net, &solved.fixed_point, &prop, &scenario.pattern_config(), &scenario.coupled)?;
    let g = net.graph();
    let mut separation = Series::new("separation");
    for &(t, d) in &run.report.distances {
        separation.push(t, d);
    }
    let mut change = Series::new("state_change");
    for (k, w) in run.states.windows(2).enumerate() {
        change.push(((k + 1) as f64) * scenario.pattern.step, network_distance(&net, &w[0], &w[1])?);
    }
    let last = run.states.last().expect("initial state");
    let z = run.aggregates.last().expect("initial aggregate");
    let summary = GenericSummary {
        vertices: g.vertex_count(),
        arcs: g.arc_count(),
        initial: (&solved).into(),
        steps: scenario.coupled.steps,
        entry_time: run.report.entry_time,
        violations: run.report.violations.len(),
        separated: run.report.separated(),
        final_states: g.vertices().map(|v| (g.name(v).to_string(), last[v.0].clone())).collect(),
        final_aggregate: z.iter().map(|(e, s)| (g.arc_label(e), s.clone())).collect(),
    };
    Ok(wrap(scenario, Outcome::Generic(summary), vec![separation, change], Vec::new()))
}

fn run_mlp(scenario: &Scenario) -> Result<RunOutput> {
    let (mut model, data, section) = scenario.mlp_inputs()?;
    if !(section.eta > 0.0) {
        return Err(Error::domain("eta must be positive"));
    }
    let mut error = Series::new("error");
    error.push(0.0, model.error(&data)?);
    let mut steps = 0;
    let mut last = error.points[0].1;
    while steps < section.max_steps && last >= section.target {
        model.train_step(&data, section.eta)?;
        steps += 1;
        last = model.error(&data)?;
        error.push(steps as f64, last);
    }
    let (fwd, bwd, _) = model.gradients(&data)?;
    let summary = MlpSummary {
        layers: model.layers.clone(),
        steps,
        final_error: last,
        reached_target: last < section.target,
        outputs: fwd.output().to_vec(),
        diagnostic: model.gradient_diagnostic(&bwd),
    };
    let artifacts = vec![("model.json".to_string(), model.to_json_string())];
    Ok(wrap(scenario, Outcome::Mlp(summary), vec![error], artifacts))
}

fn run_aco(scenario: &Scenario) -> Result<RunOutput> {
    let mut inst = scenario.aco_instance()?;
    let iterations = scenario.aco.as_ref().map_or(default_iterations(), |a| a.iterations);
    let g = inst.graph().clone();
    let colony = inst.colony();
    let names = |path: &[crate::graph::ArcId]| -> Vec<String> {
        let mut out = vec![g.name(colony).to_string()];
        out.extend(path.iter().map(|&e| g.name(g.head(e)).to_string()));
        out
    };
    let oracle = shortest_path_oracle(&g, inst.lengths(), inst.colony(), inst.food())?;
    let oracle_length = inst.path_length(&oracle);
    let instance_json = crate::export::to_json_pretty(&inst.to_file())?;
    let trace = inst.run_colony(iterations, scenario.seed)?;
    let quality = separation_quality(&trace)?;
    let mut series: Vec<Series> = ["best_length", "running_best", "mean_length", "modal_mass", "support", "total_pheromone"]
        .iter()
        .map(|n| Series::new(*n))
        .collect();
    for r in &trace.records {
        let t = r.iteration as f64;
        let vals = [r.best_length, r.running_best, r.mean_length, Some(r.modal_mass), Some(r.support), Some(r.total_pheromone)];
        for (s, v) in series.iter_mut().zip(vals) {
            if let Some(v) = v {
                s.push(t, v);
            }
        }
    }
    let modal = trace.final_modal_path().map(<[_]>::to_vec);
    let summary = AcoSummary {
        vertices: g.vertex_count(),
        arcs: g.arc_count(),
        iterations,
        best_path: trace.best_path.as_deref().map(names),
        best_length: trace.best_path.as_deref().map(|p| inst.path_length(p)),
        modal_path: modal.as_deref().map(names),
        modal_mass: trace.records.last().map_or(0.0, |r| r.modal_mass),
        oracle_path: names(&oracle),
        oracle_length,
        matches_oracle: modal.as_deref() == Some(oracle.as_slice()),
        support_nonincreasing: quality.support_nonincreasing,
    };
    let artifacts = vec![("trace.csv".to_string(), trace.to_csv()?), ("instance.json".to_string(), instance_json)];
    Ok(wrap(scenario, Outcome::Aco(summary), series, artifacts))
}

fn run_market(scenario: &Scenario) -> Result<RunOutput> {
    let market = scenario.market()?;
    let tat = scenario.market.as_ref().map(|m| m.tatonnement).unwrap_or_default();
    let solved = tatonnement(&market, &tat)?;
    let initial = market.report(&solved.fixed_point)?;
    let prop = tat.propagation();
    let run = run_coupled(market.network(), &solved.fixed_point, &prop, &scenario.pattern_config(), &scenario.coupled)?;
    let mut series: Vec<Series> = Vec::new();
    let mut push = |name: String, t: f64, v: f64| match series.iter_mut().find(|s| s.name == name) {
        Some(s) => s.push(t, v),
        None => {
            let mut s = Series::new(name);
            s.push(t, v);
            series.push(s);
        }
    };
    // Rows are per aggregate, so market figures describe solved states.
    let mut solved_run = run.clone();
    solved_run.signals = run.aggregates.clone();
    for (t, niche, price, volume, count) in coupled_rows(&market, &solved_run)? {
        let t = t as f64 * scenario.pattern.step;
        push(format!("price:{niche}"), t, price);
        push(format!("volume:{niche}"), t, volume);
        push(format!("count:{niche}"), t, count);
    }
    let mut separation = Series::new("separation");
    for &(t, d) in &run.report.distances {
        separation.push(t, d);
    }
    series.push(separation);
    let mut end = market.clone();
    let counts: Vec<f64> = market.niches().iter().map(|v| run.states.last().expect("initial")[v.0][0]).collect();
    end.set_counts(&counts)?;
    let summary = MarketSummary {
        tatonnement: (&solved).into(),
        initial,
        steps: scenario.coupled.steps,
        separated: run.report.separated(),
        niches: end.report(run.aggregates.last().expect("initial"))?,
    };
    Ok(wrap(scenario, Outcome::Market(summary), series, Vec::new()))
}

/// Feedback verdict for one candidate walk, without the sampled pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkSummary {
    pub arcs: Vec<String>,
    pub vertices: Vec<String>,
    pub is_feedback_loop: bool,
    pub worst_slack: f64,
    pub failing_agents: Vec<String>,
    pub samples_used: usize,
    pub samples_skipped: usize,
}

impl WalkSummary {
    fn new(net: &Network, report: &FeedbackReport) -> Self {
        let g = net.graph();
        WalkSummary {
            arcs: report.walk.arcs.iter().map(|&e| g.arc_label(e)).collect(),
            vertices: report.walk.vertices.iter().map(|&v| g.name(v).to_string()).collect(),
            is_feedback_loop: report.is_feedback_loop,
            worst_slack: report.worst_slack(),
            failing_agents: report.failing_agents().into_iter().map(str::to_string).collect(),
            samples_used: report.samples_used,
            samples_skipped: report.samples_skipped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectOutput {
    pub seed: u64,
    pub max_size: usize,
    pub walks: Vec<WalkSummary>,
}

/// Every candidate walk up to `max_size` arcs, checked at the solved aggregate.
pub fn detect(scenario: &Scenario, max_size: usize) -> Result<DetectOutput> {
    let (net, z, walks) = match scenario.kind {
        ScenarioKind::Generic => {
            let net = scenario.network()?;
            let prop = PropagationConfig { mode: Mode::Synchronous, ..scenario.propagation_config() };
            let z = solve_aggregate(&net, &net.zero_signals(), &prop)?.fixed_point;
            let walks = enumerate_candidate_walks(net.graph(), max_size);
            (net, z, walks)
        }
        ScenarioKind::Market => {
            let market = scenario.market()?;
            let tat = scenario.market.as_ref().map(|m| m.tatonnement).unwrap_or_default();
            let z = tatonnement(&market, &tat)?.fixed_point;
            let net = market.network().clone();
            let walks = enumerate_network_walks(&net, max_size);
            (net, z, walks)
        }
        other => return Err(Error::domain(format!("detect needs a generic or market scenario, got {}", other.name()))),
    };
    if walks.is_empty() {
        return Ok(DetectOutput { seed: scenario.seed, max_size, walks: Vec::new() });
    }
    if !net.space().is_ordered() {
        return Err(Error::UnorderedSpace(net.space().name().to_string()));
    }
    let cfg = scenario.feedback_config();
    let walks = walks
        .iter()
        .map(|w| check_feedback_loop(&net, w, &z, &cfg).map(|r| WalkSummary::new(&net, &r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectOutput { seed: scenario.seed, max_size, walks })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileOutput {
    pub seed: u64,
    pub starts: usize,
    pub horizon: f64,
    pub aggregate: SolveInfo,
    pub profile: ConvergenceProfile,
}

/// Convergence profile of a generic scenario from `starts` perturbed starts.
pub fn profile(scenario: &Scenario, starts: usize, horizon: f64, radius: f64) -> Result<ProfileOutput> {
    if scenario.kind != ScenarioKind::Generic {
        return Err(Error::domain(format!("profile needs a generic scenario, got {}", scenario.kind.name())));
    }
    if starts == 0 || !(radius > 0.0) || !(horizon > 0.0) {
        return Err(Error::domain("profile needs starts > 0, radius > 0 and horizon > 0"));
    }
    let net = scenario.network()?;
    let prop = scenario.propagation_config();
    let solved = solve_aggregate(&net, &net.zero_signals(), &PropagationConfig { mode: Mode::Synchronous, ..prop.clone() })?;
    let z = &solved.fixed_point;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let space = net.space();
    let x0: Vec<SignalVector> = (0..starts)
        .map(|_| SignalVector::from_pairs(z.iter().map(|(e, s)| (e, space.perturb(s, radius, &mut rng)))))
        .collect::<Result<_>>()?;
    let samples = horizon.ceil() as usize;
    let profile = profile_convergence(&net, z, &x0, &prop, horizon, samples)?;
    Ok(ProfileOutput { seed: scenario.seed, starts, horizon, aggregate: (&solved).into(), profile })
}
