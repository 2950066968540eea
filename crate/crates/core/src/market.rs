//! A toy market economy as a two-way network. Resources are entries,
//! consumers are exits, and each niche is an agent whose state is its
//! producer count.
//!
//! Forward arcs carry `(volume, asking price)` from seller to buyer. Backward
//! arcs carry `(echoed price, demanded volume)` from buyer to seller; the echo
//! lets a seller adjust from its previous price while staying a function of
//! its inputs. Prices follow a multiplicative tâtonnement on excess demand
//! relative to capacity, floored at unit cost plus input cost.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentModel, Network};
use crate::error::{Error, Result};
use crate::feedback::{check_feedback_loop, ClosedWalk, FeedbackConfig, FeedbackReport};
use crate::graph::{ArcId, DirectedGraph, EnvRole, VertexId};
use crate::pattern::{CoupledRun, PatternConfig};
use crate::propagation::{solve_aggregate, step_synchronous, AggregateResult, PropagationConfig};
use crate::signal::{rho_set, Signal, SignalSpace, SignalVector};
use crate::twoway::{TwoWayAgent, TwoWayNetwork};

/// Unit cost `c₀ / (1 + s V)`.
pub fn unit_cost(c0: f64, scale: f64, volume: f64) -> f64 {
    c0 / (1.0 + scale * volume.max(0.0))
}

/// Linear demand `max(0, a - b p)`.
pub fn demand(a: f64, b: f64, price: f64) -> f64 {
    (a - b * price).max(0.0)
}

/// Excess demand relative to capacity, in `[-1, 1]`; `0/0` counts as balanced.
pub fn excess(demand: f64, capacity: f64) -> f64 {
    let top = demand.max(capacity);
    if top <= 0.0 {
        0.0
    } else {
        (demand - capacity) / top
    }
}

fn goods(volume: f64, price: f64) -> Signal {
    Signal::Real(vec![volume, price])
}

fn pair_of(s: &Signal) -> (f64, f64) {
    let r = s.reals();
    (r.first().copied().unwrap_or(0.0), r.get(1).copied().unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceSpec {
    pub name: String,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NicheSpec {
    pub name: String,
    /// Unit cost at zero volume.
    pub c0: f64,
    /// Scale coefficient `s`.
    #[serde(default)]
    pub scale: f64,
    /// Capacity per producer.
    pub kappa: f64,
    /// Initial producer count.
    pub count: f64,
    /// Upper bound on the producer count.
    #[serde(default = "default_max_count")]
    pub max_count: f64,
    /// Units of each input good per unit of output.
    #[serde(default)]
    pub recipe: BTreeMap<String, f64>,
}

fn default_max_count() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    pub good: String,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerSpec {
    pub name: String,
    pub demand: Vec<DemandSpec>,
}

/// Market scenario: resources, niches with recipes, and consumers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    /// Price adjustment gain per round.
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub resources: Vec<ResourceSpec>,
    pub niches: Vec<NicheSpec>,
    pub consumers: Vec<ConsumerSpec>,
}

fn default_theta() -> f64 {
    0.25
}

impl MarketSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn build(&self) -> Result<Market> {
        Market::new(self.clone())
    }

    /// One niche selling to one consumer, fed by one free resource.
    pub fn single(c0: f64, scale: f64, kappa: f64, count: f64, a: f64, b: f64) -> Self {
        MarketSpec {
            theta: default_theta(),
            resources: vec![ResourceSpec { name: "raw".into(), price: 0.0 }],
            niches: vec![NicheSpec {
                name: "good".into(),
                c0,
                scale,
                kappa,
                count,
                max_count: default_max_count(),
                recipe: BTreeMap::from([("raw".into(), 1.0)]),
            }],
            consumers: vec![ConsumerSpec { name: "buyers".into(), demand: vec![DemandSpec { good: "good".into(), a, b }] }],
        }
    }

    /// `raw → upstream → downstream → buyers`, unit recipes.
    pub fn chain(scale: f64, counts: [f64; 2], max_count: f64, a: f64, b: f64) -> Self {
        let niche = |name: &str, input: &str, count: f64| NicheSpec {
            name: name.into(),
            c0: 2.0,
            scale,
            kappa: 1.0,
            count,
            max_count,
            recipe: BTreeMap::from([(input.into(), 1.0)]),
        };
        MarketSpec {
            theta: default_theta(),
            resources: vec![ResourceSpec { name: "raw".into(), price: 0.5 }],
            niches: vec![niche("upstream", "raw", counts[0]), niche("downstream", "upstream", counts[1])],
            consumers: vec![ConsumerSpec {
                name: "buyers".into(),
                demand: vec![DemandSpec { good: "downstream".into(), a, b }],
            }],
        }
    }
}

/// Parameters `[producer count]`.
#[derive(Debug, Clone)]
struct NicheModel {
    c0: f64,
    scale: f64,
    kappa: f64,
    theta: f64,
    max_count: f64,
    recipe: Vec<f64>,
    buyers: usize,
}

/// Quantities a niche derives from its inputs.
struct Plan {
    demand: f64,
    capacity: f64,
    price: f64,
    shares: Vec<f64>,
}

impl NicheModel {
    fn plan(&self, count: f64, inputs: &[Signal]) -> std::result::Result<Plan, String> {
        let k = self.recipe.len();
        if inputs.len() != k + self.buyers {
            return Err(format!("expected {} inputs, got {}", k + self.buyers, inputs.len()));
        }
        let (supplies, orders) = inputs.split_at(k);
        let orders: Vec<(f64, f64)> = orders.iter().map(pair_of).collect();
        let demand: f64 = orders.iter().map(|o| o.1.max(0.0)).sum();
        let capacity = self.kappa * count.max(0.0);
        let mut available = f64::INFINITY;
        let mut input_cost = 0.0;
        for (s, &r) in supplies.iter().zip(&self.recipe) {
            let (vol, price) = pair_of(s);
            available = available.min(vol.max(0.0) / r);
            input_cost += r * price;
        }
        let shipped = demand.min(capacity).min(available);
        let echo = if orders.is_empty() { 0.0 } else { orders.iter().map(|o| o.0).sum::<f64>() / orders.len() as f64 };
        let floor = unit_cost(self.c0, self.scale, shipped) + input_cost;
        let price = floor.max(echo * (1.0 + self.theta * excess(demand, capacity)));
        let shares = orders
            .iter()
            .map(|o| if demand > 0.0 { shipped * o.1.max(0.0) / demand } else { 0.0 })
            .collect();
        Ok(Plan { demand, capacity, price, shares })
    }

    /// Profit per producer; at zero producers, the profit a marginal producer would make.
    fn profit(&self, count: f64, inputs: &[Signal], outputs: &[Signal]) -> f64 {
        let k = self.recipe.len();
        if inputs.len() != k + self.buyers || outputs.len() != self.buyers + k {
            return f64::NEG_INFINITY;
        }
        let orders: f64 = inputs[k..].iter().map(|o| pair_of(o).1.max(0.0)).sum();
        let served = orders.min(self.kappa * count.max(0.0));
        let cost = unit_cost(self.c0, self.scale, served);
        let (sales, price) = outputs[..self.buyers]
            .iter()
            .map(pair_of)
            .fold((0.0, 0.0), |(v, _), (vol, p)| (v + vol, p));
        let bought: f64 = outputs[self.buyers..].iter().map(|y| {
            let (echo, qty) = pair_of(y);
            echo * qty
        }).sum();
        if count > 0.0 {
            (sales * price - sales * cost - bought) / count
        } else {
            // A marginal entrant sells at the price buyers last saw.
            let seen = inputs[k..].iter().map(|o| pair_of(o).0).fold(0.0, f64::max);
            let unit_inputs: f64 = outputs[self.buyers..].iter().zip(&self.recipe).map(|(y, r)| r * pair_of(y).0).sum();
            self.kappa * (seen - cost - unit_inputs)
        }
    }
}

impl AgentModel for NicheModel {
    fn name(&self) -> &str {
        "niche"
    }

    fn evaluate(&self, params: &[f64], inputs: &[Signal]) -> std::result::Result<Vec<Signal>, String> {
        let plan = self.plan(params[0], inputs)?;
        let k = self.recipe.len();
        let mut out: Vec<Signal> = plan.shares.iter().map(|&v| goods(v, plan.price)).collect();
        let wanted = plan.demand.min(plan.capacity);
        for (s, &r) in inputs[..k].iter().zip(&self.recipe) {
            out.push(goods(pair_of(s).1, r * wanted));
        }
        Ok(out)
    }

    /// Profit of the niche's sales against cost at the served demand: sales
    /// and purchases come from outputs, served demand from inputs.
    fn utility(&self, params: &[f64], inputs: &[Signal], outputs: &[Signal]) -> f64 {
        self.profit(params[0], inputs, outputs)
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(0.0, self.max_count)]
    }

    fn state_distance(&self, f: &[f64], g: &[f64]) -> Option<f64> {
        Some((f[0] - g[0]).abs())
    }

    /// Full budget in the direction of the per-producer profit sign.
    fn pattern_move(&self, params: &[f64], inputs: &[Signal], outputs: &[Signal], budget: f64) -> Option<Vec<f64>> {
        let q = self.profit(params[0], inputs, outputs);
        let scale: f64 = outputs.iter().map(|o| pair_of(o).0.abs() * pair_of(o).1.abs()).sum::<f64>() + 1.0;
        // Rounding in revenue minus cost is not a profit signal.
        let sign = if q.abs() <= 1e-9 * scale { 0.0 } else { q.signum() };
        Some(vec![(params[0] + budget * sign).clamp(0.0, self.max_count)])
    }
}

#[derive(Debug, Clone)]
struct ResourceModel {
    price: f64,
    buyers: usize,
}

impl AgentModel for ResourceModel {
    fn name(&self) -> &str {
        "resource"
    }

    fn evaluate(&self, _params: &[f64], inputs: &[Signal]) -> std::result::Result<Vec<Signal>, String> {
        if inputs.len() != self.buyers {
            return Err(format!("expected {} inputs, got {}", self.buyers, inputs.len()));
        }
        Ok(inputs.iter().map(|o| goods(pair_of(o).1.max(0.0), self.price)).collect())
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
struct ConsumerModel {
    curves: Vec<(f64, f64)>,
}

impl AgentModel for ConsumerModel {
    fn name(&self) -> &str {
        "consumer"
    }

    fn evaluate(&self, _params: &[f64], inputs: &[Signal]) -> std::result::Result<Vec<Signal>, String> {
        if inputs.len() != self.curves.len() {
            return Err(format!("expected {} inputs, got {}", self.curves.len(), inputs.len()));
        }
        Ok(inputs
            .iter()
            .zip(&self.curves)
            .map(|(x, &(a, b))| {
                let p = pair_of(x).1;
                goods(p, demand(a, b, p))
            })
            .collect())
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        Vec::new()
    }
}

/// Per-niche figures at an aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NicheState {
    pub name: String,
    pub count: f64,
    pub capacity: f64,
    pub price: f64,
    pub volume: f64,
    pub demand: f64,
    pub unit_cost: f64,
    pub profit_per_producer: f64,
}

#[derive(Debug, Clone)]
pub struct Market {
    spec: MarketSpec,
    net: TwoWayNetwork,
    niches: Vec<VertexId>,
}

fn check(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::domain(msg))
    }
}

impl Market {
    pub fn new(spec: MarketSpec) -> Result<Self> {
        check(spec.theta > 0.0 && spec.theta <= 1.0, "theta must lie in (0, 1]")?;
        let mut names: Vec<String> = Vec::new();
        names.extend(spec.resources.iter().map(|r| r.name.clone()));
        names.extend(spec.niches.iter().map(|n| n.name.clone()));
        names.extend(spec.consumers.iter().map(|c| c.name.clone()));
        let resources: BTreeSet<&str> = spec.resources.iter().map(|r| r.name.as_str()).collect();
        let niches: BTreeSet<&str> = spec.niches.iter().map(|n| n.name.as_str()).collect();
        for r in &spec.resources {
            check(r.price >= 0.0 && r.price.is_finite(), format!("resource `{}` needs a nonnegative price", r.name))?;
        }
        let mut arcs: Vec<(String, String)> = Vec::new();
        for n in &spec.niches {
            check(n.c0 > 0.0 && n.c0.is_finite(), format!("niche `{}` needs c0 > 0", n.name))?;
            check(n.scale >= 0.0 && n.scale.is_finite(), format!("niche `{}` needs scale >= 0", n.name))?;
            check(n.kappa >= 0.0 && n.kappa.is_finite(), format!("niche `{}` needs kappa >= 0", n.name))?;
            check(
                n.count >= 0.0 && n.count <= n.max_count && n.max_count.is_finite(),
                format!("niche `{}` needs 0 <= count <= max_count", n.name),
            )?;
            for (input, &r) in &n.recipe {
                check(resources.contains(input.as_str()) || niches.contains(input.as_str()), format!("niche `{}` uses unknown good `{input}`", n.name))?;
                check(r > 0.0 && r.is_finite(), format!("niche `{}` needs positive recipe amounts", n.name))?;
                arcs.push((input.clone(), n.name.clone()));
            }
        }
        for c in &spec.consumers {
            for d in &c.demand {
                check(niches.contains(d.good.as_str()), format!("consumer `{}` buys unknown niche `{}`", c.name, d.good))?;
                check(d.a >= 0.0 && d.b > 0.0 && d.a.is_finite() && d.b.is_finite(), format!("consumer `{}` needs a >= 0 and b > 0", c.name))?;
                arcs.push((d.good.clone(), c.name.clone()));
            }
        }
        let refs: Vec<(&str, &str)> = arcs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let mut g = DirectedGraph::new(names.iter().map(String::as_str), &refs)?;
        for r in &spec.resources {
            g.set_environment(g.vertex(&r.name)?, Some(EnvRole::Entry));
        }
        for c in &spec.consumers {
            g.set_environment(g.vertex(&c.name)?, Some(EnvRole::Exit));
        }
        let reach = |start: &[VertexId], forward: bool| {
            let mut seen: BTreeSet<VertexId> = start.iter().copied().collect();
            let mut stack = start.to_vec();
            while let Some(u) = stack.pop() {
                let next: Vec<VertexId> = if forward {
                    g.outgoing(u).iter().map(|&e| g.head(e)).collect()
                } else {
                    g.incoming(u).iter().map(|&e| g.tail(e)).collect()
                };
                for w in next {
                    if seen.insert(w) {
                        stack.push(w);
                    }
                }
            }
            seen
        };
        let from_entry = reach(&g.vertices_with_role(EnvRole::Entry), true);
        let to_exit = reach(&g.vertices_with_role(EnvRole::Exit), false);
        let mut agents = Vec::new();
        let mut niche_ids = Vec::new();
        for r in &spec.resources {
            let v = g.vertex(&r.name)?;
            agents.push(TwoWayAgent {
                vertex: v,
                model: Arc::new(ResourceModel { price: r.price, buyers: g.outgoing(v).len() }),
                params: vec![],
            });
        }
        for n in &spec.niches {
            let v = g.vertex(&n.name)?;
            if !from_entry.contains(&v) || !to_exit.contains(&v) {
                return Err(Error::InvalidGraph(format!("niche `{}` is not on a path from a resource to a consumer", n.name)));
            }
            // Incoming arcs follow recipe order, which is the arc order built above.
            let recipe = g.incoming(v).iter().map(|&e| n.recipe[g.name(g.tail(e))]).collect();
            agents.push(TwoWayAgent {
                vertex: v,
                model: Arc::new(NicheModel {
                    c0: n.c0,
                    scale: n.scale,
                    kappa: n.kappa,
                    theta: spec.theta,
                    max_count: n.max_count,
                    recipe,
                    buyers: g.outgoing(v).len(),
                }),
                params: vec![n.count],
            });
            niche_ids.push(v);
        }
        for c in &spec.consumers {
            let v = g.vertex(&c.name)?;
            let curves = g
                .incoming(v)
                .iter()
                .map(|&e| {
                    let seller = g.name(g.tail(e));
                    let d = c.demand.iter().find(|d| d.good == seller).expect("arc built from demand");
                    (d.a, d.b)
                })
                .collect();
            agents.push(TwoWayAgent { vertex: v, model: Arc::new(ConsumerModel { curves }), params: vec![] });
        }
        let space = SignalSpace::Real { width: 2 };
        let net = TwoWayNetwork::new(g, space.clone(), space, agents)?;
        Ok(Market { spec, net, niches: niche_ids })
    }

    pub fn spec(&self) -> &MarketSpec {
        &self.spec
    }

    pub fn two_way(&self) -> &TwoWayNetwork {
        &self.net
    }

    pub fn network(&self) -> &Network {
        self.net.lifted()
    }

    pub fn niches(&self) -> &[VertexId] {
        &self.niches
    }

    pub fn counts(&self) -> Vec<f64> {
        self.niches.iter().map(|&v| self.network().agent(v).params[0]).collect()
    }

    pub fn set_counts(&mut self, counts: &[f64]) -> Result<()> {
        check(counts.len() == self.niches.len(), "one count per niche")?;
        let mut params = self.network().params();
        for (&v, &n) in self.niches.iter().zip(counts) {
            params[v.0] = vec![n];
        }
        self.net.lifted_mut().set_params(params)
    }

    fn model(&self, v: VertexId) -> &NicheSpec {
        let name = self.network().graph().name(v);
        self.spec.niches.iter().find(|n| n.name == name).expect("niche vertex")
    }

    /// Figures for every niche at signals `z`.
    pub fn report(&self, z: &SignalVector) -> Result<Vec<NicheState>> {
        let net = self.network();
        self.niches
            .iter()
            .map(|&v| {
                let spec = self.model(v);
                let agent = net.agent(v);
                let inputs = net.inputs(v, z)?;
                let outputs = net.outputs(v, z)?;
                let count = agent.params[0];
                let k = net.graph().incoming(v).len();
                let demand: f64 = inputs[k..].iter().map(|o| pair_of(o).1.max(0.0)).sum();
                let buyers = net.graph().outgoing(v).len();
                let volume: f64 = outputs[..buyers].iter().map(|o| pair_of(o).0).sum();
                let price = outputs.first().map_or(0.0, |o| pair_of(o).1);
                Ok(NicheState {
                    name: spec.name.clone(),
                    count,
                    capacity: spec.kappa * count,
                    price,
                    volume,
                    demand,
                    unit_cost: unit_cost(spec.c0, spec.scale, volume),
                    profit_per_producer: agent.model.utility(&agent.params, &inputs, &outputs),
                })
            })
            .collect()
    }

    /// Signals `z` lowered to `(arc, volume, price, echo, demand)` rows.
    pub fn arc_rows(&self, z: &SignalVector) -> Result<Vec<(ArcId, f64, f64, f64, f64)>> {
        let (x, y) = self.net.lower(z)?;
        Ok(x.iter()
            .zip(y.values())
            .map(|((e, f), b)| {
                let (vol, price) = pair_of(f);
                let (echo, dem) = pair_of(b);
                (e, vol, price, echo, dem)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TatonnementConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub patience: usize,
}

impl Default for TatonnementConfig {
    fn default() -> Self {
        TatonnementConfig { tolerance: 1e-10, max_iterations: 100_000, patience: 50 }
    }
}

impl TatonnementConfig {
    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            patience: self.patience,
            ..PropagationConfig::synchronous(self.tolerance)
        }
    }
}

/// Synchronous price and volume rounds until the residual is within tolerance.
pub fn tatonnement(market: &Market, config: &TatonnementConfig) -> Result<AggregateResult> {
    let net = market.network();
    solve_aggregate(net, &net.zero_signals(), &config.propagation())
}

/// Every synchronous round from `x0`, for `rounds` rounds.
pub fn tatonnement_trace(market: &Market, x0: &SignalVector, rounds: usize) -> Result<Vec<SignalVector>> {
    let net = market.network();
    let mut out = vec![x0.clone()];
    for _ in 0..rounds {
        let next = step_synchronous(net, out.last().expect("nonempty"))?;
        out.push(next);
    }
    Ok(out)
}

/// Moves each niche's count by `L δ` toward positive per-producer profit.
pub fn niche_pattern_step(market: &Market, config: &PatternConfig, z: &SignalVector) -> Result<Vec<f64>> {
    config.validate()?;
    let net = market.network();
    let budget = config.budget();
    market
        .niches
        .iter()
        .map(|&v| {
            let agent = net.agent(v);
            let inputs = net.inputs(v, z)?;
            let outputs = net.evaluate(v, z)?;
            Ok(agent.model.pattern_move(&agent.params, &inputs, &outputs, budget).expect("niches move by profit")[0])
        })
        .collect()
}

/// The reinforcement test along a resource-to-consumer chain and its mirror.
pub fn detect_scale_feedback(market: &Market, chain: &[ArcId], z: &SignalVector, config: &FeedbackConfig) -> Result<FeedbackReport> {
    let walk = ClosedWalk::in_network(market.network(), chain)?;
    check_feedback_loop(market.network(), &walk, z, config)
}

/// Arcs of the unique path through the named vertices.
pub fn chain_arcs(market: &Market, names: &[&str]) -> Result<Vec<ArcId>> {
    let g = market.network().graph();
    names
        .windows(2)
        .map(|w| {
            let (a, b) = (g.vertex(w[0])?, g.vertex(w[1])?);
            g.find_arc(a, b).ok_or_else(|| Error::domain(format!("no arc {}->{}", w[0], w[1])))
        })
        .collect()
}

/// `(round, niche, price, volume, count)` rows for a coupled run.
pub fn coupled_rows(market: &Market, run: &CoupledRun) -> Result<Vec<(usize, String, f64, f64, f64)>> {
    let mut rows = Vec::new();
    let mut m = market.clone();
    for (t, (state, x)) in run.states.iter().zip(&run.signals).enumerate() {
        m.net.lifted_mut().set_params(state.clone())?;
        for s in m.report(x)? {
            rows.push((t, s.name, s.price, s.volume, s.count));
        }
    }
    Ok(rows)
}

/// Largest change between consecutive rounds, used to read off geometric decay.
pub fn round_changes(market: &Market, trace: &[SignalVector]) -> Result<Vec<f64>> {
    let space = market.network().space();
    trace.windows(2).map(|w| rho_set(space, &w[0], &w[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::{check_pattern, LyapunovConfig};
    use crate::pattern::{run_coupled, CoupledConfig};

    fn solve(m: &Market) -> SignalVector {
        let r = tatonnement(m, &TatonnementConfig::default()).unwrap();
        assert!(r.converged);
        r.fixed_point
    }

    #[test]
    fn single_niche_meets_the_analytic_equilibrium() {
        let m = MarketSpec::single(5.0, 0.0, 1.0, 100.0, 10.0, 1.0).build().unwrap();
        let s = &m.report(&solve(&m)).unwrap()[0];
        assert!((s.price - 5.0).abs() < 1e-6 && (s.volume - 5.0).abs() < 1e-6, "{s:?}");
    }

    #[test]
    fn zero_demand_sells_nothing_at_unit_cost() {
        let m = MarketSpec::single(5.0, 0.3, 1.0, 10.0, 0.0, 1.0).build().unwrap();
        let s = &m.report(&solve(&m)).unwrap()[0];
        assert_eq!(s.volume, 0.0);
        assert!((s.price - unit_cost(5.0, 0.3, 0.0)).abs() < 1e-9);
    }

    #[test]
    fn zero_capacity_drives_price_to_choke() {
        let m = MarketSpec::single(5.0, 0.0, 1.0, 0.0, 10.0, 1.0).build().unwrap();
        let s = &m.report(&solve(&m)).unwrap()[0];
        assert_eq!(s.volume, 0.0);
        assert!(s.price >= 10.0 - 1e-9, "{s:?}");
    }

    #[test]
    fn excess_demand_settles_at_capacity() {
        let m = MarketSpec::single(1.0, 0.0, 1.0, 3.0, 10.0, 1.0).build().unwrap();
        let s = &m.report(&solve(&m)).unwrap()[0];
        assert!((s.volume - 3.0).abs() < 1e-6 && (s.price - 7.0).abs() < 1e-6, "{s:?}");
        assert!(s.volume <= s.capacity + 1e-9);
    }

    #[test]
    fn price_error_decays_geometrically_from_above() {
        let m = MarketSpec::single(5.0, 0.0, 1.0, 100.0, 10.0, 1.0).build().unwrap();
        let z = solve(&m);
        // Start with every posted price at 9.
        let x0 = SignalVector::from_pairs(z.iter().map(|(e, s)| {
            let (f, b) = (s.forward().unwrap().reals().to_vec(), s.backward().unwrap().reals().to_vec());
            (e, Signal::pair(Signal::Real(vec![f[0], 9.0_f64.max(f[1])]), Signal::Real(vec![9.0_f64.max(b[0]), b[1]])))
        }))
        .unwrap();
        let trace = tatonnement_trace(&m, &x0, 60).unwrap();
        let v = m.niches()[0];
        let errs: Vec<f64> = trace
            .iter()
            .map(|x| (pair_of(&m.network().outputs(v, x).unwrap()[0]).1 - 5.0).abs())
            .collect();
        assert!(errs[0] > 1.0);
        for w in errs.windows(3) {
            assert!(w[2] <= 0.9 * w[0] || w[2] == 0.0, "{errs:?}");
        }
        assert_eq!(*errs.last().unwrap(), 0.0);
        let changes = round_changes(&m, &trace).unwrap();
        assert_eq!(*changes.last().unwrap(), 0.0);
    }

    #[test]
    fn chain_conserves_inputs() {
        let m = MarketSpec::chain(0.2, [3.0, 3.0], 10.0, 10.0, 1.0).build().unwrap();
        let z = solve(&m);
        let rows = m.arc_rows(&z).unwrap();
        let arcs = chain_arcs(&m, &["raw", "upstream", "downstream", "buyers"]).unwrap();
        // Each niche buys one unit of input per unit sold downstream.
        let vol = |e: ArcId| rows.iter().find(|r| r.0 == e).unwrap().1;
        assert!((vol(arcs[0]) - vol(arcs[1])).abs() < 1e-9);
        assert!((vol(arcs[1]) - vol(arcs[2])).abs() < 1e-9);
        for s in m.report(&z).unwrap() {
            assert!(s.volume <= s.capacity + 1e-9);
        }
    }

    #[test]
    fn producers_follow_profit() {
        let cfg = PatternConfig { lipschitz: 0.1, step: 1.0, candidates: 1, seed: 0 };
        // Constant cost at the free-entry price: zero profit.
        let flat = MarketSpec::single(5.0, 0.0, 1.0, 100.0, 10.0, 1.0).build().unwrap();
        assert_eq!(niche_pattern_step(&flat, &cfg, &solve(&flat)).unwrap(), vec![100.0]);
        // Scarce capacity: price above cost.
        let scarce = MarketSpec::single(1.0, 0.0, 1.0, 3.0, 10.0, 1.0).build().unwrap();
        let z = solve(&scarce);
        assert!(scarce.report(&z).unwrap()[0].profit_per_producer > 0.0);
        let next = niche_pattern_step(&scarce, &cfg, &z).unwrap();
        assert!((next[0] - 3.1).abs() < 1e-12);
        // Cost above the choke price: losses, and an empty niche stays empty.
        let dead = MarketSpec::single(20.0, 0.0, 1.0, 0.0, 10.0, 1.0).build().unwrap();
        let z = dead.network().zero_signals();
        assert!(dead.report(&z).unwrap()[0].profit_per_producer < 0.0);
        assert_eq!(niche_pattern_step(&dead, &cfg, &z).unwrap(), vec![0.0]);
    }

    #[test]
    fn scale_feedback_verdicts() {
        let cfg = FeedbackConfig { epsilon: 0.05, samples: 48, seed: 1 };
        let names = ["raw", "upstream", "downstream", "buyers"];
        let flat = MarketSpec::chain(0.0, [10.0, 10.0], 10.0, 10.0, 1.0).build().unwrap();
        let r = detect_scale_feedback(&flat, &chain_arcs(&flat, &names).unwrap(), &solve(&flat), &cfg).unwrap();
        assert!(r.is_feedback_loop);
        assert!(r.agents.iter().all(|a| a.worst_slack == 0.0), "{r:?}");

        let scaled = MarketSpec::chain(0.3, [10.0, 10.0], 10.0, 10.0, 1.0).build().unwrap();
        let r = detect_scale_feedback(&scaled, &chain_arcs(&scaled, &names).unwrap(), &solve(&scaled), &cfg).unwrap();
        assert!(r.is_feedback_loop);
        assert!(r.agents.iter().filter(|a| a.name.ends_with("stream")).all(|a| a.worst_slack > 0.0), "{r:?}");
    }

    #[test]
    fn capacity_bound_makes_the_loop_a_pattern() {
        let names = ["raw", "upstream", "downstream", "buyers"];
        let mut spec = MarketSpec::chain(0.3, [2.0, 2.0], 3.0, 10.0, 1.0);
        // Slack upstream capacity keeps its price at cost instead of on the kink.
        spec.niches[0].kappa = 2.0;
        let m = spec.build().unwrap();
        let prop = TatonnementConfig::default().propagation();
        let pattern = PatternConfig { lipschitz: 0.05, step: 1.0, candidates: 1, seed: 0 };
        let z0 = solve(&m);
        let run = run_coupled(m.network(), &z0, &prop, &pattern, &CoupledConfig { steps: 60, epsilon: 0.1, delta_max: None }).unwrap();
        let last = run.states.last().unwrap();
        let counts: Vec<f64> = m.niches().iter().map(|v| last[v.0][0]).collect();
        assert_eq!(counts, vec![2.0, 3.0]);
        let walk = ClosedWalk::in_network(m.network(), &chain_arcs(&m, &names).unwrap()).unwrap();
        let verdict = check_pattern(&walk, &run, &prop, &pattern, &LyapunovConfig { window: 30, ..Default::default() }).unwrap();
        assert!(verdict.stable, "{verdict:?}");
        let mut pinned = m.clone();
        pinned.set_counts(&counts).unwrap();
        let z = run.aggregates.last().unwrap();
        let report = detect_scale_feedback(&pinned, &walk.arcs, z, &FeedbackConfig { epsilon: 0.05, samples: 32, seed: 2 }).unwrap();
        assert!(report.is_feedback_loop);
        let down = &pinned.report(z).unwrap()[1];
        assert!((down.volume - down.capacity).abs() < 1e-6 && down.profit_per_producer > 0.0, "{down:?}");
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let spec = MarketSpec::chain(0.1, [2.0, 2.0], 5.0, 10.0, 1.0);
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(MarketSpec::from_toml_str(&text).unwrap(), spec);
        let mut bad = spec.clone();
        bad.niches[0].recipe.insert("nowhere".into(), 1.0);
        assert!(bad.build().is_err());
        let mut orphan = spec.clone();
        orphan.niches.push(NicheSpec {
            name: "orphan".into(),
            c0: 1.0,
            scale: 0.0,
            kappa: 1.0,
            count: 1.0,
            max_count: 2.0,
            recipe: BTreeMap::from([("raw".into(), 1.0)]),
        });
        assert!(matches!(orphan.build(), Err(Error::InvalidGraph(_))));
    }
}
