//! Slow dynamics: greedy utility ascent under a Lipschitz speed budget, state
//! metrics, the safe step size, and the coupled separation monitor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::Network;
use crate::error::{Error, Result};
use crate::graph::VertexId;
use crate::propagation::{solve_aggregate, AggregateResult, ConvergenceProfile, Mode, PropagationConfig, Propagator};
use crate::signal::{rho_set, Signal, SignalVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternConfig {
    /// Maximum state speed `L`, in units of `d_v` per unit time.
    pub lipschitz: f64,
    /// Time increment `δ` per pattern step.
    pub step: f64,
    /// Sampled candidates per greedy step, excluding the incumbent.
    pub candidates: usize,
    pub seed: u64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig { lipschitz: 0.1, step: 1.0, candidates: 8, seed: 0 }
    }
}

impl PatternConfig {
    pub fn budget(&self) -> f64 {
        self.lipschitz * self.step
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz >= 0.0) {
            return Err(Error::domain("lipschitz bound must be nonnegative"));
        }
        if !(self.step > 0.0) {
            return Err(Error::domain("pattern step must be positive"));
        }
        if self.candidates == 0 {
            return Err(Error::domain("candidate count must be at least 1"));
        }
        Ok(())
    }
}

/// `max` over probe inputs of `ρ_Fv(f(x), g(x))`, a lower bound on `d_v`.
pub fn state_distance(net: &Network, v: VertexId, f: &[f64], g: &[f64], probes: &[Vec<Signal>]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::domain("state distance needs at least one probe input"));
    }
    let mut worst: f64 = 0.0;
    for x in probes {
        let a = net.evaluate_with(v, f, x)?;
        let b = net.evaluate_with(v, g, x)?;
        worst = worst.max(net.output_distance(v, &a, &b));
    }
    Ok(worst)
}

/// `d_v(f, g)`: the model's closed form when it has one, else the probe supremum.
pub fn agent_distance(net: &Network, v: VertexId, f: &[f64], g: &[f64]) -> Result<f64> {
    if f == g {
        return Ok(0.0);
    }
    let model = &net.agent(v).model;
    match model.state_distance(f, g) {
        Some(d) => Ok(d),
        None => state_distance(net, v, f, g, &model.probes()),
    }
}

/// `d_V(f_V, g_V) = (1/|V|) Σ_v d_v(f_v, g_v)`; frozen agents contribute 0.
pub fn network_distance(net: &Network, f: &[Vec<f64>], g: &[Vec<f64>]) -> Result<f64> {
    let n = net.vertex_count();
    if f.len() != n || g.len() != n {
        return Err(Error::domain("state lists do not match the vertex set"));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for v in net.graph().vertices() {
        if net.agent(v).frozen {
            continue;
        }
        total += agent_distance(net, v, &f[v.0], &g[v.0])?;
    }
    Ok(total / n as f64)
}

/// `q_v(z_Tv, f'(z_Tv))` for candidate parameters `params`.
pub fn utility_of(net: &Network, v: VertexId, params: &[f64], inputs: &[Signal]) -> Result<f64> {
    let out = net.evaluate_with(v, params, inputs)?;
    Ok(net.agent(v).model.utility(params, inputs, &out))
}

fn clamp_to_box(p: &mut [f64], bounds: &[(f64, f64)]) {
    for (x, &(lo, hi)) in p.iter_mut().zip(bounds) {
        *x = x.clamp(lo, hi);
    }
}

/// Largest `t` along `dir` (capped by the parameter box) with `d_v ≤ budget`.
fn ray_extent(net: &Network, v: VertexId, f: &[f64], dir: &[f64], budget: f64) -> Result<f64> {
    let bounds = net.agent(v).model.bounds();
    let mut t_box = f64::INFINITY;
    for ((x, d), (lo, hi)) in f.iter().zip(dir).zip(&bounds) {
        if *d > 0.0 {
            t_box = t_box.min((hi - x) / d);
        } else if *d < 0.0 {
            t_box = t_box.min((lo - x) / d);
        }
    }
    let t_box = t_box.max(0.0);
    let at = |t: f64| -> Vec<f64> {
        let mut p: Vec<f64> = f.iter().zip(dir).map(|(x, d)| x + t * d).collect();
        clamp_to_box(&mut p, &bounds);
        p
    };
    let feasible = |t: f64| -> Result<bool> { Ok(agent_distance(net, v, f, &at(t))? <= budget) };
    if t_box.is_finite() && feasible(t_box)? {
        return Ok(t_box);
    }
    // Bracket the boundary, then bisect keeping the feasible end.
    let mut lo = 0.0;
    let mut hi = budget.min(t_box);
    let mut found_hi = false;
    for _ in 0..64 {
        if feasible(hi)? {
            lo = hi;
            let next = (hi * 2.0).min(t_box);
            if next == hi {
                return Ok(hi);
            }
            hi = next;
        } else {
            found_hi = true;
            break;
        }
    }
    if !found_hi {
        return Ok(lo);
    }
    if lo == 0.0 {
        for _ in 0..64 {
            let mid = hi / 2.0;
            if feasible(mid)? {
                lo = mid;
                break;
            }
            hi = mid;
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Candidate states in the `d_v`-ball of radius `budget`, incumbent first.
///
/// Directions are uniform on the sphere and used in antithetic pairs; each
/// pair yields the two boundary points, then the next pair two points drawn
/// uniformly inside the ball along fresh directions.
pub fn candidate_plan<R: Rng + ?Sized>(
    net: &Network,
    v: VertexId,
    f: &[f64],
    budget: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![f.to_vec()];
    let dim = f.len();
    if budget <= 0.0 || dim == 0 {
        return Ok(out);
    }
    let bounds = net.agent(v).model.bounds();
    let mut i = 0;
    // Rays along which d_v is not monotone can yield infeasible points; cap the draws.
    while out.len() < count + 1 && i < 4 * count + 8 {
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm == 0.0 {
            i += 1;
            continue;
        }
        dir.iter_mut().for_each(|d| *d /= norm);
        let interior = (i / 2) % 2 == 1;
        for sign in [1.0, -1.0] {
            if out.len() > count {
                break;
            }
            let d: Vec<f64> = dir.iter().map(|x| sign * x).collect();
            let t = ray_extent(net, v, f, &d, budget)?;
            let scale = if interior { rng.random::<f64>().powf(1.0 / dim as f64) } else { 1.0 };
            let mut p: Vec<f64> = f.iter().zip(&d).map(|(x, d)| x + scale * t * d).collect();
            clamp_to_box(&mut p, &bounds);
            if agent_distance(net, v, f, &p)? <= budget {
                out.push(p);
            }
            i += 1;
        }
    }
    Ok(out)
}

/// `ψ_v^δ(f_v)`: the best candidate in the budget ball against inputs `z_Tv`.
///
/// Ties go to the lowest candidate index, so the incumbent wins any tie.
pub fn greedy_step<R: Rng + ?Sized>(
    net: &Network,
    v: VertexId,
    f: &[f64],
    inputs: &[Signal],
    budget: f64,
    candidates: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(budget > 0.0) {
        return Ok(f.to_vec());
    }
    let agent = net.agent(v);
    let outputs = net.evaluate_with(v, f, inputs)?;
    if let Some(p) = agent.model.pattern_move(f, inputs, &outputs, budget) {
        return Ok(p);
    }
    let mut plan = candidate_plan(net, v, f, budget, candidates, rng)?;
    let mut best = 0;
    let mut best_q = utility_of(net, v, &plan[0], inputs)?;
    for (k, p) in plan.iter().enumerate().skip(1) {
        let q = utility_of(net, v, p, inputs)?;
        if q > best_q {
            best = k;
            best_q = q;
        }
    }
    Ok(plan.swap_remove(best))
}

fn agent_rng(seed: u64, round: u64, v: VertexId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round.wrapping_mul(1 << 20).wrapping_add(v.0 as u64));
    rng
}

/// One simultaneous pattern step against the frozen aggregate `z`.
///
/// `round` selects the random stream so successive steps draw fresh candidates.
pub fn pattern_step(net: &Network, config: &PatternConfig, z: &SignalVector, round: u64) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let budget = config.budget();
    let vertices: Vec<VertexId> = net.graph().vertices().collect();
    vertices
        .par_iter()
        .map(|&v| {
            let agent = net.agent(v);
            if agent.frozen || budget == 0.0 {
                return Ok(agent.params.clone());
            }
            let inputs = net.inputs(v, z)?;
            let mut rng = agent_rng(config.seed, round, v);
            greedy_step(net, v, &agent.params, &inputs, budget, config.candidates, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SafeStep {
    /// Largest step with `M L ≤ -dφ̂/dt` on `[0, δ]`; `+∞` when `L = 0`.
    pub delta_max: f64,
    /// Steady-state band `2 M L δ / (1 - α̂^δ)` at `δ_max`.
    pub epsilon: f64,
    /// Small-step limit `2 M L / (-ln α̂)`.
    pub epsilon_limit: f64,
}

/// `2 M L δ / (1 - α^δ)`: twice the steady-state distance when each step
/// contracts by `α^δ` and the aggregate moves by `M L δ`.
pub fn epsilon_at(m: f64, l: f64, alpha: f64, delta: f64) -> f64 {
    let phi = if delta == 0.0 { 1.0 } else { alpha.powf(delta) };
    if m * l == 0.0 {
        return 0.0;
    }
    2.0 * m * l * delta / (1.0 - phi)
}

/// Solves `M L = -ln(α̂) α̂^δ` for `δ`.
pub fn max_safe_step(m: f64, l: f64, alpha: f64) -> Result<SafeStep> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("fitted rate must lie in (0, 1), got {alpha}")));
    }
    if !(m >= 0.0) || !(l >= 0.0) {
        return Err(Error::domain("M and L must be nonnegative"));
    }
    let supply = -alpha.ln();
    let demand = m * l;
    if demand == 0.0 {
        return Ok(SafeStep { delta_max: f64::INFINITY, epsilon: 0.0, epsilon_limit: 0.0 });
    }
    if demand >= supply {
        return Err(Error::NoSafeStep { demand, supply });
    }
    let delta_max = (demand / supply).ln() / alpha.ln();
    Ok(SafeStep {
        delta_max,
        epsilon: epsilon_at(m, l, alpha, delta_max),
        epsilon_limit: 2.0 * demand / supply,
    })
}

/// Smallest `M` consistent with `M (1-φ̂(t)) d_V(f, f') ≥ ρ_E(z, Γ^t(f', z))`
/// on `t = 1..=horizon`.
pub fn estimate_divergence_m(
    net: &Network,
    perturbed: &Network,
    z: &SignalVector,
    profile: &ConvergenceProfile,
    config: &PropagationConfig,
    horizon: usize,
) -> Result<f64> {
    let gap = network_distance(net, &net.params(), &perturbed.params())?;
    if gap == 0.0 {
        return Err(Error::domain("perturbed states are at distance zero"));
    }
    let mut prop = Propagator::new(perturbed, config)?;
    let mut x = z.clone();
    let mut m: f64 = 0.0;
    for t in 1..=horizon {
        x = prop.advance(perturbed, &x, 1.0)?;
        let shift = 1.0 - profile.phi(t as f64);
        if shift <= 0.0 {
            continue;
        }
        m = m.max(rho_set(net.space(), z, &x)? / (shift * gap));
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupledConfig {
    pub steps: usize,
    /// Separation tolerance `ε` the report is checked against.
    pub epsilon: f64,
    /// When set, `δ` larger than this is rejected.
    pub delta_max: Option<f64>,
}

impl Default for CoupledConfig {
    fn default() -> Self {
        CoupledConfig { steps: 100, epsilon: 0.1, delta_max: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub epsilon: f64,
    /// `(time, ρ_E(signals, current aggregate))` after each step.
    pub distances: Vec<(f64, f64)>,
    pub entry_time: Option<f64>,
    pub violations: Vec<f64>,
}

impl SeparationReport {
    pub fn from_distances(epsilon: f64, distances: Vec<(f64, f64)>) -> Self {
        let entry = distances.iter().position(|&(_, d)| d <= epsilon);
        let violations = match entry {
            Some(k) => distances[k..].iter().filter(|&&(_, d)| d > epsilon).map(|&(t, _)| t).collect(),
            None => Vec::new(),
        };
        SeparationReport { epsilon, entry_time: entry.map(|k| distances[k].0), distances, violations }
    }

    pub fn separated(&self) -> bool {
        self.entry_time.is_some() && self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CoupledRun {
    /// Agent states before the first step and after each step.
    pub states: Vec<Vec<Vec<f64>>>,
    /// Signals after each step, starting with the initial signals.
    pub signals: Vec<SignalVector>,
    /// Freshly solved aggregate after each step, starting with the initial one.
    pub aggregates: Vec<SignalVector>,
    pub report: SeparationReport,
    pub network: Network,
}

/// Alternates `δ` of propagation with one pattern step for `steps` steps.
pub fn run_coupled(
    net: &Network,
    x0: &SignalVector,
    prop: &PropagationConfig,
    pattern: &PatternConfig,
    coupled: &CoupledConfig,
) -> Result<CoupledRun> {
    pattern.validate()?;
    if let Some(dmax) = coupled.delta_max {
        if pattern.step > dmax {
            return Err(Error::domain(format!("step {} exceeds safe step {dmax}", pattern.step)));
        }
    }
    let mut net = net.clone();
    let mut clock = Propagator::new(&net, prop)?;
    // Reference aggregates are solved synchronously whatever the signal dynamics.
    let solve_cfg = PropagationConfig { mode: Mode::Synchronous, ..prop.clone() };
    let solve = |n: &Network, warm: &SignalVector| -> Result<AggregateResult> { solve_aggregate(n, warm, &solve_cfg) };
    let mut z = solve(&net, x0)?.fixed_point;
    let mut x = x0.clone();
    let mut states = vec![net.params()];
    let mut signals = vec![x.clone()];
    let mut aggregates = vec![z.clone()];
    let mut distances = Vec::with_capacity(coupled.steps);
    for k in 0..coupled.steps {
        x = clock.advance(&net, &x, pattern.step)?;
        let next = pattern_step(&net, pattern, &z, k as u64)?;
        net.set_params(next)?;
        z = solve(&net, &z)?.fixed_point;
        distances.push((clock.time(), rho_set(net.space(), &x, &z)?));
        states.push(net.params());
        signals.push(x.clone());
        aggregates.push(z.clone());
    }
    Ok(CoupledRun {
        states,
        signals,
        aggregates,
        report: SeparationReport::from_distances(coupled.epsilon, distances),
        network: net,
    })
}
