//! Fast dynamics: synchronous steps `Γ¹`, the asynchronous Poisson jump
//! process `Λ`, the aggregate solver, and empirical convergence profiles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::Network;
use crate::error::{Error, Result};
use crate::graph::VertexId;
use crate::signal::{rho_set, Signal, SignalVector};

/// Networks smaller than this are stepped on one thread.
const PARALLEL_THRESHOLD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Synchronous,
    Asynchronous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    pub mode: Mode,
    /// Events per agent per unit time (asynchronous mode).
    pub rate: f64,
    pub tolerance: f64,
    /// Synchronous steps; in asynchronous mode one iteration is `|V|` events.
    pub max_iterations: usize,
    pub seed: u64,
    /// Consecutive strictly increasing residuals before giving up.
    pub patience: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            mode: Mode::Synchronous,
            rate: 1.0,
            tolerance: 1e-9,
            max_iterations: 10_000,
            seed: 0,
            patience: 50,
        }
    }
}

impl PropagationConfig {
    pub fn synchronous(tolerance: f64) -> Self {
        PropagationConfig { tolerance, ..Default::default() }
    }

    pub fn asynchronous(rate: f64, tolerance: f64, seed: u64) -> Self {
        PropagationConfig {
            mode: Mode::Asynchronous,
            rate,
            tolerance,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::Asynchronous && !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::domain(format!("poisson rate must be positive, got {}", self.rate)));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::domain("tolerance must be nonnegative"));
        }
        if self.max_iterations == 0 {
            return Err(Error::domain("max_iterations must be positive"));
        }
        Ok(())
    }
}

/// `Γ¹(f_V, x_E)`: every agent evaluated against the prior vector.
pub fn step_synchronous(net: &Network, x: &SignalVector) -> Result<SignalVector> {
    let vertices: Vec<VertexId> = net.graph().vertices().collect();
    let outputs: Vec<Vec<Signal>> = if vertices.len() >= PARALLEL_THRESHOLD {
        vertices.par_iter().map(|&v| net.evaluate(v, x)).collect::<Result<_>>()?
    } else {
        vertices.iter().map(|&v| net.evaluate(v, x)).collect::<Result<_>>()?
    };
    let mut next = x.clone();
    for (v, out) in vertices.into_iter().zip(outputs) {
        net.write_outputs(v, &mut next, out)?;
    }
    Ok(next)
}

/// One jump of `Λ`: `x_{E-Fv} || f_v(x_Tv)`.
pub fn jump(net: &Network, v: VertexId, x: &mut SignalVector) -> Result<()> {
    let out = net.evaluate(v, x)?;
    net.write_outputs(v, x, out)
}

/// `ρ_E(Γ¹ z, z)`.
pub fn residual(net: &Network, z: &SignalVector) -> Result<f64> {
    rho_set(net.space(), &step_synchronous(net, z)?, z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    time: f64,
    agent: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    // Min-heap on time, ties to the lower agent index.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.agent.cmp(&self.agent))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Independent Poisson(λ) event streams for `n` agents, merged in time order.
#[derive(Debug, Clone)]
pub struct PoissonClock {
    heap: BinaryHeap<Pending>,
    rng: ChaCha8Rng,
    exp: Exp<f64>,
}

impl PoissonClock {
    pub fn new(agents: usize, rate: f64, seed: u64) -> Result<Self> {
        let exp = Exp::new(rate).map_err(|_| Error::domain(format!("invalid poisson rate {rate}")))?;
        if !(rate > 0.0) {
            return Err(Error::domain(format!("invalid poisson rate {rate}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heap = (0..agents)
            .map(|agent| Pending { time: exp.sample(&mut rng), agent })
            .collect();
        Ok(PoissonClock { heap, rng, exp })
    }

    /// Time of the next event without consuming it.
    pub fn peek(&self) -> Option<f64> {
        self.heap.peek().map(|p| p.time)
    }

    /// Next `(time, agent)` event.
    pub fn next_event(&mut self) -> Option<(f64, usize)> {
        let p = self.heap.pop()?;
        let gap = self.exp.sample(&mut self.rng);
        self.heap.push(Pending { time: p.time + gap, agent: p.agent });
        Some((p.time, p.agent))
    }
}

/// Splits an event sequence into successive minimal windows in which every
/// agent fired, starting from `start`; returns the window lengths.
pub fn cover_windows(agents: usize, start: f64, events: impl IntoIterator<Item = (f64, usize)>) -> Vec<f64> {
    let mut out = Vec::new();
    if agents == 0 {
        return out;
    }
    let mut seen = vec![false; agents];
    let mut missing = agents;
    let mut open = start;
    for (t, a) in events {
        if !seen[a] {
            seen[a] = true;
            missing -= 1;
            if missing == 0 {
                out.push(t - open);
                open = t;
                seen.iter_mut().for_each(|s| *s = false);
                missing = agents;
            }
        }
    }
    out
}

/// Simulates `count` cover intervals of `agents` Poisson(λ) clocks.
pub fn cover_intervals(agents: usize, rate: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    if agents == 0 {
        return Err(Error::domain("cover interval needs at least one agent"));
    }
    let mut clock = PoissonClock::new(agents, rate, seed)?;
    let mut seen = vec![false; agents];
    let mut missing = agents;
    let mut open = 0.0;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (t, a) = clock.next_event().expect("clock never runs dry");
        if !seen[a] {
            seen[a] = true;
            missing -= 1;
            if missing == 0 {
                out.push(t - open);
                open = t;
                seen.iter_mut().for_each(|s| *s = false);
                missing = agents;
            }
        }
    }
    Ok(out)
}

/// Closed-form median of the cover interval, `-(1/λ) ln(1 - 2^(-1/n))`.
pub fn cover_interval_median(agents: usize, rate: f64) -> f64 {
    -(1.0 - 2f64.powf(-1.0 / agents as f64)).ln() / rate
}

/// Closed-form mean of the cover interval, `H_n / λ` (the maximum of `n` exponentials).
pub fn cover_interval_mean(agents: usize, rate: f64) -> f64 {
    (1..=agents).map(|k| 1.0 / k as f64).sum::<f64>() / rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverStats {
    pub intervals: usize,
    pub mean: f64,
    pub median: f64,
}

impl CoverStats {
    pub fn from_intervals(intervals: &[f64]) -> Option<Self> {
        if intervals.is_empty() {
            return None;
        }
        let mut sorted = intervals.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Some(CoverStats {
            intervals: n,
            mean: sorted.iter().sum::<f64>() / n as f64,
            median,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub time: f64,
    /// The agent that fired; `None` for the initial state.
    pub agent: Option<VertexId>,
    pub signals: SignalVector,
}

#[derive(Debug, Clone)]
pub struct AsyncRun {
    pub trace: Vec<TraceEntry>,
    pub cover: Option<CoverStats>,
}

impl AsyncRun {
    pub fn final_state(&self) -> &SignalVector {
        &self.trace.last().expect("trace holds the initial state").signals
    }
}

/// Runs `Λ` from `x0` over `[0, horizon]`.
pub fn run_asynchronous(net: &Network, x0: &SignalVector, config: &PropagationConfig, horizon: f64) -> Result<AsyncRun> {
    if !(horizon >= 0.0) {
        return Err(Error::domain(format!("horizon must be nonnegative, got {horizon}")));
    }
    if config.mode != Mode::Asynchronous {
        return Err(Error::domain("run_asynchronous needs asynchronous mode"));
    }
    config.validate()?;
    let mut clock = PoissonClock::new(net.vertex_count(), config.rate, config.seed)?;
    let mut x = x0.clone();
    let mut trace = vec![TraceEntry { time: 0.0, agent: None, signals: x.clone() }];
    while clock.peek().is_some_and(|t| t <= horizon) {
        let (t, a) = clock.next_event().expect("peeked");
        let v = VertexId(a);
        jump(net, v, &mut x)?;
        trace.push(TraceEntry { time: t, agent: Some(v), signals: x.clone() });
    }
    let events = trace.iter().filter_map(|e| e.agent.map(|v| (e.time, v.0)));
    let cover = CoverStats::from_intervals(&cover_windows(net.vertex_count(), 0.0, events));
    Ok(AsyncRun { trace, cover })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateResult {
    pub fixed_point: SignalVector,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct DivergenceWatch {
    last: f64,
    rising: usize,
    patience: usize,
}

impl DivergenceWatch {
    fn new(patience: usize) -> Self {
        DivergenceWatch { last: f64::INFINITY, rising: 0, patience }
    }

    fn observe(&mut self, residual: f64, iterations: usize) -> Result<()> {
        if !residual.is_finite() {
            return Err(Error::Diverged { iterations, residual });
        }
        if residual > self.last {
            self.rising += 1;
        } else {
            self.rising = 0;
        }
        self.last = residual;
        if self.patience > 0 && self.rising >= self.patience {
            return Err(Error::Diverged { iterations, residual });
        }
        Ok(())
    }
}

/// Iterates the configured dynamics from `x0` until `ρ_E(Γ¹z, z) ≤ tolerance`.
pub fn solve_aggregate(net: &Network, x0: &SignalVector, config: &PropagationConfig) -> Result<AggregateResult> {
    config.validate()?;
    if net.graph().arc_count() == 0 {
        return Err(Error::domain("network has no arcs"));
    }
    let space = net.space();
    let mut watch = DivergenceWatch::new(config.patience);
    match config.mode {
        Mode::Synchronous => {
            let mut x = x0.clone();
            for it in 0..config.max_iterations {
                let y = step_synchronous(net, &x)?;
                let r = rho_set(space, &y, &x)?;
                if r <= config.tolerance {
                    return Ok(AggregateResult { fixed_point: x, residual: r, iterations: it + 1, converged: true });
                }
                watch.observe(r, it + 1)?;
                x = y;
            }
            let r = residual(net, &x)?;
            Ok(AggregateResult {
                fixed_point: x,
                residual: r,
                iterations: config.max_iterations,
                converged: r <= config.tolerance,
            })
        }
        Mode::Asynchronous => {
            let n = net.vertex_count();
            let mut clock = PoissonClock::new(n, config.rate, config.seed)?;
            let mut x = x0.clone();
            let mut events = 0;
            for it in 0..config.max_iterations {
                let r = residual(net, &x)?;
                if r <= config.tolerance {
                    return Ok(AggregateResult { fixed_point: x, residual: r, iterations: events, converged: true });
                }
                watch.observe(r, it)?;
                for _ in 0..n {
                    let (_, a) = clock.next_event().expect("clock never runs dry");
                    jump(net, VertexId(a), &mut x)?;
                    events += 1;
                }
            }
            let r = residual(net, &x)?;
            Ok(AggregateResult { fixed_point: x, residual: r, iterations: events, converged: r <= config.tolerance })
        }
    }
}

/// Advances signals through simulated time, keeping the Poisson clock across calls.
#[derive(Debug, Clone)]
pub struct Propagator {
    mode: Mode,
    clock: Option<PoissonClock>,
    time: f64,
}

impl Propagator {
    pub fn new(net: &Network, config: &PropagationConfig) -> Result<Self> {
        config.validate()?;
        let clock = match config.mode {
            Mode::Synchronous => None,
            Mode::Asynchronous => Some(PoissonClock::new(net.vertex_count(), config.rate, config.seed)?),
        };
        Ok(Propagator { mode: config.mode, clock, time: 0.0 })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// `Γ^dt(f_V, x)`. Synchronous steps fire at integer times.
    pub fn advance(&mut self, net: &Network, x: &SignalVector, dt: f64) -> Result<SignalVector> {
        if !(dt >= 0.0) {
            return Err(Error::domain(format!("time step must be nonnegative, got {dt}")));
        }
        let end = self.time + dt;
        let mut x = x.clone();
        match self.mode {
            Mode::Synchronous => {
                let steps = (end.floor() - self.time.floor()) as u64;
                for _ in 0..steps {
                    x = step_synchronous(net, &x)?;
                }
            }
            Mode::Asynchronous => {
                let clock = self.clock.as_mut().expect("asynchronous propagator has a clock");
                while clock.peek().is_some_and(|t| t <= end) {
                    let (_, a) = clock.next_event().expect("peeked");
                    jump(net, VertexId(a), &mut x)?;
                }
            }
        }
        self.time = end;
        if !x.is_finite() {
            return Err(Error::Diverged { iterations: 0, residual: f64::INFINITY });
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionEstimate {
    pub alpha: f64,
    pub samples_used: usize,
}

impl ContractionEstimate {
    pub fn is_contractive(&self) -> bool {
        self.alpha < 1.0
    }
}

/// `max ρ_Fv(f(x), f(y)) / ρ_Tv(x, y)` over sampled input pairs.
pub fn estimate_contraction(net: &Network, v: VertexId, pairs: &[(Vec<Signal>, Vec<Signal>)]) -> Result<ContractionEstimate> {
    let mut alpha: f64 = 0.0;
    let mut used = 0;
    let params = &net.agent(v).params;
    for (x, y) in pairs {
        let din = net.input_distance(v, x, y);
        if din == 0.0 {
            continue;
        }
        let fx = net.evaluate_with(v, params, x)?;
        let fy = net.evaluate_with(v, params, y)?;
        alpha = alpha.max(net.output_distance(v, &fx, &fy) / din);
        used += 1;
    }
    if used == 0 {
        return Err(Error::domain("every sampled input pair is at distance zero"));
    }
    Ok(ContractionEstimate { alpha, samples_used: used })
}

/// Random input pairs for agent `v`: perturbations of size up to `radius` around `center`.
pub fn sample_input_pairs(
    net: &Network,
    v: VertexId,
    center: &SignalVector,
    radius: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<(Vec<Signal>, Vec<Signal>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = net.inputs(v, center)?;
    let reads = &net.agent(v).reads;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Signal> {
        reads
            .iter()
            .zip(&base)
            .map(|(p, s)| {
                let r = radius * rng.random::<f64>();
                net.port_space(p).perturb(s, r, rng)
            })
            .collect()
    };
    Ok((0..n).map(|_| (draw(&mut rng), draw(&mut rng))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceProfile {
    /// `(t, sup over starts of ρ_E(Γ^t x, z) / ρ_E(x, z))`.
    pub table: Vec<(f64, f64)>,
    /// Majorizing exponential base per unit time.
    pub alpha: f64,
    /// Least-squares base before inflation.
    pub alpha_fit: f64,
    pub cover: Option<CoverStats>,
}

impl ConvergenceProfile {
    /// `φ̂(t) = α̂^t`.
    pub fn phi(&self, t: f64) -> f64 {
        if t == 0.0 {
            1.0
        } else {
            self.alpha.powf(t)
        }
    }

    /// A profile with a known base, for callers that have one.
    pub fn from_alpha(alpha: f64) -> Self {
        ConvergenceProfile { table: vec![(0.0, 1.0)], alpha, alpha_fit: alpha, cover: None }
    }
}

/// Least squares through the origin on `ln r = t ln α`, inflated to majorize every entry.
pub fn fit_majorant(table: &[(f64, f64)]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = table.iter().copied().filter(|&(t, r)| t > 0.0 && r > 0.0).collect();
    if pts.is_empty() {
        return (0.0, 0.0);
    }
    let num: f64 = pts.iter().map(|(t, r)| t * r.ln()).sum();
    let den: f64 = pts.iter().map(|(t, _)| t * t).sum();
    let fit = (num / den).exp();
    let need = pts.iter().map(|(t, r)| r.powf(1.0 / t)).fold(0.0, f64::max);
    (fit.max(need), fit)
}

/// Tabulates worst-case normalized distance to `z` over time across `starts`.
///
/// Synchronous: `horizon` is a number of steps and the table has one row per
/// step. Asynchronous: `horizon` is simulated time sampled on `samples` points.
pub fn profile_convergence(
    net: &Network,
    z: &SignalVector,
    starts: &[SignalVector],
    config: &PropagationConfig,
    horizon: f64,
    samples: usize,
) -> Result<ConvergenceProfile> {
    config.validate()?;
    if starts.is_empty() {
        return Err(Error::domain("profile needs at least one start"));
    }
    let space = net.space();
    let (times, per_start, cover): (Vec<f64>, Vec<Vec<f64>>, Option<CoverStats>) = match config.mode {
        Mode::Synchronous => {
            let steps = horizon.max(0.0).floor() as usize;
            let times = (0..=steps).map(|t| t as f64).collect();
            let mut rows = Vec::with_capacity(starts.len());
            for x0 in starts {
                let mut d = Vec::with_capacity(steps + 1);
                let mut x = x0.clone();
                d.push(rho_set(space, &x, z)?);
                for _ in 0..steps {
                    x = step_synchronous(net, &x)?;
                    d.push(rho_set(space, &x, z)?);
                }
                rows.push(d);
            }
            (times, rows, None)
        }
        Mode::Asynchronous => {
            let samples = samples.max(1);
            let times: Vec<f64> = (0..=samples).map(|k| horizon * k as f64 / samples as f64).collect();
            let mut rows = Vec::with_capacity(starts.len());
            let mut windows = Vec::new();
            for (i, x0) in starts.iter().enumerate() {
                let mut clock = PoissonClock::new(net.vertex_count(), config.rate, config.seed.wrapping_add(i as u64))?;
                let mut x = x0.clone();
                let mut d = Vec::with_capacity(times.len());
                let mut fired = Vec::new();
                for &t in &times {
                    while clock.peek().is_some_and(|s| s <= t) {
                        let (s, a) = clock.next_event().expect("peeked");
                        jump(net, VertexId(a), &mut x)?;
                        fired.push((s, a));
                    }
                    d.push(rho_set(space, &x, z)?);
                }
                windows.extend(cover_windows(net.vertex_count(), 0.0, fired));
                rows.push(d);
            }
            (times, rows, CoverStats::from_intervals(&windows))
        }
    };
    let table: Vec<(f64, f64)> = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let worst = per_start
                .iter()
                .map(|d| if d[0] == 0.0 { 0.0 } else { d[k] / d[0] })
                .fold(0.0, f64::max);
            (t, if k == 0 { 1.0 } else { worst })
        })
        .collect();
    // Rows where every start is already within the solver tolerance of z only
    // measure the error in z itself; keep them in the table but not the fit.
    let floor = 10.0 * config.tolerance;
    let resolved: Vec<(f64, f64)> = table
        .iter()
        .enumerate()
        .filter(|(k, _)| per_start.iter().any(|d| d[*k] > floor))
        .map(|(_, row)| *row)
        .collect();
    let (alpha, alpha_fit) = fit_majorant(&resolved);
    Ok(ConvergenceProfile { table, alpha, alpha_fit, cover })
}
