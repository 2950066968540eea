//! Ant colony optimization on a cognitive network. Waypoints are agents,
//! ant walks are the fast process sampling paths from colony to food, and
//! pheromone deposit and evaporation are the slow dynamics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ArcId, DirectedGraph, VertexId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcoParams {
    /// Pheromone each ant lays, spread uniformly over its path length.
    pub payload: f64,
    /// Fraction of pheromone lost per unit time.
    pub evaporation: f64,
    /// Pheromone exponent.
    pub alpha: f64,
    /// Heuristic exponent.
    pub beta: f64,
    /// Floor added to pheromone in the choice rule.
    pub floor: f64,
    pub ants: usize,
    /// Starting pheromone density on every arc.
    pub initial: f64,
}

impl Default for AcoParams {
    fn default() -> Self {
        AcoParams { payload: 1.0, evaporation: 0.1, alpha: 1.0, beta: 2.0, floor: 0.05, ants: 20, initial: 0.0 }
    }
}

impl AcoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.payload > 0.0) || !self.payload.is_finite() {
            return Err(Error::domain("ant payload must be positive"));
        }
        if !(0.0..1.0).contains(&self.evaporation) {
            return Err(Error::domain("evaporation rate must lie in [0, 1)"));
        }
        if !(self.floor > 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::domain("choice exponents must be finite and the pheromone floor positive"));
        }
        if !(self.initial >= 0.0) || !self.initial.is_finite() {
            return Err(Error::domain("initial pheromone must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcoInstance {
    graph: DirectedGraph,
    lengths: Vec<f64>,
    heuristic: Vec<f64>,
    pheromone: Vec<f64>,
    colony: VertexId,
    food: VertexId,
    params: AcoParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AntWalk {
    Complete(Vec<ArcId>),
    /// No admissible arc left; carries the partial path.
    Stuck(Vec<ArcId>),
}

impl AntWalk {
    pub fn path(&self) -> Option<&[ArcId]> {
        match self {
            AntWalk::Complete(p) => Some(p),
            AntWalk::Stuck(_) => None,
        }
    }
}

impl AcoInstance {
    /// Heuristic defaults to `1 / length` per arc.
    pub fn new(graph: DirectedGraph, lengths: Vec<f64>, colony: VertexId, food: VertexId, params: AcoParams) -> Result<Self> {
        let heuristic = lengths.iter().map(|l| 1.0 / l).collect();
        AcoInstance::with_heuristic(graph, lengths, heuristic, colony, food, params)
    }

    pub fn with_heuristic(
        graph: DirectedGraph,
        lengths: Vec<f64>,
        heuristic: Vec<f64>,
        colony: VertexId,
        food: VertexId,
        params: AcoParams,
    ) -> Result<Self> {
        params.validate()?;
        if lengths.len() != graph.arc_count() || heuristic.len() != graph.arc_count() {
            return Err(Error::domain("one length and one heuristic value per arc"));
        }
        if lengths.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::domain("arc lengths must be positive and finite"));
        }
        if heuristic.iter().any(|h| !(*h >= 0.0) || !h.is_finite()) {
            return Err(Error::domain("heuristic values must be nonnegative and finite"));
        }
        if colony.0 >= graph.vertex_count() || food.0 >= graph.vertex_count() || colony == food {
            return Err(Error::domain("colony and food must be distinct vertices"));
        }
        let pheromone = vec![params.initial; graph.arc_count()];
        let inst = AcoInstance { graph, lengths, heuristic, pheromone, colony, food, params };
        shortest_path_oracle(&inst.graph, &inst.lengths, colony, food)?;
        Ok(inst)
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn pheromone(&self) -> &[f64] {
        &self.pheromone
    }

    pub fn params(&self) -> &AcoParams {
        &self.params
    }

    pub fn colony(&self) -> VertexId {
        self.colony
    }

    pub fn food(&self) -> VertexId {
        self.food
    }

    pub fn set_pheromone(&mut self, tau: Vec<f64>) -> Result<()> {
        if tau.len() != self.pheromone.len() || tau.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::domain("pheromone must be nonnegative, one value per arc"));
        }
        self.pheromone = tau;
        Ok(())
    }

    pub fn path_length(&self, path: &[ArcId]) -> f64 {
        path.iter().map(|e| self.lengths[e.0]).sum()
    }

    /// Total pheromone: density times length, summed over arcs.
    pub fn total_pheromone(&self) -> f64 {
        self.pheromone.iter().zip(&self.lengths).map(|(t, l)| t * l).sum()
    }

    /// Choice weight `(τ + τ₀)^a η^b` of one arc.
    pub fn weight(&self, e: ArcId) -> f64 {
        let p = &self.params;
        (self.pheromone[e.0] + p.floor).powf(p.alpha) * self.heuristic[e.0].powf(p.beta)
    }

    /// Next-arc probabilities among arcs out of `at` whose heads are unvisited.
    pub fn choice_probabilities(&self, at: VertexId, visited: &[bool]) -> Vec<(ArcId, f64)> {
        let options: Vec<(ArcId, f64)> = self
            .graph
            .outgoing(at)
            .iter()
            .filter(|&&e| !visited[self.graph.head(e).0])
            .map(|&e| (e, self.weight(e)))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        let total: f64 = options.iter().map(|(_, w)| w).sum();
        options.into_iter().map(|(e, w)| (e, w / total)).collect()
    }

    pub fn walk_with<R: Rng + ?Sized>(&self, rng: &mut R) -> AntWalk {
        let mut visited = vec![false; self.graph.vertex_count()];
        let mut at = self.colony;
        visited[at.0] = true;
        let mut path = Vec::new();
        while at != self.food {
            let options = self.choice_probabilities(at, &visited);
            if options.is_empty() {
                return AntWalk::Stuck(path);
            }
            let mut u = rng.random::<f64>();
            let mut pick = options[options.len() - 1].0;
            for &(e, p) in &options {
                if u < p {
                    pick = e;
                    break;
                }
                u -= p;
            }
            path.push(pick);
            at = self.graph.head(pick);
            visited[at.0] = true;
        }
        AntWalk::Complete(path)
    }

    pub fn ant_walk(&self, seed: u64) -> AntWalk {
        self.walk_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Lays `Q / length(path)` per unit length on every arc of the path.
    pub fn deposit(&mut self, path: &[ArcId]) -> Result<()> {
        self.check_path(path)?;
        let density = self.params.payload / self.path_length(path);
        for e in path {
            self.pheromone[e.0] += density;
        }
        Ok(())
    }

    fn check_path(&self, path: &[ArcId]) -> Result<()> {
        let mut at = self.colony;
        for &e in path {
            if e.0 >= self.graph.arc_count() || self.graph.tail(e) != at {
                return Err(Error::domain(format!("arc {e} does not continue the path")));
            }
            at = self.graph.head(e);
        }
        if at != self.food {
            return Err(Error::domain("path does not end at the food vertex"));
        }
        Ok(())
    }

    /// `τ ← τ (1 - e)^dt`.
    pub fn evaporate(&mut self, dt: f64) -> Result<()> {
        if !(dt >= 0.0) {
            return Err(Error::domain("evaporation time must be nonnegative"));
        }
        let keep = (1.0 - self.params.evaporation).powf(dt);
        for t in &mut self.pheromone {
            *t *= keep;
        }
        Ok(())
    }

    /// Dispatches the ant population, evaporates once, then deposits every
    /// completed path, for `iterations` rounds.
    pub fn run_colony(&mut self, iterations: usize, seed: u64) -> Result<ColonyTrace> {
        if iterations == 0 {
            return Err(Error::domain("a colony run needs at least one iteration"));
        }
        let mut records = Vec::with_capacity(iterations);
        let mut history = vec![self.pheromone.clone()];
        let mut best: Option<(f64, Vec<ArcId>)> = None;
        for it in 0..iterations {
            let walk = |ant: usize| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((it as u64) << 24) | ant as u64);
                self.walk_with(&mut rng)
            };
            let walks: Vec<AntWalk> = if self.params.ants >= 64 {
                (0..self.params.ants).into_par_iter().map(walk).collect()
            } else {
                (0..self.params.ants).map(walk).collect()
            };
            let before = self.pheromone.clone();
            self.evaporate(1.0)?;
            let paths: Vec<&[ArcId]> = walks.iter().filter_map(AntWalk::path).collect();
            for p in &paths {
                self.deposit(p)?;
            }
            let change = self.pheromone.iter().zip(&before).zip(&self.lengths).map(|((a, b), l)| (a - b).abs() * l).sum();
            let lengths: Vec<f64> = paths.iter().map(|p| self.path_length(p)).collect();
            let (modal, modal_mass, support) = path_distribution(&paths);
            let iteration_best = paths
                .iter()
                .zip(&lengths)
                .min_by(|a, b| a.1.total_cmp(b.1).then_with(|| a.0.cmp(b.0)))
                .map(|(p, &l)| (l, p.to_vec()));
            if let Some((l, p)) = &iteration_best {
                if best.as_ref().is_none_or(|(bl, _)| l < bl) {
                    best = Some((*l, p.clone()));
                }
            }
            records.push(IterationRecord {
                iteration: it + 1,
                completed: paths.len(),
                stuck: walks.len() - paths.len(),
                best_length: iteration_best.as_ref().map(|(l, _)| *l),
                running_best: best.as_ref().map(|(l, _)| *l),
                mean_length: if lengths.is_empty() { None } else { Some(lengths.iter().sum::<f64>() / lengths.len() as f64) },
                modal_path: modal,
                modal_mass,
                support,
                total_pheromone: self.total_pheromone(),
                pheromone_change: change,
            });
            history.push(self.pheromone.clone());
        }
        Ok(ColonyTrace { payload: self.params.payload, records, pheromone: history, best_path: best.map(|(_, p)| p) })
    }

    /// Random DAG on `n` vertices, arcs `i → j` for `i < j` with probability
    /// `p`, lengths uniform in `[1, 3]`. A spine `i → i + 1` keeps the food
    /// vertex `n - 1` reachable from colony `0`.
    pub fn random_dag(n: usize, p: f64, seed: u64, params: AcoParams) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain("a colony graph needs at least two vertices"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let mut arcs = Vec::new();
        let mut lengths = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || rng.random::<f64>() < p {
                    arcs.push((names[i].as_str(), names[j].as_str()));
                    lengths.push(rng.random_range(1.0..=3.0));
                }
            }
        }
        let g = DirectedGraph::new(names.iter().map(String::as_str), &arcs)?;
        AcoInstance::new(g, lengths, VertexId(0), VertexId(n - 1), params)
    }

    /// Single chain `c → w1 → ... → f` with unit lengths.
    pub fn chain(n: usize, params: AcoParams) -> Result<Self> {
        let names: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let arcs: Vec<(&str, &str)> = names.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect();
        let g = DirectedGraph::new(names.iter().map(String::as_str), &arcs)?;
        AcoInstance::new(g, vec![1.0; n - 1], VertexId(0), VertexId(n - 1), params)
    }

    /// Colony to food over two branches of total lengths `short` and `long`.
    pub fn diamond(short: f64, long: f64, params: AcoParams) -> Result<Self> {
        let g = DirectedGraph::new(["colony", "a", "b", "food"], &[("colony", "a"), ("a", "food"), ("colony", "b"), ("b", "food")])?;
        AcoInstance::new(g, vec![short / 2.0, short / 2.0, long / 2.0, long / 2.0], VertexId(0), VertexId(3), params)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: AcoFile = serde_json::from_str(text)?;
        file.build()
    }

    pub fn to_file(&self) -> AcoFile {
        let spec = self.graph.to_spec();
        let label = |e: ArcId| self.graph.arc_label(e);
        AcoFile {
            vertices: spec.vertices,
            arcs: spec.arcs,
            lengths: self.graph.arc_ids().map(|e| (label(e), self.lengths[e.0])).collect(),
            heuristic: Some(self.graph.arc_ids().map(|e| (label(e), self.heuristic[e.0])).collect()),
            colony: self.graph.name(self.colony).to_string(),
            food: self.graph.name(self.food).to_string(),
            params: self.params,
        }
    }
}

/// Instance file: a graph plus lengths keyed `"tail->head"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcoFile {
    pub vertices: Vec<String>,
    #[serde(default)]
    pub arcs: Vec<[String; 2]>,
    pub lengths: BTreeMap<String, f64>,
    #[serde(default)]
    pub heuristic: Option<BTreeMap<String, f64>>,
    pub colony: String,
    pub food: String,
    #[serde(default)]
    pub params: AcoParams,
}

impl AcoFile {
    pub fn build(&self) -> Result<AcoInstance> {
        let arcs: Vec<(&str, &str)> = self.arcs.iter().map(|[a, b]| (a.as_str(), b.as_str())).collect();
        let g = DirectedGraph::new(self.vertices.iter().map(String::as_str), &arcs)?;
        let labels: Vec<String> = g.arc_ids().map(|e| g.arc_label(e)).collect();
        let mut sorted = labels.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidGraph("colony graphs cannot have parallel arcs".into()));
        }
        let lookup = |map: &BTreeMap<String, f64>, what: &str| -> Result<Vec<f64>> {
            if let Some(k) = map.keys().find(|k| !labels.contains(k)) {
                return Err(Error::domain(format!("{what} given for unknown arc `{k}`")));
            }
            labels
                .iter()
                .map(|l| map.get(l).copied().ok_or_else(|| Error::domain(format!("no {what} for arc `{l}`"))))
                .collect()
        };
        let lengths = lookup(&self.lengths, "length")?;
        let heuristic = match &self.heuristic {
            Some(h) => lookup(h, "heuristic")?,
            None => lengths.iter().map(|l| 1.0 / l).collect(),
        };
        AcoInstance::with_heuristic(g.clone(), lengths, heuristic, g.vertex(&self.colony)?, g.vertex(&self.food)?, self.params)
    }
}

/// Modal path (ties to the smallest arc sequence), its share, and `exp(entropy)`.
fn path_distribution(paths: &[&[ArcId]]) -> (Option<Vec<ArcId>>, f64, f64) {
    if paths.is_empty() {
        return (None, 0.0, 0.0);
    }
    let mut counts: BTreeMap<&[ArcId], usize> = BTreeMap::new();
    for p in paths {
        *counts.entry(p).or_default() += 1;
    }
    let n = paths.len() as f64;
    let (modal, count) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(p, c)| (p.to_vec(), *c))
        .expect("nonempty");
    let entropy: f64 = counts.values().map(|&c| c as f64 / n).map(|q| -q * q.ln()).sum();
    (Some(modal), count as f64 / n, entropy.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub completed: usize,
    pub stuck: usize,
    pub best_length: Option<f64>,
    pub running_best: Option<f64>,
    pub mean_length: Option<f64>,
    pub modal_path: Option<Vec<ArcId>>,
    /// Share of completed ants that took the modal path.
    pub modal_mass: f64,
    /// Effective number of distinct paths, `exp` of the empirical entropy.
    pub support: f64,
    pub total_pheromone: f64,
    /// `Σ |Δτ| · length` over the iteration.
    pub pheromone_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColonyTrace {
    pub payload: f64,
    pub records: Vec<IterationRecord>,
    /// Pheromone densities before the first iteration and after each one.
    pub pheromone: Vec<Vec<f64>>,
    pub best_path: Option<Vec<ArcId>>,
}

impl ColonyTrace {
    pub fn final_modal_path(&self) -> Option<&[ArcId]> {
        self.records.last().and_then(|r| r.modal_path.as_deref())
    }

    /// `iteration,best_length,modal_path_mass,total_pheromone` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "best_length", "modal_path_mass", "total_pheromone"])?;
        for r in &self.records {
            let best = r.running_best.map_or(String::new(), |b| b.to_string());
            w.write_record([r.iteration.to_string(), best, r.modal_mass.to_string(), r.total_pheromone.to_string()])?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).map_err(|e| Error::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationQuality {
    /// Pheromone change per iteration divided by one ant's payload.
    pub relative_change: Vec<f64>,
    pub support: Vec<f64>,
    /// Share of iterations whose support did not grow over the previous one.
    pub support_nonincreasing: f64,
}

pub fn separation_quality(trace: &ColonyTrace) -> Result<SeparationQuality> {
    if trace.records.is_empty() {
        return Err(Error::domain("empty colony trace"));
    }
    let relative_change = trace.records.iter().map(|r| r.pheromone_change / trace.payload).collect();
    let support: Vec<f64> = trace.records.iter().map(|r| r.support).collect();
    let steps = support.len().saturating_sub(1);
    let kept = support.windows(2).filter(|w| w[1] <= w[0] + 1e-12).count();
    let support_nonincreasing = if steps == 0 { 1.0 } else { kept as f64 / steps as f64 };
    Ok(SeparationQuality { relative_change, support, support_nonincreasing })
}

#[derive(Debug, Clone, PartialEq)]
struct Label {
    dist: f64,
    path: Vec<ArcId>,
    vertex: VertexId,
}

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap.
        other.dist.total_cmp(&self.dist).then_with(|| other.path.cmp(&self.path))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact shortest path by label setting; equal lengths go to the
/// lexicographically smallest arc sequence.
pub fn shortest_path_oracle(graph: &DirectedGraph, lengths: &[f64], from: VertexId, to: VertexId) -> Result<Vec<ArcId>> {
    if lengths.len() != graph.arc_count() || lengths.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::domain("one positive length per arc"));
    }
    let mut best: Vec<Option<(f64, Vec<ArcId>)>> = vec![None; graph.vertex_count()];
    let mut done = vec![false; graph.vertex_count()];
    let mut heap = BinaryHeap::from([Label { dist: 0.0, path: Vec::new(), vertex: from }]);
    best[from.0] = Some((0.0, Vec::new()));
    while let Some(Label { dist, path, vertex }) = heap.pop() {
        if done[vertex.0] {
            continue;
        }
        done[vertex.0] = true;
        if vertex == to {
            return Ok(path);
        }
        for &e in graph.outgoing(vertex) {
            let w = graph.head(e);
            if done[w.0] {
                continue;
            }
            let nd = dist + lengths[e.0];
            let mut np = path.clone();
            np.push(e);
            let better = match &best[w.0] {
                None => true,
                Some((d, p)) => nd < *d || (nd == *d && np < *p),
            };
            if better {
                best[w.0] = Some((nd, np.clone()));
                heap.push(Label { dist: nd, path: np, vertex: w });
            }
        }
    }
    Err(Error::NoPath { from: graph.name(from).to_string(), to: graph.name(to).to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> AcoParams {
        AcoParams::default()
    }

    #[test]
    fn chain_walk_is_forced() {
        let inst = AcoInstance::chain(4, params()).unwrap();
        for seed in 0..20 {
            assert_eq!(inst.ant_walk(seed), AntWalk::Complete(vec![ArcId(0), ArcId(1), ArcId(2)]));
        }
    }

    #[test]
    fn symmetric_diamond_splits_evenly() {
        let inst = AcoInstance::diamond(2.0, 2.0, AcoParams { alpha: 1.0, beta: 1.0, ..params() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let left = (0..n).filter(|_| inst.walk_with(&mut rng).path().unwrap()[0] == ArcId(0)).count() as f64;
        let right = n as f64 - left;
        let expect = n as f64 / 2.0;
        let chi2 = (left - expect).powi(2) / expect + (right - expect).powi(2) / expect;
        // χ² with one degree of freedom: p > 0.01 iff the statistic is below 6.635.
        assert!(chi2 < 6.635, "chi2 {chi2}");
    }

    #[test]
    fn dead_end_leaves_the_ant_stuck() {
        // colony -> a -> colony is the only way out of a; food hangs off colony via b only after b.
        let g = DirectedGraph::new(["c", "a", "f"], &[("c", "a"), ("a", "c"), ("f", "c")]).unwrap();
        let err = AcoInstance::new(g.clone(), vec![1.0; 3], VertexId(0), VertexId(2), params());
        assert!(matches!(err, Err(Error::NoPath { .. })));
        let g = DirectedGraph::new(["c", "a", "f"], &[("c", "a"), ("a", "c"), ("c", "f")]).unwrap();
        let mut inst = AcoInstance::new(g, vec![1.0; 3], VertexId(0), VertexId(2), params()).unwrap();
        inst.set_pheromone(vec![0.0, 0.0, 0.0]).unwrap();
        let walks: Vec<AntWalk> = (0..200).map(|s| inst.ant_walk(s)).collect();
        assert!(walks.contains(&AntWalk::Stuck(vec![ArcId(0)])));
        assert!(walks.contains(&AntWalk::Complete(vec![ArcId(2)])));
    }

    #[test]
    fn deposit_examples() {
        let g = DirectedGraph::new(["c", "a", "f"], &[("c", "a"), ("a", "f")]).unwrap();
        let mut inst = AcoInstance::new(g, vec![2.0, 2.0], VertexId(0), VertexId(2), params()).unwrap();
        inst.deposit(&[ArcId(0), ArcId(1)]).unwrap();
        assert_eq!(inst.pheromone(), &[0.25, 0.25]);
        assert_eq!(inst.total_pheromone(), 1.0);
        inst.deposit(&[ArcId(0), ArcId(1)]).unwrap();
        assert_eq!(inst.pheromone(), &[0.5, 0.5]);
        assert!(inst.deposit(&[ArcId(0)]).is_err());

        let mut d = AcoInstance::diamond(2.0, 3.0, params()).unwrap();
        d.deposit(&[ArcId(0), ArcId(1)]).unwrap();
        d.deposit(&[ArcId(2), ArcId(3)]).unwrap();
        assert_eq!(d.pheromone()[0], 0.5);
        assert!((d.pheromone()[2] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn evaporation_examples() {
        let mut inst = AcoInstance::chain(2, AcoParams { evaporation: 0.0, initial: 1.0, ..params() }).unwrap();
        inst.evaporate(3.0).unwrap();
        assert_eq!(inst.pheromone(), &[1.0]);
        let mut inst = AcoInstance::chain(2, AcoParams { evaporation: 0.5, initial: 1.0, ..params() }).unwrap();
        inst.evaporate(1.0).unwrap();
        assert_eq!(inst.pheromone(), &[0.5]);
        assert!(inst.evaporate(-1.0).is_err());
    }

    #[test]
    fn fixed_deposit_converges_to_geometric_limit() {
        // τ ← (1 - e) τ + D reaches D / e; deposit D = Q / L on the single arc.
        let e = 0.2;
        let mut inst = AcoInstance::chain(2, AcoParams { evaporation: e, ants: 1, ..params() }).unwrap();
        inst.run_colony(400, 0).unwrap();
        assert!((inst.pheromone()[0] - 1.0 / e).abs() < 1e-9);
    }

    #[test]
    fn colony_examples() {
        let mut chain = AcoInstance::chain(3, params()).unwrap();
        let trace = chain.run_colony(5, 1).unwrap();
        assert!(trace.records.iter().all(|r| r.modal_mass == 1.0 && r.support == 1.0));
        let q = separation_quality(&trace).unwrap();
        assert_eq!(q.support_nonincreasing, 1.0);

        let mut idle = AcoInstance::diamond(2.0, 3.0, AcoParams { ants: 0, initial: 1.0, ..params() }).unwrap();
        let trace = idle.run_colony(3, 0).unwrap();
        assert!(trace.records.iter().all(|r| r.completed == 0));
        assert!((idle.pheromone()[0] - 0.9f64.powi(3)).abs() < 1e-15);
        assert!(AcoInstance::chain(3, params()).unwrap().run_colony(0, 0).is_err());
    }

    #[test]
    fn runs_are_seed_deterministic_and_running_best_never_worsens() {
        let run = |seed| AcoInstance::random_dag(8, 0.4, 3, params()).unwrap().run_colony(50, seed).unwrap();
        let a = run(5);
        assert_eq!(a, run(5));
        let best: Vec<f64> = a.records.iter().filter_map(|r| r.running_best).collect();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert!(a.pheromone.iter().flatten().all(|&t| t >= 0.0));
    }

    #[test]
    fn small_payload_keeps_pheromone_nearly_static() {
        let mut inst = AcoInstance::diamond(2.0, 3.0, AcoParams { payload: 1e-9, evaporation: 0.0, ..params() }).unwrap();
        let q = separation_quality(&inst.run_colony(10, 0).unwrap()).unwrap();
        assert!(q.relative_change.iter().all(|&c| (c - params().ants as f64).abs() < 1e-6));
        let change: f64 = inst.pheromone().iter().sum();
        assert!(change < 1e-6);
    }

    #[test]
    fn oracle_examples() {
        let d = AcoInstance::diamond(2.0, 3.0, params()).unwrap();
        assert_eq!(shortest_path_oracle(d.graph(), d.lengths(), d.colony(), d.food()).unwrap(), vec![ArcId(0), ArcId(1)]);
        let tie = AcoInstance::diamond(2.0, 2.0, params()).unwrap();
        assert_eq!(shortest_path_oracle(tie.graph(), tie.lengths(), tie.colony(), tie.food()).unwrap(), vec![ArcId(0), ArcId(1)]);
        let g = DirectedGraph::new(["a", "b", "c"], &[("a", "b")]).unwrap();
        assert!(matches!(shortest_path_oracle(&g, &[1.0], VertexId(0), VertexId(2)), Err(Error::NoPath { .. })));
    }

    #[test]
    fn file_round_trip() {
        let inst = AcoInstance::random_dag(6, 0.5, 1, params()).unwrap();
        let text = serde_json::to_string(&inst.to_file()).unwrap();
        assert_eq!(AcoInstance::from_json_str(&text).unwrap(), inst);
        let bad = r#"{"vertices":["c","f"],"arcs":[["c","f"]],"lengths":{},"colony":"c","food":"f"}"#;
        assert!(AcoInstance::from_json_str(bad).is_err());
    }

    #[test]
    fn shorter_branch_wins_on_the_diamond() {
        let wins = (0..20)
            .filter(|&s| {
                let mut d = AcoInstance::diamond(2.0, 3.0, params()).unwrap();
                d.run_colony(200, s).unwrap().final_modal_path() == Some(&[ArcId(0), ArcId(1)][..])
            })
            .count();
        assert!(wins >= 18, "{wins}/20");
    }

    /// Every simple colony-to-food path, for a brute-force oracle.
    fn all_paths(g: &DirectedGraph, at: VertexId, to: VertexId, seen: &mut Vec<VertexId>, path: &mut Vec<ArcId>, out: &mut Vec<Vec<ArcId>>) {
        if at == to {
            out.push(path.clone());
            return;
        }
        for &e in g.outgoing(at) {
            let w = g.head(e);
            if !seen.contains(&w) {
                seen.push(w);
                path.push(e);
                all_paths(g, w, to, seen, path, out);
                path.pop();
                seen.pop();
            }
        }
    }

    proptest! {
        #[test]
        fn oracle_matches_brute_force(seed in any::<u64>(), n in 3usize..=7) {
            let inst = AcoInstance::random_dag(n, 0.5, seed, params()).unwrap();
            let mut paths = Vec::new();
            all_paths(inst.graph(), inst.colony(), inst.food(), &mut vec![inst.colony()], &mut Vec::new(), &mut paths);
            let best = paths
                .iter()
                .min_by(|a, b| inst.path_length(a).total_cmp(&inst.path_length(b)).then_with(|| a.cmp(b)))
                .unwrap();
            let got = shortest_path_oracle(inst.graph(), inst.lengths(), inst.colony(), inst.food()).unwrap();
            prop_assert_eq!(&got, best);
        }

        #[test]
        fn one_ant_deposits_exactly_its_payload(seed in any::<u64>(), q in 0.01f64..10.0) {
            let mut inst = AcoInstance::random_dag(8, 0.4, seed, AcoParams { payload: q, ..params() }).unwrap();
            if let AntWalk::Complete(path) = inst.ant_walk(seed) {
                let before = inst.total_pheromone();
                inst.deposit(&path).unwrap();
                prop_assert!((inst.total_pheromone() - before - q).abs() <= 1e-12 * q.max(1.0));
            }
        }

        #[test]
        fn stronger_trail_is_more_likely(extra in 0.01f64..5.0, base in 0.0f64..2.0) {
            let mut d = AcoInstance::diamond(2.0, 2.0, params()).unwrap();
            d.set_pheromone(vec![base + extra, base + extra, base, base]).unwrap();
            let probs = d.choice_probabilities(d.colony(), &[true, false, false, false]);
            prop_assert!(probs[0].1 > probs[1].1);
        }
    }
}
