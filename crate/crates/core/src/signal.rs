//! Signal spaces and arc-indexed signal vectors.
//!
//! A network carries one [`SignalSpace`]. Distances between vectors combine
//! per-arc distances by summation (L1).

use std::collections::BTreeSet;

use rand::seq::IteratorRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArcId;

/// A value carried by one arc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Real(Vec<f64>),
    Set(BTreeSet<u32>),
    Distribution(Vec<f64>),
    Pair(Box<Signal>, Box<Signal>),
}

impl Signal {
    pub fn scalar(x: f64) -> Self {
        Signal::Real(vec![x])
    }

    pub fn pair(a: Signal, b: Signal) -> Self {
        Signal::Pair(Box::new(a), Box::new(b))
    }

    pub fn set<I: IntoIterator<Item = u32>>(items: I) -> Self {
        Signal::Set(items.into_iter().collect())
    }

    /// Components of a real signal, empty for other kinds.
    pub fn reals(&self) -> &[f64] {
        match self {
            Signal::Real(v) | Signal::Distribution(v) => v,
            _ => &[],
        }
    }

    /// First component of a real signal; `NaN` when absent.
    pub fn first_real(&self) -> f64 {
        self.reals().first().copied().unwrap_or(f64::NAN)
    }

    pub fn forward(&self) -> Option<&Signal> {
        match self {
            Signal::Pair(a, _) => Some(a),
            _ => None,
        }
    }

    pub fn backward(&self) -> Option<&Signal> {
        match self {
            Signal::Pair(_, b) => Some(b),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Signal::Real(v) | Signal::Distribution(v) => v.iter().all(|x| x.is_finite()),
            Signal::Set(_) => true,
            Signal::Pair(a, b) => a.is_finite() && b.is_finite(),
        }
    }
}

/// Metric space of signals, optionally ordered and measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SignalSpace {
    /// Fixed-width real vectors, L1 distance, componentwise order.
    Real { width: usize },
    /// Finite subsets of `0..universe`, counting measure, order by inclusion.
    Set { universe: u32 },
    /// Empirical distributions over `outcomes`, total-variation distance, no order.
    Distribution { outcomes: usize },
    /// Forward/backward signal pairs of a two-way network.
    Product {
        forward: Box<SignalSpace>,
        backward: Box<SignalSpace>,
    },
}

impl SignalSpace {
    pub fn scalar() -> Self {
        SignalSpace::Real { width: 1 }
    }

    pub fn product(forward: SignalSpace, backward: SignalSpace) -> Self {
        SignalSpace::Product {
            forward: Box::new(forward),
            backward: Box::new(backward),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SignalSpace::Real { .. } => "real",
            SignalSpace::Set { .. } => "set",
            SignalSpace::Distribution { .. } => "distribution",
            SignalSpace::Product { .. } => "product",
        }
    }

    pub fn is_ordered(&self) -> bool {
        match self {
            SignalSpace::Real { .. } | SignalSpace::Set { .. } => true,
            SignalSpace::Distribution { .. } => false,
            SignalSpace::Product { forward, backward } => {
                forward.is_ordered() && backward.is_ordered()
            }
        }
    }

    /// Distance `rho(a, b)`. Signals of the wrong kind are infinitely far apart.
    pub fn distance(&self, a: &Signal, b: &Signal) -> f64 {
        match (self, a, b) {
            (SignalSpace::Real { .. }, Signal::Real(x), Signal::Real(y)) if x.len() == y.len() => {
                x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum()
            }
            (SignalSpace::Set { .. }, Signal::Set(x), Signal::Set(y)) => {
                x.symmetric_difference(y).count() as f64
            }
            (SignalSpace::Distribution { .. }, Signal::Distribution(x), Signal::Distribution(y))
                if x.len() == y.len() =>
            {
                0.5 * x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>()
            }
            (SignalSpace::Product { forward, backward }, Signal::Pair(a1, a2), Signal::Pair(b1, b2)) => {
                forward.distance(a1, b1) + backward.distance(a2, b2)
            }
            _ => f64::INFINITY,
        }
    }

    /// Strict order `a < b`; `None` when the space is unordered.
    pub fn precedes(&self, a: &Signal, b: &Signal) -> Option<bool> {
        Some(self.weakly_precedes(a, b)? && a != b)
    }

    fn weakly_precedes(&self, a: &Signal, b: &Signal) -> Option<bool> {
        match (self, a, b) {
            (SignalSpace::Real { .. }, Signal::Real(x), Signal::Real(y)) => {
                Some(x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p <= q))
            }
            (SignalSpace::Set { .. }, Signal::Set(x), Signal::Set(y)) => Some(x.is_subset(y)),
            (SignalSpace::Distribution { .. }, _, _) => None,
            (SignalSpace::Product { forward, backward }, Signal::Pair(a1, a2), Signal::Pair(b1, b2)) => {
                Some(forward.weakly_precedes(a1, b1)? && backward.weakly_precedes(a2, b2)?)
            }
            (space, _, _) if !space.is_ordered() => None,
            _ => Some(false),
        }
    }

    /// Measure of a signal, defined for set signals (element count).
    pub fn measure(&self, a: &Signal) -> Option<f64> {
        match (self, a) {
            (SignalSpace::Set { .. }, Signal::Set(x)) => Some(x.len() as f64),
            _ => None,
        }
    }

    pub fn zero(&self) -> Signal {
        match self {
            SignalSpace::Real { width } => Signal::Real(vec![0.0; *width]),
            SignalSpace::Set { .. } => Signal::Set(BTreeSet::new()),
            SignalSpace::Distribution { outcomes } => {
                Signal::Distribution(vec![1.0 / (*outcomes).max(1) as f64; *outcomes])
            }
            SignalSpace::Product { forward, backward } => {
                Signal::pair(forward.zero(), backward.zero())
            }
        }
    }

    pub fn contains(&self, a: &Signal) -> bool {
        match (self, a) {
            (SignalSpace::Real { width }, Signal::Real(x)) => x.len() == *width,
            (SignalSpace::Set { universe }, Signal::Set(x)) => x.iter().all(|e| e < universe),
            (SignalSpace::Distribution { outcomes }, Signal::Distribution(p)) => {
                p.len() == *outcomes
                    && p.iter().all(|q| *q >= 0.0)
                    && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
            }
            (SignalSpace::Product { forward, backward }, Signal::Pair(a1, a2)) => {
                forward.contains(a1) && backward.contains(a2)
            }
            _ => false,
        }
    }

    /// A random signal at distance at most `size` from `a`.
    pub fn perturb<R: Rng + ?Sized>(&self, a: &Signal, size: f64, rng: &mut R) -> Signal {
        match (self, a) {
            (SignalSpace::Real { .. }, Signal::Real(x)) => {
                let dir: Vec<f64> = x.iter().map(|_| rng.random_range(-1.0..=1.0)).collect();
                let norm: f64 = dir.iter().map(|d| d.abs()).sum();
                if norm == 0.0 {
                    return a.clone();
                }
                Signal::Real(x.iter().zip(&dir).map(|(v, d)| v + size * d / norm).collect())
            }
            (SignalSpace::Set { universe }, Signal::Set(x)) => {
                let flips = size.floor().max(0.0) as usize;
                let mut out = x.clone();
                for e in (0..*universe).choose_multiple(rng, flips) {
                    if !out.remove(&e) {
                        out.insert(e);
                    }
                }
                Signal::Set(out)
            }
            (SignalSpace::Distribution { outcomes }, Signal::Distribution(p)) => {
                let t = size.clamp(0.0, 1.0);
                let target = rng.random_range(0..(*outcomes).max(1));
                Signal::Distribution(
                    p.iter()
                        .enumerate()
                        .map(|(i, q)| (1.0 - t) * q + if i == target { t } else { 0.0 })
                        .collect(),
                )
            }
            (SignalSpace::Product { forward, backward }, Signal::Pair(a1, a2)) => {
                let split = rng.random_range(0.0..=1.0);
                Signal::pair(
                    forward.perturb(a1, size * split, rng),
                    backward.perturb(a2, size * (1.0 - split), rng),
                )
            }
            _ => a.clone(),
        }
    }

    /// A random signal strictly above `a` in the order, at distance at most `size`.
    ///
    /// `Ok(None)` when no such signal exists (a full set, or `size < 1` for sets).
    pub fn increase<R: Rng + ?Sized>(
        &self,
        a: &Signal,
        size: f64,
        rng: &mut R,
    ) -> Result<Option<Signal>> {
        match (self, a) {
            (SignalSpace::Real { .. }, Signal::Real(x)) => {
                if size <= 0.0 || x.is_empty() {
                    return Ok(None);
                }
                let dir: Vec<f64> = x.iter().map(|_| rng.random_range(0.05..=1.0)).collect();
                let norm: f64 = dir.iter().sum();
                Ok(Some(Signal::Real(
                    x.iter().zip(&dir).map(|(v, d)| v + size * d / norm).collect(),
                )))
            }
            (SignalSpace::Set { universe }, Signal::Set(x)) => {
                let room = (size.floor().max(0.0)) as usize;
                let missing: Vec<u32> = (0..*universe).filter(|e| !x.contains(e)).collect();
                if room == 0 || missing.is_empty() {
                    return Ok(None);
                }
                let count = rng.random_range(1..=room.min(missing.len()));
                let mut out = x.clone();
                out.extend(missing.into_iter().choose_multiple(rng, count));
                Ok(Some(Signal::Set(out)))
            }
            (SignalSpace::Product { forward, backward }, Signal::Pair(a1, a2)) => {
                let f = forward.increase(a1, size / 2.0, rng)?;
                let b = backward.increase(a2, size / 2.0, rng)?;
                Ok(match (f, b) {
                    (Some(f), Some(b)) => Some(Signal::pair(f, b)),
                    _ => None,
                })
            }
            (space, _) if !space.is_ordered() => Err(Error::UnorderedSpace(space.name().into())),
            _ => Ok(None),
        }
    }

    /// Space of one side of a product space; the space itself otherwise.
    pub fn part(&self, part: crate::agent::Part) -> &SignalSpace {
        use crate::agent::Part;
        match (self, part) {
            (SignalSpace::Product { forward, .. }, Part::Forward) => forward,
            (SignalSpace::Product { backward, .. }, Part::Backward) => backward,
            _ => self,
        }
    }
}

/// Signals on a set of arcs, kept sorted by arc id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignalVector {
    arcs: Vec<ArcId>,
    values: Vec<Signal>,
}

impl SignalVector {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a vector from `(arc, signal)` pairs; duplicate arcs are rejected.
    pub fn from_pairs<I: IntoIterator<Item = (ArcId, Signal)>>(pairs: I) -> Result<Self> {
        let mut pairs: Vec<(ArcId, Signal)> = pairs.into_iter().collect();
        pairs.sort_by_key(|(e, _)| *e);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::domain("duplicate arc in signal vector"));
        }
        let (arcs, values) = pairs.into_iter().unzip();
        Ok(SignalVector { arcs, values })
    }

    /// Dense vector over arcs `0..values.len()`.
    pub fn dense(values: Vec<Signal>) -> Self {
        SignalVector {
            arcs: (0..values.len()).map(ArcId).collect(),
            values,
        }
    }

    /// Every arc in `0..n` set to `value`.
    pub fn filled(n: usize, value: Signal) -> Self {
        Self::dense(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn arcs(&self) -> &[ArcId] {
        &self.arcs
    }

    pub fn values(&self) -> &[Signal] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (ArcId, &Signal)> {
        self.arcs.iter().copied().zip(self.values.iter())
    }

    fn position(&self, e: ArcId) -> Option<usize> {
        if self.arcs.get(e.0) == Some(&e) {
            return Some(e.0);
        }
        self.arcs.binary_search(&e).ok()
    }

    pub fn get(&self, e: ArcId) -> Option<&Signal> {
        self.position(e).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, e: ArcId) -> Option<&mut Signal> {
        self.position(e).map(move |i| &mut self.values[i])
    }

    pub fn contains(&self, e: ArcId) -> bool {
        self.position(e).is_some()
    }

    /// Overwrites the value on an arc already in the index set.
    pub fn set(&mut self, e: ArcId, value: Signal) -> Result<()> {
        match self.get_mut(e) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(Error::domain(format!("arc {e} not in vector"))),
        }
    }

    /// `x_B` for `B` contained in this vector's index set.
    pub fn subvector(&self, arcs: &[ArcId]) -> Result<Self> {
        let pairs = arcs
            .iter()
            .map(|&e| match self.get(e) {
                Some(v) => Ok((e, v.clone())),
                None => Err(Error::domain(format!("arc {e} not in vector"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(pairs)
    }

    /// `x_A || x_B` for disjoint index sets.
    pub fn concat(&self, other: &SignalVector) -> Result<Self> {
        if other.arcs.iter().any(|&e| self.contains(e)) {
            return Err(Error::domain("concat of overlapping index sets"));
        }
        Self::from_pairs(self.iter().chain(other.iter()).map(|(e, v)| (e, v.clone())))
    }

    /// `x_A \ x'_B`: indexed by A, with arcs in A∩B taken from `other`.
    pub fn splice(&self, other: &SignalVector) -> Self {
        let mut out = self.clone();
        for (e, v) in other.iter() {
            if let Some(slot) = out.get_mut(e) {
                *slot = v.clone();
            }
        }
        out
    }

    pub fn same_index(&self, other: &SignalVector) -> bool {
        self.arcs == other.arcs
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Signal::is_finite)
    }
}

/// `rho_A(x_A, y_A)`: the sum of per-arc distances.
pub fn rho_set(space: &SignalSpace, x: &SignalVector, y: &SignalVector) -> Result<f64> {
    if !x.same_index(y) {
        return Err(Error::domain("signal vectors indexed by different arc sets"));
    }
    Ok(x.values.iter().zip(&y.values).map(|(a, b)| space.distance(a, b)).sum())
}

/// `rho` restricted to `arcs`, which must lie in both index sets.
pub fn rho_on(space: &SignalSpace, arcs: &[ArcId], x: &SignalVector, y: &SignalVector) -> Result<f64> {
    arcs.iter().try_fold(0.0, |acc, &e| match (x.get(e), y.get(e)) {
        (Some(a), Some(b)) => Ok(acc + space.distance(a, b)),
        _ => Err(Error::domain(format!("arc {e} missing from a vector"))),
    })
}
