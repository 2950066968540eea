//! Directed-graph substrate: agents are vertices, signals travel along arcs.
//!
//! Arc identifiers are zero-based positions in the arc list, so parallel arcs
//! are distinct. Self-loops are rejected at construction.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArcId(pub usize);

impl fmt::Display for ArcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Label of an environment vertex in a two-way network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvRole {
    Entry,
    Exit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    names: Vec<String>,
    index: HashMap<String, VertexId>,
    arcs: Vec<(VertexId, VertexId)>,
    incoming: Vec<Vec<ArcId>>,
    outgoing: Vec<Vec<ArcId>>,
    environment: BTreeMap<VertexId, Option<EnvRole>>,
}

impl DirectedGraph {
    /// Builds a graph from vertex names and `(tail, head)` name pairs.
    pub fn new<V, S>(vertices: V, arcs: &[(&str, &str)]) -> Result<Self>
    where
        V: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let owned: Vec<(String, String)> = arcs
            .iter()
            .map(|(t, h)| (t.to_string(), h.to_string()))
            .collect();
        Self::from_parts(vertices.into_iter().map(Into::into).collect(), &owned)
    }

    fn from_parts(names: Vec<String>, arcs: &[(String, String)]) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), VertexId(i)).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate vertex `{name}`")));
            }
        }
        let mut graph = DirectedGraph {
            incoming: vec![Vec::new(); names.len()],
            outgoing: vec![Vec::new(); names.len()],
            names,
            index,
            arcs: Vec::with_capacity(arcs.len()),
            environment: BTreeMap::new(),
        };
        for (tail, head) in arcs {
            let t = graph.lookup_endpoint(tail)?;
            let h = graph.lookup_endpoint(head)?;
            if t == h {
                return Err(Error::InvalidGraph(format!("self-loop at `{tail}`")));
            }
            let id = ArcId(graph.arcs.len());
            graph.arcs.push((t, h));
            graph.outgoing[t.0].push(id);
            graph.incoming[h.0].push(id);
        }
        Ok(graph)
    }

    fn lookup_endpoint(&self, name: &str) -> Result<VertexId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidGraph(format!("arc endpoint `{name}` is not a vertex")))
    }

    /// Flags `v` as an environment vertex, optionally labelled entry or exit.
    pub fn set_environment(&mut self, v: VertexId, role: Option<EnvRole>) {
        self.environment.insert(v, role);
    }

    pub fn with_environment(mut self, name: &str, role: Option<EnvRole>) -> Result<Self> {
        let v = self.vertex(name)?;
        self.set_environment(v, role);
        Ok(self)
    }

    pub fn vertex(&self, name: &str) -> Result<VertexId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownVertex(name.to_string()))
    }

    pub fn name(&self, v: VertexId) -> &str {
        &self.names[v.0]
    }

    pub fn vertex_count(&self) -> usize {
        self.names.len()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.names.len()).map(VertexId)
    }

    pub fn arc_ids(&self) -> impl Iterator<Item = ArcId> + '_ {
        (0..self.arcs.len()).map(ArcId)
    }

    /// `(tail, head)` of an arc.
    pub fn arc(&self, e: ArcId) -> (VertexId, VertexId) {
        self.arcs[e.0]
    }

    pub fn tail(&self, e: ArcId) -> VertexId {
        self.arcs[e.0].0
    }

    pub fn head(&self, e: ArcId) -> VertexId {
        self.arcs[e.0].1
    }

    /// Human-readable `tail->head` label.
    pub fn arc_label(&self, e: ArcId) -> String {
        let (t, h) = self.arc(e);
        format!("{}->{}", self.name(t), self.name(h))
    }

    /// First arc from `tail` to `head`, if any.
    pub fn find_arc(&self, tail: VertexId, head: VertexId) -> Option<ArcId> {
        self.outgoing[tail.0]
            .iter()
            .copied()
            .find(|&e| self.head(e) == head)
    }

    /// `T(v)` (arcs into `v`) and `F(v)` (arcs out of `v`).
    pub fn incidence(&self, v: VertexId) -> Result<(&[ArcId], &[ArcId])> {
        if v.0 >= self.names.len() {
            return Err(Error::UnknownVertex(format!("#{}", v.0)));
        }
        Ok((&self.incoming[v.0], &self.outgoing[v.0]))
    }

    pub fn incoming(&self, v: VertexId) -> &[ArcId] {
        &self.incoming[v.0]
    }

    pub fn outgoing(&self, v: VertexId) -> &[ArcId] {
        &self.outgoing[v.0]
    }

    pub fn is_environment(&self, v: VertexId) -> bool {
        self.environment.contains_key(&v)
    }

    pub fn role(&self, v: VertexId) -> Option<EnvRole> {
        self.environment.get(&v).copied().flatten()
    }

    pub fn environment(&self) -> impl Iterator<Item = (VertexId, Option<EnvRole>)> + '_ {
        self.environment.iter().map(|(v, r)| (*v, *r))
    }

    pub fn vertices_with_role(&self, role: EnvRole) -> Vec<VertexId> {
        self.environment
            .iter()
            .filter(|(_, r)| **r == Some(role))
            .map(|(v, _)| *v)
            .collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: GraphSpec = serde_json::from_str(text)?;
        spec.build()
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            vertices: self.names.clone(),
            arcs: self
                .arcs
                .iter()
                .map(|(t, h)| [self.name(*t).to_string(), self.name(*h).to_string()])
                .collect(),
            environment: self
                .environment
                .iter()
                .map(|(v, r)| (self.name(*v).to_string(), *r))
                .collect(),
        }
    }
}

/// Serialized graph: `{"vertices":[...], "arcs":[[tail,head],...], "environment":{v: "entry"|"exit"|null}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub vertices: Vec<String>,
    #[serde(default)]
    pub arcs: Vec<[String; 2]>,
    #[serde(default)]
    pub environment: BTreeMap<String, Option<EnvRole>>,
}

impl GraphSpec {
    pub fn build(&self) -> Result<DirectedGraph> {
        let arcs: Vec<(String, String)> = self
            .arcs
            .iter()
            .map(|[t, h]| (t.clone(), h.clone()))
            .collect();
        let mut graph = DirectedGraph::from_parts(self.vertices.clone(), &arcs)?;
        for (name, role) in &self.environment {
            let v = graph.vertex(name)?;
            graph.set_environment(v, *role);
        }
        Ok(graph)
    }
}
