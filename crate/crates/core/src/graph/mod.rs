//! Computing graphs and the pass that inserts quantizing vertices.

mod format;
mod qag;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use qag::{qag_transform, QagOutput};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown vertex '{0}'")]
    UnknownVertex(String),
    #[error("duplicate vertex '{0}'")]
    DuplicateVertex(String),
    #[error("invalid vertex id '{0}'")]
    InvalidId(String),
    #[error("slot {slot} of '{dst}' already has an input")]
    DuplicateSlot { dst: String, slot: usize },
    #[error("graph has a cycle through '{0}'")]
    Cyclic(String),
    #[error("graph is not connected ({0} components)")]
    Disconnected(usize),
    #[error("graph is empty")]
    Empty,
    #[error("data vertex '{0}' cannot be an expensive vertex")]
    DataInExpensiveSet(String),
    #[error("vertex '{id}': {msg}")]
    KindViolation { id: String, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpType {
    FC,
    Conv,
    ReLU,
    Add,
    BatchNormLike,
    SoftmaxCE,
    Quantize,
}

impl OpType {
    pub const ALL: [OpType; 7] = [
        OpType::FC,
        OpType::Conv,
        OpType::ReLU,
        OpType::Add,
        OpType::BatchNormLike,
        OpType::SoftmaxCE,
        OpType::Quantize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpType::FC => "fc",
            OpType::Conv => "conv",
            OpType::ReLU => "relu",
            OpType::Add => "add",
            OpType::BatchNormLike => "batchnorm",
            OpType::SoftmaxCE => "softmaxce",
            OpType::Quantize => "quantize",
        }
    }

    /// Conv and FC dominate cost and are quantized by default.
    pub fn is_expensive(self) -> bool {
        matches!(self, OpType::FC | OpType::Conv)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertexKind {
    Data,
    Op(OpType),
}

impl VertexKind {
    pub fn op(self) -> Option<OpType> {
        match self {
            VertexKind::Data => None,
            VertexKind::Op(o) => Some(o),
        }
    }
}

impl fmt::Display for VertexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VertexKind::Data => f.write_str("data"),
            VertexKind::Op(o) => f.write_str(o.name()),
        }
    }
}

impl FromStr for VertexKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.to_ascii_lowercase();
        if s == "data" {
            return Ok(VertexKind::Data);
        }
        OpType::ALL
            .into_iter()
            .find(|o| o.name() == s || (s == "matmul" && *o == OpType::FC))
            .map(VertexKind::Op)
            .ok_or_else(|| format!("unknown vertex kind '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vertex {
    pub id: String,
    pub kind: VertexKind,
    pub attrs: BTreeMap<String, String>,
}

impl Vertex {
    pub fn new(id: impl Into<String>, kind: VertexKind) -> Self {
        Self {
            id: id.into(),
            kind,
            attrs: BTreeMap::new(),
        }
    }

    pub fn data(id: impl Into<String>) -> Self {
        Self::new(id, VertexKind::Data)
    }

    pub fn op(id: impl Into<String>, op: OpType) -> Self {
        Self::new(id, VertexKind::Op(op))
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.insert(key.into(), value.into());
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    pub fn is_op(&self, op: OpType) -> bool {
        self.kind == VertexKind::Op(op)
    }
}

/// A tensor flowing from `src` into input `slot` of `dst`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub slot: usize,
}

/// Problems found by [`Graph::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    Empty,
    Cycle { vertices: Vec<String> },
    Disconnected { components: usize },
    DataWithInputs(String),
    OpWithoutInputs(String),
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::Empty => write!(f, "graph has no vertices"),
            Diagnostic::Cycle { vertices } => write!(f, "cycle among {}", vertices.join(", ")),
            Diagnostic::Disconnected { components } => {
                write!(f, "graph has {components} disconnected components")
            }
            Diagnostic::DataWithInputs(v) => write!(f, "data vertex '{v}' has inputs"),
            Diagnostic::OpWithoutInputs(v) => write!(f, "operation vertex '{v}' has no inputs"),
        }
    }
}

impl From<Diagnostic> for GraphError {
    fn from(d: Diagnostic) -> Self {
        match d {
            Diagnostic::Empty => GraphError::Empty,
            Diagnostic::Cycle { vertices } => GraphError::Cyclic(vertices[0].clone()),
            Diagnostic::Disconnected { components } => GraphError::Disconnected(components),
            Diagnostic::DataWithInputs(id) => GraphError::KindViolation {
                id,
                msg: "data vertex has inputs".into(),
            },
            Diagnostic::OpWithoutInputs(id) => GraphError::KindViolation {
                id,
                msg: "operation vertex has no inputs".into(),
            },
        }
    }
}

/// Directed multigraph `G(V, E)` keyed by vertex id; every `(dst, slot)`
/// holds at most one edge.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Graph {
    vertices: BTreeMap<String, Vertex>,
    inputs: BTreeMap<String, BTreeMap<usize, String>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(|c| c.is_whitespace() || c == '=')
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, v: Vertex) -> Result<(), GraphError> {
        if !valid_id(&v.id) {
            return Err(GraphError::InvalidId(v.id));
        }
        if self.vertices.contains_key(&v.id) {
            return Err(GraphError::DuplicateVertex(v.id));
        }
        self.vertices.insert(v.id.clone(), v);
        Ok(())
    }

    pub fn add_edge(
        &mut self,
        src: impl Into<String>,
        dst: impl Into<String>,
        slot: usize,
    ) -> Result<(), GraphError> {
        let (src, dst) = (src.into(), dst.into());
        for id in [&src, &dst] {
            if !self.vertices.contains_key(id) {
                return Err(GraphError::UnknownVertex(id.clone()));
            }
        }
        let slots = self.inputs.entry(dst.clone()).or_default();
        if slots.contains_key(&slot) {
            return Err(GraphError::DuplicateSlot { dst, slot });
        }
        slots.insert(slot, src);
        Ok(())
    }

    /// Adds an edge into the lowest free slot of `dst`.
    pub fn connect(&mut self, src: &str, dst: &str) -> Result<usize, GraphError> {
        let slot = self
            .inputs
            .get(dst)
            .and_then(|s| s.keys().next_back())
            .map_or(0, |k| k + 1);
        self.add_edge(src, dst, slot)?;
        Ok(slot)
    }

    pub fn vertex(&self, id: &str) -> Option<&Vertex> {
        self.vertices.get(id)
    }

    pub fn vertex_mut(&mut self, id: &str) -> Option<&mut Vertex> {
        self.vertices.get_mut(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vertices.contains_key(id)
    }

    /// Vertices in id order.
    pub fn vertices(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.values()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.inputs.values().map(BTreeMap::len).sum()
    }

    /// Edges ordered by `(dst, slot)`.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.inputs.iter().flat_map(|(dst, slots)| {
            slots.iter().map(move |(&slot, src)| Edge {
                src: src.clone(),
                dst: dst.clone(),
                slot,
            })
        })
    }

    /// In-edges of `id` ordered by slot.
    pub fn in_edges(&self, id: &str) -> Vec<Edge> {
        self.inputs
            .get(id)
            .map(|slots| {
                slots
                    .iter()
                    .map(|(&slot, src)| Edge {
                        src: src.clone(),
                        dst: id.to_string(),
                        slot,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn out_edges(&self, id: &str) -> Vec<Edge> {
        self.edges().filter(|e| e.src == id).collect()
    }

    /// Source feeding `slot` of `id`.
    pub fn input(&self, id: &str, slot: usize) -> Option<&str> {
        self.inputs.get(id)?.get(&slot).map(String::as_str)
    }

    pub fn in_degree(&self, id: &str) -> Result<usize, GraphError> {
        self.require(id)?;
        Ok(self.inputs.get(id).map_or(0, BTreeMap::len))
    }

    pub fn out_degree(&self, id: &str) -> Result<usize, GraphError> {
        self.require(id)?;
        Ok(self
            .inputs
            .values()
            .flat_map(BTreeMap::values)
            .filter(|s| *s == id)
            .count())
    }

    fn require(&self, id: &str) -> Result<&Vertex, GraphError> {
        self.vertices
            .get(id)
            .ok_or_else(|| GraphError::UnknownVertex(id.to_string()))
    }

    /// Conv and FC vertices.
    pub fn default_expensive(&self) -> BTreeSet<String> {
        self.vertices()
            .filter(|v| v.kind.op().is_some_and(OpType::is_expensive))
            .map(|v| v.id.clone())
            .collect()
    }

    pub fn ids_of(&self, op: OpType) -> Vec<String> {
        self.vertices()
            .filter(|v| v.is_op(op))
            .map(|v| v.id.clone())
            .collect()
    }

    fn successors(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut succ: BTreeMap<&str, Vec<&str>> =
            self.vertices.keys().map(|k| (k.as_str(), Vec::new())).collect();
        for (dst, slots) in &self.inputs {
            for src in slots.values() {
                succ.get_mut(src.as_str()).unwrap().push(dst.as_str());
            }
        }
        succ
    }

    /// Kahn's algorithm with ties broken by id. Returns the order and the
    /// vertices left over when a cycle blocks progress.
    fn kahn(&self) -> (Vec<String>, Vec<String>) {
        let succ = self.successors();
        let mut indeg: BTreeMap<&str, usize> = self
            .vertices
            .keys()
            .map(|k| (k.as_str(), self.inputs.get(k).map_or(0, BTreeMap::len)))
            .collect();
        let mut ready: BTreeSet<&str> =
            indeg.iter().filter(|(_, &d)| d == 0).map(|(&k, _)| k).collect();
        let mut order = Vec::with_capacity(self.vertices.len());
        while let Some(v) = ready.pop_first() {
            order.push(v.to_string());
            for &w in &succ[v] {
                let d = indeg.get_mut(w).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(w);
                }
            }
        }
        let rest = indeg
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(k, _)| k.to_string())
            .collect();
        (order, rest)
    }

    pub fn topo_order(&self) -> Result<Vec<String>, GraphError> {
        let (order, rest) = self.kahn();
        match rest.first() {
            Some(v) => Err(GraphError::Cyclic(v.clone())),
            None => Ok(order),
        }
    }

    pub fn is_acyclic(&self) -> bool {
        self.kahn().1.is_empty()
    }

    /// Number of weakly connected components.
    pub fn component_count(&self) -> usize {
        let mut adj: BTreeMap<&str, Vec<&str>> =
            self.vertices.keys().map(|k| (k.as_str(), Vec::new())).collect();
        for (dst, slots) in &self.inputs {
            for src in slots.values() {
                adj.get_mut(src.as_str()).unwrap().push(dst);
                adj.get_mut(dst.as_str()).unwrap().push(src);
            }
        }
        let mut seen = BTreeSet::new();
        let mut components = 0;
        for start in adj.keys() {
            if !seen.insert(*start) {
                continue;
            }
            components += 1;
            let mut queue = VecDeque::from([*start]);
            while let Some(v) = queue.pop_front() {
                for &w in &adj[v] {
                    if seen.insert(w) {
                        queue.push_back(w);
                    }
                }
            }
        }
        components
    }

    /// All structural problems; empty means valid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.vertices.is_empty() {
            out.push(Diagnostic::Empty);
            return out;
        }
        let (_, rest) = self.kahn();
        if !rest.is_empty() {
            out.push(Diagnostic::Cycle { vertices: rest });
        }
        let components = self.component_count();
        if components > 1 {
            out.push(Diagnostic::Disconnected { components });
        }
        for v in self.vertices() {
            let indeg = self.inputs.get(&v.id).map_or(0, BTreeMap::len);
            match v.kind {
                VertexKind::Data if indeg > 0 => out.push(Diagnostic::DataWithInputs(v.id.clone())),
                VertexKind::Op(_) if indeg == 0 => {
                    out.push(Diagnostic::OpWithoutInputs(v.id.clone()))
                }
                _ => {}
            }
        }
        out
    }

    /// First diagnostic as an error.
    pub fn check(&self) -> Result<(), GraphError> {
        match self.validate().into_iter().next() {
            Some(d) => Err(d.into()),
            None => Ok(()),
        }
    }

    /// Removes every Quantize vertex, reconnecting its source directly to
    /// its consumers on the same slots.
    pub fn contract_quantizers(&self) -> Result<Graph, GraphError> {
        let quantizers: BTreeSet<&str> = self
            .vertices()
            .filter(|v| v.is_op(OpType::Quantize))
            .map(|v| v.id.as_str())
            .collect();
        let resolve = |start: &str| -> Result<String, GraphError> {
            let mut id = start.to_string();
            while quantizers.contains(id.as_str()) {
                id = self
                    .input(&id, 0)
                    .ok_or_else(|| GraphError::KindViolation {
                        id: id.clone(),
                        msg: "quantizer without input".into(),
                    })?
                    .to_string();
            }
            Ok(id)
        };
        let mut g = Graph::new();
        for v in self.vertices().filter(|v| !quantizers.contains(v.id.as_str())) {
            g.add_vertex(v.clone())?;
        }
        for e in self.edges() {
            if quantizers.contains(e.dst.as_str()) {
                continue;
            }
            g.add_edge(resolve(&e.src)?, e.dst, e.slot)?;
        }
        Ok(g)
    }
}
