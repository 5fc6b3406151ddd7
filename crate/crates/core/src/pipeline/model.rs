//! Executes a (quantized) computing graph on the autodiff tape.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use super::config::ModelSpec;
use super::{derive_seed, stream};
use crate::error::{Error, Result};
use crate::graph::{qag_transform, Graph, OpType, Vertex, VertexKind};
use crate::tensor::{Parameter, Tape, Tensor, Var};

/// Chain of fully connected layers with ReLU in between, ending in softmax
/// cross-entropy. Weight vertices are `w1, w2, …`, layers `fc1, fc2, …`.
pub fn mlp_graph(dims: &[usize]) -> Result<Graph> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("bad mlp widths {dims:?}")));
    }
    let mut g = Graph::new();
    g.add_vertex(Vertex::data("x").with_attr("role", "input").with_attr("shape", dims[0].to_string()))?;
    g.add_vertex(Vertex::data("y").with_attr("role", "label"))?;
    let mut prev = "x".to_string();
    let layers = dims.len() - 1;
    for i in 1..=layers {
        let (w, fc) = (format!("w{i}"), format!("fc{i}"));
        g.add_vertex(
            Vertex::data(&w)
                .with_attr("role", "weight")
                .with_attr("shape", format!("{}x{}", dims[i - 1], dims[i])),
        )?;
        g.add_vertex(Vertex::op(&fc, OpType::FC).with_attr("bias", "true"))?;
        g.add_edge(&prev, &fc, 0)?;
        g.add_edge(&w, &fc, 1)?;
        prev = fc;
        if i < layers {
            let r = format!("relu{i}");
            g.add_vertex(Vertex::op(&r, OpType::ReLU))?;
            g.add_edge(&prev, &r, 0)?;
            prev = r;
        }
    }
    g.add_vertex(Vertex::op("loss", OpType::SoftmaxCE))?;
    g.add_edge(&prev, "loss", 0)?;
    g.add_edge("y", "loss", 1)?;
    Ok(g)
}

pub fn load_model_graph(spec: &ModelSpec) -> Result<Graph> {
    match spec {
        ModelSpec::Mlp(d) => mlp_graph(d),
        ModelSpec::File(p) => Graph::load(p),
    }
}

/// Conv/FC vertices to quantize, optionally without the first and last in
/// topological order.
pub fn expensive_set(g: &Graph, exempt_first_last: bool) -> Result<BTreeSet<String>> {
    let mut ve = g.default_expensive();
    if exempt_first_last {
        let order: Vec<String> = g
            .topo_order()?
            .into_iter()
            .filter(|id| ve.contains(id))
            .collect();
        if let Some(first) = order.first() {
            ve.remove(first);
        }
        if let Some(last) = order.last() {
            ve.remove(last);
        }
    }
    Ok(ve)
}

/// A quantizing vertex of the executed graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Site {
    pub id: String,
    /// Original producer of the quantized tensor.
    pub source: String,
    pub is_weight: bool,
    /// Element count, per sample for activations.
    pub elements: usize,
}

/// How quantizing vertices behave during one forward pass.
pub trait SiteQuantizer {
    fn quantize(&mut self, tape: &mut Tape, site: &str, x: Var) -> Result<Var>;
}

/// Full precision: quantizers pass values through.
pub struct Identity;

impl SiteQuantizer for Identity {
    fn quantize(&mut self, _tape: &mut Tape, _site: &str, x: Var) -> Result<Var> {
        Ok(x)
    }
}

struct Recorder(BTreeMap<String, usize>);

impl SiteQuantizer for Recorder {
    fn quantize(&mut self, tape: &mut Tape, site: &str, x: Var) -> Result<Var> {
        self.0.insert(site.to_string(), tape.value(x).numel());
        Ok(x)
    }
}

pub struct Forward {
    pub loss: Var,
    pub logits: Var,
    /// Parameter name → var bound on the tape.
    pub params: BTreeMap<String, Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub graph: Graph,
    pub params: BTreeMap<String, Parameter>,
    pub sites: Vec<Site>,
    order: Vec<String>,
    input_dim: usize,
}

fn parse_shape(v: &Vertex) -> Result<Vec<usize>> {
    let s = v.attr("shape").ok_or_else(|| {
        Error::InvalidArgument(format!("vertex '{}' needs a shape attribute", v.id))
    })?;
    s.split('x')
        .map(|d| {
            d.parse().map_err(|_| {
                Error::InvalidArgument(format!("vertex '{}': bad shape '{s}'", v.id))
            })
        })
        .collect()
}

fn role(v: &Vertex) -> &str {
    v.attr("role").unwrap_or("")
}

impl Model {
    /// Prepares parameters for the executable graph `graph` (usually the
    /// output of the rewrite pass).
    pub fn new(graph: Graph, seed: u64) -> Result<Self> {
        graph.check()?;
        let order = graph.topo_order()?;
        let one = |r: &str| -> Result<&Vertex> {
            let found: Vec<&Vertex> = graph
                .vertices()
                .filter(|v| v.kind == VertexKind::Data && role(v) == r)
                .collect();
            match found.as_slice() {
                [v] => Ok(*v),
                _ => Err(Error::InvalidArgument(format!(
                    "graph needs exactly one data vertex with role={r}, found {}",
                    found.len()
                ))),
            }
        };
        let input = one("input")?;
        let input_dim = *parse_shape(input)?.last().unwrap_or(&0);
        one("label")?;
        if graph.ids_of(OpType::SoftmaxCE).len() != 1 {
            return Err(Error::InvalidArgument("graph needs exactly one softmaxce vertex".into()));
        }

        let mut params = BTreeMap::new();
        for (i, v) in graph.vertices().filter(|v| role(v) == "weight").enumerate() {
            let shape = parse_shape(v)?;
            let fan_in = shape.first().copied().unwrap_or(1).max(1);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::INIT, i as u64));
            let dist = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).unwrap();
            let n = shape.iter().product();
            let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
            params.insert(v.id.clone(), Parameter::new(Tensor::new(shape, data)?));
        }
        let mut model = Self {
            graph,
            params,
            sites: Vec::new(),
            order,
            input_dim,
        };
        for fc in model.graph.ids_of(OpType::FC) {
            if model.graph.vertex(&fc).and_then(|v| v.attr("bias")) == Some("true") {
                let w = model.resolve(model.graph.input(&fc, 1).unwrap_or_default());
                let units = model
                    .params
                    .get(&w)
                    .and_then(|p| p.value().shape().get(1).copied())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("'{fc}' has a bias but no weight input"))
                    })?;
                model
                    .params
                    .insert(format!("{fc}.bias"), Parameter::new(Tensor::zeros(&[1, units])));
            }
        }
        model.sites = model.probe_sites()?;
        Ok(model)
    }

    /// Builds the model from `spec`, rewriting it so that the inputs of the
    /// expensive vertices are quantized.
    pub fn build(spec: &ModelSpec, exempt_first_last: bool, seed: u64) -> Result<Self> {
        let g = load_model_graph(spec)?;
        let ve = expensive_set(&g, exempt_first_last)?;
        let out = qag_transform(&g, &ve)?;
        Model::new(out.graph, seed)
    }

    fn resolve(&self, id: &str) -> String {
        let mut id = id.to_string();
        while self.graph.vertex(&id).is_some_and(|v| v.is_op(OpType::Quantize)) {
            match self.graph.input(&id, 0) {
                Some(src) => id = src.to_string(),
                None => break,
            }
        }
        id
    }

    fn probe_sites(&self) -> Result<Vec<Site>> {
        let mut rec = Recorder(BTreeMap::new());
        let mut tape = Tape::new();
        let x = Tensor::zeros(&[1, self.input_dim]);
        self.forward(&mut tape, &x, &[0], &mut rec)?;
        let mut sites = Vec::new();
        for id in &self.order {
            if !self.graph.vertex(id).unwrap().is_op(OpType::Quantize) {
                continue;
            }
            let source = self.resolve(id);
            let is_weight = self.graph.vertex(&source).is_some_and(|v| role(v) == "weight");
            sites.push(Site {
                id: id.clone(),
                source,
                is_weight,
                elements: rec.0.get(id).copied().unwrap_or(0),
            });
        }
        Ok(sites)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn site(&self, id: &str) -> Option<&Site> {
        self.sites.iter().find(|s| s.id == id)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        labels: &[usize],
        quantizer: &mut dyn SiteQuantizer,
    ) -> Result<Forward> {
        let rows = features.dims2().map(|d| d.0).ok_or_else(|| Error::ShapeMismatch {
            op: "forward",
            lhs: features.shape().to_vec(),
            rhs: vec![0, self.input_dim],
        })?;
        if features.shape()[1] != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: features.shape().to_vec(),
                rhs: vec![rows, self.input_dim],
            });
        }
        let mut vals: BTreeMap<&str, Var> = BTreeMap::new();
        let mut params = BTreeMap::new();
        let mut result = None;
        let input_of = |vals: &BTreeMap<&str, Var>, id: &str, slot: usize| -> Result<Var> {
            let src = self.graph.input(id, slot).ok_or_else(|| {
                Error::InvalidArgument(format!("'{id}' is missing input slot {slot}"))
            })?;
            vals.get(src).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("'{src}' feeds '{id}' but has no value"))
            })
        };
        for id in &self.order {
            let v = self.graph.vertex(id).unwrap();
            let out = match v.kind {
                VertexKind::Data => match role(v) {
                    "input" => tape.leaf(features.clone()),
                    "weight" => {
                        let var = self.params[id].bind(tape);
                        params.insert(id.clone(), var);
                        var
                    }
                    _ => continue,
                },
                VertexKind::Op(op) => match op {
                    OpType::FC => {
                        let x = input_of(&vals, id, 0)?;
                        let w = input_of(&vals, id, 1)?;
                        let mut y = tape.matmul(x, w)?;
                        let bias_name = format!("{id}.bias");
                        if let Some(b) = self.params.get(&bias_name) {
                            let bv = b.bind(tape);
                            params.insert(bias_name, bv);
                            let ones = tape.leaf(Tensor::full(&[rows, 1], 1.0));
                            let bb = tape.matmul(ones, bv)?;
                            y = tape.add(y, bb)?;
                        }
                        y
                    }
                    OpType::Conv => {
                        return Err(Error::Runtime(format!(
                            "'{id}': convolution execution is not supported"
                        )))
                    }
                    OpType::ReLU => {
                        let x = input_of(&vals, id, 0)?;
                        tape.relu(x)?
                    }
                    OpType::Add => {
                        let a = input_of(&vals, id, 0)?;
                        let b = input_of(&vals, id, 1)?;
                        tape.add(a, b)?
                    }
                    OpType::BatchNormLike => {
                        let x = input_of(&vals, id, 0)?;
                        let m = tape.mean(x)?;
                        let c = tape.sub(x, m)?;
                        let var = tape.variance(x)?;
                        let eps = tape.shift(var, 1e-5)?;
                        let l = tape.ln(eps)?;
                        let h = tape.scale(l, 0.5)?;
                        let s = tape.exp(h)?;
                        tape.div(c, s)?
                    }
                    OpType::SoftmaxCE => {
                        let logits = input_of(&vals, id, 0)?;
                        let loss = tape.softmax_cross_entropy(logits, labels)?;
                        result = Some((loss, logits));
                        loss
                    }
                    OpType::Quantize => {
                        let x = input_of(&vals, id, 0)?;
                        quantizer.quantize(tape, id, x)?
                    }
                },
            };
            vals.insert(id.as_str(), out);
        }
        let (loss, logits) = result.ok_or_else(|| Error::Runtime("loss was not computed".into()))?;
        Ok(Forward {
            loss,
            logits,
            params,
        })
    }

    /// Moves gradients from `tape` into the parameters.
    pub fn absorb(&mut self, tape: &Tape, fwd: &Forward) -> Result<()> {
        for (name, &var) in &fwd.params {
            self.params.get_mut(name).unwrap().absorb(tape, var)?;
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, lr: f32) {
        for p in self.params.values_mut() {
            p.sgd_step(lr);
            p.zero_grad();
        }
    }
}

/// Top-1 accuracy of row-wise `logits`.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f32 {
    let Some((n, c)) = logits.dims2() else {
        return 0.0;
    };
    if n == 0 {
        return 0.0;
    }
    let correct = logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &l)| {
            let best = (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == l
        })
        .count();
    correct as f32 / n as f32
}
