//! Quantized architecture generation.

use std::collections::BTreeSet;

use super::{Diagnostic, Graph, GraphError, OpType, Vertex, VertexKind};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QagOutput {
    pub graph: Graph,
    /// Outer frontier sweeps performed.
    pub iterations: usize,
    /// Ids of the inserted Quantize vertices, in insertion order.
    pub quantizers: Vec<String>,
}

fn fresh_id(base: String, g: &Graph, out: &Graph) -> String {
    let mut id = base;
    while g.contains(&id) || out.contains(&id) {
        id.push('\'');
    }
    id
}

/// Rewrites `g` so that every edge into a vertex of `expensive` passes
/// through a fresh Quantize vertex.
///
/// Vertices are moved from the frontier into the output in sweeps: a vertex
/// is taken once all of its inputs are already placed. Quantizer ids are
/// `q:<src>><dst>:<slot>`, primed if that id is taken.
pub fn qag_transform(g: &Graph, expensive: &BTreeSet<String>) -> Result<QagOutput, GraphError> {
    for d in g.validate() {
        match d {
            Diagnostic::Empty | Diagnostic::Cycle { .. } | Diagnostic::Disconnected { .. } => {
                return Err(d.into())
            }
            _ => {}
        }
    }
    for id in expensive {
        let v = g.vertex(id).ok_or_else(|| GraphError::UnknownVertex(id.clone()))?;
        if v.kind == VertexKind::Data {
            return Err(GraphError::DataInExpensiveSet(id.clone()));
        }
    }

    let mut out = Graph::new();
    let mut placed: BTreeSet<String> = BTreeSet::new();
    for v in g.vertices() {
        if g.in_degree(&v.id)? == 0 {
            placed.insert(v.id.clone());
            out.add_vertex(v.clone())?;
        }
    }

    let frontier = |placed: &BTreeSet<String>| -> BTreeSet<String> {
        g.edges()
            .filter(|e| placed.contains(&e.src) && !placed.contains(&e.dst))
            .map(|e| e.dst)
            .collect()
    };

    let mut quantizers = Vec::new();
    let mut iterations = 0;
    let mut pending = frontier(&placed);
    while !pending.is_empty() {
        iterations += 1;
        let mut moved = false;
        for vj in &pending {
            let ins = g.in_edges(vj);
            if !ins.iter().all(|e| placed.contains(&e.src)) {
                continue;
            }
            moved = true;
            placed.insert(vj.clone());
            out.add_vertex(g.vertex(vj).unwrap().clone())?;
            for e in ins {
                if expensive.contains(vj) {
                    let q = fresh_id(format!("q:{}>{}:{}", e.src, e.dst, e.slot), g, &out);
                    out.add_vertex(Vertex::op(q.clone(), OpType::Quantize))?;
                    out.add_edge(e.src, q.clone(), 0)?;
                    out.add_edge(q.clone(), e.dst, e.slot)?;
                    quantizers.push(q);
                } else {
                    out.add_edge(e.src, e.dst, e.slot)?;
                }
            }
        }
        if !moved {
            let first = pending.into_iter().next().unwrap();
            return Err(GraphError::Cyclic(first));
        }
        pending = frontier(&placed);
    }
    Ok(QagOutput {
        graph: out,
        iterations,
        quantizers,
    })
}
