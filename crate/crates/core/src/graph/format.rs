//! Line-oriented text format for graphs.
//!
//! ```text
//! # qnn-graph v1
//! vertex x data role=input shape=2
//! vertex w1 data role=weight shape=2x32
//! vertex fc1 fc bias=true
//! edge x fc1 0
//! edge w1 fc1 1
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{Graph, Vertex, VertexKind};
use crate::error::{Error, Result};

pub const HEADER: &str = "# qnn-graph v1";

impl Graph {
    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\n");
        for v in self.vertices() {
            write!(out, "vertex {} {}", v.id, v.kind).unwrap();
            for (k, val) in &v.attrs {
                write!(out, " {k}={val}").unwrap();
            }
            out.push('\n');
        }
        for e in self.edges() {
            writeln!(out, "edge {} {} {}", e.src, e.dst, e.slot).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Graph> {
        const WHAT: &str = "graph";
        let mut g = Graph::new();
        let mut saw_header = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if !saw_header {
                if line != HEADER {
                    return Err(Error::parse(WHAT, line_no, format!("expected '{HEADER}'")));
                }
                saw_header = true;
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let graph_err = |e: super::GraphError| Error::parse(WHAT, line_no, e.to_string());
            match fields[0] {
                "vertex" => {
                    let [_, id, kind, attrs @ ..] = fields.as_slice() else {
                        return Err(Error::parse(WHAT, line_no, "expected 'vertex <id> <kind>'"));
                    };
                    let kind: VertexKind =
                        kind.parse().map_err(|m: String| Error::parse(WHAT, line_no, m))?;
                    let mut v = Vertex::new(*id, kind);
                    for a in attrs {
                        let (k, val) = a.split_once('=').ok_or_else(|| {
                            Error::parse(WHAT, line_no, format!("attribute '{a}' is not key=value"))
                        })?;
                        v.attrs.insert(k.to_string(), val.to_string());
                    }
                    g.add_vertex(v).map_err(graph_err)?;
                }
                "edge" => {
                    let [_, src, dst, slot] = fields.as_slice() else {
                        return Err(Error::parse(WHAT, line_no, "expected 'edge <src> <dst> <slot>'"));
                    };
                    let slot: usize = slot
                        .parse()
                        .map_err(|_| Error::parse(WHAT, line_no, format!("bad slot '{slot}'")))?;
                    g.add_edge(*src, *dst, slot).map_err(graph_err)?;
                }
                other => {
                    return Err(Error::parse(WHAT, line_no, format!("unknown record '{other}'")))
                }
            }
        }
        if !saw_header {
            return Err(Error::parse(WHAT, 1, format!("expected '{HEADER}'")));
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Graph> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Graph::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
