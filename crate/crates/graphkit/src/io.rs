//! Dataset files: one JSON document holding a list of graphs.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use numkit::Matrix;
use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::Value;

use crate::error::{GraphError, Result};
use crate::graph::{EdgeSpec, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Json,
}

impl std::str::FromStr for GraphFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(GraphFormat::Json),
            other => Err(GraphError::Invalid(format!("unknown graph format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub directed: bool,
    pub graphs: Vec<Graph>,
}

pub fn load_graph(path: impl AsRef<Path>, format: GraphFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| GraphError::Io { path: path.to_path_buf(), source })?;
    match format {
        GraphFormat::Json => parse_dataset(&text),
    }
}

pub fn save_graph(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| GraphError::Io { path: path.to_path_buf(), source };
    let mut buf = Vec::new();
    write_dataset(&mut buf, dataset).map_err(io_err)?;
    fs::write(path, buf).map_err(io_err)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let doc: Value = serde_json::from_str(text)?;
    let top = doc.as_object().ok_or_else(|| GraphError::Malformed {
        graph: 0,
        detail: "top level must be an object".into(),
    })?;
    let directed = match top.get("directed") {
        Some(Value::Bool(b)) => *b,
        _ => {
            return Err(GraphError::Malformed { graph: 0, detail: "`directed` must be a bool".into() })
        }
    };
    let graphs = top.get("graphs").and_then(Value::as_array).ok_or_else(|| {
        GraphError::Malformed { graph: 0, detail: "`graphs` must be a list".into() }
    })?;
    let graphs = graphs
        .iter()
        .enumerate()
        .map(|(k, g)| parse_one(k, directed, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { directed, graphs })
}

fn parse_one(idx: usize, directed: bool, v: &Value) -> Result<Graph> {
    let bad = |detail: String| GraphError::Malformed { graph: idx, detail };
    let obj = v.as_object().ok_or_else(|| bad("graph record must be an object".into()))?;
    let n = obj
        .get("num_nodes")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad("`num_nodes` must be a nonnegative integer".into()))? as usize;

    let rows = obj
        .get("node_features")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("`node_features` must be a list".into()))?;
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| real_vec(r).ok_or_else(|| bad("feature rows must be numeric lists".into())))
        .collect::<Result<_>>()?;
    let width = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != width) {
        return Err(bad("feature rows differ in length".into()));
    }
    if rows.len() != n {
        return Err(bad(format!("{} feature rows for {n} nodes", rows.len())));
    }
    let features = Matrix::new(n, width, rows.concat()).map_err(|e| bad(e.to_string()))?;

    let edges = obj
        .get("edges")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("`edges` must be a list".into()))?;
    let mut specs = Vec::with_capacity(edges.len());
    for (k, e) in edges.iter().enumerate() {
        let parts = e.as_array().ok_or_else(|| bad(format!("edge {k} must be a list")))?;
        if parts.len() != 2 && parts.len() != 3 {
            return Err(bad(format!("edge {k} must have 2 or 3 elements")));
        }
        let id = |v: &Value| v.as_u64().map(|x| x as usize);
        let (Some(src), Some(dst)) = (id(&parts[0]), id(&parts[1])) else {
            return Err(bad(format!("edge {k} endpoints must be nonnegative integers")));
        };
        let feature = match parts.get(2) {
            None => None,
            Some(f) => Some(real_vec(f).ok_or_else(|| bad(format!("edge {k} feature must be numeric")))?),
        };
        specs.push(EdgeSpec { src, dst, feature });
    }

    let mut g = Graph::build(idx, n, directed, &specs, features)?;
    match obj.get("node_labels") {
        None | Some(Value::Null) => {}
        Some(l) => {
            let labels = real_vec(l).ok_or_else(|| bad("`node_labels` must be numeric".into()))?;
            g = g.with_node_labels(labels).map_err(|e| bad(e.to_string()))?;
        }
    }
    match obj.get("graph_label") {
        None | Some(Value::Null) => {}
        Some(l) => {
            let label = l.as_f64().ok_or_else(|| bad("`graph_label` must be a number".into()))?;
            g = g.with_graph_label(label);
        }
    }
    Ok(g)
}

fn real_vec(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(Value::as_f64).collect()
}

#[derive(Serialize)]
struct GraphDoc<'a> {
    num_nodes: usize,
    edges: Vec<EdgeDoc>,
    node_features: Vec<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    node_labels: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    graph_label: Option<f64>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum EdgeDoc {
    Plain(usize, usize),
    Featured(usize, usize, Vec<f64>),
}

#[derive(Serialize)]
struct DatasetDoc<'a> {
    directed: bool,
    graphs: Vec<GraphDoc<'a>>,
}

/// Writes floats in scientific notation with 17 significant digits.
struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub fn write_dataset<W: Write>(writer: W, dataset: &Dataset) -> io::Result<()> {
    let graphs = dataset
        .graphs
        .iter()
        .map(|g| GraphDoc {
            num_nodes: g.num_nodes(),
            edges: g
                .edge_specs()
                .into_iter()
                .map(|e| match e.feature {
                    None => EdgeDoc::Plain(e.src, e.dst),
                    Some(f) => EdgeDoc::Featured(e.src, e.dst, f),
                })
                .collect(),
            node_features: (0..g.num_nodes()).map(|i| g.node_features().row(i)).collect(),
            node_labels: g.node_labels(),
            graph_label: g.graph_label(),
        })
        .collect();
    let doc = DatasetDoc { directed: dataset.directed, graphs };
    let mut ser = serde_json::Serializer::with_formatter(writer, FullPrecision);
    doc.serialize(&mut ser).map_err(io::Error::other)
}
