//! Input parsing, canonical JSON output, CSV heat maps and atomic writes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use frechet_core::model::{
    BivariateMarginal, MarginalSystem, ModelError, NodeId, Support, UnivariateMarginal,
};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    nodes: Vec<NodeFile>,
    #[serde(default)]
    edges: Vec<EdgeFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    id: NodeId,
    support: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeFile {
    i: NodeId,
    j: NodeId,
    probs: Vec<Vec<f64>>,
}

fn schema(path: impl Into<String>, e: impl ToString) -> CliError {
    CliError::Schema {
        path: path.into(),
        message: e.to_string(),
    }
}

/// Parses a marginal system document. Errors carry the JSON path of the
/// offending value.
pub fn parse_system(text: &str) -> Result<MarginalSystem, CliError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let file: SystemFile = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| schema(e.path().to_string(), e.inner()))?;
    de.end().map_err(|e| schema(".", e))?;

    let nodes = file
        .nodes
        .into_iter()
        .enumerate()
        .map(|(k, n)| {
            let support =
                Support::new(n.support).map_err(|e| schema(format!("nodes[{k}].support"), e))?;
            UnivariateMarginal::new(n.id, support, n.probs)
                .map_err(|e| schema(format!("nodes[{k}].probs"), e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let edges = file
        .edges
        .into_iter()
        .enumerate()
        .map(|(k, e)| {
            BivariateMarginal::from_rows(e.i, e.j, &e.probs)
                .map_err(|err| schema(format!("edges[{k}].probs"), err))
        })
        .collect::<Result<Vec<_>, _>>()?;
    MarginalSystem::new(nodes, edges).map_err(|e| {
        let path = match e {
            ModelError::DuplicateNode(_) => "nodes",
            _ => "edges",
        };
        schema(path, e)
    })
}

pub fn load_system(path: &Path) -> Result<MarginalSystem, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_system(&text)
}

pub fn bivariate_to_value(t: &BivariateMarginal) -> Value {
    let (i, j) = t.edge();
    json!({ "i": i, "j": j, "probs": t.to_rows() })
}

pub fn system_to_value(system: &MarginalSystem) -> Value {
    let nodes: Vec<Value> = system
        .nodes()
        .iter()
        .map(|n| json!({ "id": n.node(), "support": n.support().values(), "probs": n.probs() }))
        .collect();
    let edges: Vec<Value> = system.edges().iter().map(bivariate_to_value).collect();
    json!({ "nodes": nodes, "edges": edges })
}

/// 17 significant digits, enough to round-trip any `f64`.
fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(u), _, _) => write!(out, "{u}").expect("string write"),
            (_, Some(i), _) => write!(out, "{i}").expect("string write"),
            (_, _, Some(f)) => out.push_str(&format_float(f)),
            _ => out.push_str("null"),
        },
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) if items.iter().all(is_scalar) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, indent);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                out.push_str(&" ".repeat(indent + 2));
                write_value(out, item, indent + 2);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&" ".repeat(indent));
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            // serde_json's default map is a BTreeMap, so keys come sorted
            out.push_str("{\n");
            for (k, (key, item)) in map.iter().enumerate() {
                out.push_str(&" ".repeat(indent + 2));
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, indent + 2);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&" ".repeat(indent));
            out.push('}');
        }
    }
}

/// Canonical serialization: sorted keys, floats with 17 significant digits,
/// two-space indentation, scalar arrays on one line, trailing newline.
pub fn to_canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, 0);
    out.push('\n');
    out
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io_err = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Heat map of a bivariate table: first row and column hold the support
/// values, cell `(r, c)` holds `θ_ij(c_i = r, c_j = c)`.
pub fn heatmap_csv(
    table: &BivariateMarginal,
    rows: &Support,
    cols: &Support,
) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Usage(format!("csv: {e}"));
    let mut header = vec![String::new()];
    header.extend(cols.values().iter().map(|v| v.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (r, value) in rows.values().iter().enumerate() {
        let mut record = vec![value.to_string()];
        record.extend(table.row(r).iter().map(|&p| format_float(p)));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Usage(format!("csv: {e}")))
}
