use std::fmt::Write as _;
use std::str::FromStr;

use super::MetricTree;
use crate::error::{HemlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

impl FromStr for ExportFormat {
    type Err = HemlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "dot" => Ok(ExportFormat::Dot),
            other => Err(HemlError::Usage(format!(
                "unknown export format {other:?} (expected json or dot)"
            ))),
        }
    }
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Json => "json",
            ExportFormat::Dot => "dot",
        }
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn export_tree(tree: &MetricTree, format: ExportFormat) -> Result<Vec<u8>> {
    if tree.nodes.is_empty() || tree.root >= tree.nodes.len() {
        return Err(HemlError::Usage("cannot export an empty tree".into()));
    }
    match format {
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(tree)
                .map_err(|e| HemlError::Format(format!("tree does not serialize: {e}")))?;
            s.push('\n');
            Ok(s.into_bytes())
        }
        ExportFormat::Dot => {
            let mut s = String::from("digraph metric_tree {\n  rankdir=BT;\n  node [shape=box];\n");
            for n in &tree.nodes {
                let _ = writeln!(
                    s,
                    "  n{} [label=\"{}\\nd={:.3}\"];",
                    n.id,
                    dot_escape(&n.name),
                    n.normalized
                );
            }
            for n in &tree.nodes {
                for c in &n.children {
                    let _ = writeln!(s, "  n{} -> n{};", n.id, c);
                }
            }
            s.push_str("}\n");
            Ok(s.into_bytes())
        }
    }
}

pub fn parse_tree_json(bytes: &[u8]) -> Result<MetricTree> {
    serde_json::from_slice(bytes).map_err(|e| HemlError::Format(format!("bad metric tree JSON: {e}")))
}
