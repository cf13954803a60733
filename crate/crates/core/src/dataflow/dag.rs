use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use super::{Data, Dependency, Lineage, PDataset};

/// Collects the lineage of one or more datasets into a single graph.
#[derive(Debug, Default, Clone)]
pub struct DagExport {
    nodes: BTreeMap<usize, (&'static str, Dependency)>,
    edges: BTreeSet<(usize, usize, Dependency)>,
}

impl DagExport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<T: Data>(&mut self, ds: &PDataset<T>) -> &mut Self {
        let mut stack: Vec<&dyn Lineage> = vec![ds.lineage()];
        while let Some(node) = stack.pop() {
            let meta = node.meta();
            if self.nodes.insert(meta.id, (meta.op, meta.dependency)).is_some() {
                continue;
            }
            for parent in node.parents() {
                self.edges.insert((parent.meta().id, meta.id, meta.dependency));
                stack.push(parent);
            }
        }
        self
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(from, to, "narrow" | "wide")`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &'static str)> + '_ {
        self.edges.iter().map(|&(a, b, d)| (a, b, d.as_str()))
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph lineage {\n  rankdir=LR;\n");
        for (id, (op, dep)) in &self.nodes {
            let shape = match dep {
                Dependency::Source => "box",
                _ => "ellipse",
            };
            let _ = writeln!(out, "  n{id} [label=\"{id}: {op}\", shape={shape}];");
        }
        for (from, to, dep) in &self.edges {
            let style = match dep {
                Dependency::Wide => ", style=bold",
                _ => "",
            };
            let _ = writeln!(out, "  n{from} -> n{to} [label=\"{}\"{style}];", dep.as_str());
        }
        out.push_str("}\n");
        out
    }
}
