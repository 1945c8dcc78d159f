//! Unknown-vector layout: node voltages first (dense 1..=N mapped to
//! indices 0..N), then one branch current per branch-bearing primitive in
//! declaration order. The mapping is a bijection by construction and is
//! validated against duplicate branch names and node index gaps.

use super::{CircuitPrimitive, NodeId};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("primitive '{prim}' references node {node} but the highest declared node is {max}")]
    UnknownNode { prim: String, node: u32, max: u32 },
    #[error("duplicate primitive name '{0}'")]
    DuplicateName(String),
    #[error("node indices are not dense: node {0} is never referenced")]
    NodeGap(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    node_count: usize,
    branch_names: Vec<String>,
    branch_map: HashMap<String, usize>,
}

impl Layout {
    /// Builds the layout from the primitive list.
    pub fn build(primitives: &[CircuitPrimitive]) -> Result<Self, LayoutError> {
        let mut max_node = 0u32;
        let mut seen = Vec::new();
        let mut note = |n: NodeId, seen: &mut Vec<u32>| {
            if n.0 > max_node {
                max_node = n.0;
            }
            seen.push(n.0);
        };
        for p in primitives {
            note(p.p, &mut seen);
            note(p.n, &mut seen);
            if let Some((cp, cn)) = p.control_nodes {
                note(cp, &mut seen);
                note(cn, &mut seen);
            }
        }
        // density check: every index 1..=max_node must appear somewhere
        let mut present = vec![false; max_node as usize + 1];
        for s in seen {
            present[s as usize] = true;
        }
        if let Some(gap) = (1..=max_node).find(|&i| !present[i as usize]) {
            return Err(LayoutError::NodeGap(gap));
        }

        let mut branch_names = Vec::new();
        let mut branch_map = HashMap::new();
        for p in primitives {
            if p.has_branch_current() {
                let idx = max_node as usize + branch_names.len();
                if branch_map.insert(p.name.clone(), idx).is_some() {
                    return Err(LayoutError::DuplicateName(p.name.clone()));
                }
                branch_names.push(p.name.clone());
            }
        }

        Ok(Layout {
            node_count: max_node as usize,
            branch_names,
            branch_map,
        })
    }

    /// Number of node-voltage unknowns.
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Number of branch-current unknowns.
    pub fn branch_count(&self) -> usize {
        self.branch_names.len()
    }

    /// Total unknown count.
    pub fn size(&self) -> usize {
        self.node_count + self.branch_names.len()
    }

    /// Unknown index of a node voltage; None for ground or out-of-range.
    pub fn node_index(&self, node: NodeId) -> Option<usize> {
        if node.is_ground() || node.0 as usize > self.node_count {
            None
        } else {
            Some(node.0 as usize - 1)
        }
    }

    /// Unknown index of a branch current by primitive name.
    pub fn branch_index(&self, name: &str) -> Option<usize> {
        self.branch_map.get(name).copied()
    }

    /// Human-readable name of unknown `idx` for diagnostics.
    pub fn unknown_name(&self, idx: usize) -> String {
        if idx < self.node_count {
            format!("v(n{})", idx + 1)
        } else {
            format!("i({})", self.branch_names[idx - self.node_count])
        }
    }
}
