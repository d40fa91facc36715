//! Lane graph: which lane feeds which, and in which representation each runs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneKind {
    Macro,
    Micro,
}

/// Directed hand-off: the downstream end of `from` feeds the upstream start
/// of `to`. A macro->micro link carries a flux capacitor, a micro->macro link
/// an aggregation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub from: u64,
    pub to: u64,
}

/// Kahn's algorithm over lane ids; `None` when the links contain a cycle.
pub fn topological_order(lane_ids: &[u64], links: &[Link]) -> Option<Vec<u64>> {
    use std::collections::BTreeMap;
    let mut indegree: BTreeMap<u64, usize> = lane_ids.iter().map(|&id| (id, 0)).collect();
    for l in links {
        if let Some(d) = indegree.get_mut(&l.to) {
            *d += 1;
        }
    }
    let mut ready: Vec<u64> =
        indegree.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
    let mut order = Vec::with_capacity(lane_ids.len());
    while let Some(id) = ready.pop() {
        order.push(id);
        for l in links.iter().filter(|l| l.from == id) {
            if let Some(d) = indegree.get_mut(&l.to) {
                *d -= 1;
                if *d == 0 {
                    ready.push(l.to);
                }
            }
        }
    }
    (order.len() == lane_ids.len()).then_some(order)
}
