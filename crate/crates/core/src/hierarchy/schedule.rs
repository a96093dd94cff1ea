use serde::{Deserialize, Serialize};

use crate::data::{composite_id, PairingNode, SegmentManifest};
use crate::error::{HemlError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleNode {
    pub id: usize,
    /// Covered leaf names joined with `+`.
    pub name: String,
    /// 0 for leaves, 2 for pairings, 1 for pass-through nodes.
    pub children: Vec<usize>,
    pub level: usize,
    /// Covered leaves, left to right.
    pub leaves: Vec<String>,
}

impl ScheduleNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Binary tree that rebuilds the full input from its leaf segments. Node ids
/// are sorted by level, leaves first in manifest order, root last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinationSchedule {
    pub nodes: Vec<ScheduleNode>,
    pub root: usize,
}

impl CombinationSchedule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &ScheduleNode {
        &self.nodes[id]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &ScheduleNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().map_or(0, |l| l + 1)
    }

    /// Node ids grouped by level, ascending.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.depth()];
        for n in &self.nodes {
            out[n.level].push(n.id);
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HemlError::Schedule(m));
        if self.nodes.is_empty() || self.root >= self.nodes.len() {
            return fail("schedule has no root".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return fail(format!("node at position {i} has id {}", n.id));
            }
            if n.children.len() > 2 {
                return fail(format!("node {i} has {} children", n.children.len()));
            }
            for &c in &n.children {
                if c >= self.nodes.len() || self.nodes[c].level >= n.level {
                    return fail(format!("node {i} has invalid child {c}"));
                }
                parents[c] += 1;
            }
            let expect: Vec<String> = if n.is_leaf() {
                vec![n.name.clone()]
            } else {
                n.children.iter().flat_map(|&c| self.nodes[c].leaves.clone()).collect()
            };
            if n.leaves != expect || n.name != composite_id(&n.leaves) {
                return fail(format!("node {i} leaves do not match its children"));
            }
        }
        for (i, &p) in parents.iter().enumerate() {
            let want = usize::from(i != self.root);
            if p != want {
                return fail(format!("node {i} has {p} parents"));
            }
        }
        Ok(())
    }
}

struct Builder {
    nodes: Vec<ScheduleNode>,
}

impl Builder {
    fn leaves(names: &[String]) -> Self {
        Self {
            nodes: names
                .iter()
                .enumerate()
                .map(|(i, n)| ScheduleNode {
                    id: i,
                    name: n.clone(),
                    children: vec![],
                    level: 0,
                    leaves: vec![n.clone()],
                })
                .collect(),
        }
    }

    fn join(&mut self, children: Vec<usize>, level: usize) -> usize {
        let leaves: Vec<String> = children.iter().flat_map(|&c| self.nodes[c].leaves.clone()).collect();
        let id = self.nodes.len();
        self.nodes.push(ScheduleNode {
            id,
            name: composite_id(&leaves),
            children,
            level,
            leaves,
        });
        id
    }

    fn explicit(&mut self, plan: &PairingNode, index: &dyn Fn(&str) -> Option<usize>) -> Result<usize> {
        match plan {
            PairingNode::Leaf(name) => {
                index(name).ok_or_else(|| HemlError::Schedule(format!("pairing references unknown segment {name:?}")))
            }
            PairingNode::Group(members) => {
                if members.is_empty() || members.len() > 2 {
                    return Err(HemlError::Schedule(format!(
                        "pairing group must have 1 or 2 members, got {}",
                        members.len()
                    )));
                }
                let children = members
                    .iter()
                    .map(|m| self.explicit(m, index))
                    .collect::<Result<Vec<_>>>()?;
                let level = 1 + children.iter().map(|&c| self.nodes[c].level).max().unwrap();
                Ok(self.join(children, level))
            }
        }
    }

    /// Renumbers internal nodes so ids ascend by level.
    fn finish(self, root: usize) -> Result<CombinationSchedule> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&i| (self.nodes[i].level, i));
        let mut remap = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old];
                ScheduleNode {
                    id: remap[old],
                    name: n.name.clone(),
                    children: n.children.iter().map(|&c| remap[c]).collect(),
                    level: n.level,
                    leaves: n.leaves.clone(),
                }
            })
            .collect();
        let schedule = CombinationSchedule {
            nodes,
            root: remap[root],
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

/// Follows the manifest's pairing when present; otherwise pairs nodes left to
/// right level by level, promoting an odd last node unchanged.
pub fn build_schedule(manifest: &SegmentManifest) -> Result<CombinationSchedule> {
    if manifest.segments.is_empty() {
        return Err(HemlError::Schedule("no leaf segments".into()));
    }
    let mut b = Builder::leaves(&manifest.segments);
    let root = match &manifest.pairing {
        Some(plan) => {
            let index = |name: &str| manifest.segments.iter().position(|s| s == name);
            let root = b.explicit(plan, &index)?;
            let covered = b.nodes[root].leaves.len();
            if covered != manifest.segments.len() {
                return Err(HemlError::Schedule(format!(
                    "pairing covers {covered} of {} segments",
                    manifest.segments.len()
                )));
            }
            root
        }
        None => {
            let mut frontier: Vec<usize> = (0..manifest.segments.len()).collect();
            let mut level = 1;
            while frontier.len() > 1 {
                let mut next = Vec::with_capacity(frontier.len().div_ceil(2));
                for pair in frontier.chunks(2) {
                    match pair {
                        [a, b2] => next.push(b.join(vec![*a, *b2], level)),
                        [odd] => next.push(*odd),
                        _ => unreachable!(),
                    }
                }
                frontier = next;
                level += 1;
            }
            frontier[0]
        }
    };
    b.finish(root)
}
