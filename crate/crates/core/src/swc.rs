//! SWC neuron morphology: parsing, validation and serialization.
//!
//! Each non-comment line holds seven whitespace-separated columns:
//! `id type x y z radius parent`, positions and radius in micrometres,
//! `parent = -1` (any negative value) for a root.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::VoxelSize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonNode {
    pub id: i64,
    /// SWC structure identifier (1 soma, 2 axon, 3 dendrite, ...).
    pub kind: i32,
    /// Position in micrometres.
    pub position: [f64; 3],
    /// Radius in micrometres.
    pub radius: f64,
    pub parent: Option<i64>,
}

impl SkeletonNode {
    /// Position in (fractional) voxel coordinates.
    pub fn voxel_position(&self, voxel_size: VoxelSize) -> [f64; 3] {
        std::array::from_fn(|a| self.position[a] / voxel_size.0[a])
    }
}

/// A forest of traced nodes. Every parent reference resolves and no node is
/// its own ancestor, so each tree has exactly one root.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    nodes: Vec<SkeletonNode>,
    #[serde(skip)]
    index: HashMap<i64, usize>,
}

impl Skeleton {
    /// Validates and builds a skeleton. Errors report the 1-based position of
    /// the offending node.
    pub fn new(nodes: Vec<SkeletonNode>) -> Result<Self> {
        let lines: Vec<usize> = (1..=nodes.len()).collect();
        Self::build(nodes, &lines)
    }

    fn build(nodes: Vec<SkeletonNode>, lines: &[usize]) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(Error::Swc {
                    line: lines[i],
                    reason: format!("duplicate node id {}", n.id),
                });
            }
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                if !index.contains_key(&p) {
                    return Err(Error::Swc {
                        line: lines[i],
                        reason: format!("node {} references missing parent {p}", n.id),
                    });
                }
            }
        }

        // 0 unvisited, 1 on the current parent chain, 2 known to reach a root.
        let mut state = vec![0u8; nodes.len()];
        for start in 0..nodes.len() {
            let mut chain = Vec::new();
            let mut cur = Some(start);
            while let Some(i) = cur {
                match state[i] {
                    2 => break,
                    1 => {
                        return Err(Error::Swc {
                            line: lines[i],
                            reason: format!("node {} is part of a parent cycle", nodes[i].id),
                        })
                    }
                    _ => {}
                }
                state[i] = 1;
                chain.push(i);
                cur = nodes[i].parent.map(|p| index[&p]);
            }
            for i in chain {
                state[i] = 2;
            }
        }
        Ok(Self { nodes, index })
    }

    pub fn nodes(&self) -> &[SkeletonNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: i64) -> Option<&SkeletonNode> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    /// `(parent, child)` node index pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.parent.map(|p| (self.index[&p], i)))
    }

    pub fn tree_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.parent.is_none()).count()
    }

    /// Index of the root of the tree containing node index `i`.
    pub fn root_of(&self, mut i: usize) -> usize {
        while let Some(p) = self.nodes[i].parent {
            i = self.index[&p];
        }
        i
    }

    pub fn to_swc(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {}",
                n.id,
                n.kind,
                n.position[0],
                n.position[1],
                n.position[2],
                n.radius,
                n.parent.unwrap_or(-1)
            );
        }
        out
    }
}

/// Parses SWC text. Blank lines and `#` comments are skipped.
pub fn parse_swc(text: &str) -> Result<Skeleton> {
    let mut nodes = Vec::new();
    let mut lines = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let line_no = lineno + 1;
        let bad = |reason: String| Error::Swc { line: line_no, reason };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 7 {
            return Err(bad(format!("expected 7 columns, found {}", cols.len())));
        }
        let int = |s: &str, what: &str| s.parse::<i64>().map_err(|_| bad(format!("{what} `{s}` is not an integer")));
        let real = |s: &str, what: &str| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(bad(format!("{what} `{s}` is not a finite number"))),
        };
        let id = int(cols[0], "id")?;
        let kind = int(cols[1], "type")? as i32;
        let position = [real(cols[2], "x")?, real(cols[3], "y")?, real(cols[4], "z")?];
        let radius = real(cols[5], "radius")?;
        if radius < 0.0 {
            return Err(bad(format!("negative radius {radius}")));
        }
        let parent = int(cols[6], "parent")?;
        nodes.push(SkeletonNode {
            id,
            kind,
            position,
            radius,
            parent: (parent >= 0).then_some(parent),
        });
        lines.push(line_no);
    }
    Skeleton::build(nodes, &lines)
}
