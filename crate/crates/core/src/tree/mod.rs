//! Ultrametric oriented trees and their depth-sequence encoding.
//!
//! A [`DepthSeq`] stores a height `T` and the coalescent depths
//! `H_1..H_{n-1}` between consecutive tips; it is the representation every
//! likelihood consumes. [`Tree`] is the linked form obtained by drawing tip
//! `i` down to depth `H_i` and attaching it to the nearest lineage on its left
//! that reaches at least that deep.

mod jsonl;
mod newick;

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub use jsonl::{
    read_depth_seqs, read_trees, write_depth_seqs, write_newick_file, TreeFormat,
    JSONL_FORMAT_TAG, JSONL_FORMAT_VERSION, NEWICK_FORMAT_TAG,
};
pub use newick::{parse_newick, write_newick};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("tree height must be at least 1")]
    ZeroHeight,
    #[error("depth {depth} at position {index} is outside [1, {height}]")]
    DepthOutOfRange { index: usize, depth: u64, height: u64 },
    #[error("tips are not equidistant from the root (spread {spread:e})")]
    NotUltrametric { spread: f64 },
    #[error("node depth {value} is not an integer number of generations")]
    NonIntegerDepth { value: f64 },
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("invalid tree structure: {0}")]
    InvalidStructure(String),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

/// Height plus coalescent depths of consecutive tips.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawDepthSeq")]
pub struct DepthSeq {
    #[serde(rename = "T")]
    height: u64,
    depths: Vec<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDepthSeq {
    #[serde(rename = "T")]
    height: u64,
    depths: Vec<u64>,
}

impl TryFrom<RawDepthSeq> for DepthSeq {
    type Error = TreeError;
    fn try_from(raw: RawDepthSeq) -> Result<Self, TreeError> {
        DepthSeq::new(raw.height, raw.depths)
    }
}

impl DepthSeq {
    pub fn new(height: u64, depths: Vec<u64>) -> Result<Self, TreeError> {
        if height == 0 {
            return Err(TreeError::ZeroHeight);
        }
        if let Some((index, &depth)) = depths
            .iter()
            .enumerate()
            .find(|(_, &d)| d == 0 || d > height)
        {
            return Err(TreeError::DepthOutOfRange {
                index,
                depth,
                height,
            });
        }
        Ok(Self { height, depths })
    }

    /// A single lineage of length `height`.
    pub fn single(height: u64) -> Result<Self, TreeError> {
        Self::new(height, Vec::new())
    }

    pub(crate) fn new_unchecked(height: u64, depths: Vec<u64>) -> Self {
        debug_assert!(Self::new(height, depths.clone()).is_ok());
        Self { height, depths }
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn depths(&self) -> &[u64] {
        &self.depths
    }

    pub fn tip_count(&self) -> usize {
        self.depths.len() + 1
    }

    pub fn into_depths(self) -> Vec<u64> {
        self.depths
    }
}

impl fmt::Display for DepthSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T={} {:?}", self.height, self.depths)
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct Node {
    depth: u64,
    children: Vec<NodeId>,
    tip: Option<usize>,
}

impl Node {
    pub fn depth(&self) -> u64 {
        self.depth
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    /// Left-to-right index for tips, `None` for internal nodes.
    pub fn tip_index(&self) -> Option<usize> {
        self.tip
    }

    pub fn is_tip(&self) -> bool {
        self.tip.is_some()
    }
}

/// Rooted, ordered, ultrametric tree with integer node depths.
///
/// Tips sit at depth 0 and carry their left-to-right index. The root is the
/// most recent common ancestor of all tips (the tip itself for a single
/// lineage); the stem above it runs up to `height`.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    root: NodeId,
    height: u64,
}

impl Tree {
    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn tip_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_tip()).count()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.len() - self.tip_count()
    }

    /// Length of the branch above the root.
    pub fn stem(&self) -> u64 {
        self.height - self.nodes[self.root].depth
    }

    /// Builds a tree from a nested description, renumbering tips left to right.
    pub(crate) fn from_shape(height: u64, shape: &Shape) -> Result<Tree, TreeError> {
        fn add(nodes: &mut Vec<Node>, shape: &Shape, tips: &mut usize) -> NodeId {
            match shape {
                Shape::Tip => {
                    nodes.push(Node {
                        depth: 0,
                        children: Vec::new(),
                        tip: Some(*tips),
                    });
                    *tips += 1;
                    nodes.len() - 1
                }
                Shape::Internal { depth, children } => {
                    let id = nodes.len();
                    nodes.push(Node {
                        depth: *depth,
                        children: Vec::new(),
                        tip: None,
                    });
                    let kids = children.iter().map(|c| add(nodes, c, tips)).collect();
                    nodes[id].children = kids;
                    id
                }
            }
        }
        let mut nodes = Vec::new();
        let mut tips = 0;
        let root = add(&mut nodes, shape, &mut tips);
        let tree = Tree {
            nodes,
            root,
            height,
        };
        tree.validate()?;
        Ok(tree)
    }

    /// Checks ultrametricity, strictly decreasing depths along root paths,
    /// at least two children per internal node and left-to-right tip labels.
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.height == 0 {
            return Err(TreeError::ZeroHeight);
        }
        if self.nodes[self.root].depth > self.height {
            return Err(TreeError::InvalidStructure(format!(
                "root depth {} exceeds height {}",
                self.nodes[self.root].depth, self.height
            )));
        }
        let mut next_tip = 0;
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            match node.tip {
                Some(label) => {
                    if node.depth != 0 {
                        return Err(TreeError::NotUltrametric {
                            spread: node.depth as f64,
                        });
                    }
                    if label != next_tip {
                        return Err(TreeError::InvalidStructure(format!(
                            "tip labelled {label} found at position {next_tip}"
                        )));
                    }
                    next_tip += 1;
                }
                None => {
                    if node.children.len() < 2 {
                        return Err(TreeError::InvalidStructure(
                            "internal node with fewer than two children".into(),
                        ));
                    }
                    for &c in &node.children {
                        if self.nodes[c].depth >= node.depth {
                            return Err(TreeError::InvalidStructure(format!(
                                "child depth {} not below parent depth {}",
                                self.nodes[c].depth, node.depth
                            )));
                        }
                    }
                    stack.extend(node.children.iter().rev());
                }
            }
        }
        Ok(())
    }

    fn shape(&self, id: NodeId) -> Shape {
        let node = &self.nodes[id];
        if node.is_tip() {
            Shape::Tip
        } else {
            Shape::Internal {
                depth: node.depth,
                children: node.children.iter().map(|&c| self.shape(c)).collect(),
            }
        }
    }
}

impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        self.height == other.height && self.shape(self.root) == other.shape(other.root)
    }
}

/// Nested tree description used for construction and structural equality.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Shape {
    Tip,
    Internal { depth: u64, children: Vec<Shape> },
}

/// Attaches tip `i` at depth `H_i` to the nearest lineage `j < i` with
/// `H_j >= H_i` (`H_0 = T`); equal depths on the same vertical line share one
/// multifurcating node.
pub fn depths_to_tree(seq: &DepthSeq) -> Tree {
    let mut nodes = vec![Node {
        depth: 0,
        children: Vec::new(),
        tip: Some(0),
    }];
    let mut root = 0;
    let mut last_tip = 0;
    // internal nodes on the rightmost root-to-tip path, deepest first
    let mut spine: Vec<NodeId> = Vec::new();
    for (i, &h) in seq.depths.iter().enumerate() {
        let mut child = last_tip;
        while let Some(&top) = spine.last() {
            if nodes[top].depth < h {
                child = top;
                spine.pop();
            } else {
                break;
            }
        }
        let tip = nodes.len();
        nodes.push(Node {
            depth: 0,
            children: Vec::new(),
            tip: Some(i + 1),
        });
        match spine.last() {
            Some(&top) if nodes[top].depth == h => nodes[top].children.push(tip),
            parent => {
                let id = nodes.len();
                nodes.push(Node {
                    depth: h,
                    children: vec![child, tip],
                    tip: None,
                });
                match parent {
                    Some(&parent) => {
                        let slot = nodes[parent].children.last_mut().expect("spine node");
                        debug_assert_eq!(*slot, child);
                        *slot = id;
                    }
                    None => root = id,
                }
                spine.push(id);
            }
        }
        last_tip = tip;
    }
    Tree {
        nodes,
        root,
        height: seq.height,
    }
}

/// Reads off the depth of the most recent common ancestor of each pair of
/// consecutive tips.
pub fn tree_to_depths(tree: &Tree) -> Result<DepthSeq, TreeError> {
    tree.validate()?;
    let mut depths = Vec::new();
    // (node, depth of the MRCA with the previous tip if this subtree holds the next tip)
    let mut stack: Vec<(NodeId, Option<u64>)> = vec![(tree.root, None)];
    while let Some((id, pending)) = stack.pop() {
        let node = &tree.nodes[id];
        if node.is_tip() {
            if let Some(d) = pending {
                depths.push(d);
            }
            continue;
        }
        for (pos, &c) in node.children.iter().enumerate().rev() {
            let mark = if pos == 0 { pending } else { Some(node.depth) };
            stack.push((c, mark));
        }
    }
    DepthSeq::new(tree.height, depths)
}
