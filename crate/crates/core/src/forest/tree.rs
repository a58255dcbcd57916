use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::split::best_split;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSplit {
    /// Index into the forest's predictor list.
    pub feature: usize,
    /// Samples with `value <= threshold` go left.
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub sse_decrease: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Mean of the in-bag targets reaching this node; the prediction at leaves.
    pub value: f64,
    pub n_samples: usize,
    pub split: Option<NodeSplit>,
}

impl Node {
    pub fn leaf(value: f64, n_samples: usize) -> Self {
        Node {
            value,
            n_samples,
            split: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// Binary regression tree stored as a node arena; node 0 is the root and
/// children always come after their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

pub(crate) struct GrowParams {
    pub mtry: usize,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
}

impl RegressionTree {
    /// Builds a tree from explicit nodes, checking the arena shape.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidInput("tree has no nodes".into()));
        }
        let mut referenced = vec![false; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            if let Some(s) = &node.split {
                for child in [s.left, s.right] {
                    if child <= i || child >= nodes.len() || referenced[child] {
                        return Err(Error::InvalidInput(format!(
                            "node {i} has invalid child {child}"
                        )));
                    }
                    referenced[child] = true;
                }
            }
        }
        if referenced.iter().skip(1).any(|r| !r) {
            return Err(Error::InvalidInput("tree has unreachable nodes".into()));
        }
        Ok(RegressionTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Index of the leaf `row` lands in.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        while let Some(s) = &self.nodes[i].split {
            i = if row[s.feature] <= s.threshold {
                s.left
            } else {
                s.right
            };
        }
        i
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.nodes[self.leaf_index(row)].value
    }

    /// Like [`predict`](Self::predict) but reads a column-major matrix.
    pub(crate) fn predict_at(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut i = 0;
        while let Some(s) = &self.nodes[i].split {
            i = if columns[s.feature][row] <= s.threshold {
                s.left
            } else {
                s.right
            };
        }
        self.nodes[i].value
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, i: usize) -> usize {
            match &t.nodes[i].split {
                None => 0,
                Some(s) => 1 + go(t, s.left).max(go(t, s.right)),
            }
        }
        go(self, 0)
    }

    /// Sum of SSE decreases over this tree's splits.
    pub fn total_decrease(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| n.split.as_ref().map(|s| s.sse_decrease))
            .sum()
    }

    pub(crate) fn grow<R: Rng>(
        x: &[Vec<f64>],
        y: &[f64],
        sample: &[usize],
        params: &GrowParams,
        rng: &mut R,
    ) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new() };
        tree.grow_node(x, y, sample.to_vec(), 0, params, rng);
        tree
    }

    fn grow_node<R: Rng>(
        &mut self,
        x: &[Vec<f64>],
        y: &[f64],
        rows: Vec<usize>,
        depth: usize,
        params: &GrowParams,
        rng: &mut R,
    ) -> usize {
        let n = rows.len();
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::leaf(mean, n));

        let depth_ok = params.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || n < 2 * params.min_node_size {
            return id;
        }
        let p = x.len();
        let mut features = index::sample(rng, p, params.mtry.min(p)).into_vec();
        features.sort_unstable();
        let Some(best) = best_split(x, y, &rows, &features, params.min_node_size) else {
            return id;
        };
        let col = &x[best.feature];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| col[i] <= best.threshold);
        drop(rows);
        let left = self.grow_node(x, y, left_rows, depth + 1, params, rng);
        let right = self.grow_node(x, y, right_rows, depth + 1, params, rng);
        self.nodes[id].split = Some(NodeSplit {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            sse_decrease: best.sse_decrease,
        });
        id
    }
}
