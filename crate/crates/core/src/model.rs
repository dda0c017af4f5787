//! Binary single-split decision trees and additive tree ensembles.
//!
//! At an internal node splitting feature `q` at threshold `t`, an input with
//! `x[q] < t` descends to the left child and every other input (including
//! `x[q] == t`) descends to the right child.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub mod xgboost;

pub use xgboost::XgboostImportOptions;

/// One node of a [`Tree`]. Children are indices into the tree's node array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A rooted binary tree stored as a flat node array with the root at index 0.
///
/// Nodes are kept in pre-order, so the left child of an internal node `i`
/// is always `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    /// Local leaf ordinal per node (pre-order rank among leaves).
    leaf_ordinal: Vec<Option<usize>>,
    num_leaves: usize,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self::from_nodes_unchecked(vec![Node::Leaf { value }])
    }

    /// Joins two subtrees under a new root splitting `feature` at `threshold`.
    pub fn split(feature: usize, threshold: f64, left: Tree, right: Tree) -> Self {
        let left_len = left.nodes.len();
        let mut nodes = Vec::with_capacity(1 + left_len + right.nodes.len());
        nodes.push(Node::Split {
            feature,
            threshold,
            left: 1,
            right: 1 + left_len,
        });
        nodes.extend(left.nodes.iter().map(|n| shift(*n, 1)));
        nodes.extend(right.nodes.iter().map(|n| shift(*n, 1 + left_len)));
        Self::from_nodes_unchecked(nodes)
    }

    /// Builds a tree from an arbitrary index layout (root at index 0).
    ///
    /// Verifies that the node graph is a rooted binary tree: every child index
    /// is in range, every non-root node has exactly one parent and every node
    /// is reachable from the root. The result is re-laid out in pre-order.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::validation("tree has no nodes"));
        }
        let mut parents = vec![0usize; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            match *node {
                Node::Split {
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if !threshold.is_finite() {
                        return Err(Error::validation(format!(
                            "node {i}: threshold {threshold} is not finite"
                        )));
                    }
                    for child in [left, right] {
                        if child >= nodes.len() {
                            return Err(Error::validation(format!(
                                "node {i}: child index {child} out of range"
                            )));
                        }
                        if child == 0 {
                            return Err(Error::validation(format!(
                                "node {i}: the root cannot be a child"
                            )));
                        }
                        parents[child] += 1;
                    }
                }
                Node::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(Error::validation(format!(
                            "node {i}: leaf value {value} is not finite"
                        )));
                    }
                }
            }
        }
        if let Some(i) = (1..nodes.len()).find(|&i| parents[i] != 1) {
            return Err(Error::validation(format!(
                "node {i} has {} parents; expected exactly one",
                parents[i]
            )));
        }

        // With one parent per non-root node and a parentless root, a walk from
        // the root that reaches every node certifies the absence of cycles.
        let mut ordered = Vec::with_capacity(nodes.len());
        let mut remap = vec![usize::MAX; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            remap[i] = ordered.len();
            ordered.push(i);
            if let Node::Split { left, right, .. } = nodes[i] {
                stack.push(right);
                stack.push(left);
            }
        }
        if ordered.len() != nodes.len() {
            return Err(Error::validation(format!(
                "{} of {} nodes are unreachable from the root",
                nodes.len() - ordered.len(),
                nodes.len()
            )));
        }
        let relaid = ordered
            .into_iter()
            .map(|i| match nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => Node::Split {
                    feature,
                    threshold,
                    left: remap[left],
                    right: remap[right],
                },
                leaf => leaf,
            })
            .collect();
        Ok(Self::from_nodes_unchecked(relaid))
    }

    fn from_nodes_unchecked(nodes: Vec<Node>) -> Self {
        let mut num_leaves = 0;
        let leaf_ordinal = nodes
            .iter()
            .map(|n| match n {
                Node::Leaf { .. } => {
                    num_leaves += 1;
                    Some(num_leaves - 1)
                }
                Node::Split { .. } => None,
            })
            .collect();
        Self {
            nodes,
            leaf_ordinal,
            num_leaves,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &Node {
        &self.nodes[index]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.num_leaves
    }

    /// Pre-order rank of `node` among the leaves of this tree.
    pub fn leaf_ordinal(&self, node: usize) -> Option<usize> {
        self.leaf_ordinal[node]
    }

    /// Number of edges on the longest root-leaf path.
    pub fn depth(&self) -> usize {
        fn go(tree: &Tree, i: usize) -> usize {
            match tree.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(tree, left).max(go(tree, right)),
            }
        }
        go(self, 0)
    }

    /// Leaf values in pre-order.
    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value } => Some(*value),
            Node::Split { .. } => None,
        })
    }

    /// Index of the leaf node reached by `x`.
    pub fn route(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.route(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("route always ends at a leaf"),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    fn map_leaves(&self, f: &impl Fn(f64) -> f64) -> Tree {
        let nodes = self
            .nodes
            .iter()
            .map(|n| match *n {
                Node::Leaf { value } => Node::Leaf { value: f(value) },
                split => split,
            })
            .collect();
        Self::from_nodes_unchecked(nodes)
    }
}

fn shift(node: Node, by: usize) -> Node {
    match node {
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => Node::Split {
            feature,
            threshold,
            left: left + by,
            right: right + by,
        },
        leaf => leaf,
    }
}

/// On-disk model formats understood by [`TreeEnsemble::load`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFormat {
    /// `{"num_features": d, "trees": [node, ...]}` with nested nodes.
    Canonical,
    /// JSON text dump of an XGBoost booster (`dump_model(..., dump_format="json")`).
    XgboostDump,
}

/// An additive ensemble: `f(x)` is the sum of the outputs of its trees.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    trees: Vec<Tree>,
    num_features: usize,
    leaf_offsets: Vec<usize>,
}

impl TreeEnsemble {
    pub fn new(trees: Vec<Tree>, num_features: usize) -> Result<Self> {
        if let Some(max) = trees.iter().filter_map(Tree::max_feature).max() {
            if max >= num_features {
                return Err(Error::validation(format!(
                    "feature index {max} out of range for {num_features} features"
                )));
            }
        }
        for (t, tree) in trees.iter().enumerate() {
            for node in &tree.nodes {
                let ok = match *node {
                    Node::Split { threshold, .. } => threshold.is_finite(),
                    Node::Leaf { value } => value.is_finite(),
                };
                if !ok {
                    return Err(Error::validation(format!(
                        "tree {t}: non-finite threshold or value"
                    )));
                }
            }
        }
        let mut leaf_offsets = Vec::with_capacity(trees.len());
        let mut acc = 0;
        for tree in &trees {
            leaf_offsets.push(acc);
            acc += tree.leaf_count();
        }
        Ok(Self {
            trees,
            num_features,
            leaf_offsets,
        })
    }

    pub fn load(path: impl AsRef<Path>, format: ModelFormat) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match format {
            ModelFormat::Canonical => Self::from_canonical_json(&text),
            ModelFormat::XgboostDump => {
                xgboost::parse_dump(&text, &XgboostImportOptions::default())
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_canonical_json()).map_err(|e| Error::io(path, e))
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    /// Total number of nodes over all trees.
    pub fn node_count(&self) -> usize {
        self.trees.iter().map(Tree::node_count).sum()
    }

    pub fn leaf_count(&self) -> usize {
        self.trees.iter().map(Tree::leaf_count).sum()
    }

    /// Ensemble-wide id of the leaf with local ordinal `ordinal` in tree `tree`.
    pub fn leaf_id(&self, tree: usize, ordinal: usize) -> usize {
        self.leaf_offsets[tree] + ordinal
    }

    /// Leaf values indexed by ensemble-wide leaf id.
    pub fn leaf_values(&self) -> Vec<f64> {
        self.trees.iter().flat_map(Tree::leaf_values).collect()
    }

    /// Returns `true` if some split in the ensemble tests `feature`.
    pub fn uses_feature(&self, feature: usize) -> bool {
        self.trees.iter().any(|t| {
            t.nodes
                .iter()
                .any(|n| matches!(n, Node::Split { feature: f, .. } if *f == feature))
        })
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_features {
            return Err(Error::DimensionMismatch {
                expected: self.num_features,
                actual: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "feature {i} is {}; inputs must be finite",
                x[i]
            )));
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.predict_unchecked(x))
    }

    /// Prediction without the dimension/finiteness check; `x` must have at
    /// least `num_features` entries.
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum()
    }

    /// Raises the declared dimensionality, e.g. when a dump only mentions a
    /// prefix of the dataset's columns.
    pub fn with_num_features(mut self, num_features: usize) -> Result<Self> {
        if num_features < self.num_features {
            return Err(Error::validation(format!(
                "cannot shrink model from {} to {num_features} features",
                self.num_features
            )));
        }
        self.num_features = num_features;
        Ok(self)
    }

    /// Applies `f` to every leaf value.
    pub fn map_leaf_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let trees = self.trees.iter().map(|t| t.map_leaves(&f)).collect();
        Self::new(trees, self.num_features)
    }

    pub fn from_canonical_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("line {}, column {}", e.line(), e.column()), e))?;
        let obj = root
            .as_object()
            .ok_or_else(|| Error::parse("$", "top level must be an object"))?;
        let num_features = obj
            .get("num_features")
            .and_then(Value::as_u64)
            .ok_or_else(|| {
                Error::parse("$.num_features", "missing or not a non-negative integer")
            })? as usize;
        let trees_json = obj
            .get("trees")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::parse("$.trees", "missing or not an array"))?;
        let mut trees = Vec::with_capacity(trees_json.len());
        for (t, tree_json) in trees_json.iter().enumerate() {
            let mut nodes = Vec::new();
            parse_canonical_node(tree_json, &format!("$.trees[{t}]"), &mut nodes)?;
            trees.push(Tree::from_nodes(nodes)?);
        }
        Self::new(trees, num_features)
    }

    pub fn to_canonical_json(&self) -> String {
        fn node_json(tree: &Tree, i: usize) -> Value {
            match tree.nodes[i] {
                Node::Leaf { value } => json!({ "value": value }),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => json!({
                    "feature": feature,
                    "threshold": threshold,
                    "left": node_json(tree, left),
                    "right": node_json(tree, right),
                }),
            }
        }
        let trees: Vec<Value> = self.trees.iter().map(|t| node_json(t, 0)).collect();
        let mut top = Map::new();
        top.insert("num_features".into(), json!(self.num_features));
        top.insert("trees".into(), Value::Array(trees));
        let mut out = serde_json::to_string_pretty(&Value::Object(top)).expect("serializable");
        out.push('\n');
        out
    }
}

fn parse_canonical_node(value: &Value, location: &str, nodes: &mut Vec<Node>) -> Result<usize> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::parse(location, "node must be an object"))?;
    let index = nodes.len();
    if let Some(v) = obj.get("value") {
        if obj.len() != 1 {
            return Err(Error::validation(format!(
                "{location}: leaf node must only carry \"value\""
            )));
        }
        let value = v
            .as_f64()
            .ok_or_else(|| Error::parse(location, "\"value\" must be a number"))?;
        nodes.push(Node::Leaf { value });
        return Ok(index);
    }
    let (Some(left), Some(right)) = (obj.get("left"), obj.get("right")) else {
        return Err(Error::validation(format!(
            "{location}: internal node must have both \"left\" and \"right\" children"
        )));
    };
    let feature = obj
        .get("feature")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::parse(location, "\"feature\" must be a non-negative integer"))?
        as usize;
    let threshold = obj
        .get("threshold")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::parse(location, "\"threshold\" must be a number"))?;
    if let Some(extra) = obj
        .keys()
        .find(|k| !matches!(k.as_str(), "feature" | "threshold" | "left" | "right"))
    {
        return Err(Error::validation(format!(
            "{location}: unexpected field {extra:?}"
        )));
    }
    nodes.push(Node::Split {
        feature,
        threshold,
        left: 0,
        right: 0,
    });
    let l = parse_canonical_node(left, &format!("{location}.left"), nodes)?;
    let r = parse_canonical_node(right, &format!("{location}.right"), nodes)?;
    nodes[index] = Node::Split {
        feature,
        threshold,
        left: l,
        right: r,
    };
    Ok(index)
}
