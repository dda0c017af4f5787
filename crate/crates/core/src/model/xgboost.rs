//! Importer for XGBoost's JSON text dump.
//!
//! A dump is an array with one object per tree. Internal nodes look like
//! `{"nodeid": 0, "split": "f2", "split_condition": 0.5, "yes": 1, "no": 2,
//! "missing": 1, "children": [...]}` and leaves like `{"nodeid": 1, "leaf": 0.3}`.
//! XGBoost sends `x < split_condition` to `yes`, which becomes the left child.

use std::collections::HashMap;

use serde_json::Value;

use super::{Node, Tree, TreeEnsemble};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct XgboostImportOptions {
    /// Names used in `"split"` when the booster was dumped with a feature map.
    pub feature_names: Option<Vec<String>>,
    /// Declared dimensionality; defaults to one past the largest split feature
    /// (or the length of `feature_names`).
    pub num_features: Option<usize>,
    /// Global bias added to every prediction, folded in as a single-leaf tree.
    pub base_score: f64,
}

pub fn parse_dump(text: &str, options: &XgboostImportOptions) -> Result<TreeEnsemble> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("line {}, column {}", e.line(), e.column()), e))?;
    let trees_json = root
        .as_array()
        .ok_or_else(|| Error::parse("$", "an XGBoost dump must be a JSON array of trees"))?;

    let name_lookup: Option<HashMap<&str, usize>> = options.feature_names.as_ref().map(|names| {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect()
    });

    let mut trees = Vec::with_capacity(trees_json.len() + 1);
    for (t, tree_json) in trees_json.iter().enumerate() {
        let mut importer = TreeImporter {
            names: name_lookup.as_ref(),
            nodes: Vec::new(),
        };
        importer.node(tree_json, &format!("$[{t}]"))?;
        trees.push(Tree::from_nodes(importer.nodes)?);
    }
    if options.base_score != 0.0 {
        trees.push(Tree::leaf(options.base_score));
    }

    let inferred = trees
        .iter()
        .filter_map(|t| t.max_feature())
        .max()
        .map_or(0, |m| m + 1)
        .max(options.feature_names.as_ref().map_or(0, Vec::len));
    let num_features = match options.num_features {
        Some(d) if d < inferred => {
            return Err(Error::validation(format!(
                "dump references feature {} but only {d} features were declared",
                inferred - 1
            )))
        }
        Some(d) => d,
        None => inferred,
    };
    TreeEnsemble::new(trees, num_features)
}

struct TreeImporter<'a> {
    names: Option<&'a HashMap<&'a str, usize>>,
    nodes: Vec<Node>,
}

impl TreeImporter<'_> {
    fn node(&mut self, value: &Value, location: &str) -> Result<usize> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::parse(location, "node must be an object"))?;
        let index = self.nodes.len();
        if let Some(leaf) = obj.get("leaf") {
            let value = leaf
                .as_f64()
                .ok_or_else(|| Error::parse(location, "\"leaf\" must be a number"))?;
            self.nodes.push(Node::Leaf { value });
            return Ok(index);
        }

        let split = obj
            .get("split")
            .ok_or_else(|| Error::parse(location, "node has neither \"leaf\" nor \"split\""))?;
        let feature = self.feature(split, location)?;
        let threshold = obj
            .get("split_condition")
            .and_then(Value::as_f64)
            .ok_or_else(|| {
                Error::validation(format!(
                    "{location}: missing numeric \"split_condition\" (categorical splits are unsupported)"
                ))
            })?;
        let yes = id_field(obj.get("yes"), "yes", location)?;
        let no = id_field(obj.get("no"), "no", location)?;
        if let Some(missing) = obj.get("missing") {
            let missing = id_field(Some(missing), "missing", location)?;
            if missing != yes && missing != no {
                return Err(Error::validation(format!(
                    "{location}: \"missing\" branch {missing} is neither the yes ({yes}) nor the no ({no}) child"
                )));
            }
        }
        let children = obj
            .get("children")
            .and_then(Value::as_array)
            .ok_or_else(|| {
                Error::validation(format!("{location}: internal node without \"children\""))
            })?;
        if children.len() != 2 {
            return Err(Error::validation(format!(
                "{location}: expected 2 children, found {}",
                children.len()
            )));
        }
        let find = |id: u64, branch: &str| {
            children
                .iter()
                .position(|c| c.get("nodeid").and_then(Value::as_u64) == Some(id))
                .ok_or_else(|| {
                    Error::validation(format!(
                        "{location}: {branch} child with nodeid {id} not found"
                    ))
                })
        };
        let yes_pos = find(yes, "yes")?;
        let no_pos = find(no, "no")?;
        if yes_pos == no_pos {
            return Err(Error::validation(format!(
                "{location}: yes and no point to the same child"
            )));
        }

        self.nodes.push(Node::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let left = self.node(
            &children[yes_pos],
            &format!("{location}.children[{yes_pos}]"),
        )?;
        let right = self.node(&children[no_pos], &format!("{location}.children[{no_pos}]"))?;
        self.nodes[index] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        Ok(index)
    }

    fn feature(&self, split: &Value, location: &str) -> Result<usize> {
        if let Some(i) = split.as_u64() {
            return Ok(i as usize);
        }
        let name = split
            .as_str()
            .ok_or_else(|| Error::parse(location, "\"split\" must be a string or integer"))?;
        if let Some(names) = self.names {
            if let Some(&i) = names.get(name) {
                return Ok(i);
            }
        }
        name.strip_prefix('f')
            .unwrap_or(name)
            .parse::<usize>()
            .map_err(|_| Error::validation(format!("{location}: unknown split feature {name:?}")))
    }
}

fn id_field(value: Option<&Value>, name: &str, location: &str) -> Result<u64> {
    value
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::parse(location, format!("\"{name}\" must be a node id")))
}
