//! Readers and writers for model files.
//!
//! Two formats are supported:
//!
//! * the canonical leaf-box document, a self-describing JSON object listing
//!   every leaf box with its score vector (infinite bounds are written as the
//!   strings `"-inf"` / `"inf"`);
//! * the JSON tree dump emitted by mainstream gradient-boosting libraries
//!   (`dump_model(..., dump_format="json")`), where each node carries
//!   `nodeid`, `split`, `split_condition`, `yes`, `no`, `missing` and
//!   `children`, and leaves carry `leaf`. The `yes` branch is taken when
//!   `x < split_condition`. Default (`missing`) directions are ignored.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::model::{AggregationKind, AggregationRule, EnsembleModel, LeafBox, TreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    GbdtJsonDump,
    Canonical,
}

impl std::str::FromStr for DumpFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gbdt-json-dump" | "gbdt" | "xgboost-json" => Ok(DumpFormat::GbdtJsonDump),
            "canonical" => Ok(DumpFormat::Canonical),
            other => Err(format!("unknown model format `{other}`")),
        }
    }
}

/// Which class each tree of a multiclass dump votes for.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TreeClassMap {
    /// Tree `t` votes for class `t % classes`.
    #[default]
    RoundRobin,
    Explicit(Vec<usize>),
}

/// Model metadata the tree dump does not carry.
#[derive(Debug, Clone)]
pub struct DumpOptions {
    /// Feature count; inferred from the largest split index when absent.
    pub dims: Option<usize>,
    pub classes: usize,
    pub aggregation: AggregationKind,
    /// Margin-space offset added before aggregation.
    pub base_score: f64,
    pub feature_names: Option<Vec<String>>,
    pub tree_classes: TreeClassMap,
}

impl Default for DumpOptions {
    fn default() -> Self {
        DumpOptions {
            dims: None,
            classes: 1,
            aggregation: AggregationKind::LogisticSum,
            base_score: 0.0,
            feature_names: None,
            tree_classes: TreeClassMap::RoundRobin,
        }
    }
}

/// Parses a model file of the given format into the leaf-box model.
pub fn ingest_dump(source: &[u8], format: DumpFormat, options: &DumpOptions) -> Result<EnsembleModel> {
    let text = std::str::from_utf8(source).map_err(|e| Error::Syntax {
        offset: e.valid_up_to(),
        line: 0,
        column: 0,
        message: "input is not valid UTF-8".into(),
    })?;
    match format {
        DumpFormat::Canonical => read_canonical(text),
        DumpFormat::GbdtJsonDump => {
            let trees = parse_gbdt_dump(text, options.feature_names.as_deref())?;
            let dims = match options.dims {
                Some(d) => d,
                None => trees
                    .iter()
                    .filter_map(TreeNode::max_feature)
                    .max()
                    .map_or(1, |f| f + 1),
            };
            let tree_classes = match &options.tree_classes {
                TreeClassMap::RoundRobin => None,
                TreeClassMap::Explicit(map) => Some(map.as_slice()),
            };
            let mut model = EnsembleModel::from_trees(
                &trees,
                dims,
                options.classes,
                AggregationRule::new(options.aggregation, options.base_score),
                tree_classes,
            )?;
            if let Some(names) = &options.feature_names {
                if names.len() != dims {
                    return Err(Error::InvalidModel(format!(
                        "{} feature names for {dims} features",
                        names.len()
                    )));
                }
                model.feature_names = Some(names.clone());
            }
            Ok(model)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CanonicalLeaf {
    tree: usize,
    intervals: Vec<Interval>,
    score: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalModel {
    dims: usize,
    classes: usize,
    num_trees: usize,
    aggregation: AggregationRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_names: Option<Vec<String>>,
    leaves: Vec<CanonicalLeaf>,
}

pub fn read_canonical(text: &str) -> Result<EnsembleModel> {
    let doc: CanonicalModel = serde_json::from_str(text).map_err(|e| Error::syntax(text, &e))?;
    let mut per_tree = vec![0usize; doc.num_trees];
    let mut leaves = Vec::with_capacity(doc.leaves.len());
    for (i, leaf) in doc.leaves.into_iter().enumerate() {
        let Some(counter) = per_tree.get_mut(leaf.tree) else {
            return Err(Error::Parse {
                path: format!("leaves[{i}].tree"),
                message: format!("tree {} out of range ({} trees)", leaf.tree, doc.num_trees),
            });
        };
        let leaf_id = *counter;
        *counter += 1;
        leaves.push(LeafBox {
            intervals: leaf.intervals,
            score: leaf.score,
            tree_id: leaf.tree,
            leaf_id,
        });
    }
    EnsembleModel::new(
        doc.dims,
        doc.classes,
        doc.num_trees,
        leaves,
        doc.aggregation,
        doc.feature_names,
    )
}

/// Serializes a model to the canonical JSON document.
pub fn to_canonical_json(model: &EnsembleModel) -> String {
    let doc = CanonicalModel {
        dims: model.dims,
        classes: model.classes,
        num_trees: model.num_trees,
        aggregation: model.aggregation,
        feature_names: model.feature_names.clone(),
        leaves: model
            .leaves
            .iter()
            .map(|leaf| CanonicalLeaf {
                tree: leaf.tree_id,
                intervals: leaf.intervals.clone(),
                score: leaf.score.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("canonical model serializes")
}

/// Parses a gradient-boosting JSON tree dump into tree structures.
pub fn parse_gbdt_dump(text: &str, feature_names: Option<&[String]>) -> Result<Vec<TreeNode>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::syntax(text, &e))?;
    let trees = match &root {
        Value::Array(items) => items,
        _ => {
            return Err(Error::Parse {
                path: "$".into(),
                message: "expected an array of trees".into(),
            })
        }
    };
    let names: HashMap<&str, usize> = feature_names
        .unwrap_or_default()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    trees
        .iter()
        .enumerate()
        .map(|(t, tree)| {
            // some dumpers emit each tree as an embedded JSON string
            let owned;
            let tree = match tree {
                Value::String(s) => {
                    owned = serde_json::from_str::<Value>(s).map_err(|e| Error::Parse {
                        path: format!("tree[{t}]"),
                        message: e.to_string(),
                    })?;
                    &owned
                }
                other => other,
            };
            convert_node(tree, &format!("tree[{t}]"), &names)
        })
        .collect()
}

fn convert_node(node: &Value, path: &str, names: &HashMap<&str, usize>) -> Result<TreeNode> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_string(),
        message,
    };
    let obj = node
        .as_object()
        .ok_or_else(|| parse_err("expected a node object".into()))?;
    let path = match obj.get("nodeid").and_then(Value::as_u64) {
        Some(id) => format!("{path}/node {id}"),
        None => path.to_string(),
    };
    let parse_err = |message: String| Error::Parse {
        path: path.clone(),
        message,
    };

    if let Some(leaf) = obj.get("leaf") {
        let value = leaf
            .as_f64()
            .ok_or_else(|| parse_err(format!("leaf value {leaf} is not a number")))?;
        return Ok(TreeNode::leaf(value));
    }

    let split = obj
        .get("split")
        .ok_or_else(|| parse_err("node has neither `leaf` nor `split`".into()))?;
    let feature = match split {
        Value::Number(n) => n
            .as_u64()
            .map(|f| f as usize)
            .ok_or_else(|| parse_err(format!("bad feature index {n}")))?,
        Value::String(s) => match names.get(s.as_str()) {
            Some(&i) => i,
            None => s
                .strip_prefix('f')
                .and_then(|rest| rest.parse::<usize>().ok())
                .ok_or_else(|| parse_err(format!("unknown feature `{s}`")))?,
        },
        other => return Err(parse_err(format!("bad split field {other}"))),
    };
    let threshold = match obj.get("split_condition") {
        Some(Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
        Some(other) => {
            return Err(Error::UnsupportedFeature {
                path,
                message: format!("non-numeric split condition {other}"),
            })
        }
        None => {
            return Err(Error::UnsupportedFeature {
                path,
                message: "split without a numeric threshold (categorical split?)".into(),
            })
        }
    };
    if !threshold.is_finite() {
        return Err(Error::UnsupportedFeature {
            path,
            message: "split threshold is not finite".into(),
        });
    }

    let child_id = |key: &str| {
        obj.get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| parse_err(format!("missing or invalid `{key}` child id")))
    };
    let (yes, no) = (child_id("yes")?, child_id("no")?);
    let children = obj
        .get("children")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("split node without `children`".into()))?;
    let find = |id: u64| {
        children
            .iter()
            .find(|c| c.get("nodeid").and_then(Value::as_u64) == Some(id))
            .ok_or_else(|| parse_err(format!("child node {id} not found")))
    };
    let left = convert_node(find(yes)?, &path, names)?;
    let right = convert_node(find(no)?, &path, names)?;
    Ok(TreeNode::split(feature, threshold, left, right))
}

#[cfg(test)]
mod tests {
    use super::*;

    const STUMP_DUMP: &str = r#"[
      {"nodeid":0,"depth":0,"split":"f0","split_condition":2.0,"yes":1,"no":2,"missing":1,
       "children":[{"nodeid":1,"leaf":-1.0},{"nodeid":2,"leaf":1.0}]}
    ]"#;

    fn regression_options() -> DumpOptions {
        DumpOptions {
            aggregation: AggregationKind::IdentitySum,
            ..DumpOptions::default()
        }
    }

    #[test]
    fn reads_stump_dump() {
        let model = ingest_dump(STUMP_DUMP.as_bytes(), DumpFormat::GbdtJsonDump, &regression_options())
            .unwrap();
        assert_eq!(model.dims, 1);
        assert_eq!(model.leaves.len(), 2);
        assert_eq!(model.leaves[0].intervals[0], Interval::new(f64::NEG_INFINITY, 2.0));
        assert_eq!(model.leaves[1].intervals[0], Interval::new(2.0, f64::INFINITY));
        assert_eq!(model.leaves[1].score, vec![1.0]);
    }

    #[test]
    fn children_order_does_not_matter() {
        let swapped = r#"[{"nodeid":0,"split":"f0","split_condition":2.0,"yes":2,"no":1,
            "children":[{"nodeid":1,"leaf":5.0},{"nodeid":2,"leaf":7.0}]}]"#;
        let model =
            ingest_dump(swapped.as_bytes(), DumpFormat::GbdtJsonDump, &regression_options()).unwrap();
        assert_eq!(model.evaluate(&[0.0]).unwrap().margins, vec![7.0]);
        assert_eq!(model.evaluate(&[3.0]).unwrap().margins, vec![5.0]);
    }

    #[test]
    fn named_features_resolve() {
        let dump = r#"[{"nodeid":0,"split":"age","split_condition":30,"yes":1,"no":2,
            "children":[{"nodeid":1,"leaf":0.5},{"nodeid":2,"leaf":-0.5}]}]"#;
        let options = DumpOptions {
            feature_names: Some(vec!["income".into(), "age".into()]),
            dims: Some(2),
            ..regression_options()
        };
        let model = ingest_dump(dump.as_bytes(), DumpFormat::GbdtJsonDump, &options).unwrap();
        assert_eq!(model.leaves[0].intervals[1], Interval::new(f64::NEG_INFINITY, 30.0));
        assert_eq!(model.leaves[0].intervals[0], Interval::FULL);
    }

    #[test]
    fn malformed_node_reports_path() {
        let dump = r#"[{"nodeid":0,"split":"f0","split_condition":2.0,"yes":1,"no":2,
            "children":[{"nodeid":1,"leaf":-1.0},{"nodeid":2}]}]"#;
        match ingest_dump(dump.as_bytes(), DumpFormat::GbdtJsonDump, &regression_options()) {
            Err(Error::Parse { path, .. }) => assert_eq!(path, "tree[0]/node 0/node 2"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn categorical_split_is_unsupported() {
        let dump = r#"[{"nodeid":0,"split":"f0","categories":[1,2],"yes":1,"no":2,
            "children":[{"nodeid":1,"leaf":-1.0},{"nodeid":2,"leaf":1.0}]}]"#;
        assert!(matches!(
            ingest_dump(dump.as_bytes(), DumpFormat::GbdtJsonDump, &regression_options()),
            Err(Error::UnsupportedFeature { .. })
        ));
    }

    #[test]
    fn truncated_input_reports_offset() {
        let cut = &STUMP_DUMP[..60];
        match ingest_dump(cut.as_bytes(), DumpFormat::GbdtJsonDump, &regression_options()) {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, cut.len()),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn canonical_round_trip_is_exact() {
        let model = ingest_dump(STUMP_DUMP.as_bytes(), DumpFormat::GbdtJsonDump, &regression_options())
            .unwrap();
        let text = to_canonical_json(&model);
        assert!(text.contains(r#"["-inf",2.0]"#));
        let back = read_canonical(&text).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn canonical_rejects_bad_tree_index() {
        let text = r#"{"dims":1,"classes":1,"num_trees":1,
            "aggregation":{"kind":"identity-sum","base_score":0},
            "leaves":[{"tree":3,"intervals":[["-inf","inf"]],"score":[1]}]}"#;
        assert!(matches!(read_canonical(text), Err(Error::Parse { .. })));
    }
}
