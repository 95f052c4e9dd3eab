//! The canonical leaf-box view of a tree ensemble.
//!
//! Every leaf of every tree is stored as an axis-aligned box (one half-open
//! interval per feature) together with the score vector it contributes to
//! the ensemble sum. Predictions are computed by summing the scores of the
//! leaves that contain a point and applying the aggregation rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;

/// How per-tree scores are combined into the model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationKind {
    /// Squared-loss regression: output is the raw sum.
    IdentitySum,
    /// Binary classification: output is the sigmoid of the sum.
    LogisticSum,
    /// Multiclass classification: output is the softmax of per-class sums.
    SoftmaxSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationRule {
    pub kind: AggregationKind,
    /// Added to every margin before aggregation, in margin units.
    #[serde(default)]
    pub base_score: f64,
}

impl AggregationRule {
    pub fn new(kind: AggregationKind, base_score: f64) -> Self {
        AggregationRule { kind, base_score }
    }
}

/// One tree leaf as a box in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafBox {
    pub intervals: Vec<Interval>,
    pub score: Vec<f64>,
    pub tree_id: usize,
    /// Ordinal of the leaf inside its tree (left-first traversal order).
    pub leaf_id: usize,
}

impl LeafBox {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.intervals.iter().zip(x).all(|(iv, &v)| iv.contains(v))
    }
}

/// Class decision or regression value attached to a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Raw per-class sums including the base score.
    pub margins: Vec<f64>,
    /// Margins after the aggregation function.
    pub output: Vec<f64>,
    pub label: Label,
}

/// Binary decision tree used to build models from split structures.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    /// `x[feature] < threshold` goes left, everything else goes right.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf(value: f64) -> TreeNode {
        TreeNode::Leaf { value }
    }

    pub fn split(feature: usize, threshold: f64, left: TreeNode, right: TreeNode) -> TreeNode {
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Direct root-to-leaf traversal.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *threshold { left } else { right };
                }
            }
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature,
                left,
                right,
                ..
            } => [Some(*feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Boxes of all leaves in left-first order, folding repeated tests on a
    /// feature into a single interval per dimension.
    pub fn leaf_boxes(&self, dims: usize, tree_id: usize) -> Result<Vec<(Vec<Interval>, f64)>> {
        let mut out = Vec::new();
        let mut path = vec![Interval::FULL; dims];
        self.collect_boxes(&mut path, tree_id, &mut out)?;
        Ok(out)
    }

    fn collect_boxes(
        &self,
        path: &mut Vec<Interval>,
        tree_id: usize,
        out: &mut Vec<(Vec<Interval>, f64)>,
    ) -> Result<()> {
        match self {
            TreeNode::Leaf { value } => {
                if let Some(d) = path.iter().position(|iv| iv.is_empty()) {
                    return Err(Error::Consistency {
                        tree: tree_id,
                        leaf: out.len(),
                        message: format!("empty interval {} on feature {d}", path[d]),
                    });
                }
                out.push((path.clone(), *value));
                Ok(())
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature >= path.len() {
                    return Err(Error::InvalidModel(format!(
                        "tree {tree_id} splits on feature {feature} but the model has {} features",
                        path.len()
                    )));
                }
                if !threshold.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "tree {tree_id} has non-finite threshold {threshold}"
                    )));
                }
                let saved = path[*feature];
                path[*feature] = saved.below(*threshold);
                left.collect_boxes(path, tree_id, out)?;
                path[*feature] = saved.at_or_above(*threshold);
                right.collect_boxes(path, tree_id, out)?;
                path[*feature] = saved;
                Ok(())
            }
        }
    }
}

/// A tree ensemble reformulated as a flat list of leaf boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub dims: usize,
    pub classes: usize,
    pub num_trees: usize,
    pub leaves: Vec<LeafBox>,
    pub aggregation: AggregationRule,
    pub feature_names: Option<Vec<String>>,
}

impl EnsembleModel {
    /// Assembles a model, checking every structural invariant that can be
    /// verified without sampling.
    pub fn new(
        dims: usize,
        classes: usize,
        num_trees: usize,
        leaves: Vec<LeafBox>,
        aggregation: AggregationRule,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let model = EnsembleModel {
            dims,
            classes,
            num_trees,
            leaves,
            aggregation,
            feature_names,
        };
        model.check()?;
        Ok(model)
    }

    /// Builds a model from tree structures. `tree_classes[t]` is the class
    /// that tree `t` votes for; it is ignored when `classes == 1`.
    pub fn from_trees(
        trees: &[TreeNode],
        dims: usize,
        classes: usize,
        aggregation: AggregationRule,
        tree_classes: Option<&[usize]>,
    ) -> Result<Self> {
        let mut leaves = Vec::new();
        for (t, tree) in trees.iter().enumerate() {
            let class = match tree_classes {
                Some(map) => *map.get(t).ok_or_else(|| {
                    Error::InvalidModel(format!("no class assigned to tree {t}"))
                })?,
                None => t % classes.max(1),
            };
            for (leaf_id, (intervals, value)) in tree.leaf_boxes(dims, t)?.into_iter().enumerate() {
                let mut score = vec![0.0; classes];
                if classes == 1 {
                    score[0] = value;
                } else {
                    if class >= classes {
                        return Err(Error::InvalidModel(format!(
                            "tree {t} assigned to class {class} of {classes}"
                        )));
                    }
                    score[class] = value;
                }
                leaves.push(LeafBox {
                    intervals,
                    score,
                    tree_id: t,
                    leaf_id,
                });
            }
        }
        EnsembleModel::new(dims, classes, trees.len(), leaves, aggregation, None)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.dims == 0 {
            return bad("model needs at least one feature".into());
        }
        match self.aggregation.kind {
            AggregationKind::IdentitySum | AggregationKind::LogisticSum if self.classes != 1 => {
                return bad(format!(
                    "{:?} aggregation requires exactly one score column, got {}",
                    self.aggregation.kind, self.classes
                ));
            }
            AggregationKind::SoftmaxSum if self.classes < 2 => {
                return bad(format!(
                    "softmax aggregation requires at least two classes, got {}",
                    self.classes
                ));
            }
            _ => {}
        }
        if !self.aggregation.base_score.is_finite() {
            return bad("base score must be finite".into());
        }
        if let Some(names) = &self.feature_names {
            if names.len() != self.dims {
                return bad(format!(
                    "{} feature names for {} features",
                    names.len(),
                    self.dims
                ));
            }
        }
        if self.leaves.len() > u32::MAX as usize {
            return bad("too many leaves".into());
        }
        let mut seen = vec![false; self.num_trees];
        for (i, leaf) in self.leaves.iter().enumerate() {
            if leaf.tree_id >= self.num_trees {
                return bad(format!(
                    "leaf {i} belongs to tree {} but the model has {} trees",
                    leaf.tree_id, self.num_trees
                ));
            }
            seen[leaf.tree_id] = true;
            if leaf.intervals.len() != self.dims {
                return bad(format!(
                    "leaf {i} has {} intervals, expected {}",
                    leaf.intervals.len(),
                    self.dims
                ));
            }
            if leaf.score.len() != self.classes {
                return bad(format!(
                    "leaf {i} has {} scores, expected {}",
                    leaf.score.len(),
                    self.classes
                ));
            }
            if leaf.score.iter().any(|s| !s.is_finite()) {
                return bad(format!("leaf {i} has a non-finite score"));
            }
            if let Some(d) = leaf.intervals.iter().position(|iv| !iv.is_valid()) {
                return Err(Error::Consistency {
                    tree: leaf.tree_id,
                    leaf: leaf.leaf_id,
                    message: format!("invalid interval {} on feature {d}", leaf.intervals[d]),
                });
            }
        }
        if let Some(t) = seen.iter().position(|s| !s) {
            return bad(format!("tree {t} has no leaves"));
        }
        Ok(())
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Number of distinct class labels (2 for a logistic model).
    pub fn num_labels(&self) -> usize {
        match self.aggregation.kind {
            AggregationKind::IdentitySum => 0,
            AggregationKind::LogisticSum => 2,
            AggregationKind::SoftmaxSum => self.classes,
        }
    }

    pub fn is_classifier(&self) -> bool {
        self.aggregation.kind != AggregationKind::IdentitySum
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims {
            return Err(Error::InvalidQuery(format!(
                "point has {} coordinates, model expects {}",
                x.len(),
                self.dims
            )));
        }
        if let Some(d) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidQuery(format!(
                "coordinate {d} is not finite ({})",
                x[d]
            )));
        }
        Ok(())
    }

    /// Sums the scores of the given leaves (ascending index order) on top of
    /// the base score.
    pub fn margins_of(&self, members: impl IntoIterator<Item = usize>) -> Vec<f64> {
        let mut margins = vec![self.aggregation.base_score; self.classes];
        for i in members {
            for (m, s) in margins.iter_mut().zip(&self.leaves[i].score) {
                *m += s;
            }
        }
        margins
    }

    /// Applies the aggregation rule and the class decision to raw margins.
    pub fn aggregate(&self, margins: Vec<f64>) -> Prediction {
        match self.aggregation.kind {
            AggregationKind::IdentitySum => Prediction {
                label: Label::Value(margins[0]),
                output: margins.clone(),
                margins,
            },
            AggregationKind::LogisticSum => {
                let m = margins[0];
                Prediction {
                    output: vec![sigmoid(m)],
                    label: Label::Class(usize::from(m > 0.0)),
                    margins,
                }
            }
            AggregationKind::SoftmaxSum => {
                let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = margins.iter().map(|m| (m - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let output = exps.iter().map(|e| e / total).collect();
                Prediction {
                    label: Label::Class(argmax(&margins)),
                    output,
                    margins,
                }
            }
        }
    }

    /// Leaves containing `x`, ascending.
    pub fn containing_leaves<'a>(&'a self, x: &'a [f64]) -> impl Iterator<Item = usize> + 'a {
        self.leaves
            .iter()
            .enumerate()
            .filter(move |(_, leaf)| leaf.contains(x))
            .map(|(i, _)| i)
    }

    /// Model prediction at a fully observed point.
    pub fn evaluate(&self, x: &[f64]) -> Result<Prediction> {
        self.check_point(x)?;
        Ok(self.aggregate(self.margins_of(self.containing_leaves(x))))
    }

    /// Index ranges of each tree's leaves, when leaves are grouped by tree.
    pub fn leaves_by_tree(&self) -> Vec<Vec<usize>> {
        let mut trees = vec![Vec::new(); self.num_trees];
        for (i, leaf) in self.leaves.iter().enumerate() {
            trees[leaf.tree_id].push(i);
        }
        trees
    }
}

pub fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

/// Index of the first maximal entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump() -> EnsembleModel {
        let tree = TreeNode::split(0, 2.0, TreeNode::leaf(-1.0), TreeNode::leaf(1.0));
        EnsembleModel::from_trees(
            &[tree],
            1,
            1,
            AggregationRule::new(AggregationKind::IdentitySum, 0.0),
            None,
        )
        .unwrap()
    }

    #[test]
    fn stump_becomes_two_boxes() {
        let m = stump();
        assert_eq!(m.leaves.len(), 2);
        assert_eq!(m.leaves[0].intervals, vec![Interval::new(f64::NEG_INFINITY, 2.0)]);
        assert_eq!(m.leaves[0].score, vec![-1.0]);
        assert_eq!(m.leaves[1].intervals, vec![Interval::new(2.0, f64::INFINITY)]);
        assert_eq!(m.leaves[1].score, vec![1.0]);
    }

    #[test]
    fn stump_evaluation_is_half_open() {
        let m = stump();
        assert_eq!(m.evaluate(&[0.0]).unwrap().label, Label::Value(-1.0));
        assert_eq!(m.evaluate(&[2.0]).unwrap().label, Label::Value(1.0));
        assert!(m.evaluate(&[f64::NAN]).is_err());
        assert!(m.evaluate(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn repeated_feature_tests_fold() {
        let tree = TreeNode::split(
            0,
            5.0,
            TreeNode::split(0, 2.0, TreeNode::leaf(1.0), TreeNode::leaf(2.0)),
            TreeNode::leaf(3.0),
        );
        let boxes = tree.leaf_boxes(2, 0).unwrap();
        assert_eq!(boxes[0].0[0], Interval::new(f64::NEG_INFINITY, 2.0));
        assert_eq!(boxes[0].0[1], Interval::FULL);
        assert_eq!(boxes[1].0[0], Interval::new(2.0, 5.0));
        assert_eq!(boxes[2].0[0], Interval::new(5.0, f64::INFINITY));
    }

    #[test]
    fn contradictory_path_names_tree_and_leaf() {
        let tree = TreeNode::split(
            0,
            1.0,
            TreeNode::split(0, 2.0, TreeNode::leaf(1.0), TreeNode::leaf(2.0)),
            TreeNode::leaf(3.0),
        );
        match tree.leaf_boxes(1, 7) {
            Err(Error::Consistency { tree, leaf, .. }) => {
                assert_eq!((tree, leaf), (7, 1));
            }
            other => panic!("expected consistency error, got {other:?}"),
        }
    }

    #[test]
    fn aggregation_rules() {
        let logistic = EnsembleModel::from_trees(
            &[TreeNode::leaf(0.0)],
            1,
            1,
            AggregationRule::new(AggregationKind::LogisticSum, 0.0),
            None,
        )
        .unwrap();
        let p = logistic.evaluate(&[0.0]).unwrap();
        assert_eq!(p.output, vec![0.5]);
        assert_eq!(p.label, Label::Class(0));

        let softmax = EnsembleModel::from_trees(
            &[TreeNode::leaf(1.0), TreeNode::leaf(1.0), TreeNode::leaf(-1.0)],
            1,
            3,
            AggregationRule::new(AggregationKind::SoftmaxSum, 0.0),
            None,
        )
        .unwrap();
        let p = softmax.evaluate(&[0.0]).unwrap();
        assert_eq!(p.margins, vec![1.0, 1.0, -1.0]);
        // ties resolve to the smallest class index
        assert_eq!(p.label, Label::Class(0));
        assert!((p.output.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_aggregation() {
        let err = EnsembleModel::from_trees(
            &[TreeNode::leaf(0.0)],
            1,
            2,
            AggregationRule::new(AggregationKind::LogisticSum, 0.0),
            None,
        );
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }
}
