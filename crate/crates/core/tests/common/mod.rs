#![allow(dead_code)]

use boxcf::{
    generate_model, random_point, AggregationKind, CfQuery, CfTarget, EnsembleModel, Label,
    RandomModelSpec, TreeNode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small random model: up to 8 trees of depth 3 over at most 4 features.
/// Seeds cycle through regression, logistic and 2/3-class softmax.
pub fn small_model(seed: u64) -> EnsembleModel {
    let (aggregation, classes) = match seed % 4 {
        0 => (AggregationKind::IdentitySum, 1),
        1 => (AggregationKind::LogisticSum, 1),
        2 => (AggregationKind::SoftmaxSum, 2),
        _ => (AggregationKind::SoftmaxSum, 3),
    };
    let spec = RandomModelSpec {
        seed,
        aggregation,
        classes,
        base_score: if seed % 5 == 0 { 0.25 } else { 0.0 },
        ..RandomModelSpec::default()
    };
    generate_model(&spec)
}

/// A target for `model` that differs from its prediction at `x` where
/// possible.
pub fn random_target(model: &EnsembleModel, x: &[f64], rng: &mut ChaCha8Rng) -> CfTarget {
    if model.is_classifier() {
        let current = match model.evaluate(x).unwrap().label {
            Label::Class(c) => c,
            Label::Value(_) => unreachable!(),
        };
        let k = model.num_labels();
        let class = (current + rng.random_range(1..k)) % k;
        CfTarget::Class { class }
    } else {
        let y = random_point(model, rng);
        let v = model.evaluate(&y).unwrap().output[0];
        CfTarget::ScoreInterval {
            low: v - 0.25,
            high: v + 0.125,
        }
    }
}

/// Plain queries, with one restricted and one weighted query in five.
pub fn random_queries(model: &EnsembleModel, seed: u64, n: usize) -> Vec<CfQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    (0..n)
        .map(|i| {
            let x = random_point(model, &mut rng);
            let target = random_target(model, &x, &mut rng);
            let mut q = CfQuery::new(x, target);
            if i % 5 == 3 && model.dims > 1 {
                q = q.with_fixed([rng.random_range(0..model.dims)]);
            }
            if i % 5 == 4 {
                let w = (0..model.dims)
                    .map(|_| [0.25, 0.5, 1.0, 2.0, 4.0][rng.random_range(0..5)])
                    .collect();
                q = q.with_weights(w);
            }
            q
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Serializes trees in the gbdt JSON dump layout, numbering nodes
/// breadth-first.
pub fn to_dump(trees: &[TreeNode]) -> String {
    fn node(t: &TreeNode, id: u64, next: &mut u64) -> serde_json::Value {
        match t {
            TreeNode::Leaf { value } => serde_json::json!({"nodeid": id, "leaf": value}),
            TreeNode::Split { feature, threshold, left, right } => {
                let (yes, no) = (*next, *next + 1);
                *next += 2;
                serde_json::json!({
                    "nodeid": id,
                    "split": format!("f{feature}"),
                    "split_condition": threshold,
                    "yes": yes,
                    "no": no,
                    "missing": yes,
                    "children": [node(left, yes, next), node(right, no, next)],
                })
            }
        }
    }
    let dumped: Vec<serde_json::Value> = trees
        .iter()
        .map(|t| {
            let mut next = 1;
            node(t, 0, &mut next)
        })
        .collect();
    serde_json::to_string_pretty(&dumped).unwrap()
}
