//! JSON bodies shared by the command line and the service, so both emit
//! the same bytes for the same query.

use boxcf::{CfResult, CfSetEntry, EnsembleModel, Prediction, ProjectedBox, SearchStats};
use serde_json::{json, Map, Value};

pub fn cf_result(result: &CfResult, stats: Option<&SearchStats>) -> Value {
    let mut body = Map::new();
    body.insert("status".into(), json!("ok"));
    body.insert("point".into(), json!(result.point));
    body.insert("sq_dist".into(), json!(result.sq_dist));
    body.insert("dist".into(), json!(result.sq_dist.sqrt()));
    body.insert("nudged".into(), json!(result.nudged));
    body.insert("validated".into(), json!(result.validated));
    body.insert("region".into(), json!(result.region));
    if let Some(stats) = stats {
        body.insert("stats".into(), json!(stats));
    }
    Value::Object(body)
}

pub fn cf_set(entries: &[CfSetEntry]) -> Value {
    let regions: Vec<Value> = entries
        .iter()
        .map(|e| {
            json!({
                "point": e.point,
                "sq_dist": e.sq_dist,
                "dist": e.sq_dist.sqrt(),
                "nudged": e.nudged,
                "region": e.region,
            })
        })
        .collect();
    json!({"status": "ok", "count": regions.len(), "regions": regions})
}

pub fn projection(boxes: &[ProjectedBox], dims: (usize, usize)) -> Value {
    json!({"status": "ok", "dims": [dims.0, dims.1], "boxes": boxes})
}

pub fn not_found(reason: &str) -> Value {
    json!({"status": "not_found", "reason": reason})
}

pub fn budget_exceeded(stats: &SearchStats) -> Value {
    json!({"status": "budget_exceeded", "stats": stats})
}

pub fn prediction(p: &Prediction) -> Value {
    json!({"scores": p.margins, "output": p.output, "class": p.label})
}

pub fn model_summary(model: &EnsembleModel) -> Value {
    json!({
        "dims": model.dims,
        "classes": model.classes,
        "num_trees": model.num_trees,
        "num_leaves": model.num_leaves(),
        "aggregation": model.aggregation,
        "feature_names": model.feature_names,
    })
}

/// Compact single-line rendering used for every response.
pub fn to_line(value: &Value) -> String {
    serde_json::to_string(value).expect("JSON values always serialize")
}
