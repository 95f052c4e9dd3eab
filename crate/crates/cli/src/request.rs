//! Query execution shared by the command line and the service.

use boxcf::{project_regions, CfQuery, Error, Explainer, SearchOptions};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::render;

/// A counterfactual query plus per-request search settings.
#[derive(Debug, Clone, Deserialize)]
pub struct CfRequest {
    #[serde(flatten)]
    pub query: CfQuery,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub split_depth: Option<usize>,
    #[serde(default)]
    pub bound_prune: Option<bool>,
    #[serde(default)]
    pub max_regions: Option<usize>,
    /// Include search telemetry in the reply.
    #[serde(default)]
    pub stats: bool,
}

impl CfRequest {
    pub fn new(query: CfQuery) -> CfRequest {
        CfRequest {
            query,
            workers: None,
            split_depth: None,
            bound_prune: None,
            max_regions: None,
            stats: false,
        }
    }

    pub fn options(&self, base: &SearchOptions) -> SearchOptions {
        let mut options = base.clone();
        if let Some(w) = self.workers {
            options.workers = w;
        }
        if self.split_depth.is_some() {
            options.split_depth = self.split_depth;
        }
        if let Some(b) = self.bound_prune {
            options.bound_prune = b;
        }
        if let Some(m) = self.max_regions {
            options.max_regions = m;
        }
        options
    }
}

/// Outcome of a request, with its exit code and HTTP status.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Ok(Value),
    NotFound(Value),
    Invalid(String),
    TooLarge(String),
    Budget(Value),
    Internal(String),
}

impl Reply {
    pub fn exit_code(&self) -> i32 {
        match self {
            Reply::Ok(_) => 0,
            Reply::NotFound(_) => 2,
            _ => 1,
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            Reply::Ok(_) => 200,
            Reply::NotFound(_) => 422,
            Reply::Invalid(_) => 400,
            Reply::TooLarge(_) => 413,
            Reply::Budget(_) => 503,
            Reply::Internal(_) => 500,
        }
    }

    pub fn body(&self) -> Value {
        match self {
            Reply::Ok(v) | Reply::NotFound(v) | Reply::Budget(v) => v.clone(),
            Reply::Invalid(m) | Reply::TooLarge(m) | Reply::Internal(m) => {
                json!({"status": "error", "message": m})
            }
        }
    }
}

impl From<Error> for Reply {
    fn from(e: Error) -> Reply {
        match e {
            Error::NotFound { reason } => Reply::NotFound(render::not_found(&reason)),
            Error::BudgetExceeded { stats } => Reply::Budget(render::budget_exceeded(&stats)),
            Error::DecompositionTooLarge { .. } => Reply::TooLarge(e.to_string()),
            Error::ValidationFailure(_) | Error::Io(_) => Reply::Internal(e.to_string()),
            _ => Reply::Invalid(e.to_string()),
        }
    }
}

/// Optimal counterfactual; a radius in the query is ignored.
pub fn answer_cf(explainer: &Explainer, request: &CfRequest, base: &SearchOptions) -> Reply {
    if request.query.epsilon_pred.is_some() {
        return Reply::Invalid("a prediction tolerance needs a radius".into());
    }
    let options = request.options(base);
    match explainer.cf_with_stats(&request.query, &options) {
        Ok((result, stats)) => Reply::Ok(render::cf_result(&result, request.stats.then_some(&stats))),
        Err(e) => e.into(),
    }
}

/// Every target region within the query's radius.
pub fn answer_set(explainer: &Explainer, request: &CfRequest, base: &SearchOptions) -> Reply {
    match explainer.cf_set(&request.query, &request.options(base)) {
        Ok(entries) => Reply::Ok(render::cf_set(&entries)),
        Err(e) => e.into(),
    }
}

/// Counterfactual set projected onto two dimensions.
pub fn answer_projection(
    explainer: &Explainer,
    request: &CfRequest,
    base: &SearchOptions,
    dims: (usize, usize),
) -> Reply {
    let entries = match explainer.cf_set(&request.query, &request.options(base)) {
        Ok(entries) => entries,
        Err(e) => return e.into(),
    };
    match project_regions(&entries, dims) {
        Ok(boxes) => Reply::Ok(render::projection(&boxes, dims)),
        Err(e) => e.into(),
    }
}
