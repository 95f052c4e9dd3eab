//! Counterfactual query and target definitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AggregationKind, EnsembleModel, Label, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSide {
    /// Output `<= epsilon`.
    #[default]
    Below,
    /// Output `> epsilon`.
    Above,
}

/// What the counterfactual point must achieve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CfTarget {
    /// The model must classify the point in `class`.
    Class { class: usize },
    /// The (single-output) model output must lie in `[low, high]`.
    ScoreInterval { low: f64, high: f64 },
    /// The logistic output must fall on `side` of `epsilon`.
    BinaryThreshold {
        epsilon: f64,
        #[serde(default)]
        side: ThresholdSide,
    },
}

impl CfTarget {
    pub fn is_satisfied(&self, prediction: &Prediction) -> bool {
        match *self {
            CfTarget::Class { class } => prediction.label == Label::Class(class),
            CfTarget::ScoreInterval { low, high } => {
                let v = prediction.output[0];
                low <= v && v <= high
            }
            CfTarget::BinaryThreshold { epsilon, side } => match side {
                ThresholdSide::Below => prediction.output[0] <= epsilon,
                ThresholdSide::Above => prediction.output[0] > epsilon,
            },
        }
    }

    /// Interval target `[F(x) - eps, F(x) + eps]` around the model's own
    /// prediction at `x`.
    pub fn around_prediction(model: &EnsembleModel, x: &[f64], eps: f64) -> Result<CfTarget> {
        if model.classes != 1 {
            return Err(Error::InvalidQuery(
                "prediction tolerance needs a single-output model".into(),
            ));
        }
        if !(eps >= 0.0) {
            return Err(Error::InvalidQuery(format!("tolerance {eps} must be >= 0")));
        }
        let v = model.evaluate(x)?.output[0];
        Ok(CfTarget::ScoreInterval {
            low: v - eps,
            high: v + eps,
        })
    }

    pub fn validate(&self, model: &EnsembleModel) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidQuery(m));
        match *self {
            CfTarget::Class { class } => {
                if !model.is_classifier() {
                    return bad("class targets need a classification model".into());
                }
                if class >= model.num_labels() {
                    return bad(format!(
                        "target class {class} out of range ({} classes)",
                        model.num_labels()
                    ));
                }
            }
            CfTarget::ScoreInterval { low, high } => {
                if model.classes != 1 {
                    return bad("interval targets need a single-output model".into());
                }
                if low.is_nan() || high.is_nan() || low > high {
                    return bad(format!("invalid target interval [{low}, {high}]"));
                }
            }
            CfTarget::BinaryThreshold { epsilon, .. } => {
                if model.aggregation.kind != AggregationKind::LogisticSum {
                    return bad("threshold targets need a logistic model".into());
                }
                if !(epsilon > 0.0 && epsilon < 1.0) {
                    return bad(format!("threshold {epsilon} must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// A counterfactual request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfQuery {
    pub x: Vec<f64>,
    pub target: CfTarget,
    /// Dimensions whose value must stay equal to `x`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed_dims: Vec<usize>,
    /// Per-dimension non-negative weights of the squared distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Squared-distance radius for counterfactual sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// When set, counterfactual sets target `[F(x) - eps, F(x) + eps]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_pred: Option<f64>,
}

impl CfQuery {
    pub fn new(x: Vec<f64>, target: CfTarget) -> CfQuery {
        CfQuery {
            x,
            target,
            fixed_dims: Vec::new(),
            weights: None,
            radius: None,
            epsilon_pred: None,
        }
    }

    pub fn with_fixed(mut self, dims: impl IntoIterator<Item = usize>) -> CfQuery {
        self.fixed_dims.extend(dims);
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> CfQuery {
        self.weights = Some(weights);
        self
    }

    pub fn with_radius(mut self, radius: f64) -> CfQuery {
        self.radius = Some(radius);
        self
    }

    pub fn validate(&self, model: &EnsembleModel) -> Result<()> {
        model.check_point(&self.x)?;
        self.target.validate(model)?;
        if let Some(&d) = self.fixed_dims.iter().find(|&&d| d >= model.dims) {
            return Err(Error::InvalidQuery(format!(
                "fixed dimension {d} out of range ({} dimensions)",
                model.dims
            )));
        }
        if let Some(w) = &self.weights {
            if w.len() != model.dims {
                return Err(Error::InvalidQuery(format!(
                    "{} weights for {} dimensions",
                    w.len(),
                    model.dims
                )));
            }
            if let Some(d) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidQuery(format!(
                    "weight {} of dimension {d} must be finite and >= 0",
                    w[d]
                )));
            }
        }
        if let Some(r) = self.radius {
            if !(r >= 0.0) {
                return Err(Error::InvalidQuery(format!("radius {r} must be >= 0")));
            }
        }
        if let Some(e) = self.epsilon_pred {
            if !(e >= 0.0) {
                return Err(Error::InvalidQuery(format!("tolerance {e} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn weight(&self, d: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[d])
    }

    pub fn is_fixed(&self, d: usize) -> bool {
        self.fixed_dims.contains(&d)
    }
}
