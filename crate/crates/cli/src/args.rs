//! Parsers for the textual query syntax shared by command-line flags and
//! service query strings.

use boxcf::{CfQuery, CfTarget, ThresholdSide};

pub fn parse_point(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{v}` is not a number"))
        })
        .collect()
}

/// `LO:HI`
pub fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number"));
    Ok((num(lo)?, num(hi)?))
}

/// `EPS` or `EPS:below` / `EPS:above`
pub fn parse_threshold(s: &str) -> Result<CfTarget, String> {
    let (eps, side) = match s.split_once(':') {
        Some((e, side)) => (e, side),
        None => (s, "below"),
    };
    let epsilon = eps
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("`{eps}` is not a number"))?;
    let side = match side {
        "below" => ThresholdSide::Below,
        "above" => ThresholdSide::Above,
        other => return Err(format!("threshold side must be `below` or `above`, got `{other}`")),
    };
    Ok(CfTarget::BinaryThreshold { epsilon, side })
}

/// `D=V`
pub fn parse_assignment(s: &str) -> Result<(usize, f64), String> {
    let (d, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected DIM=VALUE, got `{s}`"))?;
    let d = d
        .trim()
        .parse::<usize>()
        .map_err(|_| format!("`{d}` is not a dimension index"))?;
    let v = v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((d, v))
}

/// `I,J`
pub fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [i, j] = parts[..] else {
        return Err(format!("expected two dimensions I,J, got `{s}`"));
    };
    let idx = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("`{v}` is not a dimension index"));
    Ok((idx(i)?, idx(j)?))
}

/// `N` or `LO:HI`, inclusive.
pub fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("`{v}` is not a count"));
    match s.split_once(':') {
        Some((lo, hi)) => Ok((num(lo)?, num(hi)?)),
        None => {
            let n = num(s)?;
            Ok((n, n))
        }
    }
}

/// Query pieces given as flags or query-string parameters.
#[derive(Debug, Clone, Default)]
pub struct QueryFlags {
    pub x: Option<Vec<f64>>,
    pub target_class: Option<usize>,
    pub target_interval: Option<(f64, f64)>,
    pub threshold: Option<CfTarget>,
    pub epsilon: Option<f64>,
    /// `--fix d=v` pins dimension `d` after setting `x[d] = v`.
    pub fix: Vec<(usize, f64)>,
    /// Dimensions pinned at their current value.
    pub fixed_dims: Vec<usize>,
    pub weight: Vec<(usize, f64)>,
    pub weights: Option<Vec<f64>>,
    pub radius: Option<f64>,
}

impl QueryFlags {
    fn target(&self) -> Result<Option<CfTarget>, String> {
        let mut targets = Vec::new();
        if let Some(class) = self.target_class {
            targets.push(CfTarget::Class { class });
        }
        if let Some((low, high)) = self.target_interval {
            targets.push(CfTarget::ScoreInterval { low, high });
        }
        if let Some(t) = self.threshold {
            targets.push(t);
        }
        match targets.len() {
            0 => Ok(None),
            1 => Ok(Some(targets[0])),
            _ => Err("give only one of the class, interval and threshold targets".into()),
        }
    }

    /// Builds the query, starting from `base` when one was loaded from a
    /// file. Flags override fields of `base`.
    pub fn build(&self, base: Option<CfQuery>, dims: usize) -> Result<CfQuery, String> {
        let target = self.target()?;
        let mut query = match base {
            Some(mut q) => {
                if let Some(x) = &self.x {
                    q.x = x.clone();
                }
                if let Some(t) = target {
                    q.target = t;
                }
                q
            }
            None => {
                let x = self.x.clone().ok_or("missing query point")?;
                // a tolerance derives the target from the prediction at x
                let target = match (target, self.epsilon) {
                    (Some(t), _) => t,
                    (None, Some(_)) => CfTarget::ScoreInterval { low: 0.0, high: 0.0 },
                    (None, None) => return Err("missing target".into()),
                };
                CfQuery::new(x, target)
            }
        };
        for &(d, v) in &self.fix {
            let slot = query
                .x
                .get_mut(d)
                .ok_or_else(|| format!("fixed dimension {d} out of range"))?;
            *slot = v;
            if !query.fixed_dims.contains(&d) {
                query.fixed_dims.push(d);
            }
        }
        for &d in &self.fixed_dims {
            if !query.fixed_dims.contains(&d) {
                query.fixed_dims.push(d);
            }
        }
        if let Some(w) = &self.weights {
            query.weights = Some(w.clone());
        }
        if !self.weight.is_empty() {
            let w = query.weights.get_or_insert_with(|| vec![1.0; dims]);
            for &(d, v) in &self.weight {
                *w.get_mut(d).ok_or_else(|| format!("weight dimension {d} out of range"))? = v;
            }
        }
        if self.radius.is_some() {
            query.radius = self.radius;
        }
        if self.epsilon.is_some() {
            query.epsilon_pred = self.epsilon;
        }
        Ok(query)
    }
}
