//! Brute-force reference answers.
//!
//! The counterfactual oracle enumerates the full decomposition and takes the
//! minimum over target regions; the sampler checks per-tree partitioning,
//! decomposition coverage and score purity at random points.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::decompose::{decompose, PureRegion};
use crate::error::{Error, Result};
use crate::generate::random_point;
use crate::geometry::{dist_to_box, nudge_inside};
use crate::leafset::LeafSet;
use crate::model::{EnsembleModel, Label};
use crate::query::CfQuery;
use crate::search::CfResult;

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Exact counterfactual by exhaustive enumeration of pure regions.
pub fn oracle_cf(model: &EnsembleModel, query: &CfQuery) -> Result<CfResult> {
    query.validate(model)?;
    let x = &query.x;
    if query.target.is_satisfied(&model.evaluate(x)?) {
        let members = LeafSet::from_indices(model.num_leaves(), model.containing_leaves(x));
        let mut bbox = vec![crate::interval::Interval::FULL; model.dims];
        for i in members.iter() {
            for (b, iv) in bbox.iter_mut().zip(&model.leaves[i].intervals) {
                *b = b.intersect(iv);
            }
        }
        return Ok(CfResult {
            point: x.clone(),
            sq_dist: 0.0,
            region: PureRegion::new(model, bbox, members),
            nudged: false,
            validated: true,
        });
    }

    let regions = decompose(model, None)?;
    let mut best: Option<(f64, Vec<f64>, bool, Vec<f64>, &PureRegion)> = None;
    for region in &regions {
        if !query.fixed_dims.iter().all(|&d| region.bbox[d].contains(x[d])) {
            continue;
        }
        if !query.target.is_satisfied(&region.prediction()) {
            continue;
        }
        let (sq, pre) = dist_to_box(x, &region.bbox, query.weights.as_deref());
        let mut point = pre.clone();
        let nudged = nudge_inside(&mut point, &region.bbox);
        let better = match &best {
            None => true,
            Some((bsq, bpre, bn, bpoint, _)) => sq
                .total_cmp(bsq)
                .then_with(|| lex(&pre, bpre))
                .then_with(|| nudged.cmp(bn))
                .then_with(|| lex(&point, bpoint))
                .is_lt(),
        };
        if better {
            best = Some((sq, pre, nudged, point, region));
        }
    }
    let Some((sq_dist, _, nudged, point, region)) = best else {
        return Err(Error::NotFound {
            reason: "no target region in the full decomposition".into(),
        });
    };
    let validated = query.target.is_satisfied(&model.evaluate(&point)?);
    if !validated {
        return Err(Error::ValidationFailure(format!(
            "oracle point {point:?} does not satisfy the target"
        )));
    }
    Ok(CfResult {
        point,
        sq_dist,
        region: region.clone(),
        nudged,
        validated,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checked: usize,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Buckets regions by the elementary intervals of their first-dimension
/// spans, so a point only scans regions that can contain it.
struct RegionLookup<'a> {
    cuts: Vec<f64>,
    buckets: Vec<Vec<&'a PureRegion>>,
}

impl<'a> RegionLookup<'a> {
    fn new(regions: &'a [PureRegion]) -> Self {
        let mut cuts: Vec<f64> = regions
            .iter()
            .flat_map(|r| [r.bbox[0].lo, r.bbox[0].hi])
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut buckets = vec![Vec::new(); cuts.len() + 1];
        for r in regions {
            let first = cuts.partition_point(|c| *c <= r.bbox[0].lo);
            let last = cuts.partition_point(|c| *c < r.bbox[0].hi);
            for bucket in &mut buckets[first..=last] {
                bucket.push(r);
            }
        }
        RegionLookup { cuts, buckets }
    }

    fn containing(&self, x: &[f64]) -> Vec<&'a PureRegion> {
        let b = self.cuts.partition_point(|c| *c <= x[0]);
        self.buckets[b].iter().copied().filter(|r| r.contains(x)).collect()
    }
}

/// Samples points and checks that each tree has exactly one containing leaf
/// and, when `regions` is given, that exactly one region contains the point
/// with the same margins (bitwise) and output (within 1e-12) as a direct
/// evaluation.
pub fn sample_validate(
    model: &EnsembleModel,
    regions: Option<&[PureRegion]>,
    points: usize,
    seed: u64,
) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lookup = regions.map(RegionLookup::new);
    let by_tree = model.leaves_by_tree();
    let mut report = ValidationReport::default();
    for _ in 0..points {
        let x = random_point(model, &mut rng);
        report.checked += 1;
        for (t, leaves) in by_tree.iter().enumerate() {
            let hits = leaves.iter().filter(|&&i| model.leaves[i].contains(&x)).count();
            if hits != 1 {
                report
                    .violations
                    .push(format!("tree {t}: {hits} leaves contain {x:?}"));
            }
        }
        let Some(lookup) = &lookup else { continue };
        let found = lookup.containing(&x);
        if found.len() != 1 {
            report
                .violations
                .push(format!("{} regions contain {x:?}", found.len()));
            continue;
        }
        let region = found[0];
        let direct = match model.evaluate(&x) {
            Ok(p) => p,
            Err(e) => {
                report.violations.push(format!("evaluation failed at {x:?}: {e}"));
                continue;
            }
        };
        let bitwise = region
            .margins
            .iter()
            .zip(&direct.margins)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !bitwise {
            report.violations.push(format!(
                "margins differ at {x:?}: region {:?}, direct {:?}",
                region.margins, direct.margins
            ));
        }
        let close = region
            .score
            .iter()
            .zip(&direct.output)
            .all(|(a, b)| (a - b).abs() <= 1e-12);
        let same_label = match (region.label, direct.label) {
            (Label::Class(a), Label::Class(b)) => a == b,
            (Label::Value(a), Label::Value(b)) => (a - b).abs() <= 1e-12,
            _ => false,
        };
        if !close || !same_label {
            report.violations.push(format!(
                "output differs at {x:?}: region {:?}/{:?}, direct {:?}/{:?}",
                region.score, region.label, direct.output, direct.label
            ));
        }
    }
    report
}
