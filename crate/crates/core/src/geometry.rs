//! Point-to-box distances.

use crate::interval::Interval;

/// Weighted squared contribution of one coordinate to the distance, and the
/// closest coordinate of the interval's closure.
#[inline]
pub fn dim_cost(x: f64, span: &Interval, weight: f64) -> (f64, f64) {
    let (gap, at) = span.clamp_gap(x);
    (weight * (gap * gap), at)
}

/// Squared (optionally diagonally weighted) distance from `x` to `bx`, and
/// the closest point of the box's closure.
///
/// The distance is the infimum over the half-open box; the returned point
/// can sit on an excluded upper face.
pub fn dist_to_box(x: &[f64], bx: &[Interval], weights: Option<&[f64]>) -> (f64, Vec<f64>) {
    let mut sq = 0.0;
    let mut point = Vec::with_capacity(x.len());
    for (d, (xi, span)) in x.iter().zip(bx).enumerate() {
        let w = weights.map_or(1.0, |w| w[d]);
        let (cost, at) = dim_cost(*xi, span, w);
        sq += cost;
        point.push(at);
    }
    (sq, point)
}

/// Moves every coordinate lying on an excluded upper face one float step
/// inward. Returns whether anything moved.
pub fn nudge_inside(point: &mut [f64], bx: &[Interval]) -> bool {
    let mut moved = false;
    for (p, span) in point.iter_mut().zip(bx) {
        if *p >= span.hi {
            *p = span.hi.next_down();
            moved = true;
        }
    }
    moved
}

/// True when no box point can be shared: the boxes are disjoint in some
/// dimension.
pub fn boxes_disjoint(a: &[Interval], b: &[Interval]) -> bool {
    a.iter().zip(b).any(|(x, y)| !x.overlaps(y))
}
