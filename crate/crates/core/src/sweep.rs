//! One-dimensional maximal-intersection sweep.
//!
//! Given a family of half-open intervals, the sweep segments their union at
//! every distinct endpoint value. Each resulting elementary interval carries
//! the exact set of input intervals that contain it. Segments covered by no
//! interval are not emitted, and endpoint values are compared exactly, so a
//! value at which one interval ends and another starts produces no
//! zero-width segment.

use crate::interval::Interval;
use crate::leafset::LeafSet;
use crate::model::EnsembleModel;

/// One segment of the sweep output.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementaryInterval {
    pub span: Interval,
    pub members: LeafSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoint {
    pub value: f64,
    pub id: u32,
    pub start: bool,
}

/// Endpoints of every leaf along one dimension, sorted by value, with the
/// position of each leaf's start and end record.
#[derive(Debug, Clone)]
pub struct DimIndex {
    pub events: Vec<Endpoint>,
    start_pos: Vec<u32>,
    end_pos: Vec<u32>,
}

impl DimIndex {
    pub fn build(intervals: impl ExactSizeIterator<Item = Interval>) -> DimIndex {
        let n = intervals.len();
        let mut events = Vec::with_capacity(2 * n);
        for (id, iv) in intervals.enumerate() {
            events.push(Endpoint {
                value: iv.lo,
                id: id as u32,
                start: true,
            });
            events.push(Endpoint {
                value: iv.hi,
                id: id as u32,
                start: false,
            });
        }
        events.sort_by(|a, b| {
            a.value
                .total_cmp(&b.value)
                .then(a.id.cmp(&b.id))
                .then(a.start.cmp(&b.start))
        });
        let mut start_pos = vec![0; n];
        let mut end_pos = vec![0; n];
        for (pos, e) in events.iter().enumerate() {
            if e.start {
                start_pos[e.id as usize] = pos as u32;
            } else {
                end_pos[e.id as usize] = pos as u32;
            }
        }
        DimIndex {
            events,
            start_pos,
            end_pos,
        }
    }

    pub fn len(&self) -> usize {
        self.start_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_pos.is_empty()
    }

    /// Interval ids ordered by start value.
    pub fn start_order(&self) -> Vec<usize> {
        self.events
            .iter()
            .filter(|e| e.start)
            .map(|e| e.id as usize)
            .collect()
    }

    /// Start order restricted to a subset; relative order is preserved.
    pub fn start_order_of(&self, subset: &LeafSet) -> Vec<usize> {
        self.events
            .iter()
            .filter(|e| e.start && subset.contains(e.id as usize))
            .map(|e| e.id as usize)
            .collect()
    }
}

/// Per-dimension endpoint indexes for every leaf of a model.
#[derive(Debug, Clone)]
pub struct PresortIndex {
    pub dims: Vec<DimIndex>,
    num_leaves: usize,
}

impl PresortIndex {
    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }
}

/// Sorts the leaf endpoints of every dimension once, so that later sweeps
/// over any leaf subset only filter the sorted records.
pub fn presort_dimensions(model: &EnsembleModel) -> PresortIndex {
    let dims = (0..model.dims)
        .map(|d| DimIndex::build(model.leaves.iter().map(|leaf| leaf.intervals[d])))
        .collect();
    PresortIndex {
        dims,
        num_leaves: model.leaves.len(),
    }
}

/// Reusable buffers for sweeps over subsets of one fixed universe.
#[derive(Debug, Clone)]
pub struct Sweeper {
    active: LeafSet,
    positions: Vec<u32>,
}

impl Sweeper {
    pub fn new(universe: usize) -> Sweeper {
        Sweeper {
            active: LeafSet::empty(universe),
            positions: Vec::new(),
        }
    }

    /// Sweeps the intervals of `subset` along `index`, calling `emit` for
    /// each non-empty elementary interval in ascending order. The member set
    /// passed to `emit` is only valid for the duration of the call.
    pub fn sweep<F>(&mut self, index: &DimIndex, subset: &LeafSet, subset_len: usize, mut emit: F)
    where
        F: FnMut(Interval, &LeafSet),
    {
        let active = &mut self.active;
        let mut active_count = 0usize;
        let mut prev: Option<f64> = None;
        let mut step = |e: &Endpoint, emit: &mut F| {
            if let Some(p) = prev {
                if e.value > p && active_count > 0 {
                    emit(Interval::new(p, e.value), active);
                }
            }
            prev = Some(e.value);
            if e.start {
                active.insert(e.id as usize);
                active_count += 1;
            } else {
                active.remove(e.id as usize);
                active_count -= 1;
            }
        };

        // Dense subsets scan the whole sorted record list; sparse ones sort
        // the precomputed record positions instead of the float values.
        if subset_len.saturating_mul(16) >= index.events.len() {
            for e in &index.events {
                if subset.contains(e.id as usize) {
                    step(e, &mut emit);
                }
            }
        } else {
            self.positions.clear();
            for id in subset.iter() {
                self.positions.push(index.start_pos[id]);
                self.positions.push(index.end_pos[id]);
            }
            self.positions.sort_unstable();
            for &pos in &self.positions {
                step(&index.events[pos as usize], &mut emit);
            }
        }
        debug_assert!(self.active.is_empty());
    }

    pub fn collect(&mut self, index: &DimIndex, subset: &LeafSet) -> Vec<ElementaryInterval> {
        let mut out = Vec::new();
        self.sweep(index, subset, subset.count(), |span, members| {
            out.push(ElementaryInterval {
                span,
                members: members.clone(),
            })
        });
        out
    }
}

/// Maximal-intersection segmentation of `intervals`; member ids are the
/// positions in the input slice.
pub fn intersect1d(intervals: &[Interval]) -> Vec<ElementaryInterval> {
    let n = intervals.len();
    let mut events: Vec<Endpoint> = intervals
        .iter()
        .enumerate()
        .flat_map(|(id, iv)| {
            [
                Endpoint {
                    value: iv.lo,
                    id: id as u32,
                    start: true,
                },
                Endpoint {
                    value: iv.hi,
                    id: id as u32,
                    start: false,
                },
            ]
        })
        .collect();
    events.sort_by(|a, b| a.value.total_cmp(&b.value));

    let mut out = Vec::new();
    let mut active = LeafSet::empty(n);
    let mut active_count = 0usize;
    let mut prev: Option<f64> = None;
    for e in &events {
        if let Some(p) = prev {
            if e.value > p && active_count > 0 {
                out.push(ElementaryInterval {
                    span: Interval::new(p, e.value),
                    members: active.clone(),
                });
            }
        }
        prev = Some(e.value);
        if e.start {
            active.insert(e.id as usize);
            active_count += 1;
        } else {
            active.remove(e.id as usize);
            active_count -= 1;
        }
    }
    out
}

/// Same segmentation, reusing a presorted index over a superset of ids.
pub fn intersect1d_presorted(index: &DimIndex, subset: &LeafSet) -> Vec<ElementaryInterval> {
    Sweeper::new(index.len()).collect(index, subset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi)
    }

    #[test]
    fn two_overlapping_intervals() {
        let out = intersect1d(&[iv(0.0, 2.0), iv(1.0, 3.0)]);
        let spans: Vec<_> = out.iter().map(|e| e.span).collect();
        assert_eq!(spans, vec![iv(0.0, 1.0), iv(1.0, 2.0), iv(2.0, 3.0)]);
        assert_eq!(out[0].members.to_vec(), vec![0]);
        assert_eq!(out[1].members.to_vec(), vec![0, 1]);
        assert_eq!(out[2].members.to_vec(), vec![1]);
    }

    #[test]
    fn full_line_is_one_segment() {
        let out = intersect1d(&[Interval::FULL]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].span, Interval::FULL);
    }

    #[test]
    fn gaps_and_touching_ends_are_skipped() {
        let out = intersect1d(&[iv(0.0, 1.0), iv(1.0, 2.0), iv(3.0, 4.0)]);
        let spans: Vec<_> = out.iter().map(|e| e.span).collect();
        assert_eq!(spans, vec![iv(0.0, 1.0), iv(1.0, 2.0), iv(3.0, 4.0)]);
        assert!(intersect1d(&[]).is_empty());
    }

    #[test]
    fn presort_orders_starts() {
        let index = DimIndex::build([iv(3.0, 4.0), iv(1.0, 5.0), iv(2.0, 6.0)].into_iter());
        assert_eq!(index.start_order(), vec![1, 2, 0]);
        let subset = LeafSet::from_indices(3, [0, 2]);
        assert_eq!(index.start_order_of(&subset), vec![2, 0]);
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        let intervals: Vec<Interval> = (0..64)
            .map(|i| iv((i % 7) as f64, (i % 7) as f64 + 1.0 + (i % 3) as f64))
            .collect();
        let index = DimIndex::build(intervals.iter().copied());
        let subset = LeafSet::from_indices(64, [3, 17, 40]);
        let sparse = intersect1d_presorted(&index, &subset);
        let picked: Vec<Interval> = subset.iter().map(|i| intervals[i]).collect();
        let direct = intersect1d(&picked);
        assert_eq!(sparse.len(), direct.len());
        for (a, b) in sparse.iter().zip(&direct) {
            assert_eq!(a.span, b.span);
            let mapped: Vec<usize> = b.members.iter().map(|j| subset.to_vec()[j]).collect();
            assert_eq!(a.members.to_vec(), mapped);
        }
    }
}
