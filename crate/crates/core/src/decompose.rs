//! Exhaustive decomposition of a model's domain into pure boxes.
//!
//! The decomposition proceeds dimension by dimension: the leaves propagated
//! to a search-tree node are swept along the node's dimension, and each
//! elementary interval becomes a child carrying the leaves that contain it.
//! Nodes at the last dimension are maximal-intersection boxes, on which the
//! model output is constant.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::leafset::LeafSet;
use crate::model::{EnsembleModel, Label, Prediction};
use crate::sweep::{presort_dimensions, PresortIndex, Sweeper};

pub const DEFAULT_REGION_CAP: usize = 10_000_000;

/// A box on which the model output is uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct PureRegion {
    pub bbox: Vec<Interval>,
    pub members: LeafSet,
    /// Base score plus the member leaf scores, before aggregation.
    pub margins: Vec<f64>,
    /// Aggregated output.
    pub score: Vec<f64>,
    pub label: Label,
}

impl PureRegion {
    pub fn new(model: &EnsembleModel, bbox: Vec<Interval>, members: LeafSet) -> PureRegion {
        let Prediction {
            margins,
            output,
            label,
        } = model.aggregate(model.margins_of(members.iter()));
        PureRegion {
            bbox,
            members,
            margins,
            score: output,
            label,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.bbox.iter().zip(x).all(|(iv, v)| iv.contains(*v))
    }

    pub fn prediction(&self) -> Prediction {
        Prediction {
            margins: self.margins.clone(),
            output: self.score.clone(),
            label: self.label,
        }
    }
}

impl Serialize for PureRegion {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("PureRegion", 4)?;
        s.serialize_field("box", &self.bbox)?;
        s.serialize_field("member_leaf_ids", &self.members.to_vec())?;
        s.serialize_field("score", &self.score)?;
        s.serialize_field("class", &self.label)?;
        s.end()
    }
}

/// Writes regions as JSON lines, one region per line.
pub fn regions_to_json_lines(regions: &[PureRegion]) -> String {
    let mut out = String::new();
    for r in regions {
        out.push_str(&serde_json::to_string(r).expect("region serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct DecomposeOptions {
    pub max_regions: usize,
    pub workers: usize,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions {
            max_regions: DEFAULT_REGION_CAP,
            workers: 1,
        }
    }
}

/// Decomposes the union of the model's leaves (or of `leaf_filter`) into
/// maximal-intersection boxes, using the default region cap.
pub fn decompose(model: &EnsembleModel, leaf_filter: Option<&LeafSet>) -> Result<Vec<PureRegion>> {
    let index = presort_dimensions(model);
    decompose_with(model, &index, leaf_filter, DecomposeOptions::default())
}

struct Node {
    depth: usize,
    members: LeafSet,
    spans: Vec<Interval>,
}

pub fn decompose_with(
    model: &EnsembleModel,
    index: &PresortIndex,
    leaf_filter: Option<&LeafSet>,
    options: DecomposeOptions,
) -> Result<Vec<PureRegion>> {
    let n = model.num_leaves();
    let root = match leaf_filter {
        Some(f) if f.is_empty() => {
            return Err(Error::InvalidQuery("leaf filter is empty".into()));
        }
        Some(f) => f.clone(),
        None => LeafSet::full(n),
    };
    let emitted = AtomicUsize::new(0);
    let root = Node {
        depth: 0,
        members: root,
        spans: Vec::new(),
    };
    let workers = options.workers.max(1);
    if workers == 1 || model.dims == 1 {
        return explore(model, index, root, options.max_regions, &emitted);
    }

    // Children of the root are independent; hand them out in contiguous
    // chunks and concatenate in order so the output matches the serial run.
    let mut sweeper = Sweeper::new(n);
    let mut children = Vec::new();
    sweeper.sweep(&index.dims[0], &root.members, root.members.count(), |span, m| {
        children.push(Node {
            depth: 1,
            members: m.clone(),
            spans: vec![span],
        })
    });
    let chunk = children.len().div_ceil(workers).max(1);
    let mut chunks: Vec<Vec<Node>> = Vec::new();
    let mut it = children.into_iter().peekable();
    while it.peek().is_some() {
        chunks.push(it.by_ref().take(chunk).collect());
    }
    let results: Vec<Result<Vec<PureRegion>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|nodes| {
                let emitted = &emitted;
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for node in nodes {
                        out.extend(explore(model, index, node, options.max_regions, emitted)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("decomposition worker panicked"))
            .collect()
    });
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn explore(
    model: &EnsembleModel,
    index: &PresortIndex,
    start: Node,
    cap: usize,
    emitted: &AtomicUsize,
) -> Result<Vec<PureRegion>> {
    let dims = model.dims;
    let mut sweeper = Sweeper::new(model.num_leaves());
    let mut out = Vec::new();
    let mut stack = vec![start];
    let mut children = Vec::new();
    while let Some(node) = stack.pop() {
        if node.depth == dims {
            if emitted.fetch_add(1, Ordering::Relaxed) >= cap {
                return Err(Error::DecompositionTooLarge { limit: cap });
            }
            out.push(PureRegion::new(model, node.spans, node.members));
            continue;
        }
        children.clear();
        let depth = node.depth;
        sweeper.sweep(&index.dims[depth], &node.members, node.members.count(), |span, m| {
            let mut spans = node.spans.clone();
            spans.push(span);
            children.push(Node {
                depth: depth + 1,
                members: m.clone(),
                spans,
            });
        });
        stack.extend(children.drain(..).rev());
    }
    Ok(out)
}

/// Counts the regions of the full decomposition, stopping as soon as the
/// count exceeds `limit`. Returns the count reached.
pub fn count_regions_up_to(model: &EnsembleModel, index: &PresortIndex, limit: usize) -> usize {
    let dims = model.dims;
    let mut sweeper = Sweeper::new(model.num_leaves());
    let mut count = 0usize;
    let mut stack = vec![(0usize, LeafSet::full(model.num_leaves()))];
    let mut children = Vec::new();
    while let Some((depth, members)) = stack.pop() {
        if depth + 1 == dims {
            sweeper.sweep(&index.dims[depth], &members, members.count(), |_, _| count += 1);
            if count > limit {
                return count;
            }
            continue;
        }
        children.clear();
        sweeper.sweep(&index.dims[depth], &members, members.count(), |_, m| {
            children.push((depth + 1, m.clone()))
        });
        stack.extend(children.drain(..).rev());
    }
    count
}
