//! Exact counterfactual search.
//!
//! The search walks the same dimension-by-dimension tree as the exhaustive
//! decomposition, but only materializes nodes whose partial distance to the
//! query stays within the best feasible distance found so far. The initial
//! bound comes from a greedy depth-first descent that visits the nearest
//! elementary intervals first and stops at the first target region.
//!
//! Large searches run in two phases: a width-first expansion down to
//! `split_depth`, then independent depth-first workers over the frontier
//! that share the best bound. Among equally distant optima the result with
//! the lexicographically smallest closest point wins, so the answer does not
//! depend on the schedule.

use std::cmp::Ordering as CmpOrdering;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

use crate::decompose::{PureRegion, DEFAULT_REGION_CAP};
use crate::error::{Error, Result};
use crate::geometry::{dim_cost, nudge_inside};
use crate::interval::Interval;
use crate::leafset::LeafSet;
use crate::model::{sigmoid, AggregationKind, EnsembleModel, Label};
use crate::query::{CfQuery, CfTarget, ThresholdSide};
use crate::sweep::{presort_dimensions, PresortIndex, Sweeper};

/// Tuning knobs of a counterfactual search.
#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub workers: usize,
    /// Depth at which width-first expansion hands over to depth-first
    /// workers; defaults to `min(free dimensions, 4)`.
    pub split_depth: Option<usize>,
    /// Drop nodes farther than the best feasible distance.
    pub distance_prune: bool,
    /// Drop nodes in which no leaf votes for the target class.
    pub vote_filter: bool,
    /// Drop nodes whose leaves within distance reach cannot produce the
    /// target, judged from per-tree score ranges.
    pub bound_prune: bool,
    /// Seed the search with the greedy descent bound.
    pub seed_upper_bound: bool,
    pub deadline: Option<Instant>,
    /// Cap on regions returned by counterfactual sets.
    pub max_regions: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            workers: 1,
            split_depth: None,
            distance_prune: true,
            vote_filter: true,
            bound_prune: false,
            seed_upper_bound: true,
            deadline: None,
            max_regions: DEFAULT_REGION_CAP,
        }
    }
}

impl SearchOptions {
    /// Every pruning rule disabled; the search visits the whole tree.
    pub fn exhaustive() -> Self {
        SearchOptions {
            distance_prune: false,
            vote_filter: false,
            bound_prune: false,
            seed_upper_bound: false,
            ..SearchOptions::default()
        }
    }
}

/// Search telemetry.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SearchStats {
    /// Search-tree nodes expanded (one sweep each), bound descent included.
    pub explored_nodes: u64,
    /// Nodes expanded by the greedy bound descent alone.
    pub bound_nodes: u64,
    /// Children dropped by any pruning rule.
    pub pruned_nodes: u64,
    /// Target regions reached at the last dimension.
    pub target_regions: u64,
    pub initial_bound: Option<f64>,
    /// Successive values of the shared best bound; nonincreasing.
    pub bound_history: Vec<f64>,
}

impl SearchStats {
    fn absorb(&mut self, other: &LocalStats) {
        self.explored_nodes += other.explored;
        self.pruned_nodes += other.pruned;
        self.target_regions += other.targets;
    }
}

/// An optimal counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CfResult {
    /// The counterfactual point, inside the witness region.
    pub point: Vec<f64>,
    /// Weighted squared distance from the query to the region's closure.
    pub sq_dist: f64,
    pub region: PureRegion,
    /// Whether a coordinate on an excluded upper face was moved inward.
    pub nudged: bool,
    pub validated: bool,
}

/// One region of a counterfactual set with its closest point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CfSetEntry {
    pub region: PureRegion,
    pub point: Vec<f64>,
    pub sq_dist: f64,
    pub nudged: bool,
}

/// Leaves whose intervals contain the query's value on every fixed
/// dimension, and the remaining free dimensions in ascending order.
pub fn restrict_leaves(
    model: &EnsembleModel,
    x: &[f64],
    fixed_dims: &[usize],
) -> Result<(LeafSet, Vec<usize>)> {
    if fixed_dims.is_empty() {
        return Err(Error::InvalidQuery(
            "restriction needs at least one fixed dimension".into(),
        ));
    }
    model.check_point(x)?;
    if let Some(&d) = fixed_dims.iter().find(|&&d| d >= model.dims) {
        return Err(Error::InvalidQuery(format!("fixed dimension {d} out of range")));
    }
    Ok(restrict(model, x, fixed_dims))
}

fn restrict(model: &EnsembleModel, x: &[f64], fixed_dims: &[usize]) -> (LeafSet, Vec<usize>) {
    let eligible = LeafSet::from_indices(
        model.num_leaves(),
        model
            .leaves
            .iter()
            .enumerate()
            .filter(|(_, leaf)| fixed_dims.iter().all(|&d| leaf.intervals[d].contains(x[d])))
            .map(|(i, _)| i),
    );
    let free = (0..model.dims).filter(|d| !fixed_dims.contains(d)).collect();
    (eligible, free)
}

/// Search entry point bound to a model and its presort index.
#[derive(Clone, Copy)]
pub struct Explainer<'a> {
    model: &'a EnsembleModel,
    index: &'a PresortIndex,
}

impl<'a> Explainer<'a> {
    pub fn new(model: &'a EnsembleModel, index: &'a PresortIndex) -> Self {
        assert_eq!(index.num_leaves(), model.num_leaves(), "index built for another model");
        Explainer { model, index }
    }

    pub fn model(&self) -> &'a EnsembleModel {
        self.model
    }

    /// Greedy-descent upper bound on the optimal squared distance; `None`
    /// when no region anywhere satisfies the target.
    pub fn upper_bound(&self, query: &CfQuery, options: &SearchOptions) -> Result<Option<f64>> {
        query.validate(self.model)?;
        let search = Search::new(self, query, query.target, options)?;
        if search.query_satisfies() {
            return Ok(Some(0.0));
        }
        let mut stats = SearchStats::default();
        Ok(search.greedy(&mut stats)?.map(|c| c.sq))
    }

    pub fn cf(&self, query: &CfQuery, options: &SearchOptions) -> Result<CfResult> {
        self.cf_with_stats(query, options).map(|(r, _)| r)
    }

    pub fn cf_with_stats(
        &self,
        query: &CfQuery,
        options: &SearchOptions,
    ) -> Result<(CfResult, SearchStats)> {
        query.validate(self.model)?;
        let search = Search::new(self, query, query.target, options)?;
        let mut stats = SearchStats::default();
        if search.query_satisfies() {
            return Ok((search.identity_result()?, stats));
        }
        let best = search.branch_and_bound(&mut stats)?;
        match best {
            Some(c) => Ok((search.finish(c)?, stats)),
            None => Err(Error::NotFound {
                reason: not_found_reason(query),
            }),
        }
    }

    /// Every target region within squared distance `radius` (strict),
    /// sorted by distance.
    pub fn cf_set(&self, query: &CfQuery, options: &SearchOptions) -> Result<Vec<CfSetEntry>> {
        query.validate(self.model)?;
        let radius = query
            .radius
            .ok_or_else(|| Error::InvalidQuery("counterfactual sets need a radius".into()))?;
        let target = match query.epsilon_pred {
            Some(eps) => CfTarget::around_prediction(self.model, &query.x, eps)?,
            None => query.target,
        };
        let search = Search::new(self, query, target, options)?;
        let mut found = search.within_radius(radius, options.max_regions)?;
        found.sort_by(|a, b| a.cmp_key(b));
        found
            .into_iter()
            .map(|c| {
                let region = PureRegion::new(self.model, c.bbox, c.members);
                Ok(CfSetEntry {
                    region,
                    point: c.point,
                    sq_dist: c.sq,
                    nudged: c.nudged,
                })
            })
            .collect()
    }
}

fn not_found_reason(query: &CfQuery) -> String {
    if query.fixed_dims.is_empty() {
        "no region of the model satisfies the target".into()
    } else {
        format!(
            "no region satisfies the target with dimensions {:?} fixed",
            query.fixed_dims
        )
    }
}

/// Runs a counterfactual query, building the presort index on the fly.
pub fn cf_query(model: &EnsembleModel, query: &CfQuery, options: &SearchOptions) -> Result<CfResult> {
    let index = presort_dimensions(model);
    Explainer::new(model, &index).cf(query, options)
}

pub fn upper_bound(model: &EnsembleModel, query: &CfQuery) -> Result<Option<f64>> {
    let index = presort_dimensions(model);
    Explainer::new(model, &index).upper_bound(query, &SearchOptions::default())
}

/// Mixed width-first / depth-first search with `workers` threads.
pub fn parallel_search(
    model: &EnsembleModel,
    query: &CfQuery,
    workers: usize,
    split_depth: usize,
) -> Result<CfResult> {
    let options = SearchOptions {
        workers,
        split_depth: Some(split_depth),
        ..SearchOptions::default()
    };
    cf_query(model, query, &options)
}

pub fn cf_set(model: &EnsembleModel, query: &CfQuery) -> Result<Vec<CfSetEntry>> {
    let index = presort_dimensions(model);
    Explainer::new(model, &index).cf_set(query, &SearchOptions::default())
}

/// A rectangle of a two-dimensional projection of counterfactual regions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectedBox {
    pub x: Interval,
    pub y: Interval,
    pub score: Vec<f64>,
    pub class: Label,
    pub sq_dist: f64,
}

/// Restricts each region to the dimensions `(i, j)`; overlaps are kept.
pub fn project_regions(entries: &[CfSetEntry], dims: (usize, usize)) -> Result<Vec<ProjectedBox>> {
    let (i, j) = dims;
    if i == j {
        return Err(Error::InvalidQuery(format!("projection dimensions must differ, got ({i}, {j})")));
    }
    entries
        .iter()
        .map(|e| {
            let d = e.region.bbox.len();
            if i >= d || j >= d {
                return Err(Error::InvalidQuery(format!(
                    "projection dimensions ({i}, {j}) out of range ({d} dimensions)"
                )));
            }
            Ok(ProjectedBox {
                x: e.region.bbox[i],
                y: e.region.bbox[j],
                score: e.region.score.clone(),
                class: e.region.label,
                sq_dist: e.sq_dist,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Candidate {
    sq: f64,
    /// Closest point of the region's closure.
    pre: Vec<f64>,
    /// `pre` moved inside the half-open region.
    point: Vec<f64>,
    nudged: bool,
    bbox: Vec<Interval>,
    members: LeafSet,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> CmpOrdering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            CmpOrdering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

impl Candidate {
    fn cmp_key(&self, other: &Candidate) -> CmpOrdering {
        self.sq
            .total_cmp(&other.sq)
            .then_with(|| lex_cmp(&self.pre, &other.pre))
            .then_with(|| self.nudged.cmp(&other.nudged))
            .then_with(|| lex_cmp(&self.point, &other.point))
    }
}

#[derive(Debug, Clone)]
struct Task {
    level: usize,
    members: LeafSet,
    acc: f64,
    /// Closest coordinate per processed free dimension.
    coords: Vec<f64>,
    spans: Vec<Interval>,
}

#[derive(Debug, Default)]
struct LocalStats {
    explored: u64,
    pruned: u64,
    targets: u64,
}

/// How far the expansion may reach.
#[derive(Debug, Clone, Copy)]
enum Reach {
    Unlimited,
    /// Keep nodes with `acc <= bound`.
    AtMost(f64),
    /// Keep nodes with `acc < radius`.
    Below(f64),
}

impl Reach {
    #[inline]
    fn admits(self, acc: f64) -> bool {
        match self {
            Reach::Unlimited => true,
            Reach::AtMost(b) => acc <= b,
            Reach::Below(r) => acc < r,
        }
    }

    fn limit(self) -> f64 {
        match self {
            Reach::Unlimited => f64::INFINITY,
            Reach::AtMost(b) | Reach::Below(b) => b,
        }
    }
}

/// Per-leaf query distances for the reachability prune.
struct Reachability {
    tree_of: Vec<u32>,
    trees: usize,
    /// `suffix[i * stride + level]` is the weighted squared gap from the
    /// query to leaf `i` over the free dimensions from `level` on.
    suffix: Vec<f64>,
    stride: usize,
}

/// Per-thread scratch space.
struct Workspace {
    sweeper: Sweeper,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Workspace {
    fn new(leaves: usize) -> Workspace {
        Workspace {
            sweeper: Sweeper::new(leaves),
            lo: Vec::new(),
            hi: Vec::new(),
        }
    }
}

struct Search<'a> {
    model: &'a EnsembleModel,
    index: &'a PresortIndex,
    x: &'a [f64],
    target: CfTarget,
    fixed: Vec<usize>,
    free: Vec<usize>,
    weights: Vec<f64>,
    root: LeafSet,
    voters: Option<LeafSet>,
    reachability: Option<Reachability>,
    options: SearchOptions,
    split_depth: usize,
}

const DEADLINE_CHECK_EVERY: u64 = 64;

impl<'a> Search<'a> {
    fn new(
        explainer: &Explainer<'a>,
        query: &'a CfQuery,
        target: CfTarget,
        options: &SearchOptions,
    ) -> Result<Search<'a>> {
        let model = explainer.model;
        let mut fixed = query.fixed_dims.clone();
        fixed.sort_unstable();
        fixed.dedup();
        let (root, free) = if fixed.is_empty() {
            (LeafSet::full(model.num_leaves()), (0..model.dims).collect())
        } else {
            restrict(model, &query.x, &fixed)
        };
        let weights: Vec<f64> = (0..model.dims).map(|d| query.weight(d)).collect();
        let voters = if options.vote_filter {
            vote_filter_set(model, &target)
        } else {
            None
        };
        let reachability = if options.bound_prune {
            reachability(model, &query.x, &free, &weights)
        } else {
            None
        };
        if options.workers == 0 {
            return Err(Error::InvalidQuery("workers must be >= 1".into()));
        }
        let split_depth = match options.split_depth {
            Some(s) if s == 0 || s > model.dims => {
                return Err(Error::InvalidQuery(format!(
                    "split depth {s} outside [1, {}]",
                    model.dims
                )))
            }
            Some(s) => s.min(free.len()),
            None => free.len().min(4),
        };
        Ok(Search {
            model,
            index: explainer.index,
            x: &query.x,
            target,
            fixed,
            free,
            weights,
            root,
            voters,
            reachability,
            options: options.clone(),
            split_depth,
        })
    }

    fn query_satisfies(&self) -> bool {
        let prediction = self
            .model
            .evaluate(self.x)
            .expect("query point validated beforehand");
        self.target.is_satisfied(&prediction)
    }

    /// The query itself, witnessed by the intersection of its leaves.
    fn identity_result(&self) -> Result<CfResult> {
        let members = LeafSet::from_indices(self.model.num_leaves(), self.model.containing_leaves(self.x));
        let bbox = self.intersection_box(&members, 0..self.model.dims);
        let region = PureRegion::new(self.model, bbox, members);
        Ok(CfResult {
            point: self.x.to_vec(),
            sq_dist: 0.0,
            region,
            nudged: false,
            validated: true,
        })
    }

    fn intersection_box(&self, members: &LeafSet, dims: impl Iterator<Item = usize>) -> Vec<Interval> {
        let mut bbox = vec![Interval::FULL; self.model.dims];
        for d in dims {
            for i in members.iter() {
                bbox[d] = bbox[d].intersect(&self.model.leaves[i].intervals[d]);
            }
        }
        bbox
    }

    fn root_task(&self) -> Task {
        Task {
            level: 0,
            members: self.root.clone(),
            acc: 0.0,
            coords: Vec::new(),
            spans: Vec::new(),
        }
    }

    fn past_deadline(&self, stats: &LocalStats) -> bool {
        match self.options.deadline {
            Some(deadline) => {
                stats.explored % DEADLINE_CHECK_EVERY == 0 && Instant::now() >= deadline
            }
            None => false,
        }
    }

    /// True when the members can still produce a target region.
    fn may_reach_target(&self, members: &LeafSet) -> bool {
        if let Some(voters) = &self.voters {
            if !members.intersects(voters) {
                return false;
            }
        }
        true
    }

    /// Score-range test over the member leaves that are still within
    /// `reach` of the query on the unswept dimensions. A tree without such a
    /// leaf, or margin ranges that cannot meet the target, rule the node out.
    fn node_may_reach(&self, r: &Reachability, task: &Task, reach: Reach, ws: &mut Workspace) -> bool {
        let k = self.model.classes;
        let limit = reach.limit();
        // absorbs rounding differences between the two summation orders
        let budget = (limit - task.acc) + limit.abs() * 1e-9;
        let (lo, hi) = (&mut ws.lo, &mut ws.hi);
        lo.clear();
        lo.resize(r.trees * k, f64::INFINITY);
        hi.clear();
        hi.resize(r.trees * k, f64::NEG_INFINITY);
        for i in task.members.iter() {
            if r.suffix[i * r.stride + task.level] > budget {
                continue;
            }
            let t = r.tree_of[i] as usize;
            for (c, s) in self.model.leaves[i].score.iter().enumerate() {
                lo[t * k + c] = lo[t * k + c].min(*s);
                hi[t * k + c] = hi[t * k + c].max(*s);
            }
        }
        let base = self.model.aggregation.base_score;
        let mut sum_lo = vec![base; k];
        let mut sum_hi = vec![base; k];
        for t in 0..r.trees {
            if lo[t * k] == f64::INFINITY {
                return false;
            }
            for c in 0..k {
                sum_lo[c] += lo[t * k + c];
                sum_hi[c] += hi[t * k + c];
            }
        }
        let kind = self.model.aggregation.kind;
        let out = |m: f64| match kind {
            AggregationKind::LogisticSum => sigmoid(m),
            _ => m,
        };
        match self.target {
            CfTarget::Class { class } => match kind {
                AggregationKind::LogisticSum => {
                    if class == 1 {
                        sum_hi[0] > 0.0
                    } else {
                        sum_lo[0] <= 0.0
                    }
                }
                _ => (0..k).all(|other| {
                    if other < class {
                        sum_hi[class] > sum_lo[other]
                    } else if other > class {
                        sum_hi[class] >= sum_lo[other]
                    } else {
                        true
                    }
                }),
            },
            CfTarget::ScoreInterval { low, high } => out(sum_hi[0]) >= low && out(sum_lo[0]) <= high,
            CfTarget::BinaryThreshold { epsilon, side } => match side {
                ThresholdSide::Below => out(sum_lo[0]) <= epsilon,
                ThresholdSide::Above => out(sum_hi[0]) > epsilon,
            },
        }
    }

    /// Sweeps the task's members along its dimension. Non-terminal children
    /// within reach go to `push`; terminal target regions go to `found`.
    fn expand(
        &self,
        task: &Task,
        reach: &dyn Fn() -> Reach,
        ws: &mut Workspace,
        stats: &mut LocalStats,
        push: &mut dyn FnMut(Task),
        found: &mut dyn FnMut(Candidate),
    ) {
        stats.explored += 1;
        if let Some(r) = &self.reachability {
            if !self.node_may_reach(r, task, reach(), ws) {
                stats.pruned += 1;
                return;
            }
        }
        let dim = self.free[task.level];
        let w = self.weights[dim];
        let xd = self.x[dim];
        let terminal = task.level + 1 == self.free.len();
        let count = task.members.count();
        ws.sweeper.sweep(&self.index.dims[dim], &task.members, count, |span, members| {
            let (cost, at) = dim_cost(xd, &span, w);
            let acc = task.acc + cost;
            if !reach().admits(acc) || !self.may_reach_target(members) {
                stats.pruned += 1;
                return;
            }
            if terminal {
                let prediction = self.model.aggregate(self.model.margins_of(members.iter()));
                if self.target.is_satisfied(&prediction) {
                    stats.targets += 1;
                    found(self.candidate(task, span, at, acc, members));
                }
            } else {
                let mut coords = task.coords.clone();
                coords.push(at);
                let mut spans = task.spans.clone();
                spans.push(span);
                push(Task {
                    level: task.level + 1,
                    members: members.clone(),
                    acc,
                    coords,
                    spans,
                });
            }
        });
    }

    fn candidate(&self, task: &Task, span: Interval, at: f64, acc: f64, members: &LeafSet) -> Candidate {
        let mut bbox = self.intersection_box(members, self.fixed.iter().copied());
        let mut pre = self.x.to_vec();
        for (level, &d) in self.free.iter().enumerate() {
            if level < task.level {
                bbox[d] = task.spans[level];
                pre[d] = task.coords[level];
            } else {
                bbox[d] = span;
                pre[d] = at;
            }
        }
        let mut point = pre.clone();
        let nudged = nudge_inside(&mut point, &bbox);
        Candidate {
            sq: acc,
            pre,
            point,
            nudged,
            bbox,
            members: members.clone(),
        }
    }

    /// Nearest-first depth-first descent; returns the closest target region
    /// of the first last-dimension node that contains one.
    fn greedy(&self, stats: &mut SearchStats) -> Result<Option<Candidate>> {
        if self.free.is_empty() {
            return Ok(None);
        }
        let mut local = LocalStats::default();
        let mut ws = Workspace::new(self.model.num_leaves());
        let mut stack = vec![self.root_task()];
        let mut children: Vec<Task> = Vec::new();
        let mut hit: Option<Candidate> = None;
        let unlimited = || Reach::Unlimited;
        while let Some(task) = stack.pop() {
            if self.past_deadline(&local) {
                stats.absorb(&local);
                stats.bound_nodes += local.explored;
                return Err(Error::BudgetExceeded { stats: stats.clone() });
            }
            children.clear();
            self.expand(
                &task,
                &unlimited,
                &mut ws,
                &mut local,
                &mut |t| children.push(t),
                &mut |c| {
                    if hit.as_ref().is_none_or(|h| c.cmp_key(h).is_lt()) {
                        hit = Some(c);
                    }
                },
            );
            if hit.is_some() {
                break;
            }
            children.sort_by(|a, b| a.acc.total_cmp(&b.acc));
            stack.extend(children.drain(..).rev());
        }
        stats.absorb(&local);
        stats.bound_nodes += local.explored;
        Ok(hit)
    }

    fn branch_and_bound(&self, stats: &mut SearchStats) -> Result<Option<Candidate>> {
        if self.free.is_empty() {
            return Ok(None);
        }
        let shared = Shared::new();
        if self.options.seed_upper_bound {
            match self.greedy(stats)? {
                Some(c) => {
                    stats.initial_bound = Some(c.sq);
                    shared.offer(c);
                }
                // the descent only prunes soundly, so finding nothing means
                // the target is unreachable
                None => return Ok(None),
            }
        }
        let reach = || {
            if self.options.distance_prune {
                Reach::AtMost(shared.bound())
            } else {
                Reach::Unlimited
            }
        };

        // width-first phase
        let mut local = LocalStats::default();
        let mut ws = Workspace::new(self.model.num_leaves());
        let mut level = vec![self.root_task()];
        for _ in 0..self.split_depth {
            let mut next = Vec::new();
            for task in &level {
                if self.past_deadline(&local) || shared.aborted() {
                    stats.absorb(&local);
                    stats.bound_history = shared.history();
                    return Err(Error::BudgetExceeded { stats: stats.clone() });
                }
                if !reach().admits(task.acc) {
                    local.pruned += 1;
                    continue;
                }
                self.expand(
                    task,
                    &reach,
                    &mut ws,
                    &mut local,
                    &mut |t| next.push(t),
                    &mut |c| shared.offer(c),
                );
            }
            level = next;
        }
        stats.absorb(&local);

        // depth-first phase over the frontier, nearest chunks first
        let mut frontier = level;
        frontier.sort_by(|a, b| a.acc.total_cmp(&b.acc));
        let next = AtomicUsize::new(0);
        let worker = |stats_out: &mut LocalStats| {
            let mut ws = Workspace::new(self.model.num_leaves());
            let mut stack: Vec<Task> = Vec::new();
            let mut children: Vec<Task> = Vec::new();
            loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(start) = frontier.get(i) else { break };
                stack.push(start.clone());
                while let Some(task) = stack.pop() {
                    if shared.aborted() {
                        return;
                    }
                    if self.past_deadline(stats_out) {
                        shared.abort();
                        return;
                    }
                    if !reach().admits(task.acc) {
                        stats_out.pruned += 1;
                        continue;
                    }
                    children.clear();
                    self.expand(
                        &task,
                        &reach,
                        &mut ws,
                        stats_out,
                        &mut |t| children.push(t),
                        &mut |c| shared.offer(c),
                    );
                    children.sort_by(|a, b| a.acc.total_cmp(&b.acc));
                    stack.extend(children.drain(..).rev());
                }
            }
        };
        let workers = self.options.workers.min(frontier.len()).max(1);
        if workers == 1 {
            let mut local = LocalStats::default();
            worker(&mut local);
            stats.absorb(&local);
        } else {
            let locals: Vec<LocalStats> = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|_| {
                        scope.spawn(|| {
                            let mut local = LocalStats::default();
                            worker(&mut local);
                            local
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("search worker panicked"))
                    .collect()
            });
            for l in &locals {
                stats.absorb(l);
            }
        }
        stats.bound_history = shared.history();
        if shared.aborted() {
            return Err(Error::BudgetExceeded { stats: stats.clone() });
        }
        Ok(shared.into_best())
    }

    fn within_radius(&self, radius: f64, cap: usize) -> Result<Vec<Candidate>> {
        let mut out = Vec::new();
        if self.free.is_empty() {
            return Ok(out);
        }
        let reach = || Reach::Below(radius);
        let mut local = LocalStats::default();
        let mut ws = Workspace::new(self.model.num_leaves());
        let mut stack = vec![self.root_task()];
        let mut children = Vec::new();
        while let Some(task) = stack.pop() {
            if self.past_deadline(&local) {
                let mut stats = SearchStats::default();
                stats.absorb(&local);
                return Err(Error::BudgetExceeded { stats });
            }
            children.clear();
            self.expand(
                &task,
                &reach,
                &mut ws,
                &mut local,
                &mut |t| children.push(t),
                &mut |c| out.push(c),
            );
            if out.len() > cap {
                return Err(Error::DecompositionTooLarge { limit: cap });
            }
            stack.extend(children.drain(..).rev());
        }
        Ok(out)
    }

    fn finish(&self, best: Candidate) -> Result<CfResult> {
        let prediction = self.model.evaluate(&best.point)?;
        if !self.target.is_satisfied(&prediction) {
            return Err(Error::ValidationFailure(format!(
                "point {:?} (region {:?}, members {:?}) evaluates to {:?}, target {:?}",
                best.point,
                best.bbox,
                best.members.to_vec(),
                prediction,
                self.target
            )));
        }
        if let Some(&d) = self.fixed.iter().find(|&&d| best.point[d] != self.x[d]) {
            return Err(Error::ValidationFailure(format!(
                "fixed dimension {d} moved from {} to {}",
                self.x[d], best.point[d]
            )));
        }
        let region = PureRegion::new(self.model, best.bbox, best.members);
        Ok(CfResult {
            point: best.point,
            sq_dist: best.sq,
            region,
            nudged: best.nudged,
            validated: true,
        })
    }
}

/// Leaves whose vote moves the output toward the target class, when
/// requiring one such leaf is a sound prune for this model.
fn vote_filter_set(model: &EnsembleModel, target: &CfTarget) -> Option<LeafSet> {
    let CfTarget::Class { class } = *target else {
        return None;
    };
    if model.aggregation.kind != AggregationKind::LogisticSum {
        // every node keeps at least one leaf of every tree, so a per-class
        // vote test can never remove a softmax node
        return None;
    }
    let base = model.aggregation.base_score;
    // a region whose leaves all vote against the target keeps the margin on
    // the wrong side of zero
    let votes: fn(f64) -> bool = match (class, base) {
        (1, b) if b <= 0.0 => |s| s > 0.0,
        (0, b) if b > 0.0 => |s| s < 0.0,
        (0, b) if b == 0.0 => |s| s <= 0.0,
        _ => return None,
    };
    Some(LeafSet::from_indices(
        model.num_leaves(),
        model
            .leaves
            .iter()
            .enumerate()
            .filter(|(_, leaf)| votes(leaf.score[0]))
            .map(|(i, _)| i),
    ))
}

/// Summed score ranges only bound a region's margin when the margin is
/// summed in tree order, which holds when leaves are grouped by ascending
/// tree.
fn reachability(model: &EnsembleModel, x: &[f64], free: &[usize], weights: &[f64]) -> Option<Reachability> {
    let grouped = model
        .leaves
        .windows(2)
        .all(|w| w[0].tree_id <= w[1].tree_id);
    if !grouped {
        return None;
    }
    let stride = free.len() + 1;
    let mut suffix = vec![0.0; model.num_leaves() * stride];
    for (i, leaf) in model.leaves.iter().enumerate() {
        let row = &mut suffix[i * stride..(i + 1) * stride];
        for (level, &d) in free.iter().enumerate().rev() {
            row[level] = row[level + 1] + dim_cost(x[d], &leaf.intervals[d], weights[d]).0;
        }
    }
    Some(Reachability {
        tree_of: model.leaves.iter().map(|l| l.tree_id as u32).collect(),
        trees: model.num_trees,
        suffix,
        stride,
    })
}

struct Shared {
    bound_bits: AtomicU64,
    best: Mutex<Option<Candidate>>,
    history: Mutex<Vec<f64>>,
    abort: AtomicBool,
}

impl Shared {
    fn new() -> Shared {
        Shared {
            bound_bits: AtomicU64::new(f64::INFINITY.to_bits()),
            best: Mutex::new(None),
            history: Mutex::new(Vec::new()),
            abort: AtomicBool::new(false),
        }
    }

    #[inline]
    fn bound(&self) -> f64 {
        f64::from_bits(self.bound_bits.load(Ordering::Acquire))
    }

    fn offer(&self, c: Candidate) {
        let mut best = self.best.lock().expect("best lock poisoned");
        if best.as_ref().is_none_or(|b| c.cmp_key(b).is_lt()) {
            if c.sq < self.bound() {
                self.bound_bits.store(c.sq.to_bits(), Ordering::Release);
                self.history.lock().expect("history lock poisoned").push(c.sq);
            }
            *best = Some(c);
        }
    }

    fn abort(&self) {
        self.abort.store(true, Ordering::Relaxed);
    }

    fn aborted(&self) -> bool {
        self.abort.load(Ordering::Relaxed)
    }

    fn history(&self) -> Vec<f64> {
        self.history.lock().expect("history lock poisoned").clone()
    }

    fn into_best(self) -> Option<Candidate> {
        self.best.into_inner().expect("best lock poisoned")
    }
}
