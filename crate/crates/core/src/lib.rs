//! Exact counterfactual explanations for tree ensembles.
//!
//! A tree ensemble is viewed as a flat collection of leaf boxes. Sweeping
//! those boxes dimension by dimension splits the feature space into pure
//! regions on which the model output is constant, and a branch-and-bound
//! walk over that sweep tree finds the closest point (in weighted Euclidean
//! distance) whose prediction reaches a target class or output interval.
//!
//! ```
//! use boxcf::{cf_query, AggregationKind, AggregationRule, CfQuery, CfTarget, EnsembleModel,
//!             SearchOptions, TreeNode};
//!
//! let stump = TreeNode::split(0, 2.0, TreeNode::leaf(-1.0), TreeNode::leaf(1.0));
//! let model = EnsembleModel::from_trees(
//!     &[stump], 1, 1, AggregationRule::new(AggregationKind::LogisticSum, 0.0), None).unwrap();
//! let query = CfQuery::new(vec![0.0], CfTarget::Class { class: 1 });
//! let cf = cf_query(&model, &query, &SearchOptions::default()).unwrap();
//! assert_eq!(cf.point, vec![2.0]);
//! assert_eq!(cf.sq_dist, 4.0);
//! ```

pub mod decompose;
pub mod error;
pub mod generate;
pub mod geometry;
pub mod ingest;
pub mod interval;
pub mod leafset;
pub mod model;
pub mod oracle;
pub mod query;
pub mod search;
pub mod sweep;

pub use decompose::{
    count_regions_up_to, decompose, decompose_with, regions_to_json_lines, DecomposeOptions,
    PureRegion, DEFAULT_REGION_CAP,
};
pub use error::{Error, Result};
pub use generate::{generate_model, random_point, RandomModelSpec};
pub use geometry::{dist_to_box, nudge_inside};
pub use ingest::{ingest_dump, read_canonical, to_canonical_json, DumpFormat, DumpOptions, TreeClassMap};
pub use interval::Interval;
pub use leafset::LeafSet;
pub use model::{AggregationKind, AggregationRule, EnsembleModel, Label, LeafBox, Prediction, TreeNode};
pub use oracle::{oracle_cf, sample_validate, ValidationReport};
pub use query::{CfQuery, CfTarget, ThresholdSide};
pub use search::{
    cf_query, cf_set, parallel_search, project_regions, restrict_leaves, upper_bound, CfResult,
    CfSetEntry, Explainer, ProjectedBox, SearchOptions, SearchStats,
};
pub use sweep::{intersect1d, intersect1d_presorted, presort_dimensions, ElementaryInterval, PresortIndex};
