use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use boxcf::generate::generate_trees;
use boxcf::{generate_model, read_canonical, to_canonical_json, AggregationKind, Label, RandomModelSpec, TreeNode};
use serde_json::Value;

const STUMP_DUMP: &str = r#"[{"nodeid":0,"split":"f0","split_condition":2.0,"yes":1,"no":2,"missing":1,
"children":[{"nodeid":1,"leaf":-1.0},{"nodeid":2,"leaf":1.0}]}]"#;

fn boxcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxcf"))
        .args(args)
        .env_remove(boxcf_cli::WORKERS_ENV)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stump_model(dir: &Path) -> PathBuf {
    let dump = dir.join("stump.dump.json");
    std::fs::write(&dump, STUMP_DUMP).unwrap();
    let model = dir.join("stump.json");
    let out = boxcf(&["convert", dump.to_str().unwrap(), "-o", model.to_str().unwrap(), "--dims", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}

#[test]
fn stump_counterfactual_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let model = stump_model(dir.path());
    let out = boxcf(&["cf", "--model", model.to_str().unwrap(), "--x", "0", "--target-interval", "0:5"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["dist"], 2.0);
    assert_eq!(v["point"], serde_json::json!([2.0]));
    assert!(v.get("stats").is_none());
}

#[test]
fn fixed_dimension_without_target_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let model = stump_model(dir.path());
    let out = boxcf(&[
        "cf", "--model", model.to_str().unwrap(), "--x", "0", "--target-interval", "0:5", "--fix", "0=-1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["status"], "not_found");
}

#[test]
fn truncated_model_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let model = stump_model(dir.path());
    let text = std::fs::read_to_string(&model).unwrap();
    let cut = dir.path().join("cut.json");
    std::fs::write(&cut, &text[..40]).unwrap();
    let out = boxcf(&["cf", "--model", cut.to_str().unwrap(), "--x", "0", "--target-class", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("byte 40"), "{err}");
}

#[test]
fn epsilon_needs_radius() {
    let dir = tempfile::tempdir().unwrap();
    let model = stump_model(dir.path());
    let m = model.to_str().unwrap();
    let out = boxcf(&["cf", "--model", m, "--x", "0", "--epsilon", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = boxcf(&["cf", "--model", m, "--x", "0", "--epsilon", "0.1", "--radius", "9"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["count"], 1);
    assert_eq!(v["regions"][0]["sq_dist"], 0.0);
}

#[test]
fn output_is_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let model = generate_model(&RandomModelSpec {
        seed: 21,
        trees: (30, 30),
        depth: (4, 4),
        dims: (5, 5),
        aggregation: AggregationKind::LogisticSum,
        ..RandomModelSpec::default()
    });
    let path = dir.path().join("m.json");
    std::fs::write(&path, to_canonical_json(&model)).unwrap();
    let p = path.to_str().unwrap();
    for x in ["0.1,0.2,0.3,0.4,0.5", "-0.5,0.5,-0.25,0,1"] {
        let label = model.evaluate(&boxcf_cli::args::parse_point(x).unwrap()).unwrap().label;
        let Label::Class(c) = label else { unreachable!() };
        let class = (1 - c).to_string();
        let base = ["cf", "--model", p, "--x", x, "--target-class", class.as_str()];
        let first = boxcf(&base);
        assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
        let again = boxcf(&base);
        assert_eq!(first.stdout, again.stdout);
        let mut wide = base.to_vec();
        wide.extend(["--workers", "4"]);
        assert_eq!(first.stdout, boxcf(&wide).stdout);
    }
}

#[test]
fn convert_round_trips_canonical() {
    let dir = tempfile::tempdir().unwrap();
    let model = generate_model(&RandomModelSpec {
        seed: 4,
        aggregation: AggregationKind::SoftmaxSum,
        classes: 3,
        ..RandomModelSpec::default()
    });
    let src = dir.path().join("a.json");
    let dst = dir.path().join("b.json");
    std::fs::write(&src, to_canonical_json(&model)).unwrap();
    let out = boxcf(&[
        "convert", src.to_str().unwrap(), "--format", "canonical", "-o", dst.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let back = read_canonical(&std::fs::read_to_string(&dst).unwrap()).unwrap();
    assert_eq!(back, model);
}

#[test]
fn generate_validate_and_decompose() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    let p = path.to_str().unwrap();
    let out = boxcf(&["generate", "--seed", "3", "--trees", "5", "--depth", "3", "--dims", "3", "-o", p]);
    assert!(out.status.success());
    let out = boxcf(&["validate", "--model", p, "--points", "2000", "--regions"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["checked"], 2000);
    let model = read_canonical(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let regions = boxcf::decompose(&model, None).unwrap();
    let out = boxcf(&["decompose", "--model", p]);
    assert_eq!(stdout(&out), boxcf::regions_to_json_lines(&regions));
}

fn dump(trees: &[TreeNode]) -> String {
    fn node(t: &TreeNode, id: u64, next: &mut u64) -> Value {
        match t {
            TreeNode::Leaf { value } => serde_json::json!({"nodeid": id, "leaf": value}),
            TreeNode::Split { feature, threshold, left, right } => {
                let (yes, no) = (*next, *next + 1);
                *next += 2;
                serde_json::json!({
                    "nodeid": id, "split": format!("f{feature}"), "split_condition": threshold,
                    "yes": yes, "no": no, "missing": yes,
                    "children": [node(left, yes, next), node(right, no, next)],
                })
            }
        }
    }
    let all: Vec<Value> = trees.iter().map(|t| node(t, 0, &mut 1)).collect();
    serde_json::to_string(&all).unwrap()
}

fn leaf_count(t: &TreeNode) -> usize {
    match t {
        TreeNode::Leaf { .. } => 1,
        TreeNode::Split { left, right, .. } => leaf_count(left) + leaf_count(right),
    }
}

#[test]
fn convert_large_dump_reports_leaf_total() {
    let (trees, dims) = generate_trees(&RandomModelSpec {
        seed: 7,
        trees: (250, 250),
        depth: (8, 8),
        dims: (20, 20),
        threshold_pool: 32,
        early_leaf: 0.0,
        ..RandomModelSpec::default()
    });
    let expected: usize = trees.iter().map(leaf_count).sum();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("big.dump.json");
    let dst = dir.path().join("big.json");
    std::fs::write(&src, dump(&trees)).unwrap();
    let out = boxcf(&[
        "convert", src.to_str().unwrap(), "-o", dst.to_str().unwrap(),
        "--aggregation", "logistic", "--dims", &dims.to_string(),
    ]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{err}");
    assert!(err.contains(&format!("N={expected} D=20 K=1 trees=250")), "{err}");
}
