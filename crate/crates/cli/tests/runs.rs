//! End-to-end runs of the binary on small configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const SMALL: &str = r#"
[learnspeed]
k_max = 2000
record_every = 50
order_window = [10, 2000]
final_tol = 1.0

[rings]
hidden_dim = 8

[rings.data]
dim = 5
n_labeled = 60
n_test = 200

[rings.train]
iterations = 40
batch_labeled = 20
batch_unlabeled = 20
record_every = 10

[rings.probe]
iters = 5
every = 20
max_samples = 50

[propcheck]
fixed_point_problems = 2

[gradcheck]
instances_per_op = 8

[linreg_oracle]
problems = 3
recurrence_problems = 2
recurrence_k_max = 500
bridge_iterations = 20
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lga"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(experiment: &str, cfg: &Path, out: &Path, extra: &[&str]) -> i32 {
    let status = bin()
        .arg(experiment)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    status.status.code().unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn csv_headers_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let ls = tmp.path().join("ls");
    assert_eq!(run("learnspeed", &cfg, &ls, &[]), 0);
    for f in [
        "learnspeed_vary_lambda_l.csv",
        "learnspeed_vary_lambda_u.csv",
    ] {
        assert_eq!(header(&ls.join(f)), "k,dim,lambda_l,lambda_u,c");
    }
    let rings = tmp.path().join("rings");
    assert_eq!(run("rings", &cfg, &rings, &["--trials", "2"]), 0);
    assert_eq!(
        header(&rings.join("rings_records.csv")),
        "iteration,trial,method,test_loss,test_acc,alignment,grad_dist,labeled_loss,unlabeled_loss,imputed_acc"
    );
    assert_eq!(
        header(&rings.join("rings_summary.csv")),
        "method,metric,iteration,trials,mean,std"
    );
    assert_eq!(
        header(&rings.join("rings_final.csv")),
        "trial,method,final_test_acc,final_test_loss,mean_alignment_late"
    );
    for dir in [&ls, &rings] {
        for f in ["config.toml", "manifest.json", "report.json"] {
            assert!(dir.join(f).exists(), "{} missing {f}", dir.display());
        }
    }
}

#[test]
fn summary_covers_both_methods_and_all_trials() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("rings");
    assert_eq!(run("rings", &cfg, &out, &["--trials", "3"]), 0);
    let text = fs::read_to_string(out.join("rings_summary.csv")).unwrap();
    for method in ["supervised", "lga"] {
        let last = text
            .lines()
            .filter(|l| l.starts_with(&format!("{method},test_acc,40,")))
            .collect::<Vec<_>>();
        assert_eq!(last.len(), 1, "{method}");
        assert_eq!(last[0].split(',').nth(3), Some("3"));
    }
    let records = fs::read_to_string(out.join("rings_records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 3 * 2 * 4);
    assert!(!records.contains('\r'));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    for (experiment, files) in [
        (
            "learnspeed",
            vec![
                "learnspeed_vary_lambda_l.csv",
                "learnspeed_vary_lambda_u.csv",
                "report.json",
            ],
        ),
        (
            "rings",
            vec![
                "rings_records.csv",
                "rings_summary.csv",
                "rings_final.csv",
                "report.json",
            ],
        ),
    ] {
        let a = tmp.path().join(format!("{experiment}-a"));
        let b = tmp.path().join(format!("{experiment}-b"));
        let c = tmp.path().join(format!("{experiment}-c"));
        assert_eq!(
            run(experiment, &cfg, &a, &["--seed", "7", "--trials", "2"]),
            0
        );
        assert_eq!(
            run(experiment, &cfg, &b, &["--seed", "7", "--trials", "2"]),
            0
        );
        assert_eq!(
            run(experiment, &cfg, &c, &["--seed", "8", "--trials", "2"]),
            0
        );
        for f in &files {
            assert_eq!(
                fs::read(a.join(f)).unwrap(),
                fs::read(b.join(f)).unwrap(),
                "{experiment}/{f}"
            );
        }
        assert_eq!(
            fs::read(a.join("config.toml")).unwrap(),
            fs::read(b.join("config.toml")).unwrap()
        );
        if experiment == "rings" {
            assert_ne!(
                fs::read(a.join("rings_records.csv")).unwrap(),
                fs::read(c.join("rings_records.csv")).unwrap()
            );
        }
    }
}

#[test]
fn resolved_config_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    assert_eq!(run("rings", &cfg, &a, &["--seed", "3", "--trials", "1"]), 0);
    let b = tmp.path().join("b");
    assert_eq!(run("rings", &a.join("config.toml"), &b, &[]), 0);
    assert_eq!(
        fs::read(a.join("rings_records.csv")).unwrap(),
        fs::read(b.join("rings_records.csv")).unwrap()
    );
}

#[test]
fn check_experiments_pass_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    for experiment in ["propcheck", "gradcheck", "linreg-oracle"] {
        let out = tmp.path().join(experiment);
        assert_eq!(run(experiment, &cfg, &out, &[]), 0, "{experiment}");
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(
            report["passed"],
            serde_json::Value::Bool(true),
            "{experiment}"
        );
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["status"], "ok");
        assert_eq!(manifest["seed"], 0);
    }
}

#[test]
fn failed_checks_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!("{SMALL}\n[propcheck.fixed_point_hyper]\nalpha_w = 1.0\n"),
    );
    let out = tmp.path().join("p");
    assert_eq!(run("propcheck", &cfg, &out, &[]), 1);
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
}

#[test]
fn bad_configuration_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[rings]\nnot_a_field = 1\n");
    assert_eq!(run("rings", &cfg, &tmp.path().join("x"), &[]), 2);
    let missing = tmp.path().join("absent.toml");
    assert_eq!(run("rings", &missing, &tmp.path().join("y"), &[]), 2);
    let status = bin()
        .arg("no-such-experiment")
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}\n"));
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    assert_eq!(run("gradcheck", &cfg, &blocker.join("out"), &[]), 3);
}
