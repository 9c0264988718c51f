//! The `neurop` binary end to end on a tiny configuration.

mod support;

use std::path::PathBuf;

use support::pipeline::{neurop, pipeline, s, TINY};

#[test]
fn pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("c.toml");
    std::fs::write(&config, TINY).unwrap();
    let a = pipeline(&config, &tmp.path().join("a"));
    let b = pipeline(&config, &tmp.path().join("b"));
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    assert_eq!(names(&a), names(&b));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{} differs", x.display());
    }
    let sweep = std::fs::read_to_string(a.iter().find(|p| p.ends_with("sweep.csv")).unwrap()).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[0], "resolution,model,rel_l2_mean,rel_l2_std,n_samples");
    assert_eq!(lines.len(), 4);
    let log = std::fs::read_to_string(a.iter().find(|p| p.ends_with("train_log.csv")).unwrap()).unwrap();
    assert!(log.starts_with("epoch,resolution,train_loss,lr\n"), "{log}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.iter().find(|p| p.ends_with("eval/manifest.json")).unwrap()).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "eval-sweep");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn quad_check_prints_corner_weights() {
    let (code, out, _) = neurop(&["quad-check"]);
    assert_eq!(code, 0);
    let weights: Vec<f64> = out.lines().map(|l| l.rsplit(' ').next().unwrap().parse().unwrap()).collect();
    assert_eq!(weights, vec![1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0]);
}

#[test]
fn exit_codes_and_key_names() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[training]\nepohcs = 3\n").unwrap();
    let (code, _, err) = neurop(&["gen-data", "--config", s(&bad), "--out", s(tmp.path())]);
    assert_eq!(code, 1);
    assert!(err.contains("training.epohcs"), "{err}");

    assert_eq!(neurop(&["no-such-command"]).0, 1);
    assert_eq!(neurop(&["gen-data", "--config", "/does/not/exist.toml"]).0, 1);

    // a corrupt dataset is a runtime failure
    let junk = tmp.path().join("junk.nopk");
    std::fs::write(&junk, b"NOPKjunk").unwrap();
    let (code, _, _) = neurop(&["train", "--data", s(&junk), "--out", s(tmp.path())]);
    assert_eq!(code, 2);
}

#[test]
fn drift_and_collapse_write_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = neurop(&["collapse-demo", "--out", s(tmp.path())]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(tmp.path().join("collapse.csv")).unwrap();
    assert!(csv.starts_with("n,discrete_to_pointwise,operator_to_window\n"));
    let (code, _, err) = neurop(&["drift-test", "--out", s(tmp.path())]);
    assert_eq!(code, 0, "{err}");
    for name in ["integral_transform", "spectral_conv", "attention", "encdec", "knn_gnn", "gno_skewed"] {
        let csv = std::fs::read_to_string(tmp.path().join(format!("drift_{name}.csv"))).unwrap();
        assert!(csv.starts_with("level,n,drift_l2\n"), "{name}");
        assert_eq!(csv.lines().count(), 5, "{name}");
    }
}
