//! Drives the `neurop` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

/// A configuration small enough to run the whole pipeline in a second.
pub const TINY: &str = r#"
[model]
width = 4
modes = 4
blocks = 1
projection_hidden = 8

[data]
resolution = 32
count = 10
n_train = 8

[training]
epochs = 1
batch_size = 4
resolutions = [16]

[eval]
resolutions = [8, 16, 32]
train_resolution = 16
query_resolution = 32
"#;

pub fn neurop(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_neurop")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen-data, train and eval-sweep into `dir`.
pub fn pipeline(config: &Path, dir: &Path) -> Vec<PathBuf> {
    let (data_dir, train_dir, eval_dir) = (dir.join("data"), dir.join("train"), dir.join("eval"));
    let ok = |args: &[&str]| {
        let (code, out, err) = neurop(args);
        assert_eq!(code, 0, "{args:?}\n{out}\n{err}");
    };
    ok(&["gen-data", "--config", s(config), "--seed", "7", "--out", s(&data_dir)]);
    let dataset = data_dir.join("dataset.nopk");
    ok(&["train", "--config", s(config), "--data", s(&dataset), "--seed", "3", "--out", s(&train_dir)]);
    let ckpt = train_dir.join("checkpoint.nopk");
    ok(&["eval-sweep", "--config", s(config), "--data", s(&dataset), "--checkpoint", s(&ckpt), "--out", s(&eval_dir)]);
    let mut files = Vec::new();
    for d in [data_dir, train_dir, eval_dir] {
        let mut names: Vec<PathBuf> = std::fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        files.extend(names);
    }
    files
}

