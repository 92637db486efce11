#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMALL_CONFIG: &str = r#"seed = 3

[synth]
extent_m = 2400.0
n_regions = 12
voronoi_seeds = 12
n_districts = 3
landuse_zones = 40

[model]
d = 8
heads = 2
gat_layers = 1
fusion_layers = 1
epochs = 3

[streetview]
epochs = 3

[prompt]
d_text = 8
d_key = 5
d_proj = 4
hidden = 6
images_per_region = 4
epochs = 3

[eval]
folds = 3
tasks = ["crime"]
variants = ["w/o-PE", "w/o-WS"]
merge_targets = [10, 8]
"#;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_flexireg"))
}

/// Run the binary inside `dir` with relative paths only.
pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .env_remove("FLEXIREG_CONFIG")
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("spawn flexireg")
}

pub fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub const PIPELINE: &[&[&str]] = &[
    &["synth"],
    &["grid"],
    &["features"],
    &["train-cells"],
    &["aggregate"],
    &["train-task", "--task", "crime"],
    &["eval"],
    &["ablate"],
    &["merge-eval"],
    &["plot"],
];

/// Run every subcommand with the small config in a fresh directory.
pub fn run_pipeline(dir: &Path) {
    std::fs::write(dir.join("small.toml"), SMALL_CONFIG).unwrap();
    for args in PIPELINE {
        let mut full = vec!["--config", "small.toml"];
        full.extend_from_slice(args);
        run_ok(dir, &full);
    }
}

/// Every file below `dir`, relative path to bytes.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut std::collections::BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = Default::default();
    walk(dir, dir, &mut out);
    out
}
