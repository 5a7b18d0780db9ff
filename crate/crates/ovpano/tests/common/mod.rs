#![allow(dead_code)]

use std::path::Path;

use ovpano::config::RunConfig;

/// A small, fast configuration rooted at `dir`.
pub fn small_config(dir: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&[
        "train_scenes=6",
        "eval_scenes=3",
        "lidar_hidden=8",
        "d_q=12",
        "q_learn=12",
        "ffn_hidden=16",
        "mask_width=8",
        "epochs=3",
    ])
    .unwrap();
    cfg.data = dir.join("data");
    cfg.out = dir.join("out");
    cfg.seed = Some(seed);
    cfg
}

pub fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
