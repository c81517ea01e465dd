#![allow(dead_code)]

use lesionforge::classify::ModelSpec;
use lesionforge::pipeline::{ContentMode, Manifest, ManifestEntry, RunConfig};
use lesionforge::synth::{synth_corpus, SynthParams};
use std::path::Path;

/// Writes `count` synthetic lesions with their masks under `dir` and returns
/// the manifest.
pub fn synth_manifest(dir: &Path, count: usize, seed: u64, with_masks: bool) -> Manifest {
    std::fs::create_dir_all(dir).unwrap();
    let corpus = synth_corpus(count, seed, &SynthParams::default()).unwrap();
    let entries = corpus
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let path = dir.join(format!("img_{i:03}.png"));
            lesionforge::imaging::io::write(&l.image, &path).unwrap();
            let mask = with_masks.then(|| {
                let m = dir.join(format!("mask_{i:03}.png"));
                l.mask.write(&m).unwrap();
                m
            });
            ManifestEntry { id: format!("img_{i:03}"), path, label: l.label, mask }
        })
        .collect();
    let manifest = Manifest { entries };
    manifest.write(&dir.join("manifest.csv")).unwrap();
    manifest
}

pub fn small_grid() -> Vec<ModelSpec> {
    vec![ModelSpec::Logistic { alpha: 0.5 }, ModelSpec::SvmLinear { cost: 1.0 }, ModelSpec::SvmRbf { cost: 1.0, gamma: 0.1 }]
}

/// Test-mode config with a short transfer, one global content image, and
/// the cache under `cache`.
pub fn quick_config(cache: &Path, rank: usize, iters: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_test_mode();
    cfg.ranks = vec![rank];
    cfg.transfer.max_iters = iters;
    cfg.content_mode = ContentMode::Global;
    cfg.classifiers = small_grid();
    cfg.cp.restarts = 1;
    cfg.cache_dir = cache.to_path_buf();
    cfg
}
