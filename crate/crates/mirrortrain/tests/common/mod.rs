#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use mirrortrain::ExperimentConfig;

/// Full catalog with two repetitions per movement and a short initial rest.
pub fn quick_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.cohort_size = 3;
    config.timing.trials_per_movement = 2;
    config.timing.initial_rest = 2.0;
    config
}

/// Relative path to file contents for every file below `root`.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
