//! The TOML files under benchmarks/ stay in sync with the built-in rows.

use iwo::bench::{find, list_benchmarks};
use iwo::experiment::ExperimentConfig;
use std::path::PathBuf;

fn benchmark_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks")
}

#[test]
fn every_row_has_a_config_that_matches() {
    let dir = benchmark_dir();
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let id = path.file_stem().unwrap().to_str().unwrap();
        let row = find(id).unwrap_or_else(|| panic!("{id} is not a known benchmark"));
        let loaded = ExperimentConfig::load(&path).unwrap();
        let expected = row.desk_experiment();
        assert_eq!(
            loaded, expected,
            "{} is stale; regenerate with `iwo bench --full --write-configs benchmarks`",
            path.display()
        );
        seen += 1;
    }
    assert_eq!(seen, list_benchmarks().len());
}
