//! Run files, shipped scenarios and sweeps through the public harness.

mod common;

use std::fs;

use evsched::harness::{compare_policies, comparison_from_csv, comparison_to_csv, io, RunSpec};
use evsched::Policy;

use common::{evening, scenarios_dir};

#[test]
fn shipped_run_files_parse() {
    for name in ["robustness.toml", "synthetic.toml"] {
        let (spec, sweep) = RunSpec::load(&scenarios_dir().join(name)).unwrap();
        assert!(!spec.policies.is_empty());
        assert!(sweep.base.validate().is_ok());
    }
    for name in ["default.toml", "evening_peak.toml"] {
        io::load_scenario(&scenarios_dir().join(name)).unwrap();
    }
}

#[test]
fn run_file_resolves_paths_next_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    io::save_scenario(&dir.path().join("day.toml"), &evening(0, 9)).unwrap();
    let run = dir.path().join("run.toml");
    fs::write(
        &run,
        "scenario = \"day.toml\"\n\
         policies = [\"central\", \"ivfa\", \"pac\"]\n\
         ev_counts = [0, 4]\n\
         fsnr_db = [inf, 10.0]\n\
         noise_seeds = [1, 2]\n\
         out = \"results/table.csv\"\n",
    )
    .unwrap();
    let (spec, sweep) = RunSpec::load(&run).unwrap();
    assert_eq!(
        spec.out_path(dir.path()).unwrap(),
        dir.path().join("results/table.csv")
    );

    let rows = compare_policies(&sweep).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 2);
    let idle: Vec<_> = rows
        .iter()
        .filter(|r| r.ev_count == 0 && r.fsnr_db.is_infinite())
        .collect();
    assert!(idle.iter().all(|r| r.metrics == idle[0].metrics));
    let noisy_central = rows
        .iter()
        .find(|r| r.policy == Policy::Central && r.ev_count == 4 && r.fsnr_db == 10.0)
        .unwrap();
    assert!(noisy_central.lifetime_loss_rel >= -1e-12);

    let text = comparison_to_csv(&rows);
    let back = comparison_from_csv(&text, &run).unwrap();
    assert_eq!(comparison_to_csv(&back), text);
}

#[test]
fn run_file_rejects_unknown_keys_and_policies() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.toml");
    let synthetic = "[synthetic]\nshape = \"flat\"\nhouseholds = 5\nseed = 0\n";
    fs::write(
        &run,
        format!("policies = [\"greedy\"]\nev_counts = [1]\n{synthetic}"),
    )
    .unwrap();
    let err = RunSpec::load(&run).unwrap_err().to_string();
    assert!(err.contains("greedy"), "{err}");
    fs::write(
        &run,
        format!("policies = [\"ddc\"]\nev_counts = [1]\ncolour = 3\n{synthetic}"),
    )
    .unwrap();
    let err = RunSpec::load(&run).unwrap_err().to_string();
    assert!(err.contains("colour"), "{err}");
    fs::write(
        &run,
        format!("policies = [\"ddc\"]\nev_counts = [1]\n{synthetic}"),
    )
    .unwrap();
    assert!(RunSpec::load(&run).is_ok());
}
