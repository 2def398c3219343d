//! End-to-end tests of the `trajsearch` binary: golden results, cross-index
//! byte identity, formats and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trajsearch::engine::brute_force_oracle;
use trajsearch_cli::output::write_results_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajsearch"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to spawn trajsearch")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn search_reproduces_the_committed_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results.csv");
    let output = run(&[
        "search",
        "--dataset",
        data("dataset.csv").to_str().unwrap(),
        "--queries",
        data("queries.csv").to_str().unwrap(),
        "--index",
        "temporal",
        "--bins",
        "8",
        "--distance",
        "60",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&output);
    let produced = std::fs::read(&out).unwrap();
    let golden = std::fs::read(data("golden-results.csv")).unwrap();
    assert_eq!(produced, golden, "search output diverged from the golden file");
}

#[test]
fn golden_file_matches_the_oracle() {
    // The committed golden is pinned to the brute-force oracle, not to any
    // index implementation.
    let dataset =
        trajsearch::dataset::read_csv(std::fs::read(data("dataset.csv")).unwrap().as_slice())
            .unwrap();
    let queries =
        trajsearch::dataset::read_csv(std::fs::read(data("queries.csv")).unwrap().as_slice())
            .unwrap();
    let oracle = brute_force_oracle(&dataset.segments, &queries.segments, 60.0);
    let mut expected = Vec::new();
    write_results_csv(&oracle, &mut expected).unwrap();
    let golden = std::fs::read(data("golden-results.csv")).unwrap();
    assert_eq!(expected, golden, "golden file is stale relative to the oracle");
}

#[test]
fn all_index_kinds_write_identical_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (kind, extra) in [
        ("fsg", ["--cells", "10"]),
        ("temporal", ["--bins", "16"]),
        ("st", ["--subbins", "2"]),
        ("rtree", ["--mbb-segments", "4"]),
    ] {
        let out = dir.path().join(format!("{kind}.csv"));
        let output = run(&[
            "search",
            "--dataset",
            data("dataset.csv").to_str().unwrap(),
            "--queries",
            data("queries.csv").to_str().unwrap(),
            "--index",
            kind,
            extra[0],
            extra[1],
            "--distance",
            "60",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_success(&output);
        files.push(std::fs::read(&out).unwrap());
    }
    for pair in files.windows(2) {
        assert_eq!(pair[0], pair[1], "result files differ between index kinds");
    }
}

#[test]
fn generate_is_deterministic_and_formats_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let csv_a = dir.path().join("a.csv");
    let csv_b = dir.path().join("b.csv");
    let bin_path = dir.path().join("a.bin");
    for out in [&csv_a, &csv_b] {
        assert_success(&run(&[
            "generate",
            "random-1m",
            "--trajectories",
            "3",
            "--timesteps",
            "10",
            "--seed",
            "42",
            "--out",
            out.to_str().unwrap(),
        ]));
    }
    assert_eq!(
        std::fs::read(&csv_a).unwrap(),
        std::fs::read(&csv_b).unwrap(),
        "same seed must produce identical files"
    );
    assert_success(&run(&[
        "generate",
        "random-1m",
        "--trajectories",
        "3",
        "--timesteps",
        "10",
        "--seed",
        "42",
        "--out",
        bin_path.to_str().unwrap(),
        "--format",
        "bin",
    ]));
    // Searching the two encodings produces the same records.
    let from_csv = dir.path().join("from_csv.csv");
    let from_bin = dir.path().join("from_bin.csv");
    for (input, out) in [(&csv_a, &from_csv), (&bin_path, &from_bin)] {
        assert_success(&run(&[
            "search",
            "--dataset",
            input.to_str().unwrap(),
            "--queries",
            data("queries.csv").to_str().unwrap(),
            "--index",
            "temporal",
            "--distance",
            "1000",
            "--out",
            out.to_str().unwrap(),
        ]));
    }
    assert_eq!(
        std::fs::read(&from_csv).unwrap(),
        std::fs::read(&from_bin).unwrap()
    );
}

#[test]
fn fsg_index_persistence_is_usable_by_search() {
    let dir = tempfile::tempdir().unwrap();
    let index_file = dir.path().join("dataset.fsg");
    assert_success(&run(&[
        "build-index",
        "--dataset",
        data("dataset.csv").to_str().unwrap(),
        "--index",
        "fsg",
        "--cells",
        "10",
        "--out",
        index_file.to_str().unwrap(),
    ]));
    let direct = dir.path().join("direct.csv");
    let via_file = dir.path().join("via_file.csv");
    assert_success(&run(&[
        "search",
        "--dataset",
        data("dataset.csv").to_str().unwrap(),
        "--queries",
        data("queries.csv").to_str().unwrap(),
        "--index",
        "fsg",
        "--cells",
        "10",
        "--distance",
        "60",
        "--out",
        direct.to_str().unwrap(),
    ]));
    assert_success(&run(&[
        "search",
        "--dataset",
        data("dataset.csv").to_str().unwrap(),
        "--queries",
        data("queries.csv").to_str().unwrap(),
        "--index",
        "fsg",
        "--index-file",
        index_file.to_str().unwrap(),
        "--distance",
        "60",
        "--out",
        via_file.to_str().unwrap(),
    ]));
    assert_eq!(std::fs::read(&direct).unwrap(), std::fs::read(&via_file).unwrap());
}

#[test]
fn verify_command_passes_on_fixture() {
    let output = run(&[
        "verify",
        "--dataset",
        data("dataset.csv").to_str().unwrap(),
        "--queries",
        data("queries.csv").to_str().unwrap(),
        "--index",
        "st",
        "--bins",
        "8",
        "--subbins",
        "2",
        "--distance",
        "60",
    ]);
    assert_success(&output);
    assert!(String::from_utf8_lossy(&output.stdout).contains("equivalent"));
}

#[test]
fn bench_emits_one_row_per_configuration_and_distance() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    let output = run(&[
        "bench",
        "--dataset",
        data("dataset.csv").to_str().unwrap(),
        "--queries",
        data("queries.csv").to_str().unwrap(),
        "--indexes",
        "rtree,temporal",
        "--mbb-segments",
        "1,2,4",
        "--distance",
        "40",
        "--distance",
        "60",
        "--trials",
        "2",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_success(&output);
    let table = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], trajsearch_cli::bench::TABLE_HEADER);
    // (3 r values + 1 temporal) x 2 distances.
    assert_eq!(lines.len(), 1 + 8);
    // Record counts agree per distance regardless of configuration; they
    // grow with the distance.
    let records: Vec<(f64, u64)> = lines[1..]
        .iter()
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            (cols[1].parse().unwrap(), cols[5].parse().unwrap())
        })
        .collect();
    let at_40: Vec<u64> = records.iter().filter(|(d, _)| *d == 40.0).map(|&(_, n)| n).collect();
    let at_60: Vec<u64> = records.iter().filter(|(d, _)| *d == 60.0).map(|&(_, n)| n).collect();
    assert!(at_40.windows(2).all(|w| w[0] == w[1]));
    assert!(at_60.windows(2).all(|w| w[0] == w[1]));
    assert!(at_40[0] < at_60[0], "record counts must grow with d");
}

#[test]
fn exit_codes_follow_the_contract() {
    // Usage error: unknown flag.
    let out = run(&["search", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));

    // Usage error: invalid generator parameters.
    let out = run(&[
        "generate",
        "random-1m",
        "--timesteps",
        "1",
        "--out",
        "/tmp/never.csv",
    ]);
    assert_eq!(out.status.code(), Some(1));

    // Usage error: missing required --distance.
    let out = run(&[
        "search",
        "--dataset",
        data("dataset.csv").to_str().unwrap(),
        "--queries",
        data("queries.csv").to_str().unwrap(),
        "--index",
        "temporal",
        "--out",
        "/tmp/never.csv",
    ]);
    assert_eq!(out.status.code(), Some(1));

    // I/O error: missing dataset.
    let out = run(&[
        "search",
        "--dataset",
        "/nonexistent/nowhere.csv",
        "--queries",
        data("queries.csv").to_str().unwrap(),
        "--index",
        "temporal",
        "--distance",
        "60",
        "--out",
        "/tmp/never.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Configuration rejected by the index builder: inadmissible subbins.
    let out = run(&[
        "build-index",
        "--dataset",
        data("dataset.csv").to_str().unwrap(),
        "--index",
        "st",
        "--subbins",
        "1000000",
    ]);
    assert_eq!(out.status.code(), Some(1));

    // Parse error in a malformed dataset names the line.
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.csv");
    std::fs::write(
        &broken,
        "traj_id,seg_id,x_start,y_start,z_start,t_start,x_end,y_end,z_end,t_end\n0,0,1,2\n",
    )
    .unwrap();
    let out = run(&[
        "search",
        "--dataset",
        broken.to_str().unwrap(),
        "--queries",
        data("queries.csv").to_str().unwrap(),
        "--index",
        "temporal",
        "--distance",
        "60",
        "--out",
        "/tmp/never.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let message = String::from_utf8_lossy(&out.stderr);
    assert!(message.contains("line 2"), "stderr was: {message}");

    // Help exits 0.
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn multi_distance_search_writes_suffixed_files_and_metrics_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results.csv");
    let metrics = dir.path().join("metrics.csv");
    let output = run(&[
        "search",
        "--dataset",
        data("dataset.csv").to_str().unwrap(),
        "--queries",
        data("queries.csv").to_str().unwrap(),
        "--index",
        "rtree",
        "--distance",
        "40",
        "--distance",
        "60",
        "--out",
        out.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
    ]);
    assert_success(&output);
    assert!(dir.path().join("results-d40.csv").exists());
    assert!(dir.path().join("results-d60.csv").exists());
    let metrics = std::fs::read_to_string(&metrics).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], trajsearch_cli::output::METRICS_HEADER);
    assert_eq!(lines.len(), 3);
}
