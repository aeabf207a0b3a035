use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "# two cells, quick\nreplications = 4\ngrid_a = 1, 2\ngrid_b = 0, 1\n";

fn itemcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itemcal")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("study.cfg");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn mc(cfg: &str, out: &Path, extra: &[&str]) -> Output {
    let out = out.to_string_lossy();
    let mut args = vec!["mc", "--config", cfg, "--out", &out];
    args.extend_from_slice(extra);
    itemcal(&args)
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn mc_output_is_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let dirs = [tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c")];
    let threads = ["1", "1", "4"];
    for (dir, t) in dirs.iter().zip(threads) {
        let o = mc(&cfg, dir, &["--strategy", "all", "--master-seed", "11", "--threads", t]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let first = csvs(&dirs[0]);
    assert_eq!(first.len(), 12);
    assert_eq!(first, csvs(&dirs[1]));
    assert_eq!(first, csvs(&dirs[2]));

    let other = tmp.path().join("d");
    assert!(mc(&cfg, &other, &["--strategy", "all", "--master-seed", "12"]).status.success());
    assert_ne!(first, csvs(&other));
}

#[test]
fn master_seed_defaults_to_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}seed = 11\n"));
    let (x, y) = (tmp.path().join("x"), tmp.path().join("y"));
    assert!(mc(&cfg, &x, &[]).status.success());
    assert!(mc(&cfg, &y, &["--master-seed", "11"]).status.success());
    assert_eq!(csvs(&x), csvs(&y));
}

#[test]
fn manifest_records_seed_version_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("m");
    assert!(mc(&cfg, &out, &["--master-seed", "99", "--reps", "2"]).status.success());
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains(env!("CARGO_PKG_VERSION")));
    assert!(manifest.contains("master_seed = 99"));
    assert!(manifest.contains("replications = 2"));
    assert!(manifest.contains("strategies = TWO_STAGE"));
    let summary = fs::read_to_string(out.join("summary_TWO_STAGE.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.lines().skip(1).all(|l| l.split(',').nth(4) == Some("2")));
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    for bad in ["colour = blue\n", "d = -1\n", "replications = 0\n", "alpha = 0.05\nalpha = 0.1\n", "d 0.5\n"] {
        let cfg = write_config(tmp.path(), bad);
        let o = mc(&cfg, &out, &[]);
        assert_eq!(o.status.code(), Some(2), "{bad:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let cfg = write_config(tmp.path(), SMALL);
    assert_eq!(mc(&cfg, &out, &["--strategy", "BOGUS"]).status.code(), Some(2));
    assert_eq!(itemcal(&["calibrate", "--a", "-1", "--b", "0"]).status.code(), Some(2));
    assert_eq!(itemcal(&["calibrate", "--a", "1"]).status.code(), Some(2));
}

#[test]
fn failure_rate_above_threshold_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    // one Newton iteration cannot converge, so every replication fails
    let cfg = write_config(
        tmp.path(),
        "replications = 2\ngrid_a = 1\ngrid_b = 0\nmax_iter = 1\nmax_examinees = 500\n",
    );
    let out = tmp.path().join("f");
    let o = mc(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    // results are still written
    assert!(out.join("summary_TWO_STAGE.csv").exists());
    assert!(out.join("manifest.txt").exists());
}

#[test]
fn calibrate_prints_estimates() {
    let o = itemcal(&["calibrate", "--a", "1", "--b", "-1", "--seed", "3", "--max-n", "20000"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("estimate   a="));
    assert!(text.contains("stopped    true"));
}

#[test]
fn curves_writes_data_and_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let o = itemcal(&[
        "curves",
        "--items",
        "1:0:0.1, 2:1:0.2",
        "--theta-min",
        "-3",
        "--theta-max",
        "3",
        "--step",
        "0.5",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 13);
    assert!(csv.contains("\n0,1,0,0.1,0,0.55,0,"));
    assert!(fs::read_to_string(out.join("curves_meta.txt")).unwrap().contains("det_ab_two_point"));
    assert_eq!(itemcal(&["curves", "--step", "0", "--out", &out.to_string_lossy()]).status.code(), Some(2));
}

#[test]
fn report_compares_against_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let study = tmp.path().join("s");
    assert!(mc(&cfg, &study, &["--strategy", "TWO_STAGE,RANDOM", "--master-seed", "3"]).status.success());
    let rep = tmp.path().join("r");
    let s = study.to_string_lossy();
    let o = itemcal(&["report", "--in", &s, "--baseline", &s, "--out", &rep.to_string_lossy()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let two = fs::read_to_string(rep.join("sample_size_TWO_STAGE.csv")).unwrap();
    assert!(two.lines().next().unwrap().ends_with("n_baseline,n_ratio"));
    // against itself the ratio is one
    assert!(two.lines().skip(1).all(|l| l.ends_with(",1")));
    assert!(rep.join("report_RANDOM.txt").exists());

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = itemcal(&["report", "--in", &empty.to_string_lossy(), "--out", &rep.to_string_lossy()]);
    assert_eq!(o.status.code(), Some(2));
}
