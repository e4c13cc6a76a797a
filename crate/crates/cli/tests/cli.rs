use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cstr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cstr"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: [&str; 10] = [
    "--set",
    "data.n_train=16",
    "--set",
    "data.n_eval=6",
    "--set",
    "train.batch_size=4",
    "--set",
    "train.steps=8",
    "--set",
    "train.eval_every=4",
];

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(&TINY);
    v
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cstr(&[], tmp.path()).status.code(), Some(2));
    assert_eq!(cstr(&["train", "--no-such-flag"], tmp.path()).status.code(), Some(2));
    assert_eq!(cstr(&["frobnicate"], tmp.path()).status.code(), Some(2));
    assert_eq!(cstr(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cstr(&["eval", "--checkpoint", "missing.ckpt"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
    assert_eq!(cstr(&["report", "--results", "empty"], tmp.path()).status.code(), Some(1));
    assert_eq!(cstr(&["train", "--set", "train.nonsense=1"], tmp.path()).status.code(), Some(1));
    assert_eq!(cstr(&["ablate", "--grid", "everything"], tmp.path()).status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cstr(&["gradcheck", "--cases", "4"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    for family in ["conv2d", "ctc_loss", "sppn", "non_local"] {
        assert!(out.contains(family), "{family} missing from\n{out}");
    }
    assert!(!out.contains("FAIL"));
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let o = cstr(&with_tiny(&["gen-data", "--data", "data"]), dir);
    assert!(o.status.success(), "{o:?}");
    assert!(dir.join("data/manifest.tsv").exists());
    assert_eq!(fs::read_dir(dir.join("data/train")).unwrap().count(), 16);

    let o = cstr(&with_tiny(&["train", "--data", "data", "--out", "run", "--stop-after", "5"]), dir);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("step 5 "));
    let o = cstr(&with_tiny(&["train", "--data", "data", "--out", "run", "--resume"]), dir);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("step 8 "));
    assert!(dir.join("run/metrics.csv").exists());

    let o = cstr(&["eval", "--data", "data", "--checkpoint", "run/latest.ckpt"], dir);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("eval images 6 word_acc "));

    let o = cstr(&["decode", "data/eval/000000.pgm", "--checkpoint", "run/latest.ckpt"], dir);
    assert!(o.status.success(), "{o:?}");
    let word = stdout(&o);
    assert!(word.trim().chars().all(|c| c.is_ascii_alphanumeric()), "{word:?}");

    let ablate = with_tiny(&["ablate", "--data", "data", "--grid", "single", "--seeds", "0", "--results", "res"]);
    let o = cstr(&ablate, dir);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("1 trained, 0 skipped, 0 failed"));
    let o = cstr(&ablate, dir);
    assert!(stdout(&o).contains("0 trained, 1 skipped, 0 failed"));

    let o = cstr(&["report", "--results", "res", "--out", "rep"], dir);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("paper / full scale"));
    let csv = fs::read_to_string(dir.join("rep/report.csv")).unwrap();
    assert!(csv.starts_with("table,row,head,loss"));
    assert!(dir.join("rep/report.md").exists());
}

#[test]
fn config_file_is_read() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("run.ini"),
        "[data]\ndir = d\nn_train = 3\nn_eval = 2\nseed = 4\n",
    )
    .unwrap();
    let o = cstr(&["--config", "run.ini", "gen-data"], dir);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("3 train / 2 eval"));
    fs::write(dir.join("bad.ini"), "[data]\nn_train = lots\n").unwrap();
    assert_eq!(cstr(&["--config", "bad.ini", "gen-data"], dir).status.code(), Some(1));
}
