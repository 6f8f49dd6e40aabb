use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn needlenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_needlenet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_corpus(root: &Path) {
    let cfg = root.join("small.cfg");
    fs::write(
        &cfg,
        "# tiny frames keep the test quick\nwidth = 64\nheight = 48\nno-needle-frames = 6-8\nfist_frames = 5-6\ninfil_frames = 5-6\n",
    )
    .unwrap();
    let data = root.join("data");
    let o = needlenet(&[
        "--config",
        cfg.to_str().unwrap(),
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--clips-per-section",
        "3",
        "--holdout",
        "1,1",
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("train: 9 clips"), "{}", stdout(&o));
}

#[test]
fn params_prints_counts() {
    let o = needlenet(&["params", "--arch", "16-32-32"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "33155");
    let o = needlenet(&["params", "--arch", "crnn"]);
    assert_eq!(stdout(&o).trim(), "223491");
    let o = needlenet(&["params", "--arch", "all"]);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 10);
    assert!(text.contains("2-4 9543"));
}

#[test]
fn usage_and_argument_errors() {
    let o = needlenet(&["params", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: usage:"));

    let o = needlenet(&["params", "--arch", "16-x"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error: invalid-argument:"), "{}", stderr(&o));

    let o = needlenet(&["train-cnn"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.nsnet");
    let o = needlenet(&["eval", "--checkpoint", missing.to_str().unwrap(), "--data", dir.path().to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(4) | Some(5)), "{:?} {}", o.status, stderr(&o));

    let o = needlenet(&["--config", missing.to_str().unwrap(), "params"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn config_unknown_keys_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "arch = 8-16\n").unwrap();
    let o = needlenet(&["--config", cfg.to_str().unwrap(), "params"]);
    assert_eq!(stdout(&o).trim(), "39027");
    let o = needlenet(&["--config", cfg.to_str().unwrap(), "params", "--arch", "2-4"]);
    assert_eq!(stdout(&o).trim(), "9543");

    fs::write(&cfg, "colour = red\n").unwrap();
    let o = needlenet(&["--config", cfg.to_str().unwrap(), "params"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn generate_train_evaluate_stream_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_corpus(root);
    let data = root.join("data");
    assert!(data.join("synth.cfg").is_file());
    assert!(data.join("manifest.csv").is_file());

    let run = root.join("cnn");
    let o = needlenet(&[
        "train-cnn",
        "--arch",
        "2-4",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--epochs",
        "1",
        "--seed",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let checkpoint = run.join("model.nsnet");
    assert!(checkpoint.is_file());
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let eval_out = root.join("eval");
    let o = needlenet(&[
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("frame accuracy"));
    assert!(eval_out.join("confusion.csv").is_file());
    assert!(eval_out.join("accuracy.csv").is_file());

    let records = root.join("records");
    let o = needlenet(&[
        "stream",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--fps",
        "0",
        "--out",
        records.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(records.join("sessions.csv").is_file());

    let o = needlenet(&[
        "report",
        "--data",
        data.to_str().unwrap(),
        "--records",
        records.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let accuracy = |text: String| text.lines().find(|l| l.starts_with("frame accuracy")).map(str::to_owned);
    let offline = needlenet(&["eval", "--checkpoint", checkpoint.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(accuracy(stdout(&o)).is_some());
    assert_eq!(accuracy(stdout(&o)), accuracy(stdout(&offline)));
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn seeded_commands_reproduce_and_stay_inside_their_paths() {
    let work = tempfile::tempdir().unwrap();
    let cwd = tempfile::tempdir().unwrap();
    let cfg = work.path().join("small.cfg");
    fs::write(&cfg, "width = 64\nheight = 48\nno_needle_frames = 6-8\nfist_frames = 5-6\ninfil_frames = 5-6\n").unwrap();
    let run = |args: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_needlenet"))
            .args(if args[0] == "gen-data" { vec!["--config", cfg.to_str().unwrap()] } else { vec![] })
            .args(args)
            .current_dir(cwd.path())
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        o
    };
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let data = work.path().join(name).join("data");
        let out = work.path().join(name).join("run");
        run(&[
            "gen-data", "--out", data.to_str().unwrap(), "--clips-per-section", "2", "--holdout", "1,0", "--seed", "6",
        ]);
        run(&[
            "train-cnn", "--arch", "2-4", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--epochs", "1",
            "--seed", "6",
        ]);
        trees.push(tree(&work.path().join(name)));
        assert!(data.join("synth.cfg").is_file() && out.join("model.nsnet").is_file());
    }
    assert!(!trees[0].is_empty());
    assert_eq!(trees[0], trees[1]);
    assert!(fs::read_dir(cwd.path()).unwrap().next().is_none());

    let o = run(&["gen-data", "--out", work.path().join("c").to_str().unwrap(), "--clips-per-section", "1", "--holdout", "0,0"]);
    let line = stderr(&o).lines().find(|l| l.starts_with("seed: ")).map(str::to_owned);
    let seed: u64 = line.expect("seed printed").trim_start_matches("seed: ").parse().unwrap();
    let again = work.path().join("d");
    run(&[
        "gen-data", "--out", again.to_str().unwrap(), "--clips-per-section", "1", "--holdout", "0,0", "--seed", &seed.to_string(),
    ]);
    assert_eq!(tree(&work.path().join("c")), tree(&again));
}
