use std::path::Path;
use std::process::{Command, Output};

fn foca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foca")).args(args).env_remove("FOCA_SEED").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const TINY: &str = "d_model = 8\nhidden = 32\nchunk = 4\ntime_dim = 8\nblocks = 1\nbatch_size = 8\n";

fn dataset(dir: &Path, count: &str) {
    let o = foca(&["generate", "--task", "press", "--count", count, "--seed", "3", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn loss_rows(dir: &Path) -> Vec<(u64, f64)> {
    std::fs::read_to_string(dir.join("loss.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn generate_writes_files_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    dataset(&a, "10");
    dataset(&b, "10");
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 11);
    assert!(names.iter().any(|n| n == "manifest.txt"));
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n:?}");
    }
    let stats = foca(&["stats", a.to_str().unwrap()]);
    assert_eq!(code(&stats), 0);
    assert!(stdout(&stats).contains("task,press,10,900"));
    let seg = foca(&["segment", a.join("press_00000.traj").to_str().unwrap()]);
    assert_eq!(code(&seg), 0);
    assert_eq!(stdout(&seg).lines().count(), 1 + 3);
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(code(&foca(&["generate", "--task", "press", "--count", "0", "--out", out])), 2);
    assert_eq!(code(&foca(&["generate", "--task", "juggle", "--count", "1", "--out", out])), 2);
    assert_eq!(code(&foca(&["ablate", "--suite", "everything"])), 2);
    assert_eq!(code(&foca(&["verify", "--only", "nonsense"])), 2);
}

#[test]
fn train_logs_resumes_and_aborts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data, "4");
    let cfg = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let run = tmp.path().join("run");
    let args = |out: &Path, extra: &[&str]| {
        let mut v = vec!["train", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap()];
        v.extend(["--out", out.to_str().unwrap()]);
        v.extend(extra);
        v.iter().map(|s| s.to_string()).collect::<Vec<_>>()
    };
    let call = |a: Vec<String>| foca(&a.iter().map(String::as_str).collect::<Vec<_>>());

    let o = call(args(&run, &["--steps", "50"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = loss_rows(&run);
    assert_eq!(rows.len(), 50);
    assert!(rows[49].1 < rows[0].1, "{} vs {}", rows[49].1, rows[0].1);
    assert!(run.join("checkpoint.ckpt").exists() && run.join("ema.ckpt").exists());

    let resumed = tmp.path().join("resumed");
    let mut a = args(&resumed, &["--steps", "60"]);
    a.extend(["--resume".to_string(), run.join("checkpoint.ckpt").to_str().unwrap().to_string()]);
    assert_eq!(code(&call(a)), 0);
    let rows = loss_rows(&resumed);
    assert_eq!(rows.first().unwrap().0, 50);
    assert_eq!(rows.len(), 10);

    let missing = call(vec![
        "train".into(),
        "--data".into(),
        tmp.path().join("nowhere").to_str().unwrap().into(),
        "--out".into(),
        tmp.path().join("x").to_str().unwrap().into(),
    ]);
    assert_eq!(code(&missing), 3);

    let blown = call(args(&tmp.path().join("nan"), &["--steps", "20", "--lr", "1e300"]));
    assert_eq!(code(&blown), 4, "{}", String::from_utf8_lossy(&blown.stderr));
    assert!(String::from_utf8_lossy(&blown.stderr).contains("loss became"));
}

#[test]
fn rollout_rows_and_reference_policies() {
    let expert = foca(&["rollout", "--policy", "expert", "--episodes", "20", "--jobs", "3"]);
    assert_eq!(code(&expert), 0);
    let text = stdout(&expert);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 20 + 1);
    assert!(lines[21].starts_with("summary,20,1.000000,0.000000"), "{}", lines[21]);
    let serial = foca(&["rollout", "--policy", "expert", "--episodes", "20"]);
    assert_eq!(stdout(&serial), text);

    let zero = foca(&["rollout", "--policy", "zero", "--episodes", "5", "--base-drop"]);
    assert!(stdout(&zero).lines().last().unwrap().starts_with("summary,5,0.000000"));
}

#[test]
fn incompatible_checkpoint_exits_five() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data, "2");
    let cfg = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let run = tmp.path().join("run");
    let o = foca(&[
        "train", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--steps", "2", "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let ok = foca(&["rollout", "--checkpoint", run.join("ema.ckpt").to_str().unwrap(), "--episodes", "2"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let mut bytes = std::fs::read(run.join("ema.ckpt")).unwrap();
    let at = bytes.windows(13).position(|w| w == b"policy.chunk=").unwrap() + 13;
    bytes[at] = b'5';
    let bad = tmp.path().join("bad.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    assert_eq!(code(&foca(&["rollout", "--checkpoint", bad.to_str().unwrap(), "--episodes", "2"])), 5);
}

#[test]
fn analyze_reports_both_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("c.csv");
    let o = foca(&["analyze", "--samples", "500", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("rank(C) =  6  kappa = 0.500"));
    assert!(text.contains("rank(C) = 12  kappa = 1.000"));
    let table = std::fs::read_to_string(csv).unwrap();
    assert!(table.starts_with("x,y,z,rx,ry,rz,mode,rank,kappa,singular_values"));
    assert_eq!(table.lines().count(), 7);
}

#[test]
fn verify_subset_and_injected_fault() {
    let o = foca(&["verify", "--only", "gamma,segmentation"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 2);
    let f = foca(&["verify", "--only", "transition", "--inject-fault", "transition"]);
    assert_eq!(code(&f), 1);
    assert!(stdout(&f).starts_with("FAIL transition"));
}
