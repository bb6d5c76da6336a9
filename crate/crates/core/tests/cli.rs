use std::path::Path;
use std::process::{Command, Output};

fn glfc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glfc"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GLFC_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn gen_data_writes_three_files_per_pair_and_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        let o = glfc(&["gen-data", "--out", d, "--pairs", "3", "--seed", "7", "--size", "32"], t.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let files: Vec<_> = std::fs::read_dir(t.path().join("a")).unwrap().collect();
    assert_eq!(files.len(), 3 * 3 + 1);
    for f in files {
        let name = f.unwrap().file_name();
        let a = std::fs::read(t.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(t.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
    }
}

#[test]
fn zero_pairs_gives_an_empty_manifest() {
    let t = tempfile::tempdir().unwrap();
    let o = glfc(&["gen-data", "--out", "d", "--pairs", "0", "--seed", "1"], t.path());
    assert_eq!(code(&o), 0);
    let m = std::fs::read_to_string(t.path().join("d/manifest.txt")).unwrap();
    assert!(m.contains("pairs=0"));
    assert!(!m.contains("pair.0"));
}

#[test]
fn glob_logs_one_term_and_mcl_logs_four() {
    let t = tempfile::tempdir().unwrap();
    glfc(&["gen-data", "--out", "d", "--pairs", "2", "--seed", "3", "--size", "32"], t.path());
    for (loss, terms) in [("glob", 1), ("mcl", 4)] {
        let out = format!("{loss}.gckpt");
        let o = glfc(
            &["--threads", "1", "train", "--data", "d", "--preset", "miniature", "--loss", loss, "--steps", "3", "--out", &out],
            t.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let log = std::fs::read_to_string(t.path().join(format!("{out}.log"))).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), 3);
        for l in lines {
            let values = l.split_whitespace().filter(|f| !f.starts_with("step=") && !f.starts_with("epoch=")).count();
            assert_eq!(values, terms, "{l}");
        }
    }
}

#[test]
fn config_file_is_merged_with_flags_winning() {
    let t = tempfile::tempdir().unwrap();
    glfc(&["gen-data", "--out", "d", "--pairs", "1", "--seed", "3", "--size", "32"], t.path());
    std::fs::write(t.path().join("run.cfg"), "preset=miniature\nloss=glob\nsteps=5\ndata=d\nout=m.gckpt\n").unwrap();
    let o = glfc(&["train", "--config", "run.cfg", "--steps", "2"], t.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(t.path().join("m.gckpt.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(t.path().join("m.gckpt.arch").exists());
}

#[test]
fn exit_codes_distinguish_config_data_and_verification() {
    let t = tempfile::tempdir().unwrap();
    std::fs::create_dir(t.path().join("empty")).unwrap();
    let bad_arch = glfc(&["train", "--data", "empty", "--arch", "resnet", "--out", "m.gckpt"], t.path());
    assert_eq!(code(&bad_arch), 2);
    let bad_lr = glfc(&["train", "--data", "empty", "--lr", "0", "--out", "m.gckpt"], t.path());
    assert_eq!(code(&bad_lr), 2);
    let no_data = glfc(&["train", "--data", "empty", "--preset", "miniature", "--out", "m.gckpt"], t.path());
    assert_eq!(code(&no_data), 3, "{}", String::from_utf8_lossy(&no_data.stderr));
    assert!(!t.path().join("m.gckpt").exists());
    assert!(!t.path().join("m.gckpt.log").exists());

    std::fs::write(t.path().join("bad.gvol"), b"GVL1\x09\0\0\0").unwrap();
    let bad_file = glfc(&["eval", "--pred", "bad.gvol", "--ref", "bad.gvol", "--report", "r.txt"], t.path());
    assert_eq!(code(&bad_file), 3);
    assert!(String::from_utf8_lossy(&bad_file.stderr).contains("byte 4"));
    assert!(!t.path().join("r.txt").exists());

    let unknown_op = glfc(&["gradcheck", "--op", "fft"], t.path());
    assert_eq!(code(&unknown_op), 2);
}

#[test]
fn gradcheck_single_op_reports_oracle_and_gradient() {
    let t = tempfile::tempdir().unwrap();
    let o = glfc(&["gradcheck", "--op", "selective_scan"], t.path());
    assert_eq!(code(&o), 0);
    let s = String::from_utf8_lossy(&o.stdout);
    for name in ["selective_scan", "scan_oracle", "discretize_limit"] {
        assert!(s.contains(name), "{s}");
    }
    assert!(s.contains("0 failed"));
}

#[test]
fn eval_of_identical_volumes_is_perfect() {
    let t = tempfile::tempdir().unwrap();
    glfc(&["gen-data", "--out", "d", "--pairs", "1", "--seed", "5", "--size", "64"], t.path());
    let o = glfc(&["eval", "--pred", "d/ct_0000.gvol", "--ref", "d/ct_0000.gvol", "--report", "r.txt"], t.path());
    assert_eq!(code(&o), 0);
    let r = glfc::io::parse_kv(&std::fs::read_to_string(t.path().join("r.txt")).unwrap()).unwrap();
    for region in ["full", "st", "bone"] {
        assert_eq!(r[&format!("{region}.ssim")], "1.000000");
        assert_eq!(r[&format!("{region}.psnr")], "inf");
        assert!(r[&format!("{region}.voxels")].parse::<usize>().unwrap() > 0);
    }
}
