mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use alif_snn::data::decode_pnm;
use common::{tiny_classify_config, tiny_vae_config, write_config, write_tiny_mnist};

fn snn(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snn"))
        .args(args)
        .env("SNN_DATA_DIR", data)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn parse_arch_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = snn(dir.path(), &["parse-arch", "{c128k3s1-BN-ALIF-MPk2s2}*2-DP-FC2048-ALIF-DP-FC100-ALIF-APk10s10"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.contains("FC2048"));
    assert!(out.contains("APk10s10"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = snn(dir.path(), &["parse-arch", "c32k3s1-XYZ"]);
    assert_eq!(code(&bad), 1);
    assert!(text(&bad.stderr).contains("offset 8"), "{}", text(&bad.stderr));
    assert_eq!(code(&snn(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&snn(dir.path(), &[])), 1);
    assert_eq!(code(&snn(dir.path(), &["--help"])), 0);
}

#[test]
fn config_errors_report_line_and_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "task = \"classify\"\nseed = 1\n[model]\nbogus_key = 3\n").unwrap();
    let o = snn(dir.path(), &["train", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("line 4"), "{}", text(&o.stderr));
}

#[test]
fn missing_dataset_names_the_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    write_config(&cfg, &tiny_classify_config());
    let o = snn(&dir.path().join("nowhere"), &["train", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("SNN_DATA_DIR"));
}

#[test]
fn sabotaged_gradcheck_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = snn(dir.path(), &["gradcheck", "--sabotage-tau"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stdout).contains("FAIL"));
}

#[test]
fn classifier_train_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_tiny_mnist(&data, 80, 40);
    let cfg = dir.path().join("c.toml");
    write_config(&cfg, &tiny_classify_config());
    let (a, b, r) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("r"));

    for run in [&a, &b] {
        let o = snn(&data, &["train", p(&cfg), "--out", p(run)]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    }
    let log_a = fs::read(a.join("metrics.log")).unwrap();
    assert_eq!(text(&log_a).lines().count(), 3);
    assert_eq!(log_a, fs::read(b.join("metrics.log")).unwrap());
    for f in ["epoch_0001.ckpt", "epoch_0002.ckpt", "epoch_0003.ckpt", "final.ckpt"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read(a.join("final.ckpt")).unwrap(), fs::read(b.join("final.ckpt")).unwrap());

    fs::create_dir_all(&r).unwrap();
    let first = text(&log_a).lines().next().unwrap().to_string() + "\n";
    fs::write(r.join("metrics.log"), first).unwrap();
    let o = snn(&data, &["train", p(&cfg), "--out", p(&r), "--resume", p(&a.join("epoch_0001.ckpt"))]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert_eq!(fs::read(r.join("metrics.log")).unwrap(), log_a);
    assert_eq!(fs::read(r.join("final.ckpt")).unwrap(), fs::read(a.join("final.ckpt")).unwrap());

    let o = snn(&data, &["eval", p(&a.join("final.ckpt"))]);
    assert_eq!(code(&o), 0);
    assert!(text(&o.stdout).starts_with("test_acc="));

    let o = snn(&data, &["generate", p(&a.join("final.ckpt")), "--out", p(&dir.path().join("s"))]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("classifier"));

    let mut other = tiny_classify_config();
    other.seed += 1;
    let cfg2 = dir.path().join("c2.toml");
    write_config(&cfg2, &other);
    let o = snn(&data, &["train", p(&cfg2), "--out", p(&dir.path().join("x")), "--resume", p(&a.join("final.ckpt"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn zero_epochs_writes_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_tiny_mnist(&data, 20, 10);
    let mut c = tiny_classify_config();
    c.train.epochs = 0;
    let cfg = dir.path().join("c.toml");
    write_config(&cfg, &c);
    let run = dir.path().join("run");
    let o = snn(&data, &["train", p(&cfg), "--out", p(&run)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let mut names: Vec<String> = fs::read_dir(&run).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["final.ckpt", "metrics.log"]);
    assert!(fs::read(run.join("metrics.log")).unwrap().is_empty());
}

#[test]
fn vae_train_generate_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_tiny_mnist(&data, 24, 12);
    let cfg = dir.path().join("v.toml");
    write_config(&cfg, &tiny_vae_config());
    let run = dir.path().join("run");
    let o = snn(&data, &["train", p(&cfg), "--out", p(&run)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert_eq!(text(&fs::read(run.join("metrics.log")).unwrap()).lines().count(), 3);
    let ckpt = run.join("final.ckpt");

    let samples = dir.path().join("samples");
    let o = snn(&data, &["generate", p(&ckpt), "-n", "3", "--seed", "9", "--out", p(&samples)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    for i in 0..3 {
        let bytes = fs::read(samples.join(format!("sample_{i:04}.pgm"))).unwrap();
        let (c, h, w, raster) = decode_pnm(&bytes).unwrap();
        assert_eq!((c, h, w, raster.len()), (1, 28, 28, 784));
    }
    let manifest = fs::read_to_string(samples.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 9") && manifest.contains("[config]"));

    let again = dir.path().join("again");
    snn(&data, &["generate", p(&ckpt), "-n", "3", "--seed", "9", "--out", p(&again)]);
    assert_eq!(fs::read(samples.join("sample_0002.pgm")).unwrap(), fs::read(again.join("sample_0002.pgm")).unwrap());

    let empty = dir.path().join("empty");
    let o = snn(&data, &["generate", p(&ckpt), "-n", "0", "--out", p(&empty)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_dir(&empty).unwrap().count(), 1);

    let o = snn(&data, &["eval", p(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("fad="));
}
