use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[mixture]
k = 3
iterations = 40
eval_every = 20
checkpoint_every = 20
batch_real = 32
batch_per_generator = 16
noise_dim = 8
hidden = 16

[metrics]
samples = 500

[output]
plot_samples = 64
plot_true_samples = 64
"#;

fn mgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgan"))
        .args(args)
        .env_remove("MGAN_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_config_exits_2_and_names_path() {
    let out = mgan(&["train", "--config", "/no/such/exp.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/no/such/exp.toml"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[mixture]\nbetta = 1.0\n");
    let out = mgan(&["oracle", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("betta"));
}

#[test]
fn empty_sweep_values_exit_2() {
    let out = mgan(&["sweep", "--param", "beta", "--values", ""]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn oracle_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("dump");
    let out = mgan(&["oracle", "--dump", dump.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}{}", stderr(&out));
    assert!(!text.contains("FAIL"));
    let jsd = text.lines().find(|l| l.contains("equilibrium_jsd_pi")).unwrap();
    assert!(jsd.contains("value=2.07944"), "{jsd}");
    assert!(dump.join("classifier_0.csv").exists());
}

#[test]
fn oracle_fails_on_coarse_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[oracle.lattice]\nnx = 10\nny = 10\n");
    let out = mgan(&["oracle", "--config", &cfg]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(1), "{text}");
    assert!(text.contains("FAIL value_identity"), "{text}");
}

#[test]
fn train_writes_artifacts_and_plot_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let root = dir.path().join("runs");
    let out = mgan(&["train", "--config", &cfg, "--out", root.to_str().unwrap(), "--seed", "1..2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    for seed in [1, 2] {
        let run = root.join(format!("seed_{seed}"));
        let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,loss_c,loss_d,loss_g,sym_kl,wasserstein,modes,hq_frac"));
        assert_eq!(lines.count(), 2);
        assert!(run.join("ckpt_20.mgan").exists());
        assert!(run.join("ckpt_40.mgan").exists());
        assert!(run.join("config.toml").exists());
        let svg = std::fs::read_to_string(run.join("scatter.svg")).unwrap();
        assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    }

    let ckpt = root.join("seed_1").join("ckpt_40.mgan");
    let render = |name: &str| {
        let path = dir.path().join(name);
        let out = mgan(&[
            "plot",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            path.to_str().unwrap(),
            "--config",
            &cfg,
            "--seed",
            "5",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        std::fs::read(path).unwrap()
    };
    assert_eq!(render("a.svg"), render("b.svg"));

    // Re-running one seed reproduces its metrics exactly.
    let again = dir.path().join("again");
    let out = mgan(&["train", "--config", &cfg, "--out", again.to_str().unwrap(), "--seed", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        std::fs::read(root.join("seed_2/metrics.csv")).unwrap(),
        std::fs::read(again.join("seed_2/metrics.csv")).unwrap()
    );
}

#[test]
fn mgan_out_sets_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("iterations = 40", "iterations = 20"));
    let root = dir.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_mgan"))
        .args(["train", "--config", &cfg])
        .env("MGAN_OUT", &root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(root.join("seed_0/metrics.csv").exists());
}

#[test]
fn sweep_writes_ranked_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("iterations = 40", "iterations = 20"));
    let root = dir.path().join("sweep");
    let out = mgan(&[
        "sweep", "--config", &cfg, "--out", root.to_str().unwrap(), "--param", "k", "--values", "1,2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary = std::fs::read_to_string(root.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert!(lines[0].starts_with("rank,param,value,seed,modes"));
    assert_eq!(lines.len(), 3);
    assert!(root.join("k_1/seed_0/metrics.csv").exists());
    assert!(root.join("k_2/seed_0/metrics.csv").exists());
}

#[test]
fn corrupt_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.mgan");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let svg = dir.path().join("out.svg");
    let out = mgan(&["plot", "--checkpoint", ckpt.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!svg.exists());
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &SMALL.replace("hidden = 16", "hidden = 16\n\n[mixture.adam]\nlr = 1e30"),
    );
    let out = mgan(&["train", "--config", &cfg, "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}
