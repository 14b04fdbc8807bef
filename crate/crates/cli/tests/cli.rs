use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpa_core::data::{save_dataset, Dataset};
use dpa_core::matrix::Matrix;
use dpa_core::model::{DpaModel, ModelKind};
use dpa_core::nn::{Activation, Architecture, Autoencoder};
use dpa_core::objective::LatentSchedule;
use dpa_core::rng;

fn dpa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpa"))
        .args(args)
        .output()
        .expect("spawn dpa")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn disk_file(dir: &Path, n: usize, size: usize) -> PathBuf {
    let path = dir.join("disk.bin");
    ok(&dpa(&[
        "generate-data",
        "--kind",
        "disk",
        "--n",
        &n.to_string(),
        "--size",
        &size.to_string(),
        "--seed",
        "1",
        "--radius-min",
        "1",
        "--radius-max",
        "3",
        "--out",
        s(&path),
    ]));
    path
}

const SMALL_CONFIG: &str = r#"
seed = 3
epochs = 2
batch_size = 64
learning_rate = 1e-3

[architecture]
latent_dim = 8
depth = 2
width = 16
noise_per_layer = 2

[schedule]
ks = [0, 2, 6, 8]
"#;

/// Linear identity autoencoder of width `p`, trained range `{p}`.
fn identity_model(dir: &Path, p: usize) {
    let arch = Architecture {
        input_dim: p,
        latent_dim: p,
        depth: 1,
        width: p,
        noise_per_layer: 0,
        skip_every: 2,
        activation: Activation::Linear,
    };
    let mut net = Autoencoder::init(arch, 0).unwrap();
    for layer in net.encoder.0.iter_mut().chain(net.decoder.0.iter_mut()) {
        layer.weight = Matrix::identity(p);
        layer.bias = Matrix::zeros(1, p);
    }
    let model = DpaModel {
        kind: ModelKind::Dpa,
        net,
        schedule: LatentSchedule::fixed(p),
        beta: 1.0,
        seed: 0,
        preprocessing: Vec::new(),
    };
    model.save(dir).unwrap();
}

fn labeled_gaussian(dir: &Path, n: usize, p: usize) -> PathBuf {
    let x = rng::normal_matrix(n, p, &mut rng::seeded(4));
    let labels = (0..n as i64).map(|i| i % 3).collect();
    let ds = Dataset::new("g", x, Some(labels)).unwrap();
    let path = dir.join("g.bin");
    save_dataset(&ds, &path).unwrap();
    path
}

#[test]
fn generate_disk_reports_width_and_stable_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let args = |p: &Path| {
        vec![
            "generate-data".to_string(),
            "--kind".into(),
            "disk".into(),
            "--n".into(),
            "1000".into(),
            "--size".into(),
            "16".into(),
            "--seed".into(),
            "5".into(),
            "--out".into(),
            s(p).into(),
        ]
    };
    let run = |p: &Path| {
        let a = args(p);
        ok(&dpa(&a.iter().map(String::as_str).collect::<Vec<_>>()))
    };
    let out_a = run(&a);
    let out_b = run(&b);
    assert!(out_a.contains("n=1000 p=256"), "{out_a}");
    assert_eq!(out_a, out_b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn generate_gaussian_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.bin");
    let out = ok(&dpa(&[
        "generate-data",
        "--kind",
        "gaussian",
        "--n",
        "50",
        "--mean",
        "1,2",
        "--cov",
        "4,0;0,1",
        "--out",
        s(&path),
    ]));
    assert!(out.contains("n=50 p=2"));
    let bad = dpa(&[
        "generate-data",
        "--kind",
        "gaussian",
        "--mean",
        "0,0",
        "--cov",
        "1,2;0,1",
        "--out",
        s(&path),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn missing_out_is_a_usage_error() {
    let out = dpa(&["generate-data", "--kind", "disk"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}

#[test]
fn train_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = disk_file(dir.path(), 128, 8);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let run = dir.path().join("run");
    ok(&dpa(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--quiet",
    ]));
    for f in ["model.json", "model.bin", "history.csv", "config.toml"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next().unwrap(), "epoch,total,k0,k2,k6,k8");
    assert_eq!(lines.count(), 2);
    let model = DpaModel::load(&run).unwrap();
    assert_eq!(model.arch().input_dim, 64);

    // a second run refuses to overwrite without --force
    let again = dpa(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--quiet",
    ]);
    assert_eq!(again.status.code(), Some(2));
    let before = std::fs::read(run.join("model.bin")).unwrap();
    ok(&dpa(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--quiet",
        "--force",
    ]));
    assert_eq!(
        std::fs::read(run.join("model.bin")).unwrap(),
        before,
        "training is seed-determined"
    );
}

#[test]
fn zero_epochs_saves_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = disk_file(dir.path(), 32, 8);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, SMALL_CONFIG.replace("epochs = 2", "epochs = 0")).unwrap();
    let run = dir.path().join("run");
    ok(&dpa(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--quiet",
    ]));
    let model = DpaModel::load(&run).unwrap();
    let init = Autoencoder::init(model.arch().clone(), 3).unwrap();
    assert_eq!(model.net, init);
}

#[test]
fn config_validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = disk_file(dir.path(), 32, 8);
    let cases = [
        SMALL_CONFIG.replace("ks = [0, 2, 6, 8]", "ks = [0, 2]\nweights = [0.7, 0.7]"),
        SMALL_CONFIG.replace("latent_dim = 8", "latent_dim = 8\ninput_dim = 10"),
        SMALL_CONFIG.replace("seed = 3", "seed = 3\nunknown_key = 1"),
        SMALL_CONFIG.replace("ks = [0, 2, 6, 8]", "ks = [0, 9]"),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("cfg{i}.toml"));
        std::fs::write(&cfg, text).unwrap();
        let run = dir.path().join(format!("run{i}"));
        let out = dpa(&[
            "train",
            "--config",
            s(&cfg),
            "--data",
            s(&data),
            "--out",
            s(&run),
            "--quiet",
        ]);
        assert_eq!(
            out.status.code(),
            Some(2),
            "case {i}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!run.join("model.bin").exists());
    }
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = disk_file(dir.path(), 64, 8);
    let cfg = dir.path().join("cfg.toml");
    let text = SMALL_CONFIG
        .replace("learning_rate = 1e-3", "learning_rate = 1e12")
        .replace("epochs = 2", "epochs = 50");
    std::fs::write(&cfg, text).unwrap();
    let out = dpa(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&dir.path().join("r")),
        "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn evaluate_identity_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    identity_model(&model, 3);
    let data = labeled_gaussian(dir.path(), 40, 3);
    let json_before = std::fs::read(model.join("model.json")).unwrap();
    let bin_before = std::fs::read(model.join("model.bin")).unwrap();

    let report = dir.path().join("report.csv");
    ok(&dpa(&[
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--ks",
        "3",
        "--out",
        s(&report),
    ]));
    let text = std::fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,cond_energy,cond_mse,uncond_ed,marg_w1,n_eval,n_draws"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "3");
    assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
    assert!(row[3].parse::<f64>().unwrap().abs() < 1e-12);
    assert_eq!(row[6], "16");

    let bad = dpa(&[
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--ks",
        "0,4",
        "--out",
        s(&report),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("max k is 3"));

    assert_eq!(std::fs::read(model.join("model.json")).unwrap(), json_before);
    assert_eq!(std::fs::read(model.join("model.bin")).unwrap(), bin_before);
}

#[test]
fn embed_writes_latents_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    identity_model(&model, 3);
    let data = labeled_gaussian(dir.path(), 10, 3);
    let out = dir.path().join("z.csv");
    ok(&dpa(&[
        "embed",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--k",
        "2",
        "--out",
        s(&out),
    ]));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "z0,z1,label");
    assert!(lines.all(|l| l.split(',').count() == 3));
}

#[test]
fn deterministic_reconstruction_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    identity_model(&model, 3);
    let data = labeled_gaussian(dir.path(), 10, 3);
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let out_a = ok(&dpa(&[
        "reconstruct",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--k",
        "3",
        "--samples",
        "1",
        "--out",
        s(&a),
    ]));
    let out_b = ok(&dpa(&[
        "reconstruct",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--k",
        "3",
        "--samples",
        "1",
        "--seed",
        "9",
        "--out",
        s(&b),
    ]));
    assert_eq!(out_a, out_b);
    assert!(out_a.contains("sha256="));
    let rec = dpa_core::data::load_dataset(&a).unwrap();
    let orig = dpa_core::data::load_dataset(&data).unwrap();
    assert_eq!(rec.x, orig.x);
}

#[test]
fn reconstruct_stacks_samples_per_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = disk_file(dir.path(), 16, 8);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, SMALL_CONFIG.replace("epochs = 2", "epochs = 0")).unwrap();
    let run = dir.path().join("run");
    ok(&dpa(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--quiet",
    ]));
    let out = dir.path().join("r.bin");
    let text = ok(&dpa(&[
        "reconstruct",
        "--model",
        s(&run),
        "--data",
        s(&data),
        "--k",
        "2",
        "--samples",
        "3",
        "--out",
        s(&out),
    ]));
    assert!(text.contains("n=48 p=64"), "{text}");
}

#[test]
fn qq_passthrough_has_equal_columns() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    identity_model(&model, 3);
    let data = labeled_gaussian(dir.path(), 200, 3);
    let out = dir.path().join("qq.csv");
    ok(&dpa(&[
        "qq",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--k",
        "3",
        "--column",
        "1",
        "--quantiles",
        "9",
        "--out",
        s(&out),
    ]));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "q,quantile_true,quantile_fit");
    let mut rows = 0;
    for l in lines {
        let v: Vec<&str> = l.split(',').collect();
        assert_eq!(v[1], v[2]);
        rows += 1;
    }
    assert_eq!(rows, 9);
}

#[test]
fn shipped_configs_train() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("disk16.bin");
    ok(&dpa(&[
        "generate-data",
        "--kind",
        "disk",
        "--size",
        "16",
        "--n",
        "64",
        "--seed",
        "1",
        "--out",
        s(&data),
    ]));
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["disk16.toml", "disk16_ae.toml"] {
        let text = std::fs::read_to_string(configs.join(name)).unwrap();
        assert!(text.contains("epochs = 200"));
        let short = tmp.path().join(name);
        std::fs::write(&short, text.replace("epochs = 200", "epochs = 1")).unwrap();
        let run = tmp.path().join(format!("run_{name}"));
        ok(&dpa(&[
            "train",
            "--config",
            s(&short),
            "--data",
            s(&data),
            "--out",
            s(&run),
            "--quiet",
        ]));
        let echo = std::fs::read_to_string(run.join("config.toml")).unwrap();
        assert!(echo.contains("input_dim = 256"), "{echo}");
    }
}
