use std::path::Path;
use std::process::{Command, Output};

use ndarray::Array2;
use scatsim::tensor_file::{Tensor, TensorData, TensorField};
use scatsim::{EnvelopeImage, Grid2D, ParameterMap};

fn scatsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scatsim"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const GEN_TOML: &str = "n_lateral = 64\nn_axial = 32\ncount = 3\n[shapes]\ncoarse_dims = [4, 4]\n";

#[test]
fn gen_data_writes_loadable_maps_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gen.toml"), GEN_TOML).unwrap();
    for out in ["a", "b"] {
        let o = scatsim(dir.path(), &["--config", "gen.toml", "--seed", "5", "--out", out, "gen-data", "--envelopes"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("seed=5") && stdout.contains("config_hash="), "{stdout}");
    }
    for i in 0..3 {
        let name = format!("map_{i:05}.tensor");
        let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(&name)).unwrap());
        let t = Tensor::load(dir.path().join("a").join(&name)).unwrap();
        assert_eq!(t.header.role, ParameterMap::ROLE);
        assert!(matches!(t.data, TensorData::F32(_)));
        let pm = ParameterMap::from_tensor(&t).unwrap();
        assert_eq!(pm.mu().dim(), (32, 64));
        assert_eq!(pm.axial_factor(), 4);
        assert!((pm.grid().spacing_lateral - 0.01925).abs() < 1e-12);
        assert!(pm.mu().iter().all(|v| (0.0..=1.0).contains(v)));
        let env = EnvelopeImage::load(dir.path().join("a").join(format!("envelope_{i:05}.tensor"))).unwrap();
        assert_eq!(env.values().dim(), (128, 64));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["count"], 3);
    assert!(dir.path().join("a/config.toml").exists());
}

#[test]
fn simulate_estimate_transform_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("gen.toml"), GEN_TOML).unwrap();
    let ok = |args: &[&str]| {
        let o = scatsim(p, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    ok(&["--config", "gen.toml", "--out", "data", "gen-data", "--count", "1"]);
    ok(&["--out", "sim", "simulate", "--input", "data/map_00000.tensor"]);
    for f in ["scatterers.tensor", "rf.tensor", "envelope.tensor", "bmode.pgm", "manifest.json"] {
        assert!(p.join("sim").join(f).exists(), "{f}");
    }
    ok(&["--out", "trf", "estimate", "--method", "trf", "--input", "sim/rf.tensor"]);
    ok(&["--out", "env", "estimate", "--method", "sample-env", "--input", "sim/envelope.tensor"]);
    ok(&["--out", "rot", "transform", "--input", "sim/scatterers.tensor", "--rotate", "10"]);
    ok(&["--out", "cmp", "transform", "--input", "sim/envelope.tensor", "--compress", "0.2"]);
    assert!(std::fs::read_dir(p.join("rot")).unwrap().count() > 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();

    std::fs::write(p.join("bad.toml"), "count = \"many\"\n").unwrap();
    assert_eq!(code(&scatsim(p, &["--config", "bad.toml", "gen-data"])), 2);
    assert_eq!(code(&scatsim(p, &["estimate", "--method", "magic", "--input", "x"])), 2);
    assert_eq!(code(&scatsim(p, &["simulate", "--input", "missing.tensor"])), 2);
    std::fs::write(p.join("shapes.toml"), "[shapes]\ncoarse_dims = [1, 1]\n").unwrap();
    assert_eq!(code(&scatsim(p, &["--config", "shapes.toml", "gen-data", "--count", "1"])), 2);
    assert_eq!(code(&scatsim(p, &["experiment", "rotation", "--method", "scat-param"])), 2);

    let grid = Grid2D::scatterer(200, 200, 40.0, 1540.0).unwrap();
    EnvelopeImage::new(grid, Array2::zeros((200, 200))).unwrap().save(p.join("zero.tensor")).unwrap();
    EnvelopeImage::new(grid, Array2::from_elem((200, 200), 1.0)).unwrap().save(p.join("one.tensor")).unwrap();
    std::fs::write(p.join("eval.toml"), "[phantom]\ninclusion_radius = 1.0\n[histogram]\npatch_mm = 1.0\n").unwrap();
    let o = scatsim(p, &["--config", "eval.toml", "evaluate", "--truth", "zero.tensor", "--sim", "one.tensor"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    assert_eq!(code(&scatsim(p, &["--help"])), 0);
}
