use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wavecoef::config::{NoiseModel, ScenarioConfig};
use wavecoef::io::{read_field_csv, read_history_csv, read_observation_csv};
use wavecoef_cli::{EXIT_FAILURE, EXIT_NOT_CONVERGED, EXIT_VALIDATION};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wavecoef"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, cfg: &ScenarioConfig) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn small(preset: &str) -> ScenarioConfig {
    ScenarioConfig::preset(preset).unwrap().with_resolution(13, 13, 12)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn preset_files_match_builtin_presets() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    for name in ["transmission", "reflection"] {
        let text = fs::read_to_string(root.join(format!("{name}.toml"))).unwrap();
        let parsed = ScenarioConfig::from_toml(&text).unwrap();
        let builtin = ScenarioConfig::preset(name).unwrap();
        assert_eq!(parsed, builtin, "{name}");
        assert_eq!(parsed.hash(), builtin.hash());
    }
    let out = run(&["preset", "reflection"]);
    assert_eq!(code(&out), 0);
    let printed = ScenarioConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(printed, ScenarioConfig::reflection());
    assert_eq!(code(&run(&["preset", "nope"])), EXIT_VALIDATION);
}

#[test]
fn noise_free_data_equals_clean_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("transmission");
    cfg.noise = NoiseModel::None;
    let config = write_config(dir.path(), "c.toml", &cfg);
    let out_dir = dir.path().join("data");
    let out = run(&["generate-data", "--config", s(&config), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (_, noisy) = read_observation_csv(fs::File::open(out_dir.join("observations.csv")).unwrap()).unwrap();
    let (head, clean) =
        read_observation_csv(fs::File::open(out_dir.join("observations_clean.csv")).unwrap()).unwrap();
    assert_eq!(noisy, clean);
    assert_eq!(head.get("seed"), Some(cfg.seed.to_string().as_str()));
    assert_eq!(head.get("config_hash"), Some(cfg.hash().as_str()));
    let (_, points, values) = read_field_csv(fs::File::open(out_dir.join("exact_coefficient.csv")).unwrap()).unwrap();
    assert_eq!(points.len(), 13 * 13);
    assert!(values.iter().all(|&v| (1.0..=1.4 + 1e-12).contains(&v)));
    let vtk = fs::read_to_string(out_dir.join("exact_coefficient.vtk")).unwrap();
    assert!(vtk.contains("DIMENSIONS 13 13 1") && vtk.contains("SCALARS coefficient double 1"));
}

#[test]
fn data_generation_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.toml", &small("transmission"));
    let gen = |name: &str, extra: &[&str]| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["generate-data", "--config", s(&config), "--out", s(&out_dir)];
        args.extend_from_slice(extra);
        let out = run(&args);
        assert_eq!(code(&out), 0);
        fs::read(out_dir.join("observations.csv")).unwrap()
    };
    let a = gen("a", &[]);
    let b = gen("b", &[]);
    let c = gen("c", &["--seed", "7"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(String::from_utf8(c).unwrap().contains("# seed = 7\n"));
}

#[test]
fn reflection_data_has_one_series_per_patch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("reflection");
    let config = write_config(dir.path(), "c.toml", &cfg);
    let out_dir = dir.path().join("data");
    assert_eq!(code(&run(&["generate-data", "--config", s(&config), "--out", s(&out_dir)])), 0);
    let text = fs::read_to_string(out_dir.join("observations.csv")).unwrap();
    let (head, obs) = read_observation_csv(text.as_bytes()).unwrap();
    assert_eq!(obs.width(), 10);
    assert_eq!(obs.num_times(), cfg.time.steps + 1);
    assert_eq!(head.get("kind"), Some("patch_mean"));
    assert!(text.contains("# columns = t,patch0,patch1,"));
}

#[test]
fn solve_writes_outputs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("reflection");
    let config = write_config(dir.path(), "c.toml", &cfg);
    let data = dir.path().join("data");
    assert_eq!(code(&run(&["generate-data", "--config", s(&config), "--out", s(&data)])), 0);

    let solve = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "solve", "--config", s(&config), "--data", s(&data), "--out", s(&out_dir), "--max-iter", "40",
            "--tol", "1e9",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = solve("a");
    let b = solve("b");
    for file in ["history.csv", "control.csv", "coefficient.csv", "reconstruction.vtk"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let (head, history) = read_history_csv(fs::File::open(a.join("history.csv")).unwrap()).unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!(history[0].iteration, 10);
    assert_eq!(head.get("data_hash"), Some(cfg.data_hash().as_str()));

    let summary: toml::Table = fs::read_to_string(a.join("summary.toml")).unwrap().parse().unwrap();
    assert_eq!(summary["converged"].as_bool(), Some(true));
    assert_eq!(summary["iterations"].as_integer(), Some(10));
    assert_eq!(summary["tol"].as_float(), Some(1e9));
    assert!(summary["residual_sum"].as_float().unwrap() <= 1e9);
    assert!(summary.contains_key("wall_time_s") && summary.contains_key("level_counts"));
    let (_, _, coefficient) = read_field_csv(fs::File::open(a.join("coefficient.csv")).unwrap()).unwrap();
    assert!(coefficient.iter().all(|&c| (1.0..=4.0).contains(&c)));
}

#[test]
fn nonconvergence_and_validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("transmission");
    let config = write_config(dir.path(), "c.toml", &cfg);
    let data = dir.path().join("data");
    assert_eq!(code(&run(&["generate-data", "--config", s(&config), "--out", s(&data)])), 0);

    let out_dir = dir.path().join("out");
    let out = run(&[
        "solve", "--config", s(&config), "--data", s(&data), "--out", s(&out_dir), "--max-iter", "20", "--tol",
        "1e-30",
    ]);
    assert_eq!(code(&out), EXIT_NOT_CONVERGED);
    let summary = fs::read_to_string(out_dir.join("summary.toml")).unwrap();
    assert!(summary.contains("converged = false"));

    // Data on a different grid.
    let coarse = write_config(dir.path(), "coarse.toml", &cfg.clone().with_resolution(13, 13, 10));
    let out = run(&["solve", "--config", s(&coarse), "--data", s(&data), "--out", s(&out_dir)]);
    assert_eq!(code(&out), EXIT_VALIDATION);
    assert!(String::from_utf8_lossy(&out.stderr).contains("time nodes"));

    // Observation region leaving the domain.
    let mut bad = cfg.clone();
    bad.observation = wavecoef::observation::ObservationGeometry::Restriction {
        region: wavecoef::mesh::Rect::new(-1.0, 1.0, 1.0, 2.5),
    };
    let bad = write_config(dir.path(), "bad.toml", &bad);
    assert_eq!(code(&run(&["generate-data", "--config", s(&bad), "--out", s(&out_dir)])), EXIT_VALIDATION);

    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&run(&["adjoint-test", "--config", s(&missing)])), EXIT_VALIDATION);
    let garbage = dir.path().join("garbage.toml");
    fs::write(&garbage, "name = 3\n").unwrap();
    assert_eq!(code(&run(&["generate-data", "--config", s(&garbage), "--out", s(&out_dir)])), EXIT_VALIDATION);
    assert_eq!(
        code(&run(&["solve", "--config", s(&config), "--data", s(&dir.path().join("nowhere")), "--out", s(&out_dir)])),
        EXIT_VALIDATION
    );
}

#[test]
fn adjoint_test_passes_and_detects_a_corrupted_adjoint() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["transmission", "reflection"] {
        let config = write_config(dir.path(), "c.toml", &ScenarioConfig::preset(preset).unwrap());
        let args = ["adjoint-test", "--config", s(&config), "--nx", "9", "--ny", "9", "--steps", "8"];
        let out = run(&args);
        let text = String::from_utf8(out.stdout.clone()).unwrap();
        assert_eq!(code(&out), 0, "{text}");
        assert!(!text.contains("FAIL"), "{text}");
        assert!(text.contains("operator norm estimate"));
        assert!(text.contains("gamma_f gamma_g L = ") && text.contains("gamma_f gamma_g L^2 = "));

        let mut corrupted = args.to_vec();
        corrupted.push("--corrupt-adjoint");
        let out = run(&corrupted);
        let text = String::from_utf8(out.stdout.clone()).unwrap();
        assert_eq!(code(&out), EXIT_FAILURE);
        assert!(text.contains("FAIL") && text.contains("overall: FAIL"));
    }
}
