use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spde_lab_cli::config::{resolve, ConfigFile, Experiment, Overrides, SeedRange};

fn run(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spde-lab"));
    cmd.current_dir(dir)
        .args(args)
        .env_remove("SPDE_LAB_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn same_config_and_seeds_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--experiment", "gaussian-variance", "--seeds", "3..40"];
    let a = run(
        dir.path(),
        &[&args[..], &["--out", "a", "--threads", "1"]].concat(),
        &[],
    );
    let b = run(
        dir.path(),
        &[&args[..], &["--out", "b"]].concat(),
        &[("SPDE_LAB_THREADS", "4")],
    );
    assert!(a.status.success() && b.status.success());
    let fa = fs::read(dir.path().join("a/gaussian-variance.csv")).unwrap();
    let fb = fs::read(dir.path().join("b/gaussian-variance.csv")).unwrap();
    assert_eq!(fa, fb);
    let rows = data_rows(&dir.path().join("a/gaussian-variance.csv"));
    let seeds: Vec<u64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(seeds, (3..40).collect::<Vec<_>>());
}

#[test]
fn kernel_band_ratios_sit_in_a_positive_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--experiment", "kernel-band"], &[]);
    assert!(out.status.success());
    let path = dir.path().join("results/kernel-band.csv");
    let ratios: Vec<f64> = data_rows(&path)
        .iter()
        .map(|r| r[3].parse().unwrap())
        .collect();
    assert_eq!(ratios.len(), 150);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(lo > 0.0 && hi / lo < 10.0);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# spde-lab-cli "));
    assert!(text.contains("# config-sha256: "));
    assert!(text.contains("#   experiment = \"kernel-band\""));
}

#[test]
fn permanent_row_shows_printed_and_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiment = \"permanent\"\nm = 2\n");
    let out = run(dir.path(), &["--config", &cfg, "--out", "p"], &[]);
    assert!(out.status.success());
    let rows = data_rows(&dir.path().join("p/permanent.csv"));
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(
        (r[2].as_str(), r[3].as_str(), r[4].as_str()),
        ("2", "3", "3")
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("p/polynomial_m2.txt")).unwrap(),
        "0 2 1\n1 1 1\n"
    );
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "experiment = \"permanent\"\nbogus = 1\n",
        "experiment = \"permanent\"\nbeta = 0.5\n",
        "experiment = \"gaussian-variance\"\n[grid]\nt_end = 1.0\nnt = 1\nnx = 8\n",
        "experiment = \"malliavin-compare\"\n[drift]\nname = \"arctan\"\n",
        "experiment = \"moments\"\nseeds = { start = 5, end = 5 }\n",
        "experiment = [1]\n",
    ];
    for text in cases {
        let cfg = write_config(dir.path(), text);
        let out = run(dir.path(), &["--config", &cfg], &[]);
        assert_eq!(out.status.code(), Some(1), "{text}");
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("config error"),
            "{text}"
        );
    }
    assert_eq!(
        run(dir.path(), &["--experiment", "nope"], &[])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(
            dir.path(),
            &["--seeds", "4..2", "--experiment", "moments"],
            &[]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(run(dir.path(), &[], &[]).status.code(), Some(1));
    let bad_env = run(
        dir.path(),
        &["--experiment", "permanent"],
        &[("SPDE_LAB_THREADS", "many")],
    );
    assert_eq!(bad_env.status.code(), Some(1));
    assert!(!dir.path().join("results").exists());
}

#[test]
fn numerical_failure_keeps_partial_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = \"simplex-beta\"\nbeta = 0.98\nsamples = 10000\n",
    );
    let out = run(dir.path(), &["--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(2));
    let path = dir.path().join("results/simplex-beta.csv");
    let rows = data_rows(&path);
    assert!(!rows.is_empty() && rows.len() < 8);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.lines().last().unwrap().starts_with("# error: "));
}

#[test]
fn base_seed_keeps_the_configured_count() {
    let file =
        ConfigFile::parse("experiment = \"localtime\"\nseeds = { start = 0, end = 7 }\n").unwrap();
    let cfg = resolve(
        file,
        Overrides {
            seed: Some(100),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(cfg.seeds(), (100..107).collect::<Vec<_>>());
    let cfg = resolve(
        ConfigFile::default(),
        Overrides {
            experiment: Some(Experiment::Moments),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(cfg.seeds().len(), 5000);
}

#[test]
fn hash_tracks_the_resolved_config() {
    let parse = |t: &str| resolve(ConfigFile::parse(t).unwrap(), Overrides::default()).unwrap();
    let a = parse("experiment = \"kernel-band\"\n");
    let b = parse("experiment = \"kernel-band\"\ngaps = 30\n");
    let c = parse("experiment = \"kernel-band\"\ngaps = 31\n");
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn seed_range_syntax() {
    assert_eq!(
        "2..9".parse::<SeedRange>().unwrap(),
        SeedRange { start: 2, end: 9 }
    );
    for bad in ["9..2", "3", "a..b", "4..4"] {
        assert!(bad.parse::<SeedRange>().is_err(), "{bad}");
    }
    assert_eq!(SeedRange { start: 2, end: 9 }.to_string(), "2..9");
}

#[test]
fn every_experiment_has_a_default_config() {
    for exp in Experiment::ALL {
        let cfg = resolve(
            ConfigFile::default(),
            Overrides {
                experiment: Some(exp),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.experiment, exp);
        assert_eq!(exp.as_str().parse::<Experiment>().unwrap(), exp);
        assert!(!cfg.to_toml().is_empty());
    }
}
