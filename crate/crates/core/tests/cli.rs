use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use thinhom::cli::{RunConfig, Summary};

const SINE: &str = "period = 1.0\n[[profiles]]\nsin = [1.0]\n[[pieces]]\na_poly = [2.0]\nb_terms = [{ poly = [1.0], profile = 0 }]\n";
const FLAT: &str = "period = 1.0\n[[pieces]]\na_poly = [2.0]\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thinhom"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> (i32, String, String) {
    let o = bin().args(args).output().unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stdout).into(), String::from_utf8_lossy(&o.stderr).into())
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

fn summary(path: &Path) -> Summary {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn cell_on_flat_profile() {
    let d = tempfile::tempdir().unwrap();
    let g = write(d.path(), "flat.toml", FLAT);
    let out = d.path().join("out");
    let (code, _, err) = run(&["cell", "--geometry", g.to_str().unwrap(), "--out", out.to_str().unwrap(), "--fixed-timestamp", "t", "--formats", "json"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(listing(&out), vec!["cell_t.json"]);
    let s = summary(&out.join("cell_t.json"));
    assert_eq!(s.schema, 1);
    assert_eq!(s.version, env!("CARGO_PKG_VERSION"));
    assert!(s.passed);
    let sc = &s.report.scalars;
    assert!((sc["r"] - 2.0).abs() < 1e-10 && (sc["p"] - 2.0).abs() < 1e-10 && (sc["q"] - 1.0).abs() < 1e-8);
}

#[test]
fn empty_ladder_is_a_config_error_without_artifacts() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "sine.toml", SINE);
    let cfg = write(d.path(), "run.toml", "command = \"converge\"\ngeometry = \"sine.toml\"\nepsilon = []\nout = \"nothing\"\n");
    let (code, _, err) = run(&["converge", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("epsilon ladder is empty"));
    assert!(!d.path().join("nothing").exists());
    assert!(!Path::new("nothing").exists());
}

#[test]
fn exit_statuses() {
    let d = tempfile::tempdir().unwrap();
    let g = write(d.path(), "sine.toml", SINE);
    let out = d.path().join("o");
    let (g, out) = (g.to_str().unwrap(), out.to_str().unwrap());
    // missing file
    assert_eq!(run(&["cell", "--geometry", "/nonexistent/g.toml", "--out", out]).0, 5);
    // not admissible
    let bad = write(d.path(), "bad.toml", "period = 1.0\n[[profiles]]\nsin = [3.0]\n[[pieces]]\na_poly = [2.0]\nb_terms = [{ poly = [1.0], profile = 0 }]\n");
    assert_eq!(run(&["cell", "--geometry", bad.to_str().unwrap(), "--out", out]).0, 2);
    // config for another command
    let other = write(d.path(), "other.toml", "command = \"layer\"\n");
    assert_eq!(run(&["cell", "--config", other.to_str().unwrap(), "--geometry", g, "--out", out]).0, 2);
    // unreachable tolerance
    assert_eq!(run(&["cell", "--geometry", g, "--out", out, "--n", "8", "--tol", "1e-300"]).0, 3);
    // a study whose checks fail: one ε cannot show halving
    let (code, _, err) = run(&["converge", "--geometry", g, "--out", out, "--epsilon", "0.25", "--n", "16", "--limit-n", "128"]);
    assert_eq!(code, 4);
    assert!(err.contains("error_halved"));
}

#[test]
fn perturb_defaults_give_one_row_per_grid_point() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "sine.toml", SINE);
    let cfg = write(d.path(), "run.toml", "geometry = \"sine.toml\"\nformats = [\"csv\", \"plotdata\"]\nfixed_timestamp = \"x\"\n");
    let out = d.path().join("o");
    let (code, _, err) = run(&["perturb", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(out.join("perturb_x.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# perturb study; columns: epsilon, delta, D"));
    assert!(lines.next().unwrap().starts_with("epsilon,delta,D"));
    assert_eq!(lines.count(), 9);
    let s = summary(&out.join("perturb_x.json"));
    // CSV, one data file per fitted curve, and the summary
    assert_eq!(listing(&out).len(), 1 + s.report.fits.len() + 1);
    assert_eq!(s.artifacts.len(), listing(&out).len());
    for fit in &s.report.fits {
        let name = s.artifacts.iter().find(|a| a.ends_with(".dat") && a.contains(&fit.name.replace('.', "_"))).unwrap();
        let data = fs::read_to_string(out.join(name)).unwrap();
        assert_eq!(data.lines().filter(|l| !l.starts_with('#')).count(), fit.x.len());
    }
}

#[test]
fn config_echo_round_trips_and_reproduces_the_run() {
    let d = tempfile::tempdir().unwrap();
    let g = write(d.path(), "sine.toml", SINE);
    let before = fs::read(&g).unwrap();
    let out = d.path().join("a");
    let args = ["layer", "--geometry", g.to_str().unwrap(), "--out", out.to_str().unwrap(), "--fixed-timestamp", "r", "--epsilon", "0.5,0.25", "--eta", "0.4,0.1"];
    assert_eq!(run(&args).0, 0);
    let s = summary(&out.join("layer_r.json"));
    let echo: RunConfig = s.config.clone();
    let back: RunConfig = toml::from_str(&echo.to_toml()).unwrap();
    assert_eq!(back, echo);
    // rerun from the echoed config, written as a run file
    let first = fs::read(out.join("layer_r.json")).unwrap();
    fs::remove_dir_all(&out).unwrap();
    let cfg = write(d.path(), "echo.toml", &echo.to_toml());
    assert_eq!(run(&["layer", "--config", cfg.to_str().unwrap()]).0, 0);
    assert_eq!(fs::read(out.join("layer_r.json")).unwrap(), first);
    // no command touches the geometry file
    assert_eq!(fs::read(&g).unwrap(), before);
}

#[test]
fn every_command_runs() {
    let d = tempfile::tempdir().unwrap();
    let g = write(d.path(), "sine.toml", SINE);
    let two = write(d.path(), "two.toml", "period = 1.0\nbreakpoints = [0.0, 0.5, 1.0]\n[[pieces]]\na_poly = [1.0]\n[[pieces]]\na_poly = [2.0]\n");
    let out = d.path().join("o");
    let o = out.to_str().unwrap();
    let small = ["--n", "16", "--columns-per-period", "8", "--limit-n", "128", "--fixed-timestamp", "s"];
    for (cmd, geom, extra) in [
        ("cell", &g, vec!["--stations", "0,0.5"]),
        ("limit", &two, vec![]),
        ("direct", &g, vec!["--epsilon", "0.25"]),
        ("coeffcont", &g, vec![]),
    ] {
        let mut args = vec![cmd, "--geometry", geom.to_str().unwrap(), "--out", o];
        args.extend(small);
        args.extend(extra);
        let (code, _, err) = run(&args);
        assert_eq!(code, 0, "{cmd}: {err}");
        let s = summary(&out.join(format!("{cmd}_s.json")));
        assert!(s.passed, "{cmd}");
    }
    let limit = summary(&out.join("limit_s.json"));
    assert_eq!(limit.report.rows.len(), 129);
}
