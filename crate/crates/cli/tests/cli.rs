use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nlmcmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlmcmc")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const SMALL_RUN: &str = r#"
experiment = "run2d"
seeds = [3, 4]
n_particles = 20
n_sim = 40
record_every = 10

[target]
name = "circ_mog"

[primary_sampler]
kind = "mala"
step = 0.01

[auxiliary_sampler]
kind = "ula"
step = 0.5

[jump]
kind = "ar"
epsilon = 0.2

[metrics]
reference_samples = 200
"#;

#[test]
fn validate_accepts_bundled_configs() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        let o = nlmcmc(&["validate", "--config", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}: {}", p.display(), stderr(&o));
    }
}

#[test]
fn epsilon_out_of_range_names_the_key_and_line() {
    let d = tempfile::tempdir().unwrap();
    let c = write(d.path(), "c.toml", "experiment = \"run2d\"\n[jump]\nkind = \"bg\"\nepsilon = 1.0\n");
    let o = nlmcmc(&["validate", "--config", &c]);
    assert_eq!(code(&o), 1);
    let e = stderr(&o);
    assert!(e.contains("c.toml:4: jump.epsilon"), "{e}");
}

#[test]
fn unknown_target_lists_registered_targets() {
    let d = tempfile::tempdir().unwrap();
    let c = write(d.path(), "c.toml", "experiment = \"run2d\"\n\n[target]\nname = \"banana\"\n");
    let o = nlmcmc(&["validate", "--config", &c]);
    assert_eq!(code(&o), 1);
    let e = stderr(&o);
    assert!(e.contains(":4: target.name"), "{e}");
    for t in ["gaussian", "circ_mog", "grid_mog", "two_rings"] {
        assert!(e.contains(t), "{e}");
    }
}

#[test]
fn empty_seeds_rejected() {
    let d = tempfile::tempdir().unwrap();
    let c = write(d.path(), "c.toml", "experiment = \"run2d\"\nseeds = []\n");
    let o = nlmcmc(&["validate", "--config", &c]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(":2: seeds"), "{}", stderr(&o));
    let o = nlmcmc(&["mmd-selftest", "--seeds", ""]);
    assert_eq!(code(&o), 1);
}

#[test]
fn syntax_errors_and_unknown_keys_are_config_errors() {
    let d = tempfile::tempdir().unwrap();
    let c = write(d.path(), "c.toml", "experiment = \"run2d\"\nn_particles = \n");
    assert_eq!(code(&nlmcmc(&["validate", "--config", &c])), 1);
    let c = write(d.path(), "k.toml", "experiment = \"run2d\"\n[jump]\nepsilom = 0.1\n");
    let o = nlmcmc(&["validate", "--config", &c]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("k.toml:3:"), "{}", stderr(&o));
}

#[test]
fn target_parameters_are_checked_against_the_family() {
    let d = tempfile::tempdir().unwrap();
    let c = write(d.path(), "c.toml", "experiment = \"run2d\"\n[target]\nname = \"grid_mog\"\nradius = 3.0\n");
    let o = nlmcmc(&["validate", "--config", &c]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(":4: target.radius"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert_eq!(code(&nlmcmc(&["frobnicate"])), 1);
    assert_eq!(code(&nlmcmc(&["run"])), 1);
    assert_eq!(code(&nlmcmc(&["--help"])), 0);
}

#[test]
fn run_writes_all_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let c = write(d.path(), "c.toml", SMALL_RUN);
    let out = d.path().join("out");
    let o = nlmcmc(&["run", "--config", &c, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.ends_with('\n'));
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "step,seed,mmd2,tv_beta,jump_rate,mean_log_G,diverged_count");
    assert_eq!(lines.len(), 1 + 2 * 5);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "0");
    assert_eq!(first[1], "3");
    assert!(first[2].parse::<f64>().is_ok());
    assert_eq!(first[3], "");

    let samples = fs::read_to_string(out.join("final_samples.csv")).unwrap();
    assert!(samples.starts_with("seed,ensemble,index,x0,x1\n"));
    assert_eq!(samples.lines().count(), 1 + 2 * 2 * 20);

    let m = json(&out.join("manifest.json"));
    assert_eq!(m["experiment"], "run2d");
    assert_eq!(m["label"], "ar");
    assert_eq!(m["status"], "completed");
    assert_eq!(m["seeds"], serde_json::json!([3, 4]));
    assert_eq!(m["config"]["jump"]["epsilon"], 0.2);
    assert!(m["git_revision"].is_string());

    let s = json(&out.join("summary.json"));
    assert_eq!(s["seeds"].as_array().unwrap().len(), 2);
    assert!(s["aggregate"]["median_final_mmd2"].is_number());
    assert_eq!(s["per_step"].as_array().unwrap().len(), 5);
}

#[test]
fn identical_config_and_seed_give_identical_traces() {
    let d = tempfile::tempdir().unwrap();
    let c = write(d.path(), "c.toml", SMALL_RUN);
    let a = d.path().join("a");
    let b = d.path().join("b");
    assert_eq!(code(&nlmcmc(&["run", "--config", &c, "--out", a.to_str().unwrap()])), 0);
    let o = nlmcmc(&["run", "--config", &c, "--out", b.to_str().unwrap(), "--parallel-seeds", "--threads", "2"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("final_samples.csv")).unwrap(),
        fs::read(b.join("final_samples.csv")).unwrap()
    );
}

#[test]
fn seeds_flag_overrides_config() {
    let d = tempfile::tempdir().unwrap();
    let c = write(d.path(), "c.toml", SMALL_RUN);
    let out = d.path().join("o");
    assert_eq!(code(&nlmcmc(&["run", "--config", &c, "--out", out.to_str().unwrap(), "--seeds", "9"])), 0);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().skip(1).all(|l| l.split(',').nth(1) == Some("9")));
    assert_eq!(json(&out.join("manifest.json"))["seeds"], serde_json::json!([9]));
}

#[test]
fn diverged_run_writes_artifacts_and_exits_two() {
    let d = tempfile::tempdir().unwrap();
    // ULA with step 5 on N(0, 1) multiplies the state by -4 every step
    let c = write(
        d.path(),
        "c.toml",
        r#"
experiment = "run2d"
seeds = [0]
n_particles = 4
n_sim = 2000
record_every = 100
[target]
name = "gaussian"
dim = 1
[primary_sampler]
kind = "ula"
step = 5.0
[jump]
kind = "bg"
epsilon = 0.01
[metrics]
reference_samples = 0
"#,
    );
    let out = d.path().join("o");
    let o = nlmcmc(&["run", "--config", &c, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert_eq!(json(&out.join("manifest.json"))["status"], "diverged");
    assert_eq!(json(&out.join("summary.json"))["seeds"][0]["status"]["status"], "diverged");
    assert!(out.join("trace.csv").exists());
}

#[test]
fn oracle_suite_passes_on_bundled_instance() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("o");
    let o = nlmcmc(&["oracle-suite", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out.join("theory_report.json"));
    assert_eq!(r["pass"], true);
    assert!(r["invariance_residuals"]["bg"].as_f64().unwrap() <= 1e-12);
    assert!(r["invariance_residuals"]["ar"].as_f64().unwrap() <= 1e-12);
    assert_eq!(r["runs"].as_array().unwrap().len(), 4);
    let tv = fs::read_to_string(out.join("tv_sequences.csv")).unwrap();
    assert!(tv.starts_with("kind,start,n,tv,tv_beta,tv_eta\n"));
    assert_eq!(tv.lines().count(), 1 + 4 * 201);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 201);
    assert!(trace.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse::<f64>().is_ok());
}

#[test]
fn oracle_suite_on_random_instance() {
    let d = tempfile::tempdir().unwrap();
    let c = write(
        d.path(),
        "c.toml",
        "experiment = \"oracle-suite\"\n[oracle]\ninstance = \"random\"\nsize = 6\ninstance_seed = 5\neta0 = 5\n",
    );
    let out = d.path().join("o");
    let o = nlmcmc(&["oracle-suite", "--config", &c, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&out.join("theory_report.json"))["instance"]["pi"].as_array().unwrap().len(), 6);
}

fn small_poc(dir: &Path, band: &str) -> String {
    write(
        dir,
        "poc.toml",
        &format!(
            "experiment = \"poc\"\nseeds = [1]\n[poc]\nns = [2, 4]\nn_step = 4\nmin_reps = 20000\nmax_reps = 20000\n\
             rel_se_target = 10.0\nslope_band = {band}\n"
        ),
    )
}

#[test]
fn poc_reports_and_checks_the_slope() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("o");
    let o = nlmcmc(&["poc", "--config", &small_poc(d.path(), "[-3.0, 0.0]"), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(out.join("poc.csv")).unwrap();
    assert!(csv.starts_with("n_particles,reps,bias,se,hist_bias,hist_se,partial\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(json(&out.join("summary.json"))["report"]["slope"].is_number());

    let out2 = d.path().join("o2");
    let o = nlmcmc(&["poc", "--config", &small_poc(d.path(), "[5.0, 6.0]"), "--out", out2.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert_eq!(json(&out2.join("manifest.json"))["status"], "check_failed");
}

#[test]
fn mmd_selftest_prints_a_table() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("o");
    let o = nlmcmc(&["mmd-selftest", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(table.matches("PASS").count(), 2, "{table}");
    assert_eq!(json(&out.join("summary.json"))["pass"], true);
}

#[test]
fn compare_dm_writes_both_variants() {
    let d = tempfile::tempdir().unwrap();
    let c = write(d.path(), "c.toml", &SMALL_RUN.replace("\"run2d\"", "\"compare-dm\""));
    let out = d.path().join("o");
    let o = nlmcmc(&["compare-dm", "--config", &c, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for v in ["fixed_n", "growing_history"] {
        assert!(out.join(v).join("trace.csv").exists());
        assert!(out.join(v).join("summary.json").exists());
    }
    let s = json(&out.join("summary.json"));
    assert_eq!(s["paired_final_mmd2"].as_array().unwrap().len(), 2);
    assert_eq!(s["auxiliary_gradient_calls"]["growing_history"], 40);
    // the history holds n_sim + 1 auxiliary points per seed
    let samples = fs::read_to_string(out.join("growing_history/final_samples.csv")).unwrap();
    assert_eq!(samples.lines().filter(|l| l.contains("auxiliary_history")).count(), 2 * 41);
}
