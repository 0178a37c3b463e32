use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_robust-synth"));
    c.env("RUST_LOG", "error");
    c
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: Option<&Path>) -> Output {
    let mut c = bin();
    c.args(args).arg("--config").arg(config);
    if let Some(o) = out {
        c.arg("--out").arg(o);
    }
    c.output().unwrap()
}

const TOY: &str = r#"
[system]
benchmark = "toy-1d"
tau = 0.2

[grid]
k_per_axis = 21

[run]
horizon = 4
initial_states = [[-0.8], [0.3]]

[cost]
target = [0.05]
"#;

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn synthesize_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY);
    let out = tmp.path().join("out");
    let o = run(&["synthesize"], &cfg, Some(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("policy.bin").exists());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("method,K,horizon,robust,initial_state,value"));
    assert!(lines[1].starts_with("robust,21,4,true,-0.8,"));
    assert!(lines[1].ends_with(",certified-by-user,satisfied"));
    for run in ["run_0", "run_1"] {
        let d = out.join(run);
        let traj = fs::read_to_string(d.join("trajectory.csv")).unwrap();
        assert!(traj.starts_with("t,y1,mode"));
        let control = fs::read_to_string(d.join("control.csv")).unwrap();
        assert!(control.starts_with("segment,start_t,mode,control_value"));
        assert_eq!(control.lines().count(), 5);
        assert!(fs::read_to_string(d.join("plot.gp")).unwrap().contains("multiplot"));
    }
    assert_eq!(stdout(&o), summary);
}

#[test]
fn summary_value_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY);
    let out = tmp.path().join("out");
    assert!(run(&["synthesize"], &cfg, Some(&out)).status.success());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let value: f64 = row[5].parse().unwrap();
    let traj = fs::read_to_string(out.join("run_0/trajectory.csv")).unwrap();
    let last: f64 = traj.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(value, (last - 0.05).abs());
}

#[test]
fn receding_writes_replan_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &TOY.replace("[[-0.8], [0.3]]", "[[-0.8]]"));
    let out = tmp.path().join("out");
    let o = run(&["receding"], &cfg, Some(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("replan_log.csv")).unwrap();
    assert!(log.starts_with("n,cell,horizon,mode"));
    assert_eq!(log.lines().count(), 5);
    assert!(stdout(&o).contains("\nreceding,21,4,false,-0.8,"));
}

#[test]
fn run_follows_configured_method() {
    let tmp = tempfile::tempdir().unwrap();
    let body = TOY.replace("horizon = 4", "horizon = 4\nmethod = \"receding\"");
    let cfg = write_config(tmp.path(), &body);
    let out = tmp.path().join("out");
    assert!(run(&["run"], &cfg, Some(&out)).status.success());
    assert!(out.join("run_1/replan_log.csv").exists());
}

#[test]
fn compare_emits_both_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY);
    let out = tmp.path().join("out");
    let o = run(&["compare"], &cfg, Some(&out));
    assert!(o.status.success());
    let text = stdout(&o);
    let methods: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["robust", "receding", "robust", "receding"]);
}

#[test]
fn zero_resolution_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &TOY.replace("k_per_axis = 21", "k_per_axis = 0"));
    let o = run(&["synthesize"], &cfg, Some(&tmp.path().join("out")));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[validation]"));
}

#[test]
fn unknown_benchmark_and_bad_toml_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &TOY.replace("toy-1d", "pendulum"));
    assert_eq!(run(&["synthesize"], &cfg, None).status.code(), Some(2));
    let cfg = write_config(tmp.path(), "[system\nbenchmark=");
    let o = run(&["synthesize"], &cfg, None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[format]"));
}

#[test]
fn expanding_constants_violate_hypothesis() {
    let tmp = tempfile::tempdir().unwrap();
    let consts = tmp.path().join("c.csv");
    fs::write(
        &consts,
        "mode,L,C,lambda,gamma,provenance\n0,1,2,0.5,0,certified-by-user\n1,1,1,0.5,0,certified-by-user\n2,1,2,0.5,0,certified-by-user\n",
    )
    .unwrap();
    let body = format!("{TOY}\n[constants]\nsource = \"file\"\npath = {:?}\n", consts.to_str().unwrap());
    let cfg = write_config(tmp.path(), &body);
    let out = tmp.path().join("out");
    let o = run(&["synthesize"], &cfg, Some(&out));
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[hypothesis-violation]"));
    let mut c = bin();
    let forced = c.args(["synthesize", "--force", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(forced.status.success());
    assert!(stdout(&forced).contains("violated(0;1;2)"));
}

#[test]
fn receding_out_of_box_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &TOY.replace("[[-0.8], [0.3]]", "[[1.5]]"));
    let o = run(&["receding"], &cfg, Some(&tmp.path().join("out")));
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[out-of-domain]"));
}

#[test]
fn bounds_prints_certificates_and_schedules() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{TOY}\n[disturbance]\nmagnitude = 0.1\n"));
    let o = run(&["bounds"], &cfg, None);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("mode,L,C,lambda,gamma,G,alpha,max_step,h_holds,substeps"));
    assert!(text.contains("\nmode,t,delta,delta_disturbed\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("1,")).count(), 1 + 11);
}

#[test]
fn estimate_constants_round_trips_through_file_source() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY);
    let consts = tmp.path().join("est.csv");
    let mut c = bin();
    let o = c
        .args(["estimate-constants", "--samples", "200", "--seed", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&consts)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&consts).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.ends_with("sampled-estimate")));
    let body = format!("{TOY}\n[constants]\nsource = \"file\"\npath = {:?}\n", consts.to_str().unwrap());
    let cfg = write_config(tmp.path(), &body);
    let o = run(&["synthesize"], &cfg, Some(&tmp.path().join("out")));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("sampled-estimate,"));
}

#[test]
fn oracle_agrees_and_respects_cap() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY);
    let o = run(&["oracle"], &cfg, None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.ends_with(",true")).count(), 21);
    let cfg = write_config(tmp.path(), &TOY.replace("horizon = 4", "horizon = 12"));
    let o = run(&["oracle"], &cfg, None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[enumeration-cap]"));
}

#[test]
fn cache_is_reused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY);
    let out = tmp.path().join("out");
    assert!(run(&["synthesize"], &cfg, Some(&out)).status.success());
    let first = fs::read_to_string(out.join("run_0/control.csv")).unwrap();
    assert!(fs::read_dir(out.join("cache")).unwrap().count() >= 1);
    assert!(run(&["synthesize"], &cfg, Some(&out)).status.success());
    assert_eq!(fs::read_to_string(out.join("run_0/control.csv")).unwrap(), first);
}
