use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_marsim"))
}

fn asset(p: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join(p)
}

fn stats(line: &str) -> std::collections::HashMap<String, String> {
    line.split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn run_writes_log_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    let out = bin()
        .args(["run", "--scenario"])
        .arg(asset("scenarios/harbor_survey.json"))
        .args(["--duration", "5", "--seed", "3", "--log"])
        .arg(&log)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = stats(String::from_utf8_lossy(&out.stdout).trim());
    assert_eq!(s["ticks"], "500");
    assert_eq!(s["requested"], "max");
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(s["log_hash"], marsim::kernel::log_hash(&text));
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["seed"], 3);
}

#[test]
fn config_errors_exit_2() {
    let out = bin().args(["run", "--scenario", "/nonexistent/scenario.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/scenario.json"));
    let out = bin().args(["run", "--scenario", "x.json", "--warp-drive"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["run", "--scenario", "x.json", "--time-scale", "fast"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("wild.json");
    let spec = asset("vehicles/torpedo_auv.json");
    std::fs::write(
        &scenario,
        serde_json::json!({
            "origin": {"lat": 58.0, "lon": 11.0}, "duration": 1,
            "vehicles": [{"id": "w", "spec": spec, "initial": {"position": {"north": 0, "east": 0, "depth": 5}, "velocity": [2e6, 0, 0, 0, 0, 0]}}]
        })
        .to_string(),
    )
    .unwrap();
    let out = bin().args(["run", "--scenario"]).arg(&scenario).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("'w'"));
}

#[test]
fn validate_shipped_assets() {
    let mut cmd = bin();
    cmd.arg("validate");
    for dir in ["scenarios", "vehicles", "episodes"] {
        for e in std::fs::read_dir(asset(dir)).unwrap() {
            cmd.arg(e.unwrap().path());
        }
    }
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).lines().all(|l| l.starts_with("ok ")));
}

#[test]
fn validate_reports_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"id": "m", "tasks": [{"type": "goto", "target": {"north": 0, "east": 0, "depth": 1}, "speed": 0}]}"#).unwrap();
    let out = bin().arg("validate").arg(asset("vehicles/quadrotor.json")).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ok kind=vehicle") && stdout.contains("invalid path="));
}

#[test]
fn bench_single_vehicle_is_fast() {
    let out = bin().args(["bench", "--vehicles", "1", "--seconds", "10", "--threads", "1"]).output().unwrap();
    assert!(out.status.success());
    let s = stats(String::from_utf8_lossy(&out.stdout).trim());
    assert_eq!(s["vehicles"], "1");
    assert!(s["rt_factor"].parse::<f64>().unwrap() > 10.0);
    assert!(s.contains_key("phase_vehicles") && s.contains_key("meets_target"));
}

#[test]
fn fit_and_replay_on_synthetic_log() {
    use marsim::dynamics::{RigidBodyState, Wrench};
    use marsim::environment::EnvironmentSample;
    use marsim::geomath::{Pose, Vec3};
    use marsim::sim2real::*;

    let spec_path = asset("vehicles/torpedo_auv.json");
    let spec = marsim::vehicles::load_vehicle_spec_file(&spec_path).unwrap();
    let truth = attach(&spec, ResidualModel::constant(&Wrench::new(Vec3::new(5.0, 0.0, 0.0), Vec3::zeros()), 3)).unwrap();
    let start = RigidBodyState::at_rest(Pose::from_euler(Vec3::new(0.0, 0.0, 10.0), 0.0, 0.0, 0.0), 3);
    let log = record_trajectory(&truth, &EnvironmentSample::still_water(), start, 0.01, 3000, |t: f64| {
        vec![15.0 + 10.0 * (0.4 * t).sin(), 0.1 * (0.23 * t).sin(), 0.05 * (0.31 * t).cos()]
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("real.jsonl");
    std::fs::write(&log_path, log.to_jsonl()).unwrap();
    let model = dir.path().join("model.json");

    let out = bin().arg("fit").arg("--log").arg(&log_path).arg("--spec").arg(&spec_path).arg("--out").arg(&model).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: FitReport = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.rms_after[0] < report.rms_before[0] / 10.0);

    let divergence = |extra: &[&Path]| -> f64 {
        let mut cmd = bin();
        cmd.arg("replay").arg("--log").arg(&log_path).arg("--spec").arg(&spec_path);
        if let Some(m) = extra.first() {
            cmd.arg("--residual").arg(m);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["max_position"].as_f64().unwrap()
    };
    let before = divergence(&[]);
    let after = divergence(&[&model]);
    assert!(after * 10.0 <= before, "{before} -> {after}");
}

fn spawn_serve(args: &[&str]) -> (std::process::Child, String) {
    let mut child = bin()
        .arg("serve")
        .args(args)
        .stderr(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    (child, line)
}

#[test]
fn serve_occupied_port_exits_2() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap().to_string();
    let out = bin()
        .args(["serve", "--scenario"])
        .arg(asset("scenarios/harbor_survey.json"))
        .args(["--bind", &addr])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[cfg(unix)]
#[test]
fn serve_closes_log_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("serve.jsonl");
    let scenario = asset("scenarios/harbor_survey.json");
    let (mut child, banner) = spawn_serve(&[
        "--scenario",
        scenario.to_str().unwrap(),
        "--bind",
        "127.0.0.1:0",
        "--time-scale",
        "20",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert!(banner.starts_with("serving ws://"), "{banner}");
    let addr = banner.trim().trim_start_matches("serving ws://").trim_end_matches("/ws").to_string();

    // Token comes from the scenario; a wrong one is refused, the right one accepted.
    let (mut ws, _) = tokio_tungstenite::tungstenite::connect(format!("ws://{addr}/ws")).unwrap();
    use tokio_tungstenite::tungstenite::Message;
    ws.send(Message::text(r#"{"type": "hello", "payload": {"token": "field-token"}, "seq": 1}"#)).unwrap();
    let reply: serde_json::Value = serde_json::from_str(ws.read().unwrap().to_text().unwrap()).unwrap();
    assert_eq!(reply["type"], "hello");
    drop(ws);

    std::thread::sleep(Duration::from_millis(300));
    let status = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let deadline = Instant::now() + Duration::from_secs(20);
    let code = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(Instant::now() < deadline, "serve did not exit");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(code.success());
    let mut stdout = String::new();
    std::io::Read::read_to_string(&mut child.stdout.take().unwrap(), &mut stdout).unwrap();
    let s = stats(stdout.trim());
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.ends_with('\n'));
    assert_eq!(s["log_hash"], marsim::kernel::log_hash(&text));
    assert!(s["ticks"].parse::<u64>().unwrap() > 0);
}

#[cfg(unix)]
#[test]
fn token_from_environment_overrides_scenario() {
    let scenario = asset("scenarios/harbor_survey.json");
    let mut child = bin()
        .args(["serve", "--scenario", scenario.to_str().unwrap(), "--bind", "127.0.0.1:0"])
        .env("MARSIM_TOKEN", "from-env")
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut banner).unwrap();
    let addr = banner.trim().trim_start_matches("serving ws://").trim_end_matches("/ws").to_string();
    use tokio_tungstenite::tungstenite::Message;
    let (mut ws, _) = tokio_tungstenite::tungstenite::connect(format!("ws://{addr}/ws")).unwrap();
    ws.send(Message::text(r#"{"type": "hello", "payload": {"token": "field-token"}}"#)).unwrap();
    let reply: serde_json::Value = serde_json::from_str(ws.read().unwrap().to_text().unwrap()).unwrap();
    assert_eq!(reply["payload"]["code"], "auth");
    ws.send(Message::text(r#"{"type": "hello", "payload": {"token": "from-env"}}"#)).unwrap();
    let reply: serde_json::Value = serde_json::from_str(ws.read().unwrap().to_text().unwrap()).unwrap();
    assert_eq!(reply["type"], "hello");
    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn serve_episode_mode() {
    let episode = asset("episodes/waypoint.json");
    let (mut child, banner) = spawn_serve(&["--episode", episode.to_str().unwrap(), "--envs", "2", "--bind", "127.0.0.1:0"]);
    let addr = banner.trim().trim_start_matches("serving episodes on tcp://").to_string();
    let mut client = marsim::rl::TrainerClient::connect(addr.as_str()).unwrap();
    assert_eq!(client.spec().unwrap().n_envs, 2);
    client.close().unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
}
