use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use marsim::geomath::Vec3;
use marsim::rl::*;
use serde_json::json;

fn asset(p: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join(p)
}

fn episode() -> Arc<EpisodeConfig> {
    Arc::new(load_episode(&asset("episodes/waypoint.json")).unwrap())
}

fn short_episode(max_steps: u64) -> Arc<EpisodeConfig> {
    let mut c = (*episode()).clone();
    c.max_steps = max_steps;
    Arc::new(c)
}

const FULL_AHEAD: [f64; 3] = [40.0, 0.0, 0.0];

/// Full thrust with proportional rudder on the observed heading error
/// (positive rudder turns to starboard).
fn steer(obs: &[f64]) -> [f64; 3] {
    [40.0, (1.0 * obs[7]).clamp(-0.35, 0.35), 0.0]
}

#[test]
fn spec_shapes() {
    let cfg = episode();
    let actions = cfg.action_spec();
    let names: Vec<&str> = actions.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(names, ["prop", "rudder", "elevator"]);
    assert_eq!(cfg.observation_names().len(), 9 + 3);
    let mut env = Env::new(cfg.clone());
    assert_eq!(env.reset(1).len(), cfg.observation_names().len());
    let t = env.step(&[0.0; 3]).unwrap();
    assert_eq!(t.obs.len(), cfg.observation_names().len());
}

#[test]
fn rewards_match_hand_computation() {
    let goal = Vec3::new(30.0, 40.0, 0.0);
    // 50 m away, then 45 m away.
    let r = waypoint_progress(&Vec3::zeros(), &Vec3::new(3.0, 4.0, 0.0), &goal);
    assert!((r - 5.0).abs() < 1e-12);
    assert_eq!(depth_keeping(&Vec3::new(0.0, 0.0, 7.5), 10.0), -2.5);
}

#[test]
fn reset_is_deterministic_per_seed() {
    let mut a = Env::new(episode());
    let mut b = Env::new(episode());
    assert_eq!(a.reset(11), b.reset(11));
    assert_ne!(a.reset(11), b.reset(12));
}

#[test]
fn idle_neutral_vehicle_earns_nothing() {
    let mut c = (*episode()).clone();
    c.randomize = Randomization::default();
    let mut env = Env::new(Arc::new(c));
    env.reset(0);
    for _ in 0..20 {
        let t = env.step(&[0.0; 3]).unwrap();
        assert!(t.reward.abs() < 1e-6, "{}", t.reward);
    }
}

#[test]
fn reaching_goal_ends_episode_with_success() {
    let mut env = Env::new(episode());
    let mut obs = env.reset(3);
    let mut last = None;
    for _ in 0..400 {
        let t = env.step(&steer(&obs)).unwrap();
        obs = t.obs.clone();
        if t.done {
            last = Some(t);
            break;
        }
    }
    let t = last.expect("episode ends");
    assert!(t.info.success && !t.info.truncated, "{:?}", t.info);
    assert!(t.info.goal_distance <= 4.0);
    assert!(matches!(env.step(&[0.0; 3]), Err(EnvError::EpisodeFinished)));
}

#[test]
fn max_steps_truncates() {
    let mut env = Env::new(short_episode(5));
    env.reset(0);
    let ts: Vec<Transition> = (0..5).map(|_| env.step(&[0.0; 3]).unwrap()).collect();
    assert!(ts[..4].iter().all(|t| !t.done));
    assert!(ts[4].done && ts[4].info.truncated);
    assert!((ts[4].info.t - 0.5).abs() < 1e-12);
}

#[test]
fn out_of_bounds_action_is_clamped_and_flagged() {
    let mut env = Env::new(episode());
    env.reset(0);
    let t = env.step(&[1000.0, 0.0, -5.0]).unwrap();
    assert!(t.info.clamped);
    assert_eq!(t.obs[9], 1.0);
    assert_eq!(t.obs[11], -1.0);
    assert!(!env.step(&[1.0, 0.0, 0.0]).unwrap().info.clamped);
}

#[test]
fn bad_action_leaves_state_unchanged() {
    let mut env = Env::new(episode());
    assert!(matches!(env.step(&[0.0; 3]), Err(EnvError::NotReset)));
    env.reset(0);
    env.step(&FULL_AHEAD).unwrap();
    let before = env.world().unwrap().snapshot();
    assert!(matches!(env.step(&[1.0]), Err(EnvError::ActionLength { expected: 3, got: 1 })));
    assert!(matches!(env.step(&[f64::NAN, 0.0, 0.0]), Err(EnvError::NonFiniteAction)));
    assert_eq!(env.world().unwrap().snapshot(), before);
}

fn rollout(env: &mut Env, seed: u64, steps: usize) -> Vec<Transition> {
    env.reset(seed);
    (0..steps)
        .map(|k| env.step(&[20.0 + k as f64, 0.1 * ((k as f64) * 0.3).sin(), -0.05]).unwrap())
        .collect()
}

#[test]
fn episodes_are_bit_exact() {
    let a = rollout(&mut Env::new(episode()), 9, 40);
    let b = rollout(&mut Env::new(episode()), 9, 40);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn batching_does_not_change_trajectories() {
    let n = 8;
    let mut vec = VecEnv::new(episode(), n);
    let seeds: Vec<u64> = (100..100 + n as u64).collect();
    vec.reset(&seeds).unwrap();
    let mut batched = Vec::new();
    for k in 0..30 {
        let actions: Vec<Vec<f64>> = (0..n).map(|i| vec![20.0 + k as f64, 0.02 * i as f64, -0.05]).collect();
        batched.push(vec.step(&actions).unwrap());
    }
    for i in [0, n - 1] {
        let mut solo = Env::new(episode());
        solo.reset(seeds[i]);
        for (k, step) in batched.iter().enumerate() {
            let t = solo.step(&[20.0 + k as f64, 0.02 * i as f64, -0.05]).unwrap();
            assert_eq!(t, step[i]);
        }
    }
}

#[test]
fn batch_rejects_before_touching_anything() {
    let mut vec = VecEnv::new(episode(), 3);
    vec.reset(&[1, 2, 3]).unwrap();
    let before: Vec<_> = vec.envs().iter().map(|e| e.world().unwrap().snapshot()).collect();
    let err = vec.step(&[vec![0.0; 3], vec![0.0; 2], vec![0.0; 3]]).unwrap_err();
    assert_eq!(err.len(), 1);
    assert_eq!(err[0].0, 1);
    assert!(vec.step(&[vec![0.0; 3]]).is_err());
    let after: Vec<_> = vec.envs().iter().map(|e| e.world().unwrap().snapshot()).collect();
    assert_eq!(before, after);
}

#[test]
fn episode_schema_errors() {
    let bad = r#"{"scenario": "../scenarios/rl_waypoint.json", "vehicle": "ghost", "reward": "waypoint_progress", "goal": {"north": 1, "east": 0, "depth": 1}}"#;
    assert!(matches!(parse_episode(bad, &asset("episodes")), Err(marsim::kernel::KernelError::Schema { .. })));
    let bad = r#"{"scenario": "../scenarios/rl_waypoint.json", "vehicle": "auv", "reward": "fun", "goal": {"north": 1, "east": 0, "depth": 1}}"#;
    assert!(parse_episode(bad, &asset("episodes")).is_err());
    let bad = r#"{"scenario": "../scenarios/rl_waypoint.json", "vehicle": "auv", "reward": "depth_keeping", "decision_interval": 0, "goal": {"north": 1, "east": 0, "depth": 1}}"#;
    assert!(parse_episode(bad, &asset("episodes")).is_err());
    assert!(load_episode(&asset("episodes/depth_keeping.json")).is_ok());
}

fn start_server(cfg: Arc<EpisodeConfig>, n: usize) -> (std::net::SocketAddr, Arc<AtomicBool>, std::thread::JoinHandle<()>) {
    let server = TrainerServer::bind("127.0.0.1:0", cfg, n).unwrap();
    let addr = server.local_addr();
    let stop = Arc::new(AtomicBool::new(false));
    let s = stop.clone();
    let handle = std::thread::spawn(move || server.serve(s).unwrap());
    (addr, stop, handle)
}

#[test]
fn protocol_round_trip() {
    let (addr, stop, handle) = start_server(short_episode(15), 2);
    let mut client = TrainerClient::connect(addr).unwrap();
    let spec = client.spec().unwrap();
    assert_eq!(spec.n_envs, 2);
    assert_eq!(spec.actions.len(), 3);
    assert_eq!(spec.observations.len(), 12);

    let raw = client.request_raw(b"{\"op\": \"dance\"}").unwrap();
    assert_eq!(raw["ok"], false);
    assert_eq!(raw["errors"][0]["code"], "parse");
    let raw = client.request_raw(b"\xff\xfe").unwrap();
    assert_eq!(raw["errors"][0]["code"], "parse");

    let obs = client.reset(&[5, 6]).unwrap();
    assert_eq!(obs.len(), 2);
    match client.step(&[vec![0.0; 3], vec![0.0; 2]]) {
        Err(ClientError::Remote(e)) => {
            assert_eq!(e[0].env, Some(1));
            assert_eq!(e[0].code, "action_length");
        }
        other => panic!("{other:?}"),
    }
    let mut steps = 0;
    loop {
        let r = client.step(&[FULL_AHEAD.to_vec(), FULL_AHEAD.to_vec()]).unwrap();
        steps += 1;
        if r.done.iter().all(|d| *d) {
            assert!(r.info[0].truncated);
            break;
        }
    }
    assert_eq!(steps, 15);
    match client.step(&[vec![0.0; 3], vec![0.0; 3]]) {
        Err(ClientError::Remote(e)) => assert!(e.iter().all(|e| e.code == "episode_finished")),
        other => panic!("{other:?}"),
    }
    client.close().unwrap();

    // Next trainer can connect after the first closes.
    let mut again = TrainerClient::connect(addr).unwrap();
    let raw = again.request_raw(json!({"op": "reset", "seed": 5}).to_string().as_bytes()).unwrap();
    assert_eq!(raw["obs"][0], serde_json::to_value(&obs[0]).unwrap());
    again.close().unwrap();
    stop.store(true, std::sync::atomic::Ordering::Relaxed);
    handle.join().unwrap();
}

#[test]
fn oversized_frame_reported_in_band() {
    let (addr, stop, handle) = start_server(short_episode(2), 1);
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    use std::io::Write;
    let len = (MAX_FRAME as u32 + 1).to_be_bytes();
    s.write_all(&len).unwrap();
    let junk = vec![b' '; MAX_FRAME + 1];
    s.write_all(&junk).unwrap();
    let reply = read_frame(&mut s).unwrap().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&reply).unwrap();
    assert_eq!(v["errors"][0]["code"], "frame_too_large");
    write_frame(&mut s, br#"{"op": "spec"}"#).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&read_frame(&mut s).unwrap().unwrap()).unwrap();
    assert_eq!(v["ok"], true);
    drop(s);
    stop.store(true, std::sync::atomic::Ordering::Relaxed);
    handle.join().unwrap();
}

#[test]
fn python_client_runs_episodes() {
    let Ok(out) = std::process::Command::new("python3").arg("--version").output() else {
        eprintln!("python3 not found; skipping");
        return;
    };
    assert!(out.status.success());
    let (addr, stop, handle) = start_server(short_episode(10), 2);
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../clients/python/rollout.py");
    let out = std::process::Command::new("python3")
        .arg(&script)
        .args(["--port", &addr.port().to_string(), "--episodes", "6"])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("episodes=6"), "{stdout}");
    stop.store(true, std::sync::atomic::Ordering::Relaxed);
    handle.join().unwrap();
}
