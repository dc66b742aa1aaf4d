use std::ffi::{CStr, CString};
use std::ptr;

use marsim_ffi::*;

fn asset(p: &str) -> CString {
    CString::new(format!("{}/../core/assets/{p}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn last_error() -> String {
    let p = marsim_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(p: &str) -> *mut MarsimWorld {
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { marsim_world_load(asset(p).as_ptr(), &mut w) }, MarsimStatus::Ok);
    w
}

fn hash(w: *const MarsimWorld) -> String {
    let mut buf = [0 as std::ffi::c_char; 65];
    assert_eq!(unsafe { marsim_world_state_hash(w, buf.as_mut_ptr(), buf.len()) }, MarsimStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string()
}

#[test]
fn missing_scenario_sets_last_error() {
    marsim_clear_error();
    assert!(marsim_last_error().is_null());
    let mut w = ptr::null_mut();
    let path = CString::new("/nope/scenario.json").unwrap();
    assert_eq!(unsafe { marsim_world_load(path.as_ptr(), &mut w) }, MarsimStatus::Config);
    assert!(w.is_null());
    assert!(last_error().contains("/nope/scenario.json"));
    assert_eq!(unsafe { marsim_world_load(ptr::null(), &mut w) }, MarsimStatus::NullPointer);
    assert!(last_error().contains("path"));
}

#[test]
fn errors_are_per_thread() {
    let mut w = ptr::null_mut();
    let path = CString::new("/nope/a.json").unwrap();
    unsafe { marsim_world_load(path.as_ptr(), &mut w) };
    std::thread::spawn(|| assert!(marsim_last_error().is_null())).join().unwrap();
    assert!(!marsim_last_error().is_null());
}

#[test]
fn step_and_read_state() {
    let w = load("scenarios/harbor_survey.json");
    let mut n = 0usize;
    assert_eq!(unsafe { marsim_world_vehicle_count(w, &mut n) }, MarsimStatus::Ok);
    assert!(n > 0);
    let mut needed = 0usize;
    assert_eq!(
        unsafe { marsim_world_vehicle_id(w, 0, ptr::null_mut(), 0, &mut needed) },
        MarsimStatus::BufferTooSmall
    );
    let mut id = vec![0 as std::ffi::c_char; needed];
    assert_eq!(unsafe { marsim_world_vehicle_id(w, 0, id.as_mut_ptr(), id.len(), &mut needed) }, MarsimStatus::Ok);

    assert_eq!(unsafe { marsim_world_step(w, 100) }, MarsimStatus::Ok);
    let (mut t, mut tick) = (0.0, 0u64);
    assert_eq!(unsafe { marsim_world_clock(w, &mut t, &mut tick) }, MarsimStatus::Ok);
    assert_eq!(tick, 100);
    assert!((t - 1.0).abs() < 1e-12);

    let mut s = MarsimVehicleState::default();
    assert_eq!(unsafe { marsim_world_vehicle_state(w, id.as_ptr(), &mut s) }, MarsimStatus::Ok);
    let norm: f64 = s.orientation.iter().map(|x| x * x).sum();
    assert!((norm - 1.0).abs() < 1e-9);
    assert!(s.position.iter().all(|x| x.is_finite()));

    let bad = CString::new("ghost").unwrap();
    assert_eq!(unsafe { marsim_world_vehicle_state(w, bad.as_ptr(), &mut s) }, MarsimStatus::InvalidArgument);
    unsafe { marsim_world_free(w) };
}

#[test]
fn snapshot_restore_reproduces_trajectory() {
    let w = load("scenarios/harbor_survey.json");
    unsafe { marsim_world_step(w, 200) };
    let mut needed = 0usize;
    unsafe { marsim_world_snapshot(w, ptr::null_mut(), 0, &mut needed) };
    let mut buf = vec![0 as std::ffi::c_char; needed];
    assert_eq!(unsafe { marsim_world_snapshot(w, buf.as_mut_ptr(), buf.len(), &mut needed) }, MarsimStatus::Ok);
    unsafe { marsim_world_step(w, 300) };
    let first = hash(w);
    assert_eq!(unsafe { marsim_world_restore(w, buf.as_ptr()) }, MarsimStatus::Ok);
    unsafe { marsim_world_step(w, 300) };
    assert_eq!(hash(w), first);

    let garbage = CString::new(r#"{"version": 99}"#).unwrap();
    assert_eq!(unsafe { marsim_world_restore(w, garbage.as_ptr()) }, MarsimStatus::Config);
    assert!(last_error().contains("99"));
    assert_eq!(hash(w), first);
    unsafe { marsim_world_free(w) };
}

#[test]
fn submit_validates_json() {
    let w = load("scenarios/harbor_survey.json");
    let mut id = [0 as std::ffi::c_char; 64];
    unsafe { marsim_world_vehicle_id(w, 0, id.as_mut_ptr(), id.len(), ptr::null_mut()) };
    let id = unsafe { CStr::from_ptr(id.as_ptr()) }.to_str().unwrap().to_string();
    let ok = CString::new(format!(r#"{{"op": "abort", "vehicle": "{id}"}}"#)).unwrap();
    assert_eq!(unsafe { marsim_world_submit(w, ok.as_ptr()) }, MarsimStatus::Ok);
    let unknown = CString::new(r#"{"op": "abort", "vehicle": "nobody"}"#).unwrap();
    assert_eq!(unsafe { marsim_world_submit(w, unknown.as_ptr()) }, MarsimStatus::InvalidArgument);
    let junk = CString::new("{").unwrap();
    assert_eq!(unsafe { marsim_world_submit(w, junk.as_ptr()) }, MarsimStatus::InvalidArgument);
    assert!(last_error().starts_with("invalid command"));
    unsafe { marsim_world_free(w) };
}

#[test]
fn env_episode_round_trip() {
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { marsim_env_load(asset("episodes/waypoint.json").as_ptr(), &mut e) }, MarsimStatus::Ok);
    let (mut od, mut ad) = (0usize, 0usize);
    unsafe { marsim_env_dims(e, &mut od, &mut ad) };
    let mut obs = vec![0.0; od];
    let mut r = MarsimStepResult::default();
    let action = vec![0.0; ad];
    assert_eq!(
        unsafe { marsim_env_step(e, action.as_ptr(), ad, obs.as_mut_ptr(), od, &mut r) },
        MarsimStatus::InvalidArgument
    );
    assert_eq!(unsafe { marsim_env_reset(e, 7, obs.as_mut_ptr(), od - 1) }, MarsimStatus::BufferTooSmall);
    assert_eq!(unsafe { marsim_env_reset(e, 7, obs.as_mut_ptr(), od) }, MarsimStatus::Ok);

    let mut big = vec![0.0; ad];
    big[0] = 1e9;
    assert_eq!(unsafe { marsim_env_step(e, big.as_ptr(), ad, obs.as_mut_ptr(), od, &mut r) }, MarsimStatus::Ok);
    assert!(r.clamped);
    assert_eq!(r.step, 1);
    assert_eq!(
        unsafe { marsim_env_step(e, action.as_ptr(), ad - 1, obs.as_mut_ptr(), od, &mut r) },
        MarsimStatus::InvalidArgument
    );
    let mut steps = 1;
    while !r.done {
        assert_eq!(unsafe { marsim_env_step(e, action.as_ptr(), ad, obs.as_mut_ptr(), od, &mut r) }, MarsimStatus::Ok);
        steps += 1;
    }
    assert!(steps <= 400);
    assert_eq!(
        unsafe { marsim_env_step(e, action.as_ptr(), ad, obs.as_mut_ptr(), od, &mut r) },
        MarsimStatus::EpisodeDone
    );
    unsafe { marsim_env_free(e) };
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/marsim.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
}
