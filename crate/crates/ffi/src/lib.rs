//! C interface to the simulator.
//!
//! Handles are opaque and owned by the caller until passed to the matching
//! `*_free`. Every function returns a [`MarsimStatus`]; on failure the message
//! is available from [`marsim_last_error`] on the same thread. A handle may be
//! moved between threads but must not be used from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use marsim::kernel::{self, Command, KernelError, Snapshot, World};
use marsim::rl::{self, Env, EnvError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Scenario, episode or snapshot rejected.
    Config = 3,
    /// Simulation failed while stepping.
    Runtime = 4,
    /// The output buffer was too small; the required size has been written.
    BufferTooSmall = 5,
    /// The episode ended; call `marsim_env_reset`.
    EpisodeDone = 6,
    Panic = 7,
}

/// Vehicle state in the local north-east-down frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MarsimVehicleState {
    pub position: [f64; 3],
    /// Body-to-NED rotation as w, x, y, z.
    pub orientation: [f64; 4],
    /// u, v, w, p, q, r in the body frame.
    pub nu: [f64; 6],
    pub grounded: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MarsimStepResult {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub truncated: bool,
    pub clamped: bool,
    pub step: u64,
    pub t: f64,
}

/// A running world.
pub struct MarsimWorld {
    world: World,
}

/// An episode environment.
pub struct MarsimEnv {
    env: Env,
    obs_dim: usize,
    action_dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MarsimStatus, String);

impl From<KernelError> for Failure {
    fn from(e: KernelError) -> Self {
        let status = match e {
            KernelError::Dynamics { .. } | KernelError::Channel(_) | KernelError::Log(_) => MarsimStatus::Runtime,
            _ => MarsimStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        let status = match e {
            EnvError::EpisodeFinished => MarsimStatus::EpisodeDone,
            EnvError::Kernel(_) => MarsimStatus::Runtime,
            _ => MarsimStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: MarsimStatus, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, message.into()))
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MarsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MarsimStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {message}"));
            MarsimStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(MarsimStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(MarsimStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().map_or_else(|| fail(MarsimStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(|| fail(MarsimStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return fail(MarsimStatus::NullPointer, format!("{name} is null"));
    }
    if len < need {
        return fail(MarsimStatus::BufferTooSmall, format!("{name} holds {len} values, need {need}"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Writes `text` plus a terminating nul into `buf`; `needed` receives the
/// size including the nul either way.
unsafe fn write_text(text: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Failure> {
    let size = text.len() + 1;
    if let Some(n) = needed.as_mut() {
        *n = size;
    }
    if buf.is_null() || len < size {
        return fail(MarsimStatus::BufferTooSmall, format!("buffer holds {len} bytes, need {size}"));
    }
    std::ptr::copy_nonoverlapping(text.as_ptr(), buf as *mut u8, text.len());
    *buf.add(text.len()) = 0;
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn marsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn marsim_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn marsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn new_world(config: kernel::ScenarioConfig, out: &mut *mut MarsimWorld) {
    let world = World::new(Arc::new(config));
    *out = Box::into_raw(Box::new(MarsimWorld { world }));
}

/// Loads a scenario file and creates a world at tick 0.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_load(path: *const c_char, out: *mut *mut MarsimWorld) -> MarsimStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = mut_arg(out, "out")?;
        new_world(kernel::load_scenario(Path::new(path))?, out);
        Ok(())
    })
}

/// Creates a world from scenario JSON; relative asset paths resolve against
/// `base_dir`, or the working directory when it is null.
///
/// # Safety
/// String arguments must be nul-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_from_json(
    json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut MarsimWorld,
) -> MarsimStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let base = if base_dir.is_null() { "." } else { str_arg(base_dir, "base_dir")? };
        let out = mut_arg(out, "out")?;
        new_world(kernel::parse_scenario(json, Path::new(base))?, out);
        Ok(())
    })
}

/// # Safety
/// `world` must come from a `marsim_world_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_free(world: *mut MarsimWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Advances `ticks` ticks. On a runtime failure the world stays at the failing tick.
///
/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_step(world: *mut MarsimWorld, ticks: u64) -> MarsimStatus {
    guard(|| {
        let w = mut_arg(world, "world")?;
        for _ in 0..ticks {
            w.world.tick()?;
        }
        Ok(())
    })
}

/// Simulation time in seconds and the tick counter.
///
/// # Safety
/// `world` must be a live handle; either output may be null.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_clock(world: *const MarsimWorld, time: *mut f64, tick: *mut u64) -> MarsimStatus {
    guard(|| {
        let w = ref_arg(world, "world")?;
        if let Some(t) = time.as_mut() {
            *t = w.world.time();
        }
        if let Some(k) = tick.as_mut() {
            *k = w.world.tick_count();
        }
        Ok(())
    })
}

/// # Safety
/// `world` and `count` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_vehicle_count(world: *const MarsimWorld, count: *mut usize) -> MarsimStatus {
    guard(|| {
        let w = ref_arg(world, "world")?;
        *mut_arg(count, "count")? = w.world.vehicles().len();
        Ok(())
    })
}

/// Copies the id of vehicle `index` into `buf`.
///
/// # Safety
/// `world` must be a live handle; `buf` must hold `len` bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_vehicle_id(
    world: *const MarsimWorld,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> MarsimStatus {
    guard(|| {
        let w = ref_arg(world, "world")?;
        let Some(v) = w.world.vehicles().get(index) else {
            return fail(MarsimStatus::InvalidArgument, format!("vehicle index {index} out of range"));
        };
        write_text(&v.id, buf, len, needed)
    })
}

/// # Safety
/// `world` must be a live handle, `id` nul-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_vehicle_state(
    world: *const MarsimWorld,
    id: *const c_char,
    out: *mut MarsimVehicleState,
) -> MarsimStatus {
    guard(|| {
        let w = ref_arg(world, "world")?;
        let id = str_arg(id, "id")?;
        let out = mut_arg(out, "out")?;
        let Some(v) = w.world.vehicle(id) else {
            return fail(MarsimStatus::InvalidArgument, format!("unknown vehicle '{id}'"));
        };
        let p = v.state.pose.position;
        let q = v.state.pose.orientation.quaternion();
        *out = MarsimVehicleState {
            position: [p.x, p.y, p.z],
            orientation: [q.w, q.i, q.j, q.k],
            nu: v.state.nu.to_array(),
            grounded: v.grounded,
        };
        Ok(())
    })
}

/// Queues a command given as JSON, e.g. `{"op": "abort", "vehicle": "auv1"}`.
/// It takes effect at the start of the next tick; the kernel reports
/// commands it cannot apply as events in the tick record.
///
/// # Safety
/// `world` must be a live handle and `command` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_submit(world: *mut MarsimWorld, command: *const c_char) -> MarsimStatus {
    guard(|| {
        let w = mut_arg(world, "world")?;
        let text = str_arg(command, "command")?;
        let cmd: Command = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => return fail(MarsimStatus::InvalidArgument, format!("invalid command: {e}")),
        };
        if w.world.vehicle(cmd.vehicle()).is_none() {
            return fail(MarsimStatus::InvalidArgument, format!("unknown vehicle '{}'", cmd.vehicle()));
        }
        w.world.submit(cmd);
        Ok(())
    })
}

/// Serializes the full world state as JSON into `buf`. Call with a null
/// buffer to learn the size through `needed`.
///
/// # Safety
/// `world` must be a live handle; `buf` must hold `len` bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_snapshot(
    world: *const MarsimWorld,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> MarsimStatus {
    guard(|| {
        let w = ref_arg(world, "world")?;
        write_text(&w.world.snapshot().to_json(), buf, len, needed)
    })
}

/// Replaces the world state with a snapshot taken from the same scenario.
/// The world is unchanged on failure.
///
/// # Safety
/// `world` must be a live handle and `snapshot` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_restore(world: *mut MarsimWorld, snapshot: *const c_char) -> MarsimStatus {
    guard(|| {
        let w = mut_arg(world, "world")?;
        let snap = Snapshot::from_json(str_arg(snapshot, "snapshot")?)?;
        let threads = w.world.config().threads;
        let mut restored = World::restore(w.world.config().clone(), snap)?;
        restored.set_threads(threads);
        w.world = restored;
        Ok(())
    })
}

/// Hex SHA-256 of all vehicle state (64 characters plus nul).
///
/// # Safety
/// `world` must be a live handle; `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn marsim_world_state_hash(world: *const MarsimWorld, buf: *mut c_char, len: usize) -> MarsimStatus {
    guard(|| {
        let w = ref_arg(world, "world")?;
        write_text(&kernel::state_hash(&w.world), buf, len, std::ptr::null_mut())
    })
}

/// Loads an episode file. Call `marsim_env_reset` before stepping.
///
/// # Safety
/// `path` must be nul-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn marsim_env_load(path: *const c_char, out: *mut *mut MarsimEnv) -> MarsimStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = mut_arg(out, "out")?;
        let cfg = Arc::new(rl::load_episode(Path::new(path))?);
        let env = MarsimEnv {
            obs_dim: cfg.observation_names().len(),
            action_dim: cfg.action_spec().len(),
            env: Env::new(cfg),
        };
        *out = Box::into_raw(Box::new(env));
        Ok(())
    })
}

/// # Safety
/// `env` must come from `marsim_env_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn marsim_env_free(env: *mut MarsimEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Observation and action vector lengths.
///
/// # Safety
/// `env` must be a live handle; either output may be null.
#[no_mangle]
pub unsafe extern "C" fn marsim_env_dims(env: *const MarsimEnv, obs_dim: *mut usize, action_dim: *mut usize) -> MarsimStatus {
    guard(|| {
        let e = ref_arg(env, "env")?;
        if let Some(o) = obs_dim.as_mut() {
            *o = e.obs_dim;
        }
        if let Some(a) = action_dim.as_mut() {
            *a = e.action_dim;
        }
        Ok(())
    })
}

/// Starts a new episode; the first observation is written to `obs`.
///
/// # Safety
/// `env` must be a live handle and `obs` must hold `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn marsim_env_reset(env: *mut MarsimEnv, seed: u64, obs: *mut f64, obs_len: usize) -> MarsimStatus {
    guard(|| {
        let e = mut_arg(env, "env")?;
        let out = out_slice(obs, obs_len, e.obs_dim, "obs")?;
        let o = e.env.reset(seed);
        out[..o.len()].copy_from_slice(&o);
        Ok(())
    })
}

/// Applies one action for a decision interval. Out-of-range actions are
/// clamped and flagged; a wrong length or non-finite value leaves the
/// episode untouched.
///
/// # Safety
/// `env` must be a live handle, `action` must hold `action_len` doubles,
/// `obs` must hold `obs_len` doubles and `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn marsim_env_step(
    env: *mut MarsimEnv,
    action: *const f64,
    action_len: usize,
    obs: *mut f64,
    obs_len: usize,
    result: *mut MarsimStepResult,
) -> MarsimStatus {
    guard(|| {
        let e = mut_arg(env, "env")?;
        if action.is_null() {
            return fail(MarsimStatus::NullPointer, "action is null");
        }
        let action = std::slice::from_raw_parts(action, action_len);
        let out = out_slice(obs, obs_len, e.obs_dim, "obs")?;
        let result = mut_arg(result, "result")?;
        let tr = e.env.step(action)?;
        out[..tr.obs.len()].copy_from_slice(&tr.obs);
        *result = MarsimStepResult {
            reward: tr.reward,
            done: tr.done,
            success: tr.info.success,
            truncated: tr.info.truncated,
            clamped: tr.info.clamped,
            step: tr.info.step,
            t: tr.info.t,
        };
        Ok(())
    })
}
