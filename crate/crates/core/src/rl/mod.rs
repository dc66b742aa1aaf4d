//! Episode environments and the trainer protocol.

mod env;
mod protocol;

pub use env::{
    depth_keeping, load_episode, parse_episode, waypoint_progress, ActionSpec, BatchErrors, Env, EnvError, EpisodeConfig,
    Randomization, RewardKind, StepInfo, Transition, VecEnv,
};
pub use protocol::{
    read_frame, write_frame, ClientError, RemoteAction, RemoteError, SpecReply, StepReply, TrainerClient, TrainerServer,
    TrainerService, MAX_FRAME,
};
