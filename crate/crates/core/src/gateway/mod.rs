//! Operator gateway.

mod hub;
mod link;
mod protocol;
mod server;
mod session;

pub use hub::{GatewayObserver, Hub, VehicleEntry};
pub use link::{ActiveLink, CompressedState, LinkError, LinkPolicy, COMPRESSED_STATE_SIZE};
pub use protocol::{topic, Channel, ErrorCode, Frame, FrameError, FrameType, TopicPattern};
pub use server::{GatewayError, ServeOptions, ServeOutcome, Server};
pub use session::Session;
