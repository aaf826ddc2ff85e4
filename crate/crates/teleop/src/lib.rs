//! Live teleoperation over the safety filter: a virtual-clock session, its
//! JSON wire protocol, a WebSocket server and headless replays.

pub mod replay;
pub mod server;
pub mod session;
pub mod wire;

pub use replay::{hall_streams, replay, InputScript, ReplayReport, TimedInput, HALL_START};
pub use session::{stale_input_factor, stale_input_policy, InputRejected, SessionConfig, TeleopSession};
pub use wire::{Body, InputCommand, WireMessage};
pub use server::{spawn, ServerHandle};
