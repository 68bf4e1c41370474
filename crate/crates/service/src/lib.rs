//! HTTP service and robot deployment channel.

pub mod deploy;
pub mod http;
pub mod robot;

use std::path::PathBuf;

pub use deploy::{
    check_gate, deploy, send_frames, DeployError, DeployFrame, DeployOptions, DeployOutcome,
};
pub use http::{router, AppState, ServiceConfig};
pub use robot::{read_log, LogEntry, MockRobot, MockRobotConfig, MockRobotHandle};

pub const ENV_BIND_ADDR: &str = "RC_BIND_ADDR";
pub const ENV_SCENE_DIR: &str = "RC_SCENE_DIR";
pub const ENV_MODEL_FILE: &str = "RC_MODEL_FILE";
pub const ENV_ROBOT_ADDR: &str = "RC_ROBOT_ADDR";

pub const DEFAULT_BIND_ADDR: &str = "127.0.0.1:8080";

/// Serves the API on `listener` until the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Scene directory from the environment, defaulting to `./scenes`.
pub fn scene_dir_from_env() -> PathBuf {
    std::env::var_os(ENV_SCENE_DIR).map_or_else(|| PathBuf::from("scenes"), PathBuf::from)
}
