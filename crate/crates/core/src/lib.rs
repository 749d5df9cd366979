//! Retinal tool navigation: rigid-body kinematics, DDP planning, eye geometry,
//! a discretized perception stand-in, closed-loop tasks and a session service.

pub mod config;
pub mod cost;
pub mod ddp;
pub mod eye;
pub mod se3;
pub mod oracle;
pub mod session;
pub mod task;
