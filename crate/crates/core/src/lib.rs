//! Visuo-tactile perception toolkit: taxel sensor modeling, readout framing,
//! stream synchronization, kinematics, point-cloud processing, particle-filter
//! pose tracking and a contact simulator for ground truth.

pub mod episode;
pub mod frame_codec;
pub mod kdtree;
pub mod kinematics;
pub mod pipeline;
pub mod pointcloud;
pub mod pose;
pub mod pose_tracker;
pub mod sensor_model;
pub mod sim;
pub mod stream_sync;

pub use pose::PoseSE3;
