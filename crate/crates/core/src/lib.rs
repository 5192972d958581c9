pub mod cli;
pub mod energy;
pub mod field;
pub mod ga3;
pub mod kinematics;
pub mod par;
pub mod scenario;
pub mod stereo;
pub mod surface;
pub mod tracks;
