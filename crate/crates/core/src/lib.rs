//! Inverse elastostatics on tetrahedral meshes: recover a gravity-free rest
//! shape and clustered Young's moduli from surface observations taken under
//! known gravity directions.

pub mod elasticity;
pub mod linalg;
pub mod mesh;
pub mod step_limit;
pub mod forward;
pub mod pose;
pub mod synth;
pub mod sensitivity;
pub mod inverse;
