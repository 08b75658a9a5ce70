//! Planar pose-graph optimization: SE(2) primitives, the graph model with
//! its objectives, g2o I/O, a seeded Manhattan-world generator and sparse
//! Gauss-Newton / Levenberg-Marquardt solvers.

pub mod error;
pub mod g2o;
pub mod graph;
pub mod oracle;
pub mod rng;
pub mod se2;
pub mod solvers;
pub mod sparse;
pub mod synth;

pub use error::{G2oError, GraphError, Se2Error, SolveError};
pub use graph::{isotropic_information, EdgeSE2, PoseGraph, SolveState};
pub use rng::PortableRng;
pub use se2::{
    chordal_distance, chordal_from_angle, edge_angular_residual, retract, so2_exp, so2_log, wrap_angle, Pose2,
    Rotation2, TangentScalar,
};
pub use solvers::{gauss_newton, levenberg_marquardt, linearize, translation_lls, SolveReport};
pub use synth::{generate, EnvParams, Generated};
