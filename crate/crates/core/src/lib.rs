//! Tree point-cloud preprocessing, normal estimation, georeferencing,
//! multi-view projection rendering and classification evaluation.

pub mod cloud;
pub mod cloud_io;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod georeg;
pub mod normals;
pub mod pipeline;
pub mod preprocess;
pub mod projection;
pub mod spatial;
pub mod synthetic;

pub use cloud::{Point, PointCloud, Species, TreeSegment};
pub use error::{Error, Result};
pub use georeg::{fit_rigid, mutual_nn_match, RigidFit, RigidTransform};
pub use normals::{estimate_normals, orient_outward, NormalParams};
pub use preprocess::{estimate_trunk, min_spacing_subsample, sor_filter, SorParams, TrunkEstimate};
pub use projection::{render_tree, Coloring, DepthRule, ProjectionImage, RenderConfig};
