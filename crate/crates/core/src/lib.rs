pub mod adjacency;
pub mod encoders;
pub mod error;
pub mod interaction;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod nn;
pub mod relgeom;
pub mod scene;
pub mod scene_graph;
pub mod synth;
pub mod trainer;
pub mod topology;

pub use adjacency::BoolAdjacency;
pub use error::{Error, Result};
