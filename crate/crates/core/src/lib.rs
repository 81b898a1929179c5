//! Navigation-aided hierarchical structure-from-motion for seafloor surveys.

pub mod geom;
pub mod global_recon;
pub mod io;
pub mod local_sfm;
pub mod matches;
pub mod pipeline;
pub mod pose_graph;
pub mod rng;
pub mod scene;
pub mod solver;
pub mod survey_sim;
pub mod tracks;
pub mod viewgraph;
pub mod weak_area;
