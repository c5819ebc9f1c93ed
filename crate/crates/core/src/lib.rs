//! Core library for turning indoor scenes into navigation datasets: scene
//! interchange, navigation graphs, voxel label fusion, triplet generation
//! and episode scoring.

pub mod bundle;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod navgraph;
pub mod pipeline;
pub mod scene;
pub mod seeds;
pub mod synth;
pub mod triplets;
pub mod vocab;
