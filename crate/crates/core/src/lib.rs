pub mod blend_export;
pub mod bridge;
pub mod config;
pub mod depthproc;
pub mod diffusion;
pub mod geometry;
pub mod image;
pub mod ingest;
pub mod io;
pub mod matrix;
pub mod pipeline;
pub mod synthetic;
