//! Urban region representation learning from fine-grained grid cells.
//!
//! The pipeline has three stages:
//!
//! 1. [`gridlearner`] learns an embedding per hexagonal grid cell from POI,
//!    land-use, neighbourhood and satellite views.
//! 2. [`aggregate`] turns cell embeddings into embeddings for any region
//!    formation by overlap-weighted summation, without retraining.
//! 3. [`prompt`] adapts region embeddings to a downstream task using cell text
//!    descriptions and street-view imagery.
//!
//! [`evalharness`] scores region embeddings with ten-fold ridge regression.

pub mod aggregate;
pub mod autograd;
pub mod config;
pub mod encoders;
pub mod error;
pub mod evalharness;
pub mod geometry;
pub mod graphs;
pub mod gridlearner;
pub mod ingest;
pub mod io;
pub mod nn;
pub mod prompt;
pub mod rng;

pub use autograd::Mat;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use evalharness::{Experiment, Formation, MetricsReport, PipelineConfig, Variant};
pub use geometry::{CellShape, HexGrid, OverlapMap, Point, Region};
pub use gridlearner::{CellInputs, GridLearnerConfig, View};
pub use ingest::{FeatureBundle, SynthParams, SyntheticCity, TaskDataset};
pub use prompt::{PromptConfig, PromptInputs};
