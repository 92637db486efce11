//! Stage 1: multimodal grid-cell embedding learning.
//!
//! Three graph-attention branches (POI, land use, geographic neighbours) and a
//! satellite projection branch are combined by inter-view self-attention,
//! mixed with a learned weight, fused across views and then refined by a
//! stack of self-attention layers over all cells.

mod losses;
mod model;
mod train;

use serde::{Deserialize, Serialize};

pub use losses::{count_loss, reconstruction_loss, sample_triplets, triplet_loss, Triplet};
pub use model::{
    cell_self_attention, Dropout, Forward, GatLayer, GridLearner, InterView, LossTerms, ViewFusion,
    ATTENTION_SLOPE,
};
pub use train::{train_cell_embeddings, write_loss_curve, EpochLosses, TrainedCells};

use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::graphs::{cosine_adjacency, neighbor_feature_vectorize, top_k_sparsify};
use crate::ingest::FeatureBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum View {
    Poi,
    Landuse,
    Neighbor,
    Satellite,
}

impl View {
    pub const ALL: [View; 4] = [View::Poi, View::Landuse, View::Neighbor, View::Satellite];

    pub fn tag(self) -> &'static str {
        match self {
            View::Poi => "p",
            View::Landuse => "l",
            View::Neighbor => "gn",
            View::Satellite => "si",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridLearnerConfig {
    pub d: usize,
    pub heads: usize,
    pub gat_layers: usize,
    pub fusion_layers: usize,
    pub dropout: f64,
    pub margin: f64,
    pub beta_loss: f64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Active views, in any order; duplicates are ignored.
    pub views: Vec<View>,
    /// Keep only the `k` strongest edges per cell in the feature graphs.
    pub top_k: Option<usize>,
}

impl Default for GridLearnerConfig {
    fn default() -> Self {
        Self {
            d: 144,
            heads: 4,
            gat_layers: 2,
            fusion_layers: 3,
            dropout: 0.1,
            margin: 1.0,
            beta_loss: 1.0,
            epochs: 2000,
            lr: 1e-4,
            weight_decay: 0.0,
            seed: 0,
            views: View::ALL.to_vec(),
            top_k: None,
        }
    }
}

impl GridLearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::invalid(format!("d = {} must be a positive multiple of heads = {}", self.d, self.heads)));
        }
        if self.gat_layers == 0 || self.fusion_layers == 0 {
            return Err(Error::invalid("gat_layers and fusion_layers must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.lr > 0.0) || self.epochs == 0 {
            return Err(Error::invalid("epochs and learning rate must be positive"));
        }
        if self.margin < 0.0 || !(self.beta_loss > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid("margin, beta_loss and weight_decay must be non-negative"));
        }
        if self.active_views().is_empty() {
            return Err(Error::invalid("at least one view must be active"));
        }
        Ok(())
    }

    /// Active views in canonical order.
    pub fn active_views(&self) -> Vec<View> {
        View::ALL.into_iter().filter(|v| self.views.contains(v)).collect()
    }
}

/// Everything stage 1 reads, aligned to grid cell ids.
#[derive(Clone, Debug)]
pub struct CellInputs {
    /// `m × 15` POI counts.
    pub poi: Mat,
    /// `m × 20` land-use counts.
    pub landuse: Mat,
    /// Frozen satellite backbone features, `m × k`.
    pub satellite: Mat,
    pub graph_poi: Mat,
    pub graph_landuse: Mat,
    pub graph_neighbor: Mat,
    /// Geographic neighbours of each cell.
    pub adjacency: Vec<Vec<usize>>,
}

impl CellInputs {
    pub fn build(bundle: &FeatureBundle, satellite: Mat, top_k: Option<usize>) -> Result<Self> {
        let m = bundle.len();
        if satellite.nrows() != m {
            return Err(Error::invalid(format!(
                "satellite features have {} rows for {m} cells",
                satellite.nrows()
            )));
        }
        let sparsify = |a: Mat| match top_k {
            Some(k) => top_k_sparsify(&a, k),
            None => a,
        };
        let graph_poi = sparsify(cosine_adjacency(&bundle.poi)?);
        let graph_landuse = sparsify(cosine_adjacency(&bundle.landuse)?);
        let graph_neighbor = sparsify(cosine_adjacency(&neighbor_feature_vectorize(&bundle.neighbors)?)?);
        let adjacency = bundle
            .neighbors
            .rows()
            .into_iter()
            .map(|r| r.iter().filter(|&&j| j >= 0).map(|&j| j as usize).collect())
            .collect();
        let inputs = Self {
            poi: bundle.poi.clone(),
            landuse: bundle.landuse.clone(),
            satellite,
            graph_poi,
            graph_landuse,
            graph_neighbor,
            adjacency,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn len(&self) -> usize {
        self.poi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if m == 0 {
            return Err(Error::invalid("no cells"));
        }
        for (name, a) in [
            ("graph_poi", &self.graph_poi),
            ("graph_landuse", &self.graph_landuse),
            ("graph_neighbor", &self.graph_neighbor),
        ] {
            if a.dim() != (m, m) {
                return Err(Error::invalid(format!("{name} has shape {:?}, expected ({m}, {m})", a.dim())));
            }
        }
        if self.landuse.nrows() != m || self.satellite.nrows() != m || self.adjacency.len() != m {
            return Err(Error::invalid("cell inputs disagree on the number of cells"));
        }
        if self.satellite.ncols() == 0 {
            return Err(Error::invalid("satellite features are empty"));
        }
        for (name, x) in [("poi", &self.poi), ("landuse", &self.landuse), ("satellite", &self.satellite)] {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} features contain non-finite values")));
            }
        }
        if self.adjacency.iter().flatten().any(|&j| j >= m) {
            return Err(Error::invalid("adjacency refers to unknown cells"));
        }
        Ok(())
    }

    /// Regression label of the satellite count head: total POIs per cell.
    pub fn poi_totals(&self) -> Vec<f64> {
        self.poi.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn graph(&self, view: View) -> Option<&Mat> {
        match view {
            View::Poi => Some(&self.graph_poi),
            View::Landuse => Some(&self.graph_landuse),
            View::Neighbor => Some(&self.graph_neighbor),
            View::Satellite => None,
        }
    }
}
