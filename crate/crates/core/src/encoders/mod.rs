//! Embedding providers for satellite images, street-view images and cell
//! descriptions.
//!
//! Providers are frozen and deterministic. [`StubProvider`] is an offline
//! stand-in for tests and synthetic runs; [`RemoteProvider`] talks to a model
//! server over HTTP.

mod remote;
mod stub;

use serde::{Deserialize, Serialize};

pub use remote::{RemoteConfig, RemoteProvider};
pub use stub::{fnv1a64, StubProvider, SEED_MIX};

use crate::autograd::Mat;
use crate::error::{Error, Result};

pub const SATELLITE_DIM: usize = 512;
pub const STREETVIEW_DIM: usize = 768;
pub const TEXT_DIM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Satellite,
    StreetView,
    /// Last-token embedding of the last hidden layer.
    Text,
    /// Mean of all token embeddings of the last hidden layer.
    TextMean,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Satellite => "satellite",
            Modality::StreetView => "streetview",
            Modality::Text => "text",
            Modality::TextMean => "text-mean",
        }
    }

    pub fn default_dim(self) -> usize {
        match self {
            Modality::Satellite => SATELLITE_DIM,
            Modality::StreetView => STREETVIEW_DIM,
            Modality::Text | Modality::TextMean => TEXT_DIM,
        }
    }

    /// Dimension checks applied when a provider is constructed.
    pub fn check_dim(self, dim: usize) -> Result<()> {
        let ok = match self {
            Modality::Satellite => dim > 0,
            _ => dim == self.default_dim(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{} provider must have dimension {}, got {dim}",
                self.tag(),
                self.default_dim()
            )))
        }
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn modality(&self) -> Modality;

    fn output_dim(&self) -> usize;

    /// One row per item, in input order.
    fn encode_batch(&self, items: &[String]) -> Result<Mat>;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Stub,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub stub_seed: u64,
    pub timeout_secs: f64,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retries: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Stub,
            endpoint: "http://127.0.0.1:8080".into(),
            stub_seed: 0,
            timeout_secs: 30.0,
            batch_size: 64,
            max_in_flight: 4,
            retries: 3,
        }
    }
}

pub fn make_provider(cfg: &ProviderConfig, modality: Modality) -> Result<Box<dyn EmbeddingProvider>> {
    Ok(match cfg.kind {
        ProviderKind::Stub => Box::new(StubProvider::new(modality, cfg.stub_seed)),
        ProviderKind::Remote => Box::new(RemoteProvider::new(RemoteConfig {
            endpoint: cfg.endpoint.clone(),
            modality,
            dim: modality.default_dim(),
            timeout: std::time::Duration::from_secs_f64(cfg.timeout_secs),
            batch_size: cfg.batch_size,
            max_in_flight: cfg.max_in_flight,
            retries: cfg.retries,
        })?),
    })
}

/// Encode every cell's street-view refs and return per-cell matrices.
pub fn encode_grouped(provider: &dyn EmbeddingProvider, groups: &[Vec<String>]) -> Result<Vec<Mat>> {
    let flat: Vec<String> = groups.iter().flatten().cloned().collect();
    let all = provider.encode_batch(&flat)?;
    let mut out = Vec::with_capacity(groups.len());
    let mut start = 0;
    for g in groups {
        out.push(all.slice(ndarray::s![start..start + g.len(), ..]).to_owned());
        start += g.len();
    }
    Ok(out)
}
