use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::losses::sample_triplets;
use super::model::{Dropout, GridLearner};
use super::{CellInputs, GridLearnerConfig};
use crate::autograd::{Graph, Mat};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rng::{substream, streams};

/// Loss components of one epoch; `None` for inactive views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub poi: Option<f64>,
    pub landuse: Option<f64>,
    pub neighbor: Option<f64>,
    pub satellite: Option<f64>,
    pub total: f64,
}

impl EpochLosses {
    pub fn all_finite(&self) -> bool {
        [self.poi, self.landuse, self.neighbor, self.satellite]
            .into_iter()
            .flatten()
            .chain([self.total])
            .all(f64::is_finite)
    }
}

pub struct TrainedCells {
    pub model: GridLearner,
    /// Eval-mode embeddings after the last epoch.
    pub embeddings: Mat,
    pub curve: Vec<EpochLosses>,
}

/// Full-batch Adam on the summed objective.
///
/// When a loss or parameter turns non-finite the last finite parameters are
/// written to `checkpoint` (if given) and training stops with an error.
pub fn train_cell_embeddings(
    inputs: &CellInputs,
    cfg: &GridLearnerConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainedCells> {
    inputs.validate()?;
    let mut model = GridLearner::new(cfg, inputs.len(), inputs.satellite.ncols())?;
    let mut opt = Adam::new(&model.store, cfg.lr, cfg.weight_decay);
    let mut triplet_rng = substream(cfg.seed, streams::TRIPLET);
    let mut dropout_rng = substream(cfg.seed, streams::DROPOUT);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let triplets = sample_triplets(&inputs.adjacency, &mut triplet_rng)?;
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let mut dropout = Dropout {
            rate: cfg.dropout,
            rng: Some(&mut dropout_rng),
        };
        let (_, terms) = model.losses(&mut g, &p, inputs, &triplets, &mut dropout)?;
        let val = |v: Option<crate::autograd::Var>| v.map(|v| g.scalar_value(v));
        let row = EpochLosses {
            epoch,
            poi: val(terms.poi),
            landuse: val(terms.landuse),
            neighbor: val(terms.neighbor),
            satellite: val(terms.satellite),
            total: g.scalar_value(terms.total),
        };
        if !row.all_finite() {
            return Err(abort(&model, checkpoint, epoch, format!("loss components {row:?}")));
        }
        let mut grads = g.backward(terms.total);
        let grads = p.collect(&g, &mut grads);
        let before = model.store.clone();
        opt.step(&mut model.store, &grads);
        if !model.store.all_finite() {
            model.store = before;
            return Err(abort(&model, checkpoint, epoch, "parameters left the finite range".into()));
        }
        log::debug!("stage 1 epoch {epoch}: total {:.6}", row.total);
        curve.push(row);
    }
    let embeddings = model.embed(inputs)?;
    if embeddings.iter().any(|x| !x.is_finite()) {
        return Err(abort(&model, checkpoint, cfg.epochs, "non-finite cell embeddings".into()));
    }
    Ok(TrainedCells {
        model,
        embeddings,
        curve,
    })
}

fn abort(model: &GridLearner, checkpoint: Option<&Path>, epoch: usize, detail: String) -> Error {
    if let Some(path) = checkpoint {
        let written = serde_json::to_vec(&model.store.to_named())
            .map_err(Error::from)
            .and_then(|bytes| std::fs::write(path, bytes).map_err(Error::from));
        if let Err(e) = written {
            log::error!("could not write checkpoint {}: {e}", path.display());
        }
    }
    Error::NonFinite {
        stage: "stage 1",
        epoch,
        detail,
    }
}

/// CSV with columns `epoch,p,l,gn,si,total`; inactive terms are empty.
pub fn write_loss_curve<W: Write>(out: W, curve: &[EpochLosses]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "p", "l", "gn", "si", "total"])?;
    let f = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            f(r.poi),
            f(r.landuse),
            f(r.neighbor),
            f(r.satellite),
            format!("{:?}", r.total),
        ])?;
    }
    w.flush()?;
    Ok(())
}
