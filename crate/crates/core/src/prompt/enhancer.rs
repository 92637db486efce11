use std::cell::Cell;
use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};

use super::svalign::SvAlign;
use super::text::TextAlign;
use super::{PromptConfig, SvMode, TextMode};
use crate::autograd::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::nn::{Adam, Binding, Mlp, ParamStore};
use crate::rng::{streams, substream};

/// Task targets that count every read, so evaluation can prove that held-out
/// targets never reach a trained component.
#[derive(Debug)]
pub struct AuditedTargets {
    values: Vec<f64>,
    reads: Vec<Cell<usize>>,
}

impl AuditedTargets {
    pub fn new(values: Vec<f64>) -> Self {
        let reads = values.iter().map(|_| Cell::new(0)).collect();
        Self { values, reads }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn read(&self, i: usize) -> f64 {
        self.reads[i].set(self.reads[i].get() + 1);
        self.values[i]
    }

    pub fn read_many(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.read(i)).collect()
    }

    pub fn reads_of(&self, i: usize) -> usize {
        self.reads[i].get()
    }

    pub fn reset(&self) {
        self.reads.iter().for_each(|c| c.set(0));
    }
}

/// Region-level inputs of the enhancer, rows aligned by region.
#[derive(Clone, Debug)]
pub struct PromptInputs {
    /// `n × d` region embeddings.
    pub h: Mat,
    /// `n × d_llm` aggregated text embeddings.
    pub text: Option<Mat>,
    /// Sampled image embeddings, `n·x × d_img`, region-major.
    /// Shared so training epochs do not copy it.
    pub images: Option<Arc<Mat>>,
    pub images_per_region: usize,
}

impl PromptInputs {
    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, cfg: &PromptConfig) -> Result<()> {
        self.check_shapes(cfg)?;
        let all = self.h.iter().chain(self.text.iter().flatten()).chain(self.images.iter().flat_map(|u| u.iter()));
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("enhancer inputs contain non-finite values"));
        }
        Ok(())
    }

    fn check_shapes(&self, cfg: &PromptConfig) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::invalid("no regions"));
        }
        if cfg.text != TextMode::Off {
            let t = self.text.as_ref().ok_or_else(|| Error::invalid("text embeddings required"))?;
            if t.nrows() != n {
                return Err(Error::invalid(format!("{} text rows for {n} regions", t.nrows())));
            }
        }
        if cfg.streetview != SvMode::Off {
            let u = self.images.as_ref().ok_or_else(|| Error::invalid("street-view images required"))?;
            if self.images_per_region == 0 || u.nrows() != n * self.images_per_region {
                return Err(Error::invalid(format!(
                    "{} image rows for {n} regions × {} images",
                    u.nrows(),
                    self.images_per_region
                )));
            }
        }
        Ok(())
    }

    /// Mean image embedding of every region, `n × d_img`.
    pub fn mean_images(&self) -> Option<Mat> {
        let u = self.images.as_ref()?;
        let x = self.images_per_region;
        let n = u.nrows() / x;
        let mut out = Array2::zeros((n, u.ncols()));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            row.assign(&u.slice(ndarray::s![i * x..(i + 1) * x, ..]).mean_axis(Axis(0)).expect("x > 0"));
        }
        Some(out)
    }
}

/// `h ‖ h_text ‖ h_sv`.
pub fn final_embedding(h: &Mat, h_text: &Mat, h_sv: &Mat) -> Result<Mat> {
    concatenate(Axis(1), &[h.view(), h_text.view(), h_sv.view()])
        .map_err(|e| Error::invalid(format!("cannot concatenate embeddings: {e}")))
}

/// Mean squared error between `pred` (`k×1`) and `y`.
pub fn mse_loss(g: &mut Graph, pred: Var, y: &[f64]) -> Var {
    let t = g.constant(Array2::from_shape_vec((y.len(), 1), y.to_vec()).expect("target shape"));
    let r = g.sub(pred, t);
    let s = g.square(r);
    g.mean_all(s)
}

pub struct EnhancerForward {
    /// `n × (d + d_text + d)` with the default modes.
    pub h_hat: Var,
    pub yhat: Var,
    pub softmaxes: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct PromptEnhancer {
    pub cfg: PromptConfig,
    pub store: ParamStore,
    text: Option<TextAlign>,
    sv: Option<SvAlign>,
    head: Mlp,
    pub output_dim: usize,
}

impl PromptEnhancer {
    pub fn new(cfg: &PromptConfig, inputs: &PromptInputs) -> Result<Self> {
        cfg.validate()?;
        inputs.validate(cfg)?;
        let d = inputs.h.ncols();
        let mut rng = substream(cfg.seed, streams::PROMPT_INIT);
        let mut store = ParamStore::new();
        let mut width = d;
        let text = match cfg.text {
            TextMode::Align => {
                let d_llm = inputs.text.as_ref().expect("validated").ncols();
                width += cfg.d_text;
                Some(TextAlign::new(&mut store, d, d_llm, cfg.d_key, cfg.d_text, &mut rng))
            }
            TextMode::Concat => {
                width += inputs.text.as_ref().expect("validated").ncols();
                None
            }
            TextMode::Off => None,
        };
        let sv = match cfg.streetview {
            SvMode::Align => {
                let d_img = inputs.images.as_ref().expect("validated").ncols();
                width += d;
                Some(SvAlign::new(&mut store, d, d_img, cfg.d_proj, &mut rng))
            }
            SvMode::Mean => {
                width += inputs.images.as_ref().expect("validated").ncols();
                None
            }
            SvMode::Off => None,
        };
        let head = Mlp::new(&mut store, "task_head", &[width, cfg.hidden, 1], &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            store,
            text,
            sv,
            head,
            output_dim: width,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, inputs: &PromptInputs) -> Result<EnhancerForward> {
        inputs.check_shapes(&self.cfg)?;
        let mut softmaxes = Vec::new();
        let h = g.constant(inputs.h.clone());
        let mut parts = vec![h];
        match self.cfg.text {
            TextMode::Align => {
                let t = g.constant(inputs.text.clone().expect("validated"));
                let out = self.text.as_ref().expect("text branch").forward(g, p, h, t, &mut softmaxes);
                parts.push(out);
            }
            TextMode::Concat => parts.push(g.constant(inputs.text.clone().expect("validated"))),
            TextMode::Off => {}
        }
        match self.cfg.streetview {
            SvMode::Align => {
                let u = inputs.images.as_ref().expect("validated");
                let sv = self.sv.as_ref().expect("street-view branch");
                parts.push(sv.forward(g, p, h, u, &mut softmaxes));
            }
            SvMode::Mean => parts.push(g.constant(inputs.mean_images().expect("validated"))),
            SvMode::Off => {}
        }
        let h_hat = if parts.len() == 1 { h } else { g.concat_cols(&parts) };
        let yhat = self.head.forward(g, p, h_hat);
        Ok(EnhancerForward { h_hat, yhat, softmaxes })
    }

    /// MSE on the rows `train` against already standardized targets.
    pub fn loss(&self, g: &mut Graph, p: &Binding, inputs: &PromptInputs, train: &[usize], y: &[f64]) -> Result<(EnhancerForward, Var)> {
        let fwd = self.forward(g, p, inputs)?;
        let pred = g.gather_rows(fwd.yhat, train);
        let loss = mse_loss(g, pred, y);
        Ok((fwd, loss))
    }

    pub fn loss_and_grads(&self, inputs: &PromptInputs, train: &[usize], y: &[f64]) -> Result<(f64, Vec<Mat>)> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let (_, loss) = self.loss(&mut g, &p, inputs, train, y)?;
        let mut grads = g.backward(loss);
        Ok((g.scalar_value(loss), p.collect(&g, &mut grads)))
    }

    pub fn loss_value(&self, inputs: &PromptInputs, train: &[usize], y: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let (_, loss) = self.loss(&mut g, &p, inputs, train, y)?;
        Ok(g.scalar_value(loss))
    }

    /// Final embeddings of every region.
    pub fn embed(&self, inputs: &PromptInputs) -> Result<Mat> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let fwd = self.forward(&mut g, &p, inputs)?;
        Ok(g.value(fwd.h_hat).clone())
    }
}

pub struct TrainedEnhancer {
    pub model: PromptEnhancer,
    /// Final embeddings of all regions.
    pub h_hat: Mat,
    /// Training MSE per epoch (standardized targets).
    pub curve: Vec<f64>,
}

/// Fit the enhancer on the regions in `train` only. Targets are
/// standardized with the training mean and deviation.
pub fn train_prompt_enhancer(
    inputs: &PromptInputs,
    targets: &AuditedTargets,
    train: &[usize],
    cfg: &PromptConfig,
) -> Result<TrainedEnhancer> {
    let n = inputs.len();
    if targets.len() != n {
        return Err(Error::invalid(format!("{} targets for {n} regions", targets.len())));
    }
    if train.is_empty() || train.iter().any(|&i| i >= n) {
        return Err(Error::invalid("training indices are empty or out of range"));
    }
    let y = targets.read_many(train);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("targets contain non-finite values"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let ys: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();

    let mut model = PromptEnhancer::new(cfg, inputs)?;
    let mut opt = Adam::new(&model.store, cfg.lr, cfg.weight_decay);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let (_, loss) = model.loss(&mut g, &p, inputs, train, &ys)?;
        let value = g.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                stage: "prompt enhancer",
                epoch,
                detail: format!("training MSE = {value}"),
            });
        }
        let mut grads = g.backward(loss);
        let grads = p.collect(&g, &mut grads);
        opt.step(&mut model.store, &grads);
        curve.push(value);
    }
    let h_hat = model.embed(inputs)?;
    Ok(TrainedEnhancer { model, h_hat, curve })
}
