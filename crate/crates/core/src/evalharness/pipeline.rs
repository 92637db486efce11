//! End-to-end evaluation: cell stage, region aggregation, per-fold enhancer
//! training and ridge scoring.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ablation::Variant;
use super::cv::{complement, gather, k_folds, MetricsReport, DEFAULT_FOLDS};
use super::ridge::Ridge;
use crate::aggregate::{aggregate_region_embeddings, Weighting};
use crate::autograd::Mat;
use crate::encoders::{encode_grouped, make_provider, Modality, ProviderConfig};
use crate::error::{Error, Result};
use crate::geometry::{HexGrid, OverlapMap, Region};
use crate::gridlearner::{train_cell_embeddings, CellInputs, GridLearnerConfig, View};
use crate::ingest::{FeatureBundle, SvRef, TaskDataset};
use crate::prompt::{
    region_image_matrix, select_region_images, train_prompt_enhancer, train_streetview_encoder, AuditedTargets,
    PromptConfig, PromptInputs, StreetViewConfig, SvHead,
};
use crate::rng::{streams, substream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub grid_learner: GridLearnerConfig,
    pub streetview: StreetViewConfig,
    pub prompt: PromptConfig,
    pub providers: ProviderConfig,
    pub lambda: f64,
    pub folds: usize,
    /// Tasks to evaluate; empty means all.
    pub tasks: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid_learner: GridLearnerConfig::default(),
            streetview: StreetViewConfig::default(),
            prompt: PromptConfig::default(),
            providers: ProviderConfig::default(),
            lambda: 1.0,
            folds: DEFAULT_FOLDS,
            tasks: Vec::new(),
        }
    }
}

impl PipelineConfig {
    /// Copy with every stage seeded from the root seed.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.grid_learner.seed = c.seed;
        c.streetview.seed = c.seed;
        c.prompt.seed = c.seed;
        c
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            lambda: self.lambda,
            folds: self.folds,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub lambda: f64,
    pub folds: usize,
    pub seed: u64,
}

/// Frozen-encoder features of every cell.
#[derive(Clone, Debug)]
pub struct EncodedCells {
    pub satellite: Mat,
    /// Indexed by modality tag (`text` or `text-mean`).
    pub text: BTreeMap<&'static str, Mat>,
    /// Raw street-view features, one row per entry of `sv_refs`.
    pub streetview: Mat,
    pub sv_refs: Vec<SvRef>,
}

impl EncodedCells {
    pub fn sv_cells(&self) -> Vec<usize> {
        self.sv_refs.iter().map(|r| r.cell).collect()
    }
}

pub fn encode_text(bundle: &FeatureBundle, providers: &ProviderConfig, modality: Modality) -> Result<Mat> {
    make_provider(providers, modality)?.encode_batch(&bundle.descriptions)
}

pub fn encode_cells(bundle: &FeatureBundle, providers: &ProviderConfig, text: &[Modality]) -> Result<EncodedCells> {
    let satellite = make_provider(providers, Modality::Satellite)?.encode_batch(&bundle.satellite_refs)?;
    let mut texts = BTreeMap::new();
    for &m in text {
        texts.insert(m.tag(), encode_text(bundle, providers, m)?);
    }
    let sv_refs: Vec<SvRef> = bundle.streetview_refs.iter().flatten().cloned().collect();
    let groups: Vec<Vec<String>> = vec![sv_refs.iter().map(|r| r.token.clone()).collect()];
    let streetview = encode_grouped(make_provider(providers, Modality::StreetView)?.as_ref(), &groups)?
        .pop()
        .expect("one group");
    Ok(EncodedCells {
        satellite,
        text: texts,
        streetview,
        sv_refs,
    })
}

/// A region formation with its overlap map and tasks.
#[derive(Clone, Debug)]
pub struct Formation {
    pub regions: Vec<Region>,
    pub overlap: OverlapMap,
    pub tasks: Vec<TaskDataset>,
}

impl Formation {
    pub fn new(regions: Vec<Region>, grid: &HexGrid, tasks: Vec<TaskDataset>) -> Self {
        let overlap = crate::geometry::build_overlap_map(&regions, grid);
        Self {
            regions,
            overlap,
            tasks,
        }
    }

    pub fn region_ids(&self) -> Vec<u64> {
        self.regions.iter().map(|r| r.id).collect()
    }
}

/// Cell-level artifacts reused by every region formation.
#[derive(Clone, Debug)]
pub struct CellStage {
    pub e: Mat,
    pub text: Mat,
    /// Street-view image embeddings after the (possibly identity) head.
    pub images: Mat,
    pub sv_refs: Vec<SvRef>,
}

pub fn build_prompt_inputs(
    cells: &CellStage,
    formation: &Formation,
    weighting: Weighting,
    images_per_region: usize,
    seed: u64,
) -> Result<PromptInputs> {
    let ids = formation.region_ids();
    let h = aggregate_region_embeddings(&cells.e, &formation.overlap, &ids, weighting)?.h;
    let text = aggregate_region_embeddings(&cells.text, &formation.overlap, &ids, weighting)?.h;
    let sel = select_region_images(&formation.regions, &cells.sv_refs, &formation.overlap, images_per_region, seed)?;
    Ok(PromptInputs {
        h,
        text: Some(text),
        images: Some(Arc::new(region_image_matrix(&cells.images, &sel))),
        images_per_region,
    })
}

#[derive(Clone, Debug)]
pub struct FoldedEval {
    pub report: MetricsReport,
    /// Reads of held-out targets by trained components; always 0.
    pub held_out_reads: usize,
    /// Enhancer training curve of every fold.
    pub curves: Vec<Vec<f64>>,
}

/// Cross-validated ridge on enhancer outputs. In every fold the enhancer
/// and the ridge model see the training folds' targets only.
pub fn evaluate_task(
    task_name: &str,
    inputs: &PromptInputs,
    y: &[f64],
    prompt: Option<&PromptConfig>,
    eval: &EvalConfig,
) -> Result<FoldedEval> {
    let n = y.len();
    if inputs.len() != n {
        return Err(Error::invalid(format!("{} regions but {n} targets", inputs.len())));
    }
    let folds = k_folds(n, eval.folds, eval.seed)?;
    let targets = AuditedTargets::new(y.to_vec());
    let mut pred = vec![0.0; n];
    let mut held_out_reads = 0;
    let mut curves = Vec::new();
    for fold in &folds {
        targets.reset();
        let train = complement(n, fold);
        let features = match prompt {
            Some(cfg) => {
                let t = train_prompt_enhancer(inputs, &targets, &train, cfg)?;
                curves.push(t.curve);
                t.h_hat
            }
            None => inputs.h.clone(),
        };
        let yt = targets.read_many(&train);
        let model = Ridge::fit(&gather(&features, &train), &yt, eval.lambda)?;
        held_out_reads += fold.iter().map(|&i| targets.reads_of(i)).sum::<usize>();
        for (&i, p) in fold.iter().zip(model.predict(&gather(&features, fold))?) {
            pred[i] = p;
        }
    }
    if held_out_reads > 0 {
        return Err(Error::invalid(format!("held-out targets were read {held_out_reads} times")));
    }
    Ok(FoldedEval {
        report: MetricsReport::from_predictions(task_name, y, pred, &folds)?,
        held_out_reads,
        curves,
    })
}

/// Gaussian region embeddings of width `dim`.
pub fn random_embeddings(n: usize, dim: usize, seed: u64) -> Mat {
    let mut rng = substream(seed, streams::BASELINE);
    Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(&mut rng))
}

/// Region-aggregated POI and land-use counts.
pub fn direct_features(bundle: &FeatureBundle, formation: &Formation) -> Result<Mat> {
    let x = concatenate(Axis(1), &[bundle.poi.view(), bundle.landuse.view()])
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(aggregate_region_embeddings(&x, &formation.overlap, &formation.region_ids(), Weighting::Overlap)?.h)
}

/// Everything needed to run variants on one city.
pub struct Experiment<'a> {
    pub grid: &'a HexGrid,
    pub bundle: &'a FeatureBundle,
    pub cfg: PipelineConfig,
    encoded: Option<EncodedCells>,
    cells: BTreeMap<Vec<View>, Mat>,
    heads: BTreeMap<bool, SvHead>,
    /// Number of stage-1 trainings performed.
    pub stage1_runs: usize,
}

impl<'a> Experiment<'a> {
    pub fn new(grid: &'a HexGrid, bundle: &'a FeatureBundle, cfg: &PipelineConfig) -> Self {
        Self {
            grid,
            bundle,
            cfg: cfg.seeded(),
            encoded: None,
            cells: BTreeMap::new(),
            heads: BTreeMap::new(),
            stage1_runs: 0,
        }
    }

    /// Use precomputed stage-1 embeddings for `views` instead of training.
    pub fn with_cell_embeddings(mut self, views: Vec<View>, e: Mat) -> Self {
        let key = View::ALL.into_iter().filter(|v| views.contains(v)).collect();
        self.cells.insert(key, e);
        self
    }

    pub fn encoded(&mut self) -> Result<&EncodedCells> {
        if self.encoded.is_none() {
            self.encoded = Some(encode_cells(self.bundle, &self.cfg.providers, &[Modality::Text])?);
        }
        Ok(self.encoded.as_ref().expect("just set"))
    }

    fn text(&mut self, modality: Modality) -> Result<Mat> {
        let (bundle, providers) = (self.bundle, self.cfg.providers.clone());
        let enc = self.encoded.as_mut().expect("encoded first");
        if !enc.text.contains_key(modality.tag()) {
            enc.text.insert(modality.tag(), encode_text(bundle, &providers, modality)?);
        }
        Ok(enc.text[modality.tag()].clone())
    }

    /// Stage-1 embeddings for a view set, trained on first use.
    pub fn cell_embeddings(&mut self, views: &[View]) -> Result<Mat> {
        let key: Vec<View> = View::ALL.into_iter().filter(|v| views.contains(v)).collect();
        if let Some(e) = self.cells.get(&key) {
            return Ok(e.clone());
        }
        let satellite = self.encoded()?.satellite.clone();
        let inputs = CellInputs::build(self.bundle, satellite, self.cfg.grid_learner.top_k)?;
        let cfg = GridLearnerConfig {
            views: key.clone(),
            ..self.cfg.grid_learner.clone()
        };
        let trained = train_cell_embeddings(&inputs, &cfg, None)?;
        self.stage1_runs += 1;
        self.cells.insert(key, trained.embeddings.clone());
        Ok(trained.embeddings)
    }

    /// The trained street-view head, or the identity when `contrastive` is off.
    pub fn sv_head(&mut self, contrastive: bool) -> Result<SvHead> {
        if let Some(h) = self.heads.get(&contrastive) {
            return Ok(h.clone());
        }
        let cfg = self.cfg.streetview.clone();
        let enc = self.encoded()?;
        let head = if contrastive {
            train_streetview_encoder(&enc.streetview, &enc.sv_cells(), &cfg)?.head
        } else {
            SvHead::identity(enc.streetview.ncols())
        };
        self.heads.insert(contrastive, head.clone());
        Ok(head)
    }

    pub fn cell_stage(&mut self, variant: Variant) -> Result<CellStage> {
        let s = variant.settings(&self.cfg);
        self.encoded()?;
        let e = self.cell_embeddings(&s.views)?;
        let text = self.text(s.text_modality)?;
        let head = self.sv_head(s.contrastive)?;
        let enc = self.encoded.as_ref().expect("encoded");
        Ok(CellStage {
            e,
            text,
            images: head.project(&enc.streetview),
            sv_refs: enc.sv_refs.clone(),
        })
    }

    /// Reports for every selected task of `formation` under `variant`.
    pub fn run(&mut self, variant: Variant, formation: &Formation) -> Result<Vec<MetricsReport>> {
        let s = variant.settings(&self.cfg);
        let cells = self.cell_stage(variant)?;
        let inputs = build_prompt_inputs(&cells, formation, s.weighting, self.cfg.prompt.images_per_region, self.cfg.seed)?;
        let ids = formation.region_ids();
        let mut out = Vec::new();
        for task in self.selected_tasks(formation) {
            let y = task.aligned(&ids)?;
            let r = evaluate_task(&task.task_name, &inputs, &y, s.prompt.as_ref(), &self.cfg.eval())?;
            out.push(r.report);
        }
        Ok(out)
    }

    pub fn selected_tasks<'f>(&self, formation: &'f Formation) -> Vec<&'f TaskDataset> {
        formation
            .tasks
            .iter()
            .filter(|t| self.cfg.tasks.is_empty() || self.cfg.tasks.contains(&t.task_name))
            .collect()
    }
}
