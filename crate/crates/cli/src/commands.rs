use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flexireg_core::aggregate::{aggregate_region_embeddings, Weighting};
use flexireg_core::encoders::Modality;
use flexireg_core::evalharness::{
    build_prompt_inputs, direct_features, encode_cells, markdown, random_embeddings, ridge_cv, write_csv,
    Experiment, Formation, ReportRow, Variant,
};
use flexireg_core::geometry::{build_overlap_map, merge_regions_with_members, MultiPolygon, Polygon};
use flexireg_core::gridlearner::{train_cell_embeddings, write_loss_curve, CellInputs};
use flexireg_core::ingest::loaders::{load_regions, regions_geojson};
use flexireg_core::ingest::{build_feature_bundle, generate_synthetic_city, merge_task_targets, FeatureBundle};
use flexireg_core::io::{load_city, read_embedding_file, write_city, write_embedding_file, CityData, RunManifest};
use flexireg_core::prompt::{train_prompt_enhancer, AuditedTargets};
use flexireg_core::{HexGrid, Mat, Region, RunConfig, TaskDataset};

use crate::{plot, Command, GlobalArgs};

pub fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Synth => "synth",
        Command::Grid => "grid",
        Command::Features => "features",
        Command::TrainCells { .. } => "train-cells",
        Command::Aggregate { .. } => "aggregate",
        Command::TrainTask { .. } => "train-task",
        Command::Eval { .. } => "eval",
        Command::Ablate => "ablate",
        Command::MergeEval => "merge-eval",
        Command::Plot { .. } => "plot",
    }
}

struct Ctx {
    cfg: RunConfig,
    config_path: Option<PathBuf>,
    hash: String,
    manifest: RunManifest,
}

impl Ctx {
    fn new(global: &GlobalArgs, command: &str, tweak: impl FnOnce(&mut RunConfig)) -> Result<Self> {
        let (mut cfg, config_path) = RunConfig::load(global.config.as_deref())?;
        if let Some(seed) = global.seed {
            cfg.seed = seed;
        }
        if let Some(d) = &global.data_dir {
            cfg.paths.data_dir = d.clone();
        }
        if let Some(d) = &global.out_dir {
            cfg.paths.output_dir = d.clone();
        }
        tweak(&mut cfg);
        cfg.validate()?;
        let hash = cfg.hash()?;
        let mut manifest = RunManifest::new(command, cfg.seed, &hash);
        if let Some(p) = &config_path {
            manifest.input(p)?;
        }
        fs::create_dir_all(&cfg.paths.output_dir)
            .with_context(|| format!("creating {}", cfg.paths.output_dir.display()))?;
        Ok(Self {
            cfg,
            config_path,
            hash,
            manifest,
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.output_dir.join(name)
    }

    fn city(&mut self) -> Result<CityData> {
        let dir = self.cfg.paths.data_dir.clone();
        let city = load_city(&dir, &self.cfg.projection()).with_context(|| format!("loading {}", dir.display()))?;
        for f in &city.files {
            self.manifest.input(f)?;
        }
        Ok(city)
    }

    fn grid(&self, city: &CityData) -> Result<HexGrid> {
        Ok(HexGrid::build(city.extent()?, self.cfg.grid.edge_length, self.cfg.grid.shape)?)
    }

    fn bundle(&self, city: &CityData, grid: &HexGrid) -> Result<FeatureBundle> {
        Ok(build_feature_bundle(grid, &city.raw, &self.cfg.description, self.cfg.seed)?)
    }

    fn cell_embeddings(&mut self) -> Result<Mat> {
        let path = self.out("cells.femb");
        let (e, _) = read_embedding_file(&path)
            .with_context(|| format!("reading {}; run train-cells first", path.display()))?;
        self.manifest.input(&path)?;
        Ok(e)
    }

    fn experiment<'a>(&self, grid: &'a HexGrid, bundle: &'a FeatureBundle, e: Mat) -> Experiment<'a> {
        let pipeline = self.cfg.pipeline();
        let views = pipeline.grid_learner.active_views();
        Experiment::new(grid, bundle, &pipeline).with_cell_embeddings(views, e)
    }

    fn wrote(&mut self, path: &Path) -> Result<()> {
        Ok(self.manifest.output(path)?)
    }

    fn report(&mut self, stem: &str, title: &str, rows: &[ReportRow]) -> Result<()> {
        let csv_path = self.out(&format!("{stem}.csv"));
        write_csv(fs::File::create(&csv_path)?, rows)?;
        self.wrote(&csv_path)?;
        let md_path = self.out(&format!("{stem}.md"));
        fs::write(&md_path, markdown(title, rows))?;
        self.wrote(&md_path)?;
        for r in rows {
            println!("{}\t{}\tMAE {:.4}\tRMSE {:.4}\tR2 {:.4}", r.variant, r.task, r.mae, r.rmse, r.r2);
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        let dir = self.out("manifests");
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", self.manifest.command));
        self.manifest.config_hash = self.hash.clone();
        self.manifest.write(&path)?;
        let config_copy = dir.join(format!("{}.config.toml", self.manifest.command));
        fs::write(&config_copy, self.cfg.to_toml()?)?;
        log::info!(
            "{} done; manifest {} (config {})",
            self.manifest.command,
            path.display(),
            self.config_path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "defaults".into())
        );
        Ok(())
    }
}

fn formation(city: &CityData, grid: &HexGrid) -> Formation {
    Formation::new(city.regions.clone(), grid, city.tasks.clone())
}

fn file_label(label: &str) -> String {
    label.replace("w/o-", "wo-").replace('/', "-")
}

pub fn run(global: &GlobalArgs, cmd: &Command) -> Result<()> {
    let command = name(cmd);
    match cmd {
        Command::Synth => synth(Ctx::new(global, command, |_| {})?),
        Command::Grid => grid(Ctx::new(global, command, |_| {})?),
        Command::Features => features(Ctx::new(global, command, |_| {})?),
        Command::TrainCells { epochs } => train_cells(Ctx::new(global, command, |c| {
            if let Some(e) = epochs {
                c.model.epochs = *e;
            }
        })?),
        Command::Aggregate { regions } => aggregate(Ctx::new(global, command, |_| {})?, regions.as_deref()),
        Command::TrainTask { task, epochs } => train_task(
            Ctx::new(global, command, |c| {
                if let Some(e) = epochs {
                    c.prompt.epochs = *e;
                }
            })?,
            task,
        ),
        Command::Eval { variant, task } => {
            let variant: Variant = variant.parse()?;
            eval(
                Ctx::new(global, command, |c| {
                    if let Some(t) = task {
                        c.eval.tasks = vec![t.clone()];
                    }
                })?,
                variant,
            )
        }
        Command::Ablate => ablate(Ctx::new(global, command, |_| {})?),
        Command::MergeEval => merge_eval(Ctx::new(global, command, |_| {})?),
        Command::Plot { input, output } => {
            let ctx = Ctx::new(global, command, |_| {})?;
            plot_cmd(ctx, input.clone(), output.clone())
        }
    }
}

fn synth(mut ctx: Ctx) -> Result<()> {
    let cfg = ctx.cfg.normalized();
    let city = generate_synthetic_city(cfg.seed, &cfg.synth)?;
    let dir = cfg.paths.data_dir.clone();
    let files = write_city(&city, &dir, &cfg.projection())?;
    let truth = dir.join("truth.json");
    fs::write(&truth, serde_json::to_vec_pretty(&city.coefficients)?)?;
    for f in files.iter().chain([&truth]) {
        ctx.wrote(f)?;
    }
    println!(
        "synthetic city: {} regions, {} POIs, {} tasks -> {}",
        city.regions.len(),
        city.pois.len(),
        city.tasks.len(),
        dir.display()
    );
    ctx.finish()
}

fn grid(mut ctx: Ctx) -> Result<()> {
    let city = ctx.city()?;
    let grid = ctx.grid(&city)?;
    let cells: Vec<Region> = grid
        .cells
        .iter()
        .map(|c| Region {
            id: c.id as u64,
            shape: MultiPolygon::single(Polygon::new(c.polygon.clone())),
        })
        .collect();
    let path = ctx.out("grid.geojson");
    fs::write(&path, serde_json::to_vec(&regions_geojson(&cells, &ctx.cfg.projection()))?)?;
    ctx.wrote(&path)?;
    let summary = serde_json::json!({
        "shape": grid.shape,
        "edge_length": grid.edge_length,
        "cells": grid.len(),
        "cell_area": grid.cell_area(),
    });
    let path = ctx.out("grid.json");
    fs::write(&path, serde_json::to_vec_pretty(&summary)?)?;
    ctx.wrote(&path)?;
    println!("{} cells", grid.len());
    ctx.finish()
}

fn features(mut ctx: Ctx) -> Result<()> {
    let city = ctx.city()?;
    let grid = ctx.grid(&city)?;
    let bundle = ctx.bundle(&city, &grid)?;
    let dir = ctx.out("features");
    fs::create_dir_all(&dir)?;
    let cell_ids: Vec<u64> = (0..bundle.len() as u64).collect();
    let enc = encode_cells(&bundle, &ctx.cfg.providers, &[Modality::Text])?;
    let mats = [
        ("poi", &bundle.poi),
        ("landuse", &bundle.landuse),
        ("satellite", &enc.satellite),
        ("text", &enc.text[Modality::Text.tag()]),
    ];
    for (name, m) in mats {
        let path = dir.join(format!("{name}.femb"));
        write_embedding_file(&path, m, &cell_ids)?;
        ctx.wrote(&path)?;
    }
    let sv_path = dir.join("streetview.femb");
    let sv_ids: Vec<u64> = enc.sv_refs.iter().map(|r| r.cell as u64).collect();
    write_embedding_file(&sv_path, &enc.streetview, &sv_ids)?;
    ctx.wrote(&sv_path)?;
    let json_files = [
        ("neighbors.json", serde_json::to_value(bundle.neighbors.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())?),
        ("descriptions.json", serde_json::to_value(&bundle.descriptions)?),
        ("ingest_report.json", serde_json::to_value(&bundle.report)?),
    ];
    for (name, v) in json_files {
        let path = dir.join(name);
        fs::write(&path, serde_json::to_vec_pretty(&v)?)?;
        ctx.wrote(&path)?;
    }
    println!("{} cells, {} street-view images", bundle.len(), enc.sv_refs.len());
    ctx.finish()
}

fn train_cells(mut ctx: Ctx) -> Result<()> {
    let city = ctx.city()?;
    let grid = ctx.grid(&city)?;
    let bundle = ctx.bundle(&city, &grid)?;
    let enc = encode_cells(&bundle, &ctx.cfg.providers, &[])?;
    let pipeline = ctx.cfg.pipeline();
    let inputs = CellInputs::build(&bundle, enc.satellite, pipeline.grid_learner.top_k)?;
    let checkpoint = ctx.out("cells_checkpoint.json");
    let trained = train_cell_embeddings(&inputs, &pipeline.grid_learner, Some(&checkpoint))
        .context("stage-1 training failed")?;
    let path = ctx.out("cells.femb");
    write_embedding_file(&path, &trained.embeddings, &(0..bundle.len() as u64).collect::<Vec<_>>())?;
    ctx.wrote(&path)?;
    let curve = ctx.out("cells_loss.csv");
    write_loss_curve(fs::File::create(&curve)?, &trained.curve)?;
    ctx.wrote(&curve)?;
    let (first, last) = (&trained.curve[0], trained.curve.last().expect("epochs > 0"));
    println!("{} epochs, loss {:.4} -> {:.4}", trained.curve.len(), first.total, last.total);
    ctx.finish()
}

fn aggregate(mut ctx: Ctx, regions: Option<&Path>) -> Result<()> {
    let city = ctx.city()?;
    let grid = ctx.grid(&city)?;
    let e = ctx.cell_embeddings()?;
    if e.nrows() != grid.len() {
        bail!("cells.femb has {} rows for {} grid cells", e.nrows(), grid.len());
    }
    let (regions, stem) = match regions {
        Some(p) => {
            ctx.manifest.input(p)?;
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("custom").to_string();
            (load_regions(p, &ctx.cfg.projection())?, format!("regions_{stem}"))
        }
        None => (city.regions.clone(), "regions".to_string()),
    };
    let overlap = build_overlap_map(&regions, &grid);
    for issue in &overlap.issues {
        log::warn!("region {}: {}", issue.region_id, issue.message);
    }
    let ids: Vec<u64> = regions.iter().map(|r| r.id).collect();
    let h = aggregate_region_embeddings(&e, &overlap, &ids, Weighting::Overlap)?;
    let path = ctx.out(&format!("{stem}.femb"));
    write_embedding_file(&path, &h.h, &ids)?;
    ctx.wrote(&path)?;
    let opath = ctx.out(&format!("{stem}_overlap.json"));
    fs::write(&opath, serde_json::to_vec(&overlap.to_json())?)?;
    ctx.wrote(&opath)?;
    println!("{} regions ({} without cells)", ids.len(), h.empty.len());
    ctx.finish()
}

fn find_task<'a>(tasks: &'a [TaskDataset], name: &str) -> Result<&'a TaskDataset> {
    tasks
        .iter()
        .find(|t| t.task_name == name)
        .with_context(|| format!("unknown task {name:?}"))
}

fn train_task(mut ctx: Ctx, task: &str) -> Result<()> {
    let city = ctx.city()?;
    let grid = ctx.grid(&city)?;
    let bundle = ctx.bundle(&city, &grid)?;
    let e = ctx.cell_embeddings()?;
    let f = formation(&city, &grid);
    let t = find_task(&f.tasks, task)?;
    let ids = f.region_ids();
    let y = t.aligned(&ids)?;
    let prompt = ctx.cfg.pipeline().prompt;
    let mut ex = ctx.experiment(&grid, &bundle, e);
    let cells = ex.cell_stage(Variant::Full)?;
    let inputs = build_prompt_inputs(&cells, &f, Weighting::Overlap, prompt.images_per_region, ctx.cfg.seed)?;
    let all: Vec<usize> = (0..ids.len()).collect();
    let trained = train_prompt_enhancer(&inputs, &AuditedTargets::new(y), &all, &prompt)?;
    let path = ctx.out(&format!("task_{task}.femb"));
    write_embedding_file(&path, &trained.h_hat, &ids)?;
    ctx.wrote(&path)?;
    let curve = ctx.out(&format!("task_{task}_loss.csv"));
    let mut w = csv::Writer::from_path(&curve)?;
    w.write_record(["epoch", "mse"])?;
    for (i, v) in trained.curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{v:?}")])?;
    }
    w.flush()?;
    ctx.wrote(&curve)?;
    println!("{} regions, output width {}", ids.len(), trained.h_hat.ncols());
    ctx.finish()
}

fn baseline_rows(ctx: &Ctx, bundle: &FeatureBundle, f: &Formation, width: usize) -> Result<Vec<ReportRow>> {
    let pipeline = ctx.cfg.pipeline();
    let ids = f.region_ids();
    let folds = flexireg_core::evalharness::k_folds(ids.len(), pipeline.folds, pipeline.seed)?;
    let direct = direct_features(bundle, f)?;
    let random = random_embeddings(ids.len(), width, pipeline.seed);
    let mut rows = Vec::new();
    for t in f.tasks.iter().filter(|t| pipeline.tasks.is_empty() || pipeline.tasks.contains(&t.task_name)) {
        let y = t.aligned(&ids)?;
        rows.push(ReportRow::new("baseline-direct", &ridge_cv(&t.task_name, &direct, &y, pipeline.lambda, &folds)?));
        rows.push(ReportRow::new("baseline-random", &ridge_cv(&t.task_name, &random, &y, pipeline.lambda, &folds)?));
    }
    Ok(rows)
}

fn eval(mut ctx: Ctx, variant: Variant) -> Result<()> {
    let city = ctx.city()?;
    let grid = ctx.grid(&city)?;
    let bundle = ctx.bundle(&city, &grid)?;
    let e = ctx.cell_embeddings()?;
    let d = e.ncols();
    let f = formation(&city, &grid);
    let mut ex = ctx.experiment(&grid, &bundle, e);
    let reports = ex.run(variant, &f)?;
    if ex.stage1_runs > 0 {
        log::info!("{variant} retrained stage 1 for its view set");
    }
    let mut rows: Vec<ReportRow> = reports.iter().map(|r| ReportRow::new(variant.label(), r)).collect();
    let p = &ctx.cfg.prompt;
    rows.extend(baseline_rows(&ctx, &bundle, &f, d + p.d_text + d)?);
    let stem = format!("eval_{}", file_label(variant.label()));
    ctx.report(&stem, &format!("Evaluation: {variant}"), &rows)?;
    ctx.finish()
}

fn ablate(mut ctx: Ctx) -> Result<()> {
    let city = ctx.city()?;
    let grid = ctx.grid(&city)?;
    let bundle = ctx.bundle(&city, &grid)?;
    let e = ctx.cell_embeddings()?;
    let f = formation(&city, &grid);
    let variants = ctx.cfg.variants()?;
    let mut ex = ctx.experiment(&grid, &bundle, e);
    let mut rows = Vec::new();
    for v in std::iter::once(Variant::Full).chain(variants) {
        log::info!("running {v}");
        rows.extend(ex.run(v, &f)?.iter().map(|r| ReportRow::new(v.label(), r)));
    }
    ctx.report("ablation", "Ablation", &rows)?;
    ctx.finish()
}

fn merge_eval(mut ctx: Ctx) -> Result<()> {
    let city = ctx.city()?;
    let grid = ctx.grid(&city)?;
    let bundle = ctx.bundle(&city, &grid)?;
    let e = ctx.cell_embeddings()?;
    let e_hash = flexireg_core::io::sha256_file(&ctx.out("cells.femb"))?;
    let mut ex = ctx.experiment(&grid, &bundle, e);
    let mut rows = Vec::new();
    let label = |n: usize| format!("regions={n}");
    let base = formation(&city, &grid);
    rows.extend(ex.run(Variant::Full, &base)?.iter().map(|r| ReportRow::new(&label(base.regions.len()), r)));
    for &target in &ctx.cfg.eval.merge_targets {
        if target >= city.regions.len() {
            log::warn!("skipping merge target {target}: only {} regions", city.regions.len());
            continue;
        }
        let (regions, members) = merge_regions_with_members(&city.regions, target, ctx.cfg.seed)?;
        let tasks = merge_task_targets(&city.tasks, &regions, &members)?;
        let f = Formation::new(regions, &grid, tasks);
        rows.extend(ex.run(Variant::Full, &f)?.iter().map(|r| ReportRow::new(&label(target), r)));
    }
    if ex.stage1_runs != 0 || flexireg_core::io::sha256_file(&ctx.out("cells.femb"))? != e_hash {
        bail!("cell embeddings changed during merge evaluation");
    }
    ctx.report("merge", "Region-formation robustness", &rows)?;
    ctx.finish()
}

fn plot_cmd(mut ctx: Ctx, input: Option<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    let input = input.unwrap_or_else(|| ctx.out("cells_loss.csv"));
    let output = output.unwrap_or_else(|| input.with_extension("png"));
    ctx.manifest.input(&input)?;
    plot::plot_csv(&input, &output)?;
    ctx.wrote(&output)?;
    println!("{}", output.display());
    ctx.finish()
}
