//! Command implementations. Every command writes into a fresh run
//! directory named by config hash, echoes the resolved config there, and
//! never mutates its inputs.

use crate::config::{create_run_dir, DatasetSource, RunConfig};
use crate::CliError;
use anyhow::{anyhow, Result};
use std::fs;
use std::path::{Path, PathBuf};
use step_core::checkpoint::{self, Checkpoint};
use step_core::data::{
    self, fit_apply_zscore, generate_synthetic, PlantedGraph, RawDataset, SplitSpec,
};
use step_core::forecaster::train::{
    evaluate, train, ForecasterSettings, ForecastModel, TrainInputs,
};
use step_core::forecaster::{BackendNet, FusionHead};
use step_core::graph::{GraphLearner, GraphLearnerSettings};
use step_core::inspect;
use step_core::rng;
use step_core::tsformer::{self, RepresentationBank, TSFormer, TSFormerConfig};

// ── shared pipeline pieces ───────────────────────────────────────────

fn resolve_dataset(cfg: &RunConfig) -> Result<(RawDataset, Option<PlantedGraph>)> {
    match &cfg.dataset {
        DatasetSource::Synthetic(spec) => {
            let (ds, graph) = generate_synthetic(spec)?;
            Ok((ds, Some(graph)))
        }
        DatasetSource::Path {
            path,
            steps_per_day,
        } => {
            let p = Path::new(path);
            let ds = if p.extension().and_then(|e| e.to_str()) == Some("csv") {
                data::import_csv(p, *steps_per_day, "csv-import")?
            } else {
                data::load_dataset(p)?
            };
            Ok((ds, None))
        }
    }
}

fn prepare(cfg: &RunConfig) -> Result<(RawDataset, SplitSpec, Option<PlantedGraph>)> {
    let (raw, planted) = resolve_dataset(cfg)?;
    let split = SplitSpec::new(raw.num_steps, cfg.split.train, cfg.split.val, cfg.split.test)?;
    let ds = fit_apply_zscore(&raw, &split)?;
    Ok((ds, split, planted))
}

fn load_tsformer(path: &Path) -> Result<(TSFormer, Checkpoint)> {
    let ckpt = checkpoint::load_checkpoint(path)?;
    if ckpt.meta.kind != "tsformer" {
        return Err(anyhow!(
            "{} is a {:?} checkpoint, expected tsformer",
            path.display(),
            ckpt.meta.kind
        ));
    }
    let cfg: TSFormerConfig = serde_json::from_value(ckpt.meta.config.clone())?;
    let mut r = rng::split(ckpt.meta.seed, "tsformer/init");
    let mut model = TSFormer::new(&cfg, &mut r)?;
    ckpt.apply_to(&mut model.params_mut())?;
    Ok((model, ckpt))
}

/// Every window start any forecast sample (train strict, val/test crossing)
/// can reference.
fn forecast_starts(split: &SplitSpec, t_total: usize, hist: usize, t_f: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut t0 = split.train.start;
    while t0 + hist + t_f <= split.train.end {
        starts.push(t0);
        t0 += 1;
    }
    for range in [&split.val, &split.test] {
        let lo = range.start.max(hist);
        let mut ts = lo;
        while ts + t_f <= range.end {
            starts.push(ts - hist);
            ts += 1;
        }
    }
    let _ = t_total;
    starts.sort_unstable();
    starts.dedup();
    starts
}

fn build_bank(
    model: &TSFormer,
    ds: &RawDataset,
    split: &SplitSpec,
    horizon: usize,
    ckpt: &Checkpoint,
) -> Result<RepresentationBank> {
    let hist = model.cfg.num_patches * model.cfg.patch_len;
    let starts = forecast_starts(split, ds.num_steps, hist, horizon);
    if starts.is_empty() {
        return Err(anyhow!(
            "no forecast windows fit: history {hist} + horizon {horizon} exceed the data"
        ));
    }
    Ok(RepresentationBank::precompute(
        model,
        ds,
        &starts,
        &ckpt.meta.config_hash,
        &ckpt.meta.param_hash,
    )?)
}

fn edge_csv(edges: &[(usize, usize, f64)]) -> String {
    let mut out = String::from("src,dst,weight\n");
    for (s, d, w) in edges {
        out.push_str(&format!("{s},{d},{w:.6}\n"));
    }
    out
}

fn matrix_edges(values: &[f64], n: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            out.push((i, j, values[i * n + j]));
        }
    }
    out
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ── generate ─────────────────────────────────────────────────────────

pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let spec = match &cfg.dataset {
        DatasetSource::Synthetic(spec) => spec.clone(),
        DatasetSource::Path { .. } => {
            return Err(CliError::Usage(
                "generate needs a synthetic dataset spec in the config (key \"dataset\": {\"synthetic\": ...})"
                    .into(),
            ))
        }
    };
    let (ds, planted) = generate_synthetic(&spec).map_err(usage_if_spec)?;
    let dir = create_run_dir(cfg, "generate")?;
    data::save_dataset(&ds, &dir.join("dataset.stsf")).map_err(runtime)?;
    let edges: Vec<(usize, usize, f64)> = planted
        .edges()
        .into_iter()
        .map(|(s, d)| (s, d, 1.0))
        .collect();
    fs::write(dir.join("planted_graph.csv"), edge_csv(&edges)).map_err(anyhow::Error::from)?;
    println!(
        "generated {} steps x {} nodes -> {}",
        ds.num_steps,
        ds.num_nodes,
        dir.display()
    );
    Ok(dir)
}

fn usage_if_spec(e: step_core::Error) -> CliError {
    match e {
        step_core::Error::InvalidSyntheticSpec(_) | step_core::Error::InvalidConfig(_) => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Runtime(other.into()),
    }
}

fn runtime(e: step_core::Error) -> CliError {
    CliError::Runtime(e.into())
}

// ── pretrain ─────────────────────────────────────────────────────────

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let (ds, split, _) = prepare(cfg)?;
    let outcome = tsformer::pretrain(&cfg.tsformer, &cfg.pretrain, &ds, &split, cfg.seed)
        .map_err(runtime)?;
    let dir = create_run_dir(cfg, "pretrain")?;
    checkpoint::save_checkpoint(
        &dir.join("tsformer.ckpt"),
        "tsformer",
        &serde_json::to_value(&cfg.tsformer).map_err(anyhow::Error::from)?,
        cfg.seed,
        outcome.best_epoch,
        &outcome.model.params(),
    )
    .map_err(runtime)?;
    write_jsonl(&dir.join("pretrain_log.jsonl"), &outcome.log)?;
    println!(
        "pretrained {} epochs, best epoch {} (val loss {:.6}) -> {}",
        outcome.log.len(),
        outcome.best_epoch,
        outcome.best_val_loss,
        dir.display()
    );
    Ok(dir)
}

// ── train ────────────────────────────────────────────────────────────

pub struct TrainFlags {
    pub pretrained: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub save_bank: bool,
}

pub fn cmd_train(cfg: &RunConfig, flags: &TrainFlags) -> Result<PathBuf, CliError> {
    let needs_bank = cfg.forecaster.fusion || cfg.graph.enabled;
    if needs_bank && flags.pretrained.is_none() {
        return Err(CliError::Usage(
            "train needs --pretrained <tsformer.ckpt> (fusion or graph structure learning is on)"
                .into(),
        ));
    }
    let (ds, split, _) = prepare(cfg)?;

    let mut tsf: Option<(TSFormer, Checkpoint)> = None;
    let bank = if needs_bank {
        let path = flags.pretrained.as_ref().unwrap();
        let (model, ckpt) = load_tsformer(path)?;
        let bank = match &flags.bank {
            Some(bank_path) => {
                RepresentationBank::load(bank_path, Some(&ckpt.meta.param_hash)).map_err(runtime)?
            }
            None => build_bank(&model, &ds, &split, cfg.forecaster.horizon, &ckpt)?,
        };
        tsf = Some((model, ckpt));
        Some(bank)
    } else {
        None
    };

    let inputs = TrainInputs {
        ds: &ds,
        split: &split,
        bank: bank.as_ref(),
        static_graph: None,
        num_patches: cfg.tsformer.num_patches,
        patch_len: cfg.tsformer.patch_len,
    };
    let outcome = train(&cfg.forecaster, &cfg.schedule, &cfg.graph, &inputs, cfg.seed)
        .map_err(runtime)?;

    let dir = create_run_dir(cfg, "train")?;
    let model_config = serde_json::json!({
        "forecaster": cfg.forecaster,
        "schedule": cfg.schedule,
        "graph": cfg.graph,
        "tsformer": cfg.tsformer,
        "train_len": split.train.len(),
        "channels": ds.num_channels,
        "d_model": bank.as_ref().map(|b| b.d).unwrap_or(1),
        "pretrained_hash": tsf.as_ref().map(|(_, c)| c.meta.param_hash.clone()),
    });
    checkpoint::save_checkpoint(
        &dir.join("forecaster.ckpt"),
        "forecaster",
        &model_config,
        cfg.seed,
        outcome.best_epoch,
        &outcome.model.all_params(),
    )
    .map_err(runtime)?;
    write_jsonl(&dir.join("train_log.jsonl"), &outcome.log)?;

    if let Some(target) = &outcome.knn_target {
        let edges: Vec<(usize, usize, f64)> = target
            .edges()
            .into_iter()
            .map(|(s, d)| (s, d, 1.0))
            .collect();
        fs::write(dir.join("knn_graph.csv"), edge_csv(&edges)).map_err(anyhow::Error::from)?;
        let theta = step_core::forecaster::train::eval_adjacency(
            &outcome.model,
            &inputs,
            &cfg.graph,
            &train_starts(&ds, &split, cfg)?,
        )
        .map_err(runtime)?;
        let n = ds.num_nodes;
        fs::write(
            dir.join("edge_probabilities.csv"),
            edge_csv(&matrix_edges(&theta, n)),
        )
        .map_err(anyhow::Error::from)?;
        let thresholded: Vec<(usize, usize, f64)> = matrix_edges(&theta, n)
            .into_iter()
            .filter(|&(i, j, w)| i != j && w > 0.5)
            .map(|(i, j, _)| (i, j, 1.0))
            .collect();
        fs::write(dir.join("learned_graph.csv"), edge_csv(&thresholded))
            .map_err(anyhow::Error::from)?;
    }
    if flags.save_bank {
        if let Some(b) = &bank {
            b.save(&dir.join("bank.strb")).map_err(runtime)?;
        }
    }
    println!(
        "trained {} epochs, best epoch {} (val mae {:.6}) -> {}",
        outcome.log.len(),
        outcome.best_epoch,
        outcome.best_val_mae,
        dir.display()
    );
    Ok(dir)
}

fn train_starts(ds: &RawDataset, split: &SplitSpec, cfg: &RunConfig) -> Result<Vec<usize>> {
    let samples = data::make_forecast_samples(
        ds,
        split.train.clone(),
        cfg.tsformer.num_patches,
        cfg.tsformer.patch_len,
        cfg.forecaster.horizon,
    )?;
    Ok(samples.iter().map(|s| s.long_history_start).collect())
}

// ── evaluate ─────────────────────────────────────────────────────────

pub struct EvaluateFlags {
    pub checkpoint: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
}

/// Rebuild a forecaster model from its checkpoint.
fn load_forecaster(path: &Path) -> Result<(ForecastModel, GraphLearnerSettings, Checkpoint)> {
    let ckpt = checkpoint::load_checkpoint(path)?;
    if ckpt.meta.kind != "forecaster" {
        return Err(anyhow!(
            "{} is a {:?} checkpoint, expected forecaster",
            path.display(),
            ckpt.meta.kind
        ));
    }
    let settings: ForecasterSettings =
        serde_json::from_value(ckpt.meta.config["forecaster"].clone())?;
    let gsl: GraphLearnerSettings = serde_json::from_value(ckpt.meta.config["graph"].clone())?;
    let tsf: TSFormerConfig = serde_json::from_value(ckpt.meta.config["tsformer"].clone())?;
    let train_len = ckpt.meta.config["train_len"].as_u64().unwrap_or(0) as usize;
    let channels = ckpt.meta.config["channels"].as_u64().unwrap_or(1) as usize;
    let d_model = ckpt.meta.config["d_model"].as_u64().unwrap_or(1) as usize;

    let mut r = rng::split(ckpt.meta.seed, "forecaster/init");
    let backend = BackendNet::new(
        settings.backend,
        &mut r,
        tsf.patch_len,
        channels,
        settings.d_prime,
    );
    let head = FusionHead::new(&mut r, d_model, settings.d_prime, settings.horizon, channels);
    let graph_learner = if gsl.enabled {
        Some(GraphLearner::new(
            &mut r,
            &gsl,
            train_len,
            channels,
            tsf.num_patches * d_model,
        )?)
    } else {
        None
    };
    let mut model = ForecastModel {
        settings,
        backend,
        head,
        graph_learner,
    };
    ckpt.apply_to(&mut model.all_params_mut())?;
    Ok((model, gsl, ckpt))
}

pub fn cmd_evaluate(cfg: &RunConfig, flags: &EvaluateFlags) -> Result<PathBuf, CliError> {
    let ckpt_path = flags.checkpoint.as_ref().ok_or_else(|| {
        CliError::Usage("evaluate needs --checkpoint <forecaster.ckpt>".into())
    })?;
    let (model, gsl, fc_ckpt) = load_forecaster(ckpt_path)?;
    let needs_bank = model.settings.fusion || model.graph_learner.is_some();
    if needs_bank && flags.pretrained.is_none() {
        return Err(CliError::Usage(
            "evaluate needs --pretrained <tsformer.ckpt> for this checkpoint (fusion or GSL is on)"
                .into(),
        ));
    }
    let (ds, split, _) = prepare(cfg)?;
    let bank = if needs_bank {
        let (tsf_model, tsf_ckpt) = load_tsformer(flags.pretrained.as_ref().unwrap())?;
        if let Some(expected) = fc_ckpt.meta.config["pretrained_hash"].as_str() {
            if expected != tsf_ckpt.meta.param_hash {
                return Err(CliError::Runtime(anyhow!(
                    "forecaster was trained against tsformer {expected}, got {}",
                    tsf_ckpt.meta.param_hash
                )));
            }
        }
        Some(build_bank(
            &tsf_model,
            &ds,
            &split,
            model.settings.horizon,
            &tsf_ckpt,
        )?)
    } else {
        None
    };
    let inputs = TrainInputs {
        ds: &ds,
        split: &split,
        bank: bank.as_ref(),
        static_graph: None,
        num_patches: cfg.tsformer.num_patches,
        patch_len: cfg.tsformer.patch_len,
    };
    let report = evaluate(&model, &inputs, &gsl, split.test.clone()).map_err(runtime)?;
    let dir = create_run_dir(cfg, "evaluate")?;
    fs::write(dir.join("metrics.csv"), report.metrics.to_csv()).map_err(anyhow::Error::from)?;
    fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n",
    )
    .map_err(anyhow::Error::from)?;
    for row in &report.metrics.rows {
        let label = if row.horizon == 0 {
            "mean".to_string()
        } else {
            format!("{:>4}", row.horizon)
        };
        println!(
            "horizon {label}: mae {:.4} rmse {:.4} mape {:.2}%",
            row.mae,
            row.rmse,
            row.mape * 100.0
        );
    }
    println!("evaluated {} samples -> {}", report.samples, dir.display());
    Ok(dir)
}

// ── inspect ──────────────────────────────────────────────────────────

pub struct InspectFlags {
    pub pretrained: Option<PathBuf>,
    pub node: usize,
    pub window_start: Option<usize>,
    pub top_k: usize,
    pub mask_seed: u64,
}

pub fn cmd_inspect(cfg: &RunConfig, flags: &InspectFlags) -> Result<PathBuf, CliError> {
    let path = flags.pretrained.as_ref().ok_or_else(|| {
        CliError::Usage("inspect needs --pretrained <tsformer.ckpt>".into())
    })?;
    let (model, ckpt) = load_tsformer(path)?;
    let (ds, _split, _) = prepare(cfg)?;
    let hist = model.cfg.num_patches * model.cfg.patch_len;
    if ds.num_steps < hist {
        return Err(CliError::Runtime(anyhow!(
            "dataset too short for one window of {hist} steps"
        )));
    }
    if flags.node >= ds.num_nodes {
        return Err(CliError::Usage(format!(
            "--node {} out of range (dataset has {} nodes)",
            flags.node, ds.num_nodes
        )));
    }
    let start = flags.window_start.unwrap_or(ds.num_steps - hist);
    if start + hist > ds.num_steps {
        return Err(CliError::Usage(format!(
            "--window {start} leaves no room for {hist} steps"
        )));
    }
    let bank = RepresentationBank::precompute(
        &model,
        &ds,
        &[start],
        &ckpt.meta.config_hash,
        &ckpt.meta.param_hash,
    )
    .map_err(runtime)?;

    let dir = create_run_dir(cfg, "inspect")?;
    let patch_sim = inspect::patch_similarity(&bank, flags.node, start).map_err(runtime)?;
    fs::write(dir.join("patch_similarity.csv"), patch_sim.to_csv())
        .map_err(anyhow::Error::from)?;
    fs::write(
        dir.join("patch_similarity.svg"),
        inspect::similarity_svg(&patch_sim),
    )
    .map_err(anyhow::Error::from)?;

    let pos_sim = inspect::posemb_similarity(&model).map_err(runtime)?;
    fs::write(dir.join("posemb_similarity.csv"), pos_sim.to_csv())
        .map_err(anyhow::Error::from)?;
    fs::write(
        dir.join("posemb_similarity.svg"),
        inspect::similarity_svg(&pos_sim),
    )
    .map_err(anyhow::Error::from)?;

    let mut topk = String::from("patch,rank,similar_patch,similarity\n");
    for patch in 0..patch_sim.n {
        for (rank, j) in inspect::top_k_similar(&patch_sim, patch, flags.top_k)
            .into_iter()
            .enumerate()
        {
            topk.push_str(&format!(
                "{patch},{},{j},{:.9}\n",
                rank + 1,
                patch_sim.at(patch, j)
            ));
        }
    }
    fs::write(dir.join("top_k_similar.csv"), topk).map_err(anyhow::Error::from)?;

    let windows = data::make_pretrain_windows(
        &ds,
        start..start + hist,
        model.cfg.num_patches,
        model.cfg.patch_len,
        1,
    )
    .map_err(runtime)?;
    let window = windows
        .iter()
        .find(|w| w.node == flags.node)
        .expect("window for node exists");
    let overlay = inspect::reconstruction_dump(&model, window, flags.mask_seed).map_err(runtime)?;
    fs::write(dir.join("reconstruction.csv"), overlay.to_csv()).map_err(anyhow::Error::from)?;
    fs::write(dir.join("reconstruction.svg"), overlay.to_svg()).map_err(anyhow::Error::from)?;
    println!(
        "inspection artifacts for node {} window {start} -> {}",
        flags.node,
        dir.display()
    );
    Ok(dir)
}

// ── sweep ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    MaskRatio,
    K,
}

pub struct SweepFlags {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

pub fn cmd_sweep(cfg: &RunConfig, flags: &SweepFlags) -> Result<PathBuf, CliError> {
    if flags.values.is_empty() {
        return Err(CliError::Usage("sweep needs --values v1,v2,...".into()));
    }
    let (ds, split, _) = prepare(cfg)?;
    let dir = create_run_dir(cfg, "sweep")?;
    let mut rows = String::from("axis,value,val_mae,val_rmse,val_mape\n");

    // For the k axis the pre-training stage is shared across values.
    let shared: Option<(TSFormer, String, String)> = if flags.axis == SweepAxis::K {
        let outcome =
            tsformer::pretrain(&cfg.tsformer, &cfg.pretrain, &ds, &split, cfg.seed)
                .map_err(runtime)?;
        let hash = checkpoint::params_hash(&outcome.model.params());
        Some((outcome.model, "cfg".into(), hash))
    } else {
        None
    };

    for &value in &flags.values {
        let (axis_name, outcome) = match flags.axis {
            SweepAxis::MaskRatio => {
                let mut tcfg = cfg.tsformer.clone();
                tcfg.mask_ratio = value;
                tcfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                let pre = tsformer::pretrain(&tcfg, &cfg.pretrain, &ds, &split, cfg.seed)
                    .map_err(runtime)?;
                let hash = checkpoint::params_hash(&pre.model.params());
                let bank = bank_for_sweep(&pre.model, &ds, &split, cfg, &hash)?;
                ("r", run_forecaster(cfg, &cfg.graph, &ds, &split, &bank)?)
            }
            SweepAxis::K => {
                let (model, _, hash) = shared.as_ref().unwrap();
                let bank = bank_for_sweep(model, &ds, &split, cfg, hash)?;
                let mut gsl = cfg.graph.clone();
                gsl.k = value as usize;
                ("k", run_forecaster(cfg, &gsl, &ds, &split, &bank)?)
            }
        };
        let last = outcome
            .log
            .last()
            .ok_or_else(|| CliError::Runtime(anyhow!("no epochs trained")))?;
        let best = &outcome.log[outcome.best_epoch.saturating_sub(1).min(outcome.log.len() - 1)];
        let row = if best.val_mae.is_finite() { best } else { last };
        rows.push_str(&format!(
            "{axis_name},{value},{:.6},{:.6},{:.4}%\n",
            row.val_mae,
            row.val_rmse,
            row.val_mape * 100.0
        ));
    }
    fs::write(dir.join("sweep.csv"), &rows).map_err(anyhow::Error::from)?;
    println!("sweep over {} values -> {}", flags.values.len(), dir.display());
    Ok(dir)
}

fn bank_for_sweep(
    model: &TSFormer,
    ds: &RawDataset,
    split: &SplitSpec,
    cfg: &RunConfig,
    hash: &str,
) -> Result<RepresentationBank, CliError> {
    let hist = model.cfg.num_patches * model.cfg.patch_len;
    let starts = forecast_starts(split, ds.num_steps, hist, cfg.forecaster.horizon);
    RepresentationBank::precompute(model, ds, &starts, "sweep", hash).map_err(runtime)
}

fn run_forecaster(
    cfg: &RunConfig,
    gsl: &GraphLearnerSettings,
    ds: &RawDataset,
    split: &SplitSpec,
    bank: &RepresentationBank,
) -> Result<step_core::forecaster::train::TrainOutcome, CliError> {
    let inputs = TrainInputs {
        ds,
        split,
        bank: Some(bank),
        static_graph: None,
        num_patches: cfg.tsformer.num_patches,
        patch_len: cfg.tsformer.patch_len,
    };
    train(&cfg.forecaster, &cfg.schedule, gsl, &inputs, cfg.seed).map_err(runtime)
}
