//! The subcommands, as library functions.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use privshield_core::attacks::AttackConfig;
use privshield_core::data::{chw_to_hwc, Dataset, DatasetSplit, Splits};
use privshield_core::experiment::{evaluate, prepare_splits, train_private_net, train_protector};
use privshield_core::losses::HyperParams;
use privshield_core::metrics::{project_2d, MetricsReport};
use privshield_core::nets::NetSpec;
use privshield_core::rng;
use privshield_core::trainer::{summarize, TrainHistory};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_model, DirCheckpoints};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::manifest::{write_dataset, write_grid};
use crate::stats::{summarize_group, Summary};
use crate::svg;

pub const METRICS_FILE: &str = "attack_metrics.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Output directory: the command line wins over the config.
pub fn out_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("no output directory; set `out` or pass --out".into()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(Error::io(path))
}

/// Worker count for sweeps: `PRIVSHIELD_THREADS` if set, else the number of
/// available cores.
pub fn worker_count() -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("PRIVSHIELD_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => cores,
    }
}

fn append(split: &mut DatasetSplit, extra: &Dataset, first_index: usize) {
    split.source_indices.extend(first_index..first_index + extra.len());
    split.samples.extend(extra.samples.iter().cloned());
}

/// Source dataset and its three splits, with any extra manifest merged in.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(Dataset, Splits)> {
    let dataset = cfg.load_dataset()?;
    let pipeline = cfg.pipeline();
    let mut splits = prepare_splits(&dataset, &pipeline)?;
    if let Some(mut extra) = cfg.load_extra()? {
        if let Some(cols) = &cfg.data.attributes {
            extra = extra.select_attributes(cols)?;
        }
        if extra.shape != splits.adversary.shape || extra.k_attributes != splits.adversary.k_attributes {
            return Err(Error::Config("extra manifest differs from the main data in image shape or attribute count".into()));
        }
        append(&mut splits.adversary, &extra, dataset.len());
        if cfg.data.extra_into_private {
            append(&mut splits.private, &extra, dataset.len());
        }
    }
    // the utility arity comes from the selection, so hand back the selected set
    let dataset = match &cfg.data.attributes {
        Some(cols) => dataset.select_attributes(cols)?,
        None => dataset,
    };
    Ok((dataset, splits))
}

/// Renders the synthetic dataset to `out` as PNGs plus a manifest.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let Some(synth) = &cfg.data.synth else {
        return Err(Error::Config("generate needs a [data.synth] section".into()));
    };
    let ds = privshield_core::data::generate_synthetic(synth)?;
    create_dir(out)?;
    let manifest = write_dataset(&ds, out)?;
    info!("wrote {} samples to {}", ds.len(), out.display());
    Ok(manifest)
}

/// Summary written next to the checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub checkpoints: Vec<usize>,
    pub enc_checksum: u64,
    pub f_checksum: u64,
    pub dec_checksum: u64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub summary: TrainSummary,
    pub history: TrainHistory,
    /// Directory of the final checkpoint.
    pub checkpoint: PathBuf,
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainRun> {
    cfg.validate()?;
    let (dataset, splits) = prepare(cfg)?;
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), cfg.to_toml())?;
    let mut sink = DirCheckpoints::new(out);
    let outcome = match train_protector(&dataset, &splits, &cfg.pipeline(), &mut sink) {
        Ok(o) => o,
        Err(e) => return Err(sink.failure.take().unwrap_or(e.into())),
    };
    info!("trained {}: {}", out.display(), summarize(&outcome.history));
    let summary = TrainSummary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        steps: outcome.history.len(),
        checkpoints: sink.saved.clone(),
        enc_checksum: outcome.nets.enc.checksum(),
        f_checksum: outcome.nets.f.checksum(),
        dec_checksum: outcome.nets.dec.checksum(),
    };
    write(&out.join("train.json"), serde_json::to_string_pretty(&summary).expect("serializable"))?;
    let checkpoint = sink.last().ok_or(Error::Config("training saved no checkpoint".into()))?;
    Ok(TrainRun { summary, history: outcome.history, checkpoint })
}

/// 2-D principal projection of the released features on T, grouped by the
/// first two utility attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureProjection {
    pub points: Vec<[f64; 2]>,
    /// `2 * attr_0 + attr_1` (just `attr_0` when k = 1).
    pub groups: Vec<u8>,
    pub variance: [f64; 2],
}

/// Contents of `attack_metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub metrics: MetricsReport,
    pub attack: AttackConfig,
    pub encoder_calls: u64,
    pub encoder_param_accesses: u64,
    pub grid_images: usize,
    pub checkpoint: PathBuf,
    pub projection: FeatureProjection,
}

fn checkpoint_files(checkpoint: &Path) -> (PathBuf, PathBuf) {
    let dir = if checkpoint.is_dir() { checkpoint.to_path_buf() } else { checkpoint.parent().unwrap_or(Path::new("")).to_path_buf() };
    let enc = if checkpoint.is_dir() { dir.join("enc.ckpt") } else { checkpoint.to_path_buf() };
    (enc, dir.join("f.ckpt"))
}

/// Attacks a trained encoder. `checkpoint` is a `step_{n}` directory or the
/// encoder file inside one; the utility classifier is read from the same
/// directory.
pub fn cmd_attack(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path, label: &str) -> Result<AttackMetrics> {
    cfg.validate()?;
    let (enc_path, f_path) = checkpoint_files(checkpoint);
    let enc = load_model(&enc_path)?;
    let f = load_model(&f_path)?;
    let (dataset, splits) = prepare(cfg)?;
    let enc_spec = match &enc.spec {
        NetSpec::Encoder(e) => e.clone(),
        _ => return Err(Error::format(&enc_path, "not an encoder")),
    };
    if enc_spec.input != dataset.shape {
        return Err(privshield_core::Error::Shape {
            context: "checkpoint encoder input",
            expected: dataset.shape.chw().to_vec(),
            found: enc_spec.input.chw().to_vec(),
        }
        .into());
    }
    if enc_spec.tap != cfg.nets.tap {
        let expected = cfg.pipeline().encoder_spec(&dataset)?.tap_shape()?;
        return Err(privshield_core::Error::Shape {
            context: "attack decoder input (checkpoint tap differs from nets.tap)",
            expected,
            found: enc_spec.tap_shape()?,
        }
        .into());
    }
    create_dir(out)?;
    let pipeline = cfg.pipeline();
    let c = train_private_net(&pipeline.private_spec(&dataset), &splits.adversary, &pipeline.private, rng::derive(cfg.seed, "private", 0))?;
    let eval = evaluate(&dataset, &splits, &pipeline, enc, &f, &c)?;

    let test = &splits.test;
    let count = cfg.eval.grid_size.min(test.len());
    let shape = dataset.shape;
    let per = shape.len();
    let recon: Vec<Vec<f32>> = (0..count).map(|i| chw_to_hwc(&eval.reconstructions.data()[i * per..(i + 1) * per], shape)).collect();
    let originals: Vec<Vec<f32>> = test.samples[..count].iter().map(|s| s.image.clone()).collect();
    if shape.channels == 1 || shape.channels == 3 {
        write_grid(&out.join("reconstructions.png"), shape, &recon)?;
        write_grid(&out.join("originals.png"), shape, &originals)?;
    }

    let proj = project_2d(&eval.test_features)?;
    let groups = test
        .samples
        .iter()
        .map(|s| if s.attributes.len() > 1 { 2 * s.attributes[0] + s.attributes[1] } else { s.attributes[0] })
        .collect();
    let mut metrics = eval.report;
    metrics.meta.label = label.to_string();
    metrics.meta.config_hash = cfg.hash();
    let result = AttackMetrics {
        metrics,
        attack: pipeline.effective_attack(),
        encoder_calls: eval.encoder_calls,
        encoder_param_accesses: eval.encoder_param_accesses,
        grid_images: count,
        checkpoint: enc_path,
        projection: FeatureProjection { points: proj.coords, groups, variance: proj.variance },
    };
    write(&out.join(METRICS_FILE), serde_json::to_string_pretty(&result).expect("serializable"))?;
    info!(
        "attack {}: mcc {:.3} face {:.3} feat {:.3} lda {:?}",
        out.display(),
        result.metrics.mean_mcc,
        result.metrics.face_sim,
        result.metrics.feature_sim,
        result.metrics.lda_score
    );
    Ok(result)
}

/// Trains into `out/train` and attacks the final checkpoint into `out/attack`.
pub fn run_point(cfg: &ExperimentConfig, out: &Path, label: &str) -> Result<AttackMetrics> {
    let train = cmd_train(cfg, &out.join("train"))?;
    cmd_attack(cfg, &train.checkpoint, &out.join("attack"), label)
}

/// One grid point of a sweep.
#[derive(Clone, Debug)]
pub struct GridPoint {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    pub label: String,
}

/// Runs every point with at most `workers` concurrent points. Results come
/// back in input order whatever the interleaving.
pub fn run_grid(points: &[GridPoint], workers: usize) -> Vec<Result<AttackMetrics>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<AttackMetrics>>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, points.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(p) = points.get(i) else { break };
                info!("grid point {}/{}: {}", i + 1, points.len(), p.label);
                let r = run_point(&p.cfg, &p.dir, &p.label);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("every point ran")).collect()
}

/// Seed of replicate `index` of a sweep, counting across the whole grid.
/// Kept below 2^63 so the point's config still fits a TOML integer.
pub fn grid_seed(global: u64, sweep: &str, index: usize) -> u64 {
    rng::derive(global, sweep, index as u64) >> 1
}

pub fn lambda2_grid(cfg: &ExperimentConfig, out: &Path) -> Vec<GridPoint> {
    let mut points = Vec::new();
    for (i, &l2) in cfg.sweep.lambda2.iter().enumerate() {
        for r in 0..cfg.sweep.seeds {
            let mut c = cfg.clone();
            c.train.hp = HyperParams { lambda1: cfg.sweep.lambda1, lambda2: l2, mu1: cfg.sweep.mu1, mu2: cfg.sweep.mu2 };
            c.seed = grid_seed(cfg.seed, "sweep-lambda2", i * cfg.sweep.seeds + r);
            points.push(GridPoint { cfg: c, dir: out.join(format!("lambda2_{i}")).join(format!("seed_{r}")), label: format!("lambda2={l2}") });
        }
    }
    points
}

/// Tradeoff table row: one λ₂ value over its replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub lambda2: f64,
    pub seeds: Vec<u64>,
    pub mean_mcc: Summary,
    pub face_sim: Summary,
    pub feature_sim: Summary,
    pub ssim: Summary,
    pub psnr: Summary,
}

pub const TRADEOFF_HEADER: &str = "lambda2,n_seeds,mean_mcc,mean_mcc_min,mean_mcc_max,face_sim,face_sim_min,face_sim_max,\
feature_sim,feature_sim_min,feature_sim_max,ssim,ssim_min,ssim_max,psnr,psnr_min,psnr_max,attack_steps,seeds";

fn seeds_cell(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
}

/// Trains and attacks one encoder per (λ₂, replicate), then writes
/// `tradeoff.csv`, `tradeoff.json` and `tradeoff.svg`.
pub fn cmd_sweep_lambda2(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TradeoffRow>> {
    cfg.validate()?;
    if cfg.sweep.lambda2.is_empty() {
        return Err(Error::Config("sweep.lambda2 is empty".into()));
    }
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), cfg.to_toml())?;
    let points = lambda2_grid(cfg, out);
    let results = run_grid(&points, worker_count()).into_iter().collect::<Result<Vec<_>>>()?;
    let r = cfg.sweep.seeds;
    let rows: Vec<TradeoffRow> = cfg
        .sweep
        .lambda2
        .iter()
        .enumerate()
        .map(|(i, &l2)| {
            let group: Vec<&MetricsReport> = results[i * r..(i + 1) * r].iter().map(|a| &a.metrics).collect();
            TradeoffRow {
                lambda2: l2,
                seeds: group.iter().map(|m| m.meta.seed).collect(),
                mean_mcc: summarize_group(&group, |m| m.mean_mcc),
                face_sim: summarize_group(&group, |m| m.face_sim),
                feature_sim: summarize_group(&group, |m| m.feature_sim),
                ssim: summarize_group(&group, |m| m.ssim),
                psnr: summarize_group(&group, |m| m.psnr),
            }
        })
        .collect();
    let mut csv = format!("{TRADEOFF_HEADER}\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.lambda2,
            row.seeds.len(),
            row.mean_mcc.cells(),
            row.face_sim.cells(),
            row.feature_sim.cells(),
            row.ssim.cells(),
            row.psnr.cells(),
            cfg.attack.steps,
            seeds_cell(&row.seeds),
        ));
    }
    write(&out.join("tradeoff.csv"), csv)?;
    write(&out.join("tradeoff.json"), serde_json::to_string_pretty(&rows).expect("serializable"))?;
    let curve: Vec<svg::CurvePoint> = rows
        .iter()
        .map(|r| svg::CurvePoint { label: format!("λ₂={}", r.lambda2), x: r.face_sim, y: r.mean_mcc })
        .collect();
    write(&out.join("tradeoff.svg"), svg::tradeoff_plot("Utility vs privacy over λ₂", "face similarity", "mean MCC", &curve))?;
    Ok(rows)
}

pub fn layer_grid(cfg: &ExperimentConfig, out: &Path) -> Vec<GridPoint> {
    let mut points = Vec::new();
    let mut index = 0;
    for (t, tap) in cfg.sweep.taps.iter().enumerate() {
        for (variant, lambda1) in [("baseline", 0.0), ("adversarial", cfg.sweep.lambda1)] {
            for r in 0..cfg.sweep.seeds {
                let mut c = cfg.clone();
                c.nets.tap = tap.clone();
                c.train.hp.lambda1 = lambda1;
                if lambda1 == 0.0 {
                    c.train.hp.lambda2 = 0.0;
                }
                c.seed = grid_seed(cfg.seed, "sweep-layers", index);
                index += 1;
                points.push(GridPoint {
                    cfg: c,
                    dir: out.join(format!("tap_{t}_{tap}")).join(variant).join(format!("seed_{r}")),
                    label: format!("{tap}/{variant}"),
                });
            }
        }
    }
    points
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub tap: String,
    pub variant: String,
    pub seeds: Vec<u64>,
    pub face_sim: Summary,
    pub mean_mcc: Summary,
    pub s_w: Summary,
    pub s_b: Summary,
    /// Over the replicates with a bounded score.
    pub lda_score: Summary,
}

pub const LAYERS_HEADER: &str = "tap,variant,n_seeds,face_sim,face_sim_min,face_sim_max,mean_mcc,mean_mcc_min,mean_mcc_max,\
s_w,s_w_min,s_w_max,s_b,s_b_min,s_b_max,lda_score,lda_score_min,lda_score_max,attack_steps,seeds";

/// Trains a baseline and an adversarial encoder per tap and replicate and
/// writes `layers.csv` and `layers.json`.
pub fn cmd_sweep_layers(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<LayerRow>> {
    cfg.validate()?;
    if cfg.sweep.taps.is_empty() {
        return Err(Error::Config("sweep.taps is empty".into()));
    }
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), cfg.to_toml())?;
    let points = layer_grid(cfg, out);
    let results = run_grid(&points, worker_count()).into_iter().collect::<Result<Vec<_>>>()?;
    let r = cfg.sweep.seeds;
    let rows: Vec<LayerRow> = results
        .chunks(r)
        .zip(points.chunks(r))
        .map(|(res, pts)| {
            let group: Vec<&MetricsReport> = res.iter().map(|a| &a.metrics).collect();
            let bounded: Vec<&MetricsReport> = group.iter().copied().filter(|m| m.lda_score.is_some()).collect();
            LayerRow {
                tap: pts[0].cfg.nets.tap.clone(),
                variant: if pts[0].cfg.train.hp.lambda1 == 0.0 { "baseline" } else { "adversarial" }.to_string(),
                seeds: group.iter().map(|m| m.meta.seed).collect(),
                face_sim: summarize_group(&group, |m| m.face_sim),
                mean_mcc: summarize_group(&group, |m| m.mean_mcc),
                s_w: summarize_group(&group, |m| m.s_w),
                s_b: summarize_group(&group, |m| m.s_b),
                lda_score: summarize_group(&bounded, |m| m.lda_score.unwrap_or(f64::NAN)),
            }
        })
        .collect();
    let mut csv = format!("{LAYERS_HEADER}\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.tap,
            row.variant,
            row.seeds.len(),
            row.face_sim.cells(),
            row.mean_mcc.cells(),
            row.s_w.cells(),
            row.s_b.cells(),
            row.lda_score.cells(),
            cfg.attack.steps,
            seeds_cell(&row.seeds),
        ));
    }
    write(&out.join("layers.csv"), csv)?;
    write(&out.join("layers.json"), serde_json::to_string_pretty(&rows).expect("serializable"))?;
    Ok(rows)
}

/// Writes one projection scatter per run.
pub(crate) fn write_projection(path: &Path, title: &str, p: &FeatureProjection) -> Result<()> {
    write(path, svg::projection_plot(title, &p.points, &p.groups))
}

pub(crate) fn read_metrics(path: &Path) -> std::result::Result<AttackMetrics, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}
