//! Merging finished runs into one table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use privshield_core::metrics::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runner::{read_metrics, write_projection, AttackMetrics, METRICS_FILE};
use crate::stats::{summarize_group, Summary};
use crate::svg::{tradeoff_plot, CurvePoint};

/// Runs sharing everything but the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub label: String,
    pub tap: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub train_alternations: usize,
    pub attack_steps: usize,
    pub mapper_steps: usize,
    pub seeds: Vec<u64>,
    pub mean_mcc: Summary,
    pub face_sim: Summary,
    pub feature_sim: Summary,
    pub ssim: Summary,
    pub psnr: Summary,
    pub lda_score: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOutcome {
    /// One per distinct config hash, ordered by hash.
    pub rows: Vec<MetricsReport>,
    pub groups: Vec<GroupRow>,
    pub warnings: Vec<String>,
}

fn find_reports(dir: &Path, found: &mut Vec<PathBuf>) {
    let Ok(entries) = fs::read_dir(dir) else { return };
    let mut entries: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_reports(&p, found);
        } else if p.file_name().is_some_and(|n| n == METRICS_FILE) {
            found.push(p);
        }
    }
}

fn group_key(m: &MetricsReport) -> String {
    let t = &m.meta;
    format!(
        "{}|{}|{}|{}|{}|{}|{}|{}|{}",
        t.label, t.tap, t.train_hp.lambda1, t.train_hp.lambda2, t.attack_mu1, t.attack_mu2,
        t.train_alternations, t.attack_steps, t.mapper_steps
    )
}

/// Collects every `attack_metrics.json` under `dirs` (searched recursively)
/// and writes `report.csv`, `summary.csv`, `report.json`, `tradeoff.svg`
/// and one projection plot per run into `out`. Unreadable inputs become
/// warnings.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<ReportOutcome> {
    let mut warnings = Vec::new();
    let mut by_hash: BTreeMap<String, AttackMetrics> = BTreeMap::new();
    for dir in dirs {
        let mut files = Vec::new();
        if dir.is_file() {
            files.push(dir.clone());
        } else {
            find_reports(dir, &mut files);
        }
        if files.is_empty() {
            warnings.push(format!("{}: no {METRICS_FILE} found", dir.display()));
        }
        for f in files {
            match read_metrics(&f) {
                Ok(m) => {
                    by_hash.entry(m.metrics.meta.config_hash.clone()).or_insert(m);
                }
                Err(e) => warnings.push(format!("{}: {e}", f.display())),
            }
        }
    }
    for w in &warnings {
        warn!("{w}");
    }

    let rows: Vec<MetricsReport> = by_hash.values().map(|m| m.metrics.clone()).collect();
    let mut grouped: BTreeMap<String, Vec<&MetricsReport>> = BTreeMap::new();
    for r in &rows {
        grouped.entry(group_key(r)).or_default().push(r);
    }
    let groups: Vec<GroupRow> = grouped
        .values()
        .map(|g| {
            let t = &g[0].meta;
            let bounded: Vec<&MetricsReport> = g.iter().copied().filter(|m| m.lda_score.is_some()).collect();
            GroupRow {
                label: t.label.clone(),
                tap: t.tap.clone(),
                lambda1: t.train_hp.lambda1,
                lambda2: t.train_hp.lambda2,
                mu1: t.attack_mu1,
                mu2: t.attack_mu2,
                train_alternations: t.train_alternations,
                attack_steps: t.attack_steps,
                mapper_steps: t.mapper_steps,
                seeds: g.iter().map(|m| m.meta.seed).collect(),
                mean_mcc: summarize_group(g, |m| m.mean_mcc),
                face_sim: summarize_group(g, |m| m.face_sim),
                feature_sim: summarize_group(g, |m| m.feature_sim),
                ssim: summarize_group(g, |m| m.ssim),
                psnr: summarize_group(g, |m| m.psnr),
                lda_score: summarize_group(&bounded, |m| m.lda_score.unwrap_or(f64::NAN)),
            }
        })
        .collect();

    let projections = out.join("projections");
    fs::create_dir_all(&projections).map_err(Error::io(&projections))?;
    let write = |p: PathBuf, s: String| fs::write(&p, s).map_err(Error::io(&p));

    let mut csv = format!("{}\n", MetricsReport::CSV_HEADER);
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write(out.join("report.csv"), csv)?;

    let mut summary = String::from(
        "label,tap,lambda1,lambda2,mu1,mu2,train_alternations,attack_steps,mapper_steps,n_seeds,\
mean_mcc,mean_mcc_min,mean_mcc_max,face_sim,face_sim_min,face_sim_max,feature_sim,feature_sim_min,feature_sim_max,\
ssim,ssim_min,ssim_max,psnr,psnr_min,psnr_max,lda_score,lda_score_min,lda_score_max\n",
    );
    for g in &groups {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            g.label, g.tap, g.lambda1, g.lambda2, g.mu1, g.mu2, g.train_alternations, g.attack_steps, g.mapper_steps,
            g.seeds.len(), g.mean_mcc.cells(), g.face_sim.cells(), g.feature_sim.cells(), g.ssim.cells(), g.psnr.cells(),
            g.lda_score.cells()
        ));
    }
    write(out.join("summary.csv"), summary)?;

    let curve: Vec<CurvePoint> = groups
        .iter()
        .map(|g| CurvePoint { label: format!("{} λ₁={} λ₂={}", g.tap, g.lambda1, g.lambda2), x: g.face_sim, y: g.mean_mcc })
        .collect();
    write(out.join("tradeoff.svg"), tradeoff_plot("Utility vs privacy", "face similarity", "mean MCC", &curve))?;
    for (hash, m) in &by_hash {
        let title = format!("{} seed {} ({hash})", m.metrics.meta.label, m.metrics.meta.seed);
        write_projection(&projections.join(format!("{hash}.svg")), &title, &m.projection)?;
    }

    let outcome = ReportOutcome { rows, groups, warnings };
    write(out.join("report.json"), serde_json::to_string_pretty(&outcome).expect("serializable"))?;
    Ok(outcome)
}
