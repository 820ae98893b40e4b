use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cvgeo_core::data::{
    generate_synthetic, load_manifest, load_pairs, rotated_pair, write_feature_map, write_manifest,
    CrossViewPair, ManifestEntry, Split, SyntheticConfig,
};
use cvgeo_core::explain::pair_maps;
use cvgeo_core::losses::{LossConfig, LossKind};
use cvgeo_core::model::{load_checkpoint, save_checkpoint, ModelParams, View};
use cvgeo_core::numerics::{Rng, VectorK};
use cvgeo_core::orientation::{
    error_distribution, error_histogram_svg, estimate_all, rotation_truth, train_regression_baseline,
    OrientationComparison,
};
use cvgeo_core::plot::{bar_chart, line_chart, Series};
use cvgeo_core::retrieval::{ground_truth_ranks, recall_at, recall_curve, top_one_percent_k, EmbeddingIndex};
use cvgeo_core::trainer::{
    alignment_matrix, embed_all, similarity_stats, train_with, MiningMode, TrainReport, TrainingConfig,
};
use cvgeo_core::Error;
use serde::Serialize;

use crate::config::{AblationKind, RunConfig};

/// Output directory of one invocation.
pub struct RunDir {
    root: PathBuf,
    timing: String,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            timing: String::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| io_err(&p, e))?;
        Ok(())
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write(name, serde_json::to_string_pretty(value)? + "\n")
    }

    pub fn log_time(&mut self, what: &str, secs: f64) {
        let _ = writeln!(self.timing, "{what}\t{secs:.3}");
    }

    /// Wall-clock times go to their own file so the rest stays reproducible.
    pub fn finish(self) -> Result<()> {
        if self.timing.is_empty() {
            return Ok(());
        }
        let p = self.path("timing.log");
        fs::write(&p, &self.timing).map_err(|e| io_err(&p, e))?;
        Ok(())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn pairs_from(manifest: &Path, split: Split) -> Result<Vec<CrossViewPair>> {
    let m = load_manifest(manifest, split)?;
    Ok(load_pairs(&m)?)
}

/// Training and validation pairs from manifests, or generated in memory
/// from the synthetic and split sections.
fn training_data(cfg: &RunConfig) -> Result<(Vec<CrossViewPair>, Vec<CrossViewPair>)> {
    match &cfg.data.train_manifest {
        Some(train) => {
            let val = match &cfg.data.val_manifest {
                Some(v) => pairs_from(v, Split::Val)?,
                None => Vec::new(),
            };
            Ok((pairs_from(train, Split::Train)?, val))
        }
        None => {
            let n = cfg.split.train + cfg.split.val;
            let mut all = generate_synthetic(&SyntheticConfig {
                n_pairs: n,
                ..cfg.synthetic.clone()
            })?;
            let val = all.split_off(cfg.split.train);
            Ok((all, val))
        }
    }
}

pub fn gen(cfg: &RunConfig, run: &mut RunDir) -> Result<String> {
    let split = &cfg.split;
    let total = split.train + split.val + split.test;
    let pairs = generate_synthetic(&SyntheticConfig {
        n_pairs: total,
        ..cfg.synthetic.clone()
    })?;
    fs::create_dir_all(run.path("data")).map_err(|e| io_err(&run.path("data"), e))?;
    let mut rng = Rng::derived(cfg.synthetic.seed, u64::MAX - 1);
    let bounds = [
        ("train", 0, split.train),
        ("val", split.train, split.train + split.val),
        ("test", split.train + split.val, total),
    ];
    let mut summary = String::new();
    for (name, lo, hi) in bounds {
        let mut entries = Vec::with_capacity(hi - lo);
        for pair in &pairs[lo..hi] {
            let pair = if name == "test" && split.rotate_test {
                rotated_pair(pair, rng.uniform_range(0.0, 360.0))?
            } else {
                pair.clone()
            };
            let street = format!("data/{}_street.cvfm", pair.id);
            let aerial = format!("data/{}_aerial.cvfm", pair.id);
            write_feature_map(run.path(&street), &pair.street)?;
            write_feature_map(run.path(&aerial), &pair.aerial)?;
            entries.push(ManifestEntry {
                id: pair.id.clone(),
                street_path: street,
                aerial_path: aerial,
                rotation_deg: pair.rotation_deg,
            });
        }
        write_manifest(run.path(&format!("{name}.json")), &entries)?;
        let _ = writeln!(summary, "{name}: {} pairs -> {name}.json", entries.len());
    }
    Ok(summary)
}

fn similarity_lists(streets: &[VectorK], aerials: &[VectorK]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut sp = Vec::new();
    let mut sn = Vec::new();
    for (i, s) in streets.iter().enumerate() {
        for (j, a) in aerials.iter().enumerate() {
            let v = s.dot(a)?;
            if i == j {
                sp.push(v);
            } else {
                sn.push(v);
            }
        }
    }
    Ok((sp, sn))
}

/// Normalized histogram over `[-1, 1]` as `(bin center, fraction)`.
fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64)> {
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let width = 2.0 / bins as f64;
    counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            (
                -1.0 + (b as f64 + 0.5) * width,
                c as f64 / values.len().max(1) as f64,
            )
        })
        .collect()
}

fn training_plots(run: &RunDir, report: &TrainReport) -> Result<()> {
    let loss: Vec<(f64, f64)> = report
        .epochs
        .iter()
        .map(|e| (e.epoch as f64, e.mean_loss))
        .collect();
    run.write(
        "loss.svg",
        line_chart(
            "training loss",
            "epoch",
            "mean loss",
            &[Series::new("loss", loss)],
        ),
    )?;
    let r1: Vec<(f64, f64)> = report
        .epochs
        .iter()
        .filter_map(|e| e.recall_at_1.map(|r| (e.epoch as f64, r)))
        .collect();
    if !r1.is_empty() {
        let r1p: Vec<(f64, f64)> = report
            .epochs
            .iter()
            .filter_map(|e| e.recall_top1pct.map(|r| (e.epoch as f64, r)))
            .collect();
        run.write(
            "recall.svg",
            line_chart(
                "validation recall",
                "epoch",
                "recall",
                &[Series::new("top-1", r1), Series::new("top-1%", r1p)],
            ),
        )?;
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, run: &mut RunDir) -> Result<String> {
    let (train_pairs, val) = training_data(cfg)?;
    let mut epoch_lines = String::new();
    let (params, report) = train_with(&train_pairs, &val, &cfg.training, |e, _| {
        let _ = write!(
            epoch_lines,
            "epoch {:>3}  {:?}  loss {:.5}",
            e.epoch, e.loss_kind, e.mean_loss
        );
        if let (Some(r1), Some(r1p)) = (e.recall_at_1, e.recall_top1pct) {
            let _ = write!(
                epoch_lines,
                "  top-1 {:.1}%  top-1% {:.1}%",
                100.0 * r1,
                100.0 * r1p
            );
        }
        epoch_lines.push('\n');
    })?;
    for e in &report.epochs {
        run.log_time(&format!("epoch {}", e.epoch), e.wall_clock_secs);
    }
    save_checkpoint(run.path("checkpoint.cvmp"), &params)?;
    run.write_json("report.json", &report)?;
    training_plots(run, &report)?;
    if !val.is_empty() {
        let streets = embed_all(&params, &val, View::Street)?;
        let aerials = embed_all(&params, &val, View::Aerial)?;
        let (sp, sn) = similarity_lists(&streets, &aerials)?;
        run.write(
            "similarity.svg",
            bar_chart(
                "validation similarity distribution",
                "cosine similarity",
                "fraction",
                0.04,
                &[
                    Series::new("positive", histogram(&sp, 50)),
                    Series::new("negative", histogram(&sn, 50)),
                ],
            ),
        )?;
    }
    Ok(format!(
        "trained on {} pairs, validated on {}\n{epoch_lines}checkpoint: {}",
        train_pairs.len(),
        val.len(),
        run.path("checkpoint.cvmp").display()
    ))
}

#[derive(Serialize)]
struct EvalReport {
    n_queries: usize,
    recall: Vec<(usize, f64)>,
    top1pct_k: usize,
    recall_top1pct: f64,
    curve: Vec<(usize, f64)>,
    mean_p: f64,
    var_p: f64,
    mean_n: f64,
    var_n: f64,
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, run: &mut RunDir) -> Result<String> {
    let params = load_checkpoint(checkpoint)?;
    let pairs = pairs_from(manifest, Split::Test)?;
    let streets = embed_all(&params, &pairs, View::Street)?;
    let aerials = embed_all(&params, &pairs, View::Aerial)?;
    let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let index = EmbeddingIndex::new(ids.clone(), aerials.clone())?;
    let ranks = ground_truth_ranks(&streets, &ids, &index)?;
    let n = pairs.len();
    let mut ks = cfg.eval.ks.clone();
    ks.push(top_one_percent_k(n));
    let report = recall_at(&ranks, &ks, n)?;
    let curve = recall_curve(&report, cfg.eval.curve_max_k);
    let sim = similarity_stats(&streets, &aerials)?;
    run.write(
        "recall_curve.svg",
        line_chart(
            "recall@k",
            "k",
            "recall",
            &[Series::new(
                "street to aerial",
                curve.iter().map(|&(k, r)| (k as f64, r)).collect(),
            )],
        ),
    )?;
    let out = EvalReport {
        n_queries: n,
        recall: report.recall.clone(),
        top1pct_k: report.top1pct_k,
        recall_top1pct: report.recall_top1pct,
        curve,
        mean_p: sim.mean_p,
        var_p: sim.var_p,
        mean_n: sim.mean_n,
        var_n: sim.var_n,
    };
    run.write_json("eval.json", &out)?;
    let mut s = format!("{n} queries\n");
    for (k, r) in &report.recall {
        let _ = writeln!(s, "recall@{k:<4} {:.2}%", 100.0 * r);
    }
    let _ = write!(
        s,
        "top-1% (k={}) {:.2}%",
        report.top1pct_k,
        100.0 * report.recall_top1pct
    );
    Ok(s)
}

#[derive(Serialize)]
struct GridRow {
    seed: u64,
    setting: String,
    recall_at_1: f64,
    recall_top1pct: f64,
    var_p: f64,
    var_n: f64,
}

pub fn ablate(cfg: &RunConfig, run: &mut RunDir) -> Result<String> {
    let (train_pairs, val) = training_data(cfg)?;
    if val.is_empty() {
        return Err(Error::Config("ablation needs validation pairs".into()).into());
    }
    let mut text = String::new();
    match cfg.ablation.kind {
        AblationKind::Alignment => {
            let mut rows = Vec::new();
            for &seed in &cfg.ablation.seeds {
                let tc = TrainingConfig {
                    seed,
                    ..cfg.training.clone()
                };
                let m = alignment_matrix(&tc, &train_pairs, &val)?;
                let _ = writeln!(text, "seed {seed}\n{}", m.table());
                rows.push((seed, m));
            }
            run.write_json("ablation.json", &rows)?;
        }
        AblationKind::Mining | AblationKind::Loss => {
            let settings: Vec<(String, TrainingConfig)> = if cfg.ablation.kind == AblationKind::Mining {
                [MiningMode::None, MiningMode::Batch, MiningMode::Global]
                    .into_iter()
                    .map(|m| {
                        (
                            format!("{m:?}").to_lowercase(),
                            TrainingConfig {
                                mining: m,
                                ..cfg.training.clone()
                            },
                        )
                    })
                    .collect()
            } else {
                let soft = TrainingConfig {
                    warmup_epochs: cfg.training.epochs,
                    ..cfg.training.clone()
                };
                let binomial = TrainingConfig {
                    loss: LossConfig {
                        kind: LossKind::BinomialAsym,
                        ..cfg.training.loss.clone()
                    },
                    ..cfg.training.clone()
                };
                vec![("soft-margin".into(), soft), ("binomial".into(), binomial)]
            };
            let mut rows = Vec::new();
            let _ = writeln!(
                text,
                "{:<6} {:<12} {:>8} {:>8} {:>9} {:>9}",
                "seed", "setting", "top-1", "top-1%", "var s_p", "var s_n"
            );
            for &seed in &cfg.ablation.seeds {
                for (name, tc) in &settings {
                    let tc = TrainingConfig { seed, ..tc.clone() };
                    let (_, report) = train_with(&train_pairs, &val, &tc, |_, _| {})?;
                    let e = report.last().context("no epochs were run")?;
                    let s = e.similarity.context("no validation statistics")?;
                    let row = GridRow {
                        seed,
                        setting: name.clone(),
                        recall_at_1: e.recall_at_1.unwrap_or(f64::NAN),
                        recall_top1pct: e.recall_top1pct.unwrap_or(f64::NAN),
                        var_p: s.var_p,
                        var_n: s.var_n,
                    };
                    let _ = writeln!(
                        text,
                        "{:<6} {:<12} {:>7.1}% {:>7.1}% {:>9.4} {:>9.4}",
                        seed,
                        name,
                        100.0 * row.recall_at_1,
                        100.0 * row.recall_top1pct,
                        row.var_p,
                        row.var_n
                    );
                    rows.push(row);
                }
            }
            run.write_json("ablation.json", &rows)?;
        }
    }
    run.write("ablation.txt", &text)?;
    Ok(text.trim_end().to_string())
}

#[derive(Serialize)]
struct MapRecord {
    id: String,
    street_pgm: String,
    aerial_pgm: String,
    street_max: f64,
    aerial_max: f64,
}

pub fn gradcam(checkpoint: &Path, manifest: &Path, ids: &[String], run: &mut RunDir) -> Result<String> {
    let params = load_checkpoint(checkpoint)?;
    let pairs = pairs_from(manifest, Split::Test)?;
    let chosen: Vec<&CrossViewPair> = if ids.is_empty() {
        pairs.iter().take(1).collect()
    } else {
        ids.iter()
            .map(|id| {
                pairs
                    .iter()
                    .find(|p| &p.id == id)
                    .ok_or_else(|| Error::Manifest(format!("no pair with id {id:?}")))
            })
            .collect::<std::result::Result<_, _>>()?
    };
    let mut records = Vec::new();
    for p in chosen {
        let (s, a) = pair_maps(&params, &p.street, &p.aerial, Some(&p.id), Some(&p.id))?;
        let street_pgm = format!("{}_street.pgm", p.id);
        let aerial_pgm = format!("{}_aerial.pgm", p.id);
        s.write_pgm(run.path(&street_pgm))?;
        a.write_pgm(run.path(&aerial_pgm))?;
        run.write_json(&format!("{}_maps.json", p.id), &(&s, &a))?;
        records.push(MapRecord {
            id: p.id.clone(),
            street_pgm,
            aerial_pgm,
            street_max: s.max(),
            aerial_max: a.max(),
        });
    }
    run.write_json("gradcam.json", &records)?;
    Ok(records
        .iter()
        .map(|r| format!("{}: {} {}", r.id, r.street_pgm, r.aerial_pgm))
        .collect::<Vec<_>>()
        .join("\n"))
}

#[derive(Serialize)]
struct OrientRecord {
    id: String,
    phi_deg: f64,
    correlation_peak: f64,
    secondary_peak: Option<(f64, f64)>,
    truth_deg: Option<f64>,
}

pub fn orient(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    baseline: bool,
    run: &mut RunDir,
) -> Result<String> {
    let params: ModelParams = load_checkpoint(checkpoint)?;
    let pairs = pairs_from(manifest, Split::Test)?;
    let est = estimate_all(&params, &pairs, &cfg.orientation)?;
    let records: Vec<OrientRecord> = pairs
        .iter()
        .zip(&est)
        .map(|(p, e)| OrientRecord {
            id: p.id.clone(),
            phi_deg: e.phi_deg,
            correlation_peak: e.correlation_peak,
            secondary_peak: e.secondary_peak,
            truth_deg: p.rotation_deg,
        })
        .collect();
    run.write_json("orientation.json", &records)?;
    if pairs.iter().any(|p| p.rotation_deg.is_none()) {
        return Ok(format!(
            "{} estimates written (no ground truth to score)",
            records.len()
        ));
    }
    let phis: Vec<f64> = est.iter().map(|e| e.phi_deg).collect();
    let dist = error_distribution(&phis, &rotation_truth(&pairs)?)?;
    let mut s = format!(
        "{} pairs: |error| <= 3.5 deg {:.1}%, <= 1 deg {:.1}%, near 180 deg {:.1}%",
        pairs.len(),
        100.0 * dist.within_3_5,
        100.0 * dist.fraction_within(1.0),
        100.0 * dist.near_180_within_5
    );
    if baseline {
        let train_manifest = cfg
            .data
            .train_manifest
            .as_ref()
            .ok_or_else(|| Error::Config("the regression baseline needs data.train_manifest".into()))?;
        let train_pairs = pairs_from(train_manifest, Split::Train)?;
        let mut rng = Rng::derived(cfg.regression.seed, 1);
        // the baseline is supervised: give its training pairs known rotations
        let train_pairs = train_pairs
            .iter()
            .map(|p| rotated_pair(p, rng.uniform_range(0.0, 360.0)))
            .collect::<cvgeo_core::Result<Vec<_>>>()?;
        let (_, reg) = train_regression_baseline(&params, &train_pairs, &pairs, &cfg.regression)?;
        let cmp = OrientationComparison {
            correlation: dist.clone(),
            regression: reg,
        };
        run.write("orientation_errors.svg", cmp.svg())?;
        run.write_json("orientation_report.json", &cmp)?;
        s = format!("{s}\n{}", cmp.summary().trim_end());
    } else {
        run.write(
            "orientation_errors.svg",
            error_histogram_svg("orientation error distribution", &[("correlation", &dist)]),
        )?;
        run.write_json("orientation_report.json", &dist)?;
    }
    Ok(s)
}
