//! Command implementations behind the CLI front end. Each command writes
//! its outputs plus a `config.resolved.json` that is sufficient to re-run
//! it; outputs carry no timestamps or absolute paths, so a fixed seed
//! reproduces them byte for byte.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use seismo_core::dataset::{assemble, fit_normalizer, AssembleOptions, Dataset, Normalizer};
use seismo_core::excitation::{self, GroundMotion, G_ACCEL};
use seismo_core::metrics::{
    build_report, ci_distribution, write_ci_histogram_csv, write_subset_csv, MetricsReport,
};
use seismo_core::network::{
    gradient_check, init_params, load_checkpoint, random_check_case, save_checkpoint, CellKind,
    GradCheckReport, Model, ModelArch,
};
use seismo_core::optimizer::{train, write_history_csv};

use crate::config::{RunConfig, SourceConfig};
use crate::CliError;

/// Gradient-check failures exit with a dedicated code at this threshold.
pub const GRADCHECK_FAIL_THRESHOLD: f64 = 1e-4;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create '{}': {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write '{}': {e}", path.display())))
}

/// Echoes the resolved configuration (plus command identity and arguments)
/// next to the outputs.
fn echo_resolved(
    out_dir: &Path,
    command: &str,
    args: &serde_json::Value,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Echo<'a> {
        command: &'a str,
        args: &'a serde_json::Value,
        config: &'a RunConfig,
    }
    let text = serde_json::to_string_pretty(&Echo {
        command,
        args,
        config: cfg,
    })
    .expect("config serializes");
    write_file(&out_dir.join("config.resolved.json"), text.as_bytes())
}

/// Builds the base (unscaled) records of one split.
fn base_records(
    cfg: &RunConfig,
    split: &str,
    count: usize,
    seed_offset: u64,
) -> Result<Vec<GroundMotion>, CliError> {
    match &cfg.excitation.source {
        SourceConfig::Synthetic => {
            let params = cfg.excitation.kanai_tajimi.to_params();
            (0..count)
                .map(|i| {
                    let seed = cfg
                        .seed
                        .wrapping_mul(10_000)
                        .wrapping_add(seed_offset + i as u64);
                    excitation::generate_synthetic(
                        &params,
                        cfg.excitation.duration_s,
                        cfg.excitation.dt_s,
                        seed,
                    )
                    .map_err(|e| CliError::Runtime(format!("{split} record {i}: {e}")))
                })
                .collect()
        }
        SourceConfig::Csv { dir, train, val, test } => {
            let names = match split {
                "train" => train,
                "val" => val,
                "test" => test,
                _ => unreachable!(),
            };
            if names.is_empty() {
                return Err(CliError::Config(format!(
                    "excitation.source: no CSV files listed for the {split} split"
                )));
            }
            names
                .iter()
                .map(|name| {
                    let path = Path::new(dir).join(name);
                    excitation::load_csv(&path, Some(cfg.excitation.dt_s)).map_err(|e| {
                        CliError::Runtime(format!("loading '{}': {e}", path.display()))
                    })
                })
                .collect()
        }
    }
}

/// Expands base records over the configured PGA levels.
fn expand_pga(
    base: Vec<GroundMotion>,
    levels_g: &[f64],
) -> Result<Vec<GroundMotion>, CliError> {
    if levels_g.is_empty() {
        return Ok(base);
    }
    let mut out = Vec::with_capacity(base.len() * levels_g.len());
    for gm in &base {
        for &g in levels_g {
            let scaled = gm
                .scale_to_pga(g * G_ACCEL)
                .map_err(|e| CliError::Runtime(format!("scaling '{}': {e}", gm.id())))?
                .with_id(format!("{}@{:.2}g", gm.id(), g));
            out.push(scaled);
        }
    }
    Ok(out)
}

pub struct GenerateOutputs {
    pub train_path: PathBuf,
    pub val_path: PathBuf,
    pub test_path: PathBuf,
    pub manifest_path: PathBuf,
    pub counts: [usize; 3],
    pub manifest_sha256: String,
}

/// `generate`: synthesize/ingest records, simulate the sample grids,
/// normalize, and write the three dataset containers plus a combined
/// audit manifest.
pub fn cmd_generate(cfg: &RunConfig, out_dir: &Path) -> Result<GenerateOutputs, CliError> {
    ensure_dir(out_dir)?;
    let sim = &cfg.simulator;

    let train_structs = cfg
        .structures
        .train
        .resolve(sim.damping, sim.model, "train")?;
    let eval_structs = cfg.structures.eval.resolve(sim.damping, sim.model, "eval")?;

    let levels = &cfg.excitation.pga_levels_g;
    let train_gms = expand_pga(base_records(cfg, "train", cfg.excitation.records.train, 0)?, levels)?;
    let val_gms = expand_pga(base_records(cfg, "val", cfg.excitation.records.val, 1000)?, levels)?;
    let test_gms = expand_pga(base_records(cfg, "test", cfg.excitation.records.test, 2000)?, levels)?;

    let opts = |split: &str| AssembleOptions {
        split: split.into(),
        seed: cfg.seed,
        substeps: sim.substeps,
        pga_levels_g: levels.clone(),
    };
    let train_ds = assemble(&train_gms, &train_structs, &opts("train"))
        .map_err(|e| CliError::Runtime(format!("assembling train split: {e}")))?;
    let val_ds = assemble(&val_gms, &eval_structs, &opts("val"))
        .map_err(|e| CliError::Runtime(format!("assembling val split: {e}")))?;
    let test_ds = assemble(&test_gms, &eval_structs, &opts("test"))
        .map_err(|e| CliError::Runtime(format!("assembling test split: {e}")))?;

    let norm = fit_normalizer(&train_ds, cfg.normalizer.target_mode)
        .map_err(|e| CliError::Runtime(format!("fitting normalizer: {e}")))?;
    let train_ds = train_ds.normalized(&norm);
    let val_ds = val_ds.normalized(&norm);
    let test_ds = test_ds.normalized(&norm);

    let train_path = out_dir.join("train.sds");
    let val_path = out_dir.join("val.sds");
    let test_path = out_dir.join("test.sds");
    train_ds
        .save(&train_path)
        .and_then(|_| val_ds.save(&val_path))
        .and_then(|_| test_ds.save(&test_path))
        .map_err(|e| CliError::Runtime(format!("writing datasets: {e}")))?;

    let combined = serde_json::json!({
        "train": train_ds.manifest,
        "val": val_ds.manifest,
        "test": test_ds.manifest,
    });
    let manifest_text = serde_json::to_string_pretty(&combined).expect("manifest serializes");
    let manifest_path = out_dir.join("manifest.json");
    write_file(&manifest_path, manifest_text.as_bytes())?;
    let manifest_sha256 = hex_digest(manifest_text.as_bytes());

    echo_resolved(out_dir, "generate", &serde_json::json!({}), cfg)?;

    let counts = [train_ds.len(), val_ds.len(), test_ds.len()];
    log::info!(
        "generated {} / {} / {} samples (train/val/test), manifest sha256 {}",
        counts[0],
        counts[1],
        counts[2],
        manifest_sha256
    );
    Ok(GenerateOutputs {
        train_path,
        val_path,
        test_path,
        manifest_path,
        counts,
        manifest_sha256,
    })
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct TrainOutputs {
    pub checkpoint_path: PathBuf,
    pub history_path: PathBuf,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub epochs_run: usize,
}

/// `train`: fit the configured model on `data_dir/{train,val}.sds`.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutputs, CliError> {
    ensure_dir(out_dir)?;
    let train_ds = Dataset::load(data_dir.join("train.sds"))
        .map_err(|e| CliError::Runtime(format!("loading train split: {e}")))?;
    let val_ds = Dataset::load(data_dir.join("val.sds"))
        .map_err(|e| CliError::Runtime(format!("loading val split: {e}")))?;
    let normalizer = train_ds.manifest.normalizer.ok_or_else(|| {
        CliError::Runtime("train dataset carries no normalizer; re-run generate".into())
    })?;

    let arch = cfg.arch.to_arch();
    let model = init_params(arch, cfg.seed);
    let mut train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;

    log::info!(
        "training {} ({} layers × {} hidden, {} parameters) on {} samples",
        arch.cell,
        arch.num_layers,
        arch.hidden_size,
        model.num_params(),
        train_ds.len()
    );
    let result = train(model, &train_ds, &val_ds, &train_cfg)
        .map_err(|e| CliError::Runtime(format!("training: {e}")))?;

    let checkpoint_path = out_dir.join("checkpoint.ckpt");
    let extra = serde_json::json!({
        "seed": cfg.seed,
        "train_config": train_cfg,
        "normalizer": normalizer,
        "dt": train_ds.manifest.dt,
        "best_epoch": result.best_epoch,
        "best_val_mse": result.best_val_mse,
    });
    save_checkpoint(&result.model, &extra, &checkpoint_path)
        .map_err(|e| CliError::Runtime(format!("writing checkpoint: {e}")))?;

    let history_path = out_dir.join("history.csv");
    let mut buf = Vec::new();
    write_history_csv(&result.history, &mut buf)
        .map_err(|e| CliError::Runtime(format!("writing history: {e}")))?;
    write_file(&history_path, &buf)?;

    echo_resolved(
        out_dir,
        "train",
        &serde_json::json!({"data_dir": data_dir.file_name().map(|s| s.to_string_lossy().into_owned())}),
        cfg,
    )?;

    log::info!(
        "best epoch {} with validation MSE {:.3e} ({} epochs run)",
        result.best_epoch,
        result.best_val_mse,
        result.history.len()
    );
    Ok(TrainOutputs {
        checkpoint_path,
        history_path,
        best_epoch: result.best_epoch,
        best_val_mse: result.best_val_mse,
        epochs_run: result.history.len(),
    })
}

pub struct EvaluateOutputs {
    pub metrics_path: PathBuf,
    pub report: MetricsReport,
}

/// `evaluate`: run a checkpoint over a dataset and emit the metrics report
/// (aggregate JSON, subset CSV, CI histogram CSV, and a capped number of
/// per-sample prediction CSVs). Metrics are computed on denormalized
/// displacements in meters.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset: &Path,
    out_dir: &Path,
) -> Result<EvaluateOutputs, CliError> {
    ensure_dir(out_dir)?;
    let (model, extra) = load_checkpoint(checkpoint)
        .map_err(|e| CliError::Runtime(format!("loading checkpoint: {e}")))?;
    let ds = Dataset::load(dataset)
        .map_err(|e| CliError::Runtime(format!("loading dataset: {e}")))?;

    let normalizer: Normalizer = match ds.manifest.normalizer {
        Some(n) => n,
        None => serde_json::from_value(extra.get("normalizer").cloned().unwrap_or_default())
            .map_err(|_| {
                CliError::Runtime("neither dataset nor checkpoint carries a normalizer".into())
            })?,
    };
    if let Some(ckpt_norm) = extra
        .get("normalizer")
        .and_then(|v| serde_json::from_value::<Normalizer>(v.clone()).ok())
    {
        if ds.manifest.normalizer.is_some() && ckpt_norm != normalizer {
            log::warn!("checkpoint and dataset normalizers differ; using the dataset's");
        }
    }

    let records = predict_dataset(&model, &ds, &normalizer);
    let report =
        build_report(&records).map_err(|e| CliError::Runtime(format!("building report: {e}")))?;

    let metrics_path = out_dir.join("metrics.json");
    let metrics_text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&metrics_path, metrics_text.as_bytes())?;

    let mut buf = Vec::new();
    write_subset_csv(&report.subsets, &mut buf)
        .map_err(|e| CliError::Runtime(format!("subset csv: {e}")))?;
    write_file(&out_dir.join("subsets.csv"), &buf)?;

    let ci_values: Vec<f64> = report.per_sample.iter().filter_map(|s| s.ci).collect();
    if !ci_values.is_empty() {
        let hist = ci_distribution(&ci_values, cfg.eval.ci_bins)
            .map_err(|e| CliError::Runtime(format!("ci histogram: {e}")))?;
        let mut buf = Vec::new();
        write_ci_histogram_csv(&hist, &mut buf)
            .map_err(|e| CliError::Runtime(format!("ci histogram csv: {e}")))?;
        write_file(&out_dir.join("ci_histogram.csv"), &buf)?;
    }

    let pred_dir = out_dir.join("predictions");
    ensure_dir(&pred_dir)?;
    for (i, rec) in records
        .iter()
        .take(cfg.eval.max_prediction_csvs)
        .enumerate()
    {
        let name = format!(
            "sample_{i:04}_{}.csv",
            rec.gm_id.replace(['/', '\\'], "_")
        );
        let mut buf = Vec::new();
        writeln!(buf, "time_s,pred_m,truth_m").expect("vec write");
        for (t, (p, y)) in rec.pred_m.iter().zip(&rec.truth_m).enumerate() {
            writeln!(buf, "{},{},{}", t as f64 * ds.manifest.dt, p, y).expect("vec write");
        }
        write_file(&pred_dir.join(name), &buf)?;
    }

    echo_resolved(
        out_dir,
        "evaluate",
        &serde_json::json!({
            "checkpoint": checkpoint.file_name().map(|s| s.to_string_lossy().into_owned()),
            "dataset": dataset.file_name().map(|s| s.to_string_lossy().into_owned()),
        }),
        cfg,
    )?;

    log::info!(
        "aggregate over {} samples: mse {:.3e}, mae {:.3e}, r2 {:.4}",
        report.aggregate.n_samples,
        report.aggregate.mse,
        report.aggregate.mae,
        report.aggregate.r2
    );
    Ok(EvaluateOutputs {
        metrics_path,
        report,
    })
}

/// Forward-evaluates every sample of a dataset, denormalizing predictions
/// to meters.
pub fn predict_dataset(
    model: &Model,
    ds: &Dataset,
    normalizer: &Normalizer,
) -> Vec<seismo_core::metrics::PredictionRecord> {
    use rayon::prelude::*;
    ds.samples
        .par_iter()
        .map(|s| {
            let (pred, _) = model.forward(&s.input_gm, s.input_struct);
            seismo_core::metrics::PredictionRecord {
                gm_id: s.gm_id.clone(),
                stiffness: s.structure.stiffness,
                mass: s.structure.mass,
                pred_m: normalizer.denormalize_target_series(&pred),
                truth_m: s.raw_target.clone(),
            }
        })
        .collect()
}

/// `predict`: run a checkpoint on one raw record (CSV) and a raw
/// (stiffness, mass) pair; writes `prediction.csv` in meters.
pub fn cmd_predict(
    checkpoint: &Path,
    gm_csv: &Path,
    stiffness: f64,
    mass: f64,
    out_dir: &Path,
) -> Result<PathBuf, CliError> {
    ensure_dir(out_dir)?;
    let (model, extra) = load_checkpoint(checkpoint)
        .map_err(|e| CliError::Runtime(format!("loading checkpoint: {e}")))?;
    let normalizer: Normalizer =
        serde_json::from_value(extra.get("normalizer").cloned().unwrap_or_default()).map_err(
            |_| CliError::Runtime("checkpoint carries no normalizer; cannot predict".into()),
        )?;

    let dt = extra.get("dt").and_then(|v| v.as_f64());
    let gm = excitation::load_csv(gm_csv, dt)
        .map_err(|e| CliError::Runtime(format!("loading record: {e}")))?;

    let input_gm: Vec<f64> = gm.accel().iter().map(|a| normalizer.gm.normalize(*a)).collect();
    let feats = [
        normalizer.stiffness.normalize(stiffness),
        normalizer.mass.normalize(mass),
    ];
    let (pred, _) = model.forward(&input_gm, feats);
    let pred_m = normalizer.denormalize_target_series(&pred);

    let path = out_dir.join("prediction.csv");
    let mut buf = Vec::new();
    writeln!(buf, "time_s,pred_m").expect("vec write");
    for (t, p) in pred_m.iter().enumerate() {
        writeln!(buf, "{},{}", t as f64 * gm.dt(), p).expect("vec write");
    }
    write_file(&path, &buf)?;
    log::info!("wrote {} predicted samples to {}", pred_m.len(), path.display());
    Ok(path)
}

pub struct GradcheckArgs {
    pub cell: CellKind,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub seq_len: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        GradcheckArgs {
            cell: CellKind::McGru,
            num_layers: 2,
            hidden_size: 8,
            seq_len: 20,
            eps: 1e-6,
            seed: 42,
        }
    }
}

/// `gradcheck`: finite-difference sweep over a small random model.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<GradCheckReport, CliError> {
    let arch = ModelArch::new(args.cell, args.num_layers, args.hidden_size);
    let (model, gm, feats, target) = random_check_case(arch, args.seed, args.seq_len);
    log::info!(
        "checking {} gradient coordinates (cell {}, {}×{}, T = {})",
        model.num_params(),
        args.cell,
        args.num_layers,
        args.hidden_size,
        args.seq_len
    );
    let report = gradient_check(&model, &gm, feats, &target, args.eps);
    println!(
        "gradcheck: max relative error {:.3e} over {} parameters (worst: {}[{}])",
        report.max_rel_error, report.n_params, report.worst_tensor, report.worst_index
    );
    if report.max_rel_error >= GRADCHECK_FAIL_THRESHOLD {
        return Err(CliError::GradcheckFailed {
            max_rel_error: report.max_rel_error,
        });
    }
    Ok(report)
}
