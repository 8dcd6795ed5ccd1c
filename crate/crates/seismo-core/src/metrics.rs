//! Evaluation metrics on physical-unit displacements: MSE, MAE, R², the
//! correlation index (Pearson correlation with population statistics), the
//! per-structure subset ranking, and the CI histogram.
//!
//! All metrics are computed on denormalized displacements in meters. The
//! aggregate R² pools every (prediction, truth) point across samples;
//! per-sample values are reported alongside.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {pred} predictions vs {truth} truth values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("series too short: need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("zero variance in '{which}' series")]
    ZeroVariance { which: &'static str },
    #[error("invalid input: {0}")]
    Invalid(String),
}

fn check_pair(pred: &[f64], truth: &[f64], min_len: usize) -> Result<(), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.len() < min_len {
        return Err(MetricsError::TooShort {
            need: min_len,
            got: pred.len(),
        });
    }
    Ok(())
}

/// Mean squared error `Σ(y−ŷ)²/n`.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    check_pair(pred, truth, 1)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Mean absolute error `Σ|y−ŷ|/n`.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    check_pair(pred, truth, 1)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n)
}

/// Coefficient of determination `1 − Σ(y−ŷ)²/Σ(y−ȳ)²`.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    check_pair(pred, truth, 2)?;
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ZeroVariance { which: "truth" });
    }
    let ss_res: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Correlation index: Pearson correlation with population (1/n) covariance
/// and variances.
pub fn ci(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    check_pair(pred, truth, 2)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vt = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let dp = p - mp;
        let dt = t - mt;
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
    }
    if vp == 0.0 {
        return Err(MetricsError::ZeroVariance { which: "pred" });
    }
    if vt == 0.0 {
        return Err(MetricsError::ZeroVariance { which: "truth" });
    }
    Ok((cov / n) / ((vp / n).sqrt() * (vt / n).sqrt()))
}

/// One evaluated sample: denormalized prediction, truth, and its structure.
#[derive(Clone, Debug)]
pub struct PredictionRecord {
    pub gm_id: String,
    pub stiffness: f64,
    pub mass: f64,
    pub pred_m: Vec<f64>,
    pub truth_m: Vec<f64>,
}

/// Per-sample metric values. `r2`/`ci` are absent when the sample's truth
/// (or prediction) series has zero variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub gm_id: String,
    pub stiffness: f64,
    pub mass: f64,
    pub mse: f64,
    pub mae: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mse: f64,
    pub mae: f64,
    /// Pooled over all samples' concatenated points.
    pub r2: f64,
    pub n_samples: usize,
    pub n_points: usize,
}

/// One row of the per-structure table, ranked ascending by MAE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub stiffness: f64,
    pub mass: f64,
    pub natural_frequency: f64,
    pub mse: f64,
    pub mae: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    /// 1-based rank out of `subsets.len()`.
    pub rank: usize,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aggregate: AggregateMetrics,
    pub subsets: Vec<SubsetRow>,
    pub per_sample: Vec<SampleMetrics>,
}

/// Builds the full report: per-sample metrics, the pooled aggregate, and
/// the per-structure subset table sorted by ascending MAE.
pub fn build_report(records: &[PredictionRecord]) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Invalid("no prediction records".into()));
    }

    let mut per_sample = Vec::with_capacity(records.len());
    for r in records {
        check_pair(&r.pred_m, &r.truth_m, 1)?;
        per_sample.push(SampleMetrics {
            gm_id: r.gm_id.clone(),
            stiffness: r.stiffness,
            mass: r.mass,
            mse: mse(&r.pred_m, &r.truth_m)?,
            mae: mae(&r.pred_m, &r.truth_m)?,
            r2: r2(&r.pred_m, &r.truth_m).ok(),
            ci: ci(&r.pred_m, &r.truth_m).ok(),
        });
    }

    // Pooled aggregate over the concatenation of all samples.
    let mut n_points = 0usize;
    let mut sq_sum = 0.0;
    let mut abs_sum = 0.0;
    let mut truth_sum = 0.0;
    for r in records {
        n_points += r.truth_m.len();
        for (p, t) in r.pred_m.iter().zip(&r.truth_m) {
            let d = p - t;
            sq_sum += d * d;
            abs_sum += d.abs();
            truth_sum += t;
        }
    }
    let truth_mean = truth_sum / n_points as f64;
    let mut ss_tot = 0.0;
    for r in records {
        for t in &r.truth_m {
            ss_tot += (t - truth_mean) * (t - truth_mean);
        }
    }
    if ss_tot == 0.0 {
        return Err(MetricsError::ZeroVariance { which: "truth" });
    }
    let aggregate = AggregateMetrics {
        mse: sq_sum / n_points as f64,
        mae: abs_sum / n_points as f64,
        r2: 1.0 - sq_sum / ss_tot,
        n_samples: records.len(),
        n_points,
    };

    // Group by structure tuple; keys sorted for a stable order.
    let mut keys: Vec<(f64, f64)> = records.iter().map(|r| (r.stiffness, r.mass)).collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();

    let mut subsets: Vec<SubsetRow> = keys
        .iter()
        .map(|&(stiffness, mass)| {
            let members: Vec<usize> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.stiffness == stiffness && r.mass == mass)
                .map(|(i, _)| i)
                .collect();
            let mean =
                |f: &dyn Fn(usize) -> f64| members.iter().map(|&i| f(i)).sum::<f64>() / members.len() as f64;
            let subset_mse = mean(&|i| per_sample[i].mse);
            let subset_mae = mean(&|i| per_sample[i].mae);
            // R² pooled within the subset.
            let mut sq = 0.0;
            let mut tsum = 0.0;
            let mut tn = 0usize;
            for &i in &members {
                for (p, t) in records[i].pred_m.iter().zip(&records[i].truth_m) {
                    sq += (p - t) * (p - t);
                    tsum += t;
                    tn += 1;
                }
            }
            let tmean = tsum / tn as f64;
            let mut sstot = 0.0;
            for &i in &members {
                for t in &records[i].truth_m {
                    sstot += (t - tmean) * (t - tmean);
                }
            }
            SubsetRow {
                stiffness,
                mass,
                natural_frequency: (stiffness / mass).sqrt() / (2.0 * std::f64::consts::PI),
                mse: subset_mse,
                mae: subset_mae,
                r2: (sstot > 0.0).then(|| 1.0 - sq / sstot),
                rank: 0,
                n_samples: members.len(),
            }
        })
        .collect();

    subsets.sort_by(|a, b| a.mae.total_cmp(&b.mae));
    for (i, row) in subsets.iter_mut().enumerate() {
        row.rank = i + 1;
    }

    Ok(MetricsReport {
        aggregate,
        subsets,
        per_sample,
    })
}

/// Histogram of CI values over [−1, 1] with equal-width bins; masses sum
/// to 1. Values on a bin's right edge fall into that bin's upper neighbor
/// except at +1, which lands in the last bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiHistogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
}

pub fn ci_distribution(values: &[f64], bins: usize) -> Result<CiHistogram, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::Invalid("need at least one bin".into()));
    }
    if values.is_empty() {
        return Err(MetricsError::Invalid("no CI values".into()));
    }
    let width = 2.0 / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| -1.0 + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v + 1.0) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[idx] += 1;
    }
    let n = values.len() as f64;
    Ok(CiHistogram {
        edges,
        mass: counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

/// Subset table CSV, columns per the report contract.
pub fn write_subset_csv<W: std::io::Write>(
    subsets: &[SubsetRow],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(
        w,
        "stiffness_n_per_m,mass_kg,natural_frequency_hz,mse,mae,r2,rank"
    )?;
    for row in subsets {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            row.stiffness,
            row.mass,
            row.natural_frequency,
            row.mse,
            row.mae,
            row.r2.map_or(String::new(), |v| v.to_string()),
            row.rank
        )?;
    }
    Ok(())
}

/// CI histogram CSV (`bin_left,bin_right,mass`).
pub fn write_ci_histogram_csv<W: std::io::Write>(
    hist: &CiHistogram,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "bin_left,bin_right,mass")?;
    for i in 0..hist.mass.len() {
        writeln!(w, "{},{},{}", hist.edges[i], hist.edges[i + 1], hist.mass[i])?;
    }
    Ok(())
}
