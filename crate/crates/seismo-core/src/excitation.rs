//! Ground-motion inputs: synthetic Kanai-Tajimi records, PGA scaling, CSV
//! ingestion, and elastic response spectra.

use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    self, DampingSpec, DynamicsError, InitialConditions, StructureParams,
};

/// Standard gravity used for PGA level conversion.
pub const G_ACCEL: f64 = 9.81;

#[derive(Debug, Error)]
pub enum ExcitationError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("record has zero peak acceleration and cannot be scaled")]
    ZeroRecord,
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("non-uniform sampling at line {line}: spacing {found} differs from {expected}")]
    NonUniformSampling {
        line: usize,
        found: f64,
        expected: f64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// A uniformly sampled ground acceleration record.
///
/// Constructed through [`GroundMotion::new`] so the cached `pga` always
/// equals `max|accel|` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundMotion {
    id: String,
    dt: f64,
    accel: Vec<f64>,
    pga: f64,
}

impl GroundMotion {
    pub fn new(
        id: impl Into<String>,
        dt: f64,
        accel: Vec<f64>,
    ) -> Result<Self, ExcitationError> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(ExcitationError::InvalidConfig(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if accel.is_empty() {
            return Err(ExcitationError::InvalidConfig(
                "record must contain at least one sample".into(),
            ));
        }
        if let Some(i) = accel.iter().position(|a| !a.is_finite()) {
            return Err(ExcitationError::InvalidConfig(format!(
                "non-finite acceleration at sample {i}"
            )));
        }
        let pga = accel.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        Ok(GroundMotion {
            id: id.into(),
            dt,
            accel,
            pga,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn accel(&self) -> &[f64] {
        &self.accel
    }

    pub fn len(&self) -> usize {
        self.accel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accel.is_empty()
    }

    pub fn pga(&self) -> f64 {
        self.pga
    }

    pub fn duration(&self) -> f64 {
        (self.accel.len() - 1) as f64 * self.dt
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Scales the record so its peak equals `target_pga`.
    pub fn scale_to_pga(&self, target_pga: f64) -> Result<GroundMotion, ExcitationError> {
        if !target_pga.is_finite() || target_pga <= 0.0 {
            return Err(ExcitationError::InvalidConfig(format!(
                "target PGA must be positive, got {target_pga}"
            )));
        }
        if self.pga == 0.0 {
            return Err(ExcitationError::ZeroRecord);
        }
        let factor = target_pga / self.pga;
        let accel: Vec<f64> = self.accel.iter().map(|a| a * factor).collect();
        GroundMotion::new(self.id.clone(), self.dt, accel)
    }

    /// Linear resampling onto a new uniform grid covering the same span.
    pub fn resample(&self, new_dt: f64) -> Result<GroundMotion, ExcitationError> {
        if !new_dt.is_finite() || new_dt <= 0.0 {
            return Err(ExcitationError::InvalidConfig(format!(
                "resample dt must be positive, got {new_dt}"
            )));
        }
        let span = self.duration();
        let n = (span / new_dt + 1e-9).floor() as usize + 1;
        let accel: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 * new_dt;
                let pos = t / self.dt;
                let j = (pos.floor() as usize).min(self.accel.len() - 1);
                if j + 1 >= self.accel.len() {
                    self.accel[j]
                } else {
                    let u = pos - j as f64;
                    self.accel[j] + (self.accel[j + 1] - self.accel[j]) * u
                }
            })
            .collect();
        GroundMotion::new(self.id.clone(), new_dt, accel)
    }
}

/// Trapezoidal amplitude envelope: linear rise, flat plateau, linear decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub rise_s: f64,
    pub plateau_s: f64,
    pub decay_s: f64,
}

impl Envelope {
    fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            0.0
        } else if t < self.rise_s {
            t / self.rise_s
        } else if t < self.rise_s + self.plateau_s {
            1.0
        } else {
            let td = t - self.rise_s - self.plateau_s;
            if td < self.decay_s {
                1.0 - td / self.decay_s
            } else {
                0.0
            }
        }
    }
}

/// Kanai-Tajimi site-filter parameters for synthetic record generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KanaiTajimiParams {
    /// Site frequency in rad/s.
    pub omega_g: f64,
    /// Site damping ratio.
    pub zeta_g: f64,
    pub envelope: Envelope,
    /// White-noise intensity in (m/s²)²·s.
    pub noise_intensity: f64,
}

impl Default for KanaiTajimiParams {
    fn default() -> Self {
        KanaiTajimiParams {
            omega_g: 15.0,
            zeta_g: 0.6,
            envelope: Envelope {
                rise_s: 2.0,
                plateau_s: 16.0,
                decay_s: 12.0,
            },
            noise_intensity: 0.03,
        }
    }
}

impl KanaiTajimiParams {
    fn validate(&self) -> Result<(), ExcitationError> {
        if !self.omega_g.is_finite() || self.omega_g <= 0.0 {
            return Err(ExcitationError::InvalidConfig(format!(
                "omega_g must be positive, got {}",
                self.omega_g
            )));
        }
        if !self.zeta_g.is_finite() || self.zeta_g <= 0.0 || self.zeta_g >= 1.0 {
            return Err(ExcitationError::InvalidConfig(format!(
                "zeta_g must be in (0, 1), got {}",
                self.zeta_g
            )));
        }
        let e = &self.envelope;
        if e.rise_s < 0.0 || e.plateau_s < 0.0 || e.decay_s < 0.0 {
            return Err(ExcitationError::InvalidConfig(
                "envelope durations must be non-negative".into(),
            ));
        }
        if !self.noise_intensity.is_finite() || self.noise_intensity < 0.0 {
            return Err(ExcitationError::InvalidConfig(format!(
                "noise intensity must be non-negative, got {}",
                self.noise_intensity
            )));
        }
        Ok(())
    }
}

/// Generates a synthetic record: Gaussian white noise passed through the
/// Kanai-Tajimi filter, shaped by the trapezoidal envelope, then mean-removed.
/// The record id is `syn-{seed}` and the output is deterministic per seed.
pub fn generate_synthetic(
    params: &KanaiTajimiParams,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<GroundMotion, ExcitationError> {
    params.validate()?;
    if !duration.is_finite() || duration <= 0.0 || !dt.is_finite() || dt <= 0.0 {
        return Err(ExcitationError::InvalidConfig(format!(
            "duration and dt must be positive, got {duration}/{dt}"
        )));
    }
    let n_float = duration / dt;
    let n = n_float.round();
    if (n_float - n).abs() > 1e-9 * n_float.max(1.0) || n < 1.0 {
        return Err(ExcitationError::InvalidConfig(format!(
            "duration {duration} s is not an integer number of {dt} s samples"
        )));
    }
    let n = n as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (params.noise_intensity / dt).sqrt();
    let noise: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect();

    // The Kanai-Tajimi filter is a unit-mass damped oscillator driven by the
    // noise; reuse the exact linear integrator for its response.
    let id = format!("syn-{seed}");
    if params.noise_intensity == 0.0 {
        return GroundMotion::new(id, dt, vec![0.0; n]);
    }
    let filter = StructureParams::linear(
        1.0,
        params.omega_g * params.omega_g,
        DampingSpec::Ratio {
            zeta: params.zeta_g,
        },
    )?;
    let noise_gm = GroundMotion::new("noise", dt, noise)?;
    let resp = dynamics::simulate_linear(&filter, &noise_gm, &InitialConditions::at_rest(), 1)?;
    let vel = resp.velocity.as_ref().expect("velocity always retained");

    let two_zw = 2.0 * params.zeta_g * params.omega_g;
    let w2 = params.omega_g * params.omega_g;
    let mut accel: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            (two_zw * vel[i] + w2 * resp.displacement[i]) * params.envelope.value(t)
        })
        .collect();

    // Baseline correction: remove the mean.
    let mean = accel.iter().sum::<f64>() / n as f64;
    for a in &mut accel {
        *a -= mean;
    }

    GroundMotion::new(id, dt, accel)
}

/// Loads a record from CSV. Two layouts are accepted:
///
/// * two numeric columns `time_s, accel` (uniform spacing validated to
///   1e-6 relative), or
/// * one numeric column with the sampling interval declared in a header
///   line `dt=<seconds>` (optionally behind `#`).
///
/// Lines starting with `#` are comments. A single leading non-numeric
/// column-header row is tolerated. If `resample_to` is given the record is
/// linearly interpolated onto that interval.
pub fn load_csv(
    path: impl AsRef<Path>,
    resample_to: Option<f64>,
) -> Result<GroundMotion, ExcitationError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "record".to_string());

    let mut header_dt: Option<f64> = None;
    let mut times: Vec<f64> = Vec::new();
    let mut accel: Vec<f64> = Vec::new();
    let mut ncols: Option<usize> = None;
    let mut saw_data = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let mut text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(stripped) = text.strip_prefix('#') {
            text = stripped.trim();
            if text.is_empty() {
                continue;
            }
            if let Some(dt) = parse_dt_assignment(text) {
                header_dt = Some(dt);
            }
            continue;
        }
        if let Some(dt) = parse_dt_assignment(text) {
            header_dt = Some(dt);
            continue;
        }

        let fields: Vec<&str> = text
            .split(|c: char| c == ',' || c.is_whitespace() || c == ';')
            .filter(|f| !f.is_empty())
            .collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if !saw_data => continue, // tolerated column-header row
            Err(_) => {
                return Err(ExcitationError::ParseError {
                    line: line_no,
                    msg: format!("non-numeric cell in '{text}'"),
                })
            }
        };
        match (ncols, values.len()) {
            (None, 1) | (Some(1), 1) => {
                ncols = Some(1);
                accel.push(values[0]);
            }
            (None, 2) | (Some(2), 2) => {
                ncols = Some(2);
                times.push(values[0]);
                accel.push(values[1]);
            }
            (_, found) => {
                return Err(ExcitationError::ParseError {
                    line: line_no,
                    msg: format!("expected 1 or 2 columns, found {found}"),
                })
            }
        }
        saw_data = true;
    }

    if accel.is_empty() {
        return Err(ExcitationError::ParseError {
            line: 0,
            msg: "no data rows".into(),
        });
    }

    let dt = match ncols {
        Some(2) => {
            if accel.len() < 2 {
                return Err(ExcitationError::ParseError {
                    line: 0,
                    msg: "need at least two rows to infer dt".into(),
                });
            }
            let dt0 = times[1] - times[0];
            if !(dt0.is_finite()) || dt0 <= 0.0 {
                return Err(ExcitationError::ParseError {
                    line: 2,
                    msg: format!("non-increasing time column (spacing {dt0})"),
                });
            }
            for (i, w) in times.windows(2).enumerate() {
                let d = w[1] - w[0];
                if (d - dt0).abs() > 1e-6 * dt0 {
                    return Err(ExcitationError::NonUniformSampling {
                        line: i + 2,
                        found: d,
                        expected: dt0,
                    });
                }
            }
            (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
        }
        _ => header_dt.ok_or_else(|| ExcitationError::ParseError {
            line: 0,
            msg: "one-column file requires a 'dt=<seconds>' header line".into(),
        })?,
    };

    let gm = GroundMotion::new(id, dt, accel)?;
    match resample_to {
        Some(new_dt) if (new_dt - gm.dt()).abs() > 1e-12 => gm.resample(new_dt),
        _ => Ok(gm),
    }
}

fn parse_dt_assignment(text: &str) -> Option<f64> {
    let rest = text.strip_prefix("dt")?.trim_start();
    let rest = rest.strip_prefix('=')?.trim();
    rest.parse::<f64>().ok().filter(|v| *v > 0.0)
}

/// Writes a record as two-column CSV (`time_s,accel_m_s2`).
pub fn write_record_csv<W: std::io::Write>(
    gm: &GroundMotion,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "time_s,accel_m_s2")?;
    for (i, a) in gm.accel().iter().enumerate() {
        writeln!(w, "{},{}", i as f64 * gm.dt(), a)?;
    }
    Ok(())
}

/// Pseudo-acceleration response spectrum: for each period, the peak
/// displacement of a unit-mass oscillator at damping `zeta`, multiplied
/// by ω².
pub fn response_spectrum(
    gm: &GroundMotion,
    periods: &[f64],
    zeta: f64,
) -> Result<Vec<(f64, f64)>, ExcitationError> {
    let mut out = Vec::with_capacity(periods.len());
    for &period in periods {
        if !period.is_finite() || period <= 0.0 {
            return Err(ExcitationError::InvalidConfig(format!(
                "spectrum periods must be positive, got {period}"
            )));
        }
        let omega = 2.0 * std::f64::consts::PI / period;
        let oscillator =
            StructureParams::linear(1.0, omega * omega, DampingSpec::Ratio { zeta })?;
        let resp =
            dynamics::simulate_linear(&oscillator, gm, &InitialConditions::at_rest(), 1)?;
        let peak = resp
            .displacement
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        out.push((period, omega * omega * peak));
    }
    Ok(out)
}

/// Writes a spectrum as CSV (`period_s,Sa_m_s2`).
pub fn write_spectrum_csv<W: std::io::Write>(
    spectrum: &[(f64, f64)],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "period_s,Sa_m_s2")?;
    for (t, sa) in spectrum {
        writeln!(w, "{t},{sa}")?;
    }
    Ok(())
}
