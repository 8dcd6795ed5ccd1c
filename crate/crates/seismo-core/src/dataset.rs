//! Sample assembly, channel normalization, and dataset persistence.
//!
//! A dataset is the Cartesian product of ground-motion records (already
//! expanded over PGA levels) and structure definitions, simulated through
//! [`crate::dynamics`]. Channel statistics are fitted on the training split
//! only and map each channel linearly onto [−1, 1]; values outside the
//! fitted range extrapolate outside [−1, 1] without clipping. The structure
//! channel is stored once per sample as a normalized (stiffness, mass) pair
//! and broadcast by the network, rather than materializing a constant
//! sequence per timestep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError};
use crate::dynamics::{
    self, DynamicsError, InitialConditions, StructuralModel, StructureParams,
};
use crate::excitation::GroundMotion;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{dropped} of {total} samples diverged during simulation (> 1% budget)")]
    SimulationFailure { dropped: usize, total: usize },
    #[error("channel '{channel}' is degenerate (min == max == {value})")]
    DegenerateChannel { channel: String, value: f64 },
    #[error("invalid dataset input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// How targets are stored for training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Targets stay in meters.
    Physical,
    /// Targets are min-max mapped to [−1, 1] like the inputs.
    MinMax,
}

/// Min/max of one channel as fitted on the training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    fn fit(values: impl Iterator<Item = f64>, channel: &str) -> Result<Self, DatasetError> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() || min == max {
            return Err(DatasetError::DegenerateChannel {
                channel: channel.to_string(),
                value: min,
            });
        }
        Ok(ChannelRange { min, max })
    }

    /// Linear map with `min → −1`, `max → +1`; no clipping.
    pub fn normalize(&self, v: f64) -> f64 {
        2.0 * (v - self.min) / (self.max - self.min) - 1.0
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        self.min + (u + 1.0) * 0.5 * (self.max - self.min)
    }
}

/// Per-channel normalization fitted on a training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub gm: ChannelRange,
    pub stiffness: ChannelRange,
    pub mass: ChannelRange,
    pub target: ChannelRange,
    pub target_mode: TargetMode,
}

impl Normalizer {
    /// Structure channel as the network consumes it.
    pub fn normalize_structure(&self, s: &StructureParams) -> [f64; 2] {
        [
            self.stiffness.normalize(s.stiffness),
            self.mass.normalize(s.mass),
        ]
    }

    pub fn normalize_target_series(&self, raw: &[f64]) -> Vec<f64> {
        match self.target_mode {
            TargetMode::Physical => raw.to_vec(),
            TargetMode::MinMax => raw.iter().map(|v| self.target.normalize(*v)).collect(),
        }
    }

    /// Maps a predicted series back to meters.
    pub fn denormalize_target_series(&self, series: &[f64]) -> Vec<f64> {
        match self.target_mode {
            TargetMode::Physical => series.to_vec(),
            TargetMode::MinMax => series.iter().map(|v| self.target.denormalize(*v)).collect(),
        }
    }
}

/// One (ground motion × structure) pair with simulated target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub gm_id: String,
    /// Peak ground acceleration of the driving record, m/s².
    pub pga: f64,
    pub structure: StructureParams,
    /// Ground-motion channel (normalized once the dataset is normalized).
    pub input_gm: Vec<f64>,
    /// Normalized (stiffness, mass); raw values before normalization.
    pub input_struct: [f64; 2],
    /// Training target (mode-dependent units).
    pub target: Vec<f64>,
    /// Displacement in meters, always retained for metrics.
    pub raw_target: Vec<f64>,
}

/// Reference of one sample back to its record and structure table entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRef {
    pub gm_id: String,
    pub pga: f64,
    pub structure: usize,
}

/// Manifest: everything needed to audit or rebuild a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub seed: u64,
    /// Ids of the (expanded) driving records.
    pub gm_ids: Vec<String>,
    /// PGA levels in g used for record expansion (empty when unscaled).
    pub pga_levels_g: Vec<f64>,
    pub structures: Vec<StructureParams>,
    pub substeps: u32,
    /// Restoring-force convention of the Bouc-Wen simulator.
    pub force_convention: String,
    pub dt: f64,
    pub seq_len: usize,
    pub n_samples: usize,
    pub dropped_diverged: usize,
    pub samples: Vec<SampleRef>,
    pub normalizer: Option<Normalizer>,
}

impl DatasetManifest {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// An immutable collection of samples plus its manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.manifest.seq_len
    }
}

/// Assembly options; `split` and `seed` are recorded in the manifest.
#[derive(Clone, Debug)]
pub struct AssembleOptions {
    pub split: String,
    pub seed: u64,
    pub substeps: u32,
    /// PGA levels (g) the caller used to expand records, manifest-only.
    pub pga_levels_g: Vec<f64>,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            split: "train".into(),
            seed: 0,
            substeps: 10,
            pga_levels_g: Vec::new(),
        }
    }
}

/// Simulates the full (records × structures) grid. Diverged samples are
/// dropped with a logged count; more than 1% divergence fails the assembly.
pub fn assemble(
    gms: &[GroundMotion],
    structures: &[StructureParams],
    opts: &AssembleOptions,
) -> Result<Dataset, DatasetError> {
    if gms.is_empty() || structures.is_empty() {
        return Err(DatasetError::Invalid(
            "need at least one record and one structure".into(),
        ));
    }
    let seq_len = gms[0].len();
    let dt = gms[0].dt();
    for gm in gms {
        if gm.len() != seq_len {
            return Err(DatasetError::Invalid(format!(
                "record '{}' has length {}, expected {}",
                gm.id(),
                gm.len(),
                seq_len
            )));
        }
        if (gm.dt() - dt).abs() > 1e-12 {
            return Err(DatasetError::Invalid(format!(
                "record '{}' has dt {}, expected {}",
                gm.id(),
                gm.dt(),
                dt
            )));
        }
    }
    if opts.substeps == 0 {
        return Err(DatasetError::Invalid("substeps must be >= 1".into()));
    }

    let pairs: Vec<(usize, usize)> = (0..gms.len())
        .flat_map(|g| (0..structures.len()).map(move |s| (g, s)))
        .collect();
    let total = pairs.len();

    let ic = InitialConditions::at_rest();
    let results: Vec<Result<Sample, DynamicsError>> = pairs
        .par_iter()
        .map(|&(gi, si)| {
            let gm = &gms[gi];
            let structure = &structures[si];
            let resp = match structure.model {
                StructuralModel::Linear => {
                    dynamics::simulate_linear(structure, gm, &ic, opts.substeps)?
                }
                StructuralModel::BoucWen(_) => {
                    dynamics::simulate_bouc_wen(structure, gm, &ic, opts.substeps)?
                }
            };
            Ok(Sample {
                gm_id: gm.id().to_string(),
                pga: gm.pga(),
                structure: *structure,
                input_gm: gm.accel().to_vec(),
                input_struct: [structure.stiffness, structure.mass],
                target: resp.displacement.clone(),
                raw_target: resp.displacement,
            })
        })
        .collect();

    let mut samples = Vec::with_capacity(total);
    let mut refs = Vec::with_capacity(total);
    let mut dropped = 0usize;
    for (idx, result) in results.into_iter().enumerate() {
        let (gi, si) = pairs[idx];
        match result {
            Ok(sample) => {
                refs.push(SampleRef {
                    gm_id: sample.gm_id.clone(),
                    pga: sample.pga,
                    structure: si,
                });
                samples.push(sample);
            }
            Err(err) => {
                dropped += 1;
                log::warn!(
                    "dropping diverged sample (record '{}' × structure {}): {err}",
                    gms[gi].id(),
                    si
                );
            }
        }
    }
    if dropped * 100 > total {
        return Err(DatasetError::SimulationFailure { dropped, total });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} of {total} samples");
    }

    let manifest = DatasetManifest {
        split: opts.split.clone(),
        seed: opts.seed,
        gm_ids: gms.iter().map(|g| g.id().to_string()).collect(),
        pga_levels_g: opts.pga_levels_g.clone(),
        structures: structures.to_vec(),
        substeps: opts.substeps,
        force_convention: "per_unit_mass".into(),
        dt,
        seq_len,
        n_samples: samples.len(),
        dropped_diverged: dropped,
        samples: refs,
        normalizer: None,
    };
    Ok(Dataset { samples, manifest })
}

/// Fits channel min/max on a training split.
pub fn fit_normalizer(train: &Dataset, target_mode: TargetMode) -> Result<Normalizer, DatasetError> {
    if train.is_empty() {
        return Err(DatasetError::Invalid(
            "cannot fit a normalizer on an empty dataset".into(),
        ));
    }
    let gm = ChannelRange::fit(
        train.samples.iter().flat_map(|s| s.input_gm.iter().copied()),
        "gm",
    )?;
    let stiffness = ChannelRange::fit(
        train.samples.iter().map(|s| s.structure.stiffness),
        "stiffness",
    )?;
    let mass = ChannelRange::fit(train.samples.iter().map(|s| s.structure.mass), "mass")?;
    let target = ChannelRange::fit(
        train
            .samples
            .iter()
            .flat_map(|s| s.raw_target.iter().copied()),
        "target",
    )?;
    Ok(Normalizer {
        gm,
        stiffness,
        mass,
        target,
        target_mode,
    })
}

/// Applies the normalizer to one sample.
pub fn normalize_sample(sample: &Sample, norm: &Normalizer) -> Sample {
    Sample {
        gm_id: sample.gm_id.clone(),
        pga: sample.pga,
        structure: sample.structure,
        input_gm: sample
            .input_gm
            .iter()
            .map(|v| norm.gm.normalize(*v))
            .collect(),
        input_struct: norm.normalize_structure(&sample.structure),
        target: norm.normalize_target_series(&sample.raw_target),
        raw_target: sample.raw_target.clone(),
    }
}

impl Dataset {
    /// Returns a normalized copy; the normalizer is recorded in the manifest.
    pub fn normalized(&self, norm: &Normalizer) -> Dataset {
        let samples = self
            .samples
            .iter()
            .map(|s| normalize_sample(s, norm))
            .collect();
        let mut manifest = self.manifest.clone();
        manifest.normalizer = Some(*norm);
        Dataset { samples, manifest }
    }

    /// Serializes to the binary container: manifest header plus packed
    /// sample arrays.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), DatasetError> {
        let n = self.len();
        let t = self.manifest.seq_len;
        let mut input_gm = Vec::with_capacity(n * t);
        let mut input_struct = Vec::with_capacity(n * 2);
        let mut target = Vec::with_capacity(n * t);
        let mut raw_target = Vec::with_capacity(n * t);
        for s in &self.samples {
            input_gm.extend_from_slice(&s.input_gm);
            input_struct.extend_from_slice(&s.input_struct);
            target.extend_from_slice(&s.target);
            raw_target.extend_from_slice(&s.raw_target);
        }
        let container = Container::new(
            "dataset",
            &self.manifest,
            vec![
                ("input_gm".into(), input_gm),
                ("input_struct".into(), input_struct),
                ("target".into(), target),
                ("raw_target".into(), raw_target),
            ],
        )?;
        container.save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Dataset, DatasetError> {
        let mut container = Container::load(path, "dataset")?;
        let manifest: DatasetManifest = container.meta_as()?;
        let n = manifest.n_samples;
        let t = manifest.seq_len;
        let input_gm = container.take_array("input_gm")?;
        let input_struct = container.take_array("input_struct")?;
        let target = container.take_array("target")?;
        let raw_target = container.take_array("raw_target")?;
        if input_gm.len() != n * t
            || input_struct.len() != n * 2
            || target.len() != n * t
            || raw_target.len() != n * t
            || manifest.samples.len() != n
        {
            return Err(DatasetError::Invalid(
                "array lengths disagree with the manifest".into(),
            ));
        }
        let samples = (0..n)
            .map(|i| {
                let r = &manifest.samples[i];
                Sample {
                    gm_id: r.gm_id.clone(),
                    pga: r.pga,
                    structure: manifest.structures[r.structure],
                    input_gm: input_gm[i * t..(i + 1) * t].to_vec(),
                    input_struct: [input_struct[i * 2], input_struct[i * 2 + 1]],
                    target: target[i * t..(i + 1) * t].to_vec(),
                    raw_target: raw_target[i * t..(i + 1) * t].to_vec(),
                }
            })
            .collect();
        Ok(Dataset { samples, manifest })
    }
}

/// Builds the Cartesian product of a stiffness × mass grid with shared
/// damping and model.
pub fn structure_grid(
    stiffness_n_per_m: &[f64],
    mass_kg: &[f64],
    damping: crate::dynamics::DampingSpec,
    model: StructuralModel,
) -> Result<Vec<StructureParams>, DynamicsError> {
    let mut out = Vec::with_capacity(stiffness_n_per_m.len() * mass_kg.len());
    for &k in stiffness_n_per_m {
        for &m in mass_kg {
            out.push(StructureParams::new(m, k, damping, model)?);
        }
    }
    Ok(out)
}
