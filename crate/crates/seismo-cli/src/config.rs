//! Run configuration: one JSON file drives the whole pipeline.
//!
//! Every field has a default, so partial configs are valid; unknown keys
//! are rejected. All quantities are SI (meters, kilograms, seconds,
//! newtons) except `pga_levels_g`, which is in units of g = 9.81 m/s².
//! The schema shipped at `configs/schema.json` documents every key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use seismo_core::dataset::TargetMode;
use seismo_core::dynamics::{DampingSpec, StructuralModel, StructureParams};
use seismo_core::excitation::{Envelope, KanaiTajimiParams};
use seismo_core::network::{CellKind, ModelArch};
use seismo_core::optimizer::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed: record generation, parameter init, and batch shuffling
    /// all derive from it.
    pub seed: u64,
    pub excitation: ExcitationConfig,
    pub structures: StructuresConfig,
    pub simulator: SimulatorConfig,
    pub normalizer: NormalizerConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            excitation: ExcitationConfig::default(),
            structures: StructuresConfig::default(),
            simulator: SimulatorConfig::default(),
            normalizer: NormalizerConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationConfig {
    pub source: SourceConfig,
    pub duration_s: f64,
    pub dt_s: f64,
    pub kanai_tajimi: KtConfig,
    pub records: RecordCounts,
    pub pga_levels_g: Vec<f64>,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        ExcitationConfig {
            source: SourceConfig::Synthetic,
            duration_s: 30.0,
            dt_s: 0.02,
            kanai_tajimi: KtConfig::default(),
            records: RecordCounts {
                train: 10,
                val: 3,
                test: 3,
            },
            pga_levels_g: vec![0.2, 0.6, 1.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Kanai-Tajimi filtered noise, seeded from the run seed.
    Synthetic,
    /// Real records ingested from CSV files under `dir`.
    Csv {
        dir: String,
        train: Vec<String>,
        val: Vec<String>,
        test: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KtConfig {
    pub omega_g_rad_s: f64,
    pub zeta_g: f64,
    pub envelope_rise_s: f64,
    pub envelope_plateau_s: f64,
    pub envelope_decay_s: f64,
    pub noise_intensity: f64,
}

impl Default for KtConfig {
    fn default() -> Self {
        let p = KanaiTajimiParams::default();
        KtConfig {
            omega_g_rad_s: p.omega_g,
            zeta_g: p.zeta_g,
            envelope_rise_s: p.envelope.rise_s,
            envelope_plateau_s: p.envelope.plateau_s,
            envelope_decay_s: p.envelope.decay_s,
            noise_intensity: p.noise_intensity,
        }
    }
}

impl KtConfig {
    pub fn to_params(self) -> KanaiTajimiParams {
        KanaiTajimiParams {
            omega_g: self.omega_g_rad_s,
            zeta_g: self.zeta_g,
            envelope: Envelope {
                rise_s: self.envelope_rise_s,
                plateau_s: self.envelope_plateau_s,
                decay_s: self.envelope_decay_s,
            },
            noise_intensity: self.noise_intensity,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Structure sets for the training split and for the validation/testing
/// splits (which share one table, mirroring the reference experiment
/// design).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StructuresConfig {
    pub train: StructureSetConfig,
    pub eval: StructureSetConfig,
}

impl Default for StructuresConfig {
    fn default() -> Self {
        StructuresConfig {
            train: StructureSetConfig {
                grid: Some(GridConfig {
                    stiffness_n_per_m: vec![30e3, 45e3, 65e3],
                    mass_kg: vec![120.0, 180.0, 240.0],
                }),
                table: None,
            },
            eval: StructureSetConfig {
                grid: None,
                table: Some(vec![
                    StructureRow {
                        stiffness_n_per_m: 40e3,
                        mass_kg: 150.0,
                    },
                    StructureRow {
                        stiffness_n_per_m: 40e3,
                        mass_kg: 210.0,
                    },
                    StructureRow {
                        stiffness_n_per_m: 55e3,
                        mass_kg: 150.0,
                    },
                    StructureRow {
                        stiffness_n_per_m: 55e3,
                        mass_kg: 210.0,
                    },
                ]),
            },
        }
    }
}

/// Either a stiffness × mass grid or an explicit table; exactly one.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<StructureRow>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub stiffness_n_per_m: Vec<f64>,
    pub mass_kg: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureRow {
    pub stiffness_n_per_m: f64,
    pub mass_kg: f64,
}

impl StructureSetConfig {
    pub fn resolve(
        &self,
        damping: DampingSpec,
        model: StructuralModel,
        which: &str,
    ) -> Result<Vec<StructureParams>, CliError> {
        let params = match (&self.grid, &self.table) {
            (Some(grid), None) => seismo_core::dataset::structure_grid(
                &grid.stiffness_n_per_m,
                &grid.mass_kg,
                damping,
                model,
            )
            .map_err(|e| CliError::Config(format!("structures.{which}.grid: {e}")))?,
            (None, Some(table)) => {
                let mut out = Vec::with_capacity(table.len());
                for row in table {
                    out.push(
                        StructureParams::new(row.mass_kg, row.stiffness_n_per_m, damping, model)
                            .map_err(|e| {
                                CliError::Config(format!("structures.{which}.table: {e}"))
                            })?,
                    );
                }
                out
            }
            _ => {
                return Err(CliError::Config(format!(
                    "structures.{which}: exactly one of 'grid' or 'table' must be set"
                )))
            }
        };
        if params.is_empty() {
            return Err(CliError::Config(format!(
                "structures.{which}: resolved to zero structures"
            )));
        }
        Ok(params)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    pub model: StructuralModel,
    pub damping: DampingSpec,
    pub substeps: u32,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            model: StructuralModel::Linear,
            damping: DampingSpec::Ratio { zeta: 0.05 },
            substeps: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizerConfig {
    pub target_mode: TargetMode,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        NormalizerConfig {
            target_mode: TargetMode::MinMax,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub cell: CellKind,
    pub num_layers: usize,
    pub hidden_size: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            cell: CellKind::McGru,
            num_layers: 2,
            hidden_size: 64,
        }
    }
}

impl ArchConfig {
    pub fn to_arch(self) -> ModelArch {
        ModelArch::new(self.cell, self.num_layers, self.hidden_size)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Bin count of the CI histogram over [−1, 1].
    pub ci_bins: usize,
    /// How many per-sample prediction CSVs to emit.
    pub max_prediction_csvs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ci_bins: 20,
            max_prediction_csvs: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Where `generate` writes and `train` reads datasets.
    pub data_dir: String,
    /// Default output directory for runs.
    pub run_dir: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "data".into(),
            run_dir: "runs".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config '{}': {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!(
                "config '{}' line {} column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let ex = &self.excitation;
        if ex.duration_s <= 0.0 || ex.dt_s <= 0.0 {
            return Err(CliError::Config(
                "excitation.duration_s and excitation.dt_s must be positive".into(),
            ));
        }
        if matches!(ex.source, SourceConfig::Synthetic)
            && (ex.records.train == 0 || ex.records.val == 0 || ex.records.test == 0)
        {
            return Err(CliError::Config(
                "excitation.records: every split needs at least one record".into(),
            ));
        }
        if ex.pga_levels_g.iter().any(|g| *g <= 0.0) {
            return Err(CliError::Config(
                "excitation.pga_levels_g: levels must be positive".into(),
            ));
        }
        if self.arch.num_layers == 0 || self.arch.hidden_size == 0 {
            return Err(CliError::Config(
                "arch.num_layers and arch.hidden_size must be >= 1".into(),
            ));
        }
        if self.simulator.substeps == 0 {
            return Err(CliError::Config("simulator.substeps must be >= 1".into()));
        }
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        if self.eval.ci_bins == 0 {
            return Err(CliError::Config("eval.ci_bins must be >= 1".into()));
        }
        Ok(())
    }

    /// The fully resolved configuration with the effective seed applied;
    /// the training section always inherits the master seed.
    pub fn resolved(&self, seed_override: Option<u64>) -> RunConfig {
        let mut cfg = self.clone();
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        cfg.train.seed = cfg.seed;
        cfg
    }
}
